//! Penalized logistic regression with cross-validated `(λ, α)`.
//!
//! Minimizes `mean logistic loss + λ(α‖w‖₁ + (1−α)/2·‖w‖²)` over
//! standardized features with an unpenalized intercept. The solver is a
//! proximal Newton method: each outer step fits a weighted least-squares
//! approximation by cyclic coordinate descent, then backtracks along the
//! resulting direction until the true objective decreases.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::auc;
use crate::error::{Error, Result};
use crate::util::rng_for;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticNetConfig {
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    /// Relative objective change that ends the outer iteration.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for ElasticNetConfig {
    fn default() -> Self {
        ElasticNetConfig {
            lambdas: vec![0.3, 0.1, 0.03, 0.01, 0.003, 0.001],
            alphas: vec![0.1, 0.5, 1.0],
            folds: 3,
            seed: 1,
            tolerance: 1e-7,
            max_iter: 200,
        }
    }
}

impl ElasticNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("lambdas must be nonempty, finite and nonnegative".into()));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config("alphas must be nonempty and lie in [0, 1]".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("at least 2 folds are required".into()));
        }
        if !(self.tolerance > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("tolerance and max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Features centered and scaled to unit population variance, column-major.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub n: usize,
    pub columns: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    /// 1 for constant columns, which are left at zero.
    pub scales: Vec<f64>,
}

impl Standardized {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Data("no training rows".into()));
        }
        let p = rows[0].len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Data("ragged feature rows".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        let mut columns = Vec::with_capacity(p);
        let mut means = Vec::with_capacity(p);
        let mut scales = Vec::with_capacity(p);
        for j in 0..p {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            let constant = !(sd > 1e-12 * mean.abs().max(1.0));
            let scale = if constant { 1.0 } else { sd };
            columns.push(
                rows.iter()
                    .map(|r| if constant { 0.0 } else { (r[j] - mean) / scale })
                    .collect(),
            );
            means.push(mean);
            scales.push(scale);
        }
        Ok(Standardized { n, columns, means, scales })
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    fn linear(&self, w: &[f64], b: f64) -> Vec<f64> {
        let mut eta = vec![b; self.n];
        for (col, &wj) in self.columns.iter().zip(w) {
            if wj != 0.0 {
                for (e, &z) in eta.iter_mut().zip(col) {
                    *e += wj * z;
                }
            }
        }
        eta
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn penalty(w: &[f64], lambda: f64, alpha: f64) -> f64 {
    let l1: f64 = w.iter().map(|v| v.abs()).sum();
    let l2: f64 = w.iter().map(|v| v * v).sum();
    lambda * (alpha * l1 + 0.5 * (1.0 - alpha) * l2)
}

/// Penalized objective at standardized weights `w` and intercept `b`.
pub fn objective(z: &Standardized, y: &[bool], w: &[f64], b: f64, lambda: f64, alpha: f64) -> f64 {
    let eta = z.linear(w, b);
    let loss: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| softplus(e) - if yi { e } else { 0.0 })
        .sum::<f64>()
        / z.n as f64;
    loss + penalty(w, lambda, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Weights on the original feature scale.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub std_weights: Vec<f64>,
    pub std_intercept: f64,
    pub objective: f64,
    pub iterations: usize,
}

impl LinearModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }

    pub fn l1_norm(&self) -> f64 {
        self.std_weights.iter().map(|w| w.abs()).sum()
    }
}

fn soft_threshold(g: f64, t: f64) -> f64 {
    if g > t {
        g - t
    } else if g < -t {
        g + t
    } else {
        0.0
    }
}

struct Solution {
    w: Vec<f64>,
    b: f64,
    objective: f64,
    iterations: usize,
}

fn solve(
    z: &Standardized,
    y: &[bool],
    lambda: f64,
    alpha: f64,
    tol: f64,
    max_iter: usize,
    mut w: Vec<f64>,
    mut b: f64,
) -> Result<Solution> {
    let n = z.n as f64;
    let mut f = objective(z, y, &w, b, lambda, alpha);
    let mut iterations = 0;
    let mut r = vec![0.0; z.n];
    let mut wt = vec![0.0; z.n];
    while iterations < max_iter {
        iterations += 1;
        let eta = z.linear(&w, b);
        for i in 0..z.n {
            let p = sigmoid(eta[i]);
            wt[i] = (p * (1.0 - p)).max(1e-5);
            r[i] = (if y[i] { 1.0 } else { 0.0 } - p) / wt[i];
        }
        let wsum: f64 = wt.iter().sum();
        let curv: Vec<f64> = z
            .columns
            .iter()
            .map(|c| c.iter().zip(&wt).map(|(v, q)| q * v * v).sum::<f64>() / n)
            .collect();
        // Coordinate descent on the local quadratic model; r tracks its residual.
        let (mut nw, mut nb) = (w.clone(), b);
        for _ in 0..10_000 {
            let mut max_change = 0.0f64;
            let d = r.iter().zip(&wt).map(|(ri, q)| q * ri).sum::<f64>() / wsum;
            nb += d;
            r.iter_mut().for_each(|ri| *ri -= d);
            max_change = max_change.max(wsum / n * d * d);
            for j in 0..z.p() {
                if curv[j] == 0.0 {
                    continue;
                }
                let col = &z.columns[j];
                let g = col.iter().zip(&r).zip(&wt).map(|((v, ri), q)| q * v * ri).sum::<f64>() / n
                    + curv[j] * nw[j];
                let new = soft_threshold(g, lambda * alpha) / (curv[j] + lambda * (1.0 - alpha));
                let delta = new - nw[j];
                if delta != 0.0 {
                    for (ri, v) in r.iter_mut().zip(col) {
                        *ri -= delta * v;
                    }
                    nw[j] = new;
                    max_change = max_change.max(curv[j] * delta * delta);
                }
            }
            if max_change < 1e-14 {
                break;
            }
        }
        // Backtrack until the true objective does not increase.
        let mut t = 1.0;
        let (mut cw, mut cb, mut cf);
        loop {
            cw = w.iter().zip(&nw).map(|(a, c)| a + t * (c - a)).collect::<Vec<_>>();
            cb = b + t * (nb - b);
            cf = objective(z, y, &cw, cb, lambda, alpha);
            if cf <= f || t < 1e-10 {
                break;
            }
            t *= 0.5;
        }
        if !cf.is_finite() {
            return Err(Error::Numeric("elastic-net objective became non-finite".into()));
        }
        if cf > f {
            break;
        }
        let change = f - cf;
        w = cw;
        b = cb;
        f = cf;
        if change <= tol * f.abs() {
            break;
        }
    }
    Ok(Solution { w, b, objective: f, iterations })
}

fn finish(z: &Standardized, s: Solution, lambda: f64, alpha: f64) -> LinearModel {
    let weights: Vec<f64> = s.w.iter().zip(&z.scales).map(|(w, sc)| w / sc).collect();
    let intercept = s.b - weights.iter().zip(&z.means).map(|(w, m)| w * m).sum::<f64>();
    LinearModel {
        weights,
        intercept,
        lambda,
        alpha,
        means: z.means.clone(),
        scales: z.scales.clone(),
        std_weights: s.w,
        std_intercept: s.b,
        objective: s.objective,
        iterations: s.iterations,
    }
}

fn check_labels(y: &[bool], n: usize) -> Result<()> {
    if y.len() != n {
        return Err(Error::Data(format!("{n} rows but {} labels", y.len())));
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::Data("training labels contain a single class".into()));
    }
    Ok(())
}

fn null_intercept(y: &[bool]) -> f64 {
    let p = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
    (p / (1.0 - p)).ln()
}

/// Fits one `(λ, α)` grid point from a cold start.
pub fn fit_penalized(
    x: &[Vec<f64>],
    y: &[bool],
    lambda: f64,
    alpha: f64,
    config: &ElasticNetConfig,
) -> Result<LinearModel> {
    let z = Standardized::fit(x)?;
    check_labels(y, z.n)?;
    let s = solve(&z, y, lambda, alpha, config.tolerance, config.max_iter, vec![0.0; z.p()], null_intercept(y))?;
    Ok(finish(&z, s, lambda, alpha))
}

/// Fits each λ of `lambdas` (any order) with warm starts along the
/// descending path; results come back in the input order.
pub fn fit_path(
    x: &[Vec<f64>],
    y: &[bool],
    lambdas: &[f64],
    alpha: f64,
    config: &ElasticNetConfig,
) -> Result<Vec<LinearModel>> {
    let z = Standardized::fit(x)?;
    check_labels(y, z.n)?;
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut out: Vec<Option<LinearModel>> = vec![None; lambdas.len()];
    let (mut w, mut b) = (vec![0.0; z.p()], null_intercept(y));
    for i in order {
        let s = solve(&z, y, lambdas[i], alpha, config.tolerance, config.max_iter, w, b)?;
        w = s.w.clone();
        b = s.b;
        out[i] = Some(finish(&z, s, lambdas[i], alpha));
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub alpha: f64,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub model: LinearModel,
    pub cv_auc: f64,
    pub grid: Vec<GridPoint>,
}

/// Stratified fold assignment, deterministic in `seed`.
pub fn stratified_folds(y: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut fold = vec![0; y.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng_for(seed, &[b"fold", &[class as u8]]));
        for (pos, i) in idx.into_iter().enumerate() {
            fold[i] = pos % folds;
        }
    }
    fold
}

/// Picks `(λ, α)` by mean held-out AUC over stratified folds, then refits
/// on all rows. Ties go to the earlier α and the larger λ.
pub fn fit_elastic_net(x: &[Vec<f64>], y: &[bool], config: &ElasticNetConfig) -> Result<CvResult> {
    config.validate()?;
    Standardized::fit(x)?;
    check_labels(y, x.len())?;
    let fold = stratified_folds(y, config.folds, config.seed);
    for f in 0..config.folds {
        let pos = (0..y.len()).filter(|&i| fold[i] == f && y[i]).count();
        let neg = (0..y.len()).filter(|&i| fold[i] == f && !y[i]).count();
        if pos == 0 || neg == 0 {
            return Err(Error::Data(format!("fold {f} lacks one of the classes")));
        }
    }
    // aucs[f][a][l]
    let aucs: Vec<Vec<Vec<f64>>> = (0..config.folds)
        .into_par_iter()
        .map(|f| -> Result<Vec<Vec<f64>>> {
            let train: Vec<usize> = (0..y.len()).filter(|&i| fold[i] != f).collect();
            let held: Vec<usize> = (0..y.len()).filter(|&i| fold[i] == f).collect();
            let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let yt: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let yh: Vec<bool> = held.iter().map(|&i| y[i]).collect();
            config
                .alphas
                .iter()
                .map(|&a| {
                    let path = fit_path(&xt, &yt, &config.lambdas, a, config)?;
                    path.iter()
                        .map(|m| {
                            let s: Vec<f64> = held.iter().map(|&i| m.decision(&x[i])).collect();
                            auc(&s, &yh)
                        })
                        .collect()
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut grid = Vec::new();
    let mut best: Option<(f64, f64, f64)> = None;
    for (ai, &alpha) in config.alphas.iter().enumerate() {
        let mut lam_order: Vec<usize> = (0..config.lambdas.len()).collect();
        lam_order.sort_by(|&a, &b| config.lambdas[b].total_cmp(&config.lambdas[a]));
        for li in lam_order {
            let lambda = config.lambdas[li];
            let mean_auc = aucs.iter().map(|f| f[ai][li]).sum::<f64>() / config.folds as f64;
            grid.push(GridPoint { lambda, alpha, mean_auc });
            if best.is_none_or(|(m, _, _)| mean_auc > m) {
                best = Some((mean_auc, lambda, alpha));
            }
        }
    }
    let (cv_auc, lambda, alpha) = best.expect("grid is nonempty");
    let model = fit_penalized(x, y, lambda, alpha, config)?;
    Ok(CvResult { model, cv_auc, grid })
}

//! Independent oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use eventvec::embedding::{
    dm_loss_and_grads, loss_and_grads, Decision, Head, HuffmanTree, NoiseTable, Objective,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z }).collect()
}

/// Relative error with a small floor so near-zero gradients compare on an
/// absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

const FD_EPS: f64 = 1e-5;

fn central<F: FnMut(f64) -> f64>(x: f64, mut f: F) -> f64 {
    (f(x + FD_EPS) - f(x - FD_EPS)) / (2.0 * FD_EPS)
}

/// One random instance: every analytic gradient entry (hidden/doc vector,
/// context vectors, touched output rows) against a central difference.
/// Returns the worst relative error.
pub fn gradient_instance<R: Rng>(rng: &mut R, objective: Objective, dm: bool) -> f64 {
    let v = rng.random_range(2..=24usize);
    let k = rng.random_range(2..=12usize);
    let counts: Vec<u64> = (0..v).map(|_| rng.random_range(1..1000)).collect();
    let head = Head::build(objective, &counts, 5, 0.75).unwrap();
    let rows = head.output_rows();
    let mut weights = normal_vec(rng, rows * k, 0.5);
    let target = rng.random_range(0..v);
    let mut decisions: Vec<Decision> = Vec::new();
    head.decisions(target, rng, &mut decisions).unwrap();

    let mut worst = 0.0f64;
    if !dm {
        let mut h = normal_vec(rng, k, 0.5);
        let g = loss_and_grads(&h, &decisions, &weights).unwrap();
        for j in 0..k {
            let x = h[j];
            let fd = central(x, |t| {
                h[j] = t;
                loss_and_grads(&h, &decisions, &weights).unwrap().loss
            });
            h[j] = x;
            worst = worst.max(rel_err(g.grad_h[j], fd));
        }
        for (row, grad) in &g.rows {
            for j in 0..k {
                let i = *row as usize * k + j;
                let x = weights[i];
                let fd = central(x, |t| {
                    weights[i] = t;
                    loss_and_grads(&h, &decisions, &weights).unwrap().loss
                });
                weights[i] = x;
                worst = worst.max(rel_err(grad[j], fd));
            }
        }
    } else {
        let n_ctx = rng.random_range(1..=4usize);
        let mut doc = normal_vec(rng, k, 0.5);
        let mut ctx: Vec<Vec<f64>> = (0..n_ctx).map(|_| normal_vec(rng, k, 0.5)).collect();
        let loss = |doc: &[f64], ctx: &[Vec<f64>], w: &[f64]| {
            let refs: Vec<&[f64]> = ctx.iter().map(Vec::as_slice).collect();
            dm_loss_and_grads(doc, &refs, &decisions, w).unwrap().loss
        };
        let refs: Vec<&[f64]> = ctx.iter().map(Vec::as_slice).collect();
        let g = dm_loss_and_grads(&doc, &refs, &decisions, &weights).unwrap();
        for j in 0..k {
            let x = doc[j];
            let fd = central(x, |t| {
                doc[j] = t;
                loss(&doc, &ctx, &weights)
            });
            doc[j] = x;
            worst = worst.max(rel_err(g.grad_doc[j], fd));
        }
        for c in 0..n_ctx {
            for j in 0..k {
                let x = ctx[c][j];
                let fd = central(x, |t| {
                    ctx[c][j] = t;
                    loss(&doc, &ctx, &weights)
                });
                ctx[c][j] = x;
                worst = worst.max(rel_err(g.grad_context[c][j], fd));
            }
        }
        for (row, grad) in &g.rows {
            for j in 0..k {
                let i = *row as usize * k + j;
                let x = weights[i];
                let fd = central(x, |t| {
                    weights[i] = t;
                    loss(&doc, &ctx, &weights)
                });
                weights[i] = x;
                worst = worst.max(rel_err(grad[j], fd));
            }
        }
    }
    worst
}

/// Minimum weighted code length by trying every merge order.
pub fn exhaustive_code_cost(weights: &[u64]) -> u64 {
    if weights.len() <= 1 {
        return 0;
    }
    let mut best = u64::MAX;
    for i in 0..weights.len() {
        for j in i + 1..weights.len() {
            let merged = weights[i] + weights[j];
            let mut rest: Vec<u64> = weights
                .iter()
                .enumerate()
                .filter(|&(t, _)| t != i && t != j)
                .map(|(_, &w)| w)
                .collect();
            rest.push(merged);
            best = best.min(merged + exhaustive_code_cost(&rest));
        }
    }
    best
}

pub fn huffman_cost(tree: &HuffmanTree, counts: &[u64]) -> u64 {
    tree.code_lengths().iter().zip(counts).map(|(&l, &c)| l as u64 * c).sum()
}

/// `(prefix_free, kraft_equal)` for the tree's codes.
pub fn prefix_and_kraft(tree: &HuffmanTree) -> (bool, bool) {
    let mut codes: Vec<Vec<u8>> = (0..tree.len()).map(|t| tree.bits(t).to_vec()).collect();
    codes.sort();
    let prefix_free = codes.windows(2).all(|w| !w[1].starts_with(&w[0]));
    let max_len = codes.iter().map(Vec::len).max().unwrap_or(0);
    assert!(max_len < 127);
    let sum: u128 = codes.iter().map(|c| 1u128 << (max_len - c.len())).sum();
    (prefix_free, sum == 1u128 << max_len)
}

/// Largest absolute gap between empirical draw frequencies and
/// `count^0.75` normalized.
pub fn noise_max_gap<R: Rng>(counts: &[u64], draws: usize, rng: &mut R) -> f64 {
    let table = NoiseTable::build(counts, 0.75).unwrap();
    let mut hits = vec![0usize; counts.len()];
    for _ in 0..draws {
        hits[table.sample(rng) as usize] += 1;
    }
    let z: f64 = counts.iter().map(|&c| (c as f64).powf(0.75)).sum();
    counts
        .iter()
        .zip(&hits)
        .map(|(&c, &h)| ((c as f64).powf(0.75) / z - h as f64 / draws as f64).abs())
        .fold(0.0, f64::max)
}

pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1;
            twice += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Penalized logistic objective written out from scratch: columns centered
/// and divided by their population sd, mean log-loss, elastic-net penalty
/// on the standardized weights.
pub fn enet_objective(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, lambda: f64, alpha: f64) -> f64 {
    let n = x.len() as f64;
    let p = w.len();
    let mut mean = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for j in 0..p {
        mean[j] = x.iter().map(|r| r[j]).sum::<f64>() / n;
        sd[j] = (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
    }
    let mut loss = 0.0;
    for (r, &yi) in x.iter().zip(y) {
        let eta: f64 = b + (0..p).map(|j| w[j] * (r[j] - mean[j]) / sd[j]).sum::<f64>();
        let p1 = 1.0 / (1.0 + (-eta).exp());
        loss -= if yi { p1.ln() } else { (1.0 - p1).ln() };
    }
    let l1: f64 = w.iter().map(|v| v.abs()).sum();
    let l2: f64 = w.iter().map(|v| v * v).sum();
    loss / n + lambda * (alpha * l1 + 0.5 * (1.0 - alpha) * l2)
}

/// Grid search over (b, w1, w2, w3), zooming around the best point.
pub fn enet_grid_oracle(x: &[Vec<f64>], y: &[bool], lambda: f64, alpha: f64) -> f64 {
    let steps = 9i32;
    let mut center = [0.0f64; 4];
    let mut radius = 4.0f64;
    let mut best = f64::INFINITY;
    for _ in 0..40 {
        let mut best_pt = center;
        let h = radius / (steps / 2) as f64;
        for a in 0..steps {
            for b in 0..steps {
                for c in 0..steps {
                    for d in 0..steps {
                        let off = |i: i32| (i - steps / 2) as f64 * h;
                        let pt = [
                            center[0] + off(a),
                            center[1] + off(b),
                            center[2] + off(c),
                            center[3] + off(d),
                        ];
                        let f = enet_objective(x, y, &pt[1..], pt[0], lambda, alpha);
                        if f < best {
                            best = f;
                            best_pt = pt;
                        }
                    }
                }
            }
        }
        center = best_pt;
        radius *= 0.6;
    }
    best
}

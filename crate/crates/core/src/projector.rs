//! Two-component PCA of embedded vectors and per-record trajectories.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{truncate, Record};
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::inference::{infer_record, InferConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// Orthonormal, ordered by explained variance.
    pub components: [Vec<f64>; 2],
    pub explained: [f64; 2],
    pub eigenvalues: [f64; 2],
    pub total_variance: f64,
}

/// Top two eigenvectors of the sample covariance. Each component's
/// largest-magnitude coordinate is made positive.
///
/// Collinear data is accepted: the second component is then an arbitrary
/// orthonormal direction with zero explained variance.
pub fn fit_pca2<V: AsRef<[f32]>>(vectors: &[V]) -> Result<Projection> {
    let n = vectors.len();
    if n < 3 {
        return Err(Error::Data(format!("PCA needs at least 3 vectors, got {n}")));
    }
    let k = vectors[0].as_ref().len();
    if k < 2 {
        return Err(Error::Data(format!("PCA needs at least 2 dimensions, got {k}")));
    }
    if vectors.iter().any(|v| v.as_ref().len() != k) {
        return Err(Error::Data("vectors have different lengths".into()));
    }
    let mut mean = vec![0.0f64; k];
    for v in vectors {
        for (m, &x) in mean.iter_mut().zip(v.as_ref()) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, k, |i, j| vectors[i].as_ref()[j] as f64 - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    if !cov.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite covariance".into()));
    }
    let total_variance = cov.trace();
    if !(total_variance > 0.0) {
        return Err(Error::Data("rank 0: all vectors are identical".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let component = |c: usize| -> Vec<f64> {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let ev = |c: usize| eig.eigenvalues[c].max(0.0);
    let eigenvalues = [ev(order[0]), ev(order[1])];
    Ok(Projection {
        mean,
        components: [component(order[0]), component(order[1])],
        explained: [eigenvalues[0] / total_variance, eigenvalues[1] / total_variance],
        eigenvalues,
        total_variance,
    })
}

impl Projection {
    pub fn project(&self, v: &[f32]) -> [f64; 2] {
        let dot = |c: &[f64]| c.iter().zip(v).zip(&self.mean).map(|((c, &x), m)| c * (x as f64 - m)).sum();
        [dot(&self.components[0]), dot(&self.components[1])]
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("projection serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub day: u32,
    pub pc: [f64; 2],
    /// Set on the checkpoint nearest the labeled event day.
    pub marker: bool,
}

/// Infers and projects the record as seen before each checkpoint day.
/// Checkpoints whose truncation has no in-vocabulary events are skipped.
pub fn trajectory(
    model: &EmbeddingModel,
    record: &Record,
    checkpoints: &[u32],
    projection: &Projection,
    event_day: Option<u32>,
    infer: &InferConfig,
) -> Result<Vec<TrajectoryPoint>> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Data("checkpoints must be strictly ascending".into()));
    }
    let mut points = Vec::with_capacity(checkpoints.len());
    for &day in checkpoints {
        let input = truncate(record, day);
        match infer_record(model, &input, infer) {
            Ok(v) => points.push(TrajectoryPoint {
                day,
                pc: projection.project(&v.vector),
                marker: false,
            }),
            Err(Error::Unrepresentable(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if points.is_empty() {
        return Err(Error::Unrepresentable(format!(
            "record '{}' is empty at every checkpoint",
            record.record_id
        )));
    }
    if let Some(ev) = event_day {
        let nearest = (0..points.len()).min_by_key(|&i| points[i].day.abs_diff(ev)).unwrap();
        points[nearest].marker = true;
    }
    Ok(points)
}

/// Checkpoints every `step` days from the record's first event through
/// its last event.
pub fn checkpoints(record: &Record, step: u32) -> Vec<u32> {
    match (record.first_day(), record.last_day()) {
        (Some(a), Some(b)) if step > 0 => (a + 1..=b + 1).step_by(step as usize).collect(),
        _ => Vec::new(),
    }
}

/// [`trajectory`] for many records in parallel, results in input order.
pub fn trajectories(
    model: &EmbeddingModel,
    jobs: &[(&Record, Vec<u32>, Option<u32>)],
    projection: &Projection,
    infer: &InferConfig,
) -> Vec<Result<Vec<TrajectoryPoint>>> {
    jobs.par_iter()
        .map(|(r, c, ev)| trajectory(model, r, c, projection, *ev, infer))
        .collect()
}

/// `record_id<TAB>day<TAB>pc1<TAB>pc2<TAB>marker` rows.
pub fn write_trajectory_tsv<W: Write>(
    mut out: W,
    rows: &[(&str, &[TrajectoryPoint])],
    fingerprint: Option<&str>,
) -> std::io::Result<()> {
    if let Some(fp) = fingerprint {
        writeln!(out, "# fingerprint={fp}")?;
    }
    writeln!(out, "# record_id\tday\tpc1\tpc2\tmarker")?;
    for (id, points) in rows {
        for p in points.iter() {
            writeln!(out, "{id}\t{}\t{}\t{}\t{}", p.day, p.pc[0], p.pc[1], p.marker as u8)?;
        }
    }
    Ok(())
}

/// `id<TAB>pc1<TAB>pc2` rows.
pub fn write_projection_tsv<W: Write>(
    mut out: W,
    rows: &[(&str, [f64; 2])],
    fingerprint: Option<&str>,
) -> std::io::Result<()> {
    if let Some(fp) = fingerprint {
        writeln!(out, "# fingerprint={fp}")?;
    }
    writeln!(out, "# id\tpc1\tpc2")?;
    for (id, pc) in rows {
        writeln!(out, "{id}\t{}\t{}", pc[0], pc[1])?;
    }
    Ok(())
}

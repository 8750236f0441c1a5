//! In-place SGD passes over one encoded document, shared by training and
//! inference.

use std::ops::RangeInclusive;

use rand::Rng;

use super::grads::{decision_terms, Decision};
use super::matrix::{RowRead, RowWrite};
use super::{Head, Mode};
use crate::error::Result;

/// Read-only view that turns every row update into a no-op.
pub struct Frozen<'a, M>(pub &'a M);

impl<M: RowRead> RowRead for Frozen<'_, M> {
    fn cols(&self) -> usize {
        self.0.cols()
    }

    fn read_row(&self, i: usize, out: &mut [f32]) {
        self.0.read_row(i, out)
    }
}

impl<M: RowRead> RowWrite for Frozen<'_, M> {
    #[inline]
    fn axpy_row(&mut self, _i: usize, _a: f32, _x: &[f32]) {}
}

/// Scratch buffers reused across predictions.
pub struct Workspace {
    pub h: Vec<f32>,
    pub grad: Vec<f32>,
    row: Vec<f32>,
    decisions: Vec<Decision>,
    context: Vec<usize>,
}

impl Workspace {
    pub fn new(k: usize) -> Self {
        Workspace {
            h: vec![0.0; k],
            grad: vec![0.0; k],
            row: vec![0.0; k],
            decisions: Vec::with_capacity(64),
            context: Vec::with_capacity(128),
        }
    }
}

/// Positions `[position - window, position + window]` clipped to the document.
pub fn window_range(len: usize, position: usize, window: usize) -> RangeInclusive<usize> {
    position.saturating_sub(window)..=(position + window).min(len - 1)
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// Predicts `target` from `ws.h`: leaves `∂loss/∂h` in `ws.grad` and moves
/// each touched output row by `-lr·∂loss/∂row`.
#[inline]
pub fn predict<O: RowWrite, R: Rng + ?Sized>(
    head: &Head,
    target: u32,
    outputs: &mut O,
    lr: f32,
    rng: &mut R,
    ws: &mut Workspace,
) -> Result<f32> {
    head.decisions(target as usize, rng, &mut ws.decisions)?;
    ws.grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0f32;
    for d in &ws.decisions {
        outputs.read_row(d.row as usize, &mut ws.row);
        let score = dot(&ws.row, &ws.h);
        let (l, c) = decision_terms(score, d.positive);
        loss += l;
        for (g, &w) in ws.grad.iter_mut().zip(&ws.row) {
            *g += c * w;
        }
        outputs.axpy_row(d.row as usize, -lr * c, &ws.h);
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy)]
pub struct PassOptions {
    pub mode: Mode,
    pub window: usize,
    /// Interleave skip-gram token training with the document objective.
    pub train_words: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PassStats {
    pub loss: f64,
    pub predictions: u64,
}

/// One pass over `tokens`, updating `doc` in place.
///
/// `alpha(p)` gives the learning rate at document position `p`. Token and
/// output matrices are updated through `token_vectors` and `outputs`; wrap
/// them in [`Frozen`] to hold them fixed.
#[allow(clippy::too_many_arguments)]
pub fn document_pass<T, O, R, A>(
    opts: PassOptions,
    head: &Head,
    doc: &mut [f32],
    tokens: &[u32],
    token_vectors: &mut T,
    outputs: &mut O,
    alpha: A,
    rng: &mut R,
    ws: &mut Workspace,
) -> Result<PassStats>
where
    T: RowWrite,
    O: RowWrite,
    R: Rng + ?Sized,
    A: Fn(usize) -> f32,
{
    let mut stats = PassStats::default();
    let len = tokens.len();
    for p in 0..len {
        let lr = alpha(p);
        let range = window_range(len, p, opts.window);
        match opts.mode {
            Mode::Dbow => {
                // The document vector predicts each token once; the window
                // only shapes the optional skip-gram pass.
                ws.h.copy_from_slice(doc);
                stats.loss += predict(head, tokens[p], outputs, lr, rng, ws)? as f64;
                stats.predictions += 1;
                for (d, &g) in doc.iter_mut().zip(&ws.grad) {
                    *d -= lr * g;
                }
                if opts.train_words {
                    let center = tokens[p] as usize;
                    for t in range.filter(|&t| t != p) {
                        token_vectors.read_row(center, &mut ws.h);
                        stats.loss += predict(head, tokens[t], outputs, lr, rng, ws)? as f64;
                        stats.predictions += 1;
                        token_vectors.axpy_row(center, -lr, &ws.grad);
                    }
                }
            }
            Mode::Dm => {
                ws.context.clear();
                ws.context.extend(range.filter(|&t| t != p).map(|t| tokens[t] as usize));
                let n = (ws.context.len() + 1) as f32;
                ws.h.copy_from_slice(doc);
                for &c in &ws.context {
                    token_vectors.read_row(c, &mut ws.row);
                    for (h, &r) in ws.h.iter_mut().zip(&ws.row) {
                        *h += r;
                    }
                }
                ws.h.iter_mut().for_each(|h| *h /= n);
                stats.loss += predict(head, tokens[p], outputs, lr, rng, ws)? as f64;
                stats.predictions += 1;
                let step = -lr / n;
                for (d, &g) in doc.iter_mut().zip(&ws.grad) {
                    *d += step * g;
                }
                for i in 0..ws.context.len() {
                    let c = ws.context[i];
                    token_vectors.axpy_row(c, step, &ws.grad);
                }
            }
        }
    }
    Ok(stats)
}

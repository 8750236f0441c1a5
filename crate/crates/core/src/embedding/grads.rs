//! Loss and gradient math for the two output approximations.
//!
//! Both objectives reduce to a list of binary decisions: an output row and
//! whether the model should score it high (`positive`) or low. A decision
//! with score `s = <w, h>` and sign `z = ±1` contributes
//! `-ln σ(z·s)` to the loss and `-z·σ(-z·s)` to `∂loss/∂s`.
//!
//! Hierarchical softmax turns the target's Huffman path into decisions
//! (`z = 1 - 2·bit`); negative sampling uses the target (`z = +1`) plus
//! sampled noise tokens (`z = -1`). Everything here is generic over the
//! float type so gradient checks can run in 64-bit.

use num_traits::Float;
use rand::Rng;

use super::{HuffmanTree, NoiseTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub row: u32,
    pub positive: bool,
}

/// `(loss, ∂loss/∂score)` for one decision.
#[inline]
pub fn decision_terms<F: Float>(score: F, positive: bool) -> (F, F) {
    let m = if positive { score } else { -score };
    // ln(1 + e^{-m}), stable on both sides
    let loss = if m > F::zero() {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    };
    let sig_neg = F::one() / (F::one() + m.exp());
    let coeff = if positive { -sig_neg } else { sig_neg };
    (loss, coeff)
}

pub fn hs_decisions(tree: &HuffmanTree, target: usize, out: &mut Vec<Decision>) {
    out.clear();
    out.extend(
        tree.path(target)
            .iter()
            .zip(tree.bits(target))
            .map(|(&row, &bit)| Decision {
                row,
                positive: bit == 0,
            }),
    );
}

/// Target plus `num_negatives` noise draws; draws equal to the target are
/// redrawn.
pub fn ns_decisions<R: Rng + ?Sized>(
    noise: &NoiseTable,
    target: usize,
    num_negatives: usize,
    rng: &mut R,
    out: &mut Vec<Decision>,
) -> Result<()> {
    if num_negatives == 0 {
        return Err(Error::Config("num_negatives must be at least 1".into()));
    }
    if noise.len() < 2 {
        return Err(Error::Config("negative sampling needs at least 2 tokens".into()));
    }
    out.clear();
    out.push(Decision {
        row: target as u32,
        positive: true,
    });
    for _ in 0..num_negatives {
        let neg = loop {
            let n = noise.sample(rng);
            if n as usize != target {
                break n;
            }
        };
        out.push(Decision {
            row: neg,
            positive: false,
        });
    }
    Ok(())
}

/// Loss with gradients w.r.t. the hidden vector and the touched output rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub loss: F,
    pub grad_h: Vec<F>,
    /// One entry per distinct touched row, in first-touch order.
    pub rows: Vec<(u32, Vec<F>)>,
}

fn check_finite<F: Float>(values: &[F], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite value in {what}")))
    }
}

/// Exact loss and gradients for a decision list against row-major `weights`.
pub fn loss_and_grads<F: Float>(h: &[F], decisions: &[Decision], weights: &[F]) -> Result<Gradients<F>> {
    let k = h.len();
    check_finite(h, "hidden vector")?;
    let mut loss = F::zero();
    let mut grad_h = vec![F::zero(); k];
    let mut rows: Vec<(u32, Vec<F>)> = Vec::with_capacity(decisions.len());
    for d in decisions {
        let start = d.row as usize * k;
        let w = weights
            .get(start..start + k)
            .ok_or_else(|| Error::Config(format!("output row {} out of range", d.row)))?;
        check_finite(w, "output weights")?;
        let score = w.iter().zip(h).fold(F::zero(), |acc, (&a, &b)| acc + a * b);
        let (l, c) = decision_terms(score, d.positive);
        loss = loss + l;
        for (g, &wv) in grad_h.iter_mut().zip(w) {
            *g = *g + c * wv;
        }
        let slot = match rows.iter().position(|(r, _)| *r == d.row) {
            Some(p) => p,
            None => {
                rows.push((d.row, vec![F::zero(); k]));
                rows.len() - 1
            }
        };
        for (g, &hv) in rows[slot].1.iter_mut().zip(h) {
            *g = *g + c * hv;
        }
    }
    Ok(Gradients { loss, grad_h, rows })
}

pub fn loss_and_grads_hs<F: Float>(
    h: &[F],
    target: usize,
    tree: &HuffmanTree,
    hs_weights: &[F],
) -> Result<Gradients<F>> {
    if target >= tree.len() {
        return Err(Error::Config(format!("target {target} outside vocabulary")));
    }
    let mut decisions = Vec::new();
    hs_decisions(tree, target, &mut decisions);
    loss_and_grads(h, &decisions, hs_weights)
}

pub fn loss_and_grads_ns<F: Float, R: Rng + ?Sized>(
    h: &[F],
    target: usize,
    noise: &NoiseTable,
    ns_weights: &[F],
    num_negatives: usize,
    rng: &mut R,
) -> Result<Gradients<F>> {
    if target >= noise.len() {
        return Err(Error::Config(format!("target {target} outside vocabulary")));
    }
    let mut decisions = Vec::new();
    ns_decisions(noise, target, num_negatives, rng, &mut decisions)?;
    loss_and_grads(h, &decisions, ns_weights)
}

/// Arithmetic mean of the document vector and the context vectors.
pub fn context_mean<F: Float>(doc: &[F], context: &[&[F]]) -> Vec<F> {
    let mut h = doc.to_vec();
    for c in context {
        for (a, &b) in h.iter_mut().zip(c.iter()) {
            *a = *a + b;
        }
    }
    let n = F::from(context.len() + 1).unwrap();
    h.iter_mut().for_each(|a| *a = *a / n);
    h
}

/// Gradients of the distributed-memory loss w.r.t. its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DmGradients<F> {
    pub loss: F,
    pub grad_doc: Vec<F>,
    pub grad_context: Vec<Vec<F>>,
    pub rows: Vec<(u32, Vec<F>)>,
}

pub fn dm_loss_and_grads<F: Float>(
    doc: &[F],
    context: &[&[F]],
    decisions: &[Decision],
    weights: &[F],
) -> Result<DmGradients<F>> {
    let h = context_mean(doc, context);
    let g = loss_and_grads(&h, decisions, weights)?;
    let n = F::from(context.len() + 1).unwrap();
    let share: Vec<F> = g.grad_h.iter().map(|&x| x / n).collect();
    Ok(DmGradients {
        loss: g.loss,
        grad_doc: share.clone(),
        grad_context: vec![share; context.len()],
        rows: g.rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terms_at_zero() {
        let (l, c) = decision_terms(0.0f64, true);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(c, -0.5);
        let (l, c) = decision_terms(0.0f64, false);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(c, 0.5);
    }

    #[test]
    fn terms_saturate() {
        let (l, _) = decision_terms(60.0f64, true);
        assert!(l < 1e-20);
        let (l, _) = decision_terms(-800.0f64, true);
        assert!((l - 800.0).abs() < 1e-9);
        assert!(l.is_finite());
    }

    #[test]
    fn zero_weights_hs_loss_is_path_length_ln2() {
        let tree = HuffmanTree::build(&[5, 3, 2, 1, 1]).unwrap();
        let k = 4;
        let w = vec![0.0f64; (tree.len() - 1) * k];
        let h = [0.3, -0.1, 0.2, 0.7];
        for t in 0..tree.len() {
            let g = loss_and_grads_hs(&h, t, &tree, &w).unwrap();
            let expected = tree.path(t).len() as f64 * std::f64::consts::LN_2;
            assert!((g.loss - expected).abs() < 1e-12);
            assert!(g.grad_h.iter().all(|&x| x == 0.0));
            for ((row, grad), bit) in g.rows.iter().zip(tree.bits(t)) {
                assert!(tree.path(t).contains(row));
                let c = if *bit == 0 { -0.5 } else { 0.5 };
                for (gv, hv) in grad.iter().zip(&h) {
                    assert!((gv - c * hv).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn two_token_saturation() {
        let tree = HuffmanTree::build(&[1, 1]).unwrap();
        let w = [10.0f64, 10.0];
        let h = [3.0, 3.0];
        // token 0 takes bit 0 at the root, so a large positive score is right
        let g = loss_and_grads_hs(&h, 0, &tree, &w).unwrap();
        assert!(g.loss < 1e-20);
        let g = loss_and_grads_hs(&h, 1, &tree, &w).unwrap();
        assert!(g.loss > 50.0);
    }

    #[test]
    fn ns_zero_weights() {
        use rand::SeedableRng;
        let noise = NoiseTable::build(&[10, 5, 5, 2, 1], 0.75).unwrap();
        let w = vec![0.0f64; 5 * 3];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let g = loss_and_grads_ns(&[0.1, 0.2, 0.3], 2, &noise, &w, 5, &mut rng).unwrap();
        assert!((g.loss - 6.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        assert!(loss_and_grads_ns(&[0.1, 0.2, 0.3], 2, &noise, &w, 0, &mut rng).is_err());
    }

    #[test]
    fn negatives_never_equal_target() {
        use rand::SeedableRng;
        let noise = NoiseTable::build(&[1000, 1], 0.75).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut out = Vec::new();
        for _ in 0..100 {
            ns_decisions(&noise, 0, 5, &mut rng, &mut out).unwrap();
            assert!(out[1..].iter().all(|d| d.row == 1 && !d.positive));
        }
    }

    #[test]
    fn non_finite_rejected() {
        let tree = HuffmanTree::build(&[1, 1]).unwrap();
        assert!(matches!(
            loss_and_grads_hs(&[f64::NAN], 0, &tree, &[0.0]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            loss_and_grads_hs(&[1.0], 0, &tree, &[f64::INFINITY]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn context_mean_examples() {
        let doc = [1.0f64, 0.0];
        assert_eq!(context_mean(&doc, &[]), doc);
        let h = context_mean(&doc, &[&[0.0, 1.0], &[1.0, 1.0]]);
        assert!((h[0] - 2.0 / 3.0).abs() < 1e-15 && (h[1] - 2.0 / 3.0).abs() < 1e-15);
        let v = [0.25f64, -0.5];
        assert_eq!(context_mean(&v, &[&v]), v);
    }
}

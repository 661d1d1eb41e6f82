//! Multi-positive InfoNCE kernel: loss, analytic gradients with respect to
//! the raw (pre-normalization) embeddings, and a finite-difference verifier.
//!
//! The loss for an anchor `s` with positive set P and negative set N is
//!
//! ```text
//! L = -log( sum_{t in P} exp(sim(s,t)/tau) / sum_{t in P u N} exp(sim(s,t)/tau) )
//!   = softplus( lse_N - lse_P )
//! ```
//!
//! computed in the softplus form with per-set max-shifted log-sum-exp, which
//! is exact at `N = {}`, strictly positive otherwise, and cannot overflow for
//! similarities in [-1, 1] at any `tau >= 1e-4`.
//!
//! All math is 64-bit. Inputs are nominally unit vectors; the loss is defined
//! as a function of the raw vectors through an internal normalization, so
//! gradients include the l2-normalization Jacobian and the kernel is usable
//! by any external trainer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContrastiveError {
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("batch must contain at least one positive")]
    NoPositives,
    #[error("vector {0} has dimension {1}, expected {2}")]
    Dim(String, usize, usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("vector {0} has norm {1}, expected 1 within 1e-6")]
    NotUnit(String, f64),
    #[error("vector {0} has effectively zero norm")]
    ZeroNorm(String),
}

/// One anchor with its positive and negative candidate embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveBatch {
    pub anchor: Vec<f64>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
    pub temperature: f64,
}

impl ContrastiveBatch {
    /// Validates the construction-time invariants: matching dimensions,
    /// unit norms within 1e-6, at least one positive, positive temperature.
    pub fn new(
        anchor: Vec<f64>,
        positives: Vec<Vec<f64>>,
        negatives: Vec<Vec<f64>>,
        temperature: f64,
    ) -> Result<Self, ContrastiveError> {
        let batch = Self {
            anchor,
            positives,
            negatives,
            temperature,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<(), ContrastiveError> {
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(ContrastiveError::BadTemperature(self.temperature));
        }
        if self.positives.is_empty() {
            return Err(ContrastiveError::NoPositives);
        }
        let dim = self.anchor.len();
        for (name, v) in self.vectors() {
            if v.len() != dim {
                return Err(ContrastiveError::Dim(name, v.len(), dim));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ContrastiveError::NonFinite(name));
            }
            let norm = norm(v);
            if (norm - 1.0).abs() > 1e-6 {
                return Err(ContrastiveError::NotUnit(name, norm));
            }
        }
        Ok(())
    }

    fn vectors(&self) -> impl Iterator<Item = (String, &Vec<f64>)> {
        std::iter::once(("anchor".to_string(), &self.anchor))
            .chain(
                self.positives
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (format!("positive {i}"), v)),
            )
            .chain(
                self.negatives
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (format!("negative {i}"), v)),
            )
    }
}

/// Gradients of the loss with respect to the raw input vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradients {
    pub anchor: Vec<f64>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

/// Identifies one vector of a batch in finite-difference reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VectorRef {
    Anchor,
    Positive(usize),
    Negative(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    pub argmax_vector: VectorRef,
    pub argmax_coord: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-shifted log-sum-exp; empty input yields negative infinity.
fn lse(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln(1 + e^x)` without overflow in either direction.
fn softplus(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Prepared {
    anchor_unit: Vec<f64>,
    anchor_norm: f64,
    units: Vec<Vec<f64>>,
    norms: Vec<f64>,
    /// Scaled similarities `sim / tau`, positives first.
    scaled: Vec<f64>,
    n_pos: usize,
}

fn prepare(batch: &ContrastiveBatch) -> Result<Prepared, ContrastiveError> {
    if batch.temperature <= 0.0 || !batch.temperature.is_finite() {
        return Err(ContrastiveError::BadTemperature(batch.temperature));
    }
    if batch.positives.is_empty() {
        return Err(ContrastiveError::NoPositives);
    }
    let dim = batch.anchor.len();
    let unit_of = |name: String, v: &[f64]| -> Result<(Vec<f64>, f64), ContrastiveError> {
        if v.len() != dim {
            return Err(ContrastiveError::Dim(name, v.len(), dim));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ContrastiveError::NonFinite(name));
        }
        let n = norm(v);
        if n <= 1e-12 {
            return Err(ContrastiveError::ZeroNorm(name));
        }
        Ok((v.iter().map(|x| x / n).collect(), n))
    };
    let (anchor_unit, anchor_norm) = unit_of("anchor".into(), &batch.anchor)?;
    let mut units = Vec::new();
    let mut norms = Vec::new();
    for (i, v) in batch.positives.iter().enumerate() {
        let (u, n) = unit_of(format!("positive {i}"), v)?;
        units.push(u);
        norms.push(n);
    }
    for (i, v) in batch.negatives.iter().enumerate() {
        let (u, n) = unit_of(format!("negative {i}"), v)?;
        units.push(u);
        norms.push(n);
    }
    let scaled = units
        .iter()
        .map(|u| dot(&anchor_unit, u) / batch.temperature)
        .collect();
    Ok(Prepared {
        anchor_unit,
        anchor_norm,
        units,
        norms,
        scaled,
        n_pos: batch.positives.len(),
    })
}

/// Loss value; non-negative and finite for any valid batch.
pub fn infonce_loss(batch: &ContrastiveBatch) -> Result<f64, ContrastiveError> {
    let p = prepare(batch)?;
    Ok(softplus(lse(&p.scaled[p.n_pos..]) - lse(&p.scaled[..p.n_pos])))
}

/// Analytic gradients with respect to the raw anchor, positives, and
/// negatives, chained through the dot product and the l2-normalization
/// Jacobian.
pub fn infonce_grad(batch: &ContrastiveBatch) -> Result<BatchGradients, ContrastiveError> {
    let p = prepare(batch)?;
    let (pos_scaled, neg_scaled) = (&p.scaled[..p.n_pos], &p.scaled[p.n_pos..]);
    let delta = lse(neg_scaled) - lse(pos_scaled);
    let sigma = logistic(delta);

    let softmax = |xs: &[f64]| -> Vec<f64> {
        if xs.is_empty() {
            return Vec::new();
        }
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / sum).collect()
    };
    let p_pos = softmax(pos_scaled);
    let p_neg = softmax(neg_scaled);

    // dL/dsim_k: negatives pull up, positives pull down, scaled by 1/tau.
    let mut sim_grads = Vec::with_capacity(p.units.len());
    for k in 0..p.units.len() {
        let g = if k < p.n_pos {
            -sigma * p_pos[k]
        } else {
            sigma * p_neg[k - p.n_pos]
        };
        sim_grads.push(g / batch.temperature);
    }

    // Through the normalization Jacobian: grad_v = (g_u - u (u . g_u)) / ||v||.
    let through_norm = |grad_u: &[f64], unit: &[f64], raw_norm: f64| -> Vec<f64> {
        let radial = dot(unit, grad_u);
        grad_u
            .iter()
            .zip(unit)
            .map(|(g, u)| (g - u * radial) / raw_norm)
            .collect()
    };

    let dim = batch.anchor.len();
    let mut anchor_grad_u = vec![0.0; dim];
    for (g, unit) in sim_grads.iter().zip(&p.units) {
        for (acc, u) in anchor_grad_u.iter_mut().zip(unit) {
            *acc += g * u;
        }
    }
    let anchor = through_norm(&anchor_grad_u, &p.anchor_unit, p.anchor_norm);

    let mut positives = Vec::with_capacity(p.n_pos);
    let mut negatives = Vec::with_capacity(batch.negatives.len());
    for (k, (g, unit)) in sim_grads.iter().zip(&p.units).enumerate() {
        let grad_u: Vec<f64> = p.anchor_unit.iter().map(|u| g * u).collect();
        let grad = through_norm(&grad_u, unit, p.norms[k]);
        if k < p.n_pos {
            positives.push(grad);
        } else {
            negatives.push(grad);
        }
    }
    Ok(BatchGradients {
        anchor,
        positives,
        negatives,
    })
}

/// Absolute floor under the relative-error denominator, so checks on a
/// zero gradient (for example with no negatives) report zero error.
pub const FD_REL_FLOOR: f64 = 1e-8;

/// Compares a supplied gradient against central finite differences of the
/// loss, coordinate by coordinate. Differences are normalized by the larger
/// of the two gradients' largest coordinate magnitude (with the absolute
/// floor), the usual gradient-check scaling: a per-coordinate denominator
/// would blow up on coordinates where the normalization Jacobian projects
/// the gradient to zero while finite differences still carry O(eps^2)
/// truncation error.
///
/// Split out from [`finite_diff_check`] so tests can feed it corrupted
/// gradients and confirm the check actually fires.
pub fn compare_gradients(
    gradients: &BatchGradients,
    batch: &ContrastiveBatch,
    eps: f64,
) -> Result<FiniteDiffReport, ContrastiveError> {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut diffs: Vec<(VectorRef, usize, f64)> = Vec::new();
    let mut scale = FD_REL_FLOOR;
    let mut probe = |vector: VectorRef, analytic: &[f64]| -> Result<(), ContrastiveError> {
        for (coord, a) in analytic.iter().enumerate() {
            let mut plus = batch.clone();
            let mut minus = batch.clone();
            {
                let (p, m) = match vector {
                    VectorRef::Anchor => (&mut plus.anchor, &mut minus.anchor),
                    VectorRef::Positive(i) => (&mut plus.positives[i], &mut minus.positives[i]),
                    VectorRef::Negative(i) => (&mut plus.negatives[i], &mut minus.negatives[i]),
                };
                p[coord] += eps;
                m[coord] -= eps;
            }
            let fd = (infonce_loss(&plus)? - infonce_loss(&minus)?) / (2.0 * eps);
            scale = scale.max(a.abs()).max(fd.abs());
            diffs.push((vector, coord, (a - fd).abs()));
        }
        Ok(())
    };
    probe(VectorRef::Anchor, &gradients.anchor)?;
    for (i, g) in gradients.positives.iter().enumerate() {
        probe(VectorRef::Positive(i), g)?;
    }
    for (i, g) in gradients.negatives.iter().enumerate() {
        probe(VectorRef::Negative(i), g)?;
    }
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        argmax_vector: VectorRef::Anchor,
        argmax_coord: 0,
    };
    for (vector, coord, diff) in diffs {
        let rel = diff / scale;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.argmax_vector = vector;
            report.argmax_coord = coord;
        }
    }
    Ok(report)
}

/// Central-difference verification of [`infonce_grad`] on every coordinate.
pub fn finite_diff_check(
    batch: &ContrastiveBatch,
    eps: f64,
) -> Result<FiniteDiffReport, ContrastiveError> {
    compare_gradients(&infonce_grad(batch)?, batch, eps)
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn basis(dim: usize, axis: usize, sign: f64) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[axis] = sign;
        v
    }

    #[test]
    fn no_negatives_means_exactly_zero_loss() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..50 {
            let batch = random_batch(&mut rng, 8, 3, 0, 0.03);
            let loss = infonce_loss(&batch).unwrap();
            assert!(loss.abs() < 1e-12, "got {loss}");
        }
    }

    #[test]
    fn perfectly_separated_pair_is_positive_softplus() {
        // sim(+) = 1, sim(-) = -1, tau = 0.03: loss = ln(1 + exp(-2/0.03)).
        let batch = ContrastiveBatch::new(
            basis(4, 0, 1.0),
            vec![basis(4, 0, 1.0)],
            vec![basis(4, 0, -1.0)],
            0.03,
        )
        .unwrap();
        let loss = infonce_loss(&batch).unwrap();
        let expected = (-2.0f64 / 0.03).exp().ln_1p();
        assert!(loss > 0.0, "loss must be strictly positive");
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn equal_similarity_pair_is_log_two() {
        // One positive and one negative at identical similarity to the anchor.
        let batch = ContrastiveBatch::new(
            basis(4, 0, 1.0),
            vec![basis(4, 1, 1.0)],
            vec![basis(4, 2, 1.0)],
            0.03,
        )
        .unwrap();
        let loss = infonce_loss(&batch).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_is_finite_at_extreme_temperature() {
        // Maximum similarity gap with the smallest supported temperature:
        // naive exponentiation would overflow, the lse form must not.
        let batch = ContrastiveBatch::new(
            basis(4, 0, 1.0),
            vec![basis(4, 0, -1.0)],
            vec![basis(4, 0, 1.0)],
            1e-4,
        )
        .unwrap();
        let loss = infonce_loss(&batch).unwrap();
        assert!(loss.is_finite());
        assert!((loss - 2.0 / 1e-4).abs() < 1e-6, "got {loss}");
    }

    #[test]
    fn bad_temperature_rejected() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut batch = random_batch(&mut rng, 4, 1, 1, 0.03);
        batch.temperature = 0.0;
        assert!(matches!(
            infonce_loss(&batch),
            Err(ContrastiveError::BadTemperature(_))
        ));
        batch.temperature = -1.0;
        assert!(infonce_loss(&batch).is_err());
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut batch = random_batch(&mut rng, 4, 1, 1, 0.03);
        batch.positives[0][2] = f64::NAN;
        assert!(matches!(
            infonce_loss(&batch),
            Err(ContrastiveError::NonFinite(_))
        ));
    }

    #[test]
    fn zero_negative_gradients_all_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let batch = random_batch(&mut rng, 8, 1, 0, 0.03);
        let g = infonce_grad(&batch).unwrap();
        assert_eq!(max_grad_magnitude(&g), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let batch = random_batch(&mut rng, 16, 3, 5, 0.03);
        let report = finite_diff_check(&batch, 1e-4).unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "max rel error {} at {:?}[{}]",
            report.max_rel_error,
            report.argmax_vector,
            report.argmax_coord
        );
    }

    #[test]
    fn vanishing_negative_has_vanishing_gradient() {
        // Anchor == positive (sim 1), negative at sim -1: gap 2 at tau 0.03.
        let batch = ContrastiveBatch::new(
            basis(6, 0, 1.0),
            vec![basis(6, 0, 1.0)],
            vec![basis(6, 0, -1.0)],
            0.03,
        )
        .unwrap();
        let g = infonce_grad(&batch).unwrap();
        let neg_norm = norm(&g.negatives[0]);
        assert!(neg_norm < 1e-12, "got {neg_norm}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let batch = random_batch(&mut rng, 16, 2, 4, 0.03);
        let mut g = infonce_grad(&batch).unwrap();
        // Negate the largest-magnitude coordinate.
        let mut best = (VectorRef::Anchor, 0, 0.0f64);
        let mut scan = |r: VectorRef, v: &[f64]| {
            for (c, x) in v.iter().enumerate() {
                if x.abs() > best.2 {
                    best = (r, c, x.abs());
                }
            }
        };
        scan(VectorRef::Anchor, &g.anchor.clone());
        for (i, v) in g.positives.clone().iter().enumerate() {
            scan(VectorRef::Positive(i), v);
        }
        for (i, v) in g.negatives.clone().iter().enumerate() {
            scan(VectorRef::Negative(i), v);
        }
        match best.0 {
            VectorRef::Anchor => g.anchor[best.1] = -g.anchor[best.1],
            VectorRef::Positive(i) => g.positives[i][best.1] = -g.positives[i][best.1],
            VectorRef::Negative(i) => g.negatives[i][best.1] = -g.negatives[i][best.1],
        }
        let report = compare_gradients(&g, &batch, 1e-4).unwrap();
        assert!(
            report.max_rel_error > 0.5,
            "corruption not detected: {}",
            report.max_rel_error
        );
    }

    #[test]
    fn loss_invariant_under_candidate_permutation() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let batch = random_batch(&mut rng, 8, 4, 6, 0.05);
        let mut shuffled = batch.clone();
        shuffled.positives.reverse();
        shuffled.negatives.rotate_left(2);
        let a = infonce_loss(&batch).unwrap();
        let b = infonce_loss(&shuffled).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn adding_a_negative_never_decreases_loss() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..200 {
            let batch = random_batch(&mut rng, 8, 2, 3, 0.05);
            let mut extended = batch.clone();
            extended.negatives.push(random_unit(&mut rng, 8));
            let before = infonce_loss(&batch).unwrap();
            let after = infonce_loss(&extended).unwrap();
            assert!(after >= before - 1e-12, "{after} < {before}");
        }
    }

    #[test]
    fn loss_monotone_in_similarities() {
        // Directional check: nudging a positive toward the anchor lowers the
        // loss; nudging a negative toward the anchor raises it.
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..50 {
            let batch = random_batch(&mut rng, 8, 2, 3, 0.05);
            let base = infonce_loss(&batch).unwrap();
            let step = 1e-5;

            let mut toward_pos = batch.clone();
            for (x, a) in toward_pos.positives[0].iter_mut().zip(&batch.anchor) {
                *x += step * a;
            }
            assert!(infonce_loss(&toward_pos).unwrap() <= base + 1e-12);

            let mut toward_neg = batch.clone();
            for (x, a) in toward_neg.negatives[0].iter_mut().zip(&batch.anchor) {
                *x += step * a;
            }
            assert!(infonce_loss(&toward_neg).unwrap() >= base - 1e-12);
        }
    }

    #[test]
    fn batch_fixture_json_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let batch = random_batch(&mut rng, 4, 1, 2, 0.03);
        let json = serde_json::to_string(&batch).unwrap();
        let back: ContrastiveBatch = serde_json::from_str(&json).unwrap();
        assert_eq!(batch, back);
    }
}

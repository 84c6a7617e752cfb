//! Dual, consistent and total losses. All terms live in `log2` space.

use scalenet_core::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub dual: f64,
    pub consistent: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dual: 1.0,
            consistent: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.dual) || !ok(self.consistent) || self.dual + self.consistent <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "loss weights ({}, {}) must be nonnegative with a positive sum",
                self.dual, self.consistent
            )));
        }
        Ok(())
    }
}

fn logs(values: &[f64], what: &str) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|&v| {
            if v.is_finite() && v > 0.0 {
                Ok(v.log2())
            } else {
                Err(Error::InvalidArgument(format!("{what} ratio {v} is not positive")))
            }
        })
        .collect()
}

fn check_lengths(lens: &[usize]) -> Result<usize> {
    let n = lens[0];
    if n == 0 || lens.iter().any(|&l| l != n) {
        return Err(Error::InvalidArgument(format!("loss inputs need equal nonzero lengths, got {lens:?}")));
    }
    Ok(n)
}

/// Batch mean of `1/2 [(log2(pred / gt))^2 + (log2(pred_swapped * gt))^2]`.
pub fn dual_loss(pred: &[f64], pred_swapped: &[f64], gt: &[f64]) -> Result<f64> {
    check_lengths(&[pred.len(), pred_swapped.len(), gt.len()])?;
    Ok(dual_loss_log2(&logs(pred, "predicted")?, &logs(pred_swapped, "predicted")?, &logs(gt, "ground-truth")?))
}

/// Batch mean of `(log2 pred + log2 pred_swapped)^2`.
pub fn consistent_loss(pred: &[f64], pred_swapped: &[f64]) -> Result<f64> {
    check_lengths(&[pred.len(), pred_swapped.len()])?;
    Ok(consistent_loss_log2(&logs(pred, "predicted")?, &logs(pred_swapped, "predicted")?))
}

pub fn total_loss(dual: f64, consistent: f64, w: &LossWeights) -> f64 {
    w.dual * dual + w.consistent * consistent
}

/// [`dual_loss`] on `log2` values.
pub fn dual_loss_log2(r: &[f64], r_swapped: &[f64], g: &[f64]) -> f64 {
    let n = r.len() as f64;
    r.iter()
        .zip(r_swapped)
        .zip(g)
        .map(|((&a, &b), &t)| (a - t).powi(2) + (b + t).powi(2))
        .sum::<f64>()
        / (2.0 * n)
}

/// [`consistent_loss`] on `log2` values.
pub fn consistent_loss_log2(r: &[f64], r_swapped: &[f64]) -> f64 {
    let n = r.len() as f64;
    r.iter().zip(r_swapped).map(|(&a, &b)| (a + b).powi(2)).sum::<f64>() / n
}

/// Loss values of one batch and their gradients with respect to each raw
/// prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub dual: f64,
    pub consistent: f64,
    pub total: f64,
    pub d_r: Vec<f64>,
    pub d_r_swapped: Vec<f64>,
}

/// Losses of a batch of `log2` predictions `r` for `(I1, I2)` and `r_swapped`
/// for `(I2, I1)` against `log2` ground truth `g`.
pub fn batch_loss(r: &[f64], r_swapped: &[f64], g: &[f64], w: &LossWeights) -> BatchLoss {
    let n = r.len() as f64;
    let dual = dual_loss_log2(r, r_swapped, g);
    let consistent = consistent_loss_log2(r, r_swapped);
    let mut d_r = Vec::with_capacity(r.len());
    let mut d_r_swapped = Vec::with_capacity(r.len());
    for ((&a, &b), &t) in r.iter().zip(r_swapped).zip(g) {
        let c = 2.0 * w.consistent * (a + b);
        d_r.push((w.dual * (a - t) + c) / n);
        d_r_swapped.push((w.dual * (b + t) + c) / n);
    }
    BatchLoss {
        dual,
        consistent,
        total: total_loss(dual, consistent, w),
        d_r,
        d_r_swapped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dual_examples() {
        assert_eq!(dual_loss(&[4.0], &[0.25], &[4.0]).unwrap(), 0.0);
        let s = 3.0;
        assert!(dual_loss(&[s], &[1.0 / s], &[s]).unwrap() < 1e-24);
        assert_eq!(dual_loss(&[8.0], &[0.25], &[4.0]).unwrap(), 0.5);
        assert_eq!(dual_loss(&[8.0], &[0.5], &[4.0]).unwrap(), 1.0);
    }

    #[test]
    fn consistent_examples() {
        assert_eq!(consistent_loss(&[4.0], &[1.0]).unwrap(), 4.0);
        assert_eq!(consistent_loss(&[2.0], &[2.0]).unwrap(), 4.0);
        assert_eq!(consistent_loss(&[5.0], &[0.2]).unwrap().abs() < 1e-24, true);
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        assert_eq!(total_loss(0.0, 0.0, &w), 0.0);
        assert_eq!(total_loss(0.5, 4.0, &w), 4.5);
        let w = LossWeights {
            dual: 2.0,
            consistent: 0.0,
        };
        assert_eq!(total_loss(0.5, 123.0, &w), 1.0);
    }

    #[test]
    fn rejects_nonpositive_and_ragged_inputs() {
        assert!(dual_loss(&[0.0], &[1.0], &[1.0]).is_err());
        assert!(dual_loss(&[1.0], &[-1.0], &[1.0]).is_err());
        assert!(dual_loss(&[1.0], &[1.0], &[f64::NAN]).is_err());
        assert!(consistent_loss(&[1.0, 2.0], &[1.0]).is_err());
        assert!(consistent_loss(&[], &[]).is_err());
        assert!(LossWeights { dual: 0.0, consistent: 0.0 }.validate().is_err());
        assert!(LossWeights { dual: -1.0, consistent: 2.0 }.validate().is_err());
    }

    #[test]
    fn batch_gradients_match_finite_differences() {
        let r = [0.3, -1.2, 2.5];
        let q = [-0.1, 0.9, -2.0];
        let g = [0.5, -1.0, 3.0];
        let w = LossWeights {
            dual: 0.7,
            consistent: 1.3,
        };
        let b = batch_loss(&r, &q, &g, &w);
        let h = 1e-6;
        for i in 0..3 {
            let mut rp = r;
            rp[i] += h;
            let mut rm = r;
            rm[i] -= h;
            let fd = (batch_loss(&rp, &q, &g, &w).total - batch_loss(&rm, &q, &g, &w).total) / (2.0 * h);
            assert!((fd - b.d_r[i]).abs() <= 1e-6 * fd.abs().max(1.0));
            let mut qp = q;
            qp[i] += h;
            let mut qm = q;
            qm[i] -= h;
            let fd = (batch_loss(&r, &qp, &g, &w).total - batch_loss(&r, &qm, &g, &w).total) / (2.0 * h);
            assert!((fd - b.d_r_swapped[i]).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }

    fn ratio() -> impl Strategy<Value = f64> {
        (-9.0f64..9.0).prop_map(f64::exp2)
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative(a in ratio(), b in ratio(), s in ratio()) {
            prop_assert!(dual_loss(&[a], &[b], &[s]).unwrap() >= 0.0);
            prop_assert!(consistent_loss(&[a], &[b]).unwrap() >= 0.0);
        }

        #[test]
        fn dual_relabeling_symmetry(a in -9.0f64..9.0, b in -9.0f64..9.0, s in -9.0f64..9.0) {
            prop_assert_eq!(dual_loss_log2(&[a], &[b], &[s]), dual_loss_log2(&[b], &[a], &[-s]));
        }

        #[test]
        fn consistent_invariances(a in -9.0f64..9.0, b in -9.0f64..9.0) {
            let base = consistent_loss_log2(&[a], &[b]);
            prop_assert_eq!(base, consistent_loss_log2(&[b], &[a]));
            prop_assert_eq!(base, consistent_loss_log2(&[-b], &[-a]));
        }
    }
}

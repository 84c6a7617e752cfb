//! Scale-ratio error, PCK, mAA and accuracy binned by scale difference.

use scalenet_core::error::{Error, Result};
use scalenet_core::ratio::ScaleRatio;
use serde::{Deserialize, Serialize};

pub const DEFAULT_PCK_THRESHOLD: f64 = 3.0;
pub const DEFAULT_MAA_THRESHOLD: f64 = 10.0;
pub const DEFAULT_ACCURACY_THRESHOLD: f64 = 20.0;

/// Mean of `|log2 gt - log2 pred|`.
pub fn avg_l1_discrepancy(gt: &[ScaleRatio], pred: &[ScaleRatio]) -> Result<f64> {
    if gt.is_empty() || gt.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "need equal nonzero lengths, got {} ground truths and {} predictions",
            gt.len(),
            pred.len()
        )));
    }
    Ok(gt.iter().zip(pred).map(|(g, p)| (g.log2() - p.log2()).abs()).sum::<f64>() / gt.len() as f64)
}

/// Error of always predicting a ratio of one: the mean `|log2 gt|`.
pub fn constant_predictor_error(gt: &[ScaleRatio]) -> Result<f64> {
    avg_l1_discrepancy(gt, &vec![ScaleRatio::ONE; gt.len()])
}

/// Fraction of `n_keypoints` whose match lands within `px_threshold` of the
/// ground-truth position. `warp` maps image-1 points to image 2 and returns
/// `None` where no correspondence exists.
pub fn pck(
    matches: &[([f64; 2], [f64; 2])],
    warp: impl Fn([f64; 2]) -> Option<[f64; 2]>,
    n_keypoints: usize,
    px_threshold: f64,
) -> Result<f64> {
    if n_keypoints == 0 {
        return Err(Error::InvalidArgument("PCK needs at least one keypoint".into()));
    }
    let correct = matches
        .iter()
        .filter(|(a, b)| {
            warp(*a).is_some_and(|w| ((w[0] - b[0]).powi(2) + (w[1] - b[1]).powi(2)).sqrt() <= px_threshold)
        })
        .count();
    Ok((correct as f64 / n_keypoints as f64).min(1.0))
}

/// Thresholds `k * max / ceil(max)` for `k = 1..=ceil(max)`: whole degrees
/// when `max` is an integer.
pub fn maa_thresholds(max_threshold: f64) -> Result<Vec<f64>> {
    if !(max_threshold.is_finite() && max_threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("mAA threshold {max_threshold} must be positive")));
    }
    let steps = max_threshold.ceil() as usize;
    Ok((1..=steps).map(|k| k as f64 * max_threshold / steps as f64).collect())
}

/// Mean over [`maa_thresholds`] of the fraction of errors strictly below
/// each threshold.
pub fn maa(errors: &[f64], max_threshold: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("mAA of an empty error list".into()));
    }
    let th = maa_thresholds(max_threshold)?;
    let n = errors.len() as f64;
    Ok(th
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e < t).count() as f64 / n)
        .sum::<f64>()
        / th.len() as f64)
}

/// Pose accuracy of pairs whose ratio satisfies `floor(|log2 s|) = bin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleBin {
    pub bin: u32,
    pub count: usize,
    pub accurate: usize,
    pub accuracy: f64,
}

pub fn scale_bin(s: ScaleRatio) -> u32 {
    s.log2().abs().floor() as u32
}

/// Per-bin fraction of pose errors below `threshold`, for occupied bins in
/// increasing order.
pub fn accuracy_vs_scale_curve(samples: &[(f64, ScaleRatio)], threshold: f64) -> Vec<ScaleBin> {
    let mut bins: std::collections::BTreeMap<u32, (usize, usize)> = Default::default();
    for &(err, s) in samples {
        let e = bins.entry(scale_bin(s)).or_default();
        e.0 += 1;
        if err < threshold {
            e.1 += 1;
        }
    }
    bins.into_iter()
        .map(|(bin, (count, accurate))| ScaleBin {
            bin,
            count,
            accurate,
            accuracy: accurate as f64 / count as f64,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(v: f64) -> ScaleRatio {
        ScaleRatio::from_value(v).unwrap()
    }

    #[test]
    fn discrepancy_examples() {
        assert_eq!(avg_l1_discrepancy(&[r(3.0)], &[r(3.0)]).unwrap(), 0.0);
        assert_eq!(avg_l1_discrepancy(&[r(4.0)], &[r(2.0)]).unwrap(), 1.0);
        assert_eq!(avg_l1_discrepancy(&[r(8.0), r(0.125)], &[r(1.0), r(1.0)]).unwrap(), 3.0);
        assert!(avg_l1_discrepancy(&[r(1.0)], &[]).is_err());
        assert_eq!(constant_predictor_error(&[r(2.0), r(0.25)]).unwrap(), 1.5);
    }

    #[test]
    fn pck_examples() {
        let id = |p: [f64; 2]| Some(p);
        let m = vec![([1.0, 1.0], [1.0, 1.0]), ([5.0, 2.0], [5.0, 2.0])];
        assert_eq!(pck(&m, id, 4, 3.0).unwrap(), 0.5);
        assert_eq!(pck(&[], id, 4, 3.0).unwrap(), 0.0);
        assert!(pck(&m, id, 0, 3.0).is_err());
        // x2 = 2 x1 + (10, -4)
        let h = |p: [f64; 2]| Some([2.0 * p[0] + 10.0, 2.0 * p[1] - 4.0]);
        let m = vec![
            ([0.0, 0.0], [10.0, -4.0]),
            ([1.0, 2.0], [13.0, 1.0]),
            ([3.0, 3.0], [16.0, 0.0]),
            ([5.0, 5.0], [30.0, 6.0]),
            ([2.0, 2.0], [0.0, 0.0]),
        ];
        assert_eq!(pck(&m, h, 10, 3.0).unwrap(), 0.3);
    }

    #[test]
    fn maa_examples() {
        assert_eq!(maa(&[0.0, 0.0], 10.0).unwrap(), 1.0);
        assert_eq!(maa(&[10.0, 45.0], 10.0).unwrap(), 0.0);
        assert_eq!(maa(&[0.5], 10.0).unwrap(), 1.0);
        assert_eq!(maa(&[5.5], 10.0).unwrap(), 0.5);
        assert!(maa(&[], 10.0).is_err());
        assert_eq!(maa_thresholds(10.0).unwrap(), (1..=10).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn binning_examples() {
        assert_eq!(scale_bin(r(5.0)), 2);
        assert_eq!(scale_bin(r(0.2)), 2);
        assert_eq!(scale_bin(r(1.0)), 0);
        let curve = accuracy_vs_scale_curve(&[(0.0, r(5.0)), (0.0, r(0.2)), (0.0, r(1.5)), (0.0, r(300.0))], 20.0);
        assert_eq!(curve.iter().map(|b| b.bin).collect::<Vec<_>>(), vec![0, 2, 8]);
        assert!(curve.iter().all(|b| b.accuracy == 1.0));
        let curve = accuracy_vs_scale_curve(&[(25.0, r(5.0)), (3.0, r(6.0))], 20.0);
        assert_eq!(curve[0].accuracy, 0.5);
    }

    proptest! {
        #[test]
        fn discrepancy_symmetric_under_inversion(pairs in prop::collection::vec((-9.0f64..9.0, -9.0f64..9.0), 1..20)) {
            let gt: Vec<_> = pairs.iter().map(|p| ScaleRatio::from_log2(p.0).unwrap()).collect();
            let pred: Vec<_> = pairs.iter().map(|p| ScaleRatio::from_log2(p.1).unwrap()).collect();
            let inv = |v: &[ScaleRatio]| v.iter().map(|s| s.inverse()).collect::<Vec<_>>();
            prop_assert_eq!(avg_l1_discrepancy(&gt, &pred).unwrap(), avg_l1_discrepancy(&inv(&gt), &inv(&pred)).unwrap());
        }

        #[test]
        fn maa_monotone_in_added_errors(errs in prop::collection::vec(0.0f64..30.0, 1..20), big in 10.0f64..180.0) {
            let base = maa(&errs, 10.0).unwrap();
            let mut with_zero = errs.clone();
            with_zero.push(0.0);
            prop_assert!(maa(&with_zero, 10.0).unwrap() >= base);
            let mut with_big = errs.clone();
            with_big.push(big);
            prop_assert!(maa(&with_big, 10.0).unwrap() <= base);
        }

        #[test]
        fn pck_in_unit_interval(offsets in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 0..30), extra in 0usize..10) {
            let m: Vec<_> = offsets.iter().map(|o| ([0.0, 0.0], [o.0, o.1])).collect();
            let n = m.len() + extra + 1;
            let v = pck(&m, Some, n, 3.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

//! Evaluation metrics and relative pose estimation.

pub mod essential;
pub mod metrics;
pub mod pose;

pub use metrics::{
    accuracy_vs_scale_curve, avg_l1_discrepancy, constant_predictor_error, maa, maa_thresholds, pck, scale_bin,
    ScaleBin, DEFAULT_ACCURACY_THRESHOLD, DEFAULT_MAA_THRESHOLD, DEFAULT_PCK_THRESHOLD,
};
pub use pose::{
    estimate_relative_pose, final_pose_error, fpe_or_failure, PoseError, PoseEstimate, PoseFailure, RansacConfig,
    RelativePose, FAILURE_ERROR_DEG,
};

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> Matrix3<f64> {
        Matrix3::new(600.0, 0.0, 320.0, 0.0, 600.0, 240.0, 0.0, 0.0, 1.0)
    }

    fn synthetic(seed: u64, n: usize, outliers: usize) -> (RelativePose, Vec<[f64; 2]>, Vec<[f64; 2]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rot = Rotation3::from_euler_angles(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3))
            .into_inner();
        let t = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)).normalize();
        let k = camera();
        let project = |x: Vector3<f64>| {
            let p = k * x;
            [p.x / p.z, p.y / p.z]
        };
        let (mut a, mut b) = (Vec::new(), Vec::new());
        while a.len() < n {
            let x = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-2.0..2.0), rng.gen_range(5.0..12.0));
            let y = rot * x + t;
            if y.z > 0.5 {
                a.push(project(x));
                b.push(project(y));
            }
        }
        for _ in 0..outliers {
            a.push([rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0)]);
            b.push([rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0)]);
        }
        (
            RelativePose {
                rotation: rot,
                translation: t,
            },
            a,
            b,
        )
    }

    #[test]
    fn noiseless_pose_is_recovered() {
        for seed in 0..5 {
            let (gt, a, b) = synthetic(seed, 60, 0);
            let est = estimate_relative_pose(&a, &b, &camera(), &camera(), &RansacConfig::default()).unwrap();
            let err = final_pose_error(&est.pose, &gt).unwrap();
            assert!(err.fpe < 0.1, "seed {seed}: {err:?}");
        }
    }

    #[test]
    fn half_outliers_are_tolerated() {
        for seed in 10..13 {
            let (gt, a, b) = synthetic(seed, 60, 60);
            let est = estimate_relative_pose(&a, &b, &camera(), &camera(), &RansacConfig::default()).unwrap();
            let err = final_pose_error(&est.pose, &gt).unwrap();
            assert!(err.fpe < 1.0, "seed {seed}: {err:?}");
            assert!(est.inliers[..60].iter().all(|&b| b));
        }
    }
}

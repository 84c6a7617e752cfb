use nalgebra::{Matrix3, Rotation3, Vector3};
use scalenet_core::ScaleRatio;
use scalenet_eval::{
    accuracy_vs_scale_curve, avg_l1_discrepancy, constant_predictor_error, estimate_relative_pose, final_pose_error,
    fpe_or_failure, maa, PoseFailure, RansacConfig, RelativePose, FAILURE_ERROR_DEG,
};

fn camera() -> Matrix3<f64> {
    Matrix3::new(500.0, 0.0, 320.0, 0.0, 500.0, 240.0, 0.0, 0.0, 1.0)
}

/// Deterministic scene of `n` points seen by two cameras, with pixel noise
/// of amplitude `noise`.
fn scene(n: usize, noise: f64) -> (RelativePose, Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let rotation = Rotation3::from_euler_angles(0.05, -0.12, 0.03).into_inner();
    let translation = Vector3::new(0.9, -0.2, 0.3).normalize();
    let k = camera();
    let project = |x: Vector3<f64>| {
        let p = k * x;
        [p.x / p.z, p.y / p.z]
    };
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..n {
        let f = i as f64;
        let x = Vector3::new((f * 0.61).sin() * 3.0, (f * 0.37).cos() * 2.0, 7.0 + (f * 0.23).sin() * 3.0);
        let (p, q) = (project(x), project(rotation * x + translation));
        let e = noise * (f * 1.7).sin();
        a.push([p[0] + e, p[1] - e]);
        b.push([q[0] - e, q[1] + e]);
    }
    (RelativePose { rotation, translation }, a, b)
}

#[test]
fn pose_is_recovered_under_subpixel_noise() {
    let (gt, a, b) = scene(150, 0.3);
    let est = estimate_relative_pose(&a, &b, &camera(), &camera(), &RansacConfig::default()).unwrap();
    let err = final_pose_error(&est.pose, &gt).unwrap();
    assert!(err.fpe < 1.0, "{err:?}");
    assert!(est.inliers.iter().filter(|&&x| x).count() > 140);
}

#[test]
fn failures_map_to_the_worst_error() {
    let (gt, a, b) = scene(4, 0.0);
    let est = estimate_relative_pose(&a, &b, &camera(), &camera(), &RansacConfig::default());
    assert_eq!(est, Err(PoseFailure::TooFewMatches(4)));
    assert_eq!(fpe_or_failure(&est, &gt).unwrap(), FAILURE_ERROR_DEG);
    assert_eq!(maa(&[FAILURE_ERROR_DEG, 0.0], 10.0).unwrap(), 0.5);
}

#[test]
fn ratio_metrics_and_curve() {
    let r = |v: f64| ScaleRatio::from_value(v).unwrap();
    let gt = [r(8.0), r(0.125), r(2.0)];
    assert_eq!(avg_l1_discrepancy(&gt, &gt).unwrap(), 0.0);
    assert_eq!(constant_predictor_error(&gt).unwrap(), 7.0 / 3.0);
    let curve = accuracy_vs_scale_curve(&[(1.0, r(8.0)), (30.0, r(0.125)), (5.0, r(2.0))], 20.0);
    assert_eq!(curve.len(), 2);
    assert_eq!((curve[0].bin, curve[0].accuracy), (1, 1.0));
    assert_eq!((curve[1].bin, curve[1].count, curve[1].accuracy), (3, 2, 0.5));
}

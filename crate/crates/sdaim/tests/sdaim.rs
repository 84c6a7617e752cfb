use scalenet_datagen::{generate_pair, GeneratorConfig, ProceduralCorpus, SyntheticPair};
use scalenet_sdaim::{
    match_baseline, match_with_sdaim, FixedRatio, Keypoint, MatchSet, MatcherAdapter, ResizeOptions, SiftAdapter,
};
use scalenet_core::{Image, ScaleRatio};
use std::collections::HashSet;

fn pair(m: f64, index: usize, resolution: usize) -> SyntheticPair {
    let content = ProceduralCorpus::blobs(16, 320, 11);
    let bg = ProceduralCorpus::clouds(16, 320, 12);
    let cfg = GeneratorConfig {
        resolution,
        m_range: (m, m),
        seed: 5,
        ..Default::default()
    };
    generate_pair(&content, &bg, &cfg, index).unwrap()
}

fn same_matches(a: &MatchSet, b: &MatchSet) -> bool {
    a.keypoints1 == b.keypoints1 && a.keypoints2 == b.keypoints2 && a.pairs == b.pairs && a.resize_factors == b.resize_factors
}

fn positions(kps: &[Keypoint]) -> Vec<(u64, u64)> {
    kps.iter().map(|k| (k.x.to_bits(), k.y.to_bits())).collect()
}

#[test]
fn unit_estimator_equals_baseline() {
    let p = pair(2.0, 0, 240);
    let adapter = SiftAdapter::default();
    let base = match_baseline(&p.image1, &p.image2, &adapter).unwrap();
    let unit = match_with_sdaim(&p.image1, &p.image2, &FixedRatio::unit(), &adapter, &ResizeOptions::default()).unwrap();
    assert!(same_matches(&base, &unit));
    assert_eq!(base.resize_factors, (1.0, 1.0));
    assert_eq!(unit.estimator_id, "unit");
}

#[test]
fn swapped_call_gives_swapped_matches() {
    let p = pair(2.0, 0, 240);
    let adapter = SiftAdapter::default();
    let opts = ResizeOptions::default();
    let ab = match_with_sdaim(&p.image1, &p.image2, &FixedRatio::ground_truth(p.gt_ratio), &adapter, &opts).unwrap();
    let ba = match_with_sdaim(&p.image2, &p.image1, &FixedRatio::ground_truth(p.gt_ratio.inverse()), &adapter, &opts)
        .unwrap();
    assert!(!ab.is_empty());
    assert_eq!(positions(&ab.keypoints1), positions(&ba.keypoints2));
    assert_eq!(positions(&ab.keypoints2), positions(&ba.keypoints1));
    let fwd: HashSet<_> = ab.pairs.iter().map(|m| (m.index1, m.index2)).collect();
    let bwd: HashSet<_> = ba.pairs.iter().map(|m| (m.index2, m.index1)).collect();
    assert_eq!(fwd, bwd);
}

#[test]
fn indices_are_unique_per_side_and_in_bounds() {
    let p = pair(1.0, 1, 240);
    let set = match_baseline(&p.image1, &p.image2, &SiftAdapter::default()).unwrap();
    let a: HashSet<_> = set.pairs.iter().map(|m| m.index1).collect();
    let b: HashSet<_> = set.pairs.iter().map(|m| m.index2).collect();
    assert_eq!(a.len(), set.len());
    assert_eq!(b.len(), set.len());
    for k in &set.keypoints1 {
        assert!(k.x >= 0.0 && k.x <= 240.0 && k.y >= 0.0 && k.y <= 240.0);
    }
}

#[test]
fn identical_images_match_themselves() {
    let p = pair(0.0, 0, 240);
    let set = match_baseline(&p.image1, &p.image1, &SiftAdapter::default()).unwrap();
    let n = set.keypoints1.len();
    assert!(n > 50);
    let selfmatches = set.pairs.iter().filter(|m| m.index1 == m.index2).count();
    assert_eq!(selfmatches, set.len());
    // Only keypoints sharing a location with a second orientation can be
    // ambiguous.
    assert!(set.len() as f64 >= 0.8 * n as f64, "{} of {n}", set.len());
}

#[test]
fn constant_image_gives_empty_set_with_diagnostic() {
    let flat = Image::constant(120, 120, [0.3; 3]);
    let p = pair(0.0, 0, 120);
    let set = match_baseline(&flat, &p.image2, &SiftAdapter::default()).unwrap();
    assert!(set.is_empty());
    assert!(set.diagnostic.unwrap().contains("no keypoints"));
}

#[test]
fn ground_truth_resize_recovers_matches_at_eight_times() {
    let adapter = SiftAdapter::default();
    let (mut base, mut sdaim) = (0, 0);
    for i in 0..2 {
        let p = pair(3.0, i, 480);
        assert_eq!(p.gt_ratio, ScaleRatio::from_value(8.0).unwrap());
        let err = |a, b| p.placement.match_error(a, b);
        base += match_baseline(&p.image1, &p.image2, &adapter).unwrap().count_inliers(err, 3.0);
        let gt = FixedRatio::ground_truth(p.gt_ratio);
        sdaim += match_with_sdaim(&p.image1, &p.image2, &gt, &adapter, &ResizeOptions::default())
            .unwrap()
            .count_inliers(err, 3.0);
    }
    assert!(sdaim >= 2 * base.max(1), "sdaim {sdaim} vs baseline {base}");
}

#[test]
fn adapter_identity_strings() {
    let a = SiftAdapter::default();
    assert_eq!(a.ratio_test_threshold(), 0.8);
    assert_eq!(a.sift.max_keypoints, 2000);
    assert!(a.extractor_id().contains("2000"));
}

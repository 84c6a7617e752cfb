use scalenet_core::image::{scaled_dim, Rounding};
use scalenet_core::ratio::LOG2_CLAMP;
use scalenet_core::{Image, ScaleRatio};

fn gradient(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |y, x| [x as f32 / w as f32, y as f32 / h as f32, 0.25])
}

#[test]
fn png_round_trip_is_exact_to_eight_bits() {
    let dir = tempfile::tempdir().unwrap();
    let img = gradient(40, 56);
    let path = dir.path().join("g.png");
    img.save(&path).unwrap();
    let back = Image::load(&path).unwrap();
    assert_eq!((back.height(), back.width()), (40, 56));
    for (a, b) in img.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
    }
    assert!(Image::load(dir.path().join("missing.png")).is_err());
}

#[test]
fn letterbox_keeps_aspect_and_reports_factor() {
    let (boxed, factor) = gradient(50, 100).letterbox(64).unwrap();
    assert_eq!((boxed.height(), boxed.width()), (64, 64));
    assert_eq!(factor, 0.64);
    // Rows below the 32 resized ones are padding.
    assert_eq!(boxed.get(0, 40, 10), 0.0);
    assert!(boxed.get(0, 10, 60) > 0.0);
}

#[test]
fn resize_preserves_constant_images() {
    let img = Image::constant(37, 53, [0.2, 0.4, 0.6]);
    for (h, w) in [(16, 16), (74, 106), (37, 20)] {
        let r = img.resize(h, w).unwrap();
        assert!(r.data().chunks(h * w).zip([0.2f32, 0.4, 0.6]).all(|(c, v)| c.iter().all(|p| (p - v).abs() < 1e-5)));
    }
    assert_eq!(scaled_dim(5, 0.5, Rounding::HalfUp), 3);
}

#[test]
fn ratio_inverse_and_clamp() {
    for v in [0.01, 0.5, 1.0, 3.0, 700.0] {
        let r = ScaleRatio::from_value(v).unwrap();
        assert_eq!(r.inverse().log2(), -r.log2());
        assert_eq!(r.inverse().inverse(), r);
    }
    assert_eq!(ScaleRatio::from_log2_clamped(12.0).unwrap().log2(), LOG2_CLAMP);
    assert_eq!(ScaleRatio::from_log2_clamped(-12.0).unwrap().log2(), -LOG2_CLAMP);
    assert!(ScaleRatio::from_value(0.0).is_err());
    assert!(ScaleRatio::from_value(f64::NAN).is_err());
    let json = serde_json::to_string(&ScaleRatio::from_value(4.0).unwrap()).unwrap();
    assert_eq!(json, "4.0");
    assert!(serde_json::from_str::<ScaleRatio>("-1.0").is_err());
}

use proptest::prelude::*;
use uvmakeup_core::colorxfer::histogram_match;
use uvmakeup_core::fusion::{blend, interpolate};
use uvmakeup_core::metrics::{miou, ms_ssim};
use uvmakeup_core::patternseg::dice_coefficient;
use uvmakeup_core::{Image, SoftMask, TextureMap};

const W: usize = 12;
const H: usize = 10;

fn texture(w: usize, h: usize) -> impl Strategy<Value = TextureMap> {
    prop::collection::vec(0.0f32..=1.0, w * h * 3)
        .prop_map(move |d| TextureMap::from_image(Image::from_raw(w, h, d).unwrap()))
}

fn mask(w: usize, h: usize) -> impl Strategy<Value = SoftMask> {
    prop::collection::vec(0.0f32..=1.0, w * h).prop_map(move |d| SoftMask::from_raw(w, h, d).unwrap())
}

fn image(w: usize, h: usize) -> impl Strategy<Value = Image> {
    texture(w, h).prop_map(TextureMap::into_image)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn histogram_matching_is_idempotent_and_local(src in texture(W, H), r in texture(W, H), m in mask(W, H)) {
        let once = histogram_match(&src, &r, &m).unwrap();
        let twice = histogram_match(&once.texture, &r, &m).unwrap();
        prop_assert_eq!(&once.texture, &twice.texture);
        let inside = m.binarize(0.5);
        for ((a, b), ok) in src.data().chunks_exact(3).zip(once.texture.data().chunks_exact(3)).zip(inside) {
            if !ok {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn matched_values_stay_within_the_reference_range(src in texture(W, H), r in texture(W, H), m in mask(W, H)) {
        let out = histogram_match(&src, &r, &m).unwrap();
        prop_assume!(!out.empty_region);
        let inside = m.binarize(0.5);
        for c in 0..3 {
            let refs = r.data().chunks_exact(3).zip(&inside).filter(|(_, &ok)| ok).map(|(p, _)| (p[c] * 255.0).round());
            let (lo, hi) = refs.fold((f32::MAX, f32::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
            for (p, _) in out.texture.data().chunks_exact(3).zip(&inside).filter(|(_, &ok)| ok) {
                let v = (p[c] * 255.0).round();
                prop_assert!(v >= lo && v <= hi, "{v} outside [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn miou_is_symmetric_and_bounded(a in mask(W, H), b in mask(W, H)) {
        let ab = miou(&a, &b, 0.5).unwrap();
        let ba = miou(&b, &a, 0.5).unwrap();
        prop_assert_eq!(ab.miou, ba.miou);
        for v in [ab.miou, ab.foreground, ab.background] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(miou(&a, &a, 0.5).unwrap().miou, 1.0);
    }

    #[test]
    fn dice_is_symmetric_and_bounded(a in mask(W, H), b in mask(W, H)) {
        let d = dice_coefficient(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - dice_coefficient(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn blends_stay_between_their_inputs(a in texture(W, H), b in texture(W, H), m in mask(W, H), alpha in 0.0f32..=1.0) {
        let mixed = blend(&a, &b, &m).unwrap();
        let lerped = interpolate(&a, &b, alpha).unwrap();
        for out in [&mixed, &lerped] {
            for ((&x, &y), &o) in a.data().iter().zip(b.data()).zip(out.data()) {
                prop_assert!(o >= x.min(y) - 1e-6 && o <= x.max(y) + 1e-6);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ms_ssim_is_reflexive_and_symmetric(a in image(48, 48), b in image(48, 48)) {
        prop_assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let ab = ms_ssim(&a, &b).unwrap();
        prop_assert!((ab - ms_ssim(&b, &a).unwrap()).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab));
    }
}

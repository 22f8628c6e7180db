use std::sync::Arc;

use uvmakeup_core::colorxfer::{ColorNet, ColorNetConfig, IdentityColor};
use uvmakeup_core::error::CheckpointError;
use uvmakeup_core::fusion::{PatternSource, RegionSelection, TransferRequest};
use uvmakeup_core::metrics::psnr_masked;
use uvmakeup_core::patternseg::{PatternSegmenter, SegNet, SegNetConfig};
use uvmakeup_core::pipeline::{ModelBundle, Pipeline, COLOR_CHECKPOINT, PATTERN_CHECKPOINT};
use uvmakeup_core::synthdata::procedural_faces;
use uvmakeup_core::uvgeom::{render, FixedPoseProvider, HeadPose, PrecomputedProvider, SilhouetteProvider};
use uvmakeup_core::{Error, FaceRole, Image, PatternMask, SoftMask, TextureMap, UvLayout};

struct NoPattern;

impl PatternSegmenter for NoPattern {
    fn segment(&self, tex: &TextureMap, _valid: &[bool]) -> uvmakeup_core::Result<PatternMask> {
        Ok(SoftMask::zeros(tex.width(), tex.height()))
    }
}

/// Two procedural faces with their exact geometry registered.
fn faces() -> (Arc<PrecomputedProvider>, Image, Image) {
    let layout = UvLayout::default();
    let f = procedural_faces(3, 11, &layout).unwrap();
    let mut p = PrecomputedProvider::new(layout);
    for face in &f {
        p.register(&face.image, face.position.clone().unwrap()).unwrap();
    }
    (Arc::new(p), f[0].image.clone(), f[1].image.clone())
}

fn models() -> (ColorNet, SegNet) {
    (ColorNet::new(ColorNetConfig::default(), 3).unwrap(), SegNet::new(SegNetConfig::default(), 4).unwrap())
}

#[test]
fn branches_off_is_identity_up_to_resampling() {
    let (provider, src, reference) = faces();
    let pipe = Pipeline::new(provider.clone());
    let req = TransferRequest { use_color: false, use_pattern: false, ..Default::default() };
    let res = pipe.transfer(&src, &reference, None, &req).unwrap();
    let pos = uvmakeup_core::GeometryProvider::position_map(provider.as_ref(), &src).unwrap();
    let rendered = render(&pos, &res.intermediates.source_texture, &src).unwrap();
    assert_eq!(rendered.image, res.output);
    let psnr = psnr_masked(&src, &res.output, &rendered.interior()).unwrap();
    assert!(psnr >= 30.0, "psnr {psnr}");
}

#[test]
fn empty_pattern_equals_color_only() {
    let (provider, src, reference) = faces();
    let (color, _) = models();
    let pipe = Pipeline::new(provider).with_color(Arc::new(color)).with_pattern(Arc::new(NoPattern));
    let both = pipe.transfer(&src, &reference, None, &TransferRequest::default()).unwrap();
    let color_only =
        pipe.transfer(&src, &reference, None, &TransferRequest { use_pattern: false, ..Default::default() }).unwrap();
    assert!(both.pattern_empty);
    assert!(!color_only.pattern_empty);
    assert_eq!(both.intermediates.output_texture, color_only.intermediates.output_texture);
    assert_eq!(both.output, color_only.output);
}

#[test]
fn transfer_is_deterministic_and_recomposable() {
    let (provider, src, reference) = faces();
    let (color, seg) = models();
    let pipe = Pipeline::new(provider).with_color(Arc::new(color)).with_pattern(Arc::new(seg));
    let req =
        TransferRequest { alpha: 0.75, regions: RegionSelection::parse("lips,skin").unwrap(), ..Default::default() };
    let a = pipe.transfer(&src, &reference, None, &req).unwrap();
    let b = pipe.transfer(&src, &reference, None, &req).unwrap();
    assert_eq!(a.output, b.output);
    assert_eq!(a.intermediates, b.intermediates);
    let layout = UvLayout::default();
    assert_eq!(a.intermediates.recompose(&req, layout.region_masks()).unwrap(), a.intermediates.output_texture);
}

#[test]
fn disabling_a_branch_leaves_the_other_untouched() {
    let (provider, src, reference) = faces();
    let (color, seg) = models();
    let pipe = Pipeline::new(provider).with_color(Arc::new(color)).with_pattern(Arc::new(seg));
    let full = pipe.transfer(&src, &reference, None, &TransferRequest::default()).unwrap();
    let no_pattern =
        pipe.transfer(&src, &reference, None, &TransferRequest { use_pattern: false, ..Default::default() }).unwrap();
    let no_color =
        pipe.transfer(&src, &reference, None, &TransferRequest { use_color: false, ..Default::default() }).unwrap();
    assert_eq!(full.intermediates.color_textures, no_pattern.intermediates.color_textures);
    assert_eq!(full.intermediates.pattern_mask, no_color.intermediates.pattern_mask);
}

#[test]
fn two_references_and_alpha_endpoints() {
    let (provider, src, r1) = faces();
    let r2 = procedural_faces(3, 11, &UvLayout::default()).unwrap()[2].image.clone();
    let pipe = Pipeline::new(provider).with_color(Arc::new(IdentityColor)).with_pattern(Arc::new(NoPattern));
    let at = |alpha: f32| {
        let req = TransferRequest { alpha, use_pattern: false, ..Default::default() };
        pipe.transfer(&src, &r1, Some(&r2), &req).unwrap().intermediates
    };
    let (one, zero) = (at(1.0), at(0.0));
    assert_eq!(one.output_texture, one.color_textures[0]);
    assert_eq!(zero.output_texture, zero.color_textures[1]);
    let second = TransferRequest { pattern_source: PatternSource::Second, ..Default::default() };
    assert!(pipe.transfer(&src, &r1, None, &second).is_err());
    assert!(pipe.transfer(&src, &r1, Some(&r2), &second).is_ok());
}

#[test]
fn missing_models_and_geometry_failures_are_typed() {
    let (provider, src, reference) = faces();
    let pipe = Pipeline::new(provider);
    let err = pipe.transfer(&src, &reference, None, &TransferRequest::default()).unwrap_err();
    assert!(matches!(err, Error::ModelMissing("color")));
    let req = TransferRequest { use_color: false, ..Default::default() };
    assert!(matches!(pipe.transfer(&src, &reference, None, &req).unwrap_err(), Error::ModelMissing("pattern")));

    let silhouette = Pipeline::new(Arc::new(SilhouetteProvider::new(UvLayout::default())));
    let blank = Image::filled(256, 256, [0.5; 3]);
    let req = TransferRequest { use_color: false, use_pattern: false, ..Default::default() };
    match silhouette.transfer(&src, &blank, None, &req).unwrap_err() {
        Error::Geometry { role, .. } => assert_eq!(role, FaceRole::Reference),
        e => panic!("unexpected {e}"),
    }
    let fixed = Pipeline::new(Arc::new(FixedPoseProvider::new(UvLayout::default(), HeadPose::canonical())));
    assert!(matches!(
        fixed.transfer(&Image::new(64, 64), &reference, None, &req).unwrap_err(),
        Error::Geometry { role: FaceRole::Source, .. }
    ));
}

#[test]
fn bundle_round_trip_and_validation() {
    let (color, seg) = models();
    let dir = tempfile::tempdir().unwrap();
    let bundle = ModelBundle { color: Some(color.clone()), pattern: Some(seg.clone()) };
    bundle.save(dir.path()).unwrap();
    let back = ModelBundle::load(dir.path()).unwrap();
    let a = color.to_checkpoint(serde_json::Value::Null).unwrap().to_bytes();
    let b = back.color.unwrap().to_checkpoint(serde_json::Value::Null).unwrap().to_bytes();
    assert_eq!(a, b);
    let a = seg.to_checkpoint(serde_json::Value::Null).to_bytes();
    let b = back.pattern.unwrap().to_checkpoint(serde_json::Value::Null).to_bytes();
    assert_eq!(a, b);

    // swapped files: kind tags do not match
    let c = dir.path().join(COLOR_CHECKPOINT);
    let p = dir.path().join(PATTERN_CHECKPOINT);
    std::fs::copy(&p, &c).unwrap();
    let err = ModelBundle::load(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Checkpoint { source: CheckpointError::KindMismatch { .. }, .. }), "{err}");

    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&c, &bytes[..bytes.len() / 2]).unwrap();
    let err = ColorNet::load(&c).unwrap_err();
    assert!(matches!(err, Error::Checkpoint { source: CheckpointError::Truncated, .. }), "{err}");
}

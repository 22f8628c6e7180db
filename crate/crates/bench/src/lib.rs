//! Shared inputs for the criterion benches.

use uvmakeup_core::synthdata::{procedural_faces, procedural_styles};
use uvmakeup_core::uvgeom::extract_texture;
use uvmakeup_core::{Image, PositionMap, TextureMap, UvLayout};

/// A bare face and a made-up face at working size, with geometry and textures.
pub struct Fixture {
    pub layout: UvLayout,
    pub source: Image,
    pub source_position: PositionMap,
    pub source_texture: TextureMap,
    pub reference: Image,
    pub reference_texture: TextureMap,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let layout = UvLayout::default();
        let face = procedural_faces(1, seed, &layout).expect("procedural face").remove(0);
        let (style, _) = procedural_styles(1, seed, &layout).expect("procedural style").remove(0);
        let source_position = face.position.expect("procedural faces carry geometry");
        let reference_position = style.position.expect("procedural faces carry geometry");
        let source_texture = extract_texture(&face.image, &source_position).expect("extract source");
        let reference_texture = extract_texture(&style.image, &reference_position).expect("extract reference");
        Self { layout, source: face.image, source_position, source_texture, reference: style.image, reference_texture }
    }
}

//! Synthetic data: procedural faces and stickers, the pattern-segmentation
//! dataset, transfer triplets, and their on-disk layout.
//!
//! A dataset root holds `images/`, `textures/` (texture PNGs and UVPM position
//! maps), `masks/` and a hash-chained `manifest.jsonl`.

mod faces;
mod generate;
mod manifest;
mod stickers;

pub use faces::{
    load_faces, procedural_faces, procedural_styles, save_faces, Face, FaceTraits, MakeupStyle, MIN_FACE_SIDE,
};
pub use generate::{
    generate_synt1, generate_synt2, load_synt1, load_synt2, sample_rng, save_synt1, save_synt2, Split, Synt1Entry,
    Synt1Record, Synt1Sample, Synt2Record, Synt2Triplet, SynthConfig,
};
pub use manifest::{file_sha256, read_manifest, Manifest, ManifestWriter, MANIFEST_FILE};
pub use stickers::{
    blend_sticker, load_stickers, preview, procedural_stickers, save_stickers, solid_sticker, PlacementParams, Sticker,
    SCALE_RANGE, STICKER_INDEX,
};

//! Image ↔ UV conversion: texture extraction, rendering and the fixed UV layout.

mod extract;
mod layout;
mod position;
mod provider;
mod render;

pub use extract::{extract_texture, extract_texture_with_visibility, Extraction};
pub use layout::{Region, RegionMaskSet, UvLayout};
pub use position::{PositionMap, UVPM_MAGIC};
pub use provider::{image_key, FixedPoseProvider, GeometryProvider, HeadPose, PrecomputedProvider, SilhouetteProvider};
pub use render::{depth_buffer, render, Rendered, FEATHER_RADIUS, FEATHER_SIGMA};

/// Universal region masks of a provider's layout.
pub fn universal_region_masks(provider: &dyn GeometryProvider) -> &RegionMaskSet {
    provider.layout().region_masks()
}

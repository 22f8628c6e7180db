//! Color-and-pattern makeup transfer in UV texture space.
//!
//! Faces are registered into a fixed UV parameterization ([`uvgeom`]), makeup
//! color is swapped by a histogram-guided generator ([`colorxfer`]), makeup
//! patterns are segmented ([`patternseg`]), and the results are blended
//! ([`fusion`]) and rendered back to the image ([`pipeline`]).

pub mod checkpoint;
pub mod colorxfer;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod nn;
pub mod patternseg;
pub mod pipeline;
pub mod raster;
pub mod synthdata;
pub mod uvgeom;

pub use error::{Error, FaceRole, GeometryError, Result};
pub use raster::{Image, PatternMask, SoftMask, TextureMap, WORKING_SIZE};
pub use uvgeom::{GeometryProvider, PositionMap, Region, RegionMaskSet, UvLayout};

//! Image → UV texture sampling with self-occlusion handling.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::raster::{Image, TextureMap};
use crate::uvgeom::position::PositionMap;
use crate::uvgeom::render::depth_buffer;

/// Depth slack (pixel units) when testing a texel against the z-buffer.
const DEPTH_TOLERANCE: f32 = 1.0;

#[derive(Clone, Debug)]
pub struct Extraction {
    pub texture: TextureMap,
    /// Valid texels hidden from the camera; their color was inpainted from the
    /// nearest visible texel.
    pub occluded: Vec<bool>,
}

impl Extraction {
    pub fn occluded_count(&self) -> usize {
        self.occluded.iter().filter(|&&o| o).count()
    }
}

/// Samples the texture of `image` at the texel positions in `pos`.
pub fn extract_texture(image: &Image, pos: &PositionMap) -> Result<TextureMap> {
    Ok(extract_texture_with_visibility(image, pos)?.texture)
}

pub fn extract_texture_with_visibility(image: &Image, pos: &PositionMap) -> Result<Extraction> {
    let (iw, ih) = image.dims();
    if !pos.fits_image(iw, ih) {
        return Err(Error::GeometryMismatch(format!("position map XY range does not fit a {iw}x{ih} image")));
    }
    let (w, h) = pos.dims();
    let depth = depth_buffer(pos, iw, ih);
    let mut tex = Image::new(w, h);
    let mut visible = vec![false; w * h];
    let mut occluded = vec![false; w * h];
    for (i, (c, &ok)) in pos.coords().iter().zip(pos.valid()).enumerate() {
        if !ok {
            continue;
        }
        let tol = DEPTH_TOLERANCE + 1.5 * depth_slope(pos, i % w, i / w);
        if is_visible(c, &depth, iw, ih, tol) {
            visible[i] = true;
            tex.set(i % w, i / w, image.sample_bilinear(c[0], c[1]));
        } else {
            occluded[i] = true;
        }
    }
    if occluded.iter().any(|&o| o) {
        inpaint_nearest(&mut tex, &visible, &occluded, w, h);
    }
    Ok(Extraction { texture: TextureMap::new(tex, pos.valid())?, occluded })
}

/// A texel is visible when it is not behind the nearest surface around its
/// projection. Uncovered neighbourhoods (grazing texels) count as visible.
fn is_visible(c: &[f32; 3], depth: &[f32], w: usize, h: usize, tol: f32) -> bool {
    let x0 = c[0].floor().clamp(0.0, (w - 1) as f32) as usize;
    let y0 = c[1].floor().clamp(0.0, (h - 1) as f32) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let zref = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
        .iter()
        .map(|&(x, y)| depth[y * w + x])
        .filter(|z| z.is_finite())
        .fold(f32::INFINITY, f32::min);
    !zref.is_finite() || c[2] >= zref - tol
}

/// Largest depth change per image pixel between a texel and its valid UV
/// neighbours. Grazing texels have steep slopes and need more slack, since
/// the z-buffer around their projection samples nearby surface.
fn depth_slope(pos: &PositionMap, x: usize, y: usize) -> f32 {
    let (w, h) = pos.dims();
    let c = pos.coords()[y * w + x];
    let mut slope = 0.0f32;
    for (dx, dy) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
        let (nx, ny) = (x as isize + dx, y as isize + dy);
        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
            continue;
        }
        let j = ny as usize * w + nx as usize;
        if !pos.valid()[j] {
            continue;
        }
        let n = pos.coords()[j];
        let dxy = ((n[0] - c[0]).powi(2) + (n[1] - c[1]).powi(2)).sqrt().max(0.05);
        slope = slope.max((n[2] - c[2]).abs() / dxy);
    }
    slope
}

/// Multi-source BFS from visible texels over the occluded ones (8-connected).
fn inpaint_nearest(tex: &mut Image, visible: &[bool], occluded: &[bool], w: usize, h: usize) {
    let mut source: Vec<Option<usize>> = vec![None; w * h];
    let mut queue = VecDeque::new();
    for (i, &v) in visible.iter().enumerate() {
        if v {
            source[i] = Some(i);
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if occluded[j] && source[j].is_none() {
                    source[j] = source[i];
                    queue.push_back(j);
                }
            }
        }
    }
    for (i, src) in source.iter().enumerate() {
        if let (true, Some(s)) = (occluded[i], *src) {
            let rgb = tex.get(s % w, s / w);
            tex.set(i % w, i / w, rgb);
        }
    }
}

//! Z-buffered rasterization of the UV grid mesh back into image space.

use crate::error::{Error, Result};
use crate::raster::{Image, SoftMask, TextureMap};
use crate::uvgeom::position::PositionMap;

/// Gaussian feather applied to the coverage boundary.
pub const FEATHER_SIGMA: f32 = 1.0;
pub const FEATHER_RADIUS: usize = 3;

#[derive(Clone, Debug)]
pub struct Rendered {
    pub image: Image,
    /// Per-pixel blend weight of the rendered face over the background.
    pub alpha: SoftMask,
    /// Pixels covered by at least one face triangle.
    pub covered: Vec<bool>,
    /// Set when the position map has no valid quad; `image` is then the background.
    pub empty_face: bool,
}

impl Rendered {
    /// Pixels at full face weight, i.e. at least the feather radius inside the coverage.
    pub fn interior(&self) -> Vec<bool> {
        self.alpha.data().iter().map(|&a| a >= 1.0 - 1e-6).collect()
    }
}

/// Calls `f` with the three texel indices of every triangle: each 2×2 quad of
/// valid texels is split along its main diagonal.
pub(crate) fn for_each_triangle(pos: &PositionMap, mut f: impl FnMut([usize; 3])) {
    let (w, h) = pos.dims();
    let valid = pos.valid();
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let i00 = y * w + x;
            let i10 = i00 + 1;
            let i01 = i00 + w;
            let i11 = i01 + 1;
            if valid[i00] && valid[i10] && valid[i01] && valid[i11] {
                f([i00, i10, i11]);
                f([i00, i11, i01]);
            }
        }
    }
}

/// Visits the pixel centers inside a screen-space triangle with their barycentric weights.
#[inline]
pub(crate) fn raster_triangle(
    v: [[f32; 3]; 3],
    width: usize,
    height: usize,
    mut visit: impl FnMut(usize, usize, [f32; 3]),
) {
    let [a, b, c] = v;
    let area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    if area.abs() < 1e-9 {
        return;
    }
    let inv = 1.0 / area;
    let min_x = a[0].min(b[0]).min(c[0]).ceil().max(0.0);
    let max_x = a[0].max(b[0]).max(c[0]).floor().min((width - 1) as f32);
    let min_y = a[1].min(b[1]).min(c[1]).ceil().max(0.0);
    let max_y = a[1].max(b[1]).max(c[1]).floor().min((height - 1) as f32);
    if min_x > max_x || min_y > max_y {
        return;
    }
    const EPS: f32 = -1e-5;
    for py in min_y as usize..=max_y as usize {
        let fy = py as f32;
        for px in min_x as usize..=max_x as usize {
            let fx = px as f32;
            let w0 = ((b[0] - fx) * (c[1] - fy) - (c[0] - fx) * (b[1] - fy)) * inv;
            let w1 = ((c[0] - fx) * (a[1] - fy) - (a[0] - fx) * (c[1] - fy)) * inv;
            let w2 = 1.0 - w0 - w1;
            if w0 >= EPS && w1 >= EPS && w2 >= EPS {
                visit(px, py, [w0, w1, w2]);
            }
        }
    }
}

/// Depth buffer of the face mesh; uncovered pixels hold `-inf`.
pub fn depth_buffer(pos: &PositionMap, width: usize, height: usize) -> Vec<f32> {
    let mut depth = vec![f32::NEG_INFINITY; width * height];
    let coords = pos.coords();
    for_each_triangle(pos, |tri| {
        let v = tri.map(|i| coords[i]);
        raster_triangle(v, width, height, |px, py, bary| {
            let z = bary[0] * v[0][2] + bary[1] * v[1][2] + bary[2] * v[2][2];
            let slot = &mut depth[py * width + px];
            if z > *slot {
                *slot = z;
            }
        });
    });
    depth
}

pub(crate) fn rasterize_coverage(pos: &PositionMap, width: usize, height: usize) -> Vec<bool> {
    depth_buffer(pos, width, height).iter().map(|z| z.is_finite()).collect()
}

/// Renders `tex` onto `background` using the geometry in `pos`.
pub fn render(pos: &PositionMap, tex: &TextureMap, background: &Image) -> Result<Rendered> {
    if pos.dims() != tex.dims() {
        return Err(Error::shape(format!(
            "position map {}x{} vs texture {}x{}",
            pos.width(),
            pos.height(),
            tex.width(),
            tex.height()
        )));
    }
    let (width, height) = background.dims();
    let mut depth = vec![f32::NEG_INFINITY; width * height];
    let mut face = vec![[0f32; 3]; width * height];
    let coords = pos.coords();
    let texels = tex.data();
    let mut any = false;
    for_each_triangle(pos, |tri| {
        any = true;
        let v = tri.map(|i| coords[i]);
        let cols = tri.map(|i| [texels[i * 3], texels[i * 3 + 1], texels[i * 3 + 2]]);
        raster_triangle(v, width, height, |px, py, bary| {
            let z = bary[0] * v[0][2] + bary[1] * v[1][2] + bary[2] * v[2][2];
            let p = py * width + px;
            if z > depth[p] {
                depth[p] = z;
                face[p] = std::array::from_fn(|k| bary[0] * cols[0][k] + bary[1] * cols[1][k] + bary[2] * cols[2][k]);
            }
        });
    });
    if !any {
        log::warn!("render: position map has no valid quad, returning background");
        return Ok(Rendered {
            image: background.clone(),
            alpha: SoftMask::zeros(width, height),
            covered: vec![false; width * height],
            empty_face: true,
        });
    }
    let covered: Vec<bool> = depth.iter().map(|z| z.is_finite()).collect();
    let alpha = feather(&covered, width, height);
    let mut out = background.clone();
    for ((px, f), &a) in out.data_mut().chunks_exact_mut(3).zip(&face).zip(alpha.data()) {
        if a > 0.0 {
            for k in 0..3 {
                px[k] = (a * f[k] + (1.0 - a) * px[k]).clamp(0.0, 1.0);
            }
        }
    }
    Ok(Rendered { image: out, alpha, covered, empty_face: false })
}

fn gaussian_kernel() -> Vec<f32> {
    let r = FEATHER_RADIUS as i32;
    let k: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f32 / (2.0 * FEATHER_SIGMA * FEATHER_SIGMA)).exp()).collect();
    let s: f32 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Inward feather: full weight deep inside the coverage, ramping to zero at its edge.
/// Pixels outside the coverage always get zero weight.
fn feather(covered: &[bool], width: usize, height: usize) -> SoftMask {
    let kernel = gaussian_kernel();
    let r = FEATHER_RADIUS as isize;
    let src: Vec<f32> = covered.iter().map(|&c| c as u8 as f32).collect();
    let mut tmp = vec![0f32; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &kw) in kernel.iter().enumerate() {
                let sx = x as isize + k as isize - r;
                if sx >= 0 && (sx as usize) < width {
                    acc += kw * src[y * width + sx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    SoftMask::from_fn(width, height, |x, y| {
        if !covered[y * width + x] {
            return 0.0;
        }
        let mut acc = 0.0;
        for (k, &kw) in kernel.iter().enumerate() {
            let sy = y as isize + k as isize - r;
            if sy >= 0 && (sy as usize) < height {
                acc += kw * tmp[sy as usize * width + x];
            }
        }
        // Fully covered neighbourhoods sum to 1 up to rounding.
        if acc > 1.0 - 1e-5 {
            1.0
        } else {
            (2.0 * acc - 1.0).clamp(0.0, 1.0)
        }
    })
}

//! Masked per-channel histogram matching on 256 quantized bins.

use crate::error::Result;
use crate::raster::{check_same_dims, quantize_u8, Image, SoftMask, TextureMap};

/// Texels with mask weight strictly above this take part in matching.
pub const HIST_MASK_THRESHOLD: f32 = 0.5;

const BINS: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct HistMatch {
    pub texture: TextureMap,
    /// Source or reference had no texel above the mask threshold; the source
    /// was returned unchanged.
    pub empty_region: bool,
}

/// Remaps `source` inside `mask` so its per-channel histogram follows the
/// reference's masked histogram. Texels outside the mask are copied verbatim.
pub fn histogram_match(source: &TextureMap, reference: &TextureMap, mask: &SoftMask) -> Result<HistMatch> {
    check_same_dims(source.dims(), reference.dims(), "histogram match reference")?;
    check_same_dims(source.dims(), mask.dims(), "histogram match mask")?;
    let inside = mask.binarize(HIST_MASK_THRESHOLD);
    if !inside.iter().any(|&b| b) {
        log::warn!("histogram match: mask is empty at threshold {HIST_MASK_THRESHOLD}");
        return Ok(HistMatch { texture: source.clone(), empty_region: true });
    }
    let (w, h) = source.dims();
    let mut out = source.image().clone();
    for c in 0..3 {
        let lut = channel_lut(source.image(), reference.image(), &inside, c);
        for (px, &ok) in out.data_mut().chunks_exact_mut(3).zip(&inside) {
            if ok {
                px[c] = lut[quantize_u8(px[c]) as usize] as f32 / 255.0;
            }
        }
    }
    debug_assert_eq!(out.dims(), (w, h));
    Ok(HistMatch { texture: TextureMap::from_image(out), empty_region: false })
}

fn histogram(img: &Image, inside: &[bool], c: usize) -> [u64; BINS] {
    let mut hist = [0u64; BINS];
    for (px, &ok) in img.data().chunks_exact(3).zip(inside) {
        if ok {
            hist[quantize_u8(px[c]) as usize] += 1;
        }
    }
    hist
}

/// Bin k maps to the smallest reference bin m with CDF_ref(m) ≥ CDF_src(k).
/// CDFs are compared as cross-multiplied integer counts, so there is no
/// floating-point rounding in the bin choice.
fn channel_lut(source: &Image, reference: &Image, inside: &[bool], c: usize) -> [u8; BINS] {
    let hs = histogram(source, inside, c);
    let hr = histogram(reference, inside, c);
    let (ns, nr): (u64, u64) = (hs.iter().sum(), hr.iter().sum());
    let mut cdf_r = [0u64; BINS];
    let mut acc = 0;
    for (m, &v) in hr.iter().enumerate() {
        acc += v;
        cdf_r[m] = acc;
    }
    let mut lut = [0u8; BINS];
    let mut cs = 0u64;
    let mut m = 0;
    for k in 0..BINS {
        cs += hs[k];
        while m < BINS - 1 && (cdf_r[m] as u128) * (ns as u128) < (cs as u128) * (nr as u128) {
            m += 1;
        }
        lut[k] = m as u8;
    }
    lut
}

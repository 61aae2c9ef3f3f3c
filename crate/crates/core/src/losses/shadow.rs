//! Crop-based shadow loss: a full-image squared difference plus the average
//! of the squared differences inside the blocks of a regular grid.

use serde::{Deserialize, Serialize};

use super::LossValue;
use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// `k` blocks laid out as a `g`×`g` grid of `block_px`-pixel squares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropGrid {
    pub k: usize,
    pub g: usize,
    pub block_px: usize,
    pub resolution: usize,
}

/// Block counts `g²` whose side `g` divides `resolution`, ascending.
pub fn valid_block_counts(resolution: usize) -> Vec<usize> {
    (1..=resolution).filter(|g| resolution.is_multiple_of(*g)).map(|g| g * g).collect()
}

pub fn make_crop_grid(k: usize, resolution: usize) -> Result<CropGrid> {
    let g = (k as f64).sqrt().round() as usize;
    if k >= 1 && resolution >= 1 && g * g == k && resolution.is_multiple_of(g) {
        return Ok(CropGrid { k, g, block_px: resolution / g, resolution });
    }
    let valid = valid_block_counts(resolution);
    let below = valid.iter().rev().find(|&&v| v < k).copied();
    let above = valid.iter().find(|&&v| v > k).copied();
    Err(Error::InvalidCropGrid { k, resolution, suggestions: below.into_iter().chain(above).collect() })
}

/// Mean over pixels and channels of the full-image squared difference, plus
/// `1/k` times the sum over blocks of each block's mean squared difference.
pub fn crop_shadow_loss(mask_composite: &RasterImage, sketch: &RasterImage, grid: &CropGrid) -> Result<LossValue> {
    mask_composite.ensure_same_shape(sketch)?;
    let (w, h, c) = sketch.dims();
    if w != grid.resolution || h != grid.resolution {
        return Err(Error::ShapeMismatch {
            expected: format!("{0}x{0} images for the crop grid", grid.resolution),
            actual: format!("{w}x{h}"),
        });
    }
    let n = (w * h * c) as f64;
    let b = grid.block_px;
    let nb = (b * b * c) as f64;
    let mut full = 0.0;
    let mut blocks = 0.0;
    let mut grad = RasterImage::zeros_like(sketch);
    for by in 0..grid.g {
        for bx in 0..grid.g {
            let mut block = 0.0;
            for y in by * b..(by + 1) * b {
                for x in bx * b..(bx + 1) * b {
                    for ch in 0..c {
                        let d = sketch.get(x, y, ch) - mask_composite.get(x, y, ch);
                        block += d * d;
                        grad.set(x, y, ch, 2.0 * d / n + 2.0 * d / (nb * grid.k as f64));
                    }
                }
            }
            full += block;
            blocks += block / nb;
        }
    }
    Ok(LossValue { value: full / n + blocks / grid.k as f64, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_for_sixteen_blocks() {
        let g = make_crop_grid(16, 224).unwrap();
        assert_eq!((g.g, g.block_px), (4, 56));
        assert_eq!(make_crop_grid(1, 224).unwrap().block_px, 224);
    }

    #[test]
    fn invalid_k_suggests_neighbours() {
        let err = make_crop_grid(5, 224).unwrap_err();
        assert!(matches!(err, Error::InvalidCropGrid { ref suggestions, .. } if suggestions == &vec![4, 16]));
        // 9 is square but 3 does not divide 224.
        assert!(matches!(make_crop_grid(9, 224), Err(Error::InvalidCropGrid { .. })));
        assert!(
            matches!(make_crop_grid(0, 224), Err(Error::InvalidCropGrid { ref suggestions, .. }) if suggestions == &vec![1])
        );
    }

    #[test]
    fn valid_counts_for_224() {
        let gs: Vec<usize> = valid_block_counts(224).iter().map(|k| (*k as f64).sqrt() as usize).collect();
        assert_eq!(gs, vec![1, 2, 4, 7, 8, 14, 16, 28, 32, 56, 112, 224]);
    }

    #[test]
    fn identical_images_give_zero() {
        let img = RasterImage::from_fn(8, 8, 3, |x, y, c| ((x * y + c) % 5) as f64 / 4.0);
        let v = crop_shadow_loss(&img, &img, &make_crop_grid(4, 8).unwrap()).unwrap();
        assert_eq!(v.value, 0.0);
        assert!(v.grad.data().iter().all(|&g| g == 0.0));
    }
}

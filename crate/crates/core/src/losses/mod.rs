//! Image losses with pixel gradients: the semantic embedding loss, the
//! learned structure distance and the crop-based shadow loss.

mod augment;
mod semantic;
mod shadow;
mod structure;

pub use augment::{Crop, CropPlan};
pub use semantic::{semantic_loss, EmbeddingDistance, SemanticConfig, SemanticLoss};
pub use shadow::{crop_shadow_loss, make_crop_grid, valid_block_counts, CropGrid};
pub use structure::{structure_loss, StructureLoss, NORM_EPS};

use crate::raster::{PixelGradient, RasterImage};

/// A scalar loss and its gradient with respect to the evaluated image.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    pub grad: PixelGradient,
}

impl LossValue {
    pub fn zero(like: &RasterImage) -> Self {
        LossValue { value: 0.0, grad: RasterImage::zeros_like(like) }
    }
}

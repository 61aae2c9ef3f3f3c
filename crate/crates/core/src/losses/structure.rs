//! Learned patch distance between the masked photo and the sketch.
//!
//! For each tapped layer, features are divided by their channel-wise L2 norm
//! at every position, squared differences are weighted per channel by the
//! encoder's `lin` weights, and the result is averaged over positions. The
//! layer distances are summed.

use super::LossValue;
use crate::error::{Error, Result};
use crate::nn::{Activations, Encoder, FeatureMap};
use crate::raster::RasterImage;

/// Added to the channel norm before dividing.
pub const NORM_EPS: f64 = 1e-10;

/// Channel-normalized copy of `f` and the per-position norms.
fn normalize(f: &FeatureMap) -> (Vec<f64>, Vec<f64>) {
    let plane = f.plane();
    let mut norms = vec![0.0; plane];
    for c in 0..f.channels {
        for (n, v) in norms.iter_mut().zip(&f.data[c * plane..(c + 1) * plane]) {
            *n += v * v;
        }
    }
    norms.iter_mut().for_each(|n| *n = n.sqrt());
    let mut out = f.data.clone();
    for c in 0..f.channels {
        for (v, n) in out[c * plane..(c + 1) * plane].iter_mut().zip(&norms) {
            *v /= n + NORM_EPS;
        }
    }
    (out, norms)
}

pub struct StructureLoss<'a> {
    encoder: &'a Encoder,
    target: RasterImage,
    target_acts: Activations,
    target_norm: Vec<Vec<f64>>,
}

impl<'a> StructureLoss<'a> {
    pub fn new(encoder: &'a Encoder, target: &RasterImage) -> Result<Self> {
        if encoder.lin().is_none() {
            return Err(Error::invalid("structure encoder", "needs per-layer channel weights"));
        }
        let target = target.to_rgb();
        let target_acts = encoder.forward(&target);
        let target_norm = encoder.taps().iter().map(|&t| normalize(target_acts.layer(t)).0).collect();
        Ok(StructureLoss { encoder, target, target_acts, target_norm })
    }

    pub fn target(&self) -> &RasterImage {
        &self.target
    }

    pub fn evaluate(&self, sketch: &RasterImage) -> Result<LossValue> {
        let sketch = sketch.to_rgb();
        if !sketch.same_shape(&self.target) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} sketch", self.target.width(), self.target.height()),
                actual: format!("{}x{}", sketch.width(), sketch.height()),
            });
        }
        let acts = self.encoder.forward(&sketch);
        let lin = self.encoder.lin().expect("checked in new");
        let mut value = 0.0;
        let mut block_grads: Vec<Option<FeatureMap>> = vec![None; acts.blocks.len()];
        for (li, &tap) in self.encoder.taps().iter().enumerate() {
            let f = acts.layer(tap);
            debug_assert_eq!(f.data.len(), self.target_acts.layer(tap).data.len());
            let (fn_, norms) = normalize(f);
            let tn = &self.target_norm[li];
            let plane = f.plane();
            let area = plane as f64;
            let w = &lin[li];
            // d(value)/d(normalized sketch features).
            let mut g_hat = vec![0.0; f.data.len()];
            for c in 0..f.channels {
                for p in 0..plane {
                    let i = c * plane + p;
                    let d = fn_[i] - tn[i];
                    value += w[c] * d * d / area;
                    g_hat[i] = 2.0 * w[c] * d / area;
                }
            }
            // Back through the normalization: with s = n + eps,
            // d f_hat_c / d f_k = delta_ck / s - f_c f_k / (n s^2).
            let mut g = vec![0.0; f.data.len()];
            for p in 0..plane {
                let n = norms[p];
                let s = n + NORM_EPS;
                let dot: f64 = (0..f.channels).map(|c| g_hat[c * plane + p] * f.data[c * plane + p]).sum();
                for c in 0..f.channels {
                    let i = c * plane + p;
                    g[i] = g_hat[i] / s - if n > 0.0 { f.data[i] * dot / (n * s * s) } else { 0.0 };
                }
            }
            block_grads[tap - 1] = Some(FeatureMap { data: g, ..f.clone() });
        }
        Ok(LossValue { value, grad: self.encoder.backward(&acts, block_grads) })
    }
}

/// One-shot structure loss between two images.
pub fn structure_loss(mask_composite: &RasterImage, sketch: &RasterImage, encoder: &Encoder) -> Result<LossValue> {
    StructureLoss::new(encoder, mask_composite)?.evaluate(sketch)
}

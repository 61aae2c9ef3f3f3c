//! Embedding loss between a photo and a sketch through a semantic encoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::Crop;
use super::LossValue;
use crate::error::{Error, Result};
use crate::nn::{Activations, Embedding, Encoder, FeatureMap};
use crate::raster::RasterImage;

/// Distance between the two unit embeddings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingDistance {
    /// `1 - cos(a, b)`.
    #[default]
    Cosine,
    /// Euclidean distance between the unit vectors.
    L2,
}

impl std::str::FromStr for EmbeddingDistance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(EmbeddingDistance::Cosine),
            "l2" => Ok(EmbeddingDistance::L2),
            other => Err(Error::invalid("embedding distance", format!("'{other}' (expected cosine or l2)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticConfig {
    /// Paired crops averaged per evaluation; 0 disables augmentation.
    pub n_aug: usize,
    pub min_crop_scale: f64,
    pub max_crop_scale: f64,
    pub distance: EmbeddingDistance,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        SemanticConfig { n_aug: 4, min_crop_scale: 0.8, max_crop_scale: 1.0, distance: EmbeddingDistance::Cosine }
    }
}

impl SemanticConfig {
    pub fn without_augmentation(self) -> Self {
        SemanticConfig { n_aug: 0, ..self }
    }

    /// The crops used by one evaluation: `n_aug` random crops, or the
    /// identity when augmentation is off.
    pub fn crops(&self, width: usize, height: usize, seed: u64) -> Vec<Crop> {
        if self.n_aug == 0 {
            return vec![Crop::identity(width, height)];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.n_aug)
            .map(|_| Crop::random(&mut rng, width, height, self.min_crop_scale, self.max_crop_scale))
            .collect()
    }
}

/// One term of the loss on a single (already augmented) image pair.
fn pair_term(
    encoder: &Encoder,
    distance: EmbeddingDistance,
    target: &(Activations, Embedding),
    sketch: &RasterImage,
    want_grad: bool,
) -> Result<(f64, Option<RasterImage>)> {
    let acts = encoder.forward(sketch);
    let emb = encoder.embedding(&acts)?;
    let (t_acts, t_emb) = target;

    let (mut value, d_unit): (f64, Vec<f64>) = match distance {
        EmbeddingDistance::Cosine => {
            let dot: f64 = t_emb.unit.iter().zip(&emb.unit).map(|(a, b)| a * b).sum();
            (1.0 - dot, t_emb.unit.iter().map(|v| -v).collect())
        }
        EmbeddingDistance::L2 => {
            let diff: Vec<f64> = emb.unit.iter().zip(&t_emb.unit).map(|(s, t)| s - t).collect();
            let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            let grad = if norm > 0.0 { diff.iter().map(|v| v / norm).collect() } else { vec![0.0; diff.len()] };
            (norm, grad)
        }
    };

    let mut block_grads: Vec<Option<FeatureMap>> = vec![None; acts.blocks.len()];
    for &tap in encoder.taps() {
        let (fs, ft) = (acts.layer(tap), t_acts.layer(tap));
        let n = fs.data.len().max(1) as f64;
        value += fs.data.iter().zip(&ft.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        if want_grad {
            let g = FeatureMap {
                data: fs.data.iter().zip(&ft.data).map(|(a, b)| 2.0 * (a - b) / n).collect(),
                ..fs.clone()
            };
            block_grads[tap - 1] = Some(g);
        }
    }
    if !want_grad {
        return Ok((value, None));
    }
    let last = acts.blocks.len() - 1;
    let g_emb = encoder.embedding_backward(&acts, &emb, &d_unit);
    match &mut block_grads[last] {
        Some(g) => g.data.iter_mut().zip(&g_emb.data).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g_emb),
    }
    Ok((value, Some(encoder.backward(&acts, block_grads))))
}

/// Semantic loss against a fixed target image.
///
/// Per crop: embedding distance plus, for each tapped layer, the mean
/// squared difference of its activations. The value is averaged over the
/// crops; the same crop is applied to both images.
pub struct SemanticLoss<'a> {
    encoder: &'a Encoder,
    target: RasterImage,
    cfg: SemanticConfig,
    // Target features for the identity crop.
    plain: (Activations, Embedding),
}

impl<'a> SemanticLoss<'a> {
    pub fn new(encoder: &'a Encoder, target: &RasterImage, cfg: SemanticConfig) -> Result<Self> {
        if !encoder.has_projection() {
            return Err(Error::invalid("semantic encoder", "needs a projection head"));
        }
        let target = target.to_rgb();
        let acts = encoder.forward(&target);
        let emb = encoder.embedding(&acts)?;
        let plain = (acts, emb);
        Ok(SemanticLoss { encoder, target, cfg, plain })
    }

    pub fn target(&self) -> &RasterImage {
        &self.target
    }

    fn run(&self, sketch: &RasterImage, seed: u64, want_grad: bool) -> Result<(f64, Option<RasterImage>)> {
        self.target.ensure_same_shape(&sketch.to_rgb()).map_err(|_| Error::ShapeMismatch {
            expected: format!("{}x{} sketch", self.target.width(), self.target.height()),
            actual: format!("{}x{}", sketch.width(), sketch.height()),
        })?;
        let sketch = sketch.to_rgb();
        let (w, h) = (sketch.width(), sketch.height());
        let crops = self.cfg.crops(w, h, seed);
        let scale = 1.0 / crops.len() as f64;
        let mut value = 0.0;
        let mut grad = want_grad.then(|| RasterImage::filled(w, h, 3, 0.0));
        for crop in crops {
            let plan = crop.plan(w, h);
            let computed;
            let target = match &self.plain {
                t if crop.is_identity(w, h) => t,
                _ => {
                    let t = plan.apply(&self.target);
                    let acts = self.encoder.forward(&t);
                    let emb = self.encoder.embedding(&acts)?;
                    computed = (acts, emb);
                    &computed
                }
            };
            let (v, g) = pair_term(self.encoder, self.cfg.distance, target, &plan.apply(&sketch), want_grad)?;
            value += scale * v;
            if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
                acc.add_scaled(&plan.adjoint(&g), scale)?;
            }
        }
        Ok((value, grad))
    }

    /// Loss value and its gradient with respect to the sketch pixels.
    /// `seed` selects the crops.
    pub fn evaluate(&self, sketch: &RasterImage, seed: u64) -> Result<LossValue> {
        let (value, grad) = self.run(sketch, seed, true)?;
        Ok(LossValue { value, grad: grad.expect("gradient requested") })
    }

    pub fn value(&self, sketch: &RasterImage, seed: u64) -> Result<f64> {
        Ok(self.run(sketch, seed, false)?.0)
    }

    /// Value on the whole image with no crop, independent of any seed.
    pub fn plain_value(&self, sketch: &RasterImage) -> Result<f64> {
        let sketch = sketch.to_rgb();
        self.target.ensure_same_shape(&sketch)?;
        Ok(pair_term(self.encoder, self.cfg.distance, &self.plain, &sketch, false)?.0)
    }
}

/// One-shot semantic loss between two images.
pub fn semantic_loss(
    target: &RasterImage,
    sketch: &RasterImage,
    encoder: &Encoder,
    cfg: SemanticConfig,
    seed: u64,
) -> Result<LossValue> {
    SemanticLoss::new(encoder, target, cfg)?.evaluate(sketch, seed)
}

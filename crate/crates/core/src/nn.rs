//! Small convolutional image encoders with input gradients.
//!
//! An [`Encoder`] is a chain of blocks, each a 2-D convolution followed by a
//! ReLU. Block outputs are numbered from 1; the encoder's `taps` name the
//! blocks whose feature maps the losses compare. Optional heads sit on top:
//! a linear `projection` of the globally average-pooled last block gives an
//! embedding, and per-tap non-negative `lin` channel weights turn tapped
//! features into a learned patch distance.
//!
//! Weights are stored as safetensors. The file's metadata holds the
//! architecture as JSON under `"architecture"`; tensors are
//! `blocks.{i}.weight` (`[out, in, k, k]`), `blocks.{i}.bias`,
//! `input.mean`, `input.std`, and optionally `projection` (`[dim, c]`) and
//! `lin.{tap}` (`[c]`). F32 and F64 tensors are accepted.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::par;
use crate::raster::{PixelGradient, RasterImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let out = |n: usize| (n + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        (out(h), out(w))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub blocks: Vec<ConvSpec>,
    /// 1-based block numbers whose outputs are exposed to the losses.
    pub taps: Vec<usize>,
}

impl Architecture {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.blocks.is_empty() {
            return Err("no blocks".into());
        }
        if self.blocks[0].in_channels != 3 {
            return Err("first block must take 3 input channels".into());
        }
        for (i, pair) in self.blocks.windows(2).enumerate() {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(format!(
                    "block {} outputs {} channels, block {} expects {}",
                    i + 1,
                    pair[0].out_channels,
                    i + 2,
                    pair[1].in_channels
                ));
            }
        }
        for b in &self.blocks {
            if b.kernel == 0 || b.stride == 0 || b.out_channels == 0 {
                return Err(format!("degenerate block {b:?}"));
            }
        }
        if let Some(t) = self.taps.iter().find(|&&t| t == 0 || t > self.blocks.len()) {
            return Err(format!("tap {t} outside 1..={}", self.blocks.len()));
        }
        Ok(())
    }
}

/// A CHW float tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn zeros_like(other: &FeatureMap) -> Self {
        Self::zeros(other.channels, other.height, other.width)
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ConvBlock {
    spec: ConvSpec,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// Valid output positions `[lo, hi)` along one axis for kernel offset `k`.
#[inline]
fn valid_range(k: usize, stride: usize, padding: usize, input: usize, output: usize) -> (usize, usize) {
    // Need 0 <= o * stride + k - padding < input.
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    let hi = if input + padding > k { (input + padding - k - 1) / stride + 1 } else { 0 };
    (lo.min(output), hi.min(output).max(lo.min(output)))
}

impl ConvBlock {
    /// Patch matrix: row `(ic, ky, kx)` holds that tap's input value for every
    /// output position, zero where the tap falls in the padding.
    fn im2col(&self, x: &FeatureMap, oh: usize, ow: usize) -> Vec<f64> {
        let s = self.spec;
        let k = s.kernel;
        let n = oh * ow;
        let mut cols = vec![0.0; s.in_channels * k * k * n];
        for ic in 0..s.in_channels {
            let input = &x.data[ic * x.plane()..(ic + 1) * x.plane()];
            for ky in 0..k {
                let (y0, y1) = valid_range(ky, s.stride, s.padding, x.height, oh);
                for kx in 0..k {
                    let (x0, x1) = valid_range(kx, s.stride, s.padding, x.width, ow);
                    let row = &mut cols[((ic * k + ky) * k + kx) * n..][..n];
                    for oy in y0..y1 {
                        let iy = oy * s.stride + ky - s.padding;
                        let src = &input[iy * x.width..(iy + 1) * x.width];
                        for ox in x0..x1 {
                            row[oy * ow + ox] = src[ox * s.stride + kx - s.padding];
                        }
                    }
                }
            }
        }
        cols
    }

    fn forward(&self, x: &FeatureMap) -> FeatureMap {
        let s = self.spec;
        let (oh, ow) = s.output_size(x.height, x.width);
        let n = oh * ow;
        let taps = s.in_channels * s.kernel * s.kernel;
        let cols = self.im2col(x, oh, ow);
        let planes = par::map_range(s.out_channels, |oc| {
            let mut out = vec![self.bias[oc]; n];
            for (w, col) in self.weight[oc * taps..(oc + 1) * taps].iter().zip(cols.chunks_exact(n)) {
                for (o, v) in out.iter_mut().zip(col) {
                    *o += w * v;
                }
            }
            for v in out.iter_mut() {
                *v = v.max(0.0);
            }
            out
        });
        FeatureMap { channels: s.out_channels, height: oh, width: ow, data: planes.concat() }
    }

    /// Gradient with respect to the block input, given the gradient with
    /// respect to its (post-ReLU) output `y`.
    fn backward(&self, x: &FeatureMap, y: &FeatureMap, grad_y: &FeatureMap) -> FeatureMap {
        let s = self.spec;
        let k = s.kernel;
        let (oh, ow) = (y.height, y.width);
        let n = oh * ow;
        let taps = s.in_channels * k * k;
        let grad_pre: Vec<f64> =
            grad_y.data.iter().zip(&y.data).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect();
        let planes = par::map_range(s.in_channels, |ic| {
            // Patch-matrix rows of this input channel, then scattered back.
            let mut gcols = vec![0.0; k * k * n];
            for oc in 0..s.out_channels {
                let gout = &grad_pre[oc * n..(oc + 1) * n];
                let ws = &self.weight[oc * taps + ic * k * k..][..k * k];
                for (w, row) in ws.iter().zip(gcols.chunks_exact_mut(n)) {
                    for (r, g) in row.iter_mut().zip(gout) {
                        *r += w * g;
                    }
                }
            }
            let mut gin = vec![0.0; x.plane()];
            for ky in 0..k {
                let (y0, y1) = valid_range(ky, s.stride, s.padding, x.height, oh);
                for kx in 0..k {
                    let (x0, x1) = valid_range(kx, s.stride, s.padding, x.width, ow);
                    let row = &gcols[(ky * k + kx) * n..][..n];
                    for oy in y0..y1 {
                        let iy = oy * s.stride + ky - s.padding;
                        let dst = &mut gin[iy * x.width..(iy + 1) * x.width];
                        for ox in x0..x1 {
                            dst[ox * s.stride + kx - s.padding] += row[oy * ow + ox];
                        }
                    }
                }
            }
            gin
        });
        FeatureMap { channels: s.in_channels, height: x.height, width: x.width, data: planes.concat() }
    }
}

/// Cached forward pass: the normalized input and every block output.
#[derive(Clone, Debug)]
pub struct Activations {
    pub input: FeatureMap,
    pub blocks: Vec<FeatureMap>,
}

impl Activations {
    /// Output of 1-based block `layer`.
    pub fn layer(&self, layer: usize) -> &FeatureMap {
        &self.blocks[layer - 1]
    }
}

/// Unit embedding with what its backward pass needs.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub unit: Vec<f64>,
    norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    arch: Architecture,
    blocks: Vec<ConvBlock>,
    mean: [f64; 3],
    std: [f64; 3],
    projection: Option<(usize, Vec<f64>)>,
    lin: Option<Vec<Vec<f64>>>,
    digest: String,
}

impl Encoder {
    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn taps(&self) -> &[usize] {
        &self.arch.taps
    }

    pub fn has_projection(&self) -> bool {
        self.projection.is_some()
    }

    /// Channel weights of the learned patch distance, one vector per tap.
    pub fn lin(&self) -> Option<&[Vec<f64>]> {
        self.lin.as_deref()
    }

    /// SHA-256 of the file this encoder was loaded from, or of its
    /// serialized form when built in memory.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::WeightsNotFound(path.to_path_buf()));
        }
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|message| Error::BadWeights { path: path.to_path_buf(), message })
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| e.to_string())?;
        let arch_json =
            meta.metadata().as_ref().and_then(|m| m.get("architecture")).ok_or("missing 'architecture' metadata")?;
        let arch: Architecture = serde_json::from_str(arch_json).map_err(|e| format!("architecture: {e}"))?;
        arch.validate()?;
        let st = SafeTensors::deserialize(bytes).map_err(|e| e.to_string())?;
        let fetch = |name: &str, shape: &[usize]| -> std::result::Result<Vec<f64>, String> {
            let t = st.tensor(name).map_err(|_| format!("missing tensor '{name}'"))?;
            if t.shape() != shape {
                return Err(format!("tensor '{name}' has shape {:?}, expected {shape:?}", t.shape()));
            }
            match t.dtype() {
                Dtype::F32 => {
                    Ok(t.data().chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect())
                }
                Dtype::F64 => Ok(t
                    .data()
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
                    .collect()),
                other => Err(format!("tensor '{name}' has unsupported dtype {other:?}")),
            }
        };
        let mut blocks = Vec::with_capacity(arch.blocks.len());
        for (i, &spec) in arch.blocks.iter().enumerate() {
            let weight =
                fetch(&format!("blocks.{i}.weight"), &[spec.out_channels, spec.in_channels, spec.kernel, spec.kernel])?;
            let bias = fetch(&format!("blocks.{i}.bias"), &[spec.out_channels])?;
            blocks.push(ConvBlock { spec, weight, bias });
        }
        let three = |v: Vec<f64>| [v[0], v[1], v[2]];
        let mean = three(fetch("input.mean", &[3])?);
        let std = three(fetch("input.std", &[3])?);
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err("input.std must be positive".into());
        }
        let last = arch.blocks[arch.blocks.len() - 1].out_channels;
        let projection = match st.tensor("projection") {
            Ok(t) => {
                let dim = *t.shape().first().ok_or("projection must be 2-D")?;
                Some((dim, fetch("projection", &[dim, last])?))
            }
            Err(_) => None,
        };
        let lin = if st.names().iter().any(|n| n.starts_with("lin.")) {
            let mut lin = Vec::new();
            for &tap in &arch.taps {
                let c = arch.blocks[tap - 1].out_channels;
                let w = fetch(&format!("lin.{tap}"), &[c])?;
                if w.iter().any(|&v| v < 0.0) {
                    return Err(format!("lin.{tap} has negative weights"));
                }
                lin.push(w);
            }
            Some(lin)
        } else {
            None
        };
        let digest = hex::encode(Sha256::digest(bytes));
        Ok(Encoder { arch, blocks, mean, std, projection, lin, digest })
    }

    /// Serializes to safetensors bytes with F32 tensors.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        let f32_bytes = |v: &[f64]| v.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect::<Vec<u8>>();
        for (i, b) in self.blocks.iter().enumerate() {
            let s = b.spec;
            tensors.push((
                format!("blocks.{i}.weight"),
                vec![s.out_channels, s.in_channels, s.kernel, s.kernel],
                f32_bytes(&b.weight),
            ));
            tensors.push((format!("blocks.{i}.bias"), vec![s.out_channels], f32_bytes(&b.bias)));
        }
        tensors.push(("input.mean".into(), vec![3], f32_bytes(&self.mean)));
        tensors.push(("input.std".into(), vec![3], f32_bytes(&self.std)));
        if let Some((dim, p)) = &self.projection {
            tensors.push(("projection".into(), vec![*dim, p.len() / dim], f32_bytes(p)));
        }
        if let Some(lin) = &self.lin {
            for (tap, w) in self.arch.taps.iter().zip(lin) {
                tensors.push((format!("lin.{tap}"), vec![w.len()], f32_bytes(w)));
            }
        }
        let views = tensors
            .iter()
            .map(|(name, shape, data)| {
                safetensors::tensor::TensorView::new(Dtype::F32, shape.clone(), data)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::Internal(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = HashMap::from([("architecture".to_string(), serde_json::to_string(&self.arch)?)]);
        safetensors::serialize(views, &Some(meta)).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn forward(&self, image: &RasterImage) -> Activations {
        let rgb = image.to_rgb();
        let (w, h) = (rgb.width(), rgb.height());
        let mut input = FeatureMap::zeros(3, h, w);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    input.data[(c * h + y) * w + x] = (rgb.get(x, y, c) - self.mean[c]) / self.std[c];
                }
            }
        }
        let mut blocks: Vec<FeatureMap> = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let next = block.forward(blocks.last().unwrap_or(&input));
            blocks.push(next);
        }
        Activations { input, blocks }
    }

    /// Pixel gradient of a scalar whose gradients with respect to block
    /// outputs are `block_grads` (indexed like `acts.blocks`; `None` means zero).
    pub fn backward(&self, acts: &Activations, mut block_grads: Vec<Option<FeatureMap>>) -> PixelGradient {
        block_grads.resize(self.blocks.len(), None);
        let mut carried: Option<FeatureMap> = None;
        for i in (0..self.blocks.len()).rev() {
            let grad = match (block_grads[i].take(), carried.take()) {
                (Some(mut g), Some(c)) => {
                    for (a, b) in g.data.iter_mut().zip(&c.data) {
                        *a += b;
                    }
                    Some(g)
                }
                (g, c) => g.or(c),
            };
            let Some(grad) = grad else { continue };
            let x = if i == 0 { &acts.input } else { &acts.blocks[i - 1] };
            carried = Some(self.blocks[i].backward(x, &acts.blocks[i], &grad));
        }
        let (w, h) = (acts.input.width, acts.input.height);
        let mut out = RasterImage::filled(w, h, 3, 0.0);
        if let Some(g) = carried {
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        out.set(x, y, c, g.data[(c * h + y) * w + x] / self.std[c]);
                    }
                }
            }
        }
        out
    }

    /// Unit-length embedding: average-pool the last block, project, normalize.
    pub fn embedding(&self, acts: &Activations) -> Result<Embedding> {
        let (dim, p) = self.projection.as_ref().ok_or_else(|| Error::invalid("encoder", "no projection head"))?;
        let last = acts.blocks.last().expect("validated non-empty");
        let pooled = global_pool(last);
        let c = pooled.len();
        let e: Vec<f64> = (0..*dim).map(|d| (0..c).map(|j| p[d * c + j] * pooled[j]).sum()).collect();
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit = if norm > 0.0 { e.iter().map(|v| v / norm).collect() } else { vec![0.0; *dim] };
        Ok(Embedding { unit, norm })
    }

    /// Gradient with respect to the last block output, given the gradient
    /// with respect to the unit embedding.
    pub fn embedding_backward(&self, acts: &Activations, emb: &Embedding, d_unit: &[f64]) -> FeatureMap {
        let last = acts.blocks.last().expect("validated non-empty");
        let mut grad = FeatureMap::zeros_like(last);
        let Some((dim, p)) = self.projection.as_ref() else { return grad };
        if emb.norm == 0.0 {
            return grad;
        }
        let dot: f64 = emb.unit.iter().zip(d_unit).map(|(u, g)| u * g).sum();
        let de: Vec<f64> = emb.unit.iter().zip(d_unit).map(|(u, g)| (g - u * dot) / emb.norm).collect();
        let c = last.channels;
        let area = last.plane() as f64;
        for j in 0..c {
            let dz: f64 = (0..*dim).map(|d| p[d * c + j] * de[d]).sum();
            grad.data[j * last.plane()..(j + 1) * last.plane()].fill(dz / area);
        }
        grad
    }

    /// An encoder with He-initialized random weights, drawn in f32 so that
    /// saving and loading is lossless.
    pub fn random(
        arch: Architecture,
        mean: [f64; 3],
        std: [f64; 3],
        embedding_dim: Option<usize>,
        with_lin: bool,
        seed: u64,
    ) -> Result<Self> {
        arch.validate().map_err(|m| Error::invalid("architecture", m))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |scale: f64| (rng.gen_range(-1.0..1.0) * scale) as f32 as f64;
        let mut blocks = Vec::new();
        for &spec in &arch.blocks {
            let fan_in = (spec.in_channels * spec.kernel * spec.kernel) as f64;
            // Uniform with the variance of He initialization.
            let scale = (6.0 / fan_in).sqrt();
            let weight =
                (0..spec.out_channels * spec.in_channels * spec.kernel * spec.kernel).map(|_| draw(scale)).collect();
            let bias = (0..spec.out_channels).map(|_| draw(0.05)).collect();
            blocks.push(ConvBlock { spec, weight, bias });
        }
        let last = arch.blocks[arch.blocks.len() - 1].out_channels;
        let projection =
            embedding_dim.map(|dim| (dim, (0..dim * last).map(|_| draw((3.0 / last as f64).sqrt())).collect()));
        let lin = with_lin.then(|| {
            arch.taps
                .iter()
                .map(|&t| {
                    (0..arch.blocks[t - 1].out_channels).map(|_| (draw(0.5).abs() + 0.05) as f32 as f64).collect()
                })
                .collect()
        });
        let mut enc = Encoder {
            arch,
            blocks,
            mean: mean.map(|v| v as f32 as f64),
            std: std.map(|v| v as f32 as f64),
            projection,
            lin,
            digest: String::new(),
        };
        enc.digest = hex::encode(Sha256::digest(enc.to_bytes()?));
        Ok(enc)
    }
}

pub fn global_pool(map: &FeatureMap) -> Vec<f64> {
    let area = map.plane() as f64;
    map.data.chunks_exact(map.plane().max(1)).map(|p| p.iter().sum::<f64>() / area).collect()
}

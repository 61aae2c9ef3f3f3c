//! Paired random-crop augmentation with an exact adjoint.

use rand::Rng;

use crate::raster::RasterImage;

/// A square-ish crop resampled back to full size with bilinear
/// interpolation. Coordinates are in input pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crop {
    pub x0: f64,
    pub y0: f64,
    pub w: f64,
    pub h: f64,
}

/// Bilinear taps: four (index, weight) pairs per output sample.
type Taps = [(usize, f64); 4];

impl Crop {
    pub fn identity(width: usize, height: usize) -> Self {
        Crop { x0: 0.0, y0: 0.0, w: width as f64, h: height as f64 }
    }

    /// Side lengths are `scale` times the image's, `scale` uniform in
    /// `[min_scale, max_scale]`; the offset is uniform over valid positions.
    pub fn random(rng: &mut impl Rng, width: usize, height: usize, min_scale: f64, max_scale: f64) -> Self {
        let scale = if max_scale > min_scale { rng.gen_range(min_scale..=max_scale) } else { min_scale };
        let (w, h) = (width as f64 * scale, height as f64 * scale);
        let x0 = rng.gen_range(0.0..=(width as f64 - w).max(0.0));
        let y0 = rng.gen_range(0.0..=(height as f64 - h).max(0.0));
        Crop { x0, y0, w, h }
    }

    fn taps(&self, width: usize, height: usize) -> Vec<Taps> {
        let axis = |o: usize, n: usize, start: f64, len: f64| -> [(usize, f64); 2] {
            let pos = (start + (o as f64 + 0.5) * len / n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (pos.floor() as usize).min(n.saturating_sub(2));
            let f = pos - i as f64;
            if n == 1 {
                [(0, 1.0), (0, 0.0)]
            } else {
                [(i, 1.0 - f), (i + 1, f)]
            }
        };
        let mut taps = Vec::with_capacity(width * height);
        for y in 0..height {
            let ay = axis(y, height, self.y0, self.h);
            for x in 0..width {
                let ax = axis(x, width, self.x0, self.w);
                taps.push([
                    (ay[0].0 * width + ax[0].0, ay[0].1 * ax[0].1),
                    (ay[0].0 * width + ax[1].0, ay[0].1 * ax[1].1),
                    (ay[1].0 * width + ax[0].0, ay[1].1 * ax[0].1),
                    (ay[1].0 * width + ax[1].0, ay[1].1 * ax[1].1),
                ]);
            }
        }
        taps
    }

    pub fn is_identity(&self, width: usize, height: usize) -> bool {
        *self == Crop::identity(width, height)
    }

    /// Precomputes the resampling taps for `width`×`height` images.
    pub fn plan(&self, width: usize, height: usize) -> CropPlan {
        let taps = if self.is_identity(width, height) { None } else { Some(self.taps(width, height)) };
        CropPlan { width, height, taps }
    }

    pub fn apply(&self, image: &RasterImage) -> RasterImage {
        self.plan(image.width(), image.height()).apply(image)
    }

    /// Transpose of [`Crop::apply`]: maps an output-space gradient back to
    /// the input image.
    pub fn adjoint(&self, grad: &RasterImage) -> RasterImage {
        self.plan(grad.width(), grad.height()).adjoint(grad)
    }
}

/// A crop bound to one image size. `None` taps mean the identity.
pub struct CropPlan {
    width: usize,
    height: usize,
    taps: Option<Vec<Taps>>,
}

impl CropPlan {
    pub fn apply(&self, image: &RasterImage) -> RasterImage {
        let (w, h, c) = image.dims();
        assert_eq!((w, h), (self.width, self.height), "crop plan size");
        let Some(taps) = &self.taps else {
            return image.clone();
        };
        let src = image.data();
        let mut out = RasterImage::filled(w, h, c, 0.0);
        for (o, t) in out.data_mut().chunks_exact_mut(c).zip(taps) {
            for &(i, wt) in t {
                for ch in 0..c {
                    o[ch] += wt * src[i * c + ch];
                }
            }
        }
        out
    }

    pub fn adjoint(&self, grad: &RasterImage) -> RasterImage {
        let (w, h, c) = grad.dims();
        assert_eq!((w, h), (self.width, self.height), "crop plan size");
        let Some(taps) = &self.taps else {
            return grad.clone();
        };
        let mut out = RasterImage::filled(w, h, c, 0.0);
        let dst = out.data_mut();
        for (g, t) in grad.data().chunks_exact(c).zip(taps) {
            for &(i, wt) in t {
                for ch in 0..c {
                    dst[i * c + ch] += wt * g[ch];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adjoint_satisfies_the_dot_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let crop = Crop::random(&mut rng, 13, 9, 0.8, 1.0);
        let a = RasterImage::from_fn(13, 9, 3, |_, _, _| rng.gen_range(-1.0..1.0));
        let b = RasterImage::from_fn(13, 9, 3, |_, _, _| rng.gen_range(-1.0..1.0));
        let lhs: f64 = crop.apply(&a).data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.data().iter().zip(crop.adjoint(&b).data()).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn identity_crop_is_exact() {
        let img = RasterImage::from_fn(5, 4, 3, |x, y, c| (x + 2 * y + c) as f64 / 20.0);
        let crop = Crop::identity(5, 4);
        assert_eq!(crop.apply(&img), img);
        let nudged = Crop { x0: 1e-300, ..crop };
        assert!(nudged.apply(&img).mean_abs_diff(&img).unwrap() < 1e-12);
    }

    #[test]
    fn crop_stays_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let c = Crop::random(&mut rng, 224, 224, 0.8, 1.0);
            assert!(c.w >= 0.8 * 224.0 - 1e-9 && c.x0 >= 0.0 && c.x0 + c.w <= 224.0 + 1e-9);
        }
    }
}

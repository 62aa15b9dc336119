use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{ssim_with_grad_window, SSIM_WINDOW};

/// Weights of the L1 and D-SSIM terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub dssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { l1: 0.8, dssim: 0.2 }
    }
}

/// `0.8·mean|a−b| + 0.2·(1 − SSIM(a,b))/2` and its gradient with respect to `rendered`.
///
/// Images smaller than the 11-pixel SSIM window use a window as wide as
/// their smaller side.
pub fn loss(rendered: &Image, target: &Image) -> Result<(f64, Image)> {
    loss_weighted(rendered, target, &LossWeights::default())
}

pub fn loss_weighted(rendered: &Image, target: &Image, weights: &LossWeights) -> Result<(f64, Image)> {
    rendered.same_size(target).map_err(|_| {
        Error::DimensionMismatch(format!(
            "rendered {}x{} vs target {}x{}",
            rendered.width(),
            rendered.height(),
            target.width(),
            target.height()
        ))
    })?;
    let n = rendered.data().len() as f64;
    let mut grad = Image::new(rendered.width(), rendered.height());
    let mut l1 = 0.0;
    for ((g, a), b) in grad.data_mut().iter_mut().zip(rendered.data()).zip(target.data()) {
        let d = a - b;
        l1 += d.abs();
        *g = weights.l1 * if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        } / n;
    }
    l1 /= n;
    let mut total = weights.l1 * l1;
    if weights.dssim != 0.0 {
        let window = SSIM_WINDOW.min(rendered.width()).min(rendered.height());
        let (s, ds) = ssim_with_grad_window(rendered, target, window)?;
        total += weights.dssim * (1.0 - s) / 2.0;
        for (g, d) in grad.data_mut().iter_mut().zip(ds.data()) {
            *g -= weights.dssim * 0.5 * d;
        }
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{SSIM_C1, SSIM_C2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_images_have_zero_loss() {
        let a = Image::from_fn(12, 12, |x, y| [x as f64 / 12.0, y as f64 / 12.0, 0.3]);
        assert_eq!(loss(&a, &a).unwrap().0, 0.0);
    }

    #[test]
    fn black_versus_white() {
        let black = Image::filled(16, 16, [0.0; 3]);
        let white = Image::filled(16, 16, [1.0; 3]);
        let s = (SSIM_C1 * SSIM_C2) / ((1.0 + SSIM_C1) * SSIM_C2);
        let expect = 0.8 + 0.2 * (1.0 - s) / 2.0;
        let (l, _) = loss(&black, &white).unwrap();
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 0.8999).abs() < 1e-4);
    }

    #[test]
    fn gradient_matches_finite_differences_on_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for size in [8, 12] {
            let a = Image::from_fn(size, size, |_, _| [rng.random(), rng.random(), rng.random()]);
            let b = Image::from_fn(size, size, |_, _| [rng.random(), rng.random(), rng.random()]);
            let (_, g) = loss(&a, &b).unwrap();
            let h = 1e-7;
            for i in 0..a.data().len() {
                let mut p = a.clone();
                p.data_mut()[i] += h;
                let mut m = a.clone();
                m.data_mut()[i] -= h;
                let fd = (loss(&p, &b).unwrap().0 - loss(&m, &b).unwrap().0) / (2.0 * h);
                let an = g.data()[i];
                assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-6), "{i}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn mismatched_sizes_error() {
        assert!(matches!(
            loss(&Image::new(12, 12), &Image::new(12, 13)),
            Err(Error::DimensionMismatch(_))
        ));
    }
}

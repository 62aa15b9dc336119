//! PSNR and Gaussian-windowed SSIM on `[0,1]` RGB images.
//!
//! SSIM is evaluated over every fully contained 11×11 window (no padding)
//! and averaged over windows and channels.

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean squared error over all channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_size(b)?;
    let n = a.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / n as f64)
}

/// `-10 log10(MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Normalized 1-D Gaussian weights; the 2-D window is their outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// A single-channel plane.
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel(img: &Image, c: usize) -> Self {
        Plane {
            w: img.width(),
            h: img.height(),
            v: img.data().iter().skip(c).step_by(3).copied().collect(),
        }
    }

    fn map2(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// Valid-mode separable correlation with `k`.
    fn filter_valid(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let (ow, oh) = (self.w + 1 - n, self.h + 1 - n);
        let mut tmp = vec![0.0; ow * self.h];
        for y in 0..self.h {
            let row = &self.v[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    s += kv * tmp[(y + i) * ow + x];
                }
                out[y * ow + x] = s;
            }
        }
        Plane { w: ow, h: oh, v: out }
    }

    /// Adjoint of [`Self::filter_valid`]: scatter a window map back to the
    /// full plane of size `w × h`.
    fn filter_adjoint(&self, k: &[f64], w: usize, h: usize) -> Plane {
        let n = k.len();
        let mut tmp = vec![0.0; self.w * h];
        for y in 0..self.h {
            for x in 0..self.w {
                let v = self.v[y * self.w + x];
                for (i, kv) in k.iter().enumerate() {
                    tmp[(y + i) * self.w + x] += kv * v;
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..self.w {
                let v = tmp[y * self.w + x];
                for (i, kv) in k.iter().enumerate().take(n) {
                    out[y * w + x + i] += kv * v;
                }
            }
        }
        Plane { w, h, v: out }
    }
}

fn check_ssim_input(a: &Image, b: &Image, window: usize) -> Result<()> {
    a.same_size(b)?;
    if window == 0 || a.width() < window || a.height() < window {
        return Err(Error::ImageTooSmall {
            width: a.width(),
            height: a.height(),
            window,
        });
    }
    Ok(())
}

/// Mean SSIM of `a` against `b`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_ssim_input(a, b, SSIM_WINDOW)?;
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let pa = Plane::channel(a, c);
        let pb = Plane::channel(b, c);
        let ma = pa.filter_valid(&k);
        let mb = pb.filter_valid(&k);
        let eaa = pa.map2(&pa, |x, _| x * x).filter_valid(&k);
        let ebb = pb.map2(&pb, |x, _| x * x).filter_valid(&k);
        let eab = pa.map2(&pb, |x, y| x * y).filter_valid(&k);
        for i in 0..ma.v.len() {
            let (mu_a, mu_b) = (ma.v[i], mb.v[i]);
            let var_a = eaa.v[i] - mu_a * mu_a;
            let var_b = ebb.v[i] - mu_b * mu_b;
            let cov = eab.v[i] - mu_a * mu_b;
            total += (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
                / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    ssim_with_grad_window(a, b, SSIM_WINDOW)
}

/// [`ssim_with_grad`] with a `window`-wide Gaussian window (same sigma).
pub fn ssim_with_grad_window(a: &Image, b: &Image, window: usize) -> Result<(f64, Image)> {
    check_ssim_input(a, b, window)?;
    let (w, h) = (a.width(), a.height());
    let k = gaussian_window(window, SSIM_SIGMA);
    let windows = (w + 1 - window) * (h + 1 - window);
    let norm = 1.0 / (3 * windows) as f64;
    let mut total = 0.0;
    let mut grad = Image::new(w, h);
    for c in 0..3 {
        let pa = Plane::channel(a, c);
        let pb = Plane::channel(b, c);
        let ma = pa.filter_valid(&k);
        let mb = pb.filter_valid(&k);
        let eaa = pa.map2(&pa, |x, _| x * x).filter_valid(&k);
        let ebb = pb.map2(&pb, |x, _| x * x).filter_valid(&k);
        let eab = pa.map2(&pb, |x, y| x * y).filter_valid(&k);
        let mut d_mu = ma.map2(&ma, |_, _| 0.0);
        let mut d_eaa = d_mu.map2(&d_mu, |_, _| 0.0);
        let mut d_eab = d_mu.map2(&d_mu, |_, _| 0.0);
        for i in 0..ma.v.len() {
            let (mu_a, mu_b) = (ma.v[i], mb.v[i]);
            let var_a = eaa.v[i] - mu_a * mu_a;
            let var_b = ebb.v[i] - mu_b * mu_b;
            let cov = eab.v[i] - mu_a * mu_b;
            let n1 = 2.0 * mu_a * mu_b + SSIM_C1;
            let n2 = 2.0 * cov + SSIM_C2;
            let d1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1;
            let d2 = var_a + var_b + SSIM_C2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            d_mu.v[i] = norm * s * (2.0 * mu_b / n1 - 2.0 * mu_a / d1 - 2.0 * mu_b / n2 + 2.0 * mu_a / d2);
            d_eaa.v[i] = -norm * s / d2;
            d_eab.v[i] = norm * s * 2.0 / n2;
        }
        let g_mu = d_mu.filter_adjoint(&k, w, h);
        let g_eaa = d_eaa.filter_adjoint(&k, w, h);
        let g_eab = d_eab.filter_adjoint(&k, w, h);
        let out = grad.data_mut();
        for i in 0..w * h {
            out[3 * i + c] = g_mu.v[i] + 2.0 * pa.v[i] * g_eaa.v[i] + pb.v[i] * g_eab.v[i];
        }
    }
    Ok((total * norm, grad))
}

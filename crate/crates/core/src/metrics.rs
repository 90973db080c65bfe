//! Image quality metrics: PSNR and single-scale SSIM.
//!
//! SSIM uses the reference constants: 11x11 Gaussian window with sigma 1.5,
//! K1 = 0.01, K2 = 0.03, dynamic range L = 1, averaged over valid window
//! positions; colour images are reduced to grayscale by the channel mean.

use crate::tensor::Tensor;

/// 10 * log10(max^2 / MSE); `f64::INFINITY` is the lossless sentinel when
/// the images agree exactly.
pub fn psnr(a: &Tensor, b: &Tensor, max_val: f64) -> f64 {
    assert_eq!(a.shape(), b.shape(), "psnr: shape mismatch");
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

fn to_gray(img: &Tensor) -> (Vec<f64>, usize, usize) {
    let (_, c, h, w) = img.dims4().expect("image tensor");
    let plane = h * w;
    let mut gray = vec![0.0; plane];
    for ch in 0..c {
        for i in 0..plane {
            gray[i] += img.data()[ch * plane + i] / c as f64;
        }
    }
    (gray, h, w)
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size - 1) as f64 / 2.0;
    let mut win = vec![0.0; size * size];
    let mut sum = 0.0;
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 - half;
            let dx = x as f64 - half;
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            win[y * size + x] = v;
            sum += v;
        }
    }
    for v in win.iter_mut() {
        *v /= sum;
    }
    win
}

/// Structural similarity in [-1, 1]; symmetric in its arguments.
pub fn ssim(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "ssim: shape mismatch");
    let (ga, h, w) = to_gray(a);
    let (gb, _, _) = to_gray(b);

    let mut win_size = 11usize.min(h).min(w);
    if win_size % 2 == 0 {
        win_size -= 1;
    }
    let window = gaussian_window(win_size, 1.5);

    const K1: f64 = 0.01;
    const K2: f64 = 0.03;
    const L: f64 = 1.0;
    let c1 = (K1 * L) * (K1 * L);
    let c2 = (K2 * L) * (K2 * L);

    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=h - win_size {
        for ox in 0..=w - win_size {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for wy in 0..win_size {
                for wx in 0..win_size {
                    let wgt = window[wy * win_size + wx];
                    let va = ga[(oy + wy) * w + ox + wx];
                    let vb = gb[(oy + wy) * w + ox + wx];
                    mu_a += wgt * va;
                    mu_b += wgt * vb;
                    aa += wgt * va * va;
                    bb += wgt * vb * vb;
                    ab += wgt * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += s;
            count += 1;
        }
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::SmallRng;

    fn random_image(rng: &mut SmallRng, c: usize, h: usize, w: usize) -> Tensor {
        let n = c * h * w;
        Tensor::new(vec![1, c, h, w], (0..n).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn psnr_identity_is_infinite() {
        let mut rng = SmallRng::new(1);
        let img = random_image(&mut rng, 3, 8, 8);
        assert!(psnr(&img, &img, 1.0).is_infinite());
    }

    #[test]
    fn psnr_constant_offset() {
        let a = Tensor::full(vec![1, 1, 8, 8], 0.5);
        let b = Tensor::full(vec![1, 1, 8, 8], 0.6);
        // MSE = 0.01 -> 10*log10(1/0.01) = 20 dB.
        assert!((psnr(&a, &b, 1.0) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_bruteforce_mse_oracle() {
        let mut rng = SmallRng::new(2);
        for _ in 0..5 {
            let a = random_image(&mut rng, 3, 16, 16);
            let b = random_image(&mut rng, 3, 16, 16);
            let mut acc = 0.0;
            for i in 0..a.numel() {
                let d = a.data()[i] - b.data()[i];
                acc += d * d;
            }
            let expect = 10.0 * (1.0 / (acc / a.numel() as f64)).log10();
            assert!((psnr(&a, &b, 1.0) - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let mut rng = SmallRng::new(3);
        let a = random_image(&mut rng, 3, 16, 16);
        let b = random_image(&mut rng, 3, 16, 16);
        assert!((ssim(&a, &a) - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b) - ssim(&b, &a)).abs() < 1e-12);
        assert!(ssim(&a, &b) < 1.0);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let a = Tensor::full(vec![1, 1, 16, 16], 0.5);
        let b = Tensor::full(vec![1, 1, 16, 16], 0.25);
        // Zero variances: luminance term only.
        let expect = (2.0 * 0.5 * 0.25 + 1e-4) / (0.5 * 0.5 + 0.25 * 0.25 + 1e-4);
        assert!((ssim(&a, &b) - expect).abs() < 1e-9, "{} vs {expect}", ssim(&a, &b));
    }
}

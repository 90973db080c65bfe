//! Procedural clean backgrounds, the four synthetic degradation
//! compositors, and seeded paired datasets with on-disk layout
//! `<root>/{train,test}/{x,y}/<index>.ppm` plus `spec.json`.
//!
//! Everything is a pure function of `(spec, count, size, seed)`; per-image
//! seeds are derived so generation order never matters.

pub mod pnm;

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid degradation spec: {0}")]
    InvalidSpec(String),
    #[error("crop {crop} exceeds image size {size}")]
    CropTooLarge { crop: usize, size: usize },
    #[error(transparent)]
    Pnm(#[from] pnm::PnmError),
    #[error("dataset layout error: {0}")]
    Layout(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

const SALT_BACKGROUND: u64 = 0x01;
const SALT_DEGRADE: u64 = 0x02;
const SALT_SPLIT: u64 = 0x03;
const SALT_HAZE_DEPTH: u64 = 0x04;

// ── degradation specs ───────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RainParams {
    pub streak_count: usize,
    pub length_px: f64,
    pub angle_deg: f64,
    pub intensity: f64,
    pub thickness_px: f64,
}

impl Default for RainParams {
    fn default() -> Self {
        RainParams {
            streak_count: 60,
            length_px: 9.0,
            angle_deg: 15.0,
            intensity: 0.5,
            thickness_px: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSource {
    Ramp,
    SmoothNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazeParams {
    pub beta: f64,
    pub airlight: [f64; 3],
    pub depth_source: DepthSource,
}

impl Default for HazeParams {
    fn default() -> Self {
        HazeParams {
            beta: 1.4,
            airlight: [0.9, 0.9, 0.92],
            depth_source: DepthSource::Ramp,
        }
    }
}

/// Parameters of one synthetic degradation process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegradationSpec {
    Noise { sigma: f64 },
    Rain(RainParams),
    Haze(HazeParams),
    RainHaze { rain: RainParams, haze: HazeParams },
}

impl DegradationSpec {
    pub fn noise(sigma: f64) -> Self {
        DegradationSpec::Noise { sigma }
    }

    pub fn rain() -> Self {
        DegradationSpec::Rain(RainParams::default())
    }

    pub fn haze() -> Self {
        DegradationSpec::Haze(HazeParams::default())
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let check_rain = |r: &RainParams| {
            if !(0.0..=1.0).contains(&r.intensity) {
                return Err(DataError::InvalidSpec(format!(
                    "rain intensity {} outside [0,1]",
                    r.intensity
                )));
            }
            if r.length_px < 0.0 || r.thickness_px <= 0.0 {
                return Err(DataError::InvalidSpec("rain geometry must be positive".into()));
            }
            Ok(())
        };
        let check_haze = |h: &HazeParams| {
            if h.beta < 0.0 {
                return Err(DataError::InvalidSpec(format!("beta {} must be >= 0", h.beta)));
            }
            for a in h.airlight {
                if !(0.0..=1.0).contains(&a) {
                    return Err(DataError::InvalidSpec(format!("airlight {a} outside [0,1]")));
                }
            }
            Ok(())
        };
        match self {
            DegradationSpec::Noise { sigma } if *sigma < 0.0 => {
                Err(DataError::InvalidSpec(format!("sigma {sigma} must be >= 0")))
            }
            DegradationSpec::Noise { .. } => Ok(()),
            DegradationSpec::Rain(r) => check_rain(r),
            DegradationSpec::Haze(h) => check_haze(h),
            DegradationSpec::RainHaze { rain, haze } => {
                check_rain(rain)?;
                check_haze(haze)
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DegradationSpec::Noise { .. } => "noise",
            DegradationSpec::Rain(_) => "rain",
            DegradationSpec::Haze(_) => "haze",
            DegradationSpec::RainHaze { .. } => "rain_haze",
        }
    }
}

// ── clean backgrounds ───────────────────────────────────────────────

/// Procedural scene: smooth gradient base, random rectangles and ellipses,
/// and band-limited texture, clamped inside [0.05, 0.95] so fine detail
/// survives the generators' tanh output range.
pub fn gen_background(size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = size * size;
    let mut data = vec![0.0; 3 * plane];

    // Smooth gradient base per channel.
    let gx: f64 = rng.gen_range(-0.3..0.3);
    let gy: f64 = rng.gen_range(-0.3..0.3);
    let base: [f64; 3] = [
        rng.gen_range(0.25..0.75),
        rng.gen_range(0.25..0.75),
        rng.gen_range(0.25..0.75),
    ];
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let xf = x as f64 / size as f64 - 0.5;
                let yf = y as f64 / size as f64 - 0.5;
                data[c * plane + y * size + x] = base[c] + gx * xf + gy * yf;
            }
        }
    }

    // Random rectangles and ellipses with hard edges.
    let shapes = rng.gen_range(4..=8);
    for _ in 0..shapes {
        let is_rect = rng.gen_bool(0.5);
        let cx = rng.gen_range(0.0..size as f64);
        let cy = rng.gen_range(0.0..size as f64);
        let rx = rng.gen_range(size as f64 * 0.06..size as f64 * 0.3);
        let ry = rng.gen_range(size as f64 * 0.06..size as f64 * 0.3);
        let color: [f64; 3] = [
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
        ];
        for y in 0..size {
            for x in 0..size {
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                let inside = if is_rect {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                } else {
                    dx * dx + dy * dy <= 1.0
                };
                if inside {
                    for c in 0..3 {
                        data[c * plane + y * size + x] = color[c];
                    }
                }
            }
        }
    }

    // Band-limited texture: a few random sinusoids shared across channels.
    let waves: Vec<(f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            (
                rng.gen_range(2.0..9.0),
                rng.gen_range(2.0..9.0),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.01..0.05),
            )
        })
        .collect();
    for y in 0..size {
        for x in 0..size {
            let xf = x as f64 / size as f64;
            let yf = y as f64 / size as f64;
            let mut tex = 0.0;
            for &(fx, fy, phase, amp) in &waves {
                tex += amp * (2.0 * PI * (fx * xf + fy * yf) + phase).sin();
            }
            for c in 0..3 {
                data[c * plane + y * size + x] += tex;
            }
        }
    }

    for v in data.iter_mut() {
        *v = v.clamp(0.05, 0.95);
    }
    Tensor::new(vec![1, 3, size, size], data).expect("consistent shape")
}

pub fn gen_backgrounds(count: usize, size: usize, seed: u64) -> Vec<Tensor> {
    (0..count)
        .map(|i| gen_background(size, derive_seed(seed, SALT_BACKGROUND, i as u64)))
        .collect()
}

// ── compositors ─────────────────────────────────────────────────────

fn clamp01(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// x = clamp(y + N(0, sigma)), iid per subpixel.
pub fn apply_noise(y: &Tensor, sigma: f64, seed: u64) -> Tensor {
    if sigma == 0.0 {
        return y.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma >= 0");
    let mut out = y.clone();
    for v in out.data_mut() {
        *v += normal.sample(&mut rng);
    }
    clamp01(&mut out);
    out
}

/// Anti-aliased streak layer in [0, 1]: `streak_count` segments with a
/// Gaussian cross-section (cut at 3 sigma), max-blended.
pub fn rain_streak_layer(h: usize, w: usize, params: &RainParams, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = vec![0.0f64; h * w];
    let angle = params.angle_deg.to_radians();
    let (dx, dy) = (angle.sin(), angle.cos());
    let sigma = (params.thickness_px / 2.0).max(1e-6);
    let cut = 3.0 * sigma;
    for _ in 0..params.streak_count {
        let cx: f64 = rng.gen_range(0.0..w as f64);
        let cy: f64 = rng.gen_range(0.0..h as f64);
        let half = params.length_px / 2.0;
        let (x0, y0) = (cx - dx * half, cy - dy * half);
        let (x1, y1) = (cx + dx * half, cy + dy * half);
        let min_x = (x0.min(x1) - cut).floor().max(0.0) as usize;
        let max_x = (x0.max(x1) + cut).ceil().min(w as f64 - 1.0) as usize;
        let min_y = (y0.min(y1) - cut).floor().max(0.0) as usize;
        let max_y = (y0.max(y1) + cut).ceil().min(h as f64 - 1.0) as usize;
        for py in min_y..=max_y {
            for px in min_x..=max_x {
                let d = point_segment_distance(px as f64, py as f64, x0, y0, x1, y1);
                if d <= cut {
                    let v = (-d * d / (2.0 * sigma * sigma)).exp();
                    let cell = &mut layer[py * w + px];
                    if v > *cell {
                        *cell = v;
                    }
                }
            }
        }
    }
    layer
}

fn point_segment_distance(px: f64, py: f64, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let (vx, vy) = (x1 - x0, y1 - y0);
    let len_sq = vx * vx + vy * vy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((px - x0) * vx + (py - y0) * vy) / len_sq).clamp(0.0, 1.0)
    };
    let (sx, sy) = (x0 + t * vx, y0 + t * vy);
    ((px - sx).powi(2) + (py - sy).powi(2)).sqrt()
}

/// x = clamp(y + intensity * S) with an additive white streak layer.
pub fn apply_rain(y: &Tensor, params: &RainParams, seed: u64) -> Tensor {
    let (_, c, h, w) = y.dims4().expect("image tensor");
    if params.streak_count == 0 {
        return y.clone();
    }
    let layer = rain_streak_layer(h, w, params, seed);
    let mut out = y.clone();
    let plane = h * w;
    for ch in 0..c {
        let dst = &mut out.data_mut()[ch * plane..(ch + 1) * plane];
        for (d, s) in dst.iter_mut().zip(layer.iter()) {
            *d += params.intensity * s;
        }
    }
    clamp01(&mut out);
    out
}

/// Normalized depth map in [0, 1] for the scattering model.
pub fn depth_map(h: usize, w: usize, source: DepthSource, seed: u64) -> Vec<f64> {
    match source {
        // Ground-plane proxy: far (1.0) at the top row, near (0.0) at the bottom.
        DepthSource::Ramp => {
            let mut d = vec![0.0; h * w];
            for y in 0..h {
                let v = if h > 1 { 1.0 - y as f64 / (h - 1) as f64 } else { 0.5 };
                for x in 0..w {
                    d[y * w + x] = v;
                }
            }
            d
        }
        DepthSource::SmoothNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let waves: Vec<(f64, f64, f64)> = (0..4)
                .map(|_| {
                    (
                        rng.gen_range(1.0..3.5),
                        rng.gen_range(1.0..3.5),
                        rng.gen_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            let mut d = vec![0.0; h * w];
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for y in 0..h {
                for x in 0..w {
                    let mut v = 0.0;
                    for &(fx, fy, phase) in &waves {
                        v += (2.0 * PI * (fx * x as f64 / w as f64 + fy * y as f64 / h as f64) + phase).sin();
                    }
                    lo = lo.min(v);
                    hi = hi.max(v);
                    d[y * w + x] = v;
                }
            }
            let span = (hi - lo).max(1e-12);
            for v in d.iter_mut() {
                *v = (*v - lo) / span;
            }
            d
        }
    }
}

/// Atmospheric scattering with an explicit depth map:
/// x = y * t + A * (1 - t), t = exp(-beta * d).
pub fn compose_haze(y: &Tensor, beta: f64, airlight: [f64; 3], depth: &[f64]) -> Tensor {
    let (_, c, h, w) = y.dims4().expect("image tensor");
    assert_eq!(depth.len(), h * w, "depth map size");
    let mut out = y.clone();
    let plane = h * w;
    for ch in 0..c {
        let a = airlight[ch.min(2)];
        let dst = &mut out.data_mut()[ch * plane..(ch + 1) * plane];
        for (v, d) in dst.iter_mut().zip(depth.iter()) {
            let t = (-beta * d).exp();
            *v = *v * t + a * (1.0 - t);
        }
    }
    clamp01(&mut out);
    out
}

pub fn apply_haze(y: &Tensor, params: &HazeParams, seed: u64) -> Tensor {
    if params.beta == 0.0 {
        return y.clone();
    }
    let (_, _, h, w) = y.dims4().expect("image tensor");
    let depth = depth_map(h, w, params.depth_source, derive_seed(seed, SALT_HAZE_DEPTH, 0));
    compose_haze(y, params.beta, params.airlight, &depth)
}

/// Haze first, then rain streaks attenuated by the transmission map
/// (nearer streaks brighter): x = clamp(haze(y) + intensity * S * t).
pub fn apply_rain_haze(y: &Tensor, rain: &RainParams, haze: &HazeParams, seed: u64) -> Tensor {
    let (_, c, h, w) = y.dims4().expect("image tensor");
    let hazed = apply_haze(y, haze, seed);
    if rain.streak_count == 0 {
        return hazed;
    }
    let depth = depth_map(h, w, haze.depth_source, derive_seed(seed, SALT_HAZE_DEPTH, 0));
    let layer = rain_streak_layer(h, w, rain, seed);
    let mut out = hazed;
    let plane = h * w;
    for ch in 0..c {
        let dst = &mut out.data_mut()[ch * plane..(ch + 1) * plane];
        for i in 0..plane {
            let t = (-haze.beta * depth[i]).exp();
            dst[i] += rain.intensity * layer[i] * t;
        }
    }
    clamp01(&mut out);
    out
}

pub fn degrade(y: &Tensor, spec: &DegradationSpec, seed: u64) -> Tensor {
    match spec {
        DegradationSpec::Noise { sigma } => apply_noise(y, *sigma, seed),
        DegradationSpec::Rain(r) => apply_rain(y, r, seed),
        DegradationSpec::Haze(h) => apply_haze(y, h, seed),
        DegradationSpec::RainHaze { rain, haze } => apply_rain_haze(y, rain, haze, seed),
    }
}

// ── datasets ────────────────────────────────────────────────────────

/// Seeded paired dataset, already split 8:2 into train and test.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub spec: DegradationSpec,
    pub seed: u64,
    pub size: usize,
    pub count: usize,
    /// (degraded X, clean Y) pairs.
    pub train: Vec<(Tensor, Tensor)>,
    pub test: Vec<(Tensor, Tensor)>,
}

pub fn make_dataset(
    spec: &DegradationSpec,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<PairedDataset, DataError> {
    spec.validate()?;
    if count < 2 {
        return Err(DataError::InvalidSpec("need at least 2 images to split".into()));
    }
    let pairs: Vec<(Tensor, Tensor)> = (0..count)
        .map(|i| {
            let y = gen_background(size, derive_seed(seed, SALT_BACKGROUND, i as u64));
            let x = degrade(&y, spec, derive_seed(seed, SALT_DEGRADE, i as u64));
            (x, y)
        })
        .collect();

    // Seeded shuffle, then an 8:2 split.
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SALT_SPLIT, 0));
    for i in (1..count).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let test_count = count / 5;
    let train_count = count - test_count;
    let mut pairs_by_index: Vec<Option<(Tensor, Tensor)>> = pairs.into_iter().map(Some).collect();
    let train = order[..train_count]
        .iter()
        .map(|&i| pairs_by_index[i].take().expect("unique index"))
        .collect();
    let test = order[train_count..]
        .iter()
        .map(|&i| pairs_by_index[i].take().expect("unique index"))
        .collect();
    Ok(PairedDataset {
        spec: spec.clone(),
        seed,
        size,
        count,
        train,
        test,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    spec: DegradationSpec,
    seed: u64,
    count: usize,
    size: usize,
    train_count: usize,
    test_count: usize,
}

pub fn save_dataset(ds: &PairedDataset, root: &Path) -> Result<(), DataError> {
    for (split, pairs) in [("train", &ds.train), ("test", &ds.test)] {
        for (i, (x, y)) in pairs.iter().enumerate() {
            pnm::save(&root.join(split).join("x").join(format!("{i:04}.ppm")), x, 8)?;
            pnm::save(&root.join(split).join("y").join(format!("{i:04}.ppm")), y, 8)?;
        }
    }
    let manifest = DatasetManifest {
        spec: ds.spec.clone(),
        seed: ds.seed,
        count: ds.count,
        size: ds.size,
        train_count: ds.train.len(),
        test_count: ds.test.len(),
    };
    fs::write(root.join("spec.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_dataset(root: &Path) -> Result<PairedDataset, DataError> {
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(root.join("spec.json"))?)?;
    let mut splits = Vec::new();
    for (split, n) in [("train", manifest.train_count), ("test", manifest.test_count)] {
        let mut pairs = Vec::with_capacity(n);
        for i in 0..n {
            let x = pnm::load(&root.join(split).join("x").join(format!("{i:04}.ppm")))?;
            let y = pnm::load(&root.join(split).join("y").join(format!("{i:04}.ppm")))?;
            if x.shape() != y.shape() {
                return Err(DataError::Layout(format!("pair {i} shape mismatch in {split}")));
            }
            pairs.push((x, y));
        }
        splits.push(pairs);
    }
    let test = splits.pop().expect("two splits");
    let train = splits.pop().expect("two splits");
    Ok(PairedDataset {
        spec: manifest.spec,
        seed: manifest.seed,
        size: manifest.size,
        count: manifest.count,
        train,
        test,
    })
}

/// Same seeded offset applied to both images of a pair.
pub fn random_crop(pair: &(Tensor, Tensor), crop: usize, seed: u64) -> Result<(Tensor, Tensor), DataError> {
    let (_, _, h, w) = pair.0.dims4().expect("image tensor");
    if crop > h || crop > w {
        return Err(DataError::CropTooLarge { crop, size: h.min(w) });
    }
    if crop == h && crop == w {
        return Ok(pair.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let oy = rng.gen_range(0..=h - crop);
    let ox = rng.gen_range(0..=w - crop);
    Ok((crop_at(&pair.0, oy, ox, crop), crop_at(&pair.1, oy, ox, crop)))
}

pub fn crop_at(img: &Tensor, oy: usize, ox: usize, crop: usize) -> Tensor {
    let (_, c, h, w) = img.dims4().expect("image tensor");
    assert!(oy + crop <= h && ox + crop <= w);
    let plane = h * w;
    let mut data = vec![0.0; c * crop * crop];
    for ch in 0..c {
        for y in 0..crop {
            let src = &img.data()[ch * plane + (oy + y) * w + ox..][..crop];
            data[ch * crop * crop + y * crop..][..crop].copy_from_slice(src);
        }
    }
    Tensor::new(vec![1, c, crop, crop], data).expect("consistent shape")
}

/// Lag-1 spatial autocorrelation of the residual X - Y (channel-averaged);
/// a cheap summary of how spatially structured a degradation is.
pub fn residual_lag1_autocorr(x: &Tensor, y: &Tensor) -> f64 {
    let (_, c, h, w) = x.dims4().expect("image tensor");
    let plane = h * w;
    let mut r = vec![0.0; plane];
    for ch in 0..c {
        for i in 0..plane {
            r[i] += (x.data()[ch * plane + i] - y.data()[ch * plane + i]) / c as f64;
        }
    }
    let mean = r.iter().sum::<f64>() / plane as f64;
    for v in r.iter_mut() {
        *v -= mean;
    }
    let var: f64 = r.iter().map(|v| v * v).sum::<f64>() / plane as f64;
    if var < 1e-18 {
        return 0.0;
    }
    let mut cov = 0.0;
    let mut n = 0usize;
    for y_ in 0..h {
        for x_ in 0..w.saturating_sub(1) {
            cov += r[y_ * w + x_] * r[y_ * w + x_ + 1];
            n += 1;
        }
    }
    for y_ in 0..h.saturating_sub(1) {
        for x_ in 0..w {
            cov += r[y_ * w + x_] * r[(y_ + 1) * w + x_];
            n += 1;
        }
    }
    cov / n as f64 / var
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backgrounds_are_seeded_and_bounded() {
        let a = gen_background(32, 7);
        let b = gen_background(32, 7);
        assert_eq!(a, b, "same seed, same image");
        let c = gen_background(32, 8);
        assert_ne!(a, c);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn background_histogram_entropy_exceeds_one_bit() {
        for seed in 0..8 {
            let img = gen_background(32, seed);
            let mut hist = [0usize; 16];
            for &v in img.data() {
                hist[((v * 16.0) as usize).min(15)] += 1;
            }
            let n = img.numel() as f64;
            let entropy: f64 = hist
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / n;
                    -p * p.log2()
                })
                .sum();
            assert!(entropy > 1.0, "seed {seed}: entropy {entropy}");
        }
    }

    #[test]
    fn noise_zero_sigma_is_identity_and_std_matches() {
        let y = gen_background(64, 1);
        assert_eq!(apply_noise(&y, 0.0, 5), y);

        // Mid-range image avoids the clamp, so std(x - y) ~ sigma.
        let flat = Tensor::full(vec![1, 3, 64, 64], 0.5);
        let sigma = 0.05;
        let x = apply_noise(&flat, sigma, 3);
        let n = x.numel() as f64;
        let mean_diff: f64 = x
            .data()
            .iter()
            .zip(flat.data())
            .map(|(a, b)| a - b)
            .sum::<f64>()
            / n;
        let var: f64 = x
            .data()
            .iter()
            .zip(flat.data())
            .map(|(a, b)| (a - b - mean_diff).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        assert!((std - sigma).abs() / sigma < 0.05, "std {std} vs sigma {sigma}");
    }

    #[test]
    fn noise_psnr_decreases_with_sigma() {
        let y = gen_background(32, 2);
        let mse = |a: &Tensor, b: &Tensor| -> f64 {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / a.numel() as f64
        };
        let m1 = mse(&apply_noise(&y, 0.05, 9), &y);
        let m2 = mse(&apply_noise(&y, 0.15, 9), &y);
        assert!(m2 > m1);
    }

    #[test]
    fn rain_zero_streaks_identity_and_brightens() {
        let y = gen_background(32, 3);
        let mut params = RainParams::default();
        params.streak_count = 0;
        assert_eq!(apply_rain(&y, &params, 1), y);

        let params = RainParams::default();
        let x = apply_rain(&y, &params, 1);
        let mean_x: f64 = x.data().iter().sum::<f64>() / x.numel() as f64;
        let mean_y: f64 = y.data().iter().sum::<f64>() / y.numel() as f64;
        assert!(mean_x >= mean_y, "additive streaks brighten");
    }

    #[test]
    fn rain_coverage_matches_independent_rasterizer() {
        // Oracle: coarse supersampled binary coverage of the same seeded
        // segment set, counted independently of the renderer.
        let params = RainParams {
            streak_count: 12,
            length_px: 9.0,
            angle_deg: 20.0,
            intensity: 1.0,
            thickness_px: 1.2,
        };
        let (h, w, seed) = (48usize, 48usize, 77u64);
        let layer = rain_streak_layer(h, w, &params, seed);
        let rendered = layer.iter().filter(|&&v| v > 0.05).count() as f64 / (h * w) as f64;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angle = params.angle_deg.to_radians();
        let (dx, dy) = (angle.sin(), angle.cos());
        let mut covered = vec![false; h * w];
        for _ in 0..params.streak_count {
            let cx: f64 = rng.gen_range(0.0..w as f64);
            let cy: f64 = rng.gen_range(0.0..h as f64);
            let half = params.length_px / 2.0;
            // Walk the segment densely; mark pixels within the soft radius.
            let steps = (params.length_px * 8.0) as usize + 1;
            for s in 0..=steps {
                let t = s as f64 / steps as f64 - 0.5;
                let px = cx + dx * params.length_px * t;
                let py = cy + dy * params.length_px * t;
                let rad = params.thickness_px * 1.2;
                let x_lo = (px - rad).floor().max(0.0) as usize;
                let x_hi = (px + rad).ceil().min(w as f64 - 1.0) as usize;
                let y_lo = (py - rad).floor().max(0.0) as usize;
                let y_hi = (py + rad).ceil().min(h as f64 - 1.0) as usize;
                for yy in y_lo..=y_hi {
                    for xx in x_lo..=x_hi {
                        let d = ((xx as f64 - px).powi(2) + (yy as f64 - py).powi(2)).sqrt();
                        if d <= rad {
                            covered[yy * w + xx] = true;
                        }
                    }
                }
                let _ = half;
            }
        }
        let expected = covered.iter().filter(|&&c| c).count() as f64 / (h * w) as f64;
        assert!(
            (rendered - expected).abs() < 0.35 * expected.max(0.02),
            "coverage {rendered:.4} vs oracle {expected:.4}"
        );
    }

    #[test]
    fn haze_limits() {
        let y = gen_background(32, 4);
        let mut params = HazeParams::default();
        params.beta = 0.0;
        assert_eq!(apply_haze(&y, &params, 1), y);

        // beta -> infinity: x -> airlight everywhere except the zero-depth row.
        let params = HazeParams {
            beta: 50.0,
            airlight: [0.8, 0.85, 0.9],
            depth_source: DepthSource::SmoothNoise,
        };
        let x = apply_haze(&y, &params, 1);
        let (_, _, h, w) = x.dims4().unwrap();
        let depth = depth_map(h, w, params.depth_source, derive_seed(1, SALT_HAZE_DEPTH, 0));
        let plane = h * w;
        let mut sup: f64 = 0.0;
        for c in 0..3 {
            for i in 0..plane {
                if depth[i] > 0.5 {
                    sup = sup.max((x.data()[c * plane + i] - params.airlight[c]).abs());
                }
            }
        }
        assert!(sup < 1e-6, "sup-norm to airlight {sup}");
    }

    #[test]
    fn haze_uniform_depth_closed_form() {
        let y = gen_background(16, 5);
        let depth = vec![std::f64::consts::LN_2; 16 * 16];
        let a = [0.9, 0.9, 0.9];
        let x = compose_haze(&y, 1.0, a, &depth);
        for c in 0..3 {
            for i in 0..256 {
                let expect = 0.5 * y.data()[c * 256 + i] + 0.5 * a[c];
                assert!((x.data()[c * 256 + i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rain_haze_reductions() {
        let y = gen_background(32, 6);
        let rain = RainParams::default();
        let haze = HazeParams::default();

        let mut no_rain = rain.clone();
        no_rain.streak_count = 0;
        assert_eq!(apply_rain_haze(&y, &no_rain, &haze, 9), apply_haze(&y, &haze, 9));

        let mut no_haze = haze.clone();
        no_haze.beta = 0.0;
        assert_eq!(apply_rain_haze(&y, &rain, &no_haze, 9), apply_rain(&y, &rain, 9));

        let x = apply_rain_haze(&y, &rain, &haze, 9);
        assert!(x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn dataset_split_and_determinism() {
        let spec = DegradationSpec::noise(0.1);
        let ds = make_dataset(&spec, 10, 16, 3).unwrap();
        assert_eq!(ds.train.len(), 8);
        assert_eq!(ds.test.len(), 2);
        let ds2 = make_dataset(&spec, 10, 16, 3).unwrap();
        for (a, b) in ds.train.iter().zip(ds2.train.iter()) {
            assert_eq!(a, b, "bit-exact regeneration");
        }
        // Disjoint splits: no train X appears in test.
        for (tx, _) in &ds.train {
            assert!(!ds.test.iter().any(|(x, _)| x == tx));
        }
    }

    #[test]
    fn dataset_roundtrip_through_disk() {
        let spec = DegradationSpec::rain();
        let ds = make_dataset(&spec, 5, 16, 11).unwrap();
        let root = std::env::temp_dir().join("restoreib-ds-test");
        std::fs::remove_dir_all(&root).ok();
        save_dataset(&ds, &root).unwrap();
        let back = load_dataset(&root).unwrap();
        assert_eq!(back.train.len(), ds.train.len());
        assert_eq!(back.test.len(), ds.test.len());
        // 8-bit quantization: loaded values within half a step.
        for ((x, _), (bx, _)) in ds.train.iter().zip(back.train.iter()) {
            for (a, b) in x.data().iter().zip(bx.data()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
        std::fs::remove_dir_all(&root).ok();
    }

    #[test]
    fn crop_alignment_and_bounds() {
        let spec = DegradationSpec::noise(0.2);
        let ds = make_dataset(&spec, 4, 24, 5).unwrap();
        let pair = &ds.train[0];
        let identity = random_crop(pair, 24, 0).unwrap();
        assert_eq!(&identity, pair);
        for seed in 0..1000 {
            let (cx, cy) = random_crop(pair, 9, seed).unwrap();
            assert_eq!(cx.shape(), &[1, 3, 9, 9]);
            assert_eq!(cy.shape(), &[1, 3, 9, 9]);
            assert!(cx.is_finite() && cy.is_finite());
        }
        assert!(matches!(
            random_crop(pair, 25, 0),
            Err(DataError::CropTooLarge { .. })
        ));
    }

    #[test]
    fn crop_offsets_match_between_x_and_y() {
        // Degrade with zero magnitude so X == Y; any offset mismatch would
        // break equality of the crops.
        let y = gen_background(24, 9);
        let pair = (y.clone(), y);
        for seed in 0..50 {
            let (cx, cy) = random_crop(&pair, 10, seed).unwrap();
            assert_eq!(cx, cy);
        }
    }

    #[test]
    fn abstraction_ordering_via_autocorrelation() {
        // noise is pixel-iid, rain local-geometric, haze global: the lag-1
        // autocorrelation of the residual must order accordingly.
        let mut acs = [0.0f64; 3];
        let n = 6;
        for i in 0..n {
            let y = gen_background(48, 100 + i);
            let seed = 200 + i;
            let xn = apply_noise(&y, 0.1, seed);
            let xr = apply_rain(&y, &RainParams::default(), seed);
            let xh = apply_haze(&y, &HazeParams::default(), seed);
            acs[0] += residual_lag1_autocorr(&xn, &y) / n as f64;
            acs[1] += residual_lag1_autocorr(&xr, &y) / n as f64;
            acs[2] += residual_lag1_autocorr(&xh, &y) / n as f64;
        }
        assert!(acs[0] < acs[1] && acs[1] < acs[2], "ordering {acs:?}");
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(DegradationSpec::noise(-0.1).validate().is_err());
        let mut r = RainParams::default();
        r.intensity = 1.5;
        assert!(DegradationSpec::Rain(r).validate().is_err());
        let mut h = HazeParams::default();
        h.airlight = [0.5, 1.2, 0.5];
        assert!(DegradationSpec::Haze(h).validate().is_err());
    }
}

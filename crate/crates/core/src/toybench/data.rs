//! Eight-class synthetic clips, two classes per axial family.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{config_err, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

pub const NUM_CLASSES: usize = 8;

/// Side of the static square and of the flashing patches.
const PATCH: usize = 8;
/// Side of the drifting dot.
const DOT: usize = 4;
/// Dot displacement per frame.
const DRIFT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Global,
    Spatial,
    Temporal,
    Local,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Global, Family::Spatial, Family::Temporal, Family::Local];

    pub fn of(class: usize) -> Family {
        Self::ALL[class / 2 % 4]
    }

    pub fn classes(self) -> [usize; 2] {
        let i = Self::ALL.iter().position(|&f| f == self).unwrap_or(0);
        [2 * i, 2 * i + 1]
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Global => "global",
            Family::Spatial => "spatial",
            Family::Temporal => "temporal",
            Family::Local => "local",
        }
    }
}

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "ramp_up",
    "ramp_down",
    "square_upper_left",
    "square_lower_right",
    "flash_a_then_b",
    "flash_b_then_a",
    "dot_drift_left",
    "dot_drift_right",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipGeometry {
    pub frames: usize,
    pub size: usize,
}

impl Default for ClipGeometry {
    fn default() -> Self {
        ClipGeometry { frames: 8, size: 32 }
    }
}

/// Class-independent randomness of one clip; rendering any class of a family
/// from the same parameters yields the same time-averaged content.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipParams {
    pub background: f64,
    /// Ramp endpoints.
    pub low: f64,
    pub high: f64,
    pub intensity: f64,
    /// Top-left offsets of the first and second object.
    pub row_a: usize,
    pub col_a: usize,
    pub row_b: usize,
    pub col_b: usize,
}

impl ClipParams {
    pub fn sample<R: Rng + ?Sized>(geom: ClipGeometry, rng: &mut R) -> Result<Self> {
        let s = geom.size;
        let half = s / 2;
        let travel = DRIFT * geom.frames.saturating_sub(1) + DOT;
        if half < PATCH || s < travel + 2 || geom.frames < 2 {
            return Err(config_err!("clip geometry {geom:?} too small for the object layout"));
        }
        let low = rng.gen_range(0.05..0.25);
        Ok(ClipParams {
            background: rng.gen_range(0.0..0.2),
            low,
            high: low + rng.gen_range(0.5..0.7),
            intensity: rng.gen_range(0.7..1.0),
            row_a: rng.gen_range(0..=half - PATCH),
            col_a: rng.gen_range(0..=half - PATCH),
            row_b: rng.gen_range(0..=s - DOT),
            col_b: rng.gen_range(0..=s - travel),
        })
    }
}

fn fill(frame: &mut [f64], size: usize, row: usize, col: usize, side: usize, v: f64) {
    for r in row..(row + side).min(size) {
        for c in col..(col + side).min(size) {
            frame[r * size + c] = v;
        }
    }
}

/// Renders `class` as `frames x size x size` values, adding Gaussian noise of
/// std `noise` and clamping to `[0, 1]`.
pub fn render<R: Rng + ?Sized>(
    class: usize,
    p: &ClipParams,
    geom: ClipGeometry,
    noise: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if class >= NUM_CLASSES {
        return Err(config_err!("class {class} out of range"));
    }
    let (t_len, s) = (geom.frames, geom.size);
    let half = s / 2;
    let mut out = vec![p.background; t_len * s * s];
    for (t, frame) in out.chunks_mut(s * s).enumerate() {
        match class {
            0 | 1 => {
                let frac = t as f64 / (t_len - 1) as f64;
                let frac = if class == 0 { frac } else { 1.0 - frac };
                frame.fill(p.low + (p.high - p.low) * frac);
            }
            2 => fill(frame, s, p.row_a, p.col_a, PATCH, p.intensity),
            3 => fill(frame, s, half + p.row_a, half + p.col_a, PATCH, p.intensity),
            4 | 5 => {
                // A sits in the left half, B in the right half, same rows.
                let first_half = t < t_len / 2;
                let show_a = first_half == (class == 4);
                let col = if show_a { p.col_a } else { half + p.col_a };
                fill(frame, s, p.row_a + half / 2, col, PATCH, p.intensity);
            }
            _ => {
                let step = if class == 6 { t_len - 1 - t } else { t };
                fill(frame, s, p.row_b, p.col_b + DRIFT * step, DOT, p.intensity);
            }
        }
    }
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).map_err(|e| config_err!("noise: {e}"))?;
        for v in &mut out {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    /// `[1, T, H, W, 1]` pixel values in `[0, 1]`.
    pub frames: Tensor<f64>,
    pub label: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub geometry: ClipGeometry,
    pub noise: f64,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn new(per_class: usize, noise: f64, seed: u64) -> Self {
        DatasetConfig { num_classes: NUM_CLASSES, per_class, geometry: ClipGeometry::default(), noise, seed }
    }
}

/// Seed of clip `index` in a dataset seeded with `seed`.
pub fn clip_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One clip per `(index mod 8)` class, each from its own seeded generator.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<SyntheticClip>> {
    if cfg.num_classes != NUM_CLASSES {
        return Err(config_err!("the axial dataset has exactly {NUM_CLASSES} classes, got {}", cfg.num_classes));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(config_err!("noise sigma must be finite and non-negative"));
    }
    let g = cfg.geometry;
    (0..cfg.per_class * NUM_CLASSES)
        .into_par_iter()
        .map(|i| {
            let seed = clip_seed(cfg.seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let label = i % NUM_CLASSES;
            let params = ClipParams::sample(g, &mut rng)?;
            let data = render(label, &params, g, cfg.noise, &mut rng)?;
            let frames = Tensor::from_vec(Shape::new(1, g.frames, g.size, g.size, 1), data)?;
            Ok(SyntheticClip { frames, label, seed })
        })
        .collect()
}

/// Pixel normalization applied when clips are batched for a network.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

/// Stacks clips into a normalized `[N, T, H, W, 1]` batch.
pub fn batch<F: Real>(clips: &[&SyntheticClip]) -> Result<(Tensor<F>, Vec<usize>)> {
    let first = clips.first().ok_or_else(|| config_err!("empty batch"))?.frames.shape();
    let mut data = Vec::with_capacity(first.numel() * clips.len());
    for c in clips {
        if c.frames.shape() != first {
            return Err(config_err!("clips of different shapes in one batch"));
        }
        data.extend(c.frames.data().iter().map(|&v| F::from_f64_lossy((v - PIXEL_MEAN) / PIXEL_STD)));
    }
    let shape = Shape::new(clips.len(), first.t(), first.h(), first.w(), first.c());
    Ok((Tensor::from_vec(shape, data)?, clips.iter().map(|c| c.label).collect()))
}

/// Hand-written classifier for noise-free clips.
pub fn rule_classify(clip: &Tensor<f64>) -> usize {
    let s = clip.shape();
    let (t_len, h, w) = (s.t(), s.h(), s.w());
    let frame = |t: usize| &clip.data()[t * h * w..(t + 1) * h * w];
    let mean = |t: usize| frame(t).iter().sum::<f64>() / (h * w) as f64;
    let uniform = (0..t_len).all(|t| {
        let f = frame(t);
        f.iter().all(|&v| (v - f[0]).abs() < 1e-9)
    });
    if uniform {
        return if mean(t_len - 1) > mean(0) { 0 } else { 1 };
    }
    // Foreground = pixels brighter than the frame minimum.
    let centroid = |t: usize| {
        let f = frame(t);
        let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
        let (mut n, mut r, mut c) = (0.0f64, 0.0f64, 0.0f64);
        for (i, &v) in f.iter().enumerate() {
            if v > lo + 1e-9 {
                n += 1.0;
                r += (i / w) as f64;
                c += (i % w) as f64;
            }
        }
        (n, r / n.max(1.0), c / n.max(1.0))
    };
    let static_clip = (1..t_len).all(|t| frame(t) == frame(0));
    let (n0, r0, c0) = centroid(0);
    let (_, _, c_last) = centroid(t_len - 1);
    if static_clip {
        return if r0 < h as f64 / 2.0 && c0 < w as f64 / 2.0 { 2 } else { 3 };
    }
    if n0 > (DOT * DOT) as f64 {
        if c0 < w as f64 / 2.0 {
            4
        } else {
            5
        }
    } else if c_last < c0 {
        6
    } else {
        7
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(noise: f64) -> DatasetConfig {
        DatasetConfig::new(6, noise, 42)
    }

    #[test]
    fn rule_oracle_is_perfect_without_noise() {
        for clip in generate_dataset(&cfg(0.0)).unwrap() {
            assert_eq!(rule_classify(&clip.frames), clip.label, "seed {}", clip.seed);
        }
    }

    #[test]
    fn temporal_pair_has_equal_time_average() {
        let g = ClipGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = ClipParams::sample(g, &mut rng).unwrap();
            let a = render(4, &p, g, 0.0, &mut rng).unwrap();
            let b = render(5, &p, g, 0.0, &mut rng).unwrap();
            assert_ne!(a, b);
            let avg = |v: &[f64]| -> Vec<f64> {
                let n = g.size * g.size;
                (0..n).map(|i| (0..g.frames).map(|t| v[t * n + i]).sum::<f64>() / g.frames as f64).collect()
            };
            for (x, y) in avg(&a).iter().zip(avg(&b)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = generate_dataset(&cfg(0.05)).unwrap();
        let b = generate_dataset(&cfg(0.05)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|c| c.frames.data().iter().all(|v| (0.0..=1.0).contains(v))));
        assert!(generate_dataset(&DatasetConfig { num_classes: 7, ..cfg(0.0) }).is_err());
    }
}

//! Synthetic ultrasound-like videos with one nodule track each.
//!
//! The scene is a static speckle texture viewed through a window that sweeps
//! across it. Sweep speed grows linearly with distance from the key-frame, so
//! neighbouring frames are most alike there. The nodule is largest, sharpest
//! and most contrasted at the key-frame. Benign nodules have smooth outlines
//! and low-frequency interiors; malignant ones irregular outlines, darker
//! interiors and fine speckle.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::crop::crop_and_resize;
use super::{GrayFrame, Label, Roi, VideoSample, FEATURE_DIM};
use crate::error::{config_err, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub videos: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Share of malignant videos; the count is rounded to the nearest integer.
    pub malignant_fraction: f64,
    /// Probability that a non-key frame has no detection.
    pub miss_rate: f64,
    /// Standard deviation of the noise added to appearance features.
    pub feature_noise: f64,
    /// Clip length the dataset must support.
    pub clip_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            videos: 100,
            frames: 96,
            width: 256,
            height: 256,
            malignant_fraction: 0.5,
            miss_rate: 0.02,
            feature_noise: 0.01,
            clip_len: 32,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < self.clip_len {
            return config_err(format!(
                "videos of {} frames are shorter than the clip length {}",
                self.frames, self.clip_len
            ));
        }
        if self.frames < 5 {
            return config_err("synthetic videos need at least 5 frames");
        }
        if self.width < 32 || self.height < 32 {
            return config_err("synthetic frames must be at least 32x32");
        }
        if !(0.0..=1.0).contains(&self.malignant_fraction) || !(0.0..1.0).contains(&self.miss_rate)
        {
            return config_err("malignant_fraction must be in [0,1] and miss_rate in [0,1)");
        }
        if self.feature_noise < 0.0 || !self.feature_noise.is_finite() {
            return config_err("feature_noise must be non-negative");
        }
        Ok(())
    }
}

/// Smooth random field: bilinear interpolation of a coarse grid of values in `[-1, 1]`.
struct ValueNoise {
    cell: f64,
    gw: usize,
    grid: Vec<f64>,
}

impl ValueNoise {
    fn new(width: usize, height: usize, cell: f64, rng: &mut Rng) -> Self {
        let gw = (width as f64 / cell).ceil() as usize + 2;
        let gh = (height as f64 / cell).ceil() as usize + 2;
        let grid = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
        ValueNoise { cell, gw, grid }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        // smoothstep for C1 continuity
        let (fx, fy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
        let g = |i: usize, j: usize| self.grid[j * self.gw + i];
        let top = g(x0, y0) * (1.0 - fx) + g(x0 + 1, y0) * fx;
        let bot = g(x0, y0 + 1) * (1.0 - fx) + g(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }
}

/// Background tissue texture in world coordinates.
struct World {
    width: usize,
    height: usize,
    texels: Vec<f64>,
}

impl World {
    fn new(width: usize, height: usize, scale: f64, rng: &mut Rng) -> Self {
        let coarse = ValueNoise::new(width, height, 24.0 * scale, rng);
        let medium = ValueNoise::new(width, height, 6.0 * scale, rng);
        let mut texels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (fx, fy) = (x as f64, y as f64);
                let base = 0.5 + 0.12 * coarse.at(fx, fy) + 0.08 * medium.at(fx, fy);
                let speckle: f64 = 0.4 + 1.2 * rng.random::<f64>();
                texels.push(base * speckle);
            }
        }
        // band-limit the speckle so sub-pixel resampling does not change its blur
        for _ in 0..2 {
            smooth121(&mut texels, width, height);
        }
        World {
            width,
            height,
            texels,
        }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 2) as f64);
        let y = y.clamp(0.0, (self.height - 2) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let i = y0 * self.width + x0;
        let t = &self.texels;
        let top = t[i] * (1.0 - fx) + t[i + 1] * fx;
        let bot = t[i + self.width] * (1.0 - fx) + t[i + self.width + 1] * fx;
        top * (1.0 - fy) + bot * fy
    }
}

/// Separable `[1, 2, 1] / 4` blur with edge clamping.
fn smooth121(values: &mut [f64], width: usize, height: usize) {
    let mut tmp = values.to_vec();
    for y in 0..height {
        let row = &values[y * width..(y + 1) * width];
        for x in 0..width {
            let l = row[x.saturating_sub(1)];
            let r = row[(x + 1).min(width - 1)];
            tmp[y * width + x] = 0.25 * l + 0.5 * row[x] + 0.25 * r;
        }
    }
    for y in 0..height {
        let (u, d) = (y.saturating_sub(1), (y + 1).min(height - 1));
        for x in 0..width {
            values[y * width + x] =
                0.25 * tmp[u * width + x] + 0.5 * tmp[y * width + x] + 0.25 * tmp[d * width + x];
        }
    }
}

/// Per-video nodule appearance.
struct Nodule {
    label: Label,
    radius: f64,
    aspect: f64,
    harmonics: Vec<(f64, f64, f64)>,
    interior: ValueNoise,
    speckle: Vec<f64>,
    speckle_side: usize,
}

impl Nodule {
    fn new(label: Label, min_side: f64, rng: &mut Rng) -> Self {
        let radius = rng.random_range(0.12..0.17) * min_side;
        let aspect = rng.random_range(0.75..1.0);
        let harmonics = match label {
            Label::Benign => vec![
                (
                    2.0,
                    rng.random_range(0.01..0.04),
                    rng.random_range(0.0..TAU),
                ),
                (
                    3.0,
                    rng.random_range(0.01..0.03),
                    rng.random_range(0.0..TAU),
                ),
            ],
            Label::Malignant => [5.0, 7.0, 9.0, 11.0]
                .iter()
                .map(|&m| (m, rng.random_range(0.05..0.09), rng.random_range(0.0..TAU)))
                .collect(),
        };
        let side = (2.0 * radius) as usize + 8;
        let interior = ValueNoise::new(side * 2, side * 2, radius * 0.6, rng);
        let speckle = (0..side * side)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Nodule {
            label,
            radius,
            aspect,
            harmonics,
            interior,
            speckle,
            speckle_side: side,
        }
    }

    fn boundary(&self, phi: f64) -> f64 {
        1.0 + self
            .harmonics
            .iter()
            .map(|&(m, a, p)| a * (m * phi + p).sin())
            .sum::<f64>()
    }

    /// Echo level inside the nodule at offset `(dx, dy)` from its centre.
    fn interior_level(&self, dx: f64, dy: f64) -> f64 {
        let off = self.speckle_side as f64;
        match self.label {
            Label::Benign => 0.30 + 0.07 * self.interior.at(dx + off, dy + off),
            Label::Malignant => {
                let s = self.speckle_side as i64;
                let ix = (dx.round() as i64).rem_euclid(s) as usize;
                let iy = (dy.round() as i64).rem_euclid(s) as usize;
                0.15 + 0.11 * self.speckle[iy * self.speckle_side + ix]
            }
        }
    }
}

// Appearance features are the 16x16 ROI patch shifted and scaled to roughly zero
// mean and unit spread, like a normalised backbone embedding.
const FEATURE_CENTRE: f64 = 0.3;
const FEATURE_GAIN: f64 = 3.0;

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn generate_video(cfg: &SynthConfig, index: usize, label: Label, seed: u64) -> Result<VideoSample> {
    let mut r = rng::stream(seed, rng::DATA, index as u64);
    let (w, h, n) = (cfg.width, cfg.height, cfg.frames);
    let scale = w.min(h) as f64 / 256.0;
    let k_lo = n / 6;
    let k_hi = (5 * n / 6).max(k_lo + 1);
    let key = r.random_range(k_lo..k_hi).min(n - 1);

    // sweep: speed on the step between frame j and j+1 grows with |j + 1/2 - key|
    let v_max = r.random_range(1.0..2.0) * scale;
    let v_min = 0.03 * scale;
    let ramp = r.random_range(2.0..3.0) * n as f64 / 96.0;
    let theta: f64 = r.random_range(-0.3..0.3)
        + if r.random_bool(0.5) {
            0.0
        } else {
            std::f64::consts::PI
        };
    let (dir_x, dir_y) = (theta.cos(), theta.sin());
    let mut pos = vec![0.0f64; n];
    for j in 1..n {
        let d = ((j as f64 - 0.5) - key as f64).abs();
        pos[j] = pos[j - 1] + v_min + (v_max - v_min) * (d / ramp).min(1.0);
    }
    let travel = pos[n - 1];
    let world_w = w + (travel * dir_x.abs()).ceil() as usize + 4;
    let world_h = h + (travel * dir_y.abs()).ceil() as usize + 4;
    let world = World::new(world_w, world_h, scale.max(0.25), &mut r);
    // view origin in world coordinates for frame i
    let origin = |i: usize| -> (f64, f64) {
        let ox = if dir_x >= 0.0 {
            pos[i] * dir_x
        } else {
            travel * -dir_x + pos[i] * dir_x
        };
        let oy = if dir_y >= 0.0 {
            pos[i] * dir_y
        } else {
            travel * -dir_y + pos[i] * dir_y
        };
        (ox + 1.0, oy + 1.0)
    };

    let nodule = Nodule::new(label, w.min(h) as f64, &mut r);
    let size_width = r.random_range(12.0..18.0) * n as f64 / 96.0;
    let centre = (
        w as f64 / 2.0 + r.random_range(-0.08..0.08) * w as f64,
        h as f64 / 2.0 + r.random_range(-0.08..0.08) * h as f64,
    );
    let drift = 0.12;
    let noise_amp = 0.02;
    let feature_noise = Normal::new(0.0, cfg.feature_noise.max(1e-300)).expect("valid sd");

    let mut frames = Vec::with_capacity(n);
    let mut rois = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    let mut values = vec![0.0; w * h];
    for i in 0..n {
        let g = (-((i as f64 - key as f64) / size_width).powi(2)).exp();
        let s = 0.55 + 0.45 * g;
        let contrast = 0.55 + 0.45 * g;
        let edge = 0.6 + 2.5 * (1.0 - g);
        let (rx, ry) = (nodule.radius * s, nodule.radius * s * nodule.aspect);
        let shift = drift * (pos[i] - pos[key]);
        let margin = 1.5 * rx + 4.0;
        let cx = (centre.0 - shift * dir_x).clamp(margin, w as f64 - margin);
        let cy = (centre.1 - shift * dir_y).clamp(margin, h as f64 - margin);
        let (ox, oy) = origin(i);
        for y in 0..h {
            for x in 0..w {
                values[y * w + x] = world.sample(ox + x as f64, oy + y as f64)
                    + r.random_range(-noise_amp..noise_amp);
            }
        }
        let (mut bx1, mut by1, mut bx2, mut by2) = (usize::MAX, usize::MAX, 0usize, 0usize);
        let reach = (1.5 * rx).ceil() as i64 + 3;
        let (ix, iy) = (cx.round() as i64, cy.round() as i64);
        for y in (iy - reach).max(0)..(iy + reach).min(h as i64) {
            for x in (ix - reach).max(0)..(ix + reach).min(w as i64) {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let rho = ((dx / rx).powi(2) + (dy / ry).powi(2)).sqrt();
                let phi = dy.atan2(dx);
                let d = rho / nodule.boundary(phi);
                let mask = logistic((1.0 - d) * rx / edge);
                if mask < 1e-4 {
                    continue;
                }
                let (xu, yu) = (x as usize, y as usize);
                let bg = values[yu * w + xu];
                values[yu * w + xu] = bg + contrast * mask * (nodule.interior_level(dx, dy) - bg);
                if mask >= 0.5 {
                    bx1 = bx1.min(xu);
                    by1 = by1.min(yu);
                    bx2 = bx2.max(xu + 1);
                    by2 = by2.max(yu + 1);
                }
            }
        }
        let frame = GrayFrame::from_unit(w, h, &values)?;
        let detected = i == key || !r.random_bool(cfg.miss_rate);
        if bx1 == usize::MAX || !detected {
            rois.push(None);
            features.push(None);
        } else {
            let roi = Roi::new(bx1 as u32, by1 as u32, bx2 as u32, by2 as u32);
            let patch = crop_and_resize(&frame, &roi, 16)?;
            debug_assert_eq!(patch.len(), FEATURE_DIM);
            let feat: Vec<f64> = patch
                .iter()
                .map(|v| {
                    ((v - FEATURE_CENTRE) * FEATURE_GAIN + feature_noise.sample(&mut r)) as f32
                        as f64
                })
                .collect();
            rois.push(Some(roi));
            features.push(Some(feat));
        }
        frames.push(frame);
    }
    let sample = VideoSample {
        id: format!("v{index:04}"),
        frames,
        rois,
        features,
        key_frame_index: key,
        label,
    };
    sample.validate()?;
    Ok(sample)
}

/// Generates `cfg.videos` videos; the class histogram matches the requested balance exactly.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Vec<VideoSample>> {
    cfg.validate()?;
    let n_mal = (cfg.videos as f64 * cfg.malignant_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..cfg.videos)
        .map(|i| {
            if i < n_mal {
                Label::Malignant
            } else {
                Label::Benign
            }
        })
        .collect();
    labels.shuffle(&mut rng::stream(seed, rng::DATA, u64::MAX));
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| generate_video(cfg, i, l, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            videos: 5,
            frames: 40,
            width: 64,
            height: 64,
            clip_len: 16,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = generate_synthetic(&small(), 3).unwrap();
        let b = generate_synthetic(&small(), 3).unwrap();
        assert_eq!(a, b);
        let mal = a.iter().filter(|v| v.label == Label::Malignant).count();
        assert_eq!(mal, 3); // round(2.5) away from zero
        for v in &a {
            v.validate().unwrap();
        }
    }

    #[test]
    fn rejects_videos_shorter_than_clip() {
        let cfg = SynthConfig {
            frames: 20,
            clip_len: 32,
            ..small()
        };
        assert!(generate_synthetic(&cfg, 1).is_err());
    }

    #[test]
    fn nodule_is_largest_at_key_frame() {
        for v in generate_synthetic(&small(), 8).unwrap() {
            let key_area = v.rois[v.key_frame_index].unwrap().area();
            let max_area = v.rois.iter().flatten().map(Roi::area).max().unwrap();
            assert!(key_area as f64 >= 0.9 * max_area as f64);
        }
    }
}

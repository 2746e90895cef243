//! Deterministic synthetic leak clips with exact ground truth.
//!
//! A plume is a stream of isotropic Gaussian puffs born at an emission point.
//! Each puff drifts, jitters, and grows while its peak opacity falls so that
//! its integrated opacity stays constant. Puff opacities combine as stacked
//! semi-transparent layers, `1 - prod(1 - a_i)`, and brighten the background
//! additively. Interferers are opaque shapes painted over the plume; they are
//! never part of the ground truth.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with `SceneSpec::seed`
//! and standard-normal draws from `rand_distr`, consumed in a fixed order, so
//! a spec always renders to the same bytes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::dataset::{write_clip, DatasetError, Manifest, ManifestEntry};
use crate::types::{BinaryMask, Frame, VideoClip};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Background {
    /// Horizontal ramp from `left` to `right`.
    Gradient { left: u8, right: u8 },
    /// Static per-pixel texture around `base`.
    NoiseTextured { base: u8, texture_sigma: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlumeSpec {
    pub emission: (f32, f32),
    /// Mean displacement per frame.
    pub drift: (f32, f32),
    /// Random-walk step (pixels per frame, per axis) added to the drift.
    pub turbulence: f32,
    /// Puffs born per frame; fractional rates accumulate.
    pub birth_rate: f32,
    /// Growth of a puff's standard deviation, pixels per frame.
    pub growth_rate: f32,
    pub initial_sigma: f32,
    pub peak_opacity: f32,
    /// Brightness added at full opacity.
    pub intensity: f32,
    /// First frame on which puffs are born.
    pub start_frame: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interferer {
    pub shape: Shape,
    pub size: (f32, f32),
    pub intensity: u8,
    /// Center at frame 0.
    pub start: (f32, f32),
    pub velocity: (f32, f32),
}

impl Interferer {
    fn center(&self, t: usize) -> (f32, f32) {
        (
            self.start.0 + self.velocity.0 * t as f32,
            self.start.1 + self.velocity.1 * t as f32,
        )
    }

    fn covers(&self, t: usize, x: usize, y: usize) -> bool {
        let (cx, cy) = self.center(t);
        let (hx, hy) = (self.size.0 / 2.0, self.size.1 / 2.0);
        let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
        match self.shape {
            Shape::Rectangle => dx.abs() < hx && dy.abs() < hy,
            Shape::Ellipse => (dx / hx).powi(2) + (dy / hy).powi(2) < 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub id: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub background: Background,
    /// Per-frame sensor noise.
    pub noise_sigma: f32,
    pub plume: PlumeSpec,
    pub interferers: Vec<Interferer>,
    /// Plume opacity above which a pixel is ground-truth positive.
    pub gt_alpha_threshold: f32,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.width == 0 || self.height == 0 || self.frame_count == 0 {
            return bad("width, height and frame_count must be positive".into());
        }
        let p = &self.plume;
        let (ex, ey) = p.emission;
        if !(ex >= 0.0 && ey >= 0.0 && ex < self.width as f32 && ey < self.height as f32) {
            return bad(format!("emission point {:?} outside the image", p.emission));
        }
        if !(p.peak_opacity > 0.0 && p.peak_opacity <= 1.0) {
            return bad(format!("peak opacity {} outside (0, 1]", p.peak_opacity));
        }
        if !(p.birth_rate >= 0.0 && p.growth_rate >= 0.0 && p.initial_sigma > 0.0 && p.turbulence >= 0.0) {
            return bad("plume rates must be non-negative and initial sigma positive".into());
        }
        if !(self.gt_alpha_threshold > 0.0 && self.gt_alpha_threshold < 1.0) {
            return bad("gt_alpha_threshold must be in (0, 1)".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative".into());
        }
        Ok(())
    }
}

/// One Gaussian puff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Puff {
    pub x: f32,
    pub y: f32,
    pub sigma: f32,
    pub peak: f32,
}

/// Combined plume opacity, `1 - prod(1 - a_i)`, row-major.
pub fn plume_opacity(puffs: &[Puff], width: usize, height: usize) -> Vec<f32> {
    let mut transmit = vec![1.0f32; width * height];
    for p in puffs {
        let reach = 3.5 * p.sigma;
        let x0 = ((p.x - reach).floor().max(0.0) as usize).min(width);
        let x1 = ((p.x + reach).ceil().max(0.0) as usize).min(width);
        let y0 = ((p.y - reach).floor().max(0.0) as usize).min(height);
        let y1 = ((p.y + reach).ceil().max(0.0) as usize).min(height);
        let inv = 0.5 / (p.sigma * p.sigma);
        for y in y0..y1 {
            let dy = y as f32 + 0.5 - p.y;
            for x in x0..x1 {
                let dx = x as f32 + 0.5 - p.x;
                let q = (dx * dx + dy * dy) * inv;
                let a = p.peak * (-q * q).exp();
                transmit[y * width + x] *= 1.0 - a;
            }
        }
    }
    transmit.into_iter().map(|t| 1.0 - t).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    rng.sample::<f32, _>(StandardNormal)
}

fn background_image(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (w, h) = (spec.width, spec.height);
    match spec.background {
        Background::Gradient { left, right } => {
            let span = (w.max(2) - 1) as f32;
            (0..h)
                .flat_map(|_| {
                    (0..w).map(move |x| left as f32 + (right as f32 - left as f32) * x as f32 / span)
                })
                .collect()
        }
        Background::NoiseTextured { base, texture_sigma } => (0..w * h)
            .map(|_| base as f32 + texture_sigma * normal(rng))
            .collect(),
    }
}

/// Renders a clip; identical specs give bit-identical clips.
pub fn generate_clip(spec: &SceneSpec) -> Result<VideoClip, SynthError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let background = background_image(spec, &mut rng);
    let p = spec.plume;

    let mut puffs: Vec<(Puff, f32)> = Vec::new(); // (puff, initial peak)
    let mut births = 0.0f32;
    let mut frames = Vec::with_capacity(spec.frame_count);
    let mut gt = Vec::with_capacity(spec.frame_count);

    for t in 0..spec.frame_count {
        for (puff, peak0) in puffs.iter_mut() {
            puff.x += p.drift.0 + p.turbulence * normal(&mut rng);
            puff.y += p.drift.1 + p.turbulence * normal(&mut rng);
            puff.sigma += p.growth_rate;
            let shrink = p.initial_sigma / puff.sigma;
            puff.peak = *peak0 * shrink * shrink;
        }
        let floor = spec.gt_alpha_threshold * 0.1;
        puffs.retain(|(q, _)| {
            let r = 3.5 * q.sigma;
            q.peak >= floor
                && q.x + r > 0.0
                && q.y + r > 0.0
                && q.x - r < w as f32
                && q.y - r < h as f32
        });

        if t >= p.start_frame {
            births += p.birth_rate;
            while births >= 1.0 {
                births -= 1.0;
                let peak = (p.peak_opacity * (0.8 + 0.4 * rng.random::<f32>())).min(1.0);
                let puff = Puff {
                    x: p.emission.0 + 0.5 * p.initial_sigma * normal(&mut rng),
                    y: p.emission.1 + 0.5 * p.initial_sigma * normal(&mut rng),
                    sigma: p.initial_sigma,
                    peak,
                };
                puffs.push((puff, peak));
            }
        }

        let current: Vec<Puff> = puffs.iter().map(|(q, _)| *q).collect();
        let opacity = plume_opacity(&current, w, h);
        let mut pixels = Vec::with_capacity(w * h);
        let mut bits = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let noise = if spec.noise_sigma > 0.0 {
                    spec.noise_sigma * normal(&mut rng)
                } else {
                    0.0
                };
                let occluder = spec.interferers.iter().rev().find(|it| it.covers(t, x, y));
                let value = match occluder {
                    Some(it) => it.intensity as f32 + noise,
                    None => background[i] + p.intensity * opacity[i] + noise,
                };
                pixels.push(value.round().clamp(0.0, 255.0) as u8);
                bits.push(occluder.is_none() && opacity[i] > spec.gt_alpha_threshold);
            }
        }
        frames.push(Frame::new(t, w, h, pixels).expect("sized"));
        gt.push(BinaryMask::new(w, h, bits).expect("sized"));
    }

    let clip = VideoClip::new(spec.id.clone(), frames, Some(gt), !spec.interferers.is_empty())
        .expect("consistent dimensions");
    Ok(clip)
}

pub const SUITE_WIDTH: usize = 320;
pub const SUITE_HEIGHT: usize = 240;
pub const SUITE_FRAMES: usize = 300;

fn base_plume(emission: (f32, f32), drift: (f32, f32), start_frame: usize) -> PlumeSpec {
    PlumeSpec {
        emission,
        drift,
        turbulence: 1.0,
        birth_rate: 0.07,
        growth_rate: 0.04,
        initial_sigma: 8.0,
        peak_opacity: 0.9,
        intensity: 90.0,
        start_frame,
    }
}

/// Ten 320x240, 300-frame scenes with seeds 1001..=1010. Scenes 1-5 have no
/// interferers, scenes 6-10 have one or two.
pub fn standard_suite() -> Vec<SceneSpec> {
    let gradient = |l, r| Background::Gradient { left: l, right: r };
    let texture = |b, s| Background::NoiseTextured {
        base: b,
        texture_sigma: s,
    };
    let person = |x: f32, vx: f32| Interferer {
        shape: Shape::Rectangle,
        size: (14.0, 40.0),
        intensity: 190,
        start: (x, 190.0),
        velocity: (vx, 0.0),
    };
    let car = |y: f32, vx: f32| Interferer {
        shape: Shape::Rectangle,
        size: (56.0, 24.0),
        intensity: 170,
        start: (-40.0, y),
        velocity: (vx, 0.0),
    };
    let bird = |y: f32| Interferer {
        shape: Shape::Ellipse,
        size: (10.0, 6.0),
        intensity: 210,
        start: (340.0, y),
        velocity: (-3.0, 0.4),
    };

    let scenes: [(Background, PlumeSpec, Vec<Interferer>); 10] = [
        (gradient(30, 70), base_plume((160.0, 200.0), (0.6, -2.8), 20), vec![]),
        (texture(45, 6.0), base_plume((100.0, 210.0), (1.6, -2.4), 30), vec![]),
        (gradient(60, 35), base_plume((220.0, 180.0), (-2.0, -2.0), 15), vec![]),
        (texture(55, 4.0), base_plume((80.0, 120.0), (3.2, -0.4), 25), vec![]),
        (gradient(40, 50), base_plume((250.0, 215.0), (-1.2, -3.2), 40), vec![]),
        (gradient(35, 65), base_plume((160.0, 200.0), (0.8, -2.8), 20), vec![person(-10.0, 1.2)]),
        (texture(50, 5.0), base_plume((120.0, 190.0), (2.0, -2.0), 30), vec![car(200.0, 2.2)]),
        (gradient(55, 40), base_plume((200.0, 150.0), (-2.4, -1.2), 25), vec![bird(40.0), person(330.0, -1.0)]),
        (texture(40, 6.0), base_plume((90.0, 200.0), (1.2, -2.8), 15), vec![car(215.0, 1.8), bird(70.0)]),
        (gradient(45, 60), base_plume((240.0, 200.0), (-1.6, -2.4), 35), vec![person(60.0, 0.8)]),
    ];

    scenes
        .into_iter()
        .enumerate()
        .map(|(i, (background, plume, interferers))| SceneSpec {
            id: format!("synth{:02}", i + 1),
            seed: 1001 + i as u64,
            width: SUITE_WIDTH,
            height: SUITE_HEIGHT,
            frame_count: SUITE_FRAMES,
            background,
            noise_sigma: 1.5,
            plume,
            interferers,
            gt_alpha_threshold: 0.2,
        })
        .collect()
}

/// Renders `specs` into the dataset layout under `root`, plus `manifest.csv`.
pub fn write_suite(specs: &[SceneSpec], root: &Path) -> Result<Manifest, SynthError> {
    let mut manifest = Manifest {
        root: root.to_path_buf(),
        entries: Vec::new(),
    };
    for spec in specs {
        let clip = generate_clip(spec)?;
        write_clip(&clip, &root.join(&spec.id))?;
        manifest.entries.push(ManifestEntry {
            id: spec.id.clone(),
            path: spec.id.clone().into(),
            has_interference: clip.has_interference,
            excluded: false,
        });
    }
    let path = root.join("manifest.csv");
    std::fs::write(&path, manifest.to_text()).map_err(|source| DatasetError::Io { path, source })?;
    Ok(manifest)
}

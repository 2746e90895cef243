//! Background modeling and difference-image enhancement.
//!
//! Each model consumes frames in order and yields a background image; the
//! pipeline works on `|frame - background|` rather than the models' own
//! foreground masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::imgops::{open_close, StructuringElement};
use crate::types::{BinaryMask, Frame, ShapeError};

/// Upper bound on the enhancement gain.
pub const MAX_ALPHA: f32 = 15.0;
pub const DEFAULT_HISTORY: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BgsError {
    #[error("invalid background model parameter: {0}")]
    InvalidParams(String),
    #[error("frame size changed mid-stream: model is {expected:?}, frame is {actual:?}")]
    DimensionChange {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BgsMethod {
    Median,
    Mog2,
    Knn,
}

impl BgsMethod {
    pub const ALL: [BgsMethod; 3] = [BgsMethod::Median, BgsMethod::Mog2, BgsMethod::Knn];

    pub fn name(self) -> &'static str {
        match self {
            BgsMethod::Median => "median",
            BgsMethod::Mog2 => "mog2",
            BgsMethod::Knn => "knn",
        }
    }
}

impl std::str::FromStr for BgsMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "median" => Ok(BgsMethod::Median),
            "mog2" => Ok(BgsMethod::Mog2),
            "knn" => Ok(BgsMethod::Knn),
            other => Err(format!("unknown background method {other:?}")),
        }
    }
}

/// Gaussian-mixture parameters. Variances are in squared intensity units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mog2Params {
    pub components: usize,
    /// Squared Mahalanobis distance under which a sample matches a component.
    pub var_threshold: f32,
    /// Cumulative weight of the components that make up the background.
    pub background_ratio: f32,
    /// `None` means `1 / history`.
    pub learning_rate: Option<f32>,
    pub var_init: f32,
    pub var_min: f32,
    pub var_max: f32,
}

impl Default for Mog2Params {
    fn default() -> Self {
        Self {
            components: 5,
            var_threshold: 16.0,
            background_ratio: 0.9,
            learning_rate: None,
            var_init: 15.0,
            var_min: 4.0,
            var_max: 75.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnParams {
    /// `None` means `7 * history / 10`.
    pub samples: Option<usize>,
    /// Squared intensity distance for two values to count as neighbors.
    pub radius_sq: f32,
    /// Neighbors needed for a sample to be background.
    pub k: usize,
    pub seed: u64,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self {
            samples: None,
            radius_sq: 400.0,
            k: 2,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BgsParams {
    pub method: BgsMethod,
    pub history: usize,
    pub mog2: Mog2Params,
    pub knn: KnnParams,
}

impl Default for BgsParams {
    fn default() -> Self {
        Self::new(BgsMethod::Mog2)
    }
}

impl BgsParams {
    pub fn new(method: BgsMethod) -> Self {
        Self {
            method,
            history: DEFAULT_HISTORY,
            mog2: Mog2Params::default(),
            knn: KnnParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), BgsError> {
        let bad = |msg: &str| Err(BgsError::InvalidParams(msg.to_string()));
        if self.history == 0 {
            return bad("history must be at least 1");
        }
        let m = &self.mog2;
        if m.components == 0 || m.components > 255 {
            return bad("mog2 components must be in 1..=255");
        }
        if !(m.var_threshold > 0.0) {
            return bad("mog2 var_threshold must be positive");
        }
        if !(m.background_ratio > 0.0 && m.background_ratio <= 1.0) {
            return bad("mog2 background_ratio must be in (0, 1]");
        }
        if let Some(lr) = m.learning_rate {
            if !(lr > 0.0 && lr <= 1.0) {
                return bad("mog2 learning_rate must be in (0, 1]");
            }
        }
        if !(m.var_min > 0.0 && m.var_min <= m.var_init && m.var_init <= m.var_max) {
            return bad("mog2 variances must satisfy 0 < min <= init <= max");
        }
        if self.knn_samples() == 0 {
            return bad("knn sample buffer must hold at least 1 sample");
        }
        if !(self.knn.radius_sq > 0.0) {
            return bad("knn radius must be positive");
        }
        if self.knn.k == 0 {
            return bad("knn k must be at least 1");
        }
        Ok(())
    }

    pub fn mog2_learning_rate(&self) -> f32 {
        self.mog2.learning_rate.unwrap_or(1.0 / self.history as f32)
    }

    pub fn knn_samples(&self) -> usize {
        self.knn.samples.unwrap_or(7 * self.history / 10)
    }
}

/// Exact per-pixel median over the last `history` frames.
#[derive(Debug, Clone)]
struct MedianModel {
    ring: Vec<u8>,
    capacity: usize,
    len: usize,
    head: usize,
}

impl MedianModel {
    fn new(npix: usize, capacity: usize) -> Self {
        Self {
            ring: vec![0; npix * capacity],
            capacity,
            len: 0,
            head: 0,
        }
    }

    fn update(&mut self, pixels: &[u8], out: &mut [u8]) {
        let cap = self.capacity;
        for (p, &v) in pixels.iter().enumerate() {
            self.ring[p * cap + self.head] = v;
        }
        self.head = (self.head + 1) % cap;
        self.len = (self.len + 1).min(cap);

        let n = self.len;
        let mut scratch = vec![0u8; n];
        for (p, o) in out.iter_mut().enumerate() {
            scratch.copy_from_slice(&self.ring[p * cap..p * cap + n]);
            *o = median_of(&mut scratch);
        }
    }
}

/// Median of a non-empty slice; even counts average the two middle values
/// (rounding half up), so a value held by a strict majority is always returned.
pub(crate) fn median_of(values: &mut [u8]) -> u8 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable(mid);
    let upper = *upper;
    if n % 2 == 1 {
        return upper;
    }
    let lower = *values[..mid].iter().max().expect("n >= 2");
    (lower as u16 + upper as u16).div_ceil(2) as u8
}

/// Per-pixel adaptive Gaussian mixture. Components are kept sorted by
/// descending weight.
#[derive(Debug, Clone)]
struct Mog2Model {
    k: usize,
    modes: Vec<u8>,
    weight: Vec<f32>,
    mean: Vec<f32>,
    var: Vec<f32>,
    p: Mog2Params,
    alpha: f32,
}

impl Mog2Model {
    fn new(npix: usize, p: Mog2Params, alpha: f32) -> Self {
        let k = p.components;
        Self {
            k,
            modes: vec![0; npix],
            weight: vec![0.0; npix * k],
            mean: vec![0.0; npix * k],
            var: vec![0.0; npix * k],
            p,
            alpha,
        }
    }

    fn update(&mut self, pixels: &[u8], out: &mut [u8]) {
        let k = self.k;
        let alpha = self.alpha;
        let decay = 1.0 - alpha;
        let p = self.p;
        for (px, &value) in pixels.iter().enumerate() {
            let x = value as f32;
            let base = px * k;
            let n = self.modes[px] as usize;
            let w = &mut self.weight[base..base + k];
            let mu = &mut self.mean[base..base + k];
            let var = &mut self.var[base..base + k];

            let mut matched = None;
            for m in 0..n {
                w[m] *= decay;
                if matched.is_none() {
                    let d = x - mu[m];
                    if d * d < p.var_threshold * var[m] {
                        matched = Some(m);
                    }
                }
            }

            let mut slot = match matched {
                Some(m) => {
                    w[m] += alpha;
                    let rho = alpha / w[m];
                    let d = x - mu[m];
                    mu[m] += rho * d;
                    var[m] = (var[m] + rho * (d * d - var[m])).clamp(p.var_min, p.var_max);
                    m
                }
                None => {
                    let m = if n < k {
                        self.modes[px] += 1;
                        n
                    } else {
                        k - 1
                    };
                    w[m] = if n == 0 { 1.0 } else { alpha };
                    mu[m] = x;
                    var[m] = p.var_init;
                    m
                }
            };
            // only `slot` gained weight; bubble it up
            while slot > 0 && w[slot] > w[slot - 1] {
                w.swap(slot, slot - 1);
                mu.swap(slot, slot - 1);
                var.swap(slot, slot - 1);
                slot -= 1;
            }

            let n = self.modes[px] as usize;
            let mut total = 0.0f32;
            let mut acc = 0.0f32;
            for m in 0..n {
                total += w[m];
                acc += w[m] * mu[m];
                if total > p.background_ratio {
                    break;
                }
            }
            out[px] = if total > 0.0 {
                (acc / total).round().clamp(0.0, 255.0) as u8
            } else {
                value
            };
        }
    }

    #[cfg(test)]
    fn weights(&self, px: usize) -> &[f32] {
        let n = self.modes[px] as usize;
        &self.weight[px * self.k..px * self.k + n]
    }
}

/// Per-pixel sample buffer with random-replacement updates.
#[derive(Debug, Clone)]
struct KnnModel {
    capacity: usize,
    len: usize,
    samples: Vec<u8>,
    radius_sq: f32,
    k: usize,
    rng: ChaCha8Rng,
}

impl KnnModel {
    fn new(npix: usize, capacity: usize, p: KnnParams) -> Self {
        Self {
            capacity,
            len: 0,
            samples: vec![0; npix * capacity],
            radius_sq: p.radius_sq,
            k: p.k,
            rng: ChaCha8Rng::seed_from_u64(p.seed),
        }
    }

    fn update(&mut self, pixels: &[u8], out: &mut [u8]) {
        let cap = self.capacity;
        if self.len < cap {
            for (p, &v) in pixels.iter().enumerate() {
                self.samples[p * cap + self.len] = v;
            }
            self.len += 1;
        } else {
            for (p, &v) in pixels.iter().enumerate() {
                let slot = self.rng.random_range(0..cap);
                self.samples[p * cap + slot] = v;
            }
        }

        let n = self.len;
        let mut sorted = vec![0u8; n];
        for (p, o) in out.iter_mut().enumerate() {
            sorted.copy_from_slice(&self.samples[p * cap..p * cap + n]);
            sorted.sort_unstable();
            *o = self.background_of(&sorted);
        }
    }

    /// Mean of the samples having at least `k` other samples within the
    /// radius; mean of all samples when none qualifies.
    fn background_of(&self, sorted: &[u8]) -> u8 {
        let close = |a: u8, b: u8| {
            let d = a as f32 - b as f32;
            d * d < self.radius_sq
        };
        let n = sorted.len();
        let (mut lo, mut hi) = (0usize, 0usize);
        let (mut sum, mut count) = (0u32, 0u32);
        for i in 0..n {
            let v = sorted[i];
            while !close(sorted[lo], v) {
                lo += 1;
            }
            if hi < i {
                hi = i;
            }
            while hi + 1 < n && close(sorted[hi + 1], v) {
                hi += 1;
            }
            if hi - lo >= self.k {
                sum += v as u32;
                count += 1;
            }
        }
        if count == 0 {
            sum = sorted.iter().map(|&v| v as u32).sum();
            count = n as u32;
        }
        ((sum as f32 / count as f32).round()) as u8
    }
}

#[derive(Debug, Clone)]
enum Model {
    Median(MedianModel),
    Mog2(Mog2Model),
    Knn(KnnModel),
}

/// Streaming background model for one video.
#[derive(Debug, Clone)]
pub struct BgsState {
    params: BgsParams,
    dims: Option<(usize, usize)>,
    model: Option<Model>,
    frames_seen: usize,
}

impl BgsState {
    pub fn new(params: BgsParams) -> Result<Self, BgsError> {
        params.validate()?;
        Ok(Self {
            params,
            dims: None,
            model: None,
            frames_seen: 0,
        })
    }

    pub fn params(&self) -> &BgsParams {
        &self.params
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Feeds one frame and returns the current background estimate.
    pub fn update(&mut self, frame: &Frame) -> Result<Frame, BgsError> {
        let dims = frame.dims();
        match self.dims {
            Some(expected) if expected != dims => {
                return Err(BgsError::DimensionChange {
                    expected,
                    actual: dims,
                })
            }
            _ => self.dims = Some(dims),
        }
        let npix = dims.0 * dims.1;
        let params = self.params;
        let model = self.model.get_or_insert_with(|| match params.method {
            BgsMethod::Median => Model::Median(MedianModel::new(npix, params.history)),
            BgsMethod::Mog2 => Model::Mog2(Mog2Model::new(npix, params.mog2, params.mog2_learning_rate())),
            BgsMethod::Knn => Model::Knn(KnnModel::new(npix, params.knn_samples(), params.knn)),
        });

        let mut background = vec![0u8; npix];
        match model {
            Model::Median(m) => m.update(frame.pixels(), &mut background),
            Model::Mog2(m) => m.update(frame.pixels(), &mut background),
            Model::Knn(m) => m.update(frame.pixels(), &mut background),
        }
        self.frames_seen += 1;
        Ok(Frame::new(frame.index, dims.0, dims.1, background)?)
    }
}

pub fn bgs_init(params: BgsParams) -> Result<BgsState, BgsError> {
    BgsState::new(params)
}

/// Difference image; `alpha_used` is 1 for a raw difference.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffImage {
    width: usize,
    height: usize,
    values: Vec<u8>,
    pub alpha_used: f32,
    pub enhanced: bool,
}

impl DiffImage {
    pub fn raw(width: usize, height: usize, values: Vec<u8>) -> Result<Self, ShapeError> {
        crate::types::check_dims(width, height, values.len())?;
        Ok(Self {
            width,
            height,
            values,
            alpha_used: 1.0,
            enhanced: false,
        })
    }

    /// Treats a frame's intensities as an un-enhanced image.
    pub fn from_frame(frame: &Frame) -> Self {
        Self {
            width: frame.width(),
            height: frame.height(),
            values: frame.pixels().to_vec(),
            alpha_used: 1.0,
            enhanced: false,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    /// Population mean and standard deviation of the values.
    pub fn mean_std(&self) -> (f64, f64) {
        let n = self.values.len() as f64;
        let (mut sum, mut sum_sq) = (0f64, 0f64);
        for &v in &self.values {
            let v = v as f64;
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        (mean, var.sqrt())
    }
}

pub fn abs_diff(frame: &Frame, background: &Frame) -> Result<DiffImage, ShapeError> {
    crate::types::same_dims(frame.dims(), background.dims())?;
    let values = frame
        .pixels()
        .iter()
        .zip(background.pixels())
        .map(|(&a, &b)| a.abs_diff(b))
        .collect();
    DiffImage::raw(frame.width(), frame.height(), values)
}

/// `min(255 / (mean + std), cap)`; the cap when the difference is all zero.
pub fn adaptive_alpha_capped(raw: &DiffImage, cap: f32) -> f32 {
    let (mean, std) = raw.mean_std();
    let spread = mean + std;
    if spread <= 0.0 {
        return cap;
    }
    ((255.0 / spread) as f32).min(cap)
}

pub fn adaptive_alpha(raw: &DiffImage) -> f32 {
    adaptive_alpha_capped(raw, MAX_ALPHA)
}

/// Multiplies by `alpha`, rounds, and clips to `[0, 255]`.
pub fn enhance(raw: &DiffImage, alpha: f32) -> DiffImage {
    assert!(alpha > 0.0, "enhancement factor must be positive");
    let values = raw
        .values
        .iter()
        .map(|&v| (v as f32 * alpha).round().clamp(0.0, 255.0) as u8)
        .collect();
    DiffImage {
        width: raw.width,
        height: raw.height,
        values,
        alpha_used: alpha,
        enhanced: true,
    }
}

/// Fixed-gain thresholding used by the background-subtraction-only baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineParams {
    pub scale: f32,
    pub threshold: u8,
    pub open: Option<StructuringElement>,
    pub close: Option<StructuringElement>,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            scale: 15.0,
            threshold: 40,
            open: Some(StructuringElement::square(3)),
            close: None,
        }
    }
}

pub fn baseline_mask(raw: &DiffImage, params: &BaselineParams) -> BinaryMask {
    let bits = raw
        .values
        .iter()
        .map(|&v| (v as f32 * params.scale).min(255.0) > params.threshold as f32)
        .collect();
    let mask = BinaryMask::new(raw.width, raw.height, bits).expect("same dimensions");
    open_close(&mask, params.open, params.close)
}

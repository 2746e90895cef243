//! Pipeline configuration addressed by flat dotted keys (`detect.tau_vlm`).
//!
//! Config files hold one `key = value` per line; `#` starts a comment and
//! values may be wrapped in double quotes. The same keys are accepted as CLI
//! overrides and sweep axes.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::bgs::{BaselineParams, BgsMethod, BgsParams, MAX_ALPHA};
use crate::dataset::DEFAULT_GT_THRESHOLD;
use crate::detect::{DetectorQuery, DEFAULT_NMS_IOU};
use crate::imgops::StructuringElement;
use crate::temporal::TemporalParams;

/// Evaluated frames are those with `index % stride == EVAL_PHASE`.
pub const EVAL_PHASE: usize = 0;
pub const DEFAULT_STRIDE: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Oracle,
    Scripted,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentMethod {
    Traditional,
    Promptable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageSource {
    Enhanced,
    Frame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmenterKind {
    Mock,
    Remote,
}

macro_rules! keyword_enum {
    ($ty:ty { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(format!("expected one of {:?}, got {other:?}", [$($name),+])),
                }
            }
        }
        impl Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(DetectorKind { "oracle" => DetectorKind::Oracle, "scripted" => DetectorKind::Scripted, "remote" => DetectorKind::Remote });
keyword_enum!(SegmentMethod { "traditional" => SegmentMethod::Traditional, "promptable" => SegmentMethod::Promptable });
keyword_enum!(ImageSource { "enhanced" => ImageSource::Enhanced, "frame" => ImageSource::Frame });
keyword_enum!(SegmenterKind { "mock" => SegmenterKind::Mock, "remote" => SegmenterKind::Remote });

#[derive(Debug, Clone, PartialEq)]
pub struct BgsConfig {
    pub enabled: bool,
    pub params: BgsParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceConfig {
    pub adaptive: bool,
    pub max_alpha: f32,
    /// Gain used when `adaptive` is off, and on raw frames when BGS is disabled.
    pub factor: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub scale: f32,
    pub threshold: u8,
    /// Kernel sizes; 0 disables the operation.
    pub open_kernel: usize,
    pub close_kernel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectConfig {
    pub enabled: bool,
    pub query: DetectorQuery,
    pub nms_iou: f32,
    pub backend: DetectorKind,
    pub endpoint: String,
    pub script: Option<PathBuf>,
    pub timeout_secs: f32,
    pub retries: usize,
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConfig {
    pub enabled: bool,
    pub params: TemporalParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentConfig {
    pub method: SegmentMethod,
    pub image_source: ImageSource,
    pub backend: SegmenterKind,
    pub endpoint: String,
    pub open_kernel: usize,
    pub close_kernel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub stride: usize,
    pub gt_threshold: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub bgs: BgsConfig,
    pub enhance: EnhanceConfig,
    pub baseline: BaselineConfig,
    pub detect: DetectConfig,
    pub temporal: TemporalConfig,
    pub segment: SegmentConfig,
    pub eval: EvalConfig,
    pub manifest: Option<PathBuf>,
    /// Videos processed concurrently; 0 means one per available core.
    pub workers: usize,
}

pub const DEFAULT_OPEN_KERNEL: usize = 3;
pub const DEFAULT_CLOSE_KERNEL: usize = 0;

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bgs: BgsConfig {
                enabled: true,
                params: BgsParams::new(BgsMethod::Mog2),
            },
            enhance: EnhanceConfig {
                adaptive: true,
                max_alpha: MAX_ALPHA,
                factor: MAX_ALPHA,
            },
            baseline: BaselineConfig {
                scale: 15.0,
                threshold: 40,
                open_kernel: DEFAULT_OPEN_KERNEL,
                close_kernel: DEFAULT_CLOSE_KERNEL,
            },
            detect: DetectConfig {
                enabled: true,
                query: DetectorQuery::default(),
                nms_iou: DEFAULT_NMS_IOU,
                backend: DetectorKind::Oracle,
                endpoint: "http://127.0.0.1:8000".into(),
                script: None,
                timeout_secs: 30.0,
                retries: 2,
                max_in_flight: 4,
            },
            temporal: TemporalConfig {
                enabled: true,
                params: TemporalParams::default(),
            },
            segment: SegmentConfig {
                method: SegmentMethod::Promptable,
                image_source: ImageSource::Enhanced,
                backend: SegmenterKind::Mock,
                endpoint: "http://127.0.0.1:8000".into(),
                open_kernel: DEFAULT_OPEN_KERNEL,
                close_kernel: DEFAULT_CLOSE_KERNEL,
            },
            eval: EvalConfig {
                stride: DEFAULT_STRIDE,
                gt_threshold: DEFAULT_GT_THRESHOLD,
            },
            manifest: None,
            workers: 0,
        }
    }
}

fn se(k: usize) -> Option<StructuringElement> {
    (k > 0).then(|| StructuringElement::square(k))
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

/// `auto` or empty means `None`.
fn parse_auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: Display,
{
    if value.is_empty() || value.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_auto<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

fn strip_quotes(v: &str) -> &str {
    let v = v.trim();
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

impl PipelineConfig {
    pub fn baseline_params(&self) -> BaselineParams {
        BaselineParams {
            scale: self.baseline.scale,
            threshold: self.baseline.threshold,
            open: se(self.baseline.open_kernel),
            close: se(self.baseline.close_kernel),
        }
    }

    pub fn segment_open(&self) -> Option<StructuringElement> {
        se(self.segment.open_kernel)
    }

    pub fn segment_close(&self) -> Option<StructuringElement> {
        se(self.segment.close_kernel)
    }

    /// Sets one field by its dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = strip_quotes(value);
        let b = &mut self.bgs.params;
        let t = &mut self.temporal.params;
        match key {
            "bgs.enabled" => self.bgs.enabled = parse(key, v)?,
            "bgs.method" => b.method = parse(key, v)?,
            "bgs.history" => b.history = parse(key, v)?,
            "bgs.mog2.components" => b.mog2.components = parse(key, v)?,
            "bgs.mog2.var_threshold" => b.mog2.var_threshold = parse(key, v)?,
            "bgs.mog2.background_ratio" => b.mog2.background_ratio = parse(key, v)?,
            "bgs.mog2.learning_rate" => b.mog2.learning_rate = parse_auto(key, v)?,
            "bgs.mog2.var_init" => b.mog2.var_init = parse(key, v)?,
            "bgs.mog2.var_min" => b.mog2.var_min = parse(key, v)?,
            "bgs.mog2.var_max" => b.mog2.var_max = parse(key, v)?,
            "bgs.knn.samples" => b.knn.samples = parse_auto(key, v)?,
            "bgs.knn.radius_sq" => b.knn.radius_sq = parse(key, v)?,
            "bgs.knn.k" => b.knn.k = parse(key, v)?,
            "bgs.knn.seed" => b.knn.seed = parse(key, v)?,
            "enhance.adaptive" => self.enhance.adaptive = parse(key, v)?,
            "enhance.max_alpha" => self.enhance.max_alpha = parse(key, v)?,
            "enhance.factor" => self.enhance.factor = parse(key, v)?,
            "baseline.scale" => self.baseline.scale = parse(key, v)?,
            "baseline.threshold" => self.baseline.threshold = parse(key, v)?,
            "baseline.open_kernel" => self.baseline.open_kernel = parse(key, v)?,
            "baseline.close_kernel" => self.baseline.close_kernel = parse(key, v)?,
            "detect.enabled" => self.detect.enabled = parse(key, v)?,
            "detect.positive_prompt" => self.detect.query.positive_prompt = v.to_string(),
            "detect.negative_prompt" => self.detect.query.negative_prompt = v.to_string(),
            "detect.tau_vlm" => self.detect.query.tau_vlm = parse(key, v)?,
            "detect.nms_iou" => self.detect.nms_iou = parse(key, v)?,
            "detect.backend" => self.detect.backend = parse(key, v)?,
            "detect.endpoint" => self.detect.endpoint = v.to_string(),
            "detect.script" => self.detect.script = (!v.is_empty()).then(|| PathBuf::from(v)),
            "detect.timeout_secs" => self.detect.timeout_secs = parse(key, v)?,
            "detect.retries" => self.detect.retries = parse(key, v)?,
            "detect.max_in_flight" => self.detect.max_in_flight = parse(key, v)?,
            "temporal.enabled" => self.temporal.enabled = parse(key, v)?,
            "temporal.k1" => t.k1 = parse(key, v)?,
            "temporal.n1" => t.n1 = parse(key, v)?,
            "temporal.tau_iou1" => t.tau_iou1 = parse(key, v)?,
            "temporal.tau_shift" => t.tau_shift = parse(key, v)?,
            "temporal.k2" => t.k2 = parse(key, v)?,
            "temporal.tau_iou2" => t.tau_iou2 = parse(key, v)?,
            "temporal.ignore_large" => t.ignore_large = parse(key, v)?,
            "temporal.history_cap" => t.history_cap = parse(key, v)?,
            "segment.method" => self.segment.method = parse(key, v)?,
            "segment.image_source" => self.segment.image_source = parse(key, v)?,
            "segment.backend" => self.segment.backend = parse(key, v)?,
            "segment.endpoint" => self.segment.endpoint = v.to_string(),
            "segment.open_kernel" => self.segment.open_kernel = parse(key, v)?,
            "segment.close_kernel" => self.segment.close_kernel = parse(key, v)?,
            "eval.stride" => self.eval.stride = parse(key, v)?,
            "eval.gt_threshold" => self.eval.gt_threshold = parse(key, v)?,
            "dataset.manifest" => self.manifest = (!v.is_empty()).then(|| PathBuf::from(v)),
            "run.workers" => self.workers = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let b = &self.bgs.params;
        let t = &self.temporal.params;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        vec![
            ("bgs.enabled", self.bgs.enabled.to_string()),
            ("bgs.method", b.method.name().to_string()),
            ("bgs.history", b.history.to_string()),
            ("bgs.mog2.components", b.mog2.components.to_string()),
            ("bgs.mog2.var_threshold", b.mog2.var_threshold.to_string()),
            ("bgs.mog2.background_ratio", b.mog2.background_ratio.to_string()),
            ("bgs.mog2.learning_rate", show_auto(&b.mog2.learning_rate)),
            ("bgs.mog2.var_init", b.mog2.var_init.to_string()),
            ("bgs.mog2.var_min", b.mog2.var_min.to_string()),
            ("bgs.mog2.var_max", b.mog2.var_max.to_string()),
            ("bgs.knn.samples", show_auto(&b.knn.samples)),
            ("bgs.knn.radius_sq", b.knn.radius_sq.to_string()),
            ("bgs.knn.k", b.knn.k.to_string()),
            ("bgs.knn.seed", b.knn.seed.to_string()),
            ("enhance.adaptive", self.enhance.adaptive.to_string()),
            ("enhance.max_alpha", self.enhance.max_alpha.to_string()),
            ("enhance.factor", self.enhance.factor.to_string()),
            ("baseline.scale", self.baseline.scale.to_string()),
            ("baseline.threshold", self.baseline.threshold.to_string()),
            ("baseline.open_kernel", self.baseline.open_kernel.to_string()),
            ("baseline.close_kernel", self.baseline.close_kernel.to_string()),
            ("detect.enabled", self.detect.enabled.to_string()),
            ("detect.positive_prompt", self.detect.query.positive_prompt.clone()),
            ("detect.negative_prompt", self.detect.query.negative_prompt.clone()),
            ("detect.tau_vlm", self.detect.query.tau_vlm.to_string()),
            ("detect.nms_iou", self.detect.nms_iou.to_string()),
            ("detect.backend", self.detect.backend.to_string()),
            ("detect.endpoint", self.detect.endpoint.clone()),
            ("detect.script", path(&self.detect.script)),
            ("detect.timeout_secs", self.detect.timeout_secs.to_string()),
            ("detect.retries", self.detect.retries.to_string()),
            ("detect.max_in_flight", self.detect.max_in_flight.to_string()),
            ("temporal.enabled", self.temporal.enabled.to_string()),
            ("temporal.k1", t.k1.to_string()),
            ("temporal.n1", t.n1.to_string()),
            ("temporal.tau_iou1", t.tau_iou1.to_string()),
            ("temporal.tau_shift", t.tau_shift.to_string()),
            ("temporal.k2", t.k2.to_string()),
            ("temporal.tau_iou2", t.tau_iou2.to_string()),
            ("temporal.ignore_large", t.ignore_large.to_string()),
            ("temporal.history_cap", t.history_cap.to_string()),
            ("segment.method", self.segment.method.to_string()),
            ("segment.image_source", self.segment.image_source.to_string()),
            ("segment.backend", self.segment.backend.to_string()),
            ("segment.endpoint", self.segment.endpoint.clone()),
            ("segment.open_kernel", self.segment.open_kernel.to_string()),
            ("segment.close_kernel", self.segment.close_kernel.to_string()),
            ("eval.stride", self.eval.stride.to_string()),
            ("eval.gt_threshold", self.eval.gt_threshold.to_string()),
            ("dataset.manifest", path(&self.manifest)),
            ("run.workers", self.workers.to_string()),
        ]
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries().into_iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.bgs
            .params
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.enhance.max_alpha > 0.0 && self.enhance.max_alpha <= MAX_ALPHA) {
            return invalid(format!("enhance.max_alpha must be in (0, {MAX_ALPHA}]"));
        }
        if !(self.enhance.factor > 0.0 && self.enhance.factor <= MAX_ALPHA) {
            return invalid(format!("enhance.factor must be in (0, {MAX_ALPHA}]"));
        }
        if !(self.baseline.scale > 0.0) {
            return invalid("baseline.scale must be positive".into());
        }
        if self.detect.enabled {
            self.detect.query.validate().map_err(ConfigError::Invalid)?;
            if !(self.detect.nms_iou > 0.0 && self.detect.nms_iou <= 1.0) {
                return invalid("detect.nms_iou must be in (0, 1]".into());
            }
            if self.detect.backend == DetectorKind::Scripted && self.detect.script.is_none() {
                return invalid("detect.backend=scripted needs detect.script".into());
            }
        } else if !self.bgs.enabled {
            return invalid("the background-subtraction-only baseline needs bgs.enabled=true".into());
        }
        if self.temporal.enabled {
            self.temporal.params.validate().map_err(ConfigError::Invalid)?;
        }
        if self.eval.stride == 0 {
            return invalid("eval.stride must be at least 1".into());
        }
        if !(self.detect.timeout_secs > 0.0) {
            return invalid("detect.timeout_secs must be positive".into());
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (line, key, value) in parse_kv_lines(text)? {
            self.set(&key, &value).map_err(|e| match e {
                ConfigError::UnknownKey(k) => ConfigError::Invalid(format!("line {line}: unknown key {k:?}")),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let needs_quotes = v.contains('#') || v.trim() != v;
            if needs_quotes {
                out.push_str(&format!("{k} = \"{v}\"\n"));
            } else {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        let value = value.trim();
        // trailing comments only outside quotes
        let value = if value.starts_with('"') {
            value
        } else {
            value.split_once(" #").map_or(value, |(v, _)| v.trim_end())
        };
        out.push((i + 1, key.to_string(), strip_quotes(value).to_string()));
    }
    Ok(out)
}

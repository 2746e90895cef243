//! Per-video orchestration, dataset runs and ablation presets.

use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

use crate::bgs::{abs_diff, adaptive_alpha_capped, baseline_mask, enhance, BgsError, BgsMethod, BgsState, DiffImage};
use crate::config::{ConfigError, DetectorKind, ImageSource, PipelineConfig, SegmentMethod, SegmenterKind, EVAL_PHASE};
use crate::dataset::{frame_file_name, io_err, load_clip, read_mask, write_mask, DatasetError, Manifest};
use crate::detect::{nms, Detector, FrameContext, OracleDetector, RemoteDetector, ScriptedDetector};
use crate::eval::{aggregate, video_scores, Category, DatasetReport, EvalError, Scores, VideoMetrics};
use crate::remote::{BackendError, RemoteConfig};
use crate::segment::{segment_promptable, segment_traditional, MockSegmenter, RemoteSegmenter, Segmenter};
use crate::temporal::{push_history, temporal_filter, TemporalState};
use crate::types::{BinaryMask, ScoredBox, ShapeError, VideoClip};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bgs(#[from] BgsError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("backend setup failed: {0}")]
    BackendSetup(BackendError),
    #[error("video {video}, frame {frame}: {source}")]
    Backend {
        video: String,
        frame: usize,
        source: BackendError,
    },
    #[error("video {0} has no ground truth but metrics were requested")]
    MissingGroundTruth(String),
    #[error("no videos left after exclusions")]
    EmptyDataset,
    #[error("worker pool: {0}")]
    Pool(String),
}

/// The detector and segmenter a run talks to.
pub struct Backends {
    pub detector: Box<dyn Detector>,
    pub segmenter: Box<dyn Segmenter>,
}

impl Backends {
    pub fn new(detector: impl Detector + 'static, segmenter: impl Segmenter + 'static) -> Self {
        Self {
            detector: Box::new(detector),
            segmenter: Box::new(segmenter),
        }
    }

    /// Oracle detector and rectangle-filling segmenter; needs no network.
    pub fn offline() -> Self {
        Self::new(OracleDetector, MockSegmenter)
    }

    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let remote = |endpoint: &str| RemoteConfig {
            endpoint: endpoint.to_string(),
            timeout: Duration::from_secs_f32(cfg.detect.timeout_secs),
            retries: cfg.detect.retries,
            max_in_flight: cfg.detect.max_in_flight,
        };
        let detector: Box<dyn Detector> = match cfg.detect.backend {
            DetectorKind::Oracle => Box::new(OracleDetector),
            DetectorKind::Scripted => {
                let path = cfg
                    .detect
                    .script
                    .as_deref()
                    .ok_or_else(|| ConfigError::Invalid("detect.backend=scripted needs detect.script".into()))?;
                Box::new(ScriptedDetector::load(path).map_err(PipelineError::BackendSetup)?)
            }
            DetectorKind::Remote => {
                Box::new(RemoteDetector::new(&remote(&cfg.detect.endpoint)).map_err(PipelineError::BackendSetup)?)
            }
        };
        let segmenter: Box<dyn Segmenter> = match cfg.segment.backend {
            SegmenterKind::Mock => Box::new(MockSegmenter),
            SegmenterKind::Remote => {
                Box::new(RemoteSegmenter::new(&remote(&cfg.segment.endpoint)).map_err(PipelineError::BackendSetup)?)
            }
        };
        Ok(Self { detector, segmenter })
    }
}

pub fn is_evaluated(t: usize, stride: usize) -> bool {
    t % stride == EVAL_PHASE
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame_index: usize,
    /// Boxes handed to segmentation; empty in baseline mode.
    pub boxes: Vec<ScoredBox>,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRun {
    pub id: String,
    pub has_interference: bool,
    pub frames: Vec<FrameOutput>,
    pub metrics: Option<VideoMetrics>,
}

/// Image given to the detector on an evaluated frame.
fn detector_image(cfg: &PipelineConfig, frame: &crate::types::Frame, background: Option<&crate::types::Frame>) -> Result<DiffImage, ShapeError> {
    match background {
        Some(bg) => {
            let raw = abs_diff(frame, bg)?;
            let alpha = if cfg.enhance.adaptive {
                adaptive_alpha_capped(&raw, cfg.enhance.max_alpha)
            } else {
                cfg.enhance.factor
            };
            Ok(enhance(&raw, alpha))
        }
        None => Ok(enhance(&DiffImage::from_frame(frame), cfg.enhance.factor)),
    }
}

/// Runs one clip. Every frame updates the background model; only frames
/// with `t % stride == 0` are detected, filtered, segmented and scored.
pub fn run_video(clip: &VideoClip, cfg: &PipelineConfig, backends: &Backends, with_metrics: bool) -> Result<VideoRun, PipelineError> {
    cfg.validate()?;
    if with_metrics && clip.gt.is_none() {
        return Err(PipelineError::MissingGroundTruth(clip.id.clone()));
    }
    let dims = clip.dims().unwrap_or((0, 0));
    let mut bgs = if cfg.bgs.enabled {
        Some(BgsState::new(cfg.bgs.params)?)
    } else {
        None
    };
    let baseline = cfg.baseline_params();
    let mut history = TemporalState::new();
    let mut frames = Vec::new();
    let mut metrics = with_metrics.then(VideoMetrics::default);

    for (t, frame) in clip.frames.iter().enumerate() {
        let background = bgs.as_mut().map(|s| s.update(frame)).transpose()?;
        if !is_evaluated(t, cfg.eval.stride) {
            continue;
        }
        let gt = clip.gt.as_ref().map(|g| &g[t]);

        let (boxes, mask) = if !cfg.detect.enabled {
            let bg = background.as_ref().expect("validated: baseline needs BGS");
            (Vec::new(), baseline_mask(&abs_diff(frame, bg)?, &baseline))
        } else {
            let image = detector_image(cfg, frame, background.as_ref())?;
            let backend_err = |source| PipelineError::Backend {
                video: clip.id.clone(),
                frame: t,
                source,
            };
            let ctx = FrameContext {
                video_id: &clip.id,
                frame_index: t,
                gt,
            };
            let raw = backends
                .detector
                .detect(&ctx, &image, &cfg.detect.query)
                .map_err(backend_err)?;
            let raw = nms(&raw, cfg.detect.nms_iou);
            let boxes = if cfg.temporal.enabled {
                let kept = temporal_filter(&raw, &history, dims, &cfg.temporal.params);
                push_history(&mut history, raw, &cfg.temporal.params);
                kept
            } else {
                raw
            };
            let mask = match cfg.segment.method {
                SegmentMethod::Traditional => segment_traditional(&image, &boxes, cfg.segment_open(), cfg.segment_close()),
                SegmentMethod::Promptable => {
                    let seg_image = match cfg.segment.image_source {
                        ImageSource::Enhanced => image,
                        ImageSource::Frame => DiffImage::from_frame(frame),
                    };
                    segment_promptable(backends.segmenter.as_ref(), &seg_image, &boxes).map_err(backend_err)?
                }
            };
            (boxes, mask)
        };

        if let (Some(m), Some(gt)) = (metrics.as_mut(), gt) {
            m.accumulate(&mask, gt)?;
        }
        frames.push(FrameOutput {
            frame_index: t,
            boxes,
            mask,
        });
    }

    Ok(VideoRun {
        id: clip.id.clone(),
        has_interference: clip.has_interference,
        frames,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSummary {
    pub id: String,
    pub has_interference: bool,
    pub metrics: VideoMetrics,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRun {
    /// In input order.
    pub videos: Vec<VideoSummary>,
    pub report: DatasetReport,
}

impl DatasetRun {
    pub fn from_videos(videos: Vec<VideoSummary>) -> Result<Self, PipelineError> {
        if videos.is_empty() {
            return Err(PipelineError::EmptyDataset);
        }
        let pairs: Vec<(VideoMetrics, bool)> = videos.iter().map(|v| (v.metrics, v.has_interference)).collect();
        let report = aggregate(&pairs)?;
        Ok(Self { videos, report })
    }
}

fn summarize(run: VideoRun) -> Result<VideoSummary, PipelineError> {
    let metrics = run.metrics.ok_or_else(|| PipelineError::MissingGroundTruth(run.id.clone()))?;
    Ok(VideoSummary {
        scores: video_scores(&metrics)?,
        id: run.id,
        has_interference: run.has_interference,
        metrics,
    })
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))
}

/// Scores `count` videos produced on demand by `load`, up to `cfg.workers`
/// at a time. Clips are loaded inside the workers so only the ones in flight
/// are held in memory.
pub fn run_videos<F>(count: usize, load: F, cfg: &PipelineConfig, backends: &Backends) -> Result<DatasetRun, PipelineError>
where
    F: Fn(usize) -> Result<VideoClip, PipelineError> + Sync,
{
    run_videos_with(count, load, cfg, backends, |_| Ok(()))
}

/// Like `run_videos`, also handing every finished `VideoRun` to `sink`
/// (from the worker threads, in completion order).
pub fn run_videos_with<F, S>(count: usize, load: F, cfg: &PipelineConfig, backends: &Backends, sink: S) -> Result<DatasetRun, PipelineError>
where
    F: Fn(usize) -> Result<VideoClip, PipelineError> + Sync,
    S: Fn(&VideoRun) -> Result<(), PipelineError> + Sync,
{
    cfg.validate()?;
    if count == 0 {
        return Err(PipelineError::EmptyDataset);
    }
    let pool = worker_pool(cfg.workers)?;
    let videos = pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let clip = load(i)?;
                let run = run_video(&clip, cfg, backends, true)?;
                sink(&run)?;
                log::debug!("{}: {} frames evaluated", run.id, run.frames.len());
                summarize(run)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    DatasetRun::from_videos(videos)
}

pub fn run_clips(clips: &[VideoClip], cfg: &PipelineConfig, backends: &Backends) -> Result<DatasetRun, PipelineError> {
    run_videos(clips.len(), |i| Ok(clips[i].clone()), cfg, backends)
}

/// Runs every non-excluded manifest entry.
pub fn run_dataset(manifest: &Manifest, cfg: &PipelineConfig, backends: &Backends) -> Result<DatasetRun, PipelineError> {
    run_dataset_with(manifest, cfg, backends, |_| Ok(()))
}

pub fn run_dataset_with<S>(manifest: &Manifest, cfg: &PipelineConfig, backends: &Backends, sink: S) -> Result<DatasetRun, PipelineError>
where
    S: Fn(&VideoRun) -> Result<(), PipelineError> + Sync,
{
    let entries: Vec<_> = manifest.active().collect();
    if entries.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    run_videos_with(
        entries.len(),
        |i| Ok(load_clip(&manifest.root, entries[i], cfg.eval.gt_threshold)?),
        cfg,
        backends,
        sink,
    )
}

/// Writes each evaluated frame's mask to `<root>/<video id>/<frame>.png`.
pub fn write_video_masks(run: &VideoRun, root: &Path) -> Result<(), PipelineError> {
    let dir = root.join(&run.id);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for f in &run.frames {
        write_mask(&f.mask, &dir.join(frame_file_name(f.frame_index)))?;
    }
    Ok(())
}

/// Scores externally produced masks laid out as `<pred_root>/<video id>/<frame>.png`.
/// Every mask found is compared with the ground truth of the same frame
/// index; a video without any prediction file is an error.
pub fn evaluate_mask_dirs(manifest: &Manifest, pred_root: &Path, gt_threshold: u8) -> Result<DatasetRun, PipelineError> {
    let mut videos = Vec::new();
    for entry in manifest.active() {
        let clip = load_clip(&manifest.root, entry, gt_threshold)?;
        let gt = clip.gt.as_ref().ok_or_else(|| PipelineError::MissingGroundTruth(clip.id.clone()))?;
        let dir = pred_root.join(&entry.id);
        let mut predicted = list_frame_files(&dir)?;
        predicted.sort();
        if predicted.is_empty() {
            return Err(DatasetError::NoFrames(dir).into());
        }
        let mut metrics = VideoMetrics::default();
        for (index, path) in predicted {
            let truth = gt.get(index).ok_or_else(|| DatasetError::FrameOutOfRange {
                path: path.clone(),
                index,
                frames: gt.len(),
            })?;
            metrics.accumulate(&read_mask(&path)?, truth)?;
        }
        videos.push(VideoSummary {
            id: entry.id.clone(),
            has_interference: entry.has_interference,
            scores: video_scores(&metrics)?,
            metrics,
        });
    }
    DatasetRun::from_videos(videos)
}

/// `(frame index, path)` for every `<digits>.png` in `dir`.
fn list_frame_files(dir: &Path) -> Result<Vec<(usize, std::path::PathBuf)>, DatasetError> {
    if !dir.is_dir() {
        return Err(DatasetError::MissingDirectory(dir.to_path_buf()));
    }
    let mut out = Vec::new();
    for item in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = item.map_err(io_err(dir))?.path();
        let index = path
            .extension()
            .filter(|e| e.eq_ignore_ascii_case("png"))
            .and_then(|_| path.file_stem())
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<usize>().ok());
        if let Some(i) = index {
            out.push((i, path));
        }
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Manifest, PipelineError> {
    Ok(Manifest::load(path)?)
}

pub const REPORT_HEADER: [&str; 7] = ["config", "category", "videos", "iou", "precision", "recall", "fla"];
pub const VIDEO_HEADER: [&str; 8] = ["config", "video", "category", "frames", "iou", "precision", "recall", "fla"];

pub fn fmt_metric(v: f64) -> String {
    format!("{v:.6}")
}

pub fn report_rows(config: &str, report: &DatasetReport) -> Vec<[String; 7]> {
    report
        .categories()
        .map(|c| {
            [
                config.to_string(),
                c.category.name().to_string(),
                c.videos.to_string(),
                fmt_metric(c.mean_iou),
                fmt_metric(c.mean_precision),
                fmt_metric(c.mean_recall),
                fmt_metric(c.mean_fla),
            ]
        })
        .collect()
}

pub fn video_rows(config: &str, videos: &[VideoSummary]) -> Vec<[String; 8]> {
    videos
        .iter()
        .map(|v| {
            [
                config.to_string(),
                v.id.clone(),
                Category::of(v.has_interference).name().to_string(),
                v.metrics.frames_evaluated.to_string(),
                fmt_metric(v.scores.iou),
                fmt_metric(v.scores.precision),
                fmt_metric(v.scores.recall),
                fmt_metric(v.scores.fla),
            ]
        })
        .collect()
}

fn write_csv<const N: usize>(header: [&str; N], rows: &[[String; N]]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Category report CSV for any number of named runs.
pub fn report_csv(runs: &[(String, DatasetReport)]) -> String {
    let rows: Vec<_> = runs.iter().flat_map(|(name, r)| report_rows(name, r)).collect();
    write_csv(REPORT_HEADER, &rows)
}

pub fn videos_csv(runs: &[(String, Vec<VideoSummary>)]) -> String {
    let rows: Vec<_> = runs.iter().flat_map(|(name, v)| video_rows(name, v)).collect();
    write_csv(VIDEO_HEADER, &rows)
}

/// The five ablation configurations, in order.
pub fn ablation_presets() -> Vec<(String, PipelineConfig)> {
    let full = PipelineConfig::default();

    let mut bgs_only = full.clone();
    bgs_only.bgs.params.method = BgsMethod::Mog2;
    bgs_only.detect.enabled = false;
    bgs_only.temporal.enabled = false;
    bgs_only.baseline.close_kernel = BGS_ONLY_CLOSE_KERNEL;

    let mut no_temporal = full.clone();
    no_temporal.temporal.enabled = false;
    no_temporal.detect.query.tau_vlm = 0.09;

    let mut no_bgs = full.clone();
    no_bgs.bgs.enabled = false;
    no_bgs.enhance.factor = 1.5;
    no_bgs.detect.query.tau_vlm = 0.19;

    let mut traditional = full.clone();
    traditional.segment.method = SegmentMethod::Traditional;

    vec![
        ("bgs_only".to_string(), bgs_only),
        ("no_temporal".to_string(), no_temporal),
        ("no_bgs".to_string(), no_bgs),
        ("full_traditional".to_string(), traditional),
        ("full_promptable".to_string(), full),
    ]
}

/// Closing size of the background-subtraction-only preset.
pub const BGS_ONLY_CLOSE_KERNEL: usize = 50;

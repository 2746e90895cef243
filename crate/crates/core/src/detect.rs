//! Prompt-guided detection on the enhanced difference image.
//!
//! A detector is asked two text queries: a positive prompt describing the
//! leak and a negative prompt listing look-alike moving objects. A box is kept
//! only when its best-matching query is the positive one and that score
//! reaches `tau_vlm`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::bgs::DiffImage;
use crate::imgops::box_iou;
use crate::remote::{BackendError, HttpClient, RemoteConfig};
use crate::types::{BBox, BinaryMask, ScoredBox, NEGATIVE_QUERY, POSITIVE_QUERY};
use crate::wire::{encode_png_base64, DetectRequest, DetectResponse, WireBox};

pub const DEFAULT_POSITIVE_PROMPT: &str = "white steam";
pub const DEFAULT_NEGATIVE_PROMPT: &str = "white human, car, bird, bike, and other objects";
pub const DEFAULT_TAU_VLM: f32 = 0.12;
pub const DEFAULT_NMS_IOU: f32 = 0.5;

/// Ground-truth components smaller than this are ignored by the oracle.
pub const ORACLE_MIN_COMPONENT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorQuery {
    pub positive_prompt: String,
    pub negative_prompt: String,
    pub tau_vlm: f32,
}

impl Default for DetectorQuery {
    fn default() -> Self {
        Self {
            positive_prompt: DEFAULT_POSITIVE_PROMPT.to_string(),
            negative_prompt: DEFAULT_NEGATIVE_PROMPT.to_string(),
            tau_vlm: DEFAULT_TAU_VLM,
        }
    }
}

impl DetectorQuery {
    pub fn validate(&self) -> Result<(), String> {
        if self.positive_prompt.trim().is_empty() || self.negative_prompt.trim().is_empty() {
            return Err("prompts must be non-empty".into());
        }
        if !(self.tau_vlm > 0.0 && self.tau_vlm < 1.0) {
            return Err(format!("tau_vlm must be in (0, 1), got {}", self.tau_vlm));
        }
        Ok(())
    }

    pub fn queries(&self) -> Vec<String> {
        vec![self.positive_prompt.clone(), self.negative_prompt.clone()]
    }
}

/// What a backend may know about the frame besides its pixels.
#[derive(Debug, Clone, Copy)]
pub struct FrameContext<'a> {
    pub video_id: &'a str,
    pub frame_index: usize,
    pub gt: Option<&'a BinaryMask>,
}

pub trait Detector: Send + Sync {
    fn detect(&self, ctx: &FrameContext<'_>, image: &DiffImage, query: &DetectorQuery) -> Result<Vec<ScoredBox>, BackendError>;
}

pub fn detect(
    backend: &dyn Detector,
    ctx: &FrameContext<'_>,
    image: &DiffImage,
    query: &DetectorQuery,
) -> Result<Vec<ScoredBox>, BackendError> {
    backend.detect(ctx, image, query)
}

/// Applies the query-attribution and threshold rule to one raw box and clips
/// it to the image. `Ok(None)` means the box is rejected.
pub fn accept_box(raw: &WireBox, tau_vlm: f32, width: usize, height: usize) -> Result<Option<ScoredBox>, BackendError> {
    let (query_index, score) = match &raw.scores {
        Some(scores) if !scores.is_empty() => {
            // first maximum wins, so the positive query keeps exact ties
            let mut best = 0;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = i;
                }
            }
            (best, scores[best])
        }
        _ => (raw.query_index, raw.score),
    };
    if !(0.0..=1.0).contains(&score) {
        return Err(BackendError::Malformed(format!("score {score} outside [0, 1]")));
    }
    if query_index > NEGATIVE_QUERY {
        return Err(BackendError::Malformed(format!("query index {query_index} out of range")));
    }
    let bbox = BBox::new(raw.x1, raw.y1, raw.x2, raw.y2)
        .map_err(|e| BackendError::Malformed(e.to_string()))?;
    if query_index != POSITIVE_QUERY || score < tau_vlm {
        return Ok(None);
    }
    Ok(bbox.clip(width, height).map(|b| ScoredBox::new(b, score, query_index)))
}

fn accept_all(raw: &[WireBox], query: &DetectorQuery, width: usize, height: usize) -> Result<Vec<ScoredBox>, BackendError> {
    let mut out = Vec::new();
    for b in raw {
        if let Some(sb) = accept_box(b, query.tau_vlm, width, height)? {
            out.push(sb);
        }
    }
    Ok(out)
}

/// Greedy non-maximum suppression. Boxes are visited by descending score
/// (ties by input order); a box survives if its IoU with every kept box is at
/// most `iou_threshold`.
pub fn nms(boxes: &[ScoredBox], iou_threshold: f32) -> Vec<ScoredBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score).then(a.cmp(&b)));
    let mut kept: Vec<ScoredBox> = Vec::new();
    for i in order {
        let candidate = boxes[i];
        if kept.iter().all(|k| box_iou(&k.bbox, &candidate.bbox) <= iou_threshold) {
            kept.push(candidate);
        }
    }
    kept
}

/// Tight bounds `(x0, y0, x1_exclusive, y1_exclusive)` and pixel count of each
/// 8-connected component, in raster order of first pixel.
pub fn connected_components(mask: &BinaryMask) -> Vec<((usize, usize, usize, usize), usize)> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut count = 0;
        while let Some(p) = stack.pop() {
            let (x, y) = (p % w, p / w);
            count += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    let q = ny * w + nx;
                    if !seen[q] && mask.bits()[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        out.push(((x0, y0, x1, y1), count));
    }
    out
}

/// Emits the tight box of every sizeable ground-truth component with score 1.
#[derive(Debug, Clone, Default)]
pub struct OracleDetector;

impl Detector for OracleDetector {
    fn detect(&self, ctx: &FrameContext<'_>, image: &DiffImage, query: &DetectorQuery) -> Result<Vec<ScoredBox>, BackendError> {
        let gt = ctx.gt.ok_or(BackendError::MissingGroundTruth(ctx.frame_index))?;
        let raw: Vec<WireBox> = connected_components(gt)
            .into_iter()
            .filter(|&(_, n)| n >= ORACLE_MIN_COMPONENT)
            .map(|((x0, y0, x1, y1), _)| WireBox {
                x1: x0 as f32,
                y1: y0 as f32,
                x2: x1 as f32,
                y2: y1 as f32,
                score: 1.0,
                query_index: POSITIVE_QUERY,
                scores: None,
            })
            .collect();
        accept_all(&raw, query, image.width(), image.height())
    }
}

/// Per-video, per-frame raw detections: `{"video": {"frame": [box, ...]}}`.
pub type DetectionScript = BTreeMap<String, BTreeMap<usize, Vec<WireBox>>>;

/// Replays scripted raw detections through the acceptance rule.
#[derive(Debug, Clone, Default)]
pub struct ScriptedDetector {
    script: DetectionScript,
}

impl ScriptedDetector {
    pub fn new(script: DetectionScript) -> Self {
        Self { script }
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        serde_json::from_str(text)
            .map(Self::new)
            .map_err(|e| BackendError::Config(format!("detection script: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

impl Detector for ScriptedDetector {
    fn detect(&self, ctx: &FrameContext<'_>, image: &DiffImage, query: &DetectorQuery) -> Result<Vec<ScoredBox>, BackendError> {
        let raw = self
            .script
            .get(ctx.video_id)
            .and_then(|frames| frames.get(&ctx.frame_index))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        accept_all(raw, query, image.width(), image.height())
    }
}

/// Client for `POST /v1/detect`.
pub struct RemoteDetector {
    client: HttpClient,
}

impl RemoteDetector {
    pub fn new(cfg: &RemoteConfig) -> Result<Self, BackendError> {
        Ok(Self {
            client: HttpClient::new(cfg)?,
        })
    }
}

impl Detector for RemoteDetector {
    fn detect(&self, _ctx: &FrameContext<'_>, image: &DiffImage, query: &DetectorQuery) -> Result<Vec<ScoredBox>, BackendError> {
        let request = DetectRequest {
            image: encode_png_base64(image.width(), image.height(), image.values())
                .map_err(|e| BackendError::Config(e.to_string()))?,
            queries: query.queries(),
            threshold: query.tau_vlm,
        };
        let response: DetectResponse = self.client.post_json("/v1/detect", &request)?;
        accept_all(&response.boxes, query, image.width(), image.height())
    }
}

//! Turning validated boxes into a frame mask.

use crate::bgs::DiffImage;
use crate::imgops::{open_close, or_into, otsu_threshold, StructuringElement};
use crate::remote::{BackendError, HttpClient, RemoteConfig};
use crate::types::{BinaryMask, ScoredBox};
use crate::wire::{encode_png_base64, rle_decode, PromptBox, SegmentRequest, SegmentResponse};

/// Per-box Otsu threshold followed by opening and optional closing.
///
/// Morphology runs on the box's sub-mask surrounded by an empty margin, so
/// the box edge acts as background rather than as the image border; the
/// result is cropped back to the box before pasting.
pub fn segment_traditional(
    image: &DiffImage,
    boxes: &[ScoredBox],
    open: Option<StructuringElement>,
    close: Option<StructuringElement>,
) -> BinaryMask {
    let (w, h) = image.dims();
    let mut out = BinaryMask::empty(w, h);
    let margin = [open, close]
        .iter()
        .flatten()
        .map(|se| se.width.max(se.height))
        .max()
        .unwrap_or(0);

    for b in boxes {
        let (x0, y0, x1, y1) = b.bbox.pixel_span(w, h);
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        let (bw, bh) = (x1 - x0, y1 - y0);
        let mut interior = Vec::with_capacity(bw * bh);
        for y in y0..y1 {
            interior.extend_from_slice(&image.values()[y * w + x0..y * w + x1]);
        }
        let Some(t) = otsu_threshold(&interior) else {
            continue;
        };

        let (pw, ph) = (bw + 2 * margin, bh + 2 * margin);
        let padded = BinaryMask::from_fn(pw, ph, |x, y| {
            x >= margin && y >= margin && x < margin + bw && y < margin + bh && interior[(y - margin) * bw + (x - margin)] > t
        });
        let cleaned = open_close(&padded, open, close);
        for y in 0..bh {
            for x in 0..bw {
                if cleaned.get(x + margin, y + margin) {
                    out.set(x0 + x, y0 + y, true);
                }
            }
        }
    }
    out
}

/// A box-promptable segmenter returning one mask per box, in box order.
pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &DiffImage, boxes: &[ScoredBox]) -> Result<Vec<BinaryMask>, BackendError>;
}

/// Returns each box's filled rectangle.
#[derive(Debug, Clone, Default)]
pub struct MockSegmenter;

pub fn box_rectangle(b: &ScoredBox, width: usize, height: usize) -> BinaryMask {
    let (x0, y0, x1, y1) = b.bbox.pixel_span(width, height);
    BinaryMask::from_fn(width, height, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
}

impl Segmenter for MockSegmenter {
    fn segment(&self, image: &DiffImage, boxes: &[ScoredBox]) -> Result<Vec<BinaryMask>, BackendError> {
        Ok(boxes.iter().map(|b| box_rectangle(b, image.width(), image.height())).collect())
    }
}

/// Client for `POST /v1/segment`.
pub struct RemoteSegmenter {
    client: HttpClient,
}

impl RemoteSegmenter {
    pub fn new(cfg: &RemoteConfig) -> Result<Self, BackendError> {
        Ok(Self {
            client: HttpClient::new(cfg)?,
        })
    }
}

impl Segmenter for RemoteSegmenter {
    fn segment(&self, image: &DiffImage, boxes: &[ScoredBox]) -> Result<Vec<BinaryMask>, BackendError> {
        if boxes.is_empty() {
            return Ok(Vec::new());
        }
        let request = SegmentRequest {
            image: encode_png_base64(image.width(), image.height(), image.values())
                .map_err(|e| BackendError::Config(e.to_string()))?,
            boxes: boxes
                .iter()
                .map(|b| PromptBox {
                    x1: b.bbox.x1,
                    y1: b.bbox.y1,
                    x2: b.bbox.x2,
                    y2: b.bbox.y2,
                })
                .collect(),
        };
        let response: SegmentResponse = self.client.post_json("/v1/segment", &request)?;
        decode_masks(&response, boxes.len(), image.width(), image.height())
    }
}

pub fn decode_masks(response: &SegmentResponse, expected: usize, width: usize, height: usize) -> Result<Vec<BinaryMask>, BackendError> {
    if response.masks.len() != expected {
        return Err(BackendError::Malformed(format!(
            "expected {expected} masks, got {}",
            response.masks.len()
        )));
    }
    response
        .masks
        .iter()
        .map(|runs| rle_decode(runs, width, height).map_err(|e| BackendError::Malformed(e.to_string())))
        .collect()
}

/// One mask per box from `backend`, OR-combined.
pub fn segment_promptable(backend: &dyn Segmenter, image: &DiffImage, boxes: &[ScoredBox]) -> Result<BinaryMask, BackendError> {
    let (w, h) = image.dims();
    let mut out = BinaryMask::empty(w, h);
    if boxes.is_empty() {
        return Ok(out);
    }
    let masks = backend.segment(image, boxes)?;
    if masks.len() != boxes.len() {
        return Err(BackendError::Malformed(format!(
            "segmenter returned {} masks for {} boxes",
            masks.len(),
            boxes.len()
        )));
    }
    for m in &masks {
        or_into(&mut out, m).map_err(|e| BackendError::Malformed(e.to_string()))?;
    }
    Ok(out)
}

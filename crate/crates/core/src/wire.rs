//! JSON wire format spoken with the inference service.
//!
//! * `POST /v1/detect` takes a [`DetectRequest`], answers [`DetectResponse`]
//! * `POST /v1/segment` takes a [`SegmentRequest`], answers [`SegmentResponse`]
//! * `GET /healthz` answers [`Health`]
//!
//! Images travel as base64-encoded 8-bit grayscale PNG. Masks travel as
//! row-major run lengths alternating false/true, starting with a false run
//! (which may be 0).

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::BinaryMask;

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("run lengths cover {actual} pixels, expected {expected}")]
    RleLength { expected: usize, actual: usize },
    #[error("image encoding failed: {0}")]
    Image(String),
    #[error("base64: {0}")]
    Base64(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
    pub score: f32,
    pub query_index: usize,
    /// Optional per-query scores, in query order. When present the client
    /// re-derives `query_index`/`score` from them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image: String,
    pub queries: Vec<String>,
    pub threshold: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub boxes: Vec<WireBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: String,
    pub boxes: Vec<PromptBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub masks: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub mode: String,
}

pub fn rle_encode(mask: &BinaryMask) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &b in mask.bits() {
        if b == current {
            run += 1;
        } else {
            runs.push(run);
            current = b;
            run = 1;
        }
    }
    runs.push(run);
    runs
}

pub fn rle_decode(runs: &[u32], width: usize, height: usize) -> Result<BinaryMask, WireError> {
    let expected = width * height;
    let actual: usize = runs.iter().map(|&r| r as usize).sum();
    if actual != expected {
        return Err(WireError::RleLength { expected, actual });
    }
    let mut bits = Vec::with_capacity(expected);
    let mut value = false;
    for &run in runs {
        bits.extend(std::iter::repeat_n(value, run as usize));
        value = !value;
    }
    BinaryMask::new(width, height, bits).map_err(|_| WireError::RleLength { expected, actual: 0 })
}

/// Encodes grayscale pixels as base64 PNG.
pub fn encode_png_base64(width: usize, height: usize, pixels: &[u8]) -> Result<String, WireError> {
    let img = GrayImage::from_raw(width as u32, height as u32, pixels.to_vec())
        .ok_or_else(|| WireError::Image("buffer does not match dimensions".into()))?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| WireError::Image(e.to_string()))?;
    Ok(STANDARD.encode(buf.into_inner()))
}

pub fn decode_png_base64(data: &str) -> Result<GrayImage, WireError> {
    let bytes = STANDARD.decode(data).map_err(|e| WireError::Base64(e.to_string()))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| WireError::Image(e.to_string()))?;
    Ok(img.into_luma8())
}

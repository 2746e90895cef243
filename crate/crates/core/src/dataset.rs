//! On-disk dataset layout, manifest parsing, and frame/mask file IO.
//!
//! Layout: `<root>/<path>/frames/NNNNNN.png` and optionally
//! `<root>/<path>/gt/NNNNNN.png`, one 8-bit grayscale image per frame.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat};
use thiserror::Error;

use crate::types::{BinaryMask, Frame, ShapeError, VideoClip};

/// Ground truth is stored un-thresholded; pixels above this are positive.
pub const DEFAULT_GT_THRESHOLD: u8 = 127;

pub const MANIFEST_HEADER: &str = "id,path,has_interference,excluded";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing directory {0}")]
    MissingDirectory(PathBuf),
    #[error("{dir}: {frames} frames but {gt} ground-truth masks")]
    CountMismatch {
        dir: PathBuf,
        frames: usize,
        gt: usize,
    },
    #[error("{path}: {actual:?} does not match clip dimensions {expected:?}")]
    DimensionMismatch {
        path: PathBuf,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("{0}: no frames found")]
    NoFrames(PathBuf),
    #[error("{path}: frame {index} is past the clip's {frames} frames")]
    FrameOutOfRange { path: PathBuf, index: usize, frames: usize },
    #[error("manifest line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("manifest line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub has_interference: bool,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Parses manifest text. The first non-blank line is the header.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Manifest, DatasetError> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        let mut header_seen = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let row = raw.trim();
            if row.is_empty() || row.starts_with('#') {
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(DatasetError::MalformedRow {
                    line,
                    reason: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let id = fields[0];
            if id.is_empty() || fields[1].is_empty() {
                return Err(DatasetError::MalformedRow {
                    line,
                    reason: "empty id or path".into(),
                });
            }
            let has_interference = parse_flag(fields[2], "has_interference", line)?;
            let excluded = parse_flag(fields[3], "excluded", line)?;
            if !seen.insert(id.to_string()) {
                return Err(DatasetError::DuplicateId {
                    line,
                    id: id.to_string(),
                });
            }
            entries.push(ManifestEntry {
                id: id.to_string(),
                path: PathBuf::from(fields[1]),
                has_interference,
                excluded,
            });
        }
        Ok(Manifest {
            root: root.into(),
            entries,
        })
    }

    /// Reads a manifest file; entry paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Manifest, DatasetError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(&text, root)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.id,
                e.path.display(),
                e.has_interference,
                e.excluded
            ));
        }
        out
    }

    /// Entries that take part in evaluation.
    pub fn active(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| !e.excluded)
    }
}

/// Accepts `true`/`false`, optionally written as `column=true`.
fn parse_flag(field: &str, column: &str, line: usize) -> Result<bool, DatasetError> {
    let value = field
        .strip_prefix(column)
        .and_then(|rest| rest.strip_prefix('='))
        .unwrap_or(field);
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(DatasetError::MalformedRow {
            line,
            reason: format!("{column}: expected true/false, got {other:?}"),
        }),
    }
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn read_gray(path: &Path) -> Result<GrayImage, DatasetError> {
    let img = image::open(path).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.into_luma8())
}

pub fn read_frame(path: &Path, index: usize) -> Result<Frame, DatasetError> {
    let img = read_gray(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Frame::new(index, w, h, img.into_raw())?)
}

pub fn write_frame(frame: &Frame, path: &Path) -> Result<(), DatasetError> {
    let img = GrayImage::from_raw(
        frame.width() as u32,
        frame.height() as u32,
        frame.pixels().to_vec(),
    )
    .expect("frame buffer matches dimensions");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|source| DatasetError::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads a mask image, binarizing at `> threshold`.
pub fn read_mask_thresholded(path: &Path, threshold: u8) -> Result<BinaryMask, DatasetError> {
    let img = read_gray(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bits = img.into_raw().into_iter().map(|v| v > threshold).collect();
    Ok(BinaryMask::new(w, h, bits)?)
}

pub fn read_mask(path: &Path) -> Result<BinaryMask, DatasetError> {
    read_mask_thresholded(path, DEFAULT_GT_THRESHOLD)
}

/// Writes a mask as a 0/255 grayscale PNG.
pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<(), DatasetError> {
    let raw = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("mask buffer matches dimensions");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|source| DatasetError::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// Loads one manifest entry; ground truth is binarized at `> gt_threshold`.
pub fn load_clip(root: &Path, entry: &ManifestEntry, gt_threshold: u8) -> Result<VideoClip, DatasetError> {
    let dir = root.join(&entry.path);
    let frames_dir = dir.join("frames");
    if !frames_dir.is_dir() {
        return Err(DatasetError::MissingDirectory(frames_dir));
    }
    let frame_files = list_images(&frames_dir)?;
    if frame_files.is_empty() {
        return Err(DatasetError::NoFrames(frames_dir));
    }

    let mut frames = Vec::with_capacity(frame_files.len());
    for (i, path) in frame_files.iter().enumerate() {
        let frame = read_frame(path, i)?;
        if let Some(first) = frames.first() {
            check_file_dims(path, Frame::dims(first), frame.dims())?;
        }
        frames.push(frame);
    }
    let dims = frames[0].dims();

    let gt_dir = dir.join("gt");
    let gt = if gt_dir.is_dir() {
        let gt_files = list_images(&gt_dir)?;
        if gt_files.len() != frames.len() {
            return Err(DatasetError::CountMismatch {
                dir,
                frames: frames.len(),
                gt: gt_files.len(),
            });
        }
        let mut masks = Vec::with_capacity(gt_files.len());
        for path in &gt_files {
            let mask = read_mask_thresholded(path, gt_threshold)?;
            check_file_dims(path, dims, mask.dims())?;
            masks.push(mask);
        }
        Some(masks)
    } else {
        None
    };

    Ok(VideoClip::new(
        entry.id.clone(),
        frames,
        gt,
        entry.has_interference,
    )?)
}

fn check_file_dims(path: &Path, expected: (usize, usize), actual: (usize, usize)) -> Result<(), DatasetError> {
    if expected != actual {
        return Err(DatasetError::DimensionMismatch {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    Ok(())
}

/// Writes a clip in the dataset layout under `dir` (frames, and gt when present).
pub fn write_clip(clip: &VideoClip, dir: &Path) -> Result<(), DatasetError> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
    for frame in &clip.frames {
        write_frame(frame, &frames_dir.join(frame_file_name(frame.index)))?;
    }
    if let Some(gt) = &clip.gt {
        let gt_dir = dir.join("gt");
        fs::create_dir_all(&gt_dir).map_err(io_err(&gt_dir))?;
        for (i, mask) in gt.iter().enumerate() {
            write_mask(mask, &gt_dir.join(frame_file_name(i)))?;
        }
    }
    Ok(())
}

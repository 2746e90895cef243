//! Domain types shared by every pipeline stage.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("expected {expected} pixels for {width}x{height}, got {actual}")]
    PixelCount {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    Mismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid box ({x1}, {y1}, {x2}, {y2})")]
    InvalidBox { x1: f32, y1: f32, x2: f32, y2: f32 },
}

pub(crate) fn check_dims(width: usize, height: usize, len: usize) -> Result<(), ShapeError> {
    if width == 0 || height == 0 {
        return Err(ShapeError::EmptyDimensions { width, height });
    }
    if width * height != len {
        return Err(ShapeError::PixelCount {
            width,
            height,
            expected: width * height,
            actual: len,
        });
    }
    Ok(())
}

pub(crate) fn same_dims(left: (usize, usize), right: (usize, usize)) -> Result<(), ShapeError> {
    if left != right {
        return Err(ShapeError::Mismatch { left, right });
    }
    Ok(())
}

/// One 8-bit grayscale video frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub index: usize,
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(index: usize, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ShapeError> {
        check_dims(width, height, pixels.len())?;
        Ok(Self {
            index,
            width,
            height,
            pixels,
        })
    }

    pub fn filled(index: usize, width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "empty frame");
        Self {
            index,
            width,
            height,
            pixels: vec![value; width * height],
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

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }
}

/// Per-pixel boolean mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, ShapeError> {
        check_dims(width, height, bits.len())?;
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::filled(width, height, false)
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        assert!(width > 0 && height > 0, "empty mask");
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                mask.bits[y * width + x] = f(x, y);
            }
        }
        mask
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    /// True iff every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }
}

/// Axis-aligned box in pixel coordinates; `x2`/`y2` are exclusive edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Result<Self, ShapeError> {
        let valid = [x1, y1, x2, y2].iter().all(|v| v.is_finite()) && x1 < x2 && y1 < y2;
        if !valid {
            return Err(ShapeError::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f32 {
        self.width() * self.height()
    }

    /// Clips to `[0, width] x [0, height]`; `None` if nothing with positive area remains.
    pub fn clip(&self, width: usize, height: usize) -> Option<BBox> {
        let (w, h) = (width as f32, height as f32);
        BBox::new(
            self.x1.clamp(0.0, w),
            self.y1.clamp(0.0, h),
            self.x2.clamp(0.0, w),
            self.y2.clamp(0.0, h),
        )
        .ok()
    }

    /// Half-open pixel ranges `(x0, y0, x1, y1)` of the pixels whose centers lie
    /// inside the box, clipped to the image. Integer boxes cover exactly
    /// `x1..x2` by `y1..y2`.
    pub fn pixel_span(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let lo = |v: f32, max: usize| ((v - 0.5).ceil().max(0.0) as usize).min(max);
        (
            lo(self.x1, width),
            lo(self.y1, height),
            lo(self.x2, width),
            lo(self.y2, height),
        )
    }

    /// Exact coordinate equality, used for de-duplication.
    pub fn same_coords(&self, other: &BBox) -> bool {
        self.x1.to_bits() == other.x1.to_bits()
            && self.y1.to_bits() == other.y1.to_bits()
            && self.x2.to_bits() == other.x2.to_bits()
            && self.y2.to_bits() == other.y2.to_bits()
    }
}

/// Query slot a detection is attributed to.
pub const POSITIVE_QUERY: usize = 0;
pub const NEGATIVE_QUERY: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f32,
    pub query_index: usize,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f32, query_index: usize) -> Self {
        debug_assert!((0.0..=1.0).contains(&score));
        debug_assert!(query_index <= NEGATIVE_QUERY);
        Self {
            bbox,
            score,
            query_index,
        }
    }

    pub fn positive(x1: f32, y1: f32, x2: f32, y2: f32, score: f32) -> Self {
        let bbox = BBox::new(x1, y1, x2, y2).expect("valid box");
        Self::new(bbox, score, POSITIVE_QUERY)
    }
}

/// A video with optional per-frame ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub id: String,
    pub frames: Vec<Frame>,
    pub gt: Option<Vec<BinaryMask>>,
    pub has_interference: bool,
}

impl VideoClip {
    pub fn new(
        id: impl Into<String>,
        frames: Vec<Frame>,
        gt: Option<Vec<BinaryMask>>,
        has_interference: bool,
    ) -> Result<Self, ShapeError> {
        if let Some(first) = frames.first() {
            let dims = first.dims();
            for frame in &frames {
                same_dims(dims, frame.dims())?;
            }
            if let Some(gt) = &gt {
                if gt.len() != frames.len() {
                    return Err(ShapeError::PixelCount {
                        width: dims.0,
                        height: dims.1,
                        expected: frames.len(),
                        actual: gt.len(),
                    });
                }
                for mask in gt {
                    same_dims(dims, mask.dims())?;
                }
            }
        }
        Ok(Self {
            id: id.into(),
            frames,
            gt,
            has_interference,
        })
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(Frame::dims)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

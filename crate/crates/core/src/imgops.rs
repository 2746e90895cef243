//! Primitive image and geometry operations.

use crate::types::{same_dims, BBox, BinaryMask, ShapeError};

/// Intersection-over-union of two boxes, in `[0, 1]`.
pub fn box_iou(a: &BBox, b: &BBox) -> f32 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Rectangular structuring element. The anchor sits at `(width / 2, height / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuringElement {
    pub width: usize,
    pub height: usize,
}

impl StructuringElement {
    pub fn square(k: usize) -> Self {
        Self::rect(k, k)
    }

    pub fn rect(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "structuring element must be at least 1x1");
        Self { width, height }
    }

    /// Offsets covered along one axis, relative to the anchor: `-a ..= k-1-a`.
    fn reach(k: usize) -> (usize, usize) {
        let a = k / 2;
        (a, k - 1 - a)
    }
}

/// Slides a window over one line. For every position `i` the window spans
/// `i - back ..= i + fwd`. `all == true` computes erosion (every in-range cell
/// set), otherwise dilation (any in-range cell set); out-of-range cells never
/// change the outcome.
fn line_pass(src: &[bool], dst: &mut [bool], back: usize, fwd: usize, all: bool, prefix: &mut Vec<u32>) {
    let n = src.len();
    prefix.clear();
    prefix.push(0);
    let mut acc = 0u32;
    for &b in src {
        acc += b as u32;
        prefix.push(acc);
    }
    for (i, out) in dst.iter_mut().enumerate() {
        let lo = i.saturating_sub(back);
        let hi = (i + fwd + 1).min(n);
        let count = prefix[hi] - prefix[lo];
        *out = if all { count == (hi - lo) as u32 } else { count > 0 };
    }
}

/// Applies `line_pass` along rows then columns.
fn separable(mask: &BinaryMask, se: StructuringElement, erode: bool) -> BinaryMask {
    let (w, h) = mask.dims();
    let (xa, xb) = StructuringElement::reach(se.width);
    let (ya, yb) = StructuringElement::reach(se.height);
    // Erosion looks at p + s; dilation at p - s (the reflected element).
    let (xback, xfwd, yback, yfwd) = if erode { (xa, xb, ya, yb) } else { (xb, xa, yb, ya) };

    let mut prefix = Vec::with_capacity(w.max(h) + 1);
    let mut rows = BinaryMask::empty(w, h);
    {
        let src = mask.bits();
        let dst = rows.bits_mut();
        for y in 0..h {
            let r = y * w..(y + 1) * w;
            line_pass(&src[r.clone()], &mut dst[r], xback, xfwd, erode, &mut prefix);
        }
    }

    let mut out = BinaryMask::empty(w, h);
    let mut col = vec![false; h];
    let mut col_out = vec![false; h];
    for x in 0..w {
        for (y, c) in col.iter_mut().enumerate() {
            *c = rows.bits()[y * w + x];
        }
        line_pass(&col, &mut col_out, yback, yfwd, erode, &mut prefix);
        let dst = out.bits_mut();
        for (y, &c) in col_out.iter().enumerate() {
            dst[y * w + x] = c;
        }
    }
    out
}

/// Binary erosion; pixels outside the image count as foreground, so closing
/// never removes pixels at the border.
pub fn erode(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    separable(mask, se, true)
}

/// Binary dilation; pixels outside the image are background.
pub fn dilate(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    separable(mask, se, false)
}

pub fn morph_open(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    dilate(&erode(mask, se), se)
}

pub fn morph_close(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    erode(&dilate(mask, se), se)
}

/// Opening followed by optional closing, the cleanup applied to thresholded masks.
pub fn open_close(mask: &BinaryMask, open: Option<StructuringElement>, close: Option<StructuringElement>) -> BinaryMask {
    let opened = match open {
        Some(se) => morph_open(mask, se),
        None => mask.clone(),
    };
    match close {
        Some(se) => morph_close(&opened, se),
        None => opened,
    }
}

/// 256-bin intensity histogram.
pub fn histogram(pixels: impl IntoIterator<Item = u8>) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for v in pixels {
        hist[v as usize] += 1;
    }
    hist
}

/// Otsu threshold over a histogram: the smallest `t` maximizing the
/// between-class variance of `{v <= t}` vs `{v > t}`. Foreground is `v > t`.
///
/// Scores are compared exactly in integer arithmetic, so ties are real ties.
/// When no split separates anything (a single distinct value) the threshold is
/// that value, which leaves the foreground empty. Returns `None` for an empty histogram.
pub fn otsu_from_histogram(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let total_sum: u128 = hist.iter().enumerate().map(|(v, &c)| v as u128 * c as u128).sum();

    // Between-class variance is (S0*n1 - S1*n0)^2 / (N^2 * n0 * n1); N^2 is common.
    let mut best: Option<(u8, u128, u128)> = None;
    let mut n0: u128 = 0;
    let mut s0: u128 = 0;
    for t in 0..=255u8 {
        n0 += hist[t as usize] as u128;
        s0 += t as u128 * hist[t as usize] as u128;
        let n1 = total as u128 - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total_sum - s0;
        let diff = (s0 * n1).abs_diff(s1 * n0);
        let num = diff * diff;
        let den = n0 * n1;
        let better = match best {
            None => true,
            // num/den > bnum/bden, exact
            Some((_, bnum, bden)) => num.checked_mul(bden).zip(bnum.checked_mul(den)).map_or_else(
                || (num as f64 / den as f64) > (bnum as f64 / bden as f64),
                |(l, r)| l > r,
            ),
        };
        if better {
            best = Some((t, num, den));
        }
    }
    match best {
        Some((t, num, _)) if num > 0 => Some(t),
        _ => {
            // Every split is empty on one side or has zero variance.
            let lowest = hist.iter().position(|&c| c > 0).unwrap_or(0) as u8;
            let highest = hist.iter().rposition(|&c| c > 0).unwrap_or(0) as u8;
            debug_assert_eq!(lowest, highest);
            Some(highest)
        }
    }
}

pub fn otsu_threshold(pixels: &[u8]) -> Option<u8> {
    otsu_from_histogram(&histogram(pixels.iter().copied()))
}

/// Pixelwise OR; an empty list yields an all-false mask of the given size.
pub fn mask_or(masks: &[BinaryMask], width: usize, height: usize) -> Result<BinaryMask, ShapeError> {
    let mut out = BinaryMask::empty(width, height);
    for m in masks {
        or_into(&mut out, m)?;
    }
    Ok(out)
}

pub fn or_into(acc: &mut BinaryMask, other: &BinaryMask) -> Result<(), ShapeError> {
    same_dims(acc.dims(), other.dims())?;
    for (a, &b) in acc.bits_mut().iter_mut().zip(other.bits()) {
        *a |= b;
    }
    Ok(())
}

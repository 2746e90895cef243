//! Temporal validation of detections against recent frames.
//!
//! Forward validation keeps a current box only if enough recent frames hold a
//! box that overlaps it or sits within a small shift of it. When nothing
//! validates, back-fill re-emits boxes that persisted across the last few
//! frames, so a leak does not vanish on a single missed detection.
//!
//! The history holds the raw (post-NMS, pre-filter) detections of each
//! processed frame. Storing filtered output instead would leave the history
//! permanently empty: nothing could ever validate against it.

use std::collections::VecDeque;

use crate::imgops::box_iou;
use crate::types::ScoredBox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalParams {
    /// Lookback for forward validation, in processed frames.
    pub k1: usize,
    /// Matched past frames required for a box to be valid.
    pub n1: usize,
    pub tau_iou1: f32,
    /// Per-coordinate shift bound (pixels) for a positional match.
    pub tau_shift: f32,
    /// Lookback for back-fill.
    pub k2: usize,
    pub tau_iou2: f32,
    /// Boxes covering more than this fraction of the image are ignored.
    pub ignore_large: f32,
    pub history_cap: usize,
}

impl Default for TemporalParams {
    fn default() -> Self {
        Self {
            k1: 10,
            n1: 1,
            tau_iou1: 0.3,
            tau_shift: 40.0,
            k2: 3,
            tau_iou2: 0.3,
            ignore_large: 0.9,
            history_cap: 10,
        }
    }
}

/// Back-fill runs only once the history is longer than this.
pub const BACKFILL_MIN_HISTORY: usize = 3;

impl TemporalParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.n1 >= 1 && self.k1 >= self.n1) {
            return Err("temporal: need k1 >= n1 >= 1".into());
        }
        for (name, v) in [("tau_iou1", self.tau_iou1), ("tau_iou2", self.tau_iou2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(format!("temporal: {name} must be in (0, 1)"));
            }
        }
        if !(self.tau_shift > 0.0) {
            return Err("temporal: tau_shift must be positive".into());
        }
        if !(self.ignore_large > 0.0) {
            return Err("temporal: ignore_large must be positive".into());
        }
        if self.history_cap == 0 || self.k2 > self.history_cap {
            return Err("temporal: need 1 <= history_cap and k2 <= history_cap".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemporalState {
    history: VecDeque<Vec<ScoredBox>>,
}

impl TemporalState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &[ScoredBox]> {
        self.history.iter().map(Vec::as_slice)
    }

    /// Appends one frame's raw detections, evicting the oldest beyond `cap`.
    pub fn push(&mut self, raw_detections: Vec<ScoredBox>, cap: usize) {
        self.history.push_back(raw_detections);
        while self.history.len() > cap {
            self.history.pop_front();
        }
    }

    fn last(&self, n: usize) -> impl Iterator<Item = &Vec<ScoredBox>> {
        self.history.iter().skip(self.history.len().saturating_sub(n))
    }
}

pub fn push_history(state: &mut TemporalState, raw_detections: Vec<ScoredBox>, params: &TemporalParams) {
    state.push(raw_detections, params.history_cap);
}

fn too_large(b: &ScoredBox, image_area: f32, params: &TemporalParams) -> bool {
    b.bbox.area() > image_area * params.ignore_large
}

fn shift_match(a: &ScoredBox, b: &ScoredBox, tau_shift: f32) -> bool {
    let (a, b) = (&a.bbox, &b.bbox);
    (a.x1 - b.x1).abs() < tau_shift
        && (a.y1 - b.y1).abs() < tau_shift
        && (a.x2 - b.x2).abs() < tau_shift
        && (a.y2 - b.y2).abs() < tau_shift
}

/// Filters `current` against `state`. `state` is not modified.
pub fn temporal_filter(
    current: &[ScoredBox],
    state: &TemporalState,
    image_dims: (usize, usize),
    params: &TemporalParams,
) -> Vec<ScoredBox> {
    let image_area = (image_dims.0 * image_dims.1) as f32;

    let valid: Vec<ScoredBox> = current
        .iter()
        .filter(|b| !too_large(b, image_area, params))
        .filter(|b| {
            let matched = state
                .last(params.k1)
                .filter(|past| {
                    past.iter().any(|p| {
                        box_iou(&b.bbox, &p.bbox) > params.tau_iou1 || shift_match(b, p, params.tau_shift)
                    })
                })
                .count();
            matched >= params.n1
        })
        .copied()
        .collect();

    if !valid.is_empty() || state.len() <= BACKFILL_MIN_HISTORY {
        return valid;
    }

    let recent: Vec<&Vec<ScoredBox>> = state.last(params.k2).collect();
    let mut filled: Vec<ScoredBox> = Vec::new();
    for (i, first) in recent.iter().enumerate() {
        for (j, second) in recent.iter().enumerate() {
            if i == j {
                continue;
            }
            for b in first.iter() {
                if too_large(b, image_area, params) || filled.iter().any(|f| f.bbox.same_coords(&b.bbox)) {
                    continue;
                }
                if second.iter().any(|o| box_iou(&b.bbox, &o.bbox) > params.tau_iou2) {
                    filled.push(*b);
                }
            }
        }
    }
    filled
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sb(x1: f32, y1: f32, x2: f32, y2: f32) -> ScoredBox {
        ScoredBox::positive(x1, y1, x2, y2, 0.5)
    }

    fn state_of(frames: Vec<Vec<ScoredBox>>) -> TemporalState {
        let mut s = TemporalState::new();
        for f in frames {
            s.push(f, 10);
        }
        s
    }

    const DIMS: (usize, usize) = (320, 240);

    #[test]
    fn overlapping_past_box_validates() {
        let p = TemporalParams::default();
        let s = state_of(vec![vec![sb(100.0, 100.0, 200.0, 200.0)]]);
        let cur = [sb(105.0, 100.0, 205.0, 200.0)];
        assert!((box_iou(&cur[0].bbox, &s.entries().next().unwrap()[0].bbox) - 9500.0 / 10500.0).abs() < 1e-6);
        assert_eq!(temporal_filter(&cur, &s, DIMS, &p), cur.to_vec());
    }

    #[test]
    fn shift_match_without_overlap() {
        let p = TemporalParams::default();
        // disjoint, but each coordinate moved by 39 < 40
        let s = state_of(vec![vec![sb(0.0, 0.0, 30.0, 30.0)]]);
        let cur = [sb(39.0, 39.0, 69.0, 69.0)];
        assert_eq!(temporal_filter(&cur, &s, DIMS, &p), cur.to_vec());
        let cur = [sb(40.0, 0.0, 70.0, 30.0)];
        assert!(temporal_filter(&cur, &s, DIMS, &p).is_empty());
    }

    #[test]
    fn size_gate_drops_huge_box() {
        let p = TemporalParams::default();
        // 0.95 of 320x240
        let big = sb(0.0, 0.0, 320.0, 228.0);
        let s = state_of(vec![vec![big]; 5]);
        assert!(temporal_filter(&[big], &s, DIMS, &p).is_empty());
    }

    #[test]
    fn backfill_pairs() {
        let p = TemporalParams::default();
        let a = sb(10.0, 10.0, 50.0, 50.0);
        let b = sb(12.0, 10.0, 52.0, 50.0);
        let s = state_of(vec![vec![], vec![a], vec![b], vec![]]);
        assert!((box_iou(&a.bbox, &b.bbox) - 1520.0 / 1680.0).abs() < 1e-6);
        assert_eq!(temporal_filter(&[], &s, DIMS, &p), vec![a, b]);
        // history of exactly 3 never back-fills
        let s = state_of(vec![vec![a], vec![b], vec![]]);
        assert!(temporal_filter(&[], &s, DIMS, &p).is_empty());
    }

    #[test]
    fn backfill_dedups_repeated_box() {
        let p = TemporalParams::default();
        let a = sb(10.0, 10.0, 50.0, 50.0);
        let s = state_of(vec![vec![], vec![a], vec![a], vec![a]]);
        assert_eq!(temporal_filter(&[], &s, DIMS, &p), vec![a]);
    }

    #[test]
    fn cold_start_is_empty() {
        let p = TemporalParams::default();
        assert!(temporal_filter(&[sb(0.0, 0.0, 10.0, 10.0)], &TemporalState::new(), DIMS, &p).is_empty());
    }

    #[test]
    fn history_is_capped() {
        let p = TemporalParams::default();
        let mut s = TemporalState::new();
        push_history(&mut s, vec![], &p);
        assert_eq!(s.len(), 1);
        for i in 0..10 {
            push_history(&mut s, vec![sb(i as f32, 0.0, i as f32 + 1.0, 1.0)], &p);
        }
        assert_eq!(s.len(), 10);
        // the initial empty entry was evicted
        assert!(s.entries().all(|e| e.len() == 1));
    }

    #[test]
    fn one_frame_bootstrap_latency() {
        let p = TemporalParams::default();
        let b = sb(50.0, 50.0, 90.0, 90.0);
        let mut s = TemporalState::new();
        let mut passed = Vec::new();
        for _ in 0..4 {
            passed.push(!temporal_filter(&[b], &s, DIMS, &p).is_empty());
            push_history(&mut s, vec![b], &p);
        }
        assert_eq!(passed, [false, true, true, true]);
    }

    #[test]
    fn params_validation() {
        assert!(TemporalParams::default().validate().is_ok());
        assert!(TemporalParams { n1: 0, ..Default::default() }.validate().is_err());
        assert!(TemporalParams { k1: 1, n1: 2, ..Default::default() }.validate().is_err());
        assert!(TemporalParams { tau_iou1: 1.0, ..Default::default() }.validate().is_err());
        assert!(TemporalParams { k2: 11, ..Default::default() }.validate().is_err());
    }
}

//! Pixel- and frame-level scoring.
//!
//! Pixel counts are pooled over all evaluated frames of a video before the
//! ratios are taken; category scores are unweighted means over videos.

use thiserror::Error;

use crate::types::{same_dims, BinaryMask, ShapeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no frames were evaluated")]
    NoFrames,
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Pixel counts for one frame plus its frame-level labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameConfusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub predicted_leak: bool,
    pub actual_leak: bool,
}

pub fn frame_confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<FrameConfusion, EvalError> {
    same_dims(pred.dims(), gt.dims())?;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        tp += (p && g) as u64;
        fp += (p && !g) as u64;
        fn_ += (!p && g) as u64;
    }
    Ok(FrameConfusion {
        tp,
        fp,
        fn_,
        predicted_leak: tp + fp > 0,
        actual_leak: tp + fn_ > 0,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VideoMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub frame_tp: u64,
    pub frame_tn: u64,
    pub frame_fp: u64,
    pub frame_fn: u64,
    pub frames_evaluated: u64,
}

impl VideoMetrics {
    pub fn add(&mut self, c: &FrameConfusion) {
        self.tp += c.tp;
        self.fp += c.fp;
        self.fn_ += c.fn_;
        match (c.predicted_leak, c.actual_leak) {
            (true, true) => self.frame_tp += 1,
            (false, false) => self.frame_tn += 1,
            (true, false) => self.frame_fp += 1,
            (false, true) => self.frame_fn += 1,
        }
        self.frames_evaluated += 1;
    }

    pub fn accumulate(&mut self, pred: &BinaryMask, gt: &BinaryMask) -> Result<FrameConfusion, EvalError> {
        let c = frame_confusion(pred, gt)?;
        self.add(&c);
        Ok(c)
    }

    pub fn merge(&mut self, other: &VideoMetrics) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.frame_tp += other.frame_tp;
        self.frame_tn += other.frame_tn;
        self.frame_fp += other.frame_fp;
        self.frame_fn += other.frame_fn;
        self.frames_evaluated += other.frames_evaluated;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub fla: f64,
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Ratios with empty denominators scored as 1 (nothing to get wrong).
pub fn video_scores(m: &VideoMetrics) -> Result<Scores, EvalError> {
    if m.frames_evaluated == 0 {
        return Err(EvalError::NoFrames);
    }
    Ok(Scores {
        iou: ratio_or_one(m.tp, m.tp + m.fp + m.fn_),
        precision: ratio_or_one(m.tp, m.tp + m.fp),
        recall: ratio_or_one(m.tp, m.tp + m.fn_),
        fla: (m.frame_tp + m.frame_tn) as f64 / m.frames_evaluated as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    WithoutInterference,
    WithInterference,
    Overall,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::WithoutInterference => "without_interference",
            Category::WithInterference => "with_interference",
            Category::Overall => "overall",
        }
    }

    pub fn of(has_interference: bool) -> Self {
        if has_interference {
            Category::WithInterference
        } else {
            Category::WithoutInterference
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryReport {
    pub category: Category,
    pub videos: usize,
    pub mean_iou: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_fla: f64,
}

fn mean_report(category: Category, scores: &[Scores]) -> Option<CategoryReport> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    let mean = |f: fn(&Scores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Some(CategoryReport {
        category,
        videos: scores.len(),
        mean_iou: mean(|s| s.iou),
        mean_precision: mean(|s| s.precision),
        mean_recall: mean(|s| s.recall),
        mean_fla: mean(|s| s.fla),
    })
}

/// Category means; categories with no videos are omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetReport {
    pub without: Option<CategoryReport>,
    pub with: Option<CategoryReport>,
    pub overall: Option<CategoryReport>,
}

impl DatasetReport {
    pub fn categories(&self) -> impl Iterator<Item = &CategoryReport> {
        [&self.without, &self.with, &self.overall].into_iter().flatten()
    }

    pub fn get(&self, category: Category) -> Option<&CategoryReport> {
        match category {
            Category::WithoutInterference => self.without.as_ref(),
            Category::WithInterference => self.with.as_ref(),
            Category::Overall => self.overall.as_ref(),
        }
    }
}

/// Per-video scores averaged within each category; overall averages over
/// every video, not over the two category means.
pub fn aggregate(videos: &[(VideoMetrics, bool)]) -> Result<DatasetReport, EvalError> {
    let mut without = Vec::new();
    let mut with = Vec::new();
    let mut all = Vec::new();
    for (m, interference) in videos {
        let s = video_scores(m)?;
        if *interference {
            with.push(s);
        } else {
            without.push(s);
        }
        all.push(s);
    }
    Ok(DatasetReport {
        without: mean_report(Category::WithoutInterference, &without),
        with: mean_report(Category::WithInterference, &with),
        overall: mean_report(Category::Overall, &all),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn metrics(tp: u64, fp: u64, fn_: u64) -> VideoMetrics {
        VideoMetrics {
            tp,
            fp,
            fn_,
            frame_tp: 1,
            frames_evaluated: 1,
            ..Default::default()
        }
    }

    fn with_iou(iou_num: u64, iou_den: u64) -> VideoMetrics {
        metrics(iou_num, iou_den - iou_num, 0)
    }

    #[test]
    fn confusion_cases() {
        let m = BinaryMask::from_fn(4, 4, |x, _| x == 1);
        let c = frame_confusion(&m, &m).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.predicted_leak, c.actual_leak), (4, 0, 0, true, true));

        let e = BinaryMask::empty(4, 4);
        let c = frame_confusion(&e, &e).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.predicted_leak, c.actual_leak), (0, 0, 0, false, false));
        let mut vm = VideoMetrics::default();
        vm.add(&c);
        assert_eq!(vm.frame_tn, 1);

        let pred = BinaryMask::new(4, 1, vec![true, true, true, false]).unwrap();
        let gt = BinaryMask::new(4, 1, vec![true, true, false, true]).unwrap();
        let c = frame_confusion(&pred, &gt).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (2, 1, 1));

        assert!(frame_confusion(&pred, &e).is_err());
    }

    #[test]
    fn scores_hand_case() {
        let s = video_scores(&metrics(2, 1, 1)).unwrap();
        assert_eq!(s.iou, 0.5);
        assert_eq!(s.precision, 2.0 / 3.0);
        assert_eq!(s.recall, 2.0 / 3.0);
    }

    #[test]
    fn scores_empty_video_conventions() {
        let m = VideoMetrics {
            frame_tn: 3,
            frames_evaluated: 3,
            ..Default::default()
        };
        let s = video_scores(&m).unwrap();
        assert_eq!((s.iou, s.precision, s.recall, s.fla), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(video_scores(&VideoMetrics::default()), Err(EvalError::NoFrames));
    }

    #[test]
    fn fla_counts_correct_frames() {
        let m = VideoMetrics {
            frame_tp: 3,
            frame_tn: 1,
            frame_fn: 1,
            frames_evaluated: 5,
            tp: 1,
            ..Default::default()
        };
        assert!((video_scores(&m).unwrap().fla - 0.8).abs() < 1e-12);
    }

    #[test]
    fn aggregate_cases() {
        let r = aggregate(&[(with_iou(4, 10), false), (with_iou(6, 10), false)]).unwrap();
        assert!((r.without.unwrap().mean_iou - 0.5).abs() < 1e-12);
        assert!(r.with.is_none());

        let r = aggregate(&[(with_iou(2, 10), false), (with_iou(8, 10), true)]).unwrap();
        assert!((r.overall.unwrap().mean_iou - 0.5).abs() < 1e-12);
        assert_eq!(r.overall.unwrap().videos, 2);

        // overall is over videos, not over category means
        let r = aggregate(&[(with_iou(2, 10), false), (with_iou(2, 10), false), (with_iou(8, 10), true)]).unwrap();
        assert!((r.overall.unwrap().mean_iou - 0.4).abs() < 1e-12);

        let m = metrics(2, 1, 1);
        let s = video_scores(&m).unwrap();
        let r = aggregate(&[(m, true)]).unwrap();
        let c = r.with.unwrap();
        assert_eq!((c.mean_iou, c.mean_precision, c.mean_recall, c.mean_fla), (s.iou, s.precision, s.recall, s.fla));
    }

    fn arb_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
        (1usize..16, 1usize..16).prop_flat_map(|(w, h)| {
            (
                proptest::collection::vec(any::<bool>(), w * h),
                proptest::collection::vec(any::<bool>(), w * h),
            )
                .prop_map(move |(a, b)| (BinaryMask::new(w, h, a).unwrap(), BinaryMask::new(w, h, b).unwrap()))
        })
    }

    proptest! {
        #[test]
        fn confusion_matches_double_loop((pred, gt) in arb_pair()) {
            let c = frame_confusion(&pred, &gt).unwrap();
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for y in 0..pred.height() {
                for x in 0..pred.width() {
                    match (pred.get(x, y), gt.get(x, y)) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        _ => {}
                    }
                }
            }
            prop_assert_eq!((c.tp, c.fp, c.fn_), (tp, fp, fn_));
            let mut vm = VideoMetrics::default();
            vm.add(&c);
            let s = video_scores(&vm).unwrap();
            prop_assert!(s.iou <= s.precision.min(s.recall));
            prop_assert!([s.iou, s.precision, s.recall, s.fla].iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn aggregate_permutation_invariant(ious in proptest::collection::vec((1u64..10, any::<bool>()), 1..8)) {
            let videos: Vec<_> = ious.iter().map(|&(n, i)| (with_iou(n, 10), i)).collect();
            let mut rev = videos.clone();
            rev.reverse();
            let a = aggregate(&videos).unwrap();
            let b = aggregate(&rev).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() < 1e-12;
            prop_assert!(close(a.overall.unwrap().mean_iou, b.overall.unwrap().mean_iou));
        }
    }
}

mod support;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use gasleak::bgs::{abs_diff, adaptive_alpha, baseline_mask, enhance, BgsState, DiffImage};
use gasleak::config::PipelineConfig;
use gasleak::dataset::{write_clip, Manifest, ManifestEntry};
use gasleak::detect::{nms, Detector, DetectorQuery, FrameContext, OracleDetector, RemoteDetector, ScriptedDetector};
use gasleak::eval::Category;
use gasleak::imgops::or_into;
use gasleak::pipeline::{
    ablation_presets, report_csv, run_clips, run_dataset, run_video, videos_csv, Backends, DatasetRun, PipelineError,
};
use gasleak::remote::{BackendError, RemoteConfig};
use gasleak::segment::{box_rectangle, MockSegmenter, RemoteSegmenter};
use gasleak::sweep::{run_sweep, sweep_csv, SweepSpec};
use gasleak::synth::{generate_clip, standard_suite, SceneSpec};
use gasleak::wire::{rle_encode, SegmentRequest, WireBox};
use gasleak::{BinaryMask, ScoredBox, VideoClip};
use serde_json::json;

fn short_spec(i: usize, frames: usize) -> SceneSpec {
    let mut s = standard_suite().remove(i);
    s.frame_count = frames;
    s
}

fn short_clip(i: usize, frames: usize) -> VideoClip {
    generate_clip(&short_spec(i, frames)).unwrap()
}

fn full_traditional() -> PipelineConfig {
    ablation_presets().remove(3).1
}

/// Records every image it is shown and returns no boxes.
#[derive(Default)]
struct Recorder {
    seen: Mutex<Vec<(usize, Vec<u8>)>>,
}

impl Detector for Recorder {
    fn detect(&self, ctx: &FrameContext<'_>, image: &DiffImage, _: &DetectorQuery) -> Result<Vec<ScoredBox>, BackendError> {
        self.seen.lock().unwrap().push((ctx.frame_index, image.values().to_vec()));
        Ok(Vec::new())
    }
}

#[test]
fn stride_selects_phase_zero_frames() {
    let clip = short_clip(0, 15);
    let run = run_video(&clip, &PipelineConfig::default(), &Backends::offline(), true).unwrap();
    let idx: Vec<usize> = run.frames.iter().map(|f| f.frame_index).collect();
    assert_eq!(idx, [0, 5, 10]);
    assert_eq!(run.metrics.unwrap().frames_evaluated, 3);
}

#[test]
fn detection_does_not_perturb_background() {
    let clip = short_clip(1, 40);
    let mut every = PipelineConfig::default();
    every.eval.stride = 1;
    let mut fifth = PipelineConfig::default();
    fifth.eval.stride = 5;

    let every_seen = record(&clip, &every);
    let fifth_seen = record(&clip, &fifth);
    assert_eq!(every_seen.len(), 40);
    assert_eq!(fifth_seen.len(), 8);
    for (t, img) in &fifth_seen {
        assert_eq!(&every_seen[*t].1, img, "frame {t}");
    }

    // and both match a background model driven directly
    let mut bgs = BgsState::new(every.bgs.params).unwrap();
    for (t, frame) in clip.frames.iter().enumerate() {
        let bg = bgs.update(frame).unwrap();
        let raw = abs_diff(frame, &bg).unwrap();
        let expected = enhance(&raw, adaptive_alpha(&raw));
        assert_eq!(every_seen[t].1, expected.values(), "frame {t}");
    }
}

fn record(clip: &VideoClip, cfg: &PipelineConfig) -> Vec<(usize, Vec<u8>)> {
    let seen = std::sync::Arc::new(Recorder::default());
    struct Shared(std::sync::Arc<Recorder>);
    impl Detector for Shared {
        fn detect(&self, ctx: &FrameContext<'_>, image: &DiffImage, q: &DetectorQuery) -> Result<Vec<ScoredBox>, BackendError> {
            self.0.detect(ctx, image, q)
        }
    }
    let backends = Backends::new(Shared(seen.clone()), MockSegmenter);
    run_video(clip, cfg, &backends, false).unwrap();
    let out = seen.seen.lock().unwrap().clone();
    out
}

#[test]
fn disabled_bgs_shows_detector_the_scaled_frame() {
    let clip = short_clip(2, 12);
    let (_, cfg) = ablation_presets().remove(2);
    let seen = record(&clip, &cfg);
    assert_eq!(seen.len(), 3);
    for (t, img) in seen {
        let expected: Vec<u8> = clip.frames[t]
            .pixels()
            .iter()
            .map(|&p| (p as f32 * 1.5).round().min(255.0) as u8)
            .collect();
        assert_eq!(img, expected);
    }
}

#[test]
fn disabled_temporal_filter_passes_every_box() {
    let clip = short_clip(3, 60);
    let (_, cfg) = ablation_presets().remove(1);
    let run = run_video(&clip, &cfg, &Backends::offline(), true).unwrap();
    let gt = clip.gt.as_ref().unwrap();
    let (w, h) = clip.dims().unwrap();
    let blank = DiffImage::raw(w, h, vec![0; w * h]).unwrap();
    for f in &run.frames {
        let ctx = FrameContext {
            video_id: &clip.id,
            frame_index: f.frame_index,
            gt: Some(&gt[f.frame_index]),
        };
        let raw = OracleDetector.detect(&ctx, &blank, &cfg.detect.query).unwrap();
        assert_eq!(f.boxes, nms(&raw, cfg.detect.nms_iou));
    }
    assert!(run.frames.iter().any(|f| !f.boxes.is_empty()));
}

#[test]
fn mock_segmenter_mask_is_union_of_filtered_boxes() {
    let clip = short_clip(5, 80);
    let cfg = PipelineConfig::default();
    let run = run_video(&clip, &cfg, &Backends::offline(), true).unwrap();
    let (w, h) = clip.dims().unwrap();
    let mut nonempty = 0;
    for f in &run.frames {
        let mut union = BinaryMask::empty(w, h);
        for b in &f.boxes {
            or_into(&mut union, &box_rectangle(b, w, h)).unwrap();
        }
        assert_eq!(f.mask, union);
        nonempty += f.mask.any() as usize;
    }
    assert!(nonempty > 5);
}

#[test]
fn baseline_mode_thresholds_the_difference() {
    let clip = short_clip(0, 30);
    let (_, cfg) = ablation_presets().remove(0);
    let run = run_video(&clip, &cfg, &Backends::offline(), true).unwrap();
    let mut bgs = BgsState::new(cfg.bgs.params).unwrap();
    let mut k = 0;
    for (t, frame) in clip.frames.iter().enumerate() {
        let bg = bgs.update(frame).unwrap();
        if t % 5 == 0 {
            let expected = baseline_mask(&abs_diff(frame, &bg).unwrap(), &cfg.baseline_params());
            assert_eq!(run.frames[k].mask, expected);
            assert!(run.frames[k].boxes.is_empty());
            k += 1;
        }
    }
    assert_eq!(k, run.frames.len());
}

#[test]
fn metrics_need_ground_truth() {
    let mut clip = short_clip(0, 10);
    clip.gt = None;
    let err = run_video(&clip, &full_traditional(), &Backends::offline(), true).unwrap_err();
    assert!(matches!(err, PipelineError::MissingGroundTruth(id) if id == "synth01"));
    // the oracle cannot run without it either
    let err = run_video(&clip, &full_traditional(), &Backends::offline(), false).unwrap_err();
    assert!(matches!(err, PipelineError::Backend { frame: 0, .. }));
}

#[test]
fn backend_failure_names_the_frame() {
    let bad = WireBox {
        x1: 10.0,
        y1: 10.0,
        x2: 5.0,
        y2: 20.0,
        score: 0.9,
        query_index: 0,
        scores: None,
    };
    let script = json!({"synth01": {"10": [bad]}}).to_string();
    let backends = Backends::new(ScriptedDetector::from_json(&script).unwrap(), MockSegmenter);
    let err = run_video(&short_clip(0, 20), &PipelineConfig::default(), &backends, true).unwrap_err();
    match err {
        PipelineError::Backend { video, frame, source } => {
            assert_eq!((video.as_str(), frame), ("synth01", 10));
            assert!(matches!(source, BackendError::Malformed(_)));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn suite_report_shape_and_determinism() {
    let clips: Vec<VideoClip> = (0..10).map(|i| short_clip(i, 40)).collect();
    let cfg = PipelineConfig::default();
    let a = run_clips(&clips, &cfg, &Backends::offline()).unwrap();
    assert_eq!(a.videos.len(), 10);
    assert_eq!(a.report.get(Category::WithoutInterference).unwrap().videos, 5);
    assert_eq!(a.report.get(Category::WithInterference).unwrap().videos, 5);
    assert_eq!(a.report.get(Category::Overall).unwrap().videos, 10);
    let ids: Vec<&str> = a.videos.iter().map(|v| v.id.as_str()).collect();
    assert_eq!(ids, (1..=10).map(|i| format!("synth{i:02}")).collect::<Vec<_>>());

    let mut parallel = cfg.clone();
    parallel.workers = 3;
    let b = run_clips(&clips, &parallel, &Backends::offline()).unwrap();
    let csv = |r: &DatasetRun| (report_csv(&[("x".into(), r.report.clone())]), videos_csv(&[("x".into(), r.videos.clone())]));
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(csv(&a).1.lines().count(), 11);
}

fn one_video_dataset(dir: &std::path::Path, excluded: bool) -> Manifest {
    let clip = short_clip(6, 20);
    write_clip(&clip, &dir.join("v")).unwrap();
    Manifest {
        root: dir.to_path_buf(),
        entries: vec![ManifestEntry {
            id: clip.id.clone(),
            path: "v".into(),
            has_interference: clip.has_interference,
            excluded,
        }],
    }
}

#[test]
fn dataset_with_everything_excluded_fails() {
    let dir = tempfile::tempdir().unwrap();
    let m = one_video_dataset(dir.path(), true);
    let err = run_dataset(&m, &PipelineConfig::default(), &Backends::offline()).unwrap_err();
    assert!(matches!(err, PipelineError::EmptyDataset));
}

#[test]
fn single_video_overall_equals_its_scores() {
    let dir = tempfile::tempdir().unwrap();
    let m = one_video_dataset(dir.path(), false);
    let run = run_dataset(&m, &full_traditional(), &Backends::offline()).unwrap();
    let s = run.videos[0].scores;
    let o = run.report.get(Category::Overall).unwrap();
    assert_eq!((o.mean_iou, o.mean_precision, o.mean_recall, o.mean_fla), (s.iou, s.precision, s.recall, s.fla));
    assert!(run.report.get(Category::WithoutInterference).is_none());
    assert_eq!(run.report.get(Category::WithInterference).unwrap().mean_iou, s.iou);
}

#[test]
fn sweep_rows_follow_axis_order() {
    let clip = short_clip(0, 10);
    let spec = SweepSpec::parse("axis.detect.tau_vlm = 0.09 | 0.12 | 0.19\n", PipelineConfig::default()).unwrap();
    let mut seen = Vec::new();
    let rows = run_sweep(&spec, |cfg| {
        seen.push(cfg.detect.query.tau_vlm);
        run_clips(std::slice::from_ref(&clip), cfg, &Backends::offline())
    })
    .unwrap();
    assert_eq!(seen, [0.09, 0.12, 0.19]);
    assert_eq!(rows.len(), 3);
    let csv = sweep_csv(&spec, &rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("detect.tau_vlm,without_interference_videos,"));
    assert!(lines[1].starts_with("0.09,1,"));

    let spec = SweepSpec::parse(
        "axis.detect.tau_vlm = 0.09 | 0.12 | 0.19\naxis.baseline.close_kernel = 10:40:10\n",
        PipelineConfig::default(),
    )
    .unwrap();
    let calls = AtomicUsize::new(0);
    let rows = run_sweep(&spec, |cfg| {
        calls.fetch_add(1, Ordering::SeqCst);
        run_clips(std::slice::from_ref(&clip), cfg, &Backends::offline())
    })
    .unwrap();
    assert_eq!(rows.len(), 12);
    assert_eq!(calls.load(Ordering::SeqCst), 12);
}

#[test]
fn sweep_prompt_axis_has_one_row_per_prompt() {
    let prompts = [
        "white steam",
        "white smoke",
        "steam",
        "smoke",
        "white gas",
        "gas",
        "white cloud",
    ];
    let text = format!("axis.detect.positive_prompt = {}\n", prompts.join(" | "));
    let spec = SweepSpec::parse(&text, PipelineConfig::default()).unwrap();
    assert_eq!(spec.points().unwrap().len(), 7);
}

/// The remote clients against a service replaying oracle boxes and filling
/// rectangles must reproduce the offline oracle + mock masks exactly.
#[test]
fn remote_backends_match_offline_run() {
    let cfg = PipelineConfig::default();
    for i in [0, 6] {
        let clip = short_clip(i, 60);
        let offline = run_video(&clip, &cfg, &Backends::offline(), true).unwrap();

        // raw oracle boxes per evaluated frame, in request order
        let gt = clip.gt.clone().unwrap();
        let (w, h) = clip.dims().unwrap();
        let blank = DiffImage::raw(w, h, vec![0; w * h]).unwrap();
        let replies: Vec<String> = (0..clip.len())
            .step_by(cfg.eval.stride)
            .map(|t| {
                let ctx = FrameContext {
                    video_id: &clip.id,
                    frame_index: t,
                    gt: Some(&gt[t]),
                };
                let boxes = OracleDetector.detect(&ctx, &blank, &cfg.detect.query).unwrap();
                let wire: Vec<_> = boxes
                    .iter()
                    .map(|b| json!({"x1": b.bbox.x1, "y1": b.bbox.y1, "x2": b.bbox.x2, "y2": b.bbox.y2, "score": b.score, "query_index": 0}))
                    .collect();
                json!({ "boxes": wire }).to_string()
            })
            .collect();
        let next = AtomicUsize::new(0);
        let server = support::MockServer::start(move |req| match req.path.as_str() {
            "/v1/detect" => (200, replies[next.fetch_add(1, Ordering::SeqCst)].clone()),
            "/v1/segment" => {
                let sent: SegmentRequest = serde_json::from_str(&req.body).unwrap();
                let masks: Vec<Vec<u32>> = sent
                    .boxes
                    .iter()
                    .map(|b| rle_encode(&box_rectangle(&ScoredBox::positive(b.x1, b.y1, b.x2, b.y2, 1.0), w, h)))
                    .collect();
                (200, json!({ "masks": masks }).to_string())
            }
            _ => (404, String::new()),
        });
        let remote = RemoteConfig {
            endpoint: server.url.clone(),
            timeout: Duration::from_secs(10),
            retries: 0,
            max_in_flight: 1,
        };
        let backends = Backends::new(RemoteDetector::new(&remote).unwrap(), RemoteSegmenter::new(&remote).unwrap());
        let online = run_video(&clip, &cfg, &backends, true).unwrap();
        assert_eq!(online, offline, "clip {}", clip.id);
    }
}

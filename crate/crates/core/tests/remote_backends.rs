mod support;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use gasleak::bgs::DiffImage;
use gasleak::detect::{Detector, DetectorQuery, FrameContext, RemoteDetector};
use gasleak::remote::{check_health, BackendError, RemoteConfig};
use gasleak::segment::{box_rectangle, segment_promptable, RemoteSegmenter, Segmenter};
use gasleak::wire::{decode_png_base64, rle_encode, DetectRequest, PromptBox, SegmentRequest};
use gasleak::{BinaryMask, ScoredBox};
use serde_json::json;
use support::MockServer;

fn config(url: &str) -> RemoteConfig {
    RemoteConfig {
        endpoint: url.to_string(),
        timeout: Duration::from_secs(5),
        retries: 2,
        max_in_flight: 2,
    }
}

fn gradient(w: usize, h: usize) -> DiffImage {
    DiffImage::raw(w, h, (0..w * h).map(|i| (i * 7 % 256) as u8).collect()).unwrap()
}

fn ctx() -> FrameContext<'static> {
    FrameContext {
        video_id: "v",
        frame_index: 0,
        gt: None,
    }
}

#[test]
fn detect_request_shape_and_acceptance_rule() {
    let server = MockServer::start(|_| {
        let body = json!({"boxes": [
            {"x1": 1.0, "y1": 2.0, "x2": 10.0, "y2": 12.0, "score": 0.5, "query_index": 0},
            // better match for the negative prompt: dropped
            {"x1": 5.0, "y1": 5.0, "x2": 9.0, "y2": 9.0, "score": 0.9, "query_index": 1},
            // positive but under tau
            {"x1": 0.0, "y1": 0.0, "x2": 4.0, "y2": 4.0, "score": 0.05, "query_index": 0},
            // per-query scores override the summary fields
            {"x1": 20.0, "y1": 0.0, "x2": 30.0, "y2": 8.0, "score": 0.9, "query_index": 0, "scores": [0.3, 0.6]},
            {"x1": 20.0, "y1": 10.0, "x2": 45.0, "y2": 20.0, "score": 0.1, "query_index": 1, "scores": [0.7, 0.7]}
        ]});
        (200, body.to_string())
    });
    let det = RemoteDetector::new(&config(&server.url)).unwrap();
    let img = gradient(40, 24);
    let query = DetectorQuery::default();
    let boxes = det.detect(&ctx(), &img, &query).unwrap();

    // the tie at index 4 resolves to the positive query; x2 = 45 clips to 40
    let expected = [
        ScoredBox::positive(1.0, 2.0, 10.0, 12.0, 0.5),
        ScoredBox::positive(20.0, 10.0, 40.0, 20.0, 0.7),
    ];
    assert_eq!(boxes, expected);

    let reqs = server.recorded();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].method, "POST");
    assert_eq!(reqs[0].path, "/v1/detect");
    let sent: DetectRequest = serde_json::from_str(&reqs[0].body).unwrap();
    assert_eq!(sent.queries, vec![query.positive_prompt.clone(), query.negative_prompt.clone()]);
    assert_eq!(sent.threshold, query.tau_vlm);
    let decoded = decode_png_base64(&sent.image).unwrap();
    assert_eq!(decoded.dimensions(), (40, 24));
    assert_eq!(decoded.as_raw().as_slice(), img.values());
}

#[test]
fn threshold_one_service_returns_nothing() {
    // a service applying threshold 1.0 sends an empty list
    let server = MockServer::start(|req| {
        let sent: DetectRequest = serde_json::from_str(&req.body).unwrap();
        assert_eq!(sent.threshold, 0.999);
        (200, r#"{"boxes": []}"#.to_string())
    });
    let det = RemoteDetector::new(&config(&server.url)).unwrap();
    let query = DetectorQuery {
        tau_vlm: 0.999,
        ..DetectorQuery::default()
    };
    assert!(det.detect(&ctx(), &gradient(8, 8), &query).unwrap().is_empty());
}

#[test]
fn server_errors_are_retried_then_surface() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let server = MockServer::start(move |_| {
        if c.fetch_add(1, Ordering::SeqCst) < 2 {
            (503, "loading".into())
        } else {
            (200, r#"{"boxes": []}"#.into())
        }
    });
    let det = RemoteDetector::new(&config(&server.url)).unwrap();
    assert!(det.detect(&ctx(), &gradient(8, 8), &DetectorQuery::default()).unwrap().is_empty());
    assert_eq!(server.count(), 3);

    let always = MockServer::start(|_| (500, "boom".into()));
    let det = RemoteDetector::new(&config(&always.url)).unwrap();
    let err = det.detect(&ctx(), &gradient(8, 8), &DetectorQuery::default()).unwrap_err();
    assert_eq!(
        err,
        BackendError::Status {
            status: 500,
            body: "boom".into()
        }
    );
    // one attempt plus two retries
    assert_eq!(always.count(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(|_| (400, r#"{"error": "bad image"}"#.into()));
    let det = RemoteDetector::new(&config(&server.url)).unwrap();
    let err = det.detect(&ctx(), &gradient(8, 8), &DetectorQuery::default()).unwrap_err();
    assert!(matches!(err, BackendError::Status { status: 400, .. }));
    assert_eq!(server.count(), 1);
}

#[test]
fn malformed_replies() {
    for body in [
        r#"{"nope": 1}"#,
        r#"{"boxes": [{"x1": 5, "y1": 0, "x2": 1, "y2": 4, "score": 0.9, "query_index": 0}]}"#,
        r#"{"boxes": [{"x1": 0, "y1": 0, "x2": 1, "y2": 4, "score": 1.5, "query_index": 0}]}"#,
        r#"{"boxes": [{"x1": 0, "y1": 0, "x2": 1, "y2": 4, "score": 0.5, "query_index": 2}]}"#,
        "not json",
    ] {
        let server = MockServer::start(move |_| (200, body.to_string()));
        let det = RemoteDetector::new(&config(&server.url)).unwrap();
        let err = det.detect(&ctx(), &gradient(8, 8), &DetectorQuery::default()).unwrap_err();
        assert!(matches!(err, BackendError::Malformed(_)), "{body}: {err:?}");
    }
}

#[test]
fn unreachable_service_is_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let mut cfg = config(&url);
    cfg.retries = 0;
    let det = RemoteDetector::new(&cfg).unwrap();
    let err = det.detect(&ctx(), &gradient(4, 4), &DetectorQuery::default()).unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)));
    assert!(matches!(RemoteDetector::new(&config("localhost:8000")), Err(BackendError::Config(_))));
}

/// Answers like the service's mock mode: one filled rectangle per box.
fn rectangle_service() -> MockServer {
    MockServer::start(|req| {
        let sent: SegmentRequest = serde_json::from_str(&req.body).unwrap();
        let img = decode_png_base64(&sent.image).unwrap();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let masks: Vec<Vec<u32>> = sent
            .boxes
            .iter()
            .map(|b: &PromptBox| rle_encode(&box_rectangle(&ScoredBox::positive(b.x1, b.y1, b.x2, b.y2, 1.0), w, h)))
            .collect();
        (200, json!({ "masks": masks }).to_string())
    })
}

#[test]
fn segment_corner_box_rle() {
    let server = MockServer::start(|_| (200, r#"{"masks": [[0, 2, 2, 2, 10]]}"#.into()));
    let seg = RemoteSegmenter::new(&config(&server.url)).unwrap();
    let masks = seg
        .segment(&gradient(4, 4), &[ScoredBox::positive(0.0, 0.0, 2.0, 2.0, 0.9)])
        .unwrap();
    assert_eq!(masks, vec![BinaryMask::from_fn(4, 4, |x, y| x < 2 && y < 2)]);
    let sent: SegmentRequest = serde_json::from_str(&server.recorded()[0].body).unwrap();
    assert_eq!(sent.boxes.len(), 1);
    assert_eq!((sent.boxes[0].x2, sent.boxes[0].y2), (2.0, 2.0));
}

#[test]
fn segment_order_and_union() {
    let server = rectangle_service();
    let seg = RemoteSegmenter::new(&config(&server.url)).unwrap();
    let img = gradient(30, 20);
    let a = ScoredBox::positive(0.0, 0.0, 5.0, 5.0, 0.9);
    let b = ScoredBox::positive(10.0, 3.0, 25.0, 18.0, 0.4);
    let masks = seg.segment(&img, &[b, a]).unwrap();
    assert_eq!(masks, vec![box_rectangle(&b, 30, 20), box_rectangle(&a, 30, 20)]);
    let union = segment_promptable(&seg, &img, &[a, b]).unwrap();
    assert_eq!(union.count(), 25 + 15 * 15);
}

#[test]
fn segment_without_boxes_makes_no_request() {
    let server = rectangle_service();
    let seg = RemoteSegmenter::new(&config(&server.url)).unwrap();
    assert!(seg.segment(&gradient(4, 4), &[]).unwrap().is_empty());
    assert_eq!(server.count(), 0);
}

#[test]
fn segment_mask_count_and_size_checked() {
    let server = MockServer::start(|_| (200, r#"{"masks": [[0, 16], [16]]}"#.into()));
    let seg = RemoteSegmenter::new(&config(&server.url)).unwrap();
    let one = [ScoredBox::positive(0.0, 0.0, 2.0, 2.0, 0.9)];
    assert!(matches!(seg.segment(&gradient(4, 4), &one), Err(BackendError::Malformed(_))));

    let server = MockServer::start(|_| (200, r#"{"masks": [[0, 15]]}"#.into()));
    let seg = RemoteSegmenter::new(&config(&server.url)).unwrap();
    assert!(matches!(seg.segment(&gradient(4, 4), &one), Err(BackendError::Malformed(_))));
}

#[test]
fn health_endpoint() {
    let server = MockServer::start(|req| {
        assert_eq!((req.method.as_str(), req.path.as_str()), ("GET", "/healthz"));
        (200, r#"{"status": "ok", "mode": "mock"}"#.into())
    });
    let h = check_health(&config(&server.url)).unwrap();
    assert_eq!((h.status.as_str(), h.mode.as_str()), ("ok", "mock"));

    let mut cfg = config(&MockServer::start(|_| (503, "starting".into())).url);
    cfg.retries = 0;
    assert!(matches!(check_health(&cfg), Err(BackendError::Status { status: 503, .. })));
}

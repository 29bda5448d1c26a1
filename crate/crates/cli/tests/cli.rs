use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use protoseg_cli::config::{DatasetSource, PipelineConfig, StageSeeds, SynthSpec};
use protoseg_cli::pipeline::DICTIONARY_FILE;
use protoseg_cli::stages::MASKS_DIR;
use protoseg_cli::{run_pipeline, Manifest};
use protoseg_core::fsutil;
use protoseg_core::prototype::Decision;

const STAGES: [&str; 9] = [
    "synth",
    "featurize",
    "subsample",
    "cluster",
    "sample-reps",
    "label",
    "build-dict",
    "segment",
    "evaluate",
];

fn small_config(out: &Path) -> PipelineConfig {
    PipelineConfig {
        output_dir: out.to_path_buf(),
        dataset: DatasetSource::Synthetic(SynthSpec {
            image_count: 6,
            image_size: 256,
            class_count: 2,
            region_seed_count: 3,
            sigma: 20.0,
            colors: None,
        }),
        subsample: 20,
        elbow_range: [2, 8],
        seeds: StageSeeds {
            synth: Some(5),
            subsample: Some(6),
            cluster: Some(7),
            sampling: Some(8),
            query: Some(9),
        },
        ..PipelineConfig::default()
    }
}

fn stage_digests(m: &Manifest, stage: &str) -> BTreeMap<String, String> {
    m.stage(stage)
        .unwrap()
        .outputs
        .iter()
        .map(|o| (o.path.clone(), o.sha256.clone()))
        .collect()
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_pipeline(&small_config(a.path())).unwrap();
    let rb = run_pipeline(&small_config(b.path())).unwrap();
    assert_eq!(ra.manifest.digests(), rb.manifest.digests());
    assert_eq!(ra.manifest.summary, rb.manifest.summary);
    let report = ra.report.unwrap();
    assert_eq!(report.image_count, 6);
    assert!(report.macro_pixel_accuracy > 0.5);
    assert_eq!(ra.manifest.summary.patch_count, 24);
    assert_eq!(ra.manifest.summary.subsample_size, 20);
    // the run directory's manifest is the returned one
    let on_disk: Manifest = fsutil::read_json(&ra.manifest_path).unwrap();
    assert_eq!(on_disk.digests(), ra.manifest.digests());
    assert_eq!(on_disk.stages.iter().map(|s| s.stage.as_str()).collect::<Vec<_>>(), STAGES);
}

/// Changing the seed of one stage leaves every earlier stage's outputs untouched.
#[test]
fn changed_seed_only_moves_downstream_digests() {
    let base_dir = tempfile::tempdir().unwrap();
    let base = run_pipeline(&small_config(base_dir.path())).unwrap().manifest;
    let cases: [(&str, fn(&mut StageSeeds)); 5] = [
        ("synth", |s| s.synth = Some(50)),
        ("subsample", |s| s.subsample = Some(60)),
        ("cluster", |s| s.cluster = Some(70)),
        ("sample-reps", |s| s.sampling = Some(80)),
        ("segment", |s| s.query = Some(90)),
    ];
    for (seeded_stage, change) in cases {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        change(&mut cfg.seeds);
        let other = run_pipeline(&cfg).unwrap().manifest;
        let pos = STAGES.iter().position(|s| *s == seeded_stage).unwrap();
        for upstream in &STAGES[..pos] {
            assert_eq!(stage_digests(&base, upstream), stage_digests(&other, upstream), "{seeded_stage} changed {upstream}");
        }
        if matches!(seeded_stage, "synth" | "subsample" | "cluster") {
            assert_ne!(
                stage_digests(&base, seeded_stage),
                stage_digests(&other, seeded_stage),
                "{seeded_stage} seed had no effect"
            );
        }
    }
}

fn protoseg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_protoseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = protoseg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn k_below_two_is_rejected_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = protoseg(&["pipeline", "--out", s(&run), "--k", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
    assert!(!run.exists());

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"k": 0}"#).unwrap();
    assert_eq!(protoseg(&["pipeline", "--config", s(&cfg), "--out", s(&run)]).status.code(), Some(2));
    std::fs::write(&cfg, r#"{"clusters": 4}"#).unwrap();
    assert_eq!(protoseg(&["pipeline", "--config", s(&cfg), "--out", s(&run)]).status.code(), Some(2));
    assert!(!run.exists());
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.esf");
    let out = protoseg(&["cluster", "--input", s(&missing), "--k", "3", "--out", s(&dir.path().join("c.json"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cluster stage"));

    ok(&["synth", "--images", "2", "--size", "64", "--classes", "2", "--out", s(dir.path())]);
    let pred = dir.path().join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    let gt = dir.path().join("gt");
    let eval_out = dir.path().join("r.json");
    // an empty prediction directory does not pair with the ground truth
    assert_eq!(protoseg(&["evaluate", "--pred", s(&pred), "--gt", s(&gt), "--out", s(&eval_out)]).status.code(), Some(2));
    // scoring ground truth against itself is perfect
    ok(&["evaluate", "--pred", s(&gt), "--gt", s(&gt), "--out", s(&eval_out)]);
    let report: Value = fsutil::read_json(&eval_out).unwrap();
    assert_eq!(report["macro_pixel_accuracy"], json!(1.0));

    // featurize, then query with a dictionary of the wrong dimension
    ok(&["featurize", "--images", s(&dir.path().join("images")), "--out", s(dir.path()), "--patch-size", "32"]);
    let dict = json!({"version": 1, "dim": 2, "label_map": [{"id": 0, "name": "a"}],
        "entries": [{"prototype_id": 0, "class_id": 0, "source_cluster": 0, "cluster_size": 1, "centroid": [1.0, 0.0]}]});
    let dict_path = dir.path().join("d.json");
    fsutil::write_json(&dict_path, &dict).unwrap();
    let grid = dir.path().join("grids").join("img_000.egf");
    let out = protoseg(&["segment", "--grid", s(&grid), "--dict", s(&dict_path), "--out", s(&dir.path().join("m.pgm"))]);
    assert_eq!(out.status.code(), Some(4));

    assert_eq!(protoseg(&["cluster", "--bogus"]).status.code(), Some(2));
}

/// The stage subcommands, chained by hand with the pipeline's seeds, produce
/// the pipeline's dictionary and masks byte for byte.
#[test]
fn subcommand_chain_reproduces_pipeline() {
    let run_dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(run_dir.path());
    cfg.k = Some(4);
    run_pipeline(&cfg).unwrap();

    let d = tempfile::tempdir().unwrap();
    let p = |name: &str| d.path().join(name);
    ok(&["synth", "--images", "6", "--size", "256", "--classes", "2", "--regions", "3", "--sigma", "20", "--seed", "5", "--out", s(d.path())]);
    ok(&["featurize", "--images", s(&p("images")), "--masks", s(&p("gt")), "--out", s(d.path())]);
    ok(&["subsample", "--input", s(&p("patches.esf")), "--m", "20", "--seed", "6", "--out", s(&p("subsample.esf"))]);
    ok(&["cluster", "--input", s(&p("subsample.esf")), "--k", "4", "--seed", "7", "--out", s(&p("clustering.json"))]);
    let first = std::fs::read(p("clustering.json")).unwrap();
    ok(&["cluster", "--input", s(&p("subsample.esf")), "--k", "4", "--seed", "7", "--out", s(&p("clustering.json"))]);
    assert_eq!(first, std::fs::read(p("clustering.json")).unwrap());
    ok(&["sample-reps", "--patches", s(&p("subsample.esf")), "--clustering", s(&p("clustering.json")), "--seed", "8", "--out", s(&p("representatives.json"))]);
    ok(&[
        "oracle-label", "--patches", s(&p("subsample.esf")), "--clustering", s(&p("clustering.json")),
        "--reps", s(&p("representatives.json")), "--label-map", s(&p("label_map.json")), "--out", s(&p("verdicts.json")),
    ]);
    ok(&[
        "build-dict", "--clustering", s(&p("clustering.json")), "--verdicts", s(&p("verdicts.json")),
        "--label-map", s(&p("label_map.json")), "--out", s(&p("dictionary.json")),
    ]);
    ok(&["segment", "--grid", s(&p("grids")), "--dict", s(&p("dictionary.json")), "--mode", "cq", "--seed", "9", "--out", s(&p("masks"))]);
    ok(&["evaluate", "--pred", s(&p("masks")), "--gt", s(&p("gt")), "--out", s(&p("report.json"))]);

    for f in ["patches.esf", "patches.jsonl", "subsample.esf", "clustering.json", "representatives.json", "verdicts.json", "dictionary.json", "report.json"] {
        assert_eq!(std::fs::read(p(f)).unwrap(), std::fs::read(run_dir.path().join(f)).unwrap(), "{f}");
    }
    for i in 0..6 {
        let m = format!("{MASKS_DIR}/img_{i:03}.pgm");
        assert_eq!(std::fs::read(p(&m)).unwrap(), std::fs::read(run_dir.path().join(&m)).unwrap(), "{m}");
    }
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

/// Submitting the oracle's verdicts through the labeling service yields the
/// pipeline's dictionary byte for byte.
#[tokio::test]
async fn service_session_matches_oracle_dictionary() {
    let run_dir = tempfile::tempdir().unwrap();
    let outcome = run_pipeline(&small_config(run_dir.path())).unwrap();
    let root = run_dir.path();
    let app = protoseg_service::router(protoseg_service::AppState::load(&root.join("sessions")).unwrap(), None);
    let label_map: Value = fsutil::read_json(&root.join("label_map.json")).unwrap();
    let spec = json!({
        "clustering_path": root.join("clustering.json"),
        "patches_path": root.join("subsample.esf"),
        "label_map": label_map,
    });
    let (status, body) = call(&app, "POST", "/sessions", Some(spec)).await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&body));
    let id = serde_json::from_slice::<Value>(&body).unwrap()["session_id"].as_str().unwrap().to_string();

    for v in &outcome.verdicts {
        let body = match v.decision {
            Decision::Tissue { class_id } => json!({"decision": "tissue", "class_id": class_id}),
            Decision::Dropped => json!({"decision": "drop"}),
        };
        let (status, _) = call(&app, "POST", &format!("/sessions/{id}/clusters/{}/verdict", v.cluster_index), Some(body)).await;
        assert_eq!(status, StatusCode::OK);
        // the service shows the rater the same representatives the oracle saw
        let (_, card) = call(&app, "GET", &format!("/sessions/{id}/clusters/{}", v.cluster_index), None).await;
        let card: Value = serde_json::from_slice(&card).unwrap();
        assert_eq!(card["representatives"], json!(v.inspected_patch_ids));
    }
    let (status, dict) = call(&app, "POST", &format!("/sessions/{id}/finalize"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(dict, std::fs::read(root.join(DICTIONARY_FILE)).unwrap());
}

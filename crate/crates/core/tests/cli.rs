mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use trustsr::cli::run_from;
use trustsr::harness::{build_ladder, synthetic_texture, DegradationKind};
use trustsr::image::{load_image, save_png, BitDepth, Image};
use trustsr::sample_set::{Candidate, SampleSet};
use trustsr::vlm::{
    rank_by_pool, two_stage_pipeline, PipelineConfig, PromptPool, Recorder, VlmProvider,
};

use common::{mnist_set, scripted_vlm, write_set};

fn bin(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_trustsr"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn run(args: &[&str]) -> Result<(), trustsr::cli::CliError> {
    run_from(std::iter::once("trustsr").chain(args.iter().copied()))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Scripted two-stage run recorded to `log`; returns the manifest path.
fn recorded_scene(dir: &Path, n: usize, k: usize) -> (PathBuf, PathBuf) {
    let set = mnist_set(n, 11);
    let manifest = write_set(&set, &dir.join("scene"));
    // Record against the set as the CLI will load it (8-bit round trip).
    let loaded = SampleSet::load(&manifest).unwrap();
    let log = dir.join("replay.jsonl");
    let rec = Recorder::append(scripted_vlm("vlm-a", 0, false), &log).unwrap();
    let cfg = PipelineConfig {
        k,
        ..Default::default()
    };
    two_stage_pipeline(
        &loaded,
        &PromptPool::information(),
        &PromptPool::artifact(),
        &rec,
        &rec,
        &cfg,
    )
    .unwrap();
    (manifest, log)
}

#[test]
fn select_from_replay_is_byte_identical_and_matches_the_live_run() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, log) = recorded_scene(dir.path(), 24, 5);
    let mut outputs = Vec::new();
    for run_idx in 0..3 {
        let out = dir.path().join(format!("out{run_idx}"));
        run(&[
            "select",
            "--manifest",
            p(&manifest),
            "--replay",
            p(&log),
            "--out",
            p(&out),
        ])
        .unwrap();
        outputs.push((
            std::fs::read(out.join("selection.json")).unwrap(),
            std::fs::read(out.join("ensemble.png")).unwrap(),
        ));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));

    let loaded = SampleSet::load(&manifest).unwrap();
    let live = scripted_vlm("vlm-a", 0, false);
    let expected = two_stage_pipeline(
        &loaded,
        &PromptPool::information(),
        &PromptPool::artifact(),
        &live,
        &live,
        &PipelineConfig::default(),
    )
    .unwrap();
    let report = read_json(&dir.path().join("out0/selection.json"));
    let top_k: Vec<String> = serde_json::from_value(report["selection"]["top_k"].clone()).unwrap();
    assert_eq!(top_k, expected.selection.top_k);
    assert_eq!(report["pipeline"]["target_label"], "5");
    assert_eq!(report["providers"]["stage1"], "vlm-a");
}

#[test]
fn k_of_one_writes_the_top_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, log) = recorded_scene(dir.path(), 12, 1);
    let out = dir.path().join("out");
    run(&[
        "select",
        "--manifest",
        p(&manifest),
        "--replay",
        p(&log),
        "--k",
        "1",
        "--out",
        p(&out),
    ])
    .unwrap();
    let report = read_json(&out.join("selection.json"));
    let top = report["selection"]["top_1"].as_str().unwrap().to_string();
    let set = SampleSet::load(&manifest).unwrap();
    let ensemble = load_image(out.join("ensemble.png")).unwrap();
    assert_eq!(&ensemble, &set.get(&top).unwrap().image);
}

#[test]
fn exit_codes_and_stderr_json() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, log) = recorded_scene(dir.path(), 12, 5);
    let out = dir.path().join("out");

    let (code, _, err) = bin(&["select", "--manifest", p(&manifest), "--out", p(&out)]);
    assert_eq!(code, 2);
    let v: Value = serde_json::from_str(err.lines().last().unwrap()).unwrap();
    assert_eq!(v["exit_code"], 2);

    let (code, _, _) = bin(&[
        "select",
        "--manifest",
        p(&manifest),
        "--replay",
        "/nonexistent/log",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 2);

    // Filtering at 100 leaves nobody: scripted confidences top out at 99.
    let (code, _, err) = bin(&[
        "select",
        "--manifest",
        p(&manifest),
        "--replay",
        p(&log),
        "--threshold",
        "100",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 5, "{err}");

    // A log recorded for a different scene cannot answer.
    let other = write_set(&mnist_set(6, 99), &dir.path().join("other"));
    let (code, _, err) = bin(&[
        "select",
        "--manifest",
        p(&other),
        "--replay",
        p(&log),
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 4, "{err}");
    assert_eq!(
        serde_json::from_str::<Value>(err.lines().last().unwrap()).unwrap()["error"],
        "provider"
    );

    let (code, _, _) = bin(&[
        "score",
        "--manifest",
        "/nonexistent/manifest.json",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 3);

    let (code, _, _) = bin(&["frobnicate"]);
    assert_eq!(code, 2);

    let (code, _, _) = bin(&[
        "select",
        "--manifest",
        p(&manifest),
        "--replay",
        p(&log),
        "--out",
        p(manifest.parent().unwrap()),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn empty_survivor_set_exits_five() {
    let dir = tempfile::tempdir().unwrap();
    let set = mnist_set(5, 3);
    let manifest = write_set(&set, &dir.path().join("scene"));
    let loaded = SampleSet::load(&manifest).unwrap();
    let log = dir.path().join("low.jsonl");
    let low = trustsr::vlm::ScriptedProvider::new("doubtful", |req| match req.kind {
        trustsr::vlm::RequestKind::Identify { .. } => "7".into(),
        _ => "10".into(),
    });
    let rec = Recorder::append(low, &log).unwrap();
    let err = two_stage_pipeline(
        &loaded,
        &PromptPool::information(),
        &PromptPool::artifact(),
        &rec,
        &rec,
        &PipelineConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(
        err,
        trustsr::vlm::VlmError::EmptyAfterFilter { .. }
    ));
    let (code, _, stderr) = bin(&[
        "select",
        "--manifest",
        p(&manifest),
        "--replay",
        p(&log),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(code, 5, "{stderr}");
}

#[test]
fn score_without_reference_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut set = mnist_set(3, 1);
    set.reference = None;
    let manifest = write_set(&set, &dir.path().join("s"));
    let (code, _, _) = bin(&[
        "score",
        "--manifest",
        p(&manifest),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(code, 3);
}

#[test]
fn explicit_default_weights_change_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let ladder = build_ladder(
        &synthetic_texture(64, 64, 2),
        DegradationKind::AdditiveGaussianNoise,
        &[0.02, 0.1, 0.2],
        4,
    )
    .unwrap();
    let manifest = ladder
        .save(dir.path().join("ladder"), BitDepth::Sixteen)
        .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&["score", "--manifest", p(&manifest), "--out", p(&a)]).unwrap();
    run(&[
        "score",
        "--manifest",
        p(&manifest),
        "--weights",
        "0.2,0.3,0.5",
        "--out",
        p(&b),
    ])
    .unwrap();
    for f in ["scores.json", "scores.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let report = read_json(&a.join("scores.json"));
    assert_eq!(report["truth"]["kendall_tau"], 1.0);
    assert_eq!(report["ranking"][0], "noise-0p02");
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let ladder = build_ladder(
        &synthetic_texture(64, 64, 5),
        DegradationKind::IntensityQuantize,
        &[4.0, 8.0],
        0,
    )
    .unwrap();
    let manifest = ladder
        .save(dir.path().join("ladder"), BitDepth::Sixteen)
        .unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = dir.path().join("o");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "manifest": manifest,
            "out": out,
            "weights": {"lambda_clip": 0.5, "lambda_edge": 0.5, "lambda_wavelet": 0.0},
            "formats": ["json"],
        })
        .to_string(),
    )
    .unwrap();
    run(&["--config", p(&cfg), "score", "--mock-dim", "16"]).unwrap();
    let report = read_json(&out.join("scores.json"));
    assert_eq!(
        report["config"]["scoring"]["weights"]["lambda_wavelet"],
        0.0
    );
    assert_eq!(report["config"]["scoring"]["mock_dim"], 16);
    assert!(!out.join("scores.csv").exists());
    run(&["--config", p(&cfg), "score", "--weights", "0.2,0.3,0.5"]).unwrap();
    let report = read_json(&out.join("scores.json"));
    assert_eq!(
        report["config"]["scoring"]["weights"]["lambda_wavelet"],
        0.5
    );
}

#[test]
fn robustness_without_human_data_reports_nulls() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("rob.jsonl");
    let mut manifests = Vec::new();
    let providers: Vec<Box<dyn VlmProvider>> = vec![
        Box::new(Recorder::append(scripted_vlm("steady", 0, false), &log).unwrap()),
        Box::new(Recorder::append(scripted_vlm("fickle", 0, true), &log).unwrap()),
    ];
    for s in 0..3 {
        let set = mnist_set(8, 20 + s);
        let m = write_set(&set, &dir.path().join(format!("scene{s}")));
        let loaded = SampleSet::load(&m).unwrap();
        for prov in &providers {
            for pool in [PromptPool::information(), PromptPool::artifact()] {
                rank_by_pool(&loaded, &pool, prov.as_ref(), 10).unwrap();
            }
        }
        manifests.push(m);
    }
    let out = dir.path().join("out");
    let mut args = vec!["robustness", "--replay", p(&log), "--out", p(&out)];
    for m in &manifests {
        args.extend(["--manifest", p(m)]);
    }
    let (code, _, stderr) = bin(&args);
    assert_eq!(code, 0, "{stderr}");
    let report = read_json(&out.join("robustness.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["provider_id"], "steady");
    assert_eq!(rows[0]["consistency_info"], 100.0);
    assert_eq!(rows[0]["consistency_artifact"], 100.0);
    assert!(rows[1]["consistency_info"].as_f64().unwrap() < 100.0);
    for r in rows {
        assert!(r["agreement_info"].is_null() && r["agreement_artifact"].is_null());
    }
    assert!(!report["warnings"].as_array().unwrap().is_empty());
    let csv = std::fs::read_to_string(out.join("robustness.csv")).unwrap();
    assert!(csv.starts_with(
        "provider,consistency_info,consistency_artifact,agreement_info,agreement_artifact"
    ));

    // With human picks that match the steady provider's choices.
    let steady_top: Vec<String> = (0..3)
        .map(|s| {
            let set = SampleSet::load(&manifests[s]).unwrap();
            let mut ids = set.ids();
            ids.sort_by_key(|id| (common::quality_key(id, 0), id.clone()));
            ids[0].clone()
        })
        .collect();
    let mut csv = String::from("scene_id,participant_id,rank,candidate_id\n");
    for (s, top) in steady_top.iter().enumerate() {
        csv.push_str(&format!("scene-{},u1,1,{top}\n", 20 + s));
    }
    let human = dir.path().join("human.csv");
    std::fs::write(&human, csv).unwrap();
    let out2 = dir.path().join("out2");
    let mut args = vec![
        "robustness",
        "--replay",
        p(&log),
        "--human-artifact",
        p(&human),
        "--out",
        p(&out2),
    ];
    for m in &manifests {
        args.extend(["--manifest", p(m)]);
    }
    run(&args).unwrap();
    let report = read_json(&out2.join("robustness.json"));
    assert_eq!(report["rows"][0]["agreement_artifact"], 100.0);
    assert!(report["rows"][0]["agreement_info"].is_null());
}

#[test]
fn ablation_grids() {
    let dir = tempfile::tempdir().unwrap();
    let ladder = build_ladder(
        &synthetic_texture(64, 64, 8),
        DegradationKind::AdditiveGaussianNoise,
        &[0.02, 0.08, 0.2],
        1,
    )
    .unwrap();
    let manifest = ladder
        .save(dir.path().join("ladder"), BitDepth::Sixteen)
        .unwrap();
    let out = dir.path().join("o");
    run(&["ablation", "--manifest", p(&manifest), "--out", p(&out)]).unwrap();
    let rows = read_json(&out.join("ablation.json"))["rows"]
        .as_array()
        .unwrap()
        .clone();
    let names: Vec<&str> = rows.iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        [
            "TWS (ours)",
            "Equal Weights",
            "No CLIP",
            "No Edge",
            "No Wavelet"
        ]
    );

    let grid = dir.path().join("grid.json");
    std::fs::write(
        &grid,
        r#"[{"name": "off", "weights": {"lambda_clip": 0, "lambda_edge": 0, "lambda_wavelet": 0}}]"#,
    )
    .unwrap();
    run(&[
        "ablation",
        "--manifest",
        p(&manifest),
        "--grid",
        p(&grid),
        "--out",
        p(&out),
    ])
    .unwrap();
    let rows = read_json(&out.join("ablation.json"))["rows"]
        .as_array()
        .unwrap()
        .clone();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["mean_tws"], 0.0);
}

#[test]
fn degrade_then_score_recovers_a_quantize_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let ladder_dir = dir.path().join("ladder");
    let (code, stdout, stderr) = bin(&[
        "degrade",
        "--kind",
        "quantize",
        "--size",
        "64",
        "--seed",
        "3",
        "--out",
        p(&ladder_dir),
    ]);
    assert_eq!(code, 0, "{stderr}");
    let manifest = PathBuf::from(stdout.trim());
    let set = SampleSet::load(&manifest).unwrap();
    assert_eq!(set.len(), 5);
    assert_eq!(set.truth_order.as_ref().unwrap()[0], "quantize-16");
    let out = dir.path().join("o");
    run(&[
        "score",
        "--manifest",
        p(&manifest),
        "--out",
        p(&out),
        "--jobs",
        "2",
    ])
    .unwrap();
    assert_eq!(
        read_json(&out.join("scores.json"))["truth"]["top1_match"],
        true
    );
}

#[test]
fn ensemble_and_stats_commands() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    save_png(&Image::constant(8, 8, 0.2), &a, BitDepth::Sixteen).unwrap();
    save_png(&Image::constant(8, 8, 0.6), &b, BitDepth::Sixteen).unwrap();
    let out = dir.path().join("mean.png");
    run(&["ensemble", p(&a), p(&b), "--out", p(&out)]).unwrap();
    let mean = load_image(&out).unwrap();
    assert!(mean.data().iter().all(|v| (v - 0.4).abs() < 1e-4));
    assert_eq!(
        run(&["ensemble", p(&a), "--out", p(&a)]).unwrap_err().code,
        2
    );

    let (code, stdout, _) = bin(&["stats", "ttest", "--a", "1,2,3,4,5", "--b", "2,3,4,5,6"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert!((v["result"]["t_statistic"].as_f64().unwrap() + 1.0).abs() < 1e-12);
    assert!((v["result"]["p_value"].as_f64().unwrap() - 0.34659350708733416).abs() < 1e-10);

    let (code, stdout, _) = bin(&["stats", "ttest", "--a", "2,4,6,8", "--mu0", "0"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert!((v["result"]["p_value"].as_f64().unwrap() - 0.030466291662170977).abs() < 1e-10);

    let (code, stdout, _) = bin(&["stats", "pearson", "--x", "1,2,3", "--y", "-2,-4,-6"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert!((v["pearson"].as_f64().unwrap() + 1.0).abs() < 1e-12);

    let scores = dir.path().join("s.csv");
    let mos = dir.path().join("m.csv");
    std::fs::write(
        &scores,
        "image_id,score\nx_1,0.1\nx_2,0.5\ny_1,0.9\ny_2,0.3\n",
    )
    .unwrap();
    std::fs::write(&mos, "image_id,mos\nx_1,1.5\nx_2,3.0\ny_1,4.5\ny_2,2.5\n").unwrap();
    let (code, stdout, stderr) = bin(&["stats", "mos", "--scores", p(&scores), "--mos", p(&mos)]);
    assert_eq!(code, 0, "{stderr}");
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["report"]["n"], 4);
    assert_eq!(v["report"]["groups"].as_array().unwrap().len(), 2);
}

#[test]
fn record_flag_writes_a_replayable_log_through_a_live_endpoint() {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    // A chat endpoint that always ranks the first image of the first batch best.
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut s) = stream else { break };
            let mut reader = BufReader::new(s.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let reply =
                r#"{"choices":[{"message":{"role":"assistant","content":"RANKING: 1-1, 1-2"}}]}"#;
            let _ = write!(s, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}", reply.len());
        }
    });

    let dir = tempfile::tempdir().unwrap();
    let manifest = write_set(&mnist_set(3, 4), &dir.path().join("scene"));
    let cfg = dir.path().join("provider.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "provider_id": "local",
            "endpoint": format!("http://{addr}/v1/chat/completions"),
            "model": "test-model",
            "auth_env": "TRUSTSR_TEST_UNSET_KEY",
        })
        .to_string(),
    )
    .unwrap();
    let prompts = dir.path().join("artifact.txt");
    std::fs::write(
        &prompts,
        "Which image is cleanest?\nWhich image has the fewest artifacts?\n",
    )
    .unwrap();
    let log = dir.path().join("live.jsonl");
    let live_out = dir.path().join("live");
    run(&[
        "select",
        "--manifest",
        p(&manifest),
        "--provider",
        p(&cfg),
        "--record",
        p(&log),
        "--mode",
        "artifact",
        "--artifact-prompts",
        p(&prompts),
        "--out",
        p(&live_out),
    ])
    .unwrap();
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 2);
    let replay_out = dir.path().join("replayed");
    run(&[
        "select",
        "--manifest",
        p(&manifest),
        "--replay",
        p(&log),
        "--mode",
        "artifact",
        "--artifact-prompts",
        p(&prompts),
        "--out",
        p(&replay_out),
    ])
    .unwrap();
    let live = read_json(&live_out.join("selection.json"));
    let replayed = read_json(&replay_out.join("selection.json"));
    assert_eq!(live["selection"], replayed["selection"]);
    assert_eq!(live["selection"]["top_1"], "s000");
}

#[test]
fn output_directory_must_differ_from_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let set = SampleSet::new(
        "s",
        vec![Candidate::new("a", synthetic_texture(64, 64, 0))],
        Some(synthetic_texture(64, 64, 0)),
    )
    .unwrap();
    let manifest = set.save(dir.path(), BitDepth::Eight).unwrap();
    let err = run(&["score", "--manifest", p(&manifest), "--out", p(dir.path())]).unwrap_err();
    assert_eq!(err.code, 2);
}

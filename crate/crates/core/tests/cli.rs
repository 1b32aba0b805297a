use std::path::Path;
use std::process::{Command, Output};

use cape::io::{EmbeddingFile, PositionFile};

fn cape(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cape"))
        .current_dir(dir)
        .env_remove("CAPE_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const IMAGE_CFG: &str = r#"{"max_global_shift":0.5,"max_local_shift":0.07142857142857142,"max_scale":1.4,"mean_normalize":false,"augment":true,"seed":42}"#;

#[test]
fn embed_text_zero_phase_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = cape(dir.path(), &["embed", "--modality", "text", "--length", "4", "--dim", "8", "--out", "e.csv"]);
    assert!(o.status.success());
    let f = EmbeddingFile::load(&dir.path().join("e.csv")).unwrap();
    assert_eq!((f.embedding.n_tokens(), f.embedding.dim()), (4, 8));
    assert_eq!(f.embedding.row(0), &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn embed_image_patch_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = cape(dir.path(), &["embed", "--modality", "image", "--grid", "14", "--dim", "768"]);
    assert!(o.status.success());
    let f = EmbeddingFile::from_text(&stdout(&o)).unwrap();
    assert_eq!(f.embedding.n_tokens(), 196);
}

#[test]
fn embed_audio_second_frame() {
    let dir = tempfile::tempdir().unwrap();
    let o = cape(dir.path(), &["embed", "--modality", "audio", "--frames", "2", "--hop", "0.01", "--dim", "4"]);
    let f = EmbeddingFile::from_text(&stdout(&o)).unwrap();
    // omega = 30 * 10000^(-2k/K) with K = 4
    let (a, b) = (30.0 * 0.01f64, 30.0 * 10000f64.powf(-0.5) * 0.01);
    let want = [a.cos(), b.cos(), a.sin(), b.sin()];
    for (got, want) in f.embedding.row(1).iter().zip(want) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["embed", "--modality", "text", "--grid", "3", "--dim", "8"][..],
        &["embed", "--modality", "text", "--length", "3", "--dim", "7"],
        &["embed", "--modality", "audio", "--frames", "3", "--dim", "8"],
        &["bench", "--lengths", "10,x"],
        &["frobnicate"],
    ] {
        assert_eq!(cape(dir.path(), args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn augment_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let base = ["augment", "--config", "c.json", "--modality", "text", "--length", "4", "--dim", "8", "--out-positions", "p", "--out-embedding", "e"];
    std::fs::write(p.join("c.json"), IMAGE_CFG.replace("\"seed\"", "\"extra\":1,\"seed\"")).unwrap();
    assert_eq!(cape(p, &base).status.code(), Some(2));
    std::fs::write(p.join("c.json"), "{not json").unwrap();
    assert_eq!(cape(p, &base).status.code(), Some(2));
}

#[test]
fn augment_without_augmentation_only_normalizes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = r#"{"max_global_shift":5,"max_local_shift":0.5,"max_scale":2,"mean_normalize":true,"augment":false,"seed":1}"#;
    std::fs::write(p.join("c.json"), cfg).unwrap();
    let o = cape(p, &["augment", "--config", "c.json", "--modality", "text", "--length", "5", "--dim", "8", "--out-positions", "p.txt", "--out-embedding", "e.csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    match PositionFile::load(&p.join("p.txt")).unwrap() {
        PositionFile::OneD(s) => assert_eq!(s.as_slice(), &[-2.0, -1.0, 0.0, 1.0, 2.0]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn augment_image_matches_reference_port() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.json"), IMAGE_CFG).unwrap();
    let o = cape(p, &["augment", "--config", "c.json", "--modality", "image", "--grid", "14", "--dim", "16", "--out-positions", "p.txt", "--out-embedding", "e.csv"]);
    assert!(o.status.success());
    let PositionFile::TwoD(g) = PositionFile::load(&p.join("p.txt")).unwrap() else { panic!() };
    let (x, y) = cape::reference::cape_2d_grid(14, 1, true, 0.5, 1.0 / 14.0, 1.4, &mut cape::RngStream::new(42));
    let flat = |v: Vec<Vec<Vec<f64>>>| v.into_iter().flatten().flatten().collect::<Vec<_>>();
    for (a, b) in g.x().iter().zip(flat(x)).chain(g.y().iter().zip(flat(y))) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.json"), IMAGE_CFG).unwrap();
    let run = |extra: &[&str], env: Option<&str>| {
        let mut args = vec!["augment", "--config", "c.json", "--modality", "image", "--grid", "3", "--dim", "4", "--out-positions", "p.txt", "--out-embedding", "e.csv"];
        args.extend_from_slice(extra);
        let mut c = Command::new(env!("CARGO_BIN_EXE_cape"));
        c.current_dir(p).env_remove("CAPE_SEED").args(&args);
        if let Some(v) = env {
            c.env("CAPE_SEED", v);
        }
        assert!(c.status().unwrap().success());
        std::fs::read_to_string(p.join("p.txt")).unwrap()
    };
    let config_seed = run(&[], None);
    let env_seed = run(&[], Some("7"));
    let flag_seed = run(&["--seed", "7"], Some("99"));
    assert_ne!(config_seed, env_seed);
    assert_eq!(env_seed, flag_seed);
    assert_eq!(run(&["--seed", "42"], Some("7")), config_seed);
}

#[test]
fn viz_stride_twenty_writes_39_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = cape(dir.path(), &["viz", "--grid", "4", "--dim", "768", "--stride", "20", "--out-dir", "v"]);
    assert!(o.status.success());
    let n = std::fs::read_dir(dir.path().join("v")).unwrap().count();
    assert_eq!(n, 39);
    assert!(dir.path().join("v/component_0760.pgm").exists());
}

#[test]
fn check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = cape(dir.path(), &["check"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let bad = cape(dir.path(), &["check", "--self-test-negative"]);
    assert_eq!(bad.status.code(), Some(1));
    let only = cape(dir.path(), &["check", "--filter", "shift"]);
    let names: Vec<String> = stdout(&only)
        .lines()
        .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"))
        .map(|l| l.split_whitespace().nth(1).unwrap().to_string())
        .collect();
    assert_eq!(names, ["shift.identity_text", "shift.identity_audio", "shift.identity_image"]);
}

#[test]
fn bench_single_sample() {
    let dir = tempfile::tempdir().unwrap();
    let o = cape(dir.path(), &["bench", "--lengths", "10,100", "--repeats", "1", "--warmup", "0"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], cape::bench::CSV_HEADER);
    assert_eq!(lines.len(), 5);
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!((f[4].parse::<f64>().unwrap(), f[5], f[6], f[7]), (0.0, "1", "0", "1"));
    }
}

#[test]
fn plan_json_shape() {
    let dir = tempfile::tempdir().unwrap();
    let o = cape(dir.path(), &["plan", "--durations", "8,10,12", "--seed", "3"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["target_frames"], 1000);
    for key in ["durations", "base_hop", "hops", "keep_masks"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

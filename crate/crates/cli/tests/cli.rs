use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use gaitstyle::model::load_checkpoint;
use gaitstyle::motion::{load_clip, phase_channel_name, synth_gait, write_bvh, EndEffector, StyleRecipe, CONTACT_CHANNEL};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gaitstyle"));
    c.env("RUST_LOG", "warn");
    for (k, _) in std::env::vars() {
        if k.starts_with("SM_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn events(o: &Output, kind: &str) -> Vec<serde_json::Value> {
    stdout(o)
        .lines()
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .filter(|v| v["event"] == kind)
        .collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_bvh_clip(dir: &Path, style: &str, frames: usize) -> PathBuf {
    let clip = synth_gait(&StyleRecipe::preset(style).unwrap(), frames).unwrap().clip;
    let path = dir.join(format!("{style}.bvh"));
    std::fs::write(&path, write_bvh(&clip)).unwrap();
    path
}

/// Manifest of short synthetic styles, plus the directory holding it.
fn corpus(styles: &[&str], frames: usize) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    for s in styles {
        let bvh = write_bvh_clip(dir.path(), s, frames);
        lines.push_str(&format!(
            "{{\"clip\": \"{}\", \"style\": \"{s}\", \"gait\": \"FW\"}}\n",
            bvh.file_name().unwrap().to_str().unwrap()
        ));
    }
    let manifest = dir.path().join("data.txt");
    std::fs::write(&manifest, lines).unwrap();
    (dir, manifest)
}

#[test]
fn count_params_prints_the_film_budget() {
    let o = run(&["count-params", "--mode", "film"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), "asn=4935928 psr=2048");
    let o = run(&["count-params", "--mode", "resad"]);
    assert_eq!(stdout(&o).trim(), "asn=4935928 smn=24952320 psr=262656");
}

#[test]
fn help_everywhere_and_usage_errors() {
    for c in [
        "ingest", "mirror", "contacts", "phases", "dataset", "train", "finetune", "export-style", "interp", "rollout",
        "count-params", "gradcheck", "serve",
    ] {
        let o = run(&[c, "--help"]);
        assert_eq!(code(&o), 0, "{c}");
        assert!(stdout(&o).contains("Usage"), "{c}");
    }
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["dance"])), 1);
    assert_eq!(code(&run(&["count-params", "--frobnicate"])), 1);
    assert_eq!(code(&run(&["count-params", "--mode", "banana"])), 1);
    // missing input is a data error
    assert_eq!(code(&run(&["mirror", "--in", "/nonexistent/x.smc", "--out", "/tmp/y.smc"])), 2);
}

#[test]
fn phases_write_channels_and_a_plot() {
    let dir = tempfile::tempdir().unwrap();
    let bvh = write_bvh_clip(dir.path(), "neutral", 400);
    let o = run(&["phases", "--in", p(&bvh), "--bone", "l_hand", "--mode", "pca"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let clip = load_clip(&dir.path().join("neutral.phases.smc")).unwrap();
    for e in EndEffector::ALL {
        assert!(clip.aux(&phase_channel_name(e)).is_some());
    }
    let svg = std::fs::read_to_string(dir.path().join("neutral.l_hand.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    let ev = events(&o, "phase");
    assert_eq!(ev.len(), 1);
    assert!((ev[0]["mean_frequency_hz"].as_f64().unwrap() - 1.0).abs() < 0.05);
    assert_eq!(code(&run(&["phases", "--in", p(&bvh), "--mode", "pca"])), 1);
}

#[test]
fn clip_tools_chain() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_bvh_clip(dir.path(), "neutral", 300);
    let b = write_bvh_clip(dir.path(), "proud", 300);
    let out = dir.path().join("clips");
    let o = run(&["ingest", "--in", p(&a), p(&b), "--out-dir", p(&out), "--threads", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(events(&o, "clip").len(), 2);
    let n = out.join("neutral.smc");
    assert_eq!(load_clip(&n).unwrap().len(), 300);

    let m = dir.path().join("m.smc");
    assert_eq!(code(&run(&["mirror", "--in", p(&n), "--out", p(&m)])), 0);
    let mm = dir.path().join("mm.bvh");
    assert_eq!(code(&run(&["mirror", "--in", p(&m), "--out", p(&mm)])), 0);
    assert!(std::fs::read_to_string(&mm).unwrap().starts_with("HIERARCHY"));

    let c = dir.path().join("c.smc");
    let o = run(&["contacts", "--in", p(&n), "--out", p(&c)]);
    assert_eq!(code(&o), 0);
    assert!(load_clip(&c).unwrap().aux(CONTACT_CHANNEL).is_some());
    let frac = events(&o, "contacts")[0]["left_fraction"].as_f64().unwrap();
    // duty cycle of the neutral recipe
    assert!((frac - 0.6).abs() < 0.05, "{frac}");
}

#[test]
fn training_is_reproducible_and_feeds_the_rest_of_the_pipeline() {
    let (dir, manifest) = corpus(&["neutral", "proud"], 400);
    let d = dir.path();
    let ck = |n: &str| d.join(n);
    let train = |out: &Path| run(&["train", "--manifest", p(&manifest), "--epochs", "10", "--seed", "7", "--out", p(out)]);
    let o = train(&ck("a.ckpt"));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(events(&o, "epoch").len(), 10);
    assert_eq!(code(&train(&ck("b.ckpt"))), 0);
    assert_eq!(std::fs::read(ck("a.ckpt")).unwrap(), std::fs::read(ck("b.ckpt")).unwrap());

    let (model, embs) = load_checkpoint(&ck("a.ckpt")).unwrap();
    assert_eq!(model.style_names, ["neutral", "proud"]);
    assert_eq!(embs.len(), 2);

    // dataset summary
    let summary = ck("ds.json");
    assert_eq!(code(&run(&["dataset", "--manifest", p(&manifest), "--out", p(&summary)])), 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(v["styles"].as_array().unwrap().len(), 2);
    assert_eq!(v["normalization"]["input_mean"].as_array().unwrap().len(), 356);

    // CSV export
    let csv = ck("styles.csv");
    assert_eq!(code(&run(&["export-style", "--checkpoint", p(&ck("a.ckpt")), "--csv", p(&csv)])), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("neutral,"));
    assert_eq!(rows[1].split(',').count(), 1 + model.dims().embedding_len());

    // scripted rollout
    let script = ck("walk.jsonl");
    std::fs::write(
        &script,
        "{\"frames\": 30, \"dir\": [0, 1], \"speed\": 1.2, \"gait\": \"walk\"}\n\
         {\"frames\": 30, \"style\": {\"mode\": \"single\", \"id\": \"proud\"}}\n",
    )
    .unwrap();
    let r = ck("r.smc");
    let o = run(&["rollout", "--checkpoint", p(&ck("a.ckpt")), "--script", p(&script), "--out", p(&r)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_clip(&r).unwrap().len(), 60);

    // barycentric rollout
    let i = ck("i.bvh");
    let a_ckpt = ck("a.ckpt");
    let args = ["interp", "--checkpoint", p(&a_ckpt), "--styles", "neutral,proud,neutral", "--frames", "40"];
    let o = run(&[&args[..], &["--lambda", "0.2,0.5,0.3", "--out", p(&i)]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&i).unwrap().starts_with("HIERARCHY"));
    let o = run(&[&args[..], &["--lambda", "0.5,0.6,-0.1", "--out", p(&i)]].concat());
    assert_eq!(code(&o), 1);

    // fine-tune onto a new style
    let extra = write_bvh_clip(d, "swagger", 400);
    let m2 = ck("swagger.txt");
    std::fs::write(&m2, format!("{{\"clip\": \"{}\", \"style\": \"swagger\", \"gait\": \"FW\"}}\n", p(&extra))).unwrap();
    let o = run(&["finetune", "--checkpoint", p(&ck("a.ckpt")), "--manifest", p(&m2), "--epochs", "2", "--out", p(&ck("t.ckpt"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, tuned) = load_checkpoint(&ck("t.ckpt")).unwrap();
    assert_eq!(tuned.len(), 3);
    for (a, b) in embs.iter().zip(&tuned) {
        assert_eq!(a, b);
    }
    let f = &events(&o, "finetune")[0];
    assert!(f["mse_after"].as_f64().unwrap() < f["mse_before"].as_f64().unwrap());
}

#[test]
fn config_file_and_environment_overrides() {
    let (dir, manifest) = corpus(&["neutral"], 300);
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "[train]\nepochs = 2\nbatch_size = 16\n").unwrap();
    let out = dir.path().join("m.ckpt");
    let base = ["train", "--manifest", p(&manifest), "--out", p(&out)];
    let o = run(&[&base[..], &["--config", p(&cfg)]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(events(&o, "epoch").len(), 2);
    // environment beats the file, flags beat the environment
    let o = bin().args(base).args(["--config", p(&cfg)]).env("SM_EPOCHS", "1").output().unwrap();
    assert_eq!(events(&o, "epoch").len(), 1);
    let o = bin().args(base).args(["--config", p(&cfg), "--epochs", "3"]).env("SM_EPOCHS", "1").output().unwrap();
    assert_eq!(events(&o, "epoch").len(), 3);
    std::fs::write(&cfg, "[train]\nepochz = 2\n").unwrap();
    assert_eq!(code(&run(&[&base[..], &["--config", p(&cfg)]].concat())), 2);
}

#[test]
fn serve_announces_its_address() {
    let (dir, manifest) = corpus(&["neutral"], 300);
    let ckpt = dir.path().join("m.ckpt");
    assert_eq!(code(&run(&["train", "--manifest", p(&manifest), "--epochs", "1", "--out", p(&ckpt)])), 0);
    let mut child = bin()
        .args(["serve", "--checkpoint", p(&ckpt), "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    child.kill().unwrap();
    let _ = child.wait();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["event"], "listening");
    let addr: std::net::SocketAddr = v["addr"].as_str().unwrap().parse().unwrap();
    assert_ne!(addr.port(), 0);
}

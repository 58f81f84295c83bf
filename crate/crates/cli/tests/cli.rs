use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use mixer_tts::audio_text::read_melf;
use tempfile::TempDir;

const SMALL_CONFIG: &str = r#"
[model]
feature_dim = 32
dropout = 0.0

[model.encoder]
n_blocks = 1
kernel_start = 3
kernel_end = 3
kernel_step = 2

[model.decoder]
n_blocks = 1
kernel_start = 5
kernel_end = 5
kernel_step = 2

[model.aligner]
dim = 32
use_prior = true

[model.duration_predictor]
in_dim = 32
hidden = 32
dropout = 0.0

[model.pitch_predictor]
in_dim = 32
hidden = 32
dropout = 0.0

[train]
batch_size = 3
accum = 1
base_lr = 0.003
warmup = 20
checkpoint_every = 20
"#;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixer-tts"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn mixer-tts")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL_CONFIG).unwrap();
    p
}

fn train(dir: &Path, steps: u32, seed: u64) -> Output {
    let cfg = write_config(dir);
    let manifest = fixtures().join("manifest.txt");
    let out = dir.join("run");
    run(&[
        "--config",
        s(&cfg),
        "--seed",
        &seed.to_string(),
        "train",
        "--manifest",
        s(&manifest),
        "--out-dir",
        s(&out),
        "--steps",
        &steps.to_string(),
    ])
}

/// One shared 50-step training run; its checkpoint feeds the synthesis and
/// alignment tests.
fn trained() -> &'static (TempDir, PathBuf) {
    static RUN: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let o = train(dir.path(), 50, 0);
        assert!(o.status.success(), "{}", stderr(&o));
        let ckpt = dir.path().join("run/last.mtck");
        (dir, ckpt)
    })
}

#[test]
fn train_missing_manifest_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "train",
        "--manifest",
        "/nonexistent/manifest.txt",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no such file"), "{}", stderr(&o));
}

#[test]
fn train_writes_checkpoints_and_metrics() {
    let (dir, last) = trained();
    assert!(last.is_file());
    let run_dir = dir.path().join("run");
    let ckpts: Vec<_> = std::fs::read_dir(&run_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("step_"))
        .collect();
    assert!(!ckpts.is_empty());
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("step,lr,loss,l_mel,l_aligner,l_durs,l_pitch"));
    assert_eq!(lines.count(), 50);
}

#[test]
fn same_seed_gives_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = train(d.path(), 6, 11);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |d: &TempDir| std::fs::read(d.path().join("run/metrics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let c = tempfile::tempdir().unwrap();
    assert!(train(c.path(), 6, 12).status.success());
    assert_ne!(read(&a), read(&c));
}

fn synth_frames(ckpt: &Path, out: &Path, pace: &str) -> usize {
    let o = run(&[
        "synthesize",
        "--checkpoint",
        s(ckpt),
        "--text",
        "hello.",
        "--out",
        s(out),
        "--pace",
        pace,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mel = read_melf(out).unwrap();
    assert_eq!(mel.n_mels, 80);
    assert!(mel.data.iter().all(|v| v.is_finite()));
    mel.frames
}

#[test]
fn synthesize_writes_mel_and_pace_scales_length() {
    let (dir, ckpt) = trained();
    let t1 = synth_frames(ckpt, &dir.path().join("a.melf"), "1.0") as i64;
    let t2 = synth_frames(ckpt, &dir.path().join("b.melf"), "2.0") as i64;
    let n = "hello.".len() as i64;
    assert!((t2 - 2 * t1).abs() <= n, "pace 1: {t1} frames, pace 2: {t2} frames");
}

#[test]
fn corrupt_checkpoint_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.mtck");
    let mut bytes = std::fs::read(&trained().1).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    std::fs::write(&bad, bytes).unwrap();
    let o = run(&[
        "synthesize",
        "--checkpoint",
        s(&bad),
        "--text",
        "hi",
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("bad checkpoint magic"), "{}", stderr(&o));
}

#[test]
fn unknown_symbols_are_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "synthesize",
        "--checkpoint",
        s(&trained().1),
        "--text",
        "###",
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

fn align(text: &str, audio: &str) -> (Vec<usize>, Vec<Vec<u8>>) {
    let (dir, ckpt) = trained();
    let out = dir.path().join(format!("align_{}", text.len()));
    let wav = fixtures().join(audio);
    let o = run(&[
        "align",
        "--checkpoint",
        s(ckpt),
        "--audio",
        s(&wav),
        "--text",
        text,
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let durations = std::fs::read_to_string(out.join("durations.txt"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    let path = std::fs::read_to_string(out.join("path.txt"))
        .unwrap()
        .lines()
        .map(|l| l.split(' ').map(|v| v.parse().unwrap()).collect())
        .collect();
    (durations, path)
}

#[test]
fn align_outputs_consistent_durations_and_path() {
    let (durations, path) = align("see me", "see_me.wav");
    assert_eq!(durations.len(), 6);
    assert!(durations.iter().all(|&d| d >= 1));
    assert_eq!(durations.iter().sum::<usize>(), path.len());
    for row in &path {
        assert_eq!(row.len(), 6);
        assert_eq!(row.iter().filter(|&&v| v == 1).count(), 1);
    }
    let per_token: Vec<usize> = (0..6).map(|k| path.iter().filter(|r| r[k] == 1).count()).collect();
    assert_eq!(per_token, durations);
}

#[test]
fn align_single_token_takes_every_frame() {
    let (durations, path) = align("s", "see_me.wav");
    assert_eq!(durations, vec![path.len()]);
}

#[test]
fn gradcheck_passes_and_detects_injected_fault() {
    let o = run(&["gradcheck", "--module", "numerics", "--instances", "3"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 failed"));

    let o = run(&[
        "gradcheck",
        "--module",
        "numerics",
        "--instances",
        "3",
        "--inject-fault",
        "gelu-sign",
    ]);
    assert_eq!(o.status.code(), Some(4));
    let gelu = stdout(&o)
        .lines()
        .find(|l| l.starts_with("gelu "))
        .map(str::to_owned)
        .unwrap();
    assert!(gelu.ends_with("FAIL"), "{gelu}");
}

#[test]
fn bench_writes_one_row_per_length() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let csv = dir.path().join("bench.csv");
    let o = run(&[
        "--config",
        s(&cfg),
        "bench",
        "--lengths",
        "8,16,32",
        "--runs",
        "2",
        "--warmup",
        "1",
        "--csv",
        s(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "length,frames,runs,mean_ms,median_ms,audio_s,rtf");
    let lengths: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(lengths, ["8", "16", "32"]);
    for r in &rows[1..] {
        assert_eq!(r.split(',').nth(2), Some("2"));
    }
}

fn total_params(args: &[&str]) -> usize {
    let o = run(args);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let total = out.lines().find(|l| l.starts_with("total")).unwrap();
    total.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn params_presets_are_near_published_sizes() {
    let basic = total_params(&["params", "--preset", "basic"]) as f64;
    let extended = total_params(&["params", "--preset", "extended"]) as f64;
    assert!((basic / 19.2e6 - 1.0).abs() <= 0.1, "{basic}");
    assert!((extended / 24e6 - 1.0).abs() <= 0.1, "{extended}");
    assert!(total_params(&["params", "--preset", "toy"]) < 100_000);
    assert_eq!(total_params(&["params"]) as f64, basic);
}

#[test]
fn dump_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = run(&["--config", s(&cfg), "--seed", "9", "--dump-config"]);
    assert!(o.status.success());
    let dumped = stdout(&o);
    assert!(dumped.contains("feature_dim = 32"));
    assert!(dumped.contains("seed = 9"));
    let again = dir.path().join("dumped.toml");
    std::fs::write(&again, &dumped).unwrap();
    let o2 = run(&["--config", s(&again), "--dump-config"]);
    assert_eq!(stdout(&o2), dumped);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[train]\nstepz = 3\n").unwrap();
    let o = run(&["--config", s(&p), "params"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

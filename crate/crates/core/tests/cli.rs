use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
[data]
n_clips = 10
duration = 1.0

[model]
n_frames = 100
d_model = 8
n_layers = 1
n_heads = 2
d_ff = 16
d_time = 8

[train]
epochs = 1
batch_size = 4
crop_frames = 64
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_drumdiff"));
    c.env("N2N_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn drumdiff")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Config, corpus and a one-epoch checkpoint in a fresh directory.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
    ckpt: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.txt");
    std::fs::write(&config, TINY).unwrap();
    let data = root.join("data");
    let run_dir = root.join("run");
    ok(&["synth", "--config", s(&config), "--out", s(&data)]);
    ok(&["train", "--config", s(&config), "--data", s(&data), "--out", s(&run_dir)]);
    Fixture {
        _dir: dir,
        ckpt: run_dir.join("checkpoint.bin"),
        root,
        config,
        data,
    }
}

#[test]
fn train_writes_artifacts() {
    let f = fixture();
    let run_dir = f.ckpt.parent().unwrap();
    assert!(f.ckpt.exists());
    let log = std::fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    assert!(log.lines().count() >= 2);
    let cfg = std::fs::read_to_string(run_dir.join("config.txt")).unwrap();
    assert!(cfg.contains("d_model = 8"));
}

#[test]
fn one_step_transcription_calls_denoiser_once() {
    let f = fixture();
    let out = f.root.join("t1");
    let stdout = ok(&[
        "transcribe", "--config", s(&f.config), "--checkpoint", s(&f.ckpt), "--data", s(&f.data),
        "--steps", "1", "--out", s(&out),
    ]);
    let lines: Vec<&str> = stdout.lines().filter(|l| l.starts_with("clip")).collect();
    assert!(!lines.is_empty());
    for l in lines {
        assert!(l.ends_with(", 1 denoiser calls"), "{l}");
    }
    for ext in ["mid", "notes.txt", "svg"] {
        let any = std::fs::read_dir(&out)
            .unwrap()
            .any(|e| e.unwrap().file_name().to_string_lossy().ends_with(ext));
        assert!(any, "no .{ext} written");
    }
}

#[test]
fn transcription_is_reproducible() {
    let f = fixture();
    let read = |name: &str| {
        let out = f.root.join(name);
        ok(&[
            "transcribe", "--config", s(&f.config), "--checkpoint", s(&f.ckpt), "--data", s(&f.data),
            "--steps", "3", "--seed", "4", "--clip", "0", "--out", s(&out),
        ]);
        std::fs::read(out.join("0000.notes.txt")).unwrap()
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn evaluate_reference_against_itself() {
    let f = fixture();
    let out = f.root.join("eval");
    let stdout = ok(&["evaluate", s(&f.data), s(&f.data), "--out", s(&out)]);
    let all = stdout.lines().find(|l| l.starts_with("all")).unwrap();
    let cols: Vec<&str> = all.split_whitespace().collect();
    assert_eq!(&cols[cols.len() - 4..], ["1.0000", "1.0000", "1.0000", "1.0000"]);
    let csv = std::fs::read_to_string(out.join("scores_onset.csv")).unwrap();
    assert!(csv.starts_with("clip,component,tp,fp,fn,precision,recall,f1\n"));
    let last = csv.lines().filter(|l| l.starts_with("all,all,")).next_back().unwrap();
    assert!(last.ends_with(",1.000000,1.000000,1.000000"), "{last}");
    assert!(out.join("scores_velocity.csv").exists());
    assert!(out.join("summary.txt").exists());

    // the three-piece view keeps perfect scores
    let stdout = ok(&["evaluate", s(&f.data), s(&f.data), "--remap", "3", "--out", s(&out)]);
    assert!(stdout.contains("other"));
}

#[test]
fn sweep_time_grows_with_steps() {
    let f = fixture();
    let out = f.root.join("sweep");
    let stdout = ok(&[
        "sweep", "--config", s(&f.config), "--checkpoint", s(&f.ckpt), "--data", s(&f.data),
        "--steps-list", "8,1,4,2", "--out", s(&out),
    ]);
    let rows: Vec<Vec<f64>> = stdout
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let steps: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(steps, [1.0, 2.0, 4.0, 8.0]);
    for w in rows.windows(2) {
        assert!(w[1][3] > w[0][3], "wall-clock not increasing: {rows:?}");
    }
    assert!(out.join("sweep.svg").exists());
}

#[test]
fn inpaint_and_generate_write_outputs() {
    let f = fixture();
    let out = f.root.join("gen");
    let stdout = ok(&[
        "inpaint", "--config", s(&f.config), "--checkpoint", s(&f.ckpt), "--data", s(&f.data),
        "--clip", "2", "--mask", "0.5", "1.0", "--steps", "2", "--out", s(&out),
    ]);
    assert!(stdout.contains("2 denoiser calls"));
    let svg = std::fs::read_to_string(out.join("0002.inpaint.svg")).unwrap();
    assert!(svg.contains("#ddd"));

    let stdout = ok(&[
        "generate", "--config", s(&f.config), "--checkpoint", s(&f.ckpt), "--steps", "2", "--seed", "9",
        "--out", s(&out),
    ]);
    assert!(stdout.contains("2 denoiser calls"));
    assert!(out.join("generated.9.mid").exists());
}

#[test]
fn exit_codes() {
    let code = |args: &[&str]| run(args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["transcribe", "--bogus"]), 1);
    assert_eq!(code(&["synth", "--loss", "l7"]), 1);

    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = dir.path().join("bad.txt");
    std::fs::write(&bad_cfg, "[nonsense]\nx = 1\n").unwrap();
    assert_eq!(code(&["synth", "--config", s(&bad_cfg)]), 1);

    let mismatch = dir.path().join("mismatch.txt");
    std::fs::write(&mismatch, "[data]\nduration = 1.0\n").unwrap();
    assert_eq!(code(&["train", "--config", s(&mismatch), "--out", s(dir.path())]), 1);

    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"junk").unwrap();
    let missing = dir.path().join("no-data");
    assert_eq!(
        code(&["transcribe", "--checkpoint", s(&junk), "--data", s(&missing), "--out", s(dir.path())]),
        2
    );
    assert_eq!(code(&["evaluate", s(&missing), s(&missing), "--out", s(dir.path())]), 2);
    let mut c = bin();
    c.env("N2N_THREADS", "zero").args(["evaluate", "a", "b"]);
    assert_eq!(c.output().unwrap().status.code(), Some(1));
}

#[test]
fn evaluate_rejects_unpaired_files() {
    let dir = tempfile::tempdir().unwrap();
    let (r, e) = (dir.path().join("r"), dir.path().join("e"));
    std::fs::create_dir_all(&r).unwrap();
    std::fs::create_dir_all(&e).unwrap();
    std::fs::write(r.join("a.notes.txt"), "0.100000 0 90\n").unwrap();
    std::fs::write(r.join("b.notes.txt"), "0.200000 1 90\n").unwrap();
    std::fs::write(e.join("a.notes.txt"), "0.100000 0 90\n").unwrap();
    let out = run(&["evaluate", s(&r), s(&e), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("matching names"));
}

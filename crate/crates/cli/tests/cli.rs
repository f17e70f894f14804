use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn deftan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deftan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_cfg() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.cfg").display().to_string()
}

struct Scratch {
    dir: TempDir,
}

impl Scratch {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    /// Speech and noise sources of `seconds`, plus a `mics`-channel mixture
    /// and its clean reference.
    fn sources(&self, seconds: &str, mics: &str) {
        let o = deftan(&["synth", &self.arg("s.wav"), &self.arg("n.wav"), "--seconds", seconds]);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = deftan(&[
            "mix",
            &self.arg("s.wav"),
            &self.arg("n.wav"),
            &self.arg("mix.wav"),
            "--reference",
            &self.arg("clean.wav"),
            "--set",
            &format!("mics={mics}"),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
}

#[test]
fn enhances_four_channels_to_mono_with_si_sdr() {
    let s = Scratch::new();
    s.sources("4", "4");
    let o = deftan(&["init", "--model", &s.arg("base.model")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = deftan(&[
        "enhance",
        &s.arg("mix.wav"),
        &s.arg("out.wav"),
        "--model",
        &s.arg("base.model"),
        "--reference",
        &s.arg("clean.wav"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = hound::WavReader::open(s.path("out.wav")).unwrap();
    assert_eq!(out.spec().channels, 1);
    assert_eq!(out.duration(), 64_000);
    let text = stdout(&o);
    let db: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("si-sdr "))
        .and_then(|l| l.trim_end_matches(" dB").parse().ok())
        .unwrap_or_else(|| panic!("no si-sdr line in {text:?}"));
    assert!(db.is_finite());
}

#[test]
fn si_sdr_only_with_reference_and_channel_mismatch_is_usage_error() {
    let s = Scratch::new();
    s.sources("0.5", "2");
    let cfg = tiny_cfg();
    let o = deftan(&["init", "--config", &cfg, "--model", &s.arg("tiny.model")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = deftan(&["enhance", &s.arg("mix.wav"), &s.arg("out.wav"), "--model", &s.arg("tiny.model")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!stdout(&o).contains("si-sdr"));

    // mono speech into a two-channel model
    let o = deftan(&["enhance", &s.arg("s.wav"), &s.arg("out.wav"), "--model", &s.arg("tiny.model")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("channel mismatch"), "{}", stderr(&o));

    std::fs::write(s.path("junk.wav"), b"not a wav").unwrap();
    let o = deftan(&["enhance", &s.arg("junk.wav"), &s.arg("out.wav"), "--model", &s.arg("tiny.model")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_reports_the_reference_rate() {
    let o = deftan(&["analyze"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let total = text.lines().find(|l| l.starts_with("total ≈")).expect("total line");
    let g: f64 = total["total ≈ ".len()..].split_whitespace().next().unwrap().parse().unwrap();
    assert!((g / 64.5 - 1.0).abs() < 0.15, "{total}");
    assert!(text.contains("reference MAC/s") && !text.contains("FAIL"));
}

#[test]
fn analyze_csv_parses() {
    let o = deftan(&["analyze", "--config", &tiny_cfg(), "--format", "csv", "--seconds", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(&reader.headers().unwrap()[1], "analytic_macs");
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(&rows.last().unwrap()[0], "total");
    for r in &rows {
        assert_eq!(r[1], r[2], "{r:?}");
    }
}

#[test]
fn corrupted_formula_fails_analyze() {
    let o = deftan(&["analyze", "--config", &tiny_cfg(), "--seconds", "0.5", "--corrupt-formula", "cea"]);
    assert_eq!(o.status.code(), Some(1));
    let o = deftan(&["analyze", "--config", &tiny_cfg(), "--corrupt-formula", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_toy_zero_steps_logs_initial_loss() {
    let s = Scratch::new();
    s.sources("0.25", "2");
    let o = deftan(&["train-toy", "--config", &tiny_cfg(), &s.arg("s.wav"), &s.arg("n.wav"), "--steps", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1, "{text}");
    assert!(text.starts_with("step    0"));

    let o = deftan(&[
        "train-toy", "--config", &tiny_cfg(), &s.arg("s.wav"), &s.arg("n.wav"), "--steps", "3", "--format", "csv",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(reader.headers().unwrap(), vec!["step", "loss", "speech_term", "noise_term"]);
    let losses: Vec<f64> = reader.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(losses.len(), 4);
    assert!(losses[3] < losses[0]);
}

#[test]
fn diverging_training_exits_with_invariant_failure() {
    let s = Scratch::new();
    s.sources("0.25", "2");
    let o = deftan(&[
        "train-toy", "--config", &tiny_cfg(), &s.arg("s.wav"), &s.arg("n.wav"), "--steps", "20", "--lr", "1e30",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).to_lowercase().contains("non-finite"), "{}", stderr(&o));
}

#[test]
fn selftest_exit_codes_and_filter() {
    let o = deftan(&["selftest", "--filter", "structure."]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("12/12 passed"), "{}", stdout(&o));

    let o = deftan(&["selftest", "--filter", "formula.dpfn", "--corrupt-formula", "dpfn"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("0/1 passed"), "{}", stdout(&o));

    let o = deftan(&["selftest", "--filter", "no-such-case"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(deftan(&["analyze", "--format", "xml"]).status.code(), Some(2));
    assert_eq!(deftan(&["analyze", "--set", "channels"]).status.code(), Some(2));
    assert_eq!(deftan(&["analyze", "--set", "bogus=1"]).status.code(), Some(2));
    assert_eq!(deftan(&["frobnicate"]).status.code(), Some(2));
}

//! End-to-end tests of the `antispoof` binary on a small synthetic corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use antispoof_core::corpus::write_wav;
use antispoof_core::signal::AudioBuffer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_antispoof")
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Noise-plus-tone utterance; the two classes differ in tone frequency,
/// spectral tilt and modulation rate, so every family separates them.
fn synth_utterance(rng: &mut ChaCha8Rng, human: bool) -> AudioBuffer {
    let n = 6400;
    let (tone_hz, am_hz) = if human { (440.0, 3.0) } else { (3200.0, 23.0) };
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / 16000.0;
            let tone = 0.3 * (std::f64::consts::TAU * tone_hz * t).sin();
            let noise = 0.02 * rng.random_range(-1.0..1.0);
            let env = 1.0 + 0.7 * (std::f64::consts::TAU * am_hz * t).sin();
            (tone + noise) * env * 0.5
        })
        .collect();
    AudioBuffer::new(samples, 16000)
}

/// Lay out wavs, protocols and a config file; returns the config path.
fn build_corpus(root: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let audio_dir = root.join("audio");
    std::fs::create_dir_all(&audio_dir).unwrap();

    let mut train_lines = Vec::new();
    let mut dev_lines = Vec::new();
    let put = |id: String, human: bool, attack: &str, lines: &mut Vec<String>, rng: &mut ChaCha8Rng| {
        let wav = format!("audio/{id}.wav");
        write_wav(&root.join(&wav), &synth_utterance(rng, human)).unwrap();
        let label = if human { "human" } else { "spoof" };
        lines.push(format!("{id} {wav} {label} {attack}"));
    };
    for i in 0..5 {
        put(format!("T_h{i}"), true, "-", &mut train_lines, &mut rng);
    }
    for i in 0..3 {
        put(format!("T_s1_{i}"), false, "S1", &mut train_lines, &mut rng);
        put(format!("T_s2_{i}"), false, "S2", &mut train_lines, &mut rng);
    }
    for i in 0..4 {
        put(format!("D_h{i}"), true, "-", &mut dev_lines, &mut rng);
    }
    for i in 0..3 {
        put(format!("D_s1_{i}"), false, "S1", &mut dev_lines, &mut rng);
        put(format!("D_s2_{i}"), false, "S2", &mut dev_lines, &mut rng);
    }
    std::fs::write(root.join("train.tsv"), train_lines.join("\n") + "\n").unwrap();
    std::fs::write(root.join("dev.tsv"), dev_lines.join("\n") + "\n").unwrap();

    let config_path = root.join("exp.conf");
    std::fs::write(
        &config_path,
        format!(
            "corpus_root = {}\n\
             train_protocol = {}\n\
             dev_protocol = {}\n\
             work_dir = {}\n\
             families = mfcc,isobt\n\
             dynamics = static,dd\n\
             components = 8\n\
             seed = 3\n\
             workers = 2\n",
            root.display(),
            root.join("train.tsv").display(),
            root.join("dev.tsv").display(),
            root.join("work").display(),
        ),
    )
    .unwrap();
    config_path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn run_all_produces_a_zero_eer_report_and_is_deterministic() {
    let root = fresh_dir("cli-runall");
    let config = build_corpus(&root);
    let config = config.to_str().unwrap();

    let out = run(&["run-all", "--config", config]);
    assert_ok(&out);

    let work = root.join("work");
    assert!(work.join("sfcc.warp").is_file());
    assert!(work.join("cache/manifest.tsv").is_file());
    for tag in ["mfcc.static", "mfcc.dd", "isobt.static", "isobt.dd"] {
        assert!(work.join(format!("models/{tag}.natural.gmm")).is_file());
        assert!(work.join(format!("models/{tag}.synthetic.gmm")).is_file());
        assert!(work.join(format!("scores/{tag}.tsv")).is_file());
    }
    let report = std::fs::read_to_string(work.join("report.tsv")).unwrap();
    let mut rows = 0;
    for line in report.lines().skip(1) {
        rows += 1;
        let cells: Vec<&str> = line.split('\t').collect();
        assert_eq!(cells.len(), 8, "bad report row: {line}");
        // S1, S2 and the average separate perfectly; S3-S5 have no trials
        assert_eq!(&cells[2..8], &["0.000", "0.000", "-", "-", "-", "0.000"]);
    }
    assert_eq!(rows, 4);
    assert!(work.join("report.txt").is_file());

    // identical inputs and seed give byte-identical artifacts
    let warp1 = std::fs::read(work.join("sfcc.warp")).unwrap();
    let scores1 = std::fs::read(work.join("scores/mfcc.static.tsv")).unwrap();
    let report1 = std::fs::read(work.join("report.tsv")).unwrap();
    let manifest1 = std::fs::read(work.join("cache/manifest.tsv")).unwrap();

    std::fs::remove_dir_all(&work).unwrap();
    let out = run(&["run-all", "--config", config]);
    assert_ok(&out);
    assert_eq!(warp1, std::fs::read(work.join("sfcc.warp")).unwrap());
    assert_eq!(scores1, std::fs::read(work.join("scores/mfcc.static.tsv")).unwrap());
    assert_eq!(report1, std::fs::read(work.join("report.tsv")).unwrap());
    assert_eq!(manifest1, std::fs::read(work.join("cache/manifest.tsv")).unwrap());

    // warp file shape: header plus n_filters + 2 boundaries
    let warp_text = String::from_utf8(warp1).unwrap();
    let lines: Vec<&str> = warp_text.lines().collect();
    assert!(lines[0].starts_with("sfcc-warp v1 20 16000"));
    assert_eq!(lines.len(), 1 + 22);
    let boundaries: Vec<f64> = lines[1..].iter().map(|l| l.parse().unwrap()).collect();
    assert!(boundaries.windows(2).all(|w| w[1] > w[0]));

    // resumed extraction recomputes nothing
    let out = run(&["extract", "--config", config]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("extracted 0 feature files"),
        "unexpected: {stdout}"
    );

    // a corrupted cache entry is recomputed and repaired
    let victim = work.join("cache/D_h0.mfcc.static.ftr");
    let original = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &original[..original.len() / 2]).unwrap();
    let out = run(&["extract", "--config", config]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("extracted 1 feature files"),
        "unexpected: {stdout}"
    );
    assert_eq!(original, std::fs::read(&victim).unwrap());

    // swapping the model pair negates every score exactly
    let nat = work.join("models/mfcc.static.natural.gmm");
    let syn = work.join("models/mfcc.static.synthetic.gmm");
    let tmp = work.join("models/swap.tmp");
    std::fs::rename(&nat, &tmp).unwrap();
    std::fs::rename(&syn, &nat).unwrap();
    std::fs::rename(&tmp, &syn).unwrap();
    let out = run(&["score", "--config", config]);
    assert_ok(&out);
    let swapped = std::fs::read_to_string(work.join("scores/mfcc.static.tsv")).unwrap();
    let original_scores = String::from_utf8(scores1).unwrap();
    for (a, b) in original_scores.lines().zip(swapped.lines()) {
        let sa: f64 = a.split('\t').nth(1).unwrap().parse().unwrap();
        let sb: f64 = b.split('\t').nth(1).unwrap().parse().unwrap();
        assert_eq!(sa.to_bits(), (-sb).to_bits(), "{a} vs {b}");
    }
}

#[test]
fn missing_warp_is_an_actionable_error() {
    let root = fresh_dir("cli-nowarp");
    let config = build_corpus(&root);
    let out = run(&["extract", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error["), "stderr: {stderr}");
    assert!(stderr.contains("learn-warp"), "stderr: {stderr}");
}

#[test]
fn missing_inputs_carry_io_category() {
    let root = fresh_dir("cli-noproto");
    let out = run(&[
        "learn-warp",
        "--corpus-root",
        root.to_str().unwrap(),
        "--train-protocol",
        root.join("absent.tsv").to_str().unwrap(),
        "--work-dir",
        root.join("work").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error[io]"), "stderr: {stderr}");
}

#[test]
fn oversized_component_count_names_the_shortfall() {
    let root = fresh_dir("cli-bigc");
    let config = build_corpus(&root);
    let config = config.to_str().unwrap();
    assert_ok(&run(&["learn-warp", "--config", config]));
    assert_ok(&run(&["extract", "--config", config]));
    let out = run(&["train", "--config", config, "--components", "100000"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error[training]"), "stderr: {stderr}");
    assert!(stderr.contains("100000"), "stderr: {stderr}");
}

#[test]
fn unknown_config_keys_fail_fast() {
    let root = fresh_dir("cli-badconf");
    let path = root.join("bad.conf");
    std::fs::write(&path, "familes = mfcc\n").unwrap();
    let out = run(&["run-all", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error[cli]"), "stderr: {stderr}");
    assert!(stderr.contains("familes"), "stderr: {stderr}");
}

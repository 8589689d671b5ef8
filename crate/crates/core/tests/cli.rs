//! Command-line behaviour: exit codes, prerequisites, the manifest path and checkpoint inspection.

use std::path::Path;
use std::process::Command;

use latent_plan::pipeline::cli::run;
use latent_plan::pipeline::exit_code;

const TINY: &str = "\
# small enough to train in a few seconds
schedule.num_steps = 10
denoiser.channels1 = 8
denoiser.channels2 = 16
denoiser.time_dim = 8
vae.epochs = 2
classifier.epochs = 2
diffusion.epochs = 2
diffusion.steps_per_epoch = 5
diffusion.warmup_epochs = 1
diffusion.decay_window = 1
dataset.videos_per_task = 10
";

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Out {
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("latent-plan").chain(args.iter().copied()), &mut o, &mut e);
    Out { code, stdout: String::from_utf8(o).unwrap(), stderr: String::from_utf8(e).unwrap() }
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.kv");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(cli(&["--help"]).code, exit_code::OK);
    assert_eq!(cli(&[]).code, exit_code::USAGE);
    assert_eq!(cli(&["train", "--stage", "decoder", "--dir", "x"]).code, exit_code::USAGE);
    assert_eq!(cli(&["frobnicate"]).code, exit_code::USAGE);
}

#[test]
fn config_errors_exit_with_config_code() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path().to_str().unwrap();
    let r = cli(&["train", "--stage", "vae", "--dir", dir, "--set", "no.such.key=1"]);
    assert_eq!(r.code, exit_code::CONFIG, "{}", r.stderr);
    let r = cli(&["train", "--stage", "vae", "--dir", dir, "--set", "vae.epochs=0"]);
    assert_eq!(r.code, exit_code::CONFIG, "{}", r.stderr);
    let r = cli(&["train", "--stage", "vae", "--dir", dir, "--set", "preset=imaginary"]);
    assert_eq!(r.code, exit_code::CONFIG, "{}", r.stderr);
    let r = cli(&["eval", "--dir", dir, "--config", d.path().join("missing.kv").to_str().unwrap()]);
    assert_eq!(r.code, exit_code::IO, "{}", r.stderr);
}

#[test]
fn missing_prerequisites_are_reported() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path());
    let dir = d.path().join("run");
    let dir = dir.to_str().unwrap();
    let r = cli(&["train", "--config", &cfg, "--stage", "diffusion", "--dir", dir]);
    assert_eq!(r.code, exit_code::PREREQUISITE, "{}", r.stderr);
    assert!(r.stderr.contains("train --stage vae"), "{}", r.stderr);
    let r = cli(&["eval", "--config", &cfg, "--dir", dir]);
    assert_eq!(r.code, exit_code::PREREQUISITE, "{}", r.stderr);
}

#[test]
fn corrupt_checkpoint_exits_with_checkpoint_code() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("bad.ckpt");
    std::fs::write(&p, b"not a checkpoint").unwrap();
    let r = cli(&["inspect-checkpoint", p.to_str().unwrap()]);
    assert_eq!(r.code, exit_code::CHECKPOINT, "{}", r.stderr);
}

#[test]
fn manifest_train_eval_and_inspect() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path());
    let manifest = d.path().join("data.json");
    let m = manifest.to_str().unwrap();
    let r = cli(&["gen-data", "--config", &cfg, "--out", m]);
    assert_eq!(r.code, exit_code::OK, "{}", r.stderr);
    assert!(r.stdout.starts_with("wrote 300 samples (T=3, pdpp)"), "{}", r.stdout);

    let run_dir = d.path().join("run");
    let dir = run_dir.to_str().unwrap();
    let r = cli(&["train", "--config", &cfg, "--data", m, "--stage", "all", "--dir", dir]);
    assert_eq!(r.code, exit_code::OK, "{}", r.stderr);
    assert_eq!(r.stdout.lines().count(), 3, "{}", r.stdout);
    for f in ["vae.ckpt", "classifier.ckpt", "denoiser.ckpt", "vae_loss.csv", "classifier_loss.csv", "diffusion_loss.csv", "config.kv"] {
        assert!(run_dir.join(f).is_file(), "{f} missing");
    }

    // Manifest data and regenerated synthetic data are the same samples.
    let from_manifest = cli(&["eval", "--config", &cfg, "--data", m, "--dir", dir]);
    assert_eq!(from_manifest.code, exit_code::OK, "{}", from_manifest.stderr);
    let synthetic = cli(&["eval", "--config", &cfg, "--dir", dir]);
    assert_eq!(synthetic.code, exit_code::OK, "{}", synthetic.stderr);
    let body = |s: &str| s.lines().filter(|l| !l.starts_with("dataset")).map(|l| l.replace("synthetic", "")).collect::<Vec<_>>();
    assert_eq!(body(&from_manifest.stdout).len(), body(&synthetic.stdout).len());
    assert!(run_dir.join("report.json").is_file() && run_dir.join("report.csv").is_file());

    // Evaluating with an architecture that differs from the checkpoint is refused.
    let r = cli(&["eval", "--config", &cfg, "--set", "denoiser.channels1=12", "--dir", dir]);
    assert_eq!(r.code, exit_code::CHECKPOINT, "{}", r.stderr);

    // A horizon disagreeing with the manifest is a config error.
    let r = cli(&["eval", "--config", &cfg, "--data", m, "--set", "horizon=4", "--dir", dir]);
    assert_eq!(r.code, exit_code::CONFIG, "{}", r.stderr);

    let ck = run_dir.join("denoiser.ckpt");
    let r = cli(&["inspect-checkpoint", ck.to_str().unwrap()]);
    assert_eq!(r.code, exit_code::OK, "{}", r.stderr);
    assert!(r.stdout.contains("denoiser.arch") && r.stdout.contains("denoiser.schedule"), "{}", r.stdout);
    let r = cli(&["inspect-checkpoint", "--json", ck.to_str().unwrap()]);
    let doc: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(doc["sha256"].as_str().unwrap().len(), 64);
    assert!(doc["entries"].as_array().unwrap().len() > 4);
}

#[test]
fn binary_propagates_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_latent-plan");
    let st = Command::new(bin).arg("--version").output().unwrap();
    assert_eq!(st.status.code(), Some(exit_code::OK));
    let st = Command::new(bin).args(["inspect-checkpoint", "/nonexistent/x.ckpt"]).output().unwrap();
    assert_eq!(st.status.code(), Some(exit_code::IO));
    assert!(String::from_utf8_lossy(&st.stderr).starts_with("error:"));
}

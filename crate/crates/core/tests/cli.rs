use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use adrbc::data::load_dataset;
use adrbc::pipeline::{manifest_returns, EXPERT_FILE, MANIFEST_FILE, MIXED_FILE, SUBOPTIMAL_FILE};

fn adrbc(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adrbc"))
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

/// Header and rows of a CSV file.
fn read_csv(path: impl AsRef<Path>) -> std::io::Result<(Vec<String>, Vec<Vec<String>>)> {
    let src = fs::read_to_string(path)?;
    let mut lines = src.lines().map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>());
    let header = lines.next().unwrap_or_default();
    Ok((header, lines.collect()))
}

fn column(table: &(Vec<String>, Vec<Vec<String>>), name: &str) -> Vec<f64> {
    let i = table.0.iter().position(|h| h == name).expect("column exists");
    table.1.iter().map(|r| r[i].parse().unwrap()).collect()
}

fn write_cfg(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = "env = point-mass-2d\n\
    corpus = scripted-expert:5;noisy-expert(0.5):30\n\
    vae_iterations = 100\n\
    policy_iterations = 100\n\
    policy_hidden = 16\n\
    policy_layers = 2\n\
    eval_every = 50\n\
    eval_episodes = 3\n";

#[test]
fn gen_data_files_reload_and_repeat_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(adrbc(&cfg, &a, &["gen-data"]));
    ok(adrbc(&cfg, &b, &["gen-data"]));
    for f in [EXPERT_FILE, SUBOPTIMAL_FILE, MIXED_FILE, MANIFEST_FILE] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(load_dataset(a.join(EXPERT_FILE)).unwrap().trajectories().len(), 5);
    assert_eq!(load_dataset(a.join(SUBOPTIMAL_FILE)).unwrap().trajectories().len(), 30);
    assert_eq!(load_dataset(a.join(MIXED_FILE)).unwrap().trajectories().len(), 35);
}

#[test]
fn manifest_returns_match_recomputed_returns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SMALL);
    ok(adrbc(&cfg, tmp.path(), &["gen-data"]));
    for (name, file) in [("expert", EXPERT_FILE), ("suboptimal", SUBOPTIMAL_FILE), ("mixed", MIXED_FILE)] {
        let ds = load_dataset(tmp.path().join(file)).unwrap();
        let recomputed: Vec<f64> = ds
            .trajectories()
            .iter()
            .map(|t| t.transitions().iter().map(|x| x.reward()).sum())
            .collect();
        let listed = manifest_returns(&tmp.path().join(MANIFEST_FILE), name).unwrap();
        assert_eq!(listed.len(), recomputed.len());
        for (l, r) in listed.iter().zip(&recomputed) {
            assert!((l - r).abs() <= 1e-12 * r.abs().max(1.0), "{name}: {l} vs {r}");
        }
    }
}

#[test]
fn zero_iterations_emit_initialized_checkpoints_and_empty_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        &format!("{SMALL}vae_iterations = 0\npolicy_iterations = 0\n").replace("vae_iterations = 100\npolicy_iterations = 100\n", ""),
    );
    ok(adrbc(&cfg, tmp.path(), &["gen-data"]));
    let line = ok(adrbc(&cfg, tmp.path(), &["train"]));
    assert!(line.contains("final_score_mean="), "{line}");
    for f in ["expert.adrw", "suboptimal.adrw", "policy.adrw", "summary.txt"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    for f in ["density_metrics.csv", "policy_metrics.csv"] {
        let (header, rows) = read_csv(tmp.path().join(f)).unwrap();
        assert!(!header.is_empty());
        assert!(rows.is_empty(), "{f} has rows");
    }
}

#[test]
fn bc_needs_no_estimators() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), &format!("{SMALL}objective = bc\n"));
    ok(adrbc(&cfg, tmp.path(), &["gen-data"]));
    ok(adrbc(&cfg, tmp.path(), &["train"]));
    assert!(tmp.path().join("policy.adrw").exists());
    assert!(!tmp.path().join("expert.adrw").exists());
    assert!(!tmp.path().join("density_metrics.csv").exists());
    let score = ok(adrbc(&cfg, tmp.path(), &["eval"]));
    assert!(score.starts_with("score"), "{score}");
}

#[test]
fn bandit_run_reaches_expert_level() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "env = bandit-1d\ndemos = 20\ncorpus = scripted-expert:20;noisy-expert(0.5):200\n\
         vae_iterations = 1000\npolicy_iterations = 2000\npolicy_lr = 1e-3\npolicy_hidden = 64\n\
         policy_layers = 3\neval_every = 500\neval_episodes = 50\n",
    );
    let t = Instant::now();
    ok(adrbc(&cfg, tmp.path(), &["gen-data"]));
    ok(adrbc(&cfg, tmp.path(), &["train"]));
    assert!(t.elapsed() < Duration::from_secs(120));
    ok(adrbc(&cfg, tmp.path(), &["eval"]));
    let score = column(&read_csv(tmp.path().join("eval.csv")).unwrap(), "score_mean")[0];
    assert!(score >= 90.0, "score {score}");
}

#[test]
fn single_seed_ablation_has_one_row_per_objective() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SMALL);
    let out = ok(adrbc(&cfg, tmp.path(), &["ablate"]));
    assert_eq!(out.lines().count(), 5);
    assert_eq!(read_csv(tmp.path().join("ablation.csv")).unwrap().1.len(), 5);
    assert_eq!(read_csv(tmp.path().join("ablation_summary.csv")).unwrap().1.len(), 5);
}

#[test]
fn timing_mode_sweeps_batch_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), &format!("{SMALL}timing_batches = 10,50,300\ntiming_repeats = 2\n"));
    ok(adrbc(&cfg, tmp.path(), &["ablate", "--timing"]));
    let t = read_csv(tmp.path().join("timing.csv")).unwrap();
    assert_eq!(t.1.len(), 15);
    assert!(column(&t, "seconds_per_update").iter().all(|&s| s > 0.0));
}

#[test]
fn verify_passes_and_reports_wall_time() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "");
    let out = ok(adrbc(&cfg, tmp.path(), &["verify"]));
    assert!(out.lines().filter(|l| l.starts_with("[PASS]")).count() >= 8, "{out}");
    assert!(out.lines().filter(|l| l.starts_with('[')).all(|l| l.ends_with("s)")));
}

#[test]
fn sign_flip_makes_verify_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "");
    let o = adrbc(&cfg, tmp.path(), &["verify", "--flip-weight-sign"]);
    assert_eq!(o.status.code(), Some(1));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().any(|l| l.starts_with("[FAIL] dwr:")), "{out}");
}

#[test]
fn unknown_key_fails_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "policy_iteratons = 5\n");
    let out = tmp.path().join("never");
    let o = adrbc(&cfg, &out, &["gen-data"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("policy_iteratons"));
    assert!(!out.exists());
}

#[test]
fn missing_datasets_are_io_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SMALL);
    assert_eq!(adrbc(&cfg, tmp.path(), &["train"]).status.code(), Some(3));
}

//! The end-to-end stages behind the command-line subcommands.
//!
//! Files written under the output directory:
//!
//! | file | writer |
//! |---|---|
//! | `expert.adrb`, `suboptimal.adrb`, `mixed.adrb`, `manifest.txt` | [`cmd_gen_data`] |
//! | `score_refs.csv` | [`cmd_calibrate`] |
//! | `expert.adrw`, `suboptimal.adrw`, `density_metrics.csv` | [`cmd_train`] (not for BC) |
//! | `policy.adrw`, `policy_metrics.csv`, `summary.txt` | [`cmd_train`] |
//! | `eval.csv` | [`cmd_eval`] |
//! | `ablation.csv`, `ablation_summary.csv` | [`cmd_ablate`] |
//! | `timing.csv` | [`cmd_timing`] |
//!
//! Datasets are stored with raw observations. Training normalizes every split with statistics
//! of the mixed corpus, and the policy checkpoint carries those statistics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::ade::{metrics_table, train_density, DensityTraining};
use crate::config::RunConfig;
use crate::csv::{fmt_f64, CsvTable};
use crate::data::{apply_norm, load_dataset, obs_stats, save_dataset, split_by_return, Dataset, NormStats, Role};
use crate::dwr::{
    init_policy, load_policy, policy_metrics_table, save_policy, train_policy, DwrConfig, EstimatorPair, EvalSetup,
    Objective, PolicyTrainer, PolicyTraining,
};
use crate::envs::{evaluate, generate_corpus, render_score_table, score_refs, EvalStats, Task};
use crate::error::{Error, Result};
use crate::vqvae::{save_estimator, FrozenEstimator};

pub const EXPERT_FILE: &str = "expert.adrb";
pub const SUBOPTIMAL_FILE: &str = "suboptimal.adrb";
pub const MIXED_FILE: &str = "mixed.adrb";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const SCORE_FILE: &str = "score_refs.csv";
pub const POLICY_FILE: &str = "policy.adrw";

/// Evaluation episodes are drawn from a seed offset away from data generation.
const EVAL_SEED_OFFSET: u64 = 1_000_003;

/// Raw corpus and its split into demonstrations (top returns) and the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub mixed: Dataset,
    pub expert: Dataset,
    pub suboptimal: Dataset,
}

pub fn build_corpus(cfg: &RunConfig, seed: u64) -> Result<Corpus> {
    let mixed = generate_corpus(cfg.env, &cfg.corpus_spec(), seed)?;
    let (expert, suboptimal) = split_by_return(&mixed, cfg.demos)?;
    Ok(Corpus {
        mixed,
        expert: expert.with_role(Role::Expert),
        suboptimal: suboptimal.with_role(Role::Suboptimal),
    })
}

/// All three splits normalized with the mixed corpus statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub corpus: Corpus,
    pub stats: NormStats,
}

pub fn prepare(raw: &Corpus) -> Result<Prepared> {
    let stats = obs_stats(&raw.mixed)?;
    Ok(Prepared {
        corpus: Corpus {
            mixed: apply_norm(&raw.mixed, &stats)?,
            expert: apply_norm(&raw.expert, &stats)?,
            suboptimal: apply_norm(&raw.suboptimal, &stats)?,
        },
        stats,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn join_returns(ds: &Dataset) -> String {
    ds.returns().iter().map(|r| fmt_f64(*r)).collect::<Vec<_>>().join(",")
}

/// Writes the three dataset files and the manifest; returns the manifest path.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = cfg.data_dir();
    ensure_dir(dir)?;
    let c = build_corpus(cfg, cfg.seed)?;
    save_dataset(&c.expert, dir.join(EXPERT_FILE))?;
    save_dataset(&c.suboptimal, dir.join(SUBOPTIMAL_FILE))?;
    save_dataset(&c.mixed, dir.join(MIXED_FILE))?;
    let mut m = String::new();
    let _ = writeln!(m, "env = {}", cfg.env);
    let _ = writeln!(m, "seed = {}", cfg.seed);
    let _ = writeln!(m, "demos = {}", cfg.demos);
    let _ = writeln!(m, "corpus = {}", cfg.corpus_spec().render());
    for (name, ds) in [("expert", &c.expert), ("suboptimal", &c.suboptimal), ("mixed", &c.mixed)] {
        let _ = writeln!(m, "{name}_trajectories = {}", ds.trajectories().len());
        let _ = writeln!(m, "{name}_returns = {}", join_returns(ds));
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, m)?;
    Ok(path)
}

/// Reads `<name>_returns` from a manifest.
pub fn manifest_returns(path: &Path, name: &str) -> Result<Vec<f64>> {
    let key = format!("{name}_returns");
    let src = fs::read_to_string(path)?;
    let line = src
        .lines()
        .find_map(|l| l.split_once('=').filter(|(k, _)| k.trim() == key).map(|(_, v)| v.trim().to_string()))
        .ok_or_else(|| Error::argument(format!("manifest lacks {key}")))?;
    if line.is_empty() {
        return Ok(Vec::new());
    }
    line.split(',')
        .map(|x| x.parse::<f64>().map_err(|_| Error::argument(format!("bad return {x:?}"))))
        .collect()
}

/// Loads the three dataset files, checking dims against the configured task.
pub fn load_corpus(dir: &Path, task: Task) -> Result<Corpus> {
    let load = |f: &str, role: Role| -> Result<Dataset> {
        let ds = load_dataset(dir.join(f))?.with_role(role);
        if ds.obs_dim() != task.obs_dim() || ds.act_dim() != task.act_dim() {
            return Err(Error::argument(format!("{f} does not match {task}")));
        }
        Ok(ds)
    };
    Ok(Corpus {
        mixed: load(MIXED_FILE, Role::Mixed)?,
        expert: load(EXPERT_FILE, Role::Expert)?,
        suboptimal: load(SUBOPTIMAL_FILE, Role::Suboptimal)?,
    })
}

/// Writes the score-reference table for every task.
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<String> {
    ensure_dir(&cfg.out)?;
    let rows = Task::ALL
        .iter()
        .map(|&t| score_refs(t).map(|r| (t, r)))
        .collect::<Result<Vec<_>>>()?;
    let table = render_score_table(&rows);
    fs::write(cfg.out.join(SCORE_FILE), &table)?;
    Ok(table)
}

fn eval_setup(cfg: &RunConfig, seed: u64) -> Result<EvalSetup> {
    Ok(EvalSetup {
        task: cfg.env,
        refs: score_refs(cfg.env)?,
        seed: seed.wrapping_add(EVAL_SEED_OFFSET),
    })
}

/// Density stage for one seed.
pub fn train_estimators(cfg: &RunConfig, data: &Prepared, seed: u64) -> Result<DensityTraining> {
    train_density(
        &data.corpus.expert,
        &data.corpus.suboptimal,
        &cfg.estimator()?,
        &cfg.ade()?,
        seed,
    )
}

/// Policy stage for one objective; BC trains on the demonstrations, everything else on the
/// mixed corpus.
pub fn train_policy_stage(
    cfg: &RunConfig,
    data: &Prepared,
    density: Option<&DensityTraining>,
    objective: Objective,
    seed: u64,
) -> Result<PolicyTraining> {
    let dwr = DwrConfig {
        objective,
        ..cfg.dwr()?
    };
    let pair = density.map(|d| EstimatorPair {
        expert: &d.expert,
        suboptimal: &d.suboptimal,
    });
    let set = if objective == Objective::Bc {
        &data.corpus.expert
    } else {
        &data.corpus.mixed
    };
    let ev = eval_setup(cfg, seed)?;
    train_policy(pair, set, cfg.env.action_bound(), &dwr, seed, Some(&ev))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub final_eval: EvalStats,
    pub best_eval: f64,
    pub summary: String,
}

/// Density pre-training (skipped for BC), then policy training; writes checkpoints, metrics
/// and a summary.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    let raw = load_corpus(cfg.data_dir(), cfg.env)?;
    let data = prepare(&raw)?;
    let density = if cfg.objective.needs_estimators() {
        let d = train_estimators(cfg, &data, cfg.seed)?;
        save_estimator(&d.expert, cfg.out.join("expert.adrw"))?;
        save_estimator(&d.suboptimal, cfg.out.join("suboptimal.adrw"))?;
        metrics_table(&d.metrics).write(cfg.out.join("density_metrics.csv"))?;
        Some(d)
    } else {
        None
    };
    let out = train_policy_stage(cfg, &data, density.as_ref(), cfg.objective, cfg.seed)?;
    save_policy(&out.policy, cfg.out.join(POLICY_FILE))?;
    policy_metrics_table(&out.metrics).write(cfg.out.join("policy_metrics.csv"))?;
    let fin = out
        .final_eval
        .ok_or_else(|| Error::Contract("training returned no final evaluation".into()))?;
    let best = out.best_eval.unwrap_or(fin.mean);
    let summary = format!(
        "env={} objective={} seed={} final_score_mean={} final_score_std={} best_score={}",
        cfg.env,
        cfg.objective,
        cfg.seed,
        fmt_f64(fin.mean),
        fmt_f64(fin.std),
        fmt_f64(best)
    );
    fs::write(cfg.out.join("summary.txt"), format!("{summary}\n"))?;
    Ok(TrainReport {
        final_eval: fin,
        best_eval: best,
        summary,
    })
}

/// Scores the saved policy over `eval_episodes` episodes.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalStats> {
    cfg.validate()?;
    let mut policy = load_policy(cfg.out.join(POLICY_FILE))?;
    if policy.obs_dim() != cfg.env.obs_dim() || policy.act_dim() != cfg.env.act_dim() {
        return Err(Error::argument(format!("policy does not match {}", cfg.env)));
    }
    let ev = eval_setup(cfg, cfg.seed)?;
    let s = evaluate(&mut policy, cfg.env, cfg.eval_episodes, ev.seed, &ev.refs)?;
    let mut t = CsvTable::new(&["env", "episodes", "score_mean", "score_std"]);
    t.push(vec![
        cfg.env.to_string(),
        cfg.eval_episodes.to_string(),
        fmt_f64(s.mean),
        fmt_f64(s.std),
    ]);
    t.write(cfg.out.join("eval.csv"))?;
    Ok(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub objective: Objective,
    pub seed: u64,
    pub final_eval: EvalStats,
    pub best_eval: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs `objectives` for one seed on freshly generated data, sharing one density stage.
pub fn ablate_seed(cfg: &RunConfig, objectives: &[Objective], seed: u64) -> Result<Vec<AblationRow>> {
    let data = prepare(&build_corpus(cfg, seed)?)?;
    let density = if objectives.iter().any(|o| o.needs_estimators()) {
        Some(train_estimators(cfg, &data, seed)?)
    } else {
        None
    };
    objectives
        .iter()
        .map(|&o| {
            let out = train_policy_stage(cfg, &data, density.as_ref(), o, seed)?;
            let fin = out
                .final_eval
                .ok_or_else(|| Error::Contract("training returned no final evaluation".into()))?;
            Ok(AblationRow {
                objective: o,
                seed,
                final_eval: fin,
                best_eval: out.best_eval.unwrap_or(fin.mean),
            })
        })
        .collect()
}

/// Objectives ranked by median final score, best first: `(objective, median final, median best)`.
pub fn rank(rows: &[AblationRow]) -> Vec<(Objective, f64, f64)> {
    let mut out: Vec<(Objective, f64, f64)> = Objective::ALL
        .iter()
        .filter_map(|&o| {
            let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.objective == o).collect();
            if mine.is_empty() {
                return None;
            }
            let fin: Vec<f64> = mine.iter().map(|r| r.final_eval.mean).collect();
            let best: Vec<f64> = mine.iter().map(|r| r.best_eval).collect();
            Some((o, median(&fin), median(&best)))
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

/// Every objective on seeds `seed..seed + seeds`; writes per-run rows and a ranked summary.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    let mut rows = Vec::new();
    for k in 0..cfg.seeds {
        rows.extend(ablate_seed(cfg, &Objective::ALL, cfg.seed + k)?);
    }
    let mut t = CsvTable::new(&["objective", "seed", "final_score_mean", "final_score_std", "best_score"]);
    for r in &rows {
        t.push(vec![
            r.objective.to_string(),
            r.seed.to_string(),
            fmt_f64(r.final_eval.mean),
            fmt_f64(r.final_eval.std),
            fmt_f64(r.best_eval),
        ]);
    }
    t.write(cfg.out.join("ablation.csv"))?;
    let mut s = CsvTable::new(&["rank", "objective", "median_final_score", "median_best_score"]);
    for (i, (o, f, b)) in rank(&rows).into_iter().enumerate() {
        s.push(vec![(i + 1).to_string(), o.to_string(), fmt_f64(f), fmt_f64(b)]);
    }
    s.write(cfg.out.join("ablation_summary.csv"))?;
    Ok(rows)
}

/// Median wall time of one policy update at batch size `b`, over `repeats` timed updates
/// after one warm-up update.
pub fn time_update(
    cfg: &RunConfig,
    data: &Dataset,
    pair: EstimatorPair<'_>,
    objective: Objective,
    b: usize,
    repeats: usize,
    seed: u64,
) -> Result<f64> {
    let dwr = DwrConfig {
        objective,
        batch_size: b,
        ..cfg.dwr()?
    };
    let policy = init_policy(data, cfg.env.action_bound(), &dwr, seed)?;
    let mut trainer = PolicyTrainer::new(policy, data, Some(pair), &dwr, seed)?;
    trainer.step(&dwr)?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        trainer.step(&dwr)?;
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(median(&times))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub objective: Objective,
    pub batch_size: usize,
    pub seconds: f64,
}

/// Per-update time against batch size for every objective (estimators trained briefly on
/// the configured corpus); writes `timing.csv`.
pub fn cmd_timing(cfg: &RunConfig) -> Result<Vec<TimingRow>> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    let data = prepare(&build_corpus(cfg, cfg.seed)?)?;
    let density = train_estimators(cfg, &data, cfg.seed)?;
    let pair = EstimatorPair {
        expert: &density.expert,
        suboptimal: &density.suboptimal,
    };
    let mut rows = Vec::new();
    for o in Objective::ALL {
        for &b in &cfg.timing_batches {
            let set = if o == Objective::Bc {
                &data.corpus.expert
            } else {
                &data.corpus.mixed
            };
            let seconds = time_update(cfg, set, pair, o, b, cfg.timing_repeats, cfg.seed)?;
            rows.push(TimingRow {
                objective: o,
                batch_size: b,
                seconds,
            });
        }
    }
    let mut t = CsvTable::new(&["objective", "batch_size", "seconds_per_update"]);
    for r in &rows {
        t.push(vec![r.objective.to_string(), r.batch_size.to_string(), fmt_f64(r.seconds)]);
    }
    t.write(cfg.out.join("timing.csv"))?;
    Ok(rows)
}

/// Frozen estimators loaded from a training output directory.
pub fn load_estimators(dir: &Path) -> Result<(FrozenEstimator, FrozenEstimator)> {
    let e = crate::vqvae::load_estimator(dir.join("expert.adrw"))?;
    let s = crate::vqvae::load_estimator(dir.join("suboptimal.adrw"))?;
    Ok((e.freeze(), s.freeze()))
}

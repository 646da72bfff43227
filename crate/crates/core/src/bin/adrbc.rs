use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adrbc::config::RunConfig;
use adrbc::pipeline;
use adrbc::verify::{render_report, run_checks, Mutation};
use adrbc::Result;

#[derive(Parser)]
#[command(name = "adrbc", version, about = "Density-weighted behavior cloning from mixed-quality data")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// key = value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Start from the full-size budgets and network widths instead of desk-scale defaults
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate expert, suboptimal and mixed datasets
    GenData,
    /// Write random/expert score references for every environment
    Calibrate,
    /// Train density estimators then the policy
    Train,
    /// Score a trained policy
    Eval,
    /// Compare all objectives under matched seeds
    Ablate {
        /// Time one policy update against batch size instead
        #[arg(long)]
        timing: bool,
    },
    /// Run the invariant checks
    Verify {
        #[arg(long, hide = true)]
        flip_weight_sign: bool,
    },
    /// Print the effective configuration
    ShowConfig,
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if g.paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(p) = &g.config {
        cfg = cfg.load(p)?;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load_config(&cli.global)?;
    match cli.cmd {
        Cmd::GenData => {
            let m = pipeline::cmd_gen_data(&cfg)?;
            println!("wrote {}", m.display());
        }
        Cmd::Calibrate => print!("{}", pipeline::cmd_calibrate(&cfg)?),
        Cmd::Train => println!("{}", pipeline::cmd_train(&cfg)?.summary),
        Cmd::Eval => {
            let s = pipeline::cmd_eval(&cfg)?;
            println!("score {:.2} ± {:.2} over {} episodes", s.mean, s.std, cfg.eval_episodes);
        }
        Cmd::Ablate { timing: true } => {
            for r in pipeline::cmd_timing(&cfg)? {
                println!("{:<15} b={:<5} {:.3e} s/update", r.objective.tag(), r.batch_size, r.seconds);
            }
        }
        Cmd::Ablate { timing: false } => {
            let rows = pipeline::cmd_ablate(&cfg)?;
            for (i, (o, fin, best)) in pipeline::rank(&rows).into_iter().enumerate() {
                println!("{}. {:<15} median final {fin:.2}  median best {best:.2}", i + 1, o.tag());
            }
        }
        Cmd::Verify { flip_weight_sign } => {
            let m = if flip_weight_sign {
                Mutation::FlipWeightSign
            } else {
                Mutation::None
            };
            let results = run_checks(m);
            print!("{}", render_report(&results));
            return Ok(results.iter().all(|r| r.passed));
        }
        Cmd::ShowConfig => print!("{}", cfg.render()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

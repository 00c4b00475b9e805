use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use adagrpo::harness::{
    cmd_ablate, cmd_advantage_check, cmd_eval, cmd_train, write_advantage_csv, ExperimentConfig, HarnessError,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adagrpo", version, about = "Mode-relative policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config. Omit to use the built-in defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set trainer.variant=GRPO_FREE`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for `--set output_dir=PATH`.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(o) = &self.out {
            overrides.push(format!("output_dir={}", toml_string(&o.to_string_lossy())));
        }
        match &self.config {
            Some(path) => ExperimentConfig::load(path, &overrides),
            None => ExperimentConfig::from_toml_str("", &overrides),
        }
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

#[derive(Subcommand)]
enum Command {
    /// Cold start, train, checkpoint and evaluate.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on the config's held-out tasks.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run every variant with and without the curriculum.
    Ablate(ConfigArgs),
    /// Compare the closed-form mode advantage against Monte Carlo.
    AdvantageCheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1_000_000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the per-trial table to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Train(args) => {
            let config = args.load()?;
            let s = cmd_train(&config)?;
            let o = &s.report.overall;
            println!(
                "trained {} iterations ({}); adaptive {:.4} txt {:.4} grd {:.4} upper {:.4} grd% {:.4} -> {}",
                config.trainer.iterations,
                config.trainer.variant,
                o.accuracy_adaptive,
                o.accuracy_txt,
                o.accuracy_grd,
                o.accuracy_upper_bound,
                o.grd_proportion,
                s.output_dir.display()
            );
            Ok(true)
        }
        Command::Eval { checkpoint, config } => {
            let cfg = config.load()?;
            let report = cmd_eval(&checkpoint, &cfg, &cfg.output_dir)?;
            println!("family,tasks,adaptive,txt,grd,upper_bound,grd_proportion");
            for m in report.families.iter().chain([&report.overall]) {
                println!(
                    "{},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
                    m.family,
                    m.tasks,
                    m.accuracy_adaptive,
                    m.accuracy_txt,
                    m.accuracy_grd,
                    m.accuracy_upper_bound,
                    m.grd_proportion
                );
            }
            Ok(true)
        }
        Command::Ablate(args) => {
            let config = args.load()?;
            let rows = cmd_ablate(&config)?;
            for r in rows {
                println!(
                    "{:<28} adaptive {:.4} grd% {:.4} free grd% {:.4}",
                    r.run, r.accuracy_adaptive, r.grd_proportion, r.free_grd_proportion
                );
            }
            Ok(true)
        }
        Command::AdvantageCheck {
            trials,
            draws,
            seed,
            csv,
        } => {
            let report = cmd_advantage_check(trials, draws, seed)?;
            for t in &report.trials {
                println!(
                    "trial {:>3} mu_t {:.4} mu_v {:.4} sigma_t {:.4} sigma_v {:.4} a_v {:.6} mc {:.6} |err| {:.2e} bound {:.2e} {}",
                    t.trial,
                    t.mu_t,
                    t.mu_v,
                    t.sigma_t,
                    t.sigma_v,
                    t.a_v,
                    t.monte_carlo,
                    t.abs_error,
                    t.bound,
                    if t.pass { "PASS" } else { "FAIL" }
                );
            }
            if let Some(path) = csv {
                let file = fs::File::create(&path).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?;
                write_advantage_csv(&report, file).map_err(|source| HarnessError::Io { path, source })?;
            }
            let failed = report.trials.iter().filter(|t| !t.pass).count();
            println!(
                "{}: {}/{} trials within bound ({:.1}s)",
                if report.pass { "PASS" } else { "FAIL" },
                report.trials.len() - failed,
                report.trials.len(),
                report.elapsed_secs
            );
            Ok(report.pass)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(2)
        }
    }
}

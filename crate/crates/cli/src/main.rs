use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mamimo::experiments::{self, ExperimentConfig, Scenario, ValidateOptions};

#[derive(Parser)]
#[command(name = "mamimo", version, about = "Movable-antenna MU-MIMO position optimization and rate evaluation")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Verb {
    /// Optimize antenna positions for one scenario and print layouts and traces as JSON.
    Optimize(Common),
    /// Evaluate every scheme at every sweep point and write the rate CSV.
    Sweep(Common),
    /// Write the per-sweep objective trace of the position optimizers.
    Converge(Common),
    /// Run the consistency checks and write a JSON report.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Scale applied to every MRT curvature bound.
        #[arg(long, default_value_t = 1.0)]
        psi_scale: f64,
        /// Scale applied to every ZF curvature bound.
        #[arg(long, default_value_t = 1.0)]
        xi_scale: f64,
    },
}

const EXIT_FAILED_CHECKS: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load(common: &Common) -> mamimo::Result<(ExperimentConfig, Scenario)> {
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .map_err(|e| mamimo::Error::InvalidConfig(e.to_string()))?;
    }
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
        if config.name.is_none() {
            config.name = Some(format!("s{seed}"));
        }
    }
    let scenario = Scenario::from_config(&config)?;
    std::fs::create_dir_all(&common.out)?;
    Ok((config, scenario))
}

fn output_path(common: &Common, config: &ExperimentConfig, default: &str) -> PathBuf {
    let name = config.output.as_deref().unwrap_or(default);
    if Path::new(name).is_absolute() {
        PathBuf::from(name)
    } else {
        common.out.join(name)
    }
}

fn run(cli: Cli) -> mamimo::Result<ExitCode> {
    match cli.verb {
        Verb::Optimize(common) => {
            let (_, scenario) = load(&common)?;
            let outcomes = experiments::optimize(&scenario)?;
            let json = serde_json::to_string_pretty(&outcomes)?;
            std::fs::write(common.out.join("optimize.json"), &json)?;
            println!("{json}");
        }
        Verb::Sweep(common) => {
            let (config, scenario) = load(&common)?;
            let path = output_path(&common, &config, "sweep.csv");
            let rows = experiments::run(&scenario, &path)?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        Verb::Converge(common) => {
            let (config, scenario) = load(&common)?;
            let path = output_path(&common, &config, "converge.csv");
            let rows = experiments::converge(&scenario, &path)?;
            for r in rows.iter().filter(|r| rows.iter().all(|o| o.scheme != r.scheme || o.iteration <= r.iteration)) {
                eprintln!("{}: {} sweeps, objective {:.6}", r.scheme, r.iteration, r.objective);
            }
            eprintln!("wrote {}", path.display());
        }
        Verb::Validate { common, psi_scale, xi_scale } => {
            let (_, scenario) = load(&common)?;
            let opts = ValidateOptions { psi_scale, xi_scale, ..ValidateOptions::default() };
            let path = common.out.join("validate.json");
            let report = experiments::validate(&scenario, &opts, Some(&path))?;
            for c in &report.checks {
                println!(
                    "{} {:<18} residual {:.3e} (limit {:.3e})  {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.residual,
                    c.threshold,
                    c.detail
                );
            }
            if !report.passed {
                return Ok(ExitCode::from(EXIT_FAILED_CHECKS));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

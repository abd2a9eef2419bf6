use std::path::PathBuf;

use amafqi::oracle::{proposition1_check, DeterministicMdp};
use amafqi::seeding::rng_from_seed;
use amafqi_bench::{output, run_experiment_with_models, work_scaling_report, ExperimentConfig, Method, ModelBundle};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bench", version, about = "Batch multi-agent fitted Q iteration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config and write its reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output_dir.
        #[arg(long, env = amafqi_bench::OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
        /// Skip writing model bundles.
        #[arg(long)]
        no_models: bool,
    },
    /// Print the joint control a saved model picks at a state.
    Act {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        state: usize,
    },
    /// Compare exact tabular distributed and centralized updates on a random
    /// deterministic MDP.
    Prop1 {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        x: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        local_controls: usize,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        #[arg(long, default_value_t = 20)]
        n_max: usize,
    },
    /// Per-iteration evaluation counts against their closed forms.
    Work {
        /// Agent counts to measure.
        #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
        agents: Vec<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(config: PathBuf, output_dir: Option<PathBuf>, no_models: bool) -> Result<()> {
    let mut config = ExperimentConfig::load(&config)?;
    if let Some(dir) = output_dir {
        config.output_dir = dir;
    }
    let (report, bundles) = run_experiment_with_models(&config);
    let bundles = if no_models || !config.save_models {
        Vec::new()
    } else {
        bundles
    };
    let written = output::write_all(&report, &bundles, &config.output_dir)
        .with_context(|| format!("writing results to {}", config.output_dir.display()))?;

    let agg = &report.aggregate;
    println!(
        "{} instances (m={}, X={}, L={}), output in {}",
        report.instances.len(),
        config.m,
        config.n_states,
        config.batch_len,
        config.output_dir.display()
    );
    for s in &agg.methods {
        println!(
            "{:<9} converged {:>3}  iterations {:>7}  cumulative reward {:>9}  gap vs fqi {:>8}",
            s.method.name(),
            s.converged,
            fmt(s.mean_iterations, 1),
            fmt(s.mean_cumulative, 2),
            s.reward_gap_vs_fqi.map(|g| format!("{:.2}%", 100.0 * g)).unwrap_or_else(|| "-".into()),
        );
    }
    for (method, delta) in &agg.delta_mean {
        println!("mean delta ({}): {}", method.name(), delta.map(|d| format!("{:.2}%", 100.0 * d)).unwrap_or_else(|| "-".into()));
    }
    println!("wrote {} tables and {} models", written.tables.len(), written.models.len());
    let failures: Vec<String> = report
        .instances
        .iter()
        .flat_map(|i| i.errors.iter().map(move |e| format!("instance {}: {e}", i.instance)))
        .collect();
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("error: {f}");
        }
        bail!("{} instance(s) reported errors", agg.failed_instances);
    }
    Ok(())
}

fn fmt(v: Option<f64>, digits: usize) -> String {
    v.map(|v| format!("{v:.digits$}")).unwrap_or_else(|| "-".into())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            output_dir,
            no_models,
        } => run(config, output_dir, no_models),
        Command::Act { model, state } => {
            let bundle = ModelBundle::load(&model)?;
            let controls = bundle.act(state)?;
            let joint = bundle.policy.act(state)?;
            println!(
                "{}",
                serde_json::json!({
                    "method": bundle.method.name(),
                    "state": state,
                    "joint_control": joint,
                    "controls": controls,
                })
            );
            Ok(())
        }
        Command::Prop1 {
            m,
            x,
            seed,
            local_controls,
            beta,
            n_max,
        } => {
            if !(0.0..1.0).contains(&beta) {
                bail!("beta {beta} not in [0, 1)");
            }
            let mdp = DeterministicMdp::random(m, x, local_controls, &mut rng_from_seed(seed))?;
            let report = proposition1_check(&mdp, beta, n_max);
            println!("{}", serde_json::to_string(&report)?);
            if !report.holds {
                bail!("distributed and centralized values differ by {:e}", report.max_deviation);
            }
            Ok(())
        }
        Command::Work { agents, config } => {
            let base = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::default(),
            };
            let rows = work_scaling_report(&base, &agents)?;
            println!("m,method,measured,expected,ratio_to_amafqi");
            let mut mismatches = 0;
            for row in &rows {
                let amafqi = rows
                    .iter()
                    .find(|r| r.m == row.m && r.method == Method::Amafqi)
                    .map_or(1, |r| r.measured);
                println!(
                    "{},{},{},{},{:.3}",
                    row.m,
                    row.method.name(),
                    row.measured,
                    row.expected,
                    row.measured as f64 / amafqi as f64
                );
                if !row.matches() {
                    mismatches += 1;
                }
            }
            if mismatches > 0 {
                bail!("{mismatches} count(s) differ from the closed form");
            }
            Ok(())
        }
    }
}

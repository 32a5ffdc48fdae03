use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use uav_alloc::harness::{self, ExperimentConfig, Scale};

/// Joint bandwidth and power allocation for a hovering UAV.
#[derive(Parser)]
#[command(name = "uav-alloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train both agents on one layout and save models, logs and the allocation.
    Train(Common),
    /// Sweep one quantity and record served counts per value and seed.
    Sweep(Common),
    /// Compare joint, bandwidth-only, power-only and equal allocation.
    Compare(Common),
    /// Check the learned pipeline against exhaustive search on small instances.
    Oracle(Common),
    /// Evaluate models saved by `train` on a layout, without training.
    Eval {
        /// Directory written by `train`.
        #[arg(long)]
        model_dir: PathBuf,
        /// Layout seed; defaults to the training seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; keys missing from it come from the scale preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Start from the full-scale preset instead of the desk one.
    #[arg(long)]
    full_scale: bool,
    /// Any config key, dotted, e.g. `--set ddpg.tau=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long)]
    n_users: Option<usize>,
    #[arg(long)]
    n_blocks: Option<usize>,
    /// UAV height, m.
    #[arg(long)]
    height: Option<f64>,
    /// Rate threshold, bit/s.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    total_power: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    mean_gain: Option<f64>,
    #[arg(long)]
    dqn_episodes: Option<usize>,
    #[arg(long)]
    ddpg_episodes: Option<usize>,
    #[arg(long)]
    steps_per_episode: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// threshold, total_bandwidth, height, total_power or fading.
    #[arg(long)]
    sweep_axis: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    sweep_values: Vec<f64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let text = match &self.config {
            Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        let mut over: Vec<(String, String)> = Vec::new();
        if self.full_scale {
            over.push(("scale".into(), "full".into()));
        }
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                over.push((k.into(), v));
            }
        };
        let f = |x: Option<f64>| x.map(|v| format!("{v:?}"));
        put("scenario.n_users", self.n_users.map(|v| v.to_string()));
        put("scenario.n_blocks", self.n_blocks.map(|v| v.to_string()));
        put("scenario.uav_height_m", f(self.height));
        put("scenario.rate_threshold_bps", f(self.threshold));
        put("scenario.total_power", f(self.total_power));
        put("scenario.radius_m", f(self.radius));
        put("scenario.mean_gain", f(self.mean_gain));
        put("dqn.episodes", self.dqn_episodes.map(|v| v.to_string()));
        put("ddpg.episodes", self.ddpg_episodes.map(|v| v.to_string()));
        put("ddpg.steps_per_episode", self.steps_per_episode.map(|v| v.to_string()));
        put("eval.eval_episodes", self.eval_episodes.map(|v| v.to_string()));
        put("sweep.axis", self.sweep_axis.clone());
        if !self.sweep_values.is_empty() {
            let vals: Vec<String> = self.sweep_values.iter().map(|v| format!("{v:?}")).collect();
            put("sweep.values", Some(format!("[{}]", vals.join(", "))));
        }
        put("seeds", self.seed.map(|s| format!("[{s}]")));
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("`--set` expects KEY=VALUE, got `{kv}`");
            };
            over.push((k.trim().into(), v.trim().into()));
        }
        Ok(harness::resolve(text.as_deref(), &over, Scale::Desk)?)
    }

    fn out_dir(&self, verb: &str) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out").join(verb))
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(c) => {
            let cfg = c.resolve()?;
            let dir = c.out_dir("train");
            let r = harness::run_training(&cfg, &dir)?;
            println!(
                "seed {}: joint {} served (equal {}, dqn_only {}); wrote {}",
                r.seed,
                r.run.joint.best.n_s,
                r.run.equal.n_s,
                r.run.dqn_only.n_s,
                dir.display()
            );
        }
        Command::Sweep(c) => {
            let cfg = c.resolve()?;
            let dir = c.out_dir("sweep");
            let r = harness::run_sweep(&cfg, Some(&dir))?;
            for (v, m) in r.values.iter().zip(r.medians()) {
                println!("{} = {v}: median served {m}", r.axis.name());
            }
            println!("wrote {}", dir.display());
        }
        Command::Compare(c) => {
            let cfg = c.resolve()?;
            let dir = c.out_dir("compare");
            let r = harness::run_comparison(&cfg, Some(&dir))?;
            for m in harness::METHODS {
                println!("{m}: median served {}", r.median_n_s(m));
            }
            for (other, reported) in harness::REPORTED_IMPROVEMENT {
                println!(
                    "joint over {other}: {:+.1}% (full-scale report {:+.0}%)",
                    100.0 * r.improvement_over(other),
                    100.0 * reported
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Oracle(c) => {
            let cfg = c.resolve()?;
            let dir = c.out_dir("oracle");
            let rows = harness::run_oracle(&cfg, Some(&dir))?;
            let close = rows.iter().filter(|r| r.joint_n_s + 1 >= r.brute_force_n_s).count();
            println!("joint within one of the optimum on {close}/{} instances; wrote {}", rows.len(), dir.display());
        }
        Command::Eval { model_dir, seed, out_dir } => {
            let saved = harness::load_run(&model_dir)?;
            let layout = seed.unwrap_or(saved.config.seeds[0]);
            let dir = out_dir.unwrap_or_else(|| PathBuf::from("out").join("eval"));
            for (name, a) in harness::run_eval(&saved, layout, Some(&dir))? {
                println!("{name}: {} served, feasible {}", a.n_s, a.feasible);
            }
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}

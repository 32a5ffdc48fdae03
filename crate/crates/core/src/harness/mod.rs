//! Experiment runner: trains agents, runs sweeps and comparisons, and
//! writes models, logs and tidy CSVs.
//!
//! The bandwidth agent depends only on the per-user task (height,
//! threshold, power scale, constants), not on where users stand, so one
//! agent is trained per distinct task and shared by every layout seed.
//! Work items run in parallel; results are gathered in input order, so
//! outputs do not depend on scheduling.

pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, LazyLock, Mutex};

use rayon::prelude::*;

use crate::allocator::{solve_joint, Allocation, JointSolution};
use crate::baselines::{brute_force, ddpg_only, dqn_only, equal_allocation};
use crate::ddpg::{convergence_index, ddpg_train, ActorCritic, BlockSource, DdpgEnv, DdpgTraining};
use crate::dqn::{dqn_train, DqnEpisodeResult, DqnModel, DqnTask};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::seed;

pub use config::{resolve, ExperimentConfig, Scale, ScenarioConfig, SweepAxis};
use output::{num, opt, Table};

/// A trained bandwidth agent with its training log.
pub struct TrainedDqn {
    pub model: DqnModel,
    pub log: Vec<DqnEpisodeResult>,
}

fn dqn_key(task: &DqnTask, cfg: &ExperimentConfig) -> Result<String> {
    let t = toml::to_string(task).map_err(|e| Error::Config(e.to_string()))?;
    let c = toml::to_string(&cfg.dqn).map_err(|e| Error::Config(e.to_string()))?;
    Ok(format!("{t}\n{c}\nseed={}", cfg.dqn_seed()))
}

/// Agents already trained in this process, by task, config and seed.
/// Training is deterministic, so reuse cannot change any output.
static DQN_CACHE: LazyLock<Mutex<BTreeMap<String, Arc<TrainedDqn>>>> = LazyLock::new(Default::default);

/// Trains one agent per distinct task among `scenarios` and returns, for
/// each scenario, the agent that serves it.
pub fn train_dqns(cfg: &ExperimentConfig, scenarios: &[ScenarioConfig]) -> Result<Vec<Arc<TrainedDqn>>> {
    let mut keys = Vec::with_capacity(scenarios.len());
    let mut missing: BTreeMap<String, DqnTask> = BTreeMap::new();
    {
        let cache = DQN_CACHE.lock().expect("dqn cache lock");
        for sc in scenarios {
            let task = DqnTask::from_scenario(&sc.build(cfg.seeds[0])?, &cfg.dqn)?;
            let key = dqn_key(&task, cfg)?;
            if !cache.contains_key(&key) {
                missing.entry(key.clone()).or_insert(task);
            }
            keys.push(key);
        }
    }
    let trained: Vec<(String, Arc<TrainedDqn>)> = missing
        .into_par_iter()
        .map(|(key, task)| {
            let (model, log) = dqn_train(&task, &cfg.dqn, cfg.dqn_seed())?;
            Ok((key, Arc::new(TrainedDqn { model, log })))
        })
        .collect::<Result<_>>()?;
    let mut cache = DQN_CACHE.lock().expect("dqn cache lock");
    cache.extend(trained);
    Ok(keys.iter().map(|k| Arc::clone(&cache[k])).collect())
}

/// Equal split, bandwidth-agent-only and joint results on one layout.
pub struct JointRun {
    pub scenario: Scenario,
    pub equal: Allocation,
    pub dqn_only: Allocation,
    pub joint: JointSolution,
    pub training: DdpgTraining,
    /// Episode from which the episode reward stays settled.
    pub convergence_episode: Option<usize>,
}

fn convergence(cfg: &ExperimentConfig, t: &DdpgTraining) -> Option<usize> {
    let rewards: Vec<f64> = t.episodes.iter().map(|e| e.cumulative_reward).collect();
    let window = cfg.eval.convergence_window.min(rewards.len());
    convergence_index(&rewards, window, cfg.eval.convergence_tolerance)
}

/// Trains the power agent on top of `dqn` for one layout and solves.
pub fn run_joint(cfg: &ExperimentConfig, sc: &ScenarioConfig, layout_seed: u64, dqn: &DqnModel) -> Result<JointRun> {
    let scenario = sc.build(layout_seed)?;
    let env = DdpgEnv::new(&scenario, BlockSource::Dqn(dqn), &cfg.ddpg)?;
    let training = ddpg_train(&env, &cfg.ddpg, layout_seed, seed::tag::DDPG)?;
    let joint = solve_joint(&scenario, dqn, &training.model, &cfg.ddpg, cfg.eval.eval_episodes)?;
    let equal = equal_allocation(&scenario)?;
    let dqn_only = dqn_only(&scenario, dqn)?;
    let convergence_episode = convergence(cfg, &training);
    Ok(JointRun {
        scenario,
        equal,
        dqn_only,
        joint,
        training,
        convergence_episode,
    })
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn dqn_log_table(log: &[DqnEpisodeResult]) -> Table {
    let mut t = Table::new(
        output::SCHEMA_DQN_LOG,
        &["episode", "steps_to_terminal", "final_blocks", "final_reward", "epsilon", "truncated"],
    );
    for r in log {
        t.push(vec![
            r.episode.to_string(),
            r.steps_to_terminal.to_string(),
            r.final_blocks.to_string(),
            num(r.final_reward),
            num(r.epsilon),
            r.truncated.to_string(),
        ]);
    }
    t
}

fn ddpg_tables(tr: &DdpgTraining) -> (Table, Table) {
    let mut steps = Table::new(
        output::SCHEMA_DDPG_STEPS,
        &["episode", "step", "n_s", "sum_power", "sum_blocks", "penalty", "reward"],
    );
    for s in &tr.steps {
        steps.push(vec![
            s.episode.to_string(),
            s.step.to_string(),
            s.n_s.to_string(),
            num(s.sum_power),
            s.sum_blocks.to_string(),
            num(s.penalty),
            num(s.reward),
        ]);
    }
    let mut eps = Table::new(
        output::SCHEMA_DDPG_EPISODES,
        &["episode", "cumulative_reward", "final_n_s", "best_feasible_n_s", "mean_critic_loss", "updates"],
    );
    for e in &tr.episodes {
        eps.push(vec![
            e.episode.to_string(),
            num(e.cumulative_reward),
            e.final_n_s.to_string(),
            e.best_feasible_n_s.to_string(),
            num(e.mean_critic_loss),
            e.updates.to_string(),
        ]);
    }
    (steps, eps)
}

const METHOD_HEADER: [&str; 7] = ["seed", "method", "n_s", "sum_power", "sum_blocks", "feasible", "violations"];

fn method_row(seed: u64, method: &str, a: &Allocation) -> Vec<String> {
    vec![
        seed.to_string(),
        method.to_string(),
        a.n_s.to_string(),
        num(a.sum_power()),
        a.sum_blocks().to_string(),
        a.feasible.to_string(),
        a.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
    ]
}

/// Summary of a `train` run.
pub struct TrainReport {
    pub seed: u64,
    pub run: JointRun,
    pub dqn: Arc<TrainedDqn>,
}

/// Trains both agents for the first seed and writes models, logs, the
/// best joint allocation and a manifest into `out_dir`.
pub fn run_training(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let dqn = train_dqns(cfg, std::slice::from_ref(&cfg.scenario))?.remove(0);
    let run = run_joint(cfg, &cfg.scenario, seed, &dqn.model)?;

    prepare_dir(out_dir)?;
    write_config(out_dir, cfg)?;
    dqn.model.save(fs::File::create(out_dir.join("dqn_model.txt"))?)?;
    run.training.model.save(fs::File::create(out_dir.join("ddpg_model.txt"))?)?;
    dqn_log_table(&dqn.log).write(&out_dir.join("dqn_log.csv"))?;
    let (steps, eps) = ddpg_tables(&run.training);
    steps.write(&out_dir.join("ddpg_steps.csv"))?;
    eps.write(&out_dir.join("ddpg_episodes.csv"))?;
    output::allocation_table(&run.scenario, &run.joint.best).write(&out_dir.join("allocation.csv"))?;
    let mut methods = Table::new(output::SCHEMA_METHODS, &METHOD_HEADER);
    methods.push(method_row(seed, "equal", &run.equal));
    methods.push(method_row(seed, "dqn_only", &run.dqn_only));
    methods.push(method_row(seed, "joint", &run.joint.best));
    methods.push(method_row(seed, "joint_final", &run.joint.final_state));
    methods.write(&out_dir.join("methods.csv"))?;
    output::write_manifest(
        out_dir,
        "train",
        &[seed],
        &cfg.hash()?,
        &[
            "config.toml",
            "dqn_model.txt",
            "ddpg_model.txt",
            "dqn_log.csv",
            "ddpg_steps.csv",
            "ddpg_episodes.csv",
            "allocation.csv",
            "methods.csv",
        ],
    )?;
    Ok(TrainReport { seed, run, dqn })
}

/// One sweep observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub equal_n_s: usize,
    pub dqn_only_n_s: usize,
    pub best_n_s: usize,
    pub final_n_s: usize,
    pub final_feasible: bool,
    pub convergence_episode: Option<usize>,
}

pub struct SweepReport {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Median best served count at each swept value, in sweep order.
    pub fn medians(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|v| median(self.rows.iter().filter(|r| r.value == *v).map(|r| r.best_n_s as f64)))
            .collect()
    }
}

pub fn median(xs: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = xs.collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// One row per (value, seed) for the configured axis.
pub fn run_sweep(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<SweepReport> {
    cfg.validate()?;
    let (axis, values) = cfg.sweep_values()?;
    let scenarios: Vec<ScenarioConfig> = values
        .iter()
        .map(|&v| cfg.scenario.with_axis(axis, v))
        .collect::<Result<_>>()?;
    let dqns = train_dqns(cfg, &scenarios)?;
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let run = run_joint(cfg, &scenarios[i], seed, &dqns[i].model)?;
            Ok(SweepRow {
                value: values[i],
                seed,
                equal_n_s: run.equal.n_s,
                dqn_only_n_s: run.dqn_only.n_s,
                best_n_s: run.joint.best.n_s,
                final_n_s: run.joint.final_state.n_s,
                final_feasible: run.joint.final_state.feasible,
                convergence_episode: run.convergence_episode,
            })
        })
        .collect::<Result<_>>()?;
    let report = SweepReport { axis, values, rows };

    if let Some(dir) = out_dir {
        prepare_dir(dir)?;
        write_config(dir, cfg)?;
        let mut t = Table::new(
            output::SCHEMA_SWEEP,
            &[
                "axis",
                "value",
                "seed",
                "equal_n_s",
                "dqn_only_n_s",
                "best_n_s",
                "final_n_s",
                "final_feasible",
                "convergence_episode",
            ],
        );
        for r in &report.rows {
            t.push(vec![
                axis.name().into(),
                num(r.value),
                r.seed.to_string(),
                r.equal_n_s.to_string(),
                r.dqn_only_n_s.to_string(),
                r.best_n_s.to_string(),
                r.final_n_s.to_string(),
                r.final_feasible.to_string(),
                opt(r.convergence_episode),
            ]);
        }
        t.write(&dir.join("sweep.csv"))?;
        let mut s = Table::new(output::SCHEMA_SWEEP_SUMMARY, &["axis", "value", "median_best_n_s"]);
        for (v, m) in report.values.iter().zip(report.medians()) {
            s.push(vec![axis.name().into(), num(*v), num(m)]);
        }
        s.write(&dir.join("sweep_summary.csv"))?;
        output::write_manifest(
            dir,
            "sweep",
            &cfg.seeds,
            &cfg.hash()?,
            &["config.toml", "sweep.csv", "sweep_summary.csv"],
        )?;
    }
    Ok(report)
}

pub const METHODS: [&str; 4] = ["joint", "dqn_only", "ddpg_only", "equal"];

/// Relative improvements reported at full scale, for side-by-side display.
pub const REPORTED_IMPROVEMENT: [(&str, f64); 3] = [("equal", 0.41), ("ddpg_only", 0.29), ("dqn_only", 0.19)];

pub struct ComparisonReport {
    pub seeds: Vec<u64>,
    /// `allocations[method][seed index]`, methods in [`METHODS`] order.
    pub allocations: Vec<Vec<Allocation>>,
}

impl ComparisonReport {
    pub fn median_n_s(&self, method: &str) -> f64 {
        let i = METHODS.iter().position(|m| *m == method).expect("known method");
        median(self.allocations[i].iter().map(|a| a.n_s as f64))
    }

    /// `median(joint)/median(other) − 1`.
    pub fn improvement_over(&self, other: &str) -> f64 {
        self.median_n_s("joint") / self.median_n_s(other) - 1.0
    }

    /// Median ordering joint ≥ dqn_only ≥ equal and joint ≥ ddpg_only ≥ equal.
    pub fn ordering_holds(&self) -> bool {
        let m = |k| self.median_n_s(k);
        m("joint") >= m("dqn_only") && m("dqn_only") >= m("equal") && m("joint") >= m("ddpg_only") && m("ddpg_only") >= m("equal")
    }
}

/// All four methods on every seed's layout.
pub fn run_comparison(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ComparisonReport> {
    cfg.validate()?;
    let dqn = train_dqns(cfg, std::slice::from_ref(&cfg.scenario))?.remove(0);
    let per_seed: Vec<[Allocation; 4]> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = run_joint(cfg, &cfg.scenario, seed, &dqn.model)?;
            let (only, _) = ddpg_only(&run.scenario, &cfg.ddpg, seed)?;
            Ok([run.joint.best, run.dqn_only, only.best, run.equal])
        })
        .collect::<Result<_>>()?;
    let allocations = (0..METHODS.len())
        .map(|m| per_seed.iter().map(|row| row[m].clone()).collect())
        .collect();
    let report = ComparisonReport {
        seeds: cfg.seeds.clone(),
        allocations,
    };

    if let Some(dir) = out_dir {
        prepare_dir(dir)?;
        write_config(dir, cfg)?;
        let mut t = Table::new(output::SCHEMA_COMPARISON, &METHOD_HEADER);
        for (j, &seed) in report.seeds.iter().enumerate() {
            for (m, name) in METHODS.iter().enumerate() {
                t.push(method_row(seed, name, &report.allocations[m][j]));
            }
        }
        t.write(&dir.join("comparison.csv"))?;
        let mut s = Table::new(output::SCHEMA_COMPARISON_SUMMARY, &["metric", "measured", "reported_full_scale"]);
        for name in METHODS {
            s.push(vec![format!("median_n_s_{name}"), num(report.median_n_s(name)), String::new()]);
        }
        for (other, reported) in REPORTED_IMPROVEMENT {
            s.push(vec![
                format!("joint_over_{other}"),
                num(report.improvement_over(other)),
                num(reported),
            ]);
        }
        s.push(vec![
            "ordering_holds".into(),
            report.ordering_holds().to_string(),
            String::new(),
        ]);
        s.write(&dir.join("comparison_summary.csv"))?;
        output::write_manifest(
            dir,
            "compare",
            &cfg.seeds,
            &cfg.hash()?,
            &["config.toml", "comparison.csv", "comparison_summary.csv"],
        )?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub layout_seed: u64,
    pub brute_force_n_s: usize,
    pub joint_n_s: usize,
    pub dqn_only_n_s: usize,
    pub equal_n_s: usize,
    pub joint_feasible: bool,
}

/// Small tight instances solved exactly and by the learned pipeline.
/// Layout seeds are `seeds[0]·1000 + k` for `k < oracle.n_scenarios`.
pub fn run_oracle(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<OracleRow>> {
    cfg.validate()?;
    let sc = ScenarioConfig {
        n_users: cfg.oracle.n_users,
        n_blocks: cfg.oracle.n_blocks,
        ..cfg.scenario.clone()
    };
    // The agent's block range stays that of the main scenario.
    let dqn = train_dqns(cfg, std::slice::from_ref(&cfg.scenario))?.remove(0);
    let base = cfg.seeds[0].wrapping_mul(1000);
    let rows: Vec<OracleRow> = (0..cfg.oracle.n_scenarios as u64)
        .into_par_iter()
        .map(|k| {
            let layout_seed = base + k;
            let run = run_joint(cfg, &sc, layout_seed, &dqn.model)?;
            let bf = brute_force(&run.scenario, cfg.oracle.power_grid, cfg.oracle.n_users)?;
            Ok(OracleRow {
                layout_seed,
                brute_force_n_s: bf.n_s,
                joint_n_s: run.joint.best.n_s,
                dqn_only_n_s: run.dqn_only.n_s,
                equal_n_s: run.equal.n_s,
                joint_feasible: run.joint.best.feasible,
            })
        })
        .collect::<Result<_>>()?;

    if let Some(dir) = out_dir {
        prepare_dir(dir)?;
        write_config(dir, cfg)?;
        let mut t = Table::new(
            output::SCHEMA_ORACLE,
            &[
                "layout_seed",
                "n_users",
                "brute_force_n_s",
                "joint_n_s",
                "dqn_only_n_s",
                "equal_n_s",
                "within_one",
            ],
        );
        for r in &rows {
            t.push(vec![
                r.layout_seed.to_string(),
                cfg.oracle.n_users.to_string(),
                r.brute_force_n_s.to_string(),
                r.joint_n_s.to_string(),
                r.dqn_only_n_s.to_string(),
                r.equal_n_s.to_string(),
                (r.joint_n_s + 1 >= r.brute_force_n_s).to_string(),
            ]);
        }
        t.write(&dir.join("oracle.csv"))?;
        output::write_manifest(dir, "oracle", &cfg.seeds, &cfg.hash()?, &["config.toml", "oracle.csv"])?;
    }
    Ok(rows)
}

/// Models and config saved by [`run_training`].
pub struct SavedRun {
    pub config: ExperimentConfig,
    pub dqn: DqnModel,
    pub ddpg: ActorCritic,
}

pub fn load_run(dir: &Path) -> Result<SavedRun> {
    let text = fs::read_to_string(dir.join("config.toml"))?;
    let config: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    let open = |name: &str| -> Result<std::io::BufReader<fs::File>> { Ok(std::io::BufReader::new(fs::File::open(dir.join(name))?)) };
    let dqn = DqnModel::load(open("dqn_model.txt")?)?;
    let ddpg = ActorCritic::load(open("ddpg_model.txt")?)?;
    if ddpg.n_users() != config.scenario.n_users {
        return Err(Error::Format("power model does not match the configured user count".into()));
    }
    Ok(SavedRun { config, dqn, ddpg })
}

/// Evaluates saved models on the layout of `layout_seed` without training.
pub fn run_eval(saved: &SavedRun, layout_seed: u64, out_dir: Option<&Path>) -> Result<Vec<(String, Allocation)>> {
    let cfg = &saved.config;
    let scenario = cfg.scenario.build(layout_seed)?;
    let joint = solve_joint(&scenario, &saved.dqn, &saved.ddpg, &cfg.ddpg, cfg.eval.eval_episodes)?;
    let out = vec![
        ("joint".to_string(), joint.best.clone()),
        ("joint_final".to_string(), joint.final_state),
        ("dqn_only".to_string(), dqn_only(&scenario, &saved.dqn)?),
        ("equal".to_string(), equal_allocation(&scenario)?),
    ];
    if let Some(dir) = out_dir {
        prepare_dir(dir)?;
        let mut t = Table::new(output::SCHEMA_METHODS, &METHOD_HEADER);
        for (name, a) in &out {
            t.push(method_row(layout_seed, name, a));
        }
        t.write(&dir.join("eval.csv"))?;
        output::allocation_table(&scenario, &joint.best).write(&dir.join("allocation.csv"))?;
    }
    Ok(out)
}

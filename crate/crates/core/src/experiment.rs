//! Subcommands behind the `isgc-alloc` binary: train, oracle and compare.
//! Each writes CSVs plus a manifest into an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::diffusion::DiffusionPolicy;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, CheckpointKind};
use crate::oracle;
use crate::pipeline::STATE_FIELDS;
use crate::ppo::{self, GaussianActor, PpoPolicy};
use crate::report::{self, fmt_g9, Csv, RunManifest};
use crate::scenario;
use crate::trainer::{
    self, DiffusionActor, Env, EvalReport, EvalSet, OraclePolicy, Policy, TrainingCurve,
};

pub const CURVE_FILE: &str = "curve.csv";
pub const ACTOR_FILE: &str = "actor.ckpt";
pub const CRITIC1_FILE: &str = "critic1.ckpt";
pub const CRITIC2_FILE: &str = "critic2.ckpt";
pub const VALUE_FILE: &str = "value.ckpt";
pub const CONFIG_FILE: &str = "config.cfg";
pub const ORACLE_FILE: &str = "oracle.csv";
pub const ORACLE_SUMMARY_FILE: &str = "oracle_summary.csv";
pub const COMPARE_STATES_FILE: &str = "compare_states.csv";
pub const COMPARE_SUMMARY_FILE: &str = "compare_summary.csv";
pub const COMPARE_CURVE_FILE: &str = "compare_curve.csv";

/// Run-directory value that stands for the oracle itself in `compare`.
pub const ORACLE_RUN: &str = "oracle";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Diffusion,
    Ppo,
}

impl Algo {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::Diffusion => "diffusion",
            Algo::Ppo => "ppo",
        }
    }
}

/// Process exit code for an error: 2 config, 3 I/O, 4 missing or unreadable artifact, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } | Error::UnknownKey { .. } | Error::Validation(_) => 2,
        Error::Io(_) => 3,
        Error::MissingCheckpoint(_) | Error::CorruptCheckpoint(_) => 4,
        _ => 1,
    }
}

/// What a training run produced.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub curve: TrainingCurve,
    pub final_eval: Option<EvalReport>,
    pub files: Vec<&'static str>,
}

/// Trains one algorithm for one seed and writes its artifacts under `out`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    algo: Algo,
    seed: u64,
    out: &Path,
) -> Result<TrainSummary> {
    cmd_train_with_eval(cfg, algo, seed, out, None)
}

/// [`cmd_train`] reusing a precomputed evaluation set.
pub fn cmd_train_with_eval(
    cfg: &ExperimentConfig,
    algo: Algo,
    seed: u64,
    out: &Path,
    eval: Option<&EvalSet>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let started = report::unix_now();
    fs::create_dir_all(out)?;
    let (curve, final_eval, files) = match algo {
        Algo::Diffusion => {
            let mut t = cfg.diffusion.clone();
            t.seed = seed;
            let o = trainer::train_with_eval(&t, &cfg.consts, &cfg.dist, eval)?;
            o.actor.to_checkpoint().save(&out.join(ACTOR_FILE))?;
            Checkpoint::net(o.critics[0].clone()).save(&out.join(CRITIC1_FILE))?;
            Checkpoint::net(o.critics[1].clone()).save(&out.join(CRITIC2_FILE))?;
            (
                o.curve,
                o.final_eval,
                vec![
                    CURVE_FILE,
                    ACTOR_FILE,
                    CRITIC1_FILE,
                    CRITIC2_FILE,
                    CONFIG_FILE,
                ],
            )
        }
        Algo::Ppo => {
            let mut t = cfg.ppo.clone();
            t.seed = seed;
            let o = ppo::train_ppo_with_eval(&t, &cfg.ppo_extra, &cfg.consts, &cfg.dist, eval)?;
            o.actor.to_checkpoint().save(&out.join(ACTOR_FILE))?;
            Checkpoint::net(o.value.clone()).save(&out.join(VALUE_FILE))?;
            (
                o.curve,
                o.final_eval,
                vec![CURVE_FILE, ACTOR_FILE, VALUE_FILE, CONFIG_FILE],
            )
        }
    };
    report::curve_csv(&curve).write(&out.join(CURVE_FILE))?;
    report::write_atomic(&out.join(CONFIG_FILE), cfg.serialize().as_bytes())?;
    let mut m = RunManifest::new(&format!("train {}", algo.as_str()), cfg, seed, started);
    m.add_files(out, &files)?;
    m.finish(out)?;
    Ok(TrainSummary {
        curve,
        final_eval,
        files,
    })
}

/// Oracle results for `n_states` states drawn from `seed`.
pub fn cmd_oracle(
    cfg: &ExperimentConfig,
    n_states: usize,
    seed: u64,
    resolution: usize,
    out: &Path,
) -> Result<oracle::BatchOracle> {
    cfg.validate()?;
    if resolution < 2 {
        return Err(Error::Validation(format!(
            "resolution must be >= 2, got {resolution}"
        )));
    }
    let started = report::unix_now();
    fs::create_dir_all(out)?;
    let states = scenario::state_stream(seed, n_states, &cfg.dist);
    let batch = oracle::batch_oracle(&states, &cfg.consts, resolution)?;

    let mut header = vec!["index".to_string()];
    header.extend(STATE_FIELDS.iter().map(|s| s.to_string()));
    header.extend(["w_sem", "w_aigc", "w_render", "utility_star", "feasible"].map(String::from));
    let mut csv = Csv::new(&header);
    for (k, (s, r)) in states.iter().zip(&batch.per_state).enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(s.to_array().iter().map(|v| fmt_g9(*v)));
        row.extend(r.alloc.to_array().iter().map(|v| fmt_g9(*v)));
        row.push(fmt_g9(r.utility_star));
        row.push(u8::from(r.feasible).to_string());
        csv.push(row);
    }
    csv.write(&out.join(ORACLE_FILE))?;

    let mut summary = Csv::new(&[
        "n_states",
        "resolution",
        "mean_utility",
        "feasible_mean_utility",
        "infeasible_count",
    ]);
    summary.push(vec![
        n_states.to_string(),
        resolution.to_string(),
        fmt_g9(batch.mean_utility),
        fmt_g9(batch.feasible_mean_utility),
        batch.infeasible_count.to_string(),
    ]);
    summary.write(&out.join(ORACLE_SUMMARY_FILE))?;

    let mut m = RunManifest::new("oracle", cfg, seed, started);
    m.add_files(out, &[ORACLE_FILE, ORACLE_SUMMARY_FILE])?;
    m.finish(out)?;
    Ok(batch)
}

/// A policy restored from a run directory, or the oracle stand-in.
pub enum LoadedPolicy {
    Diffusion(DiffusionActor),
    Gaussian(PpoPolicy),
    Oracle(OraclePolicy),
}

impl Policy for LoadedPolicy {
    fn act(
        &mut self,
        states: &[crate::pipeline::EnvState],
        norm: ndarray::ArrayView2<f64>,
        stream: &mut scenario::SeededStream,
        explore: bool,
    ) -> Result<Vec<trainer::Decision>> {
        match self {
            LoadedPolicy::Diffusion(p) => p.act(states, norm, stream, explore),
            LoadedPolicy::Gaussian(p) => p.act(states, norm, stream, explore),
            LoadedPolicy::Oracle(p) => p.act(states, norm, stream, explore),
        }
    }
}

/// Loads `actor.ckpt` from `run`; the literal `oracle` yields the oracle policy.
pub fn load_policy(run: &Path, cfg: &ExperimentConfig, resolution: usize) -> Result<LoadedPolicy> {
    if run == Path::new(ORACLE_RUN) {
        return Ok(LoadedPolicy::Oracle(OraclePolicy {
            consts: cfg.consts,
            resolution,
        }));
    }
    let ckpt = Checkpoint::load(&run.join(ACTOR_FILE))?;
    Ok(match ckpt.kind {
        CheckpointKind::Diffusion => LoadedPolicy::Diffusion(DiffusionActor {
            policy: DiffusionPolicy::from_checkpoint(ckpt)?,
            explore_std: 0.0,
            consts: cfg.consts,
        }),
        CheckpointKind::GaussianActor => LoadedPolicy::Gaussian(PpoPolicy {
            actor: GaussianActor::from_checkpoint(ckpt)?,
            consts: cfg.consts,
        }),
        CheckpointKind::Net => {
            return Err(Error::CorruptCheckpoint(format!(
                "{} holds a plain network, not a policy",
                run.join(ACTOR_FILE).display()
            )))
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub diffusion: EvalReport,
    pub ppo: EvalReport,
    /// Oracle mean over the states where a feasible point exists.
    pub oracle_mean_utility: f64,
    pub oracle_infeasible: usize,
    /// `(D - P) / |P|` on mean reward.
    pub reward_gap: f64,
}

/// Relative gap `(d - p) / |p|`; zero when both are equal.
pub fn relative_gap(d: f64, p: f64) -> f64 {
    if d == p {
        0.0
    } else {
        (d - p) / p.abs()
    }
}

/// Evaluates two trained runs on the same states against the oracle.
pub fn cmd_compare(
    cfg: &ExperimentConfig,
    diffusion_run: &Path,
    ppo_run: &Path,
    n_states: usize,
    seed: u64,
    resolution: usize,
    out: &Path,
) -> Result<CompareSummary> {
    cfg.validate()?;
    let started = report::unix_now();
    let mut d = load_policy(diffusion_run, cfg, resolution)?;
    let mut p = load_policy(ppo_run, cfg, resolution)?;
    fs::create_dir_all(out)?;
    let env = Env::new(cfg.consts, cfg.dist);
    let set = EvalSet::new(&env, n_states, seed, resolution)?;
    let rd = trainer::evaluate(&mut d, &set, &cfg.consts)?;
    let rp = trainer::evaluate(&mut p, &set, &cfg.consts)?;

    let mut csv = Csv::new(&[
        "index",
        "utility_oracle",
        "utility_diffusion",
        "utility_ppo",
        "ratio_diffusion",
        "ratio_ppo",
        "reward_diffusion",
        "reward_ppo",
    ]);
    for (k, o) in set.oracle.per_state.iter().enumerate() {
        csv.push(vec![
            k.to_string(),
            fmt_g9(o.utility_star),
            fmt_g9(rd.per_state_utility[k]),
            fmt_g9(rp.per_state_utility[k]),
            fmt_g9(rd.per_state_utility[k] / o.utility_star),
            fmt_g9(rp.per_state_utility[k] / o.utility_star),
            fmt_g9(rd.per_state_reward[k]),
            fmt_g9(rp.per_state_reward[k]),
        ]);
    }
    csv.write(&out.join(COMPARE_STATES_FILE))?;

    let gap = relative_gap(rd.mean_reward, rp.mean_reward);
    let mut summary = Csv::new(&[
        "n_states",
        "oracle_infeasible",
        "oracle_mean_utility",
        "diffusion_mean_utility",
        "ppo_mean_utility",
        "diffusion_oracle_ratio",
        "ppo_oracle_ratio",
        "diffusion_mean_reward",
        "ppo_mean_reward",
        "reward_gap",
    ]);
    summary.push(vec![
        n_states.to_string(),
        set.oracle.infeasible_count.to_string(),
        fmt_g9(set.oracle.feasible_mean_utility),
        fmt_g9(rd.mean_utility),
        fmt_g9(rp.mean_utility),
        fmt_g9(rd.oracle_ratio),
        fmt_g9(rp.oracle_ratio),
        fmt_g9(rd.mean_reward),
        fmt_g9(rp.mean_reward),
        fmt_g9(gap),
    ]);
    summary.write(&out.join(COMPARE_SUMMARY_FILE))?;

    let mut files = vec![COMPARE_STATES_FILE, COMPARE_SUMMARY_FILE];
    if let (Some(cd), Some(cp)) = (run_curve(diffusion_run)?, run_curve(ppo_run)?) {
        merged_curve(&cd, &cp).write(&out.join(COMPARE_CURVE_FILE))?;
        files.push(COMPARE_CURVE_FILE);
    }
    let mut m = RunManifest::new("compare", cfg, seed, started);
    m.add_files(out, &files)?;
    m.finish(out)?;
    Ok(CompareSummary {
        oracle_mean_utility: set.oracle.feasible_mean_utility,
        oracle_infeasible: set.oracle.infeasible_count,
        diffusion: rd,
        ppo: rp,
        reward_gap: gap,
    })
}

fn run_curve(run: &Path) -> Result<Option<TrainingCurve>> {
    let path: PathBuf = run.join(CURVE_FILE);
    if run == Path::new(ORACLE_RUN) || !path.exists() {
        return Ok(None);
    }
    report::read_curve(&path).map(Some)
}

/// Epoch-aligned curves of both runs; missing epochs are left as `nan`.
pub fn merged_curve(d: &TrainingCurve, p: &TrainingCurve) -> Csv {
    let mut csv = Csv::new(&[
        "epoch",
        "diffusion_mean_reward",
        "ppo_mean_reward",
        "diffusion_mean_utility",
        "ppo_mean_utility",
    ]);
    let n = d.rows.len().max(p.rows.len());
    let pick = |c: &TrainingCurve, k: usize, f: fn(&trainer::CurveRow) -> f64| {
        c.rows.get(k).map(f).unwrap_or(f64::NAN)
    };
    for k in 0..n {
        csv.push(vec![
            (k + 1).to_string(),
            fmt_g9(pick(d, k, |r| r.mean_reward)),
            fmt_g9(pick(p, k, |r| r.mean_reward)),
            fmt_g9(pick(d, k, |r| r.mean_utility)),
            fmt_g9(pick(p, k, |r| r.mean_utility)),
        ]);
    }
    csv
}

//! Experiment configuration in a flat `key = value` format with dotted
//! section prefixes. `#` starts a comment; blank lines are ignored.
//!
//! ```text
//! preset = desk
//! seeds = 1, 2, 3
//! consts.t_max = 5
//! dist.h_sem.kind = uniform
//! dist.h_sem.p1 = 1
//! diffusion.epochs = 300
//! ppo.clip_eps = 0.2
//! ```
//!
//! The preset picks the base training settings; every other key overrides it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::diffusion::ClipGradient;
use crate::error::{Error, Result};
use crate::pipeline::{PipelineConstants, STATE_FIELDS};
use crate::ppo::PpoConfig;
use crate::scenario::{DistConfig, DistKind};
use crate::trainer::{RewardShape, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Preset::Desk),
            "paper" => Some(Preset::Paper),
            _ => None,
        }
    }

    pub fn diffusion(&self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::paper(),
        }
    }

    pub fn ppo(&self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::ppo_desk(),
            Preset::Paper => TrainConfig::ppo_paper(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub consts: PipelineConstants,
    pub dist: DistConfig,
    pub diffusion: TrainConfig,
    pub ppo: TrainConfig,
    pub ppo_extra: PpoConfig,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn with_preset(preset: Preset) -> Self {
        ExperimentConfig {
            preset,
            consts: PipelineConstants::default(),
            dist: DistConfig::default(),
            diffusion: preset.diffusion(),
            ppo: preset.ppo(),
            ppo_extra: PpoConfig::default(),
            out_dir: PathBuf::from("runs"),
            seeds: vec![1, 2, 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.consts.validate()?;
        self.dist.validate()?;
        self.diffusion.validate()?;
        self.ppo.validate()?;
        self.ppo_extra.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Validation(
                "seeds must list at least one seed".into(),
            ));
        }
        Ok(())
    }

    /// Canonical text form listing every key; parses back to an equal config.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("preset", self.preset.as_str().into());
        kv("out_dir", self.out_dir.display().to_string());
        kv("seeds", join(&self.seeds));
        for (name, v) in self.consts.fields() {
            kv(&format!("consts.{name}"), v.to_string());
        }
        for (name, d) in STATE_FIELDS.iter().zip(&self.dist.dims) {
            kv(&format!("dist.{name}.kind"), d.kind.as_str().into());
            kv(&format!("dist.{name}.p1"), d.p1.to_string());
            kv(&format!("dist.{name}.p2"), d.p2.to_string());
        }
        for (section, t) in [("diffusion", &self.diffusion), ("ppo", &self.ppo)] {
            for (k, v) in train_fields(t) {
                kv(&format!("{section}.{k}"), v);
            }
        }
        let p = &self.ppo_extra;
        kv("ppo.clip_eps", p.clip_eps.to_string());
        kv("ppo.inner_epochs", p.inner_epochs.to_string());
        kv("ppo.minibatch", p.minibatch.to_string());
        kv("ppo.ent_coef", p.ent_coef.to_string());
        kv("ppo.log_std_init", p.log_std_init.to_string());
        s
    }

    /// SHA-256 of the canonical serialization, hex encoded. The output
    /// directory is left out since it never changes results.
    pub fn hash(&self) -> String {
        let text = self.serialize();
        let body: String = text
            .lines()
            .filter(|l| !l.starts_with("out_dir ="))
            .map(|l| format!("{l}\n"))
            .collect();
        hex(&Sha256::digest(body.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn train_fields(t: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("epochs", t.epochs.to_string()),
        ("steps_per_epoch", t.steps_per_epoch.to_string()),
        ("steps_per_collect", t.steps_per_collect.to_string()),
        ("buffer_capacity", t.buffer_capacity.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("gamma", t.gamma.to_string()),
        ("tau", t.tau.to_string()),
        ("lr_actor", t.lr_actor.to_string()),
        ("lr_critic", t.lr_critic.to_string()),
        ("explore_std", t.explore_std.to_string()),
        ("eval_states", t.eval_states.to_string()),
        ("eval_seed", t.eval_seed.to_string()),
        ("diffusion_steps", t.diffusion_steps.to_string()),
        ("beta_min", t.beta_min.to_string()),
        ("beta_max", t.beta_max.to_string()),
        ("actor_hidden", join(&t.actor_hidden)),
        ("critic_hidden", join(&t.critic_hidden)),
        ("reward_scale", t.reward_scale.to_string()),
        ("reward_shape", t.reward_shape.as_str().into()),
        ("oracle_resolution", t.oracle_resolution.to_string()),
        ("clip_gradient", t.clip_gradient.as_str().into()),
    ]
}

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>()
        .map_err(|_| format!("cannot parse {v:?} as a number"))
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',').map(|x| parse_num(x.trim())).collect()
}

fn parse_enum<T>(v: &str, f: fn(&str) -> Option<T>, what: &str) -> std::result::Result<T, String> {
    f(v).ok_or_else(|| format!("unknown {what} {v:?}"))
}

/// `Ok(false)` when the key is not a training key.
fn set_train_field(t: &mut TrainConfig, key: &str, v: &str) -> std::result::Result<bool, String> {
    match key {
        "epochs" => t.epochs = parse_num(v)?,
        "steps_per_epoch" => t.steps_per_epoch = parse_num(v)?,
        "steps_per_collect" => t.steps_per_collect = parse_num(v)?,
        "buffer_capacity" => t.buffer_capacity = parse_num(v)?,
        "batch_size" => t.batch_size = parse_num(v)?,
        "gamma" => t.gamma = parse_num(v)?,
        "tau" => t.tau = parse_num(v)?,
        "lr_actor" => t.lr_actor = parse_num(v)?,
        "lr_critic" => t.lr_critic = parse_num(v)?,
        "explore_std" => t.explore_std = parse_num(v)?,
        "eval_states" => t.eval_states = parse_num(v)?,
        "eval_seed" => t.eval_seed = parse_num(v)?,
        "diffusion_steps" => t.diffusion_steps = parse_num(v)?,
        "beta_min" => t.beta_min = parse_num(v)?,
        "beta_max" => t.beta_max = parse_num(v)?,
        "actor_hidden" => t.actor_hidden = parse_list(v)?,
        "critic_hidden" => t.critic_hidden = parse_list(v)?,
        "reward_scale" => t.reward_scale = parse_num(v)?,
        "reward_shape" => t.reward_shape = parse_enum(v, RewardShape::parse, "reward shape")?,
        "oracle_resolution" => t.oracle_resolution = parse_num(v)?,
        "clip_gradient" => {
            t.clip_gradient = parse_enum(v, ClipGradient::parse, "clip gradient mode")?
        }
        _ => return Ok(false),
    }
    Ok(true)
}

/// `Ok(false)` when the key is unknown.
fn apply(cfg: &mut ExperimentConfig, key: &str, v: &str) -> std::result::Result<bool, String> {
    if key == "preset" {
        // resolved before the other keys
        return Ok(true);
    }
    if key == "out_dir" {
        cfg.out_dir = PathBuf::from(v);
        return Ok(true);
    }
    if key == "seeds" {
        cfg.seeds = parse_list(v)?;
        return Ok(true);
    }
    let Some((section, rest)) = key.split_once('.') else {
        return Ok(false);
    };
    match section {
        "consts" => match cfg.consts.field_mut(rest) {
            Some(f) => *f = parse_num(v)?,
            None => return Ok(false),
        },
        "dist" => {
            let Some((field, param)) = rest.split_once('.') else {
                return Ok(false);
            };
            let Some(d) = cfg.dist.dim_mut(field) else {
                return Ok(false);
            };
            match param {
                "kind" => d.kind = parse_enum(v, DistKind::parse, "distribution kind")?,
                "p1" => d.p1 = parse_num(v)?,
                "p2" => d.p2 = parse_num(v)?,
                _ => return Ok(false),
            }
        }
        "diffusion" => return set_train_field(&mut cfg.diffusion, rest, v),
        "ppo" => {
            let p = &mut cfg.ppo_extra;
            match rest {
                "clip_eps" => p.clip_eps = parse_num(v)?,
                "inner_epochs" => p.inner_epochs = parse_num(v)?,
                "minibatch" => p.minibatch = parse_num(v)?,
                "ent_coef" => p.ent_coef = parse_num(v)?,
                "log_std_init" => p.log_std_init = parse_num(v)?,
                _ => return set_train_field(&mut cfg.ppo, rest, v),
            }
        }
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses config text; `preset` overrides any preset named in the text.
///
/// `path` is only used in error messages.
pub fn parse_str(text: &str, path: &Path, preset: Option<Preset>) -> Result<ExperimentConfig> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut entries: Vec<(usize, &str, &str)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(parse_err(
                line,
                format!("expected `key = value`, got {content:?}"),
            ));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(parse_err(line, "empty key".into()));
        }
        if v.is_empty() {
            return Err(parse_err(line, format!("missing value for {k}")));
        }
        if let Some((first, _, _)) = entries.iter().find(|(_, key, _)| *key == k) {
            return Err(parse_err(
                line,
                format!("duplicate key {k} (first set on line {first})"),
            ));
        }
        entries.push((line, k, v));
    }

    let file_preset = match entries.iter().find(|(_, k, _)| *k == "preset") {
        Some((line, _, v)) => Some(
            Preset::parse(v).ok_or_else(|| parse_err(*line, format!("unknown preset {v:?}")))?,
        ),
        None => None,
    };
    let mut cfg = ExperimentConfig::with_preset(preset.or(file_preset).unwrap_or_default());
    for (line, k, v) in entries {
        match apply(&mut cfg, k, v) {
            Ok(true) => {}
            Ok(false) => {
                return Err(Error::UnknownKey {
                    path: path.display().to_string(),
                    line,
                    key: k.to_string(),
                })
            }
            Err(msg) => return Err(parse_err(line, msg)),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config file.
pub fn parse_config(path: &Path, preset: Option<Preset>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_str(&text, path, preset)
}

//! Flat `key = value` overrides of [`LearnerConfig`] fields.

use churn_lab::learners::{AfterConvergence, Algorithm, LearnerConfig, TargetRule, DEFAULT_GAP_COEFFICIENT};
use churn_lab::nn::{LrSchedule, OptimizerKind};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum OverrideValue {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<OverrideValue>),
}

impl OverrideValue {
    fn kind(&self) -> &'static str {
        match self {
            Self::Null => "null",
            Self::Bool(_) => "boolean",
            Self::Int(_) => "integer",
            Self::Float(_) => "number",
            Self::Str(_) => "string",
            Self::List(_) => "list",
        }
    }
}

/// Every settable key, in the order overrides are applied. Keys that refine
/// another (for example `opt_eps` after `optimizer`) come later.
pub const OVERRIDE_KEYS: [&str; 25] = [
    "algorithm",
    "target",
    "gap_coefficient",
    "after",
    "trainable_layers",
    "optimizer",
    "opt_eps",
    "rms_decay",
    "adam_beta1",
    "adam_beta2",
    "lr",
    "lr_end",
    "anneal_steps",
    "batch_size",
    "replay_capacity",
    "epsilon",
    "hidden",
    "acting_interval",
    "target_interval",
    "episode_budget",
    "eval_every_episodes",
    "post_horizon_factor",
    "min_post_horizon",
    "interval_ks",
    "record_switches",
];

/// Steps of the annealing schedule when only its end point is given.
pub const DEFAULT_ANNEAL_STEPS: u64 = 10_000;

fn fail(key: &str, reason: impl Into<String>) -> HarnessError {
    HarnessError::Override { key: key.to_string(), reason: reason.into() }
}

fn float(key: &str, v: &OverrideValue) -> Result<f64> {
    match v {
        OverrideValue::Float(x) => Ok(*x),
        OverrideValue::Int(i) => Ok(*i as f64),
        other => Err(fail(key, format!("expected a number, found {}", other.kind()))),
    }
}

fn uint(key: &str, v: &OverrideValue) -> Result<u64> {
    match v {
        OverrideValue::Int(i) if *i >= 0 => Ok(*i as u64),
        OverrideValue::Int(i) => Err(fail(key, format!("expected a non-negative integer, found {i}"))),
        other => Err(fail(key, format!("expected an integer, found {}", other.kind()))),
    }
}

fn text<'a>(key: &str, v: &'a OverrideValue) -> Result<&'a str> {
    match v {
        OverrideValue::Str(s) => Ok(s),
        other => Err(fail(key, format!("expected a string, found {}", other.kind()))),
    }
}

fn uint_list(key: &str, v: &OverrideValue) -> Result<Vec<usize>> {
    match v {
        OverrideValue::List(items) => items.iter().map(|i| uint(key, i).map(|x| x as usize)).collect(),
        other => Err(fail(key, format!("expected a list of integers, found {}", other.kind()))),
    }
}

/// Applies one override; the config is not re-validated.
pub fn apply_override(config: &mut LearnerConfig<f64>, key: &str, value: &OverrideValue) -> Result<()> {
    match key {
        "algorithm" => {
            config.algorithm = match text(key, value)? {
                "tabular" => Algorithm::Tabular,
                "online-mlp" => Algorithm::OnlineMlp,
                "regress-qstar" => Algorithm::RegressQStar,
                "clone-pistar" => Algorithm::ClonePiStar,
                "replay" => Algorithm::Replay,
                other => return Err(fail(key, format!("unknown algorithm `{other}`"))),
            }
        }
        "target" => {
            config.target = match text(key, value)? {
                "ql" => TargetRule::QLearning,
                "mc" => TargetRule::MonteCarlo,
                "al" => match config.target {
                    TargetRule::Advantage { gap_coefficient } => TargetRule::Advantage { gap_coefficient },
                    _ => TargetRule::Advantage { gap_coefficient: DEFAULT_GAP_COEFFICIENT },
                },
                other => return Err(fail(key, format!("unknown target `{other}` (ql, al, mc)"))),
            }
        }
        "gap_coefficient" => config.target = TargetRule::Advantage { gap_coefficient: float(key, value)? },
        "after" => {
            config.after = match text(key, value)? {
                "continue" => AfterConvergence::Continue,
                "stationary" => AfterConvergence::StationaryData,
                "freeze" => match config.after {
                    AfterConvergence::FreezeLayers { trainable } => AfterConvergence::FreezeLayers { trainable },
                    _ => AfterConvergence::FreezeLayers { trainable: 1 },
                },
                other => return Err(fail(key, format!("unknown mode `{other}` (continue, stationary, freeze)"))),
            }
        }
        "trainable_layers" => config.after = AfterConvergence::FreezeLayers { trainable: uint(key, value)? as usize },
        "optimizer" => {
            let wanted = text(key, value)?;
            if wanted != config.optimizer.name() {
                config.optimizer = match wanted {
                    "sgd" => OptimizerKind::Sgd,
                    "rmsprop" => OptimizerKind::rmsprop(1e-5),
                    "adam" => OptimizerKind::adam(1e-8),
                    other => return Err(fail(key, format!("unknown optimizer `{other}` (sgd, rmsprop, adam)"))),
                };
            }
        }
        "opt_eps" => match &mut config.optimizer {
            OptimizerKind::RmsProp { epsilon, .. } | OptimizerKind::Adam { epsilon, .. } => *epsilon = float(key, value)?,
            OptimizerKind::Sgd => return Err(fail(key, "sgd has no epsilon")),
        },
        "rms_decay" => match &mut config.optimizer {
            OptimizerKind::RmsProp { decay, .. } => *decay = float(key, value)?,
            _ => return Err(fail(key, "only rmsprop has a decay")),
        },
        "adam_beta1" | "adam_beta2" => match &mut config.optimizer {
            OptimizerKind::Adam { beta1, beta2, .. } => *(if key == "adam_beta1" { beta1 } else { beta2 }) = float(key, value)?,
            _ => return Err(fail(key, "only adam has betas")),
        },
        "lr" => {
            let eta = float(key, value)?;
            match &mut config.schedule {
                LrSchedule::Constant(c) => *c = eta,
                LrSchedule::LogLinear { start, .. } => *start = eta,
            }
        }
        "lr_end" | "anneal_steps" => {
            if let LrSchedule::Constant(c) = config.schedule {
                config.schedule = LrSchedule::LogLinear { start: c, end: c, steps: DEFAULT_ANNEAL_STEPS };
            }
            if let LrSchedule::LogLinear { end, steps, .. } = &mut config.schedule {
                if key == "lr_end" {
                    *end = float(key, value)?;
                } else {
                    *steps = uint(key, value)?;
                }
            }
        }
        "batch_size" => config.batch_size = uint(key, value)? as usize,
        "replay_capacity" => config.replay_capacity = uint(key, value)? as usize,
        "epsilon" => config.epsilon = float(key, value)?,
        "hidden" => config.hidden = uint_list(key, value)?,
        "acting_interval" => config.acting_interval = uint(key, value)?,
        "target_interval" => {
            config.target_interval = match value {
                OverrideValue::Null => None,
                v => Some(uint(key, v)?),
            }
        }
        "episode_budget" => config.episode_budget = uint(key, value)? as usize,
        "eval_every_episodes" => config.eval_every_episodes = uint(key, value)? as usize,
        "post_horizon_factor" => config.post_horizon_factor = uint(key, value)?,
        "min_post_horizon" => config.min_post_horizon = uint(key, value)?,
        "interval_ks" => config.interval_ks = uint_list(key, value)?,
        "record_switches" => match value {
            OverrideValue::Bool(b) => config.record_switches = *b,
            other => return Err(fail(key, format!("expected a boolean, found {}", other.kind()))),
        },
        other => return Err(fail(other, "unknown key")),
    }
    Ok(())
}

/// Applies all overrides in [`OVERRIDE_KEYS`] order, then validates.
pub fn apply_overrides<'a>(
    config: &mut LearnerConfig<f64>,
    overrides: impl IntoIterator<Item = (&'a str, &'a OverrideValue)>,
) -> Result<()> {
    let mut items: Vec<(&str, &OverrideValue)> = overrides.into_iter().collect();
    if let Some((k, _)) = items.iter().find(|(k, _)| !OVERRIDE_KEYS.contains(k)) {
        return Err(fail(k, "unknown key"));
    }
    items.sort_by_key(|(k, _)| OVERRIDE_KEYS.iter().position(|o| o == k));
    for (k, v) in items {
        apply_override(config, k, v)?;
    }
    config.validate().map_err(|e| HarnessError::Invalid(e.to_string()))
}

//! Built-in experiment suites and their cells.

use churn_lab::learners::{AfterConvergence, Algorithm, LearnerConfig, TargetRule, Variant, DEFAULT_GAP_COEFFICIENT};
use churn_lab::nn::{LrSchedule, OptimizerKind};

use crate::{HarnessError, Result};

/// Environment a learner cell trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Env {
    Catch { rows: usize, cols: usize },
    /// With `mapped`, each seed draws its own cell-wise action mapping.
    DeepSea { depth: usize, mapped: bool },
}

/// Model a DP cell solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DpEnv {
    Catch { rows: usize, cols: usize },
    FourRooms { size: usize, discount: f64 },
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum CellKind {
    Learner { env: Env, config: LearnerConfig<f64> },
    ValueIteration { env: DpEnv },
    PolicyIteration { env: DpEnv },
    /// Single jump from the uniform policy to the greedy optimal policy.
    Oracle { env: DpEnv },
    /// Tabular updates on the two-armed bandit, alternating arms.
    Bandit { q_init: [f64; 2], q_target: [f64; 2], alpha: f64, updates: usize },
    /// Iterated evaluation on the chain model from the all-red policy.
    ChainDemo { arm_length: usize, steps: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub label: String,
    pub kind: CellKind,
}

impl Cell {
    fn learner(label: &str, env: Env, config: LearnerConfig<f64>) -> Self {
        Self { label: label.into(), kind: CellKind::Learner { env, config } }
    }

    /// Stable `key=value` description; learning rate, batch size and replay
    /// capacity come first.
    pub fn params(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        match &self.kind {
            CellKind::Learner { env, config } => {
                match config.schedule {
                    LrSchedule::Constant(eta) => put("lr", eta.to_string()),
                    LrSchedule::LogLinear { start, end, steps } => {
                        put("lr", start.to_string());
                        put("lr_end", end.to_string());
                        put("anneal_steps", steps.to_string());
                    }
                }
                put("batch", config.batch_size.to_string());
                if config.algorithm == Algorithm::Replay {
                    put("replay", config.replay_capacity.to_string());
                }
                put("algorithm", algorithm_name(config.algorithm).into());
                if config.algorithm != Algorithm::Tabular {
                    put("optimizer", config.optimizer.name().into());
                    match config.optimizer {
                        OptimizerKind::Sgd => {}
                        OptimizerKind::RmsProp { decay, epsilon } => {
                            put("opt_eps", epsilon.to_string());
                            put("rms_decay", decay.to_string());
                        }
                        OptimizerKind::Adam { beta1, beta2, epsilon } => {
                            put("opt_eps", epsilon.to_string());
                            put("adam_beta1", beta1.to_string());
                            put("adam_beta2", beta2.to_string());
                        }
                    }
                    put("hidden", hidden_string(&config.hidden));
                }
                put("epsilon", config.epsilon.to_string());
                match config.target {
                    TargetRule::QLearning => put("target", "ql".into()),
                    TargetRule::MonteCarlo => put("target", "mc".into()),
                    TargetRule::Advantage { gap_coefficient } => {
                        put("target", "al".into());
                        put("gap_coefficient", gap_coefficient.to_string());
                    }
                }
                match config.after {
                    AfterConvergence::Continue => {}
                    AfterConvergence::StationaryData => put("after", "stationary".into()),
                    AfterConvergence::FreezeLayers { trainable } => {
                        put("after", "freeze".into());
                        put("trainable_layers", trainable.to_string());
                    }
                }
                if config.acting_interval != 1 {
                    put("acting_interval", config.acting_interval.to_string());
                }
                if let Some(ti) = config.target_interval {
                    put("target_interval", ti.to_string());
                }
                put("env", env_string(env));
            }
            CellKind::ValueIteration { env } | CellKind::PolicyIteration { env } | CellKind::Oracle { env } => {
                put("env", dp_env_string(env));
            }
            CellKind::Bandit { q_init, q_target, alpha, updates } => {
                put("lr", alpha.to_string());
                put("batch", "1".into());
                put("q_init", format!("{}x{}", q_init[0], q_init[1]));
                put("q_target", format!("{}x{}", q_target[0], q_target[1]));
                put("updates", updates.to_string());
            }
            CellKind::ChainDemo { arm_length, steps } => {
                put("arm_length", arm_length.to_string());
                put("steps", steps.to_string());
            }
        }
        out
    }
}

pub fn algorithm_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Tabular => "tabular",
        Algorithm::OnlineMlp => "online-mlp",
        Algorithm::RegressQStar => "regress-qstar",
        Algorithm::ClonePiStar => "clone-pistar",
        Algorithm::Replay => "replay",
    }
}

pub fn hidden_string(hidden: &[usize]) -> String {
    hidden.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn env_string(env: &Env) -> String {
    match env {
        Env::Catch { rows, cols } => format!("catch-{rows}x{cols}"),
        Env::DeepSea { depth, mapped: false } => format!("deepsea-{depth}"),
        Env::DeepSea { depth, mapped: true } => format!("deepsea-{depth}-mapped"),
    }
}

fn dp_env_string(env: &DpEnv) -> String {
    match env {
        DpEnv::Catch { rows, cols } => format!("catch-{rows}x{cols}"),
        DpEnv::FourRooms { size, discount } => format!("fourrooms-{size}-g{discount}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub id: String,
    pub cells: Vec<Cell>,
    /// Whether runs of this suite emit per-state churn maps.
    pub per_state: bool,
}

impl Suite {
    pub fn cell(&self, label: &str) -> Result<&Cell> {
        self.cells
            .iter()
            .find(|c| c.label == label)
            .ok_or_else(|| HarnessError::Invalid(format!("suite {} has no cell {label}", self.id)))
    }
}

pub const SUITE_IDS: [&str; 10] = [
    "catch-spectrum",
    "catch-width",
    "catch-cloning",
    "catch-annealing",
    "catch-perstate",
    "catch-ablations",
    "dp-gridworld",
    "bandit-churn",
    "chain-oscillation",
    "deepsea-exploration",
];

pub const CATCH: Env = Env::Catch { rows: 10, cols: 5 };
pub const DP_CATCH: DpEnv = DpEnv::Catch { rows: 10, cols: 5 };
pub const FOUR_ROOMS: DpEnv = DpEnv::FourRooms { size: 16, discount: 0.97 };
pub const DEEP_SEA: Env = Env::DeepSea { depth: 10, mapped: true };

/// Step size of the documented bandit configuration.
pub const BANDIT_ALPHA: f64 = 0.001;

fn dqn() -> LearnerConfig<f64> {
    Variant::DqnRmsProp.config()
}

pub fn all_suites() -> Vec<Suite> {
    SUITE_IDS.iter().map(|id| suite(id).expect("built-in suite")).collect()
}

pub fn suite(id: &str) -> Result<Suite> {
    let mut per_state = false;
    let cells = match id {
        "catch-spectrum" => {
            let mut cells = vec![Cell { label: "value-iteration".into(), kind: CellKind::ValueIteration { env: DP_CATCH } }];
            for v in [
                Variant::TabularQ,
                Variant::MlpQ1,
                Variant::RegressQStar,
                Variant::MlpQ3,
                Variant::DqnRmsProp,
                Variant::DqnSgd,
                Variant::DqnAdam,
            ] {
                cells.push(Cell::learner(v.tag(), CATCH, v.config()));
            }
            cells
        }
        "catch-width" => {
            let mut cells = Vec::new();
            for width in [50, 200] {
                let mut c = Variant::MlpQ3.config::<f64>();
                c.hidden = vec![width; 3];
                cells.push(Cell::learner(&format!("mlp-ql-3layer-w{width}"), CATCH, c));
                let mut c = dqn();
                c.hidden = vec![width; 3];
                cells.push(Cell::learner(&format!("dqn-like-w{width}"), CATCH, c));
            }
            cells
        }
        "catch-cloning" => vec![Cell::learner(Variant::ClonePiStar.tag(), CATCH, Variant::ClonePiStar.config())],
        "catch-annealing" => {
            let mut annealed = dqn();
            annealed.schedule = LrSchedule::LogLinear { start: 1e-3, end: 1e-4, steps: 10_000 };
            vec![Cell::learner("dqn-like-constant", CATCH, dqn()), Cell::learner("dqn-like-annealed", CATCH, annealed)]
        }
        "catch-perstate" => {
            per_state = true;
            let mut c = dqn();
            c.record_switches = true;
            c.post_horizon_factor = 3;
            vec![Cell::learner("dqn-like-rmsprop", CATCH, c)]
        }
        "catch-ablations" => {
            let mut al = dqn();
            al.target = TargetRule::Advantage { gap_coefficient: DEFAULT_GAP_COEFFICIENT };
            let mut stationary = dqn();
            stationary.after = AfterConvergence::StationaryData;
            let mut mc = dqn();
            mc.target = TargetRule::MonteCarlo;
            let mut frozen = dqn();
            frozen.after = AfterConvergence::FreezeLayers { trainable: 1 };
            let mut cells = vec![
                Cell::learner("ql", CATCH, dqn()),
                Cell::learner("al", CATCH, al),
                Cell::learner("stationary-data", CATCH, stationary),
                Cell::learner("mc-target", CATCH, mc),
                Cell::learner("frozen-linear", CATCH, frozen),
            ];
            for interval in [1, 10, 100, 1000] {
                let mut c = dqn();
                c.acting_interval = interval;
                cells.push(Cell::learner(&format!("acting-{interval}"), CATCH, c));
            }
            cells
        }
        "dp-gridworld" => vec![
            Cell { label: "value-iteration".into(), kind: CellKind::ValueIteration { env: FOUR_ROOMS } },
            Cell { label: "policy-iteration".into(), kind: CellKind::PolicyIteration { env: FOUR_ROOMS } },
            Cell { label: "oracle".into(), kind: CellKind::Oracle { env: FOUR_ROOMS } },
        ],
        "bandit-churn" => vec![Cell {
            label: "tabular-alternating".into(),
            kind: CellKind::Bandit { q_init: [0.0, 0.001], q_target: [10.0, 10.001], alpha: BANDIT_ALPHA, updates: 1000 },
        }],
        "chain-oscillation" => {
            vec![Cell { label: "evaluation-demo".into(), kind: CellKind::ChainDemo { arm_length: 2, steps: 50 } }]
        }
        "deepsea-exploration" => {
            let mut cells = Vec::new();
            for (eps_label, eps) in [("eps0.1", 0.1), ("eps0", 0.0)] {
                for interval in [1u64, 1000] {
                    let mut c = dqn();
                    c.epsilon = eps;
                    c.acting_interval = interval;
                    c.episode_budget = DEEP_SEA_EPISODES;
                    c.min_post_horizon = 0;
                    c.post_horizon_factor = 0;
                    cells.push(Cell::learner(&format!("{eps_label}-act{interval}"), DEEP_SEA, c));
                }
            }
            cells
        }
        other => return Err(HarnessError::UnknownSuite(other.to_string())),
    };
    Ok(Suite { id: id.to_string(), cells, per_state })
}

/// Note written into the summary of suites that are small-scale stand-ins
/// rather than reproductions.
pub fn suite_note(id: &str) -> Option<&'static str> {
    match id {
        "catch-ablations" | "deepsea-exploration" => Some("desk-scale analog; not a reproduction of the large-scale ablation"),
        _ => None,
    }
}

/// Episode budget on DeepSea; a solved run stops at detection.
pub const DEEP_SEA_EPISODES: usize = 2000;

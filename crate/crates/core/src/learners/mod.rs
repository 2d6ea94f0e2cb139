//! Incremental value learners on tabular tasks: tabular and neural
//! Q-learning, supervised regression and cloning against DP solutions, and a
//! replay-based learner with target-rule and post-convergence ablations.

mod replay;
mod train;

pub use replay::ReplayBuffer;
pub use train::{train_variant, RunResult};

use rand::Rng;

use crate::dp;
use crate::error::{Error, Result};
use crate::mdp::{ObservationCodec, TabularMdp};
use crate::nn::{LrSchedule, OptimizerKind};
use crate::policy::{argmax_first, QTable};
use crate::scalar::Scalar;

/// One environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<S> {
    pub state: usize,
    pub action: usize,
    pub reward: S,
    pub next_state: usize,
    pub terminal: bool,
}

/// Environment plus the exact solution learners are scored against.
#[derive(Debug, Clone)]
pub struct Task<S> {
    pub mdp: TabularMdp<S>,
    pub codec: ObservationCodec<S>,
    /// States over which churn and gaps are measured.
    pub decision_states: Vec<usize>,
    pub q_star: QTable<S>,
    /// `(start state, v*(start))` for every state with initial mass.
    pub start_values: Vec<(usize, S)>,
}

impl<S: Scalar> Task<S> {
    /// Solves the model by value iteration. The model must be episodic.
    pub fn new(mdp: TabularMdp<S>, codec: ObservationCodec<S>) -> Result<Self> {
        if !mdp.is_episodic_dag() {
            return Err(Error::InvalidModel("learning tasks must be episodic".into()));
        }
        if codec.num_states() != mdp.num_states() {
            return Err(Error::Shape("codec and model disagree on state count".into()));
        }
        let trace = dp::value_iteration(&mdp, S::zero(), crate::policy::TieMode::Share)?;
        let q_star = trace.final_q().clone();
        let start_values = mdp.start_states().into_iter().map(|s| (s, q_star.state_value(s))).collect();
        let decision_states = mdp.reachable_decision_states();
        Ok(Self { mdp, codec, decision_states, q_star, start_values })
    }

    pub fn catch(rows: usize, cols: usize) -> Result<Self> {
        let c = crate::mdp::Catch::new(rows, cols)?;
        Self::new(c.mdp, c.codec)
    }

    /// DeepSea task; `mapping_seed` selects a cell-wise random action mapping.
    pub fn deep_sea(depth: usize, mapping_seed: Option<u64>) -> Result<Self> {
        let d = match mapping_seed {
            Some(seed) => crate::mdp::DeepSea::with_action_map(depth, seed)?,
            None => crate::mdp::DeepSea::new(depth)?,
        };
        Self::new(d.mdp, d.codec)
    }

    pub fn num_actions(&self) -> usize {
        self.mdp.num_actions()
    }
}

/// Exact state values of a deterministic policy on an episodic model, by
/// repeated sweeps in descending state order.
pub fn deterministic_values<S: Scalar>(mdp: &TabularMdp<S>, actions: &[usize]) -> Vec<S> {
    let n = mdp.num_states();
    let mut v = vec![S::zero(); n];
    // An episodic DAG settles after at most `n` sweeps; stop at a fixed point.
    for _ in 0..n {
        let mut changed = false;
        for s in (0..n).rev() {
            if mdp.is_terminal(s) {
                continue;
            }
            let a = actions[s];
            let cont: S = mdp.successors(s, a).iter().map(|&(next, p)| p * v[next]).sum();
            let value = mdp.reward(s, a) + mdp.discount() * cont;
            if value != v[s] {
                v[s] = value;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    v
}

/// Tolerance on returns when comparing against `v*`.
pub const RETURN_TOLERANCE: f64 = 1e-6;

/// True iff the deterministic greedy policy `actions` (one per state)
/// attains the optimal return from every start state. On deterministic
/// models this is the same as every evaluation episode scoring the maximum.
pub fn detect_convergence<S: Scalar>(task: &Task<S>, actions: &[usize]) -> bool {
    let v = deterministic_values(&task.mdp, actions);
    task.start_values.iter().all(|&(s, best)| v[s] >= best - S::lit(RETURN_TOLERANCE))
}

/// Expected greedy return from the initial distribution.
pub fn greedy_return<S: Scalar>(mdp: &TabularMdp<S>, actions: &[usize]) -> S {
    let v = deterministic_values(mdp, actions);
    mdp.initial_distribution().iter().zip(&v).map(|(&p, &x)| p * x).sum()
}

/// In-place tabular Q-learning update
/// `q(s,a) += alpha * (r + gamma (1 - done) max q(s', .) - q(s,a))`.
pub fn tabular_q_step<S: Scalar>(q: &mut QTable<S>, t: &Transition<S>, alpha: S, gamma: S) {
    let target = if t.terminal { t.reward } else { t.reward + gamma * q.state_value(t.next_state) };
    let old = q.get(t.state, t.action);
    q.set(t.state, t.action, old + alpha * (target - old));
}

/// How a regression target is formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetMode<'a, S> {
    QLearning,
    /// Q-learning target minus `gap_coefficient * (max_b q(s, b) - q(s, a))`.
    Advantage { gap_coefficient: S },
    /// Realized discounted return-to-go.
    MonteCarlo(Option<S>),
    /// Exact `q*(s, a)`.
    QStar(Option<&'a QTable<S>>),
}

/// Regression target for `t`. `next_values` are reference action values at
/// `t.next_state` and `state_values` at `t.state`; either may be empty when
/// the mode does not read it.
pub fn compute_target<S: Scalar>(
    t: &Transition<S>,
    next_values: &[S],
    state_values: &[S],
    gamma: S,
    mode: TargetMode<'_, S>,
) -> Result<S> {
    let bootstrap = |vals: &[S]| -> Result<S> {
        if t.terminal {
            return Ok(t.reward);
        }
        if vals.is_empty() {
            return Err(Error::Missing("next-state values".into()));
        }
        Ok(t.reward + gamma * vals.iter().copied().fold(S::neg_infinity(), S::max))
    };
    match mode {
        TargetMode::QLearning => bootstrap(next_values),
        TargetMode::Advantage { gap_coefficient } => {
            if state_values.len() <= t.action {
                return Err(Error::Missing("current-state values".into()));
            }
            let best = state_values.iter().copied().fold(S::neg_infinity(), S::max);
            Ok(bootstrap(next_values)? - gap_coefficient * (best - state_values[t.action]))
        }
        TargetMode::MonteCarlo(ret) => ret.ok_or_else(|| Error::Missing("episode return".into())),
        TargetMode::QStar(table) => {
            table.map(|q| q.get(t.state, t.action)).ok_or_else(|| Error::Missing("q* table".into()))
        }
    }
}

/// Epsilon-greedy action on `values`: uniform with probability `epsilon`,
/// otherwise the first maximiser. Draws no randomness when `epsilon == 0`.
pub fn act<S: Scalar, R: Rng + ?Sized>(values: &[S], epsilon: S, rng: &mut R) -> usize {
    if epsilon > S::zero() && rng.gen::<f64>() < epsilon.as_f64() {
        rng.gen_range(0..values.len())
    } else {
        argmax_first(values)
    }
}

/// Which learner produces the value estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Q-table updated on each transition.
    Tabular,
    /// MLP updated on each transition (batch of one).
    OnlineMlp,
    /// MLP regressed onto `q*` on visited pairs.
    RegressQStar,
    /// MLP trained with cross-entropy towards `pi*` on visited states.
    ClonePiStar,
    /// MLP trained on uniform minibatches from a replay buffer.
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetRule<S> {
    QLearning,
    Advantage { gap_coefficient: S },
    MonteCarlo,
}

/// What changes once convergence is detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfterConvergence {
    Continue,
    /// Behaviour policy frozen at the converged acting network.
    StationaryData,
    /// Only the top `trainable` layers keep learning.
    FreezeLayers { trainable: usize },
}

/// Complete hyperparameter set for one learner.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig<S> {
    pub algorithm: Algorithm,
    pub target: TargetRule<S>,
    pub after: AfterConvergence,
    pub schedule: LrSchedule<S>,
    pub optimizer: OptimizerKind<S>,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub epsilon: S,
    pub hidden: Vec<usize>,
    /// Updates between copies of the online network into the acting network.
    pub acting_interval: u64,
    /// Updates between target-network refreshes; `None` bootstraps from the
    /// online network.
    pub target_interval: Option<u64>,
    pub episode_budget: usize,
    pub eval_every_episodes: usize,
    /// Post-convergence horizon is `max(factor * P, min_post_horizon)`.
    pub post_horizon_factor: u64,
    pub min_post_horizon: u64,
    /// Look-back distances for interval change.
    pub interval_ks: Vec<usize>,
    /// Keep `(update, state)` for every argmax switch.
    pub record_switches: bool,
}

/// Named presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    TabularQ,
    MlpQ1,
    RegressQStar,
    MlpQ3,
    DqnRmsProp,
    DqnSgd,
    DqnAdam,
    ClonePiStar,
}

/// Default coefficient of the advantage-learning target.
pub const DEFAULT_GAP_COEFFICIENT: f64 = 0.9;

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::TabularQ,
        Variant::MlpQ1,
        Variant::RegressQStar,
        Variant::MlpQ3,
        Variant::DqnRmsProp,
        Variant::DqnSgd,
        Variant::DqnAdam,
        Variant::ClonePiStar,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Self::TabularQ => "tabular-ql",
            Self::MlpQ1 => "mlp-ql-1layer",
            Self::RegressQStar => "regress-qstar",
            Self::MlpQ3 => "mlp-ql-3layer",
            Self::DqnRmsProp => "dqn-like-rmsprop",
            Self::DqnSgd => "dqn-like-sgd",
            Self::DqnAdam => "dqn-like-adam",
            Self::ClonePiStar => "clone-pistar",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.tag() == tag)
    }

    pub fn config<S: Scalar>(self) -> LearnerConfig<S> {
        let mut c = LearnerConfig::<S>::base();
        let dqn = |c: &mut LearnerConfig<S>, lr: f64, opt: OptimizerKind<S>| {
            c.algorithm = Algorithm::Replay;
            c.schedule = LrSchedule::Constant(S::lit(lr));
            c.optimizer = opt;
            c.batch_size = 32;
            c.hidden = vec![25; 3];
        };
        match self {
            Self::TabularQ => {
                c.algorithm = Algorithm::Tabular;
                c.hidden = Vec::new();
            }
            Self::MlpQ1 => c.algorithm = Algorithm::OnlineMlp,
            Self::RegressQStar => c.algorithm = Algorithm::RegressQStar,
            Self::MlpQ3 => {
                c.algorithm = Algorithm::OnlineMlp;
                c.hidden = vec![25; 3];
            }
            Self::ClonePiStar => c.algorithm = Algorithm::ClonePiStar,
            Self::DqnRmsProp => dqn(&mut c, 1e-3, OptimizerKind::rmsprop(S::lit(1e-5))),
            Self::DqnSgd => dqn(&mut c, 1e-2, OptimizerKind::Sgd),
            Self::DqnAdam => dqn(&mut c, 1e-3, OptimizerKind::adam(S::lit(1e-8))),
        }
        c
    }
}

impl<S: Scalar> LearnerConfig<S> {
    /// One-hidden-layer SGD learner, batch 1, learning rate 0.1.
    pub fn base() -> Self {
        Self {
            algorithm: Algorithm::OnlineMlp,
            target: TargetRule::QLearning,
            after: AfterConvergence::Continue,
            schedule: LrSchedule::Constant(S::lit(0.1)),
            optimizer: OptimizerKind::Sgd,
            batch_size: 1,
            replay_capacity: 1000,
            epsilon: S::lit(0.1),
            hidden: vec![25],
            acting_interval: 1,
            target_interval: None,
            episode_budget: 5000,
            eval_every_episodes: 100,
            post_horizon_factor: 1,
            min_post_horizon: 1000,
            interval_ks: vec![10, 100],
            record_switches: false,
        }
    }

    pub fn learning_rate(&self) -> S {
        self.schedule.rate(0)
    }

    pub fn uses_network(&self) -> bool {
        self.algorithm != Algorithm::Tabular
    }

    /// Rejects inconsistent combinations before any training happens.
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.epsilon >= S::zero() && self.epsilon <= S::one()) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if self.batch_size == 0 || self.acting_interval == 0 || self.target_interval == Some(0) {
            return Err(Error::Config("batch size and intervals must be >= 1".into()));
        }
        if self.episode_budget == 0 || self.eval_every_episodes == 0 {
            return Err(Error::Config("episode budget and evaluation period must be >= 1".into()));
        }
        if self.interval_ks.contains(&0) {
            return Err(Error::Config("interval k must be >= 1".into()));
        }
        match self.algorithm {
            Algorithm::Replay => {
                if self.replay_capacity < self.batch_size {
                    return Err(Error::Config("replay capacity smaller than batch size".into()));
                }
            }
            _ if self.batch_size != 1 => {
                return Err(Error::Config(format!("{:?} learns online; batch size must be 1", self.algorithm)));
            }
            _ => {}
        }
        if self.target == TargetRule::MonteCarlo && self.algorithm != Algorithm::Replay {
            return Err(Error::Config("Monte-Carlo targets need the replay learner".into()));
        }
        if matches!(self.algorithm, Algorithm::RegressQStar | Algorithm::ClonePiStar) && self.target != TargetRule::QLearning {
            return Err(Error::Config("supervised learners take no target rule".into()));
        }
        if self.algorithm == Algorithm::Tabular {
            if !matches!(self.optimizer, OptimizerKind::Sgd) {
                return Err(Error::Config("tabular learner has no optimizer".into()));
            }
            if self.after != AfterConvergence::Continue || self.acting_interval != 1 || self.target_interval.is_some() {
                return Err(Error::Config("tabular learner supports no network ablations".into()));
            }
        }
        if let AfterConvergence::FreezeLayers { trainable } = self.after {
            if trainable == 0 || trainable > self.hidden.len() + 1 {
                return Err(Error::Config(format!("cannot keep {trainable} of {} layers trainable", self.hidden.len() + 1)));
            }
        }
        if let TargetRule::Advantage { gap_coefficient } = self.target {
            if !(gap_coefficient >= S::zero() && gap_coefficient <= S::one()) {
                return Err(Error::Config("gap coefficient must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

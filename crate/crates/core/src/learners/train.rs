use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    act, compute_target, detect_convergence, greedy_return, tabular_q_step, AfterConvergence, Algorithm,
    LearnerConfig, ReplayBuffer, Task, TargetMode, TargetRule, Transition,
};
use crate::error::{Error, Result};
use crate::metrics::{gap_unchecked, ChurnTrace, SwitchConfusion};
use crate::nn::{Example, FreezeMask, Gradients, Input, Mlp, MlpSpec, Optimizer, Target, Workspace};
use crate::policy::{argmax_first, greedy, Policy, QTable, TieMode};
use crate::scalar::Scalar;

/// Mixed into the run seed to derive the network-initialization seed.
const INIT_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct RunResult<S> {
    pub trace: ChurnTrace<S>,
    /// Updates performed when convergence was first detected (`P`).
    pub convergence_step: Option<u64>,
    pub convergence_episode: Option<usize>,
    pub episodes: usize,
    /// Number of post-convergence updates recorded.
    pub post_horizon: u64,
    pub confusion: SwitchConfusion,
    /// `(update, state)` for every argmax switch, if requested.
    pub switch_events: Vec<(u64, usize)>,
    pub final_table: Option<QTable<S>>,
    pub final_net: Option<Mlp<S>>,
}

impl<S: Scalar> RunResult<S> {
    pub fn converged(&self) -> bool {
        self.convergence_step.is_some()
    }

    /// `W_{0:P}`, or the whole-trace sum when the run timed out.
    pub fn w_0p(&self) -> S {
        let p = self.convergence_step.map_or(self.trace.len(), |p| p as usize);
        self.trace.churn()[..p.min(self.trace.len())].iter().copied().sum()
    }

    /// Mean per-update churn over the post-convergence window.
    pub fn w_plus(&self) -> Option<S> {
        let p = self.convergence_step? as usize;
        self.mean_churn(p, p + self.post_horizon as usize)
    }

    /// Mean per-update churn over trace entries `[from, to)`.
    pub fn mean_churn(&self, from: usize, to: usize) -> Option<S> {
        mean_window(self.trace.churn(), from, to)
    }

    /// Mean action gap over the post-convergence window.
    pub fn post_mean_gap(&self) -> Option<S> {
        let p = self.convergence_step? as usize;
        mean_window(self.trace.mean_gap(), p, p + self.post_horizon as usize)
    }
}

fn mean_window<S: Scalar>(xs: &[S], from: usize, to: usize) -> Option<S> {
    if from >= to || to > xs.len() {
        return None;
    }
    Some(xs[from..to].iter().copied().sum::<S>() / S::from_count(to - from))
}

#[derive(Debug, Clone, Copy)]
struct Stored<S> {
    t: Transition<S>,
    ret: Option<S>,
}

struct NetState<S> {
    net: Mlp<S>,
    opt: Optimizer<S>,
    mask: FreezeMask,
    ws: Workspace<S>,
    grads: Gradients<S>,
}

enum Model<S> {
    Table(QTable<S>),
    Net(Box<NetState<S>>),
}

fn net_values<S: Scalar>(net: &Mlp<S>, task: &Task<S>, s: usize, ws: &mut Workspace<S>, out: &mut [S]) {
    let q = net.forward_into(Input::Sparse(task.codec.active(s)), ws).expect("codec matches network input");
    out.copy_from_slice(q);
}

/// Per-update measurement state.
struct Monitor<S> {
    actions: Vec<usize>,
    next_actions: Vec<usize>,
    history: VecDeque<Vec<usize>>,
    max_k: usize,
    values: Vec<S>,
    trace: ChurnTrace<S>,
    confusion: SwitchConfusion,
    switch_events: Vec<(u64, usize)>,
    record_switches: bool,
}

impl<S: Scalar> Monitor<S> {
    fn new(task: &Task<S>, config: &LearnerConfig<S>) -> Self {
        let n = task.mdp.num_states();
        Self {
            actions: vec![0; n],
            next_actions: vec![0; n],
            history: VecDeque::new(),
            max_k: config.interval_ks.iter().copied().max().unwrap_or(0),
            values: vec![S::zero(); task.num_actions()],
            trace: ChurnTrace::new(config.interval_ks.clone()),
            confusion: SwitchConfusion::new(task.num_actions()),
            switch_events: Vec::new(),
            record_switches: config.record_switches,
        }
    }

    /// Greedy actions and mean gap of the current online model into
    /// `next_actions`.
    fn evaluate(&mut self, model: &mut Model<S>, task: &Task<S>) -> S {
        let mut gap = S::zero();
        for &s in &task.decision_states {
            match model {
                Model::Table(q) => self.values.copy_from_slice(q.row(s)),
                Model::Net(st) => net_values(&st.net, task, s, &mut st.ws, &mut self.values),
            }
            self.next_actions[s] = argmax_first(&self.values);
            gap += gap_unchecked(&self.values);
        }
        gap / S::from_count(task.decision_states.len().max(1))
    }

    fn initialize(&mut self, model: &mut Model<S>, task: &Task<S>) {
        self.evaluate(model, task);
        self.actions.copy_from_slice(&self.next_actions);
        if self.max_k > 0 {
            self.history.push_back(self.actions.clone());
        }
    }

    fn record(&mut self, update: u64, model: &mut Model<S>, task: &Task<S>) -> Result<()> {
        let gap = self.evaluate(model, task);
        let states = &task.decision_states;
        let mut switched = 0usize;
        for &s in states {
            if self.actions[s] != self.next_actions[s] {
                switched += 1;
                if self.record_switches {
                    self.switch_events.push((update, s));
                }
            }
        }
        self.confusion.record(&self.actions, &self.next_actions, states);
        let churn = S::from_count(switched) / S::from_count(states.len().max(1));
        let mut interval = Vec::with_capacity(self.trace.interval_ks().len());
        for &k in self.trace.interval_ks() {
            let len = self.history.len();
            interval.push(if len >= k {
                let past = &self.history[len - k];
                Some(S::from_count(states.iter().filter(|&&s| past[s] != self.next_actions[s]).count()) / S::from_count(states.len().max(1)))
            } else {
                None
            });
        }
        std::mem::swap(&mut self.actions, &mut self.next_actions);
        if self.max_k > 0 {
            if self.history.len() == self.max_k {
                let mut recycled = self.history.pop_front().expect("non-empty history");
                recycled.copy_from_slice(&self.actions);
                self.history.push_back(recycled);
            } else {
                self.history.push_back(self.actions.clone());
            }
        }
        let ret = greedy_return(&task.mdp, &self.actions);
        self.trace.push(update, churn, &interval, gap, ret)
    }
}

/// Runs one seeded training run of `config` on `task`.
///
/// Training proceeds episode by episode. Every `eval_every_episodes`
/// episodes the greedy policy is checked against `v*`; the number of updates
/// at the first success is `P`. Training then continues for
/// `max(post_horizon_factor * P, min_post_horizon)` further updates, or stops
/// after `episode_budget` episodes without convergence.
pub fn train_variant<S: Scalar>(task: &Task<S>, config: &LearnerConfig<S>, seed: u64) -> Result<RunResult<S>> {
    config.validate()?;
    let na = task.num_actions();
    let gamma = task.mdp.discount();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = if config.uses_network() {
        let spec = MlpSpec::new(task.codec.feature_dimension(), config.hidden.clone(), na, seed ^ INIT_SEED_MIX)?;
        let net = Mlp::init(&spec)?;
        let opt = Optimizer::new(config.optimizer, config.schedule, &net)?;
        let mask = FreezeMask::all_trainable(net.num_layers());
        let ws = Workspace::new(&net);
        let grads = Gradients::zeros_like(&net);
        Model::Net(Box::new(NetState { net, opt, mask, ws, grads }))
    } else {
        Model::Table(QTable::zeros(task.mdp.num_states(), na))
    };
    let pi_star: Policy<S> = greedy(&task.q_star, TieMode::Share)?;
    let mut acting: Option<Mlp<S>> = match &model {
        Model::Net(st) if config.acting_interval > 1 => Some(st.net.clone()),
        _ => None,
    };
    let mut target_net: Option<Mlp<S>> = match (&model, config.target_interval) {
        (Model::Net(st), Some(_)) => Some(st.net.clone()),
        _ => None,
    };
    let mut aux_ws = match &model {
        Model::Net(st) => Some(Workspace::new(&st.net)),
        Model::Table(_) => None,
    };
    let mut replay: ReplayBuffer<Stored<S>> = ReplayBuffer::new(config.replay_capacity)?;
    let mut monitor = Monitor::new(task, config);
    monitor.initialize(&mut model, task);

    let mut updates: u64 = 0;
    let mut episodes = 0usize;
    let mut convergence_step = None;
    let mut convergence_episode = None;
    let mut stop_at: Option<u64> = None;
    let mut behaviour_frozen = false;
    let mut act_values = vec![S::zero(); na];
    let mut next_vals = vec![S::zero(); na];
    let mut here_vals = vec![S::zero(); na];
    let mut episode_buf: Vec<Transition<S>> = Vec::new();
    let mut indices = Vec::new();

    'episodes: loop {
        if stop_at.is_none() && episodes >= config.episode_budget {
            break;
        }
        let mut s = task.mdp.sample_initial(&mut rng);
        episode_buf.clear();
        while !task.mdp.is_terminal(s) {
            match (&model, &acting) {
                (_, Some(a)) => net_values(a, task, s, aux_ws.as_mut().expect("network workspace"), &mut act_values),
                (Model::Net(st), None) => {
                    net_values(&st.net, task, s, aux_ws.as_mut().expect("network workspace"), &mut act_values)
                }
                (Model::Table(q), None) => act_values.copy_from_slice(q.row(s)),
            }
            let a = act(&act_values, config.epsilon, &mut rng);
            let next = task.mdp.sample_next(s, a, &mut rng);
            let t = Transition { state: s, action: a, reward: task.mdp.reward(s, a), next_state: next, terminal: task.mdp.is_terminal(next) };
            s = next;

            let mut updated = false;
            match (&mut model, config.algorithm) {
                (Model::Table(q), _) => {
                    let alpha = config.schedule.rate(updates);
                    match config.target {
                        TargetRule::Advantage { gap_coefficient } => {
                            next_vals.copy_from_slice(q.row(t.next_state));
                            here_vals.copy_from_slice(q.row(t.state));
                            let y = compute_target(&t, &next_vals, &here_vals, gamma, TargetMode::Advantage { gap_coefficient })?;
                            let old = q.get(t.state, t.action);
                            q.set(t.state, t.action, old + alpha * (y - old));
                        }
                        _ => tabular_q_step(q, &t, alpha, gamma),
                    }
                    updated = true;
                }
                (Model::Net(st), Algorithm::Replay) => {
                    if config.target == TargetRule::MonteCarlo {
                        episode_buf.push(t);
                    } else {
                        replay.push(Stored { t, ret: None });
                    }
                    if replay.len() >= config.batch_size {
                        replay.sample_indices(config.batch_size, &mut rng, &mut indices)?;
                        let mut examples = Vec::with_capacity(indices.len());
                        for &i in &indices {
                            let item = *replay.get(i);
                            let reference = target_net.as_ref().unwrap_or(&st.net);
                            let ws = aux_ws.as_mut().expect("network workspace");
                            let mode = match config.target {
                                TargetRule::QLearning => TargetMode::QLearning,
                                TargetRule::Advantage { gap_coefficient } => {
                                    net_values(reference, task, item.t.state, ws, &mut here_vals);
                                    TargetMode::Advantage { gap_coefficient }
                                }
                                TargetRule::MonteCarlo => TargetMode::MonteCarlo(item.ret),
                            };
                            if config.target != TargetRule::MonteCarlo && !item.t.terminal {
                                net_values(reference, task, item.t.next_state, ws, &mut next_vals);
                            }
                            let y = compute_target(&item.t, &next_vals, &here_vals, gamma, mode)?;
                            examples.push(Example {
                                input: Input::Sparse(task.codec.active(item.t.state)),
                                target: Target::Action { action: item.t.action, value: y },
                            });
                        }
                        st.net.accumulate_grad(&examples, &mut st.ws, &mut st.grads)?;
                        st.opt.step(&mut st.net, &st.grads, &st.mask)?;
                        updated = true;
                    }
                }
                (Model::Net(st), algorithm) => {
                    let input = Input::Sparse(task.codec.active(t.state));
                    let target = match algorithm {
                        Algorithm::ClonePiStar => Target::Distribution(pi_star.row(t.state)),
                        Algorithm::RegressQStar => Target::Action {
                            action: t.action,
                            value: compute_target(&t, &[], &[], gamma, TargetMode::QStar(Some(&task.q_star)))?,
                        },
                        _ => {
                            let reference = target_net.as_ref().unwrap_or(&st.net);
                            let ws = aux_ws.as_mut().expect("network workspace");
                            if !t.terminal {
                                net_values(reference, task, t.next_state, ws, &mut next_vals);
                            }
                            let mode = match config.target {
                                TargetRule::Advantage { gap_coefficient } => {
                                    net_values(reference, task, t.state, ws, &mut here_vals);
                                    TargetMode::Advantage { gap_coefficient }
                                }
                                _ => TargetMode::QLearning,
                            };
                            Target::Action { action: t.action, value: compute_target(&t, &next_vals, &here_vals, gamma, mode)? }
                        }
                    };
                    st.net.accumulate_grad(&[Example { input, target }], &mut st.ws, &mut st.grads)?;
                    st.opt.step(&mut st.net, &st.grads, &st.mask)?;
                    updated = true;
                }
            }

            if updated {
                updates += 1;
                if let Model::Net(st) = &model {
                    if !behaviour_frozen && config.acting_interval > 1 && updates.is_multiple_of(config.acting_interval) {
                        acting = Some(st.net.clone());
                    }
                    if let Some(ti) = config.target_interval {
                        if updates.is_multiple_of(ti) {
                            target_net = Some(st.net.clone());
                        }
                    }
                }
                monitor.record(updates, &mut model, task)?;
                if stop_at.is_some_and(|stop| updates >= stop) {
                    break 'episodes;
                }
            }
        }
        if config.target == TargetRule::MonteCarlo {
            let mut ret = S::zero();
            let mut with_returns = Vec::with_capacity(episode_buf.len());
            for t in episode_buf.iter().rev() {
                ret = t.reward + gamma * ret;
                with_returns.push(Stored { t: *t, ret: Some(ret) });
            }
            for item in with_returns.into_iter().rev() {
                replay.push(item);
            }
        }
        episodes += 1;
        if convergence_step.is_none() && episodes.is_multiple_of(config.eval_every_episodes) && detect_convergence(task, &monitor.actions) {
            convergence_step = Some(updates);
            convergence_episode = Some(episodes);
            monitor.trace.set_convergence_step(updates as usize);
            let horizon = (config.post_horizon_factor * updates).max(config.min_post_horizon);
            stop_at = Some(updates + horizon);
            if let Model::Net(st) = &mut model {
                match config.after {
                    AfterConvergence::Continue => {}
                    AfterConvergence::StationaryData => {
                        behaviour_frozen = true;
                        acting = Some(acting.take().unwrap_or_else(|| st.net.clone()));
                    }
                    AfterConvergence::FreezeLayers { trainable } => {
                        st.mask = FreezeMask::top_layers(st.net.num_layers(), trainable)?;
                    }
                }
            }
            if horizon == 0 {
                break;
            }
        }
    }

    let post_horizon = match convergence_step {
        Some(p) => (updates - p).min(stop_at.unwrap_or(updates) - p),
        None => 0,
    };
    let (final_table, final_net) = match model {
        Model::Table(q) => (Some(q), None),
        Model::Net(st) => {
            st.net.check_finite().map_err(|e| Error::Config(format!("training diverged: {e}")))?;
            (None, Some(st.net))
        }
    };
    Ok(RunResult {
        trace: monitor.trace,
        convergence_step,
        convergence_episode,
        episodes,
        post_horizon,
        confusion: monitor.confusion,
        switch_events: monitor.switch_events,
        final_table,
        final_net,
    })
}

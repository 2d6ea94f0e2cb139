use super::{Gradients, Mlp};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Learning-rate schedule indexed by optimizer step (0-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule<S> {
    Constant(S),
    /// Geometric interpolation from `start` to `end` over `steps`, then flat.
    LogLinear { start: S, end: S, steps: u64 },
}

impl<S: Scalar> LrSchedule<S> {
    pub fn rate(&self, step: u64) -> S {
        match *self {
            Self::Constant(eta) => eta,
            Self::LogLinear { start, end, steps } => {
                if steps == 0 || step >= steps {
                    return end;
                }
                let frac = S::lit(step as f64 / steps as f64);
                start * (end / start).powf(frac)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Constant(eta) => eta >= S::zero() && eta.is_finite(),
            Self::LogLinear { start, end, .. } => start > S::zero() && end > S::zero() && start.is_finite() && end.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid learning-rate schedule {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind<S> {
    Sgd,
    RmsProp { decay: S, epsilon: S },
    Adam { beta1: S, beta2: S, epsilon: S },
}

impl<S: Scalar> OptimizerKind<S> {
    pub fn rmsprop(epsilon: S) -> Self {
        Self::RmsProp { decay: S::lit(0.9), epsilon }
    }

    pub fn adam(epsilon: S) -> Self {
        Self::Adam { beta1: S::lit(0.9), beta2: S::lit(0.999), epsilon }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::RmsProp { .. } => "rmsprop",
            Self::Adam { .. } => "adam",
        }
    }
}

/// Per-layer trainable flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    trainable: Vec<bool>,
}

impl FreezeMask {
    pub fn all_trainable(num_layers: usize) -> Self {
        Self { trainable: vec![true; num_layers] }
    }

    /// Only the top `k` layers stay trainable.
    pub fn top_layers(num_layers: usize, k: usize) -> Result<Self> {
        Self::new((0..num_layers).map(|l| l + k >= num_layers).collect())
    }

    pub fn new(trainable: Vec<bool>) -> Result<Self> {
        if !trainable.iter().any(|&t| t) {
            return Err(Error::Config("freeze mask leaves no trainable layer".into()));
        }
        Ok(Self { trainable })
    }

    pub fn is_trainable(&self, layer: usize) -> bool {
        self.trainable[layer]
    }

    pub fn num_layers(&self) -> usize {
        self.trainable.len()
    }
}

/// Optimizer state owned by one training run.
#[derive(Debug, Clone)]
pub struct Optimizer<S> {
    kind: OptimizerKind<S>,
    schedule: LrSchedule<S>,
    step: u64,
    first: Option<Gradients<S>>,
    second: Option<Gradients<S>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(kind: OptimizerKind<S>, schedule: LrSchedule<S>, net: &Mlp<S>) -> Result<Self> {
        schedule.validate()?;
        let zeros = || Some(Gradients::zeros_like(net));
        let (first, second) = match kind {
            OptimizerKind::Sgd => (None, None),
            OptimizerKind::RmsProp { decay, epsilon } => {
                if !(decay >= S::zero() && decay < S::one() && epsilon >= S::zero()) {
                    return Err(Error::Config("rmsprop needs decay in [0, 1) and epsilon >= 0".into()));
                }
                (None, zeros())
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                let unit = |b: S| b >= S::zero() && b < S::one();
                if !(unit(beta1) && unit(beta2) && epsilon >= S::zero()) {
                    return Err(Error::Config("adam needs betas in [0, 1) and epsilon >= 0".into()));
                }
                (zeros(), zeros())
            }
        };
        Ok(Self { kind, schedule, step: 0, first, second })
    }

    pub fn kind(&self) -> OptimizerKind<S> {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn current_rate(&self) -> S {
        self.schedule.rate(self.step)
    }

    /// Applies one update. Frozen layers and their accumulators are left
    /// untouched.
    pub fn step(&mut self, net: &mut Mlp<S>, grads: &Gradients<S>, mask: &FreezeMask) -> Result<()> {
        if mask.num_layers() != net.layers.len() || grads.layers.len() != net.layers.len() {
            return Err(Error::Shape("optimizer step layer count".into()));
        }
        let eta = self.schedule.rate(self.step);
        self.step += 1;
        let t = self.step as i32;
        for (li, layer) in net.layers.iter_mut().enumerate() {
            if !mask.is_trainable(li) {
                continue;
            }
            let g = &grads.layers[li];
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = g.weights.iter().chain(&g.bias);
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, &gv) in params.zip(gs) {
                        *p -= eta * gv;
                    }
                }
                OptimizerKind::RmsProp { decay, epsilon } => {
                    let nu = self.second.as_mut().expect("rmsprop state");
                    let nl = &mut nu.layers[li];
                    let nus = nl.weights.iter_mut().chain(nl.bias.iter_mut());
                    for ((p, &gv), v) in params.zip(gs).zip(nus) {
                        *v = decay * *v + (S::one() - decay) * gv * gv;
                        *p -= eta * gv / (*v + epsilon).sqrt();
                    }
                }
                OptimizerKind::Adam { beta1, beta2, epsilon } => {
                    let c1 = S::one() - beta1.powi(t);
                    let c2 = S::one() - beta2.powi(t);
                    let ml = &mut self.first.as_mut().expect("adam state").layers[li];
                    let vl = &mut self.second.as_mut().expect("adam state").layers[li];
                    let ms = ml.weights.iter_mut().chain(ml.bias.iter_mut());
                    let vs = vl.weights.iter_mut().chain(vl.bias.iter_mut());
                    for (((p, &gv), m), v) in params.zip(gs).zip(ms).zip(vs) {
                        *m = beta1 * *m + (S::one() - beta1) * gv;
                        *v = beta2 * *v + (S::one() - beta2) * gv * gv;
                        *p -= eta * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

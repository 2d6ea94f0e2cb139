use super::TabularMdp;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const GREEN: usize = 0;
pub const BLUE: usize = 1;
pub const RED: usize = 2;

/// Decision state `s` with two arms on which iterated policy evaluation makes
/// the greedy choice at `s` flip on every application of the Bellman operator.
///
/// At `s`: red stays put (reward 0), green enters the green arm, blue enters
/// the blue arm and pays `gamma / (1 + gamma)`. Each arm is a chain of
/// `arm_length` states whose last two states form a 2-cycle; on the arm,
/// green and blue both move forward and red exits to an absorbing state with
/// reward 0. Forward moves pay 1 on odd arm positions (green arm) or even
/// arm positions (blue arm), so the two arms' partial discounted sums
/// overtake each other at every horizon while converging to the same limit
/// `gamma / (1 - gamma)`. The horizon-`k` gap is
/// `(-1)^(k+1) gamma^(k+1) / (1 + gamma)`.
#[derive(Debug, Clone)]
pub struct ChainMdp<S> {
    pub mdp: TabularMdp<S>,
    pub decision_state: usize,
    arm_length: usize,
}

impl<S: Scalar> ChainMdp<S> {
    pub const DISCOUNT: f64 = 0.9;

    pub fn new(arm_length: usize) -> Result<Self> {
        if arm_length < 2 {
            return Err(Error::Construction(format!("arm length must be >= 2, got {arm_length}")));
        }
        let gamma = S::lit(Self::DISCOUNT);
        let green = |t: usize| t; // arm position t in 1..=arm_length
        let blue = |t: usize| arm_length + t;
        let exit = 2 * arm_length + 1;
        let num_states = exit + 1;
        let mut transitions = vec![Vec::new(); num_states * 3];
        let mut reward = vec![S::zero(); num_states * 3];
        let mut set = |s: usize, a: usize, next: usize, r: S| {
            transitions[s * 3 + a] = vec![(next, S::one())];
            reward[s * 3 + a] = r;
        };
        set(0, GREEN, green(1), S::zero());
        set(0, BLUE, blue(1), gamma / (S::one() + gamma));
        set(0, RED, 0, S::zero());
        for t in 1..=arm_length {
            let next = if t < arm_length { t + 1 } else { arm_length - 1 };
            let green_pay = if t % 2 == 1 { S::one() } else { S::zero() };
            let blue_pay = if t % 2 == 0 { S::one() } else { S::zero() };
            for a in [GREEN, BLUE] {
                set(green(t), a, green(next), green_pay);
                set(blue(t), a, blue(next), blue_pay);
            }
            set(green(t), RED, exit, S::zero());
            set(blue(t), RED, exit, S::zero());
        }
        for a in [GREEN, BLUE, RED] {
            set(exit, a, exit, S::zero());
        }
        let mut initial = vec![S::zero(); num_states];
        initial[0] = S::one();
        let mut terminal = vec![false; num_states];
        terminal[exit] = true;
        let mdp = TabularMdp::new(num_states, 3, transitions, reward, gamma, initial, terminal)?;
        Ok(Self { mdp, decision_state: 0, arm_length })
    }

    pub fn arm_length(&self) -> usize {
        self.arm_length
    }
}

use super::{ObservationCodec, StateAnnotation, TabularMdp};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LEFT: usize = 0;
pub const STAY: usize = 1;
pub const RIGHT: usize = 2;

/// Falling-ball game on a `rows x cols` board.
///
/// The ball starts in a uniformly random column of the top row with the
/// paddle centred, falls one row per step, and the episode ends when it
/// reaches the bottom row: `+1` if the paddle sits under it, `-1` otherwise.
/// Undiscounted; every episode lasts `rows - 1` steps.
#[derive(Debug, Clone)]
pub struct Catch<S> {
    pub mdp: TabularMdp<S>,
    pub codec: ObservationCodec<S>,
    pub annotation: StateAnnotation,
    rows: usize,
    cols: usize,
}

impl<S: Scalar> Catch<S> {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows < 2 {
            return Err(Error::Construction(format!("catch needs at least 2 rows, got {rows}")));
        }
        if cols == 0 || cols.is_multiple_of(2) {
            return Err(Error::Construction(format!("catch needs an odd column count, got {cols}")));
        }
        let num_states = rows * cols * cols;
        let index = |ball_y: usize, ball_x: usize, paddle: usize| (ball_y * cols + ball_x) * cols + paddle;

        let mut transitions = Vec::with_capacity(num_states * 3);
        let mut reward = Vec::with_capacity(num_states * 3);
        let mut terminal = vec![false; num_states];
        let mut coords = vec![Vec::new(); num_states];
        let mut active = vec![Vec::new(); num_states];
        for ball_y in 0..rows {
            for ball_x in 0..cols {
                for paddle in 0..cols {
                    let s = index(ball_y, ball_x, paddle);
                    coords[s] = vec![ball_x as i64, ball_y as i64, paddle as i64];
                    let ball_cell = ball_y * cols + ball_x;
                    let paddle_cell = (rows - 1) * cols + paddle;
                    active[s] = if ball_cell == paddle_cell {
                        vec![(ball_cell, S::one())]
                    } else {
                        vec![(ball_cell, S::one()), (paddle_cell, S::one())]
                    };
                    if ball_y == rows - 1 {
                        terminal[s] = true;
                        for _ in 0..3 {
                            transitions.push(vec![(s, S::one())]);
                            reward.push(S::zero());
                        }
                        continue;
                    }
                    for action in [LEFT, STAY, RIGHT] {
                        let moved = match action {
                            LEFT => paddle.saturating_sub(1),
                            RIGHT => (paddle + 1).min(cols - 1),
                            _ => paddle,
                        };
                        transitions.push(vec![(index(ball_y + 1, ball_x, moved), S::one())]);
                        let r = if ball_y + 1 == rows - 1 {
                            if moved == ball_x {
                                S::one()
                            } else {
                                -S::one()
                            }
                        } else {
                            S::zero()
                        };
                        reward.push(r);
                    }
                }
            }
        }
        let mut initial = vec![S::zero(); num_states];
        let start_weight = S::one() / S::from_count(cols);
        for ball_x in 0..cols {
            initial[index(0, ball_x, cols / 2)] = start_weight;
        }
        let mdp = TabularMdp::new(num_states, 3, transitions, reward, S::one(), initial, terminal)?;
        let codec = ObservationCodec::new(rows * cols, active)?;
        let annotation = StateAnnotation { axes: vec!["ball_x", "ball_y", "paddle_x"], coords };
        Ok(Self { mdp, codec, annotation, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn state_index(&self, ball_x: usize, ball_y: usize, paddle_x: usize) -> usize {
        (ball_y * self.cols + ball_x) * self.cols + paddle_x
    }

    /// `(ball_x, ball_y, paddle_x)` of a state index.
    pub fn decode(&self, s: usize) -> (usize, usize, usize) {
        let paddle = s % self.cols;
        let cell = s / self.cols;
        (cell % self.cols, cell / self.cols, paddle)
    }
}

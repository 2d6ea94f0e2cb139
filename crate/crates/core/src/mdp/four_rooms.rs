use super::{StateAnnotation, TabularMdp};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

/// Square gridworld split into four rooms by one vertical and one horizontal
/// wall through the centre. Each of the four wall segments has a single
/// doorway at its midpoint. Moves are deterministic; bumping into a wall or
/// the border leaves the agent in place. Start is the top-left corner, the
/// absorbing goal the bottom-right corner, entered with reward 1.
///
/// Wall cells are kept as (unreachable) self-looping states so that state
/// indices stay `y * size + x`.
#[derive(Debug, Clone)]
pub struct FourRooms<S> {
    pub mdp: TabularMdp<S>,
    pub annotation: StateAnnotation,
    size: usize,
    walls: Vec<bool>,
}

impl<S: Scalar> FourRooms<S> {
    pub fn new(size: usize, discount: S) -> Result<Self> {
        if size < 5 {
            return Err(Error::Construction(format!("four rooms needs size >= 5, got {size}")));
        }
        if !(discount >= S::zero() && discount < S::one()) {
            return Err(Error::Construction(format!("discount {discount} outside [0, 1)")));
        }
        let mid = size / 2;
        let mut walls = vec![false; size * size];
        for i in 0..size {
            walls[i * size + mid] = true;
            walls[mid * size + i] = true;
        }
        let low_door = (mid - 1) / 2;
        let high_door = (mid + 1 + size - 1) / 2;
        for door in [low_door, high_door] {
            walls[door * size + mid] = false;
            walls[mid * size + door] = false;
        }

        let num_states = size * size;
        let start = 0;
        let goal = num_states - 1;
        let mut transitions = Vec::with_capacity(num_states * 4);
        let mut reward = Vec::with_capacity(num_states * 4);
        let mut terminal = vec![false; num_states];
        terminal[goal] = true;
        let mut coords = Vec::with_capacity(num_states);
        for y in 0..size {
            for x in 0..size {
                let s = y * size + x;
                coords.push(vec![x as i64, y as i64]);
                for action in [UP, DOWN, LEFT, RIGHT] {
                    if s == goal || walls[s] {
                        transitions.push(vec![(s, S::one())]);
                        reward.push(S::zero());
                        continue;
                    }
                    let (nx, ny) = match action {
                        UP if y > 0 => (x, y - 1),
                        DOWN if y + 1 < size => (x, y + 1),
                        LEFT if x > 0 => (x - 1, y),
                        RIGHT if x + 1 < size => (x + 1, y),
                        _ => (x, y),
                    };
                    let mut next = ny * size + nx;
                    if walls[next] {
                        next = s;
                    }
                    transitions.push(vec![(next, S::one())]);
                    reward.push(if next == goal { S::one() } else { S::zero() });
                }
            }
        }
        let mut initial = vec![S::zero(); num_states];
        initial[start] = S::one();
        let mdp = TabularMdp::new(num_states, 4, transitions, reward, discount, initial, terminal)?;
        let annotation = StateAnnotation { axes: vec!["x", "y"], coords };
        Ok(Self { mdp, annotation, size, walls })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_wall(&self, x: usize, y: usize) -> bool {
        self.walls[y * self.size + x]
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn goal(&self) -> usize {
        self.size * self.size - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn flood_fill(rooms: &FourRooms<f64>) -> Vec<usize> {
        let n = rooms.size();
        let mut seen = vec![false; n * n];
        let mut queue = VecDeque::from([(0usize, 0usize)]);
        seen[0] = true;
        while let Some((x, y)) = queue.pop_front() {
            if y * n + x == rooms.goal() {
                continue;
            }
            let mut neighbours = Vec::new();
            if x > 0 {
                neighbours.push((x - 1, y));
            }
            if y > 0 {
                neighbours.push((x, y - 1));
            }
            if x + 1 < n {
                neighbours.push((x + 1, y));
            }
            if y + 1 < n {
                neighbours.push((x, y + 1));
            }
            for (nx, ny) in neighbours {
                if !rooms.is_wall(nx, ny) && !seen[ny * n + nx] {
                    seen[ny * n + nx] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
        (0..n * n).filter(|&s| seen[s]).collect()
    }

    #[test]
    fn reachable_states_are_all_open_cells() {
        for size in [5, 9, 16] {
            let rooms = FourRooms::<f64>::new(size, 0.97).unwrap();
            let open: Vec<usize> = (0..size * size).filter(|&s| !rooms.is_wall(s % size, s / size)).collect();
            assert_eq!(rooms.mdp.reachable_states(), flood_fill(&rooms));
            assert_eq!(rooms.mdp.reachable_states(), open);
        }
    }

    #[test]
    fn four_doorways() {
        let rooms = FourRooms::<f64>::new(16, 0.97).unwrap();
        let wall_cells = (0..256).filter(|&s| rooms.is_wall(s % 16, s / 16)).count();
        assert_eq!(wall_cells, 16 + 16 - 1 - 4);
    }

    #[test]
    fn rejects_small_or_undiscounted() {
        assert!(FourRooms::<f64>::new(4, 0.9).is_err());
        assert!(FourRooms::<f64>::new(16, 1.0).is_err());
    }

    #[test]
    fn goal_entry_rewarded_once() {
        let rooms = FourRooms::<f64>::new(16, 0.97).unwrap();
        let above_goal = 14 * 16 + 15;
        assert_eq!(rooms.mdp.reward(above_goal, DOWN), 1.0);
        assert_eq!(rooms.mdp.reward(above_goal, UP), 0.0);
        assert!(rooms.mdp.is_terminal(rooms.goal()));
    }
}

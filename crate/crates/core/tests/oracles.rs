//! Cross-checks against independent reference computations.

use std::collections::{BTreeSet, VecDeque};

use approx::assert_abs_diff_eq;
use churn_lab::dp::{
    bellman_optimality_backup, bellman_policy_backup, exact_policy_evaluation, policy_iteration, value_iteration,
};
use churn_lab::mdp::{random_mdp, Catch, ChainMdp, FourRooms, TabularMdp, BLUE, GREEN, RED};
use churn_lab::metrics::{aggregate_change, action_gap, null_space_tied_diameter, per_state_change, StateWeighting};
use churn_lab::policy::{argmax_first, greedy, greedy_actions, Policy, QTable, TieMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_policy(rng: &mut ChaCha8Rng, n: usize, a: usize) -> Policy<f64> {
    let mut probs = Vec::with_capacity(n * a);
    for _ in 0..n {
        let row: Vec<f64> = (0..a).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let z: f64 = row.iter().sum();
        probs.extend(row.iter().map(|p| p / z));
    }
    Policy::from_probabilities(n, a, probs).unwrap()
}

/// Expected next-state matrix `P[(s,a)][s']` as a dense table.
fn dense_transitions(mdp: &TabularMdp<f64>) -> Vec<Vec<f64>> {
    let (n, na) = (mdp.num_states(), mdp.num_actions());
    (0..n * na).map(|sa| (0..n).map(|t| mdp.probability(sa / na, sa % na, t)).collect()).collect()
}

#[test]
fn catch_reachable_states_match_breadth_first_simulation() {
    let (rows, cols) = (10, 5);
    let catch = Catch::<f64>::new(rows, cols).unwrap();
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::new();
    for x in 0..cols {
        queue.push_back((x, 0usize, cols / 2));
    }
    while let Some((bx, by, px)) = queue.pop_front() {
        if !seen.insert((bx, by, px)) || by == rows - 1 {
            continue;
        }
        for dx in [-1i64, 0, 1] {
            let np = (px as i64 + dx).clamp(0, cols as i64 - 1) as usize;
            queue.push_back((bx, by + 1, np));
        }
    }
    let reachable: BTreeSet<_> = catch.mdp.reachable_states().into_iter().map(|s| catch.decode(s)).collect();
    assert_eq!(reachable, seen);
    assert_eq!(seen.len(), 220);
}

#[test]
fn four_rooms_start_value_is_discounted_shortest_path() {
    let gamma = 0.97;
    let rooms = FourRooms::<f64>::new(16, gamma).unwrap();
    let at = |s: usize| {
        let x = rooms.annotation.coordinate(s, "x").unwrap() as usize;
        let y = rooms.annotation.coordinate(s, "y").unwrap() as usize;
        (x, y)
    };
    let (start, goal) = (at(rooms.start()), at(rooms.goal()));
    let size = rooms.size();
    let mut dist = vec![vec![usize::MAX; size]; size];
    let mut queue = VecDeque::from([start]);
    dist[start.0][start.1] = 0;
    while let Some((x, y)) = queue.pop_front() {
        for (dx, dy) in [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)] {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= size as i64 || ny >= size as i64 {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if !rooms.is_wall(nx, ny) && dist[nx][ny] == usize::MAX {
                dist[nx][ny] = dist[x][y] + 1;
                queue.push_back((nx, ny));
            }
        }
    }
    let d = dist[goal.0][goal.1];
    let vi = value_iteration(&rooms.mdp, 1e-12, TieMode::Share).unwrap();
    let v_start = vi.final_q().state_value(rooms.start());
    assert_abs_diff_eq!(v_start, gamma.powi(d as i32 - 1), epsilon = 1e-10);
}

#[test]
fn policy_backup_matches_dense_matrix_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mdp = random_mdp::<f64, _>(3, 2, 0.9, &mut rng).unwrap();
    let q = QTable::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
    let pi = random_policy(&mut rng, 3, 2);
    let p = dense_transitions(&mdp);
    // v(s') = sum_a' pi(a'|s') q(s', a')
    let v: Vec<f64> = (0..3).map(|t| (0..2).map(|a| pi.prob(t, a) * q.get(t, a)).sum()).collect();
    let out = bellman_policy_backup(&mdp, &q, &pi).unwrap();
    for (sa, row) in p.iter().enumerate() {
        let expected = mdp.reward(sa / 2, sa % 2) + 0.9 * row.iter().zip(&v).map(|(pt, vt)| pt * vt).sum::<f64>();
        assert_abs_diff_eq!(out.get(sa / 2, sa % 2), expected, epsilon = 1e-14);
    }
}

#[test]
fn value_iteration_agrees_with_policy_iteration_on_small_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let mdp = random_mdp::<f64, _>(3, 2, 0.9, &mut rng).unwrap();
        let vi = value_iteration(&mdp, 1e-13, TieMode::Share).unwrap();
        let pi = policy_iteration(&mdp, TieMode::Share).unwrap();
        let pi_q = exact_policy_evaluation(&mdp, pi.final_policy()).unwrap();
        assert!(vi.final_q().sup_distance(&pi_q) < 1e-9);
        let backed = bellman_optimality_backup(&mdp, &pi_q).unwrap();
        assert!(backed.sup_distance(&pi_q) < 1e-9);
    }
}

#[test]
fn exact_evaluation_matches_iterated_backups() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mdp = random_mdp::<f64, _>(4, 3, 0.9, &mut rng).unwrap();
    let pi = random_policy(&mut rng, 4, 3);
    let exact = exact_policy_evaluation(&mdp, &pi).unwrap();
    let mut q = QTable::zeros(4, 3);
    for _ in 0..10_000 {
        q = bellman_policy_backup(&mdp, &q, &pi).unwrap();
    }
    assert!(q.sup_distance(&exact) < 1e-9);
}

#[test]
fn catch_policy_iteration_catches_every_ball() {
    let catch = Catch::<f64>::new(10, 5).unwrap();
    let pi = policy_iteration(&catch.mdp, TieMode::Share).unwrap();
    let actions = greedy_actions(&exact_policy_evaluation(&catch.mdp, pi.final_policy()).unwrap());
    for s0 in catch.mdp.start_states() {
        let (mut s, mut ret) = (s0, 0.0);
        while !catch.mdp.is_terminal(s) {
            let a = actions[s];
            ret += catch.mdp.reward(s, a);
            s = catch.mdp.successors(s, a)[0].0;
        }
        assert_eq!(ret, 1.0, "start {s0}");
    }
}

#[test]
fn catch_value_iteration_converges_in_ten_sweeps() {
    let catch = Catch::<f64>::new(10, 5).unwrap();
    let vi = value_iteration(&catch.mdp, 1e-10, TieMode::Share).unwrap();
    assert_eq!(vi.convergence_step, 10);
    let w = vi.cumulative_change();
    assert!((w - 0.09).abs() <= 0.03, "W0:P = {w}");
    let mut q = QTable::zeros(catch.mdp.num_states(), 3);
    for _ in 0..10 {
        q = bellman_optimality_backup(&catch.mdp, &q).unwrap();
    }
    for s in catch.mdp.start_states() {
        assert_eq!(q.state_value(s), 1.0);
    }
}

#[test]
fn chain_two_manual_backups_pick_green_then_blue() {
    let chain = ChainMdp::<f64>::new(2).unwrap();
    let mdp = &chain.mdp;
    let n = mdp.num_states();
    let red = Policy::deterministic(3, &vec![RED; n]);
    let q_red = exact_policy_evaluation(mdp, &red).unwrap();
    let prime = greedy_actions(&q_red);
    let mut q: Vec<[f64; 3]> = (0..n).map(|s| [q_red.get(s, 0), q_red.get(s, 1), q_red.get(s, 2)]).collect();
    let mut choices = Vec::new();
    for _ in 0..2 {
        let next: Vec<[f64; 3]> = (0..n)
            .map(|s| {
                let mut row = [0.0; 3];
                for (a, slot) in row.iter_mut().enumerate() {
                    let cont: f64 = mdp.successors(s, a).iter().map(|&(t, p)| p * q[t][prime[t]]).sum();
                    *slot = mdp.reward(s, a) + mdp.discount() * cont;
                }
                row
            })
            .collect();
        q = next;
        choices.push(argmax_first(&q[chain.decision_state]));
    }
    assert_eq!(choices, vec![GREEN, BLUE]);
}

#[test]
fn aggregate_change_equals_naive_double_loop_on_catch() {
    let catch = Catch::<f64>::new(10, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = catch.mdp.num_states();
    let mu = StateWeighting::uniform_over_reachable(&catch.mdp).unwrap();
    let reachable = catch.mdp.reachable_states();
    for _ in 0..10 {
        let (a, b) = (random_policy(&mut rng, n, 3), random_policy(&mut rng, n, 3));
        let mut naive = 0.0;
        for &s in &reachable {
            let mut tv = 0.0;
            for act in 0..3 {
                tv += (a.prob(s, act) - b.prob(s, act)).abs();
            }
            naive += 0.5 * tv / reachable.len() as f64;
        }
        assert_abs_diff_eq!(aggregate_change(&a, &b, &mu).unwrap(), naive, epsilon = 1e-12);
        assert_abs_diff_eq!(per_state_change(&a, &a, reachable[0]), 0.0);
    }
}

#[test]
fn catch_null_space_bound_is_the_zero_gap_fraction() {
    let catch = Catch::<f64>::new(10, 5).unwrap();
    let vi = value_iteration(&catch.mdp, 1e-10, TieMode::Share).unwrap();
    let q_star = vi.final_q();
    let pi_star = greedy(q_star, TieMode::FirstIndex).unwrap();
    let bound = null_space_tied_diameter(&catch.mdp, &pi_star).unwrap();
    let decision = catch.mdp.reachable_decision_states();
    let zero_gap = decision.iter().filter(|&&s| action_gap(q_star.row(s)).unwrap() == 0.0).count();
    assert!(zero_gap > 0 && zero_gap < decision.len());
    assert_abs_diff_eq!(bound.diameter_lower_bound, zero_gap as f64 / decision.len() as f64, epsilon = 1e-15);
}

#[test]
fn single_precision_value_iteration_matches_double() {
    let single = Catch::<f32>::new(10, 5).unwrap();
    let double = Catch::<f64>::new(10, 5).unwrap();
    let a = value_iteration(&single.mdp, 1e-6, TieMode::Share).unwrap();
    let b = value_iteration(&double.mdp, 1e-10, TieMode::Share).unwrap();
    assert_eq!(a.convergence_step, b.convergence_step);
    assert!((a.cumulative_change() as f64 - b.cumulative_change()).abs() < 1e-5);
}

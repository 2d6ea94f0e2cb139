//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! Units with identical settings (same environment, learner config and seed)
//! are trained once and shared between criteria.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use churn_harness::perstate::{average_maps, bucket_per_state, gap_split, Period};
use churn_harness::records::SummaryRow;
use churn_harness::stats::{percentile, sign_test_greater};
use churn_harness::suites::CATCH;
use churn_harness::units::{execute, learner_task, UnitOutput};
use churn_harness::{run_suite, suite, summarize, Cell, CellKind};
use churn_lab::dp::{exact_policy_evaluation, policy_iteration, value_iteration};
use churn_lab::mdp::{random_mdp, TabularMdp};
use churn_lab::metrics::{aggregate_change, null_space_diameter_bruteforce, null_space_tied_diameter, StateWeighting};
use churn_lab::nn::{finite_difference_check, Example, Input, Mlp, MlpSpec, Target};
use churn_lab::policy::{greedy, greedy_actions, Policy, TieMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const PAIRED_SEEDS: u64 = 30;
const PER_STATE_SEEDS: u64 = 100;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Trained units keyed by `(settings, seed)`. A unit that fails (for
/// example by diverging) keeps its error message and counts as not converged.
struct Lab {
    units: HashMap<(String, u64), Result<UnitOutput, String>>,
    workers: usize,
}

fn key(cell: &Cell) -> String {
    format!("{:?}", cell.kind)
}

impl Lab {
    fn new() -> Self {
        let workers = std::env::var("CHURN_LAB_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        Self { units: HashMap::new(), workers }
    }

    /// Trains every `(cell, seed)` not trained yet.
    fn ensure(&mut self, suite_id: &str, cells: &[&Cell], seeds: u64) {
        let mut todo: Vec<(&Cell, u64)> = Vec::new();
        for cell in cells {
            for seed in 0..seeds {
                let k = (key(cell), seed);
                if !self.units.contains_key(&k) && !todo.iter().any(|(c, s)| key(c) == k.0 && *s == seed) {
                    todo.push((cell, seed));
                }
            }
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(self.workers).build().expect("thread pool");
        let done: Vec<Result<UnitOutput, String>> = pool.install(|| {
            todo.par_iter().map(|(cell, seed)| execute(suite_id, cell, *seed).map_err(|e| e.to_string())).collect()
        });
        for ((cell, seed), out) in todo.into_iter().zip(done) {
            self.units.insert((key(cell), seed), out);
        }
    }

    fn unit(&self, cell: &Cell, seed: u64) -> Option<&UnitOutput> {
        self.units[&(key(cell), seed)].as_ref().ok()
    }

    fn failures(&self, cell: &Cell, seeds: u64) -> usize {
        (0..seeds).filter(|&s| self.unit(cell, s).is_none()).count()
    }

    /// One row per seed; failed units become non-converged rows.
    fn rows(&self, cell: &Cell, seeds: u64) -> Vec<SummaryRow> {
        (0..seeds)
            .map(|seed| match self.unit(cell, seed) {
                Some(u) => summarize(&u.trace).expect("summary"),
                None => SummaryRow {
                    suite: String::new(),
                    cell: cell.label.clone(),
                    seed,
                    p: None,
                    w_0p: f64::NAN,
                    w_plus: None,
                    mean_gap: None,
                },
            })
            .collect()
    }
}

fn converged_values(rows: &[SummaryRow], f: impl Fn(&SummaryRow) -> Option<f64>) -> Vec<f64> {
    rows.iter().filter(|r| r.converged()).filter_map(f).collect()
}

fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5).unwrap_or(f64::NAN)
}

/// `(a_i, b_i)` over seeds where both runs produced a value.
fn paired(a: &[SummaryRow], b: &[SummaryRow], f: impl Fn(&SummaryRow) -> Option<f64>) -> (Vec<f64>, Vec<f64>) {
    a.iter().zip(b).filter_map(|(x, y)| Some((f(x)?, f(y)?))).unzip()
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn cell<'a>(cells: &'a [Cell], label: &str) -> &'a Cell {
    cells.iter().find(|c| c.label == label).unwrap_or_else(|| panic!("missing cell {label}"))
}

fn catch_value_iteration() -> Outcome {
    let t = Instant::now();
    let s = suite("catch-spectrum").unwrap();
    let row = summarize(&execute(&s.id, s.cell("value-iteration").unwrap(), 0).unwrap().trace).unwrap();
    let elapsed = t.elapsed();
    let pass = row.p == Some(10) && (row.w_0p - 0.09).abs() <= 0.03 && elapsed < Duration::from_secs(1);
    Outcome { name: "catch-value-iteration", pass, detail: format!("P={:?} W0:P={:.4} in {}", row.p, row.w_0p, secs(elapsed)) }
}

fn four_rooms_dp() -> Outcome {
    let t = Instant::now();
    let s = suite("dp-gridworld").unwrap();
    let run = |label: &str| summarize(&execute(&s.id, s.cell(label).unwrap(), 0).unwrap().trace).unwrap();
    let (vi, pi, oracle) = (run("value-iteration"), run("policy-iteration"), run("oracle"));
    let elapsed = t.elapsed();
    let pass = pi.p.is_some_and(|p| p <= 5)
        && pi.w_0p > 1.0
        && vi.w_0p <= oracle.w_0p + 0.2
        && oracle.w_0p <= 1.0
        && elapsed < Duration::from_secs(10);
    Outcome {
        name: "four-rooms-dp",
        pass,
        detail: format!(
            "PI P={:?} W0:P={:.3}; VI P={:?} W0:P={:.3}; oracle {:.3}; in {}",
            pi.p,
            pi.w_0p,
            vi.p,
            vi.w_0p,
            oracle.w_0p,
            secs(elapsed)
        ),
    }
}

fn chain_oscillation() -> Outcome {
    let t = Instant::now();
    let s = suite("chain-oscillation").unwrap();
    let trace = execute(&s.id, &s.cells[0], 0).unwrap().trace;
    let churn = trace.series("state_churn").unwrap();
    let elapsed = t.elapsed();
    let ones = churn.iter().filter(|c| **c == Some(1.0)).count();
    let pass = churn.len() == 50 && ones == 50 && elapsed < Duration::from_secs(1);
    Outcome { name: "chain-oscillation", pass, detail: format!("{ones}/{} steps with per-state change 1 in {}", churn.len(), secs(elapsed)) }
}

fn bandit_churn() -> Outcome {
    let t = Instant::now();
    let s = suite("bandit-churn").unwrap();
    let trace = execute(&s.id, &s.cells[0], 0).unwrap().trace;
    let churn = trace.series("churn").unwrap();
    let mut best = 0;
    let mut run = 0;
    for c in &churn {
        run = if *c == Some(1.0) { run + 1 } else { 0 };
        best = best.max(run);
    }
    let elapsed = t.elapsed();
    let pass = best >= 100 && elapsed < Duration::from_secs(1);
    Outcome { name: "bandit-unbounded-churn", pass, detail: format!("{best} consecutive switching updates in {}", secs(elapsed)) }
}

fn catch_spectrum(lab: &mut Lab) -> Outcome {
    let s = suite("catch-spectrum").unwrap();
    let t = Instant::now();
    let cells: Vec<&Cell> = s.cells.iter().collect();
    lab.ensure(&s.id, &cells, PAIRED_SEEDS);
    let elapsed = t.elapsed();
    let mut detail = Vec::new();
    let mut pass = true;
    let mut medians = Vec::new();
    for c in &s.cells {
        let rows = lab.rows(c, PAIRED_SEEDS);
        let converged = rows.iter().filter(|r| r.converged()).count();
        let ok = converged as f64 >= 0.95 * rows.len() as f64;
        pass &= ok;
        let m = median(&converged_values(&rows, |r| Some(r.w_0p)));
        medians.push((c.label.clone(), m));
        let failed = lab.failures(c, PAIRED_SEEDS);
        let note = if failed > 0 { format!(" ({failed} diverged)") } else { String::new() };
        detail.push(format!("{} {converged}/{}{note}{}", c.label, rows.len(), if ok { "" } else { " (<95%)" }));
    }
    let get = |label: &str| medians.iter().find(|(l, _)| l == label).unwrap().1;
    let ratio = get("dqn-like-rmsprop") / get("tabular-ql");
    let rms_rows = lab.rows(cell(&s.cells, "dqn-like-rmsprop"), PAIRED_SEEDS);
    let rms_w_plus = median(&converged_values(&rms_rows, |r| r.w_plus));
    let vi = get("value-iteration");
    let vi_smallest = medians.iter().all(|(l, m)| l == "value-iteration" || vi < *m);
    pass &= ratio >= 3.0 && rms_w_plus > 0.0 && vi_smallest && elapsed < Duration::from_secs(30 * 60);
    Outcome {
        name: "catch-spectrum",
        pass,
        detail: format!(
            "converged: {}; median W0:P rmsprop/tabular = {ratio:.1}; median W+ rmsprop = {rms_w_plus:.2e}; VI smallest: {vi_smallest}; {} on {} workers",
            detail.join(", "),
            secs(elapsed),
            lab.workers
        ),
    }
}

fn advantage_learning(lab: &mut Lab) -> Outcome {
    let ab = suite("catch-ablations").unwrap();
    let (ql, al) = (cell(&ab.cells, "ql"), cell(&ab.cells, "al"));
    lab.ensure(&ab.id, &[ql, al], PAIRED_SEEDS);
    let (ql_rows, al_rows) = (lab.rows(ql, PAIRED_SEEDS), lab.rows(al, PAIRED_SEEDS));
    let (al_gap, ql_gap) = paired(&al_rows, &ql_rows, |r| if r.converged() { r.mean_gap } else { None });
    let gap = sign_test_greater(&al_gap, &ql_gap).unwrap();
    let (ql_w, al_w) = paired(&ql_rows, &al_rows, |r| r.w_plus);
    let churn = sign_test_greater(&ql_w, &al_w).unwrap();
    Outcome {
        name: "advantage-learning",
        pass: gap.p_value < 0.05 && churn.p_value < 0.05,
        detail: format!(
            "gap AL>QL in {}/{} pairs (p={:.2e}); W+ AL<QL in {}/{} pairs (p={:.2e}); median W+ QL {:.2e} AL {:.2e}",
            gap.positive,
            gap.informative,
            gap.p_value,
            churn.positive,
            churn.informative,
            churn.p_value,
            median(&ql_w),
            median(&al_w)
        ),
    }
}

fn per_state(lab: &mut Lab) -> Outcome {
    let s = suite("catch-perstate").unwrap();
    let c = &s.cells[0];
    lab.ensure(&s.id, &[c], PER_STATE_SEEDS);
    let task = learner_task(CATCH, 0).unwrap();
    let n = task.mdp.num_states();
    let maps: Vec<_> = (0..PER_STATE_SEEDS)
        .filter_map(|seed| lab.unit(c, seed))
        .filter(|u| u.trace.p.is_some())
        .map(|u| bucket_per_state(u.switches.as_ref().unwrap(), u.trace.p, u.trace.rows.len(), n).unwrap())
        .collect();
    let rows = average_maps(&maps, &task).unwrap();
    let (nonzero, zero) = gap_split(&rows, Period::PostConvergence);
    let pass = matches!((nonzero, zero), (Some(a), Some(b)) if a < b);
    Outcome {
        name: "per-state-maps",
        pass,
        detail: format!("{} converged runs; post-convergence churn nonzero-gap {nonzero:?} vs zero-gap {zero:?}", maps.len()),
    }
}

fn annealing(lab: &mut Lab) -> Outcome {
    let s = suite("catch-annealing").unwrap();
    let (constant, annealed) = (cell(&s.cells, "dqn-like-constant"), cell(&s.cells, "dqn-like-annealed"));
    lab.ensure(&s.id, &[constant, annealed], PAIRED_SEEDS);
    let (c, a) = paired(&lab.rows(constant, PAIRED_SEEDS), &lab.rows(annealed, PAIRED_SEEDS), |r| r.w_plus);
    let t = sign_test_greater(&c, &a).unwrap();
    Outcome {
        name: "annealing",
        pass: t.p_value < 0.05,
        detail: format!(
            "W+ constant>annealed in {}/{} pairs (p={:.2e}); medians {:.2e} vs {:.2e}",
            t.positive,
            t.informative,
            t.p_value,
            median(&c),
            median(&a)
        ),
    }
}

fn frozen_linear(lab: &mut Lab) -> Outcome {
    let ab = suite("catch-ablations").unwrap();
    let (control, frozen) = (cell(&ab.cells, "ql"), cell(&ab.cells, "frozen-linear"));
    lab.ensure(&ab.id, &[control, frozen], PAIRED_SEEDS);
    let (c, f) = paired(&lab.rows(control, PAIRED_SEEDS), &lab.rows(frozen, PAIRED_SEEDS), |r| r.w_plus);
    let t = sign_test_greater(&c, &f).unwrap();
    let (mc, mf) = (median(&c), median(&f));
    Outcome {
        name: "frozen-linear",
        pass: mf < mc,
        detail: format!("median W+ frozen {mf:.2e} vs control {mc:.2e}; frozen lower in {}/{} pairs", t.positive, t.informative),
    }
}

fn stationary_data(lab: &mut Lab) -> Outcome {
    let ab = suite("catch-ablations").unwrap();
    let c = cell(&ab.cells, "stationary-data");
    lab.ensure(&ab.id, &[c], PAIRED_SEEDS);
    let mut ratios = Vec::new();
    for seed in 0..PAIRED_SEEDS {
        let Some(unit) = lab.unit(c, seed) else { continue };
        let trace = &unit.trace;
        let Some(p) = trace.p.map(|p| p as usize) else { continue };
        let churn: Vec<f64> = trace.series("churn").unwrap().into_iter().map(|v| v.unwrap_or(0.0)).collect();
        if p == 0 || churn.len() < 2 * p {
            continue;
        }
        let before = churn[..p].iter().sum::<f64>() / p as f64;
        let after = churn[p..2 * p].iter().sum::<f64>() / p as f64;
        if before > 0.0 {
            ratios.push(after / before);
        }
    }
    let m = median(&ratios);
    Outcome {
        name: "stationary-data",
        pass: m > 0.25,
        detail: format!("median post/pre per-update churn ratio {m:.3} over {} runs", ratios.len()),
    }
}

fn deep_sea(lab: &mut Lab) -> Outcome {
    let s = suite("deepsea-exploration").unwrap();
    let (fast, slow) = (cell(&s.cells, "eps0-act1"), cell(&s.cells, "eps0-act1000"));
    lab.ensure(&s.id, &[fast, slow], PAIRED_SEEDS);
    let solved = |c: &Cell| lab.rows(c, PAIRED_SEEDS).iter().filter(|r| r.converged()).count();
    let (a, b) = (solved(fast), solved(slow));
    Outcome {
        name: "deepsea-exploration",
        pass: a > b,
        detail: format!("eps=0 solved: acting-interval 1 {a}/{PAIRED_SEEDS}, acting-interval 1000 {b}/{PAIRED_SEEDS}"),
    }
}

fn random_policy(rng: &mut ChaCha8Rng, n: usize, a: usize) -> Policy<f64> {
    let mut probs = Vec::with_capacity(n * a);
    for _ in 0..n {
        // Mix of deterministic and stochastic rows.
        if rng.gen_bool(0.3) {
            let pick = rng.gen_range(0..a);
            probs.extend((0..a).map(|i| if i == pick { 1.0 } else { 0.0 }));
        } else {
            let row: Vec<f64> = (0..a).map(|_| rng.gen::<f64>()).collect();
            let z: f64 = row.iter().sum();
            probs.extend(row.iter().map(|p| p / z));
        }
    }
    Policy::from_probabilities(n, a, probs).unwrap()
}

fn tiny_tied_mdp(rng: &mut ChaCha8Rng) -> TabularMdp<f64> {
    let n = rng.gen_range(2..=4);
    let a = rng.gen_range(2..=3);
    let transitions = (0..n * a).map(|_| vec![(rng.gen_range(0..n), 1.0)]).collect();
    let reward = (0..n * a).map(|_| rng.gen_range(0..2) as f64).collect();
    TabularMdp::new(n, a, transitions, reward, 0.5, vec![1.0 / n as f64; n], vec![false; n]).unwrap()
}

fn numerical_suite() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_fd = 0.0f64;
    let mut nets = 0;
    while nets < 100 {
        let input = rng.gen_range(2..6);
        let hidden: Vec<usize> = (0..rng.gen_range(1..3)).map(|_| rng.gen_range(2..7)).collect();
        let out = rng.gen_range(2..4);
        let spec = MlpSpec::new(input, hidden, out, rng.gen()).unwrap();
        let net = Mlp::<f64>::init(&spec).unwrap();
        let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Keep hidden pre-activations away from the ReLU kink.
        let mut h = x.clone();
        let mut kink = false;
        for layer in &net.layers[..net.layers.len() - 1] {
            let z: Vec<f64> =
                (0..layer.fan_out).map(|o| layer.bias[o] + (0..layer.fan_in).map(|i| layer.weight(o, i) * h[i]).sum::<f64>()).collect();
            kink |= z.iter().any(|v| v.abs() < 1e-4);
            h = z.iter().map(|v| v.max(0.0)).collect();
        }
        if kink {
            continue;
        }
        let batch = [Example { input: Input::Dense(&x), target: Target::Action { action: rng.gen_range(0..out), value: rng.gen_range(-1.0..1.0) } }];
        worst_fd = worst_fd.max(finite_difference_check(&net, &batch, 1e-6).unwrap());
        nets += 1;
    }

    let mut axiom_failures = 0;
    let mu = StateWeighting::uniform(8, &(0..8).collect::<Vec<_>>()).unwrap();
    for _ in 0..1000 {
        let (x, y, z) = (random_policy(&mut rng, 8, 3), random_policy(&mut rng, 8, 3), random_policy(&mut rng, 8, 3));
        let d = |p: &Policy<f64>, q: &Policy<f64>| aggregate_change(p, q, &mu).unwrap();
        let ok = d(&x, &x) == 0.0
            && (d(&x, &y) - d(&y, &x)).abs() < 1e-15
            && (0.0..=1.0).contains(&d(&x, &y))
            && d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12;
        axiom_failures += usize::from(!ok);
    }

    let mut worst_vi_pi = 0.0f64;
    for _ in 0..50 {
        let (n, a) = (rng.gen_range(2..8), rng.gen_range(2..5));
        let mdp = random_mdp::<f64, _>(n, a, 0.9, &mut rng).unwrap();
        let vi = value_iteration(&mdp, 1e-12, TieMode::Share).unwrap();
        let pi = policy_iteration(&mdp, TieMode::Share).unwrap();
        let q_pi = exact_policy_evaluation(&mdp, pi.final_policy()).unwrap();
        worst_vi_pi = worst_vi_pi.max(vi.final_q().sup_distance(&q_pi));
    }

    let mut bound_violations = 0;
    for _ in 0..100 {
        let mdp = tiny_tied_mdp(&mut rng);
        let q = value_iteration(&mdp, 0.0, TieMode::Share).unwrap().final_q().clone();
        let bound = null_space_tied_diameter(&mdp, &greedy(&q, TieMode::FirstIndex).unwrap()).unwrap();
        let exact: f64 = null_space_diameter_bruteforce(&mdp, &greedy_actions(&q)).unwrap();
        bound_violations += usize::from(exact < bound.diameter_lower_bound - 1e-12);
    }
    let elapsed = t.elapsed();
    let pass = worst_fd <= 1e-4
        && axiom_failures == 0
        && worst_vi_pi <= 1e-8
        && bound_violations == 0
        && elapsed < Duration::from_secs(120);
    Outcome {
        name: "numerical-suite",
        pass,
        detail: format!(
            "worst FD error {worst_fd:.1e}; metric axiom failures {axiom_failures}/1000; worst VI/PI gap {worst_vi_pi:.1e}; bound violations {bound_violations}/100; in {}",
            secs(elapsed)
        ),
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out);
        } else {
            out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
}

fn determinism() -> Outcome {
    let plan: [(&str, u64); 5] =
        [("dp-gridworld", 1), ("bandit-churn", 1), ("chain-oscillation", 1), ("catch-cloning", 2), ("catch-perstate", 2)];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (dir, workers) in dirs.iter().zip([1, 2]) {
        for (id, seeds) in plan {
            run_suite(&suite(id).unwrap(), seeds, dir.path(), workers).unwrap();
        }
    }
    let mut files = [Vec::new(), Vec::new()];
    for (f, d) in files.iter_mut().zip(&dirs) {
        collect_files(d.path(), d.path(), f);
    }
    let differing: Vec<&str> =
        files[0].iter().zip(&files[1]).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()).collect();
    let pass = files[0].len() == files[1].len() && differing.is_empty() && !files[0].is_empty();
    Outcome {
        name: "determinism",
        pass,
        detail: format!("{} record files compared across 1 and 2 workers; differing: {differing:?}", files[0].len()),
    }
}

type Check = Box<dyn FnOnce(&mut Lab) -> Outcome>;

fn main() -> ExitCode {
    let started = Instant::now();
    let mut lab = Lab::new();
    let shared = {
        let spectrum = suite("catch-spectrum").unwrap();
        let ablations = suite("catch-ablations").unwrap();
        let annealing = suite("catch-annealing").unwrap();
        let rms = cell(&spectrum.cells, "dqn-like-rmsprop").kind.clone();
        matches!(&rms, CellKind::Learner { .. })
            && cell(&ablations.cells, "ql").kind == rms
            && cell(&annealing.cells, "dqn-like-constant").kind == rms
    };
    if !shared {
        eprintln!("note: QL control cells differ from the spectrum rmsprop cell; no runs are shared");
    }
    let checks: Vec<Check> = vec![
        Box::new(|_| catch_value_iteration()),
        Box::new(|_| four_rooms_dp()),
        Box::new(|_| chain_oscillation()),
        Box::new(|_| bandit_churn()),
        Box::new(|_| numerical_suite()),
        Box::new(|_| determinism()),
        Box::new(catch_spectrum),
        Box::new(advantage_learning),
        Box::new(annealing),
        Box::new(frozen_linear),
        Box::new(stationary_data),
        Box::new(deep_sea),
        Box::new(per_state),
    ];
    let mut failed = 0;
    for check in checks {
        let o = check(&mut lab);
        failed += usize::from(!o.pass);
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    println!("acceptance: {failed} failing criteria, {} total", secs(started.elapsed()));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

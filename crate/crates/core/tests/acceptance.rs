//! Acceptance checks. Each prints one PASS/FAIL line and the binary exits
//! nonzero if any fails. Numeric arguments select a subset.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use d2dcache::harness::gap::{count_placements, gap_histogram};
use d2dcache::harness::sweep::{run_sweep, RunRow, SweepConfig, SweepMethod};
use d2dcache::milp::branch::BranchOptions;
use d2dcache::milp::{optimize_lower_bound, Method, MilpOptions};
use d2dcache::model::{check_feasible, Placement, Scenario, SearchParams};
use d2dcache::nlr::{expected_nlr, expected_nlr_monte_carlo, lower_bound_nlr};
use d2dcache::scenario::{generate, GeneratorConfig};
use d2dcache::search::{bisect_lower_bound, bisect_threshold, esa, LowerBoundSolver, SolveOutcome};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(limit: Duration, clock: Instant, v: Verdict) -> Verdict {
    let spent = clock.elapsed();
    if spent <= limit {
        v
    } else {
        verdict(false, format!("{} but took {:.0?} (limit {:.0?})", v.detail, spent, limit))
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random generator settings spanning sparse to dense contact regimes.
fn random_scenario(r: &mut ChaCha8Rng, users: usize, files: usize, max_rec: u32, max_cache: u32) -> Scenario {
    let config = GeneratorConfig {
        num_users: r.random_range(1..=users),
        num_files: r.random_range(1..=files),
        cache_capacity: r.random_range(0..=max_cache),
        contact_budget: r.random_range(1..=3),
        zipf_shape: r.random_range(0.0..1.5),
        gamma_scale: 10f64.powf(r.random_range(-3.3..-1.3)),
        recover_range: (1, r.random_range(1..=max_rec)),
        max_multiplier: r.random_range(1..=3),
        nlr_limit: r.random_range(0.2..0.95),
        seed: r.random(),
        ..Default::default()
    };
    generate(&config).expect("valid config")
}

/// Random increments that respect every constraint.
fn random_placement(r: &mut ChaCha8Rng, s: &Scenario) -> Placement {
    let (files, users) = (s.num_files(), s.num_users());
    let mut rows = vec![vec![0u32; users]; files];
    let attempts = r.random_range(0..=3 * files * users);
    for _ in 0..attempts {
        let (f, i) = (r.random_range(0..files), r.random_range(0..users));
        let load: u32 = rows.iter().map(|row| row[i]).sum();
        let spread: u32 = rows[f].iter().sum();
        if rows[f][i] < s.recover_segments(f) && load < s.cache_capacity(i) && spread < s.max_segments(f) {
            rows[f][i] += 1;
        }
    }
    Placement::from_rows(rows).unwrap()
}

/// Every feasible placement, by depth-first search over cells.
fn all_placements(s: &Scenario) -> Vec<Placement> {
    fn walk(s: &Scenario, cell: usize, rows: &mut Vec<Vec<u32>>, out: &mut Vec<Placement>) {
        let users = s.num_users();
        if cell == s.num_files() * users {
            out.push(Placement::from_rows(rows.clone()).unwrap());
            return;
        }
        let (f, i) = (cell / users, cell % users);
        let load: u32 = rows.iter().map(|row| row[i]).sum();
        let spread: u32 = rows[f].iter().sum();
        let top = s.recover_segments(f).min(s.cache_capacity(i) - load).min(s.max_segments(f) - spread);
        for x in 0..=top {
            rows[f][i] = x;
            walk(s, cell + 1, rows, out);
        }
        rows[f][i] = 0;
    }
    let mut out = Vec::new();
    walk(s, 0, &mut vec![vec![0; s.num_users()]; s.num_files()], &mut out);
    out
}

fn lower_bound_holds() -> Verdict {
    let clock = Instant::now();
    let mut r = rng(1);
    let triples: Vec<(Scenario, Placement, f64)> = (0..1000)
        .map(|_| {
            let s = random_scenario(&mut r, 8, 10, 3, 4);
            let p = random_placement(&mut r, &s);
            (s, p, r.random_range(0.0..400.0))
        })
        .collect();
    let worst = triples
        .par_iter()
        .map(|(s, p, t)| expected_nlr(s, p, *t).unwrap().total - lower_bound_nlr(s, p, *t).unwrap().total)
        .reduce(|| f64::INFINITY, f64::min);
    let v = verdict(worst >= -1e-10, format!("1000 triples, min(R - R_lb) = {worst:e}"));
    within(Duration::from_secs(60), clock, v)
}

fn monotone_in_window() -> Verdict {
    let clock = Instant::now();
    let mut r = rng(2);
    let cases: Vec<(Scenario, Placement, Vec<f64>)> = (0..200)
        .map(|_| {
            let s = random_scenario(&mut r, 8, 10, 3, 4);
            let p = random_placement(&mut r, &s);
            let mut grid: Vec<f64> = (0..20).map(|_| r.random_range(0.0..400.0)).collect();
            grid.sort_by(f64::total_cmp);
            (s, p, grid)
        })
        .collect();
    let worst = cases
        .par_iter()
        .map(|(s, p, grid)| {
            let exact: Vec<f64> = grid.iter().map(|&t| expected_nlr(s, p, t).unwrap().total).collect();
            let bound: Vec<f64> = grid.iter().map(|&t| lower_bound_nlr(s, p, t).unwrap().total).collect();
            exact
                .windows(2)
                .chain(bound.windows(2))
                .map(|w| w[1] - w[0])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    let v = verdict(worst <= 1e-10, format!("200 placements x 20 windows, largest rise {worst:e}"));
    within(Duration::from_secs(60), clock, v)
}

fn ilp_matches_enumeration() -> Verdict {
    let clock = Instant::now();
    let mut r = rng(3);
    let cases: Vec<(Scenario, f64)> = (0..100)
        .map(|_| {
            let mut s = random_scenario(&mut r, 3, 4, 2, 2);
            if s.cache_capacities().iter().all(|&c| c == 0) {
                s = s.with_uniform_capacity(r.random_range(1..=2));
            }
            (s, r.random_range(0.0..400.0))
        })
        .collect();
    let results: Vec<(f64, bool)> = cases
        .par_iter()
        .map(|(s, t)| {
            let brute = all_placements(s)
                .iter()
                .map(|p| lower_bound_nlr(s, p, *t).unwrap().total)
                .fold(f64::INFINITY, f64::min);
            let ilp = optimize_lower_bound(s, *t, Method::Exact, 0, &MilpOptions::default()).unwrap();
            ((ilp.objective - brute).abs(), ilp.optimal)
        })
        .collect();
    let worst = results.iter().map(|x| x.0).fold(0.0, f64::max);
    let proven = results.iter().filter(|x| x.1).count();
    let v = verdict(
        worst <= 1e-9 && proven == 100,
        format!("100 instances, max |B&B - enumeration| = {worst:e}, {proven} proven optimal"),
    );
    within(Duration::from_secs(120), clock, v)
}

fn gap_regime() -> Verdict {
    let mut fractions = Vec::new();
    let (mut max_gap, mut min_gap) = (f64::NEG_INFINITY, f64::INFINITY);
    for seed in 0..10 {
        let config = GeneratorConfig {
            num_users: 3,
            num_files: 8,
            cache_capacity: 2,
            contact_budget: 2,
            seed,
            ..Default::default()
        };
        let h = gap_histogram(&generate(&config).unwrap(), 200.0, 20).unwrap();
        fractions.push(h.zero_fraction());
        max_gap = max_gap.max(h.max_gap);
        min_gap = min_gap.min(h.min_gap);
    }
    fractions.sort_by(f64::total_cmp);
    let median = 0.5 * (fractions[4] + fractions[5]);
    verdict(
        (0.30..=0.70).contains(&median) && max_gap < 0.12 && min_gap >= -1e-10,
        format!("10 seeds, median zero-gap fraction {median:.3}, max gap {max_gap:.4}, min gap {min_gap:e}"),
    )
}

struct Solved {
    scenario: Scenario,
    lower: SolveOutcome,
    /// esa-ilp, then esa-rra when the rounded bound search found a start.
    refined: Vec<SolveOutcome>,
}

const ORDERING_INSTANCES: usize = 50;
const ORDERING_NODE_LIMIT: usize = 2_000;

fn solve_instance(s: &Scenario, seed: u64) -> Option<Solved> {
    let params = SearchParams::default();
    let options = MilpOptions { branch: BranchOptions { node_limit: ORDERING_NODE_LIMIT, ..Default::default() } };
    let mut solver = LowerBoundSolver::new(s, options, seed);
    let lower = bisect_lower_bound(&mut solver, &params, Method::Exact).unwrap()?;
    let mut refined = vec![esa(&mut solver, &params, &lower, Method::Exact).unwrap()];
    if let Some(start) = bisect_lower_bound(&mut solver, &params, Method::RelaxRound).unwrap() {
        refined.push(esa(&mut solver, &params, &start, Method::RelaxRound).unwrap());
    }
    Some(Solved { scenario: s.clone(), lower, refined })
}

/// The first solvable random instances, with the bound search and both ESA
/// variants.
fn solved_instances() -> &'static [Solved] {
    static CELL: OnceLock<Vec<Solved>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut r = rng(5);
        let mut solved = Vec::new();
        while solved.len() < ORDERING_INSTANCES {
            let batch: Vec<(Scenario, u64)> = (0..rayon::current_num_threads())
                .map(|_| (random_scenario(&mut r, 6, 12, 3, 3), r.random()))
                .collect();
            let done: Vec<Option<Solved>> = batch.par_iter().map(|(s, seed)| solve_instance(s, *seed)).collect();
            solved.extend(done.into_iter().flatten());
        }
        solved.truncate(ORDERING_INSTANCES);
        solved
    })
}

/// Smallest window, within `tol`, at which some feasible placement meets the
/// cap; `None` if none does by `t_max`.
fn enumerated_delay(s: &Scenario, params: &SearchParams) -> Option<f64> {
    let placements = all_placements(s);
    let meets = |t: f64| {
        placements.iter().any(|p| expected_nlr(s, p, t).unwrap().total <= s.nlr_limit() + 1e-9)
    };
    if meets(params.t_min) {
        return Some(params.t_min);
    }
    if !meets(params.t_max) {
        return None;
    }
    let (mut lo, mut hi) = (params.t_min, params.t_max);
    while hi - lo > params.tolerance {
        let mid = 0.5 * (lo + hi);
        if meets(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

fn bound_ordering() -> Verdict {
    let clock = Instant::now();
    let solved = solved_instances();
    let eps = 1e-6;
    let params = SearchParams::default();
    let mut failures = Vec::new();
    for (k, inst) in solved.iter().enumerate() {
        for o in &inst.refined {
            if inst.lower.delay > o.delay + eps {
                failures.push(format!("#{k} {}: {} > {}", o.producer, inst.lower.delay, o.delay));
            }
        }
    }
    let small: Vec<&Solved> = solved.iter().filter(|i| count_placements(&i.scenario) <= 5_000.0).collect();
    let grid: Vec<Option<f64>> = small.par_iter().map(|i| enumerated_delay(&i.scenario, &params)).collect();
    let mut checked = 0;
    for (inst, best) in small.iter().zip(&grid) {
        let Some(best) = *best else { continue };
        checked += 1;
        if inst.lower.delay > best + eps {
            failures.push(format!("bound {} above enumerated {best}", inst.lower.delay));
        }
        for o in inst.refined.iter().filter(|o| o.feasible) {
            if best > o.delay + eps {
                failures.push(format!("enumerated {best} above {} {}", o.producer, o.delay));
            }
        }
    }
    let unproven = solved.iter().filter(|i| !i.lower.proven).count();
    let rounded = solved.iter().filter(|i| i.refined.len() == 2).count();
    let v = verdict(
        failures.is_empty(),
        format!(
            "{} instances ({rounded} with a rounded start, {unproven} bound searches hit the node budget), {checked} enumerated; {}",
            solved.len(),
            if failures.is_empty() { "no violations".into() } else { failures.join("; ") }
        ),
    );
    within(Duration::from_secs(600), clock, v)
}

fn esa_feasibility() -> Verdict {
    let solved = solved_instances();
    let mut flagged = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut bad = 0;
    for inst in solved {
        for o in inst.refined.iter().filter(|o| o.feasible) {
            flagged += 1;
            let s = &inst.scenario;
            if !check_feasible(s, &o.placement).unwrap().is_ok() {
                bad += 1;
                continue;
            }
            let excess = expected_nlr(s, &o.placement, o.delay).unwrap().total - s.nlr_limit();
            worst = worst.max(excess);
            if excess > 1e-9 {
                bad += 1;
            }
        }
    }
    verdict(
        bad == 0 && flagged > 0,
        format!("{flagged} outcomes flagged feasible, {bad} fail re-evaluation, max R - R' = {worst:e}"),
    )
}

const SWEEP_SEEDS: u64 = 20;

fn method_ordering() -> Verdict {
    let config = SweepConfig {
        experiment: "ordering".into(),
        generator: GeneratorConfig { num_users: 10, num_files: 50, contact_budget: 2, nlr_limit: 0.7, ..Default::default() },
        caches: vec![2, 3, 4, 5],
        seeds: (0..SWEEP_SEEDS).collect(),
        methods: SweepMethod::ALL.to_vec(),
        params: SearchParams::default(),
        node_limit: 1,
    };
    let rows = run_sweep(&config).unwrap();
    let t_max = config.params.t_max;
    let errors = rows.iter().filter(|r| r.censored_delay(t_max).is_none()).count();
    let delay = |r: &RunRow| r.censored_delay(t_max).unwrap_or(f64::NAN);
    let mean = |c: u32, m: SweepMethod| {
        let d: Vec<f64> = rows.iter().filter(|r| r.cache == c && r.method == m).map(delay).collect();
        d.iter().sum::<f64>() / d.len() as f64
    };
    let mut chain_ok = true;
    let mut table = Vec::new();
    for &c in &config.caches {
        let [lb, ilp, rra, pop, rnd] = SweepMethod::ALL.map(|m| mean(c, m));
        chain_ok &= lb <= ilp + 1e-6 && ilp <= rra + 1e-6;
        table.push(format!("C{c} lb {lb:.1} ilp {ilp:.1} rra {rra:.1} pop {pop:.1} rnd {rnd:.1}"));
    }
    let pairs: Vec<(f64, f64)> = rows
        .chunks(SweepMethod::ALL.len())
        .map(|g| (delay(&g[1]), delay(&g[3])))
        .collect();
    let wins = pairs.iter().filter(|(ilp, pop)| ilp < pop).count();
    let share = wins as f64 / pairs.len() as f64;
    let monotone = SweepMethod::ALL.iter().all(|&m| {
        config.caches.windows(2).all(|w| mean(w[1], m) <= mean(w[0], m) + 1e-6)
    });
    verdict(
        errors == 0 && chain_ok && share >= 0.8,
        format!(
            "{} runs; esa-ilp beats popularity in {wins}/{} ({:.0}%); means nonincreasing in C: {monotone}; {}",
            pairs.len(),
            pairs.len(),
            100.0 * share,
            table.join(", ")
        ),
    )
}

fn mean_rate(s: &Scenario) -> f64 {
    let u = s.num_users();
    if u < 2 {
        return 0.0;
    }
    s.contact_rates().iter().flatten().sum::<f64>() / (u * (u - 1)) as f64
}

fn sampling_agrees() -> Verdict {
    let clock = Instant::now();
    let mut r = rng(8);
    let triples: Vec<(Scenario, Placement, f64, u64)> = (0..100)
        .map(|_| {
            let s = random_scenario(&mut r, 8, 10, 3, 4);
            let p = random_placement(&mut r, &s);
            // Mean contacts per pair in [0.05, 3]: past that, the events that
            // move the estimate are rarer than one in 10^5 draws.
            let t = r.random_range(0.05..3.0) / mean_rate(&s).max(1e-12);
            (s, p, t.min(400.0), r.random())
        })
        .collect();
    let mut inside = 0;
    let mut worst: f64 = 0.0;
    for (s, p, t, seed) in &triples {
        let exact = expected_nlr(s, p, *t).unwrap().total;
        let mc = expected_nlr_monte_carlo(s, p, *t, 100_000, *seed).unwrap();
        let miss = (mc.estimate - exact).abs();
        // Degenerate laws give zero spread; allow only rounding there.
        if miss <= 3.0 * mc.std_error + 1e-12 {
            inside += 1;
        }
        if mc.std_error > 0.0 {
            worst = worst.max(miss / mc.std_error);
        }
    }
    let v = verdict(inside >= 97, format!("{inside}/100 within 3 standard errors, worst {worst:.2} SE"));
    within(Duration::from_secs(120), clock, v)
}

fn bisection_converges() -> Verdict {
    let found = bisect_threshold(&SearchParams::default(), 0.5, |t| Ok::<_, ()>((-t).exp())).unwrap().unwrap();
    let err = (found.point - std::f64::consts::LN_2).abs();
    verdict(
        err <= 1e-6 && found.probes <= 29,
        format!("|T - ln 2| = {err:e} after {} probes", found.probes),
    )
}

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let checks: [(usize, &str, fn() -> Verdict); 9] = [
        (1, "lower bound never exceeds exact NLR", lower_bound_holds),
        (2, "NLR and bound nonincreasing in T", monotone_in_window),
        (3, "branch and bound equals enumeration", ilp_matches_enumeration),
        (4, "gap histogram regime", gap_regime),
        (5, "bound delay below ESA and enumerated delays", bound_ordering),
        (6, "ESA feasible outcomes re-evaluate feasible", esa_feasibility),
        (7, "method ordering at 10 users / 50 files", method_ordering),
        (8, "Monte Carlo agrees with exact evaluation", sampling_agrees),
        (9, "bisection on exp(-T) finds ln 2", bisection_converges),
    ];
    let mut failed = 0;
    for (n, name, check) in checks {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let clock = Instant::now();
        let v = check();
        failed += usize::from(!v.pass);
        println!(
            "{} [{n}] {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            clock.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    }
}

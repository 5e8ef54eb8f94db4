use std::collections::BTreeMap;

use gridshed_milp::{
    add_constraints, check_solution, export_problem, fix_variables, import_problem, read_trace_dump,
    solve_bb, solve_lp, write_trace_dump, ClockMode, LpStatus, MilpProblem, Row, Sense, SolveStatus,
    SolverConfig, VarType,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn exact_config() -> SolverConfig {
    SolverConfig {
        mip_gap_tol: 1e-9,
        ..SolverConfig::default()
    }
}

/// Knapsack-like MILP with binaries gating bounded continuous columns.
fn random_milp(seed: u64, nb: usize, nc: usize) -> MilpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = MilpProblem::new();
    for i in 0..nb {
        p.add_var(format!("z{i}"), rng.random_range(-5.0..2.0), 0.0, 1.0, VarType::Binary);
    }
    for i in 0..nc {
        let hi = rng.random_range(0.5..4.0);
        p.add_var(format!("y{i}"), rng.random_range(-3.0..3.0), 0.0, hi, VarType::Continuous);
    }
    let nrows = rng.random_range(1..5);
    for r in 0..nrows {
        let mut coeffs = Vec::new();
        for j in 0..nb + nc {
            if rng.random_bool(0.6) {
                coeffs.push((j, rng.random_range(0.1..4.0)));
            }
        }
        if coeffs.is_empty() {
            coeffs.push((0, 1.0));
        }
        let total: f64 = coeffs.iter().map(|c| c.1).sum();
        p.add_row(Row::new(format!("cap{r}"), coeffs, Sense::Le, total * rng.random_range(0.2..0.7)));
    }
    // continuous column linked to a binary: y_i <= hi * z_i
    for i in 0..nc.min(nb) {
        let hi = p.upper[nb + i];
        p.add_row(Row::new(format!("link{i}"), vec![(nb + i, 1.0), (i, -hi)], Sense::Le, 0.0));
    }
    if rng.random_bool(0.5) && nb >= 2 {
        p.add_row(Row::new("cover", vec![(0, 1.0), (1, 1.0)], Sense::Ge, 1.0));
    }
    p
}

/// Enumerates every binary assignment and solves the remaining LP.
fn brute_force(p: &MilpProblem) -> Option<f64> {
    let bins = p.binary_indices();
    let mut best: Option<f64> = None;
    for mask in 0u64..(1 << bins.len()) {
        let mut fix = BTreeMap::new();
        for (k, &j) in bins.iter().enumerate() {
            fix.insert(j, mask >> k & 1 == 1);
        }
        let q = fix_variables(p, &fix).unwrap();
        let r = solve_lp(&q).unwrap();
        if r.status == LpStatus::Optimal {
            best = Some(best.map_or(r.objective, |b: f64| b.min(r.objective)));
        }
    }
    best
}

/// Vertex enumeration for tiny LPs with finite bounds.
fn lp_vertices(p: &MilpProblem) -> Option<f64> {
    let n = p.num_vars();
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), p.lower[j]));
        planes.push((e, p.upper[j]));
    }
    for row in &p.rows {
        let mut a = vec![0.0; n];
        for &(j, v) in &row.coeffs {
            a[j] += v;
        }
        planes.push((a, row.rhs));
    }
    let mut best: Option<f64> = None;
    let k = planes.len();
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let mut m: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| {
                let mut r = planes[i].0.clone();
                r.push(planes[i].1);
                r
            })
            .collect();
        if let Some(x) = gauss(&mut m, n) {
            if check_solution(p, &x, 1e-7) {
                let v = p.objective_value(&x);
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < k - n + i {
                idx[i] += 1;
                for t in i + 1..n {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}

fn gauss(m: &mut [Vec<f64>], n: usize) -> Option<Vec<f64>> {
    for c in 0..n {
        let piv = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))?;
        if m[piv][c].abs() < 1e-10 {
            return None;
        }
        m.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for t in c..=n {
                    m[r][t] -= f * m[c][t];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

fn random_lp(seed: u64) -> MilpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..4);
    let mut p = MilpProblem::new();
    for j in 0..n {
        let lo = rng.random_range(-3.0..1.0);
        let hi = lo + rng.random_range(0.5..5.0);
        p.add_var(format!("x{j}"), rng.random_range(-2.0..2.0), lo, hi, VarType::Continuous);
    }
    for r in 0..rng.random_range(0..4) {
        let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.random_range(-2.0..2.0))).collect();
        let sense = match rng.random_range(0..3) {
            0 => Sense::Le,
            1 => Sense::Ge,
            _ => Sense::Eq,
        };
        p.add_row(Row::new(format!("r{r}"), coeffs, sense, rng.random_range(-2.0..2.0)));
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simplex_matches_vertex_enumeration(seed in any::<u64>()) {
        let p = random_lp(seed);
        let r = solve_lp(&p).unwrap();
        match lp_vertices(&p) {
            Some(v) => {
                prop_assert_eq!(r.status, LpStatus::Optimal);
                prop_assert!((r.objective - v).abs() <= 1e-6 * v.abs().max(1.0), "{} vs {}", r.objective, v);
                prop_assert!(check_solution(&p, &r.x, 1e-6));
            }
            None => prop_assert_eq!(r.status, LpStatus::Infeasible),
        }
    }

    #[test]
    fn optimal_lp_is_complementary(seed in any::<u64>()) {
        let p = random_lp(seed);
        let r = solve_lp(&p).unwrap();
        if r.status == LpStatus::Optimal {
            for (i, row) in p.rows.iter().enumerate() {
                let slack = row.activity(&r.x) - row.rhs;
                prop_assert!((slack * r.duals[i]).abs() < 1e-6);
            }
            for j in 0..p.num_vars() {
                let d = r.reduced_costs[j];
                let at_lo = (r.x[j] - p.lower[j]).abs() < 1e-7;
                let at_hi = (r.x[j] - p.upper[j]).abs() < 1e-7;
                if !at_lo && !at_hi {
                    prop_assert!(d.abs() < 1e-6);
                } else if at_lo && !at_hi {
                    prop_assert!(d > -1e-6);
                } else if at_hi && !at_lo {
                    prop_assert!(d < 1e-6);
                }
            }
        }
    }

    #[test]
    fn bb_matches_enumeration(seed in any::<u64>(), nb in 1usize..11, nc in 0usize..4) {
        let p = random_milp(seed, nb, nc);
        let t = solve_bb(&p, &exact_config()).unwrap();
        match brute_force(&p) {
            Some(v) => {
                prop_assert_eq!(t.status, SolveStatus::Optimal);
                let got = t.best_objective().unwrap();
                prop_assert!((got - v).abs() <= 1e-6, "{} vs {}", got, v);
                prop_assert!(t.best_bound <= got + 1e-9);
            }
            None => {
                prop_assert_eq!(t.status, SolveStatus::Infeasible);
                prop_assert!(t.incumbents.is_empty());
            }
        }
    }

    #[test]
    fn trace_invariants_hold(seed in any::<u64>(), pool in 1usize..5) {
        let p = random_milp(seed, 8, 2);
        let cfg = SolverConfig { pool_size: pool, ..SolverConfig::default() };
        let t = solve_bb(&p, &cfg).unwrap();
        prop_assert!(t.incumbents.len() <= pool);
        prop_assert_eq!(t.incumbents.len(), t.timeline.len().min(pool));
        for w in t.incumbents.windows(2) {
            prop_assert!(w[1].objective < w[0].objective);
            prop_assert!(w[1].time >= w[0].time);
        }
        for inc in &t.incumbents {
            prop_assert!(check_solution(&p, &inc.x, 1e-6));
        }
        if let Some(best) = t.best_objective() {
            prop_assert!(t.best_bound <= best + 1e-9);
        }
    }

    #[test]
    fn restriction_never_improves(seed in any::<u64>()) {
        let p = random_milp(seed, 7, 2);
        let extra = Row::new("cut", vec![(0, 1.0), (2, 1.0)], Sense::Le, 1.0);
        let q = add_constraints(&p, &[extra.clone()]).unwrap();
        let a = solve_bb(&p, &exact_config()).unwrap();
        let b = solve_bb(&q, &exact_config()).unwrap();
        if let (Some(va), Some(vb)) = (a.best_objective(), b.best_objective()) {
            prop_assert!(vb >= va - 1e-7);
        }
        for inc in &b.incumbents {
            prop_assert!(extra.violation(&inc.x) <= 1e-6);
        }
    }

    #[test]
    fn export_import_round_trip(seed in any::<u64>()) {
        let p = random_milp(seed, 4, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.lp");
        export_problem(&p, &path).unwrap();
        let q = import_problem(&path).unwrap();
        prop_assert_eq!(&q.objective, &p.objective);
        prop_assert_eq!(&q.lower, &p.lower);
        prop_assert_eq!(&q.upper, &p.upper);
        prop_assert_eq!(&q.var_types, &p.var_types);
        for (a, b) in p.rows.iter().zip(&q.rows) {
            prop_assert_eq!(&a.coeffs, &b.coeffs);
            prop_assert_eq!(a.rhs, b.rhs);
        }
    }
}

#[test]
fn dual_bound_below_every_feasible_point() {
    for seed in 0..20 {
        let p = random_milp(seed, 6, 1);
        let t = solve_bb(&p, &SolverConfig::default()).unwrap();
        let bins = p.binary_indices();
        for mask in 0u64..(1 << bins.len()) {
            let fix: BTreeMap<usize, bool> =
                bins.iter().enumerate().map(|(k, &j)| (j, mask >> k & 1 == 1)).collect();
            let r = solve_lp(&fix_variables(&p, &fix).unwrap()).unwrap();
            if r.status == LpStatus::Optimal {
                assert!(t.best_bound <= r.objective + 1e-9);
            }
        }
    }
}

#[test]
fn ten_binary_knapsack_matches_enumeration() {
    let weights = [3.0, 4.0, 5.0, 6.0, 2.0, 7.0, 8.0, 1.5, 4.5, 5.5];
    let values = [4.0, 5.0, 6.5, 7.0, 2.5, 9.0, 9.5, 2.0, 5.5, 6.0];
    let mut p = MilpProblem::new();
    for i in 0..10 {
        p.add_var(format!("k{i}"), -values[i], 0.0, 1.0, VarType::Binary);
    }
    let slack = p.add_var("s", 0.3, 0.0, 2.0, VarType::Continuous);
    let mut coeffs: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
    coeffs.push((slack, -1.0));
    p.add_row(Row::new("cap", coeffs, Sense::Le, 20.0));
    let oracle = brute_force(&p).unwrap();
    let t = solve_bb(&p, &exact_config()).unwrap();
    assert!((t.best_objective().unwrap() - oracle).abs() < 1e-6);
}

/// Multi-row knapsack; these yield the longest incumbent timelines.
fn knapsack(seed: u64, n: usize) -> MilpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = MilpProblem::new();
    for i in 0..n {
        p.add_var(format!("z{i}"), -rng.random_range(1.0..10.0), 0.0, 1.0, VarType::Binary);
    }
    for r in 0..3 {
        let w: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.random_range(0.0..10.0))).collect();
        let cap = 0.5 * w.iter().map(|c| c.1).sum::<f64>();
        p.add_row(Row::new(format!("c{r}"), w, Sense::Le, cap));
    }
    p
}

#[test]
fn pool_keeps_exactly_pool_size_best() {
    let pool_size = 3;
    let mut checked = 0;
    for seed in 0..200 {
        let p = knapsack(seed, 14);
        let cfg = SolverConfig { pool_size, ..SolverConfig::default() };
        let t = solve_bb(&p, &cfg).unwrap();
        if t.timeline.len() > pool_size {
            assert_eq!(t.incumbents.len(), pool_size);
            let tail: Vec<f64> = t.timeline[t.timeline.len() - pool_size..].iter().map(|e| e.1).collect();
            let pool: Vec<f64> = t.incumbents.iter().map(|i| i.objective).collect();
            assert_eq!(tail, pool);
            assert!(pool.windows(2).all(|w| w[1] < w[0]));
            checked += 1;
        }
    }
    assert!(checked >= 10, "only {checked} instances overflowed the pool");
}

#[test]
fn node_clock_runs_are_identical() {
    let p = random_milp(7, 10, 3);
    let a = solve_bb(&p, &SolverConfig::default()).unwrap();
    let b = solve_bb(&p, &SolverConfig::default()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.clock_mode, ClockMode::NodeCount);
}

#[test]
fn fixing_nothing_keeps_optimum() {
    let p = random_milp(3, 8, 2);
    let q = fix_variables(&p, &BTreeMap::new()).unwrap();
    let a = solve_bb(&p, &exact_config()).unwrap();
    let b = solve_bb(&q, &exact_config()).unwrap();
    assert_eq!(a.best_objective(), b.best_objective());
}

#[test]
fn zero_upper_row_forces_variable_off() {
    let p = random_milp(11, 6, 1);
    let q = add_constraints(&p, &[Row::new("off", vec![(1, 1.0)], Sense::Le, 0.0)]).unwrap();
    let t = solve_bb(&q, &SolverConfig::default()).unwrap();
    for inc in &t.incumbents {
        assert_eq!(inc.x[1], 0.0);
    }
}

#[test]
fn perturbed_binary_breaks_tight_row() {
    let mut p = MilpProblem::new();
    let a = p.add_var("a", -1.0, 0.0, 1.0, VarType::Binary);
    let b = p.add_var("b", -1.0, 0.0, 1.0, VarType::Binary);
    p.add_row(Row::new("one", vec![(a, 1.0), (b, 1.0)], Sense::Le, 1.0));
    let t = solve_bb(&p, &SolverConfig::default()).unwrap();
    let mut x = t.best().unwrap().x.clone();
    assert!(check_solution(&p, &x, 1e-6));
    let off = if x[a] == 0.0 { a } else { b };
    x[off] = 1.0;
    assert!(!check_solution(&p, &x, 1e-6));
}

#[test]
fn trace_dump_round_trips() {
    let p = random_milp(5, 8, 2);
    let t = solve_bb(&p, &SolverConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    write_trace_dump(&t, &path).unwrap();
    assert_eq!(read_trace_dump(&path).unwrap(), t.incumbents);
}

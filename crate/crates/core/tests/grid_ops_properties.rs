mod common;

use gridshed::grid::{sample_instance, NetworkModel};
use gridshed::ops::{build_ops_milp, evaluate_topology, n0_max, n0_min, residual_risk, risk_bounds, threshold_decisions};
use gridshed_milp::{solve_bb, SolverConfig};
use proptest::prelude::*;

fn subset_minimum(risks: &[f64], budget: f64) -> usize {
    let n = risks.len();
    let total: f64 = risks.iter().sum();
    (0u32..1 << n)
        .filter(|m| {
            let removed: f64 = (0..n).filter(|&i| m >> i & 1 == 1).map(|i| risks[i]).sum();
            total - removed <= budget
        })
        .map(|m| m.count_ones() as usize)
        .min()
        .unwrap_or(n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn network_json_round_trips(seed in 0u64..1000, buses in 3usize..40) {
        let (net, _) = common::network(seed, buses);
        let back = NetworkModel::from_json(&net.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, net);
    }

    #[test]
    fn sampling_is_pure_and_consistent(seed in 0u64..1000, buses in 3usize..30, day in 0u64..500) {
        let (net, dist) = common::network(seed, buses);
        let a = sample_instance(&net, &dist, day);
        prop_assert_eq!(&a, &sample_instance(&net, &dist, day));
        prop_assert!(a.validate(&net).is_ok());
        let lines: Vec<&str> = net.lines.iter().map(|l| l.id.as_str()).collect();
        prop_assert!(a.line_risk.keys().all(|k| lines.contains(&k.as_str())));
        let buses: Vec<&str> = net.buses.iter().map(|b| b.id.as_str()).collect();
        prop_assert!(a.bus_load.keys().all(|k| buses.contains(&k.as_str())));
    }

    #[test]
    fn incumbents_respect_risk_and_count_bounds(seed in 0u64..500, buses in 5usize..12, pen in any::<bool>()) {
        let (net, inst) = common::case(seed, buses);
        let (p, map) = build_ops_milp(&inst, &net, &common::ops(pen)).unwrap();
        let risks = inst.switch_risks(&net);
        let bounds = risk_bounds(&risks, inst.risk_budget);
        let trace = solve_bb(&p, &SolverConfig { pool_size: 5, ..SolverConfig::default() }).unwrap();
        prop_assert!(!trace.incumbents.is_empty());
        for inc in &trace.incumbents {
            let z = map.switch_values(&inc.x);
            prop_assert!(residual_risk(&risks, &z) <= inst.risk_budget + 1e-6 * inst.risk_budget.max(1.0));
            prop_assert!(z.iter().filter(|&&on| !on).count() >= bounds.n0_min);
        }
        let mut order: Vec<usize> = (0..risks.len()).collect();
        order.sort_by(|&a, &b| risks[a].total_cmp(&risks[b]).then(a.cmp(&b)));
        let mut z = vec![true; risks.len()];
        order.iter().take(bounds.n0_max).for_each(|&i| z[i] = false);
        prop_assert!(evaluate_topology(&z, &inst, &net, &common::ops(pen)).unwrap().feasible);
    }

    #[test]
    fn ops_optimum_never_worse_than_threshold(seed in 0u64..500, buses in 5usize..14, pen in any::<bool>()) {
        let (net, dist) = common::network(seed, buses);
        let inst = sample_instance(&net, &dist, seed);
        let cfg = common::ops(pen);
        let z = threshold_decisions(&inst.switch_risks(&net), dist.budget_threshold);
        let thr = evaluate_topology(&z, &inst, &net, &cfg).unwrap();
        prop_assert!(thr.feasible);
        let (p, _) = build_ops_milp(&inst, &net, &cfg).unwrap();
        let best = solve_bb(&p, &common::exact()).unwrap().best_objective().unwrap();
        prop_assert!(best <= thr.objective + 1e-9);
    }

    #[test]
    fn switched_off_lines_leave_ohm_rows_slack(seed in 0u64..500, buses in 3usize..20) {
        let (net, inst) = common::case(seed, buses);
        let (p, map) = build_ops_milp(&inst, &net, &common::ops(false)).unwrap();
        for l in net.switchable_lines() {
            let fr = map.angle_vars[&l.from_bus];
            let to = map.angle_vars[&l.to_bus];
            for row in p.rows.iter().filter(|r| r.name == format!("ohm_lo[{}]", l.id) || r.name == format!("ohm_hi[{}]", l.id)) {
                for (a, b) in [(p.lower[fr], p.upper[to]), (p.upper[fr], p.lower[to]), (p.lower[fr], p.lower[to]), (p.upper[fr], p.upper[to])] {
                    let mut x = vec![0.0; p.num_vars()];
                    x[fr] = a;
                    x[to] = b;
                    prop_assert!(row.violation(&x) <= 1e-12, "{} at ({a}, {b})", row.name);
                }
            }
        }
    }

    #[test]
    fn count_bounds_match_enumeration(risks in prop::collection::vec(0.0f64..50.0, 1..13), frac in 0.0f64..1.0) {
        let budget = frac * risks.iter().sum::<f64>();
        prop_assert_eq!(n0_min(&risks, budget), subset_minimum(&risks, budget));
        prop_assert!(n0_min(&risks, budget) <= n0_max(&risks, budget));
    }
}

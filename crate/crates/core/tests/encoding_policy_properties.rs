mod common;

use gridshed::encoding::{encode, encode_problem, BipartiteGraph};
use gridshed::ops::build_ops_milp;
use gridshed::policy::{batch_loss, gradient_check, PolicyModel, TrainingSample};
use gridshed_milp::{LpResult, MilpProblem, Row};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ops_problem(seed: u64, buses: usize) -> (MilpProblem, Vec<usize>) {
    let (net, inst) = common::case(seed, buses);
    let (p, map) = build_ops_milp(&inst, &net, &common::ops(seed % 2 == 0)).unwrap();
    (p, map.switch_indices())
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

/// Column `i` of the result is column `vp[i]` of `p`; row `r` is row `rp[r]`.
fn permute(p: &MilpProblem, root: &LpResult, vp: &[usize], rp: &[usize]) -> (MilpProblem, LpResult) {
    let mut inv = vec![0; vp.len()];
    for (new, &old) in vp.iter().enumerate() {
        inv[old] = new;
    }
    let pick = |v: &[f64]| vp.iter().map(|&o| v[o]).collect::<Vec<_>>();
    let q = MilpProblem {
        names: vp.iter().map(|&o| p.names[o].clone()).collect(),
        objective: pick(&p.objective),
        lower: pick(&p.lower),
        upper: pick(&p.upper),
        var_types: vp.iter().map(|&o| p.var_types[o]).collect(),
        rows: rp
            .iter()
            .map(|&o| {
                let r = &p.rows[o];
                Row::new(r.name.clone(), r.coeffs.iter().map(|&(j, a)| (inv[j], a)).collect(), r.sense, r.rhs)
            })
            .collect(),
        objective_offset: p.objective_offset,
    };
    let r = LpResult {
        x: pick(&root.x),
        reduced_costs: pick(&root.reduced_costs),
        basis: vp.iter().map(|&o| root.basis[o]).collect(),
        ..root.clone()
    };
    (q, r)
}

/// Equal up to summation-order rounding.
fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

fn edge_set(g: &BipartiteGraph, vmap: &[usize], cmap: &[usize]) -> Vec<(usize, usize, u64)> {
    let mut e: Vec<_> = g
        .edges
        .iter()
        .zip(&g.edge_features)
        .map(|(&(c, v), f)| (cmap[c], vmap[v], f[0].to_bits()))
        .collect();
    e.sort_unstable();
    e
}

fn random_sample(seed: u64) -> TrainingSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, targets) = ops_problem(seed, rng.random_range(4..10));
    let (g, _) = encode_problem(&p, &targets).unwrap();
    let n = targets.len();
    let pool = (0..rng.random_range(1..5))
        .map(|_| ((0..n).map(|_| rng.random_bool(0.5)).collect(), rng.random_range(-5.0..5.0)))
        .collect();
    TrainingSample::new(g, pool).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encoding_commutes_with_permutation(seed in 0u64..1000, buses in 3usize..12) {
        let (p, targets) = ops_problem(seed, buses);
        let (g, root) = encode_problem(&p, &targets).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vp = shuffled(p.num_vars(), &mut rng);
        let rp = shuffled(p.num_rows(), &mut rng);
        let (q, qroot) = permute(&p, &root, &vp, &rp);
        let mut inv = vec![0; vp.len()];
        for (new, &old) in vp.iter().enumerate() {
            inv[old] = new;
        }
        let qt: Vec<usize> = targets.iter().map(|&t| inv[t]).collect();
        let h = encode(&q, &qroot, &qt).unwrap();
        for (new, &old) in vp.iter().enumerate() {
            prop_assert!(close(&h.var_features[new], &g.var_features[old]), "variable {}", old);
        }
        for (new, &old) in rp.iter().enumerate() {
            prop_assert!(close(&h.con_features[new], &g.con_features[old]), "row {}", old);
        }
        let ident_v: Vec<usize> = (0..p.num_vars()).collect();
        let ident_c: Vec<usize> = (0..p.num_rows()).collect();
        let mut rinv = vec![0; rp.len()];
        for (new, &old) in rp.iter().enumerate() {
            rinv[old] = new;
        }
        prop_assert_eq!(edge_set(&h, &ident_v, &ident_c), edge_set(&g, &inv, &rinv));
        prop_assert_eq!(h.target_mask, qt);
    }

    #[test]
    fn features_are_bounded_and_deterministic(seed in 0u64..1000, buses in 3usize..16) {
        let (p, targets) = ops_problem(seed, buses);
        let (g, root) = encode_problem(&p, &targets).unwrap();
        prop_assert_eq!(&encode(&p, &root, &targets).unwrap(), &g);
        for f in &g.var_features {
            for (k, v) in f.iter().enumerate() {
                prop_assert!(if k == 5 { v.abs() <= 10.0 } else { v.abs() <= 1.0 }, "feature {} = {}", k, v);
            }
        }
        prop_assert!(g.con_features.iter().chain(&g.edge_features).flatten().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn forward_is_equivariant_over_targets(seed in 0u64..1000, k in 4usize..17, heads in 1usize..4) {
        let s = random_sample(seed);
        let model = PolicyModel::new(k, heads, seed);
        let probs = model.forward(&s.graph).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let order = shuffled(s.graph.target_mask.len(), &mut rng);
        let mut g = s.graph.clone();
        g.target_mask = order.iter().map(|&i| s.graph.target_mask[i]).collect();
        let permuted = model.forward(&g).unwrap();
        for (pos, &i) in order.iter().enumerate() {
            prop_assert_eq!(permuted[pos], probs[i]);
        }
    }

    #[test]
    fn attention_over_incident_edges_sums_to_one(seed in 0u64..1000, heads in 1usize..5) {
        let s = random_sample(seed);
        let model = PolicyModel::new(8, heads, seed);
        let att = model.attention(&s.graph).unwrap();
        let g = &s.graph;
        for (round, per_head) in att.iter().enumerate() {
            let nt = if round == 0 { g.num_cons() } else { g.num_vars() };
            prop_assert_eq!(per_head.len(), heads);
            for w in per_head {
                let mut sums = vec![0.0; nt];
                let mut deg = vec![0usize; nt];
                for (e, &(c, v)) in g.edges.iter().enumerate() {
                    let t = if round == 0 { c } else { v };
                    sums[t] += w[e];
                    deg[t] += 1;
                }
                for t in 0..nt {
                    if deg[t] > 0 {
                        prop_assert!((sums[t] - 1.0).abs() < 1e-12, "round {} node {} sums to {}", round, t, sums[t]);
                    }
                }
            }
        }
    }

    #[test]
    fn loss_is_nonnegative(seed in 0u64..1000, k in 4usize..17) {
        let s = random_sample(seed);
        let model = PolicyModel::new(k, 2, seed);
        prop_assert!(batch_loss(&model, std::slice::from_ref(&s)).unwrap() >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn every_block_passes_gradient_check(seed in 0u64..1000) {
        let s = random_sample(seed);
        let model = PolicyModel::new(8, 2, seed);
        let count = 3 * model.blocks().len();
        let check = gradient_check(&model, &s, 1e-5, count, seed).unwrap();
        prop_assert_eq!(check.checked, count);
        prop_assert!(check.max_rel_error < 1e-3, "error {} at {}", check.max_rel_error, check.worst_param);
    }
}

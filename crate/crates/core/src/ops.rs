//! The OPS mixed-binary program, the threshold baseline, and the
//! de-energization count bounds.

use std::collections::BTreeMap;

use gridshed_milp::{solve_lp, LpStatus, MilpProblem, Row, Sense, VarType};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{NetworkModel, OpsInstance};

/// Objective reported for topologies that violate the risk budget or admit no dispatch.
pub const INFEASIBLE_OBJECTIVE: f64 = 1.0e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyDirection {
    /// `+eps * sum(z)`
    #[default]
    AsPrinted,
    /// `+eps * sum(1 - z)`
    PenalizeDeenergized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpsConfig {
    pub epsilon: f64,
    pub theta_max: f64,
    #[serde(default)]
    pub penalty_direction: PenaltyDirection,
}

impl Default for OpsConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            theta_max: 0.6,
            penalty_direction: PenaltyDirection::AsPrinted,
        }
    }
}

impl OpsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !(self.theta_max > 0.0) {
            return Err(Error::InvalidParameter(
                "epsilon must be >= 0 and theta_max > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Where each physical quantity lives in the MILP column vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpsVariableMap {
    pub gen_vars: BTreeMap<String, usize>,
    pub shed_vars: BTreeMap<String, usize>,
    pub flow_vars: BTreeMap<String, usize>,
    pub angle_vars: BTreeMap<String, usize>,
    /// Switchable lines sorted by id with their binary column.
    pub switch_vars: Vec<(String, usize)>,
}

impl OpsVariableMap {
    pub fn switch_indices(&self) -> Vec<usize> {
        self.switch_vars.iter().map(|&(_, j)| j).collect()
    }

    pub fn switch_line_ids(&self) -> Vec<String> {
        self.switch_vars.iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn load_shed(&self, x: &[f64]) -> f64 {
        self.shed_vars.values().map(|&j| x[j]).sum()
    }

    /// Projects a full solution onto the switch vector.
    pub fn switch_values(&self, x: &[f64]) -> Vec<bool> {
        self.switch_vars.iter().map(|&(_, j)| x[j] > 0.5).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskBounds {
    pub n0_min: usize,
    pub n0_max: usize,
}

fn nonzero(coeffs: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    coeffs.into_iter().filter(|&(_, a)| a != 0.0).collect()
}

/// Builds the OPS program for one instance.
pub fn build_ops_milp(
    inst: &OpsInstance,
    net: &NetworkModel,
    cfg: &OpsConfig,
) -> Result<(MilpProblem, OpsVariableMap)> {
    cfg.validate()?;
    inst.validate(net)?;
    let bus_idx = net.bus_index();
    let reference = net.reference_bus();
    let mut p = MilpProblem::new();

    let mut gen_vars = BTreeMap::new();
    for g in &net.generators {
        let j = p.add_var(format!("pg[{}]", g.id), 0.0, 0.0, inst.cap(g), VarType::Continuous);
        gen_vars.insert(g.id.clone(), j);
    }
    let mut shed_vars = BTreeMap::new();
    let mut shed_cols = Vec::with_capacity(net.buses.len());
    for b in &net.buses {
        let j = p.add_var(format!("pls[{}]", b.id), 1.0, 0.0, inst.load(&b.id), VarType::Continuous);
        shed_vars.insert(b.id.clone(), j);
        shed_cols.push(j);
    }
    let mut flow_vars = BTreeMap::new();
    let mut flow_cols = Vec::with_capacity(net.lines.len());
    for l in &net.lines {
        let j = p.add_var(format!("f[{}]", l.id), 0.0, -l.rating, l.rating, VarType::Continuous);
        flow_vars.insert(l.id.clone(), j);
        flow_cols.push(j);
    }
    let mut angle_vars = BTreeMap::new();
    let mut angle_cols = Vec::with_capacity(net.buses.len());
    for (i, b) in net.buses.iter().enumerate() {
        let (lo, hi) = if i == reference {
            (0.0, 0.0)
        } else {
            (-cfg.theta_max, cfg.theta_max)
        };
        let j = p.add_var(format!("theta[{}]", b.id), 0.0, lo, hi, VarType::Continuous);
        angle_vars.insert(b.id.clone(), j);
        angle_cols.push(j);
    }
    let switch_lines = net.switchable_lines();
    let (z_cost, offset) = match cfg.penalty_direction {
        PenaltyDirection::AsPrinted => (cfg.epsilon, 0.0),
        PenaltyDirection::PenalizeDeenergized => (-cfg.epsilon, cfg.epsilon * switch_lines.len() as f64),
    };
    p.objective_offset = offset;
    let mut switch_vars = Vec::with_capacity(switch_lines.len());
    let mut z_col: BTreeMap<&str, usize> = BTreeMap::new();
    for l in &switch_lines {
        let j = p.add_var(format!("z[{}]", l.id), z_cost, 0.0, 1.0, VarType::Binary);
        switch_vars.push((l.id.clone(), j));
        z_col.insert(l.id.as_str(), j);
    }

    let theta_lo = -2.0 * cfg.theta_max;
    let theta_hi = 2.0 * cfg.theta_max;
    for (k, l) in net.lines.iter().enumerate() {
        let f = flow_cols[k];
        let fr = angle_cols[bus_idx[l.from_bus.as_str()]];
        let to = angle_cols[bus_idx[l.to_bus.as_str()]];
        let b = l.susceptance;
        match z_col.get(l.id.as_str()) {
            Some(&z) => {
                p.add_row(Row::new(
                    format!("flow_hi[{}]", l.id),
                    nonzero(vec![(f, 1.0), (z, -l.rating)]),
                    Sense::Le,
                    0.0,
                ));
                p.add_row(Row::new(
                    format!("flow_lo[{}]", l.id),
                    nonzero(vec![(f, 1.0), (z, l.rating)]),
                    Sense::Ge,
                    0.0,
                ));
                p.add_row(Row::new(
                    format!("ohm_lo[{}]", l.id),
                    nonzero(vec![(f, 1.0), (fr, b), (to, -b), (z, b.abs() * theta_lo)]),
                    Sense::Ge,
                    b.abs() * theta_lo,
                ));
                p.add_row(Row::new(
                    format!("ohm_hi[{}]", l.id),
                    nonzero(vec![(f, 1.0), (fr, b), (to, -b), (z, b.abs() * theta_hi)]),
                    Sense::Le,
                    b.abs() * theta_hi,
                ));
            }
            None => {
                p.add_row(Row::new(
                    format!("ohm[{}]", l.id),
                    nonzero(vec![(f, 1.0), (fr, b), (to, -b)]),
                    Sense::Eq,
                    0.0,
                ));
            }
        }
    }
    let mut balance: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.buses.len()];
    for (k, l) in net.lines.iter().enumerate() {
        balance[bus_idx[l.from_bus.as_str()]].push((flow_cols[k], 1.0));
        balance[bus_idx[l.to_bus.as_str()]].push((flow_cols[k], -1.0));
    }
    for g in &net.generators {
        balance[bus_idx[g.bus.as_str()]].push((gen_vars[&g.id], -1.0));
    }
    for (i, b) in net.buses.iter().enumerate() {
        let mut coeffs = std::mem::take(&mut balance[i]);
        coeffs.push((shed_cols[i], -1.0));
        p.add_row(Row::new(format!("balance[{}]", b.id), nonzero(coeffs), Sense::Eq, -inst.load(&b.id)));
    }
    if !switch_lines.is_empty() {
        let coeffs = switch_vars
            .iter()
            .map(|(id, j)| (*j, inst.risk(id)))
            .collect();
        p.add_row(Row::new("risk", nonzero(coeffs), Sense::Le, inst.risk_budget));
    }
    let map = OpsVariableMap {
        gen_vars,
        shed_vars,
        flow_vars,
        angle_vars,
        switch_vars,
    };
    Ok((p, map))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyEval {
    pub objective: f64,
    pub load_shed: f64,
    pub feasible: bool,
}

impl TopologyEval {
    fn infeasible() -> Self {
        Self {
            objective: INFEASIBLE_OBJECTIVE,
            load_shed: INFEASIBLE_OBJECTIVE,
            feasible: false,
        }
    }
}

fn budget_slack(total: f64) -> f64 {
    1e-9 * total.abs().max(1.0)
}

fn dispatch_with(z: &[bool], p: &MilpProblem, map: &OpsVariableMap) -> Result<Option<(f64, f64)>> {
    if z.len() != map.switch_vars.len() {
        return Err(Error::Dimension {
            expected: map.switch_vars.len(),
            got: z.len(),
        });
    }
    let mut q = p.clone();
    for (&(_, j), &on) in map.switch_vars.iter().zip(z) {
        let v = if on { 1.0 } else { 0.0 };
        q.lower[j] = v;
        q.upper[j] = v;
    }
    let r = solve_lp(&q)?;
    Ok(match r.status {
        LpStatus::Optimal => Some((r.objective, map.load_shed(&r.x))),
        _ => None,
    })
}

/// Scores a fixed topology `z` (one entry per switchable line, sorted by id).
pub fn evaluate_topology(
    z: &[bool],
    inst: &OpsInstance,
    net: &NetworkModel,
    cfg: &OpsConfig,
) -> Result<TopologyEval> {
    let (p, map) = build_ops_milp(inst, net, cfg)?;
    let risks = inst.switch_risks(net);
    if z.len() != risks.len() {
        return Err(Error::Dimension {
            expected: risks.len(),
            got: z.len(),
        });
    }
    if residual_risk(&risks, z) > inst.risk_budget + budget_slack(inst.risk_budget) {
        return Ok(TopologyEval::infeasible());
    }
    Ok(match dispatch_with(z, &p, &map)? {
        Some((objective, load_shed)) => TopologyEval {
            objective,
            load_shed,
            feasible: true,
        },
        None => TopologyEval::infeasible(),
    })
}

/// Load shed (per unit) of the threshold topology with the risk row dropped
/// and the objective reduced to shedding alone.
pub fn threshold_load_shed(inst: &OpsInstance, net: &NetworkModel, cfg: &OpsConfig, threshold: f64) -> Result<f64> {
    let shed_only = OpsConfig {
        epsilon: 0.0,
        ..*cfg
    };
    let (mut p, map) = build_ops_milp(inst, net, &shed_only)?;
    p.rows.retain(|r| r.name != "risk");
    let z = threshold_decisions(&inst.switch_risks(net), threshold);
    match dispatch_with(&z, &p, &map)? {
        Some((_, shed)) => Ok(shed),
        None => Err(Error::InvalidParameter("threshold dispatch LP is infeasible".into())),
    }
}

/// `z_l = false` (de-energized) iff the line's risk exceeds `threshold`.
pub fn threshold_decisions(risks: &[f64], threshold: f64) -> Vec<bool> {
    risks.iter().map(|&r| r <= threshold).collect()
}

/// Total risk of the energized lines.
pub fn residual_risk(risks: &[f64], z: &[bool]) -> f64 {
    risks.iter().zip(z).filter(|(_, &on)| on).map(|(r, _)| r).sum()
}

/// Counts how many lines must be removed, in `order`, before the rest fits the budget.
fn removals_until_feasible(risks: &[f64], budget: f64, order: &[usize]) -> usize {
    let total: f64 = risks.iter().sum();
    let slack = budget_slack(total.max(budget));
    let mut removed = vec![false; risks.len()];
    for k in 0..=order.len() {
        let rest: f64 = risks
            .iter()
            .zip(&removed)
            .filter(|(_, &r)| !r)
            .map(|(v, _)| v)
            .sum();
        if rest <= budget + slack {
            return k;
        }
        if k < order.len() {
            removed[order[k]] = true;
        }
    }
    order.len()
}

/// Minimum number of de-energized lines for which the risk row can hold.
pub fn n0_min(risks: &[f64], budget: f64) -> usize {
    let mut order: Vec<usize> = (0..risks.len()).collect();
    order.sort_by(|&a, &b| risks[b].total_cmp(&risks[a]).then(a.cmp(&b)));
    removals_until_feasible(risks, budget, &order)
}

/// Number of least-risky lines whose removal first satisfies the risk row.
pub fn n0_max(risks: &[f64], budget: f64) -> usize {
    let mut order: Vec<usize> = (0..risks.len()).collect();
    order.sort_by(|&a, &b| risks[a].total_cmp(&risks[b]).then(a.cmp(&b)));
    removals_until_feasible(risks, budget, &order)
}

pub fn risk_bounds(risks: &[f64], budget: f64) -> RiskBounds {
    RiskBounds {
        n0_min: n0_min(risks, budget),
        n0_max: n0_max(risks, budget),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::grid::NetworkModel;
    use gridshed_milp::{check_solution, solve_bb, SolveStatus, SolverConfig};

    pub(crate) fn three_bus() -> NetworkModel {
        NetworkModel::from_json(
            r#"{
          "name": "three",
          "buses": [
            {"id": "b1", "reference_flag": true},
            {"id": "b2", "reference_flag": false},
            {"id": "b3", "reference_flag": false}
          ],
          "lines": [
            {"id": "l12", "from_bus": "b1", "to_bus": "b2", "susceptance": -10.0, "rating": 1.0, "switchable": true},
            {"id": "l13", "from_bus": "b1", "to_bus": "b3", "susceptance": -5.0, "rating": 2.0, "switchable": true},
            {"id": "l23", "from_bus": "b2", "to_bus": "b3", "susceptance": -8.0, "rating": 1.5, "switchable": false}
          ],
          "generators": [
            {"id": "g1", "bus": "b1", "max_output_nominal": 3.0, "renewable_flag": false},
            {"id": "g2", "bus": "b2", "max_output_nominal": 1.0, "renewable_flag": true}
          ]
        }"#,
        )
        .unwrap()
    }

    pub(crate) fn three_bus_instance(budget: f64) -> OpsInstance {
        OpsInstance {
            network_ref: "three".into(),
            line_risk: [("l12".to_string(), 40.0), ("l13".to_string(), 90.0)].into_iter().collect(),
            bus_load: [("b2".to_string(), 0.8), ("b3".to_string(), 1.0)].into_iter().collect(),
            gen_cap: [("g1".to_string(), 3.0), ("g2".to_string(), 0.5)].into_iter().collect(),
            risk_budget: budget,
        }
    }

    #[test]
    fn three_bus_counts() {
        let net = three_bus();
        let (p, map) = build_ops_milp(&three_bus_instance(100.0), &net, &OpsConfig::default()).unwrap();
        let bins = p.binary_indices();
        assert_eq!(bins.len(), 2);
        assert_eq!(p.num_vars() - bins.len(), 2 + 3 + 3 + 3);
        // 4 flow-limit rows, 2 + 2 big-M rows, 1 Ohm row, 3 balances, 1 risk row
        assert_eq!(p.num_rows(), 13);
        assert_eq!(p.rows.iter().filter(|r| r.name == "risk").count(), 1);
        assert_eq!(map.switch_line_ids(), vec!["l12".to_string(), "l13".to_string()]);
        let r = map.angle_vars["b1"];
        assert_eq!((p.lower[r], p.upper[r]), (0.0, 0.0));
    }

    #[test]
    fn no_switchable_lines_gives_lp() {
        let mut net = three_bus();
        net.lines.iter_mut().for_each(|l| l.switchable = false);
        let mut inst = three_bus_instance(0.0);
        inst.line_risk.clear();
        let (p, _) = build_ops_milp(&inst, &net, &OpsConfig::default()).unwrap();
        assert!(p.binary_indices().is_empty());
        assert_eq!(p.num_rows(), 3 + 3);
        assert!(p.rows.iter().all(|r| r.name != "risk"));
    }

    #[test]
    fn all_on_over_budget_is_infeasible() {
        let net = three_bus();
        let inst = three_bus_instance(100.0);
        let (mut p, map) = build_ops_milp(&inst, &net, &OpsConfig::default()).unwrap();
        for j in map.switch_indices() {
            p.lower[j] = 1.0;
        }
        let t = solve_bb(&p, &SolverConfig::default()).unwrap();
        assert_eq!(t.status, SolveStatus::Infeasible);
    }

    #[test]
    fn energized_uncongested_sheds_nothing() {
        let net = three_bus();
        let inst = three_bus_instance(1000.0);
        let e = evaluate_topology(&[true, true], &inst, &net, &OpsConfig::default()).unwrap();
        assert!(e.feasible);
        assert!(e.load_shed.abs() < 1e-9);
        assert!((e.objective - 0.02).abs() < 1e-9);
    }

    #[test]
    fn islanded_load_is_shed() {
        // b3 hangs off b1 through the only switchable line; no local generation
        let net = NetworkModel::from_json(
            r#"{"buses": [{"id": "a", "reference_flag": true}, {"id": "b", "reference_flag": false}],
                "lines": [{"id": "s", "from_bus": "a", "to_bus": "b", "susceptance": -4.0, "rating": 5.0, "switchable": true}],
                "generators": [{"id": "g", "bus": "a", "max_output_nominal": 5.0, "renewable_flag": false}]}"#,
        )
        .unwrap();
        let inst = OpsInstance {
            network_ref: "network".into(),
            line_risk: [("s".to_string(), 10.0)].into_iter().collect(),
            bus_load: [("b".to_string(), 1.0)].into_iter().collect(),
            gen_cap: BTreeMap::new(),
            risk_budget: 0.0,
        };
        let e = evaluate_topology(&[false], &inst, &net, &OpsConfig::default()).unwrap();
        assert!(e.feasible);
        assert!((e.load_shed - 1.0).abs() < 1e-9);
    }

    #[test]
    fn over_budget_topology_is_sentinel() {
        let net = three_bus();
        let e = evaluate_topology(&[true, true], &three_bus_instance(100.0), &net, &OpsConfig::default()).unwrap();
        assert!(!e.feasible);
        assert_eq!(e.objective, INFEASIBLE_OBJECTIVE);
        assert!(evaluate_topology(&[true], &three_bus_instance(100.0), &net, &OpsConfig::default()).is_err());
    }

    #[test]
    fn threshold_and_residual_examples() {
        let risks = [10.0, 50.0, 90.0];
        let z = threshold_decisions(&risks, 80.0);
        assert_eq!(z, vec![true, true, false]);
        assert_eq!(residual_risk(&risks, &z), 60.0);
        assert_eq!(threshold_decisions(&risks, 90.0), vec![true; 3]);
        assert_eq!(threshold_decisions(&risks, 0.0), vec![false; 3]);
        assert_eq!(residual_risk(&risks, &[false; 3]), 0.0);
        assert_eq!(residual_risk(&risks, &[true; 3]), 150.0);
    }

    #[test]
    fn count_bound_examples() {
        let r = [5.0, 3.0, 2.0, 1.0];
        assert_eq!(n0_min(&r, 6.0), 1);
        assert_eq!(n0_max(&r, 6.0), 3);
        assert_eq!(n0_min(&r, 11.0), 0);
        assert_eq!(n0_max(&r, 11.0), 0);
        assert_eq!(n0_min(&r, 0.0), 4);
        assert_eq!(n0_max(&[4.0], 3.0), 1);
    }

    #[test]
    fn deenergized_penalty_shifts_objective() {
        let net = three_bus();
        let inst = three_bus_instance(1000.0);
        let cfg = OpsConfig {
            penalty_direction: PenaltyDirection::PenalizeDeenergized,
            ..OpsConfig::default()
        };
        let on = evaluate_topology(&[true, true], &inst, &net, &cfg).unwrap();
        assert!((on.objective - 0.0).abs() < 1e-9);
        let (p, map) = build_ops_milp(&inst, &net, &cfg).unwrap();
        let t = solve_bb(&p, &SolverConfig::default()).unwrap();
        let best = t.best().unwrap();
        assert!(check_solution(&p, &best.x, 1e-6));
        assert_eq!(map.switch_values(&best.x), vec![true, true]);
    }
}

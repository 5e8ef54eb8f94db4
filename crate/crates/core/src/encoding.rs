//! Featured variable-constraint bipartite graph built from a MILP and its root LP.

use std::fs;
use std::path::Path;

use gridshed_milp::{solve_lp, BasisStatus, LpResult, LpStatus, MilpProblem, Sense, VarType};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VAR_FEATURES: usize = 15;
pub const CON_FEATURES: usize = 4;
pub const EDGE_FEATURES: usize = 1;

const ROOT_VALUE_CLAMP: f64 = 10.0;
const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartiteGraph {
    pub var_features: Vec<Vec<f64>>,
    pub con_features: Vec<Vec<f64>>,
    /// `(constraint, variable)` pairs, one per nonzero coefficient, row-major.
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Vec<Vec<f64>>,
    pub target_mask: Vec<usize>,
}

impl BipartiteGraph {
    pub fn num_vars(&self) -> usize {
        self.var_features.len()
    }

    pub fn num_cons(&self) -> usize {
        self.con_features.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let g: BipartiteGraph = serde_json::from_str(&fs::read_to_string(path)?)?;
        g.check_shapes()?;
        Ok(g)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let widths = [
            (&self.var_features, VAR_FEATURES),
            (&self.con_features, CON_FEATURES),
            (&self.edge_features, EDGE_FEATURES),
        ];
        for (rows, w) in widths {
            if let Some(r) = rows.iter().find(|r| r.len() != w) {
                return Err(Error::Dimension {
                    expected: w,
                    got: r.len(),
                });
            }
        }
        if self.edges.len() != self.edge_features.len() {
            return Err(Error::Dimension {
                expected: self.edges.len(),
                got: self.edge_features.len(),
            });
        }
        let (m, n) = (self.num_cons(), self.num_vars());
        if self.edges.iter().any(|&(c, v)| c >= m || v >= n) || self.target_mask.iter().any(|&v| v >= n) {
            return Err(Error::InvalidParameter("graph index out of range".into()));
        }
        Ok(())
    }
}

fn frac(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// Encodes `problem` with statistics taken from its root relaxation `root`.
pub fn encode(problem: &MilpProblem, root: &LpResult, target: &[usize]) -> Result<BipartiteGraph> {
    let n = problem.num_vars();
    let m = problem.num_rows();
    if root.x.len() != n || root.reduced_costs.len() != n || root.basis.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: root.x.len(),
        });
    }
    if let Some(&t) = target.iter().find(|&&t| t >= n || problem.var_types[t] != VarType::Binary) {
        return Err(Error::InvalidParameter(format!("target {t} is not a binary variable")));
    }

    let max_obj = problem.objective.iter().fold(0.0_f64, |a, c| a.max(c.abs()));
    let max_rc = root.reduced_costs.iter().fold(0.0_f64, |a, d| a.max(d.abs()));
    let mut degree = vec![0usize; n];
    let mut sum_abs = vec![0.0; n];
    let mut max_abs = vec![0.0_f64; n];
    let mut global_max = 0.0_f64;
    let mut edges = Vec::new();
    let mut edge_features = Vec::new();
    let mut con_features = Vec::with_capacity(m);
    for (i, row) in problem.rows.iter().enumerate() {
        let row_max = row.coeffs.iter().fold(0.0_f64, |a, &(_, c)| a.max(c.abs()));
        for &(j, a) in &row.coeffs {
            if a == 0.0 {
                continue;
            }
            edges.push((i, j));
            edge_features.push(vec![a / row_max]);
            degree[j] += 1;
            sum_abs[j] += a.abs();
            max_abs[j] = max_abs[j].max(a.abs());
            global_max = global_max.max(a.abs());
        }
        let rhs = if row_max > 0.0 {
            (row.rhs / row_max).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        let sense = match row.sense {
            Sense::Le => [1.0, 0.0, 0.0],
            Sense::Eq => [0.0, 1.0, 0.0],
            Sense::Ge => [0.0, 0.0, 1.0],
        };
        con_features.push(vec![rhs, sense[0], sense[1], sense[2]]);
    }

    let safe_div = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let mut var_features = Vec::with_capacity(n);
    for j in 0..n {
        let (lo, hi, x) = (problem.lower[j], problem.upper[j], root.x[j]);
        let binary = problem.var_types[j] == VarType::Binary;
        let value = if lo.is_finite() && hi.is_finite() {
            safe_div(x - lo, hi - lo)
        } else {
            x / x.abs().max(1.0)
        }
        .clamp(-ROOT_VALUE_CLAMP, ROOT_VALUE_CLAMP);
        let tol = BOUND_TOL * x.abs().max(1.0);
        let at_bound = (lo.is_finite() && (x - lo).abs() <= tol) || (hi.is_finite() && (x - hi).abs() <= tol);
        let basis = match root.basis[j] {
            BasisStatus::Basic => [1.0, 0.0, 0.0],
            BasisStatus::AtLower => [0.0, 1.0, 0.0],
            BasisStatus::AtUpper => [0.0, 0.0, 1.0],
        };
        let f = vec![
            if binary { 1.0 } else { 0.0 },
            if binary { 0.0 } else { 1.0 },
            safe_div(problem.objective[j], max_obj),
            if lo.is_finite() { 1.0 } else { 0.0 },
            if hi.is_finite() { 1.0 } else { 0.0 },
            value,
            frac(x),
            if at_bound { 1.0 } else { 0.0 },
            basis[0],
            basis[1],
            basis[2],
            safe_div(root.reduced_costs[j], max_rc),
            (degree[j] as f64 / n as f64).min(1.0),
            safe_div(safe_div(sum_abs[j], degree[j] as f64), global_max),
            safe_div(max_abs[j], global_max),
        ];
        var_features.push(f);
    }
    let graph = BipartiteGraph {
        var_features,
        con_features,
        edges,
        edge_features,
        target_mask: target.to_vec(),
    };
    let all = graph
        .var_features
        .iter()
        .chain(&graph.con_features)
        .chain(&graph.edge_features)
        .flatten();
    if all.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("graph features".into()));
    }
    Ok(graph)
}

/// Solves the root relaxation and encodes in one step.
pub fn encode_problem(problem: &MilpProblem, target: &[usize]) -> Result<(BipartiteGraph, LpResult)> {
    let root = solve_lp(problem)?;
    if root.status != LpStatus::Optimal {
        return Err(Error::InvalidParameter(format!("root relaxation is {:?}", root.status)));
    }
    Ok((encode(problem, &root, target)?, root))
}

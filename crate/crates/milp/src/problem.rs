//! Generic MILP model: minimization objective, per-variable bounds and
//! integrality, sparse linear rows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::MilpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarType {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }
}

/// One linear row `sum(coeffs) sense rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn new(name: impl Into<String>, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> Self {
        Self {
            name: name.into(),
            coeffs,
            sense,
            rhs,
        }
    }

    /// Row activity at `x`.
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates this row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        match self.sense {
            Sense::Le => (act - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - act).max(0.0),
            Sense::Eq => (act - self.rhs).abs(),
        }
    }
}

/// A mixed-binary linear program in minimization form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpProblem {
    pub names: Vec<String>,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub var_types: Vec<VarType>,
    pub rows: Vec<Row>,
    /// Constant added to every objective evaluation.
    #[serde(default)]
    pub objective_offset: f64,
}

impl Default for MilpProblem {
    fn default() -> Self {
        Self::new()
    }
}

impl MilpProblem {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            objective: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            var_types: Vec::new(),
            rows: Vec::new(),
            objective_offset: 0.0,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Number of nonzero entries of the constraint matrix.
    pub fn nnz(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.coeffs.iter().filter(|(_, a)| *a != 0.0).count())
            .sum()
    }

    /// Appends a variable and returns its index.
    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        cost: f64,
        lower: f64,
        upper: f64,
        var_type: VarType,
    ) -> usize {
        self.names.push(name.into());
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.var_types.push(var_type);
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, row: Row) -> usize {
        self.rows.push(row);
        self.rows.len() - 1
    }

    pub fn binary_indices(&self) -> Vec<usize> {
        (0..self.num_vars())
            .filter(|&j| self.var_types[j] == VarType::Binary)
            .collect()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_offset + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        let n = self.num_vars();
        if self.lower.len() != n
            || self.upper.len() != n
            || self.var_types.len() != n
            || self.names.len() != n
        {
            return Err(MilpError::Malformed(
                "per-variable arrays have inconsistent lengths".into(),
            ));
        }
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(MilpError::InvalidBounds {
                    var: j,
                    lower: lo,
                    upper: hi,
                });
            }
            if !self.objective[j].is_finite() {
                return Err(MilpError::Malformed(format!(
                    "objective coefficient of variable {j} is not finite"
                )));
            }
            if self.var_types[j] == VarType::Binary && (lo < 0.0 || hi > 1.0) {
                return Err(MilpError::InvalidBounds {
                    var: j,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(MilpError::Malformed(format!("row {i} has non-finite rhs")));
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(MilpError::IndexOutOfRange { index: j, len: n });
                }
                if !a.is_finite() {
                    return Err(MilpError::Malformed(format!(
                        "row {i} has a non-finite coefficient"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Returns a copy of `problem` with `rows` appended; the input is left untouched.
pub fn add_constraints(problem: &MilpProblem, rows: &[Row]) -> Result<MilpProblem, MilpError> {
    let n = problem.num_vars();
    for row in rows {
        if let Some(&(j, _)) = row.coeffs.iter().find(|(j, _)| *j >= n) {
            return Err(MilpError::IndexOutOfRange { index: j, len: n });
        }
    }
    let mut out = problem.clone();
    out.rows.extend(rows.iter().cloned());
    Ok(out)
}

/// Fixes binary variables by collapsing their bounds onto the assigned value.
pub fn fix_variables(
    problem: &MilpProblem,
    assignments: &BTreeMap<usize, bool>,
) -> Result<MilpProblem, MilpError> {
    let n = problem.num_vars();
    let mut out = problem.clone();
    for (&j, &val) in assignments {
        if j >= n {
            return Err(MilpError::IndexOutOfRange { index: j, len: n });
        }
        if problem.var_types[j] != VarType::Binary {
            return Err(MilpError::NotBinary(j));
        }
        let v = if val { 1.0 } else { 0.0 };
        out.lower[j] = v;
        out.upper[j] = v;
    }
    Ok(out)
}

/// True iff `x` satisfies every bound, row and integrality requirement within `tol`.
pub fn check_solution(problem: &MilpProblem, x: &[f64], tol: f64) -> bool {
    if x.len() != problem.num_vars() {
        return false;
    }
    for j in 0..x.len() {
        let v = x[j];
        if !v.is_finite() || v < problem.lower[j] - tol || v > problem.upper[j] + tol {
            return false;
        }
        if problem.var_types[j] == VarType::Binary && (v - v.round()).abs() > tol {
            return false;
        }
    }
    problem.rows.iter().all(|row| {
        let scale = row
            .coeffs
            .iter()
            .map(|&(_, a)| a.abs())
            .fold(1.0_f64, f64::max);
        row.violation(x) <= tol * scale.max(row.rhs.abs().max(1.0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_binaries() -> MilpProblem {
        let mut p = MilpProblem::new();
        let x = p.add_var("x", -1.0, 0.0, 1.0, VarType::Binary);
        let y = p.add_var("y", -1.0, 0.0, 1.0, VarType::Binary);
        p.add_row(Row::new("c", vec![(x, 1.0), (y, 1.0)], Sense::Le, 1.0));
        p
    }

    #[test]
    fn add_zero_rows_is_identity() {
        let p = two_binaries();
        assert_eq!(add_constraints(&p, &[]).unwrap(), p);
    }

    #[test]
    fn add_constraints_leaves_original() {
        let p = two_binaries();
        let q = add_constraints(&p, &[Row::new("r", vec![(0, 1.0)], Sense::Le, 0.0)]).unwrap();
        assert_eq!(p.num_rows(), 1);
        assert_eq!(q.num_rows(), 2);
        let bad = add_constraints(&p, &[Row::new("r", vec![(7, 1.0)], Sense::Le, 0.0)]);
        assert!(matches!(bad, Err(MilpError::IndexOutOfRange { index: 7, .. })));
    }

    #[test]
    fn fix_rejects_continuous() {
        let mut p = two_binaries();
        let c = p.add_var("c", 0.0, 0.0, 5.0, VarType::Continuous);
        let mut fix = BTreeMap::new();
        fix.insert(c, true);
        assert!(matches!(fix_variables(&p, &fix), Err(MilpError::NotBinary(_))));
        let mut fix = BTreeMap::new();
        fix.insert(0, true);
        let q = fix_variables(&p, &fix).unwrap();
        assert_eq!((q.lower[0], q.upper[0]), (1.0, 1.0));
        assert!(fix_variables(&p, &BTreeMap::new()).unwrap() == p);
    }

    #[test]
    fn check_solution_detects_violations() {
        let p = two_binaries();
        assert!(check_solution(&p, &[1.0, 0.0], 1e-6));
        // flipping the second binary of a tight assignment breaks the row
        assert!(!check_solution(&p, &[1.0, 1.0], 1e-6));
        assert!(!check_solution(&p, &[0.5, 0.0], 1e-6));
        let mut empty = MilpProblem::new();
        empty.add_var("a", 1.0, -1.0, 1.0, VarType::Continuous);
        assert!(check_solution(&empty, &[0.3], 1e-9));
        assert!(!check_solution(&empty, &[1.3], 1e-9));
    }

    #[test]
    fn validate_catches_bad_bounds() {
        let mut p = MilpProblem::new();
        p.add_var("x", 0.0, 2.0, 1.0, VarType::Continuous);
        assert!(matches!(p.validate(), Err(MilpError::InvalidBounds { .. })));
        let mut p = MilpProblem::new();
        p.add_var("z", 0.0, 0.0, 2.0, VarType::Binary);
        assert!(p.validate().is_err());
    }
}

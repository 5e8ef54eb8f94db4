//! Bounded-variable primal simplex over a dense explicit basis inverse.
//!
//! Every row `a_i x (<=|=|>=) b_i` gets a logical variable `r_i = a_i x` whose
//! bounds encode the sense, so the working system is `[A | -I] (x, r) = 0`
//! with every variable carrying its own `[lower, upper]`. The slack basis
//! `B = -I` is always a valid start; phase one minimizes the sum of bound
//! violations of basic variables, phase two the true objective.
//!
//! Pricing is Dantzig's rule and switches to Bland's rule after a run of
//! degenerate pivots. The ratio test is the two-pass Harris variant. The
//! inverse is rebuilt from scratch every [`REFACTOR_INTERVAL`] pivots and
//! before optimality or infeasibility is declared.

use serde::{Deserialize, Serialize};

use crate::error::MilpError;
use crate::problem::{MilpProblem, Sense};

const REFACTOR_INTERVAL: usize = 80;
const PIVOT_TOL: f64 = 1e-9;
const PRIMAL_TOL: f64 = 1e-9;
const RELAXED_PRIMAL_TOL: f64 = 1e-7;
const DUAL_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 40;
const MAX_REFACTOR_ATTEMPTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisStatus {
    Basic,
    AtLower,
    AtUpper,
}

/// Outcome of an LP solve. `duals` are the multipliers `y` of the row
/// activities, so `reduced_costs = c - A^T y`; at an optimum `y_i <= 0` on
/// binding `<=` rows and `y_i >= 0` on binding `>=` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpResult {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub reduced_costs: Vec<f64>,
    pub duals: Vec<f64>,
    pub basis: Vec<BasisStatus>,
    pub iterations: usize,
}

/// Column-major copy of a problem's constraint matrix, reused across the
/// many bound-modified solves of branch-and-bound.
#[derive(Debug, Clone)]
pub struct LpStructure {
    n: usize,
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    offset: f64,
    row_lower: Vec<f64>,
    row_upper: Vec<f64>,
}

impl LpStructure {
    pub fn new(problem: &MilpProblem) -> Self {
        let n = problem.num_vars();
        let m = problem.num_rows();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut row_lower = Vec::with_capacity(m);
        let mut row_upper = Vec::with_capacity(m);
        for (i, row) in problem.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                if a != 0.0 {
                    cols[j].push((i, a));
                }
            }
            let (lo, hi) = match row.sense {
                Sense::Le => (f64::NEG_INFINITY, row.rhs),
                Sense::Ge => (row.rhs, f64::INFINITY),
                Sense::Eq => (row.rhs, row.rhs),
            };
            row_lower.push(lo);
            row_upper.push(hi);
        }
        // merge duplicate (row, var) entries so each column is a proper sparse vector
        for col in &mut cols {
            col.sort_by_key(|&(i, _)| i);
            col.dedup_by(|next, prev| {
                if next.0 == prev.0 {
                    prev.1 += next.1;
                    true
                } else {
                    false
                }
            });
        }
        Self {
            n,
            m,
            cols,
            cost: problem.objective.clone(),
            offset: problem.objective_offset,
            row_lower,
            row_upper,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_rows(&self) -> usize {
        self.m
    }

    /// Solves the relaxation with the supplied structural bounds.
    pub fn solve(&self, lower: &[f64], upper: &[f64]) -> Result<LpResult, MilpError> {
        debug_assert_eq!(lower.len(), self.n);
        for j in 0..self.n {
            if lower[j] > upper[j] {
                return Ok(self.trivially_infeasible());
            }
        }
        Simplex::new(self, lower, upper).run()
    }

    /// Like [`LpStructure::solve`], starting from a basis saved by an earlier
    /// solve of the same structure. Returns the final basis when optimal.
    pub(crate) fn solve_warm(
        &self,
        lower: &[f64],
        upper: &[f64],
        warm: Option<&WarmStart>,
    ) -> Result<(LpResult, Option<WarmStart>), MilpError> {
        debug_assert_eq!(lower.len(), self.n);
        if (0..self.n).any(|j| lower[j] > upper[j]) {
            return Ok((self.trivially_infeasible(), None));
        }
        let mut sx = match warm {
            Some(w) => Simplex::resume(self, lower, upper, w),
            None => Simplex::new(self, lower, upper),
        };
        let res = sx.run()?;
        let saved = (res.status == LpStatus::Optimal).then(|| WarmStart {
            basis: sx.basis,
            state: sx.state,
            x: sx.x,
            binv: sx.binv,
            since_refactor: sx.since_refactor,
        });
        Ok((res, saved))
    }

    fn trivially_infeasible(&self) -> LpResult {
        LpResult {
            status: LpStatus::Infeasible,
            x: vec![0.0; self.n],
            objective: f64::INFINITY,
            reduced_costs: vec![0.0; self.n],
            duals: vec![0.0; self.m],
            basis: vec![BasisStatus::AtLower; self.n],
            iterations: 0,
        }
    }
}

/// Solves the LP relaxation of `problem` (integrality dropped).
pub fn solve_lp(problem: &MilpProblem) -> Result<LpResult, MilpError> {
    problem.validate()?;
    LpStructure::new(problem).solve(&problem.lower, &problem.upper)
}

/// Basis, nonbasic positions and inverse carried from one solve to the next.
#[derive(Debug, Clone)]
pub(crate) struct WarmStart {
    basis: Vec<usize>,
    state: Vec<VarState>,
    x: Vec<f64>,
    binv: Vec<f64>,
    since_refactor: usize,
}

impl WarmStart {
    pub(crate) fn inverse_len(&self) -> usize {
        self.binv.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    Lower,
    Upper,
    /// Nonbasic free variable sitting at its current value.
    Free,
}

struct Simplex<'a> {
    s: &'a LpStructure,
    nt: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    since_refactor: usize,
    iterations: usize,
    ptol: f64,
    // scratch
    cb: Vec<f64>,
    y: Vec<f64>,
    alpha: Vec<f64>,
}

enum Entering {
    None,
    Var { q: usize, dir: f64 },
}

impl<'a> Simplex<'a> {
    fn new(s: &'a LpStructure, lower: &[f64], upper: &[f64]) -> Self {
        let (n, m) = (s.n, s.m);
        let nt = n + m;
        let mut lo = Vec::with_capacity(nt);
        let mut hi = Vec::with_capacity(nt);
        lo.extend_from_slice(lower);
        hi.extend_from_slice(upper);
        lo.extend_from_slice(&s.row_lower);
        hi.extend_from_slice(&s.row_upper);
        let mut x = vec![0.0; nt];
        let mut state = vec![VarState::Basic; nt];
        for j in 0..n {
            if lo[j].is_finite() {
                x[j] = lo[j];
                state[j] = VarState::Lower;
            } else if hi[j].is_finite() {
                x[j] = hi[j];
                state[j] = VarState::Upper;
            } else {
                x[j] = 0.0;
                state[j] = VarState::Free;
            }
        }
        let basis: Vec<usize> = (n..nt).collect();
        let mut binv = vec![0.0; m * m];
        for k in 0..m {
            binv[k * m + k] = -1.0;
        }
        let mut sx = Self {
            s,
            nt,
            lo,
            hi,
            x,
            state,
            basis,
            binv,
            since_refactor: 0,
            iterations: 0,
            ptol: PRIMAL_TOL,
            cb: vec![0.0; m],
            y: vec![0.0; m],
            alpha: vec![0.0; m],
        };
        sx.recompute_basic_values();
        sx
    }

    fn resume(s: &'a LpStructure, lower: &[f64], upper: &[f64], w: &WarmStart) -> Self {
        let mut sx = Self::new(s, lower, upper);
        sx.basis.copy_from_slice(&w.basis);
        sx.state.copy_from_slice(&w.state);
        sx.binv.copy_from_slice(&w.binv);
        sx.since_refactor = w.since_refactor;
        for j in 0..sx.nt {
            let (lo, hi) = (sx.lo[j], sx.hi[j]);
            match sx.state[j] {
                VarState::Basic => continue,
                VarState::Lower if lo.is_finite() => sx.x[j] = lo,
                VarState::Upper if hi.is_finite() => sx.x[j] = hi,
                VarState::Free if !lo.is_finite() && !hi.is_finite() => sx.x[j] = w.x[j],
                _ => {
                    sx.x[j] = w.x[j];
                    sx.park_nonbasic(j);
                }
            }
        }
        sx.recompute_basic_values();
        sx
    }

    fn for_column(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.s.n {
            for &(i, a) in &self.s.cols[j] {
                f(i, a);
            }
        } else {
            f(j - self.s.n, -1.0);
        }
    }

    fn cost(&self, j: usize) -> f64 {
        if j < self.s.n {
            self.s.cost[j]
        } else {
            0.0
        }
    }

    /// x_B = -B^{-1} N x_N
    fn recompute_basic_values(&mut self) {
        let m = self.s.m;
        let mut r = vec![0.0; m];
        for j in 0..self.nt {
            if self.state[j] != VarState::Basic && self.x[j] != 0.0 {
                let v = self.x[j];
                self.for_column(j, |i, a| r[i] += a * v);
            }
        }
        for k in 0..m {
            let row = &self.binv[k * m..(k + 1) * m];
            let v: f64 = row.iter().zip(&r).map(|(b, ri)| b * ri).sum();
            self.x[self.basis[k]] = -v;
        }
    }

    /// Rebuilds B^{-1} by Gauss-Jordan elimination with partial pivoting. Basis
    /// columns found dependent are swapped for logical columns of uncovered rows.
    fn refactor(&mut self) -> Result<(), MilpError> {
        let m = self.s.m;
        for attempt in 0..MAX_REFACTOR_ATTEMPTS {
            let mut a = vec![0.0; m * m];
            for (k, &j) in self.basis.iter().enumerate() {
                self.for_column(j, |i, v| a[i * m + k] = v);
            }
            let mut inv = vec![0.0; m * m];
            for i in 0..m {
                inv[i * m + i] = 1.0;
            }
            // column k of B gets pivot row piv[k]; B^{-1} row k is the eliminated row piv[k]
            let mut row_used = vec![false; m];
            let mut piv = vec![usize::MAX; m];
            let mut singular = Vec::new();
            for k in 0..m {
                let mut best = 0.0;
                let mut br = usize::MAX;
                for i in 0..m {
                    if !row_used[i] {
                        let v = a[i * m + k].abs();
                        if v > best {
                            best = v;
                            br = i;
                        }
                    }
                }
                if br == usize::MAX || best < 1e-11 {
                    singular.push(k);
                    continue;
                }
                row_used[br] = true;
                piv[k] = br;
                let p = a[br * m + k];
                for c in 0..m {
                    a[br * m + c] /= p;
                    inv[br * m + c] /= p;
                }
                for i in 0..m {
                    if i != br {
                        let f = a[i * m + k];
                        if f != 0.0 {
                            for c in 0..m {
                                a[i * m + c] -= f * a[br * m + c];
                                inv[i * m + c] -= f * inv[br * m + c];
                            }
                        }
                    }
                }
            }
            if singular.is_empty() {
                let mut binv = vec![0.0; m * m];
                for k in 0..m {
                    let src = piv[k];
                    binv[k * m..(k + 1) * m].copy_from_slice(&inv[src * m..(src + 1) * m]);
                }
                self.binv = binv;
                self.since_refactor = 0;
                self.recompute_basic_values();
                return Ok(());
            }
            let free_rows: Vec<usize> = (0..m).filter(|&i| !row_used[i]).collect();
            for (idx, &k) in singular.iter().enumerate() {
                let out = self.basis[k];
                let row = free_rows[idx.min(free_rows.len() - 1)];
                let logical = self.s.n + row;
                if self.state[logical] == VarState::Basic {
                    continue;
                }
                self.park_nonbasic(out);
                self.basis[k] = logical;
                self.state[logical] = VarState::Basic;
            }
            if attempt + 1 == MAX_REFACTOR_ATTEMPTS {
                break;
            }
        }
        Err(MilpError::NumericalFailure {
            attempts: MAX_REFACTOR_ATTEMPTS,
            detail: "basis matrix stayed singular".into(),
        })
    }

    fn park_nonbasic(&mut self, j: usize) {
        let v = self.x[j];
        let (lo, hi) = (self.lo[j], self.hi[j]);
        if lo.is_finite() && (!hi.is_finite() || (v - lo).abs() <= (hi - v).abs()) {
            self.x[j] = lo;
            self.state[j] = VarState::Lower;
        } else if hi.is_finite() {
            self.x[j] = hi;
            self.state[j] = VarState::Upper;
        } else {
            self.state[j] = VarState::Free;
        }
    }

    /// Fills `cb` with the current phase's basic costs; returns whether phase one is active.
    fn load_costs(&mut self) -> (bool, f64) {
        let m = self.s.m;
        let mut infeas = 0.0;
        let mut max_viol: f64 = 0.0;
        for k in 0..m {
            let j = self.basis[k];
            let v = self.x[j];
            if v < self.lo[j] - self.ptol {
                self.cb[k] = -1.0;
                infeas += self.lo[j] - v;
                max_viol = max_viol.max(self.lo[j] - v);
            } else if v > self.hi[j] + self.ptol {
                self.cb[k] = 1.0;
                infeas += v - self.hi[j];
                max_viol = max_viol.max(v - self.hi[j]);
            } else {
                self.cb[k] = 0.0;
            }
        }
        let phase1 = infeas > 0.0;
        if !phase1 {
            for k in 0..m {
                self.cb[k] = self.cost(self.basis[k]);
            }
        }
        (phase1, max_viol)
    }

    fn compute_duals(&mut self) {
        let m = self.s.m;
        self.y.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..m {
            let c = self.cb[k];
            if c != 0.0 {
                let row = &self.binv[k * m..(k + 1) * m];
                for (yi, b) in self.y.iter_mut().zip(row) {
                    *yi += c * b;
                }
            }
        }
    }

    fn reduced_cost(&self, j: usize, phase1: bool) -> f64 {
        let c = if phase1 { 0.0 } else { self.cost(j) };
        let mut d = c;
        self.for_column(j, |i, a| d -= self.y[i] * a);
        d
    }

    fn price(&self, phase1: bool, bland: bool) -> Entering {
        let mut best = Entering::None;
        let mut best_gain = 0.0;
        for j in 0..self.nt {
            let st = self.state[j];
            if st == VarState::Basic || self.lo[j] == self.hi[j] {
                continue;
            }
            let d = self.reduced_cost(j, phase1);
            let dir = match st {
                VarState::Lower if d < -DUAL_TOL => 1.0,
                VarState::Upper if d > DUAL_TOL => -1.0,
                VarState::Free if d.abs() > DUAL_TOL => -d.signum(),
                _ => continue,
            };
            if bland {
                return Entering::Var { q: j, dir };
            }
            if d.abs() > best_gain {
                best_gain = d.abs();
                best = Entering::Var { q: j, dir };
            }
        }
        best
    }

    fn compute_alpha(&mut self, q: usize) {
        let m = self.s.m;
        self.alpha.iter_mut().for_each(|v| *v = 0.0);
        let mut col = Vec::new();
        self.for_column(q, |i, a| col.push((i, a)));
        for k in 0..m {
            let row = &self.binv[k * m..(k + 1) * m];
            self.alpha[k] = col.iter().map(|&(i, a)| row[i] * a).sum();
        }
    }

    fn pivot(&mut self, r: usize) {
        let m = self.s.m;
        let ar = self.alpha[r];
        for c in 0..m {
            self.binv[r * m + c] /= ar;
        }
        let (head, rest) = self.binv.split_at_mut(r * m);
        let (prow, tail) = rest.split_at_mut(m);
        for k in 0..m {
            if k == r {
                continue;
            }
            let f = self.alpha[k];
            if f == 0.0 {
                continue;
            }
            let row = if k < r {
                &mut head[k * m..(k + 1) * m]
            } else {
                let off = (k - r - 1) * m;
                &mut tail[off..off + m]
            };
            for (v, p) in row.iter_mut().zip(prow.iter()) {
                *v -= f * p;
            }
        }
        self.since_refactor += 1;
    }

    fn run(&mut self) -> Result<LpResult, MilpError> {
        let (n, m) = (self.s.n, self.s.m);
        let soft_limit = 25 * (n + m) + 500;
        let hard_limit = 4 * soft_limit;
        let mut degenerate = 0usize;
        let mut bland = false;
        let mut confirmations = 0usize;

        loop {
            if self.iterations > hard_limit {
                return Err(MilpError::NumericalFailure {
                    attempts: confirmations,
                    detail: format!("iteration limit {hard_limit} exceeded"),
                });
            }
            if self.iterations > soft_limit {
                bland = true;
            }
            if self.since_refactor >= REFACTOR_INTERVAL {
                self.refactor()?;
            }
            let (phase1, max_viol) = self.load_costs();
            self.compute_duals();
            let entering = self.price(phase1, bland);

            let (q, dir) = match entering {
                Entering::Var { q, dir } => (q, dir),
                Entering::None => {
                    if self.since_refactor > 0 && confirmations < MAX_REFACTOR_ATTEMPTS {
                        confirmations += 1;
                        self.refactor()?;
                        continue;
                    }
                    if phase1 {
                        if max_viol <= RELAXED_PRIMAL_TOL && self.ptol < RELAXED_PRIMAL_TOL {
                            self.ptol = RELAXED_PRIMAL_TOL;
                            continue;
                        }
                        return Ok(self.finish(LpStatus::Infeasible));
                    }
                    return Ok(self.finish(LpStatus::Optimal));
                }
            };

            self.compute_alpha(q);
            let step = self.ratio_test(q, dir, phase1, bland);
            self.iterations += 1;

            match step {
                Step::Unbounded => {
                    if phase1 {
                        // the infeasibility objective is bounded below; treat as breakdown
                        if confirmations >= MAX_REFACTOR_ATTEMPTS {
                            return Err(MilpError::NumericalFailure {
                                attempts: confirmations,
                                detail: "unbounded ray in phase one".into(),
                            });
                        }
                        confirmations += 1;
                        self.refactor()?;
                        continue;
                    }
                    return Ok(self.finish(LpStatus::Unbounded));
                }
                Step::BoundFlip(t) => {
                    self.apply_step(q, dir, t);
                    if dir > 0.0 {
                        self.x[q] = self.hi[q];
                        self.state[q] = VarState::Upper;
                    } else {
                        self.x[q] = self.lo[q];
                        self.state[q] = VarState::Lower;
                    }
                    degenerate = 0;
                    bland = self.iterations > soft_limit;
                }
                Step::Leave { r, t, to_upper } => {
                    self.apply_step(q, dir, t);
                    let leaving = self.basis[r];
                    if to_upper {
                        self.x[leaving] = self.hi[leaving];
                        self.state[leaving] = VarState::Upper;
                    } else {
                        self.x[leaving] = self.lo[leaving];
                        self.state[leaving] = VarState::Lower;
                    }
                    self.pivot(r);
                    self.basis[r] = q;
                    self.state[q] = VarState::Basic;
                    if t <= 1e-12 {
                        degenerate += 1;
                        if degenerate > DEGENERATE_RUN {
                            bland = true;
                        }
                    } else {
                        degenerate = 0;
                        bland = self.iterations > soft_limit;
                    }
                }
            }
        }
    }

    fn apply_step(&mut self, q: usize, dir: f64, t: f64) {
        if t == 0.0 {
            return;
        }
        self.x[q] += dir * t;
        for k in 0..self.s.m {
            let a = self.alpha[k];
            if a != 0.0 {
                self.x[self.basis[k]] -= dir * t * a;
            }
        }
    }

    fn ratio_test(&self, q: usize, dir: f64, phase1: bool, bland: bool) -> Step {
        let m = self.s.m;
        let ptol = self.ptol;
        // pass one: largest step allowed with bounds relaxed by the primal tolerance
        let mut t_max = f64::INFINITY;
        for k in 0..m {
            let a = self.alpha[k];
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            let rate = -dir * a;
            let j = self.basis[k];
            let (v, lo, hi) = (self.x[j], self.lo[j], self.hi[j]);
            let below = phase1 && v < lo - ptol;
            let above = phase1 && v > hi + ptol;
            let lim = if rate > 0.0 {
                if below {
                    (lo - v) / rate
                } else if above || !hi.is_finite() {
                    continue;
                } else {
                    (hi - v + ptol) / rate
                }
            } else if above {
                (v - hi) / -rate
            } else if below || !lo.is_finite() {
                continue;
            } else {
                (v - lo + ptol) / -rate
            };
            t_max = t_max.min(lim.max(0.0));
        }
        let span = self.hi[q] - self.lo[q];
        if span.is_finite() && span <= t_max {
            return Step::BoundFlip(span);
        }
        if t_max == f64::INFINITY {
            return Step::Unbounded;
        }
        // pass two: among rows blocking within t_max, take the most stable pivot
        let mut choice: Option<(usize, f64, bool)> = None;
        let mut best_abs = 0.0;
        for k in 0..m {
            let a = self.alpha[k];
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            let rate = -dir * a;
            let j = self.basis[k];
            let (v, lo, hi) = (self.x[j], self.lo[j], self.hi[j]);
            let below = phase1 && v < lo - ptol;
            let above = phase1 && v > hi + ptol;
            let (t, to_upper) = if rate > 0.0 {
                if below {
                    ((lo - v) / rate, false)
                } else if above || !hi.is_finite() {
                    continue;
                } else {
                    ((hi - v) / rate, true)
                }
            } else if above {
                ((v - hi) / -rate, true)
            } else if below || !lo.is_finite() {
                continue;
            } else {
                ((v - lo) / -rate, false)
            };
            if t <= t_max {
                let better = if bland {
                    match choice {
                        None => true,
                        Some((r, _, _)) => self.basis[k] < self.basis[r],
                    }
                } else {
                    a.abs() > best_abs
                };
                if better {
                    best_abs = a.abs();
                    choice = Some((k, t.max(0.0), to_upper));
                }
            }
        }
        match choice {
            Some((r, t, to_upper)) => Step::Leave { r, t, to_upper },
            None => Step::Unbounded,
        }
    }

    fn finish(&mut self, status: LpStatus) -> LpResult {
        let (n, m) = (self.s.n, self.s.m);
        if status == LpStatus::Optimal {
            for k in 0..m {
                self.cb[k] = self.cost(self.basis[k]);
            }
            self.compute_duals();
        }
        let x: Vec<f64> = (0..n)
            .map(|j| {
                // snap tiny bound violations left by tolerances
                let v = self.x[j];
                v.max(self.lo[j]).min(self.hi[j])
            })
            .collect();
        let objective = match status {
            LpStatus::Optimal => self.s.offset + x.iter().zip(&self.s.cost).map(|(v, c)| v * c).sum::<f64>(),
            LpStatus::Infeasible => f64::INFINITY,
            LpStatus::Unbounded => f64::NEG_INFINITY,
        };
        let reduced_costs = (0..n).map(|j| self.reduced_cost(j, false)).collect();
        let basis = (0..n)
            .map(|j| match self.state[j] {
                VarState::Basic => BasisStatus::Basic,
                VarState::Upper => BasisStatus::AtUpper,
                VarState::Lower | VarState::Free => BasisStatus::AtLower,
            })
            .collect();
        LpResult {
            status,
            x,
            objective,
            reduced_costs,
            duals: self.y.clone(),
            basis,
            iterations: self.iterations,
        }
    }
}

enum Step {
    Unbounded,
    BoundFlip(f64),
    Leave { r: usize, t: f64, to_upper: bool },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Row, VarType};

    fn single(cost: f64, lo: f64, hi: f64) -> MilpProblem {
        let mut p = MilpProblem::new();
        p.add_var("x", cost, lo, hi, VarType::Continuous);
        p
    }

    #[test]
    fn bounded_single_variable() {
        let mut p = single(-1.0, 0.0, 10.0);
        p.add_row(Row::new("c", vec![(0, 1.0)], Sense::Le, 3.0));
        let r = solve_lp(&p).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.x[0] - 3.0).abs() < 1e-9);
        assert!((r.objective + 3.0).abs() < 1e-9);
        // binding <= row carries a nonpositive multiplier
        assert!(r.duals[0] < 0.0);
    }

    #[test]
    fn contradictory_rows_infeasible() {
        let mut p = single(0.0, f64::NEG_INFINITY, f64::INFINITY);
        p.add_row(Row::new("a", vec![(0, 1.0)], Sense::Ge, 2.0));
        p.add_row(Row::new("b", vec![(0, 1.0)], Sense::Le, 1.0));
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray() {
        let p = single(-1.0, 0.0, f64::INFINITY);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn small_textbook_lp() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  -> (2, 6), 36
        let mut p = MilpProblem::new();
        let x = p.add_var("x", -3.0, 0.0, f64::INFINITY, VarType::Continuous);
        let y = p.add_var("y", -5.0, 0.0, f64::INFINITY, VarType::Continuous);
        p.add_row(Row::new("a", vec![(x, 1.0)], Sense::Le, 4.0));
        p.add_row(Row::new("b", vec![(y, 2.0)], Sense::Le, 12.0));
        p.add_row(Row::new("c", vec![(x, 3.0), (y, 2.0)], Sense::Le, 18.0));
        let r = solve_lp(&p).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.x[x] - 2.0).abs() < 1e-9 && (r.x[y] - 6.0).abs() < 1e-9);
        assert!((r.objective + 36.0).abs() < 1e-9);
        // known duals of the max form are (0, 1.5, 1); sign flips for min
        assert!((r.duals[1] + 1.5).abs() < 1e-9 && (r.duals[2] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_free_variables() {
        // min x + y, x - y = 1, x + y >= 3, y free -> x = 2, y = 1
        let mut p = MilpProblem::new();
        let x = p.add_var("x", 1.0, 0.0, f64::INFINITY, VarType::Continuous);
        let y = p.add_var("y", 1.0, f64::NEG_INFINITY, f64::INFINITY, VarType::Continuous);
        p.add_row(Row::new("e", vec![(x, 1.0), (y, -1.0)], Sense::Eq, 1.0));
        p.add_row(Row::new("g", vec![(x, 1.0), (y, 1.0)], Sense::Ge, 3.0));
        let r = solve_lp(&p).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective - 3.0).abs() < 1e-9);
        assert!((r.x[x] - r.x[y] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_problem_sits_at_bounds() {
        let mut p = MilpProblem::new();
        p.add_var("a", 2.0, -1.0, 4.0, VarType::Continuous);
        p.add_var("b", -2.0, -1.0, 4.0, VarType::Continuous);
        let r = solve_lp(&p).unwrap();
        assert_eq!(r.x, vec![-1.0, 4.0]);
        assert_eq!(r.basis, vec![BasisStatus::AtLower, BasisStatus::AtUpper]);
    }
}

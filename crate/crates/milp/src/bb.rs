//! Best-bound-first branch-and-bound over binary variables.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::MilpError;
use crate::problem::{check_solution, MilpProblem, VarType};
use crate::simplex::{LpStatus, LpStructure, WarmStart};
use crate::trace::{ClockMode, Incumbent, SolveStatus, SolveTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Budget in the clock's unit: seconds for `Wall`, nodes for `NodeCount`.
    pub time_limit: f64,
    pub node_limit: usize,
    pub pool_size: usize,
    pub feasibility_tol: f64,
    pub integrality_tol: f64,
    /// Relative gap, measured against `max(1, |incumbent|)`.
    pub mip_gap_tol: f64,
    pub clock_mode: ClockMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            time_limit: f64::INFINITY,
            node_limit: usize::MAX,
            pool_size: 10,
            feasibility_tol: 1e-6,
            integrality_tol: 1e-6,
            mip_gap_tol: 1e-4,
            clock_mode: ClockMode::NodeCount,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), MilpError> {
        if !(self.feasibility_tol > 0.0 && self.integrality_tol > 0.0 && self.mip_gap_tol > 0.0) {
            return Err(MilpError::Malformed("solver tolerances must be positive".into()));
        }
        if self.pool_size == 0 {
            return Err(MilpError::Malformed("pool_size must be at least 1".into()));
        }
        Ok(())
    }

    fn gap_abs(&self, incumbent: f64) -> f64 {
        self.mip_gap_tol * incumbent.abs().max(1.0)
    }
}

struct Clock {
    mode: ClockMode,
    start: Instant,
    ticks: usize,
}

impl Clock {
    fn now(&self) -> f64 {
        match self.mode {
            ClockMode::Wall => self.start.elapsed().as_secs_f64(),
            ClockMode::NodeCount => self.ticks as f64,
        }
    }
}

/// Total basis-inverse entries that open nodes may hold for warm starts.
const WARM_ENTRY_BUDGET: usize = 32 << 20;

struct Node {
    bound: f64,
    seq: u64,
    fixes: Vec<(usize, f64)>,
    warm: Option<Rc<WarmStart>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: invert so the lowest bound, then oldest node, pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Search<'a> {
    problem: &'a MilpProblem,
    config: &'a SolverConfig,
    lp: LpStructure,
    binaries: Vec<usize>,
    clock: Clock,
    pool: Vec<Incumbent>,
    timeline: Vec<(f64, f64)>,
    tried: HashSet<Vec<bool>>,
}

impl<'a> Search<'a> {
    fn incumbent_value(&self) -> f64 {
        self.pool.last().map_or(f64::INFINITY, |i| i.objective)
    }

    fn cutoff(&self) -> f64 {
        let inc = self.incumbent_value();
        if inc.is_finite() {
            inc - self.config.gap_abs(inc)
        } else {
            f64::INFINITY
        }
    }

    fn offer(&mut self, x: Vec<f64>, time: f64) {
        let obj = self.problem.objective_value(&x);
        let inc = self.incumbent_value();
        if obj < inc - 1e-9 * inc.abs().max(1.0) || !inc.is_finite() {
            self.timeline.push((time, obj));
            self.pool.push(Incumbent {
                time,
                objective: obj,
                x,
            });
            if self.pool.len() > self.config.pool_size {
                self.pool.remove(0);
            }
        }
    }

    /// Solves the LP with all binaries fixed to `assignment` and offers the result.
    fn complete(
        &mut self,
        lo: &[f64],
        hi: &[f64],
        assignment: &[bool],
        time: f64,
        warm: Option<&WarmStart>,
    ) -> Result<(), MilpError> {
        if !self.tried.insert(assignment.to_vec()) {
            return Ok(());
        }
        let mut lo = lo.to_vec();
        let mut hi = hi.to_vec();
        for (&j, &v) in self.binaries.iter().zip(assignment) {
            let val = if v { 1.0 } else { 0.0 };
            if val < self.problem.lower[j] || val > self.problem.upper[j] {
                return Ok(());
            }
            lo[j] = val;
            hi[j] = val;
        }
        let (res, _) = self.lp.solve_warm(&lo, &hi, warm)?;
        if res.status == LpStatus::Optimal {
            let mut x = res.x;
            for &j in &self.binaries {
                x[j] = x[j].round();
            }
            if check_solution(self.problem, &x, self.config.feasibility_tol) {
                self.offer(x, time);
            }
        }
        Ok(())
    }
}

/// Runs branch-and-bound and returns the incumbent trace.
pub fn solve_bb(problem: &MilpProblem, config: &SolverConfig) -> Result<SolveTrace, MilpError> {
    problem.validate()?;
    config.validate()?;
    let binaries = problem.binary_indices();
    let mut s = Search {
        problem,
        config,
        lp: LpStructure::new(problem),
        binaries,
        clock: Clock {
            mode: config.clock_mode,
            start: Instant::now(),
            ticks: 0,
        },
        pool: Vec::new(),
        timeline: Vec::new(),
        tried: HashSet::new(),
    };
    let mut branched = BTreeSet::new();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        fixes: Vec::new(),
        warm: None,
    });
    let mut warm_entries = 0usize;
    let int_tol = config.integrality_tol;
    let mut limit_hit = false;

    while let Some(node) = heap.pop() {
        if node.bound >= s.cutoff() {
            // everything left is dominated by the incumbent
            heap.clear();
            break;
        }
        if s.clock.ticks >= config.node_limit || s.clock.now() >= config.time_limit {
            heap.push(node);
            limit_hit = true;
            break;
        }
        let node_time = s.clock.now();
        let mut lo = problem.lower.clone();
        let mut hi = problem.upper.clone();
        for &(j, v) in &node.fixes {
            lo[j] = v;
            hi[j] = v;
        }
        if let Some(w) = &node.warm {
            if Rc::strong_count(w) == 1 {
                warm_entries -= w.inverse_len();
            }
        }
        let (res, warm) = s.lp.solve_warm(&lo, &hi, node.warm.as_deref())?;
        drop(node.warm);
        s.clock.ticks += 1;
        match res.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => return Err(MilpError::Unbounded),
            LpStatus::Optimal => {}
        }
        if res.objective >= s.cutoff() {
            continue;
        }
        // most fractional binary, lowest index on ties
        let mut branch_var = None;
        let mut best_frac = int_tol;
        for &j in &s.binaries {
            let v = res.x[j];
            let frac = (v - v.round()).abs();
            if frac > best_frac + 1e-12 {
                best_frac = frac;
                branch_var = Some(j);
            }
        }
        match branch_var {
            None => {
                let assignment: Vec<bool> = s.binaries.iter().map(|&j| res.x[j] > 0.5).collect();
                let mut x = res.x.clone();
                for &j in &s.binaries {
                    x[j] = x[j].round();
                }
                if check_solution(problem, &x, config.feasibility_tol) {
                    s.offer(x, node_time);
                } else {
                    s.complete(&lo, &hi, &assignment, node_time, warm.as_ref())?;
                }
            }
            Some(j) => {
                let nearest: Vec<bool> = s.binaries.iter().map(|&k| res.x[k] >= 0.5).collect();
                let before_best = s.incumbent_value();
                s.complete(&lo, &hi, &nearest, node_time, warm.as_ref())?;
                if s.incumbent_value() == before_best {
                    let floor: Vec<bool> =
                        s.binaries.iter().map(|&k| res.x[k] >= 1.0 - int_tol).collect();
                    s.complete(&lo, &hi, &floor, node_time, warm.as_ref())?;
                }
                branched.insert(j);
                let cutoff = s.cutoff();
                if res.objective < cutoff {
                    let shared = warm.and_then(|w| {
                        let len = w.inverse_len();
                        (warm_entries + len <= WARM_ENTRY_BUDGET).then(|| {
                            warm_entries += len;
                            Rc::new(w)
                        })
                    });
                    for val in [0.0, 1.0] {
                        if val < problem.lower[j] || val > problem.upper[j] {
                            continue;
                        }
                        seq += 1;
                        let mut fixes = node.fixes.clone();
                        fixes.push((j, val));
                        heap.push(Node {
                            bound: res.objective,
                            seq,
                            fixes,
                            warm: shared.clone(),
                        });
                    }
                }
            }
        }
    }

    let incumbent = s.incumbent_value();
    let open_bound = heap
        .iter()
        .map(|n| n.bound)
        .fold(f64::INFINITY, f64::min);
    let (status, best_bound) = if limit_hit {
        (SolveStatus::TimeLimit, open_bound.min(incumbent))
    } else if incumbent.is_finite() {
        (SolveStatus::Optimal, incumbent.min(open_bound))
    } else {
        (SolveStatus::Infeasible, f64::INFINITY)
    };
    let elapsed = s.clock.now();
    Ok(SolveTrace {
        incumbents: s.pool,
        timeline: s.timeline,
        best_bound,
        status,
        clock_mode: config.clock_mode,
        nodes: s.clock.ticks,
        elapsed,
        branched: branched.into_iter().collect(),
    })
}

/// True when every binary of `problem` is fixed by its bounds.
pub fn all_binaries_fixed(problem: &MilpProblem) -> bool {
    (0..problem.num_vars())
        .filter(|&j| problem.var_types[j] == VarType::Binary)
        .all(|j| problem.lower[j] == problem.upper[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{fix_variables, Row, Sense};
    use std::collections::BTreeMap;

    fn pair() -> MilpProblem {
        let mut p = MilpProblem::new();
        let x = p.add_var("x", -1.0, 0.0, 1.0, VarType::Binary);
        let y = p.add_var("y", -1.0, 0.0, 1.0, VarType::Binary);
        p.add_row(Row::new("c", vec![(x, 1.0), (y, 1.0)], Sense::Le, 1.0));
        p
    }

    #[test]
    fn two_binaries_pick_one() {
        let t = solve_bb(&pair(), &SolverConfig::default()).unwrap();
        assert_eq!(t.status, SolveStatus::Optimal);
        assert!((t.best_objective().unwrap() + 1.0).abs() < 1e-9);
        assert!(t.best_bound <= t.best_objective().unwrap() + 1e-9);
    }

    #[test]
    fn infeasible_gives_empty_pool() {
        let mut p = pair();
        p.add_row(Row::new("d", vec![(0, 1.0), (1, 1.0)], Sense::Ge, 1.5));
        p.add_row(Row::new("e", vec![(1, 1.0)], Sense::Le, 0.2));
        let t = solve_bb(&p, &SolverConfig::default()).unwrap();
        assert_eq!(t.status, SolveStatus::Infeasible);
        assert!(t.incumbents.is_empty() && t.timeline.is_empty());
    }

    #[test]
    fn fixing_violating_binary_is_infeasible() {
        let mut p = pair();
        p.add_row(Row::new("x_off", vec![(0, 1.0)], Sense::Le, 0.0));
        let mut fix = BTreeMap::new();
        fix.insert(0, true);
        let t = solve_bb(&fix_variables(&p, &fix).unwrap(), &SolverConfig::default()).unwrap();
        assert_eq!(t.status, SolveStatus::Infeasible);
    }

    #[test]
    fn fully_fixed_problem_is_one_node() {
        let mut fix = BTreeMap::new();
        fix.insert(0, false);
        fix.insert(1, true);
        let q = fix_variables(&pair(), &fix).unwrap();
        assert!(all_binaries_fixed(&q));
        let t = solve_bb(&q, &SolverConfig::default()).unwrap();
        assert_eq!(t.nodes, 1);
        assert!(t.branched.is_empty());
        assert_eq!(t.best().unwrap().x, vec![0.0, 1.0]);
    }

    #[test]
    fn zero_budget_reports_time_limit() {
        let cfg = SolverConfig {
            time_limit: 0.0,
            ..SolverConfig::default()
        };
        let t = solve_bb(&pair(), &cfg).unwrap();
        assert_eq!(t.status, SolveStatus::TimeLimit);
        assert!(t.incumbents.is_empty());
        assert_eq!(t.nodes, 0);
    }
}

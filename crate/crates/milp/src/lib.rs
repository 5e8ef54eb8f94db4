//! Self-contained MILP machinery: problem model, bounded-variable simplex,
//! best-bound branch-and-bound with a timestamped incumbent pool, and LP-format
//! import/export.

pub mod bb;
pub mod error;
pub mod lp_format;
pub mod problem;
pub mod simplex;
pub mod trace;

pub use bb::{all_binaries_fixed, solve_bb, SolverConfig};
pub use error::MilpError;
pub use lp_format::{export_problem, import_problem, parse_lp, to_lp_string};
pub use problem::{add_constraints, check_solution, fix_variables, MilpProblem, Row, Sense, VarType};
pub use simplex::{solve_lp, BasisStatus, LpResult, LpStatus, LpStructure};
pub use trace::{read_trace_dump, write_trace_dump, ClockMode, Incumbent, SolveStatus, SolveTrace};

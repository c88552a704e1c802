//! Linear/mixed-integer model container and solve interface.
//!
//! Models are assembled once as plain coefficient lists ([`LinearModel`]) and
//! handed to a [`SolverBackend`]; the bundled [`HighsBackend`] drives HiGHS
//! in process.  Conventions, fixed here for every backend:
//!
//! - **Minimization only.**  Builders express everything as `min c·x`.
//! - **Row duals** (LPs solved to optimality) follow the natural sign
//!   convention under minimization: duals of `≥` rows are ≥ 0, duals of `≤`
//!   rows are ≤ 0, duals of `=` rows are free.  With that convention the dual
//!   objective is `Σ_rows dual·rhs` plus bound terms, and LP strong duality
//!   reads `objective = Σ dual·rhs` whenever no variable sits at a finite
//!   non-zero bound.
//! - **Infeasibility certificates.**  A backend may report dual rays for
//!   infeasible LPs as unsupported (`ray = None`); callers needing a
//!   certificate then price an always-feasible phase-one variant themselves
//!   (see `models::build_phase_one`).  The bundled backend does not expose
//!   rays.
//! - **Cutoffs** are emulated with an explicit objective-expression row
//!   `Σ c_j x_j ≤ cutoff (+ tiny slack)` appended inside the backend, which
//!   is valid whenever the cutoff comes from a feasible incumbent of the
//!   problem or of any problem the model relaxes.  The row is only ever
//!   added to MILPs, so reported duals are unaffected.
//!
//! Tolerances used across the crate are the named constants below; nothing
//! hard-codes their values elsewhere.

mod highs_backend;
mod lp_format;

pub use highs_backend::HighsBackend;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feasibility tolerance: a constraint is satisfied when its violation is at
/// most `FEASIBILITY_TOL × max(1, |rhs|)`.
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// Integrality tolerance: a value within this distance of an integer counts
/// as integral.
pub const INTEGRALITY_TOL: f64 = 1e-5;
/// Default relative MIP gap at which a solve stops.
pub const DEFAULT_REL_GAP: f64 = 0.01;

/// Environment variable naming the backend to use (`highs` is the only
/// bundled value and the default).
pub const BACKEND_ENV_VAR: &str = "LSNDP_BACKEND";

/// Handle to a variable of a [`LinearModel`] (a dense column index).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// Handle to a row of a [`LinearModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Variable {
    pub name: String,
    pub obj: f64,
    pub lower: f64,
    pub upper: f64,
    pub integer: bool,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

/// A minimization model over continuous and integer variables.
#[derive(Clone, Debug, Default)]
pub struct LinearModel {
    pub vars: Vec<Variable>,
    pub rows: Vec<Row>,
}

impl LinearModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        obj: f64,
        lower: f64,
        upper: f64,
        integer: bool,
    ) -> VarId {
        self.vars.push(Variable { name: name.into(), obj, lower, upper, integer });
        VarId(self.vars.len() - 1)
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        sense: RowSense,
        rhs: f64,
        terms: Vec<(VarId, f64)>,
    ) -> RowId {
        self.rows.push(Row { name: name.into(), terms, sense, rhs });
        RowId(self.rows.len() - 1)
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn has_integers(&self) -> bool {
        self.vars.iter().any(|v| v.integer)
    }

    /// The LP relaxation: the same model with integrality dropped.
    pub fn relaxation(&self) -> LinearModel {
        let mut m = self.clone();
        for v in &mut m.vars {
            v.integer = false;
        }
        m
    }

    /// Objective value of a point.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.vars.iter().zip(x).map(|(v, xi)| v.obj * xi).sum()
    }

    /// Left-hand-side activity of a row at a point.
    pub fn row_activity(&self, x: &[f64], row: RowId) -> f64 {
        self.rows[row.0]
            .terms
            .iter()
            .map(|&(VarId(j), a)| a * x[j])
            .sum()
    }

    /// Largest relative constraint/bound violation of a point, scaled by
    /// `max(1, |rhs|)` per row.  Integrality is not checked.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &xi) in self.vars.iter().zip(x) {
            worst = worst.max(v.lower - xi).max(xi - v.upper);
        }
        for (i, row) in self.rows.iter().enumerate() {
            let lhs = self.row_activity(x, RowId(i));
            let scale = row.rhs.abs().max(1.0);
            let gap = match row.sense {
                RowSense::Le => lhs - row.rhs,
                RowSense::Ge => row.rhs - lhs,
                RowSense::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(gap / scale);
        }
        worst
    }

    /// Write the model in the fixed LP text format (see `lp_format`).
    pub fn write_lp(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        lp_format::write_lp(self, w)
    }
}

/// Outcome class of a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    /// Solved to (gap-)optimality.
    Optimal,
    /// A limit was hit with a feasible solution at hand.
    FeasibleLimit,
    Infeasible,
    Unbounded,
    /// A limit was hit with no feasible solution found.
    NoSolutionLimit,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::FeasibleLimit)
    }
}

/// Result of one solve.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Best primal objective, when a solution exists.
    pub objective: Option<f64>,
    /// Best proven lower bound on the optimum (equals `objective` for
    /// `Optimal`); `None` when the solve produced no bound.
    pub bound: Option<f64>,
    /// Column values of the best solution.
    pub primal: Option<Vec<f64>>,
    /// Row duals, for LPs solved to optimality (sign convention above).
    pub row_duals: Option<Vec<f64>>,
    /// Dual ray for infeasible LPs; `None` when the backend does not expose
    /// rays.
    pub ray: Option<Vec<f64>>,
    pub solve_seconds: f64,
}

impl SolveResult {
    /// The objective of a solve known to have produced a solution; panics
    /// otherwise — use only after checking `status`.
    pub fn objective_value(&self) -> f64 {
        self.objective
            .unwrap_or_else(|| panic!("no objective for status {:?}", self.status))
    }
}

/// Limits applied to a single solve.
#[derive(Clone, Copy, Debug)]
pub struct SolveLimits {
    pub time_seconds: Option<f64>,
    /// Relative MIP gap at which to stop; ignored by LP solves.
    pub rel_gap: f64,
}

impl SolveLimits {
    /// No time limit, solve MILPs to exact optimality.
    pub fn exact() -> Self {
        Self { time_seconds: None, rel_gap: 0.0 }
    }

    pub fn with_gap(rel_gap: f64) -> Self {
        Self { time_seconds: None, rel_gap }
    }

    pub fn time_limited(self, seconds: f64) -> Self {
        Self { time_seconds: Some(seconds.max(0.0)), ..self }
    }
}

/// Warm-start information for a MILP solve.
#[derive(Clone, Debug, Default)]
pub struct WarmStart {
    /// A feasible starting point (full column vector in model order).
    pub solution: Option<Vec<f64>>,
    /// Upper cutoff on the objective (from a known feasible incumbent).
    pub cutoff: Option<f64>,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solve_lp requires a continuous model (found integer variables)")]
    IntegerInLp,
    #[error("backend {backend}: unexpected solver status {status}")]
    UnexpectedStatus { backend: String, status: String },
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("unknown backend {0:?} (supported: \"highs\")")]
    UnknownBackend(String),
}

/// Decide a model with no columns by inspection: every row's activity is
/// zero, so feasibility is a constant check per row.  Backends disagree on
/// how to report such degenerate models (HiGHS calls them "empty" and
/// ignores row bounds), so adapters resolve them here instead.
pub(crate) fn empty_model_result(model: &LinearModel) -> SolveResult {
    let feasible = model.rows.iter().all(|r| match r.sense {
        RowSense::Le => 0.0 <= r.rhs,
        RowSense::Ge => 0.0 >= r.rhs,
        RowSense::Eq => r.rhs == 0.0,
    });
    if feasible {
        SolveResult {
            status: SolveStatus::Optimal,
            objective: Some(0.0),
            bound: Some(0.0),
            primal: Some(Vec::new()),
            row_duals: Some(vec![0.0; model.n_rows()]),
            ray: None,
            solve_seconds: 0.0,
        }
    } else {
        SolveResult {
            status: SolveStatus::Infeasible,
            objective: None,
            bound: None,
            primal: None,
            row_duals: None,
            ray: None,
            solve_seconds: 0.0,
        }
    }
}

/// A solve interface over [`LinearModel`].
pub trait SolverBackend {
    fn name(&self) -> &str;

    /// Solve a continuous model.  `Optimal` results carry primal values and
    /// row duals; `Infeasible` results carry a ray only if the backend
    /// supports certificates.
    fn solve_lp(&self, model: &LinearModel, limits: &SolveLimits)
        -> Result<SolveResult, SolverError>;

    /// Solve a model with integer variables, optionally warm-started.
    fn solve_milp(
        &self,
        model: &LinearModel,
        limits: &SolveLimits,
        warm: &WarmStart,
    ) -> Result<SolveResult, SolverError>;
}

/// Construct the backend selected by [`BACKEND_ENV_VAR`] (default: the
/// bundled HiGHS adapter).
pub fn backend_from_env() -> Result<Box<dyn SolverBackend>, SolverError> {
    let choice = std::env::var(BACKEND_ENV_VAR).unwrap_or_else(|_| "highs".to_string());
    match choice.as_str() {
        "highs" => Ok(Box::new(HighsBackend::new())),
        other => Err(SolverError::UnknownBackend(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn backend() -> HighsBackend {
        HighsBackend::new()
    }

    /// `min x s.t. x ≥ 5`: optimum 5, and the demand row's dual is +1 in the
    /// natural sign convention.
    #[test]
    fn lp_duals_use_the_natural_sign_convention() {
        let mut m = LinearModel::new();
        let x = m.add_var("x", 1.0, 0.0, f64::INFINITY, false);
        m.add_row("demand", RowSense::Ge, 5.0, vec![(x, 1.0)]);
        let r = backend().solve_lp(&m, &SolveLimits::exact()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective.unwrap() - 5.0).abs() < 1e-9);
        let duals = r.row_duals.unwrap();
        assert!((duals[0] - 1.0).abs() < 1e-9);

        // A binding ≤ row gets a non-positive dual: min -x s.t. x ≤ 3.
        let mut m = LinearModel::new();
        let x = m.add_var("x", -1.0, 0.0, f64::INFINITY, false);
        m.add_row("cap", RowSense::Le, 3.0, vec![(x, 1.0)]);
        let r = backend().solve_lp(&m, &SolveLimits::exact()).unwrap();
        let duals = r.row_duals.unwrap();
        assert!((duals[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_lp_is_reported() {
        let mut m = LinearModel::new();
        let x = m.add_var("x", 1.0, 0.0, f64::INFINITY, false);
        m.add_row("lo", RowSense::Ge, 5.0, vec![(x, 1.0)]);
        m.add_row("hi", RowSense::Le, 3.0, vec![(x, 1.0)]);
        let r = backend().solve_lp(&m, &SolveLimits::exact()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.primal.is_none());
    }

    /// A model with no columns must be judged by its row constants, not
    /// waved through as trivially optimal (HiGHS reports "empty" and skips
    /// the row bounds entirely).
    #[test]
    fn column_less_models_are_decided_by_row_constants() {
        let mut bad = LinearModel::new();
        bad.add_row("unmet", RowSense::Ge, 5.0, Vec::new());
        let r = backend().solve_lp(&bad, &SolveLimits::exact()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        let r = backend().solve_milp(&bad, &SolveLimits::exact(), &WarmStart::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);

        let mut ok = LinearModel::new();
        ok.add_row("slack_le", RowSense::Le, 2.0, Vec::new());
        ok.add_row("slack_ge", RowSense::Ge, -1.0, Vec::new());
        ok.add_row("zero_eq", RowSense::Eq, 0.0, Vec::new());
        let r = backend().solve_lp(&ok, &SolveLimits::exact()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_eq!(r.objective, Some(0.0));
        assert_eq!(r.primal.as_deref(), Some(&[][..]));
        assert_eq!(r.row_duals.as_deref(), Some(&[0.0, 0.0, 0.0][..]));

        // The constant objective still has to clear a MILP cutoff.
        let warm = WarmStart { solution: None, cutoff: Some(-1.0) };
        let r = backend().solve_milp(&ok, &SolveLimits::exact(), &warm).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn lp_rejects_integer_models() {
        let mut m = LinearModel::new();
        m.add_var("y", 1.0, 0.0, f64::INFINITY, true);
        assert!(matches!(
            backend().solve_lp(&m, &SolveLimits::exact()),
            Err(SolverError::IntegerInLp)
        ));
    }

    /// The toy design problem `min 100 y + x, x ≥ 5, x ≤ 10 y, y integer`:
    /// optimum 105 at (y, x) = (1, 5).
    fn toy_milp() -> (LinearModel, VarId, VarId) {
        let mut m = LinearModel::new();
        let y = m.add_var("y", 100.0, 0.0, f64::INFINITY, true);
        let x = m.add_var("x", 1.0, 0.0, f64::INFINITY, false);
        m.add_row("demand", RowSense::Ge, 5.0, vec![(x, 1.0)]);
        m.add_row("capacity", RowSense::Le, 0.0, vec![(x, 1.0), (y, -10.0)]);
        (m, y, x)
    }

    #[test]
    fn milp_solves_with_warm_start_and_cutoff() {
        let (m, y, x) = toy_milp();
        let mut warm_vec = vec![0.0; m.n_vars()];
        warm_vec[y.0] = 1.0;
        warm_vec[x.0] = 5.0;
        let warm = WarmStart { solution: Some(warm_vec), cutoff: Some(105.0) };
        let r = backend()
            .solve_milp(&m, &SolveLimits::exact(), &warm)
            .unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective.unwrap() - 105.0).abs() < 1e-9);
        assert!((r.bound.unwrap() - 105.0).abs() < 1e-6);
        let sol = r.primal.unwrap();
        assert!((sol[y.0] - 1.0).abs() < INTEGRALITY_TOL);
        assert!((sol[x.0] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn milp_infeasibility_is_reported() {
        let (mut m, y, _) = toy_milp();
        m.vars[y.0].upper = 0.0; // no vehicle may run, demand unmeetable
        let r = backend()
            .solve_milp(&m, &SolveLimits::exact(), &WarmStart::default())
            .unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn relaxation_drops_integrality() {
        let (m, _, _) = toy_milp();
        assert!(m.has_integers());
        let relaxed = m.relaxation();
        assert!(!relaxed.has_integers());
        // LP optimum of the toy relaxation: y = 0.5, objective 55.
        let r = backend().solve_lp(&relaxed, &SolveLimits::exact()).unwrap();
        assert!((r.objective.unwrap() - 55.0).abs() < 1e-9);
    }

    #[test]
    fn violation_measure_flags_broken_points() {
        let (m, y, x) = toy_milp();
        let mut point = vec![0.0; m.n_vars()];
        point[y.0] = 1.0;
        point[x.0] = 5.0;
        assert!(m.max_violation(&point) <= 0.0);
        point[x.0] = 4.0; // demand short by 1
        assert!((m.max_violation(&point) - 1.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn backend_env_selection() {
        // Only "highs" is recognized.
        std::env::remove_var(BACKEND_ENV_VAR);
        assert_eq!(backend_from_env().unwrap().name(), "highs");
        std::env::set_var(BACKEND_ENV_VAR, "nope");
        assert!(matches!(backend_from_env(), Err(SolverError::UnknownBackend(_))));
        std::env::remove_var(BACKEND_ENV_VAR);
    }
}

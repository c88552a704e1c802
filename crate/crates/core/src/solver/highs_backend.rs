//! In-process HiGHS adapter.
//!
//! Translates [`LinearModel`] to HiGHS's column-wise form and maps statuses
//! back.  Solves are configured for reproducibility: single-threaded with a
//! fixed random seed, so repeated solves of the same model give identical
//! results.  Dual rays are not exposed by this adapter (`ray` is always
//! `None` on infeasible results); callers price phase-one certificates
//! themselves.

use super::{
    empty_model_result, LinearModel, RowSense, SolveLimits, SolveResult, SolveStatus,
    SolverBackend, SolverError, WarmStart,
};
use highs::{ColProblem, HighsModelStatus, Model, Sense};
use std::time::Instant;

/// Bundled HiGHS backend.
#[derive(Clone, Debug, Default)]
pub struct HighsBackend {
    _private: (),
}

impl HighsBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Slack added to an emulated cutoff row so a solution exactly at the
    /// cutoff stays feasible under floating-point noise.
    fn cutoff_slack(cutoff: f64) -> f64 {
        1e-7 * cutoff.abs().max(1.0)
    }

    fn build(
        &self,
        model: &LinearModel,
        integer: bool,
        cutoff: Option<f64>,
    ) -> Result<highs::Model, SolverError> {
        let mut pb = ColProblem::new();
        let mut rows = Vec::with_capacity(model.n_rows() + 1);
        for row in &model.rows {
            let bounds: (f64, f64) = match row.sense {
                RowSense::Le => (f64::NEG_INFINITY, row.rhs),
                RowSense::Ge => (row.rhs, f64::INFINITY),
                RowSense::Eq => (row.rhs, row.rhs),
            };
            rows.push(pb.add_row(bounds.0..bounds.1));
        }
        // The emulated cutoff: objective expression ≤ cutoff + slack.
        let cutoff_row = cutoff.map(|c| pb.add_row(..c + Self::cutoff_slack(c)));

        // Column-wise coefficients, gathered per variable.
        let mut cols: Vec<Vec<(highs::Row, f64)>> = vec![Vec::new(); model.n_vars()];
        for (ri, row) in model.rows.iter().enumerate() {
            for &(v, a) in &row.terms {
                cols[v.0].push((rows[ri], a));
            }
        }
        if let Some(cr) = cutoff_row {
            for (j, v) in model.vars.iter().enumerate() {
                if v.obj != 0.0 {
                    cols[j].push((cr, v.obj));
                }
            }
        }
        for (j, v) in model.vars.iter().enumerate() {
            if integer && v.integer {
                pb.add_integer_column(v.obj, v.lower..v.upper, cols[j].iter().copied());
            } else {
                pb.add_column(v.obj, v.lower..v.upper, cols[j].iter().copied());
            }
        }

        Ok(pb.optimise(Sense::Minimise))
    }

    fn configure(model: &mut Model, limits: &SolveLimits, mip: bool) {
        model.make_quiet();
        model.set_option("threads", 1);
        model.set_option("random_seed", 0);
        if let Some(t) = limits.time_seconds {
            model.set_option("time_limit", t.max(1e-3));
        }
        if mip {
            model.set_option("mip_rel_gap", limits.rel_gap.max(0.0));
        }
    }

    fn unexpected(&self, status: HighsModelStatus) -> SolverError {
        SolverError::UnexpectedStatus {
            backend: self.name().to_string(),
            status: format!("{status:?}"),
        }
    }
}

impl SolverBackend for HighsBackend {
    fn name(&self) -> &str {
        "highs"
    }

    fn solve_lp(
        &self,
        model: &LinearModel,
        limits: &SolveLimits,
    ) -> Result<SolveResult, SolverError> {
        if model.has_integers() {
            return Err(SolverError::IntegerInLp);
        }
        if model.n_vars() == 0 {
            return Ok(empty_model_result(model));
        }
        let start = Instant::now();
        let mut m = self.build(model, false, None)?;
        Self::configure(&mut m, limits, false);
        let mut solved = m.solve();

        // HiGHS may return the ambiguous combined status when presolve
        // detects trouble; re-solving without presolve resolves it.
        if solved.status() == HighsModelStatus::UnboundedOrInfeasible {
            let mut m = self.build(model, false, None)?;
            Self::configure(&mut m, limits, false);
            m.set_option("presolve", "off");
            solved = m.solve();
        }

        let elapsed = start.elapsed().as_secs_f64();
        match solved.status() {
            HighsModelStatus::Optimal | HighsModelStatus::ModelEmpty => {
                let sol = solved.get_solution();
                let primal = sol.columns().to_vec();
                let objective = model.objective_value(&primal);
                Ok(SolveResult {
                    status: SolveStatus::Optimal,
                    objective: Some(objective),
                    bound: Some(objective),
                    primal: Some(primal),
                    row_duals: Some(sol.dual_rows().to_vec()),
                    ray: None,
                    solve_seconds: elapsed,
                })
            }
            HighsModelStatus::Infeasible => Ok(SolveResult {
                status: SolveStatus::Infeasible,
                objective: None,
                bound: None,
                primal: None,
                row_duals: None,
                ray: None,
                solve_seconds: elapsed,
            }),
            HighsModelStatus::Unbounded => Ok(SolveResult {
                status: SolveStatus::Unbounded,
                objective: None,
                bound: None,
                primal: None,
                row_duals: None,
                ray: None,
                solve_seconds: elapsed,
            }),
            HighsModelStatus::ReachedTimeLimit | HighsModelStatus::ReachedIterationLimit => {
                Ok(SolveResult {
                    status: SolveStatus::NoSolutionLimit,
                    objective: None,
                    bound: None,
                    primal: None,
                    row_duals: None,
                    ray: None,
                    solve_seconds: elapsed,
                })
            }
            other => Err(self.unexpected(other)),
        }
    }

    fn solve_milp(
        &self,
        model: &LinearModel,
        limits: &SolveLimits,
        warm: &WarmStart,
    ) -> Result<SolveResult, SolverError> {
        if model.n_vars() == 0 {
            let mut res = empty_model_result(model);
            // The constant objective 0 must also clear any cutoff.
            if warm.cutoff.is_some_and(|c| 0.0 > c + Self::cutoff_slack(c)) {
                res = SolveResult {
                    status: SolveStatus::Infeasible,
                    objective: None,
                    bound: None,
                    primal: None,
                    row_duals: None,
                    ray: None,
                    solve_seconds: 0.0,
                };
            }
            return Ok(res);
        }
        let start = Instant::now();
        let mut m = self.build(model, true, warm.cutoff)?;
        Self::configure(&mut m, limits, true);
        if let Some(sol) = &warm.solution {
            debug_assert_eq!(sol.len(), model.n_vars());
            m.set_solution(Some(sol.as_slice()), None, None, None);
        }
        let solved = m.solve();
        let elapsed = start.elapsed().as_secs_f64();

        let dual_bound = solved
            .double_info_value(c"mip_dual_bound")
            .ok()
            .filter(|b| b.is_finite());
        let has_primal = solved.primal_solution_status() == highs::HighsSolutionStatus::Feasible;
        let extract = |solved: &highs::SolvedModel| -> (Option<f64>, Option<Vec<f64>>) {
            let primal = solved.get_solution().columns().to_vec();
            (Some(model.objective_value(&primal)), Some(primal))
        };

        match solved.status() {
            HighsModelStatus::Optimal | HighsModelStatus::ModelEmpty => {
                let (objective, primal) = extract(&solved);
                Ok(SolveResult {
                    status: SolveStatus::Optimal,
                    bound: Some(dual_bound.unwrap_or(objective.unwrap())),
                    objective,
                    primal,
                    row_duals: None,
                    ray: None,
                    solve_seconds: elapsed,
                })
            }
            HighsModelStatus::Infeasible => Ok(SolveResult {
                status: SolveStatus::Infeasible,
                objective: None,
                bound: None,
                primal: None,
                row_duals: None,
                ray: None,
                solve_seconds: elapsed,
            }),
            HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => {
                Ok(SolveResult {
                    status: SolveStatus::Unbounded,
                    objective: None,
                    bound: None,
                    primal: None,
                    row_duals: None,
                    ray: None,
                    solve_seconds: elapsed,
                })
            }
            HighsModelStatus::ReachedTimeLimit
            | HighsModelStatus::ReachedIterationLimit
            | HighsModelStatus::ObjectiveBound
            | HighsModelStatus::ObjectiveTarget => {
                if has_primal {
                    let (objective, primal) = extract(&solved);
                    Ok(SolveResult {
                        status: SolveStatus::FeasibleLimit,
                        objective,
                        bound: dual_bound,
                        primal,
                        row_duals: None,
                        ray: None,
                        solve_seconds: elapsed,
                    })
                } else {
                    Ok(SolveResult {
                        status: SolveStatus::NoSolutionLimit,
                        objective: None,
                        bound: dual_bound,
                        primal: None,
                        row_duals: None,
                        ray: None,
                        solve_seconds: elapsed,
                    })
                }
            }
            other => Err(self.unexpected(other)),
        }
    }
}

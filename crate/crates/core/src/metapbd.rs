//! The adaptive partial-decomposition controller.
//!
//! The full problem is attacked through a family of Benders masters indexed
//! by an aggregation level `K` (how many super-products the master routes;
//! level 0 would keep only design variables and cuts).  Coarse masters are
//! cheap relaxations, fine masters are tight but heavy; no level dominates
//! a priori, so the controller *searches over K*:
//!
//! 1. **Seed** — round up the LP relaxation's vehicle vector and price its
//!    flows: a feasible solution and a first upper bound; the LP optimum is
//!    the first lower bound.
//! 2. **Phase one** — run the Benders loop at `K = 1`.  A stall monitor
//!    watches bound progress over tumbling `t_bounds`-second windows: when
//!    neither bound improved by `impr_bounds` (relative), it fires —
//!    *decrease* K when the window produced fewer than `msols_max` integer
//!    master solutions (the master itself is intractable), *increase*
//!    otherwise (the master is easy but loose).  The next level is the
//!    rounded-up midpoint toward the nearest visited level in that
//!    direction, so visited levels are pairwise distinct and the search
//!    bisects the remaining interval.  Cuts mention only `y` and `z`, so
//!    the pool, both bounds and the incumbent carry across switches.
//! 3. **Phase two** — refine the partition until every subset has one
//!    supplier set (the equivalence premise), solve that master as a single
//!    MILP warm-started with the incumbent and both bounds, and unfold its
//!    super flows into a real per-product solution.
//!
//! Every upper bound accepted anywhere passes the independent
//! [`verify_solution`] check first; the solver is never trusted about
//! feasibility of reported incumbents.

use crate::instance::Instance;
use crate::models::cuts::{make_feasibility_cut, make_optimality_cut, BendersCut, CutKind, CutPool};
use crate::models::{
    aggregate_solution, build_lsndp, build_master, build_phase_one, build_subproblem,
    disaggregate_solution, verify_solution, FlowDomain, FlowSolution, IndexedPartition,
    ModelError, VehicleSolution,
};
use crate::partition::{build_partition_sequence, refine_to_exact, PartitionError, PartitionSequence};
use crate::solver::{
    SolveLimits, SolveStatus, SolverBackend, SolverError, WarmStart, FEASIBILITY_TOL,
    INTEGRALITY_TOL,
};
use crate::timegraph::{expand, TimeExpandedGraph};
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::collections::BTreeSet;
use std::time::Instant;
use thiserror::Error;

/// A monotone seconds-since-start clock.  Injectable so the control flow of
/// the stall monitor and phase budgets is unit-testable with virtual time.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Wall time from construction.
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self { start: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// A hand-driven clock for deterministic tests.
#[derive(Default)]
pub struct ManualClock {
    t: Cell<f64>,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, dt: f64) {
        self.t.set(self.t.get() + dt);
    }

    pub fn set(&self, t: f64) {
        self.t.set(t);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        self.t.get()
    }
}

/// Controller parameters.  The phase budgets follow the shares of a global
/// time limit used throughout: stall windows a 1/18 share, phase one 1/3,
/// phase two 2/3.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct MetaParams {
    /// Largest aggregation level the search may visit (clamped to the
    /// product count at run time).
    pub k_max: usize,
    /// Stall-monitor window length, seconds.
    pub t_bounds: f64,
    /// Relative bound improvement that counts as progress in a window.
    pub impr_bounds: f64,
    /// Integer master solutions per window at or above which a stall means
    /// "increase K" rather than "decrease K".
    pub msols_max: usize,
    /// Phase-one budget, seconds from run start.
    pub t1_max: f64,
    /// Phase-two budget, seconds on top of phase one's.
    pub t2_max: f64,
    /// Stop once `(UB − LB)/|UB|` proves this gap.
    pub gap: f64,
    /// Seed for partition construction (medoid splitting).
    pub seed: u64,
}

impl MetaParams {
    /// Defaults derived from one global time limit.
    pub fn with_time_limit(total_seconds: f64) -> Self {
        Self {
            k_max: 10,
            t_bounds: total_seconds / 18.0,
            impr_bounds: 0.01,
            msols_max: 1,
            t1_max: total_seconds / 3.0,
            t2_max: 2.0 * total_seconds / 3.0,
            gap: 0.01,
            seed: 0,
        }
    }
}

impl Default for MetaParams {
    fn default() -> Self {
        Self::with_time_limit(60.0)
    }
}

#[derive(Debug, Error)]
pub enum MetaError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("instance is structurally infeasible: its flow relaxation has no solution")]
    Infeasible,
    #[error("unexpected solver behaviour: {0}")]
    Unexpected(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
}

/// One line of the run log.  Timestamps are clock seconds since run start.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Seed { t: f64, lb: f64, ub: f64 },
    MasterSolved { t: f64, k: usize, objective: Option<f64>, bound: Option<f64> },
    LowerBound { t: f64, k: usize, lb: f64 },
    UpperBound { t: f64, k: usize, ub: f64 },
    CutAdded { t: f64, k: usize, kind: String, pool_size: usize },
    CutRejected { t: f64, k: usize, reason: String },
    IncumbentRejected { t: f64, k: usize, reason: String },
    StallDetected { t: f64, k: usize, direction: Direction, window_solutions: usize },
    KSwitch { t: f64, from: usize, to: usize, direction: Direction },
    PhaseEnd { t: f64, phase: u8, reason: String, lb: f64, ub: f64 },
}

/// The nearest visited aggregation levels around the current one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KWindow {
    pub k: usize,
    /// Largest visited level strictly below `k`.
    pub k_minus: Option<usize>,
    /// Smallest visited level strictly above `k`.
    pub k_plus: Option<usize>,
}

impl KWindow {
    pub fn from_visited(k: usize, visited: &BTreeSet<usize>) -> Self {
        Self {
            k,
            k_minus: visited.range(..k).next_back().copied(),
            k_plus: visited.range(k + 1..).next().copied(),
        }
    }
}

/// The bisection rule for the next aggregation level.
///
/// Increasing from `k`: blocked at `k_max` or when the next level up was
/// already visited; otherwise the rounded-up midpoint toward the nearest
/// visited level above, or `⌈(k_max − k)/2⌉` when nothing above was visited
/// (the literal published rule — note it is an absolute level, not an
/// increment).  Decreasing mirrors this toward the nearest visited level
/// below; level 1 is always visited first, so a missing lower neighbour
/// only occurs on malformed input and yields `None`.
pub fn next_k(win: &KWindow, k_max: usize, direction: Direction) -> Option<usize> {
    match direction {
        Direction::Increase => {
            if win.k >= k_max || win.k_plus == Some(win.k + 1) {
                return None;
            }
            Some(match win.k_plus {
                Some(kp) => (win.k + kp).div_ceil(2),
                None => (k_max - win.k).div_ceil(2),
            })
        }
        Direction::Decrease => {
            if win.k <= 1 || win.k_minus == Some(win.k - 1) {
                return None;
            }
            win.k_minus.map(|km| (win.k + km).div_ceil(2))
        }
    }
}

/// Tumbling-window progress monitor (virtual-time friendly: all methods
/// take `now` explicitly).
struct StallMonitor {
    t_bounds: f64,
    impr_bounds: f64,
    msols_max: usize,
    window_start: f64,
    lb0: f64,
    ub0: f64,
    window_solutions: usize,
}

impl StallMonitor {
    fn new(now: f64, params: &MetaParams, lb: f64, ub: f64) -> Self {
        Self {
            t_bounds: params.t_bounds,
            impr_bounds: params.impr_bounds,
            msols_max: params.msols_max,
            window_start: now,
            lb0: lb,
            ub0: ub,
            window_solutions: 0,
        }
    }

    fn note_master_solution(&mut self) {
        self.window_solutions += 1;
    }

    fn reset(&mut self, now: f64, lb: f64, ub: f64) {
        self.window_start = now;
        self.lb0 = lb;
        self.ub0 = ub;
        self.window_solutions = 0;
    }

    /// Once per closed window: `None` if a bound moved enough, otherwise the
    /// switch direction.  Either way the next window opens at `now`.
    fn poll(&mut self, now: f64, lb: f64, ub: f64) -> Option<(Direction, usize)> {
        if now - self.window_start < self.t_bounds {
            return None;
        }
        let lb_moved = relative_improvement(self.lb0, lb) >= self.impr_bounds;
        let ub_moved = relative_improvement(-self.ub0, -ub) >= self.impr_bounds;
        let fired = if lb_moved || ub_moved {
            None
        } else if self.window_solutions < self.msols_max {
            Some((Direction::Decrease, self.window_solutions))
        } else {
            Some((Direction::Increase, self.window_solutions))
        };
        self.reset(now, lb, ub);
        fired
    }
}

/// Relative growth from `old` to `new`, scaled by `max(1, |old|)`; an
/// infinite-to-finite move counts as unbounded improvement.
fn relative_improvement(old: f64, new: f64) -> f64 {
    if old.is_infinite() {
        return if new.is_finite() { f64::INFINITY } else { 0.0 };
    }
    (new - old) / old.abs().max(1.0)
}

/// Everything learned so far; survives aggregation-level switches and the
/// phase boundary.
pub struct SearchState {
    pub lb: f64,
    pub ub: f64,
    pub incumbent: Option<(VehicleSolution, FlowSolution)>,
    pub cuts: CutPool,
    pub visited_k: BTreeSet<usize>,
    pub k_trajectory: Vec<usize>,
    pub events: Vec<Event>,
    pub n_master_solves: usize,
    pub n_subproblem_solves: usize,
    /// How many of those subproblems were feasible (the rest produced
    /// feasibility cuts).
    pub n_subproblems_feasible: usize,
}

impl SearchState {
    pub fn new(lb: f64, ub: f64, incumbent: Option<(VehicleSolution, FlowSolution)>) -> Self {
        Self {
            lb,
            ub,
            incumbent,
            cuts: CutPool::new(),
            visited_k: BTreeSet::new(),
            k_trajectory: Vec::new(),
            events: Vec::new(),
            n_master_solves: 0,
            n_subproblem_solves: 0,
            n_subproblems_feasible: 0,
        }
    }

    /// Relative optimality gap `(UB − LB)/|UB|`.
    pub fn gap(&self) -> f64 {
        if !self.ub.is_finite() {
            return f64::INFINITY;
        }
        (self.ub - self.lb) / self.ub.abs().max(1e-12)
    }
}

/// Why one Benders run at a fixed aggregation level returned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitReason {
    /// Proven gap at or below target.
    GapReached,
    /// The deadline passed.
    TimeLimit,
    /// The stall monitor fired with a switch direction.
    Stall(Direction),
    /// Fixed point: the master is optimal and the subproblem confirms it —
    /// whatever gap remains is aggregation looseness at this level.
    Exhausted,
}

/// The heuristic seed: LP relaxation, vehicle vector rounded up, flows
/// re-priced at the rounded design (feasible by construction — capacity
/// only grew).
pub struct SeedSolution {
    pub y: VehicleSolution,
    pub x: FlowSolution,
    /// Full objective of the rounded solution.
    pub ub: f64,
    /// The LP relaxation optimum.
    pub lb: f64,
}

pub fn heuristic_seed(
    graph: &TimeExpandedGraph,
    inst: &Instance,
    backend: &dyn SolverBackend,
) -> Result<SeedSolution, MetaError> {
    let built = build_lsndp(graph, inst);
    let lp = backend.solve_lp(&built.model.relaxation(), &SolveLimits::exact())?;
    match lp.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(MetaError::Infeasible),
        other => return Err(MetaError::Unexpected(format!("flow relaxation ended {other:?}"))),
    }
    let lb = lp.objective_value();
    let primal = lp.primal.expect("optimal LP carries a solution");
    let y = VehicleSolution {
        y: built
            .y
            .iter()
            .map(|&v| (primal[v.0] - INTEGRALITY_TOL).ceil().max(0.0) as u32)
            .collect(),
    };
    let sub = build_subproblem(graph, inst, &y);
    let sp = backend.solve_lp(&sub.model, &SolveLimits::exact())?;
    if sp.status != SolveStatus::Optimal {
        return Err(MetaError::Unexpected(format!(
            "flows under the rounded design ended {:?} though capacity only grew",
            sp.status
        )));
    }
    let x = sub.flow_solution(sp.primal.as_ref().expect("optimal LP carries a solution"));
    let ub = y.fixed_cost(graph) + sp.objective_value();
    let report = verify_solution(graph, inst, &y, &x, FEASIBILITY_TOL);
    if !report.is_ok() {
        return Err(MetaError::Unexpected(format!(
            "seed solution failed verification: {:?}",
            report.violations
        )));
    }
    Ok(SeedSolution { y, x, ub, lb })
}

/// Final outcome of a controller run.
pub struct MetaOutcome {
    pub lb: f64,
    pub ub: f64,
    pub gap: f64,
    /// The best solution found; every update to it passed independent
    /// verification.  Always present after a successful run (the seed
    /// already provides one).
    pub solution: Option<(VehicleSolution, FlowSolution)>,
    pub events: Vec<Event>,
    pub k_trajectory: Vec<usize>,
    /// Every cut pooled during the adaptive phase, for external audits.
    pub cuts: Vec<BendersCut>,
    /// (feasibility, optimality) pooled cut counts.
    pub cut_counts: (usize, usize),
    pub n_master_solves: usize,
    pub n_subproblem_solves: usize,
    pub n_subproblems_feasible: usize,
    pub wall_seconds: f64,
}

/// Shared run context.
struct Ctx<'a> {
    graph: &'a TimeExpandedGraph,
    inst: &'a Instance,
    backend: &'a dyn SolverBackend,
    clock: &'a dyn Clock,
    params: MetaParams,
}

impl Ctx<'_> {
    fn domain(&self) -> FlowDomain {
        FlowDomain::new(self.graph, self.inst)
    }

    /// Slice of time left until `deadline`, floored so the backend always
    /// gets a positive limit.
    fn slice(&self, deadline: f64) -> SolveLimits {
        SolveLimits::exact().time_limited((deadline - self.clock.now()).max(1e-3))
    }

    fn improve_lb(&self, state: &mut SearchState, k: usize, bound: Option<f64>) {
        if let Some(b) = bound {
            // A bound a hair above a verified UB is solver round-off; the
            // invariant LB ≤ UB wins.
            let b = b.min(state.ub);
            if b > state.lb {
                state.lb = b;
                state.events.push(Event::LowerBound { t: self.clock.now(), k, lb: b });
            }
        }
    }

    /// Accept a candidate incumbent only after independent verification.
    fn offer_ub(
        &self,
        state: &mut SearchState,
        k: usize,
        y: &VehicleSolution,
        x: FlowSolution,
    ) -> bool {
        let report = verify_solution(self.graph, self.inst, y, &x, FEASIBILITY_TOL);
        if !report.is_ok() {
            state.events.push(Event::IncumbentRejected {
                t: self.clock.now(),
                k,
                reason: format!("failed verification: {:?}", report.violations),
            });
            return false;
        }
        if report.objective < state.ub - 1e-12 {
            state.ub = report.objective;
            state.incumbent = Some((y.clone(), x));
            state.events.push(Event::UpperBound { t: self.clock.now(), k, ub: report.objective });
            true
        } else {
            false
        }
    }

    /// The Benders loop at one aggregation level.  The master is built
    /// fresh, strengthened with every pooled cut plus a floor row
    /// `Σf·y + z ≥ LB` (sound: LB never exceeds the true optimum, whose
    /// aggregate stays master-feasible at exactly that objective).
    fn benders_at_k(
        &self,
        indexed: &IndexedPartition,
        k: usize,
        state: &mut SearchState,
        deadline: f64,
        mut monitor: Option<&mut StallMonitor>,
    ) -> Result<ExitReason, MetaError> {
        let mut master = build_master(self.graph, self.inst, indexed);
        master.add_cuts(state.cuts.cuts());
        let floor_row = state.lb.is_finite().then(|| {
            let mut terms: Vec<_> = master
                .y
                .iter()
                .zip(&self.graph.transport_arcs)
                .map(|(&v, arc)| (v, arc.fixed_cost))
                .filter(|&(_, f)| f != 0.0)
                .collect();
            terms.push((master.z, 1.0));
            master.model.add_row("bound_floor", crate::solver::RowSense::Ge, state.lb, terms)
        });

        loop {
            if state.gap() <= self.params.gap {
                return Ok(ExitReason::GapReached);
            }
            if self.clock.now() >= deadline {
                return Ok(ExitReason::TimeLimit);
            }
            if let Some(r) = floor_row {
                master.model.rows[r.0].rhs = state.lb;
            }
            let warm = match &state.incumbent {
                Some((y, x)) => WarmStart {
                    solution: Some(master.warm_vector(
                        y,
                        &aggregate_solution(self.graph, &master.partition, x),
                    )),
                    cutoff: Some(state.ub),
                },
                None => WarmStart::default(),
            };
            // The master is solved a notch tighter than the global target so
            // its own MIP gap cannot keep the overall gap hovering above it.
            let mut limits = self.slice(deadline);
            limits.rel_gap = self.params.gap / 4.0;
            let res = self.backend.solve_milp(&master.model, &limits, &warm)?;
            state.n_master_solves += 1;
            self.improve_lb(state, k, res.bound);

            match res.status {
                SolveStatus::Infeasible => {
                    return if warm.cutoff.is_some() {
                        // Nothing beats the incumbent: the cutoff closed the
                        // level, which proves LB = UB.
                        state.lb = state.ub;
                        state.events.push(Event::LowerBound { t: self.clock.now(), k, lb: state.lb });
                        Ok(ExitReason::GapReached)
                    } else {
                        Err(MetaError::Unexpected(
                            "master infeasible without a cutoff: pooled cuts unsound".into(),
                        ))
                    };
                }
                SolveStatus::Unbounded => {
                    return Err(MetaError::Unexpected("master unbounded".into()));
                }
                SolveStatus::NoSolutionLimit => {
                    if let Some(m) = monitor.as_deref_mut() {
                        if let Some((direction, sols)) = m.poll(self.clock.now(), state.lb, state.ub) {
                            state.events.push(Event::StallDetected {
                                t: self.clock.now(),
                                k,
                                direction,
                                window_solutions: sols,
                            });
                            return Ok(ExitReason::Stall(direction));
                        }
                    }
                    continue;
                }
                SolveStatus::Optimal | SolveStatus::FeasibleLimit => {}
            }

            let primal = res.primal.as_ref().expect("solution-bearing status");
            let y = master.vehicle_solution(primal)?;
            let z_bar = primal[master.z.0];
            state.events.push(Event::MasterSolved {
                t: self.clock.now(),
                k,
                objective: res.objective,
                bound: res.bound,
            });
            if let Some(m) = monitor.as_deref_mut() {
                m.note_master_solution();
            }

            let made_cut = self.price_design(state, k, &y, z_bar, deadline)?;
            match made_cut {
                Pricing::NewCut(cut) => {
                    master.add_cut(&cut);
                }
                Pricing::Settled => {
                    if res.status == SolveStatus::Optimal {
                        // Optimal master, subproblem agrees, no cut: a fixed
                        // point of this level.
                        return Ok(ExitReason::Exhausted);
                    }
                    // The master stopped early; give it another slice.
                }
                Pricing::Degenerate => {
                    return Ok(ExitReason::Exhausted);
                }
                Pricing::TimedOut => {
                    return Ok(ExitReason::TimeLimit);
                }
            }

            if let Some(m) = monitor.as_deref_mut() {
                if let Some((direction, sols)) = m.poll(self.clock.now(), state.lb, state.ub) {
                    state.events.push(Event::StallDetected {
                        t: self.clock.now(),
                        k,
                        direction,
                        window_solutions: sols,
                    });
                    return Ok(ExitReason::Stall(direction));
                }
            }
        }
    }

    /// Solve the pricing subproblem at a design and turn the outcome into a
    /// cut and/or an incumbent.
    fn price_design(
        &self,
        state: &mut SearchState,
        k: usize,
        y: &VehicleSolution,
        z_bar: f64,
        deadline: f64,
    ) -> Result<Pricing, MetaError> {
        let sub = build_subproblem(self.graph, self.inst, y);
        let sp = self.backend.solve_lp(&sub.model, &self.slice(deadline))?;
        state.n_subproblem_solves += 1;
        match sp.status {
            SolveStatus::Optimal => {
                state.n_subproblems_feasible += 1;
                let cost = sp.objective_value();
                let x = sub.flow_solution(sp.primal.as_ref().expect("optimal LP"));
                self.offer_ub(state, k, y, x);
                if cost <= z_bar + FEASIBILITY_TOL * cost.abs().max(1.0) {
                    return Ok(Pricing::Settled);
                }
                match make_optimality_cut(&sub, self.inst, sp.row_duals.as_ref().unwrap(), y, cost) {
                    Ok(cut) => Ok(self.pool_cut(state, k, cut)),
                    Err(e) => {
                        state.events.push(Event::CutRejected {
                            t: self.clock.now(),
                            k,
                            reason: e.to_string(),
                        });
                        Ok(Pricing::Degenerate)
                    }
                }
            }
            SolveStatus::Infeasible => {
                let phase = build_phase_one(self.graph, self.inst, y);
                let pres = self.backend.solve_lp(&phase.model, &self.slice(deadline))?;
                match pres.status {
                    SolveStatus::Optimal => {}
                    SolveStatus::NoSolutionLimit | SolveStatus::FeasibleLimit => {
                        return Ok(Pricing::TimedOut);
                    }
                    other => {
                        return Err(MetaError::Unexpected(format!(
                            "always-feasible phase one ended {other:?}"
                        )));
                    }
                }
                match make_feasibility_cut(
                    &phase,
                    self.inst,
                    pres.row_duals.as_ref().unwrap(),
                    y,
                    pres.objective_value(),
                ) {
                    Ok(cut) => Ok(self.pool_cut(state, k, cut)),
                    Err(e) => {
                        state.events.push(Event::CutRejected {
                            t: self.clock.now(),
                            k,
                            reason: e.to_string(),
                        });
                        Ok(Pricing::Degenerate)
                    }
                }
            }
            // The slice ran out before optimality: a time exit, not an
            // error — partial LP results carry no cut-grade duals.
            SolveStatus::NoSolutionLimit | SolveStatus::FeasibleLimit => Ok(Pricing::TimedOut),
            other => Err(MetaError::Unexpected(format!("subproblem ended {other:?}"))),
        }
    }

    fn pool_cut(&self, state: &mut SearchState, k: usize, cut: crate::models::cuts::BendersCut) -> Pricing {
        let kind = match cut.kind {
            CutKind::Feasibility => "feasibility",
            CutKind::Optimality => "optimality",
        };
        if state.cuts.push(cut.clone()) {
            state.events.push(Event::CutAdded {
                t: self.clock.now(),
                k,
                kind: kind.into(),
                pool_size: state.cuts.len(),
            });
            Pricing::NewCut(cut)
        } else {
            // A duplicate of a cut the master already contains cannot cut
            // anything off — only numerics get here.
            Pricing::Degenerate
        }
    }

    /// Phase one: adaptive-level Benders starting at level 1.
    fn phase1(&self, seq: &PartitionSequence, state: &mut SearchState) -> Result<(), MetaError> {
        let deadline = self.params.t1_max;
        let k_cap = seq.max_k();
        let domain = self.domain();
        let mut monitor = StallMonitor::new(self.clock.now(), &self.params, state.lb, state.ub);
        let mut k = 1usize;
        let reason = loop {
            if state.visited_k.insert(k) {
                state.k_trajectory.push(k);
            }
            let indexed = IndexedPartition::new(seq.level(k), &domain)?;
            let exit = self.benders_at_k(&indexed, k, state, deadline, Some(&mut monitor))?;
            let switch_direction = match exit {
                ExitReason::GapReached => break "gap reached",
                ExitReason::TimeLimit => break "time limit",
                ExitReason::Stall(direction) => direction,
                // A level normally exhausts only at the optimum (the cut
                // loop alone converges); exhaustion above target gap means
                // cut generation degenerated, so try a tighter master.
                ExitReason::Exhausted if state.gap() <= self.params.gap => break "gap reached",
                ExitReason::Exhausted => Direction::Increase,
            };
            let window = KWindow::from_visited(k, &state.visited_k);
            let candidate = next_k(&window, k_cap, switch_direction)
                // Defensively skip already-visited targets: the literal
                // no-upper-neighbour rule can land below the current level.
                .filter(|c| (1..=k_cap).contains(c) && !state.visited_k.contains(c));
            match candidate {
                Some(next) => {
                    state.events.push(Event::KSwitch {
                        t: self.clock.now(),
                        from: k,
                        to: next,
                        direction: switch_direction,
                    });
                    k = next;
                }
                None if exit == ExitReason::Exhausted => break "exhausted",
                // Stalled but nowhere to go: keep grinding this level.
                None => {}
            }
        };
        state.events.push(Event::PhaseEnd {
            t: self.clock.now(),
            phase: 1,
            reason: reason.into(),
            lb: state.lb,
            ub: state.ub,
        });
        Ok(())
    }

    /// Phase two: the equivalent master at the supplier-set-exact partition,
    /// solved once with warm start, cutoff and bound floor, then unfolded.
    fn phase2(&self, state: &mut SearchState) -> Result<(), MetaError> {
        let deadline = self.params.t1_max + self.params.t2_max;
        if state.gap() <= self.params.gap {
            state.events.push(Event::PhaseEnd {
                t: self.clock.now(),
                phase: 2,
                reason: "already at target gap".into(),
                lb: state.lb,
                ub: state.ub,
            });
            return Ok(());
        }
        let exact = refine_to_exact(&self.inst.catalog, self.params.seed)?;
        let domain = self.domain();
        let indexed = IndexedPartition::new(&exact, &domain)?;
        let k = indexed.k();
        let mut master = build_master(self.graph, self.inst, &indexed);
        if state.lb.is_finite() {
            let mut terms: Vec<_> = master
                .y
                .iter()
                .zip(&self.graph.transport_arcs)
                .map(|(&v, arc)| (v, arc.fixed_cost))
                .filter(|&(_, f)| f != 0.0)
                .collect();
            terms.push((master.z, 1.0));
            master.model.add_row("bound_floor", crate::solver::RowSense::Ge, state.lb, terms);
        }
        let warm = match &state.incumbent {
            Some((y, x)) => WarmStart {
                solution: Some(
                    master.warm_vector(y, &aggregate_solution(self.graph, &indexed, x)),
                ),
                cutoff: Some(state.ub),
            },
            None => WarmStart::default(),
        };
        let mut limits = self.slice(deadline);
        limits.rel_gap = self.params.gap;
        let res = self.backend.solve_milp(&master.model, &limits, &warm)?;
        state.n_master_solves += 1;
        self.improve_lb(state, k, res.bound);
        match res.status {
            SolveStatus::Infeasible if warm.cutoff.is_some() => {
                // Nothing beats the incumbent; the incumbent is optimal.
                state.lb = state.ub;
                state.events.push(Event::LowerBound { t: self.clock.now(), k, lb: state.lb });
            }
            SolveStatus::Optimal | SolveStatus::FeasibleLimit => {
                let primal = res.primal.as_ref().expect("solution-bearing status");
                let y = master.vehicle_solution(primal)?;
                let sup = master.super_flow_solution(primal);
                let x = disaggregate_solution(self.graph, self.inst, &exact, &sup)?;
                self.offer_ub(state, k, &y, x);
                if res.status == SolveStatus::Optimal {
                    // This master is equivalent to the full problem, so its
                    // optimum closes the run up to the solve's own gap.
                    self.improve_lb(state, k, res.bound.or(res.objective));
                }
            }
            SolveStatus::NoSolutionLimit => {}
            other => {
                return Err(MetaError::Unexpected(format!(
                    "equivalent master ended {other:?}"
                )))
            }
        }
        state.events.push(Event::PhaseEnd {
            t: self.clock.now(),
            phase: 2,
            reason: format!("{:?}", res.status),
            lb: state.lb,
            ub: state.ub,
        });
        Ok(())
    }
}

enum Pricing {
    /// A fresh cut was pooled (and must be added to the live master).
    NewCut(crate::models::cuts::BendersCut),
    /// No cut needed: the master's `z` already covers the flow cost.
    Settled,
    /// A cut was refused or duplicated — no sound progress at this design.
    Degenerate,
    /// The time slice ran dry mid-pricing: no proven duals, so no cut.
    TimedOut,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phases {
    Both,
    OneOnly,
    TwoOnly,
}

fn run(
    inst: &Instance,
    params: &MetaParams,
    backend: &dyn SolverBackend,
    clock: &dyn Clock,
    phases: Phases,
) -> Result<MetaOutcome, MetaError> {
    let graph = expand(inst);
    let t0 = clock.now();
    let ctx = Ctx { graph: &graph, inst, backend, clock, params: *params };

    let seed = heuristic_seed(&graph, inst, backend)?;
    let mut state = SearchState::new(seed.lb, seed.ub, Some((seed.y, seed.x)));
    state.events.push(Event::Seed { t: clock.now(), lb: state.lb, ub: state.ub });

    if phases != Phases::TwoOnly {
        let k_cap = params.k_max.min(inst.catalog.products.len()).max(1);
        let seq = build_partition_sequence(&inst.catalog, k_cap, params.seed)?;
        ctx.phase1(&seq, &mut state)?;
    }
    if phases != Phases::OneOnly {
        ctx.phase2(&mut state)?;
    }

    Ok(MetaOutcome {
        lb: state.lb,
        ub: state.ub,
        gap: state.gap(),
        solution: state.incumbent,
        k_trajectory: state.k_trajectory,
        cuts: state.cuts.cuts().to_vec(),
        cut_counts: state.cuts.counts(),
        n_master_solves: state.n_master_solves,
        n_subproblem_solves: state.n_subproblem_solves,
        n_subproblems_feasible: state.n_subproblems_feasible,
        events: state.events,
        wall_seconds: clock.now() - t0,
    })
}

/// Run the full controller: seed, adaptive phase one, exact phase two.
pub fn meta_pbd(
    inst: &Instance,
    params: &MetaParams,
    backend: &dyn SolverBackend,
    clock: &dyn Clock,
) -> Result<MetaOutcome, MetaError> {
    run(inst, params, backend, clock, Phases::Both)
}

/// Seed plus the adaptive phase only — no exact finishing solve.
pub fn phase1_only(
    inst: &Instance,
    params: &MetaParams,
    backend: &dyn SolverBackend,
    clock: &dyn Clock,
) -> Result<MetaOutcome, MetaError> {
    run(inst, params, backend, clock, Phases::OneOnly)
}

/// Seed plus the exact finishing solve only — no adaptive phase.
pub fn phase2_only(
    inst: &Instance,
    params: &MetaParams,
    backend: &dyn SolverBackend,
    clock: &dyn Clock,
) -> Result<MetaOutcome, MetaError> {
    run(inst, params, backend, clock, Phases::TwoOnly)
}

/// One Benders run at a fixed partition, no stall monitoring, budgeted by
/// `params.t1_max`.  State is the caller's: start from
/// `SearchState::new(f64::NEG_INFINITY, f64::INFINITY, None)` for a cold
/// run, or carry bounds, cuts and incumbent in for a warm one.
pub fn benders_solve(
    inst: &Instance,
    partition: &crate::partition::ProductPartition,
    params: &MetaParams,
    state: &mut SearchState,
    backend: &dyn SolverBackend,
    clock: &dyn Clock,
) -> Result<ExitReason, MetaError> {
    let graph = expand(inst);
    let ctx = Ctx { graph: &graph, inst, backend, clock, params: *params };
    let domain = ctx.domain();
    let indexed = IndexedPartition::new(partition, &domain)?;
    let deadline = clock.now() + params.t1_max;
    ctx.benders_at_k(&indexed, partition.k(), state, deadline, None)
}

/// Serialize events as a line-oriented log (one JSON object per line) — the
/// format consumed by the bench reporting.
pub fn events_to_jsonl(events: &[Event]) -> String {
    events
        .iter()
        .map(|e| serde_json::to_string(e).expect("events serialize"))
        .fold(String::new(), |mut acc, line| {
            acc.push_str(&line);
            acc.push('\n');
            acc
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Arc, Demand, Instance, Node, NodeRole, ProductCatalog};
    use crate::models::testfix::{aggregatable_instance, toy_instance};
    use crate::partition::ProductPartition;
    use crate::solver::HighsBackend;

    fn backend() -> HighsBackend {
        HighsBackend::new()
    }

    fn visited(ks: &[usize]) -> BTreeSet<usize> {
        ks.iter().copied().collect()
    }

    /// Generous budgets, near-exact target: tests exercise logic, not limits.
    fn exact_params() -> MetaParams {
        MetaParams { gap: 1e-6, ..MetaParams::with_time_limit(3.0e6) }
    }

    fn direct_optimum(inst: &Instance) -> f64 {
        let graph = expand(inst);
        let built = build_lsndp(&graph, inst);
        backend()
            .solve_milp(&built.model, &SolveLimits::exact(), &WarmStart::default())
            .unwrap()
            .objective_value()
    }

    /// Two specialised suppliers, one customer: s1 owns {p1, p2} on a cheap
    /// arc, s2 owns {p3, p4} on a dear one.  The level-1 master can pretend
    /// everything ships from s1, so coarse bounds are loose; level 2 splits
    /// along supplier sets and becomes exact.
    fn four_product_instance() -> Instance {
        let set = |ids: &[&str]| ids.iter().map(|s| s.to_string()).collect::<BTreeSet<String>>();
        Instance {
            nodes: vec![
                Node { id: "s1".into(), role: NodeRole::Supplier, storage_cost: None, storage_capacity: None },
                Node { id: "s2".into(), role: NodeRole::Supplier, storage_cost: None, storage_capacity: None },
                Node { id: "c1".into(), role: NodeRole::Customer, storage_cost: None, storage_capacity: None },
            ],
            arcs: vec![
                Arc { from: "s1".into(), to: "c1".into(), travel_time_hours: 5.0, unit_flow_cost: 1.0, fixed_vehicle_cost: 10.0 },
                Arc { from: "s2".into(), to: "c1".into(), travel_time_hours: 5.0, unit_flow_cost: 5.0, fixed_vehicle_cost: 100.0 },
            ],
            catalog: ProductCatalog {
                products: vec!["p1".into(), "p2".into(), "p3".into(), "p4".into()],
                families: vec![set(&["p1", "p2"]), set(&["p3", "p4"])],
                supplier_offers: [
                    ("s1".to_string(), set(&["p1", "p2"])),
                    ("s2".to_string(), set(&["p3", "p4"])),
                ]
                .into_iter()
                .collect(),
            },
            demands: vec![
                Demand { customer: "c1".into(), period: 2, product: "p1".into(), quantity: 5.0 },
                Demand { customer: "c1".into(), period: 2, product: "p3".into(), quantity: 5.0 },
            ],
            days: 1,
            periods_per_day: 2,
            vehicle_capacity: 10.0,
        }
    }

    #[test]
    fn next_k_matches_pinned_examples() {
        // Fresh search at level 1, nothing visited above, cap 10 → 5.
        assert_eq!(next_k(&KWindow::from_visited(1, &visited(&[1])), 10, Direction::Increase), Some(5));
        // At 5 with 1 visited below, decreasing lands at the midpoint 3.
        assert_eq!(next_k(&KWindow::from_visited(5, &visited(&[1, 5])), 10, Direction::Decrease), Some(3));
        // At 4 with 5 already visited, increasing is blocked.
        assert_eq!(next_k(&KWindow::from_visited(4, &visited(&[1, 4, 5])), 10, Direction::Increase), None);
        // At 3 with 7 visited above, the midpoint rounds up to 5.
        assert_eq!(next_k(&KWindow::from_visited(3, &visited(&[1, 3, 7])), 10, Direction::Increase), Some(5));
        // Boundary rules.
        assert_eq!(next_k(&KWindow::from_visited(10, &visited(&[1, 10])), 10, Direction::Increase), None);
        assert_eq!(next_k(&KWindow::from_visited(1, &visited(&[1])), 10, Direction::Decrease), None);
        assert_eq!(next_k(&KWindow::from_visited(4, &visited(&[3, 4])), 10, Direction::Decrease), None);
    }

    #[test]
    fn k_window_finds_nearest_visited_neighbours() {
        let w = KWindow::from_visited(4, &visited(&[1, 2, 6, 9]));
        assert_eq!(w.k_minus, Some(2));
        assert_eq!(w.k_plus, Some(6));
        let w = KWindow::from_visited(1, &visited(&[1]));
        assert_eq!((w.k_minus, w.k_plus), (None, None));
    }

    #[test]
    fn stall_monitor_tumbles_and_classifies() {
        let params = MetaParams {
            t_bounds: 10.0,
            impr_bounds: 0.01,
            msols_max: 1,
            ..MetaParams::default()
        };
        let mut m = StallMonitor::new(0.0, &params, 100.0, 200.0);
        // Window still open: never fires.
        assert_eq!(m.poll(5.0, 100.0, 200.0), None);
        // Closed with no solutions and flat bounds: the master is stuck.
        assert_eq!(m.poll(10.0, 100.0, 200.0), Some((Direction::Decrease, 0)));
        // Next window saw a master solution but flat bounds: too loose.
        m.note_master_solution();
        assert_eq!(m.poll(20.0, 100.0, 200.0), Some((Direction::Increase, 1)));
        // A 5% upper-bound drop counts as progress.
        assert_eq!(m.poll(30.0, 100.0, 190.0), None);
        // A 0.5% lower-bound rise does not.
        assert_eq!(m.poll(40.0, 100.5, 190.0), Some((Direction::Decrease, 0)));
    }

    #[test]
    fn seed_rounds_the_relaxation_up() {
        let inst = toy_instance();
        let graph = expand(&inst);
        let seed = heuristic_seed(&graph, &inst, &backend()).unwrap();
        // Relaxation runs half a vehicle (55); rounding up gives the true
        // optimum here.
        assert!((seed.lb - 55.0).abs() < 1e-6, "lb {}", seed.lb);
        assert_eq!(seed.y.y, vec![1]);
        assert!((seed.ub - 105.0).abs() < 1e-6, "ub {}", seed.ub);
    }

    #[test]
    fn seed_on_zero_demand_costs_nothing() {
        let mut inst = toy_instance();
        inst.demands.clear();
        let graph = expand(&inst);
        let seed = heuristic_seed(&graph, &inst, &backend()).unwrap();
        assert_eq!(seed.ub, 0.0);
        assert_eq!(seed.lb, 0.0);
        assert!(seed.y.y.iter().all(|&v| v == 0));
    }

    #[test]
    fn benders_level_zero_recovers_toy_optimum() {
        let inst = toy_instance();
        let clock = ManualClock::new();
        let mut state = SearchState::new(f64::NEG_INFINITY, f64::INFINITY, None);
        let exit = benders_solve(
            &inst,
            &ProductPartition::master_only(),
            &exact_params(),
            &mut state,
            &backend(),
            &clock,
        )
        .unwrap();
        assert!(matches!(exit, ExitReason::GapReached | ExitReason::Exhausted), "{exit:?}");
        assert!((state.ub - 105.0).abs() < 1e-6, "ub {}", state.ub);
        assert!((state.lb - 105.0).abs() < 1e-6, "lb {}", state.lb);
        assert!(state.cuts.len() <= 3, "pooled {} cuts", state.cuts.len());
        let (feas, opt) = state.cuts.counts();
        assert!(feas >= 1, "expected a feasibility cut (empty design is infeasible)");
        assert!(opt >= 1, "expected an optimality cut");
        let (y, x) = state.incumbent.as_ref().unwrap();
        assert_eq!(y.y, vec![1]);
        let graph = expand(&inst);
        assert!(verify_solution(&graph, &inst, y, x, FEASIBILITY_TOL).is_ok());
    }

    #[test]
    fn exact_level_needs_no_cuts() {
        let inst = aggregatable_instance();
        let clock = ManualClock::new();
        let mut state = SearchState::new(f64::NEG_INFINITY, f64::INFINITY, None);
        let exit = benders_solve(
            &inst,
            &ProductPartition::singletons(&inst.catalog),
            &exact_params(),
            &mut state,
            &backend(),
            &clock,
        )
        .unwrap();
        // A fully split master is the whole problem: one solve, no cuts.
        assert!(matches!(exit, ExitReason::Exhausted | ExitReason::GapReached), "{exit:?}");
        assert_eq!(state.cuts.len(), 0);
        assert_eq!(state.n_master_solves, 1);
        let direct = direct_optimum(&inst);
        assert!((state.ub - direct).abs() <= 1e-6 * direct.abs().max(1.0));
        assert!(state.gap() <= 1e-6);
    }

    #[test]
    fn controller_toy_run_closes_the_gap() {
        let inst = toy_instance();
        let clock = ManualClock::new();
        let out = meta_pbd(&inst, &exact_params(), &backend(), &clock).unwrap();
        assert!((out.ub - 105.0).abs() < 1e-6);
        assert!(out.gap <= 1e-6);
        // One product: the sequence caps at level 1 and phase two is skipped.
        assert_eq!(out.k_trajectory, vec![1]);
        assert!(out.events.iter().any(|e| matches!(e, Event::Seed { .. })));
        assert!(out
            .events
            .iter()
            .any(|e| matches!(e, Event::PhaseEnd { phase: 2, reason, .. } if reason.contains("already"))));
        let (y, x) = out.solution.as_ref().unwrap();
        let graph = expand(&inst);
        let report = verify_solution(&graph, &inst, y, x, FEASIBILITY_TOL);
        assert!(report.is_ok());
        assert!((report.objective - out.ub).abs() < 1e-9);
    }

    #[test]
    fn controller_matches_direct_milp_and_logs_monotone_bounds() {
        let inst = aggregatable_instance();
        let clock = ManualClock::new();
        let out = meta_pbd(&inst, &exact_params(), &backend(), &clock).unwrap();
        let direct = direct_optimum(&inst);
        assert!(
            (out.ub - direct).abs() <= 1e-6 * direct.abs().max(1.0),
            "ub {} vs direct {direct}",
            out.ub
        );
        assert!(out.lb <= out.ub + 1e-6 * out.ub.abs().max(1.0));

        // The logged bound streams never regress.
        let (mut lb, mut ub) = (f64::NEG_INFINITY, f64::INFINITY);
        for e in &out.events {
            match e {
                Event::Seed { lb: l, ub: u, .. } => {
                    lb = *l;
                    ub = *u;
                }
                Event::LowerBound { lb: v, .. } => {
                    assert!(*v >= lb - 1e-9, "lower bound regressed: {v} after {lb}");
                    lb = *v;
                }
                Event::UpperBound { ub: v, .. } => {
                    assert!(*v <= ub + 1e-9, "upper bound regressed: {v} after {ub}");
                    ub = *v;
                }
                _ => {}
            }
        }

        // The run log round-trips line by line.
        let text = events_to_jsonl(&out.events);
        assert_eq!(text.lines().count(), out.events.len());
        for (line, e) in text.lines().zip(&out.events) {
            let back: Event = serde_json::from_str(line).unwrap();
            assert_eq!(&back, e);
        }

        // Visited levels are pairwise distinct.
        let set: BTreeSet<_> = out.k_trajectory.iter().collect();
        assert_eq!(set.len(), out.k_trajectory.len());
    }

    #[test]
    fn controller_is_deterministic() {
        let inst = aggregatable_instance();
        let run = || meta_pbd(&inst, &exact_params(), &backend(), &ManualClock::new()).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.events, b.events);
        assert_eq!(a.k_trajectory, b.k_trajectory);
        assert_eq!(a.ub.to_bits(), b.ub.to_bits());
        assert_eq!(a.lb.to_bits(), b.lb.to_bits());
    }

    /// A clock that advances one second per reading: with an unattainable
    /// improvement threshold every stall window closes hot, so the level
    /// search must actually move.
    struct TickingClock {
        t: Cell<f64>,
    }

    impl Clock for TickingClock {
        fn now(&self) -> f64 {
            let v = self.t.get() + 1.0;
            self.t.set(v);
            v
        }
    }

    #[test]
    fn impossible_progress_threshold_forces_level_switches() {
        let inst = four_product_instance();
        let params = MetaParams {
            k_max: 4,
            t_bounds: 0.5,
            impr_bounds: f64::INFINITY,
            msols_max: 1,
            t1_max: 1e6,
            t2_max: 1e6,
            gap: 1e-6,
            seed: 0,
        };
        let clock = TickingClock { t: Cell::new(0.0) };
        let out = meta_pbd(&inst, &params, &backend(), &clock).unwrap();
        assert!(out
            .events
            .iter()
            .any(|e| matches!(e, Event::StallDetected { direction: Direction::Increase, .. })));
        assert!(out
            .events
            .iter()
            .any(|e| matches!(e, Event::KSwitch { from: 1, to: 2, .. })));
        let set: BTreeSet<_> = out.k_trajectory.iter().collect();
        assert_eq!(set.len(), out.k_trajectory.len(), "revisited a level: {:?}", out.k_trajectory);
        assert!(out.gap <= 1e-6, "gap {}", out.gap);
        let direct = direct_optimum(&inst);
        assert!((out.ub - direct).abs() <= 1e-6 * direct.abs().max(1.0));
    }

    #[test]
    fn exact_phase_alone_solves_to_optimality() {
        let inst = aggregatable_instance();
        let out = phase2_only(&inst, &exact_params(), &backend(), &ManualClock::new()).unwrap();
        assert!(out.k_trajectory.is_empty());
        assert!(out.gap <= 1e-6, "gap {}", out.gap);
        let direct = direct_optimum(&inst);
        assert!((out.ub - direct).abs() <= 1e-6 * direct.abs().max(1.0));
        assert!(out.events.iter().any(|e| matches!(e, Event::PhaseEnd { phase: 2, .. })));
    }

    #[test]
    fn params_deserialize_with_defaults() {
        let p: MetaParams = serde_json::from_str("{}").unwrap();
        assert_eq!(p, MetaParams::default());
        let p: MetaParams = serde_json::from_str(r#"{"k_max":4,"gap":0.05}"#).unwrap();
        assert_eq!(p.k_max, 4);
        assert_eq!(p.gap, 0.05);
        assert_eq!(p.t_bounds, MetaParams::default().t_bounds);
    }
}

//! Benders cuts: construction from subproblem duals, at-generation
//! soundness checks, and a deduplicating pool.
//!
//! Both cut kinds share one linear form in the design variables,
//! `constant + Σ_a coeff_a · y_a`, built from the duals of the flow rows:
//!
//! * `constant` collects the demand and storage right-hand sides weighted by
//!   their duals (conservation rows have zero right-hand side and drop out);
//! * `coeff_a` is the vehicle capacity `û` times the capacity-row dual of
//!   transport arc `a` — the only place the design enters the subproblem.
//!
//! An *optimality* cut states `z ≥ constant + Σ coeff·y`; by LP strong
//! duality its value at the generating design equals the subproblem optimum,
//! and we refuse to emit a cut for which that check fails.  A *feasibility*
//! cut states `0 ≥ constant + Σ coeff·y`, built from phase-one duals (an
//! infeasibility certificate), normalized to unit max-norm so pooled cuts
//! stay scale-comparable, and refused unless it actually cuts off the
//! generating design.

use super::build::{MasterModel, PhaseOneModel, Subproblem, SubproblemRows};
use super::{ModelError, VehicleSolution};
use crate::instance::Instance;
use crate::solver::{RowSense, FEASIBILITY_TOL};
use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashSet};
use std::hash::{Hash, Hasher};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutKind {
    Feasibility,
    Optimality,
}

/// One Benders cut over the design variables.
#[derive(Clone, Debug, PartialEq)]
pub struct BendersCut {
    pub kind: CutKind,
    pub constant: f64,
    /// Non-zero coefficients keyed by transport arc index.
    pub y_coeffs: BTreeMap<usize, f64>,
}

impl BendersCut {
    /// The cut's right-hand side `constant + Σ coeff·y` at a design.
    pub fn rhs_at(&self, y: &VehicleSolution) -> f64 {
        self.constant
            + self
                .y_coeffs
                .iter()
                .map(|(&a, &c)| c * f64::from(y.y[a]))
                .sum::<f64>()
    }

    /// How much the cut is violated at `(y, z)`: positive means violated.
    /// Feasibility cuts ignore `z`.
    pub fn violation_at(&self, y: &VehicleSolution, z: f64) -> f64 {
        match self.kind {
            CutKind::Optimality => self.rhs_at(y) - z,
            CutKind::Feasibility => self.rhs_at(y),
        }
    }

    /// Coefficients quantized to 1e-9 — two cuts with the same fingerprint
    /// are numerically the same row.
    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        std::mem::discriminant(&self.kind).hash(&mut h);
        quantize(self.constant).hash(&mut h);
        for (&a, &c) in &self.y_coeffs {
            a.hash(&mut h);
            quantize(c).hash(&mut h);
        }
        h.finish()
    }
}

fn quantize(v: f64) -> i64 {
    (v * 1e9).round() as i64
}

/// The duals of the flow rows, split by row group and paired with the data
/// the cut formula needs.
struct GroupedDuals {
    /// (dual, demanded quantity) per demand row.
    demand: Vec<(f64, f64)>,
    /// (dual, storage limit) per storage row.
    storage: Vec<(f64, f64)>,
    /// (dual, transport arc index) per capacity row.
    capacity: Vec<(f64, usize)>,
    conservation: Vec<f64>,
}

impl GroupedDuals {
    fn split(rows: &SubproblemRows, row_duals: &[f64]) -> Self {
        Self {
            demand: rows.demand.iter().map(|&(r, d)| (row_duals[r.0], d)).collect(),
            storage: rows.storage.iter().map(|&(r, lim)| (row_duals[r.0], lim)).collect(),
            capacity: rows.capacity.iter().map(|&(r, a)| (row_duals[r.0], a)).collect(),
            conservation: rows.conservation.iter().map(|&r| row_duals[r.0]).collect(),
        }
    }

    /// Largest dual magnitude across every row group.
    fn max_norm(&self) -> f64 {
        self.demand
            .iter()
            .map(|&(l, _)| l)
            .chain(self.storage.iter().map(|&(l, _)| l))
            .chain(self.capacity.iter().map(|&(l, _)| l))
            .chain(self.conservation.iter().copied())
            .fold(0.0_f64, |m, l| m.max(l.abs()))
    }

    /// The shared cut form: constant from demand and storage rows,
    /// per-arc coefficients `û·λ` from capacity rows, scaled by `scale`.
    fn cut_form(&self, u: f64, scale: f64) -> (f64, BTreeMap<usize, f64>) {
        let constant = scale
            * (self.demand.iter().map(|&(l, d)| l * d).sum::<f64>()
                + self.storage.iter().map(|&(l, lim)| l * lim).sum::<f64>());
        let mut coeffs = BTreeMap::new();
        for &(l, a) in &self.capacity {
            let c = scale * u * l;
            if c.abs() > 1e-12 {
                coeffs.insert(a, c);
            }
        }
        (constant, coeffs)
    }
}

/// Build an optimality cut `z ≥ constant + Σ coeff·y` from the duals of an
/// optimally solved subproblem, refusing it unless its value at the
/// generating design reproduces the subproblem optimum (LP strong duality).
pub fn make_optimality_cut(
    sub: &Subproblem,
    inst: &Instance,
    row_duals: &[f64],
    y: &VehicleSolution,
    subproblem_objective: f64,
) -> Result<BendersCut, ModelError> {
    let duals = GroupedDuals::split(&sub.rows, row_duals);
    let (constant, y_coeffs) = duals.cut_form(inst.vehicle_capacity, 1.0);
    let cut = BendersCut { kind: CutKind::Optimality, constant, y_coeffs };
    let dual_value = cut.rhs_at(y);
    if (dual_value - subproblem_objective).abs()
        > FEASIBILITY_TOL * subproblem_objective.abs().max(1.0)
    {
        return Err(ModelError::DualityGap { dual_value, subproblem_objective });
    }
    Ok(cut)
}

/// Build a feasibility cut `0 ≥ constant + Σ coeff·y` from the duals of an
/// optimally solved phase-one model with positive optimum.  The dual vector
/// is an infeasibility certificate; it is normalized to unit max-norm, and
/// the cut is refused unless it cuts off the generating design.
pub fn make_feasibility_cut(
    phase: &PhaseOneModel,
    inst: &Instance,
    row_duals: &[f64],
    y: &VehicleSolution,
    phase_one_objective: f64,
) -> Result<BendersCut, ModelError> {
    let duals = GroupedDuals::split(&phase.rows, row_duals);
    let norm = duals.max_norm();
    if norm <= 1e-12 {
        return Err(ModelError::ZeroRay);
    }
    // Unscaled, the cut's value at the generating design is the phase-one
    // optimum (strong duality); fail loudly if the solver's duals disagree.
    let (constant, y_coeffs) = duals.cut_form(inst.vehicle_capacity, 1.0);
    let unscaled = BendersCut { kind: CutKind::Feasibility, constant, y_coeffs };
    let dual_value = unscaled.rhs_at(y);
    if (dual_value - phase_one_objective).abs()
        > FEASIBILITY_TOL * phase_one_objective.abs().max(1.0)
    {
        return Err(ModelError::DualityGap { dual_value, subproblem_objective: phase_one_objective });
    }
    let (constant, y_coeffs) = duals.cut_form(inst.vehicle_capacity, 1.0 / norm);
    let cut = BendersCut { kind: CutKind::Feasibility, constant, y_coeffs };
    let violation = cut.rhs_at(y);
    if violation <= FEASIBILITY_TOL {
        return Err(ModelError::CutNotViolated { violation });
    }
    Ok(cut)
}

/// Largest amount by which the homogeneous flow constraints fail the dual
/// feasibility condition `λᵀA ≤ 0` over the flow columns — an independent
/// check that a phase-one dual vector really is an infeasibility
/// certificate for the subproblem (zero for an exact one).
pub fn max_dual_infeasibility(sub: &Subproblem, row_duals: &[f64]) -> f64 {
    let mut acc = vec![0.0_f64; sub.model.vars.len()];
    for (r, row) in sub.model.rows.iter().enumerate() {
        let l = row_duals[r];
        if l == 0.0 {
            continue;
        }
        for &(v, a) in &row.terms {
            acc[v.0] += l * a;
        }
    }
    acc.into_iter().fold(0.0_f64, f64::max)
}

/// A deduplicating cut pool: cuts survive master rebuilds at other
/// aggregation levels, so the pool is the carrier of everything learned.
#[derive(Debug, Default)]
pub struct CutPool {
    cuts: Vec<BendersCut>,
    seen: HashSet<u64>,
}

impl CutPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a cut unless a numerically identical one is already pooled;
    /// returns whether it was new.
    pub fn push(&mut self, cut: BendersCut) -> bool {
        if self.seen.insert(cut.fingerprint()) {
            self.cuts.push(cut);
            true
        } else {
            false
        }
    }

    pub fn cuts(&self) -> &[BendersCut] {
        &self.cuts
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    /// (feasibility, optimality) cut counts.
    pub fn counts(&self) -> (usize, usize) {
        let feas = self.cuts.iter().filter(|c| c.kind == CutKind::Feasibility).count();
        (feas, self.cuts.len() - feas)
    }
}

impl MasterModel {
    /// Append one cut as a master row: `z − Σ coeff·y ≥ constant` for
    /// optimality cuts, `−Σ coeff·y ≥ constant` for feasibility cuts.
    pub fn add_cut(&mut self, cut: &BendersCut) {
        let mut terms = Vec::with_capacity(cut.y_coeffs.len() + 1);
        let tag = match cut.kind {
            CutKind::Optimality => {
                terms.push((self.z, 1.0));
                "opt"
            }
            CutKind::Feasibility => "feas",
        };
        for (&a, &c) in &cut.y_coeffs {
            terms.push((self.y[a], -c));
        }
        let n = self.n_cuts;
        self.model.add_row(format!("cut{n}_{tag}"), RowSense::Ge, cut.constant, terms);
        self.n_cuts += 1;
    }

    /// Append every cut in a pool.
    pub fn add_cuts<'a>(&mut self, cuts: impl IntoIterator<Item = &'a BendersCut>) {
        for cut in cuts {
            self.add_cut(cut);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testfix::toy_instance;
    use crate::models::{build_lsndp, build_master, build_phase_one, build_subproblem, FlowDomain, IndexedPartition, VehicleSolution};
    use crate::partition::ProductPartition;
    use crate::solver::{HighsBackend, SolveLimits, SolveStatus, SolverBackend, WarmStart};
    use crate::timegraph::expand;

    /// The toy's phase-one at the closed design prices the shortfall with
    /// demand dual 1 and capacity dual −1, giving the cut `0 ≥ 5 − 10·y`
    /// already at unit max-norm.
    #[test]
    fn toy_feasibility_cut_is_five_minus_ten_y() {
        let inst = toy_instance();
        let graph = expand(&inst);
        let y0 = VehicleSolution::zeros(&graph);
        let phase = build_phase_one(&graph, &inst, &y0);
        let res = HighsBackend::new().solve_lp(&phase.model, &SolveLimits::exact()).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal);
        let cut = make_feasibility_cut(&phase, &inst, res.row_duals.as_ref().unwrap(), &y0, res.objective_value()).unwrap();
        assert_eq!(cut.kind, CutKind::Feasibility);
        assert!((cut.constant - 5.0).abs() < 1e-9, "constant {}", cut.constant);
        assert_eq!(cut.y_coeffs.len(), 1);
        assert!((cut.y_coeffs[&0] + 10.0).abs() < 1e-9);
        // Violated at the closed design, satisfied once one vehicle runs.
        assert!((cut.violation_at(&y0, 0.0) - 5.0).abs() < 1e-9);
        assert!(cut.violation_at(&VehicleSolution { y: vec![1] }, 0.0) <= 0.0);
    }

    /// At the open design the subproblem optimum is 5 with slack capacity,
    /// so the optimality cut degenerates to `z ≥ 5`.
    #[test]
    fn toy_optimality_cut_is_z_at_least_five() {
        let inst = toy_instance();
        let graph = expand(&inst);
        let y1 = VehicleSolution { y: vec![1] };
        let sub = build_subproblem(&graph, &inst, &y1);
        let res = HighsBackend::new().solve_lp(&sub.model, &SolveLimits::exact()).unwrap();
        let cut = make_optimality_cut(&sub, &inst, res.row_duals.as_ref().unwrap(), &y1, res.objective_value()).unwrap();
        assert_eq!(cut.kind, CutKind::Optimality);
        assert!((cut.constant - 5.0).abs() < 1e-9);
        assert!(cut.y_coeffs.is_empty(), "coeffs {:?}", cut.y_coeffs);
        assert!(cut.violation_at(&y1, 5.0).abs() < 1e-9);
        assert!((cut.violation_at(&y1, 0.0) - 5.0).abs() < 1e-9);
    }

    /// Doctored duals that break strong duality are refused.
    #[test]
    fn cuts_reject_duals_that_fail_strong_duality() {
        let inst = toy_instance();
        let graph = expand(&inst);
        let y1 = VehicleSolution { y: vec![1] };
        let sub = build_subproblem(&graph, &inst, &y1);
        let zeros = vec![0.0; sub.model.rows.len()];
        let err = make_optimality_cut(&sub, &inst, &zeros, &y1, 5.0).unwrap_err();
        assert!(matches!(err, ModelError::DualityGap { .. }), "{err:?}");
    }

    /// The phase-one dual vector is a genuine infeasibility certificate:
    /// `λᵀA ≤ 0` over the flow columns.
    #[test]
    fn toy_certificate_is_dual_feasible() {
        let inst = toy_instance();
        let graph = expand(&inst);
        let y0 = VehicleSolution::zeros(&graph);
        let sub = build_subproblem(&graph, &inst, &y0);
        let phase = build_phase_one(&graph, &inst, &y0);
        let res = HighsBackend::new().solve_lp(&phase.model, &SolveLimits::exact()).unwrap();
        let slack = max_dual_infeasibility(&sub, res.row_duals.as_ref().unwrap());
        assert!(slack <= 1e-9, "dual infeasibility {slack:e}");
    }

    #[test]
    fn pool_deduplicates_numerically_identical_cuts() {
        let cut = BendersCut {
            kind: CutKind::Feasibility,
            constant: 5.0,
            y_coeffs: [(0, -10.0)].into_iter().collect(),
        };
        let mut pool = CutPool::new();
        assert!(pool.push(cut.clone()));
        assert!(!pool.push(cut.clone()));
        let other = BendersCut { kind: CutKind::Optimality, ..cut };
        assert!(pool.push(other));
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.counts(), (1, 1));
    }

    /// Hand-run Benders on the toy at aggregation level zero: the closed
    /// design is cut off by the feasibility cut, the opened design gets the
    /// optimality cut, and the master lands exactly on the full optimum.
    #[test]
    fn toy_master_with_both_cuts_reaches_the_optimum() {
        let inst = toy_instance();
        let graph = expand(&inst);
        let domain = FlowDomain::new(&graph, &inst);
        let partition = IndexedPartition::new(&ProductPartition::master_only(), &domain).unwrap();
        let backend = HighsBackend::new();

        let mut master = build_master(&graph, &inst, &partition);
        let res = backend.solve_milp(&master.model, &SolveLimits::exact(), &WarmStart::default()).unwrap();
        assert_eq!(res.objective_value(), 0.0);
        let y = master.vehicle_solution(&res.primal.unwrap()).unwrap();
        assert_eq!(y.y, vec![0]);

        let phase = build_phase_one(&graph, &inst, &y);
        let p = backend.solve_lp(&phase.model, &SolveLimits::exact()).unwrap();
        master.add_cut(&make_feasibility_cut(&phase, &inst, p.row_duals.as_ref().unwrap(), &y, p.objective_value()).unwrap());
        let res = backend.solve_milp(&master.model, &SolveLimits::exact(), &WarmStart::default()).unwrap();
        assert!((res.objective_value() - 100.0).abs() < 1e-6);
        let y = master.vehicle_solution(&res.primal.unwrap()).unwrap();
        assert_eq!(y.y, vec![1]);

        let sub = build_subproblem(&graph, &inst, &y);
        let s = backend.solve_lp(&sub.model, &SolveLimits::exact()).unwrap();
        master.add_cut(&make_optimality_cut(&sub, &inst, s.row_duals.as_ref().unwrap(), &y, s.objective_value()).unwrap());
        let res = backend.solve_milp(&master.model, &SolveLimits::exact(), &WarmStart::default()).unwrap();
        assert!((res.objective_value() - 105.0).abs() < 1e-7, "objective {}", res.objective_value());

        // The full model agrees.
        let direct = backend
            .solve_milp(&build_lsndp(&graph, &inst).model, &SolveLimits::exact(), &WarmStart::default())
            .unwrap();
        assert!((direct.objective_value() - res.objective_value()).abs() < 1e-7);
    }
}

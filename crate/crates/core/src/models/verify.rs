//! Independent solution verification.
//!
//! Recomputes every constraint of the design-and-flow problem directly from
//! the instance and the time-expanded graph — deliberately *not* through
//! [`crate::solver::LinearModel`] — so that a bug in model construction
//! cannot hide in its own verification.  Every upper bound reported by the
//! decomposition pipeline passes through here first.

use super::{FlowDomain, FlowSolution, VehicleSolution};
use crate::instance::{Instance, NodeRole};
use crate::timegraph::{ArcRef, TimeExpandedGraph};
use std::collections::BTreeMap;

/// Outcome of verifying a candidate solution.
#[derive(Clone, Debug)]
pub struct VerifyReport {
    /// Human-readable description of each violated constraint.
    pub violations: Vec<String>,
    /// Largest relative violation encountered.
    pub max_violation: f64,
    /// Total cost `Σ f·y + Σ c·x` of the candidate, violations or not.
    pub objective: f64,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn check(&mut self, tol: f64, violation: f64, scale: f64, msg: impl FnOnce() -> String) {
        let rel = violation / scale.abs().max(1.0);
        self.max_violation = self.max_violation.max(rel);
        if rel > tol {
            self.violations.push(msg());
        }
    }
}

/// Check a design-and-flow pair against every constraint: flow
/// non-negativity, supplier product availability, conservation at warehouse
/// copies, exact-arrival demand cover, storage limits, and bought vehicle
/// capacity.  Violations are measured relative to `max(1, |bound|)` and
/// reported when they exceed `tol`.
pub fn verify_solution(
    graph: &TimeExpandedGraph,
    inst: &Instance,
    y: &VehicleSolution,
    x: &FlowSolution,
    tol: f64,
) -> VerifyReport {
    let domain = FlowDomain::new(graph, inst);
    let mut report = VerifyReport {
        violations: Vec::new(),
        max_violation: 0.0,
        objective: y.fixed_cost(graph) + x.flow_cost(graph),
    };

    // Non-negativity and supplier availability.
    for (&(arc, p), &v) in &x.x {
        let a = graph.arc(arc);
        report.check(tol, -v, 1.0, || {
            format!("negative flow {v} of {} on {arc:?}", domain.product_name(p))
        });
        if v > tol && !domain.node_allows(a.from.node, p) {
            report.max_violation = report.max_violation.max(v);
            report.violations.push(format!(
                "{} flows out of {} which does not offer it",
                domain.product_name(p),
                graph.node_ids[a.from.node]
            ));
        }
    }

    // Conservation at each warehouse copy, per product.
    let mut balance: BTreeMap<(usize, u32, usize), f64> = BTreeMap::new();
    for (&(arc, p), &v) in &x.x {
        let a = graph.arc(arc);
        if graph.node_roles[a.to.node] == NodeRole::Warehouse {
            *balance.entry((a.to.node, a.to.period, p)).or_insert(0.0) += v;
        }
        if graph.node_roles[a.from.node] == NodeRole::Warehouse {
            *balance.entry((a.from.node, a.from.period, p)).or_insert(0.0) -= v;
        }
    }
    for (&(n, t, p), &net) in &balance {
        report.check(tol, net.abs(), 1.0, || {
            format!(
                "conservation off by {net:e} for {} at {} period {t}",
                domain.product_name(p),
                graph.node_ids[n]
            )
        });
    }

    // Demand cover: transport arrivals exactly in the demand period.
    let node_index: BTreeMap<&str, usize> = graph
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut delivered: BTreeMap<(usize, u32, usize), f64> = BTreeMap::new();
    for (&(arc, p), &v) in &x.x {
        if let ArcRef::Transport(_) = arc {
            let a = graph.arc(arc);
            if graph.node_roles[a.to.node] == NodeRole::Customer {
                *delivered.entry((a.to.node, a.to.period, p)).or_insert(0.0) += v;
            }
        }
    }
    for ((customer, period, product), qty) in inst.demand_map() {
        let (Some(&n), Some(p)) = (node_index.get(customer.as_str()), domain.product_index(&product))
        else {
            continue;
        };
        let got = delivered.get(&(n, period, p)).copied().unwrap_or(0.0);
        report.check(tol, qty - got, qty, || {
            format!("demand for {product} at {customer} period {period}: delivered {got} of {qty}")
        });
    }

    // Storage limits.
    for (i, arc) in graph.holding_arcs.iter().enumerate() {
        let Some(lim) = arc.capacity_bound.filter(|b| b.is_finite()) else {
            continue;
        };
        let held = x.arc_total(ArcRef::Holding(i));
        report.check(tol, held - lim, lim, || {
            format!(
                "storage at {} period {} holds {held} over limit {lim}",
                graph.node_ids[arc.from.node], arc.from.period
            )
        });
    }

    // Vehicle capacity bought by the design.
    for (i, arc) in graph.transport_arcs.iter().enumerate() {
        let cap = inst.vehicle_capacity * f64::from(y.y[i]);
        let load = x.arc_total(ArcRef::Transport(i));
        report.check(tol, load - cap, cap, || {
            format!(
                "transport {} → {} departing period {} loads {load} over capacity {cap}",
                graph.node_ids[arc.from.node], graph.node_ids[arc.to.node], arc.from.period
            )
        });
    }

    report
}

//! Folding product flows into super-product flows and back.
//!
//! Aggregation is unconditional: summing a feasible product flow over each
//! partition subset yields a super flow satisfying every master constraint,
//! at the same cost.  Disaggregation needs the exactness premise — every
//! product in a subset offered by the same supplier set — and works by
//! peeling the super flow into supplier-to-customer paths (the time-expanded
//! graph is acyclic, so greedy peeling terminates) and assigning each path's
//! quantity to member products: outstanding demands at the arrival point
//! first, in catalog order, any excess to the subset's first product.

use super::{FlowDomain, FlowSolution, IndexedPartition, ModelError, SuperFlowSolution};
use crate::instance::{Instance, NodeRole};
use crate::partition::{is_exactly_aggregatable, supplier_sets, ProductPartition};
use crate::timegraph::{ArcRef, TimeExpandedGraph, TimeNode};
use std::collections::BTreeMap;

/// Residual quantities below this are dust left by LP round-off.
const PEEL_EPS: f64 = 1e-9;
/// Relative amount of unpeelable residual tolerated before reporting a
/// genuinely broken super flow.
const PEEL_DUST_TOL: f64 = 1e-6;

/// Sum a product flow over each partition subset; `z` is the flow's cost.
pub fn aggregate_solution(
    graph: &TimeExpandedGraph,
    partition: &IndexedPartition,
    x: &FlowSolution,
) -> SuperFlowSolution {
    let mut sup: BTreeMap<(ArcRef, usize), f64> = BTreeMap::new();
    for (&(arc, p), &v) in &x.x {
        if let Some(k) = partition.subset_of(p) {
            *sup.entry((arc, k)).or_insert(0.0) += v;
        }
    }
    sup.retain(|_, v| v.abs() > 1e-12);
    SuperFlowSolution { x: sup, z: x.flow_cost(graph) }
}

/// Unfold a super flow into a per-product flow, valid when every subset's
/// members share one supplier set (checked).  The result carries the same
/// per-arc totals as the super flow and covers every member demand the
/// super flow covers.
pub fn disaggregate_solution(
    graph: &TimeExpandedGraph,
    inst: &Instance,
    partition: &ProductPartition,
    sup: &SuperFlowSolution,
) -> Result<FlowSolution, ModelError> {
    if !is_exactly_aggregatable(&inst.catalog, partition) {
        let sets = supplier_sets(&inst.catalog);
        let offending = partition
            .subsets()
            .iter()
            .find(|s| {
                let distinct: std::collections::BTreeSet<_> =
                    s.iter().filter_map(|p| sets.get(p)).collect();
                distinct.len() > 1
            })
            .map(|s| s.iter().cloned().collect::<Vec<_>>().join(", "))
            .unwrap_or_default();
        return Err(ModelError::NotExactlyAggregatable { subset: offending });
    }

    let domain = FlowDomain::new(graph, inst);
    let indexed = IndexedPartition::new(partition, &domain)?;
    let node_index: BTreeMap<&str, usize> = graph
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    // Outstanding demand per (customer node, period, product index).
    let mut remaining: BTreeMap<(usize, u32, usize), f64> = BTreeMap::new();
    for ((customer, period, product), qty) in inst.demand_map() {
        if let (Some(&n), Some(p)) = (node_index.get(customer.as_str()), domain.product_index(&product)) {
            *remaining.entry((n, period, p)).or_insert(0.0) += qty;
        }
    }

    let mut out: BTreeMap<(ArcRef, usize), f64> = BTreeMap::new();
    for (k, subset) in indexed.subsets().iter().enumerate() {
        let members: Vec<usize> = subset.iter().copied().collect();
        let paths = peel_subset(graph, sup, k)?;
        for (arcs, dest, mut amount) in paths {
            // Fill the subset's outstanding demands at the arrival point in
            // catalog order; whatever is left over rides as the first member.
            let mut assigned: Vec<(usize, f64)> = Vec::new();
            for &p in &members {
                if amount <= PEEL_EPS {
                    break;
                }
                if let Some(need) = remaining.get_mut(&(dest.node, dest.period, p)) {
                    let take = amount.min(*need);
                    if take > PEEL_EPS {
                        assigned.push((p, take));
                        *need -= take;
                        amount -= take;
                    }
                }
            }
            if amount > PEEL_EPS {
                assigned.push((members[0], amount));
            }
            for (p, qty) in assigned {
                for &arc in &arcs {
                    *out.entry((arc, p)).or_insert(0.0) += qty;
                }
            }
        }
    }
    out.retain(|_, v| *v > PEEL_EPS);
    Ok(FlowSolution { x: out })
}

/// Peel subset `k`'s super flow into supplier-to-customer paths
/// `(arcs, arrival time-node, quantity)`.  Greedy and deterministic: start
/// from the lowest-indexed supplier copy with outgoing residual, always
/// follow the smallest arc reference.  Time strictly advances along every
/// arc, so each walk terminates; each walk zeroes at least one residual, so
/// peeling terminates.
fn peel_subset(
    graph: &TimeExpandedGraph,
    sup: &SuperFlowSolution,
    k: usize,
) -> Result<Vec<(Vec<ArcRef>, TimeNode, f64)>, ModelError> {
    let mut residual: BTreeMap<ArcRef, f64> = sup
        .x
        .iter()
        .filter(|&(&(_, kk), &v)| kk == k && v > PEEL_EPS)
        .map(|(&(arc, _), &v)| (arc, v))
        .collect();
    let total: f64 = residual.values().sum();
    let mut paths = Vec::new();

    'peel: while !residual.is_empty() {
        // Earliest supplier copy that still ships something.
        let mut start = None;
        'scan: for (n, role) in graph.node_roles.iter().enumerate() {
            if *role != NodeRole::Supplier {
                continue;
            }
            for tn in graph.periods_of(n) {
                if graph
                    .outgoing(tn)
                    .iter()
                    .any(|a| residual.get(a).is_some_and(|&v| v > PEEL_EPS))
                {
                    start = Some(tn);
                    break 'scan;
                }
            }
        }
        let Some(start) = start else {
            // No supplier ships, yet flow remains: conservation says it can
            // only be round-off dust.
            let left: f64 = residual.values().sum();
            if left > PEEL_DUST_TOL * total.max(1.0) {
                return Err(ModelError::Decomposition(format!(
                    "residual {left:e} has no supplier origin"
                )));
            }
            break 'peel;
        };

        let mut arcs = Vec::new();
        let mut cur = start;
        loop {
            let next = graph
                .outgoing(cur)
                .iter()
                .copied()
                .find(|a| residual.get(a).is_some_and(|&v| v > PEEL_EPS));
            let Some(arc) = next else {
                // Stuck at a warehouse with inflow but no outflow: more than
                // dust means the super flow was not conservative.
                let bottleneck = arcs
                    .iter()
                    .map(|a| residual[a])
                    .fold(f64::INFINITY, f64::min);
                if bottleneck > PEEL_DUST_TOL * total.max(1.0) {
                    return Err(ModelError::Decomposition(format!(
                        "walk stranded {bottleneck:e} at {} period {}",
                        graph.node_ids[cur.node], cur.period
                    )));
                }
                subtract(&mut residual, &arcs, bottleneck);
                continue 'peel;
            };
            arcs.push(arc);
            cur = graph.arc(arc).to;
            if graph.node_roles[cur.node] == NodeRole::Customer {
                break;
            }
        }

        let amount = arcs.iter().map(|a| residual[a]).fold(f64::INFINITY, f64::min);
        subtract(&mut residual, &arcs, amount);
        paths.push((arcs, cur, amount));
    }
    Ok(paths)
}

fn subtract(residual: &mut BTreeMap<ArcRef, f64>, arcs: &[ArcRef], amount: f64) {
    for arc in arcs {
        let v = residual.get_mut(arc).expect("arc on a peeled path");
        *v -= amount;
        if *v <= PEEL_EPS {
            residual.remove(arc);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::Demand;
    use crate::models::testfix::{aggregatable_instance, toy_instance};
    use crate::models::{build_lsndp, build_master, verify_solution};
    use crate::solver::{HighsBackend, SolveLimits, SolverBackend, WarmStart, FEASIBILITY_TOL};
    use crate::timegraph::expand;

    fn solve_full(inst: &Instance) -> (TimeExpandedGraph, super::super::VehicleSolution, FlowSolution, f64) {
        let graph = expand(inst);
        let built = build_lsndp(&graph, inst);
        let res = HighsBackend::new()
            .solve_milp(&built.model, &SolveLimits::exact(), &WarmStart::default())
            .unwrap();
        let objective = res.objective_value();
        let primal = res.primal.unwrap();
        let y = built.vehicle_solution(&primal).unwrap();
        let x = built.flow_solution(&primal);
        (graph, y, x, objective)
    }

    #[test]
    fn aggregation_preserves_totals_and_cost() {
        let inst = aggregatable_instance();
        let (graph, _, x, _) = solve_full(&inst);
        let domain = FlowDomain::new(&graph, &inst);
        let partition =
            IndexedPartition::new(&ProductPartition::whole(&inst.catalog), &domain).unwrap();
        let sup = aggregate_solution(&graph, &partition, &x);
        assert!((sup.z - x.flow_cost(&graph)).abs() < 1e-9);
        for (&(arc, _), _) in &sup.x {
            let total: f64 = sup.x.range((arc, 0)..=(arc, usize::MAX)).map(|(_, v)| v).sum();
            assert!((total - x.arc_total(arc)).abs() < 1e-9);
        }
    }

    /// An optimal full solution, aggregated, satisfies every master
    /// constraint at the same objective — the coarse master is a relaxation.
    #[test]
    fn aggregated_optimum_is_master_feasible() {
        let inst = aggregatable_instance();
        let (graph, y, x, objective) = solve_full(&inst);
        let domain = FlowDomain::new(&graph, &inst);
        let partition =
            IndexedPartition::new(&ProductPartition::whole(&inst.catalog), &domain).unwrap();
        let master = build_master(&graph, &inst, &partition);
        let point = master.warm_vector(&y, &aggregate_solution(&graph, &partition, &x));
        assert!(master.model.max_violation(&point) <= FEASIBILITY_TOL);
        assert!((master.model.objective_value(&point) - objective).abs() < 1e-6);
    }

    /// Solving the coarse master and unfolding its super flow gives a real,
    /// verified solution at the master's objective: on an exactly
    /// aggregatable instance the two formulations coincide.
    #[test]
    fn disaggregated_master_solution_verifies() {
        let inst = aggregatable_instance();
        let graph = expand(&inst);
        let whole = ProductPartition::whole(&inst.catalog);
        let domain = FlowDomain::new(&graph, &inst);
        let partition = IndexedPartition::new(&whole, &domain).unwrap();
        let master = build_master(&graph, &inst, &partition);
        let res = HighsBackend::new()
            .solve_milp(&master.model, &SolveLimits::exact(), &WarmStart::default())
            .unwrap();
        let objective = res.objective_value();
        let primal = res.primal.unwrap();
        let y = master.vehicle_solution(&primal).unwrap();
        let sup = master.super_flow_solution(&primal);
        let x = disaggregate_solution(&graph, &inst, &whole, &sup).unwrap();
        let report = verify_solution(&graph, &inst, &y, &x, FEASIBILITY_TOL);
        assert!(report.is_ok(), "violations: {:?}", report.violations);
        assert!((report.objective - objective).abs() < 1e-6);
        // Per-arc totals survive the round trip.
        for (&(arc, _), _) in &sup.x {
            let total: f64 = sup.x.range((arc, 0)..=(arc, usize::MAX)).map(|(_, v)| v).sum();
            assert!((x.arc_total(arc) - total).abs() < 1e-6);
        }
    }

    #[test]
    fn disaggregation_requires_identical_supplier_sets() {
        let mut inst = aggregatable_instance();
        // s2 stops offering p2: supplier sets now differ within {p1, p2}.
        inst.catalog.supplier_offers.get_mut("s2").unwrap().remove("p2");
        let graph = expand(&inst);
        let whole = ProductPartition::whole(&inst.catalog);
        let err = disaggregate_solution(&graph, &inst, &whole, &SuperFlowSolution::default());
        assert!(matches!(err, Err(ModelError::NotExactlyAggregatable { .. })));
    }

    #[test]
    fn disaggregation_is_deterministic() {
        let inst = aggregatable_instance();
        let graph = expand(&inst);
        let whole = ProductPartition::whole(&inst.catalog);
        let domain = FlowDomain::new(&graph, &inst);
        let partition = IndexedPartition::new(&whole, &domain).unwrap();
        let master = build_master(&graph, &inst, &partition);
        let res = HighsBackend::new()
            .solve_milp(&master.model, &SolveLimits::exact(), &WarmStart::default())
            .unwrap();
        let sup = master.super_flow_solution(&res.primal.unwrap());
        let a = disaggregate_solution(&graph, &inst, &whole, &sup).unwrap();
        let b = disaggregate_solution(&graph, &inst, &whole, &sup).unwrap();
        assert_eq!(a, b);
    }

    /// Excess super flow (beyond every member demand) rides as the subset's
    /// first product instead of being lost.
    #[test]
    fn excess_flow_lands_on_the_first_member() {
        let mut inst = toy_instance();
        inst.catalog.products.push("p2".into());
        inst.catalog.families[0].insert("p2".into());
        inst.catalog.supplier_offers.get_mut("s1").unwrap().insert("p2".into());
        inst.demands.push(Demand { customer: "c1".into(), period: 2, product: "p2".into(), quantity: 1.0 });
        let graph = expand(&inst);
        let whole = ProductPartition::whole(&inst.catalog);
        // Ship 8 though only 6 are demanded: 5 of p1, 1 of p2, 2 extra.
        let sup = SuperFlowSolution {
            x: [((ArcRef::Transport(0), 0), 8.0)].into_iter().collect(),
            z: 8.0,
        };
        let x = disaggregate_solution(&graph, &inst, &whole, &sup).unwrap();
        assert!((x.x[&(ArcRef::Transport(0), 0)] - 7.0).abs() < 1e-9);
        assert!((x.x[&(ArcRef::Transport(0), 1)] - 1.0).abs() < 1e-9);
    }
}

//! Time expansion of the static network.
//!
//! Each physical node is copied once per period `1..=|T|`.  A static arc with
//! travel time `h` hours becomes one transport arc per feasible departure
//! period, arriving `travel_periods(h)` periods later; departures are only
//! generated when the arrival still falls inside the horizon (arriving in the
//! final period is legal).  Each warehouse additionally gets holding arcs
//! linking its consecutive copies, carrying the warehouse's storage cost and
//! capacity.  Suppliers and customers cannot hold stock: goods leave a
//! supplier when a vehicle departs and must arrive at a customer exactly in
//! the demanded period.

use crate::instance::{Instance, NodeRole};
use std::fmt::Write as _;

/// A copy of a physical node at one period.  `node` indexes
/// `Instance::nodes`; `period` is 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeNode {
    pub node: usize,
    pub period: u32,
}

/// Kind of a time-expanded arc.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArcKind {
    Transport,
    Holding,
}

/// Reference to an arc of the expanded graph: an index into
/// [`TimeExpandedGraph::transport_arcs`] or
/// [`TimeExpandedGraph::holding_arcs`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArcRef {
    Transport(usize),
    Holding(usize),
}

/// One arc of the time-expanded network.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeArc {
    pub kind: ArcKind,
    pub from: TimeNode,
    pub to: TimeNode,
    /// Per-unit flow cost: the static arc's transport cost, or the
    /// warehouse's per-period storage cost on holding arcs.
    pub unit_cost: f64,
    /// Vehicle fixed cost per vehicle; zero on holding arcs.
    pub fixed_cost: f64,
    /// Total-quantity bound across products; `Some` exactly on holding arcs
    /// (the warehouse storage capacity).
    pub capacity_bound: Option<f64>,
    /// Index of the originating static arc; `None` on holding arcs.
    pub static_arc: Option<usize>,
}

/// The static network expanded over the planning horizon, with per-time-node
/// adjacency lists.
#[derive(Clone, Debug)]
pub struct TimeExpandedGraph {
    /// Number of periods `|T|`.
    pub periods: u32,
    /// Node ids copied from the instance, in instance order.
    pub node_ids: Vec<String>,
    /// Node roles copied from the instance, in instance order.
    pub node_roles: Vec<NodeRole>,
    pub transport_arcs: Vec<TimeArc>,
    pub holding_arcs: Vec<TimeArc>,
    incoming: Vec<Vec<ArcRef>>,
    outgoing: Vec<Vec<ArcRef>>,
}

/// Travel time in whole periods: `ceil(hours / hours_per_period)` with
/// `hours_per_period = 24 / periods_per_day`.  Times that are an exact
/// multiple of the period length do not round up (a small epsilon guards
/// against floating-point noise); every positive travel time costs at least
/// one period.
pub fn travel_periods(hours: f64, periods_per_day: u32) -> u32 {
    let periods = hours * f64::from(periods_per_day) / 24.0;
    (periods - 1e-9).ceil().max(1.0) as u32
}

impl TimeExpandedGraph {
    /// Number of physical nodes.
    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    /// Ordinal of a time node in row-major (node, period) order.
    pub fn time_node_ordinal(&self, tn: TimeNode) -> usize {
        tn.node * self.periods as usize + (tn.period as usize - 1)
    }

    /// Arcs entering `tn`.
    pub fn incoming(&self, tn: TimeNode) -> &[ArcRef] {
        &self.incoming[self.time_node_ordinal(tn)]
    }

    /// Arcs leaving `tn`.
    pub fn outgoing(&self, tn: TimeNode) -> &[ArcRef] {
        &self.outgoing[self.time_node_ordinal(tn)]
    }

    /// Resolve an [`ArcRef`].
    pub fn arc(&self, r: ArcRef) -> &TimeArc {
        match r {
            ArcRef::Transport(i) => &self.transport_arcs[i],
            ArcRef::Holding(i) => &self.holding_arcs[i],
        }
    }

    /// All time nodes of a physical node, period-ascending.
    pub fn periods_of(&self, node: usize) -> impl Iterator<Item = TimeNode> + '_ {
        (1..=self.periods).map(move |period| TimeNode { node, period })
    }

    /// Plain-text edge list for debugging: one line per arc, transport arcs
    /// first, in index order.
    pub fn dump_edges(&self) -> String {
        let mut out = String::new();
        for (i, a) in self.transport_arcs.iter().enumerate() {
            let _ = writeln!(
                out,
                "transport[{i}] {}@{} -> {}@{} unit={} fixed={}",
                self.node_ids[a.from.node],
                a.from.period,
                self.node_ids[a.to.node],
                a.to.period,
                a.unit_cost,
                a.fixed_cost,
            );
        }
        for (i, a) in self.holding_arcs.iter().enumerate() {
            let _ = writeln!(
                out,
                "holding[{i}] {}@{} -> {}@{} unit={} cap={}",
                self.node_ids[a.from.node],
                a.from.period,
                self.node_ids[a.to.node],
                a.to.period,
                a.unit_cost,
                a.capacity_bound.unwrap_or(f64::INFINITY),
            );
        }
        out
    }
}

/// Expand `inst` over its horizon.  Assumes a validated instance.
pub fn expand(inst: &Instance) -> TimeExpandedGraph {
    let periods = inst.horizon_periods();
    let n = inst.nodes.len();
    let node_index: std::collections::BTreeMap<&str, usize> = inst
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| (node.id.as_str(), i))
        .collect();

    let mut transport_arcs = Vec::new();
    for (si, arc) in inst.arcs.iter().enumerate() {
        let from = node_index[arc.from.as_str()];
        let to = node_index[arc.to.as_str()];
        let tau = travel_periods(arc.travel_time_hours, inst.periods_per_day);
        for depart in 1..=periods {
            let arrive = depart + tau;
            if arrive > periods {
                break;
            }
            transport_arcs.push(TimeArc {
                kind: ArcKind::Transport,
                from: TimeNode { node: from, period: depart },
                to: TimeNode { node: to, period: arrive },
                unit_cost: arc.unit_flow_cost,
                fixed_cost: arc.fixed_vehicle_cost,
                capacity_bound: None,
                static_arc: Some(si),
            });
        }
    }

    let mut holding_arcs = Vec::new();
    for (ni, node) in inst.nodes.iter().enumerate() {
        if node.role != NodeRole::Warehouse {
            continue;
        }
        for period in 1..periods {
            holding_arcs.push(TimeArc {
                kind: ArcKind::Holding,
                from: TimeNode { node: ni, period },
                to: TimeNode { node: ni, period: period + 1 },
                unit_cost: node.storage_cost.unwrap_or(0.0),
                fixed_cost: 0.0,
                capacity_bound: Some(node.storage_capacity.unwrap_or(f64::INFINITY)),
                static_arc: None,
            });
        }
    }

    let mut incoming = vec![Vec::new(); n * periods as usize];
    let mut outgoing = vec![Vec::new(); n * periods as usize];
    let ordinal = |tn: TimeNode| tn.node * periods as usize + (tn.period as usize - 1);
    for (i, a) in transport_arcs.iter().enumerate() {
        outgoing[ordinal(a.from)].push(ArcRef::Transport(i));
        incoming[ordinal(a.to)].push(ArcRef::Transport(i));
    }
    for (i, a) in holding_arcs.iter().enumerate() {
        outgoing[ordinal(a.from)].push(ArcRef::Holding(i));
        incoming[ordinal(a.to)].push(ArcRef::Holding(i));
    }

    TimeExpandedGraph {
        periods,
        node_ids: inst.nodes.iter().map(|n| n.id.clone()).collect(),
        node_roles: inst.nodes.iter().map(|n| n.role).collect(),
        transport_arcs,
        holding_arcs,
        incoming,
        outgoing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Arc, Demand, Node, ProductCatalog};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn chain_instance(days: u32, periods_per_day: u32) -> Instance {
        // s1 -> w1 -> c1 with short hops.
        Instance {
            nodes: vec![
                Node { id: "s1".into(), role: NodeRole::Supplier, storage_cost: None, storage_capacity: None },
                Node {
                    id: "w1".into(),
                    role: NodeRole::Warehouse,
                    storage_cost: Some(0.1),
                    storage_capacity: Some(100.0),
                },
                Node { id: "c1".into(), role: NodeRole::Customer, storage_cost: None, storage_capacity: None },
            ],
            arcs: vec![
                Arc { from: "s1".into(), to: "w1".into(), travel_time_hours: 1.0, unit_flow_cost: 1.0, fixed_vehicle_cost: 10.0 },
                Arc { from: "w1".into(), to: "c1".into(), travel_time_hours: 1.0, unit_flow_cost: 1.0, fixed_vehicle_cost: 10.0 },
            ],
            catalog: ProductCatalog {
                products: vec!["p1".into()],
                families: vec![set(&["p1"])],
                supplier_offers: [("s1".to_string(), set(&["p1"]))].into_iter().collect(),
            },
            demands: vec![Demand { customer: "c1".into(), period: 3, product: "p1".into(), quantity: 1.0 }],
            days,
            periods_per_day,
            vehicle_capacity: 10.0,
        }
    }

    #[test]
    fn travel_time_rounds_up_to_whole_periods() {
        // 5 hours at 8 periods/day (3-hour periods) needs 2 periods.
        assert_eq!(travel_periods(5.0, 8), 2);
        // An exact multiple of the period length does not round up.
        assert_eq!(travel_periods(3.0, 8), 1);
        assert_eq!(travel_periods(6.0, 8), 2);
        // Tiny positive times still cost one period.
        assert_eq!(travel_periods(0.01, 2), 1);
    }

    #[test]
    fn departure_copies_respect_the_horizon() {
        // |T| = 4 and tau = 2 leave departures at t = 1 and t = 2.
        let mut inst = chain_instance(2, 2);
        inst.arcs[0].travel_time_hours = 24.0; // tau = 2 at 12-hour periods
        let g = expand(&inst);
        let copies: Vec<_> = g
            .transport_arcs
            .iter()
            .filter(|a| a.static_arc == Some(0))
            .map(|a| (a.from.period, a.to.period))
            .collect();
        assert_eq!(copies, vec![(1, 3), (2, 4)]);
    }

    #[test]
    fn holding_arcs_chain_each_warehouse() {
        let inst = chain_instance(3, 2); // |T| = 6
        let g = expand(&inst);
        assert_eq!(g.holding_arcs.len(), 5); // one warehouse, |T| - 1 links
        for (i, a) in g.holding_arcs.iter().enumerate() {
            assert_eq!(a.from.period + 1, a.to.period);
            assert_eq!(a.from.node, a.to.node);
            assert_eq!(a.capacity_bound, Some(100.0));
            assert_eq!(a.from.period, i as u32 + 1);
        }
    }

    #[test]
    fn adjacency_is_consistent() {
        let inst = chain_instance(2, 2);
        let g = expand(&inst);
        for (i, a) in g.transport_arcs.iter().enumerate() {
            assert!(g.outgoing(a.from).contains(&ArcRef::Transport(i)));
            assert!(g.incoming(a.to).contains(&ArcRef::Transport(i)));
        }
        // Suppliers never receive, customers never send.
        for tn in (0..g.n_nodes()).flat_map(|n| g.periods_of(n).collect::<Vec<_>>()) {
            match g.node_roles[tn.node] {
                NodeRole::Supplier => assert!(g.incoming(tn).is_empty()),
                NodeRole::Customer => assert!(g.outgoing(tn).is_empty()),
                NodeRole::Warehouse => {}
            }
        }
    }

    proptest! {
        #[test]
        fn expansion_invariants(days in 1u32..4, ppd in 1u32..5, hours in 0.5f64..40.0) {
            let mut inst = chain_instance(days.max(1), ppd);
            if inst.horizon_periods() < 2 { return Ok(()); }
            inst.arcs[0].travel_time_hours = hours;
            let g = expand(&inst);
            for a in &g.transport_arcs {
                // Time strictly advances and stays inside the horizon.
                prop_assert!(a.to.period > a.from.period);
                prop_assert!(a.to.period <= g.periods);
                prop_assert!(a.capacity_bound.is_none());
                prop_assert!(a.static_arc.is_some());
            }
            for a in &g.holding_arcs {
                prop_assert_eq!(a.to.period, a.from.period + 1);
                prop_assert!(a.capacity_bound.is_some());
                prop_assert_eq!(a.fixed_cost, 0.0);
            }
            // Edge-list dump mentions every arc.
            let dump = g.dump_edges();
            prop_assert_eq!(dump.lines().count(), g.transport_arcs.len() + g.holding_arcs.len());
        }
    }
}

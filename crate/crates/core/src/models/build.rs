//! Builders for the three model shapes: the full design-and-flow MILP, the
//! fixed-design flow subproblem (plus its phase-one variant), and the
//! partition-level Benders master.
//!
//! All builders lay out variables and rows in a fixed, documented order so
//! that identical inputs produce identical models (and therefore identical
//! solver behaviour):
//!
//! * variables: `y` per transport arc in graph order, then flow variables
//!   per arc (transport before holding, each in graph order) with products
//!   ascending — masters insert `z` between `y` and the super flows;
//! * rows: conservation, demand cover, storage, vehicle capacity.

use super::{FlowDomain, FlowSolution, IndexedPartition, ModelError, SuperFlowSolution, VehicleSolution};
use crate::instance::{Instance, NodeRole};
use crate::solver::{LinearModel, RowId, RowSense, VarId};
use crate::timegraph::{ArcRef, TimeExpandedGraph, TimeNode};
use std::collections::BTreeMap;

/// Demand keyed by (customer node index, period, product index).
fn indexed_demands(graph: &TimeExpandedGraph, inst: &Instance, domain: &FlowDomain) -> BTreeMap<(usize, u32, usize), f64> {
    let node_index: BTreeMap<&str, usize> = graph
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    inst.demand_map()
        .into_iter()
        .filter_map(|((customer, period, product), qty)| {
            let n = *node_index.get(customer.as_str())?;
            let p = domain.product_index(&product)?;
            Some(((n, period, p), qty))
        })
        .collect()
}

/// Flow variables shared by the full model and the subproblem: one per
/// (arc, allowed product), transport arcs first, zero lower bound, objective
/// equal to the arc's unit cost.
fn add_flow_vars(model: &mut LinearModel, graph: &TimeExpandedGraph, domain: &FlowDomain) -> BTreeMap<(ArcRef, usize), VarId> {
    let mut x = BTreeMap::new();
    for (i, arc) in graph.transport_arcs.iter().enumerate() {
        for p in domain.allowed_products(arc.from.node) {
            let v = model.add_var(format!("x_t{i}_p{p}"), arc.unit_cost, 0.0, f64::INFINITY, false);
            x.insert((ArcRef::Transport(i), p), v);
        }
    }
    for (i, arc) in graph.holding_arcs.iter().enumerate() {
        for p in domain.allowed_products(arc.from.node) {
            let v = model.add_var(format!("x_h{i}_p{p}"), arc.unit_cost, 0.0, f64::INFINITY, false);
            x.insert((ArcRef::Holding(i), p), v);
        }
    }
    x
}

/// Row bookkeeping for the flow side of a model, in creation order.  The
/// per-row constants are what Benders cuts need: demand right-hand sides,
/// storage limits, and which transport arc a capacity row belongs to.
#[derive(Clone, Debug)]
pub struct SubproblemRows {
    pub conservation: Vec<RowId>,
    /// (row, demanded quantity `d`).
    pub demand: Vec<(RowId, f64)>,
    /// (row, storage limit `lim`).
    pub storage: Vec<(RowId, f64)>,
    /// (row, transport arc index) — right-hand side is `û·ȳ` in a
    /// subproblem and the row carries `−û·y` in the full model.
    pub capacity: Vec<(RowId, usize)>,
}

/// Adds the four per-product flow constraint groups.  `capacity_rhs` gives
/// each capacity row's right-hand side (the subproblem's `û·ȳ_a`);
/// `capacity_extra` appends an optional extra term (the full model's
/// `−û·y_a`).
fn add_flow_rows(
    model: &mut LinearModel,
    graph: &TimeExpandedGraph,
    domain: &FlowDomain,
    demands: &BTreeMap<(usize, u32, usize), f64>,
    x: &BTreeMap<(ArcRef, usize), VarId>,
    capacity_rhs: impl Fn(usize) -> f64,
    capacity_extra: impl Fn(usize) -> Option<(VarId, f64)>,
) -> SubproblemRows {
    let mut rows = SubproblemRows {
        conservation: Vec::new(),
        demand: Vec::new(),
        storage: Vec::new(),
        capacity: Vec::new(),
    };

    // Flow conservation at every warehouse copy, per product: everything
    // arriving (transport and holding) equals everything leaving.
    for (n, role) in graph.node_roles.iter().enumerate() {
        if *role != NodeRole::Warehouse {
            continue;
        }
        for tn in graph.periods_of(n) {
            for p in 0..domain.n_products() {
                let mut terms = Vec::new();
                for &a in graph.incoming(tn) {
                    if let Some(&v) = x.get(&(a, p)) {
                        terms.push((v, 1.0));
                    }
                }
                for &a in graph.outgoing(tn) {
                    if let Some(&v) = x.get(&(a, p)) {
                        terms.push((v, -1.0));
                    }
                }
                if terms.is_empty() {
                    continue;
                }
                let r = model.add_row(format!("cons_n{n}_t{}_p{p}", tn.period), RowSense::Eq, 0.0, terms);
                rows.conservation.push(r);
            }
        }
    }

    // Demand cover: transport flow arriving at the customer exactly in the
    // demand period must reach the demanded quantity.  A demand no arc can
    // serve yields an empty `≥ d` row, i.e. an (honestly) infeasible model.
    for (&(n, t, p), &qty) in demands {
        let tn = TimeNode { node: n, period: t };
        let mut terms = Vec::new();
        for &a in graph.incoming(tn) {
            if let Some(&v) = x.get(&(a, p)) {
                terms.push((v, 1.0));
            }
        }
        let r = model.add_row(format!("dem_n{n}_t{t}_p{p}"), RowSense::Ge, qty, terms);
        rows.demand.push((r, qty));
    }

    // Storage limits: total held quantity per holding arc.
    for (i, arc) in graph.holding_arcs.iter().enumerate() {
        let Some(lim) = arc.capacity_bound.filter(|b| b.is_finite()) else {
            continue;
        };
        let terms: Vec<_> = domain
            .allowed_products(arc.from.node)
            .into_iter()
            .filter_map(|p| x.get(&(ArcRef::Holding(i), p)).map(|&v| (v, 1.0)))
            .collect();
        let r = model.add_row(format!("store_h{i}"), RowSense::Le, lim, terms);
        rows.storage.push((r, lim));
    }

    // Vehicle capacity: total flow on a transport arc within the capacity
    // bought for it.
    for (i, arc) in graph.transport_arcs.iter().enumerate() {
        let mut terms: Vec<_> = domain
            .allowed_products(arc.from.node)
            .into_iter()
            .filter_map(|p| x.get(&(ArcRef::Transport(i), p)).map(|&v| (v, 1.0)))
            .collect();
        if let Some(extra) = capacity_extra(i) {
            terms.push(extra);
        }
        let r = model.add_row(format!("cap_a{i}"), RowSense::Le, capacity_rhs(i), terms);
        rows.capacity.push((r, i));
    }

    rows
}

/// The full design-and-flow MILP.
pub struct LsndpModel {
    pub model: LinearModel,
    pub domain: FlowDomain,
    /// `y` variable per transport arc, graph order.
    pub y: Vec<VarId>,
    pub x: BTreeMap<(ArcRef, usize), VarId>,
    pub rows: SubproblemRows,
}

impl LsndpModel {
    /// Extract the integer design from a primal point.
    pub fn vehicle_solution(&self, primal: &[f64]) -> Result<VehicleSolution, ModelError> {
        let vals: Vec<f64> = self.y.iter().map(|&VarId(j)| primal[j]).collect();
        let names = |i: usize| self.model.vars[self.y[i].0].name.clone();
        VehicleSolution::from_fractional(&vals, names)
    }

    /// Extract the non-zero flows from a primal point.
    pub fn flow_solution(&self, primal: &[f64]) -> FlowSolution {
        let x = self
            .x
            .iter()
            .filter_map(|(&key, &VarId(j))| (primal[j].abs() > 1e-12).then_some((key, primal[j])))
            .collect();
        FlowSolution { x }
    }
}

/// Build the full problem: minimize vehicle fixed costs plus flow costs
/// subject to conservation, demand cover, storage and bought capacity.
pub fn build_lsndp(graph: &TimeExpandedGraph, inst: &Instance) -> LsndpModel {
    let domain = FlowDomain::new(graph, inst);
    let demands = indexed_demands(graph, inst, &domain);
    let mut model = LinearModel::new();
    let y: Vec<VarId> = graph
        .transport_arcs
        .iter()
        .enumerate()
        .map(|(i, arc)| model.add_var(format!("y_a{i}"), arc.fixed_cost, 0.0, f64::INFINITY, true))
        .collect();
    let x = add_flow_vars(&mut model, graph, &domain);
    let u = inst.vehicle_capacity;
    let rows = add_flow_rows(&mut model, graph, &domain, &demands, &x, |_| 0.0, |i| Some((y[i], -u)));
    LsndpModel { model, domain, y, x, rows }
}

/// The flow subproblem for a fixed design: same flows and rows as the full
/// model, but capacity right-hand sides frozen at `û·ȳ_a`.
pub struct Subproblem {
    pub model: LinearModel,
    pub domain: FlowDomain,
    pub x: BTreeMap<(ArcRef, usize), VarId>,
    pub rows: SubproblemRows,
}

impl Subproblem {
    pub fn flow_solution(&self, primal: &[f64]) -> FlowSolution {
        let x = self
            .x
            .iter()
            .filter_map(|(&key, &VarId(j))| (primal[j].abs() > 1e-12).then_some((key, primal[j])))
            .collect();
        FlowSolution { x }
    }
}

pub fn build_subproblem(graph: &TimeExpandedGraph, inst: &Instance, y: &VehicleSolution) -> Subproblem {
    let domain = FlowDomain::new(graph, inst);
    let demands = indexed_demands(graph, inst, &domain);
    let mut model = LinearModel::new();
    let x = add_flow_vars(&mut model, graph, &domain);
    let u = inst.vehicle_capacity;
    let rows = add_flow_rows(
        &mut model,
        graph,
        &domain,
        &demands,
        &x,
        |i| u * f64::from(y.y[i]),
        |_| None,
    );
    Subproblem { model, domain, x, rows }
}

/// The always-feasible phase-one variant of a subproblem: flow costs are
/// dropped, demand rows gain a shortfall slack and capacity rows an excess
/// slack, and the objective is the total slack.  Its optimum is zero exactly
/// when the subproblem is feasible; otherwise its duals certify
/// infeasibility.
pub struct PhaseOneModel {
    pub model: LinearModel,
    pub rows: SubproblemRows,
}

pub fn build_phase_one(graph: &TimeExpandedGraph, inst: &Instance, y: &VehicleSolution) -> PhaseOneModel {
    let sub = build_subproblem(graph, inst, y);
    let mut model = sub.model;
    for v in &mut model.vars {
        v.obj = 0.0;
    }
    for (j, &(row, _)) in sub.rows.demand.iter().enumerate() {
        let s = model.add_var(format!("s_dem{j}"), 1.0, 0.0, f64::INFINITY, false);
        model.rows[row.0].terms.push((s, 1.0));
    }
    for (j, &(row, _)) in sub.rows.capacity.iter().enumerate() {
        let s = model.add_var(format!("s_cap{j}"), 1.0, 0.0, f64::INFINITY, false);
        model.rows[row.0].terms.push((s, -1.0));
    }
    PhaseOneModel { model, rows: sub.rows }
}

/// The Benders master at one aggregation level: integer design `y`, the
/// flow-cost stand-in `z`, and a super-product flow image per partition
/// subset.  Level 0 (`ProductPartition::master_only`) keeps only `y`, `z`
/// and whatever cuts are added later.
pub struct MasterModel {
    pub model: LinearModel,
    pub domain: FlowDomain,
    pub partition: IndexedPartition,
    pub y: Vec<VarId>,
    pub z: VarId,
    /// Super flows keyed by (arc, subset index).
    pub x: BTreeMap<(ArcRef, usize), VarId>,
    /// Number of cut rows added so far (used to name new ones).
    pub n_cuts: usize,
}

pub fn build_master(graph: &TimeExpandedGraph, inst: &Instance, partition: &IndexedPartition) -> MasterModel {
    let domain = FlowDomain::new(graph, inst);
    let demands = indexed_demands(graph, inst, &domain);
    let mut model = LinearModel::new();
    let y: Vec<VarId> = graph
        .transport_arcs
        .iter()
        .enumerate()
        .map(|(i, arc)| model.add_var(format!("y_a{i}"), arc.fixed_cost, 0.0, f64::INFINITY, true))
        .collect();
    let z = model.add_var("z", 1.0, 0.0, f64::INFINITY, false);

    // Super flows: subset k travels an arc when its origin supplier offers at
    // least one member product (non-supplier origins allow everything).
    let mut x: BTreeMap<(ArcRef, usize), VarId> = BTreeMap::new();
    for (i, arc) in graph.transport_arcs.iter().enumerate() {
        for k in 0..partition.k() {
            if partition.node_allows(&domain, arc.from.node, k) {
                let v = model.add_var(format!("xs_t{i}_k{k}"), 0.0, 0.0, f64::INFINITY, false);
                x.insert((ArcRef::Transport(i), k), v);
            }
        }
    }
    for (i, _) in graph.holding_arcs.iter().enumerate() {
        for k in 0..partition.k() {
            let v = model.add_var(format!("xs_h{i}_k{k}"), 0.0, 0.0, f64::INFINITY, false);
            x.insert((ArcRef::Holding(i), k), v);
        }
    }

    // Conservation per warehouse copy and subset.
    for (n, role) in graph.node_roles.iter().enumerate() {
        if *role != NodeRole::Warehouse {
            continue;
        }
        for tn in graph.periods_of(n) {
            for k in 0..partition.k() {
                let mut terms = Vec::new();
                for &a in graph.incoming(tn) {
                    if let Some(&v) = x.get(&(a, k)) {
                        terms.push((v, 1.0));
                    }
                }
                for &a in graph.outgoing(tn) {
                    if let Some(&v) = x.get(&(a, k)) {
                        terms.push((v, -1.0));
                    }
                }
                if !terms.is_empty() {
                    model.add_row(format!("cons_n{n}_t{}_k{k}", tn.period), RowSense::Eq, 0.0, terms);
                }
            }
        }
    }

    // Aggregated demand cover: subset k must deliver the sum of its member
    // products' demands at each (customer, period).
    let mut agg: BTreeMap<(usize, u32, usize), f64> = BTreeMap::new();
    for (&(n, t, p), &qty) in &demands {
        if let Some(k) = partition.subset_of(p) {
            *agg.entry((n, t, k)).or_insert(0.0) += qty;
        }
    }
    for (&(n, t, k), &qty) in &agg {
        let tn = TimeNode { node: n, period: t };
        let mut terms = Vec::new();
        for &a in graph.incoming(tn) {
            if let Some(&v) = x.get(&(a, k)) {
                terms.push((v, 1.0));
            }
        }
        model.add_row(format!("dem_n{n}_t{t}_k{k}"), RowSense::Ge, qty, terms);
    }

    // Storage: the subsets share the warehouse, so their total held quantity
    // is limited jointly.
    for (i, arc) in graph.holding_arcs.iter().enumerate() {
        let Some(lim) = arc.capacity_bound.filter(|b| b.is_finite()) else {
            continue;
        };
        let terms: Vec<_> = (0..partition.k())
            .filter_map(|k| x.get(&(ArcRef::Holding(i), k)).map(|&v| (v, 1.0)))
            .collect();
        if !terms.is_empty() {
            model.add_row(format!("store_h{i}"), RowSense::Le, lim, terms);
        }
    }

    // Capacity linking for arcs that carry at least one subset.
    let u = inst.vehicle_capacity;
    for (i, _) in graph.transport_arcs.iter().enumerate() {
        let mut terms: Vec<_> = (0..partition.k())
            .filter_map(|k| x.get(&(ArcRef::Transport(i), k)).map(|&v| (v, 1.0)))
            .collect();
        if terms.is_empty() {
            continue;
        }
        terms.push((y[i], -u));
        model.add_row(format!("cap_a{i}"), RowSense::Le, 0.0, terms);
    }

    // z bounds the super flow cost from above the flows' own cost, making
    // the master objective f·y + z a valid stand-in for the full objective.
    if !x.is_empty() {
        let mut terms = vec![(z, 1.0)];
        for (&(a, _), &v) in &x {
            let c = graph.arc(a).unit_cost;
            if c != 0.0 {
                terms.push((v, -c));
            }
        }
        model.add_row("z_cost", RowSense::Ge, 0.0, terms);
    }

    MasterModel { model, domain, partition: partition.clone(), y, z, x, n_cuts: 0 }
}

impl MasterModel {
    /// Extract the integer design from a primal point.
    pub fn vehicle_solution(&self, primal: &[f64]) -> Result<VehicleSolution, ModelError> {
        let vals: Vec<f64> = self.y.iter().map(|&VarId(j)| primal[j]).collect();
        let names = |i: usize| self.model.vars[self.y[i].0].name.clone();
        VehicleSolution::from_fractional(&vals, names)
    }

    /// Extract the super flows and `z` from a primal point.
    pub fn super_flow_solution(&self, primal: &[f64]) -> SuperFlowSolution {
        let x = self
            .x
            .iter()
            .filter_map(|(&key, &VarId(j))| (primal[j].abs() > 1e-12).then_some((key, primal[j])))
            .collect();
        SuperFlowSolution { x, z: primal[self.z.0] }
    }

    /// A full primal vector for warm-starting: the given design, the given
    /// super flows, and `z` at their flow cost.
    pub fn warm_vector(&self, y: &VehicleSolution, sup: &SuperFlowSolution) -> Vec<f64> {
        let mut v = vec![0.0; self.model.vars.len()];
        for (i, &VarId(j)) in self.y.iter().enumerate() {
            v[j] = f64::from(y.y[i]);
        }
        v[self.z.0] = sup.z;
        for (key, &VarId(j)) in &self.x {
            v[j] = sup.x.get(key).copied().unwrap_or(0.0);
        }
        v
    }
}

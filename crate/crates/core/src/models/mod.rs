//! Model builders, Benders cuts, solution (dis)aggregation, verification.
//!
//! Everything here is expressed over the time-expanded graph:
//!
//! - [`build_lsndp`] — the full design-and-flow formulation: integer vehicle
//!   counts `y` per transport arc, one flow variable per (arc, product) where
//!   the product may travel, flow conservation at warehouses, exact-arrival
//!   demand cover at customers, storage and vehicle capacity linking.
//! - [`build_subproblem`] / [`build_phase_one`] — the fixed-design flow
//!   pricing problem `SP(ȳ)` and its always-feasible phase-one variant whose
//!   optimal duals certify infeasibility.
//! - [`build_master`] — the Benders master at an aggregation level: `y`, the
//!   flow-cost stand-in `z`, and one *super-product* flow image per partition
//!   subset (level 0 keeps only `y`, `z` and cuts).
//! - [`cuts`] — optimality/feasibility cut construction from subproblem
//!   duals, with at-generation soundness checks, and the deduplicating pool.
//! - [`aggregate_solution`] / [`disaggregate_solution`] — the two directions
//!   of the aggregation argument: folding a product flow into super-product
//!   flows (always valid, cost-preserving), and unfolding a super-product
//!   flow into a real one by path decomposition (valid exactly when every
//!   subset's members share one supplier set).
//! - [`verify_solution`] — an independent feasibility/objective check that
//!   recomputes every constraint from the instance data, used as the
//!   gatekeeper for upper-bound updates.

mod aggregate;
mod build;
pub mod cuts;
mod verify;

pub use aggregate::{aggregate_solution, disaggregate_solution};
pub use build::{
    build_lsndp, build_master, build_phase_one, build_subproblem, LsndpModel, MasterModel,
    PhaseOneModel, Subproblem, SubproblemRows,
};
pub use verify::{verify_solution, VerifyReport};

use crate::instance::{Instance, NodeRole};
use crate::partition::ProductPartition;
use crate::solver::INTEGRALITY_TOL;
use crate::timegraph::{ArcRef, TimeExpandedGraph};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("product {0:?} is not in the instance catalog")]
    UnknownProduct(String),
    #[error("variable {name} = {value} is not integral within tolerance")]
    NonIntegral { name: String, value: f64 },
    #[error(
        "optimality cut fails strong duality at its generating point: dual value {dual_value}, subproblem optimum {subproblem_objective}"
    )]
    DualityGap { dual_value: f64, subproblem_objective: f64 },
    #[error("cut is not violated at its generating point (violation {violation:e})")]
    CutNotViolated { violation: f64 },
    #[error("all-zero infeasibility certificate")]
    ZeroRay,
    #[error("partition is not exactly aggregatable: subset {{{subset}}} mixes supplier sets")]
    NotExactlyAggregatable { subset: String },
    #[error("flow decomposition failed: {0}")]
    Decomposition(String),
}

/// Which products may travel on which arcs.  Arcs leaving a supplier carry
/// only products the supplier offers; all other arcs carry everything.
/// Products are indexed by catalog order.
#[derive(Clone, Debug)]
pub struct FlowDomain {
    product_names: Vec<String>,
    /// Per node index: `Some(offered product indices)` for suppliers.
    offered: Vec<Option<BTreeSet<usize>>>,
}

impl FlowDomain {
    pub fn new(graph: &TimeExpandedGraph, inst: &Instance) -> Self {
        let index: BTreeMap<&str, usize> = inst
            .catalog
            .products
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i))
            .collect();
        let offered = graph
            .node_ids
            .iter()
            .zip(&graph.node_roles)
            .map(|(id, role)| match role {
                NodeRole::Supplier => Some(
                    inst.catalog
                        .supplier_offers
                        .get(id)
                        .map(|set| {
                            set.iter()
                                .filter_map(|p| index.get(p.as_str()).copied())
                                .collect()
                        })
                        .unwrap_or_default(),
                ),
                _ => None,
            })
            .collect();
        Self { product_names: inst.catalog.products.clone(), offered }
    }

    pub fn n_products(&self) -> usize {
        self.product_names.len()
    }

    pub fn product_name(&self, idx: usize) -> &str {
        &self.product_names[idx]
    }

    pub fn product_index(&self, name: &str) -> Option<usize> {
        self.product_names.iter().position(|p| p == name)
    }

    /// Whether product `p` may travel on arcs leaving `node`.
    pub fn node_allows(&self, node: usize, p: usize) -> bool {
        match &self.offered[node] {
            Some(set) => set.contains(&p),
            None => true,
        }
    }

    /// Product indices allowed on the arc (by its origin node).
    pub fn allowed_products(&self, origin_node: usize) -> Vec<usize> {
        match &self.offered[origin_node] {
            Some(set) => set.iter().copied().collect(),
            None => (0..self.n_products()).collect(),
        }
    }

    /// Products the supplier at `node` offers; `None` for non-suppliers.
    pub fn offered_at(&self, node: usize) -> Option<&BTreeSet<usize>> {
        self.offered[node].as_ref()
    }
}

/// A product partition translated to catalog indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexedPartition {
    subsets: Vec<BTreeSet<usize>>,
}

impl IndexedPartition {
    pub fn new(partition: &ProductPartition, domain: &FlowDomain) -> Result<Self, ModelError> {
        let subsets = partition
            .subsets()
            .iter()
            .map(|s| {
                s.iter()
                    .map(|p| {
                        domain
                            .product_index(p)
                            .ok_or_else(|| ModelError::UnknownProduct(p.clone()))
                    })
                    .collect::<Result<BTreeSet<usize>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { subsets })
    }

    pub fn k(&self) -> usize {
        self.subsets.len()
    }

    pub fn subsets(&self) -> &[BTreeSet<usize>] {
        &self.subsets
    }

    /// Subset index of a product.
    pub fn subset_of(&self, p: usize) -> Option<usize> {
        self.subsets.iter().position(|s| s.contains(&p))
    }

    /// Whether super-product `k` may travel on arcs leaving `node`: the
    /// subset must share a product with the supplier's offer (non-suppliers
    /// allow everything).
    pub fn node_allows(&self, domain: &FlowDomain, node: usize, k: usize) -> bool {
        match domain.offered_at(node) {
            Some(offered) => self.subsets[k].iter().any(|p| offered.contains(p)),
            None => true,
        }
    }
}

/// Integer vehicle counts per transport arc (graph index order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VehicleSolution {
    pub y: Vec<u32>,
}

impl VehicleSolution {
    pub fn zeros(graph: &TimeExpandedGraph) -> Self {
        Self { y: vec![0; graph.transport_arcs.len()] }
    }

    /// Total vehicle fixed cost `Σ f_a · y_a`.
    pub fn fixed_cost(&self, graph: &TimeExpandedGraph) -> f64 {
        self.y
            .iter()
            .zip(&graph.transport_arcs)
            .map(|(&y, a)| f64::from(y) * a.fixed_cost)
            .sum()
    }

    /// Round a fractional vector to integers, failing when a component is
    /// further than the integrality tolerance from its rounding.
    pub fn from_fractional(values: &[f64], names: impl Fn(usize) -> String) -> Result<Self, ModelError> {
        let mut y = Vec::with_capacity(values.len());
        for (i, &v) in values.iter().enumerate() {
            let r = v.round();
            if (v - r).abs() > INTEGRALITY_TOL * v.abs().max(1.0) {
                return Err(ModelError::NonIntegral { name: names(i), value: v });
            }
            y.push(r.max(0.0) as u32);
        }
        Ok(Self { y })
    }
}

/// A per-product flow: non-zero quantities keyed by (arc, product index).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowSolution {
    pub x: BTreeMap<(ArcRef, usize), f64>,
}

impl FlowSolution {
    /// Total flow cost `Σ c_a · x` (transport and holding).
    pub fn flow_cost(&self, graph: &TimeExpandedGraph) -> f64 {
        self.x
            .iter()
            .map(|(&(arc, _), &v)| graph.arc(arc).unit_cost * v)
            .sum()
    }

    /// Total quantity on one arc across products.
    pub fn arc_total(&self, arc: ArcRef) -> f64 {
        self.x
            .range((arc, 0)..=(arc, usize::MAX))
            .map(|(_, &v)| v)
            .sum()
    }
}

/// A super-product flow image plus the flow-cost stand-in `z`, keyed by
/// (arc, subset index).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuperFlowSolution {
    pub x: BTreeMap<(ArcRef, usize), f64>,
    pub z: f64,
}

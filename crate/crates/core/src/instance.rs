//! Problem instances: static network, product catalog, demands, horizon.
//!
//! An instance describes a two-echelon distribution network.  Suppliers ship
//! to warehouses or directly to customers, warehouses ship to other
//! warehouses or to customers, and nothing ever leaves a customer.  The
//! planning horizon is `days × periods_per_day` periods; a demand names the
//! 1-based period at which its quantity must *arrive* at the customer.
//! Products are grouped into disjoint families, and each supplier offers a
//! subset of the catalog.
//!
//! Instances round-trip through a single JSON document (see the field names
//! on [`Instance`]; `products`, `families` and `supplier_offers` appear at
//! the top level).  [`load_instance`] merges duplicate demand entries by
//! summing their quantities and rejects files that fail validation;
//! [`validate_instance`] can also be called on its own and returns the full
//! list of violations instead of stopping at the first.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Role of a node in the two-echelon network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Supplier,
    Warehouse,
    Customer,
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRole::Supplier => write!(f, "supplier"),
            NodeRole::Warehouse => write!(f, "warehouse"),
            NodeRole::Customer => write!(f, "customer"),
        }
    }
}

/// A physical location.  The storage fields are present exactly on
/// warehouses: `storage_cost` is the per-unit per-period holding cost and
/// `storage_capacity` bounds the total quantity held across all products.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub role: NodeRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage_cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage_capacity: Option<f64>,
}

/// A directed transport link of the static network.  `travel_time_hours` is
/// converted to whole periods when the network is time-expanded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub from: String,
    pub to: String,
    pub travel_time_hours: f64,
    pub unit_flow_cost: f64,
    pub fixed_vehicle_cost: f64,
}

/// The product side of an instance: the catalog order of products, their
/// partition into families, and which supplier offers which products.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductCatalog {
    /// All product ids, in canonical order (model and report indices follow
    /// this order).
    pub products: Vec<String>,
    /// Disjoint families covering `products`.
    pub families: Vec<BTreeSet<String>>,
    /// Supplier id → products it offers.
    pub supplier_offers: BTreeMap<String, BTreeSet<String>>,
}

impl ProductCatalog {
    /// Suppliers offering `product`, in id order.
    pub fn suppliers_of(&self, product: &str) -> BTreeSet<String> {
        self.supplier_offers
            .iter()
            .filter(|(_, offered)| offered.contains(product))
            .map(|(s, _)| s.clone())
            .collect()
    }

    /// Index of `product` in catalog order.
    pub fn product_index(&self, product: &str) -> Option<usize> {
        self.products.iter().position(|p| p == product)
    }
}

/// One demand entry: `quantity` units of `product` must arrive at `customer`
/// exactly in `period` (1-based, within the horizon).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub customer: String,
    pub period: u32,
    pub product: String,
    pub quantity: f64,
}

/// A complete problem instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub nodes: Vec<Node>,
    pub arcs: Vec<Arc>,
    #[serde(flatten)]
    pub catalog: ProductCatalog,
    pub demands: Vec<Demand>,
    /// Number of days in the planning horizon.
    pub days: u32,
    /// Periods per day; a period lasts `24 / periods_per_day` hours.
    pub periods_per_day: u32,
    /// Uniform vehicle capacity in flow units.
    pub vehicle_capacity: f64,
}

impl Instance {
    /// Total number of periods `|T| = days × periods_per_day`.
    pub fn horizon_periods(&self) -> u32 {
        self.days * self.periods_per_day
    }

    /// Look up a node by id.
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Nodes with the given role, in declaration order.
    pub fn nodes_with_role(&self, role: NodeRole) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.role == role)
    }

    /// Demands folded into a map keyed by (customer, period, product) —
    /// duplicates merged by summation.
    pub fn demand_map(&self) -> BTreeMap<(String, u32, String), f64> {
        let mut map = BTreeMap::new();
        for d in &self.demands {
            *map.entry((d.customer.clone(), d.period, d.product.clone()))
                .or_insert(0.0) += d.quantity;
        }
        map
    }
}

/// One validation violation, locating the offending entity.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    DuplicateNodeId(String),
    /// Storage fields on a non-warehouse, or missing on a warehouse.
    StorageFields { node: String, role: NodeRole },
    NegativeStorageCapacity(String),
    UnknownArcEndpoint { from: String, to: String, missing: String },
    /// Arc between roles the echelon structure forbids (into a supplier, out
    /// of a customer, warehouse→supplier, or a self-loop).
    EchelonViolation { from: String, to: String },
    NonPositiveArcField { from: String, to: String, field: &'static str },
    DuplicateArc { from: String, to: String },
    DuplicateProduct(String),
    /// A product appearing in two families or in none, or a family member
    /// absent from the catalog.
    FamilyPartition { product: String, detail: &'static str },
    OfferFromNonSupplier(String),
    /// A supplier offering a product that is not in the catalog (and hence
    /// outside every family it could specialize in).
    OfferUnknownProduct { supplier: String, product: String },
    DemandUnknownCustomer(String),
    DemandUnknownProduct { customer: String, product: String },
    DemandPeriodOutOfRange { customer: String, period: u32, horizon: u32 },
    NonPositiveDemand { customer: String, period: u32, product: String },
    /// A demanded product that no supplier offers.
    UnsourceableProduct(String),
    NonPositiveVehicleCapacity,
    /// Horizon must span at least two periods for any shipment to arrive.
    HorizonTooShort(u32),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            DuplicateNodeId(id) => write!(f, "duplicate node id {id:?}"),
            StorageFields { node, role } => write!(
                f,
                "node {node:?} ({role}): storage_cost/storage_capacity must be present exactly on warehouses"
            ),
            NegativeStorageCapacity(id) => write!(f, "warehouse {id:?} has negative storage_capacity"),
            UnknownArcEndpoint { from, to, missing } => {
                write!(f, "arc {from:?}->{to:?} references unknown node {missing:?}")
            }
            EchelonViolation { from, to } => {
                write!(f, "arc {from:?}->{to:?} violates the echelon structure")
            }
            NonPositiveArcField { from, to, field } => {
                write!(f, "arc {from:?}->{to:?}: {field} must be > 0")
            }
            DuplicateArc { from, to } => write!(f, "duplicate arc {from:?}->{to:?}"),
            DuplicateProduct(p) => write!(f, "duplicate product id {p:?}"),
            FamilyPartition { product, detail } => {
                write!(f, "families do not partition the catalog: product {product:?} {detail}")
            }
            OfferFromNonSupplier(id) => write!(f, "supplier_offers key {id:?} is not a supplier node"),
            OfferUnknownProduct { supplier, product } => write!(
                f,
                "supplier {supplier:?} offers {product:?}, which is outside the catalog and its families"
            ),
            DemandUnknownCustomer(id) => write!(f, "demand references unknown customer {id:?}"),
            DemandUnknownProduct { customer, product } => {
                write!(f, "demand at {customer:?} references unknown product {product:?}")
            }
            DemandPeriodOutOfRange { customer, period, horizon } => write!(
                f,
                "demand at {customer:?} names period {period} outside 1..={horizon}"
            ),
            NonPositiveDemand { customer, period, product } => write!(
                f,
                "demand at {customer:?} period {period} for {product:?} must have quantity > 0"
            ),
            UnsourceableProduct(p) => {
                write!(f, "demanded product {p:?} is offered by no supplier")
            }
            NonPositiveVehicleCapacity => write!(f, "vehicle_capacity must be > 0"),
            HorizonTooShort(t) => write!(f, "horizon has {t} period(s); at least 2 are required"),
        }
    }
}

/// Outcome of [`validate_instance`]: empty means the instance is well-formed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "instance is valid");
        }
        writeln!(f, "{} violation(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid instance: {0}")]
    Invalid(ValidationReport),
}

/// Whether the echelon structure allows an arc `from_role → to_role`.
/// Permitted: supplier→warehouse, supplier→customer, warehouse→warehouse,
/// warehouse→customer.
pub fn echelon_allows(from: NodeRole, to: NodeRole) -> bool {
    matches!(
        (from, to),
        (NodeRole::Supplier, NodeRole::Warehouse)
            | (NodeRole::Supplier, NodeRole::Customer)
            | (NodeRole::Warehouse, NodeRole::Warehouse)
            | (NodeRole::Warehouse, NodeRole::Customer)
    )
}

/// Check every structural invariant of `inst` and report all violations.
pub fn validate_instance(inst: &Instance) -> ValidationReport {
    let mut v = Vec::new();

    // Nodes: unique ids, storage fields exactly on warehouses.
    let mut ids = BTreeSet::new();
    for n in &inst.nodes {
        if !ids.insert(n.id.as_str()) {
            v.push(Violation::DuplicateNodeId(n.id.clone()));
        }
        let has_storage = n.storage_cost.is_some() && n.storage_capacity.is_some();
        let any_storage = n.storage_cost.is_some() || n.storage_capacity.is_some();
        match n.role {
            NodeRole::Warehouse => {
                if !has_storage {
                    v.push(Violation::StorageFields { node: n.id.clone(), role: n.role });
                } else if n.storage_capacity.unwrap() < 0.0 {
                    v.push(Violation::NegativeStorageCapacity(n.id.clone()));
                }
            }
            _ => {
                if any_storage {
                    v.push(Violation::StorageFields { node: n.id.clone(), role: n.role });
                }
            }
        }
    }

    // Arcs: known endpoints, echelon rule, positive fields, no duplicates.
    let role_of: BTreeMap<&str, NodeRole> =
        inst.nodes.iter().map(|n| (n.id.as_str(), n.role)).collect();
    let mut seen_arcs = BTreeSet::new();
    for a in &inst.arcs {
        let mut endpoints_ok = true;
        for end in [&a.from, &a.to] {
            if !role_of.contains_key(end.as_str()) {
                v.push(Violation::UnknownArcEndpoint {
                    from: a.from.clone(),
                    to: a.to.clone(),
                    missing: end.clone(),
                });
                endpoints_ok = false;
            }
        }
        if endpoints_ok {
            let (rf, rt) = (role_of[a.from.as_str()], role_of[a.to.as_str()]);
            if a.from == a.to || !echelon_allows(rf, rt) {
                v.push(Violation::EchelonViolation { from: a.from.clone(), to: a.to.clone() });
            }
        }
        for (val, field) in [
            (a.travel_time_hours, "travel_time_hours"),
            (a.unit_flow_cost, "unit_flow_cost"),
            (a.fixed_vehicle_cost, "fixed_vehicle_cost"),
        ] {
            if !(val > 0.0) {
                v.push(Violation::NonPositiveArcField {
                    from: a.from.clone(),
                    to: a.to.clone(),
                    field,
                });
            }
        }
        if !seen_arcs.insert((a.from.as_str(), a.to.as_str())) {
            v.push(Violation::DuplicateArc { from: a.from.clone(), to: a.to.clone() });
        }
    }

    // Catalog: unique products, families a partition, offers from suppliers
    // over known products.
    let mut product_set = BTreeSet::new();
    for p in &inst.catalog.products {
        if !product_set.insert(p.as_str()) {
            v.push(Violation::DuplicateProduct(p.clone()));
        }
    }
    let mut family_of = BTreeMap::new();
    for (fi, fam) in inst.catalog.families.iter().enumerate() {
        for p in fam {
            if !product_set.contains(p.as_str()) {
                v.push(Violation::FamilyPartition {
                    product: p.clone(),
                    detail: "is not in the catalog",
                });
            }
            if family_of.insert(p.as_str(), fi).is_some() {
                v.push(Violation::FamilyPartition {
                    product: p.clone(),
                    detail: "appears in more than one family",
                });
            }
        }
    }
    for p in &inst.catalog.products {
        if !family_of.contains_key(p.as_str()) {
            v.push(Violation::FamilyPartition {
                product: p.clone(),
                detail: "is in no family",
            });
        }
    }
    for (supplier, offered) in &inst.catalog.supplier_offers {
        match role_of.get(supplier.as_str()) {
            Some(NodeRole::Supplier) => {}
            _ => v.push(Violation::OfferFromNonSupplier(supplier.clone())),
        }
        for p in offered {
            if !product_set.contains(p.as_str()) {
                v.push(Violation::OfferUnknownProduct {
                    supplier: supplier.clone(),
                    product: p.clone(),
                });
            }
        }
    }

    // Demands: known customer/product, period in range, positive quantity,
    // sourceable product.
    let horizon = inst.horizon_periods();
    let mut unsourceable = BTreeSet::new();
    for d in &inst.demands {
        match role_of.get(d.customer.as_str()) {
            Some(NodeRole::Customer) => {}
            _ => v.push(Violation::DemandUnknownCustomer(d.customer.clone())),
        }
        if !product_set.contains(d.product.as_str()) {
            v.push(Violation::DemandUnknownProduct {
                customer: d.customer.clone(),
                product: d.product.clone(),
            });
        } else if !inst
            .catalog
            .supplier_offers
            .values()
            .any(|offered| offered.contains(&d.product))
        {
            unsourceable.insert(d.product.clone());
        }
        if d.period < 1 || d.period > horizon {
            v.push(Violation::DemandPeriodOutOfRange {
                customer: d.customer.clone(),
                period: d.period,
                horizon,
            });
        }
        if !(d.quantity > 0.0) {
            v.push(Violation::NonPositiveDemand {
                customer: d.customer.clone(),
                period: d.period,
                product: d.product.clone(),
            });
        }
    }
    for p in unsourceable {
        v.push(Violation::UnsourceableProduct(p));
    }

    if !(inst.vehicle_capacity > 0.0) {
        v.push(Violation::NonPositiveVehicleCapacity);
    }
    if horizon < 2 {
        v.push(Violation::HorizonTooShort(horizon));
    }

    ValidationReport { violations: v }
}

/// Merge demand entries sharing (customer, period, product) by summing their
/// quantities, preserving first-occurrence order.
pub fn merge_duplicate_demands(demands: Vec<Demand>) -> Vec<Demand> {
    let mut out: Vec<Demand> = Vec::with_capacity(demands.len());
    let mut at: BTreeMap<(String, u32, String), usize> = BTreeMap::new();
    for d in demands {
        let key = (d.customer.clone(), d.period, d.product.clone());
        match at.get(&key) {
            Some(&i) => out[i].quantity += d.quantity,
            None => {
                at.insert(key, out.len());
                out.push(d);
            }
        }
    }
    out
}

/// Load an instance from a JSON file: parse, merge duplicate demands, then
/// validate.  Fails with the full violation list if validation does.
pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance, InstanceError> {
    let text = std::fs::read_to_string(path)?;
    let mut inst: Instance = serde_json::from_str(&text)?;
    inst.demands = merge_duplicate_demands(std::mem::take(&mut inst.demands));
    let report = validate_instance(&inst);
    if !report.is_ok() {
        return Err(InstanceError::Invalid(report));
    }
    Ok(inst)
}

/// Serialize an instance to pretty-printed JSON.  The output is
/// deterministic: re-saving an unchanged instance reproduces the same bytes.
pub fn save_instance(inst: &Instance, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    let mut text = serde_json::to_string_pretty(inst)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    /// Two nodes, one arc, one product, one demand: the smallest well-formed
    /// instance shape.
    pub(crate) fn tiny_instance() -> Instance {
        Instance {
            nodes: vec![
                Node {
                    id: "s1".into(),
                    role: NodeRole::Supplier,
                    storage_cost: None,
                    storage_capacity: None,
                },
                Node {
                    id: "c1".into(),
                    role: NodeRole::Customer,
                    storage_cost: None,
                    storage_capacity: None,
                },
            ],
            arcs: vec![Arc {
                from: "s1".into(),
                to: "c1".into(),
                travel_time_hours: 5.0,
                unit_flow_cost: 1.0,
                fixed_vehicle_cost: 100.0,
            }],
            catalog: ProductCatalog {
                products: vec!["p1".into()],
                families: vec![set(&["p1"])],
                supplier_offers: [("s1".to_string(), set(&["p1"]))].into_iter().collect(),
            },
            demands: vec![Demand {
                customer: "c1".into(),
                period: 2,
                product: "p1".into(),
                quantity: 5.0,
            }],
            days: 1,
            periods_per_day: 2,
            vehicle_capacity: 10.0,
        }
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let inst = tiny_instance();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        save_instance(&inst, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = load_instance(&path).unwrap();
        assert_eq!(loaded, inst);
        save_instance(&loaded, &path).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn horizon_is_days_times_periods() {
        let mut inst = tiny_instance();
        inst.days = 3;
        inst.periods_per_day = 2;
        assert_eq!(inst.horizon_periods(), 6);
    }

    #[test]
    fn valid_instance_passes() {
        assert!(validate_instance(&tiny_instance()).is_ok());
    }

    #[test]
    fn echelon_violation_is_reported() {
        let mut inst = tiny_instance();
        inst.nodes.push(Node {
            id: "w1".into(),
            role: NodeRole::Warehouse,
            storage_cost: Some(0.1),
            storage_capacity: Some(50.0),
        });
        inst.arcs.push(Arc {
            from: "c1".into(),
            to: "w1".into(),
            travel_time_hours: 1.0,
            unit_flow_cost: 1.0,
            fixed_vehicle_cost: 10.0,
        });
        let report = validate_instance(&inst);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::EchelonViolation { from, to } if from == "c1" && to == "w1")));
    }

    #[test]
    fn unsourceable_demand_is_reported() {
        let mut inst = tiny_instance();
        inst.catalog.products.push("p2".into());
        inst.catalog.families[0].insert("p2".into());
        inst.demands.push(Demand {
            customer: "c1".into(),
            period: 2,
            product: "p2".into(),
            quantity: 1.0,
        });
        let report = validate_instance(&inst);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::UnsourceableProduct(p) if p == "p2")));
    }

    #[test]
    fn offer_outside_catalog_is_reported() {
        let mut inst = tiny_instance();
        inst.catalog
            .supplier_offers
            .get_mut("s1")
            .unwrap()
            .insert("p_unknown".into());
        let report = validate_instance(&inst);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::OfferUnknownProduct { supplier, product }
                if supplier == "s1" && product == "p_unknown")));
    }

    #[test]
    fn storage_fields_must_match_role() {
        let mut inst = tiny_instance();
        inst.nodes[0].storage_cost = Some(0.5);
        let report = validate_instance(&inst);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::StorageFields { node, .. } if node == "s1")));

        let mut inst = tiny_instance();
        inst.nodes.push(Node {
            id: "w1".into(),
            role: NodeRole::Warehouse,
            storage_cost: None,
            storage_capacity: None,
        });
        let report = validate_instance(&inst);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::StorageFields { node, .. } if node == "w1")));
    }

    #[test]
    fn duplicate_demands_merge_by_summation() {
        let demands = vec![
            Demand { customer: "c1".into(), period: 3, product: "p1".into(), quantity: 2.0 },
            Demand { customer: "c1".into(), period: 2, product: "p1".into(), quantity: 1.0 },
            Demand { customer: "c1".into(), period: 3, product: "p1".into(), quantity: 4.5 },
        ];
        let merged = merge_duplicate_demands(demands);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].period, 3);
        assert_eq!(merged[0].quantity, 6.5);
        assert_eq!(merged[1].period, 2);
    }

    #[test]
    fn load_merges_duplicates_and_validates() {
        let mut inst = tiny_instance();
        inst.demands.push(Demand {
            customer: "c1".into(),
            period: 2,
            product: "p1".into(),
            quantity: 3.0,
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.json");
        save_instance(&inst, &path).unwrap();
        let loaded = load_instance(&path).unwrap();
        assert_eq!(loaded.demands.len(), 1);
        assert_eq!(loaded.demands[0].quantity, 8.0);

        // An invalid file is rejected with the violation list.
        inst.vehicle_capacity = 0.0;
        save_instance(&inst, &path).unwrap();
        match load_instance(&path) {
            Err(InstanceError::Invalid(report)) => {
                assert!(report
                    .violations
                    .iter()
                    .any(|v| matches!(v, Violation::NonPositiveVehicleCapacity)));
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }
}

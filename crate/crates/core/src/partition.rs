//! Product partitions and supplier-overlap matching rates.
//!
//! The matching rate of two products is the Jaccard similarity of their
//! supplier sets.  It measures how safely one aggregated "super-product" can
//! stand for both: at rate 1 the products are offered by exactly the same
//! suppliers and aggregation loses nothing, at rate 0 any aggregated plan may
//! route quantities through suppliers that cannot actually provide them.
//!
//! [`two_medoids_split`] halves a product set around supplier-overlap
//! distance (1 − rate).  Splitting the largest subset repeatedly yields the
//! nested [`PartitionSequence`] the aggregation-level search walks, and
//! [`refine_to_exact`] splits until every subset is *exactly aggregatable*
//! (all members share one supplier set) — the premise under which an
//! aggregated optimum can be disaggregated into a real flow without loss.

use crate::instance::ProductCatalog;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("product {0:?} is not in the catalog")]
    UnknownProduct(String),
    #[error("product {0:?} has an empty supplier set")]
    EmptySupplierSet(String),
    #[error("subset must contain at least {needed} products, got {got}")]
    SubsetTooSmall { needed: usize, got: usize },
    #[error("partition subsets must be non-empty and disjoint")]
    MalformedPartition,
    #[error("aggregation levels must satisfy 1 <= k_max <= |P| ({products}); got {k_max}")]
    KMaxOutOfRange { k_max: usize, products: usize },
}

/// An ordered partition of the product catalog into non-empty disjoint
/// subsets.  Subsets are kept in canonical order (sorted by their smallest
/// member), making equal partitions structurally equal.
///
/// The special [`ProductPartition::master_only`] value has zero subsets and
/// stands for the aggregation level "no flow image at all": the Benders
/// master built from it contains only design variables and cuts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductPartition {
    subsets: Vec<BTreeSet<String>>,
}

impl ProductPartition {
    /// Build from subsets, checking non-emptiness and disjointness and
    /// normalizing the order.
    pub fn from_subsets(subsets: Vec<BTreeSet<String>>) -> Result<Self, PartitionError> {
        let mut seen = BTreeSet::new();
        for s in &subsets {
            if s.is_empty() {
                return Err(PartitionError::MalformedPartition);
            }
            for p in s {
                if !seen.insert(p.clone()) {
                    return Err(PartitionError::MalformedPartition);
                }
            }
        }
        let mut subsets = subsets;
        subsets.sort_by(|a, b| a.iter().next().cmp(&b.iter().next()));
        Ok(Self { subsets })
    }

    /// The single-subset partition {P}.
    pub fn whole(catalog: &ProductCatalog) -> Self {
        Self { subsets: vec![catalog.products.iter().cloned().collect()] }
    }

    /// All-singletons partition (full product granularity).
    pub fn singletons(catalog: &ProductCatalog) -> Self {
        Self::from_subsets(
            catalog
                .products
                .iter()
                .map(|p| [p.clone()].into_iter().collect())
                .collect(),
        )
        .expect("catalog products are unique")
    }

    /// The zero-subset value used for a design-and-cuts-only master.
    pub fn master_only() -> Self {
        Self { subsets: Vec::new() }
    }

    /// Number of subsets (the aggregation level K).
    pub fn k(&self) -> usize {
        self.subsets.len()
    }

    pub fn subsets(&self) -> &[BTreeSet<String>] {
        &self.subsets
    }

    /// Index of the subset containing `product`.
    pub fn subset_of(&self, product: &str) -> Option<usize> {
        self.subsets.iter().position(|s| s.contains(product))
    }

    /// Whether the subsets exactly cover `products`.
    pub fn is_partition_of(&self, products: &[String]) -> bool {
        let mut members = BTreeSet::new();
        for s in &self.subsets {
            for p in s {
                if !members.insert(p.as_str()) {
                    return false;
                }
            }
        }
        members.len() == products.len() && products.iter().all(|p| members.contains(p.as_str()))
    }
}

/// A nested sequence of partitions: entry `k-1` has `k` subsets, and each
/// entry refines the previous one by splitting exactly one subset in two.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSequence {
    pub partitions: Vec<ProductPartition>,
}

impl PartitionSequence {
    /// The partition with `k` subsets.
    pub fn level(&self, k: usize) -> &ProductPartition {
        &self.partitions[k - 1]
    }

    pub fn max_k(&self) -> usize {
        self.partitions.len()
    }

    /// Check the refinement-chain property: each level splits exactly one
    /// subset of the previous level into two parts.
    pub fn is_refinement_chain(&self) -> bool {
        for w in self.partitions.windows(2) {
            let (coarse, fine) = (&w[0], &w[1]);
            if fine.k() != coarse.k() + 1 {
                return false;
            }
            // Every fine subset must be contained in some coarse subset.
            for s in fine.subsets() {
                let p = s.iter().next().expect("subsets are non-empty");
                match coarse.subset_of(p) {
                    Some(ci) => {
                        if !s.is_subset(&coarse.subsets()[ci]) {
                            return false;
                        }
                    }
                    None => return false,
                }
            }
        }
        true
    }
}

/// Supplier sets per product, for all catalog products (possibly empty sets).
pub fn supplier_sets(catalog: &ProductCatalog) -> BTreeMap<String, BTreeSet<String>> {
    let mut sets: BTreeMap<String, BTreeSet<String>> = catalog
        .products
        .iter()
        .map(|p| (p.clone(), BTreeSet::new()))
        .collect();
    for (supplier, offered) in &catalog.supplier_offers {
        for p in offered {
            if let Some(set) = sets.get_mut(p) {
                set.insert(supplier.clone());
            }
        }
    }
    sets
}

/// Jaccard similarity of the two products' supplier sets:
/// `|S_a ∩ S_b| / |S_a ∪ S_b|`.  Errors if either product is unknown or has
/// no supplier at all.
pub fn matching_rate(catalog: &ProductCatalog, a: &str, b: &str) -> Result<f64, PartitionError> {
    let sets = supplier_sets(catalog);
    let sa = sets
        .get(a)
        .ok_or_else(|| PartitionError::UnknownProduct(a.to_string()))?;
    let sb = sets
        .get(b)
        .ok_or_else(|| PartitionError::UnknownProduct(b.to_string()))?;
    if sa.is_empty() {
        return Err(PartitionError::EmptySupplierSet(a.to_string()));
    }
    if sb.is_empty() {
        return Err(PartitionError::EmptySupplierSet(b.to_string()));
    }
    Ok(jaccard(sa, sb))
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    inter as f64 / union as f64
}

/// Pairwise rate extended to empty supplier sets, used by the total set-level
/// rate and by clustering: two unsupplied products count as identical (1.0) —
/// aggregating them loses nothing — while an unsupplied product shares
/// nothing with a supplied one (0.0).
fn pair_rate(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => jaccard(a, b),
    }
}

/// Matching rate of a product subset: the mean of all pairwise rates, with
/// singletons scored 1.0 by convention.  Total over any subset of the
/// catalog (products absent from every offer count as having an empty
/// supplier set; see `pair_rate` for how empty sets compare).
pub fn set_matching_rate(catalog: &ProductCatalog, subset: &BTreeSet<String>) -> f64 {
    if subset.len() <= 1 {
        return 1.0;
    }
    let sets = supplier_sets(catalog);
    let empty = BTreeSet::new();
    let members: Vec<&BTreeSet<String>> = subset
        .iter()
        .map(|p| sets.get(p).unwrap_or(&empty))
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            total += pair_rate(members[i], members[j]);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Whether every subset of `partition` is exactly aggregatable: all members
/// of a subset share one identical supplier set, so any supplier providing
/// one member provides them all.
pub fn is_exactly_aggregatable(catalog: &ProductCatalog, partition: &ProductPartition) -> bool {
    let sets = supplier_sets(catalog);
    let empty = BTreeSet::new();
    partition.subsets().iter().all(|subset| {
        let mut members = subset.iter().map(|p| sets.get(p).unwrap_or(&empty));
        match members.next() {
            None => true,
            Some(first) => members.all(|s| s == first),
        }
    })
}

/// Split a product subset in two by 2-medoids clustering under
/// supplier-overlap distance (1 − matching rate).
///
/// The algorithm is fully deterministic: the medoids start as the
/// lexicographically first pair at maximum distance, assignment ties go to
/// the first medoid, and the swap-improvement phase applies the best strictly
/// improving swap (lexicographic scan order) until none remains.  The `seed`
/// parameter is reserved for randomized variants and does not influence the
/// result.  Both halves are non-empty; requires `|subset| ≥ 2`.
pub fn two_medoids_split(
    catalog: &ProductCatalog,
    subset: &BTreeSet<String>,
    _seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>), PartitionError> {
    if subset.len() < 2 {
        return Err(PartitionError::SubsetTooSmall { needed: 2, got: subset.len() });
    }
    let products: Vec<&String> = subset.iter().collect();
    let sets = supplier_sets(catalog);
    let empty = BTreeSet::new();
    let supplier_of: Vec<&BTreeSet<String>> = products
        .iter()
        .map(|p| sets.get(*p).unwrap_or(&empty))
        .collect();
    let n = products.len();
    let dist = |i: usize, j: usize| 1.0 - pair_rate(supplier_of[i], supplier_of[j]);

    // Initialize with the first pair at maximum distance.
    let (mut ma, mut mb) = (0, 1);
    let mut best = dist(0, 1);
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(i, j);
            if d > best + 1e-12 {
                best = d;
                (ma, mb) = (i, j);
            }
        }
    }

    let cost_of = |a: usize, b: usize| -> f64 {
        (0..n).map(|i| dist(i, a).min(dist(i, b))).sum()
    };

    // Swap-improvement: replace one medoid by a non-medoid while the total
    // assignment cost strictly drops.
    let mut cost = cost_of(ma, mb);
    loop {
        let mut improved = false;
        let mut best_swap = (ma, mb);
        let mut best_cost = cost;
        for keep in [ma, mb] {
            for cand in 0..n {
                if cand == ma || cand == mb {
                    continue;
                }
                let c = cost_of(keep, cand);
                if c < best_cost - 1e-12 {
                    best_cost = c;
                    best_swap = (keep.min(cand), keep.max(cand));
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
        (ma, mb) = best_swap;
        cost = best_cost;
    }
    let (ma, mb) = (ma.min(mb), ma.max(mb));

    // Assign each product to its nearest medoid; ties go to the first
    // medoid, and each medoid anchors its own half so both are non-empty.
    let mut half_a = BTreeSet::new();
    let mut half_b = BTreeSet::new();
    for i in 0..n {
        if i == ma {
            half_a.insert(products[i].clone());
        } else if i == mb {
            half_b.insert(products[i].clone());
        } else if dist(i, ma) <= dist(i, mb) {
            half_a.insert(products[i].clone());
        } else {
            half_b.insert(products[i].clone());
        }
    }
    Ok((half_a, half_b))
}

/// Build the nested partition sequence for levels `1..=k_max` by repeatedly
/// splitting the largest subset (ties broken lexicographically by subset
/// contents) with [`two_medoids_split`].
pub fn build_partition_sequence(
    catalog: &ProductCatalog,
    k_max: usize,
    seed: u64,
) -> Result<PartitionSequence, PartitionError> {
    let n = catalog.products.len();
    if k_max < 1 || k_max > n {
        return Err(PartitionError::KMaxOutOfRange { k_max, products: n });
    }
    let mut partitions = vec![ProductPartition::whole(catalog)];
    for _ in 1..k_max {
        let prev = partitions.last().unwrap();
        let split_at = largest_subset(prev.subsets());
        let mut subsets = prev.subsets().to_vec();
        let target = subsets.remove(split_at);
        let (a, b) = two_medoids_split(catalog, &target, seed)?;
        subsets.push(a);
        subsets.push(b);
        partitions.push(ProductPartition::from_subsets(subsets)?);
    }
    Ok(PartitionSequence { partitions })
}

/// Index of the largest subset, ties broken by lexicographic comparison of
/// the sorted member sequences.
fn largest_subset(subsets: &[BTreeSet<String>]) -> usize {
    let mut best = 0;
    for i in 1..subsets.len() {
        let (a, b) = (&subsets[i], &subsets[best]);
        if a.len() > b.len()
            || (a.len() == b.len() && a.iter().collect::<Vec<_>>() < b.iter().collect::<Vec<_>>())
        {
            best = i;
        }
    }
    best
}

/// Refine {P} until every subset is exactly aggregatable (identical supplier
/// sets within each subset), splitting offenders with
/// [`two_medoids_split`].  Terminates because singletons always pass.
pub fn refine_to_exact(
    catalog: &ProductCatalog,
    seed: u64,
) -> Result<ProductPartition, PartitionError> {
    let sets = supplier_sets(catalog);
    let empty = BTreeSet::new();
    let uniform = |subset: &BTreeSet<String>| -> bool {
        let mut members = subset.iter().map(|p| sets.get(p).unwrap_or(&empty));
        match members.next() {
            None => true,
            Some(first) => members.all(|s| s == first),
        }
    };

    let mut subsets = vec![catalog.products.iter().cloned().collect::<BTreeSet<_>>()];
    loop {
        match subsets.iter().position(|s| !uniform(s)) {
            None => break,
            Some(i) => {
                let target = subsets.remove(i);
                let (a, b) = two_medoids_split(catalog, &target, seed)?;
                subsets.push(a);
                subsets.push(b);
            }
        }
    }
    ProductPartition::from_subsets(subsets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn catalog(products: &[&str], offers: &[(&str, &[&str])]) -> ProductCatalog {
        ProductCatalog {
            products: products.iter().map(|p| p.to_string()).collect(),
            families: vec![products.iter().map(|p| p.to_string()).collect()],
            supplier_offers: offers
                .iter()
                .map(|(s, ps)| (s.to_string(), ps.iter().map(|p| p.to_string()).collect()))
                .collect(),
        }
    }

    /// Four products over three suppliers with partially overlapping supplier
    /// sets: {s1}, {s1,s2}, {s2,s3}, {s3}.
    fn overlap_catalog() -> ProductCatalog {
        catalog(
            &["p1", "p2", "p3", "p4"],
            &[
                ("s1", &["p1", "p2"]),
                ("s2", &["p2", "p3"]),
                ("s3", &["p3", "p4"]),
            ],
        )
    }

    #[test]
    fn matching_rate_examples() {
        let c = catalog(
            &["a", "b", "c", "d"],
            &[("s1", &["a", "b", "c"]), ("s2", &["a", "b", "c"]), ("s3", &["c", "d"])],
        );
        // Identical supplier sets.
        assert_eq!(matching_rate(&c, "a", "b").unwrap(), 1.0);
        // Disjoint supplier sets: {s1,s2} vs {s3}.
        assert_eq!(matching_rate(&c, "b", "d").unwrap(), 0.0);
        // {s1,s2,s3} vs {s3}: intersection one, union three.
        assert!((matching_rate(&c, "c", "d").unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn matching_rate_rejects_empty_supplier_sets() {
        let c = catalog(&["a", "b"], &[("s1", &["a"])]);
        assert_eq!(
            matching_rate(&c, "a", "b"),
            Err(PartitionError::EmptySupplierSet("b".into()))
        );
        assert_eq!(
            matching_rate(&c, "a", "zz"),
            Err(PartitionError::UnknownProduct("zz".into()))
        );
    }

    #[test]
    fn set_rate_averages_pairwise_rates() {
        // Pairwise rates 1, 1/3, 1/3 average to 5/9.
        let c = catalog(
            &["a", "b", "c"],
            &[("s1", &["a", "b", "c"]), ("s2", &["c"]), ("s3", &["c"])],
        );
        let subset: BTreeSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert!((set_matching_rate(&c, &subset) - 5.0 / 9.0).abs() < 1e-12);
        // Singleton convention.
        let single: BTreeSet<String> = ["a".to_string()].into_iter().collect();
        assert_eq!(set_matching_rate(&c, &single), 1.0);
    }

    #[test]
    fn two_medoids_recovers_the_natural_halves() {
        let c = overlap_catalog();
        let subset: BTreeSet<String> = c.products.iter().cloned().collect();
        let (a, b) = two_medoids_split(&c, &subset, 0).unwrap();
        let want_a: BTreeSet<String> = ["p1", "p2"].iter().map(|s| s.to_string()).collect();
        let want_b: BTreeSet<String> = ["p3", "p4"].iter().map(|s| s.to_string()).collect();
        assert_eq!((a, b), (want_a, want_b));
    }

    #[test]
    fn split_of_identical_products_still_yields_two_halves() {
        let c = catalog(&["a", "b", "c"], &[("s1", &["a", "b", "c"])]);
        let subset: BTreeSet<String> = c.products.iter().cloned().collect();
        let (a, b) = two_medoids_split(&c, &subset, 7).unwrap();
        assert!(!a.is_empty() && !b.is_empty());
        assert_eq!(a.len() + b.len(), 3);
    }

    #[test]
    fn sequence_is_a_refinement_chain() {
        let c = overlap_catalog();
        let seq = build_partition_sequence(&c, 4, 0).unwrap();
        assert_eq!(seq.max_k(), 4);
        for k in 1..=4 {
            assert_eq!(seq.level(k).k(), k);
            assert!(seq.level(k).is_partition_of(&c.products));
        }
        assert!(seq.is_refinement_chain());
        // Level 2 is the natural halving.
        let l2: Vec<Vec<&String>> = seq.level(2).subsets().iter().map(|s| s.iter().collect()).collect();
        assert_eq!(l2.len(), 2);
        assert_eq!(l2[0], vec!["p1", "p2"]);
        assert_eq!(l2[1], vec!["p3", "p4"]);
    }

    #[test]
    fn sequence_rejects_bad_k_max() {
        let c = overlap_catalog();
        assert!(matches!(
            build_partition_sequence(&c, 0, 0),
            Err(PartitionError::KMaxOutOfRange { .. })
        ));
        assert!(matches!(
            build_partition_sequence(&c, 5, 0),
            Err(PartitionError::KMaxOutOfRange { .. })
        ));
    }

    #[test]
    fn refine_to_exact_reaches_identical_supplier_sets() {
        // Distinct supplier sets everywhere: refinement must reach singletons.
        let c = overlap_catalog();
        let p = refine_to_exact(&c, 3).unwrap();
        assert!(is_exactly_aggregatable(&c, &p));
        assert_eq!(p.k(), 4);

        // All-or-nothing family structure: refinement stops at the families.
        let c = catalog(
            &["a", "b", "x", "y"],
            &[("s1", &["a", "b"]), ("s2", &["x", "y"]), ("s3", &["x", "y"])],
        );
        let p = refine_to_exact(&c, 3).unwrap();
        assert!(is_exactly_aggregatable(&c, &p));
        assert_eq!(p.k(), 2);
        assert_eq!(
            p.subsets()[0].iter().collect::<Vec<_>>(),
            vec!["a", "b"]
        );
    }

    #[test]
    fn master_only_partition_has_no_subsets() {
        let p = ProductPartition::master_only();
        assert_eq!(p.k(), 0);
        assert!(!p.is_partition_of(&["a".to_string()]));
    }

    #[test]
    fn exactness_check_follows_supplier_sets() {
        let c = overlap_catalog();
        assert!(is_exactly_aggregatable(&c, &ProductPartition::singletons(&c)));
        assert!(!is_exactly_aggregatable(&c, &ProductPartition::whole(&c)));
    }

    /// Strategy for a small random catalog: up to 6 products, up to 4
    /// suppliers, arbitrary offer bitmaps.
    fn arb_catalog() -> impl Strategy<Value = ProductCatalog> {
        (1usize..=6, 1usize..=4, proptest::collection::vec(any::<u8>(), 1..=4))
            .prop_map(|(np, ns, rows)| {
                let products: Vec<String> = (1..=np).map(|i| format!("p{i}")).collect();
                let mut offers = BTreeMap::new();
                for s in 0..ns {
                    let bits = rows[s % rows.len()] as usize >> (s % 3);
                    let offered: BTreeSet<String> = products
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| bits & (1 << i) != 0)
                        .map(|(_, p)| p.clone())
                        .collect();
                    offers.insert(format!("s{}", s + 1), offered);
                }
                ProductCatalog {
                    products: products.clone(),
                    families: vec![products.into_iter().collect()],
                    supplier_offers: offers,
                }
            })
    }

    proptest! {
        #[test]
        fn set_rate_is_a_rate(c in arb_catalog()) {
            let subset: BTreeSet<String> = c.products.iter().cloned().collect();
            let r = set_matching_rate(&c, &subset);
            prop_assert!((0.0..=1.0).contains(&r));
        }

        #[test]
        fn split_halves_partition_the_input(c in arb_catalog()) {
            let subset: BTreeSet<String> = c.products.iter().cloned().collect();
            if subset.len() < 2 { return Ok(()); }
            let (a, b) = two_medoids_split(&c, &subset, 0).unwrap();
            prop_assert!(!a.is_empty() && !b.is_empty());
            prop_assert!(a.is_disjoint(&b));
            let union: BTreeSet<String> = a.union(&b).cloned().collect();
            prop_assert_eq!(union, subset);
        }

        #[test]
        fn refine_to_exact_is_exact_and_deterministic(c in arb_catalog()) {
            let p1 = refine_to_exact(&c, 1).unwrap();
            let p2 = refine_to_exact(&c, 99).unwrap();
            prop_assert_eq!(&p1, &p2);
            prop_assert!(is_exactly_aggregatable(&c, &p1));
            prop_assert!(p1.is_partition_of(&c.products));
            // Exactness implies a set matching rate of 1 on every subset.
            for s in p1.subsets() {
                prop_assert!((set_matching_rate(&c, s) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn sequences_refine_and_are_deterministic(c in arb_catalog()) {
            let k_max = c.products.len();
            let s1 = build_partition_sequence(&c, k_max, 5).unwrap();
            let s2 = build_partition_sequence(&c, k_max, 6).unwrap();
            prop_assert_eq!(&s1, &s2);
            prop_assert!(s1.is_refinement_chain());
            for k in 1..=k_max {
                prop_assert_eq!(s1.level(k).k(), k);
                prop_assert!(s1.level(k).is_partition_of(&c.products));
            }
        }
    }
}

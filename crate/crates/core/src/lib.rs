//! Logistics service network design over a time-expanded network.
//!
//! The crate models a two-echelon distribution problem — suppliers ship
//! products through warehouses to customers on a cyclic daily schedule — as a
//! mixed-integer program over a time-expanded graph, and solves it either
//! directly or by Benders decomposition.  The decomposition's master problem
//! keeps an *aggregated* image of the flows in which groups of products are
//! folded into "super-products"; the coarser the grouping, the cheaper the
//! master and the weaker its bound.  A two-phase meta-algorithm moves along a
//! nested sequence of groupings during the solve, then finishes on a grouping
//! that is provably equivalent to the original problem.
//!
//! Module map:
//!
//! - [`instance`] — problem data (nodes, arcs, products, families, demands)
//!   with JSON round-trip and validation.
//! - [`timegraph`] — expansion of the static network over the planning
//!   horizon.
//! - [`generator`] — seeded random instance generation.
//! - [`solver`] — linear/mixed-integer model container, solve interface, and
//!   the bundled HiGHS backend.
//! - [`models`] — builders for the full formulation, the Benders subproblem
//!   and masters, cut construction, solution (dis)aggregation, and an
//!   independent feasibility checker.
//! - [`partition`] — product partitions, supplier-overlap matching rates,
//!   2-medoids splitting, and partition sequences.
//! - [`metapbd`] — the two-phase meta-algorithm: adaptive-aggregation Benders
//!   search plus an exact finishing solve.
//! - [`bench`] — experiment runner, comparison indicators, root-relaxation
//!   studies, and report generation.

pub mod bench;
pub mod generator;
pub mod instance;
pub mod metapbd;
pub mod models;
pub mod partition;
pub mod solver;
pub mod timegraph;

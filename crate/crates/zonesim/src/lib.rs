//! zonesim — a microscopic traffic simulator for comparing a loop-based
//! "zonal" road layout against traditional signalized grids.
//!
//! The zonal layout tiles the city into square zones, each bounded by a
//! one-way loop; adjacent loops rotate in opposite directions so the two
//! parallel roadways along every shared boundary flow the same way, and
//! vehicles change loops through zipper-merge sections instead of crossing
//! an intersection. This crate builds both layouts procedurally, simulates
//! seeded Poisson demand on them with a deterministic car-following engine,
//! scores every trip with a longitudinal EV energy model, and sweeps traffic
//! rates to find each layout's capacity.
//!
//! ```
//! use zonesim::topo::{build_zonal_grid, GridSpec};
//! use zonesim::net::{shortest_route, validate_network};
//!
//! let net = build_zonal_grid(&GridSpec::new(2, 2)).unwrap();
//! assert!(validate_network(&net).is_ok());
//! assert!(net.signals.is_empty());
//!
//! // Anchor edges are named after the boundary they run along.
//! let route = shortest_route(&net, "b:h:01:00:e", "b:v:01:01:s").unwrap();
//! assert!(route.total_length > 0.0);
//! ```
//!
//! The `book/` directory of the repository walks through each subsystem;
//! its code snippets mirror the doc-tests in these modules.

pub mod demand;
pub mod energy;
pub mod engine;
pub mod geom;
pub mod harness;
pub mod metrics;
pub mod net;
pub mod topo;

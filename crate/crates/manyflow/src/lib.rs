//! Many-task computing engine.
//!
//! `manyflow` composes ordinary external programs into directed graphs of
//! file-mediated tasks. A small implicitly parallel scripting language
//! (`.mf` files) declares apps, files, and loops; the engine instantiates a
//! single-assignment dataflow graph and drives it to completion on either a
//! real local process pool or a deterministic discrete-event cluster
//! simulation. Task dispatch can run through one central coordinator or be
//! sharded across independent engines that exchange future-set
//! notifications. Artifacts move between nodes through pluggable staging
//! backends: a shared filesystem, a consistent-hash in-memory store, or a
//! striped chunk store, with collective transfer planning (broadcast,
//! scatter, gather) layered on top.
//!
//! The crate is organized along those seams:
//!
//! - [`dsl`] — lexing, parsing, type checking, lowering of `.mf` scripts
//! - [`dataflow`] — futures, task specs, graph instantiation and readiness
//! - [`dispatch`] — worker pools, central/sharded dispatch, the event log
//! - [`datastore`] — artifact refs, hash-ring placement, transfer planning
//! - [`simcluster`] — the simulated cluster and the local process executor
//! - [`cli`] — the `manyflow` command-line front end

pub mod cli;
pub mod dataflow;
pub mod datastore;
pub mod dispatch;
pub mod dsl;
pub mod hash;
pub mod simcluster;
pub mod stubapps;

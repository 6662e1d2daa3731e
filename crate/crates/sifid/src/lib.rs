//! File formats, the `sifid` command-line pipeline and the rating service,
//! on top of the pure computations in `sifid-core`.

pub mod bundle;
pub mod cli;
pub mod config;
pub mod distort;
pub mod formats;
pub mod io;
pub mod pipeline;
pub mod service;
pub mod tables;
pub mod train_run;

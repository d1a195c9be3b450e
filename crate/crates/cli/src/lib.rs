//! IO formats, dataset tooling, trainer, and reporting for the cediff
//! contrast-enhanced MRI synthesis model. The algorithms themselves live in
//! `cediff-core`; this crate adds everything that needs a filesystem.

pub mod checkpoint;
pub mod dataset;
pub mod manifest;
pub mod pngio;
pub mod report;
pub mod tensorio;
pub mod trainer;

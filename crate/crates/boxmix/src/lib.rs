//! File formats, run manifests and the `boxmix` command line on top of
//! `boxmix-core`.

pub mod cli;
pub mod format;
pub mod json;
pub mod manifest;

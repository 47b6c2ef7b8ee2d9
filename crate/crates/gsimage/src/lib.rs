//! File formats, command-line tools and evaluation harness built on
//! [`gsimage_core`].

pub mod cli;
pub mod cloudfile;
pub mod io;
pub mod manifest;
pub mod report;
pub mod timing;

pub use cloudfile::CloudFile;
pub use manifest::RunManifest;
pub use report::ResultRow;

//! Reference corpus, execution shim and soundness oracles used to exercise
//! the toolkit end to end.

pub mod corpus;
pub mod oracle;
pub mod shim;
pub mod straightline;

use std::path::PathBuf;

/// Directory holding the benchmark fixtures.
pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

//! Plain (non-hierarchical) visual state-space model.
//!
//! Images are cut into patch tokens on a fixed grid, pass through a stack of
//! identical gated selective-scan blocks that scan the grid along four
//! continuous snake paths, and are pooled into a linear classifier.

pub mod analysis;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod io;
pub mod model;
pub mod scan_geometry;
pub mod selective_scan;
pub mod tensor;

pub use error::{Error, Result};
pub use grid::TokenGrid;
pub use scan_geometry::{Direction, PathSet, ScanPath};
pub use selective_scan::{ScanInputs, SsmCore};
pub use tensor::NdArray;

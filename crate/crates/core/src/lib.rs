//! Multi-clue label assignment for small-object detection, plus the
//! category-aware memory and feature enhancement kernels that go with it.

pub mod archive;
pub mod assign;
pub mod enhance;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod ingest;
pub mod linalg;
pub mod memory;
pub mod report;
pub mod scene;
pub mod synth;

pub use assign::{AssignConfig, Assignment, AssignerKind, AssignerSettings, BetaMode, Verdict};
pub use error::{Error, Result};
pub use geometry::{BBox, Point};
pub use linalg::Matrix;
pub use memory::{CategoryMemory, FeatureBatch};
pub use scene::Scene;
pub use synth::{SizeBucket, SynthConfig};

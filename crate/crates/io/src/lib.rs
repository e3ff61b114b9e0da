//! File formats and experiment plumbing around `mcpa-core`: versioned JSON
//! problem and pose files, CSV outputs, COLMAP text import, and the
//! synthetic benchmark harness.

pub mod bench;
pub mod colmap;
pub mod error;
pub mod json;
pub mod output;
pub mod problem;

pub use error::{IoError, IoResult};
pub use problem::{read_poses, read_problem, read_rig, write_poses, write_problem, LoadedProblem};

//! Acyclic single-statement control-flow graphs of UDFs, their path
//! conditions, and structural validation.

mod build;
mod graph;
mod paths;
mod validate;

pub use build::build_udf_graph;
pub use graph::*;
pub use paths::{
    count_paths, enumerate_paths, enumerate_paths_capped, PathCondition, PathConjunct, PathExplosion,
    DEFAULT_PATH_CAP,
};
pub use validate::{validate_graph, Violation};

//! Learned runtime cost estimation for SQL query plans that invoke scalar UDFs.

pub mod udfscript;
pub mod cfg;
pub mod datastore;
pub mod cardest;
pub mod plangraph;
pub mod model;
pub mod advisor;
pub mod benchgen;
pub mod harness;

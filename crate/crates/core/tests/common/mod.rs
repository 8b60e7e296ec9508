//! Oracles shared by the property tests and the acceptance run.
#![allow(dead_code)]

pub mod grad;
pub mod graphs;
pub mod seq;
pub mod text;

//! Finite Bell-scenario toolkit: probability tables for behaviors and
//! hidden-variable models, checkers for locality-type conditions,
//! local-polytope membership, one-way decompositions, and the closed-form
//! classical two-particle system with a non-unique pause time.

#![allow(clippy::needless_range_loop)]

pub mod corpus;
pub mod dynamics;
pub mod error;
pub mod feasibility;
pub mod io;
pub mod probmodel;
pub mod properties;
pub mod scenarios;

pub use error::{Error, Result};
pub use probmodel::{
    condition, Behavior, HiddenVariableModel, JointDistribution, LabelPermutation, Property,
    PropertyReport, ScenarioShape, Tolerances, Witness,
};
pub use properties::RelabelMap;

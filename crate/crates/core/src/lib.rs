//! Takagi-Sugeno-Kang fuzzy systems and their functionally equivalent forms.
//!
//! The hub type is [`TskModel`]. Around it sit normalized RBF networks
//! ([`rbfn`]), softmax-gated mixtures of experts ([`moe`]), crisp and fuzzy
//! regression trees ([`cart`]) and stacking ensembles ([`stacking`]), each
//! with exact converters where an equivalence holds. [`anfis`] trains TSK
//! models with alternating least squares and gradient descent, and
//! [`verify`] runs the randomized equivalence and gradient checks.

pub mod anfis;
pub mod cart;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod json;
pub mod linalg;
pub mod model;
pub mod moe;
pub mod rbfn;
pub mod rng;
pub mod stacking;
pub mod train;
pub mod tsk;
pub mod verify;

pub use data::Dataset;
pub use error::{Error, Result, Violation};
pub use tsk::{
    mse, Aggregation, Antecedent, Clause, Consequent, MembershipFunction, Rule, TskModel,
};

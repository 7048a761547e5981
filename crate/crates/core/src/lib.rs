//! Generalized additive models whose smooth terms are small neural networks,
//! fitted by backfitting inside a local scoring loop.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backfit;
pub mod data;
pub mod error;
pub mod family;
pub mod formula;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scoring;
pub mod simulation;

pub use data::Dataset;
pub use error::{GannError, Result};
pub use family::{Family, FamilyKind};
pub use formula::{parse_formula, Formula, Term, TermKind};
pub use model::{
    fit, load_model, save_model, write_partial_effects_csv, FitConfig, FittedModel, PartialEffect, PredictType,
    Prediction, TrainingHistory,
};
pub use nn::{Activation, Initializer, SubNetwork};
pub use simulation::{generate_binomial_fixture, generate_scenario, Scenario, ScenarioSpec};

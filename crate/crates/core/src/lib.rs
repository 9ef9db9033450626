//! Estimation of a driven qubit's state between detected photons when a second,
//! diffusive channel goes unrecorded: filtered, smoothed, most-likely and weak-value
//! estimators, together with the costs they minimize.
//!
//! Every numerical routine is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.

// `!(x > 0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cdj;
pub mod classical;
pub mod costs;
pub mod error;
pub mod fokker_planck;
pub mod lindblad;
pub mod montecarlo;
pub mod operators;
pub mod pipeline;
pub mod real;
pub mod retrofilter;
pub mod trajectory;
pub mod types;
pub mod weak_value;

pub use error::{Error, Result};
pub use real::Real;

pub type Params = types::Params<f64>;
pub type BlochYZ = types::BlochYZ<f64>;
pub type PureAngle = types::PureAngle<f64>;
pub type Effect = types::Effect<f64>;
pub type UnknownRecord = types::UnknownRecord<f64>;
pub type ThetaPdf = fokker_planck::ThetaPdf<f64>;
pub type EffectTable = retrofilter::EffectTable<f64>;
pub type CdjSolution = cdj::CdjSolution<f64>;
pub type CdjSearch = cdj::CdjSearch<f64>;
pub type CostReport = costs::CostReport<f64>;
pub type BlockRun = pipeline::BlockRun<f64>;
pub type JumpAverage = pipeline::JumpAverage<f64>;
pub type Quadrature = pipeline::Quadrature<f64>;

//! Expected costs of estimates under the past-future distribution, and inversion of
//! pure-state paths into the records that would drive them.

use crate::cdj::path_log_likelihood;
use crate::error::{Error, Result};
use crate::fokker_planck::{q1_smoothed_state, ThetaPdf};
use crate::real::{angle_diff, Real};
use crate::types::{trace_product, BlochYZ, Effect, Params, PureAngle, UnknownRecord};
use crate::weak_value::q8_swv_state;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Trace square deviation from the true state, averaged over the smoothed density:
/// ½(1 + R²) − r·r_S.
pub fn cost_c1<T: Real>(estimate: &BlochYZ<T>, pdf: &ThetaPdf<T>) -> T {
    cost_c1_from_smoothed(estimate, &q1_smoothed_state(pdf))
}

pub fn cost_c1_from_smoothed<T: Real>(estimate: &BlochYZ<T>, smoothed: &BlochYZ<T>) -> T {
    let r2 = estimate.y * estimate.y + estimate.z * estimate.z;
    T::lit(0.5) * (T::one() + r2) - (estimate.y * smoothed.y + estimate.z * smoothed.z)
}

/// Negative fidelity with the true state, −Tr(ρ ρ_S).
pub fn cost_c2<T: Real>(estimate: &BlochYZ<T>, smoothed: &BlochYZ<T>) -> T {
    -trace_product(estimate, smoothed)
}

/// Negative equality with the true state: minus the density (per radian) at the
/// estimate's angle, read off the interpolant that also refines the mode.
pub fn cost_c3<T: Real>(estimate: PureAngle<T>, pdf: &ThetaPdf<T>) -> T {
    -pdf.interpolate_quadratic(estimate.theta())
}

/// As [`cost_c3`] for a Bloch pair, rejecting mixed or indefinite estimates.
pub fn cost_c3_state<T: Real>(estimate: &BlochYZ<T>, pdf: &ThetaPdf<T>) -> Result<T> {
    let r = estimate.radius();
    if (r - T::one()).abs() > T::lit(1e-6) {
        return Err(Error::NotPure { radius: r.to_f64_lossy() });
    }
    Ok(cost_c3(estimate.to_pure(), pdf))
}

/// Log-likelihood ratio of the most-likely record to `record`.
pub fn cost_c5<T: Real>(record: &UnknownRecord<T>, optimum: &UnknownRecord<T>, params: &Params<T>, block: T) -> Result<T> {
    Ok(path_log_likelihood(optimum, params, block)? - path_log_likelihood(record, params, block)?)
}

/// Square deviation from the local record with the variance dropped: u² − 2u⟨U⟩.
/// The same function serves both record costs.
#[inline]
pub fn cost_c6_c7<T: Real>(u: T, mean: T) -> T {
    u * u - T::lit(2.0) * u * mean
}

/// Square deviation of Pauli expectations from their weak values:
/// Σ_j (v_j² − 2 v_j w_j) over j ∈ {y, z}.
pub fn cost_c8<T: Real>(estimate: &BlochYZ<T>, filtered: &BlochYZ<T>, effect: &Effect<T>) -> Result<T> {
    let w = q8_swv_state(filtered, effect)?;
    Ok(cost_c8_from_swv(estimate, &w))
}

#[inline]
pub fn cost_c8_from_swv<T: Real>(estimate: &BlochYZ<T>, swv: &BlochYZ<T>) -> T {
    let two = T::lit(2.0);
    estimate.y * estimate.y - two * estimate.y * swv.y + estimate.z * estimate.z - two * estimate.z * swv.z
}

/// A record recovered from a state path, with the entries that had to be clipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvertedRecord<T> {
    pub record: UnknownRecord<T>,
    pub flagged: Vec<usize>,
}

/// Recovers u_k from θ_{k±1} by a centered difference of the pure-state equation.
/// The first entry (θ₀ = π, singular) is set to zero and flagged.
pub fn invert_record<T: Real>(states: &[PureAngle<T>], params: &Params<T>, dt: T, u_max: T) -> Result<InvertedRecord<T>> {
    if params.gamma_u <= T::zero() {
        return Err(Error::InvalidParams("record inversion needs gamma_u > 0".into()));
    }
    if states.len() < 2 {
        return Err(Error::LengthMismatch { expected: 2, got: states.len() });
    }
    let n = states.len() - 1;
    let g = T::lit(0.5) * params.gamma();
    let sg = params.sqrt_gamma_u();
    let mut values = Vec::with_capacity(n);
    let mut flagged = vec![0];
    values.push(T::zero());
    for k in 1..n {
        let th = states[k].theta();
        let rate = angle_diff(states[k + 1].theta(), states[k - 1].theta()) / (T::lit(2.0) * dt);
        let (s, c) = th.sin_cos();
        let num = -rate - params.omega + g * s;
        let den = sg * (T::one() + c);
        let mut u = if (T::one() + c).abs() < T::lit(1e-6) { u_max * num.signum() } else { num / den };
        if (T::one() + c).abs() < T::lit(1e-6) || u.abs() > u_max {
            u = u.max(-u_max).min(u_max);
            flagged.push(k);
        }
        values.push(u);
    }
    Ok(InvertedRecord { record: UnknownRecord { values, dt, t0: T::zero() }, flagged })
}

/// Estimators compared throughout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorId {
    Filtered,
    Q1,
    Q2,
    Q3,
    Q4,
    Q5,
    Q6,
    Q7,
    Q8,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 9] = [
        EstimatorId::Filtered,
        EstimatorId::Q1,
        EstimatorId::Q2,
        EstimatorId::Q3,
        EstimatorId::Q4,
        EstimatorId::Q5,
        EstimatorId::Q6,
        EstimatorId::Q7,
        EstimatorId::Q8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorId::Filtered => "filtered",
            EstimatorId::Q1 => "q1",
            EstimatorId::Q2 => "q2",
            EstimatorId::Q3 => "q3",
            EstimatorId::Q4 => "q4",
            EstimatorId::Q5 => "q5",
            EstimatorId::Q6 => "q6",
            EstimatorId::Q7 => "q7",
            EstimatorId::Q8 => "q8",
        }
    }

    /// Whether the estimate is always a pure state.
    pub fn is_pure(self) -> bool {
        matches!(self, EstimatorId::Q2 | EstimatorId::Q3 | EstimatorId::Q4 | EstimatorId::Q5 | EstimatorId::Q6 | EstimatorId::Q7)
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EstimatorId::ALL
            .into_iter()
            .find(|e| e.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidParams(format!("unknown estimator '{s}'")))
    }
}

/// Cost functions; the two record costs coincide and share one id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostId {
    C1,
    C2,
    C3,
    C5,
    C67,
    C8,
}

impl CostId {
    pub fn name(self) -> &'static str {
        match self {
            CostId::C1 => "c1",
            CostId::C2 => "c2",
            CostId::C3 => "c3",
            CostId::C5 => "c5",
            CostId::C67 => "c6_c7",
            CostId::C8 => "c8",
        }
    }

    /// The estimator that minimizes this cost.
    pub fn optimal_estimator(self) -> EstimatorId {
        match self {
            CostId::C1 => EstimatorId::Q1,
            CostId::C2 => EstimatorId::Q2,
            CostId::C3 => EstimatorId::Q3,
            CostId::C5 => EstimatorId::Q5,
            CostId::C67 => EstimatorId::Q6,
            CostId::C8 => EstimatorId::Q8,
        }
    }
}

impl fmt::Display for CostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CostId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c1" => Ok(CostId::C1),
            "c2" => Ok(CostId::C2),
            "c3" => Ok(CostId::C3),
            "c5" => Ok(CostId::C5),
            "c6" | "c7" | "c6_c7" | "c67" => Ok(CostId::C67),
            "c8" => Ok(CostId::C8),
            _ => Err(Error::InvalidParams(format!("unknown cost '{s}'"))),
        }
    }
}

/// Costs of one estimator over a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport<T> {
    pub estimator: EstimatorId,
    /// Cost name → values on `times`.
    pub per_time: BTreeMap<String, Vec<T>>,
    pub times: Vec<T>,
    pub jump_averaged: BTreeMap<String, T>,
    pub flags: Vec<String>,
}

impl<T: Real> CostReport<T> {
    pub fn new(estimator: EstimatorId, times: Vec<T>) -> Self {
        Self { estimator, per_time: BTreeMap::new(), times, jump_averaged: BTreeMap::new(), flags: Vec::new() }
    }
}

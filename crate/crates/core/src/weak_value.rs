//! Weak values of the unobserved homodyne channel, the local-record estimators and
//! the smoothed weak-value state.

use crate::error::{Error, Result};
use crate::operators::{hamiltonian, observed_coupling, unobserved_coupling, Mat2};
use crate::real::Real;
use crate::retrofilter::EffectTable;
use crate::trajectory::{theta_rate, FilteredTrajectory};
use crate::types::{BlochYZ, Effect, Params, PureAngle, StateKind, UnknownRecord};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

/// Default clip on |u*| for the local-record estimate.
pub const DEFAULT_U_MAX: f64 = 1e3;

/// 2 Re Tr(E c ρ) / Tr(E ρ): the postselected mean readout of a weak probe coupled
/// through `c`.
pub fn generalized_weak_value<T: Real>(rho: &Mat2<T>, effect: &Effect<T>, c: &Mat2<T>) -> Result<T> {
    let e = Mat2::from_effect(effect);
    let den = (e * *rho).trace().re;
    if !(den > T::zero()) {
        return Err(Error::ZeroWeight(format!("Tr(E rho) = {}", den.to_f64_lossy())));
    }
    Ok(T::lit(2.0) * (e * *c * *rho).trace().re / den)
}

/// Mean homodyne readout Tr(E c ρ + ρ c† E)/Tr(E ρ) given the filtered state and effect.
pub fn local_mean<T: Real>(filtered: &BlochYZ<T>, effect: &Effect<T>, params: &Params<T>) -> Result<T> {
    generalized_weak_value(&Mat2::from_bloch(filtered), effect, &unobserved_coupling(params.gamma_u))
}

/// Distribution of the next homodyne result given the past (filtered state) and the
/// future (effect), over one step dt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalRecordPdf<T> {
    /// Weak-value mean m.
    pub mean: T,
    pub dt: T,
    /// Tr(E M_u ρ M_u†) = q0 + q1 u + q2 u² for the full one-step measurement operator.
    quad: [T; 3],
}

impl<T: Real> LocalRecordPdf<T> {
    fn gauss(&self, u: T) -> T {
        (self.dt / T::TAU()).sqrt() * (-T::lit(0.5) * u * u * self.dt).exp()
    }

    /// First-order form ℘_ost(u)(1 + u m dt).
    pub fn first_order_density(&self, u: T) -> T {
        self.gauss(u) * (T::one() + u * self.mean * self.dt)
    }

    /// ℘_ost(u)·Tr(E M_u ρ M_u†), normalized over u.
    pub fn operator_density(&self, u: T) -> T {
        let [a, b, c] = self.quad;
        self.gauss(u) * (a + b * u + c * u * u) / (a + c / self.dt)
    }

    /// Exact mean of the operator density.
    pub fn operator_mean(&self) -> T {
        let [a, b, c] = self.quad;
        (b / self.dt) / (a + c / self.dt)
    }

    /// Mode of the operator density, Newton from the weak value.
    pub fn operator_mode(&self) -> T {
        let [a, b, c] = self.quad;
        let dt = self.dt;
        // d/du [e^{−u²dt/2}(a + bu + cu²)] ∝ −u dt (a + bu + cu²) + b + 2cu.
        let f = |u: T| -u * dt * (a + b * u + c * u * u) + b + T::lit(2.0) * c * u;
        let df = |u: T| -dt * (a + T::lit(2.0) * b * u + T::lit(3.0) * c * u * u) + T::lit(2.0) * c;
        let mut u = self.mean;
        for _ in 0..100 {
            let step = f(u) / df(u);
            u -= step;
            if step.abs() <= T::epsilon() * (T::one() + u.abs()) {
                break;
            }
        }
        u
    }
}

/// One-step measurement operator of the unobserved channel with the drive and the
/// no-click evolution of the observed channel included.
fn measurement_operator<T: Real>(u: T, dt: T, params: &Params<T>) -> Mat2<T> {
    let co = observed_coupling(params.gamma_o);
    let cu = unobserved_coupling(params.gamma_u);
    let h = hamiltonian(params.omega);
    let half = T::lit(0.5);
    let minus_i = Complex::new(T::zero(), -T::one());
    Mat2::identity() + h.scale_c(minus_i).scale(dt) - (co.dagger() * co).scale(half * dt) - (cu.dagger() * cu).scale(half * dt)
        + cu.scale(u * dt)
        + (cu * cu).scale(half * (u * u * dt * dt - dt))
}

pub fn local_record_pdf<T: Real>(filtered: &BlochYZ<T>, effect: &Effect<T>, params: &Params<T>, dt: T) -> Result<LocalRecordPdf<T>> {
    let mean = local_mean(filtered, effect, params)?;
    let rho = Mat2::from_bloch(filtered);
    let e = Mat2::from_effect(effect);
    let at = |u: T| {
        let m = measurement_operator(u, dt, params);
        (e * m * rho * m.dagger()).trace().re
    };
    // Exact quadratic through three nodes.
    let (fm, f0, fp) = (at(-T::one()), at(T::zero()), at(T::one()));
    let half = T::lit(0.5);
    let quad = [f0, half * (fp - fm), half * (fp + fm) - f0];
    if !(quad[0] > T::zero()) {
        return Err(Error::ZeroWeight("effect and filtered state do not overlap".into()));
    }
    Ok(LocalRecordPdf { mean, dt, quad })
}

/// Smoothed weak-value operator (Eρ + ρE)/Tr(Eρ + ρE), as a Bloch pair with no
/// positivity constraint.
pub fn q8_swv_state<T: Real>(filtered: &BlochYZ<T>, effect: &Effect<T>) -> Result<BlochYZ<T>> {
    let den = effect.overlap_state(filtered);
    if !(den.abs() > T::zero()) || !den.is_finite() {
        return Err(Error::ZeroWeight("Tr(E rho) vanishes".into()));
    }
    let y = (effect.alpha * filtered.y + effect.beta) / den;
    let z = (effect.alpha * filtered.z + effect.zeta) / den;
    Ok(BlochYZ { y, z, kind: StateKind::Indefinite })
}

/// Local-record estimate of the unobserved record and the pure-state path it drives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalRecordPath<T> {
    pub record: UnknownRecord<T>,
    pub states: Vec<PureAngle<T>>,
    /// Step indices where |u*| hit the clip.
    pub clipped: Vec<usize>,
}

/// Integrates θ from the ground state with the weak-value record u*_k evaluated from
/// the filtered state and the effect at each grid time.
pub fn q67_record_and_state<T: Real>(
    params: &Params<T>,
    filtered: &FilteredTrajectory<T>,
    effects: &EffectTable<T>,
    u_max: T,
) -> Result<LocalRecordPath<T>> {
    let steps = effects.len() - 1;
    if filtered.states.len() < steps + 1 {
        return Err(Error::LengthMismatch { expected: steps + 1, got: filtered.states.len() });
    }
    let cu = unobserved_coupling(params.gamma_u);
    let mut values = Vec::with_capacity(steps);
    let mut clipped = Vec::new();
    let mut states = Vec::with_capacity(steps + 1);
    let mut th = T::PI();
    states.push(PureAngle::new(th));
    for k in 0..steps {
        let rho = Mat2::from_bloch(&filtered.states[k]);
        let mut u = match generalized_weak_value(&rho, &effects.effects[k], &cu) {
            Ok(u) => u,
            Err(_) => {
                clipped.push(k);
                T::zero()
            }
        };
        if u.abs() > u_max {
            u = u_max * u.signum();
            clipped.push(k);
        }
        values.push(u);
        th += params.dt * theta_rate(th, u, params);
        states.push(PureAngle::new(th));
    }
    Ok(LocalRecordPath { record: UnknownRecord { values, dt: params.dt, t0: T::zero() }, states, clipped })
}

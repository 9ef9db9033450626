//! Backward propagation of the effect that encodes the future observed record of a
//! block: no click on (t, T) and a click at T.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::types::{Effect, Params, PureAngle};
use serde::{Deserialize, Serialize};

/// Effects on the grid t_k = k·dt, k = 0..=K, each stored with a unit max-element and a
/// separate natural-log scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectTable<T> {
    pub effects: Vec<Effect<T>>,
    pub log_scale: Vec<T>,
    pub dt: T,
}

impl<T: Real> EffectTable<T> {
    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    /// The effect at step k with its scale restored.
    pub fn absolute(&self, k: usize) -> Effect<T> {
        self.effects[k].scale(self.log_scale[k].exp())
    }
}

/// d/ds (α, β, ζ) = −½ A (α, β, ζ) in the remaining time s = T − t.
#[inline]
fn backward_rate<T: Real>(v: [T; 3], params: &Params<T>) -> [T; 3] {
    let h = -T::lit(0.5);
    let (go, gu, om) = (params.gamma_o, params.gamma_u, params.omega);
    let two = T::lit(2.0);
    [
        h * (go * v[0] + (go + two * gu) * v[2]),
        h * ((go + gu) * v[1] - two * om * v[2]),
        h * (go * v[0] + two * om * v[1] + (go + two * gu) * v[2]),
    ]
}

fn rk4_backward<T: Real>(v: [T; 3], ds: T, params: &Params<T>) -> [T; 3] {
    let half = T::lit(0.5) * ds;
    let add = |a: [T; 3], k: T, b: [T; 3]| [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2]];
    let k1 = backward_rate(v, params);
    let k2 = backward_rate(add(v, half, k1), params);
    let k3 = backward_rate(add(v, half, k2), params);
    let k4 = backward_rate(add(v, ds, k3), params);
    let two = T::lit(2.0);
    let sixth = ds / T::lit(6.0);
    [
        v[0] + sixth * (k1[0] + two * k2[0] + two * k3[0] + k4[0]),
        v[1] + sixth * (k1[1] + two * k2[1] + two * k3[1] + k4[1]),
        v[2] + sixth * (k1[2] + two * k2[2] + two * k3[2] + k4[2]),
    ]
}

/// Effects indexed by remaining time s_j = j·dt, j = 0..=steps, starting from `last`.
pub fn effects_by_remaining_time<T: Real>(last: Effect<T>, params: &Params<T>, steps: usize) -> Result<EffectTable<T>> {
    let tol = T::lit(1e-12);
    let mut effects = Vec::with_capacity(steps + 1);
    let mut log_scale = Vec::with_capacity(steps + 1);
    let m0 = last.max_abs();
    if !(m0 > T::zero()) {
        return Err(Error::InvalidParams("final effect vanishes".into()));
    }
    let mut v = [last.alpha / m0, last.beta / m0, last.zeta / m0];
    let mut ls = m0.ln();
    for j in 0..=steps {
        let e = Effect::new(v[0], v[1], v[2]);
        if !e.is_positive(tol) {
            return Err(Error::EffectNotPositive {
                t: (T::from_usize_lossy(j) * params.dt).to_f64_lossy(),
                alpha: e.alpha.to_f64_lossy(),
                norm: e.bloch_norm().to_f64_lossy(),
            });
        }
        effects.push(e);
        log_scale.push(ls);
        if j < steps {
            v = rk4_backward(v, params.dt, params);
            let m = v.iter().fold(T::zero(), |acc, x| acc.max(x.abs()));
            if !(m > T::zero()) || !m.is_finite() {
                return Err(Error::Numerical("effect vanished during backward propagation".into()));
            }
            v = [v[0] / m, v[1] / m, v[2] / m];
            ls += m.ln();
        }
    }
    Ok(EffectTable { effects, log_scale, dt: params.dt })
}

/// Retrofiltered effects on t ∈ [0, T] for a block ending in a click at T.
pub fn propagate_effect<T: Real>(params: &Params<T>, block: T) -> Result<EffectTable<T>> {
    let steps = params.steps_for(block);
    let mut table = effects_by_remaining_time(Effect::final_jump(params), params, steps)?;
    table.effects.reverse();
    table.log_scale.reverse();
    Ok(table)
}

/// Tr(E·S(θ)) = α + ζ cosθ + β sinθ.
#[inline]
pub fn effect_overlap<T: Real>(effect: &Effect<T>, theta: PureAngle<T>) -> T {
    let (s, c) = theta.theta().sin_cos();
    effect.alpha + effect.zeta * c + effect.beta * s
}

//! Most-likely unobserved records: Hamiltonian two-point boundary-value problems
//! solved by shooting on the initial conjugate momentum.

use crate::error::{Error, Result};
use crate::real::{wrap_angle, KahanSum, Real};
use crate::retrofilter::EffectTable;
use crate::types::{Effect, Params, PureAngle, UnknownRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Shooting controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CdjOptions<T> {
    /// Scan p₀ over [−p_max, p_max].
    pub p_max: T,
    pub scan_points: usize,
    /// Required |p_τ − ∂θ ln Tr(E S(θ_τ))| at an accepted root.
    pub tol: T,
    /// Roots ending this close to the ground state are discarded.
    pub ground_exclusion: T,
    /// |p| beyond this marks a divergent shot.
    pub divergence: T,
}

impl<T: Real> Default for CdjOptions<T> {
    fn default() -> Self {
        Self { p_max: T::lit(50.0), scan_points: 401, tol: T::lit(1e-8), ground_exclusion: T::lit(1e-3), divergence: T::lit(1e8) }
    }
}

/// A path (θ_t, p_t, u_t) with its log-likelihood score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdjSolution<T> {
    pub thetas: Vec<PureAngle<T>>,
    pub ps: Vec<T>,
    pub us: UnknownRecord<T>,
    /// Log-likelihood up to a record-independent constant; NaN until scored.
    pub score: T,
    /// Final-condition residual; NaN until checked.
    pub residual: T,
    pub p0: T,
    pub divergent: bool,
}

impl<T: Real> CdjSolution<T> {
    pub fn final_theta(&self) -> PureAngle<T> {
        *self.thetas.last().expect("non-empty path")
    }
}

/// Summary of one converged root.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootInfo<T> {
    pub p0: T,
    pub final_theta: T,
    pub score: T,
    pub residual: T,
}

/// Best root plus the census of every converged root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdjSearch<T> {
    pub best: CdjSolution<T>,
    pub roots: Vec<RootInfo<T>>,
    /// Brackets whose refinement failed the residual test.
    pub unconverged: usize,
}

#[inline]
fn closure_u<T: Real>(s: T, c: T, p: T, sg: T) -> T {
    -sg * (p * (T::one() + c) + s)
}

/// Time derivatives of (θ, p) with the record eliminated by stationarity.
#[inline]
fn hamilton_rates<T: Real>(theta: T, p: T, params: &Params<T>) -> (T, T) {
    let (s, c) = theta.sin_cos();
    let g = T::lit(0.5) * params.gamma();
    let sg = params.sqrt_gamma_u();
    let u = closure_u(s, c, p, sg);
    let dtheta = -params.omega + g * s - sg * (T::one() + c) * u;
    let dp = -g * (p * c + s) + sg * u * (c - p * s);
    (dtheta, dp)
}

#[inline]
fn rk4_step<T: Real>(theta: T, p: T, dt: T, params: &Params<T>) -> (T, T) {
    let h = T::lit(0.5) * dt;
    let (a1, b1) = hamilton_rates(theta, p, params);
    let (a2, b2) = hamilton_rates(theta + h * a1, p + h * b1, params);
    let (a3, b3) = hamilton_rates(theta + h * a2, p + h * b2, params);
    let (a4, b4) = hamilton_rates(theta + dt * a3, p + dt * b3, params);
    let two = T::lit(2.0);
    let six = dt / T::lit(6.0);
    (theta + six * (a1 + two * a2 + two * a3 + a4), p + six * (b1 + two * b2 + two * b3 + b4))
}

/// Forward RK4 integration of the closed (θ, p) system over `horizon`, recording the
/// record u_t at the left end of each step.  The returned solution is unscored.
pub fn integrate_hamilton_odes<T: Real>(theta0: PureAngle<T>, p0: T, params: &Params<T>, horizon: T) -> CdjSolution<T> {
    integrate_with_limit(theta0, p0, params, params.steps_for(horizon), T::lit(1e8))
}

fn integrate_with_limit<T: Real>(theta0: PureAngle<T>, p0: T, params: &Params<T>, steps: usize, limit: T) -> CdjSolution<T> {
    let sg = params.sqrt_gamma_u();
    let mut thetas = Vec::with_capacity(steps + 1);
    let mut ps = Vec::with_capacity(steps + 1);
    let mut us = Vec::with_capacity(steps);
    let (mut th, mut p) = (theta0.theta(), p0);
    let mut divergent = false;
    for k in 0..=steps {
        thetas.push(PureAngle::new(th));
        ps.push(p);
        if k == steps {
            break;
        }
        let (s, c) = th.sin_cos();
        us.push(closure_u(s, c, p, sg));
        let (t2, p2) = rk4_step(th, p, params.dt, params);
        if !(p2.abs() <= limit) || !t2.is_finite() {
            divergent = true;
            break;
        }
        th = t2;
        p = p2;
    }
    let us = UnknownRecord { values: us, dt: params.dt, t0: T::zero() };
    CdjSolution { thetas, ps, us, score: T::nan(), residual: T::nan(), p0, divergent }
}

/// Momentum demanded by the terminal effect, ∂θ ln Tr(E S(θ)), as (numerator, denominator).
#[inline]
fn terminal_slope<T: Real>(effect: &Effect<T>, theta: T) -> (T, T) {
    let (s, c) = theta.sin_cos();
    (-effect.zeta * s + effect.beta * c, effect.alpha + effect.zeta * c + effect.beta * s)
}

/// Discrete log-likelihood Σ −dt[½u² + ½γ(1 + cosθ) + u√γ_u sinθ] along a given path,
/// plus ln Tr(E S(θ_end)).
fn score_along<T: Real>(thetas: &[PureAngle<T>], us: &[T], effect: &Effect<T>, params: &Params<T>) -> T {
    let g = T::lit(0.5) * params.gamma();
    let sg = params.sqrt_gamma_u();
    let half = T::lit(0.5);
    let mut acc = KahanSum::new();
    for (th, &u) in thetas.iter().zip(us) {
        let (s, c) = th.theta().sin_cos();
        acc.add(-params.dt * (half * u * u + g * (T::one() + c) + u * sg * s));
    }
    let end = thetas[us.len()].theta();
    let (_, den) = terminal_slope(effect, end);
    acc.value() + den.ln()
}

/// Log-likelihood of an unobserved record for the block ending in a click, with the
/// record-independent constant dropped.  θ follows the Euler form of the pure-state
/// equation from the ground state.
pub fn path_log_likelihood<T: Real>(record: &UnknownRecord<T>, params: &Params<T>, block: T) -> Result<T> {
    let steps = params.steps_for(block);
    if record.len() != steps {
        return Err(Error::LengthMismatch { expected: steps, got: record.len() });
    }
    let g = T::lit(0.5) * params.gamma();
    let sg = params.sqrt_gamma_u();
    let mut th = T::PI();
    let mut thetas = Vec::with_capacity(steps + 1);
    thetas.push(PureAngle::new(th));
    for &u in &record.values {
        let (s, c) = th.sin_cos();
        th += params.dt * (-params.omega + g * s - sg * (T::one() + c) * u);
        thetas.push(PureAngle::new(th));
    }
    let last = Effect::new(T::one(), T::zero(), T::one());
    Ok(score_along(&thetas, &record.values, &last, params))
}

/// Boundary residual p(α + ζc + βs) − (βc − ζs): smooth in p₀ with no poles.
#[inline]
fn bracket_residual<T: Real>(theta: T, p: T, effect: &Effect<T>) -> T {
    let (num, den) = terminal_slope(effect, theta);
    p * den - num
}

/// Scan-and-refine for all horizons in `targets` (step counts) sharing one fan of shots.
fn shoot<T: Real>(
    params: &Params<T>,
    targets: &[(usize, Effect<T>)],
    opts: &CdjOptions<T>,
) -> Vec<Result<CdjSearch<T>>> {
    let n = opts.scan_points.max(2);
    let max_steps = targets.iter().map(|t| t.0).max().unwrap_or(0);
    let p0s: Vec<T> = (0..n)
        .map(|i| -opts.p_max + T::lit(2.0) * opts.p_max * T::from_usize_lossy(i) / T::from_usize_lossy(n - 1))
        .collect();
    // Residual of every shot at every target horizon.
    let fan: Vec<Vec<T>> = p0s
        .par_iter()
        .map(|&p0| {
            let mut out = vec![T::nan(); targets.len()];
            let (mut th, mut p) = (T::PI(), p0);
            let mut next = 0usize;
            let mut order: Vec<usize> = (0..targets.len()).collect();
            order.sort_by_key(|&i| targets[i].0);
            for k in 0..=max_steps {
                while next < order.len() && targets[order[next]].0 == k {
                    let i = order[next];
                    out[i] = bracket_residual(th, p, &targets[i].1);
                    next += 1;
                }
                if k == max_steps {
                    break;
                }
                let (t2, p2) = rk4_step(th, p, params.dt, params);
                if !(p2.abs() <= opts.divergence) || !t2.is_finite() {
                    break;
                }
                th = t2;
                p = p2;
            }
            out
        })
        .collect();

    targets
        .par_iter()
        .enumerate()
        .map(|(ti, (steps, effect))| {
            let mut roots = Vec::new();
            let mut unconverged = 0;
            let mut best: Option<CdjSolution<T>> = None;
            let mut worst_residual = T::zero();
            for i in 0..n - 1 {
                let (ra, rb) = (fan[i][ti], fan[i + 1][ti]);
                if !(ra.is_finite() && rb.is_finite()) || ra.signum() == rb.signum() && ra != T::zero() {
                    continue;
                }
                let p0 = refine(p0s[i], p0s[i + 1], ra, rb, *steps, effect, params, opts);
                let mut sol = integrate_with_limit(PureAngle::ground(), p0, params, *steps, opts.divergence);
                if sol.divergent {
                    unconverged += 1;
                    continue;
                }
                let end = sol.final_theta().theta();
                let (num, den) = terminal_slope(effect, end);
                sol.residual = (*sol.ps.last().unwrap() - num / den).abs();
                if !(sol.residual < opts.tol) {
                    unconverged += 1;
                    worst_residual = worst_residual.max(sol.residual);
                    continue;
                }
                if wrap_angle(end - T::PI()).min(T::TAU() - wrap_angle(end - T::PI())) < opts.ground_exclusion {
                    continue;
                }
                sol.score = score_along(&sol.thetas, &sol.us.values, effect, params);
                roots.push(RootInfo { p0, final_theta: end, score: sol.score, residual: sol.residual });
                if best.as_ref().is_none_or(|b| sol.score > b.score) {
                    best = Some(sol);
                }
            }
            match best {
                Some(best) => Ok(CdjSearch { best, roots, unconverged }),
                None => Err(Error::NoRoots(format!(
                    "horizon {} steps: {unconverged} brackets failed, worst residual {:.3e}",
                    steps,
                    worst_residual.to_f64_lossy()
                ))),
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn refine<T: Real>(
    mut a: T,
    mut b: T,
    mut ra: T,
    mut rb: T,
    steps: usize,
    effect: &Effect<T>,
    params: &Params<T>,
    opts: &CdjOptions<T>,
) -> T {
    if ra == T::zero() {
        return a;
    }
    let eval = |p0: T| -> T {
        let (mut th, mut p) = (T::PI(), p0);
        for _ in 0..steps {
            let (t2, p2) = rk4_step(th, p, params.dt, params);
            if !(p2.abs() <= opts.divergence) {
                return T::nan();
            }
            th = t2;
            p = p2;
        }
        bracket_residual(th, p, effect)
    };
    // Illinois false position, falling back to bisection on non-finite residuals.
    let mut side = 0i8;
    for _ in 0..200 {
        if (b - a).abs() <= T::epsilon() * T::lit(4.0) * (T::one() + a.abs().max(b.abs())) {
            break;
        }
        let mut m = (a * rb - b * ra) / (rb - ra);
        if !(m > a.min(b) && m < a.max(b)) {
            m = T::lit(0.5) * (a + b);
        }
        let mut rm = eval(m);
        if !rm.is_finite() {
            m = T::lit(0.5) * (a + b);
            rm = eval(m);
            if !rm.is_finite() {
                break;
            }
        }
        if rm == T::zero() {
            return m;
        }
        if rm.signum() == ra.signum() {
            a = m;
            ra = rm;
            if side == 1 {
                rb *= T::lit(0.5);
            }
            side = 1;
        } else {
            b = m;
            rb = rm;
            if side == -1 {
                ra *= T::lit(0.5);
            }
            side = -1;
        }
    }
    if ra.abs() < rb.abs() {
        a
    } else {
        b
    }
}

/// Most-likely whole unobserved record for the block: maximizes the joint likelihood
/// with the final click, θ₀ = π.
pub fn solve_q5<T: Real>(params: &Params<T>, block: T) -> Result<CdjSearch<T>> {
    solve_q5_with(params, block, &CdjOptions::default())
}

pub fn solve_q5_with<T: Real>(params: &Params<T>, block: T, opts: &CdjOptions<T>) -> Result<CdjSearch<T>> {
    let last = Effect::new(T::one(), T::zero(), T::one());
    shoot(params, &[(params.steps_for(block), last)], opts).pop().expect("one target")
}

/// For each τ, the end state of the most-likely record on [0, τ] given the effect at τ.
pub fn solve_q4<T: Real>(params: &Params<T>, effects: &EffectTable<T>, taus: &[T]) -> Vec<(T, Result<PureAngle<T>>)> {
    solve_q4_with(params, effects, taus, &CdjOptions::default())
        .into_iter()
        .map(|(t, r)| (t, r.map(|s| s.best.final_theta())))
        .collect()
}

pub fn solve_q4_with<T: Real>(
    params: &Params<T>,
    effects: &EffectTable<T>,
    taus: &[T],
    opts: &CdjOptions<T>,
) -> Vec<(T, Result<CdjSearch<T>>)> {
    let mut targets = Vec::with_capacity(taus.len());
    let mut bad = Vec::new();
    for (i, &tau) in taus.iter().enumerate() {
        let k = params.steps_for(tau);
        if k == 0 || k >= effects.len() {
            bad.push(i);
            targets.push((0, Effect::identity()));
        } else {
            targets.push((k, effects.effects[k]));
        }
    }
    let results = shoot(params, &targets, opts);
    taus.iter()
        .zip(results)
        .enumerate()
        .map(|(i, (&tau, r))| {
            if bad.contains(&i) {
                (tau, Err(Error::InvalidParams(format!("tau {} outside (0, T]", tau.to_f64_lossy()))))
            } else {
                (tau, r)
            }
        })
        .collect()
}

/// τ grid dt_q4, 2·dt_q4, … up to and including the block end.
pub fn q4_taus<T: Real>(block: T, spacing: T) -> Vec<T> {
    let n = (block / spacing).round().to_usize().unwrap_or(0);
    (1..=n).map(|i| T::from_usize_lossy(i) * spacing).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::angle_diff;
    use crate::retrofilter::propagate_effect;
    use crate::trajectory::theta_rate;

    fn params(omega: f64, go: f64, gu: f64, block: f64) -> Params<f64> {
        Params { omega, gamma_o: go, gamma_u: gu, dt: 1e-3, block, theta_grid_n: 1024, seed: 0 }
    }

    #[test]
    fn no_homodyne_gives_zero_record() {
        let p = params(2.0, 1.0, 0.0, 2.0);
        let s = integrate_hamilton_odes(PureAngle::new(1.0), 3.0, &p, 2.0);
        assert!(s.us.values.iter().all(|&u| u == 0.0));
        let q5 = solve_q5(&p, 2.0).unwrap();
        assert!(q5.best.us.values.iter().all(|&u| u == 0.0));
        assert_eq!(path_log_likelihood(&q5.best.us, &p, 2.0).unwrap(), path_log_likelihood(&UnknownRecord::zeros(2000, 1e-3), &p, 2.0).unwrap());
    }

    #[test]
    fn rk4_against_fine_euler() {
        let p = params(0.0, 0.5, 0.5, 1.0);
        let s = integrate_hamilton_odes(PureAngle::new(1.0), 0.0, &p, 1.0);
        let (mut th, mut pp) = (1.0f64, 0.0f64);
        let h = 1e-6;
        for _ in 0..1_000_000 {
            let (a, b) = hamilton_rates(th, pp, &p);
            th += h * a;
            pp += h * b;
        }
        assert!(angle_diff(s.final_theta().theta(), th).abs() < 5e-6);
        assert!((s.ps.last().unwrap() - pp).abs() < 5e-6);
    }

    /// Extremizing the discrete action with the constraint θ_{k+1} = θ_k + dt·f(θ_k, u_k)
    /// gives a one-step-implicit map; it agrees with the continuous equations to O(dt).
    #[test]
    fn discrete_extremum_matches_odes() {
        let p = params(2.0, 0.4, 0.6, 0.5);
        let sg = p.sqrt_gamma_u();
        let g = 0.5 * p.gamma();
        let horizon = 0.5;
        let mut errs = Vec::new();
        for dt in [1e-3, 1e-4] {
            let steps = (horizon / dt) as usize;
            let (mut th, mut pk) = (2.0f64, 0.3f64);
            for _ in 0..steps {
                let (s, c) = th.sin_cos();
                // p_k = p_{k+1}(1 + dt ∂θf) + dt ∂θL with u_k = −√Γ(s + p_{k+1}(1 + c)).
                let mut pn = pk;
                for _ in 0..60 {
                    let u = -sg * (s + pn * (1.0 + c));
                    let dfdth = g * c + sg * s * u;
                    let dldth = g * s - u * sg * c;
                    let f = pn * (1.0 + dt * dfdth) + dt * dldth - pk;
                    let h = 1e-7;
                    let u2 = -sg * (s + (pn + h) * (1.0 + c));
                    let f2 = (pn + h) * (1.0 + dt * (g * c + sg * s * u2)) + dt * (g * s - u2 * sg * c) - pk;
                    pn -= f * h / (f2 - f);
                }
                let u = -sg * (s + pn * (1.0 + c));
                th += dt * theta_rate(th, u, &p);
                pk = pn;
            }
            let pp = p.with_dt(dt);
            let ode = integrate_hamilton_odes(PureAngle::new(2.0), 0.3, &pp, horizon);
            errs.push(angle_diff(ode.final_theta().theta(), th).abs().max((ode.ps.last().unwrap() - pk).abs()));
        }
        assert!(errs[0] < 1e-2 && errs[0] / errs[1] > 5.0, "{errs:?}");
    }

    #[test]
    fn q5_reference_run() {
        let p = params(2.0, 0.5, 0.5, 4.0);
        let q5 = solve_q5(&p, 4.0).unwrap();
        assert!(!q5.roots.is_empty());
        assert!(q5.best.residual < 1e-8);
        assert!(q5.roots.iter().all(|r| r.score <= q5.best.score));
        let th = q5.best.thetas.iter().map(|t| t.theta()).collect::<Vec<_>>();
        assert!(th.windows(2).all(|w| angle_diff(w[1], w[0]).abs() < 0.05));
        let s = path_log_likelihood(&q5.best.us, &p, 4.0).unwrap();
        assert_eq!(s - s, 0.0);
    }

    #[test]
    fn q4_endpoints() {
        let p = params(2.0, 0.5, 0.5, 4.0);
        let eff = propagate_effect(&p, 4.0).unwrap();
        let q5 = solve_q5(&p, 4.0).unwrap();
        let q4 = solve_q4(&p, &eff, &[0.02, 4.0]);
        let end = q4[1].1.as_ref().unwrap();
        assert!(angle_diff(end.theta(), q5.best.final_theta().theta()).abs() < 1e-6);
        let start = q4[0].1.as_ref().unwrap();
        assert!(angle_diff(start.theta(), std::f64::consts::PI).abs() < 0.1);
        let q4 = solve_q4(&p, &eff, &[5.0]);
        assert!(q4[0].1.is_err());
    }

    #[test]
    fn q4_without_homodyne_follows_flow() {
        let p = params(2.0, 1.0, 0.0, 2.0);
        let eff = propagate_effect(&p, 2.0).unwrap();
        let taus = q4_taus(2.0, 0.5);
        let flow = integrate_hamilton_odes(PureAngle::ground(), 0.0, &p, 2.0);
        for (tau, r) in solve_q4(&p, &eff, &taus) {
            let k = p.steps_for(tau);
            assert!(angle_diff(r.unwrap().theta(), flow.thetas[k].theta()).abs() < 1e-9, "tau {tau}");
        }
    }

    #[test]
    fn three_step_likelihood_by_hand() {
        let p = Params { omega: 1.3, gamma_o: 0.3, gamma_u: 0.7, dt: 0.1, block: 0.3, theta_grid_n: 64, seed: 0 };
        let rec_a = UnknownRecord::new(vec![0.5, -1.0, 2.0], 0.1, 0.0).unwrap();
        let rec_b = UnknownRecord::new(vec![0.0, 0.3, -0.2], 0.1, 0.0).unwrap();
        let by_hand = |u: &[f64]| -> f64 {
            let (g, sg) = (0.5, 0.7f64.sqrt());
            let mut th = std::f64::consts::PI;
            let mut prod = 1.0;
            for &uk in u {
                let (s, c) = th.sin_cos();
                prod *= (-0.1 * (0.5 * uk * uk + g * (1.0 + c) + uk * sg * s)).exp();
                th += 0.1 * (-1.3 + g * s - sg * (1.0 + c) * uk);
            }
            (prod * (1.0 + th.cos())).ln()
        };
        let d = path_log_likelihood(&rec_a, &p, 0.3).unwrap() - path_log_likelihood(&rec_b, &p, 0.3).unwrap();
        assert!((d - (by_hand(&rec_a.values) - by_hand(&rec_b.values))).abs() < 1e-12);
        assert!(path_log_likelihood(&rec_a, &p, 0.4).is_err());
    }
}

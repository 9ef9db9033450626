//! Time steppers for the monitored qubit: the pure-state θ/λ map, the normalized and
//! linear stochastic master equations, the filter, ostensible sampling and the
//! waiting-time distribution.

use crate::error::{Error, Result};
use crate::real::{wrap_angle, Real};
use crate::types::{BlochYZ, Params, PureAngle, StateKind, UnknownRecord};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Unnormalized no-jump state ½(a·1 + y σy + z σz).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearState<T> {
    pub a: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> LinearState<T> {
    pub fn from_state(rho: &BlochYZ<T>, norm: T) -> Self {
        Self { a: norm, y: rho.y * norm, z: rho.z * norm }
    }

    pub fn normalized(&self) -> BlochYZ<T> {
        BlochYZ { y: self.y / self.a, z: self.z / self.a, kind: StateKind::State }
    }

    fn axpy(&self, k: T, d: &Self) -> Self {
        Self { a: self.a + k * d.a, y: self.y + k * d.y, z: self.z + k * d.z }
    }
}

/// Drift of the linear no-jump equation (observed channel conditioned on no click,
/// unobserved channel averaged).
#[inline]
pub fn no_jump_drift<T: Real>(s: &LinearState<T>, params: &Params<T>) -> LinearState<T> {
    let h = T::lit(0.5);
    let (go, gu, om) = (params.gamma_o, params.gamma_u, params.omega);
    let az = s.a + s.z;
    LinearState {
        a: -h * go * az,
        y: -h * (go + gu) * s.y - om * s.z,
        z: -(gu + h * go) * az + om * s.y,
    }
}

/// One classical RK4 step of the linear no-jump equation.
pub fn rk4_no_jump<T: Real>(s: &LinearState<T>, dt: T, params: &Params<T>) -> LinearState<T> {
    let h = T::lit(0.5) * dt;
    let k1 = no_jump_drift(s, params);
    let k2 = no_jump_drift(&s.axpy(h, &k1), params);
    let k3 = no_jump_drift(&s.axpy(h, &k2), params);
    let k4 = no_jump_drift(&s.axpy(dt, &k3), params);
    let six = dt / T::lit(6.0);
    let two = T::lit(2.0);
    LinearState {
        a: s.a + six * (k1.a + two * k2.a + two * k3.a + k4.a),
        y: s.y + six * (k1.y + two * k2.y + two * k3.y + k4.y),
        z: s.z + six * (k1.z + two * k2.z + two * k3.z + k4.z),
    }
}

/// Discrete pure-state update for the Bloch angle and the norm, given the homodyne
/// result `u` over a step `dt`, keeping the u²dt² terms of the measurement operator.
pub fn diffusive_measurement_update<T: Real>(
    theta: PureAngle<T>,
    lambda: T,
    u: T,
    dt: T,
    params: &Params<T>,
) -> (PureAngle<T>, T) {
    let h = T::lit(0.5);
    let (s, c) = theta.theta().sin_cos();
    let g = params.gamma_u;
    let sg = params.sqrt_gamma_u();
    let udt2 = u * u * dt * dt;
    let th = theta.theta() - dt * params.omega + dt * h * params.gamma_o * s + (dt - udt2) * h * g * s
        - udt2 * h * g * c * s
        - u * dt * sg * (c + T::one());
    let factor = T::one() - dt * h * params.gamma_o * (c + T::one()) - u * dt * sg * s - (dt - udt2) * h * g * (T::one() + c);
    (PureAngle::new(th), lambda * factor)
}

/// Rate of θ driven by a smooth record: θ̇ = −Ω + ½(γ_o + γ_u) sinθ − √γ_u (1 + cosθ) u.
#[inline]
pub fn theta_rate<T: Real>(theta: T, u: T, params: &Params<T>) -> T {
    let (s, c) = theta.sin_cos();
    -params.omega + T::lit(0.5) * params.gamma() * s - params.sqrt_gamma_u() * (T::one() + c) * u
}

/// Euler–Maruyama step of the normalized Itô equation for the true state.  The O(dt)
/// radius defect of the Euler step is removed by projecting back onto the unit circle.
pub fn step_true_sme<T: Real>(state: &BlochYZ<T>, u: T, dt: T, params: &Params<T>) -> Result<BlochYZ<T>> {
    let r = state.radius();
    if (r - T::one()).abs() > T::lit(1e-9) {
        return Err(Error::NotPure { radius: r.to_f64_lossy() });
    }
    let h = T::lit(0.5);
    let (y, z) = (state.y, state.z);
    let (go, gu, om) = (params.gamma_o, params.gamma_u, params.omega);
    let sg = params.sqrt_gamma_u();
    let innovation = (u + sg * y) * dt;
    let dy = (-om * z - h * gu * y + h * go * y * z) * dt - innovation * sg * (T::one() + z - y * y);
    let dz = (om * y - gu * (T::one() + z) - h * go * (T::one() - z * z)) * dt + innovation * sg * y * (T::one() + z);
    Ok(PureAngle::new((y + dy).atan2(z + dz)).to_bloch())
}

/// Euler–Maruyama step of the linear (ostensible) equation for the unnormalized true
/// state.  Returns the normalized pure state and the new trace.
pub fn step_unnormalized_sme<T: Real>(state: &BlochYZ<T>, lambda: T, u: T, dt: T, params: &Params<T>) -> Result<(BlochYZ<T>, T)> {
    if !(lambda > T::zero()) {
        return Err(Error::InvalidParams("trace weight must be positive".into()));
    }
    let s = LinearState::from_state(state, lambda);
    let d = no_jump_drift(&s, params);
    let sg = params.sqrt_gamma_u();
    let udt = u * dt;
    // The drift above carries the averaged unobserved dissipator; the linear
    // homodyne term is added separately.
    let next = LinearState {
        a: s.a + d.a * dt - sg * s.y * udt,
        y: s.y + d.y * dt - sg * (s.a + s.z) * udt,
        z: s.z + d.z * dt + sg * s.y * udt,
    };
    if !(next.a > T::zero()) {
        return Err(Error::Numerical("trace of the unnormalized state left (0, ∞)".into()));
    }
    let dir = next.normalized();
    let pure = if dir.radius() > T::zero() { dir.to_pure().to_bloch() } else { BlochYZ::ground() };
    Ok((pure, next.a))
}

/// Euler step of the normalized filter (no click, homodyne record averaged out).
pub fn step_filtered<T: Real>(state: &BlochYZ<T>, dt: T, params: &Params<T>) -> BlochYZ<T> {
    let h = T::lit(0.5);
    let (y, z) = (state.y, state.z);
    let (go, gu, om) = (params.gamma_o, params.gamma_u, params.omega);
    let dy = (-om * z - h * gu * y + h * go * y * z) * dt;
    let dz = (om * y - gu * (T::one() + z) - h * go * (T::one() - z * z)) * dt;
    BlochYZ { y: y + dy, z: z + dz, kind: StateKind::State }
}

/// Filtered states on the run grid and the no-click probability Tr ρ̃ up to each time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilteredTrajectory<T> {
    pub states: Vec<BlochYZ<T>>,
    pub norm_trace: Vec<T>,
    pub dt: T,
}

/// Filter from the ground state over `steps` steps.  The linear equation is integrated
/// with RK4 and normalized afterwards, so the result carries no O(dt) bias.
pub fn filtered_trajectory<T: Real>(params: &Params<T>, steps: usize) -> FilteredTrajectory<T> {
    let mut s = LinearState::from_state(&BlochYZ::ground(), T::one());
    let mut states = Vec::with_capacity(steps + 1);
    let mut norm_trace = Vec::with_capacity(steps + 1);
    let mut log_norm = T::zero();
    for k in 0..=steps {
        let rho = s.normalized();
        states.push(rho);
        norm_trace.push(s.a * log_norm.exp());
        if k < steps {
            s = rk4_no_jump(&s, params.dt, params);
            // Keep the working copy O(1); the discarded scale goes to the log.
            log_norm += s.a.ln();
            let a = s.a;
            s = LinearState { a: T::one(), y: s.y / a, z: s.z / a };
        }
    }
    FilteredTrajectory { states, norm_trace, dt: params.dt }
}

/// A pure-state trajectory with its ostensible weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueTrajectory<T> {
    pub thetas: Vec<PureAngle<T>>,
    /// Weight mantissas; the actual weight is `lambdas[k] * exp(log_scale[k])`.
    pub lambdas: Vec<T>,
    pub log_scale: Vec<T>,
    pub record: UnknownRecord<T>,
    pub dt: T,
}

impl<T: Real> TrueTrajectory<T> {
    pub fn weight(&self, k: usize) -> T {
        self.lambdas[k] * self.log_scale[k].exp()
    }
}

const RESCALE_BELOW: f64 = 1e-200;

/// Draws one record u_t ~ N(0, 1/dt) i.i.d. (the ostensible measure) and integrates the
/// θ/λ map from the ground state over the block.
pub fn sample_ostensible_trajectory<T: Real, R: Rng>(params: &Params<T>, rng: &mut R) -> TrueTrajectory<T> {
    let steps = params.steps();
    let sd = params.dt.recip().sqrt();
    let mut thetas = Vec::with_capacity(steps + 1);
    let mut lambdas = Vec::with_capacity(steps + 1);
    let mut log_scale = Vec::with_capacity(steps + 1);
    let mut us = Vec::with_capacity(steps);
    let (mut th, mut lam, mut logs) = (PureAngle::ground(), T::one(), T::zero());
    for k in 0..=steps {
        thetas.push(th);
        lambdas.push(lam);
        log_scale.push(logs);
        if k == steps {
            break;
        }
        let u = T::lit(rng.sample::<f64, _>(StandardNormal)) * sd;
        us.push(u);
        let (t2, l2) = diffusive_measurement_update(th, lam, u, params.dt, params);
        th = t2;
        lam = l2;
        if lam.abs() < T::lit(RESCALE_BELOW) && lam != T::zero() {
            logs += lam.abs().ln();
            lam = lam.signum();
        }
    }
    let record = UnknownRecord { values: us, dt: params.dt, t0: T::zero() };
    TrueTrajectory { thetas, lambdas, log_scale, record, dt: params.dt }
}

/// Tabulated waiting-time density between detected photons, starting from the ground
/// state just after a click.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaitingTime<T> {
    pub dt: T,
    pub pdf: Vec<T>,
    /// Probability of a click before each grid time, 1 − Tr ρ̃(T).
    pub cdf: Vec<T>,
}

impl<T: Real> WaitingTime<T> {
    pub fn t_max(&self) -> T {
        T::from_usize_lossy(self.pdf.len() - 1) * self.dt
    }

    /// Smallest T with G(T) = x, linearly interpolated.
    pub fn inverse_cdf(&self, x: T) -> Result<T> {
        let last = *self.cdf.last().expect("non-empty table");
        if !(x >= T::zero() && x <= last) {
            return Err(Error::Numerical(format!(
                "waiting-time CDF reaches only {} before T_max, cannot invert at {}",
                last.to_f64_lossy(),
                x.to_f64_lossy()
            )));
        }
        let k = self.cdf.partition_point(|&g| g < x);
        if k == 0 {
            return Ok(T::zero());
        }
        let (g0, g1) = (self.cdf[k - 1], self.cdf[k]);
        let frac = if g1 > g0 { (x - g0) / (g1 - g0) } else { T::zero() };
        Ok((T::from_usize_lossy(k - 1) + frac) * self.dt)
    }
}

/// Waiting-time density γ_o(a + z)/2 of the no-click evolution from the ground state.
pub fn waiting_time_pdf<T: Real>(params: &Params<T>, t_max: T, dt: T) -> Result<WaitingTime<T>> {
    waiting_time_pdf_from(&BlochYZ::ground(), params, t_max, dt)
}

pub fn waiting_time_pdf_from<T: Real>(start: &BlochYZ<T>, params: &Params<T>, t_max: T, dt: T) -> Result<WaitingTime<T>> {
    if !(dt > T::zero() && t_max > dt) {
        return Err(Error::InvalidParams("need 0 < dt < T_max".into()));
    }
    let steps = (t_max / dt).round().to_usize().unwrap_or(0);
    let mut s = LinearState::from_state(start, T::one());
    let mut pdf = Vec::with_capacity(steps + 1);
    let mut cdf = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        pdf.push(T::lit(0.5) * params.gamma_o * (s.a + s.z));
        cdf.push(T::one() - s.a);
        if k < steps {
            s = rk4_no_jump(&s, dt, params);
        }
    }
    let mass = *cdf.last().unwrap();
    if mass < T::lit(0.99) {
        return Err(Error::WaitingTimeTruncated { mass: mass.to_f64_lossy(), t_max: t_max.to_f64_lossy() });
    }
    Ok(WaitingTime { dt, pdf, cdf })
}

/// Doubles T_max from `t_start` until the waiting-time table holds at least `mass`.
pub fn waiting_time_covering<T: Real>(params: &Params<T>, t_start: T, dt: T, mass: T) -> Result<WaitingTime<T>> {
    let mut t_max = t_start;
    for _ in 0..12 {
        match waiting_time_pdf(params, t_max, dt) {
            Ok(w) if *w.cdf.last().unwrap() >= mass => return Ok(w),
            Ok(_) | Err(Error::WaitingTimeTruncated { .. }) => t_max *= T::lit(2.0),
            Err(e) => return Err(e),
        }
    }
    waiting_time_pdf(params, t_max, dt)
}

/// Wraps θ into range; re-exported for the solvers that integrate raw angles.
#[inline]
pub fn wrap<T: Real>(theta: T) -> T {
    wrap_angle(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::angle_diff;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn params(omega: f64, go: f64, gu: f64) -> Params<f64> {
        Params { omega, gamma_o: go, gamma_u: gu, dt: 1e-3, block: 4.0, theta_grid_n: 1024, seed: 0 }
    }

    #[test]
    fn map_fixed_point_and_substitution() {
        let p = params(0.0, 1.0, 0.0);
        let (th, lam) = diffusive_measurement_update(PureAngle::ground(), 1.0, 0.0, 1e-3, &p);
        assert!(angle_diff(th.theta(), PI).abs() < 1e-15 && lam == 1.0);

        let p = params(2.0, 0.3, 0.7);
        let dt = 1e-3;
        let (th, _) = diffusive_measurement_update(PureAngle::new(FRAC_PI_2), 1.0, 0.0, dt, &p);
        let expect = FRAC_PI_2 - dt * 2.0 + dt * (0.3 + 0.7) / 2.0;
        assert!((th.theta() - expect).abs() < 1e-15);

        for u in [-300.0, -1.0, 0.0, 5.0, 1e3] {
            let (_, lam) = diffusive_measurement_update(PureAngle::ground(), 0.7, u, dt, &p);
            assert!((lam - 0.7).abs() < 1e-15, "u={u} -> {lam}");
        }
    }

    #[test]
    fn true_sme_fixed_point_and_purity_check() {
        let p = params(0.0, 0.4, 0.6);
        let g = step_true_sme(&BlochYZ::ground(), 0.0, 1e-3, &p).unwrap();
        assert!(g.y.abs() < 1e-15 && (g.z + 1.0).abs() < 1e-15);
        assert!(step_true_sme(&BlochYZ::state(0.1, 0.2).unwrap(), 0.0, 1e-3, &p).is_err());
    }

    /// Both maps are Itô-consistent: pathwise they agree to O(dt) and their means over
    /// the Gaussian record agree to O(dt²).
    #[test]
    fn true_sme_agrees_with_theta_map() {
        let p = params(2.0, 0.4, 0.6);
        // Gauss–Hermite nodes for a standard normal, 20 points (probabilists').
        let (nodes, weights) = gauss_hermite_e(20);
        let mut worst = [0.0f64; 2];
        for (i, dt) in [1e-2f64, 1e-3].into_iter().enumerate() {
            for j in 0..24 {
                let th = 0.13 + j as f64 * 0.26;
                let mut mean = 0.0;
                for (x, w) in nodes.iter().zip(&weights) {
                    let u = x / dt.sqrt();
                    let a = diffusive_measurement_update(PureAngle::new(th), 1.0, u, dt, &p).0;
                    let b = step_true_sme(&PureAngle::new(th).to_bloch(), u, dt, &p).unwrap();
                    let d = angle_diff(a.theta(), b.theta());
                    assert!(d.abs() < 8.0 * dt * (1.0 + x * x), "pathwise {d} at dt={dt}");
                    mean += w * d;
                }
                worst[i] = worst[i].max(mean.abs());
            }
        }
        assert!(worst[1] < 1e-5);
        assert!(worst[0] / worst[1] > 60.0, "weak order: {worst:?}");
    }

    /// Probabilists' Gauss–Hermite rule via Golub–Welsch.
    pub(crate) fn gauss_hermite_e(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            let b = (i as f64).sqrt();
            m[(i, i - 1)] = b;
            m[(i - 1, i)] = b;
        }
        let eig = m.symmetric_eigen();
        let nodes = eig.eigenvalues.iter().copied().collect();
        let weights = (0..n).map(|i| eig.eigenvectors[(0, i)].powi(2)).collect();
        (nodes, weights)
    }

    #[test]
    fn unnormalized_step_mean_trace_decay() {
        let p = params(2.0, 0.4, 0.6);
        let dt = 1e-3f64;
        let (nodes, weights) = gauss_hermite_e(16);
        for th in [0.3, 1.7, 2.9, 4.4] {
            let rho = PureAngle::new(th).to_bloch();
            let mean: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(x, w)| w * step_unnormalized_sme(&rho, 1.0, x / dt.sqrt(), dt, &p).unwrap().1)
                .sum();
            let expect = 1.0 - dt * 0.2 * (1.0 + th.cos());
            assert!((mean - expect).abs() < 1e-12, "{mean} vs {expect}");
        }
        let (g, lam) = step_unnormalized_sme(&BlochYZ::ground(), 0.5, 0.0, dt, &p).unwrap();
        assert_eq!(lam, 0.5);
        assert!((g.radius() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn filter_unitary_limit_and_convergence() {
        let p = params(2.0, 0.0, 0.0).with_block(1.0);
        let mut s = BlochYZ::ground();
        for _ in 0..1000 {
            s = step_filtered(&s, 1e-4, &p);
        }
        assert!((s.radius() - 1.0).abs() < 1e-3);
        let f = filtered_trajectory(&p, 1000);
        assert!(f.states.iter().all(|s| (s.radius() - 1.0).abs() < 1e-12));

        // Euler filter converges to the RK4 trajectory at first order.
        let p = params(2.0, 0.5, 0.5).with_block(4.0);
        let exact = *filtered_trajectory(&p, 4000).states.last().unwrap();
        let mut errs = Vec::new();
        for n in [1000usize, 2000, 4000] {
            let dt = 4.0 / n as f64;
            let mut s = BlochYZ::ground();
            for _ in 0..n {
                s = step_filtered(&s, dt, &p);
            }
            errs.push((s.y - exact.y).hypot(s.z - exact.z));
        }
        assert!(errs[0] / errs[1] > 1.7 && errs[1] / errs[2] > 1.7, "{errs:?}");
        assert!(errs[2] < 4e-3);
    }

    #[test]
    fn filtered_trajectory_stays_physical() {
        let p = params(2.0, 0.5, 0.5);
        let f = filtered_trajectory(&p, p.steps());
        assert_eq!(f.states.len(), 4001);
        assert!(f.states.iter().all(|s| s.radius() <= 1.0 + 1e-12));
        assert!(f.norm_trace.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert_eq!(f.norm_trace[0], 1.0);
    }

    #[test]
    fn sampling_is_deterministic_and_pure() {
        let p = params(2.0, 0.5, 0.5);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let ta = sample_ostensible_trajectory(&p, &mut a);
        let tb = sample_ostensible_trajectory(&p, &mut b);
        assert_eq!(ta, tb);
        assert_eq!(ta.lambdas[0], 1.0);
        assert_eq!(ta.record.len(), 4000);
        assert!(ta.thetas.iter().all(|t| (t.to_bloch().radius() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn waiting_time_cases() {
        let p = params(0.0, 1.0, 0.0);
        let w = waiting_time_pdf_from(&BlochYZ::excited(), &p, 20.0, 1e-3).unwrap();
        for k in [0usize, 500, 3000] {
            let t = k as f64 * 1e-3;
            assert!((w.pdf[k] - (-t).exp()).abs() < 1e-10);
        }
        let p = params(2.0, 0.5, 0.5);
        let w = waiting_time_pdf(&p, 20.0, 1e-3).unwrap();
        assert_eq!(w.pdf[0], 0.0);
        let trap: f64 = w.pdf.windows(2).map(|x| 0.5 * (x[0] + x[1]) * 1e-3).sum();
        assert!((trap - w.cdf.last().unwrap()).abs() < 1e-6);
        assert!(*w.cdf.last().unwrap() > 0.99);
        let t = w.inverse_cdf(0.5).unwrap();
        let k = (t / 1e-3) as usize;
        assert!(w.cdf[k] <= 0.5 && w.cdf[k + 1] >= 0.5);
        assert!(matches!(
            waiting_time_pdf(&params(2.0, 0.05, 0.95), 5.0, 1e-3),
            Err(Error::WaitingTimeTruncated { .. })
        ));
    }
}

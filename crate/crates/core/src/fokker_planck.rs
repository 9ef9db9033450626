//! Angle-density evolution for the unnormalized no-click true-state distribution on
//! the y–z circle, and the estimators read off the past-future density.
//!
//! The equation ∂ₜp = −k p − ∂θ(v p) + ∂θ²(D p) is discretized by finite volumes on a
//! periodic grid.  Each step is Strang-split: exact sink, limited-upwind advection with
//! SSP-RK2, and backward-Euler diffusion in the middle.  Advection and diffusion are in
//! flux form, so the sink stages alone change the discrete mass.

use crate::error::{Error, Result};
use crate::real::{angle_diff, wrap_angle, KahanSum, Real};
use crate::retrofilter::effect_overlap;
use crate::types::{BlochYZ, Effect, Params, PureAngle, StateKind};
use serde::{Deserialize, Serialize};

/// Density on the periodic grid θ_i = i·2π/n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaPdf<T> {
    pub values: Vec<T>,
    pub normalized: bool,
}

impl<T: Real> ThetaPdf<T> {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn spacing(&self) -> T {
        T::TAU() / T::from_usize_lossy(self.n())
    }

    pub fn theta(&self, i: usize) -> T {
        T::from_usize_lossy(i) * self.spacing()
    }

    pub fn grid(&self) -> Vec<T> {
        (0..self.n()).map(|i| self.theta(i)).collect()
    }

    /// Trapezoidal integral; on a periodic grid this is h·Σp.
    pub fn integral(&self) -> T {
        let s: KahanSum<T> = self.values.iter().copied().collect();
        s.value() * self.spacing()
    }

    pub fn normalize(&self) -> Result<Self> {
        let m = self.integral();
        if !(m > T::zero()) || !m.is_finite() {
            return Err(Error::ZeroWeight(format!("density integral {}", m.to_f64_lossy())));
        }
        Ok(Self { values: self.values.iter().map(|v| *v / m).collect(), normalized: true })
    }

    /// Wrapped Gaussian of width `sigma` about `center`, normalized.
    pub fn gaussian(n: usize, center: T, sigma: T) -> Self {
        let h = T::TAU() / T::from_usize_lossy(n);
        let values = (0..n)
            .map(|i| {
                let d = angle_diff(T::from_usize_lossy(i) * h, center) / sigma;
                (-T::lit(0.5) * d * d).exp()
            })
            .collect();
        Self { values, normalized: false }.normalize().expect("positive Gaussian")
    }

    /// Initial condition of a block: a narrow Gaussian (σ = 0.01) at the ground state.
    pub fn ground_state(n: usize) -> Self {
        Self::gaussian(n, T::PI(), T::lit(0.01))
    }

    pub fn uniform(n: usize) -> Self {
        Self { values: vec![T::one() / T::TAU(); n], normalized: true }
    }

    /// Linear periodic interpolation.
    pub fn interpolate(&self, theta: T) -> T {
        let x = wrap_angle(theta) / self.spacing();
        let i = x.floor().to_usize().unwrap_or(0) % self.n();
        let f = x - x.floor();
        let j = (i + 1) % self.n();
        self.values[i] * (T::one() - f) + self.values[j] * f
    }

    /// Three-point quadratic through the nearest node and its neighbours; the same
    /// parabola refines the mode, so the density at the mode is the interpolant's peak.
    pub fn interpolate_quadratic(&self, theta: T) -> T {
        let n = self.n();
        let x = wrap_angle(theta) / self.spacing();
        let i = x.round().to_usize().unwrap_or(0) % n;
        let f = x - x.round();
        let (l, c, r) = (self.values[(i + n - 1) % n], self.values[i], self.values[(i + 1) % n]);
        c + T::lit(0.5) * f * (r - l) + T::lit(0.5) * f * f * (l - T::lit(2.0) * c + r)
    }

    /// (∫ sinθ p dθ, ∫ cosθ p dθ, ∫ p dθ).
    pub fn moments(&self) -> (T, T, T) {
        let mut ys = KahanSum::new();
        let mut zs = KahanSum::new();
        let mut ms = KahanSum::new();
        for (i, &p) in self.values.iter().enumerate() {
            let (s, c) = self.theta(i).sin_cos();
            ys.add(p * s);
            zs.add(p * c);
            ms.add(p);
        }
        let h = self.spacing();
        (ys.value() * h, zs.value() * h, ms.value() * h)
    }
}

/// Per-step solver controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions<T> {
    /// Target advective Courant number per substep.
    pub cfl: T,
    /// Lower bound on substeps per output step (controls the splitting error).
    pub min_substeps: usize,
    /// Refuse output steps needing more substeps than this.
    pub max_substeps: usize,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self { cfl: T::lit(0.4), min_substeps: 2, max_substeps: 4096 }
    }
}

/// Change of discrete mass over one output step, split by cause.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassBudget<T> {
    pub before: T,
    pub after: T,
    /// Mass removed by the sink stages.
    pub sink: T,
}

/// Precomputed operator for one parameter set and grid.
#[derive(Clone, Debug)]
pub struct FokkerPlanck<T> {
    n: usize,
    h: T,
    sub_dt: T,
    pub substeps: usize,
    /// exp(−k_i·sub_dt/2) per cell.
    sink_half: Vec<T>,
    /// Velocity at face i+½.
    v_face: Vec<T>,
    cyclic: CyclicTridiagonal<T>,
}

/// Sink, drift and diffusion coefficients at angle θ.
pub fn pde_coefficients<T: Real>(theta: T, params: &Params<T>) -> (T, T, T) {
    let h = T::lit(0.5);
    let (s, c) = theta.sin_cos();
    let g = params.gamma_u;
    let k = h * params.gamma_o * (T::one() + c);
    let v = -params.omega + (h * params.gamma_o + g) * s + h * g * s * c;
    let d = h * g * (T::one() + c) * (T::one() + c);
    (k, v, d)
}

impl<T: Real> FokkerPlanck<T> {
    pub fn new(params: &Params<T>, options: SolverOptions<T>) -> Result<Self> {
        params.validate()?;
        let n = params.theta_grid_n;
        let h = T::TAU() / T::from_usize_lossy(n);
        let half = T::lit(0.5);
        let v_face: Vec<T> = (0..n)
            .map(|i| pde_coefficients((T::from_usize_lossy(i) + half) * h, params).1)
            .collect();
        let vmax = v_face.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let needed = (vmax * params.dt / (options.cfl * h)).ceil().to_usize().unwrap_or(usize::MAX);
        let substeps = needed.max(options.min_substeps).max(1);
        if substeps > options.max_substeps {
            return Err(Error::Cfl { dt: params.dt.to_f64_lossy(), needed: substeps, allowed: options.max_substeps });
        }
        let sub_dt = params.dt / T::from_usize_lossy(substeps);
        let mut sink_half = Vec::with_capacity(n);
        let mut diff = Vec::with_capacity(n);
        for i in 0..n {
            let (k, _, d) = pde_coefficients(T::from_usize_lossy(i) * h, params);
            sink_half.push((-k * sub_dt * half).exp());
            diff.push(d);
        }
        // (I − τ L) with (L p)_i = (D_{i+1}p_{i+1} − 2D_i p_i + D_{i−1}p_{i−1})/h².
        let r = sub_dt / (h * h);
        let diag: Vec<T> = (0..n).map(|i| T::one() + T::lit(2.0) * r * diff[i]).collect();
        let upper: Vec<T> = (0..n).map(|i| -r * diff[(i + 1) % n]).collect();
        let lower: Vec<T> = (0..n).map(|i| -r * diff[(i + n - 1) % n]).collect();
        let cyclic = CyclicTridiagonal::new(lower, diag, upper)?;
        Ok(Self { n, h, sub_dt, substeps, sink_half, v_face, cyclic })
    }

    pub fn grid_size(&self) -> usize {
        self.n
    }

    /// Advances `p` by one output step dt.
    pub fn step(&self, p: &mut [T], scratch: &mut Scratch<T>) -> Result<MassBudget<T>> {
        debug_assert_eq!(p.len(), self.n);
        let before = self.mass(p);
        let mut sink = T::zero();
        let half = T::lit(0.5) * self.sub_dt;
        for _ in 0..self.substeps {
            sink += self.apply_sink(p);
            self.advect(p, half, scratch);
            self.cyclic.solve_in_place(p, scratch);
            self.advect(p, half, scratch);
            sink += self.apply_sink(p);
        }
        self.clean_negatives(p)?;
        let after = self.mass(p);
        Ok(MassBudget { before, after, sink })
    }

    fn mass(&self, p: &[T]) -> T {
        let s: KahanSum<T> = p.iter().copied().collect();
        s.value() * self.h
    }

    fn apply_sink(&self, p: &mut [T]) -> T {
        let mut lost = KahanSum::new();
        for (x, f) in p.iter_mut().zip(&self.sink_half) {
            let nx = *x * *f;
            lost.add(*x - nx);
            *x = nx;
        }
        lost.value() * self.h
    }

    /// Face fluxes with a van Leer limited upwind reconstruction.
    fn fluxes(&self, p: &[T], flux: &mut [T]) {
        let n = self.n;
        let two = T::lit(2.0);
        let slope = |i: usize| -> T {
            let a = p[i] - p[(i + n - 1) % n];
            let b = p[(i + 1) % n] - p[i];
            if a * b <= T::zero() {
                T::zero()
            } else {
                two * a * b / (a + b)
            }
        };
        let half = T::lit(0.5);
        for i in 0..n {
            let v = self.v_face[i];
            flux[i] = if v >= T::zero() {
                v * (p[i] + half * slope(i))
            } else {
                let j = (i + 1) % n;
                v * (p[j] - half * slope(j))
            };
        }
    }

    fn advect(&self, p: &mut [T], tau: T, s: &mut Scratch<T>) {
        let n = self.n;
        let r = tau / self.h;
        // SSP-RK2 (Heun).
        self.fluxes(p, &mut s.flux);
        for i in 0..n {
            s.stage[i] = p[i] - r * (s.flux[i] - s.flux[(i + n - 1) % n]);
        }
        let stage = std::mem::take(&mut s.stage);
        self.fluxes(&stage, &mut s.flux);
        let half = T::lit(0.5);
        for i in 0..n {
            let second = stage[i] - r * (s.flux[i] - s.flux[(i + n - 1) % n]);
            p[i] = half * (p[i] + second);
        }
        s.stage = stage;
    }

    fn clean_negatives(&self, p: &mut [T]) -> Result<()> {
        let max = p.iter().fold(T::zero(), |m, v| m.max(*v));
        let tol = T::lit(1e-12) * max;
        for (i, x) in p.iter_mut().enumerate() {
            if *x < T::zero() {
                if -*x <= tol {
                    *x = T::zero();
                } else {
                    return Err(Error::NegativeMass { index: i, value: x.to_f64_lossy(), max: max.to_f64_lossy() });
                }
            }
        }
        Ok(())
    }

    pub fn scratch(&self) -> Scratch<T> {
        Scratch { flux: vec![T::zero(); self.n], stage: vec![T::zero(); self.n], work: vec![T::zero(); self.n] }
    }

    /// Evolves `initial` for `steps` output steps and hands every `stride`-th density
    /// (including the initial and final ones) to `visit(step, density)`.
    pub fn evolve_with<F>(&self, initial: &ThetaPdf<T>, steps: usize, stride: usize, mut visit: F) -> Result<()>
    where
        F: FnMut(usize, &ThetaPdf<T>) -> Result<()>,
    {
        if initial.n() != self.n {
            return Err(Error::LengthMismatch { expected: self.n, got: initial.n() });
        }
        if initial.values.iter().any(|v| *v < T::zero() || !v.is_finite()) {
            return Err(Error::InvalidParams("initial density must be finite and non-negative".into()));
        }
        let stride = stride.max(1);
        let mut pdf = ThetaPdf { values: initial.values.clone(), normalized: false };
        let mut scratch = self.scratch();
        visit(0, &pdf)?;
        for k in 1..=steps {
            self.step(&mut pdf.values, &mut scratch)?;
            if k % stride == 0 || k == steps {
                visit(k, &pdf)?;
            }
        }
        Ok(())
    }
}

/// Work buffers reused across steps.
#[derive(Clone, Debug)]
pub struct Scratch<T> {
    flux: Vec<T>,
    stage: Vec<T>,
    work: Vec<T>,
}

/// Periodic tridiagonal system solved by Sherman–Morrison on a factored Thomas sweep.
#[derive(Clone, Debug)]
struct CyclicTridiagonal<T> {
    n: usize,
    lower: Vec<T>,
    upper: Vec<T>,
    /// Thomas factors of the modified (non-cyclic) matrix.
    cprime: Vec<T>,
    denom: Vec<T>,
    /// Solution of the modified system for the correction vector.
    zvec: Vec<T>,
    corner_factor: T,
}

impl<T: Real> CyclicTridiagonal<T> {
    fn new(lower: Vec<T>, diag: Vec<T>, upper: Vec<T>) -> Result<Self> {
        let n = diag.len();
        // Corners: A[0][n−1] = lower[0], A[n−1][0] = upper[n−1].
        let gamma = -diag[0];
        let mut d = diag.clone();
        d[0] -= gamma;
        d[n - 1] -= upper[n - 1] * lower[0] / gamma;
        let mut cprime = vec![T::zero(); n];
        let mut denom = vec![T::zero(); n];
        denom[0] = d[0];
        cprime[0] = upper[0] / denom[0];
        for i in 1..n {
            denom[i] = d[i] - lower[i] * cprime[i - 1];
            if denom[i] == T::zero() {
                return Err(Error::Numerical("singular diffusion matrix".into()));
            }
            cprime[i] = upper[i] / denom[i];
        }
        let mut me = Self { n, lower, upper, cprime, denom, zvec: vec![T::zero(); n], corner_factor: T::zero() };
        let mut u = vec![T::zero(); n];
        u[0] = gamma;
        u[n - 1] = me.upper[n - 1];
        me.thomas(&mut u);
        me.corner_factor = me.lower[0] / gamma;
        me.zvec = u;
        Ok(me)
    }

    fn thomas(&self, x: &mut [T]) {
        let n = self.n;
        x[0] /= self.denom[0];
        for i in 1..n {
            x[i] = (x[i] - self.lower[i] * x[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.cprime[i] * x[i + 1];
        }
    }

    fn solve_in_place(&self, b: &mut [T], s: &mut Scratch<T>) {
        s.work.copy_from_slice(b);
        self.thomas(&mut s.work);
        let n = self.n;
        // v = (1, 0, …, 0, lower[0]/γ).
        let vy = s.work[0] + self.corner_factor * s.work[n - 1];
        let vz = self.zvec[0] + self.corner_factor * self.zvec[n - 1];
        let f = vy / (T::one() + vz);
        for i in 0..n {
            b[i] = s.work[i] - f * self.zvec[i];
        }
    }
}

/// Unnormalized densities after every output step over a block of length `block`.
pub fn evolve_unnormalized_pdf<T: Real>(initial: &ThetaPdf<T>, params: &Params<T>, block: T) -> Result<Vec<ThetaPdf<T>>> {
    let solver = FokkerPlanck::new(params, SolverOptions::default())?;
    let steps = params.steps_for(block);
    let mut out = Vec::with_capacity(steps + 1);
    solver.evolve_with(initial, steps, 1, |_, p| {
        out.push(p.clone());
        Ok(())
    })?;
    Ok(out)
}

/// Past-future density ℘(θ) ∝ p̃(θ)·Tr(E S(θ)), normalized.
pub fn smoothed_pdf<T: Real>(ptilde: &ThetaPdf<T>, effect: &Effect<T>) -> Result<ThetaPdf<T>> {
    if !effect.is_positive(T::lit(1e-12) * effect.max_abs()) {
        return Err(Error::EffectNotPositive {
            t: f64::NAN,
            alpha: effect.alpha.to_f64_lossy(),
            norm: effect.bloch_norm().to_f64_lossy(),
        });
    }
    let values = ptilde
        .values
        .iter()
        .enumerate()
        .map(|(i, &p)| p * effect_overlap(effect, PureAngle::new(ptilde.theta(i))).max(T::zero()))
        .collect();
    ThetaPdf { values, normalized: false }.normalize()
}

/// Mean Bloch vector of the density: the estimate minimizing the expected trace
/// square deviation.
pub fn q1_smoothed_state<T: Real>(pdf: &ThetaPdf<T>) -> BlochYZ<T> {
    let (y, z, m) = pdf.moments();
    let (y, z) = if pdf.normalized { (y, z) } else { (y / m, z / m) };
    BlochYZ { y, z, kind: StateKind::State }
}

/// Pure state along the smoothed Bloch vector (its dominant eigenvector).
pub fn q2_lustrated_state<T: Real>(smoothed: &BlochYZ<T>) -> Result<PureAngle<T>> {
    if smoothed.radius() == T::zero() {
        return Err(Error::Degenerate("smoothed state is maximally mixed".into()));
    }
    Ok(PureAngle::new(smoothed.y.atan2(smoothed.z)))
}

/// Mode of the density with a flag for near-equal competing maxima.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate<T> {
    pub theta: PureAngle<T>,
    pub degenerate: bool,
}

/// Global maximum of the density refined by a three-point parabola.
pub fn q3_most_likely_state<T: Real>(pdf: &ThetaPdf<T>) -> ModeEstimate<T> {
    let n = pdf.n();
    let v = &pdf.values;
    let mut best = 0;
    for i in 1..n {
        if v[i] > v[best] {
            best = i;
        }
    }
    let top = v[best];
    let tol = T::lit(1e-9) * top;
    let mut degenerate = false;
    for i in 0..n {
        let (l, r) = (v[(i + n - 1) % n], v[(i + 1) % n]);
        let far = i.abs_diff(best) > 1 && i.abs_diff(best) < n - 1;
        if far && v[i] >= l && v[i] >= r && top - v[i] <= tol {
            degenerate = true;
            if i < best {
                best = i;
            }
        }
    }
    let (l, c, r) = (v[(best + n - 1) % n], v[best], v[(best + 1) % n]);
    let curv = l - T::lit(2.0) * c + r;
    let offset = if curv < T::zero() { T::lit(0.5) * (l - r) / curv } else { T::zero() };
    let offset = offset.max(-T::lit(0.5)).min(T::lit(0.5));
    ModeEstimate { theta: PureAngle::new((T::from_usize_lossy(best) + offset) * pdf.spacing()), degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{filtered_trajectory, theta_rate};
    use crate::types::trace_product;
    use std::f64::consts::{PI, TAU};

    fn params(omega: f64, go: f64, gu: f64, n: usize) -> Params<f64> {
        Params { omega, gamma_o: go, gamma_u: gu, dt: 1e-3, block: 4.0, theta_grid_n: n, seed: 0 }
    }

    #[test]
    fn cyclic_solver_matches_dense() {
        let n = 7;
        let lower: Vec<f64> = (0..n).map(|i| -0.1 - 0.01 * i as f64).collect();
        let upper: Vec<f64> = (0..n).map(|i| -0.2 + 0.015 * i as f64).collect();
        let diag: Vec<f64> = (0..n).map(|i| 1.5 + 0.1 * i as f64).collect();
        let sys = CyclicTridiagonal::new(lower.clone(), diag.clone(), upper.clone()).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut x = b.clone();
        let mut s = Scratch { flux: vec![0.0; n], stage: vec![0.0; n], work: vec![0.0; n] };
        sys.solve_in_place(&mut x, &mut s);
        for i in 0..n {
            let ax = lower[i] * x[(i + n - 1) % n] + diag[i] * x[i] + upper[i] * x[(i + 1) % n];
            assert!((ax - b[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn mass_budget_per_step() {
        let p = params(2.0, 0.6, 0.4, 512);
        let fp = FokkerPlanck::new(&p, SolverOptions::default()).unwrap();
        let mut pdf = ThetaPdf::<f64>::ground_state(512).values;
        let mut s = fp.scratch();
        for _ in 0..500 {
            let b = fp.step(&mut pdf, &mut s).unwrap();
            assert!((b.before - b.after - b.sink).abs() < 1e-13 * b.before);
            assert!(b.sink >= 0.0);
        }
    }

    #[test]
    fn mass_rate_matches_sink_integral() {
        let p = params(2.0, 0.6, 0.4, 1024);
        let fp = FokkerPlanck::new(&p, SolverOptions::default()).unwrap();
        let mut pdf = ThetaPdf::<f64>::gaussian(1024, 1.0, 0.3);
        let mut s = fp.scratch();
        let rate = |q: &ThetaPdf<f64>| -> f64 {
            let (_, z, m) = q.moments();
            -0.3 * (m + z)
        };
        let r0 = rate(&pdf);
        let m0 = pdf.integral();
        fp.step(&mut pdf.values, &mut s).unwrap();
        let r1 = rate(&pdf);
        let dm = (pdf.integral() - m0) / 1e-3;
        assert!((dm - 0.5 * (r0 + r1)).abs() < 1e-6 * r0.abs(), "{dm} vs {}", 0.5 * (r0 + r1));
    }

    #[test]
    fn deterministic_transport_without_diffusion() {
        let n = 2048;
        let p = params(2.0, 1.0, 0.0, n).with_block(1.0);
        let init = ThetaPdf::gaussian(n, 2.0, 0.01);
        let snaps = evolve_unnormalized_pdf(&init, &p, 1.0).unwrap();
        // Characteristic from θ = 2 with RK4 at a fine step.
        let mut th = 2.0f64;
        let h = 1e-4;
        for _ in 0..10_000 {
            let f = |t: f64| theta_rate(t, 0.0, &p);
            let k1 = f(th);
            let k2 = f(th + 0.5 * h * k1);
            let k3 = f(th + 0.5 * h * k2);
            let k4 = f(th + h * k3);
            th += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let mode = q3_most_likely_state(snaps.last().unwrap());
        assert!(angle_diff(mode.theta.theta(), th).abs() < TAU / n as f64, "{} vs {}", mode.theta.theta(), wrap_angle(th));
    }

    #[test]
    fn filtered_state_matches_linear_filter() {
        let p = params(2.0, 0.5, 0.5, 1024);
        let snaps = evolve_unnormalized_pdf(&ThetaPdf::ground_state(1024), &p, 4.0).unwrap();
        let filt = filtered_trajectory(&p, 4000);
        let mut worst: f64 = 0.0;
        for k in (0..=4000).step_by(50) {
            let q = q1_smoothed_state(&snaps[k].normalize().unwrap());
            let f = filt.states[k];
            worst = worst.max((q.y - f.y).abs()).max((q.z - f.z).abs());
            let m = snaps[k].integral();
            assert!((m - filt.norm_trace[k]).abs() < 2e-3 * filt.norm_trace[k], "mass {m} vs {}", filt.norm_trace[k]);
        }
        assert!(worst < 2e-3, "worst component error {worst}");
    }

    #[test]
    fn smoothed_pdf_cases() {
        let pt = ThetaPdf::<f64>::gaussian(256, 1.0, 0.4);
        let s = smoothed_pdf(&pt, &Effect::new(2.0, 0.0, 0.0)).unwrap();
        for (a, b) in s.values.iter().zip(&pt.values) {
            assert!((a - b).abs() < 1e-12);
        }
        let u = ThetaPdf::<f64>::uniform(256);
        let s = smoothed_pdf(&u, &Effect::new(1.0, 0.0, 1.0)).unwrap();
        assert_eq!(s.values[128], 0.0);
        assert!((s.values[0] - 2.0 / TAU).abs() < 1e-12);
        let zero = ThetaPdf { values: vec![0.0; 256], normalized: false };
        assert!(smoothed_pdf(&zero, &Effect::new(1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn estimator_cases() {
        let delta = ThetaPdf::<f64>::gaussian(4096, 1.3, 1e-3);
        let q = q1_smoothed_state(&delta);
        assert!((q.radius() - 1.0).abs() < 1e-5 && (q.theta() - 1.3).abs() < 1e-6);
        let q = q1_smoothed_state(&ThetaPdf::<f64>::uniform(256));
        assert!(q.radius() < 1e-14);
        assert!(q2_lustrated_state(&BlochYZ::<f64>::mixed()).is_err());
        let t = q2_lustrated_state(&BlochYZ::state(0.3, 0.4).unwrap()).unwrap();
        assert_eq!(t.theta(), 0.3f64.atan2(0.4));

        let mut two = ThetaPdf::<f64>::gaussian(1024, 1.0, 0.1);
        let other = ThetaPdf::<f64>::gaussian(1024, 4.0, 0.1);
        for (a, b) in two.values.iter_mut().zip(&other.values) {
            *a = 0.6 * *a + 0.4 * b;
        }
        let m = q3_most_likely_state(&two);
        assert!((m.theta.theta() - 1.0).abs() < 1e-3 && !m.degenerate);
        let off = ThetaPdf::<f64>::gaussian(1024, 2.0 + 0.3 * TAU / 1024.0, 0.2);
        assert!((q3_most_likely_state(&off).theta.theta() - (2.0 + 0.3 * TAU / 1024.0)).abs() < 1e-5);
    }

    #[test]
    fn degenerate_modes_flagged() {
        let n = 1000;
        let a = ThetaPdf::<f64>::gaussian(n, 1.0 * TAU / 4.0, 0.2);
        let b = ThetaPdf::<f64>::gaussian(n, 3.0 * TAU / 4.0, 0.2);
        let values = a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect();
        let m = q3_most_likely_state(&ThetaPdf { values, normalized: false });
        assert!(m.degenerate);
        assert!((m.theta.theta() - PI / 2.0).abs() < 1e-6);
    }

    #[test]
    fn lustrated_state_maximizes_overlap() {
        let s = BlochYZ::state(-0.31, 0.52).unwrap();
        let t = q2_lustrated_state(&s).unwrap();
        let best = (0..10_000)
            .map(|i| TAU * i as f64 / 10_000.0)
            .max_by(|a, b| {
                let fa = trace_product(&PureAngle::new(*a).to_bloch(), &s);
                let fb = trace_product(&PureAngle::new(*b).to_bloch(), &s);
                fa.partial_cmp(&fb).unwrap()
            })
            .unwrap();
        assert!(angle_diff(best, t.theta()).abs() < TAU / 10_000.0);
    }

    #[test]
    fn rejects_bad_grid_and_negative_input() {
        let p = params(2.0, 0.5, 0.5, 256);
        let fp = FokkerPlanck::new(&p, SolverOptions::default()).unwrap();
        let mut bad = ThetaPdf::<f64>::uniform(256);
        bad.values[3] = -1.0;
        assert!(fp.evolve_with(&bad, 1, 1, |_, _| Ok(())).is_err());
        let tight = SolverOptions { cfl: 0.4, min_substeps: 1, max_substeps: 1 };
        assert!(matches!(FokkerPlanck::new(&p.with_dt(0.5).with_block(1.0), tight), Err(Error::Cfl { .. })));
    }
}

//! Physical parameters and elementary algebra on the y–z great circle of the Bloch sphere.

use crate::error::{Error, Result};
use crate::real::{wrap_angle, Real};
use serde::{Deserialize, Serialize};

/// Model and discretization parameters.  Rates are in units of the total decay rate's
/// inverse time scale; times in the corresponding unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params<T> {
    /// Rabi frequency of the drive.
    pub omega: T,
    /// Coupling of the photodetected (observed) channel.
    pub gamma_o: T,
    /// Coupling of the homodyne (unobserved) channel.
    pub gamma_u: T,
    pub dt: T,
    /// Length of the jump-free block terminated by a detected photon.
    #[serde(rename = "T")]
    pub block: T,
    pub theta_grid_n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl<T: Real> Params<T> {
    pub fn new(omega: T, gamma_o: T, gamma_u: T, dt: T, block: T) -> Result<Self> {
        let p = Self { omega, gamma_o, gamma_u, dt, block, theta_grid_n: 1024, seed: 0 };
        p.validate()?;
        Ok(p)
    }

    /// The configuration of the reference run: Ω = 2, T = 4, dt = 1e-3, total decay 1,
    /// with `observed_fraction` of it on the photodetected channel.
    pub fn reference(observed_fraction: f64) -> Self {
        Self {
            omega: T::lit(2.0),
            gamma_o: T::lit(observed_fraction),
            gamma_u: T::lit(1.0 - observed_fraction),
            dt: T::lit(1e-3),
            block: T::lit(4.0),
            theta_grid_n: 1024,
            seed: 0,
        }
    }

    pub fn with_block(mut self, block: T) -> Self {
        self.block = block;
        self
    }

    pub fn with_dt(mut self, dt: T) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_grid(mut self, n: usize) -> Self {
        self.theta_grid_n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        let finite = [self.omega, self.gamma_o, self.gamma_u, self.dt, self.block];
        if finite.iter().any(|x| !x.is_finite()) {
            return bad("all rates and times must be finite");
        }
        if self.gamma_o < T::zero() || self.gamma_u < T::zero() {
            return bad("couplings must be non-negative");
        }
        if self.gamma() <= T::zero() {
            return bad("total decay gamma_o + gamma_u must be positive");
        }
        if self.dt <= T::zero() {
            return bad("dt must be positive");
        }
        if self.block <= T::zero() {
            return bad("block duration T must be positive");
        }
        let k = (self.block / self.dt).round();
        if k < T::one() || (k * self.dt - self.block).abs() > T::lit(1e-6) * self.dt {
            return bad("T must be an integer multiple of dt");
        }
        if self.theta_grid_n < 64 {
            return bad("theta_grid_n must be at least 64");
        }
        Ok(())
    }

    /// Total decay rate.
    #[inline]
    pub fn gamma(&self) -> T {
        self.gamma_o + self.gamma_u
    }

    /// Number of time steps K with T = K·dt.
    pub fn steps(&self) -> usize {
        (self.block / self.dt).round().to_usize().unwrap_or(0)
    }

    /// Number of steps spanning `horizon`.
    pub fn steps_for(&self, horizon: T) -> usize {
        (horizon / self.dt).round().to_usize().unwrap_or(0)
    }

    #[inline]
    pub fn sqrt_gamma_u(&self) -> T {
        self.gamma_u.sqrt()
    }

    /// Grid times 0, dt, …, K·dt.
    pub fn times(&self) -> Vec<T> {
        (0..=self.steps()).map(|k| T::from_usize_lossy(k) * self.dt).collect()
    }
}

/// Whether a Bloch vector is a physical state or only a unit-trace Hermitian matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    State,
    Indefinite,
}

/// A qubit operator ½(1 + y σy + z σz).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochYZ<T> {
    pub y: T,
    pub z: T,
    pub kind: StateKind,
}

impl<T: Real> BlochYZ<T> {
    /// A density matrix; rejects Bloch radii above one.
    pub fn state(y: T, z: T) -> Result<Self> {
        let r2 = y * y + z * z;
        if !(r2 <= T::one() + T::lit(1e-9)) {
            return Err(Error::InvalidParams(format!(
                "Bloch radius {} exceeds one",
                r2.sqrt().to_f64_lossy()
            )));
        }
        Ok(Self { y, z, kind: StateKind::State })
    }

    /// Unit-trace Hermitian matrix with no positivity requirement.
    pub fn indefinite(y: T, z: T) -> Self {
        Self { y, z, kind: StateKind::Indefinite }
    }

    pub fn ground() -> Self {
        Self { y: T::zero(), z: -T::one(), kind: StateKind::State }
    }

    pub fn excited() -> Self {
        Self { y: T::zero(), z: T::one(), kind: StateKind::State }
    }

    pub fn mixed() -> Self {
        Self { y: T::zero(), z: T::zero(), kind: StateKind::State }
    }

    #[inline]
    pub fn radius(&self) -> T {
        self.y.hypot(self.z)
    }

    /// Bloch angle in `[0, 2π)`; zero for the origin.
    #[inline]
    pub fn theta(&self) -> T {
        angle_and_radius(self).0
    }

    /// Projects onto the unit circle; the origin maps to the ground state.
    pub fn to_pure(&self) -> PureAngle<T> {
        if self.radius() == T::zero() {
            PureAngle::new(T::PI())
        } else {
            PureAngle::new(self.y.atan2(self.z))
        }
    }
}

/// A pure state on the y–z great circle, θ = 0 excited and θ = π ground.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PureAngle<T>(T);

impl<T: Real> PureAngle<T> {
    pub fn new(theta: T) -> Self {
        Self(wrap_angle(theta))
    }

    pub fn ground() -> Self {
        Self(T::PI())
    }

    #[inline]
    pub fn theta(self) -> T {
        self.0
    }

    #[inline]
    pub fn to_bloch(self) -> BlochYZ<T> {
        state_from_angle(self)
    }
}

pub fn state_from_angle<T: Real>(theta: PureAngle<T>) -> BlochYZ<T> {
    let (s, c) = theta.theta().sin_cos();
    BlochYZ { y: s, z: c, kind: StateKind::State }
}

/// Bloch angle in `[0, 2π)` and radius.  The origin returns θ = 0.
pub fn angle_and_radius<T: Real>(state: &BlochYZ<T>) -> (T, T) {
    let r = state.radius();
    if r == T::zero() {
        return (T::zero(), T::zero());
    }
    (wrap_angle(state.y.atan2(state.z)), r)
}

/// Tr(ρ_a ρ_b) for two operators of the form ½(1 + r·σ).
#[inline]
pub fn trace_product<T: Real>(a: &BlochYZ<T>, b: &BlochYZ<T>) -> T {
    T::lit(0.5) * (T::one() + a.y * b.y + a.z * b.z)
}

/// A record of homodyne results u_t on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnknownRecord<T> {
    pub values: Vec<T>,
    pub dt: T,
    pub t0: T,
}

impl<T: Real> UnknownRecord<T> {
    pub fn new(values: Vec<T>, dt: T, t0: T) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("record entry {i} is not finite")));
        }
        if dt <= T::zero() {
            return Err(Error::InvalidParams("record dt must be positive".into()));
        }
        Ok(Self { values, dt, t0 })
    }

    pub fn zeros(len: usize, dt: T) -> Self {
        Self { values: vec![T::zero(); len], dt, t0: T::zero() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn span(&self) -> T {
        T::from_usize_lossy(self.values.len()) * self.dt
    }
}

/// Observed record of one block: no detections on [0, T), one detection at T.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedBlock<T> {
    pub duration: T,
}

impl<T: Real> ObservedBlock<T> {
    pub fn new(duration: T) -> Result<Self> {
        if duration > T::zero() && duration.is_finite() {
            Ok(Self { duration })
        } else {
            Err(Error::InvalidParams("block duration must be positive".into()))
        }
    }
}

/// Hermitian effect α·1 + β·σy + ζ·σz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Effect<T> {
    pub alpha: T,
    pub beta: T,
    pub zeta: T,
}

impl<T: Real> Effect<T> {
    pub fn new(alpha: T, beta: T, zeta: T) -> Self {
        Self { alpha, beta, zeta }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero())
    }

    /// The final effect of a block, ĉ_o†ĉ_o·dt = γ_o dt |e⟩⟨e|.
    pub fn final_jump(params: &Params<T>) -> Self {
        let h = T::lit(0.5) * params.gamma_o * params.dt;
        Self::new(h, T::zero(), h)
    }

    pub fn scale(self, k: T) -> Self {
        Self::new(self.alpha * k, self.beta * k, self.zeta * k)
    }

    #[inline]
    pub fn bloch_norm(&self) -> T {
        self.beta.hypot(self.zeta)
    }

    pub fn is_positive(&self, tol: T) -> bool {
        self.alpha >= self.bloch_norm() - tol
    }

    pub fn max_abs(&self) -> T {
        self.alpha.abs().max(self.beta.abs()).max(self.zeta.abs())
    }

    /// Tr(E ρ) for ρ = ½(1 + yσy + zσz).
    #[inline]
    pub fn overlap_state(&self, rho: &BlochYZ<T>) -> T {
        self.alpha + self.beta * rho.y + self.zeta * rho.z
    }
}

//! Dense 2×2 complex operators in the basis (|e⟩, |g⟩).  Used as an independent
//! matrix route beside the closed Bloch-component formulas.

use crate::real::Real;
use crate::types::{BlochYZ, Effect};
use num_complex::Complex;
use std::ops::{Add, Mul, Sub};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2<T> {
    pub m: [[Complex<T>; 2]; 2],
}

impl<T: Real> Mat2<T> {
    pub fn new(a: Complex<T>, b: Complex<T>, c: Complex<T>, d: Complex<T>) -> Self {
        Self { m: [[a, b], [c, d]] }
    }

    fn re(x: T) -> Complex<T> {
        Complex::new(x, T::zero())
    }

    pub fn zero() -> Self {
        let z = Self::re(T::zero());
        Self::new(z, z, z, z)
    }

    pub fn identity() -> Self {
        let (o, z) = (Self::re(T::one()), Self::re(T::zero()));
        Self::new(o, z, z, o)
    }

    pub fn sigma_x() -> Self {
        let (o, z) = (Self::re(T::one()), Self::re(T::zero()));
        Self::new(z, o, o, z)
    }

    pub fn sigma_y() -> Self {
        let z = Self::re(T::zero());
        Self::new(z, Complex::new(T::zero(), -T::one()), Complex::new(T::zero(), T::one()), z)
    }

    pub fn sigma_z() -> Self {
        let (o, z) = (Self::re(T::one()), Self::re(T::zero()));
        Self::new(o, z, z, -o)
    }

    /// Lowering operator |g⟩⟨e|.
    pub fn sigma_minus() -> Self {
        let (o, z) = (Self::re(T::one()), Self::re(T::zero()));
        Self::new(z, z, o, z)
    }

    /// Projector onto the pure state with amplitudes `(a, b)`.
    pub fn projector(a: Complex<T>, b: Complex<T>) -> Self {
        Self::new(a * a.conj(), a * b.conj(), b * a.conj(), b * b.conj())
    }

    pub fn from_bloch(r: &BlochYZ<T>) -> Self {
        let h = T::lit(0.5);
        (Self::identity() + Self::sigma_y().scale(r.y) + Self::sigma_z().scale(r.z)).scale(h)
    }

    pub fn from_effect(e: &Effect<T>) -> Self {
        Self::identity().scale(e.alpha) + Self::sigma_y().scale(e.beta) + Self::sigma_z().scale(e.zeta)
    }

    pub fn scale(self, k: T) -> Self {
        self.scale_c(Self::re(k))
    }

    pub fn scale_c(self, k: Complex<T>) -> Self {
        let m = self.m;
        Self::new(m[0][0] * k, m[0][1] * k, m[1][0] * k, m[1][1] * k)
    }

    pub fn dagger(self) -> Self {
        let m = self.m;
        Self::new(m[0][0].conj(), m[1][0].conj(), m[0][1].conj(), m[1][1].conj())
    }

    pub fn trace(self) -> Complex<T> {
        self.m[0][0] + self.m[1][1]
    }

    /// Real coefficient of a Pauli matrix: Tr(self·σ)/1 taken as real part.
    pub fn pauli_component(self, sigma: Self) -> T {
        (self * sigma).trace().re
    }

    pub fn max_abs(self) -> T {
        self.m.iter().flatten().map(|c| c.norm()).fold(T::zero(), T::max)
    }
}

impl<T: Real> Add for Mat2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let (a, b) = (self.m, o.m);
        Self::new(a[0][0] + b[0][0], a[0][1] + b[0][1], a[1][0] + b[1][0], a[1][1] + b[1][1])
    }
}

impl<T: Real> Sub for Mat2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + o.scale(-T::one())
    }
}

impl<T: Real> Mul for Mat2<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (a, b) = (self.m, o.m);
        Self::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

/// Observed photodetection operator √γ_o σ₋.
pub fn observed_coupling<T: Real>(gamma_o: T) -> Mat2<T> {
    Mat2::sigma_minus().scale(gamma_o.sqrt())
}

/// Unobserved homodyne operator −i√γ_u σ₋ (y-quadrature).
pub fn unobserved_coupling<T: Real>(gamma_u: T) -> Mat2<T> {
    Mat2::sigma_minus().scale_c(Complex::new(T::zero(), -gamma_u.sqrt()))
}

/// Drive Hamiltonian (Ω/2)σx.
pub fn hamiltonian<T: Real>(omega: T) -> Mat2<T> {
    Mat2::sigma_x().scale(T::lit(0.5) * omega)
}

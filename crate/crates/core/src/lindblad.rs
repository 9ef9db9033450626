//! Unconditioned master-equation reference and the hybrid ensemble that unravels it.

use crate::operators::{hamiltonian, observed_coupling, unobserved_coupling, Mat2};
use crate::trajectory::diffusive_measurement_update;
use crate::types::{BlochYZ, Params, PureAngle, StateKind};
use crate::Real;
use nalgebra::Matrix4;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

fn to_na(m: &Mat2<f64>) -> nalgebra::Matrix2<Complex64> {
    nalgebra::Matrix2::new(m.m[0][0], m.m[0][1], m.m[1][0], m.m[1][1])
}

/// Superoperator of the master equation acting on column-stacked density matrices.
pub fn liouvillian(params: &Params<f64>) -> Matrix4<Complex64> {
    let id = nalgebra::Matrix2::<Complex64>::identity();
    let h = to_na(&hamiltonian(params.omega));
    let i = Complex64::i();
    let mut l = (id.kronecker(&h) - h.transpose().kronecker(&id)) * (-i);
    for c in [observed_coupling(params.gamma_o), unobserved_coupling(params.gamma_u)] {
        let c = to_na(&c);
        let cdc = c.adjoint() * c;
        let half = Complex64::new(0.5, 0.0);
        l += c.conjugate().kronecker(&c) - id.kronecker(&cdc) * half - cdc.transpose().kronecker(&id) * half;
    }
    l
}

/// ρ(t) = exp(t𝓛)ρ₀ as a Bloch pair, plus its trace.
pub fn lindblad_solution(params: &Params<f64>, initial: &BlochYZ<f64>, t: f64) -> (BlochYZ<f64>, f64) {
    let rho = Mat2::from_bloch(initial);
    let v = nalgebra::Vector4::new(rho.m[0][0], rho.m[1][0], rho.m[0][1], rho.m[1][1]);
    let out = (liouvillian(params) * Complex64::new(t, 0.0)).exp() * v;
    let m = Mat2 { m: [[out[0], out[2]], [out[1], out[3]]] };
    let tr = m.trace().re;
    (BlochYZ { y: m.pauli_component(Mat2::sigma_y()) / tr, z: m.pauli_component(Mat2::sigma_z()) / tr, kind: StateKind::State }, tr)
}

/// Ensemble average Σλρ/N of the hybrid unravelling: clicks are drawn with their
/// actual probability and reset the qubit to the ground state; the homodyne record is
/// drawn from the ostensible measure and accounted for in λ.
pub fn hybrid_ensemble<T: Real>(params: &Params<T>, t: T, n: usize, seed: u64) -> (BlochYZ<T>, T) {
    let steps = params.steps_for(t);
    let sd = params.dt.recip().sqrt();
    let chunk = 256;
    let (sy, sz, sl) = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let (mut sy, mut sz, mut sl) = (T::zero(), T::zero(), T::zero());
            for _ in 0..chunk.min(n - c * chunk) {
                let (mut th, mut lam) = (PureAngle::<T>::ground(), T::one());
                for _ in 0..steps {
                    let q = T::lit(0.5) * params.gamma_o * params.dt * (T::one() + th.theta().cos());
                    if T::lit(rng.random::<f64>()) < q {
                        th = PureAngle::ground();
                    } else {
                        let u = T::lit(rng.sample::<f64, _>(StandardNormal)) * sd;
                        let (t2, l2) = diffusive_measurement_update(th, lam, u, params.dt, params);
                        th = t2;
                        lam = l2 / (T::one() - q);
                    }
                }
                let (s, co) = th.theta().sin_cos();
                sy += lam * s;
                sz += lam * co;
                sl += lam;
            }
            (sy, sz, sl)
        })
        .reduce(|| (T::zero(), T::zero(), T::zero()), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let n = T::from_usize_lossy(n);
    (BlochYZ::indefinite(sy / n, sz / n), sl / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rk4_reference(p: &Params<f64>, t: f64) -> BlochYZ<f64> {
        // Bloch equations of the master equation, integrated independently.
        let g = p.gamma();
        let f = |y: f64, z: f64| (-0.5 * g * y - p.omega * z, p.omega * y - g * (1.0 + z));
        let (mut y, mut z) = (0.0, -1.0);
        let h = 1e-4;
        for _ in 0..(t / h).round() as usize {
            let k1 = f(y, z);
            let k2 = f(y + 0.5 * h * k1.0, z + 0.5 * h * k1.1);
            let k3 = f(y + 0.5 * h * k2.0, z + 0.5 * h * k2.1);
            let k4 = f(y + h * k3.0, z + h * k3.1);
            y += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            z += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        BlochYZ::indefinite(y, z)
    }

    #[test]
    fn expm_matches_bloch_equations() {
        for f in [0.2, 0.5, 0.9] {
            let p = Params::<f64>::reference(f);
            for t in [0.3, 1.0, 4.0] {
                let (s, tr) = lindblad_solution(&p, &BlochYZ::ground(), t);
                let r = rk4_reference(&p, t);
                assert!((tr - 1.0).abs() < 1e-12);
                assert!((s.y - r.y).abs() < 1e-10 && (s.z - r.z).abs() < 1e-10, "{f} {t}");
            }
        }
    }

    #[test]
    fn steady_state_is_fixed_point() {
        let p = Params::<f64>::reference(0.5);
        let (s, _) = lindblad_solution(&p, &BlochYZ::ground(), 60.0);
        let (s2, _) = lindblad_solution(&p, &s, 5.0);
        assert!((s.y - s2.y).abs() < 1e-12 && (s.z - s2.z).abs() < 1e-12);
        // ẏ = ż = 0 for the Bloch equations above.
        assert!((-0.5 * s.y - 2.0 * s.z).abs() < 1e-10);
    }

    #[test]
    fn hybrid_ensemble_is_near_master_solution() {
        let p = Params::<f64>::reference(0.5);
        let (mc, tr) = hybrid_ensemble(&p, 1.0, 20_000, 3);
        let (s, _) = lindblad_solution(&p, &BlochYZ::ground(), 1.0);
        assert!((tr - 1.0).abs() < 0.03, "{tr}");
        assert!((mc.y - s.y).abs() < 0.03 && (mc.z - s.z).abs() < 0.03, "{mc:?} {s:?}");
    }
}

//! Weighted ensembles of ostensible trajectories: an independent route to the
//! filtered and smoothed states.

use crate::error::{Error, Result};
use crate::retrofilter::{effect_overlap, EffectTable};
use crate::trajectory::sample_ostensible_trajectory;
use crate::types::Params;
use crate::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Trajectories per independent random stream.
const CHUNK: usize = 256;

/// Ratio estimate Σwv/Σw of the Bloch components with delta-method standard errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedEstimate<T> {
    pub y: T,
    pub z: T,
    pub se_y: T,
    pub se_z: T,
    /// Mean weight per trajectory and its standard error.
    pub mean_weight: T,
    pub se_weight: T,
    pub n: usize,
}

#[derive(Clone, Copy, Debug, Default)]
struct Moments<T> {
    n: usize,
    w: T,
    wy: T,
    wz: T,
    w2: T,
    w2y: T,
    w2z: T,
    w2y2: T,
    w2z2: T,
}

impl<T: Real> Moments<T> {
    fn add(&mut self, w: T, y: T, z: T) {
        let w2 = w * w;
        self.n += 1;
        self.w += w;
        self.wy += w * y;
        self.wz += w * z;
        self.w2 += w2;
        self.w2y += w2 * y;
        self.w2z += w2 * z;
        self.w2y2 += w2 * y * y;
        self.w2z2 += w2 * z * z;
    }

    fn merge(mut self, o: Self) -> Self {
        self.n += o.n;
        self.w += o.w;
        self.wy += o.wy;
        self.wz += o.wz;
        self.w2 += o.w2;
        self.w2y += o.w2y;
        self.w2z += o.w2z;
        self.w2y2 += o.w2y2;
        self.w2z2 += o.w2z2;
        self
    }

    fn estimate(&self) -> Result<WeightedEstimate<T>> {
        if !(self.w > T::zero()) {
            return Err(Error::ZeroWeight("ensemble weights sum to zero".into()));
        }
        let n = T::from_usize_lossy(self.n);
        let y = self.wy / self.w;
        let z = self.wz / self.w;
        let var = |s2: T, s1: T, m: T| ((s2 - T::lit(2.0) * m * s1 + m * m * self.w2) / (self.w * self.w)).max(T::zero());
        let mean_weight = self.w / n;
        let var_w = (self.w2 / n - mean_weight * mean_weight).max(T::zero()) / (n - T::one()).max(T::one());
        Ok(WeightedEstimate {
            y,
            z,
            se_y: var(self.w2y2, self.w2y, y).sqrt(),
            se_z: var(self.w2z2, self.w2z, z).sqrt(),
            mean_weight,
            se_weight: var_w.sqrt(),
            n: self.n,
        })
    }
}

/// Filtered and smoothed estimates at one probe time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeEstimate<T> {
    pub t: T,
    /// Weights λ_t.
    pub filtered: WeightedEstimate<T>,
    /// Weights λ_t·Tr[E(t) S(θ_t)] with the effect at its absolute scale.
    pub smoothed: WeightedEstimate<T>,
}

/// Runs `n` ostensible trajectories over the block and forms the weighted averages of
/// S(θ_t) at each probe time.  `effects` is indexed by absolute time in the block.
pub fn weighted_ensemble<T: Real>(
    params: &Params<T>,
    effects: &EffectTable<T>,
    probes: &[T],
    n: usize,
    seed: u64,
) -> Result<Vec<ProbeEstimate<T>>> {
    let steps = params.steps();
    let idx: Vec<usize> = probes.iter().map(|&t| params.steps_for(t)).collect();
    if let Some(&k) = idx.iter().find(|&&k| k > steps || k >= effects.len()) {
        return Err(Error::InvalidParams(format!("probe step {k} outside the block")));
    }
    let chunks = n.div_ceil(CHUNK);
    let zero = || vec![(Moments::<T>::default(), Moments::<T>::default()); idx.len()];
    let total = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut acc = zero();
            for _ in 0..CHUNK.min(n - c * CHUNK) {
                let tr = sample_ostensible_trajectory(params, &mut rng);
                for (a, &k) in acc.iter_mut().zip(&idx) {
                    let w = tr.weight(k);
                    let th = tr.thetas[k];
                    let (s, co) = th.theta().sin_cos();
                    a.0.add(w, s, co);
                    a.1.add(w * effect_overlap(&effects.absolute(k), th), s, co);
                }
            }
            acc
        })
        .reduce(zero, |a, b| a.into_iter().zip(b).map(|(x, y)| (x.0.merge(y.0), x.1.merge(y.1))).collect());
    probes
        .iter()
        .zip(total)
        .map(|(&t, (f, s))| Ok(ProbeEstimate { t, filtered: f.estimate()?, smoothed: s.estimate()? }))
        .collect()
}

/// |a − b| measured in units of the combined standard error.
pub fn z_score<T: Real>(estimate: T, se: T, reference: T, reference_se: T) -> T {
    let se = (se * se + reference_se * reference_se).sqrt();
    if se > T::zero() {
        (estimate - reference).abs() / se
    } else if estimate == reference {
        T::zero()
    } else {
        T::infinity()
    }
}

//! Discrete classical estimation on a small hidden Markov model, with an exhaustive
//! enumeration oracle.  Generic over the probability type so the identities can be
//! checked in exact rational arithmetic as well as in floating point.

use crate::error::{Error, Result};
use num_traits::{Num, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;

/// Numeric type for probabilities: any ordered field element, floating or exact.
pub trait Prob: Num + Clone + PartialOrd + ToPrimitive + Debug {}
impl<T: Num + Clone + PartialOrd + ToPrimitive + Debug> Prob for T {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist<T> {
    pub probs: Vec<T>,
    pub normalized: bool,
}

impl<T: Prob> DiscreteDist<T> {
    /// Normalizes non-negative weights.
    pub fn from_weights(weights: Vec<T>) -> Result<Self> {
        if weights.iter().any(|w| *w < T::zero()) {
            return Err(Error::InvalidParams("negative weight".into()));
        }
        let total = sum(&weights);
        if total == T::zero() {
            return Err(Error::ZeroProbability);
        }
        let probs = weights.into_iter().map(|w| w / total.clone()).collect();
        Ok(Self { probs, normalized: true })
    }

    pub fn delta(n: usize, at: usize) -> Self {
        let probs = (0..n).map(|i| if i == at { T::one() } else { T::zero() }).collect();
        Self { probs, normalized: true }
    }

    pub fn uniform(n: usize) -> Self {
        let mut nn = T::zero();
        for _ in 0..n {
            nn = nn + T::one();
        }
        let probs = (0..n).map(|_| T::one() / nn.clone()).collect();
        Self { probs, normalized: true }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Largest absolute difference, evaluated in `f64`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a.to_f64().unwrap_or(f64::NAN) - b.to_f64().unwrap_or(f64::NAN)).abs())
            .fold(0.0, f64::max)
    }
}

fn sum<T: Prob>(xs: &[T]) -> T {
    xs.iter().cloned().fold(T::zero(), |a, b| a + b)
}

/// Bayesian mean estimate Σ_x ℘(x) v(x).
pub fn bme<T: Prob>(dist: &DiscreteDist<T>, values: &[T]) -> Result<T> {
    if values.len() != dist.len() {
        return Err(Error::LengthMismatch { expected: dist.len(), got: values.len() });
    }
    Ok(dist.probs.iter().zip(values).fold(T::zero(), |acc, (p, v)| acc + p.clone() * v.clone()))
}

/// Most likely configuration; ties go to the lowest index.
pub fn mle<T: Prob>(dist: &DiscreteDist<T>) -> usize {
    let mut best = 0;
    for (i, p) in dist.probs.iter().enumerate().skip(1) {
        if *p > dist.probs[best] {
            best = i;
        }
    }
    best
}

/// Hidden Markov testbed.  Each step draws the next configuration from `transition`,
/// then emits one observed and one unobserved symbol from the new configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyHmm<T> {
    pub n_states: usize,
    pub transition: Vec<Vec<T>>,
    pub obs_emission: Vec<Vec<T>>,
    pub unobs_emission: Vec<Vec<T>>,
    pub initial: DiscreteDist<T>,
    pub n_steps: usize,
}

pub const MAX_STATES: usize = 6;
pub const MAX_STEPS: usize = 8;

impl<T: Prob> ToyHmm<T> {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_states;
        if n == 0 || n > MAX_STATES || self.n_steps > MAX_STEPS {
            return Err(Error::InvalidParams(format!(
                "toy model limited to {MAX_STATES} states and {MAX_STEPS} steps"
            )));
        }
        let tol = 1e-12;
        let stochastic = |rows: &Vec<Vec<T>>, width: Option<usize>| {
            rows.len() == n
                && rows.iter().all(|r| {
                    width.is_none_or(|w| r.len() == w)
                        && !r.is_empty()
                        && r.iter().all(|p| *p >= T::zero())
                        && (sum(r).to_f64().unwrap_or(f64::NAN) - 1.0).abs() <= tol
                })
        };
        if !stochastic(&self.transition, Some(n)) {
            return Err(Error::InvalidParams("transition rows must be stochastic".into()));
        }
        if !stochastic(&self.obs_emission, None) || !stochastic(&self.unobs_emission, None) {
            return Err(Error::InvalidParams("emission rows must be stochastic".into()));
        }
        let w = self.obs_emission[0].len();
        if self.obs_emission.iter().any(|r| r.len() != w) {
            return Err(Error::InvalidParams("ragged observed emission table".into()));
        }
        if self.initial.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: self.initial.len() });
        }
        Ok(())
    }

    fn check_query(&self, observed: &[usize], tau: usize) -> Result<()> {
        self.validate()?;
        if observed.len() != self.n_steps {
            return Err(Error::LengthMismatch { expected: self.n_steps, got: observed.len() });
        }
        if tau > self.n_steps {
            return Err(Error::InvalidParams(format!("tau {tau} beyond {} steps", self.n_steps)));
        }
        if observed.iter().any(|&o| o >= self.obs_emission[0].len()) {
            return Err(Error::InvalidParams("observed symbol out of range".into()));
        }
        Ok(())
    }

    /// Unnormalized forward messages: joint probability of configuration k and o_1..o_k.
    fn forward(&self, observed: &[usize], upto: usize) -> Vec<T> {
        let n = self.n_states;
        let mut msg = self.initial.probs.clone();
        for &o in &observed[..upto] {
            msg = (0..n)
                .map(|j| {
                    let inflow = (0..n).fold(T::zero(), |a, i| a + msg[i].clone() * self.transition[i][j].clone());
                    inflow * self.obs_emission[j][o].clone()
                })
                .collect();
        }
        msg
    }

    /// Backward likelihood of o_{τ+1..N} given the configuration at τ.
    fn backward(&self, observed: &[usize], tau: usize) -> Vec<T> {
        let n = self.n_states;
        let mut msg = vec![T::one(); n];
        for &o in observed[tau..].iter().rev() {
            msg = (0..n)
                .map(|i| {
                    (0..n).fold(T::zero(), |a, j| {
                        a + self.transition[i][j].clone() * self.obs_emission[j][o].clone() * msg[j].clone()
                    })
                })
                .collect();
        }
        msg
    }
}

impl ToyHmm<f64> {
    /// Random instance with Dirichlet(1)-like rows.
    pub fn random<R: Rng>(rng: &mut R, n_states: usize, n_steps: usize, n_obs: usize, n_unobs: usize) -> Self {
        let mut row = |w: usize| -> Vec<f64> {
            let raw: Vec<f64> = (0..w).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        };
        let transition = (0..n_states).map(|_| row(n_states)).collect();
        let obs_emission = (0..n_states).map(|_| row(n_obs)).collect();
        let unobs_emission = (0..n_states).map(|_| row(n_unobs)).collect();
        let initial = DiscreteDist { probs: row(n_states), normalized: true };
        Self { n_states, transition, obs_emission, unobs_emission, initial, n_steps }
    }

    /// Draws an observed sequence from the model.
    pub fn sample_observed<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let draw = |rng: &mut R, p: &[f64]| {
            let mut x = rng.random::<f64>();
            for (i, &pi) in p.iter().enumerate() {
                if x < pi {
                    return i;
                }
                x -= pi;
            }
            p.len() - 1
        };
        let mut state = draw(rng, &self.initial.probs);
        (0..self.n_steps)
            .map(|_| {
                state = draw(rng, &self.transition[state]);
                draw(rng, &self.obs_emission[state])
            })
            .collect()
    }
}

/// Filtered posterior at τ given o_1..o_τ.
pub fn classical_filtered<T: Prob>(hmm: &ToyHmm<T>, observed: &[usize], tau: usize) -> Result<DiscreteDist<T>> {
    hmm.check_query(observed, tau)?;
    DiscreteDist::from_weights(hmm.forward(observed, tau))
}

/// Smoothed posterior at τ given the whole observed sequence (forward–backward).
pub fn classical_smoothed<T: Prob>(hmm: &ToyHmm<T>, observed: &[usize], tau: usize) -> Result<DiscreteDist<T>> {
    hmm.check_query(observed, tau)?;
    let fwd = hmm.forward(observed, tau);
    let bwd = hmm.backward(observed, tau);
    DiscreteDist::from_weights(fwd.into_iter().zip(bwd).map(|(a, b)| a * b).collect())
}

/// Classical analogue of the smoothed weak-value state: the normalized product of the
/// normalized filtered distribution with the retrodictive likelihood.
pub fn classical_swv<T: Prob>(hmm: &ToyHmm<T>, observed: &[usize], tau: usize) -> Result<DiscreteDist<T>> {
    let filtered = classical_filtered(hmm, observed, tau)?;
    let effect = hmm.backward(observed, tau);
    // Symmetrized product (Eρ + ρE)/2 of two diagonal matrices.
    let two = T::one() + T::one();
    let w = filtered
        .probs
        .into_iter()
        .zip(effect)
        .map(|(p, e)| (e.clone() * p.clone() + p * e) / two.clone())
        .collect();
    DiscreteDist::from_weights(w)
}

/// Estimators minimizing the expected negative fidelity and the expected negative
/// equality.  Both are the delta distribution at the smoothed maximum.
pub fn classical_nf_ne_estimators<T: Prob>(
    hmm: &ToyHmm<T>,
    observed: &[usize],
    tau: usize,
) -> Result<(DiscreteDist<T>, DiscreteDist<T>)> {
    let smoothed = classical_smoothed(hmm, observed, tau)?;
    let best = unique_argmax(&smoothed)?;
    let n = smoothed.len();
    Ok((DiscreteDist::delta(n, best), DiscreteDist::delta(n, best)))
}

/// Argmax, rejecting ties closer than 1e-12 relative.
pub fn unique_argmax<T: Prob>(dist: &DiscreteDist<T>) -> Result<usize> {
    let best = mle(dist);
    let top = dist.probs[best].to_f64().unwrap_or(f64::NAN);
    for (i, p) in dist.probs.iter().enumerate() {
        if i == best {
            continue;
        }
        let close = (top - p.to_f64().unwrap_or(f64::NAN)).abs() <= 1e-12 * top.abs();
        if *p == dist.probs[best] || close {
            return Err(Error::Degenerate(format!("configurations {best} and {i} tie")));
        }
    }
    Ok(best)
}

/// Classical fidelity (Σ√(p q))² between two distributions.
pub fn classical_fidelity(p: &DiscreteDist<f64>, q: &DiscreteDist<f64>) -> f64 {
    let s: f64 = p.probs.iter().zip(&q.probs).map(|(a, b)| (a * b).sqrt()).sum();
    s * s
}

/// Brute-force reference by enumeration of every hidden path and unobserved record.
pub mod oracle {
    use super::*;

    /// Refuse enumerations larger than this many joint histories.
    pub const MAX_HISTORIES: u64 = 20_000_000;

    /// Posterior over the configuration at τ by summing the joint probability of all
    /// configuration paths and all unobserved symbol sequences consistent with `observed`.
    pub fn enumerate_posterior<T: Prob>(hmm: &ToyHmm<T>, observed: &[usize], tau: usize) -> Result<DiscreteDist<T>> {
        hmm.check_query(observed, tau)?;
        let n = hmm.n_states;
        let steps = hmm.n_steps;
        let n_unobs = hmm.unobs_emission[0].len();
        let histories = (n as u64).saturating_pow(steps as u32 + 1).saturating_mul((n_unobs as u64).saturating_pow(steps as u32));
        if histories > MAX_HISTORIES {
            return Err(Error::OracleTooLarge(format!("{histories} joint histories")));
        }
        let mut weights = vec![T::zero(); n];
        let mut path = vec![0usize; steps + 1];
        let mut unobs = vec![0usize; steps];
        loop {
            let mut p = hmm.initial.probs[path[0]].clone();
            for k in 0..steps {
                let (a, b) = (path[k], path[k + 1]);
                p = p * hmm.transition[a][b].clone()
                    * hmm.obs_emission[b][observed[k]].clone()
                    * hmm.unobs_emission[b][unobs[k]].clone();
            }
            weights[path[tau]] = weights[path[tau]].clone() + p;
            if !odometer(&mut unobs, n_unobs) && !odometer(&mut path, n) {
                break;
            }
        }
        DiscreteDist::from_weights(weights)
    }

    /// Advances a mixed-radix counter; false when it wraps to all zeros.
    fn odometer(digits: &mut [usize], radix: usize) -> bool {
        for d in digits.iter_mut() {
            *d += 1;
            if *d < radix {
                return true;
            }
            *d = 0;
        }
        false
    }

    /// Candidate delta estimates with their expected negative-fidelity and
    /// negative-equality costs under `posterior`.
    pub fn delta_costs(posterior: &DiscreteDist<f64>) -> Vec<(f64, f64)> {
        let n = posterior.len();
        (0..n)
            .map(|cand| {
                let est = DiscreteDist::<f64>::delta(n, cand);
                let mut nf = 0.0;
                let mut ne = 0.0;
                for (x, &px) in posterior.probs.iter().enumerate() {
                    let truth = DiscreteDist::<f64>::delta(n, x);
                    nf -= px * classical_fidelity(&est, &truth);
                    ne -= px * if cand == x { 1.0 } else { 0.0 };
                }
                (nf, ne)
            })
            .collect()
    }
}

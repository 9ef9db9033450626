//! Self-check suites behind `qsmooth verify`.

use qsmooth::classical::{self, oracle, ToyHmm};
use qsmooth::costs::{cost_c5, cost_c6_c7, EstimatorId};
use qsmooth::fokker_planck::{q1_smoothed_state, smoothed_pdf, FokkerPlanck, SolverOptions, ThetaPdf};
use qsmooth::montecarlo::{weighted_ensemble, z_score};
use qsmooth::pipeline::{BlockRun, PipelineOptions};
use qsmooth::retrofilter::propagate_effect;
use qsmooth::trajectory::{filtered_trajectory, sample_ostensible_trajectory, waiting_time_covering};
use qsmooth::{Params, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

fn check(name: impl Into<String>, ok: bool, detail: String) -> Check {
    Check { name: name.into(), ok, detail }
}

/// Prints the table and returns whether every check passed.
pub fn print(checks: &[Check]) -> bool {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in checks {
        println!("{:<width$}  {}  {}", c.name, if c.ok { "PASS" } else { "FAIL" }, c.detail);
    }
    checks.iter().all(|c| c.ok)
}

/// Weighted ostensible ensemble against the filtered and smoothed density solutions.
pub fn mc_cross_check(params: &Params, n: usize) -> Result<Vec<Check>> {
    let eff = propagate_effect(params, params.block)?;
    let probes: Vec<f64> = (0..8).map(|i| params.block * (2 * i + 1) as f64 / 16.0).collect();
    let idx: Vec<usize> = probes.iter().map(|&t| params.steps_for(t)).collect();
    let mc = weighted_ensemble(params, &eff, &probes, n, params.seed)?;
    let filt = filtered_trajectory(params, params.steps());
    let solver = FokkerPlanck::new(params, SolverOptions::default())?;
    let mut smoothed = Vec::new();
    solver.evolve_with(&ThetaPdf::ground_state(params.theta_grid_n), params.steps(), 1, |k, pt| {
        if idx.contains(&k) {
            smoothed.push(q1_smoothed_state(&smoothed_pdf(pt, &eff.effects[k])?));
        }
        Ok(())
    })?;
    let mut out = Vec::new();
    for (i, e) in mc.iter().enumerate() {
        let (f, s) = (filt.states[idx[i]], smoothed[i]);
        let zf = z_score(e.filtered.y, e.filtered.se_y, f.y, 0.0).max(z_score(e.filtered.z, e.filtered.se_z, f.z, 0.0));
        let zs = z_score(e.smoothed.y, e.smoothed.se_y, s.y, 0.0).max(z_score(e.smoothed.z, e.smoothed.se_z, s.z, 0.0));
        out.push(check(format!("filtered t={:.3}", e.t), zf < 3.0, format!("{zf:.2} SE")));
        out.push(check(format!("smoothed t={:.3}", e.t), zs < 3.0, format!("{zs:.2} SE")));
    }
    Ok(out)
}

/// Random small HMMs: smoothed = SWV analogue, and the two delta-cost estimators agree
/// with each other and with brute-force enumeration.
pub fn classical_equivalence(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_swv, mut worst_oracle): (f64, f64) = (0.0, 0.0);
    let (mut unique, mut mismatches) = (0, 0);
    let trials = 200;
    for _ in 0..trials {
        let n = rng.random_range(2..=4);
        let steps = rng.random_range(1..=5);
        let hmm = ToyHmm::<f64>::random(&mut rng, n, steps, 2, 2);
        let obs = hmm.sample_observed(&mut rng);
        let tau = rng.random_range(0..=steps);
        let sm = classical::classical_smoothed(&hmm, &obs, tau)?;
        let swv = classical::classical_swv(&hmm, &obs, tau)?;
        let exact = oracle::enumerate_posterior(&hmm, &obs, tau)?;
        worst_swv = worst_swv.max(swv.max_abs_diff(&sm));
        worst_oracle = worst_oracle.max(sm.max_abs_diff(&exact));
        if let Ok((nf, ne)) = classical::classical_nf_ne_estimators(&hmm, &obs, tau) {
            unique += 1;
            let costs = oracle::delta_costs(&exact);
            let argmin = |f: fn(&(f64, f64)) -> f64| (0..costs.len()).min_by(|&a, &b| f(&costs[a]).total_cmp(&f(&costs[b])));
            let at = |d: &classical::DiscreteDist<f64>| d.probs.iter().position(|&x| x == 1.0);
            if nf != ne || at(&nf) != argmin(|c| c.0) || at(&ne) != argmin(|c| c.1) {
                mismatches += 1;
            }
        }
    }
    Ok(vec![
        check("smoothed = swv analogue", worst_swv < 1e-10, format!("max diff {worst_swv:.1e} over {trials} models")),
        check("smoothed = enumeration", worst_oracle < 1e-10, format!("max diff {worst_oracle:.1e}")),
        check("nF = nE = argmin", mismatches == 0, format!("{mismatches} mismatches on {unique} unique-maximum models")),
    ])
}

/// Structural properties of one reference run.
pub fn invariants(params: &Params) -> Result<Vec<Check>> {
    let mut out = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let worst = (0..50)
        .map(|_| sample_ostensible_trajectory(params, &mut rng))
        .flat_map(|tr| tr.thetas.into_iter().map(|th| (th.to_bloch().radius() - 1.0).abs()))
        .fold(0.0, f64::max);
    out.push(check("ostensible states pure", worst < 1e-9, format!("max |R-1| {worst:.1e} over 50 trajectories")));

    let filt = filtered_trajectory(params, params.steps());
    let r = filt.states.iter().map(|s| s.radius()).fold(0.0, f64::max);
    out.push(check("filtered inside sphere", r <= 1.0 + 1e-9, format!("max R {r:.6}")));

    let eff = propagate_effect(params, params.block)?;
    let neg = eff.effects.iter().filter(|e| !e.is_positive(1e-12)).count();
    out.push(check("effects positive", neg == 0, format!("{neg} of {} steps fail", eff.effects.len())));

    let wait = waiting_time_covering(params, 8.0, params.dt, 1.0 - 1e-6)?;
    let mass = wait.cdf.last().copied().unwrap_or(0.0);
    let monotone = wait.cdf.windows(2).all(|w| w[1] >= w[0] - 1e-15);
    out.push(check("waiting time cdf", monotone && (1.0 - 1e-6..=1.0 + 1e-9).contains(&mass), format!("{mass:.9} up to {}", wait.t_max())));

    let run = BlockRun::with_options(params, &PipelineOptions { skip_q4: true, ..Default::default() })?;
    let n = run.times.len();
    let q1 = run.estimates[&EstimatorId::Q1][1..n - 1].iter().map(|s| s.radius()).fold(0.0, f64::max);
    out.push(check("q1 strictly mixed", q1 < 1.0, format!("max R {q1:.4}")));
    for id in [EstimatorId::Q2, EstimatorId::Q3, EstimatorId::Q5, EstimatorId::Q6, EstimatorId::Q7] {
        let w = run.estimates[&id].iter().map(|s| (s.radius() - 1.0).abs()).fold(0.0, f64::max);
        out.push(check(format!("{id} pure"), w < 1e-4, format!("max |R-1| {w:.1e}")));
    }
    let q8 = run.estimates[&EstimatorId::Q8].iter().map(|s| s.radius()).fold(0.0, f64::max);
    out.push(check("q8 leaves the sphere", q8 > 1.0, format!("max R {q8:.4}")));

    let own = cost_c5(&run.q5.best.us, &run.q5.best.us, params, params.block)?;
    out.push(check("c5 of q5 is zero", own.abs() < 1e-12, format!("{own:.1e}")));

    let mean = run.local_record.record.values.iter().sum::<f64>() / run.local_record.record.len().max(1) as f64;
    let lo = cost_c6_c7(mean, mean);
    let hi = (0..20).map(|_| cost_c6_c7(mean + rng.random_range(-1.0..1.0), mean)).fold(f64::INFINITY, f64::min);
    out.push(check("c6/c7 minimised at the mean", lo <= hi, format!("{lo:.4} <= {hi:.4}")));
    Ok(out)
}

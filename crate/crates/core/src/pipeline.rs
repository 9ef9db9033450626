//! End-to-end runs: every estimator over one block with its per-time costs, and the
//! average of the costs over the waiting-time distribution of the block length.

use crate::cdj::{path_log_likelihood, q4_taus, solve_q4_with, solve_q5_with, CdjOptions, CdjSearch};
use crate::costs::{
    cost_c1_from_smoothed, cost_c2, cost_c3, cost_c6_c7, cost_c8_from_swv, invert_record, CostId, CostReport, EstimatorId,
    InvertedRecord,
};
use crate::error::{Error, Result};
use crate::fokker_planck::{q1_smoothed_state, q2_lustrated_state, q3_most_likely_state, smoothed_pdf, FokkerPlanck, SolverOptions, ThetaPdf};
use crate::real::{angle_diff, KahanSum, Real};
use crate::retrofilter::{effects_by_remaining_time, propagate_effect, EffectTable};
use crate::trajectory::{filtered_trajectory, waiting_time_covering, WaitingTime};
use crate::types::{BlochYZ, Effect, Params, PureAngle, UnknownRecord};
use crate::weak_value::{local_mean, q67_record_and_state, q8_swv_state, LocalRecordPath, DEFAULT_U_MAX};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Tuning for a block run.
#[derive(Clone, Debug)]
pub struct PipelineOptions<T> {
    /// Spacing of the end times at which the most-likely partial record is solved for.
    pub q4_spacing: T,
    /// Clip for the local-mean record.
    pub u_max: T,
    /// Clip for records recovered from state paths.
    pub inversion_u_max: T,
    pub solver: SolverOptions<T>,
    pub cdj: CdjOptions<T>,
    /// Skip the partial-record sweep (the most expensive part of a run).
    pub skip_q4: bool,
    /// Times at which the smoothed density is kept.
    pub pdf_snapshots: Vec<T>,
}

impl<T: Real> Default for PipelineOptions<T> {
    fn default() -> Self {
        Self {
            q4_spacing: T::lit(0.02),
            u_max: T::lit(DEFAULT_U_MAX),
            inversion_u_max: T::lit(1e12),
            solver: SolverOptions::default(),
            cdj: CdjOptions::default(),
            skip_q4: false,
            pdf_snapshots: Vec::new(),
        }
    }
}

/// Every estimator over one block, on the run's time grid.
#[derive(Clone, Debug)]
pub struct BlockRun<T> {
    pub params: Params<T>,
    pub times: Vec<T>,
    /// Estimator → state at each grid time.  Q6 and Q7 coincide and are both present.
    pub estimates: BTreeMap<EstimatorId, Vec<BlochYZ<T>>>,
    /// Angles of the pure estimators, as computed (not recovered from Bloch pairs).
    pub angles: BTreeMap<EstimatorId, Vec<PureAngle<T>>>,
    pub effects: EffectTable<T>,
    pub q4_taus: Vec<T>,
    pub q4_states: Vec<Option<PureAngle<T>>>,
    pub q5: CdjSearch<T>,
    pub local_record: LocalRecordPath<T>,
    /// Records recovered from the Q2, Q3 and Q4 paths.
    pub inverted: BTreeMap<EstimatorId, InvertedRecord<T>>,
    pub reports: BTreeMap<EstimatorId, CostReport<T>>,
    /// Log-likelihood deficit of each estimator's record relative to the optimum.
    pub c5: BTreeMap<EstimatorId, T>,
    /// (t, |Δθ|) for steps of the most-likely state larger than [`Q3_JUMP`].
    pub q3_jumps: Vec<(T, T)>,
    pub pdf_snapshots: Vec<(T, ThetaPdf<T>)>,
    pub flags: Vec<String>,
}

/// Threshold for calling a change of the most-likely angle between grid points a jump.
pub const Q3_JUMP: f64 = 0.3;

impl<T: Real> BlockRun<T> {
    pub fn new(params: &Params<T>) -> Result<Self> {
        Self::with_options(params, &PipelineOptions::default())
    }

    pub fn with_options(params: &Params<T>, opts: &PipelineOptions<T>) -> Result<Self> {
        params.validate()?;
        let steps = params.steps();
        let times = params.times();
        let mut flags = Vec::new();

        let filtered = filtered_trajectory(params, steps);
        let effects = propagate_effect(params, params.block)?;
        let q5 = solve_q5_with(params, params.block, &opts.cdj)?;
        if q5.best.divergent {
            flags.push("q5: divergent optimal path".into());
        }
        let local_record = q67_record_and_state(params, &filtered, &effects, opts.u_max)?;
        if !local_record.clipped.is_empty() {
            flags.push(format!("q6/q7: {} record entries clipped", local_record.clipped.len()));
        }

        let (taus, q4_states) = if opts.skip_q4 {
            (Vec::new(), Vec::new())
        } else {
            let taus = q4_taus(params.block, opts.q4_spacing);
            let res = solve_q4_with(params, &effects, &taus, &opts.cdj);
            let states: Vec<_> = res.into_iter().map(|(_, r)| r.ok().map(|s| s.best.final_theta())).collect();
            let missing = states.iter().filter(|s| s.is_none()).count();
            if missing > 0 {
                flags.push(format!("q4: no admissible extremum at {missing} end times"));
            }
            (taus, states)
        };
        let q4_path = interpolate_angles(params, &taus, &q4_states);
        if q4_path.is_some() {
            flags.push(format!("q4: interpolated to dt from spacing {}", opts.q4_spacing));
        }

        let q5_path: Vec<PureAngle<T>> = q5.best.thetas.clone();
        let q67_path: Vec<PureAngle<T>> = local_record.states.clone();

        // Sweep the forward density once; the smoothed density at each time is only
        // needed transiently.
        let solver = FokkerPlanck::new(params, opts.solver)?;
        let n_t = steps + 1;
        let mut q1 = Vec::with_capacity(n_t);
        let mut q2 = Vec::with_capacity(n_t);
        let mut q3 = Vec::with_capacity(n_t);
        let mut c3 = BTreeMap::<EstimatorId, Vec<T>>::new();
        let mut degenerate = 0usize;
        let snap_idx: Vec<usize> = opts.pdf_snapshots.iter().map(|&t| params.steps_for(t).min(steps)).collect();
        let mut snapshots = Vec::new();
        solver.evolve_with(&ThetaPdf::ground_state(params.theta_grid_n), steps, 1, |k, pt| {
            let sm = smoothed_pdf(pt, &effects.effects[k])?;
            let s = q1_smoothed_state(&sm);
            let a2 = q2_lustrated_state(&s)?;
            let m = q3_most_likely_state(&sm);
            if m.degenerate {
                degenerate += 1;
            }
            let mut push = |id: EstimatorId, th: PureAngle<T>| c3.entry(id).or_default().push(cost_c3(th, &sm));
            push(EstimatorId::Q2, a2);
            push(EstimatorId::Q3, m.theta);
            push(EstimatorId::Q5, q5_path[k]);
            push(EstimatorId::Q6, q67_path[k]);
            if let Some(p) = &q4_path {
                push(EstimatorId::Q4, p[k]);
            }
            if snap_idx.contains(&k) {
                snapshots.push((times[k], sm.clone()));
            }
            q1.push(s);
            q2.push(a2);
            q3.push(m.theta);
            Ok(())
        })?;
        if degenerate > 0 {
            flags.push(format!("q3: {degenerate} times with competing maxima"));
        }

        let mut q3_jumps = Vec::new();
        for k in 0..steps {
            let d = angle_diff(q3[k + 1].theta(), q3[k].theta()).abs();
            if d > T::lit(Q3_JUMP) {
                q3_jumps.push((times[k + 1], d));
            }
        }

        let swv: Vec<BlochYZ<T>> =
            (0..n_t).map(|k| q8_swv_state(&filtered.states[k], &effects.effects[k])).collect::<Result<_>>()?;
        let means: Vec<T> =
            (0..n_t).map(|k| local_mean(&filtered.states[k], &effects.effects[k], params)).collect::<Result<_>>()?;

        let to_bloch = |v: &[PureAngle<T>]| v.iter().map(|a| a.to_bloch()).collect::<Vec<_>>();
        let mut estimates = BTreeMap::new();
        estimates.insert(EstimatorId::Filtered, filtered.states.clone());
        estimates.insert(EstimatorId::Q1, q1.clone());
        estimates.insert(EstimatorId::Q2, to_bloch(&q2));
        estimates.insert(EstimatorId::Q3, to_bloch(&q3));
        if let Some(p) = &q4_path {
            estimates.insert(EstimatorId::Q4, to_bloch(p));
        }
        estimates.insert(EstimatorId::Q5, to_bloch(&q5_path));
        estimates.insert(EstimatorId::Q6, to_bloch(&q67_path));
        estimates.insert(EstimatorId::Q7, to_bloch(&q67_path));
        estimates.insert(EstimatorId::Q8, swv.clone());

        let mut angles = BTreeMap::new();
        angles.insert(EstimatorId::Q2, q2.clone());
        angles.insert(EstimatorId::Q3, q3.clone());
        if let Some(p) = &q4_path {
            angles.insert(EstimatorId::Q4, p.clone());
        }
        angles.insert(EstimatorId::Q5, q5_path.clone());
        angles.insert(EstimatorId::Q6, q67_path.clone());
        angles.insert(EstimatorId::Q7, q67_path.clone());

        let mut inverted = BTreeMap::new();
        inverted.insert(EstimatorId::Q2, invert_record(&q2, params, params.dt, opts.inversion_u_max)?);
        inverted.insert(EstimatorId::Q3, invert_record(&q3, params, params.dt, opts.inversion_u_max)?);
        if let Some(p) = &q4_path {
            inverted.insert(EstimatorId::Q4, invert_record(p, params, params.dt, opts.inversion_u_max)?);
        }
        let mut records: BTreeMap<EstimatorId, &UnknownRecord<T>> = inverted.iter().map(|(k, v)| (*k, &v.record)).collect();
        records.insert(EstimatorId::Q5, &q5.best.us);
        records.insert(EstimatorId::Q6, &local_record.record);
        records.insert(EstimatorId::Q7, &local_record.record);

        let mut c5 = BTreeMap::new();
        let best = path_log_likelihood(&q5.best.us, params, params.block)?;
        for (id, rec) in &records {
            let c = if *id == EstimatorId::Q5 { T::zero() } else { best - path_log_likelihood(rec, params, params.block)? };
            c5.insert(*id, c);
        }

        let mut reports = BTreeMap::new();
        for (&id, states) in &estimates {
            let mut rep = CostReport::new(id, times.clone());
            rep.per_time.insert(CostId::C1.name().into(), states.iter().zip(&q1).map(|(e, s)| cost_c1_from_smoothed(e, s)).collect());
            rep.per_time.insert(CostId::C2.name().into(), states.iter().zip(&q1).map(|(e, s)| cost_c2(e, s)).collect());
            rep.per_time.insert(CostId::C8.name().into(), states.iter().zip(&swv).map(|(e, w)| cost_c8_from_swv(e, w)).collect());
            let c3_key = if id == EstimatorId::Q7 { EstimatorId::Q6 } else { id };
            if let Some(v) = c3.get(&c3_key) {
                rep.per_time.insert(CostId::C3.name().into(), v.clone());
            }
            if let Some(rec) = records.get(&id) {
                let mut v: Vec<T> = rec.values.iter().zip(&means).map(|(&u, &m)| cost_c6_c7(u, m)).collect();
                v.push(T::nan());
                rep.per_time.insert(CostId::C67.name().into(), v);
            }
            if let Some(inv) = inverted.get(&id) {
                if inv.flagged.len() > 1 {
                    rep.flags.push(format!("{} recovered-record entries clipped", inv.flagged.len() - 1));
                }
            }
            if let Some(&c) = c5.get(&id) {
                rep.jump_averaged.insert(CostId::C5.name().into(), c);
            }
            reports.insert(id, rep);
        }

        Ok(Self {
            params: *params,
            times,
            estimates,
            angles,
            effects,
            q4_taus: taus,
            q4_states,
            q5,
            local_record,
            inverted,
            reports,
            c5,
            q3_jumps,
            pdf_snapshots: snapshots,
            flags,
        })
    }

    /// Largest jump of the most-likely angle within [t_lo, t_hi].
    pub fn q3_jump_in(&self, t_lo: T, t_hi: T) -> Option<(T, T)> {
        self.q3_jumps
            .iter()
            .copied()
            .filter(|(t, _)| *t >= t_lo && *t <= t_hi)
            .fold(None, |acc: Option<(T, T)>, j| match acc {
                Some(a) if a.1 >= j.1 => Some(a),
                _ => Some(j),
            })
    }
}

/// Linear interpolation of angles given on τ = spacing·i onto the dt grid, starting at
/// θ = π at t = 0.  Missing points are bridged.
fn interpolate_angles<T: Real>(params: &Params<T>, taus: &[T], states: &[Option<PureAngle<T>>]) -> Option<Vec<PureAngle<T>>> {
    if taus.is_empty() {
        return None;
    }
    let mut knots = vec![(T::zero(), T::PI())];
    for (&t, s) in taus.iter().zip(states) {
        if let Some(s) = s {
            let prev = knots.last().unwrap().1;
            knots.push((t, prev + angle_diff(s.theta(), prev)));
        }
    }
    let steps = params.steps();
    let mut out = Vec::with_capacity(steps + 1);
    let mut j = 0;
    for k in 0..=steps {
        let t = T::from_usize_lossy(k) * params.dt;
        while j + 2 < knots.len() && knots[j + 1].0 < t {
            j += 1;
        }
        let th = if knots.len() == 1 {
            knots[0].1
        } else {
            let (t0, a0) = knots[j];
            let (t1, a1) = knots[j + 1];
            let f = ((t - t0) / (t1 - t0)).max(T::zero()).min(T::one());
            a0 + f * (a1 - a0)
        };
        out.push(PureAngle::new(th));
    }
    Some(out)
}

/// Only the most-likely angle over a block; enough to look for its discontinuities.
pub fn q3_trajectory<T: Real>(params: &Params<T>) -> Result<Vec<PureAngle<T>>> {
    let effects = propagate_effect(params, params.block)?;
    let solver = FokkerPlanck::new(params, SolverOptions::default())?;
    let mut out = Vec::with_capacity(params.steps() + 1);
    solver.evolve_with(&ThetaPdf::ground_state(params.theta_grid_n), params.steps(), 1, |k, pt| {
        out.push(q3_most_likely_state(&smoothed_pdf(pt, &effects.effects[k])?).theta);
        Ok(())
    })?;
    Ok(out)
}

/// Block-length quadrature: midpoints x_j = (j − ½)·dx of the waiting-time CDF, and
/// sample times k·dt_avg within each block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadrature<T> {
    pub dx: T,
    pub dt_avg: T,
    #[serde(default)]
    pub rule: NodeRule,
}

/// Placement of the CDF nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeRule {
    /// x_j = (j − ½)·dx, j = 1..=J.
    #[default]
    Midpoint,
    /// x_j = j·dx, j = 1..J; the node at x = 1 (an infinite block) is dropped.
    RightEndpoint,
}

impl<T: Real> Default for Quadrature<T> {
    fn default() -> Self {
        Self { dx: T::lit(0.1), dt_avg: T::lit(0.05), rule: NodeRule::Midpoint }
    }
}

impl<T: Real> Quadrature<T> {
    pub fn nodes(&self) -> Vec<T> {
        let j = (T::one() / self.dx).round().to_usize().unwrap_or(0).max(1);
        match self.rule {
            NodeRule::Midpoint => (1..=j).map(|i| (T::from_usize_lossy(i) - T::lit(0.5)) * self.dx).collect(),
            NodeRule::RightEndpoint => (1..j).map(|i| T::from_usize_lossy(i) * self.dx).collect(),
        }
    }

    /// Block lengths T_j = G⁻¹(x_j), rounded to whole multiples of dt_avg (at least one).
    pub fn blocks(&self, wait: &WaitingTime<T>) -> Result<Vec<T>> {
        self.nodes()
            .into_iter()
            .map(|x| {
                let t = wait.inverse_cdf(x)?;
                let k = (t / self.dt_avg).round().max(T::one());
                Ok(k * self.dt_avg)
            })
            .collect()
    }

    fn validate(&self, dt: T) -> Result<usize> {
        if !(self.dx > T::zero() && self.dx <= T::one() && self.dt_avg > T::zero()) {
            return Err(Error::InvalidParams("quadrature needs 0 < dx ≤ 1 and dt_avg > 0".into()));
        }
        let stride = (self.dt_avg / dt).round();
        if stride < T::one() || ((stride * dt - self.dt_avg) / self.dt_avg).abs() > T::lit(1e-9) {
            return Err(Error::InvalidParams("dt_avg must be a whole multiple of dt".into()));
        }
        Ok(stride.to_usize().unwrap())
    }
}

/// Σ_j Σ_{k=0}^{K_j} f(T_j, k·dt_avg) / Σ_j (K_j + 1).
pub fn average_over_blocks<T: Real, F>(blocks: &[T], dt_avg: T, f: F) -> T
where
    F: Fn(T, T) -> T + Sync,
{
    let (num, den) = blocks
        .par_iter()
        .map(|&tb| {
            let kmax = (tb / dt_avg).round().to_usize().unwrap_or(0);
            let mut s = KahanSum::new();
            for k in 0..=kmax {
                s.add(f(tb, T::from_usize_lossy(k) * dt_avg));
            }
            (s.value(), kmax + 1)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((KahanSum::new(), 0usize), |(mut a, n), (v, m)| {
            a.add(v);
            (a, n + m)
        });
    num.value() / T::from_usize_lossy(den)
}

/// Estimators included in the block-length average.
pub const AVERAGED_ESTIMATORS: [EstimatorId; 6] =
    [EstimatorId::Filtered, EstimatorId::Q1, EstimatorId::Q2, EstimatorId::Q3, EstimatorId::Q6, EstimatorId::Q8];

/// Costs included in the block-length average.
pub const AVERAGED_COSTS: [CostId; 4] = [CostId::C1, CostId::C2, CostId::C3, CostId::C8];

fn applicable(cost: CostId, est: EstimatorId) -> bool {
    cost != CostId::C3 || est.is_pure()
}

/// Costs averaged over block lengths and times.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JumpAverage<T> {
    pub params: Params<T>,
    pub quadrature: Quadrature<T>,
    pub blocks: Vec<T>,
    /// Keyed by "cost/estimator".
    pub values: BTreeMap<String, T>,
    pub flags: Vec<String>,
}

fn key(cost: CostId, est: EstimatorId) -> String {
    let est = if est == EstimatorId::Q7 { EstimatorId::Q6 } else { est };
    format!("{}/{}", cost.name(), est.name())
}

impl<T: Real> JumpAverage<T> {
    pub fn get(&self, cost: CostId, est: EstimatorId) -> Option<T> {
        self.values.get(&key(cost, est)).copied()
    }

    /// Rows C1, C2, C3, C8 against columns Q1, Q2, Q3, Q6/7, Q8.
    pub fn table(&self) -> CostTable<T> {
        let cols = vec![EstimatorId::Q1, EstimatorId::Q2, EstimatorId::Q3, EstimatorId::Q6, EstimatorId::Q8];
        let rows = AVERAGED_COSTS.to_vec();
        let values = rows.iter().map(|&c| cols.iter().map(|&e| self.get(c, e)).collect()).collect();
        CostTable { rows, cols, values }
    }
}

/// A cost × estimator matrix; `None` where the cost does not apply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTable<T> {
    pub rows: Vec<CostId>,
    pub cols: Vec<EstimatorId>,
    pub values: Vec<Vec<Option<T>>>,
}

impl<T: Real> CostTable<T> {
    /// Column of the smallest applicable entry in each row.
    pub fn row_minimum(&self, row: usize) -> Option<usize> {
        let mut best: Option<(usize, T)> = None;
        for (j, v) in self.values[row].iter().enumerate() {
            if let Some(v) = *v {
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((j, v));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    /// Whether every row is minimized by the estimator designed for that cost.
    pub fn minima_on_diagonal(&self) -> bool {
        (0..self.rows.len()).all(|i| self.row_minimum(i).map(|j| self.cols[j]) == Some(self.rows[i].optimal_estimator()))
    }

    /// Largest |difference| over entries present in both tables.
    pub fn max_deviation(&self, other: &[[Option<f64>; 5]; 4]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.values.iter().enumerate().take(4) {
            for (j, v) in row.iter().enumerate().take(5) {
                if let (Some(a), Some(b)) = (v, other[i][j]) {
                    worst = worst.max((a.to_f64_lossy() - b).abs());
                }
            }
        }
        worst
    }
}

/// One block-length average of `cost` for `estimator`.
pub fn jump_time_average<T: Real>(cost: CostId, estimator: EstimatorId, params: &Params<T>, quadrature: &Quadrature<T>) -> Result<T> {
    let avg = jump_time_average_all(params, quadrature)?;
    avg.get(cost, estimator)
        .ok_or_else(|| Error::InvalidParams(format!("{cost} is not averaged for {estimator}")))
}

/// All averaged costs at once.  A single forward density run to the longest block and
/// a single table of effects by remaining time serve every block: the effect at time t
/// in a block of length T_j is the entry for remaining time T_j − t.
pub fn jump_time_average_all<T: Real>(params: &Params<T>, quadrature: &Quadrature<T>) -> Result<JumpAverage<T>> {
    params.validate()?;
    let stride = quadrature.validate(params.dt)?;
    let nodes = quadrature.nodes();
    let x_top = *nodes.last().unwrap();
    let wait = waiting_time_covering(params, T::lit(8.0), params.dt, x_top + T::lit(0.5) * (T::one() - x_top))?;
    let blocks = quadrature.blocks(&wait)?;
    let k_max = blocks.iter().map(|&b| (b / quadrature.dt_avg).round().to_usize().unwrap()).max().unwrap();
    let fine_max = k_max * stride;

    let filtered = filtered_trajectory(params, fine_max);
    let remaining = effects_by_remaining_time(Effect::final_jump(params), params, fine_max)?;
    let solver = FokkerPlanck::new(params, SolverOptions::default())?;
    let mut forward = Vec::with_capacity(k_max + 1);
    solver.evolve_with(&ThetaPdf::ground_state(params.theta_grid_n), fine_max, stride, |_, p| {
        forward.push(p.clone());
        Ok(())
    })?;

    let pairs: Vec<(CostId, EstimatorId)> = AVERAGED_COSTS
        .iter()
        .flat_map(|&c| AVERAGED_ESTIMATORS.iter().map(move |&e| (c, e)))
        .filter(|&(c, e)| applicable(c, e))
        .collect();

    let per_block: Vec<Result<(Vec<KahanSum<T>>, usize, usize, usize)>> = blocks
        .par_iter()
        .map(|&tb| {
            let kb = (tb / quadrature.dt_avg).round().to_usize().unwrap();
            let steps = kb * stride;
            let table = EffectTable {
                effects: remaining.effects[..=steps].iter().rev().copied().collect(),
                log_scale: remaining.log_scale[..=steps].iter().rev().copied().collect(),
                dt: params.dt,
            };
            let path = q67_record_and_state(params, &filtered, &table, T::lit(DEFAULT_U_MAX))?;
            let mut sums = vec![KahanSum::new(); pairs.len()];
            let mut degenerate = 0;
            for k in 0..=kb {
                let m = k * stride;
                let e = &table.effects[m];
                let sm = smoothed_pdf(&forward[k], e)?;
                let s = q1_smoothed_state(&sm);
                let q2 = q2_lustrated_state(&s)?;
                let q3 = q3_most_likely_state(&sm);
                if q3.degenerate {
                    degenerate += 1;
                }
                let q67 = path.states[m];
                let w = q8_swv_state(&filtered.states[m], e)?;
                for (i, &(c, est)) in pairs.iter().enumerate() {
                    let (state, angle) = match est {
                        EstimatorId::Filtered => (filtered.states[m], None),
                        EstimatorId::Q1 => (s, None),
                        EstimatorId::Q2 => (q2.to_bloch(), Some(q2)),
                        EstimatorId::Q3 => (q3.theta.to_bloch(), Some(q3.theta)),
                        EstimatorId::Q6 => (q67.to_bloch(), Some(q67)),
                        EstimatorId::Q8 => (w, None),
                        _ => unreachable!(),
                    };
                    let v = match c {
                        CostId::C1 => cost_c1_from_smoothed(&state, &s),
                        CostId::C2 => cost_c2(&state, &s),
                        CostId::C3 => cost_c3(angle.expect("pure estimator"), &sm),
                        CostId::C8 => cost_c8_from_swv(&state, &w),
                        _ => unreachable!(),
                    };
                    sums[i].add(v);
                }
            }
            Ok((sums, kb + 1, degenerate, path.clipped.len()))
        })
        .collect();

    let mut totals = vec![KahanSum::new(); pairs.len()];
    let mut count = 0usize;
    let (mut degenerate, mut clipped) = (0, 0);
    for r in per_block {
        let (sums, n, d, c) = r?;
        for (t, s) in totals.iter_mut().zip(sums) {
            *t = (*t).merge(s);
        }
        count += n;
        degenerate += d;
        clipped += c;
    }
    let mut flags = Vec::new();
    if degenerate > 0 {
        flags.push(format!("q3: {degenerate} sample times with competing maxima"));
    }
    if clipped > 0 {
        flags.push(format!("q6/q7: {clipped} record entries clipped"));
    }
    let values = pairs
        .iter()
        .zip(&totals)
        .map(|(&(c, e), s)| (key(c, e), s.value() / T::from_usize_lossy(count)))
        .collect();
    Ok(JumpAverage { params: *params, quadrature: *quadrature, blocks, values, flags })
}

/// Block-length averages for each observed fraction γ_o/γ of the total decay, with
/// everything else taken from `base`.
pub fn scan_splits<T: Real>(base: &Params<T>, fractions: &[T], quadrature: &Quadrature<T>) -> Result<Vec<(T, JumpAverage<T>)>> {
    fractions
        .iter()
        .map(|&f| {
            let g = base.gamma();
            let p = Params { gamma_o: f * g, gamma_u: (T::one() - f) * g, ..*base };
            Ok((f, jump_time_average_all(&p, quadrature)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_cost_averages_to_itself() {
        let blocks = [0.05, 0.4, 1.35, 7.0];
        assert!((average_over_blocks(&blocks, 0.05, |_, _| 2.5f64) - 2.5).abs() < 1e-14);
        // Weighted by the number of sample times in each block.
        let v: f64 = average_over_blocks(&[0.05, 0.15], 0.05, |tb, _| if tb < 0.1 { 1.0 } else { 0.0 });
        assert!((v - 2.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn quadrature_nodes_and_validation() {
        let q = Quadrature::<f64>::default();
        let n = q.nodes();
        assert_eq!(n.len(), 10);
        assert!((n[0] - 0.05).abs() < 1e-15 && (n[9] - 0.95).abs() < 1e-15);
        assert!(q.validate(1e-3).is_ok());
        assert!(Quadrature { dx: 0.1, dt_avg: 0.0505, rule: NodeRule::Midpoint }.validate(1e-3).is_err());
    }

    #[test]
    fn interpolation_passes_through_knots() {
        let p = Params::<f64>::reference(0.5).with_block(0.1);
        let taus = [0.04, 0.08, 0.1];
        let st = [Some(PureAngle::new(3.0)), None, Some(PureAngle::new(-3.0))];
        let path = interpolate_angles(&p, &taus, &st).unwrap();
        assert_eq!(path.len(), 101);
        assert!(angle_diff(path[40].theta(), 3.0).abs() < 1e-12);
        assert!(angle_diff(path[100].theta(), -3.0).abs() < 1e-12);
        // Crossing ±π takes the short way round.
        assert!(angle_diff(path[70].theta(), 3.0 + 0.5 * (std::f64::consts::TAU - 6.0)).abs() < 1e-9);
    }

    #[test]
    fn short_block_run_is_consistent() {
        let p = Params::<f64>::reference(0.5).with_block(1.0).with_grid(512);
        let run = BlockRun::with_options(&p, &PipelineOptions { q4_spacing: 0.1, ..Default::default() }).unwrap();
        let n = run.times.len();
        for (id, states) in &run.estimates {
            assert_eq!(states.len(), n, "{id}");
        }
        for rep in run.reports.values() {
            for v in rep.per_time.values() {
                assert_eq!(v.len(), n);
            }
        }
        assert_eq!(run.c5[&EstimatorId::Q5], 0.0);
        for (id, c) in &run.c5 {
            assert!(*c >= -1e-9, "{id}: {c}");
        }
        // Each designated estimator is best at every time.
        let per = |e: EstimatorId, c: CostId| run.reports[&e].per_time[c.name()].clone();
        for k in 0..n {
            for e in [EstimatorId::Filtered, EstimatorId::Q2, EstimatorId::Q3, EstimatorId::Q5, EstimatorId::Q6, EstimatorId::Q8] {
                assert!(per(EstimatorId::Q1, CostId::C1)[k] <= per(e, CostId::C1)[k] + 1e-12);
                assert!(per(EstimatorId::Q8, CostId::C8)[k] <= per(e, CostId::C8)[k] + 1e-12);
                // Fidelity is bounded only over physical states; the indefinite SWV can exceed it.
                if e != EstimatorId::Q8 {
                    assert!(per(EstimatorId::Q2, CostId::C2)[k] <= per(e, CostId::C2)[k] + 1e-12);
                }
            }
            for e in [EstimatorId::Q2, EstimatorId::Q4, EstimatorId::Q5, EstimatorId::Q6] {
                assert!(per(EstimatorId::Q3, CostId::C3)[k] <= per(e, CostId::C3)[k] + 1e-9);
            }
            if k + 1 < n {
                for e in [EstimatorId::Q2, EstimatorId::Q3, EstimatorId::Q4, EstimatorId::Q5] {
                    assert!(per(EstimatorId::Q6, CostId::C67)[k] <= per(e, CostId::C67)[k] + 1e-12);
                }
            }
        }
    }
}

//! Numerical diagnostics of manifold-turnpike behaviour: time spent outside
//! an ε-tube around the trim manifold, strict dissipativity with constant
//! storage and quadratic rate, cost controllability and average cost.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MechModel, State, Trajectory};
use crate::nlp::{solve_sqp, NlpProblem, NlpStatus, SqpOptions};
use crate::ocp::{solve_ocp, OcpOptions, OcpSpec, StageCost};

/// Time spent at distance more than `epsilon` from the turnpike set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnpikeReport {
    pub epsilon: f64,
    /// Measure of `{t | dist(t) > ε}`.
    pub dwell_measure: f64,
    /// Maximal intervals with `dist > ε`, sorted and disjoint.
    pub excursions: Vec<(f64, f64)>,
    pub horizon: f64,
    /// Bound on the dwell measure; for a sweep, the largest dwell observed.
    pub bound_estimate: Option<f64>,
}

/// Dwell measure of sampled distances, interpolated linearly between nodes.
pub fn dwell_measure_samples(times: &[f64], dist: &[f64], epsilon: f64) -> Result<TurnpikeReport> {
    if times.is_empty() || times.len() != dist.len() {
        return Err(Error::Dimension(format!("{} times and {} distances", times.len(), dist.len())));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let horizon = times[times.len() - 1] - times[0];
    let mut excursions: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<f64> = if dist[0] > epsilon { Some(times[0]) } else { None };
    for i in 0..times.len() - 1 {
        let (t0, t1, d0, d1) = (times[i], times[i + 1], dist[i], dist[i + 1]);
        let cross = || t0 + (epsilon - d0) / (d1 - d0) * (t1 - t0);
        match (d0 > epsilon, d1 > epsilon) {
            (false, true) => open = Some(cross()),
            (true, false) => {
                if let Some(a) = open.take() {
                    excursions.push((a, cross()));
                }
            }
            _ => {}
        }
    }
    if let Some(a) = open {
        excursions.push((a, times[times.len() - 1]));
    }
    excursions.retain(|(a, b)| b > a);
    let dwell = excursions.iter().map(|(a, b)| b - a).sum::<f64>().clamp(0.0, horizon);
    Ok(TurnpikeReport { epsilon, dwell_measure: dwell, excursions, horizon, bound_estimate: None })
}

/// Dwell measure of `distance(x_i, u_i)` along a trajectory. The control at
/// the last node repeats the last interval's.
pub fn dwell_measure<F>(traj: &Trajectory, distance: F, epsilon: f64) -> Result<TurnpikeReport>
where
    F: Fn(&State, &[f64]) -> f64,
{
    traj.validate()?;
    let dist: Vec<f64> = (0..traj.len()).map(|i| distance(&traj.states[i], traj.control_at_node(i))).collect();
    dwell_measure_samples(&traj.times, &dist, epsilon)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanMember {
    pub horizon: f64,
    pub intervals: usize,
    pub status: NlpStatus,
    pub objective: f64,
    pub report: TurnpikeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanVerdict {
    /// `max dwell / min dwell`; `1` when all dwell measures vanish.
    pub ratio: f64,
    /// Relative increase from the shortest to the longest horizon when the
    /// dwell measures increase strictly with `T`, else `0`.
    pub monotone_growth: f64,
    pub bounded: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnpikeScan {
    pub epsilon: f64,
    pub members: Vec<ScanMember>,
    pub verdict: Option<ScanVerdict>,
    /// First failure; members from that horizon on are dropped.
    pub error: Option<String>,
}

pub const MAX_DWELL_RATIO: f64 = 1.5;
pub const MAX_MONOTONE_GROWTH: f64 = 0.2;

/// Verdict over dwell measures ordered by increasing horizon.
pub fn scan_verdict(dwells: &[f64]) -> ScanVerdict {
    let max = dwells.iter().cloned().fold(0.0_f64, f64::max);
    let min = dwells.iter().cloned().fold(f64::INFINITY, f64::min);
    let ratio = if max == 0.0 {
        1.0
    } else if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    };
    let increasing = dwells.len() > 1 && dwells.windows(2).all(|w| w[1] > w[0]);
    let monotone_growth = if increasing { dwells[dwells.len() - 1] / dwells[0] - 1.0 } else { 0.0 };
    ScanVerdict { ratio, monotone_growth, bounded: ratio <= MAX_DWELL_RATIO && monotone_growth <= MAX_MONOTONE_GROWTH }
}

/// Solves `base` over each horizon, keeping its step size, and measures the
/// dwell outside the ε-tube of `distance`. Solves run in parallel.
pub fn turnpike_scan<M, F>(
    base: &OcpSpec<M>,
    horizons: &[f64],
    epsilon: f64,
    distance: F,
    opts: &OcpOptions,
) -> Result<TurnpikeScan>
where
    M: MechModel + Clone,
    F: Fn(&State, &[f64]) -> f64 + Sync,
{
    if horizons.is_empty() {
        return Err(Error::InvalidArgument("no horizons to scan".into()));
    }
    let mut sorted = horizons.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = base.step();
    let results: Vec<Result<ScanMember>> = sorted
        .par_iter()
        .map(|&t| {
            let mut spec = base.clone();
            spec.horizon = t;
            spec.intervals = (t / h).round().max(1.0) as usize;
            let sol = solve_ocp(&spec, opts)?;
            if !sol.converged() {
                return Err(Error::NotConverged(format!("horizon {t}: status {}", sol.status)));
            }
            let report = dwell_measure(&sol.trajectory, &distance, epsilon)?;
            Ok(ScanMember { horizon: t, intervals: spec.intervals, status: sol.status, objective: sol.objective, report })
        })
        .collect();

    let mut members = Vec::new();
    let mut error = None;
    for r in results {
        match r {
            Ok(m) => members.push(m),
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    let bound = members.iter().map(|m| m.report.dwell_measure).fold(0.0_f64, f64::max);
    for m in &mut members {
        m.report.bound_estimate = Some(bound);
    }
    let verdict = if error.is_none() {
        Some(scan_verdict(&members.iter().map(|m| m.report.dwell_measure).collect::<Vec<_>>()))
    } else {
        None
    };
    Ok(TurnpikeScan { epsilon, members, verdict, error })
}

impl TurnpikeScan {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["T", "dwell", "epsilon", "objective"])?;
        for m in &self.members {
            wr.write_record(&[
                m.horizon.to_string(),
                m.report.dwell_measure.to_string(),
                self.epsilon.to_string(),
                m.objective.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Stage costs and manifold distances of one trajectory on its grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DissipativitySample {
    pub label: String,
    pub times: Vec<f64>,
    /// `ℓ(x_i, u_i)` per interval.
    pub stage_costs: Vec<f64>,
    /// `dist(x_i)` per interval.
    pub distances: Vec<f64>,
}

impl DissipativitySample {
    pub fn from_trajectory<F>(label: &str, traj: &Trajectory, stage_costs: Vec<f64>, distance: F) -> Result<Self>
    where
        F: Fn(&State, &[f64]) -> f64,
    {
        traj.validate()?;
        if stage_costs.len() != traj.controls.len() {
            return Err(Error::Dimension(format!(
                "{} stage costs for {} intervals",
                stage_costs.len(),
                traj.controls.len()
            )));
        }
        let distances = traj.controls.iter().enumerate().map(|(i, u)| distance(&traj.states[i], u)).collect();
        Ok(Self { label: label.to_string(), times: traj.times.clone(), stage_costs, distances })
    }

    /// `Σ ℓ_i h_i`.
    pub fn total_cost(&self) -> f64 {
        self.stage_costs.iter().enumerate().map(|(i, l)| l * (self.times[i + 1] - self.times[i])).sum()
    }
}

/// Dissipation inequality with storage `S ≡ s0` and rate `α(r) = c r²`,
/// checked on every prefix of every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativityCertificate {
    pub alpha_coeff: f64,
    pub storage: f64,
    /// `min_j s0 + Σ_{i<j} (ℓ_i − c d_i²) h_i`.
    pub worst_margin: f64,
    pub horizons: Vec<f64>,
    /// Labels of the trajectories the certificate covers.
    pub samples: Vec<String>,
    pub tol: f64,
    pub valid: bool,
}

fn worst_margin(samples: &[DissipativitySample], c: f64, s0: f64) -> f64 {
    let mut worst = f64::INFINITY;
    for smp in samples {
        let mut acc = s0;
        for i in 0..smp.stage_costs.len() {
            let h = smp.times[i + 1] - smp.times[i];
            acc += (smp.stage_costs[i] - c * smp.distances[i] * smp.distances[i]) * h;
            worst = worst.min(acc);
        }
    }
    worst
}

pub fn dissipativity_margin(samples: &[DissipativitySample], c: f64, s0: f64, tol: f64) -> DissipativityCertificate {
    let worst = if samples.is_empty() { 0.0 } else { worst_margin(samples, c, s0) };
    DissipativityCertificate {
        alpha_coeff: c,
        storage: s0,
        worst_margin: worst,
        horizons: samples.iter().map(|s| s.times.last().copied().unwrap_or(0.0) - s.times[0]).collect(),
        samples: samples.iter().map(|s| s.label.clone()).collect(),
        tol,
        valid: worst >= -tol,
    }
}

/// Largest `c` whose certificate is valid, bracketed to `1e-6` relative.
/// Returns `None` when even `c = 0` fails and `f64::INFINITY` when every
/// sample stays on the manifold.
pub fn fit_max_c(samples: &[DissipativitySample], s0: f64, tol: f64) -> Option<f64> {
    let ok = |c: f64| worst_margin(samples, c, s0) >= -tol;
    if !ok(0.0) {
        return None;
    }
    let mut hi = 1.0;
    while ok(hi) {
        hi *= 2.0;
        if hi > 1e15 {
            return Some(f64::INFINITY);
        }
    }
    let mut lo = if ok(hi / 2.0) { hi / 2.0 } else { 0.0 };
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// Dwell bound `(c1 + c2) / α(ε)` with `c1 = s0`, `c2` the largest total
/// cost and `α(ε) = c ε²`.
pub fn dwell_bound(cert: &DissipativityCertificate, max_total_cost: f64, epsilon: f64) -> f64 {
    (cert.storage + max_total_cost) / (cert.alpha_coeff * epsilon * epsilon)
}

/// `(1/T) Σ ℓ_i h_i`.
pub fn average_cost(times: &[f64], stage_costs: &[f64]) -> Result<f64> {
    if times.len() != stage_costs.len() + 1 || times.len() < 2 {
        return Err(Error::Dimension(format!("{} times for {} stage costs", times.len(), stage_costs.len())));
    }
    let horizon = times[times.len() - 1] - times[0];
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument("degenerate horizon".into()));
    }
    let total: f64 = stage_costs.iter().enumerate().map(|(i, l)| l * (times[i + 1] - times[i])).sum();
    Ok(total / horizon)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllabilityEntry {
    pub x0: State,
    pub horizon: f64,
    pub value: f64,
    pub l_star: f64,
    pub ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostControllabilityProbe {
    pub entries: Vec<ControllabilityEntry>,
    /// `(T, B(T))` with `B` the running maximum of the ratios over `T`.
    pub bound: Vec<(f64, f64)>,
}

struct PointwiseCost<'a, M: ?Sized> {
    model: &'a M,
    cost: &'a StageCost,
    x: State,
}

impl<M: MechModel + ?Sized> NlpProblem for PointwiseCost<'_, M> {
    fn n(&self) -> usize {
        self.model.control_dim()
    }
    fn n_eq(&self) -> usize {
        0
    }
    fn objective(&self, u: &[f64]) -> f64 {
        self.cost.value(self.model, &self.x, u)
    }
    fn gradient(&self, u: &[f64], g: &mut [f64]) {
        g.copy_from_slice(&self.cost.gradient(self.model, &self.x, u).u);
    }
}

/// `ℓ*(x) = min_u ℓ(x, u)`.
pub fn min_stage_cost<M: MechModel + ?Sized>(model: &M, cost: &StageCost, x: &State, opts: &SqpOptions) -> Result<f64> {
    let u0 = crate::ocp::control_reference(cost, model.control_dim());
    let sol = solve_sqp(&PointwiseCost { model, cost, x: *x }, &u0, opts)?;
    if sol.status != NlpStatus::Converged {
        return Err(Error::NotConverged(format!("pointwise cost minimization: {}", sol.status)));
    }
    Ok(sol.objective)
}

/// Optimal values `V_T(x0)` against `ℓ*(x0)` over initial states and
/// horizons. The stage cost must be nonnegative.
pub fn cost_controllability_probe<M: MechModel + Clone>(
    base: &OcpSpec<M>,
    x0_list: &[State],
    horizons: &[f64],
    opts: &OcpOptions,
) -> Result<CostControllabilityProbe> {
    let mut sorted = horizons.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = base.step();
    let tol = opts.sqp.tol.max(1e-12);
    let mut entries = Vec::new();
    for x0 in x0_list {
        let l_star = min_stage_cost(&base.model, &base.cost, x0, &opts.sqp)?;
        for &t in &sorted {
            let mut spec = base.clone();
            spec.x0 = *x0;
            spec.horizon = t;
            spec.intervals = (t / h).round().max(1.0) as usize;
            let sol = solve_ocp(&spec, opts)?;
            let value = sol.objective;
            let (ratio, note) = if l_star > 1e-12 {
                (Some(value / l_star), None)
            } else if value > tol {
                (None, Some("ratio undefined: on cost zero-set".to_string()))
            } else {
                (None, Some("on cost zero-set".to_string()))
            };
            entries.push(ControllabilityEntry { x0: *x0, horizon: t, value, l_star, ratio, note });
        }
    }
    let mut bound = Vec::new();
    let mut running = 0.0_f64;
    for &t in &sorted {
        for e in entries.iter().filter(|e| e.horizon == t) {
            if let Some(r) = e.ratio {
                running = running.max(r);
            }
        }
        bound.push((t, running));
    }
    Ok(CostControllabilityProbe { entries, bound })
}

//! Sampling-based verification of partial error bounds, uniform weak sharp
//! minima, and partial calmness near a reference solution. All estimates are
//! deterministic for a fixed seed: parameters are drawn from a fixed x-grid
//! (so lower-level solves are shared through a cache) and every logged sample
//! carries its recomputable numerator and denominator.

use crate::continuation::{newton_correct, solve_lower_global, trace_branch, GlobalSolve, TraceOptions};
use crate::classify::{classify_simplicity, SimplicityCase};
use crate::multipliers::{stationarity_status, BStatus};
use crate::problem::BilevelProblem;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::HashMap;
use std::rc::Rc;

/// Which stationarity set the samples are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Condition {
    /// Fritz-John points not certified to be outside the B-stationary set.
    #[serde(rename = "b-surrogate")]
    BSurrogate,
    #[serde(rename = "kkt")]
    Kkt,
    #[serde(rename = "fj")]
    Fj,
    #[serde(rename = "gc")]
    Gc,
    /// The plain feasible set of the lower level.
    #[serde(rename = "f")]
    Feasible,
}

impl std::str::FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Condition, String> {
        match s {
            "b-surrogate" | "b" => Ok(Condition::BSurrogate),
            "kkt" => Ok(Condition::Kkt),
            "fj" => Ok(Condition::Fj),
            "gc" => Ok(Condition::Gc),
            "f" | "feasible" => Ok(Condition::Feasible),
            other => Err(format!(
                "unknown condition `{other}` (expected b-surrogate, kkt, fj, gc, or f)"
            )),
        }
    }
}

/// What the ratio numerator measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Metric {
    /// Distance from `(x, y)` to the sampled solution graph.
    #[serde(rename = "graph-distance")]
    Graph,
    /// Distance from `y` to the solution set at the same parameter.
    #[serde(rename = "solution-distance")]
    Solution,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioSample {
    pub x: f64,
    pub y: Vec<f64>,
    pub numerator: f64,
    /// Optimality gap `f(x, y) - V(x)`.
    pub denominator: f64,
    /// `numerator / denominator` when the gap is meaningfully positive.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum ModulusVerdict {
    HoldsWithModulus { l: f64 },
    /// Every sampled point of the condition set is itself a solution.
    NumeratorZero,
    /// The ratio sup kept growing as the sample pool quadrupled.
    UnboundedSuspect { l_low: f64, l_full: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct PebReport {
    pub condition: Condition,
    pub metric: Metric,
    pub radius: f64,
    pub requested_samples: usize,
    /// Samples admitted into the condition set.
    pub collected: usize,
    /// Samples contributing a well-defined ratio.
    pub usable: usize,
    /// Samples dropped for an infeasible parameter, a gap above `v_max`,
    /// or a negative gap beyond tolerance.
    pub dropped: usize,
    /// Estimated modulus (0 under the numerator-zero verdict).
    pub modulus: f64,
    /// Sup of ratios over the samples whose gap is at least the median gap.
    pub l_low: f64,
    /// Sup of ratios over all usable samples.
    pub l_full: f64,
    pub worst: Option<RatioSample>,
    pub verdict: ModulusVerdict,
    pub samples: Vec<RatioSample>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalmnessWitness {
    pub x: f64,
    pub y: Vec<f64>,
    /// `F(x, y) - F(x_bar, y_bar)`.
    pub objective_excess: f64,
    /// `f(x, y) - V(x)`.
    pub penalty: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalmnessReport {
    pub mu: f64,
    pub radius: f64,
    pub condition: Condition,
    pub samples: usize,
    /// Minimum of `F + mu (f - V) - F(x_bar, y_bar)` over the samples.
    pub min_value: f64,
    pub holds: bool,
    pub witness: Option<CalmnessWitness>,
}

struct SolveCache<'a> {
    p: &'a BilevelProblem,
    map: HashMap<u64, Option<Rc<GlobalSolve>>>,
}

impl<'a> SolveCache<'a> {
    fn new(p: &'a BilevelProblem) -> SolveCache<'a> {
        SolveCache { p, map: HashMap::new() }
    }

    fn solve(&mut self, x: f64) -> Result<Option<Rc<GlobalSolve>>> {
        if let Some(hit) = self.map.get(&x.to_bits()) {
            return Ok(hit.clone());
        }
        let entry = match solve_lower_global(self.p, x) {
            Ok(s) => Some(Rc::new(s)),
            Err(Error::Infeasible(_)) => None,
            Err(e) => return Err(e),
        };
        self.map.insert(x.to_bits(), entry.clone());
        Ok(entry)
    }
}

/// Symmetric odd grid around `x_bar`, clipped to the parameter box; the
/// center point is exactly `x_bar`.
fn x_grid(p: &BilevelProblem, x_bar: f64, radius: f64, n: usize) -> Vec<f64> {
    let half = (n.max(9) | 1) / 2;
    let mut xs = Vec::with_capacity(2 * half + 1);
    for k in 0..=2 * half {
        let x = x_bar + radius * (k as f64 - half as f64) / half as f64;
        if p.bounds.as_ref().map_or(true, |b| b.contains_x(x)) {
            xs.push(x);
        }
    }
    xs
}

fn dist_to(y: &[f64], members: &[Vec<f64>]) -> f64 {
    members
        .iter()
        .map(|s| y.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min)
}

fn ball_point(rng: &mut ChaCha8Rng, center: &[f64], radius: f64) -> Vec<f64> {
    let m = center.len();
    // Gaussian direction, radius scaled for uniformity over the ball.
    let mut dir: Vec<f64> = (0..m)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let r = radius * rng.gen::<f64>().powf(1.0 / m as f64);
    for (i, d) in dir.iter_mut().enumerate() {
        *d = center[i] + r * *d / norm;
    }
    dir
}

fn member_of(p: &BilevelProblem, cond: Condition, x: f64, y: &[f64]) -> Result<bool> {
    if cond == Condition::Feasible {
        return Ok(true);
    }
    let flags = stationarity_status(p, x, y)?;
    Ok(match cond {
        Condition::Gc => flags.is_gc,
        Condition::Fj => flags.is_fj,
        Condition::Kkt => flags.is_kkt,
        Condition::BSurrogate => {
            flags.is_fj && flags.b_status != BStatus::KktCertified { holds: false }
        }
        Condition::Feasible => true,
    })
}

fn in_ball(y: &[f64], center: &[f64], radius: f64) -> bool {
    y.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= radius
}

/// Points of the chosen stationarity set on the x-grid, found from global
/// minimizers, the reference point, and Newton solves over every constraint
/// subset from randomized seeds in the ball.
fn sample_stationary(
    p: &BilevelProblem,
    cache: &mut SolveCache,
    x_bar: f64,
    y_bar: &[f64],
    radius: f64,
    xs: &[f64],
    cond: Condition,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let m = p.m;
    let scale = 1.0 + y_bar.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let mut out = Vec::new();
    for &x in xs {
        let mut cands: Vec<Vec<f64>> = Vec::new();
        if let Some(sol) = cache.solve(x)? {
            cands.extend(sol.minimizers.iter().cloned());
        }
        if x == x_bar {
            cands.push(y_bar.to_vec());
        }
        let mut seeds: Vec<Vec<f64>> = vec![y_bar.to_vec()];
        for _ in 0..8 {
            seeds.push(ball_point(rng, y_bar, radius));
        }
        for seed in &seeds {
            for mask in 0u32..(1 << p.p) {
                let js: Vec<usize> = (0..p.p).filter(|j| mask >> j & 1 == 1).collect();
                if js.len() > m {
                    continue;
                }
                if let Ok((yc, _)) = newton_correct(p, x, seed, &vec![0.0; js.len()], &js) {
                    cands.push(yc.as_slice().to_vec());
                }
            }
        }
        let mut kept: Vec<Vec<f64>> = Vec::new();
        for y in cands {
            if !in_ball(&y, y_bar, radius)
                || p.bounds.as_ref().map_or(false, |b| !b.contains_y(&y))
                || !p.lower_feasible(x, &y)?
            {
                continue;
            }
            if kept.iter().any(|k| {
                k.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) <= 1e-7 * scale
            }) {
                continue;
            }
            if member_of(p, cond, x, &y)? {
                kept.push(y);
            }
        }
        for y in kept {
            out.push((x, y));
        }
    }
    Ok(out)
}

/// Feasible pairs: grid parameters with uniform ball samples in y, kept by
/// rejection.
fn sample_feasible(
    p: &BilevelProblem,
    cache: &mut SolveCache,
    y_bar: &[f64],
    radius: f64,
    xs: &[f64],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let mut feasible_xs = Vec::new();
    for &x in xs {
        if cache.solve(x)?.is_some() {
            feasible_xs.push(x);
        }
    }
    if feasible_xs.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut attempts = 0usize;
    while out.len() < count && attempts < count.saturating_mul(32) {
        attempts += 1;
        let x = feasible_xs[rng.gen_range(0..feasible_xs.len())];
        let y = ball_point(rng, y_bar, radius);
        if p.bounds.as_ref().map_or(false, |b| !b.contains_y(&y)) {
            continue;
        }
        if p.lower_feasible(x, &y)? {
            out.push((x, y));
        }
    }
    Ok(out)
}

struct EstimateSetup {
    radius: f64,
    v_max: f64,
    samples: usize,
    seed: u64,
    condition: Condition,
    metric: Metric,
}

fn check_reference(
    p: &BilevelProblem,
    cache: &mut SolveCache,
    x_bar: f64,
    y_bar: &[f64],
    radius: f64,
    samples: usize,
) -> Result<()> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Precondition("radius must be positive".to_string()));
    }
    if samples < 16 {
        return Err(Error::Precondition("at least 16 samples are required".to_string()));
    }
    if let Some(b) = &p.bounds {
        if !b.contains_x(x_bar) || !b.contains_y(y_bar) {
            return Err(Error::Precondition("reference point lies outside the search box".to_string()));
        }
    }
    if !p.lower_feasible(x_bar, y_bar)? {
        return Err(Error::Precondition("reference point is infeasible for the lower level".to_string()));
    }
    let sol = cache.solve(x_bar)?.ok_or_else(|| {
        Error::Precondition("lower level has no feasible point at the reference parameter".to_string())
    })?;
    let scale = 1.0 + y_bar.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let d = dist_to(y_bar, &sol.minimizers);
    if d > 1e-5 * scale {
        return Err(Error::Precondition(format!(
            "reference point is not a global lower-level minimizer (distance {d:.3e} to the solution set)"
        )));
    }
    Ok(())
}

fn estimate_core(
    p: &BilevelProblem,
    x_bar: f64,
    y_bar: &[f64],
    setup: &EstimateSetup,
) -> Result<PebReport> {
    let mut cache = SolveCache::new(p);
    check_reference(p, &mut cache, x_bar, y_bar, setup.radius, setup.samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let grid_n = (setup.samples / 8).clamp(9, 257) | 1;
    let xs = x_grid(p, x_bar, setup.radius, grid_n);

    // The sampled solution graph restricted to the ball.
    let mut graph: Vec<(f64, Vec<f64>)> = Vec::new();
    for &x in &xs {
        if let Some(sol) = cache.solve(x)? {
            for s in &sol.minimizers {
                if in_ball(s, y_bar, setup.radius) {
                    graph.push((x, s.clone()));
                }
            }
        }
    }

    let pairs = if setup.condition == Condition::Feasible {
        sample_feasible(p, &mut cache, y_bar, setup.radius, &xs, setup.samples, &mut rng)?
    } else {
        sample_stationary(p, &mut cache, x_bar, y_bar, setup.radius, &xs, setup.condition, &mut rng)?
    };
    if pairs.is_empty() {
        return Err(Error::Inconclusive(format!(
            "no samples of the condition set were found within radius {}",
            setup.radius
        )));
    }

    let mut dropped = 0usize;
    let mut records: Vec<RatioSample> = Vec::new();
    for (x, y) in pairs {
        let Some(sol) = cache.solve(x)? else {
            dropped += 1;
            continue;
        };
        let v = p.f_val(x, &y)? - sol.value;
        let tau_den = 100.0 * p.tol.res * (1.0 + sol.value.abs());
        if v > setup.v_max || v < -tau_den {
            dropped += 1;
            continue;
        }
        let numerator = match setup.metric {
            Metric::Solution => dist_to(&y, &sol.minimizers),
            Metric::Graph => graph
                .iter()
                .map(|(gx, gy)| {
                    let dy2: f64 = y.iter().zip(gy).map(|(a, b)| (a - b) * (a - b)).sum();
                    ((x - gx) * (x - gx) + dy2).sqrt()
                })
                .fold(f64::INFINITY, f64::min),
        };
        if !numerator.is_finite() {
            dropped += 1;
            continue;
        }
        let ratio = (v > tau_den).then(|| numerator / v);
        records.push(RatioSample { x, y, numerator, denominator: v, ratio });
    }
    records.shuffle(&mut rng);

    let collected = records.len();
    let usable: Vec<&RatioSample> = records.iter().filter(|r| r.ratio.is_some()).collect();
    let scale = 1.0 + y_bar.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let tau_num = (100.0 * p.tol.res).max(1e-7) * scale;

    if usable.is_empty() {
        let max_num = records.iter().map(|r| r.numerator).fold(0.0, f64::max);
        if collected > 0 && max_num <= tau_num {
            return Ok(PebReport {
                condition: setup.condition,
                metric: setup.metric,
                radius: setup.radius,
                requested_samples: setup.samples,
                collected,
                usable: 0,
                dropped,
                modulus: 0.0,
                l_low: 0.0,
                l_full: 0.0,
                worst: None,
                verdict: ModulusVerdict::NumeratorZero,
                samples: records,
            });
        }
        return Err(Error::Inconclusive(
            "all sampled gaps vanish but some distances do not; refine the sampling".to_string(),
        ));
    }
    if usable.len() < 6 {
        return Err(Error::Inconclusive(format!(
            "only {} usable ratio samples; increase the sample count or radius",
            usable.len()
        )));
    }

    // Scale split: when the sup is a genuine modulus it binds at every gap
    // size, so the max over the coarse half (gaps above the median) already
    // estimates it. A max that concentrates at vanishing gaps instead is the
    // signature of an unbounded ratio.
    let mut gaps: Vec<f64> = usable.iter().map(|r| r.denominator).collect();
    gaps.sort_by(f64::total_cmp);
    let gap_median = gaps[gaps.len() / 2];
    let l_low = usable
        .iter()
        .filter(|r| r.denominator >= gap_median)
        .filter_map(|r| r.ratio)
        .fold(0.0, f64::max);
    let l_full = usable.iter().filter_map(|r| r.ratio).fold(0.0, f64::max);
    let worst = usable
        .iter()
        .max_by(|a, b| a.ratio.unwrap().total_cmp(&b.ratio.unwrap()))
        .map(|r| (*r).clone());
    let verdict = if l_full >= 2.0 * l_low && l_full > 1e-6 {
        ModulusVerdict::UnboundedSuspect { l_low, l_full }
    } else {
        ModulusVerdict::HoldsWithModulus { l: l_full }
    };
    Ok(PebReport {
        condition: setup.condition,
        metric: setup.metric,
        radius: setup.radius,
        requested_samples: setup.samples,
        collected,
        usable: usable.len(),
        dropped,
        modulus: l_full,
        l_low,
        l_full,
        worst,
        verdict,
        samples: records,
    })
}

/// Estimate the partial-error-bound modulus at `(x_bar, y_bar)`: the sup of
/// `dist((x,y), solution graph) / (f(x,y) - V(x))` over Fritz-John points in
/// the ball whose gap lies in `(0, v_max]`.
pub fn estimate_peb_modulus(
    p: &BilevelProblem,
    x_bar: f64,
    y_bar: &[f64],
    radius: f64,
    v_max: f64,
    samples: usize,
    seed: u64,
) -> Result<PebReport> {
    estimate_core(
        p,
        x_bar,
        y_bar,
        &EstimateSetup {
            radius,
            v_max,
            samples,
            seed,
            condition: Condition::Fj,
            metric: Metric::Graph,
        },
    )
}

/// Estimate the uniform-weak-sharp-minimum modulus: the sup of
/// `dist(y, S(x)) / (f(x,y) - V(x))` over the chosen condition set.
pub fn estimate_uwsm_modulus(
    p: &BilevelProblem,
    x_bar: f64,
    y_bar: &[f64],
    radius: f64,
    samples: usize,
    condition: Condition,
    seed: u64,
) -> Result<PebReport> {
    estimate_core(
        p,
        x_bar,
        y_bar,
        &EstimateSetup {
            radius,
            v_max: f64::INFINITY,
            samples,
            seed,
            condition,
            metric: Metric::Solution,
        },
    )
}

/// Recompute the (numerator, denominator) of one logged sample with the same
/// deterministic graph construction the estimator used. Lets reports be
/// audited: the logged ratio must reproduce exactly.
pub fn reevaluate_ratio(
    p: &BilevelProblem,
    x_bar: f64,
    y_bar: &[f64],
    radius: f64,
    samples: usize,
    metric: Metric,
    x: f64,
    y: &[f64],
) -> Result<(f64, f64)> {
    let mut cache = SolveCache::new(p);
    let grid_n = (samples / 8).clamp(9, 257) | 1;
    let xs = x_grid(p, x_bar, radius, grid_n);
    let sol = cache
        .solve(x)?
        .ok_or_else(|| Error::Infeasible("sample parameter is infeasible".to_string()))?;
    let v = p.f_val(x, y)? - sol.value;
    let numerator = match metric {
        Metric::Solution => dist_to(y, &sol.minimizers),
        Metric::Graph => {
            let mut best = f64::INFINITY;
            for &gx in &xs {
                if let Some(g) = cache.solve(gx)? {
                    for s in &g.minimizers {
                        if !in_ball(s, y_bar, radius) {
                            continue;
                        }
                        let dy2: f64 = y.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum();
                        best = best.min(((x - gx) * (x - gx) + dy2).sqrt());
                    }
                }
            }
            best
        }
    };
    Ok((numerator, v))
}

/// Outcome of the Case-I identity check: how many Fritz-John points were
/// examined and how far the farthest one sat from the solution set.
#[derive(Debug, Clone, Serialize)]
pub struct FjMinCheck {
    pub samples: usize,
    pub max_distance: f64,
}

/// Check the Case-I identity "nearby Fritz-John points are global solutions":
/// samples FJ points in the ball (branch traces through the reference point
/// plus perturbed Newton solves) and reports the largest distance from a
/// sample to the solution set at its parameter. Requires a Case-I simple
/// reference point; Case I predicts 0.
pub fn verify_fj_equals_min(
    p: &BilevelProblem,
    x_bar: f64,
    y_bar: &[f64],
    radius: f64,
    samples: usize,
) -> Result<FjMinCheck> {
    let mut cache = SolveCache::new(p);
    check_reference(p, &mut cache, x_bar, y_bar, radius, samples)?;
    let rep = classify_simplicity(p, x_bar, Some(y_bar))?;
    if rep.case != SimplicityCase::CaseI {
        return Err(Error::Precondition(format!(
            "reference parameter is not Case-I simple: {:?}",
            rep.case
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x666a);
    let grid_n = (samples / 8).clamp(9, 257) | 1;
    let xs = x_grid(p, x_bar, radius, grid_n);
    let mut pairs =
        sample_stationary(p, &mut cache, x_bar, y_bar, radius, &xs, Condition::Fj, &mut rng)?;

    // When the ball restriction leaves only a narrow productive parameter
    // window (stationary points elsewhere fall outside the ball), refine the
    // grid on that window so the evidence count stays proportional to the
    // requested sampling effort.
    let target = (samples / 16).max(1);
    if pairs.len() < target && !pairs.is_empty() {
        let spacing = 2.0 * radius / (grid_n - 1) as f64;
        let lo = pairs.iter().map(|(x, _)| *x).fold(f64::INFINITY, f64::min) - spacing;
        let hi = pairs.iter().map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max) + spacing;
        let lo = lo.max(x_bar - radius);
        let hi = hi.min(x_bar + radius);
        if hi > lo {
            let n = (2 * target + 1) | 1;
            let fine: Vec<f64> =
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
            let mut more =
                sample_stationary(p, &mut cache, x_bar, y_bar, radius, &fine, Condition::Fj, &mut rng)?;
            pairs.append(&mut more);
        }
    }

    // Branch traces through the reference point, both directions.
    for x_end in [x_bar - radius, x_bar + radius] {
        if let Ok(tr) = trace_branch(
            p,
            x_bar,
            y_bar,
            None,
            &TraceOptions { x_end, step: radius / 16.0, active: None },
        ) {
            for pt in tr.points {
                if in_ball(&pt.y, y_bar, radius)
                    && (pt.x - x_bar).abs() <= radius
                    && p.lower_feasible(pt.x, &pt.y)?
                    && member_of(p, Condition::Fj, pt.x, &pt.y)?
                {
                    pairs.push((pt.x, pt.y));
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Inconclusive("no Fritz-John samples found in the ball".to_string()));
    }
    let count = pairs.len();
    let mut max_d = 0.0f64;
    for (x, y) in pairs {
        if let Some(sol) = cache.solve(x)? {
            max_d = max_d.max(dist_to(&y, &sol.minimizers));
        }
    }
    Ok(FjMinCheck { samples: count, max_distance: max_d })
}

/// Evaluate `F + mu (f - V) - F(x_bar, y_bar)` over sampled points of the
/// chosen stationarity set (FJ or KKT) in the ball; partial calmness holds
/// on the evidence iff the minimum clears `-tol.res`.
pub fn verify_partial_calmness(
    p: &BilevelProblem,
    x_bar: f64,
    y_bar: &[f64],
    mu: f64,
    radius: f64,
    samples: usize,
    condition: Condition,
    seed: u64,
) -> Result<CalmnessReport> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::Precondition("mu must be nonnegative".to_string()));
    }
    if !matches!(condition, Condition::Fj | Condition::Kkt) {
        return Err(Error::Precondition(
            "partial calmness is verified over fj or kkt stationary sets".to_string(),
        ));
    }
    let mut cache = SolveCache::new(p);
    check_reference(p, &mut cache, x_bar, y_bar, radius, samples)?;
    let f_bar = p.upper_val(x_bar, y_bar)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid_n = (samples / 8).clamp(9, 257) | 1;
    let xs = x_grid(p, x_bar, radius, grid_n);
    let pairs = sample_stationary(p, &mut cache, x_bar, y_bar, radius, &xs, condition, &mut rng)?;
    if pairs.is_empty() {
        return Err(Error::Inconclusive("no stationary samples found in the ball".to_string()));
    }
    let mut min_value = f64::INFINITY;
    let mut witness = None;
    let mut used = 0usize;
    for (x, y) in pairs {
        let Some(sol) = cache.solve(x)? else { continue };
        if !p.upper_feasible(x, &y)? {
            continue;
        }
        used += 1;
        let excess = p.upper_val(x, &y)? - f_bar;
        let penalty = p.f_val(x, &y)? - sol.value;
        let q = excess + mu * penalty;
        if q < min_value {
            min_value = q;
            witness = Some(CalmnessWitness { x, y, objective_excess: excess, penalty });
        }
    }
    if used == 0 {
        return Err(Error::Inconclusive("all stationary samples were unusable".to_string()));
    }
    let holds = min_value >= -p.tol.res * (1.0 + f_bar.abs() + mu);
    Ok(CalmnessReport { mu, radius, condition, samples: used, min_value, holds, witness })
}

/// A sampled bound on the Lipschitz constant of the upper objective over the
/// verification ball: the largest gradient norm seen.
pub fn upper_lipschitz_bound(
    p: &BilevelProblem,
    x_bar: f64,
    y_bar: &[f64],
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for k in 0..samples.max(64) {
        let x = if k == 0 { x_bar } else { x_bar + radius * rng.gen_range(-1.0..1.0) };
        let y = if k == 0 { y_bar.to_vec() } else { ball_point(&mut rng, y_bar, radius) };
        let gx = p.grad_x_upper(x, &y)?;
        let gy = p.grad_y_upper(x, &y)?;
        best = best.max((gx * gx + gy.norm_squared()).sqrt());
    }
    Ok(best)
}

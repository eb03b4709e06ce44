//! Numerical continuation of stationary branches of the lower-level problem,
//! implicit derivatives along a branch, a deterministic global solver for the
//! lower level over the search box, the optimal-value function on a parameter
//! grid, and a grid-plus-golden-section driver for the bilevel problem itself.

use crate::linalg;
use crate::problem::BilevelProblem;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Residual and Jacobian of the frozen-active-set stationarity system
/// `[grad_y f + sum_J u_j grad_y g_j ; g_J] = 0` at `(x, y, u)`.
fn kkt_system(
    p: &BilevelProblem,
    x: f64,
    y: &[f64],
    u_act: &DVector<f64>,
    j0: &[usize],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = p.m;
    let k = j0.len();
    let pairs: Vec<(usize, f64)> = j0.iter().enumerate().map(|(s, &j)| (j, u_act[s])).collect();
    let h = p.hess_yy_lagrangian(x, y, 1.0, &pairs)?;
    let a = p.grad_y_g_cols(j0, x, y)?;
    let mut mat = DMatrix::zeros(m + k, m + k);
    mat.view_mut((0, 0), (m, m)).copy_from(&h);
    mat.view_mut((0, m), (m, k)).copy_from(&a);
    mat.view_mut((m, 0), (k, m)).copy_from(&a.transpose());
    let mut phi = DVector::zeros(m + k);
    let mut gy = p.grad_y_f(x, y)?;
    for (s, &j) in j0.iter().enumerate() {
        gy += p.grad_y_g(j, x, y)? * u_act[s];
    }
    phi.rows_mut(0, m).copy_from(&gy);
    for (s, &j) in j0.iter().enumerate() {
        phi[m + s] = p.g_val(j, x, y)?;
    }
    Ok((mat, phi))
}

/// Derivatives `(dy/dx, du/dx)` of the stationary branch with frozen active
/// set `j0` through `(x, y)`, from the linearized stationarity system.
/// `u_full` is the full-length multiplier vector.
pub fn implicit_derivatives(
    p: &BilevelProblem,
    x: f64,
    y: &[f64],
    u_full: &[f64],
    j0: &[usize],
) -> Result<(DVector<f64>, DVector<f64>)> {
    if u_full.len() != p.p {
        return Err(Error::Precondition(format!(
            "multiplier vector has length {}, expected {}",
            u_full.len(),
            p.p
        )));
    }
    let m = p.m;
    let k = j0.len();
    let u_act = DVector::from_iterator(k, j0.iter().map(|&j| u_full[j]));
    let (mat, _phi) = kkt_system(p, x, y, &u_act, j0)?;
    let pairs: Vec<(usize, f64)> = j0.iter().map(|&j| (j, u_full[j])).collect();
    let lxy = p.hess_yx_lagrangian(x, y, 1.0, &pairs)?;
    let mut rhs = DVector::zeros(m + k);
    for i in 0..m {
        rhs[i] = -lxy[i];
    }
    for (s, &j) in j0.iter().enumerate() {
        rhs[m + s] = -p.grad_x_g(j, x, y)?;
    }
    let lu = mat.clone().full_piv_lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular branch Jacobian".to_string()))?;
    let scale = 1.0 + rhs.amax() + sol.amax();
    if (&mat * &sol - &rhs).amax() > 1e-6 * scale {
        return Err(Error::Numerical("branch Jacobian solve did not converge".to_string()));
    }
    Ok((sol.rows(0, m).into_owned(), sol.rows(m, k).into_owned()))
}

/// Damped Newton solve of the frozen-active-set stationarity system from the
/// guess `(y0, u0)` at parameter `x`. Returns the corrected `(y, u_active)`.
pub fn newton_correct(
    p: &BilevelProblem,
    x: f64,
    y0: &[f64],
    u0_active: &[f64],
    j0: &[usize],
) -> Result<(DVector<f64>, DVector<f64>)> {
    if u0_active.len() != j0.len() {
        return Err(Error::Precondition(format!(
            "active multiplier guess has length {}, expected {}",
            u0_active.len(),
            j0.len()
        )));
    }
    let m = p.m;
    let k = j0.len();
    let mut y = DVector::from_column_slice(y0);
    let mut u = DVector::from_column_slice(u0_active);
    let tol = p.tol.res * (1.0 + x.abs() + y.amax());
    let (_, mut phi) = kkt_system(p, x, y.as_slice(), &u, j0)?;
    for _ in 0..50 {
        if phi.amax() <= tol {
            return Ok((y, u));
        }
        let (mat, _) = kkt_system(p, x, y.as_slice(), &u, j0)?;
        let step = mat
            .full_piv_lu()
            .solve(&(-&phi))
            .ok_or_else(|| Error::Numerical("singular corrector Jacobian".to_string()))?;
        let norm0 = phi.amax();
        let mut t = 1.0;
        let mut advanced = false;
        while t >= 2f64.powi(-30) {
            let y_try = &y + step.rows(0, m) * t;
            let u_try = &u + step.rows(m, k) * t;
            match kkt_system(p, x, y_try.as_slice(), &u_try, j0) {
                Ok((_, phi_try)) if phi_try.amax() <= (1.0 - 1e-4 * t) * norm0 => {
                    y = y_try;
                    u = u_try;
                    phi = phi_try;
                    advanced = true;
                    break;
                }
                _ => t *= 0.5,
            }
        }
        if !advanced {
            return Err(Error::Numerical("corrector stalled".to_string()));
        }
    }
    if phi.amax() <= tol {
        Ok((y, u))
    } else {
        Err(Error::Numerical("corrector did not converge in 50 iterations".to_string()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchPoint {
    pub x: f64,
    pub y: Vec<f64>,
    /// Full-length multiplier vector, zero off the frozen active set.
    pub u: Vec<f64>,
    /// Lower-level objective value along the branch.
    pub value: f64,
    /// Smallest absolute reduced-Hessian eigenvalue (infinite when the
    /// active gradients span all of y-space).
    pub eig_min: f64,
    /// Smallest signed active multiplier (infinite when nothing is active).
    pub u_min: f64,
    /// Largest constraint value among inactive constraints.
    pub g_inactive_max: f64,
    /// Spectral condition number of the branch Jacobian.
    pub cond: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Termination {
    ReachedEnd,
    /// An active multiplier crossed the complementarity tolerance.
    MultiplierZero { index: usize },
    /// A reduced-Hessian eigenvalue entered the degeneracy tolerance.
    EigenvalueZero,
    /// An inactive constraint reached its activation tolerance.
    Activation { index: usize },
    /// The branch Jacobian became numerically rank deficient.
    LicqLoss,
    BoxExit,
    /// The corrector failed at the minimum step size.
    CorrectorFailure,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchTrace {
    pub points: Vec<BranchPoint>,
    pub termination: Termination,
    /// Parameter value where the terminating event was isolated, when the
    /// trace ended in an event.
    pub event_x: Option<f64>,
    pub active: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TraceOptions {
    pub x_end: f64,
    /// Base predictor step in x.
    pub step: f64,
    /// Freeze this active set instead of detecting it at the start.
    pub active: Option<Vec<usize>>,
}

struct State {
    x: f64,
    y: DVector<f64>,
    u: DVector<f64>,
}

fn assess(
    p: &BilevelProblem,
    st: &State,
    j0: &[usize],
) -> Result<(BranchPoint, Option<Termination>)> {
    let y = st.y.as_slice();
    let a = p.grad_y_g_cols(j0, st.x, y)?;
    let z = linalg::nullspace(&a.transpose(), p.tol.rank);
    let eig_min = if z.ncols() == 0 {
        f64::INFINITY
    } else {
        let pairs: Vec<(usize, f64)> = j0.iter().enumerate().map(|(s, &j)| (j, st.u[s])).collect();
        let h = p.hess_yy_lagrangian(st.x, y, 1.0, &pairs)?;
        let red = z.transpose() * h * &z;
        linalg::sym_eigenvalues(&red).iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min)
    };
    let (u_min, u_min_idx) = j0
        .iter()
        .enumerate()
        .map(|(s, &j)| (st.u[s], j))
        .fold((f64::INFINITY, usize::MAX), |acc, (v, j)| if v < acc.0 { (v, j) } else { acc });
    let mut g_inactive_max = f64::NEG_INFINITY;
    let mut g_max_idx = usize::MAX;
    for j in 0..p.p {
        if !j0.contains(&j) {
            let v = p.g_val(j, st.x, y)?;
            if v > g_inactive_max {
                g_inactive_max = v;
                g_max_idx = j;
            }
        }
    }
    let (mat, _) = kkt_system(p, st.x, y, &st.u, j0)?;
    let cond = linalg::cond2(&mat);
    let mut u_full = vec![0.0; p.p];
    for (s, &j) in j0.iter().enumerate() {
        u_full[j] = st.u[s];
    }
    let point = BranchPoint {
        x: st.x,
        y: y.to_vec(),
        u: u_full,
        value: p.f_val(st.x, y)?,
        eig_min,
        u_min,
        g_inactive_max,
        cond,
    };

    let outside = p
        .bounds
        .as_ref()
        .map_or(false, |b| !b.contains_x(st.x) || !b.contains_y(y));
    let event = if outside {
        Some(Termination::BoxExit)
    } else if !j0.is_empty() && u_min <= p.tol.mult {
        Some(Termination::MultiplierZero { index: u_min_idx })
    } else if g_max_idx != usize::MAX && g_inactive_max >= -p.tol.act {
        Some(Termination::Activation { index: g_max_idx })
    } else if eig_min <= p.tol.eig {
        Some(Termination::EigenvalueZero)
    } else if cond > 1.0 / p.tol.rank {
        Some(Termination::LicqLoss)
    } else {
        None
    };
    Ok((point, event))
}

/// Trace the stationary branch through `(x0, y0)` toward `opts.x_end` with an
/// Euler predictor and damped Newton corrector, stopping at the first
/// qualitative event. The event location is isolated by bisection to an
/// x-interval of 1e-8. `u0` is an optional full-length multiplier start;
/// omitted, it is fitted by least squares on the detected active set.
pub fn trace_branch(
    p: &BilevelProblem,
    x0: f64,
    y0: &[f64],
    u0: Option<&[f64]>,
    opts: &TraceOptions,
) -> Result<BranchTrace> {
    if !(opts.step > 0.0) {
        return Err(Error::Precondition("trace step must be positive".to_string()));
    }
    let j0 = match &opts.active {
        Some(a) => {
            let mut a = a.clone();
            a.sort_unstable();
            a.dedup();
            if a.iter().any(|&j| j >= p.p) {
                return Err(Error::Precondition("active index out of range".to_string()));
            }
            a
        }
        None => p.active_set(x0, y0)?,
    };
    let u_act0: DVector<f64> = match u0 {
        Some(u) if u.len() == p.p => DVector::from_iterator(j0.len(), j0.iter().map(|&j| u[j])),
        Some(_) => {
            return Err(Error::Precondition("multiplier start must have full length".to_string()))
        }
        None => {
            let a = p.grad_y_g_cols(&j0, x0, y0)?;
            let b = -p.grad_y_f(x0, y0)?;
            linalg::lstsq(&a, &b, p.tol.rank).0
        }
    };

    let (y_start, u_start) = newton_correct(p, x0, y0, u_act0.as_slice(), &j0)?;
    let mut cur = State { x: x0, y: y_start, u: u_start };
    let (pt0, ev0) = assess(p, &cur, &j0)?;
    let mut points = vec![pt0];
    if let Some(ev) = ev0 {
        return Ok(BranchTrace { points, termination: ev, event_x: Some(x0), active: j0 });
    }

    let dir = (opts.x_end - x0).signum();
    if dir == 0.0 || (opts.x_end - x0).abs() <= 1e-14 * (1.0 + x0.abs()) {
        return Ok(BranchTrace { points, termination: Termination::ReachedEnd, event_x: None, active: j0 });
    }
    let h0 = opts.step;
    let h_floor = (h0 * 2f64.powi(-20)).max(1e-12);
    let mut h = h0;

    for _ in 0..200_000 {
        let remaining = (opts.x_end - cur.x).abs();
        if remaining <= 1e-14 * (1.0 + opts.x_end.abs()) {
            return Ok(BranchTrace { points, termination: Termination::ReachedEnd, event_x: None, active: j0 });
        }
        let h_try = h.min(remaining);
        let x_next = cur.x + dir * h_try;

        let (mut y_guess, mut u_guess) = (cur.y.clone(), cur.u.clone());
        let mut u_full = vec![0.0; p.p];
        for (s, &j) in j0.iter().enumerate() {
            u_full[j] = cur.u[s];
        }
        if let Ok((dy, du)) = implicit_derivatives(p, cur.x, cur.y.as_slice(), &u_full, &j0) {
            y_guess += dy * (dir * h_try);
            u_guess += du * (dir * h_try);
        }
        let pred_move = (&y_guess - &cur.y).amax();
        // Trust region on the predictor: a displacement comparable to the
        // state scale means the linearization left its validity range, which
        // is exactly what happens when a fold is approached at full step.
        if pred_move > 0.1 * (1.0 + cur.y.amax()) {
            h *= 0.5;
            if h < h_floor {
                return Ok(BranchTrace {
                    points,
                    termination: Termination::CorrectorFailure,
                    event_x: Some(cur.x),
                    active: j0,
                });
            }
            continue;
        }

        match newton_correct(p, x_next, y_guess.as_slice(), u_guess.as_slice(), &j0) {
            // A correction far beyond the predictor displacement means the
            // corrector settled on a different branch; treat it as a failed
            // step so the march shortens instead of silently jumping.
            Ok((y_new, _)) if (&y_new - &y_guess).amax()
                > 2.0 * (pred_move + h_try * (1.0 + cur.y.amax())) =>
            {
                h *= 0.5;
                if h < h_floor {
                    return Ok(BranchTrace {
                        points,
                        termination: Termination::CorrectorFailure,
                        event_x: Some(cur.x),
                        active: j0,
                    });
                }
            }
            Ok((y_new, u_new)) => {
                let next = State { x: x_next, y: y_new, u: u_new };
                let (pt, ev) = assess(p, &next, &j0)?;
                if let Some(first_ev) = ev {
                    let (pt_ev, ev_final, x_ev) = bisect_event(p, &j0, &cur, next, first_ev)?;
                    points.push(pt_ev);
                    return Ok(BranchTrace { points, termination: ev_final, event_x: Some(x_ev), active: j0 });
                }
                points.push(pt);
                cur = next;
                h = h0;
            }
            Err(_) => {
                h *= 0.5;
                if h < h_floor {
                    return Ok(BranchTrace {
                        points,
                        termination: Termination::CorrectorFailure,
                        event_x: Some(cur.x),
                        active: j0,
                    });
                }
            }
        }
    }
    Err(Error::Numerical("trace exceeded the step budget".to_string()))
}

/// Shrink the bracket `[left, right]` (no event at `left`, event at `right`)
/// to width 1e-8 and return the event-side point, reason, and location.
fn bisect_event(
    p: &BilevelProblem,
    j0: &[usize],
    left0: &State,
    right0: State,
    ev0: Termination,
) -> Result<(BranchPoint, Termination, f64)> {
    let mut left = State { x: left0.x, y: left0.y.clone(), u: left0.u.clone() };
    let mut right = right0;
    let mut ev = ev0;
    for _ in 0..80 {
        if (right.x - left.x).abs() <= 1e-8 {
            break;
        }
        let xm = 0.5 * (left.x + right.x);
        match newton_correct(p, xm, left.y.as_slice(), left.u.as_slice(), j0) {
            Ok((ym, um)) => {
                let mid = State { x: xm, y: ym, u: um };
                let (_, ev_mid) = assess(p, &mid, j0)?;
                match ev_mid {
                    Some(e) => {
                        right = mid;
                        ev = e;
                    }
                    None => left = mid,
                }
            }
            // Corrector failure counts as the event side of the bracket.
            Err(_) => right = State { x: xm, y: left.y.clone(), u: left.u.clone() },
        }
    }
    let x_ev = right.x;
    match newton_correct(p, x_ev, left.y.as_slice(), left.u.as_slice(), j0) {
        Ok((y, u)) => {
            let fin = State { x: x_ev, y, u };
            let (pt, ev_fin) = assess(p, &fin, j0)?;
            Ok((pt, ev_fin.unwrap_or(ev), x_ev))
        }
        Err(_) => {
            let (pt, _) = assess(p, &left, j0)?;
            Ok((pt, Termination::CorrectorFailure, left.x))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GlobalSolve {
    /// All global minimizers found (within `tol.res` of the best value),
    /// sorted lexicographically.
    pub minimizers: Vec<Vec<f64>>,
    pub value: f64,
    /// A minimizer sits on the search-box boundary, so the reported set may
    /// be an artifact of the box.
    pub boundary: bool,
    /// Every reported minimizer was polished to stationarity by Newton.
    pub refined: bool,
    /// Number of polished candidates inspected.
    pub candidates: usize,
}

fn axis_counts(grid: usize, m: usize) -> Vec<usize> {
    let budget = 4_000_000f64;
    let cap = budget.powf(1.0 / m as f64).floor() as usize;
    let n = grid.min(cap.max(9)) | 1;
    vec![n; m]
}

/// Solve `min_y f(x, y)  s.t.  g(x, y) <= 0` over the search box by a dense
/// grid scan followed by Newton polishing of grid-local minima and multistart
/// seeds over subsets of near-active constraints. Per-axis grid counts are
/// rounded to odd so the box midpoint is sampled exactly. Errors when no
/// feasible grid point exists.
pub fn solve_lower_global(p: &BilevelProblem, x: f64) -> Result<GlobalSolve> {
    let bounds = p.bounds_required()?;
    let m = p.m;
    let counts = axis_counts(p.tol.grid, m);
    let steps: Vec<f64> = (0..m)
        .map(|i| {
            let (lo, hi) = bounds.y[i];
            (hi - lo) / (counts[i] - 1) as f64
        })
        .collect();
    let total: usize = counts.iter().product();
    let mut strides = vec![1usize; m];
    for i in 1..m {
        strides[i] = strides[i - 1] * counts[i - 1];
    }

    let mut vals = vec![f64::NAN; total];
    let mut y = vec![0.0; m];
    let mut idx = vec![0usize; m];
    let mut best_flat = usize::MAX;
    let mut best_val = f64::INFINITY;
    for flat in 0..total {
        for i in 0..m {
            y[i] = bounds.y[i].0 + idx[i] as f64 * steps[i];
        }
        if p.lower_feasible(x, &y)? {
            let v = p.f_val(x, &y)?;
            vals[flat] = v;
            if v < best_val {
                best_val = v;
                best_flat = flat;
            }
        }
        for i in 0..m {
            idx[i] += 1;
            if idx[i] < counts[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    if best_flat == usize::MAX {
        return Err(Error::Infeasible(format!(
            "no feasible point on the search grid at x = {x}; refine tol.grid or the box"
        )));
    }

    let unflatten = |flat: usize| -> Vec<f64> {
        let mut y = vec![0.0; m];
        let mut r = flat;
        for i in 0..m {
            y[i] = bounds.y[i].0 + (r % counts[i]) as f64 * steps[i];
            r /= counts[i];
        }
        y
    };

    // Grid-local minima of the feasible values.
    let mut seeds: Vec<(f64, usize)> = Vec::new();
    for flat in 0..total {
        let v = vals[flat];
        if v.is_nan() {
            continue;
        }
        let mut local_min = true;
        let mut r = flat;
        for i in 0..m {
            let pos = r % counts[i];
            r /= counts[i];
            if pos > 0 {
                let w = vals[flat - strides[i]];
                if !w.is_nan() && w < v {
                    local_min = false;
                    break;
                }
            }
            if pos + 1 < counts[i] {
                let w = vals[flat + strides[i]];
                if !w.is_nan() && w < v {
                    local_min = false;
                    break;
                }
            }
        }
        if local_min {
            seeds.push((v, flat));
        }
    }
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
    seeds.truncate(64);
    let mut seed_points: Vec<Vec<f64>> = seeds.iter().map(|&(_, flat)| unflatten(flat)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(0x6c6f77u64 ^ x.to_bits());
    for _ in 0..p.tol.multistart {
        let cand: Vec<f64> =
            (0..m).map(|i| rng.gen_range(bounds.y[i].0..=bounds.y[i].1)).collect();
        if p.lower_feasible(x, &cand)? {
            seed_points.push(cand);
        }
    }

    let cell = steps.iter().cloned().fold(0.0, f64::max);
    let mut pool: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    for seed in &seed_points {
        // Constraints close enough to matter within one grid cell.
        let mut near: Vec<usize> = Vec::new();
        for j in 0..p.p {
            let gv = p.g_val(j, x, seed)?;
            let lj = 1.0 + p.grad_y_g(j, x, seed)?.amax();
            if gv >= -2.0 * cell * lj {
                near.push(j);
            }
        }
        if near.len() > 4 {
            near.truncate(4);
        }
        for mask in 0u32..(1 << near.len()) {
            let js: Vec<usize> =
                near.iter().enumerate().filter(|(s, _)| mask >> s & 1 == 1).map(|(_, &j)| j).collect();
            if js.len() > m {
                continue;
            }
            let u0 = if js.is_empty() {
                DVector::zeros(0)
            } else {
                let a = p.grad_y_g_cols(&js, x, seed)?;
                let b = -p.grad_y_f(x, seed)?;
                linalg::lstsq(&a, &b, p.tol.rank).0
            };
            if let Ok((yc, _uc)) = newton_correct(p, x, seed, u0.as_slice(), &js) {
                let yv = yc.as_slice().to_vec();
                if !bounds.contains_y(&yv) || !p.lower_feasible(x, &yv)? {
                    continue;
                }
                pool.push((yv.clone(), p.f_val(x, &yv)?, true));
            }
        }
    }
    pool.push((unflatten(best_flat), best_val, false));

    let v_star = pool.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let keep = p.tol.res * (1.0 + v_star.abs());
    let mut members: Vec<(Vec<f64>, bool)> =
        pool.into_iter().filter(|c| c.1 <= v_star + keep).map(|c| (c.0, c.2)).collect();
    let y_scale = 1.0 + members.iter().flat_map(|c| c.0.iter()).fold(0.0f64, |a, &v| a.max(v.abs()));
    // Polished points first so a raw grid point within one cell of a polished
    // minimizer is recognized as its coarse shadow and absorbed.
    members.sort_by(|a, b| {
        (!a.1, &a.0).partial_cmp(&(!b.1, &b.0)).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut uniq: Vec<(Vec<f64>, bool)> = Vec::new();
    for c in members {
        let radius = if c.1 { 1e-6 * y_scale } else { cell.max(1e-6 * y_scale) };
        let dup = uniq.iter().any(|u| {
            u.0.iter().zip(&c.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) <= radius
        });
        if !dup {
            uniq.push(c);
        }
    }
    uniq.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

    let boundary = uniq.iter().any(|(y, _)| {
        (0..m).any(|i| {
            let (lo, hi) = bounds.y[i];
            let margin = steps[i].max(p.tol.act);
            y[i] - lo <= margin || hi - y[i] <= margin
        })
    });
    let refined = uniq.iter().all(|(_, r)| *r);
    let candidates = uniq.len();
    Ok(GlobalSolve {
        minimizers: uniq.into_iter().map(|(y, _)| y).collect(),
        value: v_star,
        boundary,
        refined,
        candidates,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueSample {
    pub x: f64,
    pub value: f64,
    pub minimizers: Vec<Vec<f64>>,
    pub boundary: bool,
}

/// Optimal-value function `V` of the lower level on a uniform x-grid of
/// `n_points` values (at least 2). Parameter values where the lower level is
/// infeasible are skipped.
pub fn value_function(
    p: &BilevelProblem,
    x_lo: f64,
    x_hi: f64,
    n_points: usize,
) -> Result<Vec<ValueSample>> {
    if !(x_hi > x_lo) || n_points < 2 {
        return Err(Error::Precondition("value-function range needs x_lo < x_hi and 2+ points".to_string()));
    }
    let mut out = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let x = x_lo + (x_hi - x_lo) * k as f64 / (n_points - 1) as f64;
        match solve_lower_global(p, x) {
            Ok(s) => out.push(ValueSample { x, value: s.value, minimizers: s.minimizers, boundary: s.boundary }),
            Err(Error::Infeasible(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::Infeasible("lower level infeasible across the requested range".to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct BilevelSolution {
    pub x: f64,
    pub y: Vec<f64>,
    pub upper_value: f64,
    pub lower_value: f64,
    /// Number of lower-level global minimizers at the reported x.
    pub minimizers: usize,
    /// The reported x sits at the edge of the parameter box, or the inner
    /// solve flagged its own boundary.
    pub boundary: bool,
    /// The sampled objective curve: (x, best upper value over S(x)).
    pub curve: Vec<(f64, f64)>,
}

fn upper_best(p: &BilevelProblem, x: f64) -> Result<Option<(f64, Vec<f64>, f64, usize, bool)>> {
    match solve_lower_global(p, x) {
        Ok(s) => {
            let mut best: Option<(f64, Vec<f64>)> = None;
            for y in &s.minimizers {
                if !p.upper_feasible(x, y)? {
                    continue;
                }
                let fv = p.upper_val(x, y)?;
                if best.as_ref().map_or(true, |b| fv < b.0) {
                    best = Some((fv, y.clone()));
                }
            }
            Ok(best.map(|(fv, y)| (fv, y, s.value, s.minimizers.len(), s.boundary)))
        }
        Err(Error::Infeasible(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Minimize the upper objective over the parameter box, taking the most
/// favorable lower-level global minimizer at every x (optimistic reading).
/// Scans a coarse x-grid, then refines the best bracket by golden section.
pub fn solve_bilevel(p: &BilevelProblem) -> Result<BilevelSolution> {
    let bounds = p.bounds_required()?;
    let (x_lo, x_hi) = bounds.x;
    let n = (p.tol.grid / 8).clamp(17, 129) | 1;
    let mut curve = Vec::with_capacity(n);
    let mut best: Option<(f64, f64)> = None;
    let mut xs = Vec::with_capacity(n);
    for k in 0..n {
        let x = x_lo + (x_hi - x_lo) * k as f64 / (n - 1) as f64;
        xs.push(x);
        if let Some((fv, _, _, _, _)) = upper_best(p, x)? {
            curve.push((x, fv));
            if best.map_or(true, |b| fv < b.1) {
                best = Some((x, fv));
            }
        }
    }
    let (x_best, _) = best.ok_or_else(|| {
        Error::Infeasible("no parameter value in the box admits a feasible pair".to_string())
    })?;

    let step = (x_hi - x_lo) / (n - 1) as f64;
    let mut a = (x_best - step).max(x_lo);
    let mut b = (x_best + step).min(x_hi);
    let h_val = |x: f64| -> Result<f64> {
        Ok(upper_best(p, x)?.map_or(f64::INFINITY, |(fv, ..)| fv))
    };
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = h_val(c)?;
    let mut fd = h_val(d)?;
    for _ in 0..60 {
        if (b - a).abs() <= 1e-10 * (1.0 + x_best.abs()) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = h_val(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = h_val(d)?;
        }
    }
    let x_ref = 0.5 * (a + b);
    let mut final_candidates = vec![(x_best, h_val(x_best)?), (x_ref, h_val(x_ref)?)];
    final_candidates.sort_by(|l, r| l.1.total_cmp(&r.1));
    let x_star = final_candidates[0].0;
    let (fv, y, lower_value, n_min, inner_boundary) = upper_best(p, x_star)?
        .ok_or_else(|| Error::Numerical("refined parameter lost feasibility".to_string()))?;
    let at_edge = (x_star - x_lo).abs() <= 1e-9 * (1.0 + x_lo.abs())
        || (x_hi - x_star).abs() <= 1e-9 * (1.0 + x_hi.abs());
    Ok(BilevelSolution {
        x: x_star,
        y,
        upper_value: fv,
        lower_value,
        minimizers: n_min,
        boundary: at_edge || inner_boundary,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::load_problem;

    const CIRCLE: &str = r#"
[problem]
n = 1
m = 2
p = 1
q = 0
[upper]
F = "x + y1 + y2"
[lower]
f = "-y1"
g1 = "y1^2 + y2^2 - x"
[box]
x = -1, 1
y1 = -1.5, 1.5
y2 = -1.5, 1.5
[tolerances]
grid = 121
"#;

    const QUADRATIC: &str = r#"
[problem]
n = 1
m = 1
p = 0
q = 0
[upper]
F = "(x - 1)^2 + y1^2"
[lower]
f = "(y1 - x)^2"
[box]
x = -1, 2
y1 = -2, 2
"#;

    const KINK: &str = r#"
[problem]
n = 1
m = 1
p = 1
q = 0
[upper]
F = "(x - 1)^2 + (y1 - 1)^2"
[lower]
f = "y1^2"
g1 = "x - y1"
[box]
x = -1, 2
y1 = -2, 2
"#;

    #[test]
    fn implicit_derivatives_on_circle_branch() {
        let p = load_problem(CIRCLE).unwrap();
        let (dy, du) = implicit_derivatives(&p, 0.25, &[0.5, 0.0], &[1.0], &[0]).unwrap();
        assert!((dy[0] - 1.0).abs() <= 1e-10);
        assert!(dy[1].abs() <= 1e-10);
        assert!((du[0] + 2.0).abs() <= 1e-10);
    }

    #[test]
    fn corrector_lands_on_circle() {
        let p = load_problem(CIRCLE).unwrap();
        let (y, u) = newton_correct(&p, 0.16, &[0.45, 0.01], &[1.0], &[0]).unwrap();
        assert!((y[0] - 0.4).abs() <= 1e-9);
        assert!(y[1].abs() <= 1e-9);
        assert!((u[0] - 1.25).abs() <= 1e-9);
    }

    #[test]
    fn unconstrained_branch_reaches_end() {
        let p = load_problem(QUADRATIC).unwrap();
        let tr = trace_branch(
            &p,
            0.5,
            &[0.5],
            None,
            &TraceOptions { x_end: 1.5, step: 0.05, active: None },
        )
        .unwrap();
        assert_eq!(tr.termination, Termination::ReachedEnd);
        let last = tr.points.last().unwrap();
        assert!((last.x - 1.5).abs() <= 1e-12);
        assert!((last.y[0] - 1.5).abs() <= 1e-9);
    }

    #[test]
    fn multiplier_zero_event_is_isolated() {
        let p = load_problem(KINK).unwrap();
        let tr = trace_branch(
            &p,
            1.0,
            &[1.0],
            None,
            &TraceOptions { x_end: -0.5, step: 0.05, active: None },
        )
        .unwrap();
        assert_eq!(tr.termination, Termination::MultiplierZero { index: 0 });
        let xe = tr.event_x.unwrap();
        assert!(xe.abs() <= 2e-6, "event at {xe}");
        // Multiplier along the branch is 2x.
        let mid = &tr.points[1];
        assert!((mid.u[0] - 2.0 * mid.x).abs() <= 1e-8);
    }

    #[test]
    fn activation_event_is_isolated() {
        let p = load_problem(KINK).unwrap();
        let tr = trace_branch(
            &p,
            -0.5,
            &[0.0],
            None,
            &TraceOptions { x_end: 1.0, step: 0.05, active: None },
        )
        .unwrap();
        assert_eq!(tr.termination, Termination::Activation { index: 0 });
        let xe = tr.event_x.unwrap();
        assert!(xe.abs() <= 2e-6, "event at {xe}");
    }

    #[test]
    fn rank_loss_near_vanishing_circle() {
        let p = load_problem(CIRCLE).unwrap();
        let tr = trace_branch(
            &p,
            0.25,
            &[0.5, 0.0],
            None,
            &TraceOptions { x_end: 0.0, step: 0.01, active: None },
        )
        .unwrap();
        assert!(
            matches!(tr.termination, Termination::LicqLoss | Termination::CorrectorFailure),
            "got {:?}",
            tr.termination
        );
        let xe = tr.event_x.unwrap();
        assert!(xe > 1e-6 && xe < 1e-3, "event at {xe}");
    }

    #[test]
    fn box_exit_event() {
        let p = load_problem(QUADRATIC).unwrap();
        let tr = trace_branch(
            &p,
            0.5,
            &[0.5],
            None,
            &TraceOptions { x_end: 3.0, step: 0.05, active: None },
        )
        .unwrap();
        assert_eq!(tr.termination, Termination::BoxExit);
        assert!(tr.event_x.unwrap() >= 2.0 - 1e-9);
    }

    #[test]
    fn fold_stops_the_trace() {
        // Branch of y^3 - y + x = 0 through (0, 1) folds at x = 2/(3 sqrt 3).
        let well = r#"
[problem]
n = 1
m = 1
p = 0
q = 0
[upper]
F = "-y1"
[lower]
f = "y1^4 / 4 - y1^2 / 2 + x * y1"
[box]
x = -0.8, 0.8
y1 = -2.5, 2.5
[tolerances]
eig = 1e-2
"#;
        let p = load_problem(well).unwrap();
        let x_fold = 2.0 / (3.0 * 3f64.sqrt());
        let tr = trace_branch(
            &p,
            0.0,
            &[1.0],
            None,
            &TraceOptions { x_end: 0.8, step: 0.02, active: None },
        )
        .unwrap();
        assert_eq!(tr.termination, Termination::EigenvalueZero);
        assert!((tr.event_x.unwrap() - x_fold).abs() <= 1e-2);

        // At the default eigenvalue tolerance the event window is below the
        // bisection resolution, so the corrector dies first, still near the fold.
        let p2 = load_problem(&well.replace("eig = 1e-2", "eig = 1e-8")).unwrap();
        let tr2 = trace_branch(
            &p2,
            0.0,
            &[1.0],
            None,
            &TraceOptions { x_end: 0.8, step: 0.02, active: None },
        )
        .unwrap();
        assert!(
            matches!(tr2.termination, Termination::CorrectorFailure | Termination::EigenvalueZero),
            "got {:?}",
            tr2.termination
        );
        assert!((tr2.event_x.unwrap() - x_fold).abs() <= 1e-2);
    }

    #[test]
    fn global_solve_finds_circle_vertex() {
        let p = load_problem(CIRCLE).unwrap();
        let s = solve_lower_global(&p, 0.25).unwrap();
        assert_eq!(s.minimizers.len(), 1);
        assert!((s.minimizers[0][0] - 0.5).abs() <= 1e-8);
        assert!(s.minimizers[0][1].abs() <= 1e-8);
        assert!((s.value + 0.5).abs() <= 1e-8);
        assert!(!s.boundary && s.refined);
    }

    #[test]
    fn global_solve_handles_single_point_feasible_set() {
        let p = load_problem(CIRCLE).unwrap();
        let s = solve_lower_global(&p, 0.0).unwrap();
        assert_eq!(s.minimizers.len(), 1);
        assert!(s.minimizers[0][0].abs() <= 1e-9 && s.minimizers[0][1].abs() <= 1e-9);
        assert!(s.value.abs() <= 1e-9);
        let err = solve_lower_global(&p, -0.5).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn global_solve_sees_both_wells() {
        let p = load_problem(
            r#"
[problem]
n = 1
m = 1
p = 0
q = 0
[upper]
F = "-y1"
[lower]
f = "y1^4 / 4 - y1^2 / 2 + x * y1"
[box]
x = -0.8, 0.8
y1 = -2.5, 2.5
"#,
        )
        .unwrap();
        let s = solve_lower_global(&p, 0.0).unwrap();
        assert_eq!(s.minimizers.len(), 2);
        assert!((s.minimizers[0][0] + 1.0).abs() <= 1e-8);
        assert!((s.minimizers[1][0] - 1.0).abs() <= 1e-8);
        let s3 = solve_lower_global(&p, 0.3).unwrap();
        assert_eq!(s3.minimizers.len(), 1);
        assert!(s3.minimizers[0][0] < -1.0);
    }

    #[test]
    fn value_function_kink() {
        let p = load_problem(KINK).unwrap();
        let rows = value_function(&p, -0.5, 1.0, 4).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            let expect = if r.x <= 0.0 { 0.0 } else { r.x * r.x };
            assert!((r.value - expect).abs() <= 1e-8, "V({}) = {}", r.x, r.value);
        }
    }

    #[test]
    fn bilevel_solve_quadratic() {
        let p = load_problem(QUADRATIC).unwrap();
        let s = solve_bilevel(&p).unwrap();
        assert!((s.x - 0.5).abs() <= 1e-6);
        assert!((s.y[0] - 0.5).abs() <= 1e-6);
        assert!((s.upper_value - 0.5).abs() <= 1e-7);
        assert!(!s.boundary);
    }

    #[test]
    fn bilevel_solve_kink() {
        let p = load_problem(KINK).unwrap();
        let s = solve_bilevel(&p).unwrap();
        assert!((s.x - 1.0).abs() <= 1e-6);
        assert!((s.y[0] - 1.0).abs() <= 1e-6);
        assert!(s.upper_value.abs() <= 1e-9);
    }
}

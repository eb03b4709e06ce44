//! Classification of lower-level stationary points into the five generic
//! types, built from three ingredients: LICQ, strict complementarity of the
//! (unique, sign-free) Lagrange multiplier, and nondegeneracy of the reduced
//! Hessian. Degenerate points are sorted by the precise way LICQ fails.
//! Also classifies a parameter value as simple (single stationary solution of
//! one of the stable types, or exactly two nondegenerate minimizers whose
//! objective slopes separate at first order).

use crate::continuation::{implicit_derivatives, newton_correct, solve_lower_global};
use crate::linalg;
use crate::multipliers::kkt_multipliers;
use crate::problem::BilevelProblem;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type")]
pub enum PointType {
    #[serde(rename = "type-1")]
    Type1,
    /// Exactly one active multiplier vanishes; `vanishing_index` is the
    /// zero-based index of that constraint.
    #[serde(rename = "type-2")]
    Type2 { vanishing_index: usize },
    /// Exactly one reduced-Hessian eigenvalue vanishes.
    #[serde(rename = "type-3")]
    Type3,
    /// LICQ fails with rank deficit one inside the active gradients and the
    /// point is not KKT.
    #[serde(rename = "type-4")]
    Type4,
    /// One constraint too many is active, full (x,y)-gradients independent,
    /// MFCQ fails but the KKT set is nonempty (a half-line).
    #[serde(rename = "type-5-1")]
    Type51,
    /// One constraint too many is active, full (x,y)-gradients independent,
    /// MFCQ holds.
    #[serde(rename = "type-5-2")]
    Type52,
    #[serde(rename = "not-classifiable")]
    NotClassifiable { reason: String },
}

impl PointType {
    pub fn label(&self) -> &'static str {
        match self {
            PointType::Type1 => "type 1",
            PointType::Type2 { .. } => "type 2",
            PointType::Type3 => "type 3",
            PointType::Type4 => "type 4",
            PointType::Type51 => "type 5-1",
            PointType::Type52 => "type 5-2",
            PointType::NotClassifiable { .. } => "not classifiable",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LicqReport {
    pub holds: bool,
    pub rank: usize,
    pub active: Vec<usize>,
}

/// Linear independence of the active constraint gradients in y.
pub fn check_licq(p: &BilevelProblem, x: f64, y: &[f64]) -> Result<LicqReport> {
    let active = p.active_set(x, y)?;
    let a = p.grad_y_g_cols(&active, x, y)?;
    let rank = linalg::rank(&a, p.tol.rank);
    Ok(LicqReport { holds: rank == active.len(), rank, active })
}

#[derive(Debug, Clone, Serialize)]
pub struct MfcqReport {
    pub holds: bool,
    /// Optimal value of the strict-descent program
    /// `max t  s.t.  grad_y g_j^T d + t <= 0, |d| <= 1, t <= 1`.
    pub margin: f64,
    pub direction: Vec<f64>,
    /// When MFCQ fails: nonnegative weights with unit sum annihilating the
    /// active gradients (a Gordan-type certificate), full constraint length.
    pub certificate: Option<Vec<f64>>,
}

/// Decide MFCQ for the active set `j0` by solving the margin program exactly.
pub fn mfcq_margin(p: &BilevelProblem, x: f64, y: &[f64], j0: &[usize]) -> Result<MfcqReport> {
    let m = p.m;
    if j0.is_empty() {
        return Ok(MfcqReport { holds: true, margin: 1.0, direction: vec![0.0; m], certificate: None });
    }
    let rows: Vec<DVector<f64>> = j0
        .iter()
        .map(|&j| p.grad_y_g(j, x, y))
        .collect::<Result<_>>()?;
    let scale = 1.0 + rows.iter().map(|r| r.amax()).fold(0.0, f64::max);
    let (margin, d) = linalg::max_margin_direction(&rows, m);
    let holds = margin > p.tol.res * scale;
    let certificate = if holds {
        None
    } else {
        // Vertices of { w >= 0 : sum w_j a_j = 0, sum w_j = 1 }.
        let mut a = DMatrix::zeros(m + 1, j0.len());
        for (c, r) in rows.iter().enumerate() {
            for i in 0..m {
                a[(i, c)] = r[i];
            }
            a[(m, c)] = 1.0;
        }
        let mut b = DVector::zeros(m + 1);
        b[m] = 1.0;
        linalg::polytope_vertices(&a, &b, p.tol.res).first().map(|v| {
            let mut full = vec![0.0; p.p];
            for (slot, &j) in j0.iter().enumerate() {
                full[j] = v[slot];
            }
            full
        })
    };
    Ok(MfcqReport { holds, margin, direction: d.iter().copied().collect(), certificate })
}

/// The unique sign-free Lagrange multiplier under LICQ, full constraint
/// length, together with the stationarity residual of the least-squares fit.
pub fn lagrange_multiplier_licq(
    p: &BilevelProblem,
    x: f64,
    y: &[f64],
    j0: &[usize],
) -> Result<(Vec<f64>, f64)> {
    let a = p.grad_y_g_cols(j0, x, y)?;
    let b = -p.grad_y_f(x, y)?;
    let (u, residual) = linalg::lstsq(&a, &b, p.tol.rank);
    let mut full = vec![0.0; p.p];
    for (slot, &j) in j0.iter().enumerate() {
        full[j] = u[slot];
    }
    Ok((full, residual))
}

#[derive(Debug, Clone, Serialize)]
pub struct SocReport {
    /// No reduced-Hessian eigenvalue within `tol.eig` of zero.
    pub nondegenerate: bool,
    /// Active gradients span all of y-space, leaving nothing to check.
    pub vacuous: bool,
    pub eigenvalues: Vec<f64>,
}

/// Eigenvalues of the Lagrangian y-Hessian restricted to the tangent space
/// of the active constraints (normal multiplier, `u0 = 1`).
pub fn check_soc(
    p: &BilevelProblem,
    x: f64,
    y: &[f64],
    u_full: &[f64],
    j0: &[usize],
) -> Result<SocReport> {
    let a = p.grad_y_g_cols(j0, x, y)?;
    let z = linalg::nullspace(&a.transpose(), p.tol.rank);
    if z.ncols() == 0 {
        return Ok(SocReport { nondegenerate: true, vacuous: true, eigenvalues: Vec::new() });
    }
    let pairs: Vec<(usize, f64)> = j0.iter().map(|&j| (j, u_full[j])).collect();
    let h = p.hess_yy_lagrangian(x, y, 1.0, &pairs)?;
    let reduced = z.transpose() * h * &z;
    let eigs = linalg::sym_eigenvalues(&reduced);
    let nondegenerate = eigs.iter().all(|e| e.abs() > p.tol.eig);
    Ok(SocReport { nondegenerate, vacuous: false, eigenvalues: eigs })
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub point_type: PointType,
    pub active: Vec<usize>,
    pub licq: bool,
    /// Sign-free Lagrange multiplier (full length) when LICQ holds.
    pub multiplier: Option<Vec<f64>>,
    /// Residual of the stationarity system for that multiplier.
    pub stationarity_residual: Option<f64>,
    /// Active constraints whose multiplier is within `tol.mult` of zero.
    pub weak_indices: Vec<usize>,
    pub reduced_hessian_eigenvalues: Vec<f64>,
    pub mfcq: Option<MfcqReport>,
}

fn not_classifiable(
    reason: &str,
    active: Vec<usize>,
    licq: bool,
    mfcq: Option<MfcqReport>,
) -> Classification {
    Classification {
        point_type: PointType::NotClassifiable { reason: reason.to_string() },
        active,
        licq,
        multiplier: None,
        stationarity_residual: None,
        weak_indices: Vec::new(),
        reduced_hessian_eigenvalues: Vec::new(),
        mfcq,
    }
}

/// Classify a stationary point of the lower-level problem at parameter `x`.
pub fn classify_point(p: &BilevelProblem, x: f64, y: &[f64]) -> Result<Classification> {
    let licq = check_licq(p, x, y)?;
    let j0 = licq.active.clone();
    let m = p.m;

    if licq.holds {
        let (u_full, residual) = lagrange_multiplier_licq(p, x, y, &j0)?;
        let scale = 1.0 + p.grad_y_f(x, y)?.amax();
        if residual > p.tol.res * scale {
            let mut c = not_classifiable(
                "stationarity residual exceeds tolerance under LICQ",
                j0,
                true,
                None,
            );
            c.stationarity_residual = Some(residual);
            return Ok(c);
        }
        let weak: Vec<usize> =
            j0.iter().copied().filter(|&j| u_full[j].abs() <= p.tol.mult).collect();
        let soc = check_soc(p, x, y, &u_full, &j0)?;
        let zero_eigs =
            soc.eigenvalues.iter().filter(|e| e.abs() <= p.tol.eig).count();
        let strict = weak.is_empty();
        let point_type = if strict && soc.nondegenerate {
            PointType::Type1
        } else if soc.nondegenerate && weak.len() == 1 {
            PointType::Type2 { vanishing_index: weak[0] }
        } else if strict && zero_eigs == 1 {
            PointType::Type3
        } else {
            PointType::NotClassifiable {
                reason: format!(
                    "degeneracy is not simple: {} vanishing multipliers, {} zero reduced-Hessian eigenvalues",
                    weak.len(),
                    zero_eigs
                ),
            }
        };
        return Ok(Classification {
            point_type,
            active: j0,
            licq: true,
            multiplier: Some(u_full),
            stationarity_residual: Some(residual),
            weak_indices: weak,
            reduced_hessian_eigenvalues: soc.eigenvalues,
            mfcq: None,
        });
    }

    // LICQ fails: decide between the two degenerate patterns.
    let mfcq = mfcq_margin(p, x, y, &j0)?;
    let k = j0.len();
    if licq.rank + 1 == k && k - 1 < m {
        let kkt = kkt_multipliers(p, x, y)?;
        if kkt.is_empty() {
            let mut c = not_classifiable("", j0, false, Some(mfcq));
            c.point_type = PointType::Type4;
            return Ok(c);
        }
        return Ok(not_classifiable(
            "rank deficit one but the point is KKT",
            j0,
            false,
            Some(mfcq),
        ));
    }
    if k == m + 1 {
        let mut full = DMatrix::zeros(1 + m, k);
        for (c, &j) in j0.iter().enumerate() {
            let g = p.full_grad_g(j, x, y)?;
            for i in 0..1 + m {
                full[(i, c)] = g[i];
            }
        }
        if linalg::rank(&full, p.tol.rank) == m + 1 {
            if mfcq.holds {
                let mut c = not_classifiable("", j0, false, Some(mfcq));
                c.point_type = PointType::Type52;
                return Ok(c);
            }
            let kkt = kkt_multipliers(p, x, y)?;
            if !kkt.is_empty() {
                let mut c = not_classifiable("", j0, false, Some(mfcq));
                c.point_type = PointType::Type51;
                return Ok(c);
            }
            return Ok(not_classifiable(
                "overactive set with neither MFCQ nor a KKT multiplier",
                j0,
                false,
                Some(mfcq),
            ));
        }
        return Ok(not_classifiable(
            "overactive set with dependent (x,y)-gradients",
            j0,
            false,
            Some(mfcq),
        ));
    }
    Ok(not_classifiable(
        "active gradients degenerate beyond the generic patterns",
        j0,
        false,
        Some(mfcq),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "case")]
pub enum SimplicityCase {
    /// A single stationary solution of a stable type.
    #[serde(rename = "case-i")]
    CaseI,
    /// Exactly two nondegenerate minimizers whose objective values separate
    /// at first order; `alpha` is the analytic separation slope and
    /// `alpha_fd` its finite-difference confirmation.
    #[serde(rename = "case-ii")]
    CaseII { alpha: f64, alpha_fd: f64 },
    #[serde(rename = "not-simple")]
    NotSimple { reason: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct SimplicityReport {
    pub case: SimplicityCase,
    /// Global minimizers at the queried parameter; in case II the branch
    /// whose objective decreases (relative to the other) as x grows past
    /// the query comes first when `alpha > 0` is taken relative to it.
    pub minimizers: Vec<Vec<f64>>,
    pub value: f64,
    pub classifications: Vec<Classification>,
}

/// Total x-derivative of `f(x, y_k(x))` along the stationary branch through
/// `(x, yk)`, from the implicit derivative of the branch.
fn branch_value_slope(p: &BilevelProblem, x: f64, yk: &[f64]) -> Result<f64> {
    let j0 = p.active_set(x, yk)?;
    let (u_full, _res) = lagrange_multiplier_licq(p, x, yk, &j0)?;
    let (dy, _du) = implicit_derivatives(p, x, yk, &u_full, &j0)?;
    let gx = p.grad_x_f(x, yk)?;
    let gy = p.grad_y_f(x, yk)?;
    Ok(gx + gy.dot(&dy))
}

/// First-order separation slope between the two branches through `y1` and
/// `y2`: the derivative of `f(x, y2(x)) - f(x, y1(x))` at `x`. Returns the
/// analytic value and a central finite-difference check; errors when the two
/// disagree beyond a relative 1e-6.
pub fn compute_alpha(p: &BilevelProblem, x: f64, y1: &[f64], y2: &[f64]) -> Result<(f64, f64)> {
    let alpha = branch_value_slope(p, x, y2)? - branch_value_slope(p, x, y1)?;

    let h = 1e-5 * (1.0 + x.abs());
    let diff_at = |xs: f64| -> Result<f64> {
        let mut vals = [0.0; 2];
        for (slot, y0) in [y1, y2].iter().enumerate() {
            let j0 = p.active_set(x, y0)?;
            let (u_full, _) = lagrange_multiplier_licq(p, x, y0, &j0)?;
            let u_active: Vec<f64> = j0.iter().map(|&j| u_full[j]).collect();
            let (yc, _uc) = newton_correct(p, xs, y0, &u_active, &j0)?;
            vals[slot] = p.f_val(xs, yc.as_slice())?;
        }
        Ok(vals[1] - vals[0])
    };
    let alpha_fd = (diff_at(x + h)? - diff_at(x - h)?) / (2.0 * h);
    if (alpha - alpha_fd).abs() > 1e-6 * (1.0 + alpha.abs()) {
        return Err(Error::Numerical(format!(
            "separation slope mismatch: analytic {alpha:.12e} vs finite-difference {alpha_fd:.12e}"
        )));
    }
    Ok((alpha, alpha_fd))
}

/// Decide whether the parameter `x` is simple for the lower-level problem.
/// `y_query` breaks the ordering tie in case II: the branch nearest the
/// query is listed first; otherwise the lexicographically smallest.
pub fn classify_simplicity(
    p: &BilevelProblem,
    x: f64,
    y_query: Option<&[f64]>,
) -> Result<SimplicityReport> {
    let sol = solve_lower_global(p, x)?;
    if sol.boundary {
        return Ok(SimplicityReport {
            case: SimplicityCase::NotSimple {
                reason: "a global minimizer sits on the search-box boundary".to_string(),
            },
            minimizers: sol.minimizers,
            value: sol.value,
            classifications: Vec::new(),
        });
    }
    match sol.minimizers.len() {
        0 => Ok(SimplicityReport {
            case: SimplicityCase::NotSimple {
                reason: "no feasible point found in the search box".to_string(),
            },
            minimizers: Vec::new(),
            value: f64::NAN,
            classifications: Vec::new(),
        }),
        1 => {
            let y = sol.minimizers[0].clone();
            let c = classify_point(p, x, &y)?;
            let stable = matches!(
                c.point_type,
                PointType::Type1
                    | PointType::Type2 { .. }
                    | PointType::Type4
                    | PointType::Type51
                    | PointType::Type52
            );
            let case = if stable {
                SimplicityCase::CaseI
            } else {
                SimplicityCase::NotSimple {
                    reason: format!("unique minimizer is {}", c.point_type.label()),
                }
            };
            Ok(SimplicityReport {
                case,
                minimizers: sol.minimizers,
                value: sol.value,
                classifications: vec![c],
            })
        }
        2 => {
            let mut ys: Vec<Vec<f64>> = sol.minimizers.clone();
            let dist = |a: &[f64], q: &[f64]| -> f64 {
                a.iter().zip(q).map(|(ai, qi)| (ai - qi).powi(2)).sum()
            };
            match y_query {
                Some(q) if q.len() == p.m => {
                    if dist(&ys[1], q) < dist(&ys[0], q) {
                        ys.swap(0, 1);
                    }
                }
                _ => {
                    if ys[1] < ys[0] {
                        ys.swap(0, 1);
                    }
                }
            }
            let c1 = classify_point(p, x, &ys[0])?;
            let c2 = classify_point(p, x, &ys[1])?;
            let both_stable = c1.point_type == PointType::Type1 && c2.point_type == PointType::Type1;
            let case = if both_stable {
                let (alpha, alpha_fd) = compute_alpha(p, x, &ys[0], &ys[1])?;
                if alpha.abs() <= p.tol.res {
                    SimplicityCase::NotSimple {
                        reason: "two minimizers but their objective slopes do not separate".to_string(),
                    }
                } else {
                    SimplicityCase::CaseII { alpha, alpha_fd }
                }
            } else {
                SimplicityCase::NotSimple {
                    reason: format!(
                        "two minimizers of types {} / {}",
                        c1.point_type.label(),
                        c2.point_type.label()
                    ),
                }
            };
            Ok(SimplicityReport {
                case,
                minimizers: ys,
                value: sol.value,
                classifications: vec![c1, c2],
            })
        }
        k => Ok(SimplicityReport {
            case: SimplicityCase::NotSimple { reason: format!("{k} global minimizers") },
            minimizers: sol.minimizers,
            value: sol.value,
            classifications: Vec::new(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::load_problem;

    fn classify_str(text: &str, x: f64, y: &[f64]) -> Classification {
        let p = load_problem(text).unwrap();
        classify_point(&p, x, y).unwrap()
    }

    #[test]
    fn unconstrained_minimum_is_type_1() {
        let c = classify_str(
            r#"
[problem]
n = 1
m = 1
p = 0
q = 0
[upper]
F = "(x - 1)^2 + y1^2"
[lower]
f = "(y1 - x)^2"
"#,
            0.7,
            &[0.7],
        );
        assert_eq!(c.point_type, PointType::Type1);
        assert!(c.licq && c.weak_indices.is_empty());
        assert!((c.reduced_hessian_eigenvalues[0] - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn vanishing_multiplier_is_type_2() {
        let c = classify_str(
            r#"
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
"#,
            0.0,
            &[0.0],
        );
        assert_eq!(c.point_type, PointType::Type2 { vanishing_index: 0 });
        assert_eq!(c.weak_indices, vec![0]);
    }

    #[test]
    fn cubic_fold_is_type_3() {
        let c = classify_str(
            r#"
[problem]
n = 1
m = 1
p = 0
q = 0
[upper]
F = "y1"
[lower]
f = "y1^3 / 3 - x * y1"
"#,
            0.0,
            &[0.0],
        );
        assert_eq!(c.point_type, PointType::Type3);
        assert_eq!(c.reduced_hessian_eigenvalues.len(), 1);
        assert!(c.reduced_hessian_eigenvalues[0].abs() <= 1e-12);
    }

    #[test]
    fn vanishing_circle_is_type_4() {
        let c = classify_str(
            r#"
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
"#,
            0.0,
            &[0.0, 0.0],
        );
        assert_eq!(c.point_type, PointType::Type4);
        assert!(!c.licq);
        let mfcq = c.mfcq.unwrap();
        assert!(!mfcq.holds);
        let cert = mfcq.certificate.unwrap();
        assert_eq!(cert.len(), 1);
        assert!((cert[0] - 1.0).abs() < 1e-9, "certificate {cert:?}");
    }

    #[test]
    fn opposing_halfplanes_are_type_5_1() {
        let c = classify_str(
            r#"
[problem]
n = 1
m = 1
p = 2
q = 0
[upper]
F = "x + y1^2"
[lower]
f = "y1"
g1 = "y1 - x"
g2 = "-y1 - x"
"#,
            0.0,
            &[0.0],
        );
        assert_eq!(c.point_type, PointType::Type51);
        let mfcq = c.mfcq.unwrap();
        assert!(!mfcq.holds);
        let cert = mfcq.certificate.unwrap();
        assert!((cert[0] - 0.5).abs() <= 1e-9 && (cert[1] - 0.5).abs() <= 1e-9);
    }

    #[test]
    fn triple_corner_is_type_5_2() {
        let c = classify_str(
            r#"
[problem]
n = 1
m = 2
p = 3
q = 0
[upper]
F = "x^2 + y1^2"
[lower]
f = "-y1 - y2"
g1 = "y1 - x"
g2 = "y2 - x"
g3 = "y1 + 2 * y2 - x"
"#,
            0.0,
            &[0.0, 0.0],
        );
        assert_eq!(c.point_type, PointType::Type52);
        let mfcq = c.mfcq.unwrap();
        assert!(mfcq.holds && mfcq.margin > 1e-3);
    }

    #[test]
    fn duplicated_constraint_is_not_classifiable() {
        let c = classify_str(
            r#"
[problem]
n = 1
m = 1
p = 2
q = 0
[upper]
F = "x^2 + y1^2"
[lower]
f = "y1^2"
g1 = "y1 - x"
g2 = "y1 - x"
"#,
            0.0,
            &[0.0],
        );
        assert!(matches!(c.point_type, PointType::NotClassifiable { .. }));
        assert!(!c.licq);
    }

    #[test]
    fn double_well_split_is_case_ii() {
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
        let rep = classify_simplicity(&p, 0.0, None).unwrap();
        match rep.case {
            SimplicityCase::CaseII { alpha, alpha_fd } => {
                assert!((alpha - 2.0).abs() <= 1e-6, "alpha = {alpha}");
                assert!((alpha - alpha_fd).abs() <= 1e-6);
            }
            other => panic!("expected case II, got {other:?}"),
        }
        assert!((rep.minimizers[0][0] + 1.0).abs() <= 1e-6);
        assert!((rep.minimizers[1][0] - 1.0).abs() <= 1e-6);
        assert!((rep.value + 0.25).abs() <= 1e-9);

        // With a query near +1 the branch order flips and the slope negates.
        let rep2 = classify_simplicity(&p, 0.0, Some(&[0.9])).unwrap();
        match rep2.case {
            SimplicityCase::CaseII { alpha, .. } => assert!((alpha + 2.0).abs() <= 1e-6),
            other => panic!("expected case II, got {other:?}"),
        }
    }

    #[test]
    fn quadratic_tracking_is_case_i() {
        let p = load_problem(
            r#"
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
"#,
        )
        .unwrap();
        let rep = classify_simplicity(&p, 0.5, None).unwrap();
        assert_eq!(rep.case, SimplicityCase::CaseI);
        assert!((rep.minimizers[0][0] - 0.5).abs() <= 1e-7);
        assert_eq!(rep.classifications[0].point_type, PointType::Type1);
    }
}

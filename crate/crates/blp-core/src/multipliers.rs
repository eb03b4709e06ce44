//! Multiplier sets at a lower-level feasible point: the Fritz-John set (over
//! the unit simplex in `(u0, u)`) and the KKT set, with their polyhedral
//! structure computed exactly by vertex/ray enumeration, plus the combined
//! stationarity flags.

use crate::classify::mfcq_margin;
use crate::linalg;
use crate::problem::BilevelProblem;
use crate::Result;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiplierKind {
    Empty,
    Singleton,
    Ray,
    Segment,
    Polytope,
}

/// A polyhedral multiplier set. Vertices are full-length vectors: `p`
/// components for KKT sets, `1 + p` for Fritz-John sets (the abnormal
/// component first). Rays are normalized to unit coordinate sum.
#[derive(Debug, Clone, Serialize)]
pub struct MultiplierSet {
    pub kind: MultiplierKind,
    pub vertices: Vec<Vec<f64>>,
    pub rays: Vec<Vec<f64>>,
    /// Largest infinity-norm residual of the defining system over vertices.
    pub residual: f64,
    pub active: Vec<usize>,
}

impl MultiplierSet {
    pub fn is_empty(&self) -> bool {
        self.kind == MultiplierKind::Empty
    }

    /// The unique member, when the set is a singleton.
    pub fn singleton(&self) -> Option<&Vec<f64>> {
        if self.kind == MultiplierKind::Singleton {
            self.vertices.first()
        } else {
            None
        }
    }
}

fn embed(reduced: &DVector<f64>, active: &[usize], full_len: usize, offset: usize) -> Vec<f64> {
    let mut out = vec![0.0; full_len];
    for (slot, &j) in active.iter().enumerate() {
        out[offset + j] = reduced[slot + offset];
    }
    if offset == 1 {
        out[0] = reduced[0];
    }
    out
}

/// Fritz-John multiplier set
/// `{ (u0,u) >= 0 : u0 grad_y f + sum u_j grad_y g_j = 0, u^T g = 0, |(u0,u)|_1 = 1 }`.
/// Always a (possibly empty) polytope; its vertices are enumerated exactly.
pub fn fj_multipliers(p: &BilevelProblem, x: f64, y: &[f64]) -> Result<MultiplierSet> {
    let j0 = p.active_set(x, y)?;
    let m = p.m;
    let k = j0.len();
    let mut a = DMatrix::zeros(m + 1, 1 + k);
    let gf = p.grad_y_f(x, y)?;
    for i in 0..m {
        a[(i, 0)] = gf[i];
    }
    for (c, &j) in j0.iter().enumerate() {
        let gg = p.grad_y_g(j, x, y)?;
        for i in 0..m {
            a[(i, 1 + c)] = gg[i];
        }
    }
    for c in 0..1 + k {
        a[(m, c)] = 1.0;
    }
    let mut b = DVector::zeros(m + 1);
    b[m] = 1.0;
    let verts = linalg::polytope_vertices(&a, &b, p.tol.res);
    let residual = verts.iter().map(|z| (&a * z - &b).amax()).fold(0.0, f64::max);
    let vertices: Vec<Vec<f64>> =
        verts.iter().map(|z| embed(z, &j0, 1 + p.p, 1)).collect();
    let kind = match vertices.len() {
        0 => MultiplierKind::Empty,
        1 => MultiplierKind::Singleton,
        2 => MultiplierKind::Segment,
        _ => MultiplierKind::Polytope,
    };
    Ok(MultiplierSet { kind, vertices, rays: Vec::new(), residual, active: j0 })
}

/// KKT multiplier set `{ u >= 0 : grad_y f + sum u_j grad_y g_j = 0, u^T g = 0 }`,
/// possibly unbounded; vertices and extreme recession rays are enumerated.
pub fn kkt_multipliers(p: &BilevelProblem, x: f64, y: &[f64]) -> Result<MultiplierSet> {
    let j0 = p.active_set(x, y)?;
    let a = p.grad_y_g_cols(&j0, x, y)?;
    let b = -p.grad_y_f(x, y)?;
    let verts = linalg::polytope_vertices(&a, &b, p.tol.res);
    let residual = verts.iter().map(|z| (&a * z - &b).amax()).fold(0.0, f64::max);
    let rays_raw = if verts.is_empty() { Vec::new() } else { linalg::extreme_rays(&a, p.tol.res) };
    let vertices: Vec<Vec<f64>> = verts.iter().map(|z| embed(z, &j0, p.p, 0)).collect();
    let rays: Vec<Vec<f64>> = rays_raw.iter().map(|z| embed(z, &j0, p.p, 0)).collect();
    let kind = match (vertices.len(), rays.len()) {
        (0, _) => MultiplierKind::Empty,
        (1, 0) => MultiplierKind::Singleton,
        (1, 1) => MultiplierKind::Ray,
        (2, 0) => MultiplierKind::Segment,
        _ => MultiplierKind::Polytope,
    };
    Ok(MultiplierSet { kind, vertices, rays, residual, active: j0 })
}

/// Whether the point is a B-type stationary point, when certifiable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum BStatus {
    /// Equivalence with the KKT status is certified: either KKT holds
    /// directly, or a constraint qualification (MFCQ, or active constraints
    /// affine in y) pins the B condition to the KKT condition.
    KktCertified { holds: bool },
    Undetermined,
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityFlags {
    /// Some nonzero, sign-free Lagrange vector annihilates the gradients.
    pub is_gc: bool,
    pub is_fj: bool,
    pub is_kkt: bool,
    pub b_status: BStatus,
    pub active: Vec<usize>,
    /// Smallest and largest singular value of `[grad_y f | grad_y g_J0]`.
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Evaluate all stationarity conditions at a lower-level feasible point.
/// The implication chain `is_kkt => is_fj => is_gc` is enforced by
/// construction: a stronger certificate always certifies the weaker flag.
pub fn stationarity_status(p: &BilevelProblem, x: f64, y: &[f64]) -> Result<StationarityFlags> {
    let j0 = p.active_set(x, y)?;
    let m = p.m;
    let mut stacked = DMatrix::zeros(m, 1 + j0.len());
    let gf = p.grad_y_f(x, y)?;
    for i in 0..m {
        stacked[(i, 0)] = gf[i];
    }
    for (c, &j) in j0.iter().enumerate() {
        let gg = p.grad_y_g(j, x, y)?;
        for i in 0..m {
            stacked[(i, 1 + c)] = gg[i];
        }
    }
    let sv = linalg::singular_values(&stacked);
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let sigma_min = if sv.len() < stacked.ncols() { 0.0 } else { sv.last().copied().unwrap_or(0.0) };
    let rank_deficient = !linalg::full_column_rank(&stacked, p.tol.rank);

    let fj = fj_multipliers(p, x, y)?;
    let kkt = kkt_multipliers(p, x, y)?;
    let is_kkt = !kkt.is_empty();
    let is_fj = !fj.is_empty() || is_kkt;
    let is_gc = rank_deficient || is_fj;

    let b_status = if is_kkt {
        BStatus::KktCertified { holds: true }
    } else {
        let affine = j0.iter().all(|&j| p.g_affine_in_y(j));
        let mfcq = mfcq_margin(p, x, y, &j0)?.holds;
        if affine || mfcq {
            BStatus::KktCertified { holds: false }
        } else {
            BStatus::Undetermined
        }
    };

    Ok(StationarityFlags { is_gc, is_fj, is_kkt, b_status, active: j0, sigma_min, sigma_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::load_problem;

    fn circle() -> BilevelProblem {
        load_problem(
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
        )
        .unwrap()
    }

    fn kink() -> BilevelProblem {
        load_problem(
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
        )
        .unwrap()
    }

    fn corner() -> BilevelProblem {
        load_problem(
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
        )
        .unwrap()
    }

    #[test]
    fn shrinking_circle_fj_is_abnormal_singleton() {
        let p = circle();
        let fj = fj_multipliers(&p, 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(fj.kind, MultiplierKind::Singleton);
        let v = fj.singleton().unwrap();
        assert!((v[0] - 0.0).abs() <= 1e-8 && (v[1] - 1.0).abs() <= 1e-8);
        assert!(fj.residual <= 1e-10);

        let kkt = kkt_multipliers(&p, 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(kkt.kind, MultiplierKind::Empty);

        let flags = stationarity_status(&p, 0.0, &[0.0, 0.0]).unwrap();
        assert!(flags.is_gc && flags.is_fj && !flags.is_kkt);
        // The single active constraint has zero y-Hessian? No: it is a
        // circle, and MFCQ fails at the degenerate point, so B stays open.
        assert_eq!(flags.b_status, BStatus::Undetermined);
    }

    #[test]
    fn kink_interior_and_boundary() {
        let p = kink();
        // Interior stationary point of f: KKT with zero multiplier.
        let fj = fj_multipliers(&p, 0.0, &[0.0]).unwrap();
        assert_eq!(fj.kind, MultiplierKind::Singleton);
        let v = fj.singleton().unwrap();
        assert!((v[0] - 1.0).abs() < 1e-9 && v[1].abs() < 1e-9, "fj {v:?}");
        let kkt = kkt_multipliers(&p, 0.0, &[0.0]).unwrap();
        assert_eq!(kkt.kind, MultiplierKind::Singleton);
        assert!(kkt.singleton().unwrap()[0].abs() < 1e-9);

        // Active branch point (1, 1): u = 2.
        let kkt = kkt_multipliers(&p, 1.0, &[1.0]).unwrap();
        assert_eq!(kkt.kind, MultiplierKind::Singleton);
        assert!((kkt.singleton().unwrap()[0] - 2.0).abs() <= 1e-9);

        // Feasible interior, gradient nonzero: nothing holds.
        let flags = stationarity_status(&p, 0.5, &[1.0]).unwrap();
        assert!(!flags.is_gc && !flags.is_fj && !flags.is_kkt);
        // g is affine in y, so the negative B verdict is certified.
        assert_eq!(flags.b_status, BStatus::KktCertified { holds: false });
    }

    #[test]
    fn corner_has_kkt_ray_and_fj_segment() {
        let p = corner();
        let kkt = kkt_multipliers(&p, 0.0, &[0.0]).unwrap();
        assert_eq!(kkt.kind, MultiplierKind::Ray);
        let base = &kkt.vertices[0];
        assert!((base[0] - 0.0).abs() <= 1e-9 && (base[1] - 1.0).abs() <= 1e-9);
        let dir = &kkt.rays[0];
        assert!((dir[0] - dir[1]).abs() <= 1e-9 && dir[0] > 0.0);

        let fj = fj_multipliers(&p, 0.0, &[0.0]).unwrap();
        assert_eq!(fj.kind, MultiplierKind::Segment);
        assert_eq!(fj.vertices.len(), 2);
        let lo = &fj.vertices[0];
        let hi = &fj.vertices[1];
        assert!((lo[0] - 0.0).abs() <= 1e-9 && (lo[1] - 0.5).abs() <= 1e-9 && (lo[2] - 0.5).abs() <= 1e-9);
        assert!((hi[0] - 0.5).abs() <= 1e-9 && (hi[1] - 0.0).abs() <= 1e-9 && (hi[2] - 0.5).abs() <= 1e-9);

        let flags = stationarity_status(&p, 0.0, &[0.0]).unwrap();
        assert!(flags.is_gc && flags.is_fj && flags.is_kkt);
        assert_eq!(flags.b_status, BStatus::KktCertified { holds: true });
    }

    #[test]
    fn multiplier_scaling_covariance() {
        // Scaling g by c rescales KKT multipliers by 1/c and preserves flags.
        let base = kink();
        let scaled = load_problem(&base.serialize().replace("\"x - y1\"", "\"2 * (x - y1)\"")).unwrap();
        let u1 = kkt_multipliers(&base, 1.0, &[1.0]).unwrap();
        let u2 = kkt_multipliers(&scaled, 1.0, &[1.0]).unwrap();
        assert_eq!(u1.kind, u2.kind);
        assert!((u1.singleton().unwrap()[0] - 2.0 * u2.singleton().unwrap()[0]).abs() <= 1e-9);
        let f1 = stationarity_status(&base, 1.0, &[1.0]).unwrap();
        let f2 = stationarity_status(&scaled, 1.0, &[1.0]).unwrap();
        assert_eq!((f1.is_gc, f1.is_fj, f1.is_kkt), (f2.is_gc, f2.is_fj, f2.is_kkt));
    }
}

//! Dense linear-algebra helpers sized for desk-scale problems (dimensions
//! well under 20): SVD-based rank decisions with a relative cutoff,
//! nullspaces, least squares, vertex enumeration for standard-form polytopes,
//! and a small exact LP used for strict-feasibility margins.

use nalgebra::{DMatrix, DVector};

/// Singular values, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|p, q| q.partial_cmp(p).unwrap());
    sv
}

/// Numerical rank with a relative cutoff: singular values above
/// `tau * sigma_max` count. The zero matrix has rank 0 for any tau.
pub fn rank(a: &DMatrix<f64>, tau: f64) -> usize {
    let sv = singular_values(a);
    match sv.first() {
        None => 0,
        Some(&smax) if smax == 0.0 => 0,
        Some(&smax) => sv.iter().filter(|&&s| s > tau * smax).count(),
    }
}

/// Whether the matrix has full column rank under the relative cutoff.
pub fn full_column_rank(a: &DMatrix<f64>, tau: f64) -> bool {
    a.ncols() == 0 || rank(a, tau) == a.ncols()
}

/// 2-norm condition number; infinite when the smallest singular value
/// underflows relative to the largest.
pub fn cond2(a: &DMatrix<f64>) -> f64 {
    let sv = singular_values(a);
    match (sv.first(), sv.last()) {
        (Some(&smax), Some(&smin)) if smin > 0.0 => smax / smin,
        (Some(&smax), _) if smax == 0.0 => f64::INFINITY,
        (Some(_), _) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Orthonormal basis of the right nullspace (kernel) of `a`, as matrix
/// columns. Uses the relative cutoff `tau` on singular values.
pub fn nullspace(a: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let n = a.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // nalgebra computes the thin SVD; pad with zero rows so V^T is n x n and
    // the kernel rows are present for wide matrices too.
    let work = if a.nrows() < n {
        let mut padded = DMatrix::zeros(n, n);
        padded.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        padded
    } else {
        a.clone()
    };
    let svd = work.svd(false, true);
    let vt = svd.v_t.expect("svd with V requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let r = if smax == 0.0 {
        0
    } else {
        svd.singular_values.iter().filter(|&&s| s > tau * smax).count()
    };
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for i in r..vt.nrows() {
        cols.push(vt.row(i).transpose());
    }
    if cols.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    DMatrix::from_columns(&cols)
}

/// Minimum-norm least-squares solution of `a z = b` and the residual
/// infinity-norm. Relative cutoff `tau` guards the pseudo-inverse.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, tau: f64) -> (DVector<f64>, f64) {
    if a.ncols() == 0 {
        let r = b.amax().abs();
        return (DVector::zeros(0), if b.is_empty() { 0.0 } else { r });
    }
    if a.nrows() == 0 {
        return (DVector::zeros(a.ncols()), 0.0);
    }
    let svd = a.clone().svd(true, true);
    let z = svd.solve(b, tau * svd.singular_values.max()).unwrap_or_else(|_| DVector::zeros(a.ncols()));
    let resid = (a * &z - b).amax();
    (z, resid)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    // Symmetrize to shed roundoff asymmetry before the solver.
    let s = (a + a.transpose()) * 0.5;
    let mut ev: Vec<f64> = s.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ev
}

/// Vertices (basic feasible solutions) of `{ z >= 0 : A z = b }`, found by
/// enumerating column subsets with independent columns. Complete for the
/// small systems this crate builds (at most ~10 columns). Vertices are
/// deduplicated and sorted lexicographically.
pub fn polytope_vertices(a: &DMatrix<f64>, b: &DVector<f64>, tau: f64) -> Vec<DVector<f64>> {
    let n = a.ncols();
    let scale = 1.0 + b.amax();
    let mut out: Vec<DVector<f64>> = Vec::new();
    let kmax = n.min(a.nrows());
    for mask in 0_u32..(1 << n) {
        let k = mask.count_ones() as usize;
        if k > kmax {
            continue;
        }
        let cols: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let z_full = if k == 0 {
            DVector::zeros(n)
        } else {
            let sub = a.select_columns(cols.iter());
            if rank(&sub, 1e-12) < k {
                continue; // dependent support; the vertex (if any) has a smaller support
            }
            let (zs, _) = lstsq(&sub, b, 1e-12);
            if zs.iter().any(|&v| v < -tau * scale) {
                continue;
            }
            let mut z = DVector::zeros(n);
            for (slot, &ci) in cols.iter().enumerate() {
                z[ci] = zs[slot].max(0.0);
            }
            z
        };
        if (a * &z_full - b).amax() > tau * scale {
            continue;
        }
        if !out.iter().any(|v| (v - &z_full).amax() <= 1e-9 * scale) {
            out.push(z_full);
        }
    }
    out.sort_by(|p, q| {
        for i in 0..n {
            match p[i].partial_cmp(&q[i]).unwrap() {
                std::cmp::Ordering::Equal => continue,
                ord => return ord,
            }
        }
        std::cmp::Ordering::Equal
    });
    out
}

/// Extreme rays of the recession cone `{ r >= 0 : A r = 0, r != 0 }`,
/// normalized to unit coordinate sum. Computed as the vertices of the
/// simplex slice of the cone.
pub fn extreme_rays(a: &DMatrix<f64>, tau: f64) -> Vec<DVector<f64>> {
    let n = a.ncols();
    let mut rows = a.clone();
    rows = rows.insert_row(a.nrows(), 0.0);
    for j in 0..n {
        rows[(a.nrows(), j)] = 1.0;
    }
    let mut b = DVector::zeros(a.nrows() + 1);
    b[a.nrows()] = 1.0;
    polytope_vertices(&rows, &b, tau)
        .into_iter()
        .filter(|v| v.amax() > tau)
        .collect()
}

/// Exact solution of the small LP
///
/// ```text
/// maximize t  subject to  a_j . d + t <= 0 for all j,  |d_i| <= 1,  t <= 1
/// ```
///
/// by enumerating candidate vertices (all square subsystems of active
/// constraints). Returns `(t*, d*)`. A strictly positive optimum certifies a
/// direction with uniform margin against every row; `t* <= 0` certifies that
/// none exists. Row count is tiny, so enumeration is exact and fast.
pub fn max_margin_direction(rows: &[DVector<f64>], m: usize) -> (f64, DVector<f64>) {
    let dim = m + 1; // variables (d, t)
    let mut cons: Vec<(DVector<f64>, f64)> = Vec::new(); // c . v <= rhs
    for a in rows {
        let mut c = DVector::zeros(dim);
        for i in 0..m {
            c[i] = a[i];
        }
        c[m] = 1.0;
        cons.push((c, 0.0));
    }
    for i in 0..m {
        let mut c = DVector::zeros(dim);
        c[i] = 1.0;
        cons.push((c.clone(), 1.0));
        cons.push((-c, 1.0));
    }
    let mut ct = DVector::zeros(dim);
    ct[m] = 1.0;
    cons.push((ct, 1.0));

    let nc = cons.len();
    let mut best_t = f64::NEG_INFINITY;
    let mut best_d = DVector::zeros(m);
    let mut idx: Vec<usize> = (0..dim).collect();
    loop {
        // Solve the square system of the selected active constraints.
        let mut mat = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for (r, &ci) in idx.iter().enumerate() {
            mat.set_row(r, &cons[ci].0.transpose());
            rhs[r] = cons[ci].1;
        }
        if let Some(sol) = mat.lu().solve(&rhs) {
            let feasible = cons
                .iter()
                .all(|(c, lim)| c.dot(&sol) <= lim + 1e-10);
            if feasible && sol[m] > best_t {
                best_t = sol[m];
                best_d = DVector::from_fn(m, |i, _| sol[i]);
            }
        }
        // Next combination of `dim` indices out of nc.
        let mut i = dim;
        loop {
            if i == 0 {
                return (best_t, best_d);
            }
            i -= 1;
            if idx[i] + (dim - i) < nc {
                idx[i] += 1;
                for j in i + 1..dim {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn rank_with_relative_cutoff() {
        let a = mat(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(rank(&a, 1e-8), 1);
        let b = mat(2, 2, &[1.0, 0.0, 0.0, 1e-12]);
        assert_eq!(rank(&b, 1e-8), 1);
        assert_eq!(rank(&b, 1e-14), 2);
        assert_eq!(rank(&DMatrix::zeros(3, 2), 1e-8), 0);
    }

    #[test]
    fn nullspace_of_single_row() {
        let a = mat(1, 2, &[1.0, -1.0]);
        let n = nullspace(&a, 1e-10);
        assert_eq!(n.ncols(), 1);
        let v = n.column(0);
        assert!((v[0] - v[1]).abs() < 1e-12);
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lstsq_overdetermined() {
        let a = mat(3, 1, &[1.0, 1.0, 1.0]);
        let b = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let (z, r) = lstsq(&a, &b, 1e-12);
        assert!((z[0] - 2.0).abs() < 1e-12);
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_slice_vertices() {
        // { (u0,u1): 0*u0 - u1 = 0, u0+u1 = 1, u >= 0 } = {(1,0)}
        let a = mat(2, 2, &[0.0, -1.0, 1.0, 1.0]);
        let b = DVector::from_row_slice(&[0.0, 1.0]);
        let v = polytope_vertices(&a, &b, 1e-10);
        assert_eq!(v.len(), 1);
        assert!((v[0][0] - 1.0).abs() < 1e-10);
        assert!(v[0][1].abs() < 1e-10);
    }

    #[test]
    fn segment_has_two_vertices() {
        // { (u0,u1,u2): u0 + u1 - u2 = 0, u0+u1+u2 = 1, u >= 0 }:
        // segment from (1/2, 0, 1/2) to (0, 1/2, 1/2).
        let a = mat(2, 3, &[1.0, 1.0, -1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_row_slice(&[0.0, 1.0]);
        let v = polytope_vertices(&a, &b, 1e-10);
        assert_eq!(v.len(), 2);
        assert!((v[0][0] - 0.0).abs() < 1e-10 && (v[0][1] - 0.5).abs() < 1e-10);
        assert!((v[1][0] - 0.5).abs() < 1e-10 && (v[1][1] - 0.0).abs() < 1e-10);
    }

    #[test]
    fn ray_detection_via_recession_cone() {
        // KKT set of the corner instance: u1 - u2 = -1, u >= 0.
        let a = mat(1, 2, &[1.0, -1.0]);
        let b = DVector::from_row_slice(&[-1.0]);
        let verts = polytope_vertices(&a, &b, 1e-10);
        assert_eq!(verts.len(), 1);
        assert!(verts[0][0].abs() < 1e-10 && (verts[0][1] - 1.0).abs() < 1e-10);
        let rays = extreme_rays(&a, 1e-10);
        assert_eq!(rays.len(), 1);
        assert!((rays[0][0] - 0.5).abs() < 1e-10 && (rays[0][1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn margin_lp_detects_strict_directions() {
        // Rows (1,0) and (0,1): d = (-1,-1) gives margin 1.
        let rows = vec![
            DVector::from_row_slice(&[1.0, 0.0]),
            DVector::from_row_slice(&[0.0, 1.0]),
        ];
        let (t, d) = max_margin_direction(&rows, 2);
        assert!(t > 0.99);
        assert!(rows.iter().all(|a| a.dot(&d) <= -t + 1e-9));

        // Opposing rows: no strict direction exists.
        let rows = vec![
            DVector::from_row_slice(&[1.0]),
            DVector::from_row_slice(&[-1.0]),
        ];
        let (t, _) = max_margin_direction(&rows, 1);
        assert!(t.abs() <= 1e-9);

        // A zero row caps the margin at zero.
        let rows = vec![DVector::from_row_slice(&[0.0, 0.0])];
        let (t, _) = max_margin_direction(&rows, 2);
        assert!(t.abs() <= 1e-9);

        // No rows at all: the box corner reaches t = 1.
        let (t, _) = max_margin_direction(&[], 1);
        assert!((t - 1.0).abs() < 1e-9);
    }
}

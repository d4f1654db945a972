//! Small dense determinant and rank helpers.

use nalgebra::DMatrix;

/// Determinant of a row-major n x n matrix; the buffer is overwritten.
pub fn det_in_place(a: &mut [f64], n: usize) -> f64 {
    debug_assert_eq!(a.len(), n * n);
    match n {
        0 => 1.0,
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        3 => {
            a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                + a[2] * (a[3] * a[7] - a[4] * a[6])
        }
        _ => lu_det(a, n),
    }
}

fn lu_det(a: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for c in 0..n {
        let mut piv = c;
        let mut best = a[c * n + c].abs();
        for r in c + 1..n {
            let v = a[r * n + c].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if piv != c {
            for j in 0..n {
                a.swap(c * n + j, piv * n + j);
            }
            det = -det;
        }
        let p = a[c * n + c];
        det *= p;
        for r in c + 1..n {
            let f = a[r * n + c] / p;
            if f != 0.0 {
                for j in c + 1..n {
                    a[r * n + j] -= f * a[c * n + j];
                }
            }
        }
    }
    det
}

/// Determinant of a square matrix given by rows.
pub fn det_rows(rows: &[&[f64]]) -> f64 {
    let n = rows.len();
    let mut buf = Vec::with_capacity(n * n);
    for r in rows {
        buf.extend_from_slice(&r[..n]);
    }
    det_in_place(&mut buf, n)
}

/// Singular values of a row-major m x n matrix.
pub fn singular_values(data: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mat = DMatrix::from_row_slice(m, n, data);
    mat.svd(false, false).singular_values.iter().copied().collect()
}

/// Numerical rank with tolerance rel_tol * largest singular value.
pub fn rank(data: &[f64], m: usize, n: usize, rel_tol: f64) -> usize {
    if m == 0 || n == 0 {
        return 0;
    }
    let sv = singular_values(data, m, n);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Orthonormal basis of the right null space of a row-major m x n matrix.
pub fn null_space(data: &[f64], m: usize, n: usize, rel_tol: f64) -> Vec<Vec<f64>> {
    // Pad with zero rows so the SVD returns a full n x n V^T.
    let rows = m.max(n);
    let mut padded = data.to_vec();
    padded.resize(rows * n, 0.0);
    let mat = DMatrix::from_row_slice(rows, n, &padded);
    let svd = mat.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    (0..n)
        .filter(|&i| svd.singular_values[i] <= rel_tol * smax)
        .map(|i| vt.row(i).iter().copied().collect())
        .collect()
}

/// log det(Z'Z) for a row-major m x c matrix Z, via Householder QR with
/// column pivoting; -inf when Z is rank deficient. Rows should be ordered by
/// decreasing norm so that graded rows keep their relative accuracy. The
/// buffer is overwritten.
pub fn gram_logdet_qr(z: &mut [f64], m: usize, c: usize) -> f64 {
    gram_logdet_qr_pivots(z, m, c).0
}

/// As [`gram_logdet_qr`], also returning the ratio of the smallest to the
/// largest squared pivot.
pub fn gram_logdet_qr_pivots(z: &mut [f64], m: usize, c: usize) -> (f64, f64) {
    if m < c {
        return (f64::NEG_INFINITY, 0.0);
    }
    let mut logdet = 0.0;
    let (mut pmin, mut pmax) = (f64::INFINITY, 0.0f64);
    for k in 0..c {
        let col_norm2 = |z: &[f64], j: usize| -> f64 {
            (k..m).map(|i| z[i * c + j] * z[i * c + j]).sum()
        };
        let mut piv = k;
        let mut best = col_norm2(z, k);
        for j in k + 1..c {
            let v = col_norm2(z, j);
            if v > best {
                best = v;
                piv = j;
            }
        }
        if best == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        if piv != k {
            for i in 0..m {
                z.swap(i * c + k, i * c + piv);
            }
        }
        let alpha = best.sqrt();
        let x0 = z[k * c + k];
        let r = if x0 > 0.0 { -alpha } else { alpha };
        // v = x - r e_1 stored in place; H = I - 2 v v' / v'v.
        z[k * c + k] = x0 - r;
        let vtv = 2.0 * (best - r * x0);
        for j in k + 1..c {
            let s: f64 = (k..m).map(|i| z[i * c + k] * z[i * c + j]).sum();
            let t = 2.0 * s / vtv;
            for i in k..m {
                z[i * c + j] -= t * z[i * c + k];
            }
        }
        logdet += best.ln();
        pmin = pmin.min(best);
        pmax = pmax.max(best);
    }
    (logdet, pmin / pmax)
}

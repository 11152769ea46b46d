//! Small dense kernels on row-major slices, used by the hot integration and
//! reconstruction loops where nalgebra's heap matrices would allocate.

/// In-place Cholesky of a row-major `d×d` SPD matrix into its lower factor.
/// Returns the smallest pivot (before the square root) on success, or the
/// failing pivot on error.
pub fn cholesky_in_place(a: &mut [f64], d: usize) -> Result<f64, f64> {
    let mut min_pivot = f64::INFINITY;
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= a[j * d + k] * a[j * d + k];
        }
        if !(s > 0.0) {
            return Err(s);
        }
        min_pivot = min_pivot.min(s);
        let ljj = s.sqrt();
        a[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / ljj;
        }
        for i in 0..j {
            a[i * d + j] = 0.0;
        }
    }
    Ok(min_pivot)
}

/// True when `a − tol·I` admits a Cholesky factorization.
pub fn is_positive_definite(a: &[f64], d: usize, tol: f64, scratch: &mut [f64]) -> bool {
    scratch[..d * d].copy_from_slice(&a[..d * d]);
    for i in 0..d {
        scratch[i * d + i] -= tol;
    }
    cholesky_in_place(&mut scratch[..d * d], d).is_ok()
}

/// Determinant and inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse_det(a: &[f64], d: usize) -> Option<(Vec<f64>, f64)> {
    let mut l = a.to_vec();
    cholesky_in_place(&mut l, d).ok()?;
    let det: f64 = (0..d).map(|i| l[i * d + i] * l[i * d + i]).product();
    // Solve L Lᵀ X = I column by column.
    let mut inv = vec![0.0; d * d];
    let mut y = vec![0.0; d];
    for c in 0..d {
        for i in 0..d {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[i * d + k] * y[k];
            }
            y[i] = s / l[i * d + i];
        }
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in i + 1..d {
                s -= l[k * d + i] * inv[k * d + c];
            }
            inv[i * d + c] = s / l[i * d + i];
        }
    }
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (inv[i * d + j] + inv[j * d + i]);
            inv[i * d + j] = v;
            inv[j * d + i] = v;
        }
    }
    Some((inv, det))
}

/// `xᵀ A x` for row-major `A`.
#[inline]
pub fn quad_form(a: &[f64], x: &[f64], d: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        let mut r = 0.0;
        for j in 0..d {
            r += a[i * d + j] * x[j];
        }
        s += x[i] * r;
    }
    s
}

/// Replaces `a` by `(a + aᵀ)/2`.
#[inline]
pub fn symmetrize(a: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (a[i * d + j] + a[j * d + i]);
            a[i * d + j] = v;
            a[j * d + i] = v;
        }
    }
}

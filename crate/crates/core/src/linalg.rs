//! Small dense kernels for the M×M systems solved per Vecchia position.
//!
//! Matrices are square, row-major, and only the lower triangle is read.

/// Four-lane dot product; the fixed lane layout keeps results reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..n {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Overwrites the lower triangle of `a` with its Cholesky factor.
/// Returns the failing pivot index when `a` is not positive definite.
pub fn cholesky_in_place(a: &mut [f64], m: usize) -> Result<(), usize> {
    debug_assert!(a.len() >= m * m);
    for j in 0..m {
        let (head, tail) = a.split_at_mut(j * m);
        let row_j = &mut tail[..m];
        let d = row_j[j] - dot(&row_j[..j], &row_j[..j]);
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let djj = d.sqrt();
        row_j[j] = djj;
        let _ = head;
        for i in (j + 1)..m {
            let (upper, lower) = a.split_at_mut(i * m);
            let rj = &upper[j * m..j * m + j];
            let ri = &mut lower[..m];
            let s = ri[j] - dot(&ri[..j], rj);
            ri[j] = s / djj;
        }
    }
    Ok(())
}

/// Solves `L y = b` in place.
pub fn solve_lower(l: &[f64], m: usize, b: &mut [f64]) {
    for i in 0..m {
        let row = &l[i * m..i * m + i];
        let s = b[i] - dot(row, &b[..i]);
        b[i] = s / l[i * m + i];
    }
}

/// Solves `Lᵀ x = b` in place.
pub fn solve_lower_transpose(l: &[f64], m: usize, b: &mut [f64]) {
    for i in (0..m).rev() {
        let bi = b[i] / l[i * m + i];
        b[i] = bi;
        for k in 0..i {
            b[k] -= l[i * m + k] * bi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a0 = [4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0];
        let mut l = a0;
        cholesky_in_place(&mut l, 3).unwrap();
        let rhs = [1.0, -2.0, 0.5];
        let mut x = rhs;
        solve_lower(&l, 3, &mut x);
        solve_lower_transpose(&l, 3, &mut x);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|k| a0[i * 3 + k] * x[k]).sum();
            assert!((ax - rhs[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = [1.0, 2.0, 2.0, 1.0];
        assert_eq!(cholesky_in_place(&mut a, 2), Err(1));
    }
}

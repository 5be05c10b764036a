//! One-sided Jacobi (Hestenes) singular values for small dense matrices.

/// Singular values of a row-major `rows x cols` matrix, sorted descending.
pub fn singular_values(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
    assert_eq!(data.len(), rows * cols, "data length does not match shape");
    // Work on columns of the taller orientation so the column count is minimal.
    let (m, n, cols_major) = if rows >= cols {
        let mut c = vec![vec![0.0; rows]; cols];
        for i in 0..rows {
            for j in 0..cols {
                c[j][i] = data[i * cols + j];
            }
        }
        (rows, cols, c)
    } else {
        let mut c = vec![vec![0.0; cols]; rows];
        for i in 0..rows {
            for j in 0..cols {
                c[i][j] = data[i * cols + j];
            }
        }
        (cols, rows, c)
    };
    let mut a = cols_major;
    let eps = 1e-15;
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    alpha += a[p][i] * a[p][i];
                    beta += a[q][i] * a[q][i];
                    gamma += a[p][i] * a[q][i];
                }
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let ap = a[p][i];
                    let aq = a[q][i];
                    a[p][i] = c * ap - s * aq;
                    a[q][i] = s * ap + c * aq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = a
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sv
}

/// Largest singular value, 0 for an empty or all-zero matrix.
pub fn largest_singular_value(rows: usize, cols: usize, data: &[f64]) -> f64 {
    singular_values(rows, cols, data).first().copied().unwrap_or(0.0)
}

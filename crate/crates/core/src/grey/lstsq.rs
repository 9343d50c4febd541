//! Dense linear least squares via Householder QR on an equilibrated design.

use super::GreyError;

/// Columns whose norm falls below this fraction of the largest column norm
/// are treated as identically zero.
const ZERO_COLUMN_TOL: f64 = 1e-10;

/// Largest accepted ratio between the extreme diagonal entries of `R` after
/// column equilibration.
pub const CONDITION_LIMIT: f64 = 1e12;

/// `Y` and `Z` of the linear model `Y = Z Q + r`, with `Z` stored by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresSystem {
    pub y: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

impl LeastSquaresSystem {
    pub fn new(y: Vec<f64>, z: Vec<Vec<f64>>) -> Self {
        Self { y, z }
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn cols(&self) -> usize {
        self.z.first().map_or(0, Vec::len)
    }

    /// `Y - Z q`.
    pub fn residual(&self, q: &[f64]) -> Vec<f64> {
        self.z
            .iter()
            .zip(&self.y)
            .map(|(row, y)| y - row.iter().zip(q).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// `Z^T v`.
    pub fn transpose_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for (row, vi) in self.z.iter().zip(v) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
        out
    }

    /// Infinity norm (max absolute row sum) of `Z`.
    pub fn z_norm_inf(&self) -> f64 {
        self.z
            .iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn y_norm_inf(&self) -> f64 {
        self.y.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// Minimises `||Y - Z Q||^2`.
///
/// Columns are scaled to unit norm before factorization so the condition
/// estimate reflects genuine collinearity rather than units. A zero column or
/// an equilibrated condition estimate above [`CONDITION_LIMIT`] is reported as
/// rank deficiency.
pub fn solve_ls(system: &LeastSquaresSystem) -> Result<Vec<f64>, GreyError> {
    let m = system.rows();
    let k = system.cols();
    if k == 0 || m < k {
        return Err(GreyError::Underdetermined { rows: m, cols: k });
    }
    if system.z.iter().any(|row| row.len() != k) {
        return Err(GreyError::Shape("ragged design matrix".into()));
    }
    if system.y.iter().chain(system.z.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(GreyError::NonFinite("least-squares input"));
    }

    // Column-major copy, scaled to unit column norms.
    let mut a: Vec<Vec<f64>> = (0..k)
        .map(|j| system.z.iter().map(|row| row[j]).collect())
        .collect();
    let norms: Vec<f64> = a.iter().map(|col| norm(col)).collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    if max_norm == 0.0 || norms.iter().any(|&n| n <= ZERO_COLUMN_TOL * max_norm) {
        return Err(GreyError::RankDeficient {
            condition: f64::INFINITY,
        });
    }
    for (col, n) in a.iter_mut().zip(&norms) {
        col.iter_mut().for_each(|v| *v /= n);
    }

    let mut rhs = system.y.clone();
    let mut diag = vec![0.0; k];
    for j in 0..k {
        // Householder reflector zeroing a[j][j+1..].
        let alpha = norm(&a[j][j..]);
        let sign = if a[j][j] >= 0.0 { 1.0 } else { -1.0 };
        let r_jj = -sign * alpha;
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= r_jj;
        let v_norm_sq: f64 = v.iter().map(|x| x * x).sum();
        diag[j] = r_jj;
        if v_norm_sq == 0.0 {
            continue;
        }
        let reflect = |col: &mut [f64]| {
            let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            let s = 2.0 * dot / v_norm_sq;
            col.iter_mut().zip(&v).for_each(|(c, vi)| *c -= s * vi);
        };
        for col in a.iter_mut().skip(j + 1) {
            reflect(&mut col[j..]);
        }
        reflect(&mut rhs[j..]);
        a[j][j] = r_jj;
    }

    let max_diag = diag.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let min_diag = diag.iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min);
    let condition = if min_diag == 0.0 {
        f64::INFINITY
    } else {
        max_diag / min_diag
    };
    if condition > CONDITION_LIMIT {
        return Err(GreyError::RankDeficient { condition });
    }

    // Back substitution on R x = (Q^T y)[..k]; R[i][j] lives in a[j][i].
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut acc = rhs[i];
        for j in i + 1..k {
            acc -= a[j][i] * x[j];
        }
        x[i] = acc / a[i][i];
    }
    Ok(x.iter().zip(&norms).map(|(xi, n)| xi / n).collect())
}

fn norm(v: &[f64]) -> f64 {
    // Scaled to avoid overflow on large accumulations.
    let scale = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    scale * v.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}

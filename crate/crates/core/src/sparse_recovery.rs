//! Greedy sparse recovery from compressed measurements: orthogonal
//! matching pursuit with an incrementally updated QR factorization, plus
//! the reconstruct-separate-recompress baseline built on top of it.

use crate::error::{check_dims, Error, Result};
use crate::sensing::{dot, norm, SensingMatrix};

/// A signal with a known sparsity pattern.
#[derive(Debug, Clone)]
pub struct SparseVector {
    values: Vec<f64>,
    support: Vec<usize>,
}

impl SparseVector {
    /// Build from dense values; the support is inferred from the nonzeros.
    pub fn from_dense(values: Vec<f64>) -> Self {
        let support = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        SparseVector { values, support }
    }

    /// Build from an explicit support and nonzero entries.
    pub fn from_support(dim: usize, support: &[usize], nonzeros: &[f64]) -> Result<Self> {
        check_dims(support.len(), nonzeros.len())?;
        let mut values = vec![0.0; dim];
        for (&i, &v) in support.iter().zip(nonzeros) {
            if i >= dim {
                return Err(Error::parameter(format!("support index {i} >= dim {dim}")));
            }
            values[i] = v;
        }
        let mut support: Vec<usize> = support.to_vec();
        support.sort_unstable();
        Ok(SparseVector { values, support })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn sparsity(&self) -> usize {
        self.support.len()
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Outcome of a greedy recovery run.
#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub estimate: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub support_found: Vec<usize>,
    /// Residual norm after each iteration (index 0 = before any step).
    pub residual_trace: Vec<f64>,
}

/// Orthogonal matching pursuit: per iteration, pick the column most
/// correlated with the residual (ties broken toward the lowest index),
/// extend a thin QR of the selected columns, and re-solve least squares
/// on the active support. Stops when `residual_norm <= tol` or `k_max`
/// columns are active.
pub fn omp_reconstruct(
    phi: &SensingMatrix,
    y: &[f64],
    k_max: usize,
    tol: f64,
) -> Result<RecoveryResult> {
    check_dims(phi.rows(), y.len())?;
    if k_max == 0 || k_max > phi.rows() {
        return Err(Error::parameter(format!(
            "k_max {} must be in 1..={}",
            k_max,
            phi.rows()
        )));
    }
    if tol < 0.0 {
        return Err(Error::parameter("tol must be >= 0"));
    }

    let d = phi.rows();
    let n = phi.cols();
    let mut residual = y.to_vec();
    let mut support: Vec<usize> = Vec::new();
    // Thin QR of the selected columns: q holds orthonormal columns,
    // r the upper triangle (column-major per selected column).
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut r: Vec<Vec<f64>> = Vec::new();
    let mut trace = vec![norm(&residual)];

    while support.len() < k_max {
        let res_norm = *trace.last().unwrap();
        if res_norm <= tol {
            break;
        }
        // Correlations against every unselected column.
        let mut best_idx = None;
        let mut best_corr = -1.0;
        for j in 0..n {
            if support.contains(&j) {
                continue;
            }
            let c = dot(&phi.column(j), &residual).abs();
            if c > best_corr {
                best_corr = c;
                best_idx = Some(j);
            }
        }
        let j = best_idx.ok_or_else(|| Error::Recovery {
            reason: "no selectable column".into(),
            iterations: support.len(),
        })?;

        // Orthogonalize the new column against Q (twice, for stability).
        let mut v = phi.column(j);
        let mut r_col = vec![0.0; q.len()];
        for _pass in 0..2 {
            for (t, qt) in q.iter().enumerate() {
                let proj = dot(qt, &v);
                r_col[t] += proj;
                for i in 0..d {
                    v[i] -= proj * qt[i];
                }
            }
        }
        let v_norm = norm(&v);
        if v_norm <= 1e-12 {
            return Err(Error::Recovery {
                reason: format!("selected column {j} is numerically dependent on the support"),
                iterations: support.len(),
            });
        }
        for vi in v.iter_mut() {
            *vi /= v_norm;
        }
        r_col.push(v_norm);
        support.push(j);
        q.push(v);
        r.push(r_col);

        // Residual is y minus its projection onto span(Q).
        let mut proj = vec![0.0; d];
        for qt in &q {
            let c = dot(qt, y);
            for i in 0..d {
                proj[i] += c * qt[i];
            }
        }
        for i in 0..d {
            residual[i] = y[i] - proj[i];
        }
        trace.push(norm(&residual));
    }

    // Back-substitute R c = Q^T y for the support coefficients.
    let t = support.len();
    let mut coeffs = vec![0.0; t];
    if t > 0 {
        let qty: Vec<f64> = q.iter().map(|qt| dot(qt, y)).collect();
        for i in (0..t).rev() {
            let mut s = qty[i];
            for j in i + 1..t {
                s -= r[j][i] * coeffs[j];
            }
            coeffs[i] = s / r[i][i];
        }
    }

    let mut estimate = vec![0.0; n];
    for (&j, &c) in support.iter().zip(&coeffs) {
        estimate[j] = c;
    }
    Ok(RecoveryResult {
        estimate,
        residual_norm: *trace.last().unwrap(),
        iterations: t,
        support_found: support,
        residual_trace: trace,
    })
}

/// A map from measurements back to the ambient space.
pub trait Reconstruction {
    fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>>;
}

/// OMP wrapped as a reconstruction operator with a fixed sparsity budget
/// and a tolerance relative to the measurement norm.
#[derive(Debug, Clone)]
pub struct OmpReconstruction<'a> {
    pub phi: &'a SensingMatrix,
    pub k_max: usize,
    pub rel_tol: f64,
}

impl<'a> OmpReconstruction<'a> {
    pub fn new(phi: &'a SensingMatrix, k_max: usize) -> Self {
        OmpReconstruction {
            phi,
            k_max,
            rel_tol: 1e-9,
        }
    }
}

impl Reconstruction for OmpReconstruction<'_> {
    fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>> {
        let tol = self.rel_tol * norm(y);
        Ok(omp_reconstruct(self.phi, y, self.k_max, tol)?.estimate)
    }
}

/// A separation operator returning the ordered components of a mixture.
pub trait SeparationOracle {
    fn components(&self) -> usize;
    fn separate(&self, mixture: &[f64]) -> Result<Vec<Vec<f64>>>;
}

/// The reconstruct-then-separate baseline: pull the mixture back to the
/// ambient space, separate it there, and recompress each component.
pub fn reconstruct_then_separate(
    phi: &SensingMatrix,
    y_mixed: &[f64],
    oracle: &impl SeparationOracle,
    recon: &impl Reconstruction,
) -> Result<Vec<Vec<f64>>> {
    let ambient = recon.reconstruct(y_mixed)?;
    let components = oracle.separate(&ambient)?;
    components.iter().map(|c| phi.compress(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sparse_measurement(
        phi: &SensingMatrix,
        rng: &mut ChaCha8Rng,
        k: usize,
    ) -> (SparseVector, Vec<f64>) {
        let support = rand::seq::index::sample(rng, phi.cols(), k).into_vec();
        let nonzeros: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * 2.0 - 1.0 + 0.5).collect();
        let x = SparseVector::from_support(phi.cols(), &support, &nonzeros).unwrap();
        let y = phi.compress(x.values()).unwrap();
        (x, y)
    }

    #[test]
    fn recovers_canonical_basis_vector() {
        let phi = SensingMatrix::generate(1, 256, 0.25).unwrap();
        let mut x = vec![0.0; 256];
        x[3] = 1.0;
        let y = phi.compress(&x).unwrap();
        let res = omp_reconstruct(&phi, &y, 1, 1e-9 * norm(&y)).unwrap();
        assert_eq!(res.support_found, vec![3]);
        assert!(res.residual_norm <= 1e-9);
        for i in 0..256 {
            assert!((res.estimate[i] - x[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_measurement_returns_zero_without_iterating() {
        let phi = SensingMatrix::generate(1, 64, 0.5).unwrap();
        let res = omp_reconstruct(&phi, &vec![0.0; 32], 4, 0.0).unwrap();
        assert_eq!(res.iterations, 0);
        assert!(res.estimate.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_trace_is_monotone_and_orthogonal_to_support() {
        let phi = SensingMatrix::generate(17, 256, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, y) = sparse_measurement(&phi, &mut rng, 4);
        let res = omp_reconstruct(&phi, &y, 4, 0.0).unwrap();
        for w in res.residual_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        // Residual after the final least-squares step is orthogonal to
        // every selected column.
        let est_y = phi.compress(&res.estimate).unwrap();
        let residual: Vec<f64> = y.iter().zip(&est_y).map(|(a, b)| a - b).collect();
        for &j in &res.support_found {
            assert!(dot(&phi.column(j), &residual).abs() <= 1e-9);
        }
    }

    #[test]
    fn support_is_idempotent() {
        let phi = SensingMatrix::generate(23, 256, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, y) = sparse_measurement(&phi, &mut rng, 4);
        let first = omp_reconstruct(&phi, &y, 4, 0.0).unwrap();
        let y2 = phi.compress(&first.estimate).unwrap();
        let second = omp_reconstruct(&phi, &y2, 4, 1e-9 * norm(&y2)).unwrap();
        let mut a = first.support_found.clone();
        let mut b = second.support_found.clone();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn exact_recovery_rate_at_desk_scale() {
        let mut successes = 0;
        let trials = 200;
        for seed in 0..trials {
            let phi = SensingMatrix::generate(seed, 256, 0.25).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let (x, y) = sparse_measurement(&phi, &mut rng, 4);
            let res = omp_reconstruct(&phi, &y, 4, 1e-9 * norm(&y)).unwrap();
            let err: f64 = res
                .estimate
                .iter()
                .zip(x.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let mut found = res.support_found.clone();
            found.sort_unstable();
            if found == x.support() && err / norm(x.values()) <= 1e-6 {
                successes += 1;
            }
        }
        assert!(successes as f64 / trials as f64 >= 0.99);
    }

    #[test]
    fn rejects_bad_parameters() {
        let phi = SensingMatrix::generate(1, 64, 0.5).unwrap();
        assert!(omp_reconstruct(&phi, &vec![0.0; 31], 4, 0.0).is_err());
        assert!(omp_reconstruct(&phi, &vec![0.0; 32], 0, 0.0).is_err());
        assert!(omp_reconstruct(&phi, &vec![0.0; 32], 33, 0.0).is_err());
        assert!(omp_reconstruct(&phi, &vec![0.0; 32], 4, -1.0).is_err());
    }
}

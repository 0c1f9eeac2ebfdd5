//! Bernoulli compressive sensing: matrix generation, measurement, and
//! near-isometry audits.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dims, Error, Result};

const MAGIC: &[u8; 4] = b"CSPM";
const VERSION: u16 = 1;

/// A seeded d x D random sign measurement operator with entries
/// +-1/sqrt(d), stored dense row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    seed: u64,
    sensing_rate: f64,
}

impl SensingMatrix {
    /// Draw a fresh matrix. `d = floor(sensing_rate * cols)`; signs come
    /// i.i.d. fair-coin from a counter-based generator keyed by `seed`,
    /// filled row-major so regeneration is bit-for-bit reproducible.
    pub fn generate(seed: u64, cols: usize, sensing_rate: f64) -> Result<Self> {
        if cols == 0 {
            return Err(Error::parameter("ambient dimension D must be >= 1"));
        }
        if !(sensing_rate > 0.0 && sensing_rate <= 1.0) {
            return Err(Error::parameter(format!(
                "sensing_rate must be in (0, 1], got {sensing_rate}"
            )));
        }
        let rows = (sensing_rate * cols as f64).floor() as usize;
        if rows == 0 {
            return Err(Error::parameter(format!(
                "sensing_rate {sensing_rate} with D={cols} yields zero measurements"
            )));
        }
        let scale = 1.0 / (rows as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..rows * cols)
            .map(|_| if rng.gen::<bool>() { scale } else { -scale })
            .collect();
        Ok(SensingMatrix {
            rows,
            cols,
            entries,
            seed,
            sensing_rate,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sensing_rate(&self) -> f64 {
        self.sensing_rate
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    /// Column `j` as an owned vector (entries are stored row-major).
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.entries[i * self.cols + j]).collect()
    }

    /// Measure a full-length signal: y = Phi x.
    pub fn compress(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.cols, x.len())?;
        Ok(self
            .entries
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect())
    }

    /// Write in the CSPM binary layout (entries as f32, row-major).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u16::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.rows as u32)?;
        w.write_u32::<LittleEndian>(self.cols as u32)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_f64::<LittleEndian>(self.sensing_rate)?;
        for &e in &self.entries {
            w.write_f32::<LittleEndian>(e as f32)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                reason: format!("bad magic {magic:?}, expected CSPM"),
            });
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Parse {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let rows = r.read_u32::<LittleEndian>()? as usize;
        let cols = r.read_u32::<LittleEndian>()? as usize;
        let seed = r.read_u64::<LittleEndian>()?;
        let sensing_rate = r.read_f64::<LittleEndian>()?;
        if rows == 0 || cols == 0 || rows > cols {
            return Err(Error::Parse {
                offset: 6,
                reason: format!("implausible dimensions {rows}x{cols}"),
            });
        }
        let mut entries = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            entries.push(r.read_f32::<LittleEndian>()? as f64);
        }
        Ok(SensingMatrix {
            rows,
            cols,
            entries,
            seed,
            sensing_rate,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Result of a Monte-Carlo isometry audit over random k-sparse vectors.
#[derive(Debug, Clone)]
pub struct RipReport {
    pub sparsity: usize,
    pub trials: usize,
    /// max over trials of |  ||Phi x||^2 / ||x||^2 - 1 |
    pub max_distortion: f64,
    pub distortions: Vec<f64>,
}

/// Empirically audit near-isometry of `phi` on unit-norm k-sparse vectors
/// with standard-normal nonzeros on uniformly random supports.
pub fn rip_audit(
    phi: &SensingMatrix,
    sparsity: usize,
    trials: usize,
    rng_seed: u64,
) -> Result<RipReport> {
    if sparsity == 0 || sparsity > phi.rows() {
        return Err(Error::parameter(format!(
            "sparsity {} must be in 1..={}",
            sparsity,
            phi.rows()
        )));
    }
    if trials == 0 {
        return Err(Error::parameter("trials must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut distortions = Vec::with_capacity(trials);
    for _ in 0..trials {
        let x = random_sparse_unit(&mut rng, phi.cols(), sparsity);
        let y = phi.compress(&x)?;
        let ratio = dot(&y, &y) / dot(&x, &x);
        distortions.push((ratio - 1.0).abs());
    }
    let max_distortion = distortions.iter().cloned().fold(0.0, f64::max);
    Ok(RipReport {
        sparsity,
        trials,
        max_distortion,
        distortions,
    })
}

/// Unit-norm vector with `sparsity` standard-normal nonzeros on a uniform
/// random support.
pub fn random_sparse_unit(rng: &mut impl RngCore, dim: usize, sparsity: usize) -> Vec<f64> {
    let support = rand::seq::index::sample(rng, dim, sparsity);
    let mut x = vec![0.0; dim];
    loop {
        for idx in support.iter() {
            x[idx] = standard_normal(rng);
        }
        let n = norm(&x);
        if n > 0.0 {
            for v in x.iter_mut() {
                *v /= n;
            }
            return x;
        }
    }
}

fn standard_normal(rng: &mut impl RngCore) -> f64 {
    // Box-Muller; avoids pulling in rand_distr for one distribution.
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generate_is_deterministic() {
        let a = SensingMatrix::generate(7, 784, 0.5).unwrap();
        let b = SensingMatrix::generate(7, 784, 0.5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows(), 392);
    }

    #[test]
    fn entry_magnitudes_and_rate_floor() {
        let phi = SensingMatrix::generate(7, 784, 0.25).unwrap();
        assert_eq!(phi.rows(), 196);
        let scale = 1.0 / (196f64).sqrt();
        assert!(phi.entries().iter().all(|&e| e == scale || e == -scale));

        let full = SensingMatrix::generate(3, 4, 1.0).unwrap();
        assert_eq!(full.rows(), 4);
        assert_eq!(full.entries().len(), 16);
        assert!(full.entries().iter().all(|&e| e == 0.5 || e == -0.5));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(SensingMatrix::generate(0, 0, 0.5).is_err());
        assert!(SensingMatrix::generate(0, 10, 0.0).is_err());
        assert!(SensingMatrix::generate(0, 10, 1.5).is_err());
        assert!(SensingMatrix::generate(0, 10, 0.05).is_err()); // floor -> 0 rows
    }

    #[test]
    fn columns_have_unit_norm() {
        let phi = SensingMatrix::generate(11, 128, 0.5).unwrap();
        for j in 0..phi.cols() {
            let c = phi.column(j);
            assert!((norm(&c) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn compress_is_linear() {
        let phi = SensingMatrix::generate(5, 64, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x: Vec<f64> = (0..64).map(|_| rng.gen::<f64>() - 0.5).collect();
        let y: Vec<f64> = (0..64).map(|_| rng.gen::<f64>() - 0.5).collect();
        let (a, b) = (1.7, -0.3);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
        let lhs = phi.compress(&combo).unwrap();
        let px = phi.compress(&x).unwrap();
        let py = phi.compress(&y).unwrap();
        for i in 0..lhs.len() {
            let rhs = a * px[i] + b * py[i];
            assert!((lhs[i] - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
        let zeros = phi.compress(&vec![0.0; 64]).unwrap();
        assert!(zeros.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compress_rejects_wrong_length() {
        let phi = SensingMatrix::generate(5, 64, 0.5).unwrap();
        assert!(matches!(
            phi.compress(&vec![0.0; 63]),
            Err(Error::Dimension { expected: 64, got: 63 })
        ));
    }

    #[test]
    fn rip_audit_k1_is_exact() {
        // Every column of a +-1/sqrt(d) matrix has norm exactly 1.
        let phi = SensingMatrix::generate(2, 256, 0.25).unwrap();
        let report = rip_audit(&phi, 1, 50, 0).unwrap();
        assert!(report.max_distortion <= 1e-12);
    }

    #[test]
    fn rip_audit_rejects_oversparse() {
        let phi = SensingMatrix::generate(2, 64, 0.25).unwrap();
        assert!(rip_audit(&phi, 17, 10, 0).is_err());
    }

    #[test]
    fn undersampling_degrades_isometry() {
        let well = SensingMatrix::generate(1, 784, 0.5).unwrap();
        let starved = SensingMatrix::generate(1, 784, 0.0205).unwrap(); // d = 16
        let d_well = rip_audit(&well, 10, 200, 42).unwrap().max_distortion;
        let d_starved = rip_audit(&starved, 10, 200, 42).unwrap().max_distortion;
        assert!(d_well <= 0.5);
        assert!(d_starved > 2.0 * d_well);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.cspm");
        let phi = SensingMatrix::generate(21, 64, 0.25).unwrap();
        phi.save(&path).unwrap();
        let loaded = SensingMatrix::load(&path).unwrap();
        assert_eq!(loaded.rows(), phi.rows());
        assert_eq!(loaded.cols(), phi.cols());
        assert_eq!(loaded.seed(), phi.seed());
        // d = 16 entries are +-0.25, exactly representable in f32.
        assert_eq!(loaded.entries(), phi.entries());
    }

    #[test]
    fn load_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cspm");
        std::fs::write(&path, b"NOPExxxxxxxxxxxxxxxxxxxxxxxx").unwrap();
        assert!(matches!(SensingMatrix::load(&path), Err(Error::Parse { .. })));
    }
}

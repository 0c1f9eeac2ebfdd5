//! Constructive verification of the two oracle-composition results: exact
//! separation in the compressed domain via reconstruct / separate /
//! recompress, and the sqrt(k)-scaled error bound under imperfect
//! reconstruction.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mixing::{mix_indices, MixedSample, SignalSet};
use crate::sensing::{random_sparse_unit, SensingMatrix};
use crate::sparse_recovery::{Reconstruction, SeparationOracle};

/// Quantization grid for mixture fingerprints.
const GRID: f64 = 1e-9;

fn fingerprint(v: &[f64]) -> Vec<i64> {
    v.iter().map(|&x| (x / GRID).round() as i64).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// A finite table realizing perfect separation: every stored mixture maps
/// to its ordered component list (ascending source index).
pub struct LookupOracle {
    table: HashMap<Vec<i64>, Vec<usize>>,
    keys: Vec<(Vec<f64>, Vec<usize>)>,
    signals: Vec<Vec<f64>>,
    match_tolerance: f64,
    k: usize,
}

impl LookupOracle {
    /// Build from explicit index tuples over `set`, mixing in the ambient
    /// domain. Fails if two distinct tuples collide under the fingerprint.
    pub fn build(set: &SignalSet, tuples: &[Vec<usize>]) -> Result<Self> {
        let k = tuples
            .first()
            .ok_or_else(|| Error::parameter("oracle needs at least one mixture"))?
            .len();
        let mut table = HashMap::with_capacity(tuples.len());
        let mut keys = Vec::with_capacity(tuples.len());
        for tuple in tuples {
            if tuple.len() != k {
                return Err(Error::parameter("inhomogeneous mixture arity"));
            }
            let mut ordered = tuple.clone();
            ordered.sort_unstable();
            let sample = mix_indices(set, &ordered, None)?;
            let fp = fingerprint(&sample.mixture);
            if let Some(prev) = table.insert(fp, ordered.clone()) {
                if prev != ordered {
                    return Err(Error::parameter(format!(
                        "fingerprint collision between {prev:?} and {ordered:?}"
                    )));
                }
            } else {
                keys.push((sample.mixture, ordered));
            }
        }
        Ok(LookupOracle {
            table,
            keys,
            signals: set.signals.clone(),
            match_tolerance: GRID,
            k,
        })
    }

    /// Exhaustive oracle over all k-subsets of the set.
    pub fn exhaustive(set: &SignalSet, k: usize) -> Result<Self> {
        let mut tuples = Vec::new();
        let mut current = Vec::with_capacity(k);
        subsets(set.len(), k, 0, &mut current, &mut tuples);
        Self::build(set, &tuples)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn match_tolerance(&self) -> f64 {
        self.match_tolerance
    }

    fn lookup(&self, mixture: &[f64]) -> Result<&[usize]> {
        if let Some(ix) = self.table.get(&fingerprint(mixture)) {
            return Ok(ix);
        }
        // Grid-boundary fallback: scan for a stored mixture within the
        // match tolerance.
        for (stored, ix) in &self.keys {
            if stored.len() == mixture.len() && max_abs_diff(stored, mixture) <= self.match_tolerance
            {
                return Ok(ix);
            }
        }
        Err(Error::OracleMiss {
            fingerprint: format!("{:?}", &fingerprint(mixture)[..mixture.len().min(4)]),
        })
    }
}

fn subsets(n: usize, k: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for i in start..n {
        current.push(i);
        subsets(n, k, i + 1, current, out);
        current.pop();
    }
}

impl SeparationOracle for LookupOracle {
    fn components(&self) -> usize {
        self.k
    }

    fn separate(&self, mixture: &[f64]) -> Result<Vec<Vec<f64>>> {
        let indices = self.lookup(mixture)?;
        Ok(indices.iter().map(|&i| self.signals[i].clone()).collect())
    }
}

/// Perfect reconstruction on a finite family: a table from measurement
/// fingerprints back to the exact ambient vectors.
pub struct PerfectReconstruction {
    table: HashMap<Vec<i64>, Vec<f64>>,
    keys: Vec<(Vec<f64>, Vec<f64>)>,
    match_tolerance: f64,
}

impl PerfectReconstruction {
    pub fn new() -> Self {
        PerfectReconstruction {
            table: HashMap::new(),
            keys: Vec::new(),
            match_tolerance: GRID,
        }
    }

    /// Register x so that reconstruct(Phi x) = x exactly.
    pub fn insert(&mut self, phi: &SensingMatrix, x: &[f64]) -> Result<()> {
        let y = phi.compress(x)?;
        let fp = fingerprint(&y);
        if self.table.insert(fp, x.to_vec()).is_none() {
            self.keys.push((y, x.to_vec()));
        }
        Ok(())
    }

    fn lookup(&self, y: &[f64]) -> Result<&Vec<f64>> {
        if let Some(x) = self.table.get(&fingerprint(y)) {
            return Ok(x);
        }
        for (stored, x) in &self.keys {
            if stored.len() == y.len() && max_abs_diff(stored, y) <= self.match_tolerance {
                return Ok(x);
            }
        }
        Err(Error::OracleMiss {
            fingerprint: format!("{:?}", &fingerprint(y)[..y.len().min(4)]),
        })
    }
}

impl Default for PerfectReconstruction {
    fn default() -> Self {
        Self::new()
    }
}

impl Reconstruction for PerfectReconstruction {
    fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.lookup(y).cloned()
    }
}

/// How the imperfect reconstruction distributes its per-signal error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationMode {
    /// Seeded random direction with norm uniform in (0, eps).
    Random,
    /// Every signal perturbed at magnitude eps (up to a hair below, so
    /// the strict bound is observable): the worst case of the stacked
    /// Euclidean norm.
    Aligned,
}

/// A reconstruction that is exact on registered mixtures but off by at
/// most `epsilon` on the base signals.
pub struct PerturbedReconstruction {
    perfect: PerfectReconstruction,
    perturbed: HashMap<Vec<i64>, Vec<f64>>,
    perturbed_keys: Vec<(Vec<f64>, Vec<f64>)>,
    epsilon: f64,
}

/// Margin keeping perturbation norms strictly under epsilon.
const EPS_MARGIN: f64 = 1.0 - 1e-9;

impl PerturbedReconstruction {
    /// Register the base signals with seeded perturbations and any number
    /// of mixtures exactly. Asserts ||x - R(Phi x)|| <= epsilon for every
    /// registered base signal.
    pub fn build(
        phi: &SensingMatrix,
        base: &SignalSet,
        epsilon: f64,
        seed: u64,
        mode: PerturbationMode,
    ) -> Result<Self> {
        if epsilon <= 0.0 {
            return Err(Error::parameter("epsilon must be > 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perturbed = HashMap::new();
        let mut perturbed_keys = Vec::new();
        for x in &base.signals {
            let dir = random_sparse_unit(&mut rng, x.len(), x.len());
            let magnitude = match mode {
                PerturbationMode::Random => rng.gen::<f64>() * epsilon * EPS_MARGIN,
                PerturbationMode::Aligned => epsilon * EPS_MARGIN,
            };
            let xhat: Vec<f64> = x.iter().zip(&dir).map(|(v, d)| v + magnitude * d).collect();
            let err = x
                .iter()
                .zip(&xhat)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(err <= epsilon, "perturbation exceeded epsilon");
            let y = phi.compress(x)?;
            let fp = fingerprint(&y);
            if perturbed.insert(fp, xhat.clone()).is_none() {
                perturbed_keys.push((y, xhat));
            }
        }
        Ok(PerturbedReconstruction {
            perfect: PerfectReconstruction::new(),
            perturbed,
            perturbed_keys,
            epsilon,
        })
    }

    /// Register a mixture on which reconstruction stays exact.
    pub fn insert_exact(&mut self, phi: &SensingMatrix, x: &[f64]) -> Result<()> {
        self.perfect.insert(phi, x)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Reconstruction for PerturbedReconstruction {
    fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>> {
        if let Some(x) = self.perturbed.get(&fingerprint(y)) {
            return Ok(x.clone());
        }
        for (stored, x) in &self.perturbed_keys {
            if stored.len() == y.len() && max_abs_diff(stored, y) <= GRID {
                return Ok(x.clone());
            }
        }
        self.perfect.reconstruct(y)
    }
}

/// The compressed-domain separation operator: reconstruct the mixture,
/// separate it in the ambient space, recompress each component.
pub struct CompressedOracle<'a, R: Reconstruction> {
    phi: &'a SensingMatrix,
    oracle: &'a LookupOracle,
    recon: &'a R,
}

/// Compose reconstruction, ambient separation, and per-block
/// recompression into a compressed-domain separator.
pub fn compose_compressed_oracle<'a, R: Reconstruction>(
    phi: &'a SensingMatrix,
    oracle: &'a LookupOracle,
    recon: &'a R,
) -> CompressedOracle<'a, R> {
    CompressedOracle { phi, oracle, recon }
}

impl<R: Reconstruction> CompressedOracle<'_, R> {
    /// Apply to a compressed mixture; returns k compressed component
    /// blocks.
    pub fn separate(&self, y_mixed: &[f64]) -> Result<Vec<Vec<f64>>> {
        let ambient = self.recon.reconstruct(y_mixed)?;
        let components = self.oracle.separate(&ambient)?;
        components.iter().map(|c| self.phi.compress(c)).collect()
    }
}

/// One row of an error-bound sweep.
#[derive(Debug, Clone)]
pub struct BoundRow {
    pub mixture_id: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Outcome of the imperfect-reconstruction error-bound check.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub max_ratio: f64,
    pub violations: Vec<usize>,
}

impl BoundReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check, for every mixture, that the stacked reconstruction error after
/// separate-in-compressed-domain-then-reconstruct stays under
/// sqrt(k) * epsilon.
pub fn verify_error_bound(
    phi: &SensingMatrix,
    oracle: &LookupOracle,
    recon: &PerturbedReconstruction,
    mixtures: &[MixedSample],
    truths: &SignalSet,
) -> Result<BoundReport> {
    let k = oracle.k();
    let rhs = (k as f64).sqrt() * recon.epsilon();
    let composed = compose_compressed_oracle(phi, oracle, recon);
    let mut rows = Vec::with_capacity(mixtures.len());
    let mut violations = Vec::new();
    let mut max_ratio: f64 = 0.0;
    for (id, m) in mixtures.iter().enumerate() {
        let blocks = composed.separate(&m.mixture)?;
        // Ground-truth component order matches the oracle convention:
        // ascending source index.
        let mut ordered = m.component_indices.clone();
        ordered.sort_unstable();
        let mut sq_sum = 0.0;
        for (block, &src) in blocks.iter().zip(&ordered) {
            let xhat = recon.reconstruct(block)?;
            let truth = &truths.signals[src];
            sq_sum += xhat
                .iter()
                .zip(truth)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        let lhs = sq_sum.sqrt();
        let ratio = lhs / rhs;
        if lhs > rhs {
            violations.push(id);
        }
        max_ratio = max_ratio.max(ratio);
        rows.push(BoundRow {
            mixture_id: id,
            lhs,
            rhs,
            ratio,
        });
    }
    Ok(BoundReport {
        rows,
        max_ratio,
        violations,
    })
}

/// A seeded family of unit-norm sparse signals for exhaustive harness
/// sweeps.
pub fn synthetic_sparse_set(seed: u64, count: usize, dim: usize, sparsity: usize) -> SignalSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signals: Vec<Vec<f64>> = (0..count)
        .map(|_| random_sparse_unit(&mut rng, dim, sparsity))
        .collect();
    let labels = (0..count as u32).collect();
    SignalSet::new(signals, labels).expect("nonempty by construction")
}

//! The mixing operator and mixture-family construction, in both the
//! ambient and compressed domains.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dims, Error, Result};
use crate::sensing::SensingMatrix;

const MAGIC: &[u8; 4] = b"CSMX";
const VERSION: u16 = 1;

/// A labeled collection of same-length signals to draw mixtures from.
#[derive(Debug, Clone)]
pub struct SignalSet {
    pub signals: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
    pub domain_dim: usize,
}

impl SignalSet {
    pub fn new(signals: Vec<Vec<f64>>, labels: Vec<u32>) -> Result<Self> {
        if signals.is_empty() {
            return Err(Error::parameter("signal set must be nonempty"));
        }
        check_dims(signals.len(), labels.len())?;
        let domain_dim = signals[0].len();
        for s in &signals {
            check_dims(domain_dim, s.len())?;
        }
        Ok(SignalSet {
            signals,
            labels,
            domain_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }
}

/// A mixture paired with its ground-truth components. Component order is
/// draw order; consumers must treat it as unordered.
#[derive(Debug, Clone)]
pub struct MixedSample {
    pub mixture: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub component_labels: Vec<u32>,
    pub component_indices: Vec<usize>,
}

/// The mixing operator: element-wise addition. Chosen because it commutes
/// exactly with any linear measurement map.
pub fn mix(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_dims(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
}

/// Fold a list of equal-length vectors under the mixing operator.
pub fn mix_all(parts: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::parameter("cannot mix zero components"))?;
    let mut acc = first.clone();
    for p in &parts[1..] {
        acc = mix(&acc, p)?;
    }
    Ok(acc)
}

/// Draw `count` k-fold mixtures of distinct signals. With `phi` given,
/// components are compressed first and mixed in the measurement domain;
/// the result is checked against compressing the ambient mixture.
pub fn build_mixture_family(
    set: &SignalSet,
    k: usize,
    count: usize,
    rng_seed: u64,
    phi: Option<&SensingMatrix>,
) -> Result<Vec<MixedSample>> {
    if k == 0 {
        return Err(Error::parameter("k must be >= 1"));
    }
    if k > set.len() {
        return Err(Error::parameter(format!(
            "cannot draw {k} distinct signals from a set of {}",
            set.len()
        )));
    }
    if count == 0 {
        return Err(Error::parameter("count must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let indices = rand::seq::index::sample(&mut rng, set.len(), k).into_vec();
        let sample = mix_indices(set, &indices, phi)?;
        out.push(sample);
    }
    Ok(out)
}

/// Mix an explicit index tuple from the set.
pub fn mix_indices(
    set: &SignalSet,
    indices: &[usize],
    phi: Option<&SensingMatrix>,
) -> Result<MixedSample> {
    let ambient: Vec<Vec<f64>> = indices.iter().map(|&i| set.signals[i].clone()).collect();
    let labels: Vec<u32> = indices.iter().map(|&i| set.labels[i]).collect();
    let (components, mixture) = match phi {
        None => {
            let m = mix_all(&ambient)?;
            (ambient, m)
        }
        Some(phi) => {
            let compressed: Vec<Vec<f64>> = ambient
                .iter()
                .map(|x| phi.compress(x))
                .collect::<Result<_>>()?;
            let mixed = mix_all(&compressed)?;
            // Measurement linearity: compress-then-mix must equal
            // mix-then-compress.
            let via_ambient = phi.compress(&mix_all(&ambient)?)?;
            for (a, b) in mixed.iter().zip(&via_ambient) {
                let scale = a.abs().max(b.abs()).max(1.0);
                debug_assert!((a - b).abs() <= 1e-12 * scale);
            }
            (compressed, mixed)
        }
    };
    Ok(MixedSample {
        mixture,
        components,
        component_labels: labels,
        component_indices: indices.to_vec(),
    })
}

/// Persist a mixture family as a CSMX record stream (f32 payload).
pub fn save_mixtures(samples: &[MixedSample], path: &Path) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::parameter("no samples to save"))?;
    let k = first.components.len();
    let dim = first.mixture.len();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(k as u32)?;
    w.write_u32::<LittleEndian>(dim as u32)?;
    w.write_u64::<LittleEndian>(samples.len() as u64)?;
    for s in samples {
        if s.components.len() != k || s.mixture.len() != dim {
            return Err(Error::parameter("inhomogeneous sample stream"));
        }
        for &i in &s.component_indices {
            w.write_u64::<LittleEndian>(i as u64)?;
        }
        for &l in &s.component_labels {
            w.write_u32::<LittleEndian>(l)?;
        }
        for &v in &s.mixture {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        for c in &s.components {
            for &v in c {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
        }
    }
    Ok(())
}

pub fn load_mixtures(path: &Path) -> Result<Vec<MixedSample>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: format!("bad magic {magic:?}, expected CSMX"),
        });
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let k = r.read_u32::<LittleEndian>()? as usize;
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let count = r.read_u64::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut component_indices = Vec::with_capacity(k);
        for _ in 0..k {
            component_indices.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let mut component_labels = Vec::with_capacity(k);
        for _ in 0..k {
            component_labels.push(r.read_u32::<LittleEndian>()?);
        }
        let mut mixture = Vec::with_capacity(dim);
        for _ in 0..dim {
            mixture.push(r.read_f32::<LittleEndian>()? as f64);
        }
        let mut components = Vec::with_capacity(k);
        for _ in 0..k {
            let mut c = Vec::with_capacity(dim);
            for _ in 0..dim {
                c.push(r.read_f32::<LittleEndian>()? as f64);
            }
            components.push(c);
        }
        out.push(MixedSample {
            mixture,
            components,
            component_labels,
            component_indices,
        });
    }
    Ok(out)
}

//! CSNN checkpoint files: architecture descriptor, standardization
//! statistics, and an f32 parameter payload, little-endian throughout.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

use super::network::{Activation, DenseNetwork};
use super::separator::{SeparatorModel, Standardization};

const MAGIC: &[u8; 4] = b"CSNN";
const VERSION: u16 = 1;
const KIND_SEPARATOR: u8 = 0;
const KIND_CLASSIFIER: u8 = 1;

fn write_network(w: &mut impl Write, net: &DenseNetwork) -> Result<()> {
    w.write_u32::<LittleEndian>(net.shapes().len() as u32)?;
    for (&(i, o), &act) in net.shapes().iter().zip(net.activations()) {
        w.write_u32::<LittleEndian>(i as u32)?;
        w.write_u32::<LittleEndian>(o as u32)?;
        w.write_u8(act.code())?;
    }
    for &p in net.params() {
        w.write_f32::<LittleEndian>(p as f32)?;
    }
    Ok(())
}

fn read_network(r: &mut impl Read) -> Result<DenseNetwork> {
    let layers = r.read_u32::<LittleEndian>()? as usize;
    if layers == 0 || layers > 1024 {
        return Err(Error::Parse {
            offset: 0,
            reason: format!("implausible layer count {layers}"),
        });
    }
    let mut shapes = Vec::with_capacity(layers);
    let mut acts = Vec::with_capacity(layers);
    for _ in 0..layers {
        let i = r.read_u32::<LittleEndian>()? as usize;
        let o = r.read_u32::<LittleEndian>()? as usize;
        let code = r.read_u8()?;
        let act = Activation::from_code(code).ok_or_else(|| Error::Parse {
            offset: 0,
            reason: format!("unknown activation code {code}"),
        })?;
        shapes.push((i, o));
        acts.push(act);
    }
    let mut net = DenseNetwork::zeroed(shapes, acts);
    let count = net.parameter_count();
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        params.push(r.read_f32::<LittleEndian>()? as f64);
    }
    net.set_params(params);
    Ok(net)
}

fn write_header(w: &mut impl Write, kind: u8) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u8(kind)?;
    Ok(())
}

fn read_header(r: &mut impl Read, want_kind: u8) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: format!("bad magic {magic:?}, expected CSNN"),
        });
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let kind = r.read_u8()?;
    if kind != want_kind {
        return Err(Error::Parse {
            offset: 6,
            reason: format!("checkpoint kind {kind}, expected {want_kind}"),
        });
    }
    Ok(())
}

pub fn save_separator(model: &SeparatorModel, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, KIND_SEPARATOR)?;
    w.write_u32::<LittleEndian>(model.input_dim as u32)?;
    w.write_u32::<LittleEndian>(model.latent_dim as u32)?;
    match &model.standardization {
        Some(stats) => {
            w.write_u8(1)?;
            w.write_u32::<LittleEndian>(stats.mean.len() as u32)?;
            for &m in &stats.mean {
                w.write_f64::<LittleEndian>(m)?;
            }
            for &s in &stats.std {
                w.write_f64::<LittleEndian>(s)?;
            }
        }
        None => w.write_u8(0)?,
    }
    for net in [&model.encoder, &model.decoder_1, &model.decoder_2] {
        write_network(&mut w, net)?;
    }
    Ok(())
}

pub fn load_separator(path: &Path) -> Result<SeparatorModel> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_header(&mut r, KIND_SEPARATOR)?;
    let input_dim = r.read_u32::<LittleEndian>()? as usize;
    let latent_dim = r.read_u32::<LittleEndian>()? as usize;
    let standardization = match r.read_u8()? {
        0 => None,
        1 => {
            let dim = r.read_u32::<LittleEndian>()? as usize;
            let mut mean = Vec::with_capacity(dim);
            for _ in 0..dim {
                mean.push(r.read_f64::<LittleEndian>()?);
            }
            let mut std = Vec::with_capacity(dim);
            for _ in 0..dim {
                std.push(r.read_f64::<LittleEndian>()?);
            }
            Some(Standardization { mean, std })
        }
        other => {
            return Err(Error::Parse {
                offset: 15,
                reason: format!("bad standardization flag {other}"),
            })
        }
    };
    let encoder = read_network(&mut r)?;
    let decoder_1 = read_network(&mut r)?;
    let decoder_2 = read_network(&mut r)?;
    if encoder.output_dim() != 2 * latent_dim {
        return Err(Error::Parse {
            offset: 0,
            reason: "encoder output does not match twice the latent width".into(),
        });
    }
    Ok(SeparatorModel {
        encoder,
        decoder_1,
        decoder_2,
        latent_dim,
        input_dim,
        standardization,
    })
}

pub fn save_classifier(net: &DenseNetwork, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, KIND_CLASSIFIER)?;
    write_network(&mut w, net)
}

pub fn load_classifier(path: &Path) -> Result<DenseNetwork> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_header(&mut r, KIND_CLASSIFIER)?;
    read_network(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::separator::{build_separator, build_to_budget};

    #[test]
    fn separator_roundtrip_preserves_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.csnn");
        let plan = build_to_budget(16, 8, 6000).unwrap();
        let mut model = build_separator(&plan, 16, 8, 4);
        model.standardization = Some(Standardization {
            mean: vec![0.25; 16],
            std: vec![1.5; 16],
        });
        save_separator(&model, &path).unwrap();
        let loaded = load_separator(&path).unwrap();
        assert_eq!(loaded.parameter_digest(), model.parameter_digest());
        assert_eq!(loaded.standardization, model.standardization);
        // Saving the reloaded model again is byte-stable (f32 payload is
        // a fixed point).
        let path2 = dir.path().join("model2.csnn");
        save_separator(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn classifier_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.csnn");
        let net = crate::neural::train::classifier_network(16, 10, 5);
        save_classifier(&net, &path).unwrap();
        let loaded = load_classifier(&path).unwrap();
        assert_eq!(loaded.shapes(), net.shapes());
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.csnn");
        let net = crate::neural::train::classifier_network(8, 4, 5);
        save_classifier(&net, &path).unwrap();
        assert!(load_separator(&path).is_err());
    }
}

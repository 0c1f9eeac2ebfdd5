//! IDX ingestion for the MNIST family, split handling, and a synthetic
//! stand-in generator for data-free smoke runs.

use std::io::Read;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mixing::SignalSet;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
    Validation,
}

/// How raw pixels are laid out in the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Row-major as published for MNIST.
    Standard,
    /// The E-MNIST convention: stored transposed, corrected on load by a
    /// transpose plus horizontal flip.
    Transposed,
}

#[derive(Debug, Clone)]
pub struct ImageDataset {
    pub images: Vec<Vec<f32>>,
    pub labels: Vec<u32>,
    pub class_count: usize,
    pub split: SplitTag,
    pub rows: usize,
    pub cols: usize,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.class_count];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    /// Signals as f64 vectors for the mixing stage.
    pub fn to_signal_set(&self) -> Result<SignalSet> {
        let signals = self
            .images
            .iter()
            .map(|img| img.iter().map(|&p| p as f64).collect())
            .collect();
        SignalSet::new(signals, self.labels.clone())
    }
}

fn maybe_gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

/// Parse an IDX image/label file pair into a dataset. Pixels are scaled
/// to [0, 1]; gzip inputs are decompressed transparently.
pub fn parse_idx(
    image_bytes: &[u8],
    label_bytes: &[u8],
    split: SplitTag,
    orientation: Orientation,
) -> Result<ImageDataset> {
    let image_bytes = maybe_gunzip(image_bytes)?;
    let label_bytes = maybe_gunzip(label_bytes)?;

    let mut ir = std::io::Cursor::new(&image_bytes);
    let magic = ir.read_u32::<BigEndian>()?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let count = ir.read_u32::<BigEndian>()? as usize;
    let rows = ir.read_u32::<BigEndian>()? as usize;
    let cols = ir.read_u32::<BigEndian>()? as usize;
    let pixels = rows * cols;
    let expected = 16 + count * pixels;
    if image_bytes.len() < expected {
        return Err(Error::Parse {
            offset: image_bytes.len() as u64,
            reason: format!("image payload truncated: need {expected} bytes"),
        });
    }

    let mut lr = std::io::Cursor::new(&label_bytes);
    let lmagic = lr.read_u32::<BigEndian>()?;
    if lmagic != LABEL_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: format!("label magic {lmagic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let lcount = lr.read_u32::<BigEndian>()? as usize;
    if lcount != count {
        return Err(Error::Parse {
            offset: 4,
            reason: format!("{count} images but {lcount} labels"),
        });
    }
    if label_bytes.len() < 8 + count {
        return Err(Error::Parse {
            offset: label_bytes.len() as u64,
            reason: "label payload truncated".into(),
        });
    }

    let mut images = Vec::with_capacity(count);
    for n in 0..count {
        let raw = &image_bytes[16 + n * pixels..16 + (n + 1) * pixels];
        let img: Vec<f32> = match orientation {
            Orientation::Standard => raw.iter().map(|&b| b as f32 / 255.0).collect(),
            Orientation::Transposed => {
                let mut out = vec![0.0f32; pixels];
                for r in 0..rows {
                    for c in 0..cols {
                        // transpose, then flip horizontally
                        let src = raw[c * rows + r];
                        out[r * cols + c] = src as f32 / 255.0;
                    }
                }
                out
            }
        };
        images.push(img);
    }
    let labels: Vec<u32> = label_bytes[8..8 + count].iter().map(|&b| b as u32).collect();
    let class_count = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    Ok(ImageDataset {
        images,
        labels,
        class_count,
        split,
        rows,
        cols,
    })
}

/// Serialize back to raw IDX bytes (u8 pixels, standard orientation).
pub fn to_idx_bytes(dataset: &ImageDataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut images = Vec::with_capacity(16 + dataset.len() * dataset.feature_dim());
    images.write_u32::<BigEndian>(IMAGE_MAGIC)?;
    images.write_u32::<BigEndian>(dataset.len() as u32)?;
    images.write_u32::<BigEndian>(dataset.rows as u32)?;
    images.write_u32::<BigEndian>(dataset.cols as u32)?;
    for img in &dataset.images {
        for &p in img {
            images.push((p * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.write_u32::<BigEndian>(LABEL_MAGIC)?;
    labels.write_u32::<BigEndian>(dataset.len() as u32)?;
    for &l in &dataset.labels {
        labels.push(l as u8);
    }
    Ok((images, labels))
}

/// Seeded shuffle-then-split into disjoint, exhaustive train/validation
/// subsets.
pub fn make_splits(
    dataset: &ImageDataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(ImageDataset, ImageDataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::parameter(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let val_count = (val_fraction * dataset.len() as f64).round() as usize;
    if val_count == 0 || val_count == dataset.len() {
        return Err(Error::parameter(
            "val_fraction leaves an empty split side",
        ));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let take = |ix: &[usize], split: SplitTag| ImageDataset {
        images: ix.iter().map(|&i| dataset.images[i].clone()).collect(),
        labels: ix.iter().map(|&i| dataset.labels[i]).collect(),
        class_count: dataset.class_count,
        split,
        rows: dataset.rows,
        cols: dataset.cols,
    };
    let (val_ix, train_ix) = order.split_at(val_count);
    Ok((take(train_ix, SplitTag::Train), take(val_ix, SplitTag::Validation)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    /// The 47-class balanced variant.
    Emnist,
}

impl DatasetKind {
    pub fn class_count(self) -> usize {
        match self {
            DatasetKind::Mnist => 10,
            DatasetKind::Emnist => 47,
        }
    }

    fn file_stem(self, split: SplitTag) -> (String, String) {
        let (prefix, split_name) = match (self, split) {
            (DatasetKind::Mnist, SplitTag::Test) => ("", "t10k"),
            (DatasetKind::Mnist, _) => ("", "train"),
            (DatasetKind::Emnist, SplitTag::Test) => ("emnist-balanced-", "test"),
            (DatasetKind::Emnist, _) => ("emnist-balanced-", "train"),
        };
        (
            format!("{prefix}{split_name}-images-idx3-ubyte"),
            format!("{prefix}{split_name}-labels-idx1-ubyte"),
        )
    }

    fn orientation(self) -> Orientation {
        match self {
            DatasetKind::Mnist => Orientation::Standard,
            DatasetKind::Emnist => Orientation::Transposed,
        }
    }
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for candidate in [dir.join(stem), dir.join(format!("{stem}.gz"))] {
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    Err(Error::parameter(format!(
        "dataset file {stem}[.gz] not found under {}",
        dir.display()
    )))
}

/// Load a split from a data directory holding the published IDX files,
/// gzipped or raw.
pub fn load_dataset(dir: &Path, kind: DatasetKind, split: SplitTag) -> Result<ImageDataset> {
    let (image_stem, label_stem) = kind.file_stem(split);
    let image_bytes = std::fs::read(find_file(dir, &image_stem)?)?;
    let label_bytes = std::fs::read(find_file(dir, &label_stem)?)?;
    let mut ds = parse_idx(&image_bytes, &label_bytes, split, kind.orientation())?;
    // Class count is fixed by the dataset, even if a subset lacks some
    // classes.
    ds.class_count = ds.class_count.max(kind.class_count());
    Ok(ds)
}

/// A synthetic labeled image set: per-class smooth prototypes plus seeded
/// pixel noise, clamped to [0, 1]. Used for data-free smoke runs and
/// pipeline tests; not a substitute for the published datasets.
pub fn synthetic_dataset(
    seed: u64,
    count: usize,
    side: usize,
    class_count: usize,
    split: SplitTag,
) -> ImageDataset {
    let dim = side * side;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f32>> = (0..class_count)
        .map(|c| {
            (0..dim)
                .map(|j| {
                    let x = (j % side) as f32 / side as f32;
                    let y = (j / side) as f32 / side as f32;
                    let phase = c as f32 * 1.7;
                    (0.5 + 0.5 * ((6.0 * x + phase).sin() * (5.0 * y + 0.6 * phase).cos())).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % class_count;
        let img = prototypes[class]
            .iter()
            .map(|&p| (p + 0.15 * (rng.gen::<f32>() - 0.5)).clamp(0.0, 1.0))
            .collect();
        images.push(img);
        labels.push(class as u32);
    }
    ImageDataset {
        images,
        labels,
        class_count,
        split,
        rows: side,
        cols: side,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_idx(pixel: u8, label: u8) -> (Vec<u8>, Vec<u8>) {
        let mut images = Vec::new();
        images.write_u32::<BigEndian>(IMAGE_MAGIC).unwrap();
        images.write_u32::<BigEndian>(1).unwrap();
        images.write_u32::<BigEndian>(2).unwrap();
        images.write_u32::<BigEndian>(2).unwrap();
        images.extend_from_slice(&[pixel; 4]);
        let mut labels = Vec::new();
        labels.write_u32::<BigEndian>(LABEL_MAGIC).unwrap();
        labels.write_u32::<BigEndian>(1).unwrap();
        labels.push(label);
        (images, labels)
    }

    #[test]
    fn saturated_pixel_scales_to_one() {
        let (images, labels) = tiny_idx(255, 7);
        let ds = parse_idx(&images, &labels, SplitTag::Test, Orientation::Standard).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels, vec![7]);
        assert!(ds.images[0].iter().all(|&p| p == 1.0));
    }

    #[test]
    fn bad_magic_and_truncation_are_reported() {
        let (mut images, labels) = tiny_idx(0, 0);
        images[0] = 0xFF;
        assert!(matches!(
            parse_idx(&images, &labels, SplitTag::Test, Orientation::Standard),
            Err(Error::Parse { .. })
        ));
        let (images, labels) = tiny_idx(0, 0);
        assert!(matches!(
            parse_idx(&images[..17], &labels, SplitTag::Test, Orientation::Standard),
            Err(Error::Parse { .. })
        ));
        let (images, mut labels) = tiny_idx(0, 0);
        labels[7] = 2; // count mismatch
        assert!(matches!(
            parse_idx(&images, &labels, SplitTag::Test, Orientation::Standard),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn idx_roundtrip_is_lossless_at_u8() {
        let ds = synthetic_dataset(3, 12, 6, 4, SplitTag::Train);
        let (images, labels) = to_idx_bytes(&ds).unwrap();
        let back = parse_idx(&images, &labels, SplitTag::Train, Orientation::Standard).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.images.iter().zip(&back.images) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
        // u8-exact round trip when re-serialized.
        let (images2, labels2) = to_idx_bytes(&back).unwrap();
        assert_eq!(images, images2);
        assert_eq!(labels, labels2);
    }

    #[test]
    fn transposed_orientation_flips_axes() {
        let mut images = Vec::new();
        images.write_u32::<BigEndian>(IMAGE_MAGIC).unwrap();
        images.write_u32::<BigEndian>(1).unwrap();
        images.write_u32::<BigEndian>(2).unwrap();
        images.write_u32::<BigEndian>(2).unwrap();
        images.extend_from_slice(&[255, 0, 0, 0]); // one hot corner
        let mut labels = Vec::new();
        labels.write_u32::<BigEndian>(LABEL_MAGIC).unwrap();
        labels.write_u32::<BigEndian>(1).unwrap();
        labels.push(0);
        let std = parse_idx(&images, &labels, SplitTag::Test, Orientation::Standard).unwrap();
        let t = parse_idx(&images, &labels, SplitTag::Test, Orientation::Transposed).unwrap();
        assert_eq!(std.images[0][0], 1.0);
        assert_eq!(t.images[0][0], 1.0); // corner stays under transpose
        // An off-diagonal pixel moves.
        let mut images2 = images.clone();
        images2[16] = 0;
        images2[17] = 255; // (row 0, col 1)
        let t2 = parse_idx(&images2, &labels, SplitTag::Test, Orientation::Transposed).unwrap();
        assert_eq!(t2.images[0][2], 1.0); // lands at (row 1, col 0)
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let ds = synthetic_dataset(1, 100, 4, 5, SplitTag::Train);
        let (train, val) = make_splits(&ds, 0.1, 42).unwrap();
        assert_eq!(train.len(), 90);
        assert_eq!(val.len(), 10);
        let (train2, val2) = make_splits(&ds, 0.1, 42).unwrap();
        assert_eq!(train.labels, train2.labels);
        assert_eq!(val.labels, val2.labels);
        // exhaustive partition by pixel identity
        let mut all: Vec<&Vec<f32>> = train.images.iter().chain(val.images.iter()).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut orig: Vec<&Vec<f32>> = ds.images.iter().collect();
        orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all, orig);
    }

    #[test]
    fn degenerate_fraction_rejected() {
        let ds = synthetic_dataset(1, 10, 4, 2, SplitTag::Train);
        assert!(make_splits(&ds, 0.0, 1).is_err());
        assert!(make_splits(&ds, 1.0, 1).is_err());
        assert!(make_splits(&ds, 0.01, 1).is_err());
    }

    #[test]
    fn gzip_inputs_are_transparent() {
        use flate2::write::GzEncoder;
        use flate2::Compression;
        use std::io::Write;
        let (images, labels) = tiny_idx(128, 3);
        let gz = |b: &[u8]| {
            let mut enc = GzEncoder::new(Vec::new(), Compression::default());
            enc.write_all(b).unwrap();
            enc.finish().unwrap()
        };
        let ds = parse_idx(&gz(&images), &gz(&labels), SplitTag::Test, Orientation::Standard)
            .unwrap();
        assert_eq!(ds.labels, vec![3]);
    }
}

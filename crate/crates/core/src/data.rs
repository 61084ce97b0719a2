//! MNIST ingestion and patch featurization.
//!
//! Raw IDX images are 2x2 average pooled, scaled from `[0, 255]` into
//! `[0, pi/4]`, and then cut into overlapping `P x P` patches. Patch
//! `p = k L + j` starts at row `D k`, column `D j`, and its pixels (plus the
//! positional bias) are flattened row-major.

use std::f64::consts::FRAC_PI_4;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const N_DIGITS: usize = 10;

/// Decoded IDX image/label pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub rows: usize,
    pub cols: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl RawDataset {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        let per = rows * cols;
        if per == 0 || pixels.len() % per != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} pixel bytes do not form {rows}x{cols} images",
                pixels.len()
            )));
        }
        if pixels.len() / per != labels.len() {
            return Err(Error::CountMismatch {
                images: pixels.len() / per,
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= N_DIGITS) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range")));
        }
        Ok(RawDataset {
            rows,
            cols,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let per = self.rows * self.cols;
        &self.pixels[i * per..(i + 1) * per]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Reads a file, transparently inflating gzip (the form MNIST ships in).
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!("gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            needed: offset + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Parses an IDX3 unsigned-byte image file. Returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IMAGE_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            needed,
            actual: bytes.len(),
        });
    }
    Ok((count, rows, cols, bytes[16..needed].to_vec()))
}

/// Parses an IDX1 unsigned-byte label file.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            needed,
            actual: bytes.len(),
        });
    }
    let labels = bytes[8..needed].to_vec();
    if let Some(i) = labels.iter().position(|&l| l as usize >= N_DIGITS) {
        return Err(Error::LabelOutOfRange {
            path: path.to_path_buf(),
            offset: 8 + i,
            value: labels[i],
        });
    }
    Ok(labels)
}

pub fn load_idx(image_path: &Path, label_path: &Path) -> Result<RawDataset> {
    let (count, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(image_path)?, image_path)?;
    let labels = parse_idx_labels(&read_maybe_gz(label_path)?, label_path)?;
    if count != labels.len() {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    RawDataset::new(rows, cols, pixels, labels)
}

/// Mean over non-overlapping 2x2 blocks of a row-major `rows x cols` image.
pub fn avg_pool_2x2(image: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "2x2 pooling needs even dimensions, got {rows}x{cols}"
        )));
    }
    if image.len() != rows * cols {
        return Err(Error::LengthMismatch {
            what: "image",
            expected: rows * cols,
            actual: image.len(),
        });
    }
    let (out_rows, out_cols) = (rows / 2, cols / 2);
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for h in 0..out_rows {
        let top = &image[2 * h * cols..(2 * h + 1) * cols];
        let bottom = &image[(2 * h + 1) * cols..(2 * h + 2) * cols];
        for w in 0..out_cols {
            let sum = top[2 * w] + top[2 * w + 1] + bottom[2 * w] + bottom[2 * w + 1];
            out.push(sum / 4.0);
        }
    }
    Ok(out)
}

/// Maps a grey level in `[0, 255]` to an angle in `[0, pi/4]`.
pub fn normalize_pixel(value: f64) -> Result<f64> {
    if !(0.0..=255.0).contains(&value) {
        return Err(Error::InvalidArgument(format!(
            "pixel value {value} outside [0, 255]"
        )));
    }
    Ok(value / 255.0 * FRAC_PI_4)
}

pub fn normalize(pooled: &[f64]) -> Result<Vec<f64>> {
    pooled.iter().map(|&v| normalize_pixel(v)).collect()
}

/// Pool then normalize one raw image.
pub fn preprocess_image(raw: &[u8], rows: usize, cols: usize) -> Result<Vec<f64>> {
    let as_f64: Vec<f64> = raw.iter().map(|&p| f64::from(p)).collect();
    normalize(&avg_pool_2x2(&as_f64, rows, cols)?)
}

/// A preprocessed image: `side * side` angles (row-major) and its class.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pixels: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub side: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The first `n` samples (all of them if `n` exceeds the length).
    pub fn truncated(&self, n: usize) -> Dataset {
        Dataset {
            side: self.side,
            samples: self.samples.iter().take(n).cloned().collect(),
        }
    }
}

/// Pools and normalizes every image. Order is preserved.
pub fn prepare(raw: &RawDataset) -> Result<Dataset> {
    if raw.rows != raw.cols {
        return Err(Error::InvalidArgument(format!(
            "non-square images ({}x{}) are not supported",
            raw.rows, raw.cols
        )));
    }
    let samples = (0..raw.len())
        .into_par_iter()
        .map(|i| {
            Ok(Sample {
                pixels: preprocess_image(raw.image(i), raw.rows, raw.cols)?,
                label: raw.label(i) as usize,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        side: raw.rows / 2,
        samples,
    })
}

const PREPARED_MAGIC: &[u8; 8] = b"PQNNDS\0\x01";

/// Binary form of a [`Dataset`]:
///
/// ```text
/// magic  "PQNNDS\0\x01"               8 bytes
/// count  u32 LE, side u32 LE
/// count records: label u8, side*side f64 LE
/// sha256 of everything above          32 bytes
/// ```
pub fn encode_prepared(dataset: &Dataset) -> Vec<u8> {
    let per = dataset.side * dataset.side;
    let mut out = Vec::with_capacity(16 + dataset.len() * (1 + 8 * per) + 32);
    out.extend_from_slice(PREPARED_MAGIC);
    out.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.side as u32).to_le_bytes());
    for s in &dataset.samples {
        out.push(s.label as u8);
        for v in &s.pixels {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode_prepared(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 + 32 || &bytes[..8] != PREPARED_MAGIC {
        return Err(corrupt("not a prepared dataset file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch".into()));
    }
    let count = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    let side = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
    let per = side * side;
    let record = 1 + 8 * per;
    if body.len() != 16 + count * record {
        return Err(corrupt(format!(
            "expected {} payload bytes for {count} records, found {}",
            count * record,
            body.len() - 16
        )));
    }
    let samples = body[16..]
        .chunks_exact(record)
        .map(|r| Sample {
            label: r[0] as usize,
            pixels: r[1..]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        })
        .collect();
    Ok(Dataset { side, samples })
}

pub fn read_prepared(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_prepared(&bytes, path)
}

/// Hex sha256 trailer of an encoded prepared dataset.
pub fn prepared_checksum(encoded: &[u8]) -> String {
    hex::encode(&encoded[encoded.len().saturating_sub(32)..])
}

/// Side length `M`, patch side `P` and stride `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchConfig {
    pub side: usize,
    pub patch: usize,
    pub stride: usize,
}

impl PatchConfig {
    pub fn new(side: usize, patch: usize, stride: usize) -> Result<Self> {
        if patch == 0 || stride == 0 || patch > side {
            return Err(Error::InvalidArgument(format!(
                "patch {patch} with stride {stride} does not fit a {side}x{side} image"
            )));
        }
        if (side - patch) % stride != 0 {
            return Err(Error::InvalidArgument(format!(
                "stride {stride} does not divide M - P = {}",
                side - patch
            )));
        }
        Ok(PatchConfig {
            side,
            patch,
            stride,
        })
    }

    /// `L = (M - P) / D + 1`.
    pub fn per_side(&self) -> usize {
        (self.side - self.patch) / self.stride + 1
    }

    pub fn n_patches(&self) -> usize {
        self.per_side() * self.per_side()
    }

    pub fn features_per_patch(&self) -> usize {
        self.patch * self.patch
    }

    /// Top-left `(row, col)` of patch `p`.
    pub fn corner(&self, p: usize) -> (usize, usize) {
        let l = self.per_side();
        (self.stride * (p / l), self.stride * (p % l))
    }

    /// Row-major pixel index feeding feature `f` of patch `p`.
    pub fn pixel_index(&self, p: usize, f: usize) -> usize {
        let (r0, c0) = self.corner(p);
        (r0 + f / self.patch) * self.side + c0 + f % self.patch
    }

    /// Number of patches that contain pixel `(h, w)`.
    pub fn multiplicity(&self, h: usize, w: usize) -> usize {
        let covering = |x: usize| {
            (0..self.per_side())
                .filter(|&k| self.stride * k <= x && x < self.stride * k + self.patch)
                .count()
        };
        covering(h) * covering(w)
    }
}

/// Per-image patch feature vectors, `n_patches` rows of `P^2` angles.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatures {
    features_per_patch: usize,
    values: Vec<f64>,
}

impl PatchFeatures {
    pub fn n_patches(&self) -> usize {
        self.values.len() / self.features_per_patch
    }

    pub fn patch(&self, p: usize) -> &[f64] {
        &self.values[p * self.features_per_patch..(p + 1) * self.features_per_patch]
    }
}

/// Cuts `image + bias` into flattened patches.
pub fn extract_patches(image: &[f64], bias: &[f64], cfg: &PatchConfig) -> Result<PatchFeatures> {
    let area = cfg.side * cfg.side;
    if image.len() != area {
        return Err(Error::LengthMismatch {
            what: "image",
            expected: area,
            actual: image.len(),
        });
    }
    if bias.len() != area {
        return Err(Error::LengthMismatch {
            what: "bias grid",
            expected: area,
            actual: bias.len(),
        });
    }
    let fpp = cfg.features_per_patch();
    let mut values = Vec::with_capacity(cfg.n_patches() * fpp);
    for p in 0..cfg.n_patches() {
        let (r0, c0) = cfg.corner(p);
        for r in r0..r0 + cfg.patch {
            let row = r * cfg.side;
            for c in c0..c0 + cfg.patch {
                values.push(image[row + c] + bias[row + c]);
            }
        }
    }
    Ok(PatchFeatures {
        features_per_patch: fpp,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn idx_images(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IMAGE_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn loads_two_images() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..2 * 784).map(|i| (i % 251) as u8).collect();
        let im = write(dir.path(), "im", &idx_images(2, 28, 28, &pixels));
        let lb = write(dir.path(), "lb", &idx_labels(&[7, 1]));
        let ds = load_idx(&im, &lb).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.label(0), 7);
        assert_eq!(ds.image(1), &pixels[784..]);
    }

    #[test]
    fn gzip_input_is_accepted() {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&idx_labels(&[3, 4, 5])).unwrap();
        let p = write(dir.path(), "lb.gz", &enc.finish().unwrap());
        assert_eq!(parse_idx_labels(&read_maybe_gz(&p).unwrap(), &p).unwrap(), vec![3, 4, 5]);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let im = write(dir.path(), "im", &idx_images(3, 2, 2, &[0; 12]));
        let lb = write(dir.path(), "lb", &idx_labels(&[1, 2]));
        assert!(matches!(
            load_idx(&im, &lb),
            Err(Error::CountMismatch { images: 3, labels: 2 })
        ));

        let swapped = load_idx(&lb, &im);
        assert!(matches!(swapped, Err(Error::BadMagic { found: LABEL_MAGIC, .. })));

        let short = write(dir.path(), "short", &idx_images(3, 2, 2, &[0; 5]));
        assert!(matches!(
            load_idx(&short, &lb),
            Err(Error::Truncated { offset: 21, needed: 28, .. })
        ));

        let bad_label = write(dir.path(), "bad", &idx_labels(&[1, 12]));
        assert!(matches!(
            parse_idx_labels(&std::fs::read(&bad_label).unwrap(), &bad_label),
            Err(Error::LabelOutOfRange { offset: 9, value: 12, .. })
        ));
        assert!(load_idx(&im, &lb).unwrap_err().is_format_error());
    }

    #[test]
    fn pooling_examples() {
        assert_eq!(avg_pool_2x2(&[0.0; 784], 28, 28).unwrap(), vec![0.0; 196]);
        assert_eq!(avg_pool_2x2(&[100.0; 784], 28, 28).unwrap(), vec![100.0; 196]);
        assert_eq!(avg_pool_2x2(&[0.0, 255.0, 255.0, 0.0], 2, 2).unwrap(), vec![127.5]);
        assert!(avg_pool_2x2(&[0.0; 9], 3, 3).is_err());
    }

    #[test]
    fn normalization_examples() {
        assert!((normalize_pixel(255.0).unwrap() - 0.785_398_163_4).abs() < 1e-10);
        assert_eq!(normalize_pixel(0.0).unwrap(), 0.0);
        assert!((normalize_pixel(51.0).unwrap() - 0.157_079_632_7).abs() < 1e-10);
        assert!(normalize_pixel(-1.0).is_err());
        assert!(normalize_pixel(255.5).is_err());
        let c = 37.0;
        let pooled = avg_pool_2x2(&[c; 16], 4, 4).unwrap();
        for v in normalize(&pooled).unwrap() {
            assert!((v - c / 255.0 * FRAC_PI_4).abs() < 1e-15);
        }
    }

    #[test]
    fn patch_corners() {
        let cfg = PatchConfig::new(14, 8, 6).unwrap();
        assert_eq!(cfg.n_patches(), 4);
        let corners: Vec<_> = (0..4).map(|p| cfg.corner(p)).collect();
        assert_eq!(corners, vec![(0, 0), (0, 6), (6, 0), (6, 6)]);
        assert_eq!(PatchConfig::new(14, 8, 3).unwrap().n_patches(), 9);
        assert_eq!(PatchConfig::new(14, 8, 2).unwrap().n_patches(), 16);
        assert!(PatchConfig::new(14, 8, 4).is_err());
        assert!(PatchConfig::new(4, 5, 1).is_err());
    }

    #[test]
    fn constant_image_patches() {
        let cfg = PatchConfig::new(14, 8, 3).unwrap();
        let f = extract_patches(&[0.3; 196], &[0.0; 196], &cfg).unwrap();
        assert_eq!(f.n_patches(), 9);
        for p in 0..9 {
            assert_eq!(f.patch(p), &[0.3; 64][..]);
        }
        assert!(extract_patches(&[0.3; 195], &[0.0; 196], &cfg).is_err());
    }

    #[test]
    fn prepared_round_trip() {
        let ds = Dataset {
            side: 2,
            samples: vec![
                Sample {
                    pixels: vec![0.1, 0.2, 0.3, 0.4],
                    label: 3,
                },
                Sample {
                    pixels: vec![0.0, 0.5, 0.25, 0.75],
                    label: 9,
                },
            ],
        };
        let bytes = encode_prepared(&ds);
        assert_eq!(decode_prepared(&bytes, Path::new("x")).unwrap(), ds);
        let mut broken = bytes.clone();
        broken[20] ^= 1;
        assert!(decode_prepared(&broken, Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn patch_entries_read_back_image(stride in prop::sample::select(vec![6usize, 3, 2]),
                                         seed in any::<u64>()) {
            let cfg = PatchConfig::new(14, 8, stride).unwrap();
            let image: Vec<f64> = (0..196).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64).collect();
            let f = extract_patches(&image, &[0.0; 196], &cfg).unwrap();
            let l = cfg.per_side();
            for p in 0..cfg.n_patches() {
                let (k, j) = (p / l, p % l);
                for r in 0..8 {
                    for c in 0..8 {
                        prop_assert_eq!(f.patch(p)[r * 8 + c], image[(stride * k + r) * 14 + stride * j + c]);
                    }
                }
            }
        }

        #[test]
        fn multiplicity_counts_patch_membership(stride in prop::sample::select(vec![6usize, 3, 2])) {
            let cfg = PatchConfig::new(14, 8, stride).unwrap();
            let mut seen = vec![0usize; 196];
            for p in 0..cfg.n_patches() {
                for f in 0..64 {
                    seen[cfg.pixel_index(p, f)] += 1;
                }
            }
            for h in 0..14 {
                for w in 0..14 {
                    prop_assert_eq!(seen[h * 14 + w], cfg.multiplicity(h, w));
                }
            }
        }
    }
}

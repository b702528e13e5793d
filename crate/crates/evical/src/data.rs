//! Dataset ingestion (IDX), synthetic blob generation, and labeled/unlabeled
//! pool bookkeeping.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mat::Mat;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad IDX magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated IDX file (need {need} bytes, have {have})")]
    Truncated {
        path: PathBuf,
        need: usize,
        have: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    DimensionMismatch { images: usize, labels: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("labeled fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("labeled fraction selects zero samples (n = {0})")]
    EmptySeed(usize),
    #[error("class {0} has no training samples; stratified seeding impossible")]
    MissingClass(usize),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("index {0} is not in the unlabeled pool")]
    NotUnlabeled(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Feature matrix plus integer labels for one split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Mat,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Seeded subsample without replacement, preserving no particular order.
    pub fn subsample(&self, n: usize, seed: u64) -> Dataset {
        let n = n.min(self.len());
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx.sort_unstable();
        Dataset {
            features: self.features.gather(&idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

fn read_be_u32(bytes: &[u8], off: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            need: off + 4,
            have: bytes.len(),
        })
}

/// Parse a big-endian IDX image/label pair. Pixels are scaled by 1/255;
/// standardization happens separately on the training split.
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let img_bytes = std::fs::read(images_path).map_err(io_err(images_path))?;
    let magic = read_be_u32(&img_bytes, 0, images_path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            path: images_path.to_path_buf(),
            found: magic,
            expected: IDX_IMAGE_MAGIC,
        });
    }
    let n = read_be_u32(&img_bytes, 4, images_path)? as usize;
    let rows = read_be_u32(&img_bytes, 8, images_path)? as usize;
    let cols = read_be_u32(&img_bytes, 12, images_path)? as usize;
    let dim = rows * cols;
    let need = 16 + n * dim;
    if img_bytes.len() < need {
        return Err(DataError::Truncated {
            path: images_path.to_path_buf(),
            need,
            have: img_bytes.len(),
        });
    }

    let lbl_bytes = std::fs::read(labels_path).map_err(io_err(labels_path))?;
    let magic = read_be_u32(&lbl_bytes, 0, labels_path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_path.to_path_buf(),
            found: magic,
            expected: IDX_LABEL_MAGIC,
        });
    }
    let n_labels = read_be_u32(&lbl_bytes, 4, labels_path)? as usize;
    if lbl_bytes.len() < 8 + n_labels {
        return Err(DataError::Truncated {
            path: labels_path.to_path_buf(),
            need: 8 + n_labels,
            have: lbl_bytes.len(),
        });
    }
    if n != n_labels {
        return Err(DataError::DimensionMismatch {
            images: n,
            labels: n_labels,
        });
    }

    let mut features = Mat::zeros(n, dim);
    for (v, &b) in features.data.iter_mut().zip(&img_bytes[16..16 + n * dim]) {
        *v = b as f64 / 255.0;
    }
    let labels: Vec<usize> = lbl_bytes[8..8 + n].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    Ok(Dataset {
        features,
        labels,
        num_classes,
    })
}

/// Write an IDX image tensor (n × rows × cols) from byte pixels.
pub fn write_idx_images(
    path: &Path,
    pixels: &[u8],
    n: usize,
    rows: usize,
    cols: usize,
) -> Result<(), DataError> {
    assert_eq!(pixels.len(), n * rows * cols);
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut header = Vec::with_capacity(16);
    for v in [IDX_IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        header.extend_from_slice(&v.to_be_bytes());
    }
    f.write_all(&header).map_err(io_err(path))?;
    f.write_all(pixels).map_err(io_err(path))?;
    Ok(())
}

/// Write an IDX label vector.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<(), DataError> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut header = Vec::with_capacity(8);
    for v in [IDX_LABEL_MAGIC, labels.len() as u32] {
        header.extend_from_slice(&v.to_be_bytes());
    }
    f.write_all(&header).map_err(io_err(path))?;
    f.write_all(labels).map_err(io_err(path))?;
    Ok(())
}

/// Global mean/std computed on the training features and applied to both
/// splits. Test statistics never leak into the transform.
pub fn standardize(train: &mut Dataset, test: &mut Dataset) -> (f64, f64) {
    let n = train.features.data.len() as f64;
    let mean = train.features.data.iter().sum::<f64>() / n;
    let var = train
        .features
        .data
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt().max(1e-12);
    for split in [train, test] {
        for v in split.features.data.iter_mut() {
            *v = (*v - mean) / std;
        }
    }
    (mean, std)
}

/// Isotropic Gaussian clusters with class centers on a circle of radius 5.
pub fn make_blobs(
    k: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if k < 2 {
        return Err(DataError::TooFewClasses(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Mat::zeros(k * n_per_class, 2);
    let mut labels = Vec::with_capacity(k * n_per_class);
    let radius = 5.0;
    for c in 0..k {
        let angle = std::f64::consts::TAU * c as f64 / k as f64;
        let (cx, cy) = (radius * angle.cos(), radius * angle.sin());
        for i in 0..n_per_class {
            let row = c * n_per_class + i;
            let (g1, g2) = gaussian_pair(&mut rng);
            features.set(row, 0, cx + spread * g1);
            features.set(row, 1, cy + spread * g2);
            labels.push(c);
        }
    }
    Ok(Dataset {
        features,
        labels,
        num_classes: k,
    })
}

fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    let mag = (-2.0 * u1.ln()).sqrt();
    (
        mag * (std::f64::consts::TAU * u2).cos(),
        mag * (std::f64::consts::TAU * u2).sin(),
    )
}

/// Export features plus an integer label column, one row per sample.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    for i in 0..dataset.len() {
        for v in dataset.features.row(i) {
            out.push_str(&format!("{v:.6},"));
        }
        out.push_str(&format!("{}\n", dataset.labels[i]));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Ordered labeled/unlabeled index sets over the training split.
#[derive(Debug, Clone)]
pub struct PoolState {
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
}

impl PoolState {
    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    /// Move `picked` from the unlabeled to the labeled set, preserving
    /// insertion order on both sides.
    pub fn acquire(&mut self, picked: &[usize]) -> Result<(), DataError> {
        let unlabeled: HashSet<usize> = self.unlabeled.iter().copied().collect();
        let mut seen = HashSet::new();
        for &i in picked {
            if !unlabeled.contains(&i) || !seen.insert(i) {
                return Err(DataError::NotUnlabeled(i));
            }
        }
        self.labeled.extend_from_slice(picked);
        self.unlabeled.retain(|i| !seen.contains(i));
        Ok(())
    }

    /// Disjointness and coverage over `0..n`.
    pub fn check_invariants(&self, n: usize) -> bool {
        let l: HashSet<usize> = self.labeled.iter().copied().collect();
        let u: HashSet<usize> = self.unlabeled.iter().copied().collect();
        l.len() == self.labeled.len()
            && u.len() == self.unlabeled.len()
            && l.is_disjoint(&u)
            && l.len() + u.len() == n
            && l.union(&u).all(|&i| i < n)
    }
}

/// Seed the pool with `floor(fraction · N)` labeled samples. Stratified mode
/// guarantees at least one labeled sample per class; uniform mode is the
/// plain protocol.
pub fn init_pool(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<PoolState, DataError> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(DataError::BadFraction(fraction));
    }
    let n = dataset.len();
    let count = (fraction * n as f64).floor() as usize;
    if count == 0 {
        return Err(DataError::EmptySeed(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut labeled: Vec<usize> = Vec::with_capacity(count);
    let mut taken = vec![false; n];
    if stratified {
        if count < dataset.num_classes {
            return Err(DataError::EmptySeed(n));
        }
        for class in 0..dataset.num_classes {
            let pick = order
                .iter()
                .copied()
                .find(|&i| dataset.labels[i] == class)
                .ok_or(DataError::MissingClass(class))?;
            labeled.push(pick);
            taken[pick] = true;
        }
    }
    for &i in &order {
        if labeled.len() == count {
            break;
        }
        if !taken[i] {
            labeled.push(i);
            taken[i] = true;
        }
    }
    let unlabeled: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
    Ok(PoolState { labeled, unlabeled })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_path(name: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        (dir, p)
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("imgs");
        let lbl = dir.path().join("lbls");
        let pixels: Vec<u8> = (0..3 * 4).map(|i| (i * 17 % 256) as u8).collect();
        write_idx_images(&img, &pixels, 3, 2, 2).unwrap();
        write_idx_labels(&lbl, &[0, 2, 1]).unwrap();
        let ds = read_idx(&img, &lbl).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.features.cols, 4);
        assert_eq!(ds.labels, vec![0, 2, 1]);
        assert_eq!(ds.num_classes, 3);
        assert!((ds.features.get(0, 1) - 17.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn idx_bad_magic() {
        let (_d, p) = blob_path("bad");
        std::fs::write(&p, 0xdeadbeefu32.to_be_bytes()).unwrap();
        let (_d2, lbl) = blob_path("lbl");
        write_idx_labels(&lbl, &[0]).unwrap();
        assert!(matches!(
            read_idx(&p, &lbl),
            Err(DataError::BadMagic { .. })
        ));
    }

    #[test]
    fn idx_truncated() {
        let (_d, p) = blob_path("trunc");
        let mut bytes = Vec::new();
        for v in [IDX_IMAGE_MAGIC, 10, 2, 2] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.extend_from_slice(&[0u8; 5]); // far fewer than 40 pixels
        std::fs::write(&p, bytes).unwrap();
        let (_d2, lbl) = blob_path("lbl");
        write_idx_labels(&lbl, &vec![0u8; 10]).unwrap();
        assert!(matches!(
            read_idx(&p, &lbl),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn idx_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("imgs");
        let lbl = dir.path().join("lbls");
        write_idx_images(&img, &[0u8; 8], 2, 2, 2).unwrap();
        write_idx_labels(&lbl, &[0, 1, 1]).unwrap();
        assert!(matches!(
            read_idx(&img, &lbl),
            Err(DataError::DimensionMismatch {
                images: 2,
                labels: 3
            })
        ));
    }

    fn nearest_centroid_accuracy(ds: &Dataset) -> f64 {
        let k = ds.num_classes;
        let mut centroids = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for i in 0..ds.len() {
            let r = ds.features.row(i);
            centroids[ds.labels[i]][0] += r[0];
            centroids[ds.labels[i]][1] += r[1];
            counts[ds.labels[i]] += 1;
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            c[0] /= *n as f64;
            c[1] /= *n as f64;
        }
        let mut correct = 0;
        for i in 0..ds.len() {
            let r = ds.features.row(i);
            let best = (0..k)
                .min_by(|&a, &b| {
                    let da = (r[0] - centroids[a][0]).powi(2) + (r[1] - centroids[a][1]).powi(2);
                    let db = (r[0] - centroids[b][0]).powi(2) + (r[1] - centroids[b][1]).powi(2);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if best == ds.labels[i] {
                correct += 1;
            }
        }
        correct as f64 / ds.len() as f64
    }

    #[test]
    fn blobs_tiny_spread_is_separable() {
        let ds = make_blobs(3, 100, 0.05, 11).unwrap();
        assert_eq!(ds.len(), 300);
        assert_eq!(nearest_centroid_accuracy(&ds), 1.0);
    }

    #[test]
    fn blobs_huge_spread_approaches_chance() {
        let ds = make_blobs(3, 400, 50.0, 11).unwrap();
        let acc = nearest_centroid_accuracy(&ds);
        assert!(acc < 0.5, "accuracy {acc} should be near chance 1/3");
    }

    #[test]
    fn blobs_deterministic_and_validated() {
        let a = make_blobs(4, 10, 1.0, 3).unwrap();
        let b = make_blobs(4, 10, 1.0, 3).unwrap();
        assert_eq!(a.features.data, b.features.data);
        assert!(matches!(
            make_blobs(1, 10, 1.0, 3),
            Err(DataError::TooFewClasses(1))
        ));
    }

    #[test]
    fn pool_seed_fraction() {
        let ds = make_blobs(2, 5000, 1.0, 0).unwrap();
        let pool = init_pool(&ds, 0.10, 7, false).unwrap();
        assert_eq!(pool.labeled().len(), 1000);
        assert_eq!(pool.unlabeled().len(), 9000);
        assert!(pool.check_invariants(10000));

        let again = init_pool(&ds, 0.10, 7, false).unwrap();
        assert_eq!(pool.labeled(), again.labeled());
    }

    #[test]
    fn pool_rejects_degenerate_fractions() {
        let ds = make_blobs(2, 10, 1.0, 0).unwrap();
        assert!(matches!(
            init_pool(&ds, 0.0, 1, false),
            Err(DataError::BadFraction(_))
        ));
        assert!(matches!(
            init_pool(&ds, 1.5, 1, false),
            Err(DataError::BadFraction(_))
        ));
        assert!(matches!(
            init_pool(&ds, 0.01, 1, false),
            Err(DataError::EmptySeed(_))
        ));
    }

    #[test]
    fn stratified_pool_covers_all_classes() {
        let ds = make_blobs(5, 100, 1.0, 2).unwrap();
        let pool = init_pool(&ds, 0.02, 9, true).unwrap(); // 10 seeds, 5 classes
        let mut seen = vec![false; 5];
        for &i in pool.labeled() {
            seen[ds.labels[i]] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn pool_mutation_stress() {
        let ds = make_blobs(3, 400, 1.0, 5).unwrap();
        let mut pool = init_pool(&ds, 0.1, 1, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            if pool.unlabeled().is_empty() {
                break;
            }
            let pick = pool.unlabeled()[rng.gen_range(0..pool.unlabeled().len())];
            pool.acquire(&[pick]).unwrap();
            assert!(pool.check_invariants(1200));
        }
        // Acquiring an already-labeled index must fail.
        let taken = pool.labeled()[0];
        assert!(pool.acquire(&[taken]).is_err());
    }
}

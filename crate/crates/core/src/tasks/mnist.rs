//! Pixel-by-pixel MNIST from IDX files, with one fixed pixel permutation shared
//! by every split.

use std::path::{Path, PathBuf};

use super::TaskSource;
use crate::cell::{LossKind, SequenceBatch, SequenceModel, Targets};
use crate::error::{EunnError, Result};
use crate::Rng;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";
const CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn ingest(path: &Path, offset: u64, msg: impl Into<String>) -> EunnError {
    EunnError::Ingest {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| ingest(path, 0, e.to_string()))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| ingest(path, bytes.len() as u64, "file ends inside the header"))
}

fn check_payload(bytes: &[u8], header: usize, expected: usize, path: &Path) -> Result<()> {
    let got = bytes.len() - header;
    if got < expected {
        return Err(ingest(
            path,
            bytes.len() as u64,
            format!("truncated payload: header promises {expected} bytes, found {got}"),
        ));
    }
    if got > expected {
        return Err(ingest(
            path,
            (header + expected) as u64,
            format!("{} trailing bytes after payload", got - expected),
        ));
    }
    Ok(())
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_all(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(ingest(path, 0, format!("bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    check_payload(&bytes, 16, count * rows * cols, path)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_all(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(ingest(path, 0, format!("bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    check_payload(&bytes, 8, count, path)?;
    if let Some(i) = bytes[8..].iter().position(|&l| l as usize >= CLASSES) {
        return Err(ingest(path, (8 + i) as u64, format!("label {} out of range", bytes[8 + i])));
    }
    Ok(bytes[8..].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnistConfig {
    pub dir: PathBuf,
    /// `None` keeps raster order.
    pub perm_seed: Option<u64>,
    pub train_size: usize,
    /// Taken from the end of the training file.
    pub val_size: usize,
    /// Average-pooling factor; must divide the image side.
    pub downsample: usize,
}

/// Scaled, pooled and permuted pixel sequences with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistSplit {
    seq_len: usize,
    pixels: Vec<f64>,
    labels: Vec<usize>,
}

impl MnistSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sequence(&self, i: usize) -> &[f64] {
        &self.pixels[i * self.seq_len..(i + 1) * self.seq_len]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Batch over the given sample indices; only the last step is scored.
    pub fn batch(&self, indices: &[usize]) -> Result<SequenceBatch> {
        let (t_len, bsz) = (self.seq_len, indices.len());
        let mut inputs = vec![0.0; t_len * bsz];
        let mut targets = vec![0; t_len * bsz];
        let mut mask = vec![false; t_len * bsz];
        for (b, &i) in indices.iter().enumerate() {
            for (t, &p) in self.sequence(i).iter().enumerate() {
                inputs[t * bsz + b] = p;
            }
            let last = (t_len - 1) * bsz + b;
            targets[last] = self.labels[i];
            mask[last] = true;
        }
        SequenceBatch::new(t_len, bsz, 1, inputs, Targets::Classes(targets), Some(mask))
    }

    /// Classification accuracy, evaluated in chunks.
    pub fn accuracy(&self, model: &dyn SequenceModel, chunk: usize) -> Result<f64> {
        if self.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0.0;
        let idx: Vec<usize> = (0..self.len()).collect();
        for part in idx.chunks(chunk.max(1)) {
            let stats = model.evaluate(&self.batch(part)?, LossKind::CrossEntropy)?;
            correct += stats.accuracy * part.len() as f64;
        }
        Ok(correct / self.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnistData {
    pub train: MnistSplit,
    pub validation: MnistSplit,
    pub test: Option<MnistSplit>,
    /// `perm[t]` is the pooled-pixel index fed at step `t`.
    pub perm: Vec<usize>,
}

fn pool(img: &[u8], rows: usize, cols: usize, k: usize) -> Vec<f64> {
    let (r2, c2) = (rows / k, cols / k);
    let norm = 1.0 / (255.0 * (k * k) as f64);
    let mut out = vec![0.0; r2 * c2];
    for r in 0..rows {
        for c in 0..cols {
            out[(r / k) * c2 + c / k] += img[r * cols + c] as f64;
        }
    }
    out.iter_mut().for_each(|v| *v *= norm);
    out
}

fn build_split(images: &IdxImages, labels: &[u8], range: std::ops::Range<usize>, k: usize, perm: &[usize]) -> MnistSplit {
    let size = images.rows * images.cols;
    let seq_len = perm.len();
    let mut pixels = Vec::with_capacity(range.len() * seq_len);
    for i in range.clone() {
        let pooled = pool(&images.pixels[i * size..(i + 1) * size], images.rows, images.cols, k);
        pixels.extend(perm.iter().map(|&p| pooled[p]));
    }
    MnistSplit {
        seq_len,
        pixels,
        labels: labels[range].iter().map(|&l| l as usize).collect(),
    }
}

fn load_pair(dir: &Path, img: &str, lbl: &str) -> Result<(IdxImages, Vec<u8>)> {
    let images = read_idx_images(&dir.join(img))?;
    let labels = read_idx_labels(&dir.join(lbl))?;
    if labels.len() != images.count {
        return Err(ingest(
            &dir.join(lbl),
            4,
            format!("{} labels for {} images", labels.len(), images.count),
        ));
    }
    Ok((images, labels))
}

/// Loads train/validation from the training files and the test split when
/// its files are present.
pub fn mnist_load(cfg: &MnistConfig) -> Result<MnistData> {
    let (images, labels) = load_pair(&cfg.dir, TRAIN_IMAGES, TRAIN_LABELS)?;
    let k = cfg.downsample;
    if k == 0 || images.rows % k != 0 || images.cols % k != 0 {
        return Err(EunnError::Config(format!(
            "downsample factor {k} must divide the {}x{} image",
            images.rows, images.cols
        )));
    }
    if cfg.train_size == 0 || cfg.val_size == 0 || cfg.train_size + cfg.val_size > images.count {
        return Err(EunnError::Config(format!(
            "train_size {} + val_size {} must be positive and fit the {} available training images",
            cfg.train_size, cfg.val_size, images.count
        )));
    }
    let seq_len = (images.rows / k) * (images.cols / k);
    let perm = match cfg.perm_seed {
        Some(seed) => Rng::new(seed).permutation(seq_len),
        None => (0..seq_len).collect(),
    };
    let train = build_split(&images, &labels, 0..cfg.train_size, k, &perm);
    let validation = build_split(&images, &labels, images.count - cfg.val_size..images.count, k, &perm);
    let test = if cfg.dir.join(TEST_IMAGES).exists() {
        let (ti, tl) = load_pair(&cfg.dir, TEST_IMAGES, TEST_LABELS)?;
        if (ti.rows, ti.cols) != (images.rows, images.cols) {
            return Err(ingest(&cfg.dir.join(TEST_IMAGES), 8, "test image size differs from training"));
        }
        Some(build_split(&ti, &tl, 0..ti.count, k, &perm))
    } else {
        None
    };
    Ok(MnistData {
        train,
        validation,
        test,
        perm,
    })
}

const EVAL_CHUNK: usize = 500;

impl TaskSource for MnistData {
    fn n_in(&self) -> usize {
        1
    }

    fn n_out(&self) -> usize {
        CLASSES
    }

    fn loss_kind(&self) -> LossKind {
        LossKind::CrossEntropy
    }

    fn train_batch(&self, batch: usize, rng: &mut Rng) -> Result<SequenceBatch> {
        let idx: Vec<usize> = (0..batch).map(|_| rng.below(self.train.len())).collect();
        self.train.batch(&idx)
    }

    fn val_metric_name(&self) -> &'static str {
        "val_accuracy"
    }

    fn validate(&self, model: &dyn SequenceModel) -> Result<f64> {
        self.validation.accuracy(model, EVAL_CHUNK)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_images(path: &Path, count: u32, rows: u32, cols: u32, pixels: &[u8]) {
        let mut bytes = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.extend_from_slice(pixels);
        fs::write(path, bytes).unwrap();
    }

    fn write_labels(path: &Path, labels: &[u8]) {
        let mut bytes = Vec::new();
        for v in [LABEL_MAGIC, labels.len() as u32] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.extend_from_slice(labels);
        fs::write(path, bytes).unwrap();
    }

    fn fixture(count: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..count * 784).map(|i| (i * 7 % 256) as u8).collect();
        write_images(&dir.path().join(TRAIN_IMAGES), count as u32, 28, 28, &pixels);
        let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
        write_labels(&dir.path().join(TRAIN_LABELS), &labels);
        dir
    }

    fn config(dir: &Path) -> MnistConfig {
        MnistConfig {
            dir: dir.to_path_buf(),
            perm_seed: Some(3),
            train_size: 6,
            val_size: 3,
            downsample: 1,
        }
    }

    #[test]
    fn header_parse() {
        let dir = fixture(4);
        let img = read_idx_images(&dir.path().join(TRAIN_IMAGES)).unwrap();
        assert_eq!((img.count, img.rows, img.cols), (4, 28, 28));
        assert_eq!(read_idx_labels(&dir.path().join(TRAIN_LABELS)).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn corrupt_files_report_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad");
        write_images(&p, 2, 28, 28, &[0; 100]);
        match read_idx_images(&p) {
            Err(EunnError::Ingest { offset, path, .. }) => {
                assert_eq!(offset, 116);
                assert_eq!(path, p);
            }
            other => panic!("{other:?}"),
        }
        fs::write(&p, [0, 0, 8, 1, 0]).unwrap();
        assert!(matches!(read_idx_images(&p), Err(EunnError::Ingest { offset: 0, .. })));
        fs::write(&p, [0, 0, 8, 3, 0, 0]).unwrap();
        assert!(matches!(read_idx_images(&p), Err(EunnError::Ingest { offset: 6, .. })));
        assert!(matches!(
            read_idx_images(&dir.path().join("missing")),
            Err(EunnError::Ingest { offset: 0, .. })
        ));
        write_labels(&p, &[1, 2, 11]);
        assert!(matches!(read_idx_labels(&p), Err(EunnError::Ingest { offset: 10, .. })));
    }

    #[test]
    fn identity_order_and_zero_image() {
        let dir = tempfile::tempdir().unwrap();
        write_images(&dir.path().join(TRAIN_IMAGES), 2, 28, 28, &[0; 2 * 784]);
        write_labels(&dir.path().join(TRAIN_LABELS), &[4, 5]);
        let cfg = MnistConfig {
            perm_seed: None,
            train_size: 1,
            val_size: 1,
            ..config(dir.path())
        };
        let data = mnist_load(&cfg).unwrap();
        assert_eq!(data.perm, (0..784).collect::<Vec<_>>());
        assert!(data.train.sequence(0).iter().all(|&p| p == 0.0));
        assert_eq!(data.validation.label(0), 5);
    }

    #[test]
    fn permutation_is_fixed_and_shared() {
        let dir = fixture(10);
        let a = mnist_load(&config(dir.path())).unwrap();
        let b = mnist_load(&config(dir.path())).unwrap();
        assert_eq!(a, b);
        let mut seen = a.perm.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..784).collect::<Vec<_>>());
        let img = read_idx_images(&dir.path().join(TRAIN_IMAGES)).unwrap();
        let raw = |i: usize, p: usize| img.pixels[i * 784 + p] as f64 / 255.0;
        for t in [0, 100, 783] {
            assert_eq!(a.train.sequence(2)[t], raw(2, a.perm[t]));
            assert_eq!(a.validation.sequence(0)[t], raw(7, a.perm[t]));
        }
    }

    #[test]
    fn downsample_pools() {
        let dir = fixture(10);
        let cfg = MnistConfig {
            downsample: 2,
            perm_seed: None,
            ..config(dir.path())
        };
        let data = mnist_load(&cfg).unwrap();
        let img = read_idx_images(&dir.path().join(TRAIN_IMAGES)).unwrap();
        let px = |r: usize, c: usize| img.pixels[784 + r * 28 + c] as f64;
        let expect = (px(2, 4) + px(2, 5) + px(3, 4) + px(3, 5)) / (4.0 * 255.0);
        assert!((data.train.sequence(1)[14 + 2] - expect).abs() < 1e-15);
        assert_eq!(data.train.sequence(1).len(), 196);
        assert!(mnist_load(&MnistConfig { downsample: 3, ..cfg }).is_err());
    }

    #[test]
    fn oversized_split_is_config_error() {
        let dir = fixture(5);
        assert!(matches!(mnist_load(&config(dir.path())), Err(EunnError::Config(_))));
    }

    #[test]
    fn batches_score_last_step_only() {
        let dir = fixture(10);
        let data = mnist_load(&config(dir.path())).unwrap();
        let batch = data.train.batch(&[1, 4]).unwrap();
        assert_eq!(batch.scored_positions(), 2);
        assert!(batch.is_scored(783, 1));
        assert_eq!(batch.class_target(783, 1), 4);
        assert_eq!(batch.input(10, 0)[0], data.train.sequence(1)[10]);
    }
}

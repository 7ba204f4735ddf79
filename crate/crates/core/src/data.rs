//! Synthetic image datasets, trigger stamping, and the SRAD dataset file.
//!
//! Images are class-conditional: each class has a fixed smooth template
//! (a seeded low-frequency pattern) and samples are the template plus
//! clipped Gaussian pixel noise. Everything is deterministic per seed.
//!
//! SRAD layout (all integers little-endian): magic `"SRAD"`, version u32 = 1,
//! then `N, C, H, W, num_classes` as u32, then `N` labels as u16, then
//! `N*C*H*W` f32 image values row-major.

use crate::tensor::{Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const SRAD_MAGIC: &[u8; 4] = b"SRAD";
pub const SRAD_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("trigger patch ({rows}x{cols} at {pos:?}) does not fit a {h}x{w} image")]
    TriggerOutOfBounds {
        rows: usize,
        cols: usize,
        pos: (usize, usize),
        h: usize,
        w: usize,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("dataset is empty after exclusion")]
    EmptyResult,
    #[error("dataset file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A labelled image split. Images live in one `[N,C,H,W]` tensor with values
/// in `[0,1]`; every label is below `num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    images: Tensor,
    labels: Vec<u16>,
    num_classes: usize,
}

impl DatasetSplit {
    pub fn new(images: Tensor, labels: Vec<u16>, num_classes: usize) -> Result<Self, DataError> {
        let [n, _, _, _] = images.shape() else {
            return Err(DataError::Invalid(format!(
                "images must be [N,C,H,W], got {:?}",
                images.shape()
            )));
        };
        if *n == 0 {
            return Err(DataError::Invalid("dataset must hold at least one sample".into()));
        }
        if labels.len() != *n {
            return Err(DataError::Invalid(format!(
                "{} labels for {n} images",
                labels.len()
            )));
        }
        if num_classes == 0 || num_classes > u16::MAX as usize + 1 {
            return Err(DataError::Invalid(format!("bad num_classes {num_classes}")));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(DataError::Invalid(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        if !images.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(DataError::Invalid("image values must lie in [0,1]".into()));
        }
        Ok(DatasetSplit {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// (C, H, W) of a single sample.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    /// Copies sample `i` out as a `[C,H,W]` tensor.
    pub fn image(&self, i: usize) -> Tensor {
        let (c, h, w) = self.image_shape();
        let stride = c * h * w;
        Tensor::new(
            vec![c, h, w],
            self.images.data()[i * stride..(i + 1) * stride].to_vec(),
        )
        .expect("sample slice is valid")
    }
}

/// Configuration for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub image_shape: (usize, usize, usize),
    pub seed: u64,
    pub noise_sigma: f32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 10,
            per_class: 100,
            image_shape: (3, 16, 16),
            seed: 0,
            noise_sigma: 0.1,
        }
    }
}

/// Bilinear upsampling of a coarse grid to (h, w); the low-frequency class
/// template generator.
fn upsample_bilinear(grid: &[f32], gh: usize, gw: usize, h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        let fy = if h > 1 {
            y as f32 * (gh - 1) as f32 / (h - 1) as f32
        } else {
            0.0
        };
        let y0 = (fy.floor() as usize).min(gh - 1);
        let y1 = (y0 + 1).min(gh - 1);
        let ty = fy - y0 as f32;
        for x in 0..w {
            let fx = if w > 1 {
                x as f32 * (gw - 1) as f32 / (w - 1) as f32
            } else {
                0.0
            };
            let x0 = (fx.floor() as usize).min(gw - 1);
            let x1 = (x0 + 1).min(gw - 1);
            let tx = fx - x0 as f32;
            let top = grid[y0 * gw + x0] * (1.0 - tx) + grid[y0 * gw + x1] * tx;
            let bot = grid[y1 * gw + x0] * (1.0 - tx) + grid[y1 * gw + x1] * tx;
            out[y * w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Generates a deterministic class-conditional dataset and splits it 80/20
/// per class into train and test.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(DatasetSplit, DatasetSplit), DataError> {
    let (c, h, w) = cfg.image_shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(DataError::InvalidConfig(format!(
            "degenerate image shape {:?}",
            cfg.image_shape
        )));
    }
    if cfg.per_class < 2 {
        return Err(DataError::InvalidConfig(format!(
            "per_class must be at least 2, got {}",
            cfg.per_class
        )));
    }
    if cfg.num_classes == 0 || cfg.num_classes > u16::MAX as usize + 1 {
        return Err(DataError::InvalidConfig(format!(
            "bad num_classes {}",
            cfg.num_classes
        )));
    }
    if !(cfg.noise_sigma.is_finite() && cfg.noise_sigma >= 0.0) {
        return Err(DataError::InvalidConfig(format!(
            "noise_sigma must be finite and non-negative, got {}",
            cfg.noise_sigma
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (gh, gw) = (4.min(h), 4.min(w));
    let plane = h * w;

    // one smooth template per class, all channels drawn before any sample
    let mut templates = Vec::with_capacity(cfg.num_classes);
    for _ in 0..cfg.num_classes {
        let mut template = Vec::with_capacity(c * plane);
        for _ in 0..c {
            let grid: Vec<f32> = (0..gh * gw).map(|_| rng.random_range(0.0..1.0)).collect();
            template.extend(upsample_bilinear(&grid, gh, gw, h, w));
        }
        templates.push(template);
    }

    let normal = Normal::new(0.0f32, cfg.noise_sigma.max(f32::MIN_POSITIVE))
        .expect("sigma validated above");
    let n_train_per_class = (cfg.per_class * 8 / 10).max(1).min(cfg.per_class - 1);

    let mut train_images = Vec::new();
    let mut train_labels: Vec<u16> = Vec::new();
    let mut test_images = Vec::new();
    let mut test_labels: Vec<u16> = Vec::new();

    for class in 0..cfg.num_classes {
        for sample in 0..cfg.per_class {
            let mut img = templates[class].clone();
            if cfg.noise_sigma > 0.0 {
                for v in &mut img {
                    *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
            if sample < n_train_per_class {
                train_images.extend(img);
                train_labels.push(class as u16);
            } else {
                test_images.extend(img);
                test_labels.push(class as u16);
            }
        }
    }

    let n_train = train_labels.len();
    let n_test = test_labels.len();
    let train = DatasetSplit::new(
        Tensor::new(vec![n_train, c, h, w], train_images)?,
        train_labels,
        cfg.num_classes,
    )?;
    let test = DatasetSplit::new(
        Tensor::new(vec![n_test, c, h, w], test_images)?,
        test_labels,
        cfg.num_classes,
    )?;
    Ok((train, test))
}

/// The trigger placement function: a `[C,s,s]` patch and the top-left corner
/// where it overwrites the image. `s == 0` is the no-op trigger.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSpec {
    pattern: Tensor,
    position: (usize, usize),
}

impl TriggerSpec {
    pub fn new(pattern: Tensor, position: (usize, usize)) -> Result<Self, DataError> {
        let [_, s1, s2] = pattern.shape() else {
            return Err(DataError::Invalid(format!(
                "trigger pattern must be [C,s,s], got {:?}",
                pattern.shape()
            )));
        };
        if s1 != s2 {
            return Err(DataError::Invalid(format!(
                "trigger patch must be square, got {s1}x{s2}"
            )));
        }
        if !pattern.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(DataError::Invalid("trigger values must lie in [0,1]".into()));
        }
        Ok(TriggerSpec { pattern, position })
    }

    /// Black/white checkerboard patch, identical across channels, with 1.0
    /// on even (row+col) parity.
    pub fn checkerboard(channels: usize, size: usize, position: (usize, usize)) -> Self {
        let pattern = Tensor::from_fn(vec![channels, size, size], |i| {
            let r = (i / size) % size;
            let c = i % size;
            if (r + c) % 2 == 0 {
                1.0
            } else {
                0.0
            }
        })
        .expect("checkerboard values are finite");
        TriggerSpec { pattern, position }
    }

    /// The default trigger for an image shape: a 6x6 checkerboard at the
    /// bottom-right corner with a 1-pixel margin.
    pub fn default_for(shape: (usize, usize, usize)) -> Result<Self, DataError> {
        let (c, h, w) = shape;
        let size = 6;
        if h < size + 1 || w < size + 1 {
            return Err(DataError::Invalid(format!(
                "image {h}x{w} too small for the default {size}x{size} trigger"
            )));
        }
        Ok(Self::checkerboard(c, size, (h - size - 1, w - size - 1)))
    }

    pub fn size(&self) -> usize {
        self.pattern.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.pattern.shape()[0]
    }

    pub fn pattern(&self) -> &Tensor {
        &self.pattern
    }

    pub fn position(&self) -> (usize, usize) {
        self.position
    }
}

/// Stamps the trigger onto one `[C,H,W]` image: the patch region is fully
/// overwritten by the pattern, everything else is untouched.
pub fn apply_trigger(image: &Tensor, trig: &TriggerSpec) -> Result<Tensor, DataError> {
    let [c, h, w] = image.shape() else {
        return Err(DataError::Invalid(format!(
            "image must be [C,H,W], got {:?}",
            image.shape()
        )));
    };
    let (c, h, w) = (*c, *h, *w);
    let s = trig.size();
    if s == 0 {
        return Ok(image.clone());
    }
    if trig.channels() != c {
        return Err(DataError::Invalid(format!(
            "trigger has {} channels but image has {c}",
            trig.channels()
        )));
    }
    let (row, col) = trig.position;
    if row + s > h || col + s > w {
        return Err(DataError::TriggerOutOfBounds {
            rows: s,
            cols: s,
            pos: (row, col),
            h,
            w,
        });
    }
    let mut out = image.clone();
    let data = out.data_mut();
    for ch in 0..c {
        for r in 0..s {
            for cc in 0..s {
                data[(ch * h + row + r) * w + col + cc] =
                    trig.pattern.data()[(ch * s + r) * s + cc];
            }
        }
    }
    Ok(out)
}

/// Applies the trigger to every sample, optionally dropping samples of
/// `exclude_class` first. Labels are preserved.
pub fn stamp_dataset(
    split: &DatasetSplit,
    trig: &TriggerSpec,
    exclude_class: Option<usize>,
) -> Result<DatasetSplit, DataError> {
    let (c, h, w) = split.image_shape();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..split.len() {
        if let Some(excl) = exclude_class {
            if split.label(i) == excl {
                continue;
            }
        }
        let stamped = apply_trigger(&split.image(i), trig)?;
        images.extend_from_slice(stamped.data());
        labels.push(split.labels[i]);
    }
    if labels.is_empty() {
        return Err(DataError::EmptyResult);
    }
    let n = labels.len();
    DatasetSplit::new(
        Tensor::new(vec![n, c, h, w], images)?,
        labels,
        split.num_classes,
    )
}

pub fn encode_dataset(split: &DatasetSplit) -> Vec<u8> {
    let (c, h, w) = split.image_shape();
    let n = split.len();
    let mut out = Vec::with_capacity(28 + 2 * n + 4 * split.images.numel());
    out.extend_from_slice(SRAD_MAGIC);
    out.extend_from_slice(&SRAD_VERSION.to_le_bytes());
    for dim in [n, c, h, w, split.num_classes] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &l in &split.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for &v in split.images.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<DatasetSplit, DataError> {
    if bytes.len() < 28 {
        return Err(DataError::Format("file shorter than the SRAD header".into()));
    }
    if &bytes[0..4] != SRAD_MAGIC {
        return Err(DataError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SRAD_VERSION {
        return Err(DataError::Format(format!(
            "unsupported version {version} (expected {SRAD_VERSION})"
        )));
    }
    let mut dims = [0usize; 5];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    }
    let [n, c, h, w, num_classes] = dims;
    let labels_off = 28;
    let payload_off = labels_off + 2 * n;
    let expected_len = payload_off + 4 * n * c * h * w;
    if bytes.len() != expected_len {
        return Err(DataError::Format(format!(
            "payload length mismatch: file has {} bytes, header implies {expected_len}",
            bytes.len()
        )));
    }
    let labels: Vec<u16> = (0..n)
        .map(|i| {
            u16::from_le_bytes(
                bytes[labels_off + 2 * i..labels_off + 2 * i + 2]
                    .try_into()
                    .unwrap(),
            )
        })
        .collect();
    let values: Vec<f32> = bytes[payload_off..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let images = Tensor::new(vec![n, c, h, w], values)?;
    DatasetSplit::new(images, labels, num_classes)
}

pub fn save_dataset(split: &DatasetSplit, path: &Path) -> Result<(), DataError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_dataset(split))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<DatasetSplit, DataError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig {
            num_classes: 4,
            per_class: 10,
            image_shape: (2, 8, 8),
            seed: 7,
            noise_sigma: 0.1,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (a_train, a_test) = generate_synthetic(&small_cfg()).unwrap();
        let (b_train, b_test) = generate_synthetic(&small_cfg()).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_test, b_test);

        let mut other = small_cfg();
        other.seed = 8;
        let (c_train, _) = generate_synthetic(&other).unwrap();
        assert_ne!(a_train, c_train);
    }

    #[test]
    fn zero_sigma_makes_class_samples_identical() {
        let mut cfg = small_cfg();
        cfg.noise_sigma = 0.0;
        let (train, _) = generate_synthetic(&cfg).unwrap();
        // first class occupies the first 8 train samples
        let first = train.image(0);
        for i in 1..8 {
            assert_eq!(train.image(i), first);
            assert_eq!(train.label(i), 0);
        }
    }

    #[test]
    fn split_sizes_are_80_20_per_class() {
        let (train, test) = generate_synthetic(&small_cfg()).unwrap();
        assert_eq!(train.len(), 4 * 8);
        assert_eq!(test.len(), 4 * 2);
        assert!(matches!(
            generate_synthetic(&SyntheticConfig {
                per_class: 1,
                ..small_cfg()
            }),
            Err(DataError::InvalidConfig(_))
        ));
    }

    #[test]
    fn nearest_class_mean_separates_the_task() {
        // independent oracle: classify test samples by the nearest train
        // class mean; the task must be essentially solved by it
        let cfg = SyntheticConfig::default();
        let (train, test) = generate_synthetic(&cfg).unwrap();
        let (c, h, w) = train.image_shape();
        let dim = c * h * w;
        let mut means = vec![vec![0.0f64; dim]; cfg.num_classes];
        let mut counts = vec![0usize; cfg.num_classes];
        for i in 0..train.len() {
            let img = train.image(i);
            let class = train.label(i);
            counts[class] += 1;
            for (m, &v) in means[class].iter_mut().zip(img.data()) {
                *m += v as f64;
            }
        }
        for (mean, count) in means.iter_mut().zip(&counts) {
            for m in mean.iter_mut() {
                *m /= *count as f64;
            }
        }
        let mut correct = 0usize;
        for i in 0..test.len() {
            let img = test.image(i);
            let mut best = (f64::INFINITY, 0usize);
            for (class, mean) in means.iter().enumerate() {
                let d: f64 = img
                    .data()
                    .iter()
                    .zip(mean)
                    .map(|(&v, &m)| (v as f64 - m).powi(2))
                    .sum();
                if d < best.0 {
                    best = (d, class);
                }
            }
            if best.1 == test.label(i) {
                correct += 1;
            }
        }
        let acc = correct as f64 / test.len() as f64;
        assert!(acc >= 0.99, "nearest-mean accuracy {acc}");
    }

    #[test]
    fn trigger_noop_and_full_cover() {
        let img = Tensor::from_fn(vec![2, 4, 4], |i| (i % 7) as f32 / 10.0).unwrap();
        let noop = TriggerSpec::checkerboard(2, 0, (0, 0));
        assert_eq!(apply_trigger(&img, &noop).unwrap(), img);

        let full = TriggerSpec::checkerboard(2, 4, (0, 0));
        let stamped = apply_trigger(&img, &full).unwrap();
        assert_eq!(stamped, *full.pattern());
    }

    #[test]
    fn trigger_touches_exactly_c_s_s_scalars() {
        let img = Tensor::filled(vec![3, 4, 4], 0.5).unwrap();
        let trig = TriggerSpec::checkerboard(3, 2, (2, 2));
        let stamped = apply_trigger(&img, &trig).unwrap();
        let differing = stamped
            .data()
            .iter()
            .zip(img.data())
            .filter(|(a, b)| a != b)
            .count();
        // checkerboard writes 1.0 and 0.0 over 0.5, so every patch scalar differs
        assert_eq!(differing, 3 * 2 * 2);
    }

    #[test]
    fn trigger_is_idempotent_and_bounds_checked() {
        let img = Tensor::filled(vec![1, 8, 8], 0.25).unwrap();
        let trig = TriggerSpec::default_for((1, 8, 8)).unwrap();
        let once = apply_trigger(&img, &trig).unwrap();
        let twice = apply_trigger(&once, &trig).unwrap();
        assert_eq!(once, twice);

        let oob = TriggerSpec::checkerboard(1, 3, (7, 7));
        assert!(matches!(
            apply_trigger(&img, &oob),
            Err(DataError::TriggerOutOfBounds { .. })
        ));
    }

    #[test]
    fn stamping_preserves_or_filters_labels() {
        let (_, test) = generate_synthetic(&small_cfg()).unwrap();
        let trig = TriggerSpec::checkerboard(2, 2, (0, 0));

        let all = stamp_dataset(&test, &trig, None).unwrap();
        assert_eq!(all.len(), test.len());
        assert_eq!(all.labels(), test.labels());

        let filtered = stamp_dataset(&test, &trig, Some(1)).unwrap();
        assert!(filtered.labels().iter().all(|&l| l != 1));
        assert_eq!(filtered.len(), test.len() - 2);
    }

    #[test]
    fn stamping_everything_away_is_an_error() {
        let mut cfg = small_cfg();
        cfg.num_classes = 1;
        let (train, _) = generate_synthetic(&cfg).unwrap();
        let trig = TriggerSpec::checkerboard(2, 2, (0, 0));
        assert!(matches!(
            stamp_dataset(&train, &trig, Some(0)),
            Err(DataError::EmptyResult)
        ));
    }

    #[test]
    fn srad_round_trip_is_bit_identical() {
        let (train, _) = generate_synthetic(&small_cfg()).unwrap();
        let bytes = encode_dataset(&train);
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, train);
        assert_eq!(encode_dataset(&back), bytes);
    }

    #[test]
    fn srad_rejects_corruption() {
        let (train, _) = generate_synthetic(&small_cfg()).unwrap();
        let bytes = encode_dataset(&train);

        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(
            decode_dataset(truncated),
            Err(DataError::Format(_))
        ));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            decode_dataset(&bad_magic),
            Err(DataError::Format(_))
        ));

        // corrupt a label beyond num_classes
        let mut bad_label = bytes.clone();
        bad_label[28] = 0xff;
        bad_label[29] = 0xff;
        assert!(matches!(
            decode_dataset(&bad_label),
            Err(DataError::Invalid(_))
        ));
    }

    #[test]
    fn srad_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.srad");
        let (train, _) = generate_synthetic(&small_cfg()).unwrap();
        save_dataset(&train, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, train);
    }
}

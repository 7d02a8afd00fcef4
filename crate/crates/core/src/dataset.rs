//! Sample generation, ingestion, featurization, augmentation and fold splits.
//!
//! Two sample forms exist: [`GridSample`] carries a raw image grid and is what
//! augmentation operates on; [`Sample`] carries a feature vector and is what
//! classifiers consume. Featurization converts the former into the latter, so
//! the pipeline is grids -> augment (train split only) -> featurize -> fit.
//!
//! Every operation here is a pure function of its inputs and an explicit seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::taxonomy::{FineId, Taxonomy, TaxonomyError};

/// Feature vector of a single sample. Dimension is constant across a dataset.
pub type FeatureVector = Vec<f64>;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Taxonomy(#[from] TaxonomyError),
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error("grid data length {got} does not match {h}x{w}x{c}")]
    GridShape {
        h: usize,
        w: usize,
        c: usize,
        got: usize,
    },
    #[error("grid values must lie in [0,1]")]
    GridRange,
    #[error("rotation requires a square grid, got {h}x{w}")]
    NonSquareGrid { h: usize, w: usize },
    #[error("invalid featurize mode: {0}")]
    InvalidMode(String),
    #[error("csv header must be f0,...,fD-1,label; got {0:?}")]
    CsvHeader(String),
    #[error("csv row {row}: expected {expected} feature columns, got {got}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("csv row {row}: {msg}")]
    CsvRow { row: usize, msg: String },
    #[error("no samples found in {0}")]
    NoSamples(String),
    #[error("cannot decode image {path}: {msg}")]
    Image { path: String, msg: String },
    #[error("feature dimensions differ across samples: {first} vs {got} at sample {index}")]
    DimMismatch {
        first: usize,
        got: usize,
        index: usize,
    },
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("class {label:?}: {n} samples cannot host {k} disjoint test folds of {per_fold} each")]
    ClassTooSmall {
        label: String,
        n: usize,
        k: usize,
        per_fold: usize,
    },
    #[error("class {label:?}: count {n} is not divisible by fraction {frac} into a whole {part} size")]
    Indivisible { label: String, n: usize, frac: f64, part: &'static str },
}

/// A labeled feature-space instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: FeatureVector,
    pub fine: FineId,
}

/// A labeled raw-grid instance, prior to featurization.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSample {
    pub grid: ImageGrid,
    pub fine: FineId,
}

/// Row-major intensity grid in [0,1], indexed `(y, x, channel)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, DatasetError> {
        if data.len() != height * width * channels {
            return Err(DatasetError::GridShape {
                h: height,
                w: width,
                c: channels,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(DatasetError::GridRange);
        }
        Ok(ImageGrid {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    fn map_indices(&self, f: impl Fn(usize, usize) -> (usize, usize), h: usize, w: usize) -> Self {
        let c = self.channels;
        let mut data = vec![0.0; h * w * c];
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = f(y, x);
                for ch in 0..c {
                    data[(y * w + x) * c + ch] = self.get(sy, sx, ch);
                }
            }
        }
        ImageGrid {
            height: h,
            width: w,
            channels: c,
            data,
        }
    }

    /// Rotate 90 degrees clockwise (square grids only).
    pub fn rot90(&self) -> Result<Self, DatasetError> {
        if !self.is_square() {
            return Err(DatasetError::NonSquareGrid {
                h: self.height,
                w: self.width,
            });
        }
        let n = self.height;
        // new[y][x] = old[n-1-x][y]
        Ok(self.map_indices(|y, x| (n - 1 - x, y), n, n))
    }

    /// Rotate 180 degrees.
    pub fn rot180(&self) -> Self {
        let (h, w) = (self.height, self.width);
        self.map_indices(|y, x| (h - 1 - y, w - 1 - x), h, w)
    }

    /// Rotate 270 degrees clockwise (square grids only).
    pub fn rot270(&self) -> Result<Self, DatasetError> {
        Ok(self.rot90()?.rot180())
    }

    /// Mirror left-right.
    pub fn hflip(&self) -> Self {
        let (h, w) = (self.height, self.width);
        self.map_indices(|y, x| (y, w - 1 - x), h, w)
    }

    /// Mirror top-bottom.
    pub fn vflip(&self) -> Self {
        let (h, w) = (self.height, self.width);
        self.map_indices(|y, x| (h - 1 - y, x), h, w)
    }
}

/// The six training variants of a square grid:
/// `[original, rot90, rot180, rot270, hflip, vflip]`.
pub fn augment(g: &ImageGrid) -> Result<Vec<ImageGrid>, DatasetError> {
    if !g.is_square() {
        return Err(DatasetError::NonSquareGrid {
            h: g.height,
            w: g.width,
        });
    }
    let r90 = g.rot90()?;
    let r180 = g.rot180();
    let r270 = g.rot270()?;
    Ok(vec![g.clone(), r90, r180, r270, g.hflip(), g.vflip()])
}

/// Augment every grid sample, preserving labels. Applied to train splits only.
pub fn augment_samples(samples: &[GridSample]) -> Result<Vec<GridSample>, DatasetError> {
    let mut out = Vec::with_capacity(samples.len() * 6);
    for s in samples {
        for grid in augment(&s.grid)? {
            out.push(GridSample { grid, fine: s.fine });
        }
    }
    Ok(out)
}

/// Deterministic grid-to-feature transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "param", rename_all = "lowercase")]
pub enum Featurize {
    /// Row-major flatten; D = H*W*C.
    Flatten,
    /// Mean-pool n x n blocks; D = (H/n)*(W/n)*C.
    Downsample(usize),
    /// Per-channel intensity histogram over [0,1]; D = bins*C, each channel sums to 1.
    Histogram(usize),
}

pub fn featurize(g: &ImageGrid, mode: Featurize) -> Result<FeatureVector, DatasetError> {
    match mode {
        Featurize::Flatten => Ok(g.data().to_vec()),
        Featurize::Downsample(n) => {
            if n == 0 {
                return Err(DatasetError::InvalidMode("downsample factor 0".into()));
            }
            if !g.height.is_multiple_of(n) || !g.width.is_multiple_of(n) {
                return Err(DatasetError::InvalidMode(format!(
                    "downsample factor {n} does not divide {}x{}",
                    g.height, g.width
                )));
            }
            let (oh, ow, c) = (g.height / n, g.width / n, g.channels);
            let norm = 1.0 / (n * n) as f64;
            let mut out = vec![0.0; oh * ow * c];
            for y in 0..oh {
                for x in 0..ow {
                    for ch in 0..c {
                        let mut acc = 0.0;
                        for dy in 0..n {
                            for dx in 0..n {
                                acc += g.get(y * n + dy, x * n + dx, ch);
                            }
                        }
                        out[(y * ow + x) * c + ch] = acc * norm;
                    }
                }
            }
            Ok(out)
        }
        Featurize::Histogram(bins) => {
            if bins == 0 {
                return Err(DatasetError::InvalidMode("histogram with 0 bins".into()));
            }
            let c = g.channels;
            let mut out = vec![0.0; bins * c];
            for y in 0..g.height {
                for x in 0..g.width {
                    for ch in 0..c {
                        let v = g.get(y, x, ch);
                        let bin = ((v * bins as f64) as usize).min(bins - 1);
                        out[ch * bins + bin] += 1.0;
                    }
                }
            }
            let norm = 1.0 / (g.height * g.width) as f64;
            for v in &mut out {
                *v *= norm;
            }
            Ok(out)
        }
    }
}

/// Featurize a set of grid samples, checking dimension consistency.
pub fn featurize_samples(
    samples: &[GridSample],
    mode: Featurize,
) -> Result<Vec<Sample>, DatasetError> {
    let mut out = Vec::with_capacity(samples.len());
    let mut first_dim = None;
    for (i, s) in samples.iter().enumerate() {
        let features = featurize(&s.grid, mode)?;
        match first_dim {
            None => first_dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(DatasetError::DimMismatch {
                    first: d,
                    got: features.len(),
                    index: i,
                })
            }
            _ => {}
        }
        out.push(Sample {
            features,
            fine: s.fine,
        });
    }
    Ok(out)
}

/// Spread of fine-class centers around their coarse center at `overlap = 0`.
const FINE_SCALE: f64 = 10.0;

/// Default feature dimension for the synthetic generator.
pub fn default_dim(taxonomy: &Taxonomy) -> usize {
    (2 * taxonomy.num_coarse()).max(8)
}

/// Gaussian-blob dataset with hierarchical structure: coarse categories get
/// well-separated centers (scaled by `separation`), fine classes get offsets
/// inside their coarse cluster that shrink as `overlap` grows. Unit isotropic
/// noise is added per sample. Deterministic for a fixed seed.
pub fn generate_synthetic(
    taxonomy: &Taxonomy,
    per_class: usize,
    separation: f64,
    overlap: f64,
    seed: u64,
) -> Result<Vec<Sample>, DatasetError> {
    generate_synthetic_dim(
        taxonomy,
        per_class,
        separation,
        overlap,
        default_dim(taxonomy),
        seed,
    )
}

/// [`generate_synthetic`] with an explicit feature dimension.
pub fn generate_synthetic_dim(
    taxonomy: &Taxonomy,
    per_class: usize,
    separation: f64,
    overlap: f64,
    dim: usize,
    seed: u64,
) -> Result<Vec<Sample>, DatasetError> {
    if per_class == 0 {
        return Err(DatasetError::BadParam("per_class must be positive".into()));
    }
    if !separation.is_finite() || separation <= 0.0 {
        return Err(DatasetError::BadParam("separation must be positive".into()));
    }
    if !overlap.is_finite() || overlap < 0.0 {
        return Err(DatasetError::BadParam("overlap must be non-negative".into()));
    }
    if dim == 0 {
        return Err(DatasetError::BadParam("dim must be positive".into()));
    }
    let mut rng = seed::rng(seed::derive(seed, "synthetic"));

    // Coarse directions: orthonormalized when the dimension allows it, so
    // inter-category distances do not depend on luck of the draw.
    let mut coarse_dirs: Vec<Vec<f64>> = Vec::with_capacity(taxonomy.num_coarse());
    for _ in 0..taxonomy.num_coarse() {
        let mut v = gaussian_vec(&mut rng, dim);
        if coarse_dirs.len() < dim {
            for prev in &coarse_dirs {
                let d = dot(&v, prev);
                for (vi, pi) in v.iter_mut().zip(prev) {
                    *vi -= d * pi;
                }
            }
        }
        normalize(&mut v, &mut rng, dim);
        coarse_dirs.push(v);
    }

    // Fine offsets: random unit directions, rejecting near-parallel pairs
    // within the same coarse cluster so classes stay distinct at overlap 0.
    let mut fine_dirs: Vec<Vec<f64>> = Vec::with_capacity(taxonomy.num_fine());
    let mut per_coarse: Vec<Vec<usize>> = vec![Vec::new(); taxonomy.num_coarse()];
    for f in 0..taxonomy.num_fine() {
        let c = taxonomy.coarse_of(f)?;
        let mut v = gaussian_vec(&mut rng, dim);
        normalize(&mut v, &mut rng, dim);
        for _ in 0..200 {
            let ok = per_coarse[c]
                .iter()
                .all(|&g| dot(&v, &fine_dirs[g]).abs() <= 0.3);
            if ok {
                break;
            }
            v = gaussian_vec(&mut rng, dim);
            normalize(&mut v, &mut rng, dim);
        }
        per_coarse[c].push(f);
        fine_dirs.push(v);
    }

    let fine_radius = FINE_SCALE / (1.0 + overlap);
    let mut samples = Vec::with_capacity(per_class * taxonomy.num_fine());
    for f in 0..taxonomy.num_fine() {
        let c = taxonomy.coarse_of(f)?;
        let center: Vec<f64> = (0..dim)
            .map(|i| separation * coarse_dirs[c][i] + fine_radius * fine_dirs[f][i])
            .collect();
        for _ in 0..per_class {
            let features: Vec<f64> = center
                .iter()
                .map(|&m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            samples.push(Sample { features, fine: f });
        }
    }
    Ok(samples)
}

fn gaussian_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalize(v: &mut Vec<f64>, rng: &mut impl Rng, dim: usize) {
    loop {
        let norm = dot(v, v).sqrt();
        if norm > 1e-9 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            return;
        }
        *v = gaussian_vec(rng, dim);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Label-carrier samples for table backends: `features = [fine_id, ordinal]`.
/// The first entry tells a table pseudo-classifier the true label of the
/// sample; the second makes every sample a distinct input so repeated inputs
/// stay deterministic while distinct samples draw independently.
pub fn carrier_samples(taxonomy: &Taxonomy, per_class: usize) -> Vec<Sample> {
    let mut samples = Vec::with_capacity(per_class * taxonomy.num_fine());
    let mut ordinal = 0u64;
    for f in 0..taxonomy.num_fine() {
        for _ in 0..per_class {
            samples.push(Sample {
                features: vec![f as f64, ordinal as f64],
                fine: f,
            });
            ordinal += 1;
        }
    }
    samples
}

/// One fold of a stratified k-fold split. Index lists refer to positions in
/// the original sample slice, are pairwise disjoint, and together cover it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold split. Per fine class the shuffled order is fixed once;
/// fold i takes the i-th contiguous chunk as test and fills train/val from
/// the rest, so test sets are rotations of one partition. Per-class counts
/// must divide exactly into the requested fractions.
pub fn kfold_split(
    samples: &[Sample],
    taxonomy: &Taxonomy,
    k: usize,
    train_frac: f64,
    val_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<Vec<FoldSplit>, DatasetError> {
    let fracs = [train_frac, val_frac, test_frac];
    if k < 2 {
        return Err(DatasetError::BadParam("k must be at least 2".into()));
    }
    if fracs.iter().any(|f| *f < 0.0) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadFractions(fracs));
    }
    if test_frac <= 0.0 {
        return Err(DatasetError::BadParam("test fraction must be positive".into()));
    }

    let mut by_class: BTreeMap<FineId, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        if s.fine >= taxonomy.num_fine() {
            return Err(TaxonomyError::FineOutOfRange(s.fine, taxonomy.num_fine()).into());
        }
        by_class.entry(s.fine).or_default().push(i);
    }
    if by_class.is_empty() {
        return Err(DatasetError::NoSamples("input sample list".into()));
    }

    let mut rng = seed::rng(seed::derive(seed, "kfold"));
    let mut folds: Vec<FoldSplit> = (0..k)
        .map(|fold_index| FoldSplit {
            fold_index,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        })
        .collect();

    for (&fine, indices) in &by_class {
        let n = indices.len();
        let label = taxonomy.fine_labels()[fine].name.clone();
        let t = whole_part(n, test_frac, &label, "test")?;
        let tr = whole_part(n, train_frac, &label, "train")?;
        let v = whole_part(n, val_frac, &label, "val")?;
        debug_assert_eq!(t + tr + v, n);
        if t == 0 || k * t > n {
            return Err(DatasetError::ClassTooSmall {
                label,
                n,
                k,
                per_fold: t.max(1),
            });
        }
        let mut order = indices.clone();
        order.shuffle(&mut rng);
        for fold in folds.iter_mut() {
            let start = fold.fold_index * t;
            let test_chunk = &order[start..start + t];
            fold.test.extend_from_slice(test_chunk);
            let rest: Vec<usize> = order[..start]
                .iter()
                .chain(&order[start + t..])
                .copied()
                .collect();
            fold.train.extend_from_slice(&rest[..tr]);
            fold.val.extend_from_slice(&rest[tr..tr + v]);
        }
    }

    for fold in &mut folds {
        fold.train.sort_unstable();
        fold.val.sort_unstable();
        fold.test.sort_unstable();
    }
    Ok(folds)
}

fn whole_part(n: usize, frac: f64, label: &str, part: &'static str) -> Result<usize, DatasetError> {
    let exact = n as f64 * frac;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-6 {
        return Err(DatasetError::Indivisible {
            label: label.to_string(),
            n,
            frac,
            part,
        });
    }
    Ok(rounded as usize)
}

/// Load samples from CSV with header `f0,...,fD-1,label`; labels are fine
/// class names resolved against the taxonomy. Row order is preserved.
pub fn load_csv(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Vec<Sample>, DatasetError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })?;

    let header = reader
        .headers()
        .map_err(|e| DatasetError::CsvRow { row: 0, msg: e.to_string() })?
        .clone();
    let cols = header.len();
    if cols < 2 || header.iter().next_back() != Some("label") {
        return Err(DatasetError::CsvHeader(header.iter().collect::<Vec<_>>().join(",")));
    }
    let dim = cols - 1;
    for (i, name) in header.iter().take(dim).enumerate() {
        if name != format!("f{i}") {
            return Err(DatasetError::CsvHeader(header.iter().collect::<Vec<_>>().join(",")));
        }
    }

    let mut samples = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| DatasetError::CsvRow { row, msg: e.to_string() })?;
        if record.len() != cols {
            return Err(DatasetError::RaggedRow {
                row,
                expected: dim,
                got: record.len().saturating_sub(1),
            });
        }
        let mut features = Vec::with_capacity(dim);
        for j in 0..dim {
            let v: f64 = record[j].trim().parse().map_err(|_| DatasetError::CsvRow {
                row,
                msg: format!("column f{j} is not a number: {:?}", &record[j]),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::CsvRow {
                    row,
                    msg: format!("column f{j} is not finite"),
                });
            }
            features.push(v);
        }
        let fine = taxonomy.fine_by_name(record[dim].trim())?;
        samples.push(Sample { features, fine });
    }
    if samples.is_empty() {
        return Err(DatasetError::NoSamples(path.display().to_string()));
    }
    Ok(samples)
}

/// Write samples in the CSV format accepted by [`load_csv`].
pub fn save_csv(
    path: impl AsRef<Path>,
    samples: &[Sample],
    taxonomy: &Taxonomy,
) -> Result<(), DatasetError> {
    let path = path.as_ref();
    if samples.is_empty() {
        return Err(DatasetError::NoSamples("empty sample list".into()));
    }
    let dim = samples[0].features.len();
    let io_err = |e: std::io::Error| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut out = String::new();
    for i in 0..dim {
        out.push_str(&format!("f{i},"));
    }
    out.push_str("label\n");
    for (i, s) in samples.iter().enumerate() {
        if s.features.len() != dim {
            return Err(DatasetError::DimMismatch {
                first: dim,
                got: s.features.len(),
                index: i,
            });
        }
        for v in &s.features {
            // Shortest round-trip float formatting keeps save/load bit-exact.
            out.push_str(&format!("{v},"));
        }
        out.push_str(taxonomy.fine_name(s.fine));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err)
}

/// Load grid samples from a directory laid out as `<fine-name>/*.png`.
/// Sub-directory names must resolve to fine labels; 8-bit grayscale and RGB
/// PNGs are accepted and normalized to [0,1]. Entries are visited in sorted
/// order so ingestion is deterministic.
pub fn load_image_dir(
    path: impl AsRef<Path>,
    taxonomy: &Taxonomy,
) -> Result<Vec<GridSample>, DatasetError> {
    let root = path.as_ref();
    let io_err = |p: &Path, e: std::io::Error| DatasetError::Io {
        path: p.display().to_string(),
        source: e,
    };
    let mut dirs: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| io_err(root, e))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| io_err(root, e))?
        .into_iter()
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    dirs.sort();

    let mut samples = Vec::new();
    for dir in dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        let fine = taxonomy.fine_by_name(&name)?;
        let mut files: Vec<_> = std::fs::read_dir(&dir)
            .map_err(|e| io_err(&dir, e))?
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| io_err(&dir, e))?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| {
                p.extension()
                    .map(|x| x.eq_ignore_ascii_case("png"))
                    .unwrap_or(false)
            })
            .collect();
        files.sort();
        for file in files {
            let grid = load_png(&file)?;
            samples.push(GridSample { grid, fine });
        }
    }
    if samples.is_empty() {
        return Err(DatasetError::NoSamples(root.display().to_string()));
    }
    Ok(samples)
}

fn load_png(path: &Path) -> Result<ImageGrid, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::Image {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (raw, channels): (Vec<u8>, usize) = match img {
        image::DynamicImage::ImageLuma8(g) => (g.into_raw(), 1),
        other => (other.to_rgb8().into_raw(), 3),
    };
    let data: Vec<f64> = raw.iter().map(|&b| f64::from(b) / 255.0).collect();
    ImageGrid::new(h, w, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tax_2x2() -> Taxonomy {
        Taxonomy::new(&[("A", vec!["a0", "a1"]), ("B", vec!["b0", "b1"])]).unwrap()
    }

    fn grid_from(vals: &[f64], n: usize) -> ImageGrid {
        ImageGrid::new(n, n, 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn rot90_clockwise_permutation() {
        // Hand-derived index permutation for [[a,b],[c,d]]: the left column
        // read bottom-up becomes the top row, so rot90 = [[c,a],[d,b]].
        let (a, b, c, d) = (0.1, 0.2, 0.3, 0.4);
        let g = grid_from(&[a, b, c, d], 2);
        assert_eq!(g.rot90().unwrap().data(), &[c, a, d, b]);
    }

    #[test]
    fn augment_yields_six_variants_in_order() {
        let g = grid_from(&[0.1, 0.2, 0.3, 0.4], 2);
        let out = augment(&g).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(out[0], g);
        assert_eq!(out[1], g.rot90().unwrap());
        assert_eq!(out[2], g.rot180());
        assert_eq!(out[3], g.rot270().unwrap());
        assert_eq!(out[4], g.hflip());
        assert_eq!(out[5], g.vflip());
    }

    #[test]
    fn augment_rejects_non_square() {
        let g = ImageGrid::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            augment(&g),
            Err(DatasetError::NonSquareGrid { h: 1, w: 2 })
        ));
    }

    #[test]
    fn featurize_flatten_preserves_row_major_order() {
        let g = grid_from(&[0.1, 0.2, 0.3, 0.4], 2);
        assert_eq!(featurize(&g, Featurize::Flatten).unwrap(), vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn featurize_histogram_of_zero_grid() {
        let g = ImageGrid::new(4, 4, 1, vec![0.0; 16]).unwrap();
        let f = featurize(&g, Featurize::Histogram(4)).unwrap();
        assert_eq!(f, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn featurize_downsample_constant() {
        let g = ImageGrid::new(4, 4, 1, vec![0.25; 16]).unwrap();
        let f = featurize(&g, Featurize::Downsample(2)).unwrap();
        assert_eq!(f.len(), 4);
        assert!(f.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn featurize_invalid_modes() {
        let g = grid_from(&[0.0; 4], 2);
        assert!(matches!(
            featurize(&g, Featurize::Downsample(0)),
            Err(DatasetError::InvalidMode(_))
        ));
        assert!(matches!(
            featurize(&g, Featurize::Histogram(0)),
            Err(DatasetError::InvalidMode(_))
        ));
        assert!(matches!(
            featurize(&g, Featurize::Downsample(3)),
            Err(DatasetError::InvalidMode(_))
        ));
    }

    #[test]
    fn synthetic_is_deterministic_and_sized() {
        let tax = tax_2x2();
        let a = generate_synthetic(&tax, 10, 5.0, 0.5, 42).unwrap();
        let b = generate_synthetic(&tax, 10, 5.0, 0.5, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10 * tax.num_fine());
        let c = generate_synthetic(&tax, 10, 5.0, 0.5, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_at_full_dataset_scale() {
        let tax = crate::taxonomy::Taxonomy::nw45();
        let samples = generate_synthetic(&tax, 700, 15.0, 1.0, 1).unwrap();
        assert_eq!(samples.len(), 700 * 44);
        assert_eq!(samples[0].features.len(), default_dim(&tax));
    }

    #[test]
    fn synthetic_rejects_bad_params() {
        let tax = tax_2x2();
        assert!(generate_synthetic(&tax, 0, 5.0, 0.0, 1).is_err());
        assert!(generate_synthetic(&tax, 5, 0.0, 0.0, 1).is_err());
        assert!(generate_synthetic(&tax, 5, 1.0, -0.1, 1).is_err());
    }

    #[test]
    fn kfold_five_fold_448_112_140_protocol() {
        let tax = Taxonomy::new(&[("c", vec!["x", "y"])]).unwrap();
        let samples = carrier_samples(&tax, 700);
        let folds = kfold_split(&samples, &tax, 5, 0.64, 0.16, 0.20, 9).unwrap();
        assert_eq!(folds.len(), 5);
        for fold in &folds {
            assert_eq!(fold.train.len(), 448 * 2);
            assert_eq!(fold.val.len(), 112 * 2);
            assert_eq!(fold.test.len(), 140 * 2);
            let mut all: Vec<usize> = fold
                .train
                .iter()
                .chain(&fold.val)
                .chain(&fold.test)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..1400).collect::<Vec<_>>());
        }
    }

    #[test]
    fn kfold_minimal_counts() {
        let tax = Taxonomy::new(&[("c", vec!["x"])]).unwrap();
        let samples = carrier_samples(&tax, 5);
        let folds = kfold_split(&samples, &tax, 5, 0.6, 0.2, 0.2, 1).unwrap();
        for fold in &folds {
            assert_eq!(fold.test.len(), 1);
        }
        // Test chunks rotate through all 5 samples.
        let mut tests: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        tests.sort_unstable();
        assert_eq!(tests, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn kfold_rejects_bad_inputs() {
        let tax = Taxonomy::new(&[("c", vec!["x"])]).unwrap();
        let samples = carrier_samples(&tax, 10);
        assert!(matches!(
            kfold_split(&samples, &tax, 5, 0.5, 0.2, 0.2, 1),
            Err(DatasetError::BadFractions(_))
        ));
        // 10 samples cannot host 5 disjoint test folds of 30% each.
        assert!(kfold_split(&samples, &tax, 5, 0.4, 0.3, 0.3, 1).is_err());
        // 7 per class does not divide into 20% test.
        let seven = carrier_samples(&tax, 7);
        assert!(matches!(
            kfold_split(&seven, &tax, 5, 0.6, 0.2, 0.2, 1),
            Err(DatasetError::Indivisible { .. })
        ));
    }

    #[test]
    fn csv_round_trip_and_taxonomy_join() {
        let tax = Taxonomy::nw45();
        let river = tax.fine_by_name("river").unwrap();
        let bridge = tax.fine_by_name("bridge").unwrap();
        let samples = vec![
            Sample { features: vec![0.5, -1.25], fine: river },
            Sample { features: vec![1.0, 2.0], fine: bridge },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_csv(&path, &samples, &tax).unwrap();
        let back = load_csv(&path, &tax).unwrap();
        assert_eq!(back, samples);
        let coarse: Vec<&str> = back
            .iter()
            .map(|s| tax.coarse_name(tax.coarse_of(s.fine).unwrap()))
            .collect();
        assert_eq!(coarse, vec!["Water Areas", "Transportation"]);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let tax = tax_2x2();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f0,f1,label\n1.0,2.0,a0\n3.0,b0\n").unwrap();
        match load_csv(&path, &tax) {
            Err(DatasetError::RaggedRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected ragged row error, got {other:?}"),
        }
        std::fs::write(&path, "f0,f1,label\n1.0,2.0,mystery\n").unwrap();
        assert!(matches!(
            load_csv(&path, &tax),
            Err(DatasetError::Taxonomy(TaxonomyError::UnknownFine(_)))
        ));
    }

    #[test]
    fn empty_image_dir_is_an_error() {
        let tax = tax_2x2();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image_dir(dir.path(), &tax),
            Err(DatasetError::NoSamples(_))
        ));
    }

    #[test]
    fn image_dir_round_trip() {
        let tax = tax_2x2();
        let dir = tempfile::tempdir().unwrap();
        let class_dir = dir.path().join("a1");
        std::fs::create_dir(&class_dir).unwrap();
        let img = image::GrayImage::from_fn(4, 4, |x, y| image::Luma([(16 * (y * 4 + x)) as u8]));
        img.save(class_dir.join("s0.png")).unwrap();
        let samples = load_image_dir(dir.path(), &tax).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].fine, tax.fine_by_name("a1").unwrap());
        let g = &samples[0].grid;
        assert_eq!((g.height, g.width, g.channels), (4, 4, 1));
        assert!((g.get(0, 1, 0) - 16.0 / 255.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn augment_group_laws(n in 2usize..6, seed in 0u64..1000) {
            let mut rng = seed::rng(seed);
            let data: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
            let g = grid_from(&data, n);
            let r1 = g.rot90().unwrap();
            let r2 = r1.rot90().unwrap();
            let r3 = r2.rot90().unwrap();
            let r4 = r3.rot90().unwrap();
            prop_assert_eq!(&r4, &g);
            prop_assert_eq!(&r2, &g.rot180());
            prop_assert_eq!(&g.hflip().hflip(), &g);
            prop_assert_eq!(&g.vflip().vflip(), &g);
            prop_assert_eq!(&g.hflip().rot180(), &g.vflip());
        }

        #[test]
        fn augment_variants_distinct_on_generic_grid(n in 2usize..6) {
            // All-distinct pixels make the six index permutations distinct.
            let data: Vec<f64> = (0..n * n).map(|i| i as f64 / (n * n) as f64).collect();
            let g = grid_from(&data, n);
            let out = augment(&g).unwrap();
            for i in 0..out.len() {
                for j in (i + 1)..out.len() {
                    prop_assert_ne!(&out[i], &out[j]);
                }
            }
        }

        #[test]
        fn kfold_test_sets_rotate_disjointly(per_class in 1usize..5, k in 2usize..5, seed in 0u64..100) {
            let tax = tax_2x2();
            let n = per_class * k; // make counts divide evenly
            let samples = carrier_samples(&tax, n);
            let test_frac = 1.0 / k as f64;
            let rest = 1.0 - test_frac;
            let folds = kfold_split(&samples, &tax, k, rest, 0.0, test_frac, seed).unwrap();
            let mut seen = std::collections::HashSet::new();
            for fold in &folds {
                prop_assert_eq!(fold.test.len(), per_class * tax.num_fine());
                for &i in &fold.test {
                    prop_assert!(seen.insert(i), "test sets overlap at {}", i);
                }
            }
            prop_assert_eq!(seen.len(), samples.len());
        }

        #[test]
        fn histogram_sums_to_one_per_channel(bins in 1usize..8, seed in 0u64..100) {
            let mut rng = seed::rng(seed);
            let data: Vec<f64> = (0..4 * 4 * 2).map(|_| rng.random::<f64>()).collect();
            let g = ImageGrid::new(4, 4, 2, data).unwrap();
            let f = featurize(&g, Featurize::Histogram(bins)).unwrap();
            for ch in 0..2 {
                let s: f64 = f[ch * bins..(ch + 1) * bins].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }
}

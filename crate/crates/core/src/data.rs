//! Dataset plumbing: seeded train/val/test directory splits, class
//! discovery, grayscale image loading with 1/255 rescale, and deterministic
//! batching with one-hot labels.
//!
//! Classes are the subdirectory names of a dataset root, ordered
//! byte-lexicographically; a class's index is its sort position and one-hot
//! labels follow that order everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::render::resize_plane;
use crate::tensor::Tensor;

/// Split ratios plus the shuffle seed.
#[derive(Clone, Copy, Debug)]
pub struct SplitSpec {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl SplitSpec {
    /// Ratios must be non-negative and sum to 1 within 1e-9.
    pub fn new(ratios: (f64, f64, f64), seed: u64) -> Result<SplitSpec> {
        let (a, b, c) = ratios;
        if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::BadRatios(ratios));
        }
        Ok(SplitSpec { ratios, seed })
    }
}

/// Per-class file counts produced by [`split_folders`], ordered train /
/// val / test per class.
#[derive(Clone, Debug)]
pub struct SplitCounts {
    pub classes: Vec<String>,
    pub per_class: Vec<[usize; 3]>,
}

impl SplitCounts {
    /// Total train / val / test sizes across classes.
    pub fn totals(&self) -> [usize; 3] {
        let mut t = [0; 3];
        for row in &self.per_class {
            for k in 0..3 {
                t[k] += row[k];
            }
        }
        t
    }
}

/// List the class subdirectories of `dir`, sorted byte-lexicographically.
pub fn discover_classes(dir: &Path) -> Result<Vec<String>> {
    let entries =
        fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    let mut classes = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
        if entry
            .file_type()
            .map_err(|e| Error::io(format!("inspecting {}", entry.path().display()), e))?
            .is_dir()
        {
            classes.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    if classes.is_empty() {
        return Err(Error::NoClasses(dir.to_path_buf()));
    }
    classes.sort();
    Ok(classes)
}

/// Sorted regular files directly inside `dir`.
fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries =
        fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
        if entry
            .file_type()
            .map_err(|e| Error::io(format!("inspecting {}", entry.path().display()), e))?
            .is_file()
        {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

/// Split a `src/<class>/<file>` tree into `dst/{train,val,test}/<class>/`.
///
/// Per class of size n: shuffle deterministically, send the first
/// floor(n*r_train) files to train, the next floor(n*r_val) to val, and the
/// remainder to test. Filenames are preserved; one ChaCha8 stream seeded
/// from `spec.seed` drives every class in lexicographic order, so a seed
/// fully determines the assignment.
pub fn split_folders(src: &Path, dst: &Path, spec: &SplitSpec) -> Result<SplitCounts> {
    let classes = discover_classes(src)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut per_class = Vec::with_capacity(classes.len());
    const SUBSETS: [&str; 3] = ["train", "val", "test"];

    for class in &classes {
        let mut files = list_files(&src.join(class))?;
        if files.is_empty() {
            return Err(Error::EmptyClass(class.clone()));
        }
        files.shuffle(&mut rng);

        let n = files.len();
        let n_train = (n as f64 * spec.ratios.0).floor() as usize;
        let n_val = (n as f64 * spec.ratios.1).floor() as usize;
        let counts = [n_train, n_val, n - n_train - n_val];

        let mut start = 0;
        for (subset, &count) in SUBSETS.iter().zip(&counts) {
            let out_dir = dst.join(subset).join(class);
            fs::create_dir_all(&out_dir)
                .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
            for file in &files[start..start + count] {
                let name = file.file_name().expect("listed files have names");
                let target = out_dir.join(name);
                if target.exists() {
                    return Err(Error::DestinationCollision(target));
                }
                fs::copy(file, &target).map_err(|e| {
                    Error::io(
                        format!("copying {} to {}", file.display(), target.display()),
                        e,
                    )
                })?;
            }
            start += count;
        }
        per_class.push(counts);
    }
    Ok(SplitCounts {
        classes,
        per_class,
    })
}

/// An on-disk dataset: `(path, class_index)` samples plus the ordered
/// class-name list. Samples are ordered by class, then by filename.
#[derive(Clone, Debug)]
pub struct DatasetIndex {
    pub samples: Vec<(PathBuf, usize)>,
    pub classes: Vec<String>,
}

impl DatasetIndex {
    /// Index a `dir/<class>/<file>` tree.
    pub fn from_dir(dir: &Path) -> Result<DatasetIndex> {
        let classes = discover_classes(dir)?;
        let mut samples = Vec::new();
        for (idx, class) in classes.iter().enumerate() {
            for path in list_files(&dir.join(class))? {
                samples.push((path, idx));
            }
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no image files under {}",
                dir.display()
            )));
        }
        Ok(DatasetIndex { samples, classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Decode an image to single-channel luminance, resize bilinearly to the
/// target if needed, and scale values to [0,1]. Grayscale sources pass
/// through; color sources are converted with the standard luma weights
/// 0.299/0.587/0.114.
pub fn load_grayscale_image(path: &Path, target_h: usize, target_w: usize) -> Result<Tensor> {
    let reader = image::io::Reader::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?
        .with_guessed_format()
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let img = reader.decode().map_err(|source| Error::ImageDecode {
        path: path.to_path_buf(),
        source,
    })?;

    // Luminance plane holding 0-255 levels as f32.
    let (h, w, plane) = match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            (h, w, g.into_raw().iter().map(|&p| p as f32).collect::<Vec<_>>())
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let plane = rgb
                .pixels()
                .map(|p| {
                    (p.0[0] as f64 * 0.299 + p.0[1] as f64 * 0.587 + p.0[2] as f64 * 0.114) as f32
                })
                .collect();
            (h, w, plane)
        }
    };

    let plane = if (h, w) == (target_h, target_w) {
        plane
    } else {
        resize_plane(&plane, (h, w), (target_h, target_w))
    };
    let scaled: Vec<f32> = plane.iter().map(|v| v / 255.0).collect();
    Tensor::new(&[target_h, target_w, 1], scaled)
}

/// One loaded batch: stacked images, one-hot labels, and the label indices.
pub struct Batch {
    pub x: Tensor,
    pub onehot: Tensor,
    pub labels: Vec<usize>,
}

/// Load the given samples (by index) into a batch, decoding in parallel but
/// assembling in the given order.
pub fn load_batch(
    ds: &DatasetIndex,
    indices: &[usize],
    target_h: usize,
    target_w: usize,
) -> Result<Batch> {
    let images: Vec<Tensor> = indices
        .par_iter()
        .map(|&i| load_grayscale_image(&ds.samples[i].0, target_h, target_w))
        .collect::<Result<_>>()?;
    let b = indices.len();
    let k = ds.num_classes();
    let mut x = Vec::with_capacity(b * target_h * target_w);
    for img in &images {
        x.extend_from_slice(img.data());
    }
    let mut onehot = vec![0.0f32; b * k];
    let mut labels = Vec::with_capacity(b);
    for (row, &i) in indices.iter().enumerate() {
        let label = ds.samples[i].1;
        onehot[row * k + label] = 1.0;
        labels.push(label);
    }
    Ok(Batch {
        x: Tensor::new(&[b, target_h, target_w, 1], x)?,
        onehot: Tensor::new(&[b, k], onehot)?,
        labels,
    })
}

/// Sample order for one epoch: a ChaCha8 shuffle of 0..n when a seed is
/// given, identity order otherwise (evaluation).
pub fn epoch_order(n: usize, seed: Option<u64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}

/// Lazy batch sequence over a dataset: a deterministic per-epoch shuffle
/// chunked by `batch_size` (the final batch may be smaller), loading images
/// on demand. Every sample appears exactly once per epoch.
pub struct Batches<'a> {
    ds: &'a DatasetIndex,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
    target: (usize, usize),
}

/// Iterate a dataset in deterministic shuffled batches for one epoch.
pub fn batches(
    ds: &DatasetIndex,
    batch_size: usize,
    epoch_seed: u64,
    target: (usize, usize),
) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".to_string()));
    }
    Ok(Batches {
        ds,
        order: epoch_order(ds.len(), Some(epoch_seed)),
        batch_size,
        cursor: 0,
        target,
    })
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Result<Batch>> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let slice = &self.order[self.cursor..end];
        self.cursor = end;
        Some(load_batch(self.ds, slice, self.target.0, self.target.1))
    }
}

//! Synthetic imbalanced segmentation tasks, dataset files, and class-aware
//! patch sampling.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::policy::PatchClass;
use crate::rng::{stream_rng, Stream};
use crate::tensor::{LabelMap, Tensor};
use crate::transforms::kernels;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn id(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

/// Distribution shift applied to validation and test images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shift {
    /// Added to every pixel.
    pub intensity_bias: f32,
    /// Multiplies every pixel.
    pub contrast_scale: f32,
    /// Added to the mean orientation of foreground blobs, in degrees.
    pub rotation_bias: f32,
}

impl Shift {
    pub const NONE: Shift = Shift {
        intensity_bias: 0.0,
        contrast_scale: 1.0,
        rotation_bias: 0.0,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub size: usize,
    pub classes: usize,
    /// Target fraction of foreground pixels.
    pub prevalence: f64,
    /// Standard deviation of the background texture.
    pub texture_sigma: f32,
    /// Correlation length of the texture, in pixels.
    pub texture_scale: f32,
    /// Mean intensity step of class `k` blobs is `k * fg_contrast`.
    pub fg_contrast: f32,
    /// Elongation range of the elliptical blobs (major / minor axis).
    pub aspect: (f64, f64),
    /// Half-width of the blob orientation distribution, in degrees.
    pub orientation_spread: f64,
    /// Target area of one foreground blob in pixels; sets the blob count.
    pub blob_area: f64,
    /// Bright non-target blobs per image (same brightness, round, smaller).
    pub distractors: usize,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub shift: Shift,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            size: 96,
            classes: 2,
            prevalence: 0.02,
            texture_sigma: 0.3,
            texture_scale: 1.5,
            fg_contrast: 1.0,
            aspect: (1.5, 2.5),
            orientation_spread: 20.0,
            blob_area: 60.0,
            distractors: 0,
            train_count: 40,
            val_count: 10,
            test_count: 20,
            shift: Shift {
                intensity_bias: 0.3,
                contrast_scale: 1.25,
                rotation_bias: 60.0,
            },
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.prevalence > 0.0 && self.prevalence <= 0.5) {
            return Err(Error::Config(format!("prevalence must lie in (0, 0.5], got {}", self.prevalence)));
        }
        if self.classes < 2 || self.classes > 255 {
            return Err(Error::Config(format!("classes must lie in [2, 255], got {}", self.classes)));
        }
        if self.size < 8 {
            return Err(Error::Config(format!("image size {} is below the minimum of 8", self.size)));
        }
        if !(self.blob_area > 0.0) {
            return Err(Error::Config(format!("blob_area must be positive, got {}", self.blob_area)));
        }
        if self.train_count == 0 || self.val_count == 0 || self.test_count == 0 {
            return Err(Error::Config("every split needs at least one image".into()));
        }
        if !(self.aspect.0 >= 1.0 && self.aspect.1 >= self.aspect.0) {
            return Err(Error::Config(format!("aspect range {:?} must satisfy 1 <= lo <= hi", self.aspect)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub split: Split,
    pub classes: usize,
    /// Each `[1, H, W]`.
    pub images: Vec<Tensor>,
    pub labels: Vec<LabelMap>,
}

impl Dataset {
    pub fn new(split: Split, classes: usize, images: Vec<Tensor>, labels: Vec<LabelMap>) -> Result<Self> {
        let d = Dataset {
            split,
            classes,
            images,
            labels,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.first().map_or((0, 0), |l| (l.height, l.width))
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} label maps",
                self.images.len(),
                self.labels.len()
            )));
        }
        let (h, w) = self.dims();
        let mut bad = Vec::new();
        for (i, (img, lab)) in self.images.iter().zip(&self.labels).enumerate() {
            if img.shape() != [1, h, w] || (lab.height, lab.width) != (h, w) {
                return Err(Error::Shape {
                    expected: vec![1, h, w],
                    got: img.shape().to_vec(),
                    context: "dataset image",
                });
            }
            bad.extend(lab.out_of_range(self.classes).into_iter().map(|p| i * h * w + p));
        }
        if !bad.is_empty() {
            bad.truncate(16);
            return Err(Error::LabelRange {
                classes: self.classes,
                indices: bad,
            });
        }
        Ok(())
    }

    pub fn foreground_fraction(&self) -> f64 {
        let total: usize = self.labels.iter().map(|l| l.data.len()).sum();
        let fg: usize = self.labels.iter().map(|l| l.data.iter().filter(|&&v| v != 0).count()).sum();
        fg as f64 / total.max(1) as f64
    }
}

/// Smooth random field with unit-ish variance.
fn texture(rng: &mut impl Rng, size: usize, scale: f32) -> Vec<f32> {
    let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
    let white: Vec<f32> = (0..size * size).map(|_| normal.sample(rng)).collect();
    let smooth = kernels::gaussian_blur(&white, size, size, scale as f64);
    let var = smooth.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / smooth.len() as f64;
    let k = (1.0 / var.sqrt().max(1e-9)) as f32;
    smooth.into_iter().map(|v| v * k).collect()
}

struct Blob {
    cy: f64,
    cx: f64,
    major: f64,
    minor: f64,
    angle: f64,
    class: u8,
}

impl Blob {
    /// Normalized elliptical radius; below one is inside.
    fn radius(&self, y: f64, x: f64) -> f64 {
        let (s, c) = self.angle.to_radians().sin_cos();
        let (dx, dy) = (x - self.cx, self.cy - y);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        ((u / self.major).powi(2) + (v / self.minor).powi(2)).sqrt()
    }
}

fn generate_image(spec: &TaskSpec, shift: Shift, seed: u64, split: Split, index: u64) -> (Tensor, LabelMap) {
    let n = spec.size;
    let mut rng = stream_rng(seed, Stream::Task, split.id(), index);
    let tex = texture(&mut rng, n, spec.texture_scale);
    let mut img: Vec<f32> = tex.iter().map(|&t| t * spec.texture_sigma).collect();
    let mut labels = vec![0u8; n * n];

    let area = spec.prevalence * (n * n) as f64;
    let count = ((area / spec.blob_area).round() as usize).max(1);
    let mut blobs = Vec::new();
    for _ in 0..count {
        let a = area / count as f64;
        let aspect = rng.random_range(spec.aspect.0..=spec.aspect.1);
        let minor = (a / (std::f64::consts::PI * aspect)).sqrt();
        let major = minor * aspect;
        let margin = major + 2.0;
        let lo = margin.min(n as f64 / 2.0);
        let hi = (n as f64 - margin).max(lo + 1e-6);
        let angle = shift.rotation_bias as f64 + rng.random_range(-spec.orientation_spread..=spec.orientation_spread);
        let class = rng.random_range(1..spec.classes) as u8;
        blobs.push(Blob {
            cy: rng.random_range(lo..hi),
            cx: rng.random_range(lo..hi),
            major,
            minor,
            angle,
            class,
        });
    }
    let mut distractors = Vec::new();
    for _ in 0..spec.distractors {
        let r = (area / count as f64 / std::f64::consts::PI).sqrt() * 0.6;
        distractors.push(Blob {
            cy: rng.random_range(r + 1.0..n as f64 - r - 1.0),
            cx: rng.random_range(r + 1.0..n as f64 - r - 1.0),
            major: r,
            minor: r,
            angle: 0.0,
            class: 0,
        });
    }
    for y in 0..n {
        for x in 0..n {
            let p = y * n + x;
            for b in blobs.iter().chain(&distractors) {
                let r = b.radius(y as f64, x as f64);
                // soft edge about one pixel wide
                let edge = 1.0 / (1.0 + ((r - 1.0) * b.minor / 0.7).exp());
                let step = if b.class == 0 { 1.0 } else { b.class as f64 };
                img[p] += (edge * step * spec.fg_contrast as f64) as f32;
                if b.class != 0 && r < 1.0 {
                    labels[p] = b.class;
                }
            }
        }
    }
    for v in &mut img {
        *v = *v * shift.contrast_scale + shift.intensity_bias;
    }
    (
        Tensor::new(vec![1, n, n], img).expect("square image"),
        LabelMap::new(n, n, labels).expect("square labels"),
    )
}

fn generate_split(spec: &TaskSpec, seed: u64, split: Split, count: usize) -> Dataset {
    let shift = if split == Split::Train { Shift::NONE } else { spec.shift };
    let (images, labels) = (0..count as u64).map(|i| generate_image(spec, shift, seed, split, i)).unzip();
    Dataset {
        split,
        classes: spec.classes,
        images,
        labels,
    }
}

/// Generates (train, val, test). Validation and test share the shifted distribution.
pub fn gen_task(spec: &TaskSpec, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    Ok((
        generate_split(spec, seed, Split::Train, spec.train_count),
        generate_split(spec, seed, Split::Val, spec.val_count),
        generate_split(spec, seed, Split::Test, spec.test_count),
    ))
}

/// Patches with their centre-pixel class tags.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBatch {
    /// Each `[1, p, p]`.
    pub images: Vec<Tensor>,
    pub labels: Vec<LabelMap>,
    pub classes: Vec<PatchClass>,
    /// `(image index, centre y, centre x)`
    pub origins: Vec<(usize, usize, usize)>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Extracts the `size x size` window whose index `size / 2` sits on `(cy, cx)`, zero padded.
pub fn extract_patch(image: &Tensor, labels: &LabelMap, cy: usize, cx: usize, size: usize) -> (Tensor, LabelMap) {
    let (h, w) = (labels.height, labels.width);
    let mut pi = vec![0.0f32; size * size];
    let mut pl = vec![0u8; size * size];
    let half = (size / 2) as isize;
    for py in 0..size {
        let sy = cy as isize + py as isize - half;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        for px in 0..size {
            let sx = cx as isize + px as isize - half;
            if sx < 0 || sx >= w as isize {
                continue;
            }
            let s = sy as usize * w + sx as usize;
            pi[py * size + px] = image.data()[s];
            pl[py * size + px] = labels.data[s];
        }
    }
    (
        Tensor::new(vec![1, size, size], pi).expect("patch shape"),
        LabelMap::new(size, size, pl).expect("patch shape"),
    )
}

/// Foreground pixel coordinates of a dataset, precomputed for sampling.
#[derive(Clone, Debug)]
pub struct PatchSampler {
    fg: Vec<(usize, usize, usize)>,
    patch: usize,
}

impl PatchSampler {
    pub fn new(dataset: &Dataset, patch: usize) -> Result<Self> {
        let (h, w) = dataset.dims();
        if patch == 0 || patch > h || patch > w {
            return Err(Error::Config(format!("patch size {patch} does not fit images of {h}x{w}")));
        }
        let mut fg = Vec::new();
        for (i, l) in dataset.labels.iter().enumerate() {
            for (p, &v) in l.data.iter().enumerate() {
                if v != 0 {
                    fg.push((i, p / w, p % w));
                }
            }
        }
        Ok(PatchSampler { fg, patch })
    }

    /// `round(n * fg_fraction)` foreground-centred patches first, then background-centred ones.
    pub fn sample<R: Rng + ?Sized>(&self, dataset: &Dataset, n: usize, fg_fraction: f64, rng: &mut R) -> Result<PatchBatch> {
        if !(0.0..=1.0).contains(&fg_fraction) {
            return Err(Error::Config(format!("fg_fraction must lie in [0, 1], got {fg_fraction}")));
        }
        let n_fg = (n as f64 * fg_fraction).round() as usize;
        if n_fg > 0 && self.fg.is_empty() {
            return Err(Error::Data("dataset contains no foreground pixels to centre patches on".into()));
        }
        let (h, w) = dataset.dims();
        let mut batch = PatchBatch {
            images: Vec::with_capacity(n),
            labels: Vec::with_capacity(n),
            classes: Vec::with_capacity(n),
            origins: Vec::with_capacity(n),
        };
        for k in 0..n {
            let (i, cy, cx) = if k < n_fg {
                self.fg[rng.random_range(0..self.fg.len())]
            } else {
                let mut tries = 0;
                loop {
                    let i = rng.random_range(0..dataset.len());
                    let (y, x) = (rng.random_range(0..h), rng.random_range(0..w));
                    if dataset.labels[i].get(y, x) == 0 {
                        break (i, y, x);
                    }
                    tries += 1;
                    if tries > 10_000 {
                        return Err(Error::Data("dataset contains no background pixels".into()));
                    }
                }
            };
            let (img, lab) = extract_patch(&dataset.images[i], &dataset.labels[i], cy, cx, self.patch);
            let c = self.patch / 2;
            batch.classes.push(PatchClass::from_center_label(lab.get(c, c)));
            batch.images.push(img);
            batch.labels.push(lab);
            batch.origins.push((i, cy, cx));
        }
        Ok(batch)
    }
}

pub fn sample_patch_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    n: usize,
    patch: usize,
    fg_fraction: f64,
    rng: &mut R,
) -> Result<PatchBatch> {
    PatchSampler::new(dataset, patch)?.sample(dataset, n, fg_fraction, rng)
}

pub const DATASET_FORMAT_VERSION: u32 = 1;
const IMAGE_MAGIC: &[u8; 4] = b"AUGT";
const LABEL_MAGIC: &[u8; 4] = b"AUGL";
const BLOB_HEADER: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobEntry {
    pub file: String,
    pub dtype: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub split: Split,
    pub classes: usize,
    pub count: usize,
    pub image_shape: Vec<usize>,
    pub label_shape: Vec<usize>,
    pub images: BlobEntry,
    pub labels: BlobEntry,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn blob(magic: &[u8; 4], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(BLOB_HEADER + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&DATASET_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Writes `manifest.json`, `images.bin` and `labels.bin` into `dir`.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = dataset.dims();
    let img_payload: Vec<u8> = dataset
        .images
        .iter()
        .flat_map(|t| t.data().iter().flat_map(|v| v.to_le_bytes()))
        .collect();
    let lab_payload = crate::tensor::concat_labels(&dataset.labels);
    let img_blob = blob(IMAGE_MAGIC, &img_payload);
    let lab_blob = blob(LABEL_MAGIC, &lab_payload);
    let manifest = Manifest {
        version: DATASET_FORMAT_VERSION,
        split: dataset.split,
        classes: dataset.classes,
        count: dataset.len(),
        image_shape: vec![1, h, w],
        label_shape: vec![h, w],
        images: BlobEntry {
            file: "images.bin".into(),
            dtype: "f32le".into(),
            bytes: img_blob.len() as u64,
            sha256: sha_hex(&img_blob),
        },
        labels: BlobEntry {
            file: "labels.bin".into(),
            dtype: "u8".into(),
            bytes: lab_blob.len() as u64,
            sha256: sha_hex(&lab_blob),
        },
    };
    for (name, bytes) in [("images.bin", &img_blob), ("labels.bin", &lab_blob)] {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))
}

fn read_blob(dir: &Path, entry: &BlobEntry, magic: &[u8; 4], dtype: &str, elem: usize, count: usize) -> Result<Vec<u8>> {
    let path = dir.join(&entry.file);
    let fmt = |offset: u64, message: String| Error::Format {
        path: path.clone(),
        offset,
        message,
    };
    if entry.dtype != dtype {
        return Err(fmt(0, format!("dtype {:?} does not match expected {dtype:?}", entry.dtype)));
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() < 4 || &bytes[..4] != magic {
        let at = bytes
            .iter()
            .zip(magic)
            .position(|(a, b)| a != b)
            .unwrap_or(bytes.len().min(4));
        return Err(fmt(at as u64, format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
    }
    if bytes.len() < BLOB_HEADER {
        return Err(fmt(bytes.len() as u64, "truncated header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes"));
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            expected: DATASET_FORMAT_VERSION,
            found: version,
        });
    }
    let want = BLOB_HEADER + elem * count;
    if bytes.len() < want {
        return Err(fmt(bytes.len() as u64, format!("truncated payload, expected {want} bytes")));
    }
    if bytes.len() > want {
        return Err(fmt(want as u64, format!("{} trailing bytes", bytes.len() - want)));
    }
    let digest = sha_hex(&bytes);
    if digest != entry.sha256 {
        return Err(Error::Data(format!(
            "checksum mismatch for {}: manifest {}, file {digest}",
            path.display(),
            entry.sha256
        )));
    }
    Ok(bytes[BLOB_HEADER..].to_vec())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            expected: DATASET_FORMAT_VERSION,
            found: manifest.version,
        });
    }
    let (h, w) = match (manifest.image_shape.as_slice(), manifest.label_shape.as_slice()) {
        (&[1, h, w], &[lh, lw]) if (h, w) == (lh, lw) => (h, w),
        _ => {
            return Err(Error::Shape {
                expected: vec![1, 0, 0],
                got: manifest.image_shape.clone(),
                context: "manifest image/label shapes",
            })
        }
    };
    let plane = h * w;
    let img = read_blob(dir, &manifest.images, IMAGE_MAGIC, "f32le", 4, manifest.count * plane)?;
    let lab = read_blob(dir, &manifest.labels, LABEL_MAGIC, "u8", 1, manifest.count * plane)?;
    let bad: Vec<usize> = lab
        .iter()
        .enumerate()
        .filter(|(_, &v)| v as usize >= manifest.classes)
        .map(|(i, _)| i)
        .take(16)
        .collect();
    if !bad.is_empty() {
        return Err(Error::LabelRange {
            classes: manifest.classes,
            indices: bad,
        });
    }
    let floats: Vec<f32> = img
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
        .collect();
    let images = floats
        .chunks_exact(plane)
        .map(|c| Tensor::new(vec![1, h, w], c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let labels = lab
        .chunks_exact(plane)
        .map(|c| LabelMap::new(h, w, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(manifest.split, manifest.classes, images, labels)
}

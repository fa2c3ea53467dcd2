//! Synthetic sine images, IDX and CIFAR-10 readers, subsampling and
//! training augmentation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::spectral::{dft2_mag, flatten_spectrum};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const IDX_MAX_LABEL: u8 = 9;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CLASSES: usize = 10;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Random superposition of 2-D sine waves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SineImageSpec {
    pub size: usize,
    pub num_waves: usize,
    /// Cycles per pixel, half open.
    pub frequency_range: [f64; 2],
    pub orientation_range: [f64; 2],
    pub phase_range: [f64; 2],
}

impl Default for SineImageSpec {
    fn default() -> Self {
        SineImageSpec {
            size: 32,
            num_waves: 3,
            frequency_range: [0.0, 0.5],
            orientation_range: [0.0, std::f64::consts::PI],
            phase_range: [0.0, 2.0 * std::f64::consts::PI],
        }
    }
}

impl SineImageSpec {
    pub fn with_size(size: usize) -> Self {
        SineImageSpec {
            size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.num_waves == 0 {
            return Err(Error::Config("sine images need a positive size and wave count".into()));
        }
        let [f0, f1] = self.frequency_range;
        if !(0.0 <= f0 && f0 < f1 && f1 <= 0.5) {
            return Err(Error::Range(format!(
                "frequency range [{f0}, {f1}) must lie within [0, 0.5]"
            )));
        }
        for (name, [lo, hi]) in [("orientation", self.orientation_range), ("phase", self.phase_range)] {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Range(format!("{name} range [{lo}, {hi}) is empty")));
            }
        }
        Ok(())
    }
}

/// Frequency (cycles/pixel), orientation and phase of one wave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineWave {
    pub omega: f64,
    pub theta: f64,
    pub phi: f64,
}

/// `S[x, y] = sum_i sin(2 pi omega_i (x cos theta_i + y sin theta_i) + phi_i)`
/// with `x` along the first image axis, both starting at 0. Returns `[1, P, P]`.
pub fn render_sine_image(size: usize, waves: &[SineWave]) -> Result<Tensor> {
    let mut img = Tensor::zeros(&[1, size, size])?;
    let d = img.data_mut();
    for w in waves {
        let (st, ct) = w.theta.sin_cos();
        for x in 0..size {
            for y in 0..size {
                let xr = x as f64 * ct + y as f64 * st;
                d[x * size + y] += (2.0 * std::f64::consts::PI * xr * w.omega + w.phi).sin();
            }
        }
    }
    Ok(img)
}

/// Draws `omega, theta, phi` for each wave in turn, then renders.
pub fn gen_sine_image(rng: &mut Rng, spec: &SineImageSpec) -> Result<(Tensor, Vec<SineWave>)> {
    spec.validate()?;
    let mut waves = Vec::with_capacity(spec.num_waves);
    for _ in 0..spec.num_waves {
        let omega = rng.uniform(spec.frequency_range[0], spec.frequency_range[1])?;
        let theta = rng.uniform(spec.orientation_range[0], spec.orientation_range[1])?;
        let phi = rng.uniform(spec.phase_range[0], spec.phase_range[1])?;
        waves.push(SineWave { omega, theta, phi });
    }
    Ok((render_sine_image(spec.size, &waves)?, waves))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels { labels: Vec<usize>, num_classes: usize },
    /// `[N, n]` regression targets.
    Vectors(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels { labels, .. } => labels.len(),
            Targets::Vectors(t) => t.shape().first().copied().unwrap_or(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    targets: Targets,
    split: Split,
}

impl LabeledDataset {
    pub fn new(images: Tensor, targets: Targets, split: Split) -> Result<Self> {
        if images.ndim() != 4 {
            return Err(Error::Shape(format!(
                "images must be [N, C, H, W], got {:?}",
                images.shape()
            )));
        }
        let n = images.shape()[0];
        if targets.len() != n {
            return Err(Error::Shape(format!(
                "{n} images but {} targets",
                targets.len()
            )));
        }
        match &targets {
            Targets::Labels { labels, num_classes } => {
                if let Some(&bad) = labels.iter().find(|&&l| l >= *num_classes) {
                    return Err(Error::Data(format!(
                        "label {bad} outside 0..{num_classes}"
                    )));
                }
            }
            Targets::Vectors(t) => {
                if t.ndim() != 2 {
                    return Err(Error::Shape(format!(
                        "regression targets must be [N, n], got {:?}",
                        t.shape()
                    )));
                }
            }
        }
        Ok(LabeledDataset {
            images,
            targets,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// `[C, H, W]`
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, i: usize) -> Result<Tensor> {
        self.images.index_axis0(i)
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        match &self.targets {
            Targets::Labels { labels, .. } => labels.get(i).copied(),
            Targets::Vectors(_) => None,
        }
    }

    pub fn target_vector(&self, i: usize) -> Result<Option<Tensor>> {
        match &self.targets {
            Targets::Vectors(t) => t.index_axis0(i).map(Some),
            Targets::Labels { .. } => Ok(None),
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Labels { num_classes, .. } => Some(*num_classes),
            Targets::Vectors(_) => None,
        }
    }

    /// First `n` samples (or all if fewer).
    pub fn head(&self, n: usize) -> Result<LabeledDataset> {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    pub fn select(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let imgs = indices
            .iter()
            .map(|&i| self.image(i))
            .collect::<Result<Vec<_>>>()?;
        let images = if imgs.is_empty() {
            let [c, h, w] = self.image_shape();
            Tensor::zeros(&[0, c, h, w])?
        } else {
            Tensor::stack(&imgs)?
        };
        let targets = match &self.targets {
            Targets::Labels { labels, num_classes } => Targets::Labels {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
            Targets::Vectors(t) => {
                let n = t.shape()[1];
                let mut data = Vec::with_capacity(indices.len() * n);
                for &i in indices {
                    data.extend_from_slice(&t.data()[i * n..(i + 1) * n]);
                }
                Targets::Vectors(Tensor::from_vec(&[indices.len(), n], data)?)
            }
        };
        LabeledDataset::new(images, targets, self.split)
    }

    /// Applies `f` to every image; `f` must preserve one common shape.
    pub fn map_images(&self, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<LabeledDataset> {
        let imgs = (0..self.len())
            .map(|i| f(&self.image(i)?))
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(Tensor::stack(&imgs)?, self.targets.clone(), self.split)
    }
}

/// Sine images with their flattened DFT magnitudes as targets.
///
/// One base seed is drawn from `rng`; sample `i` of the training split uses
/// substream `i` and validation sample `j` substream `n_train + j`, so every
/// sample can be regenerated on its own.
pub fn gen_fft_dataset(
    rng: &mut Rng,
    n_train: usize,
    n_val: usize,
    spec: &SineImageSpec,
) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    if n_train == 0 || n_val == 0 {
        return Err(Error::Config("dataset sizes must be at least 1".into()));
    }
    let base = rng.next_u64();
    let build = |start: usize, n: usize, split: Split| -> Result<LabeledDataset> {
        let p = spec.size;
        let mut images = Vec::with_capacity(n * p * p);
        let mut targets = Vec::with_capacity(n * p * p);
        for i in 0..n {
            let mut r = Rng::substream(base, (start + i) as u64);
            let (img, _) = gen_sine_image(&mut r, spec)?;
            let mag = dft2_mag(&img.reshape(&[p, p])?)?;
            targets.extend_from_slice(flatten_spectrum(&mag).data());
            images.extend_from_slice(img.data());
        }
        LabeledDataset::new(
            Tensor::from_vec(&[n, 1, p, p], images)?,
            Targets::Vectors(Tensor::from_vec(&[n, p * p], targets)?),
            split,
        )
    };
    Ok((
        build(0, n_train, Split::Train)?,
        build(n_train, n_val, Split::Validation)?,
    ))
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn u32_be(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::format(
                self.bytes.len() as u64,
                format!("truncated while reading {what}: need {n} bytes at offset {}", self.pos),
            )),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads an IDX image/label pair. Pixels are divided by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let ib = read_file(images_path)?;
    let lb = read_file(labels_path)?;
    let mut ir = ByteReader { bytes: &ib, pos: 0 };
    let magic = ir.u32_be("image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(0, format!("bad image magic {magic:#010x}")));
    }
    let n = ir.u32_be("image count")? as usize;
    let h = ir.u32_be("row count")? as usize;
    let w = ir.u32_be("column count")? as usize;
    let mut lr = ByteReader { bytes: &lb, pos: 0 };
    let magic = lr.u32_be("label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(0, format!("bad label magic {magic:#010x}")));
    }
    let nl = lr.u32_be("label count")? as usize;
    if nl != n {
        return Err(Error::format(4, format!("{n} images but {nl} labels")));
    }
    let pixel_count = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::format(4, "image dimensions overflow"))?;
    let pixels = ir.take(pixel_count, "pixels")?;
    if ir.pos != ib.len() {
        return Err(Error::format(ir.pos as u64, "trailing bytes after image data"));
    }
    let raw_labels = lr.take(n, "labels")?;
    if lr.pos != lb.len() {
        return Err(Error::format(lr.pos as u64, "trailing bytes after label data"));
    }
    if let Some(i) = raw_labels.iter().position(|&l| l > IDX_MAX_LABEL) {
        return Err(Error::format(
            (8 + i) as u64,
            format!("label {} outside 0..=9", raw_labels[i]),
        ));
    }
    let images = Tensor::from_vec(
        &[n, 1, h, w],
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )?;
    LabeledDataset::new(
        images,
        Targets::Labels {
            labels: raw_labels.iter().map(|&l| l as usize).collect(),
            num_classes: 10,
        },
        Split::Train,
    )
}

/// Writes a single-channel labelled dataset as IDX. Pixels are rounded from
/// `[0, 1]` to bytes.
pub fn write_idx(ds: &LabeledDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let [c, h, w] = ds.image_shape();
    if c != 1 {
        return Err(Error::Shape(format!("IDX images are single channel, got {c}")));
    }
    let labels = match ds.targets() {
        Targets::Labels { labels, .. } => labels,
        Targets::Vectors(_) => return Err(Error::Config("IDX needs class labels".into())),
    };
    let n = ds.len();
    let mut ib = Vec::with_capacity(16 + n * h * w);
    for v in [IDX_IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        ib.extend_from_slice(&v.to_be_bytes());
    }
    for &p in ds.images().data() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Range(format!("pixel {p} outside [0, 1]")));
        }
        ib.push((p * 255.0).round() as u8);
    }
    let mut lb = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS_MAGIC, n as u32] {
        lb.extend_from_slice(&v.to_be_bytes());
    }
    for &l in labels {
        if l > IDX_MAX_LABEL as usize {
            return Err(Error::Range(format!("label {l} does not fit IDX")));
        }
        lb.push(l as u8);
    }
    fs::write(images_path, ib).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lb).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

/// Reads CIFAR-10 binary batch files (label byte + 3072 channel-planar
/// pixel bytes per record).
pub fn load_cifar10_batches(paths: &[PathBuf], split: Split) -> Result<LabeledDataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read_file(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::format(
                (bytes.len() - bytes.len() % CIFAR_RECORD) as u64,
                format!("{} is not a whole number of {CIFAR_RECORD}-byte records", path.display()),
            ));
        }
        for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            if rec[0] as usize >= CIFAR_CLASSES {
                return Err(Error::format(
                    (r * CIFAR_RECORD) as u64,
                    format!("label {} outside 0..=9", rec[0]),
                ));
            }
            labels.push(rec[0] as usize);
            images.extend(rec[1..].iter().map(|&p| p as f64 / 255.0));
        }
    }
    let n = labels.len();
    LabeledDataset::new(
        Tensor::from_vec(&[n, 3, CIFAR_SIDE, CIFAR_SIDE], images)?,
        Targets::Labels {
            labels,
            num_classes: CIFAR_CLASSES,
        },
        split,
    )
}

/// Training and test splits from a `cifar-10-batches-bin` directory.
pub fn load_cifar10_dir(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    if !dir.is_dir() {
        return Err(Error::Data(format!(
            "CIFAR-10 dataset unavailable: {} is not a directory",
            dir.display()
        )));
    }
    let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    let test = [dir.join("test_batch.bin")];
    Ok((
        load_cifar10_batches(&train, Split::Train)?,
        load_cifar10_batches(&test, Split::Validation)?,
    ))
}

/// Downsample by 2 with bilinear interpolation at input coordinates
/// `(p + 0.5) * 2 - 0.5`, clamped to the image.
pub fn bilinear_subsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    let s = x.shape();
    if factor != 2 {
        return Err(Error::Config(format!("only factor 2 is supported, got {factor}")));
    }
    if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 || s[1] == 0 || s[2] == 0 {
        return Err(Error::Shape(format!(
            "subsampling needs [C, H, W] with even H and W, got {s:?}"
        )));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (oh, ow) = (h / factor, w / factor);
    let f = factor as f64;
    let coord = |p: usize, n: usize| -> (usize, usize, f64) {
        let t = ((p as f64 + 0.5) * f - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = t.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, t - i0 as f64)
    };
    let mut out = Tensor::zeros(&[c, oh, ow])?;
    let xd = x.data();
    let od = out.data_mut();
    for ch in 0..c {
        let base = ch * h * w;
        for p in 0..oh {
            let (r0, r1, a) = coord(p, h);
            for q in 0..ow {
                let (c0, c1, b) = coord(q, w);
                let v00 = xd[base + r0 * w + c0];
                let v01 = xd[base + r0 * w + c1];
                let v10 = xd[base + r1 * w + c0];
                let v11 = xd[base + r1 * w + c1];
                od[ch * oh * ow + p * ow + q] =
                    (1.0 - a) * ((1.0 - b) * v00 + b * v01) + a * ((1.0 - b) * v10 + b * v11);
            }
        }
    }
    Ok(out)
}

pub const MAX_SHIFT: i64 = 4;

/// One augmentation draw. A positive `dy` moves content down, `dx` right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentParams {
    pub flip: bool,
    pub dy: i64,
    pub dx: i64,
}

impl AugmentParams {
    /// Flip with probability 1/2, then `dy` and `dx` uniform in `-4..=4`.
    pub fn draw(rng: &mut Rng) -> Self {
        let flip = rng.next_f64() < 0.5;
        let span = (2 * MAX_SHIFT + 1) as usize;
        let dy = rng.below(span) as i64 - MAX_SHIFT;
        let dx = rng.below(span) as i64 - MAX_SHIFT;
        AugmentParams { flip, dy, dx }
    }
}

pub fn flip_horizontal(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected [C, H, W], got {s:?}")));
    }
    let w = s[2];
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(w.max(1)) {
        row.reverse();
    }
    Ok(out)
}

/// Shift with zero fill: `out[c, h, w] = x[c, h - dy, w - dx]`.
pub fn translate(x: &Tensor, dy: i64, dx: i64) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected [C, H, W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1] as i64, s[2] as i64);
    let mut out = Tensor::zeros(s)?;
    let xd = x.data();
    let od = out.data_mut();
    for ch in 0..c {
        let base = ch * (h * w) as usize;
        for r in 0..h {
            let sr = r - dy;
            if !(0..h).contains(&sr) {
                continue;
            }
            for q in 0..w {
                let sq = q - dx;
                if (0..w).contains(&sq) {
                    od[base + (r * w + q) as usize] = xd[base + (sr * w + sq) as usize];
                }
            }
        }
    }
    Ok(out)
}

/// Flip first, then translate.
pub fn apply_augment(x: &Tensor, params: AugmentParams) -> Result<Tensor> {
    let flipped;
    let src = if params.flip {
        flipped = flip_horizontal(x)?;
        &flipped
    } else {
        x
    };
    translate(src, params.dy, params.dx)
}

pub fn augment(rng: &mut Rng, x: &Tensor) -> Result<Tensor> {
    apply_augment(x, AugmentParams::draw(rng))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    split: Split,
    num_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
}

fn split_stem(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Validation => "val",
    }
}

/// Writes `<split>_images.bin`, `<split>_targets.bin` (with sidecars) and
/// `<split>_meta.json` into `dir`.
pub fn save_dataset(ds: &LabeledDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = split_stem(ds.split);
    ds.images.save_raw(&dir.join(format!("{stem}_images.bin")))?;
    let targets = match &ds.targets {
        Targets::Labels { labels, .. } => {
            Tensor::from_vec(&[labels.len()], labels.iter().map(|&l| l as f64).collect())?
        }
        Targets::Vectors(t) => t.clone(),
    };
    targets.save_raw(&dir.join(format!("{stem}_targets.bin")))?;
    let meta = DatasetMeta {
        split: ds.split,
        num_samples: ds.len(),
        num_classes: ds.num_classes(),
    };
    let path = dir.join(format!("{stem}_meta.json"));
    let text = serde_json::to_string_pretty(&meta).expect("plain struct");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path, split: Split) -> Result<LabeledDataset> {
    let stem = split_stem(split);
    let path = dir.join(format!("{stem}_meta.json"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let images = Tensor::load_raw(&dir.join(format!("{stem}_images.bin")))?;
    let raw = Tensor::load_raw(&dir.join(format!("{stem}_targets.bin")))?;
    let targets = match meta.num_classes {
        Some(num_classes) => {
            let mut labels = Vec::with_capacity(raw.len());
            for &v in raw.data() {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Data(format!("label {v} is not a class index")));
                }
                labels.push(v as usize);
            }
            Targets::Labels { labels, num_classes }
        }
        None => Targets::Vectors(raw),
    };
    let ds = LabeledDataset::new(images, targets, meta.split)?;
    if ds.len() != meta.num_samples {
        return Err(Error::Data(format!(
            "{} declares {} samples, found {}",
            path.display(),
            meta.num_samples,
            ds.len()
        )));
    }
    Ok(ds)
}

//! PGM images, metric CSVs and kernel spectra.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::Model;
use crate::nn::train::EpochRecord;
use crate::spectral::{center_shift, kernel_frequency_response, leakage_metrics, LeakageReport};
use crate::tensor::Tensor;
use crate::window::{make_window, WindowSpec};

pub const METRICS_HEADER: &str = "epoch,train_loss,val_metric,lr";

/// Binary 8-bit PGM of a `[H, W]` tensor, linearly mapping min to 0 and
/// max to 255. A constant image is written as all zeros.
pub fn pgm_bytes(img: &Tensor) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.len() != 2 {
        return Err(Error::Shape(format!("PGM needs [H, W], got {s:?}")));
    }
    if !img.all_finite() {
        return Err(Error::Numeric("PGM of non-finite values".into()));
    }
    let (lo, hi) = img
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut out = format!("P5\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(img.data().iter().map(|&v| {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn write_pgm(path: &Path, img: &Tensor) -> Result<()> {
    fs::write(path, pgm_bytes(img)?).map_err(|e| Error::io(path, e))
}

/// Parses a binary PGM back into its gray levels.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos as u64, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::format(0, "only 8-bit binary PGM is supported"));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i].parse().map_err(|_| Error::format(0, format!("bad PGM dimension {:?}", fields[i])))
    };
    let (w, h) = (num(1)?, num(2)?);
    let data = bytes[pos + 1..].to_vec();
    if data.len() != w * h {
        return Err(Error::format((pos + 1) as u64, format!("expected {} pixels, found {}", w * h, data.len())));
    }
    Ok((h, w, data))
}

pub fn metrics_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in records {
        writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_metric, r.lr).expect("string write");
    }
    s
}

/// Inverse of [`metrics_csv`].
pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::format(0, format!("metrics CSV must start with `{METRICS_HEADER}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Data(format!("metrics CSV line {}: {line:?}", i + 2));
        if f.len() != 4 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        out.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad())?,
            train_loss: num(f[1])?,
            val_metric: num(f[2])?,
            lr: num(f[3])?,
        });
    }
    Ok(out)
}

/// `[k, k]` slice `(c, m)` of a `[k, k, C, M]` kernel tensor.
pub fn kernel_slice(kernel: &Tensor, c: usize, m: usize) -> Result<Tensor> {
    let s = kernel.shape();
    if s.len() != 4 || c >= s[2] || m >= s[3] {
        return Err(Error::Shape(format!("no slice ({c}, {m}) in kernel {s:?}")));
    }
    let (kr, kc, ci, mo) = (s[0], s[1], s[2], s[3]);
    let data = (0..kr * kc).map(|i| kernel.data()[(i * ci + c) * mo + m]).collect();
    Tensor::from_vec(&[kr, kc], data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelLeakage {
    pub c: usize,
    pub m: usize,
    pub report: LeakageReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpectra {
    pub name: String,
    pub kernels: usize,
    /// All-zero kernels have no leakage figure and are left out of the means.
    pub skipped: usize,
    pub mean_out_of_band_energy_fraction: Option<f64>,
    /// Mean over kernels that have a sidelobe at all.
    pub mean_sidelobe_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_kernel: Vec<KernelLeakage>,
}

/// Leakage of every effective kernel slice of every conv layer.
pub fn kernel_spectra(model: &Model, grid: usize, threshold_db: f64, per_kernel: bool) -> Result<Vec<LayerSpectra>> {
    let mut out = Vec::new();
    for (layer, name) in model.convs().iter().zip(model.conv_names()) {
        let kernel = layer.effective_kernel();
        let (ci, mo) = (layer.in_channels(), layer.out_channels());
        let mut oob = Vec::new();
        let mut side = Vec::new();
        let mut all = Vec::new();
        let mut skipped = 0;
        for c in 0..ci {
            for m in 0..mo {
                let resp = kernel_frequency_response(&kernel_slice(&kernel, c, m)?, grid)?;
                match leakage_metrics(&resp, threshold_db) {
                    Ok(r) => {
                        oob.push(r.out_of_band_energy_fraction);
                        if r.sidelobe_db.is_finite() {
                            side.push(r.sidelobe_db);
                        }
                        if per_kernel {
                            all.push(KernelLeakage { c, m, report: r });
                        }
                    }
                    Err(Error::Undefined(_)) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        if skipped > 0 {
            log::warn!("{name}: {skipped} all-zero kernels have no leakage figure");
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        out.push(LayerSpectra {
            name,
            kernels: ci * mo,
            skipped,
            mean_out_of_band_energy_fraction: mean(&oob),
            mean_sidelobe_db: mean(&side),
            per_kernel: all,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDump {
    pub layer: String,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Relative to the dump directory.
    pub kernel_files: Vec<String>,
    pub spectrum_files: Vec<String>,
}

/// Writes each effective kernel slice of `layer` to
/// `kernels/<layer>_c<c>_m<m>.pgm` and its centered magnitude response on a
/// `grid x grid` DFT to `spectra/<layer>_c<c>_m<m>.pgm`.
pub fn dump_kernels(model: &Model, layer: &str, grid: usize, dir: &Path) -> Result<KernelDump> {
    let names = model.conv_names();
    let idx = names.iter().position(|n| n == layer).ok_or_else(|| {
        Error::Config(format!("unknown layer {layer:?}; the model has {}", names.join(", ")))
    })?;
    let conv = &model.convs()[idx];
    let kernel = conv.effective_kernel();
    let (kdir, sdir) = (dir.join("kernels"), dir.join("spectra"));
    for d in [&kdir, &sdir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut dump = KernelDump {
        layer: layer.into(),
        in_channels: conv.in_channels(),
        out_channels: conv.out_channels(),
        kernel_files: Vec::new(),
        spectrum_files: Vec::new(),
    };
    for c in 0..conv.in_channels() {
        for m in 0..conv.out_channels() {
            let slice = kernel_slice(&kernel, c, m)?;
            let file = format!("{layer}_c{c}_m{m}.pgm");
            write_pgm(&kdir.join(&file), &slice)?;
            let resp = kernel_frequency_response(&slice, grid)?;
            write_pgm(&sdir.join(&file), &center_shift(&resp))?;
            dump.kernel_files.push(format!("kernels/{file}"));
            dump.spectrum_files.push(format!("spectra/{file}"));
        }
    }
    Ok(dump)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDump {
    pub spec: WindowSpec,
    pub leakage: LeakageReport,
    pub files: Vec<PathBuf>,
}

/// Coefficients (CSV and PGM), centered magnitude response (PGM) and its
/// leakage figures for one window.
pub fn dump_window(spec: WindowSpec, grid: usize, threshold_db: f64, dir: &Path) -> Result<WindowDump> {
    let w = make_window(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let coeffs = w.coeffs();
    let mut csv = String::new();
    for row in coeffs.data().chunks(spec.k_cols) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    let resp = kernel_frequency_response(coeffs, grid)?;
    let leakage = leakage_metrics(&resp, threshold_db)?;
    let files = vec![dir.join("window.csv"), dir.join("window.pgm"), dir.join("window_spectrum.pgm"), dir.join("leakage.json")];
    fs::write(&files[0], csv).map_err(|e| Error::io(&files[0], e))?;
    write_pgm(&files[1], coeffs)?;
    write_pgm(&files[2], &center_shift(&resp))?;
    let text = serde_json::to_string_pretty(&leakage).expect("report serializes");
    fs::write(&files[3], text).map_err(|e| Error::io(&files[3], e))?;
    Ok(WindowDump { spec, leakage, files })
}

//! Discrete Fourier analysis of images and kernels.
//!
//! All transforms are unnormalized forward DFTs,
//! `F[u, v] = sum_{x, y} f[x, y] exp(-2 pi i (u x + v y) / P)`, with the first
//! tensor axis paired with `u`. Spectra stay in standard DFT order (index 0 is
//! DC, indices above `P/2` are negative frequencies); [`center_shift`] is for
//! display only.
//!
//! Power-of-two sizes use an iterative radix-2 transform, other sizes a
//! direct O(n^2) sum per row and column.

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Analysis grid for kernel frequency responses.
pub const DEFAULT_ANALYSIS_GRID: usize = 64;
/// Main lobe threshold relative to the peak.
pub const DEFAULT_PASSBAND_DB: f64 = -6.0;

/// Magnitude of a square 2-D DFT, `[P, P]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D {
    mag: Tensor,
}

impl Spectrum2D {
    pub fn from_magnitude(mag: Tensor) -> Result<Self> {
        let s = mag.shape();
        if s.len() != 2 || s[0] != s[1] || s[0] == 0 {
            return Err(Error::Shape(format!("spectrum must be [P, P], got {s:?}")));
        }
        if mag.data().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Range("spectrum magnitudes must be non-negative".into()));
        }
        Ok(Spectrum2D { mag })
    }

    pub fn size(&self) -> usize {
        self.mag.shape()[0]
    }

    pub fn magnitude(&self) -> &Tensor {
        &self.mag
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.mag.data()[u * self.size() + v]
    }
}

/// In-place forward DFT of one sequence.
pub fn dft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        fft_radix2(buf);
    } else {
        let out = naive_dft(buf);
        buf.copy_from_slice(&out);
    }
}

fn twiddle(k: usize, n: usize) -> Complex64 {
    let (s, c) = (-2.0 * PI * k as f64 / n as f64).sin_cos();
    Complex64::new(c, s)
}

fn naive_dft(input: &[Complex64]) -> Vec<Complex64> {
    let n = input.len();
    (0..n)
        .map(|k| {
            input
                .iter()
                .enumerate()
                .fold(Complex64::new(0.0, 0.0), |acc, (j, &x)| {
                    acc + x * twiddle((j * k) % n, n)
                })
        })
        .collect()
}

fn fft_radix2(buf: &mut [Complex64]) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let table: Vec<Complex64> = (0..n / 2).map(|k| twiddle(k, n)).collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = table[k * step];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Complex 2-D DFT of a real `[P, Q]` array, row-major output.
pub fn dft2(x: &Tensor) -> Result<Vec<Complex64>> {
    let s = x.shape();
    if s.len() != 2 || s[0] == 0 || s[1] == 0 {
        return Err(Error::Shape(format!("2-D DFT needs a non-empty [P, Q] array, got {s:?}")));
    }
    let (rows, cols) = (s[0], s[1]);
    let mut buf: Vec<Complex64> = x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for r in buf.chunks_exact_mut(cols) {
        dft_in_place(r);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = buf[r * cols + c];
        }
        dft_in_place(&mut column);
        for r in 0..rows {
            buf[r * cols + c] = column[r];
        }
    }
    Ok(buf)
}

pub fn dft2_mag(x: &Tensor) -> Result<Spectrum2D> {
    let s = x.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::Shape(format!("expected a square [P, P] image, got {s:?}")));
    }
    let f = dft2(x)?;
    let mag = Tensor::from_vec(s, f.iter().map(|z| z.norm()).collect())?;
    Ok(Spectrum2D { mag })
}

/// Row-major flattening, DC first.
pub fn flatten_spectrum(s: &Spectrum2D) -> Tensor {
    s.mag.reshape(&[s.mag.len()]).expect("same element count")
}

pub fn unflatten_spectrum(flat: &Tensor) -> Result<Spectrum2D> {
    let n = flat.len();
    let p = (n as f64).sqrt().round() as usize;
    if flat.ndim() != 1 || p * p != n {
        return Err(Error::Shape(format!(
            "flattened spectrum of shape {:?} is not P*P long",
            flat.shape()
        )));
    }
    Spectrum2D::from_magnitude(flat.reshape(&[p, p])?)
}

/// Frequency response of a `[k_rows, k_cols]` kernel on a `P x P` grid.
///
/// The kernel is embedded at the top-left corner of a zero grid.
pub fn kernel_frequency_response(kernel: &Tensor, p: usize) -> Result<Spectrum2D> {
    let s = kernel.shape();
    if s.len() != 2 {
        return Err(Error::Shape(format!("kernel must be 2-D, got {s:?}")));
    }
    if p < s[0] || p < s[1] || p == 0 {
        return Err(Error::Size(format!(
            "analysis grid {p} smaller than kernel {}x{}",
            s[0], s[1]
        )));
    }
    let mut grid = Tensor::zeros(&[p, p])?;
    for i in 0..s[0] {
        let src = &kernel.data()[i * s[1]..(i + 1) * s[1]];
        grid.data_mut()[i * p..i * p + s[1]].copy_from_slice(src);
    }
    dft2_mag(&grid)
}

/// Move DC to the center `(P/2, P/2)` for display.
pub fn center_shift(s: &Spectrum2D) -> Tensor {
    let p = s.size();
    let h = p / 2;
    let mut out = Tensor::zeros(&[p, p]).expect("valid shape");
    for u in 0..p {
        for v in 0..p {
            out.data_mut()[((u + h) % p) * p + (v + h) % p] = s.at(u, v);
        }
    }
    out
}

/// Main lobe versus sidelobe summary of a magnitude spectrum.
///
/// The main lobe is the 4-connected region (wrapping around the edges)
/// containing the global peak where the magnitude stays at or above
/// `peak * 10^(threshold_db / 20)`. The peak sidelobe is the largest local
/// maximum (a bin not smaller than any of its four neighbours) outside that
/// region; the skirt of the main lobe below the threshold is not a sidelobe.
/// When nothing qualifies, `peak_sidelobe` is 0 and `sidelobe_db` is
/// negative infinity (written as `null` in JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub peak_mainlobe: f64,
    pub peak_sidelobe: f64,
    #[serde(with = "neg_inf_as_null")]
    pub sidelobe_db: f64,
    pub out_of_band_energy_fraction: f64,
    pub mainlobe_bins: usize,
}

mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

pub fn leakage_metrics(s: &Spectrum2D, passband_threshold_db: f64) -> Result<LeakageReport> {
    if !(passband_threshold_db < 0.0) {
        return Err(Error::Range(format!(
            "passband threshold must be below 0 dB, got {passband_threshold_db}"
        )));
    }
    let p = s.size();
    let mag = s.mag.data();
    let (peak_at, peak) = mag
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    if !(peak > 0.0) {
        return Err(Error::Undefined("leakage of an all-zero spectrum".into()));
    }
    let floor = peak * 10f64.powf(passband_threshold_db / 20.0);

    let neighbours = |i: usize| {
        let (u, v) = (i / p, i % p);
        [
            ((u + p - 1) % p) * p + v,
            ((u + 1) % p) * p + v,
            u * p + (v + p - 1) % p,
            u * p + (v + 1) % p,
        ]
    };

    let mut main = vec![false; mag.len()];
    main[peak_at] = true;
    let mut queue = VecDeque::from([peak_at]);
    while let Some(i) = queue.pop_front() {
        for n in neighbours(i) {
            if !main[n] && mag[n] >= floor {
                main[n] = true;
                queue.push_back(n);
            }
        }
    }

    let mut total = 0.0;
    let mut outside = 0.0;
    let mut side = 0.0f64;
    for (i, &m) in mag.iter().enumerate() {
        let e = m * m;
        total += e;
        if main[i] {
            continue;
        }
        outside += e;
        if m > side && neighbours(i).iter().all(|&n| mag[n] <= m) {
            side = m;
        }
    }
    let sidelobe_db = if side > 0.0 {
        20.0 * (side / peak).log10()
    } else {
        f64::NEG_INFINITY
    };
    Ok(LeakageReport {
        peak_mainlobe: peak,
        peak_sidelobe: side,
        sidelobe_db,
        out_of_band_energy_fraction: outside / total,
        mainlobe_bins: main.iter().filter(|&&b| b).count(),
    })
}

//! Dense row-major `f64` arrays.
//!
//! Every operation returns a fresh tensor. Reductions accumulate in ascending
//! flat-index order so that results are reproducible bit for bit.
//!
//! The on-disk format is a flat little-endian `f64` payload (`NAME.bin`) next
//! to a JSON sidecar (`NAME.json`) holding `{"shape": [...], "dtype": "f64"}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    shape.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::Size(format!("element count of shape {shape:?} overflows")))
    })
}

/// Row-major strides for `shape` (last axis fastest).
pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * shape[a + 1];
    }
    strides
}

impl Tensor {
    pub fn new(shape: &[usize], fill: f64) -> Result<Self> {
        let n = checked_len(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![fill; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = checked_len(shape)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Zeros shaped like `self`.
    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.shape)
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.shape.len() {
            return Err(Error::Shape(format!(
                "index of rank {} into tensor of rank {}",
                idx.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        let mut stride = 1;
        for a in (0..idx.len()).rev() {
            if idx[a] >= self.shape[a] {
                return Err(Error::Shape(format!(
                    "index {idx:?} out of bounds for shape {:?}",
                    self.shape
                )));
            }
            off += idx[a] * stride;
            stride *= self.shape[a];
        }
        Ok(off)
    }

    /// Inverse of [`Tensor::offset`].
    pub fn unflatten(&self, mut offset: usize) -> Result<Vec<usize>> {
        if offset >= self.data.len() {
            return Err(Error::Shape(format!(
                "offset {offset} out of bounds for {} elements",
                self.data.len()
            )));
        }
        let mut idx = vec![0; self.shape.len()];
        for a in (0..self.shape.len()).rev() {
            idx[a] = offset % self.shape[a];
            offset /= self.shape[a];
        }
        Ok(idx)
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(idx)?])
    }

    pub fn set(&mut self, idx: &[usize], value: f64) -> Result<()> {
        let off = self.offset(idx)?;
        self.data[off] = value;
        Ok(())
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data.clone())
    }

    pub fn into_shape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn elementwise(&self, other: &Tensor, op: BinaryOp) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise {op:?} of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
            })
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, BinaryOp::Mul)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Reduce over `axes`, removing them from the shape.
    ///
    /// Each output element accumulates its inputs in ascending flat-index
    /// order. Reducing every axis yields a rank-0 tensor.
    pub fn reduce(&self, op: ReduceOp, axes: &[usize]) -> Result<Tensor> {
        let rank = self.shape.len();
        let mut reduced = vec![false; rank];
        for &a in axes {
            if a >= rank {
                return Err(Error::Axis(format!("axis {a} out of range for rank {rank}")));
            }
            if reduced[a] {
                return Err(Error::Axis(format!("axis {a} listed twice")));
            }
            reduced[a] = true;
        }
        let count: usize = axes.iter().map(|&a| self.shape[a]).product();
        if count == 0 && op != ReduceOp::Sum {
            return Err(Error::Axis(format!(
                "{op:?} over an empty extent is undefined"
            )));
        }

        let out_shape: Vec<usize> = (0..rank)
            .filter(|&a| !reduced[a])
            .map(|a| self.shape[a])
            .collect();
        let out_len: usize = out_shape.iter().product();
        let init = match op {
            ReduceOp::Max => f64::NEG_INFINITY,
            _ => 0.0,
        };
        let mut out = vec![init; out_len];

        let in_strides = self.strides();
        let out_strides = row_major_strides(&out_shape);
        // Per input axis: stride into the output, zero for reduced axes.
        let mut map_strides = vec![0usize; rank];
        let mut k = 0;
        for a in 0..rank {
            if !reduced[a] {
                map_strides[a] = out_strides[k];
                k += 1;
            }
        }
        for (flat, &v) in self.data.iter().enumerate() {
            let mut o = 0;
            let mut rem = flat;
            for a in 0..rank {
                let i = rem / in_strides[a];
                rem %= in_strides[a];
                o += i * map_strides[a];
            }
            match op {
                ReduceOp::Max => {
                    if v > out[o] || out[o].is_nan() {
                        out[o] = v;
                    }
                }
                _ => out[o] += v,
            }
        }
        if op == ReduceOp::Mean {
            let c = count as f64;
            out.iter_mut().for_each(|v| *v /= c);
        }
        Ok(Tensor {
            shape: out_shape,
            data: out,
        })
    }

    /// Left fold of all elements in flat order.
    pub fn sum_all(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| acc + v)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of the `i`-th slice along axis 0.
    pub fn index_axis0(&self, i: usize) -> Result<Tensor> {
        let (&n, rest) = self
            .shape
            .split_first()
            .ok_or_else(|| Error::Shape("cannot slice a rank-0 tensor".into()))?;
        if i >= n {
            return Err(Error::Shape(format!("slice {i} out of {n}")));
        }
        let len: usize = rest.iter().product();
        Tensor::from_vec(rest, self.data[i * len..(i + 1) * len].to_vec())
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::Shape(format!(
                    "stack of {:?} and {:?}",
                    first.shape, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::from_vec(&shape, data)
    }

    pub fn save_raw(&self, bin_path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(dir) = bin_path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        fs::write(bin_path, bytes).map_err(|e| Error::io(bin_path, e))?;
        let side = RawSidecar {
            shape: self.shape.clone(),
            dtype: "f64".into(),
        };
        let json_path = sidecar_path(bin_path);
        let text = serde_json::to_string(&side).expect("sidecar serializes");
        fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }

    pub fn load_raw(bin_path: &Path) -> Result<Tensor> {
        let json_path = sidecar_path(bin_path);
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let side: RawSidecar = serde_json::from_str(&text)
            .map_err(|e| Error::format(0, format!("{}: {e}", json_path.display())))?;
        if side.dtype != "f64" {
            return Err(Error::format(
                0,
                format!("{}: unsupported dtype {}", json_path.display(), side.dtype),
            ));
        }
        let bytes = fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
        let n = checked_len(&side.shape)?;
        if bytes.len() != n * 8 {
            return Err(Error::format(
                bytes.len().min(n * 8) as u64,
                format!(
                    "{}: expected {} bytes for shape {:?}, found {}",
                    bin_path.display(),
                    n * 8,
                    side.shape,
                    bytes.len()
                ),
            ));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::from_vec(&side.shape, data)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSidecar {
    shape: Vec<usize>,
    dtype: String,
}

/// `foo.bin` -> `foo.json`.
pub fn sidecar_path(bin_path: &Path) -> PathBuf {
    bin_path.with_extension("json")
}

//! Dense doubly block-Toeplitz (DBT) matrices of conv layers and their
//! deviation from row orthogonality.
//!
//! Row `r = (m * H' + p) * W' + q` of the DBT holds the effective kernel
//! weights that produce output `y[m, p, q]` from the flattened `[C, H, W]`
//! input, so `y = DBT * x + bias`. The deviation is
//!
//! ```text
//! D = 1 / (N (N - 1)) * sum_{i != j} |<r_i / |r_i|, r_j / |r_j|>|
//! ```
//!
//! over the `N` non-zero rows.

use serde::{Deserialize, Serialize};

use crate::conv::ConvLayer;
use crate::error::{Error, Result};
use crate::gemm::{gemm, MatRef};
use crate::nn::model::{model_init, Model};
use crate::rng::Rng;

/// Default limit on dense DBT entries.
pub const DEFAULT_DENSE_BUDGET: usize = 100_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DbtMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    input_shape: [usize; 3],
    output_shape: [usize; 3],
}

impl DbtMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.output_shape
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

pub fn build_dbt(layer: &ConvLayer, input_shape: [usize; 3]) -> Result<DbtMatrix> {
    build_dbt_with_budget(layer, input_shape, DEFAULT_DENSE_BUDGET)
}

pub fn build_dbt_with_budget(layer: &ConvLayer, input_shape: [usize; 3], budget: usize) -> Result<DbtMatrix> {
    let out = layer.output_shape(&input_shape)?;
    let [c, h, w] = input_shape;
    let [m, oh, ow] = out;
    let rows = m * oh * ow;
    let cols = c * h * w;
    let entries = rows.checked_mul(cols).filter(|&e| e <= budget).ok_or_else(|| {
        Error::Size(format!(
            "dense DBT of {rows} x {cols} exceeds the budget of {budget} entries; \
             use a smaller input shape or fewer channels"
        ))
    })?;
    let kernel = layer.effective_kernel();
    let g = layer.geometry();
    let mut data = vec![0.0; entries];
    for mm in 0..m {
        for p in 0..oh {
            for q in 0..ow {
                let r = (mm * oh + p) * ow + q;
                let row = &mut data[r * cols..(r + 1) * cols];
                for i in 0..g.k_rows {
                    let hh = (p * g.stride + i) as isize - g.pad as isize;
                    if hh < 0 || hh as usize >= h {
                        continue;
                    }
                    for j in 0..g.k_cols {
                        let ww = (q * g.stride + j) as isize - g.pad as isize;
                        if ww < 0 || ww as usize >= w {
                            continue;
                        }
                        for cc in 0..c {
                            let kv = kernel.data()[((i * g.k_cols + j) * c + cc) * m + mm];
                            row[(cc * h + hh as usize) * w + ww as usize] = kv;
                        }
                    }
                }
            }
        }
    }
    Ok(DbtMatrix {
        rows,
        cols,
        data,
        input_shape,
        output_shape: out,
    })
}

/// Mean absolute cosine between distinct non-zero rows.
pub fn ortho_deviation(dbt: &DbtMatrix) -> Result<f64> {
    let mut unit = Vec::with_capacity(dbt.data.len());
    let mut kept = 0usize;
    for r in 0..dbt.rows {
        let row = dbt.row(r);
        let norm = row.iter().fold(0.0, |a, &v| a + v * v).sqrt();
        if norm > 0.0 {
            unit.extend(row.iter().map(|&v| v / norm));
            kept += 1;
        }
    }
    let zero = dbt.rows - kept;
    if kept == 0 {
        return Err(Error::Undefined("every DBT row is zero".into()));
    }
    if zero > 0 {
        log::warn!("{zero} of {} DBT rows are zero and were left out", dbt.rows);
    }
    if kept < 2 {
        return Err(Error::Undefined("deviation needs at least two non-zero rows".into()));
    }
    let mut gram = vec![0.0; kept * kept];
    gemm(
        1.0,
        MatRef::row_major(&unit, kept, dbt.cols),
        MatRef::transposed(&unit, dbt.cols, kept),
        0.0,
        &mut gram,
    );
    let mut sum = 0.0;
    for i in 0..kept {
        for j in 0..kept {
            if i != j {
                sum += gram[i * kept + j].abs();
            }
        }
    }
    Ok(sum / (kept as f64 * (kept - 1) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOrtho {
    pub name: String,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "chance_D")]
    pub chance_d: f64,
    pub rows: usize,
}

/// Deviation of every conv layer of `model` and of a freshly initialized
/// copy drawn from `rng`, at the given input shape.
pub fn ortho_report(model: &Model, input_shape: [usize; 3], rng: &mut Rng) -> Result<Vec<LayerOrtho>> {
    let mut spec = model.spec().clone();
    spec.input_shape = input_shape;
    let shapes = spec.activation_shapes()?;
    let chance = model_init(model.spec(), rng)?;
    let mut out = Vec::new();
    for (i, name) in model.conv_names().into_iter().enumerate() {
        let named = |e: Error| match e {
            Error::Size(msg) => Error::Size(format!("layer {name}: {msg}")),
            other => other,
        };
        let d = ortho_deviation(&build_dbt(&model.convs()[i], shapes[i]).map_err(named)?)?;
        let chance_d = ortho_deviation(&build_dbt(&chance.convs()[i], shapes[i]).map_err(named)?)?;
        let rows = {
            let s = model.convs()[i].output_shape(&shapes[i])?;
            s[0] * s[1] * s[2]
        };
        out.push(LayerOrtho {
            name,
            d,
            chance_d,
            rows,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::ConvGeometry;
    use crate::nn::model::{Downsampling, FirstLayerSpec, ModelSpec, Task, BlockSpec};
    use crate::tensor::Tensor;
    use crate::window::{make_window, WindowFamily, WindowSpec};

    fn random_layer(k: usize, c: usize, m: usize, stride: usize, seed: u64, window: bool) -> ConvLayer {
        let mut rng = Rng::new(seed);
        let w = rng.uniform_tensor(-1.0, 1.0, &[k, k, c, m]).unwrap();
        let b = rng.uniform_tensor(-1.0, 1.0, &[m]).unwrap();
        let win = window.then(|| make_window(WindowSpec::square(WindowFamily::Hamming, k)).unwrap());
        ConvLayer::new(w, b, ConvGeometry::same(k, stride), win).unwrap()
    }

    fn brute_force(dbt: &DbtMatrix) -> f64 {
        let rows: Vec<&[f64]> = (0..dbt.rows()).map(|r| dbt.row(r)).filter(|r| r.iter().any(|&v| v != 0.0)).collect();
        let n = rows.len();
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (mut dot, mut ni, mut nj) = (0.0, 0.0, 0.0);
                for k in 0..rows[i].len() {
                    dot += rows[i][k] * rows[j][k];
                    ni += rows[i][k] * rows[i][k];
                    nj += rows[j][k] * rows[j][k];
                }
                sum += (dot / (ni.sqrt() * nj.sqrt())).abs();
            }
        }
        sum / (n * (n - 1)) as f64
    }

    #[test]
    fn dbt_reproduces_forward() {
        for (k, stride, window) in [(3, 1, false), (3, 2, true), (5, 1, true), (1, 1, false)] {
            let layer = random_layer(k, 2, 3, stride, k as u64, window);
            let dbt = build_dbt(&layer, [2, 6, 6]).unwrap();
            let x = Rng::new(77).uniform_tensor(-1.0, 1.0, &[2, 6, 6]).unwrap();
            let y = layer.forward(&x).unwrap();
            let [m, oh, ow] = dbt.output_shape();
            assert_eq!(y.shape(), &[m, oh, ow]);
            for r in 0..dbt.rows() {
                let v: f64 = dbt.row(r).iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>()
                    + layer.bias().data()[r / (oh * ow)];
                assert!((v - y.data()[r]).abs() < 1e-10);
            }
        }
        let s1 = build_dbt(&random_layer(3, 1, 2, 1, 1, false), [1, 6, 6]).unwrap();
        let s2 = build_dbt(&random_layer(3, 1, 2, 2, 1, false), [1, 6, 6]).unwrap();
        assert_eq!(s1.rows(), 72);
        assert_eq!(s2.rows(), 18);
    }

    #[test]
    fn identity_conv_is_orthogonal() {
        let c = 3;
        let mut w = Tensor::zeros(&[1, 1, c, c]).unwrap();
        for i in 0..c {
            w.set(&[0, 0, i, i], 1.0).unwrap();
        }
        let layer = ConvLayer::new(w, Tensor::zeros(&[c]).unwrap(), ConvGeometry::same(1, 1), None).unwrap();
        let dbt = build_dbt(&layer, [c, 4, 4]).unwrap();
        for r in 0..dbt.rows() {
            assert_eq!(dbt.row(r).iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(dbt.row(r)[r], 1.0);
        }
        assert_eq!(ortho_deviation(&dbt).unwrap(), 0.0);
    }

    #[test]
    fn duplicated_channels() {
        let k = 2;
        let w = Tensor::new(&[k, k, 1, 2], 0.5).unwrap();
        let layer = ConvLayer::new(
            w,
            Tensor::zeros(&[2]).unwrap(),
            ConvGeometry {
                k_rows: k,
                k_cols: k,
                stride: k,
                pad: 0,
            },
            None,
        )
        .unwrap();
        let dbt = build_dbt(&layer, [1, 4, 4]).unwrap();
        let n = dbt.rows();
        assert_eq!(n, 8);
        assert_eq!(ortho_deviation(&dbt).unwrap(), 1.0 / (n - 1) as f64);
        assert_eq!(brute_force(&dbt), 1.0 / (n - 1) as f64);
    }

    #[test]
    fn matches_brute_force() {
        for seed in 0..5 {
            let layer = random_layer(3, 2, 3, 1 + (seed as usize % 2), seed, seed % 2 == 0);
            let dbt = build_dbt(&layer, [2, 5, 5]).unwrap();
            let d = ortho_deviation(&dbt).unwrap();
            assert!((d - brute_force(&dbt)).abs() < 1e-12);
        }
    }

    #[test]
    fn invariances() {
        let layer = random_layer(3, 2, 3, 1, 9, false);
        let base = ortho_deviation(&build_dbt(&layer, [2, 5, 5]).unwrap()).unwrap();
        // Scale one output channel.
        let mut w = layer.weights().clone();
        for v in w.data_mut().iter_mut().skip(1).step_by(3) {
            *v *= 3.5;
        }
        let scaled = ConvLayer::new(w.clone(), layer.bias().clone(), layer.geometry(), None).unwrap();
        let d = ortho_deviation(&build_dbt(&scaled, [2, 5, 5]).unwrap()).unwrap();
        assert!((d - base).abs() < 1e-12);
        // Swap output channels 0 and 2.
        let mut p = layer.weights().clone();
        for chunk in p.data_mut().chunks_exact_mut(3) {
            chunk.swap(0, 2);
        }
        let perm = ConvLayer::new(p, layer.bias().clone(), layer.geometry(), None).unwrap();
        let d = ortho_deviation(&build_dbt(&perm, [2, 5, 5]).unwrap()).unwrap();
        assert!((d - base).abs() < 1e-12);
    }

    #[test]
    fn windowed_dbt_equals_premultiplied() {
        let windowed = random_layer(5, 2, 2, 1, 3, true);
        let plain = ConvLayer::new(
            windowed.effective_kernel(),
            windowed.bias().clone(),
            windowed.geometry(),
            None,
        )
        .unwrap();
        assert_eq!(
            build_dbt(&windowed, [2, 6, 6]).unwrap().data(),
            build_dbt(&plain, [2, 6, 6]).unwrap().data()
        );
    }

    #[test]
    fn zero_rows_and_budget() {
        let layer = ConvLayer::new(
            Tensor::zeros(&[3, 3, 1, 2]).unwrap(),
            Tensor::zeros(&[2]).unwrap(),
            ConvGeometry::same(3, 1),
            None,
        )
        .unwrap();
        assert!(matches!(
            ortho_deviation(&build_dbt(&layer, [1, 4, 4]).unwrap()),
            Err(Error::Undefined(_))
        ));
        let mut w = Tensor::zeros(&[1, 1, 1, 3]).unwrap();
        w.data_mut().copy_from_slice(&[1.0, 0.0, 2.0]);
        let partial = ConvLayer::new(w, Tensor::zeros(&[3]).unwrap(), ConvGeometry::same(1, 1), None).unwrap();
        let dbt = build_dbt(&partial, [1, 2, 2]).unwrap();
        // Channel 1 rows are dropped; channels 0 and 2 share every pixel.
        assert!((ortho_deviation(&dbt).unwrap() - 8.0 / 56.0).abs() < 1e-15);
        assert!(matches!(
            build_dbt_with_budget(&random_layer(3, 1, 1, 1, 0, false), [1, 8, 8], 100),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn report_at_init_equals_chance() {
        let spec = ModelSpec {
            task: Task::Classification,
            input_shape: [1, 8, 8],
            first_layer: FirstLayerSpec {
                k: 3,
                stride: 2,
                out_channels: 2,
                window: None,
            },
            blocks: vec![BlockSpec {
                k: 3,
                out_channels: 3,
                window: None,
            }],
            downsampling: Downsampling::StridedConv,
            num_outputs: 2,
        };
        let model = model_init(&spec, &mut Rng::new(5)).unwrap();
        let rep = ortho_report(&model, [1, 8, 8], &mut Rng::new(5)).unwrap();
        assert_eq!(rep.len(), 2);
        assert_eq!(rep[0].name, "conv0");
        assert_eq!(rep[1].rows, 3 * 4 * 4);
        for l in &rep {
            assert_eq!(l.d, l.chance_d);
        }
        let json = serde_json::to_string(&rep[0]).unwrap();
        assert!(json.contains("\"D\"") && json.contains("\"chance_D\""));
    }
}

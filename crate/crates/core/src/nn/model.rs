//! Model description, initialization, forward and backward passes.
//!
//! Layout:
//!
//! ```text
//! x -> conv0 -> ReLU [-> 2x2 max pool] -> (conv_b -> ReLU)* -> global avg pool [-> FC]
//! ```
//!
//! Only the first layer downsamples: with a stride (`strided_conv`), with a
//! pooling layer after it (`max_pool`), or not at all (`none`). Every other
//! convolution has stride 1 and "same" padding `k / 2`.

use serde::{Deserialize, Serialize};

use crate::conv::{backward_accumulate, forward_with_kernel, max_pool2x2, max_pool2x2_backward};
use crate::conv::{ConvGeometry, ConvLayer, PoolIndices};
use crate::error::{Error, Result};
use crate::gemm::{gemm, MatRef};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::window::{make_window, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    FftRegression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downsampling {
    StridedConv,
    MaxPool,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstLayerSpec {
    pub k: usize,
    pub stride: usize,
    pub out_channels: usize,
    #[serde(default)]
    pub window: Option<WindowSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub k: usize,
    pub out_channels: usize,
    #[serde(default)]
    pub window: Option<WindowSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub task: Task,
    /// `[C, H, W]`
    pub input_shape: [usize; 3],
    pub first_layer: FirstLayerSpec,
    #[serde(default)]
    pub blocks: Vec<BlockSpec>,
    pub downsampling: Downsampling,
    pub num_outputs: usize,
}

fn check_window(window: &Option<WindowSpec>, k: usize, layer: usize) -> Result<()> {
    if let Some(w) = window {
        w.validate()?;
        if w.k_rows != k || w.k_cols != k {
            return Err(Error::Config(format!(
                "layer {layer}: window {}x{} does not match kernel {k}x{k}",
                w.k_rows, w.k_cols
            )));
        }
    }
    Ok(())
}

impl ModelSpec {
    /// One conv layer with `H * W` output channels, ReLU and global average
    /// pooling.
    pub fn fft_regression(size: usize, k: usize, window: Option<WindowSpec>) -> Self {
        ModelSpec {
            task: Task::FftRegression,
            input_shape: [1, size, size],
            first_layer: FirstLayerSpec {
                k,
                stride: 1,
                out_channels: size * size,
                window,
            },
            blocks: Vec::new(),
            downsampling: Downsampling::None,
            num_outputs: size * size,
        }
    }

    pub fn conv_count(&self) -> usize {
        1 + self.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!("input shape {:?} has an empty axis", self.input_shape)));
        }
        let f = &self.first_layer;
        if f.k == 0 || f.out_channels == 0 || f.stride == 0 {
            return Err(Error::Config("first layer needs positive k, stride and channels".into()));
        }
        match self.downsampling {
            Downsampling::StridedConv if f.stride < 2 => {
                return Err(Error::Config("strided_conv downsampling needs stride >= 2".into()))
            }
            Downsampling::MaxPool | Downsampling::None if f.stride != 1 => {
                return Err(Error::Config(format!(
                    "{:?} downsampling needs a stride-1 first layer",
                    self.downsampling
                )))
            }
            _ => {}
        }
        check_window(&f.window, f.k, 0)?;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.k == 0 || b.out_channels == 0 {
                return Err(Error::Config(format!("block {} needs positive k and channels", i + 1)));
            }
            check_window(&b.window, b.k, i + 1)?;
        }
        match self.task {
            Task::FftRegression => {
                if !self.blocks.is_empty() || self.downsampling != Downsampling::None {
                    return Err(Error::Config(
                        "fft regression uses a single stride-1 conv layer".into(),
                    ));
                }
                if self.num_outputs != h * w || f.out_channels != h * w {
                    return Err(Error::Config(format!(
                        "fft regression needs {} output channels and outputs",
                        h * w
                    )));
                }
            }
            Task::Classification => {
                if self.num_outputs < 2 {
                    return Err(Error::Config("classification needs at least 2 classes".into()));
                }
            }
        }
        self.activation_shapes().map(|_| ())
    }

    fn geometry(&self, layer: usize) -> ConvGeometry {
        if layer == 0 {
            ConvGeometry::same(self.first_layer.k, self.first_layer.stride)
        } else {
            ConvGeometry::same(self.blocks[layer - 1].k, 1)
        }
    }

    fn layer_out_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            self.first_layer.out_channels
        } else {
            self.blocks[layer - 1].out_channels
        }
    }

    fn layer_window(&self, layer: usize) -> Option<WindowSpec> {
        if layer == 0 {
            self.first_layer.window
        } else {
            self.blocks[layer - 1].window
        }
    }

    /// Input shape of every conv layer, then the final feature map shape.
    pub fn activation_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shapes = vec![self.input_shape];
        let mut cur = self.input_shape;
        for layer in 0..self.conv_count() {
            let g = self.geometry(layer);
            let (oh, ow) = g.output_hw(cur[1], cur[2])?;
            cur = [self.layer_out_channels(layer), oh, ow];
            if layer == 0 && self.downsampling == Downsampling::MaxPool {
                if oh % 2 != 0 || ow % 2 != 0 {
                    return Err(Error::Config(format!(
                        "max pooling needs even extents after the first layer, got {oh}x{ow}"
                    )));
                }
                cur = [cur[0], oh / 2, ow / 2];
            }
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn feature_width(&self) -> usize {
        self.layer_out_channels(self.conv_count() - 1)
    }

    pub fn has_fc(&self) -> bool {
        self.task == Task::Classification
    }

    /// Parameter count from the description alone.
    pub fn param_count(&self) -> usize {
        let mut c = self.input_shape[0];
        let mut total = 0;
        for layer in 0..self.conv_count() {
            let g = self.geometry(layer);
            let m = self.layer_out_channels(layer);
            total += g.k_rows * g.k_cols * c * m + m;
            c = m;
        }
        if self.has_fc() {
            total += c * self.num_outputs + self.num_outputs;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    convs: Vec<ConvLayer>,
    /// `[num_outputs, features]` weight and `[num_outputs]` bias.
    fc: Option<(Tensor, Tensor)>,
}

/// Uniform fan-in initialization: weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`
/// drawn layer by layer in flat order, biases zero.
pub fn model_init(spec: &ModelSpec, rng: &mut Rng) -> Result<Model> {
    spec.validate()?;
    let mut params = Vec::new();
    let mut c = spec.input_shape[0];
    for layer in 0..spec.conv_count() {
        let g = spec.geometry(layer);
        let m = spec.layer_out_channels(layer);
        let bound = 1.0 / ((g.k_rows * g.k_cols * c) as f64).sqrt();
        params.push(rng.uniform_tensor(-bound, bound, &[g.k_rows, g.k_cols, c, m])?);
        params.push(Tensor::zeros(&[m])?);
        c = m;
    }
    if spec.has_fc() {
        let bound = 1.0 / (c as f64).sqrt();
        params.push(rng.uniform_tensor(-bound, bound, &[spec.num_outputs, c])?);
        params.push(Tensor::zeros(&[spec.num_outputs])?);
    }
    Model::from_params(spec.clone(), params)
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Clone)]
struct Trace {
    /// ReLU output of every conv layer (before pooling).
    relu: Vec<Tensor>,
    pool: Option<(Tensor, PoolIndices)>,
    features: Vec<f64>,
}

/// Activations of a batch, consumed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Tensor,
    traces: Vec<Trace>,
}

/// Parameter gradients in [`Model::param_names`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Model {
    /// Builds a model from parameters in `param_names` order.
    pub fn from_params(spec: ModelSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let expected = 2 * spec.conv_count() + if spec.has_fc() { 2 } else { 0 };
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "model needs {expected} parameter tensors, got {}",
                params.len()
            )));
        }
        let mut it = params.into_iter();
        let mut convs = Vec::with_capacity(spec.conv_count());
        let mut c = spec.input_shape[0];
        for layer in 0..spec.conv_count() {
            let w = it.next().expect("counted");
            let b = it.next().expect("counted");
            let g = spec.geometry(layer);
            let m = spec.layer_out_channels(layer);
            if w.shape() != [g.k_rows, g.k_cols, c, m] {
                return Err(Error::Shape(format!(
                    "conv{layer}.weight has shape {:?}, expected {:?}",
                    w.shape(),
                    [g.k_rows, g.k_cols, c, m]
                )));
            }
            let window = spec.layer_window(layer).map(make_window).transpose()?;
            convs.push(ConvLayer::new(w, b, g, window)?);
            c = m;
        }
        let fc = if spec.has_fc() {
            let w = it.next().expect("counted");
            let b = it.next().expect("counted");
            if w.shape() != [spec.num_outputs, c] || b.shape() != [spec.num_outputs] {
                return Err(Error::Shape(format!(
                    "fc parameters {:?}/{:?} do not match [{}, {c}]",
                    w.shape(),
                    b.shape(),
                    spec.num_outputs
                )));
            }
            Some((w, b))
        } else {
            None
        };
        Ok(Model { spec, convs, fc })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn convs(&self) -> &[ConvLayer] {
        &self.convs
    }

    pub fn conv_names(&self) -> Vec<String> {
        (0..self.convs.len()).map(|i| format!("conv{i}")).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.convs.len() {
            names.push(format!("conv{i}.weight"));
            names.push(format!("conv{i}.bias"));
        }
        if self.fc.is_some() {
            names.push("fc.weight".into());
            names.push("fc.bias".into());
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push(c.weights());
            out.push(c.bias());
        }
        if let Some((w, b)) = &self.fc {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            // Two disjoint borrows of one layer.
            let (w, b) = c.params_mut();
            out.push(w);
            out.push(b);
        }
        if let Some((w, b)) = &mut self.fc {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Which parameters are weights (as opposed to biases).
    pub fn weight_mask(&self) -> Vec<bool> {
        self.param_names().iter().map(|n| n.ends_with(".weight")).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let s = batch.shape();
        if s.len() != 4 || s[1..] != self.spec.input_shape {
            return Err(Error::Shape(format!(
                "batch {s:?} does not match [B, {:?}]",
                self.spec.input_shape
            )));
        }
        Ok(s[0])
    }

    fn kernels(&self) -> Vec<Tensor> {
        self.convs.iter().map(|c| c.effective_kernel()).collect()
    }

    fn trace_sample(&self, x: &Tensor, kernels: &[Tensor], mut margin: Option<&mut f64>) -> Result<Trace> {
        let mut relu = Vec::with_capacity(self.convs.len());
        let mut pool = None;
        for (i, layer) in self.convs.iter().enumerate() {
            let input = match (i, &pool) {
                (0, _) => x,
                (1, Some((pooled, _))) => pooled,
                _ => &relu[i - 1],
            };
            let mut y = forward_with_kernel(input, &kernels[i], layer.bias(), layer.geometry())?;
            if let Some(m) = margin.as_deref_mut() {
                *m = y.data().iter().fold(*m, |a, v| a.min(v.abs()));
            }
            y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            relu.push(y);
            if i == 0 && self.spec.downsampling == Downsampling::MaxPool {
                let (pooled, idx) = max_pool2x2(&relu[0])?;
                if let Some(m) = margin.as_deref_mut() {
                    *m = m.min(pool_gap(&relu[0], &pooled, &idx));
                }
                pool = Some((pooled, idx));
            }
        }
        let last = match (self.convs.len(), &pool) {
            (1, Some((pooled, _))) => pooled,
            _ => relu.last().expect("at least one layer"),
        };
        let [c, h, w] = [last.shape()[0], last.shape()[1], last.shape()[2]];
        let area = (h * w) as f64;
        let features = last
            .data()
            .chunks_exact(h * w)
            .take(c)
            .map(|ch| ch.iter().fold(0.0, |a, &v| a + v) / area)
            .collect();
        Ok(Trace {
            relu,
            pool,
            features,
        })
    }

    fn head(&self, features: &[f64]) -> Vec<f64> {
        match &self.fc {
            None => features.to_vec(),
            Some((w, b)) => {
                let n = self.spec.num_outputs;
                let mut out = b.data().to_vec();
                gemm(
                    1.0,
                    MatRef::row_major(w.data(), n, features.len()),
                    MatRef::row_major(features, features.len(), 1),
                    1.0,
                    &mut out,
                );
                out
            }
        }
    }

    /// `[B, C, H, W]` to `[B, num_outputs]`, keeping activations for backward.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let b = self.check_batch(batch)?;
        let kernels = self.kernels();
        let n = self.spec.num_outputs;
        let mut out = Vec::with_capacity(b * n);
        let mut traces = Vec::with_capacity(b);
        for i in 0..b {
            let t = self.trace_sample(&batch.index_axis0(i)?, &kernels, None)?;
            out.extend(self.head(&t.features));
            traces.push(t);
        }
        Ok((
            Tensor::from_vec(&[b, n], out)?,
            ForwardCache {
                inputs: batch.clone(),
                traces,
            },
        ))
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let b = self.check_batch(batch)?;
        let kernels = self.kernels();
        let n = self.spec.num_outputs;
        let mut out = Vec::with_capacity(b * n);
        for i in 0..b {
            let t = self.trace_sample(&batch.index_axis0(i)?, &kernels, None)?;
            out.extend(self.head(&t.features));
        }
        Tensor::from_vec(&[b, n], out)
    }

    /// Outputs for one `[C, H, W]` sample.
    pub fn predict_one(&self, x: &Tensor) -> Result<Vec<f64>> {
        let [c, h, w] = self.spec.input_shape;
        Ok(self.predict(&x.reshape(&[1, c, h, w])?)?.into_data())
    }

    /// Back-propagates `dout` (`[B, num_outputs]`). Parameter gradients are
    /// summed over the batch; the input gradient is returned when asked for.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dout: &Tensor,
        param_grads: bool,
        input_grad: bool,
    ) -> Result<(Option<Gradients>, Option<Tensor>)> {
        let b = cache.traces.len();
        let n = self.spec.num_outputs;
        if dout.shape() != [b, n] {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match [{b}, {n}]",
                dout.shape()
            )));
        }
        let kernels = self.kernels();
        let mut dk: Vec<(Tensor, Tensor)> = self
            .convs
            .iter()
            .map(|c| (c.weights().zeros_like(), c.bias().zeros_like()))
            .collect();
        let mut dfc = self
            .fc
            .as_ref()
            .map(|(w, bias)| (w.zeros_like(), bias.zeros_like()));
        let mut dx_all = Vec::new();
        for (s, trace) in cache.traces.iter().enumerate() {
            let g = &dout.data()[s * n..(s + 1) * n];
            let dfeat: Vec<f64> = match (&self.fc, dfc.as_mut()) {
                (Some((w, _)), Some((dw, db))) => {
                    let f = trace.features.len();
                    if param_grads {
                        for (o, &go) in g.iter().enumerate() {
                            db.data_mut()[o] += go;
                            let row = &mut dw.data_mut()[o * f..(o + 1) * f];
                            for (r, &fv) in row.iter_mut().zip(&trace.features) {
                                *r += go * fv;
                            }
                        }
                    }
                    let mut d = vec![0.0; f];
                    gemm(
                        1.0,
                        MatRef::transposed(w.data(), f, n),
                        MatRef::row_major(g, n, 1),
                        0.0,
                        &mut d,
                    );
                    d
                }
                _ => g.to_vec(),
            };
            let x = cache.inputs.index_axis0(s)?;
            let dx = self.backward_sample(&x, trace, &kernels, &dfeat, &mut dk, param_grads, input_grad)?;
            if let Some(dx) = dx {
                dx_all.extend_from_slice(dx.data());
            }
        }
        let grads = param_grads.then(|| {
            let mut v = Vec::new();
            for (layer, (k, bias)) in self.convs.iter().zip(dk) {
                v.push(layer.kernel_grad_to_weight_grad(&k));
                v.push(bias);
            }
            if let Some((w, bias)) = dfc {
                v.push(w);
                v.push(bias);
            }
            Gradients(v)
        });
        let dx = if input_grad {
            Some(Tensor::from_vec(cache.inputs.shape(), dx_all)?)
        } else {
            None
        };
        Ok((grads, dx))
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_sample(
        &self,
        x: &Tensor,
        trace: &Trace,
        kernels: &[Tensor],
        dfeat: &[f64],
        dk: &mut [(Tensor, Tensor)],
        param_grads: bool,
        input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let layers = self.convs.len();
        let pooled_last = layers == 1 && trace.pool.is_some();
        let last_shape = match (&trace.pool, pooled_last) {
            (Some((p, _)), true) => p.shape().to_vec(),
            _ => trace.relu[layers - 1].shape().to_vec(),
        };
        let area = last_shape[1] * last_shape[2];
        let mut d = Tensor::zeros(&last_shape)?;
        for (ch, slot) in d.data_mut().chunks_exact_mut(area).enumerate() {
            slot.fill(dfeat[ch] / area as f64);
        }
        if pooled_last {
            d = max_pool2x2_backward(&d, &trace.pool.as_ref().expect("pooled").1)?;
        }
        for i in (0..layers).rev() {
            // ReLU mask: the output is positive exactly where the
            // pre-activation was.
            for (g, &a) in d.data_mut().iter_mut().zip(trace.relu[i].data()) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            let input = match (i, &trace.pool) {
                (0, _) => x,
                (1, Some((pooled, _))) => pooled,
                _ => &trace.relu[i - 1],
            };
            let need_dx = i > 0 || input_grad;
            let (k_acc, b_acc) = &mut dk[i];
            let acc = param_grads.then_some((k_acc, b_acc));
            let dx = backward_accumulate(input, &kernels[i], self.convs[i].geometry(), &d, acc, need_dx)?;
            if i == 0 {
                return Ok(dx);
            }
            d = dx.expect("requested");
            if i == 1 {
                if let Some((_, idx)) = &trace.pool {
                    d = max_pool2x2_backward(&d, idx)?;
                }
            }
        }
        unreachable!("loop returns at layer 0")
    }

    /// Distance of the batch from the nearest non-differentiable point:
    /// the smallest |pre-activation| of any ReLU and the smallest gap between
    /// the winner and the runner-up of any pooling window.
    pub fn kink_margin(&self, batch: &Tensor) -> Result<f64> {
        let b = self.check_batch(batch)?;
        let kernels = self.kernels();
        let mut margin = f64::INFINITY;
        for i in 0..b {
            self.trace_sample(&batch.index_axis0(i)?, &kernels, Some(&mut margin))?;
        }
        Ok(margin)
    }

    /// Outputs for one `[C, H, W]` sample together with the input gradient of
    /// every output.
    pub fn jacobian(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<Tensor>)> {
        let [c, h, w] = self.spec.input_shape;
        let (out, cache) = self.forward(&x.reshape(&[1, c, h, w])?)?;
        let n = self.spec.num_outputs;
        let mut grads = Vec::with_capacity(n);
        for o in 0..n {
            let mut e = Tensor::zeros(&[1, n])?;
            e.data_mut()[o] = 1.0;
            let (_, dx) = self.backward(&cache, &e, false, true)?;
            grads.push(dx.expect("requested").into_shape(&[c, h, w])?);
        }
        Ok((out.into_data(), grads))
    }

    /// Gradient of `sum_o weights[o] * output[o]` with respect to one input.
    pub fn input_gradient(&self, x: &Tensor, weights: &[f64]) -> Result<Tensor> {
        let [c, h, w] = self.spec.input_shape;
        let batch = x.reshape(&[1, c, h, w])?;
        let (_, cache) = self.forward(&batch)?;
        let dout = Tensor::from_vec(&[1, self.spec.num_outputs], weights.to_vec())?;
        let (_, dx) = self.backward(&cache, &dout, false, true)?;
        dx.expect("requested").into_shape(&[c, h, w])
    }
}

fn pool_gap(x: &Tensor, pooled: &Tensor, idx: &PoolIndices) -> f64 {
    let s = x.shape();
    let (h, w) = (s[1], s[2]);
    let mut gap = f64::INFINITY;
    for (&best, &top) in idx.argmax().iter().zip(pooled.data()) {
        // An all-zero window only holds inactive ReLUs, whose ties carry no
        // gradient.
        if top <= 0.0 {
            continue;
        }
        let ch = best / (h * w);
        let r = (best % (h * w)) / w / 2 * 2;
        let c = (best % w) / 2 * 2;
        let base = ch * h * w + r * w + c;
        for off in [0, 1, w, w + 1] {
            if base + off != best {
                gap = gap.min(top - x.data()[base + off]);
            }
        }
    }
    gap
}

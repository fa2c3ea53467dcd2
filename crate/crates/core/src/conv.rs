//! 2-D convolution with stride, symmetric zero padding and an optional
//! window on the kernel.
//!
//! Orientation is cross-correlation (no kernel flip):
//!
//! ```text
//! y[m, p, q] = b[m] + sum_{c,i,j} K[i, j, c, m] * xpad[c, p*s + i, q*s + j]
//! ```
//!
//! where `K` is the effective kernel (stored weights times the window) and
//! `xpad` the input padded with `pad` zeros on every spatial border. Weights
//! are laid out `[k_rows, k_cols, C, M]`, inputs `[C, H, W]`.
//!
//! The window is applied on every forward pass. Stored weights stay the
//! optimizer's parameters, and their gradient is the effective-kernel
//! gradient scaled by the window.
//!
//! Internally the layer lowers each sample to a `[k_rows*k_cols*C, H'*W']`
//! patch matrix and multiplies it with the kernel matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gemm::{gemm, MatRef};
use crate::tensor::Tensor;
use crate::window::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub k_rows: usize,
    pub k_cols: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    /// Square kernel with "same" padding `k / 2`.
    pub fn same(k: usize, stride: usize) -> Self {
        ConvGeometry {
            k_rows: k,
            k_cols: k,
            stride,
            pad: k / 2,
        }
    }

    fn extent(in_extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = in_extent + 2 * pad;
        if stride == 0 || k == 0 || padded < k {
            return None;
        }
        Some((padded - k) / stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (
            Self::extent(h, self.k_rows, self.stride, self.pad),
            Self::extent(w, self.k_cols, self.stride, self.pad),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::Shape(format!(
                "kernel {}x{} stride {} pad {} does not fit input {h}x{w}",
                self.k_rows, self.k_cols, self.stride, self.pad
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    weights: Tensor,
    bias: Tensor,
    geometry: ConvGeometry,
    window: Option<Window>,
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

impl ConvLayer {
    pub fn new(
        weights: Tensor,
        bias: Tensor,
        geometry: ConvGeometry,
        window: Option<Window>,
    ) -> Result<Self> {
        let s = weights.shape();
        if s.len() != 4 || s[0] != geometry.k_rows || s[1] != geometry.k_cols {
            return Err(Error::Shape(format!(
                "weights {s:?} do not match kernel {}x{}",
                geometry.k_rows, geometry.k_cols
            )));
        }
        if geometry.stride == 0 {
            return Err(Error::Shape("stride must be positive".into()));
        }
        if bias.shape() != [s[3]] {
            return Err(Error::Shape(format!(
                "bias {:?} does not match {} output channels",
                bias.shape(),
                s[3]
            )));
        }
        if let Some(w) = &window {
            let ws = w.spec();
            if ws.k_rows != geometry.k_rows || ws.k_cols != geometry.k_cols {
                return Err(Error::Shape(format!(
                    "window {}x{} does not match kernel {}x{}",
                    ws.k_rows, ws.k_cols, geometry.k_rows, geometry.k_cols
                )));
            }
        }
        Ok(ConvLayer {
            weights,
            bias,
            geometry,
            window,
        })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    pub fn params_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        (&mut self.weights, &mut self.bias)
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.geometry
    }

    pub fn window(&self) -> Option<&Window> {
        self.window.as_ref()
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[3]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Stored weights times the window, or the stored weights.
    pub fn effective_kernel(&self) -> Tensor {
        match &self.window {
            Some(w) => w.apply(&self.weights).expect("window validated at construction"),
            None => self.weights.clone(),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        if input.len() != 3 || input[0] != self.in_channels() {
            return Err(Error::Shape(format!(
                "input {input:?} does not match {} input channels",
                self.in_channels()
            )));
        }
        let (oh, ow) = self.geometry.output_hw(input[1], input[2])?;
        Ok([self.out_channels(), oh, ow])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let kernel = self.effective_kernel();
        forward_with_kernel(x, &kernel, &self.bias, self.geometry)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> Result<ConvGrads> {
        let kernel = self.effective_kernel();
        let mut dk = self.weights.zeros_like();
        let mut db = self.bias.zeros_like();
        let dx = backward_accumulate(x, &kernel, self.geometry, dy, Some((&mut dk, &mut db)), true)?
            .expect("input gradient requested");
        let dw = self.kernel_grad_to_weight_grad(&dk);
        Ok(ConvGrads { dx, dw, db })
    }

    /// Chain rule through the window: `dW = dK * U`.
    pub fn kernel_grad_to_weight_grad(&self, dk: &Tensor) -> Tensor {
        match &self.window {
            Some(w) => w.apply(dk).expect("window validated at construction"),
            None => dk.clone(),
        }
    }
}

pub fn conv2d_forward(x: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    layer.forward(x)
}

pub fn conv2d_backward(x: &Tensor, layer: &ConvLayer, dy: &Tensor) -> Result<ConvGrads> {
    layer.backward(x, dy)
}

struct Dims {
    c: usize,
    h: usize,
    w: usize,
    m: usize,
    oh: usize,
    ow: usize,
    taps: usize,
}

fn dims(x: &Tensor, kernel: &Tensor, g: ConvGeometry) -> Result<Dims> {
    let xs = x.shape();
    let ks = kernel.shape();
    if xs.len() != 3 {
        return Err(Error::Shape(format!("expected [C, H, W] input, got {xs:?}")));
    }
    if ks.len() != 4 || ks[0] != g.k_rows || ks[1] != g.k_cols || ks[2] != xs[0] {
        return Err(Error::Shape(format!(
            "kernel {ks:?} incompatible with input {xs:?} and geometry {g:?}"
        )));
    }
    let (oh, ow) = g.output_hw(xs[1], xs[2])?;
    Ok(Dims {
        c: xs[0],
        h: xs[1],
        w: xs[2],
        m: ks[3],
        oh,
        ow,
        taps: g.k_rows * g.k_cols * xs[0],
    })
}

/// Patch matrix `[taps, H'*W']`, row `(i*k_cols + j)*C + c`.
fn im2col(x: &[f64], d: &Dims, g: ConvGeometry) -> Vec<f64> {
    let p = d.oh * d.ow;
    let mut col = vec![0.0; d.taps * p];
    let mut row = 0;
    for i in 0..g.k_rows {
        for j in 0..g.k_cols {
            for c in 0..d.c {
                let dst = &mut col[row * p..(row + 1) * p];
                let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
                for op in 0..d.oh {
                    let hh = (op * g.stride + i) as isize - g.pad as isize;
                    if hh < 0 || hh >= d.h as isize {
                        continue;
                    }
                    let src = &plane[hh as usize * d.w..(hh as usize + 1) * d.w];
                    for oq in 0..d.ow {
                        let ww = (oq * g.stride + j) as isize - g.pad as isize;
                        if ww >= 0 && ww < d.w as isize {
                            dst[op * d.ow + oq] = src[ww as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    col
}

fn col2im(col: &[f64], d: &Dims, g: ConvGeometry, dx: &mut [f64]) {
    let p = d.oh * d.ow;
    let mut row = 0;
    for i in 0..g.k_rows {
        for j in 0..g.k_cols {
            for c in 0..d.c {
                let src = &col[row * p..(row + 1) * p];
                let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
                for op in 0..d.oh {
                    let hh = (op * g.stride + i) as isize - g.pad as isize;
                    if hh < 0 || hh >= d.h as isize {
                        continue;
                    }
                    for oq in 0..d.ow {
                        let ww = (oq * g.stride + j) as isize - g.pad as isize;
                        if ww >= 0 && ww < d.w as isize {
                            plane[hh as usize * d.w + ww as usize] += src[op * d.ow + oq];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Forward pass with an explicit effective kernel.
pub fn forward_with_kernel(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    g: ConvGeometry,
) -> Result<Tensor> {
    let d = dims(x, kernel, g)?;
    if bias.shape() != [d.m] {
        return Err(Error::Shape(format!(
            "bias {:?} does not match {} output channels",
            bias.shape(),
            d.m
        )));
    }
    let p = d.oh * d.ow;
    let col = im2col(x.data(), &d, g);
    let mut y = vec![0.0; d.m * p];
    for (m, row) in y.chunks_exact_mut(p.max(1)).enumerate().take(d.m) {
        row.fill(bias.data()[m]);
    }
    gemm(
        1.0,
        MatRef::transposed(kernel.data(), d.m, d.taps),
        MatRef::row_major(&col, d.taps, p),
        1.0,
        &mut y,
    );
    Tensor::from_vec(&[d.m, d.oh, d.ow], y)
}

/// Backward pass with an explicit effective kernel.
///
/// When `param_grads` is given, adds the effective-kernel gradient into `dk`
/// and the bias gradient into `db`, so a batch can be accumulated sample by
/// sample. Returns the input gradient when `need_dx` is set.
pub fn backward_accumulate(
    x: &Tensor,
    kernel: &Tensor,
    g: ConvGeometry,
    dy: &Tensor,
    param_grads: Option<(&mut Tensor, &mut Tensor)>,
    need_dx: bool,
) -> Result<Option<Tensor>> {
    let d = dims(x, kernel, g)?;
    if dy.shape() != [d.m, d.oh, d.ow] {
        return Err(Error::Shape(format!(
            "output gradient {:?} does not match forward output [{}, {}, {}]",
            dy.shape(),
            d.m,
            d.oh,
            d.ow
        )));
    }
    let p = d.oh * d.ow;
    if let Some((dk, db)) = param_grads {
        if dk.shape() != kernel.shape() || db.shape() != [d.m] {
            return Err(Error::Shape("gradient accumulators have wrong shapes".into()));
        }
        let col = im2col(x.data(), &d, g);
        gemm(
            1.0,
            MatRef::row_major(&col, d.taps, p),
            MatRef::transposed(dy.data(), p, d.m),
            1.0,
            dk.data_mut(),
        );
        for (m, acc) in db.data_mut().iter_mut().enumerate() {
            *acc += dy.data()[m * p..(m + 1) * p].iter().fold(0.0, |a, &v| a + v);
        }
    }
    if !need_dx {
        return Ok(None);
    }
    let mut dcol = vec![0.0; d.taps * p];
    gemm(
        1.0,
        MatRef::row_major(kernel.data(), d.taps, d.m),
        MatRef::row_major(dy.data(), d.m, p),
        0.0,
        &mut dcol,
    );
    let mut dx = vec![0.0; d.c * d.h * d.w];
    col2im(&dcol, &d, g, &mut dx);
    Ok(Some(Tensor::from_vec(&[d.c, d.h, d.w], dx)?))
}

/// Flat input offsets of the maximum in every 2x2 window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: [usize; 3],
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// 2x2 max pooling with stride 2. Ties go to the first element in scan
/// order (top-left, top-right, bottom-left, bottom-right).
pub fn max_pool2x2(x: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let s = x.shape();
    if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
        return Err(Error::Shape(format!(
            "2x2 max pooling needs [C, H, W] with even H and W, got {s:?}"
        )));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    let xd = x.data();
    for ch in 0..c {
        for p in 0..oh {
            for q in 0..ow {
                let base = ch * h * w + 2 * p * w + 2 * q;
                let mut best = base;
                for off in [1, w, w + 1] {
                    if xd[base + off] > xd[best] {
                        best = base + off;
                    }
                }
                y.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::from_vec(&[c, oh, ow], y)?,
        PoolIndices {
            input_shape: [c, h, w],
            argmax,
        },
    ))
}

pub fn max_pool2x2_backward(dy: &Tensor, indices: &PoolIndices) -> Result<Tensor> {
    if dy.len() != indices.argmax.len() {
        return Err(Error::Shape(format!(
            "pool gradient has {} elements, expected {}",
            dy.len(),
            indices.argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(&indices.input_shape)?;
    let dxd = dx.data_mut();
    for (&src, &g) in indices.argmax.iter().zip(dy.data()) {
        dxd[src] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::window::{make_window, WindowFamily, WindowSpec};

    /// Straight loop nest over the definition.
    fn direct(x: &Tensor, k: &Tensor, b: &Tensor, g: ConvGeometry) -> Tensor {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let m = k.shape()[3];
        let oh = (h + 2 * g.pad - g.k_rows) / g.stride + 1;
        let ow = (w + 2 * g.pad - g.k_cols) / g.stride + 1;
        let mut y = Tensor::zeros(&[m, oh, ow]).unwrap();
        for mm in 0..m {
            for p in 0..oh {
                for q in 0..ow {
                    let mut acc = b.data()[mm];
                    for cc in 0..c {
                        for i in 0..g.k_rows {
                            for j in 0..g.k_cols {
                                let hh = (p * g.stride + i) as isize - g.pad as isize;
                                let ww = (q * g.stride + j) as isize - g.pad as isize;
                                if hh >= 0 && ww >= 0 && (hh as usize) < h && (ww as usize) < w {
                                    acc += k.get(&[i, j, cc, mm]).unwrap()
                                        * x.get(&[cc, hh as usize, ww as usize]).unwrap();
                                }
                            }
                        }
                    }
                    y.set(&[mm, p, q], acc).unwrap();
                }
            }
        }
        y
    }

    fn layer(k: usize, c: usize, m: usize, stride: usize, pad: usize, seed: u64) -> ConvLayer {
        let mut rng = Rng::new(seed);
        let w = rng.uniform_tensor(-1.0, 1.0, &[k, k, c, m]).unwrap();
        let b = rng.uniform_tensor(-1.0, 1.0, &[m]).unwrap();
        ConvLayer::new(
            w,
            b,
            ConvGeometry {
                k_rows: k,
                k_cols: k,
                stride,
                pad,
            },
            None,
        )
        .unwrap()
    }

    #[test]
    fn identity_kernels() {
        let mut rng = Rng::new(4);
        let x = rng.uniform_tensor(-1.0, 1.0, &[1, 5, 6]).unwrap();
        let one = ConvLayer::new(
            Tensor::new(&[1, 1, 1, 1], 1.0).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
            ConvGeometry::same(1, 1),
            None,
        )
        .unwrap();
        assert_eq!(one.forward(&x).unwrap(), x);

        let mut delta = Tensor::zeros(&[3, 3, 1, 1]).unwrap();
        delta.set(&[1, 1, 0, 0], 1.0).unwrap();
        let d = ConvLayer::new(delta, Tensor::zeros(&[1]).unwrap(), ConvGeometry::same(3, 1), None)
            .unwrap();
        assert_eq!(d.forward(&x).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_ones_image() {
        let x = Tensor::new(&[1, 2, 2], 1.0).unwrap();
        let l = ConvLayer::new(
            Tensor::new(&[3, 3, 1, 1], 1.0).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
            ConvGeometry::same(3, 1),
            None,
        )
        .unwrap();
        let y = l.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[4.0; 4]);
        assert_eq!(direct(&x, l.weights(), l.bias(), l.geometry()), y);
    }

    #[test]
    fn matches_direct_loops() {
        for (seed, (k, c, m, s, pad, h, w)) in [
            (3, 2, 4, 1, 1, 6, 5),
            (5, 1, 3, 2, 2, 9, 8),
            (7, 3, 2, 2, 3, 12, 12),
            (2, 2, 2, 1, 0, 4, 5),
            (3, 1, 1, 3, 0, 7, 7),
        ]
        .into_iter()
        .enumerate()
        {
            let l = layer(k, c, m, s, pad, seed as u64);
            let x = Rng::new(100 + seed as u64)
                .uniform_tensor(-1.0, 1.0, &[c, h, w])
                .unwrap();
            let y = l.forward(&x).unwrap();
            let r = direct(&x, l.weights(), l.bias(), l.geometry());
            assert_eq!(y.shape(), r.shape());
            for (a, b) in y.data().iter().zip(r.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn geometry_violation() {
        let l = layer(5, 1, 1, 1, 0, 0);
        let x = Tensor::zeros(&[1, 3, 3]).unwrap();
        assert!(matches!(l.forward(&x), Err(Error::Shape(_))));
        let x = Tensor::zeros(&[2, 8, 8]).unwrap();
        assert!(matches!(l.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn window_scales_weight_gradient() {
        let plain = layer(5, 2, 3, 1, 2, 11);
        let win = make_window(WindowSpec::square(WindowFamily::Hamming, 5)).unwrap();
        let windowed = ConvLayer::new(
            plain.weights().clone(),
            plain.bias().clone(),
            plain.geometry(),
            Some(win.clone()),
        )
        .unwrap();
        let rect = ConvLayer::new(
            plain.weights().clone(),
            plain.bias().clone(),
            plain.geometry(),
            Some(make_window(WindowSpec::square(WindowFamily::Rectangular, 5)).unwrap()),
        )
        .unwrap();
        let mut rng = Rng::new(12);
        let x = rng.uniform_tensor(-1.0, 1.0, &[2, 6, 6]).unwrap();
        let dy = rng.uniform_tensor(-1.0, 1.0, &[3, 6, 6]).unwrap();

        // Rectangular window: dW equals the effective-kernel gradient.
        let g_rect = rect.backward(&x, &dy).unwrap();
        let g_plain = plain.backward(&x, &dy).unwrap();
        assert_eq!(g_rect.dw, g_plain.dw);

        // Hamming: same x, dy, stored weights -> corner grads scaled by the
        // corner coefficient relative to the rectangular run (the effective
        // kernels differ, but dK only depends on x and dy).
        let g_ham = windowed.backward(&x, &dy).unwrap();
        let e = (4.0f64 / 46.0).powi(2);
        for c in 0..2 {
            for m in 0..3 {
                let r = g_rect.dw.get(&[0, 0, c, m]).unwrap();
                let h = g_ham.dw.get(&[0, 0, c, m]).unwrap();
                assert!((h - r * e).abs() <= 1e-14 * r.abs().max(1.0));
            }
        }
    }

    #[test]
    fn windowed_equals_premultiplied_bit_exact() {
        let plain = layer(7, 2, 3, 2, 3, 21);
        let win = make_window(WindowSpec::square(WindowFamily::Hamming, 7)).unwrap();
        let windowed = ConvLayer::new(
            plain.weights().clone(),
            plain.bias().clone(),
            plain.geometry(),
            Some(win.clone()),
        )
        .unwrap();
        let pre = ConvLayer::new(
            win.apply(plain.weights()).unwrap(),
            plain.bias().clone(),
            plain.geometry(),
            None,
        )
        .unwrap();
        let x = Rng::new(22).uniform_tensor(-1.0, 1.0, &[2, 11, 11]).unwrap();
        let a = windowed.forward(&x).unwrap();
        let b = pre.forward(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn pooling() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = max_pool2x2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let dx = max_pool2x2_backward(&Tensor::new(&[1, 1, 1], 1.0).unwrap(), &idx).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 1.0]);

        let c = Tensor::new(&[2, 4, 4], 3.0).unwrap();
        let (y, idx) = max_pool2x2(&c).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.0));
        let dx = max_pool2x2_backward(&Tensor::new(&[2, 2, 2], 1.0).unwrap(), &idx).unwrap();
        for ch in 0..2 {
            for h in 0..4 {
                for w in 0..4 {
                    let expect = if h % 2 == 0 && w % 2 == 0 { 1.0 } else { 0.0 };
                    assert_eq!(dx.get(&[ch, h, w]).unwrap(), expect);
                }
            }
        }
        assert!(matches!(
            max_pool2x2(&Tensor::zeros(&[1, 3, 4]).unwrap()),
            Err(Error::Shape(_))
        ));
    }
}

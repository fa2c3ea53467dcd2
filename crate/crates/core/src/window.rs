//! Rectangular and Hamming windows for convolution kernels.
//!
//! The 1-D Hamming window of `k` taps is
//! `u[n] = a - (1 - a) cos(2 pi n / (k - 1))` for `n = 0..k-1` with
//! `a = 25/46`, so the first and last taps sit on the window endpoints and
//! keep the nonzero value `2a - 1 = 4/46`. The 2-D window is the outer
//! product of one 1-D window per kernel axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hamming's choice of the generalized cosine window coefficient.
pub const HAMMING_ALPHA: f64 = 25.0 / 46.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowFamily {
    Rectangular,
    Hamming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub family: WindowFamily,
    pub k_rows: usize,
    pub k_cols: usize,
}

impl WindowSpec {
    pub fn square(family: WindowFamily, k: usize) -> Self {
        WindowSpec {
            family,
            k_rows: k,
            k_cols: k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_rows == 0 || self.k_cols == 0 {
            return Err(Error::Size(format!(
                "window extents must be positive, got {}x{}",
                self.k_rows, self.k_cols
            )));
        }
        Ok(())
    }
}

/// Materialized `[k_rows, k_cols]` coefficient grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    spec: WindowSpec,
    coeffs: Tensor,
}

pub fn hamming_1d(k: usize) -> Result<Vec<f64>> {
    match k {
        0 => Err(Error::Size("Hamming window needs at least one tap".into())),
        1 => Ok(vec![1.0]),
        _ => {
            let n = (k - 1) as f64;
            let mut u: Vec<f64> = (0..k)
                .map(|i| {
                    HAMMING_ALPHA
                        - (1.0 - HAMMING_ALPHA) * (2.0 * std::f64::consts::PI * i as f64 / n).cos()
                })
                .collect();
            // Mirror so the window is symmetric bit for bit.
            for i in 0..k / 2 {
                u[k - 1 - i] = u[i];
            }
            Ok(u)
        }
    }
}

fn taps_1d(family: WindowFamily, k: usize) -> Result<Vec<f64>> {
    match family {
        WindowFamily::Rectangular => Ok(vec![1.0; k]),
        WindowFamily::Hamming => hamming_1d(k),
    }
}

pub fn make_window(spec: WindowSpec) -> Result<Window> {
    spec.validate()?;
    let rows = taps_1d(spec.family, spec.k_rows)?;
    let cols = taps_1d(spec.family, spec.k_cols)?;
    let data = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| r * c))
        .collect();
    let coeffs = Tensor::from_vec(&[spec.k_rows, spec.k_cols], data)?;
    Ok(Window { spec, coeffs })
}

impl Window {
    pub fn new(spec: WindowSpec) -> Result<Self> {
        make_window(spec)
    }

    pub fn spec(&self) -> WindowSpec {
        self.spec
    }

    pub fn coeffs(&self) -> &Tensor {
        &self.coeffs
    }

    pub fn is_rectangular(&self) -> bool {
        self.spec.family == WindowFamily::Rectangular
    }

    /// Multiply every `[k, k]` slice of a `[k, k, C, M]` weight tensor by the
    /// window. The input is left untouched.
    pub fn apply(&self, weights: &Tensor) -> Result<Tensor> {
        let s = weights.shape();
        if s.len() != 4 || s[0] != self.spec.k_rows || s[1] != self.spec.k_cols {
            return Err(Error::Shape(format!(
                "window {}x{} does not match weights {:?}",
                self.spec.k_rows, self.spec.k_cols, s
            )));
        }
        let inner = s[2] * s[3];
        let mut out = weights.clone();
        for (tap, chunk) in out.data_mut().chunks_exact_mut(inner).enumerate() {
            let c = self.coeffs.data()[tap];
            chunk.iter_mut().for_each(|w| *w *= c);
        }
        Ok(out)
    }
}

pub fn apply_window(weights: &Tensor, window: &Window) -> Result<Tensor> {
    window.apply(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn hamming_endpoints_and_center() {
        assert_eq!(hamming_1d(1).unwrap(), vec![1.0]);
        assert!(matches!(hamming_1d(0), Err(Error::Size(_))));
        let u = hamming_1d(11).unwrap();
        assert!((u[0] - 4.0 / 46.0).abs() < 1e-12);
        assert!((u[10] - 4.0 / 46.0).abs() < 1e-12);
        assert!((u[5] - 1.0).abs() < 1e-12);
        for i in 0..11 {
            assert_eq!(u[i].to_bits(), u[10 - i].to_bits());
        }
    }

    #[test]
    fn window_values() {
        let r = make_window(WindowSpec::square(WindowFamily::Rectangular, 3)).unwrap();
        assert!(r.coeffs().data().iter().all(|&v| v == 1.0));
        let h = make_window(WindowSpec::square(WindowFamily::Hamming, 3)).unwrap();
        let corner = (4.0f64 / 46.0).powi(2);
        assert!((h.coeffs().get(&[0, 0]).unwrap() - corner).abs() < 1e-15);
        assert!((corner - 0.007561).abs() < 1e-6);
        let h7 = make_window(WindowSpec::square(WindowFamily::Hamming, 7)).unwrap();
        assert!((h7.coeffs().get(&[3, 3]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_square_window_is_outer_product() {
        let w = make_window(WindowSpec {
            family: WindowFamily::Hamming,
            k_rows: 3,
            k_cols: 5,
        })
        .unwrap();
        let r = hamming_1d(3).unwrap();
        let c = hamming_1d(5).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                assert_eq!(w.coeffs().get(&[i, j]).unwrap(), r[i] * c[j]);
            }
        }
    }

    #[test]
    fn rectangular_application_is_identity() {
        let mut rng = Rng::new(1);
        let w = rng.uniform_tensor(-1.0, 1.0, &[5, 5, 2, 3]).unwrap();
        let win = make_window(WindowSpec::square(WindowFamily::Rectangular, 5)).unwrap();
        assert_eq!(apply_window(&w, &win).unwrap(), w);
    }

    #[test]
    fn ones_become_the_window() {
        let w = Tensor::new(&[3, 3, 1, 1], 1.0).unwrap();
        let win = make_window(WindowSpec::square(WindowFamily::Hamming, 3)).unwrap();
        let out = apply_window(&w, &win).unwrap();
        assert_eq!(out.data(), win.coeffs().data());
    }

    #[test]
    fn matches_per_slice_loop() {
        let mut rng = Rng::new(9);
        let w = rng.uniform_tensor(-1.0, 1.0, &[7, 7, 2, 3]).unwrap();
        let win = make_window(WindowSpec::square(WindowFamily::Hamming, 7)).unwrap();
        let out = apply_window(&w, &win).unwrap();
        for c in 0..2 {
            for m in 0..3 {
                for i in 0..7 {
                    for j in 0..7 {
                        let expect =
                            w.get(&[i, j, c, m]).unwrap() * win.coeffs().get(&[i, j]).unwrap();
                        assert_eq!(out.get(&[i, j, c, m]).unwrap(), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let w = Tensor::zeros(&[5, 5, 1, 1]).unwrap();
        let win = make_window(WindowSpec::square(WindowFamily::Hamming, 3)).unwrap();
        assert!(matches!(apply_window(&w, &win), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn bounds_and_symmetry(kr in 1usize..16, kc in 1usize..16, hamming in any::<bool>()) {
            let family = if hamming { WindowFamily::Hamming } else { WindowFamily::Rectangular };
            let w = make_window(WindowSpec { family, k_rows: kr, k_cols: kc }).unwrap();
            let max = w.coeffs().data().iter().cloned().fold(f64::MIN, f64::max);
            prop_assert!(max <= 1.0);
            prop_assert!(w.coeffs().data().iter().all(|&v| v > 0.0));
            if hamming && kr >= 2 && kc >= 2 {
                let min = w.coeffs().data().iter().cloned().fold(f64::MAX, f64::min);
                let e = 2.0 * HAMMING_ALPHA - 1.0;
                prop_assert!((min - e * e).abs() < 1e-15);
            }
            for i in 0..kr {
                for j in 0..kc {
                    let v = w.coeffs().get(&[i, j]).unwrap();
                    prop_assert_eq!(v, w.coeffs().get(&[kr - 1 - i, j]).unwrap());
                    prop_assert_eq!(v, w.coeffs().get(&[i, kc - 1 - j]).unwrap());
                }
            }
        }

        #[test]
        fn application_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = Rng::new(seed);
            let w1 = rng.uniform_tensor(-1.0, 1.0, &[5, 5, 2, 2]).unwrap();
            let w2 = rng.uniform_tensor(-1.0, 1.0, &[5, 5, 2, 2]).unwrap();
            let win = make_window(WindowSpec::square(WindowFamily::Hamming, 5)).unwrap();
            let lhs = apply_window(&w1.scale(a).add(&w2.scale(b)).unwrap(), &win).unwrap();
            let rhs = apply_window(&w1, &win).unwrap().scale(a)
                .add(&apply_window(&w2, &win).unwrap().scale(b)).unwrap();
            for (x, y) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

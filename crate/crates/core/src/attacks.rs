//! DeepFool and spatial-transformation attacks on image classifiers.

use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::loss::cross_entropy;
use crate::nn::model::{Model, Task};
use crate::nn::train::argmax;
use crate::tensor::Tensor;

/// Anything that maps a `[C, H, W]` image to class logits.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn logits(&self, x: &Tensor) -> Result<Vec<f64>>;
    /// Logits and the input gradient of every logit.
    fn jacobian(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<Tensor>)>;
}

impl Classifier for Model {
    fn num_classes(&self) -> usize {
        self.spec().num_outputs
    }

    fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.predict_one(x)
    }

    fn jacobian(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<Tensor>)> {
        Model::jacobian(self, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Deepfool,
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeepFoolConfig {
    pub max_iter: usize,
    pub overshoot: f64,
}

impl Default for DeepFoolConfig {
    fn default() -> Self {
        DeepFoolConfig {
            max_iter: 100,
            overshoot: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialConfig {
    /// Percent of the image height/width.
    pub max_translate_percent: f64,
    pub max_rotate_degrees: f64,
    pub grid_steps: usize,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        SpatialConfig {
            max_translate_percent: 12.5,
            max_rotate_degrees: 22.5,
            grid_steps: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    #[serde(default)]
    pub deepfool: DeepFoolConfig,
    #[serde(default)]
    pub spatial: SpatialConfig,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.deepfool.max_iter == 0 {
            return Err(Error::Config("deepfool max_iter must be >= 1".into()));
        }
        if !(self.deepfool.overshoot >= 0.0) {
            return Err(Error::Config("deepfool overshoot must be >= 0".into()));
        }
        let s = &self.spatial;
        if s.grid_steps == 0 {
            return Err(Error::Config("spatial grid_steps must be >= 1".into()));
        }
        if !(s.max_translate_percent >= 0.0) || !(s.max_rotate_degrees >= 0.0) {
            return Err(Error::Config("spatial budgets must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepFoolOutcome {
    pub success: bool,
    pub iterations: usize,
    pub perturbation_norm: f64,
    pub clean_prediction: usize,
    pub final_prediction: usize,
    #[serde(skip)]
    pub perturbed: Option<Tensor>,
}

fn l2(data: &[f64]) -> f64 {
    data.iter().fold(0.0, |a, &v| a + v * v).sqrt()
}

/// Untargeted DeepFool against `label`.
///
/// Each step linearizes the logit differences `f_k - f_k0` around the
/// current iterate and moves to the nearest linearized boundary; the iterate
/// is `x + (1 + overshoot) * r_total`. A sample the model already gets wrong
/// is reported as a success with zero perturbation.
pub fn deepfool<C: Classifier + ?Sized>(
    model: &C,
    x: &Tensor,
    label: usize,
    cfg: &DeepFoolConfig,
) -> Result<DeepFoolOutcome> {
    if !x.all_finite() {
        return Err(Error::Range("attack input must be finite".into()));
    }
    let (logits, mut grads) = model.jacobian(x)?;
    let k0 = argmax(&logits);
    if k0 != label {
        return Ok(DeepFoolOutcome {
            success: true,
            iterations: 0,
            perturbation_norm: 0.0,
            clean_prediction: k0,
            final_prediction: k0,
            perturbed: Some(x.clone()),
        });
    }
    let scale = 1.0 + cfg.overshoot;
    let mut r_tot = vec![0.0; x.len()];
    let mut f = logits;
    let mut current = x.clone();
    let mut pred = k0;
    let mut iterations = 0;
    while pred == k0 && iterations < cfg.max_iter {
        let mut best: Option<(f64, usize, f64, f64)> = None;
        for k in 0..f.len() {
            if k == k0 {
                continue;
            }
            let wn = grads[k]
                .data()
                .iter()
                .zip(grads[k0].data())
                .fold(0.0, |a, (p, q)| a + (p - q) * (p - q))
                .sqrt();
            if wn == 0.0 {
                continue;
            }
            let fk = (f[k] - f[k0]).abs();
            let dist = fk / wn;
            if best.is_none_or(|(d, ..)| dist < d) {
                best = Some((dist, k, fk, wn));
            }
        }
        let (_, l, fl, wn) = best.ok_or_else(|| {
            Error::Numeric(format!("deepfool stalled after {iterations} iterations: zero gradient differences"))
        })?;
        let step = fl / (wn * wn);
        for ((r, p), q) in r_tot.iter_mut().zip(grads[l].data()).zip(grads[k0].data()) {
            *r += step * (p - q);
        }
        iterations += 1;
        for ((c, &x0), &r) in current.data_mut().iter_mut().zip(x.data()).zip(&r_tot) {
            *c = x0 + scale * r;
        }
        let (nf, ng) = model.jacobian(&current)?;
        f = nf;
        grads = ng;
        pred = argmax(&f);
    }
    Ok(DeepFoolOutcome {
        success: pred != label,
        iterations,
        perturbation_norm: scale * l2(&r_tot),
        clean_prediction: k0,
        final_prediction: pred,
        perturbed: Some(current),
    })
}

/// Shift in pixels (`dy`, `dx`) and rotation in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialTransform {
    pub dy: f64,
    pub dx: f64,
    pub degrees: f64,
}

impl SpatialTransform {
    pub fn is_identity(&self) -> bool {
        self.dy == 0.0 && self.dx == 0.0 && self.degrees == 0.0
    }
}

/// `steps` evenly spaced values on `[-max, max]`, plus 0 if missing, sorted
/// and without duplicates.
pub fn grid_axis(max: f64, steps: usize) -> Vec<f64> {
    let mut v: Vec<f64> = if steps <= 1 || max == 0.0 {
        vec![0.0]
    } else {
        (0..steps)
            .map(|i| -max + 2.0 * max * i as f64 / (steps - 1) as f64)
            .collect()
    };
    if !v.contains(&0.0) {
        v.push(0.0);
    }
    // Snap the float noise of the midpoint to an exact zero.
    for x in &mut v {
        if x.abs() < 1e-12 * max.max(1.0) {
            *x = 0.0;
        }
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    v.dedup();
    v
}

/// All transforms of the search grid for an `h x w` image.
pub fn spatial_grid(cfg: &SpatialConfig, h: usize, w: usize) -> Vec<SpatialTransform> {
    let t = grid_axis(cfg.max_translate_percent, cfg.grid_steps);
    let r = grid_axis(cfg.max_rotate_degrees, cfg.grid_steps);
    let mut out = Vec::with_capacity(t.len() * t.len() * r.len());
    for &ty in &t {
        for &tx in &t {
            for &deg in &r {
                out.push(SpatialTransform {
                    dy: ty / 100.0 * h as f64,
                    dx: tx / 100.0 * w as f64,
                    degrees: deg,
                });
            }
        }
    }
    out
}

/// Rotates about the image center (positive angles turn clockwise with rows
/// pointing down), then translates; bilinear sampling with
/// zero outside the image. The identity returns the input unchanged.
pub fn apply_spatial(x: &Tensor, t: SpatialTransform) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected [C, H, W], got {s:?}")));
    }
    if t.is_identity() {
        return Ok(x.clone());
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = t.degrees.to_radians().sin_cos();
    let mut out = Tensor::zeros(s)?;
    let xd = x.data();
    let od = out.data_mut();
    let at = |ch: usize, r: isize, q: isize| -> f64 {
        if r < 0 || q < 0 || r as usize >= h || q as usize >= w {
            0.0
        } else {
            xd[(ch * h + r as usize) * w + q as usize]
        }
    };
    for p in 0..h {
        for q in 0..w {
            // Inverse map of the output pixel into the source image.
            let ry = p as f64 - t.dy - cy;
            let rx = q as f64 - t.dx - cx;
            let sy = cos * ry - sin * rx + cy;
            let sx = sin * ry + cos * rx + cx;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (a, b) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            for ch in 0..c {
                od[(ch * h + p) * w + q] = (1.0 - a) * ((1.0 - b) * at(ch, y0, x0) + b * at(ch, y0, x0 + 1))
                    + a * ((1.0 - b) * at(ch, y0 + 1, x0) + b * at(ch, y0 + 1, x0 + 1));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialOutcome {
    pub success: bool,
    pub transform: SpatialTransform,
    pub loss: f64,
    pub identity_loss: f64,
    pub clean_prediction: usize,
    pub final_prediction: usize,
}

/// Exhaustive grid search. A misclassifying transform beats any that keeps
/// the label; within each group the highest cross-entropy wins, ties going
/// to the earlier grid entry.
pub fn spatial_attack<C: Classifier + ?Sized>(
    model: &C,
    x: &Tensor,
    label: usize,
    cfg: &SpatialConfig,
) -> Result<SpatialOutcome> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected [C, H, W], got {s:?}")));
    }
    let clean = model.logits(x)?;
    let clean_prediction = argmax(&clean);
    let identity_loss = cross_entropy(&clean, label)?;
    let mut best: Option<(bool, f64, SpatialTransform, usize)> = None;
    for t in spatial_grid(cfg, s[1], s[2]) {
        let logits = if t.is_identity() {
            clean.clone()
        } else {
            model.logits(&apply_spatial(x, t)?)?
        };
        let pred = argmax(&logits);
        let wrong = pred != label;
        let loss = cross_entropy(&logits, label)?;
        let better = match best {
            None => true,
            Some((bw, bl, ..)) => (wrong && !bw) || (wrong == bw && loss > bl),
        };
        if better {
            best = Some((wrong, loss, t, pred));
        }
    }
    let (success, loss, transform, final_prediction) = best.expect("grid contains the identity");
    Ok(SpatialOutcome {
        success,
        transform,
        loss,
        identity_loss,
        clean_prediction,
        final_prediction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub kind: AttackKind,
    pub config: AttackConfig,
    pub samples: usize,
    pub clean_accuracy: f64,
    pub attacked_accuracy: f64,
    /// Samples where DeepFool found no usable gradient.
    pub stalls: usize,
    /// Perturbation norms of successful DeepFool attacks on correctly
    /// classified samples.
    pub perturbation_norms: Option<NormSummary>,
    /// Attacked images are never clipped to the input range.
    pub clipped: bool,
}

fn summarize(mut v: Vec<f64>) -> Option<NormSummary> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite norms"));
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    Some(NormSummary {
        count: n,
        mean: v.iter().sum::<f64>() / n as f64,
        median,
        max: v[n - 1],
    })
}

/// Runs the configured attack on every sample of a labelled dataset.
pub fn evaluate_robustness(model: &Model, ds: &LabeledDataset, cfg: &AttackConfig) -> Result<RobustnessReport> {
    cfg.validate()?;
    if model.spec().task != Task::Classification {
        return Err(Error::Config("attacks need a classification model".into()));
    }
    if ds.num_classes() != Some(model.spec().num_outputs) {
        return Err(Error::Data("dataset labels do not match the model's classes".into()));
    }
    let n = ds.len();
    if n == 0 {
        return Err(Error::Data("attack dataset is empty".into()));
    }
    let mut clean_ok = 0usize;
    let mut attacked_ok = 0usize;
    let mut stalls = 0usize;
    let mut norms = Vec::new();
    for i in 0..n {
        let x = ds.image(i)?;
        let label = ds.label(i).expect("labelled dataset");
        let clean_pred = argmax(&model.logits(&x)?);
        let correct = clean_pred == label;
        if correct {
            clean_ok += 1;
        }
        let still_correct = match cfg.kind {
            AttackKind::Deepfool => {
                if !correct {
                    false
                } else {
                    match deepfool(model, &x, label, &cfg.deepfool) {
                        Ok(o) => {
                            if o.success {
                                norms.push(o.perturbation_norm);
                            }
                            !o.success
                        }
                        Err(Error::Numeric(msg)) => {
                            log::warn!("sample {i}: {msg}");
                            stalls += 1;
                            true
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            AttackKind::Spatial => !spatial_attack(model, &x, label, &cfg.spatial)?.success,
        };
        if still_correct {
            attacked_ok += 1;
        }
    }
    Ok(RobustnessReport {
        kind: cfg.kind,
        config: *cfg,
        samples: n,
        clean_accuracy: clean_ok as f64 / n as f64,
        attacked_accuracy: attacked_ok as f64 / n as f64,
        stalls,
        perturbation_norms: summarize(norms),
        clipped: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{Split, Targets};
    use crate::nn::model::{model_init, Downsampling, FirstLayerSpec, ModelSpec};
    use crate::rng::Rng;

    /// Two logits `[0, w.x + b]`.
    struct Linear {
        w: Tensor,
        b: f64,
    }

    impl Classifier for Linear {
        fn num_classes(&self) -> usize {
            2
        }
        fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
            Ok(vec![0.0, self.w.data().iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>() + self.b])
        }
        fn jacobian(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<Tensor>)> {
            Ok((self.logits(x)?, vec![self.w.zeros_like(), self.w.clone()]))
        }
    }

    #[test]
    fn deepfool_reaches_hyperplane_distance() {
        let mut rng = Rng::new(3);
        let w = rng.uniform_tensor(-1.0, 1.0, &[1, 4, 4]).unwrap();
        let model = Linear { w: w.clone(), b: 0.3 };
        for seed in 0..10 {
            let x = Rng::new(seed).uniform_tensor(-1.0, 1.0, &[1, 4, 4]).unwrap();
            let f = model.logits(&x).unwrap()[1];
            let label = if f > 0.0 { 1 } else { 0 };
            let cfg = DeepFoolConfig::default();
            let o = deepfool(&model, &x, label, &cfg).unwrap();
            let expect = f.abs() / l2(w.data()) * (1.0 + cfg.overshoot);
            assert!(o.success);
            assert_eq!(o.iterations, 1);
            assert!((o.perturbation_norm / expect - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn deepfool_on_misclassified_sample_is_free() {
        let model = Linear { w: Tensor::new(&[1, 2, 2], 1.0).unwrap(), b: 0.0 };
        let x = Tensor::new(&[1, 2, 2], 1.0).unwrap();
        let o = deepfool(&model, &x, 0, &DeepFoolConfig::default()).unwrap();
        assert!(o.success);
        assert_eq!(o.iterations, 0);
        assert_eq!(o.perturbation_norm, 0.0);
    }

    #[test]
    fn deepfool_stall_and_budget() {
        let flat = Linear { w: Tensor::zeros(&[1, 2, 2]).unwrap(), b: 1.0 };
        let x = Tensor::new(&[1, 2, 2], 1.0).unwrap();
        assert!(matches!(
            deepfool(&flat, &x, 1, &DeepFoolConfig::default()),
            Err(Error::Numeric(_))
        ));
        // One undershooting step on a nonlinear model may leave the label.
        let spec = small_spec();
        let model = model_init(&spec, &mut Rng::new(2)).unwrap();
        let x = Rng::new(8).uniform_tensor(0.0, 1.0, &[1, 6, 6]).unwrap();
        let label = argmax(&model.logits(&x).unwrap());
        let cfg = DeepFoolConfig { max_iter: 1, overshoot: 0.0 };
        let o = deepfool(&model, &x, label, &cfg).unwrap();
        assert_eq!(o.iterations, 1);
        assert!(o.perturbation_norm > 0.0);
        assert_eq!(o.success, o.final_prediction != label);
    }

    fn small_spec() -> ModelSpec {
        ModelSpec {
            task: Task::Classification,
            input_shape: [1, 6, 6],
            first_layer: FirstLayerSpec { k: 3, stride: 1, out_channels: 4, window: None },
            blocks: vec![],
            downsampling: Downsampling::None,
            num_outputs: 3,
        }
    }

    #[test]
    fn grid_contains_identity() {
        assert_eq!(grid_axis(10.0, 5), vec![-10.0, -5.0, 0.0, 5.0, 10.0]);
        assert_eq!(grid_axis(10.0, 4).len(), 5);
        assert!(grid_axis(10.0, 4).contains(&0.0));
        assert_eq!(grid_axis(0.0, 5), vec![0.0]);
        assert_eq!(grid_axis(3.0, 1), vec![0.0]);
        let g = spatial_grid(&SpatialConfig::default(), 32, 32);
        assert_eq!(g.len(), 125);
        assert_eq!(g.iter().filter(|t| t.is_identity()).count(), 1);
        assert!(g.iter().any(|t| t.dx == 4.0 && t.degrees == -22.5));
    }

    #[test]
    fn zero_rotation_is_identity_and_shift_moves_pixels() {
        let x = Rng::new(1).uniform_tensor(0.0, 1.0, &[2, 5, 5]).unwrap();
        let id = SpatialTransform { dy: 0.0, dx: 0.0, degrees: 0.0 };
        assert_eq!(apply_spatial(&x, id).unwrap(), x);
        let shift = apply_spatial(&x, SpatialTransform { dy: 1.0, dx: 0.0, degrees: 0.0 }).unwrap();
        for c in 0..2 {
            for q in 0..5 {
                assert_eq!(shift.get(&[c, 0, q]).unwrap(), 0.0);
                for p in 1..5 {
                    assert_eq!(shift.get(&[c, p, q]).unwrap(), x.get(&[c, p - 1, q]).unwrap());
                }
            }
        }
        // A quarter turn of a 3x3 image is an exact permutation (up to rounding).
        let y = Tensor::from_vec(&[1, 3, 3], (0..9).map(|v| v as f64).collect()).unwrap();
        let r = apply_spatial(&y, SpatialTransform { dy: 0.0, dx: 0.0, degrees: 90.0 }).unwrap();
        let expect = [6.0, 3.0, 0.0, 7.0, 4.0, 1.0, 8.0, 5.0, 2.0];
        for (a, b) in r.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Sums the pixels inside a disk around the center, away from the
    /// corners that rotation fills with zeros.
    struct Disk {
        radius: f64,
    }

    impl Classifier for Disk {
        fn num_classes(&self) -> usize {
            2
        }
        fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
            let (h, w) = (x.shape()[1], x.shape()[2]);
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            let mut s = 0.0;
            for p in 0..h {
                for q in 0..w {
                    if ((p as f64 - cy).powi(2) + (q as f64 - cx).powi(2)).sqrt() <= self.radius {
                        s += x.get(&[0, p, q])?;
                    }
                }
            }
            Ok(vec![s, 0.0])
        }
        fn jacobian(&self, _: &Tensor) -> Result<(Vec<f64>, Vec<Tensor>)> {
            unreachable!()
        }
    }

    #[test]
    fn rotating_a_uniform_image_keeps_logits() {
        let x = Tensor::new(&[1, 16, 16], 0.7).unwrap();
        let model = Disk { radius: 6.0 };
        let base = model.logits(&x).unwrap();
        for deg in [-30.0, -7.5, 3.0, 22.5, 45.0, 90.0, 180.0] {
            let r = apply_spatial(&x, SpatialTransform { dy: 0.0, dx: 0.0, degrees: deg }).unwrap();
            let l = model.logits(&r).unwrap();
            assert!((l[0] - base[0]).abs() < 1e-9, "{deg}");
        }
    }

    #[test]
    fn spatial_attack_contract() {
        let model = model_init(&small_spec(), &mut Rng::new(4)).unwrap();
        let x = Rng::new(5).uniform_tensor(0.0, 1.0, &[1, 6, 6]).unwrap();
        let label = argmax(&model.logits(&x).unwrap());
        let zero = SpatialConfig { max_translate_percent: 0.0, max_rotate_degrees: 0.0, grid_steps: 5 };
        let o = spatial_attack(&model, &x, label, &zero).unwrap();
        assert!(!o.success);
        assert!(o.transform.is_identity());
        assert_eq!(o.loss, o.identity_loss);
        let big = SpatialConfig { max_translate_percent: 50.0, max_rotate_degrees: 90.0, grid_steps: 5 };
        for l in 0..3 {
            let o = spatial_attack(&model, &x, l, &big).unwrap();
            if !o.success {
                assert!(o.loss >= o.identity_loss);
            }
        }
    }

    fn labelled(model: &Model, n: usize) -> LabeledDataset {
        let imgs = Rng::new(9).uniform_tensor(0.0, 1.0, &[n, 1, 6, 6]).unwrap();
        // Half the labels agree with the model, the rest are shifted.
        let labels = (0..n)
            .map(|i| {
                let p = argmax(&model.logits(&imgs.index_axis0(i).unwrap()).unwrap());
                if i % 2 == 0 { p } else { (p + 1) % 3 }
            })
            .collect();
        LabeledDataset::new(imgs, Targets::Labels { labels, num_classes: 3 }, Split::Validation).unwrap()
    }

    #[test]
    fn robustness_accuracies() {
        let model = model_init(&small_spec(), &mut Rng::new(4)).unwrap();
        let ds = labelled(&model, 10);
        let zero = AttackConfig {
            kind: AttackKind::Spatial,
            deepfool: DeepFoolConfig::default(),
            spatial: SpatialConfig { max_translate_percent: 0.0, max_rotate_degrees: 0.0, grid_steps: 3 },
        };
        let r0 = evaluate_robustness(&model, &ds, &zero).unwrap();
        assert_eq!(r0.clean_accuracy, 0.5);
        assert_eq!(r0.attacked_accuracy, r0.clean_accuracy);
        let df = AttackConfig { kind: AttackKind::Deepfool, ..zero };
        let r1 = evaluate_robustness(&model, &ds, &df).unwrap();
        assert_eq!(r1.clean_accuracy, r0.clean_accuracy);
        assert!(r1.attacked_accuracy <= r1.clean_accuracy);
        let sp = AttackConfig { spatial: SpatialConfig::default(), ..zero };
        let r2 = evaluate_robustness(&model, &ds, &sp).unwrap();
        assert!(r2.attacked_accuracy <= r2.clean_accuracy);
        assert!(!r2.clipped);
    }

    #[test]
    fn config_json() {
        let c: AttackConfig = serde_json::from_str(r#"{"kind":"deepfool"}"#).unwrap();
        assert_eq!(c.deepfool.max_iter, 100);
        assert_eq!(c.deepfool.overshoot, 0.02);
        assert!(serde_json::from_str::<AttackConfig>(r#"{"kind":"spatial","foo":1}"#).is_err());
        let bad = AttackConfig { deepfool: DeepFoolConfig { max_iter: 0, overshoot: 0.0 }, ..c };
        assert!(bad.validate().is_err());
    }
}

//! Toy pretraining of the detail feature extractor.
//!
//! A small classifier head sits on the DFE embedding and the whole stack is
//! trained with cross-entropy and Adam on procedural textures.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dfe::{DfeCache, DfeModel};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::numerics::{leaky_grad, leaky_relu, log_sum_exp, Conv2d, Rng, Tensor, LEAKY_SLOPE};

/// Anything exposing its parameters as ordered flat slices.
pub trait Params {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;
}

impl Params for DfeModel {
    fn params(&self) -> Vec<&[f64]> {
        DfeModel::params(self)
    }
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        DfeModel::params_mut(self)
    }
}

// ---------------------------------------------------------------------------
// Classifier head

/// Conv, leaky ReLU and 2x2 average pooling, repeated, then a dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub stages: Vec<Conv2d>,
    pub fc_weight: Vec<f64>,
    pub fc_bias: Vec<f64>,
    pub in_h: usize,
    pub in_w: usize,
    pub classes: usize,
}

struct StageCache {
    input: Tensor,
    pre: Tensor,
}

pub struct HeadCache {
    stages: Vec<StageCache>,
    flat: Tensor,
}

fn pooled(n: usize, stages: usize) -> usize {
    (0..stages).fold(n, |n, _| n / 2)
}

impl ClassifierHead {
    /// `widths` gives the output channels of each conv stage.
    pub fn new(
        in_ch: usize,
        widths: &[usize],
        in_h: usize,
        in_w: usize,
        classes: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if classes < 2 {
            return arg_err("need at least 2 classes");
        }
        if widths.is_empty() || widths.contains(&0) {
            return arg_err("head widths must be non-empty and positive");
        }
        let (ph, pw) = (pooled(in_h, widths.len()), pooled(in_w, widths.len()));
        if ph == 0 || pw == 0 {
            return shape_err(format!(
                "{in_h}x{in_w} input is too small for {} pooling stages",
                widths.len()
            ));
        }
        let mut stages = Vec::new();
        let mut c = in_ch;
        for &w in widths {
            stages.push(Conv2d::random(c, w, 3, 1, 2f64.sqrt(), rng));
            c = w;
        }
        let d = c * ph * pw;
        let std = 1.0 / (d as f64).sqrt();
        let fc_weight = (0..classes * d).map(|_| std * rng.normal()).collect();
        Ok(Self {
            stages,
            fc_weight,
            fc_bias: vec![0.0; classes],
            in_h,
            in_w,
            classes,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            stages: self
                .stages
                .iter()
                .map(|s| Conv2d::zeros(s.in_ch(), s.out_ch(), s.kernel.kh, s.padding))
                .collect(),
            fc_weight: vec![0.0; self.fc_weight.len()],
            fc_bias: vec![0.0; self.classes],
            ..*self
        }
    }

    fn feature_len(&self) -> usize {
        self.fc_weight.len() / self.classes
    }

    pub fn forward(&self, z: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward_cached(z)?.0)
    }

    pub fn forward_cached(&self, z: &Tensor) -> Result<(Vec<f64>, HeadCache)> {
        if (z.height(), z.width()) != (self.in_h, self.in_w) {
            return shape_err(format!(
                "head expects {}x{} input, got {}x{}",
                self.in_h,
                self.in_w,
                z.height(),
                z.width()
            ));
        }
        let mut x = z.clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        for conv in &self.stages {
            let pre = conv.forward(&x)?;
            let next = avg_pool2(&leaky_relu(&pre, LEAKY_SLOPE));
            caches.push(StageCache { input: x, pre });
            x = next;
        }
        let d = self.feature_len();
        let logits = (0..self.classes)
            .map(|k| {
                let row = &self.fc_weight[k * d..(k + 1) * d];
                self.fc_bias[k] + row.iter().zip(x.data()).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        Ok((logits, HeadCache { stages: caches, flat: x }))
    }

    /// Input gradient; parameter gradients are added into `acc`.
    pub fn backward(&self, cache: &HeadCache, grad_logits: &[f64], acc: &mut ClassifierHead) -> Tensor {
        let d = self.feature_len();
        let flat = cache.flat.data();
        let mut g = vec![0.0; d];
        for (k, &gk) in grad_logits.iter().enumerate() {
            acc.fc_bias[k] += gk;
            let row = &self.fc_weight[k * d..(k + 1) * d];
            let arow = &mut acc.fc_weight[k * d..(k + 1) * d];
            for j in 0..d {
                arow[j] += gk * flat[j];
                g[j] += gk * row[j];
            }
        }
        let (c, h, w) = cache.flat.shape();
        let mut grad = Tensor::from_vec(c, h, w, g).expect("flat shape");
        for (i, (conv, sc)) in self.stages.iter().zip(&cache.stages).enumerate().rev() {
            let up = avg_unpool2(&grad, sc.pre.height(), sc.pre.width());
            let grad_pre = up.zip_map(&sc.pre, |g, p| g * leaky_grad(p, LEAKY_SLOPE));
            conv.accumulate_param_grads(&sc.input, &grad_pre, &mut acc.stages[i]);
            grad = conv.backward_input(&grad_pre, sc.input.height(), sc.input.width());
        }
        grad
    }
}

impl Params for ClassifierHead {
    fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.stages.iter().flat_map(|s| s.params()).collect();
        out.push(&self.fc_weight);
        out.push(&self.fc_bias);
        out
    }
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.stages.iter_mut().flat_map(|s| s.params_mut()).collect();
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out
    }
}

/// 2x2 average pooling; a trailing odd row or column is dropped.
pub fn avg_pool2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(c, oh, ow);
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let s = x.at(ch, 2 * y, 2 * xx)
                    + x.at(ch, 2 * y, 2 * xx + 1)
                    + x.at(ch, 2 * y + 1, 2 * xx)
                    + x.at(ch, 2 * y + 1, 2 * xx + 1);
                *out.at_mut(ch, y, xx) = 0.25 * s;
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool2`] for an `h x w` input.
pub fn avg_unpool2(g: &Tensor, h: usize, w: usize) -> Tensor {
    let (c, oh, ow) = g.shape();
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let v = 0.25 * g.at(ch, y, x);
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    *out.at_mut(ch, 2 * y + dy, 2 * x + dx) = v;
                }
            }
        }
    }
    out
}

/// Logits for one image: DFE embedding followed by the head.
pub fn forward_classify(model: &DfeModel, head: &ClassifierHead, image: &Tensor) -> Result<Vec<f64>> {
    head.forward(&model.embed(image)?)
}

// ---------------------------------------------------------------------------
// Loss and optimizer

/// Mean negative log-likelihood of `labels`; gradient `(softmax - onehot) / batch`.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != labels.len() {
        return shape_err(format!("{} logit rows for {} labels", logits.len(), labels.len()));
    }
    if logits.is_empty() {
        return arg_err("empty batch");
    }
    let b = logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &label) in logits.iter().zip(labels) {
        if label >= row.len() {
            return arg_err(format!("label {label} out of range for {} classes", row.len()));
        }
        let lse = log_sum_exp(row);
        loss += lse - row[label];
        let mut g: Vec<f64> = row.iter().map(|v| (v - lse).exp() / b).collect();
        g[label] -= 1.0 / b;
        grads.push(g);
    }
    Ok((loss / b, grads))
}

/// First and second moment estimates, one buffer per parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn for_params(params: &[&[f64]]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: Vec<&mut [f64]>,
    grads: &[&[f64]],
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return shape_err(format!(
            "adam: {} parameter slices, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return shape_err(format!("adam: slice {i} has mismatched lengths"));
        }
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Data

/// Procedural textures: gratings for even classes, checkerboards for odd.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyDataset {
    pub classes: usize,
    pub size: usize,
    pub noise: f64,
    pub seed: u64,
}

impl ToyDataset {
    pub fn new(classes: usize, size: usize, seed: u64) -> Self {
        Self { classes, size, noise: 0.05, seed }
    }

    pub fn label(&self, index: u64) -> usize {
        (index % self.classes as u64) as usize
    }

    /// Image `index`; a pure function of `(seed, index)`.
    pub fn sample(&self, index: u64) -> (Tensor, usize) {
        let label = self.label(index);
        let mut rng = Rng::with_stream(self.seed, index);
        let n = self.size;
        let kinds = self.classes.div_ceil(2);
        let variant = label / 2;
        let phase = rng.uniform(0.0, 2.0 * PI);
        let offset = (rng.below(8), rng.below(8));
        let tint: Vec<f64> = (0..3).map(|_| rng.uniform(0.6, 1.0)).collect();
        let mut img = Tensor::zeros(3, n, n);
        for y in 0..n {
            for x in 0..n {
                let base = if label.is_multiple_of(2) {
                    let theta = PI * variant as f64 / kinds as f64;
                    let u = x as f64 * theta.cos() + y as f64 * theta.sin();
                    0.5 + 0.5 * (2.0 * PI * u / 4.0 + phase).sin()
                } else {
                    let cell = 2 + variant;
                    (((x + offset.0) / cell + (y + offset.1) / cell) % 2) as f64
                };
                for c in 0..3 {
                    *img.at_mut(c, y, x) = tint[c] * base + self.noise * rng.normal();
                }
            }
        }
        (img, label)
    }
}

// ---------------------------------------------------------------------------
// Training loop

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub adam: AdamConfig,
    pub total_iters: u64,
    pub seed: u64,
    pub head_widths: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch: 32,
            decay_factor: 0.95,
            decay_every: 5000,
            adam: AdamConfig::default(),
            total_iters: 2000,
            seed: 7,
            head_widths: vec![16, 16],
        }
    }
}

impl TrainConfig {
    /// Step schedule `lr * decay_factor^floor(t / decay_every)`.
    pub fn lr_at(&self, t: u64) -> f64 {
        self.lr * self.decay_factor.powi((t / self.decay_every) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return arg_err(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch == 0 || self.decay_every == 0 {
            return arg_err("batch and decay_every must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return arg_err("decay_factor must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub iter: u64,
    pub loss: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub model: DfeModel,
    pub head: ClassifierHead,
    pub curve: Vec<CurvePoint>,
}

struct SampleGrads {
    loss: f64,
    model: DfeModel,
    head: ClassifierHead,
}

fn sample_grads(
    model: &DfeModel,
    head: &ClassifierHead,
    image: &Tensor,
    label: usize,
    batch: usize,
) -> Result<SampleGrads> {
    let (z, cache): (Tensor, DfeCache) = model.embed_cached(image)?;
    let (logits, hcache) = head.forward_cached(&z)?;
    let (loss, g) = cross_entropy(std::slice::from_ref(&logits), &[label])?;
    let grad_logits: Vec<f64> = g[0].iter().map(|v| v / batch as f64).collect();
    let mut gh = head.zeros_like();
    let grad_z = head.backward(&hcache, &grad_logits, &mut gh);
    let mut gm = model.zeros_like();
    model.backward(&cache, &grad_z, Some((&mut gm, image)));
    Ok(SampleGrads { loss, model: gm, head: gh })
}

fn add_into<P: Params>(acc: &mut P, g: &P) {
    for (a, b) in acc.params_mut().into_iter().zip(g.params()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// Trains `model` and `head` jointly. Batch `t` uses dataset indices
/// `t * batch .. (t + 1) * batch`; per-sample gradients are computed in
/// parallel and summed in index order, so results do not depend on the
/// thread count.
pub fn train(
    mut model: DfeModel,
    mut head: ClassifierHead,
    data: &ToyDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model_state = AdamState::for_params(&model.params());
    let mut head_state = AdamState::for_params(&head.params());
    let mut curve = Vec::with_capacity(cfg.total_iters as usize);
    for t in 0..cfg.total_iters {
        let start = t * cfg.batch as u64;
        let results: Vec<Result<SampleGrads>> = (0..cfg.batch as u64)
            .into_par_iter()
            .map(|b| {
                let (img, label) = data.sample(start + b);
                sample_grads(&model, &head, &img, label, cfg.batch)
            })
            .collect();
        let mut gm = model.zeros_like();
        let mut gh = head.zeros_like();
        let mut loss = 0.0;
        for r in results {
            let r = r?;
            loss += r.loss;
            add_into(&mut gm, &r.model);
            add_into(&mut gh, &r.head);
        }
        loss /= cfg.batch as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite training loss at iteration {t}")));
        }
        let lr = cfg.lr_at(t);
        adam_step(model.params_mut(), &gm.params(), &mut model_state, &cfg.adam, lr)?;
        adam_step(head.params_mut(), &gh.params(), &mut head_state, &cfg.adam, lr)?;
        curve.push(CurvePoint { iter: t, loss, lr });
    }
    Ok(TrainOutcome { model, head, curve })
}

/// Mean cross-entropy and accuracy over dataset indices `range`.
pub fn evaluate(
    model: &DfeModel,
    head: &ClassifierHead,
    data: &ToyDataset,
    range: std::ops::Range<u64>,
) -> Result<(f64, f64)> {
    let rows: Vec<Result<(Vec<f64>, usize)>> = range
        .into_par_iter()
        .map(|i| {
            let (img, label) = data.sample(i);
            Ok((forward_classify(model, head, &img)?, label))
        })
        .collect();
    let rows: Vec<(Vec<f64>, usize)> = rows.into_iter().collect::<Result<_>>()?;
    let correct = rows
        .iter()
        .filter(|(l, y)| argmax(l) == *y)
        .count();
    let (logits, labels): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let (loss, _) = cross_entropy(&logits, &labels)?;
    Ok((loss, correct as f64 / labels.len() as f64))
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Writes `iteration,loss,lr` rows with a header line.
pub fn write_curve_csv(curve: &[CurvePoint], mut w: impl Write) -> Result<()> {
    writeln!(w, "iteration,loss,lr")?;
    for p in curve {
        writeln!(w, "{},{:.16e},{:.16e}", p.iter, p.loss, p.lr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfe::DfeConfig;
    use crate::numerics::{finite_diff_grad, rel_error};

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let (l, _) = cross_entropy(&[vec![0.3; 5], vec![-1.0; 5]], &[0, 4]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_margin_limit() {
        let l = |m: f64| cross_entropy(&[vec![m, 0.0, 0.0]], &[0]).unwrap().0;
        assert!(l(5.0) < l(1.0) && l(40.0) < 1e-15);
    }

    #[test]
    fn cross_entropy_matches_oracle_and_fd() {
        let mut rng = Rng::new(4);
        let logits: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| 3.0 * rng.normal()).collect()).collect();
        let labels = [1, 3, 0];
        let (loss, grads) = cross_entropy(&logits, &labels).unwrap();
        let oracle: f64 = logits
            .iter()
            .zip(&labels)
            .map(|(row, &y)| {
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                -(row[y].exp() / z).ln()
            })
            .sum::<f64>()
            / 3.0;
        assert!((loss - oracle).abs() < 1e-12);
        let flat = Tensor::from_vec(1, 3, 4, logits.concat()).unwrap();
        let fd = finite_diff_grad(
            |t| {
                let rows: Vec<Vec<f64>> = t.data().chunks(4).map(|c| c.to_vec()).collect();
                Ok(cross_entropy(&rows, &labels)?.0)
            },
            &flat,
            1e-6,
        )
        .unwrap();
        assert!(rel_error(&grads.concat(), fd.data()) < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        assert!(cross_entropy(&[vec![0.0; 3]], &[3]).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState { m: vec![vec![0.5, 0.5]], v: vec![vec![1.0, 1.0]], t: 3 };
        let before = p.clone();
        adam_step(vec![&mut p], &[&[0.0, 0.0]], &mut st, &AdamConfig::default(), 0.0).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.m[0], vec![0.45, 0.45]);
        assert!((st.v[0][0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_sign() {
        let mut p = vec![0.0, 0.0, 0.0];
        let g = [3.0, -0.2, 50.0];
        let mut st = AdamState::for_params(&[&p]);
        adam_step(vec![&mut p], &[&g], &mut st, &AdamConfig::default(), 1e-3).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            assert!((pi + 1e-3 * gi.signum()).abs() < 1e-9, "{pi}");
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = vec![0.0; 2];
        let mut st = AdamState::for_params(&[&p]);
        assert!(adam_step(vec![&mut p], &[&[1.0]], &mut st, &AdamConfig::default(), 1e-3).is_err());
    }

    #[test]
    fn lr_schedule_steps() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 5e-4);
        assert_eq!(c.lr_at(4999), 5e-4);
        assert!((c.lr_at(5000) - 5e-4 * 0.95).abs() < 1e-18);
        assert!((c.lr_at(10000) - 5e-4 * 0.95 * 0.95).abs() < 1e-18);
    }

    #[test]
    fn pool_adjoint() {
        let mut rng = Rng::new(9);
        let x = Tensor::randn(2, 5, 6, &mut rng);
        let g = Tensor::randn(2, 2, 3, &mut rng);
        let lhs = avg_pool2(&x).dot(&g);
        let rhs = x.dot(&avg_unpool2(&g, 5, 6));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_head_gives_uniform() {
        let mut rng = Rng::new(1);
        let model = DfeModel::new(DfeConfig::with_channels(4), &mut rng).unwrap();
        let head = ClassifierHead::new(4, &[4], 8, 8, 3, &mut rng).unwrap().zeros_like();
        let (img, _) = ToyDataset::new(3, 8, 0).sample(0);
        let logits = forward_classify(&model, &head, &img).unwrap();
        assert_eq!(logits, vec![0.0; 3]);
        let (l, _) = cross_entropy(&[logits], &[1]).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn head_gradients_match_fd() {
        let mut rng = Rng::new(2);
        let head = ClassifierHead::new(3, &[4, 3], 8, 8, 3, &mut rng).unwrap();
        let z = Tensor::randn(3, 8, 8, &mut rng);
        let (_, cache) = head.forward_cached(&z).unwrap();
        let mut acc = head.zeros_like();
        let w = [0.3, -1.0, 0.7];
        let gz = head.backward(&cache, &w, &mut acc);
        let f = |h: &ClassifierHead, z: &Tensor| -> f64 {
            h.forward(z).unwrap().iter().zip(w).map(|(a, b)| a * b).sum()
        };
        let fd = finite_diff_grad(|t| Ok(f(&head, t)), &z, 1e-6).unwrap();
        assert!(rel_error(gz.data(), fd.data()) < 1e-6);
        // spot check a few parameters
        for (slice, idx) in [(0usize, 5usize), (1, 2), (4, 7), (5, 1)] {
            let mut hp = head.clone();
            let e = 1e-6;
            hp.params_mut()[slice][idx] += e;
            let up = f(&hp, &z);
            hp.params_mut()[slice][idx] -= 2.0 * e;
            let dn = f(&hp, &z);
            let num = (up - dn) / (2.0 * e);
            let ana = acc.params()[slice][idx];
            assert!((num - ana).abs() < 1e-6 * (1.0 + ana.abs()), "{slice}/{idx}: {num} vs {ana}");
        }
    }

    #[test]
    fn dataset_is_pure() {
        let d = ToyDataset::new(4, 8, 3);
        assert_eq!(d.sample(11), d.sample(11));
        assert_ne!(d.sample(11).0, d.sample(15).0);
        assert_eq!(d.sample(6).1, 2);
    }

    #[test]
    fn zero_iterations_leave_model_unchanged() {
        let mut rng = Rng::new(5);
        let model = DfeModel::new(DfeConfig::with_channels(4), &mut rng).unwrap();
        let head = ClassifierHead::new(4, &[4], 8, 8, 2, &mut rng).unwrap();
        let cfg = TrainConfig { total_iters: 0, ..TrainConfig::default() };
        let out = train(model.clone(), head.clone(), &ToyDataset::new(2, 8, 0), &cfg).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.head, head);
        assert!(out.curve.is_empty());
    }

    #[test]
    fn short_run_reduces_loss_deterministically() {
        let run = || {
            let mut rng = Rng::new(7);
            let model = DfeModel::new(DfeConfig::with_channels(4), &mut rng).unwrap();
            let head = ClassifierHead::new(4, &[4], 8, 8, 2, &mut rng).unwrap();
            let cfg = TrainConfig { total_iters: 40, batch: 4, lr: 5e-3, ..TrainConfig::default() };
            train(model, head, &ToyDataset::new(2, 8, 1), &cfg).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.model, b.model);
        let first = a.curve[..5].iter().map(|p| p.loss).sum::<f64>();
        let last = a.curve[35..].iter().map(|p| p.loss).sum::<f64>();
        assert!(last < first, "{first} -> {last}");
    }
}

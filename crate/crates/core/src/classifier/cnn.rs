//! Two 3x3 convolution blocks (ReLU, 2x2 max-pool) followed by two fully
//! connected layers, with reverse-mode gradients written out by hand.
//!
//! Activations are kept channel-major (`C x H x W`); images are converted
//! on the way in and gradients converted back on the way out.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Split, SyntheticDataset};
use super::{argmax, cross_entropy_loss, logit_gradient, Classifier};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::optim::{Adam, AdamConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 3,
            conv1_filters: 6,
            conv2_filters: 12,
            hidden: 32,
            classes: 10,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if !self.height.is_multiple_of(4) || !self.width.is_multiple_of(4) || self.height == 0 || self.width == 0 {
            return Err(Error::domain(format!(
                "input {}x{} must be a positive multiple of 4 on each side",
                self.height, self.width
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::domain("input must have 1 or 3 channels"));
        }
        if self.conv1_filters == 0 || self.conv2_filters == 0 || self.hidden == 0 {
            return Err(Error::domain("layer widths must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::domain("a classifier needs at least 2 classes"));
        }
        Ok(())
    }

    fn flat(&self) -> usize {
        self.conv2_filters * (self.height / 4) * (self.width / 4)
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let c1w = take(self.conv1_filters * self.channels * 9);
        let c1b = take(self.conv1_filters);
        let c2w = take(self.conv2_filters * self.conv1_filters * 9);
        let c2b = take(self.conv2_filters);
        let f1w = take(self.hidden * self.flat());
        let f1b = take(self.hidden);
        let f2w = take(self.classes * self.hidden);
        let f2b = take(self.classes);
        Layout {
            c1w,
            c1b,
            c2w,
            c2b,
            f1w,
            f1b,
            f2w,
            f2b,
            total: at,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone)]
struct Layout {
    c1w: std::ops::Range<usize>,
    c1b: std::ops::Range<usize>,
    c2w: std::ops::Range<usize>,
    c2b: std::ops::Range<usize>,
    f1w: std::ops::Range<usize>,
    f1b: std::ops::Range<usize>,
    f2w: std::ops::Range<usize>,
    f2b: std::ops::Range<usize>,
    total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNet {
    architecture: Architecture,
    labels: Vec<String>,
    params: Vec<f64>,
}

struct Cache {
    x: Vec<f64>,
    z1: Vec<f64>,
    p1: Vec<f64>,
    idx1: Vec<usize>,
    z2: Vec<f64>,
    p2: Vec<f64>,
    idx2: Vec<usize>,
    h: Vec<f64>,
    logits: Vec<f64>,
}

impl ConvNet {
    /// He-normal initialization from `seed`.
    pub fn initialize(architecture: Architecture, labels: Vec<String>, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let layout = architecture.layout();
        let mut params = vec![0.0; layout.total];
        let mut rng = rng::stream(seed, "convnet-init");
        let a = &architecture;
        for (range, fan_in) in [
            (layout.c1w.clone(), a.channels * 9),
            (layout.c2w.clone(), a.conv1_filters * 9),
            (layout.f1w.clone(), a.flat()),
            (layout.f2w.clone(), a.hidden),
        ] {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for p in &mut params[range] {
                *p = normal.sample(&mut rng);
            }
        }
        Self::from_parameters(architecture, labels, params)
    }

    pub fn from_parameters(architecture: Architecture, labels: Vec<String>, params: Vec<f64>) -> Result<Self> {
        architecture.validate()?;
        let expected = architecture.parameter_count();
        if params.len() != expected {
            return Err(Error::dimension(format!("{expected} parameters"), format!("{} parameters", params.len())));
        }
        if labels.len() != architecture.classes {
            return Err(Error::dimension(
                format!("{} labels", architecture.classes),
                format!("{} labels", labels.len()),
            ));
        }
        Ok(Self {
            architecture,
            labels,
            params,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: ConvNet = serde_json::from_str(text)
            .map_err(|e| Error::config("weights", format!("unreadable weights file: {e}")))?;
        Self::from_parameters(net.architecture, net.labels, net.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn check(&self, x: &Image) -> Result<()> {
        let a = &self.architecture;
        if x.shape() != (a.height, a.width, a.channels) {
            return Err(Error::dimension(
                format!("({}, {}, {})", a.height, a.width, a.channels),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    fn forward(&self, x: &Image) -> Cache {
        let a = &self.architecture;
        let l = a.layout();
        let p = &self.params;
        let (h, w) = (a.height, a.width);

        let mut xc = vec![0.0; a.channels * h * w];
        for (i, &v) in x.data().iter().enumerate() {
            let ch = i % a.channels;
            let pix = i / a.channels;
            xc[ch * h * w + pix] = v;
        }

        let mut z1 = vec![0.0; a.conv1_filters * h * w];
        conv_forward(&xc, a.channels, h, w, &p[l.c1w.clone()], &p[l.c1b.clone()], a.conv1_filters, &mut z1);
        let r1: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();
        let (p1, idx1) = max_pool(&r1, a.conv1_filters, h, w);

        let (h2, w2) = (h / 2, w / 2);
        let mut z2 = vec![0.0; a.conv2_filters * h2 * w2];
        conv_forward(&p1, a.conv1_filters, h2, w2, &p[l.c2w.clone()], &p[l.c2b.clone()], a.conv2_filters, &mut z2);
        let r2: Vec<f64> = z2.iter().map(|&v| v.max(0.0)).collect();
        let (p2, idx2) = max_pool(&r2, a.conv2_filters, h2, w2);

        let hidden: Vec<f64> = dense(&p[l.f1w.clone()], &p[l.f1b.clone()], &p2)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let logits = dense(&p[l.f2w.clone()], &p[l.f2b.clone()], &hidden);
        Cache {
            x: xc,
            z1,
            p1,
            idx1,
            z2,
            p2,
            idx2,
            h: hidden,
            logits,
        }
    }

    /// Backpropagates `dlogits`. Accumulates parameter gradients into
    /// `param_grad` when given; returns the image gradient (HWC) when asked.
    fn backward(&self, cache: &Cache, dlogits: &[f64], param_grad: Option<&mut [f64]>, want_input: bool) -> Option<Vec<f64>> {
        let a = &self.architecture;
        let l = a.layout();
        let p = &self.params;
        let (h, w) = (a.height, a.width);
        let (h2, w2) = (h / 2, w / 2);
        let mut scratch;
        let grads: &mut [f64] = match param_grad {
            Some(g) => g,
            None => {
                scratch = Vec::new();
                &mut scratch
            }
        };
        let with_params = !grads.is_empty();

        // fc2
        let mut dh = dense_backward_input(&p[l.f2w.clone()], dlogits, a.hidden);
        if with_params {
            outer_accumulate(&mut grads[l.f2w.clone()], dlogits, &cache.h);
            add_into(&mut grads[l.f2b.clone()], dlogits);
        }
        for (d, &hv) in dh.iter_mut().zip(&cache.h) {
            if hv <= 0.0 {
                *d = 0.0;
            }
        }
        // fc1
        let dp2 = dense_backward_input(&p[l.f1w.clone()], &dh, a.flat());
        if with_params {
            outer_accumulate(&mut grads[l.f1w.clone()], &dh, &cache.p2);
            add_into(&mut grads[l.f1b.clone()], &dh);
        }
        // pool2 + relu2
        let mut dz2 = vec![0.0; cache.z2.len()];
        for (&i, &g) in cache.idx2.iter().zip(&dp2) {
            dz2[i] += g;
        }
        for (d, &z) in dz2.iter_mut().zip(&cache.z2) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        // conv2
        let mut dp1 = vec![0.0; cache.p1.len()];
        {
            let (gw, gb) = if with_params {
                let (lo, hi) = grads.split_at_mut(l.c2b.start);
                (Some(&mut lo[l.c2w.clone()]), Some(&mut hi[..l.c2b.len()]))
            } else {
                (None, None)
            };
            conv_backward(&cache.p1, a.conv1_filters, h2, w2, &p[l.c2w.clone()], a.conv2_filters, &dz2, gw, gb, Some(&mut dp1));
        }
        if !with_params && !want_input {
            return None;
        }
        // pool1 + relu1
        let mut dz1 = vec![0.0; cache.z1.len()];
        for (&i, &g) in cache.idx1.iter().zip(&dp1) {
            dz1[i] += g;
        }
        for (d, &z) in dz1.iter_mut().zip(&cache.z1) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        // conv1
        let mut dx = want_input.then(|| vec![0.0; cache.x.len()]);
        {
            let (gw, gb) = if with_params {
                let (lo, hi) = grads.split_at_mut(l.c1b.start);
                (Some(&mut lo[l.c1w.clone()]), Some(&mut hi[..l.c1b.len()]))
            } else {
                (None, None)
            };
            conv_backward(&cache.x, a.channels, h, w, &p[l.c1w.clone()], a.conv1_filters, &dz1, gw, gb, dx.as_deref_mut());
        }
        dx.map(|dxc| {
            let plane = h * w;
            let mut out = vec![0.0; dxc.len()];
            for (i, o) in out.iter_mut().enumerate() {
                *o = dxc[(i % a.channels) * plane + i / a.channels];
            }
            out
        })
    }

    /// Loss and accumulated parameter gradient for one labelled image.
    fn accumulate_parameter_gradient(&self, x: &Image, label: usize, grads: &mut [f64]) -> Result<f64> {
        self.check(x)?;
        let cache = self.forward(x);
        let loss = cross_entropy_loss(&cache.logits, label)?;
        let dlogits = logit_gradient(&cache.logits, label);
        self.backward(&cache, &dlogits, Some(grads), false);
        Ok(loss)
    }
}

impl Classifier for ConvNet {
    fn num_classes(&self) -> usize {
        self.architecture.classes
    }

    fn logits(&self, x: &Image) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.forward(x).logits)
    }

    fn loss_and_input_gradient(&self, x: &Image, label: usize) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        let cache = self.forward(x);
        let loss = cross_entropy_loss(&cache.logits, label)?;
        let dlogits = logit_gradient(&cache.logits, label);
        let grad = self.backward(&cache, &dlogits, None, true).expect("input gradient requested");
        Ok((loss, grad))
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(input: &[f64], cin: usize, h: usize, w: usize, weights: &[f64], bias: &[f64], cout: usize, out: &mut [f64]) {
    let plane = h * w;
    for o in 0..cout {
        let out_plane = &mut out[o * plane..(o + 1) * plane];
        out_plane.fill(bias[o]);
        for i in 0..cin {
            let in_plane = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weights[((o * cin + i) * 3 + ky) * 3 + kx];
                    let (dy, dx) = (ky as isize - 1, kx as isize - 1);
                    let (y0, y1) = tap_range(h, dy);
                    let (x0, x1) = tap_range(w, dx);
                    for y in y0..y1 {
                        let src_row = (y as isize + dy) as usize * w;
                        let src = &in_plane[(src_row as isize + x0 as isize + dx) as usize..(src_row as isize + x1 as isize + dx) as usize];
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    cout: usize,
    dout: &[f64],
    mut dweights: Option<&mut [f64]>,
    mut dbias: Option<&mut [f64]>,
    mut dinput: Option<&mut [f64]>,
) {
    let plane = h * w;
    for o in 0..cout {
        let g_plane = &dout[o * plane..(o + 1) * plane];
        if let Some(db) = dbias.as_deref_mut() {
            db[o] += g_plane.iter().sum::<f64>();
        }
        for i in 0..cin {
            let in_plane = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((o * cin + i) * 3 + ky) * 3 + kx;
                    let wv = weights[widx];
                    let (dy, dx) = (ky as isize - 1, kx as isize - 1);
                    let (y0, y1) = tap_range(h, dy);
                    let (x0, x1) = tap_range(w, dx);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src_start = ((y as isize + dy) as usize * w) as isize + x0 as isize + dx;
                        let src_range = src_start as usize..src_start as usize + (x1 - x0);
                        let g = &g_plane[y * w + x0..y * w + x1];
                        if dweights.is_some() {
                            acc += g.iter().zip(&in_plane[src_range.clone()]).map(|(a, b)| a * b).sum::<f64>();
                        }
                        if let Some(di) = dinput.as_deref_mut() {
                            let dst = &mut di[i * plane + src_range.start..i * plane + src_range.end];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                    if let Some(dw) = dweights.as_deref_mut() {
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
}

/// Output positions `[lo, hi)` whose tap at offset `d` stays inside `0..n`.
fn tap_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)) as usize;
    (lo, hi)
}

fn max_pool(input: &[f64], channels: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * ho * wo);
    let mut idx = Vec::with_capacity(channels * ho * wo);
    for c in 0..channels {
        let base = c * h * w;
        for y in 0..ho {
            for x in 0..wo {
                let cands = [
                    base + 2 * y * w + 2 * x,
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                let best = cands
                    .into_iter()
                    .fold(cands[0], |b, i| if input[i] > input[b] { i } else { b });
                out.push(input[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

fn dense(weights: &[f64], bias: &[f64], input: &[f64]) -> Vec<f64> {
    weights
        .chunks(input.len())
        .zip(bias)
        .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
        .collect()
}

fn dense_backward_input(weights: &[f64], dout: &[f64], n_in: usize) -> Vec<f64> {
    let mut din = vec![0.0; n_in];
    for (row, &g) in weights.chunks(n_in).zip(dout) {
        if g == 0.0 {
            continue;
        }
        for (d, w) in din.iter_mut().zip(row) {
            *d += g * w;
        }
    }
    din
}

fn outer_accumulate(dw: &mut [f64], dout: &[f64], input: &[f64]) {
    for (row, &g) in dw.chunks_mut(input.len()).zip(dout) {
        if g == 0.0 {
            continue;
        }
        for (d, x) in row.iter_mut().zip(input) {
            *d += g * x;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Bundled-classifier training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub train_size: usize,
    pub holdout_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Required held-out accuracy.
    pub min_accuracy: f64,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 4,
            train_size: 4000,
            holdout_size: 400,
            batch_size: 16,
            learning_rate: 2e-3,
            min_accuracy: 0.95,
            architecture: Architecture::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ConvNet,
    pub holdout_accuracy: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains from a seeded initialization with Adam on minibatches.
pub fn train(dataset: &SyntheticDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    dataset.validate()?;
    let mut arch = config.architecture;
    arch.height = dataset.image_size;
    arch.width = dataset.image_size;
    arch.channels = 3;
    arch.classes = dataset.classes;
    if config.batch_size == 0 {
        return Err(Error::domain("batch_size must be >= 1"));
    }
    let mut model = ConvNet::initialize(arch, dataset.labels(), config.seed)?;
    let mut adam = Adam::new(AdamConfig::with_learning_rate(config.learning_rate), model.params.len());
    let mut shuffle_rng = rng::stream(config.seed, "train-shuffle");
    let mut order: Vec<usize> = (0..config.train_size).collect();
    let mut grads = vec![0.0; model.params.len()];
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.fill(0.0);
            for &i in batch {
                let (x, label) = dataset.sample(Split::Train, i);
                total += model.accumulate_parameter_gradient(&x, label, &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut model.params, &grads);
        }
        epoch_losses.push(total / config.train_size.max(1) as f64);
    }

    let holdout_accuracy = accuracy(&model, dataset, Split::HeldOut, config.holdout_size)?;
    Ok(TrainOutcome {
        model,
        holdout_accuracy,
        epoch_losses,
    })
}

/// [`train`], failing when held-out accuracy is below `min_accuracy`.
pub fn train_bundled(dataset: &SyntheticDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let outcome = train(dataset, config)?;
    if outcome.holdout_accuracy < config.min_accuracy {
        return Err(Error::Training {
            accuracy: outcome.holdout_accuracy,
            required: config.min_accuracy,
        });
    }
    Ok(outcome)
}

pub(crate) fn accuracy(model: &dyn Classifier, dataset: &SyntheticDataset, split: Split, count: usize) -> Result<f64> {
    if count == 0 {
        return Ok(0.0);
    }
    let mut correct = 0;
    for i in 0..count {
        let (x, label) = dataset.sample(split, i);
        if argmax(&model.logits(&x)?) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / count as f64)
}

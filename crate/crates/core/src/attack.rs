//! Pulse-train optimization against a classifier.
//!
//! The binary activity vector is relaxed to `½(tanh ω + 1)` per slot, the
//! count of pulses to the sum of relaxed activations, and the objective
//! `sparsity − α·loss` is averaged over randomly sampled slot shifts since
//! the attacker does not know the camera's frame phase. After Adam on `ω`
//! the activations are thresholded and the resulting train is pruned
//! greedily against the exact loss averaged over every shift.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, cross_entropy_loss, Classifier};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::optim::{Adam, AdamConfig};
use crate::photopic::duty_cycle_of_train;
use crate::rng;
use crate::synthesis::{
    compose, expand_rows, pattern_from_rows, rendered_pattern, row_cycle, rotate_rows,
    DazzlePattern, PulseTrain,
};
use crate::timing::CameraTimings;

pub fn relax(omega: f64) -> f64 {
    0.5 * (omega.tanh() + 1.0)
}

/// `d relax / d omega = ½(1 − tanh² ω)`.
pub fn relax_derivative(omega: f64) -> f64 {
    let t = omega.tanh();
    0.5 * (1.0 - t * t)
}

/// How the relaxed pulse count enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityMode {
    /// `Σ relax(ω)`.
    Total,
    /// `max(0, Σ relax(ω) − budget)`: pulses are free up to the budget.
    /// Without a budget this is `Total`.
    Excess,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Weight of the classifier loss against the pulse count.
    pub alpha: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Shifts sampled per optimization step.
    pub eot_samples: usize,
    pub binarize_threshold: f64,
    pub seed: u64,
    /// Weight of the relaxed pulse count.
    pub sparsity_weight: f64,
    pub sparsity_mode: SparsityMode,
    /// Most pulses the final train may keep.
    pub pulse_budget: Option<usize>,
    /// Pruning stops before the mean loss would fall to this value.
    pub failure_loss: Option<f64>,
    pub strength: f64,
    pub width_us: f64,
    pub frame_rate_hz: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            learning_rate: 0.05,
            iterations: 300,
            eot_samples: 16,
            binarize_threshold: 0.5,
            seed: 0,
            sparsity_weight: 1.0,
            sparsity_mode: SparsityMode::Excess,
            pulse_budget: None,
            failure_loss: None,
            strength: 1.0,
            width_us: 1.0,
            frame_rate_hz: 30.0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::domain("alpha must be >= 0"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::domain("learning_rate must be > 0"));
        }
        if self.iterations == 0 || self.eot_samples == 0 {
            return Err(Error::domain("iterations and eot_samples must be >= 1"));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::domain("binarize_threshold must be in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::domain("strength must be in [0, 1]"));
        }
        if !(self.width_us >= 0.0 && self.frame_rate_hz >= 0.0) {
            return Err(Error::domain("width_us and frame_rate_hz must be >= 0"));
        }
        Ok(())
    }

    /// Sparsity surrogate of the relaxed activations and its derivative
    /// with respect to each activation.
    pub fn sparsity(&self, omega: &[f64]) -> (f64, f64) {
        let total: f64 = omega.iter().map(|&w| relax(w)).sum();
        match (self.sparsity_mode, self.pulse_budget) {
            (SparsityMode::Excess, Some(budget)) if total <= budget as f64 => (0.0, 0.0),
            (SparsityMode::Excess, Some(budget)) => {
                (self.sparsity_weight * (total - budget as f64), self.sparsity_weight)
            }
            _ => (self.sparsity_weight * total, self.sparsity_weight),
        }
    }
}

/// Outcome of one shift of a binary train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftOutcome {
    pub shift: usize,
    pub loss: f64,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub train: PulseTrain,
    /// Relaxed objective at every optimization step.
    pub objective_trace: Vec<f64>,
    /// Every slot shift of the final train, in shift order.
    pub shifts: Vec<ShiftOutcome>,
    pub true_label: usize,
    pub mean_loss: f64,
    pub success_rate: f64,
    pub duty_cycle: f64,
}

impl AttackResult {
    /// Success indicator per shift: the prediction differs from the true label.
    pub fn shift_success(&self) -> Vec<bool> {
        self.shifts.iter().map(|s| s.predicted != self.true_label).collect()
    }

    /// A train with no pulses never counts as a successful attack.
    pub fn succeeded(&self) -> bool {
        self.train.popcount() > 0 && self.success_rate > 0.5
    }
}

fn check_geometry(x: &Image, timings: &CameraTimings) -> Result<()> {
    if x.height() != timings.n_rows_visible() || x.width() != timings.n_cols() {
        return Err(Error::dimension(
            format!("{}x{} image", timings.n_rows_visible(), timings.n_cols()),
            format!("{}x{} image", x.height(), x.width()),
        ));
    }
    Ok(())
}

fn check_omega(omega: &[f64], timings: &CameraTimings) -> Result<()> {
    if omega.len() != timings.pulse_slots() {
        return Err(Error::dimension(
            format!("{} slots", timings.pulse_slots()),
            format!("{} slots", omega.len()),
        ));
    }
    if omega.iter().any(|w| !w.is_finite()) {
        return Err(Error::domain("relaxed pulse vector has non-finite entries"));
    }
    Ok(())
}

/// Relaxed activations expanded over rows and cropped to the visible rows.
pub fn relaxed_pattern(omega: &[f64], r_n: usize, m: usize, n_rows_visible: usize) -> Result<DazzlePattern> {
    let acts: Vec<f64> = omega.iter().map(|&w| relax(w)).collect();
    pattern_from_rows(&expand_rows(&acts, r_n), m, n_rows_visible)
}

/// Slot feeding each visible row once the pattern is shifted by `shift` slots.
fn visible_row_slots(timings: &CameraTimings, shift: usize) -> Vec<Option<usize>> {
    let r_n = timings.rows_exposure_constant();
    let total = timings.total_rows();
    let covered = timings.pulse_slots() * r_n;
    (0..timings.n_rows_visible())
        .map(|r| {
            let src = (r + total - (shift * r_n) % total) % total;
            (src < covered).then_some(src / r_n)
        })
        .collect()
}

fn shifted_relaxed(omega: &[f64], timings: &CameraTimings, shift: usize) -> Result<DazzlePattern> {
    let r_n = timings.rows_exposure_constant();
    let acts: Vec<f64> = omega.iter().map(|&w| relax(w)).collect();
    let cycle = row_cycle(&expand_rows(&acts, r_n), timings.total_rows());
    let shifted = rotate_rows(&cycle, (shift * r_n) as i64);
    pattern_from_rows(&shifted, timings.n_cols(), timings.n_rows_visible())
}

/// Loss at one shift of the relaxed pattern and its gradient over `omega`.
///
/// Pixels where `x + strength·δ` exceeds 1 are clipped and pass no gradient.
pub fn chain_gradient(
    omega: &[f64],
    x: &Image,
    label: usize,
    model: &dyn Classifier,
    timings: &CameraTimings,
    shift: usize,
    strength: f64,
) -> Result<(f64, Vec<f64>)> {
    check_geometry(x, timings)?;
    check_omega(omega, timings)?;
    let delta = shifted_relaxed(omega, timings, shift)?;
    let attacked = compose(x, &delta, strength)?;
    let (loss, g) = model.loss_and_input_gradient(&attacked, label)?;
    if g.len() != x.len() {
        return Err(Error::dimension(format!("{} gradient entries", x.len()), g.len()));
    }
    let stride = x.width() * x.channels();
    let mut grad = vec![0.0; omega.len()];
    for (row, slot) in visible_row_slots(timings, shift).into_iter().enumerate() {
        let Some(slot) = slot else { continue };
        let d = delta.row_values()[row];
        let range = row * stride..(row + 1) * stride;
        let sum: f64 = g[range.clone()]
            .iter()
            .zip(&x.data()[range])
            .filter(|(_, &xv)| xv + strength * d < 1.0)
            .map(|(gv, _)| gv)
            .sum();
        grad[slot] += strength * sum;
    }
    for (gk, &w) in grad.iter_mut().zip(omega) {
        *gk *= relax_derivative(w);
    }
    Ok((loss, grad))
}

/// Mean over `shifts` of `sparsity − α·loss`.
pub fn objective(
    omega: &[f64],
    x: &Image,
    label: usize,
    model: &dyn Classifier,
    timings: &CameraTimings,
    config: &AttackConfig,
    shifts: &[usize],
) -> Result<f64> {
    check_geometry(x, timings)?;
    check_omega(omega, timings)?;
    if shifts.is_empty() {
        return Err(Error::domain("shift sample set must be nonempty"));
    }
    let (sparsity, _) = config.sparsity(omega);
    let mut loss = 0.0;
    for &shift in shifts {
        let delta = shifted_relaxed(omega, timings, shift)?;
        loss += model.loss(&compose(x, &delta, config.strength)?, label)?;
    }
    Ok(sparsity - config.alpha * loss / shifts.len() as f64)
}

/// Objective value and gradient over `omega`, averaged over `shifts`.
pub fn objective_gradient(
    omega: &[f64],
    x: &Image,
    label: usize,
    model: &dyn Classifier,
    timings: &CameraTimings,
    config: &AttackConfig,
    shifts: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if shifts.is_empty() {
        return Err(Error::domain("shift sample set must be nonempty"));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; omega.len()];
    for &shift in shifts {
        let (l, g) = chain_gradient(omega, x, label, model, timings, shift, config.strength)?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let n = shifts.len() as f64;
    let (sparsity, weight) = config.sparsity(omega);
    let value = sparsity - config.alpha * loss / n;
    for (gk, &w) in grad.iter_mut().zip(omega) {
        *gk = weight * relax_derivative(w) - config.alpha * *gk / n;
    }
    Ok((value, grad))
}

/// Classifies `x` under every listed shift of a binary train, memoizing
/// identical visible patterns.
pub struct TrainEvaluator<'a> {
    x: &'a Image,
    label: usize,
    model: &'a dyn Classifier,
    timings: &'a CameraTimings,
    strength: f64,
    memo: HashMap<Vec<bool>, (f64, usize)>,
}

impl<'a> TrainEvaluator<'a> {
    pub fn new(
        x: &'a Image,
        label: usize,
        model: &'a dyn Classifier,
        timings: &'a CameraTimings,
        strength: f64,
    ) -> Result<Self> {
        check_geometry(x, timings)?;
        if label >= model.num_classes() {
            return Err(Error::Label {
                label,
                classes: model.num_classes(),
            });
        }
        Ok(Self {
            x,
            label,
            model,
            timings,
            strength,
            memo: HashMap::new(),
        })
    }

    pub fn outcome(&mut self, train: &PulseTrain, shift: usize) -> Result<ShiftOutcome> {
        let pattern = rendered_pattern(self.timings, train, shift)?;
        let key: Vec<bool> = pattern.row_values().iter().map(|&v| v > 0.0).collect();
        if let Some(&(loss, predicted)) = self.memo.get(&key) {
            return Ok(ShiftOutcome { shift, loss, predicted });
        }
        let attacked = compose(self.x, &pattern, self.strength)?;
        let logits = self.model.logits(&attacked)?;
        let loss = cross_entropy_loss(&logits, self.label)?;
        let predicted = argmax(&logits);
        self.memo.insert(key, (loss, predicted));
        Ok(ShiftOutcome { shift, loss, predicted })
    }

    pub fn outcomes(&mut self, train: &PulseTrain, shifts: &[usize]) -> Result<Vec<ShiftOutcome>> {
        shifts.iter().map(|&s| self.outcome(train, s)).collect()
    }

    /// Mean loss over every slot shift.
    pub fn mean_loss(&mut self, train: &PulseTrain) -> Result<f64> {
        let all: Vec<usize> = (0..self.timings.pulse_slots()).collect();
        let out = self.outcomes(train, &all)?;
        Ok(out.iter().map(|o| o.loss).sum::<f64>() / out.len() as f64)
    }
}

/// Removes the pulse whose removal keeps the mean loss highest.
fn best_removal(eval: &mut TrainEvaluator<'_>, train: &PulseTrain) -> Result<Option<(PulseTrain, f64)>> {
    let mut best: Option<(PulseTrain, f64)> = None;
    for slot in train.active_slots() {
        let mut activity = train.activity().to_vec();
        activity[slot] = false;
        let candidate = PulseTrain::new(activity, train.width_us())?;
        let loss = eval.mean_loss(&candidate)?;
        if best.as_ref().is_none_or(|(_, b)| loss > *b) {
            best = Some((candidate, loss));
        }
    }
    Ok(best)
}

/// Greedy pruning: first down to the pulse budget, then while the mean loss
/// stays above `failure_loss`.
pub fn prune(eval: &mut TrainEvaluator<'_>, mut train: PulseTrain, config: &AttackConfig) -> Result<PulseTrain> {
    if let Some(budget) = config.pulse_budget {
        while train.popcount() > budget {
            match best_removal(eval, &train)? {
                Some((next, _)) => train = next,
                None => break,
            }
        }
    }
    if let Some(threshold) = config.failure_loss {
        while train.popcount() > 0 {
            match best_removal(eval, &train)? {
                Some((next, loss)) if loss > threshold => train = next,
                _ => break,
            }
        }
    }
    Ok(train)
}

/// Runs the relaxed optimization, binarizes and prunes, then scores the
/// final train on every slot shift. Deterministic given `config.seed`.
pub fn optimize(
    x: &Image,
    label: usize,
    model: &dyn Classifier,
    timings: &CameraTimings,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    check_geometry(x, timings)?;
    let n = timings.pulse_slots();
    let mut init_rng = rng::stream(config.seed, "attack-omega-init");
    let mut omega: Vec<f64> = (0..n).map(|_| -2.0 + init_rng.random_range(-0.1..=0.1)).collect();
    let mut eot_rng = rng::stream(config.seed, "attack-eot-shifts");
    let mut adam = Adam::new(AdamConfig::with_learning_rate(config.learning_rate), n);
    let mut trace = Vec::with_capacity(config.iterations);

    for _ in 0..config.iterations {
        let shifts: Vec<usize> = (0..config.eot_samples).map(|_| eot_rng.random_range(0..n)).collect();
        let (value, grad) = objective_gradient(&omega, x, label, model, timings, config, &shifts)?;
        trace.push(value);
        adam.step(&mut omega, &grad);
    }

    let activity: Vec<bool> = omega.iter().map(|&w| relax(w) > config.binarize_threshold).collect();
    let train = PulseTrain::new(activity, config.width_us)?;
    let mut eval = TrainEvaluator::new(x, label, model, timings, config.strength)?;
    let train = prune(&mut eval, train, config)?;
    score(&mut eval, train, trace, config.frame_rate_hz)
}

/// Scores a fixed train on every slot shift.
pub fn score(
    eval: &mut TrainEvaluator<'_>,
    train: PulseTrain,
    objective_trace: Vec<f64>,
    frame_rate_hz: f64,
) -> Result<AttackResult> {
    let all: Vec<usize> = (0..eval.timings.pulse_slots()).collect();
    let shifts = eval.outcomes(&train, &all)?;
    let mean_loss = shifts.iter().map(|s| s.loss).sum::<f64>() / shifts.len() as f64;
    let successes = shifts.iter().filter(|s| s.predicted != eval.label).count();
    let duty_cycle = duty_cycle_of_train(train.popcount(), train.width_us(), frame_rate_hz)?;
    Ok(AttackResult {
        success_rate: successes as f64 / shifts.len() as f64,
        true_label: eval.label,
        train,
        objective_trace,
        shifts,
        mean_loss,
        duty_cycle,
    })
}

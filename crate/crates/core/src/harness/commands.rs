use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::Rng;

use super::config::{RunConfig, ShiftMode, SweepAxis, SweepMode};
use super::manifest::Manifest;
use super::stats::spearman;
use crate::attack::{optimize, prune, score, AttackConfig, AttackResult, TrainEvaluator};
use crate::classifier::{
    argmax, softmax, train, Classifier, ConvNet, ExternalClassifier, Split, SyntheticDataset,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::photopic::{duty_cycle_of_train, threshold_surface};
use crate::rng;
use crate::synthesis::{compose, rendered_pattern, PulseTrain};
use crate::timing::{calibrate_rn, CameraTimings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Pattern,
    Photopic,
    Attack,
    Sweep,
    Evaluate,
    Train,
    CalibrateRn,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Pattern => "pattern",
            Command::Photopic => "photopic",
            Command::Attack => "attack",
            Command::Sweep => "sweep",
            Command::Evaluate => "evaluate",
            Command::Train => "train",
            Command::CalibrateRn => "calibrate-rn",
        }
    }
}

/// Runs `command` and writes its outputs and `manifest.toml` under `out_dir`.
///
/// A failing command still leaves a manifest with whatever it finished and
/// the error message under `results.error`.
pub fn run(command: Command, config: &RunConfig, out_dir: &Path) -> Result<Manifest> {
    let mut manifest = Manifest::new(command.name(), config, out_dir);
    let outcome = match command {
        Command::Pattern => cmd_pattern(config, &mut manifest),
        Command::Photopic => cmd_photopic(config, &mut manifest),
        Command::Attack => cmd_attack(config, &mut manifest),
        Command::Sweep => cmd_sweep(config, &mut manifest),
        Command::Evaluate => cmd_evaluate(config, &mut manifest),
        Command::Train => cmd_train(config, &mut manifest),
        Command::CalibrateRn => cmd_calibrate_rn(config, &mut manifest),
    };
    if let Err(e) = &outcome {
        manifest.result("error", e.to_string());
    }
    manifest.save()?;
    outcome.map(|_| manifest)
}

/// The configured classifier. The bundled one is loaded from `model`, or
/// trained from the dataset and training keys when no weights are given.
pub fn load_classifier(config: &RunConfig, manifest: &mut Manifest) -> Result<Box<dyn Classifier>> {
    match config.classifier.as_str() {
        "bundled" => match &config.model {
            Some(path) => {
                manifest.record_input("model", path)?;
                Ok(Box::new(ConvNet::load(path)?))
            }
            None => {
                let outcome = crate::classifier::train_bundled(&config.dataset(), &config.train())?;
                Ok(Box::new(outcome.model))
            }
        },
        spec => match spec.strip_prefix("exec:") {
            Some(cmd) => Ok(Box::new(ExternalClassifier::from_spec(cmd, config.peer_timeout()?)?)),
            None => Err(Error::config(
                "classifier",
                format!("expected `bundled` or `exec:<command>`, got `{spec}`"),
            )),
        },
    }
}

fn pnm_name(stem: &str, image: &Image) -> String {
    format!("{stem}.{}", if image.channels() == 1 { "pgm" } else { "ppm" })
}

fn read_input_image(config: &RunConfig, manifest: &mut Manifest) -> Result<Option<Image>> {
    match &config.image {
        Some(path) => {
            let image = Image::read_pnm(path)?;
            manifest.record_input("image", path)?;
            Ok(Some(image))
        }
        None => Ok(None),
    }
}

/// The configured image and label, or the held-out sample at `image_offset`.
fn attack_target(config: &RunConfig, manifest: &mut Manifest, model: &dyn Classifier) -> Result<(Image, usize)> {
    let (image, label) = match read_input_image(config, manifest)? {
        Some(image) => {
            let label = config
                .label
                .ok_or_else(|| Error::config("label", "required when `image` is given"))?;
            (image, label)
        }
        None => {
            let dataset = config.dataset();
            dataset.validate()?;
            dataset.sample(Split::HeldOut, config.image_offset)
        }
    };
    if label >= model.num_classes() {
        return Err(Error::Label {
            label,
            classes: model.num_classes(),
        });
    }
    Ok((image, label))
}

/// Maximal runs of nonzero rows as `(first_row, length)`.
pub fn stripe_runs(rows: &[f64]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &v) in rows.iter().chain(std::iter::once(&0.0)).enumerate() {
        match (v > 0.0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - s));
                start = None;
            }
            _ => {}
        }
    }
    runs
}

fn slots_value(train: &PulseTrain) -> toml::Value {
    toml::Value::Array(train.active_slots().into_iter().map(|s| (s as i64).into()).collect())
}

fn cmd_pattern(config: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let timings = config.timings()?;
    let train = PulseTrain::from_slots(&timings, &config.pulse_slots, config.width_us)?;
    let pattern = rendered_pattern(&timings, &train, config.shift)?;
    let image = pattern.to_image();
    manifest.write_output(&pnm_name("pattern", &image), &image.to_pnm())?;

    let mut rows = String::from("row,value\n");
    for (i, v) in pattern.row_values().iter().enumerate() {
        writeln!(rows, "{i},{v}").unwrap();
    }
    manifest.write_output("pattern_rows.csv", rows.as_bytes())?;

    if let Some(x) = read_input_image(config, manifest)? {
        let attacked = compose(&x, &pattern, config.strength)?;
        manifest.write_output(&pnm_name("attacked", &attacked), &attacked.to_pnm())?;
    }

    let runs = stripe_runs(pattern.row_values());
    manifest.result("rows_exposure_constant", timings.rows_exposure_constant() as i64);
    manifest.result("slots", timings.pulse_slots() as i64);
    manifest.result("pulses", train.popcount() as i64);
    manifest.result("stripes", runs.len() as i64);
    manifest.result(
        "stripe_heights",
        toml::Value::Array(runs.iter().map(|&(_, h)| (h as i64).into()).collect()),
    );
    manifest.result("duty_cycle", duty_cycle_of_train(train.popcount(), config.width_us, config.frame_rate_hz)?);
    Ok(())
}

fn cmd_photopic(config: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let scene = config.scene();
    let surface = threshold_surface(&config.theta_grid, &config.l_b_grid, &scene)?;
    let mut table = String::from("theta_deg,l_b,duty_cycle,duty_cycle_pct\n");
    for p in &surface {
        writeln!(table, "{},{},{},{}", p.theta_deg, p.l_b, p.duty_cycle, p.duty_cycle * 100.0).unwrap();
    }
    manifest.write_output("thresholds.csv", table.as_bytes())?;
    manifest.result("points", surface.len() as i64);
    manifest.result("s_coeff", scene.s_coeff);
    manifest.result("t_exponent", scene.t_exponent);
    manifest.result("calibrated", config.s_coeff.is_none() && config.t_exponent.is_none());
    Ok(())
}

fn trace_series(trace: &[f64]) -> String {
    trace.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn record_attack(manifest: &mut Manifest, result: &AttackResult) {
    manifest.result("success", result.succeeded());
    manifest.result("success_rate", result.success_rate);
    manifest.result("mean_loss", result.mean_loss);
    manifest.result("pulses", result.train.popcount() as i64);
    manifest.result("pulse_slots", slots_value(&result.train));
    manifest.result("width_us", result.train.width_us());
    manifest.result("duty_cycle", result.duty_cycle);
    manifest.result("objective_trace", trace_series(&result.objective_trace));
}

fn cmd_attack(config: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let model = load_classifier(config, manifest)?;
    let timings = config.timings()?;
    let (x, label) = attack_target(config, manifest, model.as_ref())?;

    let clean = softmax(&model.logits(&x)?);
    manifest.result("label", label as i64);
    manifest.result("clean_predicted", argmax(&clean) as i64);
    manifest.result("clean_confidence", clean[label]);

    let result = optimize(&x, label, model.as_ref(), &timings, &config.attack())?;

    let mut trace = String::from("iteration,objective\n");
    for (i, v) in result.objective_trace.iter().enumerate() {
        writeln!(trace, "{i},{v}").unwrap();
    }
    manifest.write_output("trace.csv", trace.as_bytes())?;

    let mut shifts = String::from("shift,loss,predicted,success\n");
    for s in &result.shifts {
        writeln!(shifts, "{},{},{},{}", s.shift, s.loss, s.predicted, s.predicted != label).unwrap();
    }
    manifest.write_output("shifts.csv", shifts.as_bytes())?;

    // the "different shots": the same train seen at random frame phases
    let n = timings.pulse_slots();
    let mut shot_rng = rng::stream(config.seed, "attack-render-shifts");
    let picks = index::sample(&mut shot_rng, n, config.render_shifts.min(n)).into_vec();
    let mut shots = String::from("shift,predicted,true_confidence\n");
    for &shift in &picks {
        let pattern = rendered_pattern(&timings, &result.train, shift)?;
        let attacked = compose(&x, &pattern, config.strength)?;
        let probs = softmax(&model.logits(&attacked)?);
        writeln!(shots, "{shift},{},{}", argmax(&probs), probs[label]).unwrap();
        manifest.write_output(&pnm_name(&format!("attacked_shift{shift}"), &attacked), &attacked.to_pnm())?;
    }
    manifest.write_output("shots.csv", shots.as_bytes())?;
    let pattern = rendered_pattern(&timings, &result.train, 0)?.to_image();
    manifest.write_output(&pnm_name("pattern", &pattern), &pattern.to_pnm())?;

    record_attack(manifest, &result);
    Ok(())
}

fn evaluation_targets(config: &RunConfig, manifest: &mut Manifest) -> Result<Vec<(usize, Image, usize)>> {
    if let Some(image) = read_input_image(config, manifest)? {
        let label = config
            .label
            .ok_or_else(|| Error::config("label", "required when `image` is given"))?;
        return Ok(vec![(0, image, label)]);
    }
    let dataset = config.dataset();
    dataset.validate()?;
    Ok((config.image_offset..config.image_offset + config.images)
        .map(|i| {
            let (x, l) = dataset.sample(Split::HeldOut, i);
            (i, x, l)
        })
        .collect())
}

fn cmd_evaluate(config: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let model = load_classifier(config, manifest)?;
    let timings = config.timings()?;
    let train = PulseTrain::from_slots(&timings, &config.pulse_slots, config.width_us)?;
    let targets = evaluation_targets(config, manifest)?;
    let n = timings.pulse_slots();

    let mut table = String::from("image,shift,true_label,predicted,success\n");
    let mut histogram = vec![0usize; model.num_classes()];
    let (mut trials, mut successes) = (0usize, 0usize);
    let mut failure = None;
    'images: for (index, x, label) in &targets {
        let shifts: Vec<usize> = match config.shift_mode {
            ShiftMode::Exhaustive => (0..n).collect(),
            ShiftMode::Random => {
                let mut r = rng::indexed_stream(config.seed, "evaluate-shifts", *index as u64);
                (0..config.trials).map(|_| r.random_range(0..n)).collect()
            }
        };
        let mut eval = match TrainEvaluator::new(x, *label, model.as_ref(), &timings, config.strength) {
            Ok(e) => e,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        for shift in shifts {
            match eval.outcome(&train, shift) {
                Ok(o) => {
                    let success = o.predicted != *label;
                    writeln!(table, "{index},{shift},{label},{},{success}", o.predicted).unwrap();
                    histogram[o.predicted] += 1;
                    trials += 1;
                    successes += success as usize;
                }
                Err(e) => {
                    failure = Some(e);
                    break 'images;
                }
            }
        }
    }

    let mut hist = String::from("label,count\n");
    for (l, c) in histogram.iter().enumerate() {
        writeln!(hist, "{l},{c}").unwrap();
    }
    manifest.write_output("evaluate.csv", table.as_bytes())?;
    manifest.write_output("histogram.csv", hist.as_bytes())?;
    manifest.result("trials", trials as i64);
    manifest.result("successes", successes as i64);
    manifest.result("success_rate", if trials == 0 { 0.0 } else { successes as f64 / trials as f64 });
    manifest.result("histogram", toml::Value::Array(histogram.iter().map(|&c| (c as i64).into()).collect()));
    manifest.result("pulses", train.popcount() as i64);
    manifest.result("duty_cycle", duty_cycle_of_train(train.popcount(), config.width_us, config.frame_rate_hz)?);
    match failure {
        Some(e) => {
            manifest.result("partial", true);
            manifest.result("note", format!("aborted after {trials} trials; tables hold the finished part"));
            Err(e)
        }
        None => Ok(()),
    }
}

fn cmd_train(config: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let train_config = config.train();
    let outcome = train(&config.dataset(), &train_config)?;
    manifest.write_output("model.json", outcome.model.to_json().as_bytes())?;
    let mut losses = String::from("epoch,loss\n");
    for (i, l) in outcome.epoch_losses.iter().enumerate() {
        writeln!(losses, "{i},{l}").unwrap();
    }
    manifest.write_output("epoch_losses.csv", losses.as_bytes())?;
    let passed = outcome.holdout_accuracy >= train_config.min_accuracy;
    manifest.result("holdout_accuracy", outcome.holdout_accuracy);
    manifest.result("passed", passed);
    if !passed {
        return Err(Error::Training {
            accuracy: outcome.holdout_accuracy,
            required: train_config.min_accuracy,
        });
    }
    Ok(())
}

fn cmd_calibrate_rn(config: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let image = read_input_image(config, manifest)?
        .ok_or_else(|| Error::config("image", "calibrate-rn needs a stripe image"))?;
    let r_n = calibrate_rn(&image)?;
    manifest.result("rows_exposure_constant", r_n as i64);
    Ok(())
}

/// One grid value of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub value: f64,
    pub trial_results: Vec<AttackResult>,
    pub error: Option<String>,
}

impl SweepRecord {
    /// Total (image, shift) pairs.
    pub fn trials(&self) -> usize {
        self.trial_results.iter().map(|r| r.shifts.len()).sum()
    }

    pub fn successes(&self) -> usize {
        self.trial_results
            .iter()
            .map(|r| r.shift_success().into_iter().filter(|&s| s).count())
            .sum()
    }

    pub fn success_rate(&self) -> f64 {
        match self.trials() {
            0 => f64::NAN,
            t => self.successes() as f64 / t as f64,
        }
    }

    pub fn mean_loss(&self) -> f64 {
        let n = self.trial_results.len() as f64;
        self.trial_results.iter().map(|r| r.mean_loss).sum::<f64>() / n
    }

    pub fn max_loss(&self) -> f64 {
        self.trial_results.iter().map(|r| r.mean_loss).fold(f64::NAN, f64::max)
    }
}

struct SweepContext<'a> {
    config: &'a RunConfig,
    model: &'a dyn Classifier,
    timings: &'a CameraTimings,
    axis: SweepAxis,
}

impl SweepContext<'_> {
    fn dataset(&self, value: f64) -> SyntheticDataset {
        let mut d = self.config.dataset();
        if self.axis == SweepAxis::FovFraction {
            d.fov_fraction = value;
        }
        d
    }

    fn attack(&self, trial: usize) -> AttackConfig {
        AttackConfig {
            seed: self.config.seed.wrapping_add(trial as u64),
            ..self.config.attack()
        }
    }

    fn budget(&self, duty_cycle_pct: f64) -> Result<usize> {
        let per_pulse = duty_cycle_of_train(1, self.config.width_us, self.config.frame_rate_hz)?;
        if !(per_pulse > 0.0 && duty_cycle_pct >= 0.0) {
            return Err(Error::domain("duty-cycle sweep needs width_us, frame_rate_hz and values > 0"));
        }
        Ok((duty_cycle_pct / 100.0 / per_pulse).round() as usize)
    }

    fn sample(&self, value: f64, trial: usize) -> Result<(Image, usize)> {
        let d = self.dataset(value);
        d.validate()?;
        Ok(d.sample(Split::HeldOut, self.config.image_offset + trial))
    }

    fn reoptimize(&self, value: f64, trial: usize) -> Result<AttackResult> {
        let (x, label) = self.sample(value, trial)?;
        let mut attack = self.attack(trial);
        match self.axis {
            SweepAxis::DutyCycle => attack.pulse_budget = Some(self.budget(value)?),
            SweepAxis::PulseWidth => attack.width_us = value,
            SweepAxis::FovFraction => {}
        }
        optimize(&x, label, self.model, self.timings, &attack)
    }

    fn reevaluate(&self, base: &AttackResult, value: f64, trial: usize) -> Result<AttackResult> {
        let (x, label) = self.sample(value, trial)?;
        let mut eval = TrainEvaluator::new(&x, label, self.model, self.timings, self.config.strength)?;
        let train = match self.axis {
            SweepAxis::DutyCycle => {
                let cfg = AttackConfig {
                    pulse_budget: Some(self.budget(value)?),
                    failure_loss: None,
                    ..self.attack(trial)
                };
                prune(&mut eval, base.train.clone(), &cfg)?
            }
            SweepAxis::PulseWidth => base.train.with_width(value)?,
            SweepAxis::FovFraction => base.train.clone(),
        };
        score(&mut eval, train, base.objective_trace.clone(), self.config.frame_rate_hz)
    }
}

/// Sweep cells in ascending grid order; a failing cell records its error
/// and the sweep moves on.
pub fn sweep_records(config: &RunConfig, model: &dyn Classifier) -> Result<Vec<SweepRecord>> {
    let axis = config
        .sweep_axis
        .ok_or_else(|| Error::config("sweep_axis", "required: duty_cycle, pulse_width or fov_fraction"))?;
    let mut grid = config.sweep_grid.clone();
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("sweep_grid", "needs at least one finite value"));
    }
    if config.sweep_trials == 0 {
        return Err(Error::config("sweep_trials", "must be >= 1"));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let timings = config.timings()?;
    let ctx = SweepContext {
        config,
        model,
        timings: &timings,
        axis,
    };

    // fixed mode optimizes once per trial on the base configuration
    let base: Vec<Result<AttackResult>> = match config.sweep_mode {
        SweepMode::Fixed => (0..config.sweep_trials)
            .map(|t| {
                let (x, label) = ctx.sample(config.fov_fraction, t)?;
                optimize(&x, label, model, &timings, &ctx.attack(t))
            })
            .collect(),
        SweepMode::Reoptimize => Vec::new(),
    };

    Ok(grid
        .into_iter()
        .map(|value| {
            let cell: Result<Vec<AttackResult>> = (0..config.sweep_trials)
                .map(|t| match config.sweep_mode {
                    SweepMode::Reoptimize => ctx.reoptimize(value, t),
                    SweepMode::Fixed => match &base[t] {
                        Ok(b) => ctx.reevaluate(b, value, t),
                        Err(e) => Err(Error::domain(format!("base attack failed: {e}"))),
                    },
                })
                .collect();
            match cell {
                Ok(trial_results) => SweepRecord {
                    value,
                    trial_results,
                    error: None,
                },
                Err(e) => SweepRecord {
                    value,
                    trial_results: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

fn csv_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn cmd_sweep(config: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let model = load_classifier(config, manifest)?;
    let records = sweep_records(config, model.as_ref())?;
    let axis = toml::Value::try_from(config.sweep_axis).expect("axis serializes");
    let axis = axis.as_str().unwrap_or_default().to_string();

    let mut table = String::from(
        "axis,value,images,trials,successes,success_rate,mean_loss,max_loss,mean_pulses,mean_duty_cycle,error\n",
    );
    let mut per_trial = String::from("value,trial,image,pulses,pulse_slots,duty_cycle,success_rate,mean_loss\n");
    for r in &records {
        let n = r.trial_results.len() as f64;
        let (pulses, dc) = if r.trial_results.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (
                r.trial_results.iter().map(|t| t.train.popcount() as f64).sum::<f64>() / n,
                r.trial_results.iter().map(|t| t.duty_cycle).sum::<f64>() / n,
            )
        };
        writeln!(
            table,
            "{axis},{},{},{},{},{},{},{},{},{},{}",
            r.value,
            r.trial_results.len(),
            r.trials(),
            r.successes(),
            csv_float(r.success_rate()),
            csv_float(if r.trial_results.is_empty() { f64::NAN } else { r.mean_loss() }),
            csv_float(r.max_loss()),
            csv_float(pulses),
            csv_float(dc),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        )
        .unwrap();
        for (t, res) in r.trial_results.iter().enumerate() {
            let slots: Vec<String> = res.train.active_slots().iter().map(|s| s.to_string()).collect();
            writeln!(
                per_trial,
                "{},{t},{},{},{},{},{},{}",
                r.value,
                config.image_offset + t,
                res.train.popcount(),
                slots.join(" "),
                res.duty_cycle,
                res.success_rate,
                res.mean_loss
            )
            .unwrap();
        }
    }
    manifest.write_output("sweep.csv", table.as_bytes())?;
    manifest.write_output("sweep_trials.csv", per_trial.as_bytes())?;

    let ok: Vec<&SweepRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let values: Vec<f64> = ok.iter().map(|r| r.value).collect();
    let rates: Vec<f64> = ok.iter().map(|r| r.success_rate()).collect();
    let max_losses: Vec<f64> = ok.iter().map(|r| r.max_loss()).collect();
    manifest.result("axis", axis);
    manifest.result("cells", records.len() as i64);
    manifest.result("failed_cells", (records.len() - ok.len()) as i64);
    if let Some(rho) = spearman(&values, &rates) {
        manifest.result("spearman_success_rate", rho);
    }
    if let Some(rho) = spearman(&values, &max_losses) {
        manifest.result("spearman_max_loss", rho);
    }
    Ok(())
}

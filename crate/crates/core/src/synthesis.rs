//! Stripe patterns produced by pulse trains, their cyclic shifts, and their
//! composition onto images.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::timing::{slot_start_us, CameraTimings, PulseEvent};

/// Binary laser activity per pulse slot, plus the physical pulse width.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrain {
    activity: Vec<bool>,
    width_us: f64,
}

impl PulseTrain {
    pub fn new(activity: Vec<bool>, width_us: f64) -> Result<Self> {
        if activity.is_empty() {
            return Err(Error::domain("a pulse train needs at least one slot"));
        }
        if !(width_us.is_finite() && width_us >= 0.0) {
            return Err(Error::domain(format!("pulse width must be >= 0, got {width_us}")));
        }
        Ok(Self { activity, width_us })
    }

    /// A train over the slots of `timings` with pulses at `active` slots.
    pub fn from_slots(timings: &CameraTimings, active: &[usize], width_us: f64) -> Result<Self> {
        let n = timings.pulse_slots();
        let mut activity = vec![false; n];
        for &slot in active {
            if slot >= n {
                return Err(Error::domain(format!("pulse slot {slot} out of range 0..{n}")));
            }
            activity[slot] = true;
        }
        Self::new(activity, width_us)
    }

    pub fn empty(timings: &CameraTimings, width_us: f64) -> Result<Self> {
        Self::from_slots(timings, &[], width_us)
    }

    pub fn activity(&self) -> &[bool] {
        &self.activity
    }

    pub fn width_us(&self) -> f64 {
        self.width_us
    }

    pub fn len(&self) -> usize {
        self.activity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activity.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.activity.iter().filter(|&&a| a).count()
    }

    pub fn active_slots(&self) -> Vec<usize> {
        self.activity
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
            .collect()
    }

    pub fn with_width(&self, width_us: f64) -> Result<Self> {
        Self::new(self.activity.clone(), width_us)
    }

    pub fn as_values(&self) -> Vec<f64> {
        self.activity.iter().map(|&a| f64::from(u8::from(a))).collect()
    }
}

/// `N_r x M` perturbation whose rows are constant.
#[derive(Debug, Clone, PartialEq)]
pub struct DazzlePattern {
    rows: Vec<f64>,
    cols: usize,
}

impl DazzlePattern {
    pub fn from_row_values(rows: Vec<f64>, cols: usize) -> Result<Self> {
        if cols == 0 || rows.is_empty() {
            return Err(Error::domain("pattern dimensions must be positive"));
        }
        if let Some(v) = rows.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain(format!("pattern value {v} outside [0, 1]")));
        }
        Ok(Self { rows, cols })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row_values(&self) -> &[f64] {
        &self.rows
    }

    pub fn get(&self, row: usize, _col: usize) -> f64 {
        self.rows[row]
    }

    pub fn to_grid(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|&v| vec![v; self.cols]).collect()
    }

    /// Single-channel image of the pattern.
    pub fn to_image(&self) -> Image {
        let data = self
            .rows
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, self.cols))
            .collect();
        Image::from_clamped(self.rows.len(), self.cols, 1, data)
    }
}

/// Replicates every slot value `r_n` times: `E_r = E_eff ⊗ 1_{R_n}`.
pub fn expand_rows(values: &[f64], r_n: usize) -> Vec<f64> {
    values
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, r_n))
        .collect()
}

pub fn expand_pulse_vector(train: &PulseTrain, r_n: usize) -> Vec<f64> {
    expand_rows(&train.as_values(), r_n)
}

/// Broadcasts row indicators across `m` columns and keeps the first
/// `n_rows_visible` rows. Rows past the end of `e_r` are zero.
pub fn pattern_from_rows(e_r: &[f64], m: usize, n_rows_visible: usize) -> Result<DazzlePattern> {
    let rows = (0..n_rows_visible)
        .map(|i| e_r.get(i).copied().unwrap_or(0.0))
        .collect();
    DazzlePattern::from_row_values(rows, m)
}

/// Cyclic shift later in time by `round(t0 / t_read)` rows.
pub fn shift_pattern(e_r: &[f64], t0_us: f64, t_read_us: f64) -> Result<Vec<f64>> {
    if !(t_read_us > 0.0) {
        return Err(Error::domain(format!("t_read_us must be > 0, got {t_read_us}")));
    }
    if e_r.is_empty() {
        return Ok(Vec::new());
    }
    let k = (t0_us / t_read_us).round() as i64;
    Ok(rotate_rows(e_r, k))
}

pub(crate) fn rotate_rows(e_r: &[f64], k: i64) -> Vec<f64> {
    let mut out = e_r.to_vec();
    let k = k.rem_euclid(e_r.len() as i64) as usize;
    out.rotate_right(k);
    out
}

/// Pads row indicators with zeros to the full visible+hidden row cycle.
pub fn row_cycle(e_r: &[f64], total_rows: usize) -> Vec<f64> {
    let mut out = e_r.to_vec();
    out.resize(total_rows.max(e_r.len()), 0.0);
    out
}

/// Kronecker-expanded pattern of `train` shifted by `shift_slots` pulse slots.
pub fn kronecker_pattern(
    timings: &CameraTimings,
    train: &PulseTrain,
    shift_slots: usize,
) -> Result<DazzlePattern> {
    let r_n = timings.rows_exposure_constant();
    let cycle = row_cycle(&expand_pulse_vector(train, r_n), timings.total_rows());
    let shifted = rotate_rows(&cycle, (shift_slots * r_n) as i64);
    pattern_from_rows(&shifted, timings.n_cols(), timings.n_rows_visible())
}

/// Pattern rendered pulse by pulse from exposure-window overlaps, so the
/// physical pulse width is honoured.
pub fn rendered_pattern(
    timings: &CameraTimings,
    train: &PulseTrain,
    shift_slots: usize,
) -> Result<DazzlePattern> {
    let mut cycle = vec![0.0; timings.total_rows()];
    for slot in train.active_slots() {
        let pulse = PulseEvent::new(slot_start_us(timings, slot), train.width_us())?;
        for row in timings.dazzled_rows(&pulse) {
            cycle[row] = 1.0;
        }
    }
    let r_n = timings.rows_exposure_constant();
    let shifted = rotate_rows(&cycle, (shift_slots * r_n) as i64);
    pattern_from_rows(&shifted, timings.n_cols(), timings.n_rows_visible())
}

/// `clip(x + strength * delta, 0, 1)` on every channel.
pub fn compose(x: &Image, delta: &DazzlePattern, strength: f64) -> Result<Image> {
    if delta.n_rows() != x.height() || delta.n_cols() != x.width() {
        return Err(Error::dimension(
            format!("{}x{} pattern", x.height(), x.width()),
            format!("{}x{} pattern", delta.n_rows(), delta.n_cols()),
        ));
    }
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::domain(format!("strength must be in [0, 1], got {strength}")));
    }
    let stride = x.width() * x.channels();
    let data = x
        .data()
        .chunks(stride)
        .zip(delta.row_values())
        .flat_map(|(row, &d)| row.iter().map(move |&v| (v + strength * d).min(1.0)))
        .collect();
    Ok(Image::from_clamped(x.height(), x.width(), x.channels(), data))
}

/// Saturation and dazzle thresholds. Irradiances in W/m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationModel {
    pub i_sat: f64,
    /// Spot diameter in pixels at `I_0 = I_sat`.
    pub k_spot: f64,
    pub avg_dazzle_threshold: f64,
    pub peak_dazzle_threshold: f64,
}

impl Default for SaturationModel {
    fn default() -> Self {
        Self {
            i_sat: 500.0,
            k_spot: 1.0,
            avg_dazzle_threshold: 500.0,
            peak_dazzle_threshold: 1.0,
        }
    }
}

impl SaturationModel {
    pub fn new(
        i_sat: f64,
        k_spot: f64,
        avg_dazzle_threshold: f64,
        peak_dazzle_threshold: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("i_sat", i_sat),
            ("k_spot", k_spot),
            ("avg_dazzle_threshold", avg_dazzle_threshold),
            ("peak_dazzle_threshold", peak_dazzle_threshold),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(Self {
            i_sat,
            k_spot,
            avg_dazzle_threshold,
            peak_dazzle_threshold,
        })
    }
}

/// Diameter of the saturated spot, growing with the cube root of `i0 / i_sat`.
pub fn saturated_spot_diameter(i0: f64, model: &SaturationModel) -> Result<f64> {
    if !(i0 >= 0.0) {
        return Err(Error::domain(format!("irradiance must be >= 0, got {i0}")));
    }
    if i0 < model.i_sat {
        return Ok(0.0);
    }
    Ok(model.k_spot * (i0 / model.i_sat).cbrt())
}

/// Best fraction of agreeing binarized entries over all cyclic row shifts.
pub fn pattern_match_score(a: &DazzlePattern, b: &DazzlePattern) -> Result<f64> {
    if a.n_rows() != b.n_rows() || a.n_cols() != b.n_cols() {
        return Err(Error::dimension(
            format!("{}x{}", a.n_rows(), a.n_cols()),
            format!("{}x{}", b.n_rows(), b.n_cols()),
        ));
    }
    let bin = |p: &DazzlePattern| p.row_values().iter().map(|&v| v >= 0.5).collect::<Vec<_>>();
    let (a, b) = (bin(a), bin(b));
    let n = a.len();
    let best = (0..n)
        .map(|k| (0..n).filter(|&i| a[i] == b[(i + k) % n]).count())
        .max()
        .unwrap_or(0);
    Ok(best as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn expand_examples() {
        assert_eq!(expand_rows(&[1.0, 0.0, 0.0], 2), vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(expand_rows(&[0.0; 4], 3), vec![0.0; 12]);
        assert_eq!(expand_rows(&[1.0, 0.0, 1.0], 1), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn pattern_from_rows_examples() {
        let p = pattern_from_rows(&[1.0, 0.0], 3, 2).unwrap();
        assert_eq!(p.to_grid(), vec![vec![1.0; 3], vec![0.0; 3]]);
        let z = pattern_from_rows(&[0.0; 6], 2, 4).unwrap();
        assert!(z.row_values().iter().all(|&v| v == 0.0));
        let cropped = pattern_from_rows(&[1.0, 1.0, 0.0, 1.0], 2, 3).unwrap();
        assert_eq!(cropped.row_values(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn shift_examples() {
        let e = [1.0, 1.0, 0.0, 0.0];
        assert_eq!(shift_pattern(&e, 0.0, 30.0).unwrap(), e.to_vec());
        assert_eq!(shift_pattern(&e, 120.0, 30.0).unwrap(), e.to_vec());
        assert_eq!(shift_pattern(&e, 60.0, 30.0).unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
        assert!(shift_pattern(&e, 60.0, 0.0).is_err());
    }

    #[test]
    fn compose_examples() {
        let black = Image::filled(3, 2, 3, 0.0).unwrap();
        let delta = DazzlePattern::from_row_values(vec![0.0, 1.0, 0.0], 2).unwrap();
        let out = compose(&black, &delta, 1.0).unwrap();
        for r in 0..3 {
            let want = if r == 1 { 1.0 } else { 0.0 };
            assert!((0..2).all(|c| (0..3).all(|ch| out.get(r, c, ch) == want)));
        }
        let zero = DazzlePattern::from_row_values(vec![0.0; 3], 2).unwrap();
        assert_eq!(compose(&black, &zero, 1.0).unwrap(), black);

        let gray = Image::filled(3, 2, 1, 0.7).unwrap();
        let out = compose(&gray, &delta, 1.0).unwrap();
        assert_eq!(out.get(1, 0, 0), 1.0);
        assert_eq!(out.get(0, 0, 0), 0.7);
    }

    #[test]
    fn compose_shape_mismatch() {
        let x = Image::filled(4, 2, 1, 0.0).unwrap();
        let delta = DazzlePattern::from_row_values(vec![0.0; 3], 2).unwrap();
        assert!(matches!(compose(&x, &delta, 1.0), Err(Error::Dimension { .. })));
    }

    #[test]
    fn spot_diameter_examples() {
        let m = SaturationModel::new(100.0, 3.0, 500.0, 1.0).unwrap();
        assert_eq!(saturated_spot_diameter(100.0, &m).unwrap(), 3.0);
        assert!((saturated_spot_diameter(800.0, &m).unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(saturated_spot_diameter(50.0, &m).unwrap(), 0.0);
        assert!(saturated_spot_diameter(-1.0, &m).is_err());
        assert!(SaturationModel::new(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn match_score_examples() {
        let a = DazzlePattern::from_row_values(vec![1.0, 1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(pattern_match_score(&a, &a).unwrap(), 1.0);
        let shifted = DazzlePattern::from_row_values(vec![0.0, 1.0, 1.0, 0.0], 3).unwrap();
        assert_eq!(pattern_match_score(&a, &shifted).unwrap(), 1.0);
        // the complement of a half-on stripe is one of its own shifts
        let c =DazzlePattern::from_row_values(vec![1.0, 0.0], 3).unwrap();
        let d = DazzlePattern::from_row_values(vec![0.0, 1.0], 3).unwrap();
        assert_eq!(pattern_match_score(&c, &d).unwrap(), 1.0);
        let alt = DazzlePattern::from_row_values(vec![1.0, 1.0, 1.0, 1.0], 3).unwrap();
        let off = DazzlePattern::from_row_values(vec![0.0; 4], 3).unwrap();
        assert_eq!(pattern_match_score(&alt, &off).unwrap(), 0.0);
        let small = DazzlePattern::from_row_values(vec![0.0; 3], 3).unwrap();
        assert!(pattern_match_score(&a, &small).is_err());
    }

    fn timings_and_train() -> impl Strategy<Value = (CameraTimings, PulseTrain)> {
        (1u32..50, 1usize..8, 1usize..50, 0usize..16, 1usize..5).prop_flat_map(
            |(t_read, r_n, vis, hid, cols)| {
                let t = CameraTimings::new(
                    f64::from(t_read),
                    f64::from(t_read) * r_n as f64,
                    vis,
                    hid,
                    cols,
                )
                .unwrap();
                let n = t.pulse_slots();
                let width = 0.01f64..=1.0;
                (Just(t), proptest::collection::vec(any::<bool>(), n), width).prop_map(
                    |(t, act, frac)| {
                        let tr = t.t_read_us();
                        (t, PulseTrain::new(act, frac * tr).unwrap())
                    },
                )
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn kronecker_pattern_equals_rendered_pattern(
            (t, train) in timings_and_train(), shift in 0usize..40
        ) {
            let shift = shift % t.pulse_slots();
            prop_assert_eq!(
                kronecker_pattern(&t, &train, shift).unwrap(),
                rendered_pattern(&t, &train, shift).unwrap()
            );
        }

        #[test]
        fn expansion_preserves_count((t, train) in timings_and_train()) {
            let r_n = t.rows_exposure_constant();
            let e_r = expand_pulse_vector(&train, r_n);
            let ones = e_r.iter().filter(|&&v| v == 1.0).count();
            prop_assert_eq!(ones, r_n * train.popcount());
            prop_assert_eq!(e_r.len(), r_n * train.len());
        }

        #[test]
        fn compose_monotone_in_strength(
            pixels in proptest::collection::vec(0.0f64..=1.0, 12),
            rows in proptest::collection::vec(0.0f64..=1.0, 4),
            s0 in 0.0f64..=1.0, s1 in 0.0f64..=1.0
        ) {
            let x = Image::new(4, 3, 1, pixels).unwrap();
            let d = DazzlePattern::from_row_values(rows, 3).unwrap();
            let (lo, hi) = if s0 <= s1 { (s0, s1) } else { (s1, s0) };
            let a = compose(&x, &d, lo).unwrap();
            let b = compose(&x, &d, hi).unwrap();
            prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| p <= q));
        }

        #[test]
        fn shift_is_a_group_action(
            e in proptest::collection::vec(0.0f64..=1.0, 1..30),
            k0 in -50i32..50, k1 in -50i32..50
        ) {
            let tr = 30.0;
            let once = shift_pattern(&shift_pattern(&e, f64::from(k0) * tr, tr).unwrap(), f64::from(k1) * tr, tr).unwrap();
            let both = shift_pattern(&e, f64::from(k0 + k1) * tr, tr).unwrap();
            prop_assert_eq!(once, both);
        }
    }
}

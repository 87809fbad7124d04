//! Rolling-shutter scan timing.
//!
//! Row `i` integrates light over the half-open window
//! `[i * t_read, i * t_read + t_exp)`; the frame repeats with period
//! `t_read * (visible + hidden) + t_exp`.

use crate::error::{Error, Result};
use crate::image::Image;

/// Row read/exposure timing of a rolling-shutter sensor. Times are in µs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraTimings {
    t_read_us: f64,
    t_exp_us: f64,
    n_rows_visible: usize,
    n_rows_hidden: usize,
    n_cols: usize,
}

impl CameraTimings {
    pub fn new(
        t_read_us: f64,
        t_exp_us: f64,
        n_rows_visible: usize,
        n_rows_hidden: usize,
        n_cols: usize,
    ) -> Result<Self> {
        if !(t_read_us.is_finite() && t_read_us > 0.0) {
            return Err(Error::domain(format!("t_read_us must be > 0, got {t_read_us}")));
        }
        if !(t_exp_us.is_finite() && t_exp_us > 0.0) {
            return Err(Error::domain(format!("t_exp_us must be > 0, got {t_exp_us}")));
        }
        if t_exp_us < t_read_us {
            return Err(Error::domain(format!(
                "t_exp_us ({t_exp_us}) must be at least t_read_us ({t_read_us})"
            )));
        }
        if n_rows_visible == 0 || n_cols == 0 {
            return Err(Error::domain("n_rows_visible and n_cols must be >= 1"));
        }
        Ok(Self {
            t_read_us,
            t_exp_us,
            n_rows_visible,
            n_rows_hidden,
            n_cols,
        })
    }

    pub fn t_read_us(&self) -> f64 {
        self.t_read_us
    }

    pub fn t_exp_us(&self) -> f64 {
        self.t_exp_us
    }

    pub fn n_rows_visible(&self) -> usize {
        self.n_rows_visible
    }

    pub fn n_rows_hidden(&self) -> usize {
        self.n_rows_hidden
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Visible plus hidden rows: the length of one row cycle.
    pub fn total_rows(&self) -> usize {
        self.n_rows_visible + self.n_rows_hidden
    }

    pub fn frame_duration_us(&self) -> f64 {
        self.t_read_us * self.total_rows() as f64 + self.t_exp_us
    }

    /// Number of rows exposed at once, `floor(t_exp / t_read)`.
    pub fn rows_exposure_constant(&self) -> usize {
        ((self.t_exp_us / self.t_read_us).floor() as usize).max(1)
    }

    /// Number of pulse slots `floor(total_rows / R_n)`; remainder rows belong to no slot.
    pub fn pulse_slots(&self) -> usize {
        (self.total_rows() / self.rows_exposure_constant()).max(1)
    }

    /// Sorted indices of every row whose exposure window overlaps `pulse`
    /// with nonzero measure, the pulse wrapping cyclically over the frame.
    pub fn dazzled_rows(&self, pulse: &PulseEvent) -> Vec<usize> {
        let rows = self.total_rows();
        if pulse.width_us == 0.0 {
            return Vec::new();
        }
        let frame = self.frame_duration_us();
        if pulse.width_us >= frame {
            return (0..rows).collect();
        }
        let start = pulse.start_us.rem_euclid(frame);
        let end = start + pulse.width_us;

        let mut hit = vec![false; rows];
        let mut mark = |a: f64, b: f64| {
            // rows j with j*t_read < b and j*t_read + t_exp > a
            let lo = ((a - self.t_exp_us) / self.t_read_us).floor() + 1.0;
            let hi = (b / self.t_read_us).ceil() - 1.0;
            let lo = lo.max(0.0) as usize;
            if hi < 0.0 {
                return;
            }
            let hi = (hi as usize).min(rows - 1);
            for h in hit.iter_mut().take(hi + 1).skip(lo) {
                *h = true;
            }
        };
        mark(start, end.min(frame));
        if end > frame {
            mark(0.0, end - frame);
        }
        hit.iter()
            .enumerate()
            .filter_map(|(i, &h)| h.then_some(i))
            .collect()
    }
}

/// Frame-start time from which a pulse occupying slot `slot` dazzles
/// rows `slot * R_n .. (slot + 1) * R_n` when the exposure ratio is integral.
pub fn slot_start_us(timings: &CameraTimings, slot: usize) -> f64 {
    let r_n = timings.rows_exposure_constant();
    ((slot + 1) * r_n - 1) as f64 * timings.t_read_us()
}

/// One light pulse, timed from the start of the frame scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseEvent {
    start_us: f64,
    width_us: f64,
}

impl PulseEvent {
    pub fn new(start_us: f64, width_us: f64) -> Result<Self> {
        if !start_us.is_finite() {
            return Err(Error::domain(format!("pulse start must be finite, got {start_us}")));
        }
        if !(width_us.is_finite() && width_us >= 0.0) {
            return Err(Error::domain(format!("pulse width must be >= 0, got {width_us}")));
        }
        Ok(Self { start_us, width_us })
    }

    pub fn start_us(&self) -> f64 {
        self.start_us
    }

    pub fn width_us(&self) -> f64 {
        self.width_us
    }
}

/// Row mean above which a row counts as saturated.
pub const STRIPE_THRESHOLD: f64 = 0.9;

/// Estimates `R_n` as the median thickness of saturated horizontal stripes,
/// taking the lower median for an even number of stripes.
pub fn calibrate_rn(stripe_image: &Image) -> Result<usize> {
    let mut runs = Vec::new();
    let mut current = 0usize;
    for row in 0..stripe_image.height() {
        if stripe_image.row_mean(row) > STRIPE_THRESHOLD {
            current += 1;
        } else if current > 0 {
            runs.push(current);
            current = 0;
        }
    }
    if current > 0 {
        runs.push(current);
    }
    if runs.is_empty() {
        return Err(Error::NoStripe {
            threshold: STRIPE_THRESHOLD,
        });
    }
    runs.sort_unstable();
    Ok(runs[(runs.len() - 1) / 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Row-by-row interval overlap test over three frame periods.
    fn brute_force_rows(t: &CameraTimings, pulse: &PulseEvent) -> Vec<usize> {
        if pulse.width_us() == 0.0 {
            return vec![];
        }
        let frame = t.frame_duration_us();
        let s = pulse.start_us().rem_euclid(frame);
        let e = s + pulse.width_us();
        (0..t.total_rows())
            .filter(|&i| {
                let a = i as f64 * t.t_read_us();
                let b = a + t.t_exp_us();
                (-1i32..=1).any(|k| {
                    let off = f64::from(k) * frame;
                    let (pa, pb) = (s + off, e + off);
                    a.max(pa) < b.min(pb)
                })
            })
            .collect()
    }

    fn vga_camera() -> CameraTimings {
        CameraTimings::new(30.0, 1110.0, 480, 20, 640).unwrap()
    }

    #[test]
    fn frame_duration_examples() {
        assert_eq!(vga_camera().frame_duration_us(), 16110.0);
        let minimal = CameraTimings::new(30.0, 30.0, 480, 20, 640).unwrap();
        assert_eq!(minimal.frame_duration_us(), 15030.0);
        // 30 fps: 33333 = 30 * 1100 + 333
        let fps30 = CameraTimings::new(30.0, 333.0, 1080, 20, 1920).unwrap();
        assert_eq!(fps30.frame_duration_us(), 33333.0);
    }

    #[test]
    fn rows_exposure_constant_examples() {
        assert_eq!(vga_camera().rows_exposure_constant(), 37);
        assert_eq!(CameraTimings::new(30.0, 30.0, 10, 0, 4).unwrap().rows_exposure_constant(), 1);
        let t = CameraTimings::new(30.0, 100.0, 40, 0, 4).unwrap();
        assert_eq!(t.rows_exposure_constant(), 3);
    }

    #[test]
    fn invalid_timings_rejected() {
        assert!(CameraTimings::new(0.0, 30.0, 10, 0, 4).is_err());
        assert!(CameraTimings::new(30.0, 0.0, 10, 0, 4).is_err());
        assert!(CameraTimings::new(30.0, 20.0, 10, 0, 4).is_err());
        assert!(CameraTimings::new(30.0, 60.0, 0, 0, 4).is_err());
        assert!(CameraTimings::new(30.0, 60.0, 10, 0, 0).is_err());
        assert!(PulseEvent::new(0.0, -1.0).is_err());
    }

    #[test]
    fn one_and_two_microsecond_pulses_dazzle_the_same_rows() {
        let t = vga_camera();
        let start = slot_start_us(&t, 3);
        let a = t.dazzled_rows(&PulseEvent::new(start, 1.0).unwrap());
        let b = t.dazzled_rows(&PulseEvent::new(start, 2.0).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.len(), 37);
        assert_eq!(a, (3 * 37..4 * 37).collect::<Vec<_>>());
    }

    #[test]
    fn zero_width_pulse_is_empty() {
        let t = vga_camera();
        assert!(t.dazzled_rows(&PulseEvent::new(100.0, 0.0).unwrap()).is_empty());
    }

    #[test]
    fn double_read_width() {
        let t = vga_camera();
        // aligned: the end of the pulse touches the next window's start only
        let pulse = PulseEvent::new(3000.0, 60.0).unwrap();
        let rows = t.dazzled_rows(&pulse);
        assert_eq!(rows, brute_force_rows(&t, &pulse));
        assert_eq!(rows.len(), 37 + 1);
        // mid-row start picks up one more row on each side
        let pulse = PulseEvent::new(3015.0, 60.0).unwrap();
        let rows = t.dazzled_rows(&pulse);
        assert_eq!(rows, brute_force_rows(&t, &pulse));
        assert_eq!(rows.len(), 37 + 2);
    }

    #[test]
    fn pulse_early_in_frame_only_reaches_started_rows() {
        let t = vga_camera();
        let pulse = PulseEvent::new(300.0, 1.0).unwrap();
        assert_eq!(t.dazzled_rows(&pulse), (0..=10).collect::<Vec<_>>());
    }

    #[test]
    fn pulse_touching_window_end_does_not_dazzle() {
        // row 0 window is [0, 60); a pulse starting at 60 misses it
        let t = CameraTimings::new(30.0, 60.0, 4, 0, 1).unwrap();
        let rows = t.dazzled_rows(&PulseEvent::new(60.0, 1.0).unwrap());
        assert_eq!(rows, vec![1, 2]);
    }

    #[test]
    fn pulse_wraps_over_frame_end() {
        let t = CameraTimings::new(10.0, 20.0, 5, 0, 1).unwrap();
        // frame = 70; pulse [65, 75) wraps to [0, 5)
        let p = PulseEvent::new(65.0, 10.0).unwrap();
        assert_eq!(t.dazzled_rows(&p), vec![0]);
        assert_eq!(t.dazzled_rows(&p), brute_force_rows(&t, &p));
        let all = PulseEvent::new(3.0, 70.0).unwrap();
        assert_eq!(t.dazzled_rows(&all).len(), 5);
    }

    fn stripe_image(rows: usize, stripes: &[(usize, usize)]) -> Image {
        let mut data = vec![0.05; rows * 8];
        for &(start, len) in stripes {
            for r in start..start + len {
                data[r * 8..(r + 1) * 8].fill(1.0);
            }
        }
        Image::new(rows, 8, 1, data).unwrap()
    }

    #[test]
    fn calibrate_single_stripe() {
        assert_eq!(calibrate_rn(&stripe_image(200, &[(50, 37)])).unwrap(), 37);
    }

    #[test]
    fn calibrate_black_image_has_no_stripe() {
        let img = Image::filled(20, 4, 3, 0.0).unwrap();
        assert!(matches!(calibrate_rn(&img), Err(Error::NoStripe { .. })));
    }

    #[test]
    fn calibrate_median_ties_break_downward() {
        assert_eq!(calibrate_rn(&stripe_image(200, &[(10, 37), (100, 38)])).unwrap(), 37);
        assert_eq!(
            calibrate_rn(&stripe_image(200, &[(0, 5), (20, 9), (60, 7)])).unwrap(),
            7
        );
    }

    fn integral_timings() -> impl Strategy<Value = CameraTimings> {
        (1u32..60, 1usize..12, 1usize..60, 0usize..20, 1usize..6).prop_map(
            |(t_read, r_n, vis, hid, cols)| {
                CameraTimings::new(
                    f64::from(t_read),
                    f64::from(t_read) * r_n as f64,
                    vis,
                    hid,
                    cols,
                )
                .unwrap()
            },
        )
    }

    fn any_timings() -> impl Strategy<Value = CameraTimings> {
        (1u32..60, 0u32..400, 1usize..60, 0usize..20).prop_map(|(t_read, extra, vis, hid)| {
            let t_read = f64::from(t_read);
            CameraTimings::new(t_read, t_read + f64::from(extra) * 0.5, vis, hid, 3).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn dazzled_rows_match_brute_force(
            t in any_timings(), start_half in -2000i32..20000, width_half in 0u32..3000
        ) {
            let p = PulseEvent::new(f64::from(start_half) * 0.5, f64::from(width_half) * 0.5).unwrap();
            prop_assert_eq!(t.dazzled_rows(&p), brute_force_rows(&t, &p));
        }

        #[test]
        fn short_pulses_dazzle_rn_or_rn_plus_one_rows(
            t in integral_timings(), slot in 0usize..200, offset in 0.0f64..1.0, frac in 0.01f64..=1.0
        ) {
            let r_n = t.rows_exposure_constant();
            // keep the pulse clear of the frame wrap and the last rows
            prop_assume!(t.total_rows() > 2 * r_n + 2);
            let k = r_n + slot % (t.total_rows() - 2 * r_n - 1);
            let start = (k as f64 + offset) * t.t_read_us();
            let width = frac * t.t_read_us();
            let n = t.dazzled_rows(&PulseEvent::new(start, width).unwrap()).len();
            prop_assert!(n == r_n || n == r_n + 1, "n={} r_n={}", n, r_n);
            let aligned = t.dazzled_rows(&PulseEvent::new(k as f64 * t.t_read_us(), width).unwrap());
            prop_assert_eq!(aligned.len(), r_n);
        }

        #[test]
        fn each_extra_read_time_adds_one_row(t in integral_timings(), extra in 0usize..4) {
            let r_n = t.rows_exposure_constant();
            prop_assume!(t.total_rows() > r_n + extra + 2);
            let start = (r_n - 1) as f64 * t.t_read_us();
            let width = 0.5 * t.t_read_us() + extra as f64 * t.t_read_us();
            let n = t.dazzled_rows(&PulseEvent::new(start, width).unwrap()).len();
            prop_assert_eq!(n, r_n + extra);
        }

        #[test]
        fn frame_duration_strictly_increasing(t in any_timings()) {
            let f = t.frame_duration_us();
            let bump = |tr: f64, te: f64, v: usize, h: usize| {
                CameraTimings::new(tr, te, v, h, 3).unwrap().frame_duration_us()
            };
            let (tr, te, v, h) = (t.t_read_us(), t.t_exp_us(), t.n_rows_visible(), t.n_rows_hidden());
            prop_assert!(bump(tr + 0.5, te + 0.5, v, h) > f);
            prop_assert!(bump(tr, te + 0.5, v, h) > f);
            prop_assert!(bump(tr, te, v + 1, h) > f);
            prop_assert!(bump(tr, te, v, h + 1) > f);
        }

        #[test]
        fn calibration_recovers_rn_from_a_rendered_pulse(t in integral_timings(), slot in 0usize..50) {
            let r_n = t.rows_exposure_constant();
            prop_assume!(t.n_rows_visible() >= 2 * r_n);
            let slot = slot % (t.n_rows_visible() / r_n);
            let rows = t.dazzled_rows(&PulseEvent::new(slot_start_us(&t, slot), 0.5 * t.t_read_us()).unwrap());
            let mut data = vec![0.0; t.n_rows_visible() * t.n_cols()];
            for r in rows.into_iter().filter(|&r| r < t.n_rows_visible()) {
                data[r * t.n_cols()..(r + 1) * t.n_cols()].fill(1.0);
            }
            let img = Image::new(t.n_rows_visible(), t.n_cols(), 1, data).unwrap();
            prop_assert_eq!(calibrate_rn(&img).unwrap(), r_n);
        }
    }
}

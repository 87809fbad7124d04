//! Visibility of a pulsed source to a human observer.
//!
//! The eye integrates far longer than a sensor row, so it sees the source at
//! its average power. Glare scattering spreads that power over an effective
//! solid angle depending on the observer's off-axis angle, age and eye
//! pigmentation; the resulting luminance against the background sets the
//! largest duty cycle that stays below the contrast threshold.

mod vlambda;

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

/// Luminous efficacy normalization, lm/W.
pub const LUMINOUS_EFFICACY: f64 = 683.0;

/// mW/cm² to W/m².
pub fn mw_per_cm2_to_w_per_m2(mw_per_cm2: f64) -> f64 {
    mw_per_cm2 * 10.0
}

/// Threshold contrast as a function of background luminance.
#[derive(Clone)]
pub enum ContrastThreshold {
    Constant(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl ContrastThreshold {
    pub fn at(&self, l_b: f64) -> f64 {
        match self {
            ContrastThreshold::Constant(c) => *c,
            ContrastThreshold::Custom(f) => f(l_b),
        }
    }
}

impl Default for ContrastThreshold {
    /// A contrast of 1 suffices to recognize a small target.
    fn default() -> Self {
        ContrastThreshold::Constant(1.0)
    }
}

impl fmt::Debug for ContrastThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContrastThreshold::Constant(c) => write!(f, "Constant({c})"),
            ContrastThreshold::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Observer, background and source parameters.
#[derive(Debug, Clone)]
pub struct PhotopicScene {
    pub theta_deg: f64,
    pub age_years: f64,
    pub pigment: f64,
    /// Background luminance, cd/m².
    pub l_b: f64,
    /// Irradiance at the aperture while the source is on, W/m².
    pub e_sensor: f64,
    pub lambda_nm: f64,
    pub s_coeff: f64,
    pub t_exponent: f64,
    pub c_thr: ContrastThreshold,
}

impl PhotopicScene {
    /// Reference observer with the calibrated scattering coefficients.
    pub fn reference(theta_deg: f64) -> Self {
        let cal = reference_calibration();
        Self {
            theta_deg,
            s_coeff: cal.s_coeff,
            t_exponent: cal.t_exponent,
            ..Self::uncalibrated_reference(theta_deg)
        }
    }

    /// Reference observer with neutral scattering `S = 1, T = 0`.
    pub fn uncalibrated_reference(theta_deg: f64) -> Self {
        Self {
            theta_deg,
            age_years: 25.0,
            pigment: 1.0,
            l_b: 10.0,
            e_sensor: 500.0,
            lambda_nm: 650.0,
            s_coeff: 1.0,
            t_exponent: 0.0,
            c_thr: ContrastThreshold::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_deg > 0.0) {
            return Err(Error::domain(format!("theta_deg must be > 0, got {}", self.theta_deg)));
        }
        if !(self.l_b > 0.0) {
            return Err(Error::domain(format!("l_b must be > 0, got {}", self.l_b)));
        }
        if !(self.e_sensor > 0.0) {
            return Err(Error::domain(format!("e_sensor must be > 0, got {}", self.e_sensor)));
        }
        if !(self.age_years >= 0.0) {
            return Err(Error::domain(format!("age_years must be >= 0, got {}", self.age_years)));
        }
        if !(self.s_coeff > 0.0 && self.t_exponent.is_finite()) {
            return Err(Error::domain("s_coeff must be > 0 and t_exponent finite"));
        }
        photopic_efficacy(self.lambda_nm).map(|_| ())
    }
}

/// Glare scattering function of off-axis angle (degrees), age and pigment, sr⁻¹.
pub fn g_eye(theta_deg: f64, age_years: f64, pigment: f64) -> Result<f64> {
    if !(theta_deg > 0.0) {
        return Err(Error::domain(format!("theta_deg must be > 0, got {theta_deg}")));
    }
    let t = theta_deg;
    let age = 1.0 + (age_years / 62.5).powi(2);
    Ok(10.0 / t.powi(3) + (5.0 / t.powi(2) + 0.1 * pigment / t) * age + 0.0025 * pigment)
}

/// Effective collection `S * L_b^T * g_eye`, sr⁻¹.
pub fn f_eye(scene: &PhotopicScene) -> Result<f64> {
    let g = g_eye(scene.theta_deg, scene.age_years, scene.pigment)?;
    Ok(scene.s_coeff * scene.l_b.powf(scene.t_exponent) * g)
}

/// Luminance of the source seen at the given duty cycle, cd/m².
pub fn source_luminance(duty_cycle: f64, scene: &PhotopicScene) -> Result<f64> {
    if !(0.0..=1.0).contains(&duty_cycle) {
        return Err(Error::domain(format!("duty cycle must be in [0, 1], got {duty_cycle}")));
    }
    scene.validate()?;
    let v = photopic_efficacy(scene.lambda_nm)?;
    Ok(duty_cycle * scene.e_sensor * LUMINOUS_EFFICACY * v * f_eye(scene)?)
}

/// Weber contrast of the source against the background.
pub fn contrast(l_as: f64, l_b: f64) -> Result<f64> {
    if !(l_b > 0.0) {
        return Err(Error::domain(format!("background luminance must be > 0, got {l_b}")));
    }
    Ok((l_as - l_b) / l_b)
}

/// Largest duty cycle whose source contrast stays at the threshold.
pub fn duty_cycle_threshold(scene: &PhotopicScene) -> Result<f64> {
    scene.validate()?;
    let v = photopic_efficacy(scene.lambda_nm)?;
    let g = g_eye(scene.theta_deg, scene.age_years, scene.pigment)?;
    let c = scene.c_thr.at(scene.l_b);
    Ok(scene.l_b.powf(1.0 - scene.t_exponent) * (c + 1.0)
        / (scene.e_sensor * LUMINOUS_EFFICACY * v * scene.s_coeff * g))
}

/// V(λ) by linear interpolation of the 5 nm table.
pub fn photopic_efficacy(lambda_nm: f64) -> Result<f64> {
    use vlambda::{FIRST_NM, LAST_NM, STEP_NM, V_LAMBDA};
    if !(FIRST_NM..=LAST_NM).contains(&lambda_nm) {
        return Err(Error::domain(format!(
            "wavelength {lambda_nm} nm outside {FIRST_NM}..={LAST_NM} nm"
        )));
    }
    let pos = (lambda_nm - FIRST_NM) / STEP_NM;
    let i = (pos.floor() as usize).min(V_LAMBDA.len() - 2);
    let frac = pos - i as f64;
    Ok(V_LAMBDA[i] + frac * (V_LAMBDA[i + 1] - V_LAMBDA[i]))
}

/// Fraction of time a train of `pulse_count` pulses per frame is on.
pub fn duty_cycle_of_train(pulse_count: usize, width_us: f64, frame_rate_hz: f64) -> Result<f64> {
    if !(width_us >= 0.0 && frame_rate_hz >= 0.0) {
        return Err(Error::domain("pulse width and frame rate must be >= 0"));
    }
    Ok(pulse_count as f64 * width_us * frame_rate_hz / 1e6)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPoint {
    pub theta_deg: f64,
    pub l_b: f64,
    pub duty_cycle: f64,
}

/// Thresholds over the `theta x l_b` grid, sorted by `(theta, l_b)`.
pub fn threshold_surface(
    theta_grid: &[f64],
    l_b_grid: &[f64],
    scene_base: &PhotopicScene,
) -> Result<Vec<ThresholdPoint>> {
    if theta_grid.is_empty() || l_b_grid.is_empty() {
        return Err(Error::domain("threshold grids must be nonempty"));
    }
    let sorted = |g: &[f64]| {
        let mut g = g.to_vec();
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    };
    let (thetas, lbs) = (sorted(theta_grid), sorted(l_b_grid));
    let mut out = Vec::with_capacity(thetas.len() * lbs.len());
    for &theta_deg in &thetas {
        for &l_b in &lbs {
            let scene = PhotopicScene {
                theta_deg,
                l_b,
                ..scene_base.clone()
            };
            let duty_cycle = duty_cycle_threshold(&scene).map_err(|e| Error::GridPoint {
                theta_deg,
                l_b,
                source: Box::new(e),
            })?;
            out.push(ThresholdPoint {
                theta_deg,
                l_b,
                duty_cycle,
            });
        }
    }
    Ok(out)
}

/// A scene whose threshold duty cycle is known.
#[derive(Debug, Clone)]
pub struct CalibrationAnchor {
    pub scene: PhotopicScene,
    pub duty_cycle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringCalibration {
    pub s_coeff: f64,
    pub t_exponent: f64,
    /// Whether the anchors determined `S` and `T` uniquely.
    pub exact: bool,
}

/// Fits `S` and `T` to two threshold anchors.
///
/// In log space each anchor is linear in `(ln S, T)` with row `[1, ln L_b]`.
/// Anchors at distinct background luminances give a unique solution. Anchors
/// sharing `L_b` only fix `S * L_b^T`; the system is then solved in the
/// least-squares sense with the minimum-norm `(ln S, T)`.
pub fn calibrate_scattering(anchors: &[CalibrationAnchor; 2]) -> Result<ScatteringCalibration> {
    let mut rows = [[0.0; 2]; 2];
    let mut rhs = [0.0; 2];
    for (i, a) in anchors.iter().enumerate() {
        if !(a.duty_cycle > 0.0) {
            return Err(Error::domain("anchor duty cycles must be > 0"));
        }
        let neutral = PhotopicScene {
            s_coeff: 1.0,
            t_exponent: 0.0,
            ..a.scene.clone()
        };
        // threshold with S = 1, T = 0 is L_b (C+1) / (e 683 V g)
        let base = duty_cycle_threshold(&neutral)?;
        let ln_lb = a.scene.l_b.ln();
        rows[i] = [1.0, ln_lb];
        rhs[i] = base.ln() - a.duty_cycle.ln();
    }
    let m = Matrix2::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1]);
    let b = Vector2::new(rhs[0], rhs[1]);
    let exact = m.determinant().abs() > 1e-12;
    let pinv = m
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::domain(format!("calibration solve failed: {e}")))?;
    let sol = pinv * b;
    Ok(ScatteringCalibration {
        s_coeff: sol[0].exp(),
        t_exponent: sol[1],
        exact,
    })
}

/// Anchors at the reference observer: 0.01 % at 5° and 0.85 % at 15°.
pub fn reference_anchors() -> [CalibrationAnchor; 2] {
    [
        CalibrationAnchor {
            scene: PhotopicScene::uncalibrated_reference(5.0),
            duty_cycle: 1e-4,
        },
        CalibrationAnchor {
            scene: PhotopicScene::uncalibrated_reference(15.0),
            duty_cycle: 8.5e-3,
        },
    ]
}

pub fn reference_calibration() -> ScatteringCalibration {
    static CAL: OnceLock<ScatteringCalibration> = OnceLock::new();
    *CAL.get_or_init(|| {
        calibrate_scattering(&reference_anchors()).expect("reference anchors are valid")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn g_eye_examples() {
        assert_relative_eq!(g_eye(1.0, 0.0, 0.0).unwrap(), 15.0, max_relative = 1e-12);
        assert_relative_eq!(g_eye(1.0, 62.5, 0.0).unwrap(), 20.0, max_relative = 1e-12);
        assert_relative_eq!(g_eye(10.0, 0.0, 0.0).unwrap(), 0.06, max_relative = 1e-12);
        assert!(g_eye(0.0, 20.0, 1.0).is_err());
        assert!(g_eye(-3.0, 20.0, 1.0).is_err());
    }

    fn neutral(theta: f64) -> PhotopicScene {
        PhotopicScene {
            age_years: 0.0,
            pigment: 0.0,
            ..PhotopicScene::uncalibrated_reference(theta)
        }
    }

    #[test]
    fn f_eye_examples() {
        let s = neutral(1.0);
        assert_relative_eq!(f_eye(&s).unwrap(), 15.0, max_relative = 1e-12);
        let s2 = PhotopicScene { s_coeff: 2.0, ..neutral(1.0) };
        assert_relative_eq!(f_eye(&s2).unwrap(), 30.0, max_relative = 1e-12);
        let s3 = PhotopicScene { s_coeff: 3.0, t_exponent: 1.0, l_b: 1.0, ..neutral(1.0) };
        assert_relative_eq!(f_eye(&s3).unwrap(), 45.0, max_relative = 1e-12);
    }

    #[test]
    fn source_luminance_examples() {
        // theta = 10, A = 0, p = 0 gives f_eye = 0.06; 555 nm has V = 1
        let s = PhotopicScene { lambda_nm: 555.0, e_sensor: 500.0, ..neutral(10.0) };
        assert_eq!(source_luminance(0.0, &s).unwrap(), 0.0);
        assert_relative_eq!(source_luminance(0.01, &s).unwrap(), 204.9, max_relative = 1e-12);
        let one = source_luminance(0.02, &s).unwrap();
        assert_relative_eq!(one, 2.0 * 204.9, max_relative = 1e-12);
        assert!(source_luminance(1.5, &s).is_err());
    }

    #[test]
    fn contrast_examples() {
        assert_eq!(contrast(20.0, 10.0).unwrap(), 1.0);
        assert_eq!(contrast(10.0, 10.0).unwrap(), 0.0);
        assert_eq!(contrast(0.0, 10.0).unwrap(), -1.0);
        assert!(contrast(1.0, 0.0).is_err());
    }

    #[test]
    fn efficacy_examples() {
        assert_eq!(photopic_efficacy(555.0).unwrap(), 1.0);
        assert_relative_eq!(photopic_efficacy(650.0).unwrap(), 0.107, max_relative = 1e-12);
        assert!(photopic_efficacy(830.0).unwrap() < 1e-6);
        assert_relative_eq!(photopic_efficacy(652.5).unwrap(), 0.5 * (0.107 + 0.0816), max_relative = 1e-12);
        assert!(photopic_efficacy(359.9).is_err());
        assert!(photopic_efficacy(830.1).is_err());
    }

    #[test]
    fn duty_cycle_of_train_examples() {
        assert_eq!(duty_cycle_of_train(4, 1.0, 30.0).unwrap(), 0.00012);
        assert_eq!(duty_cycle_of_train(4, 70.0, 30.0).unwrap(), 0.0084);
        assert_eq!(duty_cycle_of_train(0, 70.0, 30.0).unwrap(), 0.0);
        assert!(duty_cycle_of_train(1, -1.0, 30.0).is_err());
    }

    #[test]
    fn surface_single_cell_matches_scalar() {
        let base = PhotopicScene::reference(7.0);
        let surf = threshold_surface(&[7.0], &[base.l_b], &base).unwrap();
        assert_eq!(surf.len(), 1);
        assert_eq!(surf[0].duty_cycle, duty_cycle_threshold(&base).unwrap());
    }

    #[test]
    fn surface_rows_increase_in_theta_and_are_sorted() {
        let base = PhotopicScene::reference(5.0);
        let thetas = [20.0, 2.0, 5.0, 10.0, 40.0, 80.0];
        let lbs = [100.0, 1.0, 10.0, 1000.0];
        let surf = threshold_surface(&thetas, &lbs, &base).unwrap();
        assert_eq!(surf.len(), 24);
        assert!(surf
            .windows(2)
            .all(|w| (w[0].theta_deg, w[0].l_b) < (w[1].theta_deg, w[1].l_b)));
        for &lb in &lbs {
            let col: Vec<f64> = surf.iter().filter(|p| p.l_b == lb).map(|p| p.duty_cycle).collect();
            assert!(col.windows(2).all(|w| w[0] < w[1]), "{col:?}");
        }
    }

    #[test]
    fn surface_errors_carry_grid_point() {
        let base = PhotopicScene::reference(5.0);
        let err = threshold_surface(&[5.0], &[-1.0], &base).unwrap_err();
        assert!(matches!(err, Error::GridPoint { l_b, .. } if l_b == -1.0));
    }

    #[test]
    fn calibration_is_exact_for_distinct_backgrounds() {
        let truth = PhotopicScene { s_coeff: 0.3, t_exponent: 0.4, ..PhotopicScene::uncalibrated_reference(8.0) };
        let other = PhotopicScene { l_b: 300.0, theta_deg: 12.0, ..truth.clone() };
        let anchors = [
            CalibrationAnchor { duty_cycle: duty_cycle_threshold(&truth).unwrap(), scene: truth.clone() },
            CalibrationAnchor { duty_cycle: duty_cycle_threshold(&other).unwrap(), scene: other },
        ];
        let cal = calibrate_scattering(&anchors).unwrap();
        assert!(cal.exact);
        assert_relative_eq!(cal.s_coeff, 0.3, max_relative = 1e-9);
        assert_relative_eq!(cal.t_exponent, 0.4, max_relative = 1e-9);
    }

    #[test]
    fn calibration_at_shared_background_is_least_squares() {
        let cal = calibrate_scattering(&reference_anchors()).unwrap();
        assert!(!cal.exact);
        // the log residuals of the two anchors cancel
        let [a, b] = reference_anchors();
        let fit = |anchor: &CalibrationAnchor| {
            let s = PhotopicScene { s_coeff: cal.s_coeff, t_exponent: cal.t_exponent, ..anchor.scene.clone() };
            (duty_cycle_threshold(&s).unwrap() / anchor.duty_cycle).ln()
        };
        assert!((fit(&a) + fit(&b)).abs() < 1e-9);
    }

    #[test]
    fn unit_conversion_is_times_ten() {
        assert_eq!(mw_per_cm2_to_w_per_m2(50.0), 500.0);
        assert_eq!(mw_per_cm2_to_w_per_m2(0.1), 1.0);
    }

    fn scene() -> impl Strategy<Value = PhotopicScene> {
        (
            0.5f64..90.0,
            0.0f64..90.0,
            0.0f64..3.0,
            0.01f64..5000.0,
            1.0f64..5000.0,
            380.0f64..780.0,
            0.01f64..10.0,
            -1.0f64..1.0,
            0.1f64..5.0,
        )
            .prop_map(|(theta_deg, age_years, pigment, l_b, e_sensor, lambda_nm, s_coeff, t_exponent, c)| {
                PhotopicScene {
                    theta_deg,
                    age_years,
                    pigment,
                    l_b,
                    e_sensor,
                    lambda_nm,
                    s_coeff,
                    t_exponent,
                    c_thr: ContrastThreshold::Constant(c),
                }
            })
    }

    proptest! {
        #[test]
        fn g_eye_decreasing_in_theta_nondecreasing_in_age_and_pigment(
            theta in 0.1f64..89.0, dt in 0.01f64..1.0, age in 0.0f64..90.0, p in 0.0f64..3.0
        ) {
            let g = g_eye(theta, age, p).unwrap();
            prop_assert!(g_eye(theta + dt, age, p).unwrap() < g);
            prop_assert!(g_eye(theta, age + 1.0, p).unwrap() >= g);
            prop_assert!(g_eye(theta, age, p + 0.1).unwrap() >= g);
        }

        #[test]
        fn threshold_round_trips_through_contrast(s in scene()) {
            let dc = duty_cycle_threshold(&s).unwrap();
            prop_assume!(dc <= 1.0);
            let c = contrast(source_luminance(dc, &s).unwrap(), s.l_b).unwrap();
            let want = s.c_thr.at(s.l_b);
            prop_assert!(((c - want) / want).abs() < 1e-9);
        }

        #[test]
        fn threshold_increasing_in_theta(s in scene(), dt in 0.01f64..5.0) {
            let wider = PhotopicScene { theta_deg: s.theta_deg + dt, ..s.clone() };
            prop_assert!(duty_cycle_threshold(&wider).unwrap() > duty_cycle_threshold(&s).unwrap());
        }

        #[test]
        fn luminance_linear_in_duty_cycle_and_irradiance(s in scene(), dc in 0.0f64..0.5, k in 0.1f64..2.0) {
            let base = source_luminance(dc, &s).unwrap();
            let scaled = source_luminance(dc * 2.0, &s).unwrap();
            prop_assert!((scaled - 2.0 * base).abs() <= 1e-12 * scaled.abs().max(1e-300));
            let brighter = PhotopicScene { e_sensor: s.e_sensor * k, ..s.clone() };
            let b = source_luminance(dc, &brighter).unwrap();
            prop_assert!((b - k * base).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }
}

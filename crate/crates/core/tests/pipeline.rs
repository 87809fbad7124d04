use dazzle_core::attack::{optimize, AttackConfig};
use dazzle_core::classifier::{argmax, Classifier, LinearModel};
use dazzle_core::photopic::duty_cycle_of_train;
use dazzle_core::synthesis::{compose, rendered_pattern};
use dazzle_core::timing::calibrate_rn;
use dazzle_core::{CameraTimings, DazzlePattern, Image, PulseTrain};
use proptest::prelude::*;

/// Class 0 wins on a dim frame; each bright stripe pushes class 1 up.
fn brightness_model() -> LinearModel {
    let n = 16 * 4;
    let mut weights = vec![0.0; n];
    weights.extend(vec![0.1; n]);
    LinearModel::new((16, 4, 1), 2, weights, vec![2.0, 0.0]).unwrap()
}

#[test]
fn attack_flips_a_linear_model_at_every_shift() {
    // R_n = 2, 8 slots, no hidden rows: every pulse is visible at every shift
    let t = CameraTimings::new(10.0, 20.0, 16, 0, 4).unwrap();
    let x = Image::filled(16, 4, 1, 0.2).unwrap();
    let model = brightness_model();
    assert_eq!(argmax(&model.logits(&x).unwrap()), 0);

    // every slot is equivalent under EoT here, so at alpha = 1 the excess
    // penalty holds all of them just below the binarization threshold
    let cfg = AttackConfig { alpha: 5.0, iterations: 120, eot_samples: 4, pulse_budget: Some(3), ..Default::default() };
    let a = optimize(&x, 0, &model, &t, &cfg).unwrap();
    assert_eq!(a.success_rate, 1.0);
    assert!(a.succeeded());
    assert!((2..=3).contains(&a.train.popcount()), "{:?}", a.train.active_slots());
    assert_eq!(a.shifts.len(), 8);
    assert_eq!(
        a.duty_cycle,
        duty_cycle_of_train(a.train.popcount(), a.train.width_us(), cfg.frame_rate_hz).unwrap()
    );

    let b = optimize(&x, 0, &model, &t, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tight_budget_caps_the_attack() {
    let t = CameraTimings::new(10.0, 20.0, 16, 0, 4).unwrap();
    let x = Image::filled(16, 4, 1, 0.2).unwrap();
    let cfg = AttackConfig { alpha: 5.0, iterations: 120, eot_samples: 4, pulse_budget: Some(1), ..Default::default() };
    let a = optimize(&x, 0, &brightness_model(), &t, &cfg).unwrap();
    assert!(a.train.popcount() <= 1);
    // one stripe adds 0.64 to class 1, short of the 0.72 gap
    assert_eq!(a.success_rate, 0.0);
}

proptest! {
    #[test]
    fn one_pulse_photo_calibrates_back_to_rn(
        t_read in 1u32..60, r_n in 1usize..12, extra in 0usize..40, hidden in 0usize..8, width in 0.05f64..=1.0
    ) {
        let t_read = f64::from(t_read);
        let t = CameraTimings::new(t_read, t_read * r_n as f64, 2 * r_n + extra, hidden, 3).unwrap();
        let train = PulseTrain::from_slots(&t, &[0], width * t_read).unwrap();
        let photo = rendered_pattern(&t, &train, 0).unwrap().to_image();
        prop_assert_eq!(calibrate_rn(&photo).unwrap(), r_n);
    }

    #[test]
    fn compose_only_brightens_within_range(
        pixels in proptest::collection::vec(0.0f64..=1.0, 24),
        rows in proptest::collection::vec(0.0f64..=1.0, 4),
        strength in 0.0f64..=1.0
    ) {
        let x = Image::new(4, 2, 3, pixels).unwrap();
        let d = DazzlePattern::from_row_values(rows, 2).unwrap();
        let y = compose(&x, &d, strength).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            prop_assert!(b >= a && (0.0..=1.0).contains(b));
        }
    }
}

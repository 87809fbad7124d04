//! Shared fixtures for the criterion benchmarks.

use dazzle_core::classifier::{Architecture, ConvNet, Split};
use dazzle_core::{CameraTimings, Image, PulseTrain, SyntheticDataset};

/// 64 visible + 4 hidden rows, R_n = 4, 17 slots.
pub fn desk_timings() -> CameraTimings {
    CameraTimings::new(30.0, 120.0, 64, 4, 64).expect("valid timings")
}

/// 1080p-like sensor: R_n = 37.
pub fn hd_timings() -> CameraTimings {
    CameraTimings::new(30.0, 1110.0, 1080, 45, 1920).expect("valid timings")
}

pub fn four_pulses(timings: &CameraTimings) -> PulseTrain {
    let n = timings.pulse_slots();
    PulseTrain::from_slots(timings, &[0, n / 4, n / 2, 3 * n / 4], 1.0).expect("valid train")
}

/// Untrained bundled architecture; speed does not depend on the weights.
pub fn bundled_net() -> ConvNet {
    let labels = SyntheticDataset::default().labels();
    ConvNet::initialize(Architecture::default(), labels, 0).expect("valid architecture")
}

pub fn sample_image() -> (Image, usize) {
    SyntheticDataset::default().sample(Split::HeldOut, 0)
}

//! Deterministic synthetic traces.
//!
//! Presets reproduce the mean per-batch latency split of eight reference
//! methods (lambda = 39.9 ms, batch size 64) and their offline accuracy on
//! fifteen image corruptions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};

use super::{BatchRecord, FrozenRun, MethodTrace};
use crate::error::{Error, Result, TraceError};
use crate::time::Nanos;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AccuracyCurve {
    Constant(f64),
    /// Linear from `start` at batch 1 to `end` at batch N.
    LinearRamp {
        start: f64,
        end: f64,
    },
    /// `before` for batches `1..=at`, `after` from `at+1`.
    Step {
        at: usize,
        before: f64,
        after: f64,
    },
}

impl AccuracyCurve {
    pub fn at(&self, index: usize, n: usize) -> f64 {
        let a = match *self {
            AccuracyCurve::Constant(a) => a,
            AccuracyCurve::LinearRamp { start, end } => {
                if n <= 1 {
                    start
                } else {
                    start + (end - start) * (index - 1) as f64 / (n - 1) as f64
                }
            }
            AccuracyCurve::Step { at, before, after } => {
                if index <= at {
                    before
                } else {
                    after
                }
            }
        };
        a.clamp(0.0, 1.0)
    }
}

/// A named latency/accuracy preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub method: &'static str,
    pub e_ms: &'static str,
    pub ell_ms: &'static str,
    pub jitter_sd_ms: f64,
    pub gradient_based: bool,
    /// Mean offline accuracy across all corruptions.
    pub accuracy: f64,
    /// Accuracy after the model is frozen mid-stream.
    pub frozen_accuracy: f64,
}

pub const LAMBDA_MS: &str = "39.9";
pub const BATCH_SIZE: u32 = 64;

pub const PRESETS: [Preset; 8] = [
    Preset {
        name: "standard-table2",
        method: "Standard",
        e_ms: "38.7",
        ell_ms: "0",
        jitter_sd_ms: 1.0,
        gradient_based: false,
        accuracy: 0.1816,
        frozen_accuracy: 0.1816,
    },
    Preset {
        name: "adabn-table2",
        method: "AdaBN",
        e_ms: "41.1",
        ell_ms: "0",
        jitter_sd_ms: 1.0,
        gradient_based: false,
        accuracy: 0.3172,
        frozen_accuracy: 0.3172,
    },
    Preset {
        name: "lame-table2",
        method: "LAME",
        e_ms: "40.3",
        ell_ms: "0",
        jitter_sd_ms: 1.0,
        gradient_based: false,
        accuracy: 0.1740,
        frozen_accuracy: 0.0381,
    },
    Preset {
        name: "neo-table2",
        method: "NEO",
        e_ms: "38.8",
        ell_ms: "0",
        jitter_sd_ms: 1.0,
        gradient_based: false,
        accuracy: 0.2214,
        frozen_accuracy: 0.2214,
    },
    Preset {
        name: "tent-table2",
        method: "Tent",
        e_ms: "41.1",
        ell_ms: "56.1",
        jitter_sd_ms: 4.0,
        gradient_based: true,
        accuracy: 0.4288,
        frozen_accuracy: 0.0010,
    },
    Preset {
        name: "eta-table2",
        method: "ETA",
        e_ms: "41.1",
        ell_ms: "56.6",
        jitter_sd_ms: 4.0,
        gradient_based: true,
        accuracy: 0.4835,
        frozen_accuracy: 0.0010,
    },
    Preset {
        name: "shot-im-table2",
        method: "SHOT-IM",
        e_ms: "41.1",
        ell_ms: "79.8",
        jitter_sd_ms: 4.0,
        gradient_based: true,
        accuracy: 0.4243,
        frozen_accuracy: 0.3222,
    },
    Preset {
        name: "sar-table2",
        method: "SAR",
        e_ms: "41.1",
        ell_ms: "154.1",
        jitter_sd_ms: 4.0,
        gradient_based: true,
        accuracy: 0.4414,
        frozen_accuracy: 0.0010,
    },
];

/// Corruption labels, in the order of [`OFFLINE_ACCURACY`] rows.
pub const CORRUPTIONS: [&str; 15] = [
    "gaussian_noise",
    "shot_noise",
    "impulse_noise",
    "defocus_blur",
    "glass_blur",
    "motion_blur",
    "zoom_blur",
    "snow",
    "frost",
    "fog",
    "brightness",
    "contrast",
    "elastic_transform",
    "pixelate",
    "jpeg_compression",
];

/// Offline accuracy (%) per corruption, columns in [`PRESETS`] order.
pub const OFFLINE_ACCURACY: [[f64; 8]; 15] = [
    [3.00, 16.15, 2.58, 5.23, 29.98, 36.01, 29.39, 31.46],
    [3.70, 16.76, 3.20, 6.13, 31.68, 38.69, 32.00, 31.40],
    [2.64, 16.67, 2.24, 5.18, 31.27, 38.18, 30.81, 32.58],
    [17.91, 15.10, 17.63, 21.11, 27.72, 33.19, 27.31, 29.10],
    [9.73, 15.44, 8.94, 12.60, 26.86, 33.19, 26.77, 28.21],
    [14.71, 26.22, 13.89, 17.76, 41.14, 47.78, 43.20, 41.70],
    [22.46, 38.90, 21.87, 26.57, 49.26, 52.74, 50.44, 49.23],
    [16.60, 34.18, 15.23, 21.72, 47.21, 52.09, 49.11, 47.23],
    [23.06, 33.11, 22.30, 27.67, 41.15, 45.99, 41.49, 42.47],
    [24.01, 47.83, 22.23, 30.57, 57.56, 60.03, 57.84, 57.64],
    [59.13, 65.33, 58.74, 60.27, 67.47, 67.85, 67.62, 67.41],
    [5.38, 16.87, 5.15, 8.07, 26.34, 45.63, 13.15, 38.26],
    [16.51, 44.18, 14.60, 24.93, 54.63, 57.74, 55.39, 54.65],
    [20.87, 49.10, 20.30, 26.05, 58.46, 60.93, 59.08, 58.37],
    [32.64, 39.99, 32.12, 38.26, 52.47, 55.22, 52.90, 52.46],
];

pub fn preset_names() -> Vec<String> {
    PRESETS.iter().map(|p| p.name.to_string()).collect()
}

/// Everything needed to generate a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub method: String,
    pub corruption: Option<String>,
    pub lambda: Nanos,
    pub e_mean: Nanos,
    pub ell_mean: Nanos,
    /// Gaussian jitter sd applied to every non-zero latency component.
    pub jitter_sd_ms: f64,
    pub batch_size: u32,
    pub curve: AccuracyCurve,
    pub frozen_curve: AccuracyCurve,
}

impl Profile {
    pub fn preset(name: &str) -> Result<Profile> {
        PRESETS
            .iter()
            .find(|p| p.name == name)
            .map(Profile::from)
            .ok_or_else(|| Error::UnknownPreset { name: name.to_string(), available: preset_names() })
    }

    /// Preset with accuracy pinned to the offline value for one corruption.
    /// Frozen accuracy keeps the preset's ratio to its mean accuracy.
    pub fn preset_for_corruption(name: &str, corruption: usize) -> Result<Profile> {
        let col = PRESETS
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::UnknownPreset { name: name.to_string(), available: preset_names() })?;
        let row = OFFLINE_ACCURACY
            .get(corruption)
            .ok_or_else(|| Error::Config(format!("corruption index {corruption} out of range")))?;
        let preset = &PRESETS[col];
        let accuracy = row[col] / 100.0;
        let mut profile = Profile::from(preset);
        profile.corruption = Some(CORRUPTIONS[corruption].to_string());
        profile.curve = AccuracyCurve::Constant(accuracy);
        profile.frozen_curve = AccuracyCurve::Constant(preset.frozen_accuracy * accuracy / preset.accuracy);
        Ok(profile)
    }
}

impl From<&Preset> for Profile {
    fn from(p: &Preset) -> Self {
        Profile {
            method: p.method.to_string(),
            corruption: None,
            lambda: Nanos::parse_ms(LAMBDA_MS).expect("valid constant"),
            e_mean: Nanos::parse_ms(p.e_ms).expect("valid constant"),
            ell_mean: Nanos::parse_ms(p.ell_ms).expect("valid constant"),
            jitter_sd_ms: p.jitter_sd_ms,
            batch_size: BATCH_SIZE,
            curve: AccuracyCurve::Constant(p.accuracy),
            frozen_curve: AccuracyCurve::Constant(p.frozen_accuracy),
        }
    }
}

/// Gaussian around `mean`, resampled until non-negative.
fn jittered<R: Rng>(rng: &mut R, mean: Nanos, sd_ms: f64) -> Nanos {
    if mean == Nanos::ZERO || sd_ms <= 0.0 {
        return mean;
    }
    let normal = Normal::new(mean.0 as f64, sd_ms * 1e6).expect("finite sd");
    loop {
        let x = normal.sample(rng);
        if x >= 0.0 {
            return Nanos(x.round() as u64);
        }
    }
}

fn correct_count<R: Rng>(rng: &mut R, batch_size: u32, accuracy: f64) -> u32 {
    let binomial = Binomial::new(u64::from(batch_size), accuracy).expect("accuracy in [0,1]");
    binomial.sample(rng) as u32
}

pub fn gen_synthetic(profile: &Profile, n: usize, seed: u64) -> Result<MethodTrace> {
    if n == 0 {
        return Err(TraceError::Empty.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (1..=n)
        .map(|index| BatchRecord {
            index,
            e: jittered(&mut rng, profile.e_mean, profile.jitter_sd_ms),
            ell: jittered(&mut rng, profile.ell_mean, profile.jitter_sd_ms),
            batch_size: profile.batch_size,
            correct: correct_count(&mut rng, profile.batch_size, profile.curve.at(index, n)),
        })
        .collect();
    Ok(MethodTrace::new(profile.method.clone(), profile.lambda, profile.corruption.clone(), records)?)
}

/// Frozen-phase run after `cutoff`: forward pass only (`ell = 0`), accuracy
/// from the profile's frozen curve.
pub fn gen_frozen(profile: &Profile, n: usize, cutoff: usize, seed: u64) -> Result<FrozenRun> {
    if cutoff > n {
        return Err(TraceError::FrozenCutoffRange { cutoff, n }.into());
    }
    let stream = seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(cutoff as u64 + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let records = (cutoff + 1..=n)
        .map(|index| BatchRecord {
            index,
            e: jittered(&mut rng, profile.e_mean, profile.jitter_sd_ms),
            ell: Nanos::ZERO,
            batch_size: profile.batch_size,
            correct: correct_count(&mut rng, profile.batch_size, profile.frozen_curve.at(index, n)),
        })
        .collect();
    Ok(FrozenRun::new(cutoff, records)?)
}

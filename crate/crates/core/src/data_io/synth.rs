//! Seeded synthetic wearable-sensor streams.
//!
//! Each class is a family of noisy sinusoids per channel. Coarse groups
//! (static vs moving) differ strongly in amplitude; classes inside a group
//! differ only in posture offsets or cadence, which gives the hierarchy
//! something to exploit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::RawRecording;
use crate::error::{Error, Result};
use crate::hierarchy::{TaskGraph, TaskId};

/// Sample rate of the built-in benchmarks.
pub const SYNTH_RATE_HZ: f64 = 26.0;

pub const CHANNELS: [&str; 6] = ["ax", "ay", "az", "gx", "gy", "gz"];

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWave {
    pub offset: f32,
    pub amplitude: f32,
    pub freq_hz: f32,
    /// Second harmonic at `harmonic_ratio · freq_hz`.
    pub harmonic_ratio: f32,
    pub harmonic_amplitude: f32,
}

impl ChannelWave {
    pub const fn new(offset: f32, amplitude: f32, freq_hz: f32) -> Self {
        Self {
            offset,
            amplitude,
            freq_hz,
            harmonic_ratio: 2.0,
            harmonic_amplitude: 0.0,
        }
    }

    pub const fn with_harmonic(mut self, ratio: f32, amplitude: f32) -> Self {
        self.harmonic_ratio = ratio;
        self.harmonic_amplitude = amplitude;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    pub channels: Vec<ChannelWave>,
    pub noise_std: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub sample_rate_hz: f64,
    /// Length of each contiguous single-class stretch.
    pub segment_seconds: f64,
    /// Relative per-segment jitter of frequency and amplitude.
    pub freq_jitter: f32,
    pub amp_jitter: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: SYNTH_RATE_HZ,
            segment_seconds: 10.0,
            freq_jitter: 0.05,
            amp_jitter: 0.1,
        }
    }
}

/// `duration_seconds` of every class, interleaved in segments so that class
/// changes occur inside the stream.
pub fn synth_generate(classes: &[ClassSpec], seed: u64, duration_seconds: f64) -> Result<RawRecording> {
    synth_generate_with(classes, seed, duration_seconds, &SynthConfig::default())
}

pub fn synth_generate_with(
    classes: &[ClassSpec],
    seed: u64,
    duration_seconds: f64,
    config: &SynthConfig,
) -> Result<RawRecording> {
    if classes.len() < 2 {
        return Err(Error::Precondition("synthetic data needs at least two classes".into()));
    }
    let width = classes[0].channels.len();
    if width == 0 || classes.iter().any(|c| c.channels.len() != width) {
        return Err(Error::Precondition(
            "every class must describe the same non-zero number of channels".into(),
        ));
    }
    let rate = config.sample_rate_hz;
    let total = (duration_seconds * rate).round() as usize;
    let segment = ((config.segment_seconds * rate).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut samples = Vec::with_capacity(total * classes.len());
    let mut labels = Vec::with_capacity(total * classes.len());
    let mut produced = vec![0usize; classes.len()];
    while produced.iter().any(|&p| p < total) {
        for (ci, class) in classes.iter().enumerate() {
            let n = segment.min(total - produced[ci]);
            if n == 0 {
                continue;
            }
            let noise = Normal::new(0.0f32, class.noise_std.max(0.0))
                .map_err(|e| Error::Precondition(format!("noise for {}: {e}", class.name)))?;
            let params: Vec<(f32, f32, f32, f32)> = class
                .channels
                .iter()
                .map(|_| {
                    let jf = 1.0 + config.freq_jitter * rng.gen_range(-1.0f32..=1.0);
                    let ja = 1.0 + config.amp_jitter * rng.gen_range(-1.0f32..=1.0);
                    let phase = rng.gen_range(0.0..std::f32::consts::TAU);
                    let phase2 = rng.gen_range(0.0..std::f32::consts::TAU);
                    (jf, ja, phase, phase2)
                })
                .collect();
            for i in 0..n {
                let t = i as f32 / rate as f32;
                let row = class
                    .channels
                    .iter()
                    .zip(&params)
                    .map(|(wave, &(jf, ja, p1, p2))| {
                        let f = wave.freq_hz * jf;
                        let base = wave.amplitude * ja * (std::f32::consts::TAU * f * t + p1).sin();
                        let harm = wave.harmonic_amplitude
                            * (std::f32::consts::TAU * f * wave.harmonic_ratio * t + p2).sin();
                        let eps = if class.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        wave.offset + base + harm + eps
                    })
                    .collect();
                samples.push(row);
                labels.push(class.name.clone());
            }
            produced[ci] += n;
        }
    }
    Ok(RawRecording {
        sample_rate_hz: rate,
        channels: (0..width)
            .map(|c| CHANNELS.get(c).map(|s| s.to_string()).unwrap_or(format!("ch{c}")))
            .collect(),
        samples,
        labels,
    })
}

fn class(name: &str, noise_std: f32, channels: [ChannelWave; 6]) -> ClassSpec {
    ClassSpec {
        name: name.to_string(),
        channels: channels.to_vec(),
        noise_std,
    }
}

const fn w(offset: f32, amplitude: f32, freq_hz: f32) -> ChannelWave {
    ChannelWave::new(offset, amplitude, freq_hz)
}

/// Four activities in two coarse groups: `sit`/`lie` (static) and
/// `walk`/`run` (moving).
pub fn four_class_specs() -> Vec<ClassSpec> {
    vec![
        class(
            "sit",
            0.03,
            [w(0.15, 0.02, 0.3), w(0.25, 0.02, 0.3), w(0.93, 0.02, 0.3), w(0.0, 0.03, 0.4), w(0.0, 0.03, 0.4), w(0.0, 0.03, 0.4)],
        ),
        class(
            "lie",
            0.03,
            [w(0.55, 0.02, 0.3), w(0.10, 0.02, 0.3), w(0.80, 0.02, 0.3), w(0.0, 0.03, 0.4), w(0.0, 0.03, 0.4), w(0.0, 0.03, 0.4)],
        ),
        class(
            "walk",
            0.08,
            [w(0.10, 0.30, 1.8), w(0.20, 0.20, 1.8), w(0.95, 0.45, 1.8), w(0.0, 0.50, 1.8), w(0.0, 0.35, 0.9), w(0.0, 0.25, 1.8)],
        ),
        class(
            "run",
            0.10,
            [w(0.10, 0.55, 2.7), w(0.20, 0.35, 2.7), w(0.95, 0.80, 2.7), w(0.0, 0.90, 2.7), w(0.0, 0.60, 1.35), w(0.0, 0.45, 2.7)],
        ),
    ]
}

/// Hierarchy over [`four_class_specs`]:
/// `motion {static, moving}`, `posture {sit, lie}` under static,
/// `gait {walk, run}` under moving.
pub fn four_class_schema() -> TaskGraph {
    let mut g = TaskGraph::new(vec![
        ("motion", vec!["static", "moving"]),
        ("posture", vec!["sit", "lie"]),
        ("gait", vec!["walk", "run"]),
    ]);
    for (task, label) in [(2, "static"), (3, "moving")] {
        g.depend(TaskId(task), TaskId(1), label)
            .expect("indices are in range");
    }
    g
}

/// Two sub-patterns of `walk` that differ only slightly: a small vertical
/// offset and a second gyro harmonic of opposite sign.
pub fn stairs_split_specs() -> Vec<ClassSpec> {
    let up = class(
        "walk_up",
        0.08,
        [
            w(0.10, 0.30, 1.8),
            w(0.20, 0.20, 1.8),
            w(1.07, 0.45, 1.8),
            w(0.0, 0.50, 1.8).with_harmonic(2.0, 0.15),
            w(0.0, 0.35, 0.9),
            w(0.0, 0.25, 1.8),
        ],
    );
    let down = class(
        "walk_down",
        0.08,
        [
            w(0.10, 0.30, 1.8),
            w(0.20, 0.20, 1.8),
            w(0.83, 0.45, 1.8),
            w(0.0, 0.50, 1.8).with_harmonic(3.0, 0.15),
            w(0.0, 0.35, 0.9),
            w(0.0, 0.25, 1.8),
        ],
    );
    vec![up, down]
}

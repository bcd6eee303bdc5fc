use super::RawRecording;
use crate::error::{Error, Result};
use crate::tensor_nn::Tensor;
use crate::training::LabeledWindow;

/// How a window spanning several labels is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelRule {
    /// Keep the window under its most frequent label (earliest wins a tie).
    #[default]
    Majority,
    /// Drop any window whose rows do not all share one label.
    StrictUniform,
}

impl std::str::FromStr for LabelRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(LabelRule::Majority),
            "strict" | "strict-uniform" | "strict_uniform" => Ok(LabelRule::StrictUniform),
            other => Err(Error::Precondition(format!(
                "label rule must be `majority` or `strict-uniform`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for LabelRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LabelRule::Majority => "majority",
            LabelRule::StrictUniform => "strict-uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowingConfig {
    pub window_seconds: f64,
    pub overlap_fraction: f64,
    pub label_rule: LabelRule,
}

impl Default for WindowingConfig {
    /// Two-second windows with 50% overlap.
    fn default() -> Self {
        Self {
            window_seconds: 2.0,
            overlap_fraction: 0.5,
            label_rule: LabelRule::Majority,
        }
    }
}

impl WindowingConfig {
    pub fn window_len(&self, sample_rate_hz: f64) -> Result<usize> {
        let len = (self.window_seconds * sample_rate_hz).round();
        if !(len >= 1.0) {
            return Err(Error::Precondition(format!(
                "window of {} s at {} Hz is shorter than one sample",
                self.window_seconds, sample_rate_hz
            )));
        }
        Ok(len as usize)
    }

    pub fn stride(&self, window_len: usize) -> Result<usize> {
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::Precondition(format!(
                "overlap fraction must lie in [0, 1), got {}",
                self.overlap_fraction
            )));
        }
        Ok(((window_len as f64 * (1.0 - self.overlap_fraction)).round() as usize).max(1))
    }
}

/// Cut `recording` into `channels × window_len` windows.
pub fn segment_windows(recording: &RawRecording, config: &WindowingConfig) -> Result<Vec<LabeledWindow>> {
    let len = config.window_len(recording.sample_rate_hz)?;
    let stride = config.stride(len)?;
    segment_by_samples(recording, len, stride, config.label_rule)
}

pub fn segment_by_samples(
    recording: &RawRecording,
    window_len: usize,
    stride: usize,
    rule: LabelRule,
) -> Result<Vec<LabeledWindow>> {
    recording.validate(None)?;
    if window_len == 0 || stride == 0 {
        return Err(Error::Precondition("window length and stride must be positive".into()));
    }
    if window_len > recording.len() {
        return Err(Error::Data(format!(
            "window of {window_len} samples is longer than the recording ({} samples)",
            recording.len()
        )));
    }
    let channels = recording.channels.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start + window_len <= recording.len() {
        let labels = &recording.labels[start..start + window_len];
        let label = match rule {
            LabelRule::StrictUniform => labels.iter().all(|l| *l == labels[0]).then(|| labels[0].clone()),
            LabelRule::Majority => Some(majority(labels)),
        };
        if let Some(label) = label {
            let mut data = vec![0.0f32; channels * window_len];
            for (t, row) in recording.samples[start..start + window_len].iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    data[c * window_len + t] = *v;
                }
            }
            out.push(LabeledWindow {
                window: Tensor::new(vec![channels, window_len], data)?,
                label,
            });
        }
        start += stride;
    }
    Ok(out)
}

fn majority(labels: &[String]) -> String {
    let mut counts: Vec<(&str, usize)> = Vec::new();
    for l in labels {
        match counts.iter_mut().find(|(x, _)| *x == l) {
            Some((_, n)) => *n += 1,
            None => counts.push((l, 1)),
        }
    }
    let mut best = counts[0];
    for &c in &counts[1..] {
        if c.1 > best.1 {
            best = c;
        }
    }
    best.0.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn recording(labels: &[&str]) -> RawRecording {
        RawRecording {
            sample_rate_hz: 2.0,
            channels: vec!["a".into(), "b".into()],
            samples: (0..labels.len()).map(|i| vec![i as f32, -(i as f32)]).collect(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn stride_arithmetic() {
        let rec = recording(&["x"; 10]);
        let cfg = WindowingConfig {
            window_seconds: 2.0,
            overlap_fraction: 0.5,
            label_rule: LabelRule::Majority,
        };
        let w = segment_windows(&rec, &cfg).unwrap();
        let offsets: Vec<f32> = w.iter().map(|w| w.window.data()[0]).collect();
        assert_eq!(offsets, vec![0.0, 2.0, 4.0, 6.0]);
        assert_eq!(w[1].window.shape(), &[2, 4]);
        // channel-major layout
        assert_eq!(w[1].window.data(), &[2.0, 3.0, 4.0, 5.0, -2.0, -3.0, -4.0, -5.0]);
    }

    #[test]
    fn two_second_windows_at_26_hz() {
        let cfg = WindowingConfig::default();
        let len = cfg.window_len(26.0).unwrap();
        assert_eq!(len, 52);
        assert_eq!(cfg.stride(len).unwrap(), 26);
    }

    #[test]
    fn uniform_label_inherited_under_both_rules() {
        let rec = recording(&["walk"; 9]);
        for rule in [LabelRule::Majority, LabelRule::StrictUniform] {
            let w = segment_by_samples(&rec, 3, 2, rule).unwrap();
            assert_eq!(w.len(), 4);
            assert!(w.iter().all(|w| w.label == "walk"));
        }
    }

    #[test]
    fn window_longer_than_recording() {
        let rec = recording(&["x"; 3]);
        assert!(segment_by_samples(&rec, 4, 1, LabelRule::Majority).is_err());
    }

    #[test]
    fn majority_tie_goes_to_earliest() {
        let rec = recording(&["a", "b", "b", "a"]);
        let w = segment_by_samples(&rec, 4, 4, LabelRule::Majority).unwrap();
        assert_eq!(w[0].label, "a");
    }

    /// Enumerate every window start and count by hand.
    fn brute_counts(labels: &[&str], len: usize, stride: usize) -> (usize, usize) {
        let mut starts = Vec::new();
        let mut s = 0;
        while s + len <= labels.len() {
            starts.push(s);
            s += stride;
        }
        let uniform = starts
            .iter()
            .filter(|&&s| labels[s..s + len].iter().all(|l| *l == labels[s]))
            .count();
        (starts.len(), uniform)
    }

    #[test]
    fn strict_rule_drops_boundary_windows() {
        let labels = ["sit", "sit", "sit", "sit", "sit", "run", "run", "run", "run", "run", "run"];
        let rec = recording(&labels);
        let majority = segment_by_samples(&rec, 4, 2, LabelRule::Majority).unwrap();
        let strict = segment_by_samples(&rec, 4, 2, LabelRule::StrictUniform).unwrap();
        let (all, uniform) = brute_counts(&labels, 4, 2);
        assert_eq!(majority.len(), all);
        assert_eq!(strict.len(), uniform);
        assert!(strict.len() < majority.len());
    }

    proptest! {
        #[test]
        fn window_count_formula(n in 1usize..200, len in 1usize..40, stride in 1usize..40) {
            prop_assume!(len <= n);
            let labels = vec!["x"; n];
            let rec = recording(&labels);
            let w = segment_by_samples(&rec, len, stride, LabelRule::Majority).unwrap();
            prop_assert_eq!(w.len(), (n - len) / stride + 1);
        }
    }
}

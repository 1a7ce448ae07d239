use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub sample_rate: u32,
    /// Analysis window in samples (25 ms at 16 kHz).
    pub window: usize,
    /// Hop in samples (10 ms at 16 kHz).
    pub hop: usize,
    pub fft_size: usize,
    pub num_filters: usize,
    pub num_cepstra: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub preemphasis: f64,
    /// Half-width of the Δ regression window.
    pub delta_window: usize,
    /// Floor applied before every logarithm.
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window: 400,
            hop: 160,
            fft_size: 512,
            num_filters: 26,
            num_cepstra: 13,
            low_hz: 0.0,
            high_hz: 8_000.0,
            preemphasis: 0.97,
            delta_window: 2,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn dim(&self) -> usize {
        3 * self.num_cepstra
    }
}

/// Number of full analysis windows that fit in `samples` samples.
pub fn num_frames(samples: usize, cfg: &MfccConfig) -> usize {
    if samples < cfg.window {
        0
    } else {
        (samples - cfg.window) / cfg.hop + 1
    }
}

/// 13 cepstra (c0 replaced by log frame energy) plus Δ and ΔΔ.
pub fn compute_mfcc(
    id: impl Into<String>,
    pcm: &[f64],
    sample_rate: u32,
    cfg: &MfccConfig,
) -> Result<FeatureMatrix> {
    if sample_rate != cfg.sample_rate {
        return Err(Error::Input(format!(
            "sample rate {sample_rate} Hz, expected {}",
            cfg.sample_rate
        )));
    }
    let t = num_frames(pcm.len(), cfg);
    if t == 0 {
        return Err(Error::Input(format!(
            "{} samples is shorter than one {}-sample window",
            pcm.len(),
            cfg.window
        )));
    }
    if cfg.fft_size < cfg.window {
        return Err(Error::Config("fft_size smaller than window".into()));
    }
    let hamming: Vec<f64> = (0..cfg.window)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (cfg.window - 1) as f64).cos())
        .collect();
    let filters = mel_filterbank(cfg);
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
    let nc = cfg.num_cepstra;
    let mut statics = Matrix::zeros(t, nc);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let mut frame = vec![0.0; cfg.window];
    for i in 0..t {
        let start = i * cfg.hop;
        let raw = &pcm[start..start + cfg.window];
        let energy: f64 = raw.iter().map(|s| s * s).sum();
        for n in 0..cfg.window {
            let prev = if n > 0 { raw[n - 1] } else { raw[0] };
            frame[n] = (raw[n] - cfg.preemphasis * prev) * hamming[n];
        }
        for (k, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(if k < cfg.window { frame[k] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..cfg.fft_size / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        let log_mel: Vec<f64> = filters
            .iter()
            .map(|f| f.iter().zip(&power).map(|(w, p)| w * p).sum::<f64>().max(cfg.log_floor).ln())
            .collect();
        let row = statics.row_mut(i);
        let m = log_mel.len() as f64;
        for (c, out) in row.iter_mut().enumerate() {
            *out = (2.0 / m).sqrt()
                * log_mel
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v * (PI * c as f64 * (j as f64 + 0.5) / m).cos())
                    .sum::<f64>();
        }
        row[0] = energy.max(cfg.log_floor).ln();
    }
    let delta = deltas(&statics, cfg.delta_window);
    let delta2 = deltas(&delta, cfg.delta_window);
    let frames = Matrix::from_fn(t, 3 * nc, |r, c| match c / nc {
        0 => statics.get(r, c),
        1 => delta.get(r, c - nc),
        _ => delta2.get(r, c - 2 * nc),
    });
    FeatureMatrix::new(id, frames)
}

/// Regression deltas over `±half` frames with edge replication.
fn deltas(x: &Matrix, half: usize) -> Matrix {
    let (t, d) = x.shape();
    let denom: f64 = 2.0 * (1..=half).map(|n| (n * n) as f64).sum::<f64>();
    Matrix::from_fn(t, d, |r, c| {
        let mut s = 0.0;
        for n in 1..=half {
            let fwd = x.get((r + n).min(t - 1), c);
            let back = x.get(r.saturating_sub(n), c);
            s += n as f64 * (fwd - back);
        }
        s / denom
    })
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the `fft_size/2 + 1` power bins.
fn mel_filterbank(cfg: &MfccConfig) -> Vec<Vec<f64>> {
    let bins = cfg.fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.low_hz), hz_to_mel(cfg.high_hz));
    let centers: Vec<f64> = (0..cfg.num_filters + 2)
        .map(|i| {
            let mel = lo + (hi - lo) * i as f64 / (cfg.num_filters + 1) as f64;
            mel_to_hz(mel) * cfg.fft_size as f64 / cfg.sample_rate as f64
        })
        .collect();
    (0..cfg.num_filters)
        .map(|m| {
            let (l, c, r) = (centers[m], centers[m + 1], centers[m + 2]);
            (0..bins)
                .map(|k| {
                    let k = k as f64;
                    if k <= l || k >= r {
                        0.0
                    } else if k <= c {
                        (k - l) / (c - l)
                    } else {
                        (r - k) / (r - c)
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, secs: f64) -> Vec<f64> {
        let n = (16_000.0 * secs) as usize;
        (0..n)
            .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / 16_000.0).sin())
            .collect()
    }

    #[test]
    fn one_second_gives_98_frames_of_39_dims() {
        let f = compute_mfcc("s", &sine(440.0, 1.0), 16_000, &MfccConfig::default()).unwrap();
        assert_eq!(f.len(), (16_000 - 400) / 160 + 1);
        assert_eq!(f.len(), 98);
        assert_eq!(f.dim(), 39);
    }

    #[test]
    fn silence_is_constant_with_zero_deltas() {
        let f = compute_mfcc("z", &vec![0.0; 8_000], 16_000, &MfccConfig::default()).unwrap();
        let first = f.frame(0).to_vec();
        for t in 0..f.len() {
            assert_eq!(f.frame(t), first.as_slice());
            assert!(f.frame(t)[13..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn different_pitches_differ() {
        let cfg = MfccConfig::default();
        let a = compute_mfcc("a", &sine(440.0, 0.5), 16_000, &cfg).unwrap();
        let b = compute_mfcc("b", &sine(880.0, 0.5), 16_000, &cfg).unwrap();
        let (ma, mb) = (a.frames.mean_rows(), b.frames.mean_rows());
        let cos = crate::numeric::dot(&ma, &mb) / (crate::numeric::norm(&ma) * crate::numeric::norm(&mb));
        assert!(cos < 0.999, "cos = {cos}");
    }

    #[test]
    fn deterministic() {
        let cfg = MfccConfig::default();
        let s = sine(300.0, 0.3);
        assert_eq!(compute_mfcc("a", &s, 16_000, &cfg).unwrap(), compute_mfcc("a", &s, 16_000, &cfg).unwrap());
    }

    #[test]
    fn rejects_wrong_rate_and_short_input() {
        let cfg = MfccConfig::default();
        assert!(matches!(compute_mfcc("a", &sine(440.0, 1.0), 8_000, &cfg), Err(Error::Input(_))));
        assert!(matches!(compute_mfcc("a", &[0.0; 399], 16_000, &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn delta_of_ramp_is_unit_slope_inside() {
        let x = Matrix::from_fn(10, 1, |r, _| r as f64);
        let d = deltas(&x, 2);
        for r in 2..8 {
            assert!((d.get(r, 0) - 1.0).abs() < 1e-12);
        }
    }
}

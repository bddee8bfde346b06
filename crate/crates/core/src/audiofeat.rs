//! MFCC extraction: Hann-windowed frames, power spectrum, mel filterbank,
//! log energies, orthonormal DCT-II, then aggregation of the frame series
//! into a fixed-length vector.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::datamodel::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub frame_length: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fmin: f64,
    /// Upper filterbank edge in Hz; `None` means sample_rate / 2.
    pub fmax: Option<f64>,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_length: 1024,
            hop: 512,
            n_mels: 26,
            n_mfcc: 13,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        if self.n_mfcc > self.n_mels {
            return Err(Error::Config(format!(
                "n_mfcc ({}) must not exceed n_mels ({})",
                self.n_mfcc, self.n_mels
            )));
        }
        if self.hop == 0 || self.hop > self.frame_length {
            return Err(Error::Config(format!(
                "hop ({}) must be in [1, frame_length ({})]",
                self.hop, self.frame_length
            )));
        }
        let fmax = self.fmax.unwrap_or(sample_rate / 2.0);
        if !(self.fmin < fmax && fmax <= sample_rate / 2.0) {
            return Err(Error::Config(format!(
                "need fmin ({}) < fmax ({fmax}) <= sample_rate/2 ({})",
                self.fmin,
                sample_rate / 2.0
            )));
        }
        Ok(())
    }
}

/// MFCC frame series with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccMatrix {
    /// frames x n_mfcc, row-major.
    pub coeffs: Vec<Vec<f64>>,
    pub config: MfccConfig,
    pub sample_rate: f64,
}

impl MfccMatrix {
    pub fn n_frames(&self) -> usize {
        self.coeffs.len()
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank over the one-sided spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    /// n_mels rows of n_fft/2 + 1 weights.
    pub weights: Vec<Vec<f64>>,
    /// Filter center frequencies in Hz.
    pub centers_hz: Vec<f64>,
}

/// Builds `n_mels` triangular filters with centers equally spaced on the
/// mel scale between `fmin` and `fmax`. Each filter peaks at 1.0 and its
/// support runs between its neighbors' centers.
pub fn mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate: f64,
    fmin: f64,
    fmax: f64,
) -> Result<FilterBank> {
    if n_mels == 0 {
        return Err(Error::Config("n_mels must be >= 1".into()));
    }
    let n_bins = n_fft / 2 + 1;
    // n_mels + 2 edge points: fmin, the centers, fmax.
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    let edges_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate / n_fft as f64;
    let mut weights = vec![vec![0.0; n_bins]; n_mels];
    for (m, row) in weights.iter_mut().enumerate() {
        let (left, center, right) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        let mut support = 0usize;
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            if f > left && f < center {
                *w = (f - left) / (center - left);
            } else if (f - center).abs() < 1e-12 * sample_rate {
                *w = 1.0;
            } else if f > center && f < right {
                *w = (right - f) / (right - center);
            }
            if *w > 0.0 {
                support += 1;
            }
        }
        if support == 0 {
            return Err(Error::EmptyFilterSupport { index: m });
        }
    }
    Ok(FilterBank {
        weights,
        centers_hz: edges_hz[1..=n_mels].to_vec(),
    })
}

fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Orthonormal DCT-II matrix, `rows x n` (rows <= n).
pub fn dct2_matrix(rows: usize, n: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            (0..n)
                .map(|i| scale * (PI * (i as f64 + 0.5) * k as f64 / n as f64).cos())
                .collect()
        })
        .collect()
}

fn power_spectrum(fft: &Arc<dyn Fft<f64>>, frame: &[f64], window: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = frame
        .iter()
        .zip(window)
        .map(|(&x, &w)| Complex::new(x * w, 0.0))
        .collect();
    fft.process(&mut buf);
    buf[..frame.len() / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

/// Extracts the MFCC frame series of a waveform.
pub fn mfcc(w: &Waveform, cfg: &MfccConfig) -> Result<MfccMatrix> {
    cfg.validate(w.sample_rate)?;
    if w.len() < cfg.frame_length {
        return Err(Error::WaveformTooShort {
            len: w.len(),
            frame_length: cfg.frame_length,
        });
    }
    let fmax = cfg.fmax.unwrap_or(w.sample_rate / 2.0);
    let bank = mel_filterbank(cfg.n_mels, cfg.frame_length, w.sample_rate, cfg.fmin, fmax)?;
    let window = hann_window(cfg.frame_length);
    let dct = dct2_matrix(cfg.n_mfcc, cfg.n_mels);
    let fft = FftPlanner::new().plan_fft_forward(cfg.frame_length);

    let n_frames = (w.len() - cfg.frame_length) / cfg.hop + 1;
    let mut coeffs = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let start = f * cfg.hop;
        let spectrum = power_spectrum(&fft, &w.samples[start..start + cfg.frame_length], &window);
        let log_energies: Vec<f64> = bank
            .weights
            .iter()
            .map(|row| {
                let e: f64 = row.iter().zip(&spectrum).map(|(w, s)| w * s).sum();
                e.max(cfg.log_floor).ln()
            })
            .collect();
        let frame_coeffs: Vec<f64> = dct
            .iter()
            .map(|row| row.iter().zip(&log_energies).map(|(d, e)| d * e).sum())
            .collect();
        coeffs.push(frame_coeffs);
    }
    Ok(MfccMatrix {
        coeffs,
        config: cfg.clone(),
        sample_rate: w.sample_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    MeanStd,
}

/// Collapses the frame series into a fixed-length vector: per-coefficient
/// mean, optionally followed by per-coefficient population standard
/// deviation.
pub fn aggregate(m: &MfccMatrix, method: Aggregation) -> Result<Vec<f64>> {
    let n_frames = m.n_frames();
    if n_frames == 0 {
        return Err(Error::EmptyInput("MFCC matrix has no frames".into()));
    }
    let n = m.coeffs[0].len();
    let mut mean = vec![0.0; n];
    for frame in &m.coeffs {
        for (acc, &v) in mean.iter_mut().zip(frame) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= n_frames as f64;
    }
    match method {
        Aggregation::Mean => Ok(mean),
        Aggregation::MeanStd => {
            let mut var = vec![0.0; n];
            for frame in &m.coeffs {
                for ((acc, &v), &mu) in var.iter_mut().zip(frame).zip(&mean) {
                    *acc += (v - mu) * (v - mu);
                }
            }
            let mut out = mean;
            out.extend(var.iter().map(|v| (v / n_frames as f64).sqrt()));
            Ok(out)
        }
    }
}

pub mod oracle {
    //! Brute-force reference path: naive O(n^2) DFT, direct filterbank
    //! application and direct DCT-II. Used by the test suite to check the
    //! fast path; kept independent of it.

    use super::*;

    pub fn naive_dft_power(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..n / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &x) in frame.iter().enumerate() {
                    let phi = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += x * phi.cos();
                    im += x * phi.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    /// Index of the largest DFT magnitude over the one-sided spectrum.
    pub fn dft_peak_hz(w: &Waveform) -> f64 {
        let power = naive_dft_power(&w.samples);
        let peak = power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        peak as f64 * w.sample_rate / w.samples.len() as f64
    }

    pub fn naive_mfcc_frame(frame: &[f64], cfg: &MfccConfig, sample_rate: f64) -> Vec<f64> {
        let window = hann_window(frame.len());
        let windowed: Vec<f64> = frame.iter().zip(&window).map(|(x, w)| x * w).collect();
        let power = naive_dft_power(&windowed);
        let fmax = cfg.fmax.unwrap_or(sample_rate / 2.0);
        let bank = mel_filterbank(cfg.n_mels, frame.len(), sample_rate, cfg.fmin, fmax).unwrap();
        let log_e: Vec<f64> = bank
            .weights
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&power)
                    .map(|(w, s)| w * s)
                    .sum::<f64>()
                    .max(cfg.log_floor)
                    .ln()
            })
            .collect();
        (0..cfg.n_mfcc)
            .map(|k| {
                let scale = if k == 0 {
                    (1.0 / cfg.n_mels as f64).sqrt()
                } else {
                    (2.0 / cfg.n_mels as f64).sqrt()
                };
                log_e
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| {
                        scale * (PI * (i as f64 + 0.5) * k as f64 / cfg.n_mels as f64).cos() * e
                    })
                    .sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, sample_rate: f64, n: usize) -> Waveform {
        let samples = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / sample_rate).sin())
            .collect();
        Waveform::new(samples, sample_rate).unwrap()
    }

    #[test]
    fn single_filter_spans_range() {
        let bank = mel_filterbank(1, 64, 8000.0, 0.0, 4000.0).unwrap();
        assert_eq!(bank.weights.len(), 1);
        assert_eq!(bank.weights[0].len(), 33);
        let max = bank.weights[0].iter().cloned().fold(f64::MIN, f64::max);
        assert!(max > 0.0 && max <= 1.0);
        // Triangle apex at the mel midpoint of (0, 4000).
        let center = mel_to_hz((hz_to_mel(0.0) + hz_to_mel(4000.0)) / 2.0);
        assert!((bank.centers_hz[0] - center).abs() < 1e-9);
    }

    #[test]
    fn filter_centers_match_mel_formula() {
        let (n_mels, n_fft, sr, fmin, fmax) = (4, 64, 8000.0, 0.0, 4000.0);
        let bank = mel_filterbank(n_mels, n_fft, sr, fmin, fmax).unwrap();
        let mel_lo = hz_to_mel(fmin);
        let mel_hi = hz_to_mel(fmax);
        for (i, &c) in bank.centers_hz.iter().enumerate() {
            let expected =
                mel_to_hz(mel_lo + (mel_hi - mel_lo) * (i + 1) as f64 / (n_mels + 1) as f64);
            assert!((c - expected).abs() < 1e-9, "center {i}: {c} vs {expected}");
        }
    }

    #[test]
    fn filters_zero_outside_support() {
        let bank = mel_filterbank(8, 256, 16000.0, 0.0, 8000.0).unwrap();
        let bin_hz = 16000.0 / 256.0;
        for (m, row) in bank.weights.iter().enumerate() {
            for (k, &w) in row.iter().enumerate() {
                let f = k as f64 * bin_hz;
                let left = if m == 0 { 0.0 } else { bank.centers_hz[m - 1] };
                let right = if m + 1 == bank.centers_hz.len() {
                    8000.0
                } else {
                    bank.centers_hz[m + 1]
                };
                if f < left - 1e-9 || f > right + 1e-9 {
                    assert_eq!(w, 0.0, "filter {m} bin {k}");
                }
                assert!(w >= 0.0);
            }
        }
    }

    #[test]
    fn too_many_filters_errors() {
        // 8 bins cannot support 32 distinct triangles.
        let err = mel_filterbank(32, 16, 8000.0, 0.0, 4000.0);
        assert!(matches!(err, Err(Error::EmptyFilterSupport { .. })));
    }

    #[test]
    fn bins_inside_range_are_covered() {
        let bank = mel_filterbank(12, 512, 16000.0, 100.0, 7000.0).unwrap();
        let bin_hz = 16000.0 / 512.0;
        for k in 0..257 {
            let f = k as f64 * bin_hz;
            if f > 100.0 + bin_hz && f < 7000.0 - bin_hz {
                let covered = bank.weights.iter().any(|row| row[k] > 0.0);
                assert!(covered, "bin {k} at {f} Hz uncovered");
            }
        }
    }

    #[test]
    fn dct_matrix_is_orthonormal() {
        let n = 26;
        let dct = dct2_matrix(n, n);
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| dct[i][k] * dct[j][k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_waveform_constant_frames() {
        let cfg = MfccConfig::default();
        let w = Waveform::new(vec![0.0; 4096], 16000.0).unwrap();
        let m = mfcc(&w, &cfg).unwrap();
        let expected_c0 = (cfg.n_mels as f64).sqrt() * cfg.log_floor.ln();
        for frame in &m.coeffs {
            assert!((frame[0] - expected_c0).abs() < 1e-9);
            for &c in &frame[1..] {
                assert!(c.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matches_naive_oracle_on_sine() {
        let cfg = MfccConfig::default();
        let w = sine(440.0, 16000.0, 2048);
        let m = mfcc(&w, &cfg).unwrap();
        let expected = oracle::naive_mfcc_frame(&w.samples[..1024], &cfg, 16000.0);
        for (a, b) in m.coeffs[0].iter().zip(&expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn gain_shifts_only_coefficient_zero() {
        use rand::{Rng, SeedableRng};
        let cfg = MfccConfig::default();
        // Broadband noise keeps every filter energy far above the log floor,
        // so the scaling identity is not disturbed by floor clamping.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f64> = (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Waveform::new(samples, 16000.0).unwrap();
        let loud = Waveform::new(w.samples.iter().map(|s| s * 0.5).collect(), 16000.0).unwrap();
        let a = mfcc(&w, &cfg).unwrap();
        let b = mfcc(&loud, &cfg).unwrap();
        for (fa, fb) in a.coeffs.iter().zip(&b.coeffs) {
            for (ca, cb) in fa[1..].iter().zip(&fb[1..]) {
                assert!((ca - cb).abs() < 1e-9);
            }
            assert!((fa[0] - fb[0]).abs() > 1e-3);
        }
    }

    #[test]
    fn short_waveform_errors() {
        let cfg = MfccConfig::default();
        let w = Waveform::new(vec![0.1; 100], 16000.0).unwrap();
        assert!(matches!(
            mfcc(&w, &cfg),
            Err(Error::WaveformTooShort { .. })
        ));
    }

    #[test]
    fn hop_shift_aligns_frames() {
        let cfg = MfccConfig::default();
        let w = sine(330.0, 16000.0, 4096);
        let shifted =
            Waveform::new(w.samples[cfg.hop..].to_vec(), 16000.0).unwrap();
        let a = mfcc(&w, &cfg).unwrap();
        let b = mfcc(&shifted, &cfg).unwrap();
        for (fa, fb) in a.coeffs[1..].iter().zip(&b.coeffs) {
            for (ca, cb) in fa.iter().zip(fb) {
                assert!((ca - cb).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn aggregate_single_frame_mean_is_identity() {
        let m = MfccMatrix {
            coeffs: vec![vec![1.0, -2.0, 3.0]],
            config: MfccConfig::default(),
            sample_rate: 16000.0,
        };
        assert_eq!(aggregate(&m, Aggregation::Mean).unwrap(), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn aggregate_identical_frames_zero_std() {
        let frame = vec![0.5, 1.5, -0.5];
        let m = MfccMatrix {
            coeffs: vec![frame.clone(); 3],
            config: MfccConfig::default(),
            sample_rate: 16000.0,
        };
        let out = aggregate(&m, Aggregation::MeanStd).unwrap();
        assert_eq!(&out[..3], frame.as_slice());
        assert_eq!(&out[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn aggregate_matches_two_pass_oracle() {
        let coeffs = vec![
            vec![0.3, -1.2, 2.5],
            vec![1.1, 0.4, -0.7],
            vec![-0.8, 2.2, 0.9],
        ];
        let m = MfccMatrix {
            coeffs: coeffs.clone(),
            config: MfccConfig::default(),
            sample_rate: 16000.0,
        };
        let out = aggregate(&m, Aggregation::MeanStd).unwrap();
        for j in 0..3 {
            let mean: f64 = coeffs.iter().map(|f| f[j]).sum::<f64>() / 3.0;
            let var: f64 = coeffs.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / 3.0;
            assert!((out[j] - mean).abs() < 1e-12);
            assert!((out[j + 3] - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_empty_errors() {
        let m = MfccMatrix {
            coeffs: vec![],
            config: MfccConfig::default(),
            sample_rate: 16000.0,
        };
        assert!(aggregate(&m, Aggregation::Mean).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn mfcc_matches_oracle_on_random_signals(
            seed in 0u64..1000,
            len in 1024usize..2048,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = Waveform::new(samples, 16000.0).unwrap();
            let cfg = MfccConfig::default();
            let m = mfcc(&w, &cfg).unwrap();
            for (f, frame) in m.coeffs.iter().enumerate() {
                let start = f * cfg.hop;
                let expected = oracle::naive_mfcc_frame(
                    &w.samples[start..start + cfg.frame_length], &cfg, 16000.0);
                for (a, b) in frame.iter().zip(&expected) {
                    prop_assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }
}

//! Synthetic multichannel epochs driven by a handful of random factors.
//!
//! Each factor moves a different corner of the lexicon (amplitude, aperiodic
//! slope, band gains, envelope modulation, theta-gamma coupling, shared
//! source and lag, transients, drift), so the 63 features vary with partly
//! independent sources across epochs.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::signal::Epoch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_channels: usize,
    pub n_samples: usize,
    pub fs: f64,
    pub lowpass: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_channels: 4,
            n_samples: 512,
            fs: 200.0,
            lowpass: 75.0,
        }
    }
}

const BAND_CENTRES: [(f64, f64); 5] = [(1.0, 3.5), (4.5, 7.5), (8.5, 12.5), (14.0, 28.0), (31.0, 44.0)];

#[derive(Debug, Clone)]
struct Factors {
    scale: f64,
    slope: f64,
    band_gain: [f64; 5],
    band_freq: [f64; 5],
    mod_depth: f64,
    mod_freq: f64,
    coupling: f64,
    shared: f64,
    max_lag: usize,
    spike_rate: f64,
    drift: f64,
}

impl Factors {
    fn draw(rng: &mut impl Rng) -> Self {
        let ln = |rng: &mut dyn rand::RngCore, sd: f64| -> f64 {
            let z: f64 = StandardNormal.sample(rng);
            (sd * z).exp()
        };
        let mut band_gain = [0.0; 5];
        let mut band_freq = [0.0; 5];
        for b in 0..5 {
            band_gain[b] = ln(rng, 0.7);
            band_freq[b] = rng.random_range(BAND_CENTRES[b].0..BAND_CENTRES[b].1);
        }
        Self {
            scale: ln(rng, 0.5),
            slope: rng.random_range(0.3..1.8),
            band_gain,
            band_freq,
            mod_depth: rng.random_range(0.0..0.9),
            mod_freq: rng.random_range(0.3..2.0),
            coupling: rng.random_range(0.0..1.0),
            shared: rng.random_range(0.0..0.9),
            max_lag: rng.random_range(0..6),
            spike_rate: rng.random_range(0.0..4.0),
            drift: Normal::new(0.0, 0.4).unwrap().sample(rng),
        }
    }
}

/// Unit-variance noise with a 1/f^slope power spectrum.
fn coloured_noise(n: usize, fs: f64, slope: f64, planner: &mut FftPlanner<f64>, rng: &mut impl Rng) -> Vec<f64> {
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let f = k as f64 * fs / n as f64;
        let a = f.powf(-slope / 2.0);
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = if k == n / 2 && n % 2 == 0 { 0.0 } else { StandardNormal.sample(rng) };
        spec[k] = Complex::new(re * a, im * a);
        if k != n - k {
            spec[n - k] = spec[k].conj();
        }
    }
    planner.plan_fft_inverse(n).process(&mut spec);
    let x: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let m = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-12);
    x.iter().map(|v| (v - m) / sd).collect()
}

/// One source: aperiodic background plus band oscillations, the gamma
/// component amplitude-locked to theta phase.
fn source(cfg: &SynthConfig, f: &Factors, jitter: f64, planner: &mut FftPlanner<f64>, rng: &mut impl Rng) -> Vec<f64> {
    let n = cfg.n_samples;
    let mut x = coloured_noise(n, cfg.fs, f.slope, planner, rng);
    let phases: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let env_phase = rng.random_range(0.0..2.0 * PI);
    for (t, v) in x.iter_mut().enumerate() {
        let time = t as f64 / cfg.fs;
        let env = 1.0 + f.mod_depth * (2.0 * PI * f.mod_freq * time + env_phase).sin();
        let theta_phase = 2.0 * PI * f.band_freq[1] * time + phases[1];
        for b in 0..5 {
            let arg = 2.0 * PI * f.band_freq[b] * time + phases[b];
            let mut amp = f.band_gain[b] * jitter;
            if b == 4 {
                amp *= 1.0 + f.coupling * theta_phase.cos();
            } else {
                amp *= env;
            }
            *v += amp * arg.sin();
        }
    }
    x
}

/// Draws one epoch; samples are rounded to f32 so the stored form is exact.
pub fn synth_epoch(cfg: &SynthConfig, rng: &mut impl Rng, planner: &mut FftPlanner<f64>) -> Result<Epoch> {
    let f = Factors::draw(rng);
    let n = cfg.n_samples;
    let pad = f.max_lag;
    let common_cfg = SynthConfig {
        n_samples: n + pad,
        ..*cfg
    };
    let common = source(&common_cfg, &f, 1.0, planner, rng);
    let (ws, wo) = (f.shared.sqrt(), (1.0 - f.shared).sqrt());
    let jitter = Normal::new(0.0, 0.3).unwrap();
    let spikes = Poisson::new(f.spike_rate.max(1e-9)).unwrap();
    let mut data = DMatrix::zeros(cfg.n_channels, n);
    for c in 0..cfg.n_channels {
        let gain = (jitter.sample(rng) as f64).exp();
        let own = source(cfg, &f, (jitter.sample(rng) as f64).exp(), planner, rng);
        let lag = if pad == 0 { 0 } else { rng.random_range(0..=pad) };
        let offset: f64 = Normal::new(0.0, 0.2).unwrap().sample(rng);
        let mut row: Vec<f64> = (0..n)
            .map(|t| {
                let trend = f.drift * (t as f64 / n as f64 - 0.5);
                f.scale * gain * (wo * own[t] + ws * common[t + pad - lag] + trend) + offset
            })
            .collect();
        let k = spikes.sample(rng) as usize;
        for _ in 0..k {
            let at = rng.random_range(0..n);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            for (w, a) in [(0usize, 1.0), (1, 0.6), (2, 0.25)] {
                if at + w < n {
                    row[at + w] += sign * a * 4.0 * f.scale * gain;
                }
            }
        }
        for (t, v) in row.into_iter().enumerate() {
            data[(c, t)] = v as f32 as f64;
        }
    }
    Epoch::new(data, cfg.fs, cfg.lowpass)
}

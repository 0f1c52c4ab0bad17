//! Signal primitives shared by every feature family: single-window DFT
//! energies, rectangular FFT band masks, the analytic signal, Haar-style dyadic
//! decomposition, and autocorrelation lags.
//!
//! Conventions:
//! * `S(f)` is the raw squared modulus of the one-sided DFT bins `0..=T/2`,
//!   with no factor-2 folding of conjugate bins.
//! * Variances are population-normalised (`1/T`).
//! * The phase of a zero analytic sample is 0, and `sign(0) = 0`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Forward DFT of a real sequence (unnormalised).
pub fn dft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if !buf.is_empty() {
        plan(buf.len(), false).process(&mut buf);
    }
    buf
}

/// Inverse DFT including the `1/T` normalisation.
pub fn idft(spectrum: &[Complex64]) -> Vec<Complex64> {
    let mut buf = spectrum.to_vec();
    let n = buf.len();
    if n == 0 {
        return buf;
    }
    plan(n, true).process(&mut buf);
    let scale = 1.0 / n as f64;
    for v in &mut buf {
        *v *= scale;
    }
    buf
}

/// Frequency in Hz of one-sided bin `k` for a length-`n` DFT.
#[inline]
pub fn bin_frequency(k: usize, n: usize, fs: f64) -> f64 {
    k as f64 * fs / n as f64
}

/// Absolute frequency of a full-spectrum bin, mirroring negative frequencies.
#[inline]
fn mirrored_frequency(k: usize, n: usize, fs: f64) -> f64 {
    let k = if k <= n / 2 { k } else { n - k };
    bin_frequency(k, n, fs)
}

fn check_finite(x: &[f64], context: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_owned(),
        })
    }
}

/// One epoch: `n_channels × n_samples` with its sampling rate and analysis
/// low-pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    data: DMatrix<f64>,
    fs: f64,
    lowpass: f64,
}

impl Epoch {
    pub const MIN_SAMPLES: usize = 16;

    pub fn new(data: DMatrix<f64>, fs: f64, lowpass: f64) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::InvalidEpoch(format!("sampling rate {fs} must be positive")));
        }
        if !(lowpass > 0.0 && lowpass <= fs / 2.0) {
            return Err(Error::InvalidEpoch(format!(
                "low-pass {lowpass} Hz must lie in (0, fs/2 = {}]",
                fs / 2.0
            )));
        }
        if data.nrows() == 0 {
            return Err(Error::InvalidEpoch("epoch has no channels".into()));
        }
        if data.ncols() < Self::MIN_SAMPLES {
            return Err(Error::TooShort {
                context: "epoch".into(),
                required: Self::MIN_SAMPLES,
                actual: data.ncols(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            // column-major storage: row = pos % nrows
            return Err(Error::NonFinite {
                context: format!(
                    "epoch channel {} sample {}",
                    pos % data.nrows(),
                    pos / data.nrows()
                ),
            });
        }
        Ok(Self { data, fs, lowpass })
    }

    /// Build from row-major channel vectors.
    pub fn from_channels(channels: &[Vec<f64>], fs: f64, lowpass: f64) -> Result<Self> {
        let n_ch = channels.len();
        let n_s = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != n_s) {
            return Err(Error::InvalidEpoch("channels have unequal lengths".into()));
        }
        let data = DMatrix::from_fn(n_ch, n_s, |i, j| channels[i][j]);
        Self::new(data, fs, lowpass)
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn lowpass(&self) -> f64 {
        self.lowpass
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.row(c).iter().copied().collect()
    }

    /// Channels reordered by `order` (used by permutation-invariance checks).
    pub fn permuted(&self, order: &[usize]) -> Self {
        let data = DMatrix::from_fn(self.n_channels(), self.n_samples(), |i, j| {
            self.data[(order[i], j)]
        });
        Self { data, ..self.clone() }
    }

    /// Signal multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            data: &self.data * c,
            ..self.clone()
        }
    }
}

/// One analysis band `[lo, hi)` Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_owned(),
            lo,
            hi,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    /// One-sided bin indices whose frequency lies in `[lo, hi)`.
    pub fn bins(&self, n: usize, fs: f64) -> Vec<usize> {
        (0..=n / 2)
            .filter(|&k| {
                let f = bin_frequency(k, n, fs);
                f >= self.lo && f < self.hi
            })
            .collect()
    }
}

/// Ordered, non-overlapping analysis bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSet {
    bands: Vec<Band>,
}

impl BandSet {
    /// δ, θ, α, β, γ band edges in Hz before clipping.
    pub const CANONICAL: [(&'static str, f64, f64); 5] = [
        ("delta", 0.5, 4.0),
        ("theta", 4.0, 8.0),
        ("alpha", 8.0, 13.0),
        ("beta", 13.0, 30.0),
        ("gamma", 30.0, 45.0),
    ];

    pub const DELTA: usize = 0;
    pub const THETA: usize = 1;
    pub const ALPHA: usize = 2;
    pub const BETA: usize = 3;
    pub const GAMMA: usize = 4;

    /// Canonical bands clipped at `min(lowpass, fs/2)`.
    pub fn canonical(fs: f64, lowpass: f64) -> Self {
        let cap = lowpass.min(fs / 2.0);
        let bands = Self::CANONICAL
            .iter()
            .map(|&(name, lo, hi)| Band::new(name, lo, hi.min(cap)))
            .collect();
        Self { bands }
    }

    pub fn for_epoch(epoch: &Epoch) -> Self {
        Self::canonical(epoch.fs(), epoch.lowpass())
    }

    pub fn from_bands(bands: Vec<Band>) -> Result<Self> {
        for w in bands.windows(2) {
            if w[1].lo < w[0].hi {
                return Err(Error::InvalidArgument(format!(
                    "bands {} and {} overlap or are out of order",
                    w[0].name, w[1].name
                )));
            }
        }
        Ok(Self { bands })
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn get(&self, i: usize) -> &Band {
        &self.bands[i]
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }
}

/// Envelope and instantaneous phase of `x + i·H[x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSignal {
    pub envelope: Vec<f64>,
    pub phase: Vec<f64>,
}

impl AnalyticSignal {
    fn from_complex(z: &[Complex64]) -> Self {
        let mut envelope = Vec::with_capacity(z.len());
        let mut phase = Vec::with_capacity(z.len());
        for v in z {
            let a = v.norm();
            envelope.push(a);
            phase.push(if a == 0.0 {
                0.0
            } else {
                let p = v.im.atan2(v.re);
                if p <= -PI {
                    PI
                } else {
                    p
                }
            });
        }
        Self { envelope, phase }
    }
}

/// Raw one-sided DFT bin energies `|X(k)|²` for `k = 0..=T/2`.
pub fn fft_bin_energy(x: &[f64], _fs: f64) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::TooShort {
            context: "fft_bin_energy".into(),
            required: 2,
            actual: x.len(),
        });
    }
    check_finite(x, "fft_bin_energy input")?;
    Ok(one_sided_energy(&dft(x)))
}

pub(crate) fn one_sided_energy(spectrum: &[Complex64]) -> Vec<f64> {
    let n = spectrum.len();
    spectrum[..=n / 2].iter().map(|c| c.norm_sqr()).collect()
}

fn check_band(band: &Band, fs: f64) -> Result<()> {
    if !(band.lo.is_finite() && band.hi.is_finite()) || band.lo >= band.hi {
        return Err(Error::InvalidBand {
            lo: band.lo,
            hi: band.hi,
            reason: "requires lo < hi".into(),
        });
    }
    if band.hi > fs / 2.0 + 1e-12 {
        return Err(Error::InvalidBand {
            lo: band.lo,
            hi: band.hi,
            reason: format!("upper edge above Nyquist {}", fs / 2.0),
        });
    }
    Ok(())
}

/// Zero every full-spectrum bin whose mirrored frequency is outside the band.
pub(crate) fn mask_spectrum(spectrum: &[Complex64], band: &Band, fs: f64) -> Vec<Complex64> {
    let n = spectrum.len();
    spectrum
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let f = mirrored_frequency(k, n, fs);
            if !band.is_empty() && f >= band.lo && f < band.hi {
                c
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect()
}

/// Rectangular FFT-domain band-pass: inverse DFT of the spectrum restricted
/// to `[lo, hi)` on both conjugate halves.
pub fn bandpass_fft_mask(x: &[f64], band: &Band, fs: f64) -> Result<Vec<f64>> {
    check_band(band, fs)?;
    check_finite(x, "bandpass input")?;
    Ok(bandpass_from_spectrum(&dft(x), band, fs))
}

pub(crate) fn bandpass_from_spectrum(spectrum: &[Complex64], band: &Band, fs: f64) -> Vec<f64> {
    idft(&mask_spectrum(spectrum, band, fs))
        .into_iter()
        .map(|c| c.re)
        .collect()
}

/// Spectrum of the analytic signal: DC and Nyquist kept, positive
/// frequencies doubled, negative frequencies zeroed.
fn analytic_spectrum(mut spectrum: Vec<Complex64>) -> Vec<Complex64> {
    let n = spectrum.len();
    let half = n / 2;
    for (k, v) in spectrum.iter_mut().enumerate() {
        if k == 0 || (n % 2 == 0 && k == half) {
            continue;
        }
        if k < n.div_ceil(2) {
            *v *= 2.0;
        } else {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    spectrum
}

/// Analytic signal by frequency-domain doubling of positive frequencies.
pub fn analytic(x: &[f64]) -> Result<AnalyticSignal> {
    if x.len() < 4 {
        return Err(Error::TooShort {
            context: "analytic".into(),
            required: 4,
            actual: x.len(),
        });
    }
    check_finite(x, "analytic input")?;
    Ok(analytic_from_spectrum(dft(x)))
}

pub(crate) fn analytic_from_spectrum(spectrum: Vec<Complex64>) -> AnalyticSignal {
    AnalyticSignal::from_complex(&idft(&analytic_spectrum(spectrum)))
}

/// Analytic signal of the band-masked channel, computed from its full spectrum.
pub(crate) fn band_analytic(spectrum: &[Complex64], band: &Band, fs: f64) -> AnalyticSignal {
    analytic_from_spectrum(mask_spectrum(spectrum, band, fs))
}

/// Result of a Haar-style dyadic decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Dyadic {
    /// `details[k]` holds level `k + 1`.
    pub details: Vec<Vec<f64>>,
    pub approx: Vec<f64>,
}

/// Recursive even/odd ± averaging with `1/√2` normalisation. An odd trailing
/// sample is carried unchanged into the next approximation.
pub fn dyadic_decompose(x: &[f64], levels: usize) -> Result<Dyadic> {
    let required = 1usize << levels;
    if x.len() < required {
        return Err(Error::TooShort {
            context: format!("{levels}-level dyadic decomposition"),
            required,
            actual: x.len(),
        });
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut approx = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let pairs = approx.len() / 2;
        let mut next = Vec::with_capacity(pairs + 1);
        let mut detail = Vec::with_capacity(pairs);
        for n in 0..pairs {
            let (a, b) = (approx[2 * n], approx[2 * n + 1]);
            next.push((a + b) * s);
            detail.push((a - b) * s);
        }
        if approx.len() % 2 == 1 {
            next.push(approx[approx.len() - 1]);
        }
        details.push(detail);
        approx = next;
    }
    Ok(Dyadic { details, approx })
}

/// Decay lags of the normalised autocorrelation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcfLags {
    pub tau_1e: usize,
    pub tau_0: usize,
    /// Zero-variance input; both lags defaulted to `tau_max`.
    pub degenerate: bool,
}

/// Biased FFT autocorrelation `ρ(τ)` for `τ = 0..=tau_max`, with `ρ(0) = 1`.
/// `None` for a zero-variance input.
pub fn autocorrelation(x: &[f64], tau_max: usize) -> Option<Vec<f64>> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let energy: f64 = centered.iter().map(|v| v * v).sum();
    if energy <= 0.0 || !energy.is_finite() {
        return None;
    }
    let len = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex64> = centered
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(len)
        .collect();
    plan(len, false).process(&mut buf);
    for v in &mut buf {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    let r = idft(&buf);
    let r0 = r[0].re;
    Some((0..=tau_max.min(n - 1)).map(|t| r[t].re / r0).collect())
}

/// First lags at which `ρ` falls to `1/e` and to `0`, each defaulting to
/// `tau_max`.
pub fn autocorr_lags(x: &[f64], tau_max: usize) -> Result<AcfLags> {
    if tau_max < 1 || tau_max >= x.len() {
        return Err(Error::InvalidArgument(format!(
            "tau_max {tau_max} must lie in [1, {})",
            x.len()
        )));
    }
    check_finite(x, "autocorrelation input")?;
    let Some(rho) = autocorrelation(x, tau_max) else {
        return Ok(AcfLags {
            tau_1e: tau_max,
            tau_0: tau_max,
            degenerate: true,
        });
    };
    let inv_e = (-1.0f64).exp();
    let first = |pred: &dyn Fn(f64) -> bool| {
        (1..=tau_max).find(|&t| pred(rho[t])).unwrap_or(tau_max)
    };
    Ok(AcfLags {
        tau_1e: first(&|r| r <= inv_e),
        tau_0: first(&|r| r <= 0.0),
        degenerate: false,
    })
}

/// `sign` with `sign(0) = 0`.
#[inline]
pub fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn naive_dft_energy(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..=n / 2)
            .map(|f| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &v) in x.iter().enumerate() {
                    let ang = -2.0 * PI * (f * t) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    fn tone(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|t| (2.0 * PI * freq * t as f64 / fs).sin())
            .collect()
    }

    fn norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn gaussian(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn dc_energy_only_in_bin_zero() {
        let e = fft_bin_energy(&[3.0; 64], 100.0).unwrap();
        assert!((e[0] - (3.0 * 64.0f64).powi(2)).abs() < 1e-6);
        assert!(e[1..].iter().all(|&v| v < 1e-18));
    }

    #[test]
    fn pure_tone_lands_on_its_bin() {
        let e = fft_bin_energy(&tone(10.0, 200.0, 400), 200.0).unwrap();
        let k = (0..e.len()).max_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap();
        assert_eq!(k, 20);
        let total: f64 = e.iter().sum();
        assert!(e[20] / total > 0.999_999);
    }

    #[test]
    fn energy_matches_naive_dft_length_32() {
        let x = gaussian(32, 7);
        let fast = fft_bin_energy(&x, 1.0).unwrap();
        let slow = naive_dft_energy(&x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            fft_bin_energy(&[1.0, f64::NAN, 2.0], 1.0),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn mask_keeps_in_band_tone_and_drops_out_of_band() {
        let x = tone(10.0, 200.0, 400);
        let alpha = Band::new("alpha", 8.0, 13.0);
        let beta = Band::new("beta", 13.0, 30.0);
        let kept = bandpass_fft_mask(&x, &alpha, 200.0).unwrap();
        let err: Vec<f64> = kept.iter().zip(&x).map(|(a, b)| a - b).collect();
        assert!(norm(&err) / norm(&x) < 1e-6);
        let dropped = bandpass_fft_mask(&x, &beta, 200.0).unwrap();
        assert!(norm(&dropped) < 1e-6 * norm(&x));
    }

    #[test]
    fn band_energies_bounded_by_total() {
        let x = gaussian(1000, 3);
        let bands = BandSet::canonical(200.0, 75.0);
        let total: f64 = x.iter().map(|v| v * v).sum();
        let sum: f64 = bands
            .bands()
            .iter()
            .map(|b| {
                let y = bandpass_fft_mask(&x, b, 200.0).unwrap();
                y.iter().map(|v| v * v).sum::<f64>()
            })
            .sum();
        assert!(sum <= total);
        assert!(sum > 0.0);
    }

    #[test]
    fn invalid_band_rejected() {
        let b = Band::new("bad", 10.0, 5.0);
        assert!(bandpass_fft_mask(&[0.0; 32], &b, 100.0).is_err());
        let above = Band::new("above", 10.0, 80.0);
        assert!(bandpass_fft_mask(&[0.0; 32], &above, 100.0).is_err());
    }

    #[test]
    fn cosine_envelope_is_unity_in_the_interior() {
        let fs = 200.0;
        let x: Vec<f64> = (0..400)
            .map(|t| (2.0 * PI * 10.0 * t as f64 / fs).cos())
            .collect();
        let a = analytic(&x).unwrap();
        let mid = &a.envelope[100..300];
        let mean = mid.iter().sum::<f64>() / mid.len() as f64;
        assert!((mean - 1.0).abs() < 1e-2);
    }

    #[test]
    fn zero_signal_has_zero_envelope_and_phase() {
        let a = analytic(&[0.0; 16]).unwrap();
        assert!(a.envelope.iter().all(|&v| v == 0.0));
        assert!(a.phase.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn am_tone_envelope_tracks_modulation() {
        let fs = 200.0;
        let n = 800;
        let amp = |t: f64| 1.0 + 0.5 * (2.0 * PI * 1.0 * t / fs).sin();
        let x: Vec<f64> = (0..n)
            .map(|t| amp(t as f64) * (2.0 * PI * 25.0 * t as f64 / fs).cos())
            .collect();
        let a = analytic(&x).unwrap();
        let worst = (n / 4..3 * n / 4)
            .map(|t| (a.envelope[t] - amp(t as f64)).abs() / amp(t as f64))
            .fold(0.0, f64::max);
        assert!(worst < 5e-2, "max rel err {worst}");
    }

    #[test]
    fn phase_in_half_open_interval() {
        let a = analytic(&gaussian(257, 11)).unwrap();
        assert!(a.phase.iter().all(|&p| p > -PI && p <= PI));
        assert!(a.envelope.iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn dyadic_constant_and_alternating() {
        let d = dyadic_decompose(&[2.0; 32], 5).unwrap();
        assert!(d.details.iter().flatten().all(|&v| v.abs() < 1e-12));
        let e: f64 = d.approx.iter().map(|v| v * v).sum();
        assert!((e - 4.0 * 32.0).abs() < 1e-9);

        let alt: Vec<f64> = (0..32).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let d = dyadic_decompose(&alt, 5).unwrap();
        assert!(d.details[0].iter().all(|&v| (v - 2f64.sqrt()).abs() < 1e-12));
        assert!(d.details[1..].iter().flatten().all(|&v| v.abs() < 1e-12));
        assert!(d.approx.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn dyadic_energy_conserved_length_64() {
        let x = gaussian(64, 5);
        let d = dyadic_decompose(&x, 5).unwrap();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ed: f64 = d.details.iter().flatten().chain(&d.approx).map(|v| v * v).sum();
        assert!((ex - ed).abs() / ex < 1e-9);
    }

    #[test]
    fn dyadic_odd_length_carries_trailing_sample() {
        let x = gaussian(45, 9);
        let d = dyadic_decompose(&x, 5).unwrap();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ed: f64 = d.details.iter().flatten().chain(&d.approx).map(|v| v * v).sum();
        assert!((ex - ed).abs() / ex < 1e-9);
        assert!(dyadic_decompose(&x[..31], 5).is_err());
    }

    #[test]
    fn acf_lags_of_white_noise_decay_immediately() {
        let hits = (0..100u64)
            .filter(|&s| autocorr_lags(&gaussian(512, 1000 + s), 128).unwrap().tau_1e == 1)
            .count();
        assert!(hits >= 95, "{hits}");
    }

    #[test]
    fn acf_lags_constant_default() {
        let l = autocorr_lags(&[1.5; 100], 25).unwrap();
        assert_eq!((l.tau_1e, l.tau_0, l.degenerate), (25, 25, true));
    }

    #[test]
    fn acf_first_zero_of_slow_sinusoid() {
        let period = 80.0;
        let x: Vec<f64> = (0..2000)
            .map(|t| (2.0 * PI * t as f64 / period).sin())
            .collect();
        let l = autocorr_lags(&x, 500).unwrap();
        assert!((l.tau_0 as f64 - period / 4.0).abs() <= 2.0, "{}", l.tau_0);
    }

    #[test]
    fn canonical_bands_clip_to_lowpass() {
        let b = BandSet::canonical(200.0, 35.0);
        assert_eq!(b.get(BandSet::GAMMA).hi, 35.0);
        let b = BandSet::canonical(60.0, 30.0);
        assert!(b.get(BandSet::GAMMA).is_empty());
    }

    proptest! {
        #[test]
        fn prop_energy_matches_naive(x in prop::collection::vec(-10.0f64..10.0, 2..=256)) {
            let fast = fft_bin_energy(&x, 1.0).unwrap();
            let slow = naive_dft_energy(&x);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()).max(1.0));
            }
        }

        #[test]
        fn prop_mask_is_projection(x in prop::collection::vec(-5.0f64..5.0, 16..200)) {
            let band = Band::new("alpha", 8.0, 13.0);
            let once = bandpass_fft_mask(&x, &band, 100.0).unwrap();
            let twice = bandpass_fft_mask(&once, &band, 100.0).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn prop_dyadic_energy(x in prop::collection::vec(-5.0f64..5.0, 1..5usize)
            .prop_flat_map(|v| prop::collection::vec(-5.0f64..5.0, v.len() * 32))) {
            let d = dyadic_decompose(&x, 5).unwrap();
            let ex: f64 = x.iter().map(|v| v * v).sum();
            let ed: f64 = d.details.iter().flatten().chain(&d.approx).map(|v| v * v).sum();
            prop_assert!((ex - ed).abs() <= 1e-9 * ex.max(1e-300));
        }

        #[test]
        fn prop_envelope_homogeneous(x in prop::collection::vec(-5.0f64..5.0, 4..128), c in 0.01f64..100.0) {
            let a = analytic(&x).unwrap();
            let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
            let b = analytic(&scaled).unwrap();
            for (ea, eb) in a.envelope.iter().zip(&b.envelope) {
                prop_assert!((ea * c - eb).abs() <= 1e-9 * (1.0 + eb.abs()));
            }
        }
    }
}

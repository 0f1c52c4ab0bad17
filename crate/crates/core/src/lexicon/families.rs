//! Per-epoch feature families.
//!
//! Every family returns its raw values together with per-feature guard
//! counts: the number of channels (or pairs) for which a degenerate input
//! forced the documented fallback value instead of the formula.

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::num_complex::Complex64;

use crate::numeric::{entropy, mean, ols_slope, pearson, pop_var, quantile};
use crate::signal::{
    autocorr_lags, band_analytic, dft, dyadic_decompose, one_sided_energy, sign0,
    AnalyticSignal, Band, BandSet, Epoch,
};

/// Floor applied to band energies before taking logs.
pub const POWER_FLOOR: f64 = 1e-20;
/// Envelope means at or below this are treated as zero.
pub const ENVELOPE_FLOOR: f64 = 1e-12;
/// Eigenvalue clip for the correlation spectrum.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Phase bins of the modulation index.
pub const MI_BINS: usize = 18;

/// Raw family output: `values` is channels (or pairs) × family features.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyValues {
    pub values: DMatrix<f64>,
    pub guard_hits: Vec<usize>,
}

impl FamilyValues {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            values: DMatrix::zeros(rows, cols),
            guard_hits: vec![0; cols],
        }
    }

    fn set(&mut self, row: usize, col: usize, value: Option<f64>) {
        match value {
            Some(v) if v.is_finite() => self.values[(row, col)] = v,
            _ => {
                self.values[(row, col)] = 0.0;
                self.guard_hits[col] += 1;
            }
        }
    }
}

/// Per-channel data shared across families: samples, full spectrum, and the
/// analytic signal of each band-masked copy.
pub(crate) struct ChannelView {
    pub x: Vec<f64>,
    pub spectrum: Vec<Complex64>,
    pub bands: Vec<Option<AnalyticSignal>>,
}

impl ChannelView {
    pub fn new(x: Vec<f64>, bands: &BandSet, fs: f64) -> Self {
        let spectrum = dft(&x);
        let analytic = bands
            .bands()
            .iter()
            .map(|b| (!band_is_empty(b, x.len(), fs)).then(|| band_analytic(&spectrum, b, fs)))
            .collect();
        Self {
            x,
            spectrum,
            bands: analytic,
        }
    }
}

fn band_is_empty(band: &Band, n: usize, fs: f64) -> bool {
    band.is_empty() || band.bins(n, fs).is_empty()
}

pub(crate) fn channel_views(epoch: &Epoch, bands: &BandSet) -> Vec<ChannelView> {
    (0..epoch.n_channels())
        .map(|c| ChannelView::new(epoch.channel(c), bands, epoch.fs()))
        .collect()
}

fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Variance at or below rounding level of the signal's mean square.
fn is_degenerate(var: f64, x: &[f64]) -> bool {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    var <= f64::EPSILON * f64::EPSILON * ms || var == 0.0
}

// ---------------------------------------------------------------- Family T

/// Bias-corrected Pearson kurtosis (non-excess), `None` for zero variance.
pub fn kurtosis(x: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 4 {
        return None;
    }
    let m = mean(x);
    let m2 = pop_var(x);
    if is_degenerate(m2, x) {
        return None;
    }
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    let g2 = m4 / (m2 * m2) - 3.0;
    let excess = ((n + 1.0) * g2 + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0));
    Some(excess + 3.0)
}

fn mobility(var_x: f64, var_dx: f64) -> Option<f64> {
    (var_x > 0.0).then(|| (var_dx / var_x).sqrt())
}

fn family_t_row(x: &[f64], out: &mut FamilyValues, row: usize) {
    let n = x.len();
    let var = pop_var(x);
    let degenerate = is_degenerate(var, x);
    let dx = diff(x);
    let ddx = diff(&dx);
    let var_dx = pop_var(&dx);
    let var_ddx = pop_var(&ddx);

    let mob = (!degenerate).then(|| mobility(var, var_dx)).flatten();
    let complexity = match mob {
        Some(m) if m > 0.0 && !is_degenerate(var_dx, &dx) => {
            mobility(var_dx, var_ddx).map(|md| md / m)
        }
        _ => None,
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let zc = x.windows(2).filter(|w| w[0] * w[1] < 0.0).count() as f64 / (n - 1) as f64;
    let line = dx.iter().map(|v| v.abs()).sum::<f64>() / (n - 1) as f64;
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));

    out.set(row, 0, Some(var));
    out.set(row, 1, mob);
    out.set(row, 2, complexity);
    out.set(row, 3, Some(var.sqrt()));
    out.set(row, 4, Some(rms));
    out.set(row, 5, kurtosis(x));
    out.set(row, 6, Some(zc));
    out.set(row, 7, Some(line));
    out.set(row, 8, Some(var_dx.sqrt()));
    out.set(row, 9, Some(hi - lo));
}

/// T001–T010: Hjorth descriptors and amplitude/slope statistics.
pub fn compute_family_t(epoch: &Epoch) -> FamilyValues {
    let mut out = FamilyValues::new(epoch.n_channels(), 10);
    for c in 0..epoch.n_channels() {
        family_t_row(&epoch.channel(c), &mut out, c);
    }
    out
}

// ---------------------------------------------------------------- Family F

fn family_f_row(view: &ChannelView, bands: &BandSet, fs: f64, out: &mut FamilyValues, row: usize) {
    let n = view.x.len();
    let energy = one_sided_energy(&view.spectrum);
    let band_bins: Vec<Vec<usize>> = bands.bands().iter().map(|b| b.bins(n, fs)).collect();
    let power: Vec<f64> = band_bins
        .iter()
        .map(|bins| bins.iter().map(|&k| energy[k]).sum())
        .collect();
    let total: f64 = power.iter().sum();
    let log_p = |p: f64| (p > POWER_FLOOR).then(|| p.ln());
    let floored = |p: f64| p.max(POWER_FLOOR).ln();

    for b in 0..5 {
        if log_p(power[b]).is_some() {
            out.set(row, b, Some(power[b].ln()));
        } else {
            out.set(row, b, None);
            out.values[(row, b)] = floored(power[b]);
        }
        out.set(row, 5 + b, (total > 0.0).then(|| power[b] / total));
    }
    let ratio = |num: usize, den: usize, col: usize, out: &mut FamilyValues| {
        let v = floored(power[num]) - floored(power[den]);
        if power[num] > POWER_FLOOR && power[den] > POWER_FLOOR {
            out.set(row, col, Some(v));
        } else {
            out.set(row, col, None);
            out.values[(row, col)] = v;
        }
    };
    ratio(BandSet::THETA, BandSet::BETA, 10, out);
    ratio(BandSet::DELTA, BandSet::ALPHA, 11, out);
    ratio(BandSet::THETA, BandSet::ALPHA, 12, out);

    let union: Vec<usize> = band_bins.iter().flatten().copied().collect();
    if total <= 0.0 || union.len() < 2 {
        out.set(row, 13, None);
        out.set(row, 14, None);
        out.set(row, 15, None);
        return;
    }
    let p: Vec<f64> = union.iter().map(|&k| energy[k] / total).collect();
    let freq = |k: usize| k as f64 * fs / n as f64;
    out.set(row, 13, Some(entropy(&p) / (union.len() as f64).ln()));
    out.set(
        row,
        14,
        Some(union.iter().zip(&p).map(|(&k, &pk)| freq(k) * pk).sum()),
    );
    let mut cum = 0.0;
    let mut edge = freq(*union.last().unwrap());
    for (&k, &pk) in union.iter().zip(&p) {
        cum += pk;
        if cum >= 0.95 - 1e-12 {
            edge = freq(k);
            break;
        }
    }
    out.set(row, 15, Some(edge));
}

/// F001–F016: band energies, relative energies, log ratios, spectral shape.
pub fn compute_family_f(epoch: &Epoch, bands: &BandSet) -> FamilyValues {
    family_f_views(&channel_views(epoch, bands), bands, epoch.fs())
}

pub(crate) fn family_f_views(views: &[ChannelView], bands: &BandSet, fs: f64) -> FamilyValues {
    let mut out = FamilyValues::new(views.len(), 16);
    for (c, v) in views.iter().enumerate() {
        family_f_row(v, bands, fs, &mut out, c);
    }
    out
}

// --------------------------------------------------------------- Family TF

/// Coefficient of variation of an envelope; `None` when its mean is ~0.
pub fn envelope_cv(envelope: &[f64]) -> Option<f64> {
    let m = mean(envelope);
    (m > ENVELOPE_FLOOR).then(|| pop_var(envelope).sqrt() / m)
}

fn family_tf_row(view: &ChannelView, out: &mut FamilyValues, row: usize) {
    match dyadic_decompose(&view.x, 5) {
        Ok(d) => {
            let mean_energy = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>() / v.len() as f64;
            let mut e: Vec<f64> = d.details.iter().map(|v| mean_energy(v)).collect();
            e.push(mean_energy(&d.approx));
            let total: f64 = e.iter().sum();
            out.set(
                row,
                0,
                (total > 0.0).then(|| {
                    let p: Vec<f64> = e.iter().map(|v| v / total).collect();
                    entropy(&p) / 6f64.ln()
                }),
            );
            for (k, detail) in d.details.iter().enumerate() {
                out.set(row, 1 + k, Some(pop_var(detail)));
            }
        }
        Err(_) => (0..6).for_each(|k| out.set(row, k, None)),
    }
    for (b, analytic) in view.bands.iter().enumerate() {
        out.set(row, 6 + b, analytic.as_ref().and_then(|a| envelope_cv(&a.envelope)));
    }
}

/// TF001–TF011: subband entropy, detail variances, band envelope CV.
pub fn compute_family_tf(epoch: &Epoch, bands: &BandSet) -> FamilyValues {
    family_tf_views(&channel_views(epoch, bands))
}

pub(crate) fn family_tf_views(views: &[ChannelView]) -> FamilyValues {
    let mut out = FamilyValues::new(views.len(), 11);
    for (c, v) in views.iter().enumerate() {
        family_tf_row(v, &mut out, c);
    }
    out
}

// ---------------------------------------------------------------- Family C

/// Normalised order-3, lag-1 permutation entropy. Equal values rank by
/// position (earlier sample lower).
pub fn permutation_entropy(x: &[f64]) -> Option<f64> {
    if x.len() < 3 {
        return None;
    }
    let mut counts = [0usize; 6];
    for w in x.windows(3) {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| w[a].total_cmp(&w[b]));
        let code = match order {
            [0, 1, 2] => 0,
            [0, 2, 1] => 1,
            [1, 0, 2] => 2,
            [1, 2, 0] => 3,
            [2, 0, 1] => 4,
            _ => 5,
        };
        counts[code] += 1;
    }
    let n = (x.len() - 2) as f64;
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    Some(entropy(&p) / 6f64.ln())
}

fn irregularity_proxy(x: &[f64]) -> Option<f64> {
    let var = pop_var(x);
    if is_degenerate(var, x) {
        return None;
    }
    let r = 0.2 * var.sqrt();
    let dx = diff(x);
    let ddx = diff(&dx);
    let mabs = |v: &[f64]| v.iter().map(|a| a.abs()).sum::<f64>() / v.len() as f64;
    Some((1.0 + mabs(&ddx) / r).ln() - (1.0 + mabs(&dx) / r).ln())
}

fn transition_proxy(x: &[f64]) -> Option<f64> {
    let med = quantile(x, 0.5);
    let bits: Vec<usize> = x.iter().map(|&v| usize::from(v > med)).collect();
    let pairs = (bits.len() - 1) as f64;
    let mut states = [0usize; 4];
    let mut flips = 0usize;
    for w in bits.windows(2) {
        states[2 * w[0] + w[1]] += 1;
        flips += usize::from(w[0] != w[1]);
    }
    let p: Vec<f64> = states.iter().map(|&c| c as f64 / pairs).collect();
    let eta = flips as f64 / pairs;
    let h2 = entropy(&p) / 4f64.ln();
    let degenerate = is_degenerate(pop_var(x), x);
    (!degenerate).then_some(0.5 * eta + 0.5 * h2)
}

fn lag_difference_slope(x: &[f64]) -> Option<f64> {
    let k_max = 8.min(x.len() / 4);
    if k_max < 2 {
        return None;
    }
    let mut lx = Vec::with_capacity(k_max);
    let mut ly = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let l = x
            .iter()
            .zip(&x[k..])
            .map(|(a, b)| (b - a).abs())
            .sum::<f64>()
            / (x.len() - k) as f64;
        if l <= 0.0 {
            return None;
        }
        lx.push((1.0 / k as f64).ln());
        ly.push(l.ln());
    }
    ols_slope(&lx, &ly).map(|s| s.clamp(0.0, 3.0))
}

/// DFA-1 fluctuation `F(s)` over non-overlapping windows of the profile.
fn dfa_fluctuation(profile: &[f64], s: usize) -> f64 {
    let n_win = profile.len() / s;
    let t_mean = (s - 1) as f64 / 2.0;
    let stt: f64 = (0..s).map(|t| (t as f64 - t_mean).powi(2)).sum();
    let mut ss = 0.0;
    for w in 0..n_win {
        let seg = &profile[w * s..(w + 1) * s];
        let y_mean = mean(seg);
        let sty: f64 = seg
            .iter()
            .enumerate()
            .map(|(t, y)| (t as f64 - t_mean) * (y - y_mean))
            .sum();
        let slope = sty / stt;
        ss += seg
            .iter()
            .enumerate()
            .map(|(t, y)| {
                let r = y - y_mean - slope * (t as f64 - t_mean);
                r * r
            })
            .sum::<f64>();
    }
    (ss / (n_win * s) as f64).sqrt()
}

/// DFA-style exponent on the dyadic window set `{16..512} ∩ {w : 2w ≤ T}`.
pub fn dfa_exponent(x: &[f64]) -> Option<f64> {
    let m = mean(x);
    let mut acc = 0.0;
    let profile: Vec<f64> = x
        .iter()
        .map(|v| {
            acc += v - m;
            acc
        })
        .collect();
    let mut ls = Vec::new();
    let mut lf = Vec::new();
    for s in [16usize, 32, 64, 128, 256, 512] {
        if 2 * s > x.len() {
            break;
        }
        let f = dfa_fluctuation(&profile, s);
        if f > 0.0 && f.is_finite() {
            ls.push((s as f64).ln());
            lf.push(f.ln());
        }
    }
    if ls.len() < 2 {
        return None;
    }
    ols_slope(&ls, &lf).map(|s| s.clamp(-1.0, 2.0))
}

fn family_c_row(x: &[f64], tau_max: usize, out: &mut FamilyValues, row: usize) {
    out.set(row, 0, permutation_entropy(x));
    out.set(row, 1, irregularity_proxy(x));
    out.set(row, 2, transition_proxy(x));
    out.set(row, 3, lag_difference_slope(x));
    out.set(row, 4, dfa_exponent(x));
    let tau_max = tau_max.clamp(1, x.len() - 1);
    match autocorr_lags(x, tau_max) {
        Ok(l) if !l.degenerate => {
            out.set(row, 5, Some(l.tau_1e as f64 / tau_max as f64));
            out.set(row, 6, Some(l.tau_0 as f64 / tau_max as f64));
        }
        _ => {
            out.set(row, 5, None);
            out.set(row, 6, None);
            out.values[(row, 5)] = 1.0;
            out.values[(row, 6)] = 1.0;
        }
    }
}

/// Default maximum ACF lag: a quarter of the epoch.
pub fn default_tau_max(n_samples: usize) -> usize {
    (n_samples / 4).max(1)
}

/// C001–C007: complexity proxies. `tau_max = None` uses `T/4`.
pub fn compute_family_c(epoch: &Epoch, tau_max: Option<usize>) -> FamilyValues {
    let tau = tau_max.unwrap_or_else(|| default_tau_max(epoch.n_samples()));
    let mut out = FamilyValues::new(epoch.n_channels(), 7);
    for c in 0..epoch.n_channels() {
        family_c_row(&epoch.channel(c), tau, &mut out, c);
    }
    out
}

// ---------------------------------------------------------------- Family X

/// Tort modulation index over `MI_BINS` equal phase bins. Returns `None`
/// when the phase-conditioned amplitude has no mass.
pub fn modulation_index(phase: &[f64], amplitude: &[f64]) -> Option<f64> {
    let n = MI_BINS;
    let width = 2.0 * std::f64::consts::PI / n as f64;
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (&p, &a) in phase.iter().zip(amplitude) {
        let j = (((p + std::f64::consts::PI) / width).floor() as usize).min(n - 1);
        sums[j] += a;
        counts[j] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let total: f64 = means.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return None;
    }
    let kl: f64 = means
        .iter()
        .map(|&m| m / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * (p * n as f64).ln())
        .sum();
    Some((kl / (n as f64).ln()).max(0.0))
}

/// Amplitude-amplitude coupling: Pearson correlation of two envelopes.
pub fn amplitude_coupling(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(a, b).map(|r| r.clamp(-1.0, 1.0))
}

const MI_PAIRS: [(usize, usize); 3] = [
    (BandSet::DELTA, BandSet::BETA),
    (BandSet::THETA, BandSet::GAMMA),
    (BandSet::ALPHA, BandSet::GAMMA),
];
const AAC_PAIRS: [(usize, usize); 2] = [
    (BandSet::THETA, BandSet::GAMMA),
    (BandSet::DELTA, BandSet::GAMMA),
];

fn family_x_row(view: &ChannelView, out: &mut FamilyValues, row: usize) {
    for (col, &(lo, hi)) in MI_PAIRS.iter().enumerate() {
        let v = match (&view.bands[lo], &view.bands[hi]) {
            (Some(p), Some(a)) => modulation_index(&p.phase, &a.envelope),
            _ => None,
        };
        out.set(row, col, v);
    }
    for (k, &(a, b)) in AAC_PAIRS.iter().enumerate() {
        let v = match (&view.bands[a], &view.bands[b]) {
            (Some(ea), Some(eb)) => amplitude_coupling(&ea.envelope, &eb.envelope),
            _ => None,
        };
        out.set(row, 3 + k, v);
    }
}

/// X001–X005: phase-amplitude and amplitude-amplitude coupling.
pub fn compute_family_x(epoch: &Epoch, bands: &BandSet) -> FamilyValues {
    family_x_views(&channel_views(epoch, bands))
}

pub(crate) fn family_x_views(views: &[ChannelView]) -> FamilyValues {
    let mut out = FamilyValues::new(views.len(), 5);
    for (c, v) in views.iter().enumerate() {
        family_x_row(v, &mut out, c);
    }
    out
}

// ---------------------------------------------------------------- Family R

/// Family R output: four global values and ten per-pair columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationValues {
    pub global: Vec<f64>,
    /// Rows are channel pairs `(i, j), i < j` in lexicographic order.
    pub pairs: DMatrix<f64>,
    pub guard_hits: Vec<usize>,
}

/// Lexicographic channel pairs `i < j`.
pub fn channel_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

/// Phase lag index of two phase series with `sign(0) = 0`.
pub fn phase_lag_index(phi_a: &[f64], phi_b: &[f64]) -> f64 {
    let s: f64 = phi_a
        .iter()
        .zip(phi_b)
        .map(|(a, b)| sign0((a - b).sin()))
        .sum();
    (s / phi_a.len() as f64).abs()
}

fn correlation_matrix(views: &[ChannelView], hits: &mut [usize]) -> DMatrix<f64> {
    let n = views.len();
    let centered: Vec<Vec<f64>> = views
        .iter()
        .map(|v| {
            let m = mean(&v.x);
            v.x.iter().map(|x| x - m).collect()
        })
        .collect();
    let sd: Vec<Option<f64>> = views
        .iter()
        .zip(&centered)
        .map(|(v, c)| {
            let var = c.iter().map(|a| a * a).sum::<f64>() / c.len() as f64;
            (!is_degenerate(var, &v.x)).then(|| var.sqrt())
        })
        .collect();
    if sd.iter().any(Option::is_none) {
        hits.iter_mut().take(4).for_each(|h| *h += 1);
    }
    let t = views.first().map_or(1, |v| v.x.len()) as f64;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 1.0;
        }
        match (sd[i], sd[j]) {
            (Some(si), Some(sj)) => {
                let cov = centered[i]
                    .iter()
                    .zip(&centered[j])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / t;
                (cov / (si * sj)).clamp(-1.0, 1.0)
            }
            _ => 0.0,
        }
    })
}

fn coherence(views: &[ChannelView], band: &Band, fs: f64, i: usize, j: usize) -> Option<f64> {
    let n = views[i].x.len();
    let bins = band.bins(n, fs);
    if band.is_empty() || bins.is_empty() {
        return None;
    }
    let (xi, xj) = (&views[i].spectrum, &views[j].spectrum);
    let m = bins.len() as f64;
    let mut cross = Complex64::new(0.0, 0.0);
    let (mut sii, mut sjj) = (0.0, 0.0);
    for &k in &bins {
        cross += xi[k] * xj[k].conj();
        sii += xi[k].norm_sqr();
        sjj += xj[k].norm_sqr();
    }
    let (cross, sii, sjj) = (cross / m, sii / m, sjj / m);
    let denom = (sii * sjj).sqrt();
    (denom > 0.0).then(|| (cross.norm() / denom).clamp(0.0, 1.0))
}

/// R001–R014: correlation structure, coherence proxy and PLI per band.
pub fn compute_family_r(epoch: &Epoch, bands: &BandSet) -> RelationValues {
    family_r_views(&channel_views(epoch, bands), bands, epoch.fs())
}

pub(crate) fn family_r_views(views: &[ChannelView], bands: &BandSet, fs: f64) -> RelationValues {
    let n = views.len();
    let pairs = channel_pairs(n);
    let mut hits = vec![0usize; 14];
    let mut global = vec![0.0; 4];
    let mut pair_values = DMatrix::zeros(pairs.len(), 10);
    if n < 2 {
        hits.iter_mut().for_each(|h| *h += 1);
        return RelationValues {
            global,
            pairs: pair_values,
            guard_hits: hits,
        };
    }

    let rho = correlation_matrix(views, &mut hits);
    let abs: Vec<f64> = pairs.iter().map(|&(i, j)| rho[(i, j)].abs()).collect();
    global[0] = mean(&abs);
    global[1] = pop_var(&abs).sqrt();

    let eig = SymmetricEigen::new(rho).eigenvalues;
    let clipped: Vec<f64> = eig.iter().map(|&l| l.max(EIGEN_FLOOR)).collect();
    let sum: f64 = clipped.iter().sum();
    let lambda: Vec<f64> = clipped.iter().map(|l| l / sum).collect();
    global[2] = entropy(&lambda) / (n as f64).ln();
    global[3] = 1.0 / lambda.iter().map(|l| l * l).sum::<f64>();

    for (p, &(i, j)) in pairs.iter().enumerate() {
        for b in 0..5 {
            let band = bands.get(b);
            match coherence(views, band, fs, i, j) {
                Some(c) => pair_values[(p, b)] = c,
                None => hits[4 + b] += 1,
            }
            match (&views[i].bands[b], &views[j].bands[b]) {
                (Some(ai), Some(aj)) => {
                    pair_values[(p, 5 + b)] = phase_lag_index(&ai.phase, &aj.phase)
                }
                _ => hits[9 + b] += 1,
            }
        }
    }
    RelationValues {
        global,
        pairs: pair_values,
        guard_hits: hits,
    }
}

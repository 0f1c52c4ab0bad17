//! Acceptance run. Each criterion prints one PASS or FAIL line with the
//! measured quantity and its tolerance; the process exits non-zero when any
//! criterion fails. Built with `harness = false` so the lines always show.

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

use eeg_audit::adapter::{ModelAdapter, Split};
use eeg_audit::closure::{closure_cell, closure_ratio, sensitivity_suite, ClosureData, ClosureSelection};
use eeg_audit::config::RunConfig;
use eeg_audit::erasure::{edited_predictions, residual_probe, Eraser};
use eeg_audit::harness::{gaussian_matrix, generate_planted, ground_truth_compare, Confusion, PlantedCell, PlantedSpec};
use eeg_audit::io::{leakage_audit, Access, StageKind};
use eeg_audit::lexicon::*;
use eeg_audit::pipeline::{run_audit, CellData, CellInput};
use eeg_audit::probe::{probe_feature, EncodingThresholds, LayerBank, Targets};
use eeg_audit::report::AuditReport;
use eeg_audit::seed::SeedContext;
use eeg_audit::signal::{analytic, autocorr_lags, bandpass_fft_mask, dyadic_decompose, fft_bin_energy, Band, BandSet, Epoch};
use eeg_audit::stats::{bh_fdr, roc_auc, task_metric};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const FS: f64 = 200.0;
const CANONICAL_SEED: u64 = 4311;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// Shared planted cell

struct Audited {
    cell: PlantedCell,
    report: AuditReport,
}

fn planted_spec(seed: u64) -> PlantedSpec {
    PlantedSpec {
        seed,
        ..PlantedSpec::default()
    }
}

fn audit(cell: &PlantedCell, seed: u64) -> AuditReport {
    let cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let data = CellData {
        manifest: &cell.manifest,
        features: &cell.features,
        adapter: &cell.model,
    };
    run_audit(&cfg, &[CellInput::Ready(data)])
}

fn generate_and_audit(seed: u64) -> Audited {
    let cell = generate_planted(&planted_spec(seed)).expect("planted cell");
    let report = audit(&cell, seed);
    Audited { cell, report }
}

fn canonical() -> &'static Audited {
    static CELL: OnceLock<Audited> = OnceLock::new();
    CELL.get_or_init(|| generate_and_audit(CANONICAL_SEED))
}

// ---------------------------------------------------------------------------
// Shared helpers

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn gauss(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    gaussian_matrix(n, d, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn tone(freq: f64, amp: f64, n: usize) -> Vec<f64> {
    (0..n).map(|t| amp * (2.0 * PI * freq * t as f64 / FS).cos()).collect()
}

fn epoch(channels: Vec<Vec<f64>>) -> Epoch {
    Epoch::from_channels(&channels, FS, 75.0).unwrap()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn rows(m: &DMatrix<f64>, start: usize, n: usize) -> DMatrix<f64> {
    m.rows(start, n).into_owned()
}

// ---------------------------------------------------------------------------
// 1. Closure arithmetic

/// (model, task, B_rep, B_rand, FM, printed closure)
const CLOSURE_ROWS: [(&str, &str, f64, f64, f64, f64); 15] = [
    ("CSBrain", "MDD", 0.984, 0.477, 0.998, 0.974),
    ("CSBrain", "Sleep", 0.741, 0.191, 0.792, 0.915),
    ("CSBrain", "Siena", 0.817, 0.512, 0.955, 0.688),
    ("CSBrain", "TUSL", 0.618, 0.268, 0.932, 0.527),
    ("CSBrain", "Stress", 0.693, 0.481, 0.794, 0.680),
    ("CBraMod", "MDD", 0.985, 0.523, 0.987, 0.995),
    ("CBraMod", "Sleep", 0.754, 0.179, 0.779, 0.959),
    ("CBraMod", "Siena", 0.864, 0.488, 0.918, 0.874),
    ("CBraMod", "TUSL", 0.597, 0.231, 0.766, 0.685),
    ("CBraMod", "Stress", 0.723, 0.530, 0.884, 0.547),
    ("LaBraM", "MDD", 0.989, 0.516, 0.984, 1.012),
    ("LaBraM", "Sleep", 0.750, 0.190, 0.778, 0.951),
    ("LaBraM", "Siena", 0.840, 0.504, 0.889, 0.872),
    ("LaBraM", "TUSL", 0.630, 0.398, 0.700, 0.770),
    ("LaBraM", "Stress", 0.644, 0.515, 0.800, 0.451),
];

/// Range of the ratio over inputs anywhere in their three-decimal rounding
/// interval. The ratio is monotone in each input, so the corners suffice.
fn rounding_range(rep: f64, rand: f64, fm: f64) -> (f64, f64) {
    let h = 0.0005;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for a in [-h, h] {
        for b in [-h, h] {
            for c in [-h, h] {
                if let Some(r) = closure_ratio(rep + a, rand + b, fm + c) {
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
            }
        }
    }
    (lo, hi)
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut ok = 0;
    let mut misses = Vec::new();
    for &(model, task, rep, rand, fm, printed) in &CLOSURE_ROWS {
        let got = closure_ratio(rep, rand, fm);
        match got {
            Some(r) if (r - printed).abs() <= 0.002 => ok += 1,
            Some(r) => {
                let (lo, hi) = rounding_range(rep, rand, fm);
                misses.push(format!(
                    "{model}/{task} {r:.4} vs {printed:.3} (|d| {:.4}; printed value {} the input-rounding range [{lo:.4}, {hi:.4}])",
                    (r - printed).abs(),
                    if (lo..=hi).contains(&printed) { "inside" } else { "outside" }
                ));
            }
            None => misses.push(format!("{model}/{task} undefined")),
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let mean: f64 = CLOSURE_ROWS
        .iter()
        .filter_map(|r| closure_ratio(r.2, r.3, r.4))
        .sum::<f64>()
        / CLOSURE_ROWS.len() as f64;
    let mut detail = format!("{ok}/15 rows within 0.002, mean {mean:.3}, {:.3} ms < 1 s", secs * 1e3);
    if !misses.is_empty() {
        detail.push_str(&format!("; off: {}", misses.join("; ")));
    }
    outcome(ok == 15 && secs < 1.0, detail)
}

// ---------------------------------------------------------------------------
// 2. Planted-model recovery

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut total = Confusion::default();
    let mut worst = (1.0f64, CANONICAL_SEED);
    for seed in CANONICAL_SEED..CANONICAL_SEED + 20 {
        let owned;
        let a = if seed == CANONICAL_SEED {
            canonical()
        } else {
            owned = generate_and_audit(seed);
            &owned
        };
        let c = ground_truth_compare(a.report.cells[0].statuses(), &a.cell.truth);
        if c.sensitivity() < worst.0 {
            worst = (c.sensitivity(), seed);
        }
        total.add(&c);
    }
    let secs = t.elapsed().as_secs_f64();
    let sens = total.sensitivity();
    let fcr = total.false_causal_rate();
    outcome(
        sens >= 0.95 && fcr <= 0.05 && secs < 600.0,
        format!(
            "20 seeds from {CANONICAL_SEED}: S_used causal {sens:.3} >= 0.95, S_enc causal {fcr:.3} <= 0.05 \
             (worst seed {} at {:.3}); {secs:.0} s < 600 s",
            worst.1, worst.0
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Feature oracles

fn naive_dft_energy(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

fn brute_auc(scores: &[f64], labels: &[usize]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn textbook_bh(p: &[f64], alpha: f64) -> (Vec<bool>, Vec<f64>) {
    let m = p.len();
    let mut sorted: Vec<(f64, usize)> = p.iter().copied().zip(0..).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut k = 0;
    for (rank, (pv, _)) in sorted.iter().enumerate() {
        if *pv <= (rank + 1) as f64 * alpha / m as f64 {
            k = rank + 1;
        }
    }
    let mut reject = vec![false; m];
    for (_, i) in &sorted[..k] {
        reject[*i] = true;
    }
    let q = p
        .iter()
        .map(|&pi| {
            p.iter()
                .filter(|&&pj| pj >= pi)
                .map(|&pj| {
                    let rank = p.iter().filter(|&&x| x <= pj).count() as f64;
                    (m as f64 * pj / rank).min(1.0)
                })
                .fold(1.0, f64::min)
        })
        .collect();
    (reject, q)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fails = Vec::new();

    let mut fft_err = 0.0f64;
    for n in 2..=256 {
        let x = gaussian(&mut rng, n);
        let fast = fft_bin_energy(&x, FS).unwrap();
        let slow = naive_dft_energy(&x);
        for (a, b) in fast.iter().zip(&slow) {
            fft_err = fft_err.max((a - b).abs());
        }
    }
    if fft_err >= 1e-9 {
        fails.push("fft");
    }

    // Patterns of (3,1,2,5,4): (3,1,2), (1,2,5), (2,5,4) are three distinct
    // order patterns, each with probability 1/3.
    let h = permutation_entropy(&[3.0, 1.0, 2.0, 5.0, 4.0]).unwrap();
    let hand = 3f64.ln() / 6f64.ln();
    let c001_err = (h - hand).abs();
    if c001_err > f64::EPSILON {
        fails.push("C001");
    }

    let mut auc_cases = 0;
    let mut auc_bad = 0;
    while auc_cases < 500 {
        let n = rng.random_range(2..=200);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0u8..16)) / 4.0).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let pos = labels.iter().filter(|&&l| l == 1).count();
        if pos == 0 || pos == n {
            continue;
        }
        auc_cases += 1;
        auc_bad += usize::from(roc_auc(&scores, &labels).unwrap() != brute_auc(&scores, &labels));
    }
    if auc_bad > 0 {
        fails.push("roc_auc");
    }

    let mut bh_bad = 0;
    let mut q_err = 0.0f64;
    for _ in 0..500 {
        let m = rng.random_range(1..=80);
        let p: Vec<f64> = (0..m)
            .map(|_| match rng.random_range(0..5) {
                0 => rng.random::<f64>() * 0.002,
                1 => [0.01, 0.02, 0.05, 1.0][rng.random_range(0..4)],
                _ => rng.random::<f64>(),
            })
            .collect();
        let got = bh_fdr(&p, 0.05);
        let (reject, q) = textbook_bh(&p, 0.05);
        bh_bad += usize::from(got.reject != reject);
        for (a, b) in got.q.iter().zip(&q) {
            q_err = q_err.max((a - b).abs());
        }
    }
    if bh_bad > 0 || q_err >= 1e-12 {
        fails.push("bh_fdr");
    }

    let mut dy_err = 0.0f64;
    for n in 32..=512 {
        let x = gaussian(&mut rng, n);
        let d = dyadic_decompose(&x, 5).unwrap();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ed: f64 = d.details.iter().flatten().chain(&d.approx).map(|v| v * v).sum();
        dy_err = dy_err.max((ex - ed).abs() / ex);
    }
    if dy_err >= 1e-9 {
        fails.push("dyadic");
    }

    outcome(
        fails.is_empty(),
        format!(
            "fft vs naive DFT max {fft_err:.1e} < 1e-9 (lengths 2..=256); C001(3,1,2,5,4) |h - ln3/ln6| {c001_err:.1e}; \
             roc_auc {auc_bad}/500 mismatches (n <= 200); bh_fdr {bh_bad}/500 reject-set mismatches, q max {q_err:.1e}; \
             dyadic energy max rel {dy_err:.1e} < 1e-9{}",
            if fails.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", fails.join(", "))
            }
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Trivial lexicon and signal cases

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn trivial_cases() -> Vec<(&'static str, bool)> {
    let mut out: Vec<(&'static str, bool)> = Vec::new();
    let mut check = |name: &'static str, ok: bool| out.push((name, ok));

    let dc = fft_bin_energy(&[3.0; 64], 100.0).unwrap();
    check("DC energy only in bin 0", close(dc[0], (3.0 * 64.0f64).powi(2), 1e-6) && dc[1..].iter().all(|&e| e < 1e-12));
    let te = fft_bin_energy(&tone(10.0, 1.0, 400), FS).unwrap();
    let peak = (0..te.len()).max_by(|&a, &b| te[a].total_cmp(&te[b])).unwrap();
    check("tone energy peaks at its bin", peak == 20);

    let x = tone(10.0, 200.0, 400);
    let kept = bandpass_fft_mask(&x, &Band::new("alpha", 8.0, 13.0), FS).unwrap();
    let dropped = bandpass_fft_mask(&x, &Band::new("beta", 13.0, 30.0), FS).unwrap();
    let err: Vec<f64> = kept.iter().zip(&x).map(|(a, b)| a - b).collect();
    check("mask keeps in-band tone", norm(&err) / norm(&x) < 1e-6);
    check("mask drops out-of-band tone", norm(&dropped) < 1e-6 * norm(&x));

    let a = analytic(&tone(10.0, 1.0, 400)).unwrap();
    let mid = &a.envelope[100..300];
    check("cosine envelope is 1", close(mid.iter().sum::<f64>() / mid.len() as f64, 1.0, 1e-2));
    let z = analytic(&[0.0; 16]).unwrap();
    check("zero signal has zero envelope and phase", z.envelope.iter().chain(&z.phase).all(|&v| v == 0.0));

    let d = dyadic_decompose(&[2.0; 32], 5).unwrap();
    check("dyadic constant has no detail", d.details.iter().flatten().all(|&v| v.abs() < 1e-12));
    let alt: Vec<f64> = (0..32).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let d = dyadic_decompose(&alt, 5).unwrap();
    check(
        "dyadic alternating is all level-1 detail",
        d.details[0].iter().all(|&v| close(v, 2f64.sqrt(), 1e-12))
            && d.details[1..].iter().flatten().chain(&d.approx).all(|&v| v.abs() < 1e-12),
    );
    let acf = autocorr_lags(&[1.0; 64], 16).unwrap();
    check("constant ACF defaults to tau_max", acf.degenerate && acf.tau_1e == 16 && acf.tau_0 == 16);

    let t = compute_family_t(&epoch(vec![vec![-2.5; 64]]));
    let v = |i: usize| t.values[(0, i)];
    check(
        "T on a constant channel",
        [0, 3, 6, 7, 9].iter().all(|&i| v(i) == 0.0)
            && close(v(4), 2.5, 1e-12)
            && [1, 2, 5].iter().all(|&i| v(i) == 0.0 && t.guard_hits[i] == 1),
    );
    let t = compute_family_t(&epoch(vec![alt.clone()]));
    check(
        "T on an alternating channel",
        t.values[(0, 6)] == 1.0 && t.values[(0, 7)] == 2.0 && t.values[(0, 9)] == 2.0,
    );

    let e = epoch(vec![tone(10.0, 1.0, 400)]);
    let f = compute_family_f(&e, &BandSet::for_epoch(&e));
    check("F008 of an alpha tone >= 0.99", f.values[(0, 7)] >= 0.99);
    let both: Vec<f64> = tone(6.0, 1.0, 400).iter().zip(tone(20.0, 1.0, 400)).map(|(a, b)| a + b).collect();
    let e = epoch(vec![both]);
    let f = compute_family_f(&e, &BandSet::for_epoch(&e));
    check("F011 of balanced theta and beta is 0", f.values[(0, 10)].abs() < 1e-6);

    let e = epoch(vec![vec![3.0; 256]]);
    let tf = compute_family_tf(&e, &BandSet::for_epoch(&e));
    check("TF on a constant signal is 0", (0..6).all(|k| tf.values[(0, k)].abs() < 1e-12));

    let ramp: Vec<f64> = (0..64).map(f64::from).collect();
    check("C001 of a ramp is 0", permutation_entropy(&ramp).unwrap().abs() < 1e-12);
    let c = compute_family_c(&epoch(vec![vec![1.0; 128]]), None);
    check("C006 and C007 of a constant are 1", c.values[(0, 5)] == 1.0 && c.values[(0, 6)] == 1.0);

    let pac: Vec<f64> = tone(6.0, 1.0, 400).iter().zip(tone(40.0, 0.5, 400)).map(|(a, b)| a + b).collect();
    let e = epoch(vec![pac]);
    let xf = compute_family_x(&e, &BandSet::for_epoch(&e));
    check("MI of constant amplitude is 0", xf.values[(0, 1)].abs() < 1e-6);
    let n = 1800;
    let phase: Vec<f64> = (0..n).map(|t| -PI + 2.0 * PI * (t as f64 + 0.5) / n as f64).collect();
    let width = 2.0 * PI / MI_BINS as f64;
    let amp: Vec<f64> = phase
        .iter()
        .map(|&p| if ((p + PI) / width).floor() as usize == 7 { 2.0 } else { 0.0 })
        .collect();
    check("MI of a one-hot amplitude is 1", close(modulation_index(&phase, &amp).unwrap(), 1.0, 1e-3));
    let env: Vec<f64> = (0..100).map(|t| 1.0 + (t as f64 * 0.1).sin()).collect();
    check("AAC of an envelope with itself is 1", close(amplitude_coupling(&env, &env).unwrap(), 1.0, 1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = gaussian(&mut rng, 400);
    let e = epoch(vec![x.clone(), x.clone(), x.clone(), x]);
    let r = compute_family_r(&e, &BandSet::for_epoch(&e));
    check("R001 of identical channels is 1", close(r.global[0], 1.0, 1e-12));
    check("R002 of identical channels is 0", r.global[1].abs() < 1e-12);
    check("R003 of identical channels is 0", r.global[2].abs() < 1e-9);
    check("R004 of identical channels is 1", close(r.global[3], 1.0, 1e-9));
    check(
        "coherence of identical channels is 1",
        (0..6).all(|p| (0..5).all(|b| close(r.pairs[(p, b)], 1.0, 1e-12))),
    );
    check(
        "PLI of identical channels is 0",
        (0..6).all(|p| (0..5).all(|b| r.pairs[(p, 5 + b)] == 0.0)),
    );

    let one = aggregate(&[0.7], Scope::PerPair);
    check(
        "one pair aggregates to its value with std 0",
        one[1] == 0.0 && [0, 2, 3, 4].iter().all(|&i| one[i] == 0.7),
    );
    let ten: Vec<f64> = (1..=10).map(f64::from).collect();
    check("top-10% mean of ten pairs is the maximum", aggregate(&ten, Scope::PerPair)[4] == 10.0);
    let s = ColumnScaler::fit(&[4.0; 20]);
    check(
        "a constant column gets the unit scaler",
        s.method == ScaleMethod::Unit && s.scale == 1.0 && s.apply(4.0) == 0.0,
    );
    out
}

fn criterion_4() -> Outcome {
    let cases = trivial_cases();
    let failed: Vec<&str> = cases.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let mut detail = format!("{}/{} trivial cases hold", cases.len() - failed.len(), cases.len());
    if !failed.is_empty() {
        detail.push_str(&format!("; failed: {}", failed.join("; ")));
    }
    outcome(failed.is_empty(), detail)
}

// ---------------------------------------------------------------------------
// 5. Eraser properties

fn criterion_5() -> Outcome {
    let mut idem = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200u64 {
        let d = rng.random_range(6..40);
        let p = rng.random_range(1..6).min(d - 1);
        let h = gauss(200, d, 50_000 + case);
        let z = gauss(200, p, 60_000 + case) + h.columns(0, p) * 0.5;
        let pr = Eraser::fit(&h, &z).unwrap().projector();
        idem = idem.max((&pr * &pr - &pr).amax());
    }

    let mut resid = 0.0f64;
    for seed in 0..20u64 {
        let p = 1 + (seed % 3) as usize;
        let h = gauss(1500, 24, 70_000 + seed);
        let z = &h * gauss(24, p, 80_000 + seed);
        let e = Eraser::fit(&rows(&h, 0, 1000), &rows(&z, 0, 1000)).unwrap();
        let r = residual_probe(
            &e,
            (&rows(&h, 0, 1000), &rows(&h, 1000, 300)),
            (&rows(&z, 0, 1000), &rows(&z, 1000, 300)),
            1.0,
        )
        .unwrap();
        resid = resid.max(r.r2);
    }

    let a = canonical();
    let m = &a.cell.manifest;
    let model = &a.cell.model;
    let base = model.base_predictions(Split::Test).unwrap();
    let fm = a.report.cells[0].fm;
    let mut identity_ok = true;
    for l in 0..model.n_layers() {
        let edited = edited_predictions(model, l, &Eraser::identity(a.cell.spec.d_hidden), Split::Test).unwrap();
        let metric = task_metric(m.metric, &edited, &m.splits.test.labels, m.n_classes).unwrap();
        identity_ok &= edited == base && metric.to_bits() == fm.to_bits();
    }

    let erasures = &a.report.cells[0].erasures;
    let paired = erasures.iter().filter(|e| e.paired()).count();

    outcome(
        idem < 1e-12 && resid < 0.02 && identity_ok && paired == erasures.len() && !erasures.is_empty(),
        format!(
            "projector |P^2 - P| max {idem:.1e} < 1e-12 (200 fits); residual R2 max {resid:.4} < 0.02 (20 exact targets); \
             identity eraser {} base metric on all {} layers; {paired}/{} erasures share one bootstrap plan across real and controls",
            if identity_ok { "reproduces" } else { "does not reproduce" },
            model.n_layers(),
            erasures.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Statistical floors

/// Planted-cell geometry: 2000/500/500 rows, 64 units, and a target whose
/// decodable share is R² = 0.3.
fn shuffled_probe_r2(seed: u64) -> f64 {
    let d = 64;
    let n = 3000;
    let sig = (0.3f64 / 0.7).sqrt() / (d as f64).sqrt();
    let h = gauss(n, d, 10_000 + seed);
    let z = &h * gauss(d, 1, 20_000 + seed) * sig + gauss(n, 1, 30_000 + seed);
    let bank = LayerBank::new(&rows(&h, 0, 2000), &rows(&h, 2000, 500), &rows(&h, 2500, 500)).unwrap();
    let rec = probe_feature(
        "X",
        &[bank],
        &Targets {
            train: &rows(&z, 0, 2000),
            val: &rows(&z, 2000, 500),
            test: &rows(&z, 2500, 500),
        },
        &SeedContext::new(seed, "t", "m", "X", "probe"),
        &EncodingThresholds::default(),
    );
    rec.shuffled_val
}

fn criterion_6() -> Outcome {
    let mut dfa = 0.0;
    let mut kurt_hits = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        dfa += dfa_exponent(&gaussian(&mut rng, 2048)).unwrap() / 100.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let k = kurtosis(&gaussian(&mut rng, 4000)).unwrap();
        kurt_hits += usize::from((2.7..=3.3).contains(&k));
    }
    let shuffled = (0..100u64).filter(|&s| shuffled_probe_r2(s) < 0.04).count();
    let planted = &canonical().report.cells[0].probes;
    let planted_max = planted.iter().map(|p| p.shuffled_val).fold(0.0, f64::max);
    outcome(
        close(dfa, 0.5, 0.1) && kurt_hits >= 95 && shuffled >= 95,
        format!(
            "C005 white-noise mean {dfa:.3} in 0.5 +- 0.1; kurtosis in [2.7, 3.3] for {kurt_hits}/100 >= 95; \
             shuffled-probe R2 < 0.04 for {shuffled}/100 >= 95 (planted seed {CANONICAL_SEED}: max {planted_max:.3} over {} features)",
            planted.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Determinism and leakage

fn criterion_7() -> Outcome {
    let first = &canonical().report;
    let second = generate_and_audit(CANONICAL_SEED).report;
    let identical = first.to_json() == second.to_json();
    let canonical_pass = first.leakage.pass && leakage_audit(&first.trace).pass;
    let cell = first.cells[0].cell();
    let injections = [
        ("standardize", StageKind::Fit, "column centre and scale"),
        ("probe", StageKind::Selection, "peak layer from test R2"),
        ("erase", StageKind::Fit, "cross-covariance eraser"),
    ];
    let caught = injections
        .iter()
        .filter(|(stage, kind, stat)| {
            let mut t = first.trace.clone();
            t.push(Access {
                stage: format!("{cell} {stage}"),
                kind: *kind,
                split: Split::Test,
                statistic: (*stat).into(),
            });
            let r = leakage_audit(&t);
            !r.pass && r.violations.len() == 1 && r.violations[0].stage.ends_with(stage)
        })
        .count();
    outcome(
        identical && canonical_pass && caught == 3,
        format!(
            "two runs with seed {CANONICAL_SEED} {} ({} bytes); leakage audit {} on the canonical trace ({} accesses) \
             and fails on {caught}/3 injected traces",
            if identical { "byte-identical" } else { "differ" },
            first.to_json().len(),
            if canonical_pass { "passes" } else { "fails" },
            first.trace.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Sensitivity suite

fn criterion_8() -> Outcome {
    let a = canonical();
    let m = &a.cell.manifest;
    let (n_train, n_val, n_test) = (m.splits.train.len(), m.splits.val.len(), m.splits.test.len());
    let z = &a.cell.features.values;
    let train_x = rows(z, 0, n_train);
    let test_x = rows(z, n_train + n_val, n_test);
    let data = ClosureData {
        train_x: &train_x,
        train_y: &m.splits.train.labels,
        test_x: &test_x,
        test_y: &m.splits.test.labels,
        n_classes: m.n_classes,
        kind: m.metric,
    };
    let mut causal: Vec<usize> = a.cell.truth.used.iter().map(|f| feature_index(f).unwrap()).collect();
    causal.sort_unstable();
    let sel = ClosureSelection {
        test_encoded: (0..REGISTRY.len()).collect(),
        causal: causal.clone(),
        delta: vec![0.0; REGISTRY.len()],
    };
    let cfg = RunConfig {
        seed: CANONICAL_SEED,
        ..RunConfig::default()
    };
    let seed = SeedContext::new(cfg.seed, &m.task, &m.model, "", "").with_purpose("closure");
    let logistic = cfg.closure.logistic();
    let fm = a.report.cells[0].fm;
    let base = closure_cell(&data, &sel, fm, &seed, &logistic).unwrap();
    let sens = sensitivity_suite(&data, &sel, &base, &seed, cfg.closure.top_k, &logistic).unwrap();

    let drop = match (base.ratio, sens.matched_dimension) {
        (Some(b), Some(md)) => Some(b - md),
        _ => None,
    };
    let unused = Family::ALL
        .into_iter()
        .find(|f| causal.iter().all(|&q| REGISTRY[q].family != *f));
    let no_op = unused.map(|f| {
        let loo = sens.leave_one_family_out.iter().find(|(g, _)| *g == f).unwrap().1;
        loo.map(f64::to_bits) == base.ratio.map(f64::to_bits)
    });

    let cell = &a.report.cells[0];
    let audit_drop = match (&cell.closure, &cell.sensitivity) {
        (Some(c), Some(s)) => c.ratio.zip(s.matched_dimension).map(|(b, md)| b - md),
        _ => None,
    };
    let fmt = |v: Option<f64>| v.map_or("undefined".to_owned(), |v| format!("{v:.3}"));
    outcome(
        drop.is_some_and(|d| d >= 0.05) && no_op == Some(true),
        format!(
            "planted seed {CANONICAL_SEED}, B_rep = S_used ({} features), adapter from the harness: closure {} vs \
             matched-dimension {}, drop {} >= 0.05; leave-out of unused family {} {}; \
             informational drop with the audit's causal set ({} features): {}",
            causal.len(),
            fmt(base.ratio),
            fmt(sens.matched_dimension),
            fmt(drop),
            unused.map_or("none".to_owned(), |f| format!("{f:?}")),
            match no_op {
                Some(true) => "is a no-op",
                Some(false) => "changes the ratio",
                None => "not available",
            },
            cell.closure.as_ref().map_or(0, |c| c.rc_count),
            fmt(audit_drop)
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("closure arithmetic", criterion_1),
        ("planted-model recovery", criterion_2),
        ("feature oracles", criterion_3),
        ("trivial lexicon cases", criterion_4),
        ("eraser properties", criterion_5),
        ("statistical floors", criterion_6),
        ("determinism and leakage", criterion_7),
        ("sensitivity suite", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "criterion {} {} {name}: {} [{:.1} s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

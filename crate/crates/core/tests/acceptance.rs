//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the report is always printed; exits non-zero when any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use exoforecast::features::{split_chronological, FeatureFrame, SplitSpec};
use exoforecast::forest::{
    evaluate_regression, feature_importance, fit_forest, fit_tree, DataMatrix, ForestConfig, MaxFeatures, TreeNode,
};
use exoforecast::lstm::{gradient_check, make_windows, GradCheckConfig, TrainConfig, WindowSpec};
use exoforecast::pipeline::{run_ablation, run_ablation_on_frame, RunConfig};
use exoforecast::stats::{excess_kurtosis, mean, pearson_p_two_sided, pearson_r, reg_incomplete_beta, sample_skewness};
use exoforecast::synthetic::coupled_frame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

// ---- oracles ----

/// Neumaier compensated sum.
fn nsum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

/// Mean, G1 and G2 through k-statistics of compensated central moments.
fn moment_oracle(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let m = nsum(xs.iter().copied()) / n;
    let m = m + nsum(xs.iter().map(|x| x - m)) / n;
    let cm = |p: i32| nsum(xs.iter().map(|x| (x - m).powi(p))) / n;
    let (m2, m3, m4) = (cm(2), cm(3), cm(4));
    let k2 = n / (n - 1.0) * m2;
    let k3 = n * n / ((n - 1.0) * (n - 2.0)) * m3;
    let k4 = n * n * ((n + 1.0) * m4 - 3.0 * (n - 1.0) * m2 * m2) / ((n - 1.0) * (n - 2.0) * (n - 3.0));
    (m, k3 / k2.powf(1.5), k4 / (k2 * k2))
}

fn pearson_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (nsum(xs.iter().copied()) / n, nsum(ys.iter().copied()) / n);
    let sxy = nsum(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)));
    let sxx = nsum(xs.iter().map(|x| (x - mx) * (x - mx)));
    let syy = nsum(ys.iter().map(|y| (y - my) * (y - my)));
    sxy / (sxx * syy).sqrt()
}

/// Two-sided Student-t tail by Simpson integration. With t = √df·tan θ the
/// density becomes proportional to cos^(df-1) θ on [0, π/2).
fn t_tail_oracle(t0: f64, df: f64) -> f64 {
    let f = |th: f64| th.cos().powf(df - 1.0);
    let simpson = |a: f64, b: f64| {
        let n = 20_000;
        let h = (b - a) / n as f64;
        let inner = nsum((1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }));
        h / 3.0 * (f(a) + inner + f(b))
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    let theta0 = (t0 / df.sqrt()).atan();
    simpson(theta0, half_pi) / simpson(0.0, half_pi)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// ---- criteria ----

fn c1_stats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(4..=1000);
        // exponential draws keep skew and kurtosis away from zero
        let xs: Vec<f64> = (0..n).map(|_| 10.0 - rng.random::<f64>().max(1e-300).ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x + 0.8 * rng.random_range(-1.0..1.0)).collect();
        let (m, g1, g2) = moment_oracle(&xs);
        let errs = [
            rel(mean(&xs).unwrap(), m),
            rel(sample_skewness(&xs).unwrap(), g1),
            rel(excess_kurtosis(&xs).unwrap(), g2),
            rel(pearson_r(&xs, &ys).unwrap(), pearson_oracle(&xs, &ys)),
        ];
        worst = errs.iter().fold(worst, |w, e| w.max(*e));
    }
    if worst < 1e-10 {
        Ok(format!("max relative error {worst:.2e} over 100 vectors"))
    } else {
        Err(format!("max relative error {worst:.2e} >= 1e-10"))
    }
}

fn c2_special() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let a = rng.random_range(0.05..60.0);
        let b = rng.random_range(0.05..60.0);
        let x = rng.random_range(0.0..1.0);
        let s = reg_incomplete_beta(a, b, x).unwrap() + reg_incomplete_beta(b, a, 1.0 - x).unwrap();
        worst = worst.max((s - 1.0).abs());
    }
    let r: f64 = 0.6;
    let df = 8.0;
    let t0 = r * (df / (1.0 - r * r)).sqrt();
    let p = pearson_p_two_sided(r, 10).unwrap();
    let oracle = t_tail_oracle(t0, df);
    let detail = format!("symmetry max |err| {worst:.1e}; p(0.6, 10) = {p:.8} vs t-integral {oracle:.8}");
    if worst < 1e-12 && (p - oracle).abs() < 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c3_gradcheck() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for hidden in [1, 4, 8] {
        for seed in 0..10 {
            let cfg = GradCheckConfig { hidden_size: hidden, ..GradCheckConfig::default() };
            worst = worst.max(gradient_check(&cfg, seed).map_err(|e| e.to_string())?);
        }
    }
    let took = start.elapsed();
    let detail = format!("max relative error {worst:.2e}, {:.2}s", took.as_secs_f64());
    if worst < 1e-4 && took < Duration::from_secs(10) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c4_tree_split() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = ForestConfig { max_features: MaxFeatures::All, bootstrap: false, n_trees: 1, ..ForestConfig::default() };
    let mut checked_splits = 0;
    for case in 0..50 {
        let n = rng.random_range(2..=8);
        let p = rng.random_range(1..=3);
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..p).map(|_| rng.random_range(0..5) as f64).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3..4) as f64).collect();

        // exhaustive enumeration of (feature, midpoint) in lexicographic order
        let sse = |idx: &[usize]| {
            let m = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
            idx.iter().map(|&i| (y[i] - m).powi(2)).sum::<f64>()
        };
        let all: Vec<usize> = (0..n).collect();
        let parent = sse(&all);
        let tol = 1e-12 * parent;
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..p {
            let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let thr = 0.5 * (w[0] + w[1]);
                let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| rows[i][f] <= thr);
                let gain = parent - sse(&l) - sse(&r);
                if best.is_none_or(|(_, _, g)| gain > g + tol) {
                    best = Some((f, thr, gain));
                }
            }
        }
        let expected = best.filter(|&(_, _, g)| g > 0.0);

        let tree = fit_tree(&DataMatrix::from_rows(&rows).unwrap(), &y, &cfg, case).map_err(|e| e.to_string())?;
        let got = match tree.root() {
            TreeNode::Internal { feature, threshold, .. } => Some((*feature, *threshold)),
            TreeNode::Leaf { .. } => None,
        };
        let want = expected.map(|(f, t, _)| (f, t));
        if got != want {
            return Err(format!("dataset {case}: fit_tree root {got:?}, enumeration {want:?}"));
        }
        checked_splits += usize::from(want.is_some());
    }
    Ok(format!("50 datasets agree ({checked_splits} with a split, the rest leaves)"))
}

fn x0_importances(max_features: MaxFeatures) -> Result<(Vec<f64>, f64), String> {
    let mut imps = Vec::new();
    let mut worst_sum: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0]).collect();
        let cfg = ForestConfig { n_trees: 50, master_seed: seed, max_features, ..ForestConfig::default() };
        let model = fit_forest(&DataMatrix::from_rows(&rows).unwrap(), &y, &cfg).map_err(|e| e.to_string())?;
        let imp = feature_importance(&model).map_err(|e| e.to_string())?.importances;
        worst_sum = worst_sum.max((imp.iter().sum::<f64>() - 1.0).abs());
        imps.push(imp[0]);
    }
    Ok((imps, worst_sum))
}

fn c5_importance() -> Outcome {
    let (imps, worst_sum) = x0_importances(ForestConfig::default().max_features)?;
    let wins = imps.iter().filter(|&&v| v > 0.9).count();
    let min = imps.iter().copied().fold(f64::INFINITY, f64::min);
    // same data with every feature considered at each split, reported only
    let (all, _) = x0_importances(MaxFeatures::All)?;
    let all_min = all.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!(
        "default sampling: importance(x0) > 0.9 in {wins}/10 seeds (min {min:.4}); |sum - 1| <= {worst_sum:.1e}; \
         all features per split: min {all_min:.4}"
    );
    if wins == 10 && worst_sum <= 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ramp(rows: usize) -> FeatureFrame {
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
    let dates = (0..rows).map(|i| start + chrono::Days::new(i as u64)).collect();
    let values = (0..rows).flat_map(|r| [r as f64, (r * r) as f64, (r + 1) as f64]).collect();
    FeatureFrame::new(dates, vec!["a".into(), "b".into(), "t".into()], values, "t").unwrap()
}

fn c6_windowing() -> Outcome {
    let spec = WindowSpec::default();
    for n in [24, 30, 244] {
        let got = make_windows(&ramp(n), &spec).map_err(|e| e.to_string())?.len();
        if got != n - 23 {
            return Err(format!("{n} rows gave {got} windows, expected {}", n - 23));
        }
    }
    let frame = ramp(244);
    let splits = split_chronological(&frame, &SplitSpec::default()).map_err(|e| e.to_string())?;
    let mut total = 0;
    for rows in [&splits.train_rows, &splits.validation_rows, &splits.test_rows] {
        let ds = make_windows(&frame.slice_rows(rows.clone()), &spec).map_err(|e| e.to_string())?;
        for span in &ds.row_spans {
            let (lo, hi) = (span.start + rows.start, span.end + rows.start);
            if lo < rows.start || hi > rows.end {
                return Err(format!("window rows {lo}..{hi} cross split {rows:?}"));
            }
        }
        total += ds.len();
    }
    Ok(format!("N-23 windows for N in {{24, 30, 244}}; {total} split windows all inside their split"))
}

fn synthetic_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        forest: ForestConfig { n_trees: 50, ..ForestConfig::default() },
        train: TrainConfig { hidden_size: 8, learning_rate: 1e-2, max_epochs: 150, patience: 20, ..TrainConfig::default() },
        ..RunConfig::default()
    }
}

fn c7_synthetic_ablation() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut deltas = Vec::new();
    for seed in 0..10u64 {
        let frame = coupled_frame(300, 0.5, 7000 + seed).map_err(|e| e.to_string())?;
        let rep = run_ablation_on_frame(&frame, &synthetic_config(seed)).map_err(|e| e.to_string())?;
        wins += usize::from(rep.treatment_improved);
        deltas.push(rep.delta_mae);
    }
    let took = start.elapsed();
    // null fixture, reported only
    let null = coupled_frame(300, 0.0, 9000).map_err(|e| e.to_string())?;
    let null_delta = run_ablation_on_frame(&null, &synthetic_config(0)).map_err(|e| e.to_string())?.delta_mae;
    let mean_delta = deltas.iter().sum::<f64>() / deltas.len() as f64;
    let detail = format!(
        "treatment better in {wins}/10 seeds, mean delta MAE {mean_delta:+.4}, {:.1}s; null fixture delta {null_delta:+.4}",
        took.as_secs_f64()
    );
    if wins >= 8 && took < Duration::from_secs(60) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c8_real_data() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/real");
    let (minute, epi) = (dir.join("minute.csv"), dir.join("epi.csv"));
    if !minute.is_file() || !epi.is_file() {
        return Err(format!(
            "BLOCKED: real-data fixture missing (expected {} and {}); direction not evaluated",
            minute.display(),
            epi.display()
        ));
    }
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    cfg.data.minute_csv = minute;
    cfg.data.epi_csv = epi;
    cfg.output_dir = out.path().to_path_buf();
    let start = Instant::now();
    let rep = run_ablation(&cfg).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let detail = format!(
        "expected-direction: price-only MAE {:.4}, full MAE {:.4}, {:.1}s",
        rep.baseline.metrics.mae_normalized,
        rep.treatment.metrics.mae_normalized,
        took.as_secs_f64()
    );
    if rep.treatment.metrics.mae_normalized < rep.baseline.metrics.mae_normalized && took < Duration::from_secs(120) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c9_accuracy_formula() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let n = rng.random_range(1..50);
        let actual: Vec<f64> = (0..n).map(|_| rng.random_range(100.0..20000.0)).collect();
        let pred: Vec<f64> = actual.iter().map(|a| a * rng.random_range(0.8..1.2)).collect();
        let m = evaluate_regression(&pred, &actual).map_err(|e| e.to_string())?;
        let mape = pred.iter().zip(&actual).map(|(p, a)| ((a - p) / a).abs()).sum::<f64>() / n as f64;
        let acc = m.mape_accuracy.ok_or("accuracy missing")?;
        if acc != 100.0 - 100.0 * mape {
            return Err(format!("accuracy {acc} != 100 - 100*MAPE {}", 100.0 - 100.0 * mape));
        }
    }
    // a constant series of level L with error 37.17 everywhere: MAE 37.17,
    // accuracy 100 - 100*37.17/L, which is 99.49% at L of about 7.3k
    let level = 37.17 / 0.0051;
    let actual = vec![level; 5];
    let pred: Vec<f64> = actual.iter().map(|a| a + 37.17).collect();
    let m = evaluate_regression(&pred, &actual).map_err(|e| e.to_string())?;
    let acc = m.mape_accuracy.ok_or("accuracy missing")?;
    if (m.mae - 37.17).abs() > 1e-9 || (acc - 99.49).abs() > 1e-9 {
        return Err(format!("MAE {} accuracy {acc} at level {level:.0}", m.mae));
    }
    Ok(format!("accuracy = 100 - 100*MAPE on 200 series; MAE 37.17 <-> 99.49% at mean price {level:.0}"))
}

fn c10_determinism() -> Outcome {
    let fixture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic");
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    for out in [&a, &b] {
        let mut cfg = RunConfig::default();
        cfg.data.minute_csv = fixture.join("minute.csv");
        cfg.data.epi_csv = fixture.join("epi.csv");
        cfg.output_dir = out.path().to_path_buf();
        run_ablation(&cfg).map_err(|e| e.to_string())?;
    }
    let files = ["metrics.json", "baseline/predictions.csv", "treatment/predictions.csv"];
    for f in files {
        let (x, y) = (std::fs::read(a.path().join(f)), std::fs::read(b.path().join(f)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            (Ok(_), Ok(_)) => return Err(format!("{f} differs between runs")),
            (x, y) => return Err(format!("{f} unreadable: {:?} {:?}", x.err(), y.err())),
        }
    }
    Ok("metrics.json and both predictions.csv byte-identical across two ablation runs".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("statistics oracle equivalence", c1_stats),
        ("special functions", c2_special),
        ("LSTM gradient check", c3_gradcheck),
        ("tree split brute force", c4_tree_split),
        ("forest importance sanity", c5_importance),
        ("windowing", c6_windowing),
        ("synthetic ablation direction", c7_synthetic_ablation),
        ("real-data direction", c8_real_data),
        ("MAE and accuracy relation", c9_accuracy_formula),
        ("end-to-end determinism", c10_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.2}s]", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}

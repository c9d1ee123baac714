//! Acceptance suite. Prints one PASS/FAIL line per criterion. Failures exit
//! nonzero only when CAREBI_ACCEPTANCE_STRICT is set, so the rest of the
//! workspace tests still run.
//!
//! cargo test -p carebi-cli --test acceptance

mod common;

use std::time::{Duration, Instant};

use carebi::cfa::{carebi_spec, fit_dwls, omega, omega_from_loadings, CfaOptions, Objective};
use carebi::efa::{parallel_analysis, run_efa, PaCriterion, RotationOptions};
use carebi::linalg::Matrix;
use carebi::normal;
use carebi::optim::numeric_gradient;
use carebi::polycorr::{asymptotic_variances, kmo, polychoric_matrix, polychoric_pair};
use carebi::scoring::{classify, kmeans_1d, preset, Category, ScoringModel};
use carebi::seed;
use carebi::simulate::{
    carebi_fixture, congruence, equal_thresholds, noise_model, population_omega, simple_structure, simulate_bifactor,
    six_factor_fixture, TrueModel,
};
use carebi::validation::{fit_glm, Family};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

fn frac(hits: usize, n: usize) -> f64 {
    hits as f64 / n as f64
}

fn c1_polychoric() -> Verdict {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (r, &rho) in [0.2f64, 0.6, 0.9].iter().enumerate() {
        let l = rho.sqrt();
        let model = TrueModel::new(
            vec!["a".into(), "b".into()],
            vec![],
            vec![l, l],
            Matrix::zeros(2, 0),
            vec![None; 2],
            vec![equal_thresholds(4); 2],
        )
        .unwrap();
        let mut hits = 0;
        for s in 0..50u64 {
            let out = simulate_bifactor(&model, 2000, seed::derive(100 + r as u64, s));
            let cols = out.responses.complete_columns().unwrap();
            let est = polychoric_pair(&cols[0], &cols[1]).unwrap();
            hits += usize::from((est.rho - rho).abs() <= 0.05);
        }
        pass &= frac(hits, 50) >= 0.9;
        parts.push(format!("rho {rho}: {hits}/50"));
    }
    let el = t.elapsed();
    pass &= el < Duration::from_secs(10);
    verdict(pass, format!("{}; {}", parts.join(", "), secs(el)))
}

/// Gauss-Jordan inverse with partial pivoting.
fn gauss_jordan(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| f64::from(u8::from(i == j))));
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, piv);
        let d = a[c][c];
        a[c].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                let src = a[c].clone();
                a[r].iter_mut().zip(&src).for_each(|(v, s)| *v -= f * s);
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// KMO from partial correlations computed pair by pair, conditioning on the
/// remaining variables through their own inverse.
fn kmo_oracle(r: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let p = r.len();
    let mut r2 = vec![0.0; p];
    let mut q2 = vec![0.0; p];
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let rest: Vec<usize> = (0..p).filter(|&k| k != i && k != j).collect();
            let sub: Vec<Vec<f64>> = rest.iter().map(|&a| rest.iter().map(|&b| r[a][b]).collect()).collect();
            let inv = gauss_jordan(&sub);
            let quad = |a: usize, b: usize| -> f64 {
                let mut s = 0.0;
                for (x, &k) in rest.iter().enumerate() {
                    for (y, &l) in rest.iter().enumerate() {
                        s += r[a][k] * inv[x][y] * r[l][b];
                    }
                }
                s
            };
            let cij = r[i][j] - quad(i, j);
            let q = cij / ((1.0 - quad(i, i)) * (1.0 - quad(j, j))).sqrt();
            r2[i] += r[i][j].powi(2);
            q2[i] += q * q;
        }
    }
    let overall = r2.iter().sum::<f64>() / (r2.iter().sum::<f64>() + q2.iter().sum::<f64>());
    (overall, r2.iter().zip(&q2).map(|(a, b)| a / (a + b)).collect())
}

fn c2_kmo() -> Verdict {
    let mut pass = true;
    let mut worst_two: f64 = 0.0;
    for &r in &[0.1, 0.3, 0.5, 0.77, -0.6] {
        let m = Matrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]);
        let k = kmo(&m).unwrap().overall;
        worst_two = worst_two.max((k - 0.5).abs());
        // 0.5 to machine precision: the partial correlation equals r only up to rounding.
        pass &= (k - 0.5).abs() <= f64::EPSILON;
    }
    let mut rng = seed::rng(2, 6);
    let l: Vec<Vec<f64>> = (0..6).map(|_| (0..2).map(|_| rng.random_range(0.2..0.65)).collect()).collect();
    let r: Vec<Vec<f64>> = (0..6)
        .map(|i| (0..6).map(|j| if i == j { 1.0 } else { l[i][0] * l[j][0] + l[i][1] * l[j][1] }).collect())
        .collect();
    let m = Matrix::from_fn(6, 6, |i, j| r[i][j]);
    let got = kmo(&m).unwrap();
    let (o, msa) = kmo_oracle(&r);
    let mut err = (got.overall - o).abs();
    for (a, b) in got.per_item_msa.iter().zip(&msa) {
        err = err.max((a - b).abs());
    }
    pass &= err <= 1e-10;
    verdict(pass, format!("2-variable max |KMO - 0.5| = {worst_two:e}; 6-variable max error {err:.2e} (KMO {o:.4})"))
}

fn c3_parallel() -> Verdict {
    let t = Instant::now();
    let three = simple_structure(3, 4, 0.7, 4);
    let noise = noise_model(12, 4);
    let (mut hit3, mut hit0) = (0, 0);
    for s in 0..100u64 {
        let d = simulate_bifactor(&three, 1000, seed::derive(300, s));
        let pa = parallel_analysis(&d.responses, 100, s, PaCriterion::Percentile95).unwrap();
        hit3 += usize::from(pa.suggested_factors == 3);
        let d = simulate_bifactor(&noise, 1000, seed::derive(301, s));
        let pa = parallel_analysis(&d.responses, 100, s, PaCriterion::Percentile95).unwrap();
        hit0 += usize::from(pa.suggested_factors == 0);
    }
    let el = t.elapsed();
    let pass = hit3 >= 95 && hit0 >= 95 && el < Duration::from_secs(60);
    verdict(pass, format!("3-factor -> 3 in {hit3}/100, noise -> 0 in {hit0}/100 (95th percentile rule); {}", secs(el)))
}

fn c4_efa() -> Verdict {
    let (model, truth) = six_factor_fixture(0.7, 0.6);
    let opts = RotationOptions::default();
    let mut hits = 0;
    let mut worst = 1.0f64;
    for s in 0..50u64 {
        let d = simulate_bifactor(&model, 2000, seed::derive(400, s));
        let pm = polychoric_matrix(&d.responses).unwrap();
        let sol = run_efa(&pm.rho, &pm.item_ids, 6, pm.n_obs, &opts).unwrap();
        let phi = congruence(&sol.pattern, &truth).unwrap();
        let min = phi.iter().copied().fold(1.0, f64::min);
        worst = worst.min(min);
        hits += usize::from(min >= 0.95);
    }
    verdict(frac(hits, 50) >= 0.9, format!("all six congruences >= 0.95 in {hits}/50 seeds (worst {worst:.3})"))
}

/// Per-seed results on the 18-item fixture, shared by criteria 5 to 8.
struct FixtureRun {
    loading_errors: Vec<f64>,
    max_loading_error: f64,
    cfi: f64,
    rmsea: f64,
    converged: bool,
    omega_h: f64,
    score_corr: f64,
    raw: Vec<f64>,
    index: Vec<u8>,
}

fn fixture_runs(n_seeds: u64) -> (Vec<FixtureRun>, f64) {
    let model = carebi_fixture();
    let spec = carebi_spec(&model.item_ids).unwrap();
    let mut grad_err = 0.0;
    let runs = (0..n_seeds)
        .map(|s| {
            let d = simulate_bifactor(&model, 2000, seed::derive(500, s));
            let pm = polychoric_matrix(&d.responses).unwrap();
            let w = asymptotic_variances(&d.responses, 50, s).unwrap();
            if s == 0 {
                let obj = Objective::new(&spec, &pm.rho, &w).unwrap();
                let theta: Vec<f64> = carebi::cfa::start_values(&spec, &pm.rho).unwrap();
                let (_, g) = obj.value_grad(&theta);
                let num = numeric_gradient(|x| obj.value(x), &theta, 1e-6);
                let scale = num.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                grad_err = g.iter().zip(&num).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
            }
            let fit = fit_dwls(&spec, &pm, &w, &CfaOptions::default()).unwrap();
            let mut errors = Vec::new();
            for &(i, c) in &fit.free {
                let truth = if c == 0 {
                    model.lambda_g[i]
                } else {
                    let k = model.groups.iter().position(|g| *g == fit.factors[c]).unwrap();
                    model.lambda_s[(i, k)]
                };
                errors.push((fit.loadings[(i, c)] - truth).abs());
            }
            let ind = fit.indices.unwrap();
            let (_, raw, index) = ScoringModel::fit(&fit, &d.responses).unwrap();
            FixtureRun {
                max_loading_error: errors.iter().copied().fold(0.0, f64::max),
                loading_errors: errors,
                cfi: ind.cfi,
                rmsea: ind.rmsea,
                converged: fit.converged,
                omega_h: omega(&fit).omega_h,
                score_corr: pearson(&raw, &d.true_g),
                raw,
                index,
            }
        })
        .collect();
    (runs, grad_err)
}

fn c5_cfa(runs: &[FixtureRun], grad_err: f64) -> Verdict {
    let n = runs.len();
    let load = runs.iter().filter(|r| r.converged && r.max_loading_error <= 0.07).count();
    let fit = runs.iter().filter(|r| r.cfi >= 0.99 && r.rmsea <= 0.02).count();
    let worst_cfi = runs.iter().map(|r| r.cfi).fold(1.0, f64::min);
    let worst_rmsea = runs.iter().map(|r| r.rmsea).fold(0.0, f64::max);
    let per_loading = (0..runs[0].loading_errors.len())
        .map(|q| runs.iter().filter(|r| r.loading_errors[q] <= 0.07).count())
        .min()
        .unwrap_or(0);
    let pass = frac(load, n) >= 0.9 && fit == n && grad_err <= 1e-5;
    verdict(
        pass,
        format!(
            "all loadings within 0.07 in {load}/{n} (least-covered single loading {per_loading}/{n}); CFI >= .99 and RMSEA <= .02 in {fit}/{n} (min CFI {worst_cfi:.4}, max RMSEA {worst_rmsea:.4}); gradient rel. error {grad_err:.1e}"
        ),
    )
}

fn c6_omega(runs: &[FixtureRun]) -> Verdict {
    let model = carebi_fixture();
    let pop = population_omega(&model);
    let formula = omega_from_loadings(&model.lambda_g, &model.lambda_s, &model.group_of, &model.groups).omega_h;
    let exact = (pop - formula).abs();
    let within = runs.iter().filter(|r| (r.omega_h - pop).abs() <= 0.05).count();
    let worst = runs.iter().map(|r| (r.omega_h - pop).abs()).fold(0.0, f64::max);
    verdict(
        exact <= 1e-10 && within == runs.len(),
        format!("population {pop:.4}, formula gap {exact:.1e}; estimates within 0.05 in {within}/{} (worst {worst:.3})", runs.len()),
    )
}

fn c7_scoring(runs: &[FixtureRun]) -> Verdict {
    let worst = runs.iter().map(|r| r.score_corr).fold(1.0, f64::min);
    let mut ends = true;
    let mut ranks = true;
    for r in runs {
        ends &= r.index.iter().min() == Some(&0) && r.index.iter().max() == Some(&100);
        let mut order: Vec<usize> = (0..r.raw.len()).collect();
        order.sort_by(|&a, &b| r.raw[a].total_cmp(&r.raw[b]));
        ranks &= order.windows(2).all(|w| r.index[w[0]] <= r.index[w[1]]);
    }
    verdict(
        worst >= 0.85 && ends && ranks,
        format!("min corr(score, true g) {worst:.3} over {} seeds; endpoints 0/100 {ends}; order preserved {ranks}", runs.len()),
    )
}

/// Optimal k-segmentation of sorted weighted values by dynamic programming.
fn dp_optimum(values: &[f64], k: usize) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for x in v {
        match pts.last_mut() {
            Some((y, w)) if *y == x => *w += 1.0,
            _ => pts.push((x, 1.0)),
        }
    }
    let d = pts.len();
    let (mut sw, mut sx, mut sxx) = (vec![0.0; d + 1], vec![0.0; d + 1], vec![0.0; d + 1]);
    for (i, &(x, w)) in pts.iter().enumerate() {
        sw[i + 1] = sw[i] + w;
        sx[i + 1] = sx[i] + w * x;
        sxx[i + 1] = sxx[i] + w * x * x;
    }
    let cost = |a: usize, b: usize| {
        let (w, s, q) = (sw[b] - sw[a], sx[b] - sx[a], sxx[b] - sxx[a]);
        (q - s * s / w).max(0.0)
    };
    let mut best = vec![f64::INFINITY; d + 1];
    best[0] = 0.0;
    for _ in 0..k {
        let mut next = vec![f64::INFINITY; d + 1];
        for b in 1..=d {
            for a in 0..b {
                if best[a].is_finite() {
                    next[b] = next[b].min(best[a] + cost(a, b));
                }
            }
        }
        best = next;
    }
    best[d]
}

fn sse(values: &[f64], labels: &[usize], k: usize) -> f64 {
    let mut s = vec![0.0; k];
    let mut c = vec![0.0; k];
    for (&x, &l) in values.iter().zip(labels) {
        s[l] += x;
        c[l] += 1.0;
    }
    values.iter().zip(labels).map(|(&x, &l)| (x - s[l] / c[l]).powi(2)).sum()
}

fn c8_categories(runs: &[FixtureRun]) -> Verdict {
    let mut fixtures: Vec<Vec<f64>> = runs.iter().map(|r| r.index.iter().map(|&v| f64::from(v)).collect()).collect();
    let mut rng = seed::rng(8, 0);
    let mixture: Vec<f64> = (0..2000)
        .map(|i| {
            let c = [15.0, 40.0, 70.0][i % 3];
            (c + 6.0 * normal::quantile(rng.random_range(1e-9..1.0 - 1e-9))).clamp(0.0, 100.0).round()
        })
        .collect();
    fixtures.push(mixture);
    fixtures.push(vec![0.0, 0.0, 1.0, 5.0, 5.0, 6.0, 20.0, 99.0, 100.0]);
    let mut matches = 0;
    for f in &fixtures {
        let (_, labels) = kmeans_1d(f, 3).unwrap();
        let got = sse(f, &labels, 3);
        let opt = dp_optimum(f, 3);
        matches += usize::from((got - opt).abs() <= 1e-9 * opt.max(1.0));
    }
    let t = preset("paper-2022").unwrap();
    let bands: Vec<Category> = [30, 31, 50, 51].iter().map(|&v| classify(v, &t).unwrap()).collect();
    let preset_ok = bands == [Category::Low, Category::Moderate, Category::Moderate, Category::High];
    verdict(
        matches == fixtures.len() && preset_ok,
        format!("k-means at DP optimum on {matches}/{} fixtures; preset 30/31/50/51 -> {bands:?}", fixtures.len()),
    )
}

fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    normal::quantile(rng.random_range(f64::EPSILON..1.0 - f64::EPSILON))
}

fn design(x: &[f64]) -> Matrix {
    Matrix::from_fn(x.len(), 2, |i, j| if j == 0 { 1.0 } else { x[i] })
}

fn c9_glm() -> Verdict {
    // Coefficient recovery.
    let mut rng = seed::rng(9, 0);
    let n = 5000;
    let x: Vec<f64> = (0..n).map(|_| std_normal(&mut rng)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&v| {
            let p = 1.0 / (1.0 + (1.0 - 0.8 * v).exp());
            f64::from(u8::from(rng.random::<f64>() < p))
        })
        .collect();
    let ids: Vec<usize> = (0..n).collect();
    let fit = fit_glm(&y, &design(&x), Family::Logistic, &ids).unwrap();
    let err = (fit.coefficients[0] + 1.0).abs().max((fit.coefficients[1] - 0.8).abs());

    // Null coverage.
    let mut cover = 0;
    for s in 0..200u64 {
        let mut rng = seed::rng(9, 1000 + s);
        let n = 500;
        let x: Vec<f64> = (0..n).map(|_| std_normal(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.3))).collect();
        let cl: Vec<usize> = (0..n).map(|i| i / 2).collect();
        let f = fit_glm(&y, &design(&x), Family::Logistic, &cl).unwrap();
        cover += usize::from(f.ci95[1].0 <= 1.0 && 1.0 <= f.ci95[1].1);
    }

    // Sandwich against Monte-Carlo spread, intra-cluster correlation 0.3.
    let (rho, g, m) = (0.3f64, 200, 5);
    let mut est = Vec::new();
    let mut ses = Vec::new();
    for s in 0..200u64 {
        let mut rng = seed::rng(9, 5000 + s);
        let (mut x, mut y, mut cl) = (Vec::new(), Vec::new(), Vec::new());
        for c in 0..g {
            let (ax, ae) = (std_normal(&mut rng), std_normal(&mut rng));
            for _ in 0..m {
                let xv = rho.sqrt() * ax + (1.0 - rho).sqrt() * std_normal(&mut rng);
                let e = rho.sqrt() * ae + (1.0 - rho).sqrt() * std_normal(&mut rng);
                x.push(xv);
                y.push(f64::from(u8::from(-0.5 + 0.8 * xv + e > 0.0)));
                cl.push(c);
            }
        }
        let f = fit_glm(&y, &design(&x), Family::Logistic, &cl).unwrap();
        est.push(f.coefficients[1]);
        ses.push(f.cluster_robust_se[1]);
    }
    let mean = est.iter().sum::<f64>() / est.len() as f64;
    let sd = (est.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt();
    let mean_se = ses.iter().sum::<f64>() / ses.len() as f64;
    let ratio = mean_se / sd;
    let cov_pct = 100.0 * frac(cover, 200);
    let pass = err <= 0.1 && (cov_pct - 95.0).abs() <= 3.0 && (ratio - 1.0).abs() <= 0.15;
    verdict(
        pass,
        format!("max coef error {err:.3}; null CI coverage {cov_pct:.1}%; mean cluster SE / MC SD = {ratio:.3}"),
    )
}

fn c10_pipeline() -> Verdict {
    let t = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if let Err(e) = common::run_bundled(a.path()).and_then(|_| common::run_bundled(b.path())) {
        return verdict(false, format!("pipeline error: {e}"));
    }
    let elapsed = t.elapsed();
    let repeat = common::diff_trees(a.path(), b.path());
    let golden = common::diff_trees(a.path(), &common::golden_dir());
    let n = common::artifacts(a.path()).len();
    let detail = format!(
        "{n} artifacts, repeat diffs {}, golden diffs {}, two runs in {}{}",
        repeat.len(),
        golden.len(),
        secs(elapsed),
        golden.first().map(|d| format!(" ({d})")).unwrap_or_default()
    );
    verdict(repeat.is_empty() && golden.is_empty() && elapsed < Duration::from_secs(300), detail)
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let v = f();
        println!("criterion {id:>2} {name:<22} {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };
    run(1, "polychoric recovery", &mut c1_polychoric);
    run(2, "KMO exactness", &mut c2_kmo);
    run(3, "parallel analysis", &mut c3_parallel);
    run(4, "EFA recovery", &mut c4_efa);
    let (runs, grad_err) = fixture_runs(50);
    run(5, "CFA recovery", &mut || c5_cfa(&runs, grad_err));
    run(6, "omega", &mut || c6_omega(&runs));
    run(7, "scoring", &mut || c7_scoring(&runs));
    run(8, "categorization", &mut || c8_categories(&runs));
    run(9, "validation GLM", &mut c9_glm);
    run(10, "pipeline determinism", &mut c10_pipeline);
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed in {}", results.len() - failed.len(), results.len(), secs(start.elapsed()));
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        if std::env::var_os("CAREBI_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}

//! Independent re-derivations checked against the library.

use carebi::cfa::{carebi_spec, start_values, Objective};
use carebi::codebook::Codebook;
use carebi::efa::{fit_minres, rotate_oblimin, RotationOptions};
use carebi::linalg::Matrix;
use carebi::polycorr::{kmo, polychoric_pair, WeightMethod, WeightSet};
use carebi::scoring::kmeans_1d;
use carebi::seed;
use carebi::simulate::{carebi_fixture, population_polychoric, simple_structure, simulate_bifactor};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn random_correlation(p: usize, s: u64) -> Matrix {
    let mut rng = seed::rng(s, 0);
    let f = Matrix::from_fn(p, 3, |_, _| rng.random_range(-1.0..1.0));
    let mut c = &f * f.transpose();
    for i in 0..p {
        c[(i, i)] += 0.5;
    }
    let d: Vec<f64> = (0..p).map(|i| c[(i, i)].sqrt()).collect();
    Matrix::from_fn(p, p, |i, j| c[(i, j)] / (d[i] * d[j]))
}

#[test]
fn kmo_matches_conditional_covariance_partials() {
    for s in 0..5 {
        let r = random_correlation(7, s);
        let p = r.nrows();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..p {
            for j in 0..p {
                if i == j {
                    continue;
                }
                let rest: Vec<usize> = (0..p).filter(|&k| k != i && k != j).collect();
                let rr = Matrix::from_fn(rest.len(), rest.len(), |a, b| r[(rest[a], rest[b])]);
                let inv = rr.try_inverse().unwrap();
                let cond = |a: usize, b: usize| {
                    let ra = Matrix::from_fn(1, rest.len(), |_, k| r[(a, rest[k])]);
                    let rb = Matrix::from_fn(rest.len(), 1, |k, _| r[(rest[k], b)]);
                    r[(a, b)] - (ra * &inv * rb)[(0, 0)]
                };
                let q = cond(i, j) / (cond(i, i) * cond(j, j)).sqrt();
                num += r[(i, j)].powi(2);
                den += r[(i, j)].powi(2) + q * q;
            }
        }
        let got = kmo(&r).unwrap().overall;
        assert!((got - num / den).abs() < 1e-10, "seed {s}: {got} vs {}", num / den);
    }
}

/// P(a < X < b, c < Y < d) by Simpson's rule over x.
fn rectangle(a: f64, b: f64, c: f64, d: f64, rho: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    let (a, b) = (a.max(-9.0), b.min(9.0));
    let s = (1.0 - rho * rho).sqrt();
    let f = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt() * (n.cdf((d - rho * x) / s) - n.cdf((c - rho * x) / s));
    let m = 400;
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for k in 1..m {
        acc += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn marginal_cuts(col: &[u16], k: u16) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    let mut cuts = vec![f64::NEG_INFINITY];
    let mut cum = 0;
    for c in 1..k {
        cum += col.iter().filter(|&&v| v == c).count();
        cuts.push(n.inverse_cdf(cum as f64 / col.len() as f64));
    }
    cuts.push(f64::INFINITY);
    cuts
}

#[test]
fn polychoric_matches_likelihood_grid_search() {
    let model = simple_structure(1, 2, 0.75, 4);
    for s in 0..3 {
        let sim = simulate_bifactor(&model, 800, 100 + s);
        let a = sim.responses.complete_column(0).unwrap();
        let b = sim.responses.complete_column(1).unwrap();
        let (ta, tb) = (marginal_cuts(&a, 4), marginal_cuts(&b, 4));
        let mut table = [[0.0; 4]; 4];
        for (&x, &y) in a.iter().zip(&b) {
            table[x as usize - 1][y as usize - 1] += 1.0;
        }
        let loglik = |rho: f64| {
            let mut ll = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    if table[i][j] > 0.0 {
                        ll += table[i][j] * rectangle(ta[i], ta[i + 1], tb[j], tb[j + 1], rho).max(1e-300).ln();
                    }
                }
            }
            ll
        };
        let (mut best, mut best_ll) = (0.0, f64::NEG_INFINITY);
        for g in 0..=180 {
            let rho = -0.9 + 0.01 * g as f64;
            let ll = loglik(rho);
            if ll > best_ll {
                (best, best_ll) = (rho, ll);
            }
        }
        let est = polychoric_pair(&a, &b).unwrap().rho;
        assert!((est - best).abs() <= 0.01, "seed {s}: {est} vs grid {best}");
        assert!(loglik(est) >= best_ll - 1e-6, "seed {s}: estimate is not a likelihood maximum");
    }
}

/// Quartimin written out term by term.
fn quartimin(l: &Matrix) -> f64 {
    let mut f = 0.0;
    for i in 0..l.nrows() {
        for j in 0..l.ncols() {
            for k in j + 1..l.ncols() {
                f += l[(i, j)].powi(2) * l[(i, k)].powi(2);
            }
        }
    }
    f
}

#[test]
fn oblimin_beats_an_angle_grid() {
    let model = simple_structure(2, 4, 0.7, 4);
    let mut rho = population_polychoric(&model);
    // Some cross-loading so the unrotated solution is far from simple.
    rho[(0, 5)] += 0.15;
    rho[(5, 0)] += 0.15;
    let a = fit_minres(&rho, 2).unwrap().loadings;
    let rot = rotate_oblimin(&a, &RotationOptions::default()).unwrap();
    let recon = &a * rot.t.transpose().try_inverse().unwrap();
    assert!((&recon - &rot.pattern).abs().max() < 1e-8);
    for j in 0..2 {
        assert!((rot.phi[(j, j)] - 1.0).abs() < 1e-10);
    }
    let mut grid_min = f64::INFINITY;
    let steps = 720;
    for u in 0..steps {
        for v in 0..steps {
            let (x, y) = (std::f64::consts::PI * u as f64 / steps as f64, std::f64::consts::PI * v as f64 / steps as f64);
            if (x - y).abs() < 1e-3 {
                continue;
            }
            let t = Matrix::from_row_slice(2, 2, &[x.cos(), y.cos(), x.sin(), y.sin()]);
            if let Some(ti) = t.transpose().try_inverse() {
                grid_min = grid_min.min(quartimin(&(&a * ti)));
            }
        }
    }
    let got = quartimin(&rot.pattern);
    assert!(got <= grid_min + 1e-9, "gpf {got} vs grid {grid_min}");
}

#[test]
fn cfa_gradient_matches_central_differences() {
    let model = carebi_fixture();
    let rho = population_polychoric(&model);
    let spec = carebi_spec(&Codebook::canonical().ids()).unwrap();
    let p = rho.nrows();
    let mut rng = seed::rng(9, 0);
    let w = WeightSet { variances: (0..p * (p - 1) / 2).map(|_| rng.random_range(0.5..2.0)).collect(), method: WeightMethod::Bootstrap };
    // Off the optimum so the gradient is not near zero.
    let noisy = Matrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho[(i, j)] * 0.9 });
    let obj = Objective::new(&spec, &noisy, &w).unwrap();
    let theta: Vec<f64> = start_values(&spec, &rho).unwrap().iter().map(|t| t + 0.03).collect();
    let (_, grad) = obj.value_grad(&theta);
    let h = 1e-6;
    for k in 0..theta.len() {
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[k] += h;
        dn[k] -= h;
        let fd = (obj.value(&up) - obj.value(&dn)) / (2.0 * h);
        let scale = grad[k].abs().max(1e-3);
        assert!((fd - grad[k]).abs() / scale < 1e-5, "param {k}: {fd} vs {}", grad[k]);
    }
}

fn sse(values: &[f64], labels: &[usize], k: usize) -> f64 {
    (0..k)
        .map(|c| {
            let xs: Vec<f64> = values.iter().zip(labels).filter(|(_, &l)| l == c).map(|(v, _)| *v).collect();
            let m = xs.iter().sum::<f64>() / xs.len().max(1) as f64;
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Minimum SSE over every split of the sorted distinct values into k runs.
fn exhaustive(values: &[f64], k: usize) -> f64 {
    let mut d: Vec<f64> = values.to_vec();
    d.sort_by(f64::total_cmp);
    d.dedup();
    let mut best = f64::INFINITY;
    let mut cuts = vec![0usize; k - 1];
    fn rec(d: &[f64], values: &[f64], cuts: &mut Vec<usize>, depth: usize, from: usize, best: &mut f64) {
        if depth == cuts.len() {
            let labels: Vec<usize> = values.iter().map(|v| cuts.iter().filter(|&&c| *v >= d[c]).count()).collect();
            *best = best.min(sse(values, &labels, cuts.len() + 1));
            return;
        }
        for c in from..d.len() {
            cuts[depth] = c;
            rec(d, values, cuts, depth + 1, c + 1, best);
        }
    }
    rec(&d, values, &mut cuts, 0, 1, &mut best);
    best
}

#[test]
fn kmeans_matches_exhaustive_search() {
    let mut rng = seed::rng(5, 0);
    for trial in 0..40 {
        let n = rng.random_range(6..25);
        let k = rng.random_range(2..=4);
        let values: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..40u8))).collect();
        let Ok((_, labels)) = kmeans_1d(&values, k) else { continue };
        let got = sse(&values, &labels, k);
        let want = exhaustive(&values, k);
        assert!((got - want).abs() < 1e-9, "trial {trial}: {got} vs {want}");
    }
}

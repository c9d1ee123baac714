use carebi::codebook::{reverse_code, ResponseMatrix};
use carebi::linalg::Matrix;
use carebi::polycorr::{polychoric_matrix, polychoric_pair};
use carebi::scoring::{classify, rescale_minmax, BurdenThresholds, Category};
use carebi::seed;
use carebi::validation::{fit_glm, hc_covariance, Family};
use proptest::prelude::*;
use rand::Rng;

fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().max(1e-300);
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * rng.random::<f64>()).cos()
}

/// Two 4-category items cut from a bivariate normal with correlation `rho`.
fn ordinal_pair(n: usize, rho: f64, s: u64) -> (Vec<u16>, Vec<u16>) {
    let mut rng = seed::rng(s, 0);
    let cut = |z: f64| match z {
        z if z < -0.8 => 1,
        z if z < 0.1 => 2,
        z if z < 0.9 => 3,
        _ => 4,
    };
    (0..n)
        .map(|_| {
            let x = normal(&mut rng);
            let y = rho * x + (1.0 - rho * rho).sqrt() * normal(&mut rng);
            (cut(x), cut(y + 0.2))
        })
        .unzip()
}

fn flip(col: &[u16], k: u16) -> Vec<u16> {
    col.iter().map(|&c| k + 1 - c).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reverse_code_is_an_involution(k in 2u16..8, raw in prop::collection::vec(prop::option::of(1u16..8), 1..60)) {
        let col: Vec<Option<u16>> = raw.into_iter().map(|c| c.map(|v| 1 + (v - 1) % k)).collect();
        let twice = reverse_code(&reverse_code(&col, k).unwrap(), k).unwrap();
        prop_assert_eq!(twice, col);
    }

    #[test]
    fn polychoric_is_symmetric_and_sign_equivariant(rho in -0.85f64..0.85, s in 0u64..1000) {
        let (a, b) = ordinal_pair(400, rho, s);
        let ab = polychoric_pair(&a, &b).unwrap().rho;
        let ba = polychoric_pair(&b, &a).unwrap().rho;
        prop_assert!((ab - ba).abs() < 1e-6, "{} vs {}", ab, ba);
        let neg = polychoric_pair(&flip(&a, 4), &b).unwrap().rho;
        prop_assert!((ab + neg).abs() < 1e-6, "{} vs {}", ab, neg);
    }

    #[test]
    fn polychoric_matrix_ignores_row_order(s in 0u64..1000) {
        let (a, b) = ordinal_pair(300, 0.5, s);
        let (c, _) = ordinal_pair(300, 0.3, s + 7);
        let ids = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let m = ResponseMatrix::from_complete_columns(ids, vec![4; 3], vec![a, b, c]).unwrap();
        let mut order: Vec<usize> = (0..m.n_rows()).collect();
        let mut rng = seed::rng(s, 1);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let p1 = polychoric_matrix(&m).unwrap();
        let p2 = polychoric_matrix(&m.take_rows(&order)).unwrap();
        prop_assert!((&p1.rho - &p2.rho).amax() < 1e-9);
    }

    #[test]
    fn rescale_keeps_ranks_and_endpoints(raw in prop::collection::vec(-50.0f64..50.0, 2..80)) {
        prop_assume!(raw.iter().any(|&x| x != raw[0]));
        let (idx, _) = rescale_minmax(&raw).unwrap();
        prop_assert_eq!(*idx.iter().min().unwrap(), 0);
        prop_assert_eq!(*idx.iter().max().unwrap(), 100);
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                if raw[i] < raw[j] {
                    prop_assert!(idx[i] <= idx[j]);
                }
            }
        }
    }

    #[test]
    fn classify_is_total(b1 in 0i64..98, gap in 1i64..50, index in 0i64..=100) {
        let b2 = (b1 + gap).min(99);
        prop_assume!(b1 < b2);
        let t = BurdenThresholds::from_boundaries(b1, b2).unwrap();
        let c = classify(index, &t).unwrap();
        let expect = if index <= b1 { Category::Low } else if index <= b2 { Category::Moderate } else { Category::High };
        prop_assert_eq!(c, expect);
    }
}

/// Logistic data with one predictor and cluster labels of size `m`.
fn glm_data(n: usize, m: usize, s: u64) -> (Vec<f64>, Matrix, Vec<usize>) {
    let mut rng = seed::rng(s, 2);
    let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let y = x.iter().map(|&v| f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-(0.3 + 0.8 * v)).exp()))).collect();
    let design = Matrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
    (y, design, (0..n).map(|i| i / m).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn glm_ignores_row_order_and_cluster_labels(s in 0u64..1000) {
        let (y, x, g) = glm_data(300, 3, s);
        let base = fit_glm(&y, &x, Family::Logistic, &g).unwrap();
        let n = y.len();
        let order: Vec<usize> = (0..n).rev().collect();
        let y2: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let x2 = Matrix::from_fn(n, 2, |i, j| x[(order[i], j)]);
        let g2: Vec<usize> = order.iter().map(|&i| 1000 - g[i] * 7).collect();
        let other = fit_glm(&y2, &x2, Family::Logistic, &g2).unwrap();
        for k in 0..2 {
            // Agreement up to the IRLS stopping tolerance.
            prop_assert!((base.coefficients[k] - other.coefficients[k]).abs() < 1e-6);
            prop_assert!((base.cluster_robust_se[k] - other.cluster_robust_se[k]).abs() < 1e-6);
            prop_assert!((base.exp_coefficients[k] - base.coefficients[k].exp()).abs() < 1e-12 * base.exp_coefficients[k]);
        }
    }

    #[test]
    fn singleton_clusters_give_the_hc_sandwich(s in 0u64..1000) {
        let (y, x, _) = glm_data(250, 1, s);
        let g: Vec<usize> = (0..y.len()).collect();
        let fit = fit_glm(&y, &x, Family::Logistic, &g).unwrap();
        let hc = hc_covariance(&x, &y, &fit).unwrap();
        for k in 0..2 {
            prop_assert!((fit.cluster_robust_se[k] - hc[(k, k)].sqrt()).abs() < 1e-10);
        }
    }
}

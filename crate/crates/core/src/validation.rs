//! Outcome regressions on the CareBI score with cluster-robust inference.
//!
//! Models are ordinary GLMs fitted by IRLS; non-independence of caregivers
//! sharing a care recipient is handled by a cluster sandwich with the
//! G / (G - 1) small-sample factor, not by random effects.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::codebook::RawTable;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::normal;
use crate::scoring::{CareBiResult, Category};

pub const METHOD_LABEL: &str = "cluster-robust GLM (IRLS; sandwich clustered by care recipient, G/(G-1) corrected)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logistic,
    Poisson,
    LogLinkGamma,
}

impl Family {
    pub fn ratio_label(&self) -> &'static str {
        match self {
            Family::Logistic => "OR",
            Family::Poisson => "RR",
            Family::LogLinkGamma => "ratio of means",
        }
    }

    fn check(&self, y: &[f64]) -> Result<()> {
        let ok = match self {
            Family::Logistic => y.iter().all(|&v| v == 0.0 || v == 1.0),
            Family::Poisson => y.iter().all(|&v| v >= 0.0 && v.fract() == 0.0),
            Family::LogLinkGamma => y.iter().all(|&v| v > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("outcome values outside the support of the {self:?} family")))
        }
    }

    fn mean(&self, eta: f64) -> f64 {
        match self {
            Family::Logistic => 1.0 / (1.0 + (-eta).exp()),
            _ => eta.exp(),
        }
    }

    /// Working weight (dmu/deta)^2 / V(mu), dispersion excluded.
    fn weight(&self, mu: f64) -> f64 {
        match self {
            Family::Logistic => mu * (1.0 - mu),
            Family::Poisson => mu,
            Family::LogLinkGamma => 1.0,
        }
    }

    /// (y - mu) (dmu/deta) / V(mu): the per-observation score multiplier.
    fn score(&self, y: f64, mu: f64) -> f64 {
        match self {
            Family::Logistic | Family::Poisson => y - mu,
            Family::LogLinkGamma => (y - mu) / mu,
        }
    }

    fn deviance(&self, y: &[f64], mu: &[f64]) -> f64 {
        let d: f64 = y
            .iter()
            .zip(mu)
            .map(|(&y, &m)| match self {
                Family::Logistic => {
                    if y == 1.0 {
                        -m.ln()
                    } else {
                        -(1.0 - m).ln()
                    }
                }
                Family::Poisson => {
                    let a = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
                    a - (y - m)
                }
                Family::LogLinkGamma => -(y / m).ln() + (y - m) / m,
            })
            .sum();
        2.0 * d
    }

    fn init_eta(&self, y: f64) -> f64 {
        match self {
            Family::Logistic => {
                let m = (y + 0.5) / 2.0;
                (m / (1.0 - m)).ln()
            }
            Family::Poisson => (y + 0.1).ln(),
            Family::LogLinkGamma => y.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    pub coefficients: Vec<f64>,
    pub exp_coefficients: Vec<f64>,
    pub cluster_robust_se: Vec<f64>,
    pub ci95: Vec<(f64, f64)>,
    pub p_values: Vec<f64>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub deviance: f64,
    pub deviance_trace: Vec<f64>,
    pub iterations: usize,
}

const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
const SEPARATION_ETA: f64 = 15.0;

fn rank(x: &Matrix) -> usize {
    let sv = x.clone().svd(false, false).singular_values;
    let top = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > top * 1e-10 * x.nrows().max(x.ncols()) as f64).count()
}

/// IRLS with step halving, then the cluster sandwich.
///
/// `clusters[i]` is any label; rows sharing it form one cluster.
pub fn fit_glm(y: &[f64], x: &Matrix, family: Family, clusters: &[usize]) -> Result<GlmFit> {
    let (n, k) = (x.nrows(), x.ncols());
    if y.len() != n || clusters.len() != n {
        return Err(Error::Dimension("outcome, design and cluster lengths differ".into()));
    }
    if n <= k {
        return Err(Error::RankDeficient);
    }
    family.check(y)?;
    if family == Family::Logistic && y.iter().all(|&v| v == y[0]) {
        return Err(Error::Separation(format!("outcome is constant ({})", y[0])));
    }
    if rank(x) < k {
        return Err(Error::RankDeficient);
    }
    let mut eta: Vec<f64> = y.iter().map(|&v| family.init_eta(v)).collect();
    let mut beta = Vector::zeros(k);
    let mut mu: Vec<f64> = eta.iter().map(|&e| family.mean(e)).collect();
    let mut dev = f64::INFINITY;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let solve = |eta: &[f64], mu: &[f64]| -> Option<Vector> {
        let mut xtwx = Matrix::zeros(k, k);
        let mut xtwz = Vector::zeros(k);
        for i in 0..n {
            let w = family.weight(mu[i]).max(1e-300);
            let z = eta[i] + family.score(y[i], mu[i]) / w;
            let xi = x.row(i);
            for a in 0..k {
                xtwz[a] += w * xi[a] * z;
                for b in 0..=a {
                    xtwx[(a, b)] += w * xi[a] * xi[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                xtwx[(b, a)] = xtwx[(a, b)];
            }
        }
        xtwx.cholesky().map(|c| c.solve(&xtwz))
    };
    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        let Some(target) = solve(&eta, &mu) else { return Err(Error::RankDeficient) };
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let b = &beta + (&target - &beta) * step;
            let e: Vec<f64> = (x * &b).iter().copied().collect();
            let m: Vec<f64> = e.iter().map(|&v| family.mean(v)).collect();
            let d = family.deviance(y, &m);
            if d.is_finite() && (d <= dev || !dev.is_finite()) {
                accepted = Some((b, e, m, d));
                break;
            }
            step *= 0.5;
        }
        let Some((b, e, m, d)) = accepted else { break };
        let change = (dev - d).abs() / (d.abs() + 0.1);
        beta = b;
        eta = e;
        mu = m;
        dev = d;
        trace.push(d);
        if change < IRLS_TOL {
            converged = true;
            break;
        }
    }
    let max_eta = eta.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    if family == Family::Logistic && max_eta > SEPARATION_ETA {
        return Err(Error::Separation(format!("linear predictor reached {max_eta:.1}; fitted probabilities are 0 or 1")));
    }
    if !converged {
        return Err(Error::NotConverged(format!("IRLS did not converge in {IRLS_MAX_ITER} iterations")));
    }
    let bread = {
        let mut xtwx = Matrix::zeros(k, k);
        for i in 0..n {
            let w = family.weight(mu[i]);
            let xi = x.row(i);
            xtwx += xi.transpose() * xi * w;
        }
        crate::linalg::spd_inverse(&xtwx).map_err(|_| Error::RankDeficient)?
    };
    let scores: Vec<Vector> = (0..n).map(|i| x.row(i).transpose() * family.score(y[i], mu[i])).collect();
    let (cov, g) = cluster_sandwich(&bread, &scores, clusters);
    let beta: Vec<f64> = beta.iter().copied().collect();
    let se: Vec<f64> = (0..k).map(|a| cov[(a, a)].max(0.0).sqrt()).collect();
    Ok(GlmFit {
        family,
        exp_coefficients: beta.iter().map(|b| b.exp()).collect(),
        ci95: beta.iter().zip(&se).map(|(b, s)| ((b - 1.96 * s).exp(), (b + 1.96 * s).exp())).collect(),
        p_values: beta.iter().zip(&se).map(|(b, s)| 2.0 * normal::cdf(-(b / s).abs())).collect(),
        coefficients: beta,
        cluster_robust_se: se,
        n_obs: n,
        n_clusters: g,
        deviance: dev,
        deviance_trace: trace,
        iterations,
    })
}

/// G / (G - 1) * B (sum_g U_g U_g') B.
fn cluster_sandwich(bread: &Matrix, scores: &[Vector], clusters: &[usize]) -> (Matrix, usize) {
    let k = bread.nrows();
    let mut sums: HashMap<usize, Vector> = HashMap::new();
    for (u, &c) in scores.iter().zip(clusters) {
        *sums.entry(c).or_insert_with(|| Vector::zeros(k)) += u;
    }
    let mut keys: Vec<usize> = sums.keys().copied().collect();
    keys.sort_unstable();
    let mut meat = Matrix::zeros(k, k);
    for c in &keys {
        let u = &sums[c];
        meat += u * u.transpose();
    }
    let g = keys.len();
    let adj = if g > 1 { g as f64 / (g as f64 - 1.0) } else { 1.0 };
    (bread * meat * bread * adj, g)
}

/// Heteroskedasticity-robust covariance with n / (n - 1) scaling.
pub fn hc_covariance(x: &Matrix, y: &[f64], fit: &GlmFit) -> Result<Matrix> {
    let (n, k) = (x.nrows(), x.ncols());
    let beta = Vector::from_vec(fit.coefficients.clone());
    let eta = x * &beta;
    let mut xtwx = Matrix::zeros(k, k);
    let mut meat = Matrix::zeros(k, k);
    for i in 0..n {
        let mu = fit.family.mean(eta[i]);
        let xi = x.row(i).transpose();
        xtwx += &xi * xi.transpose() * fit.family.weight(mu);
        let s = fit.family.score(y[i], mu);
        meat += &xi * xi.transpose() * (s * s);
    }
    let b = crate::linalg::spd_inverse(&xtwx)?;
    Ok(&b * meat * &b * (n as f64 / (n as f64 - 1.0)))
}

/// Centre and divide by the sample standard deviation.
pub fn standardize(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::NoScoreVariance);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::NoScoreVariance);
    }
    let sd = var.sqrt();
    Ok(x.iter().map(|v| (v - mean) / sd).collect())
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorForm {
    ContinuousStd,
    Categorical,
}

/// Whether the score explains the outcome column or the column explains the
/// score (the latter models index + 1 with a log-link Gamma).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    ScorePredicts,
    ScoreResponds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub name: String,
    pub column: String,
    pub family: Family,
    pub predictor_form: PredictorForm,
    #[serde(default)]
    pub role: Role,
    /// Dichotomize: values at or above this become 1, others 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_from: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityRow {
    pub outcome: String,
    pub family: Family,
    pub role: Role,
    pub predictor_form: PredictorForm,
    pub term: String,
    pub estimate: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
    pub stars: String,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub method: String,
    pub rows: Vec<ValidityRow>,
}

#[derive(Debug, Clone)]
pub struct JoinOptions {
    pub row_id_column: String,
    pub cluster_column: String,
}

impl Default for JoinOptions {
    fn default() -> Self {
        Self { row_id_column: "row_id".into(), cluster_column: "cluster_id".into() }
    }
}

/// Fit every outcome; failures become rows carrying the error text.
pub fn validity_table(specs: &[OutcomeSpec], scores: &[CareBiResult], data: &RawTable, opts: &JoinOptions) -> Result<ValidityReport> {
    let ids = data.string_column(&opts.row_id_column)?;
    let clusters = data.string_column(&opts.cluster_column)?;
    let by_id: HashMap<&str, usize> = ids.iter().enumerate().filter_map(|(i, s)| s.as_deref().map(|s| (s, i))).collect();
    let mut rows = Vec::new();
    for spec in specs {
        let col = data.float_column(&spec.column)?;
        let mut cl_ids: HashMap<String, usize> = HashMap::new();
        let mut y_raw = Vec::new();
        let mut score = Vec::new();
        let mut index = Vec::new();
        let mut cats = Vec::new();
        let mut cl = Vec::new();
        for s in scores {
            let Some(&r) = by_id.get(s.row_id.as_str()) else { continue };
            let (Some(v), Some(c)) = (col[r], clusters[r].as_ref()) else { continue };
            let next = cl_ids.len();
            cl.push(*cl_ids.entry(c.clone()).or_insert(next));
            y_raw.push(match spec.top_from {
                Some(t) => f64::from(u8::from(v >= t)),
                None => v,
            });
            score.push(f64::from(s.index));
            index.push(s.index);
            cats.push(s.category);
        }
        let n = y_raw.len();
        let g = cl_ids.len();
        let fail = |term: &str, e: String| ValidityRow {
            outcome: spec.name.clone(),
            family: spec.family,
            role: spec.role,
            predictor_form: spec.predictor_form,
            term: term.to_string(),
            estimate: None,
            ci_low: None,
            ci_high: None,
            p_value: None,
            stars: String::new(),
            n_obs: n,
            n_clusters: g,
            error: Some(e),
        };
        let built = build_design(spec, &y_raw, &score, &index, &cats);
        let (y, x, terms) = match built {
            Ok(v) => v,
            Err(e) => {
                rows.push(fail("-", e.to_string()));
                continue;
            }
        };
        match fit_glm(&y, &x, spec.family, &cl) {
            Ok(fit) => {
                for (t, name) in terms.iter().enumerate() {
                    let a = t + 1;
                    rows.push(ValidityRow {
                        outcome: spec.name.clone(),
                        family: spec.family,
                        role: spec.role,
                        predictor_form: spec.predictor_form,
                        term: name.clone(),
                        estimate: Some(fit.exp_coefficients[a]),
                        ci_low: Some(fit.ci95[a].0),
                        ci_high: Some(fit.ci95[a].1),
                        p_value: Some(fit.p_values[a]),
                        stars: stars(fit.p_values[a]).to_string(),
                        n_obs: fit.n_obs,
                        n_clusters: fit.n_clusters,
                        error: None,
                    });
                }
            }
            Err(e) => rows.push(fail(&terms.join("+"), e.to_string())),
        }
    }
    Ok(ValidityReport { method: METHOD_LABEL.to_string(), rows })
}

type Design = (Vec<f64>, Matrix, Vec<String>);

fn build_design(spec: &OutcomeSpec, col: &[f64], score: &[f64], index: &[u8], cats: &[Option<Category>]) -> Result<Design> {
    let n = col.len();
    if n == 0 {
        return Err(Error::NoObservations);
    }
    let with_intercept = |cols: Vec<Vec<f64>>| Matrix::from_fn(n, cols.len() + 1, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
    match spec.role {
        Role::ScorePredicts => {
            let (cols, terms) = match spec.predictor_form {
                PredictorForm::ContinuousStd => (vec![standardize(score)?], vec!["CareBI (per SD)".to_string()]),
                PredictorForm::Categorical => {
                    if cats.iter().any(Option::is_none) {
                        return Err(Error::InvalidArgument("categorical predictor needs classified scores".into()));
                    }
                    let dummy = |c: Category| cats.iter().map(|x| f64::from(u8::from(*x == Some(c)))).collect();
                    (
                        vec![dummy(Category::Moderate), dummy(Category::High)],
                        vec!["Moderate vs Low".to_string(), "High vs Low".to_string()],
                    )
                }
            };
            Ok((col.to_vec(), with_intercept(cols), terms))
        }
        Role::ScoreResponds => {
            if spec.family != Family::LogLinkGamma {
                return Err(Error::InvalidArgument("a score response is modelled with the log-link Gamma family".into()));
            }
            let y: Vec<f64> = index.iter().map(|&v| f64::from(v) + 1.0).collect();
            let (cols, terms) = match spec.predictor_form {
                PredictorForm::ContinuousStd => (vec![standardize(col)?], vec![format!("{} (per SD)", spec.column)]),
                PredictorForm::Categorical => {
                    let mut levels: Vec<f64> = col.to_vec();
                    levels.sort_by(f64::total_cmp);
                    levels.dedup();
                    if levels.len() < 2 {
                        return Err(Error::InvalidArgument(format!("`{}` has a single level", spec.column)));
                    }
                    let cols = levels[1..].iter().map(|&l| col.iter().map(|&v| f64::from(u8::from(v == l))).collect()).collect();
                    let terms = levels[1..].iter().map(|l| format!("{} = {l} vs {}", spec.column, levels[0])).collect();
                    (cols, terms)
                }
            };
            Ok((y, with_intercept(cols), terms))
        }
    }
}

impl ValidityReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "outcome", "family", "role", "predictor", "term", "estimate", "ci_low", "ci_high", "p_value", "stars", "n_obs",
            "n_clusters", "error",
        ])?;
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
        for r in &self.rows {
            wr.write_record([
                r.outcome.clone(),
                format!("{:?}", r.family),
                format!("{:?}", r.role),
                format!("{:?}", r.predictor_form),
                r.term.clone(),
                f(r.estimate),
                f(r.ci_low),
                f(r.ci_high),
                r.p_value.map_or(String::new(), |x| format!("{x:.6}")),
                r.stars.clone(),
                r.n_obs.to_string(),
                r.n_clusters.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Fixed-width table: outcome, term, estimate [CI] with stars.
    pub fn to_text(&self) -> String {
        let mut out = format!("Method: {}\n", self.method);
        out.push_str(&format!("{:<28} {:<26} {:<15} {:>22}\n", "Outcome", "Term", "Measure", "Estimate [95% CI]"));
        for r in &self.rows {
            let est = match (r.estimate, r.ci_low, r.ci_high) {
                (Some(e), Some(l), Some(h)) => format!("{e:.2}{} [{l:.2}, {h:.2}]", r.stars),
                _ => format!("fit failed: {}", r.error.as_deref().unwrap_or("unknown")),
            };
            out.push_str(&format!("{:<28} {:<26} {:<15} {:>22}\n", r.outcome, r.term, r.family.ratio_label(), est));
        }
        out.push_str("* p < 0.1, ** p < 0.05, *** p < 0.01\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_examples() {
        let z = standardize(&[0.0, 100.0]).unwrap();
        assert!((z[0] + 0.707_106_781_186_547_6).abs() < 1e-12);
        assert!((z[1] - 0.707_106_781_186_547_6).abs() < 1e-12);
        let again = standardize(&[1.0, 2.0, 4.0, 8.0]).unwrap();
        let twice = standardize(&again).unwrap();
        assert!(again.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(standardize(&[3.0, 3.0, 3.0]).is_err());
    }

    #[test]
    fn star_convention() {
        assert_eq!(stars(0.005), "***");
        assert_eq!(stars(0.03), "**");
        assert_eq!(stars(0.07), "*");
        assert_eq!(stars(0.2), "");
    }

    fn design(x: &[f64]) -> Matrix {
        Matrix::from_fn(x.len(), 2, |i, j| if j == 0 { 1.0 } else { x[i] })
    }

    #[test]
    fn all_zero_outcome_is_separation() {
        let x: Vec<f64> = (0..50).map(|i| f64::from(i) / 10.0).collect();
        let y = vec![0.0; 50];
        let cl: Vec<usize> = (0..50).collect();
        assert!(matches!(fit_glm(&y, &design(&x), Family::Logistic, &cl), Err(Error::Separation(_))));
    }

    #[test]
    fn poisson_and_gamma_fit_exact_means() {
        // Two groups: the MLE reproduces the group means exactly.
        let x: Vec<f64> = (0..40).map(|i| f64::from(u8::from(i >= 20))).collect();
        let y: Vec<f64> = (0..40).map(|i| if i >= 20 { [4.0, 6.0][i % 2] } else { [1.0, 3.0][i % 2] }).collect();
        let cl: Vec<usize> = (0..40).map(|i| i / 2).collect();
        for fam in [Family::Poisson, Family::LogLinkGamma] {
            let f = fit_glm(&y, &design(&x), fam, &cl).unwrap();
            assert!((f.exp_coefficients[0] - 2.0).abs() < 1e-8);
            assert!((f.exp_coefficients[1] - 2.5).abs() < 1e-8);
            assert!(f.deviance_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn rank_deficiency() {
        let x = Matrix::from_fn(10, 3, |i, j| if j == 2 { 2.0 } else if j == 0 { 1.0 } else { i as f64 });
        let y = vec![1.0; 10];
        assert!(matches!(fit_glm(&y, &x, Family::Poisson, &[0; 10]), Err(Error::RankDeficient)));
    }
}

//! Factor-count selection, minimum-residual extraction, direct oblimin
//! rotation, item retention, and fit indices.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codebook::ResponseMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::polycorr::{self, PreparedItem};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PaCriterion {
    #[default]
    Mean,
    Percentile95,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelAnalysisReport {
    pub observed_eigenvalues: Vec<f64>,
    pub reference_eigenvalues: Vec<f64>,
    pub suggested_factors: usize,
    pub n_sims: usize,
    pub criterion: PaCriterion,
}

pub const MIN_SIMS: usize = 100;

/// Horn's parallel analysis on polychoric eigenvalues.
///
/// Reference dataset `s` permutes every column independently, so marginals
/// match exactly and the columns are independent. The permutation of item
/// `id` in dataset `s` uses `rng(derive(seed, s), key_hash(id))`, which makes
/// the result independent of column order. The suggested count is the number
/// of leading observed eigenvalues that exceed the reference at their rank.
pub fn parallel_analysis(
    matrix: &ResponseMatrix,
    n_sims: usize,
    seed: u64,
    criterion: PaCriterion,
) -> Result<ParallelAnalysisReport> {
    if n_sims < MIN_SIMS {
        return Err(Error::InvalidArgument(format!("parallel analysis needs at least {MIN_SIMS} simulations")));
    }
    let items = polycorr::prepare_items(matrix)?;
    let observed = {
        let raw = polycorr::raw_matrix(&items, &matrix.item_ids)?;
        let (rho, _) = polycorr::psd_repair(&raw, polycorr::PSD_EPS);
        linalg::eigenvalues_desc(&rho)
    };
    let keys: Vec<u64> = matrix.item_ids.iter().map(|id| seed::key_hash(id)).collect();
    let one = |s: usize| -> Result<Vec<f64>> {
        let sim_seed = seed::derive(seed, s as u64);
        let shuffled: Vec<PreparedItem> = items
            .iter()
            .zip(&keys)
            .map(|(it, &k)| {
                let mut it = it.clone();
                it.index.shuffle(&mut seed::rng(sim_seed, k));
                it
            })
            .collect();
        let raw = polycorr::raw_matrix(&shuffled, &matrix.item_ids)?;
        Ok(linalg::eigenvalues_desc(&raw))
    };
    let sims: Vec<Vec<f64>> = map_sims(n_sims, one)?;
    let p = observed.len();
    let reference: Vec<f64> = (0..p)
        .map(|k| {
            let mut v: Vec<f64> = sims.iter().map(|e| e[k]).collect();
            match criterion {
                PaCriterion::Mean => v.iter().sum::<f64>() / v.len() as f64,
                PaCriterion::Percentile95 => {
                    v.sort_by(f64::total_cmp);
                    percentile(&v, 0.95)
                }
            }
        })
        .collect();
    let suggested = observed.iter().zip(&reference).take_while(|(o, r)| o > r).count();
    Ok(ParallelAnalysisReport {
        observed_eigenvalues: observed,
        reference_eigenvalues: reference,
        suggested_factors: suggested,
        n_sims,
        criterion,
    })
}

fn map_sims<F>(n: usize, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Linear interpolation between order statistics of sorted `v`.
fn percentile(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeRow {
    pub rank: usize,
    pub eigenvalue: f64,
    /// Drop to the next eigenvalue; absent on the last row.
    pub difference: Option<f64>,
}

pub fn scree_table(rho: &Matrix) -> Vec<ScreeRow> {
    let ev = linalg::eigenvalues_desc(rho);
    (0..ev.len())
        .map(|k| ScreeRow { rank: k + 1, eigenvalue: ev[k], difference: ev.get(k + 1).map(|n| ev[k] - n) })
        .collect()
}

pub const HEYWOOD_FLOOR: f64 = 0.001;
const MINRES_TOL: f64 = 1e-9;
const MINRES_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct MinresFit {
    /// p x m unrotated loadings; each column sums positive.
    pub loadings: Matrix,
    pub uniquenesses: Vec<f64>,
    /// Items whose uniqueness hit the floor.
    pub heywood: Vec<usize>,
    pub objective: f64,
    /// Objective after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Alternating least squares on the reduced correlation matrix.
///
/// Given communalities on the diagonal, the best rank-m Lambda comes from the
/// top-m eigenpairs; given Lambda, the best communalities are the diagonal of
/// Lambda Lambda'. Each half-step can only lower the full squared residual,
/// which equals the off-diagonal minres objective once the diagonal has been
/// refit (plus any residual left by the Heywood clamp). Starts from squared
/// multiple correlations.
pub fn fit_minres(rho: &Matrix, m: usize) -> Result<MinresFit> {
    let p = rho.nrows();
    if m == 0 || m >= p {
        return Err(Error::InvalidArgument(format!("need 1 <= m < p, got m = {m}, p = {p}")));
    }
    let ceiling = 1.0 - HEYWOOD_FLOOR;
    let mut h2: Vec<f64> = match linalg::spd_inverse(rho) {
        Ok(inv) => (0..p).map(|i| (1.0 - 1.0 / inv[(i, i)]).clamp(0.0, ceiling)).collect(),
        Err(_) => (0..p).map(|i| (0..p).filter(|&j| j != i).fold(0.0f64, |a, j| a.max(rho[(i, j)].abs()))).collect(),
    };
    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    let mut lambda = Matrix::zeros(p, m);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MINRES_MAX_ITER {
        iterations += 1;
        let mut reduced = rho.clone();
        for i in 0..p {
            reduced[(i, i)] = h2[i];
        }
        let (vals, vecs) = linalg::sym_eigen_desc(&reduced);
        for k in 0..m {
            let s = vals[k].max(0.0).sqrt();
            for i in 0..p {
                lambda[(i, k)] = vecs[(i, k)] * s;
            }
        }
        let common = &lambda * lambda.transpose();
        let mut obj = 0.0;
        for i in 0..p {
            h2[i] = common[(i, i)].min(ceiling);
            let d = common[(i, i)] - h2[i];
            obj += d * d;
            for j in 0..p {
                if i != j {
                    obj += (rho[(i, j)] - common[(i, j)]).powi(2);
                }
            }
        }
        trace.push(obj);
        if prev - obj < MINRES_TOL {
            converged = true;
            break;
        }
        prev = obj;
    }
    if !converged {
        return Err(Error::NotConverged(format!("minres stopped after {MINRES_MAX_ITER} iterations")));
    }
    for k in 0..m {
        if lambda.column(k).sum() < 0.0 {
            lambda.column_mut(k).neg_mut();
        }
    }
    let common = &lambda * lambda.transpose();
    let heywood = (0..p).filter(|&i| common[(i, i)] >= ceiling).collect();
    let uniquenesses = (0..p).map(|i| (1.0 - common[(i, i)]).max(HEYWOOD_FLOOR)).collect();
    Ok(MinresFit { loadings: lambda, uniquenesses, heywood, objective: *trace.last().unwrap(), trace, iterations })
}

#[derive(Debug, Clone, Copy)]
pub struct RotationOptions {
    pub gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Random orthonormal starts tried after the identity start.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for RotationOptions {
    fn default() -> Self {
        Self { gamma: 0.0, tol: 1e-8, max_iter: 2000, restarts: 4, seed: 20_220_905 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    pub pattern: Matrix,
    pub phi: Matrix,
    /// Rotation matrix T with pattern = A (T')^-1 and phi = T'T.
    pub t: Matrix,
    pub criterion: f64,
    pub iterations: usize,
}

/// Direct oblimin criterion value and its gradient with respect to L.
pub fn oblimin_criterion(l: &Matrix, gamma: f64) -> (f64, Matrix) {
    let (p, m) = (l.nrows(), l.ncols());
    let l2 = l.component_mul(l);
    let n = Matrix::from_fn(m, m, |i, j| if i == j { 0.0 } else { 1.0 });
    let mut x = &l2 * &n;
    if gamma != 0.0 {
        let c = Matrix::from_fn(p, p, |i, j| (if i == j { 1.0 } else { 0.0 }) - gamma / p as f64);
        x = c * x;
    }
    let f = l2.component_mul(&x).sum() / 4.0;
    (f, l.component_mul(&x))
}

/// One gradient-projection run from rotation start `t0`.
fn gpf_oblique(a: &Matrix, t0: Matrix, opts: &RotationOptions) -> Option<Rotation> {
    let m = a.ncols();
    let mut t = t0;
    let pattern_of = |t: &Matrix| -> Option<Matrix> { t.transpose().try_inverse().map(|ti| a * ti) };
    let mut l = pattern_of(&t)?;
    let (mut f, mut gq) = oblimin_criterion(&l, opts.gamma);
    let grad = |l: &Matrix, gq: &Matrix, t: &Matrix| -> Option<Matrix> {
        let ti = t.clone().try_inverse()?;
        Some(-(l.transpose() * gq * ti).transpose())
    };
    let mut g = grad(&l, &gq, &t)?;
    let mut al = 1.0;
    for it in 0..opts.max_iter {
        let colsums: Vec<f64> = (0..m).map(|j| t.column(j).dot(&g.column(j))).collect();
        let mut gp = g.clone();
        for j in 0..m {
            let tj = t.column(j) * colsums[j];
            gp.column_mut(j).axpy(-1.0, &tj, 1.0);
        }
        let s = gp.norm();
        if s < opts.tol {
            let phi = t.transpose() * &t;
            return Some(Rotation { pattern: l, phi, t, criterion: f, iterations: it });
        }
        al *= 2.0;
        let mut next = None;
        for _ in 0..30 {
            let mut x = &t - &gp * al;
            for j in 0..m {
                let nrm = x.column(j).norm();
                x.column_mut(j).scale_mut(1.0 / nrm);
            }
            if let Some(lt) = pattern_of(&x) {
                let (ft, gqt) = oblimin_criterion(&lt, opts.gamma);
                if ft < f - 0.5 * s * s * al {
                    next = Some((x, lt, ft, gqt));
                    break;
                }
            }
            al /= 2.0;
        }
        let (tt, lt, ft, gqt) = next?;
        t = tt;
        l = lt;
        f = ft;
        gq = gqt;
        g = grad(&l, &gq, &t)?;
    }
    None
}

/// Random orthonormal matrix via Gram-Schmidt on normals.
fn random_start(m: usize, seed: u64, k: u64) -> Matrix {
    let key = seed::derive(seed, k);
    let mut x = Matrix::from_fn(m, m, |i, j| {
        crate::simulate::std_normal(key, 0, (i * m + j) as u64)
    });
    for j in 0..m {
        for q in 0..j {
            let proj = x.column(q).dot(&x.column(j));
            let cq = x.column(q).into_owned();
            x.column_mut(j).axpy(-proj, &cq, 1.0);
        }
        let n = x.column(j).norm();
        x.column_mut(j).scale_mut(1.0 / n);
    }
    x
}

/// Direct oblimin by oblique gradient projection.
///
/// The identity start is tried first, then `restarts` random orthonormal
/// starts; the lowest criterion wins. Columns are then sign-aligned so the
/// largest-magnitude loading is positive and ordered by descending sum of
/// squared pattern loadings.
pub fn rotate_oblimin(loadings: &Matrix, opts: &RotationOptions) -> Result<Rotation> {
    let m = loadings.ncols();
    if m <= 1 {
        return Ok(Rotation {
            pattern: loadings.clone(),
            phi: Matrix::identity(m, m),
            t: Matrix::identity(m, m),
            criterion: 0.0,
            iterations: 0,
        });
    }
    let mut best: Option<Rotation> = None;
    for k in 0..=opts.restarts {
        let t0 = if k == 0 { Matrix::identity(m, m) } else { random_start(m, opts.seed, k as u64) };
        if let Some(r) = gpf_oblique(loadings, t0, opts) {
            if best.as_ref().is_none_or(|b| r.criterion < b.criterion - 1e-12) {
                best = Some(r);
            }
        }
    }
    let mut r = best.ok_or_else(|| Error::NotConverged(format!("oblimin failed from all {} starts", opts.restarts + 1)))?;
    align_columns(&mut r);
    Ok(r)
}

fn align_columns(r: &mut Rotation) {
    let (p, m) = (r.pattern.nrows(), r.pattern.ncols());
    for j in 0..m {
        let col = r.pattern.column(j);
        let big = (0..p).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap_or(0);
        if col[big] < 0.0 {
            r.pattern.column_mut(j).neg_mut();
            r.t.column_mut(j).neg_mut();
        }
    }
    let ss: Vec<f64> = (0..m).map(|j| r.pattern.column(j).norm_squared()).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| ss[b].total_cmp(&ss[a]));
    r.pattern = Matrix::from_fn(p, m, |i, j| r.pattern[(i, order[j])]);
    r.t = Matrix::from_fn(m, m, |i, j| r.t[(i, order[j])]);
    r.phi = r.t.transpose() * &r.t;
}

pub fn communalities(pattern: &Matrix, phi: &Matrix) -> Vec<f64> {
    let lp = pattern * phi;
    (0..pattern.nrows()).map(|i| lp.row(i).dot(&pattern.row(i))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfaFit {
    pub f_min: f64,
    pub chi_square: f64,
    pub df: f64,
    pub null_chi_square: f64,
    pub null_df: f64,
    pub tli: f64,
    pub rmsea: f64,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfaSolution {
    pub item_ids: Vec<String>,
    pub pattern: Matrix,
    pub phi: Matrix,
    pub communalities: Vec<f64>,
    pub uniquenesses: Vec<f64>,
    pub heywood: Vec<String>,
    pub fit: Option<EfaFit>,
}

impl EfaSolution {
    pub fn n_factors(&self) -> usize {
        self.pattern.ncols()
    }

    pub fn implied(&self) -> Matrix {
        let mut s = &self.pattern * &self.phi * self.pattern.transpose();
        for i in 0..s.nrows() {
            s[(i, i)] = 1.0;
        }
        s
    }

    pub fn write_pattern_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["item".to_string()];
        header.extend((1..=self.n_factors()).map(|k| format!("F{k}")));
        header.push("h2".into());
        wr.write_record(&header)?;
        for (i, id) in self.item_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.pattern.row(i).iter().map(|v| format!("{v:.6}")));
            rec.push(format!("{:.6}", self.communalities[i]));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Minres extraction, oblimin rotation and fit indices in one call.
pub fn run_efa(rho: &Matrix, item_ids: &[String], m: usize, n_obs: usize, opts: &RotationOptions) -> Result<EfaSolution> {
    let ext = fit_minres(rho, m)?;
    let rot = rotate_oblimin(&ext.loadings, opts)?;
    let h2 = communalities(&rot.pattern, &rot.phi);
    let mut sol = EfaSolution {
        item_ids: item_ids.to_vec(),
        uniquenesses: h2.iter().map(|h| (1.0 - h).max(HEYWOOD_FLOOR)).collect(),
        communalities: h2,
        heywood: ext.heywood.iter().map(|&i| item_ids[i].clone()).collect(),
        pattern: rot.pattern,
        phi: rot.phi,
        fit: None,
    };
    sol.fit = efa_fit_indices(rho, &sol, n_obs).ok();
    Ok(sol)
}

/// ML discrepancy between sample `s` and model `sigma`.
pub fn ml_discrepancy(s: &Matrix, sigma: &Matrix) -> Result<f64> {
    let p = s.nrows() as f64;
    let chol_sigma = sigma.clone().cholesky().ok_or_else(|| Error::Singular("model-implied matrix".into()))?;
    let chol_s = s.clone().cholesky().ok_or_else(|| Error::Singular("sample matrix".into()))?;
    let ld = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let tr = (chol_sigma.inverse() * s).trace();
    Ok((ld(&chol_sigma) - ld(&chol_s) + tr - p).max(0.0))
}

pub fn efa_df(p: usize, m: usize) -> i64 {
    let (p, m) = (p as i64, m as i64);
    ((p - m).pow(2) - p - m) / 2
}

/// Chi-square from the ML discrepancy at the fitted solution.
pub fn efa_fit_indices(rho: &Matrix, solution: &EfaSolution, n_obs: usize) -> Result<EfaFit> {
    let p = rho.nrows();
    let df = efa_df(p, solution.n_factors());
    if df <= 0 {
        return Err(Error::NonPositiveDf { df });
    }
    let f = ml_discrepancy(rho, &solution.implied())?;
    let f0 = ml_discrepancy(rho, &Matrix::identity(p, p))?;
    let nm1 = (n_obs - 1) as f64;
    let (t, t0) = (nm1 * f, nm1 * f0);
    let (df, df0) = (df as f64, (p * (p - 1) / 2) as f64);
    Ok(EfaFit {
        f_min: f,
        chi_square: t,
        df,
        null_chi_square: t0,
        null_df: df0,
        tli: tli(t, df, t0, df0),
        rmsea: rmsea(t, df, n_obs),
        bic: t - df * (n_obs as f64).ln(),
    })
}

pub fn tli(t: f64, df: f64, t0: f64, df0: f64) -> f64 {
    (t0 / df0 - t / df) / (t0 / df0 - 1.0)
}

pub fn rmsea(t: f64, df: f64, n_obs: usize) -> f64 {
    ((t - df).max(0.0) / (df * (n_obs - 1) as f64)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetentionRule {
    pub load_min: f64,
    pub cross_max: f64,
    pub comm_min: f64,
}

impl Default for RetentionRule {
    fn default() -> Self {
        Self { load_min: 0.40, cross_max: 0.32, comm_min: 0.40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    LowPrimary,
    CrossLoading,
    LowCommunality,
    ConceptualOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionEntry {
    pub item: String,
    pub primary_factor: usize,
    pub primary_loading: f64,
    pub max_cross_loading: f64,
    pub communality: f64,
    pub kept: bool,
    /// First failed criterion; `conceptual_override` when a failing item is
    /// kept because it was listed as an override.
    pub reason: Option<DropReason>,
    pub failed: Option<DropReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionReport {
    pub kept: Vec<String>,
    pub dropped: Vec<(String, DropReason)>,
    pub entries: Vec<RetentionEntry>,
    pub rule: RetentionRule,
}

pub fn retention_filter(solution: &EfaSolution, rule: &RetentionRule, overrides: &[String]) -> Result<RetentionReport> {
    for (name, v) in [("load_min", rule.load_min), ("cross_max", rule.cross_max), ("comm_min", rule.comm_min)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    let mut report = RetentionReport { kept: vec![], dropped: vec![], entries: vec![], rule: *rule };
    for (i, id) in solution.item_ids.iter().enumerate() {
        let row = solution.pattern.row(i);
        let primary = (0..row.len()).max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs())).unwrap_or(0);
        let pl = row[primary].abs();
        let cross = (0..row.len()).filter(|&k| k != primary).fold(0.0f64, |a, k| a.max(row[k].abs()));
        let h2 = solution.communalities[i];
        let failed = if pl <= rule.load_min {
            Some(DropReason::LowPrimary)
        } else if cross >= rule.cross_max {
            Some(DropReason::CrossLoading)
        } else if h2 < rule.comm_min {
            Some(DropReason::LowCommunality)
        } else {
            None
        };
        let overridden = failed.is_some() && overrides.iter().any(|o| o == id);
        let kept = failed.is_none() || overridden;
        let reason = if overridden { Some(DropReason::ConceptualOverride) } else { failed };
        if kept {
            report.kept.push(id.clone());
        } else {
            report.dropped.push((id.clone(), failed.expect("dropped items fail a criterion")));
        }
        report.entries.push(RetentionEntry {
            item: id.clone(),
            primary_factor: primary + 1,
            primary_loading: row[primary],
            max_cross_loading: cross,
            communality: h2,
            kept,
            reason,
            failed,
        });
    }
    Ok(report)
}

/// Serializable summary of an EFA run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfaReport {
    pub n_factors: usize,
    pub parallel_analysis: Option<ParallelAnalysisReport>,
    pub scree: Vec<ScreeRow>,
    pub item_ids: Vec<String>,
    pub pattern: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub communalities: Vec<f64>,
    pub heywood: Vec<String>,
    pub fit: Option<EfaFit>,
    pub retention: Option<RetentionReport>,
}

impl EfaReport {
    pub fn new(
        solution: &EfaSolution,
        pa: Option<ParallelAnalysisReport>,
        scree: Vec<ScreeRow>,
        retention: Option<RetentionReport>,
    ) -> Self {
        Self {
            n_factors: solution.n_factors(),
            parallel_analysis: pa,
            scree,
            item_ids: solution.item_ids.clone(),
            pattern: linalg::to_rows(&solution.pattern),
            phi: linalg::to_rows(&solution.phi),
            communalities: solution.communalities.clone(),
            heywood: solution.heywood.clone(),
            fit: solution.fit.clone(),
            retention,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_factor(p: usize, l: f64) -> Matrix {
        Matrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { l * l })
    }

    #[test]
    fn scree_of_identity_and_compound_symmetry() {
        let t = scree_table(&Matrix::identity(4, 4));
        assert!(t.iter().all(|r| (r.eigenvalue - 1.0).abs() < 1e-12));
        assert!(t.iter().filter_map(|r| r.difference).all(|d| d.abs() < 1e-12));
        let t = scree_table(&one_factor(6, 0.7));
        assert!((t[0].eigenvalue - 3.45).abs() < 1e-12);
        assert!(t[1..].iter().all(|r| (r.eigenvalue - 0.51).abs() < 1e-12));
    }

    #[test]
    fn minres_recovers_population_loadings() {
        let f = fit_minres(&one_factor(6, 0.7), 1).unwrap();
        for i in 0..6 {
            assert!((f.loadings[(i, 0)] - 0.7).abs() < 1e-4, "{}", f.loadings[(i, 0)]);
        }
        assert!(f.trace.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let z = fit_minres(&Matrix::identity(5, 5), 1).unwrap();
        assert!(z.loadings.iter().all(|l| l.abs() < 1e-3));
    }

    #[test]
    fn oblimin_keeps_simple_structure() {
        let mut a = Matrix::zeros(6, 2);
        for i in 0..3 {
            a[(i, 0)] = 0.7;
            a[(i + 3, 1)] = 0.6;
        }
        let r = rotate_oblimin(&a, &RotationOptions::default()).unwrap();
        assert!((&r.pattern - &a).abs().max() < 1e-6);
        assert!((r.phi[(0, 1)]).abs() < 1e-6);
        let one = rotate_oblimin(&a.columns(0, 1).into_owned(), &RotationOptions::default()).unwrap();
        assert_eq!(one.phi, Matrix::identity(1, 1));
    }

    #[test]
    fn rotation_preserves_common_part() {
        let a = crate::linalg::from_rows(&[
            vec![0.6, 0.3],
            vec![0.7, 0.2],
            vec![0.5, 0.4],
            vec![0.3, -0.5],
            vec![0.2, -0.6],
            vec![0.4, -0.4],
        ]);
        let r = rotate_oblimin(&a, &RotationOptions::default()).unwrap();
        let back = &r.pattern * &r.phi * r.pattern.transpose();
        assert!((back - &a * a.transpose()).abs().max() < 1e-8);
        for j in 0..2 {
            assert!((r.phi[(j, j)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn communality_examples() {
        let phi = crate::linalg::from_rows(&[vec![1.0, 0.3], vec![0.3, 1.0]]);
        let pat = crate::linalg::from_rows(&[vec![0.6, 0.0], vec![0.5, 0.5], vec![0.0, 0.0]]);
        let h = communalities(&pat, &phi);
        assert!((h[0] - 0.36).abs() < 1e-12);
        assert!((h[1] - 0.65).abs() < 1e-12);
        assert_eq!(h[2], 0.0);
    }

    fn solution(rows: &[Vec<f64>], h2: &[f64]) -> EfaSolution {
        let pattern = crate::linalg::from_rows(rows);
        let m = pattern.ncols();
        EfaSolution {
            item_ids: (1..=rows.len()).map(|i| format!("item{i}")).collect(),
            pattern,
            phi: Matrix::identity(m, m),
            communalities: h2.to_vec(),
            uniquenesses: h2.iter().map(|h| 1.0 - h).collect(),
            heywood: vec![],
            fit: None,
        }
    }

    #[test]
    fn retention_examples() {
        let s = solution(&[vec![0.55, 0.10], vec![0.45, 0.40], vec![0.30, 0.10]], &[0.45, 0.5, 0.2]);
        let r = retention_filter(&s, &RetentionRule::default(), &["item3".to_string()]).unwrap();
        assert_eq!(r.kept, vec!["item1", "item3"]);
        assert_eq!(r.dropped, vec![("item2".to_string(), DropReason::CrossLoading)]);
        assert_eq!(r.entries[2].reason, Some(DropReason::ConceptualOverride));
        assert_eq!(r.entries[2].failed, Some(DropReason::LowPrimary));
    }

    #[test]
    fn perfect_fit_indices() {
        let mut a = Matrix::zeros(8, 2);
        for i in 0..4 {
            a[(i, 0)] = 0.7;
            a[(i + 4, 1)] = 0.6;
        }
        let mut r = &a * a.transpose();
        for i in 0..8 {
            r[(i, i)] = 1.0;
        }
        let ids: Vec<String> = (0..8).map(|i| format!("x{i}")).collect();
        let sol = run_efa(&r, &ids, 2, 500, &RotationOptions::default()).unwrap();
        let fit = sol.fit.unwrap();
        assert!(fit.chi_square < 1e-6);
        assert_eq!(fit.rmsea, 0.0);
        assert!(fit.tli >= 1.0);
        assert!(matches!(efa_fit_indices(&r, &solution(&vec![vec![0.5; 7]; 8], &[0.5; 8]), 100), Err(Error::NonPositiveDf { .. })));
    }
}

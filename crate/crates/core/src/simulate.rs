//! Synthetic bifactor data with known truth.
//!
//! Variates are counter-based: the standard normal for latent source `key`
//! in row `r` is `quantile(unit(seed, key_hash(key), r))`, with keys `g`,
//! `s:<group>` and `e:<item>`. Output therefore does not depend on how rows
//! are blocked, and permuting items permutes the responses.

use serde::{Deserialize, Serialize};

use crate::codebook::{Cell, Codebook, RawTable, ResponseMatrix};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::normal;
use crate::polycorr::ThresholdSet;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrueModel {
    pub item_ids: Vec<String>,
    pub groups: Vec<String>,
    pub lambda_g: Vec<f64>,
    /// p x G group loadings; mostly zero.
    pub lambda_s: Matrix,
    /// Primary group of each item.
    pub group_of: Vec<Option<usize>>,
    /// Cut points over codes 1..=n_levels.
    pub thresholds: Vec<ThresholdSet>,
}

impl TrueModel {
    pub fn new(
        item_ids: Vec<String>,
        groups: Vec<String>,
        lambda_g: Vec<f64>,
        lambda_s: Matrix,
        group_of: Vec<Option<usize>>,
        thresholds: Vec<ThresholdSet>,
    ) -> Result<Self> {
        let p = item_ids.len();
        if lambda_g.len() != p || lambda_s.nrows() != p || group_of.len() != p || thresholds.len() != p {
            return Err(Error::Dimension("true model fields disagree on item count".into()));
        }
        if lambda_s.ncols() != groups.len() {
            return Err(Error::Dimension("group loading columns do not match group labels".into()));
        }
        let m = Self { item_ids, groups, lambda_g, lambda_s, group_of, thresholds };
        for (i, u) in m.uniquenesses().iter().enumerate() {
            if *u < 0.0 {
                return Err(Error::InvalidArgument(format!("item `{}` has negative uniqueness", m.item_ids[i])));
            }
        }
        for (i, t) in m.thresholds.iter().enumerate() {
            if t.taus.windows(2).any(|w| w[0] >= w[1]) || t.taus.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("thresholds of `{}` not strictly increasing", m.item_ids[i])));
            }
        }
        Ok(m)
    }

    pub fn p(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_levels(&self) -> Vec<u16> {
        self.thresholds.iter().map(|t| t.taus.len() as u16 + 1).collect()
    }

    pub fn uniquenesses(&self) -> Vec<f64> {
        (0..self.p())
            .map(|i| 1.0 - self.lambda_g[i].powi(2) - self.lambda_s.row(i).iter().map(|l| l * l).sum::<f64>())
            .collect()
    }

    /// Same model with items in the order given by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let ls = Matrix::from_fn(perm.len(), self.groups.len(), |i, k| self.lambda_s[(perm[i], k)]);
        Self {
            item_ids: perm.iter().map(|&i| self.item_ids[i].clone()).collect(),
            groups: self.groups.clone(),
            lambda_g: perm.iter().map(|&i| self.lambda_g[i]).collect(),
            lambda_s: ls,
            group_of: perm.iter().map(|&i| self.group_of[i]).collect(),
            thresholds: perm.iter().map(|&i| self.thresholds[i].clone()).collect(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: TrueModelFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut groups: Vec<String> = file.groups.clone();
        let gidx = |name: &str, groups: &mut Vec<String>| match groups.iter().position(|g| g == name) {
            Some(k) => k,
            None => {
                groups.push(name.to_string());
                groups.len() - 1
            }
        };
        let primary: Vec<Option<usize>> =
            file.item.iter().map(|it| it.group.as_deref().map(|g| gidx(g, &mut groups))).collect();
        let mut entries = Vec::new();
        for (it, primary) in file.item.iter().zip(primary) {
            let extras: Vec<(usize, f64)> = it.extra.iter().map(|e| (gidx(&e.group, &mut groups), e.loading)).collect();
            entries.push((primary, extras));
        }
        let p = file.item.len();
        let mut ls = Matrix::zeros(p, groups.len());
        for (i, (it, (primary, extras))) in file.item.iter().zip(&entries).enumerate() {
            if let Some(k) = primary {
                ls[(i, *k)] = it.lambda_s;
            }
            for &(k, l) in extras {
                ls[(i, k)] = l;
            }
        }
        Self::new(
            file.item.iter().map(|i| i.id.clone()).collect(),
            groups,
            file.item.iter().map(|i| i.lambda_g).collect(),
            ls,
            entries.iter().map(|e| e.0).collect(),
            file.item.iter().map(|i| codes_thresholds(i.taus.clone())).collect(),
        )
    }

    pub fn to_toml(&self) -> String {
        let item = (0..self.p())
            .map(|i| TrueItem {
                id: self.item_ids[i].clone(),
                group: self.group_of[i].map(|k| self.groups[k].clone()),
                lambda_g: self.lambda_g[i],
                lambda_s: self.group_of[i].map_or(0.0, |k| self.lambda_s[(i, k)]),
                taus: self.thresholds[i].taus.clone(),
                extra: (0..self.groups.len())
                    .filter(|&k| Some(k) != self.group_of[i] && self.lambda_s[(i, k)] != 0.0)
                    .map(|k| ExtraLoading { group: self.groups[k].clone(), loading: self.lambda_s[(i, k)] })
                    .collect(),
            })
            .collect();
        toml::to_string(&TrueModelFile { groups: self.groups.clone(), item }).expect("true model serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrueModelFile {
    /// Optional explicit group order; otherwise order of first appearance.
    #[serde(default)]
    groups: Vec<String>,
    item: Vec<TrueItem>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrueItem {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group: Option<String>,
    lambda_g: f64,
    #[serde(default)]
    lambda_s: f64,
    taus: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    extra: Vec<ExtraLoading>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExtraLoading {
    group: String,
    loading: f64,
}

/// Thresholds over the full code range 1..=taus.len()+1.
pub fn codes_thresholds(taus: Vec<f64>) -> ThresholdSet {
    ThresholdSet { codes: (1..=taus.len() as u16 + 1).collect(), taus }
}

/// Cut points reproducing the given cumulative category proportions.
pub fn thresholds_from_cumulative(cum: &[f64]) -> ThresholdSet {
    codes_thresholds(cum.iter().map(|&c| normal::quantile(c)).collect())
}

/// Equal-probability cut points for `n_levels` categories.
pub fn equal_thresholds(n_levels: u16) -> ThresholdSet {
    let k = f64::from(n_levels);
    thresholds_from_cumulative(&(1..n_levels).map(|i| f64::from(i) / k).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub responses: ResponseMatrix,
    pub true_g: Vec<f64>,
    /// n x G.
    pub true_group_scores: Matrix,
    pub seed: u64,
}

impl SimOutput {
    /// row_id, g, then one column per group.
    pub fn write_truth_csv<W: std::io::Write>(&self, groups: &[String], w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["row_id".to_string(), "g".to_string()];
        header.extend(groups.iter().cloned());
        wr.write_record(&header)?;
        for r in 0..self.true_g.len() {
            let mut rec = vec![self.responses.row_ids[r].clone(), format!("{}", self.true_g[r])];
            rec.extend((0..groups.len()).map(|k| format!("{}", self.true_group_scores[(r, k)])));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[inline]
pub(crate) fn std_normal(seed: u64, key: u64, row: u64) -> f64 {
    normal::quantile(seed::unit(seed, key, row))
}

fn discretize(x: f64, t: &ThresholdSet) -> u16 {
    t.codes[t.taus.partition_point(|&tau| tau < x)]
}

pub fn row_id(r: usize) -> String {
    format!("r{:05}", r + 1)
}

pub fn simulate_bifactor(model: &TrueModel, n: usize, seed: u64) -> SimOutput {
    let p = model.p();
    let g_n = model.groups.len();
    let kg = seed::key_hash("g");
    let ks: Vec<u64> = model.groups.iter().map(|g| seed::key_hash(&format!("s:{g}"))).collect();
    let ke: Vec<u64> = model.item_ids.iter().map(|i| seed::key_hash(&format!("e:{i}"))).collect();
    let sd_e: Vec<f64> = model.uniquenesses().iter().map(|u| u.max(0.0).sqrt()).collect();
    let mut true_g = Vec::with_capacity(n);
    let mut gs = Matrix::zeros(n, g_n);
    let mut columns = vec![Vec::with_capacity(n); p];
    for r in 0..n {
        let row = r as u64;
        let g = std_normal(seed, kg, row);
        true_g.push(g);
        for k in 0..g_n {
            gs[(r, k)] = std_normal(seed, ks[k], row);
        }
        for i in 0..p {
            let mut x = model.lambda_g[i] * g + sd_e[i] * std_normal(seed, ke[i], row);
            for k in 0..g_n {
                let l = model.lambda_s[(i, k)];
                if l != 0.0 {
                    x += l * gs[(r, k)];
                }
            }
            columns[i].push(Some(discretize(x, &model.thresholds[i])));
        }
    }
    let responses = ResponseMatrix {
        item_ids: model.item_ids.clone(),
        n_levels: model.n_levels(),
        columns,
        row_ids: (0..n).map(row_id).collect(),
        cluster_ids: vec![None; n],
    };
    SimOutput { responses, true_g, true_group_scores: gs, seed }
}

/// Blank each cell independently with probability `frac`.
pub fn mask_mcar(matrix: &ResponseMatrix, frac: f64, seed: u64) -> ResponseMatrix {
    let mut out = matrix.clone();
    for (j, col) in out.columns.iter_mut().enumerate() {
        let key = seed::key_hash(&format!("m:{}", matrix.item_ids[j]));
        for (r, cell) in col.iter_mut().enumerate() {
            if seed::unit(seed, key, r as u64) < frac {
                *cell = None;
            }
        }
    }
    out
}

pub fn population_polychoric(model: &TrueModel) -> Matrix {
    let p = model.p();
    Matrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            model.lambda_g[i] * model.lambda_g[j] + model.lambda_s.row(i).dot(&model.lambda_s.row(j))
        }
    })
}

/// Omega hierarchical of the unit-weighted total, 1'Sigma1 in the denominator.
pub fn population_omega(model: &TrueModel) -> f64 {
    let sigma = population_polychoric(model);
    let total: f64 = sigma.iter().sum();
    let g: f64 = model.lambda_g.iter().sum();
    if total <= 0.0 {
        0.0
    } else {
        g * g / total
    }
}

/// Tucker congruence per truth column after greedy matching on |phi|.
pub fn congruence(est: &Matrix, truth: &Matrix) -> Result<Vec<f64>> {
    if est.nrows() != truth.nrows() || est.ncols() < truth.ncols() {
        return Err(Error::Dimension(format!(
            "estimate {}x{} cannot be matched to truth {}x{}",
            est.nrows(),
            est.ncols(),
            truth.nrows(),
            truth.ncols()
        )));
    }
    let norm = |m: &Matrix, j: usize| m.column(j).norm();
    for j in 0..est.ncols() {
        if norm(est, j) == 0.0 {
            return Err(Error::InvalidArgument(format!("estimated column {j} has zero norm")));
        }
    }
    for j in 0..truth.ncols() {
        if norm(truth, j) == 0.0 {
            return Err(Error::InvalidArgument(format!("true column {j} has zero norm")));
        }
    }
    let mut phi = Matrix::zeros(est.ncols(), truth.ncols());
    for a in 0..est.ncols() {
        for b in 0..truth.ncols() {
            phi[(a, b)] = est.column(a).dot(&truth.column(b)) / (norm(est, a) * norm(truth, b));
        }
    }
    let mut out = vec![0.0; truth.ncols()];
    let mut used_a = vec![false; est.ncols()];
    let mut used_b = vec![false; truth.ncols()];
    for _ in 0..truth.ncols() {
        let mut best = (0, 0, -1.0);
        for a in (0..est.ncols()).filter(|&a| !used_a[a]) {
            for b in (0..truth.ncols()).filter(|&b| !used_b[b]) {
                if phi[(a, b)].abs() > best.2 {
                    best = (a, b, phi[(a, b)].abs());
                }
            }
        }
        used_a[best.0] = true;
        used_b[best.1] = true;
        out[best.1] = best.2;
    }
    Ok(out)
}

pub const CAREBI_GROUPS: [&str; 6] = ["overload", "difficulty", "mood", "health", "social", "relationship"];

/// The 18-item CareBI-shaped fixture.
///
/// Each domain has one item leaning on the general factor (0.75 / 0.35) and
/// two leaning on their domain (0.35 / 0.72); the third difficulty item also
/// loads 0.25 on the relationship factor. Population omega_h is 0.742; see
/// `examples/derive_fixture.rs`.
pub fn carebi_fixture() -> TrueModel {
    let cb = Codebook::canonical();
    let ids = cb.ids();
    let levels: Vec<u16> = cb.items.iter().map(|i| i.n_levels).collect();
    let p = ids.len();
    let mut lg = vec![0.0; p];
    let mut ls = Matrix::zeros(p, CAREBI_GROUPS.len());
    let mut group_of = vec![None; p];
    for i in 0..p {
        let k = i / 3;
        let anchor = i % 3 == 0;
        lg[i] = if anchor { FIXTURE_ANCHOR.0 } else { FIXTURE_OTHER.0 };
        ls[(i, k)] = if anchor { FIXTURE_ANCHOR.1 } else { FIXTURE_OTHER.1 };
        group_of[i] = Some(k);
    }
    ls[(5, 5)] = FIXTURE_EXTRA;
    let thresholds = levels.iter().map(|&l| thresholds_from_cumulative(fixture_cumulative(l))).collect();
    TrueModel::new(ids, CAREBI_GROUPS.iter().map(|s| s.to_string()).collect(), lg, ls, group_of, thresholds)
        .expect("fixture is valid")
}

pub const FIXTURE_ANCHOR: (f64, f64) = (0.75, 0.35);
pub const FIXTURE_OTHER: (f64, f64) = (0.35, 0.72);
pub const FIXTURE_EXTRA: f64 = 0.25;

/// Skewed toward low burden, with composites half "No".
pub fn fixture_cumulative(n_levels: u16) -> &'static [f64] {
    match n_levels {
        2 => &[0.5],
        3 => &[0.4, 0.75],
        4 => &[0.3, 0.6, 0.85],
        5 => &[0.2, 0.45, 0.7, 0.88],
        6 => &[0.5, 0.65, 0.78, 0.88, 0.95],
        _ => &[],
    }
}

/// Correlated six-factor model written as its bifactor equivalent.
///
/// First-order factor k has loading `lambda` on its three items and loads
/// `gamma` on a second-order factor, so the first-order factors correlate
/// `gamma^2`. Returns the model and the p x 6 first-order pattern.
pub fn six_factor_fixture(lambda: f64, gamma: f64) -> (TrueModel, Matrix) {
    let cb = Codebook::canonical();
    let ids = cb.ids();
    let p = ids.len();
    let mut pattern = Matrix::zeros(p, 6);
    let mut ls = Matrix::zeros(p, 6);
    for i in 0..p {
        pattern[(i, i / 3)] = lambda;
        ls[(i, i / 3)] = lambda * (1.0 - gamma * gamma).sqrt();
    }
    let thresholds = cb.items.iter().map(|it| thresholds_from_cumulative(fixture_cumulative(it.n_levels))).collect();
    let model = TrueModel::new(
        ids,
        CAREBI_GROUPS.iter().map(|s| s.to_string()).collect(),
        vec![lambda * gamma; p],
        ls,
        (0..p).map(|i| Some(i / 3)).collect(),
        thresholds,
    )
    .expect("six-factor fixture is valid");
    (model, pattern)
}

/// Orthogonal simple structure with no general factor.
pub fn simple_structure(n_factors: usize, items_per: usize, loading: f64, n_levels: u16) -> TrueModel {
    let p = n_factors * items_per;
    let mut ls = Matrix::zeros(p, n_factors);
    for i in 0..p {
        ls[(i, i / items_per)] = loading;
    }
    TrueModel::new(
        (0..p).map(|i| format!("x{:02}", i + 1)).collect(),
        (0..n_factors).map(|k| format!("f{}", k + 1)).collect(),
        vec![0.0; p],
        ls,
        (0..p).map(|i| Some(i / items_per)).collect(),
        vec![equal_thresholds(n_levels); p],
    )
    .expect("simple structure is valid")
}

/// Independent items.
pub fn noise_model(p: usize, n_levels: u16) -> TrueModel {
    TrueModel::new(
        (0..p).map(|i| format!("x{:02}", i + 1)).collect(),
        vec![],
        vec![0.0; p],
        Matrix::zeros(p, 0),
        vec![None; p],
        vec![equal_thresholds(n_levels); p],
    )
    .expect("noise model is valid")
}

/// Outcome columns appended to a synthetic cohort.
pub const COHORT_OUTCOMES: [&str; 3] = ["sleep_interrupt", "helper_hours", "care_cost"];

#[derive(Debug, Clone, PartialEq)]
pub struct CohortOptions {
    pub n: usize,
    pub seed: u64,
    /// Per-cell MCAR missingness in the raw extract.
    pub missing_frac: f64,
    /// Caregivers per care recipient are drawn uniformly from 1..=max.
    pub max_per_cluster: usize,
    /// SD of the shared care-recipient effect on the outcome scale.
    pub cluster_sd: f64,
}

impl Default for CohortOptions {
    fn default() -> Self {
        Self { n: 2000, seed: 2022, missing_frac: 0.02, max_per_cluster: 3, cluster_sd: 0.5 }
    }
}

/// Raw survey-style extract: the fixture's responses un-recoded through the
/// codebook (gates, follow-ups, original directions), with row ids, cluster
/// ids and three outcomes driven by the true general factor.
pub fn synthetic_cohort(model: &TrueModel, codebook: &Codebook, opts: &CohortOptions) -> Result<(RawTable, SimOutput)> {
    let sim = simulate_bifactor(model, opts.n, opts.seed);
    let resp = &sim.responses;
    let mut cols: Vec<(String, Vec<Option<i64>>)> = Vec::new();
    for item in &codebook.items {
        let j = resp
            .item_ids
            .iter()
            .position(|id| *id == item.id)
            .ok_or_else(|| Error::MissingColumn(item.id.clone()))?;
        let mut v: Vec<i64> = resp.columns[j].iter().map(|c| i64::from(c.expect("simulated"))).collect();
        if item.reverse {
            v.iter_mut().for_each(|x| *x = i64::from(item.n_levels) + 1 - *x);
        }
        match &item.composite {
            Some(rule) => {
                let l = i64::from(item.n_levels) - 1;
                let gate: Vec<Option<i64>> =
                    v.iter().map(|&x| Some(if x == i64::from(rule.gate_negative_code) { rule.gate_no } else { rule.gate_yes })).collect();
                let level: Vec<Option<i64>> = v
                    .iter()
                    .map(|&x| {
                        if x == i64::from(rule.gate_negative_code) {
                            None
                        } else if rule.reverse_level {
                            Some(l + 2 - x)
                        } else {
                            Some(x - 1)
                        }
                    })
                    .collect();
                cols.push((rule.gate_id.clone(), gate));
                cols.push((rule.level_id.clone(), level));
            }
            None => cols.push((item.source_column().to_string(), v.into_iter().map(Some).collect())),
        }
    }
    for (name, col) in cols.iter_mut() {
        let key = seed::key_hash(&format!("m:{name}"));
        for (r, cell) in col.iter_mut().enumerate() {
            if cell.is_some() && seed::unit(opts.seed, key, r as u64) < opts.missing_frac {
                *cell = None;
            }
        }
    }
    let mut raw = RawTable::from_int_columns(cols);

    let clusters = cluster_assignment(opts.n, opts.max_per_cluster.max(1), opts.seed);
    let n_clusters = clusters.last().map_or(0, |c| c + 1);
    let kc = seed::key_hash("u:cluster");
    let u: Vec<f64> = (0..n_clusters).map(|c| opts.cluster_sd * std_normal(opts.seed, kc, c as u64)).collect();
    let ks = seed::key_hash("y:sleep");
    let kh = seed::key_hash("y:hours");
    let kcost = seed::key_hash("y:cost");
    let mut sleep = Vec::with_capacity(opts.n);
    let mut hours = Vec::with_capacity(opts.n);
    let mut cost = Vec::with_capacity(opts.n);
    for r in 0..opts.n {
        let g = sim.true_g[r];
        let uc = u[clusters[r]];
        let eta = -1.0 + 1.0 * g + uc;
        let pr = 1.0 / (1.0 + (-eta).exp());
        sleep.push(u8::from(seed::unit(opts.seed, ks, r as u64) < pr).to_string());
        let mu = (1.5 + 0.3 * g + 0.5 * uc).exp();
        hours.push(poisson_quantile(mu, seed::unit(opts.seed, kh, r as u64)).to_string());
        let mean = (6.0 + 0.2 * g + 0.3 * uc).exp();
        cost.push(format!("{:.2}", gamma_quantile(2.0, mean, seed::unit(opts.seed, kcost, r as u64))));
    }
    raw.push_column("row_id", sim.responses.row_ids.clone());
    raw.push_column("cluster_id", clusters.iter().map(|c| format!("cr{:05}", c + 1)).collect());
    for (name, col) in COHORT_OUTCOMES.iter().zip([sleep, hours, cost]) {
        raw.push_column(*name, col);
    }
    let mut responses = sim.responses.clone();
    responses.cluster_ids = clusters.iter().map(|c| Some(format!("cr{:05}", c + 1))).collect();
    Ok((raw, SimOutput { responses, ..sim }))
}

/// Consecutive rows share a care recipient; block sizes uniform on 1..=max.
pub fn cluster_assignment(n: usize, max_per_cluster: usize, seed: u64) -> Vec<usize> {
    let key = seed::key_hash("c:size");
    let mut out = Vec::with_capacity(n);
    let mut c = 0usize;
    while out.len() < n {
        let size = 1 + (seed::unit(seed, key, c as u64) * max_per_cluster as f64) as usize;
        for _ in 0..size.min(n - out.len()) {
            out.push(c);
        }
        c += 1;
    }
    out
}

pub(crate) fn poisson_quantile(mu: f64, u: f64) -> u64 {
    let mut k = 0u64;
    let mut pk = (-mu).exp();
    let mut cum = pk;
    while cum < u && k < 10_000 {
        k += 1;
        pk *= mu / k as f64;
        cum += pk;
    }
    k
}

pub(crate) fn gamma_quantile(shape: f64, mean: f64, u: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Gamma};
    Gamma::new(shape, shape / mean).expect("valid gamma").inverse_cdf(u)
}

/// Response column looked up by id.
pub fn column<'a>(m: &'a ResponseMatrix, id: &str) -> Option<&'a [Cell]> {
    m.item_ids.iter().position(|i| i == id).map(|j| m.columns[j].as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{apply_codebook, ApplyOptions};

    #[test]
    fn determinism_and_marginal() {
        let m = simple_structure(1, 2, 0.5, 2);
        let a = simulate_bifactor(&m, 300, 9);
        let b = simulate_bifactor(&m, 300, 9);
        assert_eq!(a, b);
        let big = simulate_bifactor(&m, 50_000, 3);
        let up = big.responses.columns[0].iter().filter(|c| **c == Some(2)).count() as f64 / 50_000.0;
        assert!((up - 0.5).abs() < 0.01, "{up}");
    }

    #[test]
    fn population_matrix_product_rule() {
        let t = vec![codes_thresholds(vec![0.0]); 3];
        let mut ls = Matrix::zeros(3, 2);
        ls[(0, 0)] = 0.5;
        ls[(1, 0)] = 0.5;
        ls[(2, 1)] = 0.3;
        let m = TrueModel::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["s1".into(), "s2".into()],
            vec![0.7; 3],
            ls,
            vec![Some(0), Some(0), Some(1)],
            t,
        )
        .unwrap();
        let s = population_polychoric(&m);
        assert!((s[(0, 1)] - 0.74).abs() < 1e-12);
        assert!((s[(0, 2)] - 0.49).abs() < 1e-12);
        assert_eq!(s[(2, 2)], 1.0);
    }

    #[test]
    fn omega_of_four_general_items() {
        let m = TrueModel::new(
            (0..4).map(|i| format!("x{i}")).collect(),
            vec![],
            vec![0.7; 4],
            Matrix::zeros(4, 0),
            vec![None; 4],
            vec![codes_thresholds(vec![0.0]); 4],
        )
        .unwrap();
        assert!((population_omega(&m) - 0.793_522_267_206_477_7).abs() < 1e-12);
        assert_eq!(population_omega(&noise_model(4, 3)), 0.0);
    }

    #[test]
    fn fixture_omega_near_anchor() {
        let w = population_omega(&carebi_fixture());
        assert!((w - 0.74).abs() < 0.005, "{w}");
    }

    #[test]
    fn congruence_sign_and_identity() {
        let (_, pat) = six_factor_fixture(0.7, 0.6);
        assert!(congruence(&pat, &pat).unwrap().iter().all(|c| (c - 1.0).abs() < 1e-12));
        let neg = -pat.clone();
        assert!(congruence(&neg, &pat).unwrap().iter().all(|c| (c - 1.0).abs() < 1e-12));
        let z = Matrix::zeros(18, 6);
        assert!(congruence(&z, &pat).is_err());
    }

    #[test]
    fn item_permutation_permutes_output() {
        let m = carebi_fixture();
        let perm: Vec<usize> = (0..m.p()).rev().collect();
        let a = simulate_bifactor(&m, 200, 5);
        let b = simulate_bifactor(&m.permuted(&perm), 200, 5);
        for (i, &j) in perm.iter().enumerate() {
            assert_eq!(b.responses.columns[i], a.responses.columns[j]);
        }
        assert_eq!(a.true_g, b.true_g);
    }

    #[test]
    fn toml_round_trip() {
        let m = carebi_fixture();
        let back = TrueModel::from_toml(&m.to_toml()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn cohort_recodes_back_to_simulated_responses() {
        let cb = Codebook::canonical();
        let opts = CohortOptions { n: 400, missing_frac: 0.0, ..Default::default() };
        let (raw, sim) = synthetic_cohort(&carebi_fixture(), &cb, &opts).unwrap();
        let back = apply_codebook(&raw, &cb, &ApplyOptions::default()).unwrap();
        assert_eq!(back.columns, sim.responses.columns);
        assert_eq!(back.cluster_ids, sim.responses.cluster_ids);
    }
}

//! Confirmatory bifactor and higher-order models fitted to a polychoric
//! matrix by diagonally weighted least squares.
//!
//! Factor variances are fixed at 1 and uniquenesses are implied
//! (1 - communality), so the free parameters are the loadings alone.

use serde::{Deserialize, Serialize};

use crate::efa;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::optim::{self, BfgsOptions};
use crate::polycorr::{pairs, PolychoricMatrix, ThresholdSet, WeightMethod, WeightSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub second_order: Vec<String>,
    /// Second-order index of every first-order group.
    pub second_of: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub items: Vec<String>,
    pub general: bool,
    pub groups: Vec<String>,
    pub group_of: Vec<Option<usize>>,
    /// (item, group) loadings beyond each item's primary group.
    pub extra: Vec<(usize, usize)>,
    pub hierarchy: Option<Hierarchy>,
}

impl ModelSpec {
    pub fn p(&self) -> usize {
        self.items.len()
    }

    /// Column names: `general` (when present) then the groups.
    pub fn factor_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.general {
            v.push("general".to_string());
        }
        v.extend(self.groups.iter().cloned());
        v
    }

    fn group_col(&self, k: usize) -> usize {
        k + usize::from(self.general)
    }

    /// (item, column) of every free loading, item-major.
    pub fn free_loadings(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for i in 0..self.p() {
            if self.general {
                v.push((i, 0));
            }
            if let Some(k) = self.group_of[i] {
                v.push((i, self.group_col(k)));
            }
            for &(it, k) in &self.extra {
                if it == i {
                    v.push((i, self.group_col(k)));
                }
            }
        }
        v
    }

    pub fn with_items(&self, keep: &[String]) -> Result<Self> {
        let idx: Vec<usize> = keep
            .iter()
            .map(|id| self.items.iter().position(|x| x == id).ok_or_else(|| Error::Spec(format!("unknown item `{id}`"))))
            .collect::<Result<_>>()?;
        let assignments: Vec<(String, String)> = idx
            .iter()
            .filter_map(|&i| self.group_of[i].map(|k| (self.items[i].clone(), self.groups[k].clone())))
            .collect();
        let extras: Vec<(String, String)> = self
            .extra
            .iter()
            .filter(|(i, _)| idx.contains(i))
            .map(|&(i, k)| (self.items[i].clone(), self.groups[k].clone()))
            .collect();
        let mut s = build_bifactor_spec(keep, &assignments, &extras)?;
        s.general = self.general;
        Ok(s)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: SpecFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let items = match f.items {
            Some(v) => v,
            None => {
                let mut v: Vec<String> = Vec::new();
                for g in &f.group {
                    for it in &g.items {
                        if !v.contains(it) {
                            v.push(it.clone());
                        }
                    }
                }
                v
            }
        };
        let assignments: Vec<(String, String)> =
            f.group.iter().flat_map(|g| g.items.iter().map(move |i| (i.clone(), g.name.clone()))).collect();
        let extras: Vec<(String, String)> = f.extra.iter().map(|e| (e.item.clone(), e.group.clone())).collect();
        let mut spec = build_bifactor_spec(&items, &assignments, &extras)?;
        spec.general = f.general;
        if !f.second_order.is_empty() {
            let map: Vec<(String, String)> = f
                .second_order
                .iter()
                .flat_map(|s| s.groups.iter().map(move |g| (g.clone(), s.name.clone())))
                .collect();
            let labels: Vec<String> = f.second_order.iter().map(|s| s.name.clone()).collect();
            let (h, _) = build_higher_order_spec(&spec, &map, &labels)?;
            spec = h;
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        let f = SpecFile {
            general: self.general,
            items: Some(self.items.clone()),
            group: self
                .groups
                .iter()
                .enumerate()
                .map(|(k, g)| GroupEntry {
                    name: g.clone(),
                    items: (0..self.p()).filter(|&i| self.group_of[i] == Some(k)).map(|i| self.items[i].clone()).collect(),
                })
                .collect(),
            extra: self
                .extra
                .iter()
                .map(|&(i, k)| ExtraEntry { item: self.items[i].clone(), group: self.groups[k].clone() })
                .collect(),
            second_order: self
                .hierarchy
                .as_ref()
                .map(|h| {
                    h.second_order
                        .iter()
                        .enumerate()
                        .map(|(s, name)| SecondEntry {
                            name: name.clone(),
                            groups: (0..self.groups.len())
                                .filter(|&k| h.second_of[k] == s)
                                .map(|k| self.groups[k].clone())
                                .collect(),
                        })
                        .collect()
                })
                .unwrap_or_default(),
        };
        toml::to_string(&f).expect("spec serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SpecFile {
    #[serde(default = "yes")]
    general: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    items: Option<Vec<String>>,
    #[serde(default)]
    group: Vec<GroupEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    extra: Vec<ExtraEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    second_order: Vec<SecondEntry>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupEntry {
    name: String,
    items: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExtraEntry {
    item: String,
    group: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SecondEntry {
    name: String,
    groups: Vec<String>,
}

/// Bifactor spec from (item, group) assignments plus extra loadings.
///
/// Items without an assignment load on the general factor only. Group order
/// is order of first appearance in `assignments`.
pub fn build_bifactor_spec(items: &[String], assignments: &[(String, String)], extras: &[(String, String)]) -> Result<ModelSpec> {
    let find = |id: &str| items.iter().position(|x| x == id).ok_or_else(|| Error::Spec(format!("unknown item `{id}`")));
    let mut groups: Vec<String> = Vec::new();
    let mut group_of = vec![None; items.len()];
    for (item, g) in assignments {
        let i = find(item)?;
        let k = match groups.iter().position(|x| x == g) {
            Some(k) => k,
            None => {
                groups.push(g.clone());
                groups.len() - 1
            }
        };
        match group_of[i] {
            Some(prev) if prev != k => {
                return Err(Error::Spec(format!("item `{item}` assigned to both `{}` and `{g}`", groups[prev])))
            }
            _ => group_of[i] = Some(k),
        }
    }
    for (k, g) in groups.iter().enumerate() {
        let n = group_of.iter().filter(|x| **x == Some(k)).count();
        if n < 2 {
            return Err(Error::Spec(format!("group `{g}` has {n} item; groups need at least 2")));
        }
    }
    let mut extra = Vec::new();
    for (item, g) in extras {
        let i = find(item)?;
        let k = groups.iter().position(|x| x == g).ok_or_else(|| Error::Spec(format!("extra loading on unknown group `{g}`")))?;
        if group_of[i] == Some(k) {
            return Err(Error::Spec(format!("extra loading of `{item}` repeats its own group")));
        }
        if !extra.contains(&(i, k)) {
            extra.push((i, k));
        }
    }
    let mut seen = std::collections::HashSet::new();
    for id in items {
        if !seen.insert(id) {
            return Err(Error::Spec(format!("duplicate item `{id}`")));
        }
    }
    Ok(ModelSpec { items: items.to_vec(), general: true, groups, group_of, extra, hierarchy: None })
}

/// Attach a second-order layer to a bifactor spec.
///
/// Returns the spec and warnings. Labels shared between levels are rejected
/// as cycles.
pub fn build_higher_order_spec(
    base: &ModelSpec,
    first_to_second: &[(String, String)],
    second_labels: &[String],
) -> Result<(ModelSpec, Vec<String>)> {
    let mut warnings = Vec::new();
    for s in second_labels {
        if base.groups.contains(s) || s == "general" {
            return Err(Error::Spec(format!("`{s}` appears at two levels of the hierarchy (cycle)")));
        }
    }
    let mut second_of = vec![usize::MAX; base.groups.len()];
    for (first, second) in first_to_second {
        if first == second {
            return Err(Error::Spec(format!("`{first}` maps onto itself (cycle)")));
        }
        let k = base.groups.iter().position(|g| g == first).ok_or_else(|| Error::Spec(format!("unknown first-order factor `{first}`")))?;
        let s = second_labels.iter().position(|l| l == second).ok_or_else(|| {
            if base.groups.contains(second) {
                Error::Spec(format!("`{first}` maps onto first-order factor `{second}` (cycle)"))
            } else {
                Error::Spec(format!("unknown second-order factor `{second}`"))
            }
        })?;
        if second_of[k] != usize::MAX && second_of[k] != s {
            return Err(Error::Spec(format!("`{first}` mapped to two second-order factors")));
        }
        second_of[k] = s;
    }
    if let Some(k) = second_of.iter().position(|&s| s == usize::MAX) {
        return Err(Error::Spec(format!("first-order factor `{}` is not mapped", base.groups[k])));
    }
    if second_labels.len() == 1 {
        warnings.push("single second-order factor: its loading on the general factor is fixed at 1".to_string());
    }
    for (s, label) in second_labels.iter().enumerate() {
        match second_of.iter().filter(|&&x| x == s).count() {
            0 => return Err(Error::Spec(format!("second-order factor `{label}` has no first-order factors"))),
            1 if second_labels.len() > 1 => warnings.push(format!("second-order factor `{label}` has a single indicator")),
            _ => {}
        }
    }
    let mut spec = base.clone();
    spec.hierarchy = Some(Hierarchy { second_order: second_labels.to_vec(), second_of });
    Ok((spec, warnings))
}

pub const CAREBI_SECOND_ORDER: [(&str, [&str; 2]); 3] = [
    ("objective", ["overload", "difficulty"]),
    ("subjective", ["mood", "health"]),
    ("interpersonal", ["social", "relationship"]),
];

/// Six three-item domains over the canonical items, with the third
/// difficulty item also loading on the relationship factor.
pub fn carebi_spec(items: &[String]) -> Result<ModelSpec> {
    let groups = crate::simulate::CAREBI_GROUPS;
    let assignments: Vec<(String, String)> = items.iter().enumerate().map(|(i, id)| (id.clone(), groups[i / 3].to_string())).collect();
    let extras = vec![(items[5].clone(), "relationship".to_string())];
    build_bifactor_spec(items, &assignments, &extras)
}

pub fn carebi_higher_order(base: &ModelSpec) -> Result<(ModelSpec, Vec<String>)> {
    let map: Vec<(String, String)> = CAREBI_SECOND_ORDER
        .iter()
        .flat_map(|(s, fs)| fs.iter().map(move |f| (f.to_string(), s.to_string())))
        .collect();
    let labels: Vec<String> = CAREBI_SECOND_ORDER.iter().map(|(s, _)| s.to_string()).collect();
    build_higher_order_spec(base, &map, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjustment {
    Naive,
    MeanVarianceAdjusted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitIndices {
    pub cfi: f64,
    pub tli: f64,
    pub rmsea: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfaFit {
    pub item_ids: Vec<String>,
    pub factors: Vec<String>,
    pub general: bool,
    /// p x (general + groups); zero where not free.
    pub loadings: Matrix,
    pub group_of: Vec<Option<usize>>,
    pub free: Vec<(usize, usize)>,
    pub thresholds: Vec<ThresholdSet>,
    pub n_obs: usize,
    pub f_min: f64,
    pub f_start: f64,
    pub chi_square: f64,
    pub df: f64,
    pub null: NullFit,
    pub indices: Option<FitIndices>,
    pub converged: bool,
    pub iterations: usize,
    pub grad_max: f64,
    pub adjustment: Adjustment,
    pub weight_method: WeightMethod,
    /// Items with a loading above 1 in magnitude or communality above 1.
    pub flagged: Vec<String>,
}

impl CfaFit {
    pub fn loadings_general(&self) -> Vec<f64> {
        if self.general {
            self.loadings.column(0).iter().copied().collect()
        } else {
            vec![0.0; self.item_ids.len()]
        }
    }

    /// p x G group loadings.
    pub fn loadings_group(&self) -> Matrix {
        let off = usize::from(self.general);
        self.loadings.columns(off, self.loadings.ncols() - off).into_owned()
    }

    pub fn uniquenesses(&self) -> Vec<f64> {
        (0..self.loadings.nrows()).map(|i| 1.0 - self.loadings.row(i).norm_squared()).collect()
    }

    pub fn implied(&self) -> Matrix {
        implied_from_loadings(&self.loadings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullFit {
    pub f_min: f64,
    pub chi_square: f64,
    pub df: f64,
}

pub fn implied_from_loadings(l: &Matrix) -> Matrix {
    let mut s = l * l.transpose();
    for i in 0..s.nrows() {
        s[(i, i)] = 1.0;
    }
    s
}

/// DWLS discrepancy and its gradient.
#[derive(Debug, Clone)]
pub struct Objective {
    p: usize,
    n_cols: usize,
    free: Vec<(usize, usize)>,
    s: Matrix,
    /// 1 / w on the off-diagonal, 0 on the diagonal.
    inv_w: Matrix,
}

impl Objective {
    pub fn new(spec: &ModelSpec, rho: &Matrix, weights: &WeightSet) -> Result<Self> {
        let p = spec.p();
        if rho.nrows() != p {
            return Err(Error::Dimension(format!("spec has {p} items, matrix has {}", rho.nrows())));
        }
        if weights.variances.len() != p * (p - 1) / 2 {
            return Err(Error::Dimension("weight count does not match item count".into()));
        }
        if let Some(w) = weights.variances.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::InvalidArgument(format!("weights must be positive, found {w}")));
        }
        let mut inv_w = Matrix::zeros(p, p);
        for (k, (i, j)) in pairs(p).into_iter().enumerate() {
            inv_w[(i, j)] = 1.0 / weights.variances[k];
            inv_w[(j, i)] = inv_w[(i, j)];
        }
        Ok(Self { p, n_cols: spec.factor_names().len(), free: spec.free_loadings(), s: rho.clone(), inv_w })
    }

    pub fn n_params(&self) -> usize {
        self.free.len()
    }

    pub fn loadings(&self, theta: &[f64]) -> Matrix {
        let mut l = Matrix::zeros(self.p, self.n_cols);
        for (&(i, c), &v) in self.free.iter().zip(theta) {
            l[(i, c)] = v;
        }
        l
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.value_grad(theta).0
    }

    pub fn value_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let l = self.loadings(theta);
        let sigma = &l * l.transpose();
        let mut r = Matrix::zeros(self.p, self.p);
        let mut f = 0.0;
        for i in 0..self.p {
            for j in (i + 1)..self.p {
                let e = self.s[(i, j)] - sigma[(i, j)];
                let we = e * self.inv_w[(i, j)];
                f += e * we;
                r[(i, j)] = we;
                r[(j, i)] = we;
            }
        }
        let g = r * &l * -2.0;
        (f, self.free.iter().map(|&(i, c)| g[(i, c)]).collect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct CfaOptions {
    pub start: Option<Vec<f64>>,
    pub bfgs: BfgsOptions,
}

/// Starting loadings from a one-factor minres fit (general) and the
/// within-group residual correlations (groups).
pub fn start_values(spec: &ModelSpec, rho: &Matrix) -> Result<Vec<f64>> {
    let p = spec.p();
    let lg = if spec.general {
        let f = efa::fit_minres(rho, 1)?;
        f.loadings.column(0).iter().copied().collect()
    } else {
        vec![0.0; p]
    };
    let resid = Matrix::from_fn(p, p, |i, j| rho[(i, j)] - lg[i] * lg[j]);
    Ok(spec
        .free_loadings()
        .into_iter()
        .map(|(i, c)| {
            if spec.general && c == 0 {
                return lg[i];
            }
            let k = c - usize::from(spec.general);
            if spec.group_of[i] != Some(k) {
                return 0.1;
            }
            let mates: Vec<usize> = (0..p).filter(|&j| j != i && spec.group_of[j] == Some(k)).collect();
            let avg = mates.iter().map(|&j| resid[(i, j)]).sum::<f64>() / mates.len() as f64;
            avg.max(0.01).sqrt().min(0.8)
        })
        .collect())
}

pub fn fit_dwls(spec: &ModelSpec, rho: &PolychoricMatrix, weights: &WeightSet, opts: &CfaOptions) -> Result<CfaFit> {
    if spec.items != rho.item_ids {
        return Err(Error::Dimension("spec items must match the correlation matrix items in order".into()));
    }
    let obj = Objective::new(spec, &rho.rho, weights)?;
    let p = spec.p();
    let n_pairs = p * (p - 1) / 2;
    let df = n_pairs as i64 - obj.n_params() as i64;
    if df < 0 {
        return Err(Error::Spec(format!("model is not identified: {} parameters for {n_pairs} correlations", obj.n_params())));
    }
    let start = match &opts.start {
        Some(s) if s.len() == obj.n_params() => s.clone(),
        Some(s) => return Err(Error::Dimension(format!("start has {} values, model has {}", s.len(), obj.n_params()))),
        None => start_values(spec, &rho.rho)?,
    };
    let f_start = obj.value(&start);
    let res = optim::bfgs(|t| obj.value_grad(t), &start, opts.bfgs);
    let mut loadings = obj.loadings(&res.x);
    for c in 0..loadings.ncols() {
        let col = loadings.column(c);
        let big = (0..p).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap_or(0);
        if col[big] < 0.0 {
            loadings.column_mut(c).neg_mut();
        }
    }
    let nm1 = (rho.n_obs.max(1) - 1) as f64;
    let null = null_fit(&rho.rho, weights, rho.n_obs);
    let chi = nm1 * res.f;
    let flagged = (0..p)
        .filter(|&i| loadings.row(i).iter().any(|l| l.abs() > 1.0) || loadings.row(i).norm_squared() > 1.0)
        .map(|i| spec.items[i].clone())
        .collect();
    let mut fit = CfaFit {
        item_ids: spec.items.clone(),
        factors: spec.factor_names(),
        general: spec.general,
        loadings,
        group_of: spec.group_of.clone(),
        free: spec.free_loadings(),
        thresholds: rho.thresholds.clone(),
        n_obs: rho.n_obs,
        f_min: res.f,
        f_start,
        chi_square: chi,
        df: df as f64,
        null,
        indices: None,
        converged: res.converged,
        iterations: res.iterations,
        grad_max: res.grad_max,
        adjustment: Adjustment::Naive,
        weight_method: weights.method,
        flagged,
    };
    fit.indices = cfa_fit_indices(&fit, &null).ok();
    Ok(fit)
}

/// Independence model: every correlation fixed at zero.
pub fn null_fit(rho: &Matrix, weights: &WeightSet, n_obs: usize) -> NullFit {
    let p = rho.nrows();
    let f: f64 = pairs(p).into_iter().zip(&weights.variances).map(|((i, j), w)| rho[(i, j)].powi(2) / w).sum();
    NullFit { f_min: f, chi_square: (n_obs.max(1) - 1) as f64 * f, df: (p * (p - 1) / 2) as f64 }
}

pub fn cfa_fit_indices(fit: &CfaFit, null: &NullFit) -> Result<FitIndices> {
    if null.chi_square <= null.df {
        return Err(Error::InvalidArgument(format!(
            "null model chi-square {:.3} does not exceed its df {}",
            null.chi_square, null.df
        )));
    }
    let (t, df) = (fit.chi_square, fit.df);
    let cfi = 1.0 - (t - df).max(0.0) / (null.chi_square - null.df);
    let (tli, rmsea) = if df > 0.0 {
        (efa::tli(t, df, null.chi_square, null.df), efa::rmsea(t, df, fit.n_obs))
    } else {
        (f64::NAN, 0.0)
    };
    Ok(FitIndices { cfi, tli, rmsea })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopVerdict {
    pub tli_ok: bool,
    pub cfi_ok: bool,
    pub rmsea_ok: bool,
    pub omega_ok: bool,
    pub accepted: bool,
}

/// TLI >= 0.9, CFI >= 0.9, RMSEA <= 0.08 and omega_h >= 0.70.
pub fn acceptance(indices: &FitIndices, omega_h: f64) -> LoopVerdict {
    let tli_ok = indices.tli >= 0.9;
    let cfi_ok = indices.cfi >= 0.9;
    let rmsea_ok = indices.rmsea <= 0.08;
    let omega_ok = omega_h >= 0.70;
    LoopVerdict { tli_ok, cfi_ok, rmsea_ok, omega_ok, accepted: tli_ok && cfi_ok && rmsea_ok && omega_ok }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaReport {
    pub omega_h: f64,
    pub omega_s: Vec<(String, f64)>,
    pub explained_common_variance: f64,
    /// Pieces of the total-score variance: (sum general)^2, each
    /// (sum group)^2, and the summed uniquenesses.
    pub general_part: f64,
    pub group_parts: Vec<f64>,
    pub unique_part: f64,
    pub total_variance: f64,
}

/// Omega coefficients from a general column and p x G group loadings.
///
/// Subscale k is the set of items whose primary group is k; on it the
/// denominator is the variance of the unit-weighted subscale sum.
pub fn omega_from_loadings(general: &[f64], groups: &Matrix, group_of: &[Option<usize>], names: &[String]) -> OmegaReport {
    let p = general.len();
    let g_n = groups.ncols();
    let unique: Vec<f64> = (0..p).map(|i| 1.0 - general[i].powi(2) - groups.row(i).norm_squared()).collect();
    let parts = |rows: &[usize]| -> (f64, Vec<f64>, f64) {
        let gs: f64 = rows.iter().map(|&i| general[i]).sum();
        let ss: Vec<f64> = (0..g_n).map(|k| rows.iter().map(|&i| groups[(i, k)]).sum::<f64>().powi(2)).collect();
        let u: f64 = rows.iter().map(|&i| unique[i]).sum();
        (gs * gs, ss, u)
    };
    let all: Vec<usize> = (0..p).collect();
    let (gp, sp, up) = parts(&all);
    let total = gp + sp.iter().sum::<f64>() + up;
    let omega_h = if total > 0.0 { gp / total } else { 0.0 };
    let omega_s = (0..g_n)
        .map(|k| {
            let rows: Vec<usize> = (0..p).filter(|&i| group_of[i] == Some(k)).collect();
            let (a, b, c) = parts(&rows);
            let den = a + b.iter().sum::<f64>() + c;
            (names[k].clone(), if den > 0.0 { b[k] / den } else { 0.0 })
        })
        .collect();
    let g2: f64 = general.iter().map(|l| l * l).sum();
    let s2: f64 = groups.iter().map(|l| l * l).sum();
    OmegaReport {
        omega_h,
        omega_s,
        explained_common_variance: if g2 + s2 > 0.0 { g2 / (g2 + s2) } else { 0.0 },
        general_part: gp,
        group_parts: sp,
        unique_part: up,
        total_variance: total,
    }
}

pub fn omega(fit: &CfaFit) -> OmegaReport {
    let off = usize::from(fit.general);
    omega_from_loadings(&fit.loadings_general(), &fit.loadings_group(), &fit.group_of, &fit.factors[off..])
}

#[derive(Debug, Clone, PartialEq)]
pub struct HigherOrderFit {
    pub item_ids: Vec<String>,
    pub first_order: Vec<String>,
    pub second_order: Vec<String>,
    /// p x K first-order loadings.
    pub loadings: Matrix,
    /// First-order on second-order loadings.
    pub beta: Vec<f64>,
    /// Second-order on general loadings.
    pub gamma: Vec<f64>,
    pub f_min: f64,
    pub chi_square: f64,
    pub df: f64,
    pub indices: Option<FitIndices>,
    pub converged: bool,
    pub adjustment: Adjustment,
    pub warnings: Vec<String>,
}

impl HigherOrderFit {
    /// First-order factor correlations implied by the hierarchy.
    pub fn phi(&self, second_of: &[usize]) -> Matrix {
        first_order_phi(&self.beta, &self.gamma, second_of)
    }
}

fn first_order_phi(beta: &[f64], gamma: &[f64], second_of: &[usize]) -> Matrix {
    let k = beta.len();
    Matrix::from_fn(k, k, |a, b| {
        if a == b {
            1.0
        } else if second_of[a] == second_of[b] {
            beta[a] * beta[b]
        } else {
            beta[a] * beta[b] * gamma[second_of[a]] * gamma[second_of[b]]
        }
    })
}

/// Second-order model fitted with a central-difference gradient; used for
/// interpretation only.
pub fn fit_higher_order(spec: &ModelSpec, rho: &PolychoricMatrix, weights: &WeightSet, opts: &CfaOptions) -> Result<HigherOrderFit> {
    let h = spec.hierarchy.as_ref().ok_or_else(|| Error::Spec("spec has no second-order layer".into()))?;
    if spec.items != rho.item_ids {
        return Err(Error::Dimension("spec items must match the correlation matrix items in order".into()));
    }
    let first = ModelSpec { general: false, hierarchy: None, ..spec.clone() };
    let obj = Objective::new(&first, &rho.rho, weights)?;
    let n_l = obj.n_params();
    let k = spec.groups.len();
    let s_n = h.second_order.len();
    let free_gamma = s_n > 1;
    let n_par = n_l + k + if free_gamma { s_n } else { 0 };
    let p = spec.p();
    let df = (p * (p - 1) / 2) as i64 - n_par as i64;
    if df < 0 {
        return Err(Error::Spec(format!("higher-order model is not identified ({n_par} parameters)")));
    }
    let unpack = |t: &[f64]| -> (Matrix, Vec<f64>, Vec<f64>) {
        let l = obj.loadings(&t[..n_l]);
        let beta = t[n_l..n_l + k].to_vec();
        let gamma = if free_gamma { t[n_l + k..].to_vec() } else { vec![1.0] };
        (l, beta, gamma)
    };
    let value = |t: &[f64]| -> f64 {
        let (l, beta, gamma) = unpack(t);
        let phi = first_order_phi(&beta, &gamma, &h.second_of);
        let sigma = &l * phi * l.transpose();
        let mut f = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                f += (rho.rho[(i, j)] - sigma[(i, j)]).powi(2) * obj.inv_w[(i, j)];
            }
        }
        f
    };
    let start = match &opts.start {
        Some(s) if s.len() == n_par => s.clone(),
        _ => {
            let bif = fit_dwls(&ModelSpec { hierarchy: None, ..spec.clone() }, rho, weights, &CfaOptions::default())?;
            let mut t: Vec<f64> = first
                .free_loadings()
                .iter()
                .map(|&(i, c)| (bif.loadings[(i, 0)].powi(2) + bif.loadings[(i, c + 1)].powi(2)).sqrt())
                .collect();
            t.extend(std::iter::repeat_n(0.8, k));
            if free_gamma {
                t.extend(std::iter::repeat_n(0.8, s_n));
            }
            t
        }
    };
    let res = optim::bfgs(|t| (value(t), optim::numeric_gradient(value, t, 1e-6)), &start, opts.bfgs);
    let (mut l, mut beta, mut gamma) = unpack(&res.x);
    for c in 0..k {
        if l.column(c).sum() < 0.0 {
            l.column_mut(c).neg_mut();
            beta[c] = -beta[c];
        }
    }
    for s in 0..s_n {
        let members: Vec<usize> = (0..k).filter(|&c| h.second_of[c] == s).collect();
        if members.iter().map(|&c| beta[c]).sum::<f64>() < 0.0 {
            members.iter().for_each(|&c| beta[c] = -beta[c]);
            gamma[s] = -gamma[s];
        }
    }
    if gamma.iter().sum::<f64>() < 0.0 {
        gamma.iter_mut().for_each(|g| *g = -*g);
    }
    let null = null_fit(&rho.rho, weights, rho.n_obs);
    let nm1 = (rho.n_obs.max(1) - 1) as f64;
    let chi = nm1 * res.f;
    let df = df as f64;
    let cfi = 1.0 - (chi - df).max(0.0) / (null.chi_square - null.df);
    let indices = (null.chi_square > null.df && df > 0.0).then(|| FitIndices {
        cfi,
        tli: efa::tli(chi, df, null.chi_square, null.df),
        rmsea: efa::rmsea(chi, df, rho.n_obs),
    });
    let mut warnings = Vec::new();
    if !free_gamma {
        warnings.push("single second-order factor: its loading on the general factor is fixed at 1".into());
    }
    Ok(HigherOrderFit {
        item_ids: spec.items.clone(),
        first_order: spec.groups.clone(),
        second_order: h.second_order.clone(),
        loadings: l,
        beta,
        gamma,
        f_min: res.f,
        chi_square: chi,
        df,
        indices,
        converged: res.converged,
        adjustment: Adjustment::Naive,
        warnings,
    })
}

/// Serializable view of a bifactor fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfaReport {
    pub item_ids: Vec<String>,
    pub factors: Vec<String>,
    pub loadings: Vec<Vec<f64>>,
    pub uniquenesses: Vec<f64>,
    pub f_min: f64,
    pub chi_square: f64,
    pub df: f64,
    pub null: NullFit,
    pub indices: Option<FitIndices>,
    pub adjustment: Adjustment,
    pub weight_method: WeightMethod,
    pub converged: bool,
    pub iterations: usize,
    pub flagged: Vec<String>,
    pub omega: OmegaReport,
    pub verdict: Option<LoopVerdict>,
}

impl CfaReport {
    pub fn new(fit: &CfaFit) -> Self {
        let om = omega(fit);
        Self {
            item_ids: fit.item_ids.clone(),
            factors: fit.factors.clone(),
            loadings: linalg::to_rows(&fit.loadings),
            uniquenesses: fit.uniquenesses(),
            f_min: fit.f_min,
            chi_square: fit.chi_square,
            df: fit.df,
            null: fit.null,
            indices: fit.indices,
            adjustment: fit.adjustment,
            weight_method: fit.weight_method,
            converged: fit.converged,
            iterations: fit.iterations,
            flagged: fit.flagged.clone(),
            verdict: fit.indices.map(|ix| acceptance(&ix, om.omega_h)),
            omega: om,
        }
    }
}

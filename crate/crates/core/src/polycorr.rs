//! Thresholds, polychoric correlations, positive-definiteness repair,
//! sampling adequacy, and bootstrap weights for weighted least squares.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::ResponseMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::normal::{self, BivariateNormal};
use crate::seed;

/// Correlations are searched on this closed interval.
pub const RHO_BOUND: f64 = 0.999;
/// Smallest eigenvalue allowed after repair.
pub const PSD_EPS: f64 = 1e-6;
const BRENT_TOL: f64 = 1e-8;
const BRENT_MAX_ITER: usize = 200;

/// Standard-normal cut points for the categories that occur in a column.
///
/// `codes` lists the observed category codes ascending; `taus[k]` separates
/// `codes[k]` from `codes[k + 1]`. Unobserved codes are folded away, so the
/// cut points are always finite and strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub codes: Vec<u16>,
    pub taus: Vec<f64>,
}

impl ThresholdSet {
    pub fn n_categories(&self) -> usize {
        self.codes.len()
    }

    pub fn category_index(&self, code: u16) -> Option<usize> {
        self.codes.binary_search(&code).ok()
    }

    /// (lower, upper) cut points of category index `k`, infinite at the ends.
    pub fn bounds(&self, k: usize) -> (f64, f64) {
        let lo = if k == 0 { f64::NEG_INFINITY } else { self.taus[k - 1] };
        let hi = if k == self.taus.len() { f64::INFINITY } else { self.taus[k] };
        (lo, hi)
    }
}

/// A column reduced to category indices plus its thresholds.
#[derive(Debug, Clone)]
pub(crate) struct PreparedItem {
    pub index: Vec<u8>,
    pub thresholds: ThresholdSet,
}

impl PreparedItem {
    pub fn new(column: &[u16]) -> Result<Self> {
        let thresholds = estimate_thresholds(column)?;
        let index = column
            .iter()
            .map(|&c| thresholds.category_index(c).expect("code observed") as u8)
            .collect();
        Ok(Self { index, thresholds })
    }

    fn k(&self) -> usize {
        self.thresholds.n_categories()
    }
}

pub fn estimate_thresholds(column: &[u16]) -> Result<ThresholdSet> {
    let mut counts = std::collections::BTreeMap::<u16, usize>::new();
    for &c in column {
        *counts.entry(c).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::DegenerateItem(String::new()));
    }
    let n = column.len() as f64;
    let codes: Vec<u16> = counts.keys().copied().collect();
    let mut cum = 0usize;
    let mut taus = Vec::with_capacity(codes.len() - 1);
    for (i, (_, &cnt)) in counts.iter().enumerate() {
        if i + 1 == codes.len() {
            break;
        }
        cum += cnt;
        taus.push(normal::quantile(cum as f64 / n));
    }
    Ok(ThresholdSet { codes, taus })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub rho: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Set when the table has no discordant (or no concordant) pairs and the
    /// estimate sits at the search boundary.
    pub boundary: bool,
}

/// Contingency table of two prepared columns, row-major `ka x kb`.
fn contingency(a: &PreparedItem, b: &PreparedItem) -> Vec<f64> {
    let (ka, kb) = (a.k(), b.k());
    let mut t = vec![0.0; ka * kb];
    for (&x, &y) in a.index.iter().zip(&b.index) {
        t[x as usize * kb + y as usize] += 1.0;
    }
    t
}

/// (concordant, discordant) pair counts.
fn concordance(t: &[f64], ka: usize, kb: usize) -> (f64, f64) {
    let mut conc = 0.0;
    let mut disc = 0.0;
    for a in 0..ka {
        for b in 0..kb {
            let n = t[a * kb + b];
            if n == 0.0 {
                continue;
            }
            for a2 in a + 1..ka {
                for b2 in 0..kb {
                    let m = t[a2 * kb + b2];
                    if b2 > b {
                        conc += n * m;
                    } else if b2 < b {
                        disc += n * m;
                    }
                }
            }
        }
    }
    (conc, disc)
}

/// Bivariate-normal log-likelihood of a table at correlation `rho`.
pub(crate) fn table_log_likelihood(t: &[f64], ta: &[f64], tb: &[f64], rho: f64, grid: &mut Vec<f64>) -> f64 {
    let ka = ta.len() + 1;
    let kb = tb.len() + 1;
    let bvn = BivariateNormal::new(rho);
    // grid[(i) * (kb + 1) + j] = Phi2(cut_i, cut_j) for cuts -inf, taus.., +inf
    let w = kb + 1;
    grid.clear();
    grid.resize((ka + 1) * w, 0.0);
    for j in 1..kb {
        grid[ka * w + j] = normal::cdf(tb[j - 1]);
    }
    for i in 1..ka {
        grid[i * w + kb] = normal::cdf(ta[i - 1]);
        for j in 1..kb {
            grid[i * w + j] = bvn.cdf(ta[i - 1], tb[j - 1]);
        }
    }
    grid[ka * w + kb] = 1.0;
    let mut ll = 0.0;
    for a in 0..ka {
        for b in 0..kb {
            let n = t[a * kb + b];
            if n == 0.0 {
                continue;
            }
            let p = grid[(a + 1) * w + b + 1] - grid[a * w + b + 1] - grid[(a + 1) * w + b] + grid[a * w + b];
            ll += n * p.max(1e-300).ln();
        }
    }
    ll
}

pub(crate) fn pair_prepared(a: &PreparedItem, b: &PreparedItem) -> std::result::Result<PairEstimate, String> {
    if a.index.len() != b.index.len() {
        return Err("columns differ in length".into());
    }
    let (ka, kb) = (a.k(), b.k());
    let mut t = contingency(a, b);
    let (conc, disc) = concordance(&t, ka, kb);
    let mut grid = Vec::new();
    if disc == 0.0 || conc == 0.0 {
        let rho = if disc == 0.0 { RHO_BOUND } else { -RHO_BOUND };
        let ll = table_log_likelihood(&t, &a.thresholds.taus, &b.thresholds.taus, rho, &mut grid);
        return Ok(PairEstimate { rho, log_likelihood: ll, iterations: 0, boundary: true });
    }
    for c in t.iter_mut().filter(|c| **c == 0.0) {
        *c = 0.5;
    }
    let (ta, tb) = (&a.thresholds.taus, &b.thresholds.taus);
    let mut f = |r: f64| -table_log_likelihood(&t, ta, tb, r, &mut grid);
    let m = brent_minimize(&mut f, -RHO_BOUND, RHO_BOUND, BRENT_TOL, BRENT_MAX_ITER)?;
    Ok(PairEstimate { rho: m.x, log_likelihood: -m.fx, iterations: m.iterations, boundary: false })
}

/// Two-step polychoric correlation of two complete ordinal columns.
pub fn polychoric_pair(col_i: &[u16], col_j: &[u16]) -> Result<PairEstimate> {
    if col_i.len() != col_j.len() {
        return Err(Error::Dimension("columns differ in length".into()));
    }
    let a = PreparedItem::new(col_i).map_err(|_| Error::DegenerateItem("i".into()))?;
    let b = PreparedItem::new(col_j).map_err(|_| Error::DegenerateItem("j".into()))?;
    pair_prepared(&a, &b).map_err(|trace| Error::NonConvergence("i".into(), "j".into(), trace))
}

pub(crate) struct Minimum {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Brent's derivative-free minimizer on [lo, hi] (golden section with
/// parabolic steps). Returns an iteration trace on failure.
pub(crate) fn brent_minimize<F: FnMut(f64) -> f64>(
    f: &mut F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> std::result::Result<Minimum, String> {
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (lo, hi);
    let mut x = a + CGOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut trace = Vec::new();
    for iter in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-10;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            return Ok(Minimum { x, fx, iterations: iter });
        }
        if trace.len() < 12 {
            trace.push(format!("{iter}: x={x:.9} f={fx:.9}"));
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if !(p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x)) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if !fu.is_finite() {
            trace.push(format!("{iter}: non-finite objective at {u}"));
            return Err(trace.join("; "));
        }
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    trace.push(format!("stopped after {max_iter} iterations"));
    Err(trace.join("; "))
}

/// Unique off-diagonal index pairs (i < j) in row-major order.
pub fn pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolychoricMatrix {
    pub item_ids: Vec<String>,
    pub rho: Matrix,
    pub thresholds: Vec<ThresholdSet>,
    pub n_obs: usize,
    pub repaired: bool,
    /// Smallest eigenvalue of the pairwise estimate before any repair.
    pub min_eigenvalue: f64,
}

impl PolychoricMatrix {
    pub fn p(&self) -> usize {
        self.item_ids.len()
    }

    /// Off-diagonal entries in [`pairs`] order.
    pub fn unique_correlations(&self) -> Vec<f64> {
        pairs(self.p()).into_iter().map(|(i, j)| self.rho[(i, j)]).collect()
    }

    pub fn from_matrix(item_ids: Vec<String>, rho: Matrix, n_obs: usize) -> Self {
        let min_eigenvalue = linalg::eigenvalues_desc(&rho).last().copied().unwrap_or(1.0);
        let p = item_ids.len();
        Self { item_ids, rho, thresholds: vec![ThresholdSet { codes: vec![], taus: vec![] }; p], n_obs, repaired: false, min_eigenvalue }
    }
}

pub(crate) fn prepare_items(matrix: &ResponseMatrix) -> Result<Vec<PreparedItem>> {
    (0..matrix.n_items())
        .map(|j| {
            let col = matrix.complete_column(j)?;
            PreparedItem::new(&col).map_err(|_| Error::DegenerateItem(matrix.item_ids[j].clone()))
        })
        .collect()
}

fn map_pairs<F>(list: &[(usize, usize)], f: F) -> Vec<std::result::Result<PairEstimate, String>>
where
    F: Fn(usize, usize) -> std::result::Result<PairEstimate, String> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        list.par_iter().map(|&(i, j)| f(i, j)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        list.iter().map(|&(i, j)| f(i, j)).collect()
    }
}

/// Pairwise matrix without repair.
pub(crate) fn raw_matrix(items: &[PreparedItem], ids: &[String]) -> Result<Matrix> {
    let p = items.len();
    let list = pairs(p);
    let est = map_pairs(&list, |i, j| pair_prepared(&items[i], &items[j]));
    let mut rho = Matrix::identity(p, p);
    for (&(i, j), e) in list.iter().zip(est) {
        let e = e.map_err(|trace| Error::NonConvergence(ids[i].clone(), ids[j].clone(), trace))?;
        rho[(i, j)] = e.rho;
        rho[(j, i)] = e.rho;
    }
    Ok(rho)
}

pub fn polychoric_matrix(matrix: &ResponseMatrix) -> Result<PolychoricMatrix> {
    let items = prepare_items(matrix)?;
    let rho = raw_matrix(&items, &matrix.item_ids)?;
    let min_eigenvalue = linalg::eigenvalues_desc(&rho).last().copied().unwrap_or(1.0);
    let (rho, repaired) = psd_repair(&rho, PSD_EPS);
    Ok(PolychoricMatrix {
        item_ids: matrix.item_ids.clone(),
        rho,
        thresholds: items.into_iter().map(|i| i.thresholds).collect(),
        n_obs: matrix.n_rows(),
        repaired,
        min_eigenvalue,
    })
}

/// Clip eigenvalues below `eps`, reconstruct, and rescale to unit diagonal,
/// repeating until the smallest eigenvalue is at least `eps`.
pub fn psd_repair(m: &Matrix, eps: f64) -> (Matrix, bool) {
    let mut cur = m.clone();
    let mut repaired = false;
    for _ in 0..100 {
        let (vals, vecs) = linalg::sym_eigen_desc(&cur);
        if vals.last().copied().unwrap_or(1.0) >= eps {
            break;
        }
        repaired = true;
        // Clip slightly above eps so the rescale does not push it back under.
        let target = eps * 1.01;
        let clipped = Matrix::from_diagonal(&nalgebra::DVector::from_iterator(
            vals.len(),
            vals.iter().map(|&v| v.max(target)),
        ));
        let rec = &vecs * clipped * vecs.transpose();
        let d: Vec<f64> = (0..rec.nrows()).map(|i| rec[(i, i)].sqrt()).collect();
        cur = Matrix::from_fn(rec.nrows(), rec.ncols(), |i, j| if i == j { 1.0 } else { rec[(i, j)] / (d[i] * d[j]) });
    }
    (cur, repaired)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmoReport {
    pub overall: f64,
    pub per_item_msa: Vec<f64>,
}

impl KmoReport {
    pub fn passes(&self, gate: f64) -> bool {
        self.overall >= gate
    }
}

/// Kaiser-Meyer-Olkin sampling adequacy from anti-image partial correlations.
pub fn kmo(rho: &Matrix) -> Result<KmoReport> {
    let p = rho.nrows();
    if p < 2 {
        return Err(Error::InvalidArgument("KMO needs at least two variables".into()));
    }
    let inv = linalg::spd_inverse(rho).map_err(|_| Error::Singular("correlation matrix for KMO".into()))?;
    let mut r2 = vec![0.0; p];
    let mut q2 = vec![0.0; p];
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let q = -inv[(i, j)] / (inv[(i, i)] * inv[(j, j)]).sqrt();
            r2[i] += rho[(i, j)] * rho[(i, j)];
            q2[i] += q * q;
        }
    }
    let sr: f64 = r2.iter().sum();
    let sq: f64 = q2.iter().sum();
    let ratio = |a: f64, b: f64| if a + b == 0.0 { 0.0 } else { a / (a + b) };
    Ok(KmoReport {
        overall: ratio(sr, sq),
        per_item_msa: r2.iter().zip(&q2).map(|(&a, &b)| ratio(a, b)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMethod {
    Bootstrap,
    Unit,
}

/// Asymptotic variances of sqrt(N) times each unique polychoric correlation,
/// in [`pairs`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub variances: Vec<f64>,
    pub method: WeightMethod,
}

impl WeightSet {
    pub fn unit(p: usize) -> Self {
        Self { variances: vec![1.0; p * (p - 1) / 2], method: WeightMethod::Unit }
    }
}

pub const MIN_BOOT: usize = 50;
const BOOT_RETRIES: u64 = 10;
const VARIANCE_FLOOR: f64 = 1e-6;

/// Nonparametric row bootstrap of the pairwise polychoric estimates.
///
/// Replicate `b` draws from stream `derive(seed, b)`; a replicate that leaves
/// some column with a single category is redrawn on the next sub-stream, up
/// to ten times.
pub fn asymptotic_variances(matrix: &ResponseMatrix, n_boot: usize, seed: u64) -> Result<WeightSet> {
    if n_boot < MIN_BOOT {
        return Err(Error::InvalidArgument(format!("n_boot must be at least {MIN_BOOT}")));
    }
    let cols = matrix.complete_columns()?;
    let n = matrix.n_rows();
    let p = matrix.n_items();
    let m = pairs(p).len();
    let mut sum = vec![0.0; m];
    let mut sum_sq = vec![0.0; m];
    for b in 0..n_boot {
        let rep_seed = seed::derive(seed, b as u64);
        let mut items = None;
        for attempt in 0..BOOT_RETRIES {
            let mut rng = seed::rng(rep_seed, attempt);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let prepared: Result<Vec<PreparedItem>> = cols
                .iter()
                .map(|c| PreparedItem::new(&idx.iter().map(|&r| c[r]).collect::<Vec<_>>()))
                .collect();
            if let Ok(v) = prepared {
                items = Some(v);
                break;
            }
        }
        let items = items.ok_or_else(|| {
            Error::Bootstrap(format!("replicate {b} stayed degenerate after {BOOT_RETRIES} redraws"))
        })?;
        let rho = raw_matrix(&items, &matrix.item_ids)?;
        for (k, (i, j)) in pairs(p).into_iter().enumerate() {
            sum[k] += rho[(i, j)];
            sum_sq[k] += rho[(i, j)] * rho[(i, j)];
        }
    }
    let nb = n_boot as f64;
    let variances = sum
        .iter()
        .zip(&sum_sq)
        .map(|(&s, &ss)| {
            let var = ((ss - s * s / nb) / (nb - 1.0)).max(0.0);
            (var * n as f64).max(VARIANCE_FLOOR)
        })
        .collect();
    Ok(WeightSet { variances, method: WeightMethod::Bootstrap })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quarter_column() -> Vec<u16> {
        let mut c = vec![1u16; 25];
        c.extend(vec![2; 50]);
        c.extend(vec![3; 25]);
        c
    }

    #[test]
    fn thresholds_binary_and_three_category() {
        let t = estimate_thresholds(&[1, 2, 1, 2]).unwrap();
        assert_eq!(t.taus, vec![0.0]);
        let t = estimate_thresholds(&quarter_column()).unwrap();
        assert!((t.taus[0] + 0.674_489_750_196_081_7).abs() < 1e-9);
        assert!((t.taus[1] - 0.674_489_750_196_081_7).abs() < 1e-9);
        assert!(matches!(estimate_thresholds(&[1, 1, 1]), Err(Error::DegenerateItem(_))));
    }

    #[test]
    fn thresholds_fold_unobserved_codes() {
        let t = estimate_thresholds(&[1, 1, 4, 4, 6, 6]).unwrap();
        assert_eq!(t.codes, vec![1, 4, 6]);
        assert_eq!(t.taus.len(), 2);
        assert!(t.taus[0] < t.taus[1]);
        assert_eq!(t.category_index(5), None);
    }

    #[test]
    fn identical_and_reversed_columns_hit_the_clamp() {
        let c: Vec<u16> = (0..200).map(|i| (i % 4 + 1) as u16).collect();
        assert_eq!(polychoric_pair(&c, &c).unwrap().rho, RHO_BOUND);
        let r: Vec<u16> = c.iter().map(|&v| 5 - v).collect();
        assert_eq!(polychoric_pair(&c, &r).unwrap().rho, -RHO_BOUND);
    }

    #[test]
    fn brent_finds_parabola_minimum() {
        let m = brent_minimize(&mut |x: f64| (x - 0.3) * (x - 0.3), -1.0, 1.0, 1e-10, 100).unwrap();
        assert!((m.x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn kmo_two_variables_is_half() {
        for &r in &[0.5, -0.3, 0.9] {
            let m = Matrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]);
            let k = kmo(&m).unwrap();
            assert!((k.overall - 0.5).abs() <= 2.0 * f64::EPSILON, "{r}: {}", k.overall);
        }
    }

    #[test]
    fn psd_repair_fixes_indefinite_matrix() {
        let m = Matrix::from_row_slice(3, 3, &[1.0, 0.999, -0.999, 0.999, 1.0, 0.999, -0.999, 0.999, 1.0]);
        let (r, repaired) = psd_repair(&m, PSD_EPS);
        assert!(repaired);
        assert!(*linalg::eigenvalues_desc(&r).last().unwrap() >= PSD_EPS);
        for i in 0..3 {
            assert_eq!(r[(i, i)], 1.0);
        }
    }

    #[test]
    fn unit_weights_are_one() {
        let w = WeightSet::unit(5);
        assert_eq!(w.variances.len(), 10);
        assert!(w.variances.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bootstrap_rejects_constant_column() {
        let cols = vec![vec![1u16; 40], (0..40).map(|i| (i % 2 + 1) as u16).collect()];
        let m = ResponseMatrix::from_complete_columns(vec!["a".into(), "b".into()], vec![2, 2], cols).unwrap();
        assert!(matches!(asymptotic_variances(&m, 50, 1), Err(Error::Bootstrap(_))));
    }

    #[test]
    fn bootstrap_retries_rare_category() {
        // One observation in category 2: about a third of draws lose it and
        // must be redrawn.
        let mut a = vec![1u16; 30];
        a[0] = 2;
        let b: Vec<u16> = (0..30).map(|i| (i % 2 + 1) as u16).collect();
        let m = ResponseMatrix::from_complete_columns(vec!["a".into(), "b".into()], vec![2, 2], vec![a, b]).unwrap();
        let w = asymptotic_variances(&m, 50, 3).unwrap();
        assert!(w.variances[0] > 0.0);
    }
}

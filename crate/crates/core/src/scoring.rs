//! General-factor scores, the 0-100 index, and burden bands.

use serde::{Deserialize, Serialize};

use crate::cfa::{Adjustment, CfaFit};
use crate::codebook::ResponseMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::normal;
use crate::polycorr::ThresholdSet;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentResponseMatrix {
    pub item_ids: Vec<String>,
    /// N x p conditional means.
    pub xstar: Matrix,
}

/// Mean of a standard normal truncated to (lo, hi).
pub fn truncated_mean(lo: f64, hi: f64) -> f64 {
    let mass = normal::cdf(hi) - normal::cdf(lo);
    (normal::pdf(lo) - normal::pdf(hi)) / mass
}

/// Replace each category by the truncated-normal mean of its latent interval.
pub fn latent_response_means(matrix: &ResponseMatrix, thresholds: &[ThresholdSet]) -> Result<LatentResponseMatrix> {
    if thresholds.len() != matrix.n_items() {
        return Err(Error::Dimension(format!("{} threshold sets for {} items", thresholds.len(), matrix.n_items())));
    }
    let n = matrix.n_rows();
    let p = matrix.n_items();
    let mut xstar = Matrix::zeros(n, p);
    for j in 0..p {
        let t = &thresholds[j];
        let means: Vec<f64> = (0..t.n_categories()).map(|k| {
            let (lo, hi) = t.bounds(k);
            truncated_mean(lo, hi)
        }).collect();
        for (r, cell) in matrix.columns[j].iter().enumerate() {
            let code = cell.ok_or_else(|| Error::InvalidArgument(format!("missing response in `{}`", matrix.item_ids[j])))?;
            let k = t
                .category_index(code)
                .ok_or_else(|| Error::UnknownCategory { item: matrix.item_ids[j].clone(), code })?;
            xstar[(r, j)] = means[k];
        }
    }
    Ok(LatentResponseMatrix { item_ids: matrix.item_ids.clone(), xstar })
}

/// Thurstone weights Sigma^-1 lambda_g for the general factor.
pub fn regression_weights(fit: &CfaFit) -> Result<Vec<f64>> {
    let sigma = fit.implied();
    let inv = linalg::spd_inverse(&sigma).map_err(|_| Error::Singular("model-implied correlation matrix".into()))?;
    let lg = nalgebra::DVector::from_vec(fit.loadings_general());
    Ok((inv * lg).iter().copied().collect())
}

pub fn regression_scores(fit: &CfaFit, xstar: &LatentResponseMatrix) -> Result<Vec<f64>> {
    if xstar.item_ids != fit.item_ids {
        return Err(Error::Dimension("score columns must match the fitted items in order".into()));
    }
    let w = regression_weights(fit)?;
    Ok(apply_weights(&xstar.xstar, &w))
}

fn apply_weights(x: &Matrix, w: &[f64]) -> Vec<f64> {
    (0..x.nrows()).map(|r| x.row(r).iter().zip(w).map(|(a, b)| a * b).sum()).collect()
}

/// Cohort constants of the min-max map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleFrame {
    pub min: f64,
    pub max: f64,
}

impl ScaleFrame {
    /// Index on this frame, rounded half away from zero and clamped to 0..=100.
    pub fn index(&self, raw: f64) -> u8 {
        (100.0 * (raw - self.min) / (self.max - self.min)).round().clamp(0.0, 100.0) as u8
    }
}

pub fn rescale_minmax(raw: &[f64]) -> Result<(Vec<u8>, ScaleFrame)> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(Error::NoScoreVariance);
    }
    let frame = ScaleFrame { min, max };
    Ok((raw.iter().map(|&x| frame.index(x)).collect(), frame))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurdenThresholds {
    pub centers: Vec<f64>,
    /// Upper edges of every band except the last.
    pub boundaries: Vec<i64>,
}

impl BurdenThresholds {
    pub fn from_boundaries(b1: i64, b2: i64) -> Result<Self> {
        if !(0 <= b1 && b1 < b2 && b2 < 100) {
            return Err(Error::InvalidArgument(format!("boundaries ({b1}, {b2}) must satisfy 0 <= b1 < b2 < 100")));
        }
        Ok(Self { centers: vec![], boundaries: vec![b1, b2] })
    }
}

/// Exact 1-D k-means by dynamic programming over the distinct values.
///
/// Optimal clusters are contiguous in sorted order, so the search is over
/// k - 1 cut points; the best cut for each prefix is non-decreasing in the
/// prefix length, which allows divide and conquer per layer. Returns
/// ascending centers and each point's cluster.
pub fn kmeans_1d(values: &[f64], k: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for x in sorted {
        match pts.last_mut() {
            Some((y, w)) if *y == x => *w += 1.0,
            _ => pts.push((x, 1.0)),
        }
    }
    let d = pts.len();
    if k == 0 || d < k {
        return Err(Error::TooFewDistinct { k, found: d });
    }
    let shift = values.iter().sum::<f64>() / values.len() as f64;
    let mut cw = vec![0.0; d + 1];
    let mut cx = vec![0.0; d + 1];
    let mut cxx = vec![0.0; d + 1];
    for (i, &(x, w)) in pts.iter().enumerate() {
        let y = x - shift;
        cw[i + 1] = cw[i] + w;
        cx[i + 1] = cx[i] + w * y;
        cxx[i + 1] = cxx[i] + w * y * y;
    }
    // Within-segment sum of squares of distinct values a..b.
    let cost = |a: usize, b: usize| {
        let (w, s, q) = (cw[b] - cw[a], cx[b] - cx[a], cxx[b] - cxx[a]);
        (q - s * s / w).max(0.0)
    };
    let mut prev: Vec<f64> = (0..=d).map(|i| if i == 0 { 0.0 } else { cost(0, i) }).collect();
    let mut cuts: Vec<Vec<usize>> = Vec::with_capacity(k);
    cuts.push(vec![0; d + 1]);
    for c in 1..k {
        let mut cur = vec![f64::INFINITY; d + 1];
        let mut arg = vec![0; d + 1];
        // Prefix i uses c + 1 clusters, so i >= c + 1 and the cut j >= c.
        let mut stack = vec![(c + 1, d, c, d - 1)];
        while let Some((lo, hi, olo, ohi)) = stack.pop() {
            if lo > hi {
                continue;
            }
            let mid = (lo + hi) / 2;
            let mut best = (f64::INFINITY, olo);
            for j in olo..=ohi.min(mid - 1) {
                let v = prev[j] + cost(j, mid);
                if v < best.0 {
                    best = (v, j);
                }
            }
            cur[mid] = best.0;
            arg[mid] = best.1;
            if mid > lo {
                stack.push((lo, mid - 1, olo, best.1));
            }
            stack.push((mid + 1, hi, best.1, ohi));
        }
        prev = cur;
        cuts.push(arg);
    }
    let mut bounds = vec![d; k + 1];
    bounds[0] = 0;
    for c in (1..k).rev() {
        bounds[c] = cuts[c][bounds[c + 1]];
    }
    let centers: Vec<f64> = (0..k).map(|c| (cx[bounds[c + 1]] - cx[bounds[c]]) / (cw[bounds[c + 1]] - cw[bounds[c]]) + shift).collect();
    // First distinct value of each cluster after the first.
    let starts: Vec<f64> = (1..k).map(|c| pts[bounds[c]].0).collect();
    let labels = values.iter().map(|&x| starts.partition_point(|&s| s <= x)).collect();
    Ok((centers, labels))
}

pub fn kmeans_thresholds(index: &[u8], k: usize) -> Result<BurdenThresholds> {
    let v: Vec<f64> = index.iter().map(|&x| f64::from(x)).collect();
    let (centers, _) = kmeans_1d(&v, k)?;
    let boundaries = centers.windows(2).map(|w| ((w[0] + w[1]) / 2.0).round() as i64).collect();
    Ok(BurdenThresholds { centers, boundaries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Low,
    Moderate,
    High,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Low => "Low",
            Category::Moderate => "Moderate",
            Category::High => "High",
        }
    }

    pub fn all() -> [Category; 3] {
        [Category::Low, Category::Moderate, Category::High]
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify(index: i64, t: &BurdenThresholds) -> Result<Category> {
    if !(0..=100).contains(&index) {
        return Err(Error::InvalidArgument(format!("index {index} outside 0..=100")));
    }
    let [b1, b2] = t.boundaries[..] else {
        return Err(Error::InvalidArgument(format!("need two boundaries, got {}", t.boundaries.len())));
    };
    Ok(if index <= b1 {
        Category::Low
    } else if index <= b2 {
        Category::Moderate
    } else {
        Category::High
    })
}

pub const PRESETS_TOML: &str = include_str!("../data/presets.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub boundaries: [i64; 2],
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Deserialize)]
struct PresetFile {
    preset: Vec<Preset>,
}

pub fn parse_presets(text: &str) -> Result<Vec<Preset>> {
    let f: PresetFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    for p in &f.preset {
        BurdenThresholds::from_boundaries(p.boundaries[0], p.boundaries[1])?;
    }
    Ok(f.preset)
}

/// A shipped preset by name.
pub fn preset(name: &str) -> Option<BurdenThresholds> {
    parse_presets(PRESETS_TOML)
        .ok()?
        .into_iter()
        .find(|p| p.name == name)
        .map(|p| BurdenThresholds { centers: vec![], boundaries: p.boundaries.to_vec() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CareBiResult {
    pub row_id: String,
    pub raw_score: f64,
    pub index: u8,
    pub category: Option<Category>,
}

pub fn write_scores_csv<W: std::io::Write>(rows: &[CareBiResult], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["row_id", "raw_score", "index", "category"])?;
    for r in rows {
        wr.write_record([
            r.row_id.clone(),
            format!("{:.10}", r.raw_score),
            r.index.to_string(),
            r.category.map_or(String::new(), |c| c.to_string()),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_scores_csv<R: std::io::Read>(r: R) -> Result<Vec<CareBiResult>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| Error::Parse(format!("scores file: bad {what} `{}`", rec.iter().collect::<Vec<_>>().join(",")));
        out.push(CareBiResult {
            row_id: field(0).to_string(),
            raw_score: field(1).parse().map_err(|_| bad("raw_score"))?,
            index: field(2).parse().map_err(|_| bad("index"))?,
            category: match field(3) {
                "" => None,
                "Low" => Some(Category::Low),
                "Moderate" => Some(Category::Moderate),
                "High" => Some(Category::High),
                _ => return Err(bad("category")),
            },
        });
    }
    Ok(out)
}

pub const MODEL_FORMAT: &str = "carebi-scoring-model";
pub const MODEL_VERSION: u32 = 1;

/// Frozen scoring model: thresholds, loadings, weights and the fitting
/// cohort's min-max frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringModel {
    pub format: String,
    pub version: u32,
    pub item_ids: Vec<String>,
    pub factors: Vec<String>,
    pub loadings: Vec<Vec<f64>>,
    pub thresholds: Vec<ThresholdSet>,
    pub weights: Vec<f64>,
    pub frame: ScaleFrame,
    pub adjustment: Adjustment,
    pub n_obs: usize,
}

impl ScoringModel {
    /// Score the fitting cohort and freeze its frame.
    pub fn fit(fit: &CfaFit, matrix: &ResponseMatrix) -> Result<(Self, Vec<f64>, Vec<u8>)> {
        let xs = latent_response_means(matrix, &fit.thresholds)?;
        let raw = regression_scores(fit, &xs)?;
        let (index, frame) = rescale_minmax(&raw)?;
        let model = Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            item_ids: fit.item_ids.clone(),
            factors: fit.factors.clone(),
            loadings: linalg::to_rows(&fit.loadings),
            thresholds: fit.thresholds.clone(),
            weights: regression_weights(fit)?,
            frame,
            adjustment: fit.adjustment,
            n_obs: fit.n_obs,
        };
        Ok((model, raw, index))
    }

    pub fn check(&self) -> Result<()> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model document {} v{} (expected {MODEL_FORMAT} v{MODEL_VERSION})",
                self.format, self.version
            )));
        }
        Ok(())
    }

    /// Raw scores and frozen-frame indices for new respondents.
    pub fn score(&self, matrix: &ResponseMatrix) -> Result<(Vec<f64>, Vec<u8>)> {
        self.check()?;
        let m = matrix.select(&self.item_ids)?;
        let xs = latent_response_means(&m, &self.thresholds)?;
        let raw = apply_weights(&xs.xstar, &self.weights);
        let idx = raw.iter().map(|&r| self.frame.index(r)).collect();
        Ok((raw, idx))
    }
}

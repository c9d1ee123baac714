//! Pipeline stages. Each reads declared artifacts under the output
//! directory, writes its own, and records hashes in the manifest.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use carebi::cfa::{self, CfaFit, CfaOptions, CfaReport, FitIndices, ModelSpec, NullFit};
use carebi::codebook::{self, ApplyOptions, Codebook, RawTable, ResponseMatrix};
use carebi::efa::{self, EfaReport, RotationOptions};
use carebi::linalg::{self, Matrix};
use carebi::polycorr::{self, PolychoricMatrix, ThresholdSet, WeightMethod, WeightSet};
use carebi::scoring::{self, BurdenThresholds, CareBiResult, ScoringModel};
use carebi::seed;
use carebi::simulate::{self, CohortOptions, TrueModel};
use carebi::validation::{self, JoinOptions};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{streams, Loaded, Weights};
use crate::error::{CliError, Result};
use crate::manifest::{self, RunManifest, StageRecord};

/// Bookkeeping for one stage invocation.
pub struct Stage<'a> {
    pub name: &'static str,
    pub ctx: &'a Loaded,
    started: Instant,
    record: StageRecord,
}

impl<'a> Stage<'a> {
    pub fn new(name: &'static str, ctx: &'a Loaded) -> Self {
        Self { name, ctx, started: Instant::now(), record: StageRecord::default() }
    }

    fn out_path(&self, rel: &str) -> PathBuf {
        self.ctx.out.join(rel)
    }

    /// An upstream artifact; missing means the producer has not run.
    fn artifact(&mut self, rel: &str, producer: &str) -> Result<PathBuf> {
        let p = self.out_path(rel);
        if !p.is_file() {
            return Err(CliError::MissingArtifact {
                stage: self.name.to_string(),
                path: rel.to_string(),
                producer: producer.to_string(),
            });
        }
        self.record.inputs.insert(rel.to_string(), manifest::hash_file(&p)?);
        Ok(p)
    }

    /// A file outside the output directory.
    fn external(&mut self, p: &Path) -> Result<PathBuf> {
        if !p.is_file() {
            return Err(CliError::Config(format!("stage `{}`: input file {} does not exist", self.name, p.display())));
        }
        self.record.inputs.insert(p.display().to_string(), manifest::hash_file(p)?);
        Ok(p.to_path_buf())
    }

    fn read_text(&mut self, rel: &str, producer: &str) -> Result<String> {
        let p = self.artifact(rel, producer)?;
        std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))
    }

    fn read_json<T: DeserializeOwned>(&mut self, rel: &str, producer: &str) -> Result<T> {
        let text = self.read_text(rel, producer)?;
        serde_json::from_str(&text).map_err(|e| CliError::Format { path: self.out_path(rel), message: e.to_string() })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.out_path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        self.record.outputs.insert(rel.to_string(), manifest::sha256_hex(bytes));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("artifact serializes") + "\n";
        self.write(rel, text.as_bytes())
    }

    fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> carebi::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    pub fn finish(mut self) -> Result<Vec<String>> {
        self.record.seconds = (self.started.elapsed().as_secs_f64() * 1000.0).round() / 1000.0;
        let outputs = self.record.outputs.keys().cloned().collect();
        let hash = manifest::sha256_hex(self.ctx.canonical().as_bytes());
        RunManifest::update(&self.ctx.out, &hash, self.name, self.record)?;
        Ok(outputs)
    }
}

fn sub_seed(ctx: &Loaded, stream: u64) -> u64 {
    seed::derive(ctx.config.seed, stream)
}

fn load_codebook(st: &mut Stage) -> Result<Codebook> {
    match &st.ctx.config.paths.codebook {
        Some(p) => {
            let p = st.external(&st.ctx.resolve(p))?;
            let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
            Ok(codebook::parse_codebook(&text)?)
        }
        None => Ok(Codebook::canonical()),
    }
}

fn load_raw(st: &mut Stage) -> Result<RawTable> {
    let rel = st
        .ctx
        .config
        .paths
        .raw
        .clone()
        .ok_or_else(|| CliError::Config(format!("stage `{}` needs paths.raw", st.name)))?;
    let p = st.external(&st.ctx.resolve(&rel))?;
    let f = std::fs::File::open(&p).map_err(|e| CliError::io(&p, e))?;
    Ok(RawTable::read_csv(f)?)
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub n: usize,
    pub seed: u64,
    pub population_omega_h: f64,
    pub outcomes: Vec<String>,
}

pub fn simulate(ctx: &Loaded) -> Result<Vec<String>> {
    let mut st = Stage::new("simulate", ctx);
    let sc = &ctx.config.simulate;
    let model = match &sc.model {
        Some(p) => {
            let p = st.external(&ctx.resolve(p))?;
            TrueModel::from_toml(&std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?)?
        }
        None => simulate::carebi_fixture(),
    };
    let cb = load_codebook(&mut st)?;
    let opts = CohortOptions {
        n: sc.n,
        seed: sub_seed(ctx, streams::SIMULATE),
        missing_frac: sc.missing_frac,
        max_per_cluster: sc.max_per_cluster,
        cluster_sd: sc.cluster_sd,
    };
    let (raw, sim) = simulate::synthetic_cohort(&model, &cb, &opts)?;
    st.write_with("simulate/raw.csv", |b| raw.write_csv(b))?;
    st.write_with("simulate/truth.csv", |b| sim.write_truth_csv(&model.groups, b))?;
    st.write("simulate/true_model.toml", model.to_toml().as_bytes())?;
    let summary = SimulateSummary {
        n: sc.n,
        seed: opts.seed,
        population_omega_h: simulate::population_omega(&model),
        outcomes: simulate::COHORT_OUTCOMES.iter().map(|s| s.to_string()).collect(),
    };
    st.write_json("simulate/summary.json", &summary)?;
    st.finish()
}

// -------------------------------------------------------------------- prep

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepItem {
    pub id: String,
    pub n_levels: u16,
    pub missing: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepSummary {
    pub n_rows: usize,
    pub n_clusters: usize,
    pub max_missing: f64,
    pub items: Vec<PrepItem>,
}

impl PrepSummary {
    pub fn levels(&self) -> HashMap<String, u16> {
        self.items.iter().map(|i| (i.id.clone(), i.n_levels)).collect()
    }
}

/// Missing cells per item before imputation.
fn missing_counts(raw: &RawTable, cb: &Codebook) -> Result<Vec<usize>> {
    cb.items
        .iter()
        .map(|item| {
            let col = match &item.composite {
                Some(rule) => {
                    codebook::build_composite(&raw.int_column(&rule.gate_id)?, &raw.int_column(&rule.level_id)?, rule, item.n_levels - 1)?
                }
                None => raw.int_column(item.source_column())?.into_iter().map(|v| v.map(|_| 1)).collect(),
            };
            Ok(col.iter().filter(|c| c.is_none()).count())
        })
        .collect()
}

pub fn prep(ctx: &Loaded) -> Result<Vec<String>> {
    let mut st = Stage::new("prep", ctx);
    let raw = load_raw(&mut st)?;
    let cb = load_codebook(&mut st)?;
    let pc = &ctx.config.prep;
    let opts = ApplyOptions {
        row_id_column: pc.row_id_column.clone(),
        cluster_column: pc.cluster_column.clone(),
        max_missing_frac: pc.max_missing,
    };
    let m = codebook::apply_codebook(&raw, &cb, &opts)?;
    let missing = missing_counts(&raw, &cb)?;
    let mut clusters: Vec<&str> = m.cluster_ids.iter().flatten().map(String::as_str).collect();
    clusters.sort_unstable();
    clusters.dedup();
    let summary = PrepSummary {
        n_rows: m.n_rows(),
        n_clusters: clusters.len(),
        max_missing: pc.max_missing,
        items: cb
            .items
            .iter()
            .zip(missing)
            .map(|(it, missing)| PrepItem { id: it.id.clone(), n_levels: it.n_levels, missing })
            .collect(),
    };
    st.write_with("prep/responses.csv", |b| m.write_csv(b))?;
    st.write_json("prep/summary.json", &summary)?;
    st.finish()
}

fn load_responses(st: &mut Stage) -> Result<(ResponseMatrix, PrepSummary)> {
    let summary: PrepSummary = st.read_json("prep/summary.json", "prep")?;
    let p = st.artifact("prep/responses.csv", "prep")?;
    let f = std::fs::File::open(&p).map_err(|e| CliError::io(&p, e))?;
    Ok((ResponseMatrix::read_csv(f, &summary.levels())?, summary))
}

// -------------------------------------------------------------------- corr

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolychoricDoc {
    pub item_ids: Vec<String>,
    pub rho: Vec<Vec<f64>>,
    pub thresholds: Vec<ThresholdSet>,
    pub n_obs: usize,
    pub repaired: bool,
    pub min_eigenvalue: f64,
}

impl PolychoricDoc {
    fn from_matrix(m: &PolychoricMatrix) -> Self {
        Self {
            item_ids: m.item_ids.clone(),
            rho: linalg::to_rows(&m.rho),
            thresholds: m.thresholds.clone(),
            n_obs: m.n_obs,
            repaired: m.repaired,
            min_eigenvalue: m.min_eigenvalue,
        }
    }

    fn to_matrix(&self) -> PolychoricMatrix {
        PolychoricMatrix {
            item_ids: self.item_ids.clone(),
            rho: linalg::from_rows(&self.rho),
            thresholds: self.thresholds.clone(),
            n_obs: self.n_obs,
            repaired: self.repaired,
            min_eigenvalue: self.min_eigenvalue,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KmoDoc {
    pub overall: f64,
    pub gate: f64,
    pub passes: bool,
    pub per_item: Vec<(String, f64)>,
}

pub fn corr(ctx: &Loaded) -> Result<Vec<String>> {
    let mut st = Stage::new("corr", ctx);
    let (m, _) = load_responses(&mut st)?;
    let cc = &ctx.config.corr;
    let pm = polycorr::polychoric_matrix(&m)?;
    let k = polycorr::kmo(&pm.rho)?;
    if cc.enforce_kmo && !k.passes(cc.kmo_gate) {
        return Err(CliError::Config(format!("KMO {:.3} is below the gate {:.2}", k.overall, cc.kmo_gate)));
    }
    let weights = match cc.weights {
        Weights::Bootstrap => polycorr::asymptotic_variances(&m, cc.n_boot, sub_seed(ctx, streams::BOOTSTRAP))?,
        Weights::Unit => WeightSet::unit(pm.p()),
    };
    let mut csv = String::from("item");
    for id in &pm.item_ids {
        csv.push(',');
        csv.push_str(id);
    }
    csv.push('\n');
    for (i, id) in pm.item_ids.iter().enumerate() {
        csv.push_str(id);
        for j in 0..pm.p() {
            csv.push(',');
            csv.push_str(&f6(pm.rho[(i, j)]));
        }
        csv.push('\n');
    }
    st.write("corr/polychoric.csv", csv.as_bytes())?;
    st.write_json("corr/polychoric.json", &PolychoricDoc::from_matrix(&pm))?;
    st.write_json(
        "corr/kmo.json",
        &KmoDoc {
            overall: k.overall,
            gate: cc.kmo_gate,
            passes: k.passes(cc.kmo_gate),
            per_item: pm.item_ids.iter().cloned().zip(k.per_item_msa.iter().copied()).collect(),
        },
    )?;
    st.write_json("corr/weights.json", &weights)?;
    st.finish()
}

// --------------------------------------------------------------------- efa

pub fn efa(ctx: &Loaded) -> Result<Vec<String>> {
    let mut st = Stage::new("efa", ctx);
    let (m, _) = load_responses(&mut st)?;
    let doc: PolychoricDoc = st.read_json("corr/polychoric.json", "corr")?;
    let ec = &ctx.config.efa;
    let rho = linalg::from_rows(&doc.rho);
    let pa = efa::parallel_analysis(&m, ec.n_sims, sub_seed(ctx, streams::PARALLEL), ec.pa_criterion)?;
    let n_factors = match ec.n_factors {
        Some(n) => n,
        None if pa.suggested_factors == 0 => {
            return Err(CliError::Config("parallel analysis suggests no factors; set efa.n_factors".into()))
        }
        None => pa.suggested_factors,
    };
    let scree = efa::scree_table(&rho);
    let opts = RotationOptions { gamma: ec.gamma, restarts: ec.restarts, seed: sub_seed(ctx, streams::ROTATION), ..Default::default() };
    let sol = efa::run_efa(&rho, &doc.item_ids, n_factors, doc.n_obs, &opts)?;
    let retention = efa::retention_filter(&sol, &ec.rule(), &ec.overrides)?;

    let mut pa_csv = String::from("rank,observed,reference\n");
    for (r, (o, f)) in pa.observed_eigenvalues.iter().zip(&pa.reference_eigenvalues).enumerate() {
        pa_csv.push_str(&format!("{},{},{}\n", r + 1, f6(*o), f6(*f)));
    }
    let mut scree_csv = String::from("rank,eigenvalue,difference\n");
    for r in &scree {
        scree_csv.push_str(&format!("{},{},{}\n", r.rank, f6(r.eigenvalue), r.difference.map_or(String::new(), f6)));
    }
    let mut ret_csv = String::from("item,primary_factor,primary_loading,max_cross_loading,communality,kept,reason\n");
    for e in &retention.entries {
        let reason = e.reason.map_or(String::new(), |r| serde_json::to_value(r).unwrap().as_str().unwrap_or("").to_string());
        ret_csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.item,
            e.primary_factor,
            f6(e.primary_loading),
            f6(e.max_cross_loading),
            f6(e.communality),
            e.kept,
            reason
        ));
    }
    st.write("efa/parallel.csv", pa_csv.as_bytes())?;
    st.write("efa/scree.csv", scree_csv.as_bytes())?;
    st.write_with("efa/pattern.csv", |b| sol.write_pattern_csv(b))?;
    st.write("efa/retention.csv", ret_csv.as_bytes())?;
    st.write_json("efa/efa.json", &EfaReport::new(&sol, Some(pa), scree, Some(retention)))?;
    st.finish()
}

// --------------------------------------------------------------------- cfa

/// Everything needed to rebuild a [`CfaFit`] for scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDoc {
    pub item_ids: Vec<String>,
    pub factors: Vec<String>,
    pub general: bool,
    pub loadings: Vec<Vec<f64>>,
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
    pub adjustment: cfa::Adjustment,
    pub weight_method: WeightMethod,
    pub flagged: Vec<String>,
}

impl FitDoc {
    fn new(f: &CfaFit) -> Self {
        Self {
            item_ids: f.item_ids.clone(),
            factors: f.factors.clone(),
            general: f.general,
            loadings: linalg::to_rows(&f.loadings),
            group_of: f.group_of.clone(),
            free: f.free.clone(),
            thresholds: f.thresholds.clone(),
            n_obs: f.n_obs,
            f_min: f.f_min,
            f_start: f.f_start,
            chi_square: f.chi_square,
            df: f.df,
            null: f.null,
            indices: f.indices,
            converged: f.converged,
            iterations: f.iterations,
            grad_max: f.grad_max,
            adjustment: f.adjustment,
            weight_method: f.weight_method,
            flagged: f.flagged.clone(),
        }
    }

    fn into_fit(self) -> CfaFit {
        CfaFit {
            item_ids: self.item_ids,
            factors: self.factors,
            general: self.general,
            loadings: linalg::from_rows(&self.loadings),
            group_of: self.group_of,
            free: self.free,
            thresholds: self.thresholds,
            n_obs: self.n_obs,
            f_min: self.f_min,
            f_start: self.f_start,
            chi_square: self.chi_square,
            df: self.df,
            null: self.null,
            indices: self.indices,
            converged: self.converged,
            iterations: self.iterations,
            grad_max: self.grad_max,
            adjustment: self.adjustment,
            weight_method: self.weight_method,
            flagged: self.flagged,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HigherOrderDoc {
    pub first_order: Vec<String>,
    pub second_order: Vec<String>,
    pub second_of: Vec<usize>,
    pub loadings: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub chi_square: f64,
    pub df: f64,
    pub indices: Option<FitIndices>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HigherOrderOutcome {
    Fitted(HigherOrderDoc),
    Failed { error: String },
}

fn select_items(pm: &PolychoricMatrix, w: &WeightSet, keep: &[String]) -> Result<(PolychoricMatrix, WeightSet)> {
    let idx: Vec<usize> = keep
        .iter()
        .map(|id| pm.item_ids.iter().position(|x| x == id).ok_or_else(|| CliError::Config(format!("unknown item `{id}`"))))
        .collect::<Result<_>>()?;
    let full_pairs = polycorr::pairs(pm.p());
    let lookup: HashMap<(usize, usize), usize> = full_pairs.iter().enumerate().map(|(k, &pr)| (pr, k)).collect();
    let variances = polycorr::pairs(idx.len()).into_iter().map(|(a, b)| w.variances[lookup[&(idx[a], idx[b])]]).collect();
    let rho = Matrix::from_fn(idx.len(), idx.len(), |a, b| pm.rho[(idx[a], idx[b])]);
    let mut sub = PolychoricMatrix::from_matrix(keep.to_vec(), rho, pm.n_obs);
    sub.thresholds = idx.iter().map(|&i| pm.thresholds[i].clone()).collect();
    sub.repaired = pm.repaired;
    Ok((sub, WeightSet { variances, method: w.method }))
}

fn base_model(st: &mut Stage, items: &[String]) -> Result<(ModelSpec, Vec<(String, String)>, Vec<String>)> {
    match &st.ctx.config.cfa.model {
        Some(p) => {
            let p = st.external(&st.ctx.resolve(p))?;
            let spec = ModelSpec::from_toml(&std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?)?;
            let (map, labels) = match &spec.hierarchy {
                Some(h) => (
                    spec.groups.iter().zip(&h.second_of).map(|(g, &s)| (g.clone(), h.second_order[s].clone())).collect(),
                    h.second_order.clone(),
                ),
                None => (vec![], vec![]),
            };
            Ok((spec, map, labels))
        }
        None => {
            if items != Codebook::canonical().ids() {
                return Err(CliError::Config("items differ from the bundled codebook; set cfa.model".into()));
            }
            let map = cfa::CAREBI_SECOND_ORDER
                .iter()
                .flat_map(|(s, fs)| fs.iter().map(move |f| (f.to_string(), s.to_string())))
                .collect();
            let labels = cfa::CAREBI_SECOND_ORDER.iter().map(|(s, _)| s.to_string()).collect();
            Ok((cfa::carebi_spec(items)?, map, labels))
        }
    }
}

fn higher_order(
    spec: &ModelSpec,
    map: &[(String, String)],
    labels: &[String],
    pm: &PolychoricMatrix,
    w: &WeightSet,
) -> HigherOrderOutcome {
    let map: Vec<(String, String)> = map.iter().filter(|(f, _)| spec.groups.contains(f)).cloned().collect();
    let labels: Vec<String> = labels.iter().filter(|l| map.iter().any(|(_, s)| s == *l)).cloned().collect();
    let fitted = cfa::build_higher_order_spec(spec, &map, &labels).and_then(|(ho, mut warnings)| {
        let f = cfa::fit_higher_order(&ho, pm, w, &CfaOptions::default())?;
        let second_of = ho.hierarchy.as_ref().map(|h| h.second_of.clone()).unwrap_or_default();
        warnings.extend(f.warnings.iter().cloned());
        warnings.dedup();
        Ok(HigherOrderDoc {
            first_order: f.first_order.clone(),
            second_order: f.second_order.clone(),
            loadings: linalg::to_rows(&f.loadings),
            beta: f.beta.clone(),
            gamma: f.gamma.clone(),
            phi: linalg::to_rows(&f.phi(&second_of)),
            second_of,
            chi_square: f.chi_square,
            df: f.df,
            indices: f.indices,
            converged: f.converged,
            warnings,
        })
    });
    match fitted {
        Ok(d) => HigherOrderOutcome::Fitted(d),
        Err(e) => HigherOrderOutcome::Failed { error: e.to_string() },
    }
}

pub fn cfa(ctx: &Loaded) -> Result<Vec<String>> {
    let mut st = Stage::new("cfa", ctx);
    let doc: PolychoricDoc = st.read_json("corr/polychoric.json", "corr")?;
    let weights: WeightSet = st.read_json("corr/weights.json", "corr")?;
    let report: EfaReport = st.read_json("efa/efa.json", "efa")?;
    let pm = doc.to_matrix();
    let kept = report.retention.map(|r| r.kept).unwrap_or_else(|| pm.item_ids.clone());
    let (base, map, labels) = base_model(&mut st, &pm.item_ids)?;
    let spec = base.with_items(&kept)?;
    let (sub, w) = select_items(&pm, &weights, &spec.items)?;
    let fit = cfa::fit_dwls(&spec, &sub, &w, &CfaOptions::default())?;

    let mut csv = String::from("item");
    for f in &fit.factors {
        csv.push(',');
        csv.push_str(f);
    }
    csv.push_str(",uniqueness\n");
    let u = fit.uniquenesses();
    for (i, id) in fit.item_ids.iter().enumerate() {
        csv.push_str(id);
        for c in 0..fit.factors.len() {
            csv.push(',');
            csv.push_str(&f6(fit.loadings[(i, c)]));
        }
        csv.push(',');
        csv.push_str(&f6(u[i]));
        csv.push('\n');
    }
    st.write("cfa/model.toml", spec.to_toml().as_bytes())?;
    st.write("cfa/loadings.csv", csv.as_bytes())?;
    st.write_json("cfa/fit.json", &FitDoc::new(&fit))?;
    st.write_json("cfa/cfa.json", &CfaReport::new(&fit))?;
    if ctx.config.cfa.higher_order && !labels.is_empty() {
        st.write_json("cfa/higher_order.json", &higher_order(&spec, &map, &labels, &sub, &w))?;
    }
    st.finish()
}

// ------------------------------------------------------------------- score

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub quartiles: [u8; 5],
    /// Counts in [0, 10), [10, 20), ..., [90, 100].
    pub histogram: Vec<usize>,
}

fn summarize(index: &[u8]) -> ScoreSummary {
    let n = index.len();
    let mean = index.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
    let var = index.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    let mut s = index.to_vec();
    s.sort_unstable();
    let q = |p: f64| s[((n - 1) as f64 * p).round() as usize];
    let mut histogram = vec![0; 10];
    for &v in index {
        histogram[usize::from(v / 10).min(9)] += 1;
    }
    ScoreSummary { n, mean, sd: var.sqrt(), quartiles: [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)], histogram }
}

pub fn score(ctx: &Loaded) -> Result<Vec<String>> {
    let mut st = Stage::new("score", ctx);
    let (m, _) = load_responses(&mut st)?;
    let doc: FitDoc = st.read_json("cfa/fit.json", "cfa")?;
    let fit = doc.into_fit();
    let sub = m.select(&fit.item_ids)?;
    let (model, raw, index) = ScoringModel::fit(&fit, &sub)?;
    let rows: Vec<CareBiResult> = m
        .row_ids
        .iter()
        .zip(raw.iter().zip(&index))
        .map(|(id, (&r, &i))| CareBiResult { row_id: id.clone(), raw_score: r, index: i, category: None })
        .collect();
    st.write_json("score/scoring_model.json", &model)?;
    st.write_with("score/scores.csv", |b| scoring::write_scores_csv(&rows, b))?;
    st.write_json("score/summary.json", &summarize(&index))?;
    st.finish()
}

// ---------------------------------------------------------------- classify

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Band {
    pub label: String,
    pub lo: i64,
    pub hi: i64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdDoc {
    pub method: String,
    pub k: usize,
    pub centers: Vec<f64>,
    pub boundaries: Vec<i64>,
    pub bands: Vec<Band>,
}

fn read_scores(st: &mut Stage, rel: &str, producer: &str) -> Result<Vec<CareBiResult>> {
    let p = st.artifact(rel, producer)?;
    let f = std::fs::File::open(&p).map_err(|e| CliError::io(&p, e))?;
    Ok(scoring::read_scores_csv(f)?)
}

pub fn classify(ctx: &Loaded) -> Result<Vec<String>> {
    let mut st = Stage::new("classify", ctx);
    let mut rows = read_scores(&mut st, "score/scores.csv", "score")?;
    let cc = &ctx.config.classify;
    let index: Vec<u8> = rows.iter().map(|r| r.index).collect();
    let (method, t): (String, BurdenThresholds) = match &cc.preset {
        Some(name) => (format!("preset:{name}"), scoring::preset(name).expect("validated preset")),
        None => ("kmeans".to_string(), scoring::kmeans_thresholds(&index, cc.k)?),
    };
    let three = t.boundaries.len() == 2;
    for r in rows.iter_mut() {
        r.category = if three { Some(scoring::classify(i64::from(r.index), &t)?) } else { None };
    }
    let mut edges = vec![-1];
    edges.extend(t.boundaries.iter().copied());
    edges.push(100);
    let labels: Vec<String> = if three {
        scoring::Category::all().iter().map(|c| c.to_string()).collect()
    } else {
        (1..=edges.len() - 1).map(|b| format!("band {b}")).collect()
    };
    let bands: Vec<Band> = edges
        .windows(2)
        .zip(labels)
        .map(|(w, label)| Band {
            label,
            lo: w[0] + 1,
            hi: w[1],
            count: index.iter().filter(|&&v| i64::from(v) > w[0] && i64::from(v) <= w[1]).count(),
        })
        .collect();
    let mut summary = String::from("band,lo,hi,count,share\n");
    for b in &bands {
        summary.push_str(&format!("{},{},{},{},{:.4}\n", b.label, b.lo, b.hi, b.count, b.count as f64 / rows.len() as f64));
    }
    let doc = ThresholdDoc { method, k: t.boundaries.len() + 1, centers: t.centers.clone(), boundaries: t.boundaries.clone(), bands };
    st.write_json("classify/thresholds.json", &doc)?;
    st.write_with("classify/scores.csv", |b| scoring::write_scores_csv(&rows, b))?;
    st.write("classify/summary.csv", summary.as_bytes())?;
    st.finish()
}

// ---------------------------------------------------------------- validate

pub fn validate(ctx: &Loaded) -> Result<Vec<String>> {
    let mut st = Stage::new("validate", ctx);
    let specs = &ctx.config.validate.outcomes;
    if specs.is_empty() {
        return Err(CliError::Config("no [[validate.outcome]] entries".into()));
    }
    let scores = read_scores(&mut st, "classify/scores.csv", "classify")?;
    let raw = load_raw(&mut st)?;
    let opts = JoinOptions { row_id_column: ctx.config.prep.row_id_column.clone(), cluster_column: ctx.config.prep.cluster_column.clone() };
    let report = validation::validity_table(specs, &scores, &raw, &opts)?;
    st.write_with("validate/validity.csv", |b| report.write_csv(b))?;
    st.write("validate/validity.txt", report.to_text().as_bytes())?;
    st.write_json("validate/validity.json", &report)?;
    st.finish()
}

/// Every file a stage may write, for the report's gap detection.
pub fn known_artifacts() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("prep/summary.json", "prep"),
        ("corr/kmo.json", "corr"),
        ("efa/efa.json", "efa"),
        ("cfa/cfa.json", "cfa"),
        ("cfa/higher_order.json", "cfa"),
        ("score/summary.json", "score"),
        ("classify/thresholds.json", "classify"),
        ("validate/validity.json", "validate"),
        ("simulate/summary.json", "simulate"),
    ])
}

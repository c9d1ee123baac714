//! Consolidated markdown report over whatever artifacts exist.

use std::fmt::Write as _;
use std::path::Path;

use carebi::cfa::CfaReport;
use carebi::efa::EfaReport;
use serde::de::DeserializeOwned;

use crate::config::Loaded;
use crate::error::{CliError, Result};
use crate::manifest;
use crate::stages::{self, HigherOrderOutcome, KmoDoc, PrepSummary, ScoreSummary, SimulateSummary, ThresholdDoc};

pub const FILE: &str = "report/report.md";

fn load<T: DeserializeOwned>(out: &Path, rel: &str) -> Result<Option<T>> {
    let p = out.join(rel);
    if !p.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| CliError::Format { path: p, message: e.to_string() })
}

fn gap(md: &mut String, rel: &str, producer: &str) {
    let _ = writeln!(md, "_Not available: `{rel}` is missing (run `carebi {producer}`)._\n");
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "yes"
    } else {
        "no"
    }
}

pub fn render(out: &Path) -> Result<String> {
    if !stages::known_artifacts().keys().any(|rel| out.join(rel).is_file()) {
        return Err(CliError::NoArtifacts(out.to_path_buf()));
    }
    let mut md = String::from("# CareBI pipeline report\n\n");

    md.push_str("## Data\n\n");
    match load::<PrepSummary>(out, "prep/summary.json")? {
        Some(s) => {
            let _ = writeln!(md, "Rows: {}. Clusters: {}. Items: {}.\n", s.n_rows, s.n_clusters, s.items.len());
            md.push_str("| item | levels | missing before imputation |\n|---|---:|---:|\n");
            for it in &s.items {
                let _ = writeln!(md, "| {} | {} | {} |", it.id, it.n_levels, it.missing);
            }
            md.push('\n');
        }
        None => gap(&mut md, "prep/summary.json", "prep"),
    }
    if let Some(s) = load::<SimulateSummary>(out, "simulate/summary.json")? {
        let _ = writeln!(md, "Synthetic cohort: N = {}, seed {}, population omega_h {:.4}.\n", s.n, s.seed, s.population_omega_h);
    }

    md.push_str("## Sampling adequacy\n\n");
    match load::<KmoDoc>(out, "corr/kmo.json")? {
        Some(k) => {
            let verdict = if k.passes { "passes" } else { "below" };
            let _ = writeln!(md, "KMO = {:.3} ({verdict} the {:.2} gate).\n", k.overall, k.gate);
        }
        None => gap(&mut md, "corr/kmo.json", "corr"),
    }

    let efa: Option<EfaReport> = load(out, "efa/efa.json")?;
    md.push_str("## Number of factors\n\n");
    match &efa {
        Some(e) => {
            if let Some(pa) = &e.parallel_analysis {
                let _ = writeln!(
                    md,
                    "Parallel analysis ({} permutations, {:?} reference) suggests {} factors; {} extracted.\n",
                    pa.n_sims, pa.criterion, pa.suggested_factors, e.n_factors
                );
            } else {
                let _ = writeln!(md, "{} factors extracted.\n", e.n_factors);
            }
            md.push_str("| rank | eigenvalue |\n|---:|---:|\n");
            for r in e.scree.iter().take(8) {
                let _ = writeln!(md, "| {} | {:.3} |", r.rank, r.eigenvalue);
            }
            md.push('\n');
            if let Some(fit) = &e.fit {
                let _ = writeln!(md, "EFA fit: TLI {:.3}, RMSEA {:.3}, BIC {:.2}.\n", fit.tli, fit.rmsea, fit.bic);
            }
        }
        None => gap(&mut md, "efa/efa.json", "efa"),
    }

    md.push_str("## Item retention\n\n");
    match efa.as_ref().and_then(|e| e.retention.as_ref()) {
        Some(r) => {
            let _ = writeln!(
                md,
                "Rule: primary loading > {:.2}, cross-loading < {:.2}, communality >= {:.2}. Kept {} of {}.\n",
                r.rule.load_min,
                r.rule.cross_max,
                r.rule.comm_min,
                r.kept.len(),
                r.entries.len()
            );
            md.push_str("| item | factor | primary | max cross | h2 | kept | note |\n|---|---:|---:|---:|---:|---|---|\n");
            for e in &r.entries {
                let note = e.reason.map(|d| format!("{d:?}")).unwrap_or_default();
                let _ = writeln!(
                    md,
                    "| {} | {} | {:.3} | {:.3} | {:.3} | {} | {} |",
                    e.item,
                    e.primary_factor,
                    e.primary_loading,
                    e.max_cross_loading,
                    e.communality,
                    mark(e.kept),
                    note
                );
            }
            md.push('\n');
        }
        None => gap(&mut md, "efa/efa.json", "efa"),
    }

    let cfa: Option<CfaReport> = load(out, "cfa/cfa.json")?;
    md.push_str("## Bifactor fit\n\n");
    match &cfa {
        Some(c) => {
            let _ = writeln!(md, "DWLS chi-square {:.2} on {} df ({:?}); converged: {}.\n", c.chi_square, c.df, c.adjustment, mark(c.converged));
            match (&c.indices, &c.verdict) {
                (Some(ix), Some(v)) => {
                    md.push_str("| criterion | value | target | met |\n|---|---:|---|---|\n");
                    let _ = writeln!(md, "| TLI | {:.3} | >= 0.90 | {} |", ix.tli, mark(v.tli_ok));
                    let _ = writeln!(md, "| CFI | {:.3} | >= 0.90 | {} |", ix.cfi, mark(v.cfi_ok));
                    let _ = writeln!(md, "| RMSEA | {:.3} | <= 0.08 | {} |", ix.rmsea, mark(v.rmsea_ok));
                    let _ = writeln!(md, "| omega_h | {:.3} | >= 0.70 | {} |", c.omega.omega_h, mark(v.omega_ok));
                    let verdict = if v.accepted { "accept model" } else { "refine model" };
                    let _ = writeln!(md, "\nVerdict: **{verdict}**.\n");
                }
                _ => md.push_str("Fit indices unavailable (zero degrees of freedom or null model fit).\n\nVerdict: **refine model**.\n\n"),
            }
            if !c.flagged.is_empty() {
                let _ = writeln!(md, "Flagged items: {}.\n", c.flagged.join(", "));
            }
        }
        None => gap(&mut md, "cfa/cfa.json", "cfa"),
    }

    md.push_str("## Reliability\n\n");
    match &cfa {
        Some(c) => {
            let _ = writeln!(md, "omega_h = {:.3}; explained common variance = {:.3}.\n", c.omega.omega_h, c.omega.explained_common_variance);
            md.push_str("| group factor | omega_s |\n|---|---:|\n");
            for (name, v) in &c.omega.omega_s {
                let _ = writeln!(md, "| {name} | {v:.3} |");
            }
            md.push('\n');
        }
        None => gap(&mut md, "cfa/cfa.json", "cfa"),
    }
    match load::<HigherOrderOutcome>(out, "cfa/higher_order.json")? {
        Some(HigherOrderOutcome::Fitted(h)) => {
            md.push_str("Second-order structure (interpretation only):\n\n| first order | second order | loading |\n|---|---|---:|\n");
            for (k, f) in h.first_order.iter().enumerate() {
                let _ = writeln!(md, "| {} | {} | {:.3} |", f, h.second_order[h.second_of[k]], h.beta[k]);
            }
            md.push('\n');
            for w in &h.warnings {
                let _ = writeln!(md, "- {w}");
            }
            if !h.warnings.is_empty() {
                md.push('\n');
            }
        }
        Some(HigherOrderOutcome::Failed { error }) => {
            let _ = writeln!(md, "Second-order model not fitted: {error}.\n");
        }
        None => {}
    }

    md.push_str("## Score distribution\n\n");
    match load::<ScoreSummary>(out, "score/summary.json")? {
        Some(s) => {
            let q = s.quartiles;
            let _ = writeln!(
                md,
                "N = {}, mean {:.2}, SD {:.2}; min {}, Q1 {}, median {}, Q3 {}, max {}.\n",
                s.n, s.mean, s.sd, q[0], q[1], q[2], q[3], q[4]
            );
            md.push_str("| range | count |\n|---|---:|\n");
            for (b, c) in s.histogram.iter().enumerate() {
                let hi = if b == 9 { 100 } else { b * 10 + 9 };
                let _ = writeln!(md, "| {}-{} | {} |", b * 10, hi, c);
            }
            md.push('\n');
        }
        None => gap(&mut md, "score/summary.json", "score"),
    }

    md.push_str("## Burden categories\n\n");
    match load::<ThresholdDoc>(out, "classify/thresholds.json")? {
        Some(t) => {
            let centers = t.centers.iter().map(|c| format!("{c:.2}")).collect::<Vec<_>>().join(", ");
            let bounds = t.boundaries.iter().map(i64::to_string).collect::<Vec<_>>().join(", ");
            let _ = writeln!(md, "Method: {}. Boundaries: ({bounds}).", t.method);
            if !centers.is_empty() {
                let _ = writeln!(md, "Centers: {centers}.");
            }
            md.push_str("\n| band | range | count |\n|---|---|---:|\n");
            for b in &t.bands {
                let _ = writeln!(md, "| {} | {}-{} | {} |", b.label, b.lo, b.hi, b.count);
            }
            md.push('\n');
        }
        None => gap(&mut md, "classify/thresholds.json", "classify"),
    }

    md.push_str("## Validity\n\n");
    let vpath = out.join("validate/validity.txt");
    if vpath.is_file() {
        let text = std::fs::read_to_string(&vpath).map_err(|e| CliError::io(&vpath, e))?;
        md.push_str("```\n");
        md.push_str(text.trim_end());
        md.push_str("\n```\n");
    } else {
        gap(&mut md, "validate/validity.txt", "validate");
    }
    Ok(md)
}

pub fn report(ctx: &Loaded) -> Result<Vec<String>> {
    let md = render(&ctx.out)?;
    let p = ctx.out.join(FILE);
    std::fs::create_dir_all(p.parent().expect("report dir")).map_err(|e| CliError::io(&p, e))?;
    std::fs::write(&p, &md).map_err(|e| CliError::io(&p, e))?;
    let mut rec = manifest::StageRecord::default();
    for rel in stages::known_artifacts().keys() {
        let a = ctx.out.join(rel);
        if a.is_file() {
            rec.inputs.insert(rel.to_string(), manifest::hash_file(&a)?);
        }
    }
    rec.outputs.insert(FILE.to_string(), manifest::sha256_hex(md.as_bytes()));
    let hash = manifest::sha256_hex(ctx.canonical().as_bytes());
    manifest::RunManifest::update(&ctx.out, &hash, "report", rec)?;
    Ok(vec![FILE.to_string()])
}

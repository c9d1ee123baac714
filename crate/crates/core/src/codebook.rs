//! Item specifications and recoding of raw survey extracts into an ordinal
//! response matrix.
//!
//! # Codebook file format
//!
//! A codebook is a TOML document:
//!
//! ```toml
//! version = "carebi-18/1"
//! # Optional. When present, every referenced source column must be listed.
//! raw_columns = ["cac12exhaustd", "cac12diffphy", "cac12diffphlv"]
//!
//! [[item]]
//! id = "cac12exhaustd"      # output column name, unique
//! n_levels = 3              # codes 1..=n_levels after recoding
//! reverse = true            # apply x -> n_levels + 1 - x after composition
//! label = "Exhausted at night"
//! # source = "..."          # raw column, defaults to `id`
//!
//! [[item]]
//! id = "cac12diffphlv_c"
//! n_levels = 6
//! label = "Physical difficulty"
//! [item.composite]
//! gate = "cac12diffphy"     # Yes/No column
//! level = "cac12diffphlv"   # follow-up asked when gate = Yes, codes 1..=n_levels-1
//! # gate_yes = 1            # raw code meaning Yes (default 1)
//! # gate_no = 2             # raw code meaning No (default 2)
//! # gate_negative_code = 1  # output code for No (default 1)
//! # reverse_level = false   # reverse the follow-up before composing
//! ```
//!
//! Raw cells that are empty, `NA`, or negative (survey non-response codes)
//! are treated as missing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordinal cell: `None` is the missing state.
pub type Cell = Option<u16>;

/// Canonical 18-item CareBI codebook.
pub const CAREBI_18_CODEBOOK: &str = include_str!("../data/carebi18.codebook.toml");

fn default_yes() -> i64 {
    1
}
fn default_no() -> i64 {
    2
}
fn default_negative() -> u16 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeRule {
    #[serde(rename = "gate")]
    pub gate_id: String,
    #[serde(rename = "level")]
    pub level_id: String,
    #[serde(default = "default_negative")]
    pub gate_negative_code: u16,
    #[serde(default = "default_yes")]
    pub gate_yes: i64,
    #[serde(default = "default_no")]
    pub gate_no: i64,
    #[serde(default)]
    pub reverse_level: bool,
}

impl CompositeRule {
    pub fn new(gate_id: impl Into<String>, level_id: impl Into<String>) -> Self {
        Self {
            gate_id: gate_id.into(),
            level_id: level_id.into(),
            gate_negative_code: 1,
            gate_yes: 1,
            gate_no: 2,
            reverse_level: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemSpec {
    pub id: String,
    pub n_levels: u16,
    #[serde(default)]
    pub reverse: bool,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub composite: Option<CompositeRule>,
    #[serde(default)]
    pub label: String,
}

impl ItemSpec {
    pub fn source_column(&self) -> &str {
        self.source.as_deref().unwrap_or(&self.id)
    }

    /// Raw columns this item reads.
    pub fn referenced_columns(&self) -> Vec<&str> {
        match &self.composite {
            Some(c) => vec![c.gate_id.as_str(), c.level_id.as_str()],
            None => vec![self.source_column()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_columns: Option<Vec<String>>,
    #[serde(rename = "item", default)]
    pub items: Vec<ItemSpec>,
}

impl Codebook {
    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::EmptyCodebook);
        }
        let mut seen = HashSet::new();
        for item in &self.items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::DuplicateItem(item.id.clone()));
            }
            if item.n_levels < 2 {
                return Err(Error::TooFewLevels { id: item.id.clone(), n_levels: item.n_levels });
            }
            if let Some(c) = &item.composite {
                if c.gate_id.is_empty() || c.level_id.is_empty() || c.gate_id == c.level_id {
                    return Err(Error::UnknownColumn {
                        item: item.id.clone(),
                        column: format!("{}/{}", c.gate_id, c.level_id),
                    });
                }
                if c.gate_negative_code < 1 || c.gate_negative_code > item.n_levels {
                    return Err(Error::InvalidArgument(format!(
                        "`{}`: gate_negative_code {} outside 1..={}",
                        item.id, c.gate_negative_code, item.n_levels
                    )));
                }
                if c.gate_yes == c.gate_no {
                    return Err(Error::InvalidArgument(format!("`{}`: gate_yes equals gate_no", item.id)));
                }
            }
            if let Some(cols) = &self.raw_columns {
                for col in item.referenced_columns() {
                    if !cols.iter().any(|c| c == col) {
                        return Err(Error::UnknownColumn { item: item.id.clone(), column: col.to_string() });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }

    pub fn canonical() -> Self {
        parse_codebook(CAREBI_18_CODEBOOK).expect("bundled codebook is valid")
    }
}

pub fn parse_codebook(text: &str) -> Result<Codebook> {
    let cb: Codebook = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    cb.validate()?;
    Ok(cb)
}

/// N x p ordinal matrix, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    pub item_ids: Vec<String>,
    pub n_levels: Vec<u16>,
    pub columns: Vec<Vec<Cell>>,
    pub row_ids: Vec<String>,
    pub cluster_ids: Vec<Option<String>>,
}

impl ResponseMatrix {
    pub fn new(
        item_ids: Vec<String>,
        n_levels: Vec<u16>,
        columns: Vec<Vec<Cell>>,
        row_ids: Vec<String>,
        cluster_ids: Vec<Option<String>>,
    ) -> Result<Self> {
        let p = item_ids.len();
        if n_levels.len() != p || columns.len() != p {
            return Err(Error::Dimension("items, levels and columns differ in length".into()));
        }
        let n = row_ids.len();
        if cluster_ids.len() != n || columns.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("column lengths differ from row count".into()));
        }
        for ((id, &l), col) in item_ids.iter().zip(&n_levels).zip(&columns) {
            if let Some(v) = col.iter().flatten().find(|&&v| v < 1 || v > l) {
                return Err(Error::OutOfRange { item: id.clone(), value: i64::from(*v), n_levels: l });
            }
        }
        Ok(Self { item_ids, n_levels, columns, row_ids, cluster_ids })
    }

    /// Build a complete matrix from row-major codes with generated ids.
    pub fn from_complete_columns(item_ids: Vec<String>, n_levels: Vec<u16>, columns: Vec<Vec<u16>>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        let cols = columns.into_iter().map(|c| c.into_iter().map(Some).collect()).collect();
        let row_ids = (1..=n).map(|i| i.to_string()).collect();
        Self::new(item_ids, n_levels, cols, row_ids, vec![None; n])
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn has_missing(&self) -> bool {
        self.columns.iter().any(|c| c.iter().any(Option::is_none))
    }

    /// Column `j` with missing cells rejected.
    pub fn complete_column(&self, j: usize) -> Result<Vec<u16>> {
        self.columns[j]
            .iter()
            .map(|c| c.ok_or_else(|| Error::InvalidArgument(format!("`{}` has missing cells", self.item_ids[j]))))
            .collect()
    }

    pub fn complete_columns(&self) -> Result<Vec<Vec<u16>>> {
        (0..self.n_items()).map(|j| self.complete_column(j)).collect()
    }

    /// Subset of columns by id, in the given order.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let mut item_ids = Vec::new();
        let mut n_levels = Vec::new();
        let mut columns = Vec::new();
        for id in ids {
            let j = self
                .item_ids
                .iter()
                .position(|x| x == id)
                .ok_or_else(|| Error::MissingColumn(id.clone()))?;
            item_ids.push(id.clone());
            n_levels.push(self.n_levels[j]);
            columns.push(self.columns[j].clone());
        }
        Ok(Self { item_ids, n_levels, columns, row_ids: self.row_ids.clone(), cluster_ids: self.cluster_ids.clone() })
    }

    /// Rows picked by index (with repetition allowed).
    pub fn take_rows(&self, rows: &[usize]) -> Self {
        Self {
            item_ids: self.item_ids.clone(),
            n_levels: self.n_levels.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
            row_ids: rows.iter().map(|&r| self.row_ids[r].clone()).collect(),
            cluster_ids: rows.iter().map(|&r| self.cluster_ids[r].clone()).collect(),
        }
    }

    /// CSV with `row_id`, `cluster_id`, then item columns; missing as `NA`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["row_id".to_string(), "cluster_id".to_string()];
        header.extend(self.item_ids.iter().cloned());
        wtr.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![self.row_ids[i].clone(), self.cluster_ids[i].clone().unwrap_or_default()];
            rec.extend(self.columns.iter().map(|c| c[i].map_or_else(|| "NA".to_string(), |v| v.to_string())));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Read the CSV written by [`ResponseMatrix::write_csv`]. Level counts
    /// come from `n_levels` keyed by item id.
    pub fn read_csv<R: Read>(r: R, n_levels: &HashMap<String, u16>) -> Result<Self> {
        let raw = RawTable::read_csv(r)?;
        let row_ids = raw.string_column("row_id")?.into_iter().map(Option::unwrap_or_default).collect();
        let cluster_ids = raw.string_column("cluster_id")?;
        let mut item_ids = Vec::new();
        let mut levels = Vec::new();
        let mut columns = Vec::new();
        for h in raw.headers.iter().filter(|h| *h != "row_id" && *h != "cluster_id") {
            let l = *n_levels.get(h).ok_or_else(|| Error::UnknownColumn { item: h.clone(), column: h.clone() })?;
            let col = raw
                .int_column(h)?
                .into_iter()
                .map(|v| v.map(|x| u16::try_from(x).unwrap_or(u16::MAX)))
                .collect();
            item_ids.push(h.clone());
            levels.push(l);
            columns.push(col);
        }
        Self::new(item_ids, levels, columns, row_ids, cluster_ids)
    }
}

/// A raw extract: named string columns.
#[derive(Debug, Clone, Default)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<String>>,
}

fn is_missing_token(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na")
}

impl RawTable {
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); headers.len()];
        for rec in rdr.records() {
            let rec = rec?;
            for (j, col) in columns.iter_mut().enumerate() {
                col.push(rec.get(j).unwrap_or("").to_string());
            }
        }
        Ok(Self { headers, columns })
    }

    pub fn from_int_columns(cols: Vec<(String, Vec<Option<i64>>)>) -> Self {
        let headers = cols.iter().map(|(h, _)| h.clone()).collect();
        let columns = cols
            .into_iter()
            .map(|(_, c)| c.into_iter().map(|v| v.map_or_else(|| "NA".to_string(), |x| x.to_string())).collect())
            .collect();
        Self { headers, columns }
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<String>) {
        self.headers.push(name.into());
        self.columns.push(values);
    }

    pub fn string_column(&self, name: &str) -> Result<Vec<Option<String>>> {
        let j = self.index(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        Ok(self.columns[j].iter().map(|s| (!is_missing_token(s)).then(|| s.trim().to_string())).collect())
    }

    /// Integer column; empty, `NA` and negative codes map to `None`.
    pub fn int_column(&self, name: &str) -> Result<Vec<Option<i64>>> {
        let j = self.index(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        self.columns[j]
            .iter()
            .map(|s| {
                if is_missing_token(s) {
                    return Ok(None);
                }
                let v: i64 = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("column `{name}`: `{s}` is not an integer")))?;
                Ok((v >= 0).then_some(v))
            })
            .collect()
    }

    /// Numeric column; empty and `NA` map to `None`.
    pub fn float_column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let j = self.index(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        self.columns[j]
            .iter()
            .map(|s| {
                if is_missing_token(s) {
                    return Ok(None);
                }
                s.trim()
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::Parse(format!("column `{name}`: `{s}` is not a number")))
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.headers)?;
        for i in 0..self.n_rows() {
            wtr.write_record(self.columns.iter().map(|c| c[i].as_str()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Merge a Yes/No gate and its ordinal follow-up into one item.
///
/// `level_count` is the number of follow-up levels `L`; the result spans
/// `1..=L+1` with No mapped to `gate_negative_code` and Yes to `level + 1`.
pub fn build_composite(
    gate: &[Option<i64>],
    levels: &[Option<i64>],
    rule: &CompositeRule,
    level_count: u16,
) -> Result<Vec<Cell>> {
    if gate.len() != levels.len() {
        return Err(Error::Dimension("gate and level columns differ in length".into()));
    }
    gate.iter()
        .zip(levels)
        .map(|(&g, &lv)| match g {
            None => Ok(None),
            Some(g) if g == rule.gate_no => Ok(Some(rule.gate_negative_code)),
            Some(g) if g == rule.gate_yes => match lv {
                None => Ok(None),
                Some(l) if l >= 1 && l <= i64::from(level_count) => {
                    let l = l as u16;
                    let l = if rule.reverse_level { level_count + 1 - l } else { l };
                    Ok(Some(l + 1))
                }
                Some(l) => Err(Error::OutOfRange { item: rule.level_id.clone(), value: l, n_levels: level_count }),
            },
            Some(g) => Err(Error::OutOfRange { item: rule.gate_id.clone(), value: g, n_levels: 2 }),
        })
        .collect()
}

/// x -> n_levels + 1 - x; missing cells pass through.
pub fn reverse_code(column: &[Cell], n_levels: u16) -> Result<Vec<Cell>> {
    column
        .iter()
        .map(|c| match *c {
            None => Ok(None),
            Some(v) if v >= 1 && v <= n_levels => Ok(Some(n_levels + 1 - v)),
            Some(v) => Err(Error::OutOfRange { item: String::new(), value: i64::from(v), n_levels }),
        })
        .collect()
}

/// Modal value of a column; ties go to the lowest code.
pub fn column_mode(column: &[Cell]) -> Option<u16> {
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for v in column.iter().flatten() {
        *counts.entry(*v).or_default() += 1;
    }
    // BTreeMap iterates ascending, and `>` keeps the first (lowest) maximum.
    let mut best: Option<(u16, usize)> = None;
    for (v, n) in counts {
        if best.is_none_or(|(_, bn)| n > bn) {
            best = Some((v, n));
        }
    }
    best.map(|(v, _)| v)
}

pub const DEFAULT_MAX_MISSING: f64 = 0.10;

/// Replace missing cells with the column mode.
pub fn impute_mode(matrix: &ResponseMatrix, max_missing_frac: f64) -> Result<ResponseMatrix> {
    let n = matrix.n_rows();
    if n == 0 {
        return Err(Error::NoObservations);
    }
    let mut out = matrix.clone();
    for (j, col) in out.columns.iter_mut().enumerate() {
        let missing = col.iter().filter(|c| c.is_none()).count();
        let frac = missing as f64 / n as f64;
        if frac > max_missing_frac {
            return Err(Error::TooMuchMissing { item: matrix.item_ids[j].clone(), frac, max: max_missing_frac });
        }
        if missing == 0 {
            continue;
        }
        let mode = column_mode(col).ok_or_else(|| Error::DegenerateItem(matrix.item_ids[j].clone()))?;
        for c in col.iter_mut().filter(|c| c.is_none()) {
            *c = Some(mode);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ApplyOptions {
    pub row_id_column: String,
    pub cluster_column: String,
    pub max_missing_frac: f64,
}

impl Default for ApplyOptions {
    fn default() -> Self {
        Self {
            row_id_column: "row_id".into(),
            cluster_column: "cluster_id".into(),
            max_missing_frac: DEFAULT_MAX_MISSING,
        }
    }
}

/// Build composites, reverse-code, and impute, producing columns in codebook
/// order. Absent id columns fall back to 1-based row numbers and no clusters.
pub fn apply_codebook(raw: &RawTable, codebook: &Codebook, opts: &ApplyOptions) -> Result<ResponseMatrix> {
    codebook.validate()?;
    for item in &codebook.items {
        for col in item.referenced_columns() {
            if raw.index(col).is_none() {
                return Err(Error::MissingColumn(col.to_string()));
            }
        }
    }
    let n = raw.n_rows();
    if n == 0 {
        return Err(Error::NoObservations);
    }
    let mut columns = Vec::with_capacity(codebook.items.len());
    for item in &codebook.items {
        let col = match &item.composite {
            Some(rule) => {
                let gate = raw.int_column(&rule.gate_id)?;
                let lv = raw.int_column(&rule.level_id)?;
                build_composite(&gate, &lv, rule, item.n_levels - 1)?
            }
            None => raw
                .int_column(item.source_column())?
                .into_iter()
                .map(|v| match v {
                    None => Ok(None),
                    Some(x) if x >= 1 && x <= i64::from(item.n_levels) => Ok(Some(x as u16)),
                    Some(x) => Err(Error::OutOfRange { item: item.id.clone(), value: x, n_levels: item.n_levels }),
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let col = if item.reverse {
            reverse_code(&col, item.n_levels).map_err(|e| match e {
                Error::OutOfRange { value, n_levels, .. } => Error::OutOfRange { item: item.id.clone(), value, n_levels },
                e => e,
            })?
        } else {
            col
        };
        columns.push(col);
    }
    let row_ids = match raw.index(&opts.row_id_column) {
        Some(_) => raw
            .string_column(&opts.row_id_column)?
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.unwrap_or_else(|| (i + 1).to_string()))
            .collect(),
        None => (1..=n).map(|i| i.to_string()).collect(),
    };
    let cluster_ids = match raw.index(&opts.cluster_column) {
        Some(_) => raw.string_column(&opts.cluster_column)?,
        None => vec![None; n],
    };
    let m = ResponseMatrix::new(
        codebook.ids(),
        codebook.items.iter().map(|i| i.n_levels).collect(),
        columns,
        row_ids,
        cluster_ids,
    )?;
    impute_mode(&m, opts.max_missing_frac)
}

//! CSV ingestion: outcome column, numeric and one-hot covariates, missing cells.

use std::path::Path;

use anyhow::{Context, Result};
use mpbart::Covariates;
use serde::{Deserialize, Serialize};

use crate::Invalid;

pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("opening {}", path.display()))?;
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        if headers.len() < 2 {
            return Err(Invalid(format!("{}: need an outcome column and at least one covariate", path.display())).into());
        }
        if rows.is_empty() {
            return Err(Invalid(format!("{}: no data rows", path.display())).into());
        }
        Ok(Self { headers, rows })
    }

    fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

fn parse_number(cell: &str, column: &str, row: usize) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| {
        Invalid(format!(
            "column '{column}', row {}: non-numeric value '{cell}' (declare the column with --categorical)",
            row + 1
        ))
    })?;
    if !v.is_finite() {
        return Err(Invalid(format!("column '{column}', row {}: non-finite value '{cell}'", row + 1)).into());
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ColumnSpec {
    Numeric { name: String, median: f64, indicator: bool },
    Categorical { name: String, levels: Vec<String>, indicator: bool },
}

impl ColumnSpec {
    fn name(&self) -> &str {
        match self {
            ColumnSpec::Numeric { name, .. } | ColumnSpec::Categorical { name, .. } => name,
        }
    }

    fn indicator(&self) -> bool {
        match self {
            ColumnSpec::Numeric { indicator, .. } | ColumnSpec::Categorical { indicator, .. } => *indicator,
        }
    }

    fn feature_names(&self) -> Vec<String> {
        let mut out = match self {
            ColumnSpec::Numeric { name, .. } => vec![name.clone()],
            ColumnSpec::Categorical { name, levels, .. } => levels.iter().map(|l| format!("{name}={l}")).collect(),
        };
        if self.indicator() {
            out.push(format!("{}.missing", self.name()));
        }
        out
    }
}

/// How raw CSV columns become model covariates. Fixed at fit time and stored
/// in the model header so prediction data is encoded identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub outcome: String,
    pub outcome_levels: Vec<String>,
    pub columns: Vec<ColumnSpec>,
    pub missing_indicators: bool,
}

/// Training data after encoding.
pub struct Encoded {
    pub schema: Schema,
    pub outcome: Vec<String>,
    pub x: Covariates,
}

/// Sorts numerically when every label is a number, lexicographically otherwise.
pub fn sort_levels(levels: &mut Vec<String>) {
    levels.sort();
    levels.dedup();
    if levels.iter().all(|l| l.parse::<f64>().is_ok()) {
        levels.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
}

impl Schema {
    /// Infers the encoding from training data.
    pub fn infer(table: &RawTable, categorical: &[String], missing_indicators: bool) -> Result<Self> {
        for c in categorical {
            if table.column_index(c).is_none_or(|k| k == 0) {
                return Err(Invalid(format!("--categorical '{c}' is not a covariate column")).into());
            }
        }
        let mut outcome_levels = Vec::new();
        for (r, row) in table.rows.iter().enumerate() {
            if is_missing(&row[0]) {
                return Err(Invalid(format!("outcome column '{}', row {}: missing value", table.headers[0], r + 1)).into());
            }
            outcome_levels.push(row[0].clone());
        }
        sort_levels(&mut outcome_levels);
        if outcome_levels.len() < 2 {
            return Err(Invalid(format!("outcome column '{}' needs at least two levels", table.headers[0])).into());
        }

        let mut columns = Vec::new();
        for (k, name) in table.headers.iter().enumerate().skip(1) {
            let cells: Vec<&str> = table.rows.iter().map(|r| r[k].as_str()).collect();
            let any_missing = cells.iter().any(|c| is_missing(c));
            if any_missing && !missing_indicators {
                let r = cells.iter().position(|c| is_missing(c)).unwrap();
                return Err(Invalid(format!("column '{name}', row {}: missing value", r + 1)).into());
            }
            if categorical.contains(name) {
                let mut levels: Vec<String> = cells.iter().filter(|c| !is_missing(c)).map(|c| c.to_string()).collect();
                sort_levels(&mut levels);
                columns.push(ColumnSpec::Categorical { name: name.clone(), levels, indicator: any_missing });
            } else {
                let mut values = Vec::with_capacity(cells.len());
                for (r, c) in cells.iter().enumerate() {
                    if !is_missing(c) {
                        values.push(parse_number(c, name, r)?);
                    }
                }
                if values.is_empty() {
                    return Err(Invalid(format!("column '{name}' has no observed values")).into());
                }
                values.sort_by(f64::total_cmp);
                let n = values.len();
                let median = if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) };
                columns.push(ColumnSpec::Numeric { name: name.clone(), median, indicator: any_missing });
            }
        }
        Ok(Self { outcome: table.headers[0].clone(), outcome_levels, columns, missing_indicators })
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns.iter().flat_map(ColumnSpec::feature_names).collect()
    }

    /// Encodes covariates by column name; the outcome column may be absent.
    pub fn encode(&self, table: &RawTable) -> Result<Covariates> {
        let mut index = Vec::with_capacity(self.columns.len());
        for spec in &self.columns {
            let k = table
                .column_index(spec.name())
                .ok_or_else(|| Invalid(format!("data has no column '{}' required by the model", spec.name())))?;
            index.push(k);
        }
        let mut rows = Vec::with_capacity(table.rows.len());
        for (r, raw) in table.rows.iter().enumerate() {
            let mut row = Vec::new();
            for (spec, &k) in self.columns.iter().zip(&index) {
                let cell = raw[k].as_str();
                let missing = is_missing(cell);
                if missing && !self.missing_indicators {
                    return Err(Invalid(format!("column '{}', row {}: missing value", spec.name(), r + 1)).into());
                }
                match spec {
                    ColumnSpec::Numeric { name, median, .. } => {
                        row.push(if missing { *median } else { parse_number(cell, name, r)? });
                    }
                    ColumnSpec::Categorical { name, levels, .. } => {
                        if !missing && !levels.iter().any(|l| l == cell) {
                            log::warn!("column '{name}', row {}: unseen level '{cell}' encoded as all zeros", r + 1);
                        }
                        row.extend(levels.iter().map(|l| f64::from(u8::from(l == cell))));
                    }
                }
                if spec.indicator() {
                    row.push(f64::from(u8::from(missing)));
                }
            }
            rows.push(row);
        }
        Ok(Covariates::from_rows(self.feature_names(), &rows)?)
    }

    /// Outcome labels of a table, if it carries the outcome column.
    pub fn outcomes(&self, table: &RawTable) -> Option<Vec<String>> {
        let k = table.column_index(&self.outcome)?;
        Some(table.rows.iter().map(|r| r[k].clone()).collect())
    }

    /// Outcome labels as indices into `outcome_levels`.
    pub fn outcome_indices(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .enumerate()
            .map(|(r, l)| {
                self.outcome_levels
                    .iter()
                    .position(|x| x == l)
                    .ok_or_else(|| Invalid(format!("row {}: outcome '{l}' was not seen in training", r + 1)).into())
            })
            .collect()
    }
}

impl Encoded {
    pub fn from_table(table: &RawTable, categorical: &[String], missing_indicators: bool) -> Result<Self> {
        let schema = Schema::infer(table, categorical, missing_indicators)?;
        let x = schema.encode(table)?;
        let outcome = table.rows.iter().map(|r| r[0].clone()).collect();
        Ok(Self { schema, outcome, x })
    }
}

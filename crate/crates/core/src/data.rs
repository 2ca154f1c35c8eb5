//! Datasets and outcome coding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense numeric covariates, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    names: Vec<String>,
    n_rows: usize,
    values: Vec<f64>,
}

impl Covariates {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let p = names.len();
        if p == 0 {
            return Err(Error::InvalidData("no covariate columns".into()));
        }
        if values.len() % p != 0 {
            return Err(Error::InvalidData(format!(
                "{} values do not fill rows of {p} covariates",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite value in column '{}' at row {}",
                names[pos % p],
                pos / p
            )));
        }
        Ok(Self {
            n_rows: values.len() / p,
            names,
            values,
        })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = names.len();
        if let Some(i) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::InvalidData(format!("row {i} has the wrong number of columns")));
        }
        Self::new(names, rows.iter().flatten().copied().collect())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.names.len();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn column(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(k).step_by(self.names.len()).copied()
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols());
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Self {
            names: self.names.clone(),
            n_rows: rows.len(),
            values,
        }
    }
}

/// Maps original outcome levels onto the sampler's coding: the reference
/// level becomes 0, the others become 1..=C in their original order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    levels: Vec<String>,
    reference: usize,
}

impl LabelMap {
    pub fn new(levels: Vec<String>, reference: &str) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::InvalidData(format!(
                "outcome needs at least two levels, found {}",
                levels.len()
            )));
        }
        for (i, l) in levels.iter().enumerate() {
            if levels[..i].contains(l) {
                return Err(Error::InvalidData(format!("duplicate outcome level '{l}'")));
            }
        }
        let reference = levels
            .iter()
            .position(|l| l == reference)
            .ok_or_else(|| Error::InvalidData(format!("reference level '{reference}' is not an observed level")))?;
        Ok(Self { levels, reference })
    }

    /// Original levels, in original order.
    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn reference(&self) -> &str {
        &self.levels[self.reference]
    }

    /// Number of latent dimensions C (levels minus one).
    pub fn latent_dim(&self) -> usize {
        self.levels.len() - 1
    }

    /// Sampler code of the level at `level_index` in the original order.
    pub fn code_of_level(&self, level_index: usize) -> usize {
        use std::cmp::Ordering::*;
        match level_index.cmp(&self.reference) {
            Equal => 0,
            Less => level_index + 1,
            Greater => level_index,
        }
    }

    /// Inverse of [`LabelMap::code_of_level`].
    pub fn level_of_code(&self, code: usize) -> usize {
        if code == 0 {
            self.reference
        } else if code <= self.reference {
            code - 1
        } else {
            code
        }
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }

    pub fn code(&self, label: &str) -> Option<usize> {
        self.level_index(label).map(|i| self.code_of_level(i))
    }

    pub fn label_of_code(&self, code: usize) -> &str {
        &self.levels[self.level_of_code(code)]
    }
}

/// Observed outcomes (sampler coding) plus covariates.
#[derive(Debug, Clone)]
pub struct Dataset {
    outcome: Vec<usize>,
    x: Covariates,
    labels: LabelMap,
}

impl Dataset {
    /// Builds a dataset from outcome labels.
    pub fn from_labels<S: AsRef<str>>(outcome: &[S], x: Covariates, labels: LabelMap) -> Result<Self> {
        let coded = outcome
            .iter()
            .enumerate()
            .map(|(i, s)| {
                labels.code(s.as_ref()).ok_or_else(|| {
                    Error::InvalidData(format!("row {i}: unknown outcome level '{}'", s.as_ref()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_codes(coded, x, labels)
    }

    /// Builds a dataset from outcomes already in sampler coding.
    pub fn from_codes(outcome: Vec<usize>, x: Covariates, labels: LabelMap) -> Result<Self> {
        if outcome.len() != x.n_rows() {
            return Err(Error::InvalidData(format!(
                "{} outcomes but {} covariate rows",
                outcome.len(),
                x.n_rows()
            )));
        }
        if let Some(&bad) = outcome.iter().find(|&&s| s > labels.latent_dim()) {
            return Err(Error::InvalidData(format!("outcome code {bad} out of range")));
        }
        Ok(Self { outcome, x, labels })
    }

    /// Same observations with a different reference level.
    pub fn relabel(&self, reference: &str) -> Result<Self> {
        let labels = LabelMap::new(self.labels.levels().to_vec(), reference)?;
        let outcome = self
            .outcome
            .iter()
            .map(|&c| labels.code_of_level(self.labels.level_of_code(c)))
            .collect();
        Ok(Self {
            outcome,
            x: self.x.clone(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn outcome(&self) -> &[usize] {
        &self.outcome
    }

    /// Outcomes as indices into the original level order.
    pub fn outcome_levels(&self) -> Vec<usize> {
        self.outcome.iter().map(|&c| self.labels.level_of_code(c)).collect()
    }

    pub fn x(&self) -> &Covariates {
        &self.x
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn latent_dim(&self) -> usize {
        self.labels.latent_dim()
    }

    /// Count of each sampler code 0..=C.
    pub fn code_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.latent_dim() + 1];
        for &s in &self.outcome {
            counts[s] += 1;
        }
        counts
    }
}

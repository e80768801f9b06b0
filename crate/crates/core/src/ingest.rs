//! CSV ingestion driven by a small schema file: response coding, dummy
//! coding of categorical covariates and optional grouping by counts.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CovariateRow, Dataset, ModelDims, Observation, ResponseVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    Numeric,
    /// Expands to one dummy per non-reference level, in level order.
    Categorical { levels: Vec<String>, reference: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaSpec {
    pub response_column: String,
    /// Ordered response levels; the last one is the baseline category.
    pub response_levels: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
    #[serde(default)]
    pub count_column: Option<String>,
}

impl SchemaSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a schema file, as JSON when the extension is `.json` and as
    /// TOML otherwise.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.response_levels.len() < 2 {
            return Err(Error::Data("response needs at least two levels".into()));
        }
        if has_duplicates(&self.response_levels) {
            return Err(Error::Data("response levels must be distinct".into()));
        }
        let mut names = vec![self.response_column.clone()];
        names.extend(self.count_column.iter().cloned());
        for cov in &self.covariates {
            names.push(cov.name.clone());
            if let CovariateKind::Categorical { levels, reference } = &cov.kind {
                if levels.len() < 2 {
                    return Err(Error::Data(format!(
                        "categorical covariate '{}' needs at least two levels",
                        cov.name
                    )));
                }
                if has_duplicates(levels) {
                    return Err(Error::Data(format!("levels of '{}' must be distinct", cov.name)));
                }
                if !levels.contains(reference) {
                    return Err(Error::Data(format!(
                        "reference level '{reference}' is not a level of '{}'",
                        cov.name
                    )));
                }
            }
        }
        if has_duplicates(&names) {
            return Err(Error::Data("schema columns must be distinct".into()));
        }
        Ok(())
    }

    /// Design column names: intercept, then covariates in schema order with
    /// dummies named `name[level]`.
    pub fn design_names(&self) -> Vec<String> {
        let mut names = vec!["(Intercept)".to_string()];
        for cov in &self.covariates {
            match &cov.kind {
                CovariateKind::Numeric => names.push(cov.name.clone()),
                CovariateKind::Categorical { levels, reference } => names.extend(
                    levels
                        .iter()
                        .filter(|l| *l != reference)
                        .map(|l| format!("{}[{l}]", cov.name)),
                ),
            }
        }
        names
    }

    pub fn dims(&self) -> Result<ModelDims> {
        ModelDims::new(self.design_names().len() - 1, self.response_levels.len() - 1)
    }
}

fn has_duplicates(items: &[String]) -> bool {
    let mut seen = std::collections::HashSet::new();
    items.iter().any(|s| !seen.insert(s))
}

pub fn load_dataset(path: &Path, schema: &SchemaSpec, collapse: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, schema, collapse)
}

/// Parses CSV with a header row. Rows with identical covariate patterns are
/// merged into grouped counts when `collapse` is set, in order of first
/// appearance.
pub fn read_dataset<R: std::io::Read>(reader: R, schema: &SchemaSpec, collapse: bool) -> Result<Dataset> {
    schema.validate()?;
    let dims = schema.dims()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("column '{name}' not found in header")))
    };
    let response_col = column(&schema.response_column)?;
    let count_col = schema.count_column.as_deref().map(column).transpose()?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| column(&c.name))
        .collect::<Result<Vec<_>>>()?;

    let categories = dims.categories();
    let mut rows: Vec<Observation> = Vec::new();
    let mut patterns: HashMap<Vec<u64>, usize> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let cell = |col: usize, name: &str| -> Result<&str> {
            match record.get(col).map(str::trim) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::Data(format!("row {row_no}: missing value in column '{name}'"))),
            }
        };

        let level = cell(response_col, &schema.response_column)?;
        let category = schema
            .response_levels
            .iter()
            .position(|l| l == level)
            .ok_or_else(|| {
                Error::Data(format!(
                    "row {row_no}: unknown level '{level}' in column '{}'",
                    schema.response_column
                ))
            })?;

        let count = match (count_col, &schema.count_column) {
            (Some(col), Some(name)) => {
                let raw = cell(col, name)?;
                let v: f64 = raw
                    .parse()
                    .map_err(|_| Error::Data(format!("row {row_no}: invalid count '{raw}' in column '{name}'")))?;
                if !(v >= 0.0) || v.fract() != 0.0 || !v.is_finite() {
                    return Err(Error::Data(format!(
                        "row {row_no}: count '{raw}' is not a non-negative integer"
                    )));
                }
                v
            }
            _ => 1.0,
        };

        let mut x = Vec::with_capacity(dims.k());
        for (spec, &col) in schema.covariates.iter().zip(&cov_cols) {
            let raw = cell(col, &spec.name)?;
            match &spec.kind {
                CovariateKind::Numeric => {
                    let v: f64 = raw.parse().map_err(|_| {
                        Error::Data(format!("row {row_no}: non-numeric value '{raw}' in column '{}'", spec.name))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Data(format!(
                            "row {row_no}: non-finite value '{raw}' in column '{}'",
                            spec.name
                        )));
                    }
                    x.push(v);
                }
                CovariateKind::Categorical { levels, reference } => {
                    if !levels.iter().any(|l| l == raw) {
                        return Err(Error::Data(format!(
                            "row {row_no}: unknown level '{raw}' in column '{}'",
                            spec.name
                        )));
                    }
                    x.extend(
                        levels
                            .iter()
                            .filter(|l| *l != reference)
                            .map(|l| if l == raw { 1.0 } else { 0.0 }),
                    );
                }
            }
        }

        if count == 0.0 {
            continue;
        }
        let mut y = vec![0.0; categories];
        y[category] = count;
        if collapse {
            let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            if let Some(&at) = patterns.get(&key) {
                let mut merged = rows[at].y.as_slice().to_vec();
                merged[category] += count;
                rows[at].y = ResponseVector::expected(merged)?;
                continue;
            }
            patterns.insert(key, rows.len());
        }
        rows.push(Observation {
            x: CovariateRow::with_intercept(&x)?,
            y: ResponseVector::expected(y)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Data("no data rows with positive counts".into()));
    }
    Dataset::new(dims, rows)?.with_names(schema.design_names(), schema.response_levels.clone())
}

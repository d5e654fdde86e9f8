//! Attaching per-term predictions to a collection under the column naming
//! contract, and exporting the result.

use std::collections::HashMap;
use std::str::FromStr;

use indexmap::IndexSet;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::fit::{group_column, FitError, FitSummary};
use crate::geom::{geometry_to_json, AreaCollection, AreaUnit};
use crate::nbgraph::{NbForm, NbStructure};
use crate::scalar::Scalar;

pub const SE_PREFIX: &str = "se.";
pub const EXP_PREFIX: &str = "exp.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("term `{term}`: level `{level}` (row {row}) has no estimate")]
    UnresolvedLevel { term: String, level: String, row: usize },
    #[error(transparent)]
    Data(#[from] FitError),
    #[error("unknown prediction column `{0}`")]
    UnknownColumn(String),
    #[error("bad transform `{0}` (expected exp:<column>)")]
    BadTransform(String),
    #[error("neighbourhood structure does not match the collection names")]
    NbMismatch,
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    GeoJson,
    Csv,
}

impl FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "geojson" | "json" => Ok(ExportFormat::GeoJson),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(format!("unknown export format `{other}`")),
        }
    }
}

/// Parsed prediction column name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredColumn {
    /// `random.effect`, `mrf.smooth`, or either with `exp.` in front.
    pub kind: String,
    pub covariate: Option<String>,
    pub group: String,
}

/// Splits `[exp.]<random.effect|mrf.smooth>.[<cov>|]<group>`; `None` for
/// anything else, including `se.` columns.
pub fn parse_pred_column(name: &str) -> Option<PredColumn> {
    let (exp, rest) = match name.strip_prefix(EXP_PREFIX) {
        Some(r) => (true, r),
        None => (false, name),
    };
    let (kind, tail) = ["random.effect", "mrf.smooth"]
        .iter()
        .find_map(|k| rest.strip_prefix(k).and_then(|t| t.strip_prefix('.')).map(|t| (*k, t)))?;
    if tail.is_empty() {
        return None;
    }
    let (covariate, group) = match tail.split_once('|') {
        Some((c, g)) if !c.is_empty() && !g.is_empty() => (Some(c.to_string()), g.to_string()),
        Some(_) => return None,
        None => (None, tail.to_string()),
    };
    Some(PredColumn {
        kind: if exp { format!("{EXP_PREFIX}{kind}") } else { kind.to_string() },
        covariate,
        group,
    })
}

/// A collection with prediction columns appended. Serialized column order:
/// original attributes, the neighbour column(s) if attached, then each
/// prediction column immediately followed by its `se.` twin, then geometry.
#[derive(Debug, Clone)]
pub struct AugmentedCollection<T> {
    pub base: AreaCollection<T>,
    pub nb: Option<(NbStructure, NbForm)>,
    pub added: Vec<(String, Vec<f64>)>,
    /// Set when the fit had no penalized terms and nothing was added.
    pub noop: bool,
}

fn strip_columns<T: Scalar>(coll: &AreaCollection<T>, drop: impl Fn(&str) -> bool) -> AreaCollection<T> {
    let units: Vec<AreaUnit<T>> = coll
        .units()
        .iter()
        .map(|u| {
            let mut u = u.clone();
            u.attrs.retain(|k, _| !drop(k));
            u
        })
        .collect();
    AreaCollection::new(coll.name_field(), units).expect("names unchanged")
}

fn is_nb_column(k: &str) -> bool {
    k == "nb" || k.strip_prefix("nb.").is_some_and(|d| d.parse::<usize>().is_ok())
}

/// Joins each penalized term's estimates and standard errors onto the rows
/// by level. Columns already present under the same names are replaced.
pub fn st_augment<T: Scalar>(
    fit: &FitSummary,
    coll: &AreaCollection<T>,
) -> Result<AugmentedCollection<T>, AugmentError> {
    if fit.terms.is_empty() {
        return Ok(AugmentedCollection {
            base: coll.clone(),
            nb: None,
            added: Vec::new(),
            noop: true,
        });
    }
    let mut added = Vec::new();
    for t in &fit.terms {
        let values = group_column(coll, &t.group)?;
        let index: HashMap<&str, usize> = t.levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut est = Vec::with_capacity(values.len());
        let mut se = Vec::with_capacity(values.len());
        for (row, v) in values.iter().enumerate() {
            let &k = index.get(v.as_str()).ok_or_else(|| AugmentError::UnresolvedLevel {
                term: t.label.clone(),
                level: v.clone(),
                row: row + 1,
            })?;
            est.push(t.estimate[k]);
            se.push(t.se[k]);
        }
        added.push((t.label.clone(), est));
        added.push((format!("{SE_PREFIX}{}", t.label), se));
    }
    let names: IndexSet<String> = added.iter().map(|(n, _)| n.clone()).collect();
    Ok(AugmentedCollection {
        base: strip_columns(coll, |k| names.contains(k)),
        nb: None,
        added,
        noop: false,
    })
}

fn number(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

impl<T: Scalar> AugmentedCollection<T> {
    /// Rebuilds an augmented view of a collection that already carries
    /// prediction columns (for instance one read back from GeoJSON).
    pub fn from_collection(coll: &AreaCollection<T>) -> Self {
        let keys = base_columns(coll);
        let mut added = Vec::new();
        let mut taken: IndexSet<String> = IndexSet::new();
        for k in &keys {
            if parse_pred_column(k).is_none() {
                continue;
            }
            let se = format!("{SE_PREFIX}{k}");
            let est = coll.column(k).iter().map(|v| v.as_f64().unwrap_or(f64::NAN)).collect();
            let sev = coll.column(&se).iter().map(|v| v.as_f64().unwrap_or(f64::NAN)).collect();
            added.push((k.clone(), est));
            added.push((se.clone(), sev));
            taken.insert(k.clone());
            taken.insert(se);
        }
        Self {
            base: strip_columns(coll, |k| taken.contains(k)),
            nb: None,
            noop: added.is_empty(),
            added,
        }
    }

    /// Attaches a neighbourhood structure as the `nb` list column or the
    /// `nb.1 … nb.n` matrix columns, replacing any existing ones.
    pub fn with_nb(mut self, nb: NbStructure, form: NbForm) -> Result<Self, AugmentError> {
        if nb.names() != self.base.names().as_slice() {
            return Err(AugmentError::NbMismatch);
        }
        self.base = strip_columns(&self.base, is_nb_column);
        self.nb = Some((nb, form));
        Ok(self)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.added.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Added columns that are not `se.` twins.
    pub fn prediction_columns(&self) -> Vec<&str> {
        self.added
            .iter()
            .map(|(n, _)| n.as_str())
            .filter(|n| !n.starts_with(SE_PREFIX))
            .collect()
    }

    /// Appends `exp.<col>` and its delta-method standard error
    /// `se.exp.<col> = se · exp(estimate)`.
    pub fn apply_exp(&mut self, col: &str) -> Result<(), AugmentError> {
        let est = self
            .column(col)
            .ok_or_else(|| AugmentError::UnknownColumn(col.to_string()))?
            .to_vec();
        let se = self
            .column(&format!("{SE_PREFIX}{col}"))
            .ok_or_else(|| AugmentError::UnknownColumn(format!("{SE_PREFIX}{col}")))?
            .to_vec();
        let name = format!("{EXP_PREFIX}{col}");
        let se_name = format!("{SE_PREFIX}{name}");
        self.added.retain(|(n, _)| n != &name && n != &se_name);
        let e: Vec<f64> = est.iter().map(|v| v.exp()).collect();
        let s = se.iter().zip(&e).map(|(s, e)| s * e).collect();
        self.added.push((name, e));
        self.added.push((se_name, s));
        Ok(())
    }

    /// Applies a `exp:<column>` transform spec.
    pub fn apply_transform(&mut self, spec: &str) -> Result<(), AugmentError> {
        match spec.split_once(':') {
            Some(("exp", col)) if !col.is_empty() => self.apply_exp(col),
            _ => Err(AugmentError::BadTransform(spec.to_string())),
        }
    }

    fn nb_columns(&self) -> Vec<String> {
        match &self.nb {
            None => Vec::new(),
            Some((_, NbForm::List)) => vec!["nb".into()],
            Some((nb, NbForm::Matrix)) => (1..=nb.len()).map(|j| format!("nb.{j}")).collect(),
        }
    }

    /// All non-geometry columns in contract order.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = base_columns(&self.base);
        if !cols.iter().any(|c| c == self.base.name_field()) {
            cols.insert(0, self.base.name_field().to_string());
        }
        cols.extend(self.nb_columns());
        cols.extend(self.added.iter().map(|(n, _)| n.clone()));
        cols
    }

    fn row_values(&self, i: usize) -> Vec<(String, Value)> {
        let unit = &self.base.units()[i];
        let mut out = Vec::new();
        let base = base_columns(&self.base);
        if !base.iter().any(|c| c == self.base.name_field()) {
            out.push((self.base.name_field().to_string(), Value::String(unit.name.clone())));
        }
        for k in base {
            let v = unit.attrs.get(&k).cloned().unwrap_or(Value::Null);
            out.push((k, v));
        }
        if let Some((nb, form)) = &self.nb {
            match form {
                NbForm::List => {
                    let list: Vec<usize> = nb.neighbours(i).iter().map(|j| j + 1).collect();
                    out.push(("nb".into(), json!(list)));
                }
                NbForm::Matrix => {
                    for j in 0..nb.len() {
                        out.push((format!("nb.{}", j + 1), json!(u8::from(nb.has_edge(i, j)))));
                    }
                }
            }
        }
        for (n, v) in &self.added {
            out.push((n.clone(), number(v[i])));
        }
        out
    }

    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = (0..self.base.len())
            .map(|i| {
                let props: Map<String, Value> = self.row_values(i).into_iter().collect();
                let mut f = Map::new();
                f.insert("type".into(), json!("Feature"));
                f.insert("properties".into(), Value::Object(props));
                f.insert("geometry".into(), geometry_to_json(&self.base.units()[i].polygons));
                Value::Object(f)
            })
            .collect();
        let mut doc = Map::new();
        doc.insert("type".into(), json!("FeatureCollection"));
        if self.noop {
            doc.insert("augment".into(), json!({"noop": true}));
        }
        doc.insert("features".into(), Value::Array(features));
        Value::Object(doc)
    }

    /// CSV without geometry, header in contract order.
    pub fn to_csv(&self) -> Result<String, AugmentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| AugmentError::Csv(e.to_string());
        w.write_record(self.columns()).map_err(err)?;
        for i in 0..self.base.len() {
            let rec: Vec<String> = self.row_values(i).iter().map(|(_, v)| csv_cell(v)).collect();
            w.write_record(rec).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| AugmentError::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| AugmentError::Csv(e.to_string()))
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => "NA".into(),
        Value::String(s) => s.clone(),
        Value::Array(a) => a.iter().map(csv_cell).collect::<Vec<_>>().join(";"),
        other => other.to_string(),
    }
}

/// Attribute keys in order of first appearance across units.
fn base_columns<T: Scalar>(coll: &AreaCollection<T>) -> Vec<String> {
    let mut keys: IndexSet<String> = IndexSet::new();
    for u in coll.units() {
        for k in u.attrs.keys() {
            if !keys.contains(k) {
                keys.insert(k.clone());
            }
        }
    }
    keys.into_iter().collect()
}

pub fn export_augmented<T: Scalar>(aug: &AugmentedCollection<T>, format: ExportFormat) -> Result<Vec<u8>, AugmentError> {
    match format {
        ExportFormat::GeoJson => {
            let mut s = serde_json::to_string_pretty(&aug.to_geojson()).expect("json value serializes");
            s.push('\n');
            Ok(s.into_bytes())
        }
        ExportFormat::Csv => aug.to_csv().map(String::into_bytes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_names_parse() {
        assert_eq!(
            parse_pred_column("mrf.smooth.llti|oa_cd"),
            Some(PredColumn {
                kind: "mrf.smooth".into(),
                covariate: Some("llti".into()),
                group: "oa_cd".into()
            })
        );
        assert_eq!(parse_pred_column("exp.random.effect.region").unwrap().kind, "exp.random.effect");
        assert_eq!(parse_pred_column("se.mrf.smooth.province"), None);
        assert_eq!(parse_pred_column("mrf.smooth."), None);
        assert_eq!(parse_pred_column("population"), None);
    }
}

//! Named neighbourhood structures: queen contiguity with island bridging,
//! island audits, manual joins and cuts, connectivity, and serialisation.
//!
//! Positions are 0-based inside the library. Every externally visible index
//! (serialised adjacency, audit rows, [`UnitRef::Position`]) is 1-based.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geom::{
    centroid, queen_contiguous, ranked_neighbours, AreaCollection, DistanceMetric, GeomError,
    DEFAULT_CONTIGUITY_TOL,
};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NbError {
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("position {pos} out of range 1..={n}")]
    PositionOutOfRange { pos: usize, n: usize },
    #[error("cannot link unit `{0}` to itself")]
    SelfLink(String),
    #[error("no edge between `{0}` and `{1}`")]
    AbsentEdge(String, String),
    #[error("removing islands leaves {remaining} unit(s); at least 2 are required")]
    TooFewUnits { remaining: usize },
    #[error("link_islands_k = {k} must lie in 1..{n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("invalid neighbourhood structure: {0}")]
    Invalid(String),
    #[error("cannot parse {format}: {msg}")]
    Parse { format: &'static str, msg: String },
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// A unit given either by name or by 1-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UnitRef {
    Position(usize),
    Name(String),
}

impl FromStr for UnitRef {
    type Err = std::convert::Infallible;

    /// All-digit strings are positions; anything else is a name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s.parse::<usize>() {
            Ok(p) if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) => UnitRef::Position(p),
            _ => UnitRef::Name(s.to_string()),
        })
    }
}

impl From<usize> for UnitRef {
    fn from(p: usize) -> Self {
        UnitRef::Position(p)
    }
}

impl From<&str> for UnitRef {
    fn from(s: &str) -> Self {
        UnitRef::Name(s.to_string())
    }
}

impl fmt::Display for UnitRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitRef::Position(p) => write!(f, "{p}"),
            UnitRef::Name(n) => f.write_str(n),
        }
    }
}

/// A link added for an island rather than by contiguity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IslandLink {
    pub island_names: String,
    pub island_num: usize,
    pub nb_num: usize,
    pub nb_names: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct IslandAudit {
    pub rows: Vec<IslandLink>,
}

impl IslandAudit {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }
}

impl fmt::Display for IslandAudit {
    /// Right-aligned table with a leading row number column.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header = ["island_names", "island_num", "nb_num", "nb_names"];
        let cells: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.island_names.clone(),
                    r.island_num.to_string(),
                    r.nb_num.to_string(),
                    r.nb_names.clone(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let rn = cells.len().to_string().len();
        write!(f, "{:>rn$}", "")?;
        for (h, w) in header.iter().zip(widths) {
            write!(f, " {h:>w$}")?;
        }
        writeln!(f)?;
        for (i, row) in cells.iter().enumerate() {
            write!(f, "{:>rn$}", i + 1)?;
            for (c, w) in row.iter().zip(widths) {
                write!(f, " {c:>w$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Symmetric, irreflexive named adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NbStructure {
    names: Vec<String>,
    adj: Vec<Vec<usize>>,
    induced: Vec<IslandLink>,
}

#[derive(Serialize, Deserialize)]
struct NbWire {
    names: Vec<String>,
    adj: Vec<Vec<usize>>,
    #[serde(default)]
    induced: Vec<IslandLink>,
}

impl Serialize for NbStructure {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        NbWire {
            names: self.names.clone(),
            adj: self
                .adj
                .iter()
                .map(|a| a.iter().map(|&j| j + 1).collect())
                .collect(),
            induced: self.induced.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NbStructure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = NbWire::deserialize(d)?;
        let mut adj = Vec::with_capacity(w.adj.len());
        for (i, a) in w.adj.iter().enumerate() {
            let mut row = Vec::with_capacity(a.len());
            for &j in a {
                if j == 0 {
                    return Err(serde::de::Error::custom(format!(
                        "adj[{}] contains position 0; positions are 1-based",
                        i + 1
                    )));
                }
                row.push(j - 1);
            }
            adj.push(row);
        }
        let nb = NbStructure::new(w.names, adj).map_err(serde::de::Error::custom)?;
        nb.with_induced(w.induced).map_err(serde::de::Error::custom)
    }
}

impl NbStructure {
    /// Validates and normalises a 0-based adjacency: every row is sorted
    /// and deduplicated; symmetry and irreflexivity are required.
    pub fn new(names: Vec<String>, mut adj: Vec<Vec<usize>>) -> Result<Self, NbError> {
        let n = names.len();
        if adj.len() != n {
            return Err(NbError::Invalid(format!(
                "{} names but {} adjacency rows",
                n,
                adj.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &names {
            if !seen.insert(name) {
                return Err(NbError::Invalid(format!("duplicate name `{name}`")));
            }
        }
        for (i, row) in adj.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&j) = row.iter().find(|&&j| j >= n) {
                return Err(NbError::Invalid(format!(
                    "unit {} lists position {} beyond {n}",
                    i + 1,
                    j + 1
                )));
            }
            if row.binary_search(&i).is_ok() {
                return Err(NbError::Invalid(format!("unit {} lists itself", i + 1)));
            }
        }
        for i in 0..n {
            for &j in &adj[i] {
                if adj[j].binary_search(&i).is_err() {
                    return Err(NbError::Invalid(format!(
                        "asymmetric link {} -> {}",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self {
            names,
            adj,
            induced: Vec::new(),
        })
    }

    /// Builds from undirected 0-based edges.
    pub fn from_edges(names: Vec<String>, edges: &[(usize, usize)]) -> Result<Self, NbError> {
        let n = names.len();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(NbError::PositionOutOfRange {
                    pos: a.max(b) + 1,
                    n,
                });
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        Self::new(names, adj)
    }

    /// Attaches induced-link records; each must name an existing edge.
    pub fn with_induced(mut self, induced: Vec<IslandLink>) -> Result<Self, NbError> {
        for r in &induced {
            let ok = (1..=self.len()).contains(&r.island_num)
                && (1..=self.len()).contains(&r.nb_num)
                && self.names[r.island_num - 1] == r.island_names
                && self.names[r.nb_num - 1] == r.nb_names
                && self.has_edge(r.island_num - 1, r.nb_num - 1);
            if !ok {
                return Err(NbError::Invalid(format!(
                    "induced link {}({}) -> {}({}) is not an edge of the structure",
                    r.island_names, r.island_num, r.nb_names, r.nb_num
                )));
            }
        }
        self.induced = induced;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// 0-based neighbour positions of unit `i`, ascending.
    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn induced(&self) -> &[IslandLink] {
        &self.induced
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj.get(i).is_some_and(|a| a.binary_search(&j).is_ok())
    }

    /// Undirected edges `(i, j)` with `i < j`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(i, a)| a.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Named list view with 1-based neighbour positions.
    pub fn to_list(&self) -> IndexMap<String, Vec<usize>> {
        self.names
            .iter()
            .zip(&self.adj)
            .map(|(n, a)| (n.clone(), a.iter().map(|j| j + 1).collect()))
            .collect()
    }

    /// Binary symmetric matrix view in collection order.
    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        let n = self.len();
        self.adj
            .iter()
            .map(|a| {
                let mut row = vec![0u8; n];
                for &j in a {
                    row[j] = 1;
                }
                row
            })
            .collect()
    }

    pub fn resolve(&self, r: &UnitRef) -> Result<usize, NbError> {
        match r {
            UnitRef::Position(p) if (1..=self.len()).contains(p) => Ok(p - 1),
            UnitRef::Position(p) => Err(NbError::PositionOutOfRange {
                pos: *p,
                n: self.len(),
            }),
            UnitRef::Name(name) => self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| NbError::UnknownUnit(name.clone())),
        }
    }

    fn resolve_pair(&self, a: &UnitRef, b: &UnitRef) -> Result<(usize, usize), NbError> {
        let i = self.resolve(a)?;
        let j = self.resolve(b)?;
        if i == j {
            return Err(NbError::SelfLink(self.names[i].clone()));
        }
        Ok((i, j))
    }

    /// Adds the edge `{a, b}`. Joining an existing edge is a no-op.
    pub fn join(&self, a: &UnitRef, b: &UnitRef) -> Result<Self, NbError> {
        let (i, j) = self.resolve_pair(a, b)?;
        let mut out = self.clone();
        if let Err(at) = out.adj[i].binary_search(&j) {
            out.adj[i].insert(at, j);
        }
        if let Err(at) = out.adj[j].binary_search(&i) {
            out.adj[j].insert(at, i);
        }
        Ok(out)
    }

    /// Removes the edge `{a, b}`; errors if it is absent. Induced records
    /// for the edge are dropped with it.
    pub fn cut(&self, a: &UnitRef, b: &UnitRef) -> Result<Self, NbError> {
        let (i, j) = self.resolve_pair(a, b)?;
        if !self.has_edge(i, j) {
            return Err(NbError::AbsentEdge(
                self.names[i].clone(),
                self.names[j].clone(),
            ));
        }
        let mut out = self.clone();
        out.adj[i].retain(|&k| k != j);
        out.adj[j].retain(|&k| k != i);
        out.induced.retain(|r| {
            let (p, q) = (r.island_num - 1, r.nb_num - 1);
            !((p == i && q == j) || (p == j && q == i))
        });
        Ok(out)
    }

    /// Connected components as sorted 0-based position lists, ordered by
    /// their smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = vec![s];
            label[s] = id;
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &v in &self.adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = id;
                        members.push(v);
                        stack.push(v);
                    }
                }
            }
            members.sort_unstable();
            comps.push(members);
        }
        comps
    }

    pub fn check_islands(&self) -> IslandAudit {
        let mut rows = self.induced.clone();
        rows.sort_by_key(|r| r.island_num);
        IslandAudit { rows }
    }

    /// Units with no neighbours (0-based).
    pub fn islands(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.adj[i].is_empty()).collect()
    }

    pub fn export(&self, format: NbFormat) -> Result<Vec<u8>, NbError> {
        match format {
            NbFormat::Json => {
                let mut v = serde_json::to_vec_pretty(self).expect("structure serialises");
                v.push(b'\n');
                Ok(v)
            }
            NbFormat::Gal => self.to_gal("arelink", "name").map(String::into_bytes),
            NbFormat::MatrixCsv => Ok(self.to_matrix_csv().into_bytes()),
        }
    }

    pub fn import(format: NbFormat, bytes: &[u8]) -> Result<Self, NbError> {
        match format {
            NbFormat::Json => serde_json::from_slice(bytes).map_err(|e| NbError::Parse {
                format: "json",
                msg: e.to_string(),
            }),
            NbFormat::Gal => Self::from_gal(&String::from_utf8_lossy(bytes)),
            NbFormat::MatrixCsv => Self::from_matrix_csv(bytes),
        }
    }

    /// GAL text: header `0 n dataset id_field`, then per unit a line
    /// `name count` followed by a line of neighbour names. Induced-link
    /// records are not representable and are dropped.
    pub fn to_gal(&self, dataset: &str, id_field: &str) -> Result<String, NbError> {
        if let Some(bad) = self.names.iter().find(|n| n.chars().any(char::is_whitespace)) {
            return Err(NbError::Invalid(format!(
                "GAL cannot represent the name `{bad}` (contains whitespace)"
            )));
        }
        let mut out = format!("0 {} {} {}\n", self.len(), dataset, id_field);
        for (name, a) in self.names.iter().zip(&self.adj) {
            out.push_str(&format!("{} {}\n", name, a.len()));
            let nbs: Vec<&str> = a.iter().map(|&j| self.names[j].as_str()).collect();
            out.push_str(&nbs.join(" "));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_gal(text: &str) -> Result<Self, NbError> {
        let err = |msg: String| NbError::Parse { format: "gal", msg };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err("empty input".into()))?;
        let mut h = header.split_whitespace();
        let first = h.next().unwrap_or("");
        // legacy headers omit the leading 0
        let n: usize = if first == "0" { h.next() } else { Some(first) }
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err(format!("bad header `{header}`")))?;
        let mut names = Vec::with_capacity(n);
        let mut nb_names: Vec<Vec<String>> = Vec::with_capacity(n);
        for k in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| err(format!("expected {n} units, found {k}")))?;
            let mut parts = line.split_whitespace();
            let (name, count) = match (parts.next(), parts.next().and_then(|c| c.parse::<usize>().ok())) {
                (Some(nm), Some(c)) => (nm.to_string(), c),
                _ => return Err(err(format!("bad unit line `{line}`"))),
            };
            let nbs: Vec<String> = if count == 0 {
                // the neighbour line may be blank or missing at EOF
                Vec::new()
            } else {
                lines
                    .next()
                    .ok_or_else(|| err(format!("missing neighbours for `{name}`")))?
                    .split_whitespace()
                    .map(str::to_string)
                    .collect()
            };
            if count == 0 {
                // consume the blank neighbour line if present
                let mut peek = lines.clone();
                if matches!(peek.next(), Some(l) if l.trim().is_empty()) {
                    lines.next();
                }
            }
            if nbs.len() != count {
                return Err(err(format!(
                    "`{name}` declares {count} neighbours but lists {}",
                    nbs.len()
                )));
            }
            names.push(name);
            nb_names.push(nbs);
        }
        let index: std::collections::HashMap<&str, usize> =
            names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut adj = Vec::with_capacity(n);
        for nbs in &nb_names {
            let mut row = Vec::with_capacity(nbs.len());
            for s in nbs {
                row.push(*index.get(s.as_str()).ok_or_else(|| err(format!("unknown neighbour `{s}`")))?);
            }
            adj.push(row);
        }
        Self::new(names, adj)
    }

    pub fn to_matrix_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["name".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (name, row) in self.names.iter().zip(self.to_matrix()) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(u8::to_string));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn from_matrix_csv(bytes: &[u8]) -> Result<Self, NbError> {
        let err = |msg: String| NbError::Parse {
            format: "matrix-csv",
            msg,
        };
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let header = r.headers().map_err(|e| err(e.to_string()))?.clone();
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut adj = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            if rec.get(0) != names.get(i).map(String::as_str) {
                return Err(err(format!("row {} label does not match header", i + 1)));
            }
            let mut row = Vec::new();
            for (j, cell) in rec.iter().skip(1).enumerate() {
                match cell.trim() {
                    "0" => {}
                    "1" => row.push(j),
                    other => return Err(err(format!("non-binary cell `{other}`"))),
                }
            }
            adj.push(row);
        }
        Self::new(names, adj)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NbFormat {
    Gal,
    MatrixCsv,
    Json,
}

impl FromStr for NbFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gal" => Ok(NbFormat::Gal),
            "matrix-csv" | "csv" => Ok(NbFormat::MatrixCsv),
            "json" => Ok(NbFormat::Json),
            other => Err(format!("unknown neighbourhood format `{other}`")),
        }
    }
}

/// Which view of the structure is attached to the collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NbForm {
    #[default]
    List,
    Matrix,
}

#[derive(Debug, Clone)]
pub struct BridgeOptions<T> {
    pub link_islands_k: usize,
    pub remove_islands: bool,
    pub nb_structure: NbForm,
    pub add_to_dataframe: bool,
    pub tolerance: T,
    pub metric: DistanceMetric,
}

impl<T: Scalar> Default for BridgeOptions<T> {
    fn default() -> Self {
        Self {
            link_islands_k: 1,
            remove_islands: false,
            nb_structure: NbForm::List,
            add_to_dataframe: true,
            tolerance: T::lit(DEFAULT_CONTIGUITY_TOL),
            metric: DistanceMetric::Boundary,
        }
    }
}

/// Output of [`st_bridges`]: the (possibly island-free) collection and its
/// neighbourhood structure.
#[derive(Debug, Clone)]
pub struct Bridged<T> {
    pub areas: AreaCollection<T>,
    pub nb: NbStructure,
    pub form: NbForm,
    pub attached: bool,
}

impl<T: Scalar> Bridged<T> {
    /// GeoJSON of the collection; when attached, the structure follows the
    /// original properties as `nb` (list) or `nb.1 … nb.n` (matrix).
    pub fn to_geojson(&self) -> Value {
        let mut doc = self.areas.to_geojson();
        if !self.attached {
            return doc;
        }
        let list = self.nb.to_list();
        let matrix = self.nb.to_matrix();
        if let Some(features) = doc["features"].as_array_mut() {
            for (i, f) in features.iter_mut().enumerate() {
                let props = f["properties"].as_object_mut().expect("properties object");
                match self.form {
                    NbForm::List => {
                        props.insert("nb".into(), json!(list[i]));
                    }
                    NbForm::Matrix => {
                        for (j, v) in matrix[i].iter().enumerate() {
                            props.insert(format!("nb.{}", j + 1), json!(v));
                        }
                    }
                }
            }
        }
        doc
    }
}

/// First-order queen adjacency (0-based) over the whole collection.
pub fn queen_adjacency<T: Scalar>(coll: &AreaCollection<T>, tol: T) -> Vec<Vec<usize>> {
    let units = coll.units();
    let n = units.len();
    let boxes: Vec<_> = units.iter().map(|u| u.bbox()).collect();
    let mut order: Vec<usize> = (0..n).filter(|&i| boxes[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let (ba, bb) = (boxes[a].unwrap(), boxes[b].unwrap());
        ba.min.x.partial_cmp(&bb.min.x).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut adj = vec![BTreeSet::new(); n];
    for (k, &i) in order.iter().enumerate() {
        let bi = boxes[i].unwrap();
        for &j in &order[k + 1..] {
            let bj = boxes[j].unwrap();
            if bj.min.x > bi.max.x + tol {
                break;
            }
            if bi.gap(&bj) <= tol && queen_contiguous(&units[i], &units[j], tol) {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
    }
    adj.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Queen contiguity for connected units; each unit without a contiguous
/// neighbour is linked to its `link_islands_k` nearest units (which may
/// themselves be islands), and every such link is recorded as induced.
/// With `remove_islands`, islands are dropped instead and `k` is ignored.
pub fn st_bridges<T: Scalar>(
    coll: &AreaCollection<T>,
    opts: &BridgeOptions<T>,
) -> Result<Bridged<T>, NbError> {
    let n = coll.len();
    if n == 0 {
        return Err(NbError::Invalid("empty collection".into()));
    }
    if !opts.remove_islands && (opts.link_islands_k == 0 || opts.link_islands_k >= n) {
        return Err(NbError::KOutOfRange {
            k: opts.link_islands_k,
            n,
        });
    }
    let adj = queen_adjacency(coll, opts.tolerance);
    let names = coll.names();
    let (areas, nb) = if opts.remove_islands {
        let keep: Vec<usize> = (0..n).filter(|&i| !adj[i].is_empty()).collect();
        if keep.len() < 2 {
            return Err(NbError::TooFewUnits {
                remaining: keep.len(),
            });
        }
        let mut renumber = vec![usize::MAX; n];
        for (new, &old) in keep.iter().enumerate() {
            renumber[old] = new;
        }
        let sub_adj = keep
            .iter()
            .map(|&i| adj[i].iter().map(|&j| renumber[j]).collect())
            .collect();
        let sub = coll.subset(&keep);
        let nb = NbStructure::new(sub.names(), sub_adj)?;
        (sub, nb)
    } else {
        let islands: Vec<usize> = (0..n).filter(|&i| adj[i].is_empty()).collect();
        let mut adj = adj;
        let mut induced = Vec::new();
        for &i in &islands {
            let ranked = ranked_neighbours(coll, i, opts.metric)?;
            for &(j, _) in ranked.iter().take(opts.link_islands_k) {
                if adj[i].binary_search(&j).is_err() {
                    let at = adj[i].binary_search(&j).unwrap_err();
                    adj[i].insert(at, j);
                }
                if let Err(at) = adj[j].binary_search(&i) {
                    adj[j].insert(at, i);
                }
                induced.push(IslandLink {
                    island_names: names[i].clone(),
                    island_num: i + 1,
                    nb_num: j + 1,
                    nb_names: names[j].clone(),
                });
            }
        }
        let nb = NbStructure::new(names, adj)?.with_induced(induced)?;
        (coll.clone(), nb)
    };
    Ok(Bridged {
        areas,
        nb,
        form: opts.nb_structure,
        attached: opts.add_to_dataframe,
    })
}

/// Distance-band neighbours: units whose centroids lie within `threshold`.
pub fn dist_band<T: Scalar>(coll: &AreaCollection<T>, threshold: T) -> Result<NbStructure, NbError> {
    let cents = coll
        .units()
        .iter()
        .map(centroid)
        .collect::<Result<Vec<_>, _>>()?;
    let mut edges = Vec::new();
    for i in 0..cents.len() {
        for j in (i + 1)..cents.len() {
            if cents[i].dist(cents[j]) <= threshold {
                edges.push((i, j));
            }
        }
    }
    NbStructure::from_edges(coll.names(), &edges)
}

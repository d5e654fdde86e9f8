//! Polygon ingestion and the geometric predicates that neighbourhood
//! construction rests on: boundary contiguity, minimum distance, centroids,
//! nearest units and display outlines.
//!
//! Coordinates are planar and taken verbatim from the input; there is no
//! reprojection or geodesic arithmetic.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::scalar::Scalar;

/// Default contiguity tolerance in coordinate units.
pub const DEFAULT_CONTIGUITY_TOL: f64 = 1e-9;

pub type Attributes = IndexMap<String, Value>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("invalid GeoJSON: {0}")]
    Json(String),
    #[error("expected a GeoJSON FeatureCollection")]
    NotFeatureCollection,
    #[error("features missing name field `{field}` at indices {indices:?}")]
    MissingName { field: String, indices: Vec<usize> },
    #[error("duplicate unit names: {names:?}")]
    DuplicateNames { names: Vec<String> },
    #[error("feature {index}: geometry type `{kind}` is not Polygon or MultiPolygon")]
    NonAreal { index: usize, kind: String },
    #[error("feature {index}: {reason}")]
    InvalidGeometry { index: usize, reason: String },
    #[error("unit `{0}` has zero area")]
    Degenerate(String),
    #[error("unit `{0}` has no geometry")]
    Empty(String),
    #[error("k = {k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn dist(self, o: Self) -> T {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

/// Closed ring: first vertex equals last.
pub type Ring<T> = Vec<Point<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon<T> {
    pub exterior: Ring<T>,
    pub holes: Vec<Ring<T>>,
}

impl<T: Scalar> Polygon<T> {
    pub fn new(exterior: Ring<T>) -> Self {
        Self {
            exterior,
            holes: Vec::new(),
        }
    }

    pub fn rect(x0: T, y0: T, x1: T, y1: T) -> Self {
        Self::new(vec![
            Point::new(x0, y0),
            Point::new(x0, y1),
            Point::new(x1, y1),
            Point::new(x1, y0),
            Point::new(x0, y0),
        ])
    }

    pub fn rings(&self) -> impl Iterator<Item = &Ring<T>> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }

    /// Even-odd containment; points within `tol` of the boundary count as
    /// inside.
    pub fn contains(&self, p: Point<T>, tol: T) -> bool {
        if self
            .rings()
            .flat_map(|r| r.windows(2))
            .any(|w| point_segment_dist(p, w[0], w[1]) <= tol)
        {
            return true;
        }
        let mut inside = false;
        for ring in self.rings() {
            if ring_crossings_odd(ring, p) {
                inside = !inside;
            }
        }
        inside
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaUnit<T> {
    pub name: String,
    pub polygons: Vec<Polygon<T>>,
    pub attrs: Attributes,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T> {
    pub min: Point<T>,
    pub max: Point<T>,
}

impl<T: Scalar> BBox<T> {
    pub fn gap(&self, o: &Self) -> T {
        let dx = (o.min.x - self.max.x).max(self.min.x - o.max.x).max(T::zero());
        let dy = (o.min.y - self.max.y).max(self.min.y - o.max.y).max(T::zero());
        dx.hypot(dy)
    }

    pub fn union(&self, o: &Self) -> Self {
        BBox {
            min: Point::new(self.min.x.min(o.min.x), self.min.y.min(o.min.y)),
            max: Point::new(self.max.x.max(o.max.x), self.max.y.max(o.max.y)),
        }
    }
}

impl<T: Scalar> AreaUnit<T> {
    pub fn new(name: impl Into<String>, polygons: Vec<Polygon<T>>) -> Self {
        Self {
            name: name.into(),
            polygons,
            attrs: Attributes::new(),
        }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.attrs.insert(key.into(), value.into());
        self
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    pub fn vertices(&self) -> impl Iterator<Item = Point<T>> + '_ {
        self.polygons
            .iter()
            .flat_map(|p| p.rings())
            .flat_map(|r| r[..r.len().saturating_sub(1)].iter().copied())
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point<T>, Point<T>)> + '_ {
        self.polygons
            .iter()
            .flat_map(|p| p.rings())
            .flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
    }

    pub fn bbox(&self) -> Option<BBox<T>> {
        let mut it = self.vertices();
        let first = it.next()?;
        let mut b = BBox {
            min: first,
            max: first,
        };
        for p in it {
            b.min.x = b.min.x.min(p.x);
            b.min.y = b.min.y.min(p.y);
            b.max.x = b.max.x.max(p.x);
            b.max.y = b.max.y.max(p.y);
        }
        Some(b)
    }

    pub fn contains_point(&self, p: Point<T>, tol: T) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p, tol))
    }

    /// Signed-area-weighted area over all parts, holes subtracted.
    pub fn area(&self) -> T {
        self.polygons
            .iter()
            .map(|p| {
                ring_signed_area(&p.exterior).abs()
                    - p.holes.iter().map(|h| ring_signed_area(h).abs()).sum::<T>()
            })
            .sum()
    }
}

/// Ordered, uniquely named set of units.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaCollection<T> {
    name_field: String,
    units: Vec<AreaUnit<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> AreaCollection<T> {
    pub fn new(name_field: impl Into<String>, units: Vec<AreaUnit<T>>) -> Result<Self, GeomError> {
        let mut index = HashMap::with_capacity(units.len());
        let mut dups = Vec::new();
        let mut missing = Vec::new();
        for (i, u) in units.iter().enumerate() {
            if u.name.is_empty() {
                missing.push(i);
            } else if index.insert(u.name.clone(), i).is_some() && !dups.contains(&u.name) {
                dups.push(u.name.clone());
            }
        }
        let name_field = name_field.into();
        if !missing.is_empty() {
            return Err(GeomError::MissingName {
                field: name_field,
                indices: missing,
            });
        }
        if !dups.is_empty() {
            return Err(GeomError::DuplicateNames { names: dups });
        }
        Ok(Self {
            name_field,
            units,
            index,
        })
    }

    pub fn name_field(&self) -> &str {
        &self.name_field
    }

    pub fn units(&self) -> &[AreaUnit<T>] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn get(&self, pos: usize) -> Option<&AreaUnit<T>> {
        self.units.get(pos)
    }

    /// 0-based position of a unit.
    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&AreaUnit<T>> {
        self.position(name).map(|i| &self.units[i])
    }

    pub fn names(&self) -> Vec<String> {
        self.units.iter().map(|u| u.name.clone()).collect()
    }

    /// Keeps the units at the given 0-based positions, in that order.
    pub fn subset(&self, keep: &[usize]) -> Self {
        let units: Vec<_> = keep.iter().map(|&i| self.units[i].clone()).collect();
        Self::new(self.name_field.clone(), units).expect("subset of a valid collection")
    }

    pub fn bbox(&self) -> Option<BBox<T>> {
        self.units
            .iter()
            .filter_map(AreaUnit::bbox)
            .reduce(|a, b| a.union(&b))
    }

    /// Column of attribute values in collection order (`Null` where absent).
    pub fn column(&self, key: &str) -> Vec<Value> {
        self.units
            .iter()
            .map(|u| u.attrs.get(key).cloned().unwrap_or(Value::Null))
            .collect()
    }

    pub fn has_column(&self, key: &str) -> bool {
        self.units.iter().any(|u| u.attrs.contains_key(key))
    }

    /// Serialises as a FeatureCollection with the unit attributes as
    /// properties.
    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .units
            .iter()
            .map(|u| {
                json!({
                    "type": "Feature",
                    "properties": Value::Object(u.attrs.clone().into_iter().collect()),
                    "geometry": geometry_to_json(&u.polygons),
                })
            })
            .collect();
        json!({"type": "FeatureCollection", "features": features})
    }
}

/// Reads a GeoJSON FeatureCollection of Polygon/MultiPolygon features.
/// `name_field` must be a string or number property, unique per feature.
pub fn load_areas<T: Scalar>(bytes: &[u8], name_field: &str) -> Result<AreaCollection<T>, GeomError> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| GeomError::Json(e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeomError::NotFeatureCollection);
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or(GeomError::NotFeatureCollection)?;
    let mut units = Vec::with_capacity(features.len());
    let mut missing = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let attrs: Attributes = match f.get("properties") {
            Some(Value::Object(m)) => m.clone().into_iter().collect(),
            _ => Attributes::new(),
        };
        let name = match attrs.get(name_field) {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => {
                missing.push(i);
                String::new()
            }
        };
        let geometry = f.get("geometry").unwrap_or(&Value::Null);
        let polygons = parse_geometry(geometry, i)?;
        units.push(AreaUnit {
            name,
            polygons,
            attrs,
        });
    }
    if !missing.is_empty() {
        return Err(GeomError::MissingName {
            field: name_field.to_string(),
            indices: missing,
        });
    }
    AreaCollection::new(name_field, units)
}

fn parse_geometry<T: Scalar>(g: &Value, index: usize) -> Result<Vec<Polygon<T>>, GeomError> {
    let kind = g.get("type").and_then(Value::as_str).unwrap_or("null");
    let coords = g.get("coordinates");
    let invalid = |reason: &str| GeomError::InvalidGeometry {
        index,
        reason: reason.to_string(),
    };
    match (kind, coords) {
        ("Polygon", Some(c)) => Ok(vec![parse_polygon(c, index)?]),
        ("MultiPolygon", Some(Value::Array(parts))) => {
            parts.iter().map(|p| parse_polygon(p, index)).collect()
        }
        ("Polygon" | "MultiPolygon", _) => Err(invalid("missing coordinates")),
        _ => Err(GeomError::NonAreal {
            index,
            kind: kind.to_string(),
        }),
    }
}

fn parse_polygon<T: Scalar>(c: &Value, index: usize) -> Result<Polygon<T>, GeomError> {
    let rings = c.as_array().ok_or_else(|| GeomError::InvalidGeometry {
        index,
        reason: "polygon coordinates must be an array of rings".into(),
    })?;
    let mut parsed = Vec::with_capacity(rings.len());
    for r in rings {
        parsed.push(parse_ring(r, index)?);
    }
    if parsed.is_empty() {
        return Err(GeomError::InvalidGeometry {
            index,
            reason: "polygon without rings".into(),
        });
    }
    let exterior = parsed.remove(0);
    Ok(Polygon {
        exterior,
        holes: parsed,
    })
}

fn parse_ring<T: Scalar>(r: &Value, index: usize) -> Result<Ring<T>, GeomError> {
    let bad = |reason: &str| GeomError::InvalidGeometry {
        index,
        reason: reason.to_string(),
    };
    let pts = r.as_array().ok_or_else(|| bad("ring must be an array"))?;
    let mut ring: Ring<T> = Vec::with_capacity(pts.len() + 1);
    for p in pts {
        let xy = p.as_array().ok_or_else(|| bad("position must be an array"))?;
        let x = xy.first().and_then(Value::as_f64);
        let y = xy.get(1).and_then(Value::as_f64);
        match (x, y) {
            (Some(x), Some(y)) => ring.push(Point::new(T::lit(x), T::lit(y))),
            _ => return Err(bad("position must hold two numbers")),
        }
    }
    if ring.first() != ring.last() {
        let first = ring[0];
        ring.push(first);
    }
    let mut distinct: Vec<Point<T>> = Vec::new();
    for p in &ring {
        if !distinct.contains(p) {
            distinct.push(*p);
        }
    }
    if distinct.len() < 3 {
        return Err(bad("ring has fewer than 3 distinct vertices"));
    }
    Ok(ring)
}

pub fn geometry_to_json<T: Scalar>(polys: &[Polygon<T>]) -> Value {
    let poly = |p: &Polygon<T>| -> Value {
        Value::Array(
            p.rings()
                .map(|r| {
                    Value::Array(
                        r.iter()
                            .map(|pt| json!([pt.x.to_f64_lossy(), pt.y.to_f64_lossy()]))
                            .collect(),
                    )
                })
                .collect(),
        )
    };
    if polys.len() == 1 {
        json!({"type": "Polygon", "coordinates": poly(&polys[0])})
    } else {
        json!({"type": "MultiPolygon", "coordinates": polys.iter().map(poly).collect::<Vec<_>>()})
    }
}

fn ring_signed_area<T: Scalar>(r: &[Point<T>]) -> T {
    if r.is_empty() {
        return T::zero();
    }
    let o = r[0];
    let mut s = T::zero();
    for w in r.windows(2) {
        let (a, b) = (w[0], w[1]);
        s += (a.x - o.x) * (b.y - o.y) - (b.x - o.x) * (a.y - o.y);
    }
    s * T::lit(0.5)
}

fn ring_crossings_odd<T: Scalar>(ring: &[Point<T>], p: Point<T>) -> bool {
    let mut odd = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                odd = !odd;
            }
        }
    }
    odd
}

pub fn point_segment_dist<T: Scalar>(p: Point<T>, a: Point<T>, b: Point<T>) -> T {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == T::zero() {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2)
        .max(T::zero())
        .min(T::one());
    p.dist(Point::new(a.x + t * dx, a.y + t * dy))
}

fn orient<T: Scalar>(a: Point<T>, b: Point<T>, c: Point<T>) -> T {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn segments_cross<T: Scalar>(a: Point<T>, b: Point<T>, c: Point<T>, d: Point<T>) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    ((d1 > T::zero() && d2 < T::zero()) || (d1 < T::zero() && d2 > T::zero()))
        && ((d3 > T::zero() && d4 < T::zero()) || (d3 < T::zero() && d4 > T::zero()))
}

pub fn segment_dist<T: Scalar>(a: Point<T>, b: Point<T>, c: Point<T>, d: Point<T>) -> T {
    if segments_cross(a, b, c, d) {
        return T::zero();
    }
    point_segment_dist(a, c, d)
        .min(point_segment_dist(b, c, d))
        .min(point_segment_dist(c, a, b))
        .min(point_segment_dist(d, a, b))
}

fn overlaps_by_containment<T: Scalar>(a: &AreaUnit<T>, b: &AreaUnit<T>) -> bool {
    // boundaries are already known not to meet, so one vertex per part decides
    let first = |u: &AreaUnit<T>| -> Vec<Point<T>> {
        u.polygons.iter().filter_map(|p| p.exterior.first().copied()).collect()
    };
    first(a).into_iter().any(|p| b.contains_point(p, T::zero()))
        || first(b).into_iter().any(|p| a.contains_point(p, T::zero()))
}

/// Minimum Euclidean distance between two units: zero when their
/// boundaries touch or one overlaps the other.
pub fn min_distance<T: Scalar>(a: &AreaUnit<T>, b: &AreaUnit<T>) -> T {
    if a.is_empty() || b.is_empty() {
        return T::infinity();
    }
    let mut best = T::infinity();
    for (p, q) in a.segments() {
        for (r, s) in b.segments() {
            let d = segment_dist(p, q, r, s);
            if d < best {
                best = d;
                if best == T::zero() {
                    return best;
                }
            }
        }
    }
    if overlaps_by_containment(a, b) {
        return T::zero();
    }
    best
}

/// True when the units are within `tol` of each other, i.e. share at least
/// one boundary point up to the tolerance. Stops at the first witness.
pub fn queen_contiguous<T: Scalar>(a: &AreaUnit<T>, b: &AreaUnit<T>, tol: T) -> bool {
    if a.is_empty() || b.is_empty() {
        return false;
    }
    if let (Some(ba), Some(bb)) = (a.bbox(), b.bbox()) {
        if ba.gap(&bb) > tol {
            return false;
        }
    }
    for (p, q) in a.segments() {
        for (r, s) in b.segments() {
            if segment_dist(p, q, r, s) <= tol {
                return true;
            }
        }
    }
    overlaps_by_containment(a, b)
}

/// Area-weighted centroid over all parts.
pub fn centroid<T: Scalar>(a: &AreaUnit<T>) -> Result<Point<T>, GeomError> {
    let origin = a.vertices().next().ok_or_else(|| GeomError::Empty(a.name.clone()))?;
    let mut area = T::zero();
    let (mut cx, mut cy) = (T::zero(), T::zero());
    for poly in &a.polygons {
        for (k, ring) in poly.rings().enumerate() {
            let signed = ring_signed_area(ring);
            if signed == T::zero() {
                continue;
            }
            // exterior adds, holes subtract, regardless of winding
            let sign = if k == 0 { T::one() } else { -T::one() } * signed.signum();
            let (mut sx, mut sy) = (T::zero(), T::zero());
            for w in ring.windows(2) {
                let (p, q) = (w[0], w[1]);
                let (px, py) = (p.x - origin.x, p.y - origin.y);
                let (qx, qy) = (q.x - origin.x, q.y - origin.y);
                let cross = px * qy - qx * py;
                sx += (px + qx) * cross;
                sy += (py + qy) * cross;
            }
            // ring centroid times ring area = (sx, sy) / 6
            area += sign * signed;
            cx += sign * sx / T::lit(6.0);
            cy += sign * sy / T::lit(6.0);
        }
    }
    let scale = a
        .bbox()
        .map(|b| (b.max.x - b.min.x).max(b.max.y - b.min.y))
        .unwrap_or_else(T::zero);
    if !(area.abs() > scale * scale * T::epsilon()) {
        return Err(GeomError::Degenerate(a.name.clone()));
    }
    Ok(Point::new(origin.x + cx / area, origin.y + cy / area))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    /// Minimum boundary-to-boundary distance.
    #[default]
    Boundary,
    /// Distance between area-weighted centroids.
    Centroid,
}

/// Distances from unit `target` to every other unit, sorted ascending with
/// ties kept in collection order. Positions are 0-based.
pub fn ranked_neighbours<T: Scalar>(
    coll: &AreaCollection<T>,
    target: usize,
    metric: DistanceMetric,
) -> Result<Vec<(usize, T)>, GeomError> {
    let units = coll.units();
    let t = &units[target];
    let mut out = Vec::with_capacity(units.len().saturating_sub(1));
    match metric {
        DistanceMetric::Boundary => {
            for (j, u) in units.iter().enumerate() {
                if j != target {
                    out.push((j, min_distance(t, u)));
                }
            }
        }
        DistanceMetric::Centroid => {
            let ct = centroid(t)?;
            for (j, u) in units.iter().enumerate() {
                if j != target {
                    out.push((j, ct.dist(centroid(u)?)));
                }
            }
        }
    }
    // stable sort keeps collection order among ties
    out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal));
    Ok(out)
}

/// The `k` nearest other units to `target`, nearest first.
pub fn knn_units<T: Scalar>(
    coll: &AreaCollection<T>,
    target: &str,
    k: usize,
    metric: DistanceMetric,
) -> Result<Vec<String>, GeomError> {
    let pos = coll
        .position(target)
        .ok_or_else(|| GeomError::UnknownUnit(target.to_string()))?;
    let max = coll.len().saturating_sub(1);
    if k == 0 || k > max {
        return Err(GeomError::KOutOfRange { k, max });
    }
    Ok(ranked_neighbours(coll, pos, metric)?
        .into_iter()
        .take(k)
        .map(|(j, _)| coll.units()[j].name.clone())
        .collect())
}

/// Convex hull by monotone chain; collinear boundary points are dropped.
/// Returned ring is counter-clockwise and closed.
pub fn convex_hull<T: Scalar>(points: &[Point<T>]) -> Ring<T> {
    let mut pts: Vec<Point<T>> = points.to_vec();
    pts.sort_by(|a, b| {
        a.x.partial_cmp(&b.x)
            .unwrap_or(Ordering::Equal)
            .then(a.y.partial_cmp(&b.y).unwrap_or(Ordering::Equal))
    });
    pts.dedup();
    if pts.len() < 3 {
        let mut r = pts.clone();
        if let Some(&f) = pts.first() {
            r.push(f);
        }
        return r;
    }
    let mut lower: Vec<Point<T>> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && orient(lower[lower.len() - 2], lower[lower.len() - 1], p) <= T::zero() {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point<T>> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && orient(upper[upper.len() - 2], upper[upper.len() - 1], p) <= T::zero() {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    let first = lower[0];
    lower.push(first);
    lower
}

#[derive(PartialEq)]
struct EdgeByLen(f64, usize);

impl Eq for EdgeByLen {}

impl PartialOrd for EdgeByLen {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EdgeByLen {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .partial_cmp(&other.0)
            .unwrap_or(Ordering::Equal)
            .then(other.1.cmp(&self.1))
    }
}

/// Display outline enclosing every vertex of a unit (chi-shape).
///
/// `concavity` is a normalised length threshold in `[0, 1]`: boundary
/// edges of the Delaunay triangulation longer than
/// `shortest + concavity * (longest - shortest)` are eroded while the
/// outline stays a simple polygon. Values `>= 1` (including infinity)
/// give the convex hull.
pub fn concave_outline<T: Scalar>(a: &AreaUnit<T>, concavity: T) -> Polygon<T> {
    let mut pts: Vec<Point<T>> = Vec::new();
    let mut seen = HashSet::new();
    for p in a.vertices() {
        let key = (p.x.to_f64_lossy().to_bits(), p.y.to_f64_lossy().to_bits());
        if seen.insert(key) {
            pts.push(p);
        }
    }
    if concavity.is_nan() || concavity >= T::one() || pts.len() < 4 {
        return Polygon::new(convex_hull(&pts));
    }
    let dpts: Vec<delaunator::Point> = pts
        .iter()
        .map(|p| delaunator::Point {
            x: p.x.to_f64_lossy(),
            y: p.y.to_f64_lossy(),
        })
        .collect();
    let tri = delaunator::triangulate(&dpts);
    if tri.triangles.is_empty() {
        return Polygon::new(convex_hull(&pts));
    }
    let next = |e: usize| if e % 3 == 2 { e - 2 } else { e + 1 };
    let ntri = tri.triangles.len() / 3;
    let edge_len = |e: usize| {
        let (p, q) = (&dpts[tri.triangles[e]], &dpts[tri.triangles[next(e)]]);
        (p.x - q.x).hypot(p.y - q.y)
    };
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for e in 0..tri.triangles.len() {
        let l = edge_len(e);
        lo = lo.min(l);
        hi = hi.max(l);
    }
    let threshold = lo + concavity.max(T::zero()).to_f64_lossy() * (hi - lo);

    let mut alive = vec![true; ntri];
    let mut on_boundary = vec![false; pts.len()];
    let mut heap = BinaryHeap::new();
    for e in 0..tri.triangles.len() {
        if tri.halfedges[e] == delaunator::EMPTY {
            on_boundary[tri.triangles[e]] = true;
            heap.push(EdgeByLen(edge_len(e), e));
        }
    }
    let mut live = ntri;
    while let Some(EdgeByLen(len, e)) = heap.pop() {
        if len <= threshold || live <= 1 {
            break;
        }
        let t = e / 3;
        if !alive[t] {
            continue;
        }
        let e1 = next(e);
        let e2 = next(e1);
        let apex = tri.triangles[e2];
        if on_boundary[apex] {
            continue;
        }
        alive[t] = false;
        live -= 1;
        on_boundary[apex] = true;
        for f in [e1, e2] {
            let twin = tri.halfedges[f];
            if twin != delaunator::EMPTY {
                heap.push(EdgeByLen(edge_len(twin), twin));
            }
        }
    }

    // boundary half-edges of the surviving triangles form one simple cycle
    let mut succ: HashMap<usize, usize> = HashMap::new();
    for e in 0..tri.triangles.len() {
        if !alive[e / 3] {
            continue;
        }
        let twin = tri.halfedges[e];
        if twin == delaunator::EMPTY || !alive[twin / 3] {
            succ.insert(tri.triangles[e], tri.triangles[next(e)]);
        }
    }
    let start = *succ.keys().min().expect("non-empty boundary");
    let mut ring = vec![pts[start]];
    let mut cur = start;
    for _ in 0..=succ.len() {
        cur = succ[&cur];
        ring.push(pts[cur]);
        if cur == start {
            break;
        }
    }
    Polygon::new(ring)
}

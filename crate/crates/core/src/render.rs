//! Deterministic SVG maps: neighbourhood graphs over the polygons and
//! diverging choropleths of prediction columns.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{parse_pred_column, AugmentedCollection};
use crate::geom::{centroid, concave_outline, AreaCollection, AreaUnit, BBox, Point, Polygon};
use crate::nbgraph::NbStructure;
use crate::scalar::Scalar;

pub const MAP_WIDTH: f64 = 800.0;
pub const MARGIN_FRACTION: f64 = 0.02;
const HEADER: f64 = 56.0;
/// Size units follow the plotting convention of millimetres at 72.27 pt
/// per inch; one point is drawn as one pixel.
const PT: f64 = 72.27 / 25.4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("unknown colour `{0}`")]
    UnknownColour(String),
    #[error("neighbourhood unit `{0}` is not in the collection")]
    UnknownUnit(String),
    #[error("no prediction columns to map")]
    NoPredictions,
    #[error("unknown prediction column `{0}`")]
    UnknownColumn(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Colour {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

const NAMED: &[(&str, u32)] = &[
    ("antiquewhite1", 0xFFEFDB),
    ("aqua", 0x00FFFF),
    ("black", 0x000000),
    ("blue", 0x0000FF),
    ("darkblue", 0x00008B),
    ("darkgreen", 0x006400),
    ("darkred", 0x8B0000),
    ("fuchsia", 0xFF00FF),
    ("gray", 0x808080),
    ("gray0", 0x000000),
    ("gray10", 0x1A1A1A),
    ("gray20", 0x333333),
    ("gray30", 0x4D4D4D),
    ("gray40", 0x666666),
    ("gray50", 0x7F7F7F),
    ("gray60", 0x999999),
    ("gray70", 0xB3B3B3),
    ("gray80", 0xCCCCCC),
    ("gray90", 0xE5E5E5),
    ("gray100", 0xFFFFFF),
    ("green", 0x008000),
    ("ivory", 0xFFFFF0),
    ("lightblue", 0xADD8E6),
    ("lime", 0x00FF00),
    ("maroon", 0x800000),
    ("navy", 0x000080),
    ("olive", 0x808000),
    ("orange", 0xFFA500),
    ("purple", 0x800080),
    ("red", 0xFF0000),
    ("silver", 0xC0C0C0),
    ("steelblue", 0x4682B4),
    ("teal", 0x008080),
    ("tomato", 0xFF6347),
    ("white", 0xFFFFFF),
    ("yellow", 0xFFFF00),
];

impl Colour {
    pub const fn rgb(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }

    pub fn hex(self) -> String {
        format!("#{:02X}{:02X}{:02X}", self.r, self.g, self.b)
    }

    /// Linear interpolation in RGB, `t` clamped to [0, 1].
    pub fn lerp(self, o: Colour, t: f64) -> Colour {
        let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
        let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round() as u8;
        Colour::rgb(mix(self.r, o.r), mix(self.g, o.g), mix(self.b, o.b))
    }
}

impl FromStr for Colour {
    type Err = RenderError;

    /// Named token (`grey` spellings accepted), `#RRGGBB` or `#RGB`.
    fn from_str(s: &str) -> Result<Self, RenderError> {
        let bad = || RenderError::UnknownColour(s.to_string());
        let t = s.trim().to_ascii_lowercase();
        if let Some(h) = t.strip_prefix('#') {
            let v = u32::from_str_radix(h, 16).map_err(|_| bad())?;
            return match h.len() {
                6 => Ok(Colour::rgb((v >> 16) as u8, (v >> 8) as u8, v as u8)),
                3 => {
                    let d = |x: u32| (x * 17) as u8;
                    Ok(Colour::rgb(d((v >> 8) & 0xF), d((v >> 4) & 0xF), d(v & 0xF)))
                }
                _ => Err(bad()),
            };
        }
        let t = t.replace("grey", "gray");
        NAMED
            .iter()
            .find(|(n, _)| *n == t)
            .map(|&(_, v)| Colour::rgb((v >> 16) as u8, (v >> 8) as u8, v as u8))
            .ok_or_else(bad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeStyle {
    #[default]
    Point,
    Numeric,
}

impl FromStr for NodeStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "point" => Ok(NodeStyle::Point),
            "numeric" => Ok(NodeStyle::Numeric),
            other => Err(format!("unknown node style `{other}` (expected point or numeric)")),
        }
    }
}

/// Neighbourhood map options; colours are tokens resolved at render time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NbMapOptions {
    pub fillcol: String,
    pub bordercol: String,
    pub bordersize: f64,
    pub linkcol: String,
    pub linksize: f64,
    pub pointcol: String,
    pub pointsize: f64,
    pub nodes: NodeStyle,
    pub numericcol: String,
    pub numericsize: f64,
    pub concavehull: bool,
    pub hullcol: String,
    pub hullsize: f64,
    /// Edge-length threshold of the outline, as a fraction between the
    /// shortest and longest triangulation edge; 1 gives the convex hull.
    pub concavity: f64,
}

impl Default for NbMapOptions {
    fn default() -> Self {
        Self {
            fillcol: "antiquewhite1".into(),
            bordercol: "black".into(),
            bordersize: 0.5,
            linkcol: "darkblue".into(),
            linksize: 0.8,
            pointcol: "red".into(),
            pointsize: 2.0,
            nodes: NodeStyle::Point,
            numericcol: "black".into(),
            numericsize: 6.0,
            concavehull: false,
            hullcol: "darkgreen".into(),
            hullsize: 0.2,
            concavity: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredMapOptions {
    pub scale_low: String,
    pub scale_mid: String,
    pub scale_high: String,
    pub scale_midpoint: f64,
    pub bordercol: String,
    pub bordersize: f64,
}

impl Default for PredMapOptions {
    fn default() -> Self {
        Self {
            scale_low: "darkgreen".into(),
            scale_mid: "ivory".into(),
            scale_high: "darkred".into(),
            scale_midpoint: 0.0,
            bordercol: "gray30".into(),
            bordersize: 0.2,
        }
    }
}

/// Diverging scale anchored at a midpoint: values map to
/// `0.5 + (v − mid) / (2·max|range − mid|)`, then through low → mid → high.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergingScale {
    pub low: Colour,
    pub mid: Colour,
    pub high: Colour,
    pub midpoint: f64,
    /// Largest distance of the data range from the midpoint.
    pub half_width: f64,
}

impl DivergingScale {
    pub fn fit(values: &[f64], low: Colour, mid: Colour, high: Colour, midpoint: f64) -> Self {
        let finite = values.iter().copied().filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        // a constant column carries no contrast and is drawn in the mid colour
        let half_width = if lo < hi {
            (lo - midpoint).abs().max((hi - midpoint).abs())
        } else {
            0.0
        };
        Self {
            low,
            mid,
            high,
            midpoint,
            half_width,
        }
    }

    pub fn position(&self, v: f64) -> f64 {
        if self.half_width <= 0.0 || !v.is_finite() {
            return 0.5;
        }
        (0.5 + (v - self.midpoint) / (2.0 * self.half_width)).clamp(0.0, 1.0)
    }

    pub fn colour(&self, v: f64) -> Colour {
        let t = self.position(v);
        if t <= 0.5 {
            self.low.lerp(self.mid, t * 2.0)
        } else {
            self.mid.lerp(self.high, (t - 0.5) * 2.0)
        }
    }
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    y1: f64,
    scale: f64,
    height: f64,
    top: f64,
}

impl Frame {
    fn new(bbox: Option<BBox<f64>>, top: f64) -> Self {
        let Some(b) = bbox else {
            return Frame {
                x0: 0.0,
                y1: 1.0,
                scale: MAP_WIDTH,
                height: MAP_WIDTH,
                top,
            };
        };
        let (mut dx, mut dy) = (b.max.x - b.min.x, b.max.y - b.min.y);
        if dx <= 0.0 && dy <= 0.0 {
            dx = 1.0;
            dy = 1.0;
        } else if dx <= 0.0 {
            dx = dy;
        } else if dy <= 0.0 {
            dy = dx;
        }
        let (px, py) = (dx * MARGIN_FRACTION, dy * MARGIN_FRACTION);
        let scale = MAP_WIDTH / (dx + 2.0 * px);
        Frame {
            x0: b.min.x - px,
            y1: b.min.y + dy + py,
            scale,
            height: ((dy + 2.0 * py) * scale).round(),
            top,
        }
    }

    fn map(&self, p: Point<f64>) -> (f64, f64) {
        ((p.x - self.x0) * self.scale, self.top + (self.y1 - p.y) * self.scale)
    }

    fn path(&self, polys: &[Polygon<f64>]) -> String {
        let mut d = String::new();
        for poly in polys {
            for ring in poly.rings() {
                let pts = &ring[..ring.len().saturating_sub(1)];
                for (k, &p) in pts.iter().enumerate() {
                    let (x, y) = self.map(p);
                    let _ = write!(d, "{}{} {} ", if k == 0 { "M" } else { "L" }, num(x), num(y));
                }
                d.push_str("Z ");
            }
        }
        d.trim_end().to_string()
    }
}

fn to_f64_unit<T: Scalar>(u: &AreaUnit<T>) -> AreaUnit<f64> {
    let conv = |r: &Vec<Point<T>>| r.iter().map(|p| Point::new(p.x.to_f64_lossy(), p.y.to_f64_lossy())).collect();
    AreaUnit::new(
        u.name.clone(),
        u.polygons
            .iter()
            .map(|p| Polygon {
                exterior: conv(&p.exterior),
                holes: p.holes.iter().map(conv).collect(),
            })
            .collect(),
    )
}

fn svg_open(out: &mut String, height: f64, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">",
        w = num(MAP_WIDTH),
        h = num(height)
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(out, "<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#FFFFFF\"/>", num(MAP_WIDTH), num(height));
}

/// Polygons in collection order, one line per undirected edge between
/// centroids, nodes as points or 1-based indices, optional outlines drawn
/// beneath the links.
pub fn render_nb_map<T: Scalar>(
    coll: &AreaCollection<T>,
    nb: &NbStructure,
    opts: &NbMapOptions,
) -> Result<String, RenderError> {
    let fill: Colour = opts.fillcol.parse()?;
    let border: Colour = opts.bordercol.parse()?;
    let link: Colour = opts.linkcol.parse()?;
    let point: Colour = opts.pointcol.parse()?;
    let numeric: Colour = opts.numericcol.parse()?;
    let hull: Colour = opts.hullcol.parse()?;

    let units: Vec<AreaUnit<f64>> = coll.units().iter().map(to_f64_unit).collect();
    let pos: Vec<usize> = nb
        .names()
        .iter()
        .map(|n| coll.position(n).ok_or_else(|| RenderError::UnknownUnit(n.clone())))
        .collect::<Result<_, _>>()?;
    let bbox = units.iter().filter_map(AreaUnit::bbox).reduce(|a, b| a.union(&b));
    let frame = Frame::new(bbox, 0.0);
    let centres: Vec<Option<(f64, f64)>> = units.iter().map(|u| centroid(u).ok().map(|c| frame.map(c))).collect();

    let mut out = String::new();
    svg_open(&mut out, frame.height, "neighbourhood structure");
    let _ = writeln!(
        out,
        "<g class=\"units\" fill=\"{}\" stroke=\"{}\" stroke-width=\"{}\" fill-rule=\"evenodd\">",
        fill.hex(),
        border.hex(),
        num(opts.bordersize * PT)
    );
    for u in &units {
        let _ = writeln!(out, "<path class=\"unit\" data-name=\"{}\" d=\"{}\"/>", escape(&u.name), frame.path(&u.polygons));
    }
    out.push_str("</g>\n");

    if opts.concavehull {
        let _ = writeln!(
            out,
            "<g class=\"hulls\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\">",
            hull.hex(),
            num(opts.hullsize * PT)
        );
        for u in &units {
            if u.is_empty() {
                continue;
            }
            let outline = concave_outline(u, opts.concavity);
            let _ = writeln!(out, "<path class=\"hull\" d=\"{}\"/>", frame.path(std::slice::from_ref(&outline)));
        }
        out.push_str("</g>\n");
    }

    let _ = writeln!(
        out,
        "<g class=\"links\" stroke=\"{}\" stroke-width=\"{}\">",
        link.hex(),
        num(opts.linksize * PT)
    );
    for (i, j) in nb.edges() {
        if let (Some(a), Some(b)) = (centres[pos[i]], centres[pos[j]]) {
            let _ = writeln!(
                out,
                "<line class=\"link\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>",
                num(a.0),
                num(a.1),
                num(b.0),
                num(b.1)
            );
        }
    }
    out.push_str("</g>\n");

    match opts.nodes {
        NodeStyle::Point => {
            let _ = writeln!(out, "<g class=\"nodes\" fill=\"{}\">", point.hex());
            for c in centres.iter().flatten() {
                let _ = writeln!(
                    out,
                    "<circle class=\"node\" cx=\"{}\" cy=\"{}\" r=\"{}\"/>",
                    num(c.0),
                    num(c.1),
                    num(opts.pointsize * PT / 2.0)
                );
            }
        }
        NodeStyle::Numeric => {
            let _ = writeln!(
                out,
                "<g class=\"nodes\" fill=\"{}\" font-family=\"sans-serif\" font-size=\"{}\" text-anchor=\"middle\" dominant-baseline=\"central\">",
                numeric.hex(),
                num(opts.numericsize * PT)
            );
            for (k, c) in centres.iter().enumerate() {
                if let Some(c) = c {
                    let _ = writeln!(out, "<text class=\"node\" x=\"{}\" y=\"{}\">{}</text>", num(c.0), num(c.1), k + 1);
                }
            }
        }
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredMap {
    pub column: String,
    pub title: String,
    pub subtitle: String,
    pub svg: String,
}

/// File name for a map of `column`: characters outside `[A-Za-z0-9._-]`
/// become `_`.
pub fn pred_map_filename(column: &str) -> String {
    let stem: String = column
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    format!("{stem}.svg")
}

/// Choropleth of one prediction column.
pub fn render_pred_map<T: Scalar>(
    aug: &AugmentedCollection<T>,
    column: &str,
    opts: &PredMapOptions,
) -> Result<PredMap, RenderError> {
    let values = aug
        .column(column)
        .filter(|_| !column.starts_with(crate::augment::SE_PREFIX))
        .ok_or_else(|| RenderError::UnknownColumn(column.to_string()))?;
    let (title, subtitle) = match parse_pred_column(column) {
        Some(p) => (p.group, p.kind),
        None => (column.to_string(), String::new()),
    };
    let scale = DivergingScale::fit(
        values,
        opts.scale_low.parse()?,
        opts.scale_mid.parse()?,
        opts.scale_high.parse()?,
        opts.scale_midpoint,
    );
    let border: Colour = opts.bordercol.parse()?;

    let units: Vec<AreaUnit<f64>> = aug.base.units().iter().map(to_f64_unit).collect();
    let bbox = units.iter().filter_map(AreaUnit::bbox).reduce(|a, b| a.union(&b));
    let frame = Frame::new(bbox, HEADER);
    let height = frame.height + HEADER;

    let mut out = String::new();
    svg_open(&mut out, height, column);
    let _ = writeln!(
        out,
        "<text class=\"title\" x=\"12\" y=\"24\" font-family=\"sans-serif\" font-size=\"18\">{}</text>",
        escape(&title)
    );
    let _ = writeln!(
        out,
        "<text class=\"subtitle\" x=\"12\" y=\"44\" font-family=\"sans-serif\" font-size=\"13\">{}</text>",
        escape(&subtitle)
    );

    let (lx, lw) = (MAP_WIDTH - 212.0, 200.0);
    out.push_str("<defs><linearGradient id=\"scale\" x1=\"0\" x2=\"1\" y1=\"0\" y2=\"0\">");
    let _ = write!(
        out,
        "<stop offset=\"0\" stop-color=\"{}\"/><stop offset=\"0.5\" stop-color=\"{}\"/><stop offset=\"1\" stop-color=\"{}\"/>",
        scale.low.hex(),
        scale.mid.hex(),
        scale.high.hex()
    );
    out.push_str("</linearGradient></defs>\n");
    let _ = writeln!(
        out,
        "<g class=\"legend\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\"><rect x=\"{}\" y=\"14\" width=\"{}\" height=\"12\" fill=\"url(#scale)\" stroke=\"#000000\" stroke-width=\"0.5\"/>",
        num(lx),
        num(lw)
    );
    let hw = scale.half_width;
    for (k, v) in [scale.midpoint - hw, scale.midpoint, scale.midpoint + hw].iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"40\">{}</text>",
            num(lx + lw * k as f64 / 2.0),
            format_label(*v)
        );
    }
    out.push_str("</g>\n");

    let _ = writeln!(
        out,
        "<g class=\"units\" stroke=\"{}\" stroke-width=\"{}\" fill-rule=\"evenodd\">",
        border.hex(),
        num(opts.bordersize * PT)
    );
    for (u, &v) in units.iter().zip(values) {
        let _ = writeln!(
            out,
            "<path class=\"unit\" data-name=\"{}\" fill=\"{}\" d=\"{}\"/>",
            escape(&u.name),
            scale.colour(v).hex(),
            frame.path(&u.polygons)
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(PredMap {
        column: column.to_string(),
        title,
        subtitle,
        svg: out,
    })
}

fn format_label(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

/// One choropleth per prediction column (`se.` columns excluded), in
/// column order.
pub fn render_pred_maps<T: Scalar>(
    aug: &AugmentedCollection<T>,
    opts: &PredMapOptions,
) -> Result<Vec<PredMap>, RenderError> {
    let cols = aug.prediction_columns();
    if cols.is_empty() {
        return Err(RenderError::NoPredictions);
    }
    cols.into_iter().map(|c| render_pred_map(aug, c, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colour_tokens() {
        assert_eq!("antiquewhite1".parse::<Colour>().unwrap().hex(), "#FFEFDB");
        assert_eq!("Grey50".parse::<Colour>().unwrap().hex(), "#7F7F7F");
        assert_eq!("#abc".parse::<Colour>().unwrap().hex(), "#AABBCC");
        assert_eq!(
            "chartreuse9".parse::<Colour>().unwrap_err(),
            RenderError::UnknownColour("chartreuse9".into())
        );
    }

    #[test]
    fn diverging_scale_anchors() {
        let c = |s: &str| s.parse::<Colour>().unwrap();
        let s = DivergingScale::fit(&[-1.0, 0.5], c("darkgreen"), c("ivory"), c("darkred"), 0.0);
        assert_eq!(s.colour(0.0), c("ivory"));
        assert_eq!(s.colour(-1.0), c("darkgreen"));
        assert_eq!(s.position(0.5), 0.75);
        assert_eq!(s.colour(7.0), c("darkred"));
        let flat = DivergingScale::fit(&[3.0, 3.0], c("darkgreen"), c("ivory"), c("darkred"), 0.0);
        assert_eq!(flat.colour(3.0), c("ivory"));
    }

    #[test]
    fn filenames_are_sanitized() {
        assert_eq!(pred_map_filename("mrf.smooth.llti|oa_cd"), "mrf.smooth.llti_oa_cd.svg");
    }
}

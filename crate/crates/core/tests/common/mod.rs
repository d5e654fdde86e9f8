#![allow(dead_code)]

use arelink::{load_areas, st_bridges, AreaUnit, Areas, BridgeOptions, NbStructure};

pub const RECTANGLES: &[u8] = include_bytes!("../data/rectangles.geojson");

pub fn rectangles() -> Areas {
    load_areas(RECTANGLES, "name").unwrap()
}

pub fn bridged(k: usize) -> NbStructure {
    let opts = BridgeOptions {
        link_islands_k: k,
        ..Default::default()
    };
    st_bridges(&rectangles(), &opts).unwrap().nb
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Rebuilds `base` with the name column plus the given columns.
pub fn attach(base: &Areas, cols: &[(&str, Vec<serde_json::Value>)]) -> Areas {
    let units = base
        .units()
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let mut v = AreaUnit::new(u.name.clone(), u.polygons.clone()).with_attr("name", u.name.clone());
            for (k, col) in cols {
                v = v.with_attr(*k, col[i].clone());
            }
            v
        })
        .collect();
    Areas::new("name", units).unwrap()
}

pub fn nums(v: &[f64]) -> Vec<serde_json::Value> {
    v.iter().map(|x| (*x).into()).collect()
}

pub const HIERARCHY_FORMULA: &str = "unemp ~ llti + s(msoa, bs='re') + s(msoa, llti, bs='re') + s(lsoa, bs='re') + s(lsoa, llti, bs='re') + s(oa, bs='mrf') + s(oa, by=llti, bs='mrf')";

/// 4×4 grid of output areas nested in 8 lower and 4 middle super-areas.
pub fn hierarchy() -> (Areas, NbStructure) {
    let base = arelink::sim::grid_areas(4, 4);
    let oa: Vec<serde_json::Value> = base.names().iter().map(|n| n.as_str().into()).collect();
    let lsoa: Vec<serde_json::Value> = (0..16).map(|i| format!("L{}", i / 2).into()).collect();
    let msoa: Vec<serde_json::Value> = (0..16).map(|i| format!("M{}", i / 4).into()).collect();
    let llti: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
    let unemp: Vec<f64> = (0..16).map(|i| 1.0 + (i as f64 * 0.11).cos() + 0.4 * llti[i]).collect();
    let coll = attach(
        &base,
        &[("oa", oa), ("lsoa", lsoa), ("msoa", msoa), ("llti", nums(&llti)), ("unemp", nums(&unemp))],
    );
    (coll, arelink::sim::rook_nb(4, 4))
}

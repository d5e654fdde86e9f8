//! One PASS/FAIL line per acceptance criterion; exits nonzero on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use arelink::fit::penalized_objective;
use arelink::formula::{MrfSlope, MrfSmooth, Offset, ReSlope};
use arelink::sim::{simulate_grid, GridSimConfig};
use arelink::{
    build_design, fit_model, format_formula, icar_precision, parse_formula, parse_model, pirls_fit, render_nb_map,
    render_pred_maps, st_augment, st_bridges, BridgeOptions, Family, ModelSpec, NbMapOptions, NbStructure,
    PredMapOptions, Precision, UnitRef,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{attach, bridged, hierarchy, nums, pearson, rectangles, HIERARCHY_FORMULA};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn list(nb: &NbStructure) -> Vec<(String, Vec<usize>)> {
    nb.to_list().into_iter().collect()
}

fn named(rows: &[(&str, &[usize])]) -> Vec<(String, Vec<usize>)> {
    rows.iter().map(|(n, v)| (n.to_string(), v.to_vec())).collect()
}

fn fixture_golden() -> Outcome {
    let nb = bridged(1);
    ensure!(
        list(&nb)
            == named(&[
                ("Rect1", &[2, 3]),
                ("Rect2", &[1, 3, 4]),
                ("Rect3", &[1, 2, 5]),
                ("Rect4", &[2]),
                ("Rect5", &[3]),
            ]),
        "list {:?}",
        list(&nb)
    );
    let m: Vec<String> = nb.to_matrix().iter().map(|r| r.iter().map(|v| v.to_string()).collect()).collect();
    ensure!(m == ["01100", "10110", "11001", "01000", "00100"], "matrix {m:?}");
    let core = st_bridges(
        &rectangles(),
        &BridgeOptions {
            remove_islands: true,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        list(&core.nb) == named(&[("Rect1", &[2, 3]), ("Rect2", &[1, 3]), ("Rect3", &[1, 2])]),
        "remove_islands {:?}",
        list(&core.nb)
    );
    let audit = nb.check_islands().to_string();
    let want = "  island_names island_num nb_num nb_names\n\
                1        Rect4          4      2    Rect2\n\
                2        Rect5          5      3    Rect3\n";
    ensure!(audit == want, "audit\n{audit}");
    Ok("list, matrix, remove_islands and audit exact".into())
}

fn edit_semantics() -> Outcome {
    let nb = bridged(1)
        .join(&UnitRef::Position(3), &UnitRef::Position(4))
        .and_then(|n| n.cut(&"Rect1".into(), &"Rect2".into()))
        .map_err(|e| e.to_string())?;
    let l = list(&nb);
    ensure!(
        l[..3] == named(&[("Rect1", &[3]), ("Rect2", &[3, 4]), ("Rect3", &[1, 2, 4, 5])]),
        "{l:?}"
    );
    ensure!(bridged(1).cut(&"Rect1".into(), &"Rect4".into()).is_err(), "cut of an absent edge succeeded");
    Ok("join(3,4), cut(Rect1,Rect2) exact".into())
}

fn random_connected(rng: &mut ChaCha8Rng) -> NbStructure {
    let n = rng.random_range(2..=40);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i, rng.random_range(0..i))).collect();
    for _ in 0..rng.random_range(0..n) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.push((a, b));
        }
    }
    NbStructure::from_edges((0..n).map(|i| format!("u{i}")).collect(), &edges).unwrap()
}

fn precision_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let nb = random_connected(&mut rng);
        let n = nb.len();
        let p: Precision = icar_precision(&nb).map_err(|e| e.to_string())?;
        let d = p.to_dense();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        ensure!(d.max_abs_asymmetry() == 0.0, "case {case}: asymmetric");
        for i in 0..n {
            ensure!(d.row(i).iter().sum::<f64>().abs() < 1e-12, "case {case}: P·1 ≠ 0");
        }
        let direct: f64 = nb.edges().map(|(i, j)| (x[i] - x[j]).powi(2)).sum();
        ensure!((p.quad_form(&x) - direct).abs() < 1e-10 * (1.0 + direct), "case {case}: quadratic form");
        let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| d[(i, j)])).eigenvalues;
        let zeros = eig.iter().filter(|v| v.abs() < 1e-10).count();
        ensure!(zeros == nb.components().len(), "case {case}: {zeros} null eigenvalues");
    }
    Ok("200 structures, n ≤ 40".into())
}

fn least_squares(x: &arelink::Matrix, y: &[f64]) -> Vec<f64> {
    let m = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)]);
    m.svd(true, true)
        .solve(&DVector::from_column_slice(y), 1e-12)
        .unwrap()
        .iter()
        .copied()
        .collect()
}

fn oracle_grid() -> (arelink::Areas, NbStructure) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base = arelink::sim::grid_areas(4, 4);
    let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..16).map(|i| 1.0 + x[i] + (i / 4) as f64 * 0.4 + rng.random_range(-0.3..0.3)).collect();
    let area: Vec<f64> = (0..16).map(|_| rng.random_range(0.5..2.0)).collect();
    let count: Vec<f64> = (0..16).map(|i| (y[i] * 2.0).exp().round()).collect();
    let coll = attach(
        &base,
        &[("x", nums(&x)), ("y", nums(&y)), ("area", nums(&area)), ("count", nums(&count))],
    );
    (coll, arelink::sim::rook_nb(4, 4))
}

fn fitter_oracles() -> Outcome {
    let (coll, nb) = oracle_grid();
    let err = |e: arelink::FitError| e.to_string();

    let spec = parse_model("y ~ x + area", Family::Gaussian).unwrap();
    let d = build_design(&spec, &coll, None).map_err(err)?;
    let fit = pirls_fit(&d, &[]).map_err(err)?;
    let ls = least_squares(d.x(), &d.y);
    let a = fit.beta.iter().zip(&ls).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    ensure!(a < 1e-8, "(a) least squares gap {a:e}");

    let fit = fit_model(&parse_model("count ~ offset(log(area))", Family::Poisson).unwrap(), &coll, None).map_err(err)?;
    let sy: f64 = coll.column("count").iter().map(|v| v.as_f64().unwrap()).sum();
    let sa: f64 = coll.column("area").iter().map(|v| v.as_f64().unwrap()).sum();
    let b = (fit.beta[0] - (sy / sa).ln()).abs();
    ensure!(b < 1e-8, "(b) rate gap {b:e}");

    let mut c: f64 = 0.0;
    for (src, fam, lam) in [
        ("y ~ x + s(name, bs='mrf')", Family::Gaussian, 0.5),
        ("count ~ x + s(name, bs='mrf') + offset(log(area))", Family::Poisson, 3.0),
    ] {
        let d = build_design(&parse_model(src, fam).unwrap(), &coll, Some(&nb)).map_err(err)?;
        let fit = pirls_fit(&d, &[lam]).map_err(err)?;
        let h = 1e-5;
        for j in 0..fit.beta.len() {
            let (mut up, mut dn) = (fit.beta.clone(), fit.beta.clone());
            up[j] += h;
            dn[j] -= h;
            let g = (penalized_objective(&d, &[lam], &up) - penalized_objective(&d, &[lam], &dn)) / (2.0 * h);
            c = c.max(g.abs());
        }
    }
    ensure!(c < 1e-6, "(c) gradient sup-norm {c:e}");

    let d = build_design(&parse_model("y ~ x + s(name, bs='mrf')", Family::Gaussian).unwrap(), &coll, Some(&nb))
        .map_err(err)?;
    let fit = pirls_fit(&d, &[1e8]).map_err(err)?;
    let sup = fit.terms[0].estimate.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure!(sup < 1e-4, "(d) effect sup-norm {sup:e}");
    Ok(format!("(a) {a:.1e} (b) {b:.1e} (c) {c:.1e} (d) {sup:.1e}"))
}

const ICAR_MODEL: &str = "y ~ x + s(name, bs='mrf') + offset(log(area))";
const PLAIN_MODEL: &str = "y ~ x + offset(log(area))";

fn parameter_recovery() -> Outcome {
    let sim = simulate_grid(&GridSimConfig::default());
    let fit = fit_model(&parse_model(ICAR_MODEL, Family::Poisson).unwrap(), &sim.areas, Some(&sim.nb))
        .map_err(|e| e.to_string())?;
    let b1 = fit.beta[1];
    let r = pearson(&fit.terms[0].estimate, &sim.gamma);
    ensure!((b1 - 1.5).abs() <= 0.25, "beta1 = {b1:.4}");
    ensure!(r > 0.8, "field correlation {r:.4}");
    Ok(format!("beta1 = {b1:.4}, correlation {r:.4}"))
}

fn aic_ordering() -> Outcome {
    let aics = |cfg: &GridSimConfig| -> Result<(f64, f64), String> {
        let sim = simulate_grid(cfg);
        let with = fit_model(&parse_model(ICAR_MODEL, Family::Poisson).unwrap(), &sim.areas, Some(&sim.nb))
            .map_err(|e| e.to_string())?;
        let without =
            fit_model(&parse_model(PLAIN_MODEL, Family::Poisson).unwrap(), &sim.areas, None).map_err(|e| e.to_string())?;
        Ok((with.aic, without.aic))
    };
    let (w, wo) = aics(&GridSimConfig::default())?;
    ensure!(w < wo - 2.0, "field: {w:.2} vs {wo:.2}");
    let (nw, nwo) = aics(&GridSimConfig {
        nx: 8,
        ny: 8,
        field_sd: 0.0,
        ..Default::default()
    })?;
    ensure!(nw >= nwo - 2.0, "noise: {nw:.2} vs {nwo:.2}");
    Ok(format!("field {w:.1} < {wo:.1}; noise {nw:.1} vs {nwo:.1}"))
}

fn naming_contract() -> Outcome {
    let (coll, nb) = hierarchy();
    let fit = fit_model(&parse_model(HIERARCHY_FORMULA, Family::Gaussian).unwrap(), &coll, Some(&nb))
        .map_err(|e| e.to_string())?;
    let aug = st_augment(&fit.summary(), &coll).map_err(|e| e.to_string())?;
    let want = [
        "name",
        "oa",
        "lsoa",
        "msoa",
        "llti",
        "unemp",
        "random.effect.msoa",
        "se.random.effect.msoa",
        "random.effect.llti|msoa",
        "se.random.effect.llti|msoa",
        "random.effect.lsoa",
        "se.random.effect.lsoa",
        "random.effect.llti|lsoa",
        "se.random.effect.llti|lsoa",
        "mrf.smooth.oa",
        "se.mrf.smooth.oa",
        "mrf.smooth.llti|oa",
        "se.mrf.smooth.llti|oa",
    ];
    let got = aug.columns();
    ensure!(got == want, "{got:?}");
    let doc = aug.to_geojson();
    let keys: Vec<&String> = doc["features"][0].as_object().unwrap().keys().collect();
    ensure!(keys.last().map(|k| k.as_str()) == Some("geometry"), "geometry not last: {keys:?}");
    Ok("18 columns in contract order".into())
}

fn render_determinism() -> Outcome {
    let (coll, nb) = (rectangles(), bridged(1));
    let a = render_nb_map(&coll, &nb, &NbMapOptions::default()).map_err(|e| e.to_string())?;
    let b = render_nb_map(&coll, &nb, &NbMapOptions::default()).map_err(|e| e.to_string())?;
    ensure!(a == b, "nb map renders differ");
    let polys = a.matches("<path class=\"unit\"").count();
    let edges = a.matches("<line class=\"link\"").count();
    ensure!(polys == 5 && edges == 5, "{polys} polygons, {edges} edges");

    let (coll, nb) = hierarchy();
    let fit = fit_model(&parse_model(HIERARCHY_FORMULA, Family::Gaussian).unwrap(), &coll, Some(&nb))
        .map_err(|e| e.to_string())?;
    let aug = st_augment(&fit.summary(), &coll).map_err(|e| e.to_string())?;
    let m1 = render_pred_maps(&aug, &PredMapOptions::default()).map_err(|e| e.to_string())?;
    let m2 = render_pred_maps(&aug, &PredMapOptions::default()).map_err(|e| e.to_string())?;
    ensure!(m1 == m2, "choropleth renders differ");
    let non_se = aug.added.iter().filter(|(n, _)| !n.starts_with("se.")).count();
    ensure!(m1.len() == non_se, "{} maps for {non_se} columns", m1.len());
    Ok(format!("5 polygons, 5 edges, {} choropleths", m1.len()))
}

fn random_ident(rng: &mut ChaCha8Rng) -> String {
    const POOL: [&str; 6] = ["s", "offset", "log", "by", "x.1", "a-b"];
    if rng.random_bool(0.2) {
        return POOL[rng.random_range(0..POOL.len())].to_string();
    }
    let len = rng.random_range(1..8);
    let mut s = String::new();
    s.push(rng.random_range(b'a'..=b'z') as char);
    for _ in 1..len {
        let c = b"abcdefghijklmnopqrstuvwxyz0123456789_."[rng.random_range(0..38)];
        s.push(c as char);
    }
    s
}

fn random_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    let response = random_ident(rng);
    let family = if rng.random_bool(0.5) { Family::Poisson } else { Family::Gaussian };
    let mut s = ModelSpec::new(response.clone()).with_family(family);
    for _ in 0..rng.random_range(0..4) {
        let v = random_ident(rng);
        if v != response && !s.fixed.contains(&v) {
            s.fixed.push(v);
        }
    }
    for _ in 0..rng.random_range(0..3) {
        let g = random_ident(rng);
        if !s.re_intercepts.contains(&g) {
            s.re_intercepts.push(g);
        }
    }
    for _ in 0..rng.random_range(0..3) {
        let t = ReSlope {
            group: random_ident(rng),
            covariate: random_ident(rng),
        };
        if !s.re_slopes.contains(&t) {
            s.re_slopes.push(t);
        }
    }
    for _ in 0..rng.random_range(0..3) {
        let t = MrfSmooth {
            group: random_ident(rng),
            k: rng.random_bool(0.5).then(|| rng.random_range(1..60)),
        };
        if !s.mrf_intercepts.iter().any(|o| o.group == t.group) {
            s.mrf_intercepts.push(t);
        }
    }
    for _ in 0..rng.random_range(0..3) {
        let t = MrfSlope {
            group: random_ident(rng),
            by: random_ident(rng),
            k: rng.random_bool(0.5).then(|| rng.random_range(1..60)),
        };
        if !s.mrf_slopes.iter().any(|o| o.group == t.group && o.by == t.by) {
            s.mrf_slopes.push(t);
        }
    }
    if rng.random_bool(0.5) {
        s.offset = Some(Offset {
            var: random_ident(rng),
            log: rng.random_bool(0.5),
        });
    }
    s
}

fn formula_parser() -> Outcome {
    let indo = parse_formula(
        "damaging_quakes_total ~ fault_concentration + s(province, bs='mrf', k=24) + offset(log(area_province))",
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        indo.response == "damaging_quakes_total"
            && indo.fixed == ["fault_concentration"]
            && indo.mrf_intercepts
                == [MrfSmooth {
                    group: "province".into(),
                    k: Some(24)
                }]
            && indo.offset
                == Some(Offset {
                    var: "area_province".into(),
                    log: true
                })
            && indo.re_intercepts.is_empty()
            && indo.re_slopes.is_empty()
            && indo.mrf_slopes.is_empty(),
        "indonesia {indo:?}"
    );
    let min = parse_formula("y ~ x").map_err(|e| e.to_string())?;
    ensure!(min.fixed == ["x"] && !min.has_penalized_terms(), "minimal {min:?}");
    let h = parse_formula(HIERARCHY_FORMULA).map_err(|e| e.to_string())?;
    ensure!(
        h.fixed == ["llti"]
            && h.re_intercepts == ["msoa", "lsoa"]
            && h.re_slopes.len() == 2
            && h.re_slopes.iter().all(|s| s.covariate == "llti")
            && h.mrf_intercepts.len() == 1
            && h.mrf_slopes
                == [MrfSlope {
                    group: "oa".into(),
                    by: "llti".into(),
                    k: None
                }],
        "hierarchy {h:?}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..200 {
        let spec = random_spec(&mut rng);
        let text = format_formula(&spec);
        let back = parse_model(&text, spec.family).map_err(|e| format!("spec {i} `{text}`: {e}"))?;
        ensure!(back == spec, "spec {i} `{text}` did not round-trip");
    }
    Ok("3 formulas, 200 random specs".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("fixture golden tests", fixture_golden, Duration::from_secs(1)),
        ("edit semantics", edit_semantics, Duration::from_secs(1)),
        ("precision-matrix properties", precision_properties, Duration::from_secs(30)),
        ("fitter oracles", fitter_oracles, Duration::from_secs(60)),
        ("parameter recovery 10x10", parameter_recovery, Duration::from_secs(60)),
        ("AIC ordering", aic_ordering, Duration::from_secs(60)),
        ("naming contract", naming_contract, Duration::from_secs(60)),
        ("render determinism", render_determinism, Duration::from_secs(60)),
        ("formula parser", formula_parser, Duration::from_secs(10)),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if took > budget => Err(format!("{msg}; over the {budget:?} budget")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS  {name}: {msg} [{took:.2?}]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg} [{took:.2?}]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

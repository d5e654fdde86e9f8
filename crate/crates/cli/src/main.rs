//! `arelink`: build and edit neighbourhood structures, fit models, attach
//! predictions and draw maps. Stages exchange JSON files.

use std::fs;
use std::io::IsTerminal;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arelink::augment::AugmentedCollection;
use arelink::geom::DistanceMetric;
use arelink::render::pred_map_filename;
use arelink::{
    dist_band, export_augmented, fit_model, load_areas, parse_model, render_nb_map, render_pred_maps, st_augment,
    st_bridges, Areas, Augmented, BridgeOptions, ExportFormat, Family, FitSummary, IslandAudit, NbForm, NbFormat,
    NbMapOptions, NbStructure, NodeStyle, PredMapOptions, UnitRef,
};
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "arelink", version, about = "Neighbourhood structures, areal models and their maps")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Boundary,
    Centroid,
}

#[derive(Clone, Copy, ValueEnum)]
enum Nodes {
    Point,
    Numeric,
}

#[derive(Clone, Copy, ValueEnum)]
enum AuditFormat {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Queen contiguity with each island linked to its k nearest units.
    Bridges {
        /// Input GeoJSON FeatureCollection of polygons.
        #[arg(long = "in")]
        input: PathBuf,
        /// Property holding the unique unit names.
        #[arg(long, default_value = "name")]
        name_field: String,
        /// Number of nearest units each island is linked to.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Drop islands instead of linking them.
        #[arg(long)]
        remove_islands: bool,
        /// Distance used to rank candidate links for islands.
        #[arg(long, value_enum, default_value = "boundary")]
        metric: Metric,
        /// Output structure (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also write the (possibly island-free) collection here.
        #[arg(long)]
        out_areas: Option<PathBuf>,
    },
    /// Lists the links added for islands.
    CheckIslands {
        #[arg(long)]
        nb: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: AuditFormat,
    },
    /// Adds (--join A,B) or removes (--cut A,B) links, applied left to right.
    /// Units are 1-based positions or names.
    Edit {
        #[arg(long)]
        nb: PathBuf,
        #[arg(long, value_name = "A,B")]
        join: Vec<String>,
        #[arg(long, value_name = "A,B")]
        cut: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draws the units, their links and nodes as SVG.
    Quickmap {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "name")]
        name_field: String,
        #[arg(long)]
        nb: PathBuf,
        /// Node style.
        #[arg(long, value_enum, default_value = "point")]
        nodes: Nodes,
        /// Draw outlines of each unit beneath the links.
        #[arg(long)]
        hulls: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Links units whose centroids lie within a distance threshold.
    DistBand {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "name")]
        name_field: String,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fits a model; smoothing parameters are chosen by REML.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "name")]
        name_field: String,
        /// Structure for mrf terms.
        #[arg(long)]
        nb: Option<PathBuf>,
        /// e.g. "y ~ x + s(region, bs='mrf') + offset(log(area))"
        #[arg(long)]
        formula: String,
        #[arg(long, default_value = "gaussian")]
        family: Family,
        /// Fit summary (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Attaches per-term estimates and standard errors to the collection.
    Augment {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "name")]
        name_field: String,
        /// Attach this structure as the `nb` column.
        #[arg(long)]
        nb: Option<PathBuf>,
        /// GeoJSON, or CSV when the name ends in .csv.
        #[arg(long)]
        out: PathBuf,
        /// e.g. exp:mrf.smooth.province
        #[arg(long)]
        transform: Vec<String>,
    },
    /// One choropleth per prediction column.
    QuickmapPreds {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "name")]
        name_field: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "darkgreen")]
        scale_low: String,
        #[arg(long, default_value = "ivory")]
        scale_mid: String,
        #[arg(long, default_value = "darkred")]
        scale_high: String,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        scale_midpoint: f64,
    },
    /// Serves the editing-and-fitting session over HTTP.
    Serve {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "name")]
        name_field: String,
        /// Starting structure; bridges with k = 1 when absent.
        #[arg(long)]
        nb: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Where POST /save writes.
        #[arg(long, default_value = "nb.json")]
        save: PathBuf,
    },
}

type Res<T> = Result<T, String>;

fn read(path: &Path) -> Res<Vec<u8>> {
    fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Res<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn areas(path: &Path, name_field: &str) -> Res<Areas> {
    load_areas(&read(path)?, name_field).map_err(|e| format!("{}: {e}", path.display()))
}

fn structure(path: &Path) -> Res<NbStructure> {
    NbStructure::import(NbFormat::Json, &read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_nb(path: &Path, nb: &NbStructure) -> Res<()> {
    write(path, &nb.export(NbFormat::Json).map_err(|e| e.to_string())?)
}

fn colour_enabled() -> bool {
    std::env::var("ARELINK_COLOR").map_or(true, |v| v != "never") && std::io::stdout().is_terminal()
}

fn audit_table(audit: &IslandAudit) -> String {
    let text = audit.to_string();
    if !colour_enabled() {
        return text;
    }
    match text.split_once('\n') {
        Some((head, rest)) => format!("\x1b[1m{head}\x1b[0m\n{rest}"),
        None => text,
    }
}

fn pair(s: &str) -> Res<(UnitRef, UnitRef)> {
    match s.split_once(',') {
        Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
            Ok((a.parse().expect("infallible"), b.parse().expect("infallible")))
        }
        _ => Err(format!("expected A,B but got `{s}`")),
    }
}

/// `--join` and `--cut` occurrences in command-line order.
fn ordered_edits(m: &ArgMatches) -> Vec<(bool, String)> {
    let mut edits: Vec<(usize, bool, String)> = Vec::new();
    for (id, join) in [("join", true), ("cut", false)] {
        if let (Some(idx), Some(vals)) = (m.indices_of(id), m.get_many::<String>(id)) {
            edits.extend(idx.zip(vals).map(|(i, v)| (i, join, v.clone())));
        }
    }
    edits.sort_by_key(|e| e.0);
    edits.into_iter().map(|(_, j, v)| (j, v)).collect()
}

fn run(cmd: Cmd, matches: &ArgMatches) -> Res<()> {
    match cmd {
        Cmd::Bridges {
            input,
            name_field,
            k,
            remove_islands,
            metric,
            out,
            out_areas,
        } => {
            let coll = areas(&input, &name_field)?;
            let opts = BridgeOptions {
                link_islands_k: k,
                remove_islands,
                metric: match metric {
                    Metric::Boundary => DistanceMetric::Boundary,
                    Metric::Centroid => DistanceMetric::Centroid,
                },
                ..Default::default()
            };
            let b = st_bridges(&coll, &opts).map_err(|e| e.to_string())?;
            write_nb(&out, &b.nb)?;
            if let Some(p) = out_areas {
                let doc = serde_json::to_vec_pretty(&b.areas.to_geojson()).expect("geojson serialises");
                write(&p, &doc)?;
            }
            println!("{} units, {} links, {} island links", b.nb.len(), b.nb.edge_count(), b.nb.check_islands().rows.len());
        }
        Cmd::CheckIslands { nb, format } => {
            let audit = structure(&nb)?.check_islands();
            match format {
                AuditFormat::Table => print!("{}", audit_table(&audit)),
                AuditFormat::Json => println!("{}", serde_json::to_string(&audit).expect("audit serialises")),
            }
        }
        Cmd::Edit { nb, out, .. } => {
            let sub = matches.subcommand_matches("edit").expect("edit matches");
            let mut s = structure(&nb)?;
            for (join, spec) in ordered_edits(sub) {
                let (a, b) = pair(&spec)?;
                s = if join { s.join(&a, &b) } else { s.cut(&a, &b) }.map_err(|e| e.to_string())?;
            }
            write_nb(&out, &s)?;
        }
        Cmd::Quickmap {
            input,
            name_field,
            nb,
            nodes,
            hulls,
            out,
        } => {
            let opts = NbMapOptions {
                nodes: match nodes {
                    Nodes::Point => NodeStyle::Point,
                    Nodes::Numeric => NodeStyle::Numeric,
                },
                concavehull: hulls,
                ..Default::default()
            };
            let svg = render_nb_map(&areas(&input, &name_field)?, &structure(&nb)?, &opts).map_err(|e| e.to_string())?;
            write(&out, svg.as_bytes())?;
        }
        Cmd::DistBand {
            input,
            name_field,
            threshold,
            out,
        } => {
            let nb = dist_band(&areas(&input, &name_field)?, threshold).map_err(|e| e.to_string())?;
            write_nb(&out, &nb)?;
            println!("{} units, {} links", nb.len(), nb.edge_count());
        }
        Cmd::Fit {
            input,
            name_field,
            nb,
            formula,
            family,
            out,
        } => {
            let coll = areas(&input, &name_field)?;
            let nb = nb.as_deref().map(structure).transpose()?;
            let spec = parse_model(&formula, family).map_err(|e| e.to_string())?;
            let fit = fit_model(&spec, &coll, nb.as_ref()).map_err(|e| e.to_string())?;
            let summary = fit.summary();
            write(&out, &serde_json::to_vec_pretty(&summary).expect("summary serialises"))?;
            println!(
                "deviance explained {:.1}%, aic {:.3}, converged {}",
                summary.deviance_explained * 100.0,
                summary.aic,
                summary.converged
            );
        }
        Cmd::Augment {
            fit,
            input,
            name_field,
            nb,
            out,
            transform,
        } => {
            let summary: FitSummary =
                serde_json::from_slice(&read(&fit)?).map_err(|e| format!("{}: {e}", fit.display()))?;
            let coll = areas(&input, &name_field)?;
            let mut aug = st_augment(&summary, &coll).map_err(|e| e.to_string())?;
            if let Some(p) = nb {
                aug = aug.with_nb(structure(&p)?, NbForm::List).map_err(|e| e.to_string())?;
            }
            for t in &transform {
                aug.apply_transform(t).map_err(|e| e.to_string())?;
            }
            let format = if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                ExportFormat::Csv
            } else {
                ExportFormat::GeoJson
            };
            write(&out, &export_augmented(&aug, format).map_err(|e| e.to_string())?)?;
            if aug.noop {
                println!("no penalized terms; nothing added");
            }
        }
        Cmd::QuickmapPreds {
            input,
            name_field,
            out_dir,
            scale_low,
            scale_mid,
            scale_high,
            scale_midpoint,
        } => {
            let aug: Augmented = AugmentedCollection::from_collection(&areas(&input, &name_field)?);
            let opts = PredMapOptions {
                scale_low,
                scale_mid,
                scale_high,
                scale_midpoint,
                ..Default::default()
            };
            let maps = render_pred_maps(&aug, &opts).map_err(|e| e.to_string())?;
            for m in maps {
                let path = out_dir.join(pred_map_filename(&m.column));
                write(&path, m.svg.as_bytes())?;
                println!("{}", path.display());
            }
        }
        Cmd::Serve {
            input,
            name_field,
            nb,
            port,
            save,
        } => {
            let coll = areas(&input, &name_field)?;
            let (coll, nb) = match nb {
                Some(p) => (coll, structure(&p)?),
                None => {
                    let b = st_bridges(&coll, &BridgeOptions::default()).map_err(|e| e.to_string())?;
                    (b.areas, b.nb)
                }
            };
            let state = arelink_server::AppState::new(coll, nb, save);
            let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
            arelink_server::serve_blocking(state, addr).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn fail(command: &str, msg: &str) -> ExitCode {
    let line = json!({"error": msg, "command": command});
    eprintln!("{line}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let text: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            return fail("", text.join(" ").trim_start_matches("error: "));
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => return fail("", &e.to_string()),
    };
    let name = matches.subcommand_name().unwrap_or("").to_string();
    match run(cli.cmd, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&name, &e),
    }
}

//! Neighbourhood structures over polygon collections with island units,
//! ICAR and random-effect penalized GLMs, and map rendering of the
//! resulting spatially varying effects.
//!
//! The workflow: build a structure with [`st_bridges`] (islands linked to
//! their nearest units), audit and edit it, fit a model written in the
//! formula mini-language with [`fit_model`], attach predictions with
//! [`st_augment`] and draw them with [`render_pred_maps`].

pub mod augment;
pub mod fit;
pub mod formula;
pub mod geom;
pub mod linalg;
pub mod mrf;
pub mod nbgraph;
pub mod render;
pub mod scalar;
pub mod sim;

pub use augment::{export_augmented, st_augment, AugmentError, AugmentedCollection, ExportFormat};
pub use fit::{
    build_design, fit_model, pirls_fit, select_lambdas, term_predictions, FitError, FitResult, FitSummary, TermKind,
};
pub use formula::{format_formula, parse_formula, parse_model, Family, FormulaError, ModelSpec};
pub use geom::{load_areas, AreaCollection, AreaUnit, GeomError, Point, Polygon};
pub use mrf::{icar_precision, MrfError, PrecisionSpec};
pub use nbgraph::{
    dist_band, st_bridges, BridgeOptions, Bridged, IslandAudit, IslandLink, NbError, NbForm, NbFormat, NbStructure,
    UnitRef,
};
pub use render::{render_nb_map, render_pred_maps, Colour, NbMapOptions, NodeStyle, PredMapOptions, RenderError};
pub use scalar::Scalar;

pub type Areas = geom::AreaCollection<f64>;
pub type Areas32 = geom::AreaCollection<f32>;
pub type Precision = mrf::PrecisionSpec<f64>;
pub type Precision32 = mrf::PrecisionSpec<f32>;
pub type Fit = fit::FitResult<f64>;
pub type Fit32 = fit::FitResult<f32>;
pub type Augmented = augment::AugmentedCollection<f64>;
pub type Matrix = linalg::Matrix<f64>;

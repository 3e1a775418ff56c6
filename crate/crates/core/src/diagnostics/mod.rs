//! Latent-vacancy instrumentation.

pub mod coverage;
pub mod dbscan;
pub mod mapper;
pub mod mixture;
pub mod shift;

pub use coverage::{barycentric, grid_coverage, simplex_coverage_export, SimplexExport};
pub use dbscan::{cluster_count, dbscan, DbscanParams, NOISE};
pub use mapper::{connected_components, mapper, mapper_sweep, Components, MapperGraph, MapperNode, MapperParams};
pub use mixture::{fit_aggregated_posterior, mixture_nll, posterior, GaussianMixture, LatentPart};
pub use shift::{median, nll_shift_report, report_from_nlls, NllShiftReport};

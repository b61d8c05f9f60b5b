//! Mode counting and localization for Gaussian kernel density estimators of
//! Gaussian samples, with Kac-Rice predictions, Edgeworth diagnostics, and
//! the self-attention particle dynamics on the circle.

pub mod attention;
pub mod edgeworth;
pub mod error;
pub mod experiments;
pub mod gkde;
pub mod kacrice;
pub mod modes;
pub mod quad;
pub mod rng;

pub use error::{Error, Result};
pub use gkde::{draw_samples, field_f, kde_eval, FieldValue, Order, SampleSet};
pub use kacrice::{exact_moments, intervals_t, kr_density, kr_integral, Belts, BeltParams, Interval, MomentPack, Region};
pub use modes::{find_modes, mean_shift, mean_shift_default, scale_space_check, CriticalPoint, Kind, ModeReport};
pub use attention::{attention_rhs, count_clusters, integrate, ClusterReport, ParticleState};
pub use edgeworth::{edgeworth_density, psi_eval, standardized_cumulants, validity_diagnostic, EdgeworthPack, ValidityRecord};
pub use experiments::{power_law_fit, run_sweep, tail_check, FitResult, ModeHistogram, SweepRecord, SweepSummary};

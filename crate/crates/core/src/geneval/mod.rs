//! Diversity and quality metrics for generated spectrograms: k-means bins,
//! the number of statistically different bins, Jensen-Shannon divergence,
//! and a small classifier probe.

mod evaluate;
mod kmeans;
mod metrics;
mod probe;

pub use evaluate::{evaluate_generation, fit_bins, BinReport, Bins, ClassReport, EvalConfig, EvalReport};
pub use kmeans::{kmeans_fit, nearest_centroid, BinModel};
pub use metrics::{critical_value, jsd, ndb, ndb_from_proportions, two_proportion_z, NdbResult};
pub use probe::{train_probe_classifier, Probe, ProbeConfig};

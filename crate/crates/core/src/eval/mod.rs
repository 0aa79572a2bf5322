//! Evaluation: exact mixture densities, neighbourhood outlier metrics, rank
//! correlation and the minority-score / denoising-loss identity checks.

mod correlation;
mod density;
mod identity;
mod neighbors;

pub use correlation::{average_ranks, spearman};
pub use density::{density_report, log_density_gmm, quantile_sorted, DensityReport, Summary};
pub use identity::{identity_pointwise, verify_identity, verify_identity_surrogate, IdentityReport, IdentityTerm, NoisePairing};
pub use neighbors::{avg_knn, euclidean, lof, KnnIndex, NeighborReport, ReferenceMode, AVG_KNN_K, LOF_K};

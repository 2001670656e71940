//! Feature ingestion and node-initialization utilities: the VGFT binary
//! container, a Sobol low-discrepancy generator, and k-means clustering.

pub mod kmeans;
pub mod sobol;
pub mod vgft;

pub use kmeans::{kmeans, KMeans, DEFAULT_MAX_ITERS};
pub use sobol::{Sobol, MAX_DIMENSIONS};
pub use vgft::{decode_features, encode_features, read_feature_file, write_feature_file, HEADER_LEN};

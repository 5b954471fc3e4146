//! Reference models: distance-weighted kNN and a small fully connected net.

pub mod knn;
pub mod simplenn;

pub use knn::{cross_validate, stratified_folds, CvReport, KnnModel};
pub use simplenn::{SimpleNn, SimpleNnSpec};

/*!
P2N recovers the subsystem structure of a software system from a graph of
its entities (objects, classes, methods).

The pipeline runs in five stages:

1. [`facts`] parses a plain-text facts file into a [`model::SoftwareGraph`]
   plus user-supplied numeric attributes.
2. [`features`] turns the graph into one feature row per entity (weighted
   adjacency plus attribute columns) and standardizes the columns.
3. [`metrics`] converts rows into a pairwise similarity matrix, either in
   process or sharded across workers by [`distnet`].
4. [`hac`] clusters the matrix bottom-up under one of four linkage rules
   and cuts the resulting dendrogram into a flat partition.
5. [`restructure`] reads the partition back against the declared module
   structure: saturation, move suggestions, partition agreement, and a
   progress report.

The numeric stages are generic over [`Scalar`]; the shipped pipeline and
the wire protocol in [`distnet`] run on `f64` (see the aliases below).
*/

pub mod cli;
pub mod distnet;
pub mod facts;
pub mod features;
pub mod hac;
pub mod metrics;
pub mod model;
pub mod restructure;
mod scalar;

pub use scalar::Scalar;

/// Scalar type used by the shipped pipeline, the CLI, and the wire protocol.
pub type Value = f64;

pub type FeatureMatrixF64 = features::FeatureMatrix<f64>;
pub type SimilarityMatrixF64 = metrics::SimilarityMatrix<f64>;
pub type DendrogramF64 = hac::Dendrogram<f64>;

pub type FeatureMatrixF32 = features::FeatureMatrix<f32>;
pub type SimilarityMatrixF32 = metrics::SimilarityMatrix<f32>;
pub type DendrogramF32 = hac::Dendrogram<f32>;

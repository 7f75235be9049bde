//! Trajectory-pooled convolutional features encoded as Fisher Vectors over a
//! diagonal GMM vocabulary and classified with linear SVMs.
//!
//! Every numeric stage is generic over [`Real`]; the aliases below fix the
//! scalar type for the common cases.

pub mod data;
pub mod error;
pub mod eval;
pub mod fisher;
pub mod gmm;
pub mod models;
pub mod pca;
pub mod pipeline;
pub mod pooling;
pub mod scalar;
pub mod selftest;
pub mod svm;
pub mod synthetic;
pub mod tensor;
pub mod trajectory;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Gmm = gmm::GmmModel<f64>;
pub type Gmm32 = gmm::GmmModel<f32>;
pub type Pca = pca::PcaModel<f64>;
pub type Pca32 = pca::PcaModel<f32>;
pub type BinarySvm = svm::BinaryModel<f64>;
pub type LinearSvm = svm::LinearModel<f64>;
pub type Descriptor = pooling::TrajectoryDescriptor<f64>;
pub type Descriptor32 = pooling::TrajectoryDescriptor<f32>;
pub type Fv = fisher::FisherVector<f64>;

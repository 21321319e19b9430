//! Zone-based prostate lesion classification on paired T2/ADC patches.
//!
//! Numeric kernels are generic over [`Real`]; the aliases below pin the
//! common `f64` instantiations.

pub mod classify;
pub mod container;
pub mod error;
pub mod grid;
pub mod model;
pub mod num;
pub mod seed;
pub mod stats;
pub mod texture;
pub mod standardizer;
pub mod eval;
pub mod net;
pub mod sampler;
pub mod corpus;
pub mod persist;
pub mod pipeline;
pub mod phantom;
pub mod report;

pub use classify::{
    feature_importances, k_fold_cv, predict_proba, randomized_search, train, CvMetric, Importances, ModelKind,
    ModelSpec, TrainMatrix, TrainedModel,
};
pub use error::{Error, Result};
pub use eval::{f1_at, pr_auc, roc_auc};
pub use grid::Grid;
pub use model::{FeatureVector, Modality, PairedSample, Patch, Split, Zone, ZoneDataset};
pub use net::{MicroNet, MicroNet32, NetConfig};
pub use num::Real;
pub use phantom::{generate_corpus, PhantomConfig};
pub use pipeline::{run_pipeline, PipelineConfig};
pub use sampler::{CaseImage, SamplerConfig};
pub use standardizer::{apply_standardizer, fit_standardizer, StandardizationConfig};

/// Intensity image in double precision.
pub type Image = Grid<f64>;
/// Standardization model over `f64` intensities.
pub type Standardizer = standardizer::StandardizationModel<f64>;
/// Scores with binary labels in double precision.
pub type Scores = eval::LabeledScores<f64>;
/// One modality's thirteen features.
pub type ModalityFeatures = [f64; model::FEATURES_PER_MODALITY];

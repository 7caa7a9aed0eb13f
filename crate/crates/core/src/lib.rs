//! Open-vocabulary semantic radiance fields on an explicit voxel grid.
//!
//! A dense trilinear grid stores density, color, and a semantic feature
//! per vertex. Rendered features are compared with class text embeddings
//! by cosine similarity to produce per-pixel class logits. Training
//! supervises those logits with label maps derived from noisy per-view
//! relevancy maps, cleaned by majority voting inside region proposals
//! ([`rsr`]), and later with pseudo maps rendered from the field itself
//! for training and synthesized views ([`cse`]).

pub mod cse;
pub mod data;
pub mod error;
pub mod eval;
pub mod field;
pub mod math;
pub mod morph;
pub mod relevancy;
pub mod render;
pub mod rng;
pub mod rsr;
pub mod synth;
pub mod train;

pub use data::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use data::image::{Image, LabelMap};
pub use data::rle::{Mask, RegionProposalSet, RleMask};
pub use data::scene::{load_scene, save_scene, Camera, SceneDataset, Split, TextEmbeddings, View};
pub use data::tensor::{read_tensor, write_tensor, DType, TensorFile};
pub use error::{Error, Result};
pub use eval::{evaluate_field, ConfusionMatrix, EvalReport};
pub use field::{Aabb, FieldGrid, GridGradient};
pub use math::{Mat3, Quat, Vec3};
pub use render::{render_image, RayBounds, RenderedImage};
pub use rsr::{rsr_refine, RefinedMap};
pub use synth::{CorruptionParams, SyntheticSceneSpec};
pub use train::{Mode, StepStats, TrainConfig, Trainer};

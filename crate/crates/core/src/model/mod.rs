//! The Dynamic GConv layer, the stacked model, joint aggregation and input streams.

mod config;
mod layer;
mod modality;
mod net;

pub use config::{aggregated_joints, LayerShape, ModelConfig};
pub use layer::{fuse, graph_aggregate, joint_aggregate, DynamicGConvLayer, LayerOutput, ProjectionP};
pub use modality::{derive_bone, derive_motion, Modality};
pub use net::{ensemble_logits, DynamicGcn, ForwardTrace};

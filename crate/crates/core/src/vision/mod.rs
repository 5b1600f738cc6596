//! Visual front end: high-resolution partitioning and the two frozen encoders.

pub mod image;
pub mod mov;
pub mod partition;

pub use self::image::Image;
pub use mov::{EncoderOutput, MovConfig, MovEncoders, Projection, VisualFeatures, VisualFrontend};
pub use partition::{assemble_visual_sequence, pad_and_split, plan_partition, PartitionPlan, SlotKind, SlotState, SplitImage};

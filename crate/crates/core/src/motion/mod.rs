//! Motion data model: rotations, skeletons, clips, forward kinematics,
//! root trajectories, and the model-facing feature layout.

pub mod clip;
pub mod kinematics;
pub mod repr;
pub mod rot6d;
pub mod skeleton;
pub mod trajectory;

pub use clip::Clip;
pub use repr::{BodyPart, FeatureLayout, ALL_PARTS};
pub use skeleton::Skeleton;
pub use trajectory::{TrajFrame, TRAJ_DIM};

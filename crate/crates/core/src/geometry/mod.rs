//! Geometric primitives and spatial queries shared by every stage of the
//! pipeline.

mod chamfer;
mod cloud;
mod kdtree;
mod normals;
mod transform;
mod voxel;

pub use chamfer::chamfer_distance;
pub use cloud::PointCloud;
pub use kdtree::{knn_search, KdTree, Neighbor, PointLike};
pub use normals::{estimate_normals, NormalDiagnostics};
pub(crate) use normals::{covariance as normals_covariance, sorted_eigen};
pub use transform::{apply_transform, RigidTransform};
pub use voxel::{voxel_downsample, Downsampled, VoxelGridIndex, VoxelKey};

/// Default voxel edge length in meters.
pub const DEFAULT_VOXEL_SIZE: f64 = 0.025;

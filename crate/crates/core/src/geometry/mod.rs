//! Point-cloud containers, rigid transforms, spatial queries, grid
//! subsampling, and data augmentation. Everything here is double precision
//! and deterministic; all functions are pure over immutable inputs.

mod augment;
mod cloud;
mod search;
mod subsample;
mod transform;

pub use augment::{augment, AugmentationConfig};
pub use cloud::PointCloud;
pub use search::{knn, radius_neighbors, KnnResult, NeighborLists};
pub use subsample::{grid_subsample, grid_subsample_indices};
pub use transform::{
    apply_transform, kabsch_fit, random_unit_vector, RigidTransform, ROTATION_TOL,
};

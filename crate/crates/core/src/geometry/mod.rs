//! Meshes, surface sampling, occupancy, point-cloud subsampling, observation
//! corruption and isosurface extraction.

pub mod fps;
pub mod io;
pub mod marching_cubes;
pub mod mesh;
pub mod occupancy;
pub mod partial;
pub mod primitives;
pub mod sampling;
pub mod vec3;

pub use fps::{canonical_start, farthest_point_sample};
pub use marching_cubes::{marching_cubes, Grid};
pub use mesh::{bbox_of, normalize_mesh, Normalization, TriMesh};
pub use occupancy::{occupancy_query, InsideTester};
pub use partial::{default_view_dir, render_partial_view};
pub use sampling::{
    add_observation_noise, near_surface_points, sample_surface, transfer_samples, OccupancyBatch, SurfaceSamples,
};
pub use vec3::Vec3;

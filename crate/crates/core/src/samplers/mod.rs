//! Sampling grids (uniform, deformation-driven, edge-simulated and
//! boundary-energy) and their application to images and labels.

mod edge;
mod energy;
mod grid;
mod kernel;

pub use edge::{edge_deformation_target, edge_map};
pub use energy::{
    boundary_pixels, edge_energy, edge_energy_grid, edge_energy_optimize, EdgeEnergyConfig,
    EdgeEnergyResult,
};
pub use grid::{
    attraction_fields, deformation_to_grid, deformation_weights_to_grid, grid_sample,
    label_sample, uniform_grid, SampleMode,
};
pub(crate) use grid::{bilinear_split, lattice_position};
pub use kernel::GaussianKernel;

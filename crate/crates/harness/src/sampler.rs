//! Grids for the fixed (non-learned) samplers.

use deformseg::models::SamplerGeometry;
use deformseg::samplers::{
    deformation_to_grid, edge_deformation_target, edge_energy_grid, edge_map, uniform_grid,
    EdgeEnergyConfig,
};
use deformseg::{LabelMap, SamplingGrid};

use crate::config::SamplerKind;
use crate::error::{HarnessError, Result};

/// Edge-simulated sampler: blurred label edges drive the attraction mapping.
/// Labels without edges fall back to the uniform grid.
pub fn edge_sim_grid(label: &LabelMap, radius: usize, geo: &SamplerGeometry) -> Result<SamplingGrid> {
    if edge_map(label).sum() == 0.0 {
        return Ok(uniform_grid(geo.out_h, geo.out_w)?);
    }
    let d = edge_deformation_target(label, radius, geo.map_h, geo.map_w)?;
    Ok(deformation_to_grid(&d, &geo.kernel, geo.out_h, geo.out_w)?)
}

/// Energy-optimized sampler with the same uniform fallback.
pub fn edge_energy_or_uniform(label: &LabelMap, geo: &SamplerGeometry, cfg: &EdgeEnergyConfig) -> Result<SamplingGrid> {
    match edge_energy_grid(label, geo.out_h, geo.out_w, cfg) {
        Err(deformseg::Error::NoBoundary) => Ok(uniform_grid(geo.out_h, geo.out_w)?),
        other => Ok(other?),
    }
}

/// Grid of a label-driven or uniform sampler.
pub fn fixed_grid(
    kind: SamplerKind,
    label: &LabelMap,
    geo: &SamplerGeometry,
    edge_radius: usize,
    energy: &EdgeEnergyConfig,
) -> Result<SamplingGrid> {
    match kind {
        SamplerKind::Uniform => Ok(uniform_grid(geo.out_h, geo.out_w)?),
        SamplerKind::EdgeSim => edge_sim_grid(label, edge_radius, geo),
        SamplerKind::EdgeEnergy => edge_energy_or_uniform(label, geo, energy),
        SamplerKind::Deformed => Err(HarnessError::Config(
            "the deformed sampler needs a trained network".into(),
        )),
    }
}

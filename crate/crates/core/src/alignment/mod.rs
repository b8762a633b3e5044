//! Rigid transform estimation from correspondences, plus the classical
//! closest-point and hypothesize-and-verify baselines.

mod icp;
mod procrustes;
mod randomized;
mod ransac;

use serde::{Deserialize, Serialize};

pub use icp::{icp, IcpVariant};
pub use procrustes::{procrustes_points, residual_energy, weighted_procrustes, DEGENERACY_RATIO};
pub use randomized::{randomized_fit, RandomizedConfig};
pub use ransac::{ransac_fit, RansacConfig};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub transform: RigidTransform,
    /// Energy of the correspondences under `transform`, in meters.
    pub residual_energy: f64,
    /// Whether `residual_energy` used the correspondence weights.
    pub weighted: bool,
    pub inlier_count: Option<usize>,
    pub iterations: Option<usize>,
    /// Per-iteration energies of iterative estimators.
    pub energy_trace: Vec<f64>,
    pub diagnostics: Vec<String>,
}

impl FitResult {
    pub(crate) fn new(transform: RigidTransform, residual_energy: f64, weighted: bool) -> Self {
        Self {
            transform,
            residual_energy,
            weighted,
            inlier_count: None,
            iterations: None,
            energy_trace: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let r = self.transform.rotation_row_major();
        serde_json::to_value(FitRecord {
            rotation: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            translation: self.transform.translation.into(),
            energy: self.residual_energy,
            weighted: self.weighted,
            inlier_count: self.inlier_count,
            iterations: self.iterations,
            energy_trace: self.energy_trace.clone(),
            diagnostics: self.diagnostics.clone(),
        })
        .expect("plain record serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let rec: FitRecord = serde_json::from_value(value.clone())?;
        let flat: Vec<f64> = rec.rotation.iter().flatten().copied().collect();
        let transform = RigidTransform::from_row_major(
            flat.try_into().map_err(|_| Error::Input("rotation must be 3x3".into()))?,
            rec.translation,
        )?;
        Ok(Self {
            transform,
            residual_energy: rec.energy,
            weighted: rec.weighted,
            inlier_count: rec.inlier_count,
            iterations: rec.iterations,
            energy_trace: rec.energy_trace,
            diagnostics: rec.diagnostics,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct FitRecord {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    energy: f64,
    weighted: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    inlier_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    energy_trace: Vec<f64>,
    diagnostics: Vec<String>,
}

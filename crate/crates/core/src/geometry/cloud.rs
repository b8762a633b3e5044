use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Positions with optional per-point color and normal channels.
///
/// Positions are in meters. Colors are RGB in `[0, 1]`. Normals, when
/// present, are unit length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    pub colors: Option<Vec<Vector3<f64>>>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vector3<f64>>) -> Self {
        Self {
            positions,
            colors: None,
            normals: None,
        }
    }

    pub fn with_colors(mut self, colors: Vec<Vector3<f64>>) -> Self {
        self.colors = Some(colors);
        self
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Self {
        self.normals = Some(normals);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Drops color information, as for depth-only input.
    pub fn without_colors(&self) -> Self {
        Self {
            positions: self.positions.clone(),
            colors: None,
            normals: self.normals.clone(),
        }
    }

    /// Checks the channel-length and unit-normal invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if let Some(colors) = &self.colors {
            if colors.len() != n {
                return Err(Error::Input(format!(
                    "color channel has {} entries for {} points",
                    colors.len(),
                    n
                )));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::Input(format!(
                    "normal channel has {} entries for {} points",
                    normals.len(),
                    n
                )));
            }
            if let Some(i) = normals.iter().position(|v| (v.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::Input(format!("normal {i} is not unit length")));
            }
        }
        if let Some(i) = self
            .positions
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::Input(format!("position {i} is not finite")));
        }
        Ok(())
    }

    pub(crate) fn require_non_empty(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            Err(Error::Input(format!("{what}: point cloud is empty")))
        } else {
            Ok(())
        }
    }

    /// Subset of points by index, carrying every channel along.
    pub fn select(&self, indices: &[usize]) -> Self {
        let pick = |v: &Vec<Vector3<f64>>| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            positions: pick(&self.positions),
            colors: self.colors.as_ref().map(pick),
            normals: self.normals.as_ref().map(pick),
        }
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let sum: Vector3<f64> = self.positions.iter().sum();
        sum / self.positions.len().max(1) as f64
    }
}

//! Per-point descriptors: learnable encoders over local context, the
//! projection head, and a hand-crafted histogram baseline.

mod context;
mod encoder;
mod fpfh;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use context::{
    build_context, context_dim, Contexts, CONTEXT_RADII, DEFAULT_CONTEXT_K, GEOMETRIC_DIM,
    GEOMETRIC_EIGEN_OFFSET, GEOMETRIC_SCALE, VISUAL_DIM,
};
pub(crate) use encoder::ByteReader;
pub use encoder::{
    encode, encoder_shapes, forward_on_tape, head_shapes, project_head, EncoderParams, LayerShape,
    TapeParams, FEATURE_DIM, HEAD_HIDDEN, HIDDEN_WIDTHS,
};
pub use fpfh::{fpfh_descriptor, FpfhOutput, FPFH_BINS, FPFH_DIM};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Geometric,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Visual => "visual",
            Modality::Geometric => "geometric",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(Modality::Visual),
            "geometric" => Ok(Modality::Geometric),
            other => Err(Error::param(format!("unknown modality '{other}'"))),
        }
    }
}

/// A cloud with one descriptor row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCloud {
    pub cloud: PointCloud,
    pub features: DMatrix<f64>,
    pub modality: Modality,
}

impl FeatureCloud {
    pub fn new(cloud: PointCloud, features: DMatrix<f64>, modality: Modality) -> Result<Self> {
        if features.nrows() != cloud.len() {
            return Err(Error::param(format!(
                "{} feature rows for {} points",
                features.nrows(),
                cloud.len()
            )));
        }
        Ok(Self {
            cloud,
            features,
            modality,
        })
    }

    /// Builds contexts and encodes them in one step.
    pub fn encode(cloud: &PointCloud, params: &EncoderParams, modality: Modality) -> Result<Self> {
        let contexts = build_context(cloud, modality, DEFAULT_CONTEXT_K)?;
        let features = encode(params, &contexts)?;
        Self::new(cloud.clone(), features, modality)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }
}

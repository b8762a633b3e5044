use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alignment::{randomized_fit, ransac_fit, weighted_procrustes, FitResult, RandomizedConfig, RansacConfig};
use crate::correspondence::{match_ratio_test, top_k_filter, CorrespondenceSet, DEFAULT_TOP_K};
use crate::error::{Error, Result};
use crate::features::{build_context, encode, Contexts, EncoderParams, FeatureCloud, Modality, DEFAULT_CONTEXT_K};
use crate::geometry::{voxel_downsample, PointCloud};

/// How the transform is fit to the filtered correspondences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Procrustes,
    Randomized,
    Ransac,
}

impl fmt::Display for FitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            FitMode::Procrustes => "procrustes",
            FitMode::Randomized => "randomized",
            FitMode::Ransac => "ransac",
        })
    }
}

impl FromStr for FitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "procrustes" => Ok(FitMode::Procrustes),
            "randomized" => Ok(FitMode::Randomized),
            "ransac" => Ok(FitMode::Ransac),
            other => Err(Error::param(format!("unknown fit mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegisterConfig {
    pub mode: FitMode,
    pub modality: Modality,
    pub voxel_size: f64,
    pub top_k: usize,
    pub randomized: RandomizedConfig,
    pub ransac: RansacConfig,
}

impl Default for RegisterConfig {
    fn default() -> Self {
        Self {
            mode: FitMode::Randomized,
            modality: Modality::Geometric,
            voxel_size: 0.025,
            top_k: DEFAULT_TOP_K,
            randomized: RandomizedConfig::default(),
            ransac: RansacConfig::default(),
        }
    }
}

/// A voxelized cloud with its encoder input.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cloud: PointCloud,
    pub contexts: Contexts,
}

pub fn prepare(cloud: &PointCloud, modality: Modality, voxel_size: f64) -> Result<Prepared> {
    let cloud = voxel_downsample(cloud, voxel_size)?.cloud;
    let contexts = build_context(&cloud, modality, DEFAULT_CONTEXT_K)?;
    Ok(Prepared { cloud, contexts })
}

impl Prepared {
    pub fn encode(&self, params: &EncoderParams) -> Result<FeatureCloud> {
        FeatureCloud::new(self.cloud.clone(), encode(params, &self.contexts)?, self.contexts.modality)
    }
}

/// Matches two feature clouds, keeps the strongest correspondences and fits.
pub fn fit_features(f0: &FeatureCloud, f1: &FeatureCloud, cfg: &RegisterConfig) -> Result<(FitResult, CorrespondenceSet)> {
    let c = top_k_filter(&match_ratio_test(f0, f1)?, cfg.top_k)?;
    let fit = match cfg.mode {
        FitMode::Procrustes => weighted_procrustes(&c, &f0.cloud, &f1.cloud, true)?,
        FitMode::Randomized => randomized_fit(&c, &f0.cloud, &f1.cloud, &cfg.randomized)?,
        FitMode::Ransac => ransac_fit(&c, &f0.cloud, &f1.cloud, &cfg.ransac)?,
    };
    Ok((fit, c))
}

/// Encodes both prepared clouds and fits.
pub fn register_prepared(a: &Prepared, b: &Prepared, params: &EncoderParams, cfg: &RegisterConfig) -> Result<FitResult> {
    Ok(fit_features(&a.encode(params)?, &b.encode(params)?, cfg)?.0)
}

/// Estimates the transform mapping `p0` onto `p1`: voxelize, build
/// contexts, encode, match, keep the top-k and fit.
pub fn register(p0: &PointCloud, p1: &PointCloud, params: &EncoderParams, cfg: &RegisterConfig) -> Result<FitResult> {
    if !(cfg.voxel_size > 0.0) || cfg.top_k == 0 {
        return Err(Error::param("register needs voxel_size > 0 and top_k >= 1"));
    }
    let a = prepare(p0, cfg.modality, cfg.voxel_size)?;
    let b = prepare(p1, cfg.modality, cfg.voxel_size)?;
    register_prepared(&a, &b, params, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene_pair, GeneratorParams, PairSeed};
    use crate::features::{context_dim, encoder_shapes};

    #[test]
    fn self_registration_is_identity() {
        let pair = generate_scene_pair(PairSeed { scene: 1, view: 0 }, &GeneratorParams::default()).unwrap();
        for modality in [Modality::Geometric, Modality::Visual] {
            let params = EncoderParams::random_init(3, &encoder_shapes(context_dim(modality)));
            for mode in [FitMode::Procrustes, FitMode::Randomized, FitMode::Ransac] {
                let cfg = RegisterConfig { mode, modality, ..Default::default() };
                let fit = register(&pair.cloud0, &pair.cloud0, &params, &cfg).unwrap();
                assert!(fit.transform.rotation_angle() < 1e-9, "{mode}");
                assert!(fit.transform.translation.norm() < 1e-9, "{mode}");
            }
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [FitMode::Procrustes, FitMode::Randomized, FitMode::Ransac] {
            assert_eq!(m.to_string().parse::<FitMode>().unwrap(), m);
        }
        assert!("svd".parse::<FitMode>().is_err());
    }
}

//! Registration metrics and report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::correspondence::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};

fn check_rotation(r: &Matrix3<f64>, which: &str) -> Result<()> {
    RigidTransform::new(*r, Vector3::zeros())
        .map(|_| ())
        .map_err(|e| Error::param(format!("{which} rotation: {e}")))
}

/// Geodesic angle between two rotations in degrees,
/// `arccos((tr(R_pr R_gtᵀ) − 1) / 2)`.
///
/// Evaluated as `atan2(sin θ, cos θ)` with `sin θ` taken from the skew part
/// of `R_pr R_gtᵀ`; arccos alone cannot resolve angles below ~1e-8 rad.
pub fn rotation_error(r_pr: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> Result<f64> {
    check_rotation(r_pr, "predicted")?;
    check_rotation(r_gt, "ground-truth")?;
    let m = r_pr * r_gt.transpose();
    let cos = (m.trace() - 1.0) / 2.0;
    let sin = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
    Ok(sin.atan2(cos).to_degrees())
}

/// Euclidean distance between translations, in centimeters.
pub fn translation_error(t_pr: &Vector3<f64>, t_gt: &Vector3<f64>) -> f64 {
    (t_pr - t_gt).norm() * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub rotation_deg: f64,
    pub translation_cm: f64,
    pub chamfer_cm: Option<f64>,
}

impl PairMetrics {
    /// Errors of `predicted` against `truth`, with the chamfer distance
    /// between `cloud0` moved by each when a cloud is given.
    pub fn compute(
        predicted: &RigidTransform,
        truth: &RigidTransform,
        cloud0: Option<&PointCloud>,
    ) -> Result<Self> {
        let chamfer_cm = match cloud0 {
            Some(c) => Some(
                crate::geometry::chamfer_distance(
                    &crate::geometry::apply_transform(predicted, c),
                    &crate::geometry::apply_transform(truth, c),
                )? * 100.0,
            ),
            None => None,
        };
        Ok(Self {
            rotation_deg: rotation_error(&predicted.rotation, &truth.rotation)?,
            translation_cm: translation_error(&predicted.translation, &truth.translation),
            chamfer_cm,
        })
    }

    /// Whether each error is within each threshold, keyed `metric@threshold`.
    pub fn flags(&self, thresholds: &Thresholds) -> BTreeMap<String, bool> {
        let mut out = BTreeMap::new();
        let rows = [
            ("rotation_deg", Some(self.rotation_deg), &thresholds.rotation_deg),
            ("translation_cm", Some(self.translation_cm), &thresholds.translation_cm),
            ("chamfer_cm", self.chamfer_cm, &thresholds.chamfer_cm),
        ];
        for (name, value, ts) in rows {
            if let Some(v) = value {
                for t in ts {
                    out.insert(format!("{name}@{t}"), v <= *t);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmrConfig {
    /// Inlier distance in meters.
    pub tau1: f64,
    /// Required inlier fraction.
    pub tau2: f64,
}

impl Default for FmrConfig {
    fn default() -> Self {
        Self {
            tau1: 0.10,
            tau2: 0.05,
        }
    }
}

impl FmrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > 0.0 && self.tau2 > 0.0 && self.tau2 < 1.0) {
            return Err(Error::param("need tau1 > 0 and 0 < tau2 < 1"));
        }
        Ok(())
    }
}

/// One pair's correspondences with the transform applied to cloud-1
/// points, so that inliers satisfy `‖x_p − T·x_q‖ < τ1`.
#[derive(Debug, Clone, Copy)]
pub struct FmrPair<'a> {
    pub correspondences: &'a CorrespondenceSet,
    pub cloud0: &'a PointCloud,
    pub cloud1: &'a PointCloud,
    pub transform: &'a RigidTransform,
    pub group: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmrResult {
    pub recall: f64,
    /// Population standard deviation of the per-group recalls.
    pub group_std: f64,
    pub matched: Vec<bool>,
    pub diagnostics: Vec<String>,
}

/// Whether a pair's inlier fraction strictly exceeds `τ2`.
pub fn feature_match(pair: &FmrPair<'_>, cfg: &FmrConfig) -> bool {
    let c = pair.correspondences;
    if c.is_empty() {
        return false;
    }
    let inliers = c
        .iter()
        .filter(|k| {
            let xp = pair.cloud0.positions[k.p];
            let xq = pair.transform.apply_point(&pair.cloud1.positions[k.q]);
            (xp - xq).norm() < cfg.tau1
        })
        .count();
    inliers as f64 / c.len() as f64 > cfg.tau2
}

pub fn feature_match_recall(pairs: &[FmrPair<'_>], cfg: &FmrConfig) -> Result<FmrResult> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut diagnostics = Vec::new();
    let matched: Vec<bool> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.correspondences.is_empty() {
                diagnostics.push(format!("pair {i} has no correspondences"));
            }
            feature_match(p, cfg)
        })
        .collect();
    let recall = matched.iter().filter(|&&m| m).count() as f64 / pairs.len() as f64;
    let mut groups: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for (p, &m) in pairs.iter().zip(&matched) {
        let g = groups.entry(p.group).or_default();
        g.0 += m as usize;
        g.1 += 1;
    }
    let rates: Vec<f64> = groups.values().map(|&(k, n)| k as f64 / n as f64).collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let group_std = (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rates.len() as f64).sqrt();
    Ok(FmrResult {
        recall,
        group_std,
        matched,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub rotation_deg: Vec<f64>,
    pub translation_cm: Vec<f64>,
    pub chamfer_cm: Vec<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rotation_deg: vec![5.0, 10.0, 45.0],
            translation_cm: vec![5.0, 10.0, 25.0],
            chamfer_cm: vec![1.0, 5.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub median: f64,
    /// Percentage of pairs with error at or below each threshold, keyed by
    /// the threshold as written.
    pub accuracies: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub pairs: usize,
    pub metrics: Vec<MetricSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn threshold_key(t: f64) -> String {
    format!("{t}")
}

fn summarize_metric(name: &str, values: &[f64], thresholds: &[f64]) -> MetricSummary {
    let accuracies = thresholds
        .iter()
        .map(|&t| {
            let hits = values.iter().filter(|&&v| v <= t).count();
            (threshold_key(t), 100.0 * hits as f64 / values.len() as f64)
        })
        .collect();
    MetricSummary {
        metric: name.to_string(),
        mean: mean(values),
        median: median(values),
        accuracies,
    }
}

pub fn summarize(metrics: &[PairMetrics], thresholds: &Thresholds) -> Result<Report> {
    if metrics.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let rot: Vec<f64> = metrics.iter().map(|m| m.rotation_deg).collect();
    let tr: Vec<f64> = metrics.iter().map(|m| m.translation_cm).collect();
    let mut out = vec![
        summarize_metric("rotation_deg", &rot, &thresholds.rotation_deg),
        summarize_metric("translation_cm", &tr, &thresholds.translation_cm),
    ];
    let ch: Vec<f64> = metrics.iter().filter_map(|m| m.chamfer_cm).collect();
    if ch.len() == metrics.len() {
        out.push(summarize_metric("chamfer_cm", &ch, &thresholds.chamfer_cm));
    }
    Ok(Report {
        pairs: metrics.len(),
        metrics: out,
    })
}

impl Report {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// Aligned text table: one row per metric.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "pairs: {}", self.pairs);
        let _ = writeln!(out, "{:<16} {:>10} {:>10}   accuracy (% at threshold)", "metric", "mean", "median");
        for m in &self.metrics {
            let mut acc: Vec<(&String, &f64)> = m.accuracies.iter().collect();
            acc.sort_by(|a, b| {
                let key = |s: &str| s.parse::<f64>().unwrap_or(f64::INFINITY);
                key(a.0).total_cmp(&key(b.0))
            });
            let acc: Vec<String> = acc.iter().map(|(t, v)| format!("@{t}: {v:6.1}")).collect();
            let _ = writeln!(out, "{:<16} {:>10.3} {:>10.3}   {}", m.metric, m.mean, m.median, acc.join("  "));
        }
        out
    }
}

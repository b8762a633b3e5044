use std::collections::HashMap;

use nalgebra::Vector3;

use super::PointCloud;
use crate::error::{Error, Result};

pub type VoxelKey = (i64, i64, i64);

/// Occupied cells of a voxel grid, each mapped to its representative point.
#[derive(Debug, Clone)]
pub struct VoxelGridIndex {
    pub voxel_size: f64,
    pub occupied: HashMap<VoxelKey, usize>,
}

impl VoxelGridIndex {
    pub fn key(&self, p: &Vector3<f64>) -> VoxelKey {
        voxel_key(p, self.voxel_size)
    }
}

/// Result of [`voxel_downsample`].
#[derive(Debug, Clone)]
pub struct Downsampled {
    pub cloud: PointCloud,
    /// For each output point, the input indices it absorbed (ascending).
    pub members: Vec<Vec<usize>>,
    pub grid: VoxelGridIndex,
}

fn voxel_key(p: &Vector3<f64>, size: f64) -> VoxelKey {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}

/// Nudges `v` by ulps until `floor(v / size) == cell`.
fn clamp_into_cell(mut v: f64, cell: i64, size: f64) -> f64 {
    while ((v / size).floor() as i64) > cell {
        v = v.next_down();
    }
    while ((v / size).floor() as i64) < cell {
        v = v.next_up();
    }
    v
}

/// Keeps one point per occupied voxel: the centroid of the voxel's points,
/// with averaged color and averaged, renormalized normal. Output points are
/// ordered by first occurrence of their voxel in the input.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<Downsampled> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(Error::param(format!(
            "voxel size must be positive, got {voxel_size}"
        )));
    }
    cloud.require_non_empty("voxel_downsample")?;

    let mut occupied: HashMap<VoxelKey, usize> = HashMap::new();
    let mut keys: Vec<VoxelKey> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, p) in cloud.positions.iter().enumerate() {
        let key = voxel_key(p, voxel_size);
        let slot = *occupied.entry(key).or_insert_with(|| {
            keys.push(key);
            members.push(Vec::new());
            members.len() - 1
        });
        members[slot].push(i);
    }

    let average = |channel: &Vec<Vector3<f64>>, idx: &[usize]| -> Vector3<f64> {
        idx.iter().map(|&i| channel[i]).sum::<Vector3<f64>>() / idx.len() as f64
    };

    let positions = members
        .iter()
        .zip(&keys)
        .map(|(idx, key)| {
            let c = average(&cloud.positions, idx);
            Vector3::new(
                clamp_into_cell(c.x, key.0, voxel_size),
                clamp_into_cell(c.y, key.1, voxel_size),
                clamp_into_cell(c.z, key.2, voxel_size),
            )
        })
        .collect();
    let colors = cloud
        .colors
        .as_ref()
        .map(|cs| members.iter().map(|idx| average(cs, idx)).collect());
    let normals = cloud.normals.as_ref().map(|ns| {
        members
            .iter()
            .map(|idx| {
                let n = average(ns, idx);
                let len = n.norm();
                if len > 1e-12 {
                    n / len
                } else {
                    ns[idx[0]]
                }
            })
            .collect()
    });

    Ok(Downsampled {
        cloud: PointCloud {
            positions,
            colors,
            normals,
        },
        members,
        grid: VoxelGridIndex {
            voxel_size,
            occupied,
        },
    })
}

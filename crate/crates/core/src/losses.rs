//! Training losses as plain scalar functions over concrete inputs.
//!
//! These evaluate the depth, lazy triplet, reprojection and weighted total
//! objectives exactly as written, without gradients. Defaults are the literal
//! forms (raw sums, unclamped triplet); mean reductions and a hinge are
//! opt-in.

use serde::{Deserialize, Serialize};

use crate::geometry::{spherical_projection, transform_points, PointCloud, Pose, SphericalConfig};
use crate::interaction::{DepthMap, SparseDepthTargets};
use crate::{Error, Result};

/// Default descriptor length.
pub const DESCRIPTOR_DIM: usize = 256;

/// Fixed-length place vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub Vec<f32>);

impl Descriptor {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("descriptor entry {i} is not finite")));
        }
        Ok(Descriptor(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Descriptor(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_t: f64,
    pub lambda_r: f64,
    /// Triplet margin.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_d: 0.01,
            lambda_t: 1.00,
            lambda_r: 0.01,
            alpha: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.lambda_d, self.lambda_t, self.lambda_r];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !self.alpha.is_finite() {
            return Err(Error::Argument(format!(
                "loss weights must be finite and >= 0: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    /// Plain sum over terms.
    #[default]
    Sum,
    /// Sum divided by the number of contributing terms (0 when there are none).
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TripletMode {
    /// `n_pos (alpha + max_p dis) - sum_n dis`, may be negative.
    #[default]
    Literal,
    /// The literal value clamped at zero.
    Hinge,
}

/// L1 between sparse LiDAR depths and the per-camera depth maps at each
/// target's pixel.
pub fn depth_loss(targets: &SparseDepthTargets, depths: &[DepthMap], reduction: Reduction) -> Result<f64> {
    if targets.per_camera.len() != depths.len() {
        return Err(Error::Shape(format!(
            "{} target lists but {} depth maps",
            targets.per_camera.len(),
            depths.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (cam, (list, map)) in targets.per_camera.iter().zip(depths).enumerate() {
        for t in list {
            let d = map.get(t.u, t.v).ok_or_else(|| {
                Error::Internal(format!(
                    "target ({}, {}) of camera {cam} outside its {}x{} depth map",
                    t.u, t.v, map.width, map.height
                ))
            })?;
            sum += (t.d - d).abs();
            count += 1;
        }
    }
    Ok(reduce(sum, count, reduction))
}

fn reduce(sum: f64, count: usize, reduction: Reduction) -> f64 {
    match reduction {
        Reduction::Sum => sum,
        Reduction::Mean if count == 0 => 0.0,
        Reduction::Mean => sum / count as f64,
    }
}

/// Squared Euclidean distance.
pub fn descriptor_distance(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("descriptor lengths {} and {}", a.dim(), b.dim())));
    }
    Ok(squared_distance(&a.0, &b.0))
}

pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Lazy triplet loss over one query, its positives and its negatives.
pub fn triplet_loss(
    query: &Descriptor,
    positives: &[Descriptor],
    negatives: &[Descriptor],
    alpha: f64,
    mode: TripletMode,
) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Argument(format!(
            "triplet loss needs positives and negatives (got {} and {})",
            positives.len(),
            negatives.len()
        )));
    }
    let mut hardest = f64::NEG_INFINITY;
    for p in positives {
        hardest = hardest.max(descriptor_distance(query, p)?);
    }
    let mut dn = negatives
        .iter()
        .map(|n| descriptor_distance(query, n))
        .collect::<Result<Vec<_>>>()?;
    // Fixed summation order keeps the value independent of negative order.
    dn.sort_by(f64::total_cmp);
    let negative_sum: f64 = dn.iter().sum();
    let value = positives.len() as f64 * (alpha + hardest) - negative_sum;
    Ok(match mode {
        TripletMode::Literal => value,
        TripletMode::Hinge => value.max(0.0),
    })
}

/// `T_L`: maps points of the positive sample's LiDAR frame into the query's
/// LiDAR frame, given world-from-ego poses of both samples.
pub fn relative_lidar_pose(pose_query: &Pose, pose_positive: &Pose, ego_from_lidar: &Pose) -> Pose {
    ego_from_lidar
        .inverse()
        .compose(&pose_query.inverse())
        .compose(pose_positive)
        .compose(ego_from_lidar)
}

/// Absolute range difference between the positive cloud re-projected into the
/// query frame and the query cloud. `Sum` runs over every cell with invalid
/// cells counting as 0; `Mean` averages over cells valid in both images.
pub fn reprojection_loss(
    cloud_positive: &PointCloud,
    cloud_query: &PointCloud,
    query_from_positive: &Pose,
    cfg: &SphericalConfig,
    reduction: Reduction,
) -> f64 {
    let warped = spherical_projection(&transform_points(cloud_positive, query_from_positive), cfg);
    let query = spherical_projection(cloud_query, cfg);
    match reduction {
        Reduction::Sum => warped
            .data
            .iter()
            .zip(&query.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum(),
        Reduction::Mean => {
            let (sum, count) = warped
                .data
                .iter()
                .zip(&query.data)
                .filter(|(&a, &b)| a > 0.0 && b > 0.0)
                .fold((0.0, 0usize), |(s, c), (&a, &b)| {
                    (s + (a as f64 - b as f64).abs(), c + 1)
                });
            reduce(sum, count, Reduction::Mean)
        }
    }
}

pub fn total_loss(depth: f64, triplet: f64, reprojection: f64, w: &LossWeights) -> f64 {
    w.lambda_d * depth + w.lambda_t * triplet + w.lambda_r * reprojection
}

//! Rigid transforms, pinhole projection and spherical range images.
//!
//! Frames follow the usual vehicle conventions: the ego and LiDAR frames are
//! x forward, y left, z up; camera frames are x right, y down, z forward.
//! A pose `T_a_b` maps points expressed in frame `b` into frame `a`.

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Allowed deviation of a quaternion norm from 1.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-9;

/// Default near clipping distance for camera projection, meters.
pub const DEFAULT_NEAR_CLIP: f64 = 0.1;

/// Rigid transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct Pose {
    translation: Vector3<f64>,
    rotation: UnitQuaternion<f64>,
}

/// JSON shape of a pose: translation plus (w, x, y, z) quaternion.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct PoseRecord {
    translation: [f64; 3],
    rotation: [f64; 4],
}

impl TryFrom<PoseRecord> for Pose {
    type Error = Error;

    fn try_from(r: PoseRecord) -> Result<Self> {
        Pose::new(r.translation, r.rotation)
    }
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        PoseRecord {
            translation: p.translation(),
            rotation: p.rotation_wxyz(),
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    /// Builds a pose from a translation and a `(w, x, y, z)` unit quaternion.
    ///
    /// The quaternion is stored as given (not renormalized) so that
    /// serialization round-trips exactly.
    pub fn new(translation: [f64; 3], rotation_wxyz: [f64; 4]) -> Result<Self> {
        if translation.iter().chain(rotation_wxyz.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose("non-finite component".into()));
        }
        let [w, x, y, z] = rotation_wxyz;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(Error::InvalidPose(format!(
                "quaternion norm {norm} deviates from 1 by more than {QUATERNION_NORM_TOLERANCE}"
            )));
        }
        Ok(Pose {
            translation: Vector3::from(translation),
            rotation: UnitQuaternion::new_unchecked(q),
        })
    }

    pub fn from_translation(translation: [f64; 3]) -> Self {
        Pose {
            translation: Vector3::from(translation),
            rotation: UnitQuaternion::identity(),
        }
    }

    /// Pose with a rotation of `yaw` radians about +z.
    pub fn from_yaw(translation: [f64; 3], yaw: f64) -> Self {
        Pose {
            translation: Vector3::from(translation),
            rotation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        }
    }

    /// Pose from a rotation matrix given row-major. The matrix must be
    /// orthonormal to the quaternion tolerance.
    pub fn from_rotation_matrix(translation: [f64; 3], rows: [[f64; 3]; 3]) -> Result<Self> {
        let m = nalgebra::Matrix3::from_row_slice(&[
            rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0], rows[2][1], rows[2][2],
        ]);
        let ortho = (m.transpose() * m - nalgebra::Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (m.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPose("rotation matrix is not a proper rotation".into()));
        }
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        Ok(Pose {
            translation: Vector3::from(translation),
            rotation: q,
        })
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    pub fn rotation_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Heading of the rotated x axis in the xy plane, radians.
    pub fn yaw(&self) -> f64 {
        let x = self.rotation * Vector3::x();
        x.y.atan2(x.x)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let q = self.rotation.quaternion() * other.rotation.quaternion();
        Pose {
            translation: self.translation + self.rotation * other.translation,
            rotation: UnitQuaternion::new_normalize(q),
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            translation: -(inv * self.translation),
            rotation: inv,
        }
    }

    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.rotation * Vector3::from(p) + self.translation;
        [v.x, v.y, v.z]
    }

    /// Largest absolute deviation from the identity transform, over the
    /// translation components and the quaternion (sign-agnostic).
    pub fn distance_from_identity(&self) -> f64 {
        let [w, x, y, z] = self.rotation_wxyz();
        let rot = (1.0 - w.abs()).abs().max(x.abs()).max(y.abs()).max(z.abs());
        self.translation.amax().max(rot)
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(a: &Pose) -> Pose {
    a.inverse()
}

/// One LiDAR return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Point { x, y, z, intensity }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite() && p.intensity.is_finite()))
        {
            return Err(Error::Argument(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Applies `pose` to every point; intensities are carried over.
pub fn transform_points(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| {
                let [x, y, z] = pose.transform_point(p.xyz());
                Point::new(x, y, z, p.intensity)
            })
            .collect(),
    }
}

/// Pinhole intrinsics (no distortion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config(format!(
                "focal lengths must be finite and positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be nonzero".into()));
        }
        Ok(())
    }

    /// Back-projects pixel coordinates at depth `depth` into the camera frame.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth]
    }
}

/// Accepted pinhole projection of a camera-frame point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraProjection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    /// Pixel column after half-up rounding of `u`.
    pub col: usize,
    /// Pixel row after half-up rounding of `v`.
    pub row: usize,
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Projects a camera-frame point. Returns `None` when the point is not in
/// front of `near_clip` or its rounded pixel falls outside the image.
pub fn project_to_camera(point_cam: [f64; 3], intr: &CameraIntrinsics, near_clip: f64) -> Option<CameraProjection> {
    let [x, y, z] = point_cam;
    if !(z > near_clip) {
        return None;
    }
    let u = intr.fx * x / z + intr.cx;
    let v = intr.fy * y / z + intr.cy;
    let (cu, rv) = (round_half_up(u), round_half_up(v));
    if !(cu >= 0.0 && cu < intr.width as f64 && rv >= 0.0 && rv < intr.height as f64) {
        return None;
    }
    Some(CameraProjection {
        u,
        v,
        depth: z,
        col: cu as usize,
        row: rv as usize,
    })
}

/// Grid and range limits of a spherical projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalConfig {
    pub width: usize,
    pub height: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl SphericalConfig {
    pub const DEFAULT_FOV_UP_DEG: f64 = 10.0;
    pub const DEFAULT_FOV_DOWN_DEG: f64 = -30.0;
    pub const DEFAULT_R_MIN: f64 = 1.0;
    pub const DEFAULT_R_MAX: f64 = 80.0;

    /// LiDAR-branch grid, 32 x 1056.
    pub fn lidar() -> Self {
        SphericalConfig {
            width: 1056,
            height: 32,
            fov_up_deg: Self::DEFAULT_FOV_UP_DEG,
            fov_down_deg: Self::DEFAULT_FOV_DOWN_DEG,
            r_min: Self::DEFAULT_R_MIN,
            r_max: Self::DEFAULT_R_MAX,
        }
    }

    /// Camera-branch holistic grid, 352 x 1056, sharing the LiDAR vertical FOV.
    pub fn camera_branch() -> Self {
        SphericalConfig {
            height: 352,
            ..Self::lidar()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("spherical grid size must be nonzero".into()));
        }
        if !(self.fov_up_deg > self.fov_down_deg) || !self.fov_up_deg.is_finite() || !self.fov_down_deg.is_finite() {
            return Err(Error::Config(format!(
                "fov_up ({}) must exceed fov_down ({})",
                self.fov_up_deg, self.fov_down_deg
            )));
        }
        if !(self.r_min >= 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            return Err(Error::Config(format!(
                "range limits must satisfy 0 <= r_min < r_max (got {} .. {})",
                self.r_min, self.r_max
            )));
        }
        Ok(())
    }

    fn fov_rad(&self) -> (f64, f64) {
        (self.fov_down_deg.to_radians(), self.fov_up_deg.to_radians())
    }

    /// Cell and stored range of a point, or `None` when it is culled by the
    /// range or vertical FOV limits. Range limits apply to the stored `f32`.
    pub fn cell_of(&self, p: [f64; 3]) -> Option<(usize, usize, f32)> {
        let [x, y, z] = p;
        let r = (x * x + y * y + z * z).sqrt();
        if !(r > 0.0) {
            return None;
        }
        let stored = r as f32;
        let rs = stored as f64;
        if !(rs >= self.r_min && rs <= self.r_max) {
            return None;
        }
        let (down, up) = self.fov_rad();
        let elevation = (z / r).clamp(-1.0, 1.0).asin();
        if elevation < down || elevation > up {
            return None;
        }
        let w = self.width as f64;
        let h = self.height as f64;
        let u = (0.5 * (1.0 - y.atan2(x) / std::f64::consts::PI) * w).floor();
        let v = ((1.0 - (elevation - down) / (up - down)) * h).floor();
        let u = u.clamp(0.0, w - 1.0) as usize;
        let v = v.clamp(0.0, h - 1.0) as usize;
        Some((u, v, stored))
    }

    /// Unit direction through the center of cell `(u, v)`.
    pub fn cell_ray(&self, u: usize, v: usize) -> [f64; 3] {
        let (down, up) = self.fov_rad();
        let azimuth = std::f64::consts::PI * (1.0 - 2.0 * (u as f64 + 0.5) / self.width as f64);
        let elevation = down + (1.0 - (v as f64 + 0.5) / self.height as f64) * (up - down);
        let (se, ce) = elevation.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        [ce * ca, ce * sa, se]
    }

    /// Half the angular extent of one cell, (azimuth, elevation) radians.
    pub fn half_cell_angles(&self) -> (f64, f64) {
        let (down, up) = self.fov_rad();
        (
            std::f64::consts::PI / self.width as f64,
            0.5 * (up - down) / self.height as f64,
        )
    }
}

/// Spherical panorama with 1 (range) or 4 (range, R, G, B) channels.
/// Invalid cells hold 0 in every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl RangeImage {
    pub fn empty(width: usize, height: usize, channels: usize) -> Self {
        RangeImage {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    fn offset(&self, u: usize, v: usize) -> usize {
        (v * self.width + u) * self.channels
    }

    pub fn range(&self, u: usize, v: usize) -> f32 {
        self.data[self.offset(u, v)]
    }

    pub fn pixel(&self, u: usize, v: usize) -> &[f32] {
        let o = self.offset(u, v);
        &self.data[o..o + self.channels]
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.range(u, v) > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.data.chunks_exact(self.channels).filter(|px| px[0] > 0.0).count()
    }

    /// Range channel only.
    pub fn range_channel(&self) -> RangeImage {
        if self.channels == 1 {
            return self.clone();
        }
        RangeImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.chunks_exact(self.channels).map(|px| px[0]).collect(),
        }
    }

    /// Circularly shifts every row right by `k` columns (a yaw rotation).
    pub fn shift_columns(&self, k: usize) -> RangeImage {
        let mut out = RangeImage::empty(self.width, self.height, self.channels);
        if self.width == 0 {
            return out;
        }
        for v in 0..self.height {
            for u in 0..self.width {
                let dst = out.offset((u + k) % self.width, v);
                let src = self.offset(u, v);
                out.data[dst..dst + self.channels].copy_from_slice(&self.data[src..src + self.channels]);
            }
        }
        out
    }
}

/// Z-buffered write of `(xyz, rgb)` samples into a range image.
/// Ties on range keep the lexicographically smaller color so the output does
/// not depend on input order.
pub(crate) fn splat_spherical<I>(points: I, cfg: &SphericalConfig, with_color: bool) -> RangeImage
where
    I: IntoIterator<Item = ([f64; 3], [f32; 3])>,
{
    let channels = if with_color { 4 } else { 1 };
    let mut img = RangeImage::empty(cfg.width, cfg.height, channels);
    for (xyz, rgb) in points {
        let Some((u, v, r)) = cfg.cell_of(xyz) else {
            continue;
        };
        let o = img.offset(u, v);
        let current = img.data[o];
        let replace = if current == 0.0 || r < current {
            true
        } else if r == current && with_color {
            rgb.as_slice() < &img.data[o + 1..o + 4]
        } else {
            false
        };
        if replace {
            img.data[o] = r;
            if with_color {
                img.data[o + 1..o + 4].copy_from_slice(&rgb);
            }
        }
    }
    img
}

/// Single-channel spherical range image of a cloud.
pub fn spherical_projection(cloud: &PointCloud, cfg: &SphericalConfig) -> RangeImage {
    splat_spherical(cloud.points.iter().map(|p| (p.xyz(), [0.0; 3])), cfg, false)
}

/// Maps every valid cell back to a point on its center ray at the stored
/// range. Intensities are zero.
pub fn unproject_range_image(img: &RangeImage, cfg: &SphericalConfig) -> Result<PointCloud> {
    if img.width != cfg.width || img.height != cfg.height {
        return Err(Error::Shape(format!(
            "range image is {}x{} but config expects {}x{}",
            img.height, img.width, cfg.height, cfg.width
        )));
    }
    let mut points = Vec::with_capacity(img.valid_count());
    for v in 0..img.height {
        for u in 0..img.width {
            let r = img.range(u, v);
            if r > 0.0 {
                let [dx, dy, dz] = cfg.cell_ray(u, v);
                let r = r as f64;
                points.push(Point::new(dx * r, dy * r, dz * r, 0.0));
            }
        }
    }
    Ok(PointCloud { points })
}

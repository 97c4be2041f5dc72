//! Explicit cross-modal interaction between the LiDAR and camera branches.
//!
//! - LiDAR to camera: laser points projected into every camera give sparse
//!   depth targets for pseudo depth maps.
//! - Camera to LiDAR: the same projection samples RGB for every laser point,
//!   yielding a colored cloud and a 4-channel rendered range image.
//! - Camera branch: per-camera depth maps are lifted back to 3D and merged
//!   into one holistic range image in the LiDAR frame.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::geometry::{
    project_to_camera, splat_spherical, CameraIntrinsics, PointCloud, Pose, RangeImage, SphericalConfig,
    DEFAULT_NEAR_CLIP,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    /// `T_ego_cam`.
    pub extrinsic: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Camera>", into = "Vec<Camera>")]
pub struct CameraRig {
    cameras: Vec<Camera>,
}

impl TryFrom<Vec<Camera>> for CameraRig {
    type Error = Error;

    fn try_from(cameras: Vec<Camera>) -> Result<Self> {
        CameraRig::new(cameras)
    }
}

impl From<CameraRig> for Vec<Camera> {
    fn from(rig: CameraRig) -> Self {
        rig.cameras
    }
}

impl CameraRig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::Config("camera rig needs at least one camera".into()));
        }
        let mut seen = HashSet::new();
        for cam in &cameras {
            cam.intrinsics.validate()?;
            if !seen.insert(cam.name.as_str()) {
                return Err(Error::Config(format!("duplicate camera name `{}`", cam.name)));
            }
        }
        Ok(CameraRig { cameras })
    }

    /// Six cameras at 60 degree yaw spacing around the vehicle, 640 x 352,
    /// roughly 70 degree horizontal FOV each so neighbours overlap.
    pub fn surround_default() -> Self {
        const NAMES: [&str; 6] = [
            "CAM_FRONT",
            "CAM_FRONT_LEFT",
            "CAM_BACK_LEFT",
            "CAM_BACK",
            "CAM_BACK_RIGHT",
            "CAM_FRONT_RIGHT",
        ];
        let intrinsics = CameraIntrinsics {
            fx: 457.0,
            fy: 457.0,
            cx: 320.0,
            cy: 176.0,
            width: 640,
            height: 352,
        };
        let cameras = NAMES
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let yaw = (i as f64 * 60.0).to_radians();
                let (s, c) = yaw.sin_cos();
                Camera {
                    name: (*name).to_string(),
                    intrinsics,
                    extrinsic: camera_mount([0.3 * c, 0.3 * s, 1.6], yaw),
                }
            })
            .collect();
        CameraRig::new(cameras).expect("default rig is valid")
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// `T_cam_lidar` for every camera.
    pub fn cam_from_lidar(&self, ego_from_lidar: &Pose) -> Vec<Pose> {
        self.cameras
            .iter()
            .map(|c| c.extrinsic.inverse().compose(ego_from_lidar))
            .collect()
    }
}

/// `T_ego_cam` for a level camera at `position` looking along ego yaw `yaw`.
pub fn camera_mount(position: [f64; 3], yaw: f64) -> Pose {
    let (s, c) = yaw.sin_cos();
    // Columns: camera x (right), y (down), z (forward) in ego coordinates.
    let rows = [[s, 0.0, c], [-c, 0.0, s], [0.0, -1.0, 0.0]];
    Pose::from_rotation_matrix(position, rows).expect("camera mount is a rotation")
}

/// Dense per-camera depth grid; 0 marks "no value".
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn empty(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        (u < self.width && v < self.height).then(|| self.data[v * self.width + u])
    }

    pub fn set(&mut self, u: usize, v: usize, d: f64) {
        self.data[v * self.width + u] = d;
    }

    pub fn is_empty_map(&self) -> bool {
        self.data.iter().all(|&d| d == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthTarget {
    pub u: usize,
    pub v: usize,
    pub d: f64,
}

/// Per-camera sparse depth supervision, each list sorted row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseDepthTargets {
    pub per_camera: Vec<Vec<DepthTarget>>,
}

impl SparseDepthTargets {
    pub fn total(&self) -> usize {
        self.per_camera.iter().map(Vec::len).sum()
    }
}

/// 8-bit RGB image. Channel values read back as `byte / 255`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image { width, height, data }
    }

    pub fn rgb8(&self, u: usize, v: usize) -> [u8; 3] {
        let o = (v * self.width + u) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn rgb(&self, u: usize, v: usize) -> [f32; 3] {
        self.rgb8(u, v).map(|c| c as f32 / 255.0)
    }

    pub fn put(&mut self, u: usize, v: usize, rgb: [u8; 3]) {
        let o = (v * self.width + u) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
    pub rgb: [f32; 3],
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColoredPointCloud {
    pub points: Vec<ColoredPoint>,
}

impl ColoredPointCloud {
    /// Drops the color attachment.
    pub fn strip_colors(&self) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| crate::geometry::Point::new(p.x, p.y, p.z, p.intensity))
                .collect(),
        }
    }

    pub fn visible_count(&self) -> usize {
        self.points.iter().filter(|p| p.visible).count()
    }
}

pub fn render_sparse_depth(cloud: &PointCloud, rig: &CameraRig, ego_from_lidar: &Pose) -> SparseDepthTargets {
    render_sparse_depth_with_clip(cloud, rig, ego_from_lidar, DEFAULT_NEAR_CLIP)
}

/// Projects every laser point into every camera; per pixel the smallest depth
/// survives.
pub fn render_sparse_depth_with_clip(
    cloud: &PointCloud,
    rig: &CameraRig,
    ego_from_lidar: &Pose,
    near_clip: f64,
) -> SparseDepthTargets {
    let transforms = rig.cam_from_lidar(ego_from_lidar);
    let per_camera = rig
        .cameras
        .iter()
        .zip(&transforms)
        .map(|(cam, cam_from_lidar)| {
            let intr = &cam.intrinsics;
            let mut zbuf = vec![0.0f64; intr.width * intr.height];
            for p in &cloud.points {
                if let Some(proj) = project_to_camera(cam_from_lidar.transform_point(p.xyz()), intr, near_clip) {
                    let slot = &mut zbuf[proj.row * intr.width + proj.col];
                    if *slot == 0.0 || proj.depth < *slot {
                        *slot = proj.depth;
                    }
                }
            }
            zbuf.iter()
                .enumerate()
                .filter(|(_, &d)| d > 0.0)
                .map(|(i, &d)| DepthTarget {
                    u: i % intr.width,
                    v: i / intr.width,
                    d,
                })
                .collect()
        })
        .collect();
    SparseDepthTargets { per_camera }
}

/// Writes sparse targets into otherwise empty depth maps.
pub fn rasterize_targets(targets: &SparseDepthTargets, rig: &CameraRig) -> Result<Vec<DepthMap>> {
    if targets.per_camera.len() != rig.len() {
        return Err(Error::Config(format!(
            "{} target lists for a rig of {} cameras",
            targets.per_camera.len(),
            rig.len()
        )));
    }
    targets
        .per_camera
        .iter()
        .zip(rig.cameras())
        .map(|(list, cam)| {
            let mut map = DepthMap::empty(cam.intrinsics.width, cam.intrinsics.height);
            for t in list {
                if t.u >= map.width || t.v >= map.height {
                    return Err(Error::Shape(format!(
                        "target ({}, {}) outside {} image",
                        t.u, t.v, cam.name
                    )));
                }
                map.set(t.u, t.v, t.d);
            }
            Ok(map)
        })
        .collect()
}

/// Attaches RGB to every laser point from the camera that sees it at the
/// smallest depth; points seen by no camera stay black and invisible.
pub fn colorize_cloud(
    cloud: &PointCloud,
    images: &[Image],
    rig: &CameraRig,
    ego_from_lidar: &Pose,
) -> Result<ColoredPointCloud> {
    if images.len() != rig.len() {
        return Err(Error::Config(format!(
            "{} images supplied for a rig of {} cameras",
            images.len(),
            rig.len()
        )));
    }
    for (img, cam) in images.iter().zip(rig.cameras()) {
        if img.width != cam.intrinsics.width || img.height != cam.intrinsics.height {
            return Err(Error::Config(format!(
                "image for {} is {}x{}, intrinsics say {}x{}",
                cam.name, img.width, img.height, cam.intrinsics.width, cam.intrinsics.height
            )));
        }
    }
    let transforms = rig.cam_from_lidar(ego_from_lidar);
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let mut best: Option<(f64, [f32; 3])> = None;
            for ((cam, cam_from_lidar), img) in rig.cameras.iter().zip(&transforms).zip(images) {
                if let Some(proj) = project_to_camera(
                    cam_from_lidar.transform_point(p.xyz()),
                    &cam.intrinsics,
                    DEFAULT_NEAR_CLIP,
                ) {
                    if best.map_or(true, |(d, _)| proj.depth < d) {
                        best = Some((proj.depth, img.rgb(proj.col, proj.row)));
                    }
                }
            }
            ColoredPoint {
                x: p.x,
                y: p.y,
                z: p.z,
                intensity: p.intensity,
                rgb: best.map_or([0.0; 3], |(_, c)| c),
                visible: best.is_some(),
            }
        })
        .collect();
    Ok(ColoredPointCloud { points })
}

/// 4-channel (range, R, G, B) spherical projection of a colored cloud.
pub fn rendered_range_image(colored: &ColoredPointCloud, cfg: &SphericalConfig) -> RangeImage {
    splat_spherical(colored.points.iter().map(|p| ([p.x, p.y, p.z], p.rgb)), cfg, true)
}

/// Lifts every nonzero depth pixel to 3D, moves it into the LiDAR frame and
/// z-buffers the result into one holistic range image.
pub fn depth_maps_to_lidar_range(
    depths: &[DepthMap],
    rig: &CameraRig,
    ego_from_lidar: &Pose,
    cfg: &SphericalConfig,
) -> Result<RangeImage> {
    if depths.len() != rig.len() {
        return Err(Error::Shape(format!(
            "{} depth maps supplied for a rig of {} cameras",
            depths.len(),
            rig.len()
        )));
    }
    for (map, cam) in depths.iter().zip(rig.cameras()) {
        let intr = &cam.intrinsics;
        if map.width != intr.width || map.height != intr.height || map.data.len() != map.width * map.height {
            return Err(Error::Shape(format!(
                "depth map for {} is {}x{}, intrinsics say {}x{}",
                cam.name, map.width, map.height, intr.width, intr.height
            )));
        }
    }
    let lidar_from_ego = ego_from_lidar.inverse();
    let lifted = depths.iter().zip(rig.cameras()).flat_map(|(map, cam)| {
        let lidar_from_cam = lidar_from_ego.compose(&cam.extrinsic);
        let intr = cam.intrinsics;
        map.data
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0.0)
            .map(move |(i, &d)| {
                let (u, v) = ((i % intr.width) as f64, (i / intr.width) as f64);
                (lidar_from_cam.transform_point(intr.unproject(u, v, d)), [0.0f32; 3])
            })
    });
    Ok(splat_spherical(lifted, cfg, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{spherical_projection, Point};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rig() -> CameraRig {
        CameraRig::surround_default()
    }

    fn lidar_mount() -> Pose {
        Pose::from_translation([0.0, 0.0, 1.8])
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let points = (0..n)
            .map(|_| {
                let r = rng.gen_range(2.0..60.0);
                let az = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                let z = rng.gen_range(-1.7..6.0);
                Point::new(r * az.cos(), r * az.sin(), z, rng.gen_range(0.0..1.0))
            })
            .collect();
        PointCloud::new(points).unwrap()
    }

    #[test]
    fn rig_validation() {
        assert!(CameraRig::new(vec![]).is_err());
        let cam = rig().cameras()[0].clone();
        assert!(CameraRig::new(vec![cam.clone(), cam]).is_err());
    }

    #[test]
    fn mount_points_camera_forward() {
        let front = camera_mount([0.0; 3], 0.0);
        // Camera +z is ego +x, camera +y is ego -z.
        let f = front.transform_point([0.0, 0.0, 1.0]);
        assert!((f[0] - 1.0).abs() < 1e-12 && f[1].abs() < 1e-12 && f[2].abs() < 1e-12);
        let d = front.transform_point([0.0, 1.0, 0.0]);
        assert!((d[2] + 1.0).abs() < 1e-12);
        let r = front.transform_point([1.0, 0.0, 0.0]);
        assert!((r[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_cloud_gives_empty_targets() {
        let t = render_sparse_depth(&PointCloud::default(), &rig(), &lidar_mount());
        assert_eq!(t.per_camera.len(), 6);
        assert_eq!(t.total(), 0);
    }

    #[test]
    fn principal_axis_point_hits_principal_point() {
        let rig = rig();
        let cam0 = &rig.cameras()[0];
        // Point 2 m along camera 0's optical axis, expressed in the LiDAR frame.
        let ego = cam0.extrinsic.transform_point([0.0, 0.0, 2.0]);
        let lidar = lidar_mount().inverse().transform_point(ego);
        let cloud = PointCloud::new(vec![Point::new(lidar[0], lidar[1], lidar[2], 0.0)]).unwrap();
        let t = render_sparse_depth(&cloud, &rig, &lidar_mount());
        assert_eq!(t.per_camera[0].len(), 1);
        let hit = t.per_camera[0][0];
        assert_eq!((hit.u, hit.v), (320, 176));
        assert!((hit.d - 2.0).abs() < 1e-12);
    }

    /// Independent loop: per point, per camera, chain the transforms by hand
    /// through matrices rather than poses.
    fn brute_force_targets(
        cloud: &PointCloud,
        rig: &CameraRig,
        ego_from_lidar: &Pose,
    ) -> Vec<Vec<(usize, usize, f64)>> {
        rig.cameras()
            .iter()
            .map(|cam| {
                let m_ego_cam = nalgebra::Isometry3::from_parts(
                    nalgebra::Translation3::from(nalgebra::Vector3::from(cam.extrinsic.translation())),
                    quat(&cam.extrinsic),
                );
                let m_ego_lidar = nalgebra::Isometry3::from_parts(
                    nalgebra::Translation3::from(nalgebra::Vector3::from(ego_from_lidar.translation())),
                    quat(ego_from_lidar),
                );
                let m = m_ego_cam.inverse().to_homogeneous() * m_ego_lidar.to_homogeneous();
                let mut best: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
                for p in &cloud.points {
                    let h = m * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
                    let i = &cam.intrinsics;
                    if h.z <= DEFAULT_NEAR_CLIP {
                        continue;
                    }
                    let u = (i.fx * h.x / h.z + i.cx + 0.5).floor();
                    let v = (i.fy * h.y / h.z + i.cy + 0.5).floor();
                    if u < 0.0 || v < 0.0 || u >= i.width as f64 || v >= i.height as f64 {
                        continue;
                    }
                    let e = best.entry((v as usize, u as usize)).or_insert(f64::INFINITY);
                    *e = e.min(h.z);
                }
                best.into_iter().map(|((v, u), d)| (u, v, d)).collect()
            })
            .collect()
    }

    fn quat(p: &Pose) -> nalgebra::UnitQuaternion<f64> {
        let [w, x, y, z] = p.rotation_wxyz();
        nalgebra::UnitQuaternion::new_normalize(nalgebra::Quaternion::new(w, x, y, z))
    }

    #[test]
    fn sparse_depth_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rig = rig();
        for _ in 0..10 {
            let cloud = random_cloud(&mut rng, 100);
            let got = render_sparse_depth(&cloud, &rig, &lidar_mount());
            let want = brute_force_targets(&cloud, &rig, &lidar_mount());
            for (g, w) in got.per_camera.iter().zip(&want) {
                assert_eq!(g.len(), w.len());
                for (a, b) in g.iter().zip(w) {
                    assert_eq!((a.u, a.v), (b.0, b.1));
                    assert!((a.d - b.2).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn colorize_single_camera_and_invisible() {
        let rig = rig();
        let mut images: Vec<Image> = rig
            .cameras()
            .iter()
            .map(|c| Image::filled(c.intrinsics.width, c.intrinsics.height, [10, 10, 10]))
            .collect();
        images[2] = Image::filled(640, 352, [255, 0, 0]);
        // Straight along camera 2's axis (yaw 120 degrees), 10 m away.
        let yaw = 120f64.to_radians();
        let ego = [
            0.3 * yaw.cos() + 10.0 * yaw.cos(),
            0.3 * yaw.sin() + 10.0 * yaw.sin(),
            1.6,
        ];
        let lidar = lidar_mount().inverse().transform_point(ego);
        let cloud = PointCloud::new(vec![
            Point::new(lidar[0], lidar[1], lidar[2], 0.3),
            // Straight up: no camera sees it.
            Point::new(0.0, 0.0, 30.0, 0.1),
        ])
        .unwrap();
        let colored = colorize_cloud(&cloud, &images, &rig, &lidar_mount()).unwrap();
        assert_eq!(colored.points[0].rgb, [1.0, 0.0, 0.0]);
        assert!(colored.points[0].visible);
        assert_eq!(colored.points[1].rgb, [0.0, 0.0, 0.0]);
        assert!(!colored.points[1].visible);
        assert_eq!(colored.strip_colors(), cloud);

        assert!(matches!(
            colorize_cloud(&cloud, &images[..5], &rig, &lidar_mount()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rendered_range_examples() {
        let cfg = SphericalConfig::lidar();
        let red = ColoredPointCloud {
            points: vec![ColoredPoint {
                x: 10.0,
                y: 0.0,
                z: 0.0,
                intensity: 0.0,
                rgb: [1.0, 0.0, 0.0],
                visible: true,
            }],
        };
        let img = rendered_range_image(&red, &cfg);
        assert_eq!(img.channels, 4);
        assert_eq!(img.pixel(528, 8), &[10.0, 1.0, 0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = random_cloud(&mut rng, 300);
        let invisible = ColoredPointCloud {
            points: cloud
                .points
                .iter()
                .map(|p| ColoredPoint {
                    x: p.x,
                    y: p.y,
                    z: p.z,
                    intensity: p.intensity,
                    rgb: [0.0; 3],
                    visible: false,
                })
                .collect(),
        };
        let img = rendered_range_image(&invisible, &cfg);
        assert!(img.data.chunks_exact(4).all(|px| px[1..] == [0.0, 0.0, 0.0]));
        assert_eq!(img.range_channel(), spherical_projection(&cloud, &cfg));
    }

    #[test]
    fn holistic_range_examples() {
        let rig = rig();
        let cfg = SphericalConfig::camera_branch();
        let empty: Vec<DepthMap> = rig
            .cameras()
            .iter()
            .map(|c| DepthMap::empty(c.intrinsics.width, c.intrinsics.height))
            .collect();
        assert_eq!(
            depth_maps_to_lidar_range(&empty, &rig, &lidar_mount(), &cfg)
                .unwrap()
                .valid_count(),
            0
        );

        let mut one = empty.clone();
        one[0].set(320, 176, 4.0);
        let img = depth_maps_to_lidar_range(&one, &rig, &lidar_mount(), &cfg).unwrap();
        assert_eq!(img.valid_count(), 1);
        // Hand chain: camera 0 sits at ego (0.3, 0, 1.6) looking along +x; the
        // point is ego (4.3, 0, 1.6), LiDAR (4.3, 0, -0.2).
        let expected = (4.3f64 * 4.3 + 0.2 * 0.2).sqrt();
        let (u, v, _) = cfg.cell_of([4.3, 0.0, -0.2]).unwrap();
        assert!((img.range(u, v) as f64 - expected).abs() < 1e-6);

        let mut bad = empty.clone();
        bad[1] = DepthMap::empty(10, 10);
        assert!(matches!(
            depth_maps_to_lidar_range(&bad, &rig, &lidar_mount(), &cfg),
            Err(Error::Shape(_))
        ));
        assert!(depth_maps_to_lidar_range(&empty[..2], &rig, &lidar_mount(), &cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn outputs_are_permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rig = rig();
            let cloud = random_cloud(&mut rng, 150);
            let mut shuffled = cloud.clone();
            use rand::seq::SliceRandom;
            shuffled.points.shuffle(&mut rng);
            let a = render_sparse_depth(&cloud, &rig, &lidar_mount());
            let b = render_sparse_depth(&shuffled, &rig, &lidar_mount());
            prop_assert_eq!(&a, &b);
            for list in &a.per_camera {
                for t in list {
                    prop_assert!(t.d > DEFAULT_NEAR_CLIP && t.u < 640 && t.v < 352);
                }
            }
            let images: Vec<Image> = (0..rig.len()).map(|i| {
                let mut img = Image::filled(640, 352, [0, 0, 0]);
                for v in 0..352 { for u in 0..640 { img.put(u, v, [(u % 256) as u8, (v % 256) as u8, (i * 40) as u8]); } }
                img
            }).collect();
            let ca = colorize_cloud(&cloud, &images, &rig, &lidar_mount()).unwrap();
            let cb = colorize_cloud(&shuffled, &images, &rig, &lidar_mount()).unwrap();
            let cfg = SphericalConfig::lidar();
            prop_assert_eq!(rendered_range_image(&ca, &cfg), rendered_range_image(&cb, &cfg));
            prop_assert_eq!(ca.strip_colors(), cloud);
        }
    }
}

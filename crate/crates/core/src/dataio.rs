//! Dataset files, split files and the synthetic world generator.
//!
//! A dataset is a directory holding `manifest.json`, one binary cloud per
//! sample under `lidar/` and one PPM image per camera and sample under
//! `images/`. Cloud files are `FPR1`, a little-endian u32 point count and
//! `count x (x, y, z, intensity)` as f32.

use std::collections::{HashMap, HashSet};
use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::benchmark::{BenchmarkSplit, PlanarIndex, Sample, Scene, Scheme, TestQuery, TrainingTuple};
use crate::descriptor::{extract_baseline, ByteReader, DescriptorConfig, DescriptorSet};
use crate::exec::Execution;
use crate::geometry::{
    project_to_camera, spherical_projection, Point, PointCloud, Pose, RangeImage, SphericalConfig, DEFAULT_NEAR_CLIP,
};
use crate::interaction::{colorize_cloud, rendered_range_image, CameraRig, DepthMap, Image};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const CLOUD_MAGIC: &[u8; 4] = b"FPR1";
pub const MANIFEST_FILE: &str = "manifest.json";

fn origin(path: &Path) -> String {
    path.display().to_string()
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn cloud_to_bytes(cloud: &PointCloud) -> Result<Vec<u8>> {
    let count = u32::try_from(cloud.len()).map_err(|_| Error::Argument("cloud too large for FPR1".into()))?;
    let mut out = Vec::with_capacity(8 + 16 * cloud.len());
    out.extend_from_slice(CLOUD_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn cloud_from_bytes(bytes: &[u8], source: &str) -> Result<PointCloud> {
    let mut r = ByteReader {
        bytes,
        pos: 0,
        origin: source,
    };
    if r.take(4, "magic")? != CLOUD_MAGIC {
        return Err(Error::format(source, 0, "bad magic, expected \"FPR1\""));
    }
    let count = r.u32("point count")? as usize;
    let expected = 8 + 16 * count;
    if bytes.len() != expected {
        let what = if bytes.len() < expected {
            "truncated"
        } else {
            "trailing data"
        };
        return Err(Error::format(
            source,
            bytes.len().min(expected) as u64,
            format!("{what}: {count} points need {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let mut points = Vec::with_capacity(count);
    for (i, rec) in bytes[8..].chunks_exact(16).enumerate() {
        let v: Vec<f64> = rec
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if let Some(k) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::format(
                source,
                (8 + 16 * i + 4 * k) as u64,
                format!("point {i} is not finite"),
            ));
        }
        points.push(Point::new(v[0], v[1], v[2], v[3]));
    }
    Ok(PointCloud { points })
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_file(path, &cloud_to_bytes(cloud)?)
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    cloud_from_bytes(&read_file(path)?, &origin(path))
}

pub fn image_to_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn image_from_ppm(bytes: &[u8], source: &str) -> Result<Image> {
    let mut pos = 0;
    let mut token = |what: &str| -> Result<(usize, String)> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(
                source,
                start as u64,
                format!("truncated header: missing {what}"),
            ));
        }
        Ok((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()))
    };
    let (_, magic) = token("magic")?;
    if magic != "P6" {
        return Err(Error::format(source, 0, "bad magic, expected binary PPM \"P6\""));
    }
    let mut number = |what: &str| -> Result<usize> {
        let (at, t) = token(what)?;
        t.parse::<usize>()
            .map_err(|_| Error::format(source, at as u64, format!("{what} is not a number: {t:?}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(
            source,
            0,
            format!("only 8-bit PPM is supported (maxval {maxval})"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(source, 0, "image has zero size"));
    }
    let header_end = pos + 1;
    let need = width * height * 3;
    if bytes.len() < header_end || bytes.len() - header_end != need {
        return Err(Error::format(
            source,
            header_end.min(bytes.len()) as u64,
            format!(
                "{width}x{height} image needs {need} pixel bytes, file has {}",
                bytes.len().saturating_sub(header_end)
            ),
        ));
    }
    Ok(Image {
        width,
        height,
        data: bytes[header_end..].to_vec(),
    })
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    write_file(path, &image_to_ppm(img))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    image_from_ppm(&read_file(path)?, &origin(path))
}

/// LiDAR mounting and projection grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarSpec {
    /// `T_ego_lidar`.
    pub extrinsic: Pose,
    pub spherical: SphericalConfig,
    /// Grid of the camera-branch holistic range image.
    pub camera_spherical: SphericalConfig,
}

impl Default for LidarSpec {
    fn default() -> Self {
        LidarSpec {
            extrinsic: Pose::from_translation([0.0, 0.0, 1.8]),
            spherical: SphericalConfig::lidar(),
            camera_spherical: SphericalConfig::camera_branch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub rig: CameraRig,
    pub lidar: LidarSpec,
    pub scenes: Vec<Scene>,
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)) as u64
}

/// Typed JSON parse whose errors name the failing field path.
fn parse_json<T: DeserializeOwned>(text: &str, source: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            Error::format(
                source,
                byte_offset(text, inner.line(), inner.column()),
                inner.to_string(),
            )
        } else {
            Error::schema(source, field, inner.to_string())
        }
    })
}

fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

impl DatasetManifest {
    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let probe: serde_json::Value = parse_json(text, source)?;
        let version = probe
            .get("format_version")
            .ok_or_else(|| Error::schema(source, "format_version", "missing"))?;
        let version = version.as_u64().and_then(|v| u32::try_from(v).ok()).ok_or_else(|| {
            Error::schema(
                source,
                "format_version",
                format!("expected an unsigned integer, got {version}"),
            )
        })?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                path: source.to_string(),
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let manifest: DatasetManifest = parse_json(text, source)?;
        manifest.validate(source)?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        to_json_bytes(self)
    }

    /// Structural checks that need no file access.
    pub fn validate(&self, source: &str) -> Result<()> {
        let cfg_err = |field: &str, e: Error| Error::schema(source, field, e.to_string());
        self.lidar
            .spherical
            .validate()
            .map_err(|e| cfg_err("lidar.spherical", e))?;
        self.lidar
            .camera_spherical
            .validate()
            .map_err(|e| cfg_err("lidar.camera_spherical", e))?;
        let mut scene_ids = HashSet::new();
        let mut sample_ids = HashSet::new();
        for (i, scene) in self.scenes.iter().enumerate() {
            if !scene_ids.insert(scene.id.as_str()) {
                return Err(Error::schema(
                    source,
                    format!("scenes[{i}].id"),
                    format!("duplicate scene id {}", scene.id),
                ));
            }
            for (j, s) in scene.samples.iter().enumerate() {
                let field = |name: &str| format!("scenes[{i}].samples[{j}].{name}");
                if !sample_ids.insert(s.id.as_str()) {
                    return Err(Error::schema(
                        source,
                        field("id"),
                        format!("duplicate sample id {}", s.id),
                    ));
                }
                if j > 0 && s.timestamp <= scene.samples[j - 1].timestamp {
                    return Err(Error::schema(
                        source,
                        field("timestamp"),
                        "timestamps must increase strictly within a scene",
                    ));
                }
                if s.images.len() != self.rig.len() {
                    return Err(Error::schema(
                        source,
                        field("images"),
                        format!(
                            "{} images listed for a rig of {} cameras",
                            s.images.len(),
                            self.rig.len()
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One sample with its files loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub id: String,
    pub pose: Pose,
    pub ego_from_lidar: Pose,
    pub cloud: PointCloud,
    pub images: Vec<Image>,
}

/// A validated dataset on disk. Sample files are read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
    index: HashMap<String, (usize, usize)>,
}

/// Opens a dataset directory (or its manifest file) and checks that every
/// referenced file exists.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (root, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (
            path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            path.to_path_buf(),
        )
    };
    let text = String::from_utf8(read_file(&manifest_path)?).map_err(|e| {
        Error::format(
            origin(&manifest_path),
            e.utf8_error().valid_up_to() as u64,
            "manifest is not UTF-8",
        )
    })?;
    let source = origin(&manifest_path);
    let manifest = DatasetManifest::from_json(&text, &source)?;
    for (i, scene) in manifest.scenes.iter().enumerate() {
        for (j, s) in scene.samples.iter().enumerate() {
            let files = std::iter::once(("lidar".to_string(), &s.lidar))
                .chain(s.images.iter().enumerate().map(|(k, p)| (format!("images[{k}]"), p)));
            for (name, rel) in files {
                if !root.join(rel).is_file() {
                    return Err(Error::schema(
                        &source,
                        format!("scenes[{i}].samples[{j}].{name}"),
                        format!("referenced file {rel} does not exist"),
                    ));
                }
            }
        }
    }
    Ok(Dataset::new(root, manifest))
}

impl Dataset {
    fn new(root: PathBuf, manifest: DatasetManifest) -> Self {
        let index = manifest
            .scenes
            .iter()
            .enumerate()
            .flat_map(|(i, sc)| sc.samples.iter().enumerate().map(move |(j, s)| (s.id.clone(), (i, j))))
            .collect();
        Dataset { root, manifest, index }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.manifest.scenes
    }

    pub fn rig(&self) -> &CameraRig {
        &self.manifest.rig
    }

    pub fn ego_from_lidar(&self) -> &Pose {
        &self.manifest.lidar.extrinsic
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = &str> {
        self.manifest
            .scenes
            .iter()
            .flat_map(|s| s.samples.iter().map(|x| x.id.as_str()))
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn sample(&self, id: &str) -> Result<&Sample> {
        let &(i, j) = self.index.get(id).ok_or_else(|| Error::Lookup(id.to_string()))?;
        Ok(&self.manifest.scenes[i].samples[j])
    }

    pub fn load_cloud(&self, id: &str) -> Result<PointCloud> {
        read_cloud(&self.root.join(&self.sample(id)?.lidar))
    }

    pub fn load_images(&self, id: &str) -> Result<Vec<Image>> {
        self.sample(id)?
            .images
            .iter()
            .map(|p| read_ppm(&self.root.join(p)))
            .collect()
    }

    pub fn load_sample(&self, id: &str) -> Result<LoadedSample> {
        let s = self.sample(id)?;
        Ok(LoadedSample {
            id: s.id.clone(),
            pose: s.pose,
            ego_from_lidar: *self.ego_from_lidar(),
            cloud: self.load_cloud(id)?,
            images: self.load_images(id)?,
        })
    }

    /// LiDAR range image of one sample; 4-channel rendered when `color`.
    pub fn range_image(&self, id: &str, color: bool) -> Result<RangeImage> {
        let cloud = self.load_cloud(id)?;
        let cfg = &self.manifest.lidar.spherical;
        if color {
            let colored = colorize_cloud(&cloud, &self.load_images(id)?, self.rig(), self.ego_from_lidar())?;
            Ok(rendered_range_image(&colored, cfg))
        } else {
            Ok(spherical_projection(&cloud, cfg))
        }
    }

    /// Baseline descriptors of every sample, in manifest order. Images are
    /// only read when the color variant is requested.
    pub fn describe(&self, cfg: &DescriptorConfig, exec: Execution) -> Result<DescriptorSet> {
        cfg.validate()?;
        if cfg.rows != self.manifest.lidar.spherical.height {
            return Err(Error::Config(format!(
                "descriptor uses {} rows but the LiDAR grid has {}",
                cfg.rows, self.manifest.lidar.spherical.height
            )));
        }
        let ids: Vec<&str> = self.sample_ids().collect();
        let descs = exec.try_map(&ids, |id| extract_baseline(&self.range_image(id, cfg.use_color)?, cfg))?;
        let mut set = DescriptorSet::new(cfg.dim);
        for (id, d) in ids.into_iter().zip(descs) {
            set.insert(id, d)?;
        }
        Ok(set)
    }
}

/// Training tuples file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSplitFile {
    pub scheme: Scheme,
    pub params: serde_json::Value,
    pub tuples: Vec<TrainingTuple>,
}

/// Test set file: database ids, queries with ground truth, and the ids held
/// out for validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSplitFile {
    pub params: serde_json::Value,
    pub database: Vec<String>,
    pub queries: Vec<TestQuery>,
    pub validation: Vec<String>,
}

impl TestSplitFile {
    /// Queries, optionally without the validation share.
    pub fn evaluation_queries(&self, include_validation: bool) -> Vec<TestQuery> {
        if include_validation {
            return self.queries.clone();
        }
        let val: HashSet<&str> = self.validation.iter().map(String::as_str).collect();
        self.queries
            .iter()
            .filter(|q| !val.contains(q.query.as_str()))
            .cloned()
            .collect()
    }
}

/// Split files for `split`; `params` is echoed into both.
pub fn split_files<P: Serialize>(split: &BenchmarkSplit, params: &P) -> Result<(TrainSplitFile, TestSplitFile)> {
    let mut params = serde_json::to_value(params).map_err(|e| Error::Internal(e.to_string()))?;
    if let serde_json::Value::Object(map) = &mut params {
        map.insert("scheme".into(), serde_json::to_value(split.scheme).unwrap());
    }
    let train = TrainSplitFile {
        scheme: split.scheme,
        params: params.clone(),
        tuples: split.train.clone(),
    };
    let test = TestSplitFile {
        params,
        database: split.database.clone(),
        queries: split.test.clone(),
        validation: split.validation.clone(),
    };
    Ok((train, test))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &to_json_bytes(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::format(origin(path), e.valid_up_to() as u64, "file is not UTF-8"))?;
    parse_json(text, &origin(path))
}

pub fn read_train_split(path: &Path) -> Result<TrainSplitFile> {
    read_json(path)
}

pub fn read_test_split(path: &Path) -> Result<TestSplitFile> {
    read_json(path)
}

/// Grayscale rendering of the range channel: near is bright, invalid black.
pub fn range_image_to_image(img: &RangeImage, max_range: f64) -> Image {
    let mut out = Image::filled(img.width, img.height, [0, 0, 0]);
    for v in 0..img.height {
        for u in 0..img.width {
            let r = img.range(u, v) as f64;
            if r > 0.0 {
                let g = (255.0 * (1.0 - (r / max_range).clamp(0.0, 1.0)) * 0.8 + 51.0).round() as u8;
                out.put(u, v, [g, g, g]);
            }
        }
    }
    out
}

/// Color channels of a 4-channel rendered range image.
pub fn rendered_to_image(img: &RangeImage) -> Result<Image> {
    if img.channels < 4 {
        return Err(Error::Shape("rendered range image needs 4 channels".into()));
    }
    let mut out = Image::filled(img.width, img.height, [0, 0, 0]);
    for v in 0..img.height {
        for u in 0..img.width {
            let px = img.pixel(u, v);
            if px[0] > 0.0 {
                out.put(
                    u,
                    v,
                    [px[1], px[2], px[3]].map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8),
                );
            }
        }
    }
    Ok(out)
}

/// Depth map drawn over its camera image, colored red (near) to blue (far).
pub fn depth_overlay(base: &Image, depth: &DepthMap, max_depth: f64) -> Image {
    let mut out = base.clone();
    for v in 0..depth.height.min(base.height) {
        for u in 0..depth.width.min(base.width) {
            let d = depth.data[v * depth.width + u];
            if d > 0.0 {
                let t = (d / max_depth).clamp(0.0, 1.0);
                out.put(u, v, [(255.0 * (1.0 - t)).round() as u8, 64, (255.0 * t).round() as u8]);
            }
        }
    }
    out
}

pub const DEFAULT_PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [0, 128, 128],
    [170, 110, 40],
    [128, 0, 0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub num_scenes: usize,
    pub samples_per_scene: usize,
    pub sample_period_s: f64,
    pub speed_mps: f64,
    pub landmark_count: usize,
    pub palette: Vec<[u8; 3]>,
    /// Mean radius of the closed loop the trajectories follow.
    pub loop_radius_m: f64,
    /// Peak lateral deviation of a trajectory from the loop center line.
    pub lateral_noise_m: f64,
    /// Fraction of each scene that re-traverses the previous scene's path.
    pub revisit_rate: f64,
    /// Date of the first scene. Odd-numbered scenes are dated at least
    /// `date_gap_days` later, so a threshold of that many days after the
    /// first scene separates even (old) from odd (new) scenes.
    pub first_date: NaiveDate,
    pub date_gap_days: i64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            num_scenes: 8,
            samples_per_scene: 80,
            sample_period_s: 0.5,
            speed_mps: 3.0,
            landmark_count: 2400,
            palette: DEFAULT_PALETTE.to_vec(),
            loop_radius_m: 200.0,
            lateral_noise_m: 0.6,
            revisit_rate: 0.5,
            first_date: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            date_gap_days: 105,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.revisit_rate) {
            return Err(Error::Argument(format!(
                "revisit rate must lie in [0, 1] (got {})",
                self.revisit_rate
            )));
        }
        if !(self.sample_period_s > 0.0 && self.speed_mps > 0.0 && self.loop_radius_m > 0.0) {
            return Err(Error::Argument(
                "sample period, speed and loop radius must be positive".into(),
            ));
        }
        if !(0.0..2.0).contains(&self.lateral_noise_m) {
            return Err(Error::Argument("lateral noise must lie in [0, 2) m".into()));
        }
        if self.palette.is_empty() {
            return Err(Error::Argument("palette must not be empty".into()));
        }
        if self.date_gap_days < 0 {
            return Err(Error::Argument("date gap must be >= 0 days".into()));
        }
        Ok(())
    }

    fn step_m(&self) -> f64 {
        self.speed_mps * self.sample_period_s
    }

    /// Samples shared with the previous scene's path.
    pub fn overlap_samples(&self) -> usize {
        ((self.revisit_rate * self.samples_per_scene as f64) - 1e-9)
            .ceil()
            .max(0.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub position: [f64; 2],
    pub height: f64,
    pub color: [u8; 3],
    pub intensity: f64,
}

/// Arc-length parametrized closed curve `r(t) = R (1 + 0.1 sin 3t + 0.05 cos 5t)`.
#[derive(Debug, Clone)]
struct LoopPath {
    radius: f64,
    theta: Vec<f64>,
    arc: Vec<f64>,
}

impl LoopPath {
    fn new(radius: f64) -> Self {
        let n = 8192;
        let theta: Vec<f64> = (0..=n).map(|i| TAU * i as f64 / n as f64).collect();
        let mut arc = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        let mut prev = Self::at(radius, 0.0);
        for &t in &theta {
            let p = Self::at(radius, t);
            acc += ((p[0] - prev[0]).powi(2) + (p[1] - prev[1]).powi(2)).sqrt();
            arc.push(acc);
            prev = p;
        }
        LoopPath { radius, theta, arc }
    }

    fn at(radius: f64, t: f64) -> [f64; 2] {
        let r = radius * (1.0 + 0.1 * (3.0 * t).sin() + 0.05 * (5.0 * t).cos());
        [r * t.cos(), r * t.sin()]
    }

    fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    fn theta_at(&self, s: f64) -> f64 {
        let s = s.rem_euclid(self.length());
        let i = self.arc.partition_point(|&a| a < s).clamp(1, self.arc.len() - 1);
        let (a0, a1) = (self.arc[i - 1], self.arc[i]);
        let f = if a1 > a0 { (s - a0) / (a1 - a0) } else { 0.0 };
        self.theta[i - 1] + f * (self.theta[i] - self.theta[i - 1])
    }

    /// Position `lateral` meters left of the center line at arc `s`, and the
    /// heading of the center line.
    fn frame(&self, s: f64, lateral: f64) -> ([f64; 2], f64) {
        let t = self.theta_at(s);
        let c = Self::at(self.radius, t);
        let a = Self::at(self.radius, t - 1e-6);
        let b = Self::at(self.radius, t + 1e-6);
        let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
        let (sh, ch) = heading.sin_cos();
        ([c[0] - sh * lateral, c[1] + ch * lateral], heading)
    }
}

/// Procedural world: colored poles scattered along a loop road, and scenes
/// driving along it. Scans and images are computed on demand.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub params: SynthParams,
    pub landmarks: Vec<Landmark>,
    pub rig: CameraRig,
    pub lidar: LidarSpec,
    pub scenes: Vec<Scene>,
    index: PlanarIndex,
}

pub fn sample_id(scene: usize, j: usize) -> String {
    format!("s{scene:03}_{j:04}")
}

impl SyntheticWorld {
    pub fn new(p: &SynthParams) -> Result<Self> {
        p.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let path = LoopPath::new(p.loop_radius_m);
        let landmarks: Vec<Landmark> = (0..p.landmark_count)
            .map(|_| {
                let s = rng.gen_range(0.0..path.length());
                let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let d = rng.gen_range(3.0..50.0);
                let (position, _) = path.frame(s, side * d);
                Landmark {
                    position,
                    height: rng.gen_range(2.0..10.0),
                    color: p.palette[rng.gen_range(0..p.palette.len())],
                    intensity: rng.gen_range(0.1..1.0),
                }
            })
            .collect();
        let positions: Vec<[f64; 2]> = landmarks.iter().map(|l| l.position).collect();
        let index = PlanarIndex::new(&positions);
        let rig = CameraRig::surround_default();
        let lidar = LidarSpec::default();

        let m = p.samples_per_scene;
        let stride = m - p.overlap_samples().min(m);
        let step = p.step_m();
        let period_us = (p.sample_period_s * 1e6).round() as i64;
        let mut scenes = Vec::with_capacity(p.num_scenes);
        for i in 0..p.num_scenes {
            let phase = rng.gen_range(0.0..step);
            let amp = rng.gen_range(0.0..=p.lateral_noise_m);
            let wavelength = rng.gen_range(60.0..140.0);
            let wave_phase = rng.gen_range(0.0..TAU);
            let days = i as i64 + if i % 2 == 1 { p.date_gap_days } else { 0 };
            let date = p.first_date + Duration::days(days);
            let start_us = date.and_hms_opt(10, 0, 0).unwrap().and_utc().timestamp_micros();
            let samples = (0..m)
                .map(|j| {
                    let s = ((i * stride + j) as f64) * step + phase;
                    let jitter = rng.gen_range(-0.05..0.05);
                    let lateral = amp * (TAU * s / wavelength + wave_phase).sin() + jitter;
                    let (xy, heading) = path.frame(s, lateral);
                    let yaw = heading + rng.gen_range(-0.5f64..0.5).to_radians();
                    let id = sample_id(i, j);
                    Sample {
                        lidar: format!("lidar/{id}.fpr1"),
                        images: rig
                            .cameras()
                            .iter()
                            .map(|c| format!("images/{id}/{}.ppm", c.name))
                            .collect(),
                        id,
                        timestamp: start_us + j as i64 * period_us,
                        pose: Pose::from_yaw([xy[0], xy[1], 0.0], ((yaw + PI).rem_euclid(TAU)) - PI),
                        landmark_count: None,
                    }
                })
                .collect();
            scenes.push(Scene {
                id: format!("scene_{i:03}"),
                date,
                samples,
            });
        }
        let mut world = SyntheticWorld {
            params: p.clone(),
            landmarks,
            rig,
            lidar,
            scenes,
            index,
        };
        for si in 0..world.scenes.len() {
            for j in 0..world.scenes[si].samples.len() {
                let pose = world.scenes[si].samples[j].pose;
                let (_, labels) = world.scan(&pose);
                let distinct: HashSet<usize> = labels.into_iter().collect();
                world.scenes[si].samples[j].landmark_count = Some(distinct.len());
            }
        }
        world.verify_revisits()?;
        Ok(world)
    }

    /// Date separating even (old) from odd (new) scenes.
    pub fn gamma(&self) -> NaiveDate {
        self.params.first_date + Duration::days(self.params.date_gap_days)
    }

    /// Brute-force check that some new-scene sample lies within 9 m of an
    /// old-scene sample whenever revisits were requested.
    fn verify_revisits(&self) -> Result<()> {
        let gamma = self.gamma();
        let old: Vec<[f64; 2]> = self
            .scenes
            .iter()
            .filter(|s| s.date < gamma)
            .flat_map(|s| s.samples.iter().map(Sample::position))
            .collect();
        let new: Vec<[f64; 2]> = self
            .scenes
            .iter()
            .filter(|s| s.date >= gamma)
            .flat_map(|s| s.samples.iter().map(Sample::position))
            .collect();
        let with_gt = new
            .iter()
            .filter(|q| {
                old.iter()
                    .any(|o| (o[0] - q[0]).powi(2) + (o[1] - q[1]).powi(2) <= 81.0)
            })
            .count();
        log::info!(
            "synthetic world: {with_gt} of {} new samples revisit old places",
            new.len()
        );
        if self.params.revisit_rate > 0.0 && !old.is_empty() && !new.is_empty() && with_gt == 0 {
            return Err(Error::Internal(
                "generated world has no revisits despite revisit_rate > 0".into(),
            ));
        }
        Ok(())
    }

    /// Beam-quantized scan from ego pose `pose`: one point per beam row on
    /// every pole within range, plus the landmark index of each point.
    pub fn scan(&self, pose: &Pose) -> (PointCloud, Vec<usize>) {
        let cfg = &self.lidar.spherical;
        let world_from_lidar = pose.compose(&self.lidar.extrinsic);
        let lidar_from_world = world_from_lidar.inverse();
        let [cx, cy, _] = world_from_lidar.translation();
        let (down, up) = (cfg.fov_down_deg.to_radians(), cfg.fov_up_deg.to_radians());
        let tans: Vec<f64> = (0..cfg.height)
            .map(|v| (down + (1.0 - (v as f64 + 0.5) / cfg.height as f64) * (up - down)).tan())
            .collect();
        let mut near = self.index.within([cx, cy], cfg.r_max);
        near.sort_by(|a, b| a.1.cmp(&b.1));
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (_, li) in near {
            let lm = &self.landmarks[li];
            let base = lidar_from_world.transform_point([lm.position[0], lm.position[1], 0.0]);
            let top = lidar_from_world.transform_point([lm.position[0], lm.position[1], lm.height]);
            let d = base[0].hypot(base[1]);
            for (v, &t) in tans.iter().enumerate() {
                let z = d * t;
                if z < base[2] || z > top[2] {
                    continue;
                }
                let xyz = [base[0] as f32 as f64, base[1] as f32 as f64, z as f32 as f64];
                if cfg.cell_of(xyz).is_some_and(|(_, row, _)| row == v) {
                    points.push(Point::new(xyz[0], xyz[1], xyz[2], lm.intensity as f32 as f64));
                    labels.push(li);
                }
            }
        }
        (PointCloud { points }, labels)
    }

    /// Camera images with a 3x3 splat in the landmark's palette color at every
    /// projected scan point, painted far to near over a dark backdrop. Splat
    /// centers are repainted last so each point's own pixel keeps its color
    /// unless a nearer point lands on the same pixel.
    pub fn render_images(&self, cloud: &PointCloud, labels: &[usize]) -> Vec<Image> {
        let transforms = self.rig.cam_from_lidar(&self.lidar.extrinsic);
        self.rig
            .cameras()
            .iter()
            .zip(&transforms)
            .map(|(cam, cam_from_lidar)| {
                let intr = &cam.intrinsics;
                let mut img = backdrop(intr.width, intr.height, intr.cy);
                let mut splats: Vec<(f64, usize, usize, [u8; 3])> = cloud
                    .points
                    .iter()
                    .zip(labels)
                    .filter_map(|(p, &li)| {
                        project_to_camera(cam_from_lidar.transform_point(p.xyz()), intr, DEFAULT_NEAR_CLIP)
                            .map(|pr| (pr.depth, pr.col, pr.row, self.landmarks[li].color))
                    })
                    .collect();
                splats.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
                for &(_, col, row, color) in &splats {
                    for dv in -1i64..=1 {
                        for du in -1i64..=1 {
                            let (u, v) = (col as i64 + du, row as i64 + dv);
                            if u >= 0 && v >= 0 && (u as usize) < intr.width && (v as usize) < intr.height {
                                img.put(u as usize, v as usize, color);
                            }
                        }
                    }
                }
                for &(_, col, row, color) in &splats {
                    img.put(col, row, color);
                }
                img
            })
            .collect()
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            format_version: FORMAT_VERSION,
            rig: self.rig.clone(),
            lidar: self.lidar.clone(),
            scenes: self.scenes.clone(),
        }
    }
}

fn backdrop(width: usize, height: usize, horizon: f64) -> Image {
    let mut img = Image::filled(width, height, [0, 0, 0]);
    for v in 0..height {
        let t = v as f64 / height as f64;
        let c = if (v as f64) < horizon {
            [10, 12, (24.0 + 16.0 * t) as u8]
        } else {
            let g = (14.0 + 12.0 * t) as u8;
            [g, g, g]
        };
        for u in 0..width {
            img.put(u, v, c);
        }
    }
    img
}

/// Writes a complete synthetic dataset under `out` and returns its manifest.
pub fn generate_synthetic(p: &SynthParams, out: &Path) -> Result<DatasetManifest> {
    let world = SyntheticWorld::new(p)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for scene in &world.scenes {
        for s in &scene.samples {
            let (cloud, labels) = world.scan(&s.pose);
            write_cloud(&out.join(&s.lidar), &cloud)?;
            for (img, rel) in world.render_images(&cloud, &labels).iter().zip(&s.images) {
                write_ppm(&out.join(rel), img)?;
            }
        }
    }
    let manifest = world.manifest();
    write_file(&out.join(MANIFEST_FILE), &manifest.to_json()?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SynthParams {
        SynthParams {
            num_scenes: 3,
            samples_per_scene: 6,
            landmark_count: 300,
            ..Default::default()
        }
    }

    #[test]
    fn cloud_round_trip_and_errors() {
        let cloud = PointCloud::new(vec![
            Point::new(1.5, -2.25, 0.125, 0.5),
            Point::new(10.0, 0.0, -1.0, 1.0),
        ])
        .unwrap();
        let bytes = cloud_to_bytes(&cloud).unwrap();
        assert_eq!(bytes.len(), 8 + 32);
        assert_eq!(cloud_from_bytes(&bytes, "c").unwrap(), cloud);
        for i in 0..4 {
            let mut b = bytes.clone();
            b[i] = b[i].wrapping_add(1);
            assert!(matches!(
                cloud_from_bytes(&b, "c"),
                Err(Error::Format { offset: 0, .. })
            ));
        }
        let err = cloud_from_bytes(&bytes[..30], "c").unwrap_err().to_string();
        assert!(err.contains("40 bytes") && err.contains("has 30"), "{err}");
        let mut long = bytes.clone();
        long.push(1);
        assert!(cloud_from_bytes(&long, "c").is_err());
        let empty = cloud_to_bytes(&PointCloud::default()).unwrap();
        assert!(cloud_from_bytes(&empty, "c").unwrap().is_empty());
    }

    #[test]
    fn ppm_round_trip_and_errors() {
        let mut img = Image::filled(3, 2, [1, 2, 3]);
        img.put(2, 1, [250, 0, 7]);
        let bytes = image_to_ppm(&img);
        assert_eq!(image_from_ppm(&bytes, "p").unwrap(), img);
        for i in 0..2 {
            let mut b = bytes.clone();
            b[i] ^= 0x20;
            assert!(matches!(image_from_ppm(&b, "p"), Err(Error::Format { offset: 0, .. })));
        }
        let commented = [b"P6\n# made by hand\n3 2\n255\n".as_slice(), &img.data].concat();
        assert_eq!(image_from_ppm(&commented, "p").unwrap(), img);
        assert!(image_from_ppm(&bytes[..bytes.len() - 1], "p").is_err());
        let deep = [b"P6\n3 2\n65535\n".as_slice(), &img.data].concat();
        assert!(image_from_ppm(&deep, "p").is_err());
    }

    #[test]
    fn manifest_round_trip_and_version() {
        let world = SyntheticWorld::new(&tiny()).unwrap();
        let m = world.manifest();
        let text = String::from_utf8(m.to_json().unwrap()).unwrap();
        assert_eq!(DatasetManifest::from_json(&text, "m").unwrap(), m);
        let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 7", 1);
        assert!(matches!(
            DatasetManifest::from_json(&bumped, "m"),
            Err(Error::UnsupportedVersion {
                found: 7,
                supported: 1,
                ..
            })
        ));
        let missing = text.replacen("\"format_version\": 1,", "", 1);
        assert!(
            matches!(DatasetManifest::from_json(&missing, "m"), Err(Error::Schema { field, .. }) if field == "format_version")
        );
    }

    #[test]
    fn manifest_schema_errors_name_fields() {
        let world = SyntheticWorld::new(&tiny()).unwrap();
        let mut m = world.manifest();
        m.scenes[1].samples[2].timestamp = m.scenes[1].samples[1].timestamp;
        let text = String::from_utf8(serde_json::to_vec(&m).unwrap()).unwrap();
        let err = DatasetManifest::from_json(&text, "m").unwrap_err();
        assert!(
            matches!(&err, Error::Schema { field, .. } if field == "scenes[1].samples[2].timestamp"),
            "{err}"
        );

        let mut m = world.manifest();
        m.scenes[2].samples[0].id = m.scenes[0].samples[0].id.clone();
        let text = serde_json::to_string(&m).unwrap();
        assert!(
            matches!(DatasetManifest::from_json(&text, "m"), Err(Error::Schema { field, .. }) if field == "scenes[2].samples[0].id")
        );

        let m = world.manifest();
        let mut v = serde_json::to_value(&m).unwrap();
        v["scenes"][0]["samples"][1]["pose"]["rotation"] = serde_json::json!([2.0, 0.0, 0.0, 0.0]);
        let err = DatasetManifest::from_json(&v.to_string(), "m").unwrap_err();
        assert!(
            matches!(&err, Error::Schema { field, .. } if field.starts_with("scenes[0].samples[1].pose")),
            "{err}"
        );

        assert!(matches!(
            DatasetManifest::from_json("{\"format_version\": 1,", "m"),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn synthetic_clouds_respect_range_limits_and_beams() {
        let world = SyntheticWorld::new(&tiny()).unwrap();
        let cfg = world.lidar.spherical;
        for s in &world.scenes[0].samples {
            let (cloud, labels) = world.scan(&s.pose);
            assert!(!cloud.is_empty());
            assert_eq!(cloud.len(), labels.len());
            for p in &cloud.points {
                let r = p.range() as f32 as f64;
                assert!(r >= cfg.r_min && r <= cfg.r_max);
                assert!(cfg.cell_of(p.xyz()).is_some());
            }
            let distinct: HashSet<usize> = labels.iter().copied().collect();
            assert_eq!(s.landmark_count, Some(distinct.len()));
        }
    }

    #[test]
    fn splat_centers_carry_landmark_colors() {
        let world = SyntheticWorld::new(&tiny()).unwrap();
        let pose = world.scenes[0].samples[0].pose;
        let (cloud, labels) = world.scan(&pose);
        let images = world.render_images(&cloud, &labels);
        let transforms = world.rig.cam_from_lidar(&world.lidar.extrinsic);
        let mut total = 0;
        for ((cam, t), img) in world.rig.cameras().iter().zip(&transforms).zip(&images) {
            let mut nearest: std::collections::HashMap<(usize, usize), (f64, usize)> = Default::default();
            for (p, &li) in cloud.points.iter().zip(&labels) {
                if let Some(pr) = project_to_camera(t.transform_point(p.xyz()), &cam.intrinsics, DEFAULT_NEAR_CLIP) {
                    let e = nearest.entry((pr.col, pr.row)).or_insert((pr.depth, li));
                    if pr.depth < e.0 {
                        *e = (pr.depth, li);
                    }
                }
            }
            for ((col, row), (_, li)) in nearest {
                total += 1;
                assert_eq!(
                    img.rgb8(col, row),
                    world.landmarks[li].color,
                    "{} pixel ({col}, {row})",
                    cam.name
                );
            }
        }
        assert!(total > 0);
    }

    #[test]
    fn scene_dates_straddle_gamma_and_overlap() {
        let p = SynthParams {
            num_scenes: 4,
            samples_per_scene: 10,
            landmark_count: 50,
            ..Default::default()
        };
        assert_eq!(p.overlap_samples(), 5);
        let world = SyntheticWorld::new(&p).unwrap();
        let g = world.gamma();
        for (i, s) in world.scenes.iter().enumerate() {
            assert_eq!(s.date < g, i % 2 == 0);
        }
        let q = world.scenes[1].samples[0].position();
        let near = world.scenes[0].samples.iter().any(|s| {
            let o = s.position();
            (o[0] - q[0]).hypot(o[1] - q[1]) <= 9.0
        });
        assert!(near);
        assert_eq!(
            SynthParams {
                revisit_rate: 0.01,
                ..p.clone()
            }
            .overlap_samples(),
            1
        );
        assert_eq!(SynthParams { revisit_rate: 0.0, ..p }.overlap_samples(), 0);
    }

    #[test]
    fn generate_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic(&tiny(), dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.manifest(), &m);
        assert_eq!(ds.len(), 18);
        let world = SyntheticWorld::new(&tiny()).unwrap();
        let s = &world.scenes[2].samples[3];
        let loaded = ds.load_sample(&s.id).unwrap();
        let (cloud, labels) = world.scan(&s.pose);
        assert_eq!(loaded.cloud, cloud);
        assert_eq!(loaded.images, world.render_images(&cloud, &labels));
        assert!(matches!(ds.load_sample("nope"), Err(Error::Lookup(_))));

        std::fs::remove_file(dir.path().join(&s.lidar)).unwrap();
        assert!(
            matches!(load_dataset(dir.path()), Err(Error::Schema { field, .. }) if field == "scenes[2].samples[3].lidar")
        );
    }

    #[test]
    fn empty_scenes_are_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = SynthParams {
            samples_per_scene: 0,
            ..tiny()
        };
        let m = generate_synthetic(&p, dir.path()).unwrap();
        assert_eq!(m.scenes.len(), 3);
        assert!(m.scenes.iter().all(|s| s.samples.is_empty()));
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }
}

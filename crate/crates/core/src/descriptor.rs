//! Baseline place descriptor and the binary descriptor file.
//!
//! The baseline histograms the ranges of each elevation row into log-spaced
//! bins and flattens row-major. Azimuth never enters, so any yaw rotation of
//! the sensor (a circular column shift of the range image) leaves the
//! descriptor bit-identical.
//!
//! File layout: `FPRD`, u32 count, u32 dim, then per record a u16 id length,
//! the UTF-8 id and `dim` f32 values, all little-endian.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::geometry::{RangeImage, SphericalConfig};
use crate::losses::{Descriptor, DESCRIPTOR_DIM};
use crate::{Error, Result};

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"FPRD";
pub const DESCRIPTOR_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    pub dim: usize,
    pub rows: usize,
    /// Bins per row. With `use_color` half of them are range bins and half
    /// hue bins.
    pub range_bins: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub use_color: bool,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            dim: DESCRIPTOR_DIM,
            rows: 32,
            range_bins: 8,
            r_min: SphericalConfig::DEFAULT_R_MIN,
            r_max: SphericalConfig::DEFAULT_R_MAX,
            use_color: false,
        }
    }
}

impl DescriptorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.range_bins == 0 || self.rows * self.range_bins != self.dim {
            return Err(Error::Config(format!(
                "rows ({}) x range_bins ({}) must equal dim ({})",
                self.rows, self.range_bins, self.dim
            )));
        }
        if self.use_color && self.range_bins % 2 != 0 {
            return Err(Error::Config("color descriptors need an even bin count".into()));
        }
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            return Err(Error::Config(format!(
                "log bins need 0 < r_min < r_max (got {} .. {})",
                self.r_min, self.r_max
            )));
        }
        Ok(())
    }

    fn geometric_bins(&self) -> usize {
        if self.use_color {
            self.range_bins / 2
        } else {
            self.range_bins
        }
    }

    /// The `bins + 1` log-spaced range edges.
    pub fn bin_edges(&self) -> Vec<f64> {
        let n = self.geometric_bins();
        let ratio = self.r_max / self.r_min;
        (0..=n).map(|i| self.r_min * ratio.powf(i as f64 / n as f64)).collect()
    }

    /// Range bin of `r`; ranges outside `[r_min, r_max]` go to the end bins.
    pub fn range_bin(&self, r: f64) -> usize {
        let n = self.geometric_bins();
        let t = (r / self.r_min).ln() / (self.r_max / self.r_min).ln();
        ((t * n as f64).floor().max(0.0) as usize).min(n - 1)
    }
}

/// Hue sector in `0..bins` or `None` for achromatic pixels.
fn hue_bin(rgb: &[f32], bins: usize) -> Option<usize> {
    let (r, g, b) = (rgb[0] as f64, rgb[1] as f64, rgb[2] as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    if c <= 0.0 {
        return None;
    }
    let h = if max == r {
        ((g - b) / c).rem_euclid(6.0)
    } else if max == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    Some(((h / 6.0 * bins as f64).floor() as usize).min(bins - 1))
}

/// Per-row range (and optionally hue) histogram, L2-normalized.
pub fn extract_baseline(img: &RangeImage, cfg: &DescriptorConfig) -> Result<Descriptor> {
    cfg.validate()?;
    if img.height != cfg.rows {
        return Err(Error::Shape(format!(
            "range image has {} rows, descriptor expects {}",
            img.height, cfg.rows
        )));
    }
    if cfg.use_color && img.channels < 4 {
        return Err(Error::Shape("color descriptor needs a 4-channel range image".into()));
    }
    let gb = cfg.geometric_bins();
    let mut hist = vec![0u32; cfg.dim];
    let hue_base = cfg.rows * gb;
    for v in 0..img.height {
        for u in 0..img.width {
            let px = img.pixel(u, v);
            if !(px[0] > 0.0) {
                continue;
            }
            hist[v * gb + cfg.range_bin(px[0] as f64)] += 1;
            if cfg.use_color {
                if let Some(h) = hue_bin(&px[1..4], gb) {
                    hist[hue_base + v * gb + h] += 1;
                }
            }
        }
    }
    let norm = hist.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt();
    let values = if norm > 0.0 {
        hist.iter().map(|&c| (c as f64 / norm) as f32).collect()
    } else {
        vec![0.0; cfg.dim]
    };
    Ok(Descriptor(values))
}

/// Baseline descriptors of a batch of images, in order.
pub fn extract_batch(images: &[RangeImage], cfg: &DescriptorConfig, exec: Execution) -> Result<Vec<Descriptor>> {
    cfg.validate()?;
    exec.try_map(images, |img| extract_baseline(img, cfg))
}

/// Descriptors keyed by sample id, in insertion order, of one dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescriptorSet {
    dim: usize,
    entries: IndexMap<String, Descriptor>,
}

impl DescriptorSet {
    pub fn new(dim: usize) -> Self {
        DescriptorSet {
            dim,
            entries: IndexMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, d: Descriptor) -> Result<()> {
        let id = id.into();
        if d.dim() != self.dim {
            return Err(Error::Shape(format!(
                "descriptor for {id} has dim {}, set has {}",
                d.dim(),
                self.dim
            )));
        }
        if self.entries.contains_key(&id) {
            return Err(Error::Argument(format!("duplicate descriptor id {id}")));
        }
        self.entries.insert(id, d);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Descriptor> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Descriptor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let count = u32::try_from(self.len()).map_err(|_| Error::Argument("too many descriptors".into()))?;
        let dim = u32::try_from(self.dim).map_err(|_| Error::Argument("descriptor dim too large".into()))?;
        let mut out = Vec::with_capacity(DESCRIPTOR_HEADER_LEN + self.len() * (2 + 16 + 4 * self.dim));
        out.extend_from_slice(DESCRIPTOR_MAGIC);
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        for (id, d) in &self.entries {
            let len = u16::try_from(id.len())
                .map_err(|_| Error::Argument(format!("descriptor id longer than 65535 bytes: {id}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in &d.0 {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a descriptor file; `origin` names the source in errors.
    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0, origin };
        let magic = r.take(4, "magic")?;
        if magic != DESCRIPTOR_MAGIC {
            return Err(Error::format(
                origin,
                0,
                format!("bad magic {magic:?}, expected \"FPRD\""),
            ));
        }
        let count = r.u32("record count")? as usize;
        let dim = r.u32("dim")? as usize;
        if dim == 0 && count > 0 {
            return Err(Error::format(origin, 8, "dim 0 with nonzero record count"));
        }
        let mut set = DescriptorSet::new(dim);
        for i in 0..count {
            let start = r.pos as u64;
            let len = u16::from_le_bytes(r.take(2, "id length")?.try_into().unwrap()) as usize;
            let id_bytes = r.take(len, "id")?;
            let id = std::str::from_utf8(id_bytes)
                .map_err(|_| Error::format(origin, start + 2, format!("record {i}: id is not UTF-8")))?
                .to_string();
            let values_at = r.pos as u64;
            let raw = r.take(4 * dim, "descriptor values")?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if let Some(k) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::format(
                    origin,
                    values_at + 4 * k as u64,
                    format!("record {id}: non-finite value"),
                ));
            }
            if set.entries.contains_key(&id) {
                return Err(Error::format(origin, start, format!("duplicate descriptor id {id}")));
            }
            set.entries.insert(id, Descriptor(values));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(
                origin,
                r.pos as u64,
                format!("{} trailing bytes after {count} records", bytes.len() - r.pos),
            ));
        }
        Ok(set)
    }
}

pub(crate) struct ByteReader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
    pub(crate) origin: &'a str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(
                self.origin,
                self.pos as u64,
                format!(
                    "truncated while reading {what}: need {n} bytes, {} remain (file is {} bytes)",
                    self.bytes.len() - self.pos,
                    self.bytes.len()
                ),
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn export_descriptors(set: &DescriptorSet, path: &Path) -> Result<()> {
    std::fs::write(path, set.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn import_descriptors(path: &Path) -> Result<DescriptorSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    DescriptorSet::from_bytes(&bytes, &path.display().to_string())
}

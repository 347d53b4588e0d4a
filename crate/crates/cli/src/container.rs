//! Portable container format for datasets, spectroscopic images, and map
//! stacks.
//!
//! Layout: an 8-byte little-endian unsigned header length, a UTF-8 JSON
//! header of that length, then the payload as raw little-endian 64-bit
//! floats in row-major order. The header carries the array semantics
//! (shape, axes, schedule, grid, mask) and provenance; payload round-trips
//! are bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use mdspec_core::model::{ContrastEncoding, SpectralGrid, SpectroscopicImage};
use mdspec_core::phantom::MeasuredDataset;
use mdspec_core::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub const MAGIC: &str = "MDCSI/1";
pub const DTYPE: &str = "f64le";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScheduleEntry {
    pub te_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ti_ms: Option<f64>,
}

impl From<&ContrastEncoding> for ScheduleEntry {
    fn from(enc: &ContrastEncoding) -> Self {
        ScheduleEntry {
            te_ms: enc.te_ms,
            ti_ms: enc.ti_ms,
        }
    }
}

impl From<&ScheduleEntry> for ContrastEncoding {
    fn from(entry: &ScheduleEntry) -> Self {
        ContrastEncoding {
            te_ms: entry.te_ms,
            ti_ms: entry.ti_ms,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridHeader {
    pub t1_ms: Vec<f64>,
    pub t2_ms: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Provenance {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Noise generator identifier (e.g. "chacha8/voxel-stream").
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    /// Which ADMM iterate a solution file stores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver_iterate: Option<String>,
    /// Global scale applied by scale correction.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub magic: String,
    pub dtype: String,
    /// "dataset", "spectroscopic-image", or "map-stack".
    pub kind: String,
    pub shape: Vec<usize>,
    /// Semantic name per payload dimension.
    pub axes: Vec<String>,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<ScheduleEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridHeader>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<u8>>,
    /// Plane labels for map stacks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub provenance: Provenance,
}

fn io_err(path: &Path, what: &str, e: std::io::Error) -> Error {
    Error::Data(format!("{what} {}: {e}", path.display()))
}

/// Write a container file. The declared shape must multiply to the payload
/// element count.
pub fn write_container(path: &Path, header: &ContainerHeader, payload: &[f64]) -> Result<()> {
    let count: usize = header.shape.iter().product();
    if count != payload.len() {
        return Err(Error::Config(format!(
            "container shape {:?} implies {count} elements but payload has {}",
            header.shape,
            payload.len()
        )));
    }
    if header.axes.len() != header.shape.len() {
        return Err(Error::Config(format!(
            "container has {} axes for {} dimensions",
            header.axes.len(),
            header.shape.len()
        )));
    }
    let json = serde_json::to_string(header)
        .map_err(|e| Error::Config(format!("header serialization failed: {e}")))?;
    let mut file = fs::File::create(path).map_err(|e| io_err(path, "cannot create", e))?;
    file.write_all(&(json.len() as u64).to_le_bytes())
        .and_then(|_| file.write_all(json.as_bytes()))
        .map_err(|e| io_err(path, "cannot write", e))?;
    let mut buf = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf).map_err(|e| io_err(path, "cannot write", e))?;
    Ok(())
}

/// Read and validate a container file.
pub fn read_container(path: &Path) -> Result<(ContainerHeader, Vec<f64>)> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, "cannot open", e))?;
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|e| io_err(path, "cannot read header length from", e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    if header_len > 1 << 30 {
        return Err(Error::Data(format!(
            "implausible header length {header_len} in {}",
            path.display()
        )));
    }
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|e| io_err(path, "cannot read header from", e))?;
    let mut de = serde_json::Deserializer::from_slice(&header_bytes);
    let header: ContainerHeader = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| Error::Data(format!("invalid header in {} at {}: {}", path.display(), e.path(), e.inner())))?;
    if header.magic != MAGIC {
        return Err(Error::Data(format!(
            "{} is not a {MAGIC} container (magic {:?})",
            path.display(),
            header.magic
        )));
    }
    if header.dtype != DTYPE {
        return Err(Error::Data(format!(
            "unsupported payload dtype {:?} in {}",
            header.dtype,
            path.display()
        )));
    }
    let count: usize = header.shape.iter().product();
    let mut payload_bytes = Vec::new();
    file.read_to_end(&mut payload_bytes)
        .map_err(|e| io_err(path, "cannot read payload from", e))?;
    if payload_bytes.len() != count * 8 {
        return Err(Error::Data(format!(
            "payload of {} has {} bytes, expected {} for shape {:?}",
            path.display(),
            payload_bytes.len(),
            count * 8,
            header.shape
        )));
    }
    let payload: Vec<f64> = payload_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, payload))
}

/// Write a measured dataset with its schedule, mask, and provenance.
pub fn write_dataset(path: &Path, ds: &MeasuredDataset, provenance: Provenance) -> Result<()> {
    let header = ContainerHeader {
        magic: MAGIC.to_string(),
        dtype: DTYPE.to_string(),
        kind: "dataset".to_string(),
        shape: vec![ds.encoding_count(), ds.voxel_count()],
        axes: vec!["encoding".to_string(), "voxel".to_string()],
        width: ds.width,
        height: ds.height,
        schedule: Some(ds.schedule.iter().map(ScheduleEntry::from).collect()),
        grid: None,
        mask: Some(ds.mask.clone()),
        labels: None,
        provenance,
    };
    let payload: Vec<f64> = ds.data.iter().cloned().collect();
    write_container(path, &header, &payload)
}

pub fn read_dataset(path: &Path) -> Result<(MeasuredDataset, ContainerHeader)> {
    let (header, payload) = read_container(path)?;
    if header.kind != "dataset" {
        return Err(Error::Data(format!(
            "{} holds a {:?}, expected a dataset",
            path.display(),
            header.kind
        )));
    }
    let schedule: Vec<ContrastEncoding> = header
        .schedule
        .as_ref()
        .ok_or_else(|| Error::Data(format!("dataset {} lacks a schedule", path.display())))?
        .iter()
        .map(ContrastEncoding::from)
        .collect();
    let (p, n) = match header.shape[..] {
        [p, n] => (p, n),
        _ => {
            return Err(Error::Data(format!(
                "dataset {} has shape {:?}, expected 2 dimensions",
                path.display(),
                header.shape
            )))
        }
    };
    let data = Array2::from_shape_vec((p, n), payload)
        .map_err(|e| Error::Data(format!("dataset reshape failed: {e}")))?;
    // External files without a mask get one by thresholding the strongest
    // image at 10% of its robust maximum.
    let mask = match header.mask.clone() {
        Some(m) => m,
        None => mdspec_core::phantom::threshold_mask(&data, 0.1)?,
    };
    let ds = MeasuredDataset::new(data, schedule, header.width, header.height, mask)?;
    Ok((ds, header))
}

/// Write a spectroscopic image with its grid.
pub fn write_image(
    path: &Path,
    image: &SpectroscopicImage,
    mask: Option<&[u8]>,
    provenance: Provenance,
) -> Result<()> {
    let header = ContainerHeader {
        magic: MAGIC.to_string(),
        dtype: DTYPE.to_string(),
        kind: "spectroscopic-image".to_string(),
        shape: vec![image.grid.len(), image.voxel_count()],
        axes: vec!["spectral-node".to_string(), "voxel".to_string()],
        width: image.width,
        height: image.height,
        schedule: None,
        grid: Some(GridHeader {
            t1_ms: image.grid.t1_values().to_vec(),
            t2_ms: image.grid.t2_values().to_vec(),
            weights: image.grid.weights().to_vec(),
        }),
        mask: mask.map(|m| m.to_vec()),
        labels: None,
        provenance,
    };
    let payload: Vec<f64> = image.values.iter().cloned().collect();
    write_container(path, &header, &payload)
}

pub fn read_image(path: &Path) -> Result<(SpectroscopicImage, ContainerHeader)> {
    let (header, payload) = read_container(path)?;
    if header.kind != "spectroscopic-image" {
        return Err(Error::Data(format!(
            "{} holds a {:?}, expected a spectroscopic image",
            path.display(),
            header.kind
        )));
    }
    let gh = header
        .grid
        .as_ref()
        .ok_or_else(|| Error::Data(format!("image {} lacks a grid", path.display())))?;
    let grid = SpectralGrid::from_parts(gh.t1_ms.clone(), gh.t2_ms.clone(), gh.weights.clone())?;
    let (q, n) = match header.shape[..] {
        [q, n] => (q, n),
        _ => {
            return Err(Error::Data(format!(
                "image {} has shape {:?}, expected 2 dimensions",
                path.display(),
                header.shape
            )))
        }
    };
    let values = Array2::from_shape_vec((q, n), payload)
        .map_err(|e| Error::Data(format!("image reshape failed: {e}")))?;
    let image = SpectroscopicImage::from_values(values, grid, header.width, header.height)?;
    Ok((image, header))
}

/// Write a stack of named spatial maps (shape regions x height x width).
pub fn write_map_stack(
    path: &Path,
    maps: &[(String, Array2<f64>)],
    provenance: Provenance,
) -> Result<()> {
    if maps.is_empty() {
        return Err(Error::Config("map stack must contain at least one map".into()));
    }
    let (h, w) = maps[0].1.dim();
    for (label, m) in maps {
        if m.dim() != (h, w) {
            return Err(Error::Config(format!(
                "map {label} is {:?}, expected ({h}, {w})",
                m.dim()
            )));
        }
    }
    let header = ContainerHeader {
        magic: MAGIC.to_string(),
        dtype: DTYPE.to_string(),
        kind: "map-stack".to_string(),
        shape: vec![maps.len(), h, w],
        axes: vec!["region".to_string(), "y".to_string(), "x".to_string()],
        width: w,
        height: h,
        schedule: None,
        grid: None,
        mask: None,
        labels: Some(maps.iter().map(|(l, _)| l.clone()).collect()),
        provenance,
    };
    let mut payload = Vec::with_capacity(maps.len() * h * w);
    for (_, m) in maps {
        payload.extend(m.iter().cloned());
    }
    write_container(path, &header, &payload)
}

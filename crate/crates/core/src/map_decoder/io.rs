use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use npyz::WriterBuilder;
use serde::{Deserialize, Serialize};

use super::{DecodeParams, Detection, LogitMap, MapShape};
use crate::annotation_store::{BoundingBox, CoordSpace, Frame};
use crate::error::{Error, Result};

/// Class name of the channel that represents "no finding".
pub const BACKGROUND_CLASS: &str = "background";

/// JSON file stored next to each `.npy` map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub image_id: String,
    pub classes: Vec<String>,
    pub space: CoordSpace,
    /// Network-input pixels per map cell.
    pub map_to_net_scale: f64,
}

impl MapSidecar {
    pub fn background_index(&self) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c.eq_ignore_ascii_case(BACKGROUND_CLASS))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "sidecar for {} lists no {BACKGROUND_CLASS:?} class",
                    self.image_id
                ))
            })
    }

    fn validate(&self, shape: MapShape) -> Result<()> {
        if self.space != CoordSpace::Map {
            return Err(Error::invalid(format!(
                "sidecar for {} must declare space \"map\", got {:?}",
                self.image_id,
                self.space.as_str()
            )));
        }
        if self.classes.len() != shape.channels {
            return Err(Error::DimMismatch {
                axis: format!("classes of {}", self.image_id),
                expected: shape.channels,
                actual: self.classes.len(),
            });
        }
        if !(self.map_to_net_scale.is_finite() && self.map_to_net_scale > 0.0) {
            return Err(Error::invalid(format!(
                "map_to_net_scale must be positive, got {}",
                self.map_to_net_scale
            )));
        }
        self.background_index().map(|_| ())
    }

    /// Extent of the map grid in map cells.
    pub fn map_frame(&self, shape: MapShape) -> Frame {
        Frame::new(shape.width as f64, shape.height as f64, CoordSpace::Map)
    }

    /// Extent of the network input the map is aligned to.
    pub fn net_frame(&self, shape: MapShape) -> Frame {
        Frame::new(
            shape.width as f64 * self.map_to_net_scale,
            shape.height as f64 * self.map_to_net_scale,
            CoordSpace::Net416,
        )
    }
}

/// A logit map with its sidecar.
#[derive(Debug, Clone)]
pub struct MapSample {
    pub sidecar: MapSidecar,
    pub logits: LogitMap,
}

impl MapSample {
    pub fn new(sidecar: MapSidecar, logits: LogitMap) -> Result<Self> {
        sidecar.validate(logits.shape())?;
        if sidecar.background_index()? != logits.background() {
            return Err(Error::invalid("sidecar background channel disagrees with the map"));
        }
        Ok(MapSample { sidecar, logits })
    }

    pub fn class_name(&self, k: usize) -> &str {
        &self.sidecar.classes[k]
    }

    /// Converts a map-space box into `target`. The network frame spans the map
    /// grid times `map_to_net_scale`; native space also needs the image size.
    pub fn convert_box(&self, b: &BoundingBox, target: CoordSpace, native: Option<(u32, u32)>) -> Result<BoundingBox> {
        let shape = self.logits.shape();
        let map = self.sidecar.map_frame(shape);
        let net = self.sidecar.net_frame(shape);
        let in_net = crate::annotation_store::rescale_box(b, map, net)?;
        match target {
            CoordSpace::Map => Ok(*b),
            CoordSpace::Net416 => Ok(in_net),
            CoordSpace::Native => {
                let (w, h) = native.ok_or_else(|| {
                    Error::invalid(format!("native size of {} is unknown", self.sidecar.image_id))
                })?;
                crate::annotation_store::rescale_box(&in_net, net, Frame::new(w as f64, h as f64, CoordSpace::Native))
            }
        }
    }
}

impl MapSample {
    /// Decodes the map and converts every box into `target`.
    pub fn decode_records(
        &self,
        params: &DecodeParams,
        target: CoordSpace,
        native: Option<(u32, u32)>,
    ) -> Result<Vec<DetectionRecord>> {
        super::decode(&self.logits, params)?
            .iter()
            .map(|det| {
                let bbox = self.convert_box(&det.bbox, target, native)?;
                Ok(DetectionRecord::from_detection(
                    &self.sidecar.image_id,
                    self.class_name(det.class_index),
                    det,
                    &bbox,
                ))
            })
            .collect()
    }
}

/// One entry of `detections.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub space: CoordSpace,
    pub confidence: f64,
    /// Region centroid `[row, col]` in map cells.
    pub centroid: [f64; 2],
}

impl DetectionRecord {
    pub fn from_detection(image_id: &str, class: &str, det: &Detection, bbox: &BoundingBox) -> Self {
        DetectionRecord {
            image_id: image_id.to_owned(),
            class: class.to_owned(),
            bbox: bbox.to_array(),
            space: bbox.space,
            confidence: det.confidence,
            centroid: [det.centroid.0, det.centroid.1],
        }
    }

    pub fn to_box(&self) -> Result<BoundingBox> {
        let [x, y, w, h] = self.bbox;
        BoundingBox::new(x, y, w, h, self.space)
    }
}

/// Reads a float32 (or float64) C-order `[K, H, W]` NPY array.
pub fn read_npy(bytes: &[u8]) -> Result<(MapShape, Vec<f64>)> {
    let npy = npyz::NpyFile::new(Cursor::new(bytes)).map_err(|e| Error::Npy(e.to_string()))?;
    if npy.order() != npyz::Order::C {
        return Err(Error::Npy("only C-order arrays are supported".into()));
    }
    let dims: Vec<usize> = npy.shape().iter().map(|&d| d as usize).collect();
    let [k, h, w] = dims[..] else {
        return Err(Error::Npy(format!("expected shape [K, H, W], got {dims:?}")));
    };
    let type_str = match npy.dtype() {
        npyz::DType::Plain(ts) => ts.to_string(),
        other => return Err(Error::Npy(format!("unsupported dtype {other:?}"))),
    };
    let values: Vec<f64> = match type_str.as_str() {
        "<f4" => npy
            .into_vec::<f32>()
            .map_err(|e| Error::Npy(e.to_string()))?
            .into_iter()
            .map(f64::from)
            .collect(),
        "<f8" => npy.into_vec::<f64>().map_err(|e| Error::Npy(e.to_string()))?,
        other => return Err(Error::Npy(format!("expected little-endian float32, got {other}"))),
    };
    Ok((MapShape::new(k, h, w), values))
}

/// Writes values as an NPY 1.0 little-endian float32 `[K, H, W]` array.
pub fn write_npy(shape: MapShape, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != shape.len() {
        return Err(Error::DimMismatch {
            axis: "values".into(),
            expected: shape.len(),
            actual: values.len(),
        });
    }
    let mut buf = Vec::new();
    let mut writer = npyz::WriteOptions::<f32>::new()
        .default_dtype()
        .shape(&[shape.channels as u64, shape.height as u64, shape.width as u64])
        .writer(&mut buf)
        .begin_nd()
        .map_err(|e| Error::Npy(e.to_string()))?;
    writer
        .extend(values.iter().map(|&v| v as f32))
        .map_err(|e| Error::Npy(e.to_string()))?;
    writer.finish().map_err(|e| Error::Npy(e.to_string()))?;
    Ok(buf)
}

/// Writes `<dir>/<stem>.npy` and `<dir>/<stem>.json`.
pub fn write_map(dir: &Path, stem: &str, sample: &MapSample) -> Result<()> {
    let npy_path = dir.join(format!("{stem}.npy"));
    let bytes = write_npy(sample.logits.shape(), sample.logits.values())?;
    fs::write(&npy_path, bytes).map_err(|e| Error::io(&npy_path, e))?;
    let json_path = dir.join(format!("{stem}.json"));
    let json = serde_json::to_string_pretty(&sample.sidecar).expect("sidecar serializes");
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}

fn read_sample(npy_path: &Path, json_path: &Path) -> Result<MapSample> {
    let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    let sidecar: MapSidecar = serde_json::from_str(&text).map_err(|e| Error::json(&text, &e))?;
    let bytes = fs::read(npy_path).map_err(|e| Error::io(npy_path, e))?;
    let (shape, values) = read_npy(&bytes)?;
    let background = sidecar.background_index()?;
    MapSample::new(sidecar, LogitMap::new(shape, values, background)?)
}

/// Loads every `.npy` map with a matching `.json` sidecar in `dir`, sorted
/// by image id.
pub fn read_map_dir(dir: &Path) -> Result<Vec<MapSample>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut npy_paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "npy") {
            npy_paths.push(path);
        }
    }
    npy_paths.sort();
    let mut samples = npy_paths
        .iter()
        .map(|npy| read_sample(npy, &npy.with_extension("json")))
        .collect::<Result<Vec<_>>>()?;
    samples.sort_by(|a, b| a.sidecar.image_id.cmp(&b.sidecar.image_id));
    if let Some(w) = samples.windows(2).find(|w| w[0].sidecar.image_id == w[1].sidecar.image_id) {
        return Err(Error::invalid(format!("image id {} has two maps", w[0].sidecar.image_id)));
    }
    Ok(samples)
}

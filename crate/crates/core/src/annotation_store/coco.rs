use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::boxes::{BoundingBox, CoordSpace};
use crate::error::{Error, Result};
use crate::report_parser::Disease;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub disease_labels: BTreeSet<Disease>,
}

/// One grounded phrase with one or more boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub phrase: String,
    pub category: String,
    pub boxes: Vec<BoundingBox>,
    pub disease_tags: BTreeSet<Disease>,
}

#[derive(Debug, Deserialize)]
struct CocoDocument {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: Value,
    width: f64,
    height: f64,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    #[serde(default)]
    id: Option<Value>,
    image_id: Value,
    category_id: Value,
    bbox: [f64; 4],
    #[serde(default)]
    phrase: Option<String>,
    #[serde(default)]
    caption: Option<String>,
    #[serde(default)]
    metadata: Option<Value>,
}

#[derive(Debug, Deserialize)]
struct CocoCategory {
    id: Value,
    name: String,
}

/// COCO ids may be numbers or strings; both map to the same string key.
fn id_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl CocoAnnotation {
    fn phrase(&self) -> Option<String> {
        let from_meta = || {
            let meta = self.metadata.as_ref()?;
            ["phrase", "name", "text"]
                .iter()
                .find_map(|k| meta.get(k)?.as_str().map(str::to_owned))
        };
        self.phrase
            .clone()
            .or_else(|| self.caption.clone())
            .or_else(from_meta)
            .map(|p| p.trim().to_owned())
            .filter(|p| !p.is_empty())
    }
}

/// Parses a COCO document. Boxes sharing an image, phrase and category are
/// grouped into one multi-instance [`Annotation`], in order of first
/// appearance.
pub fn load_coco(json: &str) -> Result<(Vec<ImageRecord>, Vec<Annotation>)> {
    let doc: CocoDocument = serde_json::from_str(json).map_err(|e| Error::json(json, &e))?;

    let categories: HashMap<String, String> = doc
        .categories
        .iter()
        .map(|c| (id_string(&c.id), c.name.clone()))
        .collect();

    let mut images = Vec::with_capacity(doc.images.len());
    let mut index_of: HashMap<String, usize> = HashMap::new();
    for img in &doc.images {
        let image_id = id_string(&img.id);
        if !(img.width >= 1.0 && img.height >= 1.0) {
            return Err(Error::invalid(format!(
                "image {image_id} has non-positive size {}x{}",
                img.width, img.height
            )));
        }
        index_of.insert(image_id.clone(), images.len());
        images.push(ImageRecord {
            image_id,
            width: img.width as u32,
            height: img.height as u32,
            disease_labels: BTreeSet::new(),
        });
    }

    let mut annotations: Vec<Annotation> = Vec::new();
    let mut group_of: HashMap<(String, String, String), usize> = HashMap::new();
    for (n, ann) in doc.annotations.iter().enumerate() {
        let image_id = id_string(&ann.image_id);
        let Some(&img_idx) = index_of.get(&image_id) else {
            return Err(Error::DanglingImage(image_id));
        };
        let category_key = id_string(&ann.category_id);
        let category = categories
            .get(&category_key)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("annotation references unknown category id {category_key}")))?;
        let label = ann.id.as_ref().map(id_string).unwrap_or_else(|| format!("#{n}"));
        let [x, y, w, h] = ann.bbox;
        let bbox = BoundingBox::new(x, y, w, h, CoordSpace::Native)
            .map_err(|e| Error::invalid(format!("annotation {label}: {e}")))?;
        let image = &mut images[img_idx];
        if bbox.check_within(image.width as f64, image.height as f64).is_err() {
            log::warn!("annotation {label} extends past image {} bounds", image.image_id);
        }
        let tag = Disease::from_name(&category);
        if let Some(d) = tag {
            image.disease_labels.insert(d);
        }
        let phrase = ann.phrase().unwrap_or_else(|| category.clone());
        let key = (image_id.clone(), phrase.clone(), category.clone());
        match group_of.get(&key) {
            Some(&g) => annotations[g].boxes.push(bbox),
            None => {
                group_of.insert(key, annotations.len());
                annotations.push(Annotation {
                    image_id,
                    phrase,
                    category,
                    boxes: vec![bbox],
                    disease_tags: tag.into_iter().collect(),
                });
            }
        }
    }
    Ok((images, annotations))
}

pub fn load_coco_file(path: impl AsRef<Path>) -> Result<(Vec<ImageRecord>, Vec<Annotation>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_coco(&text)
}

/// Serializes records back into a COCO document, one COCO annotation per box.
pub fn to_coco(images: &[ImageRecord], annotations: &[Annotation]) -> Value {
    let names: BTreeSet<&str> = annotations.iter().map(|a| a.category.as_str()).collect();
    let category_ids: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i + 1)).collect();

    let mut coco_anns = Vec::new();
    for ann in annotations {
        for b in &ann.boxes {
            coco_anns.push(json!({
                "id": coco_anns.len() + 1,
                "image_id": ann.image_id,
                "category_id": category_ids[ann.category.as_str()],
                "bbox": b.to_array(),
                "phrase": ann.phrase,
            }));
        }
    }
    json!({
        "images": images
            .iter()
            .map(|i| json!({"id": i.image_id, "width": i.width, "height": i.height}))
            .collect::<Vec<_>>(),
        "annotations": coco_anns,
        "categories": category_ids
            .iter()
            .map(|(name, id)| json!({"id": id, "name": name}))
            .collect::<Vec<_>>(),
    })
}

//! COCO-style annotations, deterministic dataset splits and coordinate
//! rescaling between native, network and map resolutions.

mod boxes;
mod coco;
mod split;

pub use boxes::{rescale_box, BoundingBox, CoordSpace, Frame, NET_SIZE};
pub use coco::{load_coco, load_coco_file, to_coco, Annotation, ImageRecord};
pub use split::{make_split, mix_negatives, DatasetSplit, MixOutcome, SplitRatios};

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage, Rgba, RgbaImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    extract_cutouts, filter_objects, parse_annotation_document, FilterBreakdown, FilterRules, IndexedMask,
    SegmentedObject,
};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CUTOUT_DIR: &str = "cutouts";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(rename = "class")]
    pub class_name: String,
    pub area_px: u64,
    pub source_id: String,
    pub width: u32,
    pub height: u32,
    pub instance_index: u32,
}

impl ManifestEntry {
    fn of(object: &SegmentedObject) -> Self {
        ManifestEntry {
            id: object.id.clone(),
            class_name: object.class_name.clone(),
            area_px: object.area_px,
            source_id: object.source_id.clone(),
            width: object.width(),
            height: object.height(),
            instance_index: object.instance_index,
        }
    }
}

/// The filtered occluder set, ordered by `(source_id, instance_index)`.
/// Immutable once built or loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct OccluderLibrary {
    objects: Vec<SegmentedObject>,
    manifest: Vec<ManifestEntry>,
}

impl OccluderLibrary {
    pub fn from_objects(mut objects: Vec<SegmentedObject>) -> Result<Self> {
        if objects.is_empty() {
            return Err(Error::EmptyLibrary);
        }
        objects.sort_by(|a, b| (&a.source_id, a.instance_index).cmp(&(&b.source_id, b.instance_index)));
        for o in &objects {
            o.check_invariants()
                .map_err(|m| Error::integrity(PathBuf::from(&o.id), m))?;
        }
        let manifest = objects.iter().map(ManifestEntry::of).collect();
        Ok(OccluderLibrary { objects, manifest })
    }

    pub fn objects(&self) -> &[SegmentedObject] {
        &self.objects
    }

    pub fn manifest(&self) -> &[ManifestEntry] {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&SegmentedObject> {
        self.objects.get(index)
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let cutouts = out_dir.join(CUTOUT_DIR);
        fs::create_dir_all(&cutouts).map_err(|e| Error::io(&cutouts, e))?;
        self.objects.par_iter().try_for_each(|o| {
            let path = cutouts.join(format!("{}.png", o.id));
            let rgba = RgbaImage::from_fn(o.width(), o.height(), |x, y| {
                let Rgb([r, g, b]) = *o.pixels.get_pixel(x, y);
                Rgba([r, g, b, o.alpha.get_pixel(x, y).0[0]])
            });
            rgba.save_with_format(&path, image::ImageFormat::Png)
                .map_err(|e| Error::image(&path, e))
        })?;
        let manifest_path = out_dir.join(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(&self.manifest)?;
        fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))
    }
}

/// Counts gathered while building a library.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub split: String,
    pub images: usize,
    /// Annotated objects whose palette index never occurs in the mask.
    pub absent_from_mask: usize,
    pub breakdown: FilterBreakdown,
    pub retained: usize,
    /// Retained objects whose source image is in the `train` list, when that list exists.
    pub retained_train: Option<usize>,
}

fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn require_dir(path: PathBuf) -> Result<PathBuf> {
    if path.is_dir() {
        Ok(path)
    } else {
        Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing dataset directory"),
        ))
    }
}

/// Source images to ingest: the `trainval` segmentation list when present,
/// otherwise every instance mask in `SegmentationObject/`.
fn image_ids(root: &Path, seg_dir: &Path) -> Result<(String, Vec<String>)> {
    let list = root.join("ImageSets").join("Segmentation").join("trainval.txt");
    if list.is_file() {
        let mut ids = read_id_list(&list)?;
        ids.sort();
        ids.dedup();
        return Ok(("trainval".into(), ids));
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(seg_dir).map_err(|e| Error::io(seg_dir, e))? {
        let path = entry.map_err(|e| Error::io(seg_dir, e))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(("all-masks".into(), ids))
}

struct PerImage {
    kept: Vec<SegmentedObject>,
    breakdown: FilterBreakdown,
    absent: usize,
}

fn ingest_image(root: &Path, seg_dir: &Path, id: &str, rules: &FilterRules) -> Result<PerImage> {
    let xml_path = root.join("Annotations").join(format!("{id}.xml"));
    let xml = fs::read(&xml_path).map_err(|e| Error::io(&xml_path, e))?;
    let ann = parse_annotation_document(&xml).map_err(|e| match e {
        Error::Annotation { element, message } => Error::Annotation {
            element,
            message: format!("{}: {message}", xml_path.display()),
        },
        other => other,
    })?;

    let jpg_path = root.join("JPEGImages").join(format!("{id}.jpg"));
    let image = image::open(&jpg_path)
        .map_err(|e| Error::image(&jpg_path, e))?
        .to_rgb8();
    let mask = IndexedMask::read_png(&seg_dir.join(format!("{id}.png")))?;
    let ex = extract_cutouts(&image, &mask, &ann.objects, id)?;
    let breakdown = FilterBreakdown::tally(&ex.objects, &ex.annotations, rules);
    let kept = filter_objects(&ex.objects, &ex.annotations, rules)?;
    Ok(PerImage {
        kept,
        breakdown,
        absent: ex.skipped.len(),
    })
}

/// Parses, extracts and filters every segmented image under a VOC-layout
/// root, then writes the library to `out_dir`.
pub fn build_library(dataset_root: &Path, rules: &FilterRules, out_dir: &Path) -> Result<(OccluderLibrary, IngestReport)> {
    require_dir(dataset_root.join("Annotations"))?;
    require_dir(dataset_root.join("JPEGImages"))?;
    let seg_dir = require_dir(dataset_root.join("SegmentationObject"))?;
    let (split, ids) = image_ids(dataset_root, &seg_dir)?;

    let per_image = ids
        .par_iter()
        .map(|id| ingest_image(dataset_root, &seg_dir, id, rules))
        .collect::<Result<Vec<_>>>()?;

    let mut report = IngestReport {
        split,
        images: ids.len(),
        ..IngestReport::default()
    };
    let mut objects = Vec::new();
    for p in per_image {
        report.breakdown.merge(&p.breakdown);
        report.absent_from_mask += p.absent;
        objects.extend(p.kept);
    }
    report.retained = objects.len();

    let train_list = dataset_root.join("ImageSets").join("Segmentation").join("train.txt");
    if train_list.is_file() {
        let train: HashSet<String> = read_id_list(&train_list)?.into_iter().collect();
        report.retained_train = Some(objects.iter().filter(|o| train.contains(&o.source_id)).count());
    }

    let library = OccluderLibrary::from_objects(objects)?;
    library.write(out_dir)?;
    Ok((library, report))
}

pub fn load_library(path: &Path) -> Result<OccluderLibrary> {
    let manifest_path = path.join(MANIFEST_FILE);
    let bytes = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&bytes)
        .map_err(|e| Error::integrity(&manifest_path, format!("corrupt manifest: {e}")))?;
    if manifest.is_empty() {
        return Err(Error::EmptyLibrary);
    }

    let objects = manifest
        .par_iter()
        .map(|entry| load_cutout(path, entry))
        .collect::<Result<Vec<_>>>()?;
    Ok(OccluderLibrary { objects, manifest })
}

fn load_cutout(root: &Path, entry: &ManifestEntry) -> Result<SegmentedObject> {
    let file = root.join(CUTOUT_DIR).join(format!("{}.png", entry.id));
    if !file.is_file() {
        return Err(Error::integrity(&file, "cutout file referenced by manifest is missing"));
    }
    let rgba = image::open(&file)
        .map_err(|e| Error::integrity(&file, format!("unreadable cutout: {e}")))?
        .to_rgba8();
    if rgba.dimensions() != (entry.width, entry.height) {
        return Err(Error::integrity(
            &file,
            format!("size {:?} but manifest says {}x{}", rgba.dimensions(), entry.width, entry.height),
        ));
    }
    let (w, h) = rgba.dimensions();
    let mut pixels = RgbImage::new(w, h);
    let mut alpha = GrayImage::new(w, h);
    for (x, y, p) in rgba.enumerate_pixels() {
        pixels.put_pixel(x, y, Rgb([p.0[0], p.0[1], p.0[2]]));
        alpha.put_pixel(x, y, Luma([p.0[3]]));
    }
    let object = SegmentedObject {
        id: entry.id.clone(),
        source_id: entry.source_id.clone(),
        instance_index: entry.instance_index,
        class_name: entry.class_name.clone(),
        area_px: entry.area_px,
        pixels,
        alpha,
    };
    object.check_invariants().map_err(|m| Error::integrity(&file, m))?;
    Ok(object)
}

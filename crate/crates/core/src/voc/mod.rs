//! Pascal-VOC ingestion: annotation parsing, instance cutout extraction,
//! the occluder filter rules and the on-disk occluder library.

mod annotation;
mod library;
pub mod xml;

use std::collections::BTreeSet;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

pub use annotation::{parse_annotation, parse_annotation_document, Annotation, AnnotationObject, BndBox};
pub use library::{build_library, load_library, IngestReport, ManifestEntry, OccluderLibrary};

use crate::error::{Error, Result};

/// Palette index VOC uses for object boundaries and "don't care" regions.
pub const VOID_INDEX: u8 = 255;

/// A tight-cropped object cutout with a binary alpha mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedObject {
    pub id: String,
    pub source_id: String,
    pub instance_index: u32,
    pub class_name: String,
    pub area_px: u64,
    pub pixels: RgbImage,
    /// 255 where the object is present, 0 elsewhere.
    pub alpha: GrayImage,
}

impl SegmentedObject {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn make_id(source_id: &str, instance_index: u32) -> String {
        format!("{source_id}_{instance_index:03}")
    }

    /// Checks dimensions, binary alpha, the area count and tightness of the crop.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.pixels.dimensions() != self.alpha.dimensions() {
            return Err(format!(
                "pixel raster {:?} and alpha {:?} differ in size",
                self.pixels.dimensions(),
                self.alpha.dimensions()
            ));
        }
        let (w, h) = self.alpha.dimensions();
        let mut count = 0u64;
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for (x, y, a) in self.alpha.enumerate_pixels() {
            match a.0[0] {
                0 => {}
                255 => {
                    count += 1;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
                v => return Err(format!("non-binary alpha value {v}")),
            }
        }
        if count != self.area_px {
            return Err(format!("area {} but mask has {count} on-pixels", self.area_px));
        }
        if count == 0 {
            return Err("empty mask".into());
        }
        if (x0, y0, x1 + 1, y1 + 1) != (0, 0, w, h) {
            return Err("mask does not fill its raster (crop is not tight)".into());
        }
        Ok(())
    }
}

/// An 8-bit palette-index raster (VOC `SegmentationObject` PNGs).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl IndexedMask {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} mask bytes for {width}x{height}",
                data.len()
            )));
        }
        Ok(IndexedMask { width, height, data })
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Reads raw palette indices from an indexed (or 8-bit grayscale) PNG
    /// without expanding the palette.
    pub fn read_png(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
        decoder.set_transformations(png::Transformations::IDENTITY);
        let mut reader = decoder.read_info().map_err(|e| Error::image(path, e))?;
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::image(path, e))?;
        if info.bit_depth != png::BitDepth::Eight
            || !matches!(info.color_type, png::ColorType::Indexed | png::ColorType::Grayscale)
        {
            return Err(Error::image(
                path,
                format!("expected 8-bit indexed mask, found {:?} {:?}", info.color_type, info.bit_depth),
            ));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let mut data = Vec::with_capacity(w * h);
        for row in buf.chunks(info.line_size).take(h) {
            data.extend_from_slice(&row[..w]);
        }
        IndexedMask::new(info.width, info.height, data)
    }
}

/// An annotation that could not be turned into a cutout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedObject {
    pub source_id: String,
    pub instance_index: u32,
    pub reason: String,
}

/// Cutouts together with the annotations they came from (aligned by position).
#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub objects: Vec<SegmentedObject>,
    pub annotations: Vec<AnnotationObject>,
    pub skipped: Vec<SkippedObject>,
}

pub fn extract_cutouts(
    image: &RgbImage,
    instance_mask: &IndexedMask,
    annotations: &[AnnotationObject],
    source_id: &str,
) -> Result<Extraction> {
    if image.dimensions() != (instance_mask.width, instance_mask.height) {
        return Err(Error::DimensionMismatch(format!(
            "{source_id}: image {:?} vs mask {}x{}",
            image.dimensions(),
            instance_mask.width,
            instance_mask.height
        )));
    }

    // One pass collects each palette index's pixel count and extent.
    let mut count = [0u64; 256];
    let mut extent = [(u32::MAX, u32::MAX, 0u32, 0u32); 256];
    for y in 0..instance_mask.height {
        for x in 0..instance_mask.width {
            let i = instance_mask.get(x, y) as usize;
            count[i] += 1;
            let e = &mut extent[i];
            *e = (e.0.min(x), e.1.min(y), e.2.max(x), e.3.max(y));
        }
    }

    let mut out = Extraction::default();
    for ann in annotations {
        let index = ann.instance_index;
        if index == 0 || index >= VOID_INDEX as u32 || count[index as usize] == 0 {
            log::warn!("{source_id}: instance {index} ({}) absent from mask, skipped", ann.class_name);
            out.skipped.push(SkippedObject {
                source_id: source_id.to_string(),
                instance_index: index,
                reason: "instance index absent from mask".into(),
            });
            continue;
        }
        let (x0, y0, x1, y1) = extent[index as usize];
        let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
        let mut pixels = RgbImage::new(w, h);
        let mut alpha = GrayImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                if instance_mask.get(x0 + x, y0 + y) as u32 == index {
                    pixels.put_pixel(x, y, *image.get_pixel(x0 + x, y0 + y));
                    alpha.put_pixel(x, y, Luma([255]));
                } else {
                    pixels.put_pixel(x, y, Rgb([0, 0, 0]));
                }
            }
        }
        out.objects.push(SegmentedObject {
            id: SegmentedObject::make_id(source_id, index),
            source_id: source_id.to_string(),
            instance_index: index,
            class_name: ann.class_name.clone(),
            area_px: count[index as usize],
            pixels,
            alpha,
        });
        out.annotations.push(ann.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterRules {
    pub exclude_classes: BTreeSet<String>,
    pub exclude_difficult: bool,
    pub exclude_truncated: bool,
    pub min_area_px: u64,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            exclude_classes: BTreeSet::from(["person".to_string()]),
            exclude_difficult: true,
            exclude_truncated: true,
            min_area_px: 500,
        }
    }
}

impl FilterRules {
    pub fn keeps(&self, object: &SegmentedObject, annot: &AnnotationObject) -> bool {
        !self.exclude_classes.contains(&annot.class_name)
            && !(self.exclude_difficult && annot.difficult)
            && !(self.exclude_truncated && annot.truncated)
            && object.area_px >= self.min_area_px
    }
}

pub fn filter_objects(
    objects: &[SegmentedObject],
    annots: &[AnnotationObject],
    rules: &FilterRules,
) -> Result<Vec<SegmentedObject>> {
    if objects.len() != annots.len() {
        return Err(Error::LengthMismatch {
            left: objects.len(),
            right: annots.len(),
        });
    }
    Ok(objects
        .iter()
        .zip(annots)
        .filter(|(o, a)| rules.keeps(o, a))
        .map(|(o, _)| o.clone())
        .collect())
}

/// Object counts after applying each rule in turn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterBreakdown {
    pub total: usize,
    pub after_class: usize,
    pub after_difficult: usize,
    pub after_truncated: usize,
    pub after_area: usize,
}

impl FilterBreakdown {
    pub fn tally(objects: &[SegmentedObject], annots: &[AnnotationObject], rules: &FilterRules) -> Self {
        let mut b = FilterBreakdown::default();
        for (o, a) in objects.iter().zip(annots) {
            b.total += 1;
            if rules.exclude_classes.contains(&a.class_name) {
                continue;
            }
            b.after_class += 1;
            if rules.exclude_difficult && a.difficult {
                continue;
            }
            b.after_difficult += 1;
            if rules.exclude_truncated && a.truncated {
                continue;
            }
            b.after_truncated += 1;
            if o.area_px < rules.min_area_px {
                continue;
            }
            b.after_area += 1;
        }
        b
    }

    pub fn merge(&mut self, other: &FilterBreakdown) {
        self.total += other.total;
        self.after_class += other.after_class;
        self.after_difficult += other.after_difficult;
        self.after_truncated += other.after_truncated;
        self.after_area += other.after_area;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn annot(class: &str, difficult: bool, truncated: bool, index: u32) -> AnnotationObject {
        AnnotationObject {
            class_name: class.into(),
            difficult,
            truncated,
            bbox: BndBox {
                xmin: 1,
                ymin: 1,
                xmax: 2,
                ymax: 2,
            },
            instance_index: index,
        }
    }

    fn object_with_area(area: u64) -> SegmentedObject {
        SegmentedObject {
            id: "x".into(),
            source_id: "x".into(),
            instance_index: 1,
            class_name: "dog".into(),
            area_px: area,
            pixels: RgbImage::new(1, 1),
            alpha: GrayImage::new(1, 1),
        }
    }

    fn gradient_image(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([x as u8 * 10, y as u8 * 10, 7]))
    }

    #[test]
    fn block_cutout() {
        let image = gradient_image(10, 10);
        let mut data = vec![0u8; 100];
        for y in 4..7 {
            for x in 2..5 {
                data[y * 10 + x] = 1;
            }
        }
        let mask = IndexedMask::new(10, 10, data).unwrap();
        let ex = extract_cutouts(&image, &mask, &[annot("dog", false, false, 1)], "img").unwrap();
        assert_eq!(ex.objects.len(), 1);
        let o = &ex.objects[0];
        assert_eq!(o.area_px, 9);
        assert_eq!(o.pixels.dimensions(), (3, 3));
        assert_eq!(*o.pixels.get_pixel(0, 0), *image.get_pixel(2, 4));
        assert_eq!(o.id, "img_001");
        o.check_invariants().unwrap();
    }

    #[test]
    fn disconnected_blobs_share_one_cutout() {
        let image = gradient_image(10, 10);
        let mut data = vec![0u8; 100];
        // blob A: 2x2 at (1,1); blob B: 1x3 at x=8, y=5..8; void pixels around them
        let blob_a = [(1, 1), (2, 1), (1, 2), (2, 2)];
        let blob_b = [(8, 5), (8, 6), (8, 7)];
        for &(x, y) in blob_a.iter().chain(&blob_b) {
            data[y * 10 + x] = 2;
        }
        data[3 * 10 + 3] = VOID_INDEX;
        data[0] = VOID_INDEX;
        let expected_area = (0..100).filter(|&i| data[i] == 2).count() as u64;
        let mask = IndexedMask::new(10, 10, data).unwrap();
        let ex = extract_cutouts(&image, &mask, &[annot("cat", false, false, 2)], "img").unwrap();
        let o = &ex.objects[0];
        assert_eq!(expected_area, 7);
        assert_eq!(o.area_px, expected_area);
        assert_eq!(o.pixels.dimensions(), (8, 7));
        o.check_invariants().unwrap();
    }

    #[test]
    fn absent_instance_is_skipped() {
        let image = gradient_image(4, 4);
        let mut data = vec![0u8; 16];
        data[5] = 1;
        let mask = IndexedMask::new(4, 4, data).unwrap();
        let ex = extract_cutouts(
            &image,
            &mask,
            &[annot("dog", false, false, 1), annot("cat", false, false, 2)],
            "img",
        )
        .unwrap();
        assert_eq!(ex.objects.len(), 1);
        assert_eq!(ex.annotations.len(), 1);
        assert_eq!(ex.skipped.len(), 1);
        assert_eq!(ex.skipped[0].instance_index, 2);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let mask = IndexedMask::new(3, 3, vec![0; 9]).unwrap();
        assert!(matches!(
            extract_cutouts(&gradient_image(4, 3), &mask, &[], "img"),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn area_threshold_boundary() {
        let rules = FilterRules::default();
        let a = annot("dog", false, false, 1);
        let objs = [object_with_area(499), object_with_area(500)];
        let kept = filter_objects(&objs, &[a.clone(), a], &rules).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].area_px, 500);
    }

    #[test]
    fn persons_difficult_truncated_are_dropped() {
        let rules = FilterRules::default();
        let objs = vec![object_with_area(10_000); 4];
        let annots = [
            annot("person", false, false, 1),
            annot("dog", true, false, 2),
            annot("dog", false, true, 3),
            annot("dog", false, false, 4),
        ];
        let kept = filter_objects(&objs, &annots, &rules).unwrap();
        assert_eq!(kept.len(), 1);
        let b = FilterBreakdown::tally(&objs, &annots, &rules);
        assert_eq!(
            b,
            FilterBreakdown {
                total: 4,
                after_class: 3,
                after_difficult: 2,
                after_truncated: 1,
                after_area: 1
            }
        );
    }

    #[test]
    fn filter_length_mismatch() {
        let err = filter_objects(&[object_with_area(1)], &[], &FilterRules::default());
        assert!(matches!(err, Err(Error::LengthMismatch { .. })));
    }

    fn arb_case() -> impl Strategy<Value = (Vec<SegmentedObject>, Vec<AnnotationObject>)> {
        let classes = prop::sample::select(vec!["dog", "cat", "person", "bus"]);
        prop::collection::vec((classes, any::<bool>(), any::<bool>(), 0u64..2000), 0..40).prop_map(|v| {
            let mut objs = Vec::new();
            let mut annots = Vec::new();
            for (i, (c, d, t, area)) in v.into_iter().enumerate() {
                let mut o = object_with_area(area);
                o.class_name = c.to_string();
                objs.push(o);
                annots.push(annot(c, d, t, i as u32 + 1));
            }
            (objs, annots)
        })
    }

    proptest! {
        #[test]
        fn filter_is_monotone_and_idempotent((objs, annots) in arb_case(), lo in 0u64..1500, extra in 0u64..500) {
            let mut rules = FilterRules { min_area_px: lo, ..FilterRules::default() };
            let base = filter_objects(&objs, &annots, &rules).unwrap();

            let stricter = FilterRules { min_area_px: lo + extra, ..rules.clone() };
            prop_assert!(filter_objects(&objs, &annots, &stricter).unwrap().len() <= base.len());

            // every retained object satisfies every predicate
            for o in &base {
                prop_assert!(o.area_px >= lo);
                prop_assert!(o.class_name != "person");
            }

            // applying the rules to their own output changes nothing
            let kept_annots: Vec<_> = objs.iter().zip(&annots).filter(|(o, a)| rules.keeps(o, a)).map(|(_, a)| a.clone()).collect();
            prop_assert_eq!(&filter_objects(&base, &kept_annots, &rules).unwrap(), &base);

            rules.exclude_classes.insert("cat".into());
            prop_assert!(filter_objects(&objs, &annots, &rules).unwrap().len() <= base.len());
        }
    }
}

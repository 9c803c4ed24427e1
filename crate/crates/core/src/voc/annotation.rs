use serde::{Deserialize, Serialize};

use super::xml::{self, Element};
use crate::error::{Error, Result};

/// Pixel rectangle as written in VOC annotations (1-based, inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BndBox {
    pub xmin: i64,
    pub ymin: i64,
    pub xmax: i64,
    pub ymax: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationObject {
    pub class_name: String,
    pub difficult: bool,
    pub truncated: bool,
    pub bbox: BndBox,
    /// 1-based position of the object in the document, which is also its
    /// palette index in the instance mask.
    pub instance_index: u32,
}

/// The parts of a VOC annotation document this crate uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub filename: Option<String>,
    pub size: Option<(u32, u32)>,
    pub segmented: bool,
    pub objects: Vec<AnnotationObject>,
}

pub fn parse_annotation(xml_bytes: &[u8]) -> Result<Vec<AnnotationObject>> {
    parse_annotation_document(xml_bytes).map(|a| a.objects)
}

pub fn parse_annotation_document(xml_bytes: &[u8]) -> Result<Annotation> {
    let root = xml::parse(xml_bytes)?;
    if root.name != "annotation" {
        return Err(annotation_err(&root.name, "root element must be <annotation>"));
    }

    let size = match root.child("size") {
        Some(size) => {
            let width = required_int(size, "width")?;
            let height = required_int(size, "height")?;
            if width <= 0 || height <= 0 {
                return Err(annotation_err("size", "non-positive image size"));
            }
            Some((width as u32, height as u32))
        }
        None => None,
    };
    let segmented = root.child_text("segmented").is_some_and(|t| t != "0");

    let objects = root
        .children_named("object")
        .enumerate()
        .map(|(i, obj)| parse_object(obj, i as u32 + 1, size))
        .collect::<Result<Vec<_>>>()?;

    Ok(Annotation {
        filename: root.child_text("filename").map(str::to_string),
        size,
        segmented,
        objects,
    })
}

fn parse_object(obj: &Element, instance_index: u32, size: Option<(u32, u32)>) -> Result<AnnotationObject> {
    let class_name = obj
        .child_text("name")
        .filter(|n| !n.is_empty())
        .ok_or_else(|| annotation_err("name", "missing object class name"))?
        .to_string();
    let bndbox = obj
        .child("bndbox")
        .ok_or_else(|| annotation_err("bndbox", "missing bounding box"))?;
    let bbox = BndBox {
        xmin: required_int(bndbox, "xmin")?,
        ymin: required_int(bndbox, "ymin")?,
        xmax: required_int(bndbox, "xmax")?,
        ymax: required_int(bndbox, "ymax")?,
    };
    if bbox.xmin >= bbox.xmax {
        return Err(annotation_err("xmax", format!("xmin {} >= xmax {}", bbox.xmin, bbox.xmax)));
    }
    if bbox.ymin >= bbox.ymax {
        return Err(annotation_err("ymax", format!("ymin {} >= ymax {}", bbox.ymin, bbox.ymax)));
    }
    if let Some((w, h)) = size {
        // VOC boxes are 1-based; allow 0 for the few annotations that use it.
        if bbox.xmin < 0 || bbox.ymin < 0 || bbox.xmax > w as i64 || bbox.ymax > h as i64 {
            return Err(annotation_err(
                "bndbox",
                format!("box {bbox:?} exceeds image size {w}x{h}"),
            ));
        }
    }
    Ok(AnnotationObject {
        class_name,
        difficult: flag(obj, "difficult")?,
        truncated: flag(obj, "truncated")?,
        bbox,
        instance_index,
    })
}

/// Absent flags read as false, "1" as true and "0" as false.
fn flag(obj: &Element, name: &str) -> Result<bool> {
    match obj.child_text(name) {
        None | Some("") | Some("0") => Ok(false),
        Some("1") => Ok(true),
        Some(other) => Err(annotation_err(name, format!("expected 0 or 1, found {other:?}"))),
    }
}

fn required_int(parent: &Element, name: &str) -> Result<i64> {
    let text = parent
        .child_text(name)
        .ok_or_else(|| annotation_err(name, format!("missing in <{}>", parent.name)))?;
    // A handful of VOC files store coordinates as "273.0".
    if let Ok(v) = text.parse::<i64>() {
        return Ok(v);
    }
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 => Ok(v as i64),
        _ => Err(annotation_err(name, format!("not an integer: {text:?}"))),
    }
}

fn annotation_err(element: &str, message: impl Into<String>) -> Error {
    Error::Annotation {
        element: element.to_string(),
        message: message.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(objects: &str) -> String {
        format!(
            "<annotation><filename>2007_000032.jpg</filename>\
             <size><width>500</width><height>281</height><depth>3</depth></size>\
             <segmented>1</segmented>{objects}</annotation>"
        )
    }

    fn object(name: &str, difficult: u8, truncated: u8, b: [i64; 4]) -> String {
        format!(
            "<object><name>{name}</name><pose>Frontal</pose>\
             <truncated>{truncated}</truncated><difficult>{difficult}</difficult>\
             <bndbox><xmin>{}</xmin><ymin>{}</ymin><xmax>{}</xmax><ymax>{}</ymax></bndbox></object>",
            b[0], b[1], b[2], b[3]
        )
    }

    #[test]
    fn maps_flags() {
        let xml = doc(&object("aeroplane", 0, 1, [104, 78, 375, 183]));
        let objs = parse_annotation(xml.as_bytes()).unwrap();
        assert_eq!(objs.len(), 1);
        assert_eq!(objs[0].class_name, "aeroplane");
        assert!(objs[0].truncated);
        assert!(!objs[0].difficult);
        assert_eq!(objs[0].instance_index, 1);
        assert_eq!(
            objs[0].bbox,
            BndBox {
                xmin: 104,
                ymin: 78,
                xmax: 375,
                ymax: 183
            }
        );
    }

    #[test]
    fn document_order_gives_instance_index() {
        let xml = doc(&[
            object("dog", 0, 0, [1, 1, 10, 10]),
            object("person", 1, 0, [2, 2, 20, 20]),
        ]
        .concat());
        let ann = parse_annotation_document(xml.as_bytes()).unwrap();
        assert!(ann.segmented);
        assert_eq!(ann.size, Some((500, 281)));
        assert_eq!(ann.filename.as_deref(), Some("2007_000032.jpg"));
        let idx: Vec<_> = ann.objects.iter().map(|o| (o.class_name.as_str(), o.instance_index, o.difficult)).collect();
        assert_eq!(idx, [("dog", 1, false), ("person", 2, true)]);
    }

    #[test]
    fn no_objects_is_empty() {
        assert!(parse_annotation(doc("").as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn inverted_box_names_element() {
        let xml = doc(&object("dog", 0, 0, [50, 1, 50, 10]));
        match parse_annotation(xml.as_bytes()) {
            Err(Error::Annotation { element, .. }) => assert_eq!(element, "xmax"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_integer_coordinate_is_error() {
        let xml = doc(&object("dog", 0, 0, [1, 1, 10, 10]).replace("<xmin>1</xmin>", "<xmin>1.5</xmin>"));
        match parse_annotation(xml.as_bytes()) {
            Err(Error::Annotation { element, .. }) => assert_eq!(element, "xmin"),
            other => panic!("unexpected {other:?}"),
        }
        let xml = doc(&object("dog", 0, 0, [1, 1, 10, 10]).replace("<ymax>10</ymax>", "<ymax>ten</ymax>"));
        assert!(matches!(parse_annotation(xml.as_bytes()), Err(Error::Annotation { .. })));
    }

    #[test]
    fn missing_fields_and_bad_xml() {
        let xml = doc("<object><name>dog</name></object>");
        match parse_annotation(xml.as_bytes()) {
            Err(Error::Annotation { element, .. }) => assert_eq!(element, "bndbox"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_annotation(b"<annotation><object>"), Err(Error::Xml { .. })));
        assert!(parse_annotation(b"<foo/>").is_err());
    }

    #[test]
    fn box_outside_image_is_error() {
        let xml = doc(&object("dog", 0, 0, [1, 1, 501, 10]));
        assert!(parse_annotation(xml.as_bytes()).is_err());
    }
}

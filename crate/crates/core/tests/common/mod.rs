//! Hand-built Pascal-VOC mini dataset and CLI helpers shared by the
//! integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};

pub struct FixtureObject {
    pub class: &'static str,
    pub difficult: bool,
    pub truncated: bool,
    /// Rectangle written to the mask as `(x0, y0, w, h)`; `None` leaves the
    /// instance out of the mask entirely.
    pub rect: Option<(u32, u32, u32, u32)>,
    /// Mask pixels inside `rect` reset to background.
    pub holes: &'static [(u32, u32)],
}

pub struct FixtureImage {
    pub id: &'static str,
    pub size: (u32, u32),
    pub objects: Vec<FixtureObject>,
    /// Rectangles painted with the void index 255.
    pub void: Vec<(u32, u32, u32, u32)>,
}

const fn obj(class: &'static str, rect: (u32, u32, u32, u32)) -> FixtureObject {
    FixtureObject {
        class,
        difficult: false,
        truncated: false,
        rect: Some(rect),
        holes: &[],
    }
}

/// Expected counts for [`write_voc_fixture`], enumerated by hand:
///
/// | image | object    | area | fate                 |
/// |-------|-----------|------|----------------------|
/// | 01    | aeroplane | 600  | kept                 |
/// | 01    | person    | 600  | class rule           |
/// | 01    | dog       | 625  | difficult rule       |
/// | 02    | cat       | 600  | truncated rule       |
/// | 02    | bottle    | 100  | area rule            |
/// | 02    | car       | 600  | kept (void ring)     |
/// | 02    | chair     | -    | absent from mask     |
/// | 03    | boat      | 500  | kept (area boundary) |
/// | 03    | bird      | 499  | area rule            |
///
/// Image 04 exists on disk but is not in `trainval.txt`; `train.txt` lists 01 and 03.
pub struct Expected {
    pub images: usize,
    pub total: usize,
    pub absent: usize,
    pub after_class: usize,
    pub after_difficult: usize,
    pub after_truncated: usize,
    pub after_area: usize,
    pub retained: usize,
    pub retained_train: usize,
    pub retained_ids: [&'static str; 3],
}

pub const EXPECTED: Expected = Expected {
    images: 3,
    total: 8,
    absent: 1,
    after_class: 7,
    after_difficult: 6,
    after_truncated: 5,
    after_area: 3,
    retained: 3,
    retained_train: 2,
    retained_ids: ["2008_000001_001", "2008_000002_003", "2008_000003_001"],
};

pub fn fixture_images() -> Vec<FixtureImage> {
    vec![
        FixtureImage {
            id: "2008_000001",
            size: (64, 48),
            objects: vec![
                obj("aeroplane", (0, 0, 20, 30)),
                obj("person", (22, 0, 30, 20)),
                FixtureObject {
                    difficult: true,
                    ..obj("dog", (22, 22, 25, 25))
                },
            ],
            void: vec![],
        },
        FixtureImage {
            id: "2008_000002",
            size: (80, 60),
            objects: vec![
                FixtureObject {
                    truncated: true,
                    ..obj("cat", (0, 0, 30, 20))
                },
                obj("bottle", (40, 0, 10, 10)),
                obj("car", (1, 25, 25, 24)),
                FixtureObject {
                    rect: None,
                    ..obj("chair", (60, 40, 10, 10))
                },
            ],
            void: vec![(0, 24, 27, 1), (0, 49, 27, 1), (0, 24, 1, 26), (26, 24, 1, 26)],
        },
        FixtureImage {
            id: "2008_000003",
            size: (50, 50),
            objects: vec![
                obj("boat", (0, 0, 20, 25)),
                FixtureObject {
                    holes: &[(25, 0)],
                    ..obj("bird", (25, 0, 20, 25))
                },
            ],
            void: vec![],
        },
        FixtureImage {
            id: "2008_000004",
            size: (40, 40),
            objects: vec![obj("sheep", (0, 0, 30, 30))],
            void: vec![],
        },
    ]
}

fn annotation_xml(img: &FixtureImage) -> String {
    let mut s = format!(
        "<annotation>\n\t<folder>VOC2012</folder>\n\t<filename>{}.jpg</filename>\n\t<size>\n\t\t<width>{}</width>\n\t\t<height>{}</height>\n\t\t<depth>3</depth>\n\t</size>\n\t<segmented>1</segmented>\n",
        img.id, img.size.0, img.size.1
    );
    for o in &img.objects {
        let (x, y, w, h) = o.rect.unwrap_or((0, 0, 4, 4));
        s += &format!(
            "\t<object>\n\t\t<name>{}</name>\n\t\t<pose>Unspecified</pose>\n\t\t<truncated>{}</truncated>\n\t\t<difficult>{}</difficult>\n\t\t<bndbox>\n\t\t\t<xmin>{}</xmin>\n\t\t\t<ymin>{}</ymin>\n\t\t\t<xmax>{}</xmax>\n\t\t\t<ymax>{}</ymax>\n\t\t</bndbox>\n\t</object>\n",
            o.class,
            o.truncated as u8,
            o.difficult as u8,
            x + 1,
            y + 1,
            x + w,
            y + h
        );
    }
    s + "</annotation>\n"
}

fn mask_data(img: &FixtureImage) -> Vec<u8> {
    let (w, h) = img.size;
    let mut data = vec![0u8; (w * h) as usize];
    for &(x0, y0, rw, rh) in &img.void {
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                data[(y * w + x) as usize] = 255;
            }
        }
    }
    for (i, o) in img.objects.iter().enumerate() {
        if let Some((x0, y0, rw, rh)) = o.rect {
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    if !o.holes.contains(&(x, y)) {
                        data[(y * w + x) as usize] = i as u8 + 1;
                    }
                }
            }
        }
    }
    data
}

fn write_indexed_png(path: &Path, width: u32, height: u32, data: &[u8]) {
    let file = fs::File::create(path).unwrap();
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    let mut palette = vec![0u8; 256 * 3];
    for i in 0..256usize {
        palette[i * 3] = (i * 37 % 256) as u8;
        palette[i * 3 + 1] = (i * 91 % 256) as u8;
        palette[i * 3 + 2] = (i * 53 % 256) as u8;
    }
    enc.set_palette(palette);
    let mut writer = enc.write_header().unwrap();
    writer.write_image_data(data).unwrap();
}

/// Writes the fixture under `root` in VOC2012 layout.
pub fn write_voc_fixture(root: &Path) {
    for d in ["Annotations", "JPEGImages", "SegmentationObject", "ImageSets/Segmentation"] {
        fs::create_dir_all(root.join(d)).unwrap();
    }
    for img in fixture_images() {
        fs::write(root.join("Annotations").join(format!("{}.xml", img.id)), annotation_xml(&img)).unwrap();
        let (w, h) = img.size;
        let rgb = RgbImage::from_fn(w, h, |x, y| Rgb([(x * 4) as u8, (y * 4) as u8, 128]));
        rgb.save(root.join("JPEGImages").join(format!("{}.jpg", img.id))).unwrap();
        write_indexed_png(&root.join("SegmentationObject").join(format!("{}.png", img.id)), w, h, &mask_data(&img));
    }
    let seg = root.join("ImageSets/Segmentation");
    fs::write(seg.join("trainval.txt"), "2008_000001\n2008_000002\n2008_000003\n").unwrap();
    fs::write(seg.join("train.txt"), "2008_000001\n2008_000003\n").unwrap();
    fs::write(seg.join("val.txt"), "2008_000002\n").unwrap();
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_occlupose"))
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("OCCLUPOSE_CONFIG")
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn occlupose")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Builds the fixture library into `dir/library` and returns its path.
pub fn fixture_library(dir: &Path) -> PathBuf {
    let voc = dir.join("voc");
    write_voc_fixture(&voc);
    let out = dir.join("library");
    let o = run(&["ingest-voc", "--voc-root", voc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

/// Sorted `(relative path, bytes)` of every file below `dir`.
pub fn snapshot_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

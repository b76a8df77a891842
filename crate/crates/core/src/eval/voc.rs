//! Pascal VOC annotations, the condition manifest, and corpus directories.

use super::EvalError;
use crate::geometry::BBox;
use crate::imaging::{read_image, write_image, Raster};
use crate::synth::SyntheticImage;
use crate::wem::Condition;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Maps annotation class names to detector class ids. The first name
/// registered for an id is its canonical name.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMap {
    names: Vec<(String, u32)>,
}

impl Default for ClassMap {
    /// COCO ids for the road-scene classes, with common VOC spellings.
    fn default() -> Self {
        let mut m = Self::empty();
        for (name, id) in [
            ("person", 0),
            ("pedestrian", 0),
            ("bicycle", 1),
            ("bike", 1),
            ("car", 2),
            ("vehicle", 2),
            ("motorcycle", 3),
            ("motorbike", 3),
            ("bus", 5),
            ("truck", 7),
        ] {
            m.insert(name, id);
        }
        m
    }
}

impl ClassMap {
    pub fn empty() -> Self {
        Self { names: Vec::new() }
    }

    pub fn insert(&mut self, name: &str, id: u32) {
        let key = name.trim().to_ascii_lowercase();
        match self.names.iter_mut().find(|(n, _)| *n == key) {
            Some(slot) => slot.1 = id,
            None => self.names.push((key, id)),
        }
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        let key = name.trim().to_ascii_lowercase();
        self.names.iter().find(|(n, _)| *n == key).map(|(_, id)| *id)
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.iter().find(|(_, i)| *i == id).map(|(n, _)| n.as_str())
    }

    /// Reads `name id` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut m = Self::empty();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(name), Some(id), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(EvalError::Format(format!("class map line {}: expected `name id`", i + 1)));
            };
            let id = id
                .parse()
                .map_err(|_| EvalError::Format(format!("class map line {}: bad id {id:?}", i + 1)))?;
            m.insert(name, id);
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VocAnnotation {
    pub filename: Option<String>,
    pub size: Option<(usize, usize)>,
    pub boxes: Vec<(u32, BBox)>,
    /// Objects that were dropped: unknown class names or degenerate boxes.
    pub skipped: Vec<String>,
}

fn child<'a>(node: roxmltree::Node<'a, 'a>, tag: &str) -> Option<roxmltree::Node<'a, 'a>> {
    node.children().find(|c| c.has_tag_name(tag))
}

fn child_text<'a>(node: roxmltree::Node<'a, 'a>, tag: &str) -> Option<&'a str> {
    child(node, tag).and_then(|c| c.text()).map(str::trim)
}

fn coord(bndbox: roxmltree::Node, tag: &str) -> Result<f64, String> {
    child_text(bndbox, tag)
        .ok_or_else(|| format!("missing {tag}"))?
        .parse::<f64>()
        .map_err(|_| format!("bad {tag}"))
}

pub fn parse_voc(xml: &str, classes: &ClassMap) -> Result<VocAnnotation, EvalError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| EvalError::Format(format!("xml: {e}")))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(EvalError::Format(format!(
            "root element is <{}>, expected <annotation>",
            root.tag_name().name()
        )));
    }
    let size = child(root, "size").and_then(|s| {
        let w = child_text(s, "width")?.parse().ok()?;
        let h = child_text(s, "height")?.parse().ok()?;
        Some((w, h))
    });
    let mut boxes = Vec::new();
    let mut skipped = Vec::new();
    for (i, obj) in root.children().filter(|c| c.has_tag_name("object")).enumerate() {
        let name = child_text(obj, "name").unwrap_or("");
        let Some(class_id) = classes.id(name) else {
            skipped.push(format!("object {i}: unknown class {name:?}"));
            continue;
        };
        let Some(bb) = child(obj, "bndbox") else {
            skipped.push(format!("object {i}: no bndbox"));
            continue;
        };
        let parsed = (|| {
            let (x1, y1) = (coord(bb, "xmin")?, coord(bb, "ymin")?);
            let (x2, y2) = (coord(bb, "xmax")?, coord(bb, "ymax")?);
            BBox::new(x1, y1, x2, y2).map_err(|e| e.to_string())
        })();
        match parsed {
            Ok(b) => boxes.push((class_id, b)),
            Err(e) => skipped.push(format!("object {i}: {e}")),
        }
    }
    Ok(VocAnnotation {
        filename: child_text(root, "filename").map(str::to_string),
        size,
        boxes,
        skipped,
    })
}

fn fmt_coord(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

pub fn write_voc(
    filename: &str,
    width: usize,
    height: usize,
    boxes: &[(u32, BBox)],
    classes: &ClassMap,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "<annotation>");
    let _ = writeln!(s, "  <filename>{filename}</filename>");
    let _ = writeln!(
        s,
        "  <size><width>{width}</width><height>{height}</height><depth>3</depth></size>"
    );
    for (class_id, b) in boxes {
        let name = classes
            .name(*class_id)
            .map(str::to_string)
            .unwrap_or_else(|| format!("class{class_id}"));
        let _ = writeln!(s, "  <object>");
        let _ = writeln!(s, "    <name>{name}</name>");
        let _ = writeln!(
            s,
            "    <bndbox><xmin>{}</xmin><ymin>{}</ymin><xmax>{}</xmax><ymax>{}</ymax></bndbox>",
            fmt_coord(b.x1),
            fmt_coord(b.y1),
            fmt_coord(b.x2),
            fmt_coord(b.y2)
        );
        let _ = writeln!(s, "  </object>");
    }
    let _ = writeln!(s, "</annotation>");
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub image: String,
    pub condition: Condition,
    pub severity: Option<f64>,
}

/// Parses `image condition [severity]` lines; `#` starts a comment.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| EvalError::Format(format!("manifest line {}: {msg}", i + 1));
        let parts: Vec<&str> = line.split_whitespace().collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(bad("expected `image condition [severity]`".into()));
        }
        let condition = parts[1].parse::<Condition>().map_err(|e| bad(e.to_string()))?;
        let severity = parts
            .get(2)
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad severity {s:?}"))))
            .transpose()?;
        out.push(ManifestEntry {
            image: parts[0].to_string(),
            condition,
            severity,
        });
    }
    Ok(out)
}

pub fn render_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let _ = match e.severity {
            Some(sev) => writeln!(s, "{} {} {sev}", e.image, e.condition),
            None => writeln!(s, "{} {}", e.image, e.condition),
        };
    }
    s
}

/// One annotated image of an evaluation corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct GtImage {
    pub image: String,
    pub condition: Option<Condition>,
    pub severity: Option<f64>,
    pub boxes: Vec<(u32, BBox)>,
}

#[derive(Clone, Debug)]
pub struct CorpusImage {
    pub gt: GtImage,
    pub raster: Arc<Raster>,
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub images: Vec<CorpusImage>,
    /// Images or objects that were skipped, with the reason.
    pub warnings: Vec<String>,
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm" | "jpg" | "jpeg")
    )
}

fn annotation_path(dir: &Path, image: &str) -> Option<PathBuf> {
    let stem = Path::new(image).file_stem()?.to_str()?;
    [dir.join(format!("{stem}.xml")), dir.join("annotations").join(format!("{stem}.xml"))]
        .into_iter()
        .find(|p| p.is_file())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads a corpus directory: images, a VOC XML beside each image (or under
/// `annotations/`), and an optional `manifest.txt`. With a manifest, only
/// listed images are loaded, in manifest order; otherwise every image file
/// in name order. Images whose annotation is missing or unparseable are
/// skipped with a warning.
pub fn load_corpus(dir: impl AsRef<Path>, classes: &ClassMap) -> Result<Corpus, EvalError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_NAME);
    let entries: Vec<(String, Option<Condition>, Option<f64>)> = if manifest_path.is_file() {
        let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        parse_manifest(&text)?
            .into_iter()
            .map(|e| (e.image, Some(e.condition), e.severity))
            .collect()
    } else {
        let mut names: Vec<String> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_string))
            .collect();
        names.sort();
        names.into_iter().map(|n| (n, None, None)).collect()
    };

    let mut corpus = Corpus::default();
    for (image, condition, severity) in entries {
        let Some(xml_path) = annotation_path(dir, &image) else {
            corpus.warnings.push(format!("{image}: no annotation"));
            continue;
        };
        let xml = match fs::read_to_string(&xml_path) {
            Ok(x) => x,
            Err(e) => {
                corpus.warnings.push(format!("{image}: {e}"));
                continue;
            }
        };
        let ann = match parse_voc(&xml, classes) {
            Ok(a) => a,
            Err(e) => {
                corpus.warnings.push(format!("{image}: {e}"));
                continue;
            }
        };
        corpus
            .warnings
            .extend(ann.skipped.iter().map(|s| format!("{image}: {s}")));
        let raster = match read_image(dir.join(&image)) {
            Ok(r) => r,
            Err(e) => {
                corpus.warnings.push(format!("{image}: {e}"));
                continue;
            }
        };
        corpus.images.push(CorpusImage {
            gt: GtImage {
                image,
                condition,
                severity,
                boxes: ann.boxes,
            },
            raster: Arc::new(raster),
        });
    }
    Ok(corpus)
}

/// Writes degraded synthetic images as PNG plus VOC XML and a manifest.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    images: &[SyntheticImage],
    classes: &ClassMap,
) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = Vec::new();
    for img in images {
        let file = format!("{}.png", img.name);
        write_image(dir.join(&file), &img.degraded)?;
        let xml = write_voc(
            &file,
            img.degraded.width(),
            img.degraded.height(),
            &img.truth.boxes,
            classes,
        );
        let xml_path = dir.join(format!("{}.xml", img.name));
        fs::write(&xml_path, xml).map_err(io_err(&xml_path))?;
        if let Some(condition) = img.truth.condition {
            manifest.push(ManifestEntry {
                image: file,
                condition,
                severity: img.truth.severity,
            });
        }
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, render_manifest(&manifest)).map_err(io_err(&path))?;
    Ok(())
}

/// Builds in-memory corpus images from synthetic ones, without touching disk.
pub fn corpus_from_synthetic(images: &[SyntheticImage]) -> Vec<CorpusImage> {
    images
        .iter()
        .map(|img| CorpusImage {
            gt: GtImage {
                image: format!("{}.png", img.name),
                condition: img.truth.condition,
                severity: img.truth.severity,
                boxes: img.truth.boxes.clone(),
            },
            raster: Arc::new(img.degraded.clone()),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"<annotation>
  <filename>a.png</filename>
  <size><width>64</width><height>48</height><depth>3</depth></size>
  <object><name>Car</name><bndbox><xmin>1</xmin><ymin>2</ymin><xmax>11</xmax><ymax>12</ymax></bndbox></object>
  <object><name>pedestrian</name><bndbox><xmin>20</xmin><ymin>5</ymin><xmax>30</xmax><ymax>40</ymax></bndbox></object>
</annotation>"#;

    #[test]
    fn two_objects_with_aliases() {
        let a = parse_voc(TWO, &ClassMap::default()).unwrap();
        assert_eq!(a.filename.as_deref(), Some("a.png"));
        assert_eq!(a.size, Some((64, 48)));
        assert_eq!(a.boxes.len(), 2);
        assert_eq!(a.boxes[0].0, 2);
        assert_eq!(a.boxes[1], (0, BBox::new(20.0, 5.0, 30.0, 40.0).unwrap()));
    }

    #[test]
    fn empty_object_list() {
        let a = parse_voc("<annotation><filename>x</filename></annotation>", &ClassMap::default()).unwrap();
        assert!(a.boxes.is_empty());
    }

    #[test]
    fn truncated_xml_is_an_error() {
        assert!(parse_voc(&TWO[..TWO.len() / 2], &ClassMap::default()).is_err());
    }

    #[test]
    fn unknown_class_and_degenerate_box_are_skipped() {
        let xml = r#"<annotation>
          <object><name>dragon</name><bndbox><xmin>1</xmin><ymin>1</ymin><xmax>5</xmax><ymax>5</ymax></bndbox></object>
          <object><name>car</name><bndbox><xmin>5</xmin><ymin>1</ymin><xmax>5</xmax><ymax>5</ymax></bndbox></object>
        </annotation>"#;
        let a = parse_voc(xml, &ClassMap::default()).unwrap();
        assert!(a.boxes.is_empty());
        assert_eq!(a.skipped.len(), 2);
    }

    #[test]
    fn write_then_parse_round_trip() {
        let boxes = vec![
            (2, BBox::new(1.0, 2.0, 11.0, 12.0).unwrap()),
            (0, BBox::new(3.5, 4.0, 9.0, 20.25).unwrap()),
        ];
        let xml = write_voc("x.png", 32, 32, &boxes, &ClassMap::default());
        assert_eq!(parse_voc(&xml, &ClassMap::default()).unwrap().boxes, boxes);
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let text = "# corpus\na.png fog 0.5\nb.png snow\n\n";
        let m = parse_manifest(text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].severity, Some(0.5));
        assert_eq!(parse_manifest(&render_manifest(&m)).unwrap(), m);
        assert!(parse_manifest("a.png hail").is_err());
        assert!(parse_manifest("a.png").is_err());
    }

    #[test]
    fn class_map_parse() {
        let m = ClassMap::parse("object 0\nthing 0 # alias\n").unwrap();
        assert_eq!(m.id("Thing"), Some(0));
        assert_eq!(m.name(0), Some("object"));
        assert!(ClassMap::parse("object").is_err());
    }
}

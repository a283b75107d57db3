//! Pascal-VOC / LabelImg XML annotations.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::BBox;

pub const CLASS_SPERM: usize = 0;
pub const CLASS_IMPURITY: usize = 1;
pub const CLASS_NAMES: [&str; 2] = ["sperm", "impurity"];

/// Default name → class id table.
pub fn default_class_map() -> HashMap<String, usize> {
    CLASS_NAMES.iter().enumerate().map(|(i, n)| (n.to_string(), i)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameRef {
    pub source_id: String,
    pub index: usize,
}

impl FrameRef {
    pub fn new(source_id: impl Into<String>, index: usize) -> Self {
        Self { source_id: source_id.into(), index }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: BBox,
    pub class_id: usize,
    pub frame_ref: FrameRef,
}

/// Contents of one VOC file.
#[derive(Debug, Clone, PartialEq)]
pub struct VocDocument {
    pub filename: Option<String>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub annotations: Vec<Annotation>,
}

fn child<'a>(node: roxmltree::Node<'a, 'a>, name: &str) -> Option<roxmltree::Node<'a, 'a>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn child_text<'a>(node: roxmltree::Node<'a, 'a>, name: &str) -> Option<&'a str> {
    child(node, name).and_then(|c| c.text()).map(str::trim)
}

/// Parses a LabelImg-style file. Boxes are clamped to the declared image
/// size; objects with empty extent or unknown names are rejected.
pub fn load_voc_annotations(xml_path: &Path, class_map: &HashMap<String, usize>, frame_ref: FrameRef) -> Result<VocDocument> {
    let text = std::fs::read_to_string(xml_path)?;
    parse_voc(&text, xml_path, class_map, frame_ref)
}

pub fn parse_voc(text: &str, xml_path: &Path, class_map: &HashMap<String, usize>, frame_ref: FrameRef) -> Result<VocDocument> {
    let parse_err = |reason: String| CoreError::AnnotationParse { path: xml_path.to_path_buf(), reason };
    let doc = roxmltree::Document::parse(text).map_err(|e| parse_err(e.to_string()))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(parse_err(format!("root element is <{}>, expected <annotation>", root.tag_name().name())));
    }
    let size = child(root, "size");
    let dim = |name| size.and_then(|s| child_text(s, name)).and_then(|t| t.parse::<f64>().ok()).filter(|v| *v > 0.0);
    let (width, height) = (dim("width"), dim("height"));

    let mut annotations = Vec::new();
    for (index, obj) in root.children().filter(|c| c.has_tag_name("object")).enumerate() {
        let invalid = |reason: String| CoreError::AnnotationInvalid { path: xml_path.to_path_buf(), index, reason };
        let name = child_text(obj, "name").ok_or_else(|| invalid("missing <name>".into()))?;
        let class_id = *class_map.get(name).ok_or_else(|| CoreError::UnknownClass { path: xml_path.to_path_buf(), name: name.to_string() })?;
        let bnd = child(obj, "bndbox").ok_or_else(|| invalid("missing <bndbox>".into()))?;
        let coord = |tag: &str| -> Result<f64> {
            child_text(bnd, tag).ok_or_else(|| invalid(format!("missing <{tag}>")))?.parse::<f64>().map_err(|e| invalid(format!("<{tag}>: {e}")))
        };
        let mut b = BBox { x_min: coord("xmin")?, y_min: coord("ymin")?, x_max: coord("xmax")?, y_max: coord("ymax")? };
        if !(b.x_min < b.x_max && b.y_min < b.y_max) {
            return Err(invalid(format!("empty extent ({}, {}, {}, {})", b.x_min, b.y_min, b.x_max, b.y_max)));
        }
        if let (Some(w), Some(h)) = (width, height) {
            b = b.clamp_to(w, h);
            if b.is_degenerate() {
                return Err(invalid("box lies outside the image".into()));
            }
        }
        annotations.push(Annotation { bbox: b, class_id, frame_ref: frame_ref.clone() });
    }
    Ok(VocDocument {
        filename: child_text(root, "filename").map(str::to_string),
        width: width.map(|w| w as u32),
        height: height.map(|h| h as u32),
        annotations,
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Serializes annotations in the LabelImg dialect.
pub fn write_voc(path: &Path, folder: &str, filename: &str, width: u32, height: u32, depth: u32, annotations: &[Annotation]) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "<annotation>");
    let _ = writeln!(s, "\t<folder>{}</folder>", escape(folder));
    let _ = writeln!(s, "\t<filename>{}</filename>", escape(filename));
    let _ = writeln!(s, "\t<size>\n\t\t<width>{width}</width>\n\t\t<height>{height}</height>\n\t\t<depth>{depth}</depth>\n\t</size>");
    let _ = writeln!(s, "\t<segmented>0</segmented>");
    for a in annotations {
        let name = CLASS_NAMES.get(a.class_id).copied().unwrap_or("unknown");
        let _ = writeln!(
            s,
            "\t<object>\n\t\t<name>{name}</name>\n\t\t<pose>Unspecified</pose>\n\t\t<truncated>0</truncated>\n\t\t<difficult>0</difficult>"
        );
        let _ = writeln!(
            s,
            "\t\t<bndbox>\n\t\t\t<xmin>{}</xmin>\n\t\t\t<ymin>{}</ymin>\n\t\t\t<xmax>{}</xmax>\n\t\t\t<ymax>{}</ymax>\n\t\t</bndbox>\n\t</object>",
            a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max
        );
    }
    let _ = writeln!(s, "</annotation>");
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"<annotation>
  <folder>v1</folder><filename>f.png</filename>
  <size><width>100</width><height>80</height><depth>3</depth></size>
  <object><name>sperm</name><bndbox><xmin>10</xmin><ymin>10</ymin><xmax>20</xmax><ymax>18</ymax></bndbox></object>
  <object><name>impurity</name><bndbox><xmin>90</xmin><ymin>70</ymin><xmax>103</xmax><ymax>79</ymax></bndbox></object>
</annotation>"#;

    fn parse(text: &str) -> Result<VocDocument> {
        parse_voc(text, Path::new("t.xml"), &default_class_map(), FrameRef::new("v1", 0))
    }

    #[test]
    fn two_objects_with_clamping() {
        let doc = parse(TWO).unwrap();
        assert_eq!(doc.annotations.len(), 2);
        assert_eq!(doc.annotations[0].class_id, 0);
        assert_eq!(doc.annotations[1].class_id, 1);
        assert_eq!(doc.annotations[1].bbox.x_max, 100.0);
        assert_eq!(doc.width, Some(100));
    }

    #[test]
    fn inverted_box_names_object_index() {
        let bad = TWO.replace("<xmax>103</xmax>", "<xmax>80</xmax>");
        match parse(&bad) {
            Err(CoreError::AnnotationInvalid { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_class_is_named() {
        let bad = TWO.replace("impurity", "bubble");
        match parse(&bad) {
            Err(CoreError::UnknownClass { name, .. }) => assert_eq!(name, "bubble"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_xml() {
        assert!(matches!(parse("<annotation><object>"), Err(CoreError::AnnotationParse { .. })));
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.xml");
        let doc = parse(TWO).unwrap();
        write_voc(&p, "v1", "f.png", 100, 80, 3, &doc.annotations).unwrap();
        let back = load_voc_annotations(&p, &default_class_map(), FrameRef::new("v1", 0)).unwrap();
        assert_eq!(back.annotations, doc.annotations);
    }
}

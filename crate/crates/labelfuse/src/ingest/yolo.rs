use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use labelfuse_core::model::{
    clamp_box, Annotation, BoundingBox, Dataset, ImageRecord, LabelSpace, ModelError, Provenance,
};

use super::{IngestError, ParseReport};

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "webp"];

/// Normalized center box `[cx, cy, w, h]` to absolute top-left pixels.
pub fn yolo_to_box(v: [f64; 4], width: u32, height: u32) -> Result<BoundingBox, ModelError> {
    let (fw, fh) = (f64::from(width), f64::from(height));
    let [cx, cy, w, h] = v;
    BoundingBox::new((cx - w / 2.0) * fw, (cy - h / 2.0) * fh, w * fw, h * fh)
}

pub fn box_to_yolo(b: &BoundingBox, width: u32, height: u32) -> [f64; 4] {
    let (fw, fh) = (f64::from(width), f64::from(height));
    [(b.x + b.w / 2.0) / fw, (b.y + b.h / 2.0) / fh, b.w / fw, b.h / fh]
}

/// Reads `names.txt`: one class name per non-empty line.
pub fn read_names(root: &Path) -> Result<Vec<String>, IngestError> {
    let path = root.join("names.txt");
    let text = fs::read_to_string(&path).map_err(|e| IngestError::io(&path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn read_sizes(root: &Path) -> Result<BTreeMap<String, (u32, u32)>, IngestError> {
    let path = root.join("sizes.tsv");
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(IngestError::io(&path, e)),
    };
    let mut sizes = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: &str| IngestError::Parse {
            origin: path.display().to_string(),
            line: i + 1,
            column: 0,
            message: message.into(),
        };
        let mut parts = line.split('\t');
        let (Some(stem), Some(w), Some(h), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected `<stem>\\t<width>\\t<height>`"));
        };
        let w: u32 = w.trim().parse().map_err(|_| bad("width is not a positive integer"))?;
        let h: u32 = h.trim().parse().map_err(|_| bad("height is not a positive integer"))?;
        sizes.insert(stem.to_string(), (w, h));
    }
    Ok(sizes)
}

fn label_stems(root: &Path) -> Result<BTreeSet<String>, IngestError> {
    let dir = root.join("labels");
    let entries = match fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeSet::new()),
        Err(e) => return Err(IngestError::io(&dir, e)),
    };
    let mut stems = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| IngestError::io(&dir, e))?.path();
        if path.extension().is_some_and(|x| x == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.insert(stem.to_string());
            }
        }
    }
    Ok(stems)
}

fn image_path(root: &Path, stem: &str) -> String {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| format!("images/{stem}.{ext}"))
        .find(|p| root.join(p).is_file())
        .unwrap_or_else(|| format!("images/{stem}.jpg"))
}

fn parse_line(line: &str, origin: &str, lineno: usize, len: usize) -> Result<(u32, [f64; 4]), IngestError> {
    let bad = |message: String| IngestError::Parse { origin: origin.into(), line: lineno, column: 0, message };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(bad(format!("expected 5 fields, got {}", fields.len())));
    }
    let index: usize = fields[0].parse().map_err(|_| bad(format!("bad class index `{}`", fields[0])))?;
    if index >= len {
        return Err(IngestError::IndexOutOfRange { file: origin.into(), line: lineno, index, len });
    }
    let mut v = [0.0; 4];
    for (slot, text) in v.iter_mut().zip(&fields[1..]) {
        let x: f64 = text.parse().map_err(|_| bad(format!("bad number `{text}`")))?;
        if !(0.0..=1.0).contains(&x) {
            return Err(bad(format!("value {x} is not normalized to [0, 1]")));
        }
        *slot = x;
    }
    Ok((index as u32, v))
}

/// Loads a YOLO directory: `labels/<stem>.txt`, pixel sizes from
/// `sizes.tsv`. Images listed in `sizes.tsv` without a label file are kept
/// with no annotations. Image ids are the file stems.
pub fn parse_yolo_dataset(
    root: &Path,
    names: &[String],
    dataset_id: &str,
) -> Result<(Dataset, ParseReport), IngestError> {
    let space = LabelSpace::from_names(names)?;
    let sizes = read_sizes(root)?;
    let labelled = label_stems(root)?;
    let stems: BTreeSet<&String> = sizes.keys().chain(&labelled).collect();

    let mut report = ParseReport { original_category_ids: (0..names.len() as i64).collect(), ..Default::default() };
    let mut images = Vec::with_capacity(stems.len());
    let mut annotations = Vec::new();
    for stem in stems {
        let &(w, h) = sizes.get(stem).ok_or_else(|| IngestError::MissingDimensions(stem.clone()))?;
        let img = ImageRecord::new(stem.clone(), dataset_id, image_path(root, stem), w, h)?;
        if labelled.contains(stem) {
            let path = root.join("labels").join(format!("{stem}.txt"));
            let text = fs::read_to_string(&path).map_err(|e| IngestError::io(&path, e))?;
            let origin = path.display().to_string();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let (class, v) = parse_line(line, &origin, i + 1, names.len())?;
                let raw = match yolo_to_box(v, w, h) {
                    Ok(b) => b,
                    Err(ModelError::EmptyBox { .. }) => {
                        report.dropped_degenerate += 1;
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                };
                match clamp_box(&raw, &img) {
                    Ok(bbox) => {
                        if bbox != raw {
                            report.clamped += 1;
                        }
                        annotations.push(Annotation::new(&img, class, bbox, Provenance::GroundTruth, &space)?);
                    }
                    Err(ModelError::DegenerateBox) => report.dropped_out_of_frame += 1,
                    Err(e) => return Err(e.into()),
                }
            }
        }
        images.push(img);
    }
    Ok((Dataset::new(dataset_id, space, images, annotations)?, report))
}

/// Writes `names.txt`, `sizes.tsv` and one label file per image. Image files
/// themselves are not touched.
pub fn export_yolo(d: &Dataset, root: &Path) -> Result<(), IngestError> {
    let labels = root.join("labels");
    fs::create_dir_all(&labels).map_err(|e| IngestError::io(&labels, e))?;
    let write = |path: &Path, text: &str| fs::write(path, text).map_err(|e| IngestError::io(path, e));

    let names: String = d.label_space.categories().iter().map(|c| format!("{}\n", c.canonical_name)).collect();
    write(&root.join("names.txt"), &names)?;
    let mut sizes = String::new();
    for im in &d.images {
        writeln!(sizes, "{}\t{}\t{}", im.id, im.width, im.height).expect("write to String");
        let mut text = String::new();
        for a in d.annotations.iter().filter(|a| a.image == im.key()) {
            let [cx, cy, w, h] = box_to_yolo(&a.bbox, im.width, im.height);
            writeln!(text, "{} {cx} {cy} {w} {h}", a.category_id).expect("write to String");
        }
        write(&labels.join(format!("{}.txt", im.id)), &text)?;
    }
    write(&root.join("sizes.tsv"), &sizes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(lines: &str, size: (u32, u32)) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("labels")).unwrap();
        fs::write(dir.path().join("labels/img.txt"), lines).unwrap();
        fs::write(dir.path().join("sizes.tsv"), format!("img\t{}\t{}\n", size.0, size.1)).unwrap();
        dir
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn center_to_corner() {
        let dir = fixture("0 0.5 0.5 0.5 0.5\n", (100, 100));
        let (d, _) = parse_yolo_dataset(dir.path(), &names(1), "y").unwrap();
        assert_eq!(d.annotations[0].bbox, BoundingBox::new(25.0, 25.0, 50.0, 50.0).unwrap());
        assert_eq!(d.label_space.name(d.annotations[0].category_id), Some("c0"));
        assert_eq!(d.images[0].file_path, "images/img.jpg");
    }

    #[test]
    fn full_image_box() {
        let dir = fixture("0 0.5 0.5 1.0 1.0\n", (64, 64));
        let (d, _) = parse_yolo_dataset(dir.path(), &names(1), "y").unwrap();
        assert_eq!(d.annotations[0].bbox, BoundingBox::new(0.0, 0.0, 64.0, 64.0).unwrap());
    }

    #[test]
    fn class_index_out_of_range() {
        let dir = fixture("5 0.5 0.5 0.1 0.1\n", (64, 64));
        assert!(matches!(
            parse_yolo_dataset(dir.path(), &names(3), "y"),
            Err(IngestError::IndexOutOfRange { index: 5, len: 3, line: 1, .. })
        ));
    }

    #[test]
    fn missing_dimensions() {
        let dir = fixture("0 0.5 0.5 0.1 0.1\n", (64, 64));
        fs::write(dir.path().join("sizes.tsv"), "").unwrap();
        assert!(matches!(parse_yolo_dataset(dir.path(), &names(1), "y"), Err(IngestError::MissingDimensions(_))));
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = fixture("0 0.5 0.5 0.1 0.1\n0 0.5 x 0.1 0.1\n", (64, 64));
        assert!(matches!(parse_yolo_dataset(dir.path(), &names(1), "y"), Err(IngestError::Parse { line: 2, .. })));
    }

    #[test]
    fn existing_image_file_is_found() {
        let dir = fixture("", (8, 8));
        fs::create_dir_all(dir.path().join("images")).unwrap();
        fs::write(dir.path().join("images/img.png"), b"png").unwrap();
        let (d, _) = parse_yolo_dataset(dir.path(), &names(1), "y").unwrap();
        assert_eq!(d.images[0].file_path, "images/img.png");
        assert!(d.annotations.is_empty());
    }

    #[test]
    fn export_then_parse() {
        let dir = fixture("1 0.25 0.5 0.5 0.25\n0 0.5 0.5 1 1\n", (640, 480));
        let (d, _) = parse_yolo_dataset(dir.path(), &names(2), "y").unwrap();
        let out = tempfile::tempdir().unwrap();
        export_yolo(&d, out.path()).unwrap();
        let names = read_names(out.path()).unwrap();
        let (back, _) = parse_yolo_dataset(out.path(), &names, "y").unwrap();
        assert_eq!(back.annotations, d.annotations);
    }
}

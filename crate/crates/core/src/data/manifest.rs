use std::collections::HashSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::Point2D;

use super::{AnnotationRecord, DatasetManifest, Label};

pub const MANIFEST_HEADER: [&str; 6] = ["image_id", "label", "left_x", "left_y", "right_x", "right_y"];

/// Load an annotation CSV; images are resolved as `<csv dir>/<image_id>.png`
/// and their headers read to bounds-check the annotations.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    load_manifest_at(path, &root)
}

/// Like [`load_manifest`] with images read from `image_root`.
pub fn load_manifest_at(path: &Path, image_root: &Path) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let root = image_root.to_path_buf();
    let dims_root = root.clone();
    parse_manifest(file, root, move |id| {
        let img = dims_root.join(format!("{id}.png"));
        let (w, h) = image::image_dimensions(&img).map_err(|source| Error::Image { path: img, source })?;
        Ok((w as usize, h as usize))
    })
}

/// Parse manifest rows from `reader`; `dims(image_id)` returns `(width, height)`.
pub fn parse_manifest<R: Read>(
    reader: R,
    image_root: PathBuf,
    dims: impl Fn(&str) -> Result<(usize, usize)>,
) -> Result<DatasetManifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Manifest {
            line: 1,
            msg: format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        });
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row?;
        if row.len() != MANIFEST_HEADER.len() {
            return Err(Error::Manifest {
                line,
                msg: format!("expected 6 columns, got {}", row.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            row[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Manifest {
                    line,
                    msg: format!("column `{}` is not a number: `{}`", MANIFEST_HEADER[k], &row[k]),
                })
        };
        let image_id = row[0].to_string();
        if image_id.is_empty() {
            return Err(Error::Manifest {
                line,
                msg: "empty image_id".into(),
            });
        }
        let label = row[1]
            .parse::<i64>()
            .ok()
            .and_then(Label::from_int)
            .ok_or_else(|| Error::Manifest {
                line,
                msg: format!("label must be 0 or 1, got `{}`", &row[1]),
            })?;
        let rec = AnnotationRecord {
            image_id,
            label,
            ss_left: Point2D::new(num(2)?, num(3)?),
            ss_right: Point2D::new(num(4)?, num(5)?),
        };
        if !seen.insert(rec.image_id.clone()) {
            return Err(Error::Manifest {
                line,
                msg: format!("duplicate image_id `{}`", rec.image_id),
            });
        }
        let (w, h) = dims(&rec.image_id)?;
        check_bounds(&rec, w, h).map_err(|msg| Error::Bounds(format!("line {line}: {msg}")))?;
        records.push(rec);
    }
    Ok(DatasetManifest { records, image_root })
}

fn check_bounds(rec: &AnnotationRecord, w: usize, h: usize) -> std::result::Result<(), String> {
    for (name, p) in [("left", rec.ss_left), ("right", rec.ss_right)] {
        if !(p.x >= 0.0 && p.x < w as f64 && p.y >= 0.0 && p.y < h as f64) {
            return Err(format!(
                "{name} point ({}, {}) outside {w}x{h} image `{}`",
                p.x, p.y, rec.image_id
            ));
        }
    }
    let mid = (w - w % 2) as f64 / 2.0;
    if !(rec.ss_left.x < mid && rec.ss_right.x >= mid) {
        return Err(format!(
            "image `{}`: left point must lie left of x={mid} and right point at or beyond it",
            rec.image_id
        ));
    }
    Ok(())
}

pub fn write_manifest(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for r in records {
        w.write_record([
            r.image_id.clone(),
            (r.label as i32).to_string(),
            r.ss_left.x.to_string(),
            r.ss_left.y.to_string(),
            r.ss_right.x.to_string(),
            r.ss_right.y.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(body: &str) -> Result<DatasetManifest> {
        let text = format!("image_id,label,left_x,left_y,right_x,right_y\n{body}");
        parse_manifest(text.as_bytes(), PathBuf::new(), |_| Ok((2130, 998)))
    }

    #[test]
    fn parses_a_row() {
        let m = parse("img001,1,310.0,520.0,1820.0,515.0\n").unwrap();
        assert_eq!(m.records.len(), 1);
        let r = &m.records[0];
        assert_eq!(r.label, Label::Closure);
        assert_eq!(r.ss_left, Point2D::new(310.0, 520.0));
        assert_eq!(r.ss_right, Point2D::new(1820.0, 515.0));
    }

    #[test]
    fn out_of_bounds_rejected() {
        assert!(matches!(parse("a,0,3000,520,1820,515\n"), Err(Error::Bounds(_))));
        assert!(matches!(parse("a,0,300,998,1820,515\n"), Err(Error::Bounds(_))));
    }

    #[test]
    fn side_invariant_enforced() {
        assert!(matches!(parse("a,0,1200,520,1820,515\n"), Err(Error::Bounds(_))));
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(matches!(parse("a,0,1,2,3\n"), Err(Error::Manifest { line: 2, .. })));
        assert!(matches!(parse("a,0,x,2,1300,4\n"), Err(Error::Manifest { .. })));
        assert!(matches!(parse("a,2,1,2,1300,4\n"), Err(Error::Manifest { .. })));
        assert!(matches!(
            parse("a,0,1,2,1300,4\na,1,1,2,1300,4\n"),
            Err(Error::Manifest { line: 3, .. })
        ));
    }

    #[test]
    fn sixteen_hundred_rows() {
        let body: String = (0..1600)
            .map(|i| format!("img{i:04},{},310.5,520,1820,515.25\n", i % 5 == 0))
            .map(|s| s.replace("true", "1").replace("false", "0"))
            .collect();
        assert_eq!(parse(&body).unwrap().records.len(), 1600);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_manifest(Path::new("/nonexistent/manifest.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn write_then_parse_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = parse("b,0,10.125,20.5,1500.333,30\n").unwrap();
        let path = dir.path().join("m.csv");
        write_manifest(&path, &m.records).unwrap();
        let again = parse_manifest(std::fs::File::open(&path).unwrap(), PathBuf::new(), |_| Ok((2130, 998))).unwrap();
        assert_eq!(again.records, m.records);
    }
}

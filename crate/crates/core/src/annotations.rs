//! Dual-observer point annotations.
//!
//! Interchange format is a CSV with header `x,y,obs1,obs2` and labels from
//! `mitosis`, `nonmitosis`, `unclassifiable`. Slide dimensions live in the
//! CSV's sidecar (`width_px`, `height_px`).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::WindowSize;
use crate::raster::{self, SidecarMeta};
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Mitosis,
    #[serde(rename = "nonmitosis")]
    NonMitosis,
    Unclassifiable,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Mitosis => "mitosis",
            Label::NonMitosis => "nonmitosis",
            Label::Unclassifiable => "unclassifiable",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mitosis" => Ok(Label::Mitosis),
            "nonmitosis" => Ok(Label::NonMitosis),
            "unclassifiable" => Ok(Label::Unclassifiable),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Annotation {
    pub x: u32,
    pub y: u32,
    pub obs1: Label,
    pub obs2: Label,
}

impl Annotation {
    pub fn new(x: u32, y: u32, obs1: Label, obs2: Label) -> Self {
        Annotation { x, y, obs1, obs2 }
    }

    pub fn point(&self) -> Point {
        (self.x, self.y)
    }

    pub fn is_agreed_mitosis(&self) -> bool {
        self.obs1 == Label::Mitosis && self.obs2 == Label::Mitosis
    }

    /// Observers disagree, or both could not classify the cell.
    pub fn is_hard_negative(&self) -> bool {
        self.obs1 != self.obs2 || (self.obs1 == Label::Unclassifiable && self.obs2 == Label::Unclassifiable)
    }
}

/// Annotations of one slide, or of a horizontal band of it.
///
/// Coordinates are always slide coordinates. The set covers rows
/// `y_offset .. y_offset + height_px`; a freshly parsed set has
/// `y_offset == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub slide_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub y_offset: u32,
    items: Vec<Annotation>,
}

impl AnnotationSet {
    /// Builds a set covering a whole slide, rejecting out-of-bounds and
    /// duplicate coordinates.
    pub fn new(slide_id: impl Into<String>, width_px: u32, height_px: u32, items: Vec<Annotation>) -> Result<Self> {
        Self::with_offset(slide_id, width_px, height_px, 0, items)
    }

    pub fn with_offset(
        slide_id: impl Into<String>,
        width_px: u32,
        height_px: u32,
        y_offset: u32,
        items: Vec<Annotation>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(items.len());
        for (i, a) in items.iter().enumerate() {
            if a.x >= width_px || a.y < y_offset || a.y - y_offset >= height_px {
                return Err(Error::domain(format!(
                    "annotation {i} at ({}, {}) outside {width_px}x{height_px} (rows from {y_offset})",
                    a.x, a.y
                )));
            }
            if !seen.insert((a.x, a.y)) {
                return Err(Error::domain(format!("duplicate annotation at ({}, {})", a.x, a.y)));
            }
        }
        Ok(AnnotationSet {
            slide_id: slide_id.into(),
            width_px,
            height_px,
            y_offset,
            items,
        })
    }

    pub fn items(&self) -> &[Annotation] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Parses annotation CSV text. `row` numbers in errors count the header
/// as row 1.
pub fn parse_annotations_str(text: &str, slide_id: &str, width_px: u32, height_px: u32) -> Result<AnnotationSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::None)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| Error::Parse {
            row: 1,
            detail: e.to_string(),
        })?,
        None => {
            return Err(Error::Parse {
                row: 1,
                detail: "missing header".into(),
            })
        }
    };
    if header.iter().collect::<Vec<_>>() != ["x", "y", "obs1", "obs2"] {
        return Err(Error::Parse {
            row: 1,
            detail: "header must be `x,y,obs1,obs2`".into(),
        });
    }

    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in records.enumerate() {
        let row = i as u64 + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            detail: e.to_string(),
        })?;
        if record.len() != 4 {
            return Err(Error::Parse {
                row,
                detail: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let coord = |idx: usize, name: &str| -> Result<u32> {
            record[idx].parse::<u32>().map_err(|_| Error::Parse {
                row,
                detail: format!("{name} `{}` is not a non-negative integer", &record[idx]),
            })
        };
        let x = coord(0, "x")?;
        let y = coord(1, "y")?;
        let label = |idx: usize| -> Result<Label> { record[idx].parse().map_err(|detail| Error::Parse { row, detail }) };
        let obs1 = label(2)?;
        let obs2 = label(3)?;
        if x >= width_px || y >= height_px {
            return Err(Error::Parse {
                row,
                detail: format!("({x}, {y}) outside slide {width_px}x{height_px}"),
            });
        }
        if !seen.insert((x, y)) {
            return Err(Error::Parse {
                row,
                detail: format!("duplicate coordinate ({x}, {y})"),
            });
        }
        items.push(Annotation { x, y, obs1, obs2 });
    }
    AnnotationSet::new(slide_id, width_px, height_px, items)
}

/// Reads an annotation CSV and its sidecar. The slide id is the file stem.
pub fn parse_annotations(path: &Path) -> Result<AnnotationSet> {
    let meta = raster::read_sidecar(path)?;
    let (w, h) = match (meta.width_px, meta.height_px) {
        (Some(w), Some(h)) => (w, h),
        _ => {
            return Err(Error::domain(format!(
                "{} lacks `width_px`/`height_px`",
                raster::sidecar_path(path).display()
            )))
        }
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let slide_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_annotations_str(&text, &slide_id, w, h)
}

pub fn annotations_to_csv(set: &AnnotationSet) -> String {
    let mut out = String::from("x,y,obs1,obs2\n");
    for a in set.items() {
        out.push_str(&format!("{},{},{},{}\n", a.x, a.y, a.obs1, a.obs2));
    }
    out
}

/// Writes the CSV and a sidecar holding the dimensions of the enclosing
/// slide.
pub fn write_annotations(set: &AnnotationSet, path: &Path) -> Result<()> {
    raster::write_atomic(path, annotations_to_csv(set).as_bytes())?;
    raster::write_sidecar(
        path,
        &SidecarMeta {
            width_px: Some(set.width_px),
            height_px: Some(set.y_offset + set.height_px),
            ..Default::default()
        },
    )
}

/// Points with `x,y` header, used for detector output.
pub fn parse_points_str(text: &str) -> Result<Vec<Point>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("x,y") => {}
        _ => {
            return Err(Error::Parse {
                row: 1,
                detail: "header must be `x,y`".into(),
            })
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let row = i as u64 + 2;
            let bad = || Error::Parse {
                row,
                detail: format!("`{line}` is not `x,y` with non-negative integers"),
            };
            let (x, y) = line.split_once(',').ok_or_else(bad)?;
            Ok((x.parse().map_err(|_| bad())?, y.parse().map_err(|_| bad())?))
        })
        .collect()
}

pub fn read_points(path: &Path) -> Result<Vec<Point>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points_str(&text)
}

pub fn agreed_mitoses(set: &AnnotationSet) -> Vec<Point> {
    set.items()
        .iter()
        .filter(|a| a.is_agreed_mitosis())
        .map(Annotation::point)
        .collect()
}

pub fn hard_negative_candidates(set: &AnnotationSet) -> Vec<Point> {
    set.items()
        .iter()
        .filter(|a| a.is_hard_negative())
        .map(Annotation::point)
        .collect()
}

/// Mitotic count of the half-open window `[x, x+w) × [y, y+h)`.
pub fn window_count(points: &[Point], origin: Point, size: WindowSize) -> u64 {
    let (ox, oy) = (origin.0 as u64, origin.1 as u64);
    let (w, h) = (size.width_px as u64, size.height_px as u64);
    points
        .iter()
        .filter(|&&(x, y)| {
            let (x, y) = (x as u64, y as u64);
            x >= ox && x < ox + w && y >= oy && y < oy + h
        })
        .count() as u64
}

/// Which end of the slide becomes the validation band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValSide {
    /// Largest `y` (raster rows grow downward).
    #[default]
    Bottom,
    Top,
}

/// Splits a slide horizontally into a training and a validation band.
///
/// With `fraction = f` and band height `H`, the validation band holds
/// `H - floor(H·(1-f))` rows at the chosen side; the training band holds the
/// rest. Both returned sets carry their band's offset and height.
pub fn vertical_split(set: &AnnotationSet, fraction: f64, side: ValSide) -> Result<(AnnotationSet, AnnotationSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::domain(format!("validation fraction must lie in (0, 1), got {fraction}")));
    }
    let h = set.height_px;
    let train_rows = (h as f64 * (1.0 - fraction)).floor() as u32;
    let val_rows = h - train_rows;
    let (train_range, val_range) = match side {
        ValSide::Bottom => ((0, train_rows), (train_rows, val_rows)),
        ValSide::Top => ((val_rows, train_rows), (0, val_rows)),
    };
    let in_band = |a: &Annotation, (start, len): (u32, u32)| {
        let rel = a.y - set.y_offset;
        rel >= start && rel < start + len
    };
    let pick = |band: (u32, u32)| -> Vec<Annotation> {
        set.items().iter().filter(|a| in_band(a, band)).copied().collect()
    };
    let train = AnnotationSet {
        slide_id: set.slide_id.clone(),
        width_px: set.width_px,
        height_px: train_range.1,
        y_offset: set.y_offset + train_range.0,
        items: pick(train_range),
    };
    let val = AnnotationSet {
        slide_id: set.slide_id.clone(),
        width_px: set.width_px,
        height_px: val_range.1,
        y_offset: set.y_offset + val_range.0,
        items: pick(val_range),
    };
    Ok((train, val))
}

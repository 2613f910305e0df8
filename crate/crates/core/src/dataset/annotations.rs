use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::raster::PixelBox;

/// ICH subtype label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Subtype {
    Ivh,
    Iph,
    Sah,
    Edh,
    Sdh,
}

impl Subtype {
    pub const ALL: [Subtype; 5] = [Subtype::Ivh, Subtype::Iph, Subtype::Sah, Subtype::Edh, Subtype::Sdh];

    pub fn as_str(self) -> &'static str {
        match self {
            Subtype::Ivh => "IVH",
            Subtype::Iph => "IPH",
            Subtype::Sah => "SAH",
            Subtype::Edh => "EDH",
            Subtype::Sdh => "SDH",
        }
    }
}

impl fmt::Display for Subtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subtype {
    type Err = String;

    /// Accepts the abbreviations (any case) and the long English names.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ivh" | "intraventricular" => Ok(Subtype::Ivh),
            "iph" | "intraparenchymal" => Ok(Subtype::Iph),
            "sah" | "subarachnoid" => Ok(Subtype::Sah),
            "edh" | "epidural" => Ok(Subtype::Edh),
            "sdh" | "subdural" => Ok(Subtype::Sdh),
            _ => Err(format!("unknown subtype `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub slice_id: String,
    pub subtype: Subtype,
    pub bbox: PixelBox,
}

/// A data row that failed validation. `row` is the 1-based line number in the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowRejection {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Annotations {
    pub boxes: Vec<GroundTruthBox>,
    pub rejected: Vec<RowRejection>,
}

const COLUMNS: [&str; 6] = ["slice_id", "subtype", "x0", "y0", "x1", "y1"];

/// Parses the canonical `slice_id,subtype,x0,y0,x1,y1` CSV. Invalid rows are
/// collected in [`Annotations::rejected`] rather than failing the whole file.
pub fn load_annotations(path: &Path) -> Result<Annotations, DatasetError> {
    let file = std::fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    parse_annotations(file, path)
}

pub fn parse_annotations(reader: impl Read, path: &Path) -> Result<Annotations, DatasetError> {
    let csv_err = |source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let mut cols = [0usize; 6];
    for (slot, name) in cols.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })?;
    }
    let mut out = Annotations::default();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.rejected.push(RowRejection {
                    row,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match parse_row(&record, &cols) {
            Ok(b) => out.boxes.push(b),
            Err(reason) => out.rejected.push(RowRejection { row, reason }),
        }
    }
    Ok(out)
}

fn parse_row(record: &csv::StringRecord, cols: &[usize; 6]) -> Result<GroundTruthBox, String> {
    let field = |i: usize| record.get(cols[i]).ok_or_else(|| format!("missing `{}`", COLUMNS[i]));
    let slice_id = field(0)?.to_string();
    if slice_id.is_empty() {
        return Err("empty slice_id".into());
    }
    let subtype: Subtype = field(1)?.parse()?;
    let mut c = [0u32; 4];
    for (k, v) in c.iter_mut().enumerate() {
        let raw = field(k + 2)?;
        *v = raw
            .parse()
            .map_err(|_| format!("`{}` is not a non-negative integer: `{raw}`", COLUMNS[k + 2]))?;
    }
    let bbox = PixelBox::new(c[0], c[1], c[2], c[3])
        .ok_or_else(|| format!("degenerate or inverted corners ({},{},{},{})", c[0], c[1], c[2], c[3]))?;
    Ok(GroundTruthBox {
        slice_id,
        subtype,
        bbox,
    })
}

pub fn write_annotations(writer: impl Write, boxes: &[GroundTruthBox]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COLUMNS)?;
    for b in boxes {
        w.write_record([
            b.slice_id.clone(),
            b.subtype.to_string(),
            b.bbox.x0.to_string(),
            b.bbox.y0.to_string(),
            b.bbox.x1.to_string(),
            b.bbox.y1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct BhxGeometry {
    x: f64,
    y: f64,
    width: f64,
    height: f64,
}

/// Adapts a BHX-style label export to canonical boxes.
///
/// Expected columns: `SOPInstanceUID`, `data`, `labelName`. `data` holds a
/// Python-dict literal `{'x': .., 'y': .., 'width': .., 'height': ..}` in pixel
/// units with the origin at the top-left pixel, `x` along columns and `y`
/// along rows. Corners become `floor(x), floor(y), ceil(x + width),
/// ceil(y + height)`. Labels other than the five subtypes (for example
/// `Chronic`) are rejected per row.
pub fn convert_bhx(reader: impl Read, path: &Path) -> Result<Annotations, DatasetError> {
    let csv_err = |source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let (uid_col, data_col, label_col) = (col("SOPInstanceUID")?, col("data")?, col("labelName")?);
    let mut out = Annotations::default();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let parsed = record.map_err(|e| e.to_string()).and_then(|r| {
            let uid = r.get(uid_col).unwrap_or_default().trim().to_string();
            let subtype: Subtype = r.get(label_col).unwrap_or_default().parse()?;
            let data = r.get(data_col).unwrap_or_default().replace('\'', "\"");
            let g: BhxGeometry = serde_json::from_str(&data).map_err(|e| format!("bad geometry `{data}`: {e}"))?;
            if [g.x, g.y, g.width, g.height].iter().any(|v| !v.is_finite()) || g.x < 0.0 || g.y < 0.0 {
                return Err(format!("invalid geometry `{data}`"));
            }
            let bbox = PixelBox::new(
                g.x.floor() as u32,
                g.y.floor() as u32,
                (g.x + g.width).ceil() as u32,
                (g.y + g.height).ceil() as u32,
            )
            .ok_or_else(|| format!("degenerate box `{data}`"))?;
            Ok(GroundTruthBox {
                slice_id: uid,
                subtype,
                bbox,
            })
        });
        match parsed {
            Ok(b) => out.boxes.push(b),
            Err(reason) => out.rejected.push(RowRejection { row, reason }),
        }
    }
    Ok(out)
}

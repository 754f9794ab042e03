use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{DatasetCollection, TaskDataset, TaskKey};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn expected_header(aux_dim: usize) -> Vec<String> {
    let mut h = vec!["region_id".to_string(), "attribute_id".into(), "x1".into(), "x2".into()];
    h.extend((1..=aux_dim).map(|i| format!("aux_{i}")));
    h.push("y".into());
    h
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<DatasetCollection> {
    read_csv(File::open(path)?)
}

/// Parses `region_id,attribute_id,x1,x2,aux_1..aux_M,y` rows into tasks.
/// The number of auxiliary columns is taken from the header.
pub fn read_csv(reader: impl Read) -> Result<DatasetCollection> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Parse {
            line: 1,
            msg: "empty file".into(),
        });
    }
    let aux_dim = header.len().checked_sub(5).ok_or_else(|| Error::Parse {
        line: 1,
        msg: format!("header has {} columns, need at least 5", header.len()),
    })?;
    if header != expected_header(aux_dim) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {:?}, found {:?}", expected_header(aux_dim).join(","), header.join(",")),
        });
    }

    let d = 2 + aux_dim;
    let mut grouped: BTreeMap<TaskKey, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let mut nums = Vec::with_capacity(d + 1);
        for (k, field) in record.iter().enumerate().skip(2) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column {} is not a number: {field:?}", header[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("column {} is not finite", header[k]),
                });
            }
            nums.push(v);
        }
        let entry = grouped
            .entry((record[0].to_string(), record[1].to_string()))
            .or_default();
        entry.0.extend_from_slice(&nums[..d]);
        entry.1.push(nums[d]);
    }
    if grouped.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    }

    let mut col = DatasetCollection::new(aux_dim);
    for ((r, c), (xs, ys)) in grouped {
        let x = Matrix::from_vec(ys.len(), d, xs)?;
        col.insert(TaskDataset::new(r, c, x, ys)?)?;
    }
    Ok(col)
}

pub fn save_csv(col: &DatasetCollection, path: impl AsRef<Path>) -> Result<()> {
    write_csv(col, File::create(path)?)
}

/// Writes every task in key order. Values use the shortest representation
/// that parses back to the same float.
pub fn write_csv(col: &DatasetCollection, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(expected_header(col.aux_dim()))?;
    let mut row = Vec::new();
    for t in col.tasks() {
        for i in 0..t.len() {
            row.clear();
            row.push(t.region.clone());
            row.push(t.attribute.clone());
            row.extend(t.x.row(i).iter().map(f64::to_string));
            row.push(t.y[i].to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

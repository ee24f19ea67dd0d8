//! CSV helpers shared by the report writers.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes a header and one row per record. The header is written even when
/// `records` is empty.
pub fn write_records<R: Serialize>(records: &[R], header: &[&str], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records_to(records, header, file, path)
}

/// Same as [`write_records`] for any writer; `label` names it in errors.
pub fn write_records_to<R: Serialize, W: std::io::Write>(
    records: &[R],
    header: &[&str],
    out: W,
    label: &Path,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header).map_err(csv_err(label))?;
    for r in records {
        w.serialize(r).map_err(csv_err(label))?;
    }
    w.flush().map_err(|e| Error::io(label, e))
}

pub fn read_records<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

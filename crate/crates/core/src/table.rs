//! Numeric CSV tables and atomic file output.
//!
//! Every file format in the crate is a header line followed by rows of
//! numbers. Values are written with 17 significant digits so that a
//! written table re-reads bit-exactly.

use std::io::{Read, Write};
use std::path::Path as FsPath;

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row} has {got} fields, header has {expected}")]
    Width { row: usize, expected: usize, got: usize },
    #[error("unexpected header {found:?}: {expected}")]
    Header { found: Vec<String>, expected: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, index: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[index]).collect()
    }
}

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_table_from<R: Read>(reader: R) -> Result<Table, TableError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(TableError::Width { row: i + 1, expected: header.len(), got: record.len() });
        }
        let row = record
            .iter()
            .zip(&header)
            .map(|(field, column)| {
                field.parse::<f64>().map_err(|_| TableError::Parse {
                    row: i + 1,
                    column: column.clone(),
                    value: field.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

pub fn read_table(path: impl AsRef<FsPath>) -> Result<Table, TableError> {
    read_table_from(std::fs::File::open(path)?)
}

pub fn write_table_to<W: Write>(writer: W, header: &[String], rows: &[Vec<f64>]) -> Result<(), TableError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(row.iter().map(|&v| format_f64(v)))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn table_to_string(header: &[String], rows: &[Vec<f64>]) -> Result<String, TableError> {
    let mut buf = Vec::new();
    write_table_to(&mut buf, header, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename, so readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<FsPath>, bytes: &[u8]) -> std::io::Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => FsPath::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exactly() {
        let header = vec!["t".to_string(), "x1".to_string()];
        let rows = vec![vec![0.0, 0.1 + 0.2], vec![1.0 / 3.0, -1.2345678901234567e-300], vec![2.0, f64::MAX]];
        let text = table_to_string(&header, &rows).unwrap();
        let back = read_table_from(text.as_bytes()).unwrap();
        assert_eq!(back.header, header);
        for (a, b) in back.rows.iter().flatten().zip(rows.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn reports_bad_fields() {
        let err = read_table_from("t,x\n0,1\n1,abc\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TableError::Parse { row: 2, .. }));
    }

    #[test]
    fn atomic_write_replaces_target() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, b"first").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}

//! CSV import for small dictionaries. The header names the columns
//! `y_0 … y_{M−1}` followed by `t_0 … t_{L−1}`.

use std::path::Path;

use super::format::{write_dictionary, DictionaryReader, Dtype};
use crate::block::RowBlock;
use crate::error::{Error, Result};

fn column_layout(headers: &csv::StringRecord) -> Result<(usize, usize)> {
    let m = headers.iter().take_while(|h| h.trim().starts_with("y_")).count();
    let l = headers.len() - m;
    for (i, h) in headers.iter().enumerate() {
        let expected = if i < m { format!("y_{i}") } else { format!("t_{}", i - m) };
        if h.trim() != expected {
            return Err(Error::Format(format!("CSV column {i} is '{h}', expected '{expected}'")));
        }
    }
    if m == 0 {
        return Err(Error::Format("CSV has no signal columns".into()));
    }
    Ok((m, l))
}

/// Reads `(signals, params)` from a CSV file.
pub fn read_csv(path: impl AsRef<Path>) -> Result<(RowBlock, RowBlock)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let (m, l) = column_layout(reader.headers().map_err(|e| Error::Format(e.to_string()))?)?;
    let mut signals = RowBlock::with_capacity(m, 0);
    let mut params = RowBlock::with_capacity(l, 0);
    let mut row = Vec::with_capacity(m + l);
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        row.clear();
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("row {r}: cannot parse '{field}'")))?;
            row.push(v);
        }
        if row.len() != m + l {
            return Err(Error::Format(format!("row {r} has {} fields, expected {}", row.len(), m + l)));
        }
        signals.push_row(&row[..m])?;
        params.push_row(&row[m..])?;
    }
    Ok((signals, params))
}

/// Converts a CSV dictionary to the binary format.
pub fn import_csv(csv_path: impl AsRef<Path>, out: impl AsRef<Path>, dtype: Dtype) -> Result<DictionaryReader> {
    let (signals, params) = read_csv(csv_path)?;
    write_dictionary(out.as_ref(), &signals, &params, dtype)?;
    DictionaryReader::open(out)
}

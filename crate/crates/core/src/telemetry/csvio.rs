use std::path::Path;

use super::TelemetryError;

fn io_err(path: &Path, e: csv::Error) -> TelemetryError {
    TelemetryError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Header row plus one line per record; `None` is written as an empty cell.
pub(crate) fn write_table<I>(path: &Path, header: &[String], rows: I) -> Result<(), TelemetryError>
where
    I: IntoIterator<Item = Vec<Option<f64>>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()).collect();
        w.write_record(&cells).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| TelemetryError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Reads a numeric table; blank cells become `None`.
pub(crate) fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>), TelemetryError> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| io_err(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| io_err(path, e))?;
        if record.len() != header.len() {
            return Err(TelemetryError::RaggedRows {
                file: path.display().to_string(),
                row: i + 1,
                expected: header.len(),
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(record.len());
        for (k, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                row.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| TelemetryError::UnparseableNumber {
                file: path.display().to_string(),
                row: i + 1,
                column: header[k].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(TelemetryError::UnparseableNumber {
                    file: path.display().to_string(),
                    row: i + 1,
                    column: header[k].clone(),
                    value: cell.to_string(),
                });
            }
            row.push(Some(v));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

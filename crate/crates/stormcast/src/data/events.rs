//! Lightning event files: CSV with header `timestamp,row,col`, timestamps
//! in RFC 3339 UTC, rows sorted by time.

use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};

use crate::error::{Error, Result};

/// One recorded lightning strike on the pixel lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LightningEvent {
    pub timestamp: DateTime<Utc>,
    pub row: usize,
    pub col: usize,
}

/// Write events; the slice must already be sorted by timestamp.
pub fn write_events(path: &Path, events: &[LightningEvent]) -> Result<()> {
    if events.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
        return Err(Error::Data("events must be sorted by timestamp".into()));
    }
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["timestamp", "row", "col"])?;
    for e in events {
        wtr.write_record([
            e.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
            e.row.to_string(),
            e.col.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Read events, enforcing the header layout and sort order.
pub fn read_events(path: &Path) -> Result<Vec<LightningEvent>> {
    let mut rdr = csv::Reader::from_path(path)?;
    {
        let headers = rdr.headers()?;
        let expect = ["timestamp", "row", "col"];
        if headers.len() != 3 || headers.iter().zip(expect).any(|(a, b)| a != b) {
            return Err(Error::Data(format!(
                "event file {} has header {:?}, expected timestamp,row,col",
                path.display(),
                headers
            )));
        }
    }
    let mut events = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| {
                Error::Data(format!(
                    "event file {} record {} has {} fields",
                    path.display(),
                    line + 2,
                    rec.len()
                ))
            })
        };
        let ts = DateTime::parse_from_rfc3339(parse(0)?)
            .map_err(|e| {
                Error::Data(format!(
                    "event file {} record {}: bad timestamp: {e}",
                    path.display(),
                    line + 2
                ))
            })?
            .with_timezone(&Utc);
        let row: usize = parse(1)?.parse().map_err(|e| {
            Error::Data(format!(
                "event file {} record {}: bad row: {e}",
                path.display(),
                line + 2
            ))
        })?;
        let col: usize = parse(2)?.parse().map_err(|e| {
            Error::Data(format!(
                "event file {} record {}: bad col: {e}",
                path.display(),
                line + 2
            ))
        })?;
        events.push(LightningEvent {
            timestamp: ts,
            row,
            col,
        });
    }
    if events.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
        return Err(Error::Data(format!(
            "event file {} is not sorted by timestamp",
            path.display()
        )));
    }
    Ok(events)
}

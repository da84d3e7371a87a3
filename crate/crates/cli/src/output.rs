use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::args::Format;

/// Opens `path` for writing, or standard output when `None`.
pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot write {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Serializes a report either as pretty JSON or as flattened `key,value` CSV.
///
/// Both encodings carry the same shortest round-trip decimal strings.
pub fn write_report<T: Serialize>(w: &mut dyn Write, value: &T, format: Format) -> Result<()> {
    let json = serde_json::to_value(value)?;
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, &json)?;
            writeln!(w)?;
        }
        Format::Csv => {
            let mut rows = Vec::new();
            flatten("", &json, &mut rows);
            let mut csv = csv::Writer::from_writer(&mut *w);
            csv.write_record(["key", "value"])?;
            for (k, v) in rows {
                csv.write_record([k, v])?;
            }
            csv.flush()?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Dotted-path leaves of a JSON tree; array elements are keyed by index.
pub fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_owned()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                flatten(&join(k), child, out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                flatten(&join(&i.to_string()), child, out);
            }
        }
        Value::String(s) => out.push((prefix.to_owned(), s.clone())),
        Value::Null => out.push((prefix.to_owned(), String::new())),
        other => out.push((prefix.to_owned(), other.to_string())),
    }
}

/// Writes rows of plain values as CSV with the given header.
pub fn write_rows<R: Serialize>(w: &mut dyn Write, header: &[&str], rows: &[R]) -> Result<()> {
    let mut csv = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(&mut *w);
    csv.write_record(header)?;
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    drop(csv);
    w.flush()?;
    Ok(())
}

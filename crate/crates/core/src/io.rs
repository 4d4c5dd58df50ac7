//! Newline-delimited JSON, schema tagging and atomic file output.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::SCHEMA_VERSION;

/// Field carrying the schema tag on every emitted NDJSON record.
pub const SCHEMA_FIELD: &str = "schema";

/// A line that could not be decoded.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Decodes one record per non-blank line. Line numbers are 1-based.
///
/// A `schema` field, if present, must be `v1`; it is removed before the
/// record is decoded so that it never leaks into passthrough fields.
pub fn parse_ndjson<T: DeserializeOwned>(text: &str) -> Vec<Result<(usize, T), LineError>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(idx, l)| {
            let line = idx + 1;
            let err = |message: String| LineError { line, message };
            let mut value: Value = serde_json::from_str(l).map_err(|e| err(e.to_string()))?;
            if let Value::Object(map) = &mut value {
                match map.remove(SCHEMA_FIELD) {
                    None => {}
                    Some(Value::String(s)) if s == SCHEMA_VERSION => {}
                    Some(other) => return Err(err(format!("unsupported schema {other}"))),
                }
            }
            serde_json::from_value(value).map(|v| (line, v)).map_err(|e| err(e.to_string()))
        })
        .collect()
}

/// Like [`parse_ndjson`] but fails on the first bad line.
pub fn parse_ndjson_strict<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, LineError> {
    parse_ndjson(text).into_iter().map(|r| r.map(|(_, v)| v)).collect()
}

/// Encodes a record as one JSON line, schema tag first, without the newline.
pub fn to_ndjson_line<T: Serialize>(record: &T) -> String {
    let value = serde_json::to_value(record).expect("records serialize to JSON");
    let mut out = Map::new();
    out.insert(SCHEMA_FIELD.to_string(), Value::String(SCHEMA_VERSION.to_string()));
    match value {
        Value::Object(map) => out.extend(map.into_iter().filter(|(k, _)| k != SCHEMA_FIELD)),
        other => {
            out.insert("value".to_string(), other);
        }
    }
    Value::Object(out).to_string()
}

/// Encodes all records, one per line, with a trailing newline.
pub fn to_ndjson<'a, T: Serialize + 'a>(records: impl IntoIterator<Item = &'a T>) -> String {
    let mut buf = String::new();
    for r in records {
        buf.push_str(&to_ndjson_line(r));
        buf.push('\n');
    }
    buf
}

/// Writes `contents` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn atomic_write(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Reads a UTF-8 file into memory.
pub fn read_text(path: &Path) -> std::io::Result<String> {
    fs::read_to_string(path)
}

/// CSV reader that tolerates `#` comment lines such as the schema header.
pub fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Row {
        id: String,
        x: f64,
    }

    #[test]
    fn schema_goes_first_and_is_stripped_on_read() {
        let line = to_ndjson_line(&Row { id: "a".into(), x: 1.5 });
        assert_eq!(line, r#"{"schema":"v1","id":"a","x":1.5}"#);
        let back: Vec<Row> = parse_ndjson_strict(&line).unwrap();
        assert_eq!(back, vec![Row { id: "a".into(), x: 1.5 }]);
    }

    #[test]
    fn bad_lines_carry_their_number() {
        let text = "{\"id\":\"a\",\"x\":1}\n\n{oops}\n{\"schema\":\"v9\",\"id\":\"b\",\"x\":2}\n";
        let rows = parse_ndjson::<Row>(text);
        assert_eq!(rows.len(), 3);
        assert!(rows[0].is_ok());
        assert_eq!(rows[1].as_ref().unwrap_err().line, 3);
        assert_eq!(rows[2].as_ref().unwrap_err().line, 4);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}

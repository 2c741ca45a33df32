//! Deterministic JSON persistence for pipeline artifacts.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Canonical serialized form: pretty JSON with a trailing newline.
pub fn to_canonical_json<A: Serialize>(artifact: &A) -> Result<String> {
    let mut text = serde_json::to_string_pretty(artifact)
        .map_err(|e| Error::parse(format!("cannot serialize artifact: {e}"), ""))?;
    text.push('\n');
    Ok(text)
}

pub fn persist_artifact<A: Serialize>(artifact: &A, path: &Path) -> Result<()> {
    let text = to_canonical_json(artifact)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_artifact<A: DeserializeOwned>(path: &Path) -> Result<A> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_artifact(&text)
}

pub fn parse_artifact<A: DeserializeOwned>(text: &str) -> Result<A> {
    serde_json::from_str(text).map_err(|e| {
        let offset = byte_offset(text, e.line(), e.column());
        Error::Parse {
            message: format!("{e} (byte offset {offset})"),
            raw: String::new(),
            offset: Some(offset),
        }
    })
}

/// Converts serde_json's 1-based line / column into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupt_input_reports_offset() {
        let text = "{\n  \"a\": 1,\n  \"b\": tru\n}";
        let err = parse_artifact::<serde_json::Value>(text).unwrap_err();
        match err {
            Error::Parse { offset: Some(o), .. } => {
                assert!(o >= text.find("tru").unwrap(), "offset {o}");
                assert!(o <= text.len());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn floats_survive_a_round_trip_bit_for_bit() {
        let values = vec![0.10607340931892395f64, -0.00021227753241564703, 0.013995661400258541, 1e-300, 0.1 + 0.2];
        let back: Vec<f64> = parse_artifact(&to_canonical_json(&values).unwrap()).unwrap();
        assert_eq!(
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = persist_artifact(&1u32, &blocker.join("nested.json")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}

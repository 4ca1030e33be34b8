//! Output plumbing. Payloads go to `--out` or stdout; JSON is pretty-printed
//! with stable field order so identical runs produce identical bytes.

use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;

use crate::CliError;

pub fn write_text(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Io(format!("cannot write to stdout: {e}")))
        }
    }
}

pub fn write_json<T: Serialize>(out: &Option<PathBuf>, payload: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(payload)
        .map_err(|e| CliError::Io(format!("serialization failed: {e}")))?;
    text.push('\n');
    write_text(out, &text)
}

/// Renders rows through the csv writer so quoting stays correct.
pub fn write_csv(
    out: &Option<PathBuf>,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Io(format!("csv write failed: {e}"));
    writer.write_record(header).map_err(fail)?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        writer.write_record(row).map_err(fail)?;
    }
    let bytes = writer.into_inner().map_err(|e| CliError::Io(format!("csv write failed: {e}")))?;
    let text = String::from_utf8(bytes).expect("csv output is utf-8");
    write_text(out, &text)
}

/// Snake-case tag of a unit enum variant, for CSV cells.
pub fn tag<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value).expect("tag serialization") {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

pub fn fmt_opt<T: ToString>(value: &Option<T>) -> String {
    value.as_ref().map(T::to_string).unwrap_or_default()
}

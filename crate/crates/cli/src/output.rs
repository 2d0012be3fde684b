//! CSV tables with a config header line and a `schema_version` column.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::{CliError, SCHEMA_VERSION};

/// Plain `Display` of a float: shortest representation that round-trips.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Writes `# glbulk <version> schema_version=<v> config=<json>` followed by
/// the table; a `schema_version` column is appended to every row.
pub fn write_csv(path: &Path, header: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(
        f,
        "# glbulk {} schema_version={SCHEMA_VERSION} config={header}",
        env!("CARGO_PKG_VERSION")
    )?;
    let mut w = csv::Writer::from_writer(f);
    let mut head: Vec<&str> = columns.to_vec();
    head.push("schema_version");
    w.write_record(&head)?;
    let v = SCHEMA_VERSION.to_string();
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        w.write_record(row.iter().map(String::as_str).chain(std::iter::once(v.as_str())))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one line per record.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    for l in lines {
        writeln!(f, "{l}")?;
    }
    f.flush()?;
    Ok(())
}

/// Aligned plain-text table for the terminal.
pub fn print_table(columns: &[&str], rows: &[Vec<String>]) {
    let mut width: Vec<usize> = columns.iter().map(|c| c.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let s: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
        println!("{}", s.join("  "));
    };
    line(columns.to_vec());
    for r in rows {
        line(r.iter().map(String::as_str).collect());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_schema_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, "{\"a\":1}", &["x", "y"], &[vec![num(0.5), opt(None)]]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# glbulk ") && lines[0].ends_with("config={\"a\":1}"));
        assert_eq!(lines[1], "x,y,schema_version");
        assert_eq!(lines[2], format!("0.5,,{SCHEMA_VERSION}"));
    }
}

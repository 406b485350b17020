use std::fs;
use std::path::Path;

use adaptevo::{parse_newick, PhyloTree, TipDataset};

use crate::args::LogAxes;
use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_tree(path: &Path) -> CliResult<PhyloTree> {
    let text = read_text(path)?;
    parse_newick(text.trim()).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn parse_cell(raw: &str, column: &str, line: u64) -> CliResult<f64> {
    let v = raw.trim();
    if v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan") {
        return Err(CliError::Input(format!("missing value in column {column} at line {line}")));
    }
    let x: f64 = v
        .parse()
        .map_err(|_| CliError::Input(format!("non-numeric value {v:?} in column {column} at line {line}")))?;
    if !x.is_finite() {
        return Err(CliError::Input(format!("non-finite value {v:?} in column {column} at line {line}")));
    }
    Ok(x)
}

fn log10(v: f64, column: &str, line: u64) -> CliResult<f64> {
    if v > 0.0 {
        Ok(v.log10())
    } else {
        Err(CliError::Input(format!("cannot take log10 of {v} in column {column} at line {line}")))
    }
}

/// Reads a headered CSV or TSV with (at least) the columns species, x, y.
/// The delimiter is a tab if the header line contains one, else a comma.
pub fn parse_dataset(text: &str, log: Option<LogAxes>) -> CliResult<TipDataset> {
    let header_line = text.lines().next().unwrap_or("");
    let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CliError::Input(format!("cannot read header: {e}")))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| CliError::Input(format!("missing column {name:?} in header")))
    };
    let (is, ix, iy) = (find("species")?, find("x")?, find("y")?);
    let extra: Vec<&str> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| ![is, ix, iy].contains(i))
        .map(|(_, h)| h)
        .collect();
    if !extra.is_empty() {
        log::warn!("ignoring extra columns: {}", extra.join(", "));
    }
    let (mut labels, mut xs, mut ys) = (Vec::new(), Vec::new(), Vec::new());
    for (row, record) in reader.records().enumerate() {
        let line = row as u64 + 2;
        let record = record.map_err(|e| {
            let line = e.position().map_or(line, |p| p.line());
            CliError::Input(format!("malformed row at line {line}: {e}"))
        })?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let species = field(is).to_string();
        if species.is_empty() {
            return Err(CliError::Input(format!("missing species name at line {line}")));
        }
        let mut x = parse_cell(field(ix), "x", line)?;
        let mut y = parse_cell(field(iy), "y", line)?;
        if let Some(axes) = log {
            if axes.x() {
                x = log10(x, "x", line)?;
            }
            if axes.y() {
                y = log10(y, "y", line)?;
            }
        }
        labels.push(species);
        xs.push(x);
        ys.push(y);
    }
    if labels.is_empty() {
        return Err(CliError::Input("data file has no rows".into()));
    }
    Ok(TipDataset::new(labels, xs, ys)?)
}

pub fn read_dataset(path: &Path, log: Option<LogAxes>) -> CliResult<TipDataset> {
    let text = read_text(path)?;
    parse_dataset(&text, log).map_err(|e| match e {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

//! Loading models and instance files.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use suffx_core::{Circuit, Ensemble};

use crate::error::{CliError, CliResult};

/// Rows of a 0/1 instance table.
#[derive(Debug, Clone, PartialEq)]
pub struct Instances {
    pub names: Vec<String>,
    pub rows: Vec<Vec<bool>>,
    pub labels: Option<Vec<String>>,
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::input(&path.display().to_string(), e))
}

pub fn load_circuit(path: &Path) -> CliResult<Circuit> {
    Circuit::load(open(path)?).map_err(|e| CliError::input(&path.display().to_string(), e))
}

pub fn load_ensemble(path: &Path) -> CliResult<Ensemble> {
    Ensemble::load(open(path)?).map_err(|e| CliError::input(&path.display().to_string(), e))
}

fn parse_bit(cell: &str) -> Option<bool> {
    match cell.trim() {
        "0" | "false" => Some(false),
        "1" | "true" => Some(true),
        _ => None,
    }
}

/// Reads a delimited table with a header of feature names and one full
/// instance per row. A `label` column is kept aside for annotation.
pub fn read_instances<R: std::io::Read>(reader: R, source: &str) -> CliResult<Instances> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| CliError::input(source, e))?
        .clone();
    let label_col = header.iter().position(|h| h == "label");
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_col)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut rows = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::input(source, e))?;
        let mut row = Vec::with_capacity(names.len());
        for (i, cell) in record.iter().enumerate() {
            if Some(i) == label_col {
                labels.as_mut().unwrap().push(cell.to_string());
                continue;
            }
            let bit = parse_bit(cell).ok_or_else(|| {
                CliError::input(
                    source,
                    format!("row {}: expected 0 or 1 in column {:?}, got {cell:?}", line + 1, header[i].to_string()),
                )
            })?;
            row.push(bit);
        }
        rows.push(row);
    }
    Ok(Instances { names, rows, labels })
}

pub fn load_instances(path: &Path) -> CliResult<Instances> {
    read_instances(open(path)?, &path.display().to_string())
}

impl Instances {
    /// Checks the table against the models' feature count.
    pub fn check(&self, n: usize, source: &str) -> CliResult<()> {
        if self.names.len() != n {
            return Err(CliError::input(
                source,
                format!("{} feature columns, models have {n}", self.names.len()),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_column_is_set_aside() {
        let text = "a,label,b\n1,yes,0\n0,no,1\n";
        let inst = read_instances(text.as_bytes(), "t").unwrap();
        assert_eq!(inst.names, vec!["a", "b"]);
        assert_eq!(inst.rows, vec![vec![true, false], vec![false, true]]);
        assert_eq!(inst.labels.unwrap(), vec!["yes", "no"]);
    }

    #[test]
    fn bad_cells_are_reported() {
        let err = read_instances("a,b\n1,2\n".as_bytes(), "t").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(read_instances("a,b\n1\n".as_bytes(), "t").is_err());
    }
}

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{DataAtom, DataDistribution};

/// Reads a finite data law from CSV.
///
/// The header must be `x_1, ..., x_d, y` with an optional trailing
/// `weight` column; without it atoms are uniform. Weights are normalized
/// to sum to one.
pub fn load_dataset(path: &Path) -> Result<DataDistribution> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let weighted = header.last().map(String::as_str) == Some("weight");
    let d = header.len().saturating_sub(1 + usize::from(weighted));
    let expected: Vec<String> = (1..=d)
        .map(|i| format!("x_{i}"))
        .chain(["y".to_owned()])
        .chain(weighted.then(|| "weight".to_owned()))
        .collect();
    if d == 0 || header != expected {
        return Err(parse_err(
            1,
            format!("header must be x_1..x_d, y[, weight]; got {}", header.join(",")),
        ));
    }

    let mut atoms = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", header.len(), record.len())));
        }
        let mut values = Vec::with_capacity(record.len());
        for (field, name) in record.iter().zip(&header) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("column {name}: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {name}: value is not finite")));
            }
            values.push(v);
        }
        let weight = if weighted { values[d + 1] } else { 1.0 };
        if weight < 0.0 {
            return Err(parse_err(line, format!("negative weight {weight}")));
        }
        atoms.push(DataAtom::new(values[..d].to_vec(), values[d], weight));
    }
    if atoms.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    DataDistribution::normalized(atoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn weights_are_normalized() {
        let f = file("x_1,x_2,y,weight\n1.0,0.0,1.0,0.25\n0.0,1.0,-1.0,0.75\n");
        let pi = load_dataset(f.path()).unwrap();
        assert_eq!(pi.len(), 2);
        assert_eq!(pi.dim(), 2);
        let total: f64 = pi.atoms().iter().map(|a| a.weight).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(pi.atoms()[1].weight, 0.75);

        let f = file("x_1,y,weight\n1.0,1.0,1\n2.0,0.0,3\n");
        assert_eq!(load_dataset(f.path()).unwrap().atoms()[0].weight, 0.25);
    }

    #[test]
    fn missing_weight_column_is_uniform() {
        let f = file("x_1,y\n0.5,1\n-0.5,0\n1.5,2\n");
        let pi = load_dataset(f.path()).unwrap();
        assert!(pi.atoms().iter().all(|a| (a.weight - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(pi.x_max(), 1.5);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let f = file("x_1,y\n0.5,1\nabc,0\n");
        match load_dataset(f.path()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("x_1"));
            }
            other => panic!("{other:?}"),
        }
        let f = file("x_1,y,weight\n0.5,1,-2\n");
        assert!(matches!(load_dataset(f.path()), Err(Error::Parse { line: 2, .. })));
        let f = file("a,b\n1,2\n");
        assert!(matches!(load_dataset(f.path()), Err(Error::Parse { line: 1, .. })));
    }
}

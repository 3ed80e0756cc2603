//! Numeric CSV tables with named columns.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{CausalError, Result};

/// A fully numeric CSV file held column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    headers: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| CausalError::InvalidArgument(format!("csv header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut columns = vec![Vec::new(); headers.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CausalError::InvalidArgument(format!("csv row {}: {e}", row + 1)))?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    CausalError::InvalidArgument(format!(
                        "column {} row {}: '{field}' is not a number",
                        headers[j],
                        row + 1
                    ))
                })?;
                columns[j].push(v);
            }
        }
        Ok(Self { headers, columns })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| CausalError::InvalidArgument(format!("{}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| CausalError::InvalidArgument(format!("unknown column '{name}'")))
    }

    /// Integer-valued column (unit, time, group or period identifiers).
    pub fn id_column(&self, name: &str) -> Result<Vec<i64>> {
        self.column(name)?
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 && v.abs() < 9.0e15 {
                    Ok(v as i64)
                } else {
                    Err(CausalError::InvalidArgument(format!(
                        "column '{name}' must hold integer identifiers, found {v}"
                    )))
                }
            })
            .collect()
    }

    /// Columns stacked into an `n x names.len()` matrix.
    pub fn matrix(&self, names: &[String]) -> Result<DMatrix<f64>> {
        let cols = names.iter().map(|n| self.column(n)).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(self.n_rows(), cols.len(), |i, j| cols[j][i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_named_columns() {
        let t = CsvTable::from_reader("y, d ,x\n1,0,2.5\n3,1,-1\n".as_bytes()).unwrap();
        assert_eq!(t.column("d").unwrap(), &[0.0, 1.0]);
        assert_eq!(t.matrix(&["x".into(), "y".into()]).unwrap()[(1, 1)], 3.0);
        assert!(t.column("z").unwrap_err().to_string().contains("unknown column"));
    }

    #[test]
    fn rejects_text_and_fractional_ids() {
        assert!(CsvTable::from_reader("y\nabc\n".as_bytes()).is_err());
        let t = CsvTable::from_reader("u\n1.5\n".as_bytes()).unwrap();
        assert!(t.id_column("u").is_err());
    }
}

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SYMMETRY_TOL: f64 = 1e-9;

/// Validated square, symmetric, non-negative matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMatrix {
    pub session_id: String,
    values: Tensor,
}

impl ConnectivityMatrix {
    /// Validates `values` (`[N, N]`); asymmetry up to 1e-9 is averaged away.
    pub fn new(session_id: impl Into<String>, values: Tensor) -> Result<Self> {
        let shape = values.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(Error::Data(format!("connectivity matrix must be square, got {shape:?}")));
        }
        values.ensure_finite("connectivity matrix")?;
        let n = shape[0];
        let mut sym = values.clone();
        for i in 0..n {
            if values.get(&[i, i]) != 0.0 {
                return Err(Error::Data(format!("diagonal entry ({i},{i}) is not zero")));
            }
            for j in 0..n {
                let (a, b) = (values.get(&[i, j]), values.get(&[j, i]));
                if a < 0.0 {
                    return Err(Error::Data(format!("negative entry {a} at ({i},{j})")));
                }
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(Error::Data(format!("asymmetric entries ({i},{j})={a} and ({j},{i})={b}")));
                }
                sym.set(&[i, j], 0.5 * (a + b));
            }
        }
        Ok(ConnectivityMatrix {
            session_id: session_id.into(),
            values: sym,
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.shape()[0]
    }

    /// Number of undirected edges with positive weight.
    pub fn n_edges(&self) -> usize {
        let n = self.n();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.values.get(&[i, j]) > 0.0)
            .count()
    }
}

/// Parses comma-separated rows into an `expected × expected` matrix.
pub fn parse_conn_csv(text: &str, session_id: &str, expected: usize) -> Result<ConnectivityMatrix> {
    let mut data = Vec::with_capacity(expected * expected);
    let mut rows = 0;
    for (r, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(Error::Data(format!(
                "row {} has {} columns, expected {expected}",
                r + 1,
                fields.len()
            )));
        }
        for f in fields {
            data.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("row {}: `{f}` is not a number", r + 1)))?,
            );
        }
        rows += 1;
    }
    if rows != expected {
        return Err(Error::Data(format!("matrix has {rows} rows, expected {expected}")));
    }
    ConnectivityMatrix::new(session_id, Tensor::new(&[expected, expected], data)?)
}

pub fn read_conn_csv(path: &Path, session_id: &str, expected: usize) -> Result<ConnectivityMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_conn_csv(&text, session_id, expected).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes one row per line with shortest round-trip float formatting.
pub fn write_conn_csv(path: &Path, m: &Tensor) -> Result<()> {
    let n = m.shape()[0];
    let mut out = Vec::new();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{:?}", m.get(&[i, j]))).collect();
        writeln!(out, "{}", row.join(",")).expect("write to Vec");
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

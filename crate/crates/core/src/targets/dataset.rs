use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` observations of dimension `p`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<f64>,
    n: usize,
    p: usize,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    n: usize,
    p: usize,
    seed: u64,
    model: serde_json::Value,
}

impl Dataset {
    pub fn new(points: Vec<f64>, p: usize, seed: u64) -> Result<Self> {
        if p == 0 || points.is_empty() || !points.len().is_multiple_of(p) {
            return Err(Error::invalid(
                "points",
                format!("{} values do not form rows of width {p}", points.len()),
            ));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("points", "entries must be finite"));
        }
        Ok(Dataset {
            n: points.len() / p,
            points,
            p,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.p)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.p];
        for row in self.rows() {
            sum.iter_mut().zip(row).for_each(|(s, x)| *s += x);
        }
        sum.iter().map(|s| s / self.n as f64).collect()
    }

    /// One observation per row, columns `x1..xp`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record((1..=self.p).map(|j| format!("x{j}")))?;
        for row in self.rows() {
            wtr.write_record(row.iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// JSON sidecar `{n, p, seed, model}` accompanying the CSV.
    pub fn sidecar(&self, model: serde_json::Value) -> serde_json::Value {
        serde_json::to_value(Sidecar {
            n: self.n,
            p: self.p,
            seed: self.seed,
            model,
        })
        .expect("sidecar serializes")
    }

    pub fn read_csv<R: Read>(r: R, sidecar: &serde_json::Value) -> Result<Self> {
        let meta: Sidecar = serde_json::from_value(sidecar.clone())?;
        let mut rdr = csv::Reader::from_reader(r);
        let mut points = Vec::with_capacity(meta.n * meta.p);
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != meta.p {
                return Err(Error::invalid("csv", format!("row has {} columns, expected {}", rec.len(), meta.p)));
            }
            for field in rec.iter() {
                points.push(field.parse::<f64>().map_err(|e| Error::invalid("csv", e.to_string()))?);
            }
        }
        let ds = Dataset::new(points, meta.p, meta.seed)?;
        if ds.n != meta.n {
            return Err(Error::invalid("csv", format!("sidecar says n = {}, file has {}", meta.n, ds.n)));
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_sidecar() {
        let ds = Dataset::new(vec![1.5, -2.0, 0.25, 1e-9], 2, 42).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "x1,x2\n1.5,-2\n0.25,0.000000001\n");
        let side = ds.sidecar(serde_json::json!({"kind": "test"}));
        assert_eq!(side["n"], 2);
        assert_eq!(side["seed"], 42);
        assert_eq!(Dataset::read_csv(&buf[..], &side).unwrap(), ds);
    }

    #[test]
    fn rejects_ragged_or_empty() {
        assert!(Dataset::new(vec![1.0, 2.0, 3.0], 2, 0).is_err());
        assert!(Dataset::new(vec![], 1, 0).is_err());
        assert!(Dataset::new(vec![f64::INFINITY], 1, 0).is_err());
    }
}

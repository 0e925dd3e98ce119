use std::io::{Read, Write};

use super::LikelihoodError;
use crate::sde::Path;
use crate::table;

/// Exact observations `x_{t_i}` of the state at strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    path: Path,
}

impl ObservationSet {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, LikelihoodError> {
        Ok(Self { path: Path::from_scalar(times, values)? })
    }

    pub fn from_path(path: Path) -> Self {
        Self { path }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    pub fn times(&self) -> &[f64] {
        self.path.times()
    }

    pub fn value(&self, i: usize) -> &[f64] {
        self.path.value(i)
    }

    pub fn scalar(&self, i: usize) -> f64 {
        self.path.scalar(i)
    }

    pub fn n_pairs(&self) -> usize {
        self.len().saturating_sub(1)
    }

    /// `(t_{i+1} − t_i, x_{t_i}, x_{t_{i+1}})` for pair `i`.
    pub fn pair(&self, i: usize) -> (f64, &[f64], &[f64]) {
        let t = self.times();
        (t[i + 1] - t[i], self.value(i), self.value(i + 1))
    }

    /// Observations with time reversed (`t ↦ t_max + t_min − t`).
    pub fn reversed(&self) -> Self {
        let t = self.times();
        let (lo, hi) = (t[0], t[t.len() - 1]);
        let n = self.len();
        let times = (0..n).map(|k| hi + lo - t[n - 1 - k]).collect();
        let data = (0..n).rev().flat_map(|k| self.value(k).to_vec()).collect();
        Self { path: Path::new(times, self.dim(), data).expect("reversal preserves validity") }
    }

    /// CSV with header `t,x` (`t,x1,x2,…` for vector states).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), LikelihoodError> {
        let header: Vec<String> = if self.dim() == 1 {
            vec!["t".into(), "x".into()]
        } else {
            self.path.csv_header()
        };
        let rows: Vec<Vec<f64>> = (0..self.len())
            .map(|k| std::iter::once(self.times()[k]).chain(self.value(k).iter().copied()).collect())
            .collect();
        table::write_table_to(w, &header, &rows)?;
        Ok(())
    }

    /// Reads `t,x` or `t,x1[,x2,…]` tables.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, LikelihoodError> {
        let t = table::read_table_from(r)?;
        if t.header.len() < 2 || t.header[0] != "t" {
            return Err(LikelihoodError::InvalidArgument(format!(
                "expected header `t,x` or `t,x1[,…]`, found {:?}",
                t.header
            )));
        }
        let dim = t.header.len() - 1;
        let times = t.column(0);
        let data = t.rows.iter().flat_map(|r| r[1..].iter().copied()).collect();
        Ok(Self { path: Path::new(times, dim, data)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_round_trip() {
        let obs = ObservationSet::new(vec![0.0, 0.1, 0.25], vec![1.0, 1.1, 0.9]).unwrap();
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x\n"));
        assert_eq!(ObservationSet::read_csv(text.as_bytes()).unwrap(), obs);
        let from_path = ObservationSet::read_csv("t,x1\n0,1\n1,2\n".as_bytes()).unwrap();
        assert_eq!(from_path.len(), 2);
    }

    #[test]
    fn rejects_unordered_times() {
        assert!(ObservationSet::new(vec![0.0, 0.2, 0.1], vec![1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn reversal() {
        let obs = ObservationSet::new(vec![0.0, 1.0, 3.0], vec![1.0, 2.0, 5.0]).unwrap();
        let r = obs.reversed();
        assert_eq!(r.times(), [0.0, 2.0, 3.0]);
        assert_eq!(r.path().data(), [5.0, 2.0, 1.0]);
    }
}

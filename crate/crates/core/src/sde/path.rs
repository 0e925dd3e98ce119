use std::io::{Read, Write};

use super::SdeError;
use crate::table::{self, Table};

/// Uniform grid `t_start = t_0 < … < t_n = t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self, SdeError> {
        let g = Self { t_start, t_end, n_steps };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.t_start.is_finite() && self.t_end.is_finite()) || self.t_end <= self.t_start {
            return Err(SdeError::InvalidGrid(format!("need t_end > t_start, got [{}, {}]", self.t_start, self.t_end)));
        }
        if self.n_steps == 0 {
            return Err(SdeError::InvalidGrid("n_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t_start + (self.t_end - self.t_start) * (k as f64 / self.n_steps as f64)
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }
}

/// A trajectory: strictly increasing times with one state vector per time.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    times: Vec<f64>,
    dim: usize,
    data: Vec<f64>,
}

impl Path {
    /// Builds a path from row-major state data (`times.len() * dim` values).
    pub fn new(times: Vec<f64>, dim: usize, data: Vec<f64>) -> Result<Self, SdeError> {
        if dim == 0 {
            return Err(SdeError::InvalidPath("state dimension must be positive".into()));
        }
        if data.len() != times.len() * dim {
            return Err(SdeError::InvalidPath(format!(
                "{} values do not fit {} times of dimension {dim}",
                data.len(),
                times.len()
            )));
        }
        if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(SdeError::InvalidPath(format!("times not strictly increasing at index {}", k + 1)));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(SdeError::InvalidPath("times must be finite".into()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SdeError::InvalidPath(format!("non-finite value at time index {}", i / dim)));
        }
        Ok(Self { times, dim, data })
    }

    pub fn from_scalar(times: Vec<f64>, values: Vec<f64>) -> Result<Self, SdeError> {
        Self::new(times, 1, values)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    /// First coordinate at index `k`.
    pub fn scalar(&self, k: usize) -> f64 {
        self.data[k * self.dim]
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.data.iter().skip(i).step_by(self.dim).copied().collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn last(&self) -> &[f64] {
        self.value(self.len() - 1)
    }

    /// Applies `f` to every state value.
    pub fn map_values(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self, SdeError> {
        Self::new(self.times.clone(), self.dim, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn csv_header(&self) -> Vec<String> {
        std::iter::once("t".to_string()).chain((1..=self.dim).map(|i| format!("x{i}"))).collect()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|k| std::iter::once(self.times[k]).chain(self.value(k).iter().copied()).collect())
            .collect()
    }

    /// CSV with header `t,x1[,x2,…]`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SdeError> {
        Ok(table::write_table_to(w, &self.csv_header(), &self.rows())?)
    }

    pub fn to_csv_string(&self) -> Result<String, SdeError> {
        Ok(table::table_to_string(&self.csv_header(), &self.rows())?)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, SdeError> {
        Self::from_table(table::read_table_from(r)?)
    }

    pub fn from_table(t: Table) -> Result<Self, SdeError> {
        if t.header.len() < 2 || t.header[0] != "t" {
            return Err(SdeError::InvalidPath(format!("expected header `t,x1[,x2,…]`, found {:?}", t.header)));
        }
        let dim = t.header.len() - 1;
        let times = t.column(0);
        let data = t.rows.iter().flat_map(|r| r[1..].iter().copied()).collect();
        Self::new(times, dim, data)
    }
}

/// Realized quadratic variation `Σ_k ‖x_{k+1} − x_k‖²`, summed over coordinates.
pub fn quadratic_variation(path: &Path) -> Result<f64, SdeError> {
    if path.len() < 2 {
        return Err(SdeError::InsufficientData { needed: 2, got: path.len() });
    }
    Ok((1..path.len())
        .map(|k| {
            let a = path.value(k - 1);
            let b = path.value(k);
            a.iter().zip(b).map(|(p, q)| (q - p) * (q - p)).sum::<f64>()
        })
        .sum())
}

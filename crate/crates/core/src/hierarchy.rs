//! Aggregation constraints `u = A b` and the summing matrix `S = [A; I]`.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk form of a hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyFile {
    pub labels_upper: Vec<String>,
    pub labels_bottom: Vec<String>,
    /// One row per upper series, one 0/1 entry per bottom series.
    pub aggregation: Vec<Vec<i64>>,
}

/// A validated hierarchy. Series are always stacked upper block first,
/// `y = [u; b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    aggregation: DMatrix<f64>,
    labels_upper: Vec<String>,
    labels_bottom: Vec<String>,
}

impl Hierarchy {
    pub fn new(
        labels_upper: Vec<String>,
        labels_bottom: Vec<String>,
        aggregation: &[Vec<i64>],
    ) -> Result<Self> {
        let n_u = labels_upper.len();
        let n_b = labels_bottom.len();
        if n_b == 0 {
            return Err(Error::InvalidHierarchy("no bottom series".into()));
        }
        if aggregation.len() != n_u {
            return Err(Error::InvalidHierarchy(format!(
                "aggregation has {} rows but there are {n_u} upper labels",
                aggregation.len()
            )));
        }
        let mut a = DMatrix::zeros(n_u, n_b);
        for (i, row) in aggregation.iter().enumerate() {
            let label = &labels_upper[i];
            if row.len() != n_b {
                return Err(Error::InvalidHierarchy(format!(
                    "aggregation row {i} ('{label}') has {} entries, expected {n_b}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => a[(i, j)] = 1.0,
                    other => {
                        return Err(Error::InvalidHierarchy(format!(
                            "aggregation row {i} ('{label}') has entry {other} at column {j}; entries must be 0 or 1"
                        )))
                    }
                }
            }
            if row.iter().all(|&v| v == 0) {
                return Err(Error::InvalidHierarchy(format!(
                    "aggregation row {i} ('{label}') aggregates no bottom series"
                )));
            }
        }
        let mut seen = HashSet::new();
        for label in labels_upper.iter().chain(labels_bottom.iter()) {
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidHierarchy(format!("duplicate label '{label}'")));
            }
        }
        Ok(Self {
            aggregation: a,
            labels_upper,
            labels_bottom,
        })
    }

    /// Builds a hierarchy from a 0/1 matrix with generated labels `U0.., B0..`.
    pub fn from_aggregation(a: &DMatrix<f64>) -> Result<Self> {
        let rows: Vec<Vec<i64>> = (0..a.nrows())
            .map(|i| {
                (0..a.ncols())
                    .map(|j| {
                        let v = a[(i, j)];
                        if v == 0.0 {
                            0
                        } else if v == 1.0 {
                            1
                        } else {
                            -1
                        }
                    })
                    .collect()
            })
            .collect();
        let upper = (0..a.nrows()).map(|i| format!("U{i}")).collect();
        let bottom = (0..a.ncols()).map(|j| format!("B{j}")).collect();
        Self::new(upper, bottom, &rows)
    }

    /// One upper series equal to the sum of two bottom series.
    pub fn minimal() -> Self {
        Self::new(
            vec!["U".into()],
            vec!["B1".into(), "B2".into()],
            &[vec![1, 1]],
        )
        .expect("static hierarchy is valid")
    }

    pub fn from_file(file: HierarchyFile) -> Result<Self> {
        Self::new(file.labels_upper, file.labels_bottom, &file.aggregation)
    }

    pub fn to_file(&self) -> HierarchyFile {
        HierarchyFile {
            labels_upper: self.labels_upper.clone(),
            labels_bottom: self.labels_bottom.clone(),
            aggregation: (0..self.n_upper())
                .map(|i| {
                    (0..self.n_bottom())
                        .map(|j| self.aggregation[(i, j)] as i64)
                        .collect()
                })
                .collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: HierarchyFile = serde_json::from_str(&text)?;
        Self::from_file(file)
    }

    pub fn n(&self) -> usize {
        self.n_upper() + self.n_bottom()
    }

    pub fn n_upper(&self) -> usize {
        self.labels_upper.len()
    }

    pub fn n_bottom(&self) -> usize {
        self.labels_bottom.len()
    }

    pub fn aggregation(&self) -> &DMatrix<f64> {
        &self.aggregation
    }

    pub fn labels_upper(&self) -> &[String] {
        &self.labels_upper
    }

    pub fn labels_bottom(&self) -> &[String] {
        &self.labels_bottom
    }

    /// All labels in canonical order.
    pub fn labels(&self) -> Vec<String> {
        self.labels_upper
            .iter()
            .chain(self.labels_bottom.iter())
            .cloned()
            .collect()
    }

    /// `S = [A; I]`, `n x n_b`.
    pub fn summing_matrix(&self) -> DMatrix<f64> {
        let (n_u, n_b) = (self.n_upper(), self.n_bottom());
        let mut s = DMatrix::zeros(n_u + n_b, n_b);
        s.view_mut((0, 0), (n_u, n_b)).copy_from(&self.aggregation);
        s.view_mut((n_u, 0), (n_b, n_b)).fill_with_identity();
        s
    }

    /// Splits a stacked vector into `(u, b)`.
    pub fn split(&self, y: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_len(y.len())?;
        let n_u = self.n_upper();
        Ok((y.rows(0, n_u).into_owned(), y.rows(n_u, self.n_bottom()).into_owned()))
    }

    /// `u - A b`; zero iff `y` is coherent.
    pub fn coherence_residual(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let (u, b) = self.split(y)?;
        Ok(u - &self.aggregation * b)
    }

    /// `S b`.
    pub fn aggregate(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.n_bottom() {
            return Err(Error::Dimension(format!(
                "bottom vector has length {}, hierarchy has {} bottom series",
                b.len(),
                self.n_bottom()
            )));
        }
        Ok(self.summing_matrix() * b)
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(Error::Dimension(format!(
                "vector has length {len}, hierarchy has {} series",
                self.n()
            )));
        }
        Ok(())
    }
}

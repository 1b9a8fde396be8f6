use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Increasing time points `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `cells` cells on `[0, horizon]`.
    pub fn uniform(cells: usize, horizon: f64) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidInput("grid needs at least one cell".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "horizon {horizon} must be positive"
            )));
        }
        let points = (0..=cells)
            .map(|j| {
                if j == cells {
                    horizon
                } else {
                    horizon * j as f64 / cells as f64
                }
            })
            .collect();
        Ok(Self { points })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput("grid needs at least two points".into()));
        }
        if points[0] != 0.0 {
            return Err(Error::InvalidInput("grid must start at 0".into()));
        }
        if points
            .windows(2)
            .any(|w| !(w[1] > w[0]) || !w[1].is_finite())
        {
            return Err(Error::InvalidInput(
                "grid points must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn cells(&self) -> usize {
        self.points.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().expect("non-empty grid")
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> f64 {
        self.points[i]
    }

    pub fn width(&self, j: usize) -> f64 {
        self.points[j + 1] - self.points[j]
    }

    pub fn midpoint(&self, j: usize) -> f64 {
        0.5 * (self.points[j] + self.points[j + 1])
    }

    /// Same points within `1e-12` relative to the horizon.
    pub fn same_as(&self, other: &TimeGrid) -> bool {
        let tol = 1e-12 * self.horizon();
        self.points.len() == other.points.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| (a - b).abs() <= tol)
    }

    pub fn widths(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index of the grid point equal to `t` (within a relative `1e-12`).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * self.horizon();
        let pos = self.points.partition_point(|&p| p < t - tol);
        (pos < self.points.len() && (self.points[pos] - t).abs() <= tol).then_some(pos)
    }

    /// Prefix grid `t_0 .. t_upto`.
    pub fn truncate(&self, upto: usize) -> Result<Self> {
        Self::from_points(self.points[..=upto].to_vec())
    }

    /// Every `stride`-th point (the last point is always kept).
    pub fn subsample(&self, stride: usize) -> Result<(Self, Vec<usize>)> {
        if stride == 0 {
            return Err(Error::InvalidInput("stride must be positive".into()));
        }
        let mut idx: Vec<usize> = (0..=self.cells()).step_by(stride).collect();
        if *idx.last().expect("non-empty") != self.cells() {
            idx.push(self.cells());
        }
        let grid = Self::from_points(idx.iter().map(|&i| self.points[i]).collect())?;
        Ok((grid, idx))
    }
}

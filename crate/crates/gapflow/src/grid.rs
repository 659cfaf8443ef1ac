use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite section (x_min, x_max) of the tube with Dirichlet ends in x and a
/// periodic circle of circumference one in y.
///
/// Nodes sit at `(x_min + i*hx, j*hy)` for interior `i in 1..nx` and
/// cyclic `j in 0..ny`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
}

impl TubeGrid {
    pub fn new(x_min: f64, x_max: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(Error::Grid(format!("need x_min < x_max, got ({x_min}, {x_max})")));
        }
        if nx < 3 {
            return Err(Error::Grid(format!("nx must be at least 3, got {nx}")));
        }
        if ny < 4 {
            return Err(Error::Grid(format!("ny must be at least 4, got {ny}")));
        }
        Ok(Self { x_min, x_max, nx, ny, hx: (x_max - x_min) / nx as f64, hy: 1.0 / ny as f64 })
    }

    /// Builds a grid with prescribed spacing; the length must be a whole
    /// number of cells.
    pub fn with_spacing(x_min: f64, x_max: f64, hx: f64, ny: usize) -> Result<Self> {
        if !(hx > 0.0) {
            return Err(Error::Grid(format!("hx must be positive, got {hx}")));
        }
        let cells = (x_max - x_min) / hx;
        let nx = cells.round();
        if (cells - nx).abs() > 1e-8 * cells.max(1.0) {
            return Err(Error::Grid(format!(
                "length {} is not a multiple of hx = {hx}",
                x_max - x_min
            )));
        }
        let mut g = Self::new(x_min, x_max, nx as usize, ny)?;
        g.hx = hx;
        Ok(g)
    }

    pub fn lines(&self) -> usize {
        self.nx - 1
    }

    pub fn dim(&self) -> usize {
        self.lines() * self.ny
    }

    /// x coordinate of interior line `i` (zero based).
    pub fn line_x(&self, i: usize) -> f64 {
        self.x_min + (i + 1) as f64 * self.hx
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.hy
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.lines()).map(|i| self.line_x(i)).collect()
    }

    /// Interior line nearest to `x`, or a domain error when `x` is not
    /// strictly inside the section.
    pub fn snap_line(&self, x: f64) -> Result<usize> {
        if !(x > self.x_min && x < self.x_max) {
            return Err(Error::Domain(format!(
                "x = {x} outside ({}, {})",
                self.x_min, self.x_max
            )));
        }
        let k = ((x - self.x_min) / self.hx).round() as isize;
        Ok(k.clamp(1, self.nx as isize - 1) as usize - 1)
    }
}

/// Mesh widths shared by every truncation of one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub hx: f64,
    pub ny: usize,
}

impl Resolution {
    pub fn new(hx: f64, ny: usize) -> Result<Self> {
        if !(hx > 0.0 && hx.is_finite()) {
            return Err(Error::Grid(format!("hx must be positive, got {hx}")));
        }
        if ny < 4 {
            return Err(Error::Grid(format!("ny must be at least 4, got {ny}")));
        }
        Ok(Self { hx, ny })
    }

    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    /// Grid on `(a, b)`; the length must be a whole number of cells.
    pub fn grid(&self, a: f64, b: f64) -> Result<TubeGrid> {
        TubeGrid::with_spacing(a, b, self.hx, self.ny)
    }

    /// Nearest multiple of `hx`.
    pub fn snap(&self, x: f64) -> f64 {
        (x / self.hx).round() * self.hx
    }

    /// Number of cells in a length that is a multiple of `hx`.
    pub fn cells(&self, len: f64) -> usize {
        (len / self.hx).round().max(0.0) as usize
    }
}

/// Potential values on the nodes of a grid, line-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    pub grid: TubeGrid,
    pub values: Vec<f64>,
    pub nonneg: bool,
}

impl PotentialField {
    pub fn new(grid: TubeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.dim() {
            return Err(Error::Domain(format!(
                "potential has {} values, grid has {} nodes",
                values.len(),
                grid.dim()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite potential value {v}")));
        }
        let nonneg = values.iter().all(|&v| v >= 0.0);
        Ok(Self { grid, values, nonneg })
    }

    pub fn zeros(grid: TubeGrid) -> Self {
        Self { grid, values: vec![0.0; grid.dim()], nonneg: true }
    }

    pub fn at(&self, line: usize, j: usize) -> f64 {
        self.values[line * self.grid.ny + j]
    }

    pub fn scaled(&self, s: f64) -> Self {
        let values: Vec<f64> = self.values.iter().map(|v| v * s).collect();
        let nonneg = values.iter().all(|&v| v >= 0.0);
        Self { grid: self.grid, values, nonneg }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circumference_is_one() {
        for ny in [4, 5, 8, 12, 16, 32, 64] {
            let g = TubeGrid::new(-1.0, 1.0, 10, ny).unwrap();
            assert_eq!(g.ny as f64 * g.hy, 1.0);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(TubeGrid::new(1.0, 0.0, 10, 8).is_err());
        assert!(TubeGrid::new(0.0, 1.0, 2, 8).is_err());
        assert!(TubeGrid::new(0.0, 1.0, 10, 3).is_err());
        assert!(TubeGrid::with_spacing(0.0, 1.0, 0.3, 8).is_err());
    }

    #[test]
    fn snapping() {
        let g = TubeGrid::with_spacing(-2.0, 2.0, 0.25, 4).unwrap();
        assert_eq!(g.lines(), 15);
        let i = g.snap_line(0.1).unwrap();
        assert_eq!(g.line_x(i), 0.0);
        assert!(g.snap_line(2.0).is_err());
        assert!(g.snap_line(-3.0).is_err());
    }
}

//! Quantized ground plane.
//!
//! Cell `(i, j)` is centred at `origin + (j, i) * cell_size`: columns run
//! along world x, rows along world y.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundGrid {
    /// World coordinates (meters) of the centre of cell (0, 0).
    pub origin: [f64; 2],
    /// Side length of a square cell, meters.
    pub cell_size: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GroundGrid {
    pub fn new(origin: [f64; 2], cell_size: f64, rows: usize, cols: usize) -> Result<Self> {
        let g = Self {
            origin,
            cell_size,
            rows,
            cols,
        };
        g.validate()?;
        Ok(g)
    }

    /// Grid whose cells tile `[0, width] x [0, depth]` exactly (up to rounding).
    pub fn covering(width: f64, depth: f64, cell_size: f64) -> Result<Self> {
        let cols = (width / cell_size).round().max(1.0) as usize;
        let rows = (depth / cell_size).round().max(1.0) as usize;
        Self::new([cell_size / 2.0, cell_size / 2.0], cell_size, rows, cols)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::Config(format!("cell size {}", self.cell_size)));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config(format!("grid {}x{}", self.rows, self.cols)));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("non-finite grid origin".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_to_world(&self, i: usize, j: usize) -> Result<[f64; 2]> {
        if i >= self.rows || j >= self.cols {
            return Err(Error::OutOfRange {
                row: i,
                col: j,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(self.center(i, j))
    }

    /// Unchecked cell centre.
    #[inline]
    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + j as f64 * self.cell_size,
            self.origin[1] + i as f64 * self.cell_size,
        ]
    }

    /// Nearest cell centre, or `None` outside the grid.
    pub fn world_to_cell(&self, x: &[f64; 2]) -> Option<(usize, usize)> {
        let fj = (x[0] - self.origin[0]) / self.cell_size;
        let fi = (x[1] - self.origin[1]) / self.cell_size;
        let inside = |f: f64, n: usize| f >= -0.5 && f < n as f64 - 0.5;
        if !inside(fi, self.rows) || !inside(fj, self.cols) {
            return None;
        }
        // floor(f + 0.5) keeps the closed lower edge -0.5 inside cell 0.
        let i = ((fi + 0.5).floor() as usize).min(self.rows - 1);
        let j = ((fj + 0.5).floor() as usize).min(self.cols - 1);
        Some((i, j))
    }

    /// Two channels: x normalized to [-1, 1] across columns, y across rows.
    pub fn coordinate_map<T: Real>(&self) -> Tensor<T> {
        let norm = |k: usize, n: usize| {
            if n > 1 {
                T::lit(-1.0 + 2.0 * k as f64 / (n - 1) as f64)
            } else {
                T::zero()
            }
        };
        let mut t = Tensor::zeros(2, self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(0, i, j, norm(j, self.cols));
                t.set(1, i, j, norm(i, self.rows));
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(rows: usize, cols: usize) -> GroundGrid {
        GroundGrid::new([0.0, 0.0], 0.1, rows, cols).unwrap()
    }

    #[test]
    fn cell_centres() {
        let g = grid(10, 10);
        assert_eq!(g.cell_to_world(0, 0).unwrap(), [0.0, 0.0]);
        let p = g.cell_to_world(3, 5).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.3).abs() < 1e-15);
        assert!(matches!(
            g.cell_to_world(10, 0),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn exhaustive_round_trip() {
        let g = GroundGrid::new([-1.3, 2.7], 0.1, 7, 9).unwrap();
        for i in 0..7 {
            for j in 0..9 {
                assert_eq!(
                    g.world_to_cell(&g.cell_to_world(i, j).unwrap()),
                    Some((i, j))
                );
            }
        }
    }

    #[test]
    fn quantization_rounds_to_nearest() {
        let g = grid(10, 10);
        assert_eq!(g.world_to_cell(&[0.04, 0.0]), Some((0, 0)));
        assert_eq!(g.world_to_cell(&[0.06, 0.0]), Some((0, 1)));
        assert_eq!(g.world_to_cell(&[-1.0, -1.0]), None);
        assert_eq!(g.world_to_cell(&[-0.05, -0.05]), Some((0, 0)));
        assert_eq!(g.world_to_cell(&[0.96, 0.0]), None);
    }

    #[test]
    fn quantization_error_is_at_most_half_a_cell() {
        let g = GroundGrid::new([0.3, -0.2], 0.25, 40, 60).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x = [
                rng.gen_range(0.3 - 0.125..0.3 + 59.5 * 0.25),
                rng.gen_range(-0.2 - 0.125..-0.2 + 39.5 * 0.25),
            ];
            let (i, j) = g.world_to_cell(&x).unwrap();
            let c = g.cell_to_world(i, j).unwrap();
            assert!((c[0] - x[0]).abs() <= 0.125 + 1e-12);
            assert!((c[1] - x[1]).abs() <= 0.125 + 1e-12);
        }
    }

    #[test]
    fn coordinate_map_endpoints() {
        let m = grid(3, 3).coordinate_map::<f32>();
        for i in 0..3 {
            assert_eq!(
                [m.get(0, i, 0), m.get(0, i, 1), m.get(0, i, 2)],
                [-1.0, 0.0, 1.0]
            );
            assert_eq!(
                [m.get(1, 0, i), m.get(1, 1, i), m.get(1, 2, i)],
                [-1.0, 0.0, 1.0]
            );
        }
        let m = grid(1, 1).coordinate_map::<f32>();
        assert_eq!(m.data(), &[0.0, 0.0]);
    }

    #[test]
    fn coordinate_map_structure() {
        let g = grid(5, 8);
        let m = g.coordinate_map::<f64>();
        for i in 0..5 {
            for j in 0..8 {
                assert_eq!(m.get(0, i, j), m.get(0, 0, j));
                assert_eq!(m.get(1, i, j), m.get(1, i, 0));
                assert!(m.get(0, i, j).abs() <= 1.0 && m.get(1, i, j).abs() <= 1.0);
            }
        }
    }
}

//! Equidistant scalar fields over one die.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An `nx × ny` field of bins, row-major with bin `(0, 0)` at the lower-left
/// corner of the die. Value units depend on use: W/µm² for power, K for
/// temperature, a fraction for TSV density.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D<T> {
    nx: usize,
    ny: usize,
    pitch: (f64, f64),
    values: Vec<T>,
}

impl<T: Scalar> Grid2D<T> {
    pub fn zeros(nx: usize, ny: usize, pitch: (f64, f64)) -> Result<Self> {
        Self::filled(nx, ny, pitch, T::zero())
    }

    pub fn filled(nx: usize, ny: usize, pitch: (f64, f64), value: T) -> Result<Self> {
        check_dims(nx, ny)?;
        check_pitch(pitch)?;
        Ok(Self { nx, ny, pitch, values: vec![value; nx * ny] })
    }

    pub fn from_values(nx: usize, ny: usize, pitch: (f64, f64), values: Vec<T>) -> Result<Self> {
        check_dims(nx, ny)?;
        check_pitch(pitch)?;
        if values.len() != nx * ny {
            return Err(Error::domain(format!(
                "grid {nx}x{ny} needs {} values, got {}",
                nx * ny,
                values.len()
            )));
        }
        Ok(Self { nx, ny, pitch, values })
    }

    /// Grid covering a `width × height` µm outline.
    pub fn over_outline(outline: (f64, f64), dims: (usize, usize)) -> Result<Self> {
        check_dims(dims.0, dims.1)?;
        Self::zeros(dims.0, dims.1, (outline.0 / dims.0 as f64, outline.1 / dims.1 as f64))
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn pitch(&self) -> (f64, f64) {
        self.pitch
    }

    /// Bin area in µm².
    #[inline]
    pub fn bin_area(&self) -> f64 {
        self.pitch.0 * self.pitch.1
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny);
        y * self.nx + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.nx, index / self.nx)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.values[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.index(x, y);
        self.values[i] = value;
    }

    /// Center of bin `(x, y)` in µm.
    pub fn bin_center(&self, x: usize, y: usize) -> (f64, f64) {
        ((x as f64 + 0.5) * self.pitch.0, (y as f64 + 0.5) * self.pitch.1)
    }

    /// Bin containing the point, clamped to the grid.
    pub fn bin_of(&self, px: f64, py: f64) -> (usize, usize) {
        let clamp = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        (clamp(px / self.pitch.0, self.nx), clamp(py / self.pitch.1, self.ny))
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.len() as f64)
    }

    /// Position and value of the largest bin; first one wins on ties.
    pub fn argmax(&self) -> ((usize, usize), T) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (self.coords(best), self.values[best])
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Grid2D<U> {
        Grid2D {
            nx: self.nx,
            ny: self.ny,
            pitch: self.pitch,
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if !self.same_dims(other) {
            return Err(dim_mismatch(self, other));
        }
        Ok(Grid2D {
            nx: self.nx,
            ny: self.ny,
            pitch: self.pitch,
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    /// Mirror image across the vertical center line.
    pub fn mirrored_x(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.ny {
            for x in 0..self.nx {
                out.set(self.nx - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    /// Rotation by 90° counter-clockwise; `nx` and `ny` swap.
    pub fn rotated_90(&self) -> Self {
        let mut values = vec![T::zero(); self.len()];
        for y in 0..self.ny {
            for x in 0..self.nx {
                // (x, y) -> (ny - 1 - y, x) in a grid of width ny
                let nxp = self.ny;
                values[x * nxp + (self.ny - 1 - y)] = self.get(x, y);
            }
        }
        Grid2D { nx: self.ny, ny: self.nx, pitch: (self.pitch.1, self.pitch.0), values }
    }

    /// Shift content by whole bins; vacated bins are filled with zero.
    pub fn shifted(&self, dx: isize, dy: isize) -> Self {
        let mut out = Grid2D { values: vec![T::zero(); self.len()], ..self.clone() };
        for y in 0..self.ny as isize {
            for x in 0..self.nx as isize {
                let (sx, sy) = (x - dx, y - dy);
                if sx >= 0 && sy >= 0 && (sx as usize) < self.nx && (sy as usize) < self.ny {
                    out.set(x as usize, y as usize, self.get(sx as usize, sy as usize));
                }
            }
        }
        out
    }
}

pub(crate) fn dim_mismatch<T>(a: &Grid2D<T>, b: &Grid2D<T>) -> Error {
    Error::domain(format!("grid dims differ: {}x{} vs {}x{}", a.nx, a.ny, b.nx, b.ny))
}

fn check_dims(nx: usize, ny: usize) -> Result<()> {
    if nx < 2 || ny < 2 {
        return Err(Error::domain(format!("grid dims must be at least 2x2, got {nx}x{ny}")));
    }
    Ok(())
}

fn check_pitch(pitch: (f64, f64)) -> Result<()> {
    if !(pitch.0 > 0.0 && pitch.1 > 0.0 && pitch.0.is_finite() && pitch.1.is_finite()) {
        return Err(Error::domain(format!("grid pitch must be positive, got {pitch:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_dims() {
        assert!(Grid2D::<f64>::zeros(1, 4, (1.0, 1.0)).is_err());
        assert!(Grid2D::<f64>::zeros(4, 4, (0.0, 1.0)).is_err());
        assert!(Grid2D::<f64>::from_values(2, 2, (1.0, 1.0), vec![0.0; 3]).is_err());
    }

    #[test]
    fn rotation_four_times_is_identity() {
        let g = Grid2D::from_values(3, 2, (1.0, 2.0), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let r = g.rotated_90();
        assert_eq!(r.dims(), (2, 3));
        // lower-left (0,0) moves to lower-right of the rotated grid
        assert_eq!(r.get(1, 0), 0.0);
        assert_eq!(r.rotated_90().rotated_90().rotated_90(), g);
    }

    #[test]
    fn shift_moves_interior() {
        let mut g = Grid2D::<f64>::zeros(4, 4, (1.0, 1.0)).unwrap();
        g.set(1, 1, 7.0);
        let s = g.shifted(1, 2);
        assert_eq!(s.get(2, 3), 7.0);
        assert_eq!(s.sum(), 7.0);
    }
}

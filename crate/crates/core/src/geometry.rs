//! Planar poses, rigid transforms and regular grids.
//!
//! All experiments live on a 2D floor plan, so rigid motion is SE(2): a
//! rotation angle plus a translation. Grids are axis-aligned with cell
//! `(i, j)` covering `[origin.x + i*cell, origin.x + (i+1)*cell)` along x and
//! the same along y; field values are stored row-major (`j * width + i`).

use std::f64::consts::PI;

use nalgebra::{Matrix2, Point2, Rotation2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Point2<f64>;

/// Wrap an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    /// The transform taking points from this pose's body frame to the parent frame.
    pub fn to_transform(&self) -> Transform2D {
        Transform2D::new(self.yaw, Vector2::new(self.x, self.y))
    }

    pub fn from_transform(t: &Transform2D) -> Self {
        Self::new(t.translation.x, t.translation.y, t.rotation)
    }
}

/// Proper rigid motion in the plane: `p ↦ R(rotation)·p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform2D {
    pub rotation: f64,
    pub translation: Vector2<f64>,
}

impl Default for Transform2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform2D {
    pub fn new(rotation: f64, translation: Vector2<f64>) -> Self {
        Self {
            rotation: normalize_angle(rotation),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, Vector2::zeros())
    }

    pub fn from_rotation_matrix(r: &Matrix2<f64>, translation: Vector2<f64>) -> Self {
        Self::new(r[(1, 0)].atan2(r[(0, 0)]), translation)
    }

    pub fn rotation_matrix(&self) -> Matrix2<f64> {
        *Rotation2::new(self.rotation).matrix()
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::from(self.rotation_matrix() * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector2<f64>) -> Vector2<f64> {
        self.rotation_matrix() * v
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Transform2D) -> Transform2D {
        Transform2D::new(
            self.rotation + other.rotation,
            self.rotation_matrix() * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Transform2D {
        let r_inv = self.rotation_matrix().transpose();
        Transform2D::new(-self.rotation, -(r_inv * self.translation))
    }
}

/// Free-function form of [`Transform2D::compose`].
pub fn compose(a: &Transform2D, b: &Transform2D) -> Transform2D {
    a.compose(b)
}

pub fn apply(t: &Transform2D, p: &Point) -> Point {
    t.apply(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    pub fn new(origin: [f64; 2], cell_size: f64, width: usize, height: usize) -> Result<Self> {
        let g = Self {
            origin,
            cell_size,
            width,
            height,
        };
        g.validate()?;
        Ok(g)
    }

    /// Smallest grid of the given resolution covering `[min, max]`.
    pub fn covering(min: [f64; 2], max: [f64; 2], cell_size: f64) -> Result<Self> {
        let w = ((max[0] - min[0]) / cell_size).ceil().max(2.0) as usize;
        let h = ((max[1] - min[1]) / cell_size).ceil().max(2.0) as usize;
        Self::new(min, cell_size, w, h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "cell_size must be positive, got {}",
                self.cell_size
            )));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2x2 cells, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(Error::NonFinite("grid origin"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn cell_of_index(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Result<Point> {
        if i >= self.width || j >= self.height {
            return Err(Error::CellOutOfRange {
                i,
                j,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.center_unchecked(i, j))
    }

    pub(crate) fn center_unchecked(&self, i: usize, j: usize) -> Point {
        Point::new(
            self.origin[0] + (i as f64 + 0.5) * self.cell_size,
            self.origin[1] + (j as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell containing `p`, if any.
    pub fn cell_at(&self, p: &Point) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin[0]) / self.cell_size).floor();
        let fy = ((p.y - self.origin[1]) / self.cell_size).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    /// Cell containing `p`, clamped onto the grid.
    pub fn nearest_cell(&self, p: &Point) -> (usize, usize) {
        let fx = ((p.x - self.origin[0]) / self.cell_size).floor();
        let fy = ((p.y - self.origin[1]) / self.cell_size).floor();
        (
            fx.clamp(0.0, (self.width - 1) as f64) as usize,
            fy.clamp(0.0, (self.height - 1) as f64) as usize,
        )
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.height)
            .flat_map(|j| (0..self.width).map(move |i| (i, j)))
            .map(|(i, j)| self.center_unchecked(i, j))
            .collect()
    }

    /// Cells of the `(2r+1)×(2r+1)` square around `(i, j)` that lie on the grid.
    pub fn neighborhood(
        &self,
        i: usize,
        j: usize,
        radius: usize,
    ) -> impl Iterator<Item = (usize, usize)> + '_ {
        let i0 = i.saturating_sub(radius);
        let j0 = j.saturating_sub(radius);
        let i1 = (i + radius).min(self.width - 1);
        let j1 = (j + radius).min(self.height - 1);
        (j0..=j1).flat_map(move |jj| (i0..=i1).map(move |ii| (ii, jj)))
    }

    pub fn extent(&self) -> ([f64; 2], [f64; 2]) {
        (
            self.origin,
            [
                self.origin[0] + self.width as f64 * self.cell_size,
                self.origin[1] + self.height as f64 * self.cell_size,
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values"));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self {
            values: vec![value; grid.len()],
            grid,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Cell with the largest value; ties go to the lowest `(row, col)`.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = k;
            }
        }
        self.grid.cell_of_index(best)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bilinear interpolation between cell centers, clamped at the border.
    pub fn sample(&self, p: &Point) -> f64 {
        let g = &self.grid;
        let u = ((p.x - g.origin[0]) / g.cell_size - 0.5).clamp(0.0, (g.width - 1) as f64);
        let v = ((p.y - g.origin[1]) / g.cell_size - 0.5).clamp(0.0, (g.height - 1) as f64);
        let i0 = (u.floor() as usize).min(g.width - 2);
        let j0 = (v.floor() as usize).min(g.height - 2);
        let tx = u - i0 as f64;
        let ty = v - j0 as f64;
        let f00 = self.get(i0, j0);
        let f10 = self.get(i0 + 1, j0);
        let f01 = self.get(i0, j0 + 1);
        let f11 = self.get(i0 + 1, j0 + 1);
        (1.0 - ty) * ((1.0 - tx) * f00 + tx * f10) + ty * ((1.0 - tx) * f01 + tx * f11)
    }
}

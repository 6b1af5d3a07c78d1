//! Procedural tissue terrain built from a tensor-product Bezier patch.
//!
//! Control points sit on a regular x/y lattice over the workspace rectangle and
//! only their heights are randomized, so the surface is a height field and an
//! (x, y) query maps affinely onto (u, v).

use glam::{DVec2, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest degree the binomial recurrence is exercised for.
pub const MAX_DEGREE: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TissueError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Axis-aligned workspace rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Extent {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self { min_x, min_y, max_x, max_y }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn center(&self) -> DVec2 {
        DVec2::new(0.5 * (self.min_x + self.max_x), 0.5 * (self.min_y + self.max_y))
    }

    pub fn contains(&self, p: DVec2) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn clamp(&self, p: DVec2) -> DVec2 {
        DVec2::new(p.x.clamp(self.min_x, self.max_x), p.y.clamp(self.min_y, self.max_y))
    }

    /// Maps a world point to normalized (u, v) in [0, 1]², clamped.
    pub fn to_unit(&self, p: DVec2) -> DVec2 {
        DVec2::new(
            ((p.x - self.min_x) / self.width()).clamp(0.0, 1.0),
            ((p.y - self.min_y) / self.height()).clamp(0.0, 1.0),
        )
    }

    fn validate(&self) -> Result<(), TissueError> {
        let finite = [self.min_x, self.min_y, self.max_x, self.max_y].iter().all(|v| v.is_finite());
        if !finite || self.width() <= 0.0 || self.height() <= 0.0 {
            return Err(TissueError::Config(format!("workspace extent has zero or negative size: {self:?}")));
        }
        Ok(())
    }
}

impl Default for Extent {
    fn default() -> Self {
        Self::new(0.0, 0.0, 0.24, 0.24)
    }
}

/// Binomial coefficient C(n, i) through the multiplicative recurrence.
fn binomial(n: usize, i: usize) -> f64 {
    let k = i.min(n - i);
    let mut c = 1.0f64;
    for j in 0..k {
        c = c * (n - j) as f64 / (j + 1) as f64;
    }
    c
}

/// Bernstein basis polynomial `B_{n,i}(x)`.
pub fn bernstein_basis(n: usize, i: usize, x: f64) -> Result<f64, TissueError> {
    if i > n {
        return Err(TissueError::Domain(format!("basis index {i} exceeds degree {n}")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(TissueError::Domain(format!("parameter {x} outside [0, 1]")));
    }
    Ok(bernstein_unchecked(n, i, x))
}

#[inline]
fn bernstein_unchecked(n: usize, i: usize, x: f64) -> f64 {
    binomial(n, i) * x.powi(i as i32) * (1.0 - x).powi((n - i) as i32)
}

/// All `n + 1` basis values at `x`, written into `out`.
fn bernstein_row(n: usize, x: f64, out: &mut [f64]) {
    for (i, slot) in out.iter_mut().enumerate().take(n + 1) {
        *slot = bernstein_unchecked(n, i, x);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueSurface {
    degree_n: usize,
    degree_m: usize,
    /// Row-major `(degree_n + 1) x (degree_m + 1)`, index `i * (m + 1) + j`.
    control_points: Vec<DVec3>,
    extent: Extent,
    seed: u64,
    amplitude: f64,
}

impl TissueSurface {
    /// Builds a surface from an explicit control grid. The grid must be
    /// `(degree_n + 1) x (degree_m + 1)` with x increasing along `i` and y
    /// increasing along `j`.
    pub fn from_control_points(
        degree_n: usize,
        degree_m: usize,
        control_points: Vec<DVec3>,
        extent: Extent,
    ) -> Result<Self, TissueError> {
        extent.validate()?;
        if degree_n > MAX_DEGREE || degree_m > MAX_DEGREE {
            return Err(TissueError::Config(format!("degree above {MAX_DEGREE}")));
        }
        if control_points.len() != (degree_n + 1) * (degree_m + 1) {
            return Err(TissueError::Config(format!(
                "control grid has {} points, expected {}",
                control_points.len(),
                (degree_n + 1) * (degree_m + 1)
            )));
        }
        let amplitude = control_points.iter().map(|p| p.z.abs()).fold(0.0, f64::max);
        Ok(Self { degree_n, degree_m, control_points, extent, seed: 0, amplitude })
    }

    pub fn degree_n(&self) -> usize {
        self.degree_n
    }

    pub fn degree_m(&self) -> usize {
        self.degree_m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn control_point(&self, i: usize, j: usize) -> DVec3 {
        self.control_points[i * (self.degree_m + 1) + j]
    }

    pub fn control_points(&self) -> &[DVec3] {
        &self.control_points
    }

    /// Range of control heights; the surface lies inside it (convex hull).
    pub fn control_z_range(&self) -> (f64, f64) {
        self.control_points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)))
    }

    pub fn evaluate(&self, u: f64, v: f64) -> Result<DVec3, TissueError> {
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return Err(TissueError::Domain(format!("(u, v) = ({u}, {v}) outside unit square")));
        }
        Ok(self.evaluate_unchecked(u, v))
    }

    fn evaluate_unchecked(&self, u: f64, v: f64) -> DVec3 {
        let mut bu = [0.0; MAX_DEGREE + 1];
        let mut bv = [0.0; MAX_DEGREE + 1];
        bernstein_row(self.degree_n, u, &mut bu);
        bernstein_row(self.degree_m, v, &mut bv);
        let cols = self.degree_m + 1;
        let mut acc = DVec3::ZERO;
        for i in 0..=self.degree_n {
            let row = &self.control_points[i * cols..(i + 1) * cols];
            let mut inner = DVec3::ZERO;
            for (p, b) in row.iter().zip(&bv[..cols]) {
                inner += *p * *b;
            }
            acc += inner * bu[i];
        }
        acc
    }

    /// Tissue height below the world point `(x, y)`; points outside the
    /// workspace are clamped to its border.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let uv = self.extent.to_unit(DVec2::new(x, y));
        self.height_at_uv(uv.x, uv.y)
    }

    /// Height-only evaluation, cheaper than [`Self::evaluate`] for the
    /// per-particle projection.
    pub fn height_at_uv(&self, u: f64, v: f64) -> f64 {
        let mut bu = [0.0; MAX_DEGREE + 1];
        let mut bv = [0.0; MAX_DEGREE + 1];
        bernstein_row(self.degree_n, u, &mut bu);
        bernstein_row(self.degree_m, v, &mut bv);
        let cols = self.degree_m + 1;
        let mut acc = 0.0;
        for i in 0..=self.degree_n {
            let row = &self.control_points[i * cols..(i + 1) * cols];
            let inner: f64 = row.iter().zip(&bv[..cols]).map(|(p, b)| p.z * b).sum();
            acc += inner * bu[i];
        }
        acc
    }
}

/// Anything that can answer "how high is the tissue under (x, y)".
pub trait HeightQuery {
    fn height_at(&self, x: f64, y: f64) -> f64;
}

impl HeightQuery for TissueSurface {
    fn height_at(&self, x: f64, y: f64) -> f64 {
        TissueSurface::height_at(self, x, y)
    }
}

impl HeightQuery for HeightMap {
    fn height_at(&self, x: f64, y: f64) -> f64 {
        self.sample(x, y)
    }
}

/// Evaluates S(u, v) on a surface.
pub fn evaluate_surface(surface: &TissueSurface, u: f64, v: f64) -> Result<DVec3, TissueError> {
    surface.evaluate(u, v)
}

/// Random tissue: control heights uniform in `[-amplitude, amplitude]` on a
/// regular lattice spanning `extent`.
pub fn generate_surface(
    seed: u64,
    degree_n: usize,
    degree_m: usize,
    extent: Extent,
    amplitude: f64,
) -> Result<TissueSurface, TissueError> {
    extent.validate()?;
    if degree_n > MAX_DEGREE || degree_m > MAX_DEGREE {
        return Err(TissueError::Config(format!("degree above {MAX_DEGREE}")));
    }
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(TissueError::Config(format!("amplitude must be finite and non-negative, got {amplitude}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut control_points = Vec::with_capacity((degree_n + 1) * (degree_m + 1));
    for i in 0..=degree_n {
        let x = lattice(extent.min_x, extent.max_x, i, degree_n);
        for j in 0..=degree_m {
            let y = lattice(extent.min_y, extent.max_y, j, degree_m);
            let z = if amplitude > 0.0 { rng.gen_range(-amplitude..=amplitude) } else { 0.0 };
            control_points.push(DVec3::new(x, y, z));
        }
    }
    Ok(TissueSurface { degree_n, degree_m, control_points, extent, seed, amplitude })
}

fn lattice(lo: f64, hi: f64, k: usize, n: usize) -> f64 {
    if n == 0 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * k as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightMap {
    rows: usize,
    cols: usize,
    /// Row-major; row `r` corresponds to v = r / (rows - 1).
    heights: Vec<f64>,
    extent: Extent,
}

impl HeightMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.heights[row * self.cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.heights
    }

    pub fn max_height(&self) -> f64 {
        self.heights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bilinear lookup at a world point.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let uv = self.extent.to_unit(DVec2::new(x, y));
        let fc = uv.x * (self.cols - 1) as f64;
        let fr = uv.y * (self.rows - 1) as f64;
        let c0 = (fc.floor() as usize).min(self.cols - 2);
        let r0 = (fr.floor() as usize).min(self.rows - 2);
        let tc = fc - c0 as f64;
        let tr = fr - r0 as f64;
        let h00 = self.get(r0, c0);
        let h01 = self.get(r0, c0 + 1);
        let h10 = self.get(r0 + 1, c0);
        let h11 = self.get(r0 + 1, c0 + 1);
        (h00 * (1.0 - tc) + h01 * tc) * (1.0 - tr) + (h10 * (1.0 - tc) + h11 * tc) * tr
    }
}

/// Samples surface heights on a uniform `(rows, cols)` grid of (u, v),
/// with `u` running along columns and `v` along rows.
pub fn sample_heightmap(surface: &TissueSurface, rows: usize, cols: usize) -> Result<HeightMap, TissueError> {
    if rows < 2 || cols < 2 {
        return Err(TissueError::Domain(format!("height map resolution {rows}x{cols} below 2x2")));
    }
    let mut heights = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let v = r as f64 / (rows - 1) as f64;
        for c in 0..cols {
            let u = c as f64 / (cols - 1) as f64;
            heights.push(surface.evaluate_unchecked(u, v).z);
        }
    }
    Ok(HeightMap { rows, cols, heights, extent: surface.extent })
}

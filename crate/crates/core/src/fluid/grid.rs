use glam::DVec3;

/// Uniform 2D column grid over the workspace for neighbor queries.
///
/// Blood stays within a few millimeters of the tissue, so bucketing by (x, y)
/// alone keeps every cell shallow. Rebuilt with a counting sort each step;
/// iteration order is fully determined by particle positions and indices.
#[derive(Debug, Clone)]
pub struct NeighborGrid {
    cell_size: f64,
    origin_x: f64,
    origin_y: f64,
    dims: (usize, usize),
    cell_start: Vec<u32>,
    sorted: Vec<u32>,
    cell_of: Vec<u32>,
}

impl NeighborGrid {
    pub fn new(cell_size: f64, min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        let nx = (((max_x - min_x) / cell_size).ceil() as usize).max(1);
        let ny = (((max_y - min_y) / cell_size).ceil() as usize).max(1);
        Self {
            cell_size,
            origin_x: min_x,
            origin_y: min_y,
            dims: (nx, ny),
            cell_start: vec![0; nx * ny + 1],
            sorted: Vec::new(),
            cell_of: Vec::new(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    #[inline]
    fn cell_coords(&self, p: DVec3) -> (usize, usize) {
        let cx = ((p.x - self.origin_x) / self.cell_size).floor();
        let cy = ((p.y - self.origin_y) / self.cell_size).floor();
        let cx = cx.clamp(0.0, (self.dims.0 - 1) as f64) as usize;
        let cy = cy.clamp(0.0, (self.dims.1 - 1) as f64) as usize;
        (cx, cy)
    }

    /// Rebuilds buckets from the positions of `active` particles.
    pub fn rebuild(&mut self, positions: &[DVec3], active: &[bool]) {
        let cells = self.dims.0 * self.dims.1;
        self.cell_start.iter_mut().for_each(|c| *c = 0);
        self.cell_of.clear();
        self.cell_of.resize(positions.len(), u32::MAX);
        let mut count = 0usize;
        for (i, p) in positions.iter().enumerate() {
            if !active[i] {
                continue;
            }
            let (cx, cy) = self.cell_coords(*p);
            let c = cy * self.dims.0 + cx;
            self.cell_of[i] = c as u32;
            self.cell_start[c + 1] += 1;
            count += 1;
        }
        for c in 0..cells {
            self.cell_start[c + 1] += self.cell_start[c];
        }
        self.sorted.clear();
        self.sorted.resize(count, 0);
        let mut fill: Vec<u32> = self.cell_start[..cells].to_vec();
        for (i, &c) in self.cell_of.iter().enumerate() {
            if c == u32::MAX {
                continue;
            }
            let slot = &mut fill[c as usize];
            self.sorted[*slot as usize] = i as u32;
            *slot += 1;
        }
    }

    /// Active particle indices in cell-major order.
    pub fn sorted(&self) -> &[u32] {
        &self.sorted
    }

    /// Calls `f(j)` for every bucketed particle in the 3x3 block of columns
    /// around the column that holds particle `i`.
    #[inline]
    pub fn for_each_near(&self, i: usize, mut f: impl FnMut(usize)) {
        let c = self.cell_of[i];
        if c == u32::MAX {
            return;
        }
        let c = c as usize;
        let (nx, ny) = self.dims;
        let cx = c % nx;
        let cy = c / nx;
        let y0 = cy.saturating_sub(1);
        let y1 = (cy + 1).min(ny - 1);
        let x0 = cx.saturating_sub(1);
        let x1 = (cx + 1).min(nx - 1);
        for y in y0..=y1 {
            // Columns x0..=x1 on one row are contiguous in the sorted array.
            let lo = self.cell_start[y * nx + x0] as usize;
            let hi = self.cell_start[y * nx + x1 + 1] as usize;
            for &j in &self.sorted[lo..hi] {
                f(j as usize);
            }
        }
    }
}

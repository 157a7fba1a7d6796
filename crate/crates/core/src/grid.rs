//! Uniform grids on axis-aligned rectangles, nodal fields and boundary traces.
//!
//! A [`BoundaryTrace`] lists the four sides of a rectangle in the order
//! south, east, north, west. Every side carries both of its endpoints, so the
//! four corner nodes appear twice. Sides are always listed in the direction of
//! increasing coordinate (x for south/north, y for east/west).

use crate::error::{Error, Result};

/// Relative tolerance used when checking that extents are multiples of `dx`.
const ALIGN_TOL: f64 = 1e-12;

/// Uniform grid on `[x0, x0 + nx*dx] x [y0, y0 + ny*dx]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: (f64, f64),
    pub dx: f64,
    pub nx: usize,
    pub ny: usize,
}

/// Number of whole steps of `dx` in `len`, or an alignment error.
pub fn aligned_steps(len: f64, dx: f64, what: &str) -> Result<usize> {
    if !(dx > 0.0) || !dx.is_finite() {
        return Err(Error::Alignment(format!("mesh width must be positive, got {dx}")));
    }
    if len < 0.0 || !len.is_finite() {
        return Err(Error::Alignment(format!("{what} must be nonnegative, got {len}")));
    }
    let n = (len / dx).round();
    if (n * dx - len).abs() > ALIGN_TOL * len.abs().max(dx) {
        return Err(Error::Alignment(format!("{what} = {len} is not an integer multiple of dx = {dx}")));
    }
    Ok(n as usize)
}

impl GridSpec {
    /// Builds a grid whose extent must be an integer multiple of `dx`.
    pub fn new(origin: (f64, f64), extent: (f64, f64), dx: f64) -> Result<Self> {
        let nx = aligned_steps(extent.0, dx, "width")?;
        let ny = aligned_steps(extent.1, dx, "height")?;
        if nx == 0 || ny == 0 {
            return Err(Error::Alignment(format!("extent {extent:?} yields an empty grid at dx = {dx}")));
        }
        Ok(Self { origin, dx, nx, ny })
    }

    pub fn unit_square(dx: f64) -> Result<Self> {
        Self::new((0.0, 0.0), (1.0, 1.0), dx)
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.nx as f64 * self.dx, self.ny as f64 * self.dx)
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (self.origin.0 + i as f64 * self.dx, self.origin.1 + j as f64 * self.dx)
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    /// Sub-rectangle of this grid starting at node `(i0, j0)` with the given cell counts.
    pub fn sub_grid(&self, i0: usize, j0: usize, nx: usize, ny: usize) -> Result<GridSpec> {
        if i0 + nx > self.nx || j0 + ny > self.ny || nx == 0 || ny == 0 {
            return Err(Error::Geometry(format!(
                "sub-grid at ({i0},{j0}) of size {nx}x{ny} does not fit in {}x{}",
                self.nx, self.ny
            )));
        }
        let (x0, y0) = self.coords(i0, j0);
        Ok(GridSpec { origin: (x0, y0), dx: self.dx, nx, ny })
    }

    /// Node offset of `other` inside `self`, when `other` is an aligned sub-grid.
    pub fn offset_of(&self, other: &GridSpec) -> Result<(usize, usize)> {
        let di = aligned_steps(other.origin.0 - self.origin.0, self.dx, "x offset")?;
        let dj = aligned_steps(other.origin.1 - self.origin.1, self.dx, "y offset")?;
        if di + other.nx > self.nx || dj + other.ny > self.ny {
            return Err(Error::Geometry("grid is not contained in parent".into()));
        }
        Ok((di, dj))
    }

    pub fn trace_layout(&self) -> TraceLayout {
        TraceLayout { nx: self.nx, ny: self.ny, dx: self.dx }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    South,
    East,
    North,
    West,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::South, Side::East, Side::North, Side::West];

    pub fn opposite(self) -> Side {
        match self {
            Side::South => Side::North,
            Side::North => Side::South,
            Side::East => Side::West,
            Side::West => Side::East,
        }
    }
}

/// Shape of a side-concatenated boundary trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceLayout {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
}

impl TraceLayout {
    pub fn len(&self) -> usize {
        2 * (self.nx + 1) + 2 * (self.ny + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn side_len(&self, side: Side) -> usize {
        match side {
            Side::South | Side::North => self.nx + 1,
            Side::East | Side::West => self.ny + 1,
        }
    }

    pub fn side_offset(&self, side: Side) -> usize {
        match side {
            Side::South => 0,
            Side::East => self.nx + 1,
            Side::North => self.nx + self.ny + 2,
            Side::West => 2 * self.nx + self.ny + 3,
        }
    }

    pub fn side_range(&self, side: Side) -> std::ops::Range<usize> {
        let o = self.side_offset(side);
        o..o + self.side_len(side)
    }

    /// Grid node `(i, j)` of the `k`-th entry along `side`.
    pub fn side_node(&self, side: Side, k: usize) -> (usize, usize) {
        match side {
            Side::South => (k, 0),
            Side::East => (self.nx, k),
            Side::North => (k, self.ny),
            Side::West => (0, k),
        }
    }

    /// Grid node of trace entry `e`.
    pub fn entry_node(&self, e: usize) -> (usize, usize) {
        for side in Side::ALL {
            let r = self.side_range(side);
            if r.contains(&e) {
                return self.side_node(side, e - r.start);
            }
        }
        panic!("trace entry {e} out of range {}", self.len());
    }

    /// Pairs of trace entries that refer to the same corner node
    /// (SW, SE, NE, NW).
    pub fn corner_pairs(&self) -> [(usize, usize); 4] {
        let s = self.side_range(Side::South);
        let e = self.side_range(Side::East);
        let n = self.side_range(Side::North);
        let w = self.side_range(Side::West);
        [(s.start, w.start), (s.end - 1, e.start), (e.end - 1, n.end - 1), (n.start, w.end - 1)]
    }

    /// The trace entry that is the duplicate of corner entry `e`, if any.
    pub fn corner_twin(&self, e: usize) -> Option<usize> {
        self.corner_pairs().iter().find_map(|&(a, b)| {
            if a == e {
                Some(b)
            } else if b == e {
                Some(a)
            } else {
                None
            }
        })
    }

    /// Trace entries covering every perimeter node exactly once.
    pub fn unique_entries(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * (self.nx + self.ny));
        out.extend(self.side_range(Side::South));
        out.extend(self.side_range(Side::East).skip(1));
        let n = self.side_range(Side::North);
        out.extend(n.start..n.end - 1);
        let w = self.side_range(Side::West);
        out.extend(w.start + 1..w.end - 1);
        out
    }

    /// Local coordinates of trace entry `e`, relative to the grid origin.
    pub fn position(&self, e: usize) -> (f64, f64) {
        let (i, j) = self.entry_node(e);
        (i as f64 * self.dx, j as f64 * self.dx)
    }
}

/// Boundary values of a rectangle in side-concatenated order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub layout: TraceLayout,
    pub values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn new(layout: TraceLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Dimension(format!(
                "trace has {} values, layout {}x{} needs {}",
                values.len(),
                layout.nx,
                layout.ny,
                layout.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: TraceLayout) -> Self {
        Self { layout, values: vec![0.0; layout.len()] }
    }

    pub fn constant(layout: TraceLayout, c: f64) -> Self {
        Self { layout, values: vec![c; layout.len()] }
    }

    /// Samples `f` at the boundary nodes of `grid` (global coordinates).
    pub fn from_fn(grid: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let layout = grid.trace_layout();
        let values = (0..layout.len())
            .map(|e| {
                let (i, j) = layout.entry_node(e);
                let (x, y) = grid.coords(i, j);
                f(x, y)
            })
            .collect();
        Self { layout, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn side(&self, side: Side) -> &[f64] {
        &self.values[self.layout.side_range(side)]
    }

    pub fn side_mut(&mut self, side: Side) -> &mut [f64] {
        let r = self.layout.side_range(side);
        &mut self.values[r]
    }

    /// Fails if the two copies of any corner differ by more than `tol`.
    pub fn check_corners(&self, tol: f64) -> Result<()> {
        for (a, b) in self.layout.corner_pairs() {
            if (self.values[a] - self.values[b]).abs() > tol {
                return Err(Error::Geometry(format!(
                    "corner copies disagree: entry {a} = {}, entry {b} = {}",
                    self.values[a], self.values[b]
                )));
            }
        }
        Ok(())
    }

    /// Replaces both copies of each corner by their average.
    pub fn average_corners(&mut self) {
        for (a, b) in self.layout.corner_pairs() {
            let m = 0.5 * (self.values[a] + self.values[b]);
            self.values[a] = m;
            self.values[b] = m;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { layout: self.layout, values: self.values.iter().map(|v| a * v).collect() }
    }

    /// Mean over perimeter nodes (corners counted once).
    pub fn node_mean(&self) -> f64 {
        let idx = self.layout.unique_entries();
        idx.iter().map(|&e| self.values[e]).sum::<f64>() / idx.len() as f64
    }
}

/// Nodal scalar field on a [`GridSpec`], row-major by `(j, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl Field2D {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, values: vec![0.0; grid.node_count()] }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.node_count());
        for j in 0..=grid.ny {
            for i in 0..=grid.nx {
                let (x, y) = grid.coords(i, j);
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Dimension(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(Self { grid, values })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.index(i, j);
        self.values[k] = v;
    }

    pub fn trace(&self) -> BoundaryTrace {
        let layout = self.grid.trace_layout();
        let values = (0..layout.len())
            .map(|e| {
                let (i, j) = layout.entry_node(e);
                self.at(i, j)
            })
            .collect();
        BoundaryTrace { layout, values }
    }

    /// Writes `trace` onto the boundary nodes.
    pub fn set_boundary(&mut self, trace: &BoundaryTrace) -> Result<()> {
        if trace.layout.nx != self.grid.nx || trace.layout.ny != self.grid.ny {
            return Err(Error::Dimension("trace layout does not match field grid".into()));
        }
        for e in 0..trace.len() {
            let (i, j) = trace.layout.entry_node(e);
            self.set(i, j, trace.values[e]);
        }
        Ok(())
    }

    /// Restriction of this field to an aligned sub-grid.
    pub fn restrict_to(&self, sub: &GridSpec) -> Result<Field2D> {
        let (di, dj) = self.grid.offset_of(sub)?;
        let mut out = Field2D::zeros(*sub);
        for j in 0..=sub.ny {
            for i in 0..=sub.nx {
                out.set(i, j, self.at(i + di, j + dj));
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Field2D) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    H1,
    Linf,
}

/// Discrete norms of grid quantities.
pub trait Norm {
    fn norm(&self, kind: NormKind) -> f64;
}

impl Norm for Field2D {
    fn norm(&self, kind: NormKind) -> f64 {
        let g = &self.grid;
        let h2 = g.dx * g.dx;
        let l2sq = h2 * self.values.iter().map(|v| v * v).sum::<f64>();
        match kind {
            NormKind::L2 => l2sq.sqrt(),
            NormKind::Linf => self.values.iter().fold(0.0, |m, v| m.max(v.abs())),
            NormKind::H1 => {
                // Forward differences at every node that has both forward neighbors.
                let mut grad = 0.0;
                for j in 0..g.ny {
                    for i in 0..g.nx {
                        let u = self.at(i, j);
                        let ux = (self.at(i + 1, j) - u) / g.dx;
                        let uy = (self.at(i, j + 1) - u) / g.dx;
                        grad += ux * ux + uy * uy;
                    }
                }
                (l2sq + h2 * grad).sqrt()
            }
        }
    }
}

impl Norm for BoundaryTrace {
    fn norm(&self, kind: NormKind) -> f64 {
        let dx = self.layout.dx;
        let l2sq =
            dx * self.layout.unique_entries().iter().map(|&e| self.values[e] * self.values[e]).sum::<f64>();
        match kind {
            NormKind::L2 => l2sq.sqrt(),
            NormKind::Linf => self.values.iter().fold(0.0, |m, v| m.max(v.abs())),
            NormKind::H1 => {
                let mut grad = 0.0;
                for side in Side::ALL {
                    let s = self.side(side);
                    grad += s.windows(2).map(|w| ((w[1] - w[0]) / dx).powi(2)).sum::<f64>();
                }
                (l2sq + dx * grad).sqrt()
            }
        }
    }
}

/// Discrete H^{1/2} norm of point values at the given positions:
/// `dx * sum |v_i|^2 + dx^2 * sum_{i != j} |v_i - v_j|^2 / |x_i - x_j|^2`.
pub fn h_half_norm_points(values: &[f64], points: &[(f64, f64)], dx: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Dimension("H^1/2 norm of an empty trace".into()));
    }
    if values.len() != points.len() {
        return Err(Error::Dimension("values and points differ in length".into()));
    }
    let l2: f64 = values.iter().map(|v| v * v).sum();
    let mut cross = 0.0;
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            let ddx = points[i].0 - points[j].0;
            let ddy = points[i].1 - points[j].1;
            let dist2 = ddx * ddx + ddy * ddy;
            if dist2 == 0.0 {
                return Err(Error::Geometry(format!("nodes {i} and {j} coincide")));
            }
            let dv = values[i] - values[j];
            cross += dv * dv / dist2;
        }
    }
    // The double sum runs over ordered pairs, so each unordered pair counts twice.
    Ok((dx * l2 + dx * dx * 2.0 * cross).sqrt())
}

/// H^{1/2} norm of a boundary trace over its deduplicated perimeter nodes.
pub fn h_half_norm(t: &BoundaryTrace) -> Result<f64> {
    let idx = t.layout.unique_entries();
    let values: Vec<f64> = idx.iter().map(|&e| t.values[e]).collect();
    let points: Vec<(f64, f64)> = idx.iter().map(|&e| t.layout.position(e)).collect();
    h_half_norm_points(&values, &points, t.layout.dx)
}

/// Forward-difference derivative `(v[i+1] - v[i]) / h` along a segment.
pub fn d_h(segment: &[f64], h: f64) -> Result<Vec<f64>> {
    if segment.len() < 2 {
        return Err(Error::Dimension(format!("derivative needs at least 2 values, got {}", segment.len())));
    }
    Ok(segment.windows(2).map(|w| (w[1] - w[0]) / h).collect())
}

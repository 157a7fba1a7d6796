//! Overlapping rectangular patches of the unit square.
//!
//! The square is cut into `M1 x M2` equal cells; every cell is enlarged by the
//! overlap margin on each side that does not touch the physical boundary.
//! All geometry is kept in integer node coordinates of the global grid, so
//! patches, segments and weights line up exactly.
//!
//! For a patch `m` and a neighbor `l`, the segment `I_{l,m}` is the whole side
//! of `l` that faces `m`, endpoints included. It lies inside the closed patch
//! `m`, and the output of the boundary-to-boundary map of `m` concatenates
//! these segments over the neighbors in the order west, east, south, north.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::grid::{aligned_steps, BoundaryTrace, Field2D, GridSpec, Norm, NormKind, Side};
use crate::local_solver::{LocalSolver, SolveOptions};
use crate::problems::ProblemSpec;

/// 1-based patch coordinates `(m1, m2)`; `m1` counts along x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchIndex {
    pub m1: usize,
    pub m2: usize,
}

impl PatchIndex {
    pub const fn new(m1: usize, m2: usize) -> Self {
        Self { m1, m2 }
    }
}

impl fmt::Display for PatchIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.m1, self.m2)
    }
}

/// Neighbor directions in canonical output order.
pub const NEIGHBOR_ORDER: [Side; 4] = [Side::West, Side::East, Side::South, Side::North];

/// One patch: global node ranges `i0..=i1`, `j0..=j1` and the matching grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub index: PatchIndex,
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
    pub grid: GridSpec,
}

impl Patch {
    pub fn contains_node(&self, i: usize, j: usize) -> bool {
        (self.i0..=self.i1).contains(&i) && (self.j0..=self.j1).contains(&j)
    }

    /// Global node of local node `(i, j)`.
    pub fn global_node(&self, i: usize, j: usize) -> (usize, usize) {
        (self.i0 + i, self.j0 + j)
    }
}

/// A piece of the boundary-to-boundary output of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Patch whose boundary receives the values.
    pub target: PatchIndex,
    /// Side of the target patch covered by the segment.
    pub side: Side,
    /// Position inside the concatenated output vector.
    pub range: Range<usize>,
    /// Global nodes in the target's side orientation.
    pub nodes: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    global: GridSpec,
    counts: (usize, usize),
    dx_o: f64,
    dx_b: f64,
    overlap_nodes: usize,
    buffer_nodes: usize,
    patches: Vec<Patch>,
    outputs: Vec<Vec<Segment>>,
}

impl Decomposition {
    /// Builds the `m1 x m2` decomposition of the unit-square grid `global`.
    pub fn new(global: GridSpec, m1: usize, m2: usize, dx_o: f64, dx_b: f64) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(Error::Geometry("patch counts must be at least 1".into()));
        }
        if !global.nx.is_multiple_of(m1) || !global.ny.is_multiple_of(m2) {
            return Err(Error::Alignment(format!(
                "a {}x{} grid cannot be cut into {m1}x{m2} equal cells",
                global.nx, global.ny
            )));
        }
        let no = aligned_steps(dx_o, global.dx, "overlap margin")?;
        let nb = aligned_steps(dx_b, global.dx, "buffer margin")?;
        let (cx, cy) = (global.nx / m1, global.ny / m2);
        if (m1 > 1 && cx < 2 * no) || (m2 > 1 && cy < 2 * no) {
            return Err(Error::Geometry(format!(
                "overlap margin {dx_o} exceeds half a cell; non-adjacent patches would overlap"
            )));
        }
        if (m1 > 1 || m2 > 1) && no == 0 {
            return Err(Error::Geometry("patches must overlap by at least one cell".into()));
        }
        let mut patches = Vec::with_capacity(m1 * m2);
        for b in 1..=m2 {
            for a in 1..=m1 {
                let i0 = ((a - 1) * cx).saturating_sub(no);
                let i1 = (a * cx + no).min(global.nx);
                let j0 = ((b - 1) * cy).saturating_sub(no);
                let j1 = (b * cy + no).min(global.ny);
                let grid = global.sub_grid(i0, j0, i1 - i0, j1 - j0)?;
                patches.push(Patch { index: PatchIndex::new(a, b), i0, i1, j0, j1, grid });
            }
        }
        let mut d = Self {
            global,
            counts: (m1, m2),
            dx_o,
            dx_b,
            overlap_nodes: no,
            buffer_nodes: nb,
            patches,
            outputs: Vec::new(),
        };
        d.outputs = d.indices().map(|m| d.build_segments(m)).collect::<Result<_>>()?;
        Ok(d)
    }

    fn build_segments(&self, m: PatchIndex) -> Result<Vec<Segment>> {
        let source = self.patch(m);
        let mut out = Vec::new();
        let mut offset = 0;
        for (dir, l) in self.neighbors_with_direction(m) {
            let target = self.patch(l);
            let side = dir.opposite();
            let layout = target.grid.trace_layout();
            let nodes: Vec<(usize, usize)> = (0..layout.side_len(side))
                .map(|k| {
                    let (i, j) = layout.side_node(side, k);
                    target.global_node(i, j)
                })
                .collect();
            if let Some(&(i, j)) = nodes.iter().find(|&&(i, j)| !source.contains_node(i, j)) {
                return Err(Error::Geometry(format!(
                    "node ({i},{j}) of patch {l} is outside its neighbor {m}"
                )));
            }
            let len = nodes.len();
            out.push(Segment { target: l, side, range: offset..offset + len, nodes });
            offset += len;
        }
        Ok(out)
    }

    pub fn global(&self) -> &GridSpec {
        &self.global
    }

    pub fn counts(&self) -> (usize, usize) {
        self.counts
    }

    pub fn overlap(&self) -> f64 {
        self.dx_o
    }

    pub fn buffer(&self) -> f64 {
        self.dx_b
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Position of `m` in the fixed patch order (m1 fastest).
    pub fn position(&self, m: PatchIndex) -> usize {
        assert!(self.is_valid(m), "patch {m} out of range");
        (m.m2 - 1) * self.counts.0 + (m.m1 - 1)
    }

    pub fn is_valid(&self, m: PatchIndex) -> bool {
        (1..=self.counts.0).contains(&m.m1) && (1..=self.counts.1).contains(&m.m2)
    }

    pub fn patch(&self, m: PatchIndex) -> &Patch {
        &self.patches[self.position(m)]
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    /// All indices in patch order.
    pub fn indices(&self) -> impl Iterator<Item = PatchIndex> + '_ {
        self.patches.iter().map(|p| p.index)
    }

    /// A patch is interior when none of its sides lies on the physical boundary.
    pub fn is_interior(&self, m: PatchIndex) -> bool {
        let (a, b) = self.counts;
        m.m1 > 1 && m.m1 < a && m.m2 > 1 && m.m2 < b
    }

    pub fn interior(&self) -> Vec<PatchIndex> {
        self.indices().filter(|&m| self.is_interior(m)).collect()
    }

    pub fn boundary_patches(&self) -> Vec<PatchIndex> {
        self.indices().filter(|&m| !self.is_interior(m)).collect()
    }

    fn neighbors_with_direction(&self, m: PatchIndex) -> Vec<(Side, PatchIndex)> {
        NEIGHBOR_ORDER
            .iter()
            .filter_map(|&dir| {
                let (a, b) = (m.m1 as isize, m.m2 as isize);
                let (a, b) = match dir {
                    Side::West => (a - 1, b),
                    Side::East => (a + 1, b),
                    Side::South => (a, b - 1),
                    Side::North => (a, b + 1),
                };
                if a < 1 || b < 1 {
                    return None;
                }
                let l = PatchIndex::new(a as usize, b as usize);
                self.is_valid(l).then_some((dir, l))
            })
            .collect()
    }

    /// Edge-adjacent patches in the order west, east, south, north.
    pub fn neighbors(&self, m: PatchIndex) -> Vec<PatchIndex> {
        self.neighbors_with_direction(m).into_iter().map(|(_, l)| l).collect()
    }

    /// Side of `m` facing its neighbor `l`.
    pub fn facing_side(&self, m: PatchIndex, l: PatchIndex) -> Result<Side> {
        self.neighbors_with_direction(m)
            .into_iter()
            .find_map(|(dir, n)| (n == l).then_some(dir))
            .ok_or(Error::Topology { from: (m.m1, m.m2), to: (l.m1, l.m2) })
    }

    /// Segments making up the boundary-to-boundary output of `m`.
    pub fn segments(&self, m: PatchIndex) -> &[Segment] {
        &self.outputs[self.position(m)]
    }

    /// Length `p_m` of the output of `m`.
    pub fn output_len(&self, m: PatchIndex) -> usize {
        self.segments(m).last().map_or(0, |s| s.range.end)
    }

    /// Length `d_m` of the input trace of `m`.
    pub fn input_len(&self, m: PatchIndex) -> usize {
        self.patch(m).grid.trace_layout().len()
    }

    /// The segment of `m`'s output that lands on `l`.
    pub fn segment(&self, m: PatchIndex, l: PatchIndex) -> Result<&Segment> {
        self.segments(m)
            .iter()
            .find(|s| s.target == l)
            .ok_or(Error::Topology { from: (m.m1, m.m2), to: (l.m1, l.m2) })
    }

    /// Patch `m` enlarged by the buffer margin on every side.
    pub fn buffered_grid(&self, m: PatchIndex) -> Result<GridSpec> {
        let p = self.patch(m);
        let nb = self.buffer_nodes;
        if p.i0 < nb || p.j0 < nb || p.i1 + nb > self.global.nx || p.j1 + nb > self.global.ny {
            return Err(Error::Geometry(format!(
                "buffered patch {m} leaves the domain (buffer {})",
                self.dx_b
            )));
        }
        self.global.sub_grid(p.i0 - nb, p.j0 - nb, p.i1 - p.i0 + 2 * nb, p.j1 - p.j0 + 2 * nb)
    }

    /// Values of `field` on the segment `I_{l,m}`; `field` may live on any
    /// aligned grid that contains patch `m` (the patch itself or its buffered
    /// enlargement).
    pub fn restrict(&self, field: &Field2D, m: PatchIndex, l: PatchIndex) -> Result<Vec<f64>> {
        let seg = self.segment(m, l)?;
        let (oi, oj) = self.global.offset_of(&field.grid)?;
        seg.nodes
            .iter()
            .map(|&(i, j)| {
                if i < oi || j < oj || i - oi > field.grid.nx || j - oj > field.grid.ny {
                    Err(Error::Geometry(format!("segment node ({i},{j}) outside the field")))
                } else {
                    Ok(field.at(i - oi, j - oj))
                }
            })
            .collect()
    }

    /// Concatenated restrictions of `field` onto every neighbor of `m`.
    pub fn restrict_all(&self, field: &Field2D, m: PatchIndex) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.output_len(m));
        for seg in self.segments(m) {
            out.extend(self.restrict(field, m, seg.target)?);
        }
        Ok(out)
    }

    /// Solves the local problem of `m` and restricts the solution: `Q_m phi`.
    pub fn q_exact(
        &self,
        solver: &LocalSolver,
        m: PatchIndex,
        phi: &BoundaryTrace,
        opts: &SolveOptions,
    ) -> Result<Vec<f64>> {
        self.check_solver(solver, m)?;
        let sol = solver.solve(phi, opts)?;
        self.restrict_all(&sol.field, m)
    }

    fn check_solver(&self, solver: &LocalSolver, m: PatchIndex) -> Result<()> {
        if *solver.grid() != self.patch(m).grid {
            return Err(Error::Dimension(format!("solver grid does not match patch {m}")));
        }
        Ok(())
    }

    /// One solver per patch, in patch order.
    pub fn local_solvers(&self, problem: ProblemSpec) -> Vec<LocalSolver> {
        self.patches.iter().map(|p| LocalSolver::new(p.grid, problem)).collect()
    }

    /// Global physical data sampled at boundary nodes (interior nodes are zero).
    pub fn physical_field(&self, phi: &crate::problems::BoundaryCondition) -> Field2D {
        let mut f = Field2D::zeros(self.global);
        let t = BoundaryTrace::from_fn(&self.global, |x, y| phi.eval(x, y));
        f.set_boundary(&t).expect("global layout");
        f
    }

    fn on_physical_boundary(&self, i: usize, j: usize) -> bool {
        self.global.is_boundary(i, j)
    }

    /// New boundary data of `m` from the segments its neighbors produced.
    ///
    /// `incoming[k]` is the segment `I_{m,l}` computed on the `k`-th neighbor
    /// `l` of `m` (canonical order). Sides on the physical boundary take `phys`.
    /// A corner shared by two neighbor sides receives the mean of both copies;
    /// a corner on the physical boundary takes `phys`.
    pub fn update_bc(&self, m: PatchIndex, incoming: &[&[f64]], phys: &Field2D) -> Result<BoundaryTrace> {
        let patch = self.patch(m);
        let layout = patch.grid.trace_layout();
        let neighbors = self.neighbors_with_direction(m);
        if incoming.len() != neighbors.len() {
            return Err(Error::Dimension(format!(
                "patch {m} has {} neighbors, got {} segments",
                neighbors.len(),
                incoming.len()
            )));
        }
        let mut trace = BoundaryTrace::zeros(layout);
        for side in Side::ALL {
            let range = layout.side_range(side);
            match neighbors.iter().position(|&(dir, _)| dir == side) {
                Some(k) => {
                    if incoming[k].len() != range.len() {
                        return Err(Error::Dimension(format!(
                            "segment from {} has length {}, side needs {}",
                            neighbors[k].1,
                            incoming[k].len(),
                            range.len()
                        )));
                    }
                    trace.values[range].copy_from_slice(incoming[k]);
                }
                None => {
                    for (k, e) in range.enumerate() {
                        let (i, j) = layout.side_node(side, k);
                        let (gi, gj) = patch.global_node(i, j);
                        if !self.on_physical_boundary(gi, gj) {
                            return Err(Error::Coverage { patch: (m.m1, m.m2), node: e });
                        }
                        trace.values[e] = phys.at(gi, gj);
                    }
                }
            }
        }
        for (a, b) in layout.corner_pairs() {
            let (i, j) = layout.entry_node(a);
            let (gi, gj) = patch.global_node(i, j);
            let v = if self.on_physical_boundary(gi, gj) {
                phys.at(gi, gj)
            } else {
                0.5 * (trace.values[a] + trace.values[b])
            };
            trace.values[a] = v;
            trace.values[b] = v;
        }
        Ok(trace)
    }

    /// Starting data: `phys` on the physical boundary, `fill` elsewhere.
    pub fn initial_trace(&self, m: PatchIndex, phys: &Field2D, fill: f64) -> BoundaryTrace {
        let patch = self.patch(m);
        let layout = patch.grid.trace_layout();
        let values = (0..layout.len())
            .map(|e| {
                let (i, j) = layout.entry_node(e);
                let (gi, gj) = patch.global_node(i, j);
                if self.on_physical_boundary(gi, gj) {
                    phys.at(gi, gj)
                } else {
                    fill
                }
            })
            .collect();
        BoundaryTrace { layout, values }
    }

    /// Mean of the physical data over the perimeter nodes of the domain.
    pub fn physical_mean(&self, phys: &Field2D) -> f64 {
        phys.trace().node_mean()
    }
}

/// Partition-of-unity weights `chi_m`, one global field per patch.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    weights: Vec<Field2D>,
}

/// 1D ramp weight of cell `k` (1-based) out of `count` at node `i`, with
/// cells of `cell` nodes and overlap `no`.
fn ramp(i: usize, k: usize, count: usize, cell: usize, no: usize) -> f64 {
    let i = i as f64;
    let width = 2.0 * no as f64;
    let mut w: f64 = 1.0;
    if k > 1 {
        let start = ((k - 1) * cell) as f64 - no as f64;
        w = w.min(((i - start) / width).clamp(0.0, 1.0));
    }
    if k < count {
        let end = (k * cell) as f64 + no as f64;
        w = w.min(((end - i) / width).clamp(0.0, 1.0));
    }
    w
}

impl PartitionOfUnity {
    /// Normalized tensor products of linear ramps across each overlap band.
    pub fn new(decomp: &Decomposition) -> Self {
        let g = decomp.global;
        let (m1, m2) = decomp.counts;
        let (cx, cy) = (g.nx / m1, g.ny / m2);
        let no = decomp.overlap_nodes;
        let mut weights: Vec<Field2D> = decomp
            .patches
            .iter()
            .map(|p| {
                let mut f = Field2D::zeros(g);
                for j in p.j0..=p.j1 {
                    let wy = ramp(j, p.index.m2, m2, cy, no);
                    for i in p.i0..=p.i1 {
                        f.set(i, j, ramp(i, p.index.m1, m1, cx, no) * wy);
                    }
                }
                f
            })
            .collect();
        let mut total = vec![0.0; g.node_count()];
        for w in &weights {
            for (t, v) in total.iter_mut().zip(&w.values) {
                *t += v;
            }
        }
        for w in &mut weights {
            for (v, t) in w.values.iter_mut().zip(&total) {
                *v /= t;
            }
        }
        Self { weights }
    }

    pub fn weight(&self, decomp: &Decomposition, m: PatchIndex) -> &Field2D {
        &self.weights[decomp.position(m)]
    }

    pub fn weights(&self) -> &[Field2D] {
        &self.weights
    }

    /// `sum_m chi_m u_m` with every local field zero outside its patch.
    pub fn assemble(&self, decomp: &Decomposition, locals: &[Field2D]) -> Result<Field2D> {
        if locals.len() != decomp.len() {
            return Err(Error::Dimension(format!(
                "{} local fields for {} patches",
                locals.len(),
                decomp.len()
            )));
        }
        let mut out = Field2D::zeros(decomp.global);
        for ((p, u), w) in decomp.patches.iter().zip(locals).zip(&self.weights) {
            if u.grid != p.grid {
                return Err(Error::Dimension(format!("local field does not match patch {}", p.index)));
            }
            for j in p.j0..=p.j1 {
                for i in p.i0..=p.i1 {
                    let k = decomp.global.index(i, j);
                    out.values[k] += w.values[k] * u.at(i - p.i0, j - p.j0);
                }
            }
        }
        Ok(out)
    }
}

/// Sum over patches of the boundary L2 change between two trace iterates.
pub fn trace_change(old: &[BoundaryTrace], new: &[BoundaryTrace]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(a, b)| {
            let diff = BoundaryTrace {
                layout: a.layout,
                values: a.values.iter().zip(&b.values).map(|(x, y)| y - x).collect(),
            };
            diff.norm(NormKind::L2)
        })
        .sum()
}

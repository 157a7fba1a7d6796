//! Dirichlet solvers on rectangular subdomains.
//!
//! * semilinear: vertex-centred finite volumes with face-midpoint coefficients,
//!   damped Newton on the (convex) discrete energy;
//! * p-Laplace: P1 elements on the diagonal-split triangulation, preconditioned
//!   gradient descent on the energy (floored Hessian or fixed stiffness);
//! * linear diffusion: one band Cholesky factorization per (grid, medium),
//!   reused for every right-hand side.
//!
//! Unknowns are the interior nodes in row-major order; boundary nodes carry
//! the Dirichlet trace verbatim.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::grid::{BoundaryTrace, Field2D, GridSpec};
use crate::linalg::{BandCholesky, BandMatrix};
use crate::problems::{Medium, ProblemKind, ProblemSpec};

/// Regularization inside `|grad u|^{p-2}`.
const GRAD_REG: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Armijo {
    pub c1: f64,
    pub factor: f64,
    pub initial_step: f64,
}

impl Default for Armijo {
    fn default() -> Self {
        Self { c1: 1e-4, factor: 0.5, initial_step: 1.0 }
    }
}

/// Preconditioner of the p-Laplace descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    /// The kappa-weighted P1 stiffness matrix, factorized once per solver.
    FixedStiffness,
    /// Energy Hessian at the current iterate with the gradient magnitude
    /// floored, refactorized every step.
    Hessian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// L-infinity bound on the cell-integrated finite-volume residual.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// L-infinity bound on the preconditioned gradient `K^{-1} grad E`.
    pub pgd_tol: f64,
    pub pgd_max_iter: usize,
    pub armijo: Armijo,
    pub preconditioner: Preconditioner,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            newton_max_iter: 50,
            pgd_tol: 1e-8,
            pgd_max_iter: 2000,
            armijo: Armijo::default(),
            preconditioner: Preconditioner::Hessian,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0 && self.pgd_tol > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if self.newton_max_iter == 0 || self.pgd_max_iter == 0 {
            return Err(Error::Config("solver iteration caps must be at least 1".into()));
        }
        let a = &self.armijo;
        if !(a.c1 > 0.0 && a.c1 < 1.0 && a.factor > 0.0 && a.factor < 1.0 && a.initial_step > 0.0) {
            return Err(Error::Config("invalid Armijo parameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub field: Field2D,
    pub iterations: usize,
    pub final_residual: f64,
}

/// Interior-node numbering of a grid.
#[derive(Debug, Clone, Copy)]
struct Interior {
    nx: usize,
    ny: usize,
}

impl Interior {
    fn len(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    fn bandwidth(&self) -> usize {
        self.nx.saturating_sub(1)
    }

    /// Unknown index of node `(i, j)`, or `None` on the boundary.
    #[inline]
    fn index(&self, i: usize, j: usize) -> Option<usize> {
        if i == 0 || j == 0 || i >= self.nx || j >= self.ny {
            None
        } else {
            Some((j - 1) * (self.nx - 1) + (i - 1))
        }
    }
}

/// Symmetric 5-point operator given by edge conductances.
///
/// `h[j * nx + i]` couples `(i, j)`-`(i+1, j)`; `v[j * (nx+1) + i]` couples
/// `(i, j)`-`(i, j+1)`.
#[derive(Debug, Clone)]
struct EdgeOperator {
    grid: GridSpec,
    h: Vec<f64>,
    v: Vec<f64>,
    matrix: BandMatrix,
    factor: OnceLock<std::result::Result<BandCholesky, String>>,
}

impl EdgeOperator {
    fn new(grid: GridSpec, h: Vec<f64>, v: Vec<f64>) -> Self {
        let int = Interior { nx: grid.nx, ny: grid.ny };
        let mut matrix = BandMatrix::zeros(int.len(), int.bandwidth());
        let mut couple =
            |a: (usize, usize), b: (usize, usize), c: f64| match (int.index(a.0, a.1), int.index(b.0, b.1)) {
                (Some(ka), Some(kb)) => {
                    matrix.add(ka, ka, c);
                    matrix.add(kb, kb, c);
                    matrix.add(ka, kb, -c);
                }
                (Some(ka), None) => matrix.add(ka, ka, c),
                (None, Some(kb)) => matrix.add(kb, kb, c),
                (None, None) => {}
            };
        for j in 0..=grid.ny {
            for i in 0..grid.nx {
                couple((i, j), (i + 1, j), h[j * grid.nx + i]);
            }
        }
        for j in 0..grid.ny {
            for i in 0..=grid.nx {
                couple((i, j), (i, j + 1), v[j * (grid.nx + 1) + i]);
            }
        }
        Self { grid, h, v, matrix, factor: OnceLock::new() }
    }

    fn interior(&self) -> Interior {
        Interior { nx: self.grid.nx, ny: self.grid.ny }
    }

    fn factor(&self) -> Result<&BandCholesky> {
        self.factor
            .get_or_init(|| self.matrix.cholesky().map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::LinearAlgebra(e.clone()))
    }

    /// Calls `f(a, b, c)` for every edge `a`-`b` with conductance `c`.
    fn for_each_edge(&self, mut f: impl FnMut(usize, usize, f64)) {
        let g = &self.grid;
        for j in 0..=g.ny {
            for i in 0..g.nx {
                f(g.index(i, j), g.index(i + 1, j), self.h[j * g.nx + i]);
            }
        }
        for j in 0..g.ny {
            for i in 0..=g.nx {
                f(g.index(i, j), g.index(i, j + 1), self.v[j * (g.nx + 1) + i]);
            }
        }
    }

    /// Gradient of `1/2 sum_edges c (u_a - u_b)^2` restricted to interior nodes.
    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let int = self.interior();
        let mut out = vec![0.0; int.len()];
        let nx1 = g.nx + 1;
        self.for_each_edge(|a, b, c| {
            let flux = c * (u[a] - u[b]);
            if let Some(ka) = int.index(a % nx1, a / nx1) {
                out[ka] += flux;
            }
            if let Some(kb) = int.index(b % nx1, b / nx1) {
                out[kb] -= flux;
            }
        });
        out
    }

    fn quadratic_energy(&self, u: &[f64]) -> f64 {
        let mut e = 0.0;
        self.for_each_edge(|a, b, c| {
            let d = u[a] - u[b];
            e += 0.5 * c * d * d;
        });
        e
    }
}

fn fv_operator(grid: GridSpec, medium: Medium) -> EdgeOperator {
    let half = 0.5 * grid.dx;
    let mut h = Vec::with_capacity((grid.ny + 1) * grid.nx);
    for j in 0..=grid.ny {
        for i in 0..grid.nx {
            let (x, y) = grid.coords(i, j);
            h.push(medium.kappa(x + half, y));
        }
    }
    let mut v = Vec::with_capacity(grid.ny * (grid.nx + 1));
    for j in 0..grid.ny {
        for i in 0..=grid.nx {
            let (x, y) = grid.coords(i, j);
            v.push(medium.kappa(x, y + half));
        }
    }
    EdgeOperator::new(grid, h, v)
}

/// Triangle coefficients of the diagonal-split P1 mesh at the centroids:
/// `lower[c]` for triangle (i,j),(i+1,j),(i+1,j+1) and `upper[c]` for
/// (i,j),(i+1,j+1),(i,j+1), with `c = j * nx + i`.
#[derive(Debug, Clone)]
struct FemMesh {
    lower: Vec<f64>,
    upper: Vec<f64>,
    stiffness: EdgeOperator,
}

impl FemMesh {
    fn new(grid: GridSpec, medium: Medium) -> Self {
        let h = grid.dx;
        let mut lower = Vec::with_capacity(grid.nx * grid.ny);
        let mut upper = Vec::with_capacity(grid.nx * grid.ny);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.coords(i, j);
                lower.push(medium.kappa(x + 2.0 * h / 3.0, y + h / 3.0));
                upper.push(medium.kappa(x + h / 3.0, y + 2.0 * h / 3.0));
            }
        }
        // P1 stiffness on right triangles: only the legs couple, each with
        // kappa_T / 2 from every adjacent triangle.
        let mut eh = vec![0.0; (grid.ny + 1) * grid.nx];
        let mut ev = vec![0.0; grid.ny * (grid.nx + 1)];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let c = j * grid.nx + i;
                eh[j * grid.nx + i] += 0.5 * lower[c];
                ev[j * (grid.nx + 1) + i + 1] += 0.5 * lower[c];
                ev[j * (grid.nx + 1) + i] += 0.5 * upper[c];
                eh[(j + 1) * grid.nx + i] += 0.5 * upper[c];
            }
        }
        let stiffness = EdgeOperator::new(grid, eh, ev);
        Self { lower, upper, stiffness }
    }

    /// Calls `f(kappa, [n0, n1, n2], gx_nodes, gy_nodes)` per triangle, where
    /// the gradient is `(u[gx.0] - u[gx.1], u[gy.0] - u[gy.1]) / h`.
    #[inline]
    fn for_each_triangle(&self, grid: &GridSpec, mut f: impl FnMut(f64, (usize, usize), (usize, usize))) {
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let c = j * grid.nx + i;
                let a = grid.index(i, j);
                let b = grid.index(i + 1, j);
                let cc = grid.index(i + 1, j + 1);
                let d = grid.index(i, j + 1);
                f(self.lower[c], (b, a), (cc, b));
                f(self.upper[c], (cc, d), (d, a));
            }
        }
    }
}

/// Dirichlet solver bound to one rectangular grid and one problem.
///
/// Matrix assembly and factorizations happen once and are shared by every
/// subsequent solve; the solver is `Sync`.
#[derive(Debug)]
pub struct LocalSolver {
    grid: GridSpec,
    problem: ProblemSpec,
    fv: OnceLock<EdgeOperator>,
    fem: OnceLock<FemMesh>,
}

impl LocalSolver {
    pub fn new(grid: GridSpec, problem: ProblemSpec) -> Self {
        Self { grid, problem, fv: OnceLock::new(), fem: OnceLock::new() }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    fn fv(&self) -> &EdgeOperator {
        self.fv.get_or_init(|| fv_operator(self.grid, self.problem.medium))
    }

    fn fem(&self) -> &FemMesh {
        self.fem.get_or_init(|| FemMesh::new(self.grid, self.problem.medium))
    }

    fn check_trace(&self, trace: &BoundaryTrace) -> Result<()> {
        if trace.layout.nx != self.grid.nx || trace.layout.ny != self.grid.ny {
            return Err(Error::Dimension(format!(
                "trace for a {}x{} grid given to a {}x{} solver",
                trace.layout.nx, trace.layout.ny, self.grid.nx, self.grid.ny
            )));
        }
        if trace.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("trace contains non-finite values".into()));
        }
        Ok(())
    }

    /// Solves the problem this solver was built for.
    pub fn solve(&self, trace: &BoundaryTrace, opts: &SolveOptions) -> Result<LocalSolution> {
        match self.problem.kind {
            ProblemKind::Semilinear => self.solve_semilinear(trace, opts),
            ProblemKind::PLaplace => self.solve_plaplace(trace, opts),
            ProblemKind::LinearDiffusion => self.solve_linear(trace),
        }
    }

    /// `-div(kappa grad u) = 0` by finite volumes and a cached factorization.
    pub fn solve_linear(&self, trace: &BoundaryTrace) -> Result<LocalSolution> {
        self.check_trace(trace)?;
        let op = self.fv();
        let mut field = Field2D::zeros(self.grid);
        field.set_boundary(trace)?;
        if op.interior().len() == 0 {
            return Ok(LocalSolution { field, iterations: 0, final_residual: 0.0 });
        }
        // With zero interior values, apply() yields minus the boundary load.
        let mut rhs: Vec<f64> = op.apply(&field.values).iter().map(|r| -r).collect();
        op.factor()?.solve_in_place(&mut rhs);
        scatter(&mut field, &rhs);
        let res = op.apply(&field.values);
        let final_residual = inf_norm(&res);
        Ok(LocalSolution { field, iterations: 1, final_residual })
    }

    /// `-div(kappa grad u) + u^3 = 0` by damped Newton on the discrete energy
    /// `1/2 sum_faces kappa_f (u_a - u_b)^2 + h^2 sum_i u_i^4 / 4`.
    pub fn solve_semilinear(&self, trace: &BoundaryTrace, opts: &SolveOptions) -> Result<LocalSolution> {
        self.check_trace(trace)?;
        let op = self.fv();
        let int = op.interior();
        let h2 = self.grid.dx * self.grid.dx;
        let mut field = transfinite_interpolation(&self.grid, trace);
        if int.len() == 0 {
            return Ok(LocalSolution { field, iterations: 0, final_residual: 0.0 });
        }
        let interior_nodes = interior_node_list(&self.grid);

        let residual = |u: &[f64]| -> Vec<f64> {
            let mut r = op.apply(u);
            for (k, &n) in interior_nodes.iter().enumerate() {
                r[k] += h2 * u[n].powi(3);
            }
            r
        };
        let energy = |u: &[f64]| -> f64 {
            op.quadratic_energy(u) + 0.25 * h2 * interior_nodes.iter().map(|&n| u[n].powi(4)).sum::<f64>()
        };

        let mut r = residual(&field.values);
        let mut res = inf_norm(&r);
        let mut prev_res;
        let mut iterations = 0;
        loop {
            iterations += 1;
            if res <= opts.newton_tol {
                break;
            }
            if iterations > opts.newton_max_iter {
                return Err(Error::IterationLimit {
                    solver: "Newton",
                    iterations: opts.newton_max_iter,
                    residual: res,
                });
            }
            let mut jac = op.matrix.clone();
            for (k, &n) in interior_nodes.iter().enumerate() {
                jac.add(k, k, 3.0 * h2 * field.values[n] * field.values[n]);
            }
            let mut step: Vec<f64> = r.iter().map(|v| -v).collect();
            jac.cholesky()?.solve_in_place(&mut step);
            let slope: f64 = r.iter().zip(&step).map(|(a, b)| a * b).sum();
            let e0 = energy(&field.values);

            let mut alpha = 1.0;
            let mut trial = field.values.clone();
            loop {
                for (k, &n) in interior_nodes.iter().enumerate() {
                    trial[n] = field.values[n] + alpha * step[k];
                }
                let r_new = residual(&trial);
                let res_new = inf_norm(&r_new);
                let e_new = energy(&trial);
                if e_new <= e0 + opts.armijo.c1 * alpha * slope || res_new < 0.5 * res {
                    field.values.copy_from_slice(&trial);
                    r = r_new;
                    prev_res = res;
                    res = res_new;
                    break;
                }
                alpha *= opts.armijo.factor;
                if alpha < 1e-12 {
                    return Err(Error::Descent { iterations });
                }
            }
            // Stagnation at round-off: the residual stopped improving while
            // already tiny relative to the data.
            if res >= prev_res && res <= 1e3 * opts.newton_tol {
                break;
            }
        }
        Ok(LocalSolution { field, iterations, final_residual: res })
    }

    /// Minimizes `sum_T area_T kappa_T / p (|grad u_T|^2 + reg)^{p/2}` over P1
    /// functions by preconditioned gradient descent with an Armijo search.
    pub fn solve_plaplace(&self, trace: &BoundaryTrace, opts: &SolveOptions) -> Result<LocalSolution> {
        self.check_trace(trace)?;
        let p = self.problem.p;
        if !(p >= 2.0) {
            return Err(Error::Config(format!("p-Laplace needs p >= 2, got {p}")));
        }
        let fem = self.fem();
        let grid = self.grid;
        let int = fem.stiffness.interior();
        let mut field = transfinite_interpolation(&grid, trace);
        if int.len() == 0 {
            return Ok(LocalSolution { field, iterations: 0, final_residual: 0.0 });
        }
        let fixed = match opts.preconditioner {
            Preconditioner::FixedStiffness => Some(fem.stiffness.factor()?),
            Preconditioner::Hessian => None,
        };
        let interior_nodes = interior_node_list(&grid);
        let energy = |u: &[f64]| plaplace_energy(fem, &grid, p, u);

        let mut e = energy(&field.values);
        let mut iterations = 0;
        let mut alpha0 = opts.armijo.initial_step;
        loop {
            iterations += 1;
            let g = plaplace_gradient(fem, &grid, p, &field.values);
            let mut d = g.clone();
            match fixed {
                Some(factor) => factor.solve_in_place(&mut d),
                None => plaplace_hessian(fem, &grid, p, &field.values).cholesky()?.solve_in_place(&mut d),
            }
            let res = inf_norm(&d);
            if res <= opts.pgd_tol {
                return Ok(LocalSolution { field, iterations, final_residual: res });
            }
            if iterations > opts.pgd_max_iter {
                return Err(Error::IterationLimit {
                    solver: "preconditioned gradient descent",
                    iterations: opts.pgd_max_iter,
                    residual: res,
                });
            }
            let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            let roundoff = 1e-13 * e.abs().max(f64::MIN_POSITIVE);
            let mut alpha = alpha0;
            let mut trial = field.values.clone();
            loop {
                for (k, &n) in interior_nodes.iter().enumerate() {
                    trial[n] = field.values[n] - alpha * d[k];
                }
                let e_new = energy(&trial);
                if e_new <= e - opts.armijo.c1 * alpha * slope || (e_new - e).abs() <= roundoff {
                    field.values.copy_from_slice(&trial);
                    e = e_new;
                    break;
                }
                alpha *= opts.armijo.factor;
                if alpha < 1e-16 {
                    return Err(Error::Descent { iterations });
                }
            }
            // Start the next search one expansion above the accepted step.
            alpha0 = (alpha / opts.armijo.factor).min(opts.armijo.initial_step.max(alpha));
        }
    }

    /// Discrete p-Laplace energy of a full nodal field on this grid.
    pub fn plaplace_energy(&self, field: &Field2D) -> f64 {
        plaplace_energy(self.fem(), &self.grid, self.problem.p, &field.values)
    }
}

fn plaplace_energy(fem: &FemMesh, grid: &GridSpec, p: f64, u: &[f64]) -> f64 {
    let inv_h = 1.0 / grid.dx;
    let area = 0.5 * grid.dx * grid.dx;
    let mut e = 0.0;
    fem.for_each_triangle(grid, |kappa, gx, gy| {
        let a = (u[gx.0] - u[gx.1]) * inv_h;
        let b = (u[gy.0] - u[gy.1]) * inv_h;
        e += kappa * (a * a + b * b + GRAD_REG).powf(0.5 * p);
    });
    e * area / p
}

fn plaplace_gradient(fem: &FemMesh, grid: &GridSpec, p: f64, u: &[f64]) -> Vec<f64> {
    let inv_h = 1.0 / grid.dx;
    let area = 0.5 * grid.dx * grid.dx;
    let mut full = vec![0.0; grid.node_count()];
    fem.for_each_triangle(grid, |kappa, gx, gy| {
        let a = (u[gx.0] - u[gx.1]) * inv_h;
        let b = (u[gy.0] - u[gy.1]) * inv_h;
        let w = area * kappa * (a * a + b * b + GRAD_REG).powf(0.5 * (p - 2.0)) * inv_h;
        full[gx.0] += w * a;
        full[gx.1] -= w * a;
        full[gy.0] += w * b;
        full[gy.1] -= w * b;
    });
    interior_node_list(grid).iter().map(|&n| full[n]).collect()
}

/// Floor on `|grad u|^2` inside the Hessian, relative to the largest value.
const HESSIAN_FLOOR: f64 = 1e-6;

/// Energy Hessian on the interior unknowns, with `|grad u_T|^2` floored at
/// `HESSIAN_FLOOR` times its maximum so degenerate triangles stay definite.
fn plaplace_hessian(fem: &FemMesh, grid: &GridSpec, p: f64, u: &[f64]) -> BandMatrix {
    let inv_h = 1.0 / grid.dx;
    let area = 0.5 * grid.dx * grid.dx;
    let int = Interior { nx: grid.nx, ny: grid.ny };
    let nx1 = grid.nx + 1;
    let mut gmax: f64 = 0.0;
    fem.for_each_triangle(grid, |_, gx, gy| {
        let a = (u[gx.0] - u[gx.1]) * inv_h;
        let b = (u[gy.0] - u[gy.1]) * inv_h;
        gmax = gmax.max(a * a + b * b);
    });
    let floor = HESSIAN_FLOOR * gmax + GRAD_REG;
    // The diagonal couplings (i,j)-(i+1,j+1) reach one row plus one column.
    let mut hess = BandMatrix::zeros(int.len(), grid.nx);
    let local = |n: usize| int.index(n % nx1, n / nx1);
    fem.for_each_triangle(grid, |kappa, gx, gy| {
        let a = (u[gx.0] - u[gx.1]) * inv_h;
        let b = (u[gy.0] - u[gy.1]) * inv_h;
        let s = (a * a + b * b).max(floor);
        let iso = s.powf(0.5 * (p - 2.0));
        let aniso = (p - 2.0) * s.powf(0.5 * (p - 4.0));
        let scale = area * kappa * inv_h * inv_h;
        // Curvature tensor in gradient space.
        let mxx = scale * (iso + aniso * a * a);
        let mxy = scale * aniso * a * b;
        let myy = scale * (iso + aniso * b * b);
        // grad = B u with B rows (e_gx0 - e_gx1) and (e_gy0 - e_gy1).
        let terms = [(gx.0, 1.0, 0.0), (gx.1, -1.0, 0.0), (gy.0, 0.0, 1.0), (gy.1, 0.0, -1.0)];
        for &(na, bxa, bya) in &terms {
            let Some(ka) = local(na) else { continue };
            for &(nb, bxb, byb) in &terms {
                let Some(kb) = local(nb) else { continue };
                if kb > ka {
                    continue;
                }
                let v = bxa * (mxx * bxb + mxy * byb) + bya * (mxy * bxb + myy * byb);
                hess.add(ka, kb, v);
            }
        }
    });
    hess
}

fn interior_node_list(grid: &GridSpec) -> Vec<usize> {
    let mut out = Vec::with_capacity(grid.nx.saturating_sub(1) * grid.ny.saturating_sub(1));
    for j in 1..grid.ny {
        for i in 1..grid.nx {
            out.push(grid.index(i, j));
        }
    }
    out
}

fn scatter(field: &mut Field2D, interior: &[f64]) {
    let grid = field.grid;
    let mut k = 0;
    for j in 1..grid.ny {
        for i in 1..grid.nx {
            field.set(i, j, interior[k]);
            k += 1;
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Bilinear (Coons) blend of the four sides of `trace`; exact on the boundary.
pub fn transfinite_interpolation(grid: &GridSpec, trace: &BoundaryTrace) -> Field2D {
    use crate::grid::Side;
    let (nx, ny) = (grid.nx, grid.ny);
    let s = trace.side(Side::South);
    let n = trace.side(Side::North);
    let w = trace.side(Side::West);
    let e = trace.side(Side::East);
    let (sw, se, nw, ne) = (s[0], s[nx], n[0], n[nx]);
    let mut field = Field2D::zeros(*grid);
    for j in 0..=ny {
        let eta = j as f64 / ny as f64;
        for i in 0..=nx {
            let xi = i as f64 / nx as f64;
            let v = (1.0 - eta) * s[i] + eta * n[i] + (1.0 - xi) * w[j] + xi * e[j]
                - ((1.0 - xi) * (1.0 - eta) * sw
                    + xi * (1.0 - eta) * se
                    + (1.0 - xi) * eta * nw
                    + xi * eta * ne);
            field.set(i, j, v);
        }
    }
    field.set_boundary(trace).expect("layout matches grid");
    field
}

/// Convenience wrappers for one-off solves.
pub fn solve_semilinear(
    grid: GridSpec,
    medium: Medium,
    trace: &BoundaryTrace,
    opts: &SolveOptions,
) -> Result<LocalSolution> {
    let problem = ProblemSpec { kind: ProblemKind::Semilinear, medium, p: 2.0 };
    LocalSolver::new(grid, problem).solve_semilinear(trace, opts)
}

pub fn solve_plaplace(
    grid: GridSpec,
    medium: Medium,
    p: f64,
    trace: &BoundaryTrace,
    opts: &SolveOptions,
) -> Result<LocalSolution> {
    let problem = ProblemSpec { kind: ProblemKind::PLaplace, medium, p };
    LocalSolver::new(grid, problem).solve_plaplace(trace, opts)
}

pub fn solve_linear(grid: GridSpec, medium: Medium, trace: &BoundaryTrace) -> Result<LocalSolution> {
    LocalSolver::new(grid, ProblemSpec::linear(medium)).solve_linear(trace)
}

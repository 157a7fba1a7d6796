//! The two multiscale test problems: oscillatory media, boundary-condition
//! catalogs and the linear diffusion problem used for initialization.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    /// `-div(kappa grad u) + u^3 = 0`
    Semilinear,
    /// `-div(kappa |grad u|^{p-2} grad u) = 0`
    PLaplace,
    /// `-div(kappa grad u) = 0`
    LinearDiffusion,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Semilinear => "semilinear",
            ProblemKind::PLaplace => "plaplace",
            ProblemKind::LinearDiffusion => "linear",
        })
    }
}

/// Scales of the p-Laplace medium.
pub const PLAPLACE_SCALES: [f64; 5] = [1.0 / 5.0, 1.0 / 13.0, 1.0 / 17.0, 1.0 / 31.0, 1.0 / 65.0];

/// Coefficient field kappa(x, y) > 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Medium {
    Constant(f64),
    Semilinear { epsilon: f64 },
    PLaplace,
}

impl Medium {
    #[inline]
    pub fn kappa(&self, x: f64, y: f64) -> f64 {
        match *self {
            Medium::Constant(c) => c,
            Medium::Semilinear { epsilon } => kappa_semilinear(x, y, epsilon),
            Medium::PLaplace => kappa_plaplace(x, y),
        }
    }
}

pub fn kappa_semilinear(x1: f64, x2: f64, eps: f64) -> f64 {
    let tp = 2.0 * PI;
    2.0 + (tp * x1).sin() * (tp * x2).cos()
        + (2.0 + 1.8 * (tp * x1 / eps).sin()) / (2.0 + 1.8 * (tp * x2 / eps).cos())
        + (2.0 + (tp * x2 / eps).sin()) / (2.0 + 1.8 * (tp * x1 / eps).cos())
}

pub fn kappa_plaplace(x: f64, y: f64) -> f64 {
    let tp = 2.0 * PI;
    let [e1, e2, e3, e4, e5] = PLAPLACE_SCALES;
    let t1 = (1.1 + (tp * x / e1).sin()) / (1.1 + (tp * y / e1).sin());
    let t2 = (1.1 + (tp * y / e2).sin()) / (1.1 + (tp * x / e2).cos());
    let t3 = (1.1 + (tp * x / e3).cos()) / (1.1 + (tp * y / e3).sin());
    let t4 = (1.1 + (tp * y / e4).sin()) / (1.1 + (tp * x / e4).cos());
    let t5 = (1.1 + (tp * x / e5).cos()) / (1.1 + (tp * y / e5).sin());
    (t1 + t2 + t3 + t4 + t5 + (4.0 * x * x * y * y).sin() + 1.0) / 6.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub medium: Medium,
    /// Exponent of the p-Laplacian; ignored by the other kinds.
    pub p: f64,
}

impl ProblemSpec {
    pub fn semilinear(epsilon: f64) -> Self {
        Self { kind: ProblemKind::Semilinear, medium: Medium::Semilinear { epsilon }, p: 2.0 }
    }

    pub fn plaplace(p: f64) -> Self {
        Self { kind: ProblemKind::PLaplace, medium: Medium::PLaplace, p }
    }

    pub fn linear(medium: Medium) -> Self {
        Self { kind: ProblemKind::LinearDiffusion, medium, p: 2.0 }
    }

    /// Same medium with the nonlinearity removed.
    pub fn linearized(&self) -> Self {
        Self::linear(self.medium)
    }

    pub fn validate(&self) -> Result<()> {
        if let Medium::Semilinear { epsilon } = self.medium {
            if !(epsilon > 0.0) {
                return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
            }
        }
        if let Medium::Constant(c) = self.medium {
            if !(c > 0.0) {
                return Err(Error::Config(format!("constant medium must be positive, got {c}")));
            }
        }
        if self.kind == ProblemKind::PLaplace && !(self.p >= 2.0) {
            return Err(Error::Config(format!("p-Laplace needs p >= 2, got {}", self.p)));
        }
        Ok(())
    }
}

type SideFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Dirichlet data on the unit square, one function per side:
/// `phi(x, 0)`, `phi(x, 1)`, `phi(0, y)`, `phi(1, y)`.
#[derive(Clone)]
pub struct BoundaryCondition {
    pub south: SideFn,
    pub north: SideFn,
    pub west: SideFn,
    pub east: SideFn,
}

impl fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryCondition").finish_non_exhaustive()
    }
}

impl BoundaryCondition {
    pub fn from_sides(
        south: impl Fn(f64) -> f64 + Send + Sync + 'static,
        north: impl Fn(f64) -> f64 + Send + Sync + 'static,
        west: impl Fn(f64) -> f64 + Send + Sync + 'static,
        east: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { south: Arc::new(south), north: Arc::new(north), west: Arc::new(west), east: Arc::new(east) }
    }

    /// Boundary condition given by the restriction of `f(x, y)` to the unit square's boundary.
    pub fn from_fn(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        let f = Arc::new(f);
        let (a, b, c, d) = (f.clone(), f.clone(), f.clone(), f);
        Self::from_sides(move |x| a(x, 0.0), move |x| b(x, 1.0), move |y| c(0.0, y), move |y| d(1.0, y))
    }

    /// Value at a point of the unit square's boundary.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        const TOL: f64 = 1e-12;
        if y.abs() <= TOL {
            (self.south)(x)
        } else if (y - 1.0).abs() <= TOL {
            (self.north)(x)
        } else if x.abs() <= TOL {
            (self.west)(y)
        } else if (x - 1.0).abs() <= TOL {
            (self.east)(y)
        } else {
            panic!("({x}, {y}) is not on the boundary of the unit square")
        }
    }

    /// Largest disagreement between the two sides meeting at each corner.
    pub fn corner_mismatch(&self) -> f64 {
        [
            ((self.south)(0.0) - (self.west)(0.0)).abs(),
            ((self.south)(1.0) - (self.east)(0.0)).abs(),
            ((self.north)(0.0) - (self.west)(1.0)).abs(),
            ((self.north)(1.0) - (self.east)(1.0)).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// The tabulated global-test boundary conditions (indices 1 to 3).
pub fn bc_catalog(kind: ProblemKind, index: usize) -> Result<BoundaryCondition> {
    let tp = 2.0 * PI;
    let bc = match (kind, index) {
        (ProblemKind::Semilinear, 1) => BoundaryCondition::from_sides(|_| 40.0, |_| 40.0, |_| 40.0, |_| 40.0),
        (ProblemKind::Semilinear, 2) => BoundaryCondition::from_sides(
            move |x| 50.0 - 50.0 * (tp * x).sin(),
            move |x| 50.0 + 50.0 * (tp * x).sin(),
            move |y| 50.0 + 50.0 * (tp * y).sin(),
            move |y| 50.0 - 50.0 * (tp * y).sin(),
        ),
        (ProblemKind::Semilinear, 3) => {
            BoundaryCondition::from_sides(|_| 10.0, |_| 35.0, |y| 10.0 + 25.0 * y, |y| 10.0 + 25.0 * y)
        }
        (ProblemKind::PLaplace, 1) => BoundaryCondition::from_sides(
            move |x| -(tp * x).sin(),
            move |x| (tp * x).sin(),
            move |y| (tp * y).sin(),
            move |y| -(tp * y).sin(),
        ),
        (ProblemKind::PLaplace, 2) => BoundaryCondition::from_sides(
            move |x| -(2.0 * tp * x).sin(),
            move |x| (2.0 * tp * x).sin(),
            move |y| (2.0 * tp * y).sin(),
            move |y| -(2.0 * tp * y).sin(),
        ),
        (ProblemKind::PLaplace, 3) => {
            BoundaryCondition::from_sides(|_| -1.0, |_| 1.0, |y| 2.0 * y * y - 1.0, |y| 2.0 * y * y - 1.0)
        }
        _ => return Err(Error::UnknownBoundaryCondition { problem: kind.to_string(), index }),
    };
    Ok(bc)
}

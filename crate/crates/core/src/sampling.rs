//! Random Dirichlet data and training pairs for the boundary-to-boundary maps.
//!
//! A sample is `r * phi_a`: the direction `phi_a` is a Gaussian vector made
//! corner-consistent and scaled to unit discrete H^{1/2} norm, and the radius
//! has density `(D + 1) r^D / R^{D+1}` on `[0, R]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::decomposition::{Decomposition, PatchIndex};
use crate::error::{Error, Result};
use crate::grid::{h_half_norm, BoundaryTrace, TraceLayout};
use crate::local_solver::{LocalSolver, SolveOptions};
use crate::problems::ProblemSpec;

/// Largest tolerated fraction of failed sample solves.
pub const MAX_SKIP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLaw {
    /// Radius cap `R`.
    pub radius: f64,
    /// Power-law exponent `D` of the radial density.
    pub power: f64,
    pub seed: u64,
}

impl SampleLaw {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("sample radius must be positive, got {}", self.radius)));
        }
        if !(self.power >= 0.0 && self.power.is_finite()) {
            return Err(Error::Config(format!("sample exponent must be >= 0, got {}", self.power)));
        }
        Ok(())
    }

    /// Inverse-CDF radius draw.
    pub fn radius_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.radius * u.powf(1.0 / (self.power + 1.0))
    }

    /// Mean of the radial law, `R (D + 1) / (D + 2)`.
    pub fn mean_radius(&self) -> f64 {
        self.radius * (self.power + 1.0) / (self.power + 2.0)
    }
}

/// Unit-H^{1/2} random direction on `layout`.
pub fn sample_direction<R: Rng + ?Sized>(layout: TraceLayout, rng: &mut R) -> Result<BoundaryTrace> {
    if layout.nx == 0 || layout.ny == 0 {
        return Err(Error::Dimension(format!("degenerate {}x{} boundary", layout.nx, layout.ny)));
    }
    loop {
        let values: Vec<f64> = (0..layout.len()).map(|_| rng.sample(StandardNormal)).collect();
        let mut t = BoundaryTrace::new(layout, values)?;
        t.average_corners();
        let n = h_half_norm(&t)?;
        if n > 0.0 && n.is_finite() {
            return Ok(t.scaled(1.0 / n));
        }
    }
}

/// One boundary sample and its radius.
pub fn sample_boundary<R: Rng + ?Sized>(
    law: &SampleLaw,
    layout: TraceLayout,
    rng: &mut R,
) -> Result<(BoundaryTrace, f64)> {
    let dir = sample_direction(layout, rng)?;
    let r = law.radius_draw(rng);
    Ok((dir.scaled(r), r))
}

/// Generator for sample `i` of patch `m`: one ChaCha stream per sample, so
/// results do not depend on scheduling.
pub fn sample_rng(seed: u64, m: PatchIndex, i: usize) -> ChaCha8Rng {
    let key = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(((m.m1 as u64) << 32) | m.m2 as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(i as u64);
    rng
}

/// Input/output pairs of one patch, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub patch: PatchIndex,
    pub d: usize,
    pub p: usize,
    /// `len() x d`
    pub inputs: Vec<f64>,
    /// `len() x p`
    pub outputs: Vec<f64>,
    pub law: SampleLaw,
    pub buffered: bool,
    pub skipped: usize,
}

impl TrainingSet {
    pub fn empty(patch: PatchIndex, d: usize, p: usize, law: SampleLaw, buffered: bool) -> Self {
        Self { patch, d, p, inputs: Vec::new(), outputs: Vec::new(), law, buffered, skipped: 0 }
    }

    pub fn len(&self) -> usize {
        self.inputs.len().checked_div(self.d).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.d..(i + 1) * self.d]
    }

    pub fn output(&self, i: usize) -> &[f64] {
        &self.outputs[i * self.p..(i + 1) * self.p]
    }

    pub fn push(&mut self, input: &[f64], output: &[f64]) -> Result<()> {
        if input.len() != self.d || output.len() != self.p {
            return Err(Error::Dimension(format!(
                "pair of sizes ({}, {}) in a ({}, {}) dataset",
                input.len(),
                output.len(),
                self.d,
                self.p
            )));
        }
        self.inputs.extend_from_slice(input);
        self.outputs.extend_from_slice(output);
        Ok(())
    }

    /// Rows `idx` as a new set with the same metadata.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut out = Self::empty(self.patch, self.d, self.p, self.law, self.buffered);
        for &i in idx {
            out.inputs.extend_from_slice(self.input(i));
            out.outputs.extend_from_slice(self.output(i));
        }
        out
    }
}

/// Input and output of one sample.
type Pair = (Vec<f64>, Vec<f64>);

/// Draws `n` samples for interior patch `m` and records
/// `(trace on the patch, restrictions onto the neighbors)`.
///
/// With `buffered`, data are drawn on the patch enlarged by the buffer margin
/// and the solution is read off inside; otherwise directly on the patch.
pub fn gen_dataset(
    problem: &ProblemSpec,
    decomp: &Decomposition,
    m: PatchIndex,
    n: usize,
    law: &SampleLaw,
    opts: &SolveOptions,
    buffered: bool,
) -> Result<TrainingSet> {
    law.validate()?;
    problem.validate()?;
    if !decomp.is_interior(m) {
        return Err(Error::Geometry(format!("patch {m} is not interior")));
    }
    let patch_grid = decomp.patch(m).grid;
    let solve_grid = if buffered { decomp.buffered_grid(m)? } else { patch_grid };
    let solver = LocalSolver::new(solve_grid, *problem);
    let layout = solve_grid.trace_layout();
    let (d, p) = (decomp.input_len(m), decomp.output_len(m));

    let pairs: Vec<Result<Option<Pair>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(law.seed, m, i);
            let (phi, _) = sample_boundary(law, layout, &mut rng)?;
            match solver.solve(&phi, opts) {
                Ok(sol) => {
                    let input = sol.field.restrict_to(&patch_grid)?.trace().values;
                    let output = decomp.restrict_all(&sol.field, m)?;
                    Ok(Some((input, output)))
                }
                Err(e) => {
                    log::warn!("patch {m}: sample {i} skipped: {e}");
                    Ok(None)
                }
            }
        })
        .collect();

    let mut set = TrainingSet::empty(m, d, p, *law, buffered);
    for pair in pairs {
        match pair? {
            Some((x, y)) => set.push(&x, &y)?,
            None => set.skipped += 1,
        }
    }
    if n > 0 && set.skipped as f64 > MAX_SKIP_FRACTION * n as f64 {
        return Err(Error::Dataset(format!("patch {m}: {} of {n} sample solves failed", set.skipped)));
    }
    Ok(set)
}

/// Random disjoint split; the test part holds `round(fraction * len)` rows.
pub fn split_dataset(set: &TrainingSet, fraction: f64, seed: u64) -> Result<(TrainingSet, TrainingSet)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("test fraction must lie in [0, 1], got {fraction}")));
    }
    use rand::seq::SliceRandom;
    let n = set.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (fraction * n as f64).round() as usize;
    let (test, train) = idx.split_at(n_test);
    Ok((set.select(train), set.select(test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::problems::Medium;

    fn desk() -> Decomposition {
        Decomposition::new(GridSpec::unit_square(1.0 / 32.0).unwrap(), 4, 4, 1.0 / 16.0, 1.0 / 16.0).unwrap()
    }

    #[test]
    fn samples_have_their_radius_as_norm() {
        let layout = GridSpec::unit_square(1.0 / 16.0).unwrap().trace_layout();
        let law = SampleLaw { radius: 1000.0, power: 3.0, seed: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let (t, r) = sample_boundary(&law, layout, &mut rng).unwrap();
            t.check_corners(0.0).unwrap();
            assert!((h_half_norm(&t).unwrap() / r - 1.0).abs() <= 1e-10);
            assert!((0.0..=1000.0).contains(&r));
        }
    }

    #[test]
    fn radius_moments() {
        let law = SampleLaw { radius: 1000.0, power: 3.0, seed: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean = (0..n).map(|_| law.radius_draw(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean / 800.0 - 1.0).abs() < 0.02, "mean radius {mean}");
        assert_eq!(law.mean_radius(), 800.0);
    }

    #[test]
    fn short_traces_are_rejected() {
        let layout = TraceLayout { nx: 0, ny: 0, dx: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_direction(layout, &mut rng).is_err());
    }

    #[test]
    fn dataset_pairs_are_consistent_with_the_exact_map() {
        let decomp = desk();
        let m = PatchIndex::new(2, 3);
        let law = SampleLaw { radius: 5.0, power: 3.0, seed: 9 };
        let opts = SolveOptions::default();
        for (problem, tol) in [
            (ProblemSpec::linear(Medium::Semilinear { epsilon: 0.125 }), 1e-9),
            (ProblemSpec::semilinear(0.125), 1e-8),
        ] {
            for buffered in [false, true] {
                let set = gen_dataset(&problem, &decomp, m, 12, &law, &opts, buffered).unwrap();
                assert_eq!(set.len(), 12);
                assert_eq!((set.d, set.p), (decomp.input_len(m), decomp.output_len(m)));
                let solver = LocalSolver::new(decomp.patch(m).grid, problem);
                for i in 0..set.len() {
                    let layout = decomp.patch(m).grid.trace_layout();
                    let phi = BoundaryTrace::new(layout, set.input(i).to_vec()).unwrap();
                    let q = decomp.q_exact(&solver, m, &phi, &opts).unwrap();
                    let err = q.iter().zip(set.output(i)).fold(0.0f64, |e, (a, b)| e.max((a - b).abs()));
                    assert!(err <= tol, "{:?} buffered={buffered}: {err:e}", problem.kind);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let decomp = desk();
        let m = PatchIndex::new(3, 2);
        let law = SampleLaw { radius: 50.0, power: 3.0, seed: 3 };
        let problem = ProblemSpec::semilinear(0.125);
        let opts = SolveOptions::default();
        let a = gen_dataset(&problem, &decomp, m, 8, &law, &opts, true).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| gen_dataset(&problem, &decomp, m, 8, &law, &opts, true).unwrap());
        assert_eq!(a, b);
        let other = gen_dataset(&problem, &decomp, PatchIndex::new(2, 2), 8, &law, &opts, true).unwrap();
        assert_ne!(a.inputs[..4], other.inputs[..4]);
    }

    #[test]
    fn tiny_radius_gives_tiny_pairs() {
        let decomp = desk();
        let law = SampleLaw { radius: 1e-200, power: 3.0, seed: 5 };
        let set = gen_dataset(
            &ProblemSpec::semilinear(0.125),
            &decomp,
            PatchIndex::new(2, 2),
            4,
            &law,
            &SolveOptions::default(),
            true,
        )
        .unwrap();
        assert!(set.inputs.iter().chain(&set.outputs).all(|v| v.abs() <= 1e-190));
    }

    #[test]
    fn boundary_patches_have_no_dataset() {
        let law = SampleLaw { radius: 1.0, power: 3.0, seed: 5 };
        let r = gen_dataset(
            &ProblemSpec::semilinear(0.125),
            &desk(),
            PatchIndex::new(1, 2),
            2,
            &law,
            &SolveOptions::default(),
            false,
        );
        assert!(matches!(r, Err(Error::Geometry(_))));
    }

    #[test]
    fn too_many_failed_solves_is_an_error() {
        let law = SampleLaw { radius: 1e4, power: 3.0, seed: 5 };
        let opts = SolveOptions { newton_max_iter: 1, ..Default::default() };
        let r = gen_dataset(
            &ProblemSpec::semilinear(0.125),
            &desk(),
            PatchIndex::new(2, 2),
            10,
            &law,
            &opts,
            false,
        );
        assert!(matches!(r, Err(Error::Dataset(_))));
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let law = SampleLaw { radius: 1.0, power: 3.0, seed: 0 };
        let mut set = TrainingSet::empty(PatchIndex::new(2, 2), 2, 1, law, false);
        for i in 0..1000 {
            set.push(&[i as f64, 0.0], &[i as f64]).unwrap();
        }
        let (train, test) = split_dataset(&set, 0.1, 7).unwrap();
        assert_eq!((train.len(), test.len()), (900, 100));
        let mut all: Vec<f64> = train.outputs.iter().chain(&test.outputs).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..1000).map(|i| i as f64).collect::<Vec<_>>());
        let (train, test) = split_dataset(&set, 0.0, 7).unwrap();
        assert_eq!((train.len(), test.len()), (1000, 0));
        assert!(split_dataset(&set, 1.5, 7).is_err());
    }
}

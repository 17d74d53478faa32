//! Truth snapshots and sup-norm error measurement.
//!
//! Errors are always measured in the `V` norm on the truth grid; coarser
//! approximants are interpolated onto it first.

use std::io::{Read, Write};
use std::path::Path;

use crate::affine::TruthSolver;
use crate::error::{Error, Result};
use crate::fem::{dot, laplace_apply, FeFunction, Grid};
use crate::parallel;
use crate::partition::Cell;
use crate::rng::Sampler;
use crate::taylor::TaylorModel;

const CACHE_MAGIC: &[u8; 8] = b"NLRMTRU1";

/// Producer of truth solutions for batches of parameters, e.g. a solver or
/// a disk cache in front of one.
pub trait TruthSource: Sync {
    fn param_dims(&self) -> usize;
    fn truth_set(&self, params: Vec<Vec<f64>>) -> Result<TruthSet>;
}

impl<T: TruthSolver + ?Sized> TruthSource for T {
    fn param_dims(&self) -> usize {
        self.dims()
    }

    fn truth_set(&self, params: Vec<Vec<f64>>) -> Result<TruthSet> {
        TruthSet::build(self, params)
    }
}

/// Sampled parameters with their truth solutions.
#[derive(Debug, Clone)]
pub struct TruthSet {
    grid: Grid,
    dims: usize,
    params: Vec<Vec<f64>>,
    solutions: Vec<FeFunction>,
}

impl TruthSet {
    pub fn build<S: TruthSolver + ?Sized>(solver: &S, params: Vec<Vec<f64>>) -> Result<Self> {
        let dims = solver.dims();
        if let Some(p) = params.iter().find(|p| p.len() != dims) {
            return Err(Error::InvalidArgument(format!(
                "parameter of length {} for a {dims}-parameter solver",
                p.len()
            )));
        }
        let solutions = parallel::try_map_indices(params.len(), |k| solver.solve(&params[k]))?;
        Ok(Self {
            grid: solver.grid(),
            dims,
            params,
            solutions,
        })
    }

    /// `count` uniform draws from `Y`, in sampler order.
    pub fn uniform(solver: &dyn TruthSolver, sampler: &mut Sampler, count: usize) -> Result<Self> {
        let params = sampler.parameters(solver.dims(), count);
        Self::build(solver, params)
    }

    /// `count` uniform draws from `cell`.
    pub fn in_cell(solver: &dyn TruthSolver, cell: &Cell, sampler: &mut Sampler, count: usize) -> Result<Self> {
        let dims = solver.dims();
        let params = (0..count).map(|_| cell.sample(sampler, dims)).collect();
        Self::build(solver, params)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn solutions(&self) -> &[FeFunction] {
        &self.solutions
    }

    /// Subset whose parameters satisfy `keep`, order preserved.
    pub fn filter(&self, keep: impl Fn(&[f64]) -> bool) -> TruthSet {
        let (params, solutions) = self
            .params
            .iter()
            .zip(&self.solutions)
            .filter(|(p, _)| keep(p))
            .map(|(p, u)| (p.clone(), u.clone()))
            .unzip();
        TruthSet {
            grid: self.grid,
            dims: self.dims,
            params,
            solutions,
        }
    }

    /// Little-endian binary cache: magic, grid n, dims, count, parameters, values.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(32 + self.len() * (self.dims + self.grid.dofs()) * 8);
        out.extend_from_slice(CACHE_MAGIC);
        for v in [self.grid.n(), self.dims, self.len()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for p in &self.params {
            for &x in p {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        for u in &self.solutions {
            for &x in u.values() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let tmp = path.with_extension("partial");
        std::fs::File::create(&tmp)?.write_all(&out)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let corrupt = || Error::Parse(format!("truth cache {} is corrupt", path.display()));
        if bytes.len() < 32 || &bytes[..8] != CACHE_MAGIC {
            return Err(corrupt());
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes")) as usize;
        let (n, dims, count) = (word(0), word(1), word(2));
        let grid = Grid::new(n)?;
        let expected = 32 + count * (dims + grid.dofs()) * 8;
        if bytes.len() != expected {
            return Err(corrupt());
        }
        let mut floats = bytes[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let params = (0..count)
            .map(|_| floats.by_ref().take(dims).collect())
            .collect();
        let solutions = (0..count)
            .map(|_| FeFunction::from_values(grid, floats.by_ref().take(grid.dofs()).collect()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            dims,
            params,
            solutions,
        })
    }
}

fn on_grid(u: FeFunction, grid: Grid) -> Result<FeFunction> {
    if u.grid() == grid {
        Ok(u)
    } else {
        u.prolong(grid)
    }
}

/// Per-sample errors `||u(y) - approx(y)||_V` over the truth set.
pub fn errors_against<F>(truth: &TruthSet, approx: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<FeFunction> + Sync + Send,
{
    parallel::try_map_indices(truth.len(), |k| {
        let a = on_grid(approx(&truth.params[k])?, truth.grid)?;
        Ok(truth.solutions[k].sub(&a).norm_v())
    })
}

/// Largest error over the truth set (0 for an empty set).
pub fn sup_error_against<F>(truth: &TruthSet, approx: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<FeFunction> + Sync + Send,
{
    Ok(errors_against(truth, approx)?.into_iter().fold(0.0, f64::max))
}

/// `max_k ||u(y_k) - approx(y_k)||_V` over `count` fresh uniform samples.
pub fn sup_error<F>(solver: &dyn TruthSolver, approx: F, sampler: &mut Sampler, count: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<FeFunction> + Sync + Send,
{
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    sup_error_against(&TruthSet::uniform(solver, sampler, count)?, approx)
}

/// Sup errors of every prefix of a Taylor model: entry `k` is the error of
/// the first `k + 1` terms. One pass per sample.
pub fn prefix_errors(truth: &TruthSet, tm: &TaylorModel) -> Result<Vec<f64>> {
    let tm = if tm.grid() == truth.grid {
        tm.clone()
    } else {
        tm.prolong(truth.grid)?
    };
    let grid = truth.grid;
    let kt: Vec<Vec<f64>> = parallel::map_slice(tm.coeffs(), |t| laplace_apply(grid, t.values()));
    let per_sample = parallel::try_map_indices(truth.len(), |k| -> Result<Vec<f64>> {
        let weights = tm.monomials(&truth.params[k])?;
        let mut r = truth.solutions[k].values().to_vec();
        let mut kr = laplace_apply(grid, &r);
        let mut out = Vec::with_capacity(tm.len());
        for ((c, kc), &w) in tm.coeffs().iter().zip(&kt).zip(&weights) {
            for ((ri, ki), (ci, kci)) in r.iter_mut().zip(kr.iter_mut()).zip(c.values().iter().zip(kc)) {
                *ri -= w * ci;
                *ki -= w * kci;
            }
            out.push(dot(&r, &kr).max(0.0).sqrt());
        }
        Ok(out)
    })?;
    let mut sup = vec![0.0; tm.len()];
    for errs in per_sample {
        for (s, e) in sup.iter_mut().zip(errs) {
            *s = f64::max(*s, e);
        }
    }
    Ok(sup)
}

/// Smallest `m` (1-based) whose prefix error is at most `eps`.
pub fn terms_needed(errors: &[f64], eps: f64) -> Option<usize> {
    errors.iter().position(|&e| e <= eps).map(|k| k + 1)
}

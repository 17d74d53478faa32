//! Reduced bases from a probabilistic weak greedy and Galerkin evaluation.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::affine::AffineDiffusion;
use crate::error::{Error, Result};
use crate::fem::{assemble_stiffness, dot, laplace_apply, load_constant, FeFunction, Grid};
use crate::parallel;
use crate::rng::Sampler;
use crate::truth::TruthSet;

/// Relative size below which a new snapshot direction counts as degenerate.
const DEGENERATE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyOptions {
    pub n_max: usize,
    pub eps_target: f64,
    pub training_count: usize,
    pub seed: u32,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        Self {
            n_max: 40,
            eps_target: 0.0,
            training_count: 200,
            seed: crate::rng::DEFAULT_SEED,
        }
    }
}

/// `V`-orthonormal reduced basis plus the affine pieces of its Galerkin system.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    grid: Grid,
    basis: Vec<FeFunction>,
    params: Vec<Vec<f64>>,
    /// Entry `k`: largest training error of the `k + 1`-dimensional space
    /// (from the last round that measured it).
    training_errors: Vec<f64>,
    a0: Vec<Vec<f64>>,
    aj: Vec<Vec<Vec<f64>>>,
    rhs: Vec<f64>,
}

impl ReducedBasis {
    fn empty(grid: Grid, dims: usize) -> Self {
        Self {
            grid,
            basis: Vec::new(),
            params: Vec::new(),
            training_errors: Vec::new(),
            a0: Vec::new(),
            aj: vec![Vec::new(); dims],
            rhs: Vec::new(),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn basis(&self) -> &[FeFunction] {
        &self.basis
    }

    /// Parameters of the accepted snapshots, in selection order.
    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn training_errors(&self) -> &[f64] {
        &self.training_errors
    }

    /// `max |G_ik - delta_ik|` for the `V` Gram matrix of the basis.
    pub fn orthonormality_defect(&self) -> f64 {
        let kb: Vec<Vec<f64>> = self.basis.iter().map(|b| laplace_apply(self.grid, b.values())).collect();
        let mut worst: f64 = 0.0;
        for (i, bi) in self.basis.iter().enumerate() {
            for (k, kbk) in kb.iter().enumerate() {
                let g = dot(bi.values(), kbk) - if i == k { 1.0 } else { 0.0 };
                worst = worst.max(g.abs());
            }
        }
        worst
    }

    /// Adds `u` after two Gram-Schmidt sweeps; returns false if it is
    /// numerically inside the current span.
    fn push(&mut self, model: &AffineDiffusion, u: &FeFunction, y: Vec<f64>) -> Result<bool> {
        let grid = self.grid;
        let norm0 = u.norm_v();
        let mut v = u.clone();
        for _ in 0..2 {
            let kv = laplace_apply(grid, v.values());
            for b in &self.basis {
                let c = dot(b.values(), &kv);
                v.axpy(-c, b);
            }
        }
        let norm = v.norm_v();
        if !(norm > DEGENERATE * norm0) {
            return Ok(false);
        }
        v.scale(1.0 / norm);

        // Affine pieces of the reduced system, extended by one row/column.
        let abar_op = assemble_stiffness(grid, model.abar())?;
        let kv0 = abar_op.apply(v.values());
        let new0: Vec<f64> = self.basis.iter().map(|b| dot(b.values(), &kv0)).collect();
        let diag0 = dot(v.values(), &kv0);
        let per_j = parallel::map_indices(model.j_max(), |j| {
            let mut kvj = vec![0.0; grid.dofs()];
            model.apply_psi(j, 1.0, v.values(), &mut kvj);
            let col: Vec<f64> = self.basis.iter().map(|b| dot(b.values(), &kvj)).collect();
            (col, dot(v.values(), &kvj))
        });
        for (row, &c) in self.a0.iter_mut().zip(&new0) {
            row.push(c);
        }
        let mut last = new0;
        last.push(diag0);
        self.a0.push(last);
        for (aj, (col, diag)) in self.aj.iter_mut().zip(per_j) {
            for (row, &c) in aj.iter_mut().zip(&col) {
                row.push(c);
            }
            let mut last = col;
            last.push(diag);
            aj.push(last);
        }
        self.rhs.push(load_constant(grid).apply(&v)?);
        self.basis.push(v);
        self.params.push(y);
        Ok(true)
    }

    /// Coefficients of the Galerkin solution in the first `k` basis functions.
    pub fn galerkin_coefficients(&self, y: &[f64], k: usize) -> Result<Vec<f64>> {
        let k = k.min(self.len());
        if y.len() != self.aj.len() {
            return Err(Error::InvalidArgument(format!(
                "parameter has {} entries, basis was built for {}",
                y.len(),
                self.aj.len()
            )));
        }
        if let Some(v) = y.iter().find(|v| !(v.abs() <= 1.0 + 1e-12)) {
            return Err(Error::OutOfDomain(format!("parameter entry {v}")));
        }
        let mut a = DMatrix::from_fn(k, k, |i, l| self.a0[i][l]);
        for (yj, aj) in y.iter().zip(&self.aj) {
            if *yj != 0.0 {
                for i in 0..k {
                    for l in 0..k {
                        a[(i, l)] += yj * aj[i][l];
                    }
                }
            }
        }
        let b = DVector::from_column_slice(&self.rhs[..k]);
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::Degenerate("reduced Galerkin matrix is not positive definite".into()))?;
        let l = chol.l();
        let diag: Vec<f64> = (0..k).map(|i| l[(i, i)]).collect();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        if k > 0 && (lo / hi).powi(2) < 1e-14 {
            return Err(Error::Degenerate(format!(
                "reduced Galerkin matrix is ill conditioned ({:e})",
                (lo / hi).powi(2)
            )));
        }
        Ok(chol.solve(&b).as_slice().to_vec())
    }

    /// Galerkin solution in the span of the first `k` basis functions.
    pub fn project_prefix(&self, y: &[f64], k: usize) -> Result<FeFunction> {
        let c = self.galerkin_coefficients(y, k)?;
        let mut out = FeFunction::zeros(self.grid);
        for (ci, b) in c.iter().zip(&self.basis) {
            out.axpy(*ci, b);
        }
        Ok(out)
    }

    /// `V`-orthogonal projection of `u` onto the first `k` basis functions.
    pub fn orthogonal_projection(&self, u: &FeFunction, k: usize) -> FeFunction {
        let ku = laplace_apply(self.grid, u.values());
        let mut out = FeFunction::zeros(self.grid);
        for b in self.basis.iter().take(k) {
            out.axpy(dot(b.values(), &ku), b);
        }
        out
    }
}

pub fn galerkin_project(rb: &ReducedBasis, y: &[f64]) -> Result<FeFunction> {
    rb.project_prefix(y, rb.len())
}

/// `||u - P_k u||_V` for every `k = 0..=n` in one pass.
fn projection_error_curve(rb: &ReducedBasis, u: &FeFunction, n: usize) -> Vec<f64> {
    let grid = rb.grid;
    let mut r = u.values().to_vec();
    let ku = laplace_apply(grid, &r);
    let mut out = Vec::with_capacity(n + 1);
    out.push(dot(&r, &ku).max(0.0).sqrt());
    for b in rb.basis.iter().take(n) {
        let c = dot(b.values(), &ku);
        for (ri, bi) in r.iter_mut().zip(b.values()) {
            *ri -= c * bi;
        }
        out.push(laplace_norm(grid, &r));
    }
    out
}

fn laplace_norm(grid: Grid, x: &[f64]) -> f64 {
    dot(x, &laplace_apply(grid, x)).max(0.0).sqrt()
}

const MAX_SKIPPED_ROUNDS: usize = 5;

/// Weak greedy with a fresh uniform training set every round.
///
/// Round `k` draws `training_count` parameters, measures the true
/// projection error onto the current space, and adds the worst snapshot.
pub fn weak_greedy(model: &AffineDiffusion, opts: &GreedyOptions) -> Result<ReducedBasis> {
    weak_greedy_with(model, opts, &mut Sampler::new(opts.seed))
}

/// [`weak_greedy`] drawing its training sets from `sampler` (`opts.seed` is ignored).
pub fn weak_greedy_with(model: &AffineDiffusion, opts: &GreedyOptions, sampler: &mut Sampler) -> Result<ReducedBasis> {
    if opts.n_max < 1 || opts.training_count < opts.n_max {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= n_max <= training_count, got {} and {}",
            opts.n_max, opts.training_count
        )));
    }
    let dims = model.j_max();
    let mut rb = ReducedBasis::empty(model.grid(), dims);
    let y0 = vec![0.0; dims];
    let u0 = model.solve(&y0)?;
    if !rb.push(model, &u0, y0)? {
        return Err(Error::Degenerate("solution at y = 0 vanishes".into()));
    }
    let mut skipped = 0;
    while rb.len() < opts.n_max {
        let train = TruthSet::uniform(model, sampler, opts.training_count)?;
        let errors = parallel::map_slice(train.solutions(), |u| {
            let p = rb.orthogonal_projection(u, rb.len());
            laplace_norm(rb.grid, u.sub(&p).values())
        });
        let best = parallel::argmax(&errors).ok_or_else(|| Error::Degenerate("no training errors".into()))?;
        rb.training_errors.push(errors[best]);
        if errors[best] <= opts.eps_target {
            break;
        }
        let y = train.params()[best].clone();
        if rb.push(model, &train.solutions()[best], y)? {
            skipped = 0;
        } else {
            warn!("greedy round {}: selected snapshot is degenerate, skipped", rb.len());
            rb.training_errors.pop();
            skipped += 1;
            if skipped == MAX_SKIPPED_ROUNDS {
                warn!("greedy stopped at dimension {} after {skipped} degenerate rounds", rb.len());
                break;
            }
        }
    }
    Ok(rb)
}

/// Sup over `truth` of the Galerkin error using `k = 1..=n` basis functions.
pub fn galerkin_error_curve(rb: &ReducedBasis, truth: &TruthSet) -> Result<Vec<f64>> {
    if truth.grid() != rb.grid {
        return Err(Error::GridMismatch {
            left: rb.grid.n(),
            right: truth.grid().n(),
        });
    }
    let n = rb.len();
    let per_sample = parallel::try_map_indices(truth.len(), |s| -> Result<Vec<f64>> {
        let u = &truth.solutions()[s];
        (1..=n)
            .map(|k| Ok(laplace_norm(rb.grid, u.sub(&rb.project_prefix(&truth.params()[s], k)?).values())))
            .collect()
    })?;
    let mut sup = vec![0.0; n];
    for errs in per_sample {
        for (a, e) in sup.iter_mut().zip(errs) {
            *a = f64::max(*a, e);
        }
    }
    Ok(sup)
}

/// Sup over `truth` of `dist_V(u, V_k)` for `k = 1..=n`.
pub fn projection_error_sup(rb: &ReducedBasis, truth: &TruthSet) -> Vec<f64> {
    let n = rb.len();
    let curves = parallel::map_slice(truth.solutions(), |u| projection_error_curve(rb, u, n));
    let mut sup = vec![0.0; n];
    for c in curves {
        for (a, e) in sup.iter_mut().zip(&c[1..]) {
            *a = f64::max(*a, *e);
        }
    }
    sup
}

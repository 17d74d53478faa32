//! State estimation from local averages: inf-sup constants and linear or
//! affine least-squares recovery.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::{dot, gaussian_functional, laplace_apply, FeFunction, Grid, LoadVector, RieszMap};
use crate::library::Library;
use crate::parallel;
use crate::rng::Sampler;

/// Default kernel width, the repeating decimal 227.5 with 5 repeating.
pub const DEFAULT_LAMBDA: f64 = 2048.0 / 9.0;

/// Singular values below this make the inf-sup constant infinite.
const SIGMA_FLOOR: f64 = 1e-14;

/// Residual fraction below which a vector is treated as dependent.
const DEPENDENT: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct MeasurementSet {
    grid: Grid,
    lambda: f64,
    centers: Vec<[f64; 2]>,
    functionals: Vec<LoadVector>,
    representers: Vec<FeFunction>,
    /// `V`-orthonormal basis of `W`.
    ortho: Vec<FeFunction>,
    /// `ortho[k] = sum_j transform[k][j] representers[j]`.
    transform: Vec<Vec<f64>>,
    dropped: Vec<usize>,
}

/// Two-pass modified Gram-Schmidt in the `V` inner product. Returns the
/// orthonormal vectors, the coefficients expressing them in the input, and
/// the indices of inputs dropped as dependent.
fn orthonormalize(grid: Grid, vectors: &[FeFunction]) -> (Vec<FeFunction>, Vec<Vec<f64>>, Vec<usize>) {
    let n = vectors.len();
    let mut basis: Vec<FeFunction> = Vec::new();
    let mut kbasis: Vec<Vec<f64>> = Vec::new();
    let mut coeffs: Vec<Vec<f64>> = Vec::new();
    let mut dropped = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        let norm0 = v.norm_v();
        let mut x = v.clone();
        let mut c = vec![0.0; n];
        c[i] = 1.0;
        for _ in 0..2 {
            for (b, (kb, cb)) in basis.iter().zip(kbasis.iter().zip(&coeffs)) {
                let p = dot(x.values(), kb);
                x.axpy(-p, b);
                for (ci, cbi) in c.iter_mut().zip(cb) {
                    *ci -= p * cbi;
                }
            }
        }
        let norm = x.norm_v();
        if !(norm > DEPENDENT * norm0) {
            dropped.push(i);
            continue;
        }
        x.scale(1.0 / norm);
        for ci in c.iter_mut() {
            *ci /= norm;
        }
        kbasis.push(laplace_apply(grid, x.values()));
        basis.push(x);
        coeffs.push(c);
    }
    (basis, coeffs, dropped)
}

impl MeasurementSet {
    /// Local averages around the given centers.
    pub fn from_centers(grid: Grid, centers: Vec<[f64; 2]>, lambda: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidArgument("need at least one measurement".into()));
        }
        let functionals = centers
            .iter()
            .map(|&c| gaussian_functional(grid, c, lambda))
            .collect::<Result<Vec<_>>>()?;
        let riesz = RieszMap::new(grid)?;
        let representers = parallel::try_map_slice(&functionals, |l| riesz.representer(l))?;
        let (ortho, transform, dropped) = orthonormalize(grid, &representers);
        if !dropped.is_empty() {
            warn!("measurements {dropped:?} are redundant and were dropped from W");
        }
        Ok(Self {
            grid,
            lambda,
            centers,
            functionals,
            representers,
            ortho,
            transform,
            dropped,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn representers(&self) -> &[FeFunction] {
        &self.representers
    }

    pub fn orthonormal_basis(&self) -> &[FeFunction] {
        &self.ortho
    }

    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    /// Number of measurements taken.
    pub fn len(&self) -> usize {
        self.functionals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functionals.is_empty()
    }

    /// `dim W` after dropping dependent representers.
    pub fn dim(&self) -> usize {
        self.ortho.len()
    }

    /// Data in the orthonormal basis: `<u, w_k>_V = sum_j T_kj l_j(u)`.
    pub fn orthonormal_data(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.len() {
            return Err(Error::InvalidArgument(format!("{} data values for {} measurements", w.len(), self.len())));
        }
        Ok(self.transform.iter().map(|t| dot(t, w)).collect())
    }

    /// `P_W u` from raw data.
    pub fn observed_component(&self, w: &[f64]) -> Result<FeFunction> {
        let wt = self.orthonormal_data(w)?;
        let mut out = FeFunction::zeros(self.grid);
        for (c, b) in wt.iter().zip(&self.ortho) {
            out.axpy(*c, b);
        }
        Ok(out)
    }
}

/// `L` measurement centers uniform on the unit square (x then y per center).
pub fn build_measurements(grid: Grid, count: usize, lambda: f64, seed: u32) -> Result<MeasurementSet> {
    build_measurements_with(grid, count, lambda, &mut Sampler::new(seed))
}

/// [`build_measurements`] drawing the centers from `sampler`.
pub fn build_measurements_with(grid: Grid, count: usize, lambda: f64, sampler: &mut Sampler) -> Result<MeasurementSet> {
    let centers = (0..count).map(|_| [sampler.next_unit(), sampler.next_unit()]).collect();
    MeasurementSet::from_centers(grid, centers, lambda)
}

/// `w_j = l_j(u) = <u, omega_j>_V`.
pub fn measure(ms: &MeasurementSet, u: &FeFunction) -> Result<Vec<f64>> {
    ms.functionals.iter().map(|l| l.apply(u)).collect()
}

/// Cross-Gram `G_ik = <v_i, w_k>_V` for an orthonormal space basis.
fn cross_gram(ms: &MeasurementSet, space: &[FeFunction]) -> Result<DMatrix<f64>> {
    let rows = space
        .iter()
        .map(|v| ms.orthonormal_data(&measure(ms, v)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(space.len(), ms.dim(), |i, k| rows[i][k]))
}

struct Prepared {
    basis: Vec<FeFunction>,
    gram: DMatrix<f64>,
    mu: f64,
}

fn prepare(ms: &MeasurementSet, space: &[FeFunction]) -> Result<Prepared> {
    for v in space {
        ms.grid.check_same(&v.grid())?;
    }
    let (basis, _, dropped) = orthonormalize(ms.grid, space);
    let gram = cross_gram(ms, &basis)?;
    // A numerically dependent spanning set has no well-defined dimension.
    let mu = if !dropped.is_empty() {
        debug!("space functions {dropped:?} are numerically dependent");
        f64::INFINITY
    } else if basis.is_empty() {
        1.0
    } else if basis.len() > ms.dim() {
        f64::INFINITY
    } else {
        let sv = gram.singular_values();
        let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if smin < SIGMA_FLOOR {
            f64::INFINITY
        } else {
            1.0 / smin
        }
    };
    Ok(Prepared { basis, gram, mu })
}

/// `mu(W, V) = 1 / sigma_min(G)`, infinite when `dim V > dim W`, when `G` is
/// numerically singular, or when the spanning set is numerically dependent.
pub fn inf_sup_mu(ms: &MeasurementSet, space: &[FeFunction]) -> Result<f64> {
    Ok(prepare(ms, space)?.mu)
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub u_hat: Option<FeFunction>,
    pub mu: f64,
    pub eps_est: Option<f64>,
    pub bound: Option<f64>,
    pub true_error: Option<f64>,
}

/// Least-squares recovery from a linear space: `v*` minimizes
/// `||P_W v - P_W u||_V` over the space, and the estimate is
/// `v* + P_W u - P_W v*`.
pub fn pbdw_recover(ms: &MeasurementSet, space: &[FeFunction], w: &[f64]) -> Result<RecoveryResult> {
    let prep = prepare(ms, space)?;
    if !prep.mu.is_finite() {
        return Err(Error::Degenerate(format!(
            "inf-sup constant is infinite for a {}-dimensional space and {} measurements",
            space.len(),
            ms.dim()
        )));
    }
    let wt = DVector::from_vec(ms.orthonormal_data(w)?);
    let mut u_hat = FeFunction::zeros(ms.grid);
    let mut resid = wt.clone();
    if !prep.basis.is_empty() {
        let gt = prep.gram.transpose();
        let c = gt
            .clone()
            .svd(true, true)
            .solve(&wt, 0.0)
            .map_err(|e| Error::Degenerate(e.to_string()))?;
        for (ci, b) in c.iter().zip(&prep.basis) {
            u_hat.axpy(*ci, b);
        }
        resid -= gt * c;
    }
    for (r, b) in resid.iter().zip(&ms.ortho) {
        u_hat.axpy(*r, b);
    }
    Ok(RecoveryResult {
        u_hat: Some(u_hat),
        mu: prep.mu,
        eps_est: None,
        bound: None,
        true_error: None,
    })
}

/// Recovery from the affine space `offset + span(space)` by shifting the data.
pub fn affine_recover(ms: &MeasurementSet, offset: &FeFunction, space: &[FeFunction], w: &[f64]) -> Result<RecoveryResult> {
    let shift = measure(ms, offset)?;
    let shifted: Vec<f64> = w.iter().zip(&shift).map(|(a, b)| a - b).collect();
    let mut r = pbdw_recover(ms, space, &shifted)?;
    if let Some(u) = r.u_hat.as_mut() {
        u.axpy(1.0, offset);
    }
    Ok(r)
}

impl RecoveryResult {
    /// Fills in the error estimate, the bound `mu * eps`, and the true error.
    pub fn with_reference(mut self, eps_est: Option<f64>, truth: Option<&FeFunction>) -> Self {
        self.eps_est = eps_est;
        self.bound = eps_est.map(|e| self.mu * e);
        if let (Some(u), Some(t)) = (&self.u_hat, truth) {
            self.true_error = Some(u.sub(t).norm_v());
        }
        self
    }
}

/// `dist_V(u, offset + span(space))`.
pub fn distance_to_affine(u: &FeFunction, offset: Option<&FeFunction>, space: &[FeFunction]) -> f64 {
    let grid = u.grid();
    let (basis, _, _) = orthonormalize(grid, space);
    let mut r = match offset {
        Some(o) => u.sub(o),
        None => u.clone(),
    };
    for _ in 0..2 {
        let kr = laplace_apply(grid, r.values());
        for b in &basis {
            let c = dot(b.values(), &kr);
            r.axpy(-c, b);
        }
    }
    r.norm_v()
}

/// Affine recovery with every cell's local model; cells with an infinite
/// inf-sup constant are reported without an estimate.
pub fn per_cell_recovery(
    ms: &MeasurementSet,
    lib: &Library,
    w: &[f64],
    eps_per_cell: Option<&[f64]>,
    truth: Option<&FeFunction>,
) -> Result<Vec<RecoveryResult>> {
    parallel::try_map_indices(lib.cell_count(), |k| {
        let tm = &lib.models()[k];
        let eps = eps_per_cell.map(|e| e[k]);
        match affine_recover(ms, &tm.coeffs()[0], &tm.coeffs()[1..], w) {
            Ok(r) => Ok(r.with_reference(eps, truth)),
            Err(Error::Degenerate(_)) => Ok(RecoveryResult {
                u_hat: None,
                mu: f64::INFINITY,
                eps_est: eps,
                bound: eps.map(|_| f64::INFINITY),
                true_error: None,
            }),
            Err(e) => Err(e.in_cell(k)),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::build_test_family_with;
    use crate::fem::v_inner;

    fn grid() -> Grid {
        Grid::new(16).unwrap()
    }

    fn random_function(g: Grid, s: &mut Sampler) -> FeFunction {
        FeFunction::from_values(g, (0..g.dofs()).map(|_| s.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn single_measurement() {
        let ms = build_measurements(grid(), 1, DEFAULT_LAMBDA, 1).unwrap();
        assert_eq!(ms.dim(), 1);
        assert!((inf_sup_mu(&ms, ms.orthonormal_basis()).unwrap() - 1.0).abs() < 1e-12);
        assert!((DEFAULT_LAMBDA - 227.555_555_555_555_6).abs() < 1e-9);
    }

    #[test]
    fn measurements_are_riesz_inner_products() {
        let ms = build_measurements(grid(), 6, DEFAULT_LAMBDA, 2).unwrap();
        let mut s = Sampler::new(3);
        let u = random_function(grid(), &mut s);
        let w = measure(&ms, &u).unwrap();
        for (wj, om) in w.iter().zip(ms.representers()) {
            assert!((wj - v_inner(&u, om).unwrap()).abs() < 1e-10 * (1.0 + wj.abs()));
        }
        let zero = measure(&ms, &FeFunction::zeros(grid())).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let mut u2 = u.clone();
        u2.scale(3.0);
        let w2 = measure(&ms, &u2).unwrap();
        assert!(w.iter().zip(&w2).all(|(a, b)| (3.0 * a - b).abs() < 1e-12));
        // Orthonormal data of the k-th W basis vector is the k-th unit vector.
        let k = 2;
        let wt = ms.orthonormal_data(&measure(&ms, &ms.orthonormal_basis()[k]).unwrap()).unwrap();
        for (i, v) in wt.iter().enumerate() {
            assert!((v - if i == k { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
    }

    #[test]
    fn inf_sup_properties() {
        let g = grid();
        let ms = build_measurements(g, 5, DEFAULT_LAMBDA, 4).unwrap();
        let mut s = Sampler::new(5);
        let space: Vec<FeFunction> = (0..3).map(|_| random_function(g, &mut s)).collect();
        let mu = inf_sup_mu(&ms, &space).unwrap();
        assert!(mu >= 1.0);
        // Invariant under a change of basis.
        let mixed = vec![
            space[0].clone(),
            {
                let mut v = space[1].clone();
                v.axpy(2.0, &space[0]);
                v
            },
            {
                let mut v = space[2].clone();
                v.axpy(-0.5, &space[1]);
                v.scale(7.0);
                v
            },
        ];
        assert!((inf_sup_mu(&ms, &mixed).unwrap() / mu - 1.0).abs() < 1e-8);
        // Nested growth never decreases mu.
        let mut prev = 1.0;
        for k in 1..=3 {
            let m = inf_sup_mu(&ms, &space[..k]).unwrap();
            assert!(m >= prev * (1.0 - 1e-12));
            prev = m;
        }
        let too_many: Vec<FeFunction> = (0..6).map(|_| random_function(g, &mut s)).collect();
        assert_eq!(inf_sup_mu(&ms, &too_many).unwrap(), f64::INFINITY);
        assert!(pbdw_recover(&ms, &too_many, &[0.0; 5]).is_err());
    }

    #[test]
    fn exact_recovery_inside_space() {
        let (model, _) = build_test_family_with(grid(), 4.0, 0.1, 0, 4).unwrap();
        let ms = build_measurements(grid(), 8, DEFAULT_LAMBDA, 6).unwrap();
        let space: Vec<FeFunction> = [[0.0; 4], [0.5, -0.3, 0.1, 0.9], [-1.0, 1.0, 0.0, 0.2]]
            .iter()
            .map(|y| model.solve(y).unwrap())
            .collect();
        let mut truth = space[1].clone();
        truth.axpy(-0.4, &space[2]);
        let w = measure(&ms, &truth).unwrap();
        let r = pbdw_recover(&ms, &space, &w).unwrap().with_reference(Some(0.0), Some(&truth));
        assert!(r.true_error.unwrap() < 1e-9 * truth.norm_v());
        assert_eq!(r.bound, Some(0.0));
    }

    #[test]
    fn empty_space_gives_observed_component() {
        let ms = build_measurements(grid(), 4, DEFAULT_LAMBDA, 7).unwrap();
        let u = random_function(grid(), &mut Sampler::new(8));
        let w = measure(&ms, &u).unwrap();
        let r = pbdw_recover(&ms, &[], &w).unwrap();
        let pw = ms.observed_component(&w).unwrap();
        assert!(r.u_hat.unwrap().sub(&pw).norm_v() < 1e-12);
        assert_eq!(r.mu, 1.0);
    }

    #[test]
    fn instance_bound_holds() {
        let (model, _) = build_test_family_with(grid(), 4.0, 0.1, 0, 6).unwrap();
        let ms = build_measurements(grid(), 10, DEFAULT_LAMBDA, 9).unwrap();
        let tm = crate::taylor::adaptive_ln(&model, 4, 6).unwrap();
        let mut s = Sampler::new(10);
        for _ in 0..10 {
            let y = s.parameter(6);
            let u = model.solve(&y).unwrap();
            let w = measure(&ms, &u).unwrap();
            let lin = pbdw_recover(&ms, tm.coeffs(), &w).unwrap().with_reference(None, Some(&u));
            let d = distance_to_affine(&u, None, tm.coeffs());
            assert!(lin.true_error.unwrap() <= lin.mu * d * (1.0 + 1e-9));
            let aff = affine_recover(&ms, &tm.coeffs()[0], &tm.coeffs()[1..], &w)
                .unwrap()
                .with_reference(None, Some(&u));
            let d = distance_to_affine(&u, Some(&tm.coeffs()[0]), &tm.coeffs()[1..]);
            assert!(aff.true_error.unwrap() <= aff.mu * d * (1.0 + 1e-9));
        }
    }
}

//! Taylor reduced models `u(y) ~ sum_{nu in Lambda} t_nu y^nu`.
//!
//! Coefficients follow from matching powers of `y` in the variational form:
//! `abar t_0 = f` and `abar t_nu = -sum_{j: nu_j > 0} psi_j t_{nu - e_j}`,
//! so a single factorization of the `abar` stiffness serves every `nu`.

use std::collections::BTreeMap;

use log::debug;

use crate::affine::{lq_norm_inverse, AffineDiffusion, WeightSequence};
use crate::error::{Error, Result};
use crate::fem::{assemble_stiffness, load_constant, CholeskyFactor, FeFunction, Grid};
use crate::index::{apriori_select, monomial, LowerSet, Margin, MultiIndex};
use crate::parallel;
use crate::partition::Cell;

/// Taylor model on a cell; global models use [`Cell::whole`].
#[derive(Debug, Clone)]
pub struct TaylorModel {
    lam: LowerSet,
    coeffs: Vec<FeFunction>,
    norms: Vec<f64>,
    cell: Cell,
    dims: usize,
}

impl TaylorModel {
    /// Reassembles a stored model; `coeffs` must follow the order of `lam`.
    pub fn from_parts(lam: LowerSet, coeffs: Vec<FeFunction>, cell: Cell, dims: usize) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() != lam.len() {
            return Err(Error::InvalidArgument(format!(
                "{} coefficients for {} indices",
                coeffs.len(),
                lam.len()
            )));
        }
        let grid = coeffs[0].grid();
        for c in &coeffs {
            grid.check_same(&c.grid())?;
        }
        Ok(Self {
            norms: coeffs.iter().map(FeFunction::norm_v).collect(),
            lam,
            coeffs,
            cell,
            dims,
        })
    }

    pub fn lam(&self) -> &LowerSet {
        &self.lam
    }

    /// Coefficients in the order of [`TaylorModel::lam`].
    pub fn coeffs(&self) -> &[FeFunction] {
        &self.coeffs
    }

    /// `||t_nu||_V`, aligned with the coefficients.
    pub fn coefficient_norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn cell(&self) -> &Cell {
        &self.cell
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn grid(&self) -> Grid {
        self.coeffs[0].grid()
    }

    /// The model on the first `k` indices; a lower set by construction.
    pub fn prefix(&self, k: usize) -> TaylorModel {
        let k = k.clamp(1, self.len());
        TaylorModel {
            lam: self.lam.prefix(k),
            coeffs: self.coeffs[..k].to_vec(),
            norms: self.norms[..k].to_vec(),
            cell: self.cell.clone(),
            dims: self.dims,
        }
    }

    /// Local coordinates `(y - center)/half`, checking that `y` lies in the cell.
    pub fn reference_coordinates(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dims {
            return Err(Error::InvalidArgument(format!(
                "parameter has {} entries, model has {}",
                y.len(),
                self.dims
            )));
        }
        if !self.cell.contains(y) {
            return Err(Error::OutOfDomain(format!("y = {y:?} is outside the model cell")));
        }
        Ok(self.cell.map_to_reference(y))
    }

    /// Monomial values `y~^nu` for every index of the model.
    pub fn monomials(&self, y: &[f64]) -> Result<Vec<f64>> {
        let t = self.reference_coordinates(y)?;
        Ok(self.lam.iter().map(|nu| monomial(&t, nu)).collect())
    }

    pub fn evaluate(&self, y: &[f64]) -> Result<FeFunction> {
        let weights = self.monomials(y)?;
        let mut out = FeFunction::zeros(self.grid());
        for (c, &w) in self.coeffs.iter().zip(&weights) {
            out.axpy(w, c);
        }
        Ok(out)
    }

    /// Same model with every coefficient interpolated to a finer grid.
    pub fn prolong(&self, fine: Grid) -> Result<TaylorModel> {
        let coeffs = parallel::try_map_indices(self.len(), |k| self.coeffs[k].prolong(fine))?;
        Ok(TaylorModel {
            lam: self.lam.clone(),
            norms: coeffs.iter().map(FeFunction::norm_v).collect(),
            coeffs,
            cell: self.cell.clone(),
            dims: self.dims,
        })
    }
}

pub fn evaluate_taylor(tm: &TaylorModel, y: &[f64]) -> Result<FeFunction> {
    tm.evaluate(y)
}

/// Solver for the coefficient recursion of one (possibly recentred) model.
struct Recursion<'a> {
    model: &'a AffineDiffusion,
    factor: CholeskyFactor,
}

impl<'a> Recursion<'a> {
    fn new(model: &'a AffineDiffusion) -> Result<Self> {
        let factor = CholeskyFactor::new(assemble_stiffness(model.grid(), model.abar())?)?;
        Ok(Self { model, factor })
    }

    fn zero(&self) -> Result<FeFunction> {
        self.factor.solve(&load_constant(self.model.grid()))
    }

    fn next<'b>(&self, nu: &MultiIndex, lookup: impl Fn(&MultiIndex) -> Option<&'b FeFunction>) -> Result<FeFunction> {
        let grid = self.model.grid();
        let mut rhs = vec![0.0; grid.dofs()];
        for (j, prev) in nu.backward_neighbors() {
            if j >= self.model.j_max() {
                return Err(Error::InvalidArgument(format!(
                    "index {nu} uses direction {} of a {}-parameter model",
                    j + 1,
                    self.model.j_max()
                )));
            }
            let t = lookup(&prev).ok_or(Error::NotLower)?;
            self.model.apply_psi(j, -1.0, t.values(), &mut rhs);
        }
        FeFunction::from_values(grid, self.factor.solve_values(&rhs)?)
    }
}

fn local_model(model: &AffineDiffusion, cell: &Cell) -> Result<AffineDiffusion> {
    if cell.dims() == 0 {
        Ok(model.clone())
    } else {
        model.recenter_rescale(cell)
    }
}

/// Coefficients `t_nu` for every `nu` in `lam`, on the model's grid.
pub fn taylor_coefficients(model: &AffineDiffusion, lam: &LowerSet) -> Result<TaylorModel> {
    taylor_coefficients_on_cell(model, &Cell::whole(), lam)
}

/// Coefficients of the model recentred and rescaled to `cell`.
pub fn taylor_coefficients_on_cell(model: &AffineDiffusion, cell: &Cell, lam: &LowerSet) -> Result<TaylorModel> {
    let local = local_model(model, cell)?;
    let rec = Recursion::new(&local)?;
    // Indices sorted by degree, so every backward neighbour precedes its successors.
    let mut by_degree: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (k, nu) in lam.iter().enumerate() {
        by_degree.entry(nu.degree()).or_default().push(k);
    }
    let mut coeffs: Vec<Option<FeFunction>> = vec![None; lam.len()];
    for (degree, ks) in by_degree {
        let solved = if degree == 0 {
            vec![rec.zero()?]
        } else {
            let slots = &coeffs;
            parallel::try_map_indices(ks.len(), |i| {
                rec.next(&lam.as_slice()[ks[i]], |p| {
                    lam.position(p).and_then(|k| slots[k].as_ref())
                })
            })?
        };
        for (k, t) in ks.into_iter().zip(solved) {
            coeffs[k] = Some(t);
        }
    }
    let coeffs: Vec<FeFunction> = coeffs.into_iter().map(|c| c.expect("all indices solved")).collect();
    Ok(TaylorModel {
        lam: lam.clone(),
        norms: coeffs.iter().map(FeFunction::norm_v).collect(),
        coeffs,
        cell: cell.clone(),
        dims: model.j_max(),
    })
}

/// Taylor model on the `m` indices with the largest `rho^{-nu}`.
pub fn apriori_model(model: &AffineDiffusion, w: &WeightSequence, m: usize, active_dims: usize) -> Result<TaylorModel> {
    let lam = apriori_select(w, m, active_dims.min(model.j_max()))?;
    taylor_coefficients(model, &lam)
}

/// Largest-neighbour selection on the whole box.
pub fn adaptive_ln(model: &AffineDiffusion, n: usize, active_dims: usize) -> Result<TaylorModel> {
    adaptive_ln_on_cell(model, &Cell::whole(), n, active_dims)
}

/// Largest-neighbour selection: starting from `{0}`, repeatedly compute
/// `t_nu` on the reduced margin and absorb the index of largest `||t_nu||_V`.
/// Margin coefficients are cached, so each index is solved exactly once.
pub fn adaptive_ln_on_cell(model: &AffineDiffusion, cell: &Cell, n: usize, active_dims: usize) -> Result<TaylorModel> {
    if n < 1 {
        return Err(Error::InvalidArgument("need at least one term".into()));
    }
    let dims = active_dims.min(model.j_max());
    let local = local_model(model, cell)?;
    let rec = Recursion::new(&local)?;
    let mut lam = LowerSet::new();
    let t0 = rec.zero()?;
    let mut coeffs = vec![t0.clone()];
    let mut norms = vec![t0.norm_v()];
    let mut accepted: BTreeMap<MultiIndex, FeFunction> = BTreeMap::new();
    accepted.insert(MultiIndex::zero(), t0);
    let mut margin = Margin::of(&lam, dims);
    let mut pending: BTreeMap<MultiIndex, (FeFunction, f64)> = BTreeMap::new();
    let mut fresh: Vec<MultiIndex> = margin.members().iter().cloned().collect();
    let mut running_max = f64::INFINITY;
    while lam.len() < n {
        let solved = parallel::try_map_indices(fresh.len(), |i| rec.next(&fresh[i], |p| accepted.get(p)))?;
        for (nu, t) in fresh.drain(..).zip(solved) {
            let norm = t.norm_v();
            pending.insert(nu, (t, norm));
        }
        // Margin order is the BTreeMap order, so the first maximum wins ties.
        let keys: Vec<&MultiIndex> = pending.keys().collect();
        let values: Vec<f64> = pending.values().map(|(_, v)| *v).collect();
        let Some(best) = parallel::argmax(&values) else {
            break;
        };
        let nu = keys[best].clone();
        let (t, norm) = pending.remove(&nu).expect("selected from pending");
        if norm > running_max * (1.0 + 1e-9) {
            debug!("largest neighbour {nu} has norm {norm:e} above earlier pick {running_max:e}");
        }
        running_max = running_max.min(norm);
        fresh = margin.absorb(&mut lam, nu.clone())?;
        accepted.insert(nu, t.clone());
        coeffs.push(t);
        norms.push(norm);
    }
    Ok(TaylorModel {
        lam,
        coeffs,
        norms,
        cell: cell.clone(),
        dims: model.j_max(),
    })
}

/// Constants of the a-priori Taylor error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub kappa: f64,
    pub delta: f64,
    pub q: f64,
    pub r: f64,
    pub beta: f64,
    pub c_rho_q: f64,
    pub c_delta: f64,
    pub lq_norm: f64,
}

impl BoundConstants {
    /// `beta = -ln(1 - kappa^{-q}) kappa^q`,
    /// `C(rho,q) = beta^{1/q} exp(beta/q ||1/rho||_q^q)`,
    /// `C_delta^2 = (2 - delta) a_max / ((2 - 2 delta) a_min^3) ||f||_{V'}^2`.
    pub fn new(w: &WeightSequence, delta: f64, a_min: f64, a_max: f64, f_dual: f64) -> Result<Self> {
        let q = w.q();
        if !(q > 0.0 && q < 2.0) {
            return Err(Error::InvalidArgument(format!("q = {q} not in (0, 2)")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::InvalidArgument(format!("delta = {delta} not in [0, 1)")));
        }
        if !(a_min > 0.0 && a_max >= a_min) {
            return Err(Error::InvalidArgument(format!("bad ellipticity bounds {a_min}, {a_max}")));
        }
        let kappa = w.kappa();
        let beta = -(-kappa.powf(-q)).ln_1p() * kappa.powf(q);
        let lq_norm = lq_norm_inverse(w.rho(), q);
        let c_rho_q = beta.powf(1.0 / q) * (beta / q * lq_norm.powf(q)).exp();
        let c_delta = ((2.0 - delta) * a_max / ((2.0 - 2.0 * delta) * a_min.powi(3))).sqrt() * f_dual;
        Ok(Self {
            kappa,
            delta,
            q,
            r: 1.0 / q - 0.5,
            beta,
            c_rho_q,
            c_delta,
            lq_norm,
        })
    }

    /// `C(delta, rho, q) = C(rho, q) C_delta`.
    pub fn constant(&self) -> f64 {
        self.c_rho_q * self.c_delta
    }

    /// `C(delta, rho, q) ||1/rho||_q m^{-r}`.
    pub fn bound(&self, m: usize) -> f64 {
        self.constant() * self.lq_norm * (m as f64).powf(-self.r)
    }
}

pub fn theorem_bound(w: &WeightSequence, delta: f64, a_min: f64, a_max: f64, f_dual: f64, m: usize) -> Result<f64> {
    if m < 1 {
        return Err(Error::InvalidArgument("need m >= 1".into()));
    }
    Ok(BoundConstants::new(w, delta, a_min, a_max, f_dual)?.bound(m))
}

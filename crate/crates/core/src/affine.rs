//! Affine diffusion coefficients `a(y) = abar + sum_j y_j psi_j`, the
//! piecewise-constant checkerboard test family, and weight sequences.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    apply_field_stiffness, assemble_stiffness, load_constant, CholeskyFactor, FeFunction, Grid,
    ScalarField, SpdOperator,
};
use crate::partition::Cell;
use crate::rng::Sampler;

/// Number of checkerboard subdomains of the test family (8 x 8).
pub const SUBDOMAINS: usize = 64;

/// Slack allowed when checking `|y_j| <= 1`.
pub(crate) const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct AffineDiffusion {
    abar: ScalarField,
    psis: Vec<ScalarField>,
    supports: Vec<Vec<(usize, f64)>>,
}

impl AffineDiffusion {
    pub fn new(abar: ScalarField, psis: Vec<ScalarField>) -> Result<Self> {
        let grid = abar.grid();
        if let Some(p) = psis.iter().find(|p| p.grid() != grid) {
            return Err(Error::GridMismatch {
                left: grid.n(),
                right: p.grid().n(),
            });
        }
        let supports = psis.iter().map(ScalarField::support).collect();
        Ok(Self {
            abar,
            psis,
            supports,
        })
    }

    pub fn grid(&self) -> Grid {
        self.abar.grid()
    }

    /// Number of parameters `J_max`.
    pub fn j_max(&self) -> usize {
        self.psis.len()
    }

    pub fn abar(&self) -> &ScalarField {
        &self.abar
    }

    pub fn psis(&self) -> &[ScalarField] {
        &self.psis
    }

    /// Keeps only the first `k` parameters.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.j_max());
        Self {
            abar: self.abar.clone(),
            psis: self.psis[..k].to_vec(),
            supports: self.supports[..k].to_vec(),
        }
    }

    /// Same model on a finer grid (element injection).
    pub fn refine(&self, fine: Grid) -> Result<Self> {
        if fine == self.grid() {
            return Ok(self.clone());
        }
        let abar = self.abar.refine(fine)?;
        let psis = self
            .psis
            .iter()
            .map(|p| p.refine(fine))
            .collect::<Result<Vec<_>>>()?;
        Self::new(abar, psis)
    }

    fn check_parameter(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.j_max() {
            return Err(Error::InvalidArgument(format!(
                "parameter has {} coordinates, model has {}",
                y.len(),
                self.j_max()
            )));
        }
        if let Some((j, v)) = y
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.abs() <= 1.0 + DOMAIN_SLACK))
        {
            return Err(Error::OutOfDomain(format!("y_{} = {v}", j + 1)));
        }
        Ok(())
    }

    pub fn evaluate_coefficient(&self, y: &[f64]) -> Result<ScalarField> {
        self.check_parameter(y)?;
        let mut a = self.abar.clone();
        for (psi, &yj) in self.psis.iter().zip(y) {
            if yj != 0.0 {
                a.add_scaled(yj, psi)?;
            }
        }
        Ok(a)
    }

    /// `(inf (abar - sum |psi_j|), sup (abar + sum |psi_j|))` over `D`.
    pub fn check_uea(&self) -> (f64, f64) {
        let abs_sum = self.abs_psi_sum(None);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (a, s) in self.abar.values().iter().zip(&abs_sum) {
            lo = lo.min(a - s);
            hi = hi.max(a + s);
        }
        (lo, hi)
    }

    /// `|| sum_j rho_j |psi_j| / abar ||_inf` for an arbitrary positive weight list.
    pub fn weighted_delta(&self, rho: &[f64]) -> f64 {
        let abs_sum = self.abs_psi_sum(Some(rho));
        self.abar
            .values()
            .iter()
            .zip(&abs_sum)
            .map(|(a, s)| s / a)
            .fold(0.0, f64::max)
    }

    pub fn check_delta(&self, w: &WeightSequence) -> f64 {
        self.weighted_delta(w.rho())
    }

    fn abs_psi_sum(&self, weights: Option<&[f64]>) -> Vec<f64> {
        let mut acc = vec![0.0; self.grid().elements()];
        for (j, support) in self.supports.iter().enumerate() {
            let wj = match weights {
                Some(w) => w.get(j).copied().unwrap_or(0.0),
                None => 1.0,
            };
            for &(e, v) in support {
                acc[e] += wj * v.abs();
            }
        }
        acc
    }

    /// Substitutes `y = center + half * y~`, so the cell becomes `Y` again.
    pub fn recenter_rescale(&self, cell: &Cell) -> Result<AffineDiffusion> {
        if !cell.inside_unit_box() {
            return Err(Error::OutOfDomain(format!("cell {cell:?} is not inside Y")));
        }
        if (self.j_max()..cell.dims()).any(|j| cell.center(j) != 0.0 || cell.half(j) != 1.0) {
            return Err(Error::InvalidArgument(
                "cell subdivides directions the model does not have".into(),
            ));
        }
        let center: Vec<f64> = (0..self.j_max()).map(|j| cell.center(j)).collect();
        let abar = self.evaluate_coefficient(&center)?;
        let psis = self
            .psis
            .iter()
            .enumerate()
            .map(|(j, p)| p.scaled(cell.half(j)))
            .collect();
        Self::new(abar, psis)
    }

    /// `out += scale * K(psi_j) x`.
    pub(crate) fn apply_psi(&self, j: usize, scale: f64, x: &[f64], out: &mut [f64]) {
        apply_field_stiffness(self.grid(), &self.supports[j], scale, x, out);
    }

    pub fn stiffness(&self, y: &[f64]) -> Result<SpdOperator> {
        assemble_stiffness(self.grid(), &self.evaluate_coefficient(y)?)
    }

    /// Finite element solution for `f = 1` at parameter `y`.
    pub fn solve(&self, y: &[f64]) -> Result<FeFunction> {
        let factor = CholeskyFactor::new(self.stiffness(y)?)?;
        factor.solve(&load_constant(self.grid()))
    }
}

/// Full-order solver used as the truth in error measurements.
pub trait TruthSolver: Sync {
    fn grid(&self) -> Grid;
    fn dims(&self) -> usize;
    fn solve(&self, y: &[f64]) -> Result<FeFunction>;
}

impl TruthSolver for AffineDiffusion {
    fn grid(&self) -> Grid {
        AffineDiffusion::grid(self)
    }

    fn dims(&self) -> usize {
        self.j_max()
    }

    fn solve(&self, y: &[f64]) -> Result<FeFunction> {
        AffineDiffusion::solve(self, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSequence {
    rho: Vec<f64>,
    q: f64,
}

impl WeightSequence {
    pub fn new(rho: Vec<f64>, q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 2.0) {
            return Err(Error::InvalidArgument(format!(
                "summability exponent q = {q} not in (0, 2)"
            )));
        }
        if rho.is_empty() {
            return Err(Error::InvalidArgument("empty weight sequence".into()));
        }
        if rho.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidArgument("weights must be positive".into()));
        }
        if rho.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("weights must be nondecreasing".into()));
        }
        if !(rho[0] > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "kappa = rho_1 = {} must exceed 1",
                rho[0]
            )));
        }
        Ok(Self { rho, q })
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn kappa(&self) -> f64 {
        self.rho[0]
    }

    /// `||(rho_j^{-1})||_{l_q}`.
    pub fn lq_norm(&self) -> f64 {
        lq_norm_inverse(&self.rho, self.q)
    }

    pub fn with_q(&self, q: f64) -> Result<Self> {
        Self::new(self.rho.clone(), q)
    }
}

pub(crate) fn lq_norm_inverse(rho: &[f64], q: f64) -> f64 {
    rho.iter().map(|r| r.powf(-q)).sum::<f64>().powf(1.0 / q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestFamily {
    pub s: f64,
    pub a_min: f64,
    pub seed: u32,
    /// Parameter `j` (0-based) lives on subdomain `subdomain[j]`, numbered
    /// row-major over the 8 x 8 checkerboard.
    pub subdomain: Vec<usize>,
    /// Amplitudes `c_j`.
    pub c: Vec<f64>,
}

impl TestFamily {
    /// `c_j = (1 - a_min) j^{-s}`.
    pub fn amplitudes(s: f64, a_min: f64, count: usize) -> Vec<f64> {
        (1..=count)
            .map(|j| (1.0 - a_min) * (j as f64).powf(-s))
            .collect()
    }

    /// `rho_j = (1 - a_min/2) / c_j`, so `rho_j c_j = 1 - a_min/2`.
    pub fn default_weights(&self, q: f64) -> Result<WeightSequence> {
        let num = 1.0 - self.a_min / 2.0;
        WeightSequence::new(self.c.iter().map(|c| num / c).collect(), q)
    }

    /// Closed form of `|| sum rho~_j |psi~_j| / a(center) ||_inf` for the
    /// checkerboard family, where `rho~_j lambda_j = rho_j + center_j`.
    pub fn delta_tilde(&self, center: &[f64], w: &WeightSequence) -> f64 {
        self.c
            .iter()
            .zip(w.rho())
            .enumerate()
            .map(|(j, (&c, &r))| {
                let y = center.get(j).copied().unwrap_or(0.0);
                ((r * c + y * c) / (1.0 + y * c)).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub fn default_weights(family: &TestFamily, q: f64) -> Result<WeightSequence> {
    family.default_weights(q)
}

/// Elements of subdomain `d` (row-major over the 8 x 8 checkerboard).
fn subdomain_elements(grid: Grid, d: usize) -> impl Iterator<Item = usize> {
    let b = grid.n() / 8;
    let (cx, cy) = (d % 8, d / 8);
    let n = grid.n();
    (cy * b..(cy + 1) * b).flat_map(move |ey| (cx * b..(cx + 1) * b).map(move |ex| ey * n + ex))
}

fn subdomain_assignment(seed: u32) -> Vec<usize> {
    if seed == 0 {
        (0..SUBDOMAINS).collect()
    } else {
        Sampler::new(seed).permutation(SUBDOMAINS)
    }
}

/// Test family with explicit amplitudes `c_j`, one per subdomain at most.
pub fn family_from_amplitudes(
    grid: Grid,
    s: f64,
    a_min: f64,
    seed: u32,
    c: Vec<f64>,
) -> Result<(AffineDiffusion, TestFamily)> {
    if c.is_empty() || c.len() > SUBDOMAINS {
        return Err(Error::InvalidArgument(format!(
            "need between 1 and {SUBDOMAINS} amplitudes, got {}",
            c.len()
        )));
    }
    if let Some(v) = c.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::InvalidArgument(format!("amplitude {v} not in (0, 1)")));
    }
    let assignment = subdomain_assignment(seed);
    let subdomain: Vec<usize> = assignment[..c.len()].to_vec();
    let abar = ScalarField::constant(grid, 1.0);
    let psis = subdomain
        .iter()
        .zip(&c)
        .map(|(&d, &cj)| {
            let mut v = vec![0.0; grid.elements()];
            for e in subdomain_elements(grid, d) {
                v[e] = cj;
            }
            ScalarField::from_values(grid, v)
        })
        .collect::<Result<Vec<_>>>()?;
    let model = AffineDiffusion::new(abar, psis)?;
    Ok((
        model,
        TestFamily {
            s,
            a_min,
            seed,
            subdomain,
            c,
        },
    ))
}

/// `abar = 1`, `psi_j = c_j chi_{D_j}` with `c_j = (1 - a_min) j^{-s}`.
pub fn build_test_family_with(
    grid: Grid,
    s: f64,
    a_min: f64,
    seed: u32,
    j_max: usize,
) -> Result<(AffineDiffusion, TestFamily)> {
    if !(s > 0.5) || !s.is_finite() {
        return Err(Error::InvalidArgument(format!("decay exponent s = {s} must exceed 1/2")));
    }
    if !(a_min > 0.0 && a_min < 1.0) {
        return Err(Error::InvalidArgument(format!("a_min = {a_min} not in (0, 1)")));
    }
    family_from_amplitudes(grid, s, a_min, seed, TestFamily::amplitudes(s, a_min, j_max))
}

pub fn build_test_family(
    grid: Grid,
    s: f64,
    a_min: f64,
    seed: u32,
) -> Result<(AffineDiffusion, TestFamily)> {
    build_test_family_with(grid, s, a_min, seed, SUBDOMAINS)
}

/// Plain-text model description; enough to rebuild the model and its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescription {
    pub grid_n: usize,
    pub s: f64,
    pub a_min: f64,
    pub seed: u32,
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
}

impl ModelDescription {
    pub fn build(&self) -> Result<(AffineDiffusion, TestFamily, WeightSequence)> {
        let grid = Grid::new(self.grid_n)?;
        let (model, family) = match &self.c {
            Some(c) => family_from_amplitudes(grid, self.s, self.a_min, self.seed, c.clone())?,
            None => build_test_family_with(
                grid,
                self.s,
                self.a_min,
                self.seed,
                self.j_max.unwrap_or(SUBDOMAINS),
            )?,
        };
        let w = family.default_weights(self.q)?;
        Ok((model, family, w))
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("model description serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Sampler;

    fn grid8() -> Grid {
        Grid::new(8).unwrap()
    }

    #[test]
    fn amplitudes_of_eq_family() {
        let (_, fam) = build_test_family(grid8(), 2.0, 0.1, 0).unwrap();
        assert!((fam.c[0] - 0.9).abs() < 1e-15);
        assert!((fam.c[1] - 0.225).abs() < 1e-15);
    }

    #[test]
    fn invalid_family_parameters() {
        assert!(build_test_family(grid8(), 0.5, 0.1, 0).is_err());
        assert!(build_test_family(grid8(), 2.0, 1.0, 0).is_err());
        assert!(build_test_family(grid8(), 2.0, 0.0, 0).is_err());
    }

    #[test]
    fn minimum_at_all_minus_one() {
        let (model, fam) = build_test_family(grid8(), 2.0, 0.1, 0).unwrap();
        let a = model.evaluate_coefficient(&vec![-1.0; 64]).unwrap();
        assert!((a.min() - 0.1).abs() < 1e-15);
        // On D_j the value is 1 - c_j; with seed 0 the grid-8 element e is D_e.
        for j in 0..64 {
            assert!((a.values()[fam.subdomain[j]] - (1.0 - fam.c[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn seed_permutes_assignment_only() {
        let (_, f0) = build_test_family(grid8(), 3.0, 0.05, 0).unwrap();
        let (m1, f1) = build_test_family(grid8(), 3.0, 0.05, 9).unwrap();
        assert_ne!(f0.subdomain, f1.subdomain);
        assert_eq!(f0.c, f1.c);
        let mut sorted = f1.subdomain.clone();
        sorted.sort();
        assert_eq!(sorted, (0..64).collect::<Vec<_>>());
        assert!((m1.check_uea().0 - 0.05).abs() < 1e-15);
    }

    #[test]
    fn default_weights_properties() {
        let (_, fam) = build_test_family(grid8(), 2.0, 0.1, 0).unwrap();
        let w = fam.default_weights(1.0).unwrap();
        assert!((w.kappa() - 0.95 / 0.9).abs() < 1e-14);
        for (r, c) in w.rho().iter().zip(&fam.c) {
            assert!((r * c - 0.95).abs() < 1e-13);
        }
        for a_min in [0.001, 0.5, 0.999] {
            let (_, f) = build_test_family(grid8(), 2.0, a_min, 0).unwrap();
            assert!(f.default_weights(1.0).unwrap().kappa() > 1.0);
        }
    }

    #[test]
    fn evaluate_coefficient_basics() {
        let (model, _) = build_test_family(grid8(), 2.0, 0.1, 0).unwrap();
        let zero = model.evaluate_coefficient(&vec![0.0; 64]).unwrap();
        assert_eq!(&zero, model.abar());
        let mut s = Sampler::new(1);
        let y1 = s.parameter(64);
        let y2 = s.parameter(64);
        let mid: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| 0.5 * (a + b)).collect();
        let a1 = model.evaluate_coefficient(&y1).unwrap();
        let a2 = model.evaluate_coefficient(&y2).unwrap();
        let am = model.evaluate_coefficient(&mid).unwrap();
        for i in 0..64 {
            let avg = 0.5 * (a1.values()[i] + a2.values()[i]);
            assert!((am.values()[i] - avg).abs() < 1e-14);
        }
        let mut bad = vec![0.0; 64];
        bad[3] = 1.5;
        assert!(matches!(model.evaluate_coefficient(&bad), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn uea_and_delta() {
        let (model, fam) = build_test_family(grid8(), 2.0, 0.1, 0).unwrap();
        let (lo, hi) = model.check_uea();
        assert!((lo - 0.1).abs() < 1e-15);
        assert!((hi - 1.9).abs() < 1e-15);
        let w = fam.default_weights(1.0).unwrap();
        assert!((model.check_delta(&w) - 0.95).abs() < 1e-14);
        let half: Vec<f64> = w.rho().iter().map(|r| r / 2.0).collect();
        assert!((model.weighted_delta(&half) - 0.475).abs() < 1e-14);

        let empty = AffineDiffusion::new(ScalarField::constant(grid8(), 2.0), vec![]).unwrap();
        assert_eq!(empty.check_uea(), (2.0, 2.0));
        assert_eq!(empty.weighted_delta(&[]), 0.0);

        let t = 0.5;
        let scaled = AffineDiffusion::new(
            model.abar().clone(),
            model.psis().iter().map(|p| p.scaled(t)).collect(),
        )
        .unwrap();
        assert!(((1.0 - scaled.check_uea().0) - t * (1.0 - lo)).abs() < 1e-14);
    }

    #[test]
    fn recentering() {
        let (model, _) = build_test_family(grid8(), 2.0, 0.1, 0).unwrap();
        let same = model.recenter_rescale(&Cell::whole()).unwrap();
        assert_eq!(same.abar(), model.abar());
        assert_eq!(same.psis(), model.psis());

        let cell = Cell::new(vec![-0.5, 0.25], vec![0.5, 0.25]).unwrap();
        let local = model.recenter_rescale(&cell).unwrap();
        let mut yt = vec![0.3; 64];
        yt[0] = 1.0;
        yt[1] = -1.0;
        let mut y = yt.clone();
        y[0] = -0.5 + 0.5 * yt[0];
        y[1] = 0.25 + 0.25 * yt[1];
        let a = model.evaluate_coefficient(&y).unwrap();
        let b = local.evaluate_coefficient(&yt).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, z)| (x - z).abs() < 1e-14));

        let halved = model
            .recenter_rescale(&Cell::new(vec![0.0, 0.0], vec![0.5, 0.5]).unwrap())
            .unwrap();
        for j in 0..2 {
            assert_eq!(halved.psis()[j], model.psis()[j].scaled(0.5));
        }
        assert!(model
            .recenter_rescale(&Cell::new(vec![0.9], vec![0.5]).unwrap())
            .is_err());
    }

    #[test]
    fn description_round_trip() {
        let d = ModelDescription {
            grid_n: 16,
            s: 4.0,
            a_min: 0.1,
            seed: 0,
            q: 1.0,
            j_max: None,
            c: None,
        };
        assert_eq!(ModelDescription::from_text(&d.to_text()).unwrap(), d);
        let (m, _, w) = d.build().unwrap();
        assert_eq!(m.j_max(), 64);
        assert!((m.check_delta(&w) - 0.95).abs() < 1e-13);

        let explicit = ModelDescription {
            c: Some(vec![0.5, 0.25]),
            ..d
        };
        let (m2, f2, w2) = ModelDescription::from_text(&explicit.to_text())
            .unwrap()
            .build()
            .unwrap();
        assert_eq!(m2.j_max(), 2);
        assert_eq!(f2.c, vec![0.5, 0.25]);
        assert!((w2.rho()[0] - 0.95 / 0.5).abs() < 1e-14);
    }
}

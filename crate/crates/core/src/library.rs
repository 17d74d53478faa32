//! Piecewise Taylor libraries: one local model per partition cell.

use std::fmt::Write as _;
use std::path::Path;

use crate::affine::{AffineDiffusion, WeightSequence};
use crate::error::{Error, Result};
use crate::fem::{FeFunction, Grid};
use crate::index::{apriori_select, LowerSet};
use crate::parallel;
use crate::partition::{cell_weights, locate_cell, Partition};
use crate::rng::Sampler;
use crate::taylor::{adaptive_ln_on_cell, taylor_coefficients_on_cell, TaylorModel};
use crate::truth::{errors_against, prefix_errors, TruthSet, TruthSource};

const COEFF_MAGIC: &[u8; 8] = b"NLRMCOF1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Apriori,
    Adaptive,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Apriori => "apriori",
            Method::Adaptive => "adaptive",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "apriori" => Ok(Method::Apriori),
            "adaptive" => Ok(Method::Adaptive),
            _ => Err(Error::Parse(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Library {
    partition: Partition,
    models: Vec<TaylorModel>,
    m: usize,
    method: Method,
}

/// Local model with `m + 1` terms on cell `k` of `p`.
fn cell_model(model: &AffineDiffusion, p: &Partition, k: usize, terms: usize, method: Method, w: &WeightSequence) -> Result<TaylorModel> {
    let cell = p.cell(k)?;
    let dims = model.j_max();
    match method {
        Method::Adaptive => adaptive_ln_on_cell(model, &cell, terms, dims),
        Method::Apriori => {
            let cw = cell_weights(p, k, w, model)?;
            let lam = select_by_weights(&cw.rho_tilde, terms, dims)?;
            taylor_coefficients_on_cell(model, &cell, &lam)
        }
    }
}

/// A-priori selection for per-cell weights, which need not be monotone:
/// permute to nondecreasing order, select, then map the directions back.
fn select_by_weights(rho: &[f64], terms: usize, dims: usize) -> Result<LowerSet> {
    let mut order: Vec<usize> = (0..rho.len()).collect();
    order.sort_by(|&a, &b| rho[a].total_cmp(&rho[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&j| rho[j]).collect();
    let lw = WeightSequence::new(sorted, 1.0)?;
    let lam = apriori_select(&lw, terms, dims)?;
    let mapped = lam
        .iter()
        .map(|nu| crate::index::MultiIndex::from_pairs(nu.support().map(|(j, e)| (order[j], e))))
        .collect::<Result<Vec<_>>>()?;
    LowerSet::from_indices(mapped)
}

/// One local model of `m + 1` terms per cell.
pub fn build_library(model: &AffineDiffusion, p: &Partition, m: usize, method: Method, w: &WeightSequence) -> Result<Library> {
    let models = parallel::try_map_indices(p.cell_count(), |k| {
        cell_model(model, p, k, m + 1, method, w).map_err(|e| e.in_cell(k))
    })?;
    Ok(Library {
        partition: p.clone(),
        models,
        m,
        method,
    })
}

impl Library {
    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn models(&self) -> &[TaylorModel] {
        &self.models
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn grid(&self) -> Grid {
        self.models[0].grid()
    }

    pub fn cell_count(&self) -> usize {
        self.models.len()
    }

    /// Total number of stored coefficient functions.
    pub fn stored_coefficients(&self) -> usize {
        self.models.iter().map(TaylorModel::len).sum()
    }

    pub fn evaluate(&self, y: &[f64]) -> Result<FeFunction> {
        let k = locate_cell(&self.partition, y)?;
        self.models[k].evaluate(y)
    }

    /// Writes `partition.txt`, `manifest.txt` and one `cell_<k>.bin` per cell.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.partition.save(&dir.join("partition.txt"))?;
        let mut manifest = String::from("# nlrm library v1\npartition partition.txt\n");
        let _ = writeln!(manifest, "method {}", self.method.name());
        let _ = writeln!(manifest, "m {}", self.m);
        let _ = writeln!(manifest, "dims {}", self.models[0].dims());
        let _ = writeln!(manifest, "cells {}", self.models.len());
        for (k, tm) in self.models.iter().enumerate() {
            let file = format!("cell_{k}.bin");
            let _ = writeln!(manifest, "cell {k} terms {} file {file}", tm.len());
            for nu in tm.lam().iter() {
                let _ = writeln!(manifest, "  {nu}");
            }
            write_coefficients(&dir.join(&file), tm.coeffs())?;
        }
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let partition = Partition::load(&dir.join("partition.txt"))?;
        let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let bad = |l: &str| Error::Parse(format!("library manifest: unexpected line `{l}`"));
        let mut method = None;
        let mut m = None;
        let mut dims = None;
        let mut cells: Vec<(String, Vec<String>)> = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
            if let Some(rest) = line.strip_prefix("  ") {
                cells.last_mut().ok_or_else(|| bad(line))?.1.push(rest.trim().to_string());
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            match tok.as_slice() {
                ["partition", _] | ["cells", _] => {}
                ["method", v] => method = Some(v.parse::<Method>()?),
                ["m", v] => m = Some(v.parse::<usize>().map_err(|_| bad(line))?),
                ["dims", v] => dims = Some(v.parse::<usize>().map_err(|_| bad(line))?),
                ["cell", _, "terms", _, "file", f] => cells.push((f.to_string(), Vec::new())),
                _ => return Err(bad(line)),
            }
        }
        let (method, m, dims) = match (method, m, dims) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::Parse("library manifest is missing fields".into())),
        };
        if cells.len() != partition.cell_count() {
            return Err(Error::Parse(format!(
                "manifest lists {} cells, partition has {}",
                cells.len(),
                partition.cell_count()
            )));
        }
        let mut models = Vec::with_capacity(cells.len());
        for (k, (file, indices)) in cells.into_iter().enumerate() {
            let lam = LowerSet::from_text(&indices.join("\n"))?;
            let coeffs = read_coefficients(&dir.join(file))?;
            if coeffs.len() != lam.len() {
                return Err(Error::Parse(format!("cell {k}: {} coefficients for {} indices", coeffs.len(), lam.len())));
            }
            models.push(TaylorModel::from_parts(lam, coeffs, partition.cell(k)?, dims)?);
        }
        Ok(Library {
            partition,
            models,
            m,
            method,
        })
    }
}

/// Header `magic, n, count` (u64 LE), then `count` arrays of nodal values.
fn write_coefficients(path: &Path, coeffs: &[FeFunction]) -> Result<()> {
    let grid = coeffs[0].grid();
    let mut out = Vec::with_capacity(24 + coeffs.len() * grid.dofs() * 8);
    out.extend_from_slice(COEFF_MAGIC);
    out.extend_from_slice(&(grid.n() as u64).to_le_bytes());
    out.extend_from_slice(&(coeffs.len() as u64).to_le_bytes());
    for c in coeffs {
        for v in c.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_coefficients(path: &Path) -> Result<Vec<FeFunction>> {
    let bytes = std::fs::read(path)?;
    let corrupt = || Error::Parse(format!("coefficient file {} is corrupt", path.display()));
    if bytes.len() < 24 || &bytes[..8] != COEFF_MAGIC {
        return Err(corrupt());
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let count = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let grid = Grid::new(n)?;
    if bytes.len() != 24 + count * grid.dofs() * 8 {
        return Err(corrupt());
    }
    bytes[24..]
        .chunks_exact(grid.dofs() * 8)
        .map(|chunk| {
            let v = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            FeFunction::from_values(grid, v)
        })
        .collect()
}

pub fn evaluate_library(lib: &Library, y: &[f64]) -> Result<FeFunction> {
    lib.evaluate(y)
}

/// Stratified truth sets: `count` uniform samples inside each cell, drawn
/// cell by cell from one sampler stream.
pub fn stratified_truth(source: &dyn TruthSource, p: &Partition, sampler: &mut Sampler, count: usize) -> Result<Vec<TruthSet>> {
    let cells = p.cells();
    let dims = source.param_dims();
    let params: Vec<Vec<Vec<f64>>> = cells
        .iter()
        .map(|c| (0..count).map(|_| c.sample(sampler, dims)).collect())
        .collect();
    params.into_iter().map(|ps| source.truth_set(ps)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryError {
    pub global: f64,
    pub per_cell: Vec<f64>,
}

/// Dispatch errors on per-cell stratified truth sets.
pub fn library_error_on(lib: &Library, truth: &[TruthSet]) -> Result<LibraryError> {
    if truth.len() != lib.cell_count() {
        return Err(Error::InvalidArgument(format!("{} truth sets for {} cells", truth.len(), lib.cell_count())));
    }
    let per_cell = truth
        .iter()
        .map(|t| Ok(errors_against(t, |y| lib.evaluate(y))?.into_iter().fold(0.0, f64::max)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(LibraryError {
        global: per_cell.iter().copied().fold(0.0, f64::max),
        per_cell,
    })
}

pub fn library_sup_error(lib: &Library, solver: &dyn TruthSource, sampler: &mut Sampler, count: usize) -> Result<LibraryError> {
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one sample per cell".into()));
    }
    let truth = stratified_truth(solver, &lib.partition, sampler, count)?;
    library_error_on(lib, &truth)
}

/// Per-cell error of every prefix of the local models, `[cell][k]` for `k + 1` terms.
pub fn cell_prefix_errors(lib: &Library, truth: &[TruthSet]) -> Result<Vec<Vec<f64>>> {
    lib.models
        .iter()
        .zip(truth)
        .map(|(tm, t)| prefix_errors(t, tm))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::build_test_family_with;
    use crate::partition::{graded_partition, symmetric_partition_from_sigma, Construction};
    use crate::taylor::adaptive_ln;

    fn setup(j: usize) -> (AffineDiffusion, WeightSequence) {
        let (model, fam) = build_test_family_with(Grid::new(8).unwrap(), 4.0, 0.1, 0, j).unwrap();
        let w = fam.default_weights(1.0).unwrap();
        (model, w)
    }

    #[test]
    fn single_cell_adaptive_is_global() {
        let (model, w) = setup(6);
        let lib = build_library(&model, &Partition::single(6), 7, Method::Adaptive, &w).unwrap();
        let global = adaptive_ln(&model, 8, 6).unwrap();
        assert_eq!(lib.models()[0].lam(), global.lam());
        let y = [0.2, -0.4, 0.9, 0.1, 0.0, -1.0];
        assert!(lib.evaluate(&y).unwrap().sub(&global.evaluate(&y).unwrap()).norm_v() < 1e-15);
    }

    #[test]
    fn constants_per_cell_for_m_zero() {
        let (model, w) = setup(4);
        let p = graded_partition(&w, 0.2, 4).unwrap();
        let lib = build_library(&model, &p, 0, Method::Apriori, &w).unwrap();
        assert_eq!(lib.stored_coefficients(), p.cell_count());
        for (k, cell) in p.cells().iter().enumerate() {
            let center: Vec<f64> = (0..4).map(|j| cell.center(j)).collect();
            let u = model.solve(&center).unwrap();
            assert!(lib.evaluate(&center).unwrap().sub(&u).norm_v() < 1e-13, "cell {k}");
        }
    }

    #[test]
    fn storage_accounting_and_lowerness() {
        let (model, w) = setup(64);
        let p = symmetric_partition_from_sigma(&w, 0.2, 2, Construction::Single).unwrap();
        let lib = build_library(&model, &p, 8, Method::Apriori, &w).unwrap();
        assert_eq!(lib.stored_coefficients(), p.cell_count() * 9);
        for tm in lib.models() {
            assert!(crate::index::is_lower(tm.lam().as_slice()));
            assert_eq!(tm.len(), 9);
        }
    }

    #[test]
    fn per_cell_errors_shrink_with_budget() {
        let (model, w) = setup(6);
        let p = graded_partition(&w, 0.3, 6).unwrap();
        let truth = stratified_truth(&model, &p, &mut Sampler::new(5), 4).unwrap();
        let small = build_library(&model, &p, 2, Method::Apriori, &w).unwrap();
        let big = build_library(&model, &p, 6, Method::Apriori, &w).unwrap();
        let es = library_error_on(&small, &truth).unwrap();
        let eb = library_error_on(&big, &truth).unwrap();
        for (a, b) in es.per_cell.iter().zip(&eb.per_cell) {
            assert!(b <= a);
        }
        assert_eq!(eb.global, eb.per_cell.iter().copied().fold(0.0, f64::max));
        let curves = cell_prefix_errors(&big, &truth).unwrap();
        for (c, e) in curves.iter().zip(&eb.per_cell) {
            assert!((c[6] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dispatch_is_no_better_than_best_of_library() {
        let (model, w) = setup(4);
        let p = graded_partition(&w, 0.2, 4).unwrap();
        let lib = build_library(&model, &p, 3, Method::Adaptive, &w).unwrap();
        let mut s = Sampler::new(8);
        for _ in 0..5 {
            let y = s.parameter(4);
            let u = model.solve(&y).unwrap();
            let dispatch = lib.evaluate(&y).unwrap().sub(&u).norm_v();
            // Every local model is a polynomial on its own cell; evaluate the
            // owning one and the others through their unrestricted formula.
            let best = lib
                .models()
                .iter()
                .map(|tm| {
                    let t = tm.cell().map_to_reference(&y);
                    let mut v = FeFunction::zeros(tm.grid());
                    for (nu, c) in tm.lam().iter().zip(tm.coeffs()) {
                        v.axpy(crate::index::monomial(&t, nu), c);
                    }
                    v.sub(&u).norm_v()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(dispatch >= best - 1e-15);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let (model, w) = setup(4);
        let p = graded_partition(&w, 0.2, 4).unwrap();
        let lib = build_library(&model, &p, 3, Method::Adaptive, &w).unwrap();
        let dir = tempfile::tempdir().unwrap();
        lib.save(dir.path()).unwrap();
        let back = Library::load(dir.path()).unwrap();
        assert_eq!(back.cell_count(), lib.cell_count());
        let y = [0.7, -0.1, 0.3, 0.0];
        assert_eq!(back.evaluate(&y).unwrap().values(), lib.evaluate(&y).unwrap().values());
        let bytes = std::fs::read(dir.path().join("cell_0.bin")).unwrap();
        assert_eq!(&bytes[..8], COEFF_MAGIC);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 8);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 4);
        assert!(lib.evaluate(&[1.5, 0.0, 0.0, 0.0]).is_err());
    }
}

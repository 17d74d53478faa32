//! Choosing the graded-partition parameter `eta` by measurement.

use log::info;

use crate::affine::{AffineDiffusion, WeightSequence};
use crate::error::{Error, Result};
use crate::library::{build_library, cell_prefix_errors, stratified_truth, Method};
use crate::partition::{graded_partition, Partition};
use crate::rng::Sampler;
use crate::truth::{terms_needed, TruthSource};

/// Accuracy target, term budget and sampling for partition studies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyOptions {
    pub eps: f64,
    /// Largest local term count tried (constant term included).
    pub max_terms: usize,
    pub samples_per_cell: usize,
    /// Every study draws its stratified samples from a fresh stream with this seed.
    pub seed: u32,
}

/// Per-cell outcome of adaptive local models on one partition.
#[derive(Debug, Clone)]
pub struct PartitionStudy {
    pub eta: f64,
    pub partition: Partition,
    /// Smallest term count meeting the target on each cell, if reached.
    pub terms_needed: Vec<Option<usize>>,
    /// Sup error of each cell's model with the full term budget.
    pub final_errors: Vec<f64>,
    /// `[cell][k]`: error with `k + 1` terms.
    pub curves: Vec<Vec<f64>>,
}

impl PartitionStudy {
    /// Term count meeting the target on every cell.
    pub fn max_terms(&self) -> Option<usize> {
        self.terms_needed.iter().try_fold(0, |acc, t| t.map(|t| acc.max(t)))
    }

    pub fn cell_count(&self) -> usize {
        self.partition.cell_count()
    }

    /// Worst cell error with `terms` terms (clamped to the budget).
    pub fn worst_error_at(&self, terms: usize) -> f64 {
        self.curves
            .iter()
            .map(|c| c[terms.clamp(1, c.len()) - 1])
            .fold(0.0, f64::max)
    }

    pub fn worst_final_error(&self) -> f64 {
        self.final_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Builds `max_terms`-term adaptive models on every cell and measures them
/// on stratified samples drawn from `truth`.
pub fn study_partition(
    model: &AffineDiffusion,
    w: &WeightSequence,
    eta: f64,
    partition: &Partition,
    opts: &StudyOptions,
    truth: &dyn TruthSource,
) -> Result<PartitionStudy> {
    if opts.max_terms < 1 || opts.samples_per_cell < 1 {
        return Err(Error::InvalidArgument("need at least one term and one sample per cell".into()));
    }
    let lib = build_library(model, partition, opts.max_terms - 1, Method::Adaptive, w)?;
    let sets = stratified_truth(truth, partition, &mut Sampler::new(opts.seed), opts.samples_per_cell)?;
    let curves = cell_prefix_errors(&lib, &sets)?;
    Ok(PartitionStudy {
        eta,
        partition: partition.clone(),
        terms_needed: curves.iter().map(|c| terms_needed(c, opts.eps)).collect(),
        final_errors: curves.iter().map(|c| *c.last().expect("nonempty")).collect(),
        curves,
    })
}

/// Default sweep `2, 1, 1/2, 1/4, ...` with `count` entries.
pub fn default_eta_grid(count: usize) -> Vec<f64> {
    (0..count).map(|k| 2.0 * 0.5f64.powi(k as i32)).collect()
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub study: PartitionStudy,
    pub success: bool,
}

/// Largest `eta` in the grid whose partition admits `max_terms`-term
/// adaptive local models meeting `eps` on every cell. If none does, returns
/// the sweep entry with the smallest worst-cell error and `success = false`.
pub fn tune_eta(
    model: &AffineDiffusion,
    w: &WeightSequence,
    eta_grid: &[f64],
    opts: &StudyOptions,
    truth: &dyn TruthSource,
) -> Result<TuneResult> {
    if eta_grid.is_empty() {
        return Err(Error::InvalidArgument("empty eta grid".into()));
    }
    let mut grid = eta_grid.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    let mut best: Option<(f64, PartitionStudy)> = None;
    for eta in grid {
        let p = graded_partition(w, eta, model.j_max())?;
        let study = study_partition(model, w, eta, &p, opts, truth)?;
        let worst = study.worst_final_error();
        info!("eta {eta}: {} cells, worst cell error {worst:e}", p.cell_count());
        if worst <= opts.eps {
            return Ok(TuneResult { study, success: true });
        }
        if best.as_ref().is_none_or(|(b, _)| worst < *b) {
            best = Some((worst, study));
        }
    }
    let (_, study) = best.expect("grid is nonempty");
    Ok(TuneResult { study, success: false })
}

/// Values of `eta` on a geometric scan (ratio `ratio`, from the single-cell
/// threshold downwards) whose graded partition has exactly `target` cells,
/// largest first. Scan points where the construction is undefined
/// (`sigma >= 1`) are skipped.
pub fn etas_with_cell_count(w: &WeightSequence, target: usize, j_max: usize, ratio: f64, floor: f64) -> Result<Vec<f64>> {
    if !(ratio > 0.0 && ratio < 1.0) || !(floor > 0.0) {
        return Err(Error::InvalidArgument(format!("bad scan ratio {ratio} or floor {floor}")));
    }
    let total: f64 = w.rho()[..j_max.min(w.len())].iter().map(|r| 1.0 / r).sum();
    let mut eta = 2.0 * total * 1.0001;
    let mut out = Vec::new();
    while eta >= floor {
        let n = match graded_partition(w, eta, j_max) {
            Ok(p) => p.cell_count(),
            Err(Error::InvalidArgument(_)) => {
                eta *= ratio;
                continue;
            }
            Err(e) => return Err(e),
        };
        if n == target {
            out.push(eta);
        } else if n > target && (!out.is_empty() || n == usize::MAX) {
            break;
        }
        eta *= ratio;
    }
    Ok(out)
}

/// Up to `k` entries spread evenly over `values` (both ends included).
pub fn spread(values: &[f64], k: usize) -> Vec<f64> {
    if values.len() <= k {
        return values.to_vec();
    }
    if k < 2 {
        return values.iter().copied().take(k).collect();
    }
    (0..k)
        .map(|i| values[i * (values.len() - 1) / (k - 1)])
        .collect()
}

/// One row of a cells-versus-terms table.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub eta: f64,
    pub cells: usize,
    pub j_count: usize,
    pub sigma: Option<f64>,
    /// Term count meeting the target on every cell.
    pub terms: Option<usize>,
    /// Worst cell error at `terms` (or with the full budget if unmet).
    pub max_cell_error: f64,
}

impl TableRow {
    fn from_study(study: &PartitionStudy) -> Self {
        let terms = study.max_terms();
        TableRow {
            eta: study.eta,
            cells: study.cell_count(),
            j_count: study.partition.j_count,
            sigma: study.partition.sigma,
            terms,
            max_cell_error: terms.map_or_else(|| study.worst_final_error(), |m| study.worst_error_at(m)),
        }
    }
}

/// Row for an explicit `eta`.
pub fn table_row_for_eta(
    model: &AffineDiffusion,
    w: &WeightSequence,
    eta: f64,
    opts: &StudyOptions,
    truth: &dyn TruthSource,
) -> Result<TableRow> {
    let p = graded_partition(w, eta, model.j_max())?;
    Ok(TableRow::from_study(&study_partition(model, w, eta, &p, opts, truth)?))
}

/// Row for a target cell count. Scans `eta` for graded partitions with
/// exactly `cells` cells, keeping those that subdivide only the first
/// direction when there are any, studies up to `candidates` of them and
/// returns the one needing the fewest terms (ties go to the larger `eta`).
/// `None` if no scanned `eta` gives that many cells.
pub fn table_row_for_cells(
    model: &AffineDiffusion,
    w: &WeightSequence,
    cells: usize,
    candidates: usize,
    opts: &StudyOptions,
    truth: &dyn TruthSource,
) -> Result<Option<TableRow>> {
    let j_max = model.j_max();
    let all = etas_with_cell_count(w, cells, j_max, 0.97, 1e-4)?;
    let single: Vec<f64> = all
        .iter()
        .copied()
        .filter(|&e| graded_partition(w, e, j_max).is_ok_and(|p| p.j_count == 1))
        .collect();
    let pool = if single.is_empty() { all } else { single };
    let mut best: Option<TableRow> = None;
    for eta in spread(&pool, candidates) {
        let row = table_row_for_eta(model, w, eta, opts, truth)?;
        info!("cells {cells}, eta {eta}: terms {:?}", row.terms);
        let better = match (&best, row.terms) {
            (None, _) => true,
            (Some(b), Some(t)) => b.terms.is_none_or(|bt| t < bt),
            (Some(b), None) => b.terms.is_none() && row.max_cell_error < b.max_cell_error,
        };
        if better {
            best = Some(row);
        }
    }
    Ok(best)
}

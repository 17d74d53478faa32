//! The experiments behind each subcommand. Each returns its table; writing
//! it out is left to the caller.

use log::info;

use nlrm::affine::{AffineDiffusion, ModelDescription, WeightSequence};
use nlrm::bounds::{b_r, c_sigma, remark22_size, theorem21_size};
use nlrm::estimation::{build_measurements_with, measure, pbdw_recover, per_cell_recovery};
use nlrm::fem::Grid;
use nlrm::greedy::{galerkin_error_curve, weak_greedy_with, GreedyOptions};
use nlrm::library::{build_library, library_error_on, stratified_truth, Method};
use nlrm::partition::{graded_partition, locate_cell, Partition};
use nlrm::rng::Sampler;
use nlrm::taylor::{adaptive_ln, apriori_model};
use nlrm::truth::{prefix_errors, sup_error_against, TruthSource};
use nlrm::tuning::{etas_with_cell_count, table_row_for_cells, table_row_for_eta, StudyOptions, TableRow};

use crate::cache::Truth;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{num, opt_int, opt_num, Table};

pub const LINEAR_COMPARE_HEADER: &[&str] = &["method", "n", "sup_error", "max_training_error"];
pub const PARTITION_TABLE_HEADER: &[&str] = &["s", "a_min", "N", "m_achieved", "max_per_cell_error", "J", "sigma", "eta"];
pub const STATE_EST_HEADER: &[&str] = &["cell_index", "n_or_m", "mu", "eps_est", "bound", "true_error"];
pub const BOUNDS_HEADER: &[&str] = &["quantity", "r", "width_constant", "n", "m", "eps", "sigma", "value", "ln_value"];

/// Cell counts studied when neither `cells` nor `eta` is configured.
pub fn default_cells(command: &str) -> &'static [usize] {
    match command {
        "partition-table" => &[1, 8],
        "state-est" => &[8],
        _ => &[],
    }
}

struct Setup {
    model: AffineDiffusion,
    w: WeightSequence,
    truth: Truth,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let description = ModelDescription {
        grid_n: cfg.grid,
        s: cfg.s,
        a_min: cfg.a_min,
        seed: cfg.assignment_seed(),
        q: cfg.q,
        j_max: None,
        c: None,
    };
    let (model, _, w) = description.build()?;
    let truth_model = model.refine(Grid::new(cfg.truth_grid())?)?;
    let truth = Truth::new(truth_model, &description, cfg.cache_dir.clone());
    Ok(Setup { model, w, truth })
}

pub fn linear_compare(cfg: &ExperimentConfig) -> Result<Table> {
    let Setup { model, w, truth } = setup(cfg)?;
    let dims = model.j_max();
    let mut sampler = Sampler::new(cfg.seed);
    let test = truth.truth_set(sampler.parameters(dims, cfg.samples))?;
    info!("{} test solutions on grid {}", test.len(), test.grid().n());

    let mut t = Table::new(LINEAR_COMPARE_HEADER);
    let apriori = prefix_errors(&test, &apriori_model(&model, &w, cfg.n_max, dims)?)?;
    let adaptive = prefix_errors(&test, &adaptive_ln(&model, cfg.n_max, dims)?)?;
    for (method, curve) in [("apriori", &apriori), ("adaptive", &adaptive)] {
        for (k, e) in curve.iter().enumerate() {
            t.push(vec![method.into(), (k + 1).to_string(), num(*e), String::new()]);
        }
    }

    let opts = GreedyOptions {
        n_max: cfg.greedy_n_max,
        eps_target: cfg.greedy_eps,
        training_count: cfg.training_count,
        seed: cfg.seed,
    };
    let rb = weak_greedy_with(&model, &opts, &mut sampler)?;
    info!("greedy basis of dimension {}", rb.len());
    let greedy = if test.grid() == rb.grid() {
        galerkin_error_curve(&rb, &test)?
    } else {
        (1..=rb.len())
            .map(|k| sup_error_against(&test, |y| rb.project_prefix(y, k)))
            .collect::<nlrm::Result<Vec<f64>>>()?
    };
    for (k, e) in greedy.iter().enumerate() {
        t.push(vec![
            "greedy".into(),
            (k + 1).to_string(),
            num(*e),
            opt_num(rb.training_errors().get(k).copied()),
        ]);
    }
    Ok(t)
}

fn study_options(cfg: &ExperimentConfig) -> StudyOptions {
    StudyOptions {
        eps: cfg.eps,
        max_terms: cfg.max_terms,
        samples_per_cell: cfg.samples_per_cell,
        seed: cfg.seed,
    }
}

/// Each row restarts the seeded stream, so a row does not depend on which
/// other rows were requested.
pub fn partition_table(cfg: &ExperimentConfig) -> Result<Table> {
    let Setup { model, w, truth } = setup(cfg)?;
    let opts = study_options(cfg);
    let mut rows: Vec<(usize, Option<TableRow>)> = Vec::new();
    if let Some(etas) = &cfg.eta {
        for &eta in etas {
            let row = table_row_for_eta(&model, &w, eta, &opts, &truth)?;
            rows.push((row.cells, Some(row)));
        }
    } else {
        let cells = cfg.cells.as_deref().unwrap_or(default_cells("partition-table"));
        for &n in cells {
            rows.push((n, table_row_for_cells(&model, &w, n, cfg.candidates, &opts, &truth)?));
        }
    }
    let mut t = Table::new(PARTITION_TABLE_HEADER);
    for (n, row) in rows {
        let lead = vec![num(cfg.s), num(cfg.a_min), n.to_string()];
        let rest = match row {
            Some(r) => vec![
                opt_int(r.terms),
                num(r.max_cell_error),
                r.j_count.to_string(),
                opt_num(r.sigma),
                num(r.eta),
            ],
            None => {
                info!("no graded partition with {n} cells on the eta scan");
                vec![String::new(); 5]
            }
        };
        t.push([lead, rest].concat());
    }
    Ok(t)
}

fn state_partition(cfg: &ExperimentConfig, w: &WeightSequence, j_max: usize) -> Result<Partition> {
    if let Some(eta) = &cfg.eta {
        if eta.len() != 1 {
            return Err(CliError::field("eta", "state-est takes a single value"));
        }
        return Ok(graded_partition(w, eta[0], j_max)?);
    }
    let cells = cfg.cells.as_deref().unwrap_or(default_cells("state-est"));
    if cells.len() != 1 {
        return Err(CliError::field("cells", "state-est takes a single value"));
    }
    let etas = etas_with_cell_count(w, cells[0], j_max, 0.97, 1e-4)?;
    let eta = *etas
        .last()
        .ok_or_else(|| CliError::field("cells", format!("no graded partition has {} cells", cells[0])))?;
    Ok(graded_partition(w, eta, j_max)?)
}

/// Global rows use the nested adaptive spaces `n = 1..=L` with `eps_est`
/// the sampled sup error of the `n`-term model; per-cell rows use the
/// `m`-dimensional affine local models with their sampled cell errors.
pub fn state_est(cfg: &ExperimentConfig) -> Result<Table> {
    let Setup { model, w, truth } = setup(cfg)?;
    let dims = model.j_max();
    let big_l = cfg.measurements;
    let partition = state_partition(cfg, &w, dims)?;

    let mut sampler = Sampler::new(cfg.seed);
    let ms = build_measurements_with(model.grid(), big_l, cfg.lambda, &mut sampler)?;
    let ystar = vec![cfg.ystar; dims];
    let u_star = model.solve(&ystar)?;
    let data = measure(&ms, &u_star)?;

    let mut t = Table::new(STATE_EST_HEADER);
    let ad = adaptive_ln(&model, big_l, dims)?;
    let test = truth.truth_set(sampler.parameters(dims, cfg.samples))?;
    let eps_n = prefix_errors(&test, &ad)?;
    for n in 1..=big_l {
        let space = &ad.coeffs()[..n];
        let (mu, err) = match pbdw_recover(&ms, space, &data) {
            Ok(r) => (r.mu, r.with_reference(None, Some(&u_star)).true_error),
            Err(nlrm::Error::Degenerate(_)) => (f64::INFINITY, None),
            Err(e) => return Err(e.into()),
        };
        info!("n {n}: mu {mu:e}");
        t.push(vec![
            "global".into(),
            n.to_string(),
            num(mu),
            num(eps_n[n - 1]),
            num(mu * eps_n[n - 1]),
            opt_num(err),
        ]);
    }

    let lib = build_library(&model, &partition, cfg.m, Method::Adaptive, &w)?;
    let st = stratified_truth(&truth, &partition, &mut sampler, cfg.samples_per_cell)?;
    let eps_cells = library_error_on(&lib, &st)?.per_cell;
    let cells = per_cell_recovery(&ms, &lib, &data, Some(&eps_cells), Some(&u_star))?;
    // Only the cell holding y* carries the guarantee true_error <= bound.
    t.note("ystar_cell", locate_cell(&partition, &ystar)?.to_string());
    for (k, r) in cells.iter().enumerate() {
        t.push(vec![
            k.to_string(),
            cfg.m.to_string(),
            num(r.mu),
            opt_num(r.eps_est),
            opt_num(r.bound),
            opt_num(r.true_error),
        ]);
    }
    Ok(t)
}

pub fn bounds(cfg: &ExperimentConfig) -> Result<Table> {
    let mut t = Table::new(BOUNDS_HEADER);
    let big_m = num(cfg.width_constant);
    let m_top = (cfg.m as u64).min(cfg.bound_n);
    for &r in &cfg.r {
        let b = b_r(r);
        t.push(vec![
            "b_r".into(),
            num(r),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            num(b),
            num(b.ln()),
        ]);
        for m in 0..=m_top {
            let bound = theorem21_size(r, cfg.width_constant, cfg.bound_n, m)?;
            let common = vec![num(r), big_m.clone(), cfg.bound_n.to_string(), m.to_string(), String::new(), String::new()];
            t.push(
                [
                    vec!["library_size".to_string()],
                    common.clone(),
                    vec![opt_num(bound.size.value()), num(bound.size.ln)],
                ]
                .concat(),
            );
            t.push(
                [
                    vec!["library_accuracy".to_string()],
                    common,
                    vec![num(bound.accuracy), num(bound.accuracy.ln())],
                ]
                .concat(),
            );
        }
        let size = remark22_size(r, cfg.width_constant, cfg.eps, cfg.m as u64)?;
        t.push(vec![
            "size_for_eps".into(),
            num(r),
            big_m.clone(),
            String::new(),
            cfg.m.to_string(),
            num(cfg.eps),
            String::new(),
            opt_num(size.value()),
            num(size.ln),
        ]);
    }
    for &sigma in &cfg.sigma {
        let c = c_sigma(sigma)?;
        t.push(vec![
            "c_sigma".into(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            num(sigma),
            num(c),
            num(c.ln()),
        ]);
    }
    Ok(t)
}

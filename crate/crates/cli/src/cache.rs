//! Reference solutions, optionally cached on disk.
//!
//! A cached truth set is keyed by the model description, the truth grid and
//! the exact bits of every requested parameter, so a hit is always the same
//! set of solves.

use std::path::PathBuf;

use log::{debug, warn};
use sha2::{Digest, Sha256};

use nlrm::affine::{AffineDiffusion, ModelDescription, TruthSolver};
use nlrm::truth::{TruthSet, TruthSource};

pub struct Truth {
    solver: AffineDiffusion,
    description: String,
    dir: Option<PathBuf>,
}

impl Truth {
    /// `solver` must be the model described by `description`, on the truth grid.
    pub fn new(solver: AffineDiffusion, description: &ModelDescription, dir: Option<PathBuf>) -> Self {
        Self {
            solver,
            description: description.to_text(),
            dir,
        }
    }

    pub fn solver(&self) -> &AffineDiffusion {
        &self.solver
    }

    fn key(&self, params: &[Vec<f64>]) -> String {
        let mut h = Sha256::new();
        h.update(self.description.as_bytes());
        h.update((self.solver.grid().n() as u64).to_le_bytes());
        h.update((params.len() as u64).to_le_bytes());
        for p in params {
            h.update((p.len() as u64).to_le_bytes());
            for x in p {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl TruthSource for Truth {
    fn param_dims(&self) -> usize {
        self.solver.dims()
    }

    fn truth_set(&self, params: Vec<Vec<f64>>) -> nlrm::Result<TruthSet> {
        let Some(dir) = &self.dir else {
            return TruthSet::build(&self.solver, params);
        };
        let path = dir.join(format!("{}.truth", self.key(&params)));
        if path.exists() {
            match TruthSet::load(&path) {
                Ok(t) if t.params() == params.as_slice() && t.grid() == self.solver.grid() => {
                    debug!("truth cache hit {}", path.display());
                    return Ok(t);
                }
                Ok(_) => warn!("truth cache {} does not match its key; recomputing", path.display()),
                Err(e) => warn!("unreadable truth cache {}: {e}; recomputing", path.display()),
            }
        }
        let t = TruthSet::build(&self.solver, params)?;
        std::fs::create_dir_all(dir)?;
        t.save(&path)?;
        debug!("truth cache stored {}", path.display());
        Ok(t)
    }
}

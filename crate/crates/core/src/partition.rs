//! Tensor-product partitions of the parameter box and per-cell weights.

use std::fmt::Write as _;
use std::path::Path;

use crate::affine::{lq_norm_inverse, AffineDiffusion, WeightSequence};
use crate::bounds::c_sigma;
use crate::error::{Error, Result};
use crate::rng::Sampler;

const BOX_SLACK: f64 = 1e-12;

/// Hyperrectangle `Q = prod_j [center_j - half_j, center_j + half_j]`.
///
/// Directions past `dims()` are implicitly `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    center: Vec<f64>,
    half: Vec<f64>,
}

impl Cell {
    pub fn whole() -> Self {
        Cell {
            center: Vec::new(),
            half: Vec::new(),
        }
    }

    pub fn new(center: Vec<f64>, half: Vec<f64>) -> Result<Self> {
        if center.len() != half.len() {
            return Err(Error::InvalidArgument(format!(
                "cell has {} centers but {} half-lengths",
                center.len(),
                half.len()
            )));
        }
        for (j, (&c, &h)) in center.iter().zip(&half).enumerate() {
            if !(h > 0.0) || !c.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "direction {}: center {c}, half-length {h}",
                    j + 1
                )));
            }
        }
        Ok(Cell { center, half })
    }

    pub fn dims(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self, j: usize) -> f64 {
        self.center.get(j).copied().unwrap_or(0.0)
    }

    pub fn half(&self, j: usize) -> f64 {
        self.half.get(j).copied().unwrap_or(1.0)
    }

    pub fn lo(&self, j: usize) -> f64 {
        self.center(j) - self.half(j)
    }

    pub fn hi(&self, j: usize) -> f64 {
        self.center(j) + self.half(j)
    }

    pub fn inside_unit_box(&self) -> bool {
        (0..self.dims()).all(|j| self.lo(j) >= -1.0 - BOX_SLACK && self.hi(j) <= 1.0 + BOX_SLACK)
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        let n = y.len().max(self.dims());
        (0..n).all(|j| {
            let v = y.get(j).copied().unwrap_or(0.0);
            v >= self.lo(j) - BOX_SLACK && v <= self.hi(j) + BOX_SLACK
        })
    }

    /// Independent uniform draw from the cell in `dims` directions.
    pub fn sample(&self, sampler: &mut Sampler, dims: usize) -> Vec<f64> {
        (0..dims)
            .map(|j| {
                let v = sampler.uniform(self.lo(j), self.hi(j));
                v.clamp(-1.0, 1.0)
            })
            .collect()
    }

    /// Maps a point of `[-1,1]^dims` to the cell: `center + half * t`.
    pub fn map_from_reference(&self, t: &[f64]) -> Vec<f64> {
        t.iter()
            .enumerate()
            .map(|(j, &v)| self.center(j) + self.half(j) * v)
            .collect()
    }

    /// Inverse of [`Cell::map_from_reference`].
    pub fn map_to_reference(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .enumerate()
            .map(|(j, &v)| (v - self.center(j)) / self.half(j))
            .collect()
    }
}

/// One interval of a direction's subdivision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub center: f64,
    pub half: f64,
}

impl Interval {
    pub fn lo(&self) -> f64 {
        self.center - self.half
    }

    pub fn hi(&self) -> f64 {
        self.center + self.half
    }

    fn from_endpoints(lo: f64, hi: f64) -> Self {
        Interval {
            center: 0.5 * (lo + hi),
            half: 0.5 * (hi - lo),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Construction {
    Single,
    Graded { eta: f64 },
    Symmetric { eps: f64, m: usize, q: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    /// Sorted left to right, tiling `[-1, 1]`.
    pub intervals: Vec<Interval>,
    /// Whether the direction was actually split by the construction.
    pub subdivided: bool,
    /// Index of the last interval produced by clipping, if any.
    pub clipped: Vec<usize>,
}

impl Direction {
    fn whole() -> Self {
        Direction {
            intervals: vec![Interval {
                center: 0.0,
                half: 1.0,
            }],
            subdivided: false,
            clipped: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Interval containing `v`; a shared endpoint belongs to the interval
    /// on its right (the one whose closed left end it is), except at `1`.
    pub fn locate(&self, v: f64) -> usize {
        let k = self.intervals.partition_point(|iv| iv.hi() <= v);
        k.min(self.intervals.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub construction: Construction,
    /// Model dimension the partition lives in.
    pub dims: usize,
    /// Number of leading directions eligible for subdivision.
    pub j_count: usize,
    pub sigma: Option<f64>,
    pub directions: Vec<Direction>,
}

impl Partition {
    pub fn single(dims: usize) -> Self {
        Partition {
            construction: Construction::Single,
            dims,
            j_count: 0,
            sigma: None,
            directions: Vec::new(),
        }
    }

    /// Number of cells, saturating at `usize::MAX` for very fine partitions.
    pub fn cell_count(&self) -> usize {
        self.directions
            .iter()
            .fold(1usize, |acc, d| acc.saturating_mul(d.len()))
    }

    /// Per-cell multi-index, first direction fastest.
    pub fn cell_coordinates(&self, index: usize) -> Vec<usize> {
        let mut rest = index;
        self.directions
            .iter()
            .map(|d| {
                let i = rest % d.len();
                rest /= d.len();
                i
            })
            .collect()
    }

    pub fn cell(&self, index: usize) -> Result<Cell> {
        if index >= self.cell_count() {
            return Err(Error::InvalidArgument(format!(
                "cell {index} of a {}-cell partition",
                self.cell_count()
            )));
        }
        let coords = self.cell_coordinates(index);
        let mut center = Vec::with_capacity(coords.len());
        let mut half = Vec::with_capacity(coords.len());
        for (d, &i) in self.directions.iter().zip(&coords) {
            center.push(d.intervals[i].center);
            half.push(d.intervals[i].half);
        }
        Cell::new(center, half)
    }

    pub fn cells(&self) -> Vec<Cell> {
        (0..self.cell_count())
            .map(|k| self.cell(k).expect("index in range"))
            .collect()
    }

    /// Whether direction `j` (0-based) counts as subdivided for cell weights.
    pub fn is_subdivided(&self, j: usize) -> bool {
        self.directions.get(j).is_some_and(|d| d.subdivided)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# nlrm partition v1\n");
        let _ = match self.construction {
            Construction::Single => writeln!(out, "construction single"),
            Construction::Graded { eta } => writeln!(out, "construction graded eta {eta:?}"),
            Construction::Symmetric { eps, m, q } => {
                writeln!(out, "construction symmetric eps {eps:?} m {m} q {q:?}")
            }
        };
        let _ = writeln!(out, "dims {}", self.dims);
        let _ = writeln!(out, "J {}", self.j_count);
        match self.sigma {
            Some(s) => {
                let _ = writeln!(out, "sigma {s:?}");
            }
            None => out.push_str("sigma none\n"),
        }
        for (j, d) in self.directions.iter().enumerate() {
            let clipped: Vec<String> = d.clipped.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(
                out,
                "direction {} subdivided {} intervals {} clipped {}",
                j + 1,
                d.subdivided,
                d.len(),
                if clipped.is_empty() { "-".to_string() } else { clipped.join(",") }
            );
            for iv in &d.intervals {
                let _ = writeln!(out, "{:?} {:?}", iv.center, iv.half);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Parse(format!("partition: unexpected line `{line}`"));
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut next = || lines.next().ok_or_else(|| Error::Parse("partition: truncated".into()));
        let num = |t: &str| t.parse::<f64>().map_err(|e| Error::Parse(format!("`{t}`: {e}")));
        let int = |t: &str| t.parse::<usize>().map_err(|e| Error::Parse(format!("`{t}`: {e}")));

        let line = next()?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        let construction = match tok.as_slice() {
            ["construction", "single"] => Construction::Single,
            ["construction", "graded", "eta", e] => Construction::Graded { eta: num(e)? },
            ["construction", "symmetric", "eps", e, "m", m, "q", q] => Construction::Symmetric {
                eps: num(e)?,
                m: int(m)?,
                q: num(q)?,
            },
            _ => return Err(bad(line)),
        };
        let line = next()?;
        let dims = match line.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["dims", d] => int(d)?,
            _ => return Err(bad(line)),
        };
        let line = next()?;
        let j_count = match line.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["J", d] => int(d)?,
            _ => return Err(bad(line)),
        };
        let line = next()?;
        let sigma = match line.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["sigma", "none"] => None,
            ["sigma", s] => Some(num(s)?),
            _ => return Err(bad(line)),
        };
        let mut directions = Vec::new();
        while let Ok(line) = next() {
            let tok: Vec<&str> = line.split_whitespace().collect();
            let (sub, count, clipped) = match tok.as_slice() {
                ["direction", _, "subdivided", s, "intervals", n, "clipped", c] => {
                    let sub = s.parse::<bool>().map_err(|_| bad(line))?;
                    let clipped = if *c == "-" {
                        Vec::new()
                    } else {
                        c.split(',').map(int).collect::<Result<Vec<_>>>()?
                    };
                    (sub, int(n)?, clipped)
                }
                _ => return Err(bad(line)),
            };
            let mut intervals = Vec::with_capacity(count);
            for _ in 0..count {
                let line = next()?;
                let tok: Vec<&str> = line.split_whitespace().collect();
                match tok.as_slice() {
                    [c, h] => intervals.push(Interval {
                        center: num(c)?,
                        half: num(h)?,
                    }),
                    _ => return Err(bad(line)),
                }
            }
            directions.push(Direction {
                intervals,
                subdivided: sub,
                clipped,
            });
        }
        let p = Partition {
            construction,
            dims,
            j_count,
            sigma,
            directions,
        };
        check_tiling(&p, 1e-12)?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Checks that every direction tiles `[-1, 1]` with abutting intervals.
pub fn check_tiling(p: &Partition, tol: f64) -> Result<()> {
    for (j, d) in p.directions.iter().enumerate() {
        let err = |what: String| Err(Error::Degenerate(format!("direction {}: {what}", j + 1)));
        let Some(first) = d.intervals.first() else {
            return err("no intervals".into());
        };
        if (first.lo() + 1.0).abs() > tol {
            return err(format!("starts at {}", first.lo()));
        }
        if (d.intervals[d.len() - 1].hi() - 1.0).abs() > tol {
            return err(format!("ends at {}", d.intervals[d.len() - 1].hi()));
        }
        for w in d.intervals.windows(2) {
            if !(w[0].half > 0.0) || (w[0].hi() - w[1].lo()).abs() > tol {
                return err(format!("gap or overlap at {}", w[0].hi()));
            }
        }
    }
    Ok(())
}

/// Smallest `J >= 0` with `sum_{j>J} rho_j^{-1} <= eta/2`, and `sigma = eta/(2J)`.
///
/// Only the first `j_max` weights are used. `J = 0` means no subdivision
/// and comes with `sigma = None`.
pub fn choose_j_sigma_graded(w: &WeightSequence, eta: f64, j_max: usize) -> Result<(usize, Option<f64>)> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta = {eta} must be positive")));
    }
    let rho = &w.rho()[..j_max.min(w.len())];
    let mut tail: f64 = rho.iter().map(|r| 1.0 / r).sum();
    let mut j = 0;
    while tail > 0.5 * eta && j < rho.len() {
        tail -= 1.0 / rho[j];
        j += 1;
    }
    if j == 0 {
        Ok((0, None))
    } else {
        Ok((j, Some(eta / (2.0 * j as f64))))
    }
}

/// Graded subdivision of one direction, intervals listed right to left.
fn graded_direction(sigma: f64, rho: f64) -> Direction {
    let alpha = (1.0 - sigma) / (1.0 + sigma);
    let mut y = (1.0 - sigma * rho) / (1.0 + sigma);
    let mut lam = sigma * (rho + y);
    let mut rev = vec![Interval { center: y, half: lam }];
    let mut prev_left = 1.0;
    while y - lam > -1.0 {
        prev_left = y - lam;
        let next = alpha * lam;
        y = y - lam - next;
        lam = next;
        rev.push(Interval { center: y, half: lam });
    }
    let mut clipped = Vec::new();
    if y - lam < -1.0 {
        let last = rev.len() - 1;
        rev[last] = Interval {
            center: 0.5 * (prev_left - 1.0),
            half: 0.5 * (prev_left + 1.0),
        };
        clipped.push(0);
    }
    rev.reverse();
    Direction {
        intervals: rev,
        subdivided: true,
        clipped,
    }
}

/// Graded partition driven by the single parameter `eta`.
pub fn graded_partition(w: &WeightSequence, eta: f64, j_max: usize) -> Result<Partition> {
    let (j_count, sigma) = choose_j_sigma_graded(w, eta, j_max)?;
    let Some(sigma) = sigma else {
        let mut p = Partition::single(j_max);
        p.construction = Construction::Graded { eta };
        return Ok(p);
    };
    if sigma >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "eta = {eta} gives sigma = {sigma} >= 1"
        )));
    }
    let mut directions = Vec::with_capacity(j_count);
    for j in 0..j_count {
        let rho = w.rho()[j];
        // Weights are nondecreasing, so once a direction stops qualifying
        // every later one is left whole.
        if sigma * rho < 1.0 && directions.iter().all(|d: &Direction| d.subdivided) {
            directions.push(graded_direction(sigma, rho));
        } else {
            directions.push(Direction::whole());
        }
    }
    Ok(Partition {
        construction: Construction::Graded { eta },
        dims: j_max,
        j_count,
        sigma: Some(sigma),
        directions,
    })
}

/// Symmetric subdivision of one direction.
fn symmetric_direction(sigma: f64, rho: f64) -> Direction {
    if sigma * rho >= 1.0 {
        return Direction {
            subdivided: true,
            ..Direction::whole()
        };
    }
    let lam0 = sigma * rho;
    let mut right = Vec::new();
    let mut r = lam0;
    let clipped = loop {
        let lam = sigma * (rho - r) / (1.0 + sigma);
        let next = r + 2.0 * lam;
        if next >= 1.0 {
            right.push(Interval::from_endpoints(r, 1.0));
            break next > 1.0;
        }
        right.push(Interval { center: r + lam, half: lam });
        r = next;
    };
    let k = right.len();
    let mut intervals: Vec<Interval> = right
        .iter()
        .rev()
        .map(|iv| Interval {
            center: -iv.center,
            half: iv.half,
        })
        .collect();
    intervals.push(Interval { center: 0.0, half: lam0 });
    intervals.extend(right);
    Direction {
        intervals,
        subdivided: true,
        clipped: if clipped { vec![0, 2 * k] } else { Vec::new() },
    }
}

/// `k_j = ceil((ln(1 - 1/rho) - ln(1 - sigma)) / ln alpha)`, `alpha = (1-sigma)/(1+sigma)`.
pub fn symmetric_k(sigma: f64, rho: f64) -> usize {
    if sigma * rho >= 1.0 {
        return 0;
    }
    let alpha = (1.0 - sigma) / (1.0 + sigma);
    let k = ((1.0 - 1.0 / rho).ln() - (1.0 - sigma).ln()) / alpha.ln();
    k.ceil().max(1.0) as usize
}

/// Symmetric partition for explicit `(sigma, J)`.
pub fn symmetric_partition_from_sigma(
    w: &WeightSequence,
    sigma: f64,
    j_count: usize,
    construction: Construction,
) -> Result<Partition> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::InvalidArgument(format!("sigma = {sigma} not in (0, 1)")));
    }
    if j_count > w.len() {
        return Err(Error::InvalidArgument(format!(
            "J = {j_count} exceeds {} weights",
            w.len()
        )));
    }
    let directions = (0..j_count).map(|j| symmetric_direction(sigma, w.rho()[j])).collect();
    Ok(Partition {
        construction,
        dims: w.len(),
        j_count,
        sigma: Some(sigma),
        directions,
    })
}

/// Symmetric partition meeting accuracy `eps` with `m + 1` terms per cell,
/// given the Taylor bound constant `constant = C(delta, rho, q)`.
pub fn symmetric_partition(
    w: &WeightSequence,
    eps: f64,
    m: usize,
    q: f64,
    constant: f64,
) -> Result<Partition> {
    if !(q > 0.0 && q < 2.0) {
        return Err(Error::InvalidArgument(format!("q = {q} not in (0, 2)")));
    }
    if !(eps > 0.0) || !(constant > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need eps > 0 and C > 0, got {eps}, {constant}"
        )));
    }
    let construction = Construction::Symmetric { eps, m, q };
    let r = 1.0 / q - 0.5;
    let eta = eps * (m as f64 + 1.0).powf(r) / constant;
    let rho = w.rho();
    let norm_q: f64 = rho.iter().map(|v| v.powf(-q)).sum();
    if norm_q.powf(1.0 / q) <= eta {
        let mut p = Partition::single(w.len());
        p.construction = construction;
        return Ok(p);
    }
    let budget = 0.5 * eta.powf(q);
    let mut tail = norm_q - rho[0].powf(-q);
    let mut j = 1;
    while tail > budget && j < rho.len() {
        tail -= rho[j].powf(-q);
        j += 1;
    }
    let sigma = (budget / j as f64).powf(1.0 / q);
    symmetric_partition_from_sigma(w, sigma, j, construction)
}

/// Per-cell weights `rho~` and weighted ellipticity `delta~`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellWeights {
    pub rho_tilde: Vec<f64>,
    pub delta_tilde: f64,
}

/// Weights for cell `index` of `p`.
///
/// Graded directions use `(rho_j + center_j)/half_j`, symmetric ones use
/// `1/sigma`; all others keep `rho_j`. `delta~` is computed on the
/// recentred model so it applies to any affine family.
pub fn cell_weights(
    p: &Partition,
    index: usize,
    w: &WeightSequence,
    model: &AffineDiffusion,
) -> Result<CellWeights> {
    let cell = p.cell(index)?;
    let dims = model.j_max().min(w.len());
    let mut rho_tilde = w.rho()[..dims].to_vec();
    for (j, rt) in rho_tilde.iter_mut().enumerate().take(p.directions.len()) {
        if !p.is_subdivided(j) {
            continue;
        }
        let half = cell.half(j);
        if !(half > 0.0) {
            return Err(Error::Degenerate(format!("direction {} has zero length", j + 1)));
        }
        *rt = match p.construction {
            Construction::Symmetric { .. } => 1.0 / p.sigma.expect("symmetric has sigma"),
            _ => (w.rho()[j] + cell.center(j)) / half,
        };
    }
    let local = model.truncated(dims).recenter_rescale(&cell)?;
    let delta_tilde = local.weighted_delta(&rho_tilde);
    Ok(CellWeights {
        rho_tilde,
        delta_tilde,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellConditionReport {
    pub kappa_ok: bool,
    pub lq_ok: bool,
    pub delta_ok: bool,
    pub kappa: f64,
    pub min_rho_tilde: f64,
    pub lq_tilde: f64,
    pub lq: f64,
    pub delta_tilde: f64,
    pub delta: f64,
}

/// The three per-cell conditions: `rho~_j >= kappa`,
/// `||1/rho~||_q <= ||1/rho||_q`, and `delta~ <= delta`.
pub fn verify_cell_conditions(cw: &CellWeights, w: &WeightSequence, delta: f64) -> CellConditionReport {
    let tol = 1e-12;
    let kappa = w.kappa();
    let min_rho_tilde = cw.rho_tilde.iter().copied().fold(f64::INFINITY, f64::min);
    let lq_tilde = lq_norm_inverse(&cw.rho_tilde, w.q());
    let lq = lq_norm_inverse(&w.rho()[..cw.rho_tilde.len()], w.q());
    CellConditionReport {
        kappa_ok: min_rho_tilde >= kappa * (1.0 - tol),
        lq_ok: lq_tilde <= lq * (1.0 + tol),
        delta_ok: cw.delta_tilde <= delta * (1.0 + tol),
        kappa,
        min_rho_tilde,
        lq_tilde,
        lq,
        delta_tilde: cw.delta_tilde,
        delta,
    }
}

/// `prod_{j <= J0} (|ln(1 - 1/rho_j)| / sigma + C(sigma))` with `J0` the
/// last of the first `J` directions having `sigma rho_j < 1`.
pub fn bound_cell_count(w: &WeightSequence, sigma: f64, j_count: usize) -> Result<f64> {
    let c = c_sigma(sigma)?;
    Ok(w.rho()
        .iter()
        .take(j_count)
        .take_while(|&&r| sigma * r < 1.0)
        .map(|&r| (1.0 - 1.0 / r).ln().abs() / sigma + c)
        .product())
}

/// Index of the cell containing `y` (see [`Direction::locate`] for ties).
pub fn locate_cell(p: &Partition, y: &[f64]) -> Result<usize> {
    if let Some((j, v)) = y.iter().enumerate().find(|(_, v)| !(v.abs() <= 1.0)) {
        return Err(Error::OutOfDomain(format!("y_{} = {v}", j + 1)));
    }
    let mut index = 0;
    let mut stride = 1;
    for (j, d) in p.directions.iter().enumerate() {
        let v = y.get(j).copied().unwrap_or(0.0);
        index += stride * d.locate(v);
        stride *= d.len();
    }
    Ok(index)
}

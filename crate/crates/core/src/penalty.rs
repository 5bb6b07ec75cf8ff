//! The sparse-overlapping-sets norm
//!
//! `h(x) = inf { sum_G alpha_G ||w_G||_2 + ||w_G||_1 : sum_G w_G = x }`,
//! its group-restriction dual bound, and the proximal operator of the
//! separable penalty in duplicated coordinates.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{duplication_map, DuplicationMap, GroupSet};

/// Which terms of the penalty are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// `alpha_G ||w_G||_2 + ||w_G||_1`.
    #[default]
    Soslasso,
    /// Latent overlapping group lasso: `alpha_G ||w_G||_2` only.
    GroupOnly,
    /// Lasso: `||w_G||_1` only.
    L1Only,
}

impl PenaltyMode {
    fn uses_l1(self) -> bool {
        !matches!(self, PenaltyMode::GroupOnly)
    }

    fn uses_l2(self) -> bool {
        !matches!(self, PenaltyMode::L1Only)
    }
}

/// Per-group weights on the l2 term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupWeights {
    Uniform(f64),
    PerGroup(Vec<f64>),
}

impl Default for GroupWeights {
    fn default() -> Self {
        GroupWeights::Uniform(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub mode: PenaltyMode,
    pub weights: GroupWeights,
}

impl PenaltyConfig {
    pub fn new(mode: PenaltyMode) -> Self {
        Self {
            mode,
            weights: GroupWeights::default(),
        }
    }

    pub fn alpha(&self, group: usize) -> f64 {
        match &self.weights {
            GroupWeights::Uniform(a) => *a,
            GroupWeights::PerGroup(v) => v[group],
        }
    }

    /// Checks positivity and, for per-group weights, the group count.
    pub fn validate(&self, groups: usize) -> Result<()> {
        let ok = |a: f64| a.is_finite() && a > 0.0;
        match &self.weights {
            GroupWeights::Uniform(a) if !ok(*a) => {
                Err(Error::invalid(format!("group weight must be positive, got {a}")))
            }
            GroupWeights::PerGroup(v) if v.len() != groups => Err(Error::DimensionMismatch {
                context: "group weights",
                expected: groups,
                got: v.len(),
            }),
            GroupWeights::PerGroup(v) => match v.iter().find(|a| !ok(**a)) {
                Some(a) => Err(Error::invalid(format!("group weight must be positive, got {a}"))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

/// A feasible decomposition `x = sum_G w_G` and its penalty value.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub dm: DuplicationMap,
    pub w_dup: Array1<f64>,
    pub value: f64,
    /// `||expand(w_dup) - x||_2`.
    pub residual: f64,
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|a| a.abs()).sum()
}

fn segment_value(w: &[f64], alpha: f64, mode: PenaltyMode) -> f64 {
    let mut value = 0.0;
    if mode.uses_l2() {
        value += alpha * norm2(w);
    }
    if mode.uses_l1() {
        value += norm1(w);
    }
    value
}

/// Penalty of a duplicated vector, `sum_G (alpha_G ||w_G||_2 + ||w_G||_1)`.
pub fn penalty_value(w_dup: ArrayView1<f64>, dm: &DuplicationMap, cfg: &PenaltyConfig) -> Result<f64> {
    if w_dup.len() != dm.total_dup() {
        return Err(Error::DimensionMismatch {
            context: "duplicated vector",
            expected: dm.total_dup(),
            got: w_dup.len(),
        });
    }
    let w = w_dup.to_vec();
    Ok(penalty_value_slice(&w, dm, cfg))
}

pub(crate) fn penalty_value_slice(w: &[f64], dm: &DuplicationMap, cfg: &PenaltyConfig) -> f64 {
    dm.segments()
        .iter()
        .enumerate()
        .map(|(g, seg)| segment_value(&w[seg.clone()], cfg.alpha(g), cfg.mode))
        .sum()
}

fn check_len(x: ArrayView1<f64>, gs: &GroupSet) -> Result<()> {
    if x.len() != gs.p() {
        return Err(Error::DimensionMismatch {
            context: "penalty argument",
            expected: gs.p(),
            got: x.len(),
        });
    }
    Ok(())
}

fn check_support(x: ArrayView1<f64>, gs: &GroupSet) -> Result<()> {
    let coverage = gs.coverage();
    match x.iter().zip(&coverage).position(|(v, &c)| *v != 0.0 && c == 0) {
        Some(index) => Err(Error::UncoveredSupport { index }),
        None => Ok(()),
    }
}

/// Closed-form value for pairwise disjoint groups, where the infimum is
/// attained by restricting `x` to each group.
pub fn eval_disjoint(x: ArrayView1<f64>, gs: &GroupSet, cfg: &PenaltyConfig) -> Result<f64> {
    check_len(x, gs)?;
    cfg.validate(gs.len())?;
    if let Some((first, second, index)) = gs.first_overlap() {
        return Err(Error::OverlappingGroups {
            first,
            second,
            index,
        });
    }
    check_support(x, gs)?;
    Ok(gs
        .groups()
        .iter()
        .enumerate()
        .map(|(g, members)| {
            let restricted: Vec<f64> = members.iter().map(|&j| x[j]).collect();
            segment_value(&restricted, cfg.alpha(g), cfg.mode)
        })
        .sum())
}

/// `max_G 1/2 ||u_G||_2`, an upper bound on the dual norm of `h` with unit
/// group weights. Overlapped coordinates count in every containing group.
pub fn dual_norm_bound(u: ArrayView1<f64>, gs: &GroupSet) -> f64 {
    gs.groups()
        .iter()
        .map(|members| 0.5 * members.iter().map(|&j| u[j] * u[j]).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// In-place prox of `step * (alpha ||.||_2 + ||.||_1)`: soft-threshold by
/// `step`, then shrink the block by `step * alpha`.
pub(crate) fn prox_segment(w: &mut [f64], step: f64, alpha: f64, mode: PenaltyMode) {
    if step <= 0.0 {
        return;
    }
    if mode.uses_l1() {
        for v in w.iter_mut() {
            let mag = v.abs() - step;
            *v = if mag > 0.0 { mag.copysign(*v) } else { 0.0 };
        }
    }
    if mode.uses_l2() {
        let norm = norm2(w);
        let thresh = step * alpha;
        if norm <= thresh {
            w.iter_mut().for_each(|v| *v = 0.0);
        } else {
            let scale = 1.0 - thresh / norm;
            w.iter_mut().for_each(|v| *v *= scale);
        }
    }
}

/// `argmin_w 1/2 ||w - v||^2 + step (alpha ||w||_2 + ||w||_1)`, respecting
/// `mode`.
pub fn prox_group(v: ArrayView1<f64>, step: f64, alpha: f64, mode: PenaltyMode) -> Array1<f64> {
    let mut w = v.to_vec();
    prox_segment(&mut w, step, alpha, mode);
    Array1::from(w)
}

pub(crate) fn prox_full_in_place(w: &mut [f64], step: f64, dm: &DuplicationMap, cfg: &PenaltyConfig) {
    for (g, seg) in dm.segments().iter().enumerate() {
        prox_segment(&mut w[seg.clone()], step, cfg.alpha(g), cfg.mode);
    }
}

/// Segment-wise [`prox_group`] over a duplicated vector.
pub fn prox_full(
    w_dup: ArrayView1<f64>,
    step: f64,
    dm: &DuplicationMap,
    cfg: &PenaltyConfig,
) -> Result<Array1<f64>> {
    if w_dup.len() != dm.total_dup() {
        return Err(Error::DimensionMismatch {
            context: "duplicated vector",
            expected: dm.total_dup(),
            got: w_dup.len(),
        });
    }
    let mut w = w_dup.to_vec();
    prox_full_in_place(&mut w, step, dm, cfg);
    Ok(Array1::from(w))
}

/// Default relative tolerance for [`eval_overlapping`].
pub const DEFAULT_TOL: f64 = 1e-6;


/// Dual norm of `alpha ||.||_2 + ||.||_1` at `u`: the least `t` with
/// `||soft(u, t)||_2 <= alpha t`, by bisection.
pub fn group_dual_norm(u: ArrayView1<f64>, alpha: f64) -> f64 {
    group_dual_norm_slice(&u.to_vec(), alpha)
}

fn group_dual_norm_slice(u: &[f64], alpha: f64) -> f64 {
    let inf = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if inf == 0.0 {
        return 0.0;
    }
    let excess = |t: f64| u.iter().map(|v| (v.abs() - t).max(0.0).powi(2)).sum::<f64>().sqrt() - alpha * t;
    let (mut lo, mut hi) = (0.0, inf);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

/// Exact dual norm of `h`: the largest per-group dual norm, where the
/// per-group norm follows the penalty mode.
pub fn dual_norm(u: ArrayView1<f64>, gs: &GroupSet, cfg: &PenaltyConfig) -> Result<f64> {
    check_len(u, gs)?;
    cfg.validate(gs.len())?;
    let u = u.to_vec();
    Ok(dual_norm_slice(&u, gs.groups(), cfg))
}

fn dual_norm_slice(u: &[f64], groups: &[Vec<usize>], cfg: &PenaltyConfig) -> f64 {
    let mut sub = Vec::new();
    groups
        .iter()
        .enumerate()
        .map(|(g, members)| {
            sub.clear();
            sub.extend(members.iter().map(|&j| u[j]));
            let alpha = cfg.alpha(g);
            match cfg.mode {
                PenaltyMode::Soslasso => group_dual_norm_slice(&sub, alpha),
                PenaltyMode::GroupOnly => norm2(&sub) / alpha,
                PenaltyMode::L1Only => sub.iter().fold(0.0f64, |a, v| a.max(v.abs())),
            }
        })
        .fold(0.0, f64::max)
}

/// Evaluates `h(x)` for arbitrary (overlapping) groups.
///
/// Some optimal decomposition is sign-consistent (every duplicate of
/// coordinate `j` shares the sign of `x_j`), so the l1 part always equals
/// `||x||_1` and `h(x) = ||x||_1 + Omega(x)`, where `Omega` is the latent
/// group norm with weights `alpha_G`. `Omega` is computed through its dual,
/// `max { <u, x> : ||u_G||_2 <= alpha_G }`, by a log-barrier method: every
/// barrier stage yields a feasible decomposition (upper estimate) and a
/// feasible `u` (lower bound), and iteration stops once they agree within
/// `tol` relative to `h(x)`.
pub fn eval_overlapping(
    x: ArrayView1<f64>,
    gs: &GroupSet,
    cfg: &PenaltyConfig,
    tol: f64,
) -> Result<Decomposition> {
    check_len(x, gs)?;
    cfg.validate(gs.len())?;
    check_support(x, gs)?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let dm = duplication_map(gs);
    let xs = x.to_vec();
    if xs.iter().all(|v| *v == 0.0) {
        return Ok(Decomposition {
            w_dup: Array1::zeros(dm.total_dup()),
            value: 0.0,
            residual: 0.0,
            dm,
        });
    }

    let w: Vec<f64> = if cfg.mode.uses_l2() {
        let l1 = if cfg.mode.uses_l1() { xs.iter().map(|v| v.abs()).sum() } else { 0.0 };
        latent_split(&xs, gs, &dm, cfg, tol, l1)?
    } else {
        // any sign-consistent split is optimal for the l1 part alone
        let coverage = gs.coverage();
        dm.origin().iter().map(|&j| xs[j] / coverage[j] as f64).collect()
    };
    let value = penalty_value_slice(&w, &dm, cfg);
    let residual = feasibility_residual(&w, &xs, &dm);
    Ok(Decomposition {
        w_dup: Array1::from(w),
        value,
        residual,
        dm,
    })
}

const MAX_STAGES: usize = 80;
const MAX_CENTERING: usize = 100;

/// Latent group norm `Omega(x) = max { <u, x> : ||u_G||_2 <= alpha_G }` by a
/// log-barrier method on the dual. Returns sign-consistent per-group pieces in
/// duplicated order, whose penalty plus `offset` is within `tol` (relative) of
/// the certified lower bound `<u, x> + offset`.
fn latent_split(
    x: &[f64],
    gs: &GroupSet,
    dm: &DuplicationMap,
    cfg: &PenaltyConfig,
    tol: f64,
    offset: f64,
) -> Result<Vec<f64>> {
    let groups = gs.groups();
    let m = groups.len();
    let coverage = gs.coverage();
    let mut var_of = vec![usize::MAX; x.len()];
    let mut coords = Vec::new();
    for (j, &c) in coverage.iter().enumerate() {
        if c > 0 {
            var_of[j] = coords.len();
            coords.push(j);
        }
    }
    let nv = coords.len();
    let members: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| g.iter().map(|&j| var_of[j]).collect())
        .collect();
    let xv: Vec<f64> = coords.iter().map(|&j| x[j]).collect();
    let alpha2: Vec<f64> = (0..m).map(|g| cfg.alpha(g).powi(2)).collect();

    let slack = |u: &[f64], g: usize| alpha2[g] - members[g].iter().map(|&k| u[k] * u[k]).sum::<f64>();
    let barrier = |u: &[f64], t: f64| -> f64 {
        let mut f = -t * u.iter().zip(&xv).map(|(a, b)| a * b).sum::<f64>();
        for g in 0..m {
            let c = slack(u, g);
            if c <= 0.0 {
                return f64::INFINITY;
            }
            f -= c.ln();
        }
        f
    };

    let mut u = vec![0.0; nv];
    let mut t = m as f64 / norm2(&xv);
    let mut best = f64::INFINITY;
    let mut best_w = Vec::new();
    let mut gap = f64::INFINITY;
    for _ in 0..MAX_STAGES {
        for _ in 0..MAX_CENTERING {
            let c: Vec<f64> = (0..m).map(|g| slack(&u, g)).collect();
            let mut grad: Vec<f64> = xv.iter().map(|v| -t * v).collect();
            let mut hess = DMatrix::<f64>::zeros(nv, nv);
            for (g, mem) in members.iter().enumerate() {
                let inv = 1.0 / c[g];
                for &a in mem {
                    grad[a] += 2.0 * u[a] * inv;
                    hess[(a, a)] += 2.0 * inv;
                    for &b in mem {
                        hess[(a, b)] += 4.0 * u[a] * u[b] * inv * inv;
                    }
                }
            }
            let rhs = DVector::from_iterator(nv, grad.iter().map(|g| -g));
            let Some(ch) = hess.cholesky() else { break };
            let dir = ch.solve(&rhs);
            let decrement: f64 = -grad.iter().zip(dir.iter()).map(|(g, d)| g * d).sum::<f64>();
            if decrement <= 1e-14 {
                break;
            }
            let f0 = barrier(&u, t);
            let mut s = 1.0;
            let mut next = u.clone();
            loop {
                for k in 0..nv {
                    next[k] = u[k] + s * dir[k];
                }
                if barrier(&next, t) <= f0 - 0.25 * s * decrement || s < 1e-12 {
                    break;
                }
                s *= 0.5;
            }
            if s < 1e-12 {
                break;
            }
            std::mem::swap(&mut u, &mut next);
        }

        // primal pieces from the centering condition x = sum_G 2 u_G / (t c_G)
        let mut v = vec![0.0; dm.total_dup()];
        for (g, seg) in dm.segments().iter().enumerate() {
            let scale = 2.0 / (t * slack(&u, g));
            for (d, &k) in seg.clone().zip(&members[g]) {
                v[d] = scale * u[k];
            }
        }
        let w = sign_consistent(&v, x, dm, &coverage);
        let upper = penalty_value_slice(&w, dm, cfg);
        let lower = offset + u.iter().zip(&xv).map(|(a, b)| a * b).sum::<f64>();
        if upper < best {
            best = upper;
            best_w = w;
        }
        gap = (best - lower) / best;
        if gap <= tol {
            return Ok(best_w);
        }
        t *= 10.0;
    }
    Err(Error::NoConvergence {
        iterations: MAX_STAGES,
        residual: gap,
    })
}

/// Rescales pieces so each coordinate's duplicates share the sign of `x_j`
/// and sum to it exactly: `w_{G,j} = x_j |v_{G,j}| / sum_H |v_{H,j}|`. No
/// entry grows in magnitude when the pieces already sum to `x`.
fn sign_consistent(v: &[f64], x: &[f64], dm: &DuplicationMap, coverage: &[usize]) -> Vec<f64> {
    let mut mass = vec![0.0; x.len()];
    for (d, &j) in dm.origin().iter().enumerate() {
        mass[j] += v[d].abs();
    }
    dm.origin()
        .iter()
        .enumerate()
        .map(|(d, &j)| {
            if x[j] == 0.0 {
                0.0
            } else if mass[j] > 0.0 {
                x[j] * v[d].abs() / mass[j]
            } else {
                x[j] / coverage[j] as f64
            }
        })
        .collect()
}

fn feasibility_residual(w: &[f64], x: &[f64], dm: &DuplicationMap) -> f64 {
    let mut ew = vec![0.0; x.len()];
    dm.expand_into(w, &mut ew);
    ew.iter()
        .zip(x)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

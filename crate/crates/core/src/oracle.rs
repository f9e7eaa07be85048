//! Reference solver: exhaustive barycentric grid over the bandwidth simplex
//! followed by feasibility-preserving projected-gradient refinement.
//!
//! Utility is linear in the allocation, and the latency is
//! `t(w) = t_comp + sum_i a_i / w_i` with `a_i = D_i / c_i`, so the feasible
//! region `{t <= t_max}` is convex and the optimum sits on the budget face.

use crate::error::{Error, Result};
use crate::pipeline::{self, Allocation, EnvState, PipelineConstants, ACTION_DIM};

pub const DEFAULT_RESOLUTION: usize = 200;

const REFINE_MAX_ITERS: usize = 500;
const REFINE_MIN_GAIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    pub alloc: Allocation,
    pub utility_star: f64,
    pub feasible: bool,
    pub grid_resolution: usize,
}

/// Per-state linear and latency coefficients.
#[derive(Debug, Clone, Copy)]
struct Problem {
    /// Marginal utility per unit bandwidth.
    u: [f64; ACTION_DIM],
    /// Transmission-time numerators: `t_comm_i = a_i / w_i`.
    a: [f64; ACTION_DIM],
    rate: [f64; ACTION_DIM],
    data: [f64; ACTION_DIM],
    comp: [f64; ACTION_DIM],
    t_max: f64,
    w_floor: f64,
}

impl Problem {
    fn new(state: &EnvState, consts: &PipelineConstants) -> Self {
        let c = pipeline::rate_coefficients(state, consts);
        let lat = pipeline::latency_unchecked(state, &Allocation::new(1.0, 1.0, 1.0), consts);
        Problem {
            u: pipeline::utility_coefficients(state, consts),
            a: [
                consts.d_sem / c[0],
                consts.d_aigc / c[1],
                consts.d_render / c[2],
            ],
            rate: c,
            data: [consts.d_sem, consts.d_aigc, consts.d_render],
            comp: [lat.t_sem_comp, lat.t_aigc_comp, lat.t_render_comp],
            t_max: consts.t_max,
            w_floor: consts.w_floor,
        }
    }

    fn utility(&self, w: &[f64; 3]) -> f64 {
        self.u[0] * w[0] + self.u[1] * w[1] + self.u[2] * w[2]
    }

    /// Same operation order as [`pipeline::latency_unchecked`], so both agree bit for bit.
    fn time(&self, w: &[f64; 3]) -> f64 {
        self.comp[0]
            + self.data[0] / (w[0] * self.rate[0])
            + self.comp[1]
            + self.data[1] / (w[1] * self.rate[1])
            + self.comp[2]
            + self.data[2] / (w[2] * self.rate[2])
    }

    fn time_grad(&self, w: &[f64; 3]) -> [f64; 3] {
        [
            -self.a[0] / (w[0] * w[0]),
            -self.a[1] / (w[1] * w[1]),
            -self.a[2] / (w[2] * w[2]),
        ]
    }
}

/// Exhaustive search over `{w_i = w_floor + spare * n_i / res, n_1 + n_2 + n_3 = res}`.
///
/// Returns the feasible point of highest utility, ties going to the
/// lexicographically smallest allocation. When nothing is feasible the point
/// with the smallest end-to-end latency is returned with `feasible = false`.
pub fn grid_search(
    state: &EnvState,
    consts: &PipelineConstants,
    resolution: usize,
) -> OracleResult {
    let res = resolution.max(2);
    let p = Problem::new(state, consts);
    let spare = consts.spare_bandwidth();
    let step = spare / res as f64;

    let mut best: Option<([f64; 3], f64)> = None;
    let mut fastest: Option<([f64; 3], f64)> = None;
    for i in 0..=res {
        let w1 = consts.w_floor + step * i as f64;
        for j in 0..=(res - i) {
            let k = res - i - j;
            let w = [
                w1,
                consts.w_floor + step * j as f64,
                consts.w_floor + step * k as f64,
            ];
            let t = p.time(&w);
            if t <= p.t_max {
                let u = p.utility(&w);
                let better = match best {
                    None => true,
                    Some((_, bu)) => u > bu + 1e-12 * bu.abs(),
                };
                if better {
                    best = Some((w, u));
                }
            } else if best.is_none() && fastest.is_none_or(|(_, ft)| t < ft) {
                fastest = Some((w, t));
            }
        }
    }

    let (w, feasible) = match (best, fastest) {
        (Some((w, _)), _) => (w, true),
        (None, Some((w, _))) => (w, false),
        (None, None) => unreachable!("grid has at least one point"),
    };
    let alloc = Allocation::from_array(w);
    OracleResult {
        alloc,
        utility_star: pipeline::utility(state, &alloc, consts),
        feasible,
        grid_resolution: res,
    }
}

/// Projects `g` onto `{sum d = 0}` over coordinates free to move, dropping
/// coordinates pinned at the floor whose component would push them below it.
fn tangent(g: &[f64; 3], w: &[f64; 3], w_floor: f64) -> [f64; 3] {
    let mut free = [true; 3];
    loop {
        let n = free.iter().filter(|f| **f).count();
        if n <= 1 {
            return [0.0; 3];
        }
        let mean = (0..3).filter(|&i| free[i]).map(|i| g[i]).sum::<f64>() / n as f64;
        let mut d = [0.0; 3];
        for i in 0..3 {
            if free[i] {
                d[i] = g[i] - mean;
            }
        }
        let mut changed = false;
        for i in 0..3 {
            if free[i] && d[i] < 0.0 && w[i] <= w_floor * (1.0 + 1e-12) {
                free[i] = false;
                changed = true;
            }
        }
        if !changed {
            return d;
        }
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn axpy(w: &[f64; 3], s: f64, d: &[f64; 3]) -> [f64; 3] {
    [w[0] + s * d[0], w[1] + s * d[1], w[2] + s * d[2]]
}

/// Largest step along `d` keeping every coordinate at or above the floor.
fn max_step(w: &[f64; 3], d: &[f64; 3], w_floor: f64) -> f64 {
    let mut s = f64::INFINITY;
    for i in 0..3 {
        if d[i] < 0.0 {
            s = s.min(((w[i] - w_floor) / -d[i]).max(0.0));
        }
    }
    s
}

/// Ascent direction for the utility, sliding along the latency boundary when
/// the time constraint is active.
fn ascent_direction(p: &Problem, w: &[f64; 3], constrained: bool) -> [f64; 3] {
    let du = tangent(&p.u, w, p.w_floor);
    if !constrained || p.time(w) < p.t_max * (1.0 - 1e-9) {
        return du;
    }
    let dh = tangent(&p.time_grad(w), w, p.w_floor);
    let hh = dot(&dh, &dh);
    let uh = dot(&du, &dh);
    if hh == 0.0 || uh <= 0.0 {
        return du;
    }
    let d = axpy(&du, -uh / hh, &dh);
    // re-apply floor pinning after removing the latency component
    tangent(&d, w, p.w_floor)
}

/// Pulls an over-budget point back inside `{t <= t_max}` along the descent
/// direction of the latency, keeping the bandwidth sum fixed.
fn restore(p: &Problem, w: &[f64; 3]) -> Option<[f64; 3]> {
    if p.time(w) <= p.t_max {
        return Some(*w);
    }
    let g = p.time_grad(w);
    let r = tangent(&[-g[0], -g[1], -g[2]], w, p.w_floor);
    let norm = dot(&r, &r).sqrt();
    if norm == 0.0 {
        return None;
    }
    let r = [r[0] / norm, r[1] / norm, r[2] / norm];
    let hi_cap = max_step(w, &r, p.w_floor);
    let mut hi = (1e-6f64).min(hi_cap);
    while p.time(&axpy(w, hi, &r)) > p.t_max {
        if hi >= hi_cap {
            return None;
        }
        hi = (hi * 2.0).min(hi_cap);
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if p.time(&axpy(w, mid, &r)) > p.t_max {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(axpy(w, hi, &r))
}

/// Refines `init` by projected-gradient ascent on the utility.
///
/// If `init` meets the time budget every accepted iterate does too; every
/// accepted iterate strictly increases the utility. Stops once the gain of an
/// iteration drops below `1e-10` or after 500 iterations.
pub fn refine(state: &EnvState, consts: &PipelineConstants, init: &Allocation) -> Allocation {
    refine_trace(state, consts, init).0
}

/// [`refine`] plus the utility after every accepted iteration (first entry is `init`'s).
pub fn refine_trace(
    state: &EnvState,
    consts: &PipelineConstants,
    init: &Allocation,
) -> (Allocation, Vec<f64>) {
    let p = Problem::new(state, consts);
    let mut w = init.to_array();
    let constrained = p.time(&w) <= p.t_max;
    let mut u_cur = p.utility(&w);
    let mut trace = vec![pipeline::utility(state, init, consts)];
    let u_scale = p.u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut step = consts.spare_bandwidth() * 0.1;

    for _ in 0..REFINE_MAX_ITERS {
        let d = ascent_direction(&p, &w, constrained);
        let dnorm = dot(&d, &d).sqrt();
        if dnorm <= 1e-12 * u_scale.max(1e-300) {
            break;
        }
        let cap = max_step(&w, &d, p.w_floor);
        let mut s = (step / dnorm).min(cap);
        let mut accepted = None;
        while s > 1e-16 * consts.w_total {
            let mut cand = axpy(&w, s, &d);
            for c in cand.iter_mut() {
                *c = c.max(p.w_floor);
            }
            let cand = if constrained {
                restore(&p, &cand)
            } else {
                Some(cand)
            };
            if let Some(c) = cand {
                let uc = p.utility(&c);
                if uc > u_cur && c.iter().all(|x| *x >= p.w_floor) {
                    accepted = Some((c, uc));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((c, uc)) = accepted else { break };
        let gain = uc - u_cur;
        w = c;
        u_cur = uc;
        trace.push(pipeline::utility(state, &Allocation::from_array(w), consts));
        if gain < REFINE_MIN_GAIN {
            break;
        }
        step = (2.0 * s * dnorm).min(consts.spare_bandwidth());
    }
    (Allocation::from_array(w), trace)
}

/// Grid search followed by refinement of feasible optima.
pub fn solve(state: &EnvState, consts: &PipelineConstants, resolution: usize) -> OracleResult {
    let mut r = grid_search(state, consts, resolution);
    if r.feasible {
        let refined = refine(state, consts, &r.alloc);
        let u = pipeline::utility(state, &refined, consts);
        if u >= r.utility_star && pipeline::feasible(state, &refined, consts) {
            r.alloc = refined;
            r.utility_star = u;
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOracle {
    pub per_state: Vec<OracleResult>,
    /// Mean `utility_star` over every state.
    pub mean_utility: f64,
    /// Mean `utility_star` over states where the time budget can be met.
    pub feasible_mean_utility: f64,
    pub infeasible_count: usize,
}

/// Solves every state; results are in input order.
pub fn batch_oracle(
    states: &[EnvState],
    consts: &PipelineConstants,
    resolution: usize,
) -> Result<BatchOracle> {
    if states.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let per_state: Vec<OracleResult> = states
        .iter()
        .map(|s| solve(s, consts, resolution))
        .collect();
    let mean_utility =
        per_state.iter().map(|r| r.utility_star).sum::<f64>() / per_state.len() as f64;
    let feasible: Vec<f64> = per_state
        .iter()
        .filter(|r| r.feasible)
        .map(|r| r.utility_star)
        .collect();
    let feasible_mean_utility = if feasible.is_empty() {
        f64::NAN
    } else {
        feasible.iter().sum::<f64>() / feasible.len() as f64
    };
    Ok(BatchOracle {
        infeasible_count: per_state.len() - feasible.len(),
        per_state,
        mean_utility,
        feasible_mean_utility,
    })
}

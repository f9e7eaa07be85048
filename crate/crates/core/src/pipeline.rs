//! Closed-form model of the three-stage pipeline (semantic extraction,
//! AIGC inference, graphics rendering) and the provider's utility.
//!
//! Every function here is pure. Rates are linear in the bandwidth handed to
//! the corresponding link, so for a fixed [`EnvState`] the utility is a
//! linear function over the bandwidth simplex while the end-to-end latency
//! is a convex sum of `D / (c * w)` terms.

use crate::error::{Error, Result};

/// Number of scalar variables describing one network/compute snapshot.
pub const STATE_DIM: usize = 10;
/// Number of bandwidth shares chosen per decision.
pub const ACTION_DIM: usize = 3;

/// Field names in vector order; used for CSV headers and config keys.
pub const STATE_FIELDS: [&str; STATE_DIM] = [
    "h_sem",
    "sigma_a",
    "sigma_m",
    "gain_am",
    "power_am",
    "gain_ms",
    "power_ms",
    "symbols_avg",
    "compute_aigc",
    "compute_render",
];

/// One sampled snapshot of the network and compute conditions.
///
/// Vector order is `[h_sem, sigma_a, sigma_m, gain_am, power_am, gain_ms,
/// power_ms, symbols_avg, compute_aigc, compute_render]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    /// Approximate semantic entropy of the extracted payload.
    pub h_sem: f64,
    /// Noise amplitude on the inference -> rendering link. May be negative.
    pub sigma_a: f64,
    /// Noise amplitude on the rendering -> user link. May be negative.
    pub sigma_m: f64,
    pub gain_am: f64,
    pub power_am: f64,
    pub gain_ms: f64,
    pub power_ms: f64,
    /// Average transmitted symbols per semantic unit.
    pub symbols_avg: f64,
    /// Compute available to AIGC inference.
    pub compute_aigc: f64,
    /// Compute available to rendering.
    pub compute_render: f64,
}

impl EnvState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.h_sem,
            self.sigma_a,
            self.sigma_m,
            self.gain_am,
            self.power_am,
            self.gain_ms,
            self.power_ms,
            self.symbols_avg,
            self.compute_aigc,
            self.compute_render,
        ]
    }

    /// Builds a state from vector order without validating it.
    pub fn from_array(v: [f64; STATE_DIM]) -> Self {
        EnvState {
            h_sem: v[0],
            sigma_a: v[1],
            sigma_m: v[2],
            gain_am: v[3],
            power_am: v[4],
            gain_ms: v[5],
            power_ms: v[6],
            symbols_avg: v[7],
            compute_aigc: v[8],
            compute_render: v[9],
        }
    }

    /// Builds and validates a state from a slice in vector order.
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; STATE_DIM] = v.try_into().map_err(|_| Error::shape(STATE_DIM, v.len()))?;
        let s = Self::from_array(arr);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in STATE_FIELDS.iter().zip(self.to_array()) {
            if !v.is_finite() {
                return Err(Error::Invalid(format!("state field {name} is not finite")));
            }
        }
        let positive = [
            ("h_sem", self.h_sem),
            ("symbols_avg", self.symbols_avg),
            ("compute_aigc", self.compute_aigc),
            ("compute_render", self.compute_render),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::Invalid(format!(
                    "state field {name} must be > 0, got {v}"
                )));
            }
        }
        let nonneg = [
            ("gain_am", self.gain_am),
            ("power_am", self.power_am),
            ("gain_ms", self.gain_ms),
            ("power_ms", self.power_ms),
        ];
        for (name, v) in nonneg {
            if v < 0.0 {
                return Err(Error::Invalid(format!(
                    "state field {name} must be >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Task sizes, prices, budgets and numerical guards that stay fixed across states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConstants {
    /// Compute required by semantic extraction.
    pub z_sem: f64,
    /// Compute available on the edge device.
    pub c_sem: f64,
    pub z_aigc: f64,
    pub z_render: f64,
    /// Semantic payload sent to the inference stage.
    pub d_sem: f64,
    /// Generated content sent to the rendering stage.
    pub d_aigc: f64,
    /// Rendering feedback sent back to the user.
    pub d_render: f64,
    pub price_sem: f64,
    pub price_aigc: f64,
    pub price_render: f64,
    pub w_total: f64,
    pub t_max: f64,
    pub penalty_lambda: f64,
    pub sigma2_floor: f64,
    pub k_floor: f64,
    pub w_floor: f64,
}

impl Default for PipelineConstants {
    fn default() -> Self {
        PipelineConstants {
            z_sem: 1.0,
            c_sem: 2.0,
            z_aigc: 5.0,
            z_render: 3.0,
            d_sem: 1.0,
            d_aigc: 2.0,
            d_render: 1.0,
            price_sem: 1.0,
            price_aigc: 1.0,
            price_render: 1.0,
            w_total: 10.0,
            t_max: 5.0,
            penalty_lambda: 10.0,
            sigma2_floor: 1e-3,
            k_floor: 0.05,
            w_floor: 0.1,
        }
    }
}

impl PipelineConstants {
    /// `(name, value)` pairs in a fixed order; shared by config I/O and validation.
    pub fn fields(&self) -> [(&'static str, f64); 16] {
        [
            ("z_sem", self.z_sem),
            ("c_sem", self.c_sem),
            ("z_aigc", self.z_aigc),
            ("z_render", self.z_render),
            ("d_sem", self.d_sem),
            ("d_aigc", self.d_aigc),
            ("d_render", self.d_render),
            ("price_sem", self.price_sem),
            ("price_aigc", self.price_aigc),
            ("price_render", self.price_render),
            ("w_total", self.w_total),
            ("t_max", self.t_max),
            ("penalty_lambda", self.penalty_lambda),
            ("sigma2_floor", self.sigma2_floor),
            ("k_floor", self.k_floor),
            ("w_floor", self.w_floor),
        ]
    }

    pub fn field_mut(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "z_sem" => &mut self.z_sem,
            "c_sem" => &mut self.c_sem,
            "z_aigc" => &mut self.z_aigc,
            "z_render" => &mut self.z_render,
            "d_sem" => &mut self.d_sem,
            "d_aigc" => &mut self.d_aigc,
            "d_render" => &mut self.d_render,
            "price_sem" => &mut self.price_sem,
            "price_aigc" => &mut self.price_aigc,
            "price_render" => &mut self.price_render,
            "w_total" => &mut self.w_total,
            "t_max" => &mut self.t_max,
            "penalty_lambda" => &mut self.penalty_lambda,
            "sigma2_floor" => &mut self.sigma2_floor,
            "k_floor" => &mut self.k_floor,
            "w_floor" => &mut self.w_floor,
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.fields() {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Validation(format!(
                    "consts.{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if 3.0 * self.w_floor >= self.w_total {
            return Err(Error::Validation(format!(
                "3 * consts.w_floor ({}) must be below consts.w_total ({})",
                3.0 * self.w_floor,
                self.w_total
            )));
        }
        Ok(())
    }

    /// Bandwidth left once every link has its floor.
    pub fn spare_bandwidth(&self) -> f64 {
        self.w_total - 3.0 * self.w_floor
    }
}

/// Bandwidth handed to each of the three links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    /// Semantic module -> inference module.
    pub w_sem: f64,
    /// Inference module -> rendering module.
    pub w_aigc: f64,
    /// Rendering module -> user.
    pub w_render: f64,
}

impl Allocation {
    pub fn new(w_sem: f64, w_aigc: f64, w_render: f64) -> Self {
        Allocation {
            w_sem,
            w_aigc,
            w_render,
        }
    }

    pub fn to_array(&self) -> [f64; ACTION_DIM] {
        [self.w_sem, self.w_aigc, self.w_render]
    }

    pub fn from_array(w: [f64; ACTION_DIM]) -> Self {
        Allocation::new(w[0], w[1], w[2])
    }

    pub fn total(&self) -> f64 {
        self.w_sem + self.w_aigc + self.w_render
    }

    /// Equal split of the whole budget.
    pub fn uniform(consts: &PipelineConstants) -> Self {
        let w = consts.w_total / 3.0;
        Allocation::new(w, w, w)
    }

    /// True when every share is at least `w_floor` and the total fits the budget.
    pub fn within_budget(&self, consts: &PipelineConstants) -> bool {
        self.to_array().iter().all(|&w| w >= consts.w_floor)
            && self.total() <= consts.w_total * (1.0 + BUDGET_RTOL)
    }
}

/// Relative slack on the bandwidth budget absorbing rounding in the action mapping.
pub const BUDGET_RTOL: f64 = 1e-12;

/// The six latency terms of one pass through the pipeline, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyBreakdown {
    pub t_sem_comp: f64,
    pub t_sem_comm: f64,
    pub t_aigc_comp: f64,
    pub t_aigc_comm: f64,
    pub t_render_comp: f64,
    pub t_render_comm: f64,
    pub t_total: f64,
}

impl LatencyBreakdown {
    pub fn terms(&self) -> [f64; 6] {
        [
            self.t_sem_comp,
            self.t_sem_comm,
            self.t_aigc_comp,
            self.t_aigc_comm,
            self.t_render_comp,
            self.t_render_comm,
        ]
    }
}

/// Semantic units delivered per second over the device -> server link.
pub fn semantic_rate(state: &EnvState, w_sem: f64, k_floor: f64) -> f64 {
    w_sem * state.h_sem / state.symbols_avg.max(k_floor)
}

/// Shannon capacity `w * log2(1 + gain * power / max(sigma^2, floor))`.
pub fn shannon_rate(w: f64, gain: f64, power: f64, sigma: f64, sigma2_floor: f64) -> f64 {
    w * spectral_efficiency(gain, power, sigma, sigma2_floor)
}

/// Capacity per unit bandwidth. `ln_1p` keeps tiny SNRs from rounding to zero.
pub fn spectral_efficiency(gain: f64, power: f64, sigma: f64, sigma2_floor: f64) -> f64 {
    let snr = gain * power / (sigma * sigma).max(sigma2_floor);
    snr.ln_1p() / std::f64::consts::LN_2
}

/// Rate per unit bandwidth on each link, `[semantic, aigc, render]`.
pub fn rate_coefficients(state: &EnvState, consts: &PipelineConstants) -> [f64; ACTION_DIM] {
    [
        semantic_rate(state, 1.0, consts.k_floor),
        spectral_efficiency(
            state.gain_am,
            state.power_am,
            state.sigma_a,
            consts.sigma2_floor,
        ),
        spectral_efficiency(
            state.gain_ms,
            state.power_ms,
            state.sigma_m,
            consts.sigma2_floor,
        ),
    ]
}

/// Marginal utility per unit bandwidth on each link (price times rate coefficient).
pub fn utility_coefficients(state: &EnvState, consts: &PipelineConstants) -> [f64; ACTION_DIM] {
    let c = rate_coefficients(state, consts);
    [
        consts.price_sem * c[0],
        consts.price_aigc * c[1],
        consts.price_render * c[2],
    ]
}

/// Link rates `[R_sem, R_aigc, R_render]` for an allocation.
pub fn link_rates(
    state: &EnvState,
    alloc: &Allocation,
    consts: &PipelineConstants,
) -> [f64; ACTION_DIM] {
    let c = rate_coefficients(state, consts);
    [
        alloc.w_sem * c[0],
        alloc.w_aigc * c[1],
        alloc.w_render * c[2],
    ]
}

/// Latency terms; a zero-rate link yields an infinite transmission time.
pub fn latency_unchecked(
    state: &EnvState,
    alloc: &Allocation,
    consts: &PipelineConstants,
) -> LatencyBreakdown {
    let r = link_rates(state, alloc, consts);
    let t_sem_comp = consts.z_sem / consts.c_sem;
    let t_sem_comm = consts.d_sem / r[0];
    let t_aigc_comp = consts.z_aigc / state.compute_aigc;
    let t_aigc_comm = consts.d_aigc / r[1];
    let t_render_comp = consts.z_render / state.compute_render;
    let t_render_comm = consts.d_render / r[2];
    LatencyBreakdown {
        t_sem_comp,
        t_sem_comm,
        t_aigc_comp,
        t_aigc_comm,
        t_render_comp,
        t_render_comm,
        t_total: t_sem_comp
            + t_sem_comm
            + t_aigc_comp
            + t_aigc_comm
            + t_render_comp
            + t_render_comm,
    }
}

/// Latency of every stage and link for one allocation.
///
/// Fails with [`Error::DegenerateLink`] when a link carries no traffic at all,
/// which only happens for allocations that bypass the bandwidth floor or for
/// states with zero gain or power.
pub fn latency_breakdown(
    state: &EnvState,
    alloc: &Allocation,
    consts: &PipelineConstants,
) -> Result<LatencyBreakdown> {
    let r = link_rates(state, alloc, consts);
    for (rate, name) in r.iter().zip(["semantic", "aigc", "render"]) {
        if *rate == 0.0 {
            return Err(Error::DegenerateLink(name));
        }
    }
    Ok(latency_unchecked(state, alloc, consts))
}

/// Provider utility: price-weighted sum of the three link rates.
pub fn utility(state: &EnvState, alloc: &Allocation, consts: &PipelineConstants) -> f64 {
    let r = link_rates(state, alloc, consts);
    consts.price_sem * r[0] + consts.price_aigc * r[1] + consts.price_render * r[2]
}

/// Time budget, bandwidth budget and per-link floors all hold.
pub fn feasible(state: &EnvState, alloc: &Allocation, consts: &PipelineConstants) -> bool {
    alloc.within_budget(consts) && latency_unchecked(state, alloc, consts).t_total <= consts.t_max
}

/// Utility minus a linear penalty on time overrun.
///
/// The bandwidth budget is not penalized here; allocations produced by the
/// action mapping always satisfy it.
pub fn reward(state: &EnvState, alloc: &Allocation, consts: &PipelineConstants) -> f64 {
    let u = utility(state, alloc, consts);
    if consts.penalty_lambda == 0.0 {
        return u;
    }
    let overrun = (latency_unchecked(state, alloc, consts).t_total - consts.t_max).max(0.0);
    u - consts.penalty_lambda * overrun
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rtol: f64) -> bool {
        (a - b).abs() <= rtol * a.abs().max(b.abs()).max(1e-300)
    }

    /// H=1.5, K=0.5 and unit SNR on both radio links.
    fn example_state() -> EnvState {
        EnvState {
            h_sem: 1.5,
            sigma_a: 1.0,
            sigma_m: 1.0,
            gain_am: 1.0,
            power_am: 1.0,
            gain_ms: 0.5,
            power_ms: 2.0,
            symbols_avg: 0.5,
            compute_aigc: 10.0,
            compute_render: 20.0,
        }
    }

    #[test]
    fn semantic_rate_examples() {
        let mut s = example_state();
        assert_eq!(semantic_rate(&s, 4.0, 0.05), 12.0);
        s.h_sem = 1.0;
        s.symbols_avg = 1.0;
        assert_eq!(semantic_rate(&s, 0.0, 0.05), 0.0);
        s.h_sem = 2.0;
        s.symbols_avg = 0.001;
        assert!(close(semantic_rate(&s, 1.0, 0.05), 40.0, 1e-12));
    }

    #[test]
    fn shannon_examples() {
        assert!(close(
            shannon_rate(2.0, 1.0, 3.0, 3f64.sqrt(), 1e-3),
            2.0,
            1e-9
        ));
        assert_eq!(shannon_rate(5.0, 0.0, 4.0, 1.0, 1e-3), 0.0);
        assert!((shannon_rate(1.0, 0.5, 4.0, 1.0, 1e-3) - 1.5849625).abs() < 1e-7);
        assert!(close(
            shannon_rate(1.0, 0.5, 4.0, 1.0, 1e-3),
            3f64.log2(),
            1e-12
        ));
    }

    #[test]
    fn noise_floor_bounds_snr() {
        let tiny = shannon_rate(1.0, 1.0, 1.0, 1e-9, 1e-3);
        assert!(close(tiny, 1001f64.log2(), 1e-12));
    }

    #[test]
    fn full_latency_example() {
        let s = example_state();
        let a = Allocation::new(4.0, 3.0, 3.0);
        let c = PipelineConstants::default();
        let lat = latency_breakdown(&s, &a, &c).unwrap();
        assert!(close(lat.t_sem_comp, 0.5, 1e-12));
        assert!(close(lat.t_sem_comm, 1.0 / 12.0, 1e-12));
        assert!(close(lat.t_aigc_comp, 0.5, 1e-12));
        assert!(close(lat.t_aigc_comm, 2.0 / 3.0, 1e-12));
        assert!(close(lat.t_render_comp, 0.15, 1e-12));
        assert!(close(lat.t_render_comm, 1.0 / 3.0, 1e-12));
        let expect = 0.5 + 1.0 / 12.0 + 0.5 + 2.0 / 3.0 + 0.15 + 1.0 / 3.0;
        assert!(close(lat.t_total, expect, 1e-12));
        assert_eq!(lat.t_total, lat.terms().iter().sum::<f64>());
    }

    #[test]
    fn zero_bandwidth_link_is_degenerate() {
        let s = example_state();
        let c = PipelineConstants::default();
        let err = latency_breakdown(&s, &Allocation::new(5.0, 0.0, 5.0), &c).unwrap_err();
        assert!(matches!(err, Error::DegenerateLink("aigc")));
    }

    #[test]
    fn utility_feasibility_reward() {
        let s = example_state();
        let a = Allocation::new(4.0, 3.0, 3.0);
        let mut c = PipelineConstants::default();
        assert!(close(utility(&s, &a, &c), 18.0, 1e-12));
        assert_eq!(utility(&s, &Allocation::new(0.0, 0.0, 0.0), &c), 0.0);
        assert!(feasible(&s, &a, &c));
        assert!(close(reward(&s, &a, &c), 18.0, 1e-12));

        let mut doubled = c;
        doubled.price_sem *= 2.0;
        doubled.price_aigc *= 2.0;
        doubled.price_render *= 2.0;
        assert!(close(utility(&s, &a, &doubled), 36.0, 1e-12));

        c.t_max = 2.0;
        assert!(!feasible(&s, &a, &c));

        c.t_max = 5.0;
        let over = Allocation::new(4.0, 3.0, 3.0 + 1e-9);
        assert!(!feasible(&s, &over, &c));
    }

    #[test]
    fn penalty_arithmetic() {
        let s = example_state();
        let a = Allocation::new(4.0, 3.0, 3.0);
        let mut c = PipelineConstants::default();
        let t = latency_unchecked(&s, &a, &c).t_total;
        c.t_max = t - 1.0;
        assert!(close(reward(&s, &a, &c), 8.0, 1e-12));
        c.penalty_lambda = 0.0;
        assert_eq!(reward(&s, &a, &c), utility(&s, &a, &c));
    }

    #[test]
    fn constants_validation() {
        assert!(PipelineConstants::default().validate().is_ok());
        let c = PipelineConstants {
            t_max: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = PipelineConstants {
            w_floor: 4.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn out_of_support_state_validates() {
        let v = [1.17, 0.66, 1.97, 0.30, 0.24, 4.76, 4.46, 0.91, 8.03, 15.28];
        let s = EnvState::from_slice(&v).unwrap();
        assert_eq!(s.to_array(), v);
        assert!(EnvState::from_slice(&v[..9]).is_err());
        let mut bad = v;
        bad[0] = 0.0;
        assert!(EnvState::from_slice(&bad).is_err());
    }
}

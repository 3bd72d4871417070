//! Counterterm envelopes: thresholds k_max/k̄_max and ε_c, the per-k
//! envelope F(k), regime classification for the constant and linear
//! counterterms, combinatorial weights, and the (γ, g, σ) extension.
//!
//! The constants a, M, A₀, Ā₀ are existential in the underlying estimates
//! and enter as configuration; everything asserted here is an envelope
//! shape or a crossover location, which are covariant under shifts of a.

use fphi3_core::params::{ratio_to_f64, ModelParams};
use fphi3_core::tree::{enumerate_full, wedderburn_etherington, TreeError};

pub fn rho_gap(params: &ModelParams) -> f64 {
    ratio_to_f64(params.rho - params.rho_c())
}

/// k_max = (d − ρ)/(3(ρ − ρ_c)): largest k with divergent full family.
pub fn k_max(params: &ModelParams) -> f64 {
    (params.d as f64 - params.rho_f64()) / (3.0 * rho_gap(params))
}

/// k̄_max = (d − 2ρ)/(3(ρ − ρ_c)); negative means the family is empty.
pub fn k_bar_max(params: &ModelParams) -> f64 {
    (params.d as f64 - 2.0 * params.rho_f64()) / (3.0 * rho_gap(params))
}

/// Degree of the full-family diagram with p = 2k+2 leaves, as
/// α_k = −(d−ρ)(1 − k/k_max).
pub fn alpha_k(k: f64, params: &ModelParams) -> f64 {
    -(params.d as f64 - params.rho_f64()) * (1.0 - k / k_max(params))
}

/// Degree of the almost-full-family diagram, ᾱ_k = −(d−2ρ)(1 − k/k̄_max).
pub fn alpha_bar_k(k: f64, params: &ModelParams) -> f64 {
    -(params.d as f64 - 2.0 * params.rho_f64()) * (1.0 - k / k_bar_max(params))
}

/// log ε_c(ρ, a, k) = −(ρ−ρ_c)^{-1}[log k + a − log(k+1)/(2k)]; the log
/// form survives the superexponential underflow near ρ_c.
pub fn log_eps_c_at(params: &ModelParams, a: f64, k: f64) -> Option<f64> {
    if k <= 0.0 {
        return None;
    }
    let bracket = k.ln() + a - (k + 1.0).ln() / (2.0 * k);
    Some(-bracket / rho_gap(params))
}

/// ε_c(ρ, a, k) = exp{−(ρ−ρ_c)^{-1}[log k + a − log(k+1)/(2k)]}.
pub fn eps_c_at(params: &ModelParams, a: f64, k: f64) -> Option<f64> {
    log_eps_c_at(params, a, k).map(f64::exp)
}

/// The constant-counterterm threshold ε_c(ρ, a) at k = k_max.
pub fn eps_c(params: &ModelParams, a: f64) -> Option<f64> {
    eps_c_at(params, a, k_max(params))
}

/// The linear-counterterm threshold ε̄_c(ρ, a) at k = k̄_max.
pub fn eps_bar_c(params: &ModelParams, a: f64) -> Option<f64> {
    eps_c_at(params, a, k_bar_max(params))
}

/// b_ε = (ρ − ρ_c) log(ε^{-1}).
pub fn b_eps(eps: f64, params: &ModelParams) -> f64 {
    rho_gap(params) * (1.0 / eps).ln()
}

/// F(k) = k log k + (a − b_ε)k + b_ε k_max − ½ log(k+1), with k log k = 0
/// at k = 0.
pub fn envelope_f(k: f64, eps: f64, a: f64, params: &ModelParams) -> f64 {
    let klogk = if k == 0.0 { 0.0 } else { k * k.ln() };
    let b = b_eps(eps, params);
    klogk + (a - b) * k + b * k_max(params) - 0.5 * (k + 1.0).ln()
}

/// Almost-full analogue with k̄_max in the constant term.
pub fn envelope_f_bar(k: f64, eps: f64, a: f64, params: &ModelParams) -> f64 {
    let klogk = if k == 0.0 { 0.0 } else { k * k.ln() };
    let b = b_eps(eps, params);
    klogk + (a - b) * k + b * k_bar_max(params) - 0.5 * (k + 1.0).ln()
}

/// H = (F(k_max) − F(0))/k_max; its sign flips exactly at ε = ε_c.
pub fn h_value(eps: f64, a: f64, params: &ModelParams) -> f64 {
    let km = k_max(params);
    (envelope_f(km, eps, a, params) - envelope_f(0.0, eps, a, params)) / km
}

fn double_factorial(n: i64) -> f64 {
    let mut out = 1.0;
    let mut m = n;
    while m > 1 {
        out *= m as f64;
        m -= 2;
    }
    out
}

/// r(k) = k_max!!(2k−k_max)!!/(2k+1)!! for odd integer k_max with
/// k_max + 1 ≤ 2k; absent otherwise.
pub fn r_k(k: u32, kmax: u32) -> Option<f64> {
    if kmax % 2 == 0 || 2 * k < kmax + 1 {
        return None;
    }
    let num = double_factorial(kmax as i64) * double_factorial(2 * k as i64 - kmax as i64);
    let den = double_factorial(2 * k as i64 + 1);
    Some(num / den)
}

/// Fitted constant M(k_max) = max_k r(k)·2^{2k−k_max} over the admissible
/// range k_max+1 ≤ 2k ≤ 2k_max.
pub fn r_fit_m(kmax: u32) -> Option<f64> {
    if kmax % 2 == 0 || kmax < 3 {
        return None;
    }
    let mut m: f64 = 0.0;
    let mut k = kmax.div_ceil(2);
    while k <= kmax {
        if let Some(r) = r_k(k, kmax) {
            m = m.max(r * 2f64.powi((2 * k - kmax) as i32));
        }
        k += 1;
    }
    Some(m)
}

/// Combinatorial weights entering the per-k sum.
#[derive(Debug, Clone)]
pub struct CombinatorialWeight {
    pub k: usize,
    /// (2k+1)!!, the number of pairings of 2k+2 leaves.
    pub pairings: u128,
    /// (2k−1)!, the bound on the number of Hepp trees (None at k = 0).
    pub hepp_bound: Option<u128>,
    /// 2^k, the bound on the number of safe forests.
    pub safe_forest_bound: u128,
    /// Σ_{τ full, 2k+2 leaves} 2^{n_inner − n_sym}, exact when within the
    /// enumeration cap.
    pub tree_sum: Option<u128>,
    /// The a-priori per-tree bound 2^{2k+1} (n_inner = 2k+1, n_sym ≥ 0);
    /// when the exact sum is capped, WE(2k+2)·2^{2k+1} bounds it.
    pub tree_sum_bound: u128,
    pub wedderburn_etherington: u128,
}

pub fn combinatorial_weight(
    k: usize,
    cap: usize,
) -> Result<CombinatorialWeight, TreeError> {
    let pairings = (0..=k as u128).skip(1).fold(1u128, |acc, i| acc * (2 * i + 1));
    let hepp_bound = if k == 0 {
        None
    } else {
        Some((1..=(2 * k as u128 - 1)).product())
    };
    let tree_sum = if k <= cap {
        let mut sum = 0u128;
        for tree in enumerate_full(k, cap)? {
            sum += 1u128 << (tree.n_inner() - tree.n_sym());
        }
        Some(sum)
    } else {
        None
    };
    Ok(CombinatorialWeight {
        k,
        pairings,
        hepp_bound,
        safe_forest_bound: 1u128 << k,
        tree_sum,
        tree_sum_bound: 1u128 << (2 * k + 1),
        wedderburn_etherington: wedderburn_etherington(2 * k + 2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    PowerLaw,
    Logarithmic,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::PowerLaw => "power-law",
            Regime::Logarithmic => "logarithmic",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CountertermBound {
    pub value: f64,
    pub regime: Regime,
    /// Relative-error bound of the power-law envelope, when applicable.
    pub relative_error: Option<f64>,
    /// True when the divergent family is empty (no bound needed).
    pub empty_family: bool,
}

/// Configuration constants of the envelope bounds.
#[derive(Debug, Clone, Copy)]
pub struct BoundConfig {
    pub a: f64,
    pub m: f64,
    pub a0: f64,
    pub abar0: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            a: 0.0,
            m: 1.0,
            a0: 1.0,
            abar0: 1.0,
        }
    }
}

fn bound_generic(
    eps: f64,
    cfg: &BoundConfig,
    params: &ModelParams,
    exponent: f64,
    kmax: f64,
    eps_threshold: Option<f64>,
    leading: f64,
) -> CountertermBound {
    assert!(eps > 0.0 && eps < 1.0, "eps must lie in (0,1)");
    if exponent <= 0.0 {
        // the whole family is convergent
        return CountertermBound {
            value: 0.0,
            regime: Regime::PowerLaw,
            relative_error: None,
            empty_family: true,
        };
    }
    let gap = rho_gap(params);
    let ec = eps_threshold.unwrap_or(f64::INFINITY);
    let _ = kmax;
    if eps >= ec {
        let value = cfg.m
            * ec.powf(-exponent)
            * ((1.0 / eps).ln() + (ec / eps).powf(3.0 * gap) / gap);
        CountertermBound {
            value,
            regime: Regime::Logarithmic,
            relative_error: None,
            empty_family: false,
        }
    } else {
        let rel = cfg.m / gap * (eps / ec).powf(3.0 * gap);
        CountertermBound {
            value: leading.abs() * eps.powf(-exponent) * (1.0 + rel),
            regime: Regime::PowerLaw,
            relative_error: Some(rel),
            empty_family: false,
        }
    }
}

/// Upper bound on |C₀(ε,ρ)| in both regimes; the regime tag records which
/// of e^{3F(0)} and e^{3F(k_max)} dominates.
pub fn bound_c0(eps: f64, cfg: &BoundConfig, params: &ModelParams) -> CountertermBound {
    bound_generic(
        eps,
        cfg,
        params,
        params.d as f64 - params.rho_f64(),
        k_max(params),
        eps_c(params, cfg.a),
        cfg.a0,
    )
}

/// Upper bound on |C₁(ε,ρ)|; the almost-full family may be empty.
pub fn bound_c1(eps: f64, cfg: &BoundConfig, params: &ModelParams) -> CountertermBound {
    bound_generic(
        eps,
        cfg,
        params,
        params.d as f64 - 2.0 * params.rho_f64(),
        k_bar_max(params),
        eps_bar_c(params, cfg.a),
        cfg.abar0,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeFamily {
    Full,
    AlmostFull,
}

/// (γ, g, σ) prefactor of the p = 2k+2 family: g^{p−1}σ^p/γ^{3p/2−2} for
/// full trees, g^pσ^p/γ^{3p/2−1} for almost-full ones.
pub fn parameter_prefactor(
    k: usize,
    gamma_c: f64,
    g_c: f64,
    sigma_c: f64,
    family: TreeFamily,
) -> f64 {
    let p = (2 * k + 2) as f64;
    match family {
        TreeFamily::Full => g_c.powf(p - 1.0) * sigma_c.powf(p) / gamma_c.powf(1.5 * p - 2.0),
        TreeFamily::AlmostFull => g_c.powf(p) * sigma_c.powf(p) / gamma_c.powf(1.5 * p - 1.0),
    }
}

/// Scaling self-test: substituting γ = λ^{β−ρ}, g = λ^{β−α}, σ =
/// λ^{α+β/2−d/2} must turn the prefactor into λ^{α+β}·λ^{(3/2)p(ρ−ρ_c)−2ρ}
/// (full) or λ^{β}·λ^{(3/2)p(ρ−ρ_c)−ρ} (almost-full). Returns the relative
/// mismatch.
pub fn scaling_identity_error(
    k: usize,
    alpha: f64,
    beta: f64,
    lambda: f64,
    params: &ModelParams,
    family: TreeFamily,
) -> f64 {
    let d = params.d as f64;
    let rho = params.rho_f64();
    let rho_c = d / 3.0;
    let p = (2 * k + 2) as f64;
    let gamma_c = lambda.powf(beta - rho);
    let g_c = lambda.powf(beta - alpha);
    let sigma_c = lambda.powf(alpha + beta / 2.0 - d / 2.0);
    let lhs = parameter_prefactor(k, gamma_c, g_c, sigma_c, family);
    let rhs = match family {
        TreeFamily::Full => lambda.powf(alpha + beta) * lambda.powf(1.5 * p * (rho - rho_c) - 2.0 * rho),
        TreeFamily::AlmostFull => lambda.powf(beta) * lambda.powf(1.5 * p * (rho - rho_c) - rho),
    };
    ((lhs - rhs) / rhs).abs()
}

/// One row of the regime map over a (ρ, ε) grid.
#[derive(Debug, Clone)]
pub struct RegimeRow {
    pub rho: f64,
    pub rho_gap: f64,
    pub eps: f64,
    pub eps_c: f64,
    pub eps_bar_c: f64,
    pub regime_c0: Regime,
    pub regime_c1: Regime,
    pub bound_c0: f64,
    pub bound_c1: f64,
}

pub fn regime_map(
    rhos: &[ModelParams],
    eps_grid: &[f64],
    cfg: &BoundConfig,
) -> Vec<RegimeRow> {
    let mut rows = Vec::new();
    for params in rhos {
        let ec = eps_c(params, cfg.a).unwrap_or(f64::NAN);
        let ebc = eps_bar_c(params, cfg.a).unwrap_or(f64::NAN);
        for &eps in eps_grid {
            let b0 = bound_c0(eps, cfg, params);
            let b1 = bound_c1(eps, cfg, params);
            rows.push(RegimeRow {
                rho: params.rho_f64(),
                rho_gap: rho_gap(params),
                eps,
                eps_c: ec,
                eps_bar_c: ebc,
                regime_c0: b0.regime,
                regime_c1: b1.regime,
                bound_c0: b0.value,
                bound_c1: b1.value,
            });
        }
    }
    rows
}

/// Closed form of the truncated geometric sum bound used in the envelope
/// estimates: Σ_{k=k₀}^{N−1} e^{βk} is bounded by the dominant endpoint
/// times min(N−k₀, 1/|β|).
pub fn geometric_sum_bound(beta: f64, n: usize, k0: usize) -> f64 {
    let len = (n - k0) as f64;
    if beta > 0.0 {
        len.min(1.0 / beta) * (beta * (n as f64 - 1.0)).exp()
    } else if beta == 0.0 {
        len
    } else {
        len.min(1.0 / beta.abs()) * (beta * k0 as f64).exp()
    }
}

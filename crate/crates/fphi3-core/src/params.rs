//! Model parameters of the fractional Phi^3 equation.

use core::fmt;

use num_rational::Ratio;

/// Exact scalar used for all degree arithmetic.
pub type Rational = Ratio<i64>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamError {
    /// d must lie in 1..=5 (ρ_c < 2 fails otherwise).
    DimensionOutOfRange(u32),
    /// ρ must satisfy d/3 < ρ ≤ 2 (strict local subcriticality).
    RhoOutOfRange(Rational),
    /// κ must be ≥ 0.
    NegativeKappa,
}

impl fmt::Display for ParamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamError::DimensionOutOfRange(d) => write!(f, "dimension {d} outside 1..=5"),
            ParamError::RhoOutOfRange(r) => write!(f, "rho {r} outside (d/3, 2]"),
            ParamError::NegativeKappa => write!(f, "kappa must be nonnegative"),
        }
    }
}

/// Parameters (d, ρ, κ) plus the (γ, g, σ) equation coefficients.
///
/// ρ is kept as an exact rational so that degree signs (divergent /
/// marginal / convergent) are decided without floating point. κ only
/// shifts the float-valued degree; every enumeration threshold is
/// evaluated at κ = 0 with marginal degrees flagged separately.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub d: u32,
    pub rho: Rational,
    pub kappa: f64,
    pub gamma_c: f64,
    pub g_c: f64,
    pub sigma_c: f64,
}

impl ModelParams {
    pub fn new(d: u32, rho: Rational) -> Result<Self, ParamError> {
        Self::with_kappa(d, rho, 0.0)
    }

    pub fn with_kappa(d: u32, rho: Rational, kappa: f64) -> Result<Self, ParamError> {
        if !(1..=5).contains(&d) {
            return Err(ParamError::DimensionOutOfRange(d));
        }
        let rho_c = Ratio::new(d as i64, 3);
        if rho <= rho_c || rho > Ratio::from_integer(2) {
            return Err(ParamError::RhoOutOfRange(rho));
        }
        if kappa < 0.0 {
            return Err(ParamError::NegativeKappa);
        }
        Ok(ModelParams {
            d,
            rho,
            kappa,
            gamma_c: 1.0,
            g_c: 1.0,
            sigma_c: 1.0,
        })
    }

    /// Critical exponent ρ_c = d/3.
    pub fn rho_c(&self) -> Rational {
        Ratio::new(self.d as i64, 3)
    }

    pub fn rho_f64(&self) -> f64 {
        ratio_to_f64(self.rho)
    }

    /// Degree evaluation at this parameter set (κ = 0).
    pub fn scale(&self) -> DegreeScale {
        DegreeScale::raw(self.d, self.rho)
    }

    /// Degree evaluation in units of d/3 at ρ → ρ_c.
    pub fn critical_scale(&self) -> DegreeScale {
        DegreeScale::critical_units(self.d)
    }
}

/// Where and in which unit degrees are evaluated.
///
/// Degrees are affine in (d, ρ); a scale fixes both and divides by a unit.
/// `raw` uses the model's (d, ρ) with unit 1. `critical_units` substitutes
/// ρ = ρ_c = d/3 and divides by d/3, the counting convention in which
/// K/GKeps/KGK edges weigh −3/−2/−1 and integration vertices +4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegreeScale {
    pub d: Rational,
    pub rho: Rational,
    unit: Rational,
}

impl DegreeScale {
    pub fn raw(d: u32, rho: Rational) -> Self {
        DegreeScale {
            d: Ratio::from_integer(d as i64),
            rho,
            unit: Ratio::from_integer(1),
        }
    }

    pub fn critical_units(d: u32) -> Self {
        let rho_c = Ratio::new(d as i64, 3);
        DegreeScale {
            d: Ratio::from_integer(d as i64),
            rho: rho_c,
            unit: rho_c,
        }
    }

    /// Evaluates `per_d·d + per_rho·ρ + plain` in this scale's unit.
    pub fn eval(&self, per_d: Rational, per_rho: Rational, plain: Rational) -> Rational {
        (per_d * self.d + per_rho * self.rho + plain) / self.unit
    }

    /// ρ + d, the scaled dimension (weight of one integration vertex).
    pub fn vertex_weight(&self) -> Rational {
        self.eval(
            Ratio::from_integer(1),
            Ratio::from_integer(1),
            Ratio::from_integer(0),
        )
    }
}

pub fn ratio_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Parses a decimal string ("1.05", "6/5", "2") into an exact rational.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().ok()?;
        let d: i64 = d.trim().parse().ok()?;
        if d == 0 {
            return None;
        }
        return Some(Ratio::new(n, d));
    }
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1i64, rest),
        None => (1i64, s),
    };
    if let Some((int, frac)) = body.split_once('.') {
        let int: i64 = if int.is_empty() { 0 } else { int.parse().ok()? };
        if frac.is_empty() {
            return Some(Ratio::from_integer(sign * int));
        }
        if frac.len() > 12 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let num: i64 = frac.parse().ok()?;
        let den = 10i64.checked_pow(frac.len() as u32)?;
        Some(Ratio::from_integer(sign) * (Ratio::from_integer(int) + Ratio::new(num, den)))
    } else {
        let int: i64 = body.parse().ok()?;
        Some(Ratio::from_integer(sign * int))
    }
}

//! Multi-indices in ℕ₀^{d+1} with the fractional scaling ρk₀ + k₁ + … + k_d.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use num_rational::Ratio;

use crate::params::Rational;

/// A decoration multi-index. The empty vector is the zero index of any
/// arity, so undecorated trees never allocate component storage.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero() -> Self {
        MultiIndex(Vec::new())
    }

    /// Unit index e_i (component i = 1), arity d+1.
    pub fn unit(i: usize, d: u32) -> Self {
        let mut v = vec![0u32; d as usize + 1];
        v[i] = 1;
        MultiIndex(v)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&k| k == 0)
    }

    /// Scaled size |k|_𝔰 = ρ·k₀ + k₁ + … + k_d.
    pub fn scaled_size(&self, rho: Rational) -> Rational {
        if self.0.is_empty() {
            return Ratio::from_integer(0);
        }
        let spatial: i64 = self.0[1..].iter().map(|&k| k as i64).sum();
        rho * Ratio::from_integer(self.0[0] as i64) + Ratio::from_integer(spatial)
    }

    /// Contribution as a linear form (coefficient of d, coefficient of ρ,
    /// plain constant): scaled size is k₀·ρ + Σ spatial, so (0, k₀, Σ).
    pub fn scaled_size_parts(&self) -> (i64, i64) {
        if self.0.is_empty() {
            return (0, 0);
        }
        let spatial: i64 = self.0[1..].iter().map(|&k| k as i64).sum();
        (self.0[0] as i64, spatial)
    }

    pub fn component(&self, i: usize) -> u32 {
        self.0.get(i).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Canonical text form `[k0,k1,...]`.
    pub fn render(&self) -> String {
        let mut s = String::from("[");
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{k}");
        }
        s.push(']');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_size_uses_fractional_scaling() {
        let k = MultiIndex(vec![2, 1, 0, 3]);
        let rho = Ratio::new(6, 5);
        assert_eq!(
            k.scaled_size(rho),
            Ratio::new(12, 5) + Ratio::from_integer(4)
        );
        assert!(MultiIndex::zero().is_zero());
        assert_eq!(MultiIndex::zero().scaled_size(rho), Ratio::from_integer(0));
    }
}

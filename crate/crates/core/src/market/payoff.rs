use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    /// `(K - S)^+` on a single asset.
    Put,
    /// `(max_i S^i - K)^+`.
    MaxCall,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Payoff {
    pub kind: PayoffKind,
    pub strike: f64,
}

impl Payoff {
    pub fn put(strike: f64) -> Self {
        Payoff {
            kind: PayoffKind::Put,
            strike,
        }
    }

    pub fn max_call(strike: f64) -> Self {
        Payoff {
            kind: PayoffKind::MaxCall,
            strike,
        }
    }

    /// Check that the payoff applies to `d_assets` prices.
    pub fn check_dim(&self, d_assets: usize) -> Result<()> {
        match self.kind {
            PayoffKind::Put if d_assets != 1 => Err(Error::config(format!(
                "payoff.kind = put needs exactly one asset, model has {d_assets}"
            ))),
            _ if d_assets == 0 => Err(Error::config("payoff needs at least one asset")),
            _ => Ok(()),
        }
    }

    /// Payoff of one price vector. Only the leading asset prices are read.
    #[inline]
    pub fn value(&self, assets: &[f64]) -> f64 {
        match self.kind {
            PayoffKind::Put => (self.strike - assets[0]).max(0.0),
            PayoffKind::MaxCall => {
                let m = assets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (m - self.strike).max(0.0)
            }
        }
    }

    /// Elementwise payoff of an `[N x d]` slice of prices.
    pub fn eval(&self, prices: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_dim(prices.ncols())?;
        Ok(prices
            .rows()
            .into_iter()
            .map(|row| match row.as_slice() {
                Some(s) => self.value(s),
                None => self.value(&row.to_vec()),
            })
            .collect())
    }
}

/// Discount factor `exp(-r t)`, the inverse of the bank account.
#[inline]
pub fn discount(r: f64, t: f64) -> f64 {
    (-r * t).exp()
}

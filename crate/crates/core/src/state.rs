//! Portfolio state space: weights, prices, holdings and the quantities derived
//! from them at a single instant.
//!
//! Per asset `i` the value is `U_i = p_i * h_i` and the sub-temperature is
//! `T_i = U_i / w_i`. The portfolio is in equilibrium when every `T_i` equals
//! the total value `T`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

/// Largest accepted deviation of `Σ w_i` from one. Inputs outside the band are
/// rejected, never normalized.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights", into = "RawWeights")]
pub struct AssetWeights {
    labels: Vec<String>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawWeights {
    labels: Vec<String>,
    values: Vec<f64>,
}

impl TryFrom<RawWeights> for AssetWeights {
    type Error = Error;
    fn try_from(raw: RawWeights) -> Result<Self> {
        AssetWeights::new(raw.labels, raw.values)
    }
}

impl From<AssetWeights> for RawWeights {
    fn from(w: AssetWeights) -> Self {
        RawWeights {
            labels: w.labels,
            values: w.values,
        }
    }
}

impl AssetWeights {
    pub fn new(labels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if labels.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                found: labels.len(),
            });
        }
        if values.len() < 2 {
            return Err(Error::InvalidWeights(format!(
                "need at least 2 assets, got {}",
                values.len()
            )));
        }
        for (i, &w) in values.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidWeights(format!(
                    "weight {i} must be positive, got {w}"
                )));
            }
        }
        let total = numeric::sum(values.iter().copied());
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {total}, expected 1 within {WEIGHT_SUM_TOL:e}"
            )));
        }
        Ok(Self { labels, values })
    }

    /// Weights with generated labels `A0`, `A1`, ...
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let labels = default_labels(values.len());
        Self::new(labels, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }
}

pub fn default_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("A{i}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PriceVector(Vec<f64>);

impl PriceVector {
    pub fn new(prices: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = prices
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p > 0.0))
        {
            return Err(Error::InvalidPrice { index, value });
        }
        Ok(Self(prices))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for PriceVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        PriceVector::new(v)
    }
}

impl From<PriceVector> for Vec<f64> {
    fn from(p: PriceVector) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Holdings(Vec<f64>);

impl Holdings {
    pub fn new(amounts: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = amounts
            .iter()
            .enumerate()
            .find(|(_, h)| !(h.is_finite() && **h >= 0.0))
        {
            return Err(Error::InvalidHolding { index, value });
        }
        Ok(Self(amounts))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Holdings {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Holdings::new(v)
    }
}

impl From<Holdings> for Vec<f64> {
    fn from(h: Holdings) -> Self {
        h.0
    }
}

/// Immutable snapshot of a portfolio. Weights are shared between snapshots of
/// the same run.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    weights: Arc<AssetWeights>,
    prices: PriceVector,
    holdings: Holdings,
}

impl PortfolioState {
    pub fn new(
        weights: impl Into<Arc<AssetWeights>>,
        prices: PriceVector,
        holdings: Holdings,
    ) -> Result<Self> {
        let weights = weights.into();
        let n = weights.len();
        check_len(n, prices.len())?;
        check_len(n, holdings.len())?;
        let state = Self {
            weights,
            prices,
            holdings,
        };
        let total = state.total_value();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::EmptyPortfolio(total));
        }
        Ok(state)
    }

    pub fn n_assets(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &AssetWeights {
        &self.weights
    }

    pub fn shared_weights(&self) -> &Arc<AssetWeights> {
        &self.weights
    }

    pub fn prices(&self) -> &PriceVector {
        &self.prices
    }

    pub fn holdings(&self) -> &Holdings {
        &self.holdings
    }

    /// Same holdings re-marked at new prices. Trades do not happen here.
    pub fn with_prices(&self, prices: PriceVector) -> Result<Self> {
        Self::new(self.weights.clone(), prices, self.holdings.clone())
    }

    pub(crate) fn with_holdings(&self, holdings: Holdings) -> Result<Self> {
        Self::new(self.weights.clone(), self.prices.clone(), holdings)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < self.n_assets() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: i,
                n: self.n_assets(),
            })
        }
    }

    /// `U_i = p_i h_i`.
    pub fn asset_value(&self, i: usize) -> Result<f64> {
        self.check_index(i)?;
        Ok(self.value_unchecked(i))
    }

    #[inline]
    pub(crate) fn value_unchecked(&self, i: usize) -> f64 {
        self.prices.0[i] * self.holdings.0[i]
    }

    /// `T = Σ U_i`, compensated.
    pub fn total_value(&self) -> f64 {
        numeric::sum((0..self.n_assets()).map(|i| self.value_unchecked(i)))
    }

    /// `T_i = U_i / w_i`.
    pub fn sub_temperature(&self, i: usize) -> Result<f64> {
        self.check_index(i)?;
        Ok(self.sub_temperature_unchecked(i))
    }

    #[inline]
    pub(crate) fn sub_temperature_unchecked(&self, i: usize) -> f64 {
        self.value_unchecked(i) / self.weights.values[i]
    }

    pub fn sub_temperatures(&self) -> Vec<f64> {
        (0..self.n_assets())
            .map(|i| self.sub_temperature_unchecked(i))
            .collect()
    }

    /// `max_i |T_i / T - 1|`; zero exactly at equilibrium.
    pub fn equilibrium_residual(&self) -> f64 {
        let total = self.total_value();
        (0..self.n_assets())
            .map(|i| (self.sub_temperature_unchecked(i) / total - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `L = Σ w_i ln T_i`. Equals `ln T` at equilibrium and is strictly below
    /// it otherwise.
    pub fn log_potential(&self) -> Result<f64> {
        let mut acc = numeric::CompensatedSum::new();
        for i in 0..self.n_assets() {
            let t = self.sub_temperature_unchecked(i);
            if t <= 0.0 {
                return Err(Error::ZeroSubTemperature { index: i });
            }
            acc.add(self.weights.values[i] * t.ln());
        }
        Ok(acc.value())
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Equilibrium allocation `U_i = w_i * capital` at the given prices.
pub fn new_portfolio(
    weights: impl Into<Arc<AssetWeights>>,
    prices: PriceVector,
    capital: f64,
) -> Result<PortfolioState> {
    if !(capital.is_finite() && capital > 0.0) {
        return Err(Error::NonPositiveCapital(capital));
    }
    let weights = weights.into();
    check_len(weights.len(), prices.len())?;
    let holdings = weights
        .values()
        .iter()
        .zip(prices.as_slice())
        .map(|(w, p)| w * capital / p)
        .collect();
    PortfolioState::new(weights, prices, Holdings::new(holdings)?)
}

/// `ln P = Σ w_i ln p_i`.
pub fn ln_price_index(prices: &PriceVector, weights: &AssetWeights) -> Result<f64> {
    check_len(weights.len(), prices.len())?;
    Ok(numeric::sum(
        weights
            .values()
            .iter()
            .zip(prices.as_slice())
            .map(|(w, p)| w * p.ln()),
    ))
}

/// Weighted geometric mean of prices, `P = Π p_i^{w_i}`, evaluated in log space.
pub fn price_index(prices: &PriceVector, weights: &AssetWeights) -> Result<f64> {
    ln_price_index(prices, weights).map(f64::exp)
}

//! Entropy ledger.
//!
//! At fixed prices the value bought into asset `i` is `dQ_i = p_i dh_i =
//! w_i dT_i`, so integrating `dQ_i / T_i` over a finite trade gives the closed
//! form `ΔS_i = w_i ln(T_i' / T_i)`. The ledger accumulates that exact form;
//! the first-order pair expression `Q_ij/T_i + Q_ji/T_j` is kept separately as
//! a diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, CompensatedSum};
use crate::state::PortfolioState;
use crate::trade::PairwiseTrade;

/// Most negative total entropy change accepted by [`EntropyLedger::accumulate`].
pub const ENTROPY_TOL: f64 = 1e-12;

/// The state `O` from which entropy is measured (`S(O) = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerReference {
    pub t: f64,
    pub prices: Vec<f64>,
    pub holdings: Vec<f64>,
}

impl LedgerReference {
    pub fn new(t: f64, state: &PortfolioState) -> Self {
        Self {
            t,
            prices: state.prices().as_slice().to_vec(),
            holdings: state.holdings().as_slice().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyLedger {
    #[serde(serialize_with = "ser_sums", deserialize_with = "de_sums")]
    s: Vec<CompensatedSum>,
    total: f64,
    reference: LedgerReference,
}

fn ser_sums<S: serde::Serializer>(
    sums: &[CompensatedSum],
    ser: S,
) -> std::result::Result<S::Ok, S::Error> {
    ser.collect_seq(sums.iter().map(|s| s.value()))
}

fn de_sums<'de, D: serde::Deserializer<'de>>(
    de: D,
) -> std::result::Result<Vec<CompensatedSum>, D::Error> {
    let values = Vec::<f64>::deserialize(de)?;
    Ok(values
        .into_iter()
        .map(|v| {
            let mut s = CompensatedSum::new();
            s.add(v);
            s
        })
        .collect())
}

impl EntropyLedger {
    pub fn new(n_assets: usize, reference: LedgerReference) -> Self {
        Self {
            s: vec![CompensatedSum::new(); n_assets],
            total: 0.0,
            reference,
        }
    }

    /// Per-asset entropies `S_i`.
    pub fn per_asset(&self) -> Vec<f64> {
        self.s.iter().map(|s| s.value()).collect()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn reference(&self) -> &LedgerReference {
        &self.reference
    }

    /// Adds per-asset entropy changes. Rejects deltas whose sum is more negative
    /// than `-ENTROPY_TOL`: that only happens when an illegal trade got through.
    pub fn accumulate(self, delta: &[f64]) -> Result<Self> {
        self.accumulate_with_tol(delta, ENTROPY_TOL)
    }

    pub fn accumulate_with_tol(mut self, delta: &[f64], tol: f64) -> Result<Self> {
        if delta.len() != self.s.len() {
            return Err(Error::DimensionMismatch {
                expected: self.s.len(),
                found: delta.len(),
            });
        }
        let step = numeric::sum(delta.iter().copied());
        if !step.is_finite() || step < -tol {
            return Err(Error::NegativeEntropy { delta: step });
        }
        for (acc, d) in self.s.iter_mut().zip(delta) {
            acc.add(*d);
        }
        self.total = numeric::sum(self.s.iter().map(|s| s.value()));
        Ok(self)
    }
}

fn same_market(pre: &PortfolioState, post: &PortfolioState) -> bool {
    pre.weights() == post.weights() && pre.prices() == post.prices()
}

/// Exact per-asset entropy change `w_i ln(T_i'/T_i)` between two states at the
/// same prices.
pub fn trade_entropy_exact(pre: &PortfolioState, post: &PortfolioState) -> Result<Vec<f64>> {
    if !same_market(pre, post) {
        return Err(Error::PriceMismatch);
    }
    let w = pre.weights().values();
    (0..pre.n_assets())
        .map(|i| {
            let before = pre.sub_temperature_unchecked(i);
            let after = post.sub_temperature_unchecked(i);
            if before <= 0.0 || after <= 0.0 {
                return Err(Error::ZeroSubTemperature { index: i });
            }
            Ok(w[i] * (after / before).ln())
        })
        .collect()
}

/// First-order entropy of a pair trade, `Q_ij/T_i + Q_ji/T_j`, at pre-trade
/// sub-temperatures. Overestimates the exact value for finite transfers; the
/// gap is second order in the amount.
pub fn pair_entropy_first_order(state: &PortfolioState, trade: &PairwiseTrade) -> Result<f64> {
    let temp = |i: usize| -> Result<f64> {
        let t = state.sub_temperature(i)?;
        if t <= 0.0 {
            Err(Error::ZeroSubTemperature { index: i })
        } else {
            Ok(t)
        }
    };
    let (b, s) = (trade.buyer(), trade.seller());
    Ok(trade.flow(b, s) / temp(b)? + trade.flow(s, b) / temp(s)?)
}

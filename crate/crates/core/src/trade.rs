//! Pairwise trades, their legality, and rebalancing plans.
//!
//! A trade moves `amount` of value from the seller asset to the buyer asset at
//! fixed prices. It is legal when value flows from the hotter asset (higher
//! sub-temperature) to the colder one and the transfer stops at or before the
//! two sub-temperatures meet.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;
use crate::state::{Holdings, PortfolioState};

/// Relative slack for the direction and no-crossing comparisons. Trades that
/// land exactly on equality can miss it by a few ulps.
pub const LEGALITY_TOL: f64 = 1e-12;

/// Relative slack for value conservation across a single trade.
pub const CONSERVATION_TOL: f64 = 1e-12;

/// Net flows smaller than this fraction of total value are not traded.
pub const DUST_FRACTION: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrade", into = "RawTrade")]
pub struct PairwiseTrade {
    buyer: usize,
    seller: usize,
    amount: f64,
}

#[derive(Serialize, Deserialize)]
struct RawTrade {
    buyer: usize,
    seller: usize,
    amount: f64,
}

impl TryFrom<RawTrade> for PairwiseTrade {
    type Error = Error;
    fn try_from(r: RawTrade) -> Result<Self> {
        PairwiseTrade::new(r.buyer, r.seller, r.amount)
    }
}

impl From<PairwiseTrade> for RawTrade {
    fn from(t: PairwiseTrade) -> Self {
        RawTrade {
            buyer: t.buyer,
            seller: t.seller,
            amount: t.amount,
        }
    }
}

impl PairwiseTrade {
    pub fn new(buyer: usize, seller: usize, amount: f64) -> Result<Self> {
        if buyer == seller {
            return Err(Error::InvalidTrade(format!(
                "buyer and seller are both asset {buyer}"
            )));
        }
        if !(amount.is_finite() && amount > 0.0) {
            return Err(Error::InvalidTrade(format!(
                "amount must be positive and finite, got {amount}"
            )));
        }
        Ok(Self {
            buyer,
            seller,
            amount,
        })
    }

    pub fn buyer(&self) -> usize {
        self.buyer
    }

    pub fn seller(&self) -> usize {
        self.seller
    }

    pub fn amount(&self) -> f64 {
        self.amount
    }

    /// Signed flow `Q_ij`: value bought into `i` from `j`.
    pub fn flow(&self, i: usize, j: usize) -> f64 {
        if i == self.buyer && j == self.seller {
            self.amount
        } else if i == self.seller && j == self.buyer {
            -self.amount
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeBatch {
    n_assets: usize,
    trades: Vec<PairwiseTrade>,
}

impl TradeBatch {
    pub fn new(n_assets: usize, trades: Vec<PairwiseTrade>) -> Self {
        Self { n_assets, trades }
    }

    pub fn empty(n_assets: usize) -> Self {
        Self::new(n_assets, Vec::new())
    }

    pub fn trades(&self) -> &[PairwiseTrade] {
        &self.trades
    }

    pub fn len(&self) -> usize {
        self.trades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trades.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    /// `Q_i = Σ_j Q_ij` per asset. Trades referencing assets out of range are
    /// ignored here; validation reports them.
    pub fn net_flows(&self) -> Vec<f64> {
        let mut acc = vec![numeric::CompensatedSum::new(); self.n_assets];
        for t in &self.trades {
            if let Some(b) = acc.get_mut(t.buyer) {
                b.add(t.amount);
            }
            if let Some(s) = acc.get_mut(t.seller) {
                s.add(-t.amount);
            }
        }
        acc.iter().map(|a| a.value()).collect()
    }

    pub fn gross_value(&self) -> f64 {
        numeric::sum(self.trades.iter().map(|t| t.amount))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    DirectionViolatesSecondLaw,
    CrossingOvershoot,
    NegativeHolding,
    ConservationBroken,
    DimensionMismatch,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Violation::DirectionViolatesSecondLaw => {
                "buyer is hotter than seller (direction violates second law)"
            }
            Violation::CrossingOvershoot => {
                "transfer pushes the seller below the buyer (crossing overshoot)"
            }
            Violation::NegativeHolding => "seller holding would go negative",
            Violation::ConservationBroken => "total value not conserved",
            Violation::DimensionMismatch => "asset index out of range",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TradeVerdict {
    Legal,
    Illegal(Violation),
}

impl TradeVerdict {
    pub fn is_legal(&self) -> bool {
        matches!(self, TradeVerdict::Legal)
    }

    pub fn violation(&self) -> Option<Violation> {
        match self {
            TradeVerdict::Legal => None,
            TradeVerdict::Illegal(v) => Some(*v),
        }
    }
}

fn post_trade_holdings(state: &PortfolioState, trade: &PairwiseTrade) -> Vec<f64> {
    let prices = state.prices().as_slice();
    let mut h = state.holdings().as_slice().to_vec();
    h[trade.seller] -= trade.amount / prices[trade.seller];
    h[trade.buyer] += trade.amount / prices[trade.buyer];
    h
}

fn hotter_or_equal(hot: f64, cold: f64) -> bool {
    hot >= cold - LEGALITY_TOL * hot.abs().max(cold.abs())
}

pub fn validate_trade(state: &PortfolioState, trade: &PairwiseTrade) -> TradeVerdict {
    let n = state.n_assets();
    if trade.buyer >= n || trade.seller >= n {
        return TradeVerdict::Illegal(Violation::DimensionMismatch);
    }
    let (s, b) = (trade.seller, trade.buyer);
    if !hotter_or_equal(
        state.sub_temperature_unchecked(s),
        state.sub_temperature_unchecked(b),
    ) {
        return TradeVerdict::Illegal(Violation::DirectionViolatesSecondLaw);
    }

    let h = post_trade_holdings(state, trade);
    if h[s] < 0.0 {
        return TradeVerdict::Illegal(Violation::NegativeHolding);
    }
    let p = state.prices().as_slice();
    let w = state.weights().values();
    let seller_after = p[s] * h[s] / w[s];
    let buyer_after = p[b] * h[b] / w[b];
    if !hotter_or_equal(seller_after, buyer_after) {
        return TradeVerdict::Illegal(Violation::CrossingOvershoot);
    }

    let before = state.value_unchecked(s) + state.value_unchecked(b);
    let after = p[s] * h[s] + p[b] * h[b];
    if (after - before).abs() > CONSERVATION_TOL * state.total_value() {
        return TradeVerdict::Illegal(Violation::ConservationBroken);
    }
    TradeVerdict::Legal
}

/// Applies a single legal trade. Untouched assets keep their holdings bit-for-bit.
pub fn apply_trade(state: &PortfolioState, trade: &PairwiseTrade) -> Result<PortfolioState> {
    match validate_trade(state, trade) {
        TradeVerdict::Legal => {
            state.with_holdings(Holdings::new(post_trade_holdings(state, trade))?)
        }
        TradeVerdict::Illegal(violation) => Err(Error::IllegalTrade {
            position: 0,
            violation,
        }),
    }
}

/// Applies a batch in stored order, all-or-nothing. Returns the final state and
/// the sub-temperature vector after each trade.
pub fn apply_batch(
    state: &PortfolioState,
    batch: &TradeBatch,
) -> Result<(PortfolioState, Vec<Vec<f64>>)> {
    if batch.n_assets != state.n_assets() {
        return Err(Error::DimensionMismatch {
            expected: state.n_assets(),
            found: batch.n_assets,
        });
    }
    let mut current = state.clone();
    let mut snapshots = Vec::with_capacity(batch.len());
    for (position, trade) in batch.trades.iter().enumerate() {
        current = apply_trade(&current, trade).map_err(|e| match e {
            Error::IllegalTrade { violation, .. } => Error::IllegalTrade {
                position,
                violation,
            },
            other => other,
        })?;
        snapshots.push(current.sub_temperatures());
    }
    Ok((current, snapshots))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    rename_all = "lowercase",
    try_from = "RawPolicy",
    into = "RawPolicy"
)]
pub enum RebalancePolicy {
    BuyAndHold,
    Full,
    Fractional { alpha: f64 },
    Threshold { band: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RawPolicy {
    #[serde(rename = "buyhold")]
    BuyAndHold,
    Full,
    Fractional {
        alpha: f64,
    },
    Threshold {
        band: f64,
    },
}

impl TryFrom<RawPolicy> for RebalancePolicy {
    type Error = Error;
    fn try_from(r: RawPolicy) -> Result<Self> {
        match r {
            RawPolicy::BuyAndHold => Ok(RebalancePolicy::BuyAndHold),
            RawPolicy::Full => Ok(RebalancePolicy::Full),
            RawPolicy::Fractional { alpha } => RebalancePolicy::fractional(alpha),
            RawPolicy::Threshold { band } => RebalancePolicy::threshold(band),
        }
    }
}

impl From<RebalancePolicy> for RawPolicy {
    fn from(p: RebalancePolicy) -> Self {
        match p {
            RebalancePolicy::BuyAndHold => RawPolicy::BuyAndHold,
            RebalancePolicy::Full => RawPolicy::Full,
            RebalancePolicy::Fractional { alpha } => RawPolicy::Fractional { alpha },
            RebalancePolicy::Threshold { band } => RawPolicy::Threshold { band },
        }
    }
}

impl RebalancePolicy {
    pub fn fractional(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha <= 1.0 {
            Ok(RebalancePolicy::Fractional { alpha })
        } else {
            Err(Error::InvalidPolicy(format!(
                "alpha must be in (0,1], got {alpha}"
            )))
        }
    }

    pub fn threshold(band: f64) -> Result<Self> {
        if band.is_finite() && band > 0.0 {
            Ok(RebalancePolicy::Threshold { band })
        } else {
            Err(Error::InvalidPolicy(format!(
                "band must be positive and finite, got {band}"
            )))
        }
    }

    /// Fraction of the gap to equilibrium closed at this state.
    fn step_fraction(&self, state: &PortfolioState) -> f64 {
        match *self {
            RebalancePolicy::BuyAndHold => 0.0,
            RebalancePolicy::Full => 1.0,
            RebalancePolicy::Fractional { alpha } => alpha,
            RebalancePolicy::Threshold { band } => {
                if state.equilibrium_residual() > band {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for RebalancePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RebalancePolicy::BuyAndHold => f.write_str("buyhold"),
            RebalancePolicy::Full => f.write_str("full"),
            RebalancePolicy::Fractional { alpha } => write!(f, "fractional:{alpha}"),
            RebalancePolicy::Threshold { band } => write!(f, "threshold:{band}"),
        }
    }
}

impl FromStr for RebalancePolicy {
    type Err = Error;

    /// `full`, `buyhold`, `fractional:<alpha>`, `threshold:<band>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let parse_param = |what: &str| -> Result<f64> {
            let raw = param.ok_or_else(|| {
                Error::InvalidPolicy(format!("{name} needs a parameter: {name}:<{what}>"))
            })?;
            raw.trim().parse::<f64>().map_err(|_| {
                Error::InvalidPolicy(format!("{what} is not a decimal number: {raw:?}"))
            })
        };
        match (name.trim(), param) {
            ("full", None) => Ok(RebalancePolicy::Full),
            ("buyhold", None) => Ok(RebalancePolicy::BuyAndHold),
            ("fractional", _) => RebalancePolicy::fractional(parse_param("alpha")?),
            ("threshold", _) => RebalancePolicy::threshold(parse_param("band")?),
            ("full" | "buyhold", Some(_)) => Err(Error::InvalidPolicy(format!("{name} takes no parameter"))),
            _ => Err(Error::InvalidPolicy(format!(
                "unknown policy {s:?}; expected full, buyhold, fractional:<alpha> or threshold:<band>"
            ))),
        }
    }
}

/// Plans the trades that move each asset a policy-dependent fraction of the way
/// to its equilibrium value `w_i T`.
///
/// Sellers are visited hottest first, buyers coldest first, and matched with a
/// two-pointer sweep; ties break toward the lower index. The result is a pure
/// function of the state and policy.
pub fn plan_rebalance(state: &PortfolioState, policy: &RebalancePolicy) -> TradeBatch {
    let n = state.n_assets();
    let fraction = policy.step_fraction(state);
    if fraction == 0.0 {
        return TradeBatch::empty(n);
    }
    let total = state.total_value();
    let dust = DUST_FRACTION * total;
    let weights = state.weights().values();
    let temps = state.sub_temperatures();

    let flows: Vec<f64> = (0..n)
        .map(|i| fraction * (weights[i] * total - state.value_unchecked(i)))
        .collect();

    let mut sellers: Vec<usize> = (0..n).filter(|&i| flows[i] < -dust).collect();
    let mut buyers: Vec<usize> = (0..n).filter(|&i| flows[i] > dust).collect();
    sellers.sort_by(|&a, &b| temps[b].total_cmp(&temps[a]).then(a.cmp(&b)));
    buyers.sort_by(|&a, &b| temps[a].total_cmp(&temps[b]).then(a.cmp(&b)));

    let mut sell_left: Vec<f64> = sellers.iter().map(|&i| -flows[i]).collect();
    let mut buy_left: Vec<f64> = buyers.iter().map(|&i| flows[i]).collect();
    let mut trades = Vec::with_capacity(sellers.len() + buyers.len());
    let (mut si, mut bi) = (0, 0);
    while si < sellers.len() && bi < buyers.len() {
        let amount = sell_left[si].min(buy_left[bi]);
        if amount > dust {
            trades.push(PairwiseTrade {
                buyer: buyers[bi],
                seller: sellers[si],
                amount,
            });
        }
        sell_left[si] -= amount;
        buy_left[bi] -= amount;
        if sell_left[si] <= dust {
            si += 1;
        }
        if buy_left[bi] <= dust {
            bi += 1;
        }
    }
    TradeBatch::new(n, trades)
}

//! Constant-weight portfolio simulation with an exact entropy-production
//! ledger.
//!
//! A portfolio holds fixed target weights `w_i`. Each asset has a
//! sub-temperature `T_i = p_i h_i / w_i`; trades move value from hotter assets
//! to colder ones at fixed prices, and every such trade produces non-negative
//! entropy `Σ w_i ln(T_i'/T_i)`. Over a run between equilibrium states the log
//! return splits exactly into the log change of the weighted geometric price
//! index plus the entropy produced:
//!
//! ```text
//! ln(T_D / T_C) = ln(P_D / P_C) + (S_D - S_C),    S_D - S_C >= 0
//! ```

pub mod cli;
pub mod entropy;
pub mod error;
pub mod numeric;
pub mod path;
pub mod sim;
pub mod state;
pub mod trade;

pub use entropy::{pair_entropy_first_order, trade_entropy_exact, EntropyLedger, LedgerReference};
pub use error::{Error, Result};
pub use path::{
    generate, index_series, load_csv, write_csv, DeterministicKind, DeterministicSpec, GbmSpec,
    PathSpec, PricePath,
};
pub use sim::{
    compare_policies, run, run_many, run_spec, verify_report, SimulationConfig, SimulationReport,
    StepChecks, Tolerances,
};
pub use state::{
    ln_price_index, new_portfolio, price_index, AssetWeights, Holdings, PortfolioState, PriceVector,
};
pub use trade::{
    apply_batch, apply_trade, plan_rebalance, validate_trade, PairwiseTrade, RebalancePolicy,
    TradeBatch, TradeVerdict, Violation,
};

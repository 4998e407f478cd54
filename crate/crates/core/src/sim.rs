//! Tick-loop simulator and report verification.
//!
//! Every tick is split in two: prices move with holdings fixed (no entropy),
//! then the policy trades at the new prices (entropy from the exact ledger).
//! Across the split the log-potential `L = Σ w_i ln T_i` obeys
//! `ΔL = Δln P + ΔS` for any policy; between equilibrium endpoints `L = ln T`
//! and this becomes the log-return decomposition the report is built around.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::{trade_entropy_exact, EntropyLedger, LedgerReference};
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::path::{generate, PathSpec, PricePath, GENERATOR_ID};
use crate::state::{ln_price_index, new_portfolio, AssetWeights, PortfolioState};
use crate::trade::{apply_batch, plan_rebalance, RebalancePolicy, TradeBatch, CONSERVATION_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub identity_tol: f64,
    pub entropy_tol: f64,
    pub equilibrium_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            identity_tol: 1e-9,
            entropy_tol: 1e-12,
            equilibrium_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub weights: AssetWeights,
    pub capital: f64,
    pub policy: RebalancePolicy,
    pub settle_at_end: bool,
    pub record_steps: bool,
    pub tolerances: Tolerances,
}

impl SimulationConfig {
    /// Defaults: settlement on, no step records, default tolerances.
    pub fn new(weights: AssetWeights, capital: f64, policy: RebalancePolicy) -> Self {
        Self {
            weights,
            capital,
            policy,
            settle_at_end: true,
            record_steps: false,
            tolerances: Tolerances::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capital.is_finite() && self.capital > 0.0) {
            return Err(Error::NonPositiveCapital(self.capital));
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("identity_tol", t.identity_tol),
            ("entropy_tol", t.entropy_tol),
            ("equilibrium_tol", t.equilibrium_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeSummary {
    pub count: usize,
    pub gross_value: f64,
}

impl From<&TradeBatch> for TradeSummary {
    fn from(b: &TradeBatch) -> Self {
        Self {
            count: b.len(),
            gross_value: b.gross_value(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    #[serde(rename = "T")]
    pub total_value: f64,
    #[serde(rename = "L")]
    pub log_potential: f64,
    #[serde(rename = "lnP")]
    pub ln_price_index: f64,
    #[serde(rename = "S")]
    pub entropy: f64,
    pub trades: TradeSummary,
    /// Signed `ΔL - Δln P - ΔS` of this step.
    pub step_residual: f64,
    /// Running `Σ |ΔL - Δln P - ΔS|` up to and including this step.
    pub residual: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub settlement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub t: f64,
    pub prices: Vec<f64>,
    pub holdings: Vec<f64>,
    pub sub_temperatures: Vec<f64>,
    pub total_value: f64,
    pub log_potential: f64,
    pub ln_price_index: f64,
    pub equilibrium_residual: f64,
}

impl StateSnapshot {
    fn capture(t: f64, state: &PortfolioState) -> Result<Self> {
        Ok(Self {
            t,
            prices: state.prices().as_slice().to_vec(),
            holdings: state.holdings().as_slice().to_vec(),
            sub_temperatures: state.sub_temperatures(),
            total_value: state.total_value(),
            log_potential: state.log_potential()?,
            ln_price_index: ln_price_index(state.prices(), state.weights())?,
            equilibrium_residual: state.equilibrium_residual(),
        })
    }

    /// Equilibrium test recomputed from the stored sub-temperatures.
    fn in_equilibrium(&self, tol: f64) -> bool {
        self.sub_temperatures
            .iter()
            .all(|t| (t / self.total_value - 1.0).abs() <= tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// File name, or `in-memory` for paths handed over directly.
    pub source: String,
    /// SHA-256 of the path's canonical CSV encoding.
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<PathSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    pub ticks: usize,
    pub labels: Vec<String>,
}

impl Provenance {
    pub fn for_path(path: &PricePath) -> Self {
        Self {
            source: "in-memory".into(),
            digest: path.digest(),
            spec: None,
            generator: None,
            ticks: path.len(),
            labels: path.labels().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub ln_t_ratio: f64,
    pub ln_p_ratio: f64,
    pub delta_s: f64,
    /// `|ln_t_ratio - ln_p_ratio - delta_s|`; only meaningful between
    /// equilibrium endpoints.
    pub identity_residual: f64,
    pub per_asset_entropy: Vec<f64>,
    /// `Σ |ΔL - Δln P - ΔS|` over all steps.
    pub step_identity_residual: f64,
    pub max_step_residual: f64,
    pub trade_count: usize,
    /// Entropy produced by the final settlement batch alone.
    pub settlement_delta_s: f64,
    pub settled: bool,
    pub endpoints_equilibrium: bool,
    /// Largest `|T_after - T_before| / T_before` over all trade batches.
    pub max_conservation_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub pass: bool,
    /// Tolerance minus measured violation; negative when the check fails.
    pub slack: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Verification {
    pub checks: BTreeMap<String, CheckResult>,
}

impl Verification {
    pub fn all_pass(&self) -> bool {
        self.checks.values().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.get(name)
    }
}

pub const CHECK_EQUILIBRIUM_IDENTITY: &str = "equilibrium_identity";
pub const CHECK_STEP_IDENTITY: &str = "step_identity";
pub const CHECK_ENTROPY_MONOTONE: &str = "entropy_monotone";
pub const CHECK_ROI_BOUND: &str = "roi_bound";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub provenance: Provenance,
    pub initial_state: StateSnapshot,
    pub final_state: StateSnapshot,
    pub summary: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<StepRecord>>,
    pub verification: Verification,
}

impl SimulationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are always finite")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidConfig(format!("report json: {e}")))
    }

    /// Per-step dump `t,T,L,lnP,S,residual`.
    pub fn steps_csv(&self) -> Result<String> {
        let steps = self.steps.as_ref().ok_or(Error::MissingStepRecords)?;
        let mut out = String::from("t,T,L,lnP,S,residual\n");
        for r in steps {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.t, r.total_value, r.log_potential, r.ln_price_index, r.entropy, r.residual
            )
            .expect("writing to a String cannot fail");
        }
        Ok(out)
    }
}

/// Mutable tick-loop bookkeeping; lives only inside [`run`].
struct Tracker {
    config_tol: Tolerances,
    record: bool,
    ledger: EntropyLedger,
    last_l: f64,
    last_ln_p: f64,
    last_s: f64,
    residual_abs: CompensatedSum,
    max_step_residual: f64,
    max_conservation_error: f64,
    trade_count: usize,
    steps: Vec<StepRecord>,
}

impl Tracker {
    /// Applies one trade batch at the current prices and closes the step.
    fn trade_step(
        &mut self,
        step: usize,
        t: f64,
        state: PortfolioState,
        batch: &TradeBatch,
        settlement: bool,
    ) -> Result<(PortfolioState, f64)> {
        let before_total = state.total_value();
        let (after, _) = apply_batch(&state, batch).map_err(|e| Error::InvariantBreach {
            step,
            message: e.to_string(),
        })?;
        let conservation = (after.total_value() - before_total).abs() / before_total;
        if conservation > CONSERVATION_TOL {
            return Err(Error::InvariantBreach {
                step,
                message: format!(
                    "total value changed by {conservation:e} (relative) across trades"
                ),
            });
        }
        self.max_conservation_error = self.max_conservation_error.max(conservation);

        let delta = trade_entropy_exact(&state, &after)?;
        let produced: f64 = delta.iter().copied().collect::<CompensatedSum>().value();
        self.ledger = self
            .ledger
            .clone()
            .accumulate_with_tol(&delta, self.config_tol.entropy_tol)
            .map_err(|e| Error::InvariantBreach {
                step,
                message: e.to_string(),
            })?;
        self.trade_count += batch.len();

        let l = after.log_potential()?;
        let ln_p = ln_price_index(after.prices(), after.weights())?;
        let s = self.ledger.total();
        let r = (l - self.last_l) - (ln_p - self.last_ln_p) - (s - self.last_s);
        self.residual_abs.add(r.abs());
        self.max_step_residual = self.max_step_residual.max(r.abs());
        self.last_l = l;
        self.last_ln_p = ln_p;
        self.last_s = s;

        if self.record {
            self.steps.push(StepRecord {
                t,
                total_value: after.total_value(),
                log_potential: l,
                ln_price_index: ln_p,
                entropy: s,
                trades: TradeSummary::from(batch),
                step_residual: r,
                residual: self.residual_abs.value(),
                settlement,
            });
        }
        Ok((after, produced))
    }
}

/// Runs the policy along the path. The portfolio starts in equilibrium at the
/// first tick's prices with `S = 0`.
pub fn run(path: &PricePath, config: &SimulationConfig) -> Result<SimulationReport> {
    config.validate()?;
    if config.weights.len() != path.n_assets() {
        return Err(Error::DimensionMismatch {
            expected: path.n_assets(),
            found: config.weights.len(),
        });
    }
    let weights = Arc::new(config.weights.clone());
    let times = path.times();
    let prices = path.prices();

    let mut state = new_portfolio(weights, prices[0].clone(), config.capital)?;
    let initial = StateSnapshot::capture(times[0], &state)?;
    let mut tracker = Tracker {
        config_tol: config.tolerances,
        record: config.record_steps,
        ledger: EntropyLedger::new(state.n_assets(), LedgerReference::new(times[0], &state)),
        last_l: initial.log_potential,
        last_ln_p: initial.ln_price_index,
        last_s: 0.0,
        residual_abs: CompensatedSum::new(),
        max_step_residual: 0.0,
        max_conservation_error: 0.0,
        trade_count: 0,
        steps: Vec::new(),
    };
    if config.record_steps {
        tracker.steps.reserve(path.len() + 1);
        tracker.steps.push(StepRecord {
            t: times[0],
            total_value: initial.total_value,
            log_potential: initial.log_potential,
            ln_price_index: initial.ln_price_index,
            entropy: 0.0,
            trades: TradeSummary {
                count: 0,
                gross_value: 0.0,
            },
            step_residual: 0.0,
            residual: 0.0,
            settlement: false,
        });
    }

    for k in 1..path.len() {
        let marked = state.with_prices(prices[k].clone())?;
        let batch = plan_rebalance(&marked, &config.policy);
        state = tracker.trade_step(k, times[k], marked, &batch, false)?.0;
    }

    let mut settled = false;
    let mut settlement_delta_s = 0.0;
    if config.settle_at_end && state.equilibrium_residual() > config.tolerances.equilibrium_tol {
        let batch = plan_rebalance(&state, &RebalancePolicy::Full);
        let t_end = *times.last().expect("path has at least two ticks");
        let (after, produced) = tracker.trade_step(path.len(), t_end, state, &batch, true)?;
        state = after;
        settled = true;
        settlement_delta_s = produced;
    }

    let final_state = StateSnapshot::capture(*times.last().expect("non-empty"), &state)?;
    let ln_t_ratio = (final_state.total_value / initial.total_value).ln();
    let ln_p_ratio = final_state.ln_price_index - initial.ln_price_index;
    let delta_s = tracker.ledger.total();
    let endpoints_equilibrium = initial.in_equilibrium(config.tolerances.equilibrium_tol)
        && final_state.in_equilibrium(config.tolerances.equilibrium_tol);

    let summary = Summary {
        ln_t_ratio,
        ln_p_ratio,
        delta_s,
        identity_residual: (ln_t_ratio - ln_p_ratio - delta_s).abs(),
        per_asset_entropy: tracker.ledger.per_asset(),
        step_identity_residual: tracker.residual_abs.value(),
        max_step_residual: tracker.max_step_residual,
        trade_count: tracker.trade_count,
        settlement_delta_s,
        settled,
        endpoints_equilibrium,
        max_conservation_error: tracker.max_conservation_error,
    };

    let mut report = SimulationReport {
        config: config.clone(),
        provenance: Provenance::for_path(path),
        initial_state: initial,
        final_state,
        summary,
        steps: config.record_steps.then_some(tracker.steps),
        verification: Verification {
            checks: BTreeMap::new(),
        },
    };
    report.verification = verify_report(&report, StepChecks::IfPresent)?;
    Ok(report)
}

/// Generates the path from `spec` and runs it, recording the spec (and the
/// generator identity for GBM paths) in the report's provenance.
pub fn run_spec(spec: &PathSpec, config: &SimulationConfig) -> Result<SimulationReport> {
    let path = generate(spec)?;
    let mut report = run(&path, config)?;
    report.provenance.source = "generated".into();
    report.provenance.spec = Some(spec.clone());
    if matches!(spec, PathSpec::Gbm(_)) {
        report.provenance.generator = Some(GENERATOR_ID.to_string());
    }
    Ok(report)
}

/// Runs independent jobs in parallel. Results are in input order.
pub fn run_many(jobs: &[(&PricePath, &SimulationConfig)]) -> Vec<Result<SimulationReport>> {
    jobs.par_iter()
        .map(|(path, config)| run(path, config))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepChecks {
    /// Per-step checks need step records; their absence is an error.
    Required,
    /// Per-step checks fall back to summary fields when records are absent.
    IfPresent,
}

fn check(measured_violation: f64, tol: f64, detail: Option<String>) -> CheckResult {
    let slack = tol - measured_violation;
    CheckResult {
        pass: slack >= 0.0,
        slack,
        detail,
    }
}

/// Re-derives every check from the report's own numbers.
pub fn verify_report(report: &SimulationReport, mode: StepChecks) -> Result<Verification> {
    let tol = report.config.tolerances;
    let s = &report.summary;
    let mut checks = BTreeMap::new();

    let equilibrium = report.initial_state.in_equilibrium(tol.equilibrium_tol)
        && report.final_state.in_equilibrium(tol.equilibrium_tol);
    if equilibrium {
        let residual = (s.ln_t_ratio - s.ln_p_ratio - s.delta_s).abs();
        checks.insert(
            CHECK_EQUILIBRIUM_IDENTITY.to_string(),
            check(residual, tol.identity_tol, None),
        );
        let shortfall = s.ln_p_ratio - s.ln_t_ratio;
        checks.insert(
            CHECK_ROI_BOUND.to_string(),
            check(shortfall, tol.entropy_tol, None),
        );
    }

    match (&report.steps, mode) {
        (None, StepChecks::Required) => return Err(Error::MissingStepRecords),
        (None, StepChecks::IfPresent) => {
            let from_summary = Some("from summary; no step records".to_string());
            checks.insert(
                CHECK_STEP_IDENTITY.to_string(),
                check(
                    s.step_identity_residual,
                    tol.identity_tol,
                    from_summary.clone(),
                ),
            );
            checks.insert(
                CHECK_ENTROPY_MONOTONE.to_string(),
                check(-s.delta_s, tol.entropy_tol, from_summary),
            );
        }
        (Some(steps), _) => {
            let mut cumulative = CompensatedSum::new();
            let mut worst_drop = f64::NEG_INFINITY;
            let mut offender = None;
            for (k, pair) in steps.windows(2).enumerate() {
                let (a, b) = (&pair[0], &pair[1]);
                let d_s = b.entropy - a.entropy;
                let r = (b.log_potential - a.log_potential)
                    - (b.ln_price_index - a.ln_price_index)
                    - d_s;
                cumulative.add(r.abs());
                if -d_s > worst_drop {
                    worst_drop = -d_s;
                    if -d_s > tol.entropy_tol {
                        offender = Some(format!("step {} (t={}) has ΔS = {d_s:e}", k + 1, b.t));
                    }
                }
            }
            let first_failure = offender.or_else(|| {
                steps
                    .first()
                    .filter(|r| r.entropy < -tol.entropy_tol)
                    .map(|r| format!("step 0 has S = {:e}", r.entropy))
            });
            let worst_drop = worst_drop.max(steps.first().map_or(0.0, |r| -r.entropy));
            checks.insert(
                CHECK_STEP_IDENTITY.to_string(),
                check(cumulative.value(), tol.identity_tol, None),
            );
            checks.insert(
                CHECK_ENTROPY_MONOTONE.to_string(),
                check(worst_drop, tol.entropy_tol, first_failure),
            );
        }
    }
    Ok(Verification { checks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub settle_at_end: bool,
    pub ln_t_ratio: f64,
    pub ln_p_ratio: f64,
    pub delta_s: f64,
    pub settlement_delta_s: f64,
    pub trade_count: usize,
    pub max_residual: f64,
    pub all_checks_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

const COMPARISON_COLUMNS: [&str; 9] = [
    "policy",
    "settle_at_end",
    "ln_t_ratio",
    "ln_p_ratio",
    "delta_s",
    "settlement_delta_s",
    "trade_count",
    "max_residual",
    "all_checks_pass",
];

impl ComparisonTable {
    fn cells(row: &ComparisonRow) -> [String; 9] {
        [
            row.policy.clone(),
            row.settle_at_end.to_string(),
            row.ln_t_ratio.to_string(),
            row.ln_p_ratio.to_string(),
            row.delta_s.to_string(),
            row.settlement_delta_s.to_string(),
            row.trade_count.to_string(),
            row.max_residual.to_string(),
            row.all_checks_pass.to_string(),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut out = COMPARISON_COLUMNS.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&Self::cells(row).join(","));
            out.push('\n');
        }
        out
    }

    /// Column-aligned text.
    pub fn to_text(&self) -> String {
        let body: Vec<[String; 9]> = self.rows.iter().map(Self::cells).collect();
        let mut widths = COMPARISON_COLUMNS.map(str::len);
        for cells in &body {
            for (w, c) in widths.iter_mut().zip(cells) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let header = COMPARISON_COLUMNS.map(String::from);
        for cells in std::iter::once(&header).chain(&body) {
            let line: Vec<String> = cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Runs each config on the same path (in parallel) and tabulates the results
/// in input order. All configs must share weights and capital.
pub fn compare_policies(path: &PricePath, configs: &[SimulationConfig]) -> Result<ComparisonTable> {
    if let Some(first) = configs.first() {
        for (k, c) in configs.iter().enumerate().skip(1) {
            if c.weights != first.weights {
                return Err(Error::InvalidConfig(format!(
                    "config {k} has different weights from config 0"
                )));
            }
            if c.capital != first.capital {
                return Err(Error::InvalidConfig(format!(
                    "config {k} has different capital from config 0"
                )));
            }
        }
    }
    let reports: Vec<Result<SimulationReport>> = configs.par_iter().map(|c| run(path, c)).collect();
    let rows = reports
        .into_iter()
        .map(|r| {
            let r = r?;
            let s = &r.summary;
            let max_residual = if s.endpoints_equilibrium {
                s.max_step_residual.max(s.identity_residual)
            } else {
                s.max_step_residual
            };
            Ok(ComparisonRow {
                policy: r.config.policy.to_string(),
                settle_at_end: r.config.settle_at_end,
                ln_t_ratio: s.ln_t_ratio,
                ln_p_ratio: s.ln_p_ratio,
                delta_s: s.delta_s,
                settlement_delta_s: s.settlement_delta_s,
                trade_count: s.trade_count,
                max_residual,
                all_checks_pass: r.verification.all_pass(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonTable { rows })
}

//! Acceptance suite. Each criterion runs at its stated tolerance and prints one
//! PASS/FAIL line; the target exits non-zero if any criterion fails.
//!
//! Run with `cargo test -p eot-core --test acceptance`.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use eot_core::entropy::{pair_entropy_first_order, trade_entropy_exact};
use eot_core::error::Error;
use eot_core::path::{
    generate, DeterministicKind, DeterministicSpec, GbmSpec, PathSpec, PricePath,
};
use eot_core::sim::{run, run_many, SimulationConfig, SimulationReport};
use eot_core::state::{default_labels, AssetWeights, Holdings, PortfolioState, PriceVector};
use eot_core::trade::{
    apply_batch, apply_trade, validate_trade, PairwiseTrade, RebalancePolicy, TradeBatch, Violation,
};

type Outcome = std::result::Result<String, String>;

/// Largest relative total-value change seen across trade batches of criteria 1–5.
#[derive(Default)]
struct Conservation {
    max: f64,
    batches: usize,
}

impl Conservation {
    fn report(&mut self, r: &SimulationReport) {
        self.max = self.max.max(r.summary.max_conservation_error);
        self.batches += r.steps.as_ref().map_or(0, |s| s.len() - 1);
    }

    fn batch(&mut self, before: &PortfolioState, after: &PortfolioState) {
        let t = before.total_value();
        self.max = self.max.max((after.total_value() - t).abs() / t);
        self.batches += 1;
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn policies() -> [RebalancePolicy; 4] {
    [
        RebalancePolicy::Full,
        RebalancePolicy::fractional(0.25).unwrap(),
        RebalancePolicy::threshold(0.05).unwrap(),
        RebalancePolicy::BuyAndHold,
    ]
}

fn two_tick_path() -> PricePath {
    PricePath::new(
        vec![0.0, 1.0],
        vec![
            PriceVector::new(vec![1.0, 1.0]).unwrap(),
            PriceVector::new(vec![2.0, 0.5]).unwrap(),
        ],
        default_labels(2),
    )
    .unwrap()
}

fn half_half() -> AssetWeights {
    AssetWeights::from_values(vec![0.5, 0.5]).unwrap()
}

fn gbm(n: usize, steps: usize, sigma: f64, seed: u64) -> PathSpec {
    PathSpec::Gbm(GbmSpec {
        mu: vec![0.0; n],
        sigma: vec![sigma; n],
        correlation: None,
        steps,
        initial: vec![1.0; n],
        seed,
        dt: 1.0,
        labels: None,
    })
}

fn worked_identity(cons: &mut Conservation) -> Outcome {
    let mut config = SimulationConfig::new(half_half(), 1.0, RebalancePolicy::Full);
    config.record_steps = true;
    let r = run(&two_tick_path(), &config).map_err(|e| e.to_string())?;
    cons.report(&r);
    // ln 1.25 = 0.22314355131420975577...
    let ln_1_25 = 0.223_143_551_314_209_76_f64;
    let s = &r.summary;
    ensure((s.ln_t_ratio - ln_1_25).abs() <= 1e-12, || {
        format!("ln_T_ratio = {}", s.ln_t_ratio)
    })?;
    ensure((s.delta_s - ln_1_25).abs() <= 1e-12, || {
        format!("delta_S = {}", s.delta_s)
    })?;
    ensure(s.ln_p_ratio.abs() <= 1e-15, || {
        format!("ln_P_ratio = {:e}", s.ln_p_ratio)
    })?;
    Ok(format!(
        "ln_T_ratio = {:.13}, delta_S = {:.13}, ln_P_ratio = {:e}",
        s.ln_t_ratio, s.delta_s, s.ln_p_ratio
    ))
}

fn generalized_identity(cons: &mut Conservation) -> Outcome {
    let path = generate(&gbm(8, 10_000, 0.02, 20_240_601)).map_err(|e| e.to_string())?;
    let weights =
        AssetWeights::from_values(vec![0.2, 0.15, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1]).unwrap();
    let mut worst_residual = 0.0f64;
    let mut slowest = Duration::ZERO;
    for policy in policies() {
        let mut config = SimulationConfig::new(weights.clone(), 1.0, policy);
        config.record_steps = true;
        let start = Instant::now();
        let r = run(&path, &config).map_err(|e| format!("{policy}: {e}"))?;
        let elapsed = start.elapsed();
        cons.report(&r);
        let residual = r.summary.step_identity_residual;
        ensure(residual <= 1e-9, || {
            format!("{policy}: cumulative residual {residual:e}")
        })?;
        ensure(elapsed < Duration::from_secs(1), || {
            format!("{policy}: runtime {elapsed:?}")
        })?;
        worst_residual = worst_residual.max(residual);
        slowest = slowest.max(elapsed);
    }
    Ok(format!(
        "max cumulative residual {worst_residual:e}, slowest run {slowest:?}"
    ))
}

fn second_law(cons: &mut Conservation) -> Outcome {
    let mut jobs = Vec::new();
    for seed in 0..100u64 {
        let n = 2 + (seed % 7) as usize;
        let sigma = 0.005 + 0.001 * (seed % 30) as f64;
        let path = generate(&gbm(n, 200, sigma, 1_000 + seed)).map_err(|e| e.to_string())?;
        let raw: Vec<f64> = (0..n)
            .map(|i| 1.0 + ((seed as usize + 3 * i) % 5) as f64)
            .collect();
        let total: f64 = raw.iter().sum();
        let weights = AssetWeights::from_values(raw.iter().map(|w| w / total).collect()).unwrap();
        for policy in policies() {
            let mut config = SimulationConfig::new(weights.clone(), 1.0, policy);
            config.record_steps = true;
            jobs.push((path.clone(), config));
        }
    }
    let refs: Vec<(&PricePath, &SimulationConfig)> = jobs.iter().map(|(p, c)| (p, c)).collect();
    let mut min_batch = f64::INFINITY;
    let mut min_roi_slack = f64::INFINITY;
    for (result, (_, config)) in run_many(&refs).into_iter().zip(&jobs) {
        let r = result.map_err(|e| format!("{}: {e}", config.policy))?;
        cons.report(&r);
        let steps = r.steps.as_ref().expect("records requested");
        for w in steps.windows(2) {
            let batch = w[1].entropy - w[0].entropy;
            min_batch = min_batch.min(batch);
            ensure(batch >= -1e-12, || {
                format!("{}: batch entropy {batch:e} at t={}", config.policy, w[1].t)
            })?;
        }
        let s = &r.summary;
        ensure(s.settled || s.endpoints_equilibrium, || {
            format!("{}: not settled", config.policy)
        })?;
        let slack = s.ln_t_ratio - (s.ln_p_ratio - 1e-12);
        min_roi_slack = min_roi_slack.min(slack);
        ensure(slack >= 0.0, || {
            format!("{}: ROI bound violated by {:e}", config.policy, -slack)
        })?;
    }
    Ok(format!(
        "{} runs, min batch entropy {min_batch:e}, min ROI slack {min_roi_slack:e}",
        jobs.len()
    ))
}

fn reversible_limit(cons: &mut Conservation) -> Outcome {
    let mut measured = Vec::new();
    for n in [64usize, 128, 256, 512] {
        let spec = PathSpec::Deterministic(DeterministicSpec {
            kind: DeterministicKind::ReciprocalPair,
            steps: n,
        });
        let path = generate(&spec).map_err(|e| e.to_string())?;
        let mut config = SimulationConfig::new(half_half(), 1.0, RebalancePolicy::Full);
        config.record_steps = true;
        let r = run(&path, &config).map_err(|e| e.to_string())?;
        cons.report(&r);
        let expected = n as f64 * (1.0 / n as f64).cosh().ln();
        let got = r.summary.delta_s;
        ensure((got - expected).abs() <= 1e-10, || {
            format!("N={n}: delta_S {got} vs {expected}")
        })?;
        measured.push(got);
    }
    let ratios: Vec<f64> = measured.windows(2).map(|w| w[0] / w[1]).collect();
    for r in &ratios {
        ensure((1.8..=2.2).contains(r), || format!("ratio {r}"))?;
    }
    Ok(format!(
        "delta_S(512) = {:e}, ratios {:.4?}",
        measured[3], ratios
    ))
}

fn disequilibrium_state() -> PortfolioState {
    // T = (2, 0.5) at unit prices
    PortfolioState::new(
        half_half(),
        PriceVector::new(vec![1.0, 1.0]).unwrap(),
        Holdings::new(vec![1.0, 0.25]).unwrap(),
    )
    .unwrap()
}

fn first_order_vs_exact(cons: &mut Conservation) -> Outcome {
    let state = disequilibrium_state();
    let mut gaps = Vec::new();
    let mut at_full = (0.0, 0.0);
    for k in 0..4 {
        let amount = 0.375 / f64::from(1 << k);
        let trade = PairwiseTrade::new(1, 0, amount).map_err(|e| e.to_string())?;
        let first = pair_entropy_first_order(&state, &trade).map_err(|e| e.to_string())?;
        let after = apply_trade(&state, &trade).map_err(|e| e.to_string())?;
        cons.batch(&state, &after);
        let exact: f64 = trade_entropy_exact(&state, &after)
            .map_err(|e| e.to_string())?
            .iter()
            .sum();
        if k == 0 {
            at_full = (first, exact);
        }
        gaps.push((first - exact).abs());
    }
    ensure((at_full.0 - 0.5625).abs() <= 1e-15, || {
        format!("first order {}", at_full.0)
    })?;
    ensure((at_full.1 - 0.223_143_6).abs() <= 5e-8, || {
        format!("exact {}", at_full.1)
    })?;
    let ratios: Vec<f64> = gaps.windows(2).map(|w| w[0] / w[1]).collect();
    for r in &ratios {
        ensure((3.2..=4.8).contains(r), || format!("gap ratio {r}"))?;
    }
    Ok(format!(
        "0.375: {} vs {:.7}; gap ratios {:.3?}",
        at_full.0, at_full.1, ratios
    ))
}

fn legality() -> Outcome {
    let state = disequilibrium_state();
    let illegal = |buyer, seller, amount| {
        validate_trade(&state, &PairwiseTrade::new(buyer, seller, amount).unwrap())
    };

    let v = illegal(0, 1, 0.01);
    ensure(
        v.violation() == Some(Violation::DirectionViolatesSecondLaw),
        || format!("cold seller: {v:?}"),
    )?;
    let v = illegal(1, 0, 0.6);
    ensure(v.violation() == Some(Violation::CrossingOvershoot), || {
        format!("amount 0.6: {v:?}")
    })?;
    let v = illegal(1, 0, 0.375);
    ensure(v.is_legal(), || format!("amount 0.375: {v:?}"))?;

    let batch = TradeBatch::new(
        2,
        vec![
            PairwiseTrade::new(1, 0, 0.2).unwrap(),
            PairwiseTrade::new(1, 0, 0.3).unwrap(),
        ],
    );
    let before = state.clone();
    match apply_batch(&state, &batch) {
        Err(Error::IllegalTrade {
            position: 1,
            violation: Violation::CrossingOvershoot,
        }) => {}
        other => return Err(format!("overshooting batch: {other:?}")),
    }
    ensure(state == before, || {
        "state changed after aborted batch".into()
    })?;
    Ok("direction and crossing rejected; aborted batch left state unchanged".into())
}

/// Straight-line reimplementation with its own RNG and plain loops.
mod oracle {
    pub struct Rng(u64);

    impl Rng {
        pub fn new(seed: u64) -> Self {
            Rng(seed)
        }

        // splitmix64
        pub fn next_u64(&mut self) -> u64 {
            self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = self.0;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        }

        pub fn uniform(&mut self) -> f64 {
            (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    pub enum Policy {
        Hold,
        Full,
        Fraction(f64),
        Band(f64),
    }

    pub struct Outcome {
        pub ln_t_ratio: f64,
        pub ln_p_ratio: f64,
        pub delta_s: f64,
        pub per_asset: Vec<f64>,
        pub settled: bool,
        pub settlement_delta_s: f64,
    }

    fn gap(u: &[f64], w: &[f64]) -> f64 {
        let mut t = 0.0;
        for x in u {
            t += x;
        }
        let mut worst = 0.0f64;
        for i in 0..u.len() {
            worst = worst.max((u[i] / (w[i] * t) - 1.0).abs());
        }
        worst
    }

    fn rebalance(u: &mut [f64], w: &[f64], alpha: f64, s: &mut [f64]) -> f64 {
        let mut t = 0.0;
        for x in u.iter() {
            t += x;
        }
        let mut produced = 0.0;
        for i in 0..u.len() {
            let target = u[i] + alpha * (w[i] * t - u[i]);
            let ds = w[i] * (target / u[i]).ln();
            s[i] += ds;
            produced += ds;
            u[i] = target;
        }
        produced
    }

    pub fn simulate(
        prices: &[Vec<f64>],
        w: &[f64],
        capital: f64,
        policy: &Policy,
        settle: bool,
    ) -> Outcome {
        let n = w.len();
        let mut h: Vec<f64> = (0..n).map(|i| w[i] * capital / prices[0][i]).collect();
        let mut s = vec![0.0; n];
        let mut u = vec![0.0; n];
        for p in &prices[1..] {
            for i in 0..n {
                u[i] = h[i] * p[i];
            }
            let alpha = match *policy {
                Policy::Hold => 0.0,
                Policy::Full => 1.0,
                Policy::Fraction(a) => a,
                Policy::Band(b) => {
                    if gap(&u, w) > b {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            if alpha > 0.0 {
                rebalance(&mut u, w, alpha, &mut s);
            }
            for i in 0..n {
                h[i] = u[i] / p[i];
            }
        }
        let mut settled = false;
        let mut settlement_delta_s = 0.0;
        if settle && gap(&u, w) > 1e-12 {
            settlement_delta_s = rebalance(&mut u, w, 1.0, &mut s);
            settled = true;
        }
        let last = prices.last().unwrap();
        let mut t_end = 0.0;
        let mut ln_p = 0.0;
        let mut delta_s = 0.0;
        for i in 0..n {
            t_end += u[i];
            ln_p += w[i] * (last[i] / prices[0][i]).ln();
            delta_s += s[i];
        }
        Outcome {
            ln_t_ratio: (t_end / capital).ln(),
            ln_p_ratio: ln_p,
            delta_s,
            per_asset: s,
            settled,
            settlement_delta_s,
        }
    }
}

fn brute_force_oracle() -> Outcome {
    let mut rng = oracle::Rng::new(0x5EED);
    let mut cases = 0;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = 3;
        let raw: Vec<f64> = (0..n).map(|_| 0.1 + rng.uniform()).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let capital = 0.5 + 100.0 * rng.uniform();
        let mut prices = vec![(0..n)
            .map(|_| 0.5 + 1.5 * rng.uniform())
            .collect::<Vec<f64>>()];
        for k in 1..=10 {
            let prev: &Vec<f64> = &prices[k - 1];
            let next = prev
                .iter()
                .map(|p| p * (0.2 * (rng.uniform() - 0.5)).exp())
                .collect();
            prices.push(next);
        }
        let alpha = 0.05 + 0.9 * rng.uniform();
        let band = 0.2 * rng.uniform();

        let path = PricePath::new(
            (0..=10).map(f64::from).collect(),
            prices
                .iter()
                .map(|p| PriceVector::new(p.clone()).unwrap())
                .collect(),
            default_labels(n),
        )
        .map_err(|e| e.to_string())?;
        let weights = AssetWeights::from_values(w.clone()).map_err(|e| e.to_string())?;
        let pairs = [
            (RebalancePolicy::BuyAndHold, oracle::Policy::Hold),
            (RebalancePolicy::Full, oracle::Policy::Full),
            (
                RebalancePolicy::fractional(alpha).unwrap(),
                oracle::Policy::Fraction(alpha),
            ),
            (
                RebalancePolicy::threshold(band).unwrap(),
                oracle::Policy::Band(band),
            ),
        ];
        for (policy, naive) in &pairs {
            for settle in [true, false] {
                let mut config = SimulationConfig::new(weights.clone(), capital, *policy);
                config.settle_at_end = settle;
                let r = run(&path, &config).map_err(|e| format!("{policy}: {e}"))?;
                let o = oracle::simulate(&prices, &w, capital, naive, settle);
                let s = &r.summary;
                let mut diffs = vec![
                    ("ln_T_ratio", s.ln_t_ratio, o.ln_t_ratio),
                    ("ln_P_ratio", s.ln_p_ratio, o.ln_p_ratio),
                    ("delta_S", s.delta_s, o.delta_s),
                    (
                        "settlement_delta_S",
                        s.settlement_delta_s,
                        o.settlement_delta_s,
                    ),
                ];
                for i in 0..n {
                    diffs.push(("per_asset_entropy", s.per_asset_entropy[i], o.per_asset[i]));
                }
                for (name, got, want) in diffs {
                    let d = (got - want).abs();
                    worst = worst.max(d);
                    ensure(d <= 1e-10, || {
                        format!("{policy} settle={settle}: {name} {got} vs {want}")
                    })?;
                }
                ensure(s.settled == o.settled, || {
                    format!("{policy} settle={settle}: settled flag")
                })?;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} cases, max field difference {worst:e}"))
}

fn eot(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_eot"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "eot {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn determinism() -> Outcome {
    let mut artifacts = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let d = dir.path();
        eot(
            d,
            &[
                "generate",
                "--gbm",
                "--assets",
                "4",
                "--steps",
                "500",
                "--sigma",
                "0.02,0.03,0.01,0.02",
                "--seed",
                "7",
                "--out",
                "path.csv",
            ],
        )?;
        eot(
            d,
            &[
                "simulate",
                "--path",
                "path.csv",
                "--weights",
                "0.4,0.3,0.2,0.1",
                "--policy",
                "fractional:0.25",
                "--out",
                "report.json",
                "--steps-out",
                "steps.csv",
            ],
        )?;
        eot(
            d,
            &[
                "compare",
                "--path",
                "path.csv",
                "--weights",
                "0.4,0.3,0.2,0.1",
                "--policy",
                "full",
                "--policy",
                "threshold:0.05",
                "--policy",
                "buyhold",
                "--format",
                "csv",
                "--out",
                "table.csv",
            ],
        )?;
        let read = |name: &str| std::fs::read(d.join(name)).map_err(|e| e.to_string());
        artifacts.push([
            read("path.csv")?,
            read("report.json")?,
            read("steps.csv")?,
            read("table.csv")?,
        ]);
    }
    for (name, (a, b)) in ["path csv", "report json", "steps csv", "compare csv"]
        .iter()
        .zip(artifacts[0].iter().zip(artifacts[1].iter()))
    {
        ensure(a == b, || format!("{name} differs between runs"))?;
        ensure(!a.is_empty(), || format!("{name} is empty"))?;
    }
    Ok("generate, simulate and compare artifacts byte-identical".into())
}

fn main() -> ExitCode {
    let mut cons = Conservation::default();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 worked identity", worked_identity(&mut cons)),
        (
            "2 generalized per-step identity",
            generalized_identity(&mut cons),
        ),
        ("3 second law", second_law(&mut cons)),
        ("4 reversible limit", reversible_limit(&mut cons)),
        ("5 first order vs exact", first_order_vs_exact(&mut cons)),
        ("6 legality enforcement", legality()),
    ];
    let conservation = if cons.max <= 1e-12 {
        Ok(format!(
            "max relative change {:e} over {} batches",
            cons.max, cons.batches
        ))
    } else {
        Err(format!("relative change {:e}", cons.max))
    };
    results.push(("7 conservation", conservation));
    results.push(("8 brute-force oracle", brute_force_oracle()));
    results.push(("9 determinism", determinism()));

    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => println!("FAIL  criterion {name}: {detail}"),
        }
    }
    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Subcommands behind the `pmdp` binary. Each command returns a [`Report`]
//! that renders as CSV (with `# key=value` configuration lines) or JSON.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pmdp::mc::{simulate_strategy, SelectionRule, DEFAULT_SIGMA_CAP};
use pmdp::oracle::{cross_check, ex_post_model, random_tiny_pmdp, CrossCheck, Injection, TinyPreset};
use pmdp::pmdp::{PseudoMdp, ShiftKind};
use pmdp::problems::{card_game_pmdp, lra_pmdp, LraSpec, CARD_COLORS};
use pmdp::utility::{fast_iterate, FastBellman, FastMode, FastOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

pub const EXIT_UNCONVERGED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_ORACLE_FAILURE: i32 = 3;

/// Stake used by `bench`; sweep cost does not depend on it.
pub const BENCH_STAKE: f64 = 0.2;
const DEFAULT_RELATIVE_EPSILON: f64 = 1e-6;
const DEFAULT_DISCOUNTED_EPSILON: f64 = 1e-9;

#[derive(Parser, Debug)]
#[command(name = "pmdp", version, about = "Solve pseudo-MDPs: card game, RANDAO last-revealer attack, benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    pub output: Format,
    /// Write to a file instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
pub struct SolveArgs {
    /// Recentred iteration; reports ΔW and the gain.
    #[arg(long)]
    pub relative: bool,
    /// Discount; defaults to 1 with --relative and 0.99 otherwise.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Stopping threshold; defaults to 1e-6 with --relative and 1e-9 otherwise.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
}

impl SolveArgs {
    fn mode(&self) -> FastMode<f64> {
        let discount = self.gamma.unwrap_or(if self.relative { 1.0 } else { 0.99 });
        if self.relative {
            FastMode::Relative { reference: 0, discount }
        } else {
            FastMode::Discounted { discount }
        }
    }

    fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(if self.relative { DEFAULT_RELATIVE_EPSILON } else { DEFAULT_DISCOUNTED_EPSILON })
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Values of the four-color card game.
    SolveCards(SolveArgs),
    /// Values of the last-revealer attack.
    SolveLra {
        #[arg(long, default_value_t = 32)]
        kappa: usize,
        #[arg(long, default_value_t = 0.3)]
        stake: f64,
        /// Largest tail-run shown in the table.
        #[arg(long, default_value_t = 8)]
        display: usize,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Time fast Bellman sweeps on the last-revealer attack for several κ.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "32,64,128,256,512")]
        kappa_list: Vec<usize>,
        /// Timed sweeps per κ, after two warm-up sweeps.
        #[arg(long, default_value_t = 5)]
        sweeps: usize,
        /// Split each sweep across ex-ante states on the rayon pool.
        #[arg(long)]
        parallel: bool,
    },
    /// Simulate the optimal, myopic, control-max and honest strategies.
    Compare {
        #[arg(long, default_value_t = 32)]
        kappa: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4")]
        stakes: Vec<f64>,
        /// Epochs simulated per (stake, strategy).
        #[arg(long, default_value_t = 1_000_000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// At most 2^cap draws are sampled per epoch.
        #[arg(long, default_value_t = DEFAULT_SIGMA_CAP)]
        sigma_cap: u32,
        #[arg(long, default_value_t = DEFAULT_RELATIVE_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
    },
    /// Cross-check every solver on random tiny pMDPs.
    OracleCheck {
        /// Number of random instances.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check one pMDP from a JSON file instead of random instances.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Discount for --input; random instances draw it from [0.5, 0.95].
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, default_value_t = 1e-8)]
        tolerance: f64,
        /// Largest ex-post state space accepted.
        #[arg(long, default_value_t = 1 << 20)]
        size_limit: u128,
        /// Where to dump failing instances.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_cost_off_by_one: bool,
    },
}

/// Failure with the process exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
    /// Partial output still worth printing (the oracle-check report).
    pub report: Option<Box<Report>>,
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        Self { code: EXIT_INVALID, message: message.into(), report: None }
    }
}

impl From<pmdp::Error> for CliError {
    fn from(e: pmdp::Error) -> Self {
        let code = match e {
            pmdp::Error::Unconverged { .. } => EXIT_UNCONVERGED,
            _ => EXIT_INVALID,
        };
        Self { code, message: e.to_string(), report: None }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Command output: configuration, a CSV table and a JSON body.
#[derive(Clone, Debug)]
pub struct Report {
    pub config: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Trailing `# key=value` lines (results that are not table rows).
    pub footer: Vec<(String, String)>,
    pub json: Value,
}

impl Report {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut out = String::new();
                for (k, v) in &self.config {
                    writeln!(out, "# {k}={v}").unwrap();
                }
                writeln!(out, "{}", self.header.join(",")).unwrap();
                for row in &self.rows {
                    writeln!(out, "{}", row.join(",")).unwrap();
                }
                for (k, v) in &self.footer {
                    writeln!(out, "# {k}={v}").unwrap();
                }
                out
            }
            Format::Json => {
                let config: serde_json::Map<_, _> =
                    self.config.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
                let mut body = json!({ "config": config });
                if let (Value::Object(dst), Value::Object(src)) = (&mut body, &self.json) {
                    dst.extend(src.clone());
                }
                serde_json::to_string_pretty(&body).unwrap() + "\n"
            }
        }
    }
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

/// `x` rounded to three significant digits.
pub fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = (2 - exponent).max(0) as usize;
    let scale = 10f64.powi(exponent - 2);
    format!("{:.*}", decimals, (x / scale).round() * scale)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn run(command: &Command) -> Result<Report, CliError> {
    match command {
        Command::SolveCards(args) => cmd_solve_cards(args),
        Command::SolveLra { kappa, stake, display, solve } => cmd_solve_lra(*kappa, *stake, *display, solve),
        Command::Bench { kappa_list, sweeps, parallel } => cmd_bench(kappa_list, *sweeps, *parallel),
        Command::Compare { kappa, stakes, steps, seed, sigma_cap, epsilon, max_iters } => {
            cmd_compare(&CompareConfig {
                kappa: *kappa,
                stakes: stakes.clone(),
                steps: *steps,
                seed: *seed,
                sigma_cap: *sigma_cap,
                epsilon: *epsilon,
                max_iters: *max_iters,
            })
        }
        Command::OracleCheck { samples, seed, input, gamma, tolerance, size_limit, dump_dir, inject_cost_off_by_one } => {
            let instance = match input {
                Some(path) => Some(read_pmdp(path)?),
                None => None,
            };
            cmd_oracle_check(&OracleConfig {
                samples: *samples,
                seed: *seed,
                instance,
                gamma: *gamma,
                tolerance: *tolerance,
                size_limit: *size_limit,
                dump_dir: dump_dir.clone(),
                injection: if *inject_cost_off_by_one { Injection::CostOffByOne } else { Injection::None },
            })
        }
    }
}

fn read_pmdp(path: &PathBuf) -> Result<PseudoMdp<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

/// Solution of a value table: `W`, pairwise `ΔW_σ(σ') = W(σ') - W(σ)`, gain.
#[derive(Clone, Debug, Serialize)]
pub struct ValueTable {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
    pub differences: Vec<Vec<f64>>,
    pub gain: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub elapsed_ms: f64,
}

fn solve_table(pmdp: &PseudoMdp<f64>, args: &SolveArgs, labels: Vec<String>, shown: usize) -> Result<ValueTable, CliError> {
    let start = Instant::now();
    let run = fast_iterate(pmdp, args.mode(), args.epsilon(), args.max_iters, FastOptions::default())?;
    let elapsed = start.elapsed();
    if !run.converged {
        return Err(pmdp::Error::Unconverged { iterations: run.iterations, residual: run.residual }.into());
    }
    let values: Vec<f64> = run.values[..shown].to_vec();
    let differences = values.iter().map(|from| values.iter().map(|to| to - from).collect()).collect();
    Ok(ValueTable {
        labels,
        values,
        differences,
        gain: run.gain,
        iterations: run.iterations,
        residual: run.residual,
        elapsed_ms: ms(elapsed),
    })
}

fn solve_config(args: &SolveArgs) -> Vec<(String, String)> {
    let (mode, discount) = match args.mode() {
        FastMode::Relative { discount, .. } => ("relative", discount),
        FastMode::Discounted { discount } => ("discounted", discount),
    };
    vec![
        kv("mode", mode),
        kv("gamma", discount),
        kv("epsilon", args.epsilon()),
        kv("max_iters", args.max_iters),
    ]
}

fn table_report(mut config: Vec<(String, String)>, table: ValueTable) -> Report {
    let mut header = vec!["state".to_string(), "value".to_string()];
    header.extend(table.labels.iter().cloned());
    let rows = table
        .labels
        .iter()
        .zip(&table.values)
        .zip(&table.differences)
        .map(|((label, v), diffs)| {
            let mut row = vec![label.clone(), format!("{v:.6}")];
            row.extend(diffs.iter().map(|d| format!("{d:.6}")));
            row
        })
        .collect();
    let mut footer = vec![kv("iterations", table.iterations), kv("residual", format!("{:e}", table.residual))];
    if let Some(g) = table.gain {
        footer.push(kv("gain", format!("{g:.6}")));
    }
    config.push(kv("reference", table.labels[0].clone()));
    Report { config, header, rows, footer, json: serde_json::to_value(&table).unwrap() }
}

/// Card-game values; row `σ` of the table holds `ΔW_σ(σ')`.
pub fn cmd_solve_cards(args: &SolveArgs) -> Result<Report, CliError> {
    let labels = CARD_COLORS.iter().map(|c| c.to_string()).collect();
    let table = solve_table(&card_game_pmdp(), args, labels, CARD_COLORS.len())?;
    let mut config = vec![kv("problem", "cards")];
    config.extend(solve_config(args));
    Ok(table_report(config, table))
}

/// Last-revealer values for tail-runs `0..=display`.
pub fn cmd_solve_lra(kappa: usize, stake: f64, display: usize, args: &SolveArgs) -> Result<Report, CliError> {
    let pmdp = lra_pmdp(LraSpec::new(kappa, stake))?;
    let shown = (display + 1).min(pmdp.num_states());
    let labels = (0..shown).map(|t| t.to_string()).collect();
    let table = solve_table(&pmdp, args, labels, shown)?;
    let mut config = vec![kv("problem", "lra"), kv("kappa", kappa), kv("stake", stake), kv("display", display)];
    config.extend(solve_config(args));
    Ok(table_report(config, table))
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRecord {
    pub kappa: usize,
    pub mean_iter_ms: f64,
    pub log2_ratio: Option<f64>,
    pub sweeps_timed: usize,
    pub grid_ms: f64,
    pub single_draw_ms: f64,
    pub doubling_ms: f64,
    pub grid_len: usize,
    pub parallel: bool,
}

/// Mean wall time of a recentred fast sweep, after two warm-up sweeps.
pub fn bench_kappa(kappa: usize, sweeps: usize, parallel: bool) -> Result<BenchRecord, CliError> {
    let pmdp = lra_pmdp(LraSpec::new(kappa, BENCH_STAKE))?;
    let op = FastBellman::new(&pmdp)?;
    let mut w = vec![0.0; pmdp.num_states()];
    let step = |w: &mut Vec<f64>| -> Result<_, CliError> {
        let start = Instant::now();
        let (mut next, stats) = op.apply(w, 1.0, parallel)?;
        let elapsed = start.elapsed();
        let offset = next[0];
        next.iter_mut().for_each(|v| *v -= offset);
        *w = next;
        Ok((elapsed, stats))
    };
    // The first sweep from W = 0 sees an integer grid and is unrepresentative.
    for _ in 0..2 {
        step(&mut w)?;
    }
    let (mut total, mut grid, mut single, mut doubling) = (Duration::ZERO, Duration::ZERO, Duration::ZERO, Duration::ZERO);
    let mut grid_len = 0;
    for _ in 0..sweeps {
        let (elapsed, stats) = step(&mut w)?;
        total += elapsed;
        grid += stats.grid_time;
        single += stats.single_draw_time;
        doubling += stats.doubling_time;
        grid_len = stats.grid_len;
    }
    let n = sweeps as f64;
    Ok(BenchRecord {
        kappa,
        mean_iter_ms: ms(total) / n,
        log2_ratio: None,
        sweeps_timed: sweeps,
        grid_ms: ms(grid) / n,
        single_draw_ms: ms(single) / n,
        doubling_ms: ms(doubling) / n,
        grid_len,
        parallel,
    })
}

pub fn cmd_bench(kappa_list: &[usize], sweeps: usize, parallel: bool) -> Result<Report, CliError> {
    if kappa_list.is_empty() || kappa_list.windows(2).any(|k| k[0] >= k[1]) {
        return Err(CliError::invalid("--kappa-list must be non-empty and strictly ascending"));
    }
    if sweeps < 5 {
        return Err(CliError::invalid("--sweeps must be at least 5"));
    }
    let mut records: Vec<BenchRecord> = Vec::new();
    for &kappa in kappa_list {
        let mut r = bench_kappa(kappa, sweeps, parallel)?;
        r.log2_ratio = records.last().map(|prev| (r.mean_iter_ms / prev.mean_iter_ms).log2());
        records.push(r);
    }
    let rows = records
        .iter()
        .map(|r| {
            vec![
                r.kappa.to_string(),
                sig3(r.mean_iter_ms),
                r.log2_ratio.map(sig3).unwrap_or_default(),
                sig3(r.grid_ms),
                sig3(r.single_draw_ms),
                sig3(r.doubling_ms),
            ]
        })
        .collect();
    let list: Vec<String> = kappa_list.iter().map(|k| k.to_string()).collect();
    Ok(Report {
        config: vec![
            kv("kappa_list", list.join(";")),
            kv("stake", BENCH_STAKE),
            kv("warmup_sweeps", 2),
            kv("timed_sweeps", sweeps),
            kv("parallel", parallel),
        ],
        header: ["kappa", "mean_iter_ms", "log2_ratio", "grid_ms", "single_draw_ms", "doubling_ms"]
            .map(String::from)
            .to_vec(),
        rows,
        footer: Vec::new(),
        json: json!({ "records": records }),
    })
}

#[derive(Clone, Debug)]
pub struct CompareConfig {
    pub kappa: usize,
    pub stakes: Vec<f64>,
    pub steps: usize,
    pub seed: u64,
    pub sigma_cap: u32,
    pub epsilon: f64,
    pub max_iters: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct StrategyRow {
    pub strategy: String,
    /// `(g - κp) / κ`: extra reward per slot over honest play.
    pub normalized_additional_reward: f64,
    pub std_error: f64,
    pub mean_reward_per_epoch: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StrategyReport {
    pub stake: f64,
    pub kappa: usize,
    pub seed: u64,
    pub gain: f64,
    pub strategies: Vec<StrategyRow>,
}

/// Solves the relative values at each stake, then simulates every rule.
/// Stream `4·i + j` of the seeded generator drives stake `i`, rule `j`.
pub fn compare_strategies(config: &CompareConfig) -> Result<Vec<StrategyReport>, CliError> {
    if let Some(p) = config.stakes.iter().find(|p| !(**p > 0.0 && **p < 0.5)) {
        return Err(CliError::invalid(format!("stake {p} outside (0, 0.5)")));
    }
    let mut reports = Vec::new();
    for (i, &stake) in config.stakes.iter().enumerate() {
        let pmdp = lra_pmdp(LraSpec::new(config.kappa, stake))?;
        let mode = FastMode::Relative { reference: 0, discount: 1.0 };
        let run = fast_iterate(&pmdp, mode, config.epsilon, config.max_iters, FastOptions::default())?;
        if !run.converged {
            return Err(pmdp::Error::Unconverged { iterations: run.iterations, residual: run.residual }.into());
        }
        let rules = [
            SelectionRule::Optimal { values: run.values.clone(), discount: 1.0 },
            SelectionRule::Myopic,
            SelectionRule::ControlMax,
            SelectionRule::Honest,
        ];
        let honest = config.kappa as f64 * stake;
        let mut strategies = Vec::new();
        for (j, rule) in rules.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream((4 * i + j) as u64);
            let sim = simulate_strategy(&pmdp, rule, config.steps, config.sigma_cap, &mut rng)?;
            strategies.push(StrategyRow {
                strategy: rule.name().to_string(),
                normalized_additional_reward: (sim.mean_reward_per_epoch - honest) / config.kappa as f64,
                std_error: sim.std_error / config.kappa as f64,
                mean_reward_per_epoch: sim.mean_reward_per_epoch,
            });
        }
        reports.push(StrategyReport {
            stake,
            kappa: config.kappa,
            seed: config.seed,
            gain: run.gain.unwrap_or(f64::NAN),
            strategies,
        });
    }
    Ok(reports)
}

pub fn cmd_compare(config: &CompareConfig) -> Result<Report, CliError> {
    let reports = compare_strategies(config)?;
    let rows = reports
        .iter()
        .flat_map(|r| {
            r.strategies.iter().map(move |s| {
                vec![
                    r.stake.to_string(),
                    s.strategy.clone(),
                    format!("{:.6e}", s.normalized_additional_reward),
                    format!("{:.3e}", s.std_error),
                ]
            })
        })
        .collect();
    let stakes: Vec<String> = config.stakes.iter().map(|s| s.to_string()).collect();
    Ok(Report {
        config: vec![
            kv("kappa", config.kappa),
            kv("stakes", stakes.join(";")),
            kv("mode", "relative"),
            kv("gamma", 1.0),
            kv("epsilon", config.epsilon),
            kv("max_iters", config.max_iters),
            kv("steps", config.steps),
            kv("seed", config.seed),
            kv("sigma_cap", config.sigma_cap),
        ],
        header: ["stake", "strategy", "normalized_additional_reward", "std_error"].map(String::from).to_vec(),
        rows,
        footer: Vec::new(),
        json: json!({ "reports": reports }),
    })
}

#[derive(Clone, Debug)]
pub struct OracleConfig {
    pub samples: usize,
    pub seed: u64,
    /// A fixed instance replaces the random ones.
    pub instance: Option<PseudoMdp<f64>>,
    pub gamma: f64,
    pub tolerance: f64,
    pub size_limit: u128,
    pub dump_dir: Option<PathBuf>,
    pub injection: Injection,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleOutcome {
    pub instance: usize,
    pub kind: String,
    pub check: CrossCheck,
    pub passed: bool,
}

/// A failing instance together with its ex-post reduction.
#[derive(Clone, Debug, Serialize)]
pub struct OracleFailure {
    pub instance: usize,
    pub pmdp: PseudoMdp<f64>,
    pub ex_post: pmdp::FiniteMdp,
    pub check: CrossCheck,
}

pub fn cmd_oracle_check(config: &OracleConfig) -> Result<Report, CliError> {
    let preset = TinyPreset::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let instances: Vec<(String, PseudoMdp<f64>, f64)> = match &config.instance {
        Some(p) => vec![("input".into(), p.clone(), config.gamma)],
        None => (0..config.samples)
            .map(|i| {
                let kind = if i % 2 == 0 { ShiftKind::Constant } else { ShiftKind::Linear };
                let p = random_tiny_pmdp(&mut rng, &preset, kind);
                let (lo, hi) = preset.discount_range;
                let gamma = rng.random_range(lo..hi);
                (format!("{kind:?}").to_lowercase(), p, gamma)
            })
            .collect(),
    };
    // Reject oversized instances before any solver runs.
    for (i, (_, p, _)) in instances.iter().enumerate() {
        match p.ex_post_state_count() {
            Some(size) if size <= config.size_limit => {}
            size => {
                let size = size.map_or("more than 2^128".to_string(), |s| s.to_string());
                return Err(CliError::invalid(format!(
                    "instance {i}: ex-post space has {size} states, above the limit {}",
                    config.size_limit
                )));
            }
        }
    }
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (i, (kind, p, gamma)) in instances.into_iter().enumerate() {
        let check = cross_check(&p, gamma, config.size_limit, config.injection)?;
        let passed = check.passed(config.tolerance);
        if !passed {
            failures.push(OracleFailure {
                instance: i,
                ex_post: ex_post_model(&p, config.size_limit)?,
                pmdp: p,
                check: check.clone(),
            });
        }
        outcomes.push(OracleOutcome { instance: i, kind, check, passed });
    }
    if let Some(dir) = &config.dump_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::invalid(format!("{}: {e}", dir.display())))?;
        for f in &failures {
            let path = dir.join(format!("oracle-failure-{}.json", f.instance));
            let body = serde_json::to_string_pretty(f).unwrap();
            std::fs::write(&path, body).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        }
    }
    let worst = outcomes.iter().map(|o| o.check.max_gap).fold(0.0, f64::max);
    let rows = outcomes
        .iter()
        .map(|o| {
            vec![
                o.instance.to_string(),
                o.kind.clone(),
                format!("{:.4}", o.check.discount),
                format!("{:.3e}", o.check.max_gap),
                if o.passed { "pass" } else { "fail" }.to_string(),
            ]
        })
        .collect();
    let report = Report {
        config: vec![
            kv("samples", outcomes.len()),
            kv("seed", config.seed),
            kv("input", config.instance.is_some()),
            kv("tolerance", config.tolerance),
            kv("size_limit", config.size_limit),
            kv("max_states", preset.max_states),
            kv("max_rewards", preset.max_rewards),
            kv("draw_choices", preset.draw_choices.iter().map(u64::to_string).collect::<Vec<_>>().join(";")),
        ],
        header: ["instance", "kind", "gamma", "max_gap", "status"].map(String::from).to_vec(),
        rows,
        footer: vec![kv("failures", failures.len()), kv("max_gap", format!("{worst:e}"))],
        json: json!({ "outcomes": outcomes, "failures": failures }),
    };
    if failures.is_empty() {
        Ok(report)
    } else {
        let dump = serde_json::to_string_pretty(&failures[0]).unwrap();
        Err(CliError {
            code: EXIT_ORACLE_FAILURE,
            message: format!(
                "{} of {} instances disagree beyond {}; first failure:\n{dump}",
                failures.len(),
                outcomes.len(),
                config.tolerance
            ),
            report: Some(Box::new(report)),
        })
    }
}

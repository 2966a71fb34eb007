use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use eics::baselines::{self, EacReport, EarReport};
use eics::circuit::{Circuit, Partition};
use eics::ei::{EiConfig, EiMode, MacroMap};
use eics::error::{EicsError, Result};
use eics::io;
use eics::score::{eics_score, CshSource, EicsConfig, Lambda2Config};
use eics::sheaf::{self, EdgeWeighting, WeightScheme};
use eics::toy::{self, ToyConfig};

#[derive(Debug, Parser)]
#[command(
    name = "eics",
    version,
    about = "Effective-information consistency scores for linear circuits"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one circuit and activation state.
    Score(ScoreArgs),
    /// Run the six-node toy noise sweep.
    ToySweep(ToyArgs),
    /// Spectral gap of the sheaf Laplacian.
    Lambda2(Lambda2Args),
    /// EAC and EAR baselines.
    Baselines(BaselineArgs),
    /// Check a circuit file (and optionally activations) without scoring.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Exact,
    Fast,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MacroArg {
    CircuitIo,
    PartSum,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CshArg {
    Raw,
    Projected,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightArg {
    Unit,
    InverseOpNorm,
}

impl From<WeightArg> for EdgeWeighting {
    fn from(w: WeightArg) -> Self {
        match w {
            WeightArg::Unit => EdgeWeighting::unit(),
            WeightArg::InverseOpNorm => EdgeWeighting::inverse_operator_norm(),
        }
    }
}

#[derive(Debug, Args)]
pub struct EiArgs {
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 6)]
    pub probes_part: usize,
    #[arg(long, default_value_t = 10)]
    pub probes_macro: usize,
    #[arg(long, default_value_t = 32)]
    pub lanczos_steps: usize,
    #[arg(long, env = "EICS_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Whole-circuit map: declared inputs to outputs, or the sum of parts.
    #[arg(long = "macro", value_enum, default_value = "circuit-io")]
    pub macro_map: MacroArg,
}

impl EiArgs {
    fn config(&self) -> EiConfig {
        EiConfig {
            alpha: self.alpha,
            epsilon: self.epsilon,
            mode: match self.mode {
                ModeArg::Exact => EiMode::Exact,
                ModeArg::Fast => EiMode::Fast,
            },
            probes_part: self.probes_part,
            probes_macro: self.probes_macro,
            lanczos_steps: self.lanczos_steps,
            seed: self.seed,
            macro_map: match self.macro_map {
                MacroArg::CircuitIo => MacroMap::CircuitIo,
                MacroArg::PartSum => MacroMap::PartSum,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub circuit: PathBuf,
    #[arg(long)]
    pub activations: PathBuf,
    /// `per-node`, `embedded` (from the circuit file) or a partition file.
    #[arg(long, default_value = "per-node")]
    pub partition: String,
    #[command(flatten)]
    pub ei: EiArgs,
    #[arg(long, value_enum, default_value = "raw")]
    pub csh_on: CshArg,
    /// Also report the Laplacian spectral gap.
    #[arg(long)]
    pub lambda2: bool,
    #[arg(long, value_enum, default_value = "inverse-op-norm")]
    pub weighting: WeightArg,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    /// Result file; nothing is written without it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record the wall-clock time in the result file.
    #[arg(long)]
    pub timestamp: bool,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100)]
    pub n_seeds: usize,
    #[arg(long, default_value_t = 1000)]
    pub base_seed: u64,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.9)]
    pub align: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Sweep table; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    /// gnuplot script for the plot data.
    #[arg(long, requires = "plot_data")]
    pub gnuplot: Option<PathBuf>,
    /// Result file with the config snapshot and every row.
    #[arg(long)]
    pub result: Option<PathBuf>,
    #[arg(long)]
    pub timestamp: bool,
}

#[derive(Debug, Args)]
pub struct Lambda2Args {
    #[arg(long)]
    pub circuit: PathBuf,
    #[arg(long, value_enum, default_value = "inverse-op-norm")]
    pub weighting: WeightArg,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub timestamp: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub circuit: PathBuf,
    /// Single state for EAC.
    #[arg(long)]
    pub activations: Option<PathBuf>,
    /// Sample batch for EAR.
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// EAR ridge; defaults to 1e-8 times the mean Gram diagonal per edge.
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub timestamp: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub circuit: PathBuf,
    #[arg(long)]
    pub activations: Option<PathBuf>,
}

fn stamp(on: bool) -> Option<String> {
    on.then(|| {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        format!("unix:{secs}")
    })
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn load_valid(path: &Path) -> Result<io::LoadedCircuit> {
    let loaded = io::load_circuit(path)?;
    loaded.circuit.ensure_valid()?;
    Ok(loaded)
}

fn resolve_partition(choice: &str, loaded: &io::LoadedCircuit) -> Result<Partition> {
    let p = match choice {
        "per-node" => Partition::per_node(&loaded.circuit),
        "embedded" => loaded
            .partition
            .clone()
            .ok_or_else(|| EicsError::Partition("circuit file has no embedded partition".into()))?,
        path => io::load_partition(path)?,
    };
    p.validate(&loaded.circuit)?;
    Ok(p)
}

fn finite(name: &str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(EicsError::Numeric(format!("{name} is not finite")))
    }
}

#[derive(Serialize)]
struct ScoreRun<'a> {
    command: &'static str,
    circuit: String,
    activations: String,
    partition: &'a str,
    eics: &'a EicsConfig,
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let loaded = load_valid(&args.circuit)?;
    let a = io::load_activations(&args.activations)?;
    let partition = resolve_partition(&args.partition, &loaded)?;
    let config = EicsConfig {
        ei: args.ei.config(),
        csh_source: match args.csh_on {
            CshArg::Raw => CshSource::Raw,
            CshArg::Projected => CshSource::Projected,
        },
        lambda2: args.lambda2.then(|| Lambda2Config {
            weighting: args.weighting.into(),
            beta: args.beta,
        }),
    };
    let r = eics_score(&loaded.circuit, &a, &partition, &config)?;
    finite("score", r.score)?;
    finite("c_sh", r.c_sh)?;
    if let Some(out) = &args.out {
        let run = ScoreRun {
            command: "score",
            circuit: path_str(&args.circuit),
            activations: path_str(&args.activations),
            partition: &args.partition,
            eics: &config,
        };
        io::save_result(out, &run, &r, stamp(args.timestamp))?;
    }
    let mut line = format!(
        "score={} c_sh={} emergence={} ei_macro={} mode={:?} seed={}",
        r.score, r.c_sh, r.emergence, r.ei.ei_macro, config.ei.mode, config.ei.seed
    );
    if let Some(se) = r.ei.delta_std_error {
        line.push_str(&format!(" delta_se={se}"));
    }
    if let Some(l2) = r.lambda2 {
        line.push_str(&format!(" lambda2={l2}"));
    }
    println!("{line}");
    Ok(())
}

fn write_or_print(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_toy_sweep(args: &ToyArgs) -> Result<()> {
    let cfg = ToyConfig {
        dim: args.dim,
        align: args.align,
        alpha: args.alpha,
        taus: args.taus.clone().unwrap_or_else(toy::default_taus),
        n_seeds: args.n_seeds,
        base_seed: args.base_seed,
        epsilon: args.epsilon,
    };
    let rows = toy::sweep_with_jobs(&cfg, args.jobs)?;
    for r in &rows {
        finite("eics mean", r.eics.mean)?;
    }
    write_or_print(args.out.as_ref(), &toy::sweep_csv(&rows))?;
    if let Some(p) = &args.plot_data {
        std::fs::write(p, toy::plot_data_csv(&rows))?;
        if let Some(g) = &args.gnuplot {
            let png = p.with_extension("png");
            std::fs::write(g, toy::gnuplot_script(&path_str(p), &path_str(&png)))?;
        }
    }
    if let Some(p) = &args.result {
        io::save_result(p, &cfg, &rows, stamp(args.timestamp))?;
    }
    if rows.iter().any(|r| !r.se_defined) {
        eprintln!("warning: standard errors are undefined with --n-seeds 1 and are reported as 0");
    }
    let first = &rows[0];
    let last = &rows[rows.len() - 1];
    let summary = format!(
        "toy-sweep rows={} seeds={} eics[tau={}]={} eics[tau={}]={}",
        rows.len(),
        cfg.n_seeds,
        first.tau,
        first.eics.mean,
        last.tau,
        last.eics.mean
    );
    // keep stdout a clean CSV when the table goes there
    if args.out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn cmd_lambda2(args: &Lambda2Args) -> Result<()> {
    let loaded = load_valid(&args.circuit)?;
    let weighting: EdgeWeighting = args.weighting.into();
    let rep = sheaf::lambda2(&loaded.circuit, &weighting, args.beta)?;
    finite("lambda2", rep.lambda2)?;
    if !rep.connected {
        eprintln!("warning: circuit is disconnected; lambda2 is reported as beta");
    }
    if let Some(out) = &args.out {
        #[derive(Serialize)]
        struct Run {
            command: &'static str,
            circuit: String,
            weighting: WeightScheme,
            beta: f64,
        }
        let run = Run {
            command: "lambda2",
            circuit: path_str(&args.circuit),
            weighting: weighting.scheme,
            beta: args.beta,
        };
        io::save_result(out, &run, &rep, stamp(args.timestamp))?;
    }
    let norms: Vec<String> = rep
        .edge_operator_norms
        .iter()
        .map(|n| n.to_string())
        .collect();
    println!(
        "lambda2={} weighting={:?} beta={} connected={} edge_norms=[{}]",
        rep.lambda2,
        rep.weighting,
        rep.beta,
        rep.connected,
        norms.join(",")
    );
    Ok(())
}

#[derive(Serialize)]
struct BaselineReport {
    eac: Option<EacReport>,
    ear: Option<EarReport>,
}

fn cmd_baselines(args: &BaselineArgs) -> Result<()> {
    if args.activations.is_none() && args.batch.is_none() {
        return Err(EicsError::InvalidArgument(
            "pass --activations and/or --batch".into(),
        ));
    }
    let loaded = load_valid(&args.circuit)?;
    let eac = match &args.activations {
        Some(p) => Some(baselines::eac(&loaded.circuit, &io::load_activations(p)?)?),
        None => None,
    };
    let ear = match &args.batch {
        Some(p) => Some(baselines::ear(
            &loaded.circuit,
            &io::load_batch(p)?,
            args.ridge,
        )?),
        None => None,
    };
    let mut line = String::from("baselines");
    if let Some(e) = &eac {
        line.push_str(&format!(" eac={}", finite("eac", e.value)?));
    }
    if let Some(e) = &ear {
        line.push_str(&format!(" ear={}", finite("ear", e.value)?));
    }
    let report = BaselineReport { eac, ear };
    if let Some(out) = &args.out {
        #[derive(Serialize)]
        struct Run {
            command: &'static str,
            circuit: String,
            activations: Option<String>,
            batch: Option<String>,
            ridge: Option<f64>,
        }
        let run = Run {
            command: "baselines",
            circuit: path_str(&args.circuit),
            activations: args.activations.as_deref().map(path_str),
            batch: args.batch.as_deref().map(path_str),
            ridge: args.ridge,
        };
        io::save_result(out, &run, &report, stamp(args.timestamp))?;
    }
    println!("{line}");
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let loaded = io::load_circuit(&args.circuit)?;
    let report = loaded.circuit.validate();
    if !report.is_valid() {
        for v in &report.violations {
            eprintln!("violation: {v}");
        }
        return Err(EicsError::InvalidCircuit(report.violations));
    }
    if let Some(p) = &loaded.partition {
        p.validate(&loaded.circuit)?;
    }
    if let Some(path) = &args.activations {
        io::load_activations(path)?.check_against(&loaded.circuit)?;
    }
    println!("valid: {}", summary(&loaded.circuit));
    Ok(())
}

fn summary(c: &Circuit) -> String {
    format!(
        "{} nodes, {} edges, state dim {}",
        c.nodes().len(),
        c.edges().len(),
        c.state_dim()
    )
}

/// Runs a parsed command and maps errors to exit codes.
pub fn run(cli: Cli) -> i32 {
    let out = match &cli.command {
        Command::Score(a) => cmd_score(a),
        Command::ToySweep(a) => cmd_toy_sweep(a),
        Command::Lambda2(a) => cmd_lambda2(a),
        Command::Baselines(a) => cmd_baselines(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match out {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                3
            } else {
                2
            }
        }
    }
}

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hmm_icl::construct::{assemble_stack, Beta1};
use hmm_icl::context::build_context;
use hmm_icl::harness::measure::sample_prefixes;
use hmm_icl::harness::{
    measure_errors, sweep, verify_config, write_sweep_csv, ConstructionSpec, ExperimentConfig, HmmSource, SweepGrid,
};
use hmm_icl::hmm::{estimate_gamma, LowRankHmm, Mixture, MixtureConfig};
use hmm_icl::kernel::forward_trace;
use hmm_icl::rng::{stream_rng, streams};
use hmm_icl::{Error, Result};

#[derive(Parser)]
#[command(name = "hmm-icl", version, about = "Constructed-Transformer in-context learning of low-rank HMMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random low-rank HMM and print it as JSON.
    GenHmm {
        #[arg(long, default_value_t = 4)]
        num_hidden: usize,
        #[arg(long, default_value_t = 3)]
        num_obs: usize,
        #[arg(long, default_value_t = 2)]
        rank: usize,
        #[arg(long, default_value_t = 1.0)]
        concentration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also report the observability estimate on stderr.
        #[arg(long)]
        gamma: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a task mixture and print its metadata.
    GenMixture {
        /// Mixture config JSON; desk-scale defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the full-scale configuration (8192 tasks).
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write every task HMM as a JSON array.
        #[arg(long)]
        tasks_out: Option<PathBuf>,
    },
    /// Assemble the Transformer for a config.
    BuildStack {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Write the stack and feature map as JSON.
        #[arg(long)]
        dump_stack: Option<PathBuf>,
        /// Write every hidden state of the config's first prompt as CSV into
        /// this directory.
        #[arg(long)]
        trace_layers: Option<PathBuf>,
    },
    /// Run the oracle-equivalence checks on a config.
    Verify {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Measure the error decomposition for a config.
    Measure {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure a grid of configs and write CSV.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Grid JSON with optional lists `n`, `l`, `steps`, `k`.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        grid_n: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        grid_l: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        grid_steps: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        grid_k: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Config file plus overrides.
#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config JSON; the worked tiny instance otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Copy-layer inverse temperature; omit for hardmax.
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    num_mc: Option<usize>,
    /// Skip running the Transformer on every prompt in `measure`/`sweep`.
    #[arg(long)]
    no_stack: bool,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => tiny_config(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.l {
            cfg.l = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.m {
            cfg.m = v;
        }
        if let Some(v) = self.steps {
            cfg.construction.steps = v;
        }
        if let Some(v) = self.lr {
            cfg.construction.lr = Some(v);
        }
        if let Some(v) = self.beta1 {
            cfg.construction.beta1 = Beta1::Finite(v);
        }
        if let Some(v) = self.num_mc {
            cfg.num_mc = v;
        }
        if self.no_stack {
            cfg.evaluate_stack = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn tiny_config() -> ExperimentConfig {
    ExperimentConfig {
        hmm: HmmSource::Random { num_hidden: 3, num_obs: 2, rank: 2, concentration: 1.0, seed: 0 },
        n: 2,
        l: 3,
        k: 4,
        m: 1,
        width: None,
        construction: ConstructionSpec { beta1: Beta1::Hard, beta2: None, steps: 2, lr: None },
        num_mc: 200,
        alpha_floor: 0.0,
        seed: 0,
        linear_reference_samples: 100_000,
        evaluate_stack: true,
    }
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenHmm { num_hidden, num_obs, rank, concentration, seed, gamma, out } => {
            let hmm = LowRankHmm::new_low_rank(num_hidden, num_obs, rank, concentration, seed)?;
            if gamma {
                let g = estimate_gamma(&hmm, 2000, &mut stream_rng(seed, streams::GAMMA))?;
                eprintln!("gamma estimate {} (vertex {}, sampled {})", g.estimate, g.vertex_min, g.sampled_min);
            }
            write_text(out.as_deref(), &hmm.to_json()?)?;
            Ok(true)
        }
        Command::GenMixture { config, full, seed, tasks_out } => {
            let cfg = match config {
                Some(path) => serde_json::from_str::<MixtureConfig>(&std::fs::read_to_string(path)?)?,
                None if full => MixtureConfig::full_scale(seed),
                None => MixtureConfig::desk_scale(seed),
            };
            let mixture = Mixture::new(cfg)?;
            println!("{}", serde_json::to_string_pretty(&mixture.metadata())?);
            if let Some(path) = tasks_out {
                let docs: Vec<_> = mixture.tasks().iter().map(LowRankHmm::to_document).collect();
                serde_json::to_writer(BufWriter::new(File::create(path)?), &docs)?;
            }
            Ok(true)
        }
        Command::BuildStack { exp, dump_stack, trace_layers } => {
            let cfg = exp.resolve()?;
            let (hmm, _) = cfg.hmm.resolve(cfg.seed)?;
            let layout = cfg.layout(hmm.num_obs())?;
            let built = assemble_stack(&cfg.construction_config(layout)?)?;
            println!("{}", serde_json::to_string_pretty(&built.metadata)?);
            if let Some(path) = dump_stack {
                std::fs::write(path, built.to_json()?)?;
            }
            if let Some(dir) = trace_layers {
                std::fs::create_dir_all(&dir)?;
                let mut rng = stream_rng(cfg.seed, streams::DEMOS);
                let demos = (0..layout.n).map(|_| Ok(hmm.sample_sequence(layout.l, &mut rng)?.obs)).collect::<Result<Vec<_>>>()?;
                let prefix = sample_prefixes(&hmm, &layout, 1, cfg.seed)?.remove(0);
                let m0 = build_context(&demos, &prefix, &layout)?;
                for (i, h) in forward_trace(&m0.data, &built.stack)?.iter().enumerate() {
                    let label = if i == 0 { "input" } else { built.stack.layers[i - 1].label() };
                    let file = File::create(dir.join(format!("layer_{i:02}_{label}.csv")))?;
                    hmm_icl::context::ContextMatrix { data: h.clone(), layout }.write_csv(BufWriter::new(file))?;
                }
            }
            Ok(true)
        }
        Command::Verify { exp } => {
            let report = verify_config(&exp.resolve()?)?;
            for c in &report.checks {
                println!("{} {:<28} {:e} (tol {:e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
            }
            Ok(report.all_pass())
        }
        Command::Measure { exp, out } => {
            let report = measure_errors(&exp.resolve()?)?;
            write_text(out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
            let stack_ok = report.stack_max_deviation.is_none_or(|d| d < 1e-8);
            Ok(report.triangle_ok && stack_ok)
        }
        Command::Sweep { exp, grid, grid_n, grid_l, grid_steps, grid_k, out } => {
            let base = exp.resolve()?;
            let mut g = match grid {
                Some(path) => serde_json::from_str::<SweepGrid>(&std::fs::read_to_string(path)?)?,
                None => SweepGrid::default(),
            };
            for (dst, src) in [(&mut g.n, grid_n), (&mut g.l, grid_l), (&mut g.steps, grid_steps), (&mut g.k, grid_k)] {
                if !src.is_empty() {
                    *dst = src;
                }
            }
            let rows = sweep(&g, &base)?;
            match out {
                Some(path) => write_sweep_csv(&rows, &base, BufWriter::new(File::create(path)?))?,
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    write_sweep_csv(&rows, &base, &mut lock)?;
                    lock.flush()?;
                }
            }
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            if failed > 0 {
                eprintln!("{failed} of {} cells failed", rows.len());
            }
            Ok(failed == 0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Io(_)) {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

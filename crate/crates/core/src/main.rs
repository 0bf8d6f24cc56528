use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use upsilon_core::config::{ConfigError, RawConfig};
use upsilon_core::machine::bits::BitString;
use upsilon_core::machine::complexity::kraft_sum;
use upsilon_core::machine::program::{decode_program, enumerate_programs, OpcodeTable};
use upsilon_core::report::{self, Manifest, RunError};
use upsilon_core::study::{run_example_study, write_study, StudyParams};

#[derive(Parser)]
#[command(name = "upsilon", version, about = "Score agents on a simplicity-weighted ensemble of environments")]
struct Cli {
    /// Worker threads (default: one per core). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the benchmark described by a TOML config file.
    Run {
        config: PathBuf,
        /// Write outputs here instead of the configured output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-cycle reward curves and discounted values of opt, pi1 and pi2 on the copy environment.
    ExampleStudy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        episodes: u64,
        #[arg(long, default_value_t = 6000)]
        cycles: u64,
    },
    /// Print every valid program of at most L bits as fixture lines.
    Enumerate {
        #[arg(long = "max-len")]
        max_len: u32,
        #[arg(long)]
        opcode_table: Option<String>,
    },
    /// Decode a fixture file and print each program's instructions.
    Decode {
        fixtures: PathBuf,
        #[arg(long)]
        opcode_table: Option<String>,
    },
    /// Score the configured agents under several opcode tables.
    Sensitivity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        permutations: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    /// The reader went away; nothing left to report.
    Closed,
    Usage(String),
    Runtime(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => Failure::Usage(c.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::BrokenPipe {
            Failure::Closed
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn table(name: Option<&str>) -> Result<OpcodeTable, Failure> {
    match name {
        Some(s) => s.parse().map_err(|e| Failure::Usage(format!("invalid opcode table: {e}"))),
        None => Ok(OpcodeTable::canonical()),
    }
}

fn load(path: &Path) -> Result<(String, upsilon_core::config::RunConfig), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Read { path: path.into(), source })?;
    let config = RawConfig::parse(&text)?.resolve()?;
    Ok((text, config))
}

fn execute(command: Command) -> Result<(), Failure> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match command {
        Command::Run { config, out: dir } => {
            let (text, cfg) = load(&config)?;
            let dir = dir.unwrap_or_else(|| cfg.output_dir.clone());
            let r = report::run(&cfg)?;
            report::write_outputs(&dir, &r, &Manifest::new(&text, &cfg))?;
            for a in &r.agents {
                writeln!(out, "{:<12} {:.6} ± {:.6}  failed {}", a.agent, a.upsilon, a.ci_half_width, a.episodes_failed)?;
            }
            for p in &r.comparisons {
                let mark = if p.significant { "significant" } else { "not significant" };
                writeln!(out, "{} - {}: {:+.6} [{:+.6}, {:+.6}] {mark}", p.first, p.second, p.difference, p.ci_low, p.ci_high)?;
            }
            writeln!(out, "wrote {}", dir.display())?;
        }
        Command::ExampleStudy { out: dir, seed, episodes, cycles } => {
            let params = StudyParams { episodes, cycles, ..StudyParams::new(seed) };
            let study = run_example_study(&params).map_err(|e| Failure::Usage(e.to_string()))?;
            write_study(&dir, &study)?;
            for p in &study.report.phases {
                writeln!(out, "{}", p.statement)?;
            }
            for d in &study.report.discounted {
                writeln!(out, "gamma {} {:<4} {:.6} ± {:.6}", d.gamma, d.agent, d.value_mean, d.value_ci)?;
            }
            writeln!(out, "wrote {}", dir.display())?;
        }
        Command::Enumerate { max_len, opcode_table } => {
            let t = table(opcode_table.as_deref())?;
            let programs = enumerate_programs(max_len, &t);
            for p in &programs {
                writeln!(out, "{p}")?;
            }
            eprintln!("{} programs, kraft sum {}", programs.len(), kraft_sum(&programs).to_f64());
        }
        Command::Decode { fixtures, opcode_table } => {
            let t = table(opcode_table.as_deref())?;
            let file = std::fs::File::open(&fixtures)?;
            for (i, line) in io::BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.split('#').next().unwrap_or("").trim().is_empty() {
                    continue;
                }
                let bits = BitString::parse_fixture(&line).map_err(|e| Failure::Usage(format!("line {}: {e}", i + 1)))?;
                match decode_program(&bits, &t) {
                    Ok(p) => writeln!(out, "{p}")?,
                    Err(e) => writeln!(out, "{} # invalid: {e}", bits.to_fixture())?,
                }
            }
        }
        Command::Sensitivity { config, permutations, out: dir } => {
            if permutations < 2 {
                return Err(Failure::Usage("--permutations must be at least 2".into()));
            }
            let (_, cfg) = load(&config)?;
            let dir = dir.unwrap_or_else(|| cfg.output_dir.clone());
            let r = report::run_sensitivity(&cfg, permutations)?;
            report::create_dir(&dir)?;
            report::write_file(&dir.join("sensitivity.json"), &report::to_json(&r))?;
            for m in &r.machines {
                let scores: Vec<String> = m.scores.iter().map(|s| format!("{} {:.6}", s.agent, s.upsilon)).collect();
                let kept = if m.ordering_preserved { "kept" } else { "changed" };
                writeln!(out, "{}  {}  ordering {kept}", m.opcode_table, scores.join("  "))?;
            }
            writeln!(out, "wrote {}", dir.join("sensitivity.json").display())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli.command) {
        Ok(()) | Err(Failure::Closed) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

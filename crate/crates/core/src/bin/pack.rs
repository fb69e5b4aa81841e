use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use strip_engine::adversary::run_adversary;
use strip_engine::engine::EngineConfig;
use strip_engine::num::{parse_q, q, Q};
use strip_engine::oracle::oracle_opt_interval;
use strip_engine::runner::{generated_items, read_items, run_with, write_csv, write_svg, RunConfig};
use strip_engine::snapshot::Snapshot;
use strip_engine::validate::validate_geometry;

#[derive(Parser)]
#[command(name = "pack", about = "Online strip packing with bounded migration")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pack a stream and write a report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// JSON lines of {"id", "w", "h"}; defaults to the config's generated stream.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for SVG snapshots.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the final state for `pack audit`.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Play the two-phase lower-bound adversary.
    Adversary {
        #[arg(long, value_parser = parse_rational)]
        h: Q,
        #[arg(long, value_parser = parse_rational)]
        mu: Q,
        #[arg(long, value_parser = parse_rational, default_value = "1/10")]
        eps_adv: Q,
        #[arg(long, value_parser = parse_rational, default_value = "1/4")]
        epsilon: Q,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a state dump.
    Audit {
        #[arg(long)]
        state: PathBuf,
    },
    /// Bracket the optimum of at most six items.
    Oracle {
        #[arg(long)]
        input: PathBuf,
    },
}

fn parse_rational(s: &str) -> Result<Q, String> {
    parse_q(s).map_err(|e| format!("not a number: {}", e.0))
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.cmd {
        Cmd::Run { config, input, out, svg, csv, dump } => {
            let cfg: RunConfig = serde_json::from_reader(BufReader::new(File::open(&config)?))?;
            let items = match &input {
                Some(p) => read_items(BufReader::new(File::open(p)?))?,
                None => generated_items(&cfg),
            };
            let every = cfg.svg_every.unwrap_or(0);
            let mut svg_err = None;
            let (report, engine) = run_with(&cfg, items, |e, rep| {
                if let (Some(dir), true) = (&svg, every > 0 && rep.t % every == 0) {
                    if let Err(err) = write_svg(dir, &format!("t{:06}", rep.t), e) {
                        svg_err.get_or_insert(err);
                    }
                }
            })?;
            if let Some(err) = svg_err {
                return Err(err.into());
            }
            if let Some(dir) = &svg {
                write_svg(dir, "final", &engine)?;
            }
            if let Some(p) = &csv {
                write_csv(p, &report.events)?;
            }
            if let Some(p) = &dump {
                serde_json::to_writer_pretty(BufWriter::new(File::create(p)?), &engine.snapshot())?;
            }
            let mut w = BufWriter::new(File::create(&out)?);
            serde_json::to_writer_pretty(&mut w, &report)?;
            w.flush()?;
            let m = &report.metrics;
            println!(
                "items={} height={:.6} size={:.6} mu_hat={:.6} validations={}",
                m.items,
                strip_engine::num::to_f64(&m.height),
                strip_engine::num::to_f64(&m.size),
                strip_engine::num::to_f64(&m.mu_hat),
                m.audits.validations
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Adversary { h, mu, eps_adv, epsilon, out } => {
            let rep = run_adversary(h, mu, eps_adv, EngineConfig::derived(epsilon))?;
            println!("{}", rep.summary());
            if let Some(p) = out {
                serde_json::to_writer_pretty(BufWriter::new(File::create(p)?), &rep)?;
            }
            let ok = rep.ratio >= q(4, 3) - q(1, 20);
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Cmd::Audit { state } => {
            let snap: Snapshot = serde_json::from_reader(BufReader::new(File::open(&state)?))?;
            let rep = validate_geometry(&snap);
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(if rep.ok() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Cmd::Oracle { input } => {
            let items = read_items(BufReader::new(File::open(&input)?))?;
            let b = oracle_opt_interval(&items)?;
            println!("{}", serde_json::to_string_pretty(&b)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

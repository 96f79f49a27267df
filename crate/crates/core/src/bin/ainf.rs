use std::path::PathBuf;
use std::process::ExitCode;

use ainf_core::cli::{self, report::Status, Session};
use ainf_core::ring::Q;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ainf", version, about = "Verify and compute with gapped filtered A-infinity algebras and chart gluing")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Truncation E as a rational, e.g. 3/2; overrides the session's cutoff.
    #[arg(long, global = true, value_parser = parse_q)]
    cutoff: Option<Q>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run every job of a session.
    Run { session: PathBuf },
    /// Run one job and print its contributing trees and terms.
    Explain { session: PathBuf, job: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Human,
    Machine,
}

fn parse_q(s: &str) -> Result<Q, String> {
    let q: Q = s.trim().parse().map_err(|e| format!("{s} is not a rational: {e}"))?;
    Ok(q)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let path = match &args.command {
        Command::Run { session } | Command::Explain { session, .. } => session,
    };
    let session = match Session::load(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    match &args.command {
        Command::Run { .. } => match cli::run(&session, args.cutoff, args.jobs) {
            Ok(report) => {
                match args.format {
                    Format::Human => print!("{}", report.human()),
                    Format::Machine => println!("{}", report.machine()),
                }
                if report.passed {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(2)
            }
        },
        Command::Explain { job, .. } => match cli::explain(&session, job, args.cutoff, args.jobs) {
            Ok((rep, trace)) => {
                match args.format {
                    Format::Human => {
                        print!("{}", rep.human());
                        for line in &trace {
                            println!("  {line}");
                        }
                    }
                    Format::Machine => {
                        let v = serde_json::json!({ "report": rep, "trace": trace });
                        println!("{}", serde_json::to_string_pretty(&v).expect("reports serialize"));
                    }
                }
                if rep.status == Status::Pass {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(2)
            }
        },
    }
}

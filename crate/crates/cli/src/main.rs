use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use shapecheck::check::{check_with, CheckOptions};
use shapecheck::corpus::{load_corpus_dir, run_corpus, BuggyVerdict, FixedVerdict};
use shapecheck::ir::{parse_ir, shape_to_json};
use shapecheck::oracle::concrete_run;

#[derive(Parser)]
#[command(
    name = "shapecheck",
    version,
    about = "Static shape checker for tensor dataflow graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Check every run plan of an IR file.
    Check {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Print each node's computed shape in evaluation order.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        max_iterations: Option<u64>,
    },
    /// Score the checker on a directory of buggy/fixed case pairs.
    Corpus { dir: PathBuf },
    /// Execute an IR file on concrete tensors.
    #[command(hide = true)]
    Oracle {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Check {
            file,
            format,
            trace,
            max_iterations,
        } => run_check(&file, format, trace, max_iterations),
        Command::Corpus { dir } => run_corpus_cmd(&dir),
        Command::Oracle { file, seed } => run_oracle(&file, seed),
    };
    ExitCode::from(code)
}

fn load(file: &Path, format: Format) -> Result<shapecheck::ir::ProgramIR, u8> {
    let report = |message: String| {
        match format {
            Format::Text => eprintln!("error: {message}"),
            Format::Json => println!("{}", json!({"status": "invalid", "error": message})),
        }
        2
    };
    let bytes = fs::read(file).map_err(|e| report(format!("{}: {e}", file.display())))?;
    parse_ir(&bytes).map_err(|e| report(format!("{}: {e}", file.display())))
}

fn run_check(file: &Path, format: Format, trace: bool, max_iterations: Option<u64>) -> u8 {
    let ir = match load(file, format) {
        Ok(ir) => ir,
        Err(code) => return code,
    };
    let mut traced = Vec::new();
    let report = check_with(
        &ir,
        CheckOptions { max_iterations },
        |plan, iteration, out| {
            if trace {
                for (node, shape) in out {
                    traced.push((plan.graph.clone(), iteration, node.clone(), shape.clone()));
                }
            }
        },
    );
    let code = report.exit_code() as u8;
    match format {
        Format::Text => {
            for (graph, iteration, node, shape) in &traced {
                println!("{graph} #{iteration} {node}: {shape}");
            }
            for run in &report.runs {
                match &run.outcome {
                    Ok(outcome) => println!("{}: {outcome}", run.graph),
                    Err(e) => eprintln!("{}: {e}", run.graph),
                }
            }
        }
        Format::Json => {
            let runs: Vec<_> = report
                .runs
                .iter()
                .map(|run| match &run.outcome {
                    Ok(outcome) => json!({"graph": run.graph, "status": "ok", "iterations": outcome.iterations}),
                    Err(e) => match e.diagnostic() {
                        Some(d) => json!({"graph": run.graph, "status": "error", "diagnostic": d.to_json()}),
                        None => json!({"graph": run.graph, "status": "invalid", "error": e.to_string()}),
                    },
                })
                .collect();
            let mut out = json!({
                "status": match code { 0 => "ok", 1 => "error", _ => "invalid" },
                "runs": runs,
            });
            if trace {
                out["trace"] = traced
                    .iter()
                    .map(|(graph, iteration, node, shape)| {
                        json!({"graph": graph, "iteration": iteration, "node": node, "shape": shape_to_json(shape)})
                    })
                    .collect();
            }
            println!("{out}");
        }
    }
    code
}

fn run_corpus_cmd(dir: &Path) -> u8 {
    let cases = match load_corpus_dir(dir) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let report = run_corpus(&cases);
    for case in &report.cases {
        let buggy = match &case.buggy {
            BuggyVerdict::Detected => "buggy-detected".to_string(),
            BuggyVerdict::Mislocated { node, iteration } => {
                format!("mislocated (node '{node}', iteration {iteration})")
            }
            BuggyVerdict::Missed => "missed".to_string(),
            BuggyVerdict::Unreadable(e) => format!("unreadable: {e}"),
        };
        let fixed = match &case.fixed {
            FixedVerdict::Clean => "fixed-clean".to_string(),
            FixedVerdict::FalsePositive { node, iteration } => {
                format!("false-positive (node '{node}', iteration {iteration})")
            }
            FixedVerdict::Unreadable(e) => format!("unreadable: {e}"),
        };
        println!(
            "{:<28} {buggy:<16} {fixed:<12} {:>8.3} ms {:>8.3} ms",
            case.name,
            case.buggy_time.as_secs_f64() * 1e3,
            case.fixed_time.as_secs_f64() * 1e3,
        );
    }
    println!(
        "cases: {}  recall: {:.3}  precision: {:.3}  false positives: {}",
        report.cases.len(),
        report.recall(),
        report.precision(),
        report.false_positives()
    );
    if report.all_correct() {
        0
    } else {
        1
    }
}

fn run_oracle(file: &Path, seed: u64) -> u8 {
    let ir = match load(file, Format::Text) {
        Ok(ir) => ir,
        Err(code) => return code,
    };
    let mut code = 0;
    for run in concrete_run(&ir, seed) {
        match run.outcome {
            Ok(shapes) => {
                for (node, shape) in shapes {
                    println!("{} {node}: {shape:?}", run.graph);
                }
            }
            Err(e) => {
                eprintln!("{}: {e}", run.graph);
                code = 1;
            }
        }
    }
    code
}

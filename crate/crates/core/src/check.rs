//! Runs every plan of a program through the abstract interpreter.

use std::collections::HashMap;

use crate::ir::{ProgramIR, RunPlan};
use crate::session::{Diagnostic, LoopOutcome, RunError, RunOutput, SessionState};

#[derive(Debug, Clone, Copy, Default)]
pub struct CheckOptions {
    /// Caps the number of iterations of each run plan.
    pub max_iterations: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub graph: String,
    pub outcome: Result<LoopOutcome, RunError>,
}

impl RunReport {
    pub fn diagnostic(&self) -> Option<&Diagnostic> {
        self.outcome.as_ref().err().and_then(RunError::diagnostic)
    }
}

/// Per-run verdicts of a checked program.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExitReport {
    pub runs: Vec<RunReport>,
}

impl ExitReport {
    pub fn is_clean(&self) -> bool {
        self.runs.iter().all(|r| r.outcome.is_ok())
    }

    pub fn first_diagnostic(&self) -> Option<&Diagnostic> {
        self.runs.iter().find_map(RunReport::diagnostic)
    }

    /// 0 when every run is clean, 1 when a shape error was found, 2 when a
    /// run could not be executed at all.
    pub fn exit_code(&self) -> i32 {
        if self
            .runs
            .iter()
            .any(|r| matches!(r.outcome, Err(ref e) if e.diagnostic().is_none()))
        {
            2
        } else if self.is_clean() {
            0
        } else {
            1
        }
    }
}

pub fn check(ir: &ProgramIR) -> ExitReport {
    check_with(ir, CheckOptions::default(), |_, _, _| {})
}

/// Executes the run plans in order. Plans over the same graph share one
/// session, so variable shapes and the iteration counter carry over.
pub fn check_with(
    ir: &ProgramIR,
    options: CheckOptions,
    mut observe: impl FnMut(&RunPlan, u64, &RunOutput),
) -> ExitReport {
    let mut sessions: HashMap<&str, SessionState<'_>> = HashMap::new();
    let mut report = ExitReport::default();
    for plan in &ir.runs {
        let graph = ir
            .graph(&plan.graph)
            .expect("validated run references a graph");
        let session = sessions
            .entry(plan.graph.as_str())
            .or_insert_with(|| SessionState::new(graph));
        let mut total = plan.repeat.saturating_mul(plan.feeds.len() as u64);
        if let Some(cap) = options.max_iterations {
            total = total.min(cap);
        }
        let outcome = session.run_iterations(&plan.fetches, &plan.feeds, total, |it, out| {
            observe(plan, it, out)
        });
        report.runs.push(RunReport {
            graph: plan.graph.clone(),
            outcome,
        });
    }
    report
}

//! Command-line front end: load a session, run its jobs on a bounded worker
//! pool and assemble a report ordered by job id.

pub mod jobs;
pub mod report;
pub mod session;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rayon::prelude::*;

pub use report::{JobReport, Report, ResidualSummary, Status};
pub use session::{Context, Job, JobKind, Session, SessionError};

use crate::ring::Q;

/// Runs one job; errors and panics become an `error` entry.
fn run_one(ctx: &Context, job: &Job) -> (JobReport, Vec<String>) {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(|| jobs::run_job(ctx, &job.kind)));
    let elapsed_ms = start.elapsed().as_millis() as u64;
    let inputs = serde_json::to_value(&job.kind).expect("jobs serialize");
    let mut rep = JobReport {
        id: job.id.clone(),
        kind: job.kind.name().to_string(),
        status: Status::Error,
        error: None,
        residuals: Vec::new(),
        details: serde_json::Value::Object(Default::default()),
        inputs,
        elapsed_ms,
    };
    let trace = match result {
        Ok(Ok(o)) => {
            rep.status = if o.passed { Status::Pass } else { Status::Fail };
            rep.residuals = o.residuals;
            rep.details = serde_json::Value::Object(o.details);
            o.trace
        }
        Ok(Err(e)) => {
            rep.error = Some(e.to_string());
            Vec::new()
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "job panicked".into());
            rep.error = Some(format!("internal error: {msg}"));
            Vec::new()
        }
    };
    (rep, trace)
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, SessionError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| SessionError::Invalid(e.to_string()))
}

/// Runs every job of `session`, at `cutoff` if given instead of the
/// session's own, on at most `threads` workers.
pub fn run(session: &Session, cutoff: Option<Q>, threads: Option<usize>) -> Result<Report, SessionError> {
    let ctx = Context::new(session, cutoff)?;
    let jobs: Vec<JobReport> = pool(threads)?.install(|| session.jobs.par_iter().map(|j| run_one(&ctx, j).0).collect());
    Ok(Report::new(ctx.cutoff.clone(), jobs))
}

/// Runs one job and returns its report with the verbose trace.
pub fn explain(
    session: &Session,
    id: &str,
    cutoff: Option<Q>,
    threads: Option<usize>,
) -> Result<(JobReport, Vec<String>), SessionError> {
    let job = session.job(id).ok_or_else(|| SessionError::Invalid(format!("unknown job id {id}")))?;
    let ctx = Context::new(session, cutoff)?;
    Ok(pool(threads)?.install(|| run_one(&ctx, job)))
}

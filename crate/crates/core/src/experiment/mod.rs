//! Config-driven experiment pipelines and their on-disk outputs.

mod commands;
pub mod config;
pub mod pipeline;

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub use commands::{
    cmd_correlate, cmd_generate, cmd_reselect, cmd_run, cmd_verify, load_panel, run_experiment, summarize, write_outputs,
    lemma1_instances, CorrelationRow, CorrelationSummary, ExperimentRun, ReselectOutcome, RunOptions, SummaryRow, VerifyOptions,
    VerifyReport,
};
pub use config::{DatasetSource, ExperimentConfig, Ini, ModelConfig, OBJECTIVES};
pub use pipeline::{run_seed, CheckOutcome, MethodForecast, MethodOutcome, Models, RunPlan, ScoredStore, SeedRun};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to a temporary sibling of `path` and renames it into place,
/// creating parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.{}.tmp", std::process::id(), TMP_COUNTER.fetch_add(1, Ordering::Relaxed)));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}

//! File formats, configuration and atomic writes.

pub mod config;
mod files;

use std::io::Write;
use std::path::Path;

pub use config::{parse_seeds, ConfigMap, Paths, RunConfig, SimSettings, CONFIG_ENV};
pub use files::{
    catalog_from, emit_campaigns, emit_history, emit_plan, emit_reports, emit_schedule, format_probability,
    format_timestamp, emit_projections, load_campaigns, load_history, load_plan, load_schedule, parse_timestamp,
    read_schedule_rows, schedule_from_rows, ProjectionRow, ScheduleRow, CAMPAIGNS_HEADER, HISTORY_HEADER,
    PLAN_HEADER, PROJECTIONS_HEADER, REPORT_HEADER, SCHEDULE_HEADER,
};

use crate::error::Result;

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

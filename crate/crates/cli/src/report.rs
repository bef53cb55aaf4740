//! Run reports and run metadata: config echo, version, seed, integration
//! audit trail, data checksums and posterior summaries.

use crate::error::{io_error, CliError};
use mlnmr::comparison::{Criterion, ElpdReport};
use mlnmr::sampler::{AuditEntry, ParameterSummary};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Machine-readable record of a fit, read back by later commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub seed: u64,
    pub n_int: usize,
    pub adequacy_checked: bool,
    pub checksums: Vec<Checksum>,
    pub audit: Vec<AuditRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checksum {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub n_int: usize,
    pub n_int_half: usize,
    pub samples: usize,
    pub rhat_all_max: f64,
    pub rhat_within_max: f64,
    pub worst_parameter: String,
    pub branch: String,
}

impl From<&AuditEntry> for AuditRecord {
    fn from(a: &AuditEntry) -> Self {
        Self {
            n_int: a.n_int,
            n_int_half: a.n_int_half,
            samples: a.samples,
            rhat_all_max: a.rhat_all_max,
            rhat_within_max: a.rhat_within_max,
            worst_parameter: a.worst_parameter.clone(),
            branch: a.branch.to_string(),
        }
    }
}

impl RunMeta {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::usage("io", format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).expect("run metadata serializes");
        std::fs::write(path, text).map_err(|e| io_error(path, e))
    }
}

pub fn audit_table(audit: &[AuditRecord]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>6} {:>6} {:>8} {:>10} {:>12}  {:<20} decision",
        "N", "N/2", "samples", "Rhat_all", "Rhat_within", "worst_parameter"
    );
    for a in audit {
        let _ = writeln!(
            s,
            "{:>6} {:>6} {:>8} {:>10.4} {:>12.4}  {:<20} {}",
            a.n_int, a.n_int_half, a.samples, a.rhat_all_max, a.rhat_within_max, a.worst_parameter, a.branch
        );
    }
    s
}

pub fn write_audit_csv(path: &Path, audit: &[AuditRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    for a in audit {
        w.serialize(a).map_err(|e| io_error(path, e))?;
    }
    if audit.is_empty() {
        w.write_record(["n_int", "n_int_half", "samples", "rhat_all_max", "rhat_within_max", "worst_parameter", "branch"])
            .map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn summary_table(summaries: &[ParameterSummary]) -> String {
    let width = summaries.iter().map(|s| s.name.len()).max().unwrap_or(9).max(9);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$} {:>10} {:>9} {:>10} {:>10} {:>10} {:>7} {:>7}",
        "parameter", "mean", "sd", "2.5%", "50%", "97.5%", "Rhat", "ESS"
    );
    for p in summaries {
        let _ = writeln!(
            s,
            "{:<width$} {:>10.4} {:>9.4} {:>10.4} {:>10.4} {:>10.4} {:>7.3} {:>7.0}",
            p.name, p.mean, p.sd, p.q025, p.median, p.q975, p.rhat.value, p.ess.value
        );
    }
    s
}

pub fn write_summary_csv(path: &Path, summaries: &[ParameterSummary]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    w.write_record(["parameter", "mean", "sd", "q2.5", "median", "q97.5", "rhat", "ess", "mcse"])
        .map_err(|e| io_error(path, e))?;
    for p in summaries {
        w.write_record([
            p.name.clone(),
            p.mean.to_string(),
            p.sd.to_string(),
            p.q025.to_string(),
            p.median.to_string(),
            p.q975.to_string(),
            p.rhat.value.to_string(),
            p.ess.value.to_string(),
            p.mcse().to_string(),
        ])
        .map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Column labels (elpd, effective parameters, information criterion).
pub fn criterion_labels(c: Criterion) -> [&'static str; 3] {
    match c {
        Criterion::Loo => ["elpd_loo", "p_loo", "looic"],
        Criterion::Waic => ["elpd_waic", "p_waic", "waic"],
    }
}

pub fn elpd_block(r: &ElpdReport) -> String {
    let mut s = String::new();
    let [elpd, p, ic] = criterion_labels(r.criterion_kind);
    let _ = writeln!(s, "{elpd:<10} {:>12.2} (se {:.2})", r.elpd, r.se_elpd);
    let _ = writeln!(s, "{p:<10} {:>12.2} (se {:.2})", r.p_eff, r.se_p_eff);
    let _ = writeln!(s, "{ic:<10} {:>12.2} (se {:.2})", r.criterion, r.se_criterion);
    if r.pareto_k.is_some() {
        let _ = writeln!(s, "pareto k > 0.7: {} observations", r.high_pareto_k().len());
    }
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

//! Subcommand implementations.

use crate::config::{CovariateConfig, Overrides, RunConfig};
use crate::error::{io_error, CliError};
use crate::matrix::{self, Matrix};
use crate::report::{
    audit_table, criterion_labels, elpd_block, sha256_file, sha256_hex, summary_table, write_audit_csv, write_summary_csv, AuditRecord,
    Checksum, RunMeta, VERSION,
};
use mlnmr::comparison::{compare as compare_models, loo, waic, Criterion};
use mlnmr::data::{read_population_summary, validate_estimability, Network};
use mlnmr::fit::{fit as run_fit, Fit, FitError};
use mlnmr::likelihood::{EffectModifierSharing, Model, ModelOptions};
use mlnmr::population::{
    conditional_effect, default_time_grid, marginal_contrast, marginal_cumhaz, marginal_hazard, marginal_survival,
    rmst, survival_quantile, ContrastKind, EstimandDraws, TargetPopulation,
};
use mlnmr::simulation::{simulate as run_simulation, SimScenario};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

// ---------------------------------------------------------------- simulate

pub struct SimulateOptions {
    pub preset: String,
    pub seed: u64,
    pub out: PathBuf,
    pub family: String,
}

/// Simulates a preset scenario and writes ingestion files, the truth and
/// ready-to-run configurations for the multilevel and full-IPD analyses.
pub fn simulate(o: &SimulateOptions) -> Result<String, CliError> {
    let scenario = SimScenario::preset(&o.preset, o.seed)
        .ok_or_else(|| CliError::usage("simulation", format!("unknown preset '{}' (available: appC)", o.preset)))?;
    let data = run_simulation(&scenario)?;
    create_dir(&o.out)?;
    data.write(&scenario, &o.out)?;

    let covariates: Vec<CovariateConfig> = scenario
        .schema
        .iter()
        .map(|c| CovariateConfig { name: c.name.clone(), family: c.family.to_string(), role: c.role.to_string() })
        .collect();
    let mut cfg = RunConfig { covariates, ..RunConfig::default() };
    cfg.data.reference = Some(scenario.treatments[0].clone());
    cfg.model.family = o.family.clone();
    cfg.model.effect_modifiers = "shared".into();
    cfg.priors.intercept = Some("normal(0, 100)".into());
    cfg.priors.beta1 = Some("normal(0, 100)".into());
    cfg.priors.beta2 = Some("normal(0, 100)".into());
    cfg.priors.gamma = Some("normal(0, 100)".into());
    cfg.priors.aux = Some("half_normal(10)".into());

    let mut ml = cfg.clone();
    ml.data.ipd = Some("ipd.csv".into());
    ml.data.agd_events = Some("agd_events.csv".into());
    ml.data.agd_covariates = Some("agd_covariates.csv".into());
    ml.output.dir = format!("fit-{}", o.family).into();
    write_text(&o.out.join("fit.toml"), &ml.echo())?;

    let mut full = cfg;
    full.data.ipd = Some("full_ipd/ipd.csv".into());
    full.output.dir = format!("fit-ipd-{}", o.family).into();
    write_text(&o.out.join("fit_full_ipd.toml"), &full.echo())?;

    let mut msg = format!("simulated preset {} (seed {}) into {}\n", o.preset, o.seed, o.out.display());
    for s in &data.mlnmr.studies {
        let n: usize = s.arms.iter().map(|a| a.rows.len()).sum();
        let events: usize = s.arms.iter().flat_map(|a| &a.rows).filter(|r| r.status).count();
        let _ = writeln!(msg, "  study {} ({:?}): {n} individuals, {events} events", s.id, s.kind);
    }
    Ok(msg)
}

// --------------------------------------------------------------------- fit

fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(overrides);
    Ok(cfg)
}

fn checksums(cfg: &RunConfig) -> Result<Vec<Checksum>, CliError> {
    let configured = [
        &cfg.data.ipd,
        &cfg.data.agd_events,
        &cfg.data.agd_covariates,
        &cfg.data.correlations,
    ];
    configured
        .into_iter()
        .flatten()
        .map(|p| Ok(Checksum { file: p.display().to_string(), sha256: sha256_file(&cfg.resolve(p))? }))
        .collect()
}

fn fit_with_audit(cfg: &RunConfig, network: &Network, options: ModelOptions) -> Result<Fit, CliError> {
    let sampler = cfg.sampler_config()?;
    match run_fit(network, options, &sampler, &cfg.adequacy_config()) {
        Ok(f) => Ok(f),
        Err(FitError::Adequacy(e)) => {
            let records: Vec<AuditRecord> = e.audit().iter().map(AuditRecord::from).collect();
            let dir = cfg.output_dir();
            if create_dir(&dir).is_ok() {
                let _ = write_audit_csv(&dir.join("audit.csv"), &records);
            }
            let mut message = e.to_string();
            if !records.is_empty() {
                message.push_str("\naudit trail:\n");
                message.push_str(&audit_table(&records));
            }
            Err(CliError::runtime("sampler", message))
        }
        Err(e) => Err(e.into()),
    }
}

/// Identifiability of the treatment-by-effect-modifier interactions under
/// the chosen sharing. Problems are reported, never fixed by changing the
/// model.
fn estimability_section(network: &Network, sharing: &EffectModifierSharing) -> String {
    let report = validate_estimability(network);
    let mut s = format!("{}\n", report.message);
    for i in &report.interactions {
        let status = if i.independent { "independently estimable" } else { "not independently estimable" };
        let _ = writeln!(s, "{} x {}: {status}", i.treatment, i.covariate);
    }
    let identified = match sharing {
        EffectModifierSharing::Independent => Some(report.independent_ok),
        EffectModifierSharing::SharedAll => Some(report.shared_ok),
        EffectModifierSharing::Classes(_) => None,
    };
    match identified {
        Some(false) => {
            let msg = "the chosen effect-modifier sharing is not identified by the data; interaction estimates rest on the prior";
            log::warn!("{msg}");
            let _ = writeln!(s, "warning: {msg}");
        }
        None => {
            let _ = writeln!(s, "class-based sharing: identifiability not assessed");
        }
        Some(true) => {}
    }
    s
}

fn build_report(
    cfg: &RunConfig,
    fit: &Fit,
    sums: &[Checksum],
    audit: &[AuditRecord],
    estimability: &str,
) -> Result<String, CliError> {
    let mut r = String::new();
    let _ = writeln!(r, "mlnmr {VERSION} fit report");
    let _ = writeln!(r, "seed: {}", cfg.sampler.seed);
    let status = if fit.adequacy_checked { "checked" } else { "not needed (no aggregate data)" };
    let _ = writeln!(r, "integration points: {} (adequacy {status})", fit.model.n_int());
    let _ = writeln!(r, "\n== configuration ==\n{}", cfg.echo().trim_end());
    let _ = writeln!(r, "\n== data checksums (sha256) ==");
    for c in sums {
        let _ = writeln!(r, "{}  {}", c.sha256, c.file);
    }
    let _ = writeln!(r, "\n== effect-modifier estimability ==\n{}", estimability.trim_end());
    let _ = writeln!(r, "\n== integration adequacy audit ==");
    if audit.is_empty() {
        let _ = writeln!(r, "not applicable (no aggregate data)");
    } else {
        r.push_str(&audit_table(audit));
    }
    let _ = writeln!(r, "\n== sampler ==");
    let d = &fit.draws;
    let _ = writeln!(
        r,
        "chains: {}, warmup: {}, samples per chain: {}, divergent transitions: {}",
        d.n_chains(),
        cfg.sampler.warmup,
        d.n_samples(),
        d.divergences()
    );
    for (c, ch) in d.chains.iter().enumerate() {
        let mean_depth = ch.tree_depth.iter().sum::<usize>() as f64 / ch.tree_depth.len().max(1) as f64;
        let _ = writeln!(r, "chain {c}: step size {:.4}, mean tree depth {mean_depth:.2}", ch.step_size);
    }
    let _ = writeln!(r, "\n== parameters ==");
    r.push_str(&summary_table(&fit.summaries()));
    let _ = writeln!(r, "\n== model fit ==");
    r.push_str(&elpd_block(&fit.loo()?));
    Ok(r)
}

/// Fits a model end to end and writes the draws archive and report.
pub fn fit(config: &Path, overrides: &Overrides) -> Result<String, CliError> {
    let cfg = load_config(config, overrides)?;
    let binary = cfg.binary_output()?;
    let options = cfg.model_options()?;
    cfg.sampler_config()?;
    let network = cfg.network()?;
    let sums = checksums(&cfg)?;
    let estimability = estimability_section(&network, &options.sharing);
    let fit = fit_with_audit(&cfg, &network, options)?;
    let audit: Vec<AuditRecord> = fit.audit.iter().map(AuditRecord::from).collect();

    let dir = cfg.output_dir();
    create_dir(&dir)?;
    let mut names = vec!["chain".to_string(), "iteration".to_string()];
    names.extend(fit.draws.names.iter().cloned());
    let rows = fit
        .draws
        .chains
        .iter()
        .enumerate()
        .flat_map(|(c, ch)| {
            ch.draws.iter().enumerate().map(move |(i, d)| {
                let mut row = vec![c as f64, i as f64];
                row.extend_from_slice(d);
                row
            })
        })
        .collect();
    matrix::write(&matrix::path_for(&dir, "draws", binary), &Matrix { names, rows })?;
    let log_lik = fit.draws.log_lik.clone().unwrap_or_default();
    let n_obs = fit.model.n_observations();
    matrix::write(
        &matrix::path_for(&dir, "loglik", binary),
        &Matrix { names: (1..=n_obs).map(|i| format!("y{i}")).collect(), rows: log_lik },
    )?;
    let obs_path = dir.join("observations.csv");
    let mut w = csv::Writer::from_path(&obs_path).map_err(|e| io_error(&obs_path, e))?;
    w.write_record(["observation", "study"]).map_err(|e| io_error(&obs_path, e))?;
    for (i, &j) in fit.model.observation_studies().iter().enumerate() {
        w.write_record([(i + 1).to_string(), network.studies[j].id.clone()]).map_err(|e| io_error(&obs_path, e))?;
    }
    w.flush().map_err(|e| io_error(&obs_path, e))?;
    write_summary_csv(&dir.join("summary.csv"), &fit.summaries())?;
    write_audit_csv(&dir.join("audit.csv"), &audit)?;
    write_text(&dir.join("config.toml"), &cfg.absolutized().echo())?;
    RunMeta {
        version: VERSION.into(),
        seed: cfg.sampler.seed,
        n_int: fit.model.n_int(),
        adequacy_checked: fit.adequacy_checked,
        checksums: sums.clone(),
        audit: audit.clone(),
    }
    .write(&dir.join("run.toml"))?;

    let report = build_report(&cfg, &fit, &sums, &audit, &estimability)?;
    write_text(&dir.join("report.txt"), &report)?;
    Ok(format!("{report}\nreport digest (sha256): {}\noutputs written to {}\n", sha256_hex(report.as_bytes()), dir.display()))
}

// ------------------------------------------------------------------- audit

/// Prints the audit trail of a finished fit, or runs the adequacy procedure
/// for a configuration.
pub fn audit(fit_dir: Option<&Path>, config: Option<&Path>, overrides: &Overrides) -> Result<String, CliError> {
    match (fit_dir, config) {
        (Some(dir), None) => {
            let meta = RunMeta::read(&dir.join("run.toml"))?;
            if meta.audit.is_empty() {
                return Ok(format!(
                    "no integration adequacy audit (no aggregate data); integration points {}\n",
                    meta.n_int
                ));
            }
            Ok(format!("{}accepted integration points: {}\n", audit_table(&meta.audit), meta.n_int))
        }
        (None, Some(path)) => {
            let cfg = load_config(path, overrides)?;
            let options = cfg.model_options()?;
            let network = cfg.network()?;
            let fit = fit_with_audit(&cfg, &network, options)?;
            let records: Vec<AuditRecord> = fit.audit.iter().map(AuditRecord::from).collect();
            let dir = cfg.output_dir();
            create_dir(&dir)?;
            write_audit_csv(&dir.join("audit.csv"), &records)?;
            if records.is_empty() {
                return Ok("no aggregate data: integration adequacy does not apply\n".into());
            }
            Ok(format!("{}accepted integration points: {}\n", audit_table(&records), fit.model.n_int()))
        }
        _ => Err(CliError::usage("audit", "give exactly one of --fit DIR or --config FILE")),
    }
}

// ----------------------------------------------------------------- compare

fn read_observations(dir: &Path) -> Result<Vec<String>, CliError> {
    let path = dir.join("observations.csv");
    let mut r = csv::Reader::from_path(&path).map_err(|e| io_error(&path, e))?;
    r.records()
        .map(|rec| rec.map(|r| r.get(1).unwrap_or_default().to_string()).map_err(|e| io_error(&path, e)))
        .collect()
}

/// Compares fitted models by LOO or WAIC, overall and per study.
pub fn compare(dirs: &[PathBuf], names: Option<&[String]>, criterion: Criterion, out: Option<&Path>) -> Result<String, CliError> {
    if let Some(n) = names {
        if n.len() != dirs.len() {
            return Err(CliError::usage("compare", format!("{} names given for {} fits", n.len(), dirs.len())));
        }
    }
    let mut reports = Vec::new();
    let mut groups = None;
    for (i, dir) in dirs.iter().enumerate() {
        let ll = matrix::read(&matrix::find(dir, "loglik")?)?;
        let report = match criterion {
            Criterion::Loo => loo(&ll.rows)?,
            Criterion::Waic => waic(&ll.rows)?,
        };
        let name = names.map(|n| n[i].clone()).unwrap_or_else(|| {
            dir.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string())
        });
        if groups.is_none() {
            groups = Some(read_observations(dir)?);
        }
        reports.push((name, report));
    }
    let rows = compare_models(&reports, groups.as_deref())?;
    let [elpd, p_eff, ic] = criterion_labels(criterion);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:<24} {:>11} {:>8} {:>9} {:>11} {:>10} {:>8}",
        "group", "model", elpd, "se", p_eff, ic, "elpd_diff", "se_diff"
    );
    for r in &rows {
        let _ = writeln!(
            s,
            "{:<10} {:<24} {:>11.2} {:>8.2} {:>9.2} {:>11.2} {:>10.2} {:>8.2}",
            r.group, r.model, r.elpd, r.se_elpd, r.p_eff, r.criterion, r.elpd_diff, r.se_diff
        );
    }
    for (name, rep) in &reports {
        for w in &rep.warnings {
            let _ = writeln!(s, "warning ({name}): {w}");
        }
        if !rep.high_pareto_k().is_empty() {
            let _ = writeln!(s, "warning ({name}): {} observations with Pareto k > 0.7", rep.high_pareto_k().len());
        }
    }
    if let Some(path) = out {
        let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
        w.write_record(["group", "model", "elpd", "se_elpd", "p_eff", "criterion", "elpd_diff", "se_diff"])
            .map_err(|e| io_error(path, e))?;
        for r in &rows {
            w.write_record([
                r.group.clone(),
                r.model.clone(),
                r.elpd.to_string(),
                r.se_elpd.to_string(),
                r.p_eff.to_string(),
                r.criterion.to_string(),
                r.elpd_diff.to_string(),
                r.se_diff.to_string(),
            ])
            .map_err(|e| io_error(path, e))?;
        }
        w.flush().map_err(|e| io_error(path, e))?;
    }
    Ok(s)
}

// ----------------------------------------------------------------- predict

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimand {
    Survival,
    Hazard,
    Cumhaz,
    Quantile,
    Rmst,
    Hr,
    Loghr,
    MedianRatio,
    MedianDifference,
    RmstDifference,
}

impl Estimand {
    fn is_contrast(self) -> bool {
        matches!(self, Estimand::Hr | Estimand::Loghr | Estimand::MedianRatio | Estimand::MedianDifference | Estimand::RmstDifference)
    }
}

pub struct PredictOptions {
    pub fit_dir: PathBuf,
    pub population: Option<String>,
    pub population_summary: Option<PathBuf>,
    pub baseline_study: Option<String>,
    pub estimand: Estimand,
    pub treatments: Option<Vec<String>>,
    pub tstar: Option<f64>,
    pub alpha: f64,
    pub times: Option<Vec<f64>>,
    pub n_times: usize,
    pub grid_points: usize,
    pub out: Option<PathBuf>,
}

fn load_fit(dir: &Path) -> Result<(RunConfig, Model, Vec<Vec<f64>>), CliError> {
    let cfg = RunConfig::load(&dir.join("config.toml"))?;
    let meta = RunMeta::read(&dir.join("run.toml"))?;
    let network = cfg.network()?;
    let options = ModelOptions { n_int: meta.n_int, ..cfg.model_options()? };
    let model = Model::new(&network, options)?;
    let draws = matrix::read(&matrix::find(dir, "draws")?)?;
    let expected = model.parameter_names();
    if draws.names.len() != expected.len() + 2 || draws.names[2..] != *expected {
        return Err(CliError::usage("io", format!("{}: draws do not match the fitted model's parameters", dir.display())));
    }
    let thetas = draws.rows.into_iter().map(|r| r[2..].to_vec()).collect();
    Ok((cfg, model, thetas))
}

fn treatment_index(model: &Model, name: &str) -> Result<usize, CliError> {
    model
        .network()
        .treatment_index(name)
        .ok_or_else(|| CliError::usage("predict", format!("unknown treatment '{name}'")))
}

fn study_index(model: &Model, id: &str) -> Result<usize, CliError> {
    model.network().study_index(id).ok_or_else(|| CliError::usage("predict", format!("unknown study '{id}'")))
}

/// Computes posterior summaries of a population-level estimand as a tidy
/// CSV.
pub fn predict(o: &PredictOptions) -> Result<String, CliError> {
    let (_, model, thetas) = load_fit(&o.fit_dir)?;
    let draws: Vec<&[f64]> = thetas.iter().map(Vec::as_slice).collect();
    let pop = match (&o.population_summary, &o.population) {
        (Some(path), label) => {
            let label = label.clone().unwrap_or_else(|| "target".into());
            let summary = read_population_summary(path, &model.network().schema, &label)?;
            let baseline = o.baseline_study.as_deref().map(|s| study_index(&model, s)).transpose()?;
            TargetPopulation::from_summary(&model, &label, &summary, None, o.grid_points, baseline)?
        }
        (None, Some(id)) => {
            let mut p = TargetPopulation::from_study(&model, study_index(&model, id)?, o.grid_points)?;
            if let Some(b) = &o.baseline_study {
                p.baseline_study = Some(study_index(&model, b)?);
            }
            p
        }
        (None, None) => return Err(CliError::usage("predict", "give --population STUDY or --population-summary FILE")),
    };
    let treatments: Vec<usize> = match &o.treatments {
        Some(ts) => ts.iter().map(|t| treatment_index(&model, t)).collect::<Result<_, _>>()?,
        None => (0..model.network().n_treatments()).collect(),
    };
    if treatments.is_empty() {
        return Err(CliError::usage("predict", "no treatments given"));
    }
    if o.estimand.is_contrast() && treatments.len() < 2 {
        return Err(CliError::usage("predict", "contrasts need at least two treatments (the first is the comparator)"));
    }
    let times = match &o.times {
        Some(t) => t.clone(),
        // The hazard may be infinite at the origin (shape below one), so its
        // default grid starts one step in.
        None if o.estimand == Estimand::Hazard => {
            default_time_grid(&model, &pop, o.n_times + 1).into_iter().skip(1).collect()
        }
        None => default_time_grid(&model, &pop, o.n_times),
    };
    let tstar = || o.tstar.ok_or_else(|| CliError::usage("predict", "--tstar is required for restricted mean estimands"));

    let mut results: Vec<EstimandDraws> = Vec::new();
    if o.estimand.is_contrast() {
        let a = treatments[0];
        for &b in &treatments[1..] {
            let e = match o.estimand {
                Estimand::Loghr => conditional_effect(&model, &draws, &pop, a, b)?,
                Estimand::Hr => marginal_contrast(&model, &draws, &pop, a, b, ContrastKind::HazardRatio, &times)?,
                Estimand::MedianRatio => marginal_contrast(&model, &draws, &pop, a, b, ContrastKind::MedianRatio, &[])?,
                Estimand::MedianDifference => {
                    marginal_contrast(&model, &draws, &pop, a, b, ContrastKind::MedianDifference, &[])?
                }
                _ => marginal_contrast(&model, &draws, &pop, a, b, ContrastKind::RmstDifference(tstar()?), &[])?,
            };
            results.push(e);
        }
    } else {
        for &k in &treatments {
            results.push(match o.estimand {
                Estimand::Survival => marginal_survival(&model, &draws, &pop, k, &times)?,
                Estimand::Hazard => marginal_hazard(&model, &draws, &pop, k, &times)?,
                Estimand::Cumhaz => marginal_cumhaz(&model, &draws, &pop, k, &times)?,
                Estimand::Quantile => survival_quantile(&model, &draws, &pop, k, o.alpha)?,
                _ => rmst(&model, &draws, &pop, k, tstar()?)?,
            });
        }
    }

    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let header = [
            "estimand", "population", "treatment", "time", "mean", "sd", "q2.5", "q10", "q25", "median", "q75", "q90",
            "q97.5", "n_undefined",
        ];
        w.write_record(header).expect("in-memory write");
        for e in &results {
            for s in e.summaries() {
                let rec = [
                    e.name.clone(),
                    e.population.clone(),
                    e.treatment.clone(),
                    s.time.map(|t| t.to_string()).unwrap_or_default(),
                    s.mean.to_string(),
                    s.sd.to_string(),
                    s.q025.to_string(),
                    s.q10.to_string(),
                    s.q25.to_string(),
                    s.median.to_string(),
                    s.q75.to_string(),
                    s.q90.to_string(),
                    s.q975.to_string(),
                    s.n_missing.to_string(),
                ];
                w.write_record(rec).expect("in-memory write");
            }
            for n in &e.notes {
                log::warn!("{} ({}): {n}", e.name, e.treatment);
            }
        }
        w.flush().expect("in-memory write");
    }
    let text = String::from_utf8(buf).expect("CSV is UTF-8");
    match &o.out {
        Some(path) => {
            write_text(path, &text)?;
            Ok(format!("wrote {} rows to {}\n", text.lines().count() - 1, path.display()))
        }
        None => Ok(text),
    }
}

//! Single-step subcommands working on Safecast-schema CSV files.

use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use geopriv_core::ingest::{self, FilterReport, ParseReport};
use geopriv_core::lppm::{build_prior, Mechanism};
use geopriv_core::metrics::{spatial_gain, write_gain_rows, GainRow};
use geopriv_core::synth::{generate_cohort, CohortTemplate};
use geopriv_core::{UserTrace, UtcOffset};

use crate::config::AttackConfig;
use crate::error::{CliError, Stage};
use crate::pipeline::attack;

fn reader(path: &Path, stage: Stage) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::data(stage, format!("cannot open {}: {e}", path.display())))
}

fn writer(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(Stage::Output, e))
}

/// Reads Safecast-schema traces without filtering.
pub fn read_traces(path: &Path, tz_offset_hours: f64) -> Result<Vec<UserTrace>, CliError> {
    let parsed = ingest::parse_safecast(reader(path, Stage::Ingest)?, tz_offset_hours, &BTreeSet::new())
        .map_err(|e| CliError::from_core(Stage::Ingest, e))?;
    Ok(parsed.items)
}

pub fn write_traces(path: &Path, traces: &[UserTrace]) -> Result<(), CliError> {
    let w = writer(path)?;
    ingest::write_safecast(w, traces).map_err(|e| CliError::from_core(Stage::Output, e))
}

#[derive(Debug, Serialize)]
pub struct IngestReport {
    pub parse: ParseReport,
    pub filter: FilterReport,
    pub users_kept: usize,
}

pub struct IngestArgs<'a> {
    pub radiocells: bool,
    pub input: &'a Path,
    pub output: &'a Path,
    pub exclude: Option<&'a Path>,
    pub tz_offset_hours: f64,
    pub min_points: usize,
    pub max_speed_kmh: f64,
}

/// Parses, excludes and filters a dataset, writing the kept users in the
/// Safecast schema.
pub fn ingest_cmd(a: &IngestArgs) -> Result<IngestReport, CliError> {
    let stage = Stage::Ingest;
    let exclude = match a.exclude {
        Some(p) => ingest::read_exclusion_list(reader(p, stage)?).map_err(|e| CliError::from_core(stage, e))?,
        None => BTreeSet::new(),
    };
    let (traces, parse) = if a.radiocells {
        let recs = ingest::parse_radiocells(reader(a.input, stage)?).map_err(|e| CliError::from_core(stage, e))?;
        let users = ingest::derive_radiocells_users(recs.items, UtcOffset::from_hours(a.tz_offset_hours));
        let mut report = recs.report;
        report.malformed_rows += users.report.malformed_rows;
        let (kept, dropped): (Vec<_>, Vec<_>) = users.items.into_iter().partition(|t| !exclude.contains(&t.user_id));
        report.excluded_rows += dropped.iter().map(UserTrace::len).sum::<usize>();
        (kept, report)
    } else {
        let p = ingest::parse_safecast(reader(a.input, stage)?, a.tz_offset_hours, &exclude)
            .map_err(|e| CliError::from_core(stage, e))?;
        (p.items, p.report)
    };
    let (traces, filter) = ingest::filter_users(traces, a.min_points, a.max_speed_kmh);
    write_traces(a.output, &traces)?;
    Ok(IngestReport {
        parse,
        filter,
        users_kept: traces.len(),
    })
}

/// Generates a cohort; optionally writes the ground-truth anchors as JSON.
pub fn synth_cmd(
    users: usize,
    seed: u64,
    template: Option<&Path>,
    output: &Path,
    truth: Option<&Path>,
) -> Result<usize, CliError> {
    let template = match template {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<CohortTemplate>(&text).map_err(|e| CliError::config(e.to_string()))?
        }
        None => CohortTemplate::default_city(),
    };
    let cohort = generate_cohort(users, &template, seed).map_err(|e| CliError::config(e.to_string()))?;
    write_traces(output, &cohort.traces)?;
    if let Some(p) = truth {
        let mut w = writer(p)?;
        serde_json::to_writer_pretty(&mut w, &cohort.truth).map_err(|e| CliError::internal(Stage::Output, e.to_string()))?;
        w.flush().map_err(|e| CliError::io(Stage::Output, e))?;
    }
    Ok(cohort.traces.len())
}

#[derive(Debug, Serialize)]
struct AttackRow {
    user_id: String,
    measurements: usize,
    vulnerable: bool,
    clusters: usize,
    area_km2: f64,
    cells: usize,
}

/// Attacks every user of a file and writes one row per user.
pub fn attack_cmd(
    input: &Path,
    attack_cfg: &AttackConfig,
    rounding_decimals: Option<u32>,
    output: &Path,
) -> Result<usize, CliError> {
    let traces = read_traces(input, 0.0)?;
    let schedule = attack_cfg.schedule()?;
    let opts = attack_cfg.options();
    let mech = rounding_decimals
        .map(|d| geopriv_core::lppm::RoundingConfig::new(d).map(Mechanism::Rounding))
        .transpose()
        .map_err(|e| CliError::config(e.to_string()))?;
    let results = traces
        .par_iter()
        .map(|t| attack(t, mech.as_ref(), &schedule, &opts, attack_cfg.work_hours))
        .collect::<geopriv_core::Result<Vec<_>>>()
        .map_err(|e| CliError::from_core(Stage::Attack, e))?;
    let mut w = csv::Writer::from_writer(writer(output)?);
    let mut vulnerable = 0;
    for (t, r) in traces.iter().zip(&results) {
        vulnerable += usize::from(r.is_vulnerable());
        w.serialize(AttackRow {
            user_id: t.user_id.clone(),
            measurements: t.len(),
            vulnerable: r.is_vulnerable(),
            clusters: r.clusters.len(),
            area_km2: r.area.area_km2(),
            cells: r.area.cell_count(),
        })
        .map_err(|e| CliError::internal(Stage::Output, e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(Stage::Output, e))?;
    Ok(vulnerable)
}

/// Applies one mechanism to every user of a file.
pub fn protect_cmd(
    input: &Path,
    mechanism: &Mechanism,
    seed: u64,
    prior_input: Option<&Path>,
    output: &Path,
) -> Result<usize, CliError> {
    let traces = read_traces(input, 0.0)?;
    let prior = match prior_input {
        Some(p) => {
            let train = read_traces(p, 0.0)?;
            Some(build_prior(&train).map_err(|e| CliError::from_core(Stage::Prior, e))?)
        }
        None => None,
    };
    if matches!(mechanism, Mechanism::GeoIndOr(_)) && prior.is_none() {
        return Err(CliError::config("geoind-or needs --prior with training users"));
    }
    let protected = traces
        .par_iter()
        .map(|t| mechanism.apply(t, seed, prior.as_ref()).map(|p| p.trace))
        .collect::<geopriv_core::Result<Vec<_>>>()
        .map_err(|e| CliError::from_core(Stage::Protect, e))?;
    let hidden = traces.iter().map(UserTrace::len).sum::<usize>() - protected.iter().map(UserTrace::len).sum::<usize>();
    write_traces(output, &protected)?;
    Ok(hidden)
}

/// Spatial privacy gain between an original and a protected file, for
/// users vulnerable in the original.
pub fn evaluate_cmd(
    before: &Path,
    after: &Path,
    attack_cfg: &AttackConfig,
    rounding_decimals: Option<u32>,
    label: &str,
    output: &Path,
) -> Result<usize, CliError> {
    let schedule = attack_cfg.schedule()?;
    let opts = attack_cfg.options();
    let orig = read_traces(before, 0.0)?;
    let prot: BTreeMap<String, UserTrace> =
        read_traces(after, 0.0)?.into_iter().map(|t| (t.user_id.clone(), t)).collect();
    let mech = rounding_decimals
        .map(|d| geopriv_core::lppm::RoundingConfig::new(d).map(Mechanism::Rounding))
        .transpose()
        .map_err(|e| CliError::config(e.to_string()))?;
    let rows: Vec<Option<GainRow>> = orig
        .par_iter()
        .map(|t| {
            let b = attack(t, None, &schedule, &opts, attack_cfg.work_hours)
                .map_err(|e| CliError::from_core(Stage::Baseline, e))?;
            if !b.is_vulnerable() {
                return Ok(None);
            }
            let empty = UserTrace::new(t.user_id.clone(), t.utc_offset, Vec::new());
            let p = prot.get(&t.user_id).unwrap_or(&empty);
            let a = attack(p, mech.as_ref(), &schedule, &opts, attack_cfg.work_hours)
                .map_err(|e| CliError::from_core(Stage::Attack, e))?;
            let g = spatial_gain(&b.area, &a.area).map_err(|e| CliError::from_core(Stage::Metrics, e))?;
            Ok(Some(GainRow::new(&t.user_id, label, "spatial", t.len(), &g)))
        })
        .collect::<Result<_, CliError>>()?;
    let rows: Vec<GainRow> = rows.into_iter().flatten().collect();
    write_gain_rows(writer(output)?, &rows).map_err(|e| CliError::from_core(Stage::Output, e))?;
    Ok(rows.len())
}

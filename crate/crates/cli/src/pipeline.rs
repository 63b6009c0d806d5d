//! The full evaluation: ingest, baseline attack, then per mechanism
//! protect, attack again, score privacy gain and utility.

use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use geopriv_core::attack::infer::rounding_square_side;
use geopriv_core::attack::{
    infer_areas, query_pois, rounding_adversary_areas, AttackResult, InferOptions, OfflinePois, OverpassConfig,
    OverpassProvider, PoiProvider, Schedule,
};
use geopriv_core::ingest::{self, FilterReport, ParseReport};
use geopriv_core::lppm::{build_prior, Mechanism, Prior, Protected};
use geopriv_core::metrics::{anchor_recall, poi_gain, spatial_gain, vulnerability_stats, GainRow};
use geopriv_core::seed::derive_seed;
use geopriv_core::synth::{generate_cohort, GroundTruth};
use geopriv_core::utility::grid_io::{sidecar, write_grid, write_hotspots, write_transition_matrix};
use geopriv_core::utility::{
    antenna_error, average_recent, build_radiation_map, detect_hotspots, haversine_error_stats, locate_antennas,
    map_diff, summarize, transition_matrix, AntennaEstimate, AveragedPoint, RadiationGrid, RegionSpec, Summary,
    HOTSPOT_CPM,
};
use geopriv_core::{GeoPoint, Measurement, UserTrace, UtcOffset};

use crate::config::{DatasetKind, PoiProviderKind, RunConfig};
use crate::error::{CliError, Stage};
use crate::manifest::{areas_digest, sha256_hex, traces_digest, RunManifest, StageRecord, MANIFEST_FILE};

/// Cohort after ingest and filtering.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub traces: Vec<UserTrace>,
    pub truth: Option<Vec<GroundTruth>>,
    pub parse: ParseReport,
    pub filter: FilterReport,
    pub input_digest: String,
}

fn open(path: &Path, stage: Stage) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::data(stage, format!("cannot open {}: {e}", path.display())))
}

fn file_digest(path: &Path, stage: Stage) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Loads and filters the configured dataset.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let stage = Stage::Ingest;
    let d = &cfg.dataset;
    let exclude = match &d.exclude {
        Some(p) => ingest::read_exclusion_list(open(p, stage)?).map_err(|e| CliError::from_core(stage, e))?,
        None => BTreeSet::new(),
    };
    let (traces, truth, parse, input_digest) = match d.kind {
        DatasetKind::Safecast => {
            let path = d.path.as_ref().expect("validated");
            let parsed = ingest::parse_safecast(open(path, stage)?, d.tz_offset_hours, &exclude)
                .map_err(|e| CliError::from_core(stage, e))?;
            (parsed.items, None, parsed.report, file_digest(path, stage)?)
        }
        DatasetKind::Radiocells => {
            let path = d.path.as_ref().expect("validated");
            let records = ingest::parse_radiocells(open(path, stage)?).map_err(|e| CliError::from_core(stage, e))?;
            let users = ingest::derive_radiocells_users(records.items, UtcOffset::from_hours(d.tz_offset_hours));
            let mut report = records.report;
            report.malformed_rows += users.report.malformed_rows;
            let mut traces = Vec::new();
            for t in users.items {
                if exclude.contains(&t.user_id) {
                    report.excluded_rows += t.len();
                } else {
                    traces.push(t);
                }
            }
            (traces, None, report, file_digest(path, stage)?)
        }
        DatasetKind::Synth => {
            let template = cfg.template();
            let n = d.users.expect("validated");
            let cohort = generate_cohort(n, &template, derive_seed(cfg.seed, "synth"))
                .map_err(|e| CliError::config(e.to_string()))?;
            let rows = cohort.traces.iter().map(UserTrace::len).sum();
            let digest = sha256_hex(&serde_json::to_vec(&template).expect("template serializes"));
            let mut truth = cohort.truth;
            let mut traces = Vec::new();
            let mut excluded = 0;
            for t in cohort.traces {
                if exclude.contains(&t.user_id) {
                    excluded += t.len();
                } else {
                    traces.push(t);
                }
            }
            truth.retain(|g| !exclude.contains(&g.user_id));
            let report = ParseReport {
                rows_total: rows,
                malformed_rows: 0,
                excluded_rows: excluded,
            };
            (traces, Some(truth), report, digest)
        }
    };
    let (traces, filter) = ingest::filter_users(traces, d.min_points, d.max_speed_kmh);
    let truth = truth.map(|t| {
        let kept: BTreeSet<&str> = traces.iter().map(|t| t.user_id.as_str()).collect();
        t.into_iter().filter(|g| kept.contains(g.user_id.as_str())).collect()
    });
    Ok(Dataset {
        traces,
        truth,
        parse,
        filter,
        input_digest,
    })
}

/// Splits users into prior-training and evaluation sets by a seeded hash
/// order. Evaluation users keep their input order.
pub fn split_for_prior(traces: &[UserTrace], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n = traces.len();
    let mut order: Vec<(u64, usize)> = traces
        .iter()
        .enumerate()
        .map(|(i, t)| (derive_seed(seed, &format!("prior/{}", t.user_id)), i))
        .collect();
    order.sort_unstable();
    let n_train = ((n as f64 * fraction).round() as usize).clamp(1.min(n), n.saturating_sub(1));
    let mut train: Vec<usize> = order[..n_train].iter().map(|x| x.1).collect();
    let mut eval: Vec<usize> = order[n_train..].iter().map(|x| x.1).collect();
    train.sort_unstable();
    eval.sort_unstable();
    (train, eval)
}

/// The attack as the pipeline runs it: the rounding adversary against
/// 2- or 3-decimal rounding, the clustering schedule otherwise.
pub fn attack(
    trace: &UserTrace,
    mechanism: Option<&Mechanism>,
    schedule: &Schedule,
    opts: &InferOptions,
    work_hours: bool,
) -> geopriv_core::Result<AttackResult> {
    let view;
    let target = if work_hours {
        view = trace.work_hours();
        &view
    } else {
        trace
    };
    match mechanism {
        Some(Mechanism::Rounding(c)) if rounding_square_side(c.decimals).is_some() => {
            rounding_adversary_areas(target, c.decimals, schedule, opts)
        }
        _ => infer_areas(target, schedule, opts),
    }
}

fn make_poi_provider(cfg: &RunConfig) -> Result<Option<Box<dyn PoiProvider>>, CliError> {
    let p = &cfg.poi;
    Ok(match p.provider {
        PoiProviderKind::None => None,
        PoiProviderKind::Offline => {
            let path = p.path.as_ref().expect("validated");
            let reader = open(path, Stage::Config)?;
            let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
            let pois = if ext == "csv" {
                OfflinePois::from_csv(reader)
            } else {
                OfflinePois::from_geojson(reader)
            }
            .map_err(|e| CliError::config(format!("POI file {}: {e}", path.display())))?;
            Some(Box::new(pois))
        }
        PoiProviderKind::Overpass => Some(Box::new(OverpassProvider::new(OverpassConfig {
            endpoint: p
                .endpoint
                .clone()
                .unwrap_or_else(|| geopriv_core::attack::poi::DEFAULT_OVERPASS_ENDPOINT.to_string()),
            timeout_s: p.timeout_s.unwrap_or(60),
            cache_dir: cfg.cache_dir(),
            keys: geopriv_core::attack::poi::default_poi_keys(),
        }))),
    })
}

fn poi_ids(area: &geopriv_core::attack::AreaEstimate, provider: &dyn PoiProvider) -> Result<BTreeSet<String>, CliError> {
    Ok(query_pois(area, provider)
        .map_err(|e| CliError::data(Stage::Metrics, e.to_string()))?
        .into_iter()
        .map(|p| p.id)
        .collect())
}

#[derive(Debug, Serialize)]
struct UserRow<'a> {
    user_id: &'a str,
    measurements: usize,
    vulnerable: bool,
    clusters: usize,
    area_km2: f64,
    method: String,
}

#[derive(Debug, Serialize)]
struct VulnerabilityRow {
    lppm: String,
    users_total: usize,
    vulnerable_before: usize,
    vulnerable_after: usize,
    reduction: f64,
    no_baseline: bool,
}

#[derive(Debug, Default, Serialize)]
struct SummaryRow {
    lppm: String,
    count: usize,
    min: Option<f64>,
    q1: Option<f64>,
    median: Option<f64>,
    q3: Option<f64>,
    max: Option<f64>,
    mean: Option<f64>,
}

impl SummaryRow {
    fn new(lppm: &str, s: Option<Summary>) -> Self {
        match s {
            Some(s) => Self {
                lppm: lppm.to_string(),
                count: s.count,
                min: Some(s.min),
                q1: Some(s.q1),
                median: Some(s.median),
                q3: Some(s.q3),
                max: Some(s.max),
                mean: Some(s.mean),
            },
            None => Self {
                lppm: lppm.to_string(),
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Serialize)]
struct DistanceRow {
    lppm: String,
    released: usize,
    hidden: usize,
    min: Option<f64>,
    q1: Option<f64>,
    median: Option<f64>,
    q3: Option<f64>,
    max: Option<f64>,
    mean: Option<f64>,
}

#[derive(Debug, Serialize)]
struct RecallRow<'a> {
    user_id: &'a str,
    lppm: &'a str,
    recall_before: Option<f64>,
    recall_after: Option<f64>,
}

#[derive(Debug, Serialize)]
struct HotspotSummaryRow {
    lppm: String,
    hotspots: usize,
    shared_with_baseline: usize,
    new: usize,
}

#[derive(Debug, Serialize)]
struct AntennaRow {
    lppm: String,
    antennas_before: usize,
    antennas_after: usize,
    lost: usize,
    lost_fraction: Option<f64>,
    median_error_m: Option<f64>,
    q3_error_m: Option<f64>,
    max_error_m: Option<f64>,
}

/// Writes into the output directory and remembers each file.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn path(&mut self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(Stage::Output, e))?;
        }
        self.written.push(rel.to_string());
        Ok(p)
    }

    fn csv<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<(), CliError> {
        let p = self.path(rel)?;
        let mut w = csv::Writer::from_path(&p).map_err(|e| CliError::internal(Stage::Output, e.to_string()))?;
        for r in rows {
            w.serialize(r).map_err(|e| CliError::internal(Stage::Output, e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::io(Stage::Output, e))
    }

    fn with_file<F>(&mut self, rel: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(File) -> geopriv_core::Result<()>,
    {
        let p = self.path(rel)?;
        let file = File::create(&p).map_err(|e| CliError::io(Stage::Output, e))?;
        f(file).map_err(|e| CliError::from_core(Stage::Output, e))
    }
}

struct Timer {
    name: String,
    input: String,
    start: Instant,
}

impl Timer {
    fn start(name: impl Into<String>, input: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            input: input.into(),
            start: Instant::now(),
        }
    }

    fn finish(self, manifest: &mut RunManifest, output: String) {
        manifest.stages.push(StageRecord {
            name: self.name,
            input_digest: self.input,
            output_digest: output,
            seconds: self.start.elapsed().as_secs_f64(),
        });
    }
}

fn pooled<'a>(traces: impl IntoIterator<Item = &'a UserTrace>) -> Vec<Measurement> {
    traces
        .into_iter()
        .flat_map(|t| t.measurements.iter())
        .filter(|m| m.unit.eq_ignore_ascii_case("cpm"))
        .cloned()
        .collect()
}

/// Everything the pipeline keeps about one mechanism pass.
struct Pass {
    label: String,
    protected: Vec<Protected>,
}

struct RadiationBaseline {
    region: RegionSpec,
    anchor: i64,
    averaged: Vec<AveragedPoint>,
    grid: Option<RadiationGrid>,
}

/// Runs the configured evaluation and writes every report into the output
/// directory. The manifest is written even when a stage fails, marked
/// invalid.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(Stage::Output, e))?;
    let mut manifest = RunManifest::new(cfg.hash(), cfg.seed);
    let mut out = Outputs {
        dir: cfg.output_dir.clone(),
        written: Vec::new(),
    };
    let result = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::internal(Stage::Config, e.to_string()))
            .and_then(|pool| pool.install(|| run_stages(cfg, &mut manifest, &mut out))),
        None => run_stages(cfg, &mut manifest, &mut out),
    };
    if let Err(e) = &result {
        manifest.error = Some(e.to_string());
    }
    manifest.valid = result.is_ok();
    for rel in &out.written {
        let digest = std::fs::read(out.dir.join(rel)).map(|b| sha256_hex(&b)).unwrap_or_default();
        manifest.outputs.insert(rel.clone(), digest);
    }
    manifest.write(&cfg.output_dir).map_err(|e| CliError::io(Stage::Output, e))?;
    result.map(|_| manifest)
}

fn run_stages(cfg: &RunConfig, manifest: &mut RunManifest, out: &mut Outputs) -> Result<(), CliError> {
    // ingest
    let timer = Timer::start("ingest", String::new());
    let data = load_dataset(cfg)?;
    let timer = Timer { input: data.input_digest.clone(), ..timer };
    timer.finish(manifest, traces_digest(&data.traces));
    manifest.tallies.parse = data.parse.clone();
    manifest.tallies.filter = data.filter.clone();
    if data.traces.is_empty() {
        return Err(CliError::data(Stage::Ingest, "no users left after filtering"));
    }

    let mechanisms: Vec<(Mechanism, u64)> = cfg
        .lppm
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let m = e.resolve()?;
            let seed = e.seed.unwrap_or_else(|| derive_seed(cfg.seed, &format!("lppm/{i}/{}", m.label())));
            Ok((m, seed))
        })
        .collect::<Result<_, CliError>>()?;

    // prior
    let needs_prior = mechanisms.iter().any(|(m, _)| matches!(m, Mechanism::GeoIndOr(_)));
    let (prior, eval_idx): (Option<Prior>, Vec<usize>) = if needs_prior {
        if data.traces.len() < 2 {
            return Err(CliError::data(Stage::Prior, "optimal remapping needs at least two users"));
        }
        let (train, eval) = split_for_prior(&data.traces, cfg.prior.train_fraction, derive_seed(cfg.seed, "prior"));
        let input = traces_digest(train.iter().map(|&i| &data.traces[i]));
        let timer = Timer::start("prior", input);
        let prior = build_prior(train.iter().map(|&i| &data.traces[i])).map_err(|e| CliError::from_core(Stage::Prior, e))?;
        timer.finish(manifest, format!("{} cells", prior.len()));
        manifest.tallies.prior_users = train.len();
        (Some(prior), eval)
    } else {
        (None, (0..data.traces.len()).collect())
    };
    let users: Vec<&UserTrace> = eval_idx.iter().map(|&i| &data.traces[i]).collect();
    let truth: Option<BTreeMap<&str, Vec<GeoPoint>>> = data.truth.as_ref().map(|t| {
        t.iter()
            .map(|g| (g.user_id.as_str(), g.anchors.iter().map(|a| a.1).collect()))
            .collect()
    });
    manifest.tallies.users_evaluated = users.len();
    let users_digest = traces_digest(users.iter().copied());

    // baseline
    let schedule = cfg.attack.schedule()?;
    let opts = cfg.attack.options();
    let timer = Timer::start("baseline", users_digest.clone());
    let baseline: Vec<AttackResult> = users
        .par_iter()
        .map(|t| attack(t, None, &schedule, &opts, cfg.attack.work_hours))
        .collect::<geopriv_core::Result<_>>()
        .map_err(|e| CliError::from_core(Stage::Baseline, e))?;
    timer.finish(manifest, areas_digest(baseline.iter().map(|r| &r.area)));
    let user_rows: Vec<UserRow> = users
        .iter()
        .zip(&baseline)
        .map(|(t, r)| UserRow {
            user_id: &t.user_id,
            measurements: t.len(),
            vulnerable: r.is_vulnerable(),
            clusters: r.clusters.len(),
            area_km2: r.area.area_km2(),
            method: r.method.map(|m| serde_json::to_string(&m).expect("serializes")).unwrap_or_default(),
        })
        .collect();
    out.csv("users.csv", &user_rows)?;

    let provider = make_poi_provider(cfg)?;
    let baseline_pois: Option<Vec<BTreeSet<String>>> = match &provider {
        Some(p) => Some(
            baseline
                .par_iter()
                .map(|r| poi_ids(&r.area, p.as_ref()))
                .collect::<Result<_, _>>()?,
        ),
        None => None,
    };

    // per mechanism
    let mut gain_rows: Vec<GainRow> = Vec::new();
    let mut vuln_rows = Vec::new();
    let mut distance_rows = Vec::new();
    let mut recall_rows_owned: Vec<(String, String, Option<f64>, Option<f64>)> = Vec::new();
    let mut passes: Vec<Pass> = Vec::new();
    for (mech, seed) in &mechanisms {
        let label = mech.label();
        let timer = Timer::start(format!("protect:{label}"), users_digest.clone());
        let protected: Vec<Protected> = users
            .par_iter()
            .map(|t| mech.apply(t, *seed, prior.as_ref()))
            .collect::<geopriv_core::Result<_>>()
            .map_err(|e| CliError::from_core(Stage::Protect, e))?;
        let protected_digest = traces_digest(protected.iter().map(|p| &p.trace));
        timer.finish(manifest, protected_digest.clone());

        let timer = Timer::start(format!("attack:{label}"), protected_digest);
        let after: Vec<AttackResult> = protected
            .par_iter()
            .map(|p| attack(&p.trace, Some(mech), &schedule, &opts, cfg.attack.work_hours))
            .collect::<geopriv_core::Result<_>>()
            .map_err(|e| CliError::from_core(Stage::Attack, e))?;
        timer.finish(manifest, areas_digest(after.iter().map(|r| &r.area)));

        let timer = Timer::start(format!("metrics:{label}"), String::new());
        let before_flags: Vec<bool> = baseline.iter().map(AttackResult::is_vulnerable).collect();
        let after_flags: Vec<bool> = after.iter().map(AttackResult::is_vulnerable).collect();
        let v = vulnerability_stats(&before_flags, &after_flags).map_err(|e| CliError::from_core(Stage::Metrics, e))?;
        vuln_rows.push(VulnerabilityRow {
            lppm: label.clone(),
            users_total: v.users_total,
            vulnerable_before: v.vulnerable_before,
            vulnerable_after: v.vulnerable_after,
            reduction: v.reduction,
            no_baseline: v.no_baseline,
        });

        let per_user: Vec<Vec<GainRow>> = users
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                let mut rows = Vec::new();
                if !baseline[i].is_vulnerable() {
                    return Ok(rows);
                }
                if cfg.metrics.spatial {
                    let g = spatial_gain(&baseline[i].area, &after[i].area)
                        .map_err(|e| CliError::from_core(Stage::Metrics, e))?;
                    rows.push(GainRow::new(&t.user_id, &label, "spatial", t.len(), &g));
                }
                if let (Some(p), Some(bp)) = (&provider, &baseline_pois) {
                    if !bp[i].is_empty() {
                        let g = poi_gain(&bp[i], &poi_ids(&after[i].area, p.as_ref())?);
                        rows.push(GainRow::new(&t.user_id, &label, "poi", t.len(), &g));
                    }
                }
                Ok(rows)
            })
            .collect::<Result<_, CliError>>()?;
        gain_rows.extend(per_user.into_iter().flatten());

        if cfg.metrics.distance {
            let mut all = Vec::new();
            let mut hidden = 0;
            for (t, p) in users.iter().zip(&protected) {
                let s = haversine_error_stats(t, p).map_err(|e| CliError::from_core(Stage::Metrics, e))?;
                hidden += s.hidden;
                all.extend(s.distances);
            }
            let s = SummaryRow::new(&label, summarize(&all));
            distance_rows.push(DistanceRow {
                lppm: label.clone(),
                released: all.len(),
                hidden,
                min: s.min,
                q1: s.q1,
                median: s.median,
                q3: s.q3,
                max: s.max,
                mean: s.mean,
            });
        }

        if let Some(truth) = &truth {
            for (i, t) in users.iter().enumerate() {
                let anchors = truth.get(t.user_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                recall_rows_owned.push((
                    t.user_id.clone(),
                    label.clone(),
                    anchor_recall(&baseline[i].area, anchors),
                    anchor_recall(&after[i].area, anchors),
                ));
            }
        }
        timer.finish(manifest, String::new());
        passes.push(Pass { label, protected });
    }

    out.with_file("gains.csv", |f| geopriv_core::metrics::write_gain_rows(f, &gain_rows))?;
    out.csv("vulnerability.csv", &vuln_rows)?;
    if cfg.metrics.distance {
        out.csv("distance_summary.csv", &distance_rows)?;
    }
    if truth.is_some() {
        let rows: Vec<RecallRow> = recall_rows_owned
            .iter()
            .map(|(u, l, b, a)| RecallRow {
                user_id: u,
                lppm: l,
                recall_before: *b,
                recall_after: *a,
            })
            .collect();
        out.csv("anchor_recall.csv", &rows)?;
    }

    run_utility(cfg, manifest, out, &users, &passes)
}

fn run_utility(
    cfg: &RunConfig,
    manifest: &mut RunManifest,
    out: &mut Outputs,
    users: &[&UserTrace],
    passes: &[Pass],
) -> Result<(), CliError> {
    let m = &cfg.metrics;
    let radiation_data = cfg.dataset.kind != DatasetKind::Radiocells;
    let region = cfg.region();
    if radiation_data && (m.radiation || m.hotspots) {
        if let Some(region) = region {
            let timer = Timer::start("utility:radiation", traces_digest(users.iter().copied()));
            let base = radiation_baseline(cfg, users, region)?;
            if m.hotspots {
                let hs = detect_hotspots(&base.averaged, HOTSPOT_CPM);
                out.with_file("hotspots/baseline.csv", |f| write_hotspots(f, &hs))?;
            }
            if let (true, Some(g)) = (m.write_grids, &base.grid) {
                write_grid_files(out, "baseline", g)?;
            }
            let mut diff_rows = Vec::new();
            let mut hotspot_rows = Vec::new();
            let base_hot: BTreeSet<(u64, u64)> = detect_hotspots(&base.averaged, HOTSPOT_CPM)
                .iter()
                .map(|h| (h.point.lat().to_bits(), h.point.lon().to_bits()))
                .collect();
            for pass in passes {
                let ms = pooled(pass.protected.iter().map(|p| &p.trace));
                let averaged = average_recent(&ms, m.window_days, Some(base.anchor));
                if m.hotspots {
                    let hs = detect_hotspots(&averaged, HOTSPOT_CPM);
                    let shared = hs
                        .iter()
                        .filter(|h| base_hot.contains(&(h.point.lat().to_bits(), h.point.lon().to_bits())))
                        .count();
                    hotspot_rows.push(HotspotSummaryRow {
                        lppm: pass.label.clone(),
                        hotspots: hs.len(),
                        shared_with_baseline: shared,
                        new: hs.len() - shared,
                    });
                    out.with_file(&format!("hotspots/{}.csv", pass.label), |f| write_hotspots(f, &hs))?;
                }
                if let (true, Some(base_grid)) = (m.radiation, &base.grid) {
                    match build_radiation_map(&averaged, &base.region, m.grid_resolution) {
                        Ok(grid) => {
                            let d = map_diff(base_grid, &grid).map_err(|e| CliError::from_core(Stage::Utility, e))?;
                            diff_rows.push(SummaryRow::new(&pass.label, d.summary));
                            let t = transition_matrix(base_grid, &grid)
                                .map_err(|e| CliError::from_core(Stage::Utility, e))?;
                            out.with_file(&format!("transitions/{}.csv", pass.label), |f| {
                                write_transition_matrix(f, &t)
                            })?;
                            if m.write_grids {
                                write_grid_files(out, &pass.label, &grid)?;
                            }
                        }
                        // every released point left the region or was hidden
                        Err(geopriv_core::Error::EmptyInput(_)) => diff_rows.push(SummaryRow::new(&pass.label, None)),
                        Err(e) => return Err(CliError::from_core(Stage::Utility, e)),
                    }
                }
            }
            if m.radiation && base.grid.is_some() {
                out.csv("map_diff_summary.csv", &diff_rows)?;
            }
            if m.hotspots {
                out.csv("hotspot_summary.csv", &hotspot_rows)?;
            }
            timer.finish(manifest, String::new());
        }
    }

    if m.antennas {
        let timer = Timer::start("utility:antennas", String::new());
        let before: Vec<AntennaEstimate> = locate_antennas(users.iter().flat_map(|t| t.measurements.iter()));
        let rows: Vec<AntennaRow> = passes
            .iter()
            .map(|pass| {
                let after = locate_antennas(pass.protected.iter().flat_map(|p| p.trace.measurements.iter()));
                let e = antenna_error(&before, &after);
                AntennaRow {
                    lppm: pass.label.clone(),
                    antennas_before: before.len(),
                    antennas_after: after.len(),
                    lost: e.lost,
                    lost_fraction: (!before.is_empty()).then(|| e.lost as f64 / before.len() as f64),
                    median_error_m: e.summary.map(|s| s.median),
                    q3_error_m: e.summary.map(|s| s.q3),
                    max_error_m: e.summary.map(|s| s.max),
                }
            })
            .collect();
        out.csv("antennas.csv", &rows)?;
        timer.finish(manifest, String::new());
    }
    Ok(())
}

fn radiation_baseline(cfg: &RunConfig, users: &[&UserTrace], region: RegionSpec) -> Result<RadiationBaseline, CliError> {
    let ms = pooled(users.iter().copied());
    let anchor = ms
        .iter()
        .map(|m| m.t)
        .max()
        .ok_or_else(|| CliError::data(Stage::Utility, "no cpm measurements for the radiation map"))?;
    let averaged = average_recent(&ms, cfg.metrics.window_days, Some(anchor));
    let grid = if cfg.metrics.radiation {
        Some(build_radiation_map(&averaged, &region, cfg.metrics.grid_resolution).map_err(|e| CliError::from_core(Stage::Utility, e))?)
    } else {
        None
    };
    Ok(RadiationBaseline {
        region,
        anchor,
        averaged,
        grid,
    })
}

fn write_grid_files(out: &mut Outputs, label: &str, grid: &RadiationGrid) -> Result<(), CliError> {
    out.with_file(&format!("grids/{label}.bin"), |f| write_grid(std::io::BufWriter::new(f), grid))?;
    let meta = serde_json::to_string_pretty(&sidecar(grid)).expect("sidecar serializes");
    let p = out.path(&format!("grids/{label}.json"))?;
    std::fs::write(p, meta + "\n").map_err(|e| CliError::io(Stage::Output, e))
}

/// Files a run writes, apart from the manifest, in manifest order.
pub fn report_files(manifest: &RunManifest) -> Vec<&str> {
    manifest.outputs.keys().map(String::as_str).filter(|k| *k != MANIFEST_FILE).collect()
}

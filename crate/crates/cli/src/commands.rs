use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dpbo::bo::{run_bo, BoConfig};
use dpbo::data::{
    load_generation_csv, load_irradiance_csv, synthesize, write_generation, write_irradiance,
    IrradianceRecord, Location, PowerProfile, SyntheticScenario,
};
use dpbo::dp::{
    expected_release, mean_release_error, mechanism_denominator, normalized_rmse,
    sensitivity_bound, softmax, write_log_weights, DpParams, MeanSurface, ScaleForm,
    SensitivityBound,
};
use dpbo::fitscore::{grid_search, DomainGrid, FitObjective, ModelOptions};
use dpbo::preprocess::{preprocess, PreprocessReport};
use dpbo::solar_model::SurfaceOrientation;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{
    config_hash, Options, DEFAULT_DELTA, DEFAULT_SWEEP_DELTAS, DEFAULT_SWEEP_EPSILONS,
    DEFAULT_SWEEP_SAMPLES,
};
use crate::error::{CliError, Result};

pub const TOOL: &str = "dpbo";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const BEST_FILE: &str = "best.json";
pub const POSTERIOR_FILE: &str = "posterior_surface.csv";

/// Provenance stamped into every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Meta {
    fn new(command: &str, seed: u64, config_hash: String) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            seed,
            config_hash,
        }
    }

    /// Text for the leading `#` line of CSV outputs.
    pub fn header(&self) -> String {
        format!(
            "{} {} command={} seed={} config={}",
            self.tool, self.version, self.command, self.seed, self.config_hash
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub azimuth_step: f64,
    pub tilt_step: f64,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub azimuth_deg: f64,
    pub tilt_deg: f64,
    pub fit_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEstimate {
    pub azimuth_deg: f64,
    pub tilt_deg: f64,
    pub mean: f64,
}

/// `best.json`, shared by `infer` and `oracle`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestReport {
    pub meta: Meta,
    /// `bo` or `grid`.
    pub method: String,
    pub grid: GridInfo,
    /// Number of objective queries (T for BO, |Λ| for the grid).
    pub budget: usize,
    pub delta: Option<f64>,
    /// Distinct grid points evaluated.
    pub evaluations: usize,
    pub best: Estimate,
    pub posterior_argmax: Option<PosteriorEstimate>,
    /// False when the best tilt is 0°, where every azimuth fits equally.
    pub azimuth_identifiable: bool,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| CliError::io(path, e))?,
    ))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_csv_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| CliError::io(path, e))?;
    finish(path, w)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

// ---------------------------------------------------------------------------
// synth

pub fn synth(opts: &Options) -> Result<Vec<PathBuf>> {
    let path = opts.required("scenario", &opts.scenario)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut scenario = SyntheticScenario::from_json(&text)?;
    if let Some(seed) = opts.seed {
        scenario.rng_seed = seed;
    }
    let settings = serde_json::to_value(&scenario).expect("scenario serializes");
    let meta = Meta::new(
        "synth",
        scenario.rng_seed,
        config_hash("synth", &settings, &[])?,
    );
    let (irradiance, profile) = synthesize(&scenario)?;

    let out = opts.out_dir();
    create_dir(&out)?;
    let irr_path = out.join("irradiance.csv");
    let mut w = create(&irr_path)?;
    write_irradiance(&mut w, &irradiance, Some(&meta.header()))?;
    finish(&irr_path, w)?;
    let gen_path = out.join("generation.csv");
    let mut w = create(&gen_path)?;
    write_generation(&mut w, &profile, Some(&meta.header()))?;
    finish(&gen_path, w)?;
    let truth_path = out.join("ground_truth.json");
    write_json(
        &truth_path,
        &json!({
            "meta": meta,
            "site_id": scenario.site_id,
            "location": scenario.location,
            "orientation": scenario.ground_truth.orientation,
            "panel": scenario.ground_truth.panel,
            "scenario": scenario,
        }),
    )?;
    Ok(vec![irr_path, gen_path, truth_path])
}

// ---------------------------------------------------------------------------
// infer / oracle

#[derive(Deserialize)]
struct SiteFile {
    location: Location,
    #[serde(default)]
    site_id: Option<String>,
}

fn site(opts: &Options) -> Result<(String, Location)> {
    let file: Option<SiteFile> = opts.site.as_deref().map(read_json).transpose()?;
    let location = match (opts.latitude, opts.longitude, &file) {
        (Some(lat), Some(lon), _) => Location::new(lat, lon),
        (None, None, Some(f)) => f.location,
        _ => {
            return Err(CliError::Validation(
                "site location needed: give --latitude and --longitude, or --site".into(),
            ))
        }
    };
    if !location.is_valid() {
        return Err(CliError::Validation(format!(
            "invalid location {location:?}"
        )));
    }
    let id = opts
        .site_id
        .clone()
        .or_else(|| file.and_then(|f| f.site_id))
        .unwrap_or_else(|| "site".into());
    Ok((id, location))
}

struct Inputs {
    generation: PathBuf,
    irradiance: PathBuf,
    location: Location,
    profile: PowerProfile,
    records: Vec<IrradianceRecord>,
}

fn load_inputs(opts: &Options) -> Result<Inputs> {
    let generation = opts.required("generation", &opts.generation)?.to_path_buf();
    let irradiance = opts.required("irradiance", &opts.irradiance)?.to_path_buf();
    let (site_id, location) = site(opts)?;
    let records = load_irradiance_csv(&irradiance)?;
    let profile = load_generation_csv(&generation, &site_id, location)?;
    Ok(Inputs {
        generation,
        irradiance,
        location,
        profile,
        records,
    })
}

fn grid(opts: &Options) -> Result<(DomainGrid, GridInfo)> {
    let (az, tilt) = opts.grid_steps();
    let grid = DomainGrid::regular(az, tilt)?;
    let size = grid.len();
    Ok((
        grid,
        GridInfo {
            azimuth_step: az,
            tilt_step: tilt,
            size,
        },
    ))
}

fn objective(opts: &Options, inputs: &Inputs) -> Result<(FitObjective, PreprocessReport)> {
    let (groups, report) = preprocess(
        &inputs.profile,
        &inputs.records,
        opts.grouping.unwrap_or_default(),
    )?;
    Ok((FitObjective::new(&groups, ModelOptions::default())?, report))
}

pub fn infer(opts: &Options) -> Result<Vec<PathBuf>> {
    let inputs = load_inputs(opts)?;
    let (grid, info) = grid(opts)?;
    let delta = opts.single_delta()?.unwrap_or(DEFAULT_DELTA);
    let mut config = BoConfig::new(grid.clone(), opts.budget(), delta, opts.seed());
    config.warm_start_count = opts.warm_start();
    config.kernel = opts.kernel()?;
    config.acquisition = opts.acquisition.unwrap_or_default();
    config.validate()?;

    let settings = json!({
        "bo": config,
        "grouping": opts.grouping.unwrap_or_default(),
        "location": inputs.location,
    });
    let meta = Meta::new(
        "infer",
        config.rng_seed,
        config_hash(
            "infer",
            &settings,
            &[&inputs.generation, &inputs.irradiance],
        )?,
    );
    let (objective, report) = objective(opts, &inputs)?;
    let trace = run_bo(
        |l| Ok::<_, std::convert::Infallible>(objective.fit_score(l)),
        &config,
    )?;

    let out = opts.out_dir();
    create_dir(&out)?;
    let header = meta.header();
    let trace_path = out.join("trace.csv");
    write_csv_with(&trace_path, |w| trace.write_records(w, Some(&header)))?;
    let visits_path = out.join("visits.csv");
    write_csv_with(&visits_path, |w| trace.write_visit_counts(w, Some(&header)))?;
    let surface_path = out.join(POSTERIOR_FILE);
    write_csv_with(&surface_path, |w| {
        writeln!(w, "# {header}")?;
        writeln!(w, "azimuth_deg,tilt_deg,mean,variance")?;
        for (i, (m, v)) in trace
            .final_mean
            .iter()
            .zip(&trace.final_variance)
            .enumerate()
        {
            let p = grid.point(i);
            writeln!(w, "{},{},{},{}", p.azimuth_deg, p.tilt_deg, m, v)?;
        }
        Ok(())
    })?;
    let pre_path = out.join("preprocess.json");
    write_json(&pre_path, &json!({ "meta": meta, "report": report }))?;

    let (best_index, best_score) = trace.incumbent();
    let best = grid.point(best_index);
    let mu_index = trace.posterior_argmax();
    let mu = grid.point(mu_index);
    let evaluations = trace.visit_counts().iter().filter(|c| **c > 0).count();
    let best_path = out.join(BEST_FILE);
    write_json(
        &best_path,
        &BestReport {
            meta,
            method: "bo".into(),
            grid: info,
            budget: config.budget,
            delta: Some(delta),
            evaluations,
            best: Estimate {
                azimuth_deg: best.azimuth_deg,
                tilt_deg: best.tilt_deg,
                fit_score: best_score,
            },
            posterior_argmax: Some(PosteriorEstimate {
                azimuth_deg: mu.azimuth_deg,
                tilt_deg: mu.tilt_deg,
                mean: trace.final_mean[mu_index],
            }),
            azimuth_identifiable: best.tilt_deg > 0.0,
        },
    )?;
    Ok(vec![
        trace_path,
        surface_path,
        visits_path,
        pre_path,
        best_path,
    ])
}

pub fn oracle(opts: &Options) -> Result<Vec<PathBuf>> {
    let inputs = load_inputs(opts)?;
    let (grid, info) = grid(opts)?;
    let settings = json!({
        "grid": info,
        "grouping": opts.grouping.unwrap_or_default(),
        "location": inputs.location,
    });
    let meta = Meta::new(
        "oracle",
        opts.seed(),
        config_hash(
            "oracle",
            &settings,
            &[&inputs.generation, &inputs.irradiance],
        )?,
    );
    let (objective, _) = objective(opts, &inputs)?;
    let table = grid_search(&grid, &objective);
    let (best, score) = table.best();

    let out = opts.out_dir();
    create_dir(&out)?;
    let surface_path = out.join("surface.csv");
    write_csv_with(&surface_path, |w| {
        table.write_surface(w, Some(&meta.header()))
    })?;
    let best_path = out.join(BEST_FILE);
    write_json(
        &best_path,
        &BestReport {
            meta,
            method: "grid".into(),
            grid: info,
            budget: grid.len(),
            delta: None,
            evaluations: grid.len(),
            best: Estimate {
                azimuth_deg: best.azimuth_deg,
                tilt_deg: best.tilt_deg,
                fit_score: score,
            },
            posterior_argmax: None,
            azimuth_identifiable: best.tilt_deg > 0.0,
        },
    )?;
    Ok(vec![surface_path, best_path])
}

// ---------------------------------------------------------------------------
// publish / sweep

/// The parts of an `infer` output directory a release needs.
pub struct TraceArtifacts {
    pub best: BestReport,
    pub surface: MeanSurface,
    files: [PathBuf; 2],
}

pub fn load_trace(dir: &Path) -> Result<TraceArtifacts> {
    let best_path = dir.join(BEST_FILE);
    let best: BestReport = read_json(&best_path)?;
    if best.method != "bo" {
        return Err(CliError::Validation(format!(
            "{} comes from `{}`; a release needs the output of `infer`",
            best_path.display(),
            best.meta.command
        )));
    }
    let grid = DomainGrid::regular(best.grid.azimuth_step, best.grid.tilt_step)?;
    let surface_path = dir.join(POSTERIOR_FILE);
    let file = File::open(&surface_path).map_err(|e| CliError::io(&surface_path, e))?;
    let mut mean = Vec::with_capacity(grid.len());
    let mut saw_header = false;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(&surface_path, e))?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            saw_header = true;
            continue;
        }
        let bad = || {
            CliError::Malformed(format!(
                "{}:{}: malformed row",
                surface_path.display(),
                n + 1
            ))
        };
        let cols: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let [az, tilt, m, _] = cols[..] else {
            return Err(bad());
        };
        let i = mean.len();
        if i >= grid.len() || grid.point(i) != SurfaceOrientation::new(az, tilt) {
            return Err(CliError::Malformed(format!(
                "{}: row {} does not match the recorded grid",
                surface_path.display(),
                n + 1
            )));
        }
        mean.push(m);
    }
    if mean.len() != grid.len() || grid.len() != best.grid.size {
        return Err(CliError::Malformed(format!(
            "{}: {} rows for a grid of {}",
            surface_path.display(),
            mean.len(),
            best.grid.size
        )));
    }
    let surface = MeanSurface::new(grid, best.budget, mean)?;
    Ok(TraceArtifacts {
        best,
        surface,
        files: [best_path, surface_path],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseReport {
    pub meta: Meta,
    pub release: SurfaceOrientation,
    pub samples: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub budget: usize,
    pub domain_size: usize,
    pub scale_form: ScaleForm,
    pub sensitivity: SensitivityBound,
    pub denominator: f64,
    pub trace_config: String,
}

pub fn publish(opts: &Options) -> Result<Vec<PathBuf>> {
    let dir = opts.required("trace", &opts.trace)?;
    let trace = load_trace(dir)?;
    if let Some(t) = opts.iters {
        if t != trace.best.budget {
            return Err(CliError::Validation(format!(
                "--iters {t} does not match the trace budget {}",
                trace.best.budget
            )));
        }
    }
    let epsilon = opts.single_epsilon()?;
    let delta = opts
        .single_delta()?
        .or(trace.best.delta)
        .unwrap_or(DEFAULT_DELTA);
    let n = opts.samples.unwrap_or(1);
    if n == 0 {
        return Err(CliError::Validation("--samples must be at least 1".into()));
    }
    let form = opts.scale_form.unwrap_or_default();
    let params = DpParams::new(
        epsilon,
        delta,
        trace.surface.grid.len(),
        trace.surface.budget,
    )?;
    let seed = opts.seed();
    let settings = json!({ "params": params, "samples": n, "scale_form": form });
    let meta = Meta::new(
        "publish",
        seed,
        config_hash("publish", &settings, &[&trace.files[0], &trace.files[1]])?,
    );

    let log_w = trace.surface.log_weights(&params, form)?;
    let draws = trace.surface.samples(&params, form, n, seed)?;
    let grid = &trace.surface.grid;

    let out = opts.out_dir();
    create_dir(&out)?;
    let header = meta.header();
    let releases_path = out.join("releases.csv");
    write_csv_with(&releases_path, |w| {
        writeln!(w, "# {header}")?;
        writeln!(w, "sample,azimuth_deg,tilt_deg")?;
        for (k, i) in draws.iter().enumerate() {
            let p = grid.point(*i);
            writeln!(w, "{},{},{}", k, p.azimuth_deg, p.tilt_deg)?;
        }
        Ok(())
    })?;
    let weights_path = out.join("weights.csv");
    write_csv_with(&weights_path, |w| {
        write_log_weights(w, grid, &log_w, Some(&header))
    })?;
    let report_path = out.join("report.json");
    write_json(
        &report_path,
        &ReleaseReport {
            release: grid.point(draws[0]),
            samples: n,
            epsilon,
            delta,
            budget: params.budget,
            domain_size: params.domain_size,
            scale_form: form,
            sensitivity: sensitivity_bound(&params),
            denominator: mechanism_denominator(&params, form),
            trace_config: trace.best.meta.config_hash.clone(),
            meta,
        },
    )?;
    Ok(vec![releases_path, weights_path, report_path])
}

#[derive(Deserialize)]
struct ReferenceFile {
    orientation: SurfaceOrientation,
}

/// One row of `rmse.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub delta: f64,
    pub sensitivity: f64,
    pub samples: usize,
    pub mean_release: SurfaceOrientation,
    pub rmse: f64,
    pub se: f64,
    pub rmse_exact: f64,
}

/// Every (ε, δ) cell draws from the same seed, so neighboring cells differ
/// only through their release distributions.
pub fn sweep_rows(
    surface: &MeanSurface,
    epsilons: &[f64],
    deltas: &[f64],
    samples: usize,
    seed: u64,
    form: ScaleForm,
    reference: SurfaceOrientation,
) -> Result<Vec<SweepRow>> {
    let grid = &surface.grid;
    let mut rows = Vec::with_capacity(epsilons.len() * deltas.len());
    for &delta in deltas {
        for &epsilon in epsilons {
            let params = DpParams::new(epsilon, delta, grid.len(), surface.budget)?;
            let draws = surface.samples(&params, form, samples, seed)?;
            let points: Vec<SurfaceOrientation> = draws.iter().map(|i| grid.point(*i)).collect();
            let (rmse, se) = mean_release_error(&points, reference);
            let probs = softmax(&surface.log_weights(&params, form)?);
            rows.push(SweepRow {
                epsilon,
                delta,
                sensitivity: sensitivity_bound(&params).bound,
                samples,
                mean_release: dpbo::dp::mean_release(&points),
                rmse,
                se,
                rmse_exact: normalized_rmse(expected_release(grid, &probs), reference),
            });
        }
    }
    Ok(rows)
}

pub fn sweep(opts: &Options) -> Result<Vec<PathBuf>> {
    let dir = opts.required("trace", &opts.trace)?;
    let trace = load_trace(dir)?;
    let epsilons = opts
        .epsilon
        .clone()
        .unwrap_or_else(|| DEFAULT_SWEEP_EPSILONS.to_vec());
    let deltas = opts
        .delta
        .clone()
        .unwrap_or_else(|| DEFAULT_SWEEP_DELTAS.to_vec());
    if epsilons.is_empty() || deltas.is_empty() {
        return Err(CliError::Validation("empty epsilon or delta list".into()));
    }
    let samples = opts.samples.unwrap_or(DEFAULT_SWEEP_SAMPLES);
    if samples == 0 {
        return Err(CliError::Validation("--samples must be at least 1".into()));
    }
    let form = opts.scale_form.unwrap_or_default();
    let seed = opts.seed();
    let (reference, source) = match &opts.reference {
        Some(p) => (read_json::<ReferenceFile>(p)?.orientation, "file"),
        None => {
            let mu = trace.best.posterior_argmax.ok_or_else(|| {
                CliError::Malformed(format!(
                    "{}: no posterior_argmax",
                    dir.join(BEST_FILE).display()
                ))
            })?;
            (
                SurfaceOrientation::new(mu.azimuth_deg, mu.tilt_deg),
                "posterior_argmax",
            )
        }
    };
    let mut inputs: Vec<&Path> = vec![&trace.files[0], &trace.files[1]];
    if let Some(p) = &opts.reference {
        inputs.push(p);
    }
    let settings = json!({
        "epsilons": epsilons, "deltas": deltas, "samples": samples, "scale_form": form,
        "reference": reference,
    });
    let meta = Meta::new("sweep", seed, config_hash("sweep", &settings, &inputs)?);
    let rows = sweep_rows(
        &trace.surface,
        &epsilons,
        &deltas,
        samples,
        seed,
        form,
        reference,
    )?;

    let out = opts.out_dir();
    create_dir(&out)?;
    let path = out.join("rmse.csv");
    write_csv_with(&path, |w| {
        writeln!(w, "# {}", meta.header())?;
        writeln!(
            w,
            "# reference azimuth_deg={} tilt_deg={} source={source}",
            reference.azimuth_deg, reference.tilt_deg
        )?;
        writeln!(
            w,
            "epsilon,delta,sensitivity,samples,mean_azimuth_deg,mean_tilt_deg,rmse,se,rmse_exact"
        )?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.epsilon,
                r.delta,
                r.sensitivity,
                r.samples,
                r.mean_release.azimuth_deg,
                r.mean_release.tilt_deg,
                r.rmse,
                r.se,
                r.rmse_exact
            )?;
        }
        Ok(())
    })?;
    Ok(vec![path])
}

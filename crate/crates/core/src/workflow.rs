//! Command pipelines: each reads a [`RunConfig`], runs one stage and writes
//! a result bundle (tables, JSON summaries, config snapshot, manifest).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{build_grid, FlowlineGrid, ObservationSet};
use crate::dynamics::{naive_inversion, DynamicsParams, RootSelection};
use crate::error::{Error, Result};
use crate::gp::width_mean_function;
use crate::inference::{
    chain_diagnostics, derive_seed, predict_thickness, run_chains, summarize_scalar, width_bands, InferenceProblem,
    ModelInputs, ParameterDiagnostics, ParameterState, PosteriorSamples, ScalarSummary,
};
use crate::io::{
    prediction_rows, read_samples_csv, sha256_file, width_rows, write_config_snapshot, write_json, write_long_csv,
    write_samples_csv, write_series_csv, LongRow, RootRule, RunConfig,
};
use crate::simulation::{
    make_truth_profile, run_experiment, width_coverage, ExperimentResult, ExperimentSpec, TruthProfile,
};
use crate::smoothing::{smoothing_spline, Penalty, SmoothedInputs, SmootherSpec};

const CHAIN_STREAM: u64 = 0xf17;
const PREDICT_STREAM: u64 = 0x9ed;

pub const SAMPLES_FILE: &str = "samples.csv";

/// Files written by a command, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    /// SHA-256 of every numeric output.
    pub files: BTreeMap<String, String>,
}

struct Bundle<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Bundle<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Bundle { dir, files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn finish(self, command: &str, config: &RunConfig, source: &[u8]) -> Result<Manifest> {
        write_config_snapshot(self.dir, source, config)?;
        let mut files = BTreeMap::new();
        for f in &self.files {
            files.insert(f.clone(), sha256_file(self.dir.join(f))?);
        }
        let m = Manifest {
            command: command.to_string(),
            seed: config.seed,
            files,
        };
        write_json(self.dir.join(format!("{command}.manifest.json")), &m)?;
        Ok(m)
    }
}

/// Observations, grid and smoothed fields for a real-data run.
pub struct Prepared {
    pub obs: ObservationSet,
    pub smoothed: SmoothedInputs,
    pub grid: FlowlineGrid,
    pub domain_length: f64,
}

fn furthest_location(obs: &ObservationSet) -> f64 {
    [&obs.thickness, &obs.velocity, &obs.elevation, &obs.accumulation, &obs.thinning]
        .into_iter()
        .chain(obs.width_candidates.iter().map(|(_, s)| s))
        .filter_map(|s| s.x.last().copied())
        .fold(0.0, f64::max)
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    let obs = config.observations()?;
    let domain_length = config.grid.domain_length.unwrap_or_else(|| furthest_location(&obs));
    let grid = build_grid(domain_length, config.grid.quad_spacing, &obs.thickness.x)?;
    let smoothed = SmoothedInputs::from_observations(&obs, &config.smoothing)?;
    Ok(Prepared {
        obs,
        smoothed,
        grid,
        domain_length,
    })
}

fn selection(rule: RootRule, h_obs: &[f64]) -> RootSelection {
    match rule {
        RootRule::Continuity => RootSelection::Continuity,
        RootRule::MaxRealPositive => RootSelection::MaxRealPositive,
        RootRule::NearestObserved => RootSelection::NearestToReference(h_obs.to_vec()),
    }
}

/// Inference problem for the configured inputs.
pub fn build_problem(config: &RunConfig, prep: &Prepared) -> Result<InferenceProblem> {
    let fields = prep.smoothed.on_grid(&prep.grid)?;
    let h_obs = prep.obs.thickness.values.clone();
    let (_, plug_in) = prep.obs.resolve_width(&config.model.width)?;
    let width_mean = width_mean_function(
        &prep.grid,
        &fields,
        &h_obs,
        plug_in,
        config.model.c0,
        config.model.width_floor,
    )?;
    InferenceProblem::new(ModelInputs {
        prior: config.prior_for(&h_obs),
        selection: selection(config.model.root_selection, &h_obs),
        grid: prep.grid.clone(),
        fields,
        width_mean,
        h_obs,
        phi: config.model.phi,
        solver: config.solver()?,
        c0: config.model.c0,
    })
}

/// Smoothed input series and spline diagnostics.
pub fn smooth(config: &RunConfig, source: &[u8]) -> Result<Manifest> {
    let prep = prepare(config)?;
    let dir = &config.output_dir;
    let mut b = Bundle::new(dir)?;
    let mut rows = Vec::new();
    for (name, s) in [
        ("velocity", &prep.smoothed.velocity),
        ("slope", &prep.smoothed.slope),
        ("accumulation", &prep.smoothed.accumulation),
        ("thinning", &prep.smoothed.thinning),
    ] {
        rows.extend(s.pairs().map(|(x, v)| LongRow::new(x, name, "smoothed", v)));
    }
    write_long_csv(b.path("smoothed.csv"), &rows)?;

    #[derive(Serialize)]
    struct Fit {
        lambda: f64,
        edf: f64,
        gcv: f64,
    }
    let mut fits = BTreeMap::new();
    let sm = &config.smoothing;
    for (name, spec, raw) in [
        ("velocity", sm.velocity, &prep.obs.velocity),
        ("elevation", sm.elevation, &prep.obs.elevation),
        ("accumulation", sm.accumulation, &prep.obs.accumulation),
        ("thinning", sm.thinning, &prep.obs.thinning),
    ] {
        if let SmootherSpec::Spline { lambda } = spec {
            if raw.len() >= 4 && lambda != Penalty::Fixed(0.0) {
                let f = smoothing_spline(raw, lambda)?;
                fits.insert(
                    name,
                    Fit {
                        lambda: f.alpha,
                        edf: f.edf,
                        gcv: f.gcv,
                    },
                );
            }
        }
    }
    write_json(b.path("smoothing.json"), &fits)?;
    b.finish("smooth", config, source)
}

/// Naive inversion with a plug-in width over a list of `A` values.
pub fn naive(config: &RunConfig, source: &[u8]) -> Result<Manifest> {
    let prep = prepare(config)?;
    let fields = prep.smoothed.on_grid(&prep.grid)?;
    let h_obs = &prep.obs.thickness.values;
    let width = prep.obs.resolve_width(&config.model.width)?;
    let params = DynamicsParams::new(0.0, h_obs[0], config.model.c0)?;
    let inv = naive_inversion(
        &prep.grid,
        &fields,
        width,
        &config.model.naive_a,
        h_obs,
        &params,
        &config.solver()?,
    )?;
    let mut b = Bundle::new(&config.output_dir)?;
    let mut rows: Vec<LongRow> = prep
        .obs
        .thickness
        .pairs()
        .map(|(x, h)| LongRow::new(x, "thickness", "observed", h))
        .collect();
    for p in &inv.profiles {
        let stat = format!("A={:?}", p.a);
        for (x, h) in inv.obs_x.iter().zip(&p.thickness) {
            if let Some(h) = h {
                rows.push(LongRow::new(*x, "thickness", &stat, *h));
            }
        }
    }
    write_long_csv(b.path("naive.csv"), &rows)?;
    write_json(b.path("naive.json"), &inv)?;
    b.finish("naive", config, source)
}

/// Posterior summaries written by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub n_states: usize,
    pub scalars: BTreeMap<String, ScalarSummary>,
    pub acceptance: Vec<BTreeMap<String, f64>>,
}

fn scalar_summaries(samples: &PosteriorSamples) -> Result<BTreeMap<String, ScalarSummary>> {
    ParameterState::SCALAR_NAMES
        .iter()
        .enumerate()
        .map(|(i, n)| Ok((n.to_string(), summarize_scalar(&samples.scalar(i))?)))
        .collect()
}

fn diagnostics_of(samples: &PosteriorSamples) -> Result<Vec<ParameterDiagnostics>> {
    if samples.chains.len() >= 2 {
        chain_diagnostics(samples)
    } else {
        Ok(Vec::new())
    }
}

/// MCMC fit: samples, scalar summaries, width bands and diagnostics.
pub fn fit(config: &RunConfig, source: &[u8]) -> Result<Manifest> {
    let prep = prepare(config)?;
    let problem = build_problem(config, &prep)?;
    let chain = crate::inference::ChainConfig {
        seed: derive_seed(config.seed, CHAIN_STREAM),
        ..config.chain
    };
    let samples = run_chains(&chain, &problem)?;
    let mut b = Bundle::new(&config.output_dir)?;
    write_samples_csv(b.path(SAMPLES_FILE), &samples)?;
    let summary = FitSummary {
        n_states: samples.n_states(),
        scalars: scalar_summaries(&samples)?,
        acceptance: samples
            .chains
            .iter()
            .map(|c| c.acceptance.iter().map(|(n, r)| (n.to_string(), r)).collect())
            .collect(),
    };
    write_json(b.path("summary.json"), &summary)?;
    write_long_csv(b.path("width.csv"), &width_rows(prep.grid.quad_x(), &width_bands(&samples)?))?;
    write_json(b.path("diagnostics.json"), &diagnostics_of(&samples)?)?;
    b.finish("fit", config, source)
}

/// Prediction locations every `prediction_spacing` from the divide out to
/// the domain end (the divide itself excluded).
pub fn prediction_locations(domain_length: f64, spacing: f64) -> Result<Vec<f64>> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::validation("prediction spacing must be positive"));
    }
    let n = ((domain_length / spacing) + 1e-9).floor() as usize;
    Ok((1..=n).map(|k| k as f64 * spacing).collect())
}

/// Thickness bands from an existing samples file.
pub fn predict(config: &RunConfig, source: &[u8], samples_path: &Path) -> Result<Manifest> {
    let prep = prepare(config)?;
    let samples = read_samples_csv(samples_path)?;
    let pred_x = prediction_locations(prep.domain_length, config.grid.prediction_spacing)?;
    let grid = build_grid(prep.domain_length, config.grid.quad_spacing, &pred_x)?;
    if samples.states().any(|s| s.omega_quad.len() != grid.n_quad()) {
        return Err(Error::validation(format!(
            "samples carry a width vector of a different length than the {} quadrature nodes",
            grid.n_quad()
        )));
    }
    let fields = prep.smoothed.on_grid(&grid)?;
    // per-location references are only defined at the training locations
    let sel = match config.model.root_selection {
        RootRule::MaxRealPositive => RootSelection::MaxRealPositive,
        _ => RootSelection::Continuity,
    };
    let pred = predict_thickness(
        &samples,
        &grid,
        &fields,
        &sel,
        &config.solver()?,
        config.model.c0,
        derive_seed(config.seed, PREDICT_STREAM),
    )?;
    let mut b = Bundle::new(&config.output_dir)?;
    write_long_csv(b.path("prediction.csv"), &prediction_rows(&pred))?;
    #[derive(Serialize)]
    struct PredictSummary {
        samples_sha256: String,
        n_used: usize,
        n_dropped: usize,
    }
    write_json(
        b.path("prediction.json"),
        &PredictSummary {
            samples_sha256: sha256_file(samples_path)?,
            n_used: pred.n_used,
            n_dropped: pred.n_dropped,
        },
    )?;
    b.finish("predict", config, source)
}

/// Truth profile used by `simulate` and `coverage`.
pub fn truth_profile(config: &RunConfig) -> Result<TruthProfile> {
    make_truth_profile(&config.simulation.truth, config.grid.quad_spacing)
}

/// Row of the study-level coverage table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub n_train: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub directory: String,
    pub result: std::result::Result<CellScores, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellScores {
    pub width_coverage: f64,
    pub thickness_coverage: f64,
    pub thickness_coverage_noisy: f64,
    pub observation_coverage: f64,
    pub ci_width_slope: f64,
    pub a: ScalarSummary,
    pub sigma2_h: ScalarSummary,
}

impl From<&ExperimentResult> for CellScores {
    fn from(r: &ExperimentResult) -> Self {
        CellScores {
            width_coverage: r.width_coverage,
            thickness_coverage: r.thickness_coverage,
            thickness_coverage_noisy: r.thickness_coverage_noisy,
            observation_coverage: r.observation_coverage,
            ci_width_slope: r.ci_width_slope,
            a: r.a,
            sigma2_h: r.sigma2_h,
        }
    }
}

fn cell_dir(spec: &ExperimentSpec) -> String {
    format!("cell_n{}_sd{}", spec.n_train, spec.noise_sd)
}

/// Simulation study over every configured (n_train, noise_sd) cell. Each
/// cell gets its own sub-bundle; failed cells are recorded in the table.
pub fn simulate(config: &RunConfig, source: &[u8]) -> Result<Manifest> {
    let truth = truth_profile(config)?;
    let settings = config.study_settings()?;
    let sim = &config.simulation;
    let specs = ExperimentSpec::grid(config.seed, &sim.n_train, &sim.noise_sd, sim.true_a, config.chain);
    if specs.is_empty() {
        return Err(Error::Config("simulation needs at least one n_train and noise_sd".into()));
    }
    let mut b = Bundle::new(&config.output_dir)?;
    let outcomes: Vec<(ExperimentSpec, Result<Vec<String>>, Option<CellScores>)> = specs
        .par_iter()
        .map(|spec| {
            let name = cell_dir(spec);
            match run_experiment(&truth, spec, &settings)
                .and_then(|run| write_cell(&config.output_dir, &name, &truth, &run).map(|f| (f, run)))
            {
                Ok((files, run)) => (*spec, Ok(files), Some(CellScores::from(&run.result))),
                Err(e) => (*spec, Err(e), None),
            }
        })
        .collect();
    let mut table = Vec::new();
    for (spec, files, scores) in outcomes {
        let directory = cell_dir(&spec);
        let result = match (files, scores) {
            (Ok(files), Some(s)) => {
                b.files.extend(files);
                Ok(s)
            }
            (Err(e), _) => Err(e.to_string()),
            (Ok(_), None) => unreachable!(),
        };
        table.push(CellSummary {
            n_train: spec.n_train,
            noise_sd: spec.noise_sd,
            seed: spec.seed,
            directory,
            result,
        });
    }
    write_json(b.path("study.json"), &table)?;
    let mut csv = String::from(
        "n_train,noise_sd,width_coverage,thickness_coverage,thickness_coverage_noisy,observation_coverage,ci_width_slope,A_mean,A_lo,A_hi\n",
    );
    for c in &table {
        if let Ok(s) = &c.result {
            csv.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                c.n_train,
                c.noise_sd,
                s.width_coverage,
                s.thickness_coverage,
                s.thickness_coverage_noisy,
                s.observation_coverage,
                s.ci_width_slope,
                s.a.mean,
                s.a.lo,
                s.a.hi
            ));
        }
    }
    let p = b.path("coverage.csv");
    fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    b.finish("simulate", config, source)
}

fn write_cell(root: &Path, name: &str, truth: &TruthProfile, run: &crate::simulation::ExperimentRun) -> Result<Vec<String>> {
    let dir = root.join(name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = Vec::new();
    let mut path = |f: &str| {
        files.push(format!("{name}/{f}"));
        dir.join(f)
    };
    let obs = &run.observations;
    write_series_csv(path("obs_thickness.csv"), &obs.thickness)?;
    write_series_csv(path("obs_velocity.csv"), &obs.velocity)?;
    write_samples_csv(path(SAMPLES_FILE), &run.samples)?;
    let r = &run.result;
    let mut rows = prediction_rows(&r.prediction);
    rows.extend(
        r.prediction
            .x
            .iter()
            .zip(&r.truth_at_prediction)
            .map(|(&x, &h)| LongRow::new(x, "thickness", "truth", h)),
    );
    write_long_csv(path("prediction.csv"), &rows)?;
    let mut wrows = width_rows(&truth.x, &r.width);
    wrows.extend(truth.x.iter().zip(&truth.width).map(|(&x, &w)| LongRow::new(x, "width", "truth", w)));
    write_long_csv(path("width.csv"), &wrows)?;
    write_json(path("result.json"), r)?;
    Ok(files)
}

/// Coverage of an existing samples file against the configured truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub width_coverage: f64,
    pub n_states: usize,
}

pub fn coverage(config: &RunConfig, source: &[u8], samples_path: &Path) -> Result<Manifest> {
    let truth = truth_profile(config)?;
    let samples = read_samples_csv(samples_path)?;
    let report = CoverageReport {
        width_coverage: width_coverage(&samples, &truth.width)?,
        n_states: samples.n_states(),
    };
    let mut b = Bundle::new(&config.output_dir)?;
    let mut rows = width_rows(&truth.x, &width_bands(&samples)?);
    rows.extend(truth.x.iter().zip(&truth.width).map(|(&x, &w)| LongRow::new(x, "width", "truth", w)));
    write_long_csv(b.path("width_coverage.csv"), &rows)?;
    write_json(b.path("coverage.json"), &report)?;
    b.finish("coverage", config, source)
}

/// Convergence diagnostics and scalar summaries of a samples file.
pub fn diagnose(config: &RunConfig, source: &[u8], samples_path: &Path) -> Result<Manifest> {
    let samples = read_samples_csv(samples_path)?;
    #[derive(Serialize)]
    struct Report {
        n_chains: usize,
        n_states: usize,
        scalars: BTreeMap<String, ScalarSummary>,
        diagnostics: Vec<ParameterDiagnostics>,
    }
    let report = Report {
        n_chains: samples.chains.len(),
        n_states: samples.n_states(),
        scalars: scalar_summaries(&samples)?,
        diagnostics: diagnostics_of(&samples)?,
    };
    let mut b = Bundle::new(&config.output_dir)?;
    write_json(b.path("diagnostics.json"), &report)?;
    b.finish("diagnose", config, source)
}

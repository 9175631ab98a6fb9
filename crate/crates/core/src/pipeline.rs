//! Pipeline orchestration: certify -> abstract -> synthesize -> compose ->
//! validate, with every stage writing its artifacts to the output directory
//! and later stages able to reload them, so a re-run of a suffix of the
//! pipeline equals the one-shot run.
//!
//! Stage semantics:
//!
//! * `certify`    per-subsystem model-uncertainty deficit tables (delta_1)
//! * `abstract`   grid abstraction + transition tensor + (eps_2, delta_2)
//! * `synthesize` transitive composition of the two certificates, robust
//!   value iteration, controller extraction, bound surfaces
//! * `compose`    interconnection report, induced network certificate
//!   (worst-case summary), global bounds per representative initial state
//! * `validate`   seeded Monte Carlo of the true coupled network against
//!   the global bounds
//!
//! A manifest records the scenario hash, the resolved configuration, and a
//! hash per artifact; identical inputs and seeds reproduce every output
//! byte for byte.

use crate::cert::{compose_transitive, model_uncertainty_certificate, CertError, SsrCertificate};
use crate::grid::{build_grid, discretization_certificate, transition_tensor, GridAbstraction, GridError};
use crate::logic::{to_dfa, LogicError};
use crate::network::{
    cascaded_bound, cyclic_bound, induced_ssr, GlobalBound, LocalBound, NetworkError, Topology,
};
use crate::scenario::{Scenario, ScenarioError, ScenarioSubsystem};
use crate::sim::{check_bound, monte_carlo_estimate, BoundCheck, CoupledRun, SimError, SimulationRun};
use crate::synth::{synthesize, Controller, SynthError, SynthesisResult, ValueTable};
use crate::system::SystemError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error("output directory is locked by another run: {0}")]
    Locked(PathBuf),
    #[error("missing artifact `{path}`; run the `{stage}` stage first")]
    MissingArtifact { stage: Stage, path: PathBuf },
    #[error("initial state for `{0}` missing from scenario initial_states")]
    MissingInitialState(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Certify,
    Abstract,
    Synthesize,
    Compose,
    Validate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Certify,
        Stage::Abstract,
        Stage::Synthesize,
        Stage::Compose,
        Stage::Validate,
    ];

    pub fn parse_list(text: &str) -> Result<Vec<Stage>, String> {
        text.split(',')
            .map(|t| match t.trim() {
                "certify" => Ok(Stage::Certify),
                "abstract" => Ok(Stage::Abstract),
                "synthesize" => Ok(Stage::Synthesize),
                "compose" => Ok(Stage::Compose),
                "validate" => Ok(Stage::Validate),
                other => Err(format!(
                    "unknown stage `{other}` (certify|abstract|synthesize|compose|validate)"
                )),
            })
            .collect()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Certify => "certify",
            Stage::Abstract => "abstract",
            Stage::Synthesize => "synthesize",
            Stage::Compose => "compose",
            Stage::Validate => "validate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub stages: Vec<Stage>,
    pub seed_override: Option<u64>,
}

/// Per-subsystem synthesis artifact (value table + metadata), serialized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthArtifact {
    pub subsystem: String,
    pub composed_certificate: SsrCertificate,
    pub table: ValueTable,
    pub cell_letters: Vec<u32>,
    pub cell_enabled: Vec<bool>,
    pub bounds_per_cell: Vec<f64>,
}

/// Global bounds per representative joint initial state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalBoundsArtifact {
    pub topology: Topology,
    pub per_initial_state: Vec<GlobalBoundEntry>,
    pub induced_certificate_summary: SsrCertificate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalBoundEntry {
    pub initial_state: BTreeMap<String, Vec<f64>>,
    pub bound: GlobalBound,
}

/// One Monte Carlo run against its bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub initial_index: usize,
    pub theta_index: usize,
    pub bound: f64,
    pub run: SimulationRun,
    pub check: BoundCheck,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub records: Vec<ValidationRecord>,
    pub failures: usize,
}

/// What a full run hands back to the caller.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub ran: Vec<Stage>,
    pub global_bounds: Option<GlobalBoundsArtifact>,
    pub validation: Option<ValidationReport>,
}

impl PipelineOutcome {
    pub fn bound_check_failed(&self) -> bool {
        self.validation.as_ref().map(|v| v.failures > 0).unwrap_or(false)
    }
}

struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(".synth.lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked(path))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

fn write_artifact(
    path: &Path,
    bytes: &[u8],
    hashes: &mut BTreeMap<String, String>,
    root: &Path,
) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    let rel = path
        .strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/");
    hashes.insert(rel, sha256_hex(bytes));
    Ok(())
}

fn write_json<T: Serialize>(
    path: &Path,
    value: &T,
    hashes: &mut BTreeMap<String, String>,
    root: &Path,
) -> Result<(), PipelineError> {
    let bytes = serde_json::to_vec_pretty(value)?;
    write_artifact(path, &bytes, hashes, root)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: Stage) -> Result<T, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact {
            stage,
            path: path.to_path_buf(),
        });
    }
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn stage_err(stage: Stage) -> impl Fn(PipelineError) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: Box::new(e),
    }
}

// --- per-stage computations -------------------------------------------------

fn builder_grid(
    scenario: &Scenario,
    sub: &ScenarioSubsystem,
) -> Result<GridAbstraction, PipelineError> {
    let int_box = scenario.internal_lattice_box(&sub.subsystem.id)?;
    Ok(build_grid(
        &sub.subsystem,
        &sub.grid.cells_per_dim,
        &sub.grid.ext_points_per_dim,
        Some(int_box),
        &sub.grid.int_points_per_dim,
    )?)
}

fn certify_subsystem(
    scenario: &Scenario,
    sub: &ScenarioSubsystem,
) -> Result<SsrCertificate, PipelineError> {
    let grid = builder_grid(scenario, sub)?;
    let shape = grid.table_shape();
    let n_int = grid.int_inputs.len();
    let n_ext = grid.ext_inputs.len();
    let mut points = Vec::with_capacity(shape.len());
    for row in 0..shape.len() {
        let int = row % n_int;
        let ext = (row / n_int) % n_ext;
        let cell = row / (n_int * n_ext);
        points.push((grid.geometry.representative(cell), grid.input_vector(ext, int)));
    }
    Ok(model_uncertainty_certificate(
        &sub.subsystem,
        &points,
        shape,
        sub.sup_search,
    )?)
}

fn abstract_subsystem(
    scenario: &Scenario,
    sub: &ScenarioSubsystem,
) -> Result<GridAbstraction, PipelineError> {
    let mut grid = builder_grid(scenario, sub)?;
    transition_tensor(&mut grid, &sub.subsystem)?;
    let cert = discretization_certificate(&grid, &sub.subsystem)?;
    grid.cert = Some(cert);
    Ok(grid)
}

fn synthesize_subsystem(
    scenario: &Scenario,
    sub: &ScenarioSubsystem,
    delta1: &SsrCertificate,
    grid: &GridAbstraction,
) -> Result<(SsrCertificate, SynthesisResult), PipelineError> {
    let disc = grid.cert.as_ref().ok_or(GridError::TransitionsMissing)?;
    let composed = compose_transitive(disc, delta1, &format!("composed:{}", sub.subsystem.id))?;
    let dfa = to_dfa(&sub.formula, &sub.propositions)?;
    // the structural safety product applies on cyclic networks where this
    // subsystem's internal outputs must stay inside a declared C box
    let safe_box = if scenario.network.topology() == Topology::Cyclic {
        scenario.own_output_bound(&sub.subsystem.id)
    } else {
        None
    };
    let result = synthesize(
        grid,
        &sub.subsystem,
        &dfa,
        &sub.regions,
        &composed,
        safe_box,
        sub.termination,
    )?;
    Ok((composed, result))
}

// --- emission ----------------------------------------------------------------

const CSV_VERSION: &str = "1";

/// Bound surface: one row per initial grid cell.
pub fn bound_surface_csv(grid: &GridAbstraction, bounds: &[f64]) -> String {
    let dim = grid.geometry.dim();
    let mut out = String::new();
    out.push_str(&format!("# bound-surface v{CSV_VERSION}\n"));
    let coords: Vec<String> = (0..dim).map(|d| format!("x{d}")).collect();
    out.push_str(&format!("cell,{},bound\n", coords.join(",")));
    for (c, b) in bounds.iter().enumerate() {
        let rep = grid.geometry.representative(c);
        let rep_s: Vec<String> = rep.iter().map(|v| format!("{v}")).collect();
        out.push_str(&format!("{c},{},{b}\n", rep_s.join(",")));
    }
    out
}

/// Value table rows (cell coordinates, memory state, value).
pub fn value_table_csv(grid: &GridAbstraction, table: &ValueTable) -> String {
    let dim = grid.geometry.dim();
    let mut out = String::new();
    out.push_str(&format!("# value-table v{CSV_VERSION}\n"));
    let coords: Vec<String> = (0..dim).map(|d| format!("x{d}")).collect();
    out.push_str(&format!("cell,{},q,value\n", coords.join(",")));
    for c in 0..table.n_cells {
        let rep = grid.geometry.representative(c);
        let rep_s: Vec<String> = rep.iter().map(|v| format!("{v}")).collect();
        for q in 0..table.n_q {
            out.push_str(&format!("{c},{},{q},{}\n", rep_s.join(","), table.value(c, q)));
        }
    }
    out
}

/// Empirical-vs-bound rows, one per (initial state, theta sample).
pub fn validation_csv(report: &ValidationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("# validation v{CSV_VERSION}\n"));
    out.push_str(
        "initial_index,theta_index,bound,episodes,successes,rate,wilson_low,wilson_high,margin,pass\n",
    );
    for r in &report.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.initial_index,
            r.theta_index,
            r.bound,
            r.run.episodes,
            r.run.successes,
            r.run.rate,
            r.run.wilson_low,
            r.run.wilson_high,
            r.check.margin,
            r.check.pass
        ));
    }
    out
}

// --- the pipeline -------------------------------------------------------------

/// Runs the selected stages against the output directory. Unselected
/// stages are neither run nor required unless a selected stage needs their
/// artifacts, which are then loaded from disk.
pub fn run_pipeline(
    scenario: &Scenario,
    scenario_bytes: &[u8],
    config: &PipelineConfig,
) -> Result<PipelineOutcome, PipelineError> {
    fs::create_dir_all(&config.out_dir)?;
    let _lock = LockGuard::acquire(&config.out_dir)?;
    let root = config.out_dir.clone();
    let mut hashes: BTreeMap<String, String> = BTreeMap::new();

    let validation_seed = config.seed_override.unwrap_or(scenario.validation.seed);
    let want = |s: Stage| config.stages.contains(&s);

    // lazily populated per-subsystem artifacts
    let mut delta1: BTreeMap<String, SsrCertificate> = BTreeMap::new();
    let mut grids: BTreeMap<String, GridAbstraction> = BTreeMap::new();
    let mut synths: BTreeMap<String, SynthArtifact> = BTreeMap::new();
    let mut controllers: BTreeMap<String, Controller> = BTreeMap::new();

    let delta1_path = |id: &str| root.join("certify").join(format!("{id}.delta1.json"));
    let grid_path = |id: &str| root.join("abstract").join(format!("{id}.grid.json"));
    let synth_path = |id: &str| root.join("synthesize").join(format!("{id}.synthesis.json"));
    let controller_path = |id: &str| root.join("synthesize").join(format!("{id}.controller.json"));

    if want(Stage::Certify) {
        for sub in &scenario.subsystems {
            let id = sub.subsystem.id.clone();
            log::info!("certify: {id}");
            let cert = certify_subsystem(scenario, sub).map_err(stage_err(Stage::Certify))?;
            write_json(&delta1_path(&id), &cert, &mut hashes, &root)?;
            delta1.insert(id, cert);
        }
    }

    if want(Stage::Abstract) {
        for sub in &scenario.subsystems {
            let id = sub.subsystem.id.clone();
            log::info!("abstract: {id}");
            let grid = abstract_subsystem(scenario, sub).map_err(stage_err(Stage::Abstract))?;
            write_json(&grid_path(&id), &grid, &mut hashes, &root)?;
            grids.insert(id, grid);
        }
    }

    if want(Stage::Synthesize) {
        for sub in &scenario.subsystems {
            let id = sub.subsystem.id.clone();
            log::info!("synthesize: {id}");
            if !delta1.contains_key(&id) {
                delta1.insert(id.clone(), read_json(&delta1_path(&id), Stage::Certify)?);
            }
            if !grids.contains_key(&id) {
                grids.insert(id.clone(), read_json(&grid_path(&id), Stage::Abstract)?);
            }
            let (composed, result) =
                synthesize_subsystem(scenario, sub, &delta1[&id], &grids[&id])
                    .map_err(stage_err(Stage::Synthesize))?;
            let artifact = SynthArtifact {
                subsystem: id.clone(),
                composed_certificate: composed,
                bounds_per_cell: result.bound_per_cell(),
                table: result.table.clone(),
                cell_letters: result.cell_letters.clone(),
                cell_enabled: result.cell_enabled.clone(),
            };
            write_json(&synth_path(&id), &artifact, &mut hashes, &root)?;
            write_json(&controller_path(&id), &result.controller, &mut hashes, &root)?;
            let surface = bound_surface_csv(&grids[&id], &artifact.bounds_per_cell);
            write_artifact(
                &root.join("synthesize").join(format!("{id}.bounds.csv")),
                surface.as_bytes(),
                &mut hashes,
                &root,
            )?;
            let vt = value_table_csv(&grids[&id], &artifact.table);
            write_artifact(
                &root.join("synthesize").join(format!("{id}.value.csv")),
                vt.as_bytes(),
                &mut hashes,
                &root,
            )?;
            controllers.insert(id.clone(), result.controller);
            synths.insert(id, artifact);
        }
    }

    let mut global_art: Option<GlobalBoundsArtifact> = None;
    if want(Stage::Compose) {
        log::info!("compose: global bounds");
        let mut run = || -> Result<GlobalBoundsArtifact, PipelineError> {
            for sub in &scenario.subsystems {
                let id = sub.subsystem.id.clone();
                if !synths.contains_key(&id) {
                    synths.insert(id.clone(), read_json(&synth_path(&id), Stage::Synthesize)?);
                }
                if !grids.contains_key(&id) {
                    grids.insert(id.clone(), read_json(&grid_path(&id), Stage::Abstract)?);
                }
            }
            let report = scenario.network.validate_interconnection();
            write_json(
                &root.join("compose").join("interconnection_report.json"),
                &report,
                &mut hashes,
                &root,
            )?;
            // worst-case constant summary of each composed certificate; the
            // cross-product table is exposed through the API but not
            // materialized here
            let summaries: Vec<SsrCertificate> = scenario
                .subsystems
                .iter()
                .map(|sub| {
                    let art = &synths[&sub.subsystem.id];
                    SsrCertificate::new(
                        format!("summary:{}", art.composed_certificate.id),
                        art.composed_certificate.kind,
                        art.composed_certificate.epsilon,
                        crate::cert::DeltaProfile::Constant(
                            art.composed_certificate.delta.max_value(),
                        ),
                        art.composed_certificate.provenance.clone(),
                    )
                })
                .collect::<Result<_, _>>()?;
            let induced = induced_ssr(&summaries)?;
            let topology = scenario.network.topology();
            let mut entries = Vec::new();
            for init in &scenario.initial_states {
                let mut locals = Vec::new();
                for sub in &scenario.subsystems {
                    let id = &sub.subsystem.id;
                    let x0 = init
                        .get(id)
                        .ok_or_else(|| PipelineError::MissingInitialState(id.clone()))?;
                    let art = &synths[id];
                    let cell = grids[id]
                        .geometry
                        .locate(x0)
                        .ok_or_else(|| PipelineError::MissingInitialState(id.clone()))?;
                    locals.push(LocalBound {
                        subsystem: id.clone(),
                        bound: art.bounds_per_cell[cell],
                    });
                }
                let bound = match topology {
                    Topology::Cascaded => cascaded_bound(&scenario.network, locals)?,
                    Topology::Cyclic => cyclic_bound(&scenario.network, locals)?,
                };
                entries.push(GlobalBoundEntry {
                    initial_state: init.clone(),
                    bound,
                });
            }
            Ok(GlobalBoundsArtifact {
                topology,
                per_initial_state: entries,
                induced_certificate_summary: induced,
            })
        };
        let art = run().map_err(stage_err(Stage::Compose))?;
        write_json(
            &root.join("compose").join("global_bounds.json"),
            &art,
            &mut hashes,
            &root,
        )?;
        global_art = Some(art);
    }

    let mut validation_report: Option<ValidationReport> = None;
    if want(Stage::Validate) {
        log::info!("validate: Monte Carlo");
        let mut run = || -> Result<ValidationReport, PipelineError> {
            let bounds: GlobalBoundsArtifact = match &global_art {
                Some(a) => a.clone(),
                None => read_json(&root.join("compose").join("global_bounds.json"), Stage::Compose)?,
            };
            for sub in &scenario.subsystems {
                let id = sub.subsystem.id.clone();
                if !controllers.contains_key(&id) {
                    controllers
                        .insert(id.clone(), read_json(&controller_path(&id), Stage::Synthesize)?);
                }
            }
            let ctrl_vec: Vec<Controller> = scenario
                .subsystems
                .iter()
                .map(|s| controllers[&s.subsystem.id].clone())
                .collect();
            let mut records = Vec::new();
            let mut failures = 0;
            for (ii, init) in scenario.initial_states.iter().enumerate() {
                let init_vec: Vec<Vec<f64>> = scenario
                    .subsystems
                    .iter()
                    .map(|s| init[&s.subsystem.id].clone())
                    .collect();
                let bound = bounds.per_initial_state[ii].bound.combined;
                for (ti, sample) in scenario.validation.theta_samples.iter().enumerate() {
                    let thetas: Vec<Vec<f64>> = scenario
                        .subsystems
                        .iter()
                        .map(|s| sample[&s.subsystem.id].clone())
                        .collect();
                    let coupled = CoupledRun::new(&scenario.network, &ctrl_vec, &thetas)?;
                    let run_seed = validation_seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add((ii as u64) << 24)
                        .wrapping_add(ti as u64);
                    let mc = monte_carlo_estimate(
                        &coupled,
                        &init_vec,
                        scenario.validation.episodes,
                        scenario.validation.horizon,
                        run_seed,
                    )?;
                    let check = check_bound(&mc, bound, scenario.validation.tolerance);
                    if !check.pass {
                        failures += 1;
                    }
                    records.push(ValidationRecord {
                        initial_index: ii,
                        theta_index: ti,
                        bound,
                        run: mc,
                        check,
                    });
                }
            }
            Ok(ValidationReport { records, failures })
        };
        let report = run().map_err(stage_err(Stage::Validate))?;
        write_json(
            &root.join("validate").join("report.json"),
            &report,
            &mut hashes,
            &root,
        )?;
        write_artifact(
            &root.join("validate").join("validation.csv"),
            validation_csv(&report).as_bytes(),
            &mut hashes,
            &root,
        )?;
        validation_report = Some(report);
    }

    // manifest: merge artifact hashes from any earlier partial runs
    let manifest_path = root.join("manifest.json");
    let mut all_hashes = hashes.clone();
    if manifest_path.exists() {
        if let Ok(prev) = serde_json::from_slice::<serde_json::Value>(&fs::read(&manifest_path)?) {
            if let Some(arts) = prev.get("artifacts").and_then(|a| a.as_object()) {
                for (k, v) in arts {
                    if let Some(h) = v.as_str() {
                        all_hashes.entry(k.clone()).or_insert_with(|| h.to_string());
                    }
                }
            }
        }
    }
    let manifest = serde_json::json!({
        "tool": {"name": "subsim", "version": env!("CARGO_PKG_VERSION")},
        "scenario_sha256": sha256_hex(scenario_bytes),
        "stages": config.stages,
        "seed": validation_seed,
        "resolved_config": scenario.resolved,
        "artifacts": all_hashes,
    });
    fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;

    Ok(PipelineOutcome {
        ran: config.stages.clone(),
        global_bounds: global_art,
        validation: validation_report,
    })
}

//! JSON-configured runs: parse a config, execute one pipeline, write
//! deterministic artifacts.
//!
//! Exit semantics for embedders: [`PipelineError::Config`] means the
//! configuration could not be used (parse error, unknown field, shape
//! mismatch; process exit 2); [`PipelineError::Invariant`] means the
//! configuration was valid but a numerical contract failed (mesh
//! rejected, residual too large, sandwich bound broken, validation
//! violations; exit 1). Success is exit 0.
//!
//! Artifacts land in `output_dir`: the pipeline's own files plus
//! `metadata.json` (tool version, effective-config hash, mesh and check
//! details) and `run.log` (wall time; the only file allowed to differ
//! between identical runs).

use crate::artifact::{self, config_hash, write_grid_csv, write_json, ConvergenceRow, RunMetadata};
use crate::hjb::{self, GridGeometry, SchemeConfig};
use crate::lattice::{oracle_value, LatticeMesh};
use crate::model::{benchmark, validate_spec, ProblemSpec};
use crate::strategy::{saddle_report, sandwich_test};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant failure: {0}")]
    Invariant(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Invariant(_) => 1,
        }
    }
}

fn io_err(e: std::io::Error) -> PipelineError {
    PipelineError::Invariant(format!("io: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    /// Solve the obstacle equation, dump the grid, check the dynamic
    /// programming residual.
    Solve,
    /// Exact discrete-game value at probe points, both orderings.
    Oracle,
    /// Adversary-matrix bracketing of the solved value.
    Sandwich,
    /// Epsilon-saddle check of the extracted pair.
    Saddle,
    /// Refinement study against a fine-lattice reference.
    Convergence,
    /// Sampled analytic-condition checks of the problem data.
    Validate,
}

impl Pipeline {
    fn name(self) -> &'static str {
        match self {
            Pipeline::Solve => "solve",
            Pipeline::Oracle => "oracle",
            Pipeline::Sandwich => "sandwich",
            Pipeline::Saddle => "saddle",
            Pipeline::Convergence => "convergence",
            Pipeline::Validate => "validate",
        }
    }
}

/// Either a named builtin benchmark or an inline problem description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemRef {
    Named { benchmark: String },
    Inline { spec: Box<ProblemSpec> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub nx: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_paths: 10_000,
            n_steps: 100,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaddleConfig {
    pub epsilon: f64,
    pub k_deviations: usize,
    /// Retry once on a doubled-resolution grid before reporting failure.
    pub refine_on_failure: bool,
}

impl Default for SaddleConfig {
    fn default() -> Self {
        SaddleConfig {
            epsilon: 0.05,
            k_deviations: 5,
            refine_on_failure: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Number of meshes, each halving dx from the previous one.
    pub levels: usize,
    /// Lattice nodes per dimension for the reference value.
    pub oracle_nx: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            levels: 3,
            oracle_nx: 1921,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            samples: 2000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: Pipeline,
    pub problem: ProblemRef,
    #[serde(default)]
    pub mesh: Option<MeshConfig>,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub mc: McConfig,
    /// Spatial probe points; defaults to the origin-adjacent point 1.0
    /// per dimension when empty.
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
    /// Start point for sandwich/saddle runs; defaults to the first probe.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    /// Scheme tolerance added to Monte Carlo noise in sandwich bounds.
    #[serde(default = "default_scheme_tolerance")]
    pub scheme_tolerance: f64,
    #[serde(default)]
    pub saddle: SaddleConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_scheme_tolerance() -> f64 {
    5e-2
}

impl RunConfig {
    /// Parses JSON; serde's message carries line/column and names
    /// unknown fields.
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    fn spec(&self) -> Result<ProblemSpec, PipelineError> {
        let spec = match &self.problem {
            ProblemRef::Named { benchmark: name } => {
                benchmark(name)
                    .ok_or_else(|| {
                        PipelineError::Config(format!(
                            "unknown benchmark {name:?}; available: {}",
                            crate::model::builtin_benchmarks()
                                .iter()
                                .map(|b| b.name.as_str())
                                .collect::<Vec<_>>()
                                .join(", ")
                        ))
                    })?
                    .spec
            }
            ProblemRef::Inline { spec } => (**spec).clone(),
        };
        spec.check()
            .map_err(|e| PipelineError::Config(format!("problem rejected: {e}")))?;
        Ok(spec)
    }

    fn geometry(&self, spec: &ProblemSpec) -> Result<GridGeometry, PipelineError> {
        let g = match &self.mesh {
            Some(m) => GridGeometry {
                x_min: m.x_min.clone(),
                x_max: m.x_max.clone(),
                nx: m.nx.clone(),
            },
            None => GridGeometry {
                x_min: vec![-3.0; spec.dim],
                x_max: vec![3.0; spec.dim],
                nx: vec![241; spec.dim],
            },
        };
        if g.x_min.len() != spec.dim || g.x_max.len() != spec.dim || g.nx.len() != spec.dim {
            return Err(PipelineError::Config(format!(
                "mesh dimension mismatch: problem dim {}, mesh dims {}/{}/{}",
                spec.dim,
                g.x_min.len(),
                g.x_max.len(),
                g.nx.len()
            )));
        }
        Ok(g)
    }

    fn probes_or_default(&self, spec: &ProblemSpec) -> Vec<Vec<f64>> {
        if self.probes.is_empty() {
            vec![vec![1.0; spec.dim]]
        } else {
            self.probes.clone()
        }
    }

    fn start_or_default(&self, spec: &ProblemSpec) -> Vec<f64> {
        self.start
            .clone()
            .unwrap_or_else(|| self.probes_or_default(spec)[0].clone())
    }

    /// Hash of the canonical serialization, so equivalent configs get
    /// equal hashes regardless of input formatting. The output
    /// directory is excluded: where results land is not part of what
    /// was computed.
    pub fn effective_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        config_hash(
            serde_json::to_string(&canonical)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

/// What a run produced, for the caller to print.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pipeline: &'static str,
    pub messages: Vec<String>,
    pub artifacts: Vec<PathBuf>,
}

struct Sink<'a> {
    dir: Option<&'a Path>,
    written: Vec<PathBuf>,
}

impl Sink<'_> {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        if let Some(dir) = self.dir {
            self.written
                .push(artifact::write_file(dir, name, bytes).map_err(io_err)?);
        }
        Ok(())
    }

    fn put_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), PipelineError> {
        let mut buf = Vec::new();
        write_json(&mut buf, value).map_err(io_err)?;
        self.put(name, &buf)
    }
}

/// Executes one configured run end to end.
pub fn run(config: &RunConfig) -> Result<Outcome, PipelineError> {
    let started = std::time::Instant::now();
    let spec = config.spec()?;
    let hash = config.effective_hash();
    let mut sink = Sink {
        dir: config.output_dir.as_deref(),
        written: Vec::new(),
    };
    let mut messages = Vec::new();

    let outcome: Result<serde_json::Value, PipelineError> = match config.pipeline {
        Pipeline::Solve => {
            let geometry = config.geometry(&spec)?;
            let grid = hjb::solve(&spec, &geometry, &config.scheme)
                .map_err(|e| PipelineError::Invariant(e.to_string()))?;
            let residual = hjb::dpp_residual(&spec, &grid)
                .map_err(|e| PipelineError::Invariant(e.to_string()))?;
            if residual > 1e-10 {
                return Err(PipelineError::Invariant(format!(
                    "dynamic programming residual {residual} exceeds 1e-10"
                )));
            }
            let mut csv = Vec::new();
            write_grid_csv(&grid, &mut csv).map_err(io_err)?;
            sink.put("value_grid.csv", &csv)?;
            for probe in config.probes_or_default(&spec) {
                messages.push(format!("w(0, {probe:?}) = {:.12}", grid.probe(&probe)));
            }
            messages.push(format!(
                "dt = {:.6e}, slices = {}, dpp residual = {:.3e}",
                grid.dt_nominal,
                grid.n_slices(),
                residual
            ));
            Ok(serde_json::json!({
                "nx": geometry.nx,
                "dx": (0..spec.dim).map(|k| geometry.dx(k)).collect::<Vec<_>>(),
                "dt": grid.dt_nominal,
                "cfl_load": grid.cfl_load,
                "cfl_safety": config.scheme.cfl_safety,
                "slices": grid.n_slices(),
                "dpp_residual": residual,
            }))
        }
        Pipeline::Oracle => {
            let geometry = config.geometry(&spec)?;
            let mesh = LatticeMesh::stable_for(
                &spec,
                geometry.x_min.clone(),
                geometry.x_max.clone(),
                geometry.nx.clone(),
                1.0,
            )
            .map_err(|e| PipelineError::Invariant(e.to_string()))?;
            let probes = config.probes_or_default(&spec);
            let report = oracle_value(&spec, &mesh, &probes)
                .map_err(|e| PipelineError::Invariant(e.to_string()))?;
            for (p, v) in probes.iter().zip(&report.probe_values) {
                messages.push(format!("oracle w(0, {p:?}) = {v:.12}"));
            }
            messages.push(format!(
                "ordering gap = {:.3e} (tol {:.1e}), steps = {}",
                report.max_ordering_gap, report.ordering_tol, report.n_steps
            ));
            sink.put_json("oracle.json", &report)?;
            Ok(serde_json::json!({
                "nx": mesh.nx,
                "dt": report.dt,
                "n_steps": report.n_steps,
                "max_ordering_gap": report.max_ordering_gap,
            }))
        }
        Pipeline::Sandwich => {
            let geometry = config.geometry(&spec)?;
            let grid = hjb::solve(&spec, &geometry, &config.scheme)
                .map_err(|e| PipelineError::Invariant(e.to_string()))?;
            let start = config.start_or_default(&spec);
            let report = sandwich_test(
                &spec,
                &grid,
                &start,
                config.mc.n_paths,
                config.mc.n_steps,
                config.mc.seed,
                config.scheme_tolerance,
            )
            .map_err(|e| PipelineError::Invariant(e.to_string()))?;
            sink.put_json("sandwich.json", &report)?;
            for cell in &report.cells {
                messages.push(format!(
                    "{} vs {}: {:.6} +- {:.1e}",
                    cell.controller, cell.stopper, cell.value.mean, cell.value.stderr
                ));
            }
            messages.push(format!("grid value {:.6}", report.grid_value));
            if !report.all_ok {
                return Err(PipelineError::Invariant(
                    "sandwich bounds violated; see sandwich.json".into(),
                ));
            }
            Ok(serde_json::json!({
                "nx": geometry.nx,
                "n_paths": config.mc.n_paths,
                "mc_steps": config.mc.n_steps,
                "grid_value": report.grid_value,
            }))
        }
        Pipeline::Saddle => {
            let geometry = config.geometry(&spec)?;
            let start = config.start_or_default(&spec);
            let mut used_geometry = geometry.clone();
            let mut grid = hjb::solve(&spec, &geometry, &config.scheme)
                .map_err(|e| PipelineError::Invariant(e.to_string()))?;
            let mut report = saddle_report(
                &spec,
                &grid,
                &start,
                config.saddle.epsilon,
                config.saddle.k_deviations,
                config.mc.n_paths,
                config.mc.n_steps,
                config.mc.seed,
            )
            .map_err(|e| PipelineError::Invariant(e.to_string()))?;
            let mut refined = false;
            if !report.all_ok && config.saddle.refine_on_failure {
                refined = true;
                used_geometry = geometry.refined();
                grid = hjb::solve(&spec, &used_geometry, &config.scheme)
                    .map_err(|e| PipelineError::Invariant(e.to_string()))?;
                report = saddle_report(
                    &spec,
                    &grid,
                    &start,
                    config.saddle.epsilon,
                    config.saddle.k_deviations,
                    config.mc.n_paths,
                    config.mc.n_steps,
                    config.mc.seed,
                )
                .map_err(|e| PipelineError::Invariant(e.to_string()))?;
            }
            sink.put_json("saddle.json", &report)?;
            messages.push(format!(
                "extracted pair value {:.6} +- {:.1e}{}",
                report.center.mean,
                report.center.stderr,
                if refined { " (after refinement)" } else { "" }
            ));
            let worst = report
                .controller_deviations
                .iter()
                .chain(&report.stopper_deviations)
                .map(|d| d.margin)
                .fold(f64::INFINITY, f64::min);
            messages.push(format!("worst deviation margin {worst:.6}"));
            if !report.all_ok {
                return Err(PipelineError::Invariant(
                    "epsilon-saddle inequalities violated; see saddle.json".into(),
                ));
            }
            Ok(serde_json::json!({
                "nx": used_geometry.nx,
                "epsilon": config.saddle.epsilon,
                "k_deviations": config.saddle.k_deviations,
                "refined": refined,
            }))
        }
        Pipeline::Convergence => {
            let geometry = config.geometry(&spec)?;
            let levels = config.convergence.levels.max(2);
            let probes = config.probes_or_default(&spec);
            let oracle_mesh = LatticeMesh::stable_for(
                &spec,
                geometry.x_min.clone(),
                geometry.x_max.clone(),
                vec![config.convergence.oracle_nx; spec.dim],
                1.0,
            )
            .map_err(|e| PipelineError::Invariant(e.to_string()))?;
            let reference = oracle_value(&spec, &oracle_mesh, &probes)
                .map_err(|e| PipelineError::Invariant(e.to_string()))?;

            let mut rows: Vec<ConvergenceRow> = Vec::new();
            let mut geom = geometry.clone();
            for level in 0..levels {
                let grid = hjb::solve(&spec, &geom, &config.scheme)
                    .map_err(|e| PipelineError::Invariant(e.to_string()))?;
                for (pi, probe) in probes.iter().enumerate() {
                    let value = grid.probe(probe);
                    let error = value - reference.probe_values[pi];
                    let prev = rows
                        .iter()
                        .rev()
                        .find(|r| r.probe == *probe)
                        .map(|r| r.error);
                    let ratio = prev.and_then(|e_prev| {
                        // exactness floor: both levels at round-off
                        if e_prev.abs() < 1e-10 && error.abs() < 1e-10 {
                            None
                        } else {
                            Some(e_prev.abs() / error.abs().max(1e-300))
                        }
                    });
                    rows.push(ConvergenceRow {
                        dx: geom.dx(0),
                        dt: grid.dt_nominal,
                        probe: probe.clone(),
                        value,
                        error,
                        ratio,
                    });
                }
                messages.push(format!(
                    "level {level}: dx = {:.5}, dt = {:.3e}",
                    geom.dx(0),
                    grid.dt_nominal
                ));
                if level + 1 < levels {
                    geom = geom.refined();
                }
            }
            let mut csv = Vec::new();
            artifact::write_convergence_csv(&rows, &mut csv).map_err(io_err)?;
            sink.put("convergence.csv", &csv)?;
            for row in rows.iter().filter(|r| r.ratio.is_some()) {
                messages.push(format!(
                    "probe {:?}: error {:.3e}, ratio {:.3}",
                    row.probe,
                    row.error,
                    row.ratio.unwrap()
                ));
            }
            Ok(serde_json::json!({
                "levels": levels,
                "base_nx": geometry.nx,
                "oracle_nx": config.convergence.oracle_nx,
                "oracle_dt": reference.dt,
            }))
        }
        Pipeline::Validate => {
            let report = validate_spec(&spec, config.validation.samples, config.validation.seed)
                .map_err(|e| PipelineError::Invariant(e.to_string()))?;
            sink.put_json("validation.json", &report)?;
            messages.push(format!(
                "{} samples, {} violations",
                report.samples,
                report.violations.len()
            ));
            if !report.passed() {
                for v in report.violations.iter().take(5) {
                    messages.push(format!("violation: {v:?}"));
                }
                return Err(PipelineError::Invariant(format!(
                    "{} analytic-condition violations; see validation.json",
                    report.violations.len()
                )));
            }
            Ok(serde_json::json!({
                "samples": report.samples,
                "violations": 0,
            }))
        }
    };
    let details = outcome?;

    let meta = RunMetadata::new(hash, config.pipeline.name(), details);
    sink.put_json("metadata.json", &meta)?;
    // wall time lives outside the deterministic artifact set
    sink.put(
        "run.log",
        format!("elapsed_ms={}\n", started.elapsed().as_millis()).as_bytes(),
    )?;

    Ok(Outcome {
        pipeline: config.pipeline.name(),
        messages,
        artifacts: sink.written,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(pipeline: &str) -> String {
        format!(
            r#"{{
  "pipeline": "{pipeline}",
  "problem": {{"benchmark": "discounted-stop"}},
  "mesh": {{"x_min": [-3.0], "x_max": [3.0], "nx": [61]}},
  "mc": {{"n_paths": 500, "n_steps": 32, "seed": 5}},
  "probes": [[1.0]]
}}"#
        )
    }

    #[test]
    fn unknown_fields_and_bad_json_are_config_errors() {
        let err = RunConfig::from_json("{\"pipeline\": \"solve\"").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("line"), "{err}");
        let err = RunConfig::from_json(
            "{\"pipeline\": \"solve\", \"problem\": {\"benchmark\": \"jensen\"}, \"bogus\": 1}",
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn unknown_benchmark_is_a_config_error_naming_choices() {
        let cfg = RunConfig::from_json(
            "{\"pipeline\": \"solve\", \"problem\": {\"benchmark\": \"nope\"}}",
        )
        .unwrap();
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("discounted-stop"), "{err}");
    }

    #[test]
    fn solve_pipeline_reports_probe_and_residual() {
        let cfg = RunConfig::from_json(&base_config("solve")).unwrap();
        let out = run(&cfg).unwrap();
        assert_eq!(out.pipeline, "solve");
        assert!(out.messages.iter().any(|m| m.contains("w(0, [1.0])")));
        assert!(out.artifacts.is_empty(), "no output_dir, no files");
    }

    #[test]
    fn oracle_pipeline_matches_solve_within_mesh_error() {
        let solve_cfg = RunConfig::from_json(&base_config("solve")).unwrap();
        let oracle_cfg = RunConfig::from_json(&base_config("oracle")).unwrap();
        let sv = run(&solve_cfg).unwrap();
        let ov = run(&oracle_cfg).unwrap();
        let parse = |m: &str| -> f64 { m.rsplit('=').next().unwrap().trim().parse().unwrap() };
        let w_pde = parse(sv.messages.iter().find(|m| m.starts_with("w(0")).unwrap());
        let w_lat = parse(
            ov.messages
                .iter()
                .find(|m| m.starts_with("oracle"))
                .unwrap(),
        );
        assert!(
            (w_pde - w_lat).abs() < 5e-2,
            "pde {w_pde} vs lattice {w_lat}"
        );
    }

    #[test]
    fn artifacts_are_byte_identical_across_runs_except_run_log() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::from_json(&base_config("solve")).unwrap();
        cfg.output_dir = Some(dir_a.path().to_path_buf());
        run(&cfg).unwrap();
        cfg.output_dir = Some(dir_b.path().to_path_buf());
        run(&cfg).unwrap();
        for name in ["value_grid.csv", "metadata.json"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} must be byte-identical");
        }
        assert!(dir_a.path().join("run.log").exists());
    }

    #[test]
    fn effective_hash_ignores_formatting_but_not_content() {
        let a = RunConfig::from_json(&base_config("solve")).unwrap();
        let b = RunConfig::from_json(&base_config("solve").replace("\n", " ")).unwrap();
        assert_eq!(a.effective_hash(), b.effective_hash());
        let c = RunConfig::from_json(&base_config("solve").replace("61", "63")).unwrap();
        assert_ne!(a.effective_hash(), c.effective_hash());
    }

    #[test]
    fn validate_pipeline_passes_builtins_and_fails_bad_specs() {
        let cfg = RunConfig::from_json(
            "{\"pipeline\": \"validate\", \"problem\": {\"benchmark\": \"jensen\"}}",
        )
        .unwrap();
        run(&cfg).unwrap();

        // drift growing faster than K(1 + |x|) must be flagged, exit 1
        let bad = r#"{
  "pipeline": "validate",
  "problem": {"spec": {
    "dim": 1, "horizon": 1.0, "controls": [[0.0]],
    "drift": ["100 * x1"], "diffusion": [["1"]],
    "running_cost": "0", "terminal_cost": "x1^2", "discount": "0",
    "discount_bound": 0.5, "lipschitz_k": 2.0, "growth_p": 2.0
  }}
}"#;
        let cfg = RunConfig::from_json(bad).unwrap();
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{err}");
    }

    #[test]
    fn sandwich_pipeline_runs_on_a_small_budget() {
        let cfg = RunConfig::from_json(&base_config("sandwich")).unwrap();
        let out = run(&cfg).unwrap();
        assert_eq!(out.messages.len(), 10, "9 cells + grid value line");
    }

    #[test]
    fn convergence_pipeline_emits_ratios() {
        let mut cfg = RunConfig::from_json(&base_config("convergence")).unwrap();
        cfg.convergence = ConvergenceConfig {
            levels: 2,
            oracle_nx: 481,
        };
        let dir = tempfile::tempdir().unwrap();
        cfg.output_dir = Some(dir.path().to_path_buf());
        let out = run(&cfg).unwrap();
        assert!(out.messages.iter().any(|m| m.contains("ratio")));
        let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
        assert!(csv.starts_with("dx,dt,probe,value,error,ratio\n"));
        assert_eq!(csv.lines().count(), 1 + 2);
    }
}

//! Stage execution: drives the solver, simulator and hedging layers for one
//! scenario, writes the CSV artifacts and the summary manifest, and turns
//! check verdicts into the process outcome.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rdhedge_core::credit::{scenario_by_name, Scenario};
use rdhedge_core::field::{uniform_grid, ValueField};
use rdhedge_core::fixed_point::{iterate_to_fixed_point, CouplingSplit, FkConfig};
use rdhedge_core::hedge::{
    build_hedge, orthogonality_check, recursive_value_check, HedgeConfig, HedgeReport, Probe,
    RecursiveCheckConfig,
};
use rdhedge_core::pde::{solve_system, AxisSpec};
use rdhedge_core::sim::{
    map_paths, simulate_market_pasting, MarketConfig, PathBundle, StepScheme,
};
use rdhedge_core::sim::check::{compensated_counter_residual, generator_martingale_residuals};
use rdhedge_core::stats::sample_stats;

use crate::config::RunConfig;
use crate::error::{CliError, EXIT_CONFIG, EXIT_INTERNAL, EXIT_IO, EXIT_VALIDATION};
use crate::report::{
    artifact_record, fnv1a_hex, ArtifactRecord, CheckRecord, EffectiveSettings, RunManifest,
};
use crate::stages::{plan, Stage};

/// Largest path count the hedge stage will hold in memory at once.
const HEDGE_PATH_CAP: usize = 50_000;
/// Path budget for the self-contained check stages.
const CHECK_PATH_CAP: usize = 4_000;
/// Relative step for numerical derivatives inside generator checks.
const GENERATOR_REL_STEP: f64 = 1e-4;

pub struct RunOutcome {
    pub manifest: RunManifest,
    pub all_passed: bool,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    scenario: Scenario,
    out_dir: PathBuf,
    field_pde: Option<ValueField>,
    field_fk: Option<ValueField>,
    hedge_report: Option<HedgeReport>,
    checks: Vec<CheckRecord>,
    artifacts: Vec<ArtifactRecord>,
}

pub fn run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let mut scenario =
        scenario_by_name(&cfg.scenario).map_err(|e| CliError::from_core("scenario", e))?;
    if let Some((t_steps, nodes)) = cfg.grid {
        scenario.grid.t_steps = t_steps;
        for axis in &mut scenario.grid.axes {
            *axis = AxisSpec::new(axis.lo, axis.hi, nodes, axis.spacing);
        }
    }
    let planned = plan(&cfg.stages, &scenario)?;

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| {
        CliError::new(
            EXIT_IO,
            format!("cannot create output dir {}: {e}", cfg.out_dir.display()),
        )
    })?;

    let mut runner = Runner {
        cfg,
        scenario,
        out_dir: cfg.out_dir.clone(),
        field_pde: None,
        field_fk: None,
        hedge_report: None,
        checks: Vec::new(),
        artifacts: Vec::new(),
    };

    for stage in &planned {
        runner.execute(*stage)?;
    }

    let manifest = runner.into_manifest(&planned)?;
    let all_passed = manifest.all_checks_passed;
    Ok(RunOutcome {
        manifest,
        all_passed,
    })
}

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::new(EXIT_IO, format!("{context}: {e}"))
}

fn write_surface_csv(field: &ValueField, path: &Path) -> Result<(), CliError> {
    let ctx = || format!("writing {}", path.display());
    let file = std::fs::File::create(path).map_err(|e| io_err(&ctx(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let d = field.dim();
    let m = field.regimes();
    let mut header = String::from("t");
    for i in 0..d {
        header.push_str(&format!(",x{}", i + 1));
    }
    header.push_str(",regime,value");
    writeln!(w, "{header}").map_err(|e| io_err(&ctx(), e))?;
    let mut coords = vec![0.0; d];
    for (it, &t) in field.t_grid().iter().enumerate() {
        let layer = field.layer(it);
        for flat in 0..field.space_count() {
            field.node_coords(flat, &mut coords);
            for k in 0..m {
                write!(w, "{t}").map_err(|e| io_err(&ctx(), e))?;
                for &c in &coords {
                    write!(w, ",{c}").map_err(|e| io_err(&ctx(), e))?;
                }
                writeln!(w, ",{k},{}", layer[flat * m + k]).map_err(|e| io_err(&ctx(), e))?;
            }
        }
    }
    Ok(())
}

impl Runner<'_> {
    fn market_config(&self) -> MarketConfig {
        MarketConfig {
            steps: self.cfg.steps,
            scheme: StepScheme::LogEuler,
            seed: self.cfg.seed,
        }
    }

    fn add_artifact(&mut self, name: &str) -> Result<(), CliError> {
        self.artifacts.push(artifact_record(&self.out_dir, name)?);
        Ok(())
    }

    fn execute(&mut self, stage: Stage) -> Result<(), CliError> {
        match stage {
            Stage::Validate => self.scenario.check().map_err(|e| {
                CliError::new(EXIT_VALIDATION, format!("validation failed: {e}"))
            }),
            Stage::SolvePde => self.solve_pde(),
            Stage::SolveFk => self.solve_fk(),
            Stage::Simulate => self.simulate(),
            Stage::Hedge => self.hedge(),
            Stage::CheckOracle => self.check_oracle(),
            Stage::CheckCross => self.check_cross(),
            Stage::CheckMartingale => self.check_martingale(),
            Stage::CheckHedge => self.check_hedge(),
            Stage::CheckAll => unreachable!("expanded during planning"),
        }
    }

    fn solve_pde(&mut self) -> Result<(), CliError> {
        let field = solve_system(&self.scenario.pde_problem())
            .map_err(|e| CliError::from_core("solve-pde", e))?;
        write_surface_csv(&field, &self.out_dir.join("surface_pde.csv"))?;
        self.add_artifact("surface_pde.csv")?;
        self.field_pde = Some(field);
        Ok(())
    }

    /// The fixed point runs on its own coarse lattice: node-wise Monte
    /// Carlo makes fine grids pointless, resolution comes from paths.
    fn solve_fk(&mut self) -> Result<(), CliError> {
        let model = &self.scenario.model;
        let axes: Vec<Vec<f64>> = self
            .scenario
            .grid
            .axes
            .iter()
            .map(|a| AxisSpec::new(a.lo, a.hi, 31, a.spacing).build())
            .collect();
        let v0 = ValueField::zeros(
            uniform_grid(0.0, model.horizon, 25),
            axes,
            model.regimes,
        );
        let fk_cfg = FkConfig {
            paths_per_node: 800,
            steps: self.cfg.steps,
            seed: self.cfg.seed,
            scheme: StepScheme::LogEuler,
            split: CouplingSplit::ExitDiscount,
            beta: self.cfg.beta,
            tol: self.cfg.tol,
            max_iters: 25,
            truncate: true,
            exit_budget: 0.01,
        };
        let (field, trace) =
            iterate_to_fixed_point(model, &self.scenario.claim, v0, &fk_cfg)
                .map_err(|e| CliError::from_core("solve-fk", e))?;
        write_surface_csv(&field, &self.out_dir.join("surface_fk.csv"))?;
        self.add_artifact("surface_fk.csv")?;
        trace
            .write_csv(&self.out_dir.join("fk_trace.csv"))
            .map_err(|e| CliError::from_core("writing fk_trace.csv", e))?;
        self.add_artifact("fk_trace.csv")?;
        self.field_fk = Some(field);
        Ok(())
    }

    fn simulate(&mut self) -> Result<(), CliError> {
        let scenario = &self.scenario;
        let cfg = self.market_config();
        let rows: Vec<(Vec<f64>, usize, bool)> = map_paths(self.cfg.paths, |p| {
            let b =
                simulate_market_pasting(&scenario.model, &scenario.x0, scenario.k0, &cfg, p)?;
            Ok((b.terminal_state().to_vec(), b.terminal_regime(), b.excluded))
        })
        .map_err(|e| CliError::from_core("simulate", e))?;

        let path = self.out_dir.join("paths.csv");
        let ctx = || format!("writing {}", path.display());
        let file = std::fs::File::create(&path).map_err(|e| io_err(&ctx(), e))?;
        let mut w = std::io::BufWriter::new(file);
        let d = scenario.model.dim();
        let mut header = String::from("path");
        for i in 0..d {
            header.push_str(&format!(",terminal_x{}", i + 1));
        }
        header.push_str(",terminal_regime,excluded");
        writeln!(w, "{header}").map_err(|e| io_err(&ctx(), e))?;
        for (i, (state, regime, excluded)) in rows.iter().enumerate() {
            write!(w, "{i}").map_err(|e| io_err(&ctx(), e))?;
            for &s in state {
                write!(w, ",{s}").map_err(|e| io_err(&ctx(), e))?;
            }
            writeln!(w, ",{regime},{}", u8::from(*excluded)).map_err(|e| io_err(&ctx(), e))?;
        }
        drop(w);
        self.add_artifact("paths.csv")
    }

    fn hedge(&mut self) -> Result<(), CliError> {
        if self.cfg.paths > HEDGE_PATH_CAP {
            return Err(CliError::new(
                EXIT_CONFIG,
                format!(
                    "hedge retains whole paths in memory; {} paths exceeds the {HEDGE_PATH_CAP} cap",
                    self.cfg.paths
                ),
            ));
        }
        let scenario = &self.scenario;
        let field = self.field_pde.as_ref().expect("planned after solve-pde");
        let cfg = self.market_config();
        let bundles: Vec<PathBundle> = map_paths(self.cfg.paths, |p| {
            simulate_market_pasting(&scenario.model, &scenario.x0, scenario.k0, &cfg, p)
        })
        .map_err(|e| CliError::from_core("hedge simulation", e))?;
        let report = build_hedge(
            &scenario.model,
            &scenario.claim,
            field,
            &bundles,
            &HedgeConfig::default(),
        )
        .map_err(|e| CliError::from_core("hedge", e))?;
        report
            .write_paths_csv(&self.out_dir.join("hedge_paths.csv"))
            .map_err(|e| CliError::from_core("writing hedge_paths.csv", e))?;
        self.add_artifact("hedge_paths.csv")?;
        report
            .write_steps_csv(&self.out_dir.join("hedge_steps.csv"))
            .map_err(|e| CliError::from_core("writing hedge_steps.csv", e))?;
        self.add_artifact("hedge_steps.csv")?;
        self.hedge_report = Some(report);
        Ok(())
    }

    fn check_oracle(&mut self) -> Result<(), CliError> {
        let field = self.field_pde.as_ref().expect("planned after solve-pde");
        let horizon = self.scenario.model.horizon;
        let mut worst = 0.0f64;
        for frac in [0.0, 0.5, 0.9] {
            let t = frac * horizon;
            for k in 0..self.scenario.model.regimes {
                let reference = self
                    .scenario
                    .oracle_value(t, k)
                    .map_err(|e| CliError::from_core("oracle", e))?
                    .expect("planned only with an oracle");
                let got = field.interp(t, &self.scenario.x0, k);
                worst = worst.max((got - reference).abs());
            }
        }
        self.checks.push(CheckRecord::new(
            "value-vs-oracle",
            "solved value field against the scenario's exact reference value",
            worst,
            self.scenario.tol.oracle_abs,
        ));
        Ok(())
    }

    fn check_cross(&mut self) -> Result<(), CliError> {
        let pde = self.field_pde.as_ref().expect("planned after solve-pde");
        let fk = self.field_fk.as_ref().expect("planned after solve-fk");
        let horizon = self.scenario.model.horizon;
        let axis = &self.scenario.grid.axes[0];
        let probes_x = AxisSpec::new(axis.lo * 1.3, axis.hi / 1.3, 5, axis.spacing).build();
        let mut worst = 0.0f64;
        for frac in [0.0, 0.25, 0.5, 0.75] {
            let t = frac * horizon;
            for &x in &probes_x {
                let mut point = self.scenario.x0.clone();
                point[0] = x;
                let a = pde.interp(t, &point, self.scenario.k0);
                let b = fk.interp(t, &point, self.scenario.k0);
                worst = worst.max((a - b).abs() / a.abs().max(0.05));
            }
        }
        self.checks.push(CheckRecord::new(
            "pde-vs-fixed-point",
            "marching solution against the probabilistic fixed point at sampled nodes",
            worst,
            self.scenario.tol.cross_rel,
        ));

        // A third, simulation-only leg: restart paths from interior probes
        // and compare their payoff mean with the field (the tower property
        // of the valuation). Defined when simulated paths carry no drift.
        if self.scenario.drift_override.is_none() {
            let probes = vec![
                probe_at(&self.scenario, 0.25 * horizon, 0.9),
                probe_at(&self.scenario, 0.5 * horizon, 1.0),
                probe_at(&self.scenario, 0.75 * horizon, 1.15),
            ];
            let rc_cfg = RecursiveCheckConfig::new(
                self.cfg.seed,
                self.cfg.paths.min(CHECK_PATH_CAP),
                self.cfg.steps,
                probes,
            );
            let report = recursive_value_check(
                &self.scenario.model,
                &self.scenario.claim,
                pde,
                &rc_cfg,
            )
            .map_err(|e| CliError::from_core("check-cross", e))?;
            let worst_z = report
                .probes
                .iter()
                .map(|p| p.z.abs())
                .fold(0.0f64, f64::max);
            self.checks.push(CheckRecord::new(
                "field-vs-restarted-simulation",
                "field value against payoff means of simulations restarted at interior probes",
                worst_z,
                3.0,
            ));
        }
        Ok(())
    }

    fn check_martingale(&mut self) -> Result<(), CliError> {
        let scenario = &self.scenario;
        let model = &scenario.model;
        let cfg = self.market_config();
        let n = self.cfg.paths.min(CHECK_PATH_CAP);
        let bundles: Vec<PathBundle> = map_paths(n, |p| {
            simulate_market_pasting(model, &scenario.x0, scenario.k0, &cfg, p)
        })
        .map_err(|e| CliError::from_core("check-martingale", e))?;
        let kept: Vec<&PathBundle> = bundles.iter().filter(|b| !b.excluded).collect();
        if kept.is_empty() {
            return Err(CliError::new(
                EXIT_INTERNAL,
                "every simulated path was excluded",
            ));
        }

        let k0 = scenario.k0;
        let fns: Vec<Box<dyn Fn(&[f64], usize) -> f64>> = vec![
            Box::new(|x: &[f64], _k: usize| x[0]),
            Box::new(|x: &[f64], _k: usize| x[0] * x[0]),
            Box::new(|x: &[f64], _k: usize| 1.0 / (1.0 + x[0])),
            Box::new(move |_x: &[f64], k: usize| f64::from(k == k0)),
        ];
        let steps = self.cfg.steps;
        let time_indices: Vec<usize> = (1..=5).map(|j| j * steps / 5).collect();
        let mut worst_z = 0.0f64;
        for f in &fns {
            let residuals: Vec<Vec<f64>> = kept
                .iter()
                .map(|b| generator_martingale_residuals(model, b, f.as_ref(), GENERATOR_REL_STEP))
                .collect::<rdhedge_core::Result<_>>()
                .map_err(|e| CliError::from_core("check-martingale", e))?;
            for &idx in &time_indices {
                let at_time: Vec<f64> = residuals.iter().map(|r| r[idx]).collect();
                worst_z = worst_z.max(sample_stats(&at_time).z_against(0.0));
            }
        }
        self.checks.push(CheckRecord::new(
            "generator-compensated-mean",
            "generator-compensated test functions have zero-mean residuals at five check times",
            worst_z,
            3.0,
        ));

        let mut worst_counter = 0.0f64;
        for k in 0..model.regimes {
            for &j in model.intensities.live_targets(k) {
                let residuals: Vec<f64> = kept
                    .iter()
                    .map(|b| compensated_counter_residual(model, b, k, j))
                    .collect();
                worst_counter = worst_counter.max(sample_stats(&residuals).z_against(0.0));
            }
        }
        self.checks.push(CheckRecord::new(
            "compensated-counter-mean",
            "switch counters minus integrated intensities have zero mean per channel",
            worst_counter,
            3.0,
        ));
        Ok(())
    }

    fn check_hedge(&mut self) -> Result<(), CliError> {
        let report = self.hedge_report.as_ref().expect("planned after hedge");
        // The residual's standard error collapses for claims without
        // diffusive exposure, where the trapezoid compensator's O(dt^2)
        // remainder dominates; the floor keeps the verdict about the
        // decomposition, not the quadrature.
        let floor = 3e-6 * (1.0 + report.h0.abs());
        let stats = &report.residual_stats;
        self.checks.push(CheckRecord::new(
            "hedge-residual-mean",
            "pathwise residual of payoff minus initial capital, gradient gains and jump leg",
            stats.mean.abs(),
            3.0 * stats.se + floor,
        ));
        let orth = orthogonality_check(report)
            .map_err(|e| CliError::from_core("check-hedge", e))?;
        self.checks.push(CheckRecord::new(
            "hedge-jump-leg-mean",
            "terminal jump-leg level has zero mean",
            orth.l_terminal.mean.abs(),
            3.0 * orth.l_terminal.se + orth.floor,
        ));
        self.checks.push(CheckRecord::new(
            "hedge-orthogonality",
            "covariation between the jump leg and gradient gains vanishes",
            orth.covariation.mean.abs(),
            3.0 * orth.covariation.se + orth.floor,
        ));
        Ok(())
    }

    fn into_manifest(mut self, planned: &[Stage]) -> Result<RunManifest, CliError> {
        let version = env!("CARGO_PKG_VERSION").to_string();
        let stage_names: Vec<String> = planned.iter().map(|s| s.name().to_string()).collect();
        let settings = EffectiveSettings {
            paths: self.cfg.paths,
            steps: self.cfg.steps,
            grid_t_steps: self.scenario.grid.t_steps,
            grid_nodes: self.scenario.grid.axes[0].count,
            beta: self.cfg.beta,
            tol: self.cfg.tol,
        };

        let mut hash_input = Vec::new();
        hash_input.extend_from_slice(version.as_bytes());
        hash_input.push(0);
        hash_input.extend_from_slice(self.scenario.name.as_bytes());
        hash_input.push(0);
        for name in &stage_names {
            hash_input.extend_from_slice(name.as_bytes());
            hash_input.push(0);
        }
        hash_input.extend_from_slice(&self.cfg.seed.to_le_bytes());
        hash_input.extend_from_slice(&(settings.paths as u64).to_le_bytes());
        hash_input.extend_from_slice(&(settings.steps as u64).to_le_bytes());
        hash_input.extend_from_slice(&(settings.grid_t_steps as u64).to_le_bytes());
        hash_input.extend_from_slice(&(settings.grid_nodes as u64).to_le_bytes());
        hash_input.extend_from_slice(&settings.beta.unwrap_or(f64::NAN).to_bits().to_le_bytes());
        hash_input.extend_from_slice(&settings.tol.to_bits().to_le_bytes());
        hash_input.extend_from_slice(&self.cfg.config_bytes);

        let all_checks_passed = self.checks.iter().all(|c| c.passed);
        let manifest = RunManifest {
            version,
            scenario: self.scenario.name.clone(),
            stages: stage_names,
            seed: self.cfg.seed,
            inputs_hash: fnv1a_hex(&hash_input),
            settings,
            checks: std::mem::take(&mut self.checks),
            artifacts: std::mem::take(&mut self.artifacts),
            all_checks_passed,
        };

        let path = self.out_dir.join("summary.json");
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::new(EXIT_INTERNAL, format!("manifest: {e}")))?;
        std::fs::write(&path, json.as_bytes())
            .map_err(|e| io_err(&format!("writing {}", path.display()), e))?;
        Ok(manifest)
    }
}

fn probe_at(scenario: &Scenario, t: f64, scale: f64) -> Probe {
    Probe {
        t,
        x: scenario.x0.iter().map(|&v| v * scale).collect(),
        regime: scenario.k0,
    }
}

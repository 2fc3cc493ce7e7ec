//! Stage names, ordering constraints and the `check` umbrella.
//!
//! Stages run strictly in the order requested. Producers (`solve-pde`,
//! `solve-fk`, `hedge`) leave results in the run state; consumers declare
//! which producers must already have run. The pseudo-stage `check` expands,
//! at its position in the list, to every check whose producers appear
//! earlier and which the scenario supports.

use rdhedge_core::credit::{Oracle, Scenario};

use crate::error::{CliError, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_USAGE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Validate,
    SolvePde,
    SolveFk,
    Simulate,
    Hedge,
    CheckOracle,
    CheckCross,
    CheckMartingale,
    CheckHedge,
    /// Umbrella; replaced by concrete checks before execution.
    CheckAll,
}

impl Stage {
    pub fn parse(text: &str) -> Result<Stage, CliError> {
        Ok(match text {
            "validate" => Stage::Validate,
            "solve-pde" => Stage::SolvePde,
            "solve-fk" => Stage::SolveFk,
            "simulate" => Stage::Simulate,
            "hedge" => Stage::Hedge,
            "check-oracle" => Stage::CheckOracle,
            "check-cross" => Stage::CheckCross,
            "check-martingale" => Stage::CheckMartingale,
            "check-hedge" => Stage::CheckHedge,
            "check" => Stage::CheckAll,
            other => {
                return Err(CliError::new(
                    EXIT_USAGE,
                    format!(
                        "unknown stage '{other}'; stages: validate, solve-pde, solve-fk, \
                         simulate, hedge, check-oracle, check-cross, check-martingale, \
                         check-hedge, check"
                    ),
                ))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::SolvePde => "solve-pde",
            Stage::SolveFk => "solve-fk",
            Stage::Simulate => "simulate",
            Stage::Hedge => "hedge",
            Stage::CheckOracle => "check-oracle",
            Stage::CheckCross => "check-cross",
            Stage::CheckMartingale => "check-martingale",
            Stage::CheckHedge => "check-hedge",
            Stage::CheckAll => "check",
        }
    }

    /// Producer stages that must appear earlier in the list.
    fn requires(&self) -> &'static [Stage] {
        match self {
            Stage::Hedge | Stage::CheckOracle => &[Stage::SolvePde],
            Stage::CheckCross => &[Stage::SolvePde, Stage::SolveFk],
            Stage::CheckHedge => &[Stage::Hedge],
            _ => &[],
        }
    }
}

/// Whether the hedging stages are defined for this scenario: the pathwise
/// decomposition needs the marching drift and the simulated drift to both
/// vanish, which a scenario with an override (a crashing price's
/// compensator) does not satisfy.
pub fn supports_hedging(scenario: &Scenario) -> bool {
    scenario.drift_override.is_none()
}

/// Expand `check` and verify ordering constraints against the scenario.
pub fn plan(requested: &[Stage], scenario: &Scenario) -> Result<Vec<Stage>, CliError> {
    let mut planned: Vec<Stage> = Vec::new();
    for &stage in requested {
        if stage == Stage::CheckAll {
            let add = |s: Stage, planned: &mut Vec<Stage>| {
                if !planned.contains(&s) {
                    planned.push(s);
                }
            };
            if planned.contains(&Stage::SolvePde) && !matches!(scenario.oracle, Oracle::None) {
                add(Stage::CheckOracle, &mut planned);
            }
            if planned.contains(&Stage::SolvePde) && planned.contains(&Stage::SolveFk) {
                add(Stage::CheckCross, &mut planned);
            }
            add(Stage::CheckMartingale, &mut planned);
            if planned.contains(&Stage::Hedge) {
                add(Stage::CheckHedge, &mut planned);
            }
            continue;
        }
        if !planned.contains(&stage) {
            planned.push(stage);
        }
    }

    for (i, stage) in planned.iter().enumerate() {
        for need in stage.requires() {
            if !planned[..i].contains(need) {
                return Err(CliError::new(
                    EXIT_DEPENDENCY,
                    format!(
                        "stage {} needs {} to run earlier in the stage list",
                        stage.name(),
                        need.name()
                    ),
                ));
            }
        }
        match stage {
            Stage::CheckOracle if matches!(scenario.oracle, Oracle::None) => {
                return Err(CliError::new(
                    EXIT_CONFIG,
                    format!(
                        "scenario {} has no reference value; check-oracle is not defined for it",
                        scenario.name
                    ),
                ));
            }
            Stage::Hedge | Stage::CheckHedge if !supports_hedging(scenario) => {
                return Err(CliError::new(
                    EXIT_CONFIG,
                    format!(
                        "scenario {} prices under a compensating drift; the hedging \
                         decomposition is defined for driftless dynamics only",
                        scenario.name
                    ),
                ));
            }
            _ => {}
        }
    }
    Ok(planned)
}

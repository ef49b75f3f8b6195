use super::transcription::{NlpProblem, PhaseKind, TerminalCondition};
use super::{OptimizerSettings, Result, TrajoptError};
use crate::fslip::{leg_geometry, FslipParams, FslipState};

/// Actuated leg length at which the static spring holds the mass at `height`.
pub(crate) fn rest_leg_length(params: &FslipParams, height: f64) -> Result<f64> {
    let [lo, hi] = params.leg_length_bounds;
    let residual = |l: f64| l - params.weight() / params.stiffness_unchecked(l) - height;
    let (mut a, mut b) = (lo, hi);
    let (ra, rb) = (residual(a), residual(b));
    if ra > 0.0 || rb < 0.0 {
        return Err(TrajoptError::Infeasible(format!(
            "no leg length in [{lo}, {hi}] rests the mass at height {height:.4} m"
        )));
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if residual(m) > 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Landing optimization from the post-impact template state to a static
/// stance at height `rest_height` with the mass above the foot.
pub fn build_landing_nlp(
    params: &FslipParams,
    init: &FslipState,
    rest_height: f64,
    settings: &OptimizerSettings,
) -> Result<NlpProblem> {
    params.validate()?;
    params.check_leg_length(init.leg_length)?;
    leg_geometry(init)?;
    let nodes = settings.landing_nodes;
    if nodes < 10 {
        return Err(TrajoptError::Task(format!(
            "need at least 10 nodes, got {nodes}"
        )));
    }
    let l_rest = rest_leg_length(params, rest_height)?;
    let terminal = vec![
        TerminalCondition::Height(rest_height),
        TerminalCondition::Position(init.foot_x),
        TerminalCondition::Rest,
        TerminalCondition::SpringForce(params.weight()),
    ];
    let guess_terminal = [
        init.foot_x,
        rest_height,
        init.theta,
        l_rest,
        0.0,
        0.0,
        0.0,
        0.0,
    ];
    Ok(NlpProblem {
        kind: PhaseKind::Landing,
        params: params.clone(),
        nodes,
        foot_x: init.foot_x,
        weights: settings.weights,
        duration_bounds: settings.landing_duration_bounds,
        initial: init.to_array(),
        terminal,
        guess_terminal,
        guess_duration: 0.6f64.clamp(
            settings.landing_duration_bounds[0],
            settings.landing_duration_bounds[1],
        ),
        min_height: 0.25 * params.leg_length_bounds[0],
    })
}

//! Alternating three-stage TX/RX position calibration.
//!
//! Each iteration optimizes the RX position with the TX fixed, then the TX
//! with the RX fixed. Each 2D subproblem runs a 5x5 coarse grid anchored at
//! the endpoint's initial position, a 7x7 fine grid around the coarse
//! optimum, and Powell's conjugate-direction method with golden-section line
//! minimization. All candidates are constrained to the d_max ball around the
//! initial position and keep their height fixed.
//!
//! Every tie is broken deterministically: by total loss, then smaller
//! adjustment norm, then lexicographic (dx, dy).

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::LocalPosition;
use crate::loss::{composite_loss, outage_loss, LossBreakdown, LossError, LossWeights};
use crate::pdp::{synthesize_pdp, PowerDelayProfile, DEFAULT_BIN_WIDTH_NS, MAX_MEASURABLE_DELAY_NS};
use crate::raytrace::{ForwardModel, TraceError, MIN_POWER_DBM};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("forward-evaluation budget exhausted")]
    BudgetExhausted,
    #[error("forward model failed: {0}")]
    Forward(#[from] TraceError),
    #[error("loss evaluation failed: {0}")]
    Loss(#[from] LossError),
    #[error("measured profile is empty")]
    EmptyMeasuredProfile,
}

/// Stage geometry, tolerances, and budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub d_max_m: f64,
    pub coarse_offsets_m: Vec<f64>,
    pub fine_halfwidth_m: f64,
    pub fine_step_m: f64,
    pub powell_tol_m: f64,
    pub epsilon_m: f64,
    pub rel_loss_tol: f64,
    pub n_max_iters: usize,
    pub line_search_bracket_m: f64,
    pub max_line_evals: usize,
    pub max_powell_sweeps: usize,
    pub eval_budget: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            d_max_m: 10.0,
            coarse_offsets_m: vec![-5.0, -2.5, 0.0, 2.5, 5.0],
            fine_halfwidth_m: 1.5,
            fine_step_m: 0.5,
            powell_tol_m: 0.1,
            epsilon_m: 0.1,
            rel_loss_tol: 1e-3,
            n_max_iters: 10,
            line_search_bracket_m: 2.5,
            max_line_evals: 20,
            max_powell_sweeps: 5,
            eval_budget: 1500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Coarse,
    Fine,
    Powell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Endpoint {
    Tx,
    Rx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEval {
    pub position: LocalPosition,
    pub breakdown: LossBreakdown,
}

/// One stage of one 2D subproblem: every candidate evaluated, the winner,
/// and how many objective evaluations the stage spent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: Stage,
    pub candidates: Vec<CandidateEval>,
    pub chosen: LocalPosition,
    pub chosen_loss: LossBreakdown,
    pub eval_count: usize,
    pub all_outage: bool,
}

/// Objective for one endpoint's 2D subproblem (the other endpoint is fixed
/// inside the implementation).
pub trait LossFn: Sync {
    fn evaluate(&self, candidate: LocalPosition) -> Result<LossBreakdown, OptimError>;
}

impl<F> LossFn for F
where
    F: Fn(LocalPosition) -> Result<LossBreakdown, OptimError> + Sync,
{
    fn evaluate(&self, candidate: LocalPosition) -> Result<LossBreakdown, OptimError> {
        self(candidate)
    }
}

fn adjustment(candidate: &LocalPosition, p0: &LocalPosition) -> (f64, f64, f64) {
    let dx = candidate.x_m - p0.x_m;
    let dy = candidate.y_m - p0.y_m;
    ((dx * dx + dy * dy).sqrt(), dx, dy)
}

/// Deterministic argmin: total loss, then adjustment norm, then (dx, dy).
fn pick_best(candidates: &[CandidateEval], p0: &LocalPosition) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        let better = match best {
            None => true,
            Some(bi) => {
                let b = &candidates[bi];
                let (cn, cdx, cdy) = adjustment(&c.position, p0);
                let (bn, bdx, bdy) = adjustment(&b.position, p0);
                c.breakdown
                    .total
                    .total_cmp(&b.breakdown.total)
                    .then(cn.total_cmp(&bn))
                    .then(cdx.total_cmp(&bdx))
                    .then(cdy.total_cmp(&bdy))
                    .is_lt()
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

fn grid_stage(
    stage: Stage,
    positions: Vec<LocalPosition>,
    p0: &LocalPosition,
    objective: &dyn LossFn,
) -> Result<(LocalPosition, StageTrace), OptimError> {
    let results: Vec<Result<LossBreakdown, OptimError>> = positions
        .par_iter()
        .map(|p| objective.evaluate(*p))
        .collect();
    let mut candidates = Vec::with_capacity(positions.len());
    for (p, r) in positions.into_iter().zip(results) {
        candidates.push(CandidateEval { position: p, breakdown: r? });
    }
    let eval_count = candidates.len();
    let best = pick_best(&candidates, p0).expect("grid stage has candidates");
    let chosen = candidates[best].position;
    let chosen_loss = candidates[best].breakdown;
    let all_outage = candidates.iter().all(|c| c.breakdown.outage);
    Ok((
        chosen,
        StageTrace {
            stage,
            candidates,
            chosen,
            chosen_loss,
            eval_count,
            all_outage,
        },
    ))
}

/// Stage 1: 5x5 coarse grid anchored at the endpoint's initial position.
pub fn coarse_grid_stage(
    p0: &LocalPosition,
    objective: &dyn LossFn,
    cfg: &OptimizerConfig,
) -> Result<(LocalPosition, StageTrace), OptimError> {
    let mut positions = Vec::new();
    for &dx in &cfg.coarse_offsets_m {
        for &dy in &cfg.coarse_offsets_m {
            if (dx * dx + dy * dy).sqrt() > cfg.d_max_m {
                continue;
            }
            positions.push(LocalPosition::new(p0.x_m + dx, p0.y_m + dy, p0.z_m));
        }
    }
    grid_stage(Stage::Coarse, positions, p0, objective)
}

/// Stage 2: 7x7 fine grid around the coarse optimum, constrained to the
/// d_max ball around the initial position.
pub fn fine_grid_stage(
    center: &LocalPosition,
    p0: &LocalPosition,
    objective: &dyn LossFn,
    cfg: &OptimizerConfig,
) -> Result<(LocalPosition, StageTrace), OptimError> {
    let steps = (cfg.fine_halfwidth_m / cfg.fine_step_m).round() as i64;
    let mut positions = Vec::new();
    for ix in -steps..=steps {
        for iy in -steps..=steps {
            let cand = LocalPosition::new(
                center.x_m + ix as f64 * cfg.fine_step_m,
                center.y_m + iy as f64 * cfg.fine_step_m,
                p0.z_m,
            );
            let (norm, _, _) = adjustment(&cand, p0);
            if norm > cfg.d_max_m {
                continue;
            }
            positions.push(cand);
        }
    }
    grid_stage(Stage::Fine, positions, p0, objective)
}

/// Golden-section minimization along `point + alpha * u`, bounded by the
/// bracket and the d_max ball around p0. Returns the best (alpha, loss) seen;
/// alpha = 0 when no evaluated point beats `current_loss`.
fn line_minimize(
    point: &LocalPosition,
    u: [f64; 2],
    current_loss: f64,
    p0: &LocalPosition,
    objective: &dyn LossFn,
    cfg: &OptimizerConfig,
    candidates: &mut Vec<CandidateEval>,
) -> Result<(f64, f64), OptimError> {
    // Feasible alpha range on the unit direction: |q + alpha*u| <= d_max.
    let q = [point.x_m - p0.x_m, point.y_m - p0.y_m];
    let qu = q[0] * u[0] + q[1] * u[1];
    let qq = q[0] * q[0] + q[1] * q[1];
    let disc = qu * qu - (qq - cfg.d_max_m * cfg.d_max_m);
    if disc < 0.0 {
        return Ok((0.0, current_loss));
    }
    let root = disc.sqrt();
    let mut lo = (-qu - root).max(-cfg.line_search_bracket_m);
    let mut hi = (-qu + root).min(cfg.line_search_bracket_m);
    if hi - lo < 1e-12 {
        return Ok((0.0, current_loss));
    }

    let at = |alpha: f64| LocalPosition::new(point.x_m + alpha * u[0], point.y_m + alpha * u[1], point.z_m);
    let mut best_alpha = 0.0;
    let mut best_loss = current_loss;
    let mut evals = 0usize;
    let eval = |alpha: f64,
                    evals: &mut usize,
                    best_alpha: &mut f64,
                    best_loss: &mut f64,
                    candidates: &mut Vec<CandidateEval>|
     -> Result<f64, OptimError> {
        let pos = at(alpha);
        let b = objective.evaluate(pos)?;
        *evals += 1;
        candidates.push(CandidateEval { position: pos, breakdown: b });
        if b.total < *best_loss {
            *best_loss = b.total;
            *best_alpha = alpha;
        }
        Ok(b.total)
    };

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let tol = cfg.powell_tol_m * 0.1;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = eval(x1, &mut evals, &mut best_alpha, &mut best_loss, candidates)?;
    let mut f2 = eval(x2, &mut evals, &mut best_alpha, &mut best_loss, candidates)?;
    while hi - lo > tol && evals < cfg.max_line_evals {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = eval(x1, &mut evals, &mut best_alpha, &mut best_loss, candidates)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = eval(x2, &mut evals, &mut best_alpha, &mut best_loss, candidates)?;
        }
    }
    Ok((best_alpha, best_loss))
}

/// Stage 3: Powell's conjugate-direction refinement from the fine optimum.
/// The returned loss never exceeds the loss at `start`.
pub fn powell_stage(
    start: &LocalPosition,
    p0: &LocalPosition,
    objective: &dyn LossFn,
    cfg: &OptimizerConfig,
) -> Result<(LocalPosition, StageTrace), OptimError> {
    let start_breakdown = objective.evaluate(*start)?;
    let mut candidates = vec![CandidateEval { position: *start, breakdown: start_breakdown }];
    let mut current = *start;
    let mut current_loss = start_breakdown.total;
    let mut current_breakdown = start_breakdown;
    let mut directions: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

    for _sweep in 0..cfg.max_powell_sweeps {
        let sweep_start = current;
        let mut improvements = [0.0f64; 2];
        for (di, &u) in directions.clone().iter().enumerate() {
            let (alpha, loss) =
                line_minimize(&current, u, current_loss, p0, objective, cfg, &mut candidates)?;
            if loss < current_loss {
                improvements[di] = current_loss - loss;
                current = LocalPosition::new(
                    current.x_m + alpha * u[0],
                    current.y_m + alpha * u[1],
                    current.z_m,
                );
                current_loss = loss;
            }
        }
        let disp = [current.x_m - sweep_start.x_m, current.y_m - sweep_start.y_m];
        let disp_norm = (disp[0] * disp[0] + disp[1] * disp[1]).sqrt();
        if disp_norm >= 1e-12 {
            // Replace the direction of maximal improvement with the sweep
            // displacement to approach conjugacy.
            let replace = if improvements[0] >= improvements[1] { 0 } else { 1 };
            directions[replace] = [disp[0] / disp_norm, disp[1] / disp_norm];
        }
        if disp_norm < cfg.powell_tol_m {
            break;
        }
    }

    // The chosen point's breakdown is the best evaluated at `current`.
    for c in &candidates {
        if c.position == current {
            current_breakdown = c.breakdown;
        }
    }
    let eval_count = candidates.len();
    let all_outage = candidates.iter().all(|c| c.breakdown.outage);
    Ok((
        current,
        StageTrace {
            stage: Stage::Powell,
            candidates,
            chosen: current,
            chosen_loss: current_breakdown,
            eval_count,
            all_outage,
        },
    ))
}

/// Run the three stages for one endpoint.
pub fn optimize_endpoint(
    p0: &LocalPosition,
    objective: &dyn LossFn,
    cfg: &OptimizerConfig,
) -> Result<(LocalPosition, Vec<StageTrace>), OptimError> {
    let (coarse, t1) = coarse_grid_stage(p0, objective, cfg)?;
    let (fine, t2) = fine_grid_stage(&coarse, p0, objective, cfg)?;
    let (refined, t3) = powell_stage(&fine, p0, objective, cfg)?;
    Ok((refined, vec![t1, t2, t3]))
}

// --- Forward-model evaluation with caching and budget accounting ---

/// PDP synthesis parameters used when evaluating candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationParams {
    pub bin_width_ns: f64,
    pub cutoff_dbm: f64,
    /// Clamp simulated profiles to the sounder's delay range when comparing
    /// against measured data; `None` disables.
    pub clamp_extent_ns: Option<f64>,
    /// Gaussian pulse width emulating the sounder bandwidth; applied to
    /// every synthesized profile. `None` keeps ideal impulses.
    pub smoothing_sigma_ns: Option<f64>,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            bin_width_ns: DEFAULT_BIN_WIDTH_NS,
            cutoff_dbm: MIN_POWER_DBM,
            clamp_extent_ns: Some(MAX_MEASURABLE_DELAY_NS),
            smoothing_sigma_ns: None,
        }
    }
}

/// Evaluates the composite loss for candidate (TX, RX) pairs, counting every
/// forward-model call against the budget and caching simulated profiles so
/// revisited candidates are free.
pub struct ForwardEvaluator<'a> {
    fm: &'a dyn ForwardModel,
    meas: &'a PowerDelayProfile,
    weights: LossWeights,
    sim: SimulationParams,
    p_tx0: LocalPosition,
    p_rx0: LocalPosition,
    budget: usize,
    state: Mutex<EvaluatorState>,
}

struct EvaluatorState {
    cache: HashMap<[u64; 6], Option<PowerDelayProfile>>,
    forward_evals: usize,
}

impl<'a> ForwardEvaluator<'a> {
    pub fn new(
        fm: &'a dyn ForwardModel,
        meas: &'a PowerDelayProfile,
        weights: LossWeights,
        sim: SimulationParams,
        p_tx0: LocalPosition,
        p_rx0: LocalPosition,
        budget: usize,
    ) -> Self {
        Self {
            fm,
            meas,
            weights,
            sim,
            p_tx0,
            p_rx0,
            budget,
            state: Mutex::new(EvaluatorState { cache: HashMap::new(), forward_evals: 0 }),
        }
    }

    pub fn forward_evals(&self) -> usize {
        self.state.lock().expect("evaluator lock").forward_evals
    }

    fn simulate(&self, tx: &LocalPosition, rx: &LocalPosition) -> Result<Option<PowerDelayProfile>, OptimError> {
        let key = [
            tx.x_m.to_bits(),
            tx.y_m.to_bits(),
            tx.z_m.to_bits(),
            rx.x_m.to_bits(),
            rx.y_m.to_bits(),
            rx.z_m.to_bits(),
        ];
        {
            let state = self.state.lock().expect("evaluator lock");
            if let Some(hit) = state.cache.get(&key) {
                return Ok(hit.clone());
            }
        }
        {
            let mut state = self.state.lock().expect("evaluator lock");
            if state.forward_evals >= self.budget {
                return Err(OptimError::BudgetExhausted);
            }
            state.forward_evals += 1;
        }
        let profile = match self.fm.trace(tx, rx) {
            Ok(paths) => match synthesize_pdp(&paths, self.sim.bin_width_ns, self.sim.cutoff_dbm) {
                Ok(p) => {
                    let p = match self.sim.smoothing_sigma_ns {
                        Some(sigma) => crate::pdp::smooth_pdp(&p, sigma),
                        None => p,
                    };
                    match self.sim.clamp_extent_ns {
                    Some(max) => {
                        let c = p.clamp_extent(max);
                        if c.max_bin().is_none() {
                            None
                        } else {
                            Some(c)
                        }
                    }
                        None => Some(p),
                    }
                }
                Err(_) => None,
            },
            // Infeasible candidate geometry is an outage, not a hard failure.
            Err(TraceError::EndpointInsideBuilding { .. }) | Err(TraceError::DegenerateLink) => None,
            Err(e) => return Err(OptimError::Forward(e)),
        };
        let mut state = self.state.lock().expect("evaluator lock");
        state.cache.insert(key, profile.clone());
        Ok(profile)
    }

    /// Composite loss at a candidate pair; outages map to the outage penalty.
    pub fn loss_at(&self, tx: &LocalPosition, rx: &LocalPosition) -> Result<LossBreakdown, OptimError> {
        let d_tx = tx.distance_to(&self.p_tx0);
        let d_rx = rx.distance_to(&self.p_rx0);
        match self.simulate(tx, rx)? {
            None => Ok(outage_loss(d_tx, d_rx, &self.weights)),
            Some(sim) => Ok(composite_loss(&sim, self.meas, d_tx, d_rx, &self.weights)?),
        }
    }
}

// --- Full calibration ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointTrace {
    pub endpoint: Endpoint,
    pub stages: Vec<StageTrace>,
    pub result: LocalPosition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub rx: EndpointTrace,
    pub tx: EndpointTrace,
    pub loss_after: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub p_tx_star: LocalPosition,
    pub p_rx_star: LocalPosition,
    pub p_tx0: LocalPosition,
    pub p_rx0: LocalPosition,
    pub iterations: Vec<IterationTrace>,
    pub initial_loss: LossBreakdown,
    pub final_loss: LossBreakdown,
    pub loss_reduction_pct: f64,
    pub forward_evals: usize,
    pub converged: bool,
    pub iterations_used: usize,
}

/// Alternating calibration: RX stages 1-3 with TX fixed, then TX likewise,
/// until both endpoint updates fall below epsilon and the relative loss
/// change is below the tolerance, or the iteration / evaluation budget runs
/// out (best-so-far returned with `converged = false`).
pub fn calibrate(
    p_tx0: LocalPosition,
    p_rx0: LocalPosition,
    fm: &dyn ForwardModel,
    meas: &PowerDelayProfile,
    cfg: &OptimizerConfig,
    weights: &LossWeights,
    sim: SimulationParams,
) -> Result<CalibrationResult, OptimError> {
    if meas.max_bin().is_none() {
        return Err(OptimError::EmptyMeasuredProfile);
    }
    let evaluator = ForwardEvaluator::new(fm, meas, *weights, sim, p_tx0, p_rx0, cfg.eval_budget);
    let initial_loss = evaluator.loss_at(&p_tx0, &p_rx0)?;

    let mut p_tx = p_tx0;
    let mut p_rx = p_rx0;
    let mut prev_total = initial_loss.total;
    let mut current_loss = initial_loss;
    let mut iterations = Vec::new();
    let mut converged = false;
    let mut budget_hit = false;

    'outer: for iteration in 1..=cfg.n_max_iters {
        let tx_prev = p_tx;
        let rx_prev = p_rx;

        // RX subproblem with TX fixed.
        let tx_fixed = p_tx;
        let rx_objective = |cand: LocalPosition| evaluator.loss_at(&tx_fixed, &cand);
        let rx_out = optimize_endpoint(&p_rx0, &rx_objective, cfg);
        let (rx_new, rx_stages) = match rx_out {
            Ok(v) => v,
            Err(OptimError::BudgetExhausted) => {
                budget_hit = true;
                break 'outer;
            }
            Err(e) => return Err(e),
        };
        p_rx = rx_new;

        // TX subproblem with the updated RX fixed.
        let rx_fixed = p_rx;
        let tx_objective = |cand: LocalPosition| evaluator.loss_at(&cand, &rx_fixed);
        let tx_out = optimize_endpoint(&p_tx0, &tx_objective, cfg);
        let (tx_new, tx_stages) = match tx_out {
            Ok(v) => v,
            Err(OptimError::BudgetExhausted) => {
                budget_hit = true;
                break 'outer;
            }
            Err(e) => return Err(e),
        };
        p_tx = tx_new;

        let loss_after = tx_stages.last().expect("powell stage").chosen_loss;
        current_loss = loss_after;
        iterations.push(IterationTrace {
            iteration,
            rx: EndpointTrace { endpoint: Endpoint::Rx, stages: rx_stages, result: p_rx },
            tx: EndpointTrace { endpoint: Endpoint::Tx, stages: tx_stages, result: p_tx },
            loss_after,
        });

        let tx_update = p_tx.distance_to(&tx_prev);
        let rx_update = p_rx.distance_to(&rx_prev);
        let rel_change = if prev_total > 0.0 {
            (loss_after.total - prev_total).abs() / prev_total
        } else {
            (loss_after.total - prev_total).abs()
        };
        prev_total = loss_after.total;
        if tx_update < cfg.epsilon_m && rx_update < cfg.epsilon_m && rel_change < cfg.rel_loss_tol {
            converged = true;
            break;
        }
    }

    let iterations_used = iterations.len();
    let loss_reduction_pct = if initial_loss.total > 0.0 {
        (initial_loss.total - current_loss.total) / initial_loss.total * 100.0
    } else {
        0.0
    };
    Ok(CalibrationResult {
        p_tx_star: p_tx,
        p_rx_star: p_rx,
        p_tx0,
        p_rx0,
        iterations,
        initial_loss,
        final_loss: current_loss,
        loss_reduction_pct,
        forward_evals: evaluator.forward_evals(),
        converged: converged && !budget_hit,
        iterations_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn value_breakdown(v: f64) -> LossBreakdown {
        LossBreakdown {
            l_peak: 0.0,
            l_unmatched: 0.0,
            l_shape: v,
            l_distance: 0.0,
            total: v,
            outage: false,
        }
    }

    /// Anisotropic quadratic bowl objective with minimum at `center`.
    fn bowl(center: [f64; 2], ax: f64, ay: f64, cross: f64) -> impl LossFn {
        move |p: LocalPosition| {
            let dx = p.x_m - center[0];
            let dy = p.y_m - center[1];
            Ok(value_breakdown(ax * dx * dx + ay * dy * dy + cross * dx * dy))
        }
    }

    fn origin() -> LocalPosition {
        LocalPosition::new(0.0, 0.0, 1.5)
    }

    #[test]
    fn coarse_already_optimal() {
        let cfg = OptimizerConfig::default();
        let f = bowl([0.0, 0.0], 1.0, 1.0, 0.0);
        let (best, trace) = coarse_grid_stage(&origin(), &f, &cfg).unwrap();
        assert_eq!(best, origin());
        assert_eq!(trace.eval_count, 25);
        assert_eq!(trace.candidates.len(), 25);
    }

    #[test]
    fn coarse_recovers_grid_minimum() {
        let cfg = OptimizerConfig::default();
        let f = bowl([2.5, -2.5], 1.0, 2.0, 0.0);
        let (best, _) = coarse_grid_stage(&origin(), &f, &cfg).unwrap();
        assert_eq!(best.x_m, 2.5);
        assert_eq!(best.y_m, -2.5);
    }

    #[test]
    fn coarse_constraint_skips_corners() {
        // With d_max = 5 only offsets with norm <= 5 survive: the 3x3 block
        // of {-2.5, 0, 2.5} plus the four axis points at distance 5.
        let cfg = OptimizerConfig { d_max_m: 5.0, ..OptimizerConfig::default() };
        let f = bowl([0.0, 0.0], 1.0, 1.0, 0.0);
        let (_, trace) = coarse_grid_stage(&origin(), &f, &cfg).unwrap();
        assert_eq!(trace.eval_count, 13);
    }

    #[test]
    fn fine_recovers_offset_minimum() {
        let cfg = OptimizerConfig::default();
        let f = bowl([0.5, -1.0], 1.0, 1.0, 0.3);
        let (best, trace) = fine_grid_stage(&origin(), &origin(), &f, &cfg).unwrap();
        assert_eq!(trace.eval_count, 49);
        assert_eq!(best.x_m, 0.5);
        assert_eq!(best.y_m, -1.0);
    }

    #[test]
    fn fine_center_included_so_never_worse() {
        let cfg = OptimizerConfig::default();
        let f = bowl([2.5, 0.0], 1.0, 1.0, 0.0);
        let p0 = origin();
        let (coarse, tc) = coarse_grid_stage(&p0, &f, &cfg).unwrap();
        let (_, tf) = fine_grid_stage(&coarse, &p0, &f, &cfg).unwrap();
        assert!(tf.chosen_loss.total <= tc.chosen_loss.total);
    }

    #[test]
    fn powell_converges_on_quadratic_bowl() {
        let cfg = OptimizerConfig::default();
        let f = bowl([0.5, -0.5], 3.0, 1.0, 0.8);
        let start = origin();
        let (best, trace) = powell_stage(&start, &origin(), &f, &cfg).unwrap();
        let err = ((best.x_m - 0.5).powi(2) + (best.y_m + 0.5).powi(2)).sqrt();
        assert!(err < cfg.powell_tol_m, "distance to minimum {err}");
        assert!(trace.chosen_loss.total <= f.evaluate(start).unwrap().total);
    }

    #[test]
    fn powell_returns_start_when_already_minimal() {
        let cfg = OptimizerConfig::default();
        let f = bowl([0.0, 0.0], 1.0, 1.0, 0.0);
        let (best, _) = powell_stage(&origin(), &origin(), &f, &cfg).unwrap();
        assert_eq!(best, origin());
    }

    #[test]
    fn powell_respects_constraint_ball() {
        let cfg = OptimizerConfig { d_max_m: 2.0, ..OptimizerConfig::default() };
        // Minimum far outside the ball.
        let f = bowl([8.0, 0.0], 1.0, 1.0, 0.0);
        let p0 = origin();
        let (best, trace) = powell_stage(&p0, &p0, &f, &cfg).unwrap();
        let (norm, _, _) = adjustment(&best, &p0);
        assert!(norm <= cfg.d_max_m + 1e-9);
        // No evaluated feasible point beats the result.
        for c in &trace.candidates {
            assert!(c.breakdown.total >= trace.chosen_loss.total - 1e-12);
        }
    }

    #[test]
    fn powell_eval_count_bounded() {
        let cfg = OptimizerConfig::default();
        let f = bowl([1.2, -0.7], 5.0, 1.0, 1.5);
        let (_, trace) = powell_stage(&origin(), &origin(), &f, &cfg).unwrap();
        assert!(trace.eval_count <= 4 * cfg.max_line_evals * cfg.max_powell_sweeps);
    }

    #[test]
    fn stage_descent_chain() {
        let cfg = OptimizerConfig::default();
        let f = bowl([1.7, -2.2], 2.0, 1.0, 0.4);
        let p0 = origin();
        let (_, stages) = optimize_endpoint(&p0, &f, &cfg).unwrap();
        assert!(stages[1].chosen_loss.total <= stages[0].chosen_loss.total);
        assert!(stages[2].chosen_loss.total <= stages[1].chosen_loss.total);
    }

    #[test]
    fn budget_exhaustion_surfaces() {
        let count = std::sync::atomic::AtomicUsize::new(0);
        let f = move |p: LocalPosition| {
            if count.fetch_add(1, std::sync::atomic::Ordering::SeqCst) >= 10 {
                return Err(OptimError::BudgetExhausted);
            }
            Ok(value_breakdown(p.x_m.abs() + p.y_m.abs()))
        };
        let cfg = OptimizerConfig::default();
        assert!(matches!(
            coarse_grid_stage(&origin(), &f, &cfg),
            Err(OptimError::BudgetExhausted)
        ));
    }
}

//! Sequential selection of active inputs and knots.
//!
//! Each pass scores, for every input, either the best new knot (active
//! inputs) or activation with knots `{0, 1}` (inactive inputs) by the squared
//! `L²` change of the mode plus a reward, and applies the best decision until
//! the chosen change falls below `ε`.

pub mod criteria;

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use criteria::{criterion_new_knot, criterion_new_variable};

use crate::basis::{Subdivision, DEFAULT_MIN_GAP};
use crate::bench::q_squared;
use crate::constraints::StackedConstraints;
use crate::error::{Error, Result};
use crate::kernels::Kernel1D;
use crate::model::{default_kernel, intercept_for, mode_of, posterior_for, ConstraintSpec, ModelState};
use crate::posterior::{estimate_hyperparameters, Dataset, HyperSearch, SolverPath};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MaxModConfig {
    /// Reward per unit distance from a new knot to the existing ones.
    pub delta: f64,
    /// Fixed reward for activating an input.
    pub delta_prime: f64,
    /// Stop once the chosen decision changes the mode by less than this.
    pub epsilon: f64,
    /// Number of equispaced knot positions on `[0, 1]`, endpoints included.
    pub grid: usize,
    pub max_iter: usize,
    /// Re-estimate hyperparameters every this many passes (0 never).
    pub reestimate_period: usize,
    pub constraints: ConstraintSpec,
    pub family: String,
    /// Kernel used for every input when hyperparameters are not estimated.
    pub kernel: Option<Kernel1D>,
    pub noise: Option<f64>,
    pub search: HyperSearch,
    pub center: bool,
    pub min_gap: f64,
    pub solver: SolverPath,
}

impl Default for MaxModConfig {
    fn default() -> Self {
        Self {
            delta: 1e-5,
            delta_prime: 1e-4,
            epsilon: 5e-4,
            grid: 21,
            max_iter: 60,
            reestimate_period: 1,
            constraints: ConstraintSpec::default(),
            family: "matern52".into(),
            kernel: None,
            noise: None,
            search: HyperSearch::default(),
            center: true,
            min_gap: DEFAULT_MIN_GAP,
            solver: SolverPath::Auto,
        }
    }
}

impl MaxModConfig {
    fn estimates(&self) -> bool {
        self.kernel.is_none() || self.noise.is_none()
    }

    fn new_kernel(&self, y: &DVector<f64>) -> Result<Kernel1D> {
        match &self.kernel {
            Some(k) => Ok(k.clone()),
            None => default_kernel(&self.family, y),
        }
    }

    fn grid_points(&self) -> Vec<f64> {
        let g = self.grid.max(2);
        (0..g).map(|k| k as f64 / (g - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Activate { dim: usize },
    InsertKnot { dim: usize, t: f64 },
}

impl Action {
    pub fn dim(&self) -> usize {
        match *self {
            Action::Activate { dim } | Action::InsertKnot { dim, .. } => dim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaxModDecision {
    pub action: Action,
    /// Squared `L²` change of the mode.
    pub criterion: f64,
    pub reward: f64,
    pub score: f64,
    pub state: ModelState,
}

/// Best candidate of one input in a pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub action: Action,
    pub criterion: f64,
    pub reward: f64,
    pub score: f64,
}

/// One line of the decision trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub action: Action,
    pub criterion: f64,
    pub reward: f64,
    pub score: f64,
    /// False for the final decision that fell below `ε`.
    pub applied: bool,
    pub active: Vec<usize>,
    pub knots: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q2: Option<f64>,
    pub candidates: Vec<CandidateRecord>,
    pub delta: f64,
    pub delta_prime: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct MaxModRun {
    pub state: ModelState,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
    /// Set when the iteration cap was reached or a hyperparameter search failed.
    pub warning: bool,
}

struct Evaluated {
    action: Action,
    criterion: f64,
    reward: f64,
    state: ModelState,
}

impl Evaluated {
    fn score(&self) -> f64 {
        self.criterion + self.reward
    }
}

/// Rows of the stacked system that are tight at `reference`.
fn tight_rows(constraints: &StackedConstraints, reference: &[f64]) -> Vec<usize> {
    let scale = 1.0 + reference.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    constraints
        .slacks(reference)
        .iter()
        .enumerate()
        .filter(|(_, &s)| s.abs() <= 1e-10 * scale)
        .map(|(k, _)| k)
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn solve_candidate(
    ds: &Dataset,
    base: &ModelState,
    active: Vec<usize>,
    subdivisions: Vec<Subdivision>,
    kernels: Vec<Kernel1D>,
    reference: &[f64],
    path: SolverPath,
) -> Result<ModelState> {
    let post = posterior_for(
        ds,
        &active,
        &subdivisions,
        &kernels,
        &base.constraints,
        base.noise,
        base.intercept,
        path,
    )?;
    let hint = tight_rows(&post.stacked(), reference);
    let qp = mode_of(&post, &hint)?;
    Ok(ModelState {
        input_dim: base.input_dim,
        active,
        subdivisions,
        kernels,
        constraints: base.constraints.clone(),
        noise: post.noise,
        intercept: base.intercept,
        mode: qp.x.iter().copied().collect(),
        qp_active: qp.active,
    })
}

fn evaluate_activation(ds: &Dataset, state: &ModelState, dim: usize, cfg: &MaxModConfig) -> Result<Evaluated> {
    let pos = state.active.partition_point(|&a| a < dim);
    let mut active = state.active.clone();
    active.insert(pos, dim);
    let mut subdivisions = state.subdivisions.clone();
    subdivisions.insert(pos, Subdivision::base());
    let mut kernels = state.kernels.clone();
    kernels.insert(pos, cfg.new_kernel(&ds.y.add_scalar(-state.intercept))?);
    let old = state.mode_function();
    let mut reference = old.coeffs.clone();
    reference.insert(pos, vec![0.0, 0.0]);
    let new_state = solve_candidate(ds, state, active, subdivisions, kernels, &reference.concat(), cfg.solver)?;
    let mut new = new_state.mode_function().coeffs;
    let added = new.remove(pos);
    let criterion = criterion_new_variable(&old.coeffs, &new, [added[0], added[1]], &state.subdivisions)?;
    Ok(Evaluated {
        action: Action::Activate { dim },
        criterion,
        reward: cfg.delta_prime,
        state: new_state,
    })
}

fn evaluate_knot(ds: &Dataset, state: &ModelState, pos: usize, t: f64, cfg: &MaxModConfig) -> Result<Evaluated> {
    let s = &state.subdivisions[pos];
    let (refined, _) = s.insert(t, cfg.min_gap)?;
    let distance = s.distance(t);
    let mut subdivisions = state.subdivisions.clone();
    subdivisions[pos] = refined;
    let old = state.mode_function();
    let mut reference = old.coeffs.clone();
    reference[pos] = s.refine_coefficients(&old.coeffs[pos], t, cfg.min_gap)?;
    let new_state = solve_candidate(
        ds,
        state,
        state.active.clone(),
        subdivisions,
        state.kernels.clone(),
        &reference.concat(),
        cfg.solver,
    )?;
    let new = new_state.mode_function().coeffs;
    let criterion = criterion_new_knot(&old.coeffs, &new, &state.subdivisions, pos, t, cfg.min_gap)?;
    Ok(Evaluated {
        action: Action::InsertKnot {
            dim: state.active[pos],
            t,
        },
        criterion,
        reward: cfg.delta * distance,
        state: new_state,
    })
}

/// Larger score wins; ties go to the smaller input index, then the smaller knot.
fn better(a: &Evaluated, b: &Evaluated) -> bool {
    let key = |e: &Evaluated| match e.action {
        Action::Activate { dim } => (dim, f64::NEG_INFINITY),
        Action::InsertKnot { dim, t } => (dim, t),
    };
    match a.score().total_cmp(&b.score()) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => {
            let (ka, kb) = (key(a), key(b));
            ka.0 < kb.0 || (ka.0 == kb.0 && ka.1 < kb.1)
        }
    }
}

/// Evaluates every candidate decision from `state` and returns the best one
/// with the best candidate of each input.
pub fn maxmod_step(ds: &Dataset, state: &ModelState, cfg: &MaxModConfig) -> Result<(MaxModDecision, Vec<CandidateRecord>)> {
    let grid = cfg.grid_points();
    let mut jobs: Vec<(usize, Option<f64>)> = Vec::new();
    for dim in 0..state.input_dim {
        match state.active.iter().position(|&a| a == dim) {
            Some(pos) => {
                let s = &state.subdivisions[pos];
                jobs.extend(grid.iter().filter(|&&t| s.distance(t) > cfg.min_gap).map(|&t| (dim, Some(t))));
            }
            None => jobs.push((dim, None)),
        }
    }
    let results: Vec<Result<Evaluated>> = jobs
        .par_iter()
        .map(|&(dim, t)| match t {
            None => evaluate_activation(ds, state, dim, cfg),
            Some(t) => {
                let pos = state.active.iter().position(|&a| a == dim).expect("active input");
                evaluate_knot(ds, state, pos, t, cfg)
            }
        })
        .collect();

    let mut per_dim: Vec<Option<Evaluated>> = (0..state.input_dim).map(|_| None).collect();
    let mut last_err = None;
    for r in results {
        match r {
            Ok(e) => {
                let slot = &mut per_dim[e.action.dim()];
                if slot.as_ref().is_none_or(|cur| better(&e, cur)) {
                    *slot = Some(e);
                }
            }
            Err(e) => {
                log::warn!("maxmod candidate failed: {e}");
                last_err = Some(e);
            }
        }
    }
    let candidates: Vec<CandidateRecord> = per_dim
        .iter()
        .flatten()
        .map(|e| CandidateRecord {
            action: e.action,
            criterion: e.criterion,
            reward: e.reward,
            score: e.score(),
        })
        .collect();
    let best = per_dim
        .into_iter()
        .flatten()
        .reduce(|a, b| if better(&b, &a) { b } else { a });
    match best {
        Some(e) => Ok((
            MaxModDecision {
                action: e.action,
                criterion: e.criterion,
                reward: e.reward,
                score: e.score(),
                state: e.state,
            },
            candidates,
        )),
        None => Err(last_err.unwrap_or_else(|| Error::Unsupported("no candidate decisions".into()))),
    }
}

/// Re-estimates the hyperparameters of the active inputs and recomputes the mode.
fn reestimate(ds: &Dataset, state: &ModelState, cfg: &MaxModConfig) -> Result<(ModelState, bool)> {
    let yc = ds.y.add_scalar(-state.intercept);
    let templates = match &cfg.kernel {
        Some(k) => vec![k.clone(); state.active.len()],
        None => state.kernels.clone(),
    };
    let search = HyperSearch {
        fixed_noise: cfg.noise,
        ..cfg.search.clone()
    };
    let est = estimate_hyperparameters(&ds.x, &yc, &state.active, &state.subdivisions, &templates, &search)?;
    let kernels = match &cfg.kernel {
        Some(_) => templates,
        None => est.kernels,
    };
    let mut base = state.clone();
    base.noise = est.noise;
    let reference = state.mode.clone();
    let new = solve_candidate(ds, &base, state.active.clone(), state.subdivisions.clone(), kernels, &reference, cfg.solver)?;
    Ok((new, est.warning))
}

fn knots_of(state: &ModelState) -> Vec<usize> {
    state.subdivisions.iter().map(Subdivision::len).collect()
}

fn holdout_q2(state: &ModelState, holdout: Option<&Dataset>) -> Result<Option<f64>> {
    match holdout {
        None => Ok(None),
        Some(h) => {
            let pred = state.mode_function().eval_rows(&h.x)?;
            Ok(Some(q_squared(pred.as_slice(), h.y.as_slice())?))
        }
    }
}

/// Runs the full procedure on `ds`. When `holdout` is given, every trace
/// record carries the held-out Q² of the resulting mode; when `sink` is
/// given, records are written to it as JSON lines as they are produced.
pub fn maxmod_run(
    ds: &Dataset,
    cfg: &MaxModConfig,
    holdout: Option<&Dataset>,
    mut sink: Option<&mut dyn Write>,
) -> Result<MaxModRun> {
    ds.check_unit_cube()?;
    let d = ds.d();
    let constraints = cfg.constraints.expand(d)?;
    let intercept = intercept_for(&ds.y, &constraints, cfg.center);
    let yc = ds.y.add_scalar(-intercept);
    let mut warning = false;
    let mut trace = Vec::new();
    let mut emit = |rec: TraceRecord, trace: &mut Vec<TraceRecord>| -> Result<()> {
        if let Some(w) = sink.as_deref_mut() {
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        trace.push(rec);
        Ok(())
    };

    let start = Instant::now();
    let empty = ModelState {
        input_dim: d,
        active: vec![],
        subdivisions: vec![],
        kernels: vec![],
        constraints,
        noise: cfg.noise.unwrap_or_else(|| 1e-2 * crate::posterior::sample_variance(yc.as_slice()).max(1e-12)),
        intercept,
        mode: vec![],
        qp_active: vec![],
    };
    let first: Vec<Result<(Evaluated, bool)>> = (0..d)
        .into_par_iter()
        .map(|dim| {
            let mut cand = evaluate_activation(ds, &empty, dim, cfg)?;
            let mut failed = false;
            if cfg.estimates() {
                let (st, w) = reestimate(ds, &cand.state, cfg)?;
                failed = w;
                let added = &st.mode;
                cand.criterion = criterion_new_variable(&[], &[], [added[0], added[1]], &[])?;
                cand.state = st;
            }
            Ok((cand, failed))
        })
        .collect();
    let mut init: Option<Evaluated> = None;
    let mut candidates = Vec::new();
    for r in first {
        let (e, w) = r?;
        warning |= w;
        candidates.push(CandidateRecord {
            action: e.action,
            criterion: e.criterion,
            reward: e.reward,
            score: e.score(),
        });
        if init.as_ref().is_none_or(|cur| better(&e, cur)) {
            init = Some(e);
        }
    }
    let init = init.ok_or(Error::EmptyDataset)?;
    let mut state = init.state;
    emit(
        TraceRecord {
            iteration: 0,
            action: init.action,
            criterion: init.criterion,
            reward: init.reward,
            score: init.criterion + init.reward,
            applied: true,
            active: state.active.clone(),
            knots: knots_of(&state),
            q2: holdout_q2(&state, holdout)?,
            candidates,
            delta: cfg.delta,
            delta_prime: cfg.delta_prime,
            seconds: start.elapsed().as_secs_f64(),
        },
        &mut trace,
    )?;

    let mut converged = false;
    for iteration in 1..=cfg.max_iter {
        let t0 = Instant::now();
        if cfg.estimates() && cfg.reestimate_period > 0 && (iteration - 1) % cfg.reestimate_period == 0 {
            let (st, w) = reestimate(ds, &state, cfg)?;
            warning |= w;
            state = st;
        }
        let (decision, candidates) = maxmod_step(ds, &state, cfg)?;
        let applied = decision.criterion >= cfg.epsilon;
        if applied {
            state = decision.state;
        }
        emit(
            TraceRecord {
                iteration,
                action: decision.action,
                criterion: decision.criterion,
                reward: decision.reward,
                score: decision.score,
                applied,
                active: state.active.clone(),
                knots: knots_of(&state),
                q2: holdout_q2(&state, holdout)?,
                candidates,
                delta: cfg.delta,
                delta_prime: cfg.delta_prime,
                seconds: t0.elapsed().as_secs_f64(),
            },
            &mut trace,
        )?;
        if !applied {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("maxmod stopped at the iteration cap of {}", cfg.max_iter);
        warning = true;
    }
    Ok(MaxModRun {
        state,
        trace,
        converged,
        warning,
    })
}

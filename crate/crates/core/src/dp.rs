//! Backward induction over stages, scenarios and grid points, and the
//! dispatch policy induced by the fitted value functions.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ambiguity::{add_dual_epigraph, worst_case_expectation, AmbiguitySpec, DualBlock};
use crate::conic::{solve_conic_relaxing, ConicProblem, LinExpr, DEFAULT_TOL, RELAXED_TOL};
use crate::error::{Error, Result};
use crate::grid::{GridCase, NetworkIndex};
use crate::opf::{add_stage, add_stage_cost, extract_dispatch, solve_fixed_generation, StageDispatch, StageState};
use crate::sim::ScenarioSet;
use crate::value::{eval_quadratic, fit_quadratic_tagged, InterpolationGrid, QuadraticValue, ValueTable};

/// Bumped whenever the checkpoint layout changes.
const CHECKPOINT_VERSION: u32 = 1;

/// Optimum of one stage problem with the robust continuation embedded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDualSolution {
    pub dispatch: StageDispatch,
    /// `None` when the radius is zero and the continuation is `qᵀz`.
    pub dual: Option<DualBlock>,
    /// Continuation epigraphs `z_j`.
    pub z: Vec<f64>,
    /// Worst-case expected continuation cost.
    pub continuation: f64,
    /// Stage cost plus continuation: the sampled cost-to-go.
    pub objective: f64,
}

/// Continuation `f(x) = ‖F(x−c)‖² + 2gᵀ(x−c) + f(c)`, re-centered at the
/// middle `c` of the capacity box so that no large terms cancel inside the
/// cone constraint.
#[derive(Clone, Debug)]
struct Continuation {
    center: Vec<f64>,
    factor: Vec<Vec<f64>>,
    /// `B + Ac`.
    grad: Vec<f64>,
    at_center: f64,
    /// Size of `‖F(x−c)‖²` at the box corners, used to balance the cone.
    scale: f64,
}

impl Continuation {
    fn prepare(case: &GridCase, values: &[QuadraticValue]) -> Result<Vec<Continuation>> {
        let center: Vec<f64> = case.generators.iter().map(|g| 0.5 * (g.p_min + g.p_max)).collect();
        let half: Vec<f64> = case.generators.iter().map(|g| 0.5 * (g.p_max - g.p_min)).collect();
        values
            .iter()
            .map(|v| {
                let factor = v.factor()?;
                let grad = (0..v.dim())
                    .map(|i| v.b[i] + v.a[i].iter().zip(&center).map(|(a, c)| a * c).sum::<f64>())
                    .collect();
                let quad: f64 = factor
                    .iter()
                    .map(|row| row.iter().zip(&half).map(|(f, h)| (f * h).abs()).sum::<f64>().powi(2))
                    .sum();
                Ok(Continuation {
                    at_center: eval_quadratic(v, &center),
                    center: center.clone(),
                    factor,
                    grad,
                    scale: quad.max(1.0),
                })
            })
            .collect()
    }
}

/// Reusable per-case state for repeated stage solves.
struct StageSolver<'a> {
    case: &'a GridCase,
    net: NetworkIndex,
}

impl<'a> StageSolver<'a> {
    fn new(case: &'a GridCase) -> Result<Self> {
        Ok(StageSolver { case, net: case.index()? })
    }

    fn solve(&self, spec: &AmbiguitySpec, state: &StageState, next: &[Continuation]) -> Result<StageDualSolution> {
        if next.len() != spec.len() {
            return Err(Error::Dimension(format!(
                "{} continuation values for {} scenarios",
                next.len(),
                spec.len()
            )));
        }
        let mut problem = ConicProblem::new();
        let vars = add_stage(&mut problem, self.case, &self.net, state, "")?;
        add_stage_cost(&mut problem, self.case, &vars, 1.0);
        let dual = add_dual_epigraph(&mut problem, spec, "");

        for (j, cont) in next.iter().enumerate() {
            // z_j − 2gᵀ(x−c) − f(c) ≥ ‖F(x−c)‖²
            let mut slack = LinExpr::term(dual.z[j], 1.0);
            slack.constant -= cont.at_center;
            for i in 0..vars.x.len() {
                slack.add_term(vars.x[i], -2.0 * cont.grad[i]);
                slack.constant += 2.0 * cont.grad[i] * cont.center[i];
            }
            if cont.factor.is_empty() {
                problem.ge(slack, 0.0);
            } else {
                // y = F(x−c) as separate variables keeps the cone rows sparse.
                let y = problem.add_vars(&format!("y{j}"), cont.factor.len());
                let rows = cont
                    .factor
                    .iter()
                    .zip(&y)
                    .map(|(row, &yi)| {
                        let mut link = LinExpr::dot(&vars.x, row) * -1.0;
                        link.add_term(yi, 1.0);
                        link.constant = row.iter().zip(&cont.center).map(|(f, c)| f * c).sum::<f64>();
                        problem.eq(link, 0.0);
                        LinExpr::term(yi, 1.0)
                    })
                    .collect();
                problem.squared_norm_le_scaled(rows, slack, cont.scale);
            }
        }

        let point = solve_conic_relaxing(&problem, DEFAULT_TOL, RELAXED_TOL)?.into_optimal(|| format!("stage dual t={}", state.t))?;
        let dispatch = extract_dispatch(self.case, &self.net, state, &vars, &point)?;
        let z = point.values(&dual.z);
        let block = dual.block(&point);
        let continuation = match &block {
            Some(b) => b.objective(spec),
            None => spec.expectation(&z),
        };
        Ok(StageDualSolution {
            dispatch,
            dual: block,
            z,
            continuation,
            objective: point.objective,
        })
    }
}

/// Solves stage `t` from `x_prev` under renewable output `xi`, with the
/// worst-case expected continuation over `next_values` (one per scenario of
/// `spec`).
pub fn stage_dual_solve(
    case: &GridCase,
    spec: &AmbiguitySpec,
    t: usize,
    x_prev: &[f64],
    xi: &[f64],
    next_values: &[QuadraticValue],
) -> Result<StageDualSolution> {
    let solver = StageSolver::new(case)?;
    let next = Continuation::prepare(case, next_values)?;
    let state = StageState {
        t,
        x_prev: x_prev.to_vec(),
        xi: xi.to_vec(),
    };
    solver.solve(spec, &state, &next)
}

/// Fitted surrogates of one stage's cost-to-go, one per scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueLayer {
    /// 0-based stage whose cost-to-go this layer approximates.
    pub stage: usize,
    /// Reference probabilities of the scenarios the layer is indexed by.
    pub q: Vec<f64>,
    pub values: Vec<QuadraticValue>,
    /// Sampled cost-to-go on the grid; absent for the terminal layer.
    pub table: Option<ValueTable>,
    /// Largest absolute fit residual on the grid, per scenario.
    pub fit_max_residual: Vec<f64>,
}

impl ValueLayer {
    fn terminal(stage: usize, q: Vec<f64>, dim: usize) -> Self {
        ValueLayer {
            stage,
            values: (0..q.len()).map(|j| QuadraticValue::zero(dim, stage, j)).collect(),
            fit_max_residual: vec![0.0; q.len()],
            q,
            table: None,
        }
    }

    pub fn spec(&self, gamma: f64) -> Result<AmbiguitySpec> {
        AmbiguitySpec::new(self.q.clone(), gamma)
    }
}

/// Root of the recursion: the robust expectation, over the first stage's
/// scenarios, of the first-stage cost-to-go at the initial dispatch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootValue {
    pub value: f64,
    /// First-stage cost-to-go per scenario.
    pub per_scenario: Vec<f64>,
    /// Worst-case distribution over the first-stage scenarios.
    pub p_star: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueFunctions {
    pub gamma: f64,
    pub horizon: usize,
    /// Layers for stages `1..=horizon`; the last is identically zero.
    pub layers: Vec<ValueLayer>,
    pub root: RootValue,
}

impl ValueFunctions {
    /// Layer approximating the cost-to-go of 0-based stage `t ≥ 1`.
    pub fn layer(&self, t: usize) -> &ValueLayer {
        &self.layers[t - 1]
    }

    /// Worst fit residual over all layers.
    pub fn max_fit_residual(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.fit_max_residual.iter())
            .fold(0.0, |m, &r| m.max(r))
    }

    /// Smallest eigenvalue of any fitted `A`.
    pub fn min_eigenvalue(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.values.iter())
            .map(QuadraticValue::min_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, Default)]
pub struct BackwardOptions {
    /// Directory for per-stage checkpoints; layers already present with a
    /// matching fingerprint are loaded instead of recomputed.
    pub checkpoint_dir: Option<PathBuf>,
    /// Called with each stage index once its layer is available.
    pub progress: Option<fn(usize)>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    fingerprint: String,
    layer: ValueLayer,
}

/// Digest of everything a layer depends on.
fn fingerprint(case: &GridCase, scenarios: &ScenarioSet, gamma: f64, grid: &InterpolationGrid) -> Result<String> {
    let mut h = Sha256::new();
    h.update(CHECKPOINT_VERSION.to_le_bytes());
    h.update(serde_json::to_vec(case)?);
    h.update(serde_json::to_vec(scenarios)?);
    h.update(gamma.to_le_bytes());
    h.update(serde_json::to_vec(grid)?);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn checkpoint_path(dir: &Path, stage: usize) -> PathBuf {
    dir.join(format!("stage_{stage:02}.json"))
}

fn load_checkpoint(dir: &Path, stage: usize, fingerprint: &str) -> Result<Option<ValueLayer>> {
    let path = checkpoint_path(dir, stage);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let cp: Checkpoint = serde_json::from_str(&text)?;
    // A stale checkpoint from another configuration is recomputed.
    if cp.version != CHECKPOINT_VERSION || cp.fingerprint != fingerprint || cp.layer.stage != stage {
        return Ok(None);
    }
    Ok(Some(cp.layer))
}

fn store_checkpoint(dir: &Path, fingerprint: &str, layer: &ValueLayer) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cp = Checkpoint {
        version: CHECKPOINT_VERSION,
        fingerprint: fingerprint.to_string(),
        layer: layer.clone(),
    };
    let path = checkpoint_path(dir, layer.stage);
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(&cp)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

fn check_inputs(case: &GridCase, scenarios: &ScenarioSet, grid: &InterpolationGrid) -> Result<()> {
    if scenarios.horizon() != case.horizon {
        return Err(Error::Dimension(format!(
            "scenario set covers {} stages, case has {}",
            scenarios.horizon(),
            case.horizon
        )));
    }
    if grid.dim() != case.num_generators() {
        return Err(Error::Dimension(format!(
            "grid dimension {} for {} generators",
            grid.dim(),
            case.num_generators()
        )));
    }
    Ok(())
}

pub fn backward_induction(
    case: &GridCase,
    scenarios: &ScenarioSet,
    gamma: f64,
    grid: &InterpolationGrid,
) -> Result<ValueFunctions> {
    backward_induction_with(case, scenarios, gamma, grid, &BackwardOptions::default())
}

/// Fits the cost-to-go of every stage from the last backwards, then
/// evaluates the root at the initial dispatch.
pub fn backward_induction_with(
    case: &GridCase,
    scenarios: &ScenarioSet,
    gamma: f64,
    grid: &InterpolationGrid,
    options: &BackwardOptions,
) -> Result<ValueFunctions> {
    check_inputs(case, scenarios, grid)?;
    let horizon = case.horizon;
    let dim = case.num_generators();
    let solver = StageSolver::new(case)?;
    let fp = match &options.checkpoint_dir {
        Some(_) => fingerprint(case, scenarios, gamma, grid)?,
        None => String::new(),
    };

    let mut layers: Vec<ValueLayer> = Vec::with_capacity(horizon);
    layers.push(ValueLayer::terminal(
        horizon,
        scenarios.stage(horizon - 1).q.clone(),
        dim,
    ));
    if let Some(report) = options.progress {
        report(horizon);
    }

    for t in (1..horizon).rev() {
        let cached = match &options.checkpoint_dir {
            Some(dir) => load_checkpoint(dir, t, &fp)?,
            None => None,
        };
        let layer = match cached {
            Some(layer) => layer,
            None => {
                let next = layers.last().expect("terminal layer present");
                let layer = fit_layer(&solver, scenarios, gamma, grid, t, next)?;
                if let Some(dir) = &options.checkpoint_dir {
                    store_checkpoint(dir, &fp, &layer)?;
                }
                layer
            }
        };
        layers.push(layer);
        if let Some(report) = options.progress {
            report(t);
        }
    }
    layers.reverse();

    let first = layers.first().expect("at least the terminal layer");
    let root = root_value(&solver, scenarios, gamma, case.initial_state(), first)?;
    if let Some(report) = options.progress {
        report(0);
    }
    Ok(ValueFunctions {
        gamma,
        horizon,
        layers,
        root,
    })
}

/// Samples stage `t` on every (scenario, grid point) pair and fits one
/// quadratic per scenario.
fn fit_layer(
    solver: &StageSolver<'_>,
    scenarios: &ScenarioSet,
    gamma: f64,
    grid: &InterpolationGrid,
    t: usize,
    next: &ValueLayer,
) -> Result<ValueLayer> {
    let spec = next.spec(gamma)?;
    let cont = Continuation::prepare(solver.case, &next.values)?;
    let stage = scenarios.stage(t);
    let m = stage.len();
    let k_count = grid.len();

    let flat: Vec<f64> = (0..m * k_count)
        .into_par_iter()
        .map(|idx| {
            let (j, k) = (idx / k_count, idx % k_count);
            let state = StageState {
                t,
                x_prev: grid.points()[k].clone(),
                xi: stage.xi[j].clone(),
            };
            solver
                .solve(&spec, &state, &cont)
                .map(|s| s.objective)
                .map_err(|e| Error::Stage {
                    t,
                    j,
                    k,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let values: Vec<Vec<f64>> = flat.chunks(k_count).map(<[f64]>::to_vec).collect();

    let fits = values
        .par_iter()
        .enumerate()
        .map(|(j, targets)| fit_quadratic_tagged(grid, targets, t, j))
        .collect::<Result<Vec<_>>>()?;
    Ok(ValueLayer {
        stage: t,
        q: stage.q.clone(),
        fit_max_residual: fits.iter().map(|f| f.max_abs_residual).collect(),
        values: fits.into_iter().map(|f| f.value).collect(),
        table: Some(ValueTable { stage: t, values }),
    })
}

fn root_value(
    solver: &StageSolver<'_>,
    scenarios: &ScenarioSet,
    gamma: f64,
    x0: Vec<f64>,
    next: &ValueLayer,
) -> Result<RootValue> {
    let spec = next.spec(gamma)?;
    let cont = Continuation::prepare(solver.case, &next.values)?;
    let stage = scenarios.stage(0);
    let per_scenario = (0..stage.len())
        .into_par_iter()
        .map(|j| {
            let state = StageState {
                t: 0,
                x_prev: x0.clone(),
                xi: stage.xi[j].clone(),
            };
            solver.solve(&spec, &state, &cont).map(|s| s.objective).map_err(|e| Error::Stage {
                t: 0,
                j,
                k: 0,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let root_spec = AmbiguitySpec::new(stage.q.clone(), gamma)?;
    let wc = worst_case_expectation(&per_scenario, &root_spec)?;
    Ok(RootValue {
        value: wc.value,
        per_scenario,
        p_star: wc.p_star,
    })
}

/// Realized outcome of running a dispatch rule along one renewable path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    /// Fuel plus penalty cost per stage.
    pub stage_costs: Vec<f64>,
    pub total: f64,
    pub dispatch: Vec<StageDispatch>,
}

impl Rollout {
    fn from_dispatch(dispatch: Vec<StageDispatch>) -> Self {
        let stage_costs: Vec<f64> = dispatch.iter().map(|d| d.cost).collect();
        Rollout {
            total: stage_costs.iter().sum(),
            stage_costs,
            dispatch,
        }
    }
}

fn check_path(case: &GridCase, xi_path: &[Vec<f64>]) -> Result<()> {
    if xi_path.len() != case.horizon {
        return Err(Error::Dimension(format!(
            "renewable path has {} stages, case has {}",
            xi_path.len(),
            case.horizon
        )));
    }
    Ok(())
}

/// State-feedback dispatch rule induced by fitted value functions.
pub struct Policy<'a> {
    solver: StageSolver<'a>,
    values: &'a ValueFunctions,
    /// Prepared continuation and ambiguity set per stage `0..horizon`.
    stages: Vec<(AmbiguitySpec, Vec<Continuation>)>,
}

impl<'a> Policy<'a> {
    pub fn new(case: &'a GridCase, values: &'a ValueFunctions) -> Result<Self> {
        if values.horizon != case.horizon || values.layers.len() != case.horizon {
            return Err(Error::Dimension("value functions do not match the case horizon".into()));
        }
        let stages = values
            .layers
            .iter()
            .map(|layer| Ok((layer.spec(values.gamma)?, Continuation::prepare(case, &layer.values)?)))
            .collect::<Result<_>>()?;
        Ok(Policy {
            solver: StageSolver::new(case)?,
            values,
            stages,
        })
    }

    pub fn case(&self) -> &GridCase {
        self.solver.case
    }

    pub fn values(&self) -> &ValueFunctions {
        self.values
    }

    /// Dispatch of stage `t` given the previous dispatch and realized `xi`.
    pub fn decide(&self, t: usize, x_prev: &[f64], xi: &[f64]) -> Result<StageDualSolution> {
        let (spec, cont) = self
            .stages
            .get(t)
            .ok_or_else(|| Error::Dimension(format!("stage {t} outside horizon")))?;
        let state = StageState {
            t,
            x_prev: x_prev.to_vec(),
            xi: xi.to_vec(),
        };
        self.solver.solve(spec, &state, cont)
    }

    /// Applies the policy along `xi_path` (`[stage][bus]`), accumulating
    /// realized fuel and penalty costs only.
    pub fn rollout(&self, xi_path: &[Vec<f64>]) -> Result<Rollout> {
        check_path(self.case(), xi_path)?;
        let mut x_prev = self.case().initial_state();
        let mut dispatch = Vec::with_capacity(xi_path.len());
        for (t, xi) in xi_path.iter().enumerate() {
            let d = self.decide(t, &x_prev, xi)?.dispatch;
            x_prev = d.x.clone();
            dispatch.push(d);
        }
        Ok(Rollout::from_dispatch(dispatch))
    }
}

/// Generation schedule fixed in advance for every stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopSchedule {
    pub x: Vec<Vec<f64>>,
}

/// Freezes the generation the policy chooses along `nominal_path`.
pub fn open_loop_schedule(policy: &Policy<'_>, nominal_path: &[Vec<f64>]) -> Result<OpenLoopSchedule> {
    let r = policy.rollout(nominal_path)?;
    Ok(OpenLoopSchedule {
        x: r.dispatch.into_iter().map(|d| d.x).collect(),
    })
}

/// Runs a frozen generation schedule along `xi_path`; only flows, angles,
/// shedding and curtailment adapt to the realized output.
pub fn rollout_open_loop(case: &GridCase, schedule: &OpenLoopSchedule, xi_path: &[Vec<f64>]) -> Result<Rollout> {
    check_path(case, xi_path)?;
    if schedule.x.len() != case.horizon {
        return Err(Error::Dimension("schedule length differs from the horizon".into()));
    }
    let mut x_prev = case.initial_state();
    let mut dispatch = Vec::with_capacity(xi_path.len());
    for (t, xi) in xi_path.iter().enumerate() {
        let state = StageState {
            t,
            x_prev,
            xi: xi.clone(),
        };
        let d = solve_fixed_generation(case, &state, &schedule.x[t])?;
        x_prev = d.x.clone();
        dispatch.push(d);
    }
    Ok(Rollout::from_dispatch(dispatch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_case;
    use crate::opf::solve_single_stage;
    use crate::sim::{ScenarioSet, StageScenarios};
    use crate::value::{make_grid, DEFAULT_GRID_CAP};

    fn two_bus(horizon: usize) -> GridCase {
        let demand = vec!["30"; horizon].join(", ");
        let wind = vec!["5"; horizon].join(", ");
        parse_case(&format!(
            "[meta]\nhorizon = {horizon}\nreference_bus = a\n\
             [buses]\na, -1, 1, 1500, 1500, {demand}\nb, -1, 1, 1500, 1500, {demand}\n\
             [generators]\ng1, a, 0, 60, 20, 20, 0.01, 10, 0\ng2, b, 0, 40, 40, 40, 0.02, 25, 0\n\
             [lines]\na, b, 0.1, 15\n\
             [renewables]\nb, 2, {wind}\n"
        ))
        .unwrap()
    }

    fn scenarios(case: &GridCase, winds: &[f64], q: &[f64]) -> ScenarioSet {
        let stages = (0..case.horizon)
            .map(|_| StageScenarios {
                xi: winds.iter().map(|&w| vec![0.0, w]).collect(),
                q: q.to_vec(),
                bin_edges: Vec::new(),
            })
            .collect();
        ScenarioSet::new(stages).unwrap()
    }

    #[test]
    fn zero_continuation_matches_single_stage() {
        let case = two_bus(1);
        let spec = AmbiguitySpec::new(vec![0.5, 0.5], 2.0).unwrap();
        let zero = vec![QuadraticValue::zero(2, 1, 0), QuadraticValue::zero(2, 1, 1)];
        let sol = stage_dual_solve(&case, &spec, 0, &[10.0, 10.0], &[0.0, 4.0], &zero).unwrap();
        let state = StageState {
            t: 0,
            x_prev: vec![10.0, 10.0],
            xi: vec![0.0, 4.0],
        };
        let myopic = solve_single_stage(&case, &state).unwrap();
        assert!((sol.objective - myopic.cost).abs() <= 1e-6 * myopic.cost);
        assert!(sol.continuation.abs() < 1e-4);
    }

    #[test]
    fn single_scenario_adds_the_continuation() {
        let case = two_bus(2);
        let spec = AmbiguitySpec::new(vec![1.0], 5.0).unwrap();
        let mut v = QuadraticValue::zero(2, 1, 0);
        v.a = vec![vec![0.5, 0.0], vec![0.0, 0.5]];
        v.b = vec![-10.0, 0.0];
        v.c = 400.0;
        let sol = stage_dual_solve(&case, &spec, 0, &[0.0, 0.0], &[0.0, 5.0], &[v.clone()]).unwrap();
        let expected = sol.dispatch.cost + eval_quadratic(&v, &sol.dispatch.x);
        assert!((sol.objective - expected).abs() <= 1e-5 * expected, "{} vs {expected}", sol.objective);
    }

    #[test]
    fn objective_decomposes_into_stage_cost_and_dual_block() {
        let case = two_bus(2);
        let spec = AmbiguitySpec::new(vec![0.3, 0.7], 1.0).unwrap();
        let mut lo = QuadraticValue::zero(2, 1, 0);
        lo.c = 100.0;
        let mut hi = QuadraticValue::zero(2, 1, 1);
        hi.b = vec![1.0, 1.0];
        hi.c = 200.0;
        let sol = stage_dual_solve(&case, &spec, 0, &[0.0, 0.0], &[0.0, 5.0], &[lo, hi]).unwrap();
        let block = sol.dual.clone().unwrap();
        let total = sol.dispatch.cost + block.objective(&spec);
        assert!((sol.objective - total).abs() <= 1e-6 * sol.objective.abs());
        assert!(block.max_violation() < 1e-6);
    }

    #[test]
    fn single_stage_root_is_myopic() {
        let case = two_bus(1);
        let set = scenarios(&case, &[5.0], &[1.0]);
        let grid = make_grid(&case, 2, DEFAULT_GRID_CAP).unwrap();
        let vf = backward_induction(&case, &set, 3.0, &grid).unwrap();
        assert_eq!(vf.layers.len(), 1);
        let myopic = solve_single_stage(
            &case,
            &StageState {
                t: 0,
                x_prev: vec![0.0, 0.0],
                xi: vec![0.0, 5.0],
            },
        )
        .unwrap();
        assert!((vf.root.value - myopic.cost).abs() <= 1e-6 * myopic.cost);
    }

    #[test]
    fn ambiguity_raises_the_root_value() {
        let case = two_bus(3);
        let set = scenarios(&case, &[0.0, 10.0], &[0.5, 0.5]);
        let grid = make_grid(&case, 2, DEFAULT_GRID_CAP).unwrap();
        let v0 = backward_induction(&case, &set, 0.0, &grid).unwrap().root.value;
        let v5 = backward_induction(&case, &set, 5.0, &grid).unwrap().root.value;
        assert!(v5 >= v0 - 1e-6 * v0, "{v5} < {v0}");
    }

    #[test]
    fn checkpoints_resume_to_identical_values() {
        let case = two_bus(3);
        let set = scenarios(&case, &[0.0, 10.0], &[0.5, 0.5]);
        let grid = make_grid(&case, 2, DEFAULT_GRID_CAP).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let opts = BackwardOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            progress: None,
        };
        let first = backward_induction_with(&case, &set, 1.0, &grid, &opts).unwrap();
        assert!(dir.path().join("stage_01.json").exists());
        assert!(dir.path().join("stage_02.json").exists());
        let second = backward_induction_with(&case, &set, 1.0, &grid, &opts).unwrap();
        assert_eq!(first, second);
        // A different radius must not reuse the stored layers.
        let other = backward_induction_with(&case, &set, 0.0, &grid, &opts).unwrap();
        assert_ne!(other.layers[0], first.layers[0]);
    }

    #[test]
    fn rollout_is_deterministic_and_realized() {
        let case = two_bus(3);
        let set = scenarios(&case, &[0.0, 10.0], &[0.5, 0.5]);
        let grid = make_grid(&case, 2, DEFAULT_GRID_CAP).unwrap();
        let vf = backward_induction(&case, &set, 1.0, &grid).unwrap();
        let policy = Policy::new(&case, &vf).unwrap();
        let path = vec![vec![0.0, 3.0], vec![0.0, 8.0], vec![0.0, 1.0]];
        let a = policy.rollout(&path).unwrap();
        let b = policy.rollout(&path).unwrap();
        assert_eq!(a, b);
        let sum: f64 = a.dispatch.iter().map(|d| d.cost).sum();
        assert_eq!(a.total, sum);
        assert!(a.total > 0.0);
    }

    #[test]
    fn open_loop_follows_the_schedule() {
        let case = two_bus(3);
        let set = scenarios(&case, &[0.0, 10.0], &[0.5, 0.5]);
        let grid = make_grid(&case, 2, DEFAULT_GRID_CAP).unwrap();
        let vf = backward_induction(&case, &set, 0.0, &grid).unwrap();
        let policy = Policy::new(&case, &vf).unwrap();
        let nominal = set.nominal_path();
        let schedule = open_loop_schedule(&policy, &nominal).unwrap();
        let r = rollout_open_loop(&case, &schedule, &nominal).unwrap();
        for (d, x) in r.dispatch.iter().zip(&schedule.x) {
            for (a, b) in d.x.iter().zip(x) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        let closed = policy.rollout(&nominal).unwrap();
        assert!((closed.total - r.total).abs() <= 1e-5 * closed.total);
    }

    #[test]
    fn wrong_path_length_is_rejected() {
        let case = two_bus(2);
        let set = scenarios(&case, &[5.0], &[1.0]);
        let grid = make_grid(&case, 1, DEFAULT_GRID_CAP).unwrap();
        let vf = backward_induction(&case, &set, 0.0, &grid).unwrap();
        let policy = Policy::new(&case, &vf).unwrap();
        assert!(matches!(policy.rollout(&[vec![0.0, 0.0]]), Err(Error::Dimension(_))));
    }
}

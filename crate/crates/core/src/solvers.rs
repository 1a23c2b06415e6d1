//! Alternating-minimization solvers for the five splitting forms.
//!
//! One iteration is a full cycle over every block, layer group by layer group
//! (backward from layer `N` unless `forward_order` is set). Blocks whose
//! objective is quadratic are minimized in closed form; blocks that sit inside
//! an activation take a proximal-linearized step with backtracking on the
//! proximal coefficient. The Lagrangian solver finishes each cycle with dual
//! ascent and an anchor reset; the box-relaxed solver projects its `u` blocks
//! back into their boxes.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ActivationKind, DataSet, LossKind, NetworkSpec, RegularizerKind};
use crate::numerics::{gaussian_fill, solve_spd, Matrix, RandomSource};
use crate::objectives::{BlockId, Hyperparams, ParamState, Problem, SplitForm};

/// Doublings of the proximal coefficient before an update is declared failed.
const MAX_BACKTRACKS: usize = 60;
/// Floor for a warm-started proximal coefficient.
const MIN_ALPHA: f64 = 1e-8;
/// Monotone sweeps the box-relaxed solver may spend on one iteration.
const MAX_SAFEGUARD_SWEEPS: usize = 20;
/// Cycles with `|f_k − f_{k−1}| < STALL_TOL` before stopping.
pub const STALL_CYCLES: usize = 50;
pub const STALL_TOL: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Bcd2,
    Bcd3,
    Bcd3Resnet,
    Admm,
    Mdlam,
}

impl SolverKind {
    pub const ALL: [SolverKind; 5] = [
        SolverKind::Bcd2,
        SolverKind::Bcd3,
        SolverKind::Bcd3Resnet,
        SolverKind::Admm,
        SolverKind::Mdlam,
    ];

    pub fn form(self) -> SplitForm {
        match self {
            SolverKind::Bcd2 => SplitForm::TwoSplitFnn,
            SolverKind::Bcd3 => SplitForm::ThreeSplitFnn,
            SolverKind::Bcd3Resnet => SplitForm::ThreeSplitResnet,
            SolverKind::Admm => SplitForm::AdmmLagrangian,
            SolverKind::Mdlam => SplitForm::Mdlam,
        }
    }

    /// Step count `j` of the sufficient-decrease condition the family is
    /// expected to satisfy.
    pub fn nominal_j(self) -> usize {
        match self {
            SolverKind::Mdlam => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Bcd2 => "bcd2",
            SolverKind::Bcd3 => "bcd3",
            SolverKind::Bcd3Resnet => "bcd3_resnet",
            SolverKind::Admm => "admm",
            SolverKind::Mdlam => "mdlam",
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Initial proximal coefficient α of every linearized update.
    pub prox_alpha: f64,
    /// α is divided by this factor on each rejected trial step.
    pub backtrack_factor: f64,
    pub stop_dist_tol: f64,
    pub record_block_diffs: bool,
    /// Sweep layers `1..=N` instead of `N..=1`.
    pub forward_order: bool,
    /// Weight δ of the proximal term `δ/2‖B − B^k‖²` added to closed-form
    /// block minimizations.
    pub closed_form_damping: f64,
    /// Record wall-clock time per cycle. Off by default so traces stay
    /// byte-identical across runs.
    pub record_timing: bool,
    /// Proximal-linearized steps taken on a block per visit.
    pub inner_steps: usize,
    /// Start each linearized step from the block's last accepted α,
    /// relaxed by one backtrack factor, instead of from `prox_alpha`.
    pub adaptive_alpha: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            prox_alpha: 1.0,
            backtrack_factor: 0.5,
            stop_dist_tol: 1e-8,
            record_block_diffs: true,
            forward_order: false,
            closed_form_damping: 1e-6,
            record_timing: false,
            inner_steps: 1,
            adaptive_alpha: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::config("max_iter", "must be positive"));
        }
        if !(self.prox_alpha > 0.0 && self.prox_alpha.is_finite()) {
            return Err(Error::config("prox_alpha", "must be finite and > 0"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::config("backtrack_factor", "must lie in (0, 1)"));
        }
        if !(self.stop_dist_tol >= 0.0) {
            return Err(Error::config("stop_dist_tol", "must be >= 0"));
        }
        if self.inner_steps == 0 {
            return Err(Error::config("inner_steps", "must be positive"));
        }
        if !(self.closed_form_damping >= 0.0 && self.closed_form_damping.is_finite()) {
            return Err(Error::config(
                "closed_form_damping",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub options: SolverOptions,
}

impl SolverConfig {
    pub fn new(kind: SolverKind) -> Self {
        Self {
            kind,
            options: SolverOptions::default(),
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.options.max_iter = max_iter;
        self
    }

    pub fn with_stop_dist_tol(mut self, tol: f64) -> Self {
        self.options.stop_dist_tol = tol;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub f: f64,
    pub dist: f64,
    #[serde(default)]
    pub block_diffs: BTreeMap<String, f64>,
    #[serde(default)]
    pub wall_nanos: u64,
}

/// Run metadata stored in the trace header line.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceMeta {
    /// `solver` or `toy`.
    pub source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_analytic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fstar: Option<f64>,
}

/// Sequence of per-cycle records, `k` strictly increasing from 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterTrace {
    pub meta: TraceMeta,
    pub records: Vec<TraceRecord>,
}

impl IterTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn f_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f).collect()
    }

    pub fn dists(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.dist).collect()
    }

    /// `f_k − fstar` for every record.
    pub fn gaps(&self, fstar: f64) -> Vec<f64> {
        self.records.iter().map(|r| r.f - fstar).collect()
    }

    pub fn min_f(&self) -> Option<f64> {
        self.records.iter().map(|r| r.f).reduce(f64::min)
    }

    /// Names of every block that has a recorded difference.
    pub fn block_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .records
            .iter()
            .flat_map(|r| r.block_diffs.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    }

    /// Differences of one block over `k = 1, 2, …`.
    pub fn block_diff_series(&self, name: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| r.block_diffs.get(name).copied())
            .collect()
    }

    /// Builds a trace from bare `(f, dist)` sequences.
    pub fn from_values(f: &[f64], dist: &[f64]) -> Self {
        assert_eq!(f.len(), dist.len());
        IterTrace {
            meta: TraceMeta::default(),
            records: f
                .iter()
                .zip(dist)
                .enumerate()
                .map(|(k, (&f, &dist))| TraceRecord {
                    k,
                    f,
                    dist,
                    block_diffs: BTreeMap::new(),
                    wall_nanos: 0,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIter,
    DistTol,
    Stall,
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub state: ParamState,
    pub trace: IterTrace,
    pub termination: Termination,
}

/// Gaussian weights (scale `init_scale`) with auxiliary blocks filled by a
/// forward pass.
pub fn default_init(
    form: SplitForm,
    spec: &NetworkSpec,
    data: &DataSet,
    rng: &mut RandomSource,
    init_scale: f64,
) -> Result<ParamState> {
    let weights = (1..=spec.depth())
        .map(|i| gaussian_fill(rng, spec.dim(i), spec.dim(i - 1), init_scale))
        .collect();
    ParamState::from_forward(form, spec, data, weights)
}

pub fn run(
    kind: SolverKind,
    spec: &NetworkSpec,
    data: &DataSet,
    hyper: &Hyperparams,
    config: &SolverConfig,
    init_state: ParamState,
    rng: &mut RandomSource,
) -> Result<SolverResult> {
    run_with_sink(
        kind,
        spec,
        data,
        hyper,
        config,
        init_state,
        rng,
        &mut |_| Ok(()),
    )
}

/// Like [`run`], handing each record to `sink` as soon as it is produced.
#[allow(clippy::too_many_arguments)]
pub fn run_with_sink(
    kind: SolverKind,
    spec: &NetworkSpec,
    data: &DataSet,
    hyper: &Hyperparams,
    config: &SolverConfig,
    init_state: ParamState,
    rng: &mut RandomSource,
    sink: &mut dyn FnMut(&TraceRecord) -> Result<()>,
) -> Result<SolverResult> {
    if config.kind != kind {
        return Err(Error::config(
            "solver",
            format!("config is for {}, asked to run {kind}", config.kind),
        ));
    }
    config.options.validate()?;
    let problem = Problem::new(kind.form(), spec, data, hyper)?;
    problem.check_state(&init_state)?;
    let meta = TraceMeta {
        source: "solver".into(),
        solver: Some(kind.name().into()),
        form: Some(kind.form().name().into()),
        seed: Some(rng.seed()),
        ..TraceMeta::default()
    };
    let mut solver = Solver {
        problem,
        opts: &config.options,
        kind,
        state: init_state,
        alphas: BTreeMap::new(),
        literal_u: true,
    };
    solver.run(meta, sink)
}

struct Solver<'a> {
    problem: Problem<'a>,
    opts: &'a SolverOptions,
    kind: SolverKind,
    state: ParamState,
    alphas: BTreeMap<BlockId, f64>,
    literal_u: bool,
}

/// Internal failure inside a cycle; becomes a divergence error with the
/// partial trace attached.
struct StepFailure(String);

impl From<Error> for StepFailure {
    fn from(e: Error) -> Self {
        StepFailure(e.to_string())
    }
}

impl<'a> Solver<'a> {
    fn run(
        &mut self,
        meta: TraceMeta,
        sink: &mut dyn FnMut(&TraceRecord) -> Result<()>,
    ) -> Result<SolverResult> {
        let mut trace = IterTrace {
            meta,
            records: Vec::new(),
        };
        let blocks = self.problem.blocks();
        let mut still = 0usize;
        let mut before: Option<ParamState> = None;
        let mut started = Instant::now();
        let mut k = 0usize;
        loop {
            let record = match self.measure(k, started, before.as_ref(), &blocks) {
                Ok(r) => r,
                Err(StepFailure(reason)) => {
                    return Err(Error::Divergence {
                        reason,
                        trace: Box::new(trace),
                    })
                }
            };
            match trace.records.last() {
                Some(prev) if (record.f - prev.f).abs() < STALL_TOL => still += 1,
                _ => still = 0,
            }
            sink(&record)?;
            let dist = record.dist;
            trace.records.push(record);

            let termination = if dist <= self.opts.stop_dist_tol {
                Some(Termination::DistTol)
            } else if still >= STALL_CYCLES {
                Some(Termination::Stall)
            } else if k >= self.opts.max_iter {
                Some(Termination::MaxIter)
            } else {
                None
            };
            if let Some(termination) = termination {
                return Ok(SolverResult {
                    state: self.state.clone(),
                    trace,
                    termination,
                });
            }

            k += 1;
            started = Instant::now();
            before = self.opts.record_block_diffs.then(|| self.state.clone());
            let n_rec = trace.records.len();
            let reference = trace.records[n_rec.saturating_sub(2)].f;
            match self.cycle(reference) {
                Ok(true) => {}
                Ok(false) => {
                    return Ok(SolverResult {
                        state: self.state.clone(),
                        trace,
                        termination: Termination::Stall,
                    })
                }
                Err(StepFailure(reason)) => {
                    return Err(Error::Divergence {
                        reason: format!("cycle {k}: {reason}"),
                        trace: Box::new(trace),
                    })
                }
            }
        }
    }

    fn measure(
        &self,
        k: usize,
        started: Instant,
        before: Option<&ParamState>,
        blocks: &[BlockId],
    ) -> std::result::Result<TraceRecord, StepFailure> {
        let f = self.problem.eval(&self.state)?;
        let dist = self.problem.subgrad_dist(&self.state)?;
        if !f.is_finite() || !dist.is_finite() {
            return Err(StepFailure(format!("non-finite objective at k = {k}")));
        }
        let mut block_diffs = BTreeMap::new();
        if let Some(before) = before {
            for &id in blocks {
                if let (Some(a), Some(b)) = (self.state.get(id), before.get(id)) {
                    block_diffs.insert(id.to_string(), (a - b).frob_norm());
                }
            }
        }
        let wall_nanos = if self.opts.record_timing && k > 0 {
            started.elapsed().as_nanos() as u64
        } else {
            0
        };
        Ok(TraceRecord {
            k,
            f,
            dist,
            block_diffs,
            wall_nanos,
        })
    }

    /// Blocks of layer `i` in update order.
    fn group(&self, i: usize) -> Vec<BlockId> {
        let n = self.problem.depth();
        match self.kind {
            SolverKind::Bcd2 => vec![BlockId::V(i), BlockId::W(i)],
            SolverKind::Admm => vec![BlockId::W(i), BlockId::V(i)],
            SolverKind::Bcd3 | SolverKind::Bcd3Resnet => {
                vec![BlockId::V(i), BlockId::U(i), BlockId::W(i)]
            }
            SolverKind::Mdlam if i < n => vec![BlockId::U(i), BlockId::V(i), BlockId::W(i)],
            SolverKind::Mdlam => vec![BlockId::V(i), BlockId::W(i)],
        }
    }

    /// One recorded iteration. The box-relaxed solver first tries a sweep
    /// with projected closed-form `u` steps and keeps it if f ends below
    /// `reference`; otherwise it restarts from the same state with
    /// projected-gradient `u` steps, which never raise f, until it does.
    /// Returns false, with the state unchanged, when that fails.
    fn cycle(&mut self, reference: f64) -> std::result::Result<bool, StepFailure> {
        if self.kind != SolverKind::Mdlam {
            self.sweep()?;
            return Ok(true);
        }
        let start = self.state.clone();
        self.literal_u = true;
        self.sweep()?;
        if self.problem.eval(&self.state)? < reference {
            return Ok(true);
        }
        self.state = start.clone();
        self.literal_u = false;
        for _ in 0..MAX_SAFEGUARD_SWEEPS {
            self.sweep()?;
            if self.problem.eval(&self.state)? < reference {
                return Ok(true);
            }
        }
        self.state = start;
        Ok(false)
    }

    fn sweep(&mut self) -> std::result::Result<(), StepFailure> {
        let n = self.problem.depth();
        let forward = self.opts.forward_order != (self.kind == SolverKind::Admm);
        let layers: Vec<usize> = if forward {
            (1..=n).collect()
        } else {
            (1..=n).rev().collect()
        };
        for i in layers {
            for id in self.group(i) {
                self.update(id)?;
            }
        }
        if self.kind == SolverKind::Admm {
            for i in 1..=n {
                let c = self
                    .problem
                    .grad_unchecked(&self.state, BlockId::Lambda(i))?;
                let beta = self.problem.hyper.beta(i);
                self.state.lambda[i - 1].axpy(beta, &c);
                self.state.vbar[i - 1] = self.state.v[i - 1].clone();
            }
        }
        Ok(())
    }

    fn update(&mut self, id: BlockId) -> std::result::Result<(), StepFailure> {
        if let Some(next) = self.closed_form(id)? {
            if !next.is_finite() {
                return Err(StepFailure(format!(
                    "non-finite closed-form update of {id}"
                )));
            }
            *self.state.get_mut(id).expect("block exists") = next;
            if let (SolverKind::Mdlam, BlockId::V(i)) = (self.kind, id) {
                if i < self.problem.depth() {
                    self.project_u(i);
                }
            }
            return Ok(());
        }
        if let (SolverKind::Mdlam, BlockId::U(i)) = (self.kind, id) {
            if self.literal_u {
                return self.mdlam_u_step(i);
            }
        }
        for _ in 0..self.opts.inner_steps {
            if !self.linearized_step(id)? {
                break;
            }
        }
        Ok(())
    }

    fn block_reg(&self, id: BlockId) -> RegularizerKind {
        match id {
            BlockId::W(i) => self.problem.weight_reg(i),
            BlockId::V(i) => self.problem.state_reg(i),
            _ => RegularizerKind::None,
        }
    }

    /// Proximal-linearized step with backtracking on α. A trial is accepted
    /// once the block objective sits below its quadratic model at the trial
    /// point, which implies it did not increase.
    /// Returns whether the block moved.
    fn linearized_step(&mut self, id: BlockId) -> std::result::Result<bool, StepFailure> {
        let g = self.problem.grad_unchecked(&self.state, id)?;
        if !g.is_finite() {
            return Err(StepFailure(format!("non-finite gradient of {id}")));
        }
        let reg = self.block_reg(id);
        let nonsmooth = if reg.is_smooth() {
            RegularizerKind::None
        } else {
            reg
        };
        let b0 = self.state.get(id).expect("block exists").clone();
        let f0 = self.problem.eval(&self.state)?;
        let r0 = nonsmooth.eval(&b0);
        let slack = 1e-14 * f0.abs().max(1.0);
        let mut alpha = match self.alphas.get(&id) {
            Some(&last) if self.opts.adaptive_alpha => {
                (last * self.opts.backtrack_factor).max(MIN_ALPHA)
            }
            _ => self.opts.prox_alpha,
        };
        for _ in 0..=MAX_BACKTRACKS {
            let mut step = b0.clone();
            step.axpy(-1.0 / alpha, &g);
            let cand = match (self.kind, id) {
                (SolverKind::Mdlam, BlockId::U(i)) => self.box_projection(i, step),
                _ => nonsmooth.prox(&step, 1.0 / alpha),
            };
            let delta = &cand - &b0;
            if delta.frob_sq() == 0.0 {
                return Ok(false);
            }
            let model =
                f0 - r0 + nonsmooth.eval(&cand) + g.inner(&delta) + 0.5 * alpha * delta.frob_sq();
            *self.state.get_mut(id).expect("block exists") = cand;
            let f1 = self.problem.eval(&self.state)?;
            if f1.is_finite() && f1 <= model + slack {
                self.alphas.insert(id, alpha);
                return Ok(true);
            }
            alpha /= self.opts.backtrack_factor;
        }
        *self.state.get_mut(id).expect("block exists") = b0;
        Err(StepFailure(format!(
            "backtracking on {id} failed after {MAX_BACKTRACKS} increases of the proximal coefficient"
        )))
    }

    /// Exact minimizer of the block objective plus `δ/2‖B − B^k‖²` when
    /// that objective is quadratic in the block.
    fn closed_form(&self, id: BlockId) -> std::result::Result<Option<Matrix>, StepFailure> {
        let p = &self.problem;
        let s = &self.state;
        let n = p.depth();
        let gamma = p.hyper.gamma;
        let delta = self.opts.closed_form_damping;
        let inv_n = 1.0 / p.data.n() as f64;
        let half_sq = p.spec.loss == LossKind::HalfSquared;
        let reg = self.block_reg(id);
        if !reg.is_smooth() {
            return Ok(None);
        }
        let mu = reg.quadratic_coeff();
        let input = |i: usize| -> &Matrix {
            if i == 1 {
                &p.data.inputs
            } else if self.kind == SolverKind::Mdlam {
                &s.u[i - 2]
            } else {
                &s.v[i - 2]
            }
        };
        // W_i minimizing c/2‖T − W X‖² + (μ+δ)/2‖W‖² − δ⟨W, W^k⟩.
        let weight_ls = |i: usize, c: f64, target: &Matrix| -> Result<Matrix> {
            let x = input(i);
            let mut h = x.dot_t(x).scale(c);
            h.add_diag(mu + delta);
            let mut rhs = x.dot_t(target).scale(c);
            rhs.axpy(delta, &s.w[i - 1].transpose());
            Ok(solve_spd(&h, &rhs)?.transpose())
        };
        let out = match (self.kind, id) {
            (SolverKind::Bcd2, BlockId::V(i)) if i == n && half_sq => {
                let z = s.w[n - 1].dot(input(n));
                let mut rhs = p.data.labels.scale(inv_n);
                rhs.axpy(gamma, &p.activation(n).apply(&z));
                rhs.axpy(delta, &s.v[n - 1]);
                Some(rhs.scale(1.0 / (inv_n + gamma + mu + delta)))
            }
            (SolverKind::Bcd2, BlockId::W(i)) if p.activation(i) == ActivationKind::Identity => {
                Some(weight_ls(i, gamma, &s.v[i - 1])?)
            }
            (SolverKind::Bcd2, BlockId::V(i))
                if i < n && p.activation(i + 1) == ActivationKind::Identity =>
            {
                let w1 = &s.w[i];
                let z = s.w[i - 1].dot(input(i));
                let mut h = w1.t_dot(w1).scale(gamma);
                h.add_diag(gamma + mu + delta);
                let mut rhs = p.activation(i).apply(&z).scale(gamma);
                rhs.axpy(gamma, &w1.t_dot(&s.v[i]));
                rhs.axpy(delta, &s.v[i - 1]);
                Some(solve_spd(&h, &rhs)?)
            }
            (SolverKind::Bcd3 | SolverKind::Bcd3Resnet, BlockId::W(i)) => {
                Some(weight_ls(i, gamma, &s.u[i - 1])?)
            }
            (SolverKind::Bcd3 | SolverKind::Bcd3Resnet, BlockId::V(i)) => {
                let resnet = self.kind == SolverKind::Bcd3Resnet;
                let mut t = p.spec.activation(i).apply(&s.u[i - 1]);
                if resnet {
                    t.axpy(1.0, &p.skip(i).dot(input(i)));
                }
                if i == n {
                    if !half_sq {
                        return Ok(None);
                    }
                    let mut rhs = p.data.labels.scale(inv_n);
                    rhs.axpy(gamma, &t);
                    rhs.axpy(delta, &s.v[n - 1]);
                    Some(rhs.scale(1.0 / (inv_n + gamma + mu + delta)))
                } else {
                    let w1 = &s.w[i];
                    let mut h = w1.t_dot(w1).scale(gamma);
                    let mut rhs = t.scale(gamma);
                    rhs.axpy(gamma, &w1.t_dot(&s.u[i]));
                    if resnet {
                        let p1 = p.skip(i + 1);
                        h.axpy(gamma, &p1.t_dot(&p1));
                        let next = &s.v[i] - &p.spec.activation(i + 1).apply(&s.u[i]);
                        rhs.axpy(gamma, &p1.t_dot(&next));
                    }
                    h.add_diag(gamma + mu + delta);
                    rhs.axpy(delta, &s.v[i - 1]);
                    Some(solve_spd(&h, &rhs)?)
                }
            }
            (SolverKind::Admm, BlockId::W(i)) if i == n => {
                let beta = p.hyper.beta(n);
                let mut target = s.v[n - 1].clone();
                target.axpy(-1.0 / beta, &s.lambda[n - 1]);
                Some(weight_ls(n, beta, &target)?)
            }
            (SolverKind::Admm, BlockId::V(i)) if i == n && half_sq => {
                let (beta, xi) = (p.hyper.beta(n), p.hyper.xi(n));
                let z = s.w[n - 1].dot(input(n));
                let mut rhs = p.data.labels.clone();
                rhs.axpy(1.0, &s.lambda[n - 1]);
                rhs.axpy(beta, &z);
                rhs.axpy(2.0 * xi, &s.vbar[n - 1]);
                rhs.axpy(delta, &s.v[n - 1]);
                Some(rhs.scale(1.0 / (1.0 + beta + 2.0 * xi + delta)))
            }
            (SolverKind::Admm, BlockId::V(i)) if i + 1 == n => {
                let (beta, xi) = (p.hyper.beta(i), p.hyper.xi(i));
                let beta_n = p.hyper.beta(n);
                let wn = &s.w[n - 1];
                let z = s.w[i - 1].dot(input(i));
                let mut h = wn.t_dot(wn).scale(beta_n);
                h.add_diag(beta + 2.0 * xi + delta);
                let mut rhs = s.lambda[i - 1].clone();
                rhs.axpy(beta, &p.activation(i).apply(&z));
                rhs.axpy(-1.0, &wn.t_dot(&s.lambda[n - 1]));
                rhs.axpy(beta_n, &wn.t_dot(&s.v[n - 1]));
                rhs.axpy(2.0 * xi, &s.vbar[i - 1]);
                rhs.axpy(delta, &s.v[i - 1]);
                Some(solve_spd(&h, &rhs)?)
            }
            (SolverKind::Mdlam, BlockId::W(i)) => Some(weight_ls(i, gamma, &s.v[i - 1])?),
            (SolverKind::Mdlam, BlockId::V(i)) => {
                let z = s.w[i - 1].dot(input(i));
                if i == n {
                    if !half_sq {
                        return Ok(None);
                    }
                    let mut rhs = p.data.labels.clone();
                    rhs.axpy(gamma, &z);
                    rhs.axpy(delta, &s.v[n - 1]);
                    Some(rhs.scale(1.0 / (1.0 + gamma + delta)))
                } else {
                    // The box couples v_i to u_i entrywise, so the constrained
                    // minimizer is the clamp of the unconstrained one.
                    let mut rhs = z.scale(gamma);
                    rhs.axpy(delta, &s.v[i - 1]);
                    let mut next = rhs.scale(1.0 / (gamma + delta));
                    let eps = p.hyper.epsilon;
                    let act = p.spec.activation(i);
                    for ((x, &u), &old) in next
                        .data_mut()
                        .iter_mut()
                        .zip(s.u[i - 1].data())
                        .zip(s.v[i - 1].data())
                    {
                        *x = match act.preimage(u - eps, u + eps) {
                            Some((a, b)) => x.clamp(a, b),
                            None => old,
                        };
                    }
                    Some(next)
                }
            }
            _ => None,
        };
        Ok(out)
    }

    /// Clamps `u_i` into `[σ(v_i) − ε, σ(v_i) + ε]`.
    fn project_u(&mut self, i: usize) {
        let u = std::mem::replace(&mut self.state.u[i - 1], Matrix::zeros(0, 0));
        self.state.u[i - 1] = self.box_projection(i, u);
    }

    /// Entrywise clamp onto `[σ_i(v_i) − ε, σ_i(v_i) + ε]`.
    fn box_projection(&self, i: usize, mut u: Matrix) -> Matrix {
        let eps = self.problem.hyper.epsilon;
        let act = self.problem.spec.activation(i);
        for (x, &vi) in u.data_mut().iter_mut().zip(self.state.v[i - 1].data()) {
            let s = act.value(vi);
            *x = x.clamp(s - eps, s + eps);
        }
        u
    }

    /// `u_i ← Π_box(argmin γ/2‖v_{i+1} − W_{i+1}u‖² + δ/2‖u − u^k‖²)`.
    /// The projection of the unconstrained minimizer can raise f.
    fn mdlam_u_step(&mut self, i: usize) -> std::result::Result<(), StepFailure> {
        let gamma = self.problem.hyper.gamma;
        let delta = self.opts.closed_form_damping.max(1e-12);
        let w1 = &self.state.w[i];
        let mut h = w1.t_dot(w1).scale(gamma);
        h.add_diag(delta);
        let mut rhs = w1.t_dot(&self.state.v[i]).scale(gamma);
        rhs.axpy(delta, &self.state.u[i - 1]);
        let next = solve_spd(&h, &rhs)?;
        if !next.is_finite() {
            return Err(StepFailure(format!("non-finite update of U{i}")));
        }
        self.state.u[i - 1] = next;
        self.project_u(i);
        Ok(())
    }
}

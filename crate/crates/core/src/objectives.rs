//! The five layer-splitting objectives, their per-block gradients and the
//! min-norm subgradient distance `dist(0, ∂f(X))`.
//!
//! Layers are numbered `1..=N`; index `0` refers to the data (`V_0`, or `u_0`
//! for the box-relaxed form). Every gradient returned here covers the smooth
//! terms only: squared-Frobenius regularizers are included, ell1 terms and the
//! box indicator are handled by [`Problem::subgrad_dist`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ActivationKind, DataSet, NetworkSpec, RegularizerKind};
use crate::numerics::Matrix;

/// Absolute tolerance for deciding that a box-constrained entry sits on a
/// bound, and for accepting it as feasible.
pub const BOX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitForm {
    /// `ℓ/n + Σr(W) + Σs(V) + γ/2 Σ‖V_i − σ(W_i V_{i−1})‖²`
    TwoSplitFnn,
    /// `ℓ/n + Σr + Σs + γ/2 Σ‖V_i − σ(U_i)‖² + γ/2 Σ‖U_i − W_i V_{i−1}‖²`
    ThreeSplitFnn,
    /// Augmented Lagrangian with dual blocks `Λ_i` and proximal anchors `V̄_i`.
    AdmmLagrangian,
    /// `ℓ + Σr(W) + γ/2 Σ‖v_i − W_i u_{i−1}‖²` with `u_i` boxed around `σ(v_i)`.
    Mdlam,
    /// Residual three-splitting: `V_i − V_{i−1} − σ(U_i)` replaces `V_i − σ(U_i)`.
    ThreeSplitResnet,
}

impl SplitForm {
    pub const ALL: [SplitForm; 5] = [
        SplitForm::TwoSplitFnn,
        SplitForm::ThreeSplitFnn,
        SplitForm::AdmmLagrangian,
        SplitForm::Mdlam,
        SplitForm::ThreeSplitResnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SplitForm::TwoSplitFnn => "two_split_fnn",
            SplitForm::ThreeSplitFnn => "three_split_fnn",
            SplitForm::AdmmLagrangian => "admm_lagrangian",
            SplitForm::Mdlam => "mdlam",
            SplitForm::ThreeSplitResnet => "three_split_resnet",
        }
    }

    fn averages_loss(self) -> bool {
        matches!(
            self,
            SplitForm::TwoSplitFnn | SplitForm::ThreeSplitFnn | SplitForm::ThreeSplitResnet
        )
    }
}

impl fmt::Display for SplitForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Penalty and multiplier constants. `beta` and `xi` hold either one value
/// per layer or a single value broadcast to all layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub gamma: f64,
    pub lambda: f64,
    #[serde(with = "one_or_many")]
    pub beta: Vec<f64>,
    #[serde(with = "one_or_many")]
    pub xi: Vec<f64>,
    pub epsilon: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lambda: 0.0,
            beta: vec![1.0],
            xi: vec![1.0],
            epsilon: 0.1,
        }
    }
}

impl Hyperparams {
    pub fn with_gamma(gamma: f64) -> Self {
        Self {
            gamma,
            ..Self::default()
        }
    }

    pub fn beta(&self, i: usize) -> f64 {
        broadcast(&self.beta, i)
    }

    pub fn xi(&self, i: usize) -> f64 {
        broadcast(&self.xi, i)
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("gamma", "must be finite and > 0"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and >= 0"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon", "must be finite and >= 0"));
        }
        for (field, vals, strict) in [("beta", &self.beta, true), ("xi", &self.xi, false)] {
            if vals.len() != 1 && vals.len() != depth {
                return Err(Error::config(
                    field,
                    format!("expected 1 or {depth} values, got {}", vals.len()),
                ));
            }
            let ok = vals
                .iter()
                .all(|&v| v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 });
            if !ok {
                let bound = if strict { "> 0" } else { ">= 0" };
                return Err(Error::config(
                    field,
                    format!("values must be finite and {bound}"),
                ));
            }
        }
        Ok(())
    }
}

fn broadcast(vals: &[f64], i: usize) -> f64 {
    if vals.len() == 1 {
        vals[0]
    } else {
        vals[i - 1]
    }
}

mod one_or_many {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        if v.len() == 1 {
            v[0].serialize(s)
        } else {
            v.serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(match OneOrMany::deserialize(d)? {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        })
    }
}

/// Names one parameter block. Layer indices are 1-based. For the
/// box-relaxed form `U(i)` is `u_i` and `V(i)` is `v_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockId {
    W(usize),
    U(usize),
    V(usize),
    Lambda(usize),
    VBar(usize),
}

impl BlockId {
    pub fn layer(self) -> usize {
        match self {
            BlockId::W(i)
            | BlockId::U(i)
            | BlockId::V(i)
            | BlockId::Lambda(i)
            | BlockId::VBar(i) => i,
        }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockId::W(i) => write!(f, "W{i}"),
            BlockId::U(i) => write!(f, "U{i}"),
            BlockId::V(i) => write!(f, "V{i}"),
            BlockId::Lambda(i) => write!(f, "Lambda{i}"),
            BlockId::VBar(i) => write!(f, "Vbar{i}"),
        }
    }
}

impl FromStr for BlockId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let split = s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len());
        let (name, idx) = s.split_at(split);
        let i: usize = idx
            .parse()
            .ok()
            .filter(|&i| i > 0)
            .ok_or_else(|| Error::UnknownBlock(s.to_string()))?;
        match name {
            "W" => Ok(BlockId::W(i)),
            "U" => Ok(BlockId::U(i)),
            "V" => Ok(BlockId::V(i)),
            "Lambda" => Ok(BlockId::Lambda(i)),
            "Vbar" => Ok(BlockId::VBar(i)),
            _ => Err(Error::UnknownBlock(s.to_string())),
        }
    }
}

/// Full variable tuple of one splitting form. Vectors not used by the form
/// are empty; `u` has `N − 1` entries for the box-relaxed form and `N`
/// entries for the three-splitting forms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamState {
    pub w: Vec<Matrix>,
    pub u: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub lambda: Vec<Matrix>,
    pub vbar: Vec<Matrix>,
}

impl ParamState {
    pub fn get(&self, id: BlockId) -> Option<&Matrix> {
        let (vec, i) = self.slot(id);
        vec.get(i.wrapping_sub(1))
    }

    pub fn get_mut(&mut self, id: BlockId) -> Option<&mut Matrix> {
        let i = id.layer();
        let vec = match id {
            BlockId::W(_) => &mut self.w,
            BlockId::U(_) => &mut self.u,
            BlockId::V(_) => &mut self.v,
            BlockId::Lambda(_) => &mut self.lambda,
            BlockId::VBar(_) => &mut self.vbar,
        };
        vec.get_mut(i.wrapping_sub(1))
    }

    fn slot(&self, id: BlockId) -> (&Vec<Matrix>, usize) {
        match id {
            BlockId::W(i) => (&self.w, i),
            BlockId::U(i) => (&self.u, i),
            BlockId::V(i) => (&self.v, i),
            BlockId::Lambda(i) => (&self.lambda, i),
            BlockId::VBar(i) => (&self.vbar, i),
        }
    }

    /// Builds the auxiliary blocks by a forward pass from the given weights,
    /// so that every penalty starts at zero.
    pub fn from_forward(
        form: SplitForm,
        spec: &NetworkSpec,
        data: &DataSet,
        weights: Vec<Matrix>,
    ) -> Result<Self> {
        let n_layers = spec.depth();
        if weights.len() != n_layers {
            return Err(Error::InvalidState(format!(
                "expected {n_layers} weight matrices, got {}",
                weights.len()
            )));
        }
        for (i, w) in weights.iter().enumerate() {
            if w.shape() != (spec.dim(i + 1), spec.dim(i)) {
                return Err(Error::ShapeMismatch {
                    op: "weights",
                    left: w.shape(),
                    right: (spec.dim(i + 1), spec.dim(i)),
                });
            }
        }
        let mut state = ParamState {
            w: weights,
            ..Default::default()
        };
        let mut prev = data.inputs.clone();
        for i in 1..=n_layers {
            let z = state.w[i - 1].dot(&prev);
            let act = spec.activation(i);
            let next = match form {
                SplitForm::TwoSplitFnn => act.apply(&z),
                SplitForm::ThreeSplitFnn => {
                    let v = act.apply(&z);
                    state.u.push(z);
                    v
                }
                SplitForm::ThreeSplitResnet => {
                    let mut v = act.apply(&z);
                    v.axpy(
                        1.0,
                        &Matrix::embedding(spec.dim(i), spec.dim(i - 1)).dot(&prev),
                    );
                    state.u.push(z);
                    v
                }
                SplitForm::AdmmLagrangian => {
                    let v = if i == n_layers { z } else { act.apply(&z) };
                    state.lambda.push(Matrix::zeros(v.rows(), v.cols()));
                    state.vbar.push(v.clone());
                    v
                }
                SplitForm::Mdlam => {
                    if i < n_layers {
                        let u = act.apply(&z);
                        state.v.push(z);
                        state.u.push(u.clone());
                        prev = u;
                        continue;
                    }
                    z
                }
            };
            state.v.push(next.clone());
            prev = next;
        }
        Ok(state)
    }
}

/// One objective instance: a form together with its network, data and
/// constants.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub form: SplitForm,
    pub spec: &'a NetworkSpec,
    pub data: &'a DataSet,
    pub hyper: &'a Hyperparams,
}

impl<'a> Problem<'a> {
    pub fn new(
        form: SplitForm,
        spec: &'a NetworkSpec,
        data: &'a DataSet,
        hyper: &'a Hyperparams,
    ) -> Result<Self> {
        spec.validate()?;
        hyper.validate(spec.depth())?;
        data.check_against(spec)?;
        Ok(Self {
            form,
            spec,
            data,
            hyper,
        })
    }

    pub fn depth(&self) -> usize {
        self.spec.depth()
    }

    fn n_samples(&self) -> usize {
        self.data.n()
    }

    fn loss_scale(&self) -> f64 {
        if self.form.averages_loss() {
            1.0 / self.n_samples() as f64
        } else {
            1.0
        }
    }

    /// Activation used for layer `i`. The Lagrangian form keeps its last
    /// constraint linear.
    pub fn activation(&self, i: usize) -> ActivationKind {
        if self.form == SplitForm::AdmmLagrangian && i == self.depth() {
            ActivationKind::Identity
        } else {
            self.spec.activation(i)
        }
    }

    pub fn weight_reg(&self, i: usize) -> RegularizerKind {
        if self.form == SplitForm::AdmmLagrangian {
            RegularizerKind::SquaredFrobenius {
                lambda: self.hyper.lambda,
            }
        } else {
            self.spec.weight_reg(i)
        }
    }

    /// State regularizer of `V_i`; only the penalty forms carry one.
    pub fn state_reg(&self, i: usize) -> RegularizerKind {
        match self.form {
            SplitForm::TwoSplitFnn | SplitForm::ThreeSplitFnn | SplitForm::ThreeSplitResnet => {
                self.spec.state_reg(i)
            }
            SplitForm::AdmmLagrangian | SplitForm::Mdlam => RegularizerKind::None,
        }
    }

    /// Skip connection `P_i` (rectangular identity) of the residual form.
    pub fn skip(&self, i: usize) -> Matrix {
        Matrix::embedding(self.spec.dim(i), self.spec.dim(i - 1))
    }

    /// Blocks of this form in canonical order (layer by layer).
    pub fn blocks(&self) -> Vec<BlockId> {
        let n = self.depth();
        let mut out = Vec::new();
        for i in 1..=n {
            out.push(BlockId::W(i));
            match self.form {
                SplitForm::TwoSplitFnn => out.push(BlockId::V(i)),
                SplitForm::ThreeSplitFnn | SplitForm::ThreeSplitResnet => {
                    out.push(BlockId::U(i));
                    out.push(BlockId::V(i));
                }
                SplitForm::AdmmLagrangian => {
                    out.extend([BlockId::V(i), BlockId::Lambda(i), BlockId::VBar(i)]);
                }
                SplitForm::Mdlam => {
                    if i < n {
                        out.push(BlockId::U(i));
                    }
                    out.push(BlockId::V(i));
                }
            }
        }
        out
    }

    pub fn block_shape(&self, id: BlockId) -> Result<(usize, usize)> {
        if !self.blocks().contains(&id) {
            return Err(Error::UnknownBlock(id.to_string()));
        }
        let i = id.layer();
        Ok(match id {
            BlockId::W(_) => (self.spec.dim(i), self.spec.dim(i - 1)),
            _ => (self.spec.dim(i), self.n_samples()),
        })
    }

    /// Checks shapes and, for the box-relaxed form, feasibility.
    pub fn check_state(&self, state: &ParamState) -> Result<()> {
        let n = self.depth();
        let expect = |name: &str, have: usize, want: usize| -> Result<()> {
            if have != want {
                return Err(Error::InvalidState(format!(
                    "{} has {have} blocks, form {} needs {want}",
                    name, self.form
                )));
            }
            Ok(())
        };
        let (n_u, n_lambda) = match self.form {
            SplitForm::TwoSplitFnn => (0, 0),
            SplitForm::ThreeSplitFnn | SplitForm::ThreeSplitResnet => (n, 0),
            SplitForm::AdmmLagrangian => (0, n),
            SplitForm::Mdlam => (n - 1, 0),
        };
        expect("W", state.w.len(), n)?;
        expect("V", state.v.len(), n)?;
        expect("U", state.u.len(), n_u)?;
        expect("Lambda", state.lambda.len(), n_lambda)?;
        expect("Vbar", state.vbar.len(), n_lambda)?;
        for id in self.blocks() {
            let m = state.get(id).expect("counted above");
            let want = self.block_shape(id)?;
            if m.shape() != want {
                return Err(Error::ShapeMismatch {
                    op: "state block",
                    left: m.shape(),
                    right: want,
                });
            }
            if !m.is_finite() {
                return Err(Error::InvalidState(format!(
                    "block {id} has non-finite entries"
                )));
            }
        }
        if self.form == SplitForm::Mdlam {
            for i in 1..n {
                self.check_box(state, i)?;
            }
        }
        Ok(())
    }

    fn check_box(&self, state: &ParamState, i: usize) -> Result<()> {
        let eps = self.hyper.epsilon;
        let act = self.spec.activation(i);
        let u = &state.u[i - 1];
        let v = &state.v[i - 1];
        for (k, (&ui, &vi)) in u.data().iter().zip(v.data()).enumerate() {
            let s = act.value(vi);
            if ui < s - eps - BOX_TOL || ui > s + eps + BOX_TOL {
                return Err(Error::Infeasible(format!(
                    "u{i}[{k}] = {ui} outside [{}, {}]",
                    s - eps,
                    s + eps
                )));
            }
        }
        Ok(())
    }

    /// `V_{i−1}` (or `u_{i−1}`), with index 0 mapping to the data.
    fn layer_input<'s>(&'s self, state: &'s ParamState, i: usize) -> &'s Matrix {
        if i == 1 {
            &self.data.inputs
        } else if self.form == SplitForm::Mdlam {
            &state.u[i - 2]
        } else {
            &state.v[i - 2]
        }
    }

    /// Objective value as a list of named terms, in a fixed order.
    pub fn terms(&self, state: &ParamState) -> Result<Vec<(String, f64)>> {
        self.check_state(state)?;
        let n = self.depth();
        let gamma = self.hyper.gamma;
        let mut out = Vec::new();
        let v_out = &state.v[n - 1];
        out.push((
            "loss".to_string(),
            self.loss_scale() * self.spec.loss.eval(v_out, &self.data.labels)?,
        ));
        for i in 1..=n {
            out.push((format!("r_W{i}"), self.weight_reg(i).eval(&state.w[i - 1])));
        }
        if matches!(
            self.form,
            SplitForm::TwoSplitFnn | SplitForm::ThreeSplitFnn | SplitForm::ThreeSplitResnet
        ) {
            for i in 1..=n {
                out.push((format!("s_V{i}"), self.state_reg(i).eval(&state.v[i - 1])));
            }
        }
        for i in 1..=n {
            let input = self.layer_input(state, i);
            let z = state.w[i - 1].dot(input);
            let act = self.activation(i);
            match self.form {
                SplitForm::TwoSplitFnn => {
                    let r = &state.v[i - 1] - &act.apply(&z);
                    out.push((format!("pen_V{i}"), 0.5 * gamma * r.frob_sq()));
                }
                SplitForm::ThreeSplitFnn | SplitForm::ThreeSplitResnet => {
                    let a = self.residual_a(state, i);
                    out.push((format!("pen_V{i}"), 0.5 * gamma * a.frob_sq()));
                    let b = &state.u[i - 1] - &z;
                    out.push((format!("pen_U{i}"), 0.5 * gamma * b.frob_sq()));
                }
                SplitForm::AdmmLagrangian => {
                    let c = &act.apply(&z) - &state.v[i - 1];
                    out.push((format!("dual_{i}"), state.lambda[i - 1].inner(&c)));
                    out.push((format!("aug_{i}"), 0.5 * self.hyper.beta(i) * c.frob_sq()));
                    let d = &state.v[i - 1] - &state.vbar[i - 1];
                    out.push((format!("prox_{i}"), self.hyper.xi(i) * d.frob_sq()));
                }
                SplitForm::Mdlam => {
                    let d = &state.v[i - 1] - &z;
                    out.push((format!("pen_v{i}"), 0.5 * gamma * d.frob_sq()));
                }
            }
        }
        Ok(out)
    }

    pub fn eval(&self, state: &ParamState) -> Result<f64> {
        Ok(self.terms(state)?.iter().map(|(_, v)| v).sum())
    }

    /// `V_i − σ(U_i)`, or `V_i − P_i V_{i−1} − σ(U_i)` for the residual form.
    fn residual_a(&self, state: &ParamState, i: usize) -> Matrix {
        let mut a = &state.v[i - 1] - &self.spec.activation(i).apply(&state.u[i - 1]);
        if self.form == SplitForm::ThreeSplitResnet {
            a.axpy(-1.0, &self.skip(i).dot(self.layer_input(state, i)));
        }
        a
    }

    /// Gradient of the output loss term (with the form's 1/n factor).
    fn loss_grad(&self, state: &ParamState) -> Result<Matrix> {
        let g = self
            .spec
            .loss
            .grad(&state.v[self.depth() - 1], &self.data.labels)?;
        Ok(g.scale(self.loss_scale()))
    }

    /// Partial gradient of all smooth terms with respect to one block.
    pub fn grad(&self, state: &ParamState, id: BlockId) -> Result<Matrix> {
        self.check_state(state)?;
        self.grad_unchecked(state, id)
    }

    pub(crate) fn grad_unchecked(&self, state: &ParamState, id: BlockId) -> Result<Matrix> {
        if !self.blocks().contains(&id) {
            return Err(Error::UnknownBlock(id.to_string()));
        }
        let n = self.depth();
        let gamma = self.hyper.gamma;
        let i = id.layer();
        let mut g = match (self.form, id) {
            (SplitForm::TwoSplitFnn, BlockId::W(_)) => {
                let input = self.layer_input(state, i);
                let z = state.w[i - 1].dot(input);
                let act = self.activation(i);
                let r = &state.v[i - 1] - &act.apply(&z);
                r.hadamard(&act.apply_derivative(&z))
                    .dot_t(input)
                    .scale(-gamma)
            }
            (SplitForm::TwoSplitFnn, BlockId::V(_)) => {
                let z = state.w[i - 1].dot(self.layer_input(state, i));
                let mut g = (&state.v[i - 1] - &self.activation(i).apply(&z)).scale(gamma);
                if i < n {
                    let z1 = state.w[i].dot(&state.v[i - 1]);
                    let act1 = self.activation(i + 1);
                    let r1 = &state.v[i] - &act1.apply(&z1);
                    let back = state.w[i].t_dot(&r1.hadamard(&act1.apply_derivative(&z1)));
                    g.axpy(-gamma, &back);
                } else {
                    g.axpy(1.0, &self.loss_grad(state)?);
                }
                g
            }
            (SplitForm::ThreeSplitFnn | SplitForm::ThreeSplitResnet, BlockId::W(_)) => {
                let input = self.layer_input(state, i);
                let b = &state.u[i - 1] - &state.w[i - 1].dot(input);
                b.dot_t(input).scale(-gamma)
            }
            (SplitForm::ThreeSplitFnn | SplitForm::ThreeSplitResnet, BlockId::U(_)) => {
                let a = self.residual_a(state, i);
                let u = &state.u[i - 1];
                let b = u - &state.w[i - 1].dot(self.layer_input(state, i));
                let mut g = a
                    .hadamard(&self.spec.activation(i).apply_derivative(u))
                    .scale(-gamma);
                g.axpy(gamma, &b);
                g
            }
            (SplitForm::ThreeSplitFnn | SplitForm::ThreeSplitResnet, BlockId::V(_)) => {
                let mut g = self.residual_a(state, i).scale(gamma);
                if i < n {
                    let b1 = &state.u[i] - &state.w[i].dot(&state.v[i - 1]);
                    g.axpy(-gamma, &state.w[i].t_dot(&b1));
                    if self.form == SplitForm::ThreeSplitResnet {
                        let a1 = self.residual_a(state, i + 1);
                        g.axpy(-gamma, &self.skip(i + 1).t_dot(&a1));
                    }
                } else {
                    g.axpy(1.0, &self.loss_grad(state)?);
                }
                g
            }
            (SplitForm::AdmmLagrangian, BlockId::W(_)) => {
                let input = self.layer_input(state, i);
                let (m, dz) = self.admm_multiplier(state, i);
                m.hadamard(&dz).dot_t(input)
            }
            (SplitForm::AdmmLagrangian, BlockId::V(_)) => {
                let (m, _) = self.admm_multiplier(state, i);
                let mut g = m.scale(-1.0);
                if i < n {
                    let (m1, dz1) = self.admm_multiplier(state, i + 1);
                    g.axpy(1.0, &state.w[i].t_dot(&m1.hadamard(&dz1)));
                } else {
                    g.axpy(1.0, &self.loss_grad(state)?);
                }
                g.axpy(
                    2.0 * self.hyper.xi(i),
                    &(&state.v[i - 1] - &state.vbar[i - 1]),
                );
                g
            }
            (SplitForm::AdmmLagrangian, BlockId::Lambda(_)) => {
                let z = state.w[i - 1].dot(self.layer_input(state, i));
                &self.activation(i).apply(&z) - &state.v[i - 1]
            }
            (SplitForm::AdmmLagrangian, BlockId::VBar(_)) => {
                (&state.v[i - 1] - &state.vbar[i - 1]).scale(-2.0 * self.hyper.xi(i))
            }
            (SplitForm::Mdlam, BlockId::W(_)) => {
                let input = self.layer_input(state, i);
                let d = &state.v[i - 1] - &state.w[i - 1].dot(input);
                d.dot_t(input).scale(-gamma)
            }
            (SplitForm::Mdlam, BlockId::V(_)) => {
                let d = &state.v[i - 1] - &state.w[i - 1].dot(self.layer_input(state, i));
                let mut g = d.scale(gamma);
                if i == n {
                    g.axpy(1.0, &self.loss_grad(state)?);
                }
                g
            }
            (SplitForm::Mdlam, BlockId::U(_)) => {
                let d1 = &state.v[i] - &state.w[i].dot(&state.u[i - 1]);
                state.w[i].t_dot(&d1).scale(-gamma)
            }
            _ => return Err(Error::UnknownBlock(id.to_string())),
        };
        let reg = match id {
            BlockId::W(_) => self.weight_reg(i),
            BlockId::V(_) => self.state_reg(i),
            _ => RegularizerKind::None,
        };
        if let Some(rg) = reg.smooth_grad(state.get(id).expect("block exists")) {
            g.axpy(1.0, &rg);
        }
        Ok(g)
    }

    /// `(Λ_i + β_i C_i, σ'(Z_i))` for the Lagrangian form.
    fn admm_multiplier(&self, state: &ParamState, i: usize) -> (Matrix, Matrix) {
        let z = state.w[i - 1].dot(self.layer_input(state, i));
        let act = self.activation(i);
        let c = &act.apply(&z) - &state.v[i - 1];
        let mut m = state.lambda[i - 1].clone();
        m.axpy(self.hyper.beta(i), &c);
        (m, act.apply_derivative(&z))
    }

    /// Squared distance contribution of one block to `dist(0, ∂f)²`.
    pub fn block_dist_sq(&self, state: &ParamState, id: BlockId) -> Result<f64> {
        let g = self.grad_unchecked(state, id)?;
        let block = state.get(id).expect("block exists");
        let reg = match id {
            BlockId::W(i) => self.weight_reg(i),
            BlockId::V(i) => self.state_reg(i),
            _ => RegularizerKind::None,
        };
        if let RegularizerKind::Ell1 { .. } = reg {
            let d = reg.min_norm_dist(block, &g);
            return Ok(d * d);
        }
        if self.form == SplitForm::Mdlam {
            if let BlockId::U(i) = id {
                return Ok(self.box_tangent_sq(state, i, &g));
            }
        }
        Ok(g.frob_sq())
    }

    /// `‖g + N_box(u_i)‖²` minimized: gradient components blocked by an
    /// active bound are dropped.
    fn box_tangent_sq(&self, state: &ParamState, i: usize, g: &Matrix) -> f64 {
        let eps = self.hyper.epsilon;
        let act = self.spec.activation(i);
        state.u[i - 1]
            .data()
            .iter()
            .zip(state.v[i - 1].data())
            .zip(g.data())
            .map(|((&u, &v), &gi)| {
                let s = act.value(v);
                box_entry_dist(u, s - eps, s + eps, gi).powi(2)
            })
            .sum()
    }

    /// `dist(0, ∂f(X))`, the min-norm element of the limiting subdifferential
    /// assembled block by block.
    pub fn subgrad_dist(&self, state: &ParamState) -> Result<f64> {
        self.check_state(state)?;
        let mut total = 0.0;
        for id in self.blocks() {
            total += self.block_dist_sq(state, id)?;
        }
        Ok(total.sqrt())
    }
}

/// Distance from zero to `g + N_[lo,hi](u)` for a scalar entry.
pub(crate) fn box_entry_dist(u: f64, lo: f64, hi: f64, g: f64) -> f64 {
    let at_lo = (u - lo).abs() <= BOX_TOL;
    let at_hi = (u - hi).abs() <= BOX_TOL;
    if (at_hi && g <= 0.0) || (at_lo && g >= 0.0) {
        0.0
    } else {
        g.abs()
    }
}

pub fn eval(
    form: SplitForm,
    spec: &NetworkSpec,
    data: &DataSet,
    hyper: &Hyperparams,
    state: &ParamState,
) -> Result<f64> {
    Problem::new(form, spec, data, hyper)?.eval(state)
}

pub fn grad_block(
    form: SplitForm,
    spec: &NetworkSpec,
    data: &DataSet,
    hyper: &Hyperparams,
    state: &ParamState,
    block: BlockId,
) -> Result<Matrix> {
    Problem::new(form, spec, data, hyper)?.grad(state, block)
}

pub fn subgrad_dist(
    form: SplitForm,
    spec: &NetworkSpec,
    data: &DataSet,
    hyper: &Hyperparams,
    state: &ParamState,
) -> Result<f64> {
    Problem::new(form, spec, data, hyper)?.subgrad_dist(state)
}

//! Mixture of experts with softmax gating.
//!
//! Gate values `g_k(x)` are turned into weights by a softmax; the output is the
//! weight-blended expert output. With quadratic gates
//! `g_k(x) = -sum_i (x_i - c_ki)^2 / (2 w_ki^2)` the softmax equals the
//! normalized product of Gaussians, which is what makes a TSK model and an
//! MoE interchangeable.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result, Violation};
use crate::train::{TrainConfig, TrainHistory};
use crate::tsk::{
    clamp_width, gaussian_log_grade, mse, Aggregation, Antecedent, Clause, Consequent,
    MembershipFunction, Rule, TskModel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GateFunction {
    QuadraticDiag { centers: Vec<f64>, widths: Vec<f64> },
    Affine { weights: Vec<f64>, bias: f64 },
}

impl GateFunction {
    /// Gate with the same value everywhere.
    pub fn constant(d: usize, bias: f64) -> Self {
        Self::Affine {
            weights: vec![0.0; d],
            bias,
        }
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::QuadraticDiag { centers, widths } => x
                .iter()
                .zip(centers)
                .zip(widths)
                .map(|((xi, c), w)| gaussian_log_grade(*xi, *c, *w))
                .sum(),
            Self::Affine { weights, bias } => {
                let dot: f64 = weights.iter().zip(x).map(|(w, xi)| w * xi).sum();
                dot + bias
            }
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        let (a, b) = match self {
            Self::QuadraticDiag { centers, widths } => {
                if widths.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                    return Err(Error::InvalidModel("gate widths must be > 0".into()));
                }
                (centers.len(), widths.len())
            }
            Self::Affine { weights, bias } => {
                if !bias.is_finite() {
                    return Err(Error::InvalidModel("non-finite gate bias".into()));
                }
                (weights.len(), d)
            }
        };
        if a != d || b != d {
            return Err(Error::InvalidModel(format!(
                "gate parameters have length {a}/{b}, expected {d}"
            )));
        }
        let finite = match self {
            Self::QuadraticDiag { centers, .. } => centers.iter().all(|v| v.is_finite()),
            Self::Affine { weights, .. } => weights.iter().all(|v| v.is_finite()),
        };
        if !finite {
            return Err(Error::InvalidModel("non-finite gate parameter".into()));
        }
        Ok(())
    }

    fn param_len(&self) -> usize {
        match self {
            Self::QuadraticDiag { centers, .. } => 2 * centers.len(),
            Self::Affine { weights, .. } => weights.len() + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MoeWire", into = "MoeWire")]
pub struct MoeModel {
    input_dim: usize,
    experts: Vec<Consequent>,
    gates: Vec<GateFunction>,
}

#[derive(Serialize, Deserialize)]
struct MoeWire {
    input_dim: usize,
    experts: Vec<Consequent>,
    gates: Vec<GateFunction>,
}

impl From<MoeModel> for MoeWire {
    fn from(m: MoeModel) -> Self {
        Self {
            input_dim: m.input_dim,
            experts: m.experts,
            gates: m.gates,
        }
    }
}

impl TryFrom<MoeWire> for MoeModel {
    type Error = Error;

    fn try_from(w: MoeWire) -> Result<Self> {
        Self::new(w.input_dim, w.experts, w.gates)
    }
}

impl MoeModel {
    pub fn new(
        input_dim: usize,
        experts: Vec<Consequent>,
        gates: Vec<GateFunction>,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidModel(
                "input dimension must be at least 1".into(),
            ));
        }
        if experts.is_empty() || experts.len() != gates.len() {
            return Err(Error::InvalidModel(format!(
                "{} experts and {} gates; need equal, non-zero counts",
                experts.len(),
                gates.len()
            )));
        }
        for (k, e) in experts.iter().enumerate() {
            match e {
                Consequent::Affine { slopes, intercept }
                    if slopes.len() == input_dim
                        && intercept.is_finite()
                        && slopes.iter().all(|s| s.is_finite()) => {}
                _ => {
                    return Err(Error::InvalidModel(format!(
                        "expert {k} must be affine with {input_dim} finite slopes"
                    )))
                }
            }
        }
        for (k, g) in gates.iter().enumerate() {
            g.validate(input_dim)
                .map_err(|e| Error::InvalidModel(format!("gate {k}: {e}")))?;
        }
        Ok(Self {
            input_dim,
            experts,
            gates,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn experts(&self) -> &[Consequent] {
        &self.experts
    }

    pub fn gates(&self) -> &[GateFunction] {
        &self.gates
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_dim(self.input_dim, x.len())?;
        match x.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Input(format!("non-finite value at feature {i}"))),
            None => Ok(()),
        }
    }

    pub fn gate_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.gate_weights_unchecked(x))
    }

    pub(crate) fn gate_weights_unchecked(&self, x: &[f64]) -> Vec<f64> {
        softmax(self.gates.iter().map(|g| g.value(x)).collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.gate_weights_unchecked(x)
            .iter()
            .zip(&self.experts)
            .map(|(p, e)| p * e.eval(x))
            .sum()
    }

    pub fn batch_predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        check_dim(self.input_dim, data.dim())?;
        Ok(data.rows().map(|x| self.predict_unchecked(x)).collect())
    }
}

/// Softmax with max subtraction.
pub fn softmax(mut v: Vec<f64>) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for g in &mut v {
        *g = (*g - m).exp();
        total += *g;
    }
    for g in &mut v {
        *g /= total;
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MoeLoss {
    /// `sum_n sum_k p_k(x_n) (y_n - y_k(x_n))^2`
    Competitive,
    /// `sum_n (y_n - y_hat(x_n))^2`
    Coupled,
    /// coupled + lambda * competitive
    Hybrid { lambda: f64 },
}

impl MoeLoss {
    pub const DEFAULT_LAMBDA: f64 = 0.5;

    fn validate(&self) -> Result<()> {
        if let Self::Hybrid { lambda } = self {
            if !(*lambda >= 0.0) || !lambda.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "lambda must be >= 0, got {lambda}"
                )));
            }
        }
        Ok(())
    }

    /// Weights `(coupled, competitive)`.
    fn mix(&self) -> (f64, f64) {
        match *self {
            Self::Competitive => (0.0, 1.0),
            Self::Coupled => (1.0, 0.0),
            Self::Hybrid { lambda } => (1.0, lambda),
        }
    }
}

fn check_data(model: &MoeModel, data: &Dataset) -> Result<()> {
    check_dim(model.input_dim, data.dim())
}

pub fn loss_competitive(model: &MoeModel, data: &Dataset) -> Result<f64> {
    check_data(model, data)?;
    Ok(data
        .rows()
        .zip(data.targets())
        .map(|(x, y)| {
            model
                .gate_weights_unchecked(x)
                .iter()
                .zip(&model.experts)
                .map(|(p, e)| {
                    let r = y - e.eval(x);
                    p * r * r
                })
                .sum::<f64>()
        })
        .sum())
}

pub fn loss_coupled(model: &MoeModel, data: &Dataset) -> Result<f64> {
    check_data(model, data)?;
    Ok(data
        .rows()
        .zip(data.targets())
        .map(|(x, y)| {
            let r = y - model.predict_unchecked(x);
            r * r
        })
        .sum())
}

pub fn loss_hybrid(model: &MoeModel, data: &Dataset, lambda: f64) -> Result<f64> {
    MoeLoss::Hybrid { lambda }.validate()?;
    Ok(loss_coupled(model, data)? + lambda * loss_competitive(model, data)?)
}

pub fn loss_value(model: &MoeModel, data: &Dataset, loss: MoeLoss) -> Result<f64> {
    match loss {
        MoeLoss::Competitive => loss_competitive(model, data),
        MoeLoss::Coupled => loss_coupled(model, data),
        MoeLoss::Hybrid { lambda } => loss_hybrid(model, data, lambda),
    }
}

/// Flat parameter vector: per expert its slopes and intercept, then its
/// gate's parameters (quadratic: centers then widths; affine: weights then bias).
pub fn params(model: &MoeModel) -> Vec<f64> {
    let mut p = Vec::new();
    for (e, g) in model.experts.iter().zip(&model.gates) {
        if let Consequent::Affine { slopes, intercept } = e {
            p.extend_from_slice(slopes);
            p.push(*intercept);
        }
        match g {
            GateFunction::QuadraticDiag { centers, widths } => {
                p.extend_from_slice(centers);
                p.extend_from_slice(widths);
            }
            GateFunction::Affine { weights, bias } => {
                p.extend_from_slice(weights);
                p.push(*bias);
            }
        }
    }
    p
}

/// Inverse of [`params`]; values are taken as given.
pub fn with_params(model: &MoeModel, p: &[f64]) -> MoeModel {
    let d = model.input_dim;
    let mut out = model.clone();
    let mut at = 0;
    for (e, g) in out.experts.iter_mut().zip(out.gates.iter_mut()) {
        *e = Consequent::affine(p[at..at + d].to_vec(), p[at + d]);
        at += d + 1;
        match g {
            GateFunction::QuadraticDiag { centers, widths } => {
                centers.copy_from_slice(&p[at..at + d]);
                widths.copy_from_slice(&p[at + d..at + 2 * d]);
            }
            GateFunction::Affine { weights, bias } => {
                weights.copy_from_slice(&p[at..at + d]);
                *bias = p[at + d];
            }
        }
        at += g.param_len();
    }
    out
}

/// Analytic gradient of the selected loss in the [`params`] layout. The
/// competitive term differentiates through the gate weights as well.
pub fn loss_gradient(model: &MoeModel, data: &Dataset, loss: MoeLoss) -> Result<Vec<f64>> {
    loss.validate()?;
    check_data(model, data)?;
    let d = model.input_dim;
    let k = model.num_experts();
    let (a_cpl, a_cmp) = loss.mix();
    let mut d_out = vec![0.0; k];
    let mut d_gate = vec![0.0; k];
    let mut grad = vec![0.0; params(model).len()];
    for (x, &y) in data.rows().zip(data.targets()) {
        let p = model.gate_weights_unchecked(x);
        let outs: Vec<f64> = model.experts.iter().map(|e| e.eval(x)).collect();
        let yhat: f64 = p.iter().zip(&outs).map(|(a, b)| a * b).sum();
        let r = y - yhat;
        let sq: Vec<f64> = outs.iter().map(|o| (y - o) * (y - o)).collect();
        let sq_mean: f64 = p.iter().zip(&sq).map(|(a, b)| a * b).sum();
        for j in 0..k {
            d_out[j] = a_cpl * (-2.0 * r * p[j]) + a_cmp * (-2.0 * p[j] * (y - outs[j]));
            d_gate[j] =
                a_cpl * (-2.0 * r * p[j] * (outs[j] - yhat)) + a_cmp * p[j] * (sq[j] - sq_mean);
        }
        let mut at = 0;
        for (j, g) in model.gates.iter().enumerate() {
            for i in 0..d {
                grad[at + i] += d_out[j] * x[i];
            }
            grad[at + d] += d_out[j];
            at += d + 1;
            match g {
                GateFunction::QuadraticDiag { centers, widths } => {
                    for i in 0..d {
                        let diff = x[i] - centers[i];
                        let w2 = widths[i] * widths[i];
                        grad[at + i] += d_gate[j] * diff / w2;
                        grad[at + d + i] += d_gate[j] * diff * diff / (w2 * widths[i]);
                    }
                }
                GateFunction::Affine { .. } => {
                    for i in 0..d {
                        grad[at + i] += d_gate[j] * x[i];
                    }
                    grad[at + d] += d_gate[j];
                }
            }
            at += g.param_len();
        }
    }
    Ok(grad)
}

fn clamp_gate_widths(model: &mut MoeModel) {
    for g in &mut model.gates {
        if let GateFunction::QuadraticDiag { widths, .. } = g {
            widths.iter_mut().for_each(|w| *w = clamp_width(*w));
        }
    }
}

/// Which parameter groups a gradient step may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Trainable {
    pub experts: bool,
    pub gates: bool,
}

/// Step halvings tried before an epoch gives up and leaves the model as is.
const MAX_HALVINGS: usize = 60;

pub(crate) fn train_selected(
    model: &MoeModel,
    data: &Dataset,
    loss: MoeLoss,
    config: &TrainConfig,
    trainable: Trainable,
) -> Result<(MoeModel, TrainHistory)> {
    config.validate()?;
    loss.validate()?;
    check_data(model, data)?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let d = model.input_dim;
    let step = config.learning_rate / data.len() as f64;
    let mut current = model.clone();
    let mut history = TrainHistory::default();
    for _ in 0..config.epochs {
        if config.learning_rate > 0.0 {
            let g = loss_gradient(&current, data, loss)?;
            let mut mask = vec![false; g.len()];
            let mut at = 0;
            for gate in &current.gates {
                let expert_end = at + d + 1;
                let gate_end = expert_end + gate.param_len();
                mask[at..expert_end].fill(trainable.experts);
                mask[expert_end..gate_end].fill(trainable.gates);
                at = gate_end;
            }
            let start = params(&current);
            let before = loss_value(&current, data, loss)?;
            let mut scale = 1.0;
            for _ in 0..MAX_HALVINGS {
                let p: Vec<f64> = start
                    .iter()
                    .zip(&g)
                    .zip(&mask)
                    .map(|((v, gi), m)| if *m { v - scale * step * gi } else { *v })
                    .collect();
                if p.iter().all(|v| v.is_finite()) {
                    let mut candidate = with_params(&current, &p);
                    clamp_gate_widths(&mut candidate);
                    let after = loss_value(&candidate, data, loss)?;
                    if after <= before {
                        current = candidate;
                        break;
                    }
                }
                scale *= 0.5;
            }
        }
        history.push(mse(&current.batch_predict(data)?, data.targets())?, None);
    }
    Ok((current, history))
}

/// Full-batch gradient descent on the chosen loss; experts and gates move
/// together each step. A step that would raise the loss is halved until it
/// does not.
pub fn train_moe(
    model: &MoeModel,
    data: &Dataset,
    loss: MoeLoss,
    config: &TrainConfig,
) -> Result<(MoeModel, TrainHistory)> {
    train_selected(
        model,
        data,
        loss,
        config,
        Trainable {
            experts: true,
            gates: true,
        },
    )
}

/// Entropy of the average gate-weight vector over a dataset.
pub fn expert_usage_entropy(model: &MoeModel, data: &Dataset) -> Result<f64> {
    check_data(model, data)?;
    if data.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    let mut usage = vec![0.0; model.num_experts()];
    for x in data.rows() {
        for (u, p) in usage.iter_mut().zip(model.gate_weights_unchecked(x)) {
            *u += p;
        }
    }
    let n = data.len() as f64;
    Ok(usage
        .iter()
        .map(|u| u / n)
        .filter(|u| *u > 0.0)
        .map(|u| -u * u.ln())
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub final_train_mse: f64,
    pub final_test_mse: Option<f64>,
    pub expert_usage_entropy: f64,
}

/// Trains one copy of `init` per lambda with the hybrid loss.
pub fn lambda_sweep(
    init: &MoeModel,
    train: &Dataset,
    test: Option<&Dataset>,
    lambdas: &[f64],
    config: &TrainConfig,
) -> Result<Vec<SweepPoint>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let (m, _) = train_moe(init, train, MoeLoss::Hybrid { lambda }, config)?;
            let final_test_mse = match test {
                Some(t) if !t.is_empty() => Some(mse(&m.batch_predict(t)?, t.targets())?),
                _ => None,
            };
            Ok(SweepPoint {
                lambda,
                final_train_mse: mse(&m.batch_predict(train)?, train.targets())?,
                final_test_mse,
                expert_usage_entropy: expert_usage_entropy(&m, train)?,
            })
        })
        .collect()
}

/// Conditions for a TSK model to have an MoE image: (1) Gaussian MFs over
/// every input with product t-norm and normalized (weighted-average)
/// aggregation; (2) the consequents become the experts unchanged.
pub fn moe_violations(model: &TskModel) -> Vec<Violation> {
    let mut v = Vec::new();
    if model.aggregation() != Aggregation::WeightedAverage {
        v.push(Violation::model(
            1,
            "aggregation must be weighted average (softmax gating normalizes)",
        ));
    }
    let d = model.input_dim();
    for (k, r) in model.rules().iter().enumerate() {
        if let Some(c) = r.antecedent.clauses().iter().find(|c| !c.mf.is_gaussian()) {
            v.push(Violation::rule(
                1,
                k,
                format!(
                    "feature {} uses a non-Gaussian membership function",
                    c.feature
                ),
            ));
        } else if !r.antecedent.is_full(d) {
            v.push(Violation::rule(
                1,
                k,
                "antecedent does not test every input exactly once",
            ));
        }
    }
    v
}

/// Quadratic gates with the rule's centers and widths; constant consequents
/// become affine experts with zero slopes.
pub fn tsk_to_moe(model: &TskModel) -> Result<MoeModel> {
    let v = moe_violations(model);
    if !v.is_empty() {
        return Err(Error::Constraint(v));
    }
    let d = model.input_dim();
    let mut experts = Vec::with_capacity(model.num_rules());
    let mut gates = Vec::with_capacity(model.num_rules());
    for r in model.rules() {
        let mut centers = vec![0.0; d];
        let mut widths = vec![0.0; d];
        for c in r.antecedent.clauses() {
            if let MembershipFunction::Gaussian { center, width } = c.mf {
                centers[c.feature] = center;
                widths[c.feature] = width;
            }
        }
        gates.push(GateFunction::QuadraticDiag { centers, widths });
        experts.push(r.consequent.to_affine(d));
    }
    MoeModel::new(d, experts, gates)
}

/// Inverse map; clauses come out in feature order.
pub fn moe_to_tsk(model: &MoeModel) -> Result<TskModel> {
    let v: Vec<Violation> = model
        .gates
        .iter()
        .enumerate()
        .filter(|(_, g)| matches!(g, GateFunction::Affine { .. }))
        .map(|(k, _)| Violation::rule(1, k, "affine gate has no Gaussian antecedent image"))
        .collect();
    if !v.is_empty() {
        return Err(Error::Constraint(v));
    }
    let rules = model
        .gates
        .iter()
        .zip(&model.experts)
        .map(|(g, e)| {
            let GateFunction::QuadraticDiag { centers, widths } = g else {
                unreachable!()
            };
            let clauses = centers
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| Clause::new(i, MembershipFunction::gaussian(*c, *w)))
                .collect();
            Ok(Rule::new(Antecedent::new(clauses)?, e.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    TskModel::new(model.input_dim, rules, Aggregation::WeightedAverage)
}

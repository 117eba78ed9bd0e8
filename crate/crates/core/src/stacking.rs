//! Stacking ensembles of affine base models, plus two rule-learning schemes
//! that read a TSK model as an adaptive stack: firing-weighted target averages
//! on a membership grid and independent weighted least squares per rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::anfis::grid_antecedents;
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{design_with_intercept, ridge_with_intercept, weighted_least_squares};
use crate::moe::{self, GateFunction, MoeLoss, MoeModel, Trainable};
use crate::rng::SeededRng;
use crate::train::{TrainConfig, TrainHistory};
use crate::tsk::{
    mse, Aggregation, Antecedent, Consequent, MembershipFunction, Rule, TskModel, EPS_FIRE,
};

pub const DEFAULT_RIDGE: f64 = 1e-8;

/// `n` draws with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = SeededRng::new(seed);
    (0..n).map(|_| rng.index(n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModel {
    pub slopes: Vec<f64>,
    pub intercept: f64,
    /// Seed of the bootstrap resample the model was fitted on.
    pub seed: u64,
    pub ridge: f64,
}

impl BaseModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let dot: f64 = self.slopes.iter().zip(x).map(|(a, xi)| a * xi).sum();
        dot + self.intercept
    }

    pub fn consequent(&self) -> Consequent {
        Consequent::affine(self.slopes.clone(), self.intercept)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Combiner {
    ConstantWeights {
        weights: Vec<f64>,
        intercept: f64,
    },
    /// Softmax over affine gates.
    AdaptiveGates {
        gates: Vec<GateFunction>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StackWire", into = "StackWire")]
pub struct StackModel {
    input_dim: usize,
    bases: Vec<BaseModel>,
    combiner: Combiner,
}

#[derive(Serialize, Deserialize)]
struct StackWire {
    input_dim: usize,
    bases: Vec<BaseModel>,
    combiner: Combiner,
}

impl From<StackModel> for StackWire {
    fn from(m: StackModel) -> Self {
        Self {
            input_dim: m.input_dim,
            bases: m.bases,
            combiner: m.combiner,
        }
    }
}

impl TryFrom<StackWire> for StackModel {
    type Error = Error;

    fn try_from(w: StackWire) -> Result<Self> {
        Self::new(w.input_dim, w.bases, w.combiner)
    }
}

impl StackModel {
    pub fn new(input_dim: usize, bases: Vec<BaseModel>, combiner: Combiner) -> Result<Self> {
        if bases.is_empty() {
            return Err(Error::InvalidModel(
                "a stack needs at least one base model".into(),
            ));
        }
        if let Some(b) = bases.iter().find(|b| b.slopes.len() != input_dim) {
            return Err(Error::InvalidModel(format!(
                "base model has {} coefficients for input dimension {input_dim}",
                b.slopes.len()
            )));
        }
        let arity = match &combiner {
            Combiner::ConstantWeights { weights, .. } => weights.len(),
            Combiner::AdaptiveGates { gates } => {
                if gates
                    .iter()
                    .any(|g| !matches!(g, GateFunction::Affine { .. }))
                {
                    return Err(Error::InvalidModel("stack gates must be affine".into()));
                }
                gates.len()
            }
        };
        if arity != bases.len() {
            return Err(Error::InvalidModel(format!(
                "combiner arity {arity} does not match {} bases",
                bases.len()
            )));
        }
        let stack = Self {
            input_dim,
            bases,
            combiner,
        };
        if let Combiner::AdaptiveGates { .. } = stack.combiner {
            stack.to_moe()?;
        }
        Ok(stack)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn bases(&self) -> &[BaseModel] {
        &self.bases
    }

    pub fn combiner(&self) -> &Combiner {
        &self.combiner
    }

    /// The adaptive blend as a mixture of experts whose experts are the bases.
    pub fn to_moe(&self) -> Result<MoeModel> {
        match &self.combiner {
            Combiner::AdaptiveGates { gates } => MoeModel::new(
                self.input_dim,
                self.bases.iter().map(BaseModel::consequent).collect(),
                gates.clone(),
            ),
            Combiner::ConstantWeights { .. } => Err(Error::InvalidArgument(
                "constant-weight stacks have no gates".into(),
            )),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim, x.len())?;
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        match &self.combiner {
            Combiner::ConstantWeights { weights, intercept } => {
                let s: f64 = weights
                    .iter()
                    .zip(&self.bases)
                    .map(|(w, b)| w * b.predict(x))
                    .sum();
                intercept + s
            }
            Combiner::AdaptiveGates { gates } => {
                let p = moe::softmax(gates.iter().map(|g| g.value(x)).collect());
                p.iter()
                    .zip(&self.bases)
                    .map(|(p, b)| p * b.predict(x))
                    .sum()
            }
        }
    }

    pub fn batch_predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        check_dim(self.input_dim, data.dim())?;
        Ok(data.rows().map(|x| self.predict_unchecked(x)).collect())
    }
}

pub fn stack_predict(model: &StackModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

/// `k` ridge-regularized affine fits, base `j` on the bootstrap resample drawn
/// with seed `seed + j`.
pub fn fit_bases(data: &Dataset, k: usize, seed: u64, ridge: f64) -> Result<Vec<BaseModel>> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "need at least one base model".into(),
        ));
    }
    if data.len() < 2 {
        return Err(Error::Input(format!(
            "bootstrap fitting needs at least 2 examples, got {}",
            data.len()
        )));
    }
    let d = data.dim();
    (0..k as u64)
        .map(|j| {
            let s = seed.wrapping_add(j);
            let sample = data.subset(&bootstrap_indices(data.len(), s));
            let a = design_with_intercept(sample.rows(), d);
            let c = ridge_with_intercept(&a, &DVector::from_column_slice(sample.targets()), ridge)?;
            Ok(BaseModel {
                slopes: c.as_slice()[..d].to_vec(),
                intercept: c[d],
                seed: s,
                ridge,
            })
        })
        .collect()
}

fn check_bases(bases: &[BaseModel], data: &Dataset) -> Result<()> {
    if bases.is_empty() {
        return Err(Error::InvalidArgument("no base models".into()));
    }
    if data.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    for b in bases {
        check_dim(data.dim(), b.slopes.len())?;
    }
    Ok(())
}

/// Least-squares weights and intercept over the base-prediction columns.
pub fn fit_constant_stack(bases: &[BaseModel], data: &Dataset, ridge: f64) -> Result<StackModel> {
    check_bases(bases, data)?;
    let k = bases.len();
    let mut a = DMatrix::zeros(data.len(), k + 1);
    for (n, x) in data.rows().enumerate() {
        for (j, b) in bases.iter().enumerate() {
            a[(n, j)] = b.predict(x);
        }
        a[(n, k)] = 1.0;
    }
    let c = ridge_with_intercept(&a, &DVector::from_column_slice(data.targets()), ridge)?;
    StackModel::new(
        data.dim(),
        bases.to_vec(),
        Combiner::ConstantWeights {
            weights: c.as_slice()[..k].to_vec(),
            intercept: c[k],
        },
    )
}

/// Softmax-of-affine gates over frozen bases, trained by full-batch gradient
/// descent on the squared error of the blended prediction. Gates start equal.
pub fn fit_adaptive_stack(
    bases: &[BaseModel],
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(StackModel, TrainHistory)> {
    check_bases(bases, data)?;
    let d = data.dim();
    let init = StackModel::new(
        d,
        bases.to_vec(),
        Combiner::AdaptiveGates {
            gates: vec![GateFunction::constant(d, 0.0); bases.len()],
        },
    )?;
    let (trained, history) = moe::train_selected(
        &init.to_moe()?,
        data,
        MoeLoss::Coupled,
        config,
        Trainable {
            experts: false,
            gates: true,
        },
    )?;
    let stack = StackModel::new(
        d,
        bases.to_vec(),
        Combiner::AdaptiveGates {
            gates: trained.gates().to_vec(),
        },
    )?;
    Ok((stack, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseReport {
    pub seed: u64,
    /// Slopes followed by the intercept.
    pub coeffs: Vec<f64>,
    pub train_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackReport {
    pub bases: Vec<BaseReport>,
    pub combiner: Combiner,
    pub stack_train_mse: f64,
    pub stack_test_mse: Option<f64>,
}

pub fn stack_report(
    model: &StackModel,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<StackReport> {
    check_dim(model.input_dim, train.dim())?;
    let bases = model
        .bases
        .iter()
        .map(|b| {
            let pred: Vec<f64> = train.rows().map(|x| b.predict(x)).collect();
            let mut coeffs = b.slopes.clone();
            coeffs.push(b.intercept);
            Ok(BaseReport {
                seed: b.seed,
                coeffs,
                train_mse: mse(&pred, train.targets())?,
            })
        })
        .collect::<Result<_>>()?;
    let stack_test_mse = match test {
        Some(t) if !t.is_empty() => Some(mse(&model.batch_predict(t)?, t.targets())?),
        _ => None,
    };
    Ok(StackReport {
        bases,
        combiner: model.combiner.clone(),
        stack_train_mse: mse(&model.batch_predict(train)?, train.targets())?,
        stack_test_mse,
    })
}

pub const DEFAULT_NOZAKI_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NozakiFit {
    pub model: TskModel,
    /// Grid cells with no firing mass; their consequent is the global target mean.
    pub flagged: Vec<usize>,
}

/// One rule per grid cell with constant consequent
/// `c_k = sum_n f_k(x_n)^alpha y_n / sum_n f_k(x_n)^alpha`.
pub fn nozaki_fit(
    data: &Dataset,
    mf_grid: &[Vec<MembershipFunction>],
    alpha: f64,
) -> Result<NozakiFit> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    if data.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    check_dim(mf_grid.len(), data.dim())?;
    let antecedents = grid_antecedents(mf_grid)?;
    let y = data.targets();
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(*v), h.max(*v))
        });
    let mean = data.target_mean().expect("non-empty dataset");
    let mut flagged = Vec::new();
    let mut rules = Vec::with_capacity(antecedents.len());
    for (k, ante) in antecedents.into_iter().enumerate() {
        let lw: Vec<f64> = data.rows().map(|x| alpha * ante.log_firing(x)).collect();
        let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let c = if m == f64::NEG_INFINITY {
            None
        } else {
            let w: Vec<f64> = lw.iter().map(|l| (l - m).exp()).collect();
            let total: f64 = w.iter().sum();
            if m + total.ln() < EPS_FIRE.ln() {
                None
            } else {
                let c: f64 = w.iter().zip(y).map(|(w, y)| (w / total) * y).sum();
                Some(c.clamp(lo, hi))
            }
        };
        let c = c.unwrap_or_else(|| {
            flagged.push(k);
            mean
        });
        rules.push(Rule::new(ante, Consequent::Constant(c)));
    }
    Ok(NozakiFit {
        model: TskModel::new(data.dim(), rules, Aggregation::WeightedAverage)?,
        flagged,
    })
}

/// Independent weighted least-squares affine fit per rule, weighted by the
/// rule's raw firing levels. A rule whose firing mass is below `d + 2` or
/// whose weighted system is rank deficient is reported as degenerate.
pub fn local_rule_fit(data: &Dataset, antecedents: Vec<Antecedent>) -> Result<TskModel> {
    if data.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    if antecedents.is_empty() {
        return Err(Error::InvalidArgument("no antecedents given".into()));
    }
    let d = data.dim();
    let a = design_with_intercept(data.rows(), d);
    let b = DVector::from_column_slice(data.targets());
    let mut degenerate = Vec::new();
    let mut rules = Vec::with_capacity(antecedents.len());
    for (k, ante) in antecedents.into_iter().enumerate() {
        if let Some(c) = ante.clauses().iter().find(|c| c.feature >= d) {
            return Err(Error::InvalidArgument(format!(
                "rule {k} tests feature {} of a {d}-dimensional dataset",
                c.feature
            )));
        }
        let w: Vec<f64> = data.rows().map(|x| ante.log_firing(x).exp()).collect();
        let mass: f64 = w.iter().sum();
        let fit = if mass >= (d + 2) as f64 {
            weighted_least_squares(&a, &b, &w).ok()
        } else {
            None
        };
        match fit {
            Some(c) => rules.push(Rule::new(
                ante,
                Consequent::affine(c.as_slice()[..d].to_vec(), c[d]),
            )),
            None => degenerate.push(k),
        }
    }
    if !degenerate.is_empty() {
        return Err(Error::DegenerateRules {
            rules: degenerate,
            reason: format!(
                "firing mass below {} or rank-deficient weighted system",
                d + 2
            ),
        });
    }
    TskModel::new(d, rules, Aggregation::WeightedAverage)
}

//! TSK fuzzy system data model and inference.
//!
//! A rule `R_k` reads "IF x_i1 is X_k,1 AND ... THEN y = g_k(x)". Its firing
//! level is the product of the clause grades, accumulated in log space so that
//! rules with many clauses do not underflow before normalization. The model
//! output is either the firing-weighted average of the consequents or the raw
//! firing-weighted sum.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};

/// Total firing below which normalized firings fall back to uniform `1/K`.
pub const EPS_FIRE: f64 = 1e-300;

/// Smallest width any fitted or trained Gaussian may take.
pub const MIN_WIDTH: f64 = 1e-6;

pub(crate) fn clamp_width(w: f64) -> f64 {
    if w.is_nan() || w < MIN_WIDTH {
        MIN_WIDTH
    } else {
        w
    }
}

/// `ln(1 + e^u)` without overflow.
pub(crate) fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// Log-grade of `exp(-(x-c)^2 / (2 w^2))`.
///
/// The denominator is formed as `2 * w * w`, which is bit-identical to
/// `2 * (w * w)`; the RBFN and MoE forms rely on that.
#[inline]
pub(crate) fn gaussian_log_grade(x: f64, center: f64, width: f64) -> f64 {
    let d = x - center;
    -(d * d) / (2.0 * width * width)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MembershipFunction {
    /// `exp(-(x-c)^2 / (2 width^2))`
    Gaussian { center: f64, width: f64 },
    /// `1 / (1 + exp(-steepness (x - threshold)))`
    SigmoidUp { steepness: f64, threshold: f64 },
    /// `1 / (1 + exp(steepness (x - threshold)))`
    SigmoidDown { steepness: f64, threshold: f64 },
}

impl MembershipFunction {
    pub fn gaussian(center: f64, width: f64) -> Self {
        Self::Gaussian { center, width }
    }

    pub fn sigmoid_up(steepness: f64, threshold: f64) -> Self {
        Self::SigmoidUp {
            steepness,
            threshold,
        }
    }

    pub fn sigmoid_down(steepness: f64, threshold: f64) -> Self {
        Self::SigmoidDown {
            steepness,
            threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Gaussian { center, width } => {
                if !center.is_finite() || !width.is_finite() || width <= 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "gaussian needs finite center and width > 0 (center={center}, width={width})"
                    )));
                }
            }
            Self::SigmoidUp {
                steepness,
                threshold,
            }
            | Self::SigmoidDown {
                steepness,
                threshold,
            } => {
                if !threshold.is_finite() || !steepness.is_finite() || steepness <= 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "sigmoid needs finite threshold and steepness > 0 (steepness={steepness}, threshold={threshold})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, Self::Gaussian { .. })
    }

    /// Membership grade at `x`.
    pub fn grade(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Input(format!("non-finite input {x}")));
        }
        Ok(self.grade_unchecked(x))
    }

    pub(crate) fn grade_unchecked(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { center, width } => gaussian_log_grade(x, center, width).exp(),
            Self::SigmoidUp {
                steepness,
                threshold,
            } => 1.0 / (1.0 + (-steepness * (x - threshold)).exp()),
            Self::SigmoidDown {
                steepness,
                threshold,
            } => 1.0 / (1.0 + (steepness * (x - threshold)).exp()),
        }
    }

    pub(crate) fn log_grade(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { center, width } => gaussian_log_grade(x, center, width),
            Self::SigmoidUp {
                steepness,
                threshold,
            } => -softplus(-steepness * (x - threshold)),
            Self::SigmoidDown {
                steepness,
                threshold,
            } => -softplus(steepness * (x - threshold)),
        }
    }
}

/// `x_feature is mf`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clause {
    pub feature: usize,
    pub mf: MembershipFunction,
}

impl Clause {
    pub fn new(feature: usize, mf: MembershipFunction) -> Self {
        Self { feature, mf }
    }
}

/// Conjunction of clauses.
///
/// Ordinary antecedents test each feature at most once. Antecedents produced
/// from tree paths may test a feature repeatedly (`x0 < 8` then `x0 < 3`); they
/// are flagged with `path` and their repeated clauses simply multiply.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Antecedent {
    clauses: Vec<Clause>,
    path: bool,
}

impl Antecedent {
    pub fn new(clauses: Vec<Clause>) -> Result<Self> {
        let a = Self {
            clauses,
            path: false,
        };
        a.validate_distinct()?;
        Ok(a)
    }

    /// Antecedent that fires at level 1 everywhere.
    pub fn vacuous() -> Self {
        Self::default()
    }

    /// Path antecedent; the same feature may appear in several clauses.
    pub fn path(clauses: Vec<Clause>) -> Self {
        Self {
            clauses,
            path: true,
        }
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn is_path(&self) -> bool {
        self.path
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub(crate) fn clauses_mut(&mut self) -> &mut [Clause] {
        &mut self.clauses
    }

    fn validate_distinct(&self) -> Result<()> {
        if self.path {
            return Ok(());
        }
        for (i, a) in self.clauses.iter().enumerate() {
            if self.clauses[..i].iter().any(|b| b.feature == a.feature) {
                return Err(Error::InvalidModel(format!(
                    "feature {} appears twice in one antecedent",
                    a.feature
                )));
            }
        }
        Ok(())
    }

    /// True when every feature in `0..d` is tested exactly once.
    pub fn is_full(&self, d: usize) -> bool {
        if self.clauses.len() != d {
            return false;
        }
        let mut seen = vec![false; d];
        for c in &self.clauses {
            if c.feature >= d || seen[c.feature] {
                return false;
            }
            seen[c.feature] = true;
        }
        true
    }

    pub(crate) fn log_firing(&self, x: &[f64]) -> f64 {
        self.clauses
            .iter()
            .map(|c| c.mf.log_grade(x[c.feature]))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Consequent {
    Constant(f64),
    Affine { slopes: Vec<f64>, intercept: f64 },
}

impl Consequent {
    pub fn affine(slopes: Vec<f64>, intercept: f64) -> Self {
        Self::Affine { slopes, intercept }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }

    /// `y_k(x)`; callers guarantee `x` has the model dimension.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Affine { slopes, intercept } => {
                let dot: f64 = slopes.iter().zip(x).map(|(a, xi)| a * xi).sum();
                dot + intercept
            }
        }
    }

    /// Same function expressed with affine parameters.
    pub fn to_affine(&self, d: usize) -> Self {
        match self {
            Self::Constant(c) => Self::Affine {
                slopes: vec![0.0; d],
                intercept: *c,
            },
            a => a.clone(),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            Self::Constant(c) if !c.is_finite() => Err(Error::InvalidModel(format!(
                "non-finite constant consequent {c}"
            ))),
            Self::Affine { slopes, intercept } => {
                if slopes.len() != d {
                    return Err(Error::InvalidModel(format!(
                        "affine consequent has {} slopes for input dimension {d}",
                        slopes.len()
                    )));
                }
                if !intercept.is_finite() || slopes.iter().any(|s| !s.is_finite()) {
                    return Err(Error::InvalidModel(
                        "non-finite affine consequent coefficient".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub antecedent: Antecedent,
    pub consequent: Consequent,
}

impl Rule {
    pub fn new(antecedent: Antecedent, consequent: Consequent) -> Self {
        Self {
            antecedent,
            consequent,
        }
    }

    /// Product of the clause grades at `x`.
    pub fn firing_level(&self, x: &[f64]) -> Result<f64> {
        if let Some(c) = self
            .antecedent
            .clauses
            .iter()
            .find(|c| c.feature >= x.len())
        {
            return Err(Error::DimensionMismatch {
                expected: c.feature + 1,
                found: x.len(),
            });
        }
        check_finite(x)?;
        Ok(self.antecedent.log_firing(x).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    WeightedAverage,
    WeightedSum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TskModel {
    input_dim: usize,
    rules: Vec<Rule>,
    aggregation: Aggregation,
}

impl TskModel {
    pub fn new(input_dim: usize, rules: Vec<Rule>, aggregation: Aggregation) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidModel(
                "input dimension must be at least 1".into(),
            ));
        }
        if rules.is_empty() {
            return Err(Error::InvalidModel(
                "a model needs at least one rule".into(),
            ));
        }
        for (k, r) in rules.iter().enumerate() {
            let ctx = |e: Error| Error::InvalidModel(format!("rule {k}: {e}"));
            r.antecedent.validate_distinct().map_err(ctx)?;
            for c in &r.antecedent.clauses {
                if c.feature >= input_dim {
                    return Err(Error::InvalidModel(format!(
                        "rule {k}: clause on feature {} but input dimension is {input_dim}",
                        c.feature
                    )));
                }
                c.mf.validate().map_err(ctx)?;
            }
            r.consequent.validate(input_dim).map_err(ctx)?;
        }
        Ok(Self {
            input_dim,
            rules,
            aggregation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn num_rules(&self) -> usize {
        self.rules.len()
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub(crate) fn rules_mut(&mut self) -> &mut [Rule] {
        &mut self.rules
    }

    pub fn into_rules(self) -> Vec<Rule> {
        self.rules
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_dim(self.input_dim, x.len())?;
        check_finite(x)
    }

    pub(crate) fn log_firings_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.rules
            .iter()
            .map(|r| r.antecedent.log_firing(x))
            .collect()
    }

    /// Raw firing levels `f_k(x)`.
    pub fn firings(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self
            .log_firings_unchecked(x)
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    /// `f_k / sum_j f_j`, uniform when the total firing underflows.
    pub fn normalized_firings(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(normalize(self.firings_unchecked(x)))
    }

    pub(crate) fn firings_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.rules
            .iter()
            .map(|r| r.antecedent.log_firing(x).exp())
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let raw = self.firings_unchecked(x);
        let weights = match self.aggregation {
            Aggregation::WeightedAverage => normalize(raw),
            Aggregation::WeightedSum => raw,
        };
        weights
            .iter()
            .zip(&self.rules)
            .map(|(w, r)| w * r.consequent.eval(x))
            .sum()
    }

    pub fn batch_predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        check_dim(self.input_dim, data.dim())?;
        Ok(data.rows().map(|x| self.predict_unchecked(x)).collect())
    }
}

/// Normalizes raw firings in place, falling back to uniform weights when the
/// total is below [`EPS_FIRE`].
pub(crate) fn normalize(mut f: Vec<f64>) -> Vec<f64> {
    let total: f64 = f.iter().sum();
    if total >= EPS_FIRE && total.is_finite() {
        for v in &mut f {
            *v /= total;
        }
    } else {
        let u = 1.0 / f.len() as f64;
        f.iter_mut().for_each(|v| *v = u);
    }
    f
}

/// True when the raw firings would trigger the uniform fallback.
pub(crate) fn is_degenerate_total(f: &[f64]) -> bool {
    let total: f64 = f.iter().sum();
    !(total >= EPS_FIRE && total.is_finite())
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Input(format!("non-finite value at feature {i}"))),
        None => Ok(()),
    }
}

/// Mean squared residual.
pub fn mse(pred: &[f64], targets: &[f64]) -> Result<f64> {
    check_dim(targets.len(), pred.len())?;
    if pred.is_empty() {
        return Err(Error::Input("mse of an empty sample".into()));
    }
    let sse: f64 = pred
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sse / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(c: f64, w: f64) -> MembershipFunction {
        MembershipFunction::gaussian(c, w)
    }

    #[test]
    fn mf_examples() {
        assert_eq!(g(0.0, 1.0).grade(0.0).unwrap(), 1.0);
        assert!((g(0.0, 1.0).grade(1.0).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert!((g(0.0, 1.0).grade(1.0).unwrap() - 0.60653).abs() < 1e-5);
        assert_eq!(
            MembershipFunction::sigmoid_up(2.0, 5.0).grade(5.0).unwrap(),
            0.5
        );
        assert_eq!(
            MembershipFunction::sigmoid_down(2.0, 5.0)
                .grade(5.0)
                .unwrap(),
            0.5
        );
    }

    #[test]
    fn mf_rejects_non_finite_input() {
        assert!(matches!(g(0.0, 1.0).grade(f64::NAN), Err(Error::Input(_))));
        assert!(g(0.0, 1.0).grade(f64::INFINITY).is_err());
    }

    #[test]
    fn mf_validation() {
        assert!(g(0.0, 0.0).validate().is_err());
        assert!(g(0.0, -1.0).validate().is_err());
        assert!(MembershipFunction::sigmoid_up(0.0, 1.0).validate().is_err());
        assert!(MembershipFunction::sigmoid_down(1.0, f64::NAN)
            .validate()
            .is_err());
    }

    #[test]
    fn sigmoid_log_grade_is_stable() {
        let up = MembershipFunction::sigmoid_up(1e4, 0.0);
        assert!((up.log_grade(-1.0) - (-1e4)).abs() < 1e-9);
        assert!(up.log_grade(1.0).abs() < 1e-300);
        let down = MembershipFunction::sigmoid_down(3.0, 1.0);
        for x in [-2.0, 0.5, 1.0, 4.0] {
            let direct = down.grade_unchecked(x).ln();
            assert!((down.log_grade(x) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn firing_examples() {
        let vac = Rule::new(Antecedent::vacuous(), Consequent::Constant(0.0));
        assert_eq!(vac.firing_level(&[3.0, -2.0]).unwrap(), 1.0);

        let one = Rule::new(
            Antecedent::new(vec![Clause::new(0, g(0.0, 1.0))]).unwrap(),
            Consequent::Constant(0.0),
        );
        assert_eq!(one.firing_level(&[0.0, 7.0]).unwrap(), 1.0);

        let two = Rule::new(
            Antecedent::new(vec![
                Clause::new(0, g(0.0, 1.0)),
                Clause::new(1, g(0.0, 1.0)),
            ])
            .unwrap(),
            Consequent::Constant(0.0),
        );
        let oracle = g(0.0, 1.0).grade(1.0).unwrap() * g(0.0, 1.0).grade(1.0).unwrap();
        assert!((two.firing_level(&[1.0, 1.0]).unwrap() - oracle).abs() < 1e-15);
        assert!((two.firing_level(&[1.0, 1.0]).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(matches!(
            two.firing_level(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn antecedent_rejects_repeated_feature() {
        let c = Clause::new(0, g(0.0, 1.0));
        assert!(Antecedent::new(vec![c, c]).is_err());
        assert_eq!(Antecedent::path(vec![c, c]).len(), 2);
    }

    #[test]
    fn model_validation() {
        assert!(TskModel::new(1, vec![], Aggregation::WeightedAverage).is_err());
        let bad_feature = Rule::new(
            Antecedent::new(vec![Clause::new(3, g(0.0, 1.0))]).unwrap(),
            Consequent::Constant(1.0),
        );
        assert!(TskModel::new(2, vec![bad_feature], Aggregation::WeightedAverage).is_err());
        let bad_slopes = Rule::new(Antecedent::vacuous(), Consequent::affine(vec![1.0], 0.0));
        assert!(TskModel::new(2, vec![bad_slopes], Aggregation::WeightedAverage).is_err());
        let empty_dim = Rule::new(Antecedent::vacuous(), Consequent::Constant(1.0));
        assert!(TskModel::new(0, vec![empty_dim], Aggregation::WeightedAverage).is_err());
    }

    #[test]
    fn predict_examples() {
        let single = TskModel::new(
            2,
            vec![Rule::new(Antecedent::vacuous(), Consequent::Constant(3.7))],
            Aggregation::WeightedAverage,
        )
        .unwrap();
        assert_eq!(single.predict(&[10.0, -4.0]).unwrap(), 3.7);
        assert_eq!(single.normalized_firings(&[0.0, 0.0]).unwrap(), vec![1.0]);

        let ante = Antecedent::new(vec![Clause::new(0, g(1.0, 2.0))]).unwrap();
        let twin = TskModel::new(
            1,
            vec![
                Rule::new(ante.clone(), Consequent::Constant(1.0)),
                Rule::new(ante, Consequent::Constant(3.0)),
            ],
            Aggregation::WeightedAverage,
        )
        .unwrap();
        assert_eq!(twin.normalized_firings(&[0.3]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(twin.predict(&[0.3]).unwrap(), 2.0);
        assert!(twin.predict(&[0.3, 1.0]).is_err());
        assert!(twin.predict(&[f64::NAN]).is_err());
    }

    #[test]
    fn weighted_sum_uses_raw_firings() {
        let m = TskModel::new(
            1,
            vec![Rule::new(
                Antecedent::new(vec![Clause::new(0, g(0.0, 1.0))]).unwrap(),
                Consequent::Constant(2.0),
            )],
            Aggregation::WeightedSum,
        )
        .unwrap();
        let x = [1.0];
        assert!((m.predict(&x).unwrap() - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn uniform_fallback_when_nothing_fires() {
        let far = |c: f64, y: f64| {
            Rule::new(
                Antecedent::new(vec![Clause::new(0, g(c, 1e-3))]).unwrap(),
                Consequent::Constant(y),
            )
        };
        let m = TskModel::new(
            1,
            vec![far(0.0, 1.0), far(1.0, 5.0)],
            Aggregation::WeightedAverage,
        )
        .unwrap();
        assert_eq!(m.normalized_firings(&[500.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(m.predict(&[500.0]).unwrap(), 3.0);
    }

    #[test]
    fn mse_examples() {
        let t = [1.0, -2.0, 0.5];
        assert_eq!(mse(&t, &t).unwrap(), 0.0);
        let p: Vec<f64> = t.iter().map(|v| v + 1.0).collect();
        assert_eq!(mse(&p, &t).unwrap(), 1.0);
        assert!(mse(&p[..2], &t).is_err());
        assert!(mse(&[], &[]).is_err());
    }
}

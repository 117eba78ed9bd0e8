//! Radial basis function networks and their exact conversion to TSK models.
//!
//! A receptive unit responds with `exp(-sum_i (x_i - c_i)^2 / s_i)`, where the
//! spread `s_i = sigma_i^2` is either shared by all of the unit's inputs
//! (standard RBFN) or set per input (generalized RBFN, which may also connect a
//! unit to a subset of the inputs and carry an affine output).
//!
//! The TSK Gaussian divides by `2 w^2` while the RBF unit divides by `sigma^2`,
//! so the converters map `s = 2 w^2` and `w = sqrt(s / 2)`. Spreads are stored
//! squared because that pair of maps is an exact floating-point bijection
//! (`sqrt(fl(w * w)) == w` under round-to-nearest), which a `sigma = sqrt(2) w`
//! parameterization cannot give.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result, Violation};
use crate::tsk::{
    normalize, Aggregation, Antecedent, Clause, Consequent, MembershipFunction, Rule, TskModel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spread {
    Shared(f64),
    PerFeature(Vec<f64>),
}

impl Spread {
    #[inline]
    fn at(&self, j: usize) -> f64 {
        match self {
            Self::Shared(s) => *s,
            Self::PerFeature(v) => v[j],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RbfUnitWire", into = "RbfUnitWire")]
pub struct RbfUnit {
    features: Vec<usize>,
    centers: Vec<f64>,
    spread: Spread,
    output: Consequent,
}

#[derive(Serialize, Deserialize)]
struct RbfUnitWire {
    features: Vec<usize>,
    centers: Vec<f64>,
    spread: Spread,
    output: Consequent,
}

impl From<RbfUnit> for RbfUnitWire {
    fn from(u: RbfUnit) -> Self {
        Self {
            features: u.features,
            centers: u.centers,
            spread: u.spread,
            output: u.output,
        }
    }
}

impl TryFrom<RbfUnitWire> for RbfUnit {
    type Error = Error;

    fn try_from(w: RbfUnitWire) -> Result<Self> {
        Self::new(w.features, w.centers, w.spread, w.output)
    }
}

impl RbfUnit {
    pub fn new(
        features: Vec<usize>,
        centers: Vec<f64>,
        spread: Spread,
        output: Consequent,
    ) -> Result<Self> {
        if features.len() != centers.len() {
            return Err(Error::InvalidModel(format!(
                "{} features but {} centers",
                features.len(),
                centers.len()
            )));
        }
        for (j, f) in features.iter().enumerate() {
            if features[..j].contains(f) {
                return Err(Error::InvalidModel(format!("feature {f} connected twice")));
            }
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidModel("non-finite center".into()));
        }
        let ok = |s: &f64| s.is_finite() && *s > 0.0;
        match &spread {
            Spread::Shared(s) if !ok(s) => {
                return Err(Error::InvalidModel(format!("spread must be > 0, got {s}")))
            }
            Spread::PerFeature(v) => {
                if v.len() != features.len() {
                    return Err(Error::InvalidModel(format!(
                        "{} spreads for {} features",
                        v.len(),
                        features.len()
                    )));
                }
                if let Some(s) = v.iter().find(|s| !ok(s)) {
                    return Err(Error::InvalidModel(format!("spread must be > 0, got {s}")));
                }
            }
            _ => {}
        }
        Ok(Self {
            features,
            centers,
            spread,
            output,
        })
    }

    /// Standard unit: shared width `sigma` over the given features.
    pub fn with_shared_width(
        features: Vec<usize>,
        centers: Vec<f64>,
        sigma: f64,
        output: Consequent,
    ) -> Result<Self> {
        Self::new(features, centers, Spread::Shared(sigma * sigma), output)
    }

    pub fn features(&self) -> &[usize] {
        &self.features
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn spread(&self) -> &Spread {
        &self.spread
    }

    pub fn output(&self) -> &Consequent {
        &self.output
    }

    /// Widths `sigma_i` per connected feature.
    pub fn widths(&self) -> Vec<f64> {
        (0..self.features.len())
            .map(|j| self.spread.at(j).sqrt())
            .collect()
    }

    fn log_response(&self, x: &[f64]) -> f64 {
        self.features
            .iter()
            .zip(&self.centers)
            .enumerate()
            .map(|(j, (&f, &c))| {
                let d = x[f] - c;
                -(d * d) / self.spread.at(j)
            })
            .sum()
    }

    pub fn response(&self, x: &[f64]) -> Result<f64> {
        if let Some(&f) = self.features.iter().find(|&&f| f >= x.len()) {
            return Err(Error::DimensionMismatch {
                expected: f + 1,
                found: x.len(),
            });
        }
        Ok(self.log_response(x).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RbfnWire", into = "RbfnWire")]
pub struct RbfnModel {
    input_dim: usize,
    units: Vec<RbfUnit>,
    normalized: bool,
}

#[derive(Serialize, Deserialize)]
struct RbfnWire {
    input_dim: usize,
    normalized: bool,
    units: Vec<RbfUnit>,
}

impl From<RbfnModel> for RbfnWire {
    fn from(m: RbfnModel) -> Self {
        Self {
            input_dim: m.input_dim,
            normalized: m.normalized,
            units: m.units,
        }
    }
}

impl TryFrom<RbfnWire> for RbfnModel {
    type Error = Error;

    fn try_from(w: RbfnWire) -> Result<Self> {
        Self::new(w.input_dim, w.units, w.normalized)
    }
}

impl RbfnModel {
    pub fn new(input_dim: usize, units: Vec<RbfUnit>, normalized: bool) -> Result<Self> {
        if input_dim == 0 || units.is_empty() {
            return Err(Error::InvalidModel(
                "an RBFN needs input_dim >= 1 and at least one unit".into(),
            ));
        }
        for (k, u) in units.iter().enumerate() {
            if let Some(f) = u.features.iter().find(|&&f| f >= input_dim) {
                return Err(Error::InvalidModel(format!(
                    "unit {k}: feature {f} outside input dimension {input_dim}"
                )));
            }
            if let Consequent::Affine { slopes, .. } = &u.output {
                if slopes.len() != input_dim {
                    return Err(Error::InvalidModel(format!(
                        "unit {k}: affine output has {} slopes for input dimension {input_dim}",
                        slopes.len()
                    )));
                }
            }
        }
        Ok(Self {
            input_dim,
            units,
            normalized,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn units(&self) -> &[RbfUnit] {
        &self.units
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim, x.len())?;
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite value at feature {i}")));
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let raw: Vec<f64> = self.units.iter().map(|u| u.log_response(x).exp()).collect();
        let w = if self.normalized { normalize(raw) } else { raw };
        w.iter()
            .zip(&self.units)
            .map(|(w, u)| w * u.output.eval(x))
            .sum()
    }

    pub fn batch_predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        check_dim(self.input_dim, data.dim())?;
        Ok(data.rows().map(|x| self.predict_unchecked(x)).collect())
    }

    /// True when every unit sees all inputs with one shared spread and a
    /// constant output.
    pub fn is_standard(&self) -> bool {
        self.units.iter().all(|u| {
            matches!(u.spread, Spread::Shared(_))
                && u.output.is_constant()
                && u.features.len() == self.input_dim
        })
    }
}

fn gaussian_clauses(
    rule: &Rule,
    k: usize,
    constraint: u8,
    out: &mut Vec<Violation>,
) -> Option<Vec<(usize, f64, f64)>> {
    let mut clauses = Vec::new();
    let mut ok = true;
    for c in rule.antecedent.clauses() {
        match c.mf {
            MembershipFunction::Gaussian { center, width } => {
                clauses.push((c.feature, center, width))
            }
            _ => {
                out.push(Violation::rule(
                    constraint,
                    k,
                    format!(
                        "feature {} uses a non-Gaussian membership function",
                        c.feature
                    ),
                ));
                ok = false;
            }
        }
    }
    if rule.antecedent.is_path() {
        out.push(Violation::rule(
            constraint,
            k,
            "path antecedent may repeat features",
        ));
        ok = false;
    }
    ok.then_some(clauses)
}

/// Conditions for a standard RBFN:
/// (1) one unit per rule, (2) constant consequents, (3) Gaussian MFs with one
/// shared width per rule over every input, (4) product t-norm, (5) same
/// aggregation. (1), (4) and (5) hold by construction here.
pub fn standard_violations(model: &TskModel) -> Vec<Violation> {
    let mut v = Vec::new();
    let d = model.input_dim();
    for (k, r) in model.rules().iter().enumerate() {
        if !r.consequent.is_constant() {
            v.push(Violation::rule(2, k, "consequent is affine, not constant"));
        }
        if let Some(cl) = gaussian_clauses(r, k, 3, &mut v) {
            if !r.antecedent.is_full(d) {
                v.push(Violation::rule(
                    3,
                    k,
                    "antecedent does not test every input exactly once",
                ));
            }
            if cl.windows(2).any(|w| w[0].2 != w[1].2) {
                v.push(Violation::rule(3, k, "widths differ across features"));
            }
        }
    }
    v
}

/// Standard RBFN with `s_k = 2 w_k^2`, so every unit response equals the
/// rule's firing level.
pub fn tsk_to_rbfn(model: &TskModel) -> Result<RbfnModel> {
    let v = standard_violations(model);
    if !v.is_empty() {
        return Err(Error::Constraint(v));
    }
    let units = model
        .rules()
        .iter()
        .map(|r| {
            let (features, centers, width) = unzip_gaussian(&r.antecedent);
            let w = width.first().copied().unwrap_or(1.0);
            RbfUnit::new(
                features,
                centers,
                Spread::Shared(2.0 * w * w),
                r.consequent.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    RbfnModel::new(
        model.input_dim(),
        units,
        model.aggregation() == Aggregation::WeightedAverage,
    )
}

fn unzip_gaussian(a: &Antecedent) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let mut f = Vec::new();
    let mut c = Vec::new();
    let mut w = Vec::new();
    for cl in a.clauses() {
        if let MembershipFunction::Gaussian { center, width } = cl.mf {
            f.push(cl.feature);
            c.push(center);
            w.push(width);
        }
    }
    (f, c, w)
}

/// Generalized-form conditions: (2) Gaussian MFs; the remaining conditions hold by
/// construction.
pub fn generalized_violations(model: &TskModel) -> Vec<Violation> {
    let mut v = Vec::new();
    for (k, r) in model.rules().iter().enumerate() {
        gaussian_clauses(r, k, 2, &mut v);
    }
    v
}

/// Generalized RBFN: per-feature spreads `2 w^2`, feature subsets and
/// consequents carried over unchanged.
pub fn generalized_tsk_rbfn(model: &TskModel) -> Result<RbfnModel> {
    let v = generalized_violations(model);
    if !v.is_empty() {
        return Err(Error::Constraint(v));
    }
    let units = model
        .rules()
        .iter()
        .map(|r| {
            let (features, centers, widths) = unzip_gaussian(&r.antecedent);
            let spreads = widths.iter().map(|w| 2.0 * w * w).collect();
            RbfUnit::new(
                features,
                centers,
                Spread::PerFeature(spreads),
                r.consequent.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    RbfnModel::new(
        model.input_dim(),
        units,
        model.aggregation() == Aggregation::WeightedAverage,
    )
}

/// Inverse of both converters: width `w = sqrt(s / 2)` per connected feature.
pub fn rbfn_to_tsk(model: &RbfnModel) -> Result<TskModel> {
    let rules = model
        .units
        .iter()
        .map(|u| {
            let clauses = u
                .features
                .iter()
                .zip(&u.centers)
                .enumerate()
                .map(|(j, (&f, &c))| {
                    Clause::new(
                        f,
                        MembershipFunction::gaussian(c, (u.spread.at(j) / 2.0).sqrt()),
                    )
                })
                .collect();
            Ok(Rule::new(Antecedent::new(clauses)?, u.output.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let agg = if model.normalized {
        Aggregation::WeightedAverage
    } else {
        Aggregation::WeightedSum
    };
    TskModel::new(model.input_dim, rules, agg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss_rule(feats: &[(usize, f64, f64)], out: Consequent) -> Rule {
        Rule::new(
            Antecedent::new(
                feats
                    .iter()
                    .map(|&(f, c, w)| Clause::new(f, MembershipFunction::gaussian(c, w)))
                    .collect(),
            )
            .unwrap(),
            out,
        )
    }

    #[test]
    fn unit_response_examples() {
        let u =
            RbfUnit::with_shared_width(vec![0, 1], vec![0.5, -1.0], 2.0, Consequent::Constant(0.0))
                .unwrap();
        assert_eq!(u.response(&[0.5, -1.0]).unwrap(), 1.0);
        let one =
            RbfUnit::with_shared_width(vec![0], vec![0.0], 1.0, Consequent::Constant(0.0)).unwrap();
        assert!((one.response(&[1.0]).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(one.response(&[]).is_err());
    }

    #[test]
    fn per_feature_response_factorizes() {
        let u = RbfUnit::new(
            vec![0, 2],
            vec![1.0, -2.0],
            Spread::PerFeature(vec![0.5, 3.0]),
            Consequent::Constant(0.0),
        )
        .unwrap();
        let x = [0.3, 9.0, -1.1];
        let oracle = (-(0.3f64 - 1.0).powi(2) / 0.5).exp() * (-(-1.1f64 + 2.0).powi(2) / 3.0).exp();
        assert!((u.response(&x).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn unit_validation() {
        assert!(RbfUnit::new(
            vec![0, 0],
            vec![0.0, 0.0],
            Spread::Shared(1.0),
            Consequent::Constant(0.0)
        )
        .is_err());
        assert!(RbfUnit::new(
            vec![0],
            vec![0.0],
            Spread::Shared(0.0),
            Consequent::Constant(0.0)
        )
        .is_err());
        assert!(RbfUnit::new(
            vec![0],
            vec![0.0],
            Spread::PerFeature(vec![1.0, 2.0]),
            Consequent::Constant(0.0)
        )
        .is_err());
    }

    #[test]
    fn predict_examples() {
        let single = RbfnModel::new(
            2,
            vec![RbfUnit::with_shared_width(
                vec![0, 1],
                vec![0.0, 0.0],
                1.0,
                Consequent::Constant(2.5),
            )
            .unwrap()],
            true,
        )
        .unwrap();
        assert_eq!(single.predict(&[3.0, -1.0]).unwrap(), 2.5);

        let sym = RbfnModel::new(
            1,
            vec![
                RbfUnit::with_shared_width(vec![0], vec![-1.0], 1.0, Consequent::Constant(0.0))
                    .unwrap(),
                RbfUnit::with_shared_width(vec![0], vec![1.0], 1.0, Consequent::Constant(4.0))
                    .unwrap(),
            ],
            true,
        )
        .unwrap();
        assert_eq!(sym.predict(&[0.0]).unwrap(), 2.0);
    }

    #[test]
    fn affine_consequent_names_constraint_two() {
        let m = TskModel::new(
            1,
            vec![gauss_rule(
                &[(0, 0.0, 1.0)],
                Consequent::affine(vec![1.0], 0.0),
            )],
            Aggregation::WeightedAverage,
        )
        .unwrap();
        match tsk_to_rbfn(&m) {
            Err(Error::Constraint(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].constraint, 2);
                assert_eq!(v[0].rule, Some(0));
            }
            other => panic!("expected constraint error, got {other:?}"),
        }
    }

    #[test]
    fn per_feature_widths_need_generalized_path() {
        let m = TskModel::new(
            2,
            vec![
                gauss_rule(&[(0, 0.0, 1.0), (1, 0.0, 1.0)], Consequent::Constant(1.0)),
                gauss_rule(&[(0, 1.0, 1.0), (1, 0.0, 2.0)], Consequent::Constant(2.0)),
            ],
            Aggregation::WeightedAverage,
        )
        .unwrap();
        let err = tsk_to_rbfn(&m).unwrap_err();
        assert!(
            err.to_string()
                .contains("rule 1: widths differ across features"),
            "{err}"
        );
        let g = generalized_tsk_rbfn(&m).unwrap();
        assert!(!g.is_standard());
        assert_eq!(rbfn_to_tsk(&g).unwrap(), m);
    }

    #[test]
    fn partial_antecedent_keeps_feature_subset() {
        let m = TskModel::new(
            3,
            vec![
                gauss_rule(
                    &[(2, 0.5, 0.7)],
                    Consequent::affine(vec![1.0, 0.0, -1.0], 0.2),
                ),
                Rule::new(Antecedent::vacuous(), Consequent::Constant(1.0)),
            ],
            Aggregation::WeightedSum,
        )
        .unwrap();
        assert!(!standard_violations(&m).is_empty());
        let g = generalized_tsk_rbfn(&m).unwrap();
        assert_eq!(g.units()[0].features(), &[2]);
        assert!(g.units()[1].features().is_empty());
        assert!(!g.is_normalized());
        let x = [0.1, -0.4, 0.9];
        assert_eq!(g.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn sigmoids_rejected_by_both_paths() {
        let m = TskModel::new(
            1,
            vec![Rule::new(
                Antecedent::new(vec![Clause::new(
                    0,
                    MembershipFunction::sigmoid_up(1.0, 0.0),
                )])
                .unwrap(),
                Consequent::Constant(1.0),
            )],
            Aggregation::WeightedAverage,
        )
        .unwrap();
        assert!(tsk_to_rbfn(&m).is_err());
        assert!(generalized_tsk_rbfn(&m).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = RbfnModel::new(
            2,
            vec![
                RbfUnit::new(
                    vec![1],
                    vec![0.25],
                    Spread::PerFeature(vec![0.3]),
                    Consequent::affine(vec![1.0, 2.0], 3.0),
                )
                .unwrap(),
                RbfUnit::new(
                    vec![0, 1],
                    vec![0.0, 1.0],
                    Spread::Shared(0.7),
                    Consequent::Constant(-1.0),
                )
                .unwrap(),
            ],
            true,
        )
        .unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: RbfnModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        let bad = text.replace("0.7", "-0.7");
        assert!(serde_json::from_str::<RbfnModel>(&bad).is_err());
    }
}

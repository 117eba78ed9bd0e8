//! JSON encodings of the model types.
//!
//! Membership functions and consequents are written as `{kind, params}`
//! with `params` a flat number array; affine params are the slopes followed by
//! the intercept. Floats use the shortest decimal form that parses back to the
//! identical `f64`, so every round trip is value-exact.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tsk::{Aggregation, Antecedent, Clause, Consequent, MembershipFunction, Rule, TskModel};

#[derive(Serialize, Deserialize)]
struct KindParams {
    kind: String,
    params: Vec<f64>,
}

impl From<&MembershipFunction> for KindParams {
    fn from(mf: &MembershipFunction) -> Self {
        let (kind, params) = match *mf {
            MembershipFunction::Gaussian { center, width } => ("gaussian", vec![center, width]),
            MembershipFunction::SigmoidUp {
                steepness,
                threshold,
            } => ("sigmoid_up", vec![steepness, threshold]),
            MembershipFunction::SigmoidDown {
                steepness,
                threshold,
            } => ("sigmoid_down", vec![steepness, threshold]),
        };
        Self {
            kind: kind.into(),
            params,
        }
    }
}

fn mf_from_parts(kind: &str, params: &[f64]) -> std::result::Result<MembershipFunction, String> {
    let two = |name: &str| -> std::result::Result<(f64, f64), String> {
        match params {
            [a, b] => Ok((*a, *b)),
            _ => Err(format!("{name} expects 2 params, got {}", params.len())),
        }
    };
    let mf = match kind {
        "gaussian" => {
            let (center, width) = two(kind)?;
            MembershipFunction::gaussian(center, width)
        }
        "sigmoid_up" => {
            let (s, t) = two(kind)?;
            MembershipFunction::sigmoid_up(s, t)
        }
        "sigmoid_down" => {
            let (s, t) = two(kind)?;
            MembershipFunction::sigmoid_down(s, t)
        }
        other => return Err(format!("unknown membership kind {other:?}")),
    };
    mf.validate().map_err(|e| e.to_string())?;
    Ok(mf)
}

impl Serialize for MembershipFunction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KindParams::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for MembershipFunction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = KindParams::deserialize(d)?;
        mf_from_parts(&w.kind, &w.params).map_err(D::Error::custom)
    }
}

impl From<&Consequent> for KindParams {
    fn from(c: &Consequent) -> Self {
        match c {
            Consequent::Constant(v) => Self {
                kind: "constant".into(),
                params: vec![*v],
            },
            Consequent::Affine { slopes, intercept } => {
                let mut params = slopes.clone();
                params.push(*intercept);
                Self {
                    kind: "affine".into(),
                    params,
                }
            }
        }
    }
}

impl Serialize for Consequent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KindParams::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Consequent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = KindParams::deserialize(d)?;
        if w.params.iter().any(|v| !v.is_finite()) {
            return Err(D::Error::custom("non-finite consequent parameter"));
        }
        match (w.kind.as_str(), w.params.as_slice()) {
            ("constant", [c]) => Ok(Consequent::Constant(*c)),
            ("constant", p) => Err(D::Error::custom(format!(
                "constant expects 1 param, got {}",
                p.len()
            ))),
            ("affine", [slopes @ .., intercept]) => {
                Ok(Consequent::affine(slopes.to_vec(), *intercept))
            }
            ("affine", []) => Err(D::Error::custom("affine expects at least the intercept")),
            (other, _) => Err(D::Error::custom(format!(
                "unknown consequent kind {other:?}"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ClauseWire {
    feature: usize,
    kind: String,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RuleWire {
    clauses: Vec<ClauseWire>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    path: bool,
    consequent: Consequent,
}

#[derive(Serialize, Deserialize)]
struct TskWire {
    input_dim: usize,
    aggregation: Aggregation,
    rules: Vec<RuleWire>,
}

impl Serialize for TskModel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rules = self
            .rules()
            .iter()
            .map(|r| RuleWire {
                clauses: r
                    .antecedent
                    .clauses()
                    .iter()
                    .map(|c| {
                        let kp = KindParams::from(&c.mf);
                        ClauseWire {
                            feature: c.feature,
                            kind: kp.kind,
                            params: kp.params,
                        }
                    })
                    .collect(),
                path: r.antecedent.is_path(),
                consequent: r.consequent.clone(),
            })
            .collect();
        TskWire {
            input_dim: self.input_dim(),
            aggregation: self.aggregation(),
            rules,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TskModel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = TskWire::deserialize(d)?;
        let mut rules = Vec::with_capacity(w.rules.len());
        for (k, r) in w.rules.into_iter().enumerate() {
            let clauses = r
                .clauses
                .into_iter()
                .map(|c| mf_from_parts(&c.kind, &c.params).map(|mf| Clause::new(c.feature, mf)))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| D::Error::custom(format!("rule {k}: {e}")))?;
            let antecedent = if r.path {
                Antecedent::path(clauses)
            } else {
                Antecedent::new(clauses).map_err(D::Error::custom)?
            };
            rules.push(Rule::new(antecedent, r.consequent));
        }
        TskModel::new(w.input_dim, rules, w.aggregation).map_err(D::Error::custom)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

pub fn save<T: Serialize>(value: &T, path: impl AsRef<std::path::Path>) -> Result<()> {
    let mut text = to_json(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::from)
}

pub fn load<T: for<'de> Deserialize<'de>>(path: impl AsRef<std::path::Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsk::MembershipFunction as Mf;

    fn sample() -> TskModel {
        TskModel::new(
            2,
            vec![
                Rule::new(
                    Antecedent::new(vec![
                        Clause::new(0, Mf::gaussian(0.1, 0.3)),
                        Clause::new(1, Mf::sigmoid_up(2.5, -1.0 / 3.0)),
                    ])
                    .unwrap(),
                    Consequent::affine(vec![1.0 / 7.0, -2e-17], std::f64::consts::PI),
                ),
                Rule::new(
                    Antecedent::path(vec![
                        Clause::new(0, Mf::sigmoid_down(8.0, 0.5)),
                        Clause::new(0, Mf::sigmoid_down(4.0, 0.2)),
                    ]),
                    Consequent::Constant(-0.0),
                ),
                Rule::new(Antecedent::vacuous(), Consequent::Constant(1e300)),
            ],
            Aggregation::WeightedSum,
        )
        .unwrap()
    }

    #[test]
    fn schema_shape() {
        let v: serde_json::Value = serde_json::to_value(sample()).unwrap();
        assert_eq!(v["input_dim"], 2);
        assert_eq!(v["aggregation"], "weighted_sum");
        assert_eq!(v["rules"][0]["clauses"][1]["kind"], "sigmoid_up");
        assert_eq!(v["rules"][0]["clauses"][1]["feature"], 1);
        assert_eq!(v["rules"][0]["consequent"]["kind"], "affine");
        assert_eq!(
            v["rules"][0]["consequent"]["params"]
                .as_array()
                .unwrap()
                .len(),
            3
        );
        assert_eq!(v["rules"][1]["path"], true);
        assert!(v["rules"][0].get("path").is_none());
    }

    #[test]
    fn round_trip_is_exact() {
        let m = sample();
        let back: TskModel = from_json(&to_json(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn invalid_documents_rejected() {
        let text = to_json(&sample()).unwrap();
        let neg_width = text.replacen("0.3", "-0.3", 1);
        assert!(from_json::<TskModel>(&neg_width).is_err());
        assert!(from_json::<TskModel>("{\"input_dim\": 1}").is_err());
        assert!(from_json::<TskModel>("not json").is_err());
        let bad_feature = r#"{"input_dim":1,"aggregation":"weighted_average","rules":[
            {"clauses":[{"feature":4,"kind":"gaussian","params":[0,1]}],
             "consequent":{"kind":"constant","params":[1]}}]}"#;
        assert!(from_json::<TskModel>(bad_feature).is_err());
    }
}

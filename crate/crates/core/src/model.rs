//! Any model file the toolkit writes, recognized by its top-level fields so a
//! TSK file keeps exactly the core schema.

use std::path::Path;

use serde_json::Value;

use crate::cart::{self, extract_crisp_rules, FuzzyRegressionTree, RegressionTree};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::moe::{GateFunction, MoeModel};
use crate::rbfn::RbfnModel;
use crate::stacking::{Combiner, StackModel};
use crate::tsk::{Consequent, MembershipFunction, TskModel};

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Tsk(TskModel),
    Rbfn(RbfnModel),
    Moe(MoeModel),
    Tree(RegressionTree),
    FuzzyTree(FuzzyRegressionTree),
    Stack(StackModel),
}

fn has_alpha(node: &Value) -> bool {
    node.get("alpha").is_some()
}

impl AnyModel {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Tsk(_) => "tsk",
            Self::Rbfn(_) => "rbfn",
            Self::Moe(_) => "moe",
            Self::Tree(_) => "cart",
            Self::FuzzyTree(_) => "fuzzy-cart",
            Self::Stack(_) => "stack",
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::InvalidModel("model file must hold a JSON object".into()))?;
        let parsed = if obj.contains_key("rules") {
            Self::Tsk(serde_json::from_value(v)?)
        } else if obj.contains_key("units") {
            Self::Rbfn(serde_json::from_value(v)?)
        } else if obj.contains_key("experts") {
            Self::Moe(serde_json::from_value(v)?)
        } else if obj.contains_key("bases") {
            Self::Stack(serde_json::from_value(v)?)
        } else if let Some(root) = obj.get("root") {
            if has_alpha(root) {
                Self::FuzzyTree(serde_json::from_value(v)?)
            } else {
                Self::Tree(serde_json::from_value(v)?)
            }
        } else {
            return Err(Error::InvalidModel(
                "unrecognized model file: expected rules, units, experts, bases or root".into(),
            ));
        };
        Ok(parsed)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        match self {
            Self::Tsk(m) => crate::json::to_json(m),
            Self::Rbfn(m) => crate::json::to_json(m),
            Self::Moe(m) => crate::json::to_json(m),
            Self::Tree(m) => crate::json::to_json(m),
            Self::FuzzyTree(m) => crate::json::to_json(m),
            Self::Stack(m) => crate::json::to_json(m),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::Tsk(m) => m.input_dim(),
            Self::Rbfn(m) => m.input_dim(),
            Self::Moe(m) => m.input_dim(),
            Self::Tree(m) => m.input_dim(),
            Self::FuzzyTree(m) => m.input_dim(),
            Self::Stack(m) => m.input_dim(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            Self::Tsk(m) => m.predict(x),
            Self::Rbfn(m) => m.predict(x),
            Self::Moe(m) => m.predict(x),
            Self::Tree(m) => m.predict(x),
            Self::FuzzyTree(m) => m.predict(x),
            Self::Stack(m) => m.predict(x),
        }
    }

    pub fn batch_predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        match self {
            Self::Tsk(m) => m.batch_predict(data),
            Self::Rbfn(m) => m.batch_predict(data),
            Self::Moe(m) => m.batch_predict(data),
            Self::Tree(m) => m.batch_predict(data),
            Self::FuzzyTree(m) => m.batch_predict(data),
            Self::Stack(m) => m.batch_predict(data),
        }
    }

    /// Human-readable listing, one rule (or unit, expert, base) per line.
    pub fn describe(&self) -> Vec<String> {
        match self {
            Self::Tsk(m) => tsk_rule_lines(m),
            Self::Tree(t) => extract_crisp_rules(t)
                .iter()
                .map(ToString::to_string)
                .collect(),
            Self::FuzzyTree(t) => match cart::fuzzy_tree_to_tsk(t, false) {
                Ok(m) => tsk_rule_lines(&m),
                Err(e) => vec![format!("unlistable tree: {e}")],
            },
            Self::Rbfn(m) => match crate::rbfn::rbfn_to_tsk(m) {
                Ok(t) => tsk_rule_lines(&t),
                Err(e) => vec![format!("unlistable network: {e}")],
            },
            Self::Moe(m) => m
                .gates()
                .iter()
                .zip(m.experts())
                .map(|(g, e)| format!("IF {} THEN y = {}", gate_text(g), consequent_text(e)))
                .collect(),
            Self::Stack(s) => {
                let mut out: Vec<String> = s
                    .bases()
                    .iter()
                    .enumerate()
                    .map(|(k, b)| {
                        format!(
                            "base {k} (seed {}): y = {}",
                            b.seed,
                            consequent_text(&b.consequent())
                        )
                    })
                    .collect();
                match s.combiner() {
                    Combiner::ConstantWeights { weights, intercept } => out.push(format!(
                        "combine: y = {} + {}",
                        weights
                            .iter()
                            .enumerate()
                            .map(|(k, w)| format!("{}*base{k}", sig4(*w)))
                            .collect::<Vec<_>>()
                            .join(" + "),
                        sig4(*intercept)
                    )),
                    Combiner::AdaptiveGates { gates } => {
                        for (k, g) in gates.iter().enumerate() {
                            out.push(format!("gate {k}: {}", gate_text(g)));
                        }
                    }
                }
                out
            }
        }
    }
}

/// `v` rounded to four significant digits.
pub fn sig4(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.3e}");
    let exp: i32 = sci
        .rsplit('e')
        .next()
        .and_then(|e| e.parse().ok())
        .unwrap_or(0);
    if (-4..6).contains(&exp) {
        let decimals = (3 - exp).max(0) as usize;
        let rounded: f64 = sci.parse().unwrap_or(v);
        format!("{rounded:.decimals$}")
    } else {
        sci
    }
}

fn mf_text(mf: &MembershipFunction) -> String {
    match mf {
        MembershipFunction::Gaussian { center, width } => {
            format!("gaussian(c={}, w={})", sig4(*center), sig4(*width))
        }
        MembershipFunction::SigmoidUp {
            steepness,
            threshold,
        } => {
            format!("sigmoid_up(a={}, t={})", sig4(*steepness), sig4(*threshold))
        }
        MembershipFunction::SigmoidDown {
            steepness,
            threshold,
        } => {
            format!(
                "sigmoid_down(a={}, t={})",
                sig4(*steepness),
                sig4(*threshold)
            )
        }
    }
}

fn consequent_text(c: &Consequent) -> String {
    cart::format_consequent(c, sig4)
}

fn gate_text(g: &GateFunction) -> String {
    match g {
        GateFunction::QuadraticDiag { centers, widths } => centers
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| format!("x{i} is gaussian(c={}, w={})", sig4(*c), sig4(*w)))
            .collect::<Vec<_>>()
            .join(" AND "),
        GateFunction::Affine { weights, bias } => {
            let mut s = String::from("softmax(");
            for (i, w) in weights.iter().enumerate() {
                s.push_str(&format!("{}*x{i} + ", sig4(*w)));
            }
            s.push_str(&sig4(*bias));
            s.push(')');
            s
        }
    }
}

pub fn tsk_rule_lines(model: &TskModel) -> Vec<String> {
    model
        .rules()
        .iter()
        .map(|r| {
            let ante = if r.antecedent.is_empty() {
                "TRUE".to_string()
            } else {
                r.antecedent
                    .clauses()
                    .iter()
                    .map(|c| format!("x{} is {}", c.feature, mf_text(&c.mf)))
                    .collect::<Vec<_>>()
                    .join(" AND ")
            };
            format!("IF {ante} THEN y = {}", consequent_text(&r.consequent))
        })
        .collect()
}

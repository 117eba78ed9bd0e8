//! Randomized checks of the equivalences, gradients and closed-form identities
//! the toolkit relies on. Each check reports the largest deviation it saw.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::anfis::{
    antecedent_gradients, gaussian_params, lse_consequents, sse, with_gaussian_params,
};
use crate::cart::{
    best_split, fit_tree, fuzzify_tree, fuzzy_tree_to_tsk, FuzzyRegressionTree, SteepnessPolicy,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gradcheck::{central_difference, max_relative_error, FD_STEP};
use crate::model::AnyModel;
use crate::moe::{self, softmax, GateFunction, MoeLoss, MoeModel};
use crate::rbfn::{generalized_tsk_rbfn, rbfn_to_tsk, tsk_to_rbfn};
use crate::rng::SeededRng;
use crate::stacking::{local_rule_fit, nozaki_fit};
use crate::tsk::{Aggregation, Antecedent, Clause, Consequent, MembershipFunction, Rule, TskModel};

/// Inputs per random model in the paired-evaluation checks.
pub const INPUTS_PER_MODEL: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Equivalence,
    Gradients,
    Oracles,
}

impl Suite {
    pub fn default_tol(self) -> f64 {
        match self {
            Self::Equivalence | Self::Oracles => 1e-10,
            Self::Gradients => 1e-4,
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equivalence" => Ok(Self::Equivalence),
            "gradients" => Ok(Self::Gradients),
            "oracles" => Ok(Self::Oracles),
            _ => Err(Error::InvalidArgument(format!(
                "unknown suite {s:?} (expected equivalence, gradients or oracles)"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Equivalence => "equivalence",
            Self::Gradients => "gradients",
            Self::Oracles => "oracles",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_deviation: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub trials: usize,
    pub tol: f64,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<28} max deviation {:.3e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.max_deviation
            )?;
        }
        write!(
            f,
            "{} suite: {} (tol {:e}, {} trials, seed {})",
            self.suite,
            if self.passed { "pass" } else { "fail" },
            self.tol,
            self.trials,
            self.seed
        )
    }
}

pub fn run(suite: Suite, trials: usize, tol: Option<f64>, seed: u64) -> Result<VerifyReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let tol = tol.unwrap_or(suite.default_tol());
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be >= 0, got {tol}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let raw: Vec<(&str, f64)> = match suite {
        Suite::Equivalence => equivalence_checks(&mut rng, trials)?,
        Suite::Gradients => gradient_checks(&mut rng, trials)?,
        Suite::Oracles => oracle_checks(&mut rng, trials)?,
    };
    let checks: Vec<CheckResult> = raw
        .into_iter()
        .map(|(name, dev)| CheckResult {
            name: name.to_string(),
            max_deviation: dev,
            passed: dev <= tol,
        })
        .collect();
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        suite,
        trials,
        tol,
        seed,
        checks,
        passed,
    })
}

/// Equivalence checks for one model against each of its exact images, plus a
/// JSON round trip, on inputs spread over the model's own scale.
pub fn run_on_model(model: &AnyModel, tol: Option<f64>, seed: u64) -> Result<VerifyReport> {
    let tol = tol.unwrap_or(Suite::Equivalence.default_tol());
    let mut rng = SeededRng::new(seed);
    let bounds = model_bounds(model);
    let xs: Vec<Vec<f64>> = (0..INPUTS_PER_MODEL)
        .map(|_| {
            bounds
                .iter()
                .map(|(lo, hi)| rng.uniform_in(*lo, *hi))
                .collect()
        })
        .collect();
    let mut raw: Vec<(&str, f64)> = Vec::new();
    let reloaded = AnyModel::from_json(&model.to_json()?)?;
    raw.push((
        "json_round_trip",
        paired(|x| model.predict(x), |x| reloaded.predict(x), &xs)?,
    ));
    match model {
        AnyModel::Tsk(m) => {
            if let Ok(net) = tsk_to_rbfn(m) {
                raw.push((
                    "tsk_rbfn_standard",
                    paired(|x| m.predict(x), |x| net.predict(x), &xs)?,
                ));
            }
            if let Ok(net) = generalized_tsk_rbfn(m) {
                raw.push((
                    "tsk_rbfn_generalized",
                    paired(|x| m.predict(x), |x| net.predict(x), &xs)?,
                ));
            }
            if let Ok(mix) = moe::tsk_to_moe(m) {
                raw.push((
                    "tsk_moe",
                    paired(|x| m.predict(x), |x| mix.predict(x), &xs)?,
                ));
            }
        }
        AnyModel::Rbfn(net) => {
            let m = rbfn_to_tsk(net)?;
            raw.push((
                "rbfn_tsk",
                paired(|x| net.predict(x), |x| m.predict(x), &xs)?,
            ));
        }
        AnyModel::Moe(mix) => {
            if let Ok(m) = moe::moe_to_tsk(mix) {
                raw.push((
                    "moe_tsk",
                    paired(|x| mix.predict(x), |x| m.predict(x), &xs)?,
                ));
            }
        }
        AnyModel::FuzzyTree(t) => {
            let m = fuzzy_tree_to_tsk(t, false)?;
            raw.push((
                "fuzzy_cart_tsk",
                paired(|x| t.predict(x), |x| m.predict(x), &xs)?,
            ));
            let mut worst: f64 = 0.0;
            for x in &xs {
                worst = worst.max((t.path_grade_sum(x)? - 1.0).abs());
            }
            raw.push(("path_grade_sum", worst));
        }
        AnyModel::Tree(_) | AnyModel::Stack(_) => {}
    }
    let checks: Vec<CheckResult> = raw
        .into_iter()
        .map(|(name, dev)| CheckResult {
            name: name.to_string(),
            max_deviation: dev,
            passed: dev <= tol,
        })
        .collect();
    Ok(VerifyReport {
        suite: Suite::Equivalence,
        trials: 1,
        tol,
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

/// Per-feature sampling box: Gaussian centers +- 3 widths, tree training
/// ranges, or `[-1, 1]` where the model says nothing about a feature.
fn model_bounds(model: &AnyModel) -> Vec<(f64, f64)> {
    let d = model.input_dim();
    let mut b = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
    let mut widen = |i: usize, lo: f64, hi: f64| {
        b[i].0 = b[i].0.min(lo);
        b[i].1 = b[i].1.max(hi);
    };
    let tsk = match model {
        AnyModel::Tsk(m) => Some(m.clone()),
        AnyModel::Rbfn(n) => rbfn_to_tsk(n).ok(),
        AnyModel::Moe(m) => moe::moe_to_tsk(m).ok(),
        AnyModel::Tree(t) => {
            t.feature_ranges()
                .iter()
                .enumerate()
                .for_each(|(i, r)| widen(i, r.0, r.1));
            None
        }
        AnyModel::FuzzyTree(t) => {
            t.feature_ranges()
                .iter()
                .enumerate()
                .for_each(|(i, r)| widen(i, r.0, r.1));
            None
        }
        AnyModel::Stack(_) => None,
    };
    if let Some(m) = tsk {
        for c in m.rules().iter().flat_map(|r| r.antecedent.clauses()) {
            match c.mf {
                MembershipFunction::Gaussian { center, width } => {
                    widen(c.feature, center - 3.0 * width, center + 3.0 * width)
                }
                MembershipFunction::SigmoidUp {
                    threshold,
                    steepness,
                }
                | MembershipFunction::SigmoidDown {
                    threshold,
                    steepness,
                } => widen(
                    c.feature,
                    threshold - 6.0 / steepness,
                    threshold + 6.0 / steepness,
                ),
            }
        }
    }
    b.into_iter()
        .map(|(lo, hi)| {
            if lo.is_finite() && hi > lo {
                (lo, hi)
            } else {
                (-1.0, 1.0)
            }
        })
        .collect()
}

pub fn random_inputs(rng: &mut SeededRng, d: usize, n: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.uniform_in(lo, hi)).collect())
        .collect()
}

fn random_affine(rng: &mut SeededRng, d: usize) -> Consequent {
    Consequent::affine(
        (0..d).map(|_| rng.uniform_in(-2.0, 2.0)).collect(),
        rng.uniform_in(-2.0, 2.0),
    )
}

/// Full Gaussian antecedents with one width per rule and constant consequents.
pub fn random_standard_tsk(rng: &mut SeededRng, d: usize, k: usize) -> TskModel {
    let rules = (0..k)
        .map(|_| {
            let w = rng.uniform_in(0.3, 1.5);
            let clauses = (0..d)
                .map(|i| {
                    Clause::new(
                        i,
                        MembershipFunction::gaussian(rng.uniform_in(-1.0, 1.0), w),
                    )
                })
                .collect();
            Rule::new(
                Antecedent::new(clauses).expect("distinct features"),
                Consequent::Constant(rng.uniform_in(-2.0, 2.0)),
            )
        })
        .collect();
    TskModel::new(d, rules, Aggregation::WeightedAverage).expect("valid random model")
}

/// Gaussian antecedents on every input with per-feature widths.
pub fn random_gaussian_tsk(rng: &mut SeededRng, d: usize, k: usize, affine: bool) -> TskModel {
    let rules = (0..k)
        .map(|_| {
            let clauses = (0..d)
                .map(|i| {
                    Clause::new(
                        i,
                        MembershipFunction::gaussian(
                            rng.uniform_in(-1.0, 1.0),
                            rng.uniform_in(0.3, 1.5),
                        ),
                    )
                })
                .collect();
            let c = if affine {
                random_affine(rng, d)
            } else {
                Consequent::Constant(rng.uniform_in(-2.0, 2.0))
            };
            Rule::new(Antecedent::new(clauses).expect("distinct features"), c)
        })
        .collect();
    TskModel::new(d, rules, Aggregation::WeightedAverage).expect("valid random model")
}

/// Gaussian antecedents on random feature subsets (possibly empty) with
/// affine consequents.
pub fn random_partial_tsk(rng: &mut SeededRng, d: usize, k: usize) -> TskModel {
    let rules = (0..k)
        .map(|_| {
            let features: Vec<usize> = (0..d).filter(|_| rng.uniform() < 0.6).collect();
            let clauses = features
                .into_iter()
                .map(|i| {
                    Clause::new(
                        i,
                        MembershipFunction::gaussian(
                            rng.uniform_in(-1.0, 1.0),
                            rng.uniform_in(0.3, 1.5),
                        ),
                    )
                })
                .collect();
            Rule::new(
                Antecedent::new(clauses).expect("distinct features"),
                random_affine(rng, d),
            )
        })
        .collect();
    TskModel::new(d, rules, Aggregation::WeightedAverage).expect("valid random model")
}

/// Tree grown on random data and softened with a random fixed steepness.
pub fn random_fuzzy_tree(
    rng: &mut SeededRng,
    d: usize,
    max_leaves: usize,
) -> Result<FuzzyRegressionTree> {
    let rows = random_inputs(rng, d, 200, -1.0, 1.0);
    let y = rows
        .iter()
        .map(|x| x.iter().map(|v| (3.0 * v).sin()).sum::<f64>() + rng.normal() * 0.1)
        .collect();
    let tree = fit_tree(&Dataset::new(rows, y)?, max_leaves, 3)?;
    fuzzify_tree(
        &tree,
        SteepnessPolicy::Fixed {
            alpha: rng.uniform_in(1.0, 30.0),
        },
    )
}

fn dims(rng: &mut SeededRng, max_d: usize, max_k: usize) -> (usize, usize) {
    (1 + rng.index(max_d), 1 + rng.index(max_k))
}

fn max_abs_diff(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn paired(
    a: impl Fn(&[f64]) -> Result<f64>,
    b: impl Fn(&[f64]) -> Result<f64>,
    xs: &[Vec<f64>],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in xs {
        worst = worst.max((a(x)? - b(x)?).abs());
    }
    Ok(worst)
}

fn equivalence_checks(rng: &mut SeededRng, trials: usize) -> Result<Vec<(&'static str, f64)>> {
    let mut standard: f64 = 0.0;
    let mut generalized: f64 = 0.0;
    let mut round_trip: f64 = 0.0;
    let mut moe_dev: f64 = 0.0;
    let mut moe_round: f64 = 0.0;
    let mut shift: f64 = 0.0;
    let mut cart_dev: f64 = 0.0;
    let mut grade_sum: f64 = 0.0;
    for _ in 0..trials {
        let (d, k) = dims(rng, 4, 16);
        let xs = random_inputs(rng, d, INPUTS_PER_MODEL, -2.0, 2.0);

        let m = random_standard_tsk(rng, d, k);
        let net = tsk_to_rbfn(&m)?;
        standard = standard.max(paired(|x| m.predict(x), |x| net.predict(x), &xs)?);
        let back = rbfn_to_tsk(&net)?;
        round_trip = round_trip.max(max_abs_diff(gaussian_params(&m), gaussian_params(&back)));

        let m = random_partial_tsk(rng, d, k);
        let net = generalized_tsk_rbfn(&m)?;
        generalized = generalized.max(paired(|x| m.predict(x), |x| net.predict(x), &xs)?);

        let m = random_gaussian_tsk(rng, d, k, true);
        let mix = moe::tsk_to_moe(&m)?;
        moe_dev = moe_dev.max(paired(|x| m.predict(x), |x| mix.predict(x), &xs)?);
        let back = moe::moe_to_tsk(&mix)?;
        moe_round = moe_round.max(paired(|x| m.predict(x), |x| back.predict(x), &xs)?);

        let v: Vec<f64> = (0..k).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
        let c = rng.uniform_in(-100.0, 100.0);
        shift = shift.max(max_abs_diff(
            softmax(v.clone()),
            softmax(v.iter().map(|u| u + c).collect()),
        ));

        let leaves = 1 + rng.index(32);
        let tree = random_fuzzy_tree(rng, d, leaves)?;
        let rules = fuzzy_tree_to_tsk(&tree, false)?;
        cart_dev = cart_dev.max(paired(|x| tree.predict(x), |x| rules.predict(x), &xs)?);
        for x in &xs {
            grade_sum = grade_sum.max((tree.path_grade_sum(x)? - 1.0).abs());
        }
    }
    Ok(vec![
        ("tsk_rbfn_standard", standard),
        ("tsk_rbfn_generalized", generalized),
        ("rbfn_round_trip_params", round_trip),
        ("tsk_moe", moe_dev),
        ("moe_tsk_round_trip", moe_round),
        ("softmax_shift", shift),
        ("fuzzy_cart_tsk", cart_dev),
        ("path_grade_sum", grade_sum),
    ])
}

fn random_dataset(rng: &mut SeededRng, d: usize, n: usize) -> Result<Dataset> {
    let rows = random_inputs(rng, d, n, -1.0, 1.0);
    let y = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    Dataset::new(rows, y)
}

fn random_moe(rng: &mut SeededRng, d: usize, k: usize, quadratic: bool) -> Result<MoeModel> {
    let experts = (0..k).map(|_| random_affine(rng, d)).collect();
    let gates = (0..k)
        .map(|_| {
            if quadratic {
                GateFunction::QuadraticDiag {
                    centers: (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
                    widths: (0..d).map(|_| rng.uniform_in(0.5, 1.5)).collect(),
                }
            } else {
                GateFunction::Affine {
                    weights: (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
                    bias: rng.uniform_in(-1.0, 1.0),
                }
            }
        })
        .collect();
    MoeModel::new(d, experts, gates)
}

fn gradient_checks(rng: &mut SeededRng, trials: usize) -> Result<Vec<(&'static str, f64)>> {
    let mut anfis: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut coup: f64 = 0.0;
    let mut hyb: f64 = 0.0;
    let mut gates: f64 = 0.0;
    for _ in 0..trials {
        let (d, k) = dims(rng, 3, 4);
        let data = random_dataset(rng, d, 20)?;

        let m = random_gaussian_tsk(rng, d, k, true);
        let analytic = antecedent_gradients(&m, &data)?.flatten();
        let p = gaussian_params(&m);
        let numeric = central_difference(
            |q| sse(&with_gaussian_params(&m, q), &data).unwrap_or(f64::NAN),
            &p,
            FD_STEP,
        );
        anfis = anfis.max(max_relative_error(&analytic, &numeric));

        let mix = random_moe(rng, d, k, true)?;
        let lambda = rng.uniform_in(0.0, 2.0);
        for (loss, slot) in [
            (MoeLoss::Competitive, &mut comp),
            (MoeLoss::Coupled, &mut coup),
            (MoeLoss::Hybrid { lambda }, &mut hyb),
        ] {
            *slot = slot.max(moe_gradient_error(&mix, &data, loss)?);
        }
        let affine_gated = random_moe(rng, d, k, false)?;
        gates = gates.max(moe_gradient_error(&affine_gated, &data, MoeLoss::Coupled)?);
    }
    Ok(vec![
        ("anfis_antecedents", anfis),
        ("moe_competitive", comp),
        ("moe_coupled", coup),
        ("moe_hybrid", hyb),
        ("affine_gates_coupled", gates),
    ])
}

fn moe_gradient_error(model: &MoeModel, data: &Dataset, loss: MoeLoss) -> Result<f64> {
    let analytic = moe::loss_gradient(model, data, loss)?;
    let numeric = central_difference(
        |q| moe::loss_value(&moe::with_params(model, q), data, loss).unwrap_or(f64::NAN),
        &moe::params(model),
        FD_STEP,
    );
    Ok(max_relative_error(&analytic, &numeric))
}

/// Ordinary least squares through the normal equations.
fn normal_equations(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let ata = a.transpose() * a;
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::Numerical("normal equations are singular".into()))?;
    Ok(chol.solve(&(a.transpose() * b)))
}

/// Least-squares fitted values `A c` through a Householder QR solve.
fn qr_fitted_values(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = a.clone().qr();
    let qtb = qr.q().transpose() * b;
    let c = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Numerical("QR factor is singular".into()))?;
    Ok(a * c)
}

fn oracle_checks(rng: &mut SeededRng, trials: usize) -> Result<Vec<(&'static str, f64)>> {
    let mut lse: f64 = 0.0;
    let mut local: f64 = 0.0;
    let mut noz_single: f64 = 0.0;
    let mut noz_uniform: f64 = 0.0;
    let mut hybrid: f64 = 0.0;
    let mut root: f64 = 0.0;
    for _ in 0..trials {
        let (d, k) = dims(rng, 3, 4);
        let data = random_dataset(rng, d, 60)?;

        let m = random_gaussian_tsk(rng, d, k, true);
        let fitted = lse_consequents(&m, &data, 0.0)?;
        let block = d + 1;
        let mut a = DMatrix::zeros(data.len(), k * block);
        for (n, x) in data.rows().enumerate() {
            let f = m.firings(x)?;
            let total: f64 = f.iter().sum();
            for j in 0..k {
                for i in 0..d {
                    a[(n, j * block + i)] = f[j] / total * x[i];
                }
                a[(n, j * block + d)] = f[j] / total;
            }
        }
        let oracle_pred = qr_fitted_values(&a, &DVector::from_column_slice(data.targets()))?;
        lse = lse.max(max_abs_diff(
            fitted.batch_predict(&data)?,
            oracle_pred.iter().copied(),
        ));

        let unit = local_rule_fit(&data, vec![Antecedent::vacuous()])?;
        let mut design = DMatrix::zeros(data.len(), d + 1);
        for (n, x) in data.rows().enumerate() {
            for i in 0..d {
                design[(n, i)] = x[i];
            }
            design[(n, d)] = 1.0;
        }
        let ols = normal_equations(&design, &DVector::from_column_slice(data.targets()))?;
        let Consequent::Affine { slopes, intercept } = &unit.rules()[0].consequent else {
            unreachable!("local fits are affine")
        };
        local = local.max(max_abs_diff(
            slopes.iter().copied().chain([*intercept]),
            ols.iter().copied(),
        ));

        let grid: Vec<Vec<MembershipFunction>> = (0..d)
            .map(|_| {
                (0..2)
                    .map(|_| {
                        MembershipFunction::gaussian(
                            rng.uniform_in(-1.0, 1.0),
                            rng.uniform_in(0.3, 1.0),
                        )
                    })
                    .collect()
            })
            .collect();
        let single = data.subset(&[0]);
        let fit = nozaki_fit(&single, &grid, rng.uniform_in(0.5, 3.0))?;
        for r in fit.model.rules() {
            noz_single =
                noz_single.max((r.consequent.eval(single.row(0)) - single.targets()[0]).abs());
        }
        let x0 = data.row(0).to_vec();
        let same = Dataset::new(vec![x0; data.len()], data.targets().to_vec())?;
        let mean = data.targets().iter().sum::<f64>() / data.len() as f64;
        let fit = nozaki_fit(&same, &grid, 1.0)?;
        for r in fit.model.rules() {
            noz_uniform = noz_uniform.max((r.consequent.eval(same.row(0)) - mean).abs());
        }

        let mix = random_moe(rng, d, k, true)?;
        let lambda = rng.uniform_in(0.0, 3.0);
        let at0 = moe::loss_hybrid(&mix, &data, 0.0)?;
        let cmp = moe::loss_competitive(&mix, &data)?;
        let cpl = moe::loss_coupled(&mix, &data)?;
        let h = moe::loss_hybrid(&mix, &data, lambda)?;
        hybrid = hybrid
            .max((h - (at0 + lambda * cmp)).abs())
            .max((at0 - cpl).abs());

        let pts = random_dataset(rng, d, 50)?;
        root = root.max(root_split_deficit(&pts)?);
    }
    Ok(vec![
        ("lse_normal_equations", lse),
        ("local_rules_unit_weights", local),
        ("nozaki_single_example", noz_single),
        ("nozaki_uniform_firing", noz_uniform),
        ("hybrid_loss_affine", hybrid),
        ("cart_root_exhaustive", root),
    ])
}

/// Relative shortfall of the chosen root split against a brute-force scan of
/// every feature and every threshold between distinct values.
pub fn root_split_deficit(data: &Dataset) -> Result<f64> {
    fn sse(v: &[f64]) -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|y| (y - m) * (y - m)).sum()
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let parent = sse(data.targets());
    let mut best: f64 = 0.0;
    for f in 0..data.dim() {
        let mut values: Vec<f64> = data.rows().map(|x| x[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let (l, r): (Vec<f64>, Vec<f64>) = all
                .iter()
                .map(|&n| (data.row(n)[f], data.targets()[n]))
                .partition::<Vec<_>, _>(|(x, _)| *x < t)
                .into_tuple();
            best = best.max(parent - sse(&l) - sse(&r));
        }
    }
    let chosen = match best_split(data, &all, 1) {
        Some(s) => {
            let (l, r): (Vec<f64>, Vec<f64>) = all
                .iter()
                .map(|&n| (data.row(n)[s.feature], data.targets()[n]))
                .partition::<Vec<_>, _>(|(x, _)| *x < s.threshold)
                .into_tuple();
            parent - sse(&l) - sse(&r)
        }
        None => 0.0,
    };
    Ok((best - chosen).max(0.0) / parent.max(f64::MIN_POSITIVE))
}

trait IntoTuple {
    fn into_tuple(self) -> (Vec<f64>, Vec<f64>);
}

impl IntoTuple for (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    fn into_tuple(self) -> (Vec<f64>, Vec<f64>) {
        (
            self.0.into_iter().map(|(_, y)| y).collect(),
            self.1.into_iter().map(|(_, y)| y).collect(),
        )
    }
}

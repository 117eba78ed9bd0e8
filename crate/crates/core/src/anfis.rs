//! ANFIS-style training: rule initialization, least-squares consequents and
//! gradient descent on Gaussian antecedents.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::linalg::least_squares;
use crate::rng::SeededRng;
use crate::train::{TrainConfig, TrainHistory};
use crate::tsk::{
    clamp_width, is_degenerate_total, mse, normalize, Aggregation, Antecedent, Clause, Consequent,
    MembershipFunction, Rule, TskModel,
};

pub const DEFAULT_RULE_CAP: usize = 10_000;

/// Every combination of one membership function per feature; the last
/// feature varies fastest.
pub fn grid_antecedents(mf_grid: &[Vec<MembershipFunction>]) -> Result<Vec<Antecedent>> {
    if mf_grid.is_empty() || mf_grid.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument(
            "every feature needs at least one membership function".into(),
        ));
    }
    let mut out = vec![Vec::<Clause>::new()];
    for (i, mfs) in mf_grid.iter().enumerate() {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                mfs.iter().map(move |mf| {
                    let mut c = prefix.clone();
                    c.push(Clause::new(i, *mf));
                    c
                })
            })
            .collect();
    }
    out.into_iter().map(Antecedent::new).collect()
}

/// Evenly spaced Gaussians over `[lo, hi]` with width half the spacing.
pub fn even_gaussians(lo: f64, hi: f64, p: usize) -> Vec<MembershipFunction> {
    if p == 1 {
        return vec![MembershipFunction::gaussian(
            0.5 * (lo + hi),
            clamp_width(0.5 * (hi - lo)),
        )];
    }
    let spacing = (hi - lo) / (p - 1) as f64;
    (0..p)
        .map(|j| MembershipFunction::gaussian(lo + spacing * j as f64, clamp_width(0.5 * spacing)))
        .collect()
}

/// Grid partition with `p` Gaussians per input, refusing more than `rule_cap` rules.
pub fn grid_init_with_cap(
    ranges: &[(f64, f64)],
    p: usize,
    data: Option<&Dataset>,
    rule_cap: usize,
) -> Result<TskModel> {
    let d = ranges.len();
    if d == 0 {
        return Err(Error::InvalidArgument(
            "need at least one input range".into(),
        ));
    }
    if p == 0 {
        return Err(Error::InvalidArgument(
            "mfs_per_input must be at least 1".into(),
        ));
    }
    if let Some((lo, hi)) = ranges.iter().find(|(lo, hi)| !(lo < hi)) {
        return Err(Error::InvalidArgument(format!("range {lo}..{hi} is empty")));
    }
    let count = (p as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
    if count > rule_cap as u128 {
        return Err(Error::InvalidArgument(format!(
            "grid partition needs {p}^{d} = {count} rules, above the cap of {rule_cap}; \
             use fewer membership functions per input or clustering"
        )));
    }
    let intercept = match data {
        Some(ds) => {
            check_dim(d, ds.dim())?;
            ds.target_mean().unwrap_or(0.0)
        }
        None => 0.0,
    };
    let grid: Vec<_> = ranges
        .iter()
        .map(|&(lo, hi)| even_gaussians(lo, hi, p))
        .collect();
    let rules = grid_antecedents(&grid)?
        .into_iter()
        .map(|a| Rule::new(a, Consequent::affine(vec![0.0; d], intercept)))
        .collect();
    TskModel::new(d, rules, Aggregation::WeightedAverage)
}

pub fn grid_init(ranges: &[(f64, f64)], p: usize, data: Option<&Dataset>) -> Result<TskModel> {
    grid_init_with_cap(ranges, p, data, DEFAULT_RULE_CAP)
}

pub const LLOYD_MAX_ITER: usize = 50;
pub const LLOYD_TOL: f64 = 1e-8;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Lloyd k-means with seeded farthest-point seeding. Returns centroids and
/// the final assignment.
pub fn kmeans(data: &Dataset, k: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let n = data.len();
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one cluster".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "{k} clusters requested from {n} examples"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut centers = vec![data.row(rng.index(n)).to_vec()];
    let mut min_d: Vec<f64> = data.rows().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let mut far = 0;
        for (i, d) in min_d.iter().enumerate() {
            if *d > min_d[far] {
                far = i;
            }
        }
        let c = data.row(far).to_vec();
        for (i, x) in data.rows().enumerate() {
            min_d[i] = min_d[i].min(sq_dist(x, &c));
        }
        centers.push(c);
    }

    let d = data.dim();
    let mut assign = vec![0; n];
    for _ in 0..LLOYD_MAX_ITER {
        for (i, x) in data.rows().enumerate() {
            assign[i] = nearest(x, &centers);
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.rows().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut moved = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            moved = moved.max(sq_dist(&new, &centers[j]).sqrt());
            centers[j] = new;
        }
        if moved < LLOYD_TOL {
            break;
        }
    }
    for (i, x) in data.rows().enumerate() {
        assign[i] = nearest(x, &centers);
    }
    Ok((centers, assign))
}

/// One rule per k-means cluster: Gaussian centers at the centroid, widths at
/// the within-cluster standard deviation.
pub fn cluster_init(data: &Dataset, k: usize, seed: u64) -> Result<TskModel> {
    let (centers, assign) = kmeans(data, k, seed)?;
    let d = data.dim();
    let intercept = data.target_mean().unwrap_or(0.0);
    let mut rules = Vec::with_capacity(k);
    for (j, c) in centers.iter().enumerate() {
        let members: Vec<&[f64]> = data
            .rows()
            .zip(&assign)
            .filter(|(_, &a)| a == j)
            .map(|(x, _)| x)
            .collect();
        let clauses = (0..d)
            .map(|i| {
                let sd = if members.is_empty() {
                    0.0
                } else {
                    let var = members.iter().map(|x| (x[i] - c[i]).powi(2)).sum::<f64>()
                        / members.len() as f64;
                    var.sqrt()
                };
                Clause::new(i, MembershipFunction::gaussian(c[i], clamp_width(sd)))
            })
            .collect();
        rules.push(Rule::new(
            Antecedent::new(clauses)?,
            Consequent::affine(vec![0.0; d], intercept),
        ));
    }
    TskModel::new(d, rules, Aggregation::WeightedAverage)
}

fn rule_weights(model: &TskModel, x: &[f64]) -> Vec<f64> {
    let raw = model.firings_unchecked(x);
    match model.aggregation() {
        Aggregation::WeightedAverage => normalize(raw),
        Aggregation::WeightedSum => raw,
    }
}

/// Refits every affine consequent jointly by least squares with the
/// antecedents held fixed.
pub fn lse_consequents(model: &TskModel, data: &Dataset, ridge_jitter: f64) -> Result<TskModel> {
    check_dim(model.input_dim(), data.dim())?;
    if data.is_empty() {
        return Err(Error::Input(
            "least squares needs at least one example".into(),
        ));
    }
    if let Some(k) = model
        .rules()
        .iter()
        .position(|r| r.consequent.is_constant())
    {
        return Err(Error::InvalidArgument(format!(
            "rule {k} has a constant consequent; convert to affine first"
        )));
    }
    let d = model.input_dim();
    let k = model.num_rules();
    let block = d + 1;
    let mut a = DMatrix::zeros(data.len(), k * block);
    for (n, x) in data.rows().enumerate() {
        for (j, w) in rule_weights(model, x).into_iter().enumerate() {
            for (i, xi) in x.iter().enumerate() {
                a[(n, j * block + i)] = w * xi;
            }
            a[(n, j * block + d)] = w;
        }
    }
    let b = DVector::from_column_slice(data.targets());
    let sol = least_squares(&a, &b, ridge_jitter)?;
    if sol.coefficients.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "least-squares consequents are not finite".into(),
        ));
    }
    let mut out = model.clone();
    for (j, rule) in out.rules_mut().iter_mut().enumerate() {
        let c = &sol.coefficients.as_slice()[j * block..(j + 1) * block];
        rule.consequent = Consequent::affine(c[..d].to_vec(), c[d]);
    }
    Ok(out)
}

/// `sum_n (y_n - y_hat(x_n))^2`
pub fn sse(model: &TskModel, data: &Dataset) -> Result<f64> {
    let pred = model.batch_predict(data)?;
    Ok(pred
        .iter()
        .zip(data.targets())
        .map(|(p, y)| (y - p) * (y - p))
        .sum())
}

/// Gradient of the summed squared error with respect to each Gaussian
/// clause, laid out like the model's clauses.
#[derive(Debug, Clone, PartialEq)]
pub struct AntecedentGradient {
    /// `[rule][clause] = (d/d center, d/d width)`
    pub per_clause: Vec<Vec<(f64, f64)>>,
}

impl AntecedentGradient {
    pub fn flatten(&self) -> Vec<f64> {
        self.per_clause
            .iter()
            .flatten()
            .flat_map(|(c, w)| [*c, *w])
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn require_gaussian(model: &TskModel) -> Result<()> {
    for (k, r) in model.rules().iter().enumerate() {
        if let Some(c) = r.antecedent.clauses().iter().find(|c| !c.mf.is_gaussian()) {
            return Err(Error::UnsupportedMembership(format!(
                "rule {k} feature {}: antecedent gradients need Gaussian membership functions",
                c.feature
            )));
        }
    }
    Ok(())
}

pub fn antecedent_gradients(model: &TskModel, data: &Dataset) -> Result<AntecedentGradient> {
    check_dim(model.input_dim(), data.dim())?;
    require_gaussian(model)?;
    let mut per_clause: Vec<Vec<(f64, f64)>> = model
        .rules()
        .iter()
        .map(|r| vec![(0.0, 0.0); r.antecedent.len()])
        .collect();
    for (x, y) in data.rows().zip(data.targets()) {
        let raw = model.firings_unchecked(x);
        let outputs: Vec<f64> = model.rules().iter().map(|r| r.consequent.eval(x)).collect();
        // d y_hat / d log f_k
        let sens: Vec<f64> = match model.aggregation() {
            Aggregation::WeightedAverage => {
                if is_degenerate_total(&raw) {
                    continue;
                }
                let nf = normalize(raw);
                let yhat: f64 = nf.iter().zip(&outputs).map(|(w, o)| w * o).sum();
                nf.iter()
                    .zip(&outputs)
                    .map(|(w, o)| w * (o - yhat))
                    .collect()
            }
            Aggregation::WeightedSum => raw.iter().zip(&outputs).map(|(f, o)| f * o).collect(),
        };
        let yhat = model.predict_unchecked(x);
        let outer = -2.0 * (y - yhat);
        for ((rule, s), g) in model.rules().iter().zip(&sens).zip(per_clause.iter_mut()) {
            let scale = outer * s;
            if scale == 0.0 {
                continue;
            }
            for (c, gc) in rule.antecedent.clauses().iter().zip(g.iter_mut()) {
                if let MembershipFunction::Gaussian { center, width } = c.mf {
                    let diff = x[c.feature] - center;
                    let w2 = width * width;
                    gc.0 += scale * diff / w2;
                    gc.1 += scale * diff * diff / (w2 * width);
                }
            }
        }
    }
    Ok(AntecedentGradient { per_clause })
}

/// Gaussian `(center, width)` pairs in rule/clause order.
pub fn gaussian_params(model: &TskModel) -> Vec<f64> {
    model
        .rules()
        .iter()
        .flat_map(|r| r.antecedent.clauses().iter())
        .flat_map(|c| match c.mf {
            MembershipFunction::Gaussian { center, width } => vec![center, width],
            _ => vec![],
        })
        .collect()
}

/// Replaces Gaussian parameters from a vector laid out like [`gaussian_params`].
/// Widths are used as given (no clamping) so finite differences see the raw map.
pub fn with_gaussian_params(model: &TskModel, params: &[f64]) -> TskModel {
    let mut out = model.clone();
    let mut it = params.chunks_exact(2);
    for r in out.rules_mut() {
        for c in r.antecedent.clauses_mut() {
            if c.mf.is_gaussian() {
                let p = it.next().expect("parameter vector too short");
                c.mf = MembershipFunction::gaussian(p[0], p[1]);
            }
        }
    }
    out
}

fn gradient_step(model: &TskModel, grad: &AntecedentGradient, step: f64) -> TskModel {
    let mut out = model.clone();
    for (r, g) in out.rules_mut().iter_mut().zip(&grad.per_clause) {
        for (c, (gc, gw)) in r.antecedent.clauses_mut().iter_mut().zip(g) {
            if let MembershipFunction::Gaussian { center, width } = c.mf {
                c.mf = MembershipFunction::gaussian(
                    center - step * gc,
                    clamp_width(width - step * gw),
                );
            }
        }
    }
    out
}

/// Hybrid learning. Each epoch refits the consequents by least squares
/// (forward pass, whose training error is recorded), then takes one
/// full-batch gradient step on the antecedents with the consequents frozen
/// (backward pass). The returned model gets a final least-squares refresh so
/// its consequents match its antecedents.
pub fn hybrid_train(
    model: &TskModel,
    data: &Dataset,
    config: &TrainConfig,
    validation: Option<&Dataset>,
) -> Result<(TskModel, TrainHistory)> {
    config.validate()?;
    check_dim(model.input_dim(), data.dim())?;
    require_gaussian(model)?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok((model.clone(), history));
    }
    let step = config.learning_rate / data.len() as f64;
    let mut current = model.clone();
    for _ in 0..config.epochs {
        current = lse_consequents(&current, data, config.ridge_jitter)?;
        let train_mse = mse(&current.batch_predict(data)?, data.targets())?;
        let val_mse = match validation {
            Some(v) if !v.is_empty() => Some(mse(&current.batch_predict(v)?, v.targets())?),
            _ => None,
        };
        history.push(train_mse, val_mse);
        if config.learning_rate > 0.0 {
            let grad = antecedent_gradients(&current, data)?;
            current = gradient_step(&current, &grad, step);
        }
    }
    current = lse_consequents(&current, data, config.ridge_jitter)?;
    Ok((current, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DataSpec, Generator};
    use crate::gradcheck::{central_difference, max_relative_error, FD_STEP};

    #[test]
    fn grid_examples() {
        let m = grid_init(&[(0.0, 1.0)], 2, None).unwrap();
        assert_eq!(m.num_rules(), 2);
        let mfs: Vec<_> = m
            .rules()
            .iter()
            .map(|r| r.antecedent.clauses()[0].mf)
            .collect();
        assert_eq!(mfs[0], MembershipFunction::gaussian(0.0, 0.5));
        assert_eq!(mfs[1], MembershipFunction::gaussian(1.0, 0.5));
        assert_eq!(grid_init(&[(0.0, 1.0); 2], 3, None).unwrap().num_rules(), 9);
        let err = grid_init(&[(0.0, 1.0); 5], 7, None).unwrap_err();
        assert!(err.to_string().contains("16807"), "{err}");
    }

    #[test]
    fn grid_intercept_from_data() {
        let ds = Dataset::new(vec![vec![0.0], vec![1.0]], vec![2.0, 4.0]).unwrap();
        let m = grid_init(&[(0.0, 1.0)], 3, Some(&ds)).unwrap();
        assert!(m
            .rules()
            .iter()
            .all(|r| r.consequent == Consequent::affine(vec![0.0], 3.0)));
    }

    #[test]
    fn cluster_examples() {
        let ds = Dataset::new(
            vec![vec![0.0, 1.0], vec![3.0, -1.0], vec![5.0, 2.0]],
            vec![0.0, 1.0, 2.0],
        )
        .unwrap();
        let m = cluster_init(&ds, 3, 4).unwrap();
        let mut centers: Vec<Vec<f64>> = m
            .rules()
            .iter()
            .map(|r| {
                r.antecedent
                    .clauses()
                    .iter()
                    .map(|c| match c.mf {
                        MembershipFunction::Gaussian { center, .. } => center,
                        _ => unreachable!(),
                    })
                    .collect()
            })
            .collect();
        centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(
            centers,
            vec![vec![0.0, 1.0], vec![3.0, -1.0], vec![5.0, 2.0]]
        );

        let one = cluster_init(&ds, 1, 0).unwrap();
        let c: Vec<f64> = one.rules()[0]
            .antecedent
            .clauses()
            .iter()
            .map(|c| match c.mf {
                MembershipFunction::Gaussian { center, .. } => center,
                _ => unreachable!(),
            })
            .collect();
        assert!((c[0] - 8.0 / 3.0).abs() < 1e-12 && (c[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!(cluster_init(&ds, 4, 0).is_err());
    }

    #[test]
    fn lse_rejects_constant_consequents() {
        let m = TskModel::new(
            1,
            vec![Rule::new(Antecedent::vacuous(), Consequent::Constant(1.0))],
            Aggregation::WeightedAverage,
        )
        .unwrap();
        let ds = Dataset::new(vec![vec![0.0]], vec![1.0]).unwrap();
        assert!(lse_consequents(&m, &ds, 1e-8).is_err());
        let affine = grid_init(&[(0.0, 1.0)], 2, None).unwrap();
        assert!(lse_consequents(&affine, &Dataset::empty(1), 1e-8).is_err());
    }

    #[test]
    fn single_rule_has_zero_antecedent_gradient() {
        let ds = generate(&DataSpec::new(Generator::Sinc2d, 30, 2)).unwrap();
        let m = grid_init(&[(-10.0, 10.0); 2], 1, Some(&ds)).unwrap();
        let g = antecedent_gradients(&m, &ds).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn sigmoid_gradients_unsupported() {
        let m = TskModel::new(
            1,
            vec![Rule::new(
                Antecedent::new(vec![Clause::new(
                    0,
                    MembershipFunction::sigmoid_up(1.0, 0.0),
                )])
                .unwrap(),
                Consequent::affine(vec![0.0], 0.0),
            )],
            Aggregation::WeightedAverage,
        )
        .unwrap();
        let ds = Dataset::new(vec![vec![0.0]], vec![1.0]).unwrap();
        assert!(matches!(
            antecedent_gradients(&m, &ds),
            Err(Error::UnsupportedMembership(_))
        ));
    }

    #[test]
    fn weighted_sum_gradients_match_finite_differences() {
        let ds = generate(&DataSpec::new(Generator::Sinc2d, 25, 6)).unwrap();
        let base = grid_init(&[(-10.0, 10.0); 2], 2, None).unwrap();
        let rules: Vec<Rule> = base
            .rules()
            .iter()
            .enumerate()
            .map(|(k, r)| {
                Rule::new(
                    r.antecedent.clone(),
                    Consequent::affine(vec![0.1, -0.05], 0.3 * k as f64),
                )
            })
            .collect();
        let m = TskModel::new(2, rules, Aggregation::WeightedSum).unwrap();
        let analytic = antecedent_gradients(&m, &ds).unwrap().flatten();
        let p = gaussian_params(&m);
        let numeric = central_difference(
            |q| sse(&with_gaussian_params(&m, q), &ds).unwrap(),
            &p,
            FD_STEP,
        );
        assert!(max_relative_error(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn zero_epochs_and_zero_rate() {
        let ds = generate(&DataSpec::new(Generator::Sinc2d, 49, 1)).unwrap();
        let m = grid_init(&[(-10.0, 10.0); 2], 2, Some(&ds)).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (same, h) = hybrid_train(&m, &ds, &cfg, None).unwrap();
        assert_eq!(same, m);
        assert!(h.is_empty());

        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 0.0,
            ..Default::default()
        };
        let (trained, h) = hybrid_train(&m, &ds, &cfg, Some(&ds)).unwrap();
        assert_eq!(h.len(), 5);
        assert_eq!(gaussian_params(&trained), gaussian_params(&m));
        assert_eq!(trained, lse_consequents(&m, &ds, cfg.ridge_jitter).unwrap());
        assert!(h.records.iter().all(|r| r.val_mse == Some(r.train_mse)));
    }
}

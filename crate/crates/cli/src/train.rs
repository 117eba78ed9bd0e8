use fuzzy_bridge::anfis::{
    cluster_init, even_gaussians, grid_antecedents, grid_init, hybrid_train,
};
use fuzzy_bridge::cart::{fit_tree, fuzzify_tree, SteepnessPolicy};
use fuzzy_bridge::model::AnyModel;
use fuzzy_bridge::moe::{train_moe, tsk_to_moe, MoeLoss};
use fuzzy_bridge::stacking::{
    fit_adaptive_stack, fit_bases, fit_constant_stack, local_rule_fit, nozaki_fit, stack_report,
    DEFAULT_NOZAKI_ALPHA, DEFAULT_RIDGE,
};
use fuzzy_bridge::train::{TrainConfig, TrainHistory};
use fuzzy_bridge::{mse, Dataset, Error, MembershipFunction, Result};
use serde_json::{json, Map, Value};

use crate::config::Config;
use crate::TrainArgs;

pub struct Trained {
    pub model: AnyModel,
    pub history: Option<TrainHistory>,
    /// Method-specific metric fields.
    pub extra: Map<String, Value>,
}

fn train_config(args: &TrainArgs, cfg: &Config, seed: u64, lr_default: f64) -> Result<TrainConfig> {
    let defaults = TrainConfig::default();
    Ok(TrainConfig {
        epochs: cfg.get(args.epochs, "epochs", defaults.epochs)?,
        learning_rate: cfg.get(args.lr, "lr", lr_default)?,
        ridge_jitter: cfg.get(args.ridge_jitter, "ridge-jitter", defaults.ridge_jitter)?,
        seed,
    })
}

fn mf_grid(data: &Dataset, p: usize) -> Result<Vec<Vec<MembershipFunction>>> {
    if p == 0 {
        return Err(Error::InvalidArgument("--mfs must be at least 1".into()));
    }
    let ranges = data
        .feature_ranges()
        .ok_or_else(|| Error::Input("training set is empty".into()))?;
    Ok(ranges
        .into_iter()
        .map(|(lo, hi)| {
            if hi > lo {
                even_gaussians(lo, hi, p)
            } else {
                even_gaussians(lo - 0.5, hi + 0.5, p)
            }
        })
        .collect())
}

fn parse_loss(name: &str, lambda: f64) -> Result<MoeLoss> {
    match name {
        "competitive" => Ok(MoeLoss::Competitive),
        "coupled" => Ok(MoeLoss::Coupled),
        "hybrid" => Ok(MoeLoss::Hybrid { lambda }),
        _ => Err(Error::InvalidArgument(format!(
            "unknown loss {name:?} (expected competitive, coupled or hybrid)"
        ))),
    }
}

pub const METHODS: &[&str] = &[
    "anfis",
    "moe",
    "cart",
    "fuzzy-cart",
    "stack",
    "nozaki",
    "local-rules",
];

pub fn check_method(method: &str) -> Result<()> {
    if METHODS.contains(&method) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "unknown method {method:?} (expected one of {})",
            METHODS.join(", ")
        )))
    }
}

pub fn train(
    method: &str,
    args: &TrainArgs,
    cfg: &Config,
    data: &Dataset,
    seed: u64,
) -> Result<Trained> {
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut extra = Map::new();
    let mut history = None;
    let model = match method {
        "anfis" => {
            let init = cfg.get(args.init.clone(), "init", "grid".to_string())?;
            let start = match init.as_str() {
                "grid" => {
                    let p = cfg.get(args.mfs, "mfs", 2)?;
                    let ranges = data.feature_ranges().expect("non-empty");
                    let ranges: Vec<_> = ranges
                        .into_iter()
                        .map(|(lo, hi)| {
                            if hi > lo {
                                (lo, hi)
                            } else {
                                (lo - 0.5, hi + 0.5)
                            }
                        })
                        .collect();
                    extra.insert("mfs".into(), json!(p));
                    grid_init(&ranges, p, Some(data))?
                }
                "cluster" => {
                    let k = cfg.get(args.clusters, "clusters", 4)?;
                    extra.insert("clusters".into(), json!(k));
                    cluster_init(data, k, seed)?
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown init {other:?} (expected grid or cluster)"
                    )))
                }
            };
            let tc = train_config(args, cfg, seed, 0.01)?;
            extra.insert("init".into(), json!(init));
            extra.insert("epochs".into(), json!(tc.epochs));
            extra.insert("learning_rate".into(), json!(tc.learning_rate));
            let (m, h) = hybrid_train(&start, data, &tc, None)?;
            history = Some(h);
            AnyModel::Tsk(m)
        }
        "moe" => {
            let k = cfg.get(args.experts, "experts", 4)?;
            let lambda = cfg.get(args.lambda, "lambda", MoeLoss::DEFAULT_LAMBDA)?;
            let loss_name = cfg.get(args.loss.clone(), "loss", "hybrid".to_string())?;
            let loss = parse_loss(&loss_name, lambda)?;
            let tc = train_config(args, cfg, seed, 0.01)?;
            let start = tsk_to_moe(&cluster_init(data, k, seed)?)?;
            let (m, h) = train_moe(&start, data, loss, &tc)?;
            extra.insert("experts".into(), json!(k));
            extra.insert("loss".into(), json!(loss_name));
            if let MoeLoss::Hybrid { lambda } = loss {
                extra.insert("lambda".into(), json!(lambda));
            }
            extra.insert("epochs".into(), json!(tc.epochs));
            extra.insert("learning_rate".into(), json!(tc.learning_rate));
            history = Some(h);
            AnyModel::Moe(m)
        }
        "cart" | "fuzzy-cart" => {
            let max_leaves = cfg.get(args.max_leaves, "max-leaves", 8)?;
            let min_leaf = cfg.get(args.min_leaf, "min-leaf", 5)?;
            let tree = fit_tree(data, max_leaves, min_leaf)?;
            extra.insert("max_leaves".into(), json!(max_leaves));
            extra.insert("min_leaf".into(), json!(min_leaf));
            extra.insert("leaves".into(), json!(tree.num_leaves()));
            if method == "cart" {
                AnyModel::Tree(tree)
            } else {
                let policy = match cfg.pick(args.steepness, "steepness")? {
                    Some(alpha) => SteepnessPolicy::Fixed { alpha },
                    None => SteepnessPolicy::Gap {
                        scale: cfg.get(args.steepness_scale, "steepness-scale", 8.0)?,
                    },
                };
                extra.insert("steepness".into(), serde_json::to_value(policy)?);
                AnyModel::FuzzyTree(fuzzify_tree(&tree, policy)?)
            }
        }
        "stack" => {
            let k = cfg.get(args.bases, "bases", 5)?;
            let ridge = cfg.get(args.ridge, "ridge", DEFAULT_RIDGE)?;
            let combiner = cfg.get(args.combiner.clone(), "combiner", "constant".to_string())?;
            let bases = fit_bases(data, k, seed, ridge)?;
            let stack = match combiner.as_str() {
                "constant" => fit_constant_stack(&bases, data, ridge)?,
                "adaptive" => {
                    let tc = train_config(args, cfg, seed, 0.1)?;
                    let (s, h) = fit_adaptive_stack(&bases, data, &tc)?;
                    history = Some(h);
                    s
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown combiner {other:?} (expected constant or adaptive)"
                    )))
                }
            };
            let report = stack_report(&stack, data, None)?;
            extra.insert("bases".into(), serde_json::to_value(&report.bases)?);
            extra.insert("combiner".into(), serde_json::to_value(&report.combiner)?);
            AnyModel::Stack(stack)
        }
        "nozaki" => {
            let p = cfg.get(args.mfs, "mfs", 3)?;
            let alpha = cfg.get(args.nozaki_alpha, "nozaki-alpha", DEFAULT_NOZAKI_ALPHA)?;
            let fit = nozaki_fit(data, &mf_grid(data, p)?, alpha)?;
            extra.insert("mfs".into(), json!(p));
            extra.insert("alpha".into(), json!(alpha));
            extra.insert("flagged_cells".into(), json!(fit.flagged));
            AnyModel::Tsk(fit.model)
        }
        "local-rules" => {
            let p = cfg.get(args.mfs, "mfs", 2)?;
            let ante = grid_antecedents(&mf_grid(data, p)?)?;
            extra.insert("mfs".into(), json!(p));
            AnyModel::Tsk(local_rule_fit(data, ante)?)
        }
        other => return Err(check_method(other).unwrap_err()),
    };
    Ok(Trained {
        model,
        history,
        extra,
    })
}

pub fn metrics(
    method: &str,
    trained: &Trained,
    train: &Dataset,
    test: Option<&Dataset>,
    seed: u64,
) -> Result<Value> {
    let mut m = Map::new();
    m.insert("method".into(), json!(method));
    m.insert("seed".into(), json!(seed));
    m.insert("n_train".into(), json!(train.len()));
    m.insert(
        "train_mse".into(),
        json!(mse(&trained.model.batch_predict(train)?, train.targets())?),
    );
    if let Some(t) = test.filter(|t| !t.is_empty()) {
        m.insert("n_test".into(), json!(t.len()));
        m.insert(
            "test_mse".into(),
            json!(mse(&trained.model.batch_predict(t)?, t.targets())?),
        );
    }
    if let AnyModel::Tsk(tsk) = &trained.model {
        m.insert("rules".into(), json!(tsk.num_rules()));
    }
    for (k, v) in &trained.extra {
        m.insert(k.clone(), v.clone());
    }
    Ok(Value::Object(m))
}

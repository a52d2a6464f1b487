//! Tiered pairwise ranking loss and stage-by-stage encoder training.
//!
//! For sampled members with global reranked positions `r_1 < … < r_k` and
//! retriever scores `s_i`, the loss is
//!
//! ```text
//! L = Σ_{a<b} (r_b − r_a)/(n − 1) · softplus(s_b − s_a)
//! ```
//!
//! which equals `−Σ w · log(e^{s_a} / (e^{s_a} + e^{s_b}))`. Pair weights grow
//! linearly with position distance, so widely separated pairs dominate.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curriculum::{RetrieverTrainingInstance, StageDataset};
use crate::retrieval::{dot, encode, EncoderParams, SparseVector};
use crate::seeds;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrainError {
    #[error("scores ({scores}) and positions ({positions}) differ in length")]
    LengthMismatch { scores: usize, positions: usize },
    #[error("positions must be strictly increasing: {0:?}")]
    Positions(Vec<usize>),
    #[error("n must be at least 2, got {0}")]
    TooFewRanked(usize),
    #[error("non-finite score or loss for query {0}")]
    NonFinite(String),
    #[error("{0} has a zero-norm embedding")]
    ZeroNorm(String),
    #[error("no features for {0}")]
    MissingFeatures(String),
    #[error("stages must be trained in order 1..S, got {0:?}")]
    StageOrder(Vec<usize>),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training instances")]
    Empty,
}

/// Scores for k sampled members and their global positions out of `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TieredLossInput {
    pub scores: Vec<f64>,
    pub positions: Vec<usize>,
    pub n: usize,
}

impl TieredLossInput {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.scores.len() != self.positions.len() {
            return Err(TrainError::LengthMismatch {
                scores: self.scores.len(),
                positions: self.positions.len(),
            });
        }
        if self.n < 2 {
            return Err(TrainError::TooFewRanked(self.n));
        }
        if self.positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TrainError::Positions(self.positions.clone()));
        }
        Ok(())
    }

    fn weight(&self, a: usize, b: usize) -> f64 {
        (self.positions[b] - self.positions[a]) as f64 / (self.n - 1) as f64
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn tiered_loss(input: &TieredLossInput) -> Result<f64, TrainError> {
    input.validate()?;
    let s = &input.scores;
    let mut loss = 0.0;
    for a in 0..s.len() {
        for b in a + 1..s.len() {
            loss += input.weight(a, b) * softplus(s[b] - s[a]);
        }
    }
    Ok(loss)
}

/// `∂L/∂s_i` for every member.
pub fn tiered_loss_grad(input: &TieredLossInput) -> Result<Vec<f64>, TrainError> {
    input.validate()?;
    let s = &input.scores;
    let mut grad = vec![0.0; s.len()];
    for a in 0..s.len() {
        for b in a + 1..s.len() {
            let g = input.weight(a, b) * sigmoid(s[b] - s[a]);
            grad[a] -= g;
            grad[b] += g;
        }
    }
    Ok(grad)
}

/// Gradient with respect to the encoder weight as a sum of outer products
/// `dL/de ⊗ f` over the encoded inputs.
#[derive(Debug, Clone, Default)]
pub struct ParamGradient {
    terms: Vec<(SparseVector, Vec<f64>)>,
}

impl ParamGradient {
    /// Adds `scale · Σ g fᵀ` into a dense row-major `dim_out × dim_in` buffer.
    pub fn accumulate(&self, dense: &mut [f64], dim_in: usize, scale: f64) {
        for (features, g) in &self.terms {
            for (r, &gr) in g.iter().enumerate() {
                if gr == 0.0 {
                    continue;
                }
                let row = &mut dense[r * dim_in..(r + 1) * dim_in];
                for &(c, v) in features.entries() {
                    row[c] += scale * gr * v;
                }
            }
        }
    }

    pub fn to_dense(&self, params: &EncoderParams) -> Vec<f64> {
        let mut out = vec![0.0; params.weight.len()];
        self.accumulate(&mut out, params.dim_in, 1.0);
        out
    }
}

/// `∂cos(u, v)/∂u` given the cosine value.
fn cosine_grad(u: &[f64], v: &[f64], nu: f64, nv: f64, cos: f64) -> Vec<f64> {
    u.iter()
        .zip(v)
        .map(|(&ui, &vi)| vi / (nu * nv) - cos * ui / (nu * nu))
        .collect()
}

/// Loss of one instance and its gradient through cosine similarity and the
/// linear encoder.
pub fn instance_loss_and_param_grad(
    query: (&str, &SparseVector),
    docs: &[(&str, &SparseVector)],
    positions: &[usize],
    n: usize,
    params: &EncoderParams,
) -> Result<(f64, ParamGradient), TrainError> {
    let embed = |id: &str, f: &SparseVector| {
        let e = encode(f, params).map_err(|_| TrainError::MissingFeatures(id.to_string()))?;
        if !e.is_scorable() {
            return Err(TrainError::ZeroNorm(id.to_string()));
        }
        Ok(e)
    };
    let u = embed(query.0, query.1)?;
    let vs = docs
        .iter()
        .map(|(id, f)| embed(id, f))
        .collect::<Result<Vec<_>, _>>()?;
    let scores: Vec<f64> = vs
        .iter()
        .map(|v| dot(u.values(), v.values()) / (u.norm() * v.norm()))
        .collect();
    let input = TieredLossInput {
        scores,
        positions: positions.to_vec(),
        n,
    };
    let loss = tiered_loss(&input)?;
    if !loss.is_finite() {
        return Err(TrainError::NonFinite(query.0.to_string()));
    }
    let g_scores = tiered_loss_grad(&input)?;

    let mut g_query = vec![0.0; params.dim_out];
    let mut terms = Vec::with_capacity(docs.len() + 1);
    for ((v, &gs), ((_, f), &cos)) in vs.iter().zip(&g_scores).zip(docs.iter().zip(&input.scores)) {
        let du = cosine_grad(u.values(), v.values(), u.norm(), v.norm(), cos);
        for (acc, d) in g_query.iter_mut().zip(&du) {
            *acc += gs * d;
        }
        let dv = cosine_grad(v.values(), u.values(), v.norm(), u.norm(), cos);
        terms.push(((*f).clone(), dv.into_iter().map(|d| gs * d).collect()));
    }
    terms.push((query.1.clone(), g_query));
    Ok((loss, ParamGradient { terms }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    SgdMomentum,
}

fn default_lr() -> f64 {
    1e-5
}
fn default_epochs() -> usize {
    3
}
fn default_batch() -> usize {
    64
}
fn default_momentum() -> f64 {
    0.9
}
fn default_passes() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Total passes over stage data; with one pass per stage this equals the stage count.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_passes")]
    pub passes_per_stage: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
            optimizer: Optimizer::Sgd,
            momentum: default_momentum(),
            passes_per_stage: default_passes(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.passes_per_stage == 0 {
            return Err(TrainError::Config(
                "epochs, batch_size and passes_per_stage must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Featurized queries and documents, keyed separately so ids may overlap.
#[derive(Debug, Clone, Default)]
pub struct FeatureTable {
    pub queries: HashMap<String, SparseVector>,
    pub docs: HashMap<String, SparseVector>,
}

impl FeatureTable {
    fn query(&self, id: &str) -> Result<&SparseVector, TrainError> {
        self.queries
            .get(id)
            .ok_or_else(|| TrainError::MissingFeatures(format!("query {id}")))
    }

    fn doc(&self, id: &str) -> Result<&SparseVector, TrainError> {
        self.docs
            .get(id)
            .ok_or_else(|| TrainError::MissingFeatures(format!("document {id}")))
    }
}

fn instance_grad(
    inst: &RetrieverTrainingInstance,
    features: &FeatureTable,
    params: &EncoderParams,
    n: usize,
) -> Result<(f64, ParamGradient), TrainError> {
    let q = features.query(&inst.query_id)?;
    let docs = inst
        .members
        .iter()
        .map(|m| features.doc(&m.doc_id).map(|f| (m.doc_id.as_str(), f)))
        .collect::<Result<Vec<_>, _>>()?;
    instance_loss_and_param_grad((&inst.query_id, q), &docs, &inst.positions(), n, params)
        .map_err(|e| match e {
            TrainError::NonFinite(_) => TrainError::NonFinite(inst.query_id.clone()),
            other => other,
        })
}

/// Mean tiered loss of `instances` under `params`.
pub fn mean_loss(
    instances: &[RetrieverTrainingInstance],
    features: &FeatureTable,
    params: &EncoderParams,
    n: usize,
) -> Result<f64, TrainError> {
    if instances.is_empty() {
        return Err(TrainError::Empty);
    }
    let losses = instances
        .par_iter()
        .map(|i| instance_grad(i, features, params, n).map(|(l, _)| l))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub instances: usize,
    pub steps: usize,
    /// Mean loss per pass, measured on the parameters in effect for each batch.
    pub pass_mean_losses: Vec<f64>,
    pub first_mean_loss: f64,
    pub last_mean_loss: f64,
}

/// Mini-batch descent over `instances`; batches follow a seeded shuffle, the
/// per-instance gradients are reduced in index order and averaged.
pub fn train_stage(
    instances: &[RetrieverTrainingInstance],
    features: &FeatureTable,
    params: &EncoderParams,
    n: usize,
    stage: usize,
    config: &TrainConfig,
) -> Result<(EncoderParams, StageReport), TrainError> {
    config.validate()?;
    if instances.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut params = params.clone();
    let mut velocity = vec![0.0; params.weight.len()];
    let mut grad = vec![0.0; params.weight.len()];
    let mut pass_means = Vec::with_capacity(config.passes_per_stage);
    let mut steps = 0;
    for pass in 0..config.passes_per_stage {
        let mut order: Vec<usize> = (0..instances.len()).collect();
        let mut rng = seeds::rng_for(config.seed, &["train", &stage.to_string(), &pass.to_string()]);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| instance_grad(&instances[i], features, &params, n))
                .collect::<Result<Vec<_>, _>>()?;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for (loss, g) in &results {
                loss_sum += loss;
                g.accumulate(&mut grad, params.dim_in, scale);
            }
            match config.optimizer {
                Optimizer::Sgd => {
                    for (w, g) in params.weight.iter_mut().zip(&grad) {
                        *w -= config.learning_rate * g;
                    }
                }
                Optimizer::SgdMomentum => {
                    for ((w, v), g) in params.weight.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                        *v = config.momentum * *v + g;
                        *w -= config.learning_rate * *v;
                    }
                }
            }
            steps += 1;
        }
        pass_means.push(loss_sum / instances.len() as f64);
    }
    let report = StageReport {
        stage,
        instances: instances.len(),
        steps,
        first_mean_loss: pass_means[0],
        last_mean_loss: *pass_means.last().expect("at least one pass"),
        pass_mean_losses: pass_means,
    };
    Ok((params, report))
}

#[derive(Debug, Clone)]
pub struct CurriculumOutcome {
    pub params: EncoderParams,
    /// Parameters after each stage, in stage order.
    pub checkpoints: Vec<EncoderParams>,
    pub reports: Vec<StageReport>,
}

/// Trains stage 1, then 2, … threading the parameters through.
pub fn train_curriculum(
    stages: &[StageDataset],
    features: &FeatureTable,
    init: &EncoderParams,
    n: usize,
    config: &TrainConfig,
) -> Result<CurriculumOutcome, TrainError> {
    let order: Vec<usize> = stages.iter().map(|s| s.schedule.stage).collect();
    if order.is_empty() || order.iter().enumerate().any(|(i, &s)| s != i + 1) {
        return Err(TrainError::StageOrder(order));
    }
    if stages.len() * config.passes_per_stage != config.epochs {
        return Err(TrainError::Config(format!(
            "{} stages x {} passes does not match epochs = {}",
            stages.len(),
            config.passes_per_stage,
            config.epochs
        )));
    }
    let mut params = init.clone();
    let mut checkpoints = Vec::with_capacity(stages.len());
    let mut reports = Vec::with_capacity(stages.len());
    for ds in stages {
        let (next, report) = train_stage(&ds.instances, features, &params, n, ds.schedule.stage, config)?;
        tracing::info!(stage = ds.schedule.stage, first = report.first_mean_loss, last = report.last_mean_loss, "stage trained");
        params = next;
        checkpoints.push(params.clone());
        reports.push(report);
    }
    Ok(CurriculumOutcome {
        params,
        checkpoints,
        reports,
    })
}

/// Ablation without curriculum: all stage instances pooled and shuffled,
/// trained for the same total number of passes.
pub fn train_without_curriculum(
    stages: &[StageDataset],
    features: &FeatureTable,
    init: &EncoderParams,
    n: usize,
    config: &TrainConfig,
) -> Result<(EncoderParams, StageReport), TrainError> {
    let pooled: Vec<RetrieverTrainingInstance> = stages.iter().flat_map(|s| s.instances.iter().cloned()).collect();
    train_stage(&pooled, features, init, n, 0, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::Member;

    fn input(scores: &[f64], positions: &[usize], n: usize) -> TieredLossInput {
        TieredLossInput {
            scores: scores.to_vec(),
            positions: positions.to_vec(),
            n,
        }
    }

    #[test]
    fn degenerate_and_equal_score_losses() {
        assert_eq!(tiered_loss(&input(&[0.3], &[4], 20)).unwrap(), 0.0);
        let two = tiered_loss(&input(&[0.1, 0.1], &[1, 2], 20)).unwrap();
        assert!((two - std::f64::consts::LN_2 / 19.0).abs() < 1e-12);
        assert!((two - 0.036481).abs() < 5e-7);
        let five = tiered_loss(&input(&[0.5; 5], &[1, 2, 3, 4, 5], 20)).unwrap();
        assert!((five - 20.0 / 19.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((five - 0.7296286).abs() < 5e-7);
    }

    #[test]
    fn equal_score_gradient() {
        let g = tiered_loss_grad(&input(&[0.0, 0.0], &[1, 2], 20)).unwrap();
        assert!((g[0] + 1.0 / 38.0).abs() < 1e-15);
        assert!((g[1] - 1.0 / 38.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(
            tiered_loss(&input(&[0.0, 0.0], &[2, 2], 20)),
            Err(TrainError::Positions(vec![2, 2]))
        );
        assert_eq!(tiered_loss(&input(&[0.0], &[1], 1)), Err(TrainError::TooFewRanked(1)));
        assert!(tiered_loss_grad(&input(&[0.0], &[1, 2], 20)).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
        let big = tiered_loss(&input(&[-500.0, 500.0], &[1, 20], 20)).unwrap();
        assert!((big - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn weight_grows_with_distance() {
        let near = tiered_loss_grad(&input(&[0.2, 0.0], &[1, 2], 20)).unwrap();
        let far = tiered_loss_grad(&input(&[0.2, 0.0], &[1, 11], 20)).unwrap();
        assert!((far[0] / near[0] - 10.0).abs() < 1e-12);
    }

    fn one_hot(i: usize) -> SparseVector {
        SparseVector::from_pairs(vec![(i, 1.0)])
    }

    #[test]
    fn scaling_embeddings_leaves_loss_unchanged() {
        let params = EncoderParams::random(6, 3, 1);
        let mut doubled = params.clone();
        doubled.weight.iter_mut().for_each(|w| *w *= 2.0);
        let q = SparseVector::from_pairs(vec![(0, 1.0), (1, 2.0)]);
        let (d1, d2) = (one_hot(2), SparseVector::from_pairs(vec![(3, 1.0), (4, 1.0)]));
        let docs = [("a", &d1), ("b", &d2)];
        let (l1, _) = instance_loss_and_param_grad(("q", &q), &docs, &[1, 7], 20, &params).unwrap();
        let (l2, _) = instance_loss_and_param_grad(("q", &q), &docs, &[1, 7], 20, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn zero_embedding_names_the_record() {
        let params = EncoderParams::random(4, 2, 1);
        let q = one_hot(0);
        let empty = SparseVector::default();
        let err = instance_loss_and_param_grad(("q", &q), &[("d", &empty), ("e", &q)], &[1, 2], 20, &params).unwrap_err();
        assert_eq!(err, TrainError::ZeroNorm("d".into()));
    }

    fn tiny_setup() -> (Vec<RetrieverTrainingInstance>, FeatureTable) {
        let mut features = FeatureTable::default();
        features.queries.insert("q".into(), SparseVector::from_pairs(vec![(0, 1.0), (1, 1.0)]));
        features.docs.insert("good".into(), SparseVector::from_pairs(vec![(1, 1.0), (2, 1.0)]));
        features.docs.insert("bad".into(), SparseVector::from_pairs(vec![(0, 1.0), (3, 1.0)]));
        let inst = RetrieverTrainingInstance {
            query_id: "q".into(),
            stage: 1,
            members: vec![
                Member { doc_id: "good".into(), position: 1 },
                Member { doc_id: "bad".into(), position: 20 },
            ],
        };
        (vec![inst], features)
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (inst, features) = tiny_setup();
        let p = EncoderParams::random(4, 3, 9);
        let cfg = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        let (out, _) = train_stage(&inst, &features, &p, 20, 1, &cfg).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn single_instance_descent_is_monotone() {
        let (inst, features) = tiny_setup();
        let mut p = EncoderParams::random(4, 3, 2);
        let cfg = TrainConfig { learning_rate: 0.1, batch_size: 1, ..TrainConfig::default() };
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let (next, report) = train_stage(&inst, &features, &p, 20, 1, &cfg).unwrap();
            assert!(report.first_mean_loss < prev, "{} !< {prev}", report.first_mean_loss);
            prev = report.first_mean_loss;
            p = next;
        }
    }

    #[test]
    fn stage_order_is_enforced() {
        use crate::curriculum::{default_schedules, StageDataset};
        let (inst, features) = tiny_setup();
        let ds = |stage: usize| StageDataset {
            schedule: default_schedules()[stage - 1],
            seed: 0,
            epoch: stage,
            instances: inst.iter().cloned().map(|mut i| { i.stage = stage; i }).collect(),
        };
        let p = EncoderParams::random(4, 3, 2);
        let cfg = TrainConfig { learning_rate: 0.01, ..TrainConfig::default() };
        assert!(train_curriculum(&[ds(1), ds(2), ds(3)], &features, &p, 20, &cfg).is_ok());
        assert_eq!(
            train_curriculum(&[ds(2), ds(1), ds(3)], &features, &p, 20, &cfg).unwrap_err(),
            TrainError::StageOrder(vec![2, 1, 3])
        );
    }

    /// Central differences of `f` at `x` along every coordinate.
    fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let (mut up, mut down) = (x.to_vec(), x.to_vec());
                up[i] += h;
                down[i] -= h;
                (f(&up) - f(&down)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let params = EncoderParams::random(8, 4, 3);
        let q = SparseVector::from_pairs(vec![(0, 1.0), (2, 2.0), (5, 1.0)]);
        let d: Vec<SparseVector> = vec![
            SparseVector::from_pairs(vec![(1, 1.0), (2, 1.0)]),
            SparseVector::from_pairs(vec![(3, 1.0), (5, 1.0), (7, 1.0)]),
            SparseVector::from_pairs(vec![(0, 1.0), (6, 2.0)]),
        ];
        let docs: Vec<(&str, &SparseVector)> = vec![("a", &d[0]), ("b", &d[1]), ("c", &d[2])];
        let positions = [1, 6, 17];
        let (_, g) = instance_loss_and_param_grad(("q", &q), &docs, &positions, 20, &params).unwrap();
        let analytic = g.to_dense(&params);
        let loss_at = |w: &[f64]| {
            let p = EncoderParams { weight: w.to_vec(), ..params.clone() };
            instance_loss_and_param_grad(("q", &q), &docs, &positions, 20, &p).unwrap().0
        };
        let numeric = numeric_grad(loss_at, &params.weight, 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-7 || rel_err(*a, *n) < 1e-4, "{a} vs {n}");
        }
    }

    proptest::proptest! {
        #[test]
        fn score_gradient_sums_to_zero_and_matches_differences(
            scores in proptest::collection::vec(-3.0f64..3.0, 2..=5),
            picks in proptest::sample::subsequence((1usize..=20).collect::<Vec<_>>(), 5),
        ) {
            let positions = picks[..scores.len()].to_vec();
            let inp = input(&scores, &positions, 20);
            let g = tiered_loss_grad(&inp).unwrap();
            proptest::prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
            proptest::prop_assert!(tiered_loss(&inp).unwrap() >= 0.0);
            let numeric = numeric_grad(|s| tiered_loss(&input(s, &positions, 20)).unwrap(), &scores, 1e-6);
            for (a, n) in g.iter().zip(&numeric) {
                proptest::prop_assert!((a - n).abs() < 1e-7, "{} vs {}", a, n);
            }
        }

        #[test]
        fn raising_a_better_document_lowers_the_loss(
            scores in proptest::collection::vec(-3.0f64..3.0, 2..=5),
            bump in 0.01f64..1.0,
        ) {
            let positions: Vec<usize> = (1..=scores.len()).map(|i| 3 * i).collect();
            let base = tiered_loss(&input(&scores, &positions, 20)).unwrap();
            let mut up = scores.clone();
            up[0] += bump;
            proptest::prop_assert!(tiered_loss(&input(&up, &positions, 20)).unwrap() < base);
        }
    }
}

//! Desk-scale learning tasks: synthetic regression and classification
//! datasets, disjoint sharding across users, stochastic gradients, and
//! loss/accuracy evaluation.
//!
//! Regression uses quadratic loss `L(w) = 1/(2J) sum (x.w - y)^2` (unique
//! minimizer, closed-form gradient). Classification uses multinomial logistic
//! regression with softmax cross-entropy; the model is `d = p*C` with class
//! `c`'s weights at `w[c*p .. (c+1)*p]`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("degenerate config: {0}")]
    DegenerateConfig(String),
    #[error("invalid batch size {batch} for shard of {points} points")]
    InvalidBatch { batch: usize, points: usize },
    #[error("model dim {model} does not match task dim {task}")]
    DimMismatch { model: usize, task: usize },
    #[error("{points} points not divisible into {users} equal shards")]
    NotDivisible { points: usize, users: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("csv: {0}")]
    Csv(String),
}

/// Which loss family a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
enum Labels {
    Real(Vec<f64>),
    Class { ids: Vec<usize>, num_classes: usize },
}

/// An immutable set of labeled points. Shards are produced by
/// [`shard`]/[`shard_with_skew`] and are disjoint and equal-sized.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Labels,
}

impl Dataset {
    pub fn kind(&self) -> TaskKind {
        match self.labels {
            Labels::Real(_) => TaskKind::Regression,
            Labels::Class { .. } => TaskKind::Classification,
        }
    }

    pub fn num_points(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    /// Dimension of the model this task trains: `p` for regression,
    /// `p*C` for classification.
    pub fn model_dim(&self) -> usize {
        match &self.labels {
            Labels::Real(_) => self.num_features(),
            Labels::Class { num_classes, .. } => self.num_features() * num_classes,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.labels {
            Labels::Real(_) => None,
            Labels::Class { num_classes, .. } => Some(*num_classes),
        }
    }

    pub fn class_ids(&self) -> Option<&[usize]> {
        match &self.labels {
            Labels::Real(_) => None,
            Labels::Class { ids, .. } => Some(ids),
        }
    }

    fn take_rows(&self, rows: &[usize]) -> Dataset {
        let p = self.num_features();
        let mut flat = Vec::with_capacity(rows.len() * p);
        for &r in rows {
            flat.extend(self.features.row(r).iter().copied());
        }
        let features = Array2::from_shape_vec((rows.len(), p), flat).expect("row-major reshape");
        let labels = match &self.labels {
            Labels::Real(ys) => Labels::Real(rows.iter().map(|&r| ys[r]).collect()),
            Labels::Class { ids, num_classes } => Labels::Class {
                ids: rows.iter().map(|&r| ids[r]).collect(),
                num_classes: *num_classes,
            },
        };
        Dataset { features, labels }
    }

    /// Serialize as CSV, one `x_1,..,x_p,label` row per point.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.num_points() {
            for v in self.features.row(r) {
                out.push_str(&v.to_string());
                out.push(',');
            }
            match &self.labels {
                Labels::Real(ys) => out.push_str(&ys[r].to_string()),
                Labels::Class { ids, .. } => out.push_str(&ids[r].to_string()),
            }
            out.push('\n');
        }
        out
    }

    /// Parse the [`to_csv`](Self::to_csv) format back; `kind` decides how the
    /// trailing label column is read. Classification infers the class count
    /// as `max id + 1`.
    pub fn from_csv(text: &str, kind: TaskKind) -> Result<Dataset, TaskError> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut reals = Vec::new();
        let mut ids = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 2 {
                return Err(TaskError::Csv(format!(
                    "line {}: need features and a label",
                    lineno + 1
                )));
            }
            let (xs, label) = fields.split_at(fields.len() - 1);
            let row: Vec<f64> = xs
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| TaskError::Csv(format!("line {}: {e}", lineno + 1)))
                })
                .collect::<Result<_, _>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(TaskError::Csv(format!("line {}: ragged row", lineno + 1)));
                }
            }
            match kind {
                TaskKind::Regression => reals.push(
                    label[0]
                        .parse::<f64>()
                        .map_err(|e| TaskError::Csv(format!("line {}: {e}", lineno + 1)))?,
                ),
                TaskKind::Classification => ids.push(
                    label[0]
                        .parse::<usize>()
                        .map_err(|e| TaskError::Csv(format!("line {}: {e}", lineno + 1)))?,
                ),
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(TaskError::Csv("empty dataset".into()));
        }
        let p = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let features = Array2::from_shape_vec((flat.len() / p, p), flat).expect("reshape");
        let labels = match kind {
            TaskKind::Regression => Labels::Real(reals),
            TaskKind::Classification => {
                let num_classes = ids.iter().copied().max().unwrap_or(0) + 1;
                Labels::Class { ids, num_classes }
            }
        };
        Ok(Dataset { features, labels })
    }
}

/// Dense model parameter vector shared by the server and all users.
/// Entries are required to be finite; updates are re-validated after every
/// aggregation step.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    w: Vec<f64>,
}

impl ModelParams {
    pub fn new(w: Vec<f64>) -> Result<Self, TaskError> {
        if let Some(i) = w.iter().position(|x| !x.is_finite()) {
            return Err(TaskError::NonFinite(format!(
                "model coordinate {i} = {}",
                w[i]
            )));
        }
        Ok(Self { w })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { w: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.w
    }

    pub fn norm(&self) -> f64 {
        crate::sparsify::l2_norm(&self.w)
    }
}

/// Generate a linear-regression dataset: features iid standard normal,
/// `y = x . w_true + noise * eps`, with `w_true` itself iid standard normal.
/// Returns the generating truth for convergence measurement.
pub fn make_regression(
    dim: usize,
    num_points: usize,
    noise: f64,
    seed: u64,
) -> Result<(Dataset, ModelParams), TaskError> {
    if dim < 1 {
        return Err(TaskError::DegenerateConfig("dim must be >= 1".into()));
    }
    if num_points < dim {
        return Err(TaskError::DegenerateConfig(format!(
            "num_points {num_points} < dim {dim}: system underdetermined"
        )));
    }
    if noise < 0.0 {
        return Err(TaskError::DegenerateConfig(format!(
            "noise must be >= 0, got {noise}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let w_true: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut flat = Vec::with_capacity(num_points * dim);
    let mut ys = Vec::with_capacity(num_points);
    for _ in 0..num_points {
        let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut y: f64 = row.iter().zip(&w_true).map(|(x, w)| x * w).sum();
        if noise > 0.0 {
            let eps: f64 = StandardNormal.sample(&mut rng);
            y += noise * eps;
        }
        flat.extend(row);
        ys.push(y);
    }
    let features = Array2::from_shape_vec((num_points, dim), flat).expect("reshape");
    Ok((
        Dataset {
            features,
            labels: Labels::Real(ys),
        },
        ModelParams::new(w_true)?,
    ))
}

/// Generate a Gaussian-cluster classification dataset: one unit-variance
/// cluster per class, cluster centers at distance `separation` from the
/// origin in random directions, classes balanced and rows shuffled.
pub fn make_classification(
    dim: usize,
    num_classes: usize,
    num_points: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, TaskError> {
    if dim < 1 {
        return Err(TaskError::DegenerateConfig("dim must be >= 1".into()));
    }
    if num_classes < 2 {
        return Err(TaskError::DegenerateConfig(format!(
            "num_classes must be >= 2, got {num_classes}"
        )));
    }
    if num_points < num_classes {
        return Err(TaskError::DegenerateConfig(format!(
            "num_points {num_points} < num_classes {num_classes}"
        )));
    }
    if !(separation > 0.0) {
        return Err(TaskError::DegenerateConfig(format!(
            "separation must be > 0, got {separation}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = crate::sparsify::l2_norm(&dir).max(1e-12);
        centers.push(
            dir.into_iter()
                .map(|x| separation * x / n)
                .collect::<Vec<f64>>(),
        );
    }
    // balanced labels: class c gets floor(J/C) points, remainder to low ids
    let mut ids: Vec<usize> = (0..num_points).map(|i| i % num_classes).collect();
    ids.sort_unstable();
    let mut flat = Vec::with_capacity(num_points * dim);
    for &c in &ids {
        for i in 0..dim {
            let eps: f64 = StandardNormal.sample(&mut rng);
            flat.push(centers[c][i] + eps);
        }
    }
    // shuffle rows so shards are class-mixed by default
    let mut order: Vec<usize> = (0..num_points).collect();
    order.shuffle(&mut rng);
    let features = Array2::from_shape_vec((num_points, dim), flat).expect("reshape");
    let ds = Dataset {
        features,
        labels: Labels::Class { ids, num_classes },
    };
    Ok(ds.take_rows(&order))
}

/// Split off the first `n` points as one dataset and the rest as another
/// (train/test split of an already shuffled dataset).
pub fn split_at(ds: &Dataset, n: usize) -> (Dataset, Dataset) {
    assert!(n <= ds.num_points(), "split point beyond dataset");
    let head: Vec<usize> = (0..n).collect();
    let tail: Vec<usize> = (n..ds.num_points()).collect();
    (ds.take_rows(&head), ds.take_rows(&tail))
}

/// Split into `users` disjoint equal-sized shards by sampling without
/// replacement (a seeded permutation, chunked).
pub fn shard(ds: &Dataset, users: usize, seed: u64) -> Result<Vec<Dataset>, TaskError> {
    if users < 1 {
        return Err(TaskError::DegenerateConfig("users must be >= 1".into()));
    }
    let j = ds.num_points();
    if j % users != 0 {
        return Err(TaskError::NotDivisible { points: j, users });
    }
    let mut order: Vec<usize> = (0..j).collect();
    order.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
    let per = j / users;
    Ok(order.chunks(per).map(|rows| ds.take_rows(rows)).collect())
}

/// Label-skewed sharding for classification: per-shard class proportions are
/// drawn from a symmetric Dirichlet with concentration `alpha` (small alpha =
/// strong skew), then quotas are balanced so shards stay disjoint, equal-sized
/// and exhaustive.
pub fn shard_with_skew(
    ds: &Dataset,
    users: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Dataset>, TaskError> {
    let num_classes = ds.num_classes().ok_or_else(|| {
        TaskError::DegenerateConfig("label skew requires a classification task".into())
    })?;
    if !(alpha > 0.0) {
        return Err(TaskError::DegenerateConfig(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    if users < 1 {
        return Err(TaskError::DegenerateConfig("users must be >= 1".into()));
    }
    let j = ds.num_points();
    if j % users != 0 {
        return Err(TaskError::NotDivisible { points: j, users });
    }
    let per = j / users;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // per-class pools of row indices, shuffled
    let ids = ds.class_ids().expect("classification task");
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (row, &c) in ids.iter().enumerate() {
        pools[c].push(row);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    // symmetric Dirichlet via normalized Gamma(alpha, 1) draws
    let gamma = rand_distr::Gamma::new(alpha, 1.0)
        .map_err(|e| TaskError::DegenerateConfig(format!("dirichlet: {e}")))?;
    let mut shards = Vec::with_capacity(users);
    for _ in 0..users {
        let mut proportions: Vec<f64> = (0..num_classes).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = proportions.iter().sum();
        if total > 0.0 {
            for p in &mut proportions {
                *p /= total;
            }
        } else {
            proportions = vec![1.0 / num_classes as f64; num_classes];
        }
        // integer quotas by largest remainder, then take what the pools have
        let mut quota: Vec<usize> = proportions
            .iter()
            .map(|p| (p * per as f64) as usize)
            .collect();
        let mut rem: Vec<(usize, f64)> = proportions
            .iter()
            .enumerate()
            .map(|(c, p)| (c, p * per as f64 - quota[c] as f64))
            .collect();
        rem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut short = per - quota.iter().sum::<usize>();
        for &(c, _) in rem.iter().cycle().take(num_classes.max(short)) {
            if short == 0 {
                break;
            }
            quota[c] += 1;
            short -= 1;
        }
        let mut rows = Vec::with_capacity(per);
        for c in 0..num_classes {
            let take = quota[c].min(pools[c].len());
            rows.extend(pools[c].drain(..take));
        }
        // quota exceeded a pool: fill from whichever classes still have points
        let mut c = 0;
        while rows.len() < per {
            if let Some(row) = pools[c].pop() {
                rows.push(row);
            } else {
                c = (c + 1) % num_classes;
                if pools.iter().all(|p| p.is_empty()) {
                    break;
                }
            }
        }
        rows.sort_unstable();
        shards.push(ds.take_rows(&rows));
    }
    Ok(shards)
}

/// Gradient of the task loss over the given rows (mean over the rows).
pub fn gradient_at(w: &ModelParams, ds: &Dataset, rows: &[usize]) -> Result<Vec<f64>, TaskError> {
    if w.dim() != ds.model_dim() {
        return Err(TaskError::DimMismatch {
            model: w.dim(),
            task: ds.model_dim(),
        });
    }
    assert!(!rows.is_empty(), "gradient over an empty batch");
    let p = ds.num_features();
    let mut grad = vec![0.0; w.dim()];
    match &ds.labels {
        Labels::Real(ys) => {
            for &r in rows {
                let x = ds.features.row(r);
                let pred: f64 = x.iter().zip(w.values()).map(|(xi, wi)| xi * wi).sum();
                let err = pred - ys[r];
                for (gi, xi) in grad.iter_mut().zip(x.iter()) {
                    *gi += err * xi;
                }
            }
        }
        Labels::Class { ids, num_classes } => {
            let probs = &mut vec![0.0; *num_classes];
            for &r in rows {
                let x = ds.features.row(r);
                softmax_probs(
                    w.values(),
                    x.as_slice().expect("contiguous row"),
                    *num_classes,
                    probs,
                );
                for c in 0..*num_classes {
                    let coeff = probs[c] - if ids[r] == c { 1.0 } else { 0.0 };
                    for i in 0..p {
                        grad[c * p + i] += coeff * x[i];
                    }
                }
            }
        }
    }
    let inv = 1.0 / rows.len() as f64;
    for g in &mut grad {
        *g *= inv;
    }
    Ok(grad)
}

/// Exact gradient over a full dataset.
pub fn full_gradient(w: &ModelParams, ds: &Dataset) -> Result<Vec<f64>, TaskError> {
    let rows: Vec<usize> = (0..ds.num_points()).collect();
    gradient_at(w, ds, &rows)
}

/// Stochastic gradient over a uniform without-replacement minibatch of size
/// `batch`; `batch = J` gives the exact full-shard gradient.
pub fn stochastic_gradient<R: Rng + ?Sized>(
    w: &ModelParams,
    shard: &Dataset,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<f64>, TaskError> {
    let j = shard.num_points();
    if batch < 1 || batch > j {
        return Err(TaskError::InvalidBatch { batch, points: j });
    }
    if batch == j {
        return full_gradient(w, shard);
    }
    let rows = rand::seq::index::sample(rng, j, batch).into_vec();
    gradient_at(w, shard, &rows)
}

/// Mean loss on `test`, plus classification accuracy (argmax rule, ties to
/// the lowest class id).
pub fn evaluate(w: &ModelParams, test: &Dataset) -> Result<(f64, Option<f64>), TaskError> {
    if w.dim() != test.model_dim() {
        return Err(TaskError::DimMismatch {
            model: w.dim(),
            task: test.model_dim(),
        });
    }
    let j = test.num_points();
    assert!(j > 0, "evaluate on an empty dataset");
    match &test.labels {
        Labels::Real(ys) => {
            let mut loss = 0.0;
            for r in 0..j {
                let pred: f64 = test
                    .features
                    .row(r)
                    .iter()
                    .zip(w.values())
                    .map(|(xi, wi)| xi * wi)
                    .sum();
                let err = pred - ys[r];
                loss += 0.5 * err * err;
            }
            Ok((loss / j as f64, None))
        }
        Labels::Class { ids, num_classes } => {
            let mut loss = 0.0;
            let mut correct = 0usize;
            let probs = &mut vec![0.0; *num_classes];
            for r in 0..j {
                let x = test.features.row(r);
                softmax_probs(
                    w.values(),
                    x.as_slice().expect("contiguous row"),
                    *num_classes,
                    probs,
                );
                loss -= probs[ids[r]].max(1e-300).ln();
                let argmax = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(c, _)| c)
                    .unwrap();
                if argmax == ids[r] {
                    correct += 1;
                }
            }
            Ok((loss / j as f64, Some(correct as f64 / j as f64)))
        }
    }
}

/// Numerically stable softmax of the per-class logits for one point.
fn softmax_probs(w: &[f64], x: &[f64], num_classes: usize, out: &mut [f64]) {
    let p = x.len();
    let mut max_logit = f64::NEG_INFINITY;
    for c in 0..num_classes {
        let logit: f64 = w[c * p..(c + 1) * p]
            .iter()
            .zip(x)
            .map(|(wi, xi)| wi * xi)
            .sum();
        out[c] = logit;
        if logit > max_logit {
            max_logit = logit;
        }
    }
    let mut z = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max_logit).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

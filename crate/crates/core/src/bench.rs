//! Evaluation protocol: transfer tasks, repeated stratified cross-validation
//! on the target, inner random splits for hyper-parameter selection, and
//! sensitivity sweeps.
//!
//! For every outer split the method sees a training pool made of all source
//! samples, the labeled target training folds and, when the protocol is
//! transductive, the held-out target fold with its labels removed.

use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{fit_pca, mida_matrix, svm_dual};
use crate::domain::{encode_domains, recode_labels, Dataset, Label, RecodedLabels, Role};
use crate::error::{Error, Result};
use crate::kernel::{gram, self_gram, sym_eig_top, KernelSpec};
use crate::model::{sign_labels, DisvmSystem};

/// `{1e-3, 1e-2, …, 1e4}`
pub fn c_grid() -> Vec<f64> {
    (-3..=4).map(|e| 10f64.powi(e)).collect()
}

/// `{0.01, 0.1, 1, 10, 100}`
pub fn lambda_grid() -> Vec<f64> {
    (-2..=2).map(|e| 10f64.powi(e)).collect()
}

/// `{0, 0.01, 0.1, 1, 10, 100}`, the λ axis of the sensitivity sweep.
pub fn lambda_sweep_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend(lambda_grid());
    g
}

/// `{1e-6, 1e-5, …, 1e2}`
pub fn gamma_grid() -> Vec<f64> {
    (-6..=2).map(|e| 10f64.powi(e)).collect()
}

pub fn subspace_grid() -> Vec<usize> {
    vec![20, 40, 50, 60, 80, 100]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Protocol {
    pub outer_repeats: usize,
    pub outer_folds: usize,
    pub inner_splits: usize,
    pub inner_validation_fraction: f64,
    pub seed: u64,
    /// Put the held-out target fold into the training pool without labels.
    pub transductive: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            outer_repeats: 10,
            outer_folds: 5,
            inner_splits: 20,
            inner_validation_fraction: 0.2,
            seed: 0,
            transductive: true,
        }
    }
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        if self.outer_repeats == 0 || self.inner_splits == 0 {
            return Err(Error::InvalidParameter("repeat and split counts must be at least 1".into()));
        }
        if self.outer_folds < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 outer folds, got {}",
                self.outer_folds
            )));
        }
        let f = self.inner_validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "validation fraction must lie in (0, 1), got {f}"
            )));
        }
        Ok(())
    }
}

/// Source pool and target of one transfer experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferTask {
    /// `A->B` or `A&B->C`.
    pub name: String,
    pub source_names: Vec<String>,
    pub target_name: String,
    pub source: Dataset,
    pub target: Dataset,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskSpec {
    /// Every ordered `(source, target)` pair.
    AllPairs,
    /// Each dataset in turn is the target, all others form the source.
    LeaveOneOut,
    /// `(sources, target)` listed by name.
    Explicit(Vec<(Vec<String>, String)>),
}

pub fn make_tasks(datasets: &[(String, Dataset)], spec: &TaskSpec) -> Result<Vec<TransferTask>> {
    let names: Vec<&str> = datasets.iter().map(|(n, _)| n.as_str()).collect();
    let mut tasks = Vec::new();
    match spec {
        TaskSpec::AllPairs => {
            for s in &names {
                for t in &names {
                    if s != t {
                        tasks.push(build_task(datasets, &[s], t)?);
                    }
                }
            }
        }
        TaskSpec::LeaveOneOut => {
            if names.len() >= 2 {
                for t in &names {
                    let sources: Vec<&str> = names.iter().copied().filter(|n| n != t).collect();
                    tasks.push(build_task(datasets, &sources, t)?);
                }
            }
        }
        TaskSpec::Explicit(list) => {
            for (sources, target) in list {
                let sources: Vec<&str> = sources.iter().map(String::as_str).collect();
                tasks.push(build_task(datasets, &sources, target)?);
            }
        }
    }
    Ok(tasks)
}

fn build_task(datasets: &[(String, Dataset)], sources: &[&str], target: &str) -> Result<TransferTask> {
    let lookup = |name: &str| {
        datasets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
            .ok_or_else(|| Error::UnknownDataset(name.to_string()))
    };
    let name = format!("{}->{target}", sources.join("&"));
    if sources.is_empty() {
        return Err(Error::InvalidParameter(format!("task `{name}` has no source")));
    }
    if sources.contains(&target) {
        return Err(Error::SourceIsTarget(name));
    }
    let target_ds = lookup(target)?;
    let parts = sources.iter().map(|s| lookup(s)).collect::<Result<Vec<_>>>()?;
    for p in &parts {
        if p.d() != target_ds.d() {
            return Err(Error::DimensionMismatch {
                context: "task feature dimension",
                expected: target_ds.d(),
                found: p.d(),
            });
        }
    }
    let source = Dataset::concat(&parts)?.with_role(Role::Source)?;
    let target_ds = target_ds.clone().with_role(Role::TargetLabeled)?;
    Ok(TransferTask {
        name,
        source_names: sources.iter().map(|s| s.to_string()).collect(),
        target_name: target.to_string(),
        source,
        target: target_ds,
    })
}

/// One outer train/test partition of the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OuterSplit {
    pub repeat: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn split_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stratified folds of `labels`, `repeats × folds` of them. Within a repeat
/// the test folds partition all samples.
pub fn outer_splits(labels: &[Label], protocol: &Protocol) -> Result<Vec<OuterSplit>> {
    protocol.validate()?;
    let n = labels.len();
    if n / protocol.outer_folds < 2 {
        return Err(Error::InvalidParameter(format!(
            "{n} target samples cannot fill {} folds with both classes",
            protocol.outer_folds
        )));
    }
    if labels.iter().any(|l| !l.is_labeled()) {
        return Err(Error::InvalidData("every target sample needs a label for evaluation".into()));
    }
    let mut splits = Vec::with_capacity(protocol.outer_repeats * protocol.outer_folds);
    for repeat in 0..protocol.outer_repeats {
        let mut rng = split_rng(protocol.seed, repeat as u64);
        let mut folds: Vec<Vec<usize>> = vec![Vec::new(); protocol.outer_folds];
        let mut next = 0;
        for class in [Label::Positive, Label::Negative] {
            let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            idx.shuffle(&mut rng);
            for i in idx {
                folds[next % protocol.outer_folds].push(i);
                next += 1;
            }
        }
        for (fold, test) in folds.iter().enumerate() {
            let mut test = test.clone();
            test.sort_unstable();
            let held: HashSet<usize> = test.iter().copied().collect();
            let train = (0..n).filter(|i| !held.contains(i)).collect();
            splits.push(OuterSplit { repeat, fold, train, test });
        }
    }
    Ok(splits)
}

/// Receives every label vector a method trains on.
pub trait SplitObserver: Sync {
    /// `labeled_ids` are the samples whose labels enter a fit; `held_out_ids`
    /// are the target test fold of the current outer split.
    fn on_fit(&self, labeled_ids: &[&str], held_out_ids: &HashSet<String>);
}

/// Counts fits that saw a held-out label.
#[derive(Debug, Default)]
pub struct LeakageGuard {
    fits: AtomicUsize,
    violations: AtomicUsize,
}

impl LeakageGuard {
    pub fn new() -> Self {
        LeakageGuard::default()
    }

    pub fn fits(&self) -> usize {
        self.fits.load(Ordering::SeqCst)
    }

    pub fn violations(&self) -> usize {
        self.violations.load(Ordering::SeqCst)
    }
}

impl SplitObserver for LeakageGuard {
    fn on_fit(&self, labeled_ids: &[&str], held_out_ids: &HashSet<String>) {
        self.fits.fetch_add(1, Ordering::SeqCst);
        if labeled_ids.iter().any(|id| held_out_ids.contains(*id)) {
            self.violations.fetch_add(1, Ordering::SeqCst);
        }
    }
}

/// Everything a method may use for one outer split.
pub struct SplitContext<'a> {
    /// Training pool; held-out samples (if present) carry no label.
    pub pool: Dataset,
    /// Pool positions that belong to the target experiment.
    pub target_mask: Vec<bool>,
    pub query_features: DMatrix<f64>,
    pub query_ids: Vec<String>,
    /// Pool positions of the queries when the protocol is transductive.
    pub query_in_pool: Option<Vec<usize>>,
    /// Validation pool positions of each inner split.
    pub inner: Vec<Vec<usize>>,
    held_out: HashSet<String>,
    observer: Option<&'a dyn SplitObserver>,
}

impl SplitContext<'_> {
    /// `ỹ` over the pool with the given positions additionally hidden.
    pub fn training_labels(&self, hidden: &[usize]) -> RecodedLabels {
        let mut y = recode_labels(&self.pool).into_inner();
        for &i in hidden {
            y[i] = 0.0;
        }
        RecodedLabels::from_values(y.as_slice()).expect("recoded labels stay in {-1, 0, 1}")
    }

    /// Reports a label vector (over the pool) to the observer. Every fit
    /// must pass its labels through here.
    pub fn observe(&self, labels: &DVector<f64>) {
        if let Some(obs) = self.observer {
            let ids: Vec<&str> = (0..labels.len())
                .filter(|&i| labels[i] != 0.0)
                .map(|i| self.pool.sample_ids()[i].as_str())
                .collect();
            obs.on_fit(&ids, &self.held_out);
        }
    }

    /// Pool positions carrying a label.
    pub fn labeled(&self) -> Vec<usize> {
        (0..self.pool.n())
            .filter(|&i| self.pool.training_label(i).is_labeled())
            .collect()
    }
}

fn build_context<'a>(
    task: &TransferTask,
    split: &OuterSplit,
    protocol: &Protocol,
    observer: Option<&'a dyn SplitObserver>,
) -> Result<SplitContext<'a>> {
    let train = task.target.select(&split.train);
    let test = task.target.select(&split.test);
    let held_out: HashSet<String> = test.sample_ids().iter().cloned().collect();
    let query_features = test.features().clone();
    let query_ids = test.sample_ids().to_vec();

    let n_source = task.source.n();
    let (pool, query_in_pool) = if protocol.transductive {
        let hidden = test.hide_labels();
        let pool = Dataset::concat(&[&task.source, &train, &hidden])?;
        let start = n_source + train.n();
        (pool, Some((start..start + split.test.len()).collect()))
    } else {
        (Dataset::concat(&[&task.source, &train])?, None)
    };
    let target_mask = (0..pool.n()).map(|i| i >= n_source).collect();

    // Validation comes from labeled target samples, stratified by class.
    let mut rng = split_rng(protocol.seed ^ 0x5eed_1a7e, (split.repeat * protocol.outer_folds + split.fold) as u64);
    let target_labeled: Vec<usize> = (n_source..n_source + train.n()).collect();
    let mut inner = Vec::with_capacity(protocol.inner_splits);
    for _ in 0..protocol.inner_splits {
        let mut validation = Vec::new();
        for class in [Label::Positive, Label::Negative] {
            let mut idx: Vec<usize> = target_labeled
                .iter()
                .copied()
                .filter(|&i| pool.labels()[i] == class)
                .collect();
            idx.shuffle(&mut rng);
            let take = ((idx.len() as f64) * protocol.inner_validation_fraction).round() as usize;
            let take = take.clamp(1.min(idx.len()), idx.len().saturating_sub(1).max(1.min(idx.len())));
            validation.extend_from_slice(&idx[..take]);
        }
        validation.sort_unstable();
        inner.push(validation);
    }

    Ok(SplitContext {
        pool,
        target_mask,
        query_features,
        query_ids,
        query_in_pool,
        inner,
        held_out,
        observer,
    })
}

/// Predictions for one outer split plus the chosen hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub predictions: Vec<Label>,
    pub chosen: Vec<(String, f64)>,
}

/// A classifier together with its hyper-parameter search.
pub trait Method: Send + Sync {
    fn name(&self) -> String;

    /// Select hyper-parameters on `ctx.inner` and predict the queries.
    fn run(&self, ctx: &SplitContext) -> Result<SplitOutcome>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over splits.
    pub std: f64,
    pub chosen: Vec<Vec<(String, f64)>>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn accuracy(pred: &[Label], truth: &[Label]) -> f64 {
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    correct as f64 / truth.len() as f64
}

pub fn cross_validate(
    task: &TransferTask,
    method: &dyn Method,
    protocol: &Protocol,
    observer: Option<&dyn SplitObserver>,
) -> Result<CvReport> {
    let splits = outer_splits(task.target.labels(), protocol)?;
    let results: Vec<Result<(f64, Vec<(String, f64)>)>> = splits
        .par_iter()
        .map(|split| {
            let ctx = build_context(task, split, protocol, observer)?;
            let out = method.run(&ctx)?;
            let truth: Vec<Label> = split.test.iter().map(|&i| task.target.labels()[i]).collect();
            if out.predictions.len() != truth.len() {
                return Err(Error::DimensionMismatch {
                    context: "method predictions",
                    expected: truth.len(),
                    found: out.predictions.len(),
                });
            }
            Ok((accuracy(&out.predictions, &truth), out.chosen))
        })
        .collect();
    let mut accuracies = Vec::with_capacity(results.len());
    let mut chosen = Vec::with_capacity(results.len());
    for r in results {
        let (acc, ch) = r?;
        accuracies.push(acc);
        chosen.push(ch);
    }
    let (mean, std) = mean_std(&accuracies);
    Ok(CvReport { accuracies, mean, std, chosen })
}

/// Kernel family with the RBF width left to the grid search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    Linear,
    /// Searched over [`Grids::gamma`].
    Rbf,
    Polynomial { degree: u32, coef: f64 },
}

impl KernelFamily {
    fn candidates(&self, grids: &Grids) -> Vec<KernelSpec> {
        match *self {
            KernelFamily::Linear => vec![KernelSpec::Linear],
            KernelFamily::Rbf => grids.gamma.iter().map(|&gamma| KernelSpec::Rbf { gamma }).collect(),
            KernelFamily::Polynomial { degree, coef } => vec![KernelSpec::Polynomial { degree, coef }],
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFamily::Linear => f.write_str("linear"),
            KernelFamily::Rbf => f.write_str("rbf"),
            KernelFamily::Polynomial { degree, coef } => write!(f, "poly(degree={degree}, coef={coef})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub c: Vec<f64>,
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub h: Vec<usize>,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            c: c_grid(),
            lambda: lambda_grid(),
            gamma: gamma_grid(),
            h: subspace_grid(),
        }
    }
}

impl Grids {
    fn check(&self, need_lambda: bool, need_h: bool) -> Result<()> {
        if self.c.is_empty() || (need_lambda && self.lambda.is_empty()) || self.gamma.is_empty() || (need_h && self.h.is_empty()) {
            return Err(Error::InvalidParameter("hyper-parameter grids must be nonempty".into()));
        }
        Ok(())
    }
}

/// Subspace sizes no larger than `max`, or `[max]` if none qualify.
fn clip_subspaces(grid: &[usize], max: usize) -> Vec<usize> {
    let mut out: Vec<usize> = grid.iter().copied().filter(|&h| h >= 1 && h <= max).collect();
    if out.is_empty() {
        out.push(max);
    }
    out
}

/// Index of the best mean score; the earliest wins ties.
fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    v
}

fn validation_accuracy(decisions: &DVector<f64>, ctx: &SplitContext, validation: &[usize]) -> f64 {
    let correct = validation
        .iter()
        .filter(|&&i| {
            let pred = if decisions[i] >= 0.0 { 1.0 } else { -1.0 };
            pred == ctx.pool.labels()[i].value()
        })
        .count();
    correct as f64 / validation.len() as f64
}

fn check_validation(ctx: &SplitContext) -> Result<()> {
    for v in &ctx.inner {
        if v.is_empty() {
            return Err(Error::InvalidParameter("inner validation split is empty".into()));
        }
    }
    Ok(())
}

/// The domain-independent SVM with the two-stage search: `C` at `λ = 1`,
/// then `λ` at the chosen `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisvmMethod {
    pub kernel: KernelFamily,
    pub grids: Grids,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DisvmMethod {
    fn default() -> Self {
        DisvmMethod {
            kernel: KernelFamily::Linear,
            grids: Grids::default(),
            tol: crate::qp::DEFAULT_TOL,
            max_iter: 100_000,
        }
    }
}

/// `λ` used while the first stage searches `C`.
pub const STAGE_ONE_LAMBDA: f64 = 1.0;

impl DisvmMethod {
    /// Mean validation accuracy of each `C` (ascending) at one `λ`.
    fn score_c_path(&self, ctx: &SplitContext, system: &DisvmSystem, lambda: f64, cs: &[f64]) -> Result<Vec<f64>> {
        let pen = system.with_lambda(lambda)?;
        let mut totals = vec![0.0; cs.len()];
        for validation in &ctx.inner {
            let labels = ctx.training_labels(validation);
            let mut warm: Option<DVector<f64>> = None;
            for (j, &c) in cs.iter().enumerate() {
                ctx.observe(labels.values());
                let sol = pen.solve(labels.values(), c, self.tol, self.max_iter, warm.as_ref())?;
                totals[j] += validation_accuracy(&sol.train_decisions, ctx, validation);
                warm = Some(sol.alpha);
            }
        }
        Ok(totals.iter().map(|t| t / ctx.inner.len() as f64).collect())
    }
}

impl Method for DisvmMethod {
    fn name(&self) -> String {
        "disvm".into()
    }

    fn run(&self, ctx: &SplitContext) -> Result<SplitOutcome> {
        self.grids.check(true, false)?;
        check_validation(ctx)?;
        let domains = encode_domains(&ctx.pool)?;
        let cs = sorted(&self.grids.c);
        let lambdas = sorted(&self.grids.lambda);

        let mut best: Option<(f64, KernelSpec, f64, DisvmSystem)> = None;
        for spec in self.kernel.candidates(&self.grids) {
            let system = DisvmSystem::new(ctx.pool.features(), &domains, spec)?;
            let scores = self.score_c_path(ctx, &system, STAGE_ONE_LAMBDA, &cs)?;
            let j = argmax_first(&scores);
            if best.as_ref().is_none_or(|b| scores[j] > b.0) {
                best = Some((scores[j], spec, cs[j], system));
            }
        }
        let (_, spec, c, system) = best.expect("at least one kernel candidate");

        let mut lambda_scores = Vec::with_capacity(lambdas.len());
        for &lambda in &lambdas {
            lambda_scores.push(self.score_c_path(ctx, &system, lambda, &[c])?[0]);
        }
        let lambda = lambdas[argmax_first(&lambda_scores)];

        let labels = ctx.training_labels(&[]);
        ctx.observe(labels.values());
        let sol = system
            .with_lambda(lambda)?
            .solve(labels.values(), c, self.tol, self.max_iter, None)?;
        let decisions = match &ctx.query_in_pool {
            Some(idx) => DVector::from_iterator(idx.len(), idx.iter().map(|&i| sol.train_decisions[i])),
            None => gram(&ctx.query_features, ctx.pool.features(), &spec)?.entries() * &sol.beta,
        };
        let mut chosen = vec![("C".to_string(), c), ("lambda".to_string(), lambda)];
        if let KernelSpec::Rbf { gamma } = spec {
            chosen.push(("gamma".into(), gamma));
        }
        Ok(SplitOutcome {
            predictions: sign_labels(&decisions),
            chosen,
        })
    }
}

/// Kernel SVM on the labeled pool samples, full grid over `C` (and `γ`).
#[derive(Debug, Clone, PartialEq)]
pub struct SvmMethod {
    pub kernel: KernelFamily,
    pub grids: Grids,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmMethod {
    fn default() -> Self {
        SvmMethod {
            kernel: KernelFamily::Linear,
            grids: Grids::default(),
            tol: crate::qp::DEFAULT_TOL,
            max_iter: 100_000,
        }
    }
}

/// Grid search of a bias-free SVM on a fixed Gram over the `train` positions.
/// Returns the best `C` (smallest on ties) and its mean validation accuracy.
fn svm_c_search(
    ctx: &SplitContext,
    k: &DMatrix<f64>,
    train: &[usize],
    cs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(f64, f64)> {
    let y_all = ctx.training_labels(&[]).into_inner();
    let pos: std::collections::HashMap<usize, usize> = train.iter().enumerate().map(|(a, &i)| (i, a)).collect();
    let mut totals = vec![0.0; cs.len()];
    for validation in &ctx.inner {
        let hidden: HashSet<usize> = validation.iter().copied().collect();
        let fit_idx: Vec<usize> = train.iter().copied().filter(|i| !hidden.contains(i)).collect();
        let fit_pos: Vec<usize> = fit_idx.iter().map(|i| pos[i]).collect();
        let val_pos: Vec<usize> = validation.iter().filter_map(|i| pos.get(i).copied()).collect();
        if val_pos.is_empty() {
            return Err(Error::InvalidParameter("validation samples are not in the training set".into()));
        }
        let k_ff = k.select_rows(&fit_pos).select_columns(&fit_pos);
        let k_vf = k.select_rows(&val_pos).select_columns(&fit_pos);
        let y = DVector::from_iterator(fit_idx.len(), fit_idx.iter().map(|&i| y_all[i]));
        let mut observed = DVector::zeros(ctx.pool.n());
        for &i in &fit_idx {
            observed[i] = y_all[i];
        }
        let mut warm: Option<DVector<f64>> = None;
        for (j, &c) in cs.iter().enumerate() {
            ctx.observe(&observed);
            let dual = svm_dual(&k_ff, &y, c, tol, max_iter, warm.as_ref())?;
            let f = &k_vf * &dual.beta;
            let correct = val_pos
                .iter()
                .zip(f.iter())
                .filter(|(&p, &v)| {
                    let pred = if v >= 0.0 { 1.0 } else { -1.0 };
                    pred == y_all[train[p]]
                })
                .count();
            totals[j] += correct as f64 / val_pos.len() as f64;
            warm = Some(dual.alpha);
        }
    }
    let scores: Vec<f64> = totals.iter().map(|t| t / ctx.inner.len() as f64).collect();
    let j = argmax_first(&scores);
    Ok((cs[j], scores[j]))
}

/// Fits on every `train` position and returns decisions for `queries`.
fn svm_final(
    ctx: &SplitContext,
    k: &DMatrix<f64>,
    k_query: &DMatrix<f64>,
    train: &[usize],
    c: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let y_all = ctx.training_labels(&[]).into_inner();
    let y = DVector::from_iterator(train.len(), train.iter().map(|&i| y_all[i]));
    let mut observed = DVector::zeros(ctx.pool.n());
    for &i in train {
        observed[i] = y_all[i];
    }
    ctx.observe(&observed);
    let dual = svm_dual(k, &y, c, tol, max_iter, None)?;
    Ok(k_query * dual.beta)
}

impl Method for SvmMethod {
    fn name(&self) -> String {
        "svm".into()
    }

    fn run(&self, ctx: &SplitContext) -> Result<SplitOutcome> {
        self.grids.check(false, false)?;
        check_validation(ctx)?;
        let cs = sorted(&self.grids.c);
        let train = ctx.labeled();
        let x = ctx.pool.features().select_columns(&train);

        let mut best: Option<(f64, KernelSpec, f64, DMatrix<f64>)> = None;
        for spec in self.kernel.candidates(&self.grids) {
            let k = self_gram(&x, &spec)?;
            let (c, score) = svm_c_search(ctx, &k, &train, &cs, self.tol, self.max_iter)?;
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, spec, c, k));
            }
        }
        let (_, spec, c, k) = best.expect("at least one kernel candidate");
        let k_query = gram(&ctx.query_features, &x, &spec)?.into_entries();
        let decisions = svm_final(ctx, &k, &k_query, &train, c, self.tol, self.max_iter)?;
        let mut chosen = vec![("C".to_string(), c)];
        if let KernelSpec::Rbf { gamma } = spec {
            chosen.push(("gamma".into(), gamma));
        }
        Ok(SplitOutcome {
            predictions: sign_labels(&decisions),
            chosen,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionVariant {
    /// PCA on target samples only; the classifier sees target labels only.
    PcaTarget,
    /// PCA on the whole pool.
    PcaAll,
    Mida,
    Smida,
}

/// A subspace projection followed by a linear SVM, searched over `(h, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMethod {
    pub variant: ProjectionVariant,
    /// Kernel of the MIDA/SMIDA projection; ignored by PCA.
    pub kernel: KernelSpec,
    pub grids: Grids,
    pub mu_var: f64,
    pub mu_y: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl ProjectionMethod {
    pub fn new(variant: ProjectionVariant) -> Self {
        ProjectionMethod {
            variant,
            kernel: KernelSpec::Linear,
            grids: Grids::default(),
            mu_var: 1.0,
            mu_y: 1.0,
            tol: crate::qp::DEFAULT_TOL,
            max_iter: 100_000,
        }
    }

    /// Projected pool and query features with `h_max` rows, or `None` for
    /// SMIDA, which depends on the labels and is fit per split.
    fn unsupervised(&self, ctx: &SplitContext, h_max: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let pool = ctx.pool.features();
        match self.variant {
            ProjectionVariant::PcaTarget | ProjectionVariant::PcaAll => {
                let fit_on: Vec<usize> = (0..ctx.pool.n())
                    .filter(|&i| self.variant == ProjectionVariant::PcaAll || ctx.target_mask[i])
                    .collect();
                let model = fit_pca(&pool.select_columns(&fit_on), h_max)?;
                Ok((model.transform(pool)?, model.transform(&ctx.query_features)?))
            }
            ProjectionVariant::Mida | ProjectionVariant::Smida => {
                self.kernel_projection(ctx, None, h_max)
            }
        }
    }

    fn kernel_projection(
        &self,
        ctx: &SplitContext,
        labels: Option<&RecodedLabels>,
        h_max: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let pool = ctx.pool.features();
        let domains = encode_domains(&ctx.pool)?;
        let k = self_gram(pool, &self.kernel)?;
        let mu_y = if labels.is_some() { self.mu_y } else { 0.0 };
        let m = mida_matrix(&k, &domains, labels, self.mu_var, mu_y)?;
        let (_, w) = sym_eig_top(&m, h_max)?;
        let kq = gram(pool, &ctx.query_features, &self.kernel)?;
        Ok((w.tr_mul(&k), w.tr_mul(kq.entries())))
    }

    fn classifier_set(&self, ctx: &SplitContext) -> Vec<usize> {
        ctx.labeled()
            .into_iter()
            .filter(|&i| self.variant != ProjectionVariant::PcaTarget || ctx.target_mask[i])
            .collect()
    }

    fn h_max(&self, ctx: &SplitContext) -> usize {
        match self.variant {
            ProjectionVariant::PcaTarget => {
                let n_t = ctx.target_mask.iter().filter(|&&t| t).count();
                ctx.pool.d().min(n_t)
            }
            ProjectionVariant::PcaAll => ctx.pool.d().min(ctx.pool.n()),
            ProjectionVariant::Mida | ProjectionVariant::Smida => ctx.pool.n(),
        }
    }
}

impl Method for ProjectionMethod {
    fn name(&self) -> String {
        match self.variant {
            ProjectionVariant::PcaTarget => "pca-t",
            ProjectionVariant::PcaAll => "pca-st",
            ProjectionVariant::Mida => "mida",
            ProjectionVariant::Smida => "smida",
        }
        .into()
    }

    fn run(&self, ctx: &SplitContext) -> Result<SplitOutcome> {
        self.grids.check(false, true)?;
        check_validation(ctx)?;
        let cs = sorted(&self.grids.c);
        let hs = clip_subspaces(&self.grids.h, self.h_max(ctx));
        let h_max = *hs.iter().max().expect("nonempty");
        let train = self.classifier_set(ctx);
        let linear = KernelSpec::Linear;

        // (score, h, C)
        let mut best: Option<(f64, usize, f64)> = None;
        if self.variant == ProjectionVariant::Smida {
            // Labels change with every inner split, so the projection does too.
            let mut totals = vec![vec![0.0; cs.len()]; hs.len()];
            for (s, validation) in ctx.inner.iter().enumerate() {
                let labels = ctx.training_labels(validation);
                ctx.observe(labels.values());
                let (z, _) = self.kernel_projection(ctx, Some(&labels), h_max)?;
                let single = SplitContext {
                    pool: ctx.pool.clone(),
                    target_mask: ctx.target_mask.clone(),
                    query_features: DMatrix::zeros(0, 0),
                    query_ids: Vec::new(),
                    query_in_pool: None,
                    inner: vec![ctx.inner[s].clone()],
                    held_out: ctx.held_out.clone(),
                    observer: ctx.observer,
                };
                for (a, &h) in hs.iter().enumerate() {
                    let zt = z.rows(0, h).select_columns(&train);
                    let k = self_gram(&zt, &linear)?;
                    let scores = per_c_scores(&single, &k, &train, &cs, self.tol, self.max_iter)?;
                    for (j, sc) in scores.iter().enumerate() {
                        totals[a][j] += sc;
                    }
                }
            }
            for (a, &h) in hs.iter().enumerate() {
                for (j, &c) in cs.iter().enumerate() {
                    let score = totals[a][j] / ctx.inner.len() as f64;
                    if best.is_none_or(|b| score > b.0) {
                        best = Some((score, h, c));
                    }
                }
            }
            let (_, h, c) = best.expect("nonempty grids");
            let labels = ctx.training_labels(&[]);
            ctx.observe(labels.values());
            let (z, zq) = self.kernel_projection(ctx, Some(&labels), h)?;
            let zt = z.select_columns(&train);
            let k = self_gram(&zt, &linear)?;
            let kq = gram(&zq, &zt, &linear)?.into_entries();
            let decisions = svm_final(ctx, &k, &kq, &train, c, self.tol, self.max_iter)?;
            return Ok(SplitOutcome {
                predictions: sign_labels(&decisions),
                chosen: vec![("h".into(), h as f64), ("C".into(), c)],
            });
        }

        let (z, zq) = self.unsupervised(ctx, h_max)?;
        let mut grams = Vec::with_capacity(hs.len());
        for &h in &hs {
            let zt = z.rows(0, h).select_columns(&train);
            let k = self_gram(&zt, &linear)?;
            let (c, score) = svm_c_search(ctx, &k, &train, &cs, self.tol, self.max_iter)?;
            if best.is_none_or(|b| score > b.0) {
                best = Some((score, h, c));
            }
            grams.push((zt, k));
        }
        let (_, h, c) = best.expect("nonempty grids");
        let a = hs.iter().position(|&x| x == h).expect("chosen h is in grid");
        let (zt, k) = &grams[a];
        let kq = gram(&zq.rows(0, h).into_owned(), zt, &linear)?.into_entries();
        let decisions = svm_final(ctx, k, &kq, &train, c, self.tol, self.max_iter)?;
        Ok(SplitOutcome {
            predictions: sign_labels(&decisions),
            chosen: vec![("h".into(), h as f64), ("C".into(), c)],
        })
    }
}

/// Mean validation accuracy of each `C` over `ctx.inner`.
fn per_c_scores(
    ctx: &SplitContext,
    k: &DMatrix<f64>,
    train: &[usize],
    cs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(cs.len());
    for &c in cs {
        out.push(svm_c_search(ctx, k, train, &[c], tol, max_iter)?.1);
    }
    Ok(out)
}

pub const METHOD_NAMES: [&str; 6] = ["disvm", "svm", "pca-t", "pca-st", "mida", "smida"];

/// Built-in method by name, sharing one kernel family and tolerance.
pub fn method_by_name(name: &str, kernel: KernelFamily, tol: f64) -> Result<Box<dyn Method>> {
    let projection_kernel = match kernel {
        KernelFamily::Linear | KernelFamily::Rbf => KernelSpec::Linear,
        KernelFamily::Polynomial { degree, coef } => KernelSpec::Polynomial { degree, coef },
    };
    let projection = |variant| {
        let mut m = ProjectionMethod::new(variant);
        m.kernel = projection_kernel;
        m.tol = tol;
        Box::new(m) as Box<dyn Method>
    };
    Ok(match name {
        "disvm" => Box::new(DisvmMethod { kernel, tol, ..DisvmMethod::default() }),
        "svm" => Box::new(SvmMethod { kernel, tol, ..SvmMethod::default() }),
        "pca-t" => projection(ProjectionVariant::PcaTarget),
        "pca-st" => projection(ProjectionVariant::PcaAll),
        "mida" => projection(ProjectionVariant::Mida),
        "smida" => projection(ProjectionVariant::Smida),
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown method `{other}`, expected one of {}",
                METHOD_NAMES.join(", ")
            )))
        }
    })
}

/// One cell of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub method: String,
    pub task: String,
    pub report: CvReport,
}

/// Cross-validates every method on every task, in method-major order.
pub fn run_bench(
    tasks: &[TransferTask],
    methods: &[Box<dyn Method>],
    protocol: &Protocol,
    observer: Option<&dyn SplitObserver>,
) -> Result<Vec<BenchCell>> {
    let mut cells = Vec::with_capacity(tasks.len() * methods.len());
    for method in methods {
        for task in tasks {
            let report = cross_validate(task, method.as_ref(), protocol, observer)?;
            cells.push(BenchCell {
                method: method.name(),
                task: task.name.clone(),
                report,
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    C,
    Lambda,
}

impl SweepParam {
    /// Grid of the sweep and the value at which the other parameter is held.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepParam::C => c_grid(),
            SweepParam::Lambda => lambda_sweep_grid(),
        }
    }

    pub fn fixed_other(self) -> f64 {
        1.0
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::C => "C",
            SweepParam::Lambda => "lambda",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub value: f64,
    pub mean: f64,
    pub std: f64,
}

/// DI-SVM accuracy along one hyper-parameter with the other held at 1, from
/// a single stratified `outer_folds`-fold split of the target.
pub fn sensitivity_sweep(
    task: &TransferTask,
    param: SweepParam,
    grid: &[f64],
    kernel: KernelSpec,
    tol: f64,
    protocol: &Protocol,
) -> Result<Vec<CurvePoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("sweep grid is empty".into()));
    }
    let single = Protocol { outer_repeats: 1, ..*protocol };
    let splits = outer_splits(task.target.labels(), &single)?;
    let per_split: Vec<Result<Vec<f64>>> = splits
        .par_iter()
        .map(|split| {
            let ctx = build_context(task, split, &single, None)?;
            let domains = encode_domains(&ctx.pool)?;
            let system = DisvmSystem::new(ctx.pool.features(), &domains, kernel)?;
            let labels = ctx.training_labels(&[]);
            let truth: Vec<Label> = split.test.iter().map(|&i| task.target.labels()[i]).collect();
            let mut accs = Vec::with_capacity(grid.len());
            for &value in grid {
                let (c, lambda) = match param {
                    SweepParam::C => (value, param.fixed_other()),
                    SweepParam::Lambda => (param.fixed_other(), value),
                };
                let sol = system.with_lambda(lambda)?.solve(labels.values(), c, tol, 100_000, None)?;
                let decisions = match &ctx.query_in_pool {
                    Some(idx) => DVector::from_iterator(idx.len(), idx.iter().map(|&i| sol.train_decisions[i])),
                    None => gram(&ctx.query_features, ctx.pool.features(), &kernel)?.entries() * &sol.beta,
                };
                accs.push(accuracy(&sign_labels(&decisions), &truth));
            }
            Ok(accs)
        })
        .collect();
    let per_split = per_split.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(j, &value)| {
            let column: Vec<f64> = per_split.iter().map(|accs| accs[j]).collect();
            let (mean, std) = mean_std(&column);
            CurvePoint { value, mean, std }
        })
        .collect())
}

//! The subcommands. Each one writes its artifacts under the output
//! directory next to the resolved `config.toml`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use disvm::bench::{
    cross_validate, make_tasks, method_by_name, run_bench, sensitivity_sweep, BenchCell, TaskSpec, TransferTask,
    METHOD_NAMES,
};
use disvm::domain::{encode_domains, recode_labels, Dataset, Label, Role};
use disvm::{
    fit, fit_mida, fit_pca, fit_smida, fit_svm, generate_synthetic, read_dataset, write_dataset, DisvmParams,
};
use nalgebra::{DMatrix, DVector};

use crate::config::RunConfig;
use crate::Failure;

/// Output directory plus the provenance stamped on every artifact.
pub struct Artifacts<'a> {
    dir: &'a Path,
    seed: u64,
    hash: String,
}

impl<'a> Artifacts<'a> {
    pub fn create(cfg: &'a RunConfig) -> Result<Self, Failure> {
        let dir = cfg.out.as_path();
        fs::create_dir_all(dir).map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))?;
        let hash = cfg.hash();
        let text = format!("# config_hash={hash}\n{}", cfg.to_toml());
        let out = Artifacts { dir, seed: cfg.seed, hash };
        out.write("config.toml", &text)?;
        Ok(out)
    }

    fn write(&self, name: &str, text: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
    }

    /// CSV with `# seed=` and `# config_hash=` lines above the header.
    fn csv(&self, name: &str, header: &str, rows: &[String]) -> Result<(), Failure> {
        let mut text = format!("# seed={}\n# config_hash={}\n{header}\n", self.seed, self.hash);
        for row in rows {
            text.push_str(row);
            text.push('\n');
        }
        self.write(name, &text)
    }

    /// `key=value` lines, provenance first.
    fn report(&self, name: &str, entries: &[(&str, String)]) -> Result<(), Failure> {
        let mut text = format!("seed={}\nconfig_hash={}\n", self.seed, self.hash);
        for (k, v) in entries {
            let _ = writeln!(text, "{k}={v}");
        }
        self.write(name, &text)
    }
}

/// Named datasets from `[data]`, or synthetic ones when none are given.
/// Subjects read from files are namespaced by their dataset name.
pub fn load_datasets(cfg: &RunConfig) -> Result<Vec<(String, Dataset)>, Failure> {
    if cfg.data.is_empty() {
        return Ok(generate_synthetic(&cfg.synth_config())?);
    }
    cfg.data
        .iter()
        .map(|(name, path)| {
            let ds = read_dataset(path).map_err(|e| Failure::from(e).context(&path.display().to_string()))?;
            Ok((name.clone(), ds.with_subject_namespace(name)))
        })
        .collect()
}

pub fn synth(cfg: &RunConfig) -> Result<(), Failure> {
    let data = generate_synthetic(&cfg.synth_config())?;
    let out = Artifacts::create(cfg)?;
    let mut manifest = format!("# seed={}\n# config_hash={}\n", out.seed, out.hash);
    for (name, ds) in &data {
        let file = format!("{name}.csv");
        let path = out.dir.join(&file);
        write_dataset(ds, &path)?;
        let bytes = fs::read(&path).map_err(|e| Failure::data(format!("cannot read back {}: {e}", path.display())))?;
        let _ = writeln!(manifest, "{:x}  {file}", Sha256::digest(&bytes));
    }
    out.write("manifest.txt", &manifest)
}

fn accuracy(pred: &[Label], truth: &[Label]) -> Option<f64> {
    let pairs: Vec<_> = pred.iter().zip(truth).filter(|(_, t)| t.is_labeled()).collect();
    if pairs.is_empty() {
        return None;
    }
    Some(pairs.iter().filter(|(p, t)| p == t).count() as f64 / pairs.len() as f64)
}

pub fn fit_command(cfg: &RunConfig) -> Result<(), Failure> {
    let data = load_datasets(cfg)?;
    let parts: Vec<&Dataset> = data.iter().map(|(_, d)| d).collect();
    let ds = Dataset::concat(&parts)?;
    let spec = cfg.kernel_spec(ds.d())?;
    let method = cfg.model.method.as_str();
    let labeled: Vec<usize> = (0..ds.n()).filter(|&i| ds.training_label(i).is_labeled()).collect();

    let (decisions, diag, extra): (DVector<f64>, disvm::model::Diagnostics, Vec<(&str, String)>) = match method {
        "disvm" => {
            let params = DisvmParams {
                kernel: spec,
                c: cfg.model.c,
                lambda: cfg.model.lambda,
                tol: cfg.model.tol,
                max_iter: cfg.model.max_iter,
            };
            let model = fit(&ds, &params)?;
            let f = model.decision_values(ds.features())?;
            (f, model.diagnostics.clone(), vec![("lambda", cfg.model.lambda.to_string())])
        }
        "svm" => {
            let x = ds.features().select_columns(&labeled);
            let y: Vec<Label> = labeled.iter().map(|&i| ds.labels()[i]).collect();
            let model = fit_svm(&x, &y, spec, cfg.model.c, cfg.model.tol)?;
            (model.decision_values(ds.features())?, model.diagnostics.clone(), Vec::new())
        }
        "pca-t" | "pca-st" | "mida" | "smida" => {
            let (z, h) = project(cfg, &ds, method, spec)?;
            let train: Vec<usize> = if method == "pca-t" {
                labeled.iter().copied().filter(|&i| ds.roles()[i] != Role::Source).collect()
            } else {
                labeled.clone()
            };
            let y: Vec<Label> = train.iter().map(|&i| ds.labels()[i]).collect();
            let model = fit_svm(&z.select_columns(&train), &y, disvm::KernelSpec::Linear, cfg.model.c, cfg.model.tol)?;
            (model.decision_values(&z)?, model.diagnostics.clone(), vec![("h", h.to_string())])
        }
        other => return Err(unknown_method(other)),
    };

    let pred = disvm::model::sign_labels(&decisions);
    let train_truth: Vec<Label> = (0..ds.n()).map(|i| ds.training_label(i)).collect();
    let out = Artifacts::create(cfg)?;
    let mut entries: Vec<(&str, String)> = vec![
        ("method", method.to_string()),
        ("kernel", spec.to_string()),
        ("c", cfg.model.c.to_string()),
    ];
    entries.extend(extra);
    entries.extend([
        ("n_samples", ds.n().to_string()),
        ("n_labeled", labeled.len().to_string()),
        ("objective", format!("{:e}", diag.objective)),
        ("kkt_stationarity", format!("{:e}", diag.kkt.stationarity)),
        ("kkt_primal_feasibility", format!("{:e}", diag.kkt.primal_feasibility)),
        ("kkt_complementarity", format!("{:e}", diag.kkt.complementarity)),
        ("simplified_hsic", format!("{:e}", diag.simplified_hsic)),
        ("iterations", diag.iterations.to_string()),
        ("train_accuracy", fmt_opt(accuracy(&pred, &train_truth))),
    ]);
    let test: Vec<usize> = (0..ds.n()).filter(|&i| ds.roles()[i] == Role::TargetTest).collect();
    if !test.is_empty() {
        let p: Vec<Label> = test.iter().map(|&i| pred[i]).collect();
        let t: Vec<Label> = test.iter().map(|&i| ds.labels()[i]).collect();
        entries.push(("target_test_accuracy", fmt_opt(accuracy(&p, &t))));
    }
    out.report("diagnostics.txt", &entries)?;

    let rows: Vec<String> = (0..ds.n())
        .map(|i| {
            format!(
                "{},{},{},{}",
                ds.sample_ids()[i],
                ds.roles()[i].token(),
                decisions[i],
                pred[i].token()
            )
        })
        .collect();
    out.csv("predictions.csv", "sample_id,role,decision,predicted", &rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |a| a.to_string())
}

/// Projected features of every sample for the subspace baselines.
fn project(cfg: &RunConfig, ds: &Dataset, method: &str, spec: disvm::KernelSpec) -> Result<(DMatrix<f64>, usize), Failure> {
    let target: Vec<usize> = (0..ds.n()).filter(|&i| ds.roles()[i] != Role::Source).collect();
    let limit = match method {
        "pca-t" => ds.d().min(target.len()),
        "pca-st" => ds.d().min(ds.n()),
        _ => ds.n(),
    };
    let h = cfg.model.h.unwrap_or(20).min(limit);
    let model = match method {
        "pca-t" => {
            if target.is_empty() {
                return Err(Failure::data("pca-t needs target samples"));
            }
            fit_pca(&ds.features().select_columns(&target), h)?
        }
        "pca-st" => fit_pca(ds.features(), h)?,
        "mida" => fit_mida(ds.features(), &encode_domains(ds)?, h, cfg.model.mu_var, spec)?,
        _ => fit_smida(
            ds.features(),
            &encode_domains(ds)?,
            &recode_labels(ds),
            h,
            cfg.model.mu_var,
            cfg.model.mu_y,
            spec,
        )?,
    };
    Ok((model.transform(ds.features())?, h))
}

fn unknown_method(name: &str) -> Failure {
    Failure::usage(format!("unknown method `{name}`, expected one of {}", METHOD_NAMES.join(", ")))
}

/// The task named by `[task]`, defaulting to the first two datasets.
fn single_task(cfg: &RunConfig, data: &[(String, Dataset)]) -> Result<TransferTask, Failure> {
    let names: Vec<&String> = data.iter().map(|(n, _)| n).collect();
    let target = match &cfg.task.target {
        Some(t) => t.clone(),
        None => names
            .get(1)
            .map(|s| s.to_string())
            .ok_or_else(|| Failure::usage("a transfer task needs at least two datasets"))?,
    };
    let sources = if cfg.task.sources.is_empty() {
        names.iter().filter(|n| ***n != target).take(1).map(|s| s.to_string()).collect()
    } else {
        cfg.task.sources.clone()
    };
    let mut tasks = make_tasks(data, &TaskSpec::Explicit(vec![(sources, target)]))?;
    Ok(tasks.remove(0))
}

pub fn eval(cfg: &RunConfig) -> Result<(), Failure> {
    let data = load_datasets(cfg)?;
    let task = single_task(cfg, &data)?;
    let protocol = cfg.protocol();
    let method = method_by_name(&cfg.model.method, cfg.kernel_family()?, cfg.model.tol)?;
    let report = cross_validate(&task, method.as_ref(), &protocol, None)?;

    let out = Artifacts::create(cfg)?;
    let rows: Vec<String> = report
        .accuracies
        .iter()
        .zip(&report.chosen)
        .enumerate()
        .map(|(i, (acc, chosen))| {
            let params: Vec<String> = chosen.iter().map(|(k, v)| format!("{k}={v}")).collect();
            format!(
                "{},{},{acc},{}",
                i / protocol.outer_folds,
                i % protocol.outer_folds,
                params.join(";")
            )
        })
        .collect();
    out.csv("cv_report.csv", "repeat,fold,accuracy,chosen", &rows)?;
    out.report(
        "summary.txt",
        &[
            ("method", method.name()),
            ("task", task.name.clone()),
            ("splits", report.accuracies.len().to_string()),
            ("mean", report.mean.to_string()),
            ("std", report.std.to_string()),
        ],
    )
}

pub fn bench(cfg: &RunConfig) -> Result<(), Failure> {
    let data = load_datasets(cfg)?;
    let tasks = make_tasks(&data, &cfg.task_spec()?)?;
    if tasks.is_empty() {
        return Err(Failure::usage("the benchmark needs at least two datasets"));
    }
    let kernel = cfg.kernel_family()?;
    let methods = cfg
        .bench
        .methods
        .iter()
        .map(|m| method_by_name(m, kernel, cfg.model.tol).map_err(Failure::from))
        .collect::<Result<Vec<_>, _>>()?;
    let cells = run_bench(&tasks, &methods, &cfg.protocol(), None)?;

    let out = Artifacts::create(cfg)?;
    let task_names: Vec<&str> = tasks.iter().map(|t| t.name.as_str()).collect();
    let table: Vec<String> = cfg
        .bench
        .methods
        .iter()
        .map(|m| {
            let mut row = m.clone();
            for t in &task_names {
                let cell = find_cell(&cells, m, t);
                let _ = write!(row, ",{:.2}±{:.2}", 100.0 * cell.report.mean, 100.0 * cell.report.std);
            }
            row
        })
        .collect();
    out.csv("results.csv", &format!("method,{}", task_names.join(",")), &table)?;

    let long: Vec<String> = cells
        .iter()
        .map(|c| {
            format!(
                "{},{},{},{},{}",
                c.method,
                c.task,
                c.report.mean,
                c.report.std,
                c.report.accuracies.len()
            )
        })
        .collect();
    out.csv("results_long.csv", "method,task,mean,std,splits", &long)
}

fn find_cell<'a>(cells: &'a [BenchCell], method: &str, task: &str) -> &'a BenchCell {
    cells
        .iter()
        .find(|c| c.method == method && c.task == task)
        .expect("run_bench fills every method and task")
}

pub fn sweep(cfg: &RunConfig) -> Result<(), Failure> {
    let data = load_datasets(cfg)?;
    let task = single_task(cfg, &data)?;
    let param = cfg.sweep_param()?;
    let grid = cfg.sweep.grid.clone().unwrap_or_else(|| param.default_grid());
    let d = task.target.d();
    let curve = sensitivity_sweep(&task, param, &grid, cfg.kernel_spec(d)?, cfg.model.tol, &cfg.protocol())?;

    let out = Artifacts::create(cfg)?;
    let rows: Vec<String> = curve.iter().map(|p| format!("{},{},{}", p.value, p.mean, p.std)).collect();
    out.csv("curve.csv", &format!("{param},mean,std"), &rows)
}

//! Run configuration: a TOML file, defaults for everything it omits, and
//! command-line overrides on top.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use disvm::bench::{KernelFamily, Protocol, SweepParam, TaskSpec};
use disvm::{KernelSpec, SynthConfig};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives both data generation and the evaluation splits.
    pub seed: u64,
    pub out: PathBuf,
    pub synth: SynthSection,
    pub model: ModelSection,
    pub protocol: ProtocolSection,
    pub task: TaskSection,
    pub bench: BenchSection,
    pub sweep: SweepSection,
    /// Dataset name to CSV path. Empty means "generate synthetic data".
    pub data: BTreeMap<String, PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out: PathBuf::from("out"),
            synth: SynthSection::default(),
            model: ModelSection::default(),
            protocol: ProtocolSection::default(),
            task: TaskSection::default(),
            bench: BenchSection::default(),
            sweep: SweepSection::default(),
            data: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub d: usize,
    pub experiments: usize,
    pub subjects_per_experiment: usize,
    pub samples_per_subject_per_class: usize,
    pub class_signal_strength: f64,
    pub subject_shift_strength: f64,
    pub experiment_shift_strength: f64,
    pub noise_std: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSection {
            d: d.d,
            experiments: d.experiments,
            subjects_per_experiment: d.subjects_per_experiment,
            samples_per_subject_per_class: d.samples_per_subject_per_class,
            class_signal_strength: d.class_signal_strength,
            subject_shift_strength: d.subject_shift_strength,
            experiment_shift_strength: d.experiment_shift_strength,
            noise_std: d.noise_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub method: String,
    /// `linear`, `rbf` or `poly`.
    pub kernel: String,
    pub c: f64,
    pub lambda: f64,
    /// RBF width for `fit`; `eval` and `bench` search it instead.
    pub gamma: Option<f64>,
    pub degree: u32,
    pub coef: f64,
    /// Subspace size of the projection methods in `fit`.
    pub h: Option<usize>,
    pub mu_var: f64,
    pub mu_y: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            method: "disvm".into(),
            kernel: "linear".into(),
            c: 1.0,
            lambda: 1.0,
            gamma: None,
            degree: 2,
            coef: 1.0,
            h: None,
            mu_var: 1.0,
            mu_y: 1.0,
            tol: disvm::qp::DEFAULT_TOL,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub outer_repeats: usize,
    pub outer_folds: usize,
    pub inner_splits: usize,
    pub inner_validation_fraction: f64,
    pub transductive: bool,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let p = Protocol::default();
        ProtocolSection {
            outer_repeats: p.outer_repeats,
            outer_folds: p.outer_folds,
            inner_splits: p.inner_splits,
            inner_validation_fraction: p.inner_validation_fraction,
            transductive: p.transductive,
        }
    }
}

/// The transfer task of `eval` and `sweep`. Unset fields fall back to the
/// first two datasets: the first is the source, the second the target.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub sources: Vec<String>,
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub methods: Vec<String>,
    /// `all-pairs` or `leave-one-out`.
    pub tasks: String,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            methods: vec!["svm".into(), "disvm".into()],
            tasks: "all-pairs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// `c` or `lambda`.
    pub param: String,
    pub grid: Option<Vec<f64>>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            param: "lambda".into(),
            grid: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| {
            let msg = e.message().trim().to_string();
            Failure::usage(format!("bad config {}: {msg}", path.display()))
        })
    }

    /// The configuration as written next to the outputs.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved configuration, ignoring the output directory
    /// so that the same experiment hashes alike wherever it is written.
    pub fn hash(&self) -> String {
        let mut anon = self.clone();
        anon.out = PathBuf::new();
        format!("{:x}", Sha256::digest(anon.to_toml().as_bytes()))
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            d: s.d,
            experiments: s.experiments,
            subjects_per_experiment: s.subjects_per_experiment,
            samples_per_subject_per_class: s.samples_per_subject_per_class,
            class_signal_strength: s.class_signal_strength,
            subject_shift_strength: s.subject_shift_strength,
            experiment_shift_strength: s.experiment_shift_strength,
            noise_std: s.noise_std,
            seed: self.seed,
        }
    }

    pub fn protocol(&self) -> Protocol {
        let p = &self.protocol;
        Protocol {
            outer_repeats: p.outer_repeats,
            outer_folds: p.outer_folds,
            inner_splits: p.inner_splits,
            inner_validation_fraction: p.inner_validation_fraction,
            seed: self.seed,
            transductive: p.transductive,
        }
    }

    pub fn kernel_family(&self) -> Result<KernelFamily, Failure> {
        match self.model.kernel.as_str() {
            "linear" => Ok(KernelFamily::Linear),
            "rbf" => Ok(KernelFamily::Rbf),
            "poly" => Ok(KernelFamily::Polynomial {
                degree: self.model.degree,
                coef: self.model.coef,
            }),
            other => Err(Failure::usage(format!("unknown kernel `{other}`, expected linear, rbf or poly"))),
        }
    }

    /// A concrete kernel for single fits; RBF defaults to `γ = 1/d`.
    pub fn kernel_spec(&self, d: usize) -> Result<KernelSpec, Failure> {
        let spec = match self.kernel_family()? {
            KernelFamily::Linear => KernelSpec::Linear,
            KernelFamily::Rbf => KernelSpec::Rbf {
                gamma: self.model.gamma.unwrap_or(1.0 / d.max(1) as f64),
            },
            KernelFamily::Polynomial { degree, coef } => KernelSpec::Polynomial { degree, coef },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn task_spec(&self) -> Result<TaskSpec, Failure> {
        match self.bench.tasks.as_str() {
            "all-pairs" => Ok(TaskSpec::AllPairs),
            "leave-one-out" => Ok(TaskSpec::LeaveOneOut),
            other => Err(Failure::usage(format!(
                "unknown task layout `{other}`, expected all-pairs or leave-one-out"
            ))),
        }
    }

    pub fn sweep_param(&self) -> Result<SweepParam, Failure> {
        match self.sweep.param.to_ascii_lowercase().as_str() {
            "c" => Ok(SweepParam::C),
            "lambda" => Ok(SweepParam::Lambda),
            other => Err(Failure::usage(format!("unknown sweep parameter `{other}`, expected c or lambda"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_keep_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 3\n[model]\nc = 10.0\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model.c, 10.0);
        assert_eq!(cfg.model.lambda, 1.0);
        assert_eq!(cfg.synth.d, 50);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 3\n").is_err());
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = RunConfig::default();
        let b = RunConfig { out: "elsewhere".into(), ..RunConfig::default() };
        let c = RunConfig { seed: 8, ..RunConfig::default() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}

//! Synthetic multi-domain classification data.
//!
//! Each experiment is one dataset. Samples are drawn as
//!
//! ```text
//! x = R_e (s · y · u + o_k) + noise
//! ```
//!
//! where `u` is a unit class direction, `o_k` a per-subject offset orthogonal
//! to `u` with norm `subject_shift_strength`, and `R_e` a per-experiment
//! rotation acting only on the complement of `u`. The label is therefore
//! always readable along `u`, while the nuisance lives elsewhere.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::domain::{Dataset, Label, Role};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub d: usize,
    pub experiments: usize,
    pub subjects_per_experiment: usize,
    pub samples_per_subject_per_class: usize,
    pub class_signal_strength: f64,
    pub subject_shift_strength: f64,
    pub experiment_shift_strength: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            d: 50,
            experiments: 2,
            subjects_per_experiment: 4,
            samples_per_subject_per_class: 20,
            class_signal_strength: 0.3,
            subject_shift_strength: 5.0,
            experiment_shift_strength: 1.0,
            noise_std: 0.3,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 3 {
            return Err(Error::InvalidParameter(format!(
                "synthetic data needs d >= 3, got {}",
                self.d
            )));
        }
        if self.experiments == 0 || self.subjects_per_experiment == 0 || self.samples_per_subject_per_class == 0 {
            return Err(Error::InvalidParameter("synthetic sample counts must be at least 1".into()));
        }
        let strengths = [
            self.class_signal_strength,
            self.subject_shift_strength,
            self.experiment_shift_strength,
        ];
        if strengths.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter("shift and signal strengths must be nonnegative".into()));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise_std must be positive, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// `A`, `B`, …, `Z`, `AA`, `AB`, …
pub fn dataset_name(index: usize) -> String {
    let mut n = index + 1;
    let mut out = Vec::new();
    while n > 0 {
        let rem = (n - 1) % 26;
        out.push(b'A' + rem as u8);
        n = (n - 1) / 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

/// One dataset per experiment, named by [`dataset_name`]. All samples carry
/// the source role and a label.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<(String, Dataset)>> {
    cfg.validate()?;
    let d = cfg.d;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = |rng: &mut ChaCha8Rng, len: usize| {
        DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
    };

    let mut u = normal(&mut rng, d);
    u /= u.norm();
    let proj = DMatrix::identity(d, d) - &u * u.transpose();

    let mut out = Vec::with_capacity(cfg.experiments);
    for e in 0..cfg.experiments {
        let name = dataset_name(e);
        let rotation = {
            let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let skew = &proj * (&g - g.transpose()) * &proj * (cfg.experiment_shift_strength / (d as f64).sqrt());
            cayley(&skew)?
        };

        let per_experiment = cfg.subjects_per_experiment * 2 * cfg.samples_per_subject_per_class;
        let mut features = DMatrix::zeros(d, per_experiment);
        let mut sample_ids = Vec::with_capacity(per_experiment);
        let mut subject_ids = Vec::with_capacity(per_experiment);
        let mut labels = Vec::with_capacity(per_experiment);
        let mut col = 0;
        for s in 0..cfg.subjects_per_experiment {
            let mut offset = &proj * normal(&mut rng, d);
            let norm = offset.norm();
            if norm > 0.0 {
                offset *= cfg.subject_shift_strength / norm;
            }
            for label in [Label::Positive, Label::Negative] {
                let center = &rotation * (&u * (cfg.class_signal_strength * label.value()) + &offset);
                for _ in 0..cfg.samples_per_subject_per_class {
                    let x = &center + normal(&mut rng, d) * cfg.noise_std;
                    features.set_column(col, &x);
                    sample_ids.push(format!("{name}-{col:04}"));
                    subject_ids.push(format!("{name}-s{s}"));
                    labels.push(label);
                    col += 1;
                }
            }
        }
        let ds = Dataset::new(
            features,
            sample_ids,
            vec![name.clone(); per_experiment],
            subject_ids,
            labels,
            vec![Role::Source; per_experiment],
        )?;
        out.push((name, ds));
    }
    Ok(out)
}

/// `(I - S)⁻¹ (I + S)`, orthogonal for skew-symmetric `S`.
fn cayley(skew: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = skew.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    (&eye - skew)
        .lu()
        .solve(&(&eye + skew))
        .ok_or_else(|| Error::InvalidParameter("experiment distortion is singular".into()))
}

//! Datasets, one-hot domain encoding and semi-supervised label recoding.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::kernel::center_columns;

/// Binary class label, or no label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
    Unlabeled,
}

impl Label {
    pub fn from_sign(v: f64) -> Self {
        if v >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    /// `+1`, `-1`, or `0` for unlabeled.
    pub fn value(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
            Label::Unlabeled => 0.0,
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }

    pub fn token(self) -> &'static str {
        match self {
            Label::Positive => "1",
            Label::Negative => "-1",
            Label::Unlabeled => "NA",
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "1" => Ok(Label::Positive),
            "-1" => Ok(Label::Negative),
            "NA" => Ok(Label::Unlabeled),
            other => Err(format!("label `{other}` is not one of 1, -1, NA")),
        }
    }
}

/// What a sample is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Source,
    TargetLabeled,
    /// Target sample whose label, if present, is never shown to training.
    TargetTest,
}

impl Role {
    pub fn token(self) -> &'static str {
        match self {
            Role::Source => "source",
            Role::TargetLabeled => "target_labeled",
            Role::TargetTest => "target_test",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "source" => Ok(Role::Source),
            "target_labeled" => Ok(Role::TargetLabeled),
            "target_test" => Ok(Role::TargetTest),
            other => Err(format!(
                "role `{other}` is not one of source, target_labeled, target_test"
            )),
        }
    }
}

/// Feature matrix (`d × n`) with per-sample metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    sample_ids: Vec<String>,
    experiment_ids: Vec<String>,
    subject_ids: Vec<String>,
    labels: Vec<Label>,
    roles: Vec<Role>,
}

impl Dataset {
    /// Builds a dataset; source and target-labeled samples must carry a label.
    pub fn new(
        features: DMatrix<f64>,
        sample_ids: Vec<String>,
        experiment_ids: Vec<String>,
        subject_ids: Vec<String>,
        labels: Vec<Label>,
        roles: Vec<Role>,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::InvalidData("feature dimension must be at least 1".into()));
        }
        let n = features.ncols();
        check_dim("dataset sample ids", n, sample_ids.len())?;
        check_dim("dataset experiment ids", n, experiment_ids.len())?;
        check_dim("dataset subject ids", n, subject_ids.len())?;
        check_dim("dataset labels", n, labels.len())?;
        check_dim("dataset roles", n, roles.len())?;
        for (i, (label, role)) in labels.iter().zip(&roles).enumerate() {
            if *role != Role::TargetTest && !label.is_labeled() {
                return Err(Error::InvalidData(format!(
                    "sample {} has role {role} but no label",
                    sample_ids[i]
                )));
            }
        }
        Ok(Dataset {
            features,
            sample_ids,
            experiment_ids,
            subject_ids,
            labels,
            roles,
        })
    }

    pub fn n(&self) -> usize {
        self.features.ncols()
    }

    pub fn d(&self) -> usize {
        self.features.nrows()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn experiment_ids(&self) -> &[String] {
        &self.experiment_ids
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    /// Label as seen by training: target-test samples always read as unlabeled.
    pub fn training_label(&self, i: usize) -> Label {
        if self.roles[i] == Role::TargetTest {
            Label::Unlabeled
        } else {
            self.labels[i]
        }
    }

    /// Subset of samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let pick = |v: &[String]| indices.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        Dataset {
            features: self.features.select_columns(indices),
            sample_ids: pick(&self.sample_ids),
            experiment_ids: pick(&self.experiment_ids),
            subject_ids: pick(&self.subject_ids),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            roles: indices.iter().map(|&i| self.roles[i]).collect(),
        }
    }

    /// Same samples with every role replaced.
    pub fn with_role(mut self, role: Role) -> Result<Dataset> {
        if role != Role::TargetTest && self.labels.iter().any(|l| !l.is_labeled()) {
            return Err(Error::InvalidData(format!(
                "cannot assign role {role} to unlabeled samples"
            )));
        }
        self.roles.iter_mut().for_each(|r| *r = role);
        Ok(self)
    }

    /// Same samples with every label removed and the target-test role, so the
    /// labels cannot be read back.
    pub fn hide_labels(mut self) -> Dataset {
        self.labels.iter_mut().for_each(|l| *l = Label::Unlabeled);
        self.roles.iter_mut().for_each(|r| *r = Role::TargetTest);
        self
    }

    /// Prefixes every subject id with `group/`, so that identical raw ids from
    /// different accession groups stay distinct.
    pub fn with_subject_namespace(mut self, group: &str) -> Dataset {
        for s in &mut self.subject_ids {
            *s = format!("{group}/{s}");
        }
        self
    }

    /// Concatenates datasets column-wise, keeping their order.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or(Error::Empty("nothing to concatenate"))?;
        let d = first.d();
        for p in parts {
            check_dim("concatenated feature dimension", d, p.d())?;
        }
        let n: usize = parts.iter().map(|p| p.n()).sum();
        let mut features = DMatrix::zeros(d, n);
        let mut offset = 0;
        for p in parts {
            features.columns_mut(offset, p.n()).copy_from(&p.features);
            offset += p.n();
        }
        let gather = |f: fn(&Dataset) -> &[String]| {
            parts.iter().flat_map(|p| f(p).iter().cloned()).collect::<Vec<_>>()
        };
        Ok(Dataset {
            features,
            sample_ids: gather(Dataset::sample_ids),
            experiment_ids: gather(Dataset::experiment_ids),
            subject_ids: gather(Dataset::subject_ids),
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            roles: parts.iter().flat_map(|p| p.roles.iter().copied()).collect(),
        })
    }
}

/// One-hot experiment and subject indicators and their stacked form `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainMatrix {
    /// `n × p`
    pub e: DMatrix<f64>,
    /// `n × q`
    pub s: DMatrix<f64>,
    /// `(p + q) × n`, `Eᵀ` stacked over `Sᵀ`.
    pub a: DMatrix<f64>,
    /// Experiment identifiers in column order of `E`.
    pub experiments: Vec<String>,
    /// Subject identifiers in column order of `S`.
    pub subjects: Vec<String>,
}

impl DomainMatrix {
    pub fn p(&self) -> usize {
        self.experiments.len()
    }

    pub fn q(&self) -> usize {
        self.subjects.len()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn experiment_index(&self) -> HashMap<&str, usize> {
        index_of(&self.experiments)
    }

    pub fn subject_index(&self) -> HashMap<&str, usize> {
        index_of(&self.subjects)
    }

    /// Linear kernel on the domain matrix, `K_a = AᵀA`.
    pub fn kernel(&self) -> DMatrix<f64> {
        self.a.tr_mul(&self.a)
    }

    /// `H·Aᵀ`, the centered indicator columns (`n × (p+q)`).
    pub fn centered_indicators(&self) -> DMatrix<f64> {
        center_columns(&self.a.transpose())
    }
}

fn index_of(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
}

/// One-hot encodes the experiment and subject of every sample. Columns are
/// ordered by first appearance.
pub fn encode_domains(ds: &Dataset) -> Result<DomainMatrix> {
    encode_ids(ds.experiment_ids(), ds.subject_ids())
}

/// [`encode_domains`] over raw identifier lists.
pub fn encode_ids<S: AsRef<str>>(experiments: &[S], subjects: &[S]) -> Result<DomainMatrix> {
    let n = experiments.len();
    if n == 0 {
        return Err(Error::Empty("cannot encode domains of an empty dataset"));
    }
    check_dim("subject ids", n, subjects.len())?;
    let (e, exp_ids) = one_hot(experiments);
    let (s, subj_ids) = one_hot(subjects);
    let p = exp_ids.len();
    let q = subj_ids.len();
    let mut a = DMatrix::zeros(p + q, n);
    a.rows_mut(0, p).copy_from(&e.transpose());
    a.rows_mut(p, q).copy_from(&s.transpose());
    Ok(DomainMatrix {
        e,
        s,
        a,
        experiments: exp_ids,
        subjects: subj_ids,
    })
}

fn one_hot<S: AsRef<str>>(ids: &[S]) -> (DMatrix<f64>, Vec<String>) {
    let mut order: Vec<String> = Vec::new();
    let mut lookup: HashMap<&str, usize> = HashMap::new();
    let cols: Vec<usize> = ids
        .iter()
        .map(|id| {
            let id = id.as_ref();
            *lookup.entry(id).or_insert_with(|| {
                order.push(id.to_string());
                order.len() - 1
            })
        })
        .collect();
    let mut m = DMatrix::zeros(ids.len(), order.len());
    for (row, col) in cols.into_iter().enumerate() {
        m[(row, col)] = 1.0;
    }
    (m, order)
}

/// Labels recoded to `{-1, 0, +1}` with `0` for unlabeled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RecodedLabels(DVector<f64>);

impl RecodedLabels {
    /// Validates raw numeric labels; `0` and `NaN` both mean unlabeled.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let mut out = Vec::with_capacity(values.len());
        for (i, &v) in values.iter().enumerate() {
            out.push(match v {
                v if v.is_nan() || v == 0.0 => 0.0,
                v if v == 1.0 || v == -1.0 => v,
                v => {
                    return Err(Error::InvalidData(format!(
                        "label {v} at position {i} is not +1, -1 or unlabeled"
                    )))
                }
            });
        }
        Ok(RecodedLabels(DVector::from_vec(out)))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Indices with a nonzero label, in order.
    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] != 0.0).collect()
    }

    pub fn has_both_classes(&self) -> bool {
        self.0.iter().any(|&v| v > 0.0) && self.0.iter().any(|&v| v < 0.0)
    }
}

/// `ỹ_i = y_i` for labeled training samples, `0` otherwise. Target-test
/// samples are recoded to `0` even when the dataset holds their true label.
pub fn recode_labels(ds: &Dataset) -> RecodedLabels {
    RecodedLabels(DVector::from_iterator(
        ds.n(),
        (0..ds.n()).map(|i| ds.training_label(i).value()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(experiments: &[&str], subjects: &[&str], labels: &[Label]) -> Dataset {
        let n = experiments.len();
        Dataset::new(
            DMatrix::from_fn(2, n, |r, c| (r + c) as f64),
            (0..n).map(|i| format!("x{i}")).collect(),
            experiments.iter().map(|s| s.to_string()).collect(),
            subjects.iter().map(|s| s.to_string()).collect(),
            labels.to_vec(),
            labels
                .iter()
                .map(|l| if l.is_labeled() { Role::Source } else { Role::TargetTest })
                .collect(),
        )
        .unwrap()
    }

    use Label::*;

    #[test]
    fn encodes_three_samples() {
        let ds = toy(&["e1", "e1", "e2"], &["s1", "s2", "s1"], &[Positive, Negative, Positive]);
        let dm = encode_domains(&ds).unwrap();
        assert_eq!(dm.e, DMatrix::from_row_slice(3, 2, &[1., 0., 1., 0., 0., 1.]));
        assert_eq!(dm.s, DMatrix::from_row_slice(3, 2, &[1., 0., 0., 1., 1., 0.]));
        assert_eq!(dm.a.shape(), (4, 3));
        for c in 0..3 {
            assert_eq!(dm.a.column(c).sum(), 2.0);
        }
        assert_eq!(dm.experiment_index()["e2"], 1);
        assert_eq!(dm.subject_index()["s2"], 1);
    }

    #[test]
    fn single_domain_is_all_ones() {
        let ds = toy(&["e"; 4], &["s"; 4], &[Positive, Negative, Positive, Negative]);
        let dm = encode_domains(&ds).unwrap();
        assert_eq!(dm.a, DMatrix::from_element(2, 4, 1.0));
    }

    #[test]
    fn unique_subjects_give_identity() {
        let ds = toy(&["e"; 3], &["a", "b", "c"], &[Positive, Negative, Positive]);
        assert_eq!(encode_domains(&ds).unwrap().s, DMatrix::identity(3, 3));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(encode_ids(&empty, &empty), Err(Error::Empty(_))));
    }

    #[test]
    fn domain_kernel_counts_shared_domains() {
        let ds = toy(&["e1", "e1", "e2"], &["s1", "s2", "s1"], &[Positive, Negative, Positive]);
        let ka = encode_domains(&ds).unwrap().kernel();
        assert_eq!(ka, DMatrix::from_row_slice(3, 3, &[2., 1., 1., 1., 2., 0., 1., 0., 2.]));
    }

    #[test]
    fn recoding() {
        let ds = toy(&["e"; 3], &["s"; 3], &[Positive, Negative, Unlabeled]);
        assert_eq!(recode_labels(&ds).values().as_slice(), &[1.0, -1.0, 0.0]);

        let all = toy(&["e"; 2], &["s"; 2], &[Negative, Positive]);
        assert_eq!(recode_labels(&all).values().as_slice(), &[-1.0, 1.0]);

        let none = toy(&["e"; 2], &["s"; 2], &[Unlabeled, Unlabeled]);
        assert_eq!(recode_labels(&none).values().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn target_test_labels_are_hidden() {
        let ds = toy(&["e"; 2], &["s"; 2], &[Positive, Negative]);
        let mut roles = ds.roles().to_vec();
        roles[1] = Role::TargetTest;
        let ds = Dataset::new(
            ds.features().clone(),
            ds.sample_ids().to_vec(),
            ds.experiment_ids().to_vec(),
            ds.subject_ids().to_vec(),
            ds.labels().to_vec(),
            roles,
        )
        .unwrap();
        assert_eq!(recode_labels(&ds).values().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn raw_label_validation() {
        assert!(RecodedLabels::from_values(&[1.0, -1.0, 0.0, f64::NAN]).is_ok());
        assert!(RecodedLabels::from_values(&[2.0]).is_err());
    }

    #[test]
    fn labeled_roles_need_labels() {
        let err = Dataset::new(
            DMatrix::zeros(1, 1),
            vec!["a".into()],
            vec!["e".into()],
            vec!["s".into()],
            vec![Unlabeled],
            vec![Role::Source],
        );
        assert!(err.is_err());
    }

    #[test]
    fn namespacing_separates_groups() {
        let a = toy(&["e1"; 2], &["s1"; 2], &[Positive, Negative]).with_subject_namespace("p1");
        let b = toy(&["e2"; 2], &["s1"; 2], &[Positive, Negative]).with_subject_namespace("p2");
        let dm = encode_domains(&Dataset::concat(&[&a, &b]).unwrap()).unwrap();
        assert_eq!(dm.q(), 2);
    }

    proptest! {
        #[test]
        fn encoding_is_permutation_equivariant(
            exps in proptest::collection::vec(0u8..3, 1..12),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let n = exps.len();
            let experiments: Vec<String> = exps.iter().map(|e| format!("e{e}")).collect();
            let subjects: Vec<String> = (0..n).map(|i| format!("s{}", (i * 7 + seed as usize) % 4)).collect();
            let dm = encode_ids(&experiments, &subjects).unwrap();
            for row in 0..n {
                prop_assert_eq!(dm.e.row(row).sum(), 1.0);
                prop_assert_eq!(dm.s.row(row).sum(), 1.0);
            }

            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pe: Vec<String> = perm.iter().map(|&i| experiments[i].clone()).collect();
            let ps: Vec<String> = perm.iter().map(|&i| subjects[i].clone()).collect();
            let permuted = encode_ids(&pe, &ps).unwrap();
            // Column order may differ (first appearance), so compare the domain kernel.
            let ka = dm.kernel();
            let pka = permuted.kernel();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(pka[(i, j)], ka[(perm[i], perm[j])]);
                }
            }
        }
    }
}

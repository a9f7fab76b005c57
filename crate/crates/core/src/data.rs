//! Synthetic long-tailed classification data and task streams.
//!
//! Class k of K receives `round(n_max · ρ^(−k/(K−1)))` training samples, the
//! standard exponential long-tail profile with imbalance ratio ρ between the
//! largest and smallest classes. Samples are Gaussian clusters around seeded
//! unit-norm means; the test set is balanced. Task streams carve the classes
//! up under two presentation orders (shuffled / in-ordered by frequency) and
//! two starting scenarios (from scratch / from a half-size first task).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::DenseMatrix;
use crate::{Error, Result};

/// Per-class training sample counts under an imbalance ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailProfile {
    /// Sample count per class, indexed by class id.
    pub counts: Vec<usize>,
    pub n_max: usize,
    pub rho: f64,
}

impl LongTailProfile {
    /// Ratio between the most and least populous classes as realized after
    /// rounding.
    pub fn realized_ratio(&self) -> f64 {
        let max = self.counts.iter().max().copied().unwrap_or(0);
        let min = self.counts.iter().min().copied().unwrap_or(0);
        max as f64 / min as f64
    }

    /// Permutes which class id carries which count. By default the tail rank
    /// is tied to class identity (class 0 largest); this detaches it.
    pub fn shuffled_ranks(&self, seed: u64) -> LongTailProfile {
        let mut counts = self.counts.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        counts.shuffle(&mut rng);
        LongTailProfile {
            counts,
            n_max: self.n_max,
            rho: self.rho,
        }
    }
}

/// Shape of the synthetic data to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub cluster_std: f64,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            input_dim: 32,
            cluster_std: 0.35,
            test_per_class: 50,
            seed: 0,
        }
    }
}

/// Labeled samples in row-major feature layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    input_dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl SampleSet {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, features: &[f64], label: usize) {
        debug_assert_eq!(features.len(), self.input_dim);
        self.features.extend_from_slice(features);
        self.labels.push(label);
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copies the given sample rows into a matrix plus aligned labels.
    pub fn gather(&self, indices: &[usize]) -> (DenseMatrix, Vec<usize>) {
        let mut m = DenseMatrix::zeros(indices.len(), self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for (i, &src) in indices.iter().enumerate() {
            m.row_mut(i).copy_from_slice(self.row(src));
            labels.push(self.labels[src]);
        }
        (m, labels)
    }

    /// Whole set as a matrix plus labels.
    pub fn as_matrix(&self) -> (DenseMatrix, Vec<usize>) {
        let indices: Vec<usize> = (0..self.len()).collect();
        self.gather(&indices)
    }

    /// Samples whose label passes the filter, preserving order.
    pub fn filter_by_class<F: Fn(usize) -> bool>(&self, keep: F) -> SampleSet {
        let mut out = SampleSet::new(self.input_dim);
        for i in 0..self.len() {
            if keep(self.labels[i]) {
                out.push(self.row(i), self.labels[i]);
            }
        }
        out
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }
}

/// Train and balanced test splits over the same classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: SampleSet,
    pub test: SampleSet,
    pub num_classes: usize,
}

/// Class presentation order across tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    Shuffled,
    InOrdered,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Shuffled => "shuffled",
            Protocol::InOrdered => "in_ordered",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "shuffled" => Ok(Protocol::Shuffled),
            "in_ordered" => Ok(Protocol::InOrdered),
            other => Err(Error::InvalidConfig(format!(
                "unknown protocol '{other}' (expected shuffled or in_ordered)"
            ))),
        }
    }
}

/// How the stream starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// All classes split evenly across N tasks.
    FromScratch,
    /// A half-size first task, then the rest split across N tasks.
    FromHalf,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::FromScratch => "from_scratch",
            Scenario::FromHalf => "from_half",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "from_scratch" => Ok(Scenario::FromScratch),
            "from_half" => Ok(Scenario::FromHalf),
            other => Err(Error::InvalidConfig(format!(
                "unknown scenario '{other}' (expected from_scratch or from_half)"
            ))),
        }
    }
}

/// One incremental task: a class set plus its training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub classes: Vec<usize>,
    pub train: SampleSet,
}

/// Ordered sequence of tasks with disjoint class sets covering all classes.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub protocol: Protocol,
    pub scenario: Scenario,
    /// The requested N (from-half streams have N+1 tasks in total).
    pub requested_tasks: usize,
}

impl TaskStream {
    /// All classes in presentation order.
    pub fn class_order(&self) -> Vec<usize> {
        self.tasks.iter().flat_map(|t| t.classes.clone()).collect()
    }
}

/// Builds the exponential long-tail profile
/// `n_k = round(n_max · ρ^(−k/(K−1)))` for class rank k = 0..K−1.
pub fn build_profile(num_classes: usize, n_max: usize, rho: f64) -> Result<LongTailProfile> {
    if num_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "num_classes must be >= 2, got {num_classes}"
        )));
    }
    if n_max < num_classes {
        return Err(Error::InvalidConfig(format!(
            "n_max {n_max} must be >= num_classes {num_classes}"
        )));
    }
    if !(rho.is_finite() && rho >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "imbalance ratio must be finite and >= 1, got {rho}"
        )));
    }
    let k_max = (num_classes - 1) as f64;
    let counts: Vec<usize> = (0..num_classes)
        .map(|k| (n_max as f64 * rho.powf(-(k as f64) / k_max)).round() as usize)
        .collect();
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::InvalidConfig(format!(
            "profile (K={num_classes}, n_max={n_max}, rho={rho}) rounds a class to zero samples"
        )));
    }
    Ok(LongTailProfile {
        counts,
        n_max,
        rho,
    })
}

/// Draws Gaussian clusters around seeded unit-norm class means. Training
/// counts follow the profile; the test set holds exactly `test_per_class`
/// fresh draws per class.
pub fn generate_dataset(spec: &SyntheticSpec, profile: &LongTailProfile) -> Result<Dataset> {
    if profile.counts.len() != spec.num_classes {
        return Err(Error::InvalidConfig(format!(
            "profile has {} classes, spec wants {}",
            profile.counts.len(),
            spec.num_classes
        )));
    }
    if spec.num_classes < 2 || spec.input_dim == 0 {
        return Err(Error::InvalidConfig(
            "need at least 2 classes and a positive input_dim".into(),
        ));
    }
    if !(spec.cluster_std.is_finite() && spec.cluster_std > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "cluster_std must be > 0, got {}",
            spec.cluster_std
        )));
    }
    if spec.test_per_class == 0 {
        return Err(Error::InvalidConfig("test_per_class must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = StandardNormal;

    let mut means = Vec::with_capacity(spec.num_classes);
    for _ in 0..spec.num_classes {
        loop {
            let mut m: Vec<f64> = (0..spec.input_dim)
                .map(|_| normal.sample(&mut rng))
                .collect();
            let norm: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-9 {
                for v in &mut m {
                    *v /= norm;
                }
                means.push(m);
                break;
            }
        }
    }

    let sample_around = |mean: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        mean.iter()
            .map(|&m| m + spec.cluster_std * <StandardNormal as Distribution<f64>>::sample(&normal, rng))
            .collect()
    };

    let mut train = SampleSet::new(spec.input_dim);
    for (class, &count) in profile.counts.iter().enumerate() {
        for _ in 0..count {
            let x = sample_around(&means[class], &mut rng);
            train.push(&x, class);
        }
    }
    let mut test = SampleSet::new(spec.input_dim);
    for class in 0..spec.num_classes {
        for _ in 0..spec.test_per_class {
            let x = sample_around(&means[class], &mut rng);
            test.push(&x, class);
        }
    }

    Ok(Dataset {
        train,
        test,
        num_classes: spec.num_classes,
    })
}

/// Splits `classes` into `n` chunks whose sizes differ by at most one,
/// larger chunks first.
fn chunk_even(classes: &[usize], n: usize) -> Vec<Vec<usize>> {
    let base = classes.len() / n;
    let extra = classes.len() % n;
    let mut out = Vec::with_capacity(n);
    let mut off = 0;
    for i in 0..n {
        let size = base + usize::from(i < extra);
        out.push(classes[off..off + size].to_vec());
        off += size;
    }
    out
}

/// Carves the dataset's classes into an ordered task stream.
///
/// In-ordered streams sort classes by descending training-sample count
/// (ties by class id) so the most populous classes come first; shuffled
/// streams use a seeded uniform permutation. From-half streams place
/// ⌈K/2⌉ classes in the first task and split the rest into `n` tasks.
pub fn split_tasks(
    dataset: &Dataset,
    n: usize,
    protocol: Protocol,
    scenario: Scenario,
    seed: u64,
) -> Result<TaskStream> {
    let k = dataset.num_classes;
    if n == 0 {
        return Err(Error::InvalidConfig("task count must be >= 1".into()));
    }
    let incremental_classes = match scenario {
        Scenario::FromScratch => k,
        Scenario::FromHalf => k - k.div_ceil(2),
    };
    if n > incremental_classes {
        return Err(Error::InvalidConfig(format!(
            "cannot split {incremental_classes} classes into {n} tasks"
        )));
    }

    let counts = dataset.train.class_counts();
    let mut classes: Vec<usize> = (0..k).collect();
    match protocol {
        Protocol::InOrdered => {
            classes.sort_by_key(|&c| {
                let count = counts.get(&c).copied().unwrap_or(0);
                (std::cmp::Reverse(count), c)
            });
        }
        Protocol::Shuffled => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            classes.shuffle(&mut rng);
        }
    }

    let chunks: Vec<Vec<usize>> = match scenario {
        Scenario::FromScratch => chunk_even(&classes, n),
        Scenario::FromHalf => {
            let half = k.div_ceil(2);
            let mut chunks = vec![classes[..half].to_vec()];
            chunks.extend(chunk_even(&classes[half..], n));
            chunks
        }
    };

    let tasks = chunks
        .into_iter()
        .map(|chunk| {
            let train = dataset.train.filter_by_class(|l| chunk.contains(&l));
            Task {
                classes: chunk,
                train,
            }
        })
        .collect();

    Ok(TaskStream {
        tasks,
        protocol,
        scenario,
        requested_tasks: n,
    })
}

// ─── File formats ──────────────────────────────────────

/// Writes the dataset as CSV: `sample_id,class_id,split,x0..x{d-1}`.
/// Lines starting with `#` are treated as comments by the reader.
pub fn write_dataset_csv<W: Write>(dataset: &Dataset, w: &mut W) -> Result<()> {
    let d = dataset.train.input_dim();
    write!(w, "sample_id,class_id,split")?;
    for i in 0..d {
        write!(w, ",x{i}")?;
    }
    writeln!(w)?;
    let mut id = 0usize;
    for (set, split) in [(&dataset.train, "train"), (&dataset.test, "test")] {
        for i in 0..set.len() {
            write!(w, "{},{},{}", id, set.label(i), split)?;
            for v in set.row(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
            id += 1;
        }
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset_csv`].
pub fn read_dataset_csv<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r
        .lines()
        .collect::<std::io::Result<Vec<String>>>()?
        .into_iter()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "sample_id" || cols[1] != "class_id" || cols[2] != "split" {
        return Err(Error::Parse(format!("unexpected dataset header '{header}'")));
    }
    let d = cols.len() - 3;

    let mut train = SampleSet::new(d);
    let mut test = SampleSet::new(d);
    let mut max_class = 0usize;
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 3 {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                d + 3,
                fields.len()
            )));
        }
        let class: usize = fields[1]
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: bad class id: {e}", lineno + 2)))?;
        let mut x = Vec::with_capacity(d);
        for f in &fields[3..] {
            x.push(
                f.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: bad feature: {e}", lineno + 2)))?,
            );
        }
        max_class = max_class.max(class);
        match fields[2] {
            "train" => train.push(&x, class),
            "test" => test.push(&x, class),
            other => {
                return Err(Error::Parse(format!(
                    "line {}: unknown split '{other}'",
                    lineno + 2
                )))
            }
        }
    }
    Ok(Dataset {
        train,
        test,
        num_classes: max_class + 1,
    })
}

/// Profile as a JSON object mapping class id to count.
pub fn profile_to_json(profile: &LongTailProfile) -> String {
    let map: serde_json::Map<String, serde_json::Value> = profile
        .counts
        .iter()
        .enumerate()
        .map(|(k, &c)| (k.to_string(), serde_json::Value::from(c)))
        .collect();
    serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("profile serializes")
}

/// Reads a profile written by [`profile_to_json`]. The ratio is recomputed
/// from the realized counts.
pub fn profile_from_json(json: &str) -> Result<LongTailProfile> {
    let map: BTreeMap<String, usize> =
        serde_json::from_str(json).map_err(|e| Error::Parse(format!("profile json: {e}")))?;
    let mut counts = vec![0usize; map.len()];
    for (k, v) in map {
        let idx: usize = k
            .parse()
            .map_err(|e| Error::Parse(format!("profile class id '{k}': {e}")))?;
        if idx >= counts.len() {
            return Err(Error::Parse(format!(
                "profile class ids are not contiguous (saw {idx} among {} classes)",
                counts.len()
            )));
        }
        counts[idx] = v;
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::Parse("profile contains a zero count".into()));
    }
    let n_max = counts.iter().max().copied().unwrap_or(0);
    let n_min = counts.iter().min().copied().unwrap_or(1);
    Ok(LongTailProfile {
        counts,
        n_max,
        rho: n_max as f64 / n_min as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flat_profile_when_ratio_is_one() {
        let p = build_profile(10, 500, 1.0).unwrap();
        assert!(p.counts.iter().all(|&c| c == 500));
        assert_eq!(p.realized_ratio(), 1.0);
    }

    #[test]
    fn exponential_profile_matches_direct_evaluation() {
        // Direct evaluation of round(500 · 100^(−k/9)) for k = 0..9.
        let p = build_profile(10, 500, 100.0).unwrap();
        let oracle: Vec<usize> = (0..10)
            .map(|k| (500.0 * 100f64.powf(-(k as f64) / 9.0)).round() as usize)
            .collect();
        assert_eq!(p.counts, oracle);
        assert_eq!(p.counts, vec![500, 300, 180, 108, 65, 39, 23, 14, 8, 5]);
        assert_eq!(p.realized_ratio(), 100.0);
    }

    #[test]
    fn profile_rejects_zeroing_configs() {
        assert!(build_profile(10, 10, 100.0).is_err()); // n_min rounds to 0
        assert!(build_profile(1, 500, 10.0).is_err());
        assert!(build_profile(10, 5, 2.0).is_err());
        assert!(build_profile(10, 500, 0.5).is_err());
    }

    #[test]
    fn shuffled_ranks_permutes_counts() {
        let p = build_profile(10, 500, 100.0).unwrap();
        let s = p.shuffled_ranks(7);
        let mut a = p.counts.clone();
        let mut b = s.counts.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_ne!(p.counts, s.counts);
    }

    #[test]
    fn dataset_counts_follow_profile_exactly() {
        let spec = SyntheticSpec {
            num_classes: 6,
            input_dim: 8,
            seed: 3,
            test_per_class: 7,
            ..Default::default()
        };
        let profile = build_profile(6, 60, 10.0).unwrap();
        let ds = generate_dataset(&spec, &profile).unwrap();
        let counts = ds.train.class_counts();
        for (k, &want) in profile.counts.iter().enumerate() {
            assert_eq!(counts[&k], want, "class {k}");
        }
        let test_counts = ds.test.class_counts();
        assert!(test_counts.values().all(|&c| c == 7));
    }

    #[test]
    fn dataset_is_seed_deterministic() {
        let spec = SyntheticSpec {
            num_classes: 4,
            input_dim: 5,
            seed: 11,
            test_per_class: 3,
            ..Default::default()
        };
        let profile = build_profile(4, 40, 4.0).unwrap();
        let a = generate_dataset(&spec, &profile).unwrap();
        let b = generate_dataset(&spec, &profile).unwrap();
        assert_eq!(a, b);

        let other = generate_dataset(
            &SyntheticSpec {
                seed: 12,
                ..spec.clone()
            },
            &profile,
        )
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn in_ordered_split_puts_most_populous_first() {
        let spec = SyntheticSpec {
            num_classes: 10,
            input_dim: 4,
            seed: 5,
            test_per_class: 2,
            ..Default::default()
        };
        let profile = build_profile(10, 500, 100.0).unwrap();
        let ds = generate_dataset(&spec, &profile).unwrap();
        let stream = split_tasks(&ds, 5, Protocol::InOrdered, Scenario::FromScratch, 0).unwrap();
        assert_eq!(stream.tasks.len(), 5);
        // Class 0 and 1 carry the largest counts by construction.
        assert_eq!(stream.tasks[0].classes, vec![0, 1]);
        let counts = ds.train.class_counts();
        let task_totals: Vec<usize> = stream
            .tasks
            .iter()
            .map(|t| t.classes.iter().map(|c| counts[c]).sum())
            .collect();
        for w in task_totals.windows(2) {
            assert!(w[0] >= w[1], "task sizes not descending: {task_totals:?}");
        }
    }

    #[test]
    fn shuffled_split_is_seeded() {
        let spec = SyntheticSpec {
            num_classes: 10,
            input_dim: 4,
            seed: 5,
            test_per_class: 2,
            ..Default::default()
        };
        let profile = build_profile(10, 200, 20.0).unwrap();
        let ds = generate_dataset(&spec, &profile).unwrap();
        let a = split_tasks(&ds, 5, Protocol::Shuffled, Scenario::FromScratch, 1).unwrap();
        let b = split_tasks(&ds, 5, Protocol::Shuffled, Scenario::FromScratch, 1).unwrap();
        let c = split_tasks(&ds, 5, Protocol::Shuffled, Scenario::FromScratch, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.class_order(), c.class_order());
    }

    #[test]
    fn from_half_split_shapes() {
        let spec = SyntheticSpec {
            num_classes: 10,
            input_dim: 4,
            seed: 5,
            test_per_class: 2,
            ..Default::default()
        };
        let profile = build_profile(10, 200, 20.0).unwrap();
        let ds = generate_dataset(&spec, &profile).unwrap();
        let stream = split_tasks(&ds, 5, Protocol::InOrdered, Scenario::FromHalf, 0).unwrap();
        let sizes: Vec<usize> = stream.tasks.iter().map(|t| t.classes.len()).collect();
        assert_eq!(sizes, vec![5, 1, 1, 1, 1, 1]);
        // First task holds the five most populous classes.
        assert_eq!(stream.tasks[0].classes, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn split_rejects_too_many_tasks() {
        let spec = SyntheticSpec {
            num_classes: 4,
            input_dim: 3,
            seed: 5,
            test_per_class: 2,
            ..Default::default()
        };
        let profile = build_profile(4, 40, 4.0).unwrap();
        let ds = generate_dataset(&spec, &profile).unwrap();
        assert!(split_tasks(&ds, 5, Protocol::InOrdered, Scenario::FromScratch, 0).is_err());
        assert!(split_tasks(&ds, 3, Protocol::InOrdered, Scenario::FromHalf, 0).is_err());
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let spec = SyntheticSpec {
            num_classes: 3,
            input_dim: 4,
            seed: 9,
            test_per_class: 2,
            ..Default::default()
        };
        let profile = build_profile(3, 12, 3.0).unwrap();
        let ds = generate_dataset(&spec, &profile).unwrap();
        let mut bytes = Vec::new();
        write_dataset_csv(&ds, &mut bytes).unwrap();
        let back = read_dataset_csv(bytes.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn profile_json_roundtrip() {
        let p = build_profile(5, 100, 10.0).unwrap();
        let json = profile_to_json(&p);
        let back = profile_from_json(&json).unwrap();
        assert_eq!(back.counts, p.counts);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn profiles_are_monotone_with_ratio_near_rho(
            k in 2usize..30,
            n_max in 100usize..1000,
            rho in 1.0..150.0f64
        ) {
            if let Ok(p) = build_profile(k, n_max, rho) {
                for w in p.counts.windows(2) {
                    prop_assert!(w[0] >= w[1]);
                }
                // Within 10% of the requested ratio when rounding allows it.
                if n_max as f64 / rho >= 10.0 {
                    let realized = p.realized_ratio();
                    prop_assert!((realized - rho).abs() / rho <= 0.1,
                        "realized {realized} vs rho {rho}");
                }
            }
        }

        #[test]
        fn streams_partition_the_classes(
            k in 4usize..16,
            n in 2usize..4,
            seed in 0u64..50,
            shuffled in proptest::bool::ANY,
            from_half in proptest::bool::ANY
        ) {
            let scenario = if from_half { Scenario::FromHalf } else { Scenario::FromScratch };
            prop_assume!(scenario == Scenario::FromScratch || n <= k - k.div_ceil(2));
            prop_assume!(n <= k);
            let spec = SyntheticSpec {
                num_classes: k, input_dim: 3, cluster_std: 0.3, test_per_class: 1, seed,
            };
            let profile = build_profile(k, 4 * k, 4.0).unwrap();
            let ds = generate_dataset(&spec, &profile).unwrap();
            let protocol = if shuffled { Protocol::Shuffled } else { Protocol::InOrdered };
            let stream = split_tasks(&ds, n, protocol, scenario, seed).unwrap();

            let mut seen = std::collections::BTreeSet::new();
            for task in &stream.tasks {
                prop_assert!(!task.classes.is_empty());
                for &c in &task.classes {
                    prop_assert!(seen.insert(c), "class {c} appears twice");
                }
                // Every task sample belongs to the task's classes.
                for i in 0..task.train.len() {
                    prop_assert!(task.classes.contains(&task.train.label(i)));
                }
            }
            prop_assert_eq!(seen.len(), k);
            if scenario == Scenario::FromHalf {
                prop_assert_eq!(stream.tasks[0].classes.len(), k.div_ceil(2));
                prop_assert_eq!(stream.tasks.len(), n + 1);
            } else {
                let sizes: Vec<usize> = stream.tasks.iter().map(|t| t.classes.len()).collect();
                let min = sizes.iter().min().unwrap();
                let max = sizes.iter().max().unwrap();
                prop_assert!(max - min <= 1);
            }
        }
    }
}

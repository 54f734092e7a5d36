//! Dataset acquisition, preprocessing, and client partitioning.
//!
//! Sources are a seeded Gaussian-blob synthetic generator (a desk-scale
//! stand-in for large tabular intrusion-detection corpora) and CSV
//! ingestion. Preprocessing covers majority-class capping, train-fitted
//! standardization, and stratified 3-way splits. Client shards come from a
//! class-inventory partitioner that targets configured per-client size and
//! class-count ranges, or from a symmetric Dirichlet label-skew scheme.
//!
//! Every operation is a pure function of `(inputs, seed)`.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Synthetic,
    Csv,
}

/// A labeled tabular dataset with a fixed class universe.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    class_names: Vec<String>,
    provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        class_names: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("dataset must hold at least one sample"));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "features len {} != {} rows x {} dims",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
            class_names,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Per-class sample counts over the full class universe.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Gathers the given rows into a new dataset sharing the class universe.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset::new(
            features,
            labels,
            self.dim,
            self.class_names.clone(),
            self.provenance,
        )
    }
}

/// Gaussian-blob generator: class `c` samples are `mean_c + spread * N(0, I)`
/// with `mean_c` drawn once per class from `N(0, I)`. Smaller `cluster_spread`
/// means more separable classes.
pub fn generate_synthetic(
    num_classes: usize,
    feature_dim: usize,
    samples_per_class: &[usize],
    cluster_spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if samples_per_class.len() != num_classes {
        return Err(Error::invalid(format!(
            "samples_per_class has {} entries for {num_classes} classes",
            samples_per_class.len()
        )));
    }
    if num_classes == 0 || feature_dim == 0 {
        return Err(Error::invalid("num_classes and feature_dim must be >= 1"));
    }
    if samples_per_class.contains(&0) {
        return Err(Error::invalid("samples_per_class entries must be >= 1"));
    }
    if !(cluster_spread.is_finite() && cluster_spread >= 0.0) {
        return Err(Error::invalid("cluster_spread must be finite and >= 0"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = samples_per_class.iter().sum();
    let mut features = Vec::with_capacity(total * feature_dim);
    let mut labels = Vec::with_capacity(total);
    for (class, &count) in samples_per_class.iter().enumerate() {
        let mean: Vec<f64> = (0..feature_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        for _ in 0..count {
            for m in &mean {
                let z: f64 = rng.sample(StandardNormal);
                features.push(m + cluster_spread * z);
            }
            labels.push(class);
        }
    }
    let class_names = (0..num_classes).map(|c| format!("class_{c:02}")).collect();
    LabeledDataset::new(features, labels, feature_dim, class_names, Provenance::Synthetic)
}

/// Loads a comma-separated, header-first, UTF-8 CSV. Columns listed in
/// `drop_columns` are ignored; every remaining non-label column must parse
/// as a number. Labels map to indices by position in `class_names` when
/// given, otherwise by lexicographic order of the distinct values.
pub fn load_csv(
    path: &Path,
    label_column: &str,
    drop_columns: &[String],
    class_names: Option<&[String]>,
) -> Result<LabeledDataset> {
    let display = path.display().to_string();
    let csv_err = |message: String| Error::Csv {
        path: display.clone(),
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();

    let drop: HashSet<&str> = drop_columns.iter().map(String::as_str).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| csv_err(format!("missing label column '{label_column}'")))?;
    let kept: Vec<usize> = (0..headers.len())
        .filter(|&i| i != label_idx && !drop.contains(headers[i].as_str()))
        .collect();
    if kept.is_empty() {
        return Err(csv_err("no feature columns left after dropping".into()));
    }

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row_no = row_idx + 1; // 1-based data row, as users count them
        let record = record.map_err(|e| csv_err(format!("row {row_no}: {e}")))?;
        for &col in &kept {
            let cell = record
                .get(col)
                .ok_or_else(|| csv_err(format!("row {row_no}: short record")))?;
            let value: f64 = cell.trim().parse().map_err(|_| {
                csv_err(format!(
                    "non-numeric value '{cell}' in column '{}' at row {row_no}",
                    headers[col]
                ))
            })?;
            features.push(value);
        }
        raw_labels.push(
            record
                .get(label_idx)
                .ok_or_else(|| csv_err(format!("row {row_no}: short record")))?
                .trim()
                .to_string(),
        );
    }
    if raw_labels.is_empty() {
        return Err(csv_err("no data rows".into()));
    }

    let names: Vec<String> = match class_names {
        Some(names) => names.to_vec(),
        None => {
            let mut distinct: Vec<String> = raw_labels.clone();
            distinct.sort();
            distinct.dedup();
            distinct
        }
    };
    let labels = raw_labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            names
                .iter()
                .position(|n| n == l)
                .ok_or_else(|| csv_err(format!("unknown class '{l}' at row {}", i + 1)))
        })
        .collect::<Result<Vec<usize>>>()?;

    LabeledDataset::new(features, labels, kept.len(), names, Provenance::Csv)
}

/// How many majority-class rows survive the cap: the largest `k` with
/// `k / (k + n_other) <= cap`, i.e. `ceil(cap / (1 - cap) * n_other)`.
pub fn capped_majority_count(n_other: usize, cap_fraction: f64) -> usize {
    let x = cap_fraction / (1.0 - cap_fraction) * n_other as f64;
    // snap float noise so exact boundaries (e.g. 180.00000000000003) round down
    (x - 1e-9).ceil().max(0.0) as usize
}

/// Outcome of [`cap_majority_class`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapReport {
    pub class_found: bool,
    pub capped: bool,
    pub kept_majority: usize,
}

/// Down-samples the named class (seeded, without replacement) so it makes up
/// at most `cap_fraction` of the result. Other classes are untouched; a
/// missing class is a no-op with `class_found == false`.
pub fn cap_majority_class(
    ds: &LabeledDataset,
    class_label: &str,
    cap_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, CapReport)> {
    if !(cap_fraction > 0.0 && cap_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "cap_fraction must be in (0,1), got {cap_fraction}"
        )));
    }
    let Some(class) = ds.class_names().iter().position(|n| n == class_label) else {
        return Ok((
            ds.clone(),
            CapReport {
                class_found: false,
                capped: false,
                kept_majority: 0,
            },
        ));
    };
    let majority: Vec<usize> = ds.class_indices(class);
    let n_other = ds.len() - majority.len();
    let target = capped_majority_count(n_other, cap_fraction);
    if majority.len() <= target {
        return Ok((
            ds.clone(),
            CapReport {
                class_found: true,
                capped: false,
                kept_majority: majority.len(),
            },
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = majority;
    shuffled.shuffle(&mut rng);
    let mut kept: HashSet<usize> = shuffled[..target].iter().copied().collect();
    let indices: Vec<usize> = (0..ds.len())
        .filter(|i| ds.labels()[*i] != class || kept.remove(i))
        .collect();
    let out = ds.subset(&indices)?;
    Ok((
        out,
        CapReport {
            class_found: true,
            capped: true,
            kept_majority: target,
        },
    ))
}

/// Per-feature affine transform fit on training data only.
/// Zero-variance features use divisor 1, mapping them to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    /// Population mean/std per column.
    pub fn fit(train: &LabeledDataset) -> Self {
        let n = train.len() as f64;
        let dim = train.dim();
        let mut mean = vec![0.0; dim];
        for i in 0..train.len() {
            for (m, v) in mean.iter_mut().zip(train.row(i)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for i in 0..train.len() {
            for (j, v) in train.row(i).iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
        let std = var
            .iter()
            .map(|&v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, ds: &mut LabeledDataset) -> Result<()> {
        if ds.dim() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "standardizer fit on {} dims, dataset has {}",
                self.mean.len(),
                ds.dim()
            )));
        }
        let dim = ds.dim();
        for (i, v) in ds.features.iter_mut().enumerate() {
            let j = i % dim;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        Ok(())
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }
}

/// Fits on `train` and applies the same transform to `train` and `others`.
pub fn fit_apply_standardizer(
    train: &mut LabeledDataset,
    others: &mut [&mut LabeledDataset],
) -> Result<Standardizer> {
    let standardizer = Standardizer::fit(train);
    standardizer.apply(train)?;
    for ds in others.iter_mut() {
        standardizer.apply(ds)?;
    }
    Ok(standardizer)
}

/// Splits sized by largest-remainder allocation: each part differs from the
/// exact fractional size by at most one sample.
pub fn largest_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut base: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = base.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        base[i] += 1;
    }
    base
}

/// Train/validation/test datasets with their origin row indices.
#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub fractions: (f64, f64, f64),
}

/// Seeded three-way split. Stratified mode preserves per-class proportions
/// within one sample per class per split and rejects classes with fewer
/// than 3 samples.
pub fn split(
    ds: &LabeledDataset,
    fractions: (f64, f64, f64),
    stratified: bool,
    seed: u64,
) -> Result<SplitBundle> {
    let (ft, fv, fe) = fractions;
    if (ft + fv + fe - 1.0).abs() > 1e-9 || ft < 0.0 || fv < 0.0 || fe < 0.0 {
        return Err(Error::invalid(format!(
            "split fractions must be nonnegative and sum to 1, got {fractions:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let fracs = [ft, fv, fe];

    if stratified {
        for class in 0..ds.num_classes() {
            let mut idx = ds.class_indices(class);
            if idx.is_empty() {
                continue;
            }
            if idx.len() < 3 {
                return Err(Error::invalid(format!(
                    "class '{}' has only {} samples; stratified split needs >= 3",
                    ds.class_names()[class],
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            let counts = largest_remainder(idx.len(), &fracs);
            let mut cursor = 0;
            for (part, &count) in parts.iter_mut().zip(&counts) {
                part.extend_from_slice(&idx[cursor..cursor + count]);
                cursor += count;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        idx.shuffle(&mut rng);
        let counts = largest_remainder(idx.len(), &fracs);
        let mut cursor = 0;
        for (part, &count) in parts.iter_mut().zip(&counts) {
            part.extend_from_slice(&idx[cursor..cursor + count]);
            cursor += count;
        }
    }

    for (part, name) in parts.iter().zip(["train", "validation", "test"]) {
        if part.is_empty() {
            return Err(Error::invalid(format!(
                "split produced an empty {name} part; need more samples or larger fractions"
            )));
        }
    }
    let [mut train_indices, mut val_indices, mut test_indices] = parts;
    train_indices.sort_unstable();
    val_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(SplitBundle {
        train: ds.subset(&train_indices)?,
        validation: ds.subset(&val_indices)?,
        test: ds.subset(&test_indices)?,
        train_indices,
        val_indices,
        test_indices,
        fractions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionScheme {
    /// Draw a class count and target size per client, assign classes
    /// weighted by remaining class mass, fill from those pools.
    ClassInventory,
    /// Per-class proportions from a symmetric Dirichlet over clients.
    Dirichlet { alpha: f64 },
}

/// Knobs for the non-IID partitioner.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub num_clients: usize,
    pub min_classes: usize,
    pub max_classes: usize,
    pub min_samples: usize,
    pub max_samples: usize,
    pub scheme: PartitionScheme,
    pub seed: u64,
}

impl PartitionSpec {
    fn validate(&self, total_samples: usize, total_classes: usize) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::invalid("num_clients must be >= 1"));
        }
        if self.min_classes == 0
            || self.min_classes > self.max_classes
            || self.max_classes > total_classes
        {
            return Err(Error::invalid(format!(
                "need 1 <= min_classes ({}) <= max_classes ({}) <= total classes ({total_classes})",
                self.min_classes, self.max_classes
            )));
        }
        if self.min_samples == 0 || self.min_samples > self.max_samples {
            return Err(Error::invalid(format!(
                "need 1 <= min_samples ({}) <= max_samples ({})",
                self.min_samples, self.max_samples
            )));
        }
        if self.num_clients * self.min_samples > total_samples {
            return Err(Error::InfeasiblePartition(format!(
                "num_clients ({}) x min_samples ({}) = {} exceeds {total_samples} training samples",
                self.num_clients,
                self.min_samples,
                self.num_clients * self.min_samples
            )));
        }
        if self.num_clients * self.max_samples < total_samples {
            return Err(Error::InfeasiblePartition(format!(
                "num_clients ({}) x max_samples ({}) = {} cannot absorb {total_samples} training samples",
                self.num_clients,
                self.max_samples,
                self.num_clients * self.max_samples
            )));
        }
        Ok(())
    }
}

/// One client's local dataset.
#[derive(Debug, Clone)]
pub struct ClientShard {
    pub client_id: usize,
    pub data: LabeledDataset,
    /// Row indices into the training set this shard was cut from.
    pub origin_indices: Vec<usize>,
    /// Sorted list of classes present in the shard.
    pub class_inventory: Vec<usize>,
}

impl ClientShard {
    pub fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn from_indices(train: &LabeledDataset, client_id: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        let data = train.subset(&indices)?;
        let mut inventory: Vec<usize> = data.labels().to_vec();
        inventory.sort_unstable();
        inventory.dedup();
        Ok(Self {
            client_id,
            data,
            origin_indices: indices,
            class_inventory: inventory,
        })
    }
}

/// Partitions the training set across clients so that every sample lands in
/// exactly one shard. See [`PartitionScheme`] for the two schemes.
pub fn partition_noniid(train: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    spec.validate(train.len(), train.num_classes())?;
    let assignments = match spec.scheme {
        PartitionScheme::ClassInventory => class_inventory_assign(train, spec),
        PartitionScheme::Dirichlet { alpha } => dirichlet_assign(train, spec, alpha)?,
    };
    assignments
        .into_iter()
        .enumerate()
        .map(|(id, idx)| ClientShard::from_indices(train, id, idx))
        .collect()
}

fn shuffled_class_pools(train: &LabeledDataset, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    (0..train.num_classes())
        .map(|c| {
            let mut pool = train.class_indices(c);
            pool.shuffle(rng);
            pool
        })
        .collect()
}

/// Target shard sizes: uniform draws in `[min, max]` rescaled so they sum to
/// exactly `total`, clamped back into `[min, max]`, residue spread one by one.
fn draw_sizes(
    n_clients: usize,
    min: usize,
    max: usize,
    total: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let raw: Vec<f64> = (0..n_clients)
        .map(|_| rng.random_range(min..=max) as f64)
        .collect();
    let sum: f64 = raw.iter().sum();
    let mut sizes: Vec<usize> = raw
        .iter()
        .map(|&u| ((u * total as f64 / sum).round() as usize).clamp(min, max))
        .collect();
    let mut assigned: isize = sizes.iter().sum::<usize>() as isize;
    let want = total as isize;
    let mut i = 0;
    while assigned != want {
        let id = i % n_clients;
        if assigned < want && sizes[id] < max {
            sizes[id] += 1;
            assigned += 1;
        } else if assigned > want && sizes[id] > min {
            sizes[id] -= 1;
            assigned -= 1;
        }
        i += 1;
    }
    sizes
}

/// Weighted sampling of `k` distinct classes, weight = remaining pool size.
fn pick_classes(remaining: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; remaining.len()];
    for _ in 0..k {
        let total: usize = remaining
            .iter()
            .enumerate()
            .filter(|&(c, _)| !taken[c])
            .map(|(_, &r)| r)
            .sum();
        if total == 0 {
            break;
        }
        let mut x = rng.random_range(0..total);
        for (c, &r) in remaining.iter().enumerate() {
            if taken[c] || r == 0 {
                continue;
            }
            if x < r {
                chosen.push(c);
                taken[c] = true;
                break;
            }
            x -= r;
        }
    }
    chosen
}

fn class_inventory_assign(train: &LabeledDataset, spec: &PartitionSpec) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_clients = spec.num_clients;
    let pools = shuffled_class_pools(train, &mut rng);
    let mut remaining: Vec<usize> = pools.iter().map(Vec::len).collect();

    let sizes = draw_sizes(
        n_clients,
        spec.min_samples,
        spec.max_samples,
        train.len(),
        &mut rng,
    );
    let class_targets: Vec<usize> = (0..n_clients)
        .map(|_| rng.random_range(spec.min_classes..=spec.max_classes))
        .collect();

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for i in 0..n_clients {
        let classes = pick_classes(&remaining, class_targets[i], &mut rng);
        if classes.is_empty() {
            continue; // pools drained; the leftover pass cannot help here
        }
        // Split the size target across the chosen classes in proportion to
        // what is left of each, then drain greedily if some pool runs dry.
        let weights: Vec<f64> = {
            let total: usize = classes.iter().map(|&c| remaining[c]).sum();
            classes.iter().map(|&c| remaining[c] as f64 / total as f64).collect()
        };
        let mut wanted = largest_remainder(sizes[i], &weights);
        for (slot, &c) in wanted.iter_mut().zip(&classes) {
            let take = (*slot).min(remaining[c]);
            let start = remaining[c] - take;
            shards[i].extend_from_slice(&pools[c][start..remaining[c]]);
            remaining[c] = start;
            *slot -= take;
        }
        let mut shortfall: usize = wanted.iter().sum();
        for &c in &classes {
            if shortfall == 0 {
                break;
            }
            let take = shortfall.min(remaining[c]);
            let start = remaining[c] - take;
            shards[i].extend_from_slice(&pools[c][start..remaining[c]]);
            remaining[c] = start;
            shortfall -= take;
        }
    }

    // Leftover pass: anything still pooled goes to the smallest shard that
    // has room, preferring shards that already hold the sample's class.
    let mut leftovers: Vec<(usize, usize)> = Vec::new();
    for (c, pool) in pools.iter().enumerate() {
        for &idx in &pool[..remaining[c]] {
            leftovers.push((c, idx));
        }
    }
    if !leftovers.is_empty() {
        let mut inventories: Vec<HashSet<usize>> = shards
            .iter()
            .map(|s| s.iter().map(|&i| train.labels()[i]).collect())
            .collect();
        for (class, idx) in leftovers {
            let open = |sid: &usize| shards[*sid].len() < spec.max_samples;
            let candidates: Vec<usize> = (0..n_clients).filter(|s| open(s)).collect();
            let pool = if candidates.is_empty() {
                (0..n_clients).collect::<Vec<_>>()
            } else {
                candidates
            };
            let holder = pool
                .iter()
                .copied()
                .filter(|&s| inventories[s].contains(&class))
                .min_by_key(|&s| (shards[s].len(), s));
            let target = holder.unwrap_or_else(|| {
                pool.into_iter().min_by_key(|&s| (shards[s].len(), s)).unwrap()
            });
            shards[target].push(idx);
            inventories[target].insert(class);
        }
    }
    shards
}

fn dirichlet_assign(
    train: &LabeledDataset,
    spec: &PartitionSpec,
    alpha: f64,
) -> Result<Vec<Vec<usize>>> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!(
            "dirichlet alpha must be positive, got {alpha}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pools = shuffled_class_pools(train, &mut rng);
    let gamma = Gamma::new(alpha, 1.0).expect("validated alpha");
    let n_clients = spec.num_clients;

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for pool in &pools {
        if pool.is_empty() {
            continue;
        }
        let draws: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng).max(1e-300)).collect();
        let total: f64 = draws.iter().sum();
        let props: Vec<f64> = draws.iter().map(|d| d / total).collect();
        let counts = largest_remainder(pool.len(), &props);
        let mut cursor = 0;
        for (shard, count) in shards.iter_mut().zip(counts) {
            shard.extend_from_slice(&pool[cursor..cursor + count]);
            cursor += count;
        }
    }

    // Dirichlet draws can starve a client entirely; move singles from the
    // largest shards so every client holds at least one sample.
    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let donor = (0..n_clients).max_by_key(|&s| shards[s].len()).unwrap();
        let moved = shards[donor].pop().expect("donor shard cannot be empty");
        shards[empty].push(moved);
    }
    Ok(shards)
}

/// Validation-set mode: `Stratified` keeps the split as is, `Uniform` keeps
/// an equal seeded sample of each class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMode {
    Stratified,
    Uniform,
}

pub fn build_validation_set(
    val: &LabeledDataset,
    mode: ValidationMode,
    per_class: Option<usize>,
    seed: u64,
) -> Result<LabeledDataset> {
    match mode {
        ValidationMode::Stratified => Ok(val.clone()),
        ValidationMode::Uniform => {
            let per_class = per_class
                .ok_or_else(|| Error::invalid("uniform validation mode requires per_class"))?;
            if per_class == 0 {
                return Err(Error::invalid("per_class must be >= 1"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keep = Vec::with_capacity(per_class * val.num_classes());
            for class in 0..val.num_classes() {
                let mut idx = val.class_indices(class);
                if idx.len() < per_class {
                    return Err(Error::invalid(format!(
                        "class '{}' has {} validation samples, fewer than per_class {per_class}",
                        val.class_names()[class],
                        idx.len()
                    )));
                }
                idx.shuffle(&mut rng);
                keep.extend_from_slice(&idx[..per_class]);
            }
            keep.sort_unstable();
            val.subset(&keep)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn blob(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> LabeledDataset {
        generate_synthetic(classes, dim, &vec![per_class; classes], spread, seed).unwrap()
    }

    #[test]
    fn synthetic_shapes_and_balance() {
        let ds = blob(15, 200, 43, 1.0, 1);
        assert_eq!(ds.len(), 3_000);
        assert_eq!(ds.dim(), 43);
        assert!(ds.class_counts().iter().all(|&c| c == 200));
        assert_eq!(ds.provenance(), Provenance::Synthetic);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = blob(4, 10, 5, 0.7, 9);
        let b = blob(4, 10, 5, 0.7, 9);
        assert_eq!(a, b);
        let c = blob(4, 10, 5, 0.7, 10);
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_rejects_bad_inputs() {
        assert!(generate_synthetic(3, 4, &[1, 2], 1.0, 0).is_err());
        assert!(generate_synthetic(2, 4, &[1, 0], 1.0, 0).is_err());
        assert!(generate_synthetic(2, 4, &[1, 1], -1.0, 0).is_err());
    }

    #[test]
    fn zero_spread_is_nearest_centroid_separable() {
        let ds = blob(5, 20, 8, 0.0, 3);
        // centroid of each class = its first row; every sample must sit on it
        let mut centroids: Vec<Vec<f64>> = vec![Vec::new(); 5];
        for i in 0..ds.len() {
            let c = ds.labels()[i];
            if centroids[c].is_empty() {
                centroids[c] = ds.row(i).to_vec();
            }
        }
        let correct = (0..ds.len())
            .filter(|&i| {
                let nearest = centroids
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        let da: f64 = a.iter().zip(ds.row(i)).map(|(x, y)| (x - y).powi(2)).sum();
                        let db: f64 = b.iter().zip(ds.row(i)).map(|(x, y)| (x - y).powi(2)).sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap()
                    .0;
                nearest == ds.labels()[i]
            })
            .count();
        assert_eq!(correct, ds.len());
    }

    #[test]
    fn csv_round_trip_with_drops_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "a,b,proto,c,label").unwrap();
        writeln!(f, "1,2,tcp,3,attack").unwrap();
        writeln!(f, "4,5,udp,6,normal").unwrap();
        writeln!(f, "7,8,tcp,9,attack").unwrap();
        writeln!(f, "1,1,udp,1,normal").unwrap();
        writeln!(f, "2,2,tcp,2,attack").unwrap();
        drop(f);

        let ds = load_csv(&path, "label", &["proto".to_string()], None).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.dim(), 3);
        // lexicographic factorization: attack=0, normal=1
        assert_eq!(ds.class_names(), ["attack", "normal"]);
        assert_eq!(ds.labels(), &[0, 1, 0, 1, 0]);
        assert_eq!(ds.row(1), &[4.0, 5.0, 6.0]);

        // keeping the string column must fail, naming column and row
        let err = load_csv(&path, "label", &[], None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("proto") && msg.contains("row 1"), "{msg}");

        let err = load_csv(&path, "nope", &[], None).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn csv_error_cites_the_offending_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "x,y,label").unwrap();
        writeln!(f, "1,2,a").unwrap();
        writeln!(f, "3,4,b").unwrap();
        writeln!(f, "5,6,a").unwrap();
        writeln!(f, "7,oops,b").unwrap();
        writeln!(f, "9,10,a").unwrap();
        drop(f);
        let err = load_csv(&path, "label", &[], None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 4") && msg.contains("'y'"), "{msg}");
    }

    #[test]
    fn csv_respects_provided_class_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("order.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "x,label").unwrap();
        writeln!(f, "1,b").unwrap();
        writeln!(f, "2,a").unwrap();
        drop(f);
        let names = vec!["b".to_string(), "a".to_string()];
        let ds = load_csv(&path, "label", &[], Some(&names)).unwrap();
        assert_eq!(ds.labels(), &[0, 1]);
    }

    #[test]
    fn cap_formula_matches_reference_counts() {
        // production-scale counts: majority 1,615,643 / other 603,558
        let kept = capped_majority_count(603_558, 0.18);
        assert!((kept as i64 - 132_488).abs() <= 1, "kept {kept}");
        let total = kept + 603_558;
        assert!((total as i64 - 736_046).abs() <= 1);
        // exact boundary: 18% of 1,000
        assert_eq!(capped_majority_count(820, 0.18), 180);
    }

    #[test]
    fn cap_downsamples_only_the_majority() {
        let ds = generate_synthetic(3, 4, &[600, 100, 100], 1.0, 5).unwrap();
        let (capped, report) = cap_majority_class(&ds, "class_00", 0.18, 7).unwrap();
        assert!(report.class_found && report.capped);
        assert_eq!(report.kept_majority, capped_majority_count(200, 0.18));
        let counts = capped.class_counts();
        assert_eq!(counts[1], 100);
        assert_eq!(counts[2], 100);
        assert_eq!(counts[0], report.kept_majority);
        // invariant: majority fraction <= cap + 1/total
        let frac = counts[0] as f64 / capped.len() as f64;
        assert!(frac <= 0.18 + 1.0 / capped.len() as f64);
        // deterministic
        let (again, _) = cap_majority_class(&ds, "class_00", 0.18, 7).unwrap();
        assert_eq!(capped, again);
    }

    #[test]
    fn cap_is_noop_when_already_below() {
        let ds = generate_synthetic(3, 4, &[50, 400, 400], 1.0, 5).unwrap();
        let (capped, report) = cap_majority_class(&ds, "class_00", 0.18, 7).unwrap();
        assert!(report.class_found && !report.capped);
        assert_eq!(capped, ds);
    }

    #[test]
    fn cap_missing_class_is_flagged_noop() {
        let ds = blob(2, 10, 3, 1.0, 1);
        let (out, report) = cap_majority_class(&ds, "Normal", 0.18, 0).unwrap();
        assert!(!report.class_found);
        assert_eq!(out, ds);
    }

    #[test]
    fn standardizer_hand_example() {
        let ds = LabeledDataset::new(
            vec![1.0, 2.0, 3.0],
            vec![0, 0, 0],
            1,
            vec!["only".into()],
            Provenance::Synthetic,
        )
        .unwrap();
        let mut train = ds.clone();
        let s = fit_apply_standardizer(&mut train, &mut []).unwrap();
        let expected = 1.224744871391589; // population std of [1,2,3] is sqrt(2/3)
        assert!((train.features()[0] + expected).abs() < 1e-12);
        assert!(train.features()[1].abs() < 1e-12);
        assert!((train.features()[2] - expected).abs() < 1e-12);
        assert!((s.std()[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn standardizer_train_columns_become_standard() {
        let mut train = blob(3, 50, 7, 2.0, 8);
        let mut val = blob(3, 20, 7, 2.0, 9);
        fit_apply_standardizer(&mut train, &mut [&mut val]).unwrap();
        let n = train.len() as f64;
        for j in 0..train.dim() {
            let mean: f64 = (0..train.len()).map(|i| train.row(i)[j]).sum::<f64>() / n;
            let var: f64 = (0..train.len()).map(|i| (train.row(i)[j] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "col {j} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-9, "col {j} std {}", var.sqrt());
        }
    }

    #[test]
    fn standardizer_constant_column_maps_to_zero() {
        let mut ds = LabeledDataset::new(
            vec![5.0, 5.0, 5.0],
            vec![0, 0, 0],
            1,
            vec!["only".into()],
            Provenance::Synthetic,
        )
        .unwrap();
        fit_apply_standardizer(&mut ds, &mut []).unwrap();
        assert!(ds.features().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardizer_uses_train_statistics_not_its_own() {
        // leakage sentinel: a mean-shifted copy of train keeps a nonzero mean
        let mut train = blob(2, 100, 3, 1.0, 11);
        let mut shifted = train.clone();
        for v in shifted.features.iter_mut() {
            *v += 10.0;
        }
        fit_apply_standardizer(&mut train, &mut [&mut shifted]).unwrap();
        let mean0: f64 =
            (0..shifted.len()).map(|i| shifted.row(i)[0]).sum::<f64>() / shifted.len() as f64;
        assert!(mean0 > 1.0, "shifted copy should keep its offset, got {mean0}");
    }

    #[test]
    fn largest_remainder_matches_reference_split_sizes() {
        assert_eq!(
            largest_remainder(736_046, &[0.70, 0.15, 0.15]),
            vec![515_232, 110_407, 110_407]
        );
        assert_eq!(largest_remainder(10, &[0.7, 0.15, 0.15]), vec![7, 2, 1]);
    }

    #[test]
    fn split_is_a_partition() {
        let ds = blob(4, 30, 5, 1.0, 13);
        let bundle = split(&ds, (0.70, 0.15, 0.15), true, 17).unwrap();
        let mut all: Vec<usize> = bundle
            .train_indices
            .iter()
            .chain(&bundle.val_indices)
            .chain(&bundle.test_indices)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        // stratified: per-class proportions within one sample per split
        for class in 0..4 {
            let count = |d: &LabeledDataset| d.class_counts()[class] as i64;
            assert!((count(&bundle.train) - 21).abs() <= 1);
            assert!((count(&bundle.validation) - 4).abs() <= 1);
            assert!((count(&bundle.test) - 4).abs() <= 1);
        }
    }

    #[test]
    fn split_rejects_tiny_classes_in_stratified_mode() {
        let ds = generate_synthetic(2, 3, &[20, 2], 1.0, 2).unwrap();
        let err = split(&ds, (0.7, 0.15, 0.15), true, 3).unwrap_err();
        assert!(err.to_string().contains("class_01"));
        assert!(split(&ds, (0.7, 0.15, 0.15), false, 3).is_ok());
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let ds = blob(2, 10, 3, 1.0, 1);
        assert!(split(&ds, (0.5, 0.1, 0.1), true, 0).is_err());
    }

    #[test]
    fn partition_single_client_gets_everything() {
        let ds = blob(3, 20, 4, 1.0, 21);
        let spec = PartitionSpec {
            num_clients: 1,
            min_classes: 1,
            max_classes: 3,
            min_samples: 1,
            max_samples: ds.len(),
            scheme: PartitionScheme::ClassInventory,
            seed: 5,
        };
        let shards = partition_noniid(&ds, &spec).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].num_samples(), ds.len());
    }

    #[test]
    fn partition_infeasible_specs_name_the_constraint() {
        let ds = blob(3, 10, 4, 1.0, 21);
        let spec = PartitionSpec {
            num_clients: 10,
            min_classes: 1,
            max_classes: 3,
            min_samples: 5,
            max_samples: 30,
            scheme: PartitionScheme::ClassInventory,
            seed: 5,
        };
        let err = partition_noniid(&ds, &spec).unwrap_err();
        assert!(err.to_string().contains("min_samples"));
        let spec2 = PartitionSpec {
            min_samples: 1,
            max_samples: 2,
            ..spec
        };
        let err2 = partition_noniid(&ds, &spec2).unwrap_err();
        assert!(err2.to_string().contains("max_samples"));
    }

    fn assert_exact_partition(ds: &LabeledDataset, shards: &[ClientShard]) {
        let mut seen: Vec<usize> = shards
            .iter()
            .flat_map(|s| s.origin_indices.iter().copied())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..ds.len()).collect::<Vec<_>>());
        let total: usize = shards.iter().map(ClientShard::num_samples).sum();
        assert_eq!(total, ds.len());
        assert!(shards.iter().all(|s| s.num_samples() >= 1));
    }

    #[test]
    fn class_inventory_partition_respects_clamps() {
        let ds = blob(15, 300, 6, 1.0, 31);
        let spec = PartitionSpec {
            num_clients: 20,
            min_classes: 1,
            max_classes: 8,
            min_samples: 50,
            max_samples: 500,
            scheme: PartitionScheme::ClassInventory,
            seed: 77,
        };
        let shards = partition_noniid(&ds, &spec).unwrap();
        assert_exact_partition(&ds, &shards);
        for s in &shards {
            assert!(s.num_samples() <= 500, "client {} has {}", s.client_id, s.num_samples());
            assert!(!s.class_inventory.is_empty());
        }
        // deterministic per seed
        let again = partition_noniid(&ds, &spec).unwrap();
        for (a, b) in shards.iter().zip(&again) {
            assert_eq!(a.origin_indices, b.origin_indices);
        }
    }

    #[test]
    fn dirichlet_partition_is_exact_and_skewed() {
        let ds = blob(5, 200, 4, 1.0, 41);
        let spec = PartitionSpec {
            num_clients: 8,
            min_classes: 1,
            max_classes: 5,
            min_samples: 1,
            max_samples: ds.len(),
            scheme: PartitionScheme::Dirichlet { alpha: 0.3 },
            seed: 19,
        };
        let shards = partition_noniid(&ds, &spec).unwrap();
        assert_exact_partition(&ds, &shards);
        // low alpha should concentrate classes: some client misses a class
        assert!(shards.iter().any(|s| s.class_inventory.len() < 5));
    }

    #[test]
    fn uniform_validation_set_has_equal_counts() {
        let ds = blob(5, 40, 4, 1.0, 51);
        let out = build_validation_set(&ds, ValidationMode::Uniform, Some(15), 3).unwrap();
        assert_eq!(out.len(), 75);
        assert!(out.class_counts().iter().all(|&c| c == 15));
        // deterministic
        let again = build_validation_set(&ds, ValidationMode::Uniform, Some(15), 3).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn uniform_validation_full_support_is_identity_permutation() {
        let ds = blob(3, 12, 4, 1.0, 52);
        let out = build_validation_set(&ds, ValidationMode::Uniform, Some(12), 9).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn stratified_validation_is_identity() {
        let ds = blob(3, 12, 4, 1.0, 53);
        let out = build_validation_set(&ds, ValidationMode::Stratified, None, 0).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn uniform_validation_errors_name_the_rarest_class() {
        let ds = generate_synthetic(3, 4, &[30, 5, 30], 1.0, 3).unwrap();
        let err = build_validation_set(&ds, ValidationMode::Uniform, Some(10), 0).unwrap_err();
        assert!(err.to_string().contains("class_01"), "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_partition_totality(
            seed in 0u64..1000,
            n_clients in 1usize..12,
            per_class in 5usize..40,
            classes in 2usize..6,
        ) {
            let ds = blob(classes, per_class, 3, 1.0, seed);
            let spec = PartitionSpec {
                num_clients: n_clients,
                min_classes: 1,
                max_classes: classes,
                min_samples: 1,
                max_samples: ds.len(),
                scheme: PartitionScheme::ClassInventory,
                seed,
            };
            let shards = partition_noniid(&ds, &spec).unwrap();
            assert_exact_partition(&ds, &shards);
        }

        #[test]
        fn prop_split_partitions_and_is_seeded(seed in 0u64..1000, per_class in 10usize..40) {
            let ds = blob(3, per_class, 3, 1.0, seed);
            let a = split(&ds, (0.7, 0.15, 0.15), true, seed).unwrap();
            let b = split(&ds, (0.7, 0.15, 0.15), true, seed).unwrap();
            prop_assert_eq!(&a.train_indices, &b.train_indices);
            let mut all: Vec<usize> = a.train_indices.iter()
                .chain(&a.val_indices).chain(&a.test_indices).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        }

        #[test]
        fn prop_largest_remainder_sums_and_bounds(total in 1usize..100_000) {
            let fracs = [0.7, 0.15, 0.15];
            let counts = largest_remainder(total, &fracs);
            prop_assert_eq!(counts.iter().sum::<usize>(), total);
            for (c, f) in counts.iter().zip(fracs) {
                prop_assert!((*c as f64 - f * total as f64).abs() <= 1.0);
            }
        }
    }
}

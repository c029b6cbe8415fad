//! Datasets, client partitions and per-client minibatch streams.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::rng::{self, Purpose};
use crate::{Error, Result, Tensor};

/// Resample budget for Dirichlet partitions that leave a client too small.
pub const DIRICHLET_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.shape().len() < 2 {
            return Err(Error::Dataset(format!("features need a sample dimension, got {:?}", features.shape())));
        }
        if features.rows() != labels.len() {
            return Err(Error::Dataset(format!("{} feature rows but {} labels", features.rows(), labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, classes: num_classes });
        }
        Ok(Self { features, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_shape(&self) -> &[usize] {
        self.features.sample_shape()
    }

    /// Copies the selected samples into a `[indices.len(), …]` batch.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let width = self.features.row_len();
        let mut data = Vec::with_capacity(indices.len() * width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.feature_shape());
        (Tensor::from_parts(shape, data), labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Dataset("empty subset".into()));
        }
        let (features, labels) = self.gather(indices);
        Dataset::new(features, labels, self.num_classes)
    }

    pub fn class_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub class_sep: f64,
}

/// Unit-norm class directions. They depend only on `(classes, dim)`, so a
/// training set and a test set drawn with different seeds share centers.
pub fn class_directions(num_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|c| {
            let mut rng = rng::stream(dim as u64, Purpose::Centers, &[c as u64]);
            loop {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
                if norm > 1e-12 {
                    break v.into_iter().map(|x| x / norm).collect();
                }
            }
        })
        .collect()
}

/// Gaussian blobs with unit covariance; class `c` is centered at
/// `class_sep · u_c`. Samples are stored class by class.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    if spec.num_classes < 2 || spec.per_class == 0 || spec.dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic data needs ≥2 classes, ≥1 sample per class and dim ≥1, got {spec:?}"
        )));
    }
    let directions = class_directions(spec.num_classes, spec.dim);
    let n = spec.num_classes * spec.per_class;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    let mut rng = rng::stream(seed, Purpose::Synthetic, &[]);
    for (c, u) in directions.iter().enumerate() {
        for _ in 0..spec.per_class {
            for &ui in u {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(spec.class_sep * ui + noise);
            }
            labels.push(c);
        }
    }
    Dataset::new(Tensor::new(vec![n, spec.dim], data)?, labels, spec.num_classes)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, file: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::IdxTruncated { file, expected: at + 4, found: bytes.len() })
}

/// Decodes an unsigned-byte IDX image file and label file. Pixels are scaled
/// to `[0, 1]`; images come out as `[N, 1, rows, cols]`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxMagic { file: "images", found: magic });
    }
    let magic = be_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxMagic { file: "labels", found: magic });
    }
    let n = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let n_labels = be_u32(labels, 4, "labels")? as usize;
    if n != n_labels {
        return Err(Error::IdxCountMismatch { images: n, labels: n_labels });
    }
    let pixels = n * rows * cols;
    let expected = 16 + pixels;
    if images.len() < expected {
        return Err(Error::IdxTruncated { file: "images", expected, found: images.len() });
    }
    if labels.len() < 8 + n {
        return Err(Error::IdxTruncated { file: "labels", expected: 8 + n, found: labels.len() });
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Dataset("IDX file holds no pixels".into()));
    }
    let data = images[16..expected].iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = labels[8..8 + n].iter().map(|&l| usize::from(l)).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(Tensor::new(vec![n, 1, rows, cols], data)?, labels, classes.max(2))
}

/// Assignment of sample indices to clients, with `D_k` and `α_k = D_k / ΣD`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    assignments: Vec<Vec<usize>>,
    sizes: Vec<usize>,
    weights: Vec<f64>,
}

impl Partition {
    /// Validates that `assignments` are disjoint, cover `0..total` and leave
    /// no client empty. Each client's indices are sorted.
    pub fn from_assignments(mut assignments: Vec<Vec<usize>>, total: usize) -> Result<Self> {
        let mut seen = vec![false; total];
        for (k, a) in assignments.iter_mut().enumerate() {
            if a.is_empty() {
                return Err(Error::InvalidArgument(format!("client {k} has no samples")));
            }
            a.sort_unstable();
            for &i in a.iter() {
                if i >= total || seen[i] {
                    return Err(Error::InvalidArgument(format!("sample {i} missing or assigned twice")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("partition does not cover every sample".into()));
        }
        let sizes: Vec<usize> = assignments.iter().map(Vec::len).collect();
        let weights = sizes.iter().map(|&d| d as f64 / total as f64).collect();
        Ok(Self { assignments, sizes, weights })
    }

    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn client(&self, k: usize) -> &[usize] {
        &self.assignments[k]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }
}

/// Random permutation cut into `k` chunks whose sizes differ by at most one.
pub fn partition_iid(ds: &Dataset, k: usize, seed: u64) -> Result<Partition> {
    let n = ds.len();
    if k == 0 || n < k {
        return Err(Error::TooFewSamples { samples: n, clients: k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Purpose::PartitionIid, &[]));
    let (base, extra) = (n / k, n % k);
    let mut assignments = Vec::with_capacity(k);
    let mut start = 0;
    for c in 0..k {
        let len = base + usize::from(c < extra);
        assignments.push(order[start..start + len].to_vec());
        start += len;
    }
    Partition::from_assignments(assignments, n)
}

/// Label-based Dirichlet partition. For each class a proportion vector
/// `p ~ Dir(mu·1_K)` is drawn and the class's shuffled samples are cut into
/// consecutive runs of sizes `⌊cumsum(p)·N_c⌋`. The whole draw is repeated
/// (up to [`DIRICHLET_RETRIES`] times) until every client holds at least
/// `min_samples` samples.
pub fn partition_dirichlet(ds: &Dataset, k: usize, mu: f64, seed: u64, min_samples: usize) -> Result<Partition> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!("Dirichlet concentration must be positive, got {mu}")));
    }
    let n = ds.len();
    if k == 0 || n < k.saturating_mul(min_samples.max(1)) {
        return Err(Error::TooFewSamples { samples: n, clients: k });
    }
    let gamma = Gamma::new(mu, 1.0).map_err(|e| Error::InvalidArgument(format!("{e}")))?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    for attempt in 0..DIRICHLET_RETRIES {
        let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (c, members) in by_class.iter().enumerate() {
            let mut rng = rng::stream(seed, Purpose::PartitionDirichlet, &[attempt as u64, c as u64]);
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let props = dirichlet(&gamma, k, &mut rng);
            let total = members.len();
            let mut cum = 0.0;
            let mut start = 0;
            for (client, p) in props.iter().enumerate() {
                cum += p;
                let end = if client + 1 == k { total } else { ((cum * total as f64) as usize).min(total) };
                let end = end.max(start);
                assignments[client].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if assignments.iter().all(|a| a.len() >= min_samples.max(1)) {
            return Partition::from_assignments(assignments, n);
        }
    }
    Err(Error::PartitionInfeasible { min_samples, attempts: DIRICHLET_RETRIES })
}

fn dirichlet(gamma: &Gamma<f64>, k: usize, rng: &mut rng::Stream) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.into_iter().map(|g| g / sum).collect()
    } else {
        // Every draw underflowed; put the class on the largest one.
        let top = draws
            .iter()
            .enumerate()
            .fold(0, |best, (i, &g)| if g > draws[best] { i } else { best });
        (0..k).map(|i| if i == top { 1.0 } else { 0.0 }).collect()
    }
}

pub fn batches_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size)
}

/// One epoch of client `client`'s samples: a fresh shuffle chunked into
/// `⌈D_k/B⌉` batches, the last possibly short. Deterministic in
/// `(seed, client, round, epoch)`.
pub fn minibatch_stream(
    partition: &Partition,
    client: usize,
    batch_size: usize,
    seed: u64,
    round: usize,
    epoch: usize,
) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order = partition.client(client).to_vec();
    order.shuffle(&mut rng::stream(seed, Purpose::Batches, &[client as u64, round as u64, epoch as u64]));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(classes: usize, per_class: usize) -> Dataset {
        gen_synthetic(&SyntheticSpec { num_classes: classes, dim: 3, per_class, class_sep: 2.0 }, 1).unwrap()
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        let ds = blobs(2, 10);
        assert_eq!(ds.len(), 20);
        assert_eq!(ds.class_counts(&(0..20).collect::<Vec<_>>()), vec![10, 10]);
        assert_eq!(ds, blobs(2, 10));
    }

    #[test]
    fn zero_separation_centers_at_origin() {
        let a = gen_synthetic(&SyntheticSpec { num_classes: 3, dim: 2, per_class: 5, class_sep: 0.0 }, 4).unwrap();
        let mut rng = rng::stream(4, Purpose::Synthetic, &[]);
        let expected: Vec<f64> = (0..30).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert_eq!(a.features().data(), expected.as_slice());
    }

    #[test]
    fn iid_sizes() {
        let p = partition_iid(&blobs(2, 50), 100, 3).unwrap();
        assert!(p.sizes().iter().all(|&d| d == 1));
        assert!(p.weights().iter().all(|&w| (w - 0.01).abs() < 1e-15));

        let p = partition_iid(&blobs(2, 5), 3, 3).unwrap();
        let mut sizes = p.sizes().to_vec();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        assert!(matches!(partition_iid(&blobs(2, 1), 3, 0), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn dirichlet_retry_budget() {
        let ds = blobs(2, 10);
        let err = partition_dirichlet(&ds, 4, 0.01, 1, 5).unwrap_err();
        assert_eq!(err, Error::PartitionInfeasible { min_samples: 5, attempts: DIRICHLET_RETRIES });
        assert!(partition_dirichlet(&ds, 4, 0.0, 1, 1).is_err());
    }

    #[test]
    fn batch_stream_shapes() {
        let ds = blobs(2, 50);
        let p = Partition::from_assignments(vec![(0..64).collect(), (64..100).collect()], 100).unwrap();
        assert_eq!(minibatch_stream(&p, 0, 64, 1, 0, 0).len(), 1);
        let p = Partition::from_assignments(vec![(0..100).collect()], 100).unwrap();
        let b = minibatch_stream(&p, 0, 64, 1, 0, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![64, 36]);
        assert_eq!(b, minibatch_stream(&p, 0, 64, 1, 0, 0));
        assert_ne!(b, minibatch_stream(&p, 0, 64, 1, 0, 1));
        let (x, y) = ds.gather(&b[1]);
        assert_eq!(x.shape(), &[36, 3]);
        assert_eq!(y.len(), 36);
    }

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for w in [IDX_IMAGES_MAGIC, n, rows, cols] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn idx_scaling() {
        let ds = parse_idx(&idx_images(2, 2, 2, &[0, 255, 255, 0, 0, 0, 255, 255]), &idx_labels(&[1, 0])).unwrap();
        assert_eq!(ds.features().shape(), &[2, 1, 2, 2]);
        assert_eq!(ds.features().data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(ds.labels(), &[1, 0]);
    }

    #[test]
    fn idx_errors() {
        let labels = idx_labels(&[1, 0]);
        let truncated = idx_images(2, 2, 2, &[0, 255, 255]);
        assert!(matches!(parse_idx(&truncated, &labels), Err(Error::IdxTruncated { file: "images", .. })));
        let three = idx_images(3, 2, 2, &[0; 12]);
        assert_eq!(parse_idx(&three, &labels).unwrap_err(), Error::IdxCountMismatch { images: 3, labels: 2 });
        let mut bad = idx_images(2, 2, 2, &[0; 8]);
        bad[3] = 0x02;
        assert!(matches!(parse_idx(&bad, &labels), Err(Error::IdxMagic { file: "images", .. })));
    }
}

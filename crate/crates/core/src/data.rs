//! Dataset ingestion (IDX files), federated synthetic generation, and
//! client partitioning. All constructions are pure functions of their inputs
//! and the supplied random stream.

use crate::error::{Error, Result};
use crate::models::{Batch, Labels};
use crate::numkit::RngStream;

/// One client's local data.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub train: Batch,
    pub test: Batch,
}

/// Data for the whole federation: disjoint client partitions plus a shared
/// evaluation set.
#[derive(Debug, Clone)]
pub struct FederatedDataset {
    pub clients: Vec<ClientData>,
    pub global_test: Batch,
    pub class_count: usize,
}

impl FederatedDataset {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    /// Total train samples across clients.
    pub fn total_train(&self) -> usize {
        self.clients.iter().map(|c| c.train.len()).sum()
    }

    /// Replace the shared evaluation set (e.g. with an official test split).
    pub fn with_global_test(mut self, test: Batch) -> Self {
        self.global_test = test;
        self
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &str) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_string(),
        source,
    })
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::IdxFormat {
            path: path.to_string(),
            reason: format!("truncated at byte offset {offset}"),
        })
}

/// Load an IDX image/label file pair into a classification batch. Pixels are
/// scaled to `[0, 1]`; labels are kept as raw class indices.
pub fn load_idx(images_path: &str, labels_path: &str) -> Result<Batch> {
    let img = read_file(images_path)?;
    let magic = read_be_u32(&img, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxFormat {
            path: images_path.to_string(),
            reason: format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_be_u32(&img, 4, images_path)? as usize;
    let rows = read_be_u32(&img, 8, images_path)? as usize;
    let cols = read_be_u32(&img, 12, images_path)? as usize;
    let d_in = rows * cols;
    let expected = 16 + n * d_in;
    if img.len() != expected {
        return Err(Error::IdxFormat {
            path: images_path.to_string(),
            reason: format!(
                "expected {expected} bytes for {n} images of {rows}x{cols}, found {}",
                img.len()
            ),
        });
    }

    let lab = read_file(labels_path)?;
    let magic = read_be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxFormat {
            path: labels_path.to_string(),
            reason: format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n_labels = read_be_u32(&lab, 4, labels_path)? as usize;
    if lab.len() != 8 + n_labels {
        return Err(Error::IdxFormat {
            path: labels_path.to_string(),
            reason: format!("expected {} bytes for {n_labels} labels, found {}", 8 + n_labels, lab.len()),
        });
    }
    if n_labels != n {
        return Err(Error::IdxFormat {
            path: labels_path.to_string(),
            reason: format!("{n} images (offset 4 of {images_path}) but {n_labels} labels"),
        });
    }

    let features: Vec<f64> = img[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<u32> = lab[8..].iter().map(|&b| b as u32).collect();
    Ok(Batch::new(features, d_in, Labels::Classes(labels)))
}

/// Serialize a classification batch back to the IDX wire format (one image
/// file, one label file). Pixels are quantized to bytes; used for fixtures
/// and dataset dumps.
pub fn write_idx(batch: &Batch, rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    assert_eq!(rows * cols, batch.input_dim(), "image shape mismatch");
    let n = batch.len();
    let mut img = Vec::with_capacity(16 + n * rows * cols);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for i in 0..n {
        for &v in batch.feature_row(i) {
            img.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    for i in 0..n {
        lab.push(batch.class_label(i) as u8);
    }
    (img, lab)
}

/// Keep at most `cap` samples per class, chosen by a stream shuffle.
pub fn cap_per_class(source: &Batch, cap: usize, stream: &mut RngStream) -> Batch {
    let mut order: Vec<usize> = (0..source.len()).collect();
    stream.shuffle(&mut order);
    let mut counts: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        let c = source.class_label(i);
        let seen = counts.entry(c).or_insert(0);
        if *seen < cap {
            *seen += 1;
            keep.push(i);
        }
    }
    keep.sort_unstable();
    source.select(&keep)
}

fn max_class(source: &Batch) -> usize {
    match source.labels() {
        Labels::Classes(v) => v.iter().copied().max().map(|m| m as usize + 1).unwrap_or(0),
        Labels::Targets(_) => 0,
    }
}

fn split_client(shard: Batch, split_ratio: f64) -> ClientData {
    let n = shard.len();
    let n_train = ((n as f64 * split_ratio).ceil() as usize).clamp(1, n);
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..n).collect();
    ClientData {
        train: shard.select(&train_idx),
        test: shard.select(&test_idx),
    }
}

fn assemble(shards: Vec<Batch>, split_ratio: f64, class_count: usize) -> FederatedDataset {
    let clients: Vec<ClientData> = shards
        .into_iter()
        .map(|s| split_client(s, split_ratio))
        .collect();
    let tests: Vec<&Batch> = clients
        .iter()
        .map(|c| &c.test)
        .filter(|b| !b.is_empty())
        .collect();
    let global_test = if tests.is_empty() {
        clients[0].train.empty_like()
    } else {
        Batch::concat(&tests)
    };
    FederatedDataset {
        clients,
        global_test,
        class_count,
    }
}

/// Random equal shards: shuffles the source and deals `n` shards whose sizes
/// differ by at most one (the first `len % n` shards get the extra sample).
pub fn partition_iid(
    source: &Batch,
    n_clients: usize,
    split_ratio: f64,
    stream: &mut RngStream,
) -> Result<FederatedDataset> {
    if n_clients == 0 {
        return Err(Error::Infeasible("cannot partition into 0 clients".into()));
    }
    if source.len() < n_clients {
        return Err(Error::Infeasible(format!(
            "{} samples cannot cover {} clients",
            source.len(),
            n_clients
        )));
    }
    let mut order: Vec<usize> = (0..source.len()).collect();
    stream.shuffle(&mut order);

    let base = source.len() / n_clients;
    let extra = source.len() % n_clients;
    let mut shards = Vec::with_capacity(n_clients);
    let mut cursor = 0;
    for k in 0..n_clients {
        let size = base + usize::from(k < extra);
        shards.push(source.select(&order[cursor..cursor + size]));
        cursor += size;
    }
    Ok(assemble(shards, split_ratio, max_class(source)))
}

/// Label-skewed partition: every client receives samples from exactly `m`
/// distinct classes. Classes are dealt round-robin over a shuffled class
/// order so each class is requested a balanced number of times, then each
/// class's samples are cut into that many shards.
pub fn partition_by_classes(
    source: &Batch,
    n_clients: usize,
    m: usize,
    split_ratio: f64,
    stream: &mut RngStream,
) -> Result<FederatedDataset> {
    let class_count = max_class(source);
    if n_clients == 0 {
        return Err(Error::Infeasible("cannot partition into 0 clients".into()));
    }
    if m == 0 || m > class_count {
        return Err(Error::Infeasible(format!(
            "m = {m} outside [1, {class_count}]"
        )));
    }

    // Deal classes: client k takes m consecutive entries of a shuffled,
    // cyclically repeated class list, guaranteeing m distinct classes per
    // client (m <= class_count) and balanced per-class demand.
    let mut class_order: Vec<u32> = (0..class_count as u32).collect();
    stream.shuffle(&mut class_order);
    let mut demand = vec![0usize; class_count];
    let mut client_classes: Vec<Vec<u32>> = Vec::with_capacity(n_clients);
    for k in 0..n_clients {
        let classes: Vec<u32> = (0..m)
            .map(|j| class_order[(k * m + j) % class_count])
            .collect();
        for &c in &classes {
            demand[c as usize] += 1;
        }
        client_classes.push(classes);
    }

    // Shuffled index pools per class, cut into `demand[c]` shards.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for i in 0..source.len() {
        pools[source.class_label(i) as usize].push(i);
    }
    for (c, pool) in pools.iter_mut().enumerate() {
        if demand[c] > pool.len() {
            return Err(Error::Infeasible(format!(
                "class {c} has {} samples but {} client shards requested",
                pool.len(),
                demand[c]
            )));
        }
        stream.shuffle(pool);
    }

    let mut taken = vec![0usize; class_count];
    let mut served = vec![0usize; class_count];
    let mut shards = Vec::with_capacity(n_clients);
    for classes in &client_classes {
        let mut indices = Vec::new();
        for &c in classes {
            let c = c as usize;
            let pool = &pools[c];
            // Shard s of demand[c] gets the s-th contiguous cut of the pool.
            let start = pool.len() * served[c] / demand[c];
            let end = pool.len() * (served[c] + 1) / demand[c];
            indices.extend_from_slice(&pool[start..end]);
            served[c] += 1;
            taken[c] += end - start;
        }
        indices.sort_unstable();
        shards.push(source.select(&indices));
    }
    debug_assert!(taken
        .iter()
        .zip(&pools)
        .all(|(t, p)| *t == p.len() || p.is_empty()));

    Ok(assemble(shards, split_ratio, class_count))
}

/// Heterogeneous synthetic classification data. A shared generating linear
/// model is perturbed per client (scale `alpha`), per-client feature means
/// are drawn at scale `beta`, and labels are the argmax of the local linear
/// map. `alpha = beta = 0` collapses to one shared generating model.
#[allow(clippy::too_many_arguments)]
pub fn gen_synthetic(
    alpha: f64,
    beta: f64,
    n_clients: usize,
    samples_per_client: (usize, usize),
    d_in: usize,
    classes: usize,
    split_ratio: f64,
    root_seed: u64,
) -> Result<FederatedDataset> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::config("alpha/beta", "must be nonnegative"));
    }
    let (lo, hi) = samples_per_client;
    if lo == 0 || lo > hi {
        return Err(Error::config(
            "samples_per_client",
            format!("bad range [{lo}, {hi}]"),
        ));
    }

    let mut global = RngStream::new(root_seed, crate::numkit::SERVER, 0, crate::numkit::Purpose::Synthetic);
    let w_shared: Vec<f64> = (0..classes * d_in)
        .map(|_| global.next_gaussian(0.0, 1.0))
        .collect();
    let b_shared: Vec<f64> = (0..classes).map(|_| global.next_gaussian(0.0, 1.0)).collect();
    // Feature coordinate scales decay so the problem is anisotropic.
    let feat_sd: Vec<f64> = (0..d_in).map(|j| ((j + 1) as f64).powf(-0.6)).collect();

    let mut shards = Vec::with_capacity(n_clients);
    for k in 0..n_clients {
        let mut s = RngStream::new(root_seed, k as u32, 0, crate::numkit::Purpose::Synthetic);
        let (w_k, b_k, mu_k) = synthetic_client_params(alpha, beta, &w_shared, &b_shared, d_in, &mut s);
        let n_k = lo + s.gen_range(hi - lo + 1);
        let mut features = Vec::with_capacity(n_k * d_in);
        let mut labels = Vec::with_capacity(n_k);
        for _ in 0..n_k {
            let start = features.len();
            for j in 0..d_in {
                features.push(s.next_gaussian(mu_k[j], feat_sd[j]));
            }
            let x = &features[start..];
            let mut best = 0usize;
            let mut best_z = f64::NEG_INFINITY;
            for c in 0..classes {
                let mut z = b_k[c];
                for j in 0..d_in {
                    z += w_k[c * d_in + j] * x[j];
                }
                if z > best_z {
                    best_z = z;
                    best = c;
                }
            }
            labels.push(best as u32);
        }
        shards.push(Batch::new(features, d_in, Labels::Classes(labels)));
    }
    Ok(assemble(shards, split_ratio, classes))
}

/// Per-client generating parameters for [`gen_synthetic`]; split out so the
/// heterogeneity scaling is directly testable.
fn synthetic_client_params(
    alpha: f64,
    beta: f64,
    w_shared: &[f64],
    b_shared: &[f64],
    d_in: usize,
    stream: &mut RngStream,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let w_k: Vec<f64> = w_shared
        .iter()
        .map(|w| w + stream.next_gaussian(0.0, alpha))
        .collect();
    let b_k: Vec<f64> = b_shared
        .iter()
        .map(|b| b + stream.next_gaussian(0.0, alpha))
        .collect();
    let mu_k: Vec<f64> = (0..d_in).map(|_| stream.next_gaussian(0.0, beta)).collect();
    (w_k, b_k, mu_k)
}

/// Homogeneous-noise synthetic regression data around a shared true weight
/// vector; the induced least-squares problem is strongly convex, which makes
/// it the workload for closed-form-optimum comparisons.
pub fn gen_synthetic_regression(
    n_clients: usize,
    samples_per_client: usize,
    d_in: usize,
    noise_sd: f64,
    split_ratio: f64,
    root_seed: u64,
) -> Result<FederatedDataset> {
    if samples_per_client == 0 {
        return Err(Error::config("samples_per_client", "must be positive"));
    }
    let mut global = RngStream::new(root_seed, crate::numkit::SERVER, 0, crate::numkit::Purpose::Synthetic);
    let w_true: Vec<f64> = (0..d_in).map(|_| global.next_gaussian(0.0, 1.0)).collect();
    let b_true = global.next_gaussian(0.0, 1.0);

    let mut shards = Vec::with_capacity(n_clients);
    for k in 0..n_clients {
        let mut s = RngStream::new(root_seed, k as u32, 0, crate::numkit::Purpose::Synthetic);
        let mut features = Vec::with_capacity(samples_per_client * d_in);
        let mut targets = Vec::with_capacity(samples_per_client);
        for _ in 0..samples_per_client {
            let start = features.len();
            for _ in 0..d_in {
                features.push(s.next_gaussian(0.0, 1.0));
            }
            let x = &features[start..];
            let mut y = b_true + s.next_gaussian(0.0, noise_sd);
            for j in 0..d_in {
                y += w_true[j] * x[j];
            }
            targets.push(y);
        }
        shards.push(Batch::new(features, d_in, Labels::Targets(targets)));
    }
    Ok(assemble(shards, split_ratio, 0))
}

/// One epoch of mini-batches: a fresh shuffle of the partition cut into
/// chunks of `b`, keeping the final short batch.
pub fn batches(partition: &Batch, b: usize, stream: &mut RngStream) -> Result<Vec<Batch>> {
    assert!(b >= 1, "batch size must be at least 1");
    if partition.is_empty() {
        return Err(Error::Infeasible("cannot batch an empty partition".into()));
    }
    let mut order: Vec<usize> = (0..partition.len()).collect();
    stream.shuffle(&mut order);
    Ok(order.chunks(b).map(|c| partition.select(c)).collect())
}

/// Endless mini-batch source that reshuffles at each epoch boundary from the
/// same stream, so a round consuming `s` batches is deterministic.
pub struct BatchCycle<'a> {
    partition: &'a Batch,
    batch_size: usize,
    stream: RngStream,
    queue: std::collections::VecDeque<Batch>,
}

impl<'a> BatchCycle<'a> {
    pub fn new(partition: &'a Batch, batch_size: usize, stream: RngStream) -> Self {
        BatchCycle {
            partition,
            batch_size,
            stream,
            queue: std::collections::VecDeque::new(),
        }
    }

    pub fn next_batch(&mut self) -> Batch {
        if self.queue.is_empty() {
            let epoch = batches(self.partition, self.batch_size, &mut self.stream)
                .expect("BatchCycle over empty partition");
            self.queue.extend(epoch);
        }
        self.queue.pop_front().expect("epoch produced no batches")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Purpose;

    fn stream(seed: u64) -> RngStream {
        RngStream::new(seed, crate::numkit::SERVER, 0, Purpose::Partition)
    }

    /// Small labeled batch: `n` samples, `c` classes, one feature per sample.
    fn toy_classes(n: usize, c: usize) -> Batch {
        let features: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let labels: Vec<u32> = (0..n).map(|i| (i % c) as u32).collect();
        Batch::new(features, 1, Labels::Classes(labels))
    }

    fn multiset(batch: &Batch) -> Vec<(i64, u32)> {
        let mut v: Vec<(i64, u32)> = (0..batch.len())
            .map(|i| (batch.feature_row(i)[0].round() as i64, batch.class_label(i)))
            .collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn idx_roundtrip_and_scaling() {
        let b = toy_classes(6, 3);
        // 1x1 "images": feature values 0..5 scaled into [0,1] on write.
        let scaled = Batch::new(
            (0..6).map(|i| i as f64 / 255.0).collect(),
            1,
            Labels::Classes((0..6).map(|i| (i % 3) as u32).collect()),
        );
        let (img, lab) = write_idx(&scaled, 1, 1);
        let dir = std::env::temp_dir().join(format!("efl_idx_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let ip = dir.join("img.idx");
        let lp = dir.join("lab.idx");
        std::fs::write(&ip, &img).unwrap();
        std::fs::write(&lp, &lab).unwrap();
        let loaded = load_idx(ip.to_str().unwrap(), lp.to_str().unwrap()).unwrap();
        assert_eq!(loaded.len(), 6);
        assert_eq!(loaded.input_dim(), 1);
        for i in 0..6 {
            assert!((loaded.feature_row(i)[0] - i as f64 / 255.0).abs() < 1e-12);
            assert_eq!(loaded.class_label(i), b.class_label(i));
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn idx_bad_magic_names_observed_value() {
        let dir = std::env::temp_dir().join(format!("efl_idx_bad_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let ip = dir.join("img.idx");
        let lp = dir.join("lab.idx");
        let mut img = vec![0u8; 16];
        img[3] = 0x07; // wrong magic 0x00000007
        std::fs::write(&ip, &img).unwrap();
        std::fs::write(&lp, [0u8; 8]).unwrap();
        let err = load_idx(ip.to_str().unwrap(), lp.to_str().unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("0x00000007"), "error should name the magic: {msg}");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn idx_truncated_fails_closed() {
        let b = toy_classes(4, 2);
        let scaled = Batch::new(vec![0.1, 0.2, 0.3, 0.4], 1, b.labels().clone());
        let (mut img, lab) = write_idx(&scaled, 1, 1);
        img.truncate(img.len() - 2);
        let dir = std::env::temp_dir().join(format!("efl_idx_tr_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let ip = dir.join("img.idx");
        let lp = dir.join("lab.idx");
        std::fs::write(&ip, &img).unwrap();
        std::fs::write(&lp, &lab).unwrap();
        assert!(load_idx(ip.to_str().unwrap(), lp.to_str().unwrap()).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn iid_partition_sizes() {
        let src = toy_classes(100, 10);
        let fd = partition_iid(&src, 4, 1.0, &mut stream(1)).unwrap();
        assert!(fd.clients.iter().all(|c| c.train.len() == 25));

        let fd = partition_iid(&src, 3, 1.0, &mut stream(2)).unwrap();
        let mut sizes: Vec<usize> = fd.clients.iter().map(|c| c.train.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![33, 33, 34]);

        let fd = partition_iid(&src, 1, 1.0, &mut stream(3)).unwrap();
        assert_eq!(fd.clients[0].train.len(), 100);
        assert_eq!(multiset(&fd.clients[0].train), multiset(&src));

        assert!(partition_iid(&src, 0, 1.0, &mut stream(4)).is_err());
    }

    #[test]
    fn iid_partition_conserves_source() {
        let src = toy_classes(103, 7);
        let fd = partition_iid(&src, 5, 1.0, &mut stream(9)).unwrap();
        let trains: Vec<&Batch> = fd.clients.iter().map(|c| &c.train).collect();
        assert_eq!(multiset(&Batch::concat(&trains)), multiset(&src));
    }

    #[test]
    fn split_ratio_conserves_union() {
        let src = toy_classes(100, 5);
        let fd = partition_iid(&src, 4, 0.8, &mut stream(10)).unwrap();
        let parts: Vec<&Batch> = fd
            .clients
            .iter()
            .flat_map(|c| [&c.train, &c.test])
            .collect();
        assert_eq!(multiset(&Batch::concat(&parts)), multiset(&src));
        assert_eq!(fd.clients[0].train.len(), 20);
        assert_eq!(fd.clients[0].test.len(), 5);
        assert_eq!(fd.global_test.len(), 20);
    }

    fn distinct_labels(b: &Batch) -> std::collections::BTreeSet<u32> {
        (0..b.len()).map(|i| b.class_label(i)).collect()
    }

    #[test]
    fn class_partition_exact_support() {
        let src = toy_classes(400, 10);
        let fd = partition_by_classes(&src, 10, 2, 1.0, &mut stream(5)).unwrap();
        let mut union = std::collections::BTreeSet::new();
        for c in &fd.clients {
            let labels = distinct_labels(&c.train);
            assert_eq!(labels.len(), 2);
            union.extend(labels);
            assert!(!c.train.is_empty());
        }
        assert_eq!(union.len(), 10);

        // Conservation.
        let trains: Vec<&Batch> = fd.clients.iter().map(|c| &c.train).collect();
        assert_eq!(multiset(&Batch::concat(&trains)), multiset(&src));
    }

    #[test]
    fn class_partition_degenerate_and_full() {
        let src = toy_classes(300, 6);
        let fd = partition_by_classes(&src, 6, 1, 1.0, &mut stream(6)).unwrap();
        for c in &fd.clients {
            assert_eq!(distinct_labels(&c.train).len(), 1);
        }

        let fd = partition_by_classes(&src, 4, 6, 1.0, &mut stream(7)).unwrap();
        for c in &fd.clients {
            assert_eq!(distinct_labels(&c.train).len(), 6);
            // Non-degenerate histogram: several classes present with samples.
            assert!(c.train.len() >= 6);
        }
    }

    #[test]
    fn class_partition_infeasible() {
        // 2 samples per class cannot serve 8 shard requests of one class.
        let src = toy_classes(6, 3);
        assert!(partition_by_classes(&src, 8, 3, 1.0, &mut stream(8)).is_err());
        assert!(partition_by_classes(&src, 2, 4, 1.0, &mut stream(8)).is_err());
        assert!(partition_by_classes(&src, 2, 0, 1.0, &mut stream(8)).is_err());
    }

    #[test]
    fn synthetic_deterministic_and_shared_at_zero() {
        let a = gen_synthetic(0.5, 0.5, 4, (30, 60), 8, 5, 0.8, 123).unwrap();
        let b = gen_synthetic(0.5, 0.5, 4, (30, 60), 8, 5, 0.8, 123).unwrap();
        for (ca, cb) in a.clients.iter().zip(&b.clients) {
            assert_eq!(ca.train, cb.train);
            assert_eq!(ca.test, cb.test);
        }

        // alpha = 0: all per-client generating weights equal the shared ones.
        let w_shared = vec![0.3, -0.2, 0.7, 0.1];
        let b_shared = vec![0.05, -0.4];
        for k in 0..5 {
            let mut s = RngStream::new(9, k, 0, Purpose::Synthetic);
            let (w_k, b_k, mu_k) =
                synthetic_client_params(0.0, 0.0, &w_shared, &b_shared, 2, &mut s);
            assert_eq!(w_k, w_shared);
            assert_eq!(b_k, b_shared);
            assert_eq!(mu_k, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn synthetic_heterogeneity_grows_with_alpha() {
        // Mean pairwise distance between client generating weights, averaged
        // over 20 seeds, should grow with alpha.
        let w_shared = vec![0.0; 12];
        let b_shared = vec![0.0; 3];
        let mean_pairwise = |alpha: f64| -> f64 {
            let mut total = 0.0;
            for seed in 0..20u64 {
                let params: Vec<Vec<f64>> = (0..4)
                    .map(|k| {
                        let mut s = RngStream::new(seed, k, 0, Purpose::Synthetic);
                        synthetic_client_params(alpha, 0.0, &w_shared, &b_shared, 4, &mut s).0
                    })
                    .collect();
                let mut acc = 0.0;
                let mut count = 0;
                for i in 0..4 {
                    for j in (i + 1)..4 {
                        let d: f64 = params[i]
                            .iter()
                            .zip(&params[j])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        acc += d;
                        count += 1;
                    }
                }
                total += acc / count as f64;
            }
            total / 20.0
        };
        let d0 = mean_pairwise(0.0);
        let d1 = mean_pairwise(0.5);
        let d2 = mean_pairwise(2.0);
        assert_eq!(d0, 0.0);
        assert!(d1 > d0 && d2 > d1, "distances {d0} {d1} {d2} not increasing");
    }

    #[test]
    fn batch_sizes_and_conservation() {
        let part = toy_classes(10, 3);
        let mut s = stream(11);
        let bs = batches(&part, 3, &mut s).unwrap();
        let sizes: Vec<usize> = bs.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let refs: Vec<&Batch> = bs.iter().collect();
        assert_eq!(multiset(&Batch::concat(&refs)), multiset(&part));

        let one = batches(&part, 100, &mut s).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 10);

        let empty = part.select(&[]);
        assert!(batches(&empty, 2, &mut s).is_err());
    }

    #[test]
    fn cap_per_class_limits_counts() {
        let src = toy_classes(90, 3);
        let capped = cap_per_class(&src, 10, &mut stream(12));
        assert_eq!(capped.len(), 30);
        let mut counts = [0usize; 3];
        for i in 0..capped.len() {
            counts[capped.class_label(i) as usize] += 1;
        }
        assert_eq!(counts, [10, 10, 10]);
    }
}

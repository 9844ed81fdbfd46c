//! Desk-scale datasets: synthetic Gaussian clusters, CIFAR-format binary
//! ingestion, and deterministic batching.

use std::path::Path;

use crate::augment::ImageSample;
use crate::error::{Error, Result};
use crate::rng::RngStream;

const CIFAR_RECORD_BYTES: usize = 3073;
const CIFAR_CLASSES: usize = 10;

/// Sample storage: flat vectors or images.
#[derive(Debug, Clone)]
pub enum Samples {
    /// Row-major `N x dim` matrix.
    Vectors { dim: usize, rows: Vec<f64> },
    Images(Vec<ImageSample>),
}

/// An immutable dataset with optional labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Samples,
    labels: Option<Vec<usize>>,
    class_count: usize,
    provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        match &self.samples {
            Samples::Vectors { dim, rows } => rows.len() / dim,
            Samples::Images(imgs) => imgs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Vector dimension, or `None` for image datasets.
    pub fn vector_dim(&self) -> Option<usize> {
        match &self.samples {
            Samples::Vectors { dim, .. } => Some(*dim),
            Samples::Images(_) => None,
        }
    }

    /// One vector sample as a slice. Panics on image datasets.
    pub fn vector_row(&self, i: usize) -> &[f64] {
        match &self.samples {
            Samples::Vectors { dim, rows } => &rows[i * dim..(i + 1) * dim],
            Samples::Images(_) => panic!("vector_row on an image dataset"),
        }
    }

    /// One image sample. Panics on vector datasets.
    pub fn image(&self, i: usize) -> &ImageSample {
        match &self.samples {
            Samples::Images(imgs) => &imgs[i],
            Samples::Vectors { .. } => panic!("image on a vector dataset"),
        }
    }
}

/// `k` Gaussian clusters in `d` dimensions with centers at mutual distance
/// at least `separation`. Deterministic under `seed`.
pub fn gen_synthetic_clusters(
    k: usize,
    d: usize,
    n_per_class: usize,
    spread: f64,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 clusters, got {k}")));
    }
    if d < 2 {
        return Err(Error::config(format!("need dimension >= 2, got {d}")));
    }
    if spread <= 0.0 {
        return Err(Error::config(format!("spread {spread} must be positive")));
    }
    if n_per_class == 0 {
        return Err(Error::config("n_per_class must be positive"));
    }

    let root = RngStream::new(seed);
    let mut center_rng = root.derive_named("centers");
    // Centers sit on a sphere whose radius starts just large enough for
    // pairwise distances near `separation` (random directions in high
    // dimension are nearly orthogonal) and widens only if rejection
    // sampling cannot fit all k centers. This keeps the task difficulty
    // at the nominal separation instead of far above it.
    let base_radius = if separation > 0.0 {
        separation / std::f64::consts::SQRT_2
    } else {
        spread.max(1.0)
    };
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    'placement: for radius_scale in [1.0, 1.5, 2.5, 4.0, 8.0] {
        centers.clear();
        let radius = base_radius * radius_scale;
        let mut attempts = 0usize;
        while centers.len() < k {
            attempts += 1;
            if attempts > 200 * k {
                continue 'placement;
            }
            let mut cand: Vec<f64> = (0..d).map(|_| center_rng.gaussian()).collect();
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            for x in cand.iter_mut() {
                *x *= radius / norm;
            }
            let ok = centers.iter().all(|c| {
                let dist2: f64 = c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
                dist2.sqrt() >= separation
            });
            if ok {
                centers.push(cand);
            }
        }
        break;
    }
    if centers.len() < k {
        return Err(Error::config(format!(
            "cannot place {k} centers with separation {separation} in dimension {d}"
        )));
    }

    let mut sample_rng = root.derive_named("samples");
    let mut rows = Vec::with_capacity(k * n_per_class * d);
    let mut labels = Vec::with_capacity(k * n_per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &c in center {
                rows.push(c + spread * sample_rng.gaussian());
            }
            labels.push(label);
        }
    }

    Ok(Dataset {
        samples: Samples::Vectors { dim: d, rows },
        labels: Some(labels),
        class_count: k,
        provenance: format!(
            "synthetic(k={k}, d={d}, n_per_class={n_per_class}, spread={spread}, separation={separation}, seed={seed})"
        ),
    })
}

/// Parse a CIFAR-10 binary file: 3073-byte records of one label byte
/// followed by 3072 channel-major pixel bytes, scaled to `[0, 1]`.
pub fn load_cifar_binary(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    parse_cifar_bytes(&bytes, &path.display().to_string())
}

/// Parse in-memory CIFAR-format bytes (the loader behind `load_cifar_binary`).
pub fn parse_cifar_bytes(bytes: &[u8], origin: &str) -> Result<Dataset> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::format(format!(
            "{origin}: length {} is not a positive multiple of {CIFAR_RECORD_BYTES}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for rec in 0..n {
        let record = &bytes[rec * CIFAR_RECORD_BYTES..(rec + 1) * CIFAR_RECORD_BYTES];
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::format(format!(
                "{origin}: record {rec} has label byte {label} > 9"
            )));
        }
        let pixels: Vec<f64> = record[1..].iter().map(|&b| b as f64 / 255.0).collect();
        images.push(ImageSample::new(32, 32, pixels)?);
        labels.push(label);
    }
    Ok(Dataset {
        samples: Samples::Images(images),
        labels: Some(labels),
        class_count: CIFAR_CLASSES,
        provenance: format!("cifar({origin})"),
    })
}

/// Per-epoch batching plan: a seeded permutation chopped into fixed-size
/// index batches.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    permutation: Vec<usize>,
    batch_size: usize,
    drop_last: bool,
}

impl BatchPlan {
    /// Plan for one epoch. The permutation depends only on
    /// `(seed, epoch)`, so replays are exact.
    pub fn new(
        seed: u64,
        epoch: usize,
        n_samples: usize,
        batch_size: usize,
        drop_last: bool,
    ) -> Result<BatchPlan> {
        if batch_size == 0 || batch_size > n_samples {
            return Err(Error::config(format!(
                "batch_size {batch_size} must be in [1, {n_samples}]"
            )));
        }
        let mut rng = RngStream::new(seed).derive_named("batches").derive(epoch as u64);
        let mut permutation: Vec<usize> = (0..n_samples).collect();
        rng.shuffle(&mut permutation);
        Ok(BatchPlan { permutation, batch_size, drop_last })
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }
}

/// Cut the plan's permutation into ordered index batches.
pub fn batches(plan: &BatchPlan) -> Vec<Vec<usize>> {
    let chunks = plan.permutation.chunks(plan.batch_size);
    chunks
        .filter(|c| !plan.drop_last || c.len() == plan.batch_size)
        .map(|c| c.to_vec())
        .collect()
}

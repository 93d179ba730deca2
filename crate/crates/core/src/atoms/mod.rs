//! Class-partitioned dictionary over embedding space and the iterative
//! residual-subtraction decomposition that reads mixtures loudest-first.
//!
//! The dictionary holds `num_classes * block_size` unit-norm kernel columns;
//! kernels are grouped into contiguous per-class blocks so a kernel index
//! maps to its class by integer division. Decomposition repeatedly picks the
//! kernel with the highest activation against the current residual, clamps
//! its activation at zero, reconstructs, and subtracts.

mod factory;
mod train;

pub use factory::{make_clip_bank, make_mixture, BankRecord, ClipBank, ClipEmbedding, MixtureComponent, MixtureRecord, MixtureSample};
pub use train::{
    decomposition_accuracy, step_loss, train_mart, AccuracyReport, MartConfig, MartReport,
    StepLossResult,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Provenance;

/// The kernel matrix (dim x num_kernels) with contiguous class blocks.
/// Columns are kept at unit L2 norm by construction and after every
/// training update.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    dim: usize,
    num_classes: usize,
    block_size: usize,
    /// column-major storage: kernel j occupies `[j*dim, (j+1)*dim)`
    kernels: Vec<f64>,
}

impl Dictionary {
    /// Random dictionary with unit-norm columns.
    pub fn random<R: Rng + ?Sized>(
        dim: usize,
        num_classes: usize,
        block_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || num_classes == 0 || block_size == 0 {
            return Err(Error::invalid("dictionary dims must be positive"));
        }
        let n = num_classes * block_size;
        let mut kernels = vec![0.0; dim * n];
        for col in kernels.chunks_mut(dim) {
            loop {
                let mut norm2 = 0.0f64;
                for v in col.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                    norm2 += *v * *v;
                }
                if norm2 > 1e-12 {
                    let inv = 1.0 / norm2.sqrt();
                    col.iter_mut().for_each(|v| *v *= inv);
                    break;
                }
            }
        }
        Ok(Dictionary {
            dim,
            num_classes,
            block_size,
            kernels,
        })
    }

    /// Build from explicit columns (used by tests and checkpoint loading).
    pub fn from_columns(
        dim: usize,
        num_classes: usize,
        block_size: usize,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = num_classes * block_size;
        if columns.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} kernel columns, got {}",
                columns.len()
            )));
        }
        let mut kernels = Vec::with_capacity(dim * n);
        for col in &columns {
            if col.len() != dim {
                return Err(Error::invalid("kernel column has wrong dimension"));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("kernel column has non-finite entries"));
            }
            kernels.extend_from_slice(col);
        }
        let mut dict = Dictionary {
            dim,
            num_classes,
            block_size,
            kernels,
        };
        dict.renormalize();
        Ok(dict)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_kernels(&self) -> usize {
        self.num_classes * self.block_size
    }

    pub fn kernel(&self, j: usize) -> &[f64] {
        &self.kernels[j * self.dim..(j + 1) * self.dim]
    }

    /// Class owning kernel `j`; blocks are contiguous.
    pub fn class_of(&self, j: usize) -> usize {
        j / self.block_size
    }

    /// Kernel index range of a class block.
    pub fn block_range(&self, class: usize) -> std::ops::Range<usize> {
        class * self.block_size..(class + 1) * self.block_size
    }

    /// Activations of every kernel against a residual: a = W^T r.
    pub fn activations(&self, residual: &[f64]) -> Vec<f64> {
        debug_assert_eq!(residual.len(), self.dim);
        (0..self.num_kernels())
            .map(|j| dot(self.kernel(j), residual))
            .collect()
    }

    /// Raw mutable access to the column-major kernel buffer, for optimizers
    /// and finite-difference checks. Callers own the unit-norm invariant:
    /// call [`Self::renormalize`] after a training update.
    pub fn kernels_mut(&mut self) -> &mut [f64] {
        &mut self.kernels
    }

    /// Rescale every kernel column to unit L2 norm.
    pub fn renormalize(&mut self) {
        for col in self.kernels.chunks_mut(self.dim) {
            let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-300 {
                let inv = 1.0 / n;
                col.iter_mut().for_each(|v| *v *= inv);
            }
        }
    }

    pub fn to_checkpoint(&self, meta: Provenance) -> DictionaryCheckpoint {
        let n = self.num_kernels();
        // row-major d x N layout in the container
        let mut row_major = vec![0.0; self.dim * n];
        for j in 0..n {
            for (i, &v) in self.kernel(j).iter().enumerate() {
                row_major[i * n + j] = v;
            }
        }
        DictionaryCheckpoint {
            meta,
            dim: self.dim,
            num_classes: self.num_classes,
            block_size: self.block_size,
            class_of: (0..n).map(|j| self.class_of(j)).collect(),
            kernels_row_major: row_major,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Versioned JSON container for a trained dictionary: dims, class map, the
/// row-major kernel matrix, and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DictionaryCheckpoint {
    pub meta: Provenance,
    pub dim: usize,
    pub num_classes: usize,
    pub block_size: usize,
    pub class_of: Vec<usize>,
    pub kernels_row_major: Vec<f64>,
}

impl DictionaryCheckpoint {
    pub fn into_dictionary(self) -> Result<Dictionary> {
        let n = self.num_classes * self.block_size;
        if self.kernels_row_major.len() != self.dim * n {
            return Err(Error::Format("kernel matrix size mismatch".into()));
        }
        if self.class_of.len() != n {
            return Err(Error::Format("class map size mismatch".into()));
        }
        for (j, &c) in self.class_of.iter().enumerate() {
            if c != j / self.block_size {
                return Err(Error::Format(format!(
                    "class map is not contiguous blocks at kernel {j}"
                )));
            }
        }
        let mut kernels = vec![0.0; self.dim * n];
        for j in 0..n {
            for i in 0..self.dim {
                kernels[j * self.dim + i] = self.kernels_row_major[i * n + j];
            }
        }
        if kernels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite kernel entries".into()));
        }
        Ok(Dictionary {
            dim: self.dim,
            num_classes: self.num_classes,
            block_size: self.block_size,
            kernels,
        })
    }
}

/// One step of the decomposition: which kernel fired, its class, the clamped
/// activation, the reconstruction, and the residual norm after subtraction.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompStep {
    pub kernel: usize,
    pub predicted_class: usize,
    pub activation: f64,
    pub reconstruction: Vec<f64>,
    pub residual_norm_after: f64,
}

/// Full ledger of an iterative decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTrace {
    pub steps: Vec<DecompStep>,
    pub final_residual: Vec<f64>,
}

impl DecompositionTrace {
    pub fn predicted_classes(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.predicted_class).collect()
    }
}

/// Iterative residual subtraction: per step, pick the kernel with the highest
/// activation (ties to the lowest index), clamp its activation at zero,
/// reconstruct, and subtract. A clamped activation of zero leaves the
/// residual unchanged; the degenerate step is recorded, not an error.
pub fn decompose(dict: &Dictionary, x_mix: &[f64], steps: usize) -> Result<DecompositionTrace> {
    if steps == 0 {
        return Err(Error::invalid("decomposition needs at least one step"));
    }
    if x_mix.len() != dict.dim() {
        return Err(Error::invalid(format!(
            "mixture dim {} does not match dictionary dim {}",
            x_mix.len(),
            dict.dim()
        )));
    }
    if x_mix.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("mixture has non-finite entries"));
    }
    let mut residual = x_mix.to_vec();
    let mut trace_steps = Vec::with_capacity(steps);
    for _ in 0..steps {
        let acts = dict.activations(&residual);
        let mut best = 0usize;
        for (j, &a) in acts.iter().enumerate() {
            if a > acts[best] {
                best = j;
            }
        }
        let z = if acts[best] > 0.0 { acts[best] } else { 0.0 };
        let kernel = dict.kernel(best);
        let reconstruction: Vec<f64> = kernel.iter().map(|&w| z * w).collect();
        for (r, x) in residual.iter_mut().zip(&reconstruction) {
            *r -= x;
        }
        let norm_after = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
        trace_steps.push(DecompStep {
            kernel: best,
            predicted_class: dict.class_of(best),
            activation: z,
            reconstruction,
            residual_norm_after: norm_after,
        });
    }
    Ok(DecompositionTrace {
        steps: trace_steps,
        final_residual: residual,
    })
}

/// Collapse a trace into the sparse activation vector over all kernels:
/// nonnegative, with at most one nonzero per step. This is the conditioning
/// feature consumed by the flow model.
pub fn atom_histogram(dict: &Dictionary, trace: &DecompositionTrace) -> Vec<f64> {
    let mut hist = vec![0.0; dict.num_kernels()];
    for step in &trace.steps {
        hist[step.kernel] += step.activation;
    }
    hist
}

//! Sparse Markov kernels and their stationary laws.

use crate::error::{Error, Result};

/// Row-stochastic kernel in compressed sparse row form.
#[derive(Debug, Clone, Default)]
pub struct SparseKernel {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    probs: Vec<f64>,
}

impl SparseKernel {
    pub fn builder(n: usize) -> KernelBuilder {
        KernelBuilder {
            n,
            kernel: SparseKernel {
                offsets: vec![0],
                targets: Vec::new(),
                probs: Vec::new(),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[i]..self.offsets[i + 1];
        self.targets[range.clone()]
            .iter()
            .copied()
            .zip(self.probs[range].iter().copied())
    }

    /// `out = pi * P`.
    pub fn push_forward(&self, pi: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, &mass) in pi.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for k in self.offsets[i]..self.offsets[i + 1] {
                out[self.targets[k]] += mass * self.probs[k];
            }
        }
    }

    /// `‖πP − π‖₁`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        let mut next = vec![0.0; pi.len()];
        self.push_forward(pi, &mut next);
        next.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// Incremental row-by-row construction of a [`SparseKernel`].
pub struct KernelBuilder {
    n: usize,
    kernel: SparseKernel,
}

impl KernelBuilder {
    /// Appends the next row. Entries with zero probability are dropped and
    /// duplicate targets are kept as separate entries.
    pub fn push_row<I: IntoIterator<Item = (usize, f64)>>(&mut self, entries: I) -> Result<()> {
        let mut mass = 0.0;
        for (target, prob) in entries {
            if target >= self.n {
                return Err(Error::InvalidParams(format!("kernel target {target} out of range")));
            }
            if prob < 0.0 {
                return Err(Error::InvalidParams("negative transition probability".into()));
            }
            if prob > 0.0 {
                self.kernel.targets.push(target);
                self.kernel.probs.push(prob);
                mass += prob;
            }
        }
        if (mass - 1.0).abs() > 1e-9 {
            let row = self.kernel.offsets.len() - 1;
            return Err(Error::InvalidParams(format!("kernel row {row} sums to {mass}")));
        }
        self.kernel.offsets.push(self.kernel.targets.len());
        Ok(())
    }

    pub fn finish(self) -> Result<SparseKernel> {
        if self.kernel.len() != self.n {
            return Err(Error::InvalidParams(format!(
                "kernel has {} rows, expected {}",
                self.kernel.len(),
                self.n
            )));
        }
        Ok(self.kernel)
    }
}

/// Power-iteration result; `converged` is false when the iteration cap was
/// reached before the L1 change fell below the tolerance.
#[derive(Debug, Clone)]
pub struct Stationary {
    pub distribution: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub const STATIONARY_TOL: f64 = 1e-12;
pub const STATIONARY_MAX_ITERS: usize = 1_000_000;

/// Lazy power iteration `x <- (x + xP) / 2` from the uniform law until the
/// L1 change between successive iterates is at most 1e-12 (capped at 10⁶
/// iterations). The lazy step makes periodic chains converge.
pub fn stationary_distribution(kernel: &SparseKernel) -> Stationary {
    stationary_distribution_with(kernel, STATIONARY_TOL, STATIONARY_MAX_ITERS)
}

pub fn stationary_distribution_with(kernel: &SparseKernel, tol: f64, max_iters: usize) -> Stationary {
    let n = kernel.len();
    limiting_distribution(kernel, &vec![1.0 / n.max(1) as f64; n], tol, max_iters)
}

/// Long-run occupation law of the chain started from `start`, the Cesaro
/// limit of `start P^t`. For a multichain kernel this weights each
/// recurrent class by its absorption probability from `start`.
pub fn limiting_distribution(kernel: &SparseKernel, start: &[f64], tol: f64, max_iters: usize) -> Stationary {
    let n = kernel.len();
    if n == 0 {
        return Stationary {
            distribution: Vec::new(),
            iterations: 0,
            converged: true,
        };
    }
    let mut pi = start.to_vec();
    let mut next = vec![0.0; n];
    for it in 1..=max_iters {
        kernel.push_forward(&pi, &mut next);
        next.iter_mut().zip(&pi).for_each(|(y, x)| *y = 0.5 * (*y + x));
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let change: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if change <= tol {
            return Stationary {
                distribution: pi,
                iterations: it,
                converged: true,
            };
        }
    }
    Stationary {
        distribution: pi,
        iterations: max_iters,
        converged: false,
    }
}

//! Gaussian kernel `Φ(z) = exp(−α|z|²)` and its interpolation system.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::collocation::CollocationSet;
use crate::error::{Error, Result};

/// Nugget tried once when the bare kernel matrix does not factorize.
pub const FALLBACK_NUGGET: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    pub alpha: f64,
}

impl GaussianKernel {
    #[inline]
    pub fn eval(&self, z2: f64) -> f64 {
        (-self.alpha * z2).exp()
    }
}

/// Kernel matrix `A_{jl} = Φ(x_j − x_l)` with a Cholesky factor of `A + λI`.
#[derive(Debug, Clone)]
pub struct KernelSystem {
    collocation: CollocationSet,
    kernel: GaussianKernel,
    requested_nugget: f64,
    nugget: f64,
    gram: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

pub fn assemble_kernel_system(collocation: CollocationSet, alpha: f64, nugget: f64) -> Result<KernelSystem> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("kernel shape must be positive, got {alpha}")));
    }
    if !(nugget >= 0.0) || !nugget.is_finite() {
        return Err(Error::invalid(format!("nugget must be nonnegative, got {nugget}")));
    }
    let kernel = GaussianKernel { alpha };
    let n = collocation.len();
    let d = collocation.dim();
    let mut gram = DMatrix::zeros(n, n);
    for j in 0..n {
        gram[(j, j)] = 1.0;
        for l in 0..j {
            let z2: f64 = (0..d)
                .map(|i| {
                    let z = collocation.node(j)[i] - collocation.node(l)[i];
                    z * z
                })
                .sum();
            let v = kernel.eval(z2);
            gram[(j, l)] = v;
            gram[(l, j)] = v;
        }
    }

    let attempt = |lambda: f64| {
        let mut shifted = gram.clone();
        for j in 0..n {
            shifted[(j, j)] += lambda;
        }
        Cholesky::new(shifted)
    };
    let (factor, used) = match attempt(nugget) {
        Some(f) => (f, nugget),
        None if nugget == 0.0 => match attempt(FALLBACK_NUGGET) {
            Some(f) => (f, FALLBACK_NUGGET),
            None => {
                return Err(Error::IllConditionedKernel {
                    nugget: FALLBACK_NUGGET,
                    min_distance: collocation.min_pairwise_distance(),
                })
            }
        },
        None => {
            return Err(Error::IllConditionedKernel {
                nugget,
                min_distance: collocation.min_pairwise_distance(),
            })
        }
    };
    Ok(KernelSystem {
        collocation,
        kernel,
        requested_nugget: nugget,
        nugget: used,
        gram,
        factor,
    })
}

/// Value, gradient and Hessian of a kernel expansion at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major `d×d`.
    pub hessian: Vec<f64>,
    /// The query left the collocation bounding box; the expansion is
    /// extrapolating there.
    pub outside_box: bool,
}

impl KernelSystem {
    pub fn collocation(&self) -> &CollocationSet {
        &self.collocation
    }

    pub fn alpha(&self) -> f64 {
        self.kernel.alpha
    }

    pub fn kernel(&self) -> GaussianKernel {
        self.kernel
    }

    /// Nugget actually used in the factorization.
    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    /// Whether the fallback nugget had to be applied.
    pub fn nugget_fallback(&self) -> bool {
        self.nugget != self.requested_nugget
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn len(&self) -> usize {
        self.collocation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.collocation.is_empty()
    }

    /// Solves `(A + λI) c = values`.
    pub fn interpolate(&self, values: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(values)
    }

    /// `‖A c − values‖∞`, measured against the bare kernel matrix.
    pub fn nodal_residual(&self, coefficients: &DVector<f64>, values: &DVector<f64>) -> f64 {
        (&self.gram * coefficients - values).amax()
    }

    /// `Σ_j c_j Φ(x − x_j)`.
    pub fn value(&self, coefficients: &DVector<f64>, x: &[f64]) -> f64 {
        let d = self.collocation.dim();
        (0..self.len())
            .map(|j| {
                let node = self.collocation.node(j);
                let z2: f64 = (0..d).map(|i| (x[i] - node[i]) * (x[i] - node[i])).sum();
                coefficients[j] * self.kernel.eval(z2)
            })
            .sum()
    }

    /// Expansion with analytic derivatives:
    /// `∇Φ(z) = −2αz Φ(z)`, `∇²Φ(z) = (4α² zzᵀ − 2αI) Φ(z)`.
    pub fn eval(&self, coefficients: &DVector<f64>, x: &[f64]) -> KernelEval {
        let d = self.collocation.dim();
        let a = self.kernel.alpha;
        let mut value = 0.0;
        let mut gradient = vec![0.0; d];
        let mut hessian = vec![0.0; d * d];
        let mut z = vec![0.0; d];
        for j in 0..self.len() {
            let node = self.collocation.node(j);
            let mut z2 = 0.0;
            for i in 0..d {
                z[i] = x[i] - node[i];
                z2 += z[i] * z[i];
            }
            let w = coefficients[j] * self.kernel.eval(z2);
            value += w;
            for r in 0..d {
                gradient[r] -= 2.0 * a * z[r] * w;
                for c in 0..d {
                    let delta = if r == c { 1.0 } else { 0.0 };
                    hessian[r * d + c] += (4.0 * a * a * z[r] * z[c] - 2.0 * a * delta) * w;
                }
            }
        }
        KernelEval {
            value,
            gradient,
            hessian,
            outside_box: !self.collocation.contains(x),
        }
    }

    /// Stacked derivative operators evaluated at the nodes themselves.
    ///
    /// `gradient` has `d·N` rows: row `i·N + j` maps coefficients to
    /// `∂ᵢṼ(x_j)`. `hessian` (when requested) has `d(d+1)/2 · N` rows in
    /// upper-triangular pair order `(0,0), (0,1), …, (d−1,d−1)`.
    pub fn nodal_operators(&self, with_hessian: bool) -> NodalOperators {
        let n = self.len();
        let d = self.collocation.dim();
        let a = self.kernel.alpha;
        let pairs: Vec<(usize, usize)> = (0..d).flat_map(|r| (r..d).map(move |c| (r, c))).collect();
        let mut gradient = DMatrix::zeros(d * n, n);
        let mut hessian = if with_hessian {
            Some(DMatrix::zeros(pairs.len() * n, n))
        } else {
            None
        };
        let mut z = vec![0.0; d];
        for l in 0..n {
            for j in 0..n {
                let (xj, xl) = (self.collocation.node(j), self.collocation.node(l));
                for i in 0..d {
                    z[i] = xj[i] - xl[i];
                }
                let phi = self.gram[(j, l)];
                for i in 0..d {
                    gradient[(i * n + j, l)] = -2.0 * a * z[i] * phi;
                }
                if let Some(h) = hessian.as_mut() {
                    for (p, &(r, c)) in pairs.iter().enumerate() {
                        let delta = if r == c { 1.0 } else { 0.0 };
                        h[(p * n + j, l)] = (4.0 * a * a * z[r] * z[c] - 2.0 * a * delta) * phi;
                    }
                }
            }
        }
        NodalOperators {
            dim: d,
            nodes: n,
            pairs,
            gradient,
            hessian,
        }
    }
}

/// Derivatives of the expansion at the collocation nodes as matrices acting
/// on coefficient vectors.
#[derive(Debug, Clone)]
pub struct NodalOperators {
    pub dim: usize,
    pub nodes: usize,
    pub pairs: Vec<(usize, usize)>,
    pub gradient: DMatrix<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

//! The restoration step: minimize the energy over `g` with `u` and `c` fixed.
//!
//! With `Σ_i u_i = 1` the segmentation term `λ Σ_i ω (g − c_i)² u_i` has
//! quadratic coefficient `λω`, so per channel the minimizer solves
//!
//! ```text
//! (μ Aᵀ diag(ω) A + λ diag(ω)) g = μ Aᵀ(ω f) + λ ω Σ_i c_i u_i
//! ```
//!
//! Fully observed images take the exact spectral route. Masked images use
//! conjugate gradients warm-started so that unobserved pixels the system
//! cannot see keep the blended phase value `Σ_i c_i u_i`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::driver::energy;
use crate::error::{Result, SegError};
use crate::operators::{solve_cg, FftConvolution, SpectralOp, SpectralSystem};
use crate::types::{Codebook, ImageField, Membership, ModelParams, ObservationMask, OperatorKind};

/// Convergence summary of one masked channel solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub channel: usize,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Restored image plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct GStep {
    pub g: ImageField,
    /// One entry per channel on the masked path; empty on the spectral path.
    pub cg: Vec<CgReport>,
}

impl GStep {
    pub fn all_converged(&self) -> bool {
        self.cg.iter().all(|r| r.converged)
    }
}

enum Backend {
    Spectral(SpectralSystem),
    Masked { blur: Option<FftConvolution> },
}

/// Reusable g-step solver bound to one observation, mask and parameter set.
pub struct Restorer<'a> {
    f: &'a ImageField,
    omega: &'a ObservationMask,
    mu: f64,
    lambda: f64,
    cg_tol: f64,
    cg_max_iter: usize,
    backend: Backend,
    /// `μ Aᵀ(ω f)` per channel.
    data_rhs: Vec<Vec<f64>>,
}

impl<'a> Restorer<'a> {
    pub fn new(f: &'a ImageField, omega: &'a ObservationMask, p: &ModelParams) -> Result<Self> {
        p.check_solvable()?;
        if !omega.matches(f) {
            return Err(SegError::DimensionMismatch("mask and image sizes differ".into()));
        }
        let (w, h) = (f.width(), f.height());
        let kernel = match &p.operator {
            OperatorKind::Identity => None,
            OperatorKind::Convolution(k) => Some(k),
        };
        let blur = kernel.map(|k| FftConvolution::new(k, w, h));
        let data_rhs: Vec<Vec<f64>> = f
            .planes()
            .map(|plane| {
                let wf: Vec<f64> = plane.iter().zip(omega.data()).map(|(v, o)| v * o).collect();
                let atwf = match &blur {
                    Some(b) => b.adjoint(&wf),
                    None => wf,
                };
                atwf.into_iter().map(|v| p.mu * v).collect()
            })
            .collect();
        let backend = if omega.is_full() {
            let op = match kernel {
                Some(k) => SpectralOp::Convolution(k),
                None => SpectralOp::Identity,
            };
            Backend::Spectral(SpectralSystem::new(p.mu, p.lambda, op, w, h)?)
        } else {
            if let Some(k) = kernel {
                if k.width() > w || k.height() > h {
                    return Err(SegError::InvalidInput("kernel larger than image".into()));
                }
            }
            Backend::Masked { blur }
        };
        Ok(Self {
            f,
            omega,
            mu: p.mu,
            lambda: p.lambda,
            cg_tol: p.cg_tol,
            cg_max_iter: p.cg_max_iter,
            backend,
            data_rhs,
        })
    }

    /// Same system, always solved by conjugate gradients. Useful to cross-check
    /// the spectral path on fully observed data.
    pub fn iterative(f: &'a ImageField, omega: &'a ObservationMask, p: &ModelParams) -> Result<Self> {
        let mut r = Self::new(f, omega, p)?;
        if let Backend::Spectral(_) = r.backend {
            let blur = match &p.operator {
                OperatorKind::Identity => None,
                OperatorKind::Convolution(k) => Some(FftConvolution::new(k, f.width(), f.height())),
            };
            r.backend = Backend::Masked { blur };
        }
        Ok(r)
    }

    /// Minimizer over `g` for fixed memberships and codebook.
    ///
    /// `previous` warm-starts the masked solver; since conjugate gradients
    /// only decrease the quadratic, the result never has higher energy than it.
    pub fn update(&self, u: &Membership, c: &Codebook, previous: Option<&ImageField>) -> Result<GStep> {
        let f = self.f;
        let (w, h, nc) = (f.width(), f.height(), f.channels());
        if u.width() != w || u.height() != h {
            return Err(SegError::DimensionMismatch("membership and image sizes differ".into()));
        }
        if c.phases() != u.phases() || c.channels() != nc {
            return Err(SegError::DimensionMismatch(format!(
                "codebook {}x{} for {} phases and {nc} channels",
                c.phases(),
                c.channels(),
                u.phases()
            )));
        }
        if let Some(prev) = previous {
            if !prev.same_shape(f) {
                return Err(SegError::DimensionMismatch("previous g has the wrong shape".into()));
            }
        }
        let blends: Vec<Vec<f64>> = (0..nc).map(|j| phase_blend(u, c, j)).collect();

        let solved: Vec<(Vec<f64>, Option<CgReport>)> = (0..nc)
            .into_par_iter()
            .map(|j| self.solve_channel(j, &blends[j], previous.map(|g| g.plane(j))))
            .collect::<Result<_>>()?;

        let mut data = Vec::with_capacity(w * h * nc);
        let mut reports = Vec::new();
        for (plane, report) in solved {
            data.extend(plane);
            reports.extend(report);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SegError::NonFinite { stage: "g-update", iteration: 0 });
        }
        Ok(GStep { g: ImageField::from_raw(w, h, nc, data), cg: reports })
    }

    fn solve_channel(&self, j: usize, blend: &[f64], previous: Option<&[f64]>) -> Result<(Vec<f64>, Option<CgReport>)> {
        let omega = self.omega.data();
        let rhs: Vec<f64> = self.data_rhs[j]
            .iter()
            .zip(blend)
            .zip(omega)
            .map(|((d, m), o)| d + self.lambda * o * m)
            .collect();
        match &self.backend {
            Backend::Spectral(sys) => Ok((sys.solve(&rhs)?, None)),
            Backend::Masked { blur } => {
                let x0: Vec<f64> = match (blur, previous) {
                    // blurred: hidden pixels are coupled to observed ones, keep the full warm start
                    (Some(_), Some(prev)) => prev.to_vec(),
                    (_, prev) => (0..blend.len())
                        .map(|i| match prev {
                            Some(p) if omega[i] != 0.0 => p[i],
                            _ if omega[i] != 0.0 => self.f.plane(j)[i],
                            _ => blend[i],
                        })
                        .collect(),
                };
                let (mu, lambda) = (self.mu, self.lambda);
                let matvec = |x: &[f64]| -> Vec<f64> {
                    match blur {
                        Some(b) => {
                            let ax = b.apply(x);
                            let wax: Vec<f64> = ax.iter().zip(omega).map(|(v, o)| v * o).collect();
                            b.adjoint(&wax)
                                .iter()
                                .zip(x)
                                .zip(omega)
                                .map(|((a, xi), o)| mu * a + lambda * o * xi)
                                .collect()
                        }
                        None => x.iter().zip(omega).map(|(xi, o)| (mu + lambda) * o * xi).collect(),
                    }
                };
                let out = solve_cg(matvec, &rhs, Some(&x0), self.cg_tol, self.cg_max_iter);
                if !out.converged {
                    log::warn!(
                        "g-update CG on channel {j} stopped after {} iterations with relative residual {:.3e}",
                        out.iterations,
                        out.residual
                    );
                }
                let report = CgReport { channel: j, iterations: out.iterations, residual: out.residual, converged: out.converged };
                Ok((out.x, Some(report)))
            }
        }
    }
}

/// `Σ_i c_{i,j} u_i(x)` for channel `j`.
pub fn phase_blend(u: &Membership, c: &Codebook, channel: usize) -> Vec<f64> {
    let mut out = vec![0.0; u.pixels()];
    for i in 0..u.phases() {
        let ci = c.get(i, channel);
        for (o, ui) in out.iter_mut().zip(u.phase(i)) {
            *o += ci * ui;
        }
    }
    out
}

/// One-shot g-update; see [`Restorer::update`].
pub fn update_g(
    f: &ImageField,
    u: &Membership,
    c: &Codebook,
    omega: &ObservationMask,
    p: &ModelParams,
    previous: Option<&ImageField>,
) -> Result<GStep> {
    Restorer::new(f, omega, p)?.update(u, c, previous)
}

/// A perturbation that failed to increase the energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub trial: usize,
    pub energy_at_g: f64,
    pub energy_perturbed: f64,
    pub direction: Vec<f64>,
}

/// Probes `trials` random directions of norm `1e-3` supported on observed
/// pixels and checks that each strictly increases the energy.
#[allow(clippy::too_many_arguments)]
pub fn verify_unique_minimizer(
    g: &ImageField,
    f: &ImageField,
    u: &Membership,
    c: &Codebook,
    omega: &ObservationMask,
    p: &ModelParams,
    trials: usize,
    seed: u64,
) -> Result<std::result::Result<(), Counterexample>> {
    const STEP: f64 = 1e-3;
    p.check_solvable()?;
    let base = energy(f, g, u, c, omega, p)?;
    let e0 = base.restoration + base.segmentation;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.pixels();
    let mut probe = g.clone();
    for trial in 0..trials {
        let mut h: Vec<f64> = (0..g.data().len())
            .map(|i| if omega.is_observed(i % n) { StandardNormal.sample(&mut rng) } else { 0.0 })
            .collect();
        let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(Ok(()));
        }
        h.iter_mut().for_each(|v| *v *= STEP / norm);
        for ((d, gv), hv) in probe.data_mut().iter_mut().zip(g.data()).zip(&h) {
            *d = gv + hv;
        }
        let e = energy(f, &probe, u, c, omega, p)?;
        let e1 = e.restoration + e.segmentation;
        if !(e1 > e0) {
            return Ok(Err(Counterexample { trial, energy_at_g: e0, energy_perturbed: e1, direction: h }));
        }
    }
    Ok(Ok(()))
}

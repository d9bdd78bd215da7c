//! Periodic finite-difference and blur operators, and the two linear
//! back-ends used by the restoration and ADMM steps.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, SegError};
use crate::types::{Kernel, OperatorKind};

/// Forward-difference gradient of one plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl GradientField {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, dx: vec![0.0; n], dy: vec![0.0; n] }
    }

    pub fn is_finite(&self) -> bool {
        self.dx.iter().chain(&self.dy).all(|v| v.is_finite())
    }

    /// Sum over pixels of the Euclidean magnitude `sqrt(dx² + dy²)`.
    pub fn isotropic_norm(&self) -> f64 {
        self.dx.iter().zip(&self.dy).map(|(a, b)| a.hypot(*b)).sum()
    }
}

fn check_plane(len: usize, width: usize, height: usize) -> Result<()> {
    if width < 2 || height < 2 {
        return Err(SegError::InvalidInput(format!("plane must be at least 2x2, got {width}x{height}")));
    }
    if len != width * height {
        return Err(SegError::DimensionMismatch(format!("plane {width}x{height} with {len} values")));
    }
    Ok(())
}

/// Forward differences with periodic wrap.
pub fn grad(plane: &[f64], width: usize, height: usize) -> Result<GradientField> {
    check_plane(plane.len(), width, height)?;
    let mut g = GradientField::zeros(width, height);
    grad_into(plane, &mut g);
    Ok(g)
}

pub(crate) fn grad_into(plane: &[f64], out: &mut GradientField) {
    let (w, h) = (out.width, out.height);
    for y in 0..h {
        let row = y * w;
        let down = ((y + 1) % h) * w;
        for x in 0..w {
            let right = if x + 1 == w { row } else { row + x + 1 };
            let p = plane[row + x];
            out.dx[row + x] = plane[right] - p;
            out.dy[row + x] = plane[down + x] - p;
        }
    }
}

/// Discrete divergence, the exact negative adjoint of [`grad`].
pub fn div(field: &GradientField) -> Vec<f64> {
    let mut out = vec![0.0; field.width * field.height];
    div_into(&field.dx, &field.dy, field.width, field.height, &mut out);
    out
}

pub(crate) fn div_into(qx: &[f64], qy: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        let row = y * w;
        let up = ((y + h - 1) % h) * w;
        for x in 0..w {
            let left = if x == 0 { row + w - 1 } else { row + x - 1 };
            out[row + x] = qx[row + x] - qx[left] + qy[row + x] - qy[up + x];
        }
    }
}

/// The degradation operator `A` with periodic boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    pub kind: OperatorKind,
}

impl LinearOperator {
    pub fn new(kind: OperatorKind) -> Self {
        Self { kind }
    }

    pub fn identity() -> Self {
        Self { kind: OperatorKind::Identity }
    }

    pub fn convolution(kernel: Kernel) -> Self {
        Self { kind: OperatorKind::Convolution(kernel) }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, OperatorKind::Identity)
    }

    pub fn apply(&self, x: &[f64], width: usize, height: usize) -> Result<Vec<f64>> {
        match &self.kind {
            OperatorKind::Identity => Ok(x.to_vec()),
            OperatorKind::Convolution(k) => circular_convolve(x, width, height, k),
        }
    }

    pub fn adjoint(&self, y: &[f64], width: usize, height: usize) -> Result<Vec<f64>> {
        match &self.kind {
            OperatorKind::Identity => Ok(y.to_vec()),
            OperatorKind::Convolution(k) => circular_convolve(y, width, height, &k.flipped()),
        }
    }

    /// The adjoint as an operator in its own right.
    pub fn transposed(&self) -> Self {
        match &self.kind {
            OperatorKind::Identity => Self::identity(),
            OperatorKind::Convolution(k) => Self::convolution(k.flipped()),
        }
    }
}

/// `out(p) = Σ_q k(q) x(p − q)` with kernel offsets taken relative to its center.
fn circular_convolve(x: &[f64], w: usize, h: usize, k: &Kernel) -> Result<Vec<f64>> {
    if x.len() != w * h {
        return Err(SegError::DimensionMismatch(format!("plane {w}x{h} with {} values", x.len())));
    }
    if k.width() > w || k.height() > h {
        return Err(SegError::InvalidInput(format!(
            "kernel {}x{} larger than plane {w}x{h}",
            k.width(),
            k.height()
        )));
    }
    let (cx, cy) = k.center();
    let taps: Vec<(usize, usize, f64)> = (0..k.height())
        .flat_map(|b| (0..k.width()).map(move |a| (a, b)))
        .filter_map(|(a, b)| {
            let t = k.tap(a, b);
            // source offset -(a - cx), reduced mod w
            (t != 0.0).then(|| ((cx + w - a) % w, (cy + h - b) % h, t))
        })
        .collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for px in 0..w {
            let mut acc = 0.0;
            for &(ox, oy, t) in &taps {
                let sx = (px + ox) % w;
                let sy = (y + oy) % h;
                acc += t * x[sy * w + sx];
            }
            out[y * w + px] = acc;
        }
    }
    Ok(out)
}

/// Cached 2-D FFT plans for one plane size.
#[derive(Clone)]
pub struct Fourier2d {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fourier2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fourier2d({}x{})", self.width, self.height)
    }
}

impl Fourier2d {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (w, h) = (self.width, self.height);
        let (row, col) = if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row_fwd, &self.col_fwd) };
        row.process(buf);
        let mut t = vec![Complex64::new(0.0, 0.0); w * h];
        for y in 0..h {
            for x in 0..w {
                t[x * h + y] = buf[y * w + x];
            }
        }
        col.process(&mut t);
        for x in 0..w {
            for y in 0..h {
                buf[y * w + x] = t[x * h + y];
            }
        }
    }

    pub fn forward(&self, plane: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Normalized inverse transform, keeping the real part.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spectrum, true);
        let scale = 1.0 / (self.width * self.height) as f64;
        spectrum.iter().map(|c| c.re * scale).collect()
    }

    /// Transfer function of a circular convolution with `kernel`.
    pub fn kernel_symbol(&self, kernel: &Kernel) -> Vec<Complex64> {
        let (w, h) = (self.width, self.height);
        let (cx, cy) = kernel.center();
        let mut embedded = vec![0.0; w * h];
        for b in 0..kernel.height() {
            for a in 0..kernel.width() {
                let x = (a + w - cx) % w;
                let y = (b + h - cy) % h;
                embedded[y * w + x] += kernel.tap(a, b);
            }
        }
        self.forward(&embedded)
    }

    /// Eigenvalues of `−Δ = ∇ᵀ∇` for the periodic forward-difference gradient.
    pub fn laplacian_symbol(&self) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let sx: Vec<f64> = (0..w).map(|k| (2.0 * (std::f64::consts::PI * k as f64 / w as f64).sin()).powi(2)).collect();
        let sy: Vec<f64> = (0..h).map(|k| (2.0 * (std::f64::consts::PI * k as f64 / h as f64).sin()).powi(2)).collect();
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = sx[x] + sy[y];
            }
        }
        out
    }
}

/// Operator `O` whose normal matrix `OᵀO` the spectral solver inverts.
#[derive(Debug, Clone, Copy)]
pub enum SpectralOp<'a> {
    Identity,
    Convolution(&'a Kernel),
    /// The forward-difference gradient, so `OᵀO = −Δ`.
    Laplacian,
}

/// Precomputed solver for `(a0·OᵀO + a1·I) x = rhs` on periodic planes.
#[derive(Debug, Clone)]
pub struct SpectralSystem {
    fourier: Fourier2d,
    denom: Vec<f64>,
    check: Option<(f64, f64, ResidualOp)>,
}

#[derive(Debug, Clone)]
enum ResidualOp {
    Identity,
    Convolution(Kernel),
    Laplacian,
}

impl SpectralSystem {
    pub fn new(a0: f64, a1: f64, op: SpectralOp<'_>, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(SegError::InvalidInput("empty plane".into()));
        }
        let fourier = Fourier2d::new(width, height);
        let symbol_sq: Vec<f64> = match op {
            SpectralOp::Identity => vec![1.0; width * height],
            SpectralOp::Convolution(k) => {
                if k.width() > width || k.height() > height {
                    return Err(SegError::InvalidInput(format!(
                        "kernel {}x{} larger than plane {width}x{height}",
                        k.width(),
                        k.height()
                    )));
                }
                fourier.kernel_symbol(k).iter().map(|c| c.norm_sqr()).collect()
            }
            SpectralOp::Laplacian => fourier.laplacian_symbol(),
        };
        let denom: Vec<f64> = symbol_sq.iter().map(|s| a0 * s + a1).collect();
        let scale = denom.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if let Some(i) = denom.iter().position(|&d| !(d > scale * 1e-14) || !d.is_finite()) {
            return Err(SegError::SingularSystem { kx: i % width, ky: i / width, value: denom[i] });
        }
        let check = cfg!(debug_assertions).then(|| {
            let op = match op {
                SpectralOp::Identity => ResidualOp::Identity,
                SpectralOp::Convolution(k) => ResidualOp::Convolution(k.clone()),
                SpectralOp::Laplacian => ResidualOp::Laplacian,
            };
            (a0, a1, op)
        });
        Ok(Self { fourier, denom, check })
    }

    pub fn width(&self) -> usize {
        self.fourier.width
    }

    pub fn height(&self) -> usize {
        self.fourier.height
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let (w, h) = (self.width(), self.height());
        if rhs.len() != w * h {
            return Err(SegError::DimensionMismatch(format!("rhs has {} values for {w}x{h}", rhs.len())));
        }
        let mut spec = self.fourier.forward(rhs);
        for (c, d) in spec.iter_mut().zip(&self.denom) {
            *c /= *d;
        }
        let x = self.fourier.inverse_real(spec);
        if let Some((a0, a1, op)) = &self.check {
            let res = self.residual(*a0, *a1, op, &x, rhs);
            let bound = 1e-8 * rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            debug_assert!(res <= bound, "spectral residual {res} exceeds {bound}");
        }
        Ok(x)
    }

    fn residual(&self, a0: f64, a1: f64, op: &ResidualOp, x: &[f64], rhs: &[f64]) -> f64 {
        let (w, h) = (self.width(), self.height());
        let normal: Vec<f64> = match op {
            ResidualOp::Identity => x.to_vec(),
            ResidualOp::Convolution(k) => {
                let a = LinearOperator::convolution(k.clone());
                let ax = a.apply(x, w, h).expect("shape checked");
                a.adjoint(&ax, w, h).expect("shape checked")
            }
            ResidualOp::Laplacian => {
                if w < 2 || h < 2 {
                    return 0.0;
                }
                let g = grad(x, w, h).expect("shape checked");
                div(&g).into_iter().map(|v| -v).collect()
            }
        };
        normal
            .iter()
            .zip(x)
            .zip(rhs)
            .map(|((n, xi), r)| (a0 * n + a1 * xi - r).abs())
            .fold(0.0, f64::max)
    }
}

/// Solves `(a0·OᵀO + a1·I) x = rhs` exactly in the Fourier domain.
pub fn solve_spectral(a0: f64, a1: f64, op: SpectralOp<'_>, rhs: &[f64], width: usize, height: usize) -> Result<Vec<f64>> {
    SpectralSystem::new(a0, a1, op, width, height)?.solve(rhs)
}

/// FFT-backed circular convolution for repeated application on one plane size.
#[derive(Debug, Clone)]
pub struct FftConvolution {
    fourier: Fourier2d,
    symbol: Vec<Complex64>,
}

impl FftConvolution {
    pub fn new(kernel: &Kernel, width: usize, height: usize) -> Self {
        let fourier = Fourier2d::new(width, height);
        let symbol = fourier.kernel_symbol(kernel);
        Self { fourier, symbol }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.fourier.forward(x);
        s.iter_mut().zip(&self.symbol).for_each(|(v, k)| *v *= k);
        self.fourier.inverse_real(s)
    }

    pub fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut s = self.fourier.forward(y);
        s.iter_mut().zip(&self.symbol).for_each(|(v, k)| *v *= k.conj());
        self.fourier.inverse_real(s)
    }
}

/// Result of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `‖matvec(x) − rhs‖₂ / ‖rhs‖₂`.
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unpreconditioned conjugate gradients for a symmetric positive semi-definite
/// `matvec`, started from `x0` (zero when absent).
///
/// Every iterate decreases the quadratic `½xᵀMx − bᵀx`, so a warm start is never undone.
pub fn solve_cg<F>(mut matvec: F, rhs: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> CgOutcome
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = rhs.len();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let b_norm = dot(rhs, rhs).sqrt();
    let target = tol * b_norm.max(f64::MIN_POSITIVE);
    let mx = matvec(&x);
    let mut r: Vec<f64> = rhs.iter().zip(&mx).map(|(b, m)| b - m).collect();
    let mut rr = dot(&r, &r);
    let rel = |rr: f64| if b_norm > 0.0 { rr.sqrt() / b_norm } else { rr.sqrt() };
    if rr.sqrt() <= target {
        return CgOutcome { x, iterations: 0, residual: rel(rr), converged: true };
    }
    let mut p = r.clone();
    for it in 1..=max_iter {
        let mp = matvec(&p);
        let pmp = dot(&p, &mp);
        if !(pmp > 0.0) {
            // direction in the null space; nothing more to gain
            return CgOutcome { x, iterations: it - 1, residual: rel(rr), converged: rr.sqrt() <= target };
        }
        let alpha = rr / pmp;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&mp).for_each(|(ri, mi)| *ri -= alpha * mi);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            return CgOutcome { x, iterations: it, residual: rel(rr_new), converged: true };
        }
        let beta = rr_new / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_new;
    }
    CgOutcome { x, iterations: max_iter, residual: rel(rr), converged: false }
}

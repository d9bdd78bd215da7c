//! The membership step: ADMM on
//!
//! ```text
//! min λ⟨v, s⟩ + ‖d‖₁ + ι_S(u)   s.t.  ∇v = d,  v = u
//! ```
//!
//! with isotropic shrinkage for `d`, a spectral `(I − Δ)` solve for `v`
//! and per-pixel Euclidean projection onto the unit simplex for `u`.

use rayon::prelude::*;

use crate::error::{Result, SegError};
use crate::operators::{div_into, grad_into, GradientField, SpectralOp, SpectralSystem};
use crate::types::{Codebook, ImageField, Membership, ModelParams, ObservationMask};

/// Per-pixel, per-phase data cost `s_i(x) = ω(x) Σ_j (g_j(x) − c_{i,j})²`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryCost {
    width: usize,
    height: usize,
    phases: usize,
    data: Vec<f64>,
}

impl UnaryCost {
    pub fn new(width: usize, height: usize, phases: usize, data: Vec<f64>) -> Result<Self> {
        if width * height * phases != data.len() || phases < 2 {
            return Err(SegError::DimensionMismatch(format!("unary cost {width}x{height}x{phases} with {} values", data.len())));
        }
        if data.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(SegError::InvalidInput("unary costs must be finite and non-negative".into()));
        }
        Ok(Self { width, height, phases, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn phase(&self, i: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `⟨u, s⟩` summed over phases and pixels.
    pub fn pairing(&self, u: &Membership) -> f64 {
        self.data.iter().zip(u.data()).map(|(s, u)| s * u).sum()
    }
}

pub fn build_unary(g: &ImageField, c: &Codebook, omega: &ObservationMask) -> Result<UnaryCost> {
    if !omega.matches(g) || c.channels() != g.channels() {
        return Err(SegError::DimensionMismatch("image, codebook and mask shapes differ".into()));
    }
    let n = g.pixels();
    let k = c.phases();
    let mut data = vec![0.0; n * k];
    for i in 0..k {
        let out = &mut data[i * n..(i + 1) * n];
        for j in 0..g.channels() {
            let cij = c.get(i, j);
            for (o, gv) in out.iter_mut().zip(g.plane(j)) {
                *o += (gv - cij).powi(2);
            }
        }
        out.iter_mut().zip(omega.data()).for_each(|(o, w)| *o *= w);
    }
    Ok(UnaryCost { width: g.width(), height: g.height(), phases: k, data })
}

/// Euclidean projection onto `{u : Σ u_i = 1, u ≥ 0}` by the sorted-threshold rule.
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    project_simplex_into(y, &mut out, &mut Vec::with_capacity(y.len()));
    out
}

fn project_simplex_into(y: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend_from_slice(y);
    scratch.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &v) in scratch.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (j + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    for (o, &v) in out.iter_mut().zip(y) {
        *o = (v - theta).max(0.0);
    }
}

/// Isotropic soft threshold of a 2-vector.
pub fn shrink(x: [f64; 2], t: f64) -> [f64; 2] {
    let norm = x[0].hypot(x[1]);
    if norm <= t || norm == 0.0 {
        return [0.0, 0.0];
    }
    let scale = (norm - t) / norm;
    [x[0] * scale, x[1] * scale]
}

/// Isotropic total variation `Σ_i Σ_x |∇u_i(x)|` of all phases.
pub fn total_variation(u: &Membership) -> f64 {
    let (w, h) = (u.width(), u.height());
    let mut g = GradientField::zeros(w, h);
    (0..u.phases())
        .map(|i| {
            grad_into(u.phase(i), &mut g);
            g.isotropic_norm()
        })
        .sum()
}

/// `λ⟨u, s⟩ + TV(u)`, the part of the energy that depends on `u`.
pub fn membership_objective(s: &UnaryCost, u: &Membership, lambda: f64) -> f64 {
    lambda * s.pairing(u) + total_variation(u)
}

/// Splitting variables and scaled duals carried between ADMM calls.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub v: Vec<f64>,
    pub d: Vec<GradientField>,
    pub b_d: Vec<GradientField>,
    pub b_u: Vec<f64>,
    pub iteration: usize,
}

impl AdmmState {
    /// Fresh state with `v = u`, `d = ∇u` and zero duals.
    pub fn new(u: &Membership) -> Self {
        let (w, h) = (u.width(), u.height());
        let d = (0..u.phases())
            .map(|i| {
                let mut g = GradientField::zeros(w, h);
                grad_into(u.phase(i), &mut g);
                g
            })
            .collect();
        Self {
            v: u.data().to_vec(),
            d,
            b_d: (0..u.phases()).map(|_| GradientField::zeros(w, h)).collect(),
            b_u: vec![0.0; u.data().len()],
            iteration: 0,
        }
    }

    pub fn fits(&self, u: &Membership) -> bool {
        self.v.len() == u.data().len()
            && self.d.len() == u.phases()
            && self.d.first().is_some_and(|g| g.width == u.width() && g.height == u.height())
    }

    fn is_finite(&self) -> bool {
        self.v.iter().chain(&self.b_u).all(|x| x.is_finite())
            && self.d.iter().chain(&self.b_d).all(GradientField::is_finite)
    }
}

/// Outcome of one membership solve.
#[derive(Debug, Clone)]
pub struct UStep {
    pub u: Membership,
    pub iterations: usize,
    pub converged: bool,
    /// `max(‖u^{k+1} − u^k‖∞, ‖v − u‖∞)` at exit.
    pub change: f64,
    /// `‖∇v − d‖∞` at exit.
    pub split_residual: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    /// The ADMM iterate raised the objective and the input was kept.
    pub kept_previous: bool,
}

struct InnerStats {
    iterations: usize,
    converged: bool,
    change: f64,
    split_residual: f64,
}

/// ADMM solver with the `(I − Δ)` system factored once per image size.
#[derive(Debug, Clone)]
pub struct AdmmSolver {
    width: usize,
    height: usize,
    system: SpectralSystem,
    lambda: f64,
    sigma: f64,
    max_inner: usize,
    inner_tol: f64,
}

impl AdmmSolver {
    pub fn new(width: usize, height: usize, p: &ModelParams) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(SegError::InvalidInput(format!("image must be at least 2x2, got {width}x{height}")));
        }
        if !(p.sigma > 0.0) || !(p.lambda > 0.0) {
            return Err(SegError::InvalidInput("sigma and lambda must be positive".into()));
        }
        Ok(Self {
            width,
            height,
            system: SpectralSystem::new(1.0, 1.0, SpectralOp::Laplacian, width, height)?,
            lambda: p.lambda,
            sigma: p.sigma,
            max_inner: p.max_inner,
            inner_tol: p.inner_tol,
        })
    }

    /// Runs ADMM from `u_init`, continuing from `state`.
    ///
    /// If the iterate would raise `λ⟨u, s⟩ + TV(u)` above its value at
    /// `u_init` the solver runs a second budget, then falls back to `u_init`.
    pub fn solve(&self, s: &UnaryCost, u_init: &Membership, state: &mut AdmmState) -> Result<UStep> {
        let (w, h) = (self.width, self.height);
        if s.width() != w || s.height() != h || u_init.width() != w || u_init.height() != h || s.phases() != u_init.phases() {
            return Err(SegError::DimensionMismatch("unary cost, membership and solver shapes differ".into()));
        }
        if !state.fits(u_init) {
            *state = AdmmState::new(u_init);
        }
        let before = membership_objective(s, u_init, self.lambda);
        let mut u = u_init.clone();
        let mut step = self.iterate(s, &mut u, state, self.max_inner)?;
        let mut after = membership_objective(s, &u, self.lambda);
        if after > before {
            let more = self.iterate(s, &mut u, state, self.max_inner)?;
            step.iterations += more.iterations;
            step.converged = more.converged;
            step.change = more.change;
            step.split_residual = more.split_residual;
            after = membership_objective(s, &u, self.lambda);
        }
        let kept_previous = after > before;
        if kept_previous {
            log::debug!("ADMM raised the membership objective ({before:.6e} -> {after:.6e}); keeping previous memberships");
            u = u_init.clone();
            after = before;
        }
        Ok(UStep {
            u,
            iterations: step.iterations,
            converged: step.converged,
            change: step.change,
            split_residual: step.split_residual,
            objective_before: before,
            objective_after: after,
            kept_previous,
        })
    }

    fn iterate(&self, s: &UnaryCost, u: &mut Membership, st: &mut AdmmState, budget: usize) -> Result<InnerStats> {
        let (w, h) = (self.width, self.height);
        let n = w * h;
        let k = u.phases();
        let shrink_t = 1.0 / (2.0 * self.sigma);
        let data_scale = self.lambda / (2.0 * self.sigma);
        let mut change = f64::INFINITY;
        let mut split_residual = f64::INFINITY;
        let mut iterations = 0;
        let mut scratch = Vec::with_capacity(k);
        let mut y = vec![0.0; k];
        let mut out = vec![0.0; k];

        for _ in 0..budget {
            iterations += 1;
            st.iteration += 1;
            // v, d and b_d updates are independent per phase
            let phase_res: Vec<f64> = st
                .v
                .par_chunks_mut(n)
                .zip(st.d.par_iter_mut())
                .zip(st.b_d.par_iter_mut())
                .zip(st.b_u.par_chunks(n))
                .enumerate()
                .map(|(i, (((v, d), bd), bu))| -> Result<f64> {
                    let ui = u.phase(i);
                    let si = s.phase(i);
                    let qx: Vec<f64> = bd.dx.iter().zip(&d.dx).map(|(a, b)| a - b).collect();
                    let qy: Vec<f64> = bd.dy.iter().zip(&d.dy).map(|(a, b)| a - b).collect();
                    let mut rhs = vec![0.0; n];
                    div_into(&qx, &qy, w, h, &mut rhs);
                    for p in 0..n {
                        rhs[p] += ui[p] - bu[p] - data_scale * si[p];
                    }
                    let sol = self.system.solve(&rhs)?;
                    v.copy_from_slice(&sol);
                    let mut gv = GradientField::zeros(w, h);
                    grad_into(v, &mut gv);
                    let mut res = 0.0f64;
                    for p in 0..n {
                        let [sx, sy] = shrink([bd.dx[p] + gv.dx[p], bd.dy[p] + gv.dy[p]], shrink_t);
                        d.dx[p] = sx;
                        d.dy[p] = sy;
                        let rx = gv.dx[p] - sx;
                        let ry = gv.dy[p] - sy;
                        bd.dx[p] += rx;
                        bd.dy[p] += ry;
                        res = res.max(rx.abs()).max(ry.abs());
                    }
                    Ok(res)
                })
                .collect::<Result<_>>()?;
            split_residual = phase_res.into_iter().fold(0.0, f64::max);

            change = 0.0;
            let ud = u.data_mut();
            for p in 0..n {
                for i in 0..k {
                    y[i] = st.b_u[i * n + p] + st.v[i * n + p];
                }
                project_simplex_into(&y, &mut out, &mut scratch);
                for i in 0..k {
                    let idx = i * n + p;
                    change = change.max((out[i] - ud[idx]).abs());
                    ud[idx] = out[i];
                    let gap = st.v[idx] - out[i];
                    st.b_u[idx] += gap;
                    change = change.max(gap.abs());
                }
            }
            if !change.is_finite() || !st.is_finite() {
                return Err(SegError::NonFinite { stage: "u-update", iteration: st.iteration });
            }
            if change < self.inner_tol {
                break;
            }
        }
        Ok(InnerStats { iterations, converged: change < self.inner_tol, change, split_residual })
    }
}

/// One-shot membership update from a fresh ADMM state.
pub fn update_u(s: &UnaryCost, u_init: &Membership, p: &ModelParams) -> Result<UStep> {
    let solver = AdmmSolver::new(s.width(), s.height(), p)?;
    let mut state = AdmmState::new(u_init);
    solver.solve(s, u_init, &mut state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{binarize, Validate};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unary_zero_at_center_and_masked() {
        let g = ImageField::new(2, 1, 1, vec![0.3, 0.9]).unwrap();
        let c = Codebook::gray(&[0.3, 0.5]);
        let omega = ObservationMask::from_bools(2, 1, &[true, false]).unwrap();
        let s = build_unary(&g, &c, &omega).unwrap();
        assert_eq!(s.phase(0), &[0.0, 0.0]);
        assert_relative_eq!(s.phase(1)[0], 0.04, epsilon = 1e-15);
        assert_eq!(s.phase(1)[1], 0.0);
    }

    #[test]
    fn unary_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = ImageField::new(4, 4, 3, (0..48).map(|_| rng.random()).collect()).unwrap();
        let c = Codebook::new(3, 3, (0..9).map(|_| rng.random()).collect()).unwrap();
        let omega = ObservationMask::from_bools(4, 4, &(0..16).map(|p| p % 5 != 2).collect::<Vec<_>>()).unwrap();
        let s = build_unary(&g, &c, &omega).unwrap();
        for i in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    let mut acc = 0.0;
                    for j in 0..3 {
                        acc += (g.get(x, y, j) - c.get(i, j)).powi(2);
                    }
                    acc *= omega.data()[y * 4 + x];
                    assert_relative_eq!(s.phase(i)[y * 4 + x], acc, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[1.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0]);
        for v in project_simplex(&[0.5, 0.5, 0.5]) {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = project_simplex(&[1.2, -0.3, 0.4]);
        assert_relative_eq!(p[0], 0.9, epsilon = 1e-15);
        assert_eq!(p[1], 0.0);
        assert_relative_eq!(p[2], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn shrink_examples() {
        assert_eq!(shrink([0.0, 0.0], 0.7), [0.0, 0.0]);
        let [a, b] = shrink([3.0, 4.0], 1.0);
        assert_relative_eq!(a, 2.4, epsilon = 1e-15);
        assert_relative_eq!(b, 3.2, epsilon = 1e-15);
        assert_eq!(shrink([0.1, 0.0], 0.25), [0.0, 0.0]);
    }

    fn params(lambda: f64) -> ModelParams {
        ModelParams { lambda, sigma: 2.0, ..ModelParams::default() }
    }

    #[test]
    fn zero_cost_keeps_uniform() {
        let s = UnaryCost::new(6, 5, 3, vec![0.0; 90]).unwrap();
        let u0 = Membership::uniform(6, 5, 3);
        let out = update_u(&s, &u0, &params(10.0)).unwrap();
        for v in out.u.data() {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dominant_unary_selects_phase() {
        let n = 64;
        let mut data = vec![0.0; 2 * n];
        data[n..].iter_mut().for_each(|v| *v = 1.0);
        let s = UnaryCost::new(8, 8, 2, data).unwrap();
        let out = update_u(&s, &Membership::uniform(8, 8, 2), &params(50.0)).unwrap();
        assert!(binarize(&out.u).labels().iter().all(|&l| l == 0));
        assert!(out.u.validate().is_ok());
    }

    #[test]
    fn output_is_on_simplex_and_constraints_shrink() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (w, h, k) = (12, 10, 3);
        let s = UnaryCost::new(w, h, k, (0..w * h * k).map(|_| rng.random::<f64>()).collect()).unwrap();
        let p = ModelParams { lambda: 4.0, max_inner: 2000, inner_tol: 1e-5, ..ModelParams::default() };
        let out = update_u(&s, &Membership::uniform(w, h, k), &p).unwrap();
        assert!(out.converged);
        for px in 0..w * h {
            let row = out.u.at(px);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(out.split_residual < 10.0 * p.inner_tol);
        assert!(out.objective_after <= out.objective_before);
    }

    #[test]
    fn phase_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h, k) = (7, 6, 3);
        let n = w * h;
        let raw: Vec<f64> = (0..n * k).map(|_| rng.random::<f64>()).collect();
        let perm = [2usize, 0, 1];
        let permuted: Vec<f64> = perm.iter().flat_map(|&i| raw[i * n..(i + 1) * n].to_vec()).collect();
        let p = params(3.0);
        let a = update_u(&UnaryCost::new(w, h, k, raw).unwrap(), &Membership::uniform(w, h, k), &p).unwrap();
        let b = update_u(&UnaryCost::new(w, h, k, permuted).unwrap(), &Membership::uniform(w, h, k), &p).unwrap();
        for (slot, &i) in perm.iter().enumerate() {
            for px in 0..n {
                assert!((b.u.phase(slot)[px] - a.u.phase(i)[px]).abs() < 1e-12);
            }
        }
    }

    /// Brute-force projection: try every support set, keep the closest feasible point.
    fn active_set_projection(y: &[f64]) -> Vec<f64> {
        let k = y.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << k) {
            let support: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
            let shift = (support.iter().map(|&i| y[i]).sum::<f64>() - 1.0) / support.len() as f64;
            let mut x = vec![0.0; k];
            let mut feasible = true;
            for &i in &support {
                x[i] = y[i] - shift;
                feasible &= x[i] >= 0.0;
            }
            if !feasible {
                continue;
            }
            let dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, x));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn projection_matches_active_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let k = rng.random_range(2..=6);
            let y: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let fast = project_simplex(&y);
            let slow = active_set_projection(&y);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn projection_lands_on_simplex(y in proptest::collection::vec(-10.0f64..10.0, 2..8)) {
            let p = project_simplex(&y);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn shrink_never_grows(x in -5.0f64..5.0, y in -5.0f64..5.0, t in 0.0f64..3.0) {
            let [a, b] = shrink([x, y], t);
            prop_assert!(a.hypot(b) <= x.hypot(y) + 1e-15);
            prop_assert!((a.hypot(b) - (x.hypot(y) - t).max(0.0)).abs() < 1e-12);
        }
    }
}

//! Outer alternating minimization over `g`, `c` and `u`, with energy
//! bookkeeping that makes the monotone-descent property checkable.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cluster::{fcm_init, update_c};
use crate::error::{Result, SegError};
use crate::operators::LinearOperator;
use crate::restore::Restorer;
use crate::segment::{build_unary, total_variation, AdmmSolver, AdmmState};
use crate::types::{
    binarize, Codebook, Fidelity, ImageField, LabelMap, Membership, ModelParams, ObservationMask, OperatorKind, Validate,
};

/// Energy split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// `μ Φ(f, Ag)` over observed pixels.
    pub restoration: f64,
    /// `λ Σ_i Σ_j ω (g_j − c_{i,j})² u_i`.
    pub segmentation: f64,
    /// `Σ_i Σ_x |∇u_i(x)|`.
    pub tv: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn new(restoration: f64, segmentation: f64, tv: f64) -> Self {
        Self { restoration, segmentation, tv, total: restoration + segmentation + tv }
    }
}

fn check_shapes(f: &ImageField, g: &ImageField, u: &Membership, c: &Codebook, omega: &ObservationMask) -> Result<()> {
    if !f.same_shape(g) || !omega.matches(f) || u.width() != f.width() || u.height() != f.height() {
        return Err(SegError::DimensionMismatch("f, g, u and mask sizes differ".into()));
    }
    if c.phases() != u.phases() || c.channels() != f.channels() {
        return Err(SegError::DimensionMismatch("codebook shape does not match".into()));
    }
    Ok(())
}

/// `μ Σ_j Σ_x ω Φ(f_j, A g_j)` for the chosen fidelity.
pub fn restoration_energy(f: &ImageField, g: &ImageField, omega: &ObservationMask, p: &ModelParams) -> Result<f64> {
    let a = LinearOperator::new(p.operator.clone());
    let (w, h) = (f.width(), f.height());
    let mut acc = 0.0;
    for j in 0..f.channels() {
        let ag = a.apply(g.plane(j), w, h)?;
        for ((fv, agv), wt) in f.plane(j).iter().zip(&ag).zip(omega.data()) {
            if *wt == 0.0 {
                continue;
            }
            acc += wt * match p.fidelity {
                Fidelity::Gaussian => (fv - agv).powi(2),
                Fidelity::Impulsive => (fv - agv).abs(),
                Fidelity::Poisson => {
                    if !(*agv > 0.0) {
                        return Err(SegError::Domain(format!("Poisson fidelity needs Ag > 0, got {agv}")));
                    }
                    // I-divergence, zero when Ag = f
                    if *fv > 0.0 {
                        agv - fv - fv * (agv / fv).ln()
                    } else {
                        *agv
                    }
                }
            };
        }
    }
    Ok(p.mu * acc)
}

/// `λ Σ_i Σ_j Σ_x ω (g_j − c_{i,j})² u_i`.
pub fn segmentation_energy(g: &ImageField, u: &Membership, c: &Codebook, omega: &ObservationMask, lambda: f64) -> Result<f64> {
    Ok(lambda * build_unary(g, c, omega)?.pairing(u))
}

/// Full energy with the Gaussian, Poisson or impulsive restoration term.
pub fn energy(
    f: &ImageField,
    g: &ImageField,
    u: &Membership,
    c: &Codebook,
    omega: &ObservationMask,
    p: &ModelParams,
) -> Result<EnergyBreakdown> {
    check_shapes(f, g, u, c, omega)?;
    Ok(EnergyBreakdown::new(
        restoration_energy(f, g, omega, p)?,
        segmentation_energy(g, u, c, omega, p.lambda)?,
        total_variation(u),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxOuter,
}

/// Diagnostics of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub energy: EnergyBreakdown,
    /// `‖c^{(k+1)} − c^{(k)}‖₂`.
    pub dc_norm: f64,
    /// Milliseconds since the run started. Excluded from equality.
    pub ms_elapsed: f64,
    pub admm_iterations: usize,
    pub admm_converged: bool,
    /// The membership step fell back to its input.
    pub u_kept: bool,
    /// Worst relative CG residual of the g-step, 0 on the spectral path.
    pub cg_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub termination: Termination,
    /// The g-step was skipped and `g` pinned to the observation.
    pub baseline: bool,
}

pub const TRACE_CSV_HEADER: &str = "iter,E_total,E_restoration,E_segmentation,E_tv,dc_norm,ms_elapsed";

impl RunTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let e = &r.energy;
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e},{:.3}",
                r.iter, e.total, e.restoration, e.segmentation, e.tv, r.dc_norm, r.ms_elapsed
            );
        }
        out
    }

    /// Same as [`RunTrace::to_csv`] without the wall-clock column.
    pub fn to_csv_untimed(&self) -> String {
        self.to_csv()
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
            .fold(String::new(), |mut acc, l| {
                acc.push_str(l);
                acc.push('\n');
                acc
            })
    }

    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.energy.total).collect()
    }

    /// First outer step whose total energy rose by more than `rel_slack`.
    pub fn first_increase(&self, rel_slack: f64) -> Option<usize> {
        self.rows
            .windows(2)
            .find(|w| w[1].energy.total > w[0].energy.total + rel_slack * w[0].energy.total.abs())
            .map(|w| w[1].iter)
    }

    pub fn final_dc(&self) -> Option<f64> {
        self.rows.last().map(|r| r.dc_norm)
    }
}

impl PartialEq for RunTrace {
    fn eq(&self, other: &Self) -> bool {
        self.termination == other.termination
            && self.baseline == other.baseline
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.iter == b.iter
                    && a.energy.total.to_bits() == b.energy.total.to_bits()
                    && a.energy.restoration.to_bits() == b.energy.restoration.to_bits()
                    && a.energy.segmentation.to_bits() == b.energy.segmentation.to_bits()
                    && a.energy.tv.to_bits() == b.energy.tv.to_bits()
                    && a.dc_norm.to_bits() == b.dc_norm.to_bits()
                    && a.admm_iterations == b.admm_iterations
                    && a.u_kept == b.u_kept
            })
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub labels: LabelMap,
    pub g: ImageField,
    pub codebook: Codebook,
    pub membership: Membership,
    pub trace: RunTrace,
}

fn check_run_inputs(f: &ImageField, omega: &ObservationMask, p: &ModelParams) -> Result<()> {
    p.check_solvable()?;
    if f.width() < 2 || f.height() < 2 {
        return Err(SegError::InvalidInput(format!("image must be at least 2x2, got {}x{}", f.width(), f.height())));
    }
    if let Err(v) = f.validate() {
        return Err(SegError::InvalidInput(format!("image: {v}")));
    }
    if !omega.matches(f) {
        return Err(SegError::DimensionMismatch("mask and image sizes differ".into()));
    }
    if let Err(v) = omega.validate() {
        return Err(SegError::InvalidInput(format!("mask: {v}")));
    }
    if let OperatorKind::Convolution(k) = &p.operator {
        if k.width() > f.width() || k.height() > f.height() {
            return Err(SegError::InvalidInput("blur kernel larger than image".into()));
        }
    }
    Ok(())
}

/// Alternating minimization: fuzzy C-means start, then `g → c → u` until
/// the codebook moves by at most `epsilon` or `max_outer` is reached.
pub fn run(f: &ImageField, omega: &ObservationMask, p: &ModelParams) -> Result<RunResult> {
    check_run_inputs(f, omega, p)?;
    let start = Instant::now();
    let (mut c, mut u) = fcm_init(f, omega, p.phases, p.fcm_iters)?;
    let restorer = if p.baseline { None } else { Some(Restorer::new(f, omega, p)?) };
    let admm = AdmmSolver::new(f.width(), f.height(), p)?;
    let mut state = AdmmState::new(&u);
    let mut g = f.clone();
    let mut rows = Vec::new();
    let mut termination = Termination::MaxOuter;

    for iter in 1..=p.max_outer {
        let mut cg_residual = 0.0f64;
        if let Some(r) = &restorer {
            let prev = (iter > 1).then_some(&g);
            let step = r.update(&u, &c, prev)?;
            cg_residual = step.cg.iter().map(|c| c.residual).fold(0.0, f64::max);
            g = step.g;
        }
        let c_next = update_c(&g, &u, omega, &c)?;
        let s = build_unary(&g, &c_next, omega)?;
        let ustep = admm.solve(&s, &u, &mut state)?;
        u = ustep.u;
        let dc_norm = c_next.distance(&c);
        c = c_next;
        let e = energy(f, &g, &u, &c, omega, p)?;
        log::debug!("outer {iter}: E = {:.9e}, |dc| = {dc_norm:.3e}, admm {} its", e.total, ustep.iterations);
        rows.push(TraceRow {
            iter,
            energy: e,
            dc_norm,
            ms_elapsed: start.elapsed().as_secs_f64() * 1e3,
            admm_iterations: ustep.iterations,
            admm_converged: ustep.converged,
            u_kept: ustep.kept_previous,
            cg_residual,
        });
        if dc_norm <= p.epsilon {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(RunResult {
        labels: binarize(&u),
        g,
        codebook: c,
        membership: u,
        trace: RunTrace { rows, termination, baseline: p.baseline },
    })
}

/// Outcome of probing a result for coordinate-wise optimality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialMinimizerReport {
    pub trials: usize,
    pub step: f64,
    pub energy: f64,
    /// Most negative relative energy change seen for each block.
    pub worst_g: f64,
    pub worst_c: f64,
    pub worst_u: f64,
    pub violations: Vec<String>,
}

impl PartialMinimizerReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Relative energy decrease tolerated by [`check_partial_minimizer`].
pub const PARTIAL_MIN_SLACK: f64 = 1e-7;

/// Perturbs each block of a result on its own (`g` in any direction, `c` in
/// any direction, `u` by simplex-feasible per-pixel moves) with magnitude
/// `step` and reports any perturbation that lowers the energy by more than
/// [`PARTIAL_MIN_SLACK`] relative.
pub fn check_partial_minimizer(
    result: &RunResult,
    f: &ImageField,
    omega: &ObservationMask,
    p: &ModelParams,
    trials: usize,
    step: f64,
    seed: u64,
) -> Result<PartialMinimizerReport> {
    let (g, u, c) = (&result.g, &result.membership, &result.codebook);
    let base = energy(f, g, u, c, omega, p)?;
    let e0 = base.total;
    let slack = PARTIAL_MIN_SLACK * e0.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PartialMinimizerReport {
        trials,
        step,
        energy: e0,
        worst_g: 0.0,
        worst_c: 0.0,
        worst_u: 0.0,
        violations: Vec::new(),
    };
    let rel = |e: f64| (e - e0) / e0.abs().max(f64::MIN_POSITIVE);

    let unit = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x * step / norm).collect()
    };

    // in baseline mode g is pinned to f and is not a free block
    if !p.baseline {
        let mut probe = g.clone();
        for t in 0..trials {
            let h = unit(&mut rng, g.data().len());
            probe.data_mut().iter_mut().zip(g.data()).zip(&h).for_each(|((d, a), b)| *d = a + b);
            let e = restoration_energy(f, &probe, omega, p)? + segmentation_energy(&probe, u, c, omega, p.lambda)? + base.tv;
            report.worst_g = report.worst_g.min(rel(e));
            if e < e0 - slack {
                report.violations.push(format!("g-inequality violated at trial {t}: {e:.12e} < {e0:.12e}"));
                break;
            }
        }
    }

    let mut probe_c = c.clone();
    for t in 0..trials {
        let h = unit(&mut rng, c.values().len());
        for i in 0..c.phases() {
            for j in 0..c.channels() {
                probe_c.set(i, j, c.get(i, j) + h[i * c.channels() + j]);
            }
        }
        let e = base.restoration + segmentation_energy(g, u, &probe_c, omega, p.lambda)? + base.tv;
        report.worst_c = report.worst_c.min(rel(e));
        if e < e0 - slack {
            report.violations.push(format!("c-inequality violated at trial {t}: {e:.12e} < {e0:.12e}"));
            break;
        }
    }

    let s = build_unary(g, c, omega)?;
    let k = u.phases();
    let mut probe_u = u.clone();
    for t in 0..trials {
        let px = rng.random_range(0..u.pixels());
        let row = u.at(px);
        let donors: Vec<usize> = (0..k).filter(|&i| row[i] > 0.0).collect();
        let from = donors[rng.random_range(0..donors.len())];
        let mut to = rng.random_range(0..k - 1);
        if to >= from {
            to += 1;
        }
        let delta = step.min(row[from]);
        let mut moved = row.clone();
        moved[from] -= delta;
        moved[to] += delta;
        probe_u.set_at(px, &moved);
        let seg = base.segmentation + p.lambda * (s.phase(to)[px] - s.phase(from)[px]) * delta;
        let e = base.restoration + seg + total_variation(&probe_u);
        probe_u.set_at(px, &row);
        report.worst_u = report.worst_u.min(rel(e));
        if e < e0 - slack {
            report.violations.push(format!("u-inequality violated at trial {t} (pixel {px}): {e:.12e} < {e0:.12e}"));
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Kernel;
    use approx::assert_relative_eq;

    fn two_level(w: usize, h: usize, lo: f64, hi: f64) -> (ImageField, LabelMap) {
        let labels: Vec<usize> = (0..w * h)
            .map(|p| {
                let (x, y) = ((p % w) as f64, (p / w) as f64);
                usize::from((x - w as f64 / 2.0).powi(2) + (y - h as f64 / 2.0).powi(2) < (w as f64 / 4.0).powi(2))
            })
            .collect();
        let data = labels.iter().map(|&l| if l == 1 { hi } else { lo }).collect();
        (ImageField::new(w, h, 1, data).unwrap(), LabelMap::new(w, h, 2, labels).unwrap())
    }

    #[test]
    fn energy_of_exact_piecewise_constant_is_tv_only() {
        let (f, labels) = two_level(8, 8, 0.2, 0.8);
        let u = Membership::from_labels(&labels);
        let c = Codebook::gray(&[0.2, 0.8]);
        let e = energy(&f, &f, &u, &c, &ObservationMask::full(8, 8), &ModelParams::default()).unwrap();
        assert_eq!(e.restoration, 0.0);
        assert_eq!(e.segmentation, 0.0);
        assert_relative_eq!(e.total, total_variation(&u), epsilon = 1e-15);
        assert!(e.tv > 0.0);
    }

    #[test]
    fn energy_single_phase_is_variance() {
        let (f, _) = two_level(6, 6, 0.1, 0.7);
        let mean = f.data().iter().sum::<f64>() / 36.0;
        let u = Membership::new(6, 6, 2, [vec![1.0; 36], vec![0.0; 36]].concat()).unwrap();
        let g = ImageField::constant(6, 6, 1, mean);
        let c = Codebook::gray(&[mean, 0.5]);
        let p = ModelParams { mu: 3.0, ..ModelParams::default() };
        let e = energy(&f, &g, &u, &c, &ObservationMask::full(6, 6), &p).unwrap();
        let var: f64 = f.data().iter().map(|v| (v - mean).powi(2)).sum();
        assert_relative_eq!(e.total, 3.0 * var, epsilon = 1e-12);
    }

    #[test]
    fn poisson_energy_domain_error() {
        let f = ImageField::constant(3, 3, 1, 0.5);
        let g = ImageField::constant(3, 3, 1, 0.0);
        let u = Membership::uniform(3, 3, 2);
        let c = Codebook::gray(&[0.0, 1.0]);
        let p = ModelParams { fidelity: Fidelity::Poisson, ..ModelParams::default() };
        assert!(matches!(energy(&f, &g, &u, &c, &ObservationMask::full(3, 3), &p), Err(SegError::Domain(_))));
        let e = energy(&f, &f, &u, &c, &ObservationMask::full(3, 3), &p).unwrap();
        assert_eq!(e.restoration, 0.0);
        let p = ModelParams { fidelity: Fidelity::Impulsive, mu: 2.0, ..ModelParams::default() };
        let e = energy(&f, &ImageField::constant(3, 3, 1, 0.25), &u, &c, &ObservationMask::full(3, 3), &p).unwrap();
        assert_relative_eq!(e.restoration, 2.0 * 9.0 * 0.25, epsilon = 1e-14);
    }

    #[test]
    fn clean_two_level_segments_perfectly() {
        let (f, truth) = two_level(32, 32, 0.2, 0.8);
        let omega = ObservationMask::full(32, 32);
        let p = ModelParams { lambda: 10.0, ..ModelParams::default() };
        let full = run(&f, &omega, &p).unwrap();
        assert_eq!(full.labels.labels(), truth.labels());
        assert_eq!(full.trace.termination, Termination::Converged);
        assert!(full.trace.final_dc().unwrap() <= p.epsilon);
        let base = run(&f, &omega, &ModelParams { baseline: true, ..p.clone() }).unwrap();
        assert_eq!(base.labels, full.labels);
        assert_eq!(base.g, f);
    }

    #[test]
    fn trace_is_monotone_and_deterministic() {
        let (f0, _) = two_level(24, 24, 0.1, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noisy: Vec<f64> = f0.data().iter().map(|v| v + 0.2 * (rng.random::<f64>() - 0.5)).collect();
        let f = ImageField::new(24, 24, 1, noisy).unwrap();
        let kernel = Kernel::new(3, 3, vec![1.0 / 9.0; 9]).unwrap();
        let omega = ObservationMask::from_bools(24, 24, &(0..576).map(|p| p % 7 != 3).collect::<Vec<_>>()).unwrap();
        let p = ModelParams { lambda: 5.0, mu: 2.0, operator: OperatorKind::Convolution(kernel), ..ModelParams::default() };
        let a = run(&f, &omega, &p).unwrap();
        assert_eq!(a.trace.first_increase(1e-9), None, "{:?}", a.trace.totals());
        let b = run(&f, &omega, &p).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.labels, b.labels);
        assert!(a.membership.validate().is_ok());
    }

    #[test]
    fn trace_csv_layout() {
        let (f, _) = two_level(8, 8, 0.2, 0.8);
        let r = run(&f, &ObservationMask::full(8, 8), &ModelParams::default()).unwrap();
        let csv = r.trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRACE_CSV_HEADER));
        assert_eq!(lines.next().unwrap().split(',').count(), 7);
        assert!(r.trace.to_csv_untimed().lines().all(|l| l.split(',').count() == 6));
    }

    #[test]
    fn partial_minimizer_detects_shifted_codebook() {
        let (f, _) = two_level(16, 16, 0.2, 0.8);
        let omega = ObservationMask::full(16, 16);
        let p = ModelParams::default();
        let r = run(&f, &omega, &p).unwrap();
        let ok = check_partial_minimizer(&r, &f, &omega, &p, 200, 1e-3, 1).unwrap();
        assert!(ok.is_ok(), "{:?}", ok.violations);
        let mut bad = r.clone();
        let shifted = bad.codebook.get(0, 0) + 0.1;
        bad.codebook.set(0, 0, shifted);
        let rep = check_partial_minimizer(&bad, &f, &omega, &p, 200, 1e-3, 1).unwrap();
        assert!(rep.violations.iter().any(|v| v.starts_with("c-inequality")));
    }

    #[test]
    fn rejects_unsolvable_params() {
        let (f, _) = two_level(8, 8, 0.2, 0.8);
        let p = ModelParams { fidelity: Fidelity::Poisson, ..ModelParams::default() };
        assert!(matches!(run(&f, &ObservationMask::full(8, 8), &p), Err(SegError::UnsupportedFidelity(_))));
    }
}

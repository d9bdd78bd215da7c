//! Domain types shared by every stage of the pipeline.
//!
//! All multi-plane fields are stored plane-major: an image with `N` channels
//! keeps channel `j` in `data[j * w * h..(j + 1) * w * h]`, row-major inside
//! the plane. Memberships use the same layout with one plane per phase.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SegError};

/// Simplex-sum slack for memberships.
pub const SIMPLEX_SUM_TOL: f64 = 1e-9;
/// Non-negativity slack for memberships.
pub const SIMPLEX_NONNEG_TOL: f64 = 1e-12;
/// Normalization slack for blur kernels.
pub const KERNEL_SUM_TOL: f64 = 1e-12;

/// The first invariant a value breaks, with the offending pixel if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub what: String,
    pub at: Option<(usize, usize)>,
}

impl Violation {
    fn new(what: impl Into<String>) -> Self {
        Self { what: what.into(), at: None }
    }

    fn at(what: impl Into<String>, idx: usize, width: usize) -> Self {
        Self { what: what.into(), at: Some((idx % width, idx / width)) }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.at {
            Some((x, y)) => write!(f, "{} at ({x}, {y})", self.what),
            None => f.write_str(&self.what),
        }
    }
}

/// Checks the mathematical invariants a value must satisfy.
pub trait Validate {
    fn validate(&self) -> std::result::Result<(), Violation>;

    fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }
}

fn check_dims(width: usize, height: usize, planes: usize, len: usize, what: &str) -> Result<()> {
    if width == 0 || height == 0 || planes == 0 {
        return Err(SegError::InvalidInput(format!("{what}: empty dimensions {width}x{height}x{planes}")));
    }
    if width * height * planes != len {
        return Err(SegError::DimensionMismatch(format!(
            "{what}: {width}x{height}x{planes} needs {} values, got {len}",
            width * height * planes
        )));
    }
    Ok(())
}

/// Real-valued multi-channel image, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageField {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageField {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, channels, data.len(), "image")?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            let p = i % (width * height);
            return Err(SegError::InvalidInput(format!(
                "image: non-finite value at ({}, {})",
                p % width,
                p / width
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::constant(width, height, channels, 0.0)
    }

    /// Builds an image from one plane per channel.
    pub fn from_planes(width: usize, height: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        let channels = planes.len();
        let data: Vec<f64> = planes.into_iter().flatten().collect();
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.pixels())
    }

    pub fn get(&self, x: usize, y: usize, channel: usize) -> f64 {
        self.data[channel * self.pixels() + y * self.width + x]
    }

    pub fn same_shape(&self, other: &ImageField) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(width * height * channels, data.len());
        Self { width, height, channels, data }
    }
}

impl Validate for ImageField {
    fn validate(&self) -> std::result::Result<(), Violation> {
        if self.width * self.height * self.channels != self.data.len() {
            return Err(Violation::new("data length does not match dimensions"));
        }
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Violation::at("non-finite value", i % self.pixels(), self.width)),
            None => Ok(()),
        }
    }
}

/// Binary observation mask: 1 where the pixel was observed, 0 where missing.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ObservationMask {
    /// Wraps raw values; use [`Validate::validate`] to check they are binary.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, 1, data.len(), "mask")?;
        Ok(Self { width, height, data })
    }

    pub fn from_bools(width: usize, height: usize, observed: &[bool]) -> Result<Self> {
        Self::new(width, height, observed.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![1.0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_observed(&self, idx: usize) -> bool {
        self.data[idx] != 0.0
    }

    pub fn is_full(&self) -> bool {
        self.data.iter().all(|&w| w == 1.0)
    }

    pub fn observed_count(&self) -> usize {
        self.data.iter().filter(|&&w| w != 0.0).count()
    }

    pub fn matches(&self, img: &ImageField) -> bool {
        self.width == img.width() && self.height == img.height()
    }
}

impl Validate for ObservationMask {
    fn validate(&self) -> std::result::Result<(), Violation> {
        match self.data.iter().position(|&w| w != 0.0 && w != 1.0) {
            Some(i) => Err(Violation::at("mask value is not 0 or 1", i, self.width)),
            None => Ok(()),
        }
    }
}

/// Relaxed per-pixel phase indicators, one plane per phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    width: usize,
    height: usize,
    phases: usize,
    data: Vec<f64>,
}

impl Membership {
    /// Wraps raw values; use [`Validate::validate`] to check the simplex constraint.
    pub fn new(width: usize, height: usize, phases: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, phases, data.len(), "membership")?;
        if phases < 2 {
            return Err(SegError::InvalidInput(format!("membership needs at least 2 phases, got {phases}")));
        }
        Ok(Self { width, height, phases, data })
    }

    pub fn uniform(width: usize, height: usize, phases: usize) -> Self {
        Self { width, height, phases, data: vec![1.0 / phases as f64; width * height * phases] }
    }

    /// Exact indicator memberships for a label map.
    pub fn from_labels(labels: &LabelMap) -> Self {
        let n = labels.pixels();
        let k = labels.phases();
        let mut data = vec![0.0; n * k];
        for (p, &l) in labels.labels().iter().enumerate() {
            data[l * n + p] = 1.0;
        }
        Self { width: labels.width(), height: labels.height(), phases: k, data }
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

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn phase(&self, i: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn phase_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn get(&self, pixel: usize, phase: usize) -> f64 {
        self.data[phase * self.pixels() + pixel]
    }

    /// The K-vector of memberships at one pixel.
    pub fn at(&self, pixel: usize) -> Vec<f64> {
        (0..self.phases).map(|i| self.get(pixel, i)).collect()
    }

    pub fn set_at(&mut self, pixel: usize, values: &[f64]) {
        let n = self.pixels();
        for (i, &v) in values.iter().enumerate() {
            self.data[i * n + pixel] = v;
        }
    }
}

impl Validate for Membership {
    fn validate(&self) -> std::result::Result<(), Violation> {
        for p in 0..self.pixels() {
            let mut sum = 0.0;
            for i in 0..self.phases {
                let v = self.get(p, i);
                if !v.is_finite() {
                    return Err(Violation::at("non-finite membership", p, self.width));
                }
                if v < -SIMPLEX_NONNEG_TOL {
                    return Err(Violation::at(format!("negative membership {v} in phase {i}"), p, self.width));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
                return Err(Violation::at(format!("memberships sum to {sum}"), p, self.width));
            }
        }
        Ok(())
    }
}

/// Hard per-pixel phase labels in `[0, phases)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    phases: usize,
    labels: Vec<usize>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, phases: usize, labels: Vec<usize>) -> Result<Self> {
        check_dims(width, height, 1, labels.len(), "labels")?;
        Ok(Self { width, height, phases, labels })
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

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x]
    }

    /// Same map with a wider phase count (labels unchanged).
    pub fn with_phases(mut self, phases: usize) -> Self {
        self.phases = self.phases.max(phases);
        self
    }
}

impl Validate for LabelMap {
    fn validate(&self) -> std::result::Result<(), Violation> {
        match self.labels.iter().position(|&l| l >= self.phases) {
            Some(i) => Err(Violation::at(format!("label {} >= {}", self.labels[i], self.phases), i, self.width)),
            None => Ok(()),
        }
    }
}

/// Phase constants: `phases × channels`, row `i` is the mean of phase `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    phases: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Codebook {
    pub fn new(phases: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(phases, channels, 1, values.len(), "codebook")?;
        Ok(Self { phases, channels, values })
    }

    /// Gray-level codebook with one constant per phase.
    pub fn gray(levels: &[f64]) -> Self {
        Self { phases: levels.len(), channels: 1, values: levels.to_vec() }
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, phase: usize, channel: usize) -> f64 {
        self.values[phase * self.channels + channel]
    }

    pub fn set(&mut self, phase: usize, channel: usize, value: f64) {
        self.values[phase * self.channels + channel] = value;
    }

    pub fn row(&self, phase: usize) -> &[f64] {
        &self.values[phase * self.channels..(phase + 1) * self.channels]
    }

    /// Euclidean distance over all `phases × channels` entries.
    pub fn distance(&self, other: &Codebook) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

impl Validate for Codebook {
    fn validate(&self) -> std::result::Result<(), Violation> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Violation::new(format!(
                "non-finite codebook entry for phase {} channel {}",
                i / self.channels,
                i % self.channels
            ))),
            None => Ok(()),
        }
    }
}

/// Blur kernel with odd dimensions anchored at its center tap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    width: usize,
    height: usize,
    taps: Vec<f64>,
}

impl Kernel {
    pub fn new(width: usize, height: usize, taps: Vec<f64>) -> Result<Self> {
        check_dims(width, height, 1, taps.len(), "kernel")?;
        if width.is_multiple_of(2) || height.is_multiple_of(2) {
            return Err(SegError::InvalidInput(format!("kernel dimensions must be odd, got {width}x{height}")));
        }
        Ok(Self { width, height, taps })
    }

    pub fn identity() -> Self {
        Self { width: 1, height: 1, taps: vec![1.0] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn tap(&self, x: usize, y: usize) -> f64 {
        self.taps[y * self.width + x]
    }

    pub fn center(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }

    /// The kernel rotated by 180 degrees (the adjoint of its convolution).
    pub fn flipped(&self) -> Self {
        let mut taps = self.taps.clone();
        taps.reverse();
        Self { width: self.width, height: self.height, taps }
    }
}

impl Validate for Kernel {
    fn validate(&self) -> std::result::Result<(), Violation> {
        if let Some(i) = self.taps.iter().position(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(Violation::at(format!("negative or non-finite tap {}", self.taps[i]), i, self.width));
        }
        let sum: f64 = self.taps.iter().sum();
        if (sum - 1.0).abs() > KERNEL_SUM_TOL {
            return Err(Violation::new(format!("not normalized: taps sum to {sum}")));
        }
        Ok(())
    }
}

/// Noise model of the restoration fidelity term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    #[default]
    Gaussian,
    /// I-divergence; energy evaluation only.
    Poisson,
    /// L1 fidelity; energy evaluation only.
    Impulsive,
}

impl Fidelity {
    pub fn name(self) -> &'static str {
        match self {
            Fidelity::Gaussian => "Gaussian",
            Fidelity::Poisson => "Poisson",
            Fidelity::Impulsive => "impulsive",
        }
    }
}

/// Degradation operator `A` linking the restored image to the observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    #[default]
    Identity,
    Convolution(Kernel),
}

/// Weights, tolerances and budgets for one segmentation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Restoration fidelity weight.
    pub mu: f64,
    /// Segmentation fidelity weight.
    pub lambda: f64,
    /// ADMM penalty.
    pub sigma: f64,
    /// Outer stopping tolerance on the codebook change.
    pub epsilon: f64,
    pub phases: usize,
    pub fidelity: Fidelity,
    pub operator: OperatorKind,
    pub max_outer: usize,
    pub max_inner: usize,
    pub inner_tol: f64,
    /// Relative residual target of the masked g-solve.
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Pin the restored image to the observation and skip the g-step.
    pub baseline: bool,
    /// Fuzzy C-means iterations used for initialization.
    pub fcm_iters: usize,
    pub seed: u64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            mu: 1.0,
            lambda: 10.0,
            sigma: 2.0,
            epsilon: 1e-4,
            phases: 2,
            fidelity: Fidelity::Gaussian,
            operator: OperatorKind::Identity,
            max_outer: 200,
            max_inner: 100,
            inner_tol: 1e-3,
            cg_tol: 1e-8,
            cg_max_iter: 500,
            baseline: false,
            fcm_iters: 100,
            seed: 0,
        }
    }
}

impl ModelParams {
    /// Checks the parameter invariants needed before any solve.
    pub fn check_solvable(&self) -> Result<()> {
        if let Err(v) = self.validate() {
            return Err(SegError::InvalidInput(v.to_string()));
        }
        if self.fidelity != Fidelity::Gaussian {
            return Err(SegError::UnsupportedFidelity(self.fidelity.name()));
        }
        Ok(())
    }
}

impl Validate for ModelParams {
    fn validate(&self) -> std::result::Result<(), Violation> {
        let positive = [
            ("mu", self.mu),
            ("lambda", self.lambda),
            ("sigma", self.sigma),
            ("epsilon", self.epsilon),
            ("inner_tol", self.inner_tol),
            ("cg_tol", self.cg_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Violation::new(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.phases < 2 {
            return Err(Violation::new(format!("phase count must be at least 2, got {}", self.phases)));
        }
        if let OperatorKind::Convolution(k) = &self.operator {
            k.validate()?;
        }
        Ok(())
    }
}

/// Per-pixel argmax of the memberships; ties go to the lowest phase index.
pub fn binarize(u: &Membership) -> LabelMap {
    let n = u.pixels();
    let labels = (0..n)
        .map(|p| {
            let mut best = 0;
            let mut best_v = u.get(p, 0);
            for i in 1..u.phases() {
                let v = u.get(p, i);
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            best
        })
        .collect();
    LabelMap { width: u.width(), height: u.height(), phases: u.phases(), labels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn membership_on_simplex_is_valid() {
        let u = Membership::new(2, 1, 2, vec![0.3, 1.0, 0.7, 0.0]).unwrap();
        assert!(u.validate().is_ok());
    }

    #[test]
    fn membership_row_sum_violation_reports_pixel() {
        let u = Membership::new(2, 2, 2, vec![0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let v = u.validate().unwrap_err();
        assert_eq!(v.at, Some((1, 1)));
        assert!(v.what.contains("1.5"));
    }

    #[test]
    fn kernel_not_normalized() {
        let k = Kernel::new(1, 1, vec![0.98]).unwrap();
        let v = k.validate().unwrap_err();
        assert!(v.what.contains("not normalized"));
    }

    #[test]
    fn kernel_even_dimensions_rejected() {
        assert!(Kernel::new(2, 1, vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn mask_must_be_binary() {
        let m = ObservationMask::new(2, 1, vec![1.0, 0.5]).unwrap();
        assert_eq!(m.validate().unwrap_err().at, Some((1, 0)));
        assert!(ObservationMask::full(3, 3).validate().is_ok());
    }

    #[test]
    fn image_rejects_non_finite() {
        assert!(ImageField::new(1, 2, 1, vec![0.0, f64::NAN]).is_err());
        assert!(ImageField::new(1, 2, 1, vec![0.0]).is_err());
    }

    #[test]
    fn params_reject_bad_values() {
        let mut p = ModelParams::default();
        assert!(p.validate().is_ok());
        p.mu = 0.0;
        assert!(p.validate().is_err());
        let p = ModelParams { phases: 1, ..ModelParams::default() };
        assert!(p.validate().is_err());
        let p = ModelParams { fidelity: Fidelity::Poisson, ..ModelParams::default() };
        assert!(p.validate().is_ok());
        assert_eq!(p.check_solvable(), Err(SegError::UnsupportedFidelity("Poisson")));
    }

    #[test]
    fn binarize_unique_max_and_ties() {
        let u = Membership::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(binarize(&u).labels(), &[0]);
        let u = Membership::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(binarize(&u).labels(), &[0]);
        let u = Membership::new(1, 1, 3, vec![0.2, 0.4, 0.4]).unwrap();
        assert_eq!(binarize(&u).labels(), &[1]);
    }

    fn random_simplex(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Membership {
        let mut u = Membership::uniform(n, 1, k);
        for p in 0..n {
            let raw: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().ln()).collect();
            let s: f64 = raw.iter().sum();
            let row: Vec<f64> = raw.iter().map(|r| r / s).collect();
            u.set_at(p, &row);
        }
        u
    }

    #[test]
    fn binarize_matches_brute_force_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let raw = random_simplex(&mut rng, 4, 3);
            let u = Membership::new(2, 2, 3, raw.data().to_vec()).unwrap();
            let labels = binarize(&u);
            for p in 0..4 {
                let row = u.at(p);
                let mut oracle = 0;
                for i in 0..3 {
                    if row[i] > row[oracle] {
                        oracle = i;
                    }
                }
                assert_eq!(labels.labels()[p], oracle);
            }
            assert!(labels.validate().is_ok());
        }
    }

    proptest! {
        #[test]
        fn binarize_invariant_under_monotone_rescaling(seed in 0u64..1000, scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_simplex(&mut rng, 9, 4);
            // rescaled values leave the simplex but keep per-pixel order
            let scaled: Vec<f64> = u.data().iter().map(|v| (scale * v + shift).exp()).collect();
            let w = Membership::new(9, 1, 4, scaled).unwrap();
            prop_assert_eq!(binarize(&u), binarize(&w));
        }
    }
}

//! Seeded degradations (blur, Gaussian noise, pixel loss) and synthetic
//! test scenes with ground-truth labels.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SegError};
use crate::operators::LinearOperator;
use crate::types::{Codebook, ImageField, Kernel, LabelMap, ObservationMask};

const NOISE_STREAM: u64 = 1;
const DROP_STREAM: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Blur applied before noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BlurSpec {
    #[default]
    None,
    Gaussian { size: usize, std: f64 },
    Motion { length: usize, angle_deg: f64 },
}

impl fmt::Display for BlurSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlurSpec::None => f.write_str("none"),
            BlurSpec::Gaussian { size, std } => write!(f, "gaussian:{size}:{std}"),
            BlurSpec::Motion { length, angle_deg } => write!(f, "motion:{length}:{angle_deg}"),
        }
    }
}

impl FromStr for BlurSpec {
    type Err = SegError;

    /// Parses `none`, `gaussian:SIZE:STD` or `motion:LEN:ANGLE`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || SegError::InvalidInput(format!("bad blur spec '{s}', expected gaussian:SIZE:STD or motion:LEN:ANGLE"));
        let spec = match parts.as_slice() {
            ["none"] | [""] => BlurSpec::None,
            ["gaussian", size, std] => BlurSpec::Gaussian {
                size: size.parse().map_err(|_| bad())?,
                std: std.parse().map_err(|_| bad())?,
            },
            ["motion", len, angle] => BlurSpec::Motion {
                length: len.parse().map_err(|_| bad())?,
                angle_deg: angle.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        spec.check()?;
        Ok(spec)
    }
}

impl BlurSpec {
    fn check(&self) -> Result<()> {
        match *self {
            BlurSpec::None => Ok(()),
            BlurSpec::Gaussian { size, std } => {
                if size % 2 == 0 {
                    Err(SegError::InvalidInput(format!("Gaussian kernel size must be odd, got {size}")))
                } else if !(std > 0.0) || !std.is_finite() {
                    Err(SegError::InvalidInput(format!("Gaussian std must be positive, got {std}")))
                } else {
                    Ok(())
                }
            }
            BlurSpec::Motion { length, angle_deg } => {
                if length == 0 || !angle_deg.is_finite() {
                    Err(SegError::InvalidInput(format!("bad motion blur {length}@{angle_deg}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, BlurSpec::None)
    }
}

/// Full degradation recipe; applied as blur, then noise, then pixel loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradeSpec {
    pub noise_variance: f64,
    pub blur: BlurSpec,
    pub drop_fraction: f64,
    pub seed: u64,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        Self { noise_variance: 0.0, blur: BlurSpec::None, drop_fraction: 0.0, seed: 0 }
    }
}

impl DegradeSpec {
    pub fn check(&self) -> Result<()> {
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(SegError::InvalidInput(format!("noise variance must be >= 0, got {}", self.noise_variance)));
        }
        if !(0.0..1.0).contains(&self.drop_fraction) {
            return Err(SegError::InvalidInput(format!("drop fraction must be in [0, 1), got {}", self.drop_fraction)));
        }
        self.blur.check()
    }
}

/// Adds i.i.d. zero-mean Gaussian noise and clamps to `[0, 1]`.
pub fn add_gaussian_noise(img: &ImageField, variance: f64, seed: u64) -> Result<ImageField> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(SegError::InvalidInput(format!("noise variance must be >= 0, got {variance}")));
    }
    if variance == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| SegError::InvalidInput(e.to_string()))?;
    let mut rng = rng_for(seed, NOISE_STREAM);
    let data = img.data().iter().map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)).collect();
    ImageField::new(img.width(), img.height(), img.channels(), data)
}

/// Normalized blur kernel; `BlurSpec::None` gives the single-tap identity.
///
/// Motion kernels rasterize a length-`L` segment through the center with
/// unit weights, angle measured counter-clockwise from the x axis (90° is vertical).
pub fn make_blur_kernel(spec: &BlurSpec) -> Result<Kernel> {
    spec.check()?;
    match *spec {
        BlurSpec::None => Ok(Kernel::identity()),
        BlurSpec::Gaussian { size, std } => {
            let r = (size / 2) as f64;
            let mut taps: Vec<f64> = (0..size * size)
                .map(|i| {
                    let dx = (i % size) as f64 - r;
                    let dy = (i / size) as f64 - r;
                    (-(dx * dx + dy * dy) / (2.0 * std * std)).exp()
                })
                .collect();
            let sum: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= sum);
            Kernel::new(size, size, taps)
        }
        BlurSpec::Motion { length, angle_deg } => {
            let theta = angle_deg.to_radians();
            let (dx, dy) = (theta.cos(), -theta.sin());
            let half = (length as f64 - 1.0) / 2.0;
            let mut points: Vec<(i64, i64)> = (0..length)
                .map(|s| {
                    let t = s as f64 - half;
                    let snap = |v: f64| if v.abs() < 1e-9 { 0 } else { v.round() as i64 };
                    (snap(t * dx), snap(t * dy))
                })
                .collect();
            points.sort_unstable();
            points.dedup();
            let rx = points.iter().map(|p| p.0.abs()).max().unwrap_or(0) as usize;
            let ry = points.iter().map(|p| p.1.abs()).max().unwrap_or(0) as usize;
            let (w, h) = (2 * rx + 1, 2 * ry + 1);
            let mut taps = vec![0.0; w * h];
            let weight = 1.0 / points.len() as f64;
            for (x, y) in points {
                taps[(y + ry as i64) as usize * w + (x + rx as i64) as usize] = weight;
            }
            Kernel::new(w, h, taps)
        }
    }
}

/// Circular convolution of every channel with `kernel`.
pub fn blur_image(img: &ImageField, kernel: &Kernel) -> Result<ImageField> {
    let a = LinearOperator::convolution(kernel.clone());
    let planes = img
        .planes()
        .map(|p| a.apply(p, img.width(), img.height()))
        .collect::<Result<Vec<_>>>()?;
    ImageField::from_planes(img.width(), img.height(), planes)
}

/// Zeroes exactly `⌊fraction · pixels⌋` seeded pixel sites in every channel.
pub fn drop_pixels(img: &ImageField, fraction: f64, seed: u64) -> Result<(ImageField, ObservationMask)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(SegError::InvalidInput(format!("drop fraction must be in [0, 1), got {fraction}")));
    }
    let n = img.pixels();
    let count = (fraction * n as f64).floor() as usize;
    let mut observed = vec![true; n];
    let mut rng = rng_for(seed, DROP_STREAM);
    for p in sample(&mut rng, n, count) {
        observed[p] = false;
    }
    let mut out = img.clone();
    for j in 0..img.channels() {
        out.plane_mut(j).iter_mut().zip(&observed).for_each(|(v, &o)| {
            if !o {
                *v = 0.0;
            }
        });
    }
    Ok((out, ObservationMask::from_bools(img.width(), img.height(), &observed)?))
}

/// Blur, then noise, then pixel loss.
pub fn degrade(img: &ImageField, spec: &DegradeSpec) -> Result<(ImageField, ObservationMask)> {
    spec.check()?;
    let blurred = if spec.blur.is_none() { img.clone() } else { blur_image(img, &make_blur_kernel(&spec.blur)?)? };
    let noisy = add_gaussian_noise(&blurred, spec.noise_variance, spec.seed)?;
    drop_pixels(&noisy, spec.drop_fraction, spec.seed)
}

/// Synthetic scene families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SceneKind {
    /// Two-phase geometric shapes.
    Shapes2,
    /// Two-phase bars of varying width.
    Barcode,
    /// Four nested shapes at levels 0, 1/3, 2/3, 1.
    Shapes4,
    /// Stars at levels 0.25 through 1 on a zero background.
    Stars5,
    /// RGB mosaic with the given number of phases (2..=8).
    Rgb(usize),
}

impl SceneKind {
    pub fn phases(&self) -> usize {
        match self {
            SceneKind::Shapes2 | SceneKind::Barcode => 2,
            SceneKind::Shapes4 => 4,
            SceneKind::Stars5 => 5,
            SceneKind::Rgb(k) => *k,
        }
    }

    pub fn all_gray() -> [SceneKind; 4] {
        [SceneKind::Shapes2, SceneKind::Barcode, SceneKind::Shapes4, SceneKind::Stars5]
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SceneKind::Shapes2 => f.write_str("shapes2"),
            SceneKind::Barcode => f.write_str("barcode"),
            SceneKind::Shapes4 => f.write_str("shapes4"),
            SceneKind::Stars5 => f.write_str("stars5"),
            SceneKind::Rgb(k) => write!(f, "rgb{k}"),
        }
    }
}

impl FromStr for SceneKind {
    type Err = SegError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "shapes2" => Ok(SceneKind::Shapes2),
            "barcode" => Ok(SceneKind::Barcode),
            "shapes4" => Ok(SceneKind::Shapes4),
            "stars5" => Ok(SceneKind::Stars5),
            _ => lower
                .strip_prefix("rgb")
                .and_then(|k| k.trim_start_matches('-').parse::<usize>().ok())
                .filter(|k| (2..=PALETTE.len()).contains(k))
                .map(SceneKind::Rgb)
                .ok_or_else(|| SegError::InvalidInput(format!("unknown scene '{s}'"))),
        }
    }
}

/// A generated image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: ImageField,
    pub truth: LabelMap,
    pub levels: Codebook,
}

const PALETTE: [[f64; 3]; 8] = [
    [0.90, 0.15, 0.10],
    [0.10, 0.70, 0.20],
    [0.15, 0.25, 0.90],
    [0.95, 0.90, 0.20],
    [0.60, 0.10, 0.70],
    [0.10, 0.80, 0.85],
    [0.05, 0.05, 0.05],
    [0.95, 0.95, 0.95],
];

fn in_polygon(px: f64, py: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn star(cx: f64, cy: f64, outer: f64, inner: f64, rot: f64) -> Vec<(f64, f64)> {
    (0..10)
        .map(|k| {
            let r = if k % 2 == 0 { outer } else { inner };
            let a = rot + std::f64::consts::PI * k as f64 / 5.0 - std::f64::consts::FRAC_PI_2;
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect()
}

/// Deterministic synthetic scene of side `size` (at least 32).
pub fn make_scene(kind: SceneKind, size: usize, seed: u64) -> Result<Scene> {
    if size < 32 {
        return Err(SegError::InvalidInput(format!("scene size must be at least 32, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |amp: f64| rng.random_range(-amp..=amp);
    let s = size as f64;
    let n = size * size;
    let mut labels = vec![0usize; n];
    let coords = |p: usize| (((p % size) as f64 + 0.5) / s, ((p / size) as f64 + 0.5) / s);

    let levels: Vec<Vec<f64>> = match kind {
        SceneKind::Shapes2 => {
            let (cx, cy) = (0.3 + jitter(0.03), 0.33 + jitter(0.03));
            let (rx0, ry0) = (0.56 + jitter(0.03), 0.14 + jitter(0.03));
            let tri = [(0.18 + jitter(0.02), 0.88), (0.48 + jitter(0.03), 0.56 + jitter(0.02)), (0.82, 0.86 + jitter(0.02))];
            for (p, l) in labels.iter_mut().enumerate() {
                let (x, y) = coords(p);
                let disk = (x - cx).powi(2) + (y - cy).powi(2) < 0.17f64.powi(2);
                let rect = (rx0..rx0 + 0.32).contains(&x) && (ry0..ry0 + 0.3).contains(&y);
                *l = usize::from(disk || rect || in_polygon(x, y, &tri));
            }
            vec![vec![0.0], vec![1.0]]
        }
        SceneKind::Barcode => {
            let unit = s / 128.0;
            let (mut x, end) = (0.08 * s, 0.92 * s);
            let mut bars = Vec::new();
            while x < end {
                let width = rng.random_range(4.0..10.0) * unit;
                bars.push((x, (x + width).min(end)));
                x += width + rng.random_range(4.0..10.0) * unit;
            }
            for (p, l) in labels.iter_mut().enumerate() {
                let (px, py) = ((p % size) as f64 + 0.5, (p / size) as f64 + 0.5);
                let in_bar = bars.iter().any(|&(a, b)| (a..b).contains(&px));
                *l = usize::from(in_bar && (0.15 * s..0.85 * s).contains(&py));
            }
            vec![vec![0.0], vec![1.0]]
        }
        SceneKind::Shapes4 => {
            let (rx0, ry0) = (0.08 + jitter(0.02), 0.1 + jitter(0.02));
            let (dx, dy) = (0.33 + jitter(0.02), 0.5 + jitter(0.03));
            let (ex, ey) = (0.78 + jitter(0.02), 0.28 + jitter(0.02));
            let tri = [(0.62, 0.92), (0.78 + jitter(0.02), 0.56), (0.94, 0.92)];
            for (p, l) in labels.iter_mut().enumerate() {
                let (x, y) = coords(p);
                *l = if (x - dx).powi(2) + (y - dy).powi(2) < 0.15f64.powi(2) {
                    1
                } else if (rx0..rx0 + 0.5).contains(&x) && (ry0..ry0 + 0.8).contains(&y) {
                    2
                } else if (x - ex).powi(2) + (y - ey).powi(2) < 0.14f64.powi(2) {
                    3
                } else if in_polygon(x, y, &tri) {
                    1
                } else {
                    0
                };
            }
            vec![vec![0.0], vec![1.0 / 3.0], vec![2.0 / 3.0], vec![1.0]]
        }
        SceneKind::Stars5 => {
            let centers = [(0.27, 0.27), (0.73, 0.27), (0.27, 0.73), (0.73, 0.73)];
            let stars: Vec<Vec<(f64, f64)>> = centers
                .iter()
                .map(|&(cx, cy)| star(cx + jitter(0.02), cy + jitter(0.02), 0.21, 0.09, jitter(0.3)))
                .collect();
            for (p, l) in labels.iter_mut().enumerate() {
                let (x, y) = coords(p);
                *l = stars.iter().position(|st| in_polygon(x, y, st)).map_or(0, |i| i + 1);
            }
            vec![vec![0.0], vec![0.25], vec![0.5], vec![0.75], vec![1.0]]
        }
        SceneKind::Rgb(k) => {
            if !(2..=PALETTE.len()).contains(&k) {
                return Err(SegError::InvalidInput(format!("RGB mosaic supports 2..=8 phases, got {k}")));
            }
            let sites: Vec<(f64, f64, usize)> = (0..3 * k)
                .map(|i| (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), i % k))
                .collect();
            for (p, l) in labels.iter_mut().enumerate() {
                let (x, y) = coords(p);
                let nearest = sites
                    .iter()
                    .min_by(|a, b| {
                        let da = (a.0 - x).powi(2) + (a.1 - y).powi(2);
                        let db = (b.0 - x).powi(2) + (b.1 - y).powi(2);
                        da.total_cmp(&db)
                    })
                    .expect("sites are non-empty");
                *l = nearest.2;
            }
            PALETTE[..k].iter().map(|c| c.to_vec()).collect()
        }
    };

    let k = levels.len();
    let nc = levels[0].len();
    let mut data = vec![0.0; n * nc];
    for (p, &l) in labels.iter().enumerate() {
        for j in 0..nc {
            data[j * n + p] = levels[l][j];
        }
    }
    Ok(Scene {
        image: ImageField::new(size, size, nc, data)?,
        truth: LabelMap::new(size, size, k, labels)?,
        levels: Codebook::new(k, nc, levels.concat())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Validate;
    use approx::assert_relative_eq;

    #[test]
    fn zero_noise_is_identity() {
        let img = make_scene(SceneKind::Shapes2, 32, 1).unwrap().image;
        assert_eq!(add_gaussian_noise(&img, 0.0, 5).unwrap(), img);
    }

    #[test]
    fn noise_sample_variance() {
        let img = ImageField::constant(1000, 1000, 1, 0.5);
        let out = add_gaussian_noise(&img, 0.01, 42).unwrap();
        let n = out.data().len() as f64;
        let mean = out.data().iter().map(|v| v - 0.5).sum::<f64>() / n;
        let var = out.data().iter().map(|v| (v - 0.5 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.01).abs() < 0.01 * 0.05, "variance {var}");
    }

    #[test]
    fn heavy_noise_clamps_and_pulls_to_middle() {
        let scene = make_scene(SceneKind::Shapes2, 128, 3).unwrap();
        let out = add_gaussian_noise(&scene.image, 0.2, 9).unwrap();
        let clamped = out.data().iter().filter(|&&v| v == 0.0 || v == 1.0).count();
        assert!(clamped > 0);
        let (mut lo, mut nlo, mut hi, mut nhi) = (0.0, 0, 0.0, 0);
        for (v, &l) in out.data().iter().zip(scene.truth.labels()) {
            if l == 0 {
                lo += v;
                nlo += 1;
            } else {
                hi += v;
                nhi += 1;
            }
        }
        assert!(lo / nlo as f64 > 0.1);
        assert!(hi / (nhi as f64) < 0.9);
    }

    #[test]
    fn kernels() {
        assert_eq!(make_blur_kernel(&BlurSpec::Gaussian { size: 1, std: 2.0 }).unwrap(), Kernel::identity());
        let m = make_blur_kernel(&BlurSpec::Motion { length: 15, angle_deg: 90.0 }).unwrap();
        assert_eq!((m.width(), m.height()), (1, 15));
        assert!(m.taps().iter().all(|&t| (t - 1.0 / 15.0).abs() < 1e-15));
        let h = make_blur_kernel(&BlurSpec::Motion { length: 5, angle_deg: 0.0 }).unwrap();
        assert_eq!((h.width(), h.height()), (5, 1));
        let g = make_blur_kernel(&BlurSpec::Gaussian { size: 15, std: 15.0 }).unwrap();
        assert!(g.validate().is_ok());
        assert!((g.taps().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for y in 0..15 {
            for x in 0..15 {
                // 90° rotation maps (x, y) to (14 - y, x)
                assert_relative_eq!(g.tap(x, y), g.tap(14 - y, x), epsilon = 1e-15);
            }
        }
        assert!("gaussian:4:1".parse::<BlurSpec>().is_err());
        assert!(make_blur_kernel(&BlurSpec::Gaussian { size: 4, std: 1.0 }).is_err());
        let diag = make_blur_kernel(&BlurSpec::Motion { length: 7, angle_deg: 45.0 }).unwrap();
        assert!(diag.validate().is_ok());
        // 7 samples along the diagonal span ±3/√2, which rounds to ±2
        assert_eq!((diag.width(), diag.height()), (5, 5));
        for y in 0..5 {
            for x in 0..5 {
                let on = diag.tap(x, y) > 0.0;
                assert_eq!(on, x + y == 4, "({x},{y})");
            }
        }
    }

    #[test]
    fn blur_spec_round_trips_through_text() {
        for s in ["none", "gaussian:15:15", "motion:15:90", "gaussian:9:2.5"] {
            let b: BlurSpec = s.parse().unwrap();
            assert_eq!(b.to_string(), s);
        }
        assert!("box:3".parse::<BlurSpec>().is_err());
    }

    #[test]
    fn blur_keeps_constants() {
        let img = ImageField::constant(40, 40, 3, 0.42);
        for spec in [BlurSpec::Gaussian { size: 15, std: 15.0 }, BlurSpec::Motion { length: 15, angle_deg: 90.0 }] {
            let out = blur_image(&img, &make_blur_kernel(&spec).unwrap()).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.42).abs() < 1e-13));
        }
    }

    #[test]
    fn drop_counts_and_determinism() {
        let img = ImageField::constant(100, 100, 2, 0.7);
        let (same, mask) = drop_pixels(&img, 0.0, 3).unwrap();
        assert_eq!(same, img);
        assert!(mask.is_full());
        let (out, mask) = drop_pixels(&img, 0.4, 3).unwrap();
        assert_eq!(mask.observed_count(), 6000);
        for p in 0..10_000 {
            let expect = if mask.is_observed(p) { 0.7 } else { 0.0 };
            assert_eq!(out.plane(0)[p], expect);
            assert_eq!(out.plane(1)[p], expect);
        }
        assert_eq!(drop_pixels(&img, 0.4, 3).unwrap().1, mask);
        assert_ne!(drop_pixels(&img, 0.4, 4).unwrap().1, mask);
        assert!(drop_pixels(&img, 1.0, 3).is_err());
    }

    #[test]
    fn degrade_is_pure() {
        let img = make_scene(SceneKind::Shapes4, 48, 2).unwrap().image;
        let spec = DegradeSpec { noise_variance: 0.01, blur: BlurSpec::Motion { length: 5, angle_deg: 90.0 }, drop_fraction: 0.3, seed: 11 };
        assert_eq!(degrade(&img, &spec).unwrap(), degrade(&img, &spec).unwrap());
    }

    #[test]
    fn scenes_have_expected_levels() {
        for kind in [SceneKind::Shapes2, SceneKind::Barcode, SceneKind::Shapes4, SceneKind::Stars5, SceneKind::Rgb(3), SceneKind::Rgb(6)] {
            let sc = make_scene(kind, 128, 7).unwrap();
            let k = kind.phases();
            assert_eq!(sc.truth.phases(), k);
            assert!(sc.truth.validate().is_ok());
            let mut counts = vec![0; k];
            for &l in sc.truth.labels() {
                counts[l] += 1;
            }
            assert!(counts.iter().all(|&c| c > 0), "{kind}: {counts:?}");
            let n = sc.image.pixels();
            for (p, &l) in sc.truth.labels().iter().enumerate() {
                for j in 0..sc.image.channels() {
                    assert_eq!(sc.image.data()[j * n + p], sc.levels.get(l, j));
                }
            }
            let mut distinct: Vec<u64> = sc.image.plane(0).iter().map(|v| v.to_bits()).collect();
            distinct.sort_unstable();
            distinct.dedup();
            if sc.image.channels() == 1 {
                assert_eq!(distinct.len(), k, "{kind}");
            }
            assert_eq!(make_scene(kind, 128, 7).unwrap(), sc);
        }
        assert!(make_scene(SceneKind::Shapes2, 31, 0).is_err());
    }

    #[test]
    fn scene_names_parse() {
        for s in ["shapes2", "barcode", "shapes4", "stars5", "rgb3", "rgb8"] {
            assert_eq!(s.parse::<SceneKind>().unwrap().to_string(), s);
        }
        assert!("rgb9".parse::<SceneKind>().is_err());
        assert!("circles".parse::<SceneKind>().is_err());
    }
}

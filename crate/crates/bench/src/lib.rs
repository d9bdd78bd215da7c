//! Shared fixtures for the benchmarks.

use segres_core::corrupt::{degrade, make_blur_kernel, make_scene, BlurSpec, DegradeSpec, SceneKind};
use segres_core::{ImageField, LabelMap, ModelParams, ObservationMask, OperatorKind};

pub struct Fixture {
    pub f: ImageField,
    pub omega: ObservationMask,
    pub truth: LabelMap,
    pub params: ModelParams,
}

/// Degraded scene with the operator and phase count filled in.
pub fn fixture(kind: SceneKind, size: usize, spec: DegradeSpec, mu: f64, lambda: f64) -> Fixture {
    let scene = make_scene(kind, size, 1).expect("valid scene");
    let (f, omega) = degrade(&scene.image, &spec).expect("valid degradation");
    let operator = match spec.blur {
        BlurSpec::None => OperatorKind::Identity,
        b => OperatorKind::Convolution(make_blur_kernel(&b).expect("valid blur")),
    };
    let params = ModelParams { mu, lambda, phases: kind.phases(), operator, ..ModelParams::default() };
    Fixture { f, omega, truth: scene.truth, params }
}

pub fn spec(noise: f64, blur: BlurSpec, drop: f64) -> DegradeSpec {
    DegradeSpec { noise_variance: noise, blur, drop_fraction: drop, seed: 3 }
}

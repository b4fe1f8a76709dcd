//! Fixtures shared by the benchmarks.

use gaitstyle::data::Dataset;
use gaitstyle::model::{Dims, ModelSpec, ModulatorMode, StyleModel};
use gaitstyle::motion::{synth_gait, Basis, MotionClip, StyleRecipe};
use gaitstyle::phase::PhaseConfig;
use gaitstyle::runtime::{precompute_style_set, ControllerConfig, ControllerState, StyleTable};

pub fn walk_clip(frames: usize) -> MotionClip {
    let mut c = synth_gait(&StyleRecipe::default(), frames).expect("preset recipe").clip;
    c.style = "neutral".into();
    c
}

/// Untrained model of the given size, a one-style table and a controller
/// seeded from the first training example.
pub struct Session {
    pub model: StyleModel,
    pub table: StyleTable,
    pub state: ControllerState,
}

pub fn session(dims: Dims) -> Session {
    let ds = Dataset::from_clips(vec![walk_clip(600)], &PhaseConfig::default()).expect("synthetic clip");
    let spec = ModelSpec {
        dims,
        mode: ModulatorMode::Film,
        styles: 1,
        dropout: 0.0,
    };
    let norm = ds.normalization().expect("stats");
    let model = StyleModel::new(spec, ds.style_names(), norm, 0)
        .expect("valid spec")
        .with_skeleton(ds.skeleton.clone());
    let emb = precompute_style_set(&model, &ds.styles[0], 600).expect("style windows");
    let table = StyleTable::new(&model, vec![emb]).expect("table");
    let e = &ds.styles[0].examples[0];
    let state = ControllerState::from_input(&model, &e.x, &e.p, Basis::IDENTITY, ControllerConfig::default())
        .expect("seed state");
    Session { model, table, state }
}

//! Shared fixtures for the criterion benchmarks: deterministic scenes and
//! models initialized at the default dimensions, so every bench measures
//! the same workload.

use egocast_core::ego::{EgoConfig, EgoModel};
use egocast_core::loc::{LocConfig, LocModel};
use egocast_core::nn::ParamStore;
use egocast_core::synth::{generate_scene, EgoKind, ScenarioConfig, Scene, TargetKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One scene plus freshly initialized parameters for both streams.
pub struct Fixture {
    pub scene: Scene,
    pub ego_cfg: EgoConfig,
    pub loc_cfg: LocConfig,
    pub params: ParamStore,
}

pub fn fixture() -> Fixture {
    let cfg = ScenarioConfig::for_kinds(EgoKind::RightTurn, TargetKind::CrossingLeft);
    let scene = generate_scene(&cfg, 42).expect("fixture scene generates");
    let ego_cfg = EgoConfig::default();
    let loc_cfg = LocConfig::default();
    let mut params = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    EgoModel::new(ego_cfg).init_params(&mut params, &mut rng);
    LocModel::new(loc_cfg).init_params(&mut params, &mut rng);
    Fixture { scene, ego_cfg, loc_cfg, params }
}

/// `n` scenes cycling through every maneuver/target combination.
pub fn scenes(n: usize) -> Vec<Scene> {
    (0..n)
        .map(|i| {
            let cfg = ScenarioConfig::for_kinds(
                EgoKind::ALL[i % EgoKind::ALL.len()],
                TargetKind::ALL[i % TargetKind::ALL.len()],
            );
            generate_scene(&cfg, 100 + i as u64).expect("bench scene generates")
        })
        .collect()
}

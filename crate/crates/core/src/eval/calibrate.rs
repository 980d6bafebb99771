use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::eval::pope::{evaluate_pope, EvalOptions, SyntheticFactory};
use crate::eval::strategy::Strategy;
use crate::synthetic::{generate_pope_suite, PopeItem, Scene, Setting, SyntheticLvlm, World, WorldConfig};

/// Regular-decoding accuracy band a calibrated suite must land in.
pub const TARGET_ACCURACY: (f64, f64) = (0.60, 0.75);
/// Preferred accuracy inside the band.
pub const TARGET_CENTRE: f64 = 2.0 / 3.0;

pub fn default_boost_grid() -> Vec<f64> {
    (2..=16).map(|i| i as f64 * 0.5).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub boost: f64,
    pub regular_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub boost: f64,
    pub regular_accuracy: f64,
    pub grid: Vec<CalibrationPoint>,
}

/// Picks the visual boost whose greedy Regular accuracy on `suite` falls in
/// [`TARGET_ACCURACY`], closest to [`TARGET_CENTRE`]. Ties go to the
/// smaller boost.
pub fn calibrate_boost(
    model: &Arc<SyntheticLvlm>,
    scenes: &[Scene],
    suite: &[PopeItem],
    grid: &[f64],
    jobs: usize,
) -> Result<Calibration, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::Calibration("empty boost grid".into()));
    }
    let opts = EvalOptions {
        runs: 1,
        jobs,
        ..EvalOptions::default()
    };
    let mut points = Vec::with_capacity(grid.len());
    for &boost in grid {
        let boosted: Vec<Scene> = scenes.iter().map(|s| s.clone().with_boost(boost)).collect();
        let factory = SyntheticFactory::new(model.clone(), &boosted, "synthetic");
        let eval = evaluate_pope(suite, &Strategy::regular(), &factory, &opts)?;
        points.push(CalibrationPoint {
            boost,
            regular_accuracy: eval.metrics.accuracy.mean / 100.0,
        });
    }
    let (lo, hi) = TARGET_ACCURACY;
    let best = points
        .iter()
        .filter(|p| (lo..=hi).contains(&p.regular_accuracy))
        .min_by(|a, b| {
            let da = (a.regular_accuracy - TARGET_CENTRE).abs();
            let db = (b.regular_accuracy - TARGET_CENTRE).abs();
            da.total_cmp(&db).then(a.boost.total_cmp(&b.boost))
        })
        .copied()
        .ok_or_else(|| {
            let seen: Vec<String> = points
                .iter()
                .map(|p| format!("{}: {:.3}", p.boost, p.regular_accuracy))
                .collect();
            EvalError::Calibration(format!("no boost lands in [{lo}, {hi}] ({})", seen.join(", ")))
        })?;
    Ok(Calibration {
        boost: best.boost,
        regular_accuracy: best.regular_accuracy,
        grid: points,
    })
}

/// Everything needed to build a calibrated question suite from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub world: WorldConfig,
    pub n_scenes: usize,
    pub scene_seed: u64,
    pub setting: Setting,
    pub items_per_scene: usize,
    pub suite_seed: u64,
    pub boost_grid: Vec<f64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            n_scenes: 150,
            scene_seed: 123,
            setting: Setting::Adversarial,
            items_per_scene: crate::synthetic::DEFAULT_ITEMS_PER_SCENE,
            suite_seed: 7,
            boost_grid: default_boost_grid(),
        }
    }
}

/// A generated world with evaluation scenes at the calibrated boost and the
/// question suite over them.
#[derive(Debug, Clone)]
pub struct CalibratedSuite {
    pub world: World,
    pub model: Arc<SyntheticLvlm>,
    pub scenes: Vec<Scene>,
    pub suite: Vec<PopeItem>,
    pub calibration: Calibration,
}

impl CalibratedSuite {
    pub fn build(config: &SuiteConfig, jobs: usize) -> Result<Self, EvalError> {
        let world = World::generate(config.world.clone())?;
        Self::from_world(world, config, jobs)
    }

    pub fn from_world(world: World, config: &SuiteConfig, jobs: usize) -> Result<Self, EvalError> {
        let model = world.pope_model()?;
        let scenes = world.sample_scenes(config.n_scenes, config.scene_seed, 0.0)?;
        let suite = generate_pope_suite(
            &scenes,
            &world.grammar,
            &world.stats,
            config.setting,
            config.items_per_scene,
            config.suite_seed,
        )?;
        let calibration = calibrate_boost(&model, &scenes, &suite, &config.boost_grid, jobs)?;
        let scenes = scenes.into_iter().map(|s| s.with_boost(calibration.boost)).collect();
        Ok(Self {
            world,
            model,
            scenes,
            suite,
            calibration,
        })
    }

    pub fn factory(&self) -> SyntheticFactory {
        SyntheticFactory::new(self.model.clone(), &self.scenes, "synthetic")
    }
}

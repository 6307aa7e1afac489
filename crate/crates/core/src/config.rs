//! Run configuration: one TOML document that sizes the model, the
//! generated worlds, the task splits, and the training loop. Presets
//! cover a desk-scale setup, a full-scale parameterization, and a tiny
//! sizing meant for finite-difference checks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::Ablations;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_m: usize,
    pub d_o: usize,
    pub heads: usize,
    pub instr_layers: usize,
    pub view_layers: usize,
    pub object_layers: usize,
    pub fuse_layers: usize,
    pub max_objects: usize,
    pub max_instr_len: usize,
    pub max_steps: usize,
    pub ablations: Ablations,
}

impl Default for ModelSection {
    fn default() -> ModelSection {
        ModelSection {
            d_m: 64,
            d_o: 16,
            heads: 4,
            instr_layers: 2,
            view_layers: 1,
            object_layers: 1,
            fuse_layers: 2,
            max_objects: 2,
            max_instr_len: 64,
            max_steps: 12,
            ablations: Ablations::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub train_worlds: usize,
    pub unseen_worlds: usize,
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub views: usize,
    pub avg_degree: f64,
    pub d_v: usize,
    pub decoy_objects: usize,
}

impl Default for WorldSection {
    fn default() -> WorldSection {
        WorldSection {
            train_worlds: 50,
            unseen_worlds: 10,
            nodes_min: 12,
            nodes_max: 20,
            views: 6,
            avg_degree: 2.5,
            d_v: 24,
            decoy_objects: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub train_per_world: usize,
    pub val_per_world: usize,
    pub min_hops: usize,
    pub max_hops: usize,
}

impl Default for TaskSection {
    fn default() -> TaskSection {
        TaskSection {
            train_per_world: 20,
            val_per_world: 10,
            min_hops: 3,
            max_hops: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub lr: f64,
    pub clip: f64,
    pub log_every: usize,
    pub eval_episodes: usize,
}

impl Default for TrainSection {
    fn default() -> TrainSection {
        TrainSection {
            steps: 2000,
            lr: 0.05,
            clip: 5.0,
            log_every: 25,
            eval_episodes: 100,
        }
    }
}

/// The whole run configuration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub world: WorldSection,
    pub tasks: TaskSection,
    pub train: TrainSection,
}

impl RunConfig {
    /// Desk-scale defaults: trains in minutes on one core.
    pub fn toy() -> RunConfig {
        RunConfig::default()
    }

    /// Full-scale parameterization. Orders of magnitude too large to
    /// train here; kept as the reference sizing.
    pub fn full_scale() -> RunConfig {
        RunConfig {
            model: ModelSection {
                d_m: 768,
                d_o: 120,
                heads: 12,
                instr_layers: 9,
                view_layers: 2,
                object_layers: 2,
                fuse_layers: 4,
                max_objects: 8,
                max_instr_len: 128,
                max_steps: 15,
                ablations: Ablations::default(),
            },
            world: WorldSection {
                train_worlds: 60,
                unseen_worlds: 11,
                nodes_min: 30,
                nodes_max: 40,
                views: 12,
                avg_degree: 3.0,
                d_v: 512,
                decoy_objects: 6,
            },
            tasks: TaskSection {
                train_per_world: 80,
                val_per_world: 20,
                min_hops: 2,
                max_hops: 7,
            },
            train: TrainSection {
                steps: 100_000,
                lr: 1e-4,
                clip: 5.0,
                log_every: 100,
                eval_episodes: 500,
            },
        }
    }

    /// Tiny sizing for finite-difference gradient checks.
    pub fn gradcheck() -> RunConfig {
        RunConfig {
            model: ModelSection {
                d_m: 8,
                d_o: 4,
                heads: 2,
                instr_layers: 1,
                view_layers: 1,
                object_layers: 1,
                fuse_layers: 1,
                max_objects: 1,
                max_instr_len: 32,
                max_steps: 6,
                ablations: Ablations::default(),
            },
            world: WorldSection {
                train_worlds: 1,
                unseen_worlds: 1,
                nodes_min: 4,
                nodes_max: 5,
                views: 4,
                avg_degree: 2.0,
                d_v: 6,
                decoy_objects: 0,
            },
            tasks: TaskSection {
                train_per_world: 2,
                val_per_world: 1,
                min_hops: 2,
                max_hops: 3,
            },
            train: TrainSection {
                steps: 10,
                lr: 0.05,
                clip: 5.0,
                log_every: 1,
                eval_episodes: 2,
            },
        }
    }

    pub fn preset(name: &str) -> Result<RunConfig> {
        match name {
            "toy" => Ok(RunConfig::toy()),
            "full-scale" => Ok(RunConfig::full_scale()),
            "gradcheck" => Ok(RunConfig::gradcheck()),
            other => Err(Error::Config(format!(
                "unknown preset \"{other}\"; expected toy, full-scale, or gradcheck"
            ))),
        }
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::format(origin, format!("bad run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        RunConfig::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let w = &self.world;
        let t = &self.tasks;
        let tr = &self.train;
        let fail = |msg: String| Err(Error::Config(msg));
        if m.heads == 0 || !m.d_m.is_multiple_of(m.heads) {
            return fail(format!("d_m {} must be a positive multiple of heads {}", m.d_m, m.heads));
        }
        if !m.d_o.is_multiple_of(m.heads) {
            return fail(format!("d_o {} must be a multiple of heads {}", m.d_o, m.heads));
        }
        if m.instr_layers == 0 || m.view_layers == 0 || m.object_layers == 0 || m.fuse_layers == 0 {
            return fail("every layer count must be at least 1".into());
        }
        if m.max_objects == 0 {
            return fail("max_objects must be at least 1".into());
        }
        if m.max_instr_len < 16 {
            return fail("max_instr_len must be at least 16".into());
        }
        if w.nodes_min < 4 || w.nodes_min > w.nodes_max {
            return fail(format!(
                "node range {}..={} must start at 4 or more",
                w.nodes_min, w.nodes_max
            ));
        }
        if w.views < 2 || w.d_v == 0 {
            return fail("worlds need views >= 2 and d_v >= 1".into());
        }
        if !(w.avg_degree.is_finite() && w.avg_degree >= 1.0) {
            return fail(format!("avg_degree {} must be at least 1", w.avg_degree));
        }
        if w.train_worlds == 0 {
            return fail("train_worlds must be at least 1".into());
        }
        if t.train_per_world == 0 {
            return fail("train_per_world must be at least 1".into());
        }
        if t.min_hops < 1 || t.min_hops > t.max_hops {
            return fail(format!("bad hop range {}..={}", t.min_hops, t.max_hops));
        }
        if t.max_hops >= w.nodes_min {
            return fail(format!(
                "max_hops {} cannot reach {} on the smallest {}-node world",
                t.max_hops,
                t.max_hops + 1,
                w.nodes_min
            ));
        }
        if m.max_steps < t.max_hops + 1 {
            return fail(format!(
                "max_steps {} cannot finish a {}-hop reference path",
                m.max_steps, t.max_hops
            ));
        }
        if tr.steps == 0 || tr.log_every == 0 {
            return fail("steps and log_every must be at least 1".into());
        }
        if !(tr.lr.is_finite() && tr.lr > 0.0) {
            return fail(format!("lr {} must be positive", tr.lr));
        }
        if !(tr.clip.is_finite() && tr.clip > 0.0) {
            return fail(format!("clip {} must be positive", tr.clip));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["toy", "full-scale", "gradcheck"] {
            RunConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(RunConfig::preset("huge").is_err());
    }

    #[test]
    fn toml_round_trip_preserves_every_field() {
        let cfg = RunConfig::toy();
        let text = cfg.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text, "inline").unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_toml_str("[train]\nsteps = 7\n", "inline").unwrap();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.model, ModelSection::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("[model]\nwidth = 3\n", "inline").unwrap_err();
        assert!(err.to_string().contains("inline"));
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        let mut cfg = RunConfig::toy();
        cfg.model.heads = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::toy();
        cfg.model.max_steps = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::toy();
        cfg.tasks.max_hops = 12;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::toy();
        cfg.train.lr = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::toy();
        cfg.world.nodes_min = 21;
        assert!(cfg.validate().is_err());
    }
}

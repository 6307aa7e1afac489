//! Generated benchmark data: a set of training worlds with train and
//! held-out task splits, a disjoint set of unseen worlds with their own
//! tasks, and the token vocabulary built from the training
//! instructions. Everything round-trips through a directory of JSON
//! files.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::semparse::{tokenize, Lexicon, Vocab};
use crate::simworld::{derived_rng, generate_tasks, Task, TaskGenConfig, World, WorldGenConfig};

const TAG_WORLD: u64 = 0x776f;
const TAG_TASKS: u64 = 0x7473;

const SEEN_STREAM: u64 = 0;
const UNSEEN_STREAM: u64 = 1;
const TRAIN_SPLIT: u64 = 0;
const VAL_SPLIT: u64 = 1;

/// One episode: a task plus the index of its world within the split's
/// world list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub world: usize,
    pub task: Task,
}

/// Which episode list to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    ValSeen,
    ValUnseen,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::ValSeen, Split::ValUnseen];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ValSeen => "val_seen",
            Split::ValUnseen => "val_unseen",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val_seen" => Ok(Split::ValSeen),
            "val_unseen" => Ok(Split::ValUnseen),
            other => Err(Error::Config(format!(
                "unknown split \"{other}\"; expected train, val_seen, or val_unseen"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    config: RunConfig,
    vocab: Vocab,
    train_worlds: usize,
    unseen_worlds: usize,
    episodes: [usize; 3],
}

/// A fully generated benchmark.
#[derive(Debug)]
pub struct Dataset {
    pub seed: u64,
    pub config: RunConfig,
    pub train_worlds: Vec<World>,
    pub unseen_worlds: Vec<World>,
    pub train: Vec<Episode>,
    pub val_seen: Vec<Episode>,
    pub val_unseen: Vec<Episode>,
    pub vocab: Vocab,
}

impl Dataset {
    /// Generates every world and split from one seed.
    pub fn generate(cfg: &RunConfig, lexicon: &Lexicon, seed: u64) -> Result<Dataset> {
        cfg.validate()?;
        let train_worlds =
            gen_worlds(cfg, lexicon, seed, SEEN_STREAM, cfg.world.train_worlds)?;
        let unseen_worlds =
            gen_worlds(cfg, lexicon, seed, UNSEEN_STREAM, cfg.world.unseen_worlds)?;

        let train = gen_split(
            cfg,
            lexicon,
            &train_worlds,
            cfg.tasks.train_per_world,
            seed,
            SEEN_STREAM,
            TRAIN_SPLIT,
        )?;
        let val_seen = gen_split(
            cfg,
            lexicon,
            &train_worlds,
            cfg.tasks.val_per_world,
            seed,
            SEEN_STREAM,
            VAL_SPLIT,
        )?;
        let val_unseen = gen_split(
            cfg,
            lexicon,
            &unseen_worlds,
            cfg.tasks.val_per_world,
            seed,
            UNSEEN_STREAM,
            VAL_SPLIT,
        )?;

        let mut tokens = Vec::new();
        for ep in &train {
            tokens.extend(tokenize(&ep.task.instruction));
        }
        let vocab = Vocab::open(tokens);
        Ok(Dataset {
            seed,
            config: *cfg,
            train_worlds,
            unseen_worlds,
            train,
            val_seen,
            val_unseen,
            vocab,
        })
    }

    pub fn episodes(&self, split: Split) -> &[Episode] {
        match split {
            Split::Train => &self.train,
            Split::ValSeen => &self.val_seen,
            Split::ValUnseen => &self.val_unseen,
        }
    }

    /// The world an episode of `split` runs in.
    pub fn world_of(&self, split: Split, episode: &Episode) -> Result<&World> {
        let worlds = match split {
            Split::Train | Split::ValSeen => &self.train_worlds,
            Split::ValUnseen => &self.unseen_worlds,
        };
        worlds.get(episode.world).ok_or_else(|| {
            Error::contract(format!(
                "episode references world {} of {}",
                episode.world,
                worlds.len()
            ))
        })
    }

    /// Writes the dataset into `dir` (created if missing).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let manifest = Manifest {
            seed: self.seed,
            config: self.config,
            vocab: self.vocab.clone(),
            train_worlds: self.train_worlds.len(),
            unseen_worlds: self.unseen_worlds.len(),
            episodes: [
                self.train.len(),
                self.val_seen.len(),
                self.val_unseen.len(),
            ],
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        write_json(&dir.join("worlds_train.json"), &self.train_worlds)?;
        write_json(&dir.join("worlds_unseen.json"), &self.unseen_worlds)?;
        write_json(&dir.join("tasks_train.json"), &self.train)?;
        write_json(&dir.join("tasks_val_seen.json"), &self.val_seen)?;
        write_json(&dir.join("tasks_val_unseen.json"), &self.val_unseen)?;
        Ok(())
    }

    /// Reads a dataset back and revalidates every world and episode.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        let train_worlds: Vec<World> = read_json(&dir.join("worlds_train.json"))?;
        let unseen_worlds: Vec<World> = read_json(&dir.join("worlds_unseen.json"))?;
        let train: Vec<Episode> = read_json(&dir.join("tasks_train.json"))?;
        let val_seen: Vec<Episode> = read_json(&dir.join("tasks_val_seen.json"))?;
        let val_unseen: Vec<Episode> = read_json(&dir.join("tasks_val_unseen.json"))?;
        if train_worlds.len() != manifest.train_worlds
            || unseen_worlds.len() != manifest.unseen_worlds
            || [train.len(), val_seen.len(), val_unseen.len()] != manifest.episodes
        {
            return Err(Error::format(
                dir.display().to_string(),
                "manifest counts do not match the data files",
            ));
        }
        for world in train_worlds.iter().chain(&unseen_worlds) {
            world.validate()?;
        }
        let ds = Dataset {
            seed: manifest.seed,
            config: manifest.config,
            train_worlds,
            unseen_worlds,
            train,
            val_seen,
            val_unseen,
            vocab: manifest.vocab,
        };
        for split in Split::ALL {
            for ep in ds.episodes(split) {
                let world = ds.world_of(split, ep)?;
                world.path_length(&ep.task.path)?;
            }
        }
        Ok(ds)
    }
}

fn gen_worlds(
    cfg: &RunConfig,
    lexicon: &Lexicon,
    seed: u64,
    stream: u64,
    count: usize,
) -> Result<Vec<World>> {
    let mut worlds = Vec::with_capacity(count);
    for i in 0..count {
        let mut size_rng = derived_rng(seed, TAG_WORLD, stream, i as u64);
        let nodes = size_rng.random_range(cfg.world.nodes_min..=cfg.world.nodes_max);
        let wcfg = WorldGenConfig {
            nodes,
            views: cfg.world.views,
            avg_degree: cfg.world.avg_degree,
            d_v: cfg.world.d_v,
            decoy_objects: cfg.world.decoy_objects,
        };
        let world_seed = size_rng.random_range(0..u64::MAX);
        worlds.push(World::generate(&wcfg, world_seed, lexicon)?);
    }
    Ok(worlds)
}

fn gen_split(
    cfg: &RunConfig,
    lexicon: &Lexicon,
    worlds: &[World],
    per_world: usize,
    seed: u64,
    stream: u64,
    split_tag: u64,
) -> Result<Vec<Episode>> {
    let tcfg = TaskGenConfig {
        count: per_world,
        min_hops: cfg.tasks.min_hops,
        max_hops: cfg.tasks.max_hops,
    };
    let mut episodes = Vec::with_capacity(worlds.len() * per_world);
    for (w, world) in worlds.iter().enumerate() {
        let mut tseed_rng = derived_rng(seed, TAG_TASKS, stream * 2 + split_tag, w as u64);
        let task_seed = tseed_rng.random_range(0..u64::MAX);
        for task in generate_tasks(world, lexicon, &tcfg, task_seed)? {
            episodes.push(Episode { world: w, task });
        }
    }
    Ok(episodes)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path.display().to_string(), format!("serialize: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), format!("parse: {e}")))
}

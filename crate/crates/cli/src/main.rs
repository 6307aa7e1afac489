//! Command-line front end: generate benchmarks, train the navigation
//! model, evaluate policies, run ablation grids, and dump parses and
//! episode traces. Every command is deterministic in `--seed`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use vln_core::agent::{random_rollout, Ablations, Model, ModelConfig, Policy, Rollout};
use vln_core::config::RunConfig;
use vln_core::dataset::{Dataset, Episode, Split};
use vln_core::param::ParamStore;
use vln_core::semparse::Lexicon;
use vln_core::simworld::{derived_rng, episode_metrics, Metrics, World, SUCCESS_RADIUS};
use vln_core::trace::{TraceRecord, TraceWriter};
use vln_core::{Error, Result};

const TAG_INIT: u64 = 0x696e_6974;
const TAG_PICK: u64 = 0x7069_636b;
const TAG_EVAL: u64 = 0x6576_616c;
const TAG_CELL: u64 = 0x6365_6c6c;

#[derive(Parser)]
#[command(name = "vln", version, about = "Instruction-guided graph navigation workbench")]
struct Cli {
    /// Base seed every derived random stream hangs off.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Landmark and direction lexicon as TOML; built-in when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    lexicon: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a benchmark directory of worlds, tasks, and vocabulary.
    Gen(GenArgs),
    /// Train a model on a generated benchmark.
    Train(TrainArgs),
    /// Evaluate a trained model or a model-free policy on one split.
    Eval(EvalArgs),
    /// Train the full model and each ablation, then tabulate metrics.
    Ablate(AblateArgs),
    /// Parse an instruction and print the recovered phrases as JSON.
    Parse(ParseArgs),
    /// Replay episodes and write one JSON line per decision.
    Trace(TraceArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Directory to write the benchmark into.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Named configuration: toy, full-scale, or gradcheck.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Run configuration as TOML; overrides the preset entirely.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overwrite an existing benchmark directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Benchmark directory from `vln gen`.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Directory for checkpoint.bin, state.json, and loss.tsv.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Total optimizer steps; the benchmark's configured count when omitted.
    #[arg(long)]
    steps: Option<usize>,
    /// Learning rate override.
    #[arg(long)]
    lr: Option<f64>,
    /// Gradient clip override.
    #[arg(long)]
    clip: Option<f64>,
    /// Progress log interval override.
    #[arg(long)]
    log_every: Option<usize>,
    /// Continue a run from its saved checkpoint and state.
    #[arg(long)]
    resume: bool,
    /// Overwrite existing training outputs.
    #[arg(long, conflicts_with = "resume")]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Benchmark directory from `vln gen`.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Training output directory holding checkpoint.bin. Not needed for
    /// the random policy.
    #[arg(long, value_name = "DIR")]
    model: Option<PathBuf>,
    /// Split to score: train, val_seen, or val_unseen.
    #[arg(long, default_value = "val_seen")]
    split: Split,
    /// Action policy: greedy, sample, oracle, or random.
    #[arg(long, default_value = "greedy")]
    policy: Policy,
    /// Cap on episodes scored; the whole split when omitted.
    #[arg(long)]
    episodes: Option<usize>,
    /// Print the metrics as JSON instead of one line per metric.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AblateArgs {
    /// Benchmark directory from `vln gen`.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// File for the tab-separated results table; stdout only when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Optimizer steps per cell; the benchmark's configured count when omitted.
    #[arg(long)]
    steps: Option<usize>,
    /// Split to score each cell on.
    #[arg(long, default_value = "val_seen")]
    split: Split,
    /// Cap on episodes scored per cell.
    #[arg(long)]
    episodes: Option<usize>,
    /// Overwrite an existing results table.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ParseArgs {
    /// Instruction text to parse.
    text: String,
}

#[derive(Args)]
struct TraceArgs {
    /// Benchmark directory from `vln gen`.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Training output directory holding checkpoint.bin.
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    /// Split to replay.
    #[arg(long, default_value = "val_seen")]
    split: Split,
    /// Action policy: greedy, sample, or oracle.
    #[arg(long, default_value = "greedy")]
    policy: Policy,
    /// Episodes to replay from the start of the split.
    #[arg(long, default_value_t = 5)]
    episodes: usize,
    /// File for the JSON lines; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Overwrite an existing trace file.
    #[arg(long)]
    force: bool,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error[{}]: {}", e.class(), e);
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let lexicon = match &cli.lexicon {
        Some(path) => Lexicon::from_path(path)?,
        None => Lexicon::default_lexicon(),
    };
    match cli.cmd {
        Cmd::Gen(a) => gen(seed, &lexicon, a),
        Cmd::Train(a) => train(cli.seed, &lexicon, a),
        Cmd::Eval(a) => eval(seed, &lexicon, a),
        Cmd::Ablate(a) => ablate(seed, &lexicon, a),
        Cmd::Parse(a) => parse(&lexicon, a),
        Cmd::Trace(a) => trace(seed, &lexicon, a),
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn gen(seed: u64, lexicon: &Lexicon, a: GenArgs) -> Result<()> {
    let cfg = match (&a.config, &a.preset) {
        (Some(path), _) => RunConfig::from_path(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::toy(),
    };
    refuse_overwrite(&a.out.join("manifest.json"), a.force)?;
    let ds = Dataset::generate(&cfg, lexicon, seed)?;
    ds.save(&a.out)?;
    println!(
        "wrote {} ({} train worlds, {} unseen worlds, {}/{}/{} episodes, {} tokens)",
        a.out.display(),
        ds.train_worlds.len(),
        ds.unseen_worlds.len(),
        ds.train.len(),
        ds.val_seen.len(),
        ds.val_unseen.len(),
        ds.vocab.len()
    );
    Ok(())
}

fn model_config(cfg: &RunConfig, vocab_size: usize, num_labels: usize) -> ModelConfig {
    ModelConfig {
        d_v: cfg.world.d_v,
        d_m: cfg.model.d_m,
        d_o: cfg.model.d_o,
        heads: cfg.model.heads,
        instr_layers: cfg.model.instr_layers,
        view_layers: cfg.model.view_layers,
        object_layers: cfg.model.object_layers,
        fuse_layers: cfg.model.fuse_layers,
        max_objects: cfg.model.max_objects,
        num_labels,
        vocab_size,
        max_instr_len: cfg.model.max_instr_len,
        views: cfg.world.views,
        max_steps: cfg.model.max_steps,
        ablations: cfg.model.ablations,
    }
}

fn build_model(seed: u64, mc: ModelConfig) -> Result<(ParamStore, Model)> {
    let mut store = ParamStore::new();
    let mut rng = derived_rng(seed, TAG_INIT, 0, 0);
    let model = Model::new(&mut store, mc, &mut rng)?;
    Ok((store, model))
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TrainState {
    schema: u32,
    seed: u64,
    next_step: usize,
}

fn train(seed_flag: Option<u64>, lexicon: &Lexicon, a: TrainArgs) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let mut cfg = ds.config;
    if let Some(v) = a.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.clip {
        cfg.train.clip = v;
    }
    if let Some(v) = a.log_every {
        cfg.train.log_every = v;
    }
    cfg.validate()?;

    fs::create_dir_all(&a.out).map_err(|e| Error::io(a.out.display().to_string(), e))?;
    let ckpt_path = a.out.join("checkpoint.bin");
    let state_path = a.out.join("state.json");
    let loss_path = a.out.join("loss.tsv");

    let mut start_step = 0;
    let seed;
    if a.resume {
        let state: TrainState = read_json(&state_path)?;
        if let Some(s) = seed_flag {
            if s != state.seed {
                return Err(Error::Config(format!(
                    "--seed {s} disagrees with the run being resumed (seed {})",
                    state.seed
                )));
            }
        }
        seed = state.seed;
        start_step = state.next_step;
        if start_step >= cfg.train.steps {
            println!(
                "nothing to do: {} of {} steps already done",
                start_step, cfg.train.steps
            );
            return Ok(());
        }
    } else {
        seed = seed_flag.unwrap_or(0);
        for p in [&ckpt_path, &state_path, &loss_path] {
            refuse_overwrite(p, a.force)?;
        }
    }

    let mc = model_config(&cfg, ds.vocab.len(), lexicon.categories().len());
    let (store, model) = build_model(seed, mc)?;
    if a.resume {
        store.load(&ckpt_path)?;
    }

    let episodes = ds.episodes(Split::Train);
    let mut loss_file = fs::OpenOptions::new()
        .create(true)
        .append(a.resume)
        .truncate(!a.resume)
        .write(true)
        .open(&loss_path)
        .map_err(|e| Error::io(loss_path.display().to_string(), e))?;
    if !a.resume {
        writeln!(loss_file, "step\tloss\tgrad_norm")
            .map_err(|e| Error::io(loss_path.display().to_string(), e))?;
    }

    for step in start_step..cfg.train.steps {
        let idx = derived_rng(seed, TAG_PICK, step as u64, 0).random_range(0..episodes.len());
        let ep = &episodes[idx];
        let world = ds.world_of(Split::Train, ep)?;
        let stats = model.train_step(
            &store,
            world,
            &ep.task,
            lexicon,
            &ds.vocab,
            cfg.train.lr,
            Some(cfg.train.clip),
        )?;
        writeln!(loss_file, "{}\t{}\t{}", step, stats.loss, stats.grad_norm)
            .map_err(|e| Error::io(loss_path.display().to_string(), e))?;
        if step % cfg.train.log_every == 0 || step + 1 == cfg.train.steps {
            log::info!(
                "step {step}/{} loss {:.4} grad_norm {:.4}",
                cfg.train.steps,
                stats.loss,
                stats.grad_norm
            );
        }
    }
    loss_file
        .flush()
        .map_err(|e| Error::io(loss_path.display().to_string(), e))?;

    store.save(&ckpt_path)?;
    write_json(
        &state_path,
        &TrainState {
            schema: 1,
            seed,
            next_step: cfg.train.steps,
        },
    )?;
    println!(
        "trained to step {} ({} parameters); wrote {}",
        cfg.train.steps,
        store.total_elements(),
        ckpt_path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn score_split(
    model: Option<&Model>,
    ds: &Dataset,
    lexicon: &Lexicon,
    split: Split,
    policy: Policy,
    cap: Option<usize>,
    seed: u64,
    max_steps: usize,
) -> Result<Metrics> {
    let episodes = ds.episodes(split);
    let count = cap.unwrap_or(episodes.len()).min(episodes.len());
    if count == 0 {
        return Err(Error::Config(format!(
            "split {} has no episodes to score",
            split.name()
        )));
    }
    let mut outcomes = Vec::with_capacity(count);
    for (i, ep) in episodes.iter().take(count).enumerate() {
        let world = ds.world_of(split, ep)?;
        let ep_seed = derived_rng(seed, TAG_EVAL, i as u64, 0).random::<u64>();
        let rollout = run_episode(model, world, ep, lexicon, ds, policy, ep_seed, max_steps)?;
        outcomes.push(episode_metrics(
            world,
            ep.task.start,
            ep.task.goal,
            &rollout.trajectory,
            rollout.grounding_correct,
            SUCCESS_RADIUS,
        )?);
    }
    Metrics::aggregate(&outcomes)
}

#[allow(clippy::too_many_arguments)]
fn run_episode(
    model: Option<&Model>,
    world: &World,
    ep: &Episode,
    lexicon: &Lexicon,
    ds: &Dataset,
    policy: Policy,
    ep_seed: u64,
    max_steps: usize,
) -> Result<Rollout> {
    match (policy, model) {
        (Policy::Random, _) => random_rollout(world, &ep.task, ep_seed, max_steps),
        (_, Some(m)) => m.rollout(world, &ep.task, lexicon, &ds.vocab, policy, ep_seed),
        (_, None) => Err(Error::Config(format!(
            "policy {policy:?} needs --model; only random runs without one"
        ))),
    }
}

fn print_metrics(m: &Metrics, json: bool) -> Result<()> {
    if json {
        let text = serde_json::to_string_pretty(m)
            .map_err(|e| Error::format("metrics", format!("serialize: {e}")))?;
        println!("{text}");
    } else {
        println!("episodes {}", m.episodes);
        println!("NE {}", m.ne);
        println!("SR {}", m.sr);
        println!("OSR {}", m.osr);
        println!("SPL {}", m.spl);
        println!("RGS {}", m.rgs);
        println!("RGSPL {}", m.rgspl);
    }
    Ok(())
}

fn load_trained(
    dir: &Path,
    cfg: &RunConfig,
    ds: &Dataset,
    lexicon: &Lexicon,
) -> Result<(ParamStore, Model)> {
    let state: TrainState = read_json(&dir.join("state.json"))?;
    let mc = model_config(cfg, ds.vocab.len(), lexicon.categories().len());
    let (store, model) = build_model(state.seed, mc)?;
    store.load(&dir.join("checkpoint.bin"))?;
    Ok((store, model))
}

fn eval(seed: u64, lexicon: &Lexicon, a: EvalArgs) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let cfg = ds.config;
    let loaded = match &a.model {
        Some(dir) => Some(load_trained(dir, &cfg, &ds, lexicon)?),
        None => None,
    };
    let metrics = score_split(
        loaded.as_ref().map(|(_, m)| m),
        &ds,
        lexicon,
        a.split,
        a.policy,
        a.episodes,
        seed,
        cfg.model.max_steps,
    )?;
    print_metrics(&metrics, a.json)
}

fn ablation_cells() -> Vec<(&'static str, Ablations)> {
    let off = Ablations::default();
    vec![
        ("full", off),
        ("no_instruction_gate", Ablations { no_instruction_gate: true, ..off }),
        ("no_objects", Ablations { no_objects: true, ..off }),
        ("uniform_pool", Ablations { uniform_pool: true, ..off }),
        ("no_memory_update", Ablations { no_memory_update: true, ..off }),
        ("memory_drop_global", Ablations { memory_drop_global: true, ..off }),
        ("memory_drop_local", Ablations { memory_drop_local: true, ..off }),
        ("memory_drop_text", Ablations { memory_drop_text: true, ..off }),
    ]
}

fn ablate(seed: u64, lexicon: &Lexicon, a: AblateArgs) -> Result<()> {
    if let Some(path) = &a.out {
        refuse_overwrite(path, a.force)?;
    }
    let ds = Dataset::load(&a.data)?;
    let mut cfg = ds.config;
    if let Some(v) = a.steps {
        cfg.train.steps = v;
    }
    cfg.validate()?;
    let episodes = ds.episodes(Split::Train);

    let mut table = String::from("cell\tNE\tSR\tOSR\tSPL\tRGS\tRGSPL\n");
    for (ci, (name, ablations)) in ablation_cells().into_iter().enumerate() {
        let cell_seed = derived_rng(seed, TAG_CELL, ci as u64, 0).random::<u64>();
        let mut mc = model_config(&cfg, ds.vocab.len(), lexicon.categories().len());
        mc.ablations = ablations;
        let (store, model) = build_model(cell_seed, mc)?;
        for step in 0..cfg.train.steps {
            let idx =
                derived_rng(cell_seed, TAG_PICK, step as u64, 0).random_range(0..episodes.len());
            let ep = &episodes[idx];
            let world = ds.world_of(Split::Train, ep)?;
            model.train_step(
                &store,
                world,
                &ep.task,
                lexicon,
                &ds.vocab,
                cfg.train.lr,
                Some(cfg.train.clip),
            )?;
        }
        let m = score_split(
            Some(&model),
            &ds,
            lexicon,
            a.split,
            Policy::Greedy,
            a.episodes,
            cell_seed,
            cfg.model.max_steps,
        )?;
        log::info!("cell {name}: SR {} SPL {}", m.sr, m.spl);
        table.push_str(&format!(
            "{name}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            m.ne, m.sr, m.osr, m.spl, m.rgs, m.rgspl
        ));
    }
    print!("{table}");
    if let Some(path) = &a.out {
        fs::write(path, &table).map_err(|e| Error::io(path.display().to_string(), e))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn parse(lexicon: &Lexicon, a: ParseArgs) -> Result<()> {
    let parsed = lexicon.parse(&a.text);
    let text = serde_json::to_string_pretty(&parsed)
        .map_err(|e| Error::format("parse", format!("serialize: {e}")))?;
    println!("{text}");
    Ok(())
}

fn trace(seed: u64, lexicon: &Lexicon, a: TraceArgs) -> Result<()> {
    if a.policy == Policy::Random {
        return Err(Error::Config(
            "the random policy makes no model decisions to trace".into(),
        ));
    }
    if let Some(path) = &a.out {
        refuse_overwrite(path, a.force)?;
    }
    let ds = Dataset::load(&a.data)?;
    let cfg = ds.config;
    let (_store, model) = load_trained(&a.model, &cfg, &ds, lexicon)?;
    let episodes = ds.episodes(a.split);
    let count = a.episodes.min(episodes.len());

    let sink: Box<dyn Write> = match &a.out {
        Some(path) => Box::new(
            fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut writer = TraceWriter::new(sink);
    for (i, ep) in episodes.iter().take(count).enumerate() {
        let world = ds.world_of(a.split, ep)?;
        let ep_seed = derived_rng(seed, TAG_EVAL, i as u64, 0).random::<u64>();
        let (_, steps) =
            model.rollout_traced(world, &ep.task, lexicon, &ds.vocab, a.policy, ep_seed)?;
        for step in steps {
            writer.record(&TraceRecord::new(i, ep.task.id, step))?;
        }
    }
    let lines = writer.lines();
    writer.finish()?;
    if let Some(path) = &a.out {
        println!("wrote {lines} decisions to {}", path.display());
    }
    Ok(())
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), format!("parse: {e}")))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path.display().to_string(), format!("serialize: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

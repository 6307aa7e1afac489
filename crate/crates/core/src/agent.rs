//! The navigation agent: instruction encoding, panorama encoding, the
//! topological memory, cross-modal fusion of both decision branches,
//! the blended global/local action distribution, object grounding, and
//! the training and rollout loops that drive all of it.
//!
//! Each decision step scores stopping plus every unvisited node the
//! memory knows about. A global branch reads the whole memory; a local
//! branch reads the current panorama's unvisited neighbors; a learned
//! scalar blends the two, with local scores scattered into the global
//! action list and absent entries borrowing the local stop score.
//! Choosing a non-adjacent node moves the agent along the shortest path
//! through nodes it has already visited.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asv::{AsvConfig, PanoramaEncoder, PanoramaEncoding};
use crate::error::{Error, Result};
use crate::igl::{IglConfig, InstructionEncoder};
use crate::memgraph::{Gaa, LocalCandidate, MemoryFusion, TopoMemory};
use crate::nn::{CrossModalBlock, FeedForward, Linear};
use crate::param::ParamStore;
use crate::semparse::{Lexicon, Vocab};
use crate::simworld::{derived_rng, Task, World};
use crate::tensor::{KeyMask, Tensor};

/// Feature switches that disable individual architectural pieces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Use the plain contextual instruction encoding instead of the
    /// phrase-gated dual encoding.
    pub no_instruction_gate: bool,
    /// Strip objects from every observation.
    pub no_objects: bool,
    /// Pool memory node features with uniform weights instead of
    /// learned ones.
    pub uniform_pool: bool,
    /// Freeze the recurrent memory row at zero.
    pub no_memory_update: bool,
    /// Zero the global summary fed to the memory update.
    pub memory_drop_global: bool,
    /// Zero the local summary fed to the memory update.
    pub memory_drop_local: bool,
    /// Zero the instruction summary fed to the memory update.
    pub memory_drop_text: bool,
}

/// Architecture sizing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_v: usize,
    pub d_m: usize,
    pub d_o: usize,
    pub heads: usize,
    pub instr_layers: usize,
    pub view_layers: usize,
    pub object_layers: usize,
    pub fuse_layers: usize,
    pub max_objects: usize,
    pub num_labels: usize,
    pub vocab_size: usize,
    pub max_instr_len: usize,
    pub views: usize,
    /// Decision steps allowed per episode.
    pub max_steps: usize,
    pub ablations: Ablations,
}

impl ModelConfig {
    fn igl(&self) -> IglConfig {
        IglConfig {
            vocab_size: self.vocab_size,
            d_m: self.d_m,
            heads: self.heads,
            layers: self.instr_layers,
            max_len: self.max_instr_len,
        }
    }

    fn asv(&self) -> AsvConfig {
        AsvConfig {
            d_v: self.d_v,
            d_m: self.d_m,
            d_o: self.d_o,
            heads: self.heads,
            view_layers: self.view_layers,
            object_layers: self.object_layers,
            max_objects: self.max_objects,
            num_labels: self.num_labels,
            views_per_node: self.views,
        }
    }
}

/// Instruction state shared by every step of one episode.
pub struct InstructionState {
    /// Keys and values offered to both cross-modal branches.
    pub kf: Tensor,
    /// Instruction summary row fed to memory updates and grounding.
    pub cls: Tensor,
    /// Mean gate openness, for tracing; 0 when the gate is ablated.
    pub mean_gate: f64,
}

/// One decision: the action distribution and the rows the memory
/// update needs.
pub struct Decision {
    logits: Tensor,
    c_global: Tensor,
    c_local: Tensor,
    /// Probability per action; slot 0 is stop.
    pub probs: Vec<f64>,
    /// World node id per non-stop action, parallel to `probs[1..]`.
    pub action_ids: Vec<usize>,
    /// Blend weight on the global branch.
    pub sigma: f64,
}

/// How rollouts choose actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Highest probability, ties to the lowest slot.
    Greedy,
    /// Sample from the action distribution.
    Sample,
    /// Follow the task's reference path.
    Oracle,
    /// Uniform over available actions, without running the model.
    Random,
}

impl std::str::FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Policy> {
        match s {
            "greedy" => Ok(Policy::Greedy),
            "sample" => Ok(Policy::Sample),
            "oracle" => Ok(Policy::Oracle),
            "random" => Ok(Policy::Random),
            other => Err(Error::Config(format!(
                "unknown policy \"{other}\"; expected greedy, sample, oracle, or random"
            ))),
        }
    }
}

/// One decision of a traced episode, in the order the agent saw it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Decision index within the episode, from 0.
    pub step: usize,
    /// Node the agent stood on when deciding.
    pub node: usize,
    /// Blend weight on the global branch.
    pub sigma: f64,
    /// Probability assigned to stopping.
    pub stop_prob: f64,
    /// World node id per non-stop action.
    pub actions: Vec<usize>,
    /// Probability per action; slot 0 is stop, then `actions` in order.
    pub probs: Vec<f64>,
    /// Node moved to, or `None` when the agent stopped.
    pub chosen: Option<usize>,
}

/// One finished episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    /// Every node occupied, in order, including pass-through nodes.
    pub trajectory: Vec<usize>,
    /// Decision steps taken.
    pub steps: usize,
    /// Whether the agent chose to stop before the step cap.
    pub stopped: bool,
    /// Label id the agent grounded at its stop node, if it could.
    pub grounded_label: Option<usize>,
    /// Whether that label matches the task's goal category.
    pub grounding_correct: bool,
}

/// One optimizer step's report.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainStats {
    pub loss: f64,
    pub grad_norm: f64,
}

const TAG_POLICY: u64 = 0x706f;

pub struct Model {
    cfg: ModelConfig,
    igl: InstructionEncoder,
    asv: PanoramaEncoder,
    gaa: Gaa,
    rmf: MemoryFusion,
    step_table: Tensor,
    cls_g: Tensor,
    cls_l: Tensor,
    w_angle: Tensor,
    b_angle: Tensor,
    fuse_g: Vec<CrossModalBlock>,
    fuse_l: Vec<CrossModalBlock>,
    stop_g: FeedForward,
    score_g: Linear,
    stop_l: FeedForward,
    score_l: Linear,
    sigma: Linear,
    w_ground: Tensor,
}

impl Model {
    pub fn new(store: &mut ParamStore, cfg: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Model> {
        if cfg.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        let d = cfg.d_m;
        let igl = InstructionEncoder::new(store, "igl", cfg.igl(), rng)?;
        let asv = PanoramaEncoder::new(store, "asv", cfg.asv(), rng)?;
        let gaa = Gaa::new(store, "mem.gaa", d, rng)?;
        let rmf = MemoryFusion::new(store, "mem.rmf", d, rng)?;
        let step_table = store.xavier("mem.steps", cfg.max_steps + 2, d, rng)?;
        let cls_g = store.xavier("mem.cls_g", 1, d, rng)?;
        let cls_l = store.xavier("mem.cls_l", 1, d, rng)?;
        let w_angle = store.xavier("mem.angle.w", 4, d, rng)?;
        let b_angle = store.zeros_param("mem.angle.b", &[1, d])?;
        let mut fuse_g = Vec::new();
        let mut fuse_l = Vec::new();
        for i in 0..cfg.fuse_layers {
            fuse_g.push(CrossModalBlock::new(
                store,
                &format!("fuse_g.{i}"),
                d,
                cfg.heads,
                rng,
            )?);
            fuse_l.push(CrossModalBlock::new(
                store,
                &format!("fuse_l.{i}"),
                d,
                cfg.heads,
                rng,
            )?);
        }
        let stop_g = FeedForward::with_default_hidden(store, "dec.g.stop", d, d, rng)?;
        let score_g = Linear::new(store, "dec.g.score", d, 1, true, rng)?;
        let stop_l = FeedForward::with_default_hidden(store, "dec.l.stop", d, d, rng)?;
        let score_l = Linear::new(store, "dec.l.score", d, 1, true, rng)?;
        let sigma = Linear::new(store, "dec.sigma", 2 * d, 1, true, rng)?;
        let w_ground = store.xavier("ground.w", d, cfg.d_o, rng)?;
        Ok(Model {
            cfg,
            igl,
            asv,
            gaa,
            rmf,
            step_table,
            cls_g,
            cls_l,
            w_angle,
            b_angle,
            fuse_g,
            fuse_l,
            stop_g,
            score_g,
            stop_l,
            score_l,
            sigma,
            w_ground,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Encodes and phrase-gates an instruction once per episode. The
    /// phrase spans come from parsing the text with `lexicon`, not from
    /// any stored annotation.
    pub fn prepare_instruction(
        &self,
        text: &str,
        lexicon: &Lexicon,
        vocab: &Vocab,
    ) -> Result<InstructionState> {
        let parsed = lexicon.parse(text);
        if parsed.tokens.is_empty() {
            return Err(Error::contract("instruction has no tokens"));
        }
        let ids: Vec<usize> = parsed
            .tokens
            .iter()
            .map(|t| vocab.id(t))
            .collect::<Result<_>>()?;
        let encoding = self.igl.encode(&ids)?;
        if self.cfg.ablations.no_instruction_gate {
            let kf = encoding.context.clone();
            let cls = kf.slice_rows(0, 1)?;
            return Ok(InstructionState {
                kf,
                cls,
                mean_gate: 0.0,
            });
        }
        let dir_rows = encoding.rows_for_tokens(&parsed.direction_token_ids())?;
        let lm_rows = encoding.rows_for_tokens(&parsed.landmark_token_ids())?;
        let gated = self.igl.fuse(&encoding, &dir_rows, &lm_rows)?;
        let gate = gated.gate.to_vec();
        let mean_gate = gate.iter().sum::<f64>() / gate.len() as f64;
        let cls = gated.fused.slice_rows(0, 1)?;
        Ok(InstructionState {
            kf: gated.fused,
            cls,
            mean_gate,
        })
    }

    /// Encodes the panorama at `node` and records the visit in memory.
    pub fn observe(
        &self,
        world: &World,
        memory: &mut TopoMemory,
        node: usize,
        step: usize,
    ) -> Result<PanoramaEncoding> {
        let mut obs = world.observation(node)?;
        if self.cfg.ablations.no_objects {
            for view in &mut obs.views {
                view.objects.clear();
            }
        }
        let pano = self.asv.encode(&obs)?;
        let mut neighbors = Vec::new();
        for &nb in world.neighbors(node)? {
            neighbors.push((nb, world.view_facing(node, nb)?));
        }
        memory.observe(node, &pano.fused, &neighbors, step)?;
        Ok(pano)
    }

    fn local_candidates(
        &self,
        world: &World,
        memory: &TopoMemory,
        node: usize,
    ) -> Result<Vec<LocalCandidate>> {
        let mut cands = Vec::new();
        for &nb in world.neighbors(node)? {
            if memory.status(nb) == Some(crate::memgraph::NodeStatus::Visited) {
                continue;
            }
            cands.push(LocalCandidate {
                world_id: nb,
                view: world.view_facing(node, nb)?,
                rel: world.rel_angles(node, nb)?,
            });
        }
        Ok(cands)
    }

    fn branch_scores(
        &self,
        seq: Tensor,
        rows_of_candidates: &[usize],
        instr: &InstructionState,
        blocks: &[CrossModalBlock],
        stop_head: &FeedForward,
        scorer: &Linear,
    ) -> Result<(Tensor, Tensor)> {
        let (rows, _) = seq.dims();
        let (kv_rows, _) = instr.kf.dims();
        let cross_mask = KeyMask::all_visible(rows, kv_rows);
        let self_mask = KeyMask::all_visible(rows, rows);
        let mut h = seq;
        for block in blocks {
            h = block.forward(&h, &instr.kf, &cross_mask, &self_mask)?;
        }
        let cls = h.slice_rows(0, 1)?;
        let stop_score = scorer.forward(&stop_head.forward(&cls)?)?;
        let scores = if rows_of_candidates.is_empty() {
            stop_score
        } else {
            let cand_rows = h.gather_rows(rows_of_candidates)?;
            let cand_scores = scorer.forward(&cand_rows)?;
            Tensor::concat_rows(&[&stop_score, &cand_scores])?
        };
        Ok((scores, cls))
    }

    /// Runs both branches at the current node and blends them into one
    /// distribution over stop plus every unvisited known node.
    pub fn decide(
        &self,
        world: &World,
        memory: &TopoMemory,
        node: usize,
        pano: &PanoramaEncoding,
        instr: &InstructionState,
    ) -> Result<Decision> {
        let uniform = self.cfg.ablations.uniform_pool;
        let (g_seq, g_layout) =
            memory.global_sequence(&self.gaa, uniform, &self.cls_g, &self.step_table)?;
        let frontier_rows = g_layout.frontier_rows();
        let frontier_ids = g_layout.frontier_ids();
        let (g_scores, c_global) = self.branch_scores(
            g_seq,
            &frontier_rows,
            instr,
            &self.fuse_g,
            &self.stop_g,
            &self.score_g,
        )?;

        let cands = self.local_candidates(world, memory, node)?;
        let (l_seq, _) =
            memory.local_sequence(&self.cls_l, &pano.fused, &cands, &self.w_angle, &self.b_angle)?;
        let cand_rows: Vec<usize> = (1..=cands.len()).collect();
        let (l_scores, c_local) = self.branch_scores(
            l_seq,
            &cand_rows,
            instr,
            &self.fuse_l,
            &self.stop_l,
            &self.score_l,
        )?;

        let mut map = vec![0usize; 1 + frontier_ids.len()];
        for (slot, id) in frontier_ids.iter().enumerate() {
            if let Some(pos) = cands.iter().position(|c| c.world_id == *id) {
                map[slot + 1] = pos + 1;
            }
        }
        let l_backfilled = l_scores.gather_rows(&map)?;

        let sigma_in = Tensor::concat_cols(&[&c_global, &c_local])?;
        let sigma = self.sigma.forward(&sigma_in)?.sigmoid()?;
        let blended = g_scores
            .mul(&sigma)?
            .add(&l_backfilled.mul(&sigma.one_minus()?)?)?;
        let logits = blended.transpose()?;
        let probs = logits.softmax(crate::tensor::Axis::Row)?.to_vec();
        Ok(Decision {
            logits,
            c_global,
            c_local,
            probs,
            action_ids: frontier_ids,
            sigma: sigma.item()?,
        })
    }

    /// Negative log probability of one action under the decision.
    pub fn action_loss(&self, decision: &Decision, action_slot: usize) -> Result<Tensor> {
        let visible = vec![true; decision.probs.len()];
        decision
            .logits
            .masked_log_softmax_at(&visible, action_slot)?
            .neg()
    }

    /// Folds the step's branch summaries and the instruction row into
    /// the recurrent memory state.
    pub fn update_memory(
        &self,
        memory: &mut TopoMemory,
        decision: &Decision,
        instr: &InstructionState,
    ) -> Result<()> {
        let ab = self.cfg.ablations;
        if ab.no_memory_update {
            return Ok(());
        }
        let zero = Tensor::zeros(&[1, self.cfg.d_m])?;
        let cg = if ab.memory_drop_global {
            &zero
        } else {
            &decision.c_global
        };
        let cl = if ab.memory_drop_local {
            &zero
        } else {
            &decision.c_local
        };
        let ck = if ab.memory_drop_text {
            &zero
        } else {
            &instr.cls
        };
        let updated = self.rmf.forward(cg, cl, ck)?;
        memory.set_memory_state(updated)
    }

    fn grounding_scores(&self, pano: &PanoramaEncoding, instr: &InstructionState) -> Result<Tensor> {
        let query = instr.cls.matmul(&self.w_ground)?;
        query.matmul(&pano.objects.transpose()?)
    }

    /// Slot the goal object occupies at the goal node: objects are laid
    /// out view-major and ranked by area within each view, and every
    /// node's most prominent object outranks its neighbors in the same
    /// view.
    fn gold_slot(&self, world: &World, goal: usize) -> Result<usize> {
        let salient = world.salient(goal)?;
        Ok(salient.view * self.cfg.max_objects)
    }

    /// Teacher-forced episode loss: cross entropy of each reference
    /// action, plus grounding cross entropy at the stop step.
    pub fn teacher_loss(
        &self,
        world: &World,
        task: &Task,
        lexicon: &Lexicon,
        vocab: &Vocab,
    ) -> Result<Tensor> {
        let hops = task.path.len() - 1;
        if hops + 1 > self.cfg.max_steps {
            return Err(Error::contract(format!(
                "reference path of {hops} hops exceeds max_steps {}",
                self.cfg.max_steps
            )));
        }
        let instr = self.prepare_instruction(&task.instruction, lexicon, vocab)?;
        let mut memory = TopoMemory::new(self.cfg.d_m)?;
        let mut total: Option<Tensor> = None;
        for step in 0..=hops {
            let node = task.path[step];
            let pano = self.observe(world, &mut memory, node, step)?;
            let decision = self.decide(world, &memory, node, &pano, &instr)?;
            let slot = if step == hops {
                0
            } else {
                let next = task.path[step + 1];
                1 + decision
                    .action_ids
                    .iter()
                    .position(|&id| id == next)
                    .ok_or_else(|| {
                        Error::contract(format!(
                            "reference node {next} is not an available action"
                        ))
                    })?
            };
            let mut step_loss = self.action_loss(&decision, slot)?;
            if step == hops && !self.cfg.ablations.no_objects {
                let scores = self.grounding_scores(&pano, &instr)?;
                let gold = self.gold_slot(world, task.goal)?;
                let ground_loss = scores.masked_log_softmax_at(&pano.live, gold)?.neg()?;
                step_loss = step_loss.add(&ground_loss)?;
            }
            total = Some(match total {
                None => step_loss,
                Some(t) => t.add(&step_loss)?,
            });
            if step < hops {
                self.update_memory(&mut memory, &decision, &instr)?;
            }
        }
        Ok(total.expect("at least one step"))
    }

    /// One optimizer step on one task.
    #[allow(clippy::too_many_arguments)]
    pub fn train_step(
        &self,
        store: &ParamStore,
        world: &World,
        task: &Task,
        lexicon: &Lexicon,
        vocab: &Vocab,
        lr: f64,
        clip: Option<f64>,
    ) -> Result<TrainStats> {
        store.zero_grads();
        let loss = self.teacher_loss(world, task, lexicon, vocab)?;
        loss.backward()?;
        let grad_norm = store.sgd_step(lr, clip)?;
        Ok(TrainStats {
            loss: loss.item()?,
            grad_norm,
        })
    }

    /// Runs one episode under `policy`. `seed` drives sampling; each
    /// step's draw depends only on the seed, the task id, and the step
    /// index.
    pub fn rollout(
        &self,
        world: &World,
        task: &Task,
        lexicon: &Lexicon,
        vocab: &Vocab,
        policy: Policy,
        seed: u64,
    ) -> Result<Rollout> {
        self.rollout_inner(world, task, lexicon, vocab, policy, seed, None)
    }

    /// Like [`Model::rollout`], also returning the decision taken at
    /// every step. The random policy never consults the model, so it
    /// has no decisions to trace and is rejected here.
    pub fn rollout_traced(
        &self,
        world: &World,
        task: &Task,
        lexicon: &Lexicon,
        vocab: &Vocab,
        policy: Policy,
        seed: u64,
    ) -> Result<(Rollout, Vec<TraceStep>)> {
        if policy == Policy::Random {
            return Err(Error::Config(
                "the random policy makes no model decisions to trace".into(),
            ));
        }
        let mut trace = Vec::new();
        let rollout =
            self.rollout_inner(world, task, lexicon, vocab, policy, seed, Some(&mut trace))?;
        Ok((rollout, trace))
    }

    #[allow(clippy::too_many_arguments)]
    fn rollout_inner(
        &self,
        world: &World,
        task: &Task,
        lexicon: &Lexicon,
        vocab: &Vocab,
        policy: Policy,
        seed: u64,
        mut trace: Option<&mut Vec<TraceStep>>,
    ) -> Result<Rollout> {
        if policy == Policy::Random {
            return random_rollout(world, task, seed, self.cfg.max_steps);
        }
        let instr = self.prepare_instruction(&task.instruction, lexicon, vocab)?;
        let mut memory = TopoMemory::new(self.cfg.d_m)?;
        let mut trajectory = vec![task.start];
        let mut visited: BTreeSet<usize> = BTreeSet::new();
        let mut node = task.start;
        let mut steps = 0;
        let mut stopped = false;
        let mut pano = self.observe(world, &mut memory, node, 0)?;
        visited.insert(node);
        loop {
            let decision = self.decide(world, &memory, node, &pano, &instr)?;
            let slot = match policy {
                Policy::Greedy => argmax(&decision.probs),
                Policy::Sample => {
                    let mut rng = derived_rng(seed, TAG_POLICY, task.id as u64, steps as u64);
                    sample_slot(&decision.probs, rng.random_range(0.0..1.0))
                }
                Policy::Oracle => {
                    let pos = task
                        .path
                        .iter()
                        .position(|&p| p == node)
                        .ok_or_else(|| Error::contract("oracle left the reference path"))?;
                    if pos + 1 == task.path.len() {
                        0
                    } else {
                        let next = task.path[pos + 1];
                        1 + decision
                            .action_ids
                            .iter()
                            .position(|&id| id == next)
                            .ok_or_else(|| {
                                Error::contract(format!(
                                    "oracle target {next} is not an available action"
                                ))
                            })?
                    }
                }
                Policy::Random => unreachable!("handled above"),
            };
            if let Some(rec) = trace.as_deref_mut() {
                rec.push(TraceStep {
                    step: steps,
                    node,
                    sigma: decision.sigma,
                    stop_prob: decision.probs[0],
                    actions: decision.action_ids.clone(),
                    probs: decision.probs.clone(),
                    chosen: (slot > 0).then(|| decision.action_ids[slot - 1]),
                });
            }
            if slot == 0 {
                stopped = true;
                break;
            }
            let target = decision.action_ids[slot - 1];
            let mut allowed = visited.clone();
            allowed.insert(target);
            let (leg, _) = world.shortest_path_over(node, target, &allowed)?;
            trajectory.extend_from_slice(&leg[1..]);
            self.update_memory(&mut memory, &decision, &instr)?;
            node = target;
            visited.insert(node);
            steps += 1;
            if steps >= self.cfg.max_steps {
                break;
            }
            pano = self.observe(world, &mut memory, node, steps)?;
        }
        if !stopped && steps >= self.cfg.max_steps && trajectory.last() == Some(&node) {
            pano = match memory.status(node) {
                Some(_) if steps < self.cfg.max_steps => pano,
                _ => self.observe(world, &mut memory, node, self.cfg.max_steps.min(steps))?,
            };
        }
        let (grounded_label, grounding_correct) = if self.cfg.ablations.no_objects {
            (None, false)
        } else {
            let scores = self.grounding_scores(&pano, &instr)?.to_vec();
            let mut best: Option<usize> = None;
            for (i, &live) in pano.live.iter().enumerate() {
                if live && best.is_none_or(|b| scores[i] > scores[b]) {
                    best = Some(i);
                }
            }
            match best {
                Some(slot) => {
                    let label = pano.labels[slot];
                    let goal = world.label_vocab().id(&task.goal_category)?;
                    (Some(label), label == goal)
                }
                None => (None, false),
            }
        };
        Ok(Rollout {
            trajectory,
            steps,
            stopped,
            grounded_label,
            grounding_correct,
        })
    }
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn sample_slot(probs: &[f64], draw: f64) -> usize {
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if draw < cum {
            return i;
        }
    }
    probs.len() - 1
}

/// Model-free baseline: at each step picks uniformly among stopping and
/// the unvisited known nodes, tracking the same memory bookkeeping the
/// agent would, and grounds a uniformly chosen object at the stop node.
pub fn random_rollout(world: &World, task: &Task, seed: u64, max_steps: usize) -> Result<Rollout> {
    let mut visited: BTreeSet<usize> = BTreeSet::new();
    let mut frontier: BTreeSet<usize> = BTreeSet::new();
    let mut trajectory = vec![task.start];
    let mut node = task.start;
    let mut steps = 0;
    let mut stopped = false;
    visited.insert(node);
    for &nb in world.neighbors(node)? {
        frontier.insert(nb);
    }
    loop {
        let actions: Vec<usize> = frontier.iter().copied().collect();
        let mut rng = derived_rng(seed, TAG_POLICY, task.id as u64, steps as u64);
        let pick = rng.random_range(0..=actions.len());
        if pick == 0 {
            stopped = true;
            break;
        }
        let target = actions[pick - 1];
        let mut allowed = visited.clone();
        allowed.insert(target);
        let (leg, _) = world.shortest_path_over(node, target, &allowed)?;
        trajectory.extend_from_slice(&leg[1..]);
        node = target;
        visited.insert(node);
        frontier.remove(&node);
        for &nb in world.neighbors(node)? {
            if !visited.contains(&nb) {
                frontier.insert(nb);
            }
        }
        steps += 1;
        if steps >= max_steps {
            break;
        }
    }
    let objects = &world.node(node)?.objects;
    let mut rng = derived_rng(seed, TAG_POLICY, task.id as u64, u64::MAX);
    let picked = &objects[rng.random_range(0..objects.len())];
    let goal = world.label_vocab().id(&task.goal_category)?;
    Ok(Rollout {
        trajectory,
        steps,
        stopped,
        grounded_label: Some(picked.label),
        grounding_correct: picked.label == goal,
    })
}

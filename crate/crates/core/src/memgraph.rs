//! Topological memory over visited and frontier nodes, score-weighted
//! pooling, sequence assembly for the two decision branches, and the
//! recurrent memory row they share.
//!
//! Nodes enter the memory in first-seen order and keep their position
//! for the rest of the episode. A visited node owns its latest panorama
//! (revisits replace it); a frontier node accumulates the view rows
//! through which visited neighbors have seen it, keyed by observer so a
//! revisit replaces rather than duplicates. Node features come from
//! [`Gaa`] pooling over whichever row set a node owns.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::LayerNorm;
use crate::param::ParamStore;
use crate::tensor::{Axis, Tensor};

/// Score-weighted pooling: rows are scored by `tanh(x w + b)`, the
/// scores softmax-normalized over the rows, and the rows combined by
/// those weights. With zero parameters every weight is exactly `1/N`,
/// and the combination accumulates row contributions in ascending row
/// order, which makes the zero-parameter case bitwise equal to a mean
/// accumulated the same way.
pub struct Gaa {
    w: Tensor,
    b: Tensor,
}

impl Gaa {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_m: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Gaa> {
        Ok(Gaa {
            w: store.xavier(&format!("{prefix}.w"), d_m, 1, rng)?,
            b: store.zeros_param(&format!("{prefix}.b"), &[1, 1])?,
        })
    }

    /// Pools `(n, d)` rows into `(1, d)`.
    pub fn aggregate(&self, rows: &Tensor) -> Result<Tensor> {
        let scores = rows.matmul(&self.w)?.add(&self.b)?.tanh_act()?;
        let weights = scores.softmax(Axis::Col)?;
        weights.transpose()?.matmul(rows)
    }

    /// Pools with forced-uniform weights (the pooling ablation); the
    /// combination path and accumulation order match [`Gaa::aggregate`].
    pub fn aggregate_uniform(rows: &Tensor) -> Result<Tensor> {
        let (n, _) = rows.dims();
        let weights = Tensor::constant(&[1, n], vec![1.0 / n as f64; n])?;
        weights.matmul(rows)
    }
}

/// Recurrent memory update: three summary rows concatenated, projected
/// back to model width, and normalized.
pub struct MemoryFusion {
    w: Tensor,
    b: Tensor,
    ln: LayerNorm,
}

impl MemoryFusion {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_m: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<MemoryFusion> {
        Ok(MemoryFusion {
            w: store.xavier(&format!("{prefix}.w"), 3 * d_m, d_m, rng)?,
            b: store.zeros_param(&format!("{prefix}.b"), &[1, d_m])?,
            ln: LayerNorm::new(store, &format!("{prefix}.ln"), d_m)?,
        })
    }

    /// `LN([c_global, c_local, c_instruction] W + b)`.
    pub fn forward(&self, c_global: &Tensor, c_local: &Tensor, c_instr: &Tensor) -> Result<Tensor> {
        let joint = Tensor::concat_cols(&[c_global, c_local, c_instr])?;
        self.ln.forward(&joint.matmul(&self.w)?.add(&self.b)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeStatus {
    Visited,
    Frontier,
}

struct MemNode {
    world_id: usize,
    status: NodeStatus,
    last_visit_step: Option<usize>,
    panorama: Option<Tensor>,
    observer_rows: BTreeMap<(usize, usize), Tensor>,
}

/// A neighbor of the current node offered to the local branch.
#[derive(Clone, Debug)]
pub struct LocalCandidate {
    pub world_id: usize,
    /// View of the current panorama that faces this neighbor.
    pub view: usize,
    /// `[sin h, cos h, sin e, cos e]` of that view.
    pub rel: [f64; 4],
}

/// Row bookkeeping for an assembled sequence.
#[derive(Clone, Debug)]
pub struct SeqLayout {
    pub rows: usize,
    pub mem_row: usize,
    /// Per content row: (row index, world node id, status).
    pub entries: Vec<(usize, usize, NodeStatus)>,
}

impl SeqLayout {
    /// Rows of frontier nodes, in sequence order.
    pub fn frontier_rows(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|(_, _, s)| *s == NodeStatus::Frontier)
            .map(|(r, _, _)| *r)
            .collect()
    }

    /// World ids of frontier nodes, in sequence order.
    pub fn frontier_ids(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|(_, _, s)| *s == NodeStatus::Frontier)
            .map(|(_, w, _)| *w)
            .collect()
    }
}

/// Episode-scoped memory of the explored graph.
pub struct TopoMemory {
    nodes: Vec<MemNode>,
    index: BTreeMap<usize, usize>,
    memory_state: Tensor,
    d_m: usize,
}

impl TopoMemory {
    /// Fresh memory with a zero recurrent row.
    pub fn new(d_m: usize) -> Result<TopoMemory> {
        Ok(TopoMemory {
            nodes: Vec::new(),
            index: BTreeMap::new(),
            memory_state: Tensor::zeros(&[1, d_m])?,
            d_m,
        })
    }

    fn ensure_node(&mut self, world_id: usize) -> usize {
        if let Some(&pos) = self.index.get(&world_id) {
            return pos;
        }
        let pos = self.nodes.len();
        self.nodes.push(MemNode {
            world_id,
            status: NodeStatus::Frontier,
            last_visit_step: None,
            panorama: None,
            observer_rows: BTreeMap::new(),
        });
        self.index.insert(world_id, pos);
        pos
    }

    /// Records a visit: stores (or replaces) the node's panorama, marks
    /// it visited at `step`, and registers one observing row per
    /// neighbor, replacing any earlier rows this node contributed.
    pub fn observe(
        &mut self,
        world_id: usize,
        panorama: &Tensor,
        neighbors: &[(usize, usize)],
        step: usize,
    ) -> Result<()> {
        let (views, cols) = panorama.dims();
        if cols != self.d_m {
            return Err(Error::contract(format!(
                "panorama width {cols} does not match memory width {}",
                self.d_m
            )));
        }
        for &(neighbor, view) in neighbors {
            if view >= views {
                return Err(Error::contract(format!(
                    "view {view} out of range for panorama of {views} views"
                )));
            }
            if neighbor == world_id {
                return Err(Error::contract(format!(
                    "node {world_id} cannot neighbor itself"
                )));
            }
        }
        let pos = self.ensure_node(world_id);
        self.nodes[pos].status = NodeStatus::Visited;
        self.nodes[pos].last_visit_step = Some(step);
        self.nodes[pos].panorama = Some(panorama.clone());
        for &(neighbor, view) in neighbors {
            let npos = self.ensure_node(neighbor);
            let row = panorama.slice_rows(view, view + 1)?;
            self.nodes[npos].observer_rows.insert((world_id, view), row);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn status(&self, world_id: usize) -> Option<NodeStatus> {
        self.index.get(&world_id).map(|&p| self.nodes[p].status)
    }

    /// Frontier node ids in first-seen order.
    pub fn frontier(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.status == NodeStatus::Frontier)
            .map(|n| n.world_id)
            .collect()
    }

    /// Current recurrent memory row, `(1, d_m)`.
    pub fn memory_state(&self) -> &Tensor {
        &self.memory_state
    }

    /// Replaces the recurrent memory row.
    pub fn set_memory_state(&mut self, state: Tensor) -> Result<()> {
        if state.dims() != (1, self.d_m) {
            return Err(Error::contract(format!(
                "memory row must be (1, {}), got {:?}",
                self.d_m,
                state.shape()
            )));
        }
        self.memory_state = state;
        Ok(())
    }

    /// Pools one feature row for a node: its own panorama when visited,
    /// the rows through which it has been observed when frontier.
    pub fn node_feature(&self, gaa: &Gaa, uniform_pool: bool, world_id: usize) -> Result<Tensor> {
        let pos = *self
            .index
            .get(&world_id)
            .ok_or_else(|| Error::contract(format!("node {world_id} not in memory")))?;
        let node = &self.nodes[pos];
        let rows: Tensor = match node.status {
            NodeStatus::Visited => node
                .panorama
                .as_ref()
                .expect("visited node always has a panorama")
                .clone(),
            NodeStatus::Frontier => {
                let parts: Vec<&Tensor> = node.observer_rows.values().collect();
                if parts.is_empty() {
                    return Err(Error::contract(format!(
                        "frontier node {world_id} has no observers"
                    )));
                }
                Tensor::concat_rows(&parts)?
            }
        };
        if uniform_pool {
            Gaa::aggregate_uniform(&rows)
        } else {
            gaa.aggregate(&rows)
        }
    }

    /// Assembles the global sequence: a leading classification row, one
    /// pooled row per memory node (plus a visit-recency embedding), and
    /// the recurrent memory row last. Frontier nodes take recency slot
    /// 0; a node visited at step `t` takes slot `t + 1`.
    pub fn global_sequence(
        &self,
        gaa: &Gaa,
        uniform_pool: bool,
        cls: &Tensor,
        step_table: &Tensor,
    ) -> Result<(Tensor, SeqLayout)> {
        if self.nodes.is_empty() {
            return Err(Error::contract("memory is empty; observe a node first"));
        }
        let (max_steps, _) = step_table.dims();
        let mut feature_rows = Vec::with_capacity(self.nodes.len());
        let mut slots = Vec::with_capacity(self.nodes.len());
        let mut entries = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            feature_rows.push(self.node_feature(gaa, uniform_pool, node.world_id)?);
            let slot = match node.status {
                NodeStatus::Frontier => 0,
                NodeStatus::Visited => {
                    let s = node.last_visit_step.expect("visited node has a step") + 1;
                    if s >= max_steps {
                        return Err(Error::contract(format!(
                            "visit step {s} exceeds recency table of {max_steps} rows"
                        )));
                    }
                    s
                }
            };
            slots.push(slot);
            entries.push((1 + i, node.world_id, node.status));
        }
        let refs: Vec<&Tensor> = feature_rows.iter().collect();
        let features = Tensor::concat_rows(&refs)?;
        let recency = step_table.gather_rows(&slots)?;
        let content = features.add(&recency)?;
        let seq = Tensor::concat_rows(&[cls, &content, &self.memory_state])?;
        let layout = SeqLayout {
            rows: self.nodes.len() + 2,
            mem_row: self.nodes.len() + 1,
            entries,
        };
        Ok((seq, layout))
    }

    /// Assembles the local sequence: classification row, one row per
    /// offered neighbor (its facing view row plus a projected angle
    /// feature), and the recurrent memory row last.
    pub fn local_sequence(
        &self,
        cls: &Tensor,
        panorama: &Tensor,
        candidates: &[LocalCandidate],
        w_angle: &Tensor,
        b_angle: &Tensor,
    ) -> Result<(Tensor, SeqLayout)> {
        let (views, _) = panorama.dims();
        let mut entries = Vec::with_capacity(candidates.len());
        let mut rows: Vec<Tensor> = Vec::with_capacity(candidates.len());
        for (i, cand) in candidates.iter().enumerate() {
            if cand.view >= views {
                return Err(Error::contract(format!(
                    "local candidate view {} out of range for {views} views",
                    cand.view
                )));
            }
            let view_row = panorama.slice_rows(cand.view, cand.view + 1)?;
            let angles = Tensor::constant(&[1, 4], cand.rel.to_vec())?;
            let pos = angles.matmul(w_angle)?.add(b_angle)?;
            rows.push(view_row.add(&pos)?);
            let status = self
                .status(cand.world_id)
                .unwrap_or(NodeStatus::Frontier);
            entries.push((1 + i, cand.world_id, status));
        }
        let mut parts: Vec<&Tensor> = vec![cls];
        parts.extend(rows.iter());
        parts.push(&self.memory_state);
        let seq = Tensor::concat_rows(&parts)?;
        let layout = SeqLayout {
            rows: candidates.len() + 2,
            mem_row: candidates.len() + 1,
            entries,
        };
        Ok((seq, layout))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_rows(r: usize, c: usize, seed: u64) -> Tensor {
        let mut rg = rng(seed);
        Tensor::constant(
            &[r, c],
            (0..r * c).map(|_| rg.random_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_parameter_pooling_is_the_documented_mean() {
        let mut store = ParamStore::new();
        let gaa = Gaa::new(&mut store, "gaa", 6, &mut rng(1)).unwrap();
        let w = store.get("gaa.w").unwrap();
        w.set_data(&vec![0.0; w.len()]).unwrap();
        let rows = random_rows(5, 6, 2);
        let pooled = gaa.aggregate(&rows).unwrap().to_vec();

        let data = rows.to_vec();
        let inv = 1.0 / 5.0;
        let mut expect = vec![0.0; 6];
        for i in 0..5 {
            for j in 0..6 {
                expect[j] += inv * data[i * 6 + j];
            }
        }
        assert_eq!(pooled, expect);

        let uniform = Gaa::aggregate_uniform(&rows).unwrap().to_vec();
        assert_eq!(pooled, uniform);

        for j in 0..6 {
            let naive: f64 = (0..5).map(|i| data[i * 6 + j]).sum::<f64>() / 5.0;
            assert!((pooled[j] - naive).abs() <= 1e-12);
        }
    }

    #[test]
    fn pooled_row_stays_in_the_column_envelope() {
        let mut store = ParamStore::new();
        let gaa = Gaa::new(&mut store, "gaa", 4, &mut rng(3)).unwrap();
        for seed in 0..20 {
            let rows = random_rows(6, 4, 100 + seed);
            let pooled = gaa.aggregate(&rows).unwrap().to_vec();
            let data = rows.to_vec();
            for j in 0..4 {
                let col: Vec<f64> = (0..6).map(|i| data[i * 4 + j]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-12;
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-12;
                assert!(pooled[j] >= lo && pooled[j] <= hi);
            }
        }
    }

    #[test]
    fn pooling_gradient_matches_finite_difference() {
        let mut store = ParamStore::new();
        let gaa = Gaa::new(&mut store, "gaa", 3, &mut rng(4)).unwrap();
        let rows = random_rows(4, 3, 5);
        let probe = random_rows(1, 3, 6);
        let run = || {
            gaa.aggregate(&rows)
                .unwrap()
                .mul(&probe)
                .unwrap()
                .sum_all()
                .unwrap()
        };
        run().backward().unwrap();
        let analytic = store.snapshot_grads();
        let report = crate::gradcheck::check_gradients(
            &store,
            &analytic,
            || run().item(),
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passes(1e-6), "worst {}", report.max_rel_err);
    }

    fn panorama(views: usize, d: usize, seed: u64) -> Tensor {
        random_rows(views, d, seed)
    }

    #[test]
    fn nodes_keep_first_seen_order_across_status_changes() {
        let mut mem = TopoMemory::new(4).unwrap();
        let pa = panorama(3, 4, 10);
        mem.observe(7, &pa, &[(3, 0), (9, 2)], 0).unwrap();
        assert_eq!(mem.len(), 3);
        assert_eq!(mem.status(7), Some(NodeStatus::Visited));
        assert_eq!(mem.status(3), Some(NodeStatus::Frontier));
        assert_eq!(mem.frontier(), vec![3, 9]);

        let pb = panorama(3, 4, 11);
        mem.observe(3, &pb, &[(7, 1), (5, 2)], 1).unwrap();
        assert_eq!(mem.frontier(), vec![9, 5]);
        assert_eq!(mem.status(3), Some(NodeStatus::Visited));

        let mut store = ParamStore::new();
        let gaa = Gaa::new(&mut store, "gaa", 4, &mut rng(12)).unwrap();
        let cls = random_rows(1, 4, 13);
        let steps = random_rows(8, 4, 14);
        let (_seq, layout) = mem.global_sequence(&gaa, false, &cls, &steps).unwrap();
        let ids: Vec<usize> = layout.entries.iter().map(|(_, w, _)| *w).collect();
        assert_eq!(ids, vec![7, 3, 9, 5]);
        assert_eq!(layout.frontier_ids(), vec![9, 5]);
        assert_eq!(layout.frontier_rows(), vec![3, 4]);
    }

    #[test]
    fn frontier_feature_pools_exactly_its_observer_rows() {
        let mut mem = TopoMemory::new(4).unwrap();
        let pa = panorama(3, 4, 20);
        let pb = panorama(3, 4, 21);
        mem.observe(0, &pa, &[(2, 1)], 0).unwrap();
        mem.observe(1, &pb, &[(2, 0), (0, 2)], 1).unwrap();

        let mut store = ParamStore::new();
        let gaa = Gaa::new(&mut store, "gaa", 4, &mut rng(22)).unwrap();
        let feature = mem.node_feature(&gaa, false, 2).unwrap();

        let row_a = pa.slice_rows(1, 2).unwrap();
        let row_b = pb.slice_rows(0, 1).unwrap();
        let stacked = Tensor::concat_rows(&[&row_a, &row_b]).unwrap();
        let expect = gaa.aggregate(&stacked).unwrap();
        assert_eq!(feature.to_vec(), expect.to_vec());
    }

    #[test]
    fn revisit_replaces_panorama_and_observer_rows() {
        let mut mem = TopoMemory::new(4).unwrap();
        let first = panorama(3, 4, 30);
        mem.observe(0, &first, &[(1, 0)], 0).unwrap();
        let second = panorama(3, 4, 31);
        mem.observe(0, &second, &[(1, 0)], 2).unwrap();

        let mut store = ParamStore::new();
        let gaa = Gaa::new(&mut store, "gaa", 4, &mut rng(32)).unwrap();
        let own = mem.node_feature(&gaa, false, 0).unwrap();
        assert_eq!(own.to_vec(), gaa.aggregate(&second).unwrap().to_vec());

        let frontier = mem.node_feature(&gaa, false, 1).unwrap();
        let row = second.slice_rows(0, 1).unwrap();
        assert_eq!(frontier.to_vec(), gaa.aggregate(&row).unwrap().to_vec());

        let cls = random_rows(1, 4, 33);
        let steps = random_rows(8, 4, 34);
        let (seq, layout) = mem.global_sequence(&gaa, false, &cls, &steps).unwrap();
        assert_eq!(layout.rows, 4);
        let expect_row1: Vec<f64> = own
            .to_vec()
            .iter()
            .zip(&steps.to_vec()[3 * 4..4 * 4])
            .map(|(a, b)| a + b)
            .collect();
        let seq_data = seq.to_vec();
        assert_eq!(&seq_data[4..8], expect_row1.as_slice());
    }

    #[test]
    fn global_sequence_frames_content_with_cls_and_memory() {
        let mut mem = TopoMemory::new(4).unwrap();
        mem.observe(5, &panorama(2, 4, 40), &[(6, 1)], 0).unwrap();
        let mut store = ParamStore::new();
        let gaa = Gaa::new(&mut store, "gaa", 4, &mut rng(41)).unwrap();
        let cls = random_rows(1, 4, 42);
        let steps = random_rows(4, 4, 43);
        let (seq, layout) = mem.global_sequence(&gaa, false, &cls, &steps).unwrap();
        assert_eq!(seq.shape(), &[4, 4]);
        assert_eq!(layout.mem_row, 3);
        let data = seq.to_vec();
        assert_eq!(&data[0..4], cls.to_vec().as_slice());
        assert_eq!(&data[12..16], mem.memory_state().to_vec().as_slice());

        let frontier_feature = mem.node_feature(&gaa, false, 6).unwrap();
        let expect: Vec<f64> = frontier_feature
            .to_vec()
            .iter()
            .zip(&steps.to_vec()[0..4])
            .map(|(a, b)| a + b)
            .collect();
        assert_eq!(&data[8..12], expect.as_slice());
    }

    #[test]
    fn memory_row_updates_flow_into_both_sequences() {
        let mut mem = TopoMemory::new(4).unwrap();
        let pano = panorama(3, 4, 50);
        mem.observe(0, &pano, &[(1, 0)], 0).unwrap();
        let mut store = ParamStore::new();
        let fusion = MemoryFusion::new(&mut store, "rmf", 4, &mut rng(51)).unwrap();
        let cg = random_rows(1, 4, 52);
        let cl = random_rows(1, 4, 53);
        let ck = random_rows(1, 4, 54);
        let updated = fusion.forward(&cg, &cl, &ck).unwrap();
        mem.set_memory_state(updated.clone()).unwrap();

        let gaa = Gaa::new(&mut store, "gaa", 4, &mut rng(55)).unwrap();
        let cls = random_rows(1, 4, 56);
        let steps = random_rows(4, 4, 57);
        let (gseq, glayout) = mem.global_sequence(&gaa, false, &cls, &steps).unwrap();
        let gdata = gseq.to_vec();
        assert_eq!(
            &gdata[glayout.mem_row * 4..(glayout.mem_row + 1) * 4],
            updated.to_vec().as_slice()
        );

        let w_angle = random_rows(4, 4, 58);
        let b_angle = random_rows(1, 4, 59);
        let cands = vec![LocalCandidate {
            world_id: 1,
            view: 0,
            rel: [0.0, 1.0, 0.0, 1.0],
        }];
        let (lseq, llayout) = mem
            .local_sequence(&cls, &pano, &cands, &w_angle, &b_angle)
            .unwrap();
        let ldata = lseq.to_vec();
        assert_eq!(
            &ldata[llayout.mem_row * 4..(llayout.mem_row + 1) * 4],
            updated.to_vec().as_slice()
        );
    }

    #[test]
    fn local_sequence_adds_projected_angles_to_view_rows() {
        let mem = {
            let mut m = TopoMemory::new(3).unwrap();
            m.observe(0, &panorama(2, 3, 60), &[(1, 1)], 0).unwrap();
            m
        };
        let pano = panorama(2, 3, 61);
        let w_angle = random_rows(4, 3, 62);
        let b_angle = random_rows(1, 3, 63);
        let cls = random_rows(1, 3, 64);
        let rel = [0.5f64.sin(), 0.5f64.cos(), 0.0, 1.0];
        let cands = vec![LocalCandidate {
            world_id: 1,
            view: 1,
            rel,
        }];
        let (seq, layout) = mem
            .local_sequence(&cls, &pano, &cands, &w_angle, &b_angle)
            .unwrap();
        assert_eq!(seq.shape(), &[3, 3]);
        assert_eq!(layout.entries, vec![(1, 1, NodeStatus::Frontier)]);

        let angles = Tensor::constant(&[1, 4], rel.to_vec()).unwrap();
        let proj = angles.matmul(&w_angle).unwrap().add(&b_angle).unwrap();
        let expect = pano
            .slice_rows(1, 2)
            .unwrap()
            .add(&proj)
            .unwrap();
        assert_eq!(&seq.to_vec()[3..6], expect.to_vec().as_slice());
    }

    #[test]
    fn contract_violations_are_reported() {
        let mut mem = TopoMemory::new(4).unwrap();
        let pano = panorama(2, 4, 70);
        assert!(mem.observe(0, &pano, &[(1, 5)], 0).is_err());
        assert!(mem.observe(0, &pano, &[(0, 1)], 0).is_err());
        let narrow = panorama(2, 3, 71);
        assert!(mem.observe(0, &narrow, &[], 0).is_err());

        let mut store = ParamStore::new();
        let gaa = Gaa::new(&mut store, "gaa", 4, &mut rng(72)).unwrap();
        assert!(mem.node_feature(&gaa, false, 9).is_err());
        let cls = random_rows(1, 4, 73);
        let steps = random_rows(2, 4, 74);
        assert!(mem.global_sequence(&gaa, false, &cls, &steps).is_err());

        mem.observe(0, &pano, &[(1, 1)], 5).unwrap();
        let err = mem.global_sequence(&gaa, false, &cls, &steps).unwrap_err();
        assert!(err.to_string().contains("recency"));
        assert!(mem.set_memory_state(panorama(2, 4, 75)).is_err());
    }
}

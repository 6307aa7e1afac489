//! Panorama encoding: per-view visual features enriched with geometry
//! and with the objects visible in each view.
//!
//! A node observation is a fixed ring of views. Each view contributes a
//! projected feature vector plus a projected geometry vector (heading
//! and elevation as sines and cosines, a constant marker, and a
//! navigability flag). Objects are ranked by area, the largest
//! `max_objects` per view are embedded from their scalar geometry and a
//! learned label table, contextualized by self-attention across the
//! whole panorama, and averaged per view over the slots that hold real
//! objects. View stream and object stream fuse into one row per view.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{EncoderBlock, LayerNorm};
use crate::param::ParamStore;
use crate::tensor::{KeyMask, Tensor};

/// Scalar features carried by every object observation.
pub const OBJECT_SCALARS: usize = 8;

/// Index of the area feature inside [`ObjectObs::scalars`]; object
/// selection ranks by it.
pub const AREA_INDEX: usize = 0;

/// One object seen in one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectObs {
    /// Id in the closed label vocabulary.
    pub label: usize,
    /// Geometry and salience scalars; `scalars[AREA_INDEX]` is the
    /// apparent area.
    pub scalars: [f64; OBJECT_SCALARS],
}

/// One view of a panorama.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewObs {
    /// Raw visual features, length `d_v`.
    pub features: Vec<f64>,
    /// Heading and elevation relative to the agent:
    /// `[sin h, cos h, sin e, cos e]`.
    pub rel: [f64; 4],
    /// Whether an edge leaves the node through this view.
    pub navigable: bool,
    pub objects: Vec<ObjectObs>,
}

/// Full panorama at one node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeObservation {
    pub views: Vec<ViewObs>,
}

/// Sizing for [`PanoramaEncoder`].
#[derive(Clone, Copy, Debug)]
pub struct AsvConfig {
    pub d_v: usize,
    pub d_m: usize,
    pub d_o: usize,
    pub heads: usize,
    pub view_layers: usize,
    pub object_layers: usize,
    pub max_objects: usize,
    pub num_labels: usize,
    pub views_per_node: usize,
}

/// Encoded panorama: one fused row per view plus the contextualized
/// object rows that produced it, kept for grounding checks.
pub struct PanoramaEncoding {
    /// `(views, d_m)`: one row per view.
    pub fused: Tensor,
    /// `(views * max_objects, d_o)`: object rows after self-attention,
    /// in slot order; padded slots are meaningless.
    pub objects: Tensor,
    /// Label id per slot (0 where padded).
    pub labels: Vec<usize>,
    /// Which slots hold a real object.
    pub live: Vec<bool>,
    /// Real objects per view.
    pub counts: Vec<usize>,
}

/// Indices of the objects an encoder will keep for one view: the
/// `limit` largest by area, largest first, ties broken by input order.
pub fn select_top_objects(objects: &[ObjectObs], limit: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.sort_by(|&a, &b| {
        objects[b].scalars[AREA_INDEX]
            .total_cmp(&objects[a].scalars[AREA_INDEX])
            .then(a.cmp(&b))
    });
    order.truncate(limit);
    order
}

pub struct PanoramaEncoder {
    w_view: Tensor,
    w_geom: Tensor,
    b_geom: Tensor,
    ln_view: LayerNorm,
    w_obj: Tensor,
    label_emb: Tensor,
    ln_obj: LayerNorm,
    object_blocks: Vec<EncoderBlock>,
    view_blocks: Vec<EncoderBlock>,
    w_fuse: Tensor,
    b_fuse: Tensor,
    ln_fuse: LayerNorm,
    cfg: AsvConfig,
}

impl PanoramaEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: AsvConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<PanoramaEncoder> {
        if cfg.views_per_node == 0 || cfg.max_objects == 0 || cfg.num_labels == 0 {
            return Err(Error::contract(
                "panorama encoder needs views, object slots, and labels",
            ));
        }
        let w_view = store.xavier(&format!("{prefix}.view.w"), cfg.d_v, cfg.d_m, rng)?;
        let w_geom = store.xavier(&format!("{prefix}.geom.w"), 6, cfg.d_m, rng)?;
        let b_geom = store.zeros_param(&format!("{prefix}.geom.b"), &[1, cfg.d_m])?;
        let ln_view = LayerNorm::new(store, &format!("{prefix}.view.ln"), cfg.d_m)?;
        let w_obj = store.xavier(&format!("{prefix}.obj.w"), OBJECT_SCALARS, cfg.d_o, rng)?;
        let label_emb = store.xavier(&format!("{prefix}.obj.label"), cfg.num_labels, cfg.d_o, rng)?;
        let ln_obj = LayerNorm::new(store, &format!("{prefix}.obj.ln"), cfg.d_o)?;
        let mut object_blocks = Vec::with_capacity(cfg.object_layers);
        for i in 0..cfg.object_layers {
            object_blocks.push(EncoderBlock::new(
                store,
                &format!("{prefix}.obj.enc.{i}"),
                cfg.d_o,
                cfg.heads,
                rng,
            )?);
        }
        let mut view_blocks = Vec::with_capacity(cfg.view_layers);
        for i in 0..cfg.view_layers {
            view_blocks.push(EncoderBlock::new(
                store,
                &format!("{prefix}.view.enc.{i}"),
                cfg.d_m,
                cfg.heads,
                rng,
            )?);
        }
        let w_fuse = store.xavier(&format!("{prefix}.fuse.w"), cfg.d_m + cfg.d_o, cfg.d_m, rng)?;
        let b_fuse = store.zeros_param(&format!("{prefix}.fuse.b"), &[1, cfg.d_m])?;
        let ln_fuse = LayerNorm::new(store, &format!("{prefix}.fuse.ln"), cfg.d_m)?;
        Ok(PanoramaEncoder {
            w_view,
            w_geom,
            b_geom,
            ln_view,
            w_obj,
            label_emb,
            ln_obj,
            object_blocks,
            view_blocks,
            w_fuse,
            b_fuse,
            ln_fuse,
            cfg,
        })
    }

    fn validate(&self, obs: &NodeObservation) -> Result<()> {
        if obs.views.len() != self.cfg.views_per_node {
            return Err(Error::contract(format!(
                "observation has {} views, encoder expects {}",
                obs.views.len(),
                self.cfg.views_per_node
            )));
        }
        for (i, v) in obs.views.iter().enumerate() {
            if v.features.len() != self.cfg.d_v {
                return Err(Error::contract(format!(
                    "view {i} has {} features, expected {}",
                    v.features.len(),
                    self.cfg.d_v
                )));
            }
            for o in &v.objects {
                if o.label >= self.cfg.num_labels {
                    return Err(Error::contract(format!(
                        "view {i} object label {} out of range ({} labels)",
                        o.label, self.cfg.num_labels
                    )));
                }
            }
        }
        Ok(())
    }

    /// Encodes a panorama into one row per view plus its object rows.
    pub fn encode(&self, obs: &NodeObservation) -> Result<PanoramaEncoding> {
        self.validate(obs)?;
        let v = self.cfg.views_per_node;
        let m = self.cfg.max_objects;

        let mut feat = Vec::with_capacity(v * self.cfg.d_v);
        let mut geom = Vec::with_capacity(v * 6);
        for view in &obs.views {
            feat.extend_from_slice(&view.features);
            geom.extend_from_slice(&view.rel);
            geom.push(1.0);
            geom.push(if view.navigable { 1.0 } else { 0.0 });
        }
        let feat = Tensor::constant(&[v, self.cfg.d_v], feat)?;
        let geom = Tensor::constant(&[v, 6], geom)?;
        let e_view = feat.matmul(&self.w_view)?;
        let e_geom = geom.matmul(&self.w_geom)?.add(&self.b_geom)?;
        let mut views = self.ln_view.forward(&e_view.add(&e_geom)?)?;

        let mut scalars = vec![0.0; v * m * OBJECT_SCALARS];
        let mut labels = vec![0usize; v * m];
        let mut live = vec![false; v * m];
        let mut counts = vec![0usize; v];
        for (vi, view) in obs.views.iter().enumerate() {
            let picked = select_top_objects(&view.objects, m);
            counts[vi] = picked.len();
            for (slot, &oi) in picked.iter().enumerate() {
                let row = vi * m + slot;
                let obj = &view.objects[oi];
                scalars[row * OBJECT_SCALARS..(row + 1) * OBJECT_SCALARS]
                    .copy_from_slice(&obj.scalars);
                labels[row] = obj.label;
                live[row] = true;
            }
        }
        let scalars = Tensor::constant(&[v * m, OBJECT_SCALARS], scalars)?;
        let label_rows = self.label_emb.gather_rows(&labels)?;
        let live_gate = Tensor::constant(
            &[v * m, 1],
            live.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )?;
        let obj_in = scalars
            .matmul(&self.w_obj)?
            .add(&label_rows.mul(&live_gate)?)?;
        let mut objects = self.ln_obj.forward(&obj_in)?;
        let obj_mask = KeyMask::from_row(live.clone())?;
        for block in &self.object_blocks {
            objects = block.forward(&objects, &obj_mask)?;
        }
        let per_view_objects = objects.group_mean_rows(m, &counts)?;

        let view_mask = KeyMask::all_visible(v, v);
        for block in &self.view_blocks {
            views = block.forward(&views, &view_mask)?;
        }

        let joint = Tensor::concat_cols(&[&views, &per_view_objects])?;
        let fused = joint.matmul(&self.w_fuse)?.add(&self.b_fuse)?;
        Ok(PanoramaEncoding {
            fused: self.ln_fuse.forward(&fused)?,
            objects,
            labels,
            live,
            counts,
        })
    }

    pub fn config(&self) -> &AsvConfig {
        &self.cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_cfg() -> AsvConfig {
        AsvConfig {
            d_v: 5,
            d_m: 8,
            d_o: 4,
            heads: 2,
            view_layers: 1,
            object_layers: 1,
            max_objects: 2,
            num_labels: 6,
            views_per_node: 4,
        }
    }

    fn build(seed: u64) -> (ParamStore, PanoramaEncoder) {
        let mut store = ParamStore::new();
        let enc = PanoramaEncoder::new(&mut store, "asv", small_cfg(), &mut rng(seed)).unwrap();
        (store, enc)
    }

    fn obj(label: usize, area: f64) -> ObjectObs {
        let mut scalars = [0.1; OBJECT_SCALARS];
        scalars[AREA_INDEX] = area;
        scalars[1] = label as f64 / 10.0;
        ObjectObs { label, scalars }
    }

    fn view(seed: u64, navigable: bool, objects: Vec<ObjectObs>) -> ViewObs {
        let mut r = rng(seed);
        let h: f64 = r.random_range(-3.0..3.0);
        ViewObs {
            features: (0..5).map(|_| r.random_range(-1.0..1.0)).collect(),
            rel: [h.sin(), h.cos(), 0.0, 1.0],
            navigable,
            objects,
        }
    }

    fn sample_obs() -> NodeObservation {
        NodeObservation {
            views: vec![
                view(1, true, vec![obj(1, 0.5), obj(2, 0.9)]),
                view(2, false, vec![obj(3, 0.2)]),
                view(3, true, vec![]),
                view(4, false, vec![obj(4, 0.7), obj(1, 0.1), obj(5, 0.4)]),
            ],
        }
    }

    #[test]
    fn selection_ranks_by_area_with_stable_ties() {
        let objs = vec![obj(1, 0.3), obj(2, 0.9), obj(3, 0.3), obj(4, 0.1)];
        assert_eq!(select_top_objects(&objs, 3), vec![1, 0, 2]);
        assert_eq!(select_top_objects(&objs, 10), vec![1, 0, 2, 3]);
        assert_eq!(select_top_objects(&[], 3), Vec::<usize>::new());
    }

    #[test]
    fn encode_produces_one_row_per_view_deterministically() {
        let (_s1, e1) = build(11);
        let (_s2, e2) = build(11);
        let obs = sample_obs();
        let a = e1.encode(&obs).unwrap();
        let b = e2.encode(&obs).unwrap();
        assert_eq!(a.fused.shape(), &[4, 8]);
        assert_eq!(a.fused.to_vec(), b.fused.to_vec());
        assert_eq!(a.counts, vec![2, 1, 0, 2]);
        assert_eq!(a.objects.shape(), &[8, 4]);
    }

    #[test]
    fn validation_rejects_malformed_observations() {
        let (_store, enc) = build(12);
        let mut missing_view = sample_obs();
        missing_view.views.pop();
        assert!(enc.encode(&missing_view).is_err());

        let mut short_features = sample_obs();
        short_features.views[0].features.pop();
        assert!(enc.encode(&short_features).is_err());

        let mut bad_label = sample_obs();
        bad_label.views[1].objects[0].label = 99;
        assert!(enc.encode(&bad_label).is_err());
    }

    #[test]
    fn object_input_order_does_not_matter() {
        let (_store, enc) = build(13);
        let mut obs = sample_obs();
        let a = enc.encode(&obs).unwrap().fused.to_vec();
        obs.views[3].objects.reverse();
        let b = enc.encode(&obs).unwrap().fused.to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn objects_beyond_the_slot_budget_are_ignored() {
        let (_store, enc) = build(14);
        let mut obs = sample_obs();
        let a = enc.encode(&obs).unwrap().fused.to_vec();
        obs.views[0].objects.push(obj(5, 0.01));
        let b = enc.encode(&obs).unwrap().fused.to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn panorama_without_objects_still_encodes() {
        let (_store, enc) = build(15);
        let obs = NodeObservation {
            views: vec![
                view(21, true, vec![]),
                view(22, true, vec![]),
                view(23, false, vec![]),
                view(24, false, vec![]),
            ],
        };
        let out = enc.encode(&obs).unwrap();
        assert_eq!(out.fused.shape(), &[4, 8]);
        assert!(out.fused.to_vec().iter().all(|v| v.is_finite()));
        assert_eq!(out.counts, vec![0; 4]);
    }

    #[test]
    fn navigability_flag_changes_the_encoding() {
        let (_store, enc) = build(16);
        let mut obs = sample_obs();
        let a = enc.encode(&obs).unwrap().fused.to_vec();
        obs.views[1].navigable = true;
        let b = enc.encode(&obs).unwrap().fused.to_vec();
        assert_ne!(a, b);
    }

    #[test]
    fn gradient_reaches_only_labels_of_real_objects() {
        let (store, enc) = build(17);
        let obs = NodeObservation {
            views: vec![
                view(31, true, vec![obj(2, 0.8)]),
                view(32, false, vec![obj(4, 0.5)]),
                view(33, true, vec![]),
                view(34, false, vec![]),
            ],
        };
        let out = enc.encode(&obs).unwrap().fused;
        let probe = Tensor::constant(
            out.shape(),
            (0..out.len()).map(|i| ((i * 7) % 11) as f64 - 5.0).collect(),
        )
        .unwrap();
        out.mul(&probe)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        let g = store.get("asv.obj.label").unwrap().grad().unwrap();
        let d_o = 4;
        let row_norm = |row: usize| -> f64 {
            g[row * d_o..(row + 1) * d_o].iter().map(|v| v.abs()).sum()
        };
        assert!(row_norm(2) > 1e-12);
        assert!(row_norm(4) > 1e-12);
        assert_eq!(row_norm(0), 0.0);
        assert_eq!(row_norm(1), 0.0);
        assert_eq!(row_norm(3), 0.0);
        assert_eq!(row_norm(5), 0.0);
    }
}

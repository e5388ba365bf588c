//! Network parameters and forward passes.
//!
//! Backbone: four blocks of `conv3d(k=3, p=1) -> relu`, channels
//! 2 -> 16 -> 32 -> 64 -> 64, with a stride-2 max pool after the first two
//! blocks. The block-4 maps are both the global-average-pooled features and
//! the gate of the soft attention gate, whose gated input is block 2 before
//! its pool.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volgrid::{ParamSet, Tensor};

pub const CHANNELS: [usize; 5] = [2, 16, 32, 64, 64];
/// Blocks followed by a stride-2 max pool.
pub const POOLED_BLOCKS: usize = 2;
/// Block whose (pre-pool) output the attention gate filters.
pub const GATED_BLOCK: usize = 1;
pub const SAG_CHANNELS: usize = 32;
pub const NUM_CLASSES: usize = 3;

const SAME: [usize; 3] = [1, 1, 1];
const NO_PAD: [usize; 3] = [0, 0, 0];

/// Which parts of the network are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetMode {
    /// Dual path with the attention gate.
    Aid,
    /// Dual path without the attention gate.
    Id,
    /// Attention gate, scan path only (no rescan, no contrastive term).
    SinglePath,
}

impl NetMode {
    pub fn uses_sag(self) -> bool {
        !matches!(self, NetMode::Id)
    }

    pub fn is_dual(self) -> bool {
        !matches!(self, NetMode::SinglePath)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NetMode::Aid => "aid",
            NetMode::Id => "id",
            NetMode::SinglePath => "single-path",
        }
    }
}

impl std::str::FromStr for NetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aid" => Ok(NetMode::Aid),
            "id" => Ok(NetMode::Id),
            "single-path" | "single" => Ok(NetMode::SinglePath),
            _ => Err(Error::InvalidArgument(format!(
                "unknown mode {s:?} (aid | id | single-path)"
            ))),
        }
    }
}

/// The single learnable parameter set read by both paths.
#[derive(Clone, Debug, PartialEq)]
pub struct AidNetParams {
    params: ParamSet,
    sag: bool,
}

fn block_names(i: usize) -> (String, String) {
    (format!("backbone.{i}.weight"), format!("backbone.{i}.bias"))
}

impl AidNetParams {
    /// He-initialised weights, zero biases, from a seeded generator.
    pub fn init(sag: bool, seed: u64) -> Result<AidNetParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        for i in 0..4 {
            let (cin, cout) = (CHANNELS[i], CHANNELS[i + 1]);
            let (w, b) = block_names(i);
            p.push_he(w, &[cout, cin, 3, 3, 3], cin * 27, &mut rng)?;
            p.push_zeros(b, &[cout])?;
        }
        if sag {
            let (xl, g) = (CHANNELS[GATED_BLOCK + 1], CHANNELS[4]);
            p.push_he("sag.w_x.weight", &[SAG_CHANNELS, xl, 1, 1, 1], xl, &mut rng)?;
            p.push_he("sag.w_g.weight", &[SAG_CHANNELS, g, 1, 1, 1], g, &mut rng)?;
            p.push_zeros("sag.merge.bias", &[SAG_CHANNELS])?;
            p.push_he("sag.psi.weight", &[1, SAG_CHANNELS, 1, 1, 1], SAG_CHANNELS, &mut rng)?;
            p.push_zeros("sag.psi.bias", &[1])?;
            p.push_he("sag.proj.weight", &[xl, CHANNELS[4]], xl, &mut rng)?;
            p.push_zeros("sag.proj.bias", &[CHANNELS[4]])?;
        }
        let width = Self::embedding_width(sag);
        p.push_he("head.weight", &[width, NUM_CLASSES], width, &mut rng)?;
        p.push_zeros("head.bias", &[NUM_CLASSES])?;
        Ok(AidNetParams { params: p, sag })
    }

    /// Wrap a loaded parameter set; the gate is present iff `sag.*` entries are.
    pub fn from_param_set(params: ParamSet) -> Result<AidNetParams> {
        let sag = params.contains_prefix("sag.");
        let reference = AidNetParams::init(sag, 0)?;
        let layout_matches = reference.params.len() == params.len()
            && reference
                .params
                .iter()
                .zip(params.iter())
                .all(|(a, b)| a.name == b.name && a.shape == b.shape);
        if !layout_matches {
            return Err(Error::Format("parameter set does not match the network layout".into()));
        }
        Ok(AidNetParams { params, sag })
    }

    pub fn embedding_width(sag: bool) -> usize {
        if sag {
            2 * CHANNELS[4]
        } else {
            CHANNELS[4]
        }
    }

    pub fn has_sag(&self) -> bool {
        self.sag
    }

    pub fn param_set(&self) -> &ParamSet {
        &self.params
    }

    pub fn param_set_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_param_set(self) -> ParamSet {
        self.params
    }

    /// Overwrite one named array.
    pub fn set(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter {name}")))?;
        if p.data.len() != data.len() {
            return Err(Error::shape("set", format!("{name} holds {} values", p.data.len())));
        }
        p.data = data;
        Ok(())
    }

    /// Grad-tracking leaves for one forward/backward pass.
    pub fn bind(&self) -> Result<Bound> {
        Bound::new(self.params.leaves()?, self.sag)
    }

    /// Constant leaves for inference; no graph is recorded.
    pub fn bind_frozen(&self) -> Result<Bound> {
        let leaves = self
            .params
            .iter()
            .map(|p| Tensor::constant(&p.shape, p.data.clone()))
            .collect::<Result<Vec<_>>>()?;
        Bound::new(leaves, self.sag)
    }
}

/// Leaves of the attention gate.
#[derive(Clone, Debug)]
pub struct SagLeaves {
    pub w_x: Tensor,
    pub w_g: Tensor,
    pub merge_bias: Tensor,
    pub psi: Tensor,
    pub psi_bias: Tensor,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    zero_bias: Tensor,
}

/// One pass's view of the parameters. Both dual paths use the same `Bound`,
/// so their gradients land on the same leaves.
#[derive(Clone, Debug)]
pub struct Bound {
    all: Vec<Tensor>,
    blocks: Vec<(Tensor, Tensor)>,
    sag: Option<SagLeaves>,
    head: (Tensor, Tensor),
}

impl Bound {
    fn new(all: Vec<Tensor>, sag: bool) -> Result<Bound> {
        let blocks = (0..4).map(|i| (all[2 * i].clone(), all[2 * i + 1].clone())).collect();
        let sag = if sag {
            let s = &all[8..15];
            Some(SagLeaves {
                w_x: s[0].clone(),
                w_g: s[1].clone(),
                merge_bias: s[2].clone(),
                psi: s[3].clone(),
                psi_bias: s[4].clone(),
                proj_w: s[5].clone(),
                proj_b: s[6].clone(),
                zero_bias: Tensor::zeros(&[SAG_CHANNELS])?,
            })
        } else {
            None
        };
        let n = all.len();
        let head = (all[n - 2].clone(), all[n - 1].clone());
        Ok(Bound { all, blocks, sag, head })
    }

    pub fn leaves(&self) -> &[Tensor] {
        &self.all
    }

    pub fn sag(&self) -> Option<&SagLeaves> {
        self.sag.as_ref()
    }

    /// Accumulated gradients in parameter-set order (zeros where none).
    pub fn grads(&self) -> Vec<Vec<f64>> {
        self.all.iter().map(Tensor::grad_or_zeros).collect()
    }
}

/// Backbone activations needed downstream.
#[derive(Clone, Debug)]
pub struct BackboneOutput {
    /// Block-2 activations before pooling, the gate's filtered input.
    pub gated_input: Tensor,
    /// Block-4 activations, the maps that feed global average pooling.
    pub pre_gap_maps: Tensor,
}

#[derive(Clone, Debug)]
pub struct SagOutput {
    pub attended: Tensor,
    /// One-channel coefficients in (0, 1) at the gated input's resolution.
    pub alpha: Tensor,
    /// Pooled attended features projected to the GAP width.
    pub features: Tensor,
}

#[derive(Clone, Debug)]
pub struct SingleOutput {
    pub logits: Tensor,
    pub embedding: Tensor,
    pub gap_feats: Tensor,
    pub sag: Option<SagOutput>,
    pub backbone: BackboneOutput,
}

pub fn backbone(bound: &Bound, x: &Tensor) -> Result<BackboneOutput> {
    match x.shape() {
        [_, c, _, _, _] if *c == CHANNELS[0] => {}
        s => {
            return Err(Error::shape(
                "forward",
                format!("expected [N, {}, D, H, W] input, got {s:?}", CHANNELS[0]),
            ))
        }
    }
    let mut h = x.clone();
    let mut gated = None;
    for (i, (w, b)) in bound.blocks.iter().enumerate() {
        h = h.conv3d(w, b, SAME, SAME)?.relu()?;
        if i == GATED_BLOCK {
            gated = Some(h.clone());
        }
        if i < POOLED_BLOCKS {
            h = h.maxpool3d([2; 3], [2; 3])?;
        }
    }
    Ok(BackboneOutput {
        gated_input: gated.expect("gated block is inside the backbone"),
        pre_gap_maps: h,
    })
}

/// Additive soft attention: `alpha = sigmoid(psi(relu(W_x x + up(W_g g) + b)) + b_psi)`.
pub fn sag_gate(sag: &SagLeaves, x_l: &Tensor, g: &Tensor) -> Result<SagOutput> {
    let (xs, gs) = (x_l.shape(), g.shape());
    if xs.len() != 5 || gs.len() != 5 || xs[0] != gs[0] {
        return Err(Error::shape("sag_gate", format!("x_l {xs:?} and gate {gs:?}")));
    }
    if xs[1] != sag.w_x.shape()[1] || gs[1] != sag.w_g.shape()[1] {
        return Err(Error::shape(
            "sag_gate",
            format!(
                "channels {} / {} do not match gate parameters {} / {}",
                xs[1],
                gs[1],
                sag.w_x.shape()[1],
                sag.w_g.shape()[1]
            ),
        ));
    }
    if (2..5).any(|a| gs[a] > xs[a]) {
        return Err(Error::shape("sag_gate", "gate must not be finer than the gated maps"));
    }
    let target = [xs[2], xs[3], xs[4]];
    let theta_x = x_l.conv3d(&sag.w_x, &sag.merge_bias, SAME, NO_PAD)?;
    let phi_g = g.conv3d(&sag.w_g, &sag.zero_bias, SAME, NO_PAD)?;
    let phi_up = if [gs[2], gs[3], gs[4]] == target {
        phi_g
    } else {
        phi_g.upsample_nearest(target)?
    };
    let q = theta_x.add(&phi_up)?.relu()?;
    let alpha = q.conv3d(&sag.psi, &sag.psi_bias, SAME, NO_PAD)?.sigmoid()?;
    let attended = alpha.mul(x_l)?;
    let features = attended.global_avg_pool()?.dense(&sag.proj_w, &sag.proj_b)?;
    Ok(SagOutput {
        attended,
        alpha,
        features,
    })
}

/// Everything after the backbone: GAP, the gate, concatenation and the
/// dense head. Split out so attention maps can be perturbed directly.
pub fn head_from_features(bound: &Bound, features: &BackboneOutput) -> Result<SingleOutput> {
    let gap_feats = features.pre_gap_maps.global_avg_pool()?;
    let (embedding, sag) = match &bound.sag {
        Some(leaves) => {
            let out = sag_gate(leaves, &features.gated_input, &features.pre_gap_maps)?;
            (gap_feats.concat(&out.features, 1)?, Some(out))
        }
        None => (gap_feats.clone(), None),
    };
    let logits = embedding.dense(&bound.head.0, &bound.head.1)?;
    Ok(SingleOutput {
        logits,
        embedding,
        gap_feats,
        sag,
        backbone: features.clone(),
    })
}

pub fn forward_single(bound: &Bound, x: &Tensor) -> Result<SingleOutput> {
    let features = backbone(bound, x)?;
    head_from_features(bound, &features)
}

/// A batch of scan/rescan pairs.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub scan: Tensor,
    pub rescan: Tensor,
    pub label_scan: Vec<usize>,
    pub label_rescan: Vec<usize>,
    /// 0 when the pair is deemed similar, 1 when dissimilar.
    pub similarity_y: Vec<u8>,
}

impl PairBatch {
    pub fn new(scan: Tensor, rescan: Tensor, label_scan: Vec<usize>, label_rescan: Vec<usize>) -> Result<PairBatch> {
        if scan.shape() != rescan.shape() {
            return Err(Error::shape(
                "pair_batch",
                format!("scan {:?} vs rescan {:?}", scan.shape(), rescan.shape()),
            ));
        }
        let n = scan.shape()[0];
        if label_scan.len() != n || label_rescan.len() != n {
            return Err(Error::shape(
                "pair_batch",
                format!("{n} pairs need {n} labels per side"),
            ));
        }
        if let Some(&l) = label_scan.iter().chain(&label_rescan).find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::InvalidArgument(format!(
                "label {l} outside {NUM_CLASSES} classes"
            )));
        }
        let similarity_y = label_scan
            .iter()
            .zip(&label_rescan)
            .map(|(a, b)| u8::from(a != b))
            .collect();
        Ok(PairBatch {
            scan,
            rescan,
            label_scan,
            label_rescan,
            similarity_y,
        })
    }
}

#[derive(Clone, Debug)]
pub struct PairOutput {
    pub first: SingleOutput,
    pub second: SingleOutput,
    /// Euclidean distance between the two embeddings, `[N]`.
    pub distance: Tensor,
}

pub fn forward_pair(bound: &Bound, batch: &PairBatch) -> Result<PairOutput> {
    let first = forward_single(bound, &batch.scan)?;
    let second = forward_single(bound, &batch.rescan)?;
    let distance = first.embedding.pairwise_distance(&second.embedding)?;
    Ok(PairOutput {
        first,
        second,
        distance,
    })
}

/// Class decision and scores for one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: [f64; NUM_CLASSES],
    /// `p(class 1) + p(class 2)`: the score for CAC presence.
    pub binary_score: f64,
}

impl Prediction {
    /// Argmax with ties to the lower class.
    pub fn from_probabilities(probabilities: [f64; NUM_CLASSES]) -> Prediction {
        let mut class = 0;
        for k in 1..NUM_CLASSES {
            if probabilities[k] > probabilities[class] {
                class = k;
            }
        }
        Prediction {
            class,
            probabilities,
            binary_score: probabilities[1] + probabilities[2],
        }
    }
}

/// Inference on a `[N, 2, D, H, W]` batch with frozen parameters.
pub fn predict(params: &AidNetParams, x: &Tensor) -> Result<Vec<Prediction>> {
    let bound = params.bind_frozen()?;
    let out = forward_single(&bound, x)?;
    let probs = out.logits.softmax(1)?;
    Ok(probs
        .data()
        .chunks_exact(NUM_CLASSES)
        .map(|p| Prediction::from_probabilities([p[0], p[1], p[2]]))
        .collect())
}

//! Mixture of visual experts: two structurally different frozen encoders
//! (a patch-attention encoder and a strided convolution encoder) whose grids
//! are fused by channel concatenation and linearly projected to the language
//! model width.

use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::partition::{assemble_visual_sequence, pad_and_split, plan_partition, PartitionPlan, VisualRow};
use crate::error::{Error, Result};
use crate::nn::{attention, gelu, ones_row, randn, rms_norm, AttentionWeights, Mat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovConfig {
    pub channels: usize,
    pub target_res: usize,
    pub sub_res: usize,
    pub patch: usize,
    /// Total stride of the convolutional encoder; must be `patch` or an integer fraction of it.
    pub conv_stride: usize,
    pub d_attn: usize,
    pub d_conv: usize,
    pub attn_layers: usize,
    pub attn_heads: usize,
    pub d_llm: usize,
}

impl MovConfig {
    /// Desk-scale front end: 64 px canvas, 2×2 grid of 32 px sub-images, 16 tokens per block.
    pub fn nano(d_llm: usize) -> Self {
        MovConfig {
            channels: 3,
            target_res: 64,
            sub_res: 32,
            patch: 8,
            conv_stride: 8,
            d_attn: 32,
            d_conv: 32,
            attn_layers: 1,
            attn_heads: 2,
            d_llm,
        }
    }

    pub fn grid_side(&self) -> usize {
        self.sub_res / self.patch
    }

    /// Tokens per visual block.
    pub fn block_len(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn fused_channels(&self) -> usize {
        self.d_attn + self.d_conv
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch == 0 || !self.sub_res.is_multiple_of(self.patch) {
            return bad(format!("sub_res {} not divisible by patch {}", self.sub_res, self.patch));
        }
        if !self.target_res.is_multiple_of(self.sub_res) {
            return bad(format!("target_res {} not divisible by sub_res {}", self.target_res, self.sub_res));
        }
        if self.conv_stride == 0 || !self.patch.is_multiple_of(self.conv_stride) || !self.sub_res.is_multiple_of(self.conv_stride) {
            return bad(format!(
                "conv_stride {} must divide patch {} so the conv grid resamples to the attention grid",
                self.conv_stride, self.patch
            ));
        }
        if self.attn_heads == 0 || !self.d_attn.is_multiple_of(self.attn_heads) {
            return bad(format!("d_attn {} not divisible by attn_heads {}", self.d_attn, self.attn_heads));
        }
        if self.channels == 0 || self.d_conv == 0 || self.d_llm == 0 {
            return bad("channel counts must be positive".into());
        }
        Ok(())
    }
}

/// A square spatial grid of feature vectors, stored as `side² × channels` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub side: usize,
    pub channels: usize,
    pub data: Mat,
}

impl EncoderOutput {
    pub fn at(&self, row: usize, col: usize) -> ndarray::ArrayView1<'_, f64> {
        self.data.row(row * self.side + col)
    }

    /// Average-pools by an integer ratio down to `side`.
    pub fn resample(&self, side: usize) -> Result<EncoderOutput> {
        if side == self.side {
            return Ok(self.clone());
        }
        if side == 0 || !self.side.is_multiple_of(side) {
            return Err(Error::Internal(format!("cannot resample a {0}×{0} grid to {1}×{1}", self.side, side)));
        }
        let f = self.side / side;
        let mut data = Mat::zeros((side * side, self.channels));
        for r in 0..side {
            for c in 0..side {
                let mut acc = data.row_mut(r * side + c);
                for dr in 0..f {
                    for dc in 0..f {
                        acc += &self.at(r * f + dr, c * f + dc);
                    }
                }
                acc /= (f * f) as f64;
            }
        }
        Ok(EncoderOutput { side, channels: self.channels, data })
    }
}

/// Flattens non-overlapping `k × k` patches of an `h × w × c` array into rows of `k·k·c`.
fn patchify(data: &ndarray::Array3<f64>, k: usize) -> Mat {
    let (h, w, c) = data.dim();
    let (gh, gw) = (h / k, w / k);
    let mut out = Mat::zeros((gh * gw, k * k * c));
    for gy in 0..gh {
        for gx in 0..gw {
            let block = data.slice(s![gy * k..(gy + 1) * k, gx * k..(gx + 1) * k, ..]);
            let mut row = out.row_mut(gy * gw + gx);
            for (dst, src) in row.iter_mut().zip(block.iter()) {
                *dst = *src;
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
struct AttnBlock {
    norm1: Mat,
    attn: AttentionWeights,
    norm2: Mat,
    mlp_in: Mat,
    mlp_out: Mat,
}

/// Patch embedding followed by pre-norm self-attention blocks.
#[derive(Clone, Debug)]
pub struct AttnEncoder {
    patch_embed: Mat,
    pos: Mat,
    blocks: Vec<AttnBlock>,
    final_norm: Mat,
}

impl AttnEncoder {
    fn init(cfg: &MovConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_attn;
        let fan_in = cfg.patch * cfg.patch * cfg.channels;
        let blocks = (0..cfg.attn_layers)
            .map(|_| AttnBlock {
                norm1: ones_row(d),
                attn: AttentionWeights::init(rng, d),
                norm2: ones_row(d),
                mlp_in: randn(rng, d, 2 * d, 1.0 / (d as f64).sqrt()),
                mlp_out: randn(rng, 2 * d, d, 0.5 / ((2 * d) as f64).sqrt()),
            })
            .collect();
        AttnEncoder {
            patch_embed: randn(rng, fan_in, d, 1.0 / (fan_in as f64).sqrt()),
            pos: randn(rng, cfg.block_len(), d, 0.1),
            blocks,
            final_norm: ones_row(d),
        }
    }

    fn params(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![("mov.attn.patch_embed".to_string(), &self.patch_embed), ("mov.attn.pos".to_string(), &self.pos)];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("mov.attn.block.{i}");
            out.push((format!("{p}.norm1"), &b.norm1));
            out.push((format!("{p}.wq"), &b.attn.wq));
            out.push((format!("{p}.wk"), &b.attn.wk));
            out.push((format!("{p}.wv"), &b.attn.wv));
            out.push((format!("{p}.wo"), &b.attn.wo));
            out.push((format!("{p}.norm2"), &b.norm2));
            out.push((format!("{p}.mlp_in"), &b.mlp_in));
            out.push((format!("{p}.mlp_out"), &b.mlp_out));
        }
        out.push(("mov.attn.final_norm".to_string(), &self.final_norm));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.patch_embed, &mut self.pos];
        for b in &mut self.blocks {
            out.extend([
                &mut b.norm1,
                &mut b.attn.wq,
                &mut b.attn.wk,
                &mut b.attn.wv,
                &mut b.attn.wo,
                &mut b.norm2,
                &mut b.mlp_in,
                &mut b.mlp_out,
            ]);
        }
        out.push(&mut self.final_norm);
        out
    }
}

#[derive(Clone, Debug)]
struct ConvStage {
    kernel: usize,
    weight: Mat,
    bias: Mat,
}

/// Stack of non-overlapping strided convolutions whose strides multiply to `conv_stride`.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    stages: Vec<ConvStage>,
}

fn conv_strides(total: usize) -> Vec<usize> {
    if total > 4 && total.is_multiple_of(4) {
        vec![4, total / 4]
    } else if total > 2 && total.is_multiple_of(2) {
        vec![2, total / 2]
    } else {
        vec![total]
    }
}

impl ConvEncoder {
    fn init(cfg: &MovConfig, rng: &mut ChaCha8Rng) -> Self {
        let strides = conv_strides(cfg.conv_stride);
        let n = strides.len();
        let mut c_in = cfg.channels;
        let stages = strides
            .into_iter()
            .enumerate()
            .map(|(i, k)| {
                let c_out = if i + 1 == n { cfg.d_conv } else { cfg.d_conv / 2 + 1 };
                let fan_in = k * k * c_in;
                let stage = ConvStage {
                    kernel: k,
                    weight: randn(rng, fan_in, c_out, 1.0 / (fan_in as f64).sqrt()),
                    bias: randn(rng, 1, c_out, 0.1),
                };
                c_in = c_out;
                stage
            })
            .collect();
        ConvEncoder { stages }
    }

    fn params(&self) -> Vec<(String, &Mat)> {
        self.stages
            .iter()
            .enumerate()
            .flat_map(|(i, st)| {
                [(format!("mov.conv.stage.{i}.weight"), &st.weight), (format!("mov.conv.stage.{i}.bias"), &st.bias)]
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        self.stages.iter_mut().flat_map(|st| [&mut st.weight, &mut st.bias]).collect()
    }
}

/// The frozen pair of visual experts.
#[derive(Clone, Debug)]
pub struct MovEncoders {
    pub config: MovConfig,
    attn: AttnEncoder,
    conv: ConvEncoder,
}

impl MovEncoders {
    pub fn init(config: MovConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let attn = AttnEncoder::init(&config, &mut rng);
        let conv = ConvEncoder::init(&config, &mut rng);
        Ok(MovEncoders { config, attn, conv })
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let c = &self.config;
        if image.width() != c.sub_res || image.height() != c.sub_res || image.channels() != c.channels {
            return Err(Error::Input(format!(
                "encoder expects {0}×{0}×{1}, got {2}×{3}×{4}",
                c.sub_res,
                c.channels,
                image.width(),
                image.height(),
                image.channels()
            )));
        }
        Ok(())
    }

    pub fn encode_attn(&self, image: &Image) -> Result<EncoderOutput> {
        self.check_input(image)?;
        let c = &self.config;
        let mut x = patchify(&image.data, c.patch).dot(&self.attn.patch_embed);
        x += &self.attn.pos;
        for b in &self.attn.blocks {
            let (h, _) = rms_norm(&x, &b.norm1);
            x += &attention(&b.attn, &h, c.attn_heads, false).0;
            let (h, _) = rms_norm(&x, &b.norm2);
            x += &h.dot(&b.mlp_in).mapv(gelu).dot(&b.mlp_out);
        }
        let (x, _) = rms_norm(&x, &self.attn.final_norm);
        Ok(EncoderOutput { side: c.grid_side(), channels: c.d_attn, data: x })
    }

    pub fn encode_conv(&self, image: &Image) -> Result<EncoderOutput> {
        self.check_input(image)?;
        let mut data = image.data.clone();
        let n = self.conv.stages.len();
        for (i, st) in self.conv.stages.iter().enumerate() {
            let side = data.dim().0 / st.kernel;
            let mut y = patchify(&data, st.kernel).dot(&st.weight);
            y += &st.bias;
            if i + 1 < n {
                y.mapv_inplace(gelu);
            }
            let c_out = y.ncols();
            data = y.into_shape_with_order((side, side, c_out)).expect("grid reshape");
        }
        let side = data.dim().0;
        let channels = data.dim().2;
        let flat = data.into_shape_with_order((side * side, channels)).expect("grid flatten");
        Ok(EncoderOutput { side, channels, data: flat })
    }

    /// Encodes with both experts and fuses at the attention encoder's grid.
    pub fn encode(&self, image: &Image) -> Result<Mat> {
        let a = self.encode_attn(image)?;
        let b = self.encode_conv(image)?.resample(a.side)?;
        Ok(fuse(&a, &b)?.data)
    }

    pub fn named_params(&self) -> Vec<(String, &Mat)> {
        let mut out = self.attn.params();
        out.extend(self.conv.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = self.attn.params_mut();
        out.extend(self.conv.params_mut());
        out
    }
}

/// Channel concatenation of two grids with equal spatial side.
pub fn fuse(a: &EncoderOutput, b: &EncoderOutput) -> Result<EncoderOutput> {
    if a.side != b.side {
        return Err(Error::Internal(format!("cannot fuse a {}-grid with a {}-grid", a.side, b.side)));
    }
    let data = concatenate(Axis(1), &[a.data.view(), b.data.view()]).expect("equal row counts");
    Ok(EncoderOutput { side: a.side, channels: a.channels + b.channels, data })
}

/// The trainable linear map from fused visual channels to the LLM width.
#[derive(Clone, Debug)]
pub struct Projection {
    pub weight: Mat,
}

impl Projection {
    pub fn init(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Self {
        Projection { weight: randn(rng, d_in, d_out, 1.0 / (d_in as f64).sqrt()) }
    }

    /// Row-major flatten of the grid followed by the linear map.
    pub fn project(&self, fused: &EncoderOutput) -> Result<Mat> {
        self.apply(&fused.data)
    }

    pub fn apply(&self, rows: &Mat) -> Result<Mat> {
        if rows.ncols() != self.weight.nrows() {
            return Err(Error::Config(format!(
                "projection expects {} channels, got {}",
                self.weight.nrows(),
                rows.ncols()
            )));
        }
        Ok(rows.dot(&self.weight))
    }

    /// Accumulates `∂L/∂W` given the projection input and output gradient.
    pub fn backward(&self, input: &Mat, d_out: &Mat, d_weight: &mut Mat) {
        *d_weight += &input.t().dot(d_out);
    }
}

/// Frozen features of one image: its partition plan plus the fused grid of
/// the global view and of every Real slot.
#[derive(Clone, Debug)]
pub struct VisualFeatures {
    pub plan: PartitionPlan,
    pub global: Mat,
    pub slots: BTreeMap<(usize, usize), Mat>,
}

impl VisualFeatures {
    pub fn block_len(&self) -> usize {
        self.global.nrows()
    }

    pub fn sequence_len(&self) -> usize {
        self.plan.sequence_len(self.block_len())
    }

    fn row_features(&self, origin: VisualRow) -> Option<ndarray::ArrayView1<'_, f64>> {
        match origin {
            VisualRow::Global(i) => Some(self.global.row(i)),
            VisualRow::Slot { row, col, index } => Some(self.slots[&(row, col)].row(index)),
            VisualRow::Skip { .. } => None,
        }
    }
}

/// Frozen encoders plus the trainable projection and skip embedding.
#[derive(Clone, Debug)]
pub struct VisualFrontend {
    pub encoders: MovEncoders,
    pub projection: Projection,
    pub skip: Mat,
}

/// Gradients of the trainable part of the visual front end.
#[derive(Clone, Debug)]
pub struct FrontendGrads {
    pub projection: Mat,
    pub skip: Mat,
}

impl VisualFrontend {
    pub fn init(config: MovConfig, seed: u64) -> Result<Self> {
        let d_in = config.fused_channels();
        let d_out = config.d_llm;
        let encoders = MovEncoders::init(config, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let projection = Projection::init(&mut rng, d_in, d_out);
        let skip = randn(&mut rng, 1, d_out, 0.02);
        Ok(VisualFrontend { encoders, projection, skip })
    }

    pub fn config(&self) -> &MovConfig {
        &self.encoders.config
    }

    /// Runs partitioning and both frozen encoders.
    pub fn features(&self, image: &Image) -> Result<VisualFeatures> {
        let c = self.config();
        let plan = plan_partition(image.width(), image.height(), c.target_res, c.sub_res)?;
        let split = pad_and_split(image, &plan)?;
        let global = self.encoders.encode(&split.global)?;
        let slots = split
            .subimages
            .iter()
            .map(|(&k, sub)| Ok((k, self.encoders.encode(sub)?)))
            .collect::<Result<_>>()?;
        Ok(VisualFeatures { plan, global, slots })
    }

    /// Projects features and lays out the visual sequence with skip tokens.
    pub fn embed(&self, feats: &VisualFeatures) -> Result<Mat> {
        let global = self.projection.apply(&feats.global)?;
        let blocks = feats
            .slots
            .iter()
            .map(|(&k, m)| Ok((k, self.projection.apply(m)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        assemble_visual_sequence(&global, &blocks, &feats.plan, &self.skip)
    }

    pub fn zero_grads(&self) -> FrontendGrads {
        FrontendGrads { projection: Mat::zeros(self.projection.weight.raw_dim()), skip: Mat::zeros(self.skip.raw_dim()) }
    }

    /// Backpropagates gradients of the embedded visual sequence into the projection and skip embedding.
    pub fn backward(&self, feats: &VisualFeatures, d_rows: &Mat, grads: &mut FrontendGrads) {
        let layout = feats.plan.layout(feats.block_len());
        let mut inputs = Array2::zeros((layout.len(), feats.global.ncols()));
        for (i, &origin) in layout.iter().enumerate() {
            match feats.row_features(origin) {
                Some(row) => inputs.row_mut(i).assign(&row),
                None => {
                    let mut skip = grads.skip.row_mut(0);
                    skip += &d_rows.row(i);
                }
            }
        }
        // skip rows have zero inputs and contribute nothing to the projection gradient
        self.projection.backward(&inputs, d_rows, &mut grads.projection);
    }

    pub fn trainable_named(&self) -> Vec<(String, &Mat)> {
        vec![("projection.weight".to_string(), &self.projection.weight), ("skip_embedding".to_string(), &self.skip)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    fn cfg224(patch: usize, conv_stride: usize) -> MovConfig {
        MovConfig {
            channels: 3,
            target_res: 448,
            sub_res: 224,
            patch,
            conv_stride,
            d_attn: 64,
            d_conv: 64,
            attn_layers: 1,
            attn_heads: 4,
            d_llm: 32,
        }
    }

    #[test]
    fn attention_encoder_grid_shapes() {
        let enc = MovEncoders::init(cfg224(32, 32), 1).unwrap();
        let out = enc.encode_attn(&Image::zeros(224, 224, 3)).unwrap();
        assert_eq!((out.side, out.channels, out.data.dim()), (7, 64, (49, 64)));
        assert!(out.data.iter().all(|v| v.is_finite()));

        let enc = MovEncoders::init(cfg224(16, 16), 1).unwrap();
        let out = enc.encode_attn(&Image::zeros(224, 224, 3)).unwrap();
        assert_eq!((out.side, out.channels), (14, 64));
    }

    #[test]
    fn conv_encoder_grid_and_resample() {
        let enc = MovEncoders::init(cfg224(32, 32), 2).unwrap();
        let out = enc.encode_conv(&Image::filled(224, 224, 3, 0.3)).unwrap();
        assert_eq!((out.side, out.channels), (7, 64));

        let enc = MovEncoders::init(cfg224(32, 16), 2).unwrap();
        let img = Image::filled(224, 224, 3, 0.7);
        let fine = enc.encode_conv(&img).unwrap();
        assert_eq!(fine.side, 14);
        let coarse = fine.resample(7).unwrap();
        // constant input: average pooling equals nearest-neighbour downsampling
        for r in 0..7 {
            for c in 0..7 {
                for (a, b) in coarse.at(r, c).iter().zip(fine.at(2 * r, 2 * c).iter()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        assert_eq!(enc.encode(&img).unwrap().dim(), (49, 128));
    }

    #[test]
    fn constant_input_gives_spatially_constant_conv_output() {
        let enc = MovEncoders::init(cfg224(32, 32), 3).unwrap();
        let out = enc.encode_conv(&Image::filled(224, 224, 3, 0.42)).unwrap();
        let first = out.data.row(0).to_owned();
        assert!(out.data.rows().into_iter().all(|r| r == first));
    }

    #[test]
    fn encoders_stay_finite_on_extreme_inputs() {
        let enc = MovEncoders::init(MovConfig::nano(16), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut random = Image::zeros(32, 32, 3);
        random.data.mapv_inplace(|_| rng.random::<f64>());
        for img in [Image::zeros(32, 32, 3), Image::filled(32, 32, 3, 1.0), random] {
            assert!(enc.encode(&img).unwrap().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn wrong_resolution_is_rejected() {
        let enc = MovEncoders::init(MovConfig::nano(16), 4).unwrap();
        assert!(matches!(enc.encode_attn(&Image::zeros(31, 32, 3)), Err(Error::Input(_))));
        assert!(matches!(enc.encode_conv(&Image::zeros(32, 32, 1)), Err(Error::Input(_))));
    }

    #[test]
    fn fuse_concatenates_channels_in_order() {
        let a = EncoderOutput { side: 7, channels: 64, data: Mat::from_elem((49, 64), 1.5) };
        let z = EncoderOutput { side: 7, channels: 64, data: Mat::zeros((49, 64)) };
        let f = fuse(&a, &z).unwrap();
        assert_eq!((f.side, f.channels), (7, 128));
        assert!(f.data.slice(s![.., ..64]).iter().all(|&v| v == 1.5));
        assert!(f.data.slice(s![.., 64..]).iter().all(|&v| v == 0.0));
        assert_ne!(fuse(&a, &z).unwrap(), fuse(&z, &a).unwrap());
        let small = EncoderOutput { side: 6, channels: 64, data: Mat::zeros((36, 64)) };
        assert!(matches!(fuse(&a, &small), Err(Error::Internal(_))));
    }

    #[test]
    fn projection_shapes_and_identity() {
        let fused = EncoderOutput {
            side: 7,
            channels: 128,
            data: Mat::from_shape_fn((49, 128), |(i, j)| (i * 128 + j) as f64),
        };
        let id = Projection { weight: Mat::eye(128) };
        assert_eq!(id.project(&fused).unwrap(), fused.data);
        let p = Projection { weight: Mat::zeros((128, 48)) };
        assert_eq!(p.project(&fused).unwrap().dim(), (49, 48));
        let wrong = Projection { weight: Mat::zeros((64, 48)) };
        assert!(matches!(wrong.project(&fused), Err(Error::Config(_))));
    }

    #[test]
    fn projection_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let grid = EncoderOutput { side: 2, channels: 4, data: randn(&mut rng, 4, 4, 1.0) };
        let proj = Projection::init(&mut rng, 4, 3);
        let probe = randn(&mut rng, 4, 3, 1.0);
        let loss = |p: &Projection| (p.project(&grid).unwrap() * &probe).sum();
        let mut grad = Mat::zeros((4, 3));
        proj.backward(&grid.data, &probe, &mut grad);
        let h = 1e-3;
        for i in 0..4 {
            for j in 0..3 {
                let mut plus = proj.clone();
                plus.weight[[i, j]] += h;
                let mut minus = proj.clone();
                minus.weight[[i, j]] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let rel = (fd - grad[[i, j]]).abs() / fd.abs().max(grad[[i, j]].abs()).max(1e-12);
                assert!(rel < 1e-4, "({i},{j}) fd {fd} analytic {}", grad[[i, j]]);
            }
        }
    }

    #[test]
    fn token_block_length_is_grid_area() {
        let front = VisualFrontend::init(MovConfig::nano(16), 5).unwrap();
        let feats = front.features(&Image::filled(128, 64, 3, 0.2)).unwrap();
        assert_eq!(feats.block_len(), 16);
        assert_eq!(feats.plan.n_padded(), 2);
        let seq = front.embed(&feats).unwrap();
        assert_eq!(seq.dim(), (16 + 2 * 16 + 2, 16));
    }

    #[test]
    fn frontend_backward_routes_skip_and_projection_gradients() {
        let front = VisualFrontend::init(MovConfig::nano(8), 6).unwrap();
        let feats = front.features(&Image::filled(128, 64, 3, 0.6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let probe = randn(&mut rng, feats.sequence_len(), 8, 1.0);
        let loss = |f: &VisualFrontend| (f.embed(&feats).unwrap() * &probe).sum();
        let mut g = front.zero_grads();
        front.backward(&feats, &probe, &mut g);
        let h = 1e-4;
        for j in 0..8 {
            let mut p = front.clone();
            p.skip[[0, j]] += h;
            let mut m = front.clone();
            m.skip[[0, j]] -= h;
            assert!(((loss(&p) - loss(&m)) / (2.0 * h) - g.skip[[0, j]]).abs() < 1e-6);
        }
        let mut p = front.clone();
        p.projection.weight[[3, 2]] += h;
        let mut m = front.clone();
        m.projection.weight[[3, 2]] -= h;
        assert!(((loss(&p) - loss(&m)) / (2.0 * h) - g.projection[[3, 2]]).abs() < 1e-6);
    }
}

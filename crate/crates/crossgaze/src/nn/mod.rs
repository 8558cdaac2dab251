//! Parameterized building blocks: linear, conv block, residual block,
//! inception-style multi-branch block, layer norm, cross-attention, FCN
//! fusion and the gaze head.
//!
//! Blocks are free functions over a [`Session`], which binds a named
//! parameter set onto a tape. Parameters are addressed by dot-separated
//! paths; the path set of a model is a pure function of its configuration.

pub mod attention;

pub use attention::{cross_attention, cross_attention_logits, AttentionConfig};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

/// Named tensor collection. Iteration order is lexicographic in the path,
/// which fixes serialization and optimizer traversal order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T: Element> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Default for LayerParams<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> LayerParams<T> {
    pub fn new() -> Self {
        LayerParams { map: BTreeMap::new() }
    }

    /// Insert a tensor at a new path; duplicate paths are rejected so each
    /// parameter belongs to exactly one layer.
    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let path = path.into();
        if self.map.contains_key(&path) {
            return Err(Error::arg("params", format!("duplicate path {path:?}")));
        }
        self.map.insert(path, tensor);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Tensor<T>> {
        self.map
            .get(path)
            .ok_or_else(|| Error::arg("params", format!("unknown path {path:?}")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor<T>> {
        self.map
            .get_mut(path)
            .ok_or_else(|| Error::arg("params", format!("unknown path {path:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.map.iter_mut()
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn numel(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Element>(&self) -> LayerParams<U> {
        LayerParams {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed by a normalization layer during a training
/// forward pass; folded into running buffers by the training loop.
pub struct StatsUpdate<T: Element> {
    pub path_prefix: String,
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// Binds a parameter set (and normalization buffers) onto a tape for one
/// forward pass.
pub struct Session<'t, 'p, T: Element> {
    pub tape: &'t mut Tape<T>,
    vars: BTreeMap<String, Var>,
    buffers: &'p LayerParams<T>,
    mode: Mode,
    stats: Vec<StatsUpdate<T>>,
}

impl<'t, 'p, T: Element> Session<'t, 'p, T> {
    pub fn bind(
        tape: &'t mut Tape<T>,
        params: &LayerParams<T>,
        buffers: &'p LayerParams<T>,
        mode: Mode,
    ) -> Self {
        let mut vars = BTreeMap::new();
        for (path, tensor) in params.iter() {
            vars.insert(path.clone(), tape.leaf(tensor.clone(), true));
        }
        Session { tape, vars, buffers, mode, stats: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| Error::arg("session", format!("unbound parameter {path:?}")))
    }

    pub fn param_var_map(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    fn buffer_constant(&mut self, path: &str) -> Result<Var> {
        let t = self.buffers.get(path)?.clone();
        Ok(self.tape.constant(t))
    }

    pub fn into_stats(self) -> Vec<StatsUpdate<T>> {
        self.stats
    }
}

// ── blocks ──────────────────────────────────────────────────────────────

/// x·W + b for x of shape [B, in].
pub fn linear<T: Element>(s: &mut Session<T>, x: Var, path: &str) -> Result<Var> {
    let w = s.param(&format!("{path}.w"))?;
    let b = s.param(&format!("{path}.b"))?;
    let y = s.tape.matmul(x, w)?;
    s.tape.add(y, b)
}

pub fn linear_shapes(path: &str, in_dim: usize, out_dim: usize, out: &mut ShapeMap) {
    out.insert(format!("{path}.w"), vec![in_dim, out_dim]);
    out.insert(format!("{path}.b"), vec![out_dim]);
}

/// Per-channel normalization over batch and spatial axes: batch statistics
/// in training mode, running averages in eval mode.
fn norm2d<T: Element>(s: &mut Session<T>, x: Var, prefix: &str) -> Result<Var> {
    let channels = s.tape.value(x).shape()[1];
    let scale = s.param(&format!("{prefix}.scale"))?;
    let shift = s.param(&format!("{prefix}.shift"))?;
    let scale4 = s.tape.reshape(scale, &[1, channels, 1, 1])?;
    let shift4 = s.tape.reshape(shift, &[1, channels, 1, 1])?;
    let eps = T::from_f64(NORM_EPS);

    let xhat = match s.mode {
        Mode::Train => {
            let mean = s.tape.mean(x, &[0, 2, 3], true)?;
            let xc = s.tape.sub(x, mean)?;
            let sq = s.tape.mul(xc, xc)?;
            let var = s.tape.mean(sq, &[0, 2, 3], true)?;
            s.stats.push(StatsUpdate {
                path_prefix: prefix.to_string(),
                mean: s.tape.value(mean).clone().reshaped(&[channels])?,
                var: s.tape.value(var).clone().reshaped(&[channels])?,
            });
            let var_eps = s.tape.add_scalar(var, eps)?;
            let std = s.tape.sqrt(var_eps)?;
            s.tape.div(xc, std)?
        }
        Mode::Eval => {
            let rm = self::running_constant(s, prefix, "running_mean", channels)?;
            let rv = self::running_constant(s, prefix, "running_var", channels)?;
            let xc = s.tape.sub(x, rm)?;
            let var_eps = s.tape.add_scalar(rv, eps)?;
            let std = s.tape.sqrt(var_eps)?;
            s.tape.div(xc, std)?
        }
    };
    let scaled = s.tape.mul(xhat, scale4)?;
    s.tape.add(scaled, shift4)
}

fn running_constant<T: Element>(
    s: &mut Session<T>,
    prefix: &str,
    which: &str,
    channels: usize,
) -> Result<Var> {
    let v = s.buffer_constant(&format!("{prefix}.{which}"))?;
    s.tape.reshape(v, &[1, channels, 1, 1])
}

fn norm2d_shapes(prefix: &str, channels: usize, out: &mut ShapeMap) {
    out.insert(format!("{prefix}.scale"), vec![channels]);
    out.insert(format!("{prefix}.shift"), vec![channels]);
}

pub(crate) fn norm2d_buffer_shapes(prefix: &str, channels: usize, out: &mut ShapeMap) {
    out.insert(format!("{prefix}.running_mean"), vec![channels]);
    out.insert(format!("{prefix}.running_var"), vec![channels]);
}

/// relu(norm(conv(x))).
pub fn conv_block<T: Element>(
    s: &mut Session<T>,
    x: Var,
    path: &str,
    stride: usize,
) -> Result<Var> {
    let w = s.param(&format!("{path}.w"))?;
    let kh = s.tape.value(w).shape()[2];
    let y = s.tape.conv2d(x, w, stride, kh / 2)?;
    let y = norm2d(s, y, &format!("{path}.norm"))?;
    s.tape.relu(y)
}

pub fn conv_block_shapes(
    path: &str,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    out: &mut ShapeMap,
) {
    out.insert(format!("{path}.w"), vec![out_ch, in_ch, kernel, kernel]);
    norm2d_shapes(&format!("{path}.norm"), out_ch, out);
}

pub fn conv_block_buffer_shapes(path: &str, out_ch: usize, out: &mut ShapeMap) {
    norm2d_buffer_shapes(&format!("{path}.norm"), out_ch, out);
}

/// Basic residual unit: relu(skip(x) + conv(conv_block(x))). The second
/// convolution carries no activation before the add; the skip is the
/// identity unless channels or stride change, in which case it is a 1x1
/// projection.
pub fn residual_block<T: Element>(
    s: &mut Session<T>,
    x: Var,
    path: &str,
    stride: usize,
) -> Result<Var> {
    let h = conv_block(s, x, &format!("{path}.conv1"), stride)?;
    let w2 = s.param(&format!("{path}.conv2.w"))?;
    let f = s.tape.conv2d(h, w2, 1, 1)?;
    let skip = if s.vars.contains_key(&format!("{path}.skip.w")) {
        let ws = s.param(&format!("{path}.skip.w"))?;
        s.tape.conv2d(x, ws, stride, 0)?
    } else {
        x
    };
    let sum = s.tape.add(skip, f)?;
    s.tape.relu(sum)
}

pub fn residual_block_shapes(
    path: &str,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
    out: &mut ShapeMap,
) {
    conv_block_shapes(&format!("{path}.conv1"), in_ch, out_ch, 3, out);
    out.insert(format!("{path}.conv2.w"), vec![out_ch, out_ch, 3, 3]);
    if in_ch != out_ch || stride != 1 {
        out.insert(format!("{path}.skip.w"), vec![out_ch, in_ch, 1, 1]);
    }
}

pub fn residual_block_buffer_shapes(path: &str, out_ch: usize, out: &mut ShapeMap) {
    conv_block_buffer_shapes(&format!("{path}.conv1"), out_ch, out);
}

/// Branch width of the multi-branch block: half the block width, floored at
/// 16 (or the block width itself when narrower) so the inner matmul tiles
/// stay full.
pub fn branch_width(channels: usize) -> usize {
    (channels / 2).max(channels.min(16))
}

/// Inception-style block: parallel 1x1, 3x3 and stacked-3x3 (5x5 receptive
/// field) branches, concatenated, projected back to the input width and
/// added residually: relu(x + project(concat(branches))).
pub fn multi_branch_block<T: Element>(s: &mut Session<T>, x: Var, path: &str) -> Result<Var> {
    let b1 = conv_block(s, x, &format!("{path}.branch1"), 1)?;
    let b3 = conv_block(s, x, &format!("{path}.branch3"), 1)?;
    let b5a = conv_block(s, x, &format!("{path}.branch5a"), 1)?;
    let b5 = conv_block(s, b5a, &format!("{path}.branch5b"), 1)?;
    let cat = s.tape.concat(&[b1, b3, b5], 1)?;
    let wp = s.param(&format!("{path}.project.w"))?;
    let proj = s.tape.conv2d(cat, wp, 1, 0)?;
    let sum = s.tape.add(x, proj)?;
    s.tape.relu(sum)
}

pub fn multi_branch_block_shapes(path: &str, channels: usize, out: &mut ShapeMap) {
    let bw = branch_width(channels);
    conv_block_shapes(&format!("{path}.branch1"), channels, bw, 1, out);
    conv_block_shapes(&format!("{path}.branch3"), channels, bw, 3, out);
    conv_block_shapes(&format!("{path}.branch5a"), channels, bw, 3, out);
    conv_block_shapes(&format!("{path}.branch5b"), bw, bw, 3, out);
    out.insert(format!("{path}.project.w"), vec![channels, 3 * bw, 1, 1]);
}

pub fn multi_branch_block_buffer_shapes(path: &str, channels: usize, out: &mut ShapeMap) {
    let bw = branch_width(channels);
    conv_block_buffer_shapes(&format!("{path}.branch1"), bw, out);
    conv_block_buffer_shapes(&format!("{path}.branch3"), bw, out);
    conv_block_buffer_shapes(&format!("{path}.branch5a"), bw, out);
    conv_block_buffer_shapes(&format!("{path}.branch5b"), bw, out);
}

/// Normalization over the last axis with learned scale and shift.
pub fn layer_norm<T: Element>(s: &mut Session<T>, x: Var, path: &str) -> Result<Var> {
    let nd = s.tape.value(x).ndim();
    let axis = nd - 1;
    let scale = s.param(&format!("{path}.scale"))?;
    let shift = s.param(&format!("{path}.shift"))?;
    let mean = s.tape.mean(x, &[axis], true)?;
    let xc = s.tape.sub(x, mean)?;
    let sq = s.tape.mul(xc, xc)?;
    let var = s.tape.mean(sq, &[axis], true)?;
    let var_eps = s.tape.add_scalar(var, T::from_f64(NORM_EPS))?;
    let std = s.tape.sqrt(var_eps)?;
    let xhat = s.tape.div(xc, std)?;
    let scaled = s.tape.mul(xhat, scale)?;
    s.tape.add(scaled, shift)
}

pub fn layer_norm_shapes(path: &str, dim: usize, out: &mut ShapeMap) {
    out.insert(format!("{path}.scale"), vec![dim]);
    out.insert(format!("{path}.shift"), vec![dim]);
}

/// Concatenate a face and an eye feature vector and fuse through a two-layer
/// network: linear(2d -> d) -> relu -> linear(d -> d).
pub fn fcn_fusion<T: Element>(
    s: &mut Session<T>,
    face_vec: Var,
    eye_vec: Var,
    path: &str,
) -> Result<Var> {
    let fs = s.tape.value(face_vec).shape().to_vec();
    let es = s.tape.value(eye_vec).shape().to_vec();
    if fs.len() != 2 || es.len() != 2 || fs != es {
        return Err(Error::ShapeMismatch { op: "fcn_fusion", lhs: fs, rhs: es });
    }
    let cat = s.tape.concat(&[face_vec, eye_vec], 1)?;
    let h = linear(s, cat, &format!("{path}.fc1"))?;
    let h = s.tape.relu(h)?;
    linear(s, h, &format!("{path}.fc2"))
}

pub fn fcn_fusion_shapes(path: &str, dim: usize, out: &mut ShapeMap) {
    linear_shapes(&format!("{path}.fc1"), 2 * dim, dim, out);
    linear_shapes(&format!("{path}.fc2"), dim, dim, out);
}

/// Gaze head: linear(d -> d/2) -> relu -> linear(d/2 -> 3), raw output.
pub fn mlp_head<T: Element>(s: &mut Session<T>, fused: Var, path: &str) -> Result<Var> {
    let h = linear(s, fused, &format!("{path}.fc1"))?;
    let h = s.tape.relu(h)?;
    linear(s, h, &format!("{path}.fc2"))
}

pub fn mlp_head_shapes(path: &str, dim: usize, out: &mut ShapeMap) {
    linear_shapes(&format!("{path}.fc1"), dim, dim / 2, out);
    linear_shapes(&format!("{path}.fc2"), dim / 2, 3, out);
}

/// Ordered path -> shape map used to declare and validate parameter sets.
pub type ShapeMap = BTreeMap<String, Vec<usize>>;

#[cfg(test)]
mod tests {
    use super::*;

    fn bind_all(shapes: &ShapeMap, fill: f64) -> LayerParams<f64> {
        let mut p = LayerParams::new();
        for (path, shape) in shapes {
            p.insert(path.clone(), Tensor::filled(shape, fill)).unwrap();
        }
        p
    }

    #[test]
    fn duplicate_path_rejected() {
        let mut p = LayerParams::<f32>::new();
        p.insert("a.w", Tensor::zeros(&[1])).unwrap();
        assert!(p.insert("a.w", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn paths_enumerate_lexicographically() {
        let mut p = LayerParams::<f32>::new();
        p.insert("b", Tensor::zeros(&[1])).unwrap();
        p.insert("a.z", Tensor::zeros(&[1])).unwrap();
        p.insert("a.a", Tensor::zeros(&[1])).unwrap();
        let order: Vec<&String> = p.paths().collect();
        assert_eq!(order, ["a.a", "a.z", "b"]);
    }

    #[test]
    fn linear_identity_and_hand_case() {
        let mut shapes = ShapeMap::new();
        linear_shapes("lin", 2, 2, &mut shapes);
        let mut params = LayerParams::<f64>::new();
        params
            .insert("lin.w", Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        params.insert("lin.b", Tensor::zeros(&[2])).unwrap();
        let buffers = LayerParams::new();
        let mut tape = Tape::new();
        let mut s = Session::bind(&mut tape, &params, &buffers, Mode::Eval);
        let x = s.tape.leaf(Tensor::new(vec![1, 2], vec![3.0, -4.0]).unwrap(), false);
        let y = linear(&mut s, x, "lin").unwrap();
        assert_eq!(s.tape.value(y).data(), &[3.0, -4.0]);

        // x=[1,1], W=[[1],[1]], b=[0.5] -> [2.5]
        let mut params = LayerParams::<f64>::new();
        params
            .insert("lin.w", Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap())
            .unwrap();
        params.insert("lin.b", Tensor::filled(&[1], 0.5)).unwrap();
        let mut tape = Tape::new();
        let mut s = Session::bind(&mut tape, &params, &buffers, Mode::Eval);
        let x = s.tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap(), false);
        let y = linear(&mut s, x, "lin").unwrap();
        assert_eq!(s.tape.value(y).data(), &[2.5]);
    }

    #[test]
    fn conv_block_zero_weights_pass_shift_through_relu() {
        let mut shapes = ShapeMap::new();
        conv_block_shapes("cb", 2, 3, 3, &mut shapes);
        let mut params = bind_all(&shapes, 0.0);
        // scale 1, shift beta with both signs
        *params.get_mut("cb.norm.scale").unwrap() = Tensor::filled(&[3], 1.0);
        *params.get_mut("cb.norm.shift").unwrap() =
            Tensor::new(vec![3], vec![0.7, -0.3, 0.0]).unwrap();
        let buffers = LayerParams::new();
        let mut tape = Tape::new();
        let mut s = Session::bind(&mut tape, &params, &buffers, Mode::Train);
        let x = s.tape.leaf(Tensor::filled(&[2, 2, 5, 5], 0.4), false);
        let y = conv_block(&mut s, x, "cb", 1).unwrap();
        let out = s.tape.value(y);
        for b in 0..2 {
            for (c, expect) in [0.7, 0.0, 0.0].iter().enumerate() {
                for iy in 0..5 {
                    for ix in 0..5 {
                        let v = out.at(&[b, c, iy, ix]);
                        assert!((v - expect).abs() < 1e-9, "channel {c}: {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn residual_block_zero_branch_is_relu_of_input() {
        let mut shapes = ShapeMap::new();
        residual_block_shapes("rb", 3, 3, 1, &mut shapes);
        assert!(!shapes.contains_key("rb.skip.w"), "identity skip expected");
        let mut params = bind_all(&shapes, 0.0);
        *params.get_mut("rb.conv1.norm.scale").unwrap() = Tensor::filled(&[3], 1.0);
        let buffers = LayerParams::new();
        let mut tape = Tape::new();
        let mut s = Session::bind(&mut tape, &params, &buffers, Mode::Train);
        let x_t = Tensor::<f64>::from_fn(&[1, 3, 4, 4], |i| (i as f64) * 0.25 - 3.0);
        let x = s.tape.leaf(x_t.clone(), false);
        let y = residual_block(&mut s, x, "rb", 1).unwrap();
        let out = s.tape.value(y);
        for (o, &xin) in out.data().iter().zip(x_t.data()) {
            assert!((o - xin.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_block_stride_two_halves_spatial_dims() {
        let mut shapes = ShapeMap::new();
        residual_block_shapes("rb", 4, 8, 2, &mut shapes);
        assert_eq!(shapes["rb.skip.w"], vec![8, 4, 1, 1]);
        let params = bind_all(&shapes, 0.01);
        let buffers = LayerParams::new();
        let mut tape = Tape::new();
        let mut s = Session::bind(&mut tape, &params, &buffers, Mode::Train);
        let x = s.tape.leaf(Tensor::filled(&[2, 4, 8, 8], 0.5), false);
        let y = residual_block(&mut s, x, "rb", 2).unwrap();
        assert_eq!(s.tape.value(y).shape(), &[2, 8, 4, 4]);
    }

    #[test]
    fn multi_branch_block_preserves_channels_and_zero_init_is_relu() {
        let mut shapes = ShapeMap::new();
        multi_branch_block_shapes("mb", 4, &mut shapes);
        let mut params = bind_all(&shapes, 0.3);
        // zeroed projection gives relu(x) regardless of branch weights
        *params.get_mut("mb.project.w").unwrap() = Tensor::zeros(&[4, 12, 1, 1]);
        let buffers = LayerParams::new();
        let mut tape = Tape::new();
        let mut s = Session::bind(&mut tape, &params, &buffers, Mode::Train);
        let x_t = Tensor::<f64>::from_fn(&[1, 4, 6, 6], |i| (i % 7) as f64 - 3.0);
        let x = s.tape.leaf(x_t.clone(), false);
        let y = multi_branch_block(&mut s, x, "mb").unwrap();
        assert_eq!(s.tape.value(y).shape(), &[1, 4, 6, 6]);
        for (o, &xin) in s.tape.value(y).data().iter().zip(x_t.data()) {
            assert!((o - xin.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_centers_and_scales() {
        let mut shapes = ShapeMap::new();
        layer_norm_shapes("ln", 2, &mut shapes);
        let mut params = bind_all(&shapes, 0.0);
        *params.get_mut("ln.scale").unwrap() = Tensor::filled(&[2], 1.0);
        let buffers = LayerParams::new();
        let mut tape = Tape::new();
        let mut s = Session::bind(&mut tape, &params, &buffers, Mode::Eval);
        let x = s.tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap(), false);
        let y = layer_norm(&mut s, x, "ln").unwrap();
        let out = s.tape.value(y);
        assert!((out.data()[0] + 1.0).abs() < 1e-3);
        assert!((out.data()[1] - 1.0).abs() < 1e-3);

        // constant vector: zeros before shift (variance floor via eps)
        let c = s.tape.leaf(Tensor::filled(&[1, 2], 5.0), false);
        let y = layer_norm(&mut s, c, "ln").unwrap();
        assert!(s.tape.value(y).data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn fcn_fusion_zero_params_give_zero_and_shape_holds() {
        let mut shapes = ShapeMap::new();
        fcn_fusion_shapes("fuse", 4, &mut shapes);
        let params = bind_all(&shapes, 0.0);
        let buffers = LayerParams::new();
        let mut tape = Tape::new();
        let mut s = Session::bind(&mut tape, &params, &buffers, Mode::Eval);
        let f = s.tape.leaf(Tensor::filled(&[3, 4], 1.0), false);
        let e = s.tape.leaf(Tensor::filled(&[3, 4], -2.0), false);
        let y = fcn_fusion(&mut s, f, e, "fuse").unwrap();
        assert_eq!(s.tape.value(y).shape(), &[3, 4]);
        assert!(s.tape.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mlp_head_zero_weights_and_shape() {
        let mut shapes = ShapeMap::new();
        mlp_head_shapes("head", 8, &mut shapes);
        let params = bind_all(&shapes, 0.0);
        let buffers = LayerParams::new();
        let mut tape = Tape::new();
        let mut s = Session::bind(&mut tape, &params, &buffers, Mode::Eval);
        let x = s.tape.leaf(Tensor::filled(&[5, 8], 2.0), false);
        let y = mlp_head(&mut s, x, "head").unwrap();
        assert_eq!(s.tape.value(y).shape(), &[5, 3]);
        assert!(s.tape.value(y).data().iter().all(|v| *v == 0.0));
    }
}

use super::config::{EmbeddingKind, FirstLayer, ModelConfig};
use crate::error::{input, Result};
use crate::numerics::{Matrix, Rng};
use std::collections::BTreeMap;

/// One dense layer `x ↦ W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Matrix,
}

impl Dense {
    pub fn new(w: Matrix, b: Vec<f64>) -> Self {
        let n = b.len();
        Dense { w, b: Matrix::from_vec(n, 1, b).expect("bias length") }
    }

    pub fn zeros(out: usize, inp: usize) -> Self {
        Dense { w: Matrix::zeros(out, inp), b: Matrix::zeros(out, 1) }
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.w.matvec(x);
        for (v, b) in y.iter_mut().zip(self.b.data()) {
            *v += b;
        }
        y
    }
}

/// Dense layers with ReLU between consecutive ones (none after the last).
pub fn mlp_apply(layers: &[Dense], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, l) in layers.iter().enumerate() {
        h = l.apply(&h);
        if i + 1 < layers.len() {
            h.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    h
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub ffn: Vec<Dense>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `W_E` (m × (2k+1)) in standard mode; in minimal mode the embedding
    /// table, one column per [`embedding_slot`].
    pub embed: Matrix,
    pub layers: Vec<LayerParams>,
    pub head_w: Matrix,
    pub head_b: Option<Matrix>,
}

/// Column of the minimal-mode table for `token` at post-token `depth`.
/// Opens live at depths 1..=D, closes at 0..D−1; the start token takes the last slot.
pub fn embedding_slot(k: usize, d: usize, token: usize, depth: usize) -> usize {
    if token == 2 * k + 1 {
        return 2 * k * d;
    }
    let even = token.is_multiple_of(2);
    (token - 1) * d + depth + usize::from(even) - 1
}

pub fn embedding_slot_count(k: usize, d: usize) -> usize {
    2 * k * d + 1
}

/// `(token, depth)` for every slot, in slot order.
pub fn slot_inputs(k: usize, d: usize) -> Vec<(usize, usize)> {
    let mut out = vec![(0, 0); embedding_slot_count(k, d)];
    for tok in 1..=2 * k {
        let depths = if tok % 2 == 1 { 1..=d } else { 0..=d - 1 };
        for dep in depths {
            out[embedding_slot(k, d, tok, dep)] = (tok, dep);
        }
    }
    out[2 * k * d] = (2 * k + 1, 0);
    out
}

/// The deterministic (type, depth) table for `kind`, zero-padded to `m` rows.
pub fn embedding_table(kind: EmbeddingKind, k: usize, d: usize, m: usize) -> Result<Matrix> {
    let need = kind.dim(k, d);
    if m < need {
        return input(format!("embedding needs {need} rows, got {m}"));
    }
    let slots = slot_inputs(k, d);
    let mut t = Matrix::zeros(m, slots.len());
    for (s, &(tok, dep)) in slots.iter().enumerate() {
        match kind {
            EmbeddingKind::OnehotJoint => t[(s, s)] = 1.0,
            EmbeddingKind::OnehotConcat => {
                t[(tok - 1, s)] = 1.0;
                t[(2 * k + 1 + dep, s)] = 1.0;
            }
            EmbeddingKind::TrigConcat => {
                t[(tok - 1, s)] = 1.0;
                let theta = (dep as f64).atan2((d + 2 - dep) as f64);
                t[(2 * k + 1, s)] = theta.cos();
                t[(2 * k + 2, s)] = theta.sin();
            }
        }
    }
    Ok(t)
}

fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Matrix {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_in(-a, a))
}

impl ModelParams {
    /// Random initialization: entries uniform in `±1/√fan_in`.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (m, ma, w) = (config.dim, config.attn_dim, config.ffn_width);
        let vocab_in = 2 * config.k + 1;
        let embed = match config.first_layer {
            FirstLayer::Standard => uniform_init(m, vocab_in, vocab_in, rng),
            FirstLayer::Minimal { embedding } => embedding_table(embedding, config.k, config.depth, m)?,
        };
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let (wq, wk) = if config.frozen_uniform_attention {
                (Matrix::zeros(ma, m), Matrix::zeros(ma, m))
            } else {
                (uniform_init(ma, m, m, rng), uniform_init(ma, m, m, rng))
            };
            let wv = uniform_init(m, m, m, rng);
            let mut ffn = Vec::with_capacity(config.ffn_depth);
            for i in 0..config.ffn_depth {
                let inp = if i == 0 { m } else { w };
                let out = if i + 1 == config.ffn_depth { m } else { w };
                ffn.push(Dense { w: uniform_init(out, inp, inp, rng), b: uniform_init(out, 1, inp, rng) });
            }
            layers.push(LayerParams { wq, wk, wv, ffn });
        }
        let v = config.vocab();
        let head_w = uniform_init(v, m, m, rng);
        let head_b = config.head_bias.then(|| uniform_init(v, 1, m, rng));
        let p = ModelParams { config: config.clone(), embed, layers, head_w, head_b };
        p.check_shapes()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let m = c.dim;
        let cols = if c.is_minimal() { embedding_slot_count(c.k, c.depth) } else { 2 * c.k + 1 };
        if self.embed.shape() != (m, cols) {
            return input(format!("embedding shape {:?}, want {:?}", self.embed.shape(), (m, cols)));
        }
        if self.layers.len() != c.layers {
            return input("layer count disagrees with config");
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let ma = layer.wq.rows();
            if layer.wq.shape() != (ma, m) || layer.wk.shape() != (ma, m) || layer.wv.shape() != (m, m) {
                return input(format!("layer {l}: attention shapes inconsistent"));
            }
            if layer.ffn.is_empty() {
                return input(format!("layer {l}: empty feed-forward stack"));
            }
            let mut width = m;
            for d in &layer.ffn {
                if d.in_dim() != width || d.b.shape() != (d.out_dim(), 1) {
                    return input(format!("layer {l}: feed-forward chain breaks"));
                }
                width = d.out_dim();
            }
            if width != m {
                return input(format!("layer {l}: feed-forward output is {width}, want {m}"));
            }
        }
        if self.head_w.shape() != (c.vocab(), m) {
            return input("head shape disagrees with config");
        }
        if let Some(b) = &self.head_b {
            if b.shape() != (c.vocab(), 1) {
                return input("head bias shape disagrees with config");
            }
        }
        Ok(())
    }

    /// Every tensor under its checkpoint name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.wq"), &layer.wq));
            out.push((format!("layer{l}.wk"), &layer.wk));
            out.push((format!("layer{l}.wv"), &layer.wv));
            for (i, d) in layer.ffn.iter().enumerate() {
                out.push((format!("layer{l}.ffn{i}.w"), &d.w));
                out.push((format!("layer{l}.ffn{i}.b"), &d.b));
            }
        }
        out.push(("head.w".to_string(), &self.head_w));
        if let Some(b) = &self.head_b {
            out.push(("head.b".to_string(), b));
        }
        out
    }

    /// Trainability of each tensor, in [`ModelParams::named_tensors`] order.
    pub fn trainable_flags(&self) -> Vec<bool> {
        let c = &self.config;
        let qk = !c.frozen_uniform_attention;
        let mut out = vec![!c.is_minimal()];
        for layer in &self.layers {
            out.extend([qk, qk, true]);
            out.extend(std::iter::repeat_n(true, 2 * layer.ffn.len()));
        }
        out.push(true);
        if self.head_b.is_some() {
            out.push(true);
        }
        out
    }

    /// Same order as [`ModelParams::named_tensors`], with a trainability flag.
    pub(crate) fn tensors_mut(&mut self) -> Vec<(&mut Matrix, bool)> {
        let c = self.config.clone();
        let qk = !c.frozen_uniform_attention;
        let mut out = vec![(&mut self.embed, !c.is_minimal())];
        for layer in &mut self.layers {
            out.push((&mut layer.wq, qk));
            out.push((&mut layer.wk, qk));
            out.push((&mut layer.wv, true));
            for d in &mut layer.ffn {
                out.push((&mut d.w, true));
                out.push((&mut d.b, true));
            }
        }
        out.push((&mut self.head_w, true));
        if let Some(b) = &mut self.head_b {
            out.push((b, true));
        }
        out
    }

    /// Rebuilds parameters from named tensors; feed-forward depth per layer is
    /// inferred from the names present.
    pub fn from_named(config: ModelConfig, mut tensors: BTreeMap<String, Matrix>) -> Result<Self> {
        let mut take = |name: &str| {
            tensors.remove(name).ok_or_else(|| crate::Error::Format(format!("missing tensor {name:?}")))
        };
        let embed = take("embed")?;
        let mut layers = Vec::new();
        for l in 0..config.layers {
            let wq = take(&format!("layer{l}.wq"))?;
            let wk = take(&format!("layer{l}.wk"))?;
            let wv = take(&format!("layer{l}.wv"))?;
            let mut ffn = Vec::new();
            while let Ok(w) = take(&format!("layer{l}.ffn{}.w", ffn.len())) {
                let b = take(&format!("layer{l}.ffn{}.b", ffn.len()))?;
                ffn.push(Dense { w, b });
            }
            layers.push(LayerParams { wq, wk, wv, ffn });
        }
        let head_w = take("head.w")?;
        let head_b = take("head.b").ok();
        if let Some(extra) = tensors.keys().next() {
            return Err(crate::Error::Format(format!("unexpected tensor {extra:?}")));
        }
        let p = ModelParams { config, embed, layers, head_w, head_b };
        p.check_shapes()?;
        Ok(p)
    }

    pub fn parameter_norm_sq(&self) -> f64 {
        self.named_tensors().iter().map(|(_, t)| t.frobenius_sq()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_embedding_index() {
        // Open type 1 at depth 2 sits at one-based index 2.
        let t = embedding_table(EmbeddingKind::OnehotJoint, 2, 4, 17).unwrap();
        let s = embedding_slot(2, 4, 1, 2);
        assert_eq!(s, 1);
        assert_eq!(t.column(s).iter().position(|&v| v == 1.0), Some(1));
    }

    #[test]
    fn slots_are_a_bijection() {
        for (k, d) in [(1, 1), (2, 3), (2, 4), (3, 2)] {
            let slots = slot_inputs(k, d);
            let mut seen = std::collections::BTreeSet::new();
            for (s, &(tok, dep)) in slots.iter().enumerate() {
                assert_eq!(embedding_slot(k, d, tok, dep), s);
                assert!(seen.insert((tok, dep)));
            }
            assert_eq!(slots.len(), 2 * k * d + 1);
        }
    }

    #[test]
    fn tables_have_independent_columns_where_expected() {
        use crate::numerics::linalg::rank;
        let (k, d) = (2, 4);
        let joint = embedding_table(EmbeddingKind::OnehotJoint, k, d, 17).unwrap();
        assert_eq!(rank(&joint, 1e-12), 17);
        // Concatenated encodings cannot separate all 17 slots.
        let cat = embedding_table(EmbeddingKind::OnehotConcat, k, d, 10).unwrap();
        assert!(rank(&cat, 1e-12) < 17);
        let trig = embedding_table(EmbeddingKind::TrigConcat, k, d, 7).unwrap();
        for s in 0..trig.cols() {
            let c = trig.column(s);
            assert!((c[5].powi(2) + c[6].powi(2) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn init_shapes_and_named_roundtrip() {
        let cfg = ModelConfig { dim: 6, attn_dim: 4, ffn_width: 5, ffn_depth: 3, ..Default::default() };
        let p = ModelParams::init(&cfg, &mut Rng::seed(3)).unwrap();
        let map: BTreeMap<String, Matrix> =
            p.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let q = ModelParams::from_named(cfg, map).unwrap();
        assert_eq!(p, q);
        let bound = 1.0 / 6f64.sqrt();
        assert!(p.layers[0].wv.max_abs() <= bound);
    }
}

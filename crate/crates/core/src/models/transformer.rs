//! Post-norm transformer encoder with mean pooling.

use rand::Rng;

use super::{ModelConfig, ParamSpec};
use crate::error::Result;
use crate::numeric::{Graph, Tensor, Var};

const PER_BLOCK: usize = 16;

pub(super) fn declare(c: &ModelConfig) -> Vec<ParamSpec> {
    let d = c.model_dim;
    let mut specs = vec![
        ParamSpec::weight("input.weight", c.input_dim, d),
        ParamSpec::bias("input.bias", d),
    ];
    for l in 0..c.layers {
        let n = |s: &str| format!("block{l}.{s}");
        for proj in ["query", "key", "value", "out"] {
            specs.push(ParamSpec::weight(n(&format!("attn.{proj}.weight")), d, d));
            specs.push(ParamSpec::bias(n(&format!("attn.{proj}.bias")), d));
        }
        specs.push(ParamSpec::gain(n("norm1.gain"), d));
        specs.push(ParamSpec::bias(n("norm1.bias"), d));
        specs.push(ParamSpec::weight(n("ffn.hidden.weight"), d, c.ffn_dim));
        specs.push(ParamSpec::bias(n("ffn.hidden.bias"), c.ffn_dim));
        specs.push(ParamSpec::weight(n("ffn.out.weight"), c.ffn_dim, d));
        specs.push(ParamSpec::bias(n("ffn.out.bias"), d));
        specs.push(ParamSpec::gain(n("norm2.gain"), d));
        specs.push(ParamSpec::bias(n("norm2.bias"), d));
    }
    specs.push(ParamSpec::weight("head.weight", d, c.num_classes));
    specs.push(ParamSpec::bias("head.bias", c.num_classes));
    specs
}

/// Sinusoidal position table, `[len, dim]`.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * freq;
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(len, dim, data).expect("positive dims")
}

pub(super) fn forward<R: Rng>(
    c: &ModelConfig,
    g: &mut Graph,
    p: &[Var],
    x: Var,
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    let t = g.value(x).rows();
    let mut h = g.linear(x, p[0], p[1])?;
    if c.positional_encoding {
        let pe = g.constant(positional_encoding(t, c.model_dim));
        h = g.add(h, pe)?;
    }
    h = g.dropout(h, c.dropout, train, rng)?;

    let head_dim = c.model_dim / c.heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    for l in 0..c.layers {
        let b = &p[2 + l * PER_BLOCK..2 + (l + 1) * PER_BLOCK];
        let q = g.linear(h, b[0], b[1])?;
        let k = g.linear(h, b[2], b[3])?;
        let v = g.linear(h, b[4], b[5])?;
        let mut heads = Vec::with_capacity(c.heads);
        for head in 0..c.heads {
            let (lo, hi) = (head * head_dim, (head + 1) * head_dim);
            let qh = g.slice(q, 1, lo, hi)?;
            let kh = g.slice(k, 1, lo, hi)?;
            let vh = g.slice(v, 1, lo, hi)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.softmax(scores)?;
            heads.push(g.matmul(attn, vh)?);
        }
        let cat = g.concat(&heads)?;
        let att = g.linear(cat, b[6], b[7])?;
        let att = g.dropout(att, c.dropout, train, rng)?;
        let res = g.add(h, att)?;
        h = g.layer_norm(res, b[8], b[9], c.layer_norm_eps)?;

        let f = g.linear(h, b[10], b[11])?;
        let f = g.relu(f)?;
        let f = g.linear(f, b[12], b[13])?;
        let f = g.dropout(f, c.dropout, train, rng)?;
        let res = g.add(h, f)?;
        h = g.layer_norm(res, b[14], b[15], c.layer_norm_eps)?;
    }
    let pooled = g.mean_rows(h)?;
    let n = p.len();
    Ok(g.linear(pooled, p[n - 2], p[n - 1])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelKind, SequenceModel};

    #[test]
    fn positional_table_values() {
        let pe = positional_encoding(3, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.row(1)[0] - 1f64.sin()).abs() < 1e-15);
        assert!((pe.row(2)[3] - (2.0 / 100.0f64).cos()).abs() < 1e-15);
    }

    #[test]
    fn parameter_count() {
        let m = SequenceModel::new(ModelConfig::new(ModelKind::Transformer, 100, 0)).unwrap();
        let d = 64;
        let block = 4 * (d * d + d) + 2 * d + (d * 128 + 128) + (128 * d + d) + 2 * d;
        assert_eq!(
            m.params().num_scalars(),
            100 * d + d + 2 * block + d * 4 + 4
        );
    }

    #[test]
    fn positional_encoding_breaks_order_invariance() {
        let mut c = ModelConfig::new(ModelKind::Transformer, 2, 5);
        let x = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let xr = Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        c.positional_encoding = false;
        let m = SequenceModel::new(c.clone()).unwrap();
        let (a, b) = (m.logits(&x).unwrap(), m.logits(&xr).unwrap());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        c.positional_encoding = true;
        let m = SequenceModel::new(c).unwrap();
        assert_ne!(m.logits(&x).unwrap(), m.logits(&xr).unwrap());
    }
}

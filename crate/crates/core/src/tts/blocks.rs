use candle_core::{Tensor, D};

use crate::error::Result;
use crate::nn::{relu, softmax_last, Conv1d, LayerNorm, Linear, Scope};

fn conv_btc(conv: &Conv1d, x: &Tensor) -> Result<Tensor> {
    conv.forward_btc(x)
}

#[derive(Debug, Clone)]
pub(crate) struct MultiHeadAttention {
    qkv: Linear,
    out: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    fn new(s: &mut Scope, hidden: usize, heads: usize) -> Result<Self> {
        Ok(MultiHeadAttention {
            qkv: Linear::new(&mut s.sub("qkv"), hidden, 3 * hidden, true)?,
            out: Linear::new(&mut s.sub("out"), hidden, hidden, true)?,
            heads,
        })
    }

    /// `x`: `(batch, len, hidden)`; `bias`: `(batch, 1, 1, len)` additive key mask.
    fn forward(&self, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (b, l, h) = x.dims3()?;
        let d = h / self.heads;
        let qkv = self.qkv.forward(x)?;
        let split = |i: usize| -> Result<Tensor> {
            Ok(qkv
                .narrow(2, i * h, h)?
                .reshape((b, l, self.heads, d))?
                .transpose(1, 2)?
                .contiguous()?)
        };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (d as f64).sqrt())?.broadcast_add(bias)?;
        let ctx = softmax_last(&scores)?.matmul(&v)?;
        self.out.forward(&ctx.transpose(1, 2)?.reshape((b, l, h))?)
    }
}

/// Post-norm transformer block with a convolutional feed-forward.
#[derive(Debug, Clone)]
pub(crate) struct FftBlock {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    conv1: Conv1d,
    conv2: Conv1d,
    ln2: LayerNorm,
}

impl FftBlock {
    pub(crate) fn new(s: &mut Scope, hidden: usize, heads: usize, filter: usize, kernel: usize) -> Result<Self> {
        Ok(FftBlock {
            attn: MultiHeadAttention::new(&mut s.sub("attn"), hidden, heads)?,
            ln1: LayerNorm::new(&mut s.sub("ln1"), hidden)?,
            conv1: Conv1d::new(&mut s.sub("conv1"), hidden, filter, kernel, 1, kernel / 2)?,
            conv2: Conv1d::new(&mut s.sub("conv2"), filter, hidden, 1, 1, 0)?,
            ln2: LayerNorm::new(&mut s.sub("ln2"), hidden)?,
        })
    }

    /// `mask`: `(batch, len, 1)` with 1 on valid positions.
    pub(crate) fn forward(&self, x: &Tensor, mask: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let a = self.attn.forward(x, bias)?;
        let x = self.ln1.forward(&(x + a)?)?.broadcast_mul(mask)?;
        let f = conv_btc(&self.conv2, &relu(&conv_btc(&self.conv1, &x)?)?)?;
        Ok(self.ln2.forward(&(x + f)?)?.broadcast_mul(mask)?)
    }
}

/// Two convolution layers and a scalar head, one output per position.
#[derive(Debug, Clone)]
pub(crate) struct VariancePredictor {
    conv1: Conv1d,
    ln1: LayerNorm,
    conv2: Conv1d,
    ln2: LayerNorm,
    out: Linear,
}

impl VariancePredictor {
    pub(crate) fn new(s: &mut Scope, hidden: usize, filter: usize, kernel: usize) -> Result<Self> {
        Ok(VariancePredictor {
            conv1: Conv1d::new(&mut s.sub("conv1"), hidden, filter, kernel, 1, kernel / 2)?,
            ln1: LayerNorm::new(&mut s.sub("ln1"), filter)?,
            conv2: Conv1d::new(&mut s.sub("conv2"), filter, filter, kernel, 1, kernel / 2)?,
            ln2: LayerNorm::new(&mut s.sub("ln2"), filter)?,
            out: Linear::new(&mut s.sub("out"), filter, 1, true)?,
        })
    }

    /// `(batch, len, hidden)` to `(batch, len)`, zero on padding.
    pub(crate) fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let h = relu(&conv_btc(&self.conv1, &x.broadcast_mul(mask)?)?)?;
        let h = self.ln1.forward(&h)?.broadcast_mul(mask)?;
        let h = relu(&conv_btc(&self.conv2, &h)?)?;
        let h = self.ln2.forward(&h)?.broadcast_mul(mask)?;
        Ok(self.out.forward(&h)?.broadcast_mul(mask)?.squeeze(D::Minus1)?)
    }
}

/// Two stacked linear maps from a speaker representation to the hidden width.
#[derive(Debug, Clone)]
pub(crate) struct SpeakerProjection {
    first: Linear,
    second: Linear,
}

impl SpeakerProjection {
    pub(crate) fn new(s: &mut Scope, input: usize, hidden: usize) -> Result<Self> {
        Ok(SpeakerProjection {
            first: Linear::new(&mut s.sub("first"), input, hidden, true)?,
            second: Linear::new(&mut s.sub("second"), hidden, hidden, true)?,
        })
    }

    pub(crate) fn forward(&self, rep: &Tensor) -> Result<Tensor> {
        self.second.forward(&self.first.forward(rep)?)
    }
}

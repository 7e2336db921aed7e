use candle_core::{DType, Device, Tensor, D};

use super::{Init, Scope};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(s: &mut Scope, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = s.param("weight", &[out_dim, in_dim], Init::Uniform(bound))?;
        let bias = if bias {
            Some(s.param("bias", &[out_dim], Init::Zeros)?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    /// Applies to the last dimension of a tensor of any rank.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().expect("rank >= 1");
        let rows = x.elem_count() / in_dim;
        let y = x.reshape((rows, in_dim))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.weight.dim(0)?;
        Ok(y.reshape(out_dims)?)
    }
}

/// Convolution over `(batch, channels, time)`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv1d {
    pub fn new(
        s: &mut Scope,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        Ok(Conv1d {
            weight: s.param("weight", &[out_ch, in_ch, kernel], Init::Uniform(bound))?,
            bias: s.param("bias", &[out_ch], Init::Zeros)?,
            stride,
            padding,
        })
    }

    /// `(batch, channels, time)` in and out.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward_btc(&x.transpose(1, 2)?)?;
        Ok(y.transpose(1, 2)?.contiguous()?)
    }

    /// Same convolution on `(batch, time, channels)` layout.
    ///
    /// Computed as an unfold (one gather) followed by a single matmul. The
    /// built-in convolution's kernel gradient is wrong for batches larger
    /// than one in the candle release used here.
    pub fn forward_btc(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, cin) = x.dims3()?;
        let (cout, _, k) = self.weight.dims3()?;
        let padded = t + 2 * self.padding;
        if padded < k {
            return Err(Error::LengthMismatch(format!(
                "input of {t} frames is shorter than the kernel ({k})"
            )));
        }
        let tout = (padded - k) / self.stride + 1;
        let x = x.pad_with_zeros(1, self.padding, self.padding)?.contiguous()?;
        let cols = if k == 1 && self.stride == 1 {
            x
        } else {
            let idx: Vec<u32> = (0..tout)
                .flat_map(|j| (0..k).map(move |kk| (j * self.stride + kk) as u32))
                .collect();
            let idx = Tensor::from_vec(idx, tout * k, x.device())?;
            x.index_select(&idx, 1)?
        };
        let cols = cols.reshape((b * tout, k * cin))?;
        let w = self.weight.permute((2, 1, 0))?.reshape((k * cin, cout))?;
        let y = cols.matmul(&w)?.broadcast_add(&self.bias)?;
        Ok(y.reshape((b, tout, cout))?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(s: &mut Scope, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: s.param("gamma", &[dim], Init::Ones)?,
            beta: s.param("beta", &[dim], Init::Zeros)?,
        })
    }

    /// Normalizes the last dimension.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Single-layer GRU step: `h' = (1 - z) * n + z * h`.
#[derive(Debug, Clone)]
pub struct GruCell {
    input: Linear,
    hidden: Linear,
    size: usize,
}

impl GruCell {
    pub fn new(s: &mut Scope, in_dim: usize, size: usize) -> Result<Self> {
        Ok(GruCell {
            input: Linear::new(&mut s.sub("ih"), in_dim, 3 * size, true)?,
            hidden: Linear::new(&mut s.sub("hh"), size, 3 * size, true)?,
            size,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn step(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let gi = self.input.forward(x)?;
        let gh = self.hidden.forward(h)?;
        let n = self.size;
        let r = sigmoid(&(gi.narrow(1, 0, n)? + gh.narrow(1, 0, n)?)?)?;
        let z = sigmoid(&(gi.narrow(1, n, n)? + gh.narrow(1, n, n)?)?)?;
        let cand = (gi.narrow(1, 2 * n, n)? + (r * gh.narrow(1, 2 * n, n)?)?)?.tanh()?;
        let keep = (z.ones_like()? - &z)?;
        Ok(((keep * cand)? + (z * h)?)?)
    }

    /// Runs over `(batch, time, features)` and returns the final state.
    pub fn final_state(&self, xs: &Tensor) -> Result<Tensor> {
        let (b, t, _) = xs.dims3()?;
        let mut h = Tensor::zeros((b, self.size), xs.dtype(), xs.device())?;
        for i in 0..t {
            h = self.step(&xs.narrow(1, i, 1)?.squeeze(1)?, &h)?;
        }
        Ok(h)
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.relu()?)
}

/// Numerically stable softmax over the last dimension.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// Additive attention bias: 0 where `mask` is 1, a large negative value where 0.
pub fn masked_fill_bias(mask: &Tensor) -> Result<Tensor> {
    Ok(((mask.ones_like()? - mask)? * -1e9)?)
}

/// Per-channel normalization over time for `(batch, channels, time)`.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(2)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(2)?;
    Ok(centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?)
}

/// Fixed sinusoidal position table, `len x dim`.
pub fn sinusoid_positions(len: usize, dim: usize, dtype: DType) -> Result<Tensor> {
    let mut data = vec![0f32; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() } as f32;
        }
    }
    Ok(Tensor::from_vec(data, (len, dim), &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::VarStore;

    #[test]
    fn linear_any_rank() {
        let mut vs = VarStore::new(0, DType::F32);
        let lin = Linear::new(&mut Scope::root(&mut vs), 4, 6, true).unwrap();
        let x = Tensor::ones((2, 3, 4), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(lin.forward(&x).unwrap().dims(), &[2, 3, 6]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(&[[1f32, 2.0, 3.0], [1000.0, 0.0, -1000.0]], &Device::Cpu).unwrap();
        let s = softmax_last(&x).unwrap().sum(1).unwrap().to_vec1::<f32>().unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let x = Tensor::arange(0f32, 24.0, &Device::Cpu)
            .unwrap()
            .reshape((1, 3, 8))
            .unwrap();
        let y = instance_norm(&x).unwrap();
        let m = y.mean(2).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-5));
    }

    fn naive_conv(
        x: &[f64],
        w: &[f64],
        dims: (usize, usize, usize, usize, usize),
        pad: usize,
        stride: usize,
    ) -> Vec<f64> {
        let (b, cin, t, cout, k) = dims;
        let tout = (t + 2 * pad - k) / stride + 1;
        let mut y = vec![0.0; b * cout * tout];
        for bi in 0..b {
            for o in 0..cout {
                for j in 0..tout {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for kk in 0..k {
                            let pos = (j * stride + kk) as isize - pad as isize;
                            if pos >= 0 && (pos as usize) < t {
                                acc += x[(bi * cin + c) * t + pos as usize] * w[(o * cin + c) * k + kk];
                            }
                        }
                    }
                    y[(bi * cout + o) * tout + j] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_sum_and_its_gradient() {
        let dev = Device::Cpu;
        for (pad, stride) in [(0, 1), (2, 1), (1, 2)] {
            let mut vs = VarStore::new(3, DType::F64);
            let conv = Conv1d::new(&mut Scope::root(&mut vs), 3, 4, 5, stride, pad).unwrap();
            let x = Tensor::arange(0f64, 42.0, &dev)
                .unwrap()
                .sin()
                .unwrap()
                .reshape((2, 3, 7))
                .unwrap();
            let y = conv.forward(&x).unwrap();
            let w = vs.get("weight").unwrap().as_tensor().clone();
            let wv = w.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let xv = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let expect = naive_conv(&xv, &wv, (2, 3, 7, 4, 5), pad, stride);
            let got = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            assert_eq!(got.len(), expect.len());
            for (a, e) in got.iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12);
            }

            // objective sum(y^2 * c) with fixed weights c; dL/dw by central differences
            let c: Vec<f64> = (0..expect.len()).map(|i| (i as f64 * 0.37).cos()).collect();
            let objective = |wv: &[f64]| -> f64 {
                naive_conv(&xv, wv, (2, 3, 7, 4, 5), pad, stride)
                    .iter()
                    .zip(&c)
                    .map(|(y, c)| y * y * c)
                    .sum()
            };
            let ct = Tensor::from_vec(c.clone(), y.dims(), &dev).unwrap();
            let loss = (y.sqr().unwrap() * ct).unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            let g = grads.get(vs.get("weight").unwrap().as_tensor()).unwrap();
            let g = g.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            for i in [0, 7, 33, 59] {
                let mut p = wv.clone();
                p[i] += 1e-6;
                let mut m = wv.clone();
                m[i] -= 1e-6;
                let numeric = (objective(&p) - objective(&m)) / 2e-6;
                assert!(
                    (g[i] - numeric).abs() < 1e-6 * (1.0 + numeric.abs()),
                    "{i}: {} vs {numeric}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn gru_shapes() {
        let mut vs = VarStore::new(0, DType::F32);
        let gru = GruCell::new(&mut Scope::root(&mut vs), 5, 7).unwrap();
        let xs = Tensor::ones((2, 4, 5), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(gru.final_state(&xs).unwrap().dims(), &[2, 7]);
    }
}

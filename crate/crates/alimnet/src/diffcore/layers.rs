use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Ctx, Layer, LayerParams, Mode, Tensor};
use crate::{Error, Result};

fn rank4(x: &Tensor, context: &str) -> Result<(usize, usize, usize, usize)> {
    match x.shape() {
        &[n, h, w, c] => Ok((n, h, w, c)),
        other => Err(Error::shape(context, &[0, 0, 0, 0], other)),
    }
}

/// Fully connected layer: y = x W + b for x of shape [N, in].
pub struct Dense {
    name: String,
    input: usize,
    units: usize,
    params: LayerParams,
    cache_x: Option<Tensor>,
}

impl Dense {
    pub fn new(name: &str, input: usize, units: usize, rng: &mut ChaCha8Rng) -> Dense {
        let mut params = LayerParams::new();
        params.push(
            "kernel",
            Tensor::glorot(&[input, units], input, units, rng),
            true,
        );
        params.push("bias", Tensor::zeros(&[units]), true);
        Dense {
            name: name.to_string(),
            input,
            units,
            params,
            cache_x: None,
        }
    }
}

impl Layer for Dense {
    fn name(&self) -> &str {
        &self.name
    }

    fn describe(&self) -> String {
        format!("dense, {} -> {}", self.input, self.units)
    }

    fn forward(&mut self, x: &Tensor, _ctx: &mut Ctx) -> Result<Tensor> {
        let (n, i) = match x.shape() {
            &[n, i] => (n, i),
            other => return Err(Error::shape(&self.name, &[0, self.input], other)),
        };
        if i != self.input {
            return Err(Error::shape(&self.name, &[n, self.input], x.shape()));
        }
        let w = self.params.get("kernel").data();
        let b = self.params.get("bias").data();
        let o = self.units;
        let xd = x.data();
        let mut y = vec![0.0; n * o];
        for row in 0..n {
            let yrow = &mut y[row * o..(row + 1) * o];
            yrow.copy_from_slice(b);
            for col in 0..i {
                let xv = xd[row * i + col];
                let wrow = &w[col * o..(col + 1) * o];
                yrow.iter_mut().zip(wrow).for_each(|(yv, wv)| *yv += xv * wv);
            }
        }
        self.cache_x = Some(x.clone());
        Tensor::new(vec![n, o], y)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .cache_x
            .take()
            .ok_or_else(|| Error::InvalidInput(format!("{}: backward before forward", self.name)))?;
        let n = x.shape()[0];
        let i = self.input;
        let o = self.units;
        if grad_out.shape() != [n, o] {
            return Err(Error::shape(&self.name, &[n, o], grad_out.shape()));
        }
        let xd = x.data();
        let gyd = grad_out.data();

        {
            let bias = self.params.get_mut("bias");
            let gb = bias.grad_mut().expect("bias grad");
            for row in 0..n {
                let gyrow = &gyd[row * o..(row + 1) * o];
                gb.iter_mut().zip(gyrow).for_each(|(g, v)| *g += v);
            }
        }

        let mut gx = vec![0.0; n * i];
        {
            let kernel = self.params.get_mut("kernel");
            let (w, gw) = kernel.data_and_grad_mut();
            let gw = gw.expect("kernel grad");
            for row in 0..n {
                let gyrow = &gyd[row * o..(row + 1) * o];
                for col in 0..i {
                    let xv = xd[row * i + col];
                    let wrow = &w[col * o..(col + 1) * o];
                    let gwrow = &mut gw[col * o..(col + 1) * o];
                    let mut acc = 0.0;
                    for k in 0..o {
                        acc += wrow[k] * gyrow[k];
                        gwrow[k] += xv * gyrow[k];
                    }
                    gx[row * i + col] = acc;
                }
            }
        }
        Tensor::new(vec![n, i], gx)
    }

    fn params(&self) -> &LayerParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut LayerParams {
        &mut self.params
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match in_shape {
            &[n, i] if i == self.input => Ok(vec![n, self.units]),
            other => Err(Error::shape(&self.name, &[0, self.input], other)),
        }
    }
}

/// 3x3 convolution, stride 1, zero-padded so spatial dimensions are
/// preserved. Input layout [N, H, W, Cin], kernel [3, 3, Cin, Cout].
pub struct Conv2d {
    name: String,
    cin: usize,
    cout: usize,
    params: LayerParams,
    cache_x: Option<Tensor>,
}

impl Conv2d {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Conv2d {
        let mut params = LayerParams::new();
        params.push(
            "kernel",
            Tensor::glorot(&[3, 3, cin, cout], 9 * cin, 9 * cout, rng),
            true,
        );
        params.push("bias", Tensor::zeros(&[cout]), true);
        Conv2d {
            name: name.to_string(),
            cin,
            cout,
            params,
            cache_x: None,
        }
    }
}

impl Layer for Conv2d {
    fn name(&self) -> &str {
        &self.name
    }

    fn describe(&self) -> String {
        format!("conv 3x3, {} -> {}", self.cin, self.cout)
    }

    fn forward(&mut self, x: &Tensor, _ctx: &mut Ctx) -> Result<Tensor> {
        let (n, h, w, ci) = rank4(x, &self.name)?;
        if ci != self.cin {
            return Err(Error::shape(&self.name, &[n, h, w, self.cin], x.shape()));
        }
        let co = self.cout;
        let kd = self.params.get("kernel").data();
        let bd = self.params.get("bias").data();
        let xd = x.data();
        let mut y = vec![0.0; n * h * w * co];
        for b in 0..n {
            for oy in 0..h {
                for ox in 0..w {
                    let out_base = ((b * h + oy) * w + ox) * co;
                    y[out_base..out_base + co].copy_from_slice(bd);
                    // taps indexed so that iy = oy + dy - 1 stays in bounds
                    for dy in 0..3usize {
                        let iy = oy + dy;
                        if iy < 1 || iy > h {
                            continue;
                        }
                        let iy = iy - 1;
                        for dx in 0..3usize {
                            let ix = ox + dx;
                            if ix < 1 || ix > w {
                                continue;
                            }
                            let ix = ix - 1;
                            let in_base = ((b * h + iy) * w + ix) * ci;
                            let k_base = (dy * 3 + dx) * ci * co;
                            let yrow = &mut y[out_base..out_base + co];
                            for c_in in 0..ci {
                                let xv = xd[in_base + c_in];
                                let krow = &kd[k_base + c_in * co..k_base + (c_in + 1) * co];
                                yrow.iter_mut().zip(krow).for_each(|(yv, kv)| *yv += xv * kv);
                            }
                        }
                    }
                }
            }
        }
        self.cache_x = Some(x.clone());
        Tensor::new(vec![n, h, w, co], y)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .cache_x
            .take()
            .ok_or_else(|| Error::InvalidInput(format!("{}: backward before forward", self.name)))?;
        let (n, h, w, ci) = rank4(&x, &self.name)?;
        let co = self.cout;
        if grad_out.shape() != [n, h, w, co] {
            return Err(Error::shape(&self.name, &[n, h, w, co], grad_out.shape()));
        }
        let xd = x.data();
        let gyd = grad_out.data();

        {
            let bias = self.params.get_mut("bias");
            let gb = bias.grad_mut().expect("bias grad");
            for base in (0..n * h * w * co).step_by(co) {
                let gyrow = &gyd[base..base + co];
                gb.iter_mut().zip(gyrow).for_each(|(g, v)| *g += v);
            }
        }

        let mut gx = vec![0.0; n * h * w * ci];
        {
            let kernel = self.params.get_mut("kernel");
            let (kd, gk) = kernel.data_and_grad_mut();
            let gk = gk.expect("kernel grad");
            for b in 0..n {
                for oy in 0..h {
                    for ox in 0..w {
                        let out_base = ((b * h + oy) * w + ox) * co;
                        let gyrow = &gyd[out_base..out_base + co];
                        for dy in 0..3usize {
                            let iy = oy + dy;
                            if iy < 1 || iy > h {
                                continue;
                            }
                            let iy = iy - 1;
                            for dx in 0..3usize {
                                let ix = ox + dx;
                                if ix < 1 || ix > w {
                                    continue;
                                }
                                let ix = ix - 1;
                                let in_base = ((b * h + iy) * w + ix) * ci;
                                let k_base = (dy * 3 + dx) * ci * co;
                                for c_in in 0..ci {
                                    let xv = xd[in_base + c_in];
                                    let off = k_base + c_in * co;
                                    let krow = &kd[off..off + co];
                                    let gkrow = &mut gk[off..off + co];
                                    let mut acc = 0.0;
                                    for k in 0..co {
                                        acc += krow[k] * gyrow[k];
                                        gkrow[k] += xv * gyrow[k];
                                    }
                                    gx[in_base + c_in] += acc;
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![n, h, w, ci], gx)
    }

    fn params(&self) -> &LayerParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut LayerParams {
        &mut self.params
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match in_shape {
            &[n, h, w, c] if c == self.cin => Ok(vec![n, h, w, self.cout]),
            other => Err(Error::shape(&self.name, &[0, 0, 0, self.cin], other)),
        }
    }
}

/// 2x2 max pooling with stride 2. Ties route the gradient to the first
/// occurrence in scan order.
pub struct MaxPool2d {
    name: String,
    empty: LayerParams,
    cache: Option<(Vec<usize>, Vec<u32>)>, // input shape, argmax flat indices
}

impl MaxPool2d {
    pub fn new(name: &str) -> MaxPool2d {
        MaxPool2d {
            name: name.to_string(),
            empty: LayerParams::new(),
            cache: None,
        }
    }
}

impl Layer for MaxPool2d {
    fn name(&self) -> &str {
        &self.name
    }

    fn describe(&self) -> String {
        "maxpool 2x2".to_string()
    }

    fn forward(&mut self, x: &Tensor, _ctx: &mut Ctx) -> Result<Tensor> {
        let (n, h, w, c) = rank4(x, &self.name)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(&self.name, &[n, h / 2 * 2, w / 2 * 2, c], x.shape()));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = x.data();
        let mut y = vec![0.0; n * oh * ow * c];
        let mut argmax = vec![0u32; n * oh * ow * c];
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let out_base = ((b * oh + oy) * ow + ox) * c;
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                                if xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        y[out_base + ch] = best;
                        argmax[out_base + ch] = best_idx as u32;
                    }
                }
            }
        }
        self.cache = Some((x.shape().to_vec(), argmax));
        Tensor::new(vec![n, oh, ow, c], y)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (in_shape, argmax) = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidInput(format!("{}: backward before forward", self.name)))?;
        if grad_out.numel() != argmax.len() {
            return Err(Error::shape(&self.name, &[argmax.len()], &[grad_out.numel()]));
        }
        let mut gx = vec![0.0; in_shape.iter().product()];
        for (g, &idx) in grad_out.data().iter().zip(argmax.iter()) {
            gx[idx as usize] += g;
        }
        Tensor::new(in_shape, gx)
    }

    fn params(&self) -> &LayerParams {
        &self.empty
    }

    fn params_mut(&mut self) -> &mut LayerParams {
        &mut self.empty
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match in_shape {
            &[n, h, w, c] if h % 2 == 0 && w % 2 == 0 => Ok(vec![n, h / 2, w / 2, c]),
            other => Err(Error::shape(&self.name, &[0, 0, 0, 0], other)),
        }
    }
}

/// 2x2 nearest-neighbour upsampling: each pixel becomes a 2x2 block.
pub struct UpsampleNearest {
    name: String,
    empty: LayerParams,
    cache_in_shape: Option<Vec<usize>>,
}

impl UpsampleNearest {
    pub fn new(name: &str) -> UpsampleNearest {
        UpsampleNearest {
            name: name.to_string(),
            empty: LayerParams::new(),
            cache_in_shape: None,
        }
    }
}

impl Layer for UpsampleNearest {
    fn name(&self) -> &str {
        &self.name
    }

    fn describe(&self) -> String {
        "upsample 2x2".to_string()
    }

    fn forward(&mut self, x: &Tensor, _ctx: &mut Ctx) -> Result<Tensor> {
        let (n, h, w, c) = rank4(x, &self.name)?;
        let xd = x.data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut y = vec![0.0; n * oh * ow * c];
        for b in 0..n {
            for iy in 0..h {
                for ix in 0..w {
                    let src = ((b * h + iy) * w + ix) * c;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let dst = ((b * oh + 2 * iy + dy) * ow + 2 * ix + dx) * c;
                            y[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                        }
                    }
                }
            }
        }
        self.cache_in_shape = Some(x.shape().to_vec());
        Tensor::new(vec![n, oh, ow, c], y)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let in_shape = self
            .cache_in_shape
            .take()
            .ok_or_else(|| Error::InvalidInput(format!("{}: backward before forward", self.name)))?;
        let (n, h, w, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let (oh, ow) = (2 * h, 2 * w);
        if grad_out.shape() != [n, oh, ow, c] {
            return Err(Error::shape(&self.name, &[n, oh, ow, c], grad_out.shape()));
        }
        let gyd = grad_out.data();
        let mut gx = vec![0.0; n * h * w * c];
        for b in 0..n {
            for iy in 0..h {
                for ix in 0..w {
                    let dst = ((b * h + iy) * w + ix) * c;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let src = ((b * oh + 2 * iy + dy) * ow + 2 * ix + dx) * c;
                            for ch in 0..c {
                                gx[dst + ch] += gyd[src + ch];
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(in_shape, gx)
    }

    fn params(&self) -> &LayerParams {
        &self.empty
    }

    fn params_mut(&mut self) -> &mut LayerParams {
        &mut self.empty
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match in_shape {
            &[n, h, w, c] => Ok(vec![n, 2 * h, 2 * w, c]),
            other => Err(Error::shape(&self.name, &[0, 0, 0, 0], other)),
        }
    }
}

/// Batch normalization over every axis except the trailing channel axis.
/// Parameter bookkeeping counts gamma, beta and both moving statistics,
/// i.e. 4 per channel; the optimizer sees only gamma and beta.
pub struct BatchNorm {
    name: String,
    channels: usize,
    momentum: f64,
    epsilon: f64,
    params: LayerParams,
    cache: Option<BnCache>,
}

struct BnCache {
    in_shape: Vec<usize>,
    xhat: Vec<f64>,
    invstd: Vec<f64>,
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize, momentum: f64) -> BatchNorm {
        let mut params = LayerParams::new();
        params.push("gamma", Tensor::full(&[channels], 1.0), true);
        params.push("beta", Tensor::zeros(&[channels]), true);
        params.push("moving_mean", Tensor::zeros(&[channels]), false);
        params.push("moving_var", Tensor::full(&[channels], 1.0), false);
        BatchNorm {
            name: name.to_string(),
            channels,
            momentum,
            epsilon: 1e-5,
            params,
            cache: None,
        }
    }
}

impl Layer for BatchNorm {
    fn name(&self) -> &str {
        &self.name
    }

    fn describe(&self) -> String {
        format!("batchnorm ({}), {} ch", self.momentum, self.channels)
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let c = self.channels;
        if x.shape().len() < 2 || *x.shape().last().unwrap() != c {
            return Err(Error::InvalidInput(format!(
                "{}: expected a batched input with {} channels, got shape {:?}",
                self.name,
                c,
                x.shape()
            )));
        }
        let m = x.numel() / c;
        if m == 0 {
            return Err(Error::InvalidInput(format!("{}: zero-size batch", self.name)));
        }
        let xd = x.data();
        let batch_stats = ctx.mode == Mode::Train;

        let (mean, var) = if batch_stats {
            let mut mean = vec![0.0; c];
            for row in xd.chunks_exact(c) {
                mean.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            mean.iter_mut().for_each(|s| *s /= m as f64);
            let mut var = vec![0.0; c];
            for row in xd.chunks_exact(c) {
                var.iter_mut()
                    .zip(row)
                    .zip(&mean)
                    .for_each(|((s, v), mu)| *s += (v - mu) * (v - mu));
            }
            var.iter_mut().for_each(|s| *s /= m as f64);
            if ctx.update_stats {
                let mom = self.momentum;
                {
                    let mm = self.params.get_mut("moving_mean");
                    mm.data_mut()
                        .iter_mut()
                        .zip(&mean)
                        .for_each(|(s, b)| *s = mom * *s + (1.0 - mom) * b);
                }
                {
                    let mv = self.params.get_mut("moving_var");
                    mv.data_mut()
                        .iter_mut()
                        .zip(&var)
                        .for_each(|(s, b)| *s = mom * *s + (1.0 - mom) * b);
                }
            }
            (mean, var)
        } else {
            (
                self.params.get("moving_mean").data().to_vec(),
                self.params.get("moving_var").data().to_vec(),
            )
        };

        let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let gamma = self.params.get("gamma").data();
        let beta = self.params.get("beta").data();
        let mut xhat = vec![0.0; xd.len()];
        let mut y = vec![0.0; xd.len()];
        for (row_idx, row) in xd.chunks_exact(c).enumerate() {
            let base = row_idx * c;
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * invstd[ch];
                xhat[base + ch] = h;
                y[base + ch] = gamma[ch] * h + beta[ch];
            }
        }
        self.cache = Some(BnCache {
            in_shape: x.shape().to_vec(),
            xhat,
            invstd,
            batch_stats,
        });
        Tensor::new(x.shape().to_vec(), y)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidInput(format!("{}: backward before forward", self.name)))?;
        let c = self.channels;
        if grad_out.shape() != cache.in_shape.as_slice() {
            return Err(Error::shape(&self.name, &cache.in_shape, grad_out.shape()));
        }
        let m = grad_out.numel() / c;
        let gyd = grad_out.data();

        let mut sum_gy = vec![0.0; c];
        let mut sum_gy_xhat = vec![0.0; c];
        for (row_idx, row) in gyd.chunks_exact(c).enumerate() {
            let base = row_idx * c;
            for ch in 0..c {
                sum_gy[ch] += row[ch];
                sum_gy_xhat[ch] += row[ch] * cache.xhat[base + ch];
            }
        }
        {
            let gamma = self.params.get_mut("gamma");
            let gg = gamma.grad_mut().expect("gamma grad");
            gg.iter_mut().zip(&sum_gy_xhat).for_each(|(g, v)| *g += v);
        }
        {
            let beta = self.params.get_mut("beta");
            let gb = beta.grad_mut().expect("beta grad");
            gb.iter_mut().zip(&sum_gy).for_each(|(g, v)| *g += v);
        }

        let gamma = self.params.get("gamma").data();
        let mut gx = vec![0.0; gyd.len()];
        if cache.batch_stats {
            let mf = m as f64;
            for (row_idx, row) in gyd.chunks_exact(c).enumerate() {
                let base = row_idx * c;
                for ch in 0..c {
                    let dxhat = row[ch] * gamma[ch];
                    gx[base + ch] = cache.invstd[ch]
                        * (dxhat
                            - gamma[ch] * sum_gy[ch] / mf
                            - cache.xhat[base + ch] * gamma[ch] * sum_gy_xhat[ch] / mf);
                }
            }
        } else {
            for (row_idx, row) in gyd.chunks_exact(c).enumerate() {
                let base = row_idx * c;
                for ch in 0..c {
                    gx[base + ch] = row[ch] * gamma[ch] * cache.invstd[ch];
                }
            }
        }
        Tensor::new(cache.in_shape, gx)
    }

    fn params(&self) -> &LayerParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut LayerParams {
        &mut self.params
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        Ok(in_shape.to_vec())
    }
}

/// Inverted dropout: each element is zeroed with probability `rate` and
/// survivors are scaled by 1/(1-rate). Identity in infer mode.
pub struct Dropout {
    name: String,
    rate: f64,
    empty: LayerParams,
    cache_scale: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(name: &str, rate: f64) -> Result<Dropout> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidInput(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(Dropout {
            name: name.to_string(),
            rate,
            empty: LayerParams::new(),
            cache_scale: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl Layer for Dropout {
    fn name(&self) -> &str {
        &self.name
    }

    fn describe(&self) -> String {
        format!("dropout ({})", self.rate)
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let active = ctx.mode == Mode::Train && !ctx.deterministic && self.rate > 0.0;
        if !active {
            self.cache_scale = None;
            return Ok(x.clone());
        }
        let keep_scale = 1.0 / (1.0 - self.rate);
        let scale: Vec<f64> = (0..x.numel())
            .map(|_| {
                if ctx.rng.gen::<f64>() < self.rate {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let y: Vec<f64> = x.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        self.cache_scale = Some(scale);
        Tensor::new(x.shape().to_vec(), y)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match self.cache_scale.take() {
            None => Ok(grad_out.clone()),
            Some(scale) => {
                let gx: Vec<f64> = grad_out.data().iter().zip(&scale).map(|(g, s)| g * s).collect();
                Tensor::new(grad_out.shape().to_vec(), gx)
            }
        }
    }

    fn params(&self) -> &LayerParams {
        &self.empty
    }

    fn params_mut(&mut self) -> &mut LayerParams {
        &mut self.empty
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        Ok(in_shape.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
    /// Normalizes over the last axis.
    Softmax,
}

impl ActivationKind {
    fn label(self) -> String {
        match self {
            ActivationKind::Sigmoid => "sigmoid".to_string(),
            ActivationKind::Tanh => "tanh".to_string(),
            ActivationKind::Relu => "relu".to_string(),
            ActivationKind::LeakyRelu(a) => format!("leaky_relu({a})"),
            ActivationKind::Softmax => "softmax".to_string(),
        }
    }
}

/// Pointwise activation (softmax normalizes rows of the last axis).
pub struct Activation {
    name: String,
    kind: ActivationKind,
    empty: LayerParams,
    cache: Option<(Vec<usize>, Vec<f64>)>, // shape + (y for sigmoid/tanh/softmax, x for relu)
}

impl Activation {
    pub fn new(name: &str, kind: ActivationKind) -> Activation {
        Activation {
            name: name.to_string(),
            kind,
            empty: LayerParams::new(),
            cache: None,
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl Layer for Activation {
    fn name(&self) -> &str {
        &self.name
    }

    fn describe(&self) -> String {
        self.kind.label()
    }

    fn forward(&mut self, x: &Tensor, _ctx: &mut Ctx) -> Result<Tensor> {
        let xd = x.data();
        let y: Vec<f64> = match self.kind {
            ActivationKind::Sigmoid => xd.iter().map(|&v| sigmoid(v)).collect(),
            ActivationKind::Tanh => xd.iter().map(|v| v.tanh()).collect(),
            ActivationKind::Relu => xd.iter().map(|v| v.max(0.0)).collect(),
            ActivationKind::LeakyRelu(a) => {
                xd.iter().map(|&v| if v > 0.0 { v } else { a * v }).collect()
            }
            ActivationKind::Softmax => {
                let c = *x.shape().last().ok_or_else(|| {
                    Error::InvalidInput(format!("{}: softmax needs a non-scalar input", self.name))
                })?;
                let mut y = vec![0.0; xd.len()];
                for (row_idx, row) in xd.chunks_exact(c).enumerate() {
                    let base = row_idx * c;
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for ch in 0..c {
                        let e = (row[ch] - max).exp();
                        y[base + ch] = e;
                        sum += e;
                    }
                    y[base..base + c].iter_mut().for_each(|v| *v /= sum);
                }
                y
            }
        };
        let cached = match self.kind {
            ActivationKind::Relu | ActivationKind::LeakyRelu(_) => xd.to_vec(),
            _ => y.clone(),
        };
        self.cache = Some((x.shape().to_vec(), cached));
        Tensor::new(x.shape().to_vec(), y)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (shape, cached) = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidInput(format!("{}: backward before forward", self.name)))?;
        if grad_out.shape() != shape.as_slice() {
            return Err(Error::shape(&self.name, &shape, grad_out.shape()));
        }
        let g = grad_out.data();
        let gx: Vec<f64> = match self.kind {
            ActivationKind::Sigmoid => g
                .iter()
                .zip(&cached)
                .map(|(gv, y)| gv * y * (1.0 - y))
                .collect(),
            ActivationKind::Tanh => g.iter().zip(&cached).map(|(gv, y)| gv * (1.0 - y * y)).collect(),
            ActivationKind::Relu => g
                .iter()
                .zip(&cached)
                .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                .collect(),
            ActivationKind::LeakyRelu(a) => g
                .iter()
                .zip(&cached)
                .map(|(gv, x)| if *x > 0.0 { *gv } else { a * gv })
                .collect(),
            ActivationKind::Softmax => {
                let c = *shape.last().unwrap();
                let mut gx = vec![0.0; g.len()];
                for (row_idx, grow) in g.chunks_exact(c).enumerate() {
                    let base = row_idx * c;
                    let yrow = &cached[base..base + c];
                    let dot: f64 = grow.iter().zip(yrow).map(|(gv, yv)| gv * yv).sum();
                    for ch in 0..c {
                        gx[base + ch] = yrow[ch] * (grow[ch] - dot);
                    }
                }
                gx
            }
        };
        Tensor::new(shape, gx)
    }

    fn params(&self) -> &LayerParams {
        &self.empty
    }

    fn params_mut(&mut self) -> &mut LayerParams {
        &mut self.empty
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        Ok(in_shape.to_vec())
    }
}

/// Reshapes the per-sample dimensions, preserving the batch axis.
pub struct Reshape {
    name: String,
    to: Vec<usize>,
    empty: LayerParams,
    cache_in_shape: Option<Vec<usize>>,
}

impl Reshape {
    pub fn new(name: &str, per_sample_shape: &[usize]) -> Reshape {
        Reshape {
            name: name.to_string(),
            to: per_sample_shape.to_vec(),
            empty: LayerParams::new(),
            cache_in_shape: None,
        }
    }
}

impl Layer for Reshape {
    fn name(&self) -> &str {
        &self.name
    }

    fn describe(&self) -> String {
        format!("reshape -> {:?}", self.to)
    }

    fn forward(&mut self, x: &Tensor, _ctx: &mut Ctx) -> Result<Tensor> {
        let out = self.out_shape(x.shape())?;
        self.cache_in_shape = Some(x.shape().to_vec());
        Tensor::new(out, x.data().to_vec())
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let in_shape = self
            .cache_in_shape
            .take()
            .ok_or_else(|| Error::InvalidInput(format!("{}: backward before forward", self.name)))?;
        Tensor::new(in_shape, grad_out.data().to_vec())
    }

    fn params(&self) -> &LayerParams {
        &self.empty
    }

    fn params_mut(&mut self) -> &mut LayerParams {
        &mut self.empty
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape.is_empty() {
            return Err(Error::shape(&self.name, &[0], in_shape));
        }
        let per_sample: usize = in_shape[1..].iter().product();
        let target: usize = self.to.iter().product();
        if per_sample != target {
            return Err(Error::shape(&self.name, &self.to, &in_shape[1..]));
        }
        let mut out = vec![in_shape[0]];
        out.extend_from_slice(&self.to);
        Ok(out)
    }
}

/// Ordered stack of layers sharing one forward/backward pass.
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Sequential {
        Sequential { layers }
    }

    pub fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in self.layers.iter_mut() {
            cur = layer.forward(&cur, ctx)?;
        }
        Ok(cur)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut cur = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur)?;
        }
        Ok(cur)
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        &mut self.layers
    }

    pub fn zero_grads(&mut self) {
        for layer in self.layers.iter_mut() {
            layer.params_mut().zero_grads();
        }
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        let mut cur = in_shape.to_vec();
        for layer in &self.layers {
            cur = layer.out_shape(&cur)?;
        }
        Ok(cur)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }
}

use rand_chacha::ChaCha8Rng;

use super::layers::sigmoid;
use super::{Ctx, Layer, LayerParams, Tensor};
use crate::{Error, Result};

/// Gated recurrent unit over sequences shaped [N, T, input]. Uses the
/// double-bias variant (separate input and recurrent biases, reset gate
/// applied after the recurrent matmul), so the parameter count is
/// 3*((input+hidden)*hidden + 2*hidden).
pub struct Gru {
    name: String,
    input: usize,
    hidden: usize,
    return_sequence: bool,
    params: LayerParams,
    cache: Option<GruCache>,
}

struct GruCache {
    x: Tensor,
    // per-step buffers, each [N, hidden], indexed by t
    h_prev: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    n_cand: Vec<Vec<f64>>,
    hn_lin: Vec<Vec<f64>>,
}

/// out[n, o] += sum_i a[n, i] * w[i, o]
fn matmul_acc(a: &[f64], rows: usize, inner: usize, w: &[f64], cols: usize, out: &mut [f64]) {
    for n in 0..rows {
        let arow = &a[n * inner..(n + 1) * inner];
        let orow = &mut out[n * cols..(n + 1) * cols];
        for (i, &av) in arow.iter().enumerate() {
            let wrow = &w[i * cols..(i + 1) * cols];
            orow.iter_mut().zip(wrow).for_each(|(o, wv)| *o += av * wv);
        }
    }
}

/// out[n, i] += sum_o g[n, o] * w[i, o]   (g . W^T)
fn matmul_wt_acc(g: &[f64], rows: usize, cols: usize, w: &[f64], inner: usize, out: &mut [f64]) {
    for n in 0..rows {
        let grow = &g[n * cols..(n + 1) * cols];
        let orow = &mut out[n * inner..(n + 1) * inner];
        for i in 0..inner {
            let wrow = &w[i * cols..(i + 1) * cols];
            let mut acc = 0.0;
            for o in 0..cols {
                acc += grow[o] * wrow[o];
            }
            orow[i] += acc;
        }
    }
}

/// gw[i, o] += sum_n a[n, i] * g[n, o]   (A^T . G)
fn matmul_at_acc(a: &[f64], rows: usize, inner: usize, g: &[f64], cols: usize, gw: &mut [f64]) {
    for n in 0..rows {
        let arow = &a[n * inner..(n + 1) * inner];
        let grow = &g[n * cols..(n + 1) * cols];
        for (i, &av) in arow.iter().enumerate() {
            let gwrow = &mut gw[i * cols..(i + 1) * cols];
            gwrow.iter_mut().zip(grow).for_each(|(w, gv)| *w += av * gv);
        }
    }
}

fn add_bias(buf: &mut [f64], bias: &[f64]) {
    let c = bias.len();
    for row in buf.chunks_exact_mut(c) {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }
}

fn bias_grad_acc(g: &[f64], cols: usize, gb: &mut [f64]) {
    for row in g.chunks_exact(cols) {
        gb.iter_mut().zip(row).for_each(|(b, v)| *b += v);
    }
}

impl Gru {
    pub fn new(
        name: &str,
        input: usize,
        hidden: usize,
        return_sequence: bool,
        rng: &mut ChaCha8Rng,
    ) -> Gru {
        let mut params = LayerParams::new();
        for role in ["w_z", "w_r", "w_n"] {
            params.push(role, Tensor::glorot(&[input, hidden], input, hidden, rng), true);
        }
        for role in ["u_z", "u_r", "u_n"] {
            params.push(role, Tensor::glorot(&[hidden, hidden], hidden, hidden, rng), true);
        }
        for role in ["b_zi", "b_ri", "b_ni", "b_zh", "b_rh", "b_nh"] {
            params.push(role, Tensor::zeros(&[hidden]), true);
        }
        Gru {
            name: name.to_string(),
            input,
            hidden,
            return_sequence,
            params,
            cache: None,
        }
    }

    fn gate_preact(&self, x_t: &[f64], h_prev: &[f64], n: usize, w: &str, u: &str, bi: &str, bh: &str) -> Vec<f64> {
        let h = self.hidden;
        let mut a = vec![0.0; n * h];
        matmul_acc(x_t, n, self.input, self.params.get(w).data(), h, &mut a);
        matmul_acc(h_prev, n, h, self.params.get(u).data(), h, &mut a);
        add_bias(&mut a, self.params.get(bi).data());
        add_bias(&mut a, self.params.get(bh).data());
        a
    }
}

impl Layer for Gru {
    fn name(&self) -> &str {
        &self.name
    }

    fn describe(&self) -> String {
        format!(
            "gru ({}){}",
            self.hidden,
            if self.return_sequence { ", sequence" } else { "" }
        )
    }

    fn forward(&mut self, x: &Tensor, _ctx: &mut Ctx) -> Result<Tensor> {
        let (n, t, i) = match x.shape() {
            &[n, t, i] => (n, t, i),
            other => return Err(Error::shape(&self.name, &[0, 0, self.input], other)),
        };
        if i != self.input {
            return Err(Error::shape(&self.name, &[n, t, self.input], x.shape()));
        }
        let h = self.hidden;
        let xd = x.data();
        let mut h_state = vec![0.0; n * h];
        let mut cache = GruCache {
            x: x.clone(),
            h_prev: Vec::with_capacity(t),
            r: Vec::with_capacity(t),
            z: Vec::with_capacity(t),
            n_cand: Vec::with_capacity(t),
            hn_lin: Vec::with_capacity(t),
        };
        let mut y_seq = if self.return_sequence {
            vec![0.0; n * t * h]
        } else {
            Vec::new()
        };

        for step in 0..t {
            // gather x_t as contiguous [N, input]
            let mut x_t = vec![0.0; n * i];
            for b in 0..n {
                let src = (b * t + step) * i;
                x_t[b * i..(b + 1) * i].copy_from_slice(&xd[src..src + i]);
            }

            let mut z = self.gate_preact(&x_t, &h_state, n, "w_z", "u_z", "b_zi", "b_zh");
            z.iter_mut().for_each(|v| *v = sigmoid(*v));
            let mut r = self.gate_preact(&x_t, &h_state, n, "w_r", "u_r", "b_ri", "b_rh");
            r.iter_mut().for_each(|v| *v = sigmoid(*v));

            // candidate: tanh(x W_n + b_ni + r * (h_prev U_n + b_nh))
            let mut hn_lin = vec![0.0; n * h];
            matmul_acc(&h_state, n, h, self.params.get("u_n").data(), h, &mut hn_lin);
            add_bias(&mut hn_lin, self.params.get("b_nh").data());
            let mut n_cand = vec![0.0; n * h];
            matmul_acc(&x_t, n, i, self.params.get("w_n").data(), h, &mut n_cand);
            add_bias(&mut n_cand, self.params.get("b_ni").data());
            for k in 0..n * h {
                n_cand[k] = (n_cand[k] + r[k] * hn_lin[k]).tanh();
            }

            cache.h_prev.push(h_state.clone());
            for k in 0..n * h {
                h_state[k] = (1.0 - z[k]) * n_cand[k] + z[k] * cache.h_prev[step][k];
            }
            if self.return_sequence {
                for b in 0..n {
                    let dst = (b * t + step) * h;
                    y_seq[dst..dst + h].copy_from_slice(&h_state[b * h..(b + 1) * h]);
                }
            }
            cache.r.push(r);
            cache.z.push(z);
            cache.n_cand.push(n_cand);
            cache.hn_lin.push(hn_lin);
        }

        self.cache = Some(cache);
        if self.return_sequence {
            Tensor::new(vec![n, t, h], y_seq)
        } else {
            Tensor::new(vec![n, h], h_state)
        }
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidInput(format!("{}: backward before forward", self.name)))?;
        let (n, t, i) = (cache.x.shape()[0], cache.x.shape()[1], cache.x.shape()[2]);
        let h = self.hidden;
        let expected: Vec<usize> = if self.return_sequence {
            vec![n, t, h]
        } else {
            vec![n, h]
        };
        if grad_out.shape() != expected.as_slice() {
            return Err(Error::shape(&self.name, &expected, grad_out.shape()));
        }
        let gyd = grad_out.data();
        let xd = cache.x.data();
        let mut gx = vec![0.0; n * t * i];
        let mut dh = vec![0.0; n * h];

        for step in (0..t).rev() {
            if self.return_sequence {
                for b in 0..n {
                    let src = (b * t + step) * h;
                    for k in 0..h {
                        dh[b * h + k] += gyd[src + k];
                    }
                }
            } else if step == t - 1 {
                dh.iter_mut().zip(gyd).for_each(|(d, g)| *d += g);
            }

            let h_prev = &cache.h_prev[step];
            let r = &cache.r[step];
            let z = &cache.z[step];
            let n_cand = &cache.n_cand[step];
            let hn_lin = &cache.hn_lin[step];

            let mut dz = vec![0.0; n * h];
            let mut dn = vec![0.0; n * h];
            let mut dr = vec![0.0; n * h];
            let mut dhn_lin = vec![0.0; n * h];
            let mut dh_prev = vec![0.0; n * h];
            for k in 0..n * h {
                dz[k] = dh[k] * (h_prev[k] - n_cand[k]) * z[k] * (1.0 - z[k]);
                dn[k] = dh[k] * (1.0 - z[k]) * (1.0 - n_cand[k] * n_cand[k]);
                dhn_lin[k] = dn[k] * r[k];
                dr[k] = dn[k] * hn_lin[k] * r[k] * (1.0 - r[k]);
                dh_prev[k] = dh[k] * z[k];
            }

            let mut x_t = vec![0.0; n * i];
            for b in 0..n {
                let src = (b * t + step) * i;
                x_t[b * i..(b + 1) * i].copy_from_slice(&xd[src..src + i]);
            }

            let mut dx_t = vec![0.0; n * i];
            for (gate, w, u, bi, bh, rec_grad) in [
                (&dz, "w_z", "u_z", "b_zi", "b_zh", &dz),
                (&dr, "w_r", "u_r", "b_ri", "b_rh", &dr),
                (&dn, "w_n", "u_n", "b_ni", "b_nh", &dhn_lin),
            ] {
                // input path
                matmul_wt_acc(gate, n, h, self.params.get(w).data(), i, &mut dx_t);
                {
                    let wt = self.params.get_mut(w);
                    let gw = wt.grad_mut().expect("gru weight grad");
                    matmul_at_acc(&x_t, n, i, gate, h, gw);
                }
                {
                    let b = self.params.get_mut(bi);
                    bias_grad_acc(gate, h, b.grad_mut().expect("gru bias grad"));
                }
                // recurrent path (the candidate gate uses dhn_lin here)
                matmul_wt_acc(rec_grad, n, h, self.params.get(u).data(), h, &mut dh_prev);
                {
                    let ut = self.params.get_mut(u);
                    let gu = ut.grad_mut().expect("gru recurrent grad");
                    matmul_at_acc(h_prev, n, h, rec_grad, h, gu);
                }
                {
                    let b = self.params.get_mut(bh);
                    bias_grad_acc(rec_grad, h, b.grad_mut().expect("gru bias grad"));
                }
            }

            for b in 0..n {
                let dst = (b * t + step) * i;
                for k in 0..i {
                    gx[dst + k] += dx_t[b * i + k];
                }
            }
            dh = dh_prev;
        }

        Tensor::new(vec![n, t, i], gx)
    }

    fn params(&self) -> &LayerParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut LayerParams {
        &mut self.params
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match in_shape {
            &[n, t, i] if i == self.input => {
                if self.return_sequence {
                    Ok(vec![n, t, self.hidden])
                } else {
                    Ok(vec![n, self.hidden])
                }
            }
            other => Err(Error::shape(&self.name, &[0, 0, self.input], other)),
        }
    }
}

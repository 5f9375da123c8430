use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ops::{matvec_acc, matvec_t_acc, outer_acc, sigmoid};
use super::{Gradients, ParamId, ParamStore, Tensor};

/// LSTM cell whose weights live in a [`ParamStore`]. Gate rows are stacked
/// in the order input, forget, cell, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Activations of one forward step, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Gradients flowing out of one backward step.
pub struct LstmInputGrads {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_x = store.add_uniform(&format!("{prefix}.w_x"), &[4 * hidden, input], rng);
        let w_h = store.add_uniform(&format!("{prefix}.w_h"), &[4 * hidden, hidden], rng);
        let b = store.add_uniform(&format!("{prefix}.b"), &[4 * hidden], rng);
        LstmCell {
            w_x,
            w_h,
            b,
            input,
            hidden,
        }
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.w_x, self.w_h, self.b]
    }

    pub fn zero_state(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; self.hidden], vec![0.0; self.hidden])
    }

    /// One recurrence step; returns `(h, c)` and the cache for backprop.
    pub fn forward(
        &self,
        store: &ParamStore,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>, LstmCache) {
        let hd = self.hidden;
        debug_assert_eq!(x.len(), self.input);
        let mut a = store.value(self.b).to_vec();
        matvec_acc(store.value(self.w_x), self.input, x, &mut a);
        matvec_acc(store.value(self.w_h), hd, h_prev, &mut a);

        for v in &mut a[..2 * hd] {
            *v = sigmoid(*v);
        }
        for v in &mut a[2 * hd..3 * hd] {
            *v = v.tanh();
        }
        for v in &mut a[3 * hd..] {
            *v = sigmoid(*v);
        }
        let (i, rest) = a.split_at(hd);
        let (f, rest) = rest.split_at(hd);
        let (g, o) = rest.split_at(hd);

        let mut c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        for k in 0..hd {
            c[k] = f[k] * c_prev[k] + i[k] * g[k];
            tanh_c[k] = c[k].tanh();
            h[k] = o[k] * tanh_c[k];
        }
        let cache = LstmCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates: a,
            tanh_c,
        };
        (h, c, cache)
    }

    /// Backward through one step given upstream `dh`, `dc`. Weight gradients
    /// are accumulated into `grads`.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &LstmCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut Gradients,
    ) -> LstmInputGrads {
        let hd = self.hidden;
        let gates = &cache.gates;
        let (i, rest) = gates.split_at(hd);
        let (f, rest) = rest.split_at(hd);
        let (g, o) = rest.split_at(hd);

        let mut da = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let tc = cache.tanh_c[k];
            let dct = dc[k] + dh[k] * o[k] * (1.0 - tc * tc);
            let d_o = dh[k] * tc;
            let d_i = dct * g[k];
            let d_g = dct * i[k];
            let d_f = dct * cache.c_prev[k];
            dc_prev[k] = dct * f[k];
            da[k] = d_i * i[k] * (1.0 - i[k]);
            da[hd + k] = d_f * f[k] * (1.0 - f[k]);
            da[2 * hd + k] = d_g * (1.0 - g[k] * g[k]);
            da[3 * hd + k] = d_o * o[k] * (1.0 - o[k]);
        }

        outer_acc(grads.slot(self.w_x), &da, &cache.x);
        outer_acc(grads.slot(self.w_h), &da, &cache.h_prev);
        super::ops::add_into(grads.slot(self.b), &da);

        let mut dx = vec![0.0; self.input];
        matvec_t_acc(store.value(self.w_x), self.input, &da, &mut dx);
        let mut dh_prev = vec![0.0; hd];
        matvec_t_acc(store.value(self.w_h), hd, &da, &mut dh_prev);
        LstmInputGrads {
            dx,
            dh_prev,
            dc_prev,
        }
    }
}

/// Tensor-level single step with shape validation.
pub fn lstm_step(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    cell: &LstmCell,
    store: &ParamStore,
) -> Result<(Tensor, Tensor)> {
    if x.len() != cell.input {
        return Err(Error::dim("lstm_step input", cell.input, x.len()));
    }
    if h_prev.len() != cell.hidden {
        return Err(Error::dim("lstm_step hidden", cell.hidden, h_prev.len()));
    }
    if c_prev.len() != cell.hidden {
        return Err(Error::dim("lstm_step cell", cell.hidden, c_prev.len()));
    }
    let (h, c, _) = cell.forward(store, x.values(), h_prev.values(), c_prev.values());
    Ok((Tensor::vector(h), Tensor::vector(c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use crate::rng::seeded;
    use rand::Rng;

    fn cell(input: usize, hidden: usize, seed: u64) -> (ParamStore, LstmCell) {
        let mut store = ParamStore::new();
        let mut rng = seeded(seed);
        let cell = LstmCell::new(&mut store, "cell", input, hidden, &mut rng);
        (store, cell)
    }

    /// Straight-line scalar LSTM written independently of the vectorised path.
    fn scalar_lstm(
        wx: &[f64],
        wh: &[f64],
        b: &[f64],
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let n_in = x.len();
        let hd = h.len();
        let pre = |row: usize| -> f64 {
            let mut s = b[row];
            for j in 0..n_in {
                s += wx[row * n_in + j] * x[j];
            }
            for j in 0..hd {
                s += wh[row * hd + j] * h[j];
            }
            s
        };
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut h_out = vec![];
        let mut c_out = vec![];
        for k in 0..hd {
            let ig = sig(pre(k));
            let fg = sig(pre(hd + k));
            let gg = pre(2 * hd + k).tanh();
            let og = sig(pre(3 * hd + k));
            let cn = fg * c[k] + ig * gg;
            c_out.push(cn);
            h_out.push(og * cn.tanh());
        }
        (h_out, c_out)
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let (mut store, cell) = cell(3, 4, 1);
        for id in cell.params() {
            store.value_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        let z3 = Tensor::vector(vec![0.0; 3]);
        let z4 = Tensor::vector(vec![0.0; 4]);
        let (h, c) = lstm_step(&z3, &z4, &z4, &cell, &store).unwrap();
        assert!(h.values().iter().all(|&v| v == 0.0));
        assert!(c.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_lengths_follow_hidden_size() {
        let (store, cell) = cell(5, 7, 2);
        let (h, c) = lstm_step(
            &Tensor::vector(vec![0.3; 5]),
            &Tensor::vector(vec![0.1; 7]),
            &Tensor::vector(vec![-0.2; 7]),
            &cell,
            &store,
        )
        .unwrap();
        assert_eq!(h.len(), 7);
        assert_eq!(c.len(), 7);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (store, cell) = cell(3, 2, 3);
        let err = lstm_step(
            &Tensor::vector(vec![0.0; 4]),
            &Tensor::vector(vec![0.0; 2]),
            &Tensor::vector(vec![0.0; 2]),
            &cell,
            &store,
        );
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = seeded(99);
        for seed in 0..20 {
            let (mut store, cell) = cell(4, 4, seed);
            for id in cell.params() {
                store
                    .value_mut(id)
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-1.0..1.0));
            }
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (h1, c1, _) = cell.forward(&store, &x, &h, &c);
            let (h2, c2) = scalar_lstm(
                store.value(cell.w_x),
                store.value(cell.w_h),
                store.value(cell.b),
                &x,
                &h,
                &c,
            );
            for k in 0..4 {
                assert!((h1[k] - h2[k]).abs() < 1e-12);
                assert!((c1[k] - c2[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn three_step_unroll_gradients_match_finite_differences() {
        let (mut store, cell) = cell(3, 4, 5);
        let mut rng = seeded(6);
        for id in cell.params() {
            store
                .value_mut(id)
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // loss = w . h_T + 0.5 * |c_T|^2
        let loss = |store: &ParamStore| -> (f64, Gradients) {
            let (mut h, mut c) = cell.zero_state();
            let mut caches = vec![];
            for x in &xs {
                let (h2, c2, cache) = cell.forward(store, x, &h, &c);
                h = h2;
                c = c2;
                caches.push(cache);
            }
            let value = crate::nn::ops::dot(&w, &h) + 0.5 * crate::nn::ops::dot(&c, &c);
            let mut grads = store.gradients();
            let mut dh = w.clone();
            let mut dc = c.clone();
            for cache in caches.iter().rev() {
                let g = cell.backward(store, cache, &dh, &dc, &mut grads);
                dh = g.dh_prev;
                dc = g.dc_prev;
            }
            (value, grads)
        };
        let report = grad_check(loss, &mut store, 1e-5);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}

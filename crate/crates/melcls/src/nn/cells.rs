//! Recurrent cells (GRU, LSTM, multiplicative LSTM) with explicit
//! forward/backward steps for backpropagation through time.
//!
//! Equations:
//!
//! GRU:   z = σ(Wz x + Uz h + bz)
//!        r = σ(Wr x + Ur h + br)
//!        h̃ = tanh(Wh x + Uh (r⊙h) + bh)
//!        h' = (1−z)⊙h + z⊙h̃
//!
//! LSTM:  i,f,o = σ(W x + U h + b), g = tanh(W x + U h + b)
//!        c' = f⊙c + i⊙g,  h' = o⊙tanh(c')
//!
//! mLSTM: m = (Wmx x) ⊙ (Wmh h), then the LSTM step with m substituted
//!        for h in every gate preactivation.

use super::tensor::{axpy, matvec_accum, matvec_t_accum, outer_accum, sigmoid, Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Lstm,
    Gru,
    Mlstm,
}

impl CellKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
            CellKind::Mlstm => "mlstm",
        }
    }

    pub fn parse(s: &str) -> Option<CellKind> {
        match s {
            "lstm" => Some(CellKind::Lstm),
            "gru" => Some(CellKind::Gru),
            "mlstm" => Some(CellKind::Mlstm),
            _ => None,
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn gate_preact<F: Scalar>(
    w: &Tensor<F>,
    u: &Tensor<F>,
    b: &Tensor<F>,
    x: &[F],
    h: &[F],
) -> Vec<F> {
    let hidden = b.len();
    let mut a = b.values.clone();
    matvec_accum(&w.values, hidden, x.len(), x, &mut a);
    matvec_accum(&u.values, hidden, h.len(), h, &mut a);
    a
}

/// Accumulate one gate's parameter gradients and its contributions to
/// `dx` / `dh`, given the preactivation gradient `da`.
fn gate_backward<F: Scalar>(
    da: &[F],
    x: &[F],
    h: &[F],
    w: &mut Tensor<F>,
    u: &mut Tensor<F>,
    b: &mut Tensor<F>,
    dx: &mut [F],
    dh: &mut [F],
) {
    outer_accum(&mut w.grad, da, x);
    outer_accum(&mut u.grad, da, h);
    axpy(&mut b.grad, F::one(), da);
    matvec_t_accum(&w.values, da.len(), x.len(), da, dx);
    matvec_t_accum(&u.values, da.len(), h.len(), da, dh);
}

fn dsigmoid<F: Scalar>(y: F) -> F {
    y * (F::one() - y)
}

fn dtanh<F: Scalar>(y: F) -> F {
    F::one() - y * y
}

// ---------------------------------------------------------------------------
// GRU

#[derive(Debug, Clone)]
pub struct GruCell<F: Scalar> {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_z: Tensor<F>,
    pub u_z: Tensor<F>,
    pub b_z: Tensor<F>,
    pub w_r: Tensor<F>,
    pub u_r: Tensor<F>,
    pub b_r: Tensor<F>,
    pub w_h: Tensor<F>,
    pub u_h: Tensor<F>,
    pub b_h: Tensor<F>,
}

#[derive(Debug)]
pub struct GruCache<F: Scalar> {
    x: Vec<F>,
    h_prev: Vec<F>,
    z: Vec<F>,
    r: Vec<F>,
    rh: Vec<F>,
    h_tilde: Vec<F>,
}

impl<F: Scalar> GruCell<F> {
    pub fn new(prefix: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let w = |n: &str, shape: &[usize], rng: &mut dyn rand::RngCore| {
            Tensor::uniform(format!("{prefix}.{n}"), shape, INIT_SCALE, rng)
        };
        let (d, h) = (input_size, hidden_size);
        GruCell {
            input_size: d,
            hidden_size: h,
            w_z: w("w_z", &[h, d], rng),
            u_z: w("u_z", &[h, h], rng),
            b_z: Tensor::zeros(format!("{prefix}.b_z"), &[h]),
            w_r: w("w_r", &[h, d], rng),
            u_r: w("u_r", &[h, h], rng),
            b_r: Tensor::zeros(format!("{prefix}.b_r"), &[h]),
            w_h: w("w_h", &[h, d], rng),
            u_h: w("u_h", &[h, h], rng),
            b_h: Tensor::zeros(format!("{prefix}.b_h"), &[h]),
        }
    }

    pub fn step(&self, x: &[F], h_prev: &[F]) -> (Vec<F>, GruCache<F>) {
        let mut z = gate_preact(&self.w_z, &self.u_z, &self.b_z, x, h_prev);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut r = gate_preact(&self.w_r, &self.u_r, &self.b_r, x, h_prev);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        let rh: Vec<F> = r.iter().zip(h_prev).map(|(&ri, &hi)| ri * hi).collect();
        let mut h_tilde = gate_preact(&self.w_h, &self.u_h, &self.b_h, x, &rh);
        h_tilde.iter_mut().for_each(|v| *v = v.tanh());
        let h_new: Vec<F> = z
            .iter()
            .zip(h_prev)
            .zip(&h_tilde)
            .map(|((&zi, &hi), &ti)| (F::one() - zi) * hi + zi * ti)
            .collect();
        let cache = GruCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            rh,
            h_tilde,
        };
        (h_new, cache)
    }

    pub fn backward_step(&mut self, cache: &GruCache<F>, d_h_new: &[F]) -> (Vec<F>, Vec<F>) {
        let h = self.hidden_size;
        let mut dx = vec![F::zero(); self.input_size];
        let mut dh = vec![F::zero(); h];

        let mut da_h = vec![F::zero(); h];
        let mut dz = vec![F::zero(); h];
        for k in 0..h {
            let d_tilde = d_h_new[k] * cache.z[k];
            dz[k] = d_h_new[k] * (cache.h_tilde[k] - cache.h_prev[k]);
            dh[k] = d_h_new[k] * (F::one() - cache.z[k]);
            da_h[k] = d_tilde * dtanh(cache.h_tilde[k]);
        }

        // Candidate gate: dx, d(rh); parameter grads against (x, rh).
        let mut d_rh = vec![F::zero(); h];
        outer_accum(&mut self.w_h.grad, &da_h, &cache.x);
        outer_accum(&mut self.u_h.grad, &da_h, &cache.rh);
        axpy(&mut self.b_h.grad, F::one(), &da_h);
        matvec_t_accum(&self.w_h.values, h, self.input_size, &da_h, &mut dx);
        matvec_t_accum(&self.u_h.values, h, h, &da_h, &mut d_rh);

        let mut da_r = vec![F::zero(); h];
        for k in 0..h {
            dh[k] = dh[k] + d_rh[k] * cache.r[k];
            da_r[k] = d_rh[k] * cache.h_prev[k] * dsigmoid(cache.r[k]);
        }
        let mut da_z = dz;
        for k in 0..h {
            da_z[k] = da_z[k] * dsigmoid(cache.z[k]);
        }

        gate_backward(
            &da_z, &cache.x, &cache.h_prev, &mut self.w_z, &mut self.u_z, &mut self.b_z,
            &mut dx, &mut dh,
        );
        gate_backward(
            &da_r, &cache.x, &cache.h_prev, &mut self.w_r, &mut self.u_r, &mut self.b_r,
            &mut dx, &mut dh,
        );
        (dx, dh)
    }
}

// ---------------------------------------------------------------------------
// LSTM

#[derive(Debug, Clone)]
pub struct LstmCell<F: Scalar> {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_i: Tensor<F>,
    pub u_i: Tensor<F>,
    pub b_i: Tensor<F>,
    pub w_f: Tensor<F>,
    pub u_f: Tensor<F>,
    pub b_f: Tensor<F>,
    pub w_g: Tensor<F>,
    pub u_g: Tensor<F>,
    pub b_g: Tensor<F>,
    pub w_o: Tensor<F>,
    pub u_o: Tensor<F>,
    pub b_o: Tensor<F>,
}

#[derive(Debug)]
pub struct LstmCache<F: Scalar> {
    x: Vec<F>,
    /// Gate preactivation input: `h_prev` for LSTM, `m` for mLSTM.
    rec_in: Vec<F>,
    c_prev: Vec<F>,
    i: Vec<F>,
    f: Vec<F>,
    g: Vec<F>,
    o: Vec<F>,
    tc: Vec<F>,
}

impl<F: Scalar> LstmCell<F> {
    pub fn new(prefix: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let w = |n: &str, shape: &[usize], rng: &mut dyn rand::RngCore| {
            Tensor::uniform(format!("{prefix}.{n}"), shape, INIT_SCALE, rng)
        };
        let (d, h) = (input_size, hidden_size);
        LstmCell {
            input_size: d,
            hidden_size: h,
            w_i: w("w_i", &[h, d], rng),
            u_i: w("u_i", &[h, h], rng),
            b_i: Tensor::zeros(format!("{prefix}.b_i"), &[h]),
            w_f: w("w_f", &[h, d], rng),
            u_f: w("u_f", &[h, h], rng),
            b_f: Tensor::zeros(format!("{prefix}.b_f"), &[h]),
            w_g: w("w_g", &[h, d], rng),
            u_g: w("u_g", &[h, h], rng),
            b_g: Tensor::zeros(format!("{prefix}.b_g"), &[h]),
            w_o: w("w_o", &[h, d], rng),
            u_o: w("u_o", &[h, h], rng),
            b_o: Tensor::zeros(format!("{prefix}.b_o"), &[h]),
        }
    }

    /// One step given the recurrent gate input (`h_prev`, or `m` for mLSTM).
    fn step_with(&self, x: &[F], rec_in: &[F], c_prev: &[F]) -> (Vec<F>, Vec<F>, LstmCache<F>) {
        let mut i = gate_preact(&self.w_i, &self.u_i, &self.b_i, x, rec_in);
        i.iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut f = gate_preact(&self.w_f, &self.u_f, &self.b_f, x, rec_in);
        f.iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut g = gate_preact(&self.w_g, &self.u_g, &self.b_g, x, rec_in);
        g.iter_mut().for_each(|v| *v = v.tanh());
        let mut o = gate_preact(&self.w_o, &self.u_o, &self.b_o, x, rec_in);
        o.iter_mut().for_each(|v| *v = sigmoid(*v));

        let c_new: Vec<F> = f
            .iter()
            .zip(c_prev)
            .zip(i.iter().zip(&g))
            .map(|((&fk, &ck), (&ik, &gk))| fk * ck + ik * gk)
            .collect();
        let tc: Vec<F> = c_new.iter().map(|&c| c.tanh()).collect();
        let h_new: Vec<F> = o.iter().zip(&tc).map(|(&ok, &tk)| ok * tk).collect();
        let cache = LstmCache {
            x: x.to_vec(),
            rec_in: rec_in.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            tc,
        };
        (h_new, c_new, cache)
    }

    pub fn step(&self, x: &[F], h_prev: &[F], c_prev: &[F]) -> (Vec<F>, Vec<F>, LstmCache<F>) {
        self.step_with(x, h_prev, c_prev)
    }

    /// Shared core of the backward step: returns `(dx, d_rec_in, d_c_prev)`.
    fn backward_with(
        &mut self,
        cache: &LstmCache<F>,
        d_h_new: &[F],
        d_c_new: &[F],
    ) -> (Vec<F>, Vec<F>, Vec<F>) {
        let h = self.hidden_size;
        let mut dx = vec![F::zero(); self.input_size];
        let mut d_rec = vec![F::zero(); cache.rec_in.len()];

        let mut da_i = vec![F::zero(); h];
        let mut da_f = vec![F::zero(); h];
        let mut da_g = vec![F::zero(); h];
        let mut da_o = vec![F::zero(); h];
        let mut d_c_prev = vec![F::zero(); h];
        for k in 0..h {
            let dc = d_c_new[k] + d_h_new[k] * cache.o[k] * dtanh(cache.tc[k]);
            da_o[k] = d_h_new[k] * cache.tc[k] * dsigmoid(cache.o[k]);
            da_f[k] = dc * cache.c_prev[k] * dsigmoid(cache.f[k]);
            da_i[k] = dc * cache.g[k] * dsigmoid(cache.i[k]);
            da_g[k] = dc * cache.i[k] * dtanh(cache.g[k]);
            d_c_prev[k] = dc * cache.f[k];
        }

        gate_backward(
            &da_i, &cache.x, &cache.rec_in, &mut self.w_i, &mut self.u_i, &mut self.b_i,
            &mut dx, &mut d_rec,
        );
        gate_backward(
            &da_f, &cache.x, &cache.rec_in, &mut self.w_f, &mut self.u_f, &mut self.b_f,
            &mut dx, &mut d_rec,
        );
        gate_backward(
            &da_g, &cache.x, &cache.rec_in, &mut self.w_g, &mut self.u_g, &mut self.b_g,
            &mut dx, &mut d_rec,
        );
        gate_backward(
            &da_o, &cache.x, &cache.rec_in, &mut self.w_o, &mut self.u_o, &mut self.b_o,
            &mut dx, &mut d_rec,
        );
        (dx, d_rec, d_c_prev)
    }

    pub fn backward_step(
        &mut self,
        cache: &LstmCache<F>,
        d_h_new: &[F],
        d_c_new: &[F],
    ) -> (Vec<F>, Vec<F>, Vec<F>) {
        self.backward_with(cache, d_h_new, d_c_new)
    }
}

// ---------------------------------------------------------------------------
// mLSTM

#[derive(Debug, Clone)]
pub struct MlstmCell<F: Scalar> {
    pub w_mx: Tensor<F>,
    pub w_mh: Tensor<F>,
    pub lstm: LstmCell<F>,
}

#[derive(Debug)]
pub struct MlstmCache<F: Scalar> {
    h_prev: Vec<F>,
    p: Vec<F>,
    q: Vec<F>,
    inner: LstmCache<F>,
}

impl<F: Scalar> MlstmCell<F> {
    pub fn new(prefix: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let w_mx = Tensor::uniform(
            format!("{prefix}.w_mx"),
            &[hidden_size, input_size],
            INIT_SCALE,
            rng,
        );
        let w_mh = Tensor::uniform(
            format!("{prefix}.w_mh"),
            &[hidden_size, hidden_size],
            INIT_SCALE,
            rng,
        );
        MlstmCell {
            w_mx,
            w_mh,
            lstm: LstmCell::new(prefix, input_size, hidden_size, rng),
        }
    }

    pub fn step(&self, x: &[F], h_prev: &[F], c_prev: &[F]) -> (Vec<F>, Vec<F>, MlstmCache<F>) {
        let h = self.lstm.hidden_size;
        let mut p = vec![F::zero(); h];
        matvec_accum(&self.w_mx.values, h, self.lstm.input_size, x, &mut p);
        let mut q = vec![F::zero(); h];
        matvec_accum(&self.w_mh.values, h, h, h_prev, &mut q);
        let m: Vec<F> = p.iter().zip(&q).map(|(&a, &b)| a * b).collect();
        let (h_new, c_new, inner) = self.lstm.step_with(x, &m, c_prev);
        let cache = MlstmCache {
            h_prev: h_prev.to_vec(),
            p,
            q,
            inner,
        };
        (h_new, c_new, cache)
    }

    pub fn backward_step(
        &mut self,
        cache: &MlstmCache<F>,
        d_h_new: &[F],
        d_c_new: &[F],
    ) -> (Vec<F>, Vec<F>, Vec<F>) {
        let h = self.lstm.hidden_size;
        let (mut dx, dm, d_c_prev) = self.lstm.backward_with(&cache.inner, d_h_new, d_c_new);
        let dp: Vec<F> = dm.iter().zip(&cache.q).map(|(&d, &q)| d * q).collect();
        let dq: Vec<F> = dm.iter().zip(&cache.p).map(|(&d, &p)| d * p).collect();
        outer_accum(&mut self.w_mx.grad, &dp, &cache.inner.x);
        matvec_t_accum(&self.w_mx.values, h, self.lstm.input_size, &dp, &mut dx);
        let mut dh = vec![F::zero(); h];
        outer_accum(&mut self.w_mh.grad, &dq, &cache.h_prev);
        matvec_t_accum(&self.w_mh.values, h, h, &dq, &mut dh);
        (dx, dh, d_c_prev)
    }
}

// ---------------------------------------------------------------------------
// Kind-erased wrapper used by the classifier

#[derive(Debug, Clone)]
pub enum Cell<F: Scalar> {
    Gru(GruCell<F>),
    Lstm(LstmCell<F>),
    Mlstm(MlstmCell<F>),
}

#[derive(Debug)]
pub enum StepCache<F: Scalar> {
    Gru(GruCache<F>),
    Lstm(LstmCache<F>),
    Mlstm(MlstmCache<F>),
}

impl<F: Scalar> Cell<F> {
    pub fn new(
        kind: CellKind,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut impl Rng,
    ) -> Self {
        match kind {
            CellKind::Gru => Cell::Gru(GruCell::new(prefix, input_size, hidden_size, rng)),
            CellKind::Lstm => Cell::Lstm(LstmCell::new(prefix, input_size, hidden_size, rng)),
            CellKind::Mlstm => Cell::Mlstm(MlstmCell::new(prefix, input_size, hidden_size, rng)),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            Cell::Gru(_) => CellKind::Gru,
            Cell::Lstm(_) => CellKind::Lstm,
            Cell::Mlstm(_) => CellKind::Mlstm,
        }
    }

    pub fn hidden_size(&self) -> usize {
        match self {
            Cell::Gru(c) => c.hidden_size,
            Cell::Lstm(c) => c.hidden_size,
            Cell::Mlstm(c) => c.lstm.hidden_size,
        }
    }

    /// One step over `(h, c)`; GRU ignores and returns an empty `c`.
    pub fn step(&self, x: &[F], h: &[F], c: &[F]) -> (Vec<F>, Vec<F>, StepCache<F>) {
        match self {
            Cell::Gru(cell) => {
                let (h_new, cache) = cell.step(x, h);
                (h_new, Vec::new(), StepCache::Gru(cache))
            }
            Cell::Lstm(cell) => {
                let (h_new, c_new, cache) = cell.step(x, h, c);
                (h_new, c_new, StepCache::Lstm(cache))
            }
            Cell::Mlstm(cell) => {
                let (h_new, c_new, cache) = cell.step(x, h, c);
                (h_new, c_new, StepCache::Mlstm(cache))
            }
        }
    }

    pub fn backward_step(
        &mut self,
        cache: &StepCache<F>,
        d_h: &[F],
        d_c: &[F],
    ) -> (Vec<F>, Vec<F>, Vec<F>) {
        match (self, cache) {
            (Cell::Gru(cell), StepCache::Gru(cache)) => {
                let (dx, dh) = cell.backward_step(cache, d_h);
                (dx, dh, Vec::new())
            }
            (Cell::Lstm(cell), StepCache::Lstm(cache)) => cell.backward_step(cache, d_h, d_c),
            (Cell::Mlstm(cell), StepCache::Mlstm(cache)) => cell.backward_step(cache, d_h, d_c),
            _ => panic!("cache kind does not match cell kind"),
        }
    }

    pub fn initial_state(&self) -> (Vec<F>, Vec<F>) {
        let h = vec![F::zero(); self.hidden_size()];
        let c = match self {
            Cell::Gru(_) => Vec::new(),
            _ => vec![F::zero(); self.hidden_size()],
        };
        (h, c)
    }

    pub fn params(&self) -> Vec<&Tensor<F>> {
        match self {
            Cell::Gru(c) => vec![
                &c.w_z, &c.u_z, &c.b_z, &c.w_r, &c.u_r, &c.b_r, &c.w_h, &c.u_h, &c.b_h,
            ],
            Cell::Lstm(c) => vec![
                &c.w_i, &c.u_i, &c.b_i, &c.w_f, &c.u_f, &c.b_f, &c.w_g, &c.u_g, &c.b_g, &c.w_o,
                &c.u_o, &c.b_o,
            ],
            Cell::Mlstm(c) => {
                let mut v = vec![&c.w_mx, &c.w_mh];
                v.extend([
                    &c.lstm.w_i, &c.lstm.u_i, &c.lstm.b_i, &c.lstm.w_f, &c.lstm.u_f, &c.lstm.b_f,
                    &c.lstm.w_g, &c.lstm.u_g, &c.lstm.b_g, &c.lstm.w_o, &c.lstm.u_o, &c.lstm.b_o,
                ]);
                v
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        match self {
            Cell::Gru(c) => vec![
                &mut c.w_z, &mut c.u_z, &mut c.b_z, &mut c.w_r, &mut c.u_r, &mut c.b_r,
                &mut c.w_h, &mut c.u_h, &mut c.b_h,
            ],
            Cell::Lstm(c) => vec![
                &mut c.w_i, &mut c.u_i, &mut c.b_i, &mut c.w_f, &mut c.u_f, &mut c.b_f,
                &mut c.w_g, &mut c.u_g, &mut c.b_g, &mut c.w_o, &mut c.u_o, &mut c.b_o,
            ],
            Cell::Mlstm(c) => {
                let mut v = vec![&mut c.w_mx, &mut c.w_mh];
                v.extend([
                    &mut c.lstm.w_i, &mut c.lstm.u_i, &mut c.lstm.b_i, &mut c.lstm.w_f,
                    &mut c.lstm.u_f, &mut c.lstm.b_f, &mut c.lstm.w_g, &mut c.lstm.u_g,
                    &mut c.lstm.b_g, &mut c.lstm.w_o, &mut c.lstm.u_o, &mut c.lstm.b_o,
                ]);
                v
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Naive index-by-index evaluation, independent of the kernel helpers.
    fn naive_mv(w: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
        let (rows, cols) = (w.shape[0], w.shape[1]);
        (0..rows)
            .map(|r| (0..cols).map(|c| w.values[r * cols + c] * x[c]).sum())
            .collect()
    }

    #[test]
    fn gru_zero_params_fix_zero_state() {
        let mut cell = Cell::<f64>::new(CellKind::Gru, "t", 4, 3, &mut rng(0));
        for t in cell.params_mut() {
            t.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let (h, _, _) = cell.step(&[0.7, -0.3, 1.0, 0.2], &[0.0, 0.0, 0.0], &[]);
        assert!(h.iter().all(|&v| v == 0.0)); // z=0.5, h_tilde=0
    }

    #[test]
    fn gru_closed_update_gate_keeps_state() {
        let mut cell = GruCell::<f64>::new("t", 2, 2, &mut rng(1));
        for t in [
            &mut cell.w_z, &mut cell.u_z, &mut cell.w_r, &mut cell.u_r, &mut cell.w_h,
            &mut cell.u_h,
        ] {
            t.values.iter_mut().for_each(|v| *v = 0.0);
        }
        cell.b_z.values.iter_mut().for_each(|v| *v = -40.0); // z -> 0
        let h0 = [0.37, -0.92];
        let (h1, _) = cell.step(&[5.0, -2.0], &h0);
        for (a, b) in h1.iter().zip(&h0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_matches_scalar_oracle() {
        let cell = GruCell::<f64>::new("t", 3, 3, &mut rng(2));
        let x = [0.4, -1.2, 0.9];
        let h = [0.1, 0.2, -0.3];
        let (got, _) = cell.step(&x, &h);

        let az = naive_mv(&cell.w_z, &x);
        let ar = naive_mv(&cell.w_r, &x);
        let ah_x = naive_mv(&cell.w_h, &x);
        let uz = naive_mv(&cell.u_z, &h);
        let ur = naive_mv(&cell.u_r, &h);
        for k in 0..3 {
            let z = sig(az[k] + uz[k] + cell.b_z.values[k]);
            let rh: Vec<f64> = (0..3)
                .map(|j| sig(ar[j] + ur[j] + cell.b_r.values[j]) * h[j])
                .collect();
            let uh = naive_mv(&cell.u_h, &rh);
            let h_tilde = (ah_x[k] + uh[k] + cell.b_h.values[k]).tanh();
            let want = (1.0 - z) * h[k] + z * h_tilde;
            assert!((got[k] - want).abs() < 1e-12, "k={k}: {} vs {want}", got[k]);
        }
    }

    #[test]
    fn lstm_zero_params_fix_zero_state() {
        let mut cell = LstmCell::<f64>::new("t", 3, 2, &mut rng(3));
        for t in [
            &mut cell.w_i, &mut cell.u_i, &mut cell.w_f, &mut cell.u_f, &mut cell.w_g,
            &mut cell.u_g, &mut cell.w_o, &mut cell.u_o,
        ] {
            t.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let (h, c, _) = cell.step(&[1.0, 2.0, 3.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_open_forget_gate_carries_cell_state() {
        let mut cell = LstmCell::<f64>::new("t", 2, 2, &mut rng(4));
        for t in [
            &mut cell.w_i, &mut cell.u_i, &mut cell.w_f, &mut cell.u_f, &mut cell.w_g,
            &mut cell.u_g, &mut cell.w_o, &mut cell.u_o,
        ] {
            t.values.iter_mut().for_each(|v| *v = 0.0);
        }
        cell.b_f.values.iter_mut().for_each(|v| *v = 60.0); // f -> 1
        cell.b_i.values.iter_mut().for_each(|v| *v = -60.0); // i -> 0
        let c0 = [0.8, -1.3];
        let (_, c1, _) = cell.step(&[0.5, 0.5], &[0.3, 0.3], &c0);
        for (a, b) in c1.iter().zip(&c0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_matches_scalar_oracle() {
        let cell = LstmCell::<f64>::new("t", 2, 2, &mut rng(5));
        let x = [0.6, -0.4];
        let h = [0.25, -0.15];
        let c = [0.5, 0.1];
        let (got_h, got_c, _) = cell.step(&x, &h, &c);
        for k in 0..2 {
            let pre = |w: &Tensor<f64>, u: &Tensor<f64>, b: &Tensor<f64>| {
                naive_mv(w, &x)[k] + naive_mv(u, &h)[k] + b.values[k]
            };
            let i = sig(pre(&cell.w_i, &cell.u_i, &cell.b_i));
            let f = sig(pre(&cell.w_f, &cell.u_f, &cell.b_f));
            let g = pre(&cell.w_g, &cell.u_g, &cell.b_g).tanh();
            let o = sig(pre(&cell.w_o, &cell.u_o, &cell.b_o));
            let cn = f * c[k] + i * g;
            assert!((got_c[k] - cn).abs() < 1e-12);
            assert!((got_h[k] - o * cn.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn mlstm_zero_hidden_behaves_like_lstm_with_zero_recurrent_input() {
        let cell = MlstmCell::<f64>::new("t", 3, 2, &mut rng(6));
        let x = [0.2, -0.8, 0.5];
        let zero_h = [0.0, 0.0];
        let c = [0.4, -0.2];
        let (h1, c1, _) = cell.step(&x, &zero_h, &c);
        let (h2, c2, _) = cell.lstm.step_with(&x, &[0.0, 0.0], &c);
        assert_eq!(h1, h2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn mlstm_identity_mix_reduces_to_lstm() {
        let mut cell = MlstmCell::<f64>::new("t", 2, 2, &mut rng(7));
        // Square case with identity mixes and an all-ones input: m == h.
        for t in [&mut cell.w_mx, &mut cell.w_mh] {
            t.values.iter_mut().for_each(|v| *v = 0.0);
            t.values[0] = 1.0;
            t.values[3] = 1.0;
        }
        let x = [1.0, 1.0];
        let h = [0.3, -0.6];
        let c = [0.1, 0.2];
        let (h1, c1, _) = cell.step(&x, &h, &c);
        let (h2, c2, _) = cell.lstm.step(&x, &h, &c);
        assert_eq!(h1, h2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn mlstm_matches_scalar_oracle() {
        let cell = MlstmCell::<f64>::new("t", 2, 2, &mut rng(8));
        let x = [0.9, -0.2];
        let h = [0.35, 0.15];
        let c = [-0.25, 0.45];
        let (got_h, got_c, _) = cell.step(&x, &h, &c);
        let p = naive_mv(&cell.w_mx, &x);
        let q = naive_mv(&cell.w_mh, &h);
        let m: Vec<f64> = p.iter().zip(&q).map(|(&a, &b)| a * b).collect();
        for k in 0..2 {
            let pre = |w: &Tensor<f64>, u: &Tensor<f64>, b: &Tensor<f64>| {
                naive_mv(w, &x)[k] + naive_mv(u, &m)[k] + b.values[k]
            };
            let i = sig(pre(&cell.lstm.w_i, &cell.lstm.u_i, &cell.lstm.b_i));
            let f = sig(pre(&cell.lstm.w_f, &cell.lstm.u_f, &cell.lstm.b_f));
            let g = pre(&cell.lstm.w_g, &cell.lstm.u_g, &cell.lstm.b_g).tanh();
            let o = sig(pre(&cell.lstm.w_o, &cell.lstm.u_o, &cell.lstm.b_o));
            let cn = f * c[k] + i * g;
            assert!((got_c[k] - cn).abs() < 1e-12);
            assert!((got_h[k] - o * cn.tanh()).abs() < 1e-12);
        }
    }

    /// Central-difference check of one cell's full parameter set plus its
    /// inputs on a 3-step unrolled sum-of-squares loss.
    fn finite_diff_cell(kind: CellKind) {
        let steps = 3;
        let (d, hdim) = (3usize, 4usize);
        let mut cell = Cell::<f64>::new(kind, "t", d, hdim, &mut rng(42));
        let xs: Vec<Vec<f64>> = (0..steps)
            .map(|t| (0..d).map(|j| ((t * d + j) as f64 * 0.37).sin() * 0.8).collect())
            .collect();

        let loss = |cell: &Cell<f64>| -> f64 {
            let (mut h, mut c) = cell.initial_state();
            for x in &xs {
                let (hn, cn, _) = cell.step(x, &h, &c);
                h = hn;
                c = cn;
            }
            h.iter().map(|v| v * v).sum::<f64>() * 0.5
        };

        // Analytic gradient.
        let (mut h, mut c) = cell.initial_state();
        let mut caches = Vec::new();
        for x in &xs {
            let (hn, cn, cache) = cell.step(x, &h, &c);
            caches.push(cache);
            h = hn;
            c = cn;
        }
        let mut dh: Vec<f64> = h.clone();
        let mut dc = vec![0.0; c.len()];
        for cache in caches.iter().rev() {
            let (_, dhp, dcp) = cell.backward_step(cache, &dh, &dc);
            dh = dhp;
            dc = dcp;
        }

        let n_params = cell.params().len();
        for pi in 0..n_params {
            for vi in 0..cell.params()[pi].len() {
                let eps = 1e-3;
                let orig = cell.params()[pi].values[vi];
                cell.params_mut()[pi].values[vi] = orig + eps;
                let up = loss(&cell);
                cell.params_mut()[pi].values[vi] = orig - eps;
                let down = loss(&cell);
                cell.params_mut()[pi].values[vi] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = cell.params()[pi].grad[vi];
                let denom = analytic.abs().max(numeric.abs()).max(1e-5);
                assert!(
                    (analytic - numeric).abs() / denom <= 1e-3,
                    "{kind:?} param {} [{vi}]: analytic {analytic} vs numeric {numeric}",
                    cell.params()[pi].name
                );
            }
        }
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        finite_diff_cell(CellKind::Gru);
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        finite_diff_cell(CellKind::Lstm);
    }

    #[test]
    fn mlstm_gradients_match_finite_differences() {
        finite_diff_cell(CellKind::Mlstm);
    }
}

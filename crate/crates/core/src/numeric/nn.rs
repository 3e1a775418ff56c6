//! Layer building blocks: parameter initialisation, affine maps and the LSTM cell.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{sigmoid, vec_mat, Tensor};
use crate::error::{Error, Result};

pub fn uniform_tensor<R: Rng>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::param(shape, values).expect("uniform shape")
}

pub fn normal_tensor<R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    let values = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::param(shape, values).expect("normal shape")
}

/// `y = x W + b` with `W: [input, output]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform_tensor(vec![input, output], bound, rng));
        let bias = store.add(format!("{name}.bias"), uniform_tensor(vec![1, output], bound, rng));
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> LinearVars {
        LinearVars {
            weight: tape.param(store, self.weight),
            bias: tape.param(store, self.bias),
        }
    }

    pub fn apply(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut y = vec_mat(x, store.get(self.weight).values(), self.output);
        for (o, b) in y.iter_mut().zip(store.get(self.bias).values()) {
            *o += b;
        }
        y
    }
}

/// A [`Linear`] layer's weights bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.weight)?;
        tape.add_row(xw, self.bias)
    }
}

/// Single-layer LSTM. Gate blocks are laid out `[input | forget | candidate | output]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// An [`Lstm`]'s weights bound to a tape, so they are copied once per batch.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub bias: Var,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_x = store.add(format!("{name}.w_x"), uniform_tensor(vec![input, 4 * hidden], bound, rng));
        let w_h = store.add(format!("{name}.w_h"), uniform_tensor(vec![hidden, 4 * hidden], bound, rng));
        let bias = store.add(format!("{name}.bias"), uniform_tensor(vec![1, 4 * hidden], bound, rng));
        Self {
            w_x,
            w_h,
            bias,
            input,
            hidden,
        }
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.w_x, self.w_h, self.bias]
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> LstmVars {
        LstmVars {
            w_x: tape.param(store, self.w_x),
            w_h: tape.param(store, self.w_h),
            bias: tape.param(store, self.bias),
            hidden: self.hidden,
        }
    }

    /// Tape-free step for a single sequence, used at inference time.
    pub fn step(&self, store: &ParamStore, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let mut gates = vec_mat(x, store.get(self.w_x).values(), 4 * hd);
        let recur = vec_mat(h, store.get(self.w_h).values(), 4 * hd);
        for ((g, r), b) in gates.iter_mut().zip(&recur).zip(store.get(self.bias).values()) {
            *g += r + b;
        }
        let mut h_next = vec![0.0; hd];
        let mut c_next = vec![0.0; hd];
        for j in 0..hd {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[hd + j]);
            let g = gates[2 * hd + j].tanh();
            let o = sigmoid(gates[3 * hd + j]);
            c_next[j] = f * c[j] + i * g;
            h_next[j] = o * c_next[j].tanh();
        }
        (h_next, c_next)
    }
}

/// One LSTM step on the tape for a batch: `x: [B, in]`, `h, c: [B, H]`.
pub fn lstm_step(tape: &mut Tape, x: Var, h: Var, c: Var, w: &LstmVars) -> Result<(Var, Var)> {
    let hd = w.hidden;
    if tape.shape(h).1 != hd || tape.shape(c) != tape.shape(h) || tape.shape(x).0 != tape.shape(h).0 {
        return Err(Error::usage(format!(
            "lstm_step: x {:?}, h {:?}, c {:?} with hidden {hd}",
            tape.shape(x),
            tape.shape(h),
            tape.shape(c)
        )));
    }
    let xw = tape.matmul(x, w.w_x)?;
    let hw = tape.matmul(h, w.w_h)?;
    let pre = tape.add(xw, hw)?;
    let gates = tape.add_row(pre, w.bias)?;
    let i = tape.slice_cols(gates, 0, hd)?;
    let i = tape.sigmoid(i);
    let f = tape.slice_cols(gates, hd, hd)?;
    let f = tape.sigmoid(f);
    let g = tape.slice_cols(gates, 2 * hd, hd)?;
    let g = tape.tanh(g);
    let o = tape.slice_cols(gates, 3 * hd, hd)?;
    let o = tape.sigmoid(o);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Keeps the previous state on rows whose `mask` entry is 0:
/// `prev + mask ⊙ (next − prev)`.
pub fn masked_update(tape: &mut Tape, prev: Var, next: Var, mask: Var) -> Result<Var> {
    let delta = tape.sub(next, prev)?;
    let delta = tape.mul_col(delta, mask)?;
    tape.add(prev, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_lstm(input: usize, hidden: usize) -> (ParamStore, Lstm) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lstm = Lstm::new(&mut store, "cell", input, hidden, &mut rng);
        for p in lstm.params() {
            store.get_mut(p).values_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        (store, lstm)
    }

    #[test]
    fn zero_weights_halve_the_cell() {
        let (store, lstm) = zero_lstm(2, 3);
        let c0 = [0.4, -1.0, 2.0];
        let mut tape = Tape::new();
        let w = lstm.bind(&mut tape, &store);
        let x = tape.constant(1, 2, vec![0.7, -0.3]);
        let h = tape.constant(1, 3, vec![0.1, 0.2, 0.3]);
        let c = tape.constant(1, 3, c0.to_vec());
        let (h1, c1) = lstm_step(&mut tape, x, h, c, &w).unwrap();
        for j in 0..3 {
            assert!((tape.value(c1)[j] - 0.5 * c0[j]).abs() < 1e-15);
            assert!((tape.value(h1)[j] - 0.5 * (0.5 * c0[j]).tanh()).abs() < 1e-15);
        }
        let (hp, cp) = lstm.step(&store, &[0.7, -0.3], &[0.1, 0.2, 0.3], &c0);
        assert_eq!(hp, tape.value(h1));
        assert_eq!(cp, tape.value(c1));
    }

    #[test]
    fn zero_state_stays_zero() {
        let (store, lstm) = zero_lstm(2, 2);
        let (h, c) = lstm.step(&store, &[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (store, lstm) = zero_lstm(2, 3);
        let mut tape = Tape::new();
        let w = lstm.bind(&mut tape, &store);
        let x = tape.constant(1, 2, vec![0.0; 2]);
        let h = tape.constant(1, 2, vec![0.0; 2]);
        let c = tape.constant(1, 2, vec![0.0; 2]);
        assert!(lstm_step(&mut tape, x, h, c, &w).is_err());
    }

    #[test]
    fn three_unrolled_steps_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lstm = Lstm::new(&mut store, "cell", 3, 4, &mut rng);
        let head = Linear::new(&mut store, "head", 4, 1, &mut rng);
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|t| (0..6).map(|j| ((t * 6 + j) as f64 * 0.37).sin()).collect())
            .collect();
        let ids: Vec<ParamId> = lstm.params().into_iter().chain(head.params()).collect();
        let report = finite_diff_check(&mut store, &ids, 1e-6, |s, tape| {
            let w = lstm.bind(tape, s);
            let mut h = tape.constant(2, 4, vec![0.0; 8]);
            let mut c = tape.constant(2, 4, vec![0.0; 8]);
            for x in &xs {
                let xv = tape.constant(2, 3, x.clone());
                (h, c) = lstm_step(tape, xv, h, c, &w)?;
            }
            let y = head.forward(tape, s, h)?;
            let y2 = tape.square(y);
            Ok(tape.sum(y2))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}

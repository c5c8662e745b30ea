//! Dense kernels and the LSTM cell with its hand-written backward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// `out = W x` for a row-major `rows x cols` matrix.
pub(crate) fn matvec(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `dx += W^T dy`.
pub(crate) fn matvec_t_acc(w: &[f64], cols: usize, dy: &[f64], dx: &mut [f64]) {
    for (&g, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if g != 0.0 {
            for (d, &a) in dx.iter_mut().zip(row) {
                *d += g * a;
            }
        }
    }
}

/// `dW += dy x^T`.
pub(crate) fn outer_acc(dw: &mut [f64], cols: usize, dy: &[f64], x: &[f64]) {
    for (&g, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if g != 0.0 {
            for (d, &a) in row.iter_mut().zip(x) {
                *d += g * a;
            }
        }
    }
}

/// Borrowed gate weights in `f, i, o, c` order. Each weight matrix is
/// `hidden x (hidden + input)` and acts on `[h_prev || x]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    pub w: [&'a [f64]; 4],
    pub b: [&'a [f64]; 4],
    pub hidden: usize,
    pub input: usize,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LstmStep {
    pub z: Vec<f64>,
    /// `f, i, o` after the sigmoid and the candidate after tanh.
    pub gates: [Vec<f64>; 4],
    pub c_prev: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmWeights<'_> {
    fn cols(&self) -> usize {
        self.hidden + self.input
    }

    pub(crate) fn forward(&self, z: Vec<f64>, c_prev: &[f64]) -> LstmStep {
        let h = self.hidden;
        let mut gates: [Vec<f64>; 4] = core::array::from_fn(|_| vec![0.0; h]);
        for (g, gate) in gates.iter_mut().enumerate() {
            matvec(self.w[g], self.cols(), &z, gate);
            for (v, b) in gate.iter_mut().zip(self.b[g]) {
                let a = *v + b;
                *v = if g == 3 { math::tanh(a) } else { math::sigmoid(a) };
            }
        }
        let c: Vec<f64> = (0..h).map(|k| gates[0][k] * c_prev[k] + gates[1][k] * gates[3][k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|&v| math::tanh(v)).collect();
        let hs = (0..h).map(|k| gates[2][k] * tanh_c[k]).collect();
        LstmStep { z, gates, c_prev: c_prev.to_vec(), c, tanh_c, h: hs }
    }

    /// Single cell evaluation: returns `(h_t, C_t)`.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut z = Vec::with_capacity(self.cols());
        z.extend_from_slice(h_prev);
        z.extend_from_slice(x);
        let s = self.forward(z, c_prev);
        (s.h, s.c)
    }

    /// Backpropagate `dh` and `dc` through one step, accumulating into
    /// `dw`/`db` (same gate order). Returns `(dz, dc_prev)`.
    pub(crate) fn backward(
        &self,
        step: &LstmStep,
        dh: &[f64],
        dc_in: &[f64],
        dw: &mut [&mut [f64]; 4],
        db: &mut [&mut [f64]; 4],
    ) -> (Vec<f64>, Vec<f64>) {
        let h = self.hidden;
        let [f, i, o, g] = &step.gates;
        let mut da: [Vec<f64>; 4] = core::array::from_fn(|_| vec![0.0; h]);
        let mut dc_prev = vec![0.0; h];
        for k in 0..h {
            let tc = step.tanh_c[k];
            let d_o = dh[k] * tc;
            let dc = dc_in[k] + dh[k] * o[k] * (1.0 - tc * tc);
            da[0][k] = dc * step.c_prev[k] * f[k] * (1.0 - f[k]);
            da[1][k] = dc * g[k] * i[k] * (1.0 - i[k]);
            da[2][k] = d_o * o[k] * (1.0 - o[k]);
            da[3][k] = dc * i[k] * (1.0 - g[k] * g[k]);
            dc_prev[k] = dc * f[k];
        }
        let mut dz = vec![0.0; self.cols()];
        for gi in 0..4 {
            outer_acc(dw[gi], self.cols(), &da[gi], &step.z);
            for (b, d) in db[gi].iter_mut().zip(&da[gi]) {
                *b += d;
            }
            matvec_t_acc(self.w[gi], self.cols(), &da[gi], &mut dz);
        }
        (dz, dc_prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_weights(h: usize, x: usize) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; h * (h + x)], vec![0.0; h])
    }

    #[test]
    fn zero_weight_cell() {
        let (w, b) = zero_weights(3, 2);
        let lw = LstmWeights { w: [&w, &w, &w, &w], b: [&b, &b, &b, &b], hidden: 3, input: 2 };
        let (h, c) = lw.step(&[0.4, -1.0], &[0.1, 0.2, 0.3], &[0.0; 3]);
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
        let (h, c) = lw.step(&[0.4, -1.0], &[0.0; 3], &[2.0, -1.0, 0.5]);
        for (k, &cp) in [2.0, -1.0, 0.5].iter().enumerate() {
            assert!((c[k] - 0.5 * cp).abs() < 1e-15);
            assert!((h[k] - 0.5 * libm::tanh(0.5 * cp)).abs() < 1e-15);
        }
    }

    #[test]
    fn kernels() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 2];
        matvec(&w, 3, &[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [-2.0, -2.0]);
        let mut dx = [0.0; 3];
        matvec_t_acc(&w, 3, &[1.0, 1.0], &mut dx);
        assert_eq!(dx, [5.0, 7.0, 9.0]);
        let mut dw = [0.0; 6];
        outer_acc(&mut dw, 3, &[1.0, 2.0], &[1.0, 0.0, 3.0]);
        assert_eq!(dw, [1.0, 0.0, 3.0, 2.0, 0.0, 6.0]);
    }
}

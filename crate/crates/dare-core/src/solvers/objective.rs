//! Weighted multi-environment linear objectives.
//!
//! Parameters are packed as `vec(β)` (column-major, d×k) followed by the
//! k-vector bias. Each environment contributes `w_data · mean loss` and,
//! optionally, `w_pen · λ · penalty(βᵀm_e)`.

use crate::envmodel::{Targets, Task};
use crate::matops::{Mat, Vector};

#[derive(Debug, Clone)]
pub struct EnvTerm {
    /// Transformed features, n×d.
    pub z: Mat,
    pub y: Targets,
    pub data_weight: f64,
    /// Whitened mean `Σ_e^{-1/2}μ_e` for the invariance penalty.
    pub penalty_vec: Option<Vector>,
    pub penalty_weight: f64,
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub task: Task,
    pub d: usize,
    pub k: usize,
    pub lambda: f64,
    pub fit_bias: bool,
    pub terms: Vec<EnvTerm>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Objective {
    pub fn n_params(&self) -> usize {
        self.d * self.k + self.k
    }

    pub fn unpack(&self, theta: &[f64]) -> (Mat, Vector) {
        let beta = Mat::from_column_slice(self.d, self.k, &theta[..self.d * self.k]);
        let bias = Vector::from_column_slice(&theta[self.d * self.k..]);
        (beta, bias)
    }

    pub fn pack(beta: &Mat, bias: &Vector) -> Vec<f64> {
        beta.as_slice().iter().chain(bias.iter()).copied().collect()
    }

    /// Per-environment mean data loss (no penalty, no weights).
    pub fn env_losses(&self, theta: &[f64]) -> Vec<f64> {
        let (beta, bias) = self.unpack(theta);
        self.terms
            .iter()
            .map(|t| self.data_term(t, &beta, &bias, None))
            .collect()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.value_grad(theta).0
    }

    pub fn value_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (beta, bias) = self.unpack(theta);
        let mut gb = Mat::zeros(self.d, self.k);
        let mut gc = Vector::zeros(self.k);
        let mut total = 0.0;
        for t in &self.terms {
            if t.data_weight != 0.0 {
                let mut tb = Mat::zeros(self.d, self.k);
                let mut tc = Vector::zeros(self.k);
                let v = self.data_term(t, &beta, &bias, Some((&mut tb, &mut tc)));
                total += t.data_weight * v;
                gb += tb * t.data_weight;
                gc += tc * t.data_weight;
            }
            if let Some(m) = &t.penalty_vec {
                let w = t.penalty_weight * self.lambda;
                if w != 0.0 {
                    let (v, gt) = self.penalty(&(beta.transpose() * m));
                    total += w * v;
                    gb += m * gt.transpose() * w;
                }
            }
        }
        if !self.fit_bias {
            gc.fill(0.0);
        }
        (total, Self::pack(&gb, &gc))
    }

    /// Penalty and its gradient with respect to the k-vector `t = βᵀm`.
    fn penalty(&self, t: &Vector) -> (f64, Vector) {
        match self.task {
            Task::Regress => (t[0] * t[0], t * 2.0),
            Task::Classify => {
                // cross-entropy between softmax(t) and the uniform distribution
                let k = self.k as f64;
                let lse = log_sum_exp(t.as_slice());
                let v = lse - t.sum() / k;
                let g = t.map(|ti| (ti - lse).exp() - 1.0 / k);
                (v, g)
            }
        }
    }

    fn data_term(
        &self,
        t: &EnvTerm,
        beta: &Mat,
        bias: &Vector,
        grad: Option<(&mut Mat, &mut Vector)>,
    ) -> f64 {
        let n = t.z.nrows();
        let nf = n as f64;
        let mut s = &t.z * beta;
        for c in 0..self.k {
            s.column_mut(c).add_scalar_mut(bias[c]);
        }
        let mut loss = 0.0;
        // s becomes the residual dL/ds (unscaled) in place
        match &t.y {
            Targets::Real(y) => {
                for i in 0..n {
                    let r = s[(i, 0)] - y[i];
                    loss += r * r;
                    s[(i, 0)] = 2.0 * r;
                }
            }
            Targets::Classes { labels, .. } => {
                let mut row = vec![0.0; self.k];
                for i in 0..n {
                    for c in 0..self.k {
                        row[c] = s[(i, c)];
                    }
                    let lse = log_sum_exp(&row);
                    let yi = labels[i];
                    loss += lse - row[yi];
                    for c in 0..self.k {
                        s[(i, c)] = (row[c] - lse).exp() - if c == yi { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        if let Some((gb, gc)) = grad {
            *gb = t.z.tr_mul(&s) / nf;
            for c in 0..self.k {
                gc[c] = s.column(c).sum() / nf;
            }
        }
        loss / nf
    }
}

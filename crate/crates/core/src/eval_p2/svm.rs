//! Binary C-SVM with a polynomial kernel, trained by sequential minimal
//! optimization using second-order working-set selection.

use serde::{Deserialize, Serialize};

/// `K(u, v) = (gamma <u, v> + coef0)^degree`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyKernel {
    pub degree: u32,
    pub gamma: f64,
    pub coef0: f64,
}

impl PolyKernel {
    #[inline]
    pub fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        (self.gamma * dot + self.coef0).powi(self.degree as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoParams {
    pub c: f64,
    /// Stop once the maximal KKT violation drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tolerance: 1e-3,
            max_iterations: 1_000_000,
        }
    }
}

/// Trained decision function `f(x) = Σ coef_i K(sv_i, x) + bias`,
/// where `coef_i = alpha_i y_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolySvm {
    pub kernel: PolyKernel,
    pub support_vectors: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

const TAU: f64 = 1e-12;

impl PolySvm {
    /// `labels[i] == true` marks the positive class. Both classes must be present.
    pub fn train(x: &[Vec<f64>], labels: &[bool], kernel: PolyKernel, params: &SmoParams) -> Self {
        let n = x.len();
        assert_eq!(n, labels.len());
        let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let c = params.c;

        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = kernel.eval(&x[i], &x[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];

        let mut alpha = vec![0.0; n];
        // Gradient of ½αᵀQα − eᵀα.
        let mut grad = vec![-1.0; n];
        let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
        let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

        let mut iterations = 0;
        let mut converged = false;
        while iterations < params.max_iterations {
            // i: maximal violator in I_up.
            let mut gmax = f64::NEG_INFINITY;
            let mut i_sel = None;
            for t in 0..n {
                if in_up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                    if -y[t] * grad[t] > gmax || i_sel.is_none() {
                        gmax = -y[t] * grad[t];
                        i_sel = Some(t);
                    }
                }
            }
            // j: second-order choice in I_low.
            let mut gmin = f64::INFINITY;
            let mut obj_min = f64::INFINITY;
            let mut j_sel = None;
            for t in 0..n {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                let yg = -y[t] * grad[t];
                gmin = gmin.min(yg);
                if let Some(i) = i_sel {
                    let b = gmax - yg;
                    if b > 0.0 {
                        let a = k[i * n + i] + k[t * n + t] - 2.0 * k[i * n + t];
                        let a = if a > 0.0 { a } else { TAU };
                        let obj = -(b * b) / a;
                        if obj < obj_min {
                            obj_min = obj;
                            j_sel = Some(t);
                        }
                    }
                }
            }
            let (Some(i), Some(j)) = (i_sel, j_sel) else {
                converged = true;
                break;
            };
            if gmax - gmin < params.tolerance {
                converged = true;
                break;
            }
            iterations += 1;

            let (old_ai, old_aj) = (alpha[i], alpha[j]);
            if y[i] != y[j] {
                let quad = (q(i, i) + q(j, j) + 2.0 * q(i, j)).max(TAU);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = (q(i, i) + q(j, j) - 2.0 * q(i, j)).max(TAU);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }

            let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
            for t in 0..n {
                grad[t] += q(t, i) * dai + q(t, j) * daj;
            }
        }

        // Bias from free vectors, or the midpoint of the feasible interval.
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum_free, mut n_free) = (0.0, 0usize);
        for t in 0..n {
            let yg = y[t] * grad[t];
            if alpha[t] >= c {
                if y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if alpha[t] <= 0.0 {
                if y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        let rho = if n_free > 0 {
            sum_free / n_free as f64
        } else {
            (ub + lb) / 2.0
        };

        let mut support_vectors = Vec::new();
        let mut coefficients = Vec::new();
        for t in 0..n {
            if alpha[t] > 0.0 {
                support_vectors.push(x[t].clone());
                coefficients.push(alpha[t] * y[t]);
            }
        }
        Self {
            kernel,
            support_vectors,
            coefficients,
            bias: -rho,
            iterations,
            converged,
        }
    }

    pub fn decision_value(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, c)| c * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision_value(x) > 0.0
    }
}

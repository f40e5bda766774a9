//! Adam with per-group moments whose rows follow the parameter rows.

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentGroup {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl MomentGroup {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// One Adam update in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - BETA1.powf(self.step as f64);
        let bc2 = 1.0 - BETA2.powf(self.step as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }

    /// Keeps the rows of width `row` where `keep` is true.
    pub fn retain_rows(&mut self, row: usize, keep: &[bool]) {
        for buf in [&mut self.m, &mut self.v] {
            let mut out = Vec::with_capacity(buf.len());
            for (i, chunk) in buf.chunks(row).enumerate() {
                if keep[i] {
                    out.extend_from_slice(chunk);
                }
            }
            *buf = out;
        }
    }

    pub fn append_zeros(&mut self, len: usize) {
        self.m.resize(self.m.len() + len, 0.0);
        self.v.resize(self.v.len() + len, 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut g = MomentGroup::zeros(2);
        let mut p = vec![1.0, -1.0];
        g.update(&mut p, &[0.5, -3.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-12);
        assert!((p[1] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_a_no_op() {
        let mut g = MomentGroup::zeros(3);
        let mut p = vec![0.3, 0.2, 0.1];
        g.update(&mut p, &[0.0; 3], 1.0);
        assert_eq!(p, vec![0.3, 0.2, 0.1]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut g = MomentGroup::zeros(1);
        let mut p = vec![5.0];
        for _ in 0..2000 {
            let grad = [2.0 * (p[0] - 2.0)];
            g.update(&mut p, &grad, 0.05);
        }
        assert!((p[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn retain_and_append_rows() {
        let mut g = MomentGroup {
            m: vec![1.0, 2.0, 3.0, 4.0],
            v: vec![5.0, 6.0, 7.0, 8.0],
            step: 3,
        };
        g.retain_rows(2, &[false, true]);
        assert_eq!(g.m, vec![3.0, 4.0]);
        g.append_zeros(2);
        assert_eq!(g.v, vec![7.0, 8.0, 0.0, 0.0]);
        assert_eq!(g.step, 3);
    }
}

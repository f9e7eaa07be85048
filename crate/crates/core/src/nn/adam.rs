use super::Parameters;

/// Adam moments for one parameter container.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas<P: Parameters>(params: &P, beta1: f64, beta2: f64, eps: f64) -> Self {
        let shapes: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// One bias-corrected Adam update (descent on `grads`).
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let g = grads.param_slices();
        let mut p = params.param_slices_mut();
        assert_eq!(p.len(), self.m.len(), "parameter container changed shape");
        for (k, ((ps, gs), (ms, vs))) in p
            .iter_mut()
            .zip(g)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .enumerate()
        {
            assert_eq!(ps.len(), ms.len(), "slice {k} changed length");
            for i in 0..ps.len() {
                let gi = gs[i];
                ms[i] = b1 * ms[i] + (1.0 - b1) * gi;
                vs[i] = b2 * vs[i] + (1.0 - b2) * gi * gi;
                let mhat = ms[i] / bc1;
                let vhat = vs[i] / bc2;
                ps[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct Flat(Vec<f64>);

    impl Parameters for Flat {
        fn param_slices(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Flat(vec![1.0, -2.0, 3.0]);
        let mut st = AdamState::new(&p);
        for _ in 0..5 {
            st.step(&mut p, &Flat(vec![0.0; 3]), 0.1);
        }
        assert_eq!(p, Flat(vec![1.0, -2.0, 3.0]));
        assert_eq!(st.t, 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Flat(vec![0.0]);
        let mut st = AdamState::new(&p);
        st.step(&mut p, &Flat(vec![1.0]), 1e-3);
        // m_hat = v_hat = 1 after bias correction
        assert!((p.0[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn identical_runs_match() {
        let run = || {
            let mut p = Flat(vec![0.5, 0.25]);
            let mut st = AdamState::new(&p);
            for k in 0..20 {
                let g = Flat(vec![(k as f64).sin(), p.0[0] - p.0[1]]);
                st.step(&mut p, &g, 0.01);
            }
            p
        };
        assert_eq!(run(), run());
    }
}

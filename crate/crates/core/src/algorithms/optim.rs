use super::hyper::Optimizer;
use super::policy::LinearSoftmaxPolicy;

/// Running state for the update rule; holds Adam moments when needed.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    rule: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(rule: Optimizer) -> Self {
        OptimizerState {
            rule,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Ascends `grad` with learning rate `lr` and bumps the policy version.
    pub fn apply(&mut self, policy: &mut LinearSoftmaxPolicy, grad: &[f64], lr: f64) {
        self.t += 1;
        match self.rule {
            Optimizer::Sgd => policy.ascend(grad, lr),
            Optimizer::Adam { beta1, beta2, eps } => {
                let n = grad.len();
                if self.m.len() != n {
                    self.m = vec![0.0; n];
                    self.v = vec![0.0; n];
                }
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                let mut step = vec![0.0; n];
                for i in 0..n {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    if self.m[i] != 0.0 {
                        step[i] = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                    }
                }
                policy.ascend(&step, lr);
            }
        }
    }
}

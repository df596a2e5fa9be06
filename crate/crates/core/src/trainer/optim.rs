use crate::autodiff::{ParamStore, Tensor};

/// Adam with staircase learning-rate decay and global-norm clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_steps: usize,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub state: AdamState,
}

/// Moment estimates and the number of updates taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: usize,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        AdamState { step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().flat_map(|g| &g.data).map(|x| x * x).sum::<f64>().sqrt()
}

impl Adam {
    pub fn new(params: &ParamStore, learning_rate: f64, decay_rate: f64, decay_steps: usize, clip_norm: f64) -> Self {
        Adam {
            learning_rate,
            decay_rate,
            decay_steps,
            clip_norm,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            state: AdamState::new(params),
        }
    }

    pub fn current_rate(&self) -> f64 {
        self.learning_rate * self.decay_rate.powi((self.state.step / self.decay_steps.max(1)) as i32)
    }

    pub fn step(&mut self, params: &mut ParamStore, mut grads: Vec<Tensor>) {
        if self.clip_norm > 0.0 {
            let norm = global_norm(&grads);
            if norm > self.clip_norm {
                let k = self.clip_norm / norm;
                grads.iter_mut().flat_map(|g| g.data.iter_mut()).for_each(|x| *x *= k);
            }
        }
        let lr = self.current_rate();
        self.state.step += 1;
        let t = self.state.step as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let (m, v, g) = (&mut self.state.m[i], &mut self.state.v[i], &grads[i]);
            let p = params.get_mut(id);
            for k in 0..p.data.len() {
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * g.data[k];
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * g.data[k] * g.data[k];
                p.data[k] -= lr * (m.data[k] / c1) / ((v.data[k] / c2).sqrt() + self.epsilon);
            }
        }
    }
}

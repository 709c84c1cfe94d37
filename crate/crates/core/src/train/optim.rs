use crate::autograd::Matrix;
use crate::model::ParamStore;

/// Adam with decoupled weight decay. Only trainable parameters that
/// received a gradient are touched.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u32,
    moments: Vec<Option<(Matrix, Matrix)>>,
}

impl AdamW {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// `grads[i]` is the gradient of parameter `i`, if any.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Matrix>]) {
        self.step += 1;
        if self.moments.len() < params.len() {
            self.moments.resize(params.len(), None);
        }
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        for (id, p) in params.iter_mut() {
            let Some(g) = grads.get(id.0).and_then(Option::as_ref) else { continue };
            if !p.trainable {
                continue;
            }
            let (m, v) = self.moments[id.0]
                .get_or_insert_with(|| (Matrix::zeros(g.dim()), Matrix::zeros(g.dim())));
            ndarray::Zip::from(&mut p.value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let update = (*m / bias1) / ((*v / bias2).sqrt() + eps) + wd * *w;
                    *w -= lr * update;
                });
        }
    }
}

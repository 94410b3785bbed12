//! Stochastic gradient descent with classical momentum and L2 weight decay:
//! v <- mu*v + g + lambda*p; p <- p - eta*v.

use crate::params::ParamStore;
use crate::real::Real;

pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, momentum: f64, weight_decay: f64) -> Sgd<T> {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: store
                .ids()
                .map(|id| vec![T::ZERO; store.value(id).len()])
                .collect(),
        }
    }

    /// One update over every parameter; missing gradients count as zero
    /// (weight decay still applies to them).
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Vec<T>>]) {
        assert_eq!(grads.len(), self.velocity.len());
        let mu = T::from_f64(self.momentum);
        let lambda = T::from_f64(self.weight_decay);
        let eta = T::from_f64(self.lr);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let vel = &mut self.velocity[i];
            let g = grads[i].as_deref();
            let mut fresh = store.value(id).to_vec();
            for (j, p) in fresh.iter_mut().enumerate() {
                let gj = g.map_or(T::ZERO, |g| g[j]);
                vel[j] = mu * vel[j] + gj + lambda * *p;
                *p = *p - eta * vel[j];
            }
            store.set_value(id, fresh);
        }
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, idx: usize, v: Vec<T>) {
        assert_eq!(self.velocity[idx].len(), v.len());
        self.velocity[idx] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use crate::rng::Prng;

    #[test]
    fn plain_step_without_momentum() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let p = store.register_value("p", &[1], vec![0.0]);
        let mut opt = Sgd::new(&store, 0.1, 0.0, 0.0);
        opt.step(&mut store, &[Some(vec![1.0])]);
        assert!((store.value(p)[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn two_momentum_steps_match_the_closed_form() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let p = store.register_value("p", &[1], vec![0.0]);
        let (eta, mu, g) = (0.1, 0.9, 2.0);
        let mut opt = Sgd::new(&store, eta, mu, 0.0);
        opt.step(&mut store, &[Some(vec![g])]);
        opt.step(&mut store, &[Some(vec![g])]);
        // v1 = g; v2 = mu g + g; p2 = -eta (v1 + v2) = -eta g (2 + mu)
        let want = -eta * g * (2.0 + mu);
        assert!((store.value(p)[0] - want).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_enters_the_velocity() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let p = store.register_value("p", &[1], vec![4.0]);
        let mut opt = Sgd::new(&store, 0.5, 0.0, 0.1);
        opt.step(&mut store, &[None]);
        // v = 0.1 * 4 = 0.4; p = 4 - 0.5*0.4 = 3.8
        assert!((store.value(p)[0] - 3.8).abs() < 1e-15);
    }

    /// 200 steps on the quadratic bowl 0.5*|p|^2 at the training defaults
    /// drive the parameters below 1e-3.
    #[test]
    fn momentum_descends_a_quadratic_bowl() {
        let mut rng = Prng::new(1);
        let mut store: ParamStore<f64> = ParamStore::new();
        let p = store.register("p", &[8], Init::TruncNormal { std: 1.0 }, &mut rng);
        let mut opt = Sgd::new(&store, 0.05, 0.9, 0.0);
        for _ in 0..200 {
            let grad = store.value(p).to_vec(); // d/dp 0.5 p^2 = p
            opt.step(&mut store, &[Some(grad)]);
        }
        let norm: f64 = store.value(p).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "norm {norm}");
    }
}

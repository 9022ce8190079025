use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mo_core::{dot, WeightVec};
use crate::numcore::{Activation, LayerShape, MlpParams};

/// Weight-conditioned vector Q-network. Input is `features ++ w`, output is
/// `|A| * d` values read as `Q(s, a, w)[i]` at index `a * d + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNet {
    pub params: MlpParams,
    feature_dim: usize,
    n_actions: usize,
    n_objectives: usize,
}

impl QNet {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        n_actions: usize,
        n_objectives: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let shape = LayerShape::mlp(
            feature_dim + n_objectives,
            hidden,
            n_actions * n_objectives,
            Activation::ReluLinear,
        )?;
        Ok(Self {
            params: MlpParams::init(shape, rng),
            feature_dim,
            n_actions,
            n_objectives,
        })
    }

    pub fn from_params(params: MlpParams, feature_dim: usize, n_actions: usize, n_objectives: usize) -> Result<Self> {
        let s = params.shape();
        if s.input_dim() != feature_dim + n_objectives {
            return Err(Error::shape(
                "q-network input",
                feature_dim + n_objectives,
                s.input_dim(),
            ));
        }
        if s.output_dim() != n_actions * n_objectives {
            return Err(Error::shape(
                "q-network output",
                n_actions * n_objectives,
                s.output_dim(),
            ));
        }
        Ok(Self {
            params,
            feature_dim,
            n_actions,
            n_objectives,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_objectives(&self) -> usize {
        self.n_objectives
    }

    pub fn input(&self, features: &[f64], w: &WeightVec) -> Result<Vec<f64>> {
        if features.len() != self.feature_dim {
            return Err(Error::shape("state features", self.feature_dim, features.len()));
        }
        if w.dim() != self.n_objectives {
            return Err(Error::shape("weight", self.n_objectives, w.dim()));
        }
        let mut x = Vec::with_capacity(self.feature_dim + self.n_objectives);
        x.extend_from_slice(features);
        x.extend_from_slice(w.as_slice());
        Ok(x)
    }

    /// Flat `|A| * d` output.
    pub fn raw(&self, features: &[f64], w: &WeightVec) -> Result<Vec<f64>> {
        self.params.forward(&self.input(features, w)?)
    }

    /// `Q(s, ., w)` as an `|A| x d` matrix.
    pub fn q_values(&self, features: &[f64], w: &WeightVec) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .raw(features, w)?
            .chunks_exact(self.n_objectives)
            .map(|c| c.to_vec())
            .collect())
    }
}

/// GPI action selection over the conditioning weights in `support` plus
/// `w` itself: `argmax_a max_{w'} Q(s, a, w') . w`. Ties go to the lowest
/// action index.
pub fn gpi_action(qnet: &QNet, features: &[f64], w: &WeightVec, support: &[WeightVec]) -> Result<usize> {
    Ok(gpi_with_raw(qnet, features, w, support)?.0)
}

/// GPI action together with the flat network output conditioned on `w`.
pub(crate) fn gpi_with_raw(
    qnet: &QNet,
    features: &[f64],
    w: &WeightVec,
    support: &[WeightVec],
) -> Result<(usize, Vec<f64>)> {
    let raw_w = qnet.raw(features, w)?;
    let mut best = scalarized(&raw_w, w, qnet.n_objectives);
    for wp in support {
        if wp == w {
            continue;
        }
        let raw = qnet.raw(features, wp)?;
        for (b, u) in best.iter_mut().zip(scalarized(&raw, w, qnet.n_objectives)) {
            if u > *b {
                *b = u;
            }
        }
    }
    Ok((argmax(&best), raw_w))
}

/// Per-action utilities of a flat Q output under `w`.
pub(crate) fn scalarized(raw: &[f64], w: &WeightVec, d: usize) -> Vec<f64> {
    raw.chunks_exact(d).map(|q| dot(q, w.as_slice())).collect()
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::MlpParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_gives_zero_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = QNet::new(4, 2, 2, &[8], &mut rng).unwrap();
        q.params = MlpParams::zeros(q.params.shape().clone());
        let m = q.q_values(&[0.1, 0.2, 0.3, 0.4], &WeightVec::pair(0.3)).unwrap();
        assert_eq!(m, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(gpi_action(&q, &[0.0; 4], &WeightVec::pair(0.5), &[]).unwrap(), 0);
    }

    #[test]
    fn q_values_deterministic_and_weight_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = QNet::new(4, 2, 2, &[16, 16], &mut rng).unwrap();
        let s = [0.3, 0.5, 1.0, 0.2];
        let a = q.q_values(&s, &WeightVec::pair(0.4)).unwrap();
        assert_eq!(a, q.q_values(&s, &WeightVec::pair(0.4)).unwrap());
        // finite difference along the simplex direction
        let h = 1e-4;
        let up = q.raw(&s, &WeightVec::pair(0.4 + h)).unwrap();
        let dn = q.raw(&s, &WeightVec::pair(0.4 - h)).unwrap();
        let sens: f64 = up.iter().zip(&dn).map(|(u, d)| ((u - d) / (2.0 * h)).abs()).sum();
        assert!(sens > 1e-6);
    }

    #[test]
    fn singleton_gpi_is_plain_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = QNet::new(3, 2, 2, &[8], &mut rng).unwrap();
        for k in 0..20 {
            let w = WeightVec::pair(k as f64 / 19.0);
            let s = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let raw = q.raw(&s, &w).unwrap();
            let plain = argmax(&scalarized(&raw, &w, 2));
            assert_eq!(gpi_action(&q, &s, &w, std::slice::from_ref(&w)).unwrap(), plain);
        }
    }
}

//! Central-finite-difference verification of analytic gradients.

use super::bundle::NetworkBundle;
use super::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Compares analytic gradients against central finite differences of
/// `loss_fn`, probing `samples_per_tensor` seeded random coordinates in each
/// tensor (all coordinates if the tensor is at most that large).
///
/// Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|); the
/// maximum over all probes is returned.
pub fn grad_check(
    loss_fn: &dyn Fn(&NetworkBundle) -> f64,
    bundle: &NetworkBundle,
    analytic: &BTreeMap<String, Tensor>,
    eps: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    for (name, grad) in analytic {
        let n = grad.len();
        let coords: Vec<usize> = if n <= samples_per_tensor {
            (0..n).collect()
        } else {
            (0..samples_per_tensor).map(|_| rng.gen_range(0..n)).collect()
        };
        for &i in &coords {
            let mut plus = bundle.clone();
            plus.params.get_mut(name).unwrap().data[i] += eps;
            let mut minus = bundle.clone();
            minus.params.get_mut(name).unwrap().data[i] -= eps;
            let numeric = (loss_fn(&plus) - loss_fn(&minus)) / (2.0 * eps);
            let a = grad.data[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::bundle::NetConfig;

    /// Quadratic in the parameters: gradients are exact up to round-off.
    #[test]
    fn quadratic_passes_tight_tolerance() {
        let cfg = NetConfig {
            hidden: 4,
            ..NetConfig::default()
        };
        let bundle = NetworkBundle::init(cfg, 1);
        let loss = |b: &NetworkBundle| -> f64 {
            b.param("fsigma.w").data.iter().map(|&x| 0.5 * x * x + 0.3 * x).sum()
        };
        let analytic = BTreeMap::from([(
            "fsigma.w".to_string(),
            Tensor::from_vec(
                &bundle.param("fsigma.w").shape,
                bundle.param("fsigma.w").data.iter().map(|&x| x + 0.3).collect(),
            ),
        )]);
        let err = grad_check(&loss, &bundle, &analytic, 1e-4, 50, 0);
        assert!(err < 1e-8, "max rel err {err}");
    }
}

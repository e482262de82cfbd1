//! Power-iteration estimate of the spectral norm of a linear operator given
//! by forward and transposed actions.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest-singular-value estimate and the number of iterations it took.
#[derive(Debug, Clone, Copy)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration on `A^T A` with a deterministic seeded start vector;
/// stops after 100 iterations or when the relative change drops below 1e-6
/// (plus a few polish steps, since the Rayleigh estimate converges
/// quadratically once the change criterion fires). For symmetric operators
/// pass the same closure twice.
pub fn est_spectral_norm<F, G>(n: usize, apply: F, apply_transposed: G, seed: u64) -> NormEstimate
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    if n == 0 {
        return NormEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::<f64>::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    let norm = v.norm();
    v /= norm;
    let mut sigma = 0.0f64;
    let mut polish_left: Option<usize> = None;
    for it in 1..=100 {
        let w = apply(&v); // ||A v|| with unit v is the Rayleigh estimate
        let wn = w.norm();
        if wn == 0.0 {
            return NormEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        let z = apply_transposed(&w);
        let zn = z.norm();
        let converged_now = it > 1 && (wn - sigma).abs() <= 1e-6 * wn;
        sigma = wn;
        if zn == 0.0 {
            return NormEstimate {
                value: sigma,
                iterations: it,
                converged: true,
            };
        }
        v = z / zn;
        match polish_left {
            Some(0) => {
                return NormEstimate {
                    value: sigma,
                    iterations: it,
                    converged: true,
                }
            }
            Some(k) => polish_left = Some(k - 1),
            None if converged_now => polish_left = Some(3),
            None => {}
        }
    }
    NormEstimate {
        value: sigma,
        iterations: 100,
        converged: polish_left.is_some(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    #[test]
    fn diagonal_operator() {
        let d = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let apply = |v: &DVector<f64>| v.component_mul(&d);
        let est = est_spectral_norm(5, apply, apply, 0);
        assert!((est.value - 5.0).abs() <= 1e-6 * 5.0, "estimate {}", est.value);
    }

    #[test]
    fn zero_operator() {
        let apply = |_: &DVector<f64>| DVector::zeros(4);
        let est = est_spectral_norm(4, apply, apply, 0);
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn random_matrix_against_svd() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::<f64>::from_fn(100, 100, |_, _| rng.random::<f64>() - 0.5);
        let mt = m.transpose();
        let est = est_spectral_norm(100, |v| &m * v, |v| &mt * v, 0);
        let mut sv = m
            .clone()
            .svd(false, false)
            .singular_values
            .as_slice()
            .to_vec();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let exact = sv[0];
        assert!(
            (est.value - exact).abs() <= 1e-4 * exact,
            "estimate {} vs exact {exact}",
            est.value
        );
    }
}

//! Dense-network substrate: affine/ReLU layers with tape-based reverse-mode
//! gradients, Adam, and a seeded random source.
//!
//! Everything is `f64`. Models expose their parameters as an ordered list of
//! flat slices through [`Parameters`]; a gradient accumulator is simply a
//! zeroed copy of the model, so the optimizer and the generic training loop
//! never need to know the concrete architecture.

mod adam;
mod dense;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use dense::{Activation, Dense, DenseNet, Tape};
pub use rng::{gaussian_sample, Rng};

pub trait Parameters {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;
}

/// Slice-level helpers available on every [`Parameters`] implementor.
pub trait ParamsExt: Parameters {
    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.params().concat()
    }

    fn set_zero(&mut self) {
        for p in self.params_mut() {
            p.fill(0.0);
        }
    }

    fn scale(&mut self, s: f64) {
        for p in self.params_mut() {
            for v in p.iter_mut() {
                *v *= s;
            }
        }
    }

    /// `self += s * other`; shapes must match.
    fn add_scaled(&mut self, other: &Self, s: f64) {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            debug_assert_eq!(dst.len(), src.len());
            for (d, v) in dst.iter_mut().zip(src) {
                *d += s * v;
            }
        }
    }

    /// Mutable access to the `index`-th scalar in flattened order.
    fn param_at_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for p in self.params_mut() {
            if index < p.len() {
                return Some(&mut p[index]);
            }
            index -= p.len();
        }
        None
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

impl<T: Parameters + ?Sized> ParamsExt for T {}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight-loop forward pass, written without any of `Dense`'s helpers.
    fn naive_forward(net: &DenseNet, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for layer in &net.layers {
            let mut next = vec![0.0; layer.out_dim()];
            for o in 0..layer.out_dim() {
                let mut acc = layer.bias()[o];
                for i in 0..layer.in_dim() {
                    acc += layer.weight(o, i) * cur[i];
                }
                next[o] = match layer.activation() {
                    Activation::Relu => {
                        if acc > 0.0 {
                            acc
                        } else {
                            0.0
                        }
                    }
                    Activation::Identity => acc,
                };
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut rng = Rng::new(2024);
        let net = DenseNet::mlp(&[2, 40, 40, 3], Activation::Identity, &mut rng);
        for _ in 0..20 {
            let x = rng.gaussian(2);
            let (y, _) = net.forward(&x).unwrap();
            let y_ref = naive_forward(&net, &x);
            for (a, b) in y.iter().zip(&y_ref) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(net.predict(&x).unwrap(), y);
        }
    }

    /// Loss = 0.5 * |y|^2 so that dL/dy = y.
    fn half_sq(net: &DenseNet, x: &[f64]) -> f64 {
        0.5 * net.predict(x).unwrap().iter().map(|v| v * v).sum::<f64>()
    }

    fn fd_check(net: &DenseNet, x: &[f64]) -> f64 {
        let (y, tape) = net.forward(x).unwrap();
        let (grads, gin) = net.backward(&tape, &y).unwrap();
        let analytic = grads.flat();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs().max(n.abs()).max(1e-6));
        for i in 0..net.num_params() {
            let mut plus = net.clone();
            *plus.param_at_mut(i).unwrap() += h;
            let mut minus = net.clone();
            *minus.param_at_mut(i).unwrap() -= h;
            let num = (half_sq(&plus, x) - half_sq(&minus, x)) / (2.0 * h);
            worst = worst.max(rel(analytic[i], num));
        }
        for j in 0..x.len() {
            let mut xp = x.to_vec();
            xp[j] += h;
            let mut xm = x.to_vec();
            xm[j] -= h;
            let num = (half_sq(net, &xp) - half_sq(net, &xm)) / (2.0 * h);
            worst = worst.max(rel(gin[j], num));
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(99);
        for sizes in [vec![3, 5, 2], vec![4, 6, 6, 3], vec![2, 40, 40, 1]] {
            let net = DenseNet::mlp(&sizes, Activation::Identity, &mut rng);
            let x = rng.gaussian(sizes[0]);
            let err = fd_check(&net, &x);
            assert!(err < 1e-4, "{sizes:?}: {err}");
        }
    }

    #[test]
    fn adam_trajectory_is_deterministic() {
        let run = || {
            let mut rng = Rng::new(3);
            let mut net = DenseNet::mlp(&[3, 8, 2], Activation::Identity, &mut rng);
            let mut opt = AdamState::new(AdamConfig::default(), &net);
            for _ in 0..25 {
                let x = rng.gaussian(3);
                let (y, tape) = net.forward(&x).unwrap();
                let (g, _) = net.backward(&tape, &y).unwrap();
                opt.step(&mut net, &g).unwrap();
            }
            net.flat()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::nn::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn random_nets_pass_gradient_check(
                seed in 0u64..10_000,
                depth in 1usize..=3,
                width in 1usize..=40,
                input in 1usize..=6,
            ) {
                let mut rng = Rng::new(seed);
                let mut sizes = vec![input];
                sizes.extend(std::iter::repeat(width).take(depth - 1));
                sizes.push(2);
                let net = DenseNet::mlp(&sizes, Activation::Identity, &mut rng);
                let x = rng.gaussian(input);
                prop_assert!(fd_check(&net, &x) < 1e-4);
            }

            #[test]
            fn relu_backward_zeroes_clipped_coordinates(seed in 0u64..10_000) {
                let mut rng = Rng::new(seed);
                let net = DenseNet::mlp(&[4, 6], Activation::Relu, &mut rng);
                let x = rng.gaussian(4);
                let (_, tape) = net.forward(&x).unwrap();
                let (g, _) = net.backward(&tape, &[1.0; 6]).unwrap();
                for (o, &pre) in tape.pre[0].iter().enumerate() {
                    if pre <= 0.0 {
                        prop_assert_eq!(g.layers[0].bias()[o], 0.0);
                    }
                }
            }
        }
    }
}

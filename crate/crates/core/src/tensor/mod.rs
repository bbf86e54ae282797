//! Minimal deterministic reverse-mode autodiff over dense rank-≤3 arrays.

pub mod conv;
mod dense;
mod graph;
mod optim;

pub use dense::{Fnv, Tensor};
pub use graph::{BatchStats, Graph, Mode, RunningStats, Var};
pub use optim::{adam_step, AdamConfig, AdamState};

#[cfg(test)]
mod tests {
    use super::*;

    fn t3(data: &[f64], shape: [usize; 3]) -> Tensor {
        Tensor::new(&shape, data.to_vec()).unwrap()
    }

    fn conv(input: Tensor, kernel: Tensor, d: usize, g: usize) -> Vec<f64> {
        let mut gr = Graph::new();
        let x = gr.constant(input).unwrap();
        let k = gr.constant(kernel).unwrap();
        let y = gr.conv1d(x, k, None, d, g).unwrap();
        gr.value(y).data().to_vec()
    }

    #[test]
    fn conv_identity_kernel() {
        let y = conv(t3(&[1., 2., 3., 4.], [1, 1, 4]), t3(&[1.], [1, 1, 1]), 1, 1);
        assert_eq!(y, vec![1., 2., 3., 4.]);
    }

    #[test]
    fn conv_difference_kernel() {
        // padded input [0,1,2,3,4,0]; windows . [1,0,-1]
        let y = conv(t3(&[1., 2., 3., 4.], [1, 1, 4]), t3(&[1., 0., -1.], [1, 1, 3]), 1, 1);
        assert_eq!(y, vec![-2., -2., -2., 3.]);
    }

    #[test]
    fn conv_dilated_even_kernel() {
        // K=2, d=2: left pad 1, right pad 1; y[t] = x[t-1] - x[t+1]
        let y = conv(t3(&[1., 1., 1., 1.], [1, 1, 4]), t3(&[1., -1.], [1, 1, 2]), 2, 1);
        assert_eq!(y, vec![-1., 0., 0., 1.]);
    }

    #[test]
    fn conv_rejects_nonfinite_input() {
        let mut gr = Graph::new();
        assert!(gr.constant(t3(&[1., f64::NAN], [1, 1, 2])).is_err());
    }

    #[test]
    fn batch_norm_constant_input_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 1, 3], 4.0)).unwrap();
        let gam = g.constant(Tensor::full(&[1], 1.0)).unwrap();
        let bet = g.constant(Tensor::zeros(&[1])).unwrap();
        let (y, stats) = g
            .batch_norm_1d(x, gam, bet, &RunningStats::new(1), Mode::Train, 1e-5)
            .unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(stats.unwrap().mean, vec![4.0]);
    }

    #[test]
    fn batch_norm_eval_identity() {
        let mut g = Graph::new();
        let x = g.constant(t3(&[0.5, -2.0, 3.0], [1, 1, 3])).unwrap();
        let gam = g.constant(Tensor::full(&[1], 1.0)).unwrap();
        let bet = g.constant(Tensor::zeros(&[1])).unwrap();
        let (y, stats) = g
            .batch_norm_1d(x, gam, bet, &RunningStats::new(1), Mode::Eval, 1e-12)
            .unwrap();
        assert!(stats.is_none());
        for (a, b) in g.value(y).data().iter().zip([0.5, -2.0, 3.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_norm_two_values_population_variance() {
        let mut g = Graph::new();
        let x = g.constant(t3(&[1., 3.], [1, 1, 2])).unwrap();
        let gam = g.constant(Tensor::full(&[1], 1.0)).unwrap();
        let bet = g.constant(Tensor::zeros(&[1])).unwrap();
        let (y, _) = g
            .batch_norm_1d(x, gam, bet, &RunningStats::new(1), Mode::Train, 1e-12)
            .unwrap();
        let d = g.value(y).data();
        assert!((d[0] + 1.0).abs() < 1e-9 && (d[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn batch_norm_eval_requires_running_stats() {
        let mut g = Graph::new();
        let x = g.constant(t3(&[1., 3.], [1, 1, 2])).unwrap();
        let gam = g.constant(Tensor::full(&[1], 1.0)).unwrap();
        let bet = g.constant(Tensor::zeros(&[1])).unwrap();
        let r = g.batch_norm_1d(x, gam, bet, &RunningStats::uninitialized(), Mode::Eval, 1e-5);
        assert!(matches!(r, Err(crate::Error::State(_))));
    }

    #[test]
    fn running_stats_momentum() {
        let mut rs = RunningStats::new(1);
        rs.update(&BatchStats { mean: vec![2.0], var: vec![3.0] }, 0.9);
        assert!((rs.mean[0] - 0.2).abs() < 1e-15);
        assert!((rs.var[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn relu_values_and_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![-1., 0., 2.])).unwrap();
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0., 0., 2.]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0., 0., 1.]);
    }

    #[test]
    fn gap_values_and_gradient() {
        let mut g = Graph::new();
        let x = g.param(t3(&[1., 2., 3., 5., 5., 5.], [1, 2, 3])).unwrap();
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[2., 5.]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn dense_cases() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1., 2.], vec![3., 4.]]).unwrap()).unwrap();
        let eye = g.constant(Tensor::from_rows(&[vec![1., 0.], vec![0., 1.]]).unwrap()).unwrap();
        let zero_b = g.constant(Tensor::zeros(&[2])).unwrap();
        let y = g.dense(x, eye, zero_b).unwrap();
        assert_eq!(g.value(y).data(), &[1., 2., 3., 4.]);

        let zw = g.constant(Tensor::zeros(&[3, 2])).unwrap();
        let b = g.constant(Tensor::from_vec(vec![7., 8., 9.])).unwrap();
        let y = g.dense(x, zw, b).unwrap();
        assert_eq!(g.value(y).data(), &[7., 8., 9., 7., 8., 9.]);

        // [[1,2],[3,4]] x [[5,6],[7,8]]^T = [[17,23],[39,53]]
        let w = g.constant(Tensor::from_rows(&[vec![5., 6.], vec![7., 8.]]).unwrap()).unwrap();
        let y = g.dense(x, w, zero_b).unwrap();
        assert_eq!(g.value(y).data(), &[17., 23., 39., 53.]);

        assert!(g.dense(x, zw, zero_b).is_err());
    }

    fn ce(logits: Vec<f64>, k: usize, target: usize) -> f64 {
        let mut g = Graph::new();
        let b = logits.len() / k;
        let z = g.constant(Tensor::new(&[b, k], logits).unwrap()).unwrap();
        let mut y = vec![0.0; b * k];
        for i in 0..b {
            y[i * k + target] = 1.0;
        }
        let l = g.softmax_cross_entropy(z, &Tensor::new(&[b, k], y).unwrap()).unwrap();
        g.value(l).item().unwrap()
    }

    #[test]
    fn cross_entropy_cases() {
        assert!((ce(vec![0.3; 4], 4, 2) - 4f64.ln()).abs() < 1e-12);
        assert!(ce(vec![1000., 0.], 2, 0) < 1e-12);
        let expect = -((2f64).exp() / (1f64.exp() + 2f64.exp())).ln();
        assert!((ce(vec![1., 2.], 2, 1) - expect).abs() < 1e-12);
        assert!((expect - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_rejects_soft_targets() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(&[1, 2])).unwrap();
        let r = g.softmax_cross_entropy(z, &Tensor::new(&[1, 2], vec![0.5, 0.5]).unwrap());
        assert!(matches!(r, Err(crate::Error::Input(_))));
    }

    #[test]
    fn cosine_cases() {
        let mut g = Graph::new();
        let e = g.constant(Tensor::from_rows(&[vec![1., 0.], vec![0., 1.]]).unwrap()).unwrap();
        let s = g.cosine_similarity_matrix(e, e, 1e-12).unwrap();
        for (v, w) in g.value(s).data().iter().zip([1., 0., 0., 1.]) {
            assert!((v - w).abs() < 1e-11);
        }

        let z = g.constant(Tensor::from_rows(&[vec![0., 0.], vec![1., 1.]]).unwrap()).unwrap();
        let s = g.cosine_similarity_matrix(z, e, 1e-12).unwrap();
        assert_eq!(&g.value(s).data()[..2], &[0., 0.]);

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let a = g.constant(Tensor::from_rows(&[vec![1., 0.], vec![h, h]]).unwrap()).unwrap();
        let s = g.cosine_similarity_matrix(a, e, 1e-12).unwrap();
        let want = [1., 0., h, h];
        for (x, w) in g.value(s).data().iter().zip(want) {
            assert!((x - w).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_sum_and_square() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1., -2., 3.])).unwrap();
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1., 1., 1.]);

        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1., -2., 3.])).unwrap();
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2., -4., 6.]);
        // second call accumulates
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4., -8., 12.]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_needs_scalar_root() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1., 2.])).unwrap();
        assert!(matches!(g.backward(x), Err(crate::Error::Usage(_))));
    }
}

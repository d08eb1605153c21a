use candle_core::{Device, Tensor, Var};
use proptest::prelude::*;
use sparsepose_models::imputer::{beta_nll_loss, beta_nll_tensor, beta_nll_term, EnsembleStats};

fn nll(m: f64, v: f64, y: f64) -> f64 {
    0.5 * v.ln() + (m - y).powi(2) / (2.0 * v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn analytic_gradients_match_finite_differences(
        m in -3.0f64..3.0, v in 0.02f64..4.0, y in -3.0f64..3.0, beta in 0.0f64..=1.0,
    ) {
        let term = beta_nll_term(m, v, y, beta).unwrap();
        // The weight is a stop-gradient constant.
        let w = v.powf(beta);
        prop_assert!((term.value - w * nll(m, v, y)).abs() < 1e-12 * (1.0 + term.value.abs()));
        let h = 1e-5;
        let fd_m = w * (nll(m + h, v, y) - nll(m - h, v, y)) / (2.0 * h);
        let fd_v = w * (nll(m, v * (1.0 + h), y) - nll(m, v * (1.0 - h), y)) / (2.0 * h * v);
        prop_assert!((term.d_mean - fd_m).abs() <= 1e-4 * fd_m.abs().max(1e-3));
        prop_assert!((term.d_var - fd_v).abs() <= 1e-4 * fd_v.abs().max(1e-3));
    }

    #[test]
    fn zero_beta_is_plain_nll(m in -3.0f64..3.0, v in 0.02f64..4.0, y in -3.0f64..3.0) {
        prop_assert!((beta_nll_term(m, v, y, 0.0).unwrap().value - nll(m, v, y)).abs() < 1e-12);
    }

    #[test]
    fn ensemble_moments_obey_the_decomposition(
        members in prop::collection::vec(prop::collection::vec((-2.0f64..2.0, 0.001f64..2.0), 12), 1..6),
    ) {
        let means: Vec<Vec<f64>> = members.iter().map(|m| m.iter().map(|p| p.0).collect()).collect();
        let vars: Vec<Vec<f64>> = members.iter().map(|m| m.iter().map(|p| p.1).collect()).collect();
        let st = EnsembleStats::combine(&means, &vars).unwrap();
        let n = members.len() as f64;
        for i in 0..12 {
            prop_assert_eq!(st.total[i], st.aleatoric[i] + st.epistemic[i]);
            let mu = means.iter().map(|v| v[i]).sum::<f64>() / n;
            let ale = vars.iter().map(|v| v[i]).sum::<f64>() / n;
            let epi = means.iter().map(|v| (v[i] - mu).powi(2)).sum::<f64>() / n;
            prop_assert!((st.mean[i] - mu).abs() < 1e-12);
            prop_assert!((st.aleatoric[i] - ale).abs() < 1e-12);
            prop_assert!((st.epistemic[i] - epi).abs() < 1e-12);
        }
        let same = EnsembleStats::combine(&vec![means[0].clone(); members.len()], &vec![vars[0].clone(); members.len()]).unwrap();
        prop_assert!(same.epistemic.iter().all(|&e| e == 0.0));
        prop_assert_eq!(&same.mean, &means[0]);
    }
}

#[test]
fn autograd_of_the_tensor_loss_matches_the_scalar_gradients() {
    let dev = Device::Cpu;
    let m = [0.3, -1.2, 2.0, 0.0, 0.7];
    let v = [0.5, 1.5, 4.0, 0.2, 0.9];
    let y = [0.0, 0.3, -1.0, -0.1, 0.7];
    for beta in [0.0, 0.5, 1.0] {
        let mv = Var::from_tensor(&Tensor::new(&m, &dev).unwrap()).unwrap();
        let vv = Var::from_tensor(&Tensor::new(&v, &dev).unwrap()).unwrap();
        let loss = beta_nll_tensor(mv.as_tensor(), vv.as_tensor(), &Tensor::new(&y, &dev).unwrap(), beta).unwrap();
        let value: f64 = loss.to_scalar().unwrap();
        assert!((value - beta_nll_loss(&m, &v, &y, beta).unwrap()).abs() < 1e-12);
        let grads = loss.backward().unwrap();
        let gm: Vec<f64> = grads.get(mv.as_tensor()).unwrap().to_vec1().unwrap();
        let gv: Vec<f64> = grads.get(vv.as_tensor()).unwrap().to_vec1().unwrap();
        for i in 0..m.len() {
            let t = beta_nll_term(m[i], v[i], y[i], beta).unwrap();
            assert!((gm[i] * 5.0 - t.d_mean).abs() < 1e-12, "β = {beta}, mean grad {i}");
            assert!((gv[i] * 5.0 - t.d_var).abs() < 1e-12, "β = {beta}, var grad {i}");
        }
    }
}

use ndarray::{Array2, ArrayView1, ArrayView2};

/// Generalised advantage estimation over a `(horizon, n_envs)` rollout.
///
/// `dones[[t, e]]` marks the transition at `t` as terminal, so its
/// successor value is not bootstrapped. `bootstrap` holds `V(s_T)` per env.
/// Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn gae(
    rewards: ArrayView2<'_, f64>,
    values: ArrayView2<'_, f64>,
    dones: ArrayView2<'_, bool>,
    bootstrap: ArrayView1<'_, f64>,
    gamma: f64,
    lam: f64,
) -> (Array2<f64>, Array2<f64>) {
    let (horizon, n) = rewards.dim();
    assert_eq!(values.dim(), (horizon, n), "values shape");
    assert_eq!(dones.dim(), (horizon, n), "dones shape");
    assert_eq!(bootstrap.len(), n, "bootstrap length");
    let mut adv = Array2::zeros((horizon, n));
    for e in 0..n {
        let mut running = 0.0;
        for t in (0..horizon).rev() {
            let next_value = if t + 1 < horizon { values[[t + 1, e]] } else { bootstrap[e] };
            let live = if dones[[t, e]] { 0.0 } else { 1.0 };
            let delta = rewards[[t, e]] + gamma * next_value * live - values[[t, e]];
            running = delta + gamma * lam * live * running;
            adv[[t, e]] = running;
        }
    }
    let returns = &adv + &values;
    (adv, returns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    #[test]
    fn undiscounted_sums() {
        let r = array![[1.0], [1.0], [1.0]];
        let v = Array2::zeros((3, 1));
        let d = Array2::from_elem((3, 1), false);
        let (adv, ret) = gae(r.view(), v.view(), d.view(), Array1::zeros(1).view(), 1.0, 1.0);
        assert_eq!(adv.column(0).to_vec(), vec![3.0, 2.0, 1.0]);
        assert_eq!(ret, adv);
    }

    #[test]
    fn zero_rewards_zero_advantages() {
        let z = Array2::zeros((4, 2));
        let d = Array2::from_elem((4, 2), false);
        let (adv, _) = gae(z.view(), z.view(), d.view(), Array1::zeros(2).view(), 0.99, 0.95);
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn terminal_ignores_bootstrap() {
        let r = array![[1.0]];
        let v = array![[0.4]];
        let d = array![[true]];
        let (adv, _) = gae(r.view(), v.view(), d.view(), array![100.0].view(), 0.99, 0.95);
        assert!((adv[[0, 0]] - 0.6).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn lambda_zero_is_td_error(
            rs in prop::collection::vec(-5.0f64..5.0, 6),
            vs in prop::collection::vec(-5.0f64..5.0, 6),
            ds in prop::collection::vec(any::<bool>(), 6),
            boot in -5.0f64..5.0,
        ) {
            let r = Array2::from_shape_vec((6, 1), rs.clone()).unwrap();
            let v = Array2::from_shape_vec((6, 1), vs.clone()).unwrap();
            let d = Array2::from_shape_vec((6, 1), ds.clone()).unwrap();
            let gamma = 0.9;
            let (adv, _) = gae(r.view(), v.view(), d.view(), array![boot].view(), gamma, 0.0);
            for t in 0..6 {
                let next = if t + 1 < 6 { vs[t + 1] } else { boot };
                let live = if ds[t] { 0.0 } else { 1.0 };
                let td = rs[t] + gamma * next * live - vs[t];
                prop_assert_eq!(adv[[t, 0]], td);
            }
        }
    }
}

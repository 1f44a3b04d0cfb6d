use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{rngs::StdRng, Rng, SeedableRng};
use tempering::losses::{
    gamma_rule, it_exp_loss, it_h_loss, it_w_loss, iw_exp_loss, sqrt_rule, ulpm_ce_loss, ulpm_loss, LpmVariant,
    PeeledFeatures, TemperatureMap, TemperatureSchedule,
};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Direct `-Σ log softmax` over every feature with logits `coef(k, j) w_jᵀ h`.
fn naive_loss(variant: LpmVariant, w: &Array2<f64>, h: &PeeledFeatures, counts: &[usize], temps: &[f64]) -> f64 {
    let kc = w.nrows();
    let coef = |k: usize, j: usize| match variant {
        LpmVariant::Vanilla => 1.0,
        LpmVariant::ItH => temps[k],
        LpmVariant::ItW => temps[j],
    };
    let mut total = 0.0;
    for k in 0..kc {
        let rows: Vec<(Vec<f64>, f64)> = match h {
            PeeledFeatures::Full(b) => b[k].rows().into_iter().map(|r| (r.to_vec(), 1.0)).collect(),
            PeeledFeatures::Collapsed(m) => vec![(m.row(k).to_vec(), counts[k] as f64)],
        };
        for (hv, mult) in rows {
            let z: Vec<f64> = (0..kc)
                .map(|j| coef(k, j) * w.row(j).iter().zip(&hv).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            total += mult * (denom.ln() - z[k]);
        }
    }
    total
}

fn instance(seed: u64, collapsed: bool) -> (Array2<f64>, PeeledFeatures, Vec<usize>, Vec<f64>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let kc = rng.random_range(2..5);
    let d = rng.random_range(2..5);
    let counts: Vec<usize> = (0..kc).map(|_| rng.random_range(1..4)).collect();
    let w = Array2::from_shape_fn((kc, d), |_| rng.random_range(-1.0..1.0));
    let h = if collapsed {
        PeeledFeatures::Collapsed(Array2::from_shape_fn((kc, d), |_| rng.random_range(-1.0..1.0)))
    } else {
        PeeledFeatures::Full(
            counts
                .iter()
                .map(|&n| Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0)))
                .collect(),
        )
    };
    let temps = (0..kc).map(|_| rng.random_range(0.2..2.0)).collect();
    (w, h, counts, temps)
}

fn fd_check(variant: LpmVariant, seed: u64, collapsed: bool) {
    let (w, h, counts, temps) = instance(seed, collapsed);
    let eval = ulpm_loss(variant, &w, &h, &counts, &temps).unwrap();
    assert!(close(eval.loss, naive_loss(variant, &w, &h, &counts, &temps), 1e-12));
    let step = 1e-5;
    let f = |w: &Array2<f64>, h: &PeeledFeatures| ulpm_loss(variant, w, h, &counts, &temps).unwrap().loss;
    for idx in 0..w.len() {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp.as_slice_mut().unwrap()[idx] += step;
        wm.as_slice_mut().unwrap()[idx] -= step;
        let fd = (f(&wp, &h) - f(&wm, &h)) / (2.0 * step);
        let an = eval.grad_w.as_slice().unwrap()[idx];
        assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "W[{idx}] fd {fd} vs {an}");
    }
    for k in 0..h.n_classes() {
        let rows = match &h {
            PeeledFeatures::Full(b) => b[k].nrows(),
            PeeledFeatures::Collapsed(_) => 1,
        };
        for i in 0..rows {
            for q in 0..h.dim() {
                let (mut hp, mut hm) = (h.clone(), h.clone());
                hp.feature_mut(k, i)[q] += step;
                hm.feature_mut(k, i)[q] -= step;
                let fd = (f(&w, &hp) - f(&w, &hm)) / (2.0 * step);
                let an = eval.grad_h.feature(k, i)[q];
                assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "H[{k},{i},{q}] fd {fd} vs {an}");
            }
        }
    }
}

#[test]
fn lpm_gradients_match_finite_differences() {
    for seed in 0..20 {
        for variant in [LpmVariant::Vanilla, LpmVariant::ItH, LpmVariant::ItW] {
            fd_check(variant, seed, false);
            fd_check(variant, seed, true);
        }
    }
}

#[test]
fn exp_loss_gradients_match_finite_differences() {
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..20 {
        let n = rng.random_range(1..8);
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let g: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let temps = TemperatureMap::new((0..3).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap();
        let weights: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..5.0)).collect();
        let it = it_exp_loss(&q, &y, &g, &temps).unwrap();
        let iw = iw_exp_loss(&q, &y, &g, &weights).unwrap();
        let direct_it: f64 = (0..n).map(|i| (-y[i] * q[i] * temps.get(g[i])).exp()).sum::<f64>() / n as f64;
        let direct_iw: f64 = (0..n).map(|i| weights[g[i]] * (-y[i] * q[i]).exp()).sum::<f64>() / n as f64;
        assert!(close(it.loss, direct_it, 1e-12) && close(iw.loss, direct_iw, 1e-12));
        for i in 0..n {
            let step = 1e-5;
            let (mut qp, mut qm) = (q.clone(), q.clone());
            qp[i] += step;
            qm[i] -= step;
            let fd_it = (it_exp_loss(&qp, &y, &g, &temps).unwrap().loss - it_exp_loss(&qm, &y, &g, &temps).unwrap().loss) / (2.0 * step);
            let fd_iw = (iw_exp_loss(&qp, &y, &g, &weights).unwrap().loss - iw_exp_loss(&qm, &y, &g, &weights).unwrap().loss) / (2.0 * step);
            assert!((fd_it - it.grad[i]).abs() <= 1e-5 * (1.0 + it.grad[i].abs()));
            assert!((fd_iw - iw.grad[i]).abs() <= 1e-5 * (1.0 + iw.grad[i].abs()));
            assert!(close(it.grad_over_loss[i], it.grad[i] / it.loss, 1e-10));
        }
    }
}

#[test]
fn exp_loss_examples() {
    let one = TemperatureMap::new(vec![0.5]).unwrap();
    let e = it_exp_loss(&[2.0], &[1.0], &[0], &one).unwrap();
    assert!(close(e.loss, (-1.0f64).exp(), 1e-15));
    assert!(close(e.grad[0], -0.5 * (-1.0f64).exp(), 1e-15));

    let temps = TemperatureMap::new(vec![0.3, 2.0]).unwrap();
    let zero = it_exp_loss(&[0.0; 4], &[1.0, -1.0, 1.0, -1.0], &[0, 1, 1, 0], &temps).unwrap();
    assert_eq!(zero.loss, 1.0);

    let q = [0.7, -1.3, 2.1];
    let y = [1.0, 1.0, -1.0];
    let g = [0, 1, 1];
    let erm_iw = iw_exp_loss(&q, &y, &g, &[1.0, 1.0]).unwrap();
    let erm_it = it_exp_loss(&q, &y, &g, &TemperatureMap::uniform(2)).unwrap();
    assert!(close(erm_iw.loss, erm_it.loss, 1e-15));
    let doubled = iw_exp_loss(&q, &y, &g, &[2.0, 2.0]).unwrap();
    assert!(close(doubled.loss, 2.0 * erm_iw.loss, 1e-15));
    for (a, b) in doubled.grad.iter().zip(&erm_iw.grad) {
        assert!(close(*a, 2.0 * b, 1e-15));
    }
    let heavy = iw_exp_loss(&q, &y, &g, &[1.0, 10.0]).unwrap();
    assert!(heavy.loss != erm_iw.loss);
    for i in 0..3 {
        assert_eq!(heavy.grad[i].signum(), erm_iw.grad[i].signum());
    }
}

#[test]
fn exp_loss_clamps_large_exponents() {
    let e = it_exp_loss(&[-100.0], &[1.0], &[0], &TemperatureMap::uniform(1)).unwrap();
    assert_eq!(e.clamped, 1);
    assert!(e.loss.is_finite());
    let tiny = it_exp_loss(&[1000.0], &[1.0], &[0], &TemperatureMap::uniform(1)).unwrap();
    assert_eq!(tiny.loss, 0.0);
    assert!(close(tiny.log_loss, -1000.0, 1e-15));
    assert!(close(tiny.grad_over_loss[0], -1.0, 1e-15));
}

#[test]
fn lpm_examples() {
    let w = Array2::zeros((3, 2));
    let h = PeeledFeatures::Full(vec![array![[1.0, 2.0]], array![[0.5, -1.0], [3.0, 0.0]], array![[0.0, 1.0]]]);
    let counts = [1, 2, 1];
    assert!(close(ulpm_ce_loss(&w, &h, &counts).unwrap().loss, 4.0 * 3f64.ln(), 1e-14));

    let c = 0.8;
    let w2 = array![[1.0, 0.0], [-1.0, 0.0]];
    let h2 = PeeledFeatures::Full(vec![array![[c, 0.0]], array![[-c, 0.0]]]);
    let l = ulpm_ce_loss(&w2, &h2, &[1, 1]).unwrap().loss;
    assert!(close(l, 2.0 * (1.0 + (-2.0 * c).exp()).ln(), 1e-14));

    let (w3, h3, counts3, _) = instance(5, false);
    let tiny = vec![1.0; counts3.len()];
    let mut t0 = tiny.clone();
    t0[0] = 1e-12;
    let it = it_h_loss(&w3, &h3, &counts3, &t0).unwrap().loss;
    let rest = naive_loss(LpmVariant::ItH, &w3, &h3, &counts3, &t0) - it;
    assert!(rest.abs() < 1e-12);
    let only0 = PeeledFeatures::Full(match &h3 {
        PeeledFeatures::Full(b) => b.iter().enumerate().map(|(k, m)| if k == 0 { m.clone() } else { m * 0.0 }).collect(),
        _ => unreachable!(),
    });
    let zero_others: f64 = counts3[1..].iter().sum::<usize>() as f64 * (counts3.len() as f64).ln();
    let class0 = it_h_loss(&w3, &only0, &counts3, &t0).unwrap().loss - zero_others;
    assert!(close(class0, counts3[0] as f64 * (counts3.len() as f64).ln(), 1e-9));
}

#[test]
fn it_w_swap_permutes_class_losses() {
    let w = array![[1.0, 0.2], [0.2, 1.0]];
    let h = PeeledFeatures::Full(vec![array![[0.9, 0.1]], array![[0.1, 0.9]]]);
    let per_class = |temps: &[f64], k: usize| {
        let masked = PeeledFeatures::Collapsed(match &h {
            PeeledFeatures::Full(b) => Array2::from_shape_fn((2, 2), |(r, c)| b[r][[0, c]]),
            _ => unreachable!(),
        });
        let mut cnt = [0usize; 2];
        cnt[k] = 1;
        naive_loss(LpmVariant::ItW, &w, &masked, &cnt, temps)
    };
    let a = [1.0, 0.3];
    let b = [0.3, 1.0];
    assert!(close(per_class(&a, 0), per_class(&b, 1), 1e-14));
    assert!(close(per_class(&a, 1), per_class(&b, 0), 1e-14));
    let la = it_w_loss(&w, &h, &[1, 1], &a).unwrap().loss;
    let lb = it_w_loss(&w, &h, &[1, 1], &b).unwrap().loss;
    assert!(close(la, lb, 1e-14));
}

#[test]
fn temperature_rule_examples() {
    assert_eq!(sqrt_rule(&[100, 100, 1, 1]).unwrap().values(), &[1.0, 1.0, 0.1, 0.1]);
    assert!(sqrt_rule(&[7, 7, 7]).unwrap().is_uniform());
    let f = sqrt_rule(&[400, 25]).unwrap();
    assert!(close(f.margin(1) / f.margin(0), 4.0, 1e-15));
    assert!(gamma_rule(&[100, 3], 0.0).unwrap().is_uniform());
    let g = gamma_rule(&[100, 1], 0.5).unwrap();
    assert!(close(g.get(1), 0.1, 1e-15) && g.get(0) == 1.0);
    assert!(close(gamma_rule(&[100, 10], 1.0).unwrap().get(1), 0.1, 1e-15));
    assert!(gamma_rule(&[100, 10], 1.5).is_err());
    assert!(sqrt_rule(&[3, 0]).is_err());
}

#[test]
fn temperature_map_text_and_schedule() {
    let t = TemperatureMap::new(vec![1.0, 0.25, 0.5]).unwrap();
    assert_eq!(TemperatureMap::from_text(&t.to_text()).unwrap(), t);
    assert!(TemperatureMap::new(vec![1.0, 0.0]).is_err());
    assert!(TemperatureMap::new(vec![f64::INFINITY]).is_err());
    let s = TemperatureSchedule::new(vec![(10, TemperatureMap::uniform(3)), (5, t.clone())]).unwrap();
    assert_eq!(s.total_steps(), 15);
    assert!(s.at(9).is_uniform());
    assert_eq!(s.at(10), &t);
    assert_eq!(s.last(), &t);
    assert!(TemperatureSchedule::new(vec![]).is_err());
    assert!(TemperatureSchedule::new(vec![(0, t)]).is_err());
}

proptest! {
    #[test]
    fn unit_temperatures_reduce_to_untempered(seed in 0u64..1000, collapsed: bool) {
        let (w, h, counts, _) = instance(seed, collapsed);
        let ones = vec![1.0; counts.len()];
        let base = ulpm_ce_loss(&w, &h, &counts).unwrap();
        for l in [it_h_loss(&w, &h, &counts, &ones).unwrap(), it_w_loss(&w, &h, &counts, &ones).unwrap()] {
            prop_assert_eq!(l.loss, base.loss);
            prop_assert_eq!(&l.grad_w, &base.grad_w);
        }
    }

    #[test]
    fn exponent_scaling_is_absorbed_by_outputs(
        q in prop::collection::vec(-3.0f64..3.0, 1..10),
        c in 0.1f64..5.0,
        f0 in 0.1f64..1.0,
        f1 in 0.1f64..1.0,
    ) {
        let n = q.len();
        let y: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let g: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let base = TemperatureMap::new(vec![f0, f1]).unwrap();
        let scaled = TemperatureMap::new(vec![c * f0, c * f1]).unwrap();
        let qc: Vec<f64> = q.iter().map(|v| v / c).collect();
        let a = it_exp_loss(&q, &y, &g, &base).unwrap().loss;
        let b = it_exp_loss(&qc, &y, &g, &scaled).unwrap().loss;
        prop_assert!(close(a, b, 1e-12));
    }

    #[test]
    fn gamma_rule_is_monotone(
        counts in prop::collection::vec(1usize..200, 2..5),
        g1 in 0.0f64..1.0,
        g2 in 0.0f64..1.0,
    ) {
        let (lo, hi) = if g1 < g2 { (g1, g2) } else { (g2, g1) };
        let a = gamma_rule(&counts, lo).unwrap();
        let b = gamma_rule(&counts, hi).unwrap();
        let max = *counts.iter().max().unwrap();
        for (g, &n) in counts.iter().enumerate() {
            prop_assert!(b.get(g) <= a.get(g));
            if n < max && hi > lo + 1e-9 {
                prop_assert!(b.get(g) < a.get(g));
            }
        }
        let s = sqrt_rule(&counts).unwrap();
        let h = gamma_rule(&counts, 0.5).unwrap();
        for g in 0..counts.len() {
            prop_assert!(close(s.get(g), h.get(g), 1e-15));
        }
    }
}

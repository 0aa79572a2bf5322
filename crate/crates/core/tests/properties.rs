use proptest::prelude::*;

use minority_core::eval::{avg_knn, spearman};
use minority_core::minority::{tweedie, DistanceSpec};
use minority_core::sampler::{guidance_with_noise, GuidanceConfig, StopGradient};
use minority_core::schedule::{perturb, NoiseSchedule, ScheduleKind};
use minority_core::score_model::{GmmModel, GmmSpec, MlpEpsModel, ScoreModel};

fn ring() -> GmmModel {
    let means = (0..6)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 6.0;
            vec![2.0 * a.cos(), 2.0 * a.sin()]
        })
        .collect();
    GmmModel::new(GmmSpec::new(vec![0.3, 0.25, 0.2, 0.1, 0.1, 0.05], means, vec![0.1; 6]).unwrap())
}

fn cosine(steps: usize) -> NoiseSchedule {
    NoiseSchedule::build(ScheduleKind::cosine_default(), steps).unwrap()
}

fn vec2() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 2)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedules_are_monotone_and_consistent(steps in 1usize..400, linear in any::<bool>(), keep in 1usize..400) {
        let kind = if linear { ScheduleKind::linear_default() } else { ScheduleKind::cosine_default() };
        let s = NoiseSchedule::build(kind, steps).unwrap();
        prop_assert_eq!(&s, &NoiseSchedule::build(kind, steps).unwrap());
        let mut prev = 1.0;
        for t in 1..=steps {
            let (a, b) = (s.alpha_bar(t), s.beta(t));
            prop_assert!(b > 0.0 && b < 1.0);
            prop_assert!(a > 0.0 && a < prev);
            prop_assert!(((1.0 - b) * prev - a).abs() <= 1e-12 * prev);
            prev = a;
        }
        let keep = keep.min(steps);
        let r = s.respace(keep).unwrap();
        prop_assert_eq!(r.steps(), keep);
        prop_assert_eq!(r.alpha_bar(keep), s.alpha_bar(steps));
        prop_assert_eq!(r.base_fingerprint(), s.base_fingerprint());
        for t in 1..=keep {
            prop_assert_eq!(r.alpha_bar(t), s.alpha_bar(r.base_timestep(t)));
        }
    }

    #[test]
    fn perturb_is_the_forward_kernel(x0 in vec2(), eps in vec2(), t in 1usize..=100) {
        let s = cosine(100);
        let a = s.alpha_bar(t);
        let xt = perturb(&x0, t, &eps, &s).unwrap();
        for i in 0..2 {
            prop_assert!((xt[i] - (a.sqrt() * x0[i] + (1.0 - a).sqrt() * eps[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn score_and_eps_agree(x in vec2(), t in 1usize..=100, seed in 0u64..4) {
        let s = cosine(100);
        let mlp = MlpEpsModel::new(2, 12, 8, seed).unwrap();
        let g = ring();
        for m in [&mlp as &dyn ScoreModel, &g] {
            let sigma = (1.0 - s.alpha_bar(t)).sqrt();
            let (e, sc) = (m.eps(&x, t, &s), m.score(&x, t, &s));
            for i in 0..2 {
                prop_assert!((sc[i] + e[i] / sigma).abs() <= 1e-12 * (1.0 + sc[i].abs()));
            }
        }
    }

    #[test]
    fn tweedie_of_unit_gaussian_is_posterior_mean(x in vec2(), t in 1usize..=100) {
        let s = cosine(100);
        let m = GmmModel::new(GmmSpec::standard_normal(2));
        // Prior N(0, I): E[x0 | x_t] = sqrt(ᾱ)·x_t.
        let x0 = tweedie(&x, t, &m, &s).unwrap();
        let r = s.alpha_bar(t).sqrt();
        for i in 0..2 {
            prop_assert!((x0[i] - r * x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn vjp_is_linear_and_matches_directional_derivative(
        x in vec2(), c1 in vec2(), c2 in vec2(), a in -2.0..2.0f64, b in -2.0..2.0f64, t in 1usize..=100,
    ) {
        let s = cosine(100);
        let mlp = MlpEpsModel::new(2, 12, 8, 5).unwrap();
        let g = ring();
        for m in [&mlp as &dyn ScoreModel, &g] {
            let comb: Vec<f64> = c1.iter().zip(&c2).map(|(p, q)| a * p + b * q).collect();
            let lhs = m.eps_vjp(&x, t, &s, &comb);
            let (v1, v2) = (m.eps_vjp(&x, t, &s, &c1), m.eps_vjp(&x, t, &s, &c2));
            for i in 0..2 {
                let want = a * v1[i] + b * v2[i];
                prop_assert!((lhs[i] - want).abs() <= 1e-9 * (1.0 + want.abs()), "{} vs {}", lhs[i], want);
            }
            // <c1, J e_i> by central differences equals the i-th entry of the pullback.
            let h = 1e-6;
            for i in 0..2 {
                let (mut p, mut q) = (x.clone(), x.clone());
                p[i] += h;
                q[i] -= h;
                let fd = (dot(&c1, &m.eps(&p, t, &s)) - dot(&c1, &m.eps(&q, t, &s))) / (2.0 * h);
                prop_assert!((fd - v1[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "{} vs {}", fd, v1[i]);
            }
        }
    }

    #[test]
    fn linf_normalisation_rescales_the_raw_gradient(x in vec2(), t in 1usize..=100, e in vec2(), sg in 0usize..3) {
        let s = cosine(100);
        let m = ring();
        let sg = [StopGradient::None, StopGradient::SgFirst, StopGradient::SgSecond][sg];
        let raw_cfg = GuidanceConfig { sg_mode: sg, normalize_linf: false, ..GuidanceConfig::default() };
        let norm_cfg = GuidanceConfig { normalize_linf: true, ..raw_cfg.clone() };
        let raw = guidance_with_noise(&x, t, &raw_cfg, &m, &s, std::slice::from_ref(&e)).unwrap();
        let unit = guidance_with_noise(&x, t, &norm_cfg, &m, &s, &[e]).unwrap();
        let linf = raw.direction.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert_eq!(raw.raw_linf, linf);
        if linf > 0.0 {
            let n = unit.direction.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            prop_assert!((n - 1.0).abs() < 1e-12);
            for i in 0..2 {
                prop_assert!((unit.direction[i] * linf - raw.direction[i]).abs() <= 1e-12 * linf);
            }
        }
    }

    #[test]
    fn squared_error_is_a_symmetric_nonnegative_distance(a in vec2(), b in vec2()) {
        let d = DistanceSpec::SquaredError;
        let want: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        prop_assert!((d.eval(&a, &b) - want).abs() < 1e-12);
        prop_assert_eq!(d.eval(&a, &b), d.eval(&b, &a));
        prop_assert_eq!(d.eval(&a, &a), 0.0);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(v in prop::collection::vec(-5.0..5.0f64, 3..40)) {
        let w: Vec<f64> = v.iter().map(|x| x.exp() * 3.0 - 1.0).collect();
        let rev: Vec<f64> = v.iter().map(|x| -x).collect();
        prop_assume!(v.iter().any(|x| *x != v[0]));
        prop_assert!((spearman(&v, &w).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((spearman(&v, &rev).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn avg_knn_ignores_reference_order(
        pts in prop::collection::vec(vec2(), 6..30), q in vec2(), k in 1usize..5, rot in 0usize..30,
    ) {
        let mut shuffled = pts.clone();
        shuffled.rotate_left(rot % pts.len());
        shuffled.reverse();
        let a = avg_knn(&q, &pts, k, None).unwrap();
        let b = avg_knn(&q, &shuffled, k, None).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}

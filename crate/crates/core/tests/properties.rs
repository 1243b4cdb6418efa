use govid::blocks::{discretize_linear, make_block, run_block, BlockSpec, Limits};
use govid::optim::{cs_run, ga_run, pso_run, CsConfig, GaConfig, PsoConfig, SearchSpace};
use govid::signals::{add_noise, read_csv, square_pulse, to_csv_string, TimeSeries};
use govid::validate::{whiteness_test, WhitenessConfig};
use proptest::prelude::*;

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn lag_settles_to_dc_gain(k in -5.0f64..5.0, t in 0.01f64..2.0, u in -2.0f64..2.0) {
        let dt = 0.001;
        let target = k * u;
        let ten = (10.0 * t / dt).ceil() as usize;
        let mut b = make_block(BlockSpec::lag(k, t), dt, 0.0).unwrap();
        let y = run_block(&mut b, &vec![u; 2 * ten]);
        // from rest the gap after 10 T is the step times e^-10
        prop_assert!((y[ten - 1] - target).abs() <= 1.01 * (-10.0f64).exp() * target.abs() + 1e-12);
        prop_assert!((y[2 * ten - 1] - target).abs() <= 1e-6 * (1.0 + target.abs()));
        let eq = discretize_linear(&BlockSpec::lag(k, t), dt).unwrap();
        prop_assert!((eq.dc_gain() - k).abs() <= 1e-12 * (1.0 + k.abs()));
    }

    #[test]
    fn lead_lag_has_unit_dc_gain(lead in 0.0f64..3.0, lag in 0.01f64..3.0) {
        let eq = discretize_linear(&BlockSpec::LeadLag { t_lead: lead, t_lag: lag }, 0.001).unwrap();
        prop_assert!((eq.dc_gain() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn saturation_output_stays_in_limits(
        lo in -2.0f64..0.0,
        width in 0.0f64..3.0,
        u in prop::collection::vec(-10.0f64..10.0, 1..200),
    ) {
        let limits = Limits::new(lo, lo + width).unwrap();
        let mut b = make_block(BlockSpec::Saturation { limits }, 0.01, lo).unwrap();
        for y in run_block(&mut b, &u) {
            prop_assert!(limits.contains(y));
        }
    }

    #[test]
    fn rate_limiter_bounds_slew(
        up in 0.1f64..5.0,
        down in 0.1f64..5.0,
        u in prop::collection::vec(-10.0f64..10.0, 2..200),
    ) {
        let dt = 0.01;
        let mut b = make_block(BlockSpec::RateLimiter { down, up }, dt, 0.0).unwrap();
        let y = run_block(&mut b, &u);
        let mut prev = 0.0;
        for v in y {
            let d = v - prev;
            prop_assert!(d <= up * dt + 1e-12 && d >= -down * dt - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn limited_integrator_stays_in_limits(
        k in 0.1f64..20.0,
        u in prop::collection::vec(-5.0f64..5.0, 1..300),
    ) {
        let limits = Limits::new(-1.0, 1.0).unwrap();
        let mut b = make_block(BlockSpec::LimitedIntegrator { k, limits }, 0.01, 0.0).unwrap();
        for y in run_block(&mut b, &u) {
            prop_assert!(limits.contains(y));
        }
    }

    #[test]
    fn csv_round_trip_is_exact(
        values in prop::collection::vec(prop::num::f64::NORMAL, 2..100),
        dt_ms in 1u32..50,
    ) {
        let dt = dt_ms as f64 * 1e-3;
        let mut ts = TimeSeries::new(dt).unwrap();
        ts.push("x", values.clone()).unwrap();
        ts.push("y", values.iter().map(|v| -v).collect()).unwrap();
        let back = read_csv(to_csv_string(&ts).as_bytes()).unwrap();
        prop_assert_eq!(back.channel("x").unwrap(), &values[..]);
        prop_assert!((back.dt() - dt).abs() < 1e-12);
    }

    #[test]
    fn whiteness_statistic_is_scale_invariant(seed in 0u64..1000, scale in 1e-3f64..1e3) {
        let e = govid::optim::normal_samples(500, seed);
        let scaled: Vec<f64> = e.iter().map(|v| v * scale).collect();
        let cfg = WhitenessConfig::default();
        let a = whiteness_test(&e, &cfg).unwrap();
        let b = whiteness_test(&scaled, &cfg).unwrap();
        prop_assert!((a.statistic - b.statistic).abs() <= 1e-9 * a.statistic.max(1.0));
    }
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn noise_hits_requested_snr(snr in 10.0f64..60.0, seed in 0u64..100) {
        let ts = square_pulse("p", 0.001, 60.0, 2.0, 0.5, 0.0, 1.0).unwrap();
        let noisy = add_noise(&ts, snr, seed).unwrap();
        let clean = ts.channel("p").unwrap();
        let e: Vec<f64> = noisy.channel("p").unwrap().iter().zip(clean).map(|(a, b)| a - b).collect();
        let measured = 10.0 * (variance(clean) / variance(&e)).log10();
        prop_assert!((measured - snr).abs() < 0.1, "measured {measured} dB");
    }

    #[test]
    fn optimizers_stay_in_bounds_and_improve(seed in 0u64..1000, dim in 1usize..6) {
        let space = SearchSpace::uniform(dim, -2.0, 3.0).unwrap();
        let f = |x: &[f64]| x.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>();
        let mut cs = CsConfig::default();
        let mut ga = GaConfig::default();
        let mut pso = PsoConfig::default();
        for run in [&mut cs.run, &mut ga.run, &mut pso.run] {
            run.seed = seed;
            run.max_generations = 20;
            run.population = 12;
            run.stop_threshold = 0.0;
            run.parallel = false;
        }
        for r in [
            cs_run(&f, &space, &cs, &[]).unwrap(),
            ga_run(&f, &space, &ga, &[]).unwrap(),
            pso_run(&f, &space, &pso, &[]).unwrap(),
        ] {
            prop_assert!(space.contains(&r.best));
            prop_assert!(r.population.iter().all(|x| space.contains(x)));
            prop_assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
            prop_assert_eq!(r.history.len(), 21);
            prop_assert_eq!(r.best_fitness, *r.history.last().unwrap());
            prop_assert_eq!(r.best_fitness, f(&r.best));
        }
    }
}

use calderon::config::{Route, RunConfig};
use calderon::forward::DnMap;
use calderon::io::{decode_dn, encode_dn};
use calderon::pipeline::boundary::taper;
use calderon::pipeline::recovery::linear_fit;
use calderon::pipeline::synthesis::window;
use calderon::pipeline::validation::loglog_slope;
use calderon::Complex64;
use faer::Mat;
use proptest::prelude::*;

proptest! {
    #[test]
    fn config_roundtrips_through_toml(seed in any::<u64>(), half in 1usize..12, lmax in 0.1f64..1.0, rings in 2usize..9, taylor in any::<bool>()) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.lambda_count = 2 * half + 1;
        cfg.lambda_max = lmax;
        cfg.slice_rings = rings;
        cfg.route = if taylor { Route::Taylor } else { Route::PerLambda };
        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn lambda_grid_is_symmetric(half in 1usize..20, lmax in 0.1f64..1.0) {
        let cfg = RunConfig { lambda_count: 2 * half + 1, lambda_max: lmax, ..RunConfig::default() };
        let l = cfg.lambdas();
        prop_assert_eq!(l.len(), 2 * half + 1);
        prop_assert_eq!(l[half], 0.0);
        for k in 0..l.len() {
            prop_assert!((l[k] + l[l.len() - 1 - k]).abs() < 1e-15);
        }
        prop_assert!((l[l.len() - 1] - lmax).abs() < 1e-15);
    }

    #[test]
    fn dn_files_roundtrip_bitwise(n in 1usize..12, seed in any::<u64>()) {
        let mut state = seed | 1;
        let mut next = move || { state ^= state << 13; state ^= state >> 7; state ^= state << 17; (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5 };
        let dn = DnMap {
            form: Mat::from_fn(n, n, |_, _| next()),
            boundary_mass: (0..n).map(|_| 0.1 + next().abs()).collect(),
            mesh_hash: format!("{seed:016x}"),
            potential_hash: "p".into(),
        };
        let bytes = encode_dn(&dn);
        let back = decode_dn(&bytes).unwrap();
        prop_assert_eq!(encode_dn(&back), bytes.clone());
        prop_assert!(decode_dn(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn linear_fit_recovers_lines(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, hs in prop::collection::btree_set(5u32..50, 2..6)) {
        let hs: Vec<f64> = hs.into_iter().map(|k| k as f64 / 100.0).collect();
        let (ia, sa) = (Complex64::new(a, c), Complex64::new(b, -a));
        let vs: Vec<Complex64> = hs.iter().map(|h| ia + sa * h).collect();
        let (i, s, misfit) = linear_fit(&hs, &vs);
        prop_assert!((i - ia).norm() < 1e-10);
        prop_assert!((s - sa).norm() < 1e-9);
        prop_assert!(misfit < 1e-10);
    }

    #[test]
    fn taper_is_a_monotone_unit_step(s in -0.5f64..1.5, t in -0.5f64..1.5) {
        let (a, b) = (taper(s), taper(t));
        prop_assert!((0.0..=1.0).contains(&a));
        if s <= t {
            prop_assert!(a >= b);
        }
        prop_assert!((taper(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn window_is_even_and_bounded(mu in -3.0f64..3.0, mu_max in 0.5f64..3.0) {
        let w = window(mu, mu_max);
        prop_assert!((0.0..=1.0).contains(&w));
        prop_assert_eq!(w, window(-mu, mu_max));
        prop_assert_eq!(window(0.0, mu_max), 1.0);
        if mu.abs() >= mu_max {
            prop_assert_eq!(w, 0.0);
        }
    }

    #[test]
    fn loglog_slope_recovers_power_laws(p in -3.0f64..3.0, c in 0.01f64..100.0) {
        let hs: [f64; 6] = [0.3, 0.2, 0.15, 0.1, 0.07, 0.05];
        let vs: Vec<f64> = hs.iter().map(|h| c * h.powf(p)).collect();
        prop_assert!((loglog_slope(&hs, &vs) - p).abs() < 1e-9);
    }
}

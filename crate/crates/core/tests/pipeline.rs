use dronenet::bundle::{hash_tree, RegionBundle};
use dronenet::config::Config;
use dronenet::designer::{build_season_cache, hourly_demand, run_design, sample_loss, site_scores};
use dronenet::environment::SeasonCode;
use dronenet::pipeline::{resolve_prior, Region};
use dronenet::posthoc::select_sites;
use dronenet::simulate::{simulate_region, SyntheticSpec};

fn small_spec(seed: u64, incidents: usize, candidates: usize, existing: usize) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        n_incidents: incidents,
        n_candidates: candidates,
        n_existing: existing,
        ..SyntheticSpec::default()
    }
}

#[test]
fn bundle_round_trip_is_identity() {
    let (bundle, _) = simulate_region(&small_spec(3, 60, 10, 3)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    bundle.write(&a).unwrap();
    let back = RegionBundle::read(&a).unwrap();
    assert_eq!(back.sites, bundle.sites);
    assert_eq!(back.incidents, bundle.incidents);
    assert_eq!(back.nfz, bundle.nfz);
    assert_eq!(back.stations, bundle.stations);
    assert_eq!(back.config, bundle.config);
    assert_eq!(back.wind.is_some(), bundle.wind.is_some());
    back.write(&b).unwrap();
    assert_eq!(hash_tree(&a).unwrap(), hash_tree(&b).unwrap());
}

// Exact posterior marginals by enumeration, thresholded the same way as the
// sampled activation frequencies.
#[test]
fn design_selection_matches_enumerated_marginals() {
    let (bundle, _) = simulate_region(&small_spec(7, 12, 4, 1)).unwrap();
    let region = Region::from_bundle(&bundle).unwrap();
    let mut cfg = Config::default();
    cfg.design.k = 3;
    cfg.design.n_iter = 6000;
    cfg.design.beta = 10.0;
    let inputs = region.inputs();
    let prior = resolve_prior(&cfg, &region.sites).unwrap();
    let scores = site_scores(&region.sites, &prior).unwrap();
    let p = region.sites.len();
    let hours: Vec<u8> = (0..24).collect();
    let run = run_design(&inputs, &cfg.design, &prior, &SeasonCode::ALL, &hours).unwrap();
    let sampled = select_sites(&run.traces, &region.site_ids(), cfg.design.burn_in, 0.5).unwrap();

    let params = cfg.design.loss_params();
    let mut exact = vec![0.0; p];
    for s in SeasonCode::ALL {
        let cache = build_season_cache(&inputs, &cfg.design, s).unwrap();
        for &h in &hours {
            let demand = hourly_demand(&inputs, &cfg.design, s, h).unwrap();
            let mut logw = Vec::new();
            let mut states = Vec::new();
            for mask in 0..1u32 << p {
                let x: Vec<bool> = (0..p).map(|j| mask >> j & 1 == 1).collect();
                let l = sample_loss(&x, &cache.scenarios, &demand, &params).unwrap();
                let lp: f64 = x.iter().zip(&scores).filter(|(on, _)| **on).map(|(_, g)| g).sum();
                logw.push(-cfg.design.beta * l + lp);
                states.push(x);
            }
            let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logw.iter().map(|w| (w - m).exp()).sum();
            for (x, w) in states.iter().zip(&logw) {
                let prob = (w - m).exp() / z;
                for j in 0..p {
                    if x[j] {
                        exact[j] += prob / 96.0;
                    }
                }
            }
        }
    }
    for j in 0..p {
        assert!((sampled.p_j[j] - exact[j]).abs() < 0.03, "site {j}: {} vs {}", sampled.p_j[j], exact[j]);
        if (exact[j] - 0.5).abs() > 0.05 {
            assert_eq!(sampled.x_star[j], exact[j] >= 0.5, "site {j}");
        }
    }
}

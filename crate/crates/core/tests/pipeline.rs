use eatrand::bound::BoundConfig;
use eatrand::device::{device_stats, random_device, DeviceFamily, QubitBlockDevice, StatsDevice};
use eatrand::eat::{certified_min_entropy, ChainRuleTerm, EatParams, TradeoffFunction};
use eatrand::protocol::{abort_decision, certify, freq_of, hoeffding_delta, markov_condition_audit, run_protocol, Restrict, Transcript};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params(n: u128, gamma: f64, beta: f64, omega_exp: f64, delta_est: f64) -> EatParams {
    EatParams { n, gamma, beta, eps_s: 1e-5, p_omega: 1e-5, omega_exp, delta_est, xi_slack: 0.0 }
}

#[test]
fn empirical_win_rate_tracks_device_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let dev = random_device(&mut rng, DeviceFamily::Generic, false);
        let stats = device_stats(&dev).unwrap();
        let p = params(40_000, 0.6, 0.3, 0.5, 0.01);
        let t = run_protocol(&mut dev.clone(), &p, 1).unwrap();
        let f = freq_of(&t, Restrict::TestOnly);
        let sigma = (0.25 / f.n as f64).sqrt();
        assert!((f.win() - stats.omega(0.3)).abs() < 5.0 * sigma, "{} vs {}", f.win(), stats.omega(0.3));
        assert!((freq_of(&t, Restrict::All).bottom() - 0.4).abs() < 0.02);
    }
}

#[test]
fn completeness_with_hoeffding_margin() {
    let n = 5_000;
    let delta = hoeffding_delta(n, 0.05);
    let p = params(n, 0.5, 0.045, 0.9, delta);
    let aborts = (0..60)
        .filter(|&s| run_protocol(&mut StatsDevice::uniform(0.9).unwrap(), &p, s).unwrap().aborted)
        .count();
    assert!(aborts <= 3, "{aborts}");
}

#[test]
fn transcripts_survive_serialisation_and_audit() {
    let p = params(3000, 0.7, 0.2, 0.9, 0.05);
    let t = run_protocol(&mut QubitBlockDevice::ideal(), &p, 9).unwrap();
    let back = Transcript::parse(&t.to_text()).unwrap();
    assert_eq!(back, t);
    assert_eq!(abort_decision(&back.params, &back.rounds), back.aborted);
    assert!(markov_condition_audit(&back).unwrap().passed());
}

#[test]
fn certification_uses_design_threshold() {
    let p = params(2000, 0.5, 0.045, 1.0, 0.05);
    let tf = TradeoffFunction::with_cutoff_deficit(0.045, 0.5, 1e-13, &BoundConfig::sweep()).unwrap();
    let a = run_protocol(&mut QubitBlockDevice::ideal(), &p, 1).unwrap();
    let b = run_protocol(&mut QubitBlockDevice::ideal(), &p, 2).unwrap();
    let ca = certify(&a, &tf, ChainRuleTerm::Conservative).unwrap();
    let cb = certify(&b, &tf, ChainRuleTerm::Conservative).unwrap();
    assert_eq!(ca.entropy, cb.entropy);
    assert_eq!(ca.entropy, certified_min_entropy(&p, &tf, ChainRuleTerm::Conservative).unwrap());
}

use proptest::prelude::*;
use pue_detect::channel_sim::{
    expected_sojourn, generate_trace, pdf, sample_sojourn, sense_slots, simulate_series,
    AttackConfig, ChannelState, HyperErlangParams, OnOffModel, SensingConfig, SojournSampler,
};
use pue_detect::rng::substream;

const SIMPLE_SENSING: SensingConfig = SensingConfig {
    t_ob: 0.01,
    t_re: 0.24,
};

fn moments(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn simple_on_sample_mean() {
    let p = OnOffModel::simple().on;
    let mut rng = substream(1, "mc");
    let draws: Vec<f64> = (0..1_000_000)
        .map(|_| sample_sojourn(&p, &mut rng).unwrap())
        .collect();
    let (mean, _) = moments(&draws);
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
}

#[test]
fn erlang_sample_variance() {
    let p = HyperErlangParams::new(vec![1.0], vec![3], vec![2.0]).unwrap();
    let sampler = SojournSampler::new(&p).unwrap();
    let mut rng = substream(2, "mc");
    let draws: Vec<f64> = (0..1_000_000).map(|_| sampler.sample(&mut rng)).collect();
    let (mean, var) = moments(&draws);
    assert!((mean - 6.0).abs() < 0.05, "mean {mean}");
    // k * theta^2
    assert!((var - 12.0).abs() < 0.5, "variance {var}");
}

#[test]
fn simple_off_density_integrates_to_one() {
    let p = OnOffModel::simple().off;
    let n = 200_000;
    let h = 100.0 / n as f64;
    let mut sum = pdf(&p, 0.0).unwrap() + pdf(&p, 100.0).unwrap();
    for i in 1..n {
        sum += pdf(&p, i as f64 * h).unwrap() * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let integral = sum * h / 3.0;
    assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
}

#[test]
fn trace_on_lengths_follow_the_model() {
    let model = OnOffModel::simple();
    let trace = generate_trace(&model, 1e5, ChannelState::Off, &mut substream(3, "trace")).unwrap();
    let on: Vec<f64> = trace
        .segments
        .iter()
        .filter(|s| s.state == ChannelState::On)
        .map(|s| s.duration)
        .collect();
    let (mean, _) = moments(&on);
    let expected = expected_sojourn(&model.on).unwrap();
    assert!((mean - expected).abs() < 0.05, "mean ON {mean}");
    assert!(trace.total_duration() >= 1e5);
}

#[test]
fn attack_mask_density_matches_probability() {
    let attack = AttackConfig {
        impulse_probability: 0.3,
    };
    let (_, series) = simulate_series(
        &OnOffModel::simple(),
        &SIMPLE_SENSING,
        &attack,
        100_000,
        4,
        "density",
    )
    .unwrap();
    let density = series
        .attack_mask
        .iter()
        .map(|&m| f64::from(m))
        .sum::<f64>()
        / series.len() as f64;
    assert!((density - 0.3).abs() < 0.01, "density {density}");
    for k in 0..series.len() {
        assert_eq!(series.bits[k], series.pu_bits[k] | series.attack_mask[k]);
    }
}

#[test]
fn simulation_is_reproducible_per_seed() {
    let attack = AttackConfig {
        impulse_probability: 0.3,
    };
    let run = |seed| {
        simulate_series(
            &OnOffModel::complex(),
            &SIMPLE_SENSING,
            &attack,
            5_000,
            seed,
            "r",
        )
        .unwrap()
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9).1.bits, run(10).1.bits);
}

#[test]
fn sensed_slots_follow_the_trace() {
    let model = OnOffModel::complex();
    let sensing = SensingConfig {
        t_ob: 0.01,
        t_re: 0.99,
    };
    let trace = generate_trace(
        &model,
        2_000.0,
        ChannelState::Off,
        &mut substream(5, "trace"),
    )
    .unwrap();
    let series = sense_slots(
        &trace,
        &sensing,
        &AttackConfig::NONE,
        1_900,
        &mut substream(5, "attack"),
    )
    .unwrap();
    // brute force: walk the segments for every slot window
    let mut edges = Vec::new();
    let mut t = 0.0;
    for seg in &trace.segments {
        edges.push((t, t + seg.duration, seg.state));
        t += seg.duration;
    }
    for k in 0..series.len() {
        let (a, b) = (
            k as f64 * sensing.slot_period(),
            k as f64 * sensing.slot_period() + sensing.t_ob,
        );
        let busy = edges
            .iter()
            .any(|&(s, e, st)| st == ChannelState::On && s < b && e > a);
        assert_eq!(series.bits[k], u8::from(busy), "slot {k}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn states_strictly_alternate(seed in any::<u64>(), horizon in 1.0f64..500.0, complex in any::<bool>()) {
        let model = if complex { OnOffModel::complex() } else { OnOffModel::simple() };
        let trace = generate_trace(&model, horizon, ChannelState::Off, &mut substream(seed, "trace")).unwrap();
        prop_assert_eq!(trace.segments[0].state, ChannelState::Off);
        for pair in trace.segments.windows(2) {
            prop_assert_eq!(pair[1].state, pair[0].state.flip());
        }
        prop_assert!(trace.segments.iter().all(|s| s.duration > 0.0));
        prop_assert!(trace.total_duration() >= horizon);
    }

    #[test]
    fn attacks_only_raise_bits(seed in any::<u64>(), p in 0.0f64..=1.0) {
        let attack = AttackConfig { impulse_probability: p };
        let (_, series) = simulate_series(&OnOffModel::simple(), &SIMPLE_SENSING, &attack, 400, seed, "p").unwrap();
        for k in 0..series.len() {
            prop_assert!(series.bits[k] >= series.pu_bits[k]);
            prop_assert_eq!(series.corrupted(k), series.attack_mask[k] == 1 && series.pu_bits[k] == 0);
        }
    }
}

use std::collections::BTreeMap;

use chrono::{Datelike, TimeZone, Timelike, Utc};
use proptest::prelude::*;

use safecast::data::{
    derive_time_features, generate_synthetic, ingest_reader, make_windows, write_csv, AuxKey,
    CsvSchema, FeatureLayout, NoiseModel, ScaleDriver, Split, SplitRatios, SyntheticSpec, Trace,
};
use safecast::Error;

fn read(text: &str) -> safecast::Result<Trace> {
    ingest_reader(text.as_bytes(), "t", &CsvSchema::default())
}

fn ramp(n: usize) -> Trace {
    Trace::new(
        "ramp",
        (0..n as i64).collect(),
        (0..n).map(|i| i as f64).collect(),
        BTreeMap::new(),
    )
    .unwrap()
}

#[test]
fn csv_three_rows() {
    let t = read("timestamp,throughput_mbps\n0,10\n1,20\n2,30\n").unwrap();
    assert_eq!(t.len(), 3);
    assert_eq!(t.timestamps(), &[0, 1, 2]);
    assert_eq!(t.throughput(), &[10.0, 20.0, 30.0]);
    assert!(t.aux().is_empty());
}

#[test]
fn csv_rows_are_sorted_and_aux_mapped() {
    let t =
        read("throughput_mbps,timestamp,elevation_deg,cloud_pct\n5,9,40,1\n7,3,41,2\n").unwrap();
    assert_eq!(t.timestamps(), &[3, 9]);
    assert_eq!(t.throughput(), &[7.0, 5.0]);
    assert_eq!(t.aux()[&AuxKey::ElevationDeg], vec![41.0, 40.0]);
    assert_eq!(t.aux()[&AuxKey::CloudPct], vec![2.0, 1.0]);
}

#[test]
fn csv_rejections() {
    assert!(matches!(
        read("timestamp,throughput_mbps\n0,10\n1,-5\n"),
        Err(Error::NegativeThroughput { value, .. }) if value == -5.0
    ));
    assert_eq!(
        read("timestamp,throughput_mbps\n7,1\n7,2\n").unwrap_err(),
        Error::NonMonotoneTimestamps(7)
    );
    assert!(
        matches!(read("timestamp,rate\n0,1\n"), Err(Error::MissingColumn(c)) if c == "throughput_mbps")
    );
    match read("timestamp,throughput_mbps\n0,1\n1,abc\n").unwrap_err() {
        Error::Parse { row, column, .. } => {
            assert_eq!(row, 2);
            assert_eq!(column, "throughput_mbps");
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn csv_round_trip() {
    let synth = generate_synthetic(&SyntheticSpec {
        length: 200,
        seed: 3,
        scale_driver: Some(ScaleDriver {
            segment_len: 20,
            low: 0.5,
            high: 2.0,
        }),
        ..SyntheticSpec::default()
    })
    .unwrap();
    let mut buf = Vec::new();
    write_csv(&synth.trace, &mut buf).unwrap();
    let back = ingest_reader(buf.as_slice(), synth.trace.name(), &CsvSchema::default()).unwrap();
    assert_eq!(back, synth.trace);
}

#[test]
fn time_feature_examples() {
    let f = derive_time_features(&[0, 16, 3661]);
    assert_eq!(f[0].as_array(), [0.0, 0.0, 0.0, 3.0]); // 1970-01-01 was a Thursday
    assert_eq!(f[1].phase15, 1.0);
    assert_eq!((f[2].minute, f[2].hour), (1.0, 1.0));
}

proptest! {
    #[test]
    fn time_features_match_calendar(ts in -2_000_000_000i64..4_000_000_000) {
        let f = derive_time_features(&[ts])[0];
        let dt = Utc.timestamp_opt(ts, 0).unwrap();
        prop_assert_eq!(f.phase15, ts.rem_euclid(15) as f64);
        prop_assert_eq!(f.minute, dt.minute() as f64);
        prop_assert_eq!(f.hour, dt.hour() as f64);
        prop_assert_eq!(f.day_of_week, dt.weekday().num_days_from_monday() as f64);
    }
}

#[test]
fn window_counts() {
    let ratios = SplitRatios::default();
    assert_eq!(make_windows(&ramp(100), 75, 15, ratios).unwrap().len(), 11);
    assert!(matches!(
        make_windows(&ramp(89), 75, 15, ratios),
        Err(Error::TraceTooShort {
            len: 89,
            needed: 90
        })
    ));

    let ds = make_windows(&ramp(1000), 75, 15, ratios).unwrap();
    let valid: Vec<usize> = (0..1000)
        .filter(|&t| t + 1 >= 75 && t + 15 < 1000)
        .collect();
    assert_eq!(ds.len(), valid.len());
    assert_eq!(ds.len(), 911);
    let train = ds.view(Split::Train).len();
    let target = 0.7 * valid.len() as f64;
    assert!(
        train == target.floor() as usize || train == target.ceil() as usize,
        "{train}"
    );
}

#[test]
fn layout_shape_and_serialization() {
    let aux = [AuxKey::ElevationDeg, AuxKey::CloudPct];
    let layout = FeatureLayout::for_window(5, &aux);
    assert_eq!(layout.len(), 5 * (1 + aux.len() + 4));
    let json = serde_json::to_string(&layout).unwrap();
    let back: FeatureLayout = serde_json::from_str(&json).unwrap();
    assert_eq!(back.names(), layout.names());
    assert_eq!(back.fingerprint(), layout.fingerprint());
    assert_ne!(
        FeatureLayout::for_window(4, &aux).fingerprint(),
        layout.fingerprint()
    );
}

fn ratios() -> impl Strategy<Value = SplitRatios> {
    (1u32..20, 1u32..20, 1u32..20).prop_map(|(a, b, c)| {
        let s = (a + b + c) as f64;
        SplitRatios {
            train: a as f64 / s,
            calibration: b as f64 / s,
            test: c as f64 / s,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn windowing_properties(len in 2usize..400, l in 1usize..30, h in 1usize..20, r in ratios()) {
        prop_assume!(len >= l + h);
        let trace = ramp(len);
        let ds = make_windows(&trace, l, h, r).unwrap();
        let n = len - l - h + 1;
        prop_assert_eq!(ds.len(), n);
        prop_assert_eq!(ds.layout().len(), l * 5);

        let spans: Vec<_> = [Split::Train, Split::Calibration, Split::Test]
            .iter()
            .map(|&s| ds.split_range(s))
            .collect();
        prop_assert_eq!(spans[0].start, 0);
        prop_assert_eq!(spans[0].end, spans[1].start);
        prop_assert_eq!(spans[1].end, spans[2].start);
        prop_assert_eq!(spans[2].end, n);
        let frac = [r.train, r.calibration, r.test];
        let mut cum = 0.0;
        for (i, s) in spans.iter().enumerate() {
            cum += frac[i];
            prop_assert!((s.end as f64 - cum * n as f64).abs() <= 1.0);
        }

        let all = ds.all();
        for i in 0..n {
            let t = ds.origins()[i];
            prop_assert_eq!(t, l - 1 + i);
            // the ramp makes every value its own index
            let y: Vec<f64> = (1..=h).map(|k| (t + k) as f64).collect();
            prop_assert_eq!(all.y(i), y.as_slice());
            let hist: Vec<f64> = (0..l).map(|k| (t + 1 - l + k) as f64).collect();
            prop_assert_eq!(&all.x(i)[..l], hist.as_slice());
        }
    }
}

#[test]
fn synthetic_constant_when_everything_off() {
    let synth = generate_synthetic(&SyntheticSpec {
        length: 500,
        diurnal_amplitude: 0.0,
        handover_drop: 0.0,
        noise_model: NoiseModel::None,
        ..SyntheticSpec::default()
    })
    .unwrap();
    assert!(synth.trace.throughput().iter().all(|&v| v == 120.0));
}

#[test]
fn synthetic_is_seeded() {
    let spec = SyntheticSpec {
        length: 1000,
        seed: 42,
        ..SyntheticSpec::default()
    };
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    assert_eq!(a.trace, b.trace);
    let c = generate_synthetic(&SyntheticSpec { seed: 43, ..spec }).unwrap();
    assert_ne!(a.trace.throughput(), c.trace.throughput());
}

fn empirical_quantile(mut v: Vec<f64>, p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[test]
fn uniform_noise_lower_quartile() {
    let a = 10.0;
    let synth = generate_synthetic(&SyntheticSpec {
        length: 100_000,
        seed: 9,
        noise_model: NoiseModel::Uniform { half_width: a },
        ..SyntheticSpec::default()
    })
    .unwrap();
    let noise: Vec<f64> = synth
        .trace
        .throughput()
        .iter()
        .zip(&synth.deterministic)
        .map(|(y, d)| y - d)
        .collect();
    let q = empirical_quantile(noise, 0.25);
    assert!((q + 0.5 * a).abs() <= 0.05 * a, "{q}");
}

#[test]
fn noise_quantile_functions_match_draws() {
    use rand::SeedableRng;
    for model in [
        NoiseModel::Uniform { half_width: 7.0 },
        NoiseModel::Gaussian { sigma: 3.0 },
        NoiseModel::Laplace { scale: 2.0 },
    ] {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..1_000_000).map(|_| model.sample(&mut rng)).collect();
        let range = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - draws.iter().copied().fold(f64::INFINITY, f64::min);
        let mut sorted = draws;
        sorted.sort_by(f64::total_cmp);
        for p in [0.05, 0.15, 0.25, 0.4, 0.5, 0.75, 0.95] {
            let emp = empirical_quantile(sorted.clone(), p);
            assert!(
                (emp - model.quantile(p)).abs() <= 0.01 * range,
                "{model:?} p={p}: {emp} vs {}",
                model.quantile(p)
            );
        }
    }
}

#[test]
fn conditional_quantile_tracks_scale_driver() {
    let synth = generate_synthetic(&SyntheticSpec {
        length: 5_000,
        seed: 2,
        noise_model: NoiseModel::Gaussian { sigma: 10.0 },
        scale_driver: Some(ScaleDriver {
            segment_len: 100,
            low: 0.2,
            high: 3.0,
        }),
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cloud = &synth.trace.aux()[&AuxKey::CloudPct];
    for i in (0..5_000).step_by(97) {
        let scale = 0.2 + 2.8 * cloud[i] / 100.0;
        assert!((synth.noise_scale[i] - scale).abs() < 1e-12);
        let q = synth.conditional_quantile(i, 0.25);
        let expected = (synth.deterministic[i] + scale * model_q(0.25)).max(0.0);
        assert!((q - expected).abs() < 1e-9);
    }
}

fn model_q(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 10.0).unwrap().inverse_cdf(p)
}

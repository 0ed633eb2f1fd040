//! Monte-Carlo checks of the trace generator against its own link model.

use std::collections::BTreeMap;

use mcsprob::channelsim::{generate_trace, simulate, sinr_to_bler, ChannelSimConfig};

fn ten_minutes(seed: u64) -> ChannelSimConfig {
    ChannelSimConfig {
        duration_s: 600.0,
        seed,
        ..ChannelSimConfig::default()
    }
}

#[test]
fn ten_minute_trace_hits_bler_target() {
    for seed in [1, 2] {
        let s = generate_trace(&ten_minutes(seed)).unwrap().summary();
        assert_eq!(s.dl_slots, 960_000);
        assert!(
            (s.bler - 0.10).abs() <= 0.04,
            "seed {seed}: BLER {}",
            s.bler
        );
    }
}

#[test]
fn crc_outcomes_follow_the_bler_curve() {
    let trace = simulate(&ten_minutes(3)).unwrap();
    // (mcs, 1 dB bucket) -> (samples, passes, expected passes)
    let mut buckets: BTreeMap<(u8, i64), (usize, usize, f64)> = BTreeMap::new();
    for t in &trace.truth {
        let e = buckets
            .entry((t.mcs, t.sinr_db.floor() as i64))
            .or_default();
        e.0 += 1;
        e.1 += usize::from(t.crc_pass);
        e.2 += 1.0 - sinr_to_bler(t.sinr_db, usize::from(t.mcs)).unwrap();
    }
    let mut checked = 0;
    for ((mcs, b), (n, pass, expected)) in buckets {
        if n < 1000 {
            continue;
        }
        let (emp, exp) = (pass as f64 / n as f64, expected / n as f64);
        assert!(
            (emp - exp).abs() <= 0.05,
            "mcs {mcs} bucket {b} dB: {emp:.3} vs {exp:.3} over {n}"
        );
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} buckets with 1000 samples");
}

//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use proptest::collection::{btree_map, vec};
use proptest::option;
use proptest::prelude::*;
use synmirror::model::*;

pub fn system() -> SystemInfo {
    SystemInfo {
        core_count: 4,
        max_cpu_freq: 3_000_000_000,
        total_memory: 8 << 30,
        host_id: "test-host".into(),
        os_id: "Linux test".into(),
    }
}

fn flags() -> impl Strategy<Value = SampleFlags> {
    (0u8..8).prop_map(SampleFlags::from_bits)
}

fn time() -> impl Strategy<Value = f64> {
    prop_oneof![0.0..1e6f64, (0u64..100_000).prop_map(|n| n as f64 * 0.1)]
}

fn cpu_sample() -> impl Strategy<Value = CpuSample> {
    (time(), any::<u64>(), any::<u64>(), any::<u64>(), any::<u64>(), flags()).prop_map(|(t, i, c, f, b, flags)| {
        CpuSample { t, instructions: i, cycles_used: c, cycles_stalled_frontend: f, cycles_stalled_backend: b, flags }
    })
}

fn mem_sample() -> impl Strategy<Value = MemSample> {
    (time(), any::<u64>(), any::<u64>(), any::<u64>(), any::<u64>(), flags())
        .prop_map(|(t, rss, peak, allocated, freed, flags)| MemSample { t, rss, peak, allocated, freed, flags })
}

fn storage_sample() -> impl Strategy<Value = StorageSample> {
    (time(), any::<u64>(), any::<u64>(), flags()).prop_map(|(t, bytes_read, bytes_written, flags)| StorageSample {
        t,
        bytes_read,
        bytes_written,
        flags,
    })
}

fn text() -> impl Strategy<Value = String> {
    "[ -~]{0,24}|[a-zA-Zé✓\\t\"\\\\]{0,12}"
}

fn totals() -> impl Strategy<Value = Totals> {
    proptest::array::uniform10(any::<u64>()).prop_map(|v| Totals {
        cycles_used: v[0],
        instructions: v[1],
        cycles_stalled_frontend: v[2],
        cycles_stalled_backend: v[3],
        bytes_read: v[4],
        bytes_written: v[5],
        mem_allocated: v[6],
        mem_freed: v[7],
        rss_max: v[8],
        peak: v[9],
    })
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |f| f.is_finite()), 0.0..1.0f64]
}

/// Arbitrary (not necessarily self-consistent) profiles for round-trip tests.
pub fn arb_profile() -> impl Strategy<Value = Profile> {
    let header = (
        "[a-z/]{1,12}( [a-z0-9=.-]{1,8}){0,3}",
        btree_map("[a-z]{1,6}", text(), 0..4),
        (1u32..256, any::<u64>(), any::<u64>(), text(), text()),
        prop_oneof![Just(0.1f64), Just(1.0), 0.1..10.0f64],
        (finite(), finite(), any::<bool>()),
    );
    let body = (
        vec(cpu_sample(), 0..40),
        vec(mem_sample(), 0..40),
        vec(storage_sample(), 0..40),
        totals(),
        (finite(), any::<bool>(), finite(), option::of(any::<u64>()), option::of(finite())),
        (option::of(any::<i32>()), option::of(1i32..64), finite(), finite(), any::<u64>()),
        vec(text(), 0..3),
    );
    (header, body).prop_map(|(h, b)| {
        let (command, tags, (cores, freq, mem, host, os), period, (start, runtime, estimated)) = h;
        let (cpu, memv, storage, totals, derived, exit, notes) = b;
        Profile {
            schema_version: SCHEMA_VERSION,
            command,
            tags,
            system: SystemInfo { core_count: cores, max_cpu_freq: freq, total_memory: mem, host_id: host, os_id: os },
            sample_period: period,
            start_time: start,
            runtime,
            counter_source: if estimated { CounterSource::Estimated } else { CounterSource::Hardware },
            exit: ExitInfo { code: exit.0, signal: exit.1, user_time: exit.2, system_time: exit.3, max_rss: exit.4 },
            notes,
            series: Series { cpu, mem: memv, storage },
            totals,
            derived: DerivedMetrics {
                efficiency: derived.0,
                efficiency_degenerate: derived.1,
                utilization: derived.2,
                flops: derived.3,
                flop_rate: derived.4,
            },
        }
    })
}

/// A consistent profile with `n` cpu samples at a 0.1 s period.
pub fn synthetic_profile(command: &str, n: usize) -> Profile {
    let mut p = Profile::new(command, Tags::new(), system(), 0.1);
    p.series.cpu = (0..n)
        .map(|i| CpuSample { t: (i + 1) as f64 * 0.1, instructions: 10, cycles_used: 5, ..Default::default() })
        .collect();
    p.runtime = n as f64 * 0.1;
    p.recompute();
    p
}

pub fn tags(pairs: &[(&str, &str)]) -> Tags {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#![allow(dead_code)]

use std::sync::Arc;

use carbonflex::learning::LearningConfig;
use carbonflex::model::{CarbonTrace, ClusterConfig, Job, JobId, QueueConfig, ScalingProfile};
use carbonflex::traces::{builtin_profiles, rate_for_utilization, sinusoidal_trace, synthesize_jobs, LengthDist, SynthSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Strictly decreasing marginals starting at 1 with `n` scales.
pub fn decreasing_marginals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut m = vec![1.0];
    for _ in 1..n {
        let last = *m.last().unwrap();
        m.push(last * rng.random_range(0.2..0.95));
    }
    m
}

pub fn random_profile(rng: &mut ChaCha8Rng, max_k: u32) -> Arc<ScalingProfile> {
    let k_min = rng.random_range(1..=max_k.min(2));
    let k_max = rng.random_range(k_min..=max_k);
    let n = (k_max - k_min + 1) as usize;
    let marginals = decreasing_marginals(rng, n);
    let net = (0..n).map(|i| if i == 0 { 0.0 } else { rng.random_range(0.0..50.0) }).collect();
    Arc::new(ScalingProfile::new("r", k_min, marginals, net).unwrap())
}

/// Single-queue cluster whose slack is set per job.
pub fn flat_cluster(max_capacity: u32) -> ClusterConfig {
    let mut c = ClusterConfig::with_capacity(max_capacity);
    c.queues = vec![QueueConfig {
        id: "all".into(),
        slack_slots: 0,
        max_length: None,
    }];
    c
}

/// Up to 3 jobs over at most 6 slots, k_max ≤ 3, every deadline inside the trace.
pub fn tiny_instance(rng: &mut ChaCha8Rng) -> (Vec<Job>, CarbonTrace, u32) {
    let horizon = rng.random_range(1..=6usize);
    let n = rng.random_range(1..=3u64);
    let mut jobs = Vec::new();
    for id in 0..n {
        let arrival = rng.random_range(0..horizon);
        let room = horizon - arrival;
        let length = rng.random_range(1..=2 * room.min(3) as u32) as f64 * 0.5;
        let slack = rng.random_range(0..=room - length.ceil() as usize);
        jobs.push(Job::new(JobId(id), arrival, length, 0, slack, random_profile(rng, 3)).unwrap());
    }
    let ci = (0..horizon).map(|_| rng.random_range(10.0..500.0)).collect();
    let total_k_max: u32 = jobs.iter().map(|j| j.profile.k_max()).sum();
    let m = rng.random_range(1..=total_k_max);
    (jobs, CarbonTrace::hourly(ci).unwrap(), m)
}

/// Up to 8 jobs arriving in the first 16 slots of a 48-slot trace.
pub fn fuzz_instance(rng: &mut ChaCha8Rng) -> (Vec<Job>, CarbonTrace, ClusterConfig) {
    let n = rng.random_range(0..=8u64);
    let jobs = (0..n)
        .map(|id| {
            let arrival = rng.random_range(0..16);
            let length = rng.random_range(1..=12u32) as f64 * 0.5;
            let slack = rng.random_range(0..=8);
            Job::new(JobId(id), arrival, length, 0, slack, random_profile(rng, 4)).unwrap()
        })
        .collect();
    let ci = (0..48).map(|_| rng.random_range(1.0..600.0)).collect();
    let m = rng.random_range(0..=10);
    (jobs, CarbonTrace::hourly(ci).unwrap(), flat_cluster(m))
}

/// One diurnal scenario: a training week and an evaluation week drawn from
/// the same generator, each followed by enough trace for every deadline
/// and the forecast horizon.
pub struct Diurnal {
    pub cluster: ClusterConfig,
    pub history_jobs: Vec<Job>,
    pub history_trace: CarbonTrace,
    pub eval_jobs: Vec<Job>,
    pub eval_trace: CarbonTrace,
    pub learning: LearningConfig,
}

pub const WEEK: usize = 168;
/// Trace slots after the arrival window: longest job plus largest slack
/// plus the forecast day, rounded up.
pub const TAIL: usize = 24 + 48 + 24 + 24;

pub fn diurnal(seed: u64, cov: f64, capacity: u32) -> Diurnal {
    let cluster = ClusterConfig::with_capacity(capacity);
    let profiles: Vec<_> = builtin_profiles().into_values().collect();
    let lengths = LengthDist::Exponential { mean: 4.0 };
    let max_length = Some(24.0);
    let rate = rate_for_utilization(0.5, capacity, &lengths, max_length, &profiles, seed).unwrap();
    let spec = |s: u64| SynthSpec {
        rate,
        slots: WEEK,
        lengths: lengths.clone(),
        max_length,
        profiles: profiles.clone(),
        seed: s,
    };
    let history_jobs = synthesize_jobs(&spec(seed * 2), &cluster).unwrap();
    let eval_jobs = synthesize_jobs(&spec(seed * 2 + 1), &cluster).unwrap();
    let trace = |s: u64| sinusoidal_trace(WEEK + TAIL, 300.0, cov, 24, 0.0, 0.05, s).unwrap();
    Diurnal {
        cluster,
        history_jobs,
        history_trace: trace(seed * 2),
        eval_jobs,
        eval_trace: trace(seed * 2 + 1),
        learning: LearningConfig {
            window_slots: WEEK,
            ..LearningConfig::default()
        },
    }
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

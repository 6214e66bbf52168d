mod common;

use std::sync::Arc;

use carbonflex::baselines::{carbon_agnostic, wait_awhile, CarbonAgnostic};
use carbonflex::learning::LearningConfig;
use carbonflex::model::{progress, CarbonTrace, Job, JobId, ScalingProfile};
use carbonflex::sim::{compare, run_learning, simulate, CompareSettings, Forecaster, PolicyKind};
use common::{diurnal, flat_cluster};
use proptest::prelude::*;

fn jobs() -> impl Strategy<Value = Vec<Job>> {
    prop::collection::vec((0usize..12, 1u32..=10, 0usize..8, 1u32..=2, 0u32..=2, 0.3f64..0.9), 0..=8).prop_map(
        |specs| {
            specs
                .into_iter()
                .enumerate()
                .map(|(i, (a, half, d, k_min, extra, decay))| {
                    let marginals: Vec<f64> = (0..=extra).map(|e| decay.powi(e as i32)).collect();
                    let n = marginals.len();
                    let p = Arc::new(ScalingProfile::new("p", k_min, marginals, vec![1.0; n]).unwrap());
                    Job::new(JobId(i as u64), a, half as f64 * 0.5, 0, d, p).unwrap()
                })
                .collect()
        },
    )
}

fn trace() -> impl Strategy<Value = CarbonTrace> {
    prop::collection::vec(1.0f64..600.0, 60).prop_map(|v| CarbonTrace::hourly(v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_policy_stays_under_capacity(jobs in jobs(), trace in trace(), m in 1u32..=8) {
        let cluster = flat_cluster(m);
        let open = flat_cluster(jobs.iter().map(|j| j.profile.k_max()).sum::<u32>().max(1));
        let learning = LearningConfig { window_slots: 12, ..LearningConfig::default() };
        let kb = run_learning(&jobs, &trace, &open, &learning).ok().map(|r| r.0);
        let mut policies = vec![PolicyKind::CarbonAgnostic, PolicyKind::Gaia, PolicyKind::WaitAwhile, PolicyKind::CarbonScaler];
        if kb.is_some() {
            policies.push(PolicyKind::CarbonFlex);
        }
        let settings = CompareSettings { mean_lengths: vec![3.0], ..CompareSettings::default() };
        let outcome = compare(&jobs, &trace, &cluster, kb.as_ref(), &policies, &settings).unwrap();
        prop_assert_eq!(outcome.policies.len(), policies.len());
        for r in &outcome.policies {
            prop_assert!(r.schedule.capacity_violation(m).is_none(), "{}", r.policy);
            prop_assert_eq!(r.completed + r.unfinished, jobs.len());
            for j in &jobs {
                if let Some(alloc) = r.schedule.job(j.id) {
                    prop_assert!(alloc.keys().all(|&t| t >= j.arrival));
                }
            }
            // log energy reproduces the total
            let from_log: f64 = r.log.iter().map(|row| row.energy_kwh * row.ci).sum();
            prop_assert!((from_log - r.total_carbon_g).abs() <= 1e-9 * r.total_carbon_g.max(1.0));
            prop_assert!(r.mean_utilization <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn completed_jobs_have_done_their_work(jobs in jobs(), trace in trace(), m in 1u32..=8) {
        let cluster = flat_cluster(m);
        let r = simulate(&mut CarbonAgnostic, &jobs, &trace, &cluster, &Forecaster::default()).unwrap();
        let done = jobs.iter().filter(|j| progress(j, &r.schedule) >= 1.0 - 1e-9).count();
        prop_assert_eq!(done, r.completed);
    }

    #[test]
    fn wait_awhile_is_agnostic_under_flat_carbon(jobs in jobs(), ci in 1.0f64..600.0, m in 1u32..=8) {
        let trace = CarbonTrace::hourly(vec![ci; 60]).unwrap();
        let cluster = flat_cluster(m);
        prop_assert_eq!(wait_awhile(&jobs, &trace, &cluster).unwrap(), carbon_agnostic(&jobs, &trace, &cluster).unwrap());
    }

    #[test]
    fn ample_capacity_agnostic_meets_every_deadline(jobs in jobs(), trace in trace()) {
        let cluster = flat_cluster(jobs.iter().map(|j| j.profile.k_min()).sum::<u32>().max(1));
        let r = simulate(&mut CarbonAgnostic, &jobs, &trace, &cluster, &Forecaster::default()).unwrap();
        prop_assert_eq!(r.violation_rate, 0.0);
    }
}

#[test]
fn compare_is_deterministic_and_parallel_safe() {
    let d = diurnal(11, 0.3, 20);
    let kb = run_learning(&d.history_jobs, &d.history_trace, &d.cluster, &d.learning).unwrap().0;
    let settings = CompareSettings {
        forecaster: Forecaster {
            noise_sigma: 0.1,
            seed: 3,
        },
        mean_lengths: kb.mean_lengths.clone(),
        max_extension_rounds: 48,
        seed: 3,
        ..CompareSettings::default()
    };
    let run = || compare(&d.eval_jobs, &d.eval_trace, &d.cluster, Some(&kb), &PolicyKind::ALL, &settings).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.to_json(), b.to_json());
    let names: Vec<&str> = a.policies.iter().map(|r| r.policy.as_str()).collect();
    assert_eq!(names, PolicyKind::ALL.map(|p| p.as_str()));
    assert_eq!(a.report(PolicyKind::CarbonAgnostic).unwrap().savings_pct, 0.0);
}

#[test]
fn agnostic_row_is_dropped_unless_requested() {
    let d = diurnal(12, 0.3, 20);
    let settings = CompareSettings::default();
    let only = compare(&d.eval_jobs, &d.eval_trace, &d.cluster, None, &[PolicyKind::Gaia], &settings).unwrap();
    assert_eq!(only.policies.len(), 1);
    let agnostic =
        compare(&d.eval_jobs, &d.eval_trace, &d.cluster, None, &[PolicyKind::CarbonAgnostic], &settings).unwrap();
    assert_eq!(agnostic.policies.len(), 1);
    assert_eq!(agnostic.policies[0].savings_pct, 0.0);
    assert!(matches!(
        compare(&d.eval_jobs, &d.eval_trace, &d.cluster, None, &[PolicyKind::CarbonFlex], &settings),
        Err(carbonflex::Error::EmptyKnowledgeBase)
    ));
}

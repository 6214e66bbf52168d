//! Online decisions: slot-level capacity and threshold provisioning from the
//! knowledge base, Δt-level marginal-throughput scheduling, the force-run
//! guard, and recent delay-violation tracking.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::learning::{featurize_with_forecast, KnowledgeBase, SystemState, RANK_HORIZON};
use crate::model::{Job, JobId};
use crate::sim::{Policy, SlotPlan, View};

/// How matched distances are aggregated before comparison with `delta`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceAggregate {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProvisioningParams {
    /// Neighbours consulted per decision.
    pub kk: usize,
    /// Distance (normalised units) beyond which matches are untrusted.
    pub delta: f64,
    /// Tolerated fraction of recent jobs violating their deadline.
    pub epsilon: f64,
    pub violation_window_slots: usize,
    pub distance: DistanceAggregate,
}

impl Default for ProvisioningParams {
    fn default() -> Self {
        ProvisioningParams {
            kk: 5,
            delta: 0.5,
            epsilon: 0.1,
            violation_window_slots: 1,
            distance: DistanceAggregate::Mean,
        }
    }
}

impl ProvisioningParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.kk == 0 {
            return Err("kk must be at least 1".into());
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(format!("delta {} must be non-negative", self.delta));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(format!("epsilon {} must lie in [0, 1]", self.epsilon));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProvisionMode {
    Mean,
    MaxFallback,
    FullFallback,
}

impl ProvisionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ProvisionMode::Mean => "mean",
            ProvisionMode::MaxFallback => "max-fallback",
            ProvisionMode::FullFallback => "full-fallback",
        }
    }
}

impl fmt::Display for ProvisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProvisionDecision {
    pub capacity: u32,
    pub threshold: f64,
    pub mode: ProvisionMode,
    pub matched_distances: Vec<f64>,
}

/// Capacity and threshold for the coming slot.
///
/// Capacity is the rounded mean of the matched cases' capacities, their
/// maximum when recent violations exceed `epsilon`, or the whole cluster when
/// violations are high and the matches are also far away. The threshold is
/// taken from the single nearest case.
pub fn provision(
    state: &SystemState,
    kb: &KnowledgeBase,
    params: &ProvisioningParams,
    violation_rate: f64,
    max_capacity: u32,
) -> ProvisionDecision {
    let full = |distances| ProvisionDecision {
        capacity: max_capacity,
        threshold: 0.0,
        mode: ProvisionMode::FullFallback,
        matched_distances: distances,
    };
    let matches = match kb.query(state, params.kk.max(1)) {
        Ok(m) if !m.is_empty() => m,
        _ => return full(Vec::new()),
    };
    let distances: Vec<f64> = matches.iter().map(|(_, d)| *d).collect();
    let spread = match params.distance {
        DistanceAggregate::Mean => distances.iter().sum::<f64>() / distances.len() as f64,
        DistanceAggregate::Max => distances.iter().copied().fold(0.0, f64::max),
    };
    let violating = violation_rate > params.epsilon;
    if violating && spread > params.delta {
        return full(distances);
    }
    let threshold = matches[0].0.threshold;
    let (capacity, mode) = if violating {
        let max = matches.iter().map(|(c, _)| c.capacity).max().unwrap_or(0);
        (max, ProvisionMode::MaxFallback)
    } else {
        let n = matches.len() as u64;
        let sum: u64 = matches.iter().map(|(c, _)| c.capacity as u64).sum();
        // mean rounded half-up, in integers
        (((2 * sum + n) / (2 * n)) as u32, ProvisionMode::Mean)
    };
    ProvisionDecision {
        capacity: capacity.min(max_capacity),
        threshold,
        mode,
        matched_distances: distances,
    }
}

/// Marginal-throughput allocation of `capacity` servers among `jobs` at slot
/// time `t`, admitting scale `k` only if `p(k) >= rho` (at `k_min`) or
/// `p(k) > rho` (above `k_min`).
pub fn schedule(t: f64, jobs: &[&Job], capacity: u32, rho: f64) -> BTreeMap<JobId, u32> {
    let mut alloc = BTreeMap::new();
    let mut used = 0;
    fill(t, jobs, capacity, rho, &mut alloc, &mut used);
    alloc
}

fn fill(t: f64, jobs: &[&Job], capacity: u32, rho: f64, alloc: &mut BTreeMap<JobId, u32>, used: &mut u32) {
    struct Candidate<'a> {
        p: f64,
        slack: f64,
        job: &'a Job,
        k: u32,
    }
    let mut candidates = Vec::new();
    for job in jobs {
        let k_min = job.profile.k_min();
        let slack = (job.arrival + job.slack) as f64 - t;
        for (i, &p) in job.profile.marginals().iter().enumerate() {
            let k = k_min + i as u32;
            let admitted = if i == 0 { p >= rho } else { p > rho };
            if admitted {
                candidates.push(Candidate { p, slack, job, k });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.p.total_cmp(&a.p)
            .then(a.slack.total_cmp(&b.slack))
            .then(a.job.id.cmp(&b.job.id))
            .then(a.k.cmp(&b.k))
    });
    for c in candidates {
        let cur = alloc.get(&c.job.id).copied().unwrap_or(0);
        let next = if cur == 0 { c.job.profile.k_min() } else { cur + 1 };
        if c.k != next {
            continue;
        }
        let extra = c.k - cur;
        if *used + extra > capacity {
            continue;
        }
        *used += extra;
        alloc.insert(c.job.id, c.k);
    }
}

/// A job as seen by the guard: its remaining work in slots at `k_min`.
#[derive(Clone, Copy, Debug)]
pub struct Progress<'a> {
    pub job: &'a Job,
    pub remaining_work: f64,
}

/// Jobs that can no longer wait: remaining work at `k_min` is at least the
/// time left before the deadline, less `lookahead` slots.
pub fn force_run_guard(now: f64, jobs: &[Progress<'_>], lookahead: f64) -> BTreeSet<JobId> {
    jobs.iter()
        .filter(|p| p.remaining_work >= p.job.deadline() as f64 - now - lookahead - 1e-9)
        .map(|p| p.job.id)
        .collect()
}

/// Forced jobs at `k_min` first (earliest deadline, then id), then the
/// marginal-throughput schedule over everything with the remaining capacity.
/// Effective capacity is `max(capacity, Σ forced k_min)` clamped to the
/// cluster size.
pub fn schedule_with_guard(
    t: f64,
    jobs: &[&Job],
    forced: &BTreeSet<JobId>,
    capacity: u32,
    rho: f64,
    max_capacity: u32,
) -> (BTreeMap<JobId, u32>, u32) {
    let mut forced_jobs: Vec<&Job> = jobs.iter().copied().filter(|j| forced.contains(&j.id)).collect();
    forced_jobs.sort_by_key(|j| (j.deadline(), j.id));
    let forced_need: u32 = forced_jobs.iter().map(|j| j.profile.k_min()).sum();
    let effective = capacity.max(forced_need).min(max_capacity);
    let mut alloc = BTreeMap::new();
    let mut used = 0;
    for j in &forced_jobs {
        let k = j.profile.k_min();
        if used + k <= effective {
            used += k;
            alloc.insert(j.id, k);
        }
    }
    fill(t, jobs, effective, rho, &mut alloc, &mut used);
    (alloc, effective)
}

/// Share of recent jobs that missed their deadline: late completions plus
/// jobs that became overdue while still running, within a sliding window.
/// A job already reported overdue is not counted again when it completes.
#[derive(Clone, Debug)]
pub struct ViolationTracker {
    window: f64,
    events: VecDeque<(f64, bool)>,
    overdue: BTreeSet<JobId>,
}

impl ViolationTracker {
    pub fn new(window_slots: usize) -> Self {
        ViolationTracker {
            window: window_slots as f64,
            events: VecDeque::new(),
            overdue: BTreeSet::new(),
        }
    }

    /// Record a completion at `finish` (slots); returns the updated rate.
    pub fn record_completion(&mut self, job: &Job, finish: f64) -> f64 {
        if !self.overdue.remove(&job.id) {
            let late = finish > job.deadline() as f64 + 1e-9;
            self.push(finish, late);
        }
        self.rate(finish)
    }

    /// Record that an unfinished job passed its deadline at `at`.
    pub fn record_overdue(&mut self, job: &Job, at: f64) -> f64 {
        if self.overdue.insert(job.id) {
            self.push(at, true);
        }
        self.rate(at)
    }

    fn push(&mut self, at: f64, late: bool) {
        let pos = self.events.partition_point(|(t, _)| *t <= at);
        self.events.insert(pos, (at, late));
    }

    /// Violation rate over events in `(now - window, now]`; 0 if none.
    pub fn rate(&mut self, now: f64) -> f64 {
        while self.events.front().is_some_and(|(t, _)| *t <= now - self.window) {
            self.events.pop_front();
        }
        let (n, late) = self
            .events
            .iter()
            .filter(|(t, _)| *t <= now)
            .fold((0usize, 0usize), |(n, l), (_, late)| (n + 1, l + *late as usize));
        if n == 0 {
            0.0
        } else {
            late as f64 / n as f64
        }
    }
}

/// The learned policy: knowledge-base provisioning at slot start and
/// threshold scheduling at every step.
pub struct CarbonFlex<'a> {
    kb: &'a KnowledgeBase,
    params: ProvisioningParams,
    num_queues: usize,
    tracker: ViolationTracker,
}

impl<'a> CarbonFlex<'a> {
    pub fn new(kb: &'a KnowledgeBase, params: ProvisioningParams, num_queues: usize) -> Self {
        let tracker = ViolationTracker::new(params.violation_window_slots);
        CarbonFlex {
            kb,
            params,
            num_queues,
            tracker,
        }
    }
}

impl Policy for CarbonFlex<'_> {
    fn name(&self) -> &'static str {
        "carbonflex"
    }

    fn begin_slot(&mut self, view: &View<'_>) -> Result<SlotPlan> {
        let forecast = view.forecaster.window(view.trace, view.slot + 1, RANK_HORIZON)?;
        let jobs: Vec<&Job> = view.active.iter().map(|a| a.job).collect();
        let state = featurize_with_forecast(view.slot, view.trace, &forecast, &jobs, self.num_queues)?;
        let v = self.tracker.rate(view.now);
        let d = provision(&state, self.kb, &self.params, v, view.cluster.max_capacity);
        Ok(SlotPlan {
            capacity: d.capacity,
            rho: d.threshold,
            mode: d.mode.as_str().to_string(),
        })
    }

    fn allocate(&mut self, view: &View<'_>, plan: &SlotPlan) -> BTreeMap<JobId, u32> {
        let jobs: Vec<&Job> = view.active.iter().map(|a| a.job).collect();
        schedule_with_guard(view.now, &jobs, view.forced, plan.capacity, plan.rho, view.cluster.max_capacity).0
    }

    fn on_completion(&mut self, job: &Job, finish: f64) {
        self.tracker.record_completion(job, finish);
    }

    fn on_overdue(&mut self, job: &Job, at: f64) {
        self.tracker.record_overdue(job, at);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::Case;
    use crate::model::ScalingProfile;
    use std::sync::Arc;

    fn job(id: u64, p: &[f64], a: usize, l: f64, d: usize) -> Job {
        let profile = Arc::new(ScalingProfile::new("p", 1, p.to_vec(), vec![0.0; p.len()]).unwrap());
        Job::new(JobId(id), a, l, 0, d, profile).unwrap()
    }

    fn state(x: f64) -> SystemState {
        SystemState {
            ci: x,
            ci_gradient: 0.0,
            ci_rank: 0.0,
            queue_lengths: vec![0],
            mean_elasticity: 0.0,
        }
    }

    fn kb(capacities: &[u32], spread: f64) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new(14, 24);
        let mut cases: Vec<Case> = capacities
            .iter()
            .enumerate()
            .map(|(i, &c)| Case {
                state: state(i as f64 * 0.001),
                capacity: c,
                threshold: 1.0 - i as f64 * 0.1,
                created_at: i,
            })
            .collect();
        // a far case fixes the normalisation range
        cases.push(Case {
            state: state(spread),
            capacity: 0,
            threshold: 2.0,
            created_at: 99,
        });
        kb.refresh(cases, 100).unwrap();
        kb
    }

    #[test]
    fn provision_branches() {
        let kb = kb(&[4, 4, 6, 6, 5], 1000.0);
        let p = ProvisioningParams::default();
        let d = provision(&state(0.0), &kb, &p, 0.0, 10);
        assert_eq!((d.capacity, d.mode), (5, ProvisionMode::Mean));
        assert_eq!(d.threshold, 1.0);
        let d = provision(&state(0.0), &kb, &p, 0.2, 10);
        assert_eq!((d.capacity, d.mode), (6, ProvisionMode::MaxFallback));
        let far = provision(&state(1000.0 * 0.9), &kb, &p, 0.2, 10);
        assert_eq!((far.capacity, far.mode, far.threshold), (10, ProvisionMode::FullFallback, 0.0));
        let empty = KnowledgeBase::new(14, 24);
        assert_eq!(provision(&state(0.0), &empty, &p, 0.0, 7).mode, ProvisionMode::FullFallback);
    }

    #[test]
    fn mean_rounds_half_up() {
        let kb = kb(&[1, 2], 1000.0);
        let p = ProvisioningParams { kk: 2, ..Default::default() };
        assert_eq!(provision(&state(0.0), &kb, &p, 0.0, 10).capacity, 2);
    }

    #[test]
    fn schedule_gives_k_min_first() {
        let a = job(1, &[1.0, 0.9], 0, 4.0, 6);
        let b = job(2, &[1.0, 0.9], 0, 4.0, 6);
        let alloc = schedule(0.0, &[&a, &b], 2, 0.0);
        assert_eq!(alloc, BTreeMap::from([(a.id, 1), (b.id, 1)]));
        assert!(schedule(0.0, &[&a, &b], 10, 2.0).is_empty());
    }

    #[test]
    fn schedule_respects_threshold() {
        let a = job(1, &[1.0, 0.9], 0, 4.0, 6);
        let b = job(2, &[1.0, 0.5], 0, 4.0, 6);
        let alloc = schedule(0.0, &[&a, &b], 3, 0.6);
        assert_eq!(alloc, BTreeMap::from([(a.id, 2), (b.id, 1)]));
    }

    #[test]
    fn guard_boundaries() {
        let j = job(1, &[1.0], 0, 4.0, 1); // deadline 5
        let forced = force_run_guard(3.0, &[Progress { job: &j, remaining_work: 2.0 }], 0.0);
        assert!(forced.contains(&j.id));
        let forced = force_run_guard(0.0, &[Progress { job: &j, remaining_work: 2.0 }], 0.0);
        assert!(forced.is_empty());
    }

    #[test]
    fn guard_clamps_to_cluster() {
        let jobs: Vec<Job> = (0..3).map(|i| job(i, &[1.0], 0, 1.0, 0)).collect();
        let refs: Vec<&Job> = jobs.iter().collect();
        let forced: BTreeSet<JobId> = jobs.iter().map(|j| j.id).collect();
        let (alloc, effective) = schedule_with_guard(0.0, &refs, &forced, 1, 2.0, 2);
        assert_eq!(effective, 2);
        assert_eq!(alloc.len(), 2);
    }

    #[test]
    fn violation_rates() {
        let mut v = ViolationTracker::new(1);
        assert_eq!(v.rate(5.0), 0.0);
        let j = job(1, &[1.0], 0, 1.0, 0); // deadline 1
        v.record_completion(&j, 0.9);
        v.record_completion(&j, 0.95);
        v.record_completion(&j, 1.0);
        assert_eq!(v.record_completion(&j, 1.5), 0.25);
        assert_eq!(v.rate(3.0), 0.0);
        let k = job(2, &[1.0], 3, 1.0, 0); // deadline 4
        assert_eq!(v.record_overdue(&k, 4.0), 1.0);
        assert_eq!(v.record_completion(&k, 4.5), 1.0);
        assert_eq!(v.rate(4.5), 1.0);
    }
}

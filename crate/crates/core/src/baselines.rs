//! Comparison policies run on the same engine, job model and energy
//! accounting as CarbonFlex.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::model::{CarbonTrace, ClusterConfig, Job, JobId, Schedule, Slot};
use crate::oracle::single_job_plan;
use crate::sim::{simulate, ActiveJob, Forecaster, Policy, SlotPlan, View};

/// Forecast slots behind the Wait Awhile threshold.
pub const PERCENTILE_HORIZON: usize = 24;

/// Percentile of the forecast below which Wait Awhile runs jobs.
pub const WAIT_AWHILE_PERCENTILE: f64 = 30.0;

/// Nearest-rank percentile: the `ceil(p/100 · n)`-th smallest value.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

fn static_plan(view: &View<'_>, mode: &str) -> SlotPlan {
    SlotPlan {
        capacity: view.cluster.max_capacity,
        rho: 0.0,
        mode: mode.to_string(),
    }
}

/// Admit `k_min` to `eligible` jobs in order, stopping at the first that
/// does not fit.
fn fcfs<'a>(eligible: impl Iterator<Item = &'a ActiveJob<'a>>, capacity: u32, alloc: &mut BTreeMap<JobId, u32>) {
    let mut used: u32 = alloc.values().sum();
    for a in eligible {
        if alloc.contains_key(&a.job.id) {
            continue;
        }
        let k = a.job.profile.k_min();
        if used + k > capacity {
            break;
        }
        used += k;
        alloc.insert(a.job.id, k);
    }
}

/// Forced jobs not yet allocated, at `k_min`, earliest deadline first.
fn admit_forced(view: &View<'_>, capacity: u32, alloc: &mut BTreeMap<JobId, u32>) {
    let mut forced: Vec<&ActiveJob> = view
        .active
        .iter()
        .filter(|a| view.forced.contains(&a.job.id) && !alloc.contains_key(&a.job.id))
        .collect();
    forced.sort_by_key(|a| (a.job.deadline(), a.job.id));
    let mut used: u32 = alloc.values().sum();
    for a in forced {
        let k = a.job.profile.k_min();
        if used + k <= capacity {
            used += k;
            alloc.insert(a.job.id, k);
        }
    }
}

/// Each job runs at `k_min` from arrival in first-come-first-served order
/// and is never paused.
#[derive(Clone, Copy, Debug, Default)]
pub struct CarbonAgnostic;

impl Policy for CarbonAgnostic {
    fn name(&self) -> &'static str {
        "carbon-agnostic"
    }

    fn begin_slot(&mut self, view: &View<'_>) -> Result<SlotPlan> {
        Ok(static_plan(view, "fcfs"))
    }

    fn allocate(&mut self, view: &View<'_>, plan: &SlotPlan) -> BTreeMap<JobId, u32> {
        let mut alloc = BTreeMap::new();
        // running jobs form a prefix of the arrival order, so they are kept
        fcfs(view.active.iter(), plan.capacity, &mut alloc);
        alloc
    }
}

fn estimate(mean_lengths: &[f64], job: &Job) -> f64 {
    match mean_lengths.get(job.queue) {
        Some(&l) if l > 0.0 => l,
        _ => job.length,
    }
}

/// Start at the beginning of the lowest-mean-CI window of the queue's mean
/// job length, then run at `k_min` without interruption.
#[derive(Clone, Debug, Default)]
pub struct Gaia {
    mean_lengths: Vec<f64>,
    start: BTreeMap<JobId, Slot>,
}

impl Gaia {
    pub fn new(mean_lengths: Vec<f64>) -> Self {
        Gaia {
            mean_lengths,
            start: BTreeMap::new(),
        }
    }

    pub fn planned_start(&self, job: JobId) -> Option<Slot> {
        self.start.get(&job).copied()
    }
}

/// Start slot in `[a, a + d]` minimising mean CI over `span` slots; the
/// earliest wins ties. Windows are cut at the end of `ci`.
pub fn lowest_window_start(ci: &[f64], arrival: Slot, slack: usize, span: usize) -> Slot {
    let span = span.max(1);
    let mut best = (f64::INFINITY, arrival);
    for s in arrival..=arrival + slack {
        if s >= ci.len() {
            break;
        }
        let w = &ci[s..(s + span).min(ci.len())];
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        if mean < best.0 {
            best = (mean, s);
        }
    }
    best.1
}

impl Policy for Gaia {
    fn name(&self) -> &'static str {
        "gaia"
    }

    fn on_arrival(&mut self, job: &Job, view: &View<'_>) -> Result<()> {
        let span = estimate(&self.mean_lengths, job).ceil().max(1.0) as usize;
        let reach = (job.arrival + job.slack + span).min(view.trace.len());
        let from = job.arrival.min(reach);
        let forecast = view.forecaster.window(view.trace, from, reach - from).unwrap_or_default();
        let start = from + lowest_window_start(&forecast, 0, job.slack, span);
        self.start.insert(job.id, start);
        Ok(())
    }

    fn begin_slot(&mut self, view: &View<'_>) -> Result<SlotPlan> {
        Ok(static_plan(view, "lowest-window"))
    }

    fn allocate(&mut self, view: &View<'_>, plan: &SlotPlan) -> BTreeMap<JobId, u32> {
        let mut alloc = BTreeMap::new();
        for a in view.active.iter().filter(|a| a.started) {
            alloc.insert(a.job.id, a.job.profile.k_min());
        }
        admit_forced(view, plan.capacity, &mut alloc);
        let due = view
            .active
            .iter()
            .filter(|a| self.start.get(&a.job.id).is_some_and(|&s| s as f64 <= view.now + 1e-9));
        fcfs(due, plan.capacity, &mut alloc);
        alloc
    }
}

/// Suspend-resume: run at `k_min` while the current CI is at or below the
/// 30th percentile of the next day's forecast.
#[derive(Clone, Debug, Default)]
pub struct WaitAwhile {
    run_now: bool,
}

impl Policy for WaitAwhile {
    fn name(&self) -> &'static str {
        "wait-awhile"
    }

    fn begin_slot(&mut self, view: &View<'_>) -> Result<SlotPlan> {
        let forecast = view.forecaster.window(view.trace, view.slot, PERCENTILE_HORIZON)?;
        let threshold = nearest_rank_percentile(&forecast, WAIT_AWHILE_PERCENTILE).unwrap_or(f64::INFINITY);
        self.run_now = view.trace.ci(view.slot)? <= threshold;
        Ok(static_plan(view, if self.run_now { "run" } else { "wait" }))
    }

    fn allocate(&mut self, view: &View<'_>, plan: &SlotPlan) -> BTreeMap<JobId, u32> {
        let mut alloc = BTreeMap::new();
        let run_now = self.run_now;
        let eligible = view
            .active
            .iter()
            .filter(|a| run_now || view.forced.contains(&a.job.id));
        fcfs(eligible, plan.capacity, &mut alloc);
        alloc
    }
}

/// Per-job greedy plan made at arrival from the queue's mean length; plans
/// are admitted across jobs by descending marginal throughput.
#[derive(Clone, Debug, Default)]
pub struct CarbonScaler {
    mean_lengths: Vec<f64>,
    plans: BTreeMap<JobId, BTreeMap<Slot, u32>>,
}

impl CarbonScaler {
    pub fn new(mean_lengths: Vec<f64>) -> Self {
        CarbonScaler {
            mean_lengths,
            plans: BTreeMap::new(),
        }
    }

    pub fn plan(&self, job: JobId) -> Option<&BTreeMap<Slot, u32>> {
        self.plans.get(&job)
    }

    fn target(&self, a: &ActiveJob<'_>, slot: Slot, forced: bool) -> u32 {
        let k_min = a.job.profile.k_min();
        let plan = self.plans.get(&a.job.id);
        let planned = plan.and_then(|p| p.get(&slot)).copied().unwrap_or(0);
        let past_plan = plan
            .and_then(|p| p.keys().next_back())
            .is_none_or(|&last| slot > last);
        let mut k = planned;
        if past_plan || forced {
            k = k.max(k_min);
        }
        k
    }
}

impl Policy for CarbonScaler {
    fn name(&self) -> &'static str {
        "carbonscaler"
    }

    fn on_arrival(&mut self, job: &Job, view: &View<'_>) -> Result<()> {
        let mut estimate_job = job.clone();
        estimate_job.length = estimate(&self.mean_lengths, job);
        let forecast_trace = if view.forecaster.noise_sigma > 0.0 {
            let end = estimate_job.deadline().min(view.trace.len());
            let from = job.arrival.min(end);
            let mut values = vec![0.0; from];
            values.extend(view.forecaster.window(view.trace, from, end - from).unwrap_or_default());
            CarbonTrace::new(view.trace.start, view.trace.step_minutes, values, view.trace.region.clone())?
        } else {
            view.trace.clone()
        };
        let plan = single_job_plan(&estimate_job, &forecast_trace, view.cluster.max_capacity);
        let slots = plan
            .job(job.id)
            .map(|alloc| {
                alloc
                    .iter()
                    .map(|(&t, segs)| (t, segs.iter().map(|s| s.servers).max().unwrap_or(0)))
                    .collect()
            })
            .unwrap_or_default();
        self.plans.insert(job.id, slots);
        Ok(())
    }

    fn begin_slot(&mut self, view: &View<'_>) -> Result<SlotPlan> {
        Ok(static_plan(view, "plan"))
    }

    fn allocate(&mut self, view: &View<'_>, plan: &SlotPlan) -> BTreeMap<JobId, u32> {
        let mut alloc = BTreeMap::new();
        admit_forced(view, plan.capacity, &mut alloc);
        let mut candidates = Vec::new();
        for a in view.active {
            let target = self.target(a, view.slot, view.forced.contains(&a.job.id));
            let k_min = a.job.profile.k_min();
            for k in k_min..=target {
                let p = a.job.profile.marginal(k).unwrap_or(0.0);
                candidates.push((p, a.job.deadline(), a.job.id, k, k_min));
            }
        }
        candidates.sort_by(|x, y| {
            y.0.total_cmp(&x.0)
                .then(x.1.cmp(&y.1))
                .then(x.2.cmp(&y.2))
                .then(x.3.cmp(&y.3))
        });
        let mut used: u32 = alloc.values().sum();
        for (_, _, id, k, k_min) in candidates {
            let cur = alloc.get(&id).copied().unwrap_or(0);
            let next = if cur == 0 { k_min } else { cur + 1 };
            if k != next || used + (k - cur) > plan.capacity {
                continue;
            }
            used += k - cur;
            alloc.insert(id, k);
        }
        alloc
    }
}

fn run(policy: &mut dyn Policy, jobs: &[Job], trace: &CarbonTrace, cluster: &ClusterConfig) -> Result<Schedule> {
    Ok(simulate(policy, jobs, trace, cluster, &Forecaster::default())?.schedule)
}

pub fn carbon_agnostic(jobs: &[Job], trace: &CarbonTrace, cluster: &ClusterConfig) -> Result<Schedule> {
    run(&mut CarbonAgnostic, jobs, trace, cluster)
}

pub fn gaia_lowest_window(
    jobs: &[Job],
    trace: &CarbonTrace,
    cluster: &ClusterConfig,
    mean_lengths: &[f64],
) -> Result<Schedule> {
    run(&mut Gaia::new(mean_lengths.to_vec()), jobs, trace, cluster)
}

pub fn wait_awhile(jobs: &[Job], trace: &CarbonTrace, cluster: &ClusterConfig) -> Result<Schedule> {
    run(&mut WaitAwhile::default(), jobs, trace, cluster)
}

pub fn carbonscaler(
    jobs: &[Job],
    trace: &CarbonTrace,
    cluster: &ClusterConfig,
    mean_lengths: &[f64],
) -> Result<Schedule> {
    run(&mut CarbonScaler::new(mean_lengths.to_vec()), jobs, trace, cluster)
}

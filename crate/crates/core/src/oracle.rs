//! Offline carbon-minimising scheduler with full knowledge of arrivals,
//! lengths and carbon intensity, plus an exhaustive reference solver for
//! small instances.
//!
//! The greedy walks every (job, slot, scale) candidate in descending
//! `p(k) / CI_t` order and raises the job's allocation in that slot one
//! server at a time until its work is covered. The increment that completes
//! a job is billed only for the fraction of the slot it is needed.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{
    job_carbon, total_carbon, CarbonTrace, ClusterConfig, Job, JobAllocation, JobId, Schedule,
    Segment, Slot, WORK_EPS,
};

/// Threshold recorded for a slot in which no job runs.
pub const IDLE_THRESHOLD: f64 = 2.0;

/// Default bound on the number of per-job allocation matrices the brute
/// force solver may enumerate.
pub const DEFAULT_STATE_LIMIT: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub schedule: Schedule,
    pub feasible: bool,
    /// Extra slack (slots) granted to each job that needed it.
    pub extensions: BTreeMap<JobId, usize>,
    /// Occupied servers `m_t` for every slot of the trace.
    pub capacity: Vec<u32>,
    /// Lowest marginal throughput among jobs running in each slot.
    pub threshold: Vec<f64>,
    /// Fraction of work still missing, for jobs that did not finish.
    pub remaining: BTreeMap<JobId, f64>,
    pub carbon_g: f64,
}

impl OracleResult {
    fn from_schedule(
        schedule: Schedule,
        jobs: &[Job],
        remaining: BTreeMap<JobId, f64>,
        trace: &CarbonTrace,
        cluster: &ClusterConfig,
    ) -> Self {
        let (capacity, threshold) = slot_decisions(&schedule, jobs, trace.len());
        let carbon_g = total_carbon(&schedule, jobs, trace, cluster)
            .expect("oracle windows are clamped to the trace");
        OracleResult {
            feasible: remaining.is_empty(),
            schedule,
            extensions: BTreeMap::new(),
            capacity,
            threshold,
            remaining,
            carbon_g,
        }
    }

    pub fn capacity_at(&self, t: Slot) -> u32 {
        self.capacity.get(t).copied().unwrap_or(0)
    }

    pub fn threshold_at(&self, t: Slot) -> f64 {
        self.threshold.get(t).copied().unwrap_or(IDLE_THRESHOLD)
    }

    /// `slot,m_t,rho_t` rows.
    pub fn write_slots<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slot", "m_t", "rho_t"])?;
        for (t, (m, rho)) in self.capacity.iter().zip(&self.threshold).enumerate() {
            w.write_record([t.to_string(), m.to_string(), rho.to_string()])?;
        }
        w.flush()
    }

    /// `job_id,slot,start,end,servers` rows, one per allocation segment.
    pub fn write_allocations<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["job_id", "slot", "start", "end", "servers"])?;
        for (id, alloc) in self.schedule.iter() {
            for (t, segs) in alloc {
                for s in segs {
                    w.write_record([
                        id.to_string(),
                        t.to_string(),
                        s.start.to_string(),
                        s.end.to_string(),
                        s.servers.to_string(),
                    ])?;
                }
            }
        }
        w.flush()
    }

    pub fn write_csvs(&self, slots: &Path, allocations: &Path) -> Result<()> {
        let f = std::fs::File::create(slots).map_err(|e| Error::io(slots, e))?;
        self.write_slots(f).map_err(|e| Error::io(slots, e))?;
        let f = std::fs::File::create(allocations).map_err(|e| Error::io(allocations, e))?;
        self.write_allocations(f).map_err(|e| Error::io(allocations, e))
    }
}

/// `m_t` and `ρ_t` per slot, derived from the final schedule.
pub fn slot_decisions(schedule: &Schedule, jobs: &[Job], horizon: usize) -> (Vec<u32>, Vec<f64>) {
    let horizon = horizon.max(schedule.horizon());
    let mut capacity: Vec<u32> = (0..horizon).map(|t| schedule.occupancy(t)).collect();
    let mut threshold = vec![IDLE_THRESHOLD; horizon];
    for job in jobs {
        let Some(alloc) = schedule.job(job.id) else {
            continue;
        };
        for (&t, segs) in alloc {
            let k = segs.iter().map(|s| s.servers).max().unwrap_or(0);
            if let Some(p) = job.profile.marginal(k) {
                threshold[t] = threshold[t].min(p);
            }
        }
    }
    capacity.truncate(horizon);
    (capacity, threshold)
}

/// Slots `[a_j, min(deadline, trace end))` the job may use.
fn window(job: &Job, trace_len: usize) -> std::ops::Range<Slot> {
    job.arrival.min(trace_len)..job.deadline().min(trace_len)
}

struct Candidate {
    ratio: f64,
    deadline: Slot,
    job: usize,
    slot: Slot,
    k: u32,
}

/// One greedy pass. Returns the schedule and the unfinished jobs' missing
/// work fractions.
fn greedy(jobs: &[Job], trace: &CarbonTrace, max_capacity: u32) -> (Schedule, BTreeMap<JobId, f64>) {
    let ci = trace.values();
    let mut candidates = Vec::new();
    for (j, job) in jobs.iter().enumerate() {
        let deadline = job.deadline();
        for t in window(job, ci.len()) {
            for (i, p) in job.profile.marginals().iter().enumerate() {
                candidates.push(Candidate {
                    ratio: p / ci[t],
                    deadline,
                    job: j,
                    slot: t,
                    k: job.profile.k_min() + i as u32,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.ratio
            .total_cmp(&a.ratio)
            .then(a.deadline.cmp(&b.deadline))
            .then(jobs[a.job].id.cmp(&jobs[b.job].id))
            .then(a.slot.cmp(&b.slot))
            .then(a.k.cmp(&b.k))
    });

    let mut schedule = Schedule::new();
    let mut occupancy: BTreeMap<Slot, u32> = BTreeMap::new();
    let mut current: BTreeMap<(usize, Slot), u32> = BTreeMap::new();
    let mut work = vec![0.0; jobs.len()];
    let mut done = vec![false; jobs.len()];
    for c in candidates {
        if done[c.job] {
            continue;
        }
        let job = &jobs[c.job];
        let cur = current.get(&(c.job, c.slot)).copied().unwrap_or(0);
        let next = if cur == 0 { job.profile.k_min() } else { cur + 1 };
        if c.k != next {
            continue;
        }
        let occ = occupancy.get(&c.slot).copied().unwrap_or(0);
        if occ - cur + c.k > max_capacity {
            continue;
        }
        occupancy.insert(c.slot, occ - cur + c.k);
        current.insert((c.job, c.slot), c.k);

        let rate = |k| job.profile.cumulative_throughput(k).unwrap_or(0.0);
        let gain = rate(c.k) - rate(cur);
        let need = job.length - work[c.job];
        if gain >= need - WORK_EPS {
            let f = (need / gain).clamp(0.0, 1.0);
            let mut segs = vec![Segment {
                start: 0.0,
                end: f,
                servers: c.k,
            }];
            if f < 1.0 && cur > 0 {
                segs.push(Segment {
                    start: f,
                    end: 1.0,
                    servers: cur,
                });
            }
            if f >= 1.0 - 1e-12 {
                segs = vec![Segment::full(c.k)];
            }
            schedule.set_segments(job.id, c.slot, segs);
            work[c.job] = job.length;
            done[c.job] = true;
        } else {
            schedule.set(job.id, c.slot, c.k);
            work[c.job] += gain;
        }
    }
    let remaining = jobs
        .iter()
        .zip(&work)
        .filter(|(job, w)| **w < job.length - WORK_EPS)
        .map(|(job, w)| (job.id, 1.0 - w / job.length))
        .collect();
    (schedule, remaining)
}

/// Single greedy pass over all jobs with their configured slack.
pub fn oracle_schedule(jobs: &[Job], trace: &CarbonTrace, cluster: &ClusterConfig) -> OracleResult {
    let (schedule, remaining) = greedy(jobs, trace, cluster.max_capacity);
    OracleResult::from_schedule(schedule, jobs, remaining, trace, cluster)
}

/// Greedy pass restricted to a single job.
pub fn single_job_plan(job: &Job, trace: &CarbonTrace, max_capacity: u32) -> Schedule {
    greedy(std::slice::from_ref(job), trace, max_capacity).0
}

/// Rerun the greedy, granting one more slot of slack to every unfinished job
/// after each infeasible round, for at most `max_rounds` rounds.
pub fn retry_with_extension(
    jobs: &[Job],
    trace: &CarbonTrace,
    cluster: &ClusterConfig,
    max_rounds: usize,
) -> OracleResult {
    let mut extra: BTreeMap<JobId, usize> = BTreeMap::new();
    let mut round = 0;
    loop {
        round += 1;
        let extended: Vec<Job> = jobs
            .iter()
            .map(|j| j.with_extra_slack(extra.get(&j.id).copied().unwrap_or(0)))
            .collect();
        let mut result = oracle_schedule(&extended, trace, cluster);
        if result.feasible || round >= max_rounds.max(1) {
            result.extensions = extra;
            return result;
        }
        for id in result.remaining.keys() {
            *extra.entry(*id).or_insert(0) += 1;
        }
    }
}

/// Exhaustive minimum-carbon schedule for small instances.
///
/// Every job enumerates all allocation matrices over its window with
/// `k ∈ {0} ∪ [k_min, k_max]` per slot; matrices whose work covers the job
/// may bill one slot's top increment fractionally, as the greedy does. Jobs
/// are then combined by branch and bound under the capacity cap.
pub fn brute_force_schedule(
    jobs: &[Job],
    trace: &CarbonTrace,
    cluster: &ClusterConfig,
    state_limit: u128,
) -> Result<OracleResult> {
    let states: u128 = jobs
        .iter()
        .map(|j| {
            let choices = j.profile.marginals().len() as u128 + 1;
            let slots = window(j, trace.len()).len() as u32;
            choices.checked_pow(slots).unwrap_or(u128::MAX)
        })
        .fold(0u128, |acc, s| acc.saturating_add(s));
    if states > state_limit {
        return Err(Error::TooLarge {
            states,
            limit: state_limit,
        });
    }

    let options: Vec<Vec<JobOption>> = jobs
        .iter()
        .map(|j| job_options(j, trace, cluster))
        .collect::<Result<_>>()?;
    let best = branch_and_bound(&options, cluster.max_capacity);

    let mut schedule = Schedule::new();
    let mut remaining = BTreeMap::new();
    match best {
        Some(choice) => {
            for (job, (opts, &i)) in jobs.iter().zip(options.iter().zip(&choice)) {
                for (&t, segs) in &opts[i].alloc {
                    schedule.set_segments(job.id, t, segs.clone());
                }
            }
        }
        None => {
            remaining = jobs.iter().map(|j| (j.id, 1.0)).collect();
        }
    }
    Ok(OracleResult::from_schedule(schedule, jobs, remaining, trace, cluster))
}

struct JobOption {
    cost: f64,
    alloc: JobAllocation,
    /// Peak servers per window slot.
    peak: Vec<(Slot, u32)>,
}

fn job_options(job: &Job, trace: &CarbonTrace, cluster: &ClusterConfig) -> Result<Vec<JobOption>> {
    let slots: Vec<Slot> = window(job, trace.len()).collect();
    let scales: Vec<u32> = std::iter::once(0)
        .chain(job.profile.k_min()..=job.profile.k_max())
        .collect();
    let rate = |k: u32| job.profile.cumulative_throughput(k).unwrap_or(0.0);
    let mut options = Vec::new();
    let mut digits = vec![0usize; slots.len()];
    loop {
        let ks: Vec<u32> = digits.iter().map(|&d| scales[d]).collect();
        let total: f64 = ks.iter().map(|&k| rate(k)).sum();
        if total >= job.length - WORK_EPS {
            let base: JobAllocation = slots
                .iter()
                .zip(&ks)
                .filter(|(_, &k)| k > 0)
                .map(|(&t, &k)| (t, vec![Segment::full(k)]))
                .collect();
            let mut best = (job_carbon(job, &base, trace, cluster)?, base.clone());
            for (&t, &k) in slots.iter().zip(&ks) {
                if k == 0 {
                    continue;
                }
                let below = if k == job.profile.k_min() { 0 } else { k - 1 };
                let gain = rate(k) - rate(below);
                let f = (job.length - (total - gain)) / gain;
                if !(f > 0.0 && f < 1.0) {
                    continue;
                }
                let mut alloc = base.clone();
                let mut segs = vec![Segment {
                    start: 0.0,
                    end: f,
                    servers: k,
                }];
                if below > 0 {
                    segs.push(Segment {
                        start: f,
                        end: 1.0,
                        servers: below,
                    });
                }
                alloc.insert(t, segs);
                let cost = job_carbon(job, &alloc, trace, cluster)?;
                if cost < best.0 {
                    best = (cost, alloc);
                }
            }
            let peak = slots
                .iter()
                .zip(&ks)
                .filter(|(_, &k)| k > 0)
                .map(|(&t, &k)| (t, k))
                .collect();
            options.push(JobOption {
                cost: best.0,
                alloc: best.1,
                peak,
            });
        }
        // next matrix in mixed-radix order
        let mut i = 0;
        loop {
            if i == digits.len() {
                options.sort_by(|a, b| a.cost.total_cmp(&b.cost));
                return Ok(options);
            }
            digits[i] += 1;
            if digits[i] < scales.len() {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

fn branch_and_bound(options: &[Vec<JobOption>], max_capacity: u32) -> Option<Vec<usize>> {
    if options.iter().any(Vec::is_empty) {
        return None;
    }
    // cheapest remaining cost from job i onwards
    let mut floor = vec![0.0; options.len() + 1];
    for i in (0..options.len()).rev() {
        floor[i] = floor[i + 1] + options[i][0].cost;
    }
    struct Search<'a> {
        options: &'a [Vec<JobOption>],
        floor: Vec<f64>,
        cap: u32,
        occupancy: BTreeMap<Slot, u32>,
        choice: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }
    impl Search<'_> {
        fn go(&mut self, i: usize, cost: f64) {
            if let Some((b, _)) = &self.best {
                if cost + self.floor[i] >= *b {
                    return;
                }
            }
            if i == self.options.len() {
                self.best = Some((cost, self.choice.clone()));
                return;
            }
            for o in 0..self.options[i].len() {
                let opt = &self.options[i][o];
                let fits = opt
                    .peak
                    .iter()
                    .all(|(t, k)| self.occupancy.get(t).copied().unwrap_or(0) + k <= self.cap);
                if !fits {
                    continue;
                }
                for (t, k) in &opt.peak {
                    *self.occupancy.entry(*t).or_insert(0) += k;
                }
                self.choice.push(o);
                self.go(i + 1, cost + opt.cost);
                self.choice.pop();
                for (t, k) in &opt.peak {
                    *self.occupancy.get_mut(t).expect("occupied") -= k;
                }
            }
        }
    }
    let mut search = Search {
        options,
        floor,
        cap: max_capacity,
        occupancy: BTreeMap::new(),
        choice: Vec::new(),
        best: None,
    };
    search.go(0, 0.0);
    search.best.map(|(_, c)| c)
}

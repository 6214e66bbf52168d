//! Domain types for elastic batch jobs on a capacity-capped cluster, the
//! work semantics of scaling profiles, and energy / carbon accounting.
//!
//! Work is measured in *slots at minimum scale*: a job of length `l` finishes
//! after `l` slots when run at `k_min`. Running at scale `k` yields the
//! running sum of the profile's marginal throughputs `p(k_min) + .. + p(k)`
//! work units per slot.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a scheduling slot (the provisioning epoch, one hour by default).
pub type Slot = usize;

/// Work tolerance used when deciding that a job has completed.
pub const WORK_EPS: f64 = 1e-9;

const TIME_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub u64);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Normalised elastic scaling profile of a job.
///
/// `marginal[i]` is the throughput gained by the server that takes the job
/// from scale `k_min + i - 1` to `k_min + i`; the first entry (the base
/// allocation of `k_min` servers) is exactly 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingProfile {
    id: String,
    k_min: u32,
    marginal: Vec<f64>,
    net_gb_per_slot: Vec<f64>,
    strictly_decreasing: bool,
}

impl ScalingProfile {
    pub fn new(
        id: impl Into<String>,
        k_min: u32,
        marginal: Vec<f64>,
        net_gb_per_slot: Vec<f64>,
    ) -> Result<Self> {
        let id = id.into();
        let bad = |msg: String| Error::invalid("scaling profile", format!("`{id}`: {msg}"));
        if k_min == 0 {
            return Err(bad("k_min must be at least 1".into()));
        }
        if marginal.is_empty() {
            return Err(bad("no scales given".into()));
        }
        if marginal[0] != 1.0 {
            return Err(bad(format!("p(k_min) must be exactly 1, got {}", marginal[0])));
        }
        if let Some(p) = marginal.iter().find(|p| !p.is_finite() || **p <= 0.0) {
            return Err(bad(format!("marginal throughput {p} is not strictly positive")));
        }
        if let Some(w) = marginal.windows(2).find(|w| w[1] > w[0]) {
            return Err(bad(format!(
                "marginal throughput increases from {} to {}",
                w[0], w[1]
            )));
        }
        if net_gb_per_slot.len() != marginal.len() {
            return Err(bad(format!(
                "{} network volumes for {} scales",
                net_gb_per_slot.len(),
                marginal.len()
            )));
        }
        if let Some(v) = net_gb_per_slot.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(bad(format!("network volume {v} is negative")));
        }
        let strictly_decreasing = marginal.windows(2).all(|w| w[1] < w[0]);
        Ok(ScalingProfile {
            id,
            k_min,
            marginal,
            net_gb_per_slot,
            strictly_decreasing,
        })
    }

    /// A profile that cannot scale: `k_min = k_max = k`.
    pub fn inelastic(id: impl Into<String>, k: u32) -> Result<Self> {
        Self::new(id, k, vec![1.0], vec![0.0])
    }

    /// `p(k) = decay^(k - k_min)` with no network traffic.
    pub fn geometric(id: impl Into<String>, k_min: u32, k_max: u32, decay: f64) -> Result<Self> {
        if k_max < k_min {
            return Err(Error::invalid("scaling profile", "k_max < k_min"));
        }
        let n = (k_max - k_min + 1) as usize;
        let marginal = (0..n).map(|i| decay.powi(i as i32)).collect();
        Self::new(id, k_min, marginal, vec![0.0; n])
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn k_min(&self) -> u32 {
        self.k_min
    }

    pub fn k_max(&self) -> u32 {
        self.k_min + self.marginal.len() as u32 - 1
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginal
    }

    pub fn net_volumes(&self) -> &[f64] {
        &self.net_gb_per_slot
    }

    /// Marginal throughput `p(k)` of the `k`-th server.
    pub fn marginal(&self, k: u32) -> Option<f64> {
        self.index(k).map(|i| self.marginal[i])
    }

    pub fn net_gb_per_slot(&self, k: u32) -> Option<f64> {
        self.index(k).map(|i| self.net_gb_per_slot[i])
    }

    /// Whether `k` is a legal allocation (0 = paused).
    pub fn allows(&self, k: u32) -> bool {
        k == 0 || self.index(k).is_some()
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.strictly_decreasing
    }

    fn index(&self, k: u32) -> Option<usize> {
        (k >= self.k_min && k <= self.k_max()).then(|| (k - self.k_min) as usize)
    }

    /// Work units per slot at scale `k`.
    pub fn cumulative_throughput(&self, k: u32) -> Result<f64> {
        if k == 0 {
            return Ok(0.0);
        }
        let i = self.index(k).ok_or_else(|| {
            Error::Range(format!(
                "scale {k} outside [{}, {}] of profile `{}`",
                self.k_min,
                self.k_max(),
                self.id
            ))
        })?;
        Ok(self.marginal[..=i].iter().sum())
    }

    /// Scalar elasticity: mean marginal throughput of the servers above
    /// `k_min`; 1 for linear scaling, 0 for an inelastic job.
    pub fn elasticity(&self) -> f64 {
        if self.marginal.len() < 2 {
            return 0.0;
        }
        let above = &self.marginal[1..];
        above.iter().sum::<f64>() / above.len() as f64
    }
}

/// Free-function form of [`ScalingProfile::cumulative_throughput`].
pub fn cumulative_throughput(profile: &ScalingProfile, k: u32) -> Result<f64> {
    profile.cumulative_throughput(k)
}

/// One batch job.
#[derive(Clone, Debug)]
pub struct Job {
    pub id: JobId,
    pub arrival: Slot,
    /// Work in slots at minimum scale.
    pub length: f64,
    /// Index into [`ClusterConfig::queues`].
    pub queue: usize,
    /// Allowed delay in slots, resolved from the queue.
    pub slack: usize,
    pub profile: Arc<ScalingProfile>,
}

impl Job {
    pub fn new(
        id: JobId,
        arrival: Slot,
        length: f64,
        queue: usize,
        slack: usize,
        profile: Arc<ScalingProfile>,
    ) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::invalid(
                "job",
                format!("job {id} has non-positive length {length}"),
            ));
        }
        Ok(Job {
            id,
            arrival,
            length,
            queue,
            slack,
            profile,
        })
    }

    /// Length rounded up to whole slots.
    pub fn length_slots(&self) -> usize {
        (self.length - WORK_EPS).ceil().max(1.0) as usize
    }

    /// Exclusive end of the job's window: `a + ceil(l) + d`.
    pub fn deadline(&self) -> Slot {
        self.arrival + self.length_slots() + self.slack
    }

    pub fn with_extra_slack(&self, extra: usize) -> Job {
        Job {
            slack: self.slack + extra,
            ..self.clone()
        }
    }
}

/// A submission queue; jobs are routed by length into `(previous max, max_length]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueConfig {
    pub id: String,
    pub slack_slots: usize,
    /// Upper length bound (inclusive); `None` for the last, unbounded queue.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_length: Option<f64>,
}

/// Cluster-wide configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    /// Capacity cap `M` in servers.
    pub max_capacity: u32,
    #[serde(default = "defaults::slot_minutes")]
    pub slot_minutes: u32,
    #[serde(default = "defaults::delta_t_minutes")]
    pub delta_t_minutes: u32,
    #[serde(default = "defaults::queues")]
    pub queues: Vec<QueueConfig>,
    #[serde(default = "defaults::power_per_server_kw")]
    pub power_per_server_kw: f64,
    #[serde(default = "defaults::eta_net_w_per_gbps")]
    pub eta_net_w_per_gbps: f64,
    /// Energy billed per scale change (pause, resume or rescale).
    #[serde(default)]
    pub switch_cost_kwh: f64,
    /// Power of provisioned but unused servers.
    #[serde(default)]
    pub idle_power_kw: f64,
}

mod defaults {
    use super::QueueConfig;

    pub fn slot_minutes() -> u32 {
        60
    }
    pub fn delta_t_minutes() -> u32 {
        5
    }
    pub fn power_per_server_kw() -> f64 {
        0.1
    }
    pub fn eta_net_w_per_gbps() -> f64 {
        0.1
    }
    pub fn queues() -> Vec<QueueConfig> {
        vec![
            QueueConfig {
                id: "short".into(),
                slack_slots: 6,
                max_length: Some(2.0),
            },
            QueueConfig {
                id: "medium".into(),
                slack_slots: 24,
                max_length: Some(12.0),
            },
            QueueConfig {
                id: "long".into(),
                slack_slots: 48,
                max_length: None,
            },
        ]
    }
}

impl ClusterConfig {
    /// A cluster of `max_capacity` servers with default slotting, power and queues.
    pub fn with_capacity(max_capacity: u32) -> Self {
        ClusterConfig {
            max_capacity,
            slot_minutes: defaults::slot_minutes(),
            delta_t_minutes: defaults::delta_t_minutes(),
            queues: defaults::queues(),
            power_per_server_kw: defaults::power_per_server_kw(),
            eta_net_w_per_gbps: defaults::eta_net_w_per_gbps(),
            switch_cost_kwh: 0.0,
            idle_power_kw: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.max_capacity < 1 {
            return bad("max_capacity must be at least 1".into());
        }
        if self.slot_minutes == 0 || self.delta_t_minutes == 0 {
            return bad("slot_minutes and delta_t_minutes must be positive".into());
        }
        if !self.slot_minutes.is_multiple_of(self.delta_t_minutes) {
            return bad(format!(
                "slot_minutes ({}) is not divisible by delta_t_minutes ({})",
                self.slot_minutes, self.delta_t_minutes
            ));
        }
        for (name, v) in [
            ("power_per_server_kw", self.power_per_server_kw),
            ("eta_net_w_per_gbps", self.eta_net_w_per_gbps),
            ("switch_cost_kwh", self.switch_cost_kwh),
            ("idle_power_kw", self.idle_power_kw),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if self.queues.is_empty() {
            return bad("at least one queue is required".into());
        }
        let mut prev = 0.0;
        for (i, q) in self.queues.iter().enumerate() {
            let last = i + 1 == self.queues.len();
            match (q.max_length, last) {
                (None, true) => {}
                (None, false) => {
                    return bad(format!("queue `{}` is unbounded but not last", q.id));
                }
                (Some(_), true) => {
                    return bad(format!(
                        "last queue `{}` must be unbounded so lengths map to a queue",
                        q.id
                    ));
                }
                (Some(m), false) => {
                    if !(m.is_finite() && m > prev) {
                        return bad(format!(
                            "queue `{}` max_length {m} must exceed the previous bound {prev}",
                            q.id
                        ));
                    }
                    prev = m;
                }
            }
        }
        Ok(())
    }

    /// Δt sub-slots per slot.
    pub fn steps_per_slot(&self) -> u32 {
        (self.slot_minutes / self.delta_t_minutes).max(1)
    }

    pub fn slot_hours(&self) -> f64 {
        self.slot_minutes as f64 / 60.0
    }

    pub fn slots_per_day(&self) -> usize {
        ((24 * 60) / self.slot_minutes.max(1)) as usize
    }

    /// The `(min, max]` length range of queue `i`.
    pub fn queue_bounds(&self, i: usize) -> (f64, f64) {
        let lo = if i == 0 {
            0.0
        } else {
            self.queues[i - 1].max_length.unwrap_or(f64::INFINITY)
        };
        let hi = self.queues[i].max_length.unwrap_or(f64::INFINITY);
        (lo, hi)
    }

    /// Queue whose length range contains `length`.
    pub fn route(&self, length: f64) -> Option<usize> {
        if length.is_nan() || length <= 0.0 {
            return None;
        }
        (0..self.queues.len()).find(|&i| {
            let (lo, hi) = self.queue_bounds(i);
            length > lo && length <= hi
        })
    }
}

/// Time-indexed carbon intensity series in g·CO₂eq/kWh.
#[derive(Clone, Debug, PartialEq)]
pub struct CarbonTrace {
    /// Unix seconds of the first sample.
    pub start: i64,
    pub step_minutes: u32,
    values: Vec<f64>,
    pub region: String,
}

impl CarbonTrace {
    pub fn new(start: i64, step_minutes: u32, values: Vec<f64>, region: impl Into<String>) -> Result<Self> {
        if step_minutes == 0 {
            return Err(Error::invalid("carbon trace", "step must be positive"));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::invalid(
                "carbon trace",
                format!("value {v} at index {i} is negative or not finite"),
            ));
        }
        Ok(CarbonTrace {
            start,
            step_minutes,
            values,
            region: region.into(),
        })
    }

    /// Hourly trace starting at the epoch; convenient for tests.
    pub fn hourly(values: Vec<f64>) -> Result<Self> {
        Self::new(0, 60, values, "synthetic")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ci(&self, t: Slot) -> Result<f64> {
        self.values.get(t).copied().ok_or_else(|| {
            Error::Range(format!(
                "slot {t} is beyond the carbon trace ({} samples)",
                self.values.len()
            ))
        })
    }

    /// The trace re-based so that slot 0 is `offset`.
    pub fn shifted(&self, offset: usize) -> Result<CarbonTrace> {
        if offset >= self.values.len() {
            return Err(Error::Range(format!(
                "offset {offset} is beyond the carbon trace ({} samples)",
                self.values.len()
            )));
        }
        Ok(CarbonTrace {
            start: self.start + offset as i64 * self.step_minutes as i64 * 60,
            step_minutes: self.step_minutes,
            values: self.values[offset..].to_vec(),
            region: self.region.clone(),
        })
    }

    /// Every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<CarbonTrace> {
        Self::new(
            self.start,
            self.step_minutes,
            self.values.iter().map(|v| v * factor).collect(),
            self.region.clone(),
        )
    }
}

/// A constant allocation of `servers` during `[start, end)` of a slot, as
/// fractions of the slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub servers: u32,
}

impl Segment {
    pub fn full(servers: u32) -> Self {
        Segment {
            start: 0.0,
            end: 1.0,
            servers,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Allocation of one job: slot → segments, chronologically ordered.
pub type JobAllocation = BTreeMap<Slot, Vec<Segment>>;

/// Where in its final slot a job reaches 100% progress.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Completion {
    pub slot: Slot,
    /// Δt sub-slots of the final slot used, counted from 1.
    pub subslots: u32,
}

/// Per-job, per-slot server allocations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Schedule {
    allocations: BTreeMap<JobId, JobAllocation>,
}

impl Schedule {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocate `servers` to `job` for the whole of `slot` (0 clears it).
    pub fn set(&mut self, job: JobId, slot: Slot, servers: u32) {
        if servers == 0 {
            self.clear(job, slot);
        } else {
            self.set_segments(job, slot, vec![Segment::full(servers)]);
        }
    }

    pub fn set_segments(&mut self, job: JobId, slot: Slot, segments: Vec<Segment>) {
        let segments: Vec<Segment> = segments
            .into_iter()
            .filter(|s| s.servers > 0 && s.end - s.start > TIME_EPS)
            .collect();
        if segments.is_empty() {
            self.clear(job, slot);
        } else {
            self.allocations.entry(job).or_default().insert(slot, segments);
        }
    }

    fn clear(&mut self, job: JobId, slot: Slot) {
        if let Some(alloc) = self.allocations.get_mut(&job) {
            alloc.remove(&slot);
            if alloc.is_empty() {
                self.allocations.remove(&job);
            }
        }
    }

    /// Peak server count of `job` in `slot`.
    pub fn allocation(&self, job: JobId, slot: Slot) -> u32 {
        self.segments(job, slot)
            .iter()
            .map(|s| s.servers)
            .max()
            .unwrap_or(0)
    }

    pub fn segments(&self, job: JobId, slot: Slot) -> &[Segment] {
        self.allocations
            .get(&job)
            .and_then(|a| a.get(&slot))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn job(&self, job: JobId) -> Option<&JobAllocation> {
        self.allocations.get(&job)
    }

    pub fn iter(&self) -> impl Iterator<Item = (JobId, &JobAllocation)> {
        self.allocations.iter().map(|(id, a)| (*id, a))
    }

    pub fn is_empty(&self) -> bool {
        self.allocations.is_empty()
    }

    /// One past the last slot with any allocation.
    pub fn horizon(&self) -> Slot {
        self.allocations
            .values()
            .filter_map(|a| a.keys().next_back())
            .map(|t| t + 1)
            .max()
            .unwrap_or(0)
    }

    /// Largest number of servers in use at any instant of `slot`.
    pub fn occupancy(&self, slot: Slot) -> u32 {
        let segs: Vec<Segment> = self
            .allocations
            .values()
            .filter_map(|a| a.get(&slot))
            .flatten()
            .copied()
            .collect();
        peak_concurrency(&segs)
    }

    /// Server-slots used in `slot` (integral of the occupancy).
    pub fn server_time(&self, slot: Slot) -> f64 {
        self.allocations
            .values()
            .filter_map(|a| a.get(&slot))
            .flatten()
            .map(|s| s.servers as f64 * s.duration())
            .sum()
    }

    /// The first slot whose occupancy exceeds `max_capacity`, if any.
    pub fn capacity_violation(&self, max_capacity: u32) -> Option<(Slot, u32)> {
        (0..self.horizon())
            .map(|t| (t, self.occupancy(t)))
            .find(|&(_, m)| m > max_capacity)
    }

    /// Copy with each job's allocation cut at the Δt sub-slot where it completes.
    pub fn trim_to_completion(&self, jobs: &[Job], steps_per_slot: u32) -> Schedule {
        let mut out = self.clone();
        for job in jobs {
            let Some(c) = completion(job, self, steps_per_slot) else {
                continue;
            };
            let Some(alloc) = out.allocations.get_mut(&job.id) else {
                continue;
            };
            alloc.retain(|&t, _| t <= c.slot);
            let cut = c.subslots as f64 / steps_per_slot as f64;
            if let Some(segs) = alloc.get_mut(&c.slot) {
                segs.retain(|s| s.start < cut - TIME_EPS);
                for s in segs.iter_mut() {
                    s.end = s.end.min(cut);
                }
            }
        }
        out
    }
}

fn peak_concurrency(segs: &[Segment]) -> u32 {
    let mut points: Vec<f64> = segs.iter().flat_map(|s| [s.start, s.end]).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    points
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            segs.iter()
                .filter(|s| s.start <= mid && mid < s.end)
                .map(|s| s.servers)
                .sum::<u32>()
        })
        .max()
        .unwrap_or(0)
}

/// Work rate of `servers` under `profile`; allocations outside the profile
/// contribute nothing.
fn rate(profile: &ScalingProfile, servers: u32) -> f64 {
    profile.cumulative_throughput(servers).unwrap_or(0.0)
}

/// Fraction of the job's work completed by the schedule (may exceed 1).
pub fn progress(job: &Job, schedule: &Schedule) -> f64 {
    let Some(alloc) = schedule.job(job.id) else {
        return 0.0;
    };
    let work: f64 = alloc
        .values()
        .flatten()
        .map(|s| rate(&job.profile, s.servers) * s.duration())
        .sum();
    work / job.length
}

/// The Δt sub-slot at which the job's progress first reaches 100%.
pub fn completion(job: &Job, schedule: &Schedule, steps_per_slot: u32) -> Option<Completion> {
    let alloc = schedule.job(job.id)?;
    let steps = steps_per_slot.max(1);
    let width = 1.0 / steps as f64;
    let mut work = 0.0;
    for (&slot, segs) in alloc {
        for step in 0..steps {
            let lo = step as f64 * width;
            let hi = lo + width;
            for s in segs {
                let overlap = (s.end.min(hi) - s.start.max(lo)).max(0.0);
                work += rate(&job.profile, s.servers) * overlap;
            }
            if work >= job.length - WORK_EPS {
                return Some(Completion {
                    slot,
                    subslots: step + 1,
                });
            }
        }
    }
    None
}

/// Exact time (in slots) at which the job's accumulated work reaches its length.
pub fn finish_time(job: &Job, schedule: &Schedule) -> Option<f64> {
    let alloc = schedule.job(job.id)?;
    let mut work = 0.0;
    for (&slot, segs) in alloc {
        for s in segs {
            let r = rate(&job.profile, s.servers);
            let gained = r * s.duration();
            if r > 0.0 && work + gained >= job.length - WORK_EPS {
                let dt = ((job.length - work) / r).clamp(0.0, s.duration());
                return Some(slot as f64 + s.start + dt);
            }
            work += gained;
        }
    }
    None
}

/// Energy in kWh of running `job` at scale `k` for `active_fraction` of a slot.
pub fn slot_energy(job: &Job, k: u32, active_fraction: f64, cluster: &ClusterConfig) -> Result<f64> {
    if k == 0 {
        return Ok(0.0);
    }
    if !(0.0..=1.0).contains(&active_fraction) {
        return Err(Error::Range(format!(
            "active fraction {active_fraction} outside [0, 1]"
        )));
    }
    let net_gb = job.profile.net_gb_per_slot(k).ok_or_else(|| {
        Error::Range(format!(
            "scale {k} outside [{}, {}] for job {}",
            job.profile.k_min(),
            job.profile.k_max(),
            job.id
        ))
    })?;
    let compute = k as f64 * cluster.power_per_server_kw * cluster.slot_hours();
    // W/Gbps × Gb transferred = joules; 3.6e6 J per kWh.
    let network = cluster.eta_net_w_per_gbps * net_gb / 3.6e6;
    Ok((compute + network) * active_fraction)
}

/// Energy per slot (kWh) of one job's allocation, including switching energy.
pub fn job_energy_by_slot(
    job: &Job,
    alloc: &JobAllocation,
    cluster: &ClusterConfig,
) -> Result<BTreeMap<Slot, f64>> {
    let mut energy = BTreeMap::new();
    let mut prev: Option<(f64, u32)> = None;
    for (&slot, segs) in alloc {
        for s in segs {
            *energy.entry(slot).or_insert(0.0) += slot_energy(job, s.servers, s.duration(), cluster)?;
            if cluster.switch_cost_kwh > 0.0 {
                let begin = slot as f64 + s.start;
                if let Some((prev_end, prev_k)) = prev {
                    if begin > prev_end + TIME_EPS {
                        // paused in between: one event to suspend, one to resume
                        let pause_slot = ((prev_end - TIME_EPS).floor().max(0.0)) as Slot;
                        *energy.entry(pause_slot).or_insert(0.0) += cluster.switch_cost_kwh;
                        *energy.entry(slot).or_insert(0.0) += cluster.switch_cost_kwh;
                    } else if prev_k != s.servers {
                        *energy.entry(slot).or_insert(0.0) += cluster.switch_cost_kwh;
                    }
                }
            }
            prev = Some((slot as f64 + s.end, s.servers));
        }
    }
    Ok(energy)
}

/// Carbon (g·CO₂eq) of one job's allocation.
pub fn job_carbon(
    job: &Job,
    alloc: &JobAllocation,
    trace: &CarbonTrace,
    cluster: &ClusterConfig,
) -> Result<f64> {
    job_energy_by_slot(job, alloc, cluster)?
        .into_iter()
        .map(|(t, e)| Ok(e * trace.ci(t)?))
        .sum()
}

/// Total operational carbon of a schedule in g·CO₂eq.
pub fn total_carbon(
    schedule: &Schedule,
    jobs: &[Job],
    trace: &CarbonTrace,
    cluster: &ClusterConfig,
) -> Result<f64> {
    let by_id: BTreeMap<JobId, &Job> = jobs.iter().map(|j| (j.id, j)).collect();
    let mut total = 0.0;
    for (id, alloc) in schedule.iter() {
        let job = by_id
            .get(&id)
            .ok_or_else(|| Error::invalid("schedule", format!("job {id} is not in the job list")))?;
        total += job_carbon(job, alloc, trace, cluster)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(p: &[f64]) -> Arc<ScalingProfile> {
        Arc::new(ScalingProfile::new("p", 1, p.to_vec(), vec![0.0; p.len()]).unwrap())
    }

    fn job(id: u64, length: f64, p: &[f64]) -> Job {
        Job::new(JobId(id), 0, length, 0, 0, profile(p)).unwrap()
    }

    #[test]
    fn cumulative_throughput_is_running_sum() {
        assert_eq!(profile(&[1.0]).cumulative_throughput(1).unwrap(), 1.0);
        let p = profile(&[1.0, 0.8, 0.6]);
        assert!((p.cumulative_throughput(3).unwrap() - 2.4).abs() < 1e-12);
        assert_eq!(p.cumulative_throughput(0).unwrap(), 0.0);
        assert!(matches!(p.cumulative_throughput(4), Err(Error::Range(_))));
    }

    #[test]
    fn profile_invariants_are_enforced() {
        assert!(ScalingProfile::new("a", 1, vec![0.9], vec![0.0]).is_err());
        assert!(ScalingProfile::new("a", 1, vec![1.0, 1.1], vec![0.0, 0.0]).is_err());
        assert!(ScalingProfile::new("a", 1, vec![1.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(ScalingProfile::new("a", 1, vec![1.0, 0.5], vec![0.0]).is_err());
        assert!(ScalingProfile::new("a", 1, vec![1.0, 0.5], vec![0.0, -1.0]).is_err());
        assert!(ScalingProfile::new("a", 0, vec![1.0], vec![0.0]).is_err());
        let flat = ScalingProfile::new("a", 1, vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert!(!flat.is_strictly_decreasing());
        assert!(profile(&[1.0, 0.5]).is_strictly_decreasing());
    }

    #[test]
    fn elasticity_scalar() {
        assert_eq!(profile(&[1.0]).elasticity(), 0.0);
        assert_eq!(profile(&[1.0, 1.0, 1.0]).elasticity(), 1.0);
        assert!((profile(&[1.0, 0.8, 0.4]).elasticity() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn progress_examples() {
        let j = job(1, 2.0, &[1.0]);
        let mut s = Schedule::new();
        s.set(j.id, 0, 1);
        s.set(j.id, 1, 1);
        assert_eq!(progress(&j, &s), 1.0);

        let j = job(2, 2.0, &[1.0, 0.8]);
        let mut s = Schedule::new();
        s.set(j.id, 0, 2);
        assert!((progress(&j, &s) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn completion_at_half_slot() {
        let j = job(1, 1.0, &[1.0, 1.0]);
        let mut s = Schedule::new();
        s.set(j.id, 0, 2);
        assert_eq!(completion(&j, &s, 2), Some(Completion { slot: 0, subslots: 1 }));
        assert_eq!(finish_time(&j, &s), Some(0.5));
        let trimmed = s.trim_to_completion(std::slice::from_ref(&j), 2);
        assert_eq!(trimmed.segments(j.id, 0), &[Segment { start: 0.0, end: 0.5, servers: 2 }]);
        assert!((progress(&j, &trimmed) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slot_energy_examples() {
        let cluster = ClusterConfig::with_capacity(4);
        let j = job(1, 1.0, &[1.0, 0.5]);
        assert!((slot_energy(&j, 2, 1.0, &cluster).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(slot_energy(&j, 0, 1.0, &cluster).unwrap(), 0.0);
        assert!(slot_energy(&j, 3, 1.0, &cluster).is_err());
        assert!(slot_energy(&j, 1, 1.5, &cluster).is_err());

        let p = Arc::new(ScalingProfile::new("n", 1, vec![1.0], vec![3600.0]).unwrap());
        let j = Job::new(JobId(2), 0, 1.0, 0, 0, p).unwrap();
        assert!((slot_energy(&j, 1, 1.0, &cluster).unwrap() - 0.1001).abs() < 1e-12);
    }

    #[test]
    fn total_carbon_examples() {
        let cluster = ClusterConfig::with_capacity(4);
        let trace = CarbonTrace::hourly(vec![100.0, 300.0]).unwrap();
        let j = job(1, 2.0, &[1.0]);
        let mut s = Schedule::new();
        s.set(j.id, 0, 1);
        s.set(j.id, 1, 1);
        let c = total_carbon(&s, std::slice::from_ref(&j), &trace, &cluster).unwrap();
        assert!((c - 40.0).abs() < 1e-9);
        assert_eq!(total_carbon(&Schedule::new(), &[], &trace, &cluster).unwrap(), 0.0);

        s.set(j.id, 2, 1);
        assert!(matches!(
            total_carbon(&s, std::slice::from_ref(&j), &trace, &cluster),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn switch_events_are_billed() {
        let mut cluster = ClusterConfig::with_capacity(4);
        cluster.switch_cost_kwh = 1.0;
        let trace = CarbonTrace::hourly(vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let j = job(1, 4.0, &[1.0, 0.5]);
        let mut s = Schedule::new();
        s.set(j.id, 0, 1);
        s.set(j.id, 1, 2); // rescale: 1 event in slot 1
        s.set(j.id, 3, 2); // pause after slot 1, resume in slot 3
        let alloc = s.job(j.id).unwrap();
        let e = job_energy_by_slot(&j, alloc, &cluster).unwrap();
        assert!((e[&0] - 0.1).abs() < 1e-12);
        assert!((e[&1] - (0.2 + 2.0)).abs() < 1e-12);
        assert!((e[&3] - (0.2 + 1.0)).abs() < 1e-12);
        let c = job_carbon(&j, alloc, &trace, &cluster).unwrap();
        assert!((c - (0.1 * 10.0 + 2.2 * 20.0 + 1.2 * 40.0)).abs() < 1e-9);
    }

    #[test]
    fn occupancy_accounts_for_sequential_segments() {
        let mut s = Schedule::new();
        s.set_segments(JobId(1), 0, vec![Segment { start: 0.0, end: 0.5, servers: 2 }]);
        s.set_segments(JobId(2), 0, vec![Segment { start: 0.5, end: 1.0, servers: 2 }]);
        assert_eq!(s.occupancy(0), 2);
        s.set(JobId(3), 0, 1);
        assert_eq!(s.occupancy(0), 3);
        assert_eq!(s.capacity_violation(2), Some((0, 3)));
        assert!((s.server_time(0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn queue_routing_uses_half_open_ranges() {
        let c = ClusterConfig::with_capacity(10);
        c.validate().unwrap();
        assert_eq!(c.route(1.0), Some(0));
        assert_eq!(c.route(2.0), Some(0));
        assert_eq!(c.route(2.5), Some(1));
        assert_eq!(c.route(12.0), Some(1));
        assert_eq!(c.route(13.0), Some(2));
        assert_eq!(c.route(0.0), None);
    }

    #[test]
    fn config_validation() {
        let mut c = ClusterConfig::with_capacity(10);
        c.delta_t_minutes = 7;
        assert!(c.validate().is_err());
        let mut c = ClusterConfig::with_capacity(0);
        assert!(c.validate().is_err());
        c.max_capacity = 1;
        c.queues[2].max_length = Some(100.0);
        assert!(c.validate().is_err());
    }
}

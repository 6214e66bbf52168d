//! Discrete-time engine: slots of `slot_minutes`, each split into Δt steps.
//!
//! Per step the engine processes completions, arrivals, the force-run guard,
//! the policy's allocation and progress accrual, in that order. Policies fix
//! their capacity and threshold at slot start.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::learning::{extract_cases, mean_lengths, KnowledgeBase, LearningConfig, RANK_HORIZON};
use crate::model::{
    finish_time, job_energy_by_slot, total_carbon, CarbonTrace, ClusterConfig, Job, JobId, Schedule,
    Segment, Slot, WORK_EPS,
};
use crate::oracle::retry_with_extension;
use crate::policy::{force_run_guard, Progress, ProvisioningParams};
use crate::traces::noisy_forecast_window;

/// Version of the outcome document layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Carbon-intensity forecasts as seen by policies.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Forecaster {
    /// Relative Gaussian noise; 0 gives the true values.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Forecaster {
    pub fn window(&self, trace: &CarbonTrace, t: Slot, horizon: usize) -> Result<Vec<f64>> {
        noisy_forecast_window(trace, t, horizon, self.noise_sigma, self.seed)
    }
}

/// A job in the system with its accumulated work.
#[derive(Clone, Copy, Debug)]
pub struct ActiveJob<'a> {
    pub job: &'a Job,
    pub work_done: f64,
    /// Allocation during the previous step (0 if paused or new).
    pub current: u32,
    pub started: bool,
}

impl ActiveJob<'_> {
    pub fn remaining_work(&self) -> f64 {
        (self.job.length - self.work_done).max(0.0)
    }
}

/// What a policy sees at a decision point.
pub struct View<'a> {
    /// Time in slots.
    pub now: f64,
    pub slot: Slot,
    pub step: u32,
    pub trace: &'a CarbonTrace,
    pub cluster: &'a ClusterConfig,
    pub forecaster: &'a Forecaster,
    /// Jobs that have arrived and are incomplete, ordered by (arrival, id).
    pub active: &'a [ActiveJob<'a>],
    /// Jobs that must run at least at `k_min` to still meet their deadline.
    pub forced: &'a BTreeSet<JobId>,
}

/// Capacity and threshold fixed for one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotPlan {
    pub capacity: u32,
    pub rho: f64,
    pub mode: String,
}

pub trait Policy {
    fn name(&self) -> &'static str;

    fn on_arrival(&mut self, _job: &Job, _view: &View<'_>) -> Result<()> {
        Ok(())
    }

    fn begin_slot(&mut self, view: &View<'_>) -> Result<SlotPlan>;

    /// Servers per job for the coming Δt step; omitted jobs are paused.
    fn allocate(&mut self, view: &View<'_>, plan: &SlotPlan) -> BTreeMap<JobId, u32>;

    fn on_completion(&mut self, _job: &Job, _finish: f64) {}

    fn on_overdue(&mut self, _job: &Job, _at: f64) {}
}

/// One row of the per-slot decision log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecisionRow {
    pub slot: Slot,
    pub ci: f64,
    pub mode: String,
    pub m_t: u32,
    pub rho: f64,
    pub forced_jobs: usize,
    /// `id:k` pairs (peak servers in the slot), `;`-separated.
    pub allocations: String,
    pub energy_kwh: f64,
}

pub fn write_log<W: Write>(rows: &[DecisionRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "ci", "mode", "m_t", "rho", "forced_jobs", "allocations", "energy_kwh"])?;
    for r in rows {
        w.write_record([
            r.slot.to_string(),
            r.ci.to_string(),
            r.mode.clone(),
            r.m_t.to_string(),
            r.rho.to_string(),
            r.forced_jobs.to_string(),
            r.allocations.clone(),
            r.energy_kwh.to_string(),
        ])?;
    }
    w.flush()
}

/// Result of running one policy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyReport {
    pub policy: String,
    pub total_carbon_g: f64,
    pub savings_pct: f64,
    /// Mean over completed jobs of `max(0, finish - arrival - length)`.
    pub mean_wait_hours: f64,
    /// Mean over all jobs of the time past the deadline (unfinished jobs
    /// are counted up to the end of the horizon).
    pub mean_delay_violation_hours: f64,
    /// Share of jobs finishing late or not at all.
    pub violation_rate: f64,
    /// Used server time over the whole horizon divided by cluster size × horizon.
    pub mean_utilization: f64,
    pub jobs: usize,
    pub completed: usize,
    pub unfinished: usize,
    pub flags: Vec<String>,
    #[serde(skip)]
    pub schedule: Schedule,
    #[serde(skip)]
    pub log: Vec<DecisionRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimOutcome {
    pub schema_version: u32,
    pub seed: u64,
    pub horizon_slots: usize,
    pub config: serde_json::Value,
    pub policies: Vec<PolicyReport>,
}

impl SimOutcome {
    pub fn report(&self, policy: PolicyKind) -> Option<&PolicyReport> {
        self.policies.iter().find(|r| r.policy == policy.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serialises") + "\n"
    }

    /// `outcome.json` plus one `<policy>_log.csv` per policy.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("outcome.json");
        std::fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))?;
        for r in &self.policies {
            let path = dir.join(format!("{}_log.csv", r.policy));
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_log(&r.log, file).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Policies that `compare` can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    CarbonAgnostic,
    Gaia,
    WaitAwhile,
    CarbonScaler,
    CarbonFlex,
    Oracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::CarbonAgnostic,
        PolicyKind::Gaia,
        PolicyKind::WaitAwhile,
        PolicyKind::CarbonScaler,
        PolicyKind::CarbonFlex,
        PolicyKind::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::CarbonAgnostic => "carbon-agnostic",
            PolicyKind::Gaia => "gaia",
            PolicyKind::WaitAwhile => "wait-awhile",
            PolicyKind::CarbonScaler => "carbonscaler",
            PolicyKind::CarbonFlex => "carbonflex",
            PolicyKind::Oracle => "oracle",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.map(|p| p.as_str()).join(", ")
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim())
            .ok_or_else(|| format!("unknown policy `{s}`; valid policies: {}", Self::valid_names()))
    }
}

/// Last slot the engine simulates (exclusive): the trace must still hold a
/// day of forecast after it.
pub fn horizon(trace: &CarbonTrace) -> usize {
    trace.len().saturating_sub(RANK_HORIZON)
}

struct RunState {
    work: f64,
    started: bool,
    current: u32,
    forced: bool,
    overdue: bool,
    finish: Option<f64>,
    /// slot -> servers per step
    steps: BTreeMap<Slot, Vec<u32>>,
}

/// Run `policy` over `jobs` and report its metrics (savings left at 0).
pub fn simulate(
    policy: &mut dyn Policy,
    jobs: &[Job],
    trace: &CarbonTrace,
    cluster: &ClusterConfig,
    forecaster: &Forecaster,
) -> Result<PolicyReport> {
    let steps = cluster.steps_per_slot();
    let dt = 1.0 / steps as f64;
    let end = horizon(trace);
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by_key(|&i| (jobs[i].arrival, jobs[i].id));
    let mut state: Vec<RunState> = jobs
        .iter()
        .map(|_| RunState {
            work: 0.0,
            started: false,
            current: 0,
            forced: false,
            overdue: false,
            finish: None,
            steps: BTreeMap::new(),
        })
        .collect();
    let mut next_arrival = 0;
    let mut active: Vec<usize> = Vec::new();
    let mut plans: Vec<(SlotPlan, usize)> = Vec::new();
    let empty_forced = BTreeSet::new();

    for slot in 0..end {
        if active.is_empty() && next_arrival == order.len() {
            break;
        }
        let mut plan = SlotPlan {
            capacity: 0,
            rho: 0.0,
            mode: String::new(),
        };
        let mut forced_in_slot = BTreeSet::new();
        for step in 0..steps {
            let now = slot as f64 + step as f64 * dt;
            if step == 0 {
                while next_arrival < order.len() && jobs[order[next_arrival]].arrival <= slot {
                    let i = order[next_arrival];
                    next_arrival += 1;
                    active.push(i);
                    let snapshot = snapshot(jobs, &state, &active);
                    let view = View {
                        now,
                        slot,
                        step,
                        trace,
                        cluster,
                        forecaster,
                        active: &snapshot,
                        forced: &empty_forced,
                    };
                    policy.on_arrival(&jobs[i], &view)?;
                }
            }
            for &i in &active {
                let s = &mut state[i];
                if !s.overdue && jobs[i].deadline() as f64 <= now + 1e-9 {
                    s.overdue = true;
                    policy.on_overdue(&jobs[i], now);
                }
            }
            let snap = snapshot(jobs, &state, &active);
            let progress: Vec<Progress> = snap
                .iter()
                .map(|a| Progress {
                    job: a.job,
                    remaining_work: a.remaining_work(),
                })
                .collect();
            // evaluated one step ahead so a job that waits now can still finish
            for id in force_run_guard(now, &progress, dt) {
                if let Some(&i) = active.iter().find(|&&i| jobs[i].id == id) {
                    state[i].forced = true;
                }
            }
            let forced: BTreeSet<JobId> = active
                .iter()
                .filter(|&&i| state[i].forced)
                .map(|&i| jobs[i].id)
                .collect();
            forced_in_slot.extend(forced.iter().copied());
            let view = View {
                now,
                slot,
                step,
                trace,
                cluster,
                forecaster,
                active: &snap,
                forced: &forced,
            };
            if step == 0 {
                plan = policy.begin_slot(&view)?;
            }
            let alloc = policy.allocate(&view, &plan);

            let mut total = 0u32;
            for (id, &k) in &alloc {
                let Some(&i) = active.iter().find(|&&i| jobs[i].id == *id) else {
                    return Err(Error::invalid(
                        "allocation",
                        format!("{} allocated job {id}, which is not in the system", policy.name()),
                    ));
                };
                if !jobs[i].profile.allows(k) {
                    return Err(Error::invalid(
                        "allocation",
                        format!("{} gave job {id} {k} servers", policy.name()),
                    ));
                }
                total += k;
            }
            if total > cluster.max_capacity {
                return Err(Error::invalid(
                    "allocation",
                    format!(
                        "{} used {total} servers, more than the cluster's {}",
                        policy.name(),
                        cluster.max_capacity
                    ),
                ));
            }

            let mut completed = Vec::new();
            for &i in &active {
                let job = &jobs[i];
                let k = alloc.get(&job.id).copied().unwrap_or(0);
                let s = &mut state[i];
                s.current = k;
                if k == 0 {
                    continue;
                }
                s.started = true;
                s.steps.entry(slot).or_insert_with(|| vec![0; steps as usize])[step as usize] = k;
                s.work += job.profile.cumulative_throughput(k)? * dt;
                if s.work >= job.length - WORK_EPS {
                    let finish = now + dt;
                    s.finish = Some(finish);
                    completed.push(i);
                }
            }
            if !completed.is_empty() {
                active.retain(|i| !completed.contains(i));
                for i in completed {
                    policy.on_completion(&jobs[i], state[i].finish.expect("just completed"));
                }
            }
        }
        plans.push((plan, forced_in_slot.len()));
    }

    let mut schedule = Schedule::new();
    for (job, s) in jobs.iter().zip(&state) {
        for (&slot, ks) in &s.steps {
            schedule.set_segments(job.id, slot, merge_steps(ks));
        }
    }
    let finish: BTreeMap<JobId, f64> = jobs
        .iter()
        .zip(&state)
        .filter_map(|(j, s)| s.finish.map(|f| (j.id, f)))
        .collect();
    evaluate(policy.name(), jobs, schedule, &finish, &plans, end, trace, cluster)
}

fn snapshot<'a>(jobs: &'a [Job], state: &[RunState], active: &[usize]) -> Vec<ActiveJob<'a>> {
    active
        .iter()
        .map(|&i| ActiveJob {
            job: &jobs[i],
            work_done: state[i].work,
            current: state[i].current,
            started: state[i].started,
        })
        .collect()
}

fn merge_steps(ks: &[u32]) -> Vec<Segment> {
    let n = ks.len() as f64;
    let mut segs: Vec<Segment> = Vec::new();
    let mut i = 0;
    while i < ks.len() {
        let mut j = i;
        while j < ks.len() && ks[j] == ks[i] {
            j += 1;
        }
        if ks[i] > 0 {
            segs.push(Segment {
                start: i as f64 / n,
                end: j as f64 / n,
                servers: ks[i],
            });
        }
        i = j;
    }
    segs
}

/// Metrics and decision log of a finished schedule.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    name: &str,
    jobs: &[Job],
    schedule: Schedule,
    finish: &BTreeMap<JobId, f64>,
    plans: &[(SlotPlan, usize)],
    horizon: usize,
    trace: &CarbonTrace,
    cluster: &ClusterConfig,
) -> Result<PolicyReport> {
    let by_id: BTreeMap<JobId, &Job> = jobs.iter().map(|j| (j.id, j)).collect();
    let mut energy = vec![0.0; horizon];
    let mut peaks: Vec<Vec<(JobId, u32)>> = vec![Vec::new(); horizon];
    for (id, alloc) in schedule.iter() {
        let job = by_id
            .get(&id)
            .ok_or_else(|| Error::invalid("schedule", format!("job {id} is not in the job list")))?;
        for (t, e) in job_energy_by_slot(job, alloc, cluster)? {
            energy[t] += e;
        }
        for (&t, segs) in alloc {
            peaks[t].push((id, segs.iter().map(|s| s.servers).max().unwrap_or(0)));
        }
    }
    let mut carbon = total_carbon(&schedule, jobs, trace, cluster)?;
    let mut log = Vec::with_capacity(horizon);
    let mut utilization = 0.0;
    for t in 0..horizon {
        let ci = trace.ci(t)?;
        let (mode, m_t, rho, forced) = match plans.get(t) {
            Some((p, forced)) => (p.mode.clone(), p.capacity, p.rho, *forced),
            None => ("idle".to_string(), 0, 0.0, 0),
        };
        let used = schedule.server_time(t);
        if cluster.idle_power_kw > 0.0 {
            let idle = (m_t as f64 - used).max(0.0) * cluster.idle_power_kw * cluster.slot_hours();
            energy[t] += idle;
            carbon += idle * ci;
        }
        if cluster.max_capacity > 0 {
            utilization += used / cluster.max_capacity as f64;
        }
        let allocations = peaks[t]
            .iter()
            .map(|(id, k)| format!("{id}:{k}"))
            .collect::<Vec<_>>()
            .join(";");
        log.push(DecisionRow {
            slot: t,
            ci,
            mode,
            m_t,
            rho,
            forced_jobs: forced,
            allocations,
            energy_kwh: energy[t],
        });
    }

    let hours = cluster.slot_hours();
    let mut waits = Vec::new();
    let mut late = 0usize;
    let mut overrun = 0.0;
    for j in jobs {
        let deadline = j.deadline() as f64;
        match finish.get(&j.id) {
            Some(&f) => {
                waits.push((f - j.arrival as f64 - j.length).max(0.0) * hours);
                if f > deadline + 1e-9 {
                    late += 1;
                    overrun += (f - deadline) * hours;
                }
            }
            None => {
                late += 1;
                overrun += (horizon as f64 - deadline).max(0.0) * hours;
            }
        }
    }
    let n = jobs.len();
    let mean = |v: f64, d: usize| if d == 0 { 0.0 } else { v / d as f64 };
    let mut flags = Vec::new();
    if cluster.max_capacity == 0 && n > 0 {
        flags.push("zero-capacity".to_string());
    }
    if finish.len() < n {
        flags.push(format!("unfinished-jobs:{}", n - finish.len()));
    }
    Ok(PolicyReport {
        policy: name.to_string(),
        total_carbon_g: carbon,
        savings_pct: 0.0,
        mean_wait_hours: mean(waits.iter().sum(), waits.len()),
        mean_delay_violation_hours: mean(overrun, n),
        violation_rate: mean(late as f64, n),
        mean_utilization: mean(utilization, horizon),
        jobs: n,
        completed: finish.len(),
        unfinished: n - finish.len(),
        flags,
        schedule,
        log,
    })
}

/// Summary of a learning run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LearningSummary {
    pub cases: usize,
    pub replays: usize,
    pub feasible_replays: usize,
    /// Total extra slack slots granted across replays.
    pub extensions: usize,
}

/// Replay the oracle over the history at every offset and learn its decisions.
pub fn run_learning(
    historical_jobs: &[Job],
    trace: &CarbonTrace,
    cluster: &ClusterConfig,
    config: &LearningConfig,
) -> Result<(KnowledgeBase, LearningSummary)> {
    let window = config.window_slots;
    let mut offsets = config.replay_offsets.clone();
    offsets.sort_unstable();
    offsets.dedup();
    let mut kb = KnowledgeBase::new(config.window_days, cluster.slots_per_day());
    kb.mean_lengths = mean_lengths(historical_jobs, cluster.queues.len());
    let jobs: Vec<Job> = historical_jobs
        .iter()
        .filter(|j| j.arrival < window)
        .cloned()
        .collect();
    let mut summary = LearningSummary {
        cases: 0,
        replays: offsets.len(),
        feasible_replays: 0,
        extensions: 0,
    };
    let mut last_error = None;
    for &offset in &offsets {
        let needed = offset + window + RANK_HORIZON + 1;
        if needed > trace.len() {
            return Err(Error::Range(format!(
                "replay at offset {offset} needs {needed} trace samples, the trace has {}",
                trace.len()
            )));
        }
        let shifted = trace.shifted(offset)?;
        let result = retry_with_extension(&jobs, &shifted, cluster, config.max_extension_rounds);
        summary.extensions += result.extensions.values().sum::<usize>();
        let extended: Vec<Job> = jobs
            .iter()
            .map(|j| j.with_extra_slack(result.extensions.get(&j.id).copied().unwrap_or(0)))
            .collect();
        match extract_cases(&result, &shifted, &extended, cluster.queues.len(), 0..window, offset) {
            Ok(cases) => {
                summary.feasible_replays += 1;
                kb.refresh(cases, offset + window)?;
            }
            Err(e) => last_error = Some(e),
        }
    }
    if summary.feasible_replays == 0 {
        return Err(last_error.unwrap_or_else(|| Error::Infeasible("no replay offsets given".into())));
    }
    summary.cases = kb.len();
    Ok((kb, summary))
}

/// Run the CarbonFlex policy over the evaluation jobs.
pub fn run_execution(
    eval_jobs: &[Job],
    trace: &CarbonTrace,
    cluster: &ClusterConfig,
    kb: &KnowledgeBase,
    params: &ProvisioningParams,
    forecaster: &Forecaster,
) -> Result<PolicyReport> {
    if kb.is_empty() {
        return Err(Error::EmptyKnowledgeBase);
    }
    let mut policy = crate::policy::CarbonFlex::new(kb, params.clone(), cluster.queues.len());
    simulate(&mut policy, eval_jobs, trace, cluster, forecaster)
}

/// Offline oracle on the evaluation window, reported like a policy.
pub fn run_oracle(
    jobs: &[Job],
    trace: &CarbonTrace,
    cluster: &ClusterConfig,
    max_rounds: usize,
) -> Result<PolicyReport> {
    let end = horizon(trace);
    let clipped = CarbonTrace::new(trace.start, trace.step_minutes, trace.values()[..end].to_vec(), trace.region.clone())?;
    let result = retry_with_extension(jobs, &clipped, cluster, max_rounds);
    let finish: BTreeMap<JobId, f64> = jobs
        .iter()
        .filter_map(|j| finish_time(j, &result.schedule).map(|f| (j.id, f)))
        .collect();
    let plans: Vec<(SlotPlan, usize)> = result
        .capacity
        .iter()
        .zip(&result.threshold)
        .map(|(&m, &rho)| {
            (
                SlotPlan {
                    capacity: m,
                    rho,
                    mode: "oracle".into(),
                },
                0,
            )
        })
        .collect();
    let mut report = evaluate("oracle", jobs, result.schedule, &finish, &plans, end, trace, cluster)?;
    if !result.feasible {
        report.flags.push(format!("oracle-infeasible:{}", result.remaining.len()));
    }
    Ok(report)
}

/// Inputs shared by all policies of one comparison.
#[derive(Clone, Debug, Default)]
pub struct CompareSettings {
    pub params: ProvisioningParams,
    pub forecaster: Forecaster,
    /// Historical mean length per queue for the length-estimating baselines.
    pub mean_lengths: Vec<f64>,
    pub max_extension_rounds: usize,
    pub seed: u64,
}

fn run_policy(
    kind: PolicyKind,
    jobs: &[Job],
    trace: &CarbonTrace,
    cluster: &ClusterConfig,
    kb: Option<&KnowledgeBase>,
    settings: &CompareSettings,
) -> Result<PolicyReport> {
    use crate::baselines::{CarbonAgnostic, CarbonScaler, Gaia, WaitAwhile};
    let f = &settings.forecaster;
    match kind {
        PolicyKind::CarbonAgnostic => simulate(&mut CarbonAgnostic, jobs, trace, cluster, f),
        PolicyKind::Gaia => simulate(&mut Gaia::new(settings.mean_lengths.clone()), jobs, trace, cluster, f),
        PolicyKind::WaitAwhile => simulate(&mut WaitAwhile::default(), jobs, trace, cluster, f),
        PolicyKind::CarbonScaler => {
            simulate(&mut CarbonScaler::new(settings.mean_lengths.clone()), jobs, trace, cluster, f)
        }
        PolicyKind::CarbonFlex => {
            let kb = kb.ok_or(Error::EmptyKnowledgeBase)?;
            run_execution(jobs, trace, cluster, kb, &settings.params, f)
        }
        PolicyKind::Oracle => run_oracle(jobs, trace, cluster, settings.max_extension_rounds.max(1)),
    }
}

/// Run the requested policies on identical inputs. The carbon-agnostic run
/// is always performed as the savings denominator; rows appear in the order
/// of [`PolicyKind::ALL`].
pub fn compare(
    eval_jobs: &[Job],
    trace: &CarbonTrace,
    cluster: &ClusterConfig,
    kb: Option<&KnowledgeBase>,
    policies: &[PolicyKind],
    settings: &CompareSettings,
) -> Result<SimOutcome> {
    let requested: BTreeSet<PolicyKind> = policies.iter().copied().collect();
    if requested.contains(&PolicyKind::CarbonFlex) && kb.is_none_or(|k| k.is_empty()) {
        return Err(Error::EmptyKnowledgeBase);
    }
    let mut kinds: Vec<PolicyKind> = requested.iter().copied().collect();
    if !requested.contains(&PolicyKind::CarbonAgnostic) {
        kinds.insert(0, PolicyKind::CarbonAgnostic);
    }
    let results: Vec<Result<PolicyReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|&kind| scope.spawn(move || run_policy(kind, eval_jobs, trace, cluster, kb, settings)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("simulation", "policy run panicked"))))
            .collect()
    });
    let mut reports = results.into_iter().collect::<Result<Vec<_>>>()?;
    let baseline = reports[0].total_carbon_g;
    for r in &mut reports {
        r.savings_pct = if baseline > 0.0 {
            100.0 * (1.0 - r.total_carbon_g / baseline)
        } else {
            0.0
        };
    }
    if !requested.contains(&PolicyKind::CarbonAgnostic) {
        reports.remove(0);
    }
    Ok(SimOutcome {
        schema_version: SCHEMA_VERSION,
        seed: settings.seed,
        horizon_slots: horizon(trace),
        config: serde_json::Value::Null,
        policies: reports,
    })
}

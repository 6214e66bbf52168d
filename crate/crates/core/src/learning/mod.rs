//! State featurisation, case extraction from oracle runs, and the
//! nearest-neighbour knowledge base of (state → capacity, threshold) cases.

pub mod kdtree;

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{finish_time, CarbonTrace, Job, Slot};
use crate::oracle::{OracleResult, IDLE_THRESHOLD};
use crate::traces::forecast_window;
use kdtree::KdTree;

/// Forecast slots used for the rank feature.
pub const RANK_HORIZON: usize = 24;

/// Settings of the learning phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningConfig {
    /// Slots of history replayed per offset.
    pub window_slots: usize,
    /// Start offsets (slots into the carbon trace) of the replays.
    pub replay_offsets: Vec<usize>,
    /// Cases older than this are aged out.
    pub window_days: u32,
    /// Deadline-extension rounds granted to the oracle.
    pub max_extension_rounds: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            window_slots: 168,
            replay_offsets: vec![0],
            window_days: 14,
            max_extension_rounds: 48,
        }
    }
}

/// Featurised cluster state at the start of a slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub ci: f64,
    pub ci_gradient: f64,
    pub ci_rank: f64,
    /// Incomplete (running or paused) jobs per queue.
    pub queue_lengths: Vec<u32>,
    pub mean_elasticity: f64,
}

impl SystemState {
    /// Features in the fixed order `ci, gradient, rank, q_1..q_Q, elasticity`.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(4 + self.queue_lengths.len());
        f.push(self.ci);
        f.push(self.ci_gradient);
        f.push(self.ci_rank);
        f.extend(self.queue_lengths.iter().map(|&q| q as f64));
        f.push(self.mean_elasticity);
        f
    }

    fn from_features(f: &[f64]) -> Option<Self> {
        if f.len() < 4 {
            return None;
        }
        let q = &f[3..f.len() - 1];
        Some(SystemState {
            ci: f[0],
            ci_gradient: f[1],
            ci_rank: f[2],
            queue_lengths: q.iter().map(|&v| v as u32).collect(),
            mean_elasticity: f[f.len() - 1],
        })
    }
}

/// Fraction of the forecast values strictly below `current`.
pub fn ci_rank(current: f64, forecast: &[f64]) -> f64 {
    if forecast.is_empty() {
        return 0.0;
    }
    forecast.iter().filter(|&&v| v < current).count() as f64 / forecast.len() as f64
}

/// State at slot `t` given the jobs in the system (arrived and incomplete).
///
/// The rank compares `CI_t` with the [`RANK_HORIZON`] slots after `t`.
pub fn featurize(t: Slot, trace: &CarbonTrace, jobs: &[&Job], num_queues: usize) -> Result<SystemState> {
    let forecast = forecast_window(trace, t + 1, RANK_HORIZON)?;
    featurize_with_forecast(t, trace, forecast, jobs, num_queues)
}

/// [`featurize`] with an explicitly supplied (possibly noisy) forecast.
pub fn featurize_with_forecast(
    t: Slot,
    trace: &CarbonTrace,
    forecast: &[f64],
    jobs: &[&Job],
    num_queues: usize,
) -> Result<SystemState> {
    let ci = trace.ci(t)?;
    let ci_gradient = if t == 0 { 0.0 } else { ci - trace.ci(t - 1)? };
    let mut queue_lengths = vec![0u32; num_queues];
    for j in jobs {
        if let Some(q) = queue_lengths.get_mut(j.queue) {
            *q += 1;
        }
    }
    let mean_elasticity = if jobs.is_empty() {
        0.0
    } else {
        jobs.iter().map(|j| j.profile.elasticity()).sum::<f64>() / jobs.len() as f64
    };
    Ok(SystemState {
        ci,
        ci_gradient,
        ci_rank: ci_rank(ci, forecast),
        queue_lengths,
        mean_elasticity,
    })
}

/// One learned decision.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub state: SystemState,
    pub capacity: u32,
    pub threshold: f64,
    /// Slot (on the replayed timeline) the case describes.
    pub created_at: Slot,
}

/// One case per slot of `window`, featurised under the oracle's own job
/// population. `created_offset` shifts `created_at` onto a common timeline.
pub fn extract_cases(
    result: &OracleResult,
    trace: &CarbonTrace,
    jobs: &[Job],
    num_queues: usize,
    window: Range<Slot>,
    created_offset: Slot,
) -> Result<Vec<Case>> {
    if !result.feasible {
        return Err(Error::Infeasible(format!(
            "cannot learn from an oracle run with {} unfinished jobs",
            result.remaining.len()
        )));
    }
    let finish: Vec<f64> = jobs
        .iter()
        .map(|j| finish_time(j, &result.schedule).unwrap_or(f64::INFINITY))
        .collect();
    window
        .map(|t| {
            let population: Vec<&Job> = jobs
                .iter()
                .zip(&finish)
                .filter(|(j, &f)| j.arrival <= t && f > t as f64 + 1e-9)
                .map(|(j, _)| j)
                .collect();
            Ok(Case {
                state: featurize(t, trace, &population, num_queues)?,
                capacity: result.capacity_at(t),
                threshold: result.threshold_at(t),
                created_at: created_offset + t,
            })
        })
        .collect()
}

/// Aging, normalisation and nearest-neighbour search over learned cases.
#[derive(Clone, Debug)]
pub struct KnowledgeBase {
    cases: Vec<Case>,
    normalization: Vec<(f64, f64)>,
    pub window_days: u32,
    pub slots_per_day: usize,
    /// Historical mean job length per queue (slots).
    pub mean_lengths: Vec<f64>,
    index: KdTree,
}

impl KnowledgeBase {
    pub fn new(window_days: u32, slots_per_day: usize) -> Self {
        KnowledgeBase {
            cases: Vec::new(),
            normalization: Vec::new(),
            window_days,
            slots_per_day,
            mean_lengths: Vec::new(),
            index: KdTree::default(),
        }
    }

    pub fn cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Per-feature `(min, max)` over the stored cases.
    pub fn normalization(&self) -> &[(f64, f64)] {
        &self.normalization
    }

    fn window_slots(&self) -> usize {
        self.window_days as usize * self.slots_per_day
    }

    /// Drop cases at least `window_days` old at `now`, add `new_cases`, and
    /// rebuild normalisation and index.
    pub fn refresh(&mut self, new_cases: Vec<Case>, now: Slot) -> Result<()> {
        let window = self.window_slots();
        self.cases.retain(|c| c.created_at + window > now);
        if let Some(dim) = self.cases.first().or(new_cases.first()).map(|c| c.state.features().len()) {
            if let Some(bad) = new_cases.iter().find(|c| c.state.features().len() != dim) {
                return Err(Error::invalid(
                    "knowledge base",
                    format!("case with {} features, expected {dim}", bad.state.features().len()),
                ));
            }
        }
        self.cases.extend(new_cases);
        self.rebuild();
        Ok(())
    }

    fn rebuild(&mut self) {
        let features: Vec<Vec<f64>> = self.cases.iter().map(|c| c.state.features()).collect();
        self.normalization = match features.first() {
            None => Vec::new(),
            Some(first) => (0..first.len())
                .map(|i| {
                    features.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| {
                        (lo.min(f[i]), hi.max(f[i]))
                    })
                })
                .collect(),
        };
        let points = features.iter().map(|f| self.scale(f)).collect();
        self.index = KdTree::build(points);
    }

    fn scale(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(&self.normalization)
            .map(|(&v, &(lo, hi))| {
                if hi > lo {
                    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Min-max normalised features, clamped to `[0, 1]`.
    pub fn normalize(&self, state: &SystemState) -> Vec<f64> {
        self.scale(&state.features())
    }

    /// The `kk` nearest cases with their distances, nearest first.
    pub fn query(&self, state: &SystemState, kk: usize) -> Result<Vec<(&Case, f64)>> {
        if self.cases.is_empty() {
            return Err(Error::EmptyKnowledgeBase);
        }
        let dim = self.normalization.len();
        if state.features().len() != dim {
            return Err(Error::invalid(
                "state",
                format!("{} features, knowledge base has {dim}", state.features().len()),
            ));
        }
        Ok(self
            .index
            .nearest(&self.normalize(state), kk)
            .into_iter()
            .map(|(i, d)| (&self.cases[i], d))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(file).map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let join = |v: Vec<String>| v.join(";");
        writeln!(out, "# carbonflex knowledge base v1")?;
        writeln!(out, "# window_days={}", self.window_days)?;
        writeln!(out, "# slots_per_day={}", self.slots_per_day)?;
        writeln!(
            out,
            "# mean_lengths={}",
            join(self.mean_lengths.iter().map(f64::to_string).collect())
        )?;
        writeln!(
            out,
            "# normalization={}",
            join(self.normalization.iter().map(|(lo, hi)| format!("{lo}:{hi}")).collect())
        )?;
        let queues = self.cases.first().map(|c| c.state.queue_lengths.len()).unwrap_or(self.mean_lengths.len());
        let mut header = String::from("created_at,capacity,threshold,ci,ci_gradient,ci_rank");
        for q in 0..queues {
            let _ = write!(header, ",queue_{q}");
        }
        header.push_str(",mean_elasticity");
        writeln!(out, "{header}")?;
        for c in &self.cases {
            let features: Vec<String> = c.state.features().iter().map(f64::to_string).collect();
            writeln!(out, "{},{},{},{}", c.created_at, c.capacity, c.threshold, features.join(","))?;
        }
        out.flush()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file, &path.display().to_string())
    }

    pub fn read_from<R: Read>(input: R, name: &str) -> Result<Self> {
        let mut kb = KnowledgeBase::new(14, 24);
        let mut header_seen = false;
        let mut cases = Vec::new();
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let row = i + 1;
            let line = line.map_err(|e| Error::parse(name, row, e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let Some((key, value)) = meta.trim().split_once('=') else {
                    continue;
                };
                let bad = || Error::parse(name, row, format!("bad `{key}` value `{value}`"));
                match key.trim() {
                    "window_days" => kb.window_days = value.trim().parse().map_err(|_| bad())?,
                    "slots_per_day" => kb.slots_per_day = value.trim().parse().map_err(|_| bad())?,
                    "mean_lengths" => {
                        kb.mean_lengths = value
                            .split(';')
                            .filter(|s| !s.trim().is_empty())
                            .map(|s| s.trim().parse().map_err(|_| bad()))
                            .collect::<Result<_>>()?;
                    }
                    _ => {}
                }
                continue;
            }
            if !header_seen {
                header_seen = true;
                if !line.starts_with("created_at,") {
                    return Err(Error::parse(name, row, "missing case header"));
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let num = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|_| Error::parse(name, row, format!("cannot parse `{s}`")))
            };
            if fields.len() < 7 {
                return Err(Error::parse(name, row, "too few columns"));
            }
            let created_at = fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::parse(name, row, "bad created_at"))?;
            let capacity = fields[1]
                .trim()
                .parse()
                .map_err(|_| Error::parse(name, row, "bad capacity"))?;
            let threshold = num(fields[2])?;
            if !(threshold > 0.0 && threshold <= 1.0 || threshold == IDLE_THRESHOLD) {
                return Err(Error::parse(name, row, format!("threshold {threshold} outside (0, 1] and not idle")));
            }
            let features: Vec<f64> = fields[3..].iter().map(|s| num(s)).collect::<Result<_>>()?;
            let state = SystemState::from_features(&features)
                .ok_or_else(|| Error::parse(name, row, "too few features"))?;
            cases.push(Case {
                state,
                capacity,
                threshold,
                created_at,
            });
        }
        kb.cases = cases;
        if let Some(dim) = kb.cases.first().map(|c| c.state.features().len()) {
            if kb.cases.iter().any(|c| c.state.features().len() != dim) {
                return Err(Error::parse(name, 0, "cases have differing feature counts"));
            }
        }
        kb.rebuild();
        Ok(kb)
    }
}

/// Mean length per queue of a historical job set (0 for empty queues).
pub fn mean_lengths(jobs: &[Job], num_queues: usize) -> Vec<f64> {
    let mut sum = vec![0.0; num_queues];
    let mut count = vec![0usize; num_queues];
    for j in jobs {
        if j.queue < num_queues {
            sum[j.queue] += j.length;
            count[j.queue] += 1;
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

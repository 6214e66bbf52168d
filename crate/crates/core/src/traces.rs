//! Loading, validating, writing and synthesising carbon, profile and job traces.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Poisson};

use crate::error::{Error, Result};
use crate::model::{CarbonTrace, ClusterConfig, Job, JobId, ScalingProfile};

/// Profiles by id.
pub type ProfileSet = BTreeMap<String, Arc<ScalingProfile>>;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn name_of(path: &Path) -> String {
    path.display().to_string()
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, name: &str, expected: &[&str]) -> Result<()> {
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(name, 1, e.to_string()))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::parse(
            name,
            1,
            format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn records<'a, R: Read + 'a>(
    rdr: &'a mut csv::Reader<R>,
    name: &str,
) -> impl Iterator<Item = Result<(usize, csv::StringRecord)>> + 'a {
    let name = name.to_string();
    rdr.records().enumerate().map(move |(i, rec)| {
        let rec = rec.map_err(|e| Error::parse(name.clone(), i + 2, e.to_string()))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        Ok((line, rec))
    })
}

fn field<T: FromStr>(rec: &csv::StringRecord, idx: usize, col: &str, name: &str, line: usize) -> Result<T> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| Error::parse(name, line, format!("missing column `{col}`")))?;
    raw.parse()
        .map_err(|_| Error::parse(name, line, format!("cannot parse {col} `{raw}`")))
}

/// Unix seconds from RFC 3339, `YYYY-MM-DD HH:MM[:SS]` (UTC) or integer seconds.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    if let Ok(secs) = raw.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

fn format_timestamp(secs: i64) -> String {
    match DateTime::from_timestamp(secs, 0) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => secs.to_string(),
    }
}

pub fn load_carbon_trace(path: &Path) -> Result<CarbonTrace> {
    let region = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_carbon_trace(open(path)?, &name_of(path), region)
}

/// Parse `timestamp,ci_g_per_kwh` rows with a uniform step.
pub fn parse_carbon_trace<R: Read>(input: R, name: &str, region: impl Into<String>) -> Result<CarbonTrace> {
    let mut rdr = reader(input);
    check_header(&mut rdr, name, &["timestamp", "ci_g_per_kwh"])?;
    let mut stamps: Vec<i64> = Vec::new();
    let mut values = Vec::new();
    let mut step: Option<i64> = None;
    for rec in records(&mut rdr, name) {
        let (line, rec) = rec?;
        let raw = rec.get(0).unwrap_or("");
        let ts = parse_timestamp(raw)
            .ok_or_else(|| Error::parse(name, line, format!("cannot parse timestamp `{raw}`")))?;
        let ci: f64 = field(&rec, 1, "ci_g_per_kwh", name, line)?;
        if !ci.is_finite() || ci < 0.0 {
            return Err(Error::parse(name, line, format!("carbon intensity {ci} is negative or not finite")));
        }
        if let Some(&prev) = stamps.last() {
            let diff = ts - prev;
            if diff == 0 {
                return Err(Error::parse(name, line, format!("duplicate timestamp `{raw}`")));
            }
            if diff < 0 {
                return Err(Error::parse(name, line, format!("timestamp `{raw}` goes backwards")));
            }
            match step {
                None => {
                    if diff % 60 != 0 {
                        return Err(Error::parse(name, line, "step is not a whole number of minutes"));
                    }
                    step = Some(diff);
                }
                Some(s) if s != diff => {
                    return Err(Error::parse(
                        name,
                        line,
                        format!("gap or irregular step: {} min after {} min steps", diff / 60, s / 60),
                    ));
                }
                Some(_) => {}
            }
        }
        stamps.push(ts);
        values.push(ci);
    }
    let start = stamps.first().copied().unwrap_or(0);
    let step_minutes = step.map(|s| (s / 60) as u32).unwrap_or(60);
    CarbonTrace::new(start, step_minutes, values, region)
}

pub fn write_carbon_trace(trace: &CarbonTrace, path: &Path) -> Result<()> {
    let file = create(path)?;
    write_carbon_trace_to(trace, file).map_err(|e| Error::io(path, e))
}

pub fn write_carbon_trace_to<W: Write>(trace: &CarbonTrace, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "ci_g_per_kwh"])?;
    let step = trace.step_minutes as i64 * 60;
    for (i, v) in trace.values().iter().enumerate() {
        w.write_record([format_timestamp(trace.start + i as i64 * step), v.to_string()])?;
    }
    w.flush()
}

/// The next `horizon` true values starting at slot `t` (a perfect forecast).
pub fn forecast_window(trace: &CarbonTrace, t: usize, horizon: usize) -> Result<&[f64]> {
    if t >= trace.len() || t + horizon > trace.len() {
        return Err(Error::Range(format!(
            "forecast [{t}, {}) is beyond the carbon trace ({} samples)",
            t + horizon,
            trace.len()
        )));
    }
    Ok(&trace.values()[t..t + horizon])
}

/// A forecast perturbed by multiplicative Gaussian noise `N(0, sigma)`,
/// reproducible for a given `(seed, t)`. Values are clamped at zero.
pub fn noisy_forecast_window(
    trace: &CarbonTrace,
    t: usize,
    horizon: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let exact = forecast_window(trace, t, horizon)?;
    if sigma == 0.0 {
        return Ok(exact.to_vec());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::invalid("forecast noise", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    Ok(exact
        .iter()
        .map(|v| (v * (1.0 + normal.sample(&mut rng))).max(0.0))
        .collect())
}

/// Four single-server-minimum profiles spanning no to high elasticity:
/// `inelastic`, `low` (k ≤ 4, decay 0.5), `medium` (k ≤ 6, decay 0.75) and
/// `high` (k ≤ 8, decay 0.9).
pub fn builtin_profiles() -> ProfileSet {
    let build = [
        ScalingProfile::inelastic("inelastic", 1),
        ScalingProfile::geometric("low", 1, 4, 0.5),
        ScalingProfile::geometric("medium", 1, 6, 0.75),
        ScalingProfile::geometric("high", 1, 8, 0.9),
    ];
    build
        .into_iter()
        .map(|p| {
            let p = p.expect("built-in profiles are valid");
            (p.id().to_string(), Arc::new(p))
        })
        .collect()
}

pub fn load_profiles(path: &Path) -> Result<ProfileSet> {
    parse_profiles(open(path)?, &name_of(path))
}

/// Parse `profile_id,k,marginal,net_gb_per_slot` rows; each profile's scales
/// must be listed contiguously in increasing `k`.
pub fn parse_profiles<R: Read>(input: R, name: &str) -> Result<ProfileSet> {
    let mut rdr = reader(input);
    check_header(&mut rdr, name, &["profile_id", "k", "marginal", "net_gb_per_slot"])?;
    struct Pending {
        line: usize,
        k_min: u32,
        marginal: Vec<f64>,
        net: Vec<f64>,
    }
    let mut pending: BTreeMap<String, Pending> = BTreeMap::new();
    for rec in records(&mut rdr, name) {
        let (line, rec) = rec?;
        let id = rec.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::parse(name, line, "empty profile_id"));
        }
        let k: u32 = field(&rec, 1, "k", name, line)?;
        let p: f64 = field(&rec, 2, "marginal", name, line)?;
        let net: f64 = field(&rec, 3, "net_gb_per_slot", name, line)?;
        match pending.get_mut(&id) {
            None => {
                pending.insert(
                    id,
                    Pending {
                        line,
                        k_min: k,
                        marginal: vec![p],
                        net: vec![net],
                    },
                );
            }
            Some(entry) => {
                let expected = entry.k_min + entry.marginal.len() as u32;
                if k != expected {
                    return Err(Error::parse(
                        name,
                        line,
                        format!("profile `{id}`: expected k = {expected}, found {k}"),
                    ));
                }
                entry.marginal.push(p);
                entry.net.push(net);
            }
        }
    }
    pending
        .into_iter()
        .map(|(id, p)| {
            let profile = ScalingProfile::new(id.clone(), p.k_min, p.marginal, p.net)
                .map_err(|e| Error::parse(name, p.line, e.to_string()))?;
            Ok((id, Arc::new(profile)))
        })
        .collect()
}

pub fn write_profiles(profiles: &ProfileSet, path: &Path) -> Result<()> {
    let file = create(path)?;
    write_profiles_to(profiles, file).map_err(|e| Error::io(path, e))
}

pub fn write_profiles_to<W: Write>(profiles: &ProfileSet, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["profile_id", "k", "marginal", "net_gb_per_slot"])?;
    for (id, p) in profiles {
        for (i, (m, net)) in p.marginals().iter().zip(p.net_volumes()).enumerate() {
            w.write_record([
                id.clone(),
                (p.k_min() + i as u32).to_string(),
                m.to_string(),
                net.to_string(),
            ])?;
        }
    }
    w.flush()
}

/// Build a job, routing it to its queue by length.
pub fn make_job(
    id: JobId,
    arrival: usize,
    length: f64,
    profile: Arc<ScalingProfile>,
    cluster: &ClusterConfig,
) -> Result<Job> {
    let queue = cluster.route(length).ok_or_else(|| {
        Error::invalid("job", format!("job {id}: length {length} maps to no queue"))
    })?;
    Job::new(id, arrival, length, queue, cluster.queues[queue].slack_slots, profile)
}

pub fn load_jobs(path: &Path, cluster: &ClusterConfig, profiles: &ProfileSet) -> Result<Vec<Job>> {
    parse_jobs(open(path)?, &name_of(path), cluster, profiles)
}

/// Parse `job_id,arrival_slot,length_slots,profile_id` rows.
pub fn parse_jobs<R: Read>(
    input: R,
    name: &str,
    cluster: &ClusterConfig,
    profiles: &ProfileSet,
) -> Result<Vec<Job>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, name, &["job_id", "arrival_slot", "length_slots", "profile_id"])?;
    let mut seen = std::collections::BTreeSet::new();
    let mut jobs = Vec::new();
    for rec in records(&mut rdr, name) {
        let (line, rec) = rec?;
        let id = JobId(field(&rec, 0, "job_id", name, line)?);
        let arrival: usize = field(&rec, 1, "arrival_slot", name, line)?;
        let length: f64 = field(&rec, 2, "length_slots", name, line)?;
        let profile_id = rec.get(3).unwrap_or("");
        if !seen.insert(id) {
            return Err(Error::parse(name, line, format!("duplicate job id {id}")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::parse(name, line, format!("job {id} has non-positive length {length}")));
        }
        let profile = profiles
            .get(profile_id)
            .ok_or_else(|| Error::UnknownProfile(profile_id.to_string()))?
            .clone();
        jobs.push(make_job(id, arrival, length, profile, cluster).map_err(|e| Error::parse(name, line, e.to_string()))?);
    }
    Ok(jobs)
}

pub fn write_jobs(jobs: &[Job], path: &Path) -> Result<()> {
    let file = create(path)?;
    write_jobs_to(jobs, file).map_err(|e| Error::io(path, e))
}

pub fn write_jobs_to<W: Write>(jobs: &[Job], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["job_id", "arrival_slot", "length_slots", "profile_id"])?;
    for j in jobs {
        w.write_record([
            j.id.to_string(),
            j.arrival.to_string(),
            j.length.to_string(),
            j.profile.id().to_string(),
        ])?;
    }
    w.flush()
}

/// Job length distribution in slots; samples are rounded to whole slots (≥ 1).
#[derive(Clone, Debug, PartialEq)]
pub enum LengthDist {
    Fixed(f64),
    Uniform { min: f64, max: f64 },
    Exponential { mean: f64 },
    LogNormal { median: f64, sigma: f64 },
}

impl FromStr for LengthDist {
    type Err = Error;

    /// `fixed:L`, `uniform:MIN:MAX`, `exponential:MEAN` or `lognormal:MEDIAN:SIGMA`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::invalid(
                "length distribution",
                format!("`{s}`; expected fixed:L, uniform:MIN:MAX, exponential:MEAN or lognormal:MEDIAN:SIGMA"),
            )
        };
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or("");
        let nums: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if nums.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(bad());
        }
        let dist = match (kind, nums.as_slice()) {
            ("fixed", [l]) => LengthDist::Fixed(*l),
            ("uniform", [min, max]) if min <= max => LengthDist::Uniform { min: *min, max: *max },
            ("exponential", [mean]) => LengthDist::Exponential { mean: *mean },
            ("lognormal", [median, sigma]) => LengthDist::LogNormal {
                median: *median,
                sigma: *sigma,
            },
            _ => return Err(bad()),
        };
        Ok(dist)
    }
}

impl LengthDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let raw = match *self {
            LengthDist::Fixed(l) => l,
            LengthDist::Uniform { min, max } => {
                if min == max {
                    min
                } else {
                    rng.random_range(min..=max)
                }
            }
            LengthDist::Exponential { mean } => Exp::new(1.0 / mean).map(|d| d.sample(rng)).unwrap_or(mean),
            LengthDist::LogNormal { median, sigma } => LogNormal::new(median.ln(), sigma)
                .map(|d| d.sample(rng))
                .unwrap_or(median),
        };
        raw.round().max(1.0)
    }
}

/// Parameters of the synthetic job generator.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    /// Mean arrivals per slot (Poisson).
    pub rate: f64,
    pub slots: usize,
    pub lengths: LengthDist,
    /// Longest allowed job; longer samples are clipped.
    pub max_length: Option<f64>,
    /// Profiles assigned uniformly at random.
    pub profiles: Vec<Arc<ScalingProfile>>,
    pub seed: u64,
}

/// Poisson arrivals with i.i.d. lengths and profiles; deterministic per seed.
pub fn synthesize_jobs(spec: &SynthSpec, cluster: &ClusterConfig) -> Result<Vec<Job>> {
    if !(spec.rate.is_finite() && spec.rate >= 0.0) {
        return Err(Error::invalid("synthetic trace", format!("rate {} must be non-negative", spec.rate)));
    }
    if spec.profiles.is_empty() {
        return Err(Error::invalid("synthetic trace", "no profiles to draw from"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let arrivals = if spec.rate > 0.0 {
        Some(Poisson::new(spec.rate).map_err(|e| Error::invalid("synthetic trace", e.to_string()))?)
    } else {
        None
    };
    let mut jobs = Vec::new();
    let mut next_id = 0u64;
    for t in 0..spec.slots {
        let n = arrivals.as_ref().map(|d| d.sample(&mut rng) as u64).unwrap_or(0);
        for _ in 0..n {
            let mut length = spec.lengths.sample(&mut rng);
            if let Some(cap) = spec.max_length {
                length = length.min(cap.floor().max(1.0));
            }
            let profile = spec.profiles[rng.random_range(0..spec.profiles.len())].clone();
            jobs.push(make_job(JobId(next_id), t, length, profile, cluster)?);
            next_id += 1;
        }
    }
    Ok(jobs)
}

/// Offered load `Σ l_j · k_min / (M · T)`.
pub fn estimate_utilization(jobs: &[Job], max_capacity: u32, horizon: usize) -> f64 {
    if max_capacity == 0 || horizon == 0 {
        return 0.0;
    }
    let demand: f64 = jobs.iter().map(|j| j.length * j.profile.k_min() as f64).sum();
    demand / (max_capacity as f64 * horizon as f64)
}

/// Arrival rate whose expected offered load equals `target`, estimated from
/// a large independent sample of lengths and profiles.
pub fn rate_for_utilization(
    target: f64,
    max_capacity: u32,
    lengths: &LengthDist,
    max_length: Option<f64>,
    profiles: &[Arc<ScalingProfile>],
    seed: u64,
) -> Result<f64> {
    if !(target.is_finite() && target >= 0.0) {
        return Err(Error::invalid("synthetic trace", format!("target utilization {target}")));
    }
    if profiles.is_empty() {
        return Err(Error::invalid("synthetic trace", "no profiles to draw from"));
    }
    const SAMPLES: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5EED));
    let mut demand = 0.0;
    for _ in 0..SAMPLES {
        let mut l = lengths.sample(&mut rng);
        if let Some(cap) = max_length {
            l = l.min(cap.floor().max(1.0));
        }
        let p = &profiles[rng.random_range(0..profiles.len())];
        demand += l * p.k_min() as f64;
    }
    let per_job = demand / SAMPLES as f64;
    Ok(target * max_capacity as f64 / per_job)
}

/// Diurnal carbon trace: `mean · (1 + a·sin(2πt/period))` with `a = cov·√2`
/// (the coefficient of variation of a sampled sinusoid), optionally with
/// multiplicative Gaussian noise.
pub fn sinusoidal_trace(
    slots: usize,
    mean: f64,
    cov: f64,
    period: usize,
    phase: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<CarbonTrace> {
    let amplitude = cov * std::f64::consts::SQRT_2;
    if amplitude >= 1.0 || mean <= 0.0 || period == 0 {
        return Err(Error::invalid(
            "carbon trace",
            format!("mean {mean}, cov {cov}, period {period} do not give a positive sinusoid"),
        ));
    }
    let noise = Normal::new(0.0, noise_sigma.max(0.0))
        .map_err(|e| Error::invalid("carbon trace", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..slots)
        .map(|t| {
            let angle = 2.0 * std::f64::consts::PI * t as f64 / period as f64 + phase;
            let base = mean * (1.0 + amplitude * angle.sin());
            let eps = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (base * (1.0 + eps)).max(1.0)
        })
        .collect();
    CarbonTrace::new(0, 60, values, "synthetic")
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROFILES: &str = "profile_id,k,marginal,net_gb_per_slot\nflat,1,1.0,0\nel,1,1.0,0\nel,2,0.8,10\n";

    fn profiles() -> ProfileSet {
        parse_profiles(PROFILES.as_bytes(), "p.csv").unwrap()
    }

    #[test]
    fn carbon_trace_parses_and_rejects_bad_rows() {
        let ok = "timestamp,ci_g_per_kwh\n2024-01-01T00:00:00Z,10\n2024-01-01T01:00:00Z,20\n";
        let t = parse_carbon_trace(ok.as_bytes(), "c.csv", "r").unwrap();
        assert_eq!(t.values(), &[10.0, 20.0]);
        assert_eq!(t.step_minutes, 60);

        let neg = "timestamp,ci_g_per_kwh\n2024-01-01T00:00:00Z,10\n2024-01-01T01:00:00Z,-1\n";
        match parse_carbon_trace(neg.as_bytes(), "c.csv", "r") {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        let dup = "timestamp,ci_g_per_kwh\n0,10\n0,20\n";
        assert!(matches!(parse_carbon_trace(dup.as_bytes(), "c", "r"), Err(Error::Parse { row: 3, .. })));
        let gap = "timestamp,ci_g_per_kwh\n0,10\n3600,20\n10800,5\n";
        assert!(matches!(parse_carbon_trace(gap.as_bytes(), "c", "r"), Err(Error::Parse { row: 4, .. })));
        let naive = "timestamp,ci_g_per_kwh\n2024-01-01 00:00,10\n2024-01-01 00:30,20\n";
        assert_eq!(parse_carbon_trace(naive.as_bytes(), "c", "r").unwrap().step_minutes, 30);
    }

    #[test]
    fn year_long_hourly_trace() {
        let mut s = String::from("timestamp,ci_g_per_kwh\n");
        for i in 0..8760i64 {
            s.push_str(&format!("{},{}\n", 1_700_000_000 + i * 3600, 100 + i % 7));
        }
        let t = parse_carbon_trace(s.as_bytes(), "y", "r").unwrap();
        assert_eq!(t.len(), 8760);
        assert_eq!(t.step_minutes, 60);
    }

    #[test]
    fn forecast_slices() {
        let t = CarbonTrace::hourly(vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_eq!(forecast_window(&t, 0, 3).unwrap(), &[10.0, 20.0, 30.0]);
        assert!(forecast_window(&t, 4, 3).is_err());
        assert!(forecast_window(&t, 2, 3).is_err());
        assert_eq!(noisy_forecast_window(&t, 0, 3, 0.0, 9).unwrap(), vec![10.0, 20.0, 30.0]);
        let a = noisy_forecast_window(&t, 1, 3, 0.2, 9).unwrap();
        assert_eq!(a, noisy_forecast_window(&t, 1, 3, 0.2, 9).unwrap());
        assert_ne!(a, vec![20.0, 30.0, 40.0]);
    }

    #[test]
    fn jobs_route_to_queues() {
        let cluster = ClusterConfig::with_capacity(10);
        let csv = "job_id,arrival_slot,length_slots,profile_id\n1,0,1,flat\n2,3,12,el\n3,5,13,flat\n";
        let jobs = parse_jobs(csv.as_bytes(), "j", &cluster, &profiles()).unwrap();
        let got: Vec<(usize, usize)> = jobs.iter().map(|j| (j.queue, j.slack)).collect();
        assert_eq!(got, vec![(0, 6), (1, 24), (2, 48)]);
    }

    #[test]
    fn job_errors() {
        let cluster = ClusterConfig::with_capacity(10);
        let unknown = "job_id,arrival_slot,length_slots,profile_id\n1,0,1,nope\n";
        let err = parse_jobs(unknown.as_bytes(), "j", &cluster, &profiles()).unwrap_err();
        assert!(err.to_string().contains("nope"));
        let zero = "job_id,arrival_slot,length_slots,profile_id\n1,0,0,flat\n";
        assert!(parse_jobs(zero.as_bytes(), "j", &cluster, &profiles()).is_err());
    }

    #[test]
    fn profiles_must_be_contiguous() {
        let gap = "profile_id,k,marginal,net_gb_per_slot\na,1,1.0,0\na,3,0.5,0\n";
        assert!(matches!(parse_profiles(gap.as_bytes(), "p"), Err(Error::Parse { row: 3, .. })));
        let p = profiles();
        assert_eq!(p["el"].k_max(), 2);
        assert_eq!(p["el"].net_gb_per_slot(2), Some(10.0));
    }

    #[test]
    fn length_dist_parsing() {
        assert_eq!("fixed:3".parse::<LengthDist>().unwrap(), LengthDist::Fixed(3.0));
        assert!("gamma:2".parse::<LengthDist>().is_err());
        assert!("uniform:5:1".parse::<LengthDist>().is_err());
        assert!("exponential:-1".parse::<LengthDist>().is_err());
    }

    #[test]
    fn synthesis_is_deterministic_and_empty_at_rate_zero() {
        let cluster = ClusterConfig::with_capacity(10);
        let spec = SynthSpec {
            rate: 2.0,
            slots: 48,
            lengths: LengthDist::Exponential { mean: 4.0 },
            max_length: Some(48.0),
            profiles: profiles().into_values().collect(),
            seed: 1,
        };
        let a = synthesize_jobs(&spec, &cluster).unwrap();
        let b = synthesize_jobs(&spec, &cluster).unwrap();
        assert!(!a.is_empty());
        let key = |js: &[Job]| js.iter().map(|j| (j.id, j.arrival, j.length.to_bits(), j.profile.id().to_string())).collect::<Vec<_>>();
        assert_eq!(key(&a), key(&b));
        let empty = synthesize_jobs(&SynthSpec { rate: 0.0, ..spec }, &cluster).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn sinusoid_has_requested_cov() {
        let t = sinusoidal_trace(24 * 30, 300.0, 0.3, 24, 0.0, 0.0, 0).unwrap();
        let v = t.values();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!((var.sqrt() / mean - 0.3).abs() < 1e-6);
    }
}

use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use carbonflex::traces::{sinusoidal_trace, write_carbon_trace};
use carbonflex_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let len = cf_last_error_length();
    if len == 0 {
        return String::new();
    }
    let mut buf = vec![0 as c_char; len];
    let n = unsafe { cf_last_error_message(buf.as_mut_ptr(), len) };
    assert_eq!(n as usize, len - 1);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn path(p: &Path) -> CString {
    c(p.to_str().unwrap())
}

const JOBS: &str = "\
job_id,arrival_slot,length_slots,profile_id
1,0,3,high
2,1,1.5,low
3,4,6,medium
4,10,2,inelastic
5,20,4,high
";

struct Fixture {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
    config: *mut CfConfig,
    trace: *mut CfTrace,
    workload: *mut CfWorkload,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("c.toml"), "[cluster]\nmax_capacity = 8\n\n[learning]\nwindow_slots = 24\n").unwrap();
        std::fs::write(root.join("jobs.csv"), JOBS).unwrap();
        write_carbon_trace(&sinusoidal_trace(120, 300.0, 0.3, 24, 0.0, 0.0, 4).unwrap(), &root.join("ci.csv")).unwrap();
        let mut config = ptr::null_mut();
        let mut trace = ptr::null_mut();
        let mut workload = ptr::null_mut();
        unsafe {
            assert_eq!(cf_config_load(path(&root.join("c.toml")).as_ptr(), &mut config), CfStatus::Ok, "{}", last_error());
            assert_eq!(cf_trace_load(path(&root.join("ci.csv")).as_ptr(), &mut trace), CfStatus::Ok, "{}", last_error());
            assert_eq!(
                cf_workload_load(config, path(&root.join("jobs.csv")).as_ptr(), &mut workload),
                CfStatus::Ok,
                "{}",
                last_error()
            );
        }
        Fixture {
            _dir: dir,
            root,
            config,
            trace,
            workload,
        }
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            cf_workload_free(self.workload);
            cf_trace_free(self.trace);
            cf_config_free(self.config);
        }
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(cf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn handles_load_and_report_sizes() {
    let f = Fixture::new();
    unsafe {
        assert_eq!(cf_trace_len(f.trace), 120);
        assert_eq!(cf_workload_len(f.workload), 5);
        assert_eq!(cf_trace_len(ptr::null()), 0);
    }
    assert_eq!(cf_last_error_length(), 0);
}

#[test]
fn oracle_runs_and_exposes_slots() {
    let f = Fixture::new();
    let mut oracle = ptr::null_mut();
    unsafe {
        assert_eq!(cf_oracle_run(f.config, f.workload, f.trace, 48, &mut oracle), CfStatus::Ok);
        let mut feasible = false;
        let mut carbon = 0.0;
        assert_eq!(cf_oracle_feasible(oracle, &mut feasible), CfStatus::Ok);
        assert_eq!(cf_oracle_carbon_g(oracle, &mut carbon), CfStatus::Ok);
        assert!(feasible);
        assert!(carbon > 0.0);
        let slots = cf_oracle_slots(oracle);
        assert_eq!(slots, 120);
        let (mut m, mut rho) = (0u32, 0.0);
        let mut busy = 0;
        for t in 0..slots {
            assert_eq!(cf_oracle_slot(oracle, t, &mut m, &mut rho), CfStatus::Ok);
            assert!(m <= 8);
            busy += (m > 0) as usize;
        }
        assert!(busy > 0);
        assert_eq!(cf_oracle_slot(oracle, slots, &mut m, &mut rho), CfStatus::Range);
        assert!(last_error().contains("outside"));

        let slots_csv = f.root.join("slots.csv");
        let alloc_csv = f.root.join("alloc.csv");
        assert_eq!(cf_oracle_write_csvs(oracle, path(&slots_csv).as_ptr(), path(&alloc_csv).as_ptr()), CfStatus::Ok);
        assert!(slots_csv.exists() && alloc_csv.exists());
        cf_oracle_free(oracle);
    }
}

#[test]
fn kb_learn_save_load_and_compare() {
    let f = Fixture::new();
    let mut kb = ptr::null_mut();
    let mut outcome = ptr::null_mut();
    unsafe {
        assert_eq!(cf_kb_learn(f.config, f.workload, f.trace, &mut kb), CfStatus::Ok, "{}", last_error());
        assert_eq!(cf_kb_len(kb), 24);
        let kb_path = path(&f.root.join("kb.csv"));
        assert_eq!(cf_kb_save(kb, kb_path.as_ptr()), CfStatus::Ok);
        let mut reloaded = ptr::null_mut();
        assert_eq!(cf_kb_load(kb_path.as_ptr(), &mut reloaded), CfStatus::Ok);
        assert_eq!(cf_kb_len(reloaded), 24);
        cf_kb_free(kb);

        assert_eq!(cf_compare(f.config, f.workload, f.trace, reloaded, ptr::null(), &mut outcome), CfStatus::Ok, "{}", last_error());
        let mut json = ptr::null_mut();
        assert_eq!(cf_outcome_json(outcome, &mut json), CfStatus::Ok);
        let doc: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        cf_string_free(json);
        let names: Vec<&str> = doc["policies"].as_array().unwrap().iter().map(|p| p["policy"].as_str().unwrap()).collect();
        assert_eq!(names, ["carbon-agnostic", "gaia", "wait-awhile", "carbonscaler", "carbonflex", "oracle"]);
        assert_eq!(doc["config"]["experiment"]["cluster"]["max_capacity"], 8);

        let (mut carbon, mut savings) = (0.0, 0.0);
        assert_eq!(cf_outcome_policy(outcome, c("carbon-agnostic").as_ptr(), &mut carbon, &mut savings), CfStatus::Ok);
        assert_eq!(savings, 0.0);
        assert!(carbon > 0.0);
        assert_eq!(cf_outcome_policy(outcome, c("oracle").as_ptr(), &mut carbon, &mut savings), CfStatus::Ok);
        assert!(savings >= 0.0);

        let dir = f.root.join("out");
        assert_eq!(cf_outcome_write(outcome, path(&dir).as_ptr()), CfStatus::Ok);
        assert!(dir.join("outcome.json").exists());
        assert!(dir.join("carbonflex_log.csv").exists());
        cf_outcome_free(outcome);
        cf_kb_free(reloaded);
    }
}

#[test]
fn compare_selected_policies() {
    let f = Fixture::new();
    let mut outcome = ptr::null_mut();
    unsafe {
        let policies = c("gaia, oracle");
        assert_eq!(cf_compare(f.config, f.workload, f.trace, ptr::null(), policies.as_ptr(), &mut outcome), CfStatus::Ok);
        let (mut carbon, mut savings) = (0.0, 0.0);
        assert_eq!(cf_outcome_policy(outcome, c("gaia").as_ptr(), &mut carbon, &mut savings), CfStatus::Ok);
        assert_eq!(cf_outcome_policy(outcome, c("carbon-agnostic").as_ptr(), &mut carbon, &mut savings), CfStatus::Range);
        cf_outcome_free(outcome);

        let bad = c("gaia,edf");
        assert_eq!(cf_compare(f.config, f.workload, f.trace, ptr::null(), bad.as_ptr(), &mut outcome), CfStatus::Invalid);
        assert!(last_error().contains("edf"));
        let flex = c("carbonflex");
        assert_eq!(cf_compare(f.config, f.workload, f.trace, ptr::null(), flex.as_ptr(), &mut outcome), CfStatus::Infeasible);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut config = ptr::null_mut();
    let mut trace = ptr::null_mut();
    unsafe {
        assert_eq!(cf_config_load(ptr::null(), &mut config), CfStatus::NullPointer);
        assert!(last_error().contains("path"));
        assert_eq!(cf_config_load(c("/nonexistent/c.toml").as_ptr(), &mut config), CfStatus::Io);
        assert!(last_error().contains("/nonexistent/c.toml"));
        assert_eq!(cf_config_new(4, ptr::null_mut()), CfStatus::NullPointer);

        let invalid = [0x66u8, 0xff, 0x00];
        assert_eq!(cf_trace_load(invalid.as_ptr().cast(), &mut trace), CfStatus::InvalidUtf8);
        assert_eq!(cf_trace_from_values([1.0, -2.0].as_ptr(), 2, &mut trace), CfStatus::Invalid);
        assert!(trace.is_null());

        let mut buf = [0 as c_char; 2];
        assert_eq!(cf_last_error_message(buf.as_mut_ptr(), buf.len()), -1);

        // a successful call clears the message
        assert_eq!(cf_config_new(4, &mut config), CfStatus::Ok);
        assert_eq!(cf_last_error_length(), 0);
        cf_config_free(config);
    }
}

#[test]
fn unknown_profile_is_a_parse_error() {
    let f = Fixture::new();
    let jobs = f.root.join("bad.csv");
    std::fs::write(&jobs, "job_id,arrival_slot,length_slots,profile_id\n1,0,2,quantum\n").unwrap();
    let mut workload = ptr::null_mut();
    unsafe {
        assert_eq!(cf_workload_load(f.config, path(&jobs).as_ptr(), &mut workload), CfStatus::Parse);
    }
    assert!(last_error().contains("quantum"));
}

#[test]
fn free_accepts_null() {
    unsafe {
        cf_config_free(ptr::null_mut());
        cf_trace_free(ptr::null_mut());
        cf_workload_free(ptr::null_mut());
        cf_oracle_free(ptr::null_mut());
        cf_kb_free(ptr::null_mut());
        cf_outcome_free(ptr::null_mut());
        cf_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/carbonflex.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    let cc = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", "-"])
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .stdin(std::process::Stdio::piped())
        .spawn();
    if let Ok(mut child) = cc {
        use std::io::Write;
        child
            .stdin
            .take()
            .unwrap()
            .write_all(b"#include \"carbonflex.h\"\nint main(void) { return cf_version() == 0; }\n")
            .unwrap();
        assert!(child.wait().unwrap().success(), "header does not compile");
    }
}

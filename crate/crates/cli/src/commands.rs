use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::time::{Duration, Instant};

use rand::rngs::OsRng;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use ppre_core::bisg::{cross_entropy, MemberIdentity};
use ppre_core::dataset::{self, POPULATION_FILE, P2_VALUES_FILE, SELFID_FILE, TRUTH_FILE};
use ppre_core::estimators::{AggregateReport, EstimatorSpec};
use ppre_core::oracle::oracle_report;
use ppre_core::privatizer::{
    build_demographic_table, ClipConfig, DemographicRecord, DemographicTable, DpConfig, PosteriorMethod, RecordSource,
};
use ppre_core::protocol::{GovernancePolicy, KeyMode, P2Input, ProtocolError};
use ppre_core::session::{run_p1, run_p2, P1Params, P2Params, PartyOutcome, PhaseTimings, ThreadedSession};
use ppre_core::synth::{generate_scenario, p2_inputs, P2Config, P2Truth, ScenarioConfig};
use ppre_core::transport::Channel;
use ppre_core::ProbVector;

use crate::args::*;
use crate::exit::{io, CliResult, Failure, Status};

const GOVERNANCE_KEY_FILE: &str = "governance.key";

fn warn_keys(mode: KeyMode) {
    if mode.is_insecure() {
        eprintln!("warning: test-1024 uses a fixed, publicly known key; nothing in this session is private");
    }
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io(parent.display()))?;
    }
    fs::write(path, contents).map_err(io(path.display()))
}

fn emit_report(report: &AggregateReport, out: Option<&Path>) -> CliResult {
    let text = report.to_text();
    print!("{text}");
    if let Some(path) = out {
        write_file(path, text.as_bytes())?;
    }
    Ok(())
}

fn read_report(path: &Path) -> CliResult<AggregateReport> {
    let text = fs::read_to_string(path).map_err(io(path.display()))?;
    AggregateReport::from_text(&text).map_err(|e| Failure::new(Status::Input, format!("{}: {e}", path.display())))
}

fn timings_csv(party: &str, timings: &PhaseTimings) -> String {
    let mut out = String::from("party,phase,seconds\n");
    for (name, d) in &timings.0 {
        out.push_str(&format!("{party},{name},{:.6}\n", d.as_secs_f64()));
    }
    out
}

fn print_timings(party: &str, timings: &PhaseTimings) {
    for (name, d) in &timings.0 {
        eprintln!("{party} {name:<26} {:>10.3}s", d.as_secs_f64());
    }
    eprintln!("{party} {:<26} {:>10.3}s", "total", timings.total().as_secs_f64());
}

struct P1Data {
    population: Vec<MemberIdentity>,
    selfid_rows: usize,
    table: DemographicTable,
}

fn build_table(a: &PrivacyArgs) -> CliResult<P1Data> {
    let tables = dataset::load_census(&a.data)?;
    let population = dataset::load_population(&a.data.join(POPULATION_FILE))?;
    let selfid = dataset::load_selfid(&a.data.join(SELFID_FILE))?;
    let method = if a.first_names {
        if tables.firstnames.is_none() {
            return Err(Failure::new(Status::Input, "--first-names needs firstnames.csv in the data directory"));
        }
        PosteriorMethod::Bifsg
    } else {
        PosteriorMethod::Bisg
    };
    let dp = DpConfig::new(a.epsilon, a.seed)?;
    let clip = ClipConfig {
        threshold: (!a.derive_threshold).then_some(a.threshold),
        quantile: a.quantile,
        ..ClipConfig::default()
    };
    let table = build_demographic_table(&selfid, &population, &tables, method, &dp, &clip)?;
    Ok(P1Data { population, selfid_rows: selfid.len(), table })
}

fn values_path(data: &Path, values: Option<&PathBuf>) -> PathBuf {
    values.cloned().unwrap_or_else(|| data.join(P2_VALUES_FILE))
}

fn open_channel(a: &ChannelArgs) -> CliResult<Channel> {
    let mut ch = Channel::open(&a.channel_root, &a.session)?.with_poll_interval(Duration::from_millis(a.poll_ms.max(1)));
    if let Some(tap) = &a.tap {
        ch = ch.with_tap(tap)?;
    }
    Ok(ch)
}

fn policy(min_rows: usize, ledger: Option<&Path>) -> CliResult<GovernancePolicy> {
    let policy = GovernancePolicy::new(min_rows).map_err(|v| Failure::new(Status::Usage, v.to_string()))?;
    match ledger {
        Some(path) => policy.with_ledger_file(path).map_err(io(path.display())),
        None => Ok(policy),
    }
}

/// Reads the 32-byte key from `path`, creating it on first use.
fn governance_key(path: &Path) -> CliResult<[u8; 32]> {
    if path.exists() {
        let text = fs::read_to_string(path).map_err(io(path.display()))?;
        let mut key = [0u8; 32];
        hex::decode_to_slice(text.trim(), &mut key)
            .map_err(|e| Failure::new(Status::Input, format!("{}: expected 64 hex digits ({e})", path.display())))?;
        return Ok(key);
    }
    let mut key = [0u8; 32];
    OsRng.fill_bytes(&mut key);
    write_file(path, format!("{}\n", hex::encode(key)).as_bytes())?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(path, fs::Permissions::from_mode(0o600)).map_err(io(path.display()))?;
    }
    Ok(key)
}

pub fn gen(a: GenArgs) -> CliResult {
    let cfg = ScenarioConfig {
        n_surnames: a.surnames,
        n_zctas: a.zctas,
        concentration: a.concentration,
        selfid_coverage: a.selfid_coverage,
        p2: P2Config {
            overlap: a.p2_overlap,
            outsiders: a.p2_outsiders,
            ..ScenarioConfig::new(a.seed, a.members).p2
        },
        ..ScenarioConfig::new(a.seed, a.members)
    };
    let s = generate_scenario(&cfg).map_err(|e| Failure::new(Status::Usage, e.to_string()))?;
    fs::create_dir_all(&a.out).map_err(io(a.out.display()))?;
    dataset::save_census(&s.census, &a.out)?;
    dataset::save_population(&s.population.members, &a.out.join(POPULATION_FILE))?;
    dataset::save_selfid(&s.selfid, &a.out.join(SELFID_FILE))?;
    dataset::save_p2_values(&s.p2, &a.out.join(P2_VALUES_FILE))?;
    dataset::save_truth(&s.population.members, &s.population.truth, &a.out.join(TRUTH_FILE))?;
    println!(
        "wrote {} members, {} Self-ID rows and {} P2 rows to {}",
        s.population.members.len(),
        s.selfid.len(),
        s.p2.len(),
        a.out.display()
    );
    Ok(())
}

pub fn privatize(a: PrivatizeArgs) -> CliResult {
    let d = build_table(&a.privacy)?;
    let records = &d.table.records;
    let bisg_rows = records.iter().filter(|r| r.source() == RecordSource::Bisg).count();
    let mean_max = records.iter().map(|r| r.race_p.max()).sum::<f64>() / records.len().max(1) as f64;
    let worst = records.iter().map(|r| r.race_p.max()).fold(0.0, f64::max);
    println!("members={}", d.population.len());
    println!("selfid_rows={}", d.selfid_rows);
    println!("bisg_rows={bisg_rows}");
    println!("epsilon={}", a.privacy.epsilon);
    println!("threshold={:.6}", d.table.threshold);
    println!("mean_max_probability={mean_max:.6}");
    println!("max_probability={worst:.6}");
    let truth_path = a.privacy.data.join(TRUTH_FILE);
    if truth_path.exists() {
        let truth = dataset::load_truth(&truth_path)?;
        let index: std::collections::HashMap<&str, &ProbVector> =
            records.iter().map(|r| (r.member_id.as_str(), &r.race_p)).collect();
        let mut probs = Vec::with_capacity(truth.len());
        let mut labels = Vec::with_capacity(truth.len());
        for (id, c) in &truth {
            if let Some(p) = index.get(id.as_str()) {
                probs.push(**p);
                labels.push(*c);
            }
        }
        if let Ok(ce) = cross_entropy(&probs, &labels) {
            println!("cross_entropy_vs_truth={ce:.6}");
        }
    }
    Ok(())
}

fn session_timeout(secs: u64) -> Duration {
    Duration::from_secs(secs.max(1))
}

pub fn run_p1_cmd(a: RunP1Args) -> CliResult {
    let spec = a.estimator.spec()?;
    warn_keys(a.keys.key_mode);
    let table = build_table(&a.privacy)?.table.records;
    let mut policy = policy(a.min_rows, a.ledger.as_deref())?;
    let channel = open_channel(&a.channel)?;
    let params = P1Params { timeout: session_timeout(a.channel.timeout), ..P1Params::new(spec, a.output_mode, a.keys.key_mode) };
    let outcome = run_p1(&channel, &params, &mut policy, table, &mut OsRng)?;
    channel.close()?;
    finish("p1", &outcome, a.report_out.as_deref(), a.timings_out.as_deref())?;
    if let Some(n) = outcome.joined_rows {
        eprintln!("p1 joined {n} rows");
    }
    Ok(())
}

pub fn run_p2_cmd(a: RunP2Args) -> CliResult {
    warn_keys(a.keys.key_mode);
    let truth = dataset::load_p2_values(&a.values)?;
    let key_path = a.governance_key.clone().unwrap_or_else(|| {
        a.values.parent().unwrap_or_else(|| Path::new(".")).join(GOVERNANCE_KEY_FILE)
    });
    let params = P2Params {
        key_mode: a.keys.key_mode,
        governance_key: governance_key(&key_path)?,
        timeout: session_timeout(a.channel.timeout),
    };
    let channel = open_channel(&a.channel)?;
    let outcome = run_p2(&channel, &params, |spec| p2_inputs(&truth, spec), &mut OsRng)?;
    channel.close()?;
    finish("p2", &outcome, a.report_out.as_deref(), a.timings_out.as_deref())
}

fn finish(party: &str, outcome: &PartyOutcome, report_out: Option<&Path>, timings_out: Option<&Path>) -> CliResult {
    if let Some(report) = &outcome.report {
        emit_report(report, report_out)?;
    }
    print_timings(party, &outcome.timings);
    if let Some(path) = timings_out {
        write_file(path, timings_csv(party, &outcome.timings).as_bytes())?;
    }
    Ok(())
}

pub fn run_e2e(a: RunE2eArgs) -> CliResult {
    let spec = a.estimator.spec()?;
    let exe = std::env::current_exe().map_err(io("locating the ppre executable"))?;
    let temp;
    let root = match &a.channel_root {
        Some(root) => root.clone(),
        None => {
            temp = tempfile::tempdir().map_err(io("creating a channel directory"))?;
            temp.path().to_path_buf()
        }
    };
    let values = values_path(&a.privacy.data, a.values.as_ref());
    let p = &a.privacy;
    let e = &a.estimator;
    let mut p1 = Process::new(&exe);
    p1.arg("run-p1")
        .arg("--data").arg(&p.data)
        .args(["--seed", &p.seed.to_string(), "--epsilon", &p.epsilon.to_string()])
        .args(["--quantile", &p.quantile.to_string()])
        .args(["--estimator", &spec.kind.to_string(), "--metric", &e.metric.to_string()])
        .args(["--target-group", e.target_group.key(), "--count-threshold", &e.count_threshold.to_string()])
        .args(["--certainty", &e.certainty.to_string(), "--output-mode", &a.output_mode.to_string()])
        .args(["--min-rows", &a.min_rows.to_string()]);
    if p.derive_threshold {
        p1.arg("--derive-threshold");
    } else {
        p1.args(["--threshold", &p.threshold.to_string()]);
    }
    if p.first_names {
        p1.arg("--first-names");
    }
    if let Some(ledger) = &a.ledger {
        p1.arg("--ledger").arg(ledger);
    }
    let mut p2 = Process::new(&exe);
    p2.arg("run-p2").arg("--values").arg(&values);
    if let Some(key) = &a.governance_key {
        p2.arg("--governance-key").arg(key);
    }
    for (cmd, party) in [(&mut p1, "p1"), (&mut p2, "p2")] {
        cmd.arg("--channel-root")
            .arg(&root)
            .args(["--session", &a.session, "--timeout", &a.timeout.to_string()])
            .args(["--key-mode", &a.keys.key_mode.to_string()]);
        if let Some(out) = &a.report_out {
            cmd.arg("--report-out").arg(out);
        }
        if let Some(tap) = &a.tap {
            cmd.arg("--tap").arg(tap.join(party));
        }
    }
    let start = Instant::now();
    let mut c2 = p2.spawn().map_err(io("starting P2"))?;
    let mut c1 = p1.spawn().map_err(io("starting P1"))?;
    let s1 = c1.wait().map_err(io("waiting for P1"))?;
    let s2 = c2.wait().map_err(io("waiting for P2"))?;
    eprintln!("e2e finished in {:.3}s", start.elapsed().as_secs_f64());
    for (party, status) in [("P1", s1), ("P2", s2)] {
        if !status.success() {
            let code = status.code().unwrap_or(7);
            let status = match code {
                3 => Status::Io,
                4 => Status::Input,
                5 => Status::Governance,
                6 => Status::Timeout,
                8 => Status::Crypto,
                9 => Status::EmptyJoin,
                2 => Status::Usage,
                _ => Status::Protocol,
            };
            return Err(Failure::new(status, format!("{party} exited with status {code}")));
        }
    }
    Ok(())
}

pub fn oracle(a: OracleArgs) -> CliResult {
    let spec = a.estimator.spec()?;
    let table = build_table(&a.privacy)?.table.records;
    let truth = dataset::load_p2_values(&values_path(&a.privacy.data, a.values.as_ref()))?;
    let report = oracle_report(&spec, &table, &p2_inputs(&truth, &spec))?;
    emit_report(&report, a.report_out.as_deref())?;
    if let Some(path) = &a.compare {
        let other = read_report(path)?;
        match report.max_abs_diff(&other) {
            Some(d) if d <= a.tolerance => eprintln!("match: max difference {d:.3e}"),
            Some(d) => {
                return Err(Failure::new(
                    Status::OracleMismatch,
                    format!("max difference {d:.3e} exceeds {:.3e}", a.tolerance),
                ))
            }
            None => return Err(Failure::new(Status::OracleMismatch, "reports cover different groups")),
        }
    }
    Ok(())
}

/// Random tables where every member is on both sides.
fn bench_data(n: usize, spec: &EstimatorSpec, seed: u64) -> (Vec<DemographicRecord>, Vec<P2Input>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut table = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("B{i:09}");
        let w: [f64; 6] = std::array::from_fn(|_| rng.gen_range(0.01..1.0));
        table.push(DemographicRecord::new(id.clone(), ProbVector::normalized(w).expect("positive weights")));
        let y = rng.gen_bool(0.3) as u8 as f64;
        truth.push(P2Truth { member_id: id, y, y_hat: rng.gen_range(0.0..1.0) });
    }
    (table, p2_inputs(&truth, spec))
}

pub fn bench(a: BenchArgs) -> CliResult {
    if a.members == 0 {
        return Err(Failure::new(Status::Usage, "--members must be at least 1"));
    }
    if a.repeats == 0 {
        return Err(Failure::new(Status::Usage, "--repeats must be at least 1"));
    }
    let spec = a.estimator.spec()?;
    warn_keys(a.keys.key_mode);
    let mut csv = String::from("run,party,phase,seconds,rows_per_sec\n");
    let mut totals = Vec::with_capacity(a.repeats);
    let mut worst_diff = 0.0f64;
    for run in 0..a.repeats {
        let (table, values) = bench_data(a.members, &spec, a.seed.wrapping_add(run as u64));
        let expected = oracle_report(&spec, &table, &values)?;
        let root = tempfile::tempdir().map_err(io("creating a channel directory"))?;
        let session = format!("bench{run}");
        let channels = (Channel::open(root.path(), &session)?, Channel::open(root.path(), &session)?);
        let mut key = [0u8; 32];
        OsRng.fill_bytes(&mut key);
        let s = ThreadedSession {
            p1: P1Params::new(spec, a.output_mode, a.keys.key_mode),
            p2: P2Params { key_mode: a.keys.key_mode, governance_key: key, timeout: ppre_core::session::DEFAULT_TIMEOUT },
            policy: policy(a.members.min(ppre_core::protocol::governance::DEFAULT_MIN_ROWS), None)?,
        };
        let start = Instant::now();
        let (r1, r2) = s.run(channels, table, values, OsRng, OsRng);
        let wall = start.elapsed();
        let (o1, o2) = (r1?, r2?);
        let got = o1.report.as_ref().or(o2.report.as_ref()).ok_or_else(|| {
            Failure::from(ProtocolError::Unsupported("session finished without a report".into()))
        })?;
        let diff = got
            .max_abs_diff(&expected)
            .ok_or_else(|| Failure::new(Status::OracleMismatch, "protocol and oracle reports cover different groups"))?;
        worst_diff = worst_diff.max(diff);
        let n = a.members as f64;
        for (party, o) in [("p1", &o1), ("p2", &o2)] {
            for (phase, d) in &o.timings.0 {
                let secs = d.as_secs_f64();
                let rate = if secs > 0.0 { n / secs } else { f64::INFINITY };
                csv.push_str(&format!("{run},{party},{phase},{secs:.6},{rate:.1}\n"));
            }
        }
        let secs = wall.as_secs_f64();
        csv.push_str(&format!("{run},session,total,{secs:.6},{:.1}\n", n / secs));
        eprintln!("run {run}: {} rows in {secs:.3}s ({:.1} rows/s), oracle difference {diff:.3e}", a.members, n / secs);
        totals.push(secs);
    }
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    let var = if totals.len() > 1 {
        totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (totals.len() - 1) as f64
    } else {
        0.0
    };
    println!("members={}", a.members);
    println!("key_mode={}", a.keys.key_mode);
    println!("repeats={}", a.repeats);
    println!("mean_seconds={mean:.3}");
    println!("stddev_seconds={:.3}", var.sqrt());
    println!("rows_per_sec={:.1}", a.members as f64 / mean);
    println!("max_oracle_difference={worst_diff:.3e}");
    match &a.csv {
        Some(path) => write_file(path, csv.as_bytes())?,
        None => {
            let mut err = std::io::stderr();
            let _ = err.write_all(csv.as_bytes());
        }
    }
    if worst_diff > 2e-6 {
        return Err(Failure::new(Status::OracleMismatch, format!("oracle difference {worst_diff:.3e}")));
    }
    Ok(())
}

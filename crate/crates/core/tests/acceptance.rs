//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use tvws_core::availability::{availability_grid, AvailabilityEngine, GridSpec};
use tvws_core::coexist::{assign_channels, ConflictGraph, LinkOptions};
use tvws_core::digest::sha256_hex;
use tvws_core::mesh::{plan, Scenario};
use tvws_core::paws::wire::{error_code, handle_bytes};
use tvws_core::paws::{
    DeviceDescriptor, DeviceOwner, DeviceState, DeviceType, ErrorCode, EventSink, LogEvent, ManualClock, MemorySink,
    PawsService, RecordLog, ServiceState, SpectrumSchedule, SpectrumUse, UseRecord,
};
use tvws_core::spectrum::{
    haversine_km, link_throughput_mbps, BoundingBox, GeoPoint, PhyProfile, PhyRegistry, Propagation, RegulatoryConfig,
};
use tvws_core::towers::{ingest_csv, TowerDataset, TowerRecord};

const KHAMLOLI: (f64, f64) = (19.69, 72.77);
const EPOCH: i64 = 1_700_000_000;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn pt(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat, lon).unwrap()
}

fn engine_over(dataset: TowerDataset) -> Arc<AvailabilityEngine> {
    Arc::new(AvailabilityEngine::new(Arc::new(dataset), RegulatoryConfig::default(), Propagation::default()).unwrap())
}

fn khamloli_engine() -> Arc<AvailabilityEngine> {
    let ingested = ingest_csv(fixture("khamloli_towers.csv")).unwrap();
    assert!(ingested.rejects.is_empty());
    engine_over(ingested.dataset)
}

fn service(engine: Arc<AvailabilityEngine>) -> PawsService {
    let clock = Arc::new(ManualClock::starting_at(Utc.timestamp_opt(EPOCH, 0).unwrap()));
    PawsService::new(engine, clock, Box::new(MemorySink::default()), &[])
}

fn call(svc: &PawsService, method: &str, params: Value) -> Value {
    let body = serde_json::to_vec(&json!({ "method": method, "id": 1, "params": params })).unwrap();
    serde_json::from_slice(&handle_bytes(svc, &body)).unwrap()
}

fn loc(p: (f64, f64)) -> Value {
    json!({ "latitude": p.0, "longitude": p.1 })
}

fn init(svc: &PawsService, id: &str, p: (f64, f64)) -> Value {
    call(
        svc,
        "init",
        json!({
            "deviceId": id,
            "deviceDesc": { "manufacturerId": "acme", "modelId": "uhf-1", "deviceType": "fixed" },
            "location": loc(p),
            "accuracyM": 10.0,
        }),
    )
}

fn register(svc: &PawsService, id: &str, p: (f64, f64)) -> Value {
    call(svc, "register", json!({ "deviceId": id, "deviceOwner": { "name": "gram panchayat" }, "location": loc(p) }))
}

fn get_spectrum(svc: &PawsService, id: &str, p: (f64, f64)) -> Value {
    call(svc, "getSpectrum", json!({ "deviceId": id, "location": loc(p) }))
}

fn criterion_1() {
    let svc = service(khamloli_engine());
    let london = (51.5, -0.12);
    assert_eq!(error_code(&init(&svc, "uk", london)), Some(ErrorCode::OutsideCoverage));

    assert_eq!(error_code(&get_spectrum(&svc, "early", KHAMLOLI)), Some(ErrorCode::NotRegistered));
    assert!(init(&svc, "early", KHAMLOLI).get("result").is_some());
    assert_eq!(error_code(&get_spectrum(&svc, "early", KHAMLOLI)), Some(ErrorCode::NotRegistered));
    assert!(register(&svc, "early", KHAMLOLI).get("result").is_some());
    assert_eq!(error_code(&get_spectrum(&svc, "early", london)), Some(ErrorCode::OutsideCoverage));

    // one strong tower per channel 20 km from the query point
    let delhi = pt(28.61, 77.21);
    let towers = (1..=15u8)
        .map(|ch| TowerRecord::new(format!("T{ch:02}"), delhi.destination(f64::from(ch) * 24.0, 20.0), ch, 60.0, 150.0))
        .collect::<Result<Vec<_>, _>>()
        .unwrap();
    let svc = service(engine_over(TowerDataset::new(towers).unwrap()));
    let p = (delhi.lat_deg(), delhi.lon_deg());
    assert!(init(&svc, "dl", p).get("result").is_some());
    assert!(register(&svc, "dl", p).get("result").is_some());
    assert_eq!(error_code(&get_spectrum(&svc, "dl", p)), Some(ErrorCode::UnavailableSpectrum));
}

fn khamloli_grant_bytes() -> Vec<u8> {
    let svc = service(khamloli_engine());
    init(&svc, "khamloli-pop", KHAMLOLI);
    register(&svc, "khamloli-pop", KHAMLOLI);
    let body = serde_json::to_vec(&json!({
        "method": "getSpectrum", "id": "grant", "params": { "deviceId": "khamloli-pop", "location": loc(KHAMLOLI) }
    }))
    .unwrap();
    handle_bytes(&svc, &body)
}

fn criterion_2() {
    let bytes = khamloli_grant_bytes();
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    let sched = &v["result"]["spectrumSchedule"];
    let spectra = sched["spectra"].as_array().unwrap();
    let channels: Vec<u64> = spectra.iter().map(|s| s["channel"].as_u64().unwrap()).collect();
    assert_eq!(channels, (1..=15).collect::<Vec<u64>>());
    assert!(spectra.iter().all(|s| s["maxEirpDbm"].as_f64() == Some(30.0)));
    let start: chrono::DateTime<Utc> = sched["eventTime"]["startTime"].as_str().unwrap().parse().unwrap();
    let stop: chrono::DateTime<Utc> = sched["eventTime"]["stopTime"].as_str().unwrap().parse().unwrap();
    assert_eq!(stop - start, chrono::Duration::hours(48));
    assert_eq!(sha256_hex(&bytes), sha256_hex(&khamloli_grant_bytes()));
    assert_eq!(sha256_hex(&bytes), KHAMLOLI_GRANT_SHA256);
}

const KHAMLOLI_GRANT_SHA256: &str = "2bfba4fea0ac3e073ec2dd43752d5257ee0593e575b2293d078fd8403f1ce518";

fn criterion_3() {
    let ingested = ingest_csv(fixture("india_towers.csv")).unwrap();
    assert!(ingested.rejects.is_empty());
    assert_eq!(ingested.dataset.len(), 373);
    let channels: BTreeSet<u8> = ingested.dataset.records().iter().map(|t| t.channel_index).collect();
    assert!(channels.len() <= 3);
    let engine = engine_over(ingested.dataset);
    // square box around the outline so both axes get 100 points
    let bbox = BoundingBox::new(7.9, 68.2, 37.1, 97.4).unwrap();
    let stats = availability_grid(&engine, GridSpec::with_steps(bbox, 100).unwrap()).unwrap();
    assert_eq!(stats.summary.points_total, 100 * 100);
    assert!(stats.summary.points_in_boundary > 3000);
    assert!(stats.summary.min_count >= 12, "min count {}", stats.summary.min_count);
    assert_eq!(stats.summary.fraction_at_least[12], 1.0);
}

/// Full scan: every tower on every channel, no index, no cutoff radius.
fn brute_force(
    towers: &[TowerRecord],
    cfg: &RegulatoryConfig,
    prop: &Propagation,
    p: GeoPoint,
) -> Vec<(u8, bool, Option<String>)> {
    cfg.channels()
        .map(|c| {
            let mut worst: Option<(f64, &str)> = None;
            for t in towers.iter().filter(|t| t.channel_index == c.index) {
                let d = haversine_km(t.location, p);
                let loss = prop.loss_between(d, c.center_mhz(), t.antenna_height_m, prop.params.rx_height_m).unwrap();
                let level = t.erp_dbm - loss.loss_db;
                if level <= cfg.protection_threshold_dbm {
                    continue;
                }
                let replace = match worst {
                    None => true,
                    Some((w, id)) => level > w || (level == w && t.tower_id.as_str() < id),
                };
                if replace {
                    worst = Some((level, &t.tower_id));
                }
            }
            (c.index, worst.is_none(), worst.map(|(_, id)| id.to_string()))
        })
        .collect()
}

fn random_point_in(cfg: &RegulatoryConfig, rng: &mut ChaCha8Rng) -> GeoPoint {
    loop {
        let p = pt(rng.gen_range(8.0..37.0), rng.gen_range(68.2..97.4));
        if cfg.contains(p) {
            return p;
        }
    }
}

fn criterion_4() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = RegulatoryConfig::default();
    let towers: Vec<TowerRecord> = (0..500)
        .map(|i| {
            let p = random_point_in(&cfg, &mut rng);
            TowerRecord::new(
                format!("R{i:03}"),
                p,
                rng.gen_range(1..=15),
                rng.gen_range(0.0..45.0),
                rng.gen_range(10.0..250.0),
            )
            .unwrap()
        })
        .collect();
    let engine = engine_over(TowerDataset::new(towers.clone()).unwrap());
    let mut mixed = 0;
    for _ in 0..1000 {
        let p = random_point_in(&cfg, &mut rng);
        let got: Vec<(u8, bool, Option<String>)> = engine
            .available_channels(p)
            .unwrap()
            .channels
            .into_iter()
            .map(|c| (c.channel_index, c.available, c.dominant_interferer.map(|i| i.tower_id)))
            .collect();
        let want = brute_force(&towers, &cfg, engine.propagation(), p);
        assert_eq!(got, want, "at {p:?}");
        let n = got.iter().filter(|c| c.1).count();
        if n > 0 && n < 15 {
            mixed += 1;
        }
    }
    // the dataset must actually exercise both verdicts
    assert!(mixed > 100, "only {mixed} points had a mix of free and blocked channels");
}

fn criterion_5() {
    let reg = PhyRegistry::default();
    let af = reg.get("802.11af").unwrap();
    let wran = reg.get("802.22").unwrap();
    assert_eq!(link_throughput_mbps(80.0, 8.0, af), 35.6);
    assert_eq!(link_throughput_mbps(80.0, 8.0, wran), 19.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let profile: &PhyProfile = if rng.gen_bool(0.5) { af } else { wran };
        let snr = rng.gen_range(-20.0..60.0);
        let bw = [5.0, 8.0, 10.0, 20.0][rng.gen_range(0..4)];
        let dsnr = rng.gen_range(0.0..10.0);
        let t = link_throughput_mbps(snr, bw, profile);
        assert!(link_throughput_mbps(snr + dsnr, bw, profile) >= t);
        assert!(t <= profile.cap_mbps(bw) + 1e-12);
        assert!(t >= 0.0);
    }
}

fn random_graph(rng: &mut ChaCha8Rng) -> ConflictGraph {
    let n = rng.gen_range(1..=50);
    let ids: Vec<String> = (0..n).map(|i| format!("l{i:02}")).collect();
    let mut g = ConflictGraph::new(ids.iter().cloned()).unwrap();
    let density = rng.gen_range(0.0..0.5);
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                g.add_edge(&ids[i], &ids[j]).unwrap();
            }
        }
    }
    g
}

fn criterion_6() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = RegulatoryConfig::default();
    for _ in 0..500 {
        let g = random_graph(&mut rng);
        let uniform: BTreeMap<String, LinkOptions> =
            g.vertices().map(|v| (v.to_string(), LinkOptions::single(1..=15))).collect();
        let a = assign_channels(&g, &uniform, &cfg);
        assert!(a.is_proper(&g));
        assert!(a.channels_used().len() <= g.max_degree() + 1);
        if g.max_degree() < 15 {
            assert_eq!(a.assigned.len(), g.len(), "every link fits when Δ+1 ≤ 15");
        }
        assert_eq!(a, assign_channels(&g, &uniform, &cfg));

        // ragged availability and multi-channel blocks stay proper
        let ragged: BTreeMap<String, LinkOptions> = g
            .vertices()
            .map(|v| {
                let avail: BTreeSet<u8> = (1..=15).filter(|_| rng.gen_bool(0.7)).collect();
                (v.to_string(), LinkOptions { available: avail, channels_needed: rng.gen_range(1..=3) })
            })
            .collect();
        let b = assign_channels(&g, &ragged, &cfg);
        assert!(b.is_proper(&g));
        for (id, grant) in &b.assigned {
            let o = &ragged[id];
            assert_eq!(grant.channels.len(), o.channels_needed);
            assert!(grant.channels.windows(2).all(|w| w[1] == w[0] + 1));
            assert!(grant.channels.iter().all(|c| o.available.contains(c)));
        }
        assert_eq!(b.assigned.len() + b.unassigned.len(), g.len());
        assert_eq!(b, assign_channels(&g, &ragged, &cfg));
    }
}

fn criterion_7() {
    let scenario = Scenario::from_json(&std::fs::read_to_string(fixture("khamloli_scenario.json")).unwrap()).unwrap();
    let engine = khamloli_engine();
    let profile = PhyRegistry::default().get(&scenario.profile).unwrap().clone();
    let prop = Propagation::by_name(&scenario.propagation, Default::default()).unwrap();
    let report = plan(&scenario, &engine, &[], &profile, &prop).unwrap();
    assert_eq!(report.links.len(), 11);
    assert!(report.links.iter().all(|l| l.hop_depth == 1 && l.unassigned_reason.is_none()));
    let link = |to: &str| report.links.iter().find(|l| l.to == to).unwrap();

    let ganje = link("ganje");
    assert!((ganje.distance_km - 6.7).abs() < 0.01);
    assert_eq!(ganje.bandwidth_mhz, 5.0);
    assert!(ganje.predicted_throughput_mbps >= 5.6, "{}", ganje.predicted_throughput_mbps);
    assert!(ganje.predicted_throughput_mbps <= profile.cap_mbps(5.0));

    let dhuktan = link("dhuktan-1");
    assert!((dhuktan.distance_km - 2.3).abs() < 0.01);
    assert_eq!(dhuktan.bandwidth_mhz, 20.0);
    assert!(dhuktan.predicted_throughput_mbps >= 11.0, "{}", dhuktan.predicted_throughput_mbps);
    assert!(dhuktan.predicted_throughput_mbps <= profile.cap_mbps(20.0));
}

#[derive(Clone, Copy, Debug)]
enum CrashKind {
    /// The record is cut short mid-write.
    TornTail,
    /// The record reaches disk but the reply never does.
    PersistedUnacked,
}

/// JSON-lines sink that dies on its `crash_at`-th append.
struct CrashingSink {
    file: File,
    appends: usize,
    crash_at: usize,
    kind: CrashKind,
    tear_fraction: f64,
    dead: Arc<AtomicBool>,
}

impl EventSink for CrashingSink {
    fn append(&mut self, event: &LogEvent) -> io::Result<()> {
        if self.dead.load(Ordering::SeqCst) {
            return Err(io::Error::other("process is gone"));
        }
        self.appends += 1;
        let mut line = serde_json::to_vec(event).unwrap();
        line.push(b'\n');
        if self.appends == self.crash_at {
            self.dead.store(true, Ordering::SeqCst);
            let cut = match self.kind {
                CrashKind::TornTail => ((line.len() - 1) as f64 * self.tear_fraction) as usize,
                CrashKind::PersistedUnacked => line.len(),
            };
            self.file.write_all(&line[..cut])?;
            self.file.sync_data()?;
            return Err(io::Error::other("crashed"));
        }
        self.file.write_all(&line)?;
        self.file.sync_data()
    }
}

#[derive(Debug)]
enum Acked {
    Init(String),
    Register(String),
    Grant(SpectrumSchedule),
    Use(UseRecord),
}

/// Returns whether the injected crash was reached.
fn crash_run(seed: u64, dir: &Path) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path = dir.join(format!("run-{seed}.log"));
    let engine = khamloli_engine();
    let clock = Arc::new(ManualClock::starting_at(Utc.timestamp_opt(EPOCH, 0).unwrap()));
    let dead = Arc::new(AtomicBool::new(false));
    let kind = if seed.is_multiple_of(2) { CrashKind::TornTail } else { CrashKind::PersistedUnacked };
    let sink = CrashingSink {
        file: OpenOptions::new().create(true).append(true).open(&path).unwrap(),
        appends: 0,
        crash_at: rng.gen_range(1..=40),
        kind,
        tear_fraction: rng.gen_range(0.0..1.0),
        dead: dead.clone(),
    };
    let svc = PawsService::new(engine.clone(), clock.clone(), Box::new(sink), &[]);
    let devices: Vec<(String, GeoPoint)> = (0..5)
        .map(|i| (format!("dev-{i}"), pt(KHAMLOLI.0, KHAMLOLI.1).destination(72.0 * f64::from(i), 3.0)))
        .collect();
    let desc =
        DeviceDescriptor { manufacturer_id: "acme".into(), model_id: "uhf-1".into(), device_type: DeviceType::Fixed };
    let mut acked = Vec::new();
    // acknowledged calls that wrote a record (a repeat register writes none)
    let mut logged = 0usize;
    let mut granted: Vec<(String, GeoPoint, u8)> = Vec::new();
    for _ in 0..80 {
        clock.advance_secs(rng.gen_range(0..600));
        let (id, p) = devices[rng.gen_range(0..devices.len())].clone();
        match rng.gen_range(0..4) {
            0 => {
                if svc.handle_init(&id, desc.clone(), p, 10.0).is_ok() {
                    logged += 1;
                    acked.push(Acked::Init(id));
                }
            }
            1 => {
                let fresh = svc.snapshot().device_state(&id) == DeviceState::Initialized;
                if svc.handle_register(&id, DeviceOwner { name: "gp".into(), contact: String::new() }, p).is_ok() {
                    logged += usize::from(fresh);
                    acked.push(Acked::Register(id));
                }
            }
            2 => {
                if let Ok(s) = svc.handle_avail_spectrum(&id, p) {
                    granted.extend(s.entries.iter().map(|e| (id.clone(), p, e.channel_index)));
                    logged += 1;
                    acked.push(Acked::Grant(s));
                }
            }
            _ => {
                if granted.is_empty() {
                    continue;
                }
                let (gid, gp, ch) = granted[rng.gen_range(0..granted.len())].clone();
                let report = SpectrumUse {
                    device_id: gid,
                    channel_index: ch,
                    eirp_dbm: rng.gen_range(10.0..30.0),
                    location: gp,
                };
                if let Ok(r) = svc.handle_notify(report) {
                    logged += 1;
                    acked.push(Acked::Use(r));
                }
            }
        }
    }
    drop(svc);

    let (mut log, events) = RecordLog::open(&path).unwrap();
    let state = ServiceState::from_events(&events);
    for a in &acked {
        match a {
            Acked::Init(id) => assert!(state.device_state(id) >= DeviceState::Initialized, "lost init of {id}"),
            Acked::Register(id) => assert_eq!(state.device_state(id), DeviceState::Registered, "lost register of {id}"),
            Acked::Grant(s) => assert!(state.grants.get(&s.device_id).is_some_and(|g| g.contains(s)), "lost grant"),
            Acked::Use(r) => assert!(state.uses.contains(r), "lost use report"),
        }
    }
    // nothing beyond the acknowledged prefix, except the one persisted-but-unacked record
    let extra = events.len() - logged;
    match kind {
        CrashKind::TornTail => assert_eq!(extra, 0),
        CrashKind::PersistedUnacked => assert!(extra <= 1),
    }
    // the reopened log accepts new records after the cut
    let marker = LogEvent::Used {
        record: UseRecord {
            device_id: "marker".into(),
            channel_index: 1,
            eirp_dbm: 0.0,
            location: pt(KHAMLOLI.0, KHAMLOLI.1),
            reported_at: Utc.timestamp_opt(EPOCH, 0).unwrap(),
        },
    };
    log.append(&marker).unwrap();
    drop(log);
    let (_, again) = RecordLog::open(&path).unwrap();
    assert_eq!(again.len(), events.len() + 1);
    assert_eq!(again.last(), Some(&marker));
    dead.load(Ordering::SeqCst)
}

fn criterion_8() {
    let dir = tempfile::tempdir().unwrap();
    let crashed = (0..100).filter(|&seed| crash_run(seed, dir.path())).count();
    assert_eq!(crashed, 100, "only {crashed} runs reached their crash point");
}

fn main() {
    let criteria: [(&str, fn(), Duration); 8] = [
        ("1 error triad", criterion_1, Duration::from_secs(5)),
        ("2 Khamloli grant", criterion_2, Duration::from_secs(5)),
        ("3 availability statistic", criterion_3, Duration::from_secs(60)),
        ("4 oracle equivalence", criterion_4, Duration::from_secs(30)),
        ("5 PHY envelope", criterion_5, Duration::from_secs(5)),
        ("6 coloring safety", criterion_6, Duration::from_secs(30)),
        ("7 testbed plausibility", criterion_7, Duration::from_secs(5)),
        ("8 durability", criterion_8, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (name, f, budget) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f));
        let elapsed = start.elapsed();
        let verdict = match outcome {
            Ok(()) if elapsed <= budget => "PASS".to_string(),
            Ok(()) => format!("FAIL (over the {:?} budget)", budget),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                format!("FAIL ({msg})")
            }
        };
        if !verdict.starts_with("PASS") {
            failed += 1;
        }
        println!("criterion {name:<28} {verdict}  [{:.2}s]", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}

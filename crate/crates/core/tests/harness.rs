use std::path::Path;
use std::sync::OnceLock;

use ssf_core::detector::resi_from_magnitude;
use ssf_core::feedback::{ProtocolKind, ProtocolThresholds, ThresholdVector};
use ssf_core::harness::output::{
    read_trace_csv, write_metrics_csv, write_run_meta, write_trace_csv, METRICS_HEADER,
    TRACE_HEADER,
};
use ssf_core::harness::world::synthesize_frame;
use ssf_core::harness::{ExperimentResult, SimConfig, Simulator, ThresholdMethod};
use ssf_core::metrics::scenario_metrics;
use ssf_core::phy::dbm_to_watts;
use ssf_core::scene::{TrajectoryKind, TrajectorySpec, Vec3};

fn default_sim() -> &'static Simulator {
    static SIM: OnceLock<Simulator> = OnceLock::new();
    SIM.get_or_init(|| Simulator::new(SimConfig::default()).unwrap())
}

fn default_sweep() -> &'static ExperimentResult {
    static RES: OnceLock<ExperimentResult> = OnceLock::new();
    RES.get_or_init(|| {
        let sim = default_sim();
        let cfg = sim.config();
        sim.sweep(
            &ProtocolKind::ALL,
            &cfg.budget_grid(),
            &cfg.harness.seeds,
            ThresholdMethod::Map,
        )
        .unwrap()
    })
}

fn trace_bytes(sim: &Simulator, protocol: ProtocolKind, seed: u64) -> Vec<u8> {
    let th = sim
        .resolve_thresholds(ThresholdMethod::Map, -3.0)
        .unwrap()
        .for_protocol(protocol);
    let trace = sim.run(th, -3.0, seed).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &trace).unwrap();
    buf
}

#[test]
fn shipped_config_equals_default() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let cfg = SimConfig::load(&path).unwrap();
    assert_eq!(cfg, SimConfig::default());
}

#[test]
fn config_toml_round_trip() {
    let cfg = SimConfig::default();
    let back = SimConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.fingerprint(), cfg.fingerprint());
}

#[test]
fn config_errors_name_the_field() {
    let mut cfg = SimConfig::default();
    cfg.harness.duration_s = 0.015;
    let err = cfg.validate().unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().contains("harness.duration_s"), "{err}");

    let text = SimConfig::default()
        .to_toml()
        .replace("n_del = 10", "n_del = 10\nbogus = 1");
    assert!(SimConfig::from_toml(&text).unwrap_err().is_config());
}

#[test]
fn default_run_has_one_record_per_scan() {
    let sim = default_sim();
    assert_eq!(sim.world().n_scans, 1000);
    let th = sim.resolve_thresholds(ThresholdMethod::Map, -3.0).unwrap();
    for p in ProtocolKind::ALL {
        let t = sim.run(th.for_protocol(p), -3.0, 1).unwrap();
        assert_eq!(t.records.len(), 1000);
        for (i, r) in t.records.iter().enumerate() {
            assert_eq!(r.scan, i);
            assert!(r.p_used_dbm <= -3.0 + 1e-12 && r.p_used_dbm >= -20.0 - 1e-12);
        }
    }
}

#[test]
fn precomputed_measurement_matches_full_chain() {
    let sim = default_sim();
    let cfg = sim.config();
    let w = sim.world();
    let n = w.ofdm().frame_len();
    for (seed, scan, beam, p_dbm) in [
        (1, 0, 0, -3.0),
        (1, 150, 15, -20.0),
        (7, 400, 13, -9.5),
        (3, 999, 8, -14.0),
    ] {
        let bank = w.noise_bank(seed);
        let fast = w.measure(scan, beam, dbm_to_watts(p_dbm), &bank);
        let frame = synthesize_frame(cfg, w, scan, beam, dbm_to_watts(p_dbm), seed).unwrap();
        let peak = w.bank().peak(&frame.samples).unwrap();
        let resi = resi_from_magnitude(peak.magnitude, n, w.noise_sigma).unwrap();
        assert_eq!(
            (peak.delay_idx, peak.doppler_idx),
            (fast.peak.delay_idx, fast.peak.doppler_idx)
        );
        assert!(
            (resi - fast.resi).abs() <= 1e-9 * resi.max(1.0),
            "scan {scan}: {resi} vs {}",
            fast.resi
        );
    }
}

#[test]
fn trace_csv_is_byte_identical_across_runs() {
    let a = trace_bytes(default_sim(), ProtocolKind::Ssf, 2);
    let b = trace_bytes(default_sim(), ProtocolKind::Ssf, 2);
    assert_eq!(a, b);
    // a fresh simulator must not depend on cache state
    let fresh = Simulator::new(SimConfig::default()).unwrap();
    assert_eq!(trace_bytes(&fresh, ProtocolKind::Ssf, 2), a);
    assert_ne!(trace_bytes(&fresh, ProtocolKind::Ssf, 3), a);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next().unwrap(), TRACE_HEADER.join(","));
    assert_eq!(text.lines().count(), 1001);
}

#[test]
fn trace_csv_reads_back_to_the_same_metrics() {
    let sim = default_sim();
    for p in ProtocolKind::ALL {
        let th = sim
            .resolve_thresholds(ThresholdMethod::Map, -7.0)
            .unwrap()
            .for_protocol(p);
        let trace = sim.run(th, -7.0, 4).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &trace).unwrap();
        let records = read_trace_csv(buf.as_slice()).unwrap();
        assert_eq!(records, trace.records);
        let m = scenario_metrics(
            &records,
            trace.detect_threshold(),
            trace.scan_duration,
            trace.realloc_basis,
        )
        .unwrap();
        assert_eq!(m, trace.metrics().unwrap());
    }
}

#[test]
fn pinned_target_in_generous_conditions_is_held() {
    let mut cfg = SimConfig::default();
    let region = cfg.scene.region;
    let az = region.az_lo + 5.5 * region.beam_width();
    cfg.scene.targets[0].trajectory = TrajectorySpec {
        kind: TrajectoryKind::Linear,
        start: Vec3::new(26.0 * az.cos(), 26.0 * az.sin(), 1.5),
        heading: 0.0,
        speed: 0.0,
    };
    let sim = Simulator::new(cfg).unwrap();
    assert!((0..sim.world().n_scans).all(|s| sim.world().target_in_beam(s, 5)));
    let th = ProtocolThresholds::Ssf(ThresholdVector::new(3.0, 4.0, 6.0).unwrap());
    let trace = sim.run(th, -3.0, 1).unwrap();
    let m = trace.metrics().unwrap();
    assert!(m.p_det > 0.9, "p_det {}", m.p_det);
    assert!(trace.records.iter().rev().take(900).all(|r| r.beam == 5));
}

#[test]
fn sweep_covers_the_full_grid() {
    let res = default_sweep();
    assert_eq!(res.cells.len(), 24);
    assert_eq!(res.cells.iter().map(|c| c.runs.len()).sum::<usize>(), 120);
    assert_eq!(res.failed_cells().count(), 0);
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, res).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), METRICS_HEADER.join(","));
    assert_eq!(lines.count(), 24);
}

#[test]
fn ssf_detection_does_not_fall_with_budget() {
    let res = default_sweep();
    let grid = default_sim().config().budget_grid();
    let p: Vec<f64> = grid
        .iter()
        .map(|&b| {
            res.cell(ProtocolKind::Ssf, ThresholdMethod::Map, b)
                .unwrap()
                .aggregate(res.scan_duration)
                .unwrap()
                .p_det
        })
        .collect();
    // least-squares slope over the grid must not be meaningfully negative
    let n = p.len() as f64;
    let mx = grid.iter().sum::<f64>() / n;
    let my = p.iter().sum::<f64>() / n;
    let slope = grid
        .iter()
        .zip(&p)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / grid.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!(slope > -2e-3, "slope {slope} per dB, p_det {p:?}");
    for w in p.windows(2) {
        assert!(w[1] >= w[0] - 0.02, "{p:?}");
    }
}

#[test]
fn run_meta_records_config_hash_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimConfig::default();
    let path = dir.path().join("run_meta.json");
    write_run_meta(&path, "sweep", &cfg, &[1, 2]).unwrap();
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["config_hash"], cfg.fingerprint());
    assert_eq!(v["seeds"], serde_json::json!([1, 2]));
    assert_eq!(v["command"], "sweep");
}

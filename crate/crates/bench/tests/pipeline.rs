use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use bmdal_bench::data::synthetic_friedman;
use bmdal_bench::fetch::fetch_dataset;
use bmdal_bench::metrics::Metrics;
use bmdal_bench::report::{aggregate_log_means, emit_report};
use bmdal_bench::run::{run_bmal, run_split, BmalRunConfig, RunResult, StepRecord};
use bmdal_core::selection::{Method, Mode, Status};

fn small(method: Method) -> BmalRunConfig {
    BmalRunConfig {
        kernel: "grad->rp(32)".into(),
        method,
        mode: Mode::TP,
        sigma2: 1e-6,
        batch_sizes: vec![8, 8],
        n_train_init: 16,
        n_valid: 32,
        hidden: vec![16, 16],
        epochs: 4,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn json_round_trip_is_lossless() {
    let d = synthetic_friedman(200, 0.3, 1).unwrap();
    let r = run_bmal(&d, &small(Method::Lcmd)).unwrap();
    let text = serde_json::to_string(&r).unwrap();
    let back: RunResult = serde_json::from_str(&text).unwrap();
    assert_eq!(back, r);
}

#[test]
fn runs_are_reproducible() {
    let d = synthetic_friedman(200, 0.3, 1).unwrap();
    for method in [Method::Random, Method::Lcmd, Method::KMeansPP] {
        let a = run_bmal(&d, &small(method)).unwrap().without_timings();
        let b = run_bmal(&d, &small(method)).unwrap().without_timings();
        assert_eq!(a, b, "{method}");
    }
}

#[test]
fn selection_never_touches_test_or_validation_rows() {
    let d = synthetic_friedman(200, 0.3, 1).unwrap();
    for method in [Method::MaxDist, Method::BaitF, Method::MaxDet] {
        let cfg = BmalRunConfig { kernel: "grad->rp(32)->train(1e-4)".into(), ..small(method) };
        let r = run_bmal(&d, &cfg).unwrap();
        let sp = run_split(d.len(), &cfg).unwrap();
        for s in &r.steps {
            assert!(s.batch.iter().all(|i| sp.pool.contains(i)), "{method}");
            assert!(s.metrics.mae <= s.metrics.rmse && s.metrics.rmse <= s.metrics.maxe);
        }
        assert!(r.steps.windows(2).all(|w| w[1].step == w[0].step + 1));
    }
}

fn fixture(rmse: &[f64], method: Method) -> RunResult {
    let steps = rmse
        .iter()
        .enumerate()
        .map(|(i, &e)| StepRecord {
            step: i,
            n_train: 16 + 8 * i,
            metrics: Metrics { mae: e / 2.0, rmse: e, q95: e, q99: e, maxe: e },
            selection_seconds: 0.0,
            train_seconds: 0.0,
            batch: vec![],
            status: Status::Ok,
        })
        .collect();
    RunResult { data: "fixture".into(), config: small(method), steps, version: "0".into() }
}

#[test]
fn log_means_by_hand() {
    let e = std::f64::consts::E;
    let runs = [fixture(&[e, e], Method::Random), fixture(&[e.powi(3), e], Method::Random)];
    let s = &aggregate_log_means(&runs).unwrap()[0];
    assert!((s.curves["rmse"][0].mean_log - 2.0).abs() < 1e-12);
    // Logs 1 and 3: sample variance 2, standard error sqrt(2 / 2) = 1.
    assert!((s.curves["rmse"][0].stderr.unwrap() - 1.0).abs() < 1e-12);
    assert!((s.initial_log_rmse_mae_gap - 2f64.ln()).abs() < 1e-12);
    let single = &aggregate_log_means(&runs[..1]).unwrap()[0];
    assert_eq!(single.curves["rmse"][1].stderr, None);
}

#[test]
fn report_files() {
    let input = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let r = fixture(&[1.0, 0.5, 0.25], Method::Lcmd);
    std::fs::write(input.path().join("a.json"), serde_json::to_string(&r).unwrap()).unwrap();
    emit_report(input.path(), out.path()).unwrap();
    let curve = std::fs::read_to_string(out.path().join("curve_rmse.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "group,step,n_train,mean_log,stderr");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].ends_with(",0,16,0,"));
}

fn serve(body: &'static [u8], hits: Arc<AtomicUsize>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut buf = [0u8; 4096];
            let _ = stream.read(&mut buf);
            hits.fetch_add(1, Ordering::SeqCst);
            let head = format!("HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len());
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(body);
        }
    });
    format!("http://{addr}")
}

#[test]
fn fetch_caches_and_refetches_identically() {
    const BODY: &[u8] = b"a,b,y\n1,2,3\n4,5,6\n";
    let hits = Arc::new(AtomicUsize::new(0));
    let base = serve(BODY, hits.clone());
    let cache = tempfile::tempdir().unwrap();
    let url = format!("{base}/data.csv");
    let p1 = fetch_dataset(&url, cache.path()).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), BODY);
    let p2 = fetch_dataset(&url, cache.path()).unwrap();
    assert_eq!((p1.clone(), hits.load(Ordering::SeqCst)), (p2, 1));
    let other = fetch_dataset(&format!("{base}/other.csv"), cache.path()).unwrap();
    assert_ne!(other, p1);
    std::fs::remove_file(&p1).unwrap();
    let p3 = fetch_dataset(&url, cache.path()).unwrap();
    assert_eq!(std::fs::read(p3).unwrap(), BODY);
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn fetch_reports_empty_body_and_network_errors() {
    let base = serve(b"", Arc::new(AtomicUsize::new(0)));
    let cache = tempfile::tempdir().unwrap();
    assert!(fetch_dataset(&format!("{base}/empty.csv"), cache.path()).is_err());
    let closed = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    assert!(fetch_dataset(&format!("http://{closed}/x.csv"), cache.path()).is_err());
}

#[test]
fn cli_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs/r.json");
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_bmal"))
        .args(["run", "--data", "synthetic:friedman:n=200,noise=0.3", "--method", "lcmd", "--mode", "tp"])
        .args(["--kernel", "ll", "--sigma2", "1e-6", "--init-train", "16", "--valid", "32", "--batches", "2x8"])
        .args(["--seed", "3", "--activation", "silu", "--hidden", "8", "--epochs", "2", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let r: RunResult = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(r.steps.last().unwrap().n_train, 32);
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_bmal"))
        .args(["report", "--in"])
        .arg(dir.path().join("runs"))
        .arg("--out")
        .arg(dir.path().join("report"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("report/methods.csv").exists());
}

#[test]
fn default_network_learns_friedman() {
    use bmdal_core::model::{init_network, train, Activation, ModelConfig, TrainConfig};
    use ndarray::s;
    let d = synthetic_friedman(2304, 0.3, 4).unwrap();
    let (x, y) = (d.x.mapv(|v| v as f32), d.y.mapv(|v| v as f32));
    let cfg = ModelConfig::new(vec![10, 512, 512, 1], Activation::Relu, 1);
    let tc = TrainConfig::for_activation(Activation::Relu, 2);
    let m = train(
        init_network::<f32>(&cfg).unwrap(),
        &cfg,
        &tc,
        x.slice(s![..1280, ..]),
        y.slice(s![..1280]),
        x.slice(s![1280.., ..]),
        y.slice(s![1280..]),
    )
    .unwrap();
    let best = m.train_history.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best < 1.0, "validation rmse {best}");
}

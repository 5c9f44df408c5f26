use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use isf_core::staging::{
    open_pair, Backend, StageDiagnostic, StageListener, StageReader, StagingConfig, StagingError,
};
use isf_core::{Field, FieldShape, FrameError, StepPayload, TIMER_SLACK_S};
use proptest::prelude::*;

/// Timing tests share the machine; run them one at a time.
static TIMING: Mutex<()> = Mutex::new(());

fn timing_lock() -> std::sync::MutexGuard<'static, ()> {
    TIMING.lock().unwrap_or_else(|e| e.into_inner())
}

fn tiny(step: u64) -> StepPayload {
    let shape = FieldShape::new(1, 2, 1).unwrap();
    let v = (0..8).map(|k| step as f64 + k as f64 / 8.0).collect();
    StepPayload::field(step, step as f64, Field::new(shape, v).unwrap())
}

fn socket(dir: &tempfile::TempDir, name: &str) -> Backend {
    Backend::LocalSocket {
        endpoint: dir.path().join(name),
    }
}

fn ordered_delivery(backend: &Backend, k: u64, capacity: usize) -> Vec<u64> {
    let (mut w, mut r) = open_pair(backend, StagingConfig::with_capacity(capacity)).unwrap();
    let reader = thread::spawn(move || {
        let mut seen = Vec::new();
        while let Some(p) = r.read_step().unwrap() {
            seen.push(p.step_index());
        }
        seen
    });
    for i in 0..k {
        w.write_step(&tiny(i)).unwrap();
    }
    w.close().unwrap();
    reader.join().unwrap()
}

#[test]
fn ten_thousand_steps_in_order_both_backends() {
    let dir = tempfile::tempdir().unwrap();
    let expect: Vec<u64> = (0..10_000).collect();
    assert_eq!(ordered_delivery(&Backend::InProcess, 10_000, 1), expect);
    assert_eq!(ordered_delivery(&socket(&dir, "order.sock"), 10_000, 1), expect);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_k_any_capacity_in_order(k in 0u64..400, capacity in 1usize..16, use_socket in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let backend = if use_socket { socket(&dir, "p.sock") } else { Backend::InProcess };
        prop_assert_eq!(ordered_delivery(&backend, k, capacity), (0..k).collect::<Vec<_>>());
    }

    #[test]
    fn mutation_after_handoff_is_invisible(
        seed_values in prop::collection::vec(-1e3f64..1e3, 27),
        junk in prop::collection::vec(-1e3f64..1e3, 27),
        use_socket in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let backend = if use_socket { socket(&dir, "m.sock") } else { Backend::InProcess };
        let (mut w, mut r) = open_pair(&backend, StagingConfig::with_capacity(2)).unwrap();
        let shape = FieldShape::new(1, 3, 1).unwrap();
        let original = Field::new(shape, seed_values.clone()).unwrap();
        let mut payload = StepPayload::field(0, 0.0, original.clone());
        w.write_step(&payload).unwrap();
        // The producer reuses its buffer right away.
        payload = StepPayload::field(0, 0.0, Field::new(shape, junk).unwrap());
        drop(payload);
        w.close().unwrap();
        let got = r.read_step().unwrap().unwrap();
        prop_assert_eq!(got, StepPayload::field(0, 0.0, original));
    }
}

#[test]
fn writer_blocks_for_stalled_reader() {
    let _g = timing_lock();
    let stall = Duration::from_millis(100);
    for capacity in [1usize, 3] {
        let (mut w, mut r) = open_pair(&Backend::InProcess, StagingConfig::with_capacity(capacity)).unwrap();
        // The reader cannot take anything before `start + stall`.
        let start = Instant::now();
        let reader = thread::spawn(move || {
            thread::sleep(stall);
            while r.read_step().unwrap().is_some() {}
        });
        for i in 0..capacity as u64 {
            let h = w.write_step(&tiny(i)).unwrap();
            assert!(h < 0.05, "write {i} should not block, took {h}");
        }
        let before = start.elapsed().as_secs_f64();
        let blocked = w.write_step(&tiny(capacity as u64)).unwrap();
        assert!(
            blocked >= stall.as_secs_f64() - before - TIMER_SLACK_S,
            "write {} blocked only {blocked} s",
            capacity + 1
        );
        w.close().unwrap();
        reader.join().unwrap();
    }
}

#[test]
fn watchdog_reports_but_keeps_waiting() {
    let _g = timing_lock();
    let cfg = StagingConfig {
        capacity: 1,
        watchdog: Duration::from_millis(30),
    };
    let dir = tempfile::tempdir().unwrap();
    for backend in [Backend::InProcess, socket(&dir, "w.sock")] {
        let (mut w, mut r) = open_pair(&backend, cfg).unwrap();
        let reader = thread::spawn(move || {
            thread::sleep(Duration::from_millis(100));
            let mut n = 0;
            while r.read_step().unwrap().is_some() {
                n += 1;
            }
            n
        });
        w.write_step(&tiny(0)).unwrap();
        // With the socket backend the first frame's credit is returned
        // only when the reader pulls it, so the second write stalls too.
        let took = w.write_step(&tiny(1)).unwrap();
        assert!(took >= 0.09, "second write returned after {took} s");
        assert!(w.stats().watchdog_warnings >= 1);
        assert!(matches!(
            w.diagnostics()[0],
            StageDiagnostic::BlockedTimeout { step_index: 1, waited_s } if waited_s >= 0.03 - TIMER_SLACK_S
        ));
        w.close().unwrap();
        assert_eq!(reader.join().unwrap(), 2);
    }
}

#[test]
fn read_blocks_until_a_write_arrives() {
    let _g = timing_lock();
    let (mut w, mut r) = open_pair(&Backend::InProcess, StagingConfig::default()).unwrap();
    let (tx, rx) = std::sync::mpsc::channel();
    let reader = thread::spawn(move || {
        let p = r.read_step().unwrap();
        tx.send(()).unwrap();
        p
    });
    thread::sleep(Duration::from_millis(50));
    assert!(rx.try_recv().is_err(), "reader returned before any write");
    w.write_step(&tiny(4)).unwrap();
    assert_eq!(reader.join().unwrap().unwrap().step_index(), 4);
}

#[test]
fn corrupted_frame_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    for backend in [Backend::InProcess, socket(&dir, "c.sock")] {
        let (mut w, mut r) = open_pair(&backend, StagingConfig::with_capacity(4)).unwrap();
        w.write_step(&tiny(0)).unwrap();
        w.corrupt_next_frame(5);
        w.write_step(&tiny(1)).unwrap();
        w.write_step(&tiny(2)).unwrap();
        w.close().unwrap();
        assert_eq!(r.read_step().unwrap().unwrap().step_index(), 0);
        assert!(matches!(
            r.read_step(),
            Err(StagingError::Frame(FrameError::ChecksumMismatch { .. }))
        ));
        // Framing is intact, so the stream continues.
        assert_eq!(r.read_step().unwrap().unwrap().step_index(), 2);
        assert_eq!(r.read_step().unwrap(), None);
    }
}

/// Reader half of the cross-process tests, run in a child copy of this
/// test binary.
#[test]
fn child_reader() {
    let Ok(path) = std::env::var("ISF_STAGE_CHILD_SOCKET") else {
        return;
    };
    let mut r = StageReader::connect(path.as_ref(), Duration::from_secs(10)).unwrap();
    if std::env::var("ISF_STAGE_CHILD_HANG").is_ok() {
        thread::sleep(Duration::from_secs(60));
    }
    let mut out = std::io::stdout().lock();
    while let Some(p) = r.read_step().unwrap() {
        writeln!(out, "STEP {}", p.step_index()).unwrap();
    }
}

fn spawn_child_reader(path: &std::path::Path, hang: bool) -> std::process::Child {
    let mut cmd = Command::new(std::env::current_exe().unwrap());
    cmd.args(["child_reader", "--exact", "--nocapture", "--test-threads=1"])
        .env("ISF_STAGE_CHILD_SOCKET", path)
        .stdout(Stdio::piped())
        .stderr(Stdio::null());
    if hang {
        cmd.env("ISF_STAGE_CHILD_HANG", "1");
    }
    cmd.spawn().unwrap()
}

#[test]
fn cross_process_delivery_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.sock");
    let listener = StageListener::bind(&path, StagingConfig::with_capacity(2)).unwrap();
    let child = spawn_child_reader(&path, false);
    let mut w = listener.accept(Duration::from_secs(30)).unwrap();
    for i in 0..10 {
        w.write_step(&tiny(i)).unwrap();
    }
    w.close().unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let steps: Vec<u64> = String::from_utf8(out.stdout)
        .unwrap()
        .split("STEP ")
        .skip(1)
        .map(|s| s.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(steps, (0..10).collect::<Vec<_>>());
}

#[test]
fn write_after_reader_process_killed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.sock");
    let listener = StageListener::bind(&path, StagingConfig::with_capacity(4)).unwrap();
    let mut child = spawn_child_reader(&path, true);
    let mut w = listener.accept(Duration::from_secs(30)).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(w.write_step(&tiny(0)), Err(StagingError::ReaderGone));
}

//! Process memory and CPU counters, read from procfs.
//!
//! Off Linux every figure is `None`.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

pub const SAMPLE_HZ: f64 = 20.0;

// USER_HZ; fixed at 100 on every mainstream Linux ABI
const CLOCK_TICKS: f64 = 100.0;

/// Peak resident set size of this process in MB.
pub fn peak_memory_mb() -> Option<f64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024.0)
}

/// User plus system CPU seconds consumed so far by this process.
pub fn cpu_seconds() -> Option<f64> {
    let stat = std::fs::read_to_string("/proc/self/stat").ok()?;
    // the command name may contain spaces; fields resume after its ')'
    let rest = &stat[stat.rfind(')')? + 2..];
    let mut f = rest.split_whitespace().skip(11);
    let utime: f64 = f.next()?.parse().ok()?;
    let stime: f64 = f.next()?.parse().ok()?;
    Some((utime + stime) / CLOCK_TICKS)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpuSummary {
    /// Mean CPU use over the sampled intervals; 100 is one full core.
    pub mean_percent: Option<f64>,
    pub samples: usize,
}

/// Polls process CPU time on a background thread.
pub struct CpuSampler {
    stop: Arc<AtomicBool>,
    handle: JoinHandle<Vec<f64>>,
}

impl CpuSampler {
    pub fn start(hz: f64) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let period = Duration::from_secs_f64(1.0 / hz);
        let handle = std::thread::spawn(move || {
            let mut out = Vec::new();
            let Some(mut last_cpu) = cpu_seconds() else {
                return out;
            };
            let mut last = Instant::now();
            loop {
                let done = flag.load(Ordering::Relaxed);
                if !done {
                    std::thread::sleep(period);
                }
                let now = Instant::now();
                let dt = now.duration_since(last).as_secs_f64();
                if let Some(cpu) = cpu_seconds() {
                    if dt > 0.0 {
                        out.push((cpu - last_cpu) / dt * 100.0);
                    }
                    last_cpu = cpu;
                }
                last = now;
                if done || flag.load(Ordering::Relaxed) {
                    return out;
                }
            }
        });
        Self { stop, handle }
    }

    pub fn stop(self) -> CpuSummary {
        self.stop.store(true, Ordering::Relaxed);
        let samples = self.handle.join().unwrap_or_default();
        let mean_percent = (!samples.is_empty()).then(|| samples.iter().sum::<f64>() / samples.len() as f64);
        CpuSummary {
            mean_percent,
            samples: samples.len(),
        }
    }
}

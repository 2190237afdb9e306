use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::{
    Classification, ExecutionResult, ProgramBundle, SandboxConfig, SandboxError, BOOTSTRAP, STDERR_TAIL_BYTES,
};
use crate::mutation::InputTuple;

/// Optional OS-level restrictions applied in the child before exec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Hardening {
    pub address_space_bytes: Option<u64>,
    pub cpu_seconds: Option<u64>,
    pub max_file_bytes: Option<u64>,
    pub max_processes: Option<u64>,
}

impl Hardening {
    fn apply(&self) -> std::io::Result<()> {
        let limits = [
            (libc::RLIMIT_AS, self.address_space_bytes),
            (libc::RLIMIT_CPU, self.cpu_seconds),
            (libc::RLIMIT_FSIZE, self.max_file_bytes),
            (libc::RLIMIT_NPROC, self.max_processes),
        ];
        for (resource, value) in limits {
            if let Some(v) = value {
                let lim = libc::rlimit {
                    rlim_cur: v as libc::rlim_t,
                    rlim_max: v as libc::rlim_t,
                };
                // SAFETY: setrlimit only reads the struct we pass.
                if unsafe { libc::setrlimit(resource, &lim) } != 0 {
                    return Err(std::io::Error::last_os_error());
                }
            }
        }
        Ok(())
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Runs bundles as isolated child processes. Cheap to clone; clones share the
/// concurrency cap.
#[derive(Clone)]
pub struct Sandbox {
    config: SandboxConfig,
    slots: Arc<Slots>,
}

impl std::fmt::Debug for Sandbox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sandbox").field("config", &self.config).finish()
    }
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        let slots = Arc::new(Slots {
            free: Mutex::new(config.max_parallel.max(1)),
            cv: Condvar::new(),
        });
        Self { config, slots }
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.slots.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.slots.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(&self.slots)
    }

    /// Runs `bundle` on `input` under the configured limit.
    pub fn execute(&self, bundle: &ProgramBundle, input: &InputTuple) -> Result<ExecutionResult, SandboxError> {
        self.execute_with_limit(bundle, input, self.config.timeout)
    }

    pub fn execute_with_limit(
        &self,
        bundle: &ProgramBundle,
        input: &InputTuple,
        limit: Duration,
    ) -> Result<ExecutionResult, SandboxError> {
        let stdin = format!("{}\n", input.args_json());
        let raw = self.run(bundle, &stdin, limit)?;
        Ok(ExecutionResult {
            classification: raw.classification,
            exit_code: raw.exit_code,
            signal: raw.signal,
            stderr_tail: raw.stderr_tail,
            duration_ms: raw.duration_ms,
            input: input.clone(),
        })
    }

    /// Runs `bundle` with arbitrary stdin text. The harness contract tests use
    /// this to feed malformed input.
    pub fn run(&self, bundle: &ProgramBundle, stdin: &str, limit: Duration) -> Result<RawOutcome, SandboxError> {
        let (program, args) = bundle.interpreter_cmd.split_first().ok_or(SandboxError::NoInterpreter)?;
        let _slot = self.acquire();

        fs::create_dir_all(&bundle.workdir)?;
        let dir = tempfile::Builder::new().prefix("autosafe-run-").tempdir_in(&bundle.workdir)?;
        let program_path = dir.path().join("program.py");
        fs::write(&program_path, &bundle.source)?;
        let input_path = dir.path().join("input.json");
        fs::write(&input_path, stdin)?;
        let stderr_path = dir.path().join("stderr.txt");

        let mut cmd = Command::new(program);
        cmd.args(args)
            .arg("-c")
            .arg(BOOTSTRAP)
            .current_dir(dir.path())
            .env_clear()
            .stdin(File::open(&input_path)?)
            .stdout(Stdio::null())
            .stderr(File::create(&stderr_path)?)
            .process_group(0);
        for key in &self.config.env_allowlist {
            if let Some(v) = std::env::var_os(key) {
                cmd.env(key, v);
            }
        }
        cmd.env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONIOENCODING", "utf-8")
            .env("HOME", dir.path())
            .env("TMPDIR", dir.path());
        if let Some(h) = self.config.hardening {
            // SAFETY: the closure only calls setrlimit, which is async-signal-safe.
            unsafe {
                cmd.pre_exec(move || h.apply());
            }
        }

        let started = Instant::now();
        let mut child = cmd.spawn().map_err(|source| SandboxError::Spawn {
            command: bundle.interpreter_cmd.join(" "),
            source,
        })?;
        let (status, timed_out, elapsed) = wait_with_deadline(&mut child, started, limit)?;
        kill_group(&child);

        let exit_code = if timed_out { None } else { status.code() };
        Ok(RawOutcome {
            classification: Classification::from_exit(status.code(), timed_out),
            exit_code,
            signal: if timed_out { None } else { status.signal() },
            stderr_tail: read_tail(&stderr_path, STDERR_TAIL_BYTES)?,
            duration_ms: elapsed.as_millis() as u64,
        })
    }
}

/// Outcome of one run before it is tied to an input tuple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawOutcome {
    pub classification: Classification,
    pub exit_code: Option<i32>,
    pub signal: Option<i32>,
    pub stderr_tail: String,
    pub duration_ms: u64,
}

fn wait_with_deadline(
    child: &mut Child,
    started: Instant,
    limit: Duration,
) -> std::io::Result<(ExitStatus, bool, Duration)> {
    let mut pause = Duration::from_millis(1);
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok((status, false, started.elapsed()));
        }
        let elapsed = started.elapsed();
        if elapsed >= limit {
            kill_group(child);
            let status = child.wait()?;
            return Ok((status, true, elapsed));
        }
        thread::sleep(pause.min(limit - elapsed));
        pause = (pause * 2).min(Duration::from_millis(10));
    }
}

/// SIGKILL to the child's whole process group, which it leads.
fn kill_group(child: &Child) {
    let pgid = child.id() as libc::pid_t;
    // SAFETY: plain syscall; ESRCH after the group is gone is harmless.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

fn read_tail(path: &Path, cap: usize) -> std::io::Result<String> {
    let mut f = File::open(path)?;
    let len = f.metadata()?.len();
    let start = len.saturating_sub(cap as u64);
    f.seek(SeekFrom::Start(start))?;
    let mut buf = Vec::with_capacity((len - start) as usize);
    f.read_to_end(&mut buf)?;
    let mut text = String::from_utf8_lossy(&buf).into_owned();
    if start > 0 {
        // Drop a leading partial character or line fragment.
        if let Some(nl) = text.find('\n') {
            text.drain(..=nl);
        }
    }
    Ok(text)
}

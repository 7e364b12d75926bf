use std::time::Instant;

use vecset4d::geometry::Vec3;
use vecset4d::rng;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
    /// Time spent building shared prerequisites owned by another criterion.
    pub excluded_secs: f64,
}

impl Outcome {
    pub fn fail(detail: String) -> Self {
        Self { pass: false, detail, excluded_secs: 0.0 }
    }
}

/// Collects named sub-checks into one criterion result.
#[derive(Default)]
pub struct Checks {
    parts: Vec<String>,
    failed: Vec<String>,
    excluded_secs: f64,
}

impl Checks {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&mut self, name: &str, ok: bool, detail: String) {
        let line = format!("{name} {detail}");
        if !ok {
            self.failed.push(line.clone());
        }
        self.parts.push(line);
    }

    /// Records an error that stops the criterion early.
    pub fn error(&mut self, name: &str, err: impl std::fmt::Display) {
        self.check(name, false, format!("error: {err}"));
    }

    /// Runs `f`, leaving its wall time out of this criterion's total.
    pub fn excluding<R>(&mut self, f: impl FnOnce() -> R) -> R {
        let t = Instant::now();
        let r = f();
        self.excluded_secs += t.elapsed().as_secs_f64();
        r
    }

    pub fn finish(self) -> Outcome {
        let pass = self.failed.is_empty();
        let detail = if pass { self.parts.join("; ") } else { format!("failed: {}", self.failed.join("; ")) };
        Outcome { pass, detail, excluded_secs: self.excluded_secs }
    }
}

pub fn cloud(n: usize, half: f64, seed: u64) -> Vec<Vec3> {
    vecset4d::geometry::sampling::uniform_points(n, [-half; 3], [half; 3], &mut rng::rng(seed))
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for p in entries.flatten().map(|e| e.path()) {
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(bytes) = std::fs::read(&p) {
                let rel = p.strip_prefix(dir).map(|r| r.to_string_lossy().into_owned()).unwrap_or_default();
                out.push((rel, bytes));
            }
        }
    }
    out.sort();
    out
}

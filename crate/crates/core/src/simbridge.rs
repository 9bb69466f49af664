//! Moving quadrature nodes to an external simulator and results back.
//!
//! Two workflows share one result type:
//!
//! * files: [`emit_samples`] writes `id,x1..xd` rows tagged with the rule
//!   hash; the simulator side fills in a results file `id,<outputs...>`
//!   carrying the same `# rule=<hash>` line, read by [`ingest_results`];
//! * subprocesses: [`run_command`] runs one command per node.
//!
//! Results are always ordered by node id, and every node must have a value:
//! the projection needs all of them.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::DMatrix;

use crate::error::{Error, NodeFailure, Result};
use crate::quadrature::QuadratureRule;

/// Node coordinates with their 1-based ids, tagged with the rule hash.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub rule_hash: String,
    /// Row `id - 1` holds node `id`.
    pub rows: DMatrix<f64>,
}

impl SampleBatch {
    pub fn from_rule(rule: &QuadratureRule) -> Self {
        SampleBatch {
            rule_hash: rule.fingerprint(),
            rows: rule.nodes().clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# ngcolloc-samples v1");
        let _ = writeln!(s, "# rule={}", self.rule_hash);
        let cols: Vec<String> = (1..=self.rows.ncols()).map(|t| format!("x{t}")).collect();
        let _ = writeln!(s, "id,{}", cols.join(","));
        for k in 0..self.len() {
            let row: Vec<String> = self.rows.row(k).iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{},{}", k + 1, row.join(","));
        }
        s
    }
}

/// Writes the rule's nodes for an external simulator.
pub fn emit_samples(rule: &QuadratureRule, path: &Path) -> Result<SampleBatch> {
    let batch = SampleBatch::from_rule(rule);
    std::fs::write(path, batch.to_csv())?;
    Ok(batch)
}

/// Simulator outputs, one row per node in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultBatch {
    pub rule_hash: String,
    pub columns: Vec<String>,
    /// `M x C`.
    pub values: DMatrix<f64>,
}

impl ResultBatch {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values.column(c).iter().copied().collect()
    }

    /// The results-file format read by [`parse_results`].
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# rule={}", self.rule_hash);
        let _ = writeln!(s, "id,{}", self.columns.join(","));
        for k in 0..self.len() {
            let row: Vec<String> = self.values.row(k).iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{},{}", k + 1, row.join(","));
        }
        s
    }
}

pub fn ingest_results(rule: &QuadratureRule, path: &Path) -> Result<ResultBatch> {
    let text = std::fs::read_to_string(path)?;
    parse_results(rule, &text, path)
}

/// Parses a results file against `rule`.
///
/// The file needs a `# rule=<hash>` line matching the rule and a header
/// starting with `id`. Columns named `x1..xd` are taken as echoed
/// coordinates and skipped, so a filled-in samples file is accepted. A cell
/// reading `failed` marks that node as failed.
pub fn parse_results(rule: &QuadratureRule, text: &str, path: &Path) -> Result<ResultBatch> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let expected = rule.fingerprint();
    let m = rule.len();
    let mut found_hash = None;
    let mut header: Option<(Vec<usize>, Vec<String>)> = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; m];
    let mut failures = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(h) = comment.trim().strip_prefix("rule=") {
                found_hash = Some(h.trim().to_string());
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some((keep, _)) = &header else {
            if cells[0] != "id" {
                return Err(perr(lineno, "header must start with `id`".into()));
            }
            let coord = |c: &str| {
                c.strip_prefix('x')
                    .and_then(|t| t.parse::<usize>().ok())
                    .is_some_and(|t| t >= 1 && t <= rule.dim())
            };
            let keep: Vec<usize> = (1..cells.len()).filter(|&c| !coord(cells[c])).collect();
            if keep.is_empty() {
                return Err(perr(lineno, "no output columns".into()));
            }
            let names = keep.iter().map(|&c| cells[c].to_string()).collect();
            header = Some((keep, names));
            continue;
        };
        let id: usize = cells[0]
            .parse()
            .map_err(|_| perr(lineno, format!("bad id `{}`", cells[0])))?;
        if id < 1 || id > m {
            return Err(perr(lineno, format!("id {id} outside 1..={m}")));
        }
        if rows[id - 1].is_some() || failures.iter().any(|f: &NodeFailure| f.id == id) {
            return Err(perr(lineno, format!("duplicate id {id}")));
        }
        let mut vals = Vec::with_capacity(keep.len());
        let mut failed = false;
        for &c in keep {
            let cell = cells
                .get(c)
                .ok_or_else(|| perr(lineno, format!("expected at least {} cells", c + 1)))?;
            if cell.eq_ignore_ascii_case("failed") {
                failed = true;
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| perr(lineno, format!("non-numeric value `{cell}`")))?;
            if !v.is_finite() {
                return Err(perr(lineno, format!("non-finite value `{cell}`")));
            }
            vals.push(v);
        }
        if failed {
            failures.push(NodeFailure {
                id,
                reason: "marked failed in results file".into(),
            });
        } else {
            rows[id - 1] = Some(vals);
        }
    }
    match found_hash {
        None => return Err(perr(0, "missing `# rule=<hash>` provenance line".into())),
        Some(found) if found != expected => return Err(Error::StaleRule { expected, found }),
        _ => {}
    }
    let (_, columns) = header.ok_or_else(|| perr(0, "missing header line".into()))?;
    if !failures.is_empty() {
        failures.sort_by_key(|f| f.id);
        return Err(Error::Simulator { failures });
    }
    let missing: Vec<usize> = (1..=m).filter(|&id| rows[id - 1].is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteBatch { missing });
    }
    let values = DMatrix::from_fn(m, columns.len(), |k, c| rows[k].as_ref().expect("complete")[c]);
    Ok(ResultBatch {
        rule_hash: expected,
        columns,
        values,
    })
}

/// How [`run_command`] invokes the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandSpec {
    /// Run with `sh -c` after substituting `{id}`, `{x1}`..`{xd}` and `{x}`
    /// (all coordinates, comma separated).
    pub template: String,
    /// Also write `x1,..,xd` and a newline to the command's standard input.
    pub stdin: bool,
    /// Maximum concurrent subprocesses.
    pub parallelism: usize,
    /// Extra attempts per node after a failure.
    pub retries: usize,
}

impl CommandSpec {
    pub fn new(template: impl Into<String>) -> Self {
        CommandSpec {
            template: template.into(),
            stdin: false,
            parallelism: 1,
            retries: 0,
        }
    }

    fn render(&self, id: usize, point: &[f64]) -> String {
        let mut cmd = self.template.replace("{id}", &id.to_string());
        // Highest index first so `{x1}` does not match inside `{x10}`.
        for (t, v) in point.iter().enumerate().rev() {
            cmd = cmd.replace(&format!("{{x{}}}", t + 1), &format!("{v:e}"));
        }
        cmd.replace("{x}", &join(point))
    }
}

fn join(point: &[f64]) -> String {
    point.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

type RunOutcome = std::result::Result<Vec<f64>, String>;

/// Runs the simulator once per node, at most `spec.parallelism` at a time.
///
/// Each run must exit successfully and print one number, or a
/// comma-separated vector with the same length for every node. Any node
/// still failing after its retries fails the whole batch.
pub fn run_command(rule: &QuadratureRule, spec: &CommandSpec) -> Result<ResultBatch> {
    if spec.parallelism < 1 {
        return Err(Error::Config("parallelism must be at least 1".into()));
    }
    if spec.template.trim().is_empty() {
        return Err(Error::Config("empty simulator command".into()));
    }
    let m = rule.len();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunOutcome>>> = Mutex::new(vec![None; m]);
    std::thread::scope(|scope| {
        for _ in 0..spec.parallelism.min(m) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= m {
                    break;
                }
                let point = rule.node(k);
                let mut outcome = Err(String::new());
                for _ in 0..=spec.retries {
                    outcome = run_one(spec, k + 1, &point);
                    if outcome.is_ok() {
                        break;
                    }
                }
                slots.lock().expect("no worker panics while holding the lock")[k] = Some(outcome);
            });
        }
    });
    let slots = slots.into_inner().expect("workers finished");
    let mut failures = Vec::new();
    let mut rows = Vec::with_capacity(m);
    for (k, slot) in slots.into_iter().enumerate() {
        match slot.expect("every node was attempted") {
            Ok(v) => rows.push(v),
            Err(reason) => failures.push(NodeFailure { id: k + 1, reason }),
        }
    }
    if failures.is_empty() {
        let widths: BTreeSet<usize> = rows.iter().map(Vec::len).collect();
        if widths.len() > 1 {
            let first = rows[0].len();
            for (k, r) in rows.iter().enumerate() {
                if r.len() != first {
                    failures.push(NodeFailure {
                        id: k + 1,
                        reason: format!("printed {} values, node 1 printed {first}", r.len()),
                    });
                }
            }
        }
    }
    if !failures.is_empty() {
        return Err(Error::Simulator { failures });
    }
    let c = rows[0].len();
    let columns = if c == 1 {
        vec!["y".to_string()]
    } else {
        (1..=c).map(|i| format!("y{i}")).collect()
    };
    Ok(ResultBatch {
        rule_hash: rule.fingerprint(),
        columns,
        values: DMatrix::from_fn(m, c, |k, j| rows[k][j]),
    })
}

fn run_one(spec: &CommandSpec, id: usize, point: &[f64]) -> std::result::Result<Vec<f64>, String> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(spec.render(id, point))
        .stdin(if spec.stdin { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("spawn failed: {e}"))?;
    if spec.stdin {
        let mut input = child.stdin.take().expect("stdin piped");
        // A command that ignores its input may close the pipe early.
        let _ = writeln!(input, "{}", join(point));
    }
    let out = child.wait_with_output().map_err(|e| format!("wait failed: {e}"))?;
    if !out.status.success() {
        let err = String::from_utf8_lossy(&out.stderr);
        return Err(format!("{}: {}", out.status, err.trim()));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let text = text.trim();
    let vals: std::result::Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(format!("unparseable output `{text}`")),
    }
}

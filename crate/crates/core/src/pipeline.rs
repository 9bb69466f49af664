//! The batch workflow behind the command-line tool: a TOML project file,
//! one function per subcommand, and machine-readable reports in an output
//! directory.
//!
//! Settings are resolved in this order, first match wins: command-line
//! flags ([`Overrides`]), the project file, the `NGCOLLOC_OUT` environment
//! variable (output directory only), built-in defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::collocation::{self, certificate, ErrorCertificate, SurrogateModel};
use crate::density::{GaussianMixture, MixtureSpec};
use crate::error::{Error, Result};
use crate::multi_index::num_terms;
use crate::quadrature::{build_rule_logged, BuildEvent, QuadratureRule, SolverConfig};
use crate::simbridge::{self, CommandSpec, ResultBatch};
use crate::synthetic;

pub const OUT_ENV: &str = "NGCOLLOC_OUT";
pub const DEFAULT_OUT: &str = "ngcolloc-out";

/// Orders and tolerances swept by [`cmd_demo`].
pub const DEMO_ORDERS: [u32; 4] = [1, 2, 3, 4];
pub const DEMO_EPSILONS: [f64; 3] = [1e-4, 1e-6, 1e-8];
const DEMO_MC_SAMPLES: usize = 1_000_000;

/// Where the density comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DensitySource {
    /// A built-in density; `"synthetic"` is the two-parameter benchmark.
    Preset {
        preset: String,
    },
    /// A mixture spec in its own TOML or JSON file, relative to the project
    /// file.
    File {
        file: PathBuf,
    },
    Inline(MixtureSpec),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    /// Command template for [`simbridge::run_command`].
    pub command: Option<String>,
    /// Results file for the two-phase workflow, relative to the project
    /// file. Used when `command` is absent.
    pub results: Option<PathBuf>,
    pub stdin: bool,
    pub parallelism: Option<usize>,
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub samples: usize,
    pub bins: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            samples: 100_000,
            bins: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub density: Option<DensitySource>,
    #[serde(default = "default_order")]
    pub order: u32,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulator: SimulatorConfig,
    #[serde(default)]
    pub stats: StatsConfig,
    pub out_dir: Option<PathBuf>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_order() -> u32 {
    2
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            density: None,
            order: default_order(),
            solver: SolverConfig::default(),
            simulator: SimulatorConfig::default(),
            stats: StatsConfig::default(),
            out_dir: None,
            base_dir: PathBuf::from("."),
        }
    }
}

/// Command-line values that take precedence over the project file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub order: Option<u32>,
    pub out: Option<PathBuf>,
}

impl ProjectConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ProjectConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Applies overrides, resolves the output directory and validates.
    /// `env_out` is the value of [`OUT_ENV`], if set.
    pub fn resolve(mut self, overrides: &Overrides, env_out: Option<PathBuf>) -> Result<ResolvedConfig> {
        if let Some(s) = overrides.seed {
            self.solver.seed = s;
        }
        if let Some(e) = overrides.epsilon {
            self.solver.epsilon = e;
        }
        if let Some(p) = overrides.order {
            self.order = p;
        }
        let out_dir = match (&overrides.out, &self.out_dir, env_out) {
            (Some(o), _, _) => o.clone(),
            (None, Some(o), _) => self.base_dir.join(o),
            (None, None, Some(o)) => o,
            (None, None, None) => PathBuf::from(DEFAULT_OUT),
        };
        self.validate()?;
        Ok(ResolvedConfig { cfg: self, out_dir })
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::Config("order must be at least 1".into()));
        }
        self.solver.validate()?;
        if self.stats.samples < 100 {
            return Err(Error::Config("stats.samples must be at least 100".into()));
        }
        if self.stats.bins < 1 {
            return Err(Error::Config("stats.bins must be at least 1".into()));
        }
        if self.simulator.parallelism == Some(0) {
            return Err(Error::Config("simulator.parallelism must be at least 1".into()));
        }
        if let Some(DensitySource::Preset { preset }) = &self.density {
            if preset != "synthetic" {
                return Err(Error::Config(format!("unknown density preset `{preset}`")));
            }
        }
        Ok(())
    }
}

/// A validated configuration with its output directory fixed.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub cfg: ProjectConfig,
    pub out_dir: PathBuf,
}

impl ResolvedConfig {
    pub fn density(&self) -> Result<GaussianMixture> {
        let spec = match &self.cfg.density {
            None => return Err(Error::Config("project file has no [density] section".into())),
            Some(DensitySource::Preset { .. }) => return Ok(synthetic::density()),
            Some(DensitySource::Inline(spec)) => spec.clone(),
            Some(DensitySource::File { file }) => {
                let path = self.cfg.base_dir.join(file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                let parsed = if path.extension().is_some_and(|e| e == "json") {
                    serde_json::from_str(&text).map_err(|e| e.to_string())
                } else {
                    toml::from_str(&text).map_err(|e| e.to_string())
                };
                parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
        };
        GaussianMixture::new(&spec)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn prepare_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::Io(e).in_stage("output"))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasisReport {
    pub dimension: usize,
    pub order: u32,
    pub functions: usize,
    /// `max |E[Psi_i Psi_j] - delta_ij|` from the moment table.
    pub orthonormality_error: f64,
    pub gram_condition: f64,
    pub density_hash: String,
    pub files: Vec<String>,
}

impl fmt::Display for BasisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "basis: d={} p={} functions={}", self.dimension, self.order, self.functions)?;
        writeln!(f, "  max |E[Psi_i Psi_j] - delta_ij| = {:.3e}", self.orthonormality_error)?;
        write!(f, "  scaled Gram condition = {:.3e}", self.gram_condition)
    }
}

/// Builds the order-`p` basis and writes `basis.json` and
/// `basis_report.json`.
pub fn cmd_basis(rc: &ResolvedConfig) -> Result<BasisReport> {
    let density = rc.density().map_err(|e| e.in_stage("density"))?;
    let basis = BasisSet::for_density(&density, rc.cfg.order).map_err(|e| e.in_stage("basis"))?;
    rc.prepare_out()?;
    let report = BasisReport {
        dimension: basis.dim(),
        order: basis.order(),
        functions: basis.len(),
        orthonormality_error: basis.orthonormality_error(basis.order()).map_err(|e| e.in_stage("basis"))?,
        gram_condition: basis.gram_condition(),
        density_hash: density.fingerprint(),
        files: vec!["basis.json".into(), "basis_report.json".into()],
    };
    basis.save(&rc.path("basis.json")).map_err(|e| e.in_stage("output"))?;
    write_json(&rc.path("basis_report.json"), &report).map_err(|e| e.in_stage("output"))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadReport {
    pub dimension: usize,
    pub order: u32,
    pub nodes: usize,
    /// Lower bound `N_p` on the node count.
    pub n_p: usize,
    /// Upper bound `N_2p` on the node count.
    pub n_2p: usize,
    pub residual_l1: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub rule_hash: String,
    pub density_hash: String,
    pub certificate: ErrorCertificate,
    pub build_log: Vec<BuildEvent>,
    pub files: Vec<String>,
}

impl fmt::Display for QuadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "quadrature: p={} M={} (bounds N_p={} <= M <= N_2p={})",
            self.order, self.nodes, self.n_p, self.n_2p
        )?;
        writeln!(f, "  l1 residual {:.3e} (epsilon {:.1e})", self.residual_l1, self.epsilon)?;
        write!(
            f,
            "  ||V - I||_F = {:.3e} <= N_p T eps = {:.3e} (T = {:.4})",
            self.certificate.gram_deviation, self.certificate.bound, self.certificate.t
        )
    }
}

/// The order-`2p` basis with order-`4p` moments a rule of order `p` needs,
/// and the rule itself.
pub fn build_for(density: &GaussianMixture, order: u32, solver: &SolverConfig) -> Result<(BasisSet, QuadratureRule, Vec<BuildEvent>)> {
    let basis = BasisSet::for_density_with_moments(density, 2 * order, 4 * order).map_err(|e| e.in_stage("basis"))?;
    let (rule, log) = build_rule_logged(&basis, density, order, solver).map_err(|e| e.in_stage("quadrature"))?;
    Ok((basis, rule, log))
}

/// Builds the rule, writing `rule.csv`, `samples.csv` (for the two-phase
/// simulator workflow) and `quad_report.json`. On construction failure the
/// best rule found goes to `rule_failed.csv`.
pub fn cmd_quad(rc: &ResolvedConfig) -> Result<QuadReport> {
    let density = rc.density().map_err(|e| e.in_stage("density"))?;
    let p = rc.cfg.order;
    rc.prepare_out()?;
    let (basis, rule, log) = match build_for(&density, p, &rc.cfg.solver) {
        Ok(built) => built,
        Err(Error::Stage { stage, source }) => {
            if let Error::ConstructionFailed { best, .. } = source.as_ref() {
                std::fs::write(rc.path("rule_failed.csv"), best.to_csv()).map_err(|e| Error::Io(e).in_stage("output"))?;
            }
            return Err(Error::Stage { stage, source });
        }
        Err(e) => return Err(e),
    };
    let cert = certificate(&basis, &rule, basis.moments()).map_err(|e| e.in_stage("certificate"))?;
    rule.save(&rc.path("rule.csv")).map_err(|e| e.in_stage("output"))?;
    simbridge::emit_samples(&rule, &rc.path("samples.csv")).map_err(|e| e.in_stage("output"))?;
    let report = QuadReport {
        dimension: rule.dim(),
        order: p,
        nodes: rule.len(),
        n_p: num_terms(rule.dim(), p),
        n_2p: num_terms(rule.dim(), 2 * p),
        residual_l1: rule.residual_l1(),
        epsilon: rc.cfg.solver.epsilon,
        seed: rc.cfg.solver.seed,
        rule_hash: rule.fingerprint(),
        density_hash: density.fingerprint(),
        certificate: cert,
        build_log: log,
        files: vec!["rule.csv".into(), "samples.csv".into(), "quad_report.json".into()],
    };
    write_json(&rc.path("quad_report.json"), &report).map_err(|e| e.in_stage("output"))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputStats {
    pub name: String,
    pub mean: f64,
    pub variance: f64,
    pub std: f64,
}

impl OutputStats {
    fn of(model: &SurrogateModel) -> Self {
        let (mean, variance) = model.mean_variance();
        OutputStats {
            name: model.name().to_string(),
            mean,
            variance,
            std: variance.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub order: u32,
    pub nodes: usize,
    pub rule_hash: String,
    pub outputs: Vec<OutputStats>,
    pub certificate: ErrorCertificate,
    pub files: Vec<String>,
}

impl fmt::Display for FitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fit: p={} from {} nodes", self.order, self.nodes)?;
        for o in &self.outputs {
            write!(f, "\n  {}: mean {:.10e}  variance {:.6e}  std {:.6e}", o.name, o.mean, o.variance, o.std)?;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct QuadProvenance {
    density_hash: String,
    rule_hash: String,
}

/// Fits surrogates from `rule.csv` and simulator results, writing
/// `surrogate.json` and `fit_report.json` (and `results.csv` when the
/// results came from a command).
pub fn cmd_fit(rc: &ResolvedConfig) -> Result<FitReport> {
    let density = rc.density().map_err(|e| e.in_stage("density"))?;
    let rule_path = rc.path("rule.csv");
    if !rule_path.exists() {
        return Err(Error::Config(format!("{} not found; run `quad` first", rule_path.display())).in_stage("fit"));
    }
    let rule = QuadratureRule::load(&rule_path).map_err(|e| e.in_stage("rule"))?;
    if let Ok(text) = std::fs::read_to_string(rc.path("quad_report.json")) {
        if let Ok(prov) = serde_json::from_str::<QuadProvenance>(&text) {
            if prov.density_hash != density.fingerprint() || prov.rule_hash != rule.fingerprint() {
                return Err(Error::Config(
                    "rule.csv was built for a different density or has been modified; rerun `quad`".into(),
                )
                .in_stage("fit"));
            }
        }
    }
    if rule.order() != rc.cfg.order {
        return Err(Error::Config(format!(
            "rule.csv has order {}, configuration asks for {}; rerun `quad`",
            rule.order(),
            rc.cfg.order
        ))
        .in_stage("fit"));
    }
    let sim = &rc.cfg.simulator;
    let mut files = Vec::new();
    let batch: ResultBatch = match (&sim.command, &sim.results) {
        (Some(cmd), _) => {
            let spec = CommandSpec {
                template: cmd.clone(),
                stdin: sim.stdin,
                parallelism: sim.parallelism.unwrap_or(1),
                retries: sim.retries,
            };
            let b = simbridge::run_command(&rule, &spec).map_err(|e| e.in_stage("simulator"))?;
            rc.prepare_out()?;
            std::fs::write(rc.path("results.csv"), b.to_csv()).map_err(|e| Error::Io(e).in_stage("output"))?;
            files.push("results.csv".to_string());
            b
        }
        (None, Some(path)) => {
            simbridge::ingest_results(&rule, &rc.cfg.base_dir.join(path)).map_err(|e| e.in_stage("results"))?
        }
        (None, None) => {
            return Err(Error::Config("[simulator] needs `command` or `results`".into()).in_stage("fit"));
        }
    };
    fit_and_report(rc, &density, &rule, &batch, files)
}

fn fit_and_report(
    rc: &ResolvedConfig,
    density: &GaussianMixture,
    rule: &QuadratureRule,
    batch: &ResultBatch,
    mut files: Vec<String>,
) -> Result<FitReport> {
    let p = rule.order();
    let basis = BasisSet::for_density_with_moments(density, p, 4 * p).map_err(|e| e.in_stage("basis"))?;
    let models = collocation::fit_columns(&basis, rule, &batch.columns, &batch.values).map_err(|e| e.in_stage("fit"))?;
    let cert = certificate(&basis, rule, basis.moments()).map_err(|e| e.in_stage("certificate"))?;
    rc.prepare_out()?;
    collocation::save(&models, &rc.path("surrogate.json")).map_err(|e| e.in_stage("output"))?;
    files.extend(["surrogate.json".to_string(), "fit_report.json".to_string()]);
    let report = FitReport {
        order: p,
        nodes: rule.len(),
        rule_hash: rule.fingerprint(),
        outputs: models.iter().map(OutputStats::of).collect(),
        certificate: cert,
        files,
    };
    write_json(&rc.path("fit_report.json"), &report).map_err(|e| e.in_stage("output"))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdfSummary {
    pub name: String,
    pub samples: usize,
    pub degenerate: bool,
    pub bandwidth: f64,
    pub sample_mean: f64,
    pub sample_std: f64,
    pub histogram_file: String,
    pub kde_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub outputs: Vec<OutputStats>,
    pub pdfs: Vec<PdfSummary>,
    pub seed: u64,
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stats:")?;
        for (o, p) in self.outputs.iter().zip(&self.pdfs) {
            write!(
                f,
                "\n  {}: mean {:.10e}  std {:.6e}  pdf from {} samples{} -> {}, {}",
                o.name,
                o.mean,
                o.std,
                p.samples,
                if p.degenerate { " (single atom)" } else { "" },
                p.histogram_file,
                p.kde_file
            )?;
        }
        Ok(())
    }
}

/// Reads `surrogate.json`, writes per-output `hist_<name>.csv`,
/// `kde_<name>.csv` and `stats_report.json`.
pub fn cmd_stats(rc: &ResolvedConfig) -> Result<StatsReport> {
    let density = rc.density().map_err(|e| e.in_stage("density"))?;
    let models = collocation::load(&rc.path("surrogate.json")).map_err(|e| e.in_stage("surrogate"))?;
    if let Some(h) = models[0].basis().density_hash() {
        if h != density.fingerprint() {
            return Err(Error::Config("surrogate.json was fitted for a different density".into()).in_stage("stats"));
        }
    }
    let seed = rc.cfg.solver.seed;
    let mut outputs = Vec::new();
    let mut pdfs = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let pdf = m
            .pdf_estimate(&density, rc.cfg.stats.samples, crate::quadrature::derive_seed(seed, 1000 + i as u64), rc.cfg.stats.bins)
            .map_err(|e| e.in_stage("stats"))?;
        let safe: String = m
            .name()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let hist = format!("hist_{safe}.csv");
        let kde = format!("kde_{safe}.csv");
        let mut h = String::from("bin_lo,bin_hi,density\n");
        for (j, d) in pdf.density.iter().enumerate() {
            h.push_str(&format!("{:e},{:e},{:e}\n", pdf.edges[j], pdf.edges[j + 1], d));
        }
        let mut k = String::from("x,density\n");
        for (x, d) in pdf.grid.iter().zip(&pdf.kde) {
            k.push_str(&format!("{x:e},{d:e}\n"));
        }
        std::fs::write(rc.path(&hist), h).map_err(|e| Error::Io(e).in_stage("output"))?;
        std::fs::write(rc.path(&kde), k).map_err(|e| Error::Io(e).in_stage("output"))?;
        outputs.push(OutputStats::of(m));
        pdfs.push(PdfSummary {
            name: m.name().to_string(),
            samples: pdf.samples,
            degenerate: pdf.degenerate,
            bandwidth: pdf.bandwidth,
            sample_mean: pdf.mean,
            sample_std: pdf.std,
            histogram_file: hist,
            kde_file: kde,
        });
    }
    let report = StatsReport { outputs, pdfs, seed };
    write_json(&rc.path("stats_report.json"), &report).map_err(|e| e.in_stage("output"))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoRow {
    pub epsilon: f64,
    pub order: u32,
    pub nodes: usize,
    pub n_p: usize,
    pub n_2p: usize,
    pub residual_l1: f64,
    pub mean: f64,
    pub variance: f64,
    /// `|mean - exact mean|`.
    pub error: f64,
    pub gram_deviation: f64,
    pub certificate_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub seed: u64,
    pub exact_mean: f64,
    pub mc_mean: f64,
    pub mc_standard_error: f64,
    pub mc_samples: usize,
    pub rows: Vec<DemoRow>,
    pub files: Vec<String>,
}

impl DemoReport {
    pub fn row(&self, epsilon: f64, order: u32) -> Option<&DemoRow> {
        self.rows.iter().find(|r| r.epsilon == epsilon && r.order == order)
    }
}

impl fmt::Display for DemoReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "demo: y = exp(x1) + 0.1 cos(x1) sin(x2), two-component correlated mixture")?;
        writeln!(
            f,
            "  exact mean {:.12}; Monte Carlo ({} samples) {:.12} +- {:.1e}",
            self.exact_mean, self.mc_samples, self.mc_mean, self.mc_standard_error
        )?;
        writeln!(f, "  {:>7} {:>2} {:>4} {:>4} {:>5} {:>10} {:>10}", "eps", "p", "M", "N_p", "N_2p", "residual", "|error|")?;
        for r in &self.rows {
            writeln!(
                f,
                "  {:>7.0e} {:>2} {:>4} {:>4} {:>5} {:>10.2e} {:>10.2e}",
                r.epsilon, r.order, r.nodes, r.n_p, r.n_2p, r.residual_l1, r.error
            )?;
        }
        write!(f, "  files: {}", self.files.join(", "))
    }
}

/// Runs the synthetic benchmark end to end for `p = 1..4` at three
/// tolerances. Writes `demo_convergence.csv`, `demo_report.json` and one
/// rule file per `(epsilon, p)`. Uses the solver settings and seed of `rc`
/// except for `epsilon`.
pub fn cmd_demo(rc: &ResolvedConfig) -> Result<DemoReport> {
    let density = synthetic::density();
    let exact_mean = synthetic::exact_mean(&density);
    let seed = rc.cfg.solver.seed;
    let xs = density
        .sample(DEMO_MC_SAMPLES, crate::quadrature::derive_seed(seed, 999))
        .map_err(|e| e.in_stage("density"))?;
    let ys: Vec<f64> = (0..xs.nrows()).map(|i| synthetic::response(&[xs[(i, 0)], xs[(i, 1)]])).collect();
    let (mc_mean, mc_se) = crate::density::mean_and_standard_error(&ys);
    rc.prepare_out()?;

    let mut rows = Vec::new();
    let mut files = Vec::new();
    for &epsilon in &DEMO_EPSILONS {
        for &p in &DEMO_ORDERS {
            let solver = SolverConfig {
                epsilon,
                ..rc.cfg.solver.clone()
            };
            let (basis, rule, _) = build_for(&density, p, &solver)?;
            let outputs: Vec<f64> = (0..rule.len()).map(|k| synthetic::response(&rule.node(k))).collect();
            let model = collocation::fit(&basis, &rule, &outputs).map_err(|e| e.in_stage("fit"))?;
            let cert = certificate(&basis, &rule, basis.moments()).map_err(|e| e.in_stage("certificate"))?;
            let (mean, variance) = model.mean_variance();
            let name = format!("demo_rule_eps{epsilon:.0e}_p{p}.csv");
            rule.save(&rc.path(&name)).map_err(|e| e.in_stage("output"))?;
            files.push(name);
            rows.push(DemoRow {
                epsilon,
                order: p,
                nodes: rule.len(),
                n_p: num_terms(2, p),
                n_2p: num_terms(2, 2 * p),
                residual_l1: rule.residual_l1(),
                mean,
                variance,
                error: (mean - exact_mean).abs(),
                gram_deviation: cert.gram_deviation,
                certificate_bound: cert.bound,
            });
        }
    }
    let mut csv = String::from("epsilon,order,nodes,n_p,n_2p,residual_l1,mean,variance,error\n");
    for r in &rows {
        csv.push_str(&format!(
            "{:e},{},{},{},{},{:e},{:e},{:e},{:e}\n",
            r.epsilon, r.order, r.nodes, r.n_p, r.n_2p, r.residual_l1, r.mean, r.variance, r.error
        ));
    }
    std::fs::write(rc.path("demo_convergence.csv"), csv).map_err(|e| Error::Io(e).in_stage("output"))?;
    files.push("demo_convergence.csv".into());
    files.push("demo_report.json".into());
    let report = DemoReport {
        seed,
        exact_mean,
        mc_mean,
        mc_standard_error: mc_se,
        mc_samples: DEMO_MC_SAMPLES,
        rows,
        files,
    };
    write_json(&rc.path("demo_report.json"), &report).map_err(|e| e.in_stage("output"))?;
    Ok(report)
}

/// Fits from an in-memory result batch, for callers that evaluate the
/// response themselves.
pub fn fit_batch(rc: &ResolvedConfig, rule: &QuadratureRule, batch: &ResultBatch) -> Result<FitReport> {
    let density = rc.density().map_err(|e| e.in_stage("density"))?;
    fit_and_report(rc, &density, rule, batch, Vec::new())
}

/// Convenience for tests and examples: evaluates `f` at the rule nodes.
pub fn evaluate_at_nodes(rule: &QuadratureRule, f: impl Fn(&[f64]) -> f64) -> ResultBatch {
    ResultBatch {
        rule_hash: rule.fingerprint(),
        columns: vec!["y".into()],
        values: DMatrix::from_fn(rule.len(), 1, |k, _| f(&rule.node(k))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<ResolvedConfig> {
        ProjectConfig::from_toml(text, Path::new("/proj"))?.resolve(&Overrides::default(), None)
    }

    #[test]
    fn defaults_and_presets() {
        let rc = resolve("[density]\npreset = \"synthetic\"\n").unwrap();
        assert_eq!(rc.cfg.order, 2);
        assert_eq!(rc.cfg.solver, SolverConfig::default());
        assert_eq!(rc.out_dir, PathBuf::from(DEFAULT_OUT));
        assert_eq!(rc.density().unwrap().fingerprint(), synthetic::density().fingerprint());
    }

    #[test]
    fn inline_density() {
        let text = r#"
order = 1
[density]
dimension = 1
[[density.components]]
weight = 1.0
mean = [0.5]
covariance = [2.0]
"#;
        let rc = resolve(text).unwrap();
        let g = rc.density().unwrap();
        assert_eq!(g.dim(), 1);
        assert_eq!(g.moment(&[1]).unwrap(), 0.5);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(resolve("ordr = 3\n"), Err(Error::Config(_))));
        assert!(matches!(resolve("[solver]\nepsilom = 1e-3\n"), Err(Error::Config(_))));
        assert!(resolve("[density]\npreset = \"nope\"\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(resolve("order = 0\n").is_err());
        assert!(resolve("[solver]\nepsilon = -1.0\n").is_err());
        assert!(resolve("[stats]\nsamples = 10\n").is_err());
        assert!(resolve("[simulator]\nparallelism = 0\n").is_err());
    }

    #[test]
    fn precedence_of_output_directory() {
        let cfg = ProjectConfig::from_toml("out_dir = \"from-file\"\n", Path::new("/proj")).unwrap();
        let env = Some(PathBuf::from("/env"));
        let flag = Overrides {
            out: Some(PathBuf::from("/flag")),
            ..Default::default()
        };
        assert_eq!(cfg.clone().resolve(&flag, env.clone()).unwrap().out_dir, PathBuf::from("/flag"));
        assert_eq!(cfg.resolve(&Overrides::default(), env.clone()).unwrap().out_dir, PathBuf::from("/proj/from-file"));
        let bare = ProjectConfig::default();
        assert_eq!(bare.resolve(&Overrides::default(), env).unwrap().out_dir, PathBuf::from("/env"));
    }

    #[test]
    fn flags_override_file() {
        let cfg = ProjectConfig::from_toml("order = 3\n[solver]\nseed = 4\nepsilon = 1e-6\n", Path::new(".")).unwrap();
        let o = Overrides {
            seed: Some(9),
            epsilon: Some(1e-5),
            order: Some(1),
            out: None,
        };
        let rc = cfg.resolve(&o, None).unwrap();
        assert_eq!((rc.cfg.order, rc.cfg.solver.seed, rc.cfg.solver.epsilon), (1, 9, 1e-5));
    }

    #[test]
    fn missing_density_names_stage() {
        let rc = resolve("").unwrap();
        let err = cmd_basis(&rc).unwrap_err();
        assert!(err.to_string().starts_with("density:"), "{err}");
    }
}

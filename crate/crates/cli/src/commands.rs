//! The four subcommands. Each returns the files it wrote.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ergoloop::analysis::{
    absorption_probabilities, build_finite_chain, chain_ergodicity_verdict, ensemble,
    ic_dependence_test, nonergodicity_certificate, verify_lemma1, verify_theorem1, EnsembleStats,
    IcTest, Selector,
};
use ergoloop::Error;

use crate::config::{CertificateRequest, ExperimentConfig, LoadedConfig, System};
use crate::error::CliError;

/// Command-line overrides of the run parameters.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub realizations: Option<usize>,
    pub horizon: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Run parameters after applying overrides.
#[derive(Debug, Clone)]
pub struct RunParams {
    pub seed: u64,
    pub realizations: usize,
    pub horizon: usize,
}

impl RunParams {
    fn resolve(cfg: &ExperimentConfig, o: &Overrides) -> Result<Self, CliError> {
        let p = RunParams {
            seed: o.seed.unwrap_or(cfg.run.seed),
            realizations: o.realizations.unwrap_or(cfg.run.realizations),
            horizon: o.horizon.unwrap_or(cfg.run.horizon),
        };
        if p.realizations == 0 {
            return Err(CliError::Config("realizations must be at least 1".into()));
        }
        Ok(p)
    }
}

/// Writes files under one directory, each starting with the config digest
/// and the master seed as comment lines.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    digest: String,
    seed: u64,
    written: Vec<PathBuf>,
}

impl OutputDir {
    fn new(cfg: &LoadedConfig, o: &Overrides, seed: u64) -> Result<Self, CliError> {
        let dir = o
            .out
            .clone()
            .or_else(|| cfg.config.output.dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(OutputDir {
            dir,
            digest: cfg.digest.clone(),
            seed,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let text = format!(
            "# config-sha256={}\n# seed={}\n{body}",
            self.digest, self.seed
        );
        std::fs::write(&path, text).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.written.push(path);
        Ok(())
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Replaces anything but alphanumerics, `-` and `.` with `_`.
fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn file_name(stem: &str, system: &System, extra: Option<&str>, ext: &str) -> String {
    let mut name = stem.to_string();
    if let Some(v) = &system.name {
        name.push('-');
        name.push_str(&sanitize(v));
    }
    if let Some(e) = extra {
        name.push('-');
        name.push_str(&sanitize(e));
    }
    name.push('.');
    name.push_str(ext);
    name
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Errors from building a loop's initial state are configuration errors.
fn config_err(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

pub fn simulate(cfg: &LoadedConfig, o: &Overrides) -> Result<OutputDir, CliError> {
    let p = RunParams::resolve(&cfg.config, o)?;
    let mut out = OutputDir::new(cfg, o, p.seed)?;
    for system in cfg.config.systems()? {
        let lp = &system.closed_loop;
        let ic = cfg
            .config
            .initial_conditions(lp.state_len())?
            .swap_remove(0);
        let start = match &ic.xc0 {
            Some(xc) => lp.initial_state_with_controller(ic.x0.clone(), xc),
            None => lp.initial_state(ic.x0.clone()),
        }
        .map_err(config_err)?;
        let trace = lp.simulate(&start, p.horizon, p.seed)?;
        out.write(&file_name("trace", &system, None, "csv"), &trace.to_csv())?;
    }
    Ok(out)
}

fn run_ensemble(
    cfg: &ExperimentConfig,
    system: &System,
    p: &RunParams,
) -> Result<EnsembleStats, CliError> {
    let ics = cfg.initial_conditions(system.closed_loop.state_len())?;
    ensemble(&system.closed_loop, &ics, p.realizations, p.horizon, p.seed).map_err(|e| match e {
        Error::Dimension(_) | Error::Validation(_) => config_err(e),
        other => other.into(),
    })
}

fn ic_test(cfg: &ExperimentConfig, stats: &EnsembleStats) -> Result<Option<IcTest>, CliError> {
    let Some(t) = &cfg.analysis.ic_test else {
        return Ok(None);
    };
    let index = |label: &str| {
        stats
            .conditions
            .iter()
            .position(|c| c.label == label)
            .ok_or_else(|| CliError::Config(format!("unknown initial condition {label:?}")))
    };
    let agent = t.agent - 1;
    let test = ic_dependence_test(
        stats,
        Selector::agent(index(&t.a)?, agent),
        Selector::agent(index(&t.b)?, agent),
        t.threshold,
    )
    .map_err(config_err)?;
    Ok(Some(test))
}

fn ic_test_document(cfg: &ExperimentConfig, t: &IcTest) -> String {
    let spec = cfg.analysis.ic_test.as_ref().expect("ic test configured");
    format!(
        "a={}\nb={}\nagent={}\nthreshold={}\nverdict={}\ndifference={}\nstderr_a={}\nstderr_b={}\n",
        spec.a,
        spec.b,
        spec.agent,
        spec.threshold,
        t.verdict.as_str(),
        float(t.difference),
        float(t.stderr_a),
        float(t.stderr_b)
    )
}

pub fn ensemble_cmd(cfg: &LoadedConfig, o: &Overrides) -> Result<OutputDir, CliError> {
    let p = RunParams::resolve(&cfg.config, o)?;
    let mut out = OutputDir::new(cfg, o, p.seed)?;
    for system in cfg.config.systems()? {
        let stats = run_ensemble(&cfg.config, &system, &p)?;
        out.write(
            &file_name("ensemble", &system, None, "csv"),
            &stats.to_csv(),
        )?;
        if cfg.config.output.trajectories {
            for (i, c) in stats.conditions.iter().enumerate() {
                let name = file_name("trajectories", &system, Some(&c.label), "csv");
                out.write(&name, &stats.trajectories_csv(i)?)?;
            }
        }
        if let Some(t) = ic_test(&cfg.config, &stats)? {
            let doc = ic_test_document(&cfg.config, &t);
            out.write(&file_name("ic-test", &system, None, "txt"), &doc)?;
        }
    }
    Ok(out)
}

/// Certificate documents for one system, separated by blank lines.
/// Analyses that do not apply to the loop are reported as skipped.
pub fn certificate_documents(cfg: &ExperimentConfig, system: &System) -> Result<String, CliError> {
    let lp = &system.closed_loop;
    let mut docs = Vec::new();
    let skipped = |kind: &str, e: Error| format!("kind={kind}\nskipped={e}\n");
    for request in cfg.certificates() {
        let doc = match request {
            CertificateRequest::FiniteChain => match build_finite_chain(lp) {
                Ok(chain) => chain_ergodicity_verdict(&chain).to_document(),
                Err(e @ (Error::Unsupported(_) | Error::Budget { .. })) => {
                    skipped("finite-chain", e)
                }
                Err(e) => return Err(e.into()),
            },
            CertificateRequest::Theorem1 => verify_theorem1(lp, cfg.m_max()).to_document(),
            CertificateRequest::Theorem3 => match nonergodicity_certificate(lp, cfg.k_max()) {
                Ok(c) => c.to_document(),
                Err(e @ (Error::Unsupported(_) | Error::Budget { .. })) => skipped("theorem3", e),
                Err(e) => return Err(e.into()),
            },
            CertificateRequest::Lemma1 => {
                let (mats, lyap) = cfg.lemma1_matrices()?.ok_or_else(|| {
                    CliError::Config("lemma1 requested without [analysis.lemma1] matrices".into())
                })?;
                verify_lemma1(&mats, &lyap, cfg.m_max())
                    .map_err(config_err)?
                    .to_document()
            }
        };
        docs.push(doc);
    }
    Ok(docs.join("\n"))
}

pub fn certify(cfg: &LoadedConfig, o: &Overrides) -> Result<OutputDir, CliError> {
    let p = RunParams::resolve(&cfg.config, o)?;
    let mut out = OutputDir::new(cfg, o, p.seed)?;
    for system in cfg.config.systems()? {
        let doc = certificate_documents(&cfg.config, &system)?;
        if let Some(name) = &system.name {
            println!("[{name}]");
        }
        print!("{doc}");
        out.write(&file_name("certificates", &system, None, "txt"), &doc)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    Fig2,
    Fig3,
    Fig456,
}

pub const EX1_CFG: &str = include_str!("../configs/ex1.cfg");
pub const EX2_CFG: &str = include_str!("../configs/ex2.cfg");
pub const PIVSLAG_CFG: &str = include_str!("../configs/pivslag.cfg");
pub const SCHUR_CFG: &str = include_str!("../configs/schur.cfg");

/// Bundled configuration by file name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "ex1.cfg" => Some(EX1_CFG),
        "ex2.cfg" => Some(EX2_CFG),
        "pivslag.cfg" => Some(PIVSLAG_CFG),
        "schur.cfg" => Some(SCHUR_CFG),
        _ => None,
    }
}

pub fn reproduce(figure: Figure, o: &Overrides) -> Result<OutputDir, CliError> {
    match figure {
        Figure::Fig2 => fig2(o),
        Figure::Fig3 => fig3(o),
        Figure::Fig456 => fig456(o),
    }
}

fn state_label(agents: &[f64]) -> String {
    let parts: Vec<String> = agents.iter().map(|v| v.to_string()).collect();
    format!("({})", parts.join(" "))
}

fn fig2(o: &Overrides) -> Result<OutputDir, CliError> {
    let cfg = LoadedConfig::parse(EX1_CFG)?;
    let p = RunParams::resolve(&cfg.config, o)?;
    let mut out = OutputDir::new(&cfg, o, p.seed)?;
    let system = cfg.config.systems()?.swap_remove(0);
    let chain = build_finite_chain(&system.closed_loop)?;
    let labels: Vec<String> = chain
        .states()
        .iter()
        .map(|s| state_label(&s.agents))
        .collect();

    let mut matrix = format!("from,{}\n", labels.join(","));
    let mut plot = String::from("curve,x,y\n");
    for (i, from) in labels.iter().enumerate() {
        let cells: Vec<String> = (0..chain.len())
            .map(|j| match chain.exact_probability(i, j) {
                Some(q) => q.to_string(),
                None => float(chain.probability(i, j)),
            })
            .collect();
        let _ = writeln!(matrix, "{from},{}", cells.join(","));
        for j in 0..chain.len() {
            let _ = writeln!(plot, "from {from},{j},{}", float(chain.probability(i, j)));
        }
    }
    print!("{matrix}");

    let start = chain.find(&[0.0, 0.0], &[]).expect("state (0 0) exists");
    let absorption = absorption_probabilities(&chain, start)?;
    let mut abs = String::from("class,probability\n");
    for (class, prob) in absorption.classes.iter().zip(&absorption.probabilities) {
        let members: Vec<&str> = class.iter().map(|&s| labels[s].as_str()).collect();
        let _ = writeln!(abs, "{},{}", members.join(" "), float(*prob));
    }
    out.write("fig2-transitions.csv", &matrix)?;
    out.write("fig2-absorption.csv", &abs)?;
    out.write("fig2-plot.csv", &plot)?;
    out.write(
        "fig2-certificate.txt",
        &chain_ergodicity_verdict(&chain).to_document(),
    )?;
    Ok(out)
}

fn fig3(o: &Overrides) -> Result<OutputDir, CliError> {
    let cfg = LoadedConfig::parse(EX2_CFG)?;
    let p = RunParams::resolve(&cfg.config, o)?;
    let mut out = OutputDir::new(&cfg, o, p.seed)?;
    let system = cfg.config.systems()?.swap_remove(0);
    let stats = run_ensemble(&cfg.config, &system, &p)?;

    let mut plot = String::from("curve,x,y\n");
    for (value, curve) in [(1.0, "initially-active"), (0.0, "initially-inactive")] {
        for c in &stats.conditions {
            if let Some(g) = c.groups.iter().find(|g| g.initial_value == value) {
                let _ = writeln!(plot, "{curve},{},{}", c.label, float(g.estimate.mean));
            }
        }
    }
    out.write("fig3-ensemble.csv", &stats.to_csv())?;
    out.write("fig3-plot.csv", &plot)?;
    Ok(out)
}

fn fig456(o: &Overrides) -> Result<OutputDir, CliError> {
    let cfg = LoadedConfig::parse(PIVSLAG_CFG)?;
    let p = RunParams::resolve(&cfg.config, o)?;
    let mut out = OutputDir::new(&cfg, o, p.seed)?;
    let mut plots = [
        ("fig4-plot.csv", String::from("curve,x,y\n")),
        ("fig5-plot.csv", String::from("curve,x,y\n")),
        ("fig6-plot.csv", String::from("curve,x,y\n")),
    ];
    for system in cfg.config.systems()? {
        let variant = system.name.clone().unwrap_or_default();
        let stats = run_ensemble(&cfg.config, &system, &p)?;
        for (i, c) in stats.conditions.iter().enumerate() {
            let name = file_name("fig456", &system, Some(&c.label), "csv");
            out.write(&name, &stats.trajectories_csv(i)?)?;
            let t = &c.trajectories;
            let curve = format!("{variant} {}", c.label);
            for (series, (_, plot)) in [&t.y, &t.x1, &t.xc].into_iter().zip(plots.iter_mut()) {
                for (k, v) in series.iter().enumerate() {
                    let _ = writeln!(plot, "{curve},{k},{}", float(*v));
                }
            }
        }
        if let Some(t) = ic_test(&cfg.config, &stats)? {
            let doc = ic_test_document(&cfg.config, &t);
            out.write(&file_name("fig456-ic-test", &system, None, "txt"), &doc)?;
        }
    }
    for (name, body) in &plots {
        out.write(name, body)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse_and_build() {
        for name in ["ex1.cfg", "ex2.cfg", "pivslag.cfg", "schur.cfg"] {
            let cfg = LoadedConfig::parse(bundled(name).unwrap()).unwrap();
            let systems = cfg.config.systems().unwrap();
            for s in &systems {
                cfg.config
                    .initial_conditions(s.closed_loop.state_len())
                    .unwrap();
            }
        }
    }

    #[test]
    fn sanitized_names() {
        assert_eq!(sanitize("xc=-50"), "xc_-50");
        assert_eq!(sanitize("a b/c"), "a_b_c");
    }
}

mod config;
mod suites;

use cechlat::geometry::{canonicalize, fuzzy_leq, join, meet, thicken, FuzzyCertificate};
use cechlat::exact::fmt_q;
use cechlat::invariants::{
    fermion_hall_oracle, hall_report, mc_invariant, split_charge, subset_invariant, InvariantError, InvariantReport,
    OnsiteSymmetry, SplitOptions,
};
use cechlat::nerve::{betti_numbers, build_nerve};
use cechlat::state::{ground_state, HamiltonianDerivation, StateError};
use chrono::{SecondsFormat, Utc};
use clap::{Parser, Subcommand};
use config::{read_json, ModelSpec, NerveQuery, RunConfig, SiteOp, SiteQuery, SymmetrySpec};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration; exit code 2.
    Usage(String),
    /// A check or tolerance failed; exit code 1.
    Failure(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

#[derive(Parser)]
#[command(name = "cechlat", version, about = "Cech nerves, Maurer-Cartan pipelines and Hall-type invariants of lattice states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// JSON input for the command.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving report files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every randomized check.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel stages.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Geometry queries: canonicalize, meet, join, fuzzy_leq, thicken.
    Site(Common),
    /// Build the nerve of a cover and emit its Betti numbers.
    Nerve(Common),
    /// Run the invariant pipeline described by a run configuration.
    Invariant(Common),
    /// Run a named property suite: brick, seminorm, mc, invariance.
    Verify {
        #[arg(long)]
        suite: String,
        #[command(flatten)]
        common: Common,
    },
}

fn log(level: &str, msg: &str) {
    eprintln!("{} {level} {msg}", Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true));
}

fn config_path(c: &Common) -> Result<String, CliError> {
    c.config
        .as_ref()
        .map(|p| p.display().to_string())
        .ok_or_else(|| CliError::Usage("--config is required".into()))
}

fn out_dir(c: &Common, fallback: Option<&str>) -> Result<PathBuf, CliError> {
    let dir = c
        .out
        .clone()
        .or_else(|| fallback.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("cechlat-out"));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))?;
    log("INFO", &format!("wrote {}", path.display()));
    Ok(())
}

fn cmd_site(c: &Common) -> Result<(), CliError> {
    let query: SiteQuery = read_json(&config_path(c)?)?;
    let (a, b) = query.sets()?;
    let need_b = || b.clone().ok_or_else(|| CliError::Usage("operation needs a second set `b`".into()));
    let result = match query.op {
        SiteOp::Canonicalize => {
            let cc = canonicalize(&a);
            json!({"op": "canonicalize", "bounded": cc.bounded, "result": cc.to_set().to_json()})
        }
        SiteOp::Meet => {
            let m = meet(&a, &need_b()?);
            json!({"op": "meet", "bounded": m.is_bounded(), "result": m.to_json()})
        }
        SiteOp::Join => {
            let j = join(&a, &need_b()?);
            json!({"op": "join", "bounded": j.is_bounded(), "result": j.to_json()})
        }
        SiteOp::FuzzyLeq => {
            let (leq, cert) = fuzzy_leq(&a, &need_b()?);
            let cert = match cert {
                FuzzyCertificate::Radius(r) => json!({"radius": fmt_q(&r)}),
                FuzzyCertificate::Ray(x) => json!({"ray": x.iter().map(fmt_q).collect::<Vec<_>>()}),
            };
            json!({"op": "fuzzy_leq", "leq": leq, "certificate": cert})
        }
        SiteOp::Thicken => {
            let t = thicken(&a, &query.radius()?).map_err(|e| CliError::Usage(e.to_string()))?;
            json!({"op": "thicken", "result": t.to_json()})
        }
    };
    let text = serde_json::to_string_pretty(&result).expect("json");
    println!("{text}");
    if c.out.is_some() {
        write(&out_dir(c, None)?, "site.json", &text)?;
    }
    Ok(())
}

fn cmd_nerve(c: &Common) -> Result<(), CliError> {
    let query: NerveQuery = read_json(&config_path(c)?)?;
    let cover = query.cover.build()?;
    let nerve = build_nerve(&cover);
    let betti = betti_numbers(&nerve);
    let mut csv = String::from("degree,betti\n");
    for (p, b) in betti.iter().enumerate() {
        csv.push_str(&format!("{p},{b}\n"));
    }
    print!("{csv}");
    if c.out.is_some() {
        let dir = out_dir(c, None)?;
        write(&dir, "betti.csv", &csv)?;
        write(&dir, "nerve.json", &serde_json::to_string_pretty(&nerve.to_json()).expect("json"))?;
    }
    Ok(())
}

fn invariant_error(e: InvariantError) -> CliError {
    match e {
        InvariantError::State(StateError::GapTooSmall { declared, measured }) => {
            CliError::Failure(format!("gap check failed: declared {declared}, measured gap {measured}"))
        }
        InvariantError::NotInvariant(_) | InvariantError::Gapless | InvariantError::State(_) | InvariantError::Dgla(_) => {
            CliError::Failure(e.to_string())
        }
        other => CliError::Usage(other.to_string()),
    }
}

fn cmd_invariant(c: &Common) -> Result<(), CliError> {
    let cfg: RunConfig = read_json(&config_path(c)?)?;
    let dir = out_dir(c, cfg.output.as_deref())?;
    log("INFO", &format!("run seed {}", cfg.seed.unwrap_or(c.seed)));
    if let ModelSpec::Qwz { l, masses, grid } = &cfg.model {
        return fermion_table(&dir, *l, masses, *grid, cfg.tolerances.chern);
    }
    let lat = cfg
        .lattice
        .as_ref()
        .ok_or_else(|| CliError::Usage("spin models need a `lattice`".into()))?
        .build(cfg.dimension)?;
    let model = cfg.model.spin_model(&lat).expect("spin model");
    let ham = HamiltonianDerivation::from_model(&lat, &model, cfg.filter.gap).map_err(|e| invariant_error(e.into()))?;
    log("INFO", &format!("diagonalizing {} on {} sites", cfg.model.id(), lat.sites.len()));
    let psi = ground_state(&ham).map_err(|e| invariant_error(e.into()))?;
    log("INFO", &format!("measured gap {:.6}", psi.measured_gap));
    let sym = match cfg.symmetry {
        SymmetrySpec::U1 => OnsiteSymmetry::u1_spin_half(&lat),
        SymmetrySpec::Su2 => OnsiteSymmetry::su2_spin_half(&lat),
    }
    .map_err(invariant_error)?;
    let cover_spec = cfg.cover.as_ref().ok_or_else(|| CliError::Usage("missing `cover`".into()))?;
    let opts = SplitOptions { order: cfg.split_order.clone(), ..Default::default() };
    let model_id = cfg.model_id.clone().unwrap_or_else(|| cfg.model.id());
    let cover_id = cfg.cover_id.clone().unwrap_or_else(|| cover_spec.id());
    let report = if let Some(graph) = cover_spec.graph() {
        let eps = match &cfg.epsilon {
            Some(s) => cechlat::exact::parse_q(s).ok_or_else(|| CliError::Usage(format!("bad epsilon {s:?}")))?,
            None => cechlat::exact::q(1),
        };
        let sub = subset_invariant(&psi, &sym, &graph, &eps, &opts).map_err(invariant_error)?;
        let mut values = BTreeMap::new();
        for (i, v) in sub.values.iter().enumerate() {
            values.insert(format!("generator{i}"), [v.raw_re, v.raw_im]);
        }
        InvariantReport {
            model: model_id,
            cover: cover_id,
            cocycle: BTreeMap::new(),
            order: cfg.order,
            values,
            hall: None,
            residuals: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            orientation_antisymmetric: true,
            note: Some(format!("{} generators of the first cohomology", sub.generators.len())),
        }
    } else {
        let cover = cover_spec.build()?;
        let nerve = build_nerve(&cover);
        let beta = cfg.cocycle.build(&cover, &nerve)?;
        if cover.dim() == 2 {
            hall_report(&model_id, &cover_id, &psi, &sym, &cover, &beta, cfg.order, &opts, c.workers)
                .map_err(invariant_error)?
        } else {
            let split = split_charge(&psi, &sym, &cover, &opts).map_err(invariant_error)?;
            let mc = mc_invariant(&psi, &split, &cover, &beta, cfg.order).map_err(invariant_error)?;
            let mut residuals = BTreeMap::new();
            residuals.insert("mc".to_string(), mc.residual);
            residuals.insert("preservation".to_string(), split.max_preservation_defect());
            InvariantReport {
                model: model_id,
                cover: cover_id,
                cocycle: beta.values.iter().map(|(s, v)| (format!("{s:?}"), fmt_q(v))).collect(),
                order: cfg.order,
                values: mc.values,
                hall: None,
                residuals,
                tolerances: BTreeMap::new(),
                orientation_antisymmetric: true,
                note: mc.note,
            }
        }
    };
    write(&dir, "report.json", &serde_json::to_string_pretty(&report.to_json()).expect("json"))?;
    write(&dir, "report.csv", &format!("{}\n{}\n", InvariantReport::csv_header(), report.csv_row()))?;
    println!("{}", report.csv_row());
    let pres = report.residuals.get("preservation").copied().unwrap_or(0.0);
    let mc = report.residuals.get("mc").copied().unwrap_or(0.0);
    if pres > cfg.tolerances.preservation {
        return Err(CliError::Failure(format!("preservation defect {pres:e} above tolerance")));
    }
    if mc > cfg.tolerances.mc {
        return Err(CliError::Failure(format!("MC residual {mc:e} above tolerance")));
    }
    if !report.orientation_antisymmetric {
        return Err(CliError::Failure("orientation flip did not negate the value".into()));
    }
    Ok(())
}

fn fermion_table(dir: &Path, l: usize, masses: &[f64], grid: usize, tol: f64) -> Result<(), CliError> {
    let mut csv = String::from("mass,chern,chern_raw,real_re,real_im,ratio_re,ratio_im\n");
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for &m in masses {
        log("INFO", &format!("free-fermion oracle l={l} m={m}"));
        let r = fermion_hall_oracle(l, m, grid).map_err(invariant_error)?;
        let ratio = r.ratio();
        csv.push_str(&format!(
            "{m},{},{:.9},{:e},{:e},{},{}\n",
            r.chern,
            r.chern_raw,
            r.real_space_re,
            r.real_space_im,
            ratio.map_or(String::new(), |z| format!("{:e}", z.re)),
            ratio.map_or(String::new(), |z| format!("{:e}", z.im)),
        ));
        if (r.chern_raw - r.chern as f64).abs() > tol {
            bad.push(format!("Chern number {} is not integral at m={m}", r.chern_raw));
        }
        rows.push(serde_json::to_value(&r).expect("json"));
    }
    write(dir, "report.json", &serde_json::to_string_pretty(&json!({"kind": "fermion_oracle", "rows": rows})).expect("json"))?;
    write(dir, "report.csv", &csv)?;
    print!("{csv}");
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failure(bad.join("; ")))
    }
}

fn cmd_verify(suite: &str, c: &Common) -> Result<(), CliError> {
    let shape = match &c.config {
        Some(p) => {
            let v: serde_json::Value = read_json(&p.display().to_string())?;
            v.get("shape").and_then(|s| serde_json::from_value(s.clone()).ok())
        }
        None => None,
    };
    log("INFO", &format!("suite {suite} seed {}", c.seed));
    let outcome = suites::run(suite, c.seed, c.workers, shape)?;
    println!("suite {suite}: {} passed, {} failed", outcome.passed, outcome.failed);
    for (k, v) in &outcome.metrics {
        println!("{k}: {v:e}");
    }
    for f in &outcome.failures {
        log("FAIL", f);
    }
    if c.out.is_some() {
        let dir = out_dir(c, None)?;
        let j = json!({"suite": suite, "seed": c.seed, "passed": outcome.passed, "failed": outcome.failed,
                       "metrics": outcome.metrics, "failures": outcome.failures});
        write(&dir, "verify.json", &serde_json::to_string_pretty(&j).expect("json"))?;
    }
    if outcome.failed > 0 {
        return Err(CliError::Failure(format!("{} checks failed", outcome.failed)));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Site(c) => cmd_site(c),
        Command::Nerve(c) => cmd_nerve(c),
        Command::Invariant(c) => cmd_invariant(c),
        Command::Verify { suite, common } => cmd_verify(suite, common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log("ERROR", &e.to_string());
            ExitCode::from(e.code())
        }
    }
}

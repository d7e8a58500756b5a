use std::fmt;
use std::fs;
use std::path::Path;

use bellkit_core::dynamics::{
    convergence_order, energy_drift, interior_grid, ode_residual, residual_grid,
    simulate_detectors, uniform_grid, write_summary_csv, write_trajectory_csv, DetectorConfig,
    SystemParams, TrajectoryFamily, BREAKPOINT_MARGIN_STEPS,
};
use bellkit_core::feasibility::{
    chsh_value, local_decomposition, search_oneway_single_lambda_seeded, LocalDecomposition,
    OneWaySearch, CERTIFICATE_LOCAL_BOUND, SEARCH_DISCLAIMER, SEARCH_SEED,
};
use bellkit_core::io::{
    model_file_to_string, parse_model_file, CorrelationHint, ModelContent, ModelFile,
};
use bellkit_core::properties::{
    check_determinism, check_determinism_at, check_local_causality, check_measurement_independence,
    check_outcome_independence, check_perfect_correlation, check_weak_locality, RelabelMap,
};
use bellkit_core::scenarios::{
    einstein_box_relabel, incompleteness_witness, make_einstein_box_model, make_example1_model,
    make_example2_model, make_pr_box, make_product_model, make_prop1_counterexample,
    make_singlet_behavior, spin_flip_relabel, verify_prop2, DirectionSet,
};
use bellkit_core::{Behavior, HiddenVariableModel, ScenarioShape, Tolerances};
use clap::Args;
use serde_json::json;

use crate::report::{CheckEntry, Report};
use crate::{Cli, Command, Form, Format};

pub const DEFAULT_GRID_STEPS: usize = 100;
const DEFAULT_PROP1_N: usize = 2;
const DEFAULT_DIRS: &str = "z,x";
const SINGLET_DIRS_B: &str = "z+x,z-x";
const SINGLETON_LAMBDA: &str = "psi";

/// Input or usage error; always exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<bellkit_core::Error> for InputError {
    fn from(e: bellkit_core::Error) -> Self {
        InputError(e.to_string())
    }
}

impl From<std::io::Error> for InputError {
    fn from(e: std::io::Error) -> Self {
        InputError(e.to_string())
    }
}

type CliResult<T> = Result<T, InputError>;

fn input_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(InputError(msg.into()))
}

#[derive(Debug, Args)]
pub struct DynamicsArgs {
    #[arg(long, default_value_t = 1.0)]
    pub m: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub d: f64,
    /// Comma-separated pause times.
    #[arg(long = "T", default_value = "0")]
    pub pauses: String,
    /// Detector distance from the origin.
    #[arg(long = "L", default_value_t = 1.0)]
    pub detector: f64,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    /// Finite-difference step for the ODE residual.
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    /// Rows per trajectory CSV and points of the energy grid.
    #[arg(long, default_value_t = 10_001)]
    pub points: usize,
    /// Residual grid points per branch.
    #[arg(long, default_value_t = 200)]
    pub residual_points: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub energy_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub residual_tol: f64,
}

fn tolerances(cli: &Cli) -> CliResult<Tolerances> {
    let d = Tolerances::default();
    Ok(Tolerances::new(
        cli.tol_norm.unwrap_or(d.norm),
        cli.tol.unwrap_or(d.prop),
        cli.tol_support.unwrap_or(d.support),
    )?)
}

pub fn run(cli: &Cli, argv: Vec<String>) -> CliResult<u8> {
    let tol = tolerances(cli)?;
    let mut report = Report::new(argv, tol);
    match &cli.command {
        Command::Check {
            path,
            properties,
            pc,
            relabel,
        } => cmd_check(
            &mut report,
            path,
            properties.as_deref(),
            pc.as_deref(),
            relabel.as_deref(),
            &tol,
        )?,
        Command::Scenario {
            name,
            n,
            dirs,
            dirs_b,
        } => {
            return cmd_scenario(cli, name, *n, dirs.as_deref(), dirs_b.as_deref());
        }
        Command::Feasible {
            path,
            form,
            grid_steps,
            chsh,
        } => cmd_feasible(
            &mut report,
            path,
            *form,
            *grid_steps,
            chsh.as_deref(),
            cli.seed,
            &tol,
        )?,
        Command::Chsh { path, settings } => cmd_feasible(
            &mut report,
            path,
            Form::Local,
            DEFAULT_GRID_STEPS,
            Some(settings),
            cli.seed,
            &tol,
        )?,
        Command::Dynamics(args) => cmd_dynamics(&mut report, args, cli.out.as_deref())?,
    }
    emit(cli, &report)?;
    Ok(report.exit_code())
}

fn emit(cli: &Cli, report: &Report) -> CliResult<()> {
    let text = match cli.format {
        Format::Json => report.to_json(),
        Format::Text => report.to_text(),
    };
    print!("{text}");
    let is_dynamics = matches!(cli.command, Command::Dynamics(_));
    if let (Some(out), false) = (&cli.out, is_dynamics) {
        fs::write(out, &text)
            .map_err(|e| InputError(format!("cannot write {}: {e}", out.display())))?;
    }
    Ok(())
}

fn load(report: &mut Report, path: &Path) -> CliResult<ModelFile> {
    let bytes =
        fs::read(path).map_err(|e| InputError(format!("cannot read {}: {e}", path.display())))?;
    report.digest(&bytes);
    let text = String::from_utf8(bytes)
        .map_err(|_| InputError(format!("{} is not UTF-8", path.display())))?;
    Ok(parse_model_file(&text)?)
}

const ALL_PROPERTIES: [&str; 10] = [
    "consistency",
    "wl",
    "oi",
    "lc",
    "mi",
    "det",
    "pc",
    "lc-equiv",
    "prop2",
    "inc",
];
const LAMBDA_LEVEL: [&str; 7] = ["wl", "oi", "lc", "mi", "det", "lc-equiv", "prop2"];
const NEEDS_CORRELATION: [&str; 3] = ["pc", "prop2", "inc"];

fn select_properties(
    spec: Option<&str>,
    is_model: bool,
    has_hint: bool,
) -> CliResult<Vec<&'static str>> {
    let applicable = |p: &&str| {
        (is_model || !LAMBDA_LEVEL.contains(p)) && (has_hint || !NEEDS_CORRELATION.contains(p))
    };
    let Some(spec) = spec else {
        return Ok(ALL_PROPERTIES.iter().copied().filter(applicable).collect());
    };
    let mut chosen = vec!["consistency"];
    for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if token == "all" {
            chosen.extend(ALL_PROPERTIES.iter().copied().filter(applicable));
            continue;
        }
        match ALL_PROPERTIES.iter().find(|p| **p == token) {
            Some(p) => chosen.push(p),
            None => {
                return input_err(format!(
                    "unknown property `{token}` (expected one of {})",
                    ALL_PROPERTIES.join(", ")
                ))
            }
        }
    }
    let mut out: Vec<&'static str> = Vec::new();
    for p in ALL_PROPERTIES {
        if chosen.contains(&p) {
            out.push(p);
        }
    }
    Ok(out)
}

fn resolve_correlation(
    shape: &ScenarioShape,
    hint: Option<&CorrelationHint>,
    pc: Option<&str>,
    relabel: Option<&str>,
) -> CliResult<Option<(usize, usize, RelabelMap)>> {
    let from_hint = hint.map(|h| h.resolve(shape)).transpose()?;
    let (x0, y0) = match pc {
        Some(s) => {
            let parts: Vec<&str> = s.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return input_err(format!("--pc expects `x,y`, got `{s}`"));
            }
            (shape.setting_a(parts[0])?, shape.setting_b(parts[1])?)
        }
        None => match &from_hint {
            Some((x, y, _)) => (*x, *y),
            None => {
                if relabel.is_some() {
                    return input_err(
                        "--relabel needs --pc or a perfect_correlation entry in the file",
                    );
                }
                return Ok(None);
            }
        },
    };
    let map = match relabel {
        Some(s) => {
            let pairs = s
                .split(',')
                .map(|pair| match pair.split_once(':') {
                    Some((b, a)) => Ok((b.trim().to_string(), a.trim().to_string())),
                    None => input_err(format!("--relabel expects `b:a` pairs, got `{pair}`")),
                })
                .collect::<CliResult<Vec<_>>>()?;
            RelabelMap::from_label_pairs(shape, &pairs)?
        }
        None => match (pc, from_hint) {
            (None, Some((_, _, r))) => r,
            _ => RelabelMap::identity(shape)?,
        },
    };
    Ok(Some((x0, y0, map)))
}

fn cmd_check(
    report: &mut Report,
    path: &Path,
    properties: Option<&str>,
    pc: Option<&str>,
    relabel: Option<&str>,
    tol: &Tolerances,
) -> CliResult<()> {
    let file = load(report, path)?;
    let shape = file.content.shape().clone();
    let correlation = resolve_correlation(&shape, file.perfect_correlation.as_ref(), pc, relabel)?;
    let is_model = matches!(file.content, ModelContent::Model(_));
    let selected = select_properties(properties, is_model, correlation.is_some())?;
    report.default("properties", &selected);
    if let Some((x0, y0, r)) = &correlation {
        report.default(
            "perfect_correlation",
            CorrelationHint::from_indices(&shape, *x0, *y0, r),
        );
    }

    let consistency = match &file.content {
        ModelContent::Model(m) => m.validate(tol)?,
        ModelContent::Behavior(b) => b.validate(tol)?,
    };
    report.push(CheckEntry::from_report("consistency", &consistency, &shape));
    if !consistency.holds {
        // The remaining checkers require a normalized table.
        return Ok(());
    }

    let model: HiddenVariableModel = match &file.content {
        ModelContent::Model(m) => m.clone(),
        ModelContent::Behavior(b) => {
            if selected.iter().any(|p| LAMBDA_LEVEL.contains(p)) {
                report.default(
                    "behavior_as_model",
                    format!("single lambda `{SINGLETON_LAMBDA}`"),
                );
            }
            b.as_singleton_model(SINGLETON_LAMBDA)?
        }
    };
    let mshape = model.shape().clone();
    let behavior = match &file.content {
        ModelContent::Model(m) => m.aggregate_behavior(tol)?,
        ModelContent::Behavior(b) => b.clone(),
    };
    let need_corr = || -> CliResult<&(usize, usize, RelabelMap)> {
        correlation.as_ref().ok_or_else(|| {
            InputError("perfect-correlation checks need --pc or a perfect_correlation entry".into())
        })
    };

    for &p in selected.iter().filter(|p| **p != "consistency") {
        let entry = match p {
            "wl" => CheckEntry::from_report(p, &check_weak_locality(&model, tol)?, &mshape),
            "oi" => CheckEntry::from_report(p, &check_outcome_independence(&model, tol)?, &mshape),
            "lc" => CheckEntry::from_report(p, &check_local_causality(&model, tol)?, &mshape),
            "mi" => {
                CheckEntry::from_report(p, &check_measurement_independence(&model, tol)?, &mshape)
            }
            "det" => CheckEntry::from_report(p, &check_determinism(&model, tol)?, &mshape),
            "pc" => {
                let (x0, y0, r) = need_corr()?;
                CheckEntry::from_report(
                    p,
                    &check_perfect_correlation(&behavior, *x0, *y0, r, tol)?,
                    &mshape,
                )
            }
            "lc-equiv" => {
                let lc = check_local_causality(&model, tol)?.holds;
                let wl = check_weak_locality(&model, tol)?.holds;
                let oi = check_outcome_independence(&model, tol)?.holds;
                let agrees = lc == (wl && oi);
                CheckEntry {
                    name: p.to_string(),
                    holds: agrees,
                    max_violation: if agrees { 0.0 } else { 1.0 },
                    tolerance_used: tol.prop,
                    witness: None,
                    detail: Some(json!({"lc": lc, "wl": wl, "oi": oi})),
                }
            }
            "prop2" => {
                let (x0, y0, r) = need_corr()?;
                let w = verify_prop2(&model, *x0, *y0, r, tol)?;
                let det = check_determinism_at(&model, &[(*x0, *y0)], tol)?;
                let assigned: Vec<_> = w
                    .deterministic_at
                    .iter()
                    .map(|d| {
                        json!({
                            "lambda": mshape.lambdas[d.lambda],
                            "a": mshape.outcomes_a[d.a],
                            "b": mshape.outcomes_b[d.b],
                        })
                    })
                    .collect();
                let violations: Vec<&str> = w
                    .violations
                    .iter()
                    .map(|&l| mshape.lambdas[l].as_str())
                    .collect();
                CheckEntry {
                    name: p.to_string(),
                    holds: w.violations.is_empty(),
                    max_violation: if w.premise_met {
                        det.max_violation
                    } else {
                        0.0
                    },
                    tolerance_used: tol.prop,
                    witness: det
                        .witness
                        .filter(|_| w.premise_met)
                        .map(|wt| wt.describe(&mshape)),
                    detail: Some(json!({
                        "premise_met": w.premise_met,
                        "deterministic_at": assigned,
                        "violations": violations,
                    })),
                }
            }
            "inc" => {
                let (x0, y0, r) = need_corr()?;
                match incompleteness_witness(&behavior, *x0, *y0, r, tol) {
                    Ok(w) => CheckEntry::from_report(
                        p,
                        &w.report,
                        &behavior.shape().with_lambdas([SINGLETON_LAMBDA])?,
                    )
                    .with_detail(json!({"state_as_lambda_oi_violation": w.violation})),
                    Err(bellkit_core::Error::NotPerfectlyCorrelated(v)) => CheckEntry {
                        name: p.to_string(),
                        holds: false,
                        max_violation: v,
                        tolerance_used: tol.prop,
                        witness: None,
                        detail: Some(json!({"premise_met": false})),
                    },
                    Err(e) => return Err(e.into()),
                }
            }
            other => return input_err(format!("unhandled property `{other}`")),
        };
        report.push(entry);
    }
    Ok(())
}

fn parse_dirs(spec: Option<&str>, default: &str) -> CliResult<DirectionSet> {
    Ok(DirectionSet::parse(spec.unwrap_or(default))?)
}

/// First setting pair with parallel directions, if any.
fn aligned_pair(a: &DirectionSet, b: &DirectionSet) -> Option<(usize, usize)> {
    for (x, da) in a.0.iter().enumerate() {
        for (y, db) in b.0.iter().enumerate() {
            if (da.dot(db) - 1.0).abs() <= 1e-12 {
                return Some((x, y));
            }
        }
    }
    None
}

fn spin_hint(
    shape: &ScenarioShape,
    pair: Option<(usize, usize)>,
    flip: bool,
) -> CliResult<Option<CorrelationHint>> {
    let Some((x, y)) = pair else {
        return Ok(None);
    };
    let r = if flip {
        spin_flip_relabel(shape)?
    } else {
        RelabelMap::identity(shape)?
    };
    Ok(Some(CorrelationHint::from_indices(shape, x, y, &r)))
}

pub fn build_scenario(
    name: &str,
    n: Option<usize>,
    dirs: Option<&str>,
    dirs_b: Option<&str>,
) -> CliResult<ModelFile> {
    if n.is_some() && name != "prop1" {
        return input_err(format!("--n applies to prop1 only, not `{name}`"));
    }
    let uses_dirs = matches!(name, "singlet" | "example1" | "example2");
    if (dirs.is_some() || dirs_b.is_some()) && !uses_dirs {
        return input_err(format!("--dirs does not apply to `{name}`"));
    }
    let with_hint = |file: ModelFile, hint: Option<CorrelationHint>| match hint {
        Some(h) => file.with_hint(h),
        None => file,
    };
    let file = match name {
        "prop1" => {
            let m = make_prop1_counterexample(n.unwrap_or(DEFAULT_PROP1_N))?;
            let hint = CorrelationHint::from_indices(m.shape(), 0, 0, &RelabelMap::identity(m.shape())?);
            ModelFile::model(m).with_hint(hint)
        }
        "singlet" => {
            let a = parse_dirs(dirs, DEFAULT_DIRS)?;
            let b = match (dirs_b, dirs) {
                (Some(s), _) => parse_dirs(Some(s), DEFAULT_DIRS)?,
                (None, Some(_)) => a.clone(),
                (None, None) => parse_dirs(None, SINGLET_DIRS_B)?,
            };
            let beh = make_singlet_behavior(&a, &b)?;
            let hint = spin_hint(beh.shape(), aligned_pair(&a, &b), true)?;
            with_hint(ModelFile::behavior(beh), hint)
        }
        "example1" => {
            let a = parse_dirs(dirs, DEFAULT_DIRS)?;
            let b = match dirs_b {
                Some(s) => parse_dirs(Some(s), DEFAULT_DIRS)?,
                None => a.clone(),
            };
            let m = make_example1_model(&a, &b)?;
            let hint = spin_hint(m.shape(), aligned_pair(&a, &b), true)?;
            with_hint(ModelFile::model(m), hint)
        }
        "example2" => {
            if dirs_b.is_some() {
                return input_err("example2 uses one direction set for both measurements; drop --dirs-b");
            }
            let a = parse_dirs(dirs, DEFAULT_DIRS)?;
            let m = make_example2_model(&a)?;
            let hint = spin_hint(m.shape(), Some((0, 0)), false)?;
            with_hint(ModelFile::model(m), hint)
        }
        "box" => {
            let m = make_einstein_box_model()?;
            let hint = CorrelationHint::from_indices(m.shape(), 0, 0, &einstein_box_relabel(m.shape())?);
            ModelFile::model(m).with_hint(hint)
        }
        "product" => ModelFile::model(make_product_model()?),
        "prbox" => {
            let b = make_pr_box()?;
            let hint = CorrelationHint::from_indices(b.shape(), 0, 0, &RelabelMap::identity(b.shape())?);
            ModelFile::behavior(b).with_hint(hint)
        }
        other => {
            return input_err(format!(
                "unknown scenario `{other}` (expected prop1, singlet, example1, example2, box, product, prbox)"
            ))
        }
    };
    Ok(file)
}

fn cmd_scenario(
    cli: &Cli,
    name: &str,
    n: Option<usize>,
    dirs: Option<&str>,
    dirs_b: Option<&str>,
) -> CliResult<u8> {
    let file = build_scenario(name, n, dirs, dirs_b)?;
    let text = model_file_to_string(&file);
    match &cli.out {
        Some(path) => fs::write(path, text)
            .map_err(|e| InputError(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn behavior_of(file: &ModelFile, tol: &Tolerances) -> CliResult<Behavior> {
    Ok(match &file.content {
        ModelContent::Model(m) => m.aggregate_behavior(tol)?,
        ModelContent::Behavior(b) => {
            let v = b.validate(tol)?;
            if !v.holds {
                return input_err(format!(
                    "behavior is not normalized (violation {})",
                    v.max_violation
                ));
            }
            b.clone()
        }
    })
}

fn parse_chsh_settings(shape: &ScenarioShape, spec: &str) -> CliResult<[usize; 4]> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return input_err(format!("CHSH settings must be `x,x',y,y'`, got `{spec}`"));
    }
    Ok([
        shape.setting_a(parts[0])?,
        shape.setting_a(parts[1])?,
        shape.setting_b(parts[2])?,
        shape.setting_b(parts[3])?,
    ])
}

fn cmd_feasible(
    report: &mut Report,
    path: &Path,
    form: Form,
    grid_steps: usize,
    chsh: Option<&str>,
    seed: Option<u64>,
    tol: &Tolerances,
) -> CliResult<()> {
    let file = load(report, path)?;
    let behavior = behavior_of(&file, tol)?;
    let shape = behavior.shape().clone();
    if let Some(spec) = chsh {
        let [x, x2, y, y2] = parse_chsh_settings(&shape, spec)?;
        let s = chsh_value(&behavior, x, x2, y, y2)?;
        report.section(
            "chsh",
            json!({"settings": spec, "value": s, "abs": s.abs(), "local_bound": CERTIFICATE_LOCAL_BOUND}),
        );
    }
    match form {
        Form::Local => {
            let result = local_decomposition(&behavior, tol)?;
            let entry = match &result {
                LocalDecomposition::Feasible {
                    strategies,
                    residual,
                    ..
                } => {
                    let described: Vec<String> =
                        strategies.iter().map(|s| s.describe(&shape)).collect();
                    report.section("strategies", described);
                    CheckEntry {
                        name: "local".into(),
                        holds: true,
                        max_violation: *residual,
                        tolerance_used: tol.prop,
                        witness: None,
                        detail: None,
                    }
                }
                LocalDecomposition::Infeasible { certificate, .. } => CheckEntry {
                    name: "local".into(),
                    holds: false,
                    max_violation: certificate.value - certificate.local_bound,
                    tolerance_used: tol.prop,
                    witness: None,
                    detail: Some(
                        json!({"certificate_value": certificate.value, "local_bound": certificate.local_bound}),
                    ),
                },
            };
            report.section("local", &result);
            report.push(entry);
        }
        Form::Oneway => {
            let seed = seed.unwrap_or(SEARCH_SEED);
            report.default("grid_steps", grid_steps);
            report.default("seed", seed);
            let result = search_oneway_single_lambda_seeded(&behavior, grid_steps, tol, seed)?;
            let entry = match &result {
                OneWaySearch::Found {
                    decomposition,
                    residual,
                } => CheckEntry {
                    name: "oneway".into(),
                    holds: true,
                    max_violation: *residual,
                    tolerance_used: tol.prop,
                    witness: None,
                    detail: Some(
                        json!({"w_AB": decomposition.w_ab[0], "w_BA": decomposition.w_ba(0)}),
                    ),
                },
                OneWaySearch::NotFound {
                    best_residual,
                    best_w_ab,
                    ..
                } => CheckEntry {
                    name: "oneway".into(),
                    holds: false,
                    max_violation: *best_residual,
                    tolerance_used: tol.prop,
                    witness: None,
                    detail: Some(json!({"best_w_AB": best_w_ab, "note": SEARCH_DISCLAIMER})),
                },
            };
            report.section("oneway", &result);
            report.push(entry);
        }
    }
    Ok(())
}

fn parse_pauses(spec: &str) -> CliResult<Vec<f64>> {
    let pauses = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| InputError(format!("bad pause time `{s}`")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    if pauses.is_empty() {
        return input_err("--T needs at least one pause time");
    }
    for (i, p) in pauses.iter().enumerate() {
        if pauses[..i].contains(p) {
            return input_err(format!("pause time {p} listed twice"));
        }
    }
    Ok(pauses)
}

fn cmd_dynamics(report: &mut Report, args: &DynamicsArgs, out: Option<&Path>) -> CliResult<()> {
    let params = SystemParams::new(args.m, args.gamma, args.d)?;
    let detectors = DetectorConfig::new(args.detector, &params)?;
    if !(args.horizon.is_finite() && args.horizon > 0.0) {
        return input_err(format!("--horizon must be positive, got {}", args.horizon));
    }
    if !(args.h.is_finite() && args.h > 0.0) {
        return input_err(format!("--h must be positive, got {}", args.h));
    }
    if args.points < 2 {
        return input_err("--points must be at least 2");
    }
    let families = parse_pauses(&args.pauses)?
        .into_iter()
        .map(|t| TrajectoryFamily::new(params, t))
        .collect::<Result<Vec<_>, _>>()?;
    report.default("h", args.h);
    report.default("points", args.points);
    report.default("residual_points", args.residual_points);
    report.default("breakpoint_margin", BREAKPOINT_MARGIN_STEPS * args.h);
    report.default("energy_tol", args.energy_tol);
    report.default("residual_tol", args.residual_tol);

    let energy_grid = uniform_grid(args.horizon, args.points);
    let mut max_drift: f64 = 0.0;
    let mut max_residual: f64 = 0.0;
    let mut orders = Vec::new();
    for fam in &families {
        max_drift = max_drift.max(energy_drift(fam, &energy_grid)?);
        let grid = residual_grid(fam, args.horizon, args.residual_points, args.h);
        max_residual = max_residual.max(ode_residual(fam, &grid, args.h)?);
        // Observed order over a decade of h, inside the interaction branch.
        let coarse = 10.0 * args.h;
        let [t1, t2] = fam.breakpoints();
        let inner = interior_grid(
            t1,
            t2,
            args.residual_points,
            1.01 * BREAKPOINT_MARGIN_STEPS * coarse,
        );
        let inner: Vec<f64> = inner.into_iter().filter(|&t| t <= args.horizon).collect();
        let order = if inner.is_empty() {
            None
        } else {
            Some(convergence_order(fam, &inner, coarse, args.h)?)
        };
        orders.push(order);
    }
    let sim = simulate_detectors(&families, &detectors, args.horizon)?;
    let mut max_detect_err: f64 = 0.0;
    let mut warnings = Vec::new();
    for run in &sim.runs {
        match run.right.time() {
            Some(t) => max_detect_err = max_detect_err.max((t - run.predicted).abs()),
            None => warnings.push(format!(
                "T={}: no detection yet by horizon {} (closed form predicts {})",
                run.pause, args.horizon, run.predicted
            )),
        }
    }

    report.push(CheckEntry {
        name: "energy_drift".into(),
        holds: max_drift <= args.energy_tol,
        max_violation: max_drift,
        tolerance_used: args.energy_tol,
        witness: None,
        detail: None,
    });
    report.push(CheckEntry {
        name: "ode_residual".into(),
        holds: max_residual <= args.residual_tol,
        max_violation: max_residual,
        tolerance_used: args.residual_tol,
        witness: None,
        detail: Some(json!({"convergence_order": orders})),
    });
    report.section(
        "detectors",
        json!({
            "L": detectors.position,
            "horizon": args.horizon,
            "within_run_agreement": sim.within_run_agreement,
            "detection_time_spread": sim.detection_time_spread,
            "max_formula_deviation": max_detect_err,
            "runs": sim.runs,
        }),
    );
    if !warnings.is_empty() {
        report.section("warnings", warnings);
    }

    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (i, fam) in families.iter().enumerate() {
            let name = format!("trajectory_{i}.csv");
            let f = fs::File::create(dir.join(&name))?;
            write_trajectory_csv(std::io::BufWriter::new(f), fam, &energy_grid)?;
            files.push(name);
        }
        let f = fs::File::create(dir.join("summary.csv"))?;
        write_summary_csv(std::io::BufWriter::new(f), &sim)?;
        files.push("summary.csv".into());
        report.section("files", files);
    }
    Ok(())
}

use std::fmt::Write as _;
use std::path::Path;

use mtelab::bayes::{draw_posterior_lambda, Priors};
use mtelab::calibrate::{
    calibrate_complex, calibrate_gaussian, reconstruct_polynomial_dgp, GaussianAggregates, ReconstructionAnchor,
    StudyMoments,
};
use mtelab::decide::{decide as decide_rep, decide_from_experiment, DecisionSpec, MteRepresentation};
use mtelab::design::{plan_budget as plan, validate_design as validate, CellPlan, CostSpec, DesignDocument};
use mtelab::dgp::{Arm, DgpSpec, Family, GaussianDgp, RangeViolation};
use mtelab::estimate::{naive_estimate, sequential_estimate, solve_lambda, MomentSet};
use mtelab::metrics::{compare as compare_reps, compare_on, NormReport};
use mtelab::presets;
use mtelab::simulate::{simulate_experiment, simulate_sequential, ExperimentCounts, SequentialConfig};
use mtelab::tables::{self, Table};
use serde::{Deserialize, Serialize};

use crate::io::{emit_json, open, out_dir, read_json, to_json, write_file, CliError, Result};
use crate::PipelineArgs;

/// Grid used for the plot-ready MTE curves.
const CURVE_POINTS: usize = 1001;
/// Range on which Gaussian-family curves are compared; Φ⁻¹ diverges at 0 and 1.
const GAUSSIAN_RANGE: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Deserialize, Serialize)]
#[serde(tag = "family", rename_all = "lowercase")]
enum CalibrationInput {
    Polynomial {
        moments: StudyMoments,
        mte_coeffs: [f64; 4],
        anchor: ReconstructionAnchor,
        /// Shift both arms into [0, 1] and flag the outcome as binary.
        #[serde(default)]
        binary: bool,
    },
    Complex { moments: StudyMoments },
    Gaussian { aggregates: GaussianAggregates },
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    input: &'a CalibrationInput,
    dgp: &'a DgpSpec,
    /// Implied minus observed value of each input moment.
    residuals: Vec<(String, f64)>,
    range_violation: Option<RangeViolation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    condition_number: Option<f64>,
    /// Common shift added to both arms for binary simulation.
    #[serde(skip_serializing_if = "Option::is_none")]
    binary_shift: Option<f64>,
}

fn psi_residuals(dgp: &DgpSpec, m: &StudyMoments) -> Result<Vec<(String, f64)>> {
    let psi = dgp.analytic_psi(m.nu1, None)?;
    let psi00 = dgp.integral_mtr(Arm::Untreated, 0.0, 1.0, None)?;
    Ok(vec![
        ("psi11".into(), psi.treated.unwrap_or(f64::NAN) - m.psi11),
        ("psi01".into(), psi.untreated.unwrap_or(f64::NAN) - m.psi01),
        ("psi00".into(), psi00 - m.psi00),
    ])
}

pub fn calibrate(input: &Path, out: Option<&Path>) -> Result<()> {
    let req: CalibrationInput = read_json(input)?;
    let mut binary_shift = None;
    let (dgp, residuals, condition_number) = match &req {
        CalibrationInput::Polynomial { moments, mte_coeffs, anchor, binary } => {
            let r = reconstruct_polynomial_dgp(moments, *mte_coeffs, anchor)?;
            let unshifted = DgpSpec::polynomial(r.dgp.m1_coeffs.clone(), r.dgp.m0_coeffs.clone());
            let res = psi_residuals(&unshifted, moments)?;
            let dgp = if *binary {
                let c = r.dgp.binary_shift(1e-6)?;
                binary_shift = Some(c);
                let p = r.dgp.shifted(c);
                DgpSpec::polynomial(p.m1_coeffs, p.m0_coeffs).with_binary_outcome(true)
            } else {
                unshifted
            };
            (dgp, res, Some(r.condition_number))
        }
        CalibrationInput::Complex { moments } => {
            let dgp = DgpSpec::complex(calibrate_complex(moments)?);
            let res = psi_residuals(&dgp, moments)?;
            (dgp, res, None)
        }
        CalibrationInput::Gaussian { aggregates } => {
            let g = calibrate_gaussian(aggregates)?;
            let untreated: Vec<(u32, f64)> = aggregates.untreated.iter().map(|a| (a.x, a.nu)).collect();
            let treated: Vec<(u32, f64)> = aggregates.treated.iter().map(|a| (a.x, a.nu)).collect();
            let implied = GaussianAggregates::implied_by(&g, &untreated, &treated)?;
            let mut res = Vec::new();
            for (i, (a, b)) in implied.untreated.iter().zip(&aggregates.untreated).enumerate() {
                res.push((format!("untreated[{i}]"), a.mean - b.mean));
            }
            for (i, (a, b)) in implied.treated.iter().zip(&aggregates.treated).enumerate() {
                res.push((format!("treated[{i}]"), a.mean - b.mean));
            }
            (DgpSpec::gaussian(g), res, None)
        }
    };
    let report = CalibrationReport {
        input: &req,
        dgp: &dgp,
        residuals,
        range_violation: dgp.range_violation(),
        condition_number,
        binary_shift,
    };
    match out {
        Some(dir) => {
            let dir = out_dir(dir)?;
            write_file(&dir.join("dgp.json"), to_json(&dgp).as_bytes())?;
            write_file(&dir.join("calibration_report.json"), to_json(&report).as_bytes())
        }
        None => emit_json(&report, None),
    }
}

#[derive(Serialize)]
struct DesignCheck {
    valid: bool,
    violations: Vec<mtelab::design::Violation>,
}

pub fn validate_design(path: &Path) -> Result<()> {
    let doc: DesignDocument = read_json(path)?;
    if let Some(c) = &doc.cost {
        c.validate()?;
    }
    let violations = validate(&doc.design());
    let check = DesignCheck { valid: violations.is_empty(), violations };
    emit_json(&check, None)?;
    if check.valid {
        Ok(())
    } else {
        let msgs: Vec<String> = check.violations.iter().map(|v| v.to_string()).collect();
        Err(CliError::Input(format!("invalid design: {}", msgs.join("; "))))
    }
}

#[derive(Deserialize)]
struct PlanInput {
    total_budget: f64,
    cost: CostSpec,
    cells: Vec<CellPlan>,
}

pub fn plan_budget(input: &Path, out: Option<&Path>) -> Result<()> {
    let req: PlanInput = read_json(input)?;
    let p = plan(req.total_budget, &req.cost, &req.cells)?;
    emit_json(&p, out)
}

fn load_design(path: &Path) -> Result<DesignDocument> {
    let doc: DesignDocument = read_json(path)?;
    doc.design().ensure_valid()?;
    Ok(doc)
}

fn load_dgp(path: &Path) -> Result<DgpSpec> {
    let dgp: DgpSpec = read_json(path)?;
    dgp.validate()?;
    Ok(dgp)
}

pub fn simulate(dgp: &Path, design: &Path, n: u64, seed: u64, out: Option<&Path>) -> Result<()> {
    let dgp = load_dgp(dgp)?;
    let design = load_design(design)?.design();
    let counts = simulate_experiment(&dgp, &design, n, seed)?;
    let mut buf = Vec::new();
    counts.write_csv(&mut buf)?;
    match out {
        Some(p) => write_file(p, &buf),
        None => {
            print!("{}", String::from_utf8_lossy(&buf));
            Ok(())
        }
    }
}

fn read_counts(path: &Path) -> Result<ExperimentCounts> {
    Ok(ExperimentCounts::read_csv(open(path)?)?)
}

pub fn estimate(counts: Option<&Path>, dgp: Option<&Path>, design: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let moments = match (counts, dgp, design) {
        (Some(c), _, _) => MomentSet::from_counts(&read_counts(c)?)?,
        (None, Some(d), Some(g)) => {
            let dgp = load_dgp(d)?;
            reject_gaussian(&dgp)?;
            MomentSet::from_dgp(&dgp, &load_design(g)?.design().propensities(), None)?
        }
        _ => return Err(CliError::Input("either --counts or --analytic with --dgp and --design is required".into())),
    };
    emit_json(&solve_lambda(&moments)?, out)
}

pub fn bayes(counts: &Path, draws: usize, seed: u64, priors: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let counts = read_counts(counts)?;
    let priors = match priors {
        Some(p) => read_json(p)?,
        None => Priors::uniform(counts.cells.len()),
    };
    let post = draw_posterior_lambda(&counts, &priors, draws, seed)?;
    match out {
        Some(dir) => {
            let dir = out_dir(dir)?;
            write_file(&dir.join("posterior.json"), to_json(&post.summary()).as_bytes())?;
            let c = post.mean1.len();
            let mut csv = String::from("draw");
            (0..c).for_each(|k| write!(csv, ",lambda1_{k}").unwrap());
            (0..=c).for_each(|k| write!(csv, ",lambda0_{k}").unwrap());
            csv.push('\n');
            for (r, d) in post.draws.iter().enumerate() {
                write!(csv, "{r}").unwrap();
                d.lambda1.iter().chain(&d.lambda0).for_each(|v| write!(csv, ",{v:e}").unwrap());
                csv.push('\n');
            }
            write_file(&dir.join("draws.csv"), csv.as_bytes())
        }
        None => emit_json(&post.summary(), None),
    }
}

pub fn decide(
    spec: &Path,
    mte: Option<&Path>,
    experiment: Option<(&Path, usize, u64)>,
    truth: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let spec: DecisionSpec = read_json(spec)?;
    let truth = truth.map(read_representation).transpose()?;
    let rep = match (mte, experiment) {
        (Some(m), _) => read_representation(m)?,
        (None, Some((counts, draws, seed))) => {
            let counts = read_counts(counts)?;
            let d = decide_from_experiment(&counts, &spec, &Priors::uniform(counts.cells.len()), draws, seed)?;
            d.posterior.representation()
        }
        (None, None) => return Err(CliError::Input("either --mte or --counts is required".into())),
    };
    emit_json(&decide_rep(&rep, &spec, truth.as_ref())?, out)
}

/// A tagged representation, or a bare DGP, λ fit or coefficient file.
fn read_representation(path: &Path) -> Result<MteRepresentation> {
    let value: serde_json::Value = read_json(path)?;
    let parse_err = |e: serde_json::Error| CliError::Input(format!("{}: {e}", path.display()));
    let rep = if value.get("kind").is_some() {
        serde_json::from_value(value).map_err(parse_err)?
    } else if value.get("lambda1").is_some() {
        MteRepresentation::lambda(serde_json::from_value(value).map_err(parse_err)?)
    } else if let Some(lambda) = value.get("lambda") {
        MteRepresentation::lambda(serde_json::from_value(lambda.clone()).map_err(parse_err)?)
    } else {
        MteRepresentation::dgp(serde_json::from_value(value).map_err(parse_err)?)
    };
    Ok(rep)
}

fn comparison_range(rep: &MteRepresentation) -> (f64, f64) {
    match rep {
        MteRepresentation::TrueDgp { dgp, .. } if dgp.requires_x() => GAUSSIAN_RANGE,
        _ => (0.0, 1.0),
    }
}

pub fn compare(truth: &Path, approx: &Path, lo: f64, hi: f64, out: Option<&Path>) -> Result<()> {
    let truth = read_representation(truth)?;
    let approx = read_representation(approx)?;
    let (dlo, dhi) = comparison_range(&truth);
    let (lo, hi) = (lo.max(dlo), hi.min(dhi));
    emit_json(&compare_on(&truth, &approx, lo, hi)?, out)
}

fn reject_gaussian(dgp: &DgpSpec) -> Result<()> {
    if matches!(dgp.family, Family::Gaussian(_)) {
        return Err(CliError::Input(
            "the Gaussian family depends on the exposure count; use the sequential command".into(),
        ));
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn norms_csv(dgp: &str, design: &str, n: &NormReport) -> String {
    format!("dgp,design,sup,l2,ate_norm\n{dgp},{design},{:e},{:e},{}\n", n.sup_norm, n.l2_norm, fmt_opt(n.ate_norm))
}

fn curve_csv(truth: &MteRepresentation, approx: &MteRepresentation, lo: f64, hi: f64) -> Result<String> {
    let mut s = String::from("u,mte_true,mte_app\n");
    for i in 0..CURVE_POINTS {
        let u = if i + 1 == CURVE_POINTS { hi } else { lo + (hi - lo) * i as f64 / (CURVE_POINTS - 1) as f64 };
        writeln!(s, "{u},{:e},{:e}", truth.mte(u)?, approx.mte(u)?).unwrap();
    }
    Ok(s)
}

#[derive(Serialize)]
struct PipelineSummary {
    mode: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    draws: Option<usize>,
    norms: NormReport,
    nu_star: f64,
    true_nu_star: Option<f64>,
    absolute_loss: Option<f64>,
    relative_loss: Option<f64>,
    baseline_relative_loss: Option<f64>,
}

pub fn pipeline(args: &PipelineArgs) -> Result<()> {
    let dgp = load_dgp(&args.dgp)?;
    reject_gaussian(&dgp)?;
    let design = load_design(&args.design)?.design();
    let spec: DecisionSpec = read_json(&args.spec)?;
    let dir = out_dir(&args.out)?;
    let truth = MteRepresentation::dgp(dgp.clone());

    let (approx, lambda_json) = if args.analytic {
        let fit = solve_lambda(&MomentSet::from_dgp(&dgp, &design.propensities(), None)?)?;
        (MteRepresentation::lambda(fit.lambda.clone()), to_json(&fit))
    } else {
        let (n, seed) = (args.n.unwrap_or_default(), args.seed.unwrap_or_default());
        let counts = simulate_experiment(&dgp, &design, n, seed)?;
        let mut buf = Vec::new();
        counts.write_csv(&mut buf)?;
        write_file(&dir.join("counts.csv"), &buf)?;
        let point = solve_lambda(&MomentSet::from_counts(&counts)?)?;
        let post = draw_posterior_lambda(&counts, &Priors::uniform(design.len()), args.draws, seed)?;
        let summary = post.summary();
        #[derive(Serialize)]
        struct Lambdas<'a> {
            point_estimate: &'a mtelab::estimate::LambdaFit,
            posterior: &'a mtelab::bayes::PosteriorSummary,
        }
        let json = to_json(&Lambdas { point_estimate: &point, posterior: &summary });
        (summary.representation(), json)
    };
    let norms = compare_reps(&truth, &approx)?;
    let decision = decide_rep(&approx, &spec, Some(&truth))?;
    write_file(&dir.join("lambda.json"), lambda_json.as_bytes())?;
    write_file(&dir.join("decision.json"), to_json(&decision).as_bytes())?;
    write_file(&dir.join("norms.csv"), norms_csv(&stem(&args.dgp), &stem(&args.design), &norms).as_bytes())?;
    write_file(&dir.join("mte_grid.csv"), curve_csv(&truth, &approx, 0.0, 1.0)?.as_bytes())?;
    let summary = PipelineSummary {
        mode: if args.analytic { "analytic" } else { "simulated" },
        n: args.n.filter(|_| !args.analytic),
        seed: args.seed.filter(|_| !args.analytic),
        draws: (!args.analytic).then_some(args.draws),
        norms,
        nu_star: decision.nu_star,
        true_nu_star: decision.true_nu_star,
        absolute_loss: decision.absolute_loss,
        relative_loss: decision.relative_loss,
        baseline_relative_loss: decision.baseline_relative_loss,
    };
    write_file(&dir.join("summary.json"), to_json(&summary).as_bytes())?;
    print!("{}", to_json(&summary));
    Ok(())
}

#[derive(Serialize)]
struct ReproduceSummary {
    tables: Vec<&'static str>,
    entries: usize,
    passed: usize,
    failures: Vec<tables::Comparison>,
}

pub fn reproduce(names: &[String], out: Option<&Path>) -> Result<()> {
    let selected: Vec<Table> = if names.is_empty() {
        Table::ALL.to_vec()
    } else {
        names.iter().map(|n| Table::parse(n.trim())).collect::<mtelab::Result<_>>()?
    };
    let mut rows = Vec::new();
    for t in &selected {
        rows.extend(tables::check(*t)?);
    }
    for r in &rows {
        println!(
            "{} {}/{}/{}: {:e} (reference {:e})",
            if r.pass { "PASS" } else { "FAIL" },
            r.table.name(),
            r.row,
            r.column,
            r.value,
            r.expected
        );
    }
    let failures: Vec<_> = rows.iter().filter(|r| !r.pass).cloned().collect();
    let summary = ReproduceSummary {
        tables: selected.iter().map(|t| t.name()).collect(),
        entries: rows.len(),
        passed: rows.len() - failures.len(),
        failures,
    };
    if let Some(dir) = out {
        let dir = out_dir(dir)?;
        let mut buf = Vec::new();
        tables::write_csv(&rows, &mut buf)?;
        write_file(&dir.join("reproduce.csv"), &buf)?;
        write_file(&dir.join("summary.json"), to_json(&summary).as_bytes())?;
    }
    if summary.failures.is_empty() {
        Ok(())
    } else {
        let list: Vec<String> =
            summary.failures.iter().map(|f| format!("{}/{}/{}", f.table.name(), f.row, f.column)).collect();
        Err(CliError::Mismatch(format!(
            "{} of {} entries outside tolerance: {}",
            list.len(),
            summary.entries,
            list.join(", ")
        )))
    }
}

#[derive(Serialize)]
struct ExposureEstimate {
    x: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<mtelab::estimate::LambdaFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    norms: Option<NormReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct NaiveDistance {
    x: u32,
    norms: NormReport,
}

#[derive(Serialize)]
struct SequentialReport {
    n: u64,
    seed: u64,
    config: SequentialConfig,
    compare_range: (f64, f64),
    per_exposure: Vec<ExposureEstimate>,
    naive: mtelab::estimate::LambdaFit,
    naive_vs_truth: Vec<NaiveDistance>,
}

pub fn sequential(dgp: Option<&Path>, config: Option<&Path>, n: u64, seed: u64, out: Option<&Path>) -> Result<()> {
    let g: GaussianDgp = match dgp {
        None => presets::gaussian_dgp(),
        Some(p) => match load_dgp(p)?.family {
            Family::Gaussian(g) => g,
            _ => return Err(CliError::Input("the sequential command needs a Gaussian-family DGP".into())),
        },
    };
    let config: SequentialConfig = config.map(read_json).transpose()?.unwrap_or_default();
    let counts = simulate_sequential(&g, &config, n, seed)?;
    let spec = DgpSpec::gaussian(g);
    let (lo, hi) = GAUSSIAN_RANGE;
    let truth = |x: u32| MteRepresentation::TrueDgp { dgp: spec.clone(), x: Some(x) };
    let mut per_exposure = Vec::new();
    for x in counts.exposure_levels() {
        match sequential_estimate(&counts, x) {
            Ok(fit) => {
                let norms = compare_on(&truth(x), &MteRepresentation::lambda(fit.lambda.clone()), lo, hi)?;
                per_exposure.push(ExposureEstimate { x, fit: Some(fit), norms: Some(norms), error: None });
            }
            Err(e) if !e.is_numeric() || matches!(e, mtelab::Error::InsufficientVariation(_)) => {
                per_exposure.push(ExposureEstimate { x, fit: None, norms: None, error: Some(e.to_string()) })
            }
            Err(e) => return Err(e.into()),
        }
    }
    let naive = naive_estimate(&counts)?;
    let naive_rep = MteRepresentation::lambda(naive.lambda.clone());
    let naive_vs_truth = counts
        .exposure_levels()
        .into_iter()
        .map(|x| Ok(NaiveDistance { x, norms: compare_on(&truth(x), &naive_rep, lo, hi)? }))
        .collect::<Result<_>>()?;
    let report = SequentialReport { n, seed, config, compare_range: GAUSSIAN_RANGE, per_exposure, naive, naive_vs_truth };
    match out {
        Some(dir) => {
            let dir = out_dir(dir)?;
            let mut buf = Vec::new();
            counts.write_csv(&mut buf)?;
            write_file(&dir.join("sequential_counts.csv"), &buf)?;
            write_file(&dir.join("sequential_report.json"), to_json(&report).as_bytes())
        }
        None => emit_json(&report, None),
    }
}

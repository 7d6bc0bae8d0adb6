use mtelab::dgp::{Arm, DgpSpec};
use mtelab::numeric::quad;
use mtelab::presets::{self, StudyDgp};
use mtelab::simulate::{simulate_experiment, ExperimentCounts};

fn mean_mtr(dgp: &DgpSpec, arm: Arm, a: f64, b: f64) -> f64 {
    quad::integrate(|u| dgp.mtr(arm, u, None).unwrap(), a, b, 1e-13).unwrap() / (b - a)
}

fn assert_within_se(mean: Option<f64>, se: Option<f64>, oracle: f64, what: &str) {
    let (mean, se) = (mean.unwrap(), se.unwrap());
    let z = (mean - oracle).abs() / se;
    assert!(z <= 4.0, "{what}: simulated {mean} vs oracle {oracle} is {z:.2} SE off");
}

fn check_against_quadrature(dgp: &DgpSpec, cells: usize, n: u64, seed: u64) {
    let design = presets::design(cells).unwrap();
    let counts = simulate_experiment(dgp, &design, n, seed).unwrap();
    let nus: Vec<f64> = design.cells.iter().map(|c| c.propensity).collect();
    for (c, (cell, &nu)) in counts.cells.iter().zip(&nus).enumerate() {
        assert_within_se(cell.treated.mean(), cell.treated.std_error(), mean_mtr(dgp, Arm::Treated, 0.0, nu), &format!("cell {c} treated"));
        assert_within_se(cell.untreated.mean(), cell.untreated.std_error(), mean_mtr(dgp, Arm::Untreated, nu, 1.0), &format!("cell {c} untreated"));
    }
    let control = counts.pooled_control();
    assert_within_se(control.mean(), control.std_error(), mean_mtr(dgp, Arm::Untreated, 0.0, 1.0), "pooled control");
}

#[test]
fn binary_polynomial_moments_match_quadrature() {
    check_against_quadrature(&StudyDgp::Dgp2.binary_dgp().unwrap(), 2, 2_000_000, 3);
}

#[test]
fn complex_moments_match_quadrature() {
    let dgp = DgpSpec::complex(presets::complex_dgp().unwrap());
    for cells in [2, 3, 5] {
        check_against_quadrature(&dgp, cells, 1_000_000, 17 + cells as u64);
    }
}

#[test]
fn realized_assignment_shares_track_design() {
    let design = presets::design(3).unwrap();
    let n = 900_000;
    let counts = simulate_experiment(&StudyDgp::Dgp1.binary_dgp().unwrap(), &design, n, 8).unwrap();
    assert_eq!(counts.total(), n);
    for (cell, spec) in counts.cells.iter().zip(&design.cells) {
        let p = spec.assign_share * spec.elig_share;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let got = cell.eligible() as f64 / n as f64;
        assert!((got - p).abs() <= 4.0 * se, "eligible share {got} vs {p}");
    }
}

#[test]
fn counts_survive_csv_round_trip() {
    let counts = simulate_experiment(&StudyDgp::Dgp1.binary_dgp().unwrap(), &presets::design(2).unwrap(), 50_000, 1).unwrap();
    let mut buf = Vec::new();
    counts.write_csv(&mut buf).unwrap();
    assert_eq!(ExperimentCounts::read_csv(buf.as_slice()).unwrap(), counts);
}

#[test]
fn seeds_change_the_draw() {
    let dgp = StudyDgp::Dgp1.binary_dgp().unwrap();
    let design = presets::design(2).unwrap();
    let a = simulate_experiment(&dgp, &design, 10_000, 1).unwrap();
    let b = simulate_experiment(&dgp, &design, 10_000, 2).unwrap();
    assert_ne!(a, b);
}

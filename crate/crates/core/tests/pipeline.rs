use bernoulli_lab::io::{read_binary, write_binary};
use bernoulli_lab::minimize::{energy, SolverChoice};
use bernoulli_lab::scenarios::{annular_preset, disk_preset, run_experiment, ExperimentConfig};
use bernoulli_lab::weights::PlateauRule;
use bernoulli_lab::WeightSpec;

fn plateau(n: usize) -> ExperimentConfig {
    disk_preset("plateau", n, 1.0, WeightSpec::Constant { value: 20.0 })
}

#[test]
fn runs_are_reproducible() {
    let mut config = plateau(24);
    config.solver = SolverChoice::Both;
    let a = run_experiment(&config).unwrap();
    let b = run_experiment(&config).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.state.u.values(), b.state.u.values());
    assert_eq!(
        serde_json::to_string(&a.report).unwrap(),
        serde_json::to_string(&b.report).unwrap()
    );
}

#[test]
fn config_survives_a_json_round_trip() {
    let config = annular_preset(3, 2.0, 0.2, 16, PlateauRule::AsPrinted);
    let text = config.to_json().unwrap();
    assert_eq!(ExperimentConfig::from_json(&text).unwrap(), config);
}

#[test]
fn stored_fields_reproduce_the_energy() {
    let exp = run_experiment(&plateau(32)).unwrap();
    let mut bytes = Vec::new();
    write_binary(&exp.state.u, &mut bytes).unwrap();
    let back = read_binary(bytes.as_slice()).unwrap();
    assert_eq!(back.region().mask(), exp.state.u.region().mask());
    let p = &exp.problem;
    let again = bernoulli_lab::ScalarField::new(p.region().clone(), back.values().to_vec()).unwrap();
    let e = energy(&again, &p.coeff, &p.weight, p.gamma).unwrap();
    assert_eq!(e, exp.state.energy);
}

#[test]
fn plateau_run_has_both_phases() {
    let exp = run_experiment(&plateau(32)).unwrap();
    let s = &exp.summary;
    assert!(s.state.converged);
    assert!(s.state.zero_cells > 0 && s.state.positive_cells > 0);
    assert!(s.free_boundary_points > 0);
    let bracket = s.bracket.as_ref().unwrap();
    assert!(bracket.zero_cells > 0);
    assert!(s.radial_energy.is_none());
}

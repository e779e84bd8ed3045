mod common;

use common::{brute_force_mil, random_mil_problem, selection_objective};
use wsolkit::mil::{mil_train, MilConfig, Polarity};

const LAMBDA: f64 = 0.01;

#[test]
fn oracle_solver_agrees_with_library_objective() {
    let bags = random_mil_problem(99);
    let cfg = MilConfig { lambda: LAMBDA, ..Default::default() };
    let (clf, sel, rep) = mil_train(&bags, &cfg).unwrap();
    let picks: Vec<usize> = bags
        .iter()
        .zip(&sel)
        .filter(|(b, _)| b.polarity == Polarity::Positive)
        .map(|(_, s)| s.selected().next().unwrap())
        .collect();
    let oracle = selection_objective(&bags, &picks, LAMBDA);
    let last = *rep.objectives.last().unwrap();
    assert!((oracle - last).abs() < 1e-7, "oracle {oracle} library {last}");
    assert_eq!(clf.weights.len(), 2);
}

#[test]
fn matches_exhaustive_search() {
    let cfg = MilConfig { lambda: LAMBDA, ..Default::default() };
    let mut matches = 0;
    let total = 30;
    for seed in 0..total {
        let bags = random_mil_problem(seed);
        let (best, _, _) = brute_force_mil(&bags, LAMBDA, 20000);
        let (_, sel, _) = mil_train(&bags, &cfg).unwrap();
        let picks: Vec<usize> = bags
            .iter()
            .zip(&sel)
            .filter(|(b, _)| b.polarity == Polarity::Positive)
            .map(|(_, s)| s.selected().next().unwrap())
            .collect();
        let got = selection_objective(&bags, &picks, LAMBDA);
        if got <= best + 1e-7 {
            matches += 1;
        } else {
            eprintln!("seed {seed}: mil {got} vs optimum {best}");
        }
    }
    eprintln!("{matches}/{total}");
    assert!(matches as f64 >= 0.95 * total as f64);
}

use zhang_sandpile::engine::Sandpile;
use zhang_sandpile::model::reduce;
use zhang_sandpile::stats::Moments;
use zhang_sandpile::tracking::{wave_f_coefficients, CoefficientState, DecayMonitor};
use zhang_sandpile::{Configuration, ModelParams, SimRng};

fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max)
}

fn reconstruct_run(a: f64, b: f64, seed: u64) -> (f64, u64) {
    let n = 10;
    let mut pile = Sandpile::empty(ModelParams::new(n, a, b).unwrap());
    let mut rng = SimRng::seed_from_u64(seed);
    let mut state =
        CoefficientState::new(pile.config(), 0, Some(CoefficientState::default_window(n)));
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let r = pile.step_with_report(&mut rng);
        let f = wave_f_coefficients(&r).unwrap();
        state.update_fractions(&r, &f).unwrap();
        worst = worst.max(max_abs_diff(&state.reconstruct(), pile.energies()));
    }
    (worst, state.dropped_rows())
}

#[test]
fn windowed_reconstruction_over_ten_thousand_steps() {
    for (a, b, seed) in [(0.5, 1.0, 1), (0.0, 1.0, 2), (0.2, 0.6, 3)] {
        let (worst, dropped) = reconstruct_run(a, b, seed);
        assert!(worst <= 1e-9, "[{a}, {b}]: residual {worst:e}");
        assert!(dropped > 0);
    }
}

#[test]
fn fractions_from_a_regular_start() {
    let n = 6;
    let start = Configuration::new(vec![0.6, 0.9, 0.0, 0.7, 0.55, 0.99]).unwrap();
    let mut pile = Sandpile::new(ModelParams::new(n, 0.5, 1.0).unwrap(), start.clone()).unwrap();
    let mut state = CoefficientState::new(&start, 0, None);
    let mut monitor = DecayMonitor::new();
    let mut rng = SimRng::seed_from_u64(4);
    for _ in 0..500 {
        let r = pile.step_with_report(&mut rng);
        state
            .update_fractions(&r, &wave_f_coefficients(&r).unwrap())
            .unwrap();
        monitor.observe(&state);
        assert!(max_abs_diff(&state.reconstruct(), pile.energies()) <= 1e-9);
        for j in 0..n {
            let want = if pile.energies()[j] == 0.0 { 0.0 } else { 1.0 };
            assert!((state.site_total(j) - want).abs() <= 1e-9);
        }
        for row in state.rows() {
            assert!(row.fractions.iter().all(|&v| v >= 0.0));
            assert!(row.fractions.iter().sum::<f64>() <= 1.0 + 1e-12);
        }
    }
    assert_eq!(monitor.monotone_violations, 0);
}

/// With additions of at least 1/2 the fractions depend on the sites only, not
/// on the amounts, so the variance of a site splits into an amount part and a
/// reduction part.
#[test]
fn variance_decomposition_from_zero() {
    let (n, t, reps) = (4usize, 60u64, 20_000u64);
    let p = ModelParams::new(n, 0.5, 1.0).unwrap();
    let (eu, vu) = (p.mean_addition(), p.variance_addition());
    let mut energy = vec![Moments::default(); n];
    let mut reduction = vec![Moments::default(); n];
    let mut square_mass = vec![0.0; n];
    for rep in 0..reps {
        let mut rng = SimRng::split(77, rep);
        let mut pile = Sandpile::empty(p);
        let mut state = CoefficientState::new(pile.config(), 0, None);
        for _ in 0..t {
            let r = pile.step_with_report(&mut rng);
            state
                .update_fractions(&r, &wave_f_coefficients(&r).unwrap())
                .unwrap();
        }
        let red = reduce(pile.config());
        for j in 0..n {
            energy[j].push(pile.energies()[j]);
            reduction[j].push(f64::from(red.unit_value(j).expect("no anomalous sites")));
            square_mass[j] += state.squared_addition_mass(j);
        }
    }
    for j in 0..n {
        let lhs = energy[j].variance();
        let rhs = vu * square_mass[j] / reps as f64 + eu * eu * reduction[j].variance();
        // sample variance of a bounded variable: relative sd about sqrt(2 / reps)
        let tol = 6.0 * (2.0 / reps as f64).sqrt() * lhs;
        assert!((lhs - rhs).abs() <= tol, "site {j}: {lhs} vs {rhs}");
    }
}

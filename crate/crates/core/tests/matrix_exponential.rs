//! Monte Carlo estimators against dense matrix exponentials of the
//! corresponding symmetric generators.

use nalgebra::{DMatrix, DVector};
use pam_core::environments::{EnvConfig, EnvKind, EnvTrajectory};
use pam_core::feynman_kac::*;
use pam_core::lattice::*;
use pam_core::walker::*;

/// `exp(t H)` for symmetric `H` by eigendecomposition.
fn expm_sym(h: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let e = h.clone().symmetric_eigen();
    let d = DVector::from_iterator(e.eigenvalues.len(), e.eigenvalues.iter().map(|l| (t * l).exp()));
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

/// Generator of the walk restricted to the box edges.
fn generator(field: &ConductanceField) -> DMatrix<f64> {
    let l = field.lattice();
    let mut q = DMatrix::zeros(l.site_count(), l.site_count());
    for (e, &(a, b)) in l.edges().iter().enumerate() {
        q[(a, b)] += field.rate(e);
        q[(b, a)] += field.rate(e);
        q[(a, a)] -= field.rate(e);
        q[(b, b)] -= field.rate(e);
    }
    q
}

fn line(radius: u32, kappa: f64) -> ConductanceField {
    ConductanceField::constant(LatticeBox::new(1, radius, Geometry::Absorbing).unwrap(), kappa).unwrap()
}

#[test]
fn three_site_occupation_at_time_one() {
    let lattice = LatticeBox::new(1, 1, Geometry::Absorbing).unwrap();
    let field = ConductanceField::from_rates(lattice.clone(), vec![0.7, 1.9]).unwrap();
    let o = lattice.origin_site().unwrap();
    let exact = expm_sym(&generator(&field), 1.0);
    let n = 100_000u64;
    let mut counts = [0u64; 3];
    for i in 0..n {
        counts[simulate_path(&field, o, 1.0, 3, i).unwrap().end()] += 1;
    }
    for (x, &c) in counts.iter().enumerate() {
        let p = exact[(o, x)];
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((c as f64 / n as f64 - p).abs() < 4.0 * se, "site {x}: {c} vs {p}");
    }
}

#[test]
fn confinement_probability_matches_killed_generator() {
    let field = line(12, 1.0);
    let lattice = field.lattice();
    let o = lattice.origin_site().unwrap();
    // killed walk on [-3, 3]
    let mut q = DMatrix::zeros(7, 7);
    for i in 0..7 {
        q[(i, i)] = -2.0;
        if i > 0 {
            q[(i, i - 1)] = 1.0;
        }
        if i < 6 {
            q[(i, i + 1)] = 1.0;
        }
    }
    let exact: f64 = expm_sym(&q, 1.0).row(3).sum();
    let pocket = Pocket::new(vec![0], 3);
    let n = 2_000_000u64;
    let hits = (0..n)
        .filter(|&i| confinement_indicator(&simulate_path(&field, o, 1.0, 5, i).unwrap(), lattice, &pocket))
        .count();
    let est = hits as f64 / n as f64;
    assert!((est - exact).abs() < 1.5e-3, "{est} vs {exact}");
}

#[test]
fn girsanov_reweighting_is_unbiased() {
    let lattice = LatticeBox::new(1, 4, Geometry::Absorbing).unwrap();
    let law = FieldLaw::IidDiscrete {
        values: vec![0.2, 0.35, 0.5, 0.8, 1.0],
        probs: vec![0.2; 5],
    };
    let from = generate_field(lattice.clone(), &law, 21).unwrap();
    let to = discretize_field(&from, 2).unwrap();
    let t = 0.5;
    let o = lattice.origin_site().unwrap();
    let exact = expm_sym(&generator(&to), t)[(o, o)];
    let bound = discretization_time_bound(&from, 2, t);
    let n = 1_000_000u64;
    let (mut s, mut s2) = (0.0, 0.0);
    for i in 0..n {
        let path = simulate_path(&from, o, t, 9, i).unwrap();
        let w = girsanov_weight(&path, &from, &to).unwrap();
        assert!(w.log_weight <= bound + 1e-12);
        let v = if path.end() == o { w.log_weight.exp() } else { 0.0 };
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / (n - 1) as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn quenched_heat_kernel_without_potential() {
    let lattice = LatticeBox::new(1, 5, Geometry::Absorbing).unwrap();
    let law = FieldLaw::IidDiscrete {
        values: vec![0.5, 2.0],
        probs: vec![0.5, 0.5],
    };
    let field = generate_field(lattice.clone(), &law, 4).unwrap();
    let traj = EnvTrajectory::record(EnvConfig::new(EnvKind::Frozen { value: 0.0 }, lattice.clone(), 1), 2.0).unwrap();
    let opts = QuenchedOptions {
        dt: 1e-3,
        initial: Initial::Delta0,
        pocket: None,
        keep_grid: false,
    };
    let sol = solve_quenched(&field, EnvSource::Trajectory(&traj), 2.0, &opts).unwrap();
    let q = generator(&field);
    let o = lattice.origin_site().unwrap();
    for t in [0.5, 1.0, 2.0] {
        let exact = expm_sym(&q, t)[(o, o)];
        let got = sol.log_origin_at(t).exp();
        assert!((got / exact - 1.0).abs() < 1e-3, "t={t}: {got} vs {exact}");
    }
}

#[test]
fn white_noise_solution_has_unit_mean() {
    let field = ConductanceField::constant(LatticeBox::new(1, 5, Geometry::Periodic).unwrap(), 1.0).unwrap();
    let opts = QuenchedOptions {
        dt: 0.01,
        initial: Initial::Ones,
        pocket: None,
        keep_grid: false,
    };
    let o = field.lattice().origin_site().unwrap();
    let vals: Vec<f64> = (0..10_000u64)
        .map(|s| solve_quenched(&field, EnvSource::WhiteNoise { seed: s }, 1.0, &opts).unwrap().u(o))
        .collect();
    assert!(vals.iter().all(|v| *v > 0.0));
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * se, "{mean} ± {se}");
}

#[test]
fn finite_walker_moment_matches_pair_generator() {
    // one K-walk and one rate-ρ walk, both restricted to the same box
    let field = line(6, 1.0);
    let rho_field = line(6, 1.0);
    let n = field.lattice().site_count();
    let (q, qr) = (generator(&field), generator(&rho_field));
    let id = DMatrix::<f64>::identity(n, n);
    let mut h = q.kronecker(&id) + id.kronecker(&qr);
    for x in 0..n {
        h[(x * n + x, x * n + x)] += 1.0;
    }
    let t = 4.0;
    let o = field.lattice().origin_site().unwrap();
    let exact = expm_sym(&h, t).row(o * n + o).sum().ln();
    let m = moment_finite_rw(&field, 1, 1.0, &MomentConfig::new(1, t, 200_000, 17)).unwrap();
    assert!((m.log_value - exact).abs() < 3.0 * m.std_error + 1e-9, "{} vs {exact} (se {})", m.log_value, m.std_error);
}

#[test]
fn white_noise_second_moment_matches_pair_generator() {
    let field = line(6, 1.0);
    let n = field.lattice().site_count();
    let q = generator(&field);
    let id = DMatrix::<f64>::identity(n, n);
    let mut h = q.kronecker(&id) + id.kronecker(&q);
    for x in 0..n {
        h[(x * n + x, x * n + x)] += 1.0;
    }
    let t = 3.0;
    let o = field.lattice().origin_site().unwrap();
    let exact = expm_sym(&h, t).row(o * n + o).sum().ln();
    let m = moment_white_noise(&field, &MomentConfig::new(2, t, 200_000, 23)).unwrap();
    assert!((m.log_value - exact).abs() < 3.0 * m.std_error + 1e-9, "{} vs {exact}", m.log_value);
}

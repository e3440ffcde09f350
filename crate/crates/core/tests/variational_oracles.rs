use nalgebra::DMatrix;
use pam_core::lattice::{ConductanceField, Geometry, LatticeBox};
use pam_core::variational::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense_top(op: &OperatorSpec) -> f64 {
    let d = op.matrix.to_dense();
    let n = d.len();
    DMatrix::from_fn(n, n, |i, j| d[i][j]).symmetric_eigen().eigenvalues.max()
}

fn constant(d: usize, r: u32, g: Geometry, k: f64) -> ConductanceField {
    ConductanceField::constant(LatticeBox::new(d, r, g).unwrap(), k).unwrap()
}

fn ring(r: u32) -> LatticeBox {
    LatticeBox::new(1, r, Geometry::Periodic).unwrap()
}

fn check_oracle(op: &OperatorSpec) -> f64 {
    assert_eq!(op.matrix.max_asymmetry(), 0.0);
    let r = top_eigenvalue(op, 1e-11, 50_000);
    assert!(r.converged, "residual {}", r.residual);
    let exact = dense_top(op);
    assert!((r.lambda_max - exact).abs() <= 1e-8, "{} vs {}", r.lambda_max, exact);
    exact
}

#[test]
fn firw_matches_dense() {
    let op = build_firw_operator(&constant(1, 6, Geometry::Absorbing, 1.0), 1, 1, 1.0, &BuildOptions::dirichlet(6)).unwrap();
    assert_eq!(op.dim(), 169);
    check_oracle(&op);
}

#[test]
fn iirw_matches_dense() {
    let op = build_iirw_operator(&constant(1, 1, Geometry::Absorbing, 1.0), 1, 1.0, 2, 3, &ring(1), &BuildOptions::dirichlet(1)).unwrap();
    assert_eq!(op.dim(), 64 * 3);
    check_oracle(&op);
}

#[test]
fn spin_single_site_matches_dense() {
    let env = LatticeBox::new(1, 0, Geometry::Periodic).unwrap();
    for beta in [0.0, 1.3] {
        let op = build_spinflip_operator(&constant(1, 2, Geometry::Absorbing, 1.0), 1, beta, &env, &BuildOptions::dirichlet(2)).unwrap();
        assert_eq!(op.dim(), 10);
        check_oracle(&op);
    }
}

#[test]
fn spin_ring_exponent_is_between_bounds() {
    let op = build_spinflip_operator(&constant(1, 4, Geometry::Absorbing, 1.0), 1, 0.5, &ring(3), &BuildOptions::dirichlet(4)).unwrap();
    let l = check_oracle(&op);
    assert!(l > 0.0 && l < 1.0, "{l}");
}

#[test]
fn wn_monotone_in_truncation() {
    let mut last = f64::NEG_INFINITY;
    for l in [4, 6, 8] {
        let op = build_wn_operator(&constant(1, l, Geometry::Absorbing, 1.0), 2, &BuildOptions::dirichlet(l)).unwrap();
        let v = top_eigenvalue(&op, 1e-11, 50_000).lambda_max;
        assert!(v >= last - 1e-9, "L={l}: {v} < {last}");
        last = v;
    }
}

#[test]
fn iirw_monotone_in_potential_cap() {
    let mut last = f64::NEG_INFINITY;
    for n in 0..=3 {
        let op = build_iirw_operator(&constant(1, 1, Geometry::Absorbing, 1.0), 1, 1.0, n, 3, &ring(1), &BuildOptions::dirichlet(1)).unwrap();
        let v = dense_top(&op);
        assert!(v >= last - 1e-12);
        last = v;
    }
}

#[test]
fn iirw_spectrum_does_not_depend_on_density() {
    // the √μ similarity changes the basis but not the eigenvalues
    let lam = |nu| {
        let op = build_iirw_operator(&constant(1, 1, Geometry::Absorbing, 1.0), 1, nu, 2, 3, &ring(1), &BuildOptions::dirichlet(1)).unwrap();
        dense_top(&op)
    };
    let base = lam(1.0);
    for nu in [1e-3, 0.1, 5.0] {
        assert!((lam(nu) - base).abs() < 1e-9);
    }
}

/// Independent construction of the unsymmetrized generator `A` and measure
/// `μ` for an environment factor (slowest index) times one Dirichlet walk.
struct Reference {
    mu: Vec<f64>,
    entries: Vec<(usize, usize, f64)>,
    walk_sites: usize,
}

impl Reference {
    fn weighted_form(&self, f: &[f64]) -> f64 {
        let mut af = vec![0.0; f.len()];
        for &(i, j, v) in &self.entries {
            af[i] += v * f[j];
        }
        (0..f.len()).map(|s| self.mu[s / self.walk_sites] * f[s] * af[s]).sum()
    }
}

fn walk_entries(env_states: usize, sites: usize, kappa: f64, pot: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize, f64)> {
    let mut e = Vec::new();
    for eta in 0..env_states {
        for x in 0..sites {
            let s = eta * sites + x;
            e.push((s, s, -2.0 * kappa + pot(eta, x)));
            if x > 0 {
                e.push((s, s - 1, kappa));
            }
            if x + 1 < sites {
                e.push((s, s + 1, kappa));
            }
        }
    }
    e
}

fn iirw_reference(nu: f64, cap: usize, ncap: usize) -> Reference {
    let m = 3;
    let base = cap + 1;
    let states = base.pow(m as u32);
    let decode = |i: usize| (0..m).map(|k| i / base.pow(k as u32) % base).collect::<Vec<_>>();
    let fact = |k: usize| (1..=k).product::<usize>() as f64;
    let z: f64 = (0..base).map(|k| nu.powi(k as i32) / fact(k)).sum();
    let mu: Vec<f64> = (0..states)
        .map(|i| decode(i).iter().map(|&k| nu.powi(k as i32) / fact(k) / z).product())
        .collect();
    let sites = 3;
    let mut entries = walk_entries(states, sites, 1.0, |eta, x| decode(eta)[x].min(ncap) as f64);
    for i in 0..states {
        let eta = decode(i);
        for a in 0..m {
            for b in [(a + 1) % m, (a + m - 1) % m] {
                if eta[a] == 0 || eta[b] == cap {
                    continue;
                }
                let j = i - base.pow(a as u32) + base.pow(b as u32);
                let r = eta[a] as f64;
                for x in 0..sites {
                    entries.push((i * sites + x, j * sites + x, r));
                    entries.push((i * sites + x, i * sites + x, -r));
                }
            }
        }
    }
    Reference { mu, entries, walk_sites: sites }
}

fn spin_reference(beta: f64) -> Reference {
    let m = 3;
    let states = 1usize << m;
    let sigma = |i: usize, k: usize| if i >> k & 1 == 1 { 1.0 } else { -1.0 };
    let energy = |i: usize| (0..m).map(|k| sigma(i, k) * sigma(i, (k + 1) % m)).sum::<f64>();
    let w: Vec<f64> = (0..states).map(|i| (beta * energy(i)).exp()).collect();
    let z: f64 = w.iter().sum();
    let mu: Vec<f64> = w.iter().map(|v| v / z).collect();
    let sites = 3;
    let mut entries = walk_entries(states, sites, 1.0, |eta, x| (eta >> x & 1) as f64);
    for i in 0..states {
        for y in 0..m {
            let c = (-beta * sigma(i, y) * (sigma(i, (y + 1) % m) + sigma(i, (y + m - 1) % m))).exp();
            let j = i ^ (1 << y);
            for x in 0..sites {
                entries.push((i * sites + x, j * sites + x, c));
                entries.push((i * sites + x, i * sites + x, -c));
            }
        }
    }
    Reference { mu, entries, walk_sites: sites }
}

fn check_weighted(op: &OperatorSpec, reference: &Reference) {
    let w = op.weighting.as_ref().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let f: Vec<f64> = (0..op.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = f.iter().enumerate().map(|(s, v)| v * w[s / reference.walk_sites]).collect();
        let a = op.matrix.quadratic_form(&h);
        let b = reference.weighted_form(&f);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn weighted_forms_agree_for_particles() {
    for nu in [0.4, 1.7] {
        let op = build_iirw_operator(&constant(1, 1, Geometry::Absorbing, 1.0), 1, nu, 2, 3, &ring(1), &BuildOptions::dirichlet(1)).unwrap();
        let w = op.weighting.as_ref().unwrap();
        let reference = iirw_reference(nu, 3, 2);
        for (a, b) in w.iter().zip(&reference.mu) {
            assert!((a * a - b).abs() < 1e-14);
        }
        check_weighted(&op, &reference);
    }
}

#[test]
fn weighted_forms_agree_for_spins() {
    for beta in [0.0, 0.5, -0.8] {
        let op = build_spinflip_operator(&constant(1, 1, Geometry::Absorbing, 1.0), 1, beta, &ring(1), &BuildOptions::dirichlet(1)).unwrap();
        check_weighted(&op, &spin_reference(beta));
    }
}

#[test]
fn white_noise_sweep_is_decreasing_and_convex() {
    let grid = [0.25, 0.5, 1.0, 2.0, 4.0];
    let sweep = kappa_sweep(
        |k| build_wn_operator(&constant(1, 8, Geometry::Absorbing, k), 2, &BuildOptions::dirichlet(8)),
        &grid,
        1e-11,
        50_000,
    )
    .unwrap();
    assert_eq!(sweep.direction, "non-increasing");
    assert!(sweep.first_differences.iter().all(|&d| d < 0.0));
    assert!(sweep.second_differences.iter().all(|&d| d >= -1e-8));
    for (pt, &k) in sweep.points.iter().zip(&grid) {
        let op = build_wn_operator(&constant(1, 8, Geometry::Absorbing, k), 2, &BuildOptions::dirichlet(8)).unwrap();
        assert!((pt.lambda_p - dense_top(&op) / 2.0).abs() < 1e-8);
    }
    // the kinetic form is linear in κ and bounded by 4dκ per walk
    for w in sweep.points.windows(2) {
        let bound = 2.0 * 4.0 * (w[1].kappa - w[0].kappa);
        assert!(2.0 * w[1].lambda_p >= 2.0 * w[0].lambda_p - bound);
    }
}

#[test]
fn sweep_rejects_unsorted_grid() {
    let r = kappa_sweep(|k| build_wn_operator(&constant(1, 2, Geometry::Absorbing, k), 1, &BuildOptions::dirichlet(2)), &[1.0, 0.5], 1e-10, 100);
    assert!(r.is_err());
}

#[test]
fn matvec_independent_of_thread_count() {
    let op = build_wn_operator(&constant(2, 4, Geometry::Absorbing, 0.9), 2, &BuildOptions::dirichlet(4)).unwrap();
    let x: Vec<f64> = (0..op.dim()).map(|i| ((i * 37 % 101) as f64).sin()).collect();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| top_eigenvalue(&op, 1e-10, 10_000).lambda_max.to_bits())
    };
    assert_eq!(run(1), run(4));
    let mut a = vec![0.0; op.dim()];
    op.matrix.matvec(&x, &mut a);
    assert!(a.iter().all(|v| v.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn assembled_matrices_are_symmetric(
        rates in prop::collection::vec(0.2f64..3.0, 18),
        p in 1usize..3,
        beta in -1.0f64..1.0,
    ) {
        let lattice = LatticeBox::new(2, 1, Geometry::Periodic).unwrap();
        let field = ConductanceField::from_rates(lattice.clone(), rates[..lattice.edge_count()].to_vec()).unwrap();
        let wn = build_wn_operator(&field, p, &BuildOptions::periodic()).unwrap();
        prop_assert_eq!(wn.matrix.max_asymmetry(), 0.0);
        prop_assert_eq!(wn.dim(), 9usize.pow(p as u32));
        let firw = build_firw_operator(&field, 1, 1, 0.7, &BuildOptions::periodic()).unwrap();
        prop_assert_eq!(firw.matrix.max_asymmetry(), 0.0);
        let env = LatticeBox::new(2, 1, Geometry::Periodic).unwrap();
        let spin = build_spinflip_operator(&field, 1, beta, &env, &BuildOptions::periodic()).unwrap();
        prop_assert_eq!(spin.matrix.max_asymmetry(), 0.0);
        prop_assert_eq!(spin.dim(), 512 * 9);
    }
}

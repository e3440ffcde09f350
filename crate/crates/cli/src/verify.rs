//! Fast invariant checks over every module, one line per check.

use pam_core::environments::{
    check_detailed_balance, monotone_coupling, EnvConfig, EnvKind, EnvTrajectory, EventKind,
};
use pam_core::feynman_kac::{solve_quenched, EnvSource, Initial, QuenchedOptions};
use pam_core::lattice::{discretize_field, generate_field, ConductanceField, FieldLaw, Geometry, LatticeBox};
use pam_core::variational::{
    build_firw_operator, build_iirw_operator, build_spinflip_operator, build_wn_operator, top_eigenvalue,
    BuildOptions,
};
use pam_core::walker::{girsanov_weight, simulate_path};
use serde_json::{json, Value};

use crate::{CliError, Output, Params};

type Check = (&'static str, Result<String, String>);

fn ensure(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn checks(seed: u64) -> pam_core::Result<Vec<Check>> {
    let mut out: Vec<Check> = Vec::new();
    let ring = LatticeBox::new(1, 2, Geometry::Periodic)?;

    let r = check_detailed_balance(0.5, &ring)?;
    out.push(("detailed_balance", ensure(r < 1e-12, format!("residual {r:e}"))));

    let law = FieldLaw::IidDiscrete {
        values: vec![0.2, 0.5, 1.0],
        probs: vec![0.3, 0.3, 0.4],
    };
    let line = LatticeBox::new(1, 6, Geometry::Absorbing)?;
    let field = generate_field(line.clone(), &law, seed)?;
    let (lo, hi) = field.bounds();
    out.push(("ellipticity", ensure(lo >= 0.2 && hi <= 1.0, format!("rates in [{lo}, {hi}]"))));

    let small = ConductanceField::constant(LatticeBox::new(1, 1, Geometry::Absorbing)?, 1.0)?;
    let ops = [
        build_wn_operator(&field, 2, &BuildOptions::dirichlet(4))?,
        build_firw_operator(&field, 1, 1, 0.5, &BuildOptions::dirichlet(4))?,
        build_iirw_operator(&small, 1, 1.0, 2, 2, &ring, &BuildOptions::dirichlet(1))?,
        build_spinflip_operator(&small, 1, 0.5, &ring, &BuildOptions::dirichlet(1))?,
    ];
    let worst = ops.iter().map(|o| o.matrix.max_asymmetry()).fold(0.0, f64::max);
    out.push(("operator_symmetry", ensure(worst == 0.0, format!("max asymmetry {worst:e}"))));

    let mut degenerate = BuildOptions::dirichlet(2);
    degenerate.zero_kinetic = true;
    let l = top_eigenvalue(&build_wn_operator(&field, 3, &degenerate)?, 1e-12, 10_000).lambda_p;
    out.push(("degenerate_exponent", ensure((l - 1.0).abs() < 1e-12, format!("lambda_3 {l}"))));

    let o = line.origin_site().unwrap_or(0);
    let coarse = discretize_field(&field, 2)?;
    let mut same = 0.0f64;
    let mut below = true;
    for i in 0..200 {
        let path = simulate_path(&field, o, 1.0, seed, i)?;
        same = same.max(girsanov_weight(&path, &field, &field)?.log_weight.abs());
        below &= girsanov_weight(&path, &field, &coarse)?.log_weight
            <= pam_core::walker::discretization_time_bound(&field, 2, 1.0) + 1e-12;
    }
    out.push(("girsanov", ensure(same == 0.0 && below, format!("identity weight {same}, bound held {below}"))));

    let traj = EnvTrajectory::record(EnvConfig::new(EnvKind::InfiniteRw { nu: 1.0 }, ring.clone(), seed), 5.0)?;
    let mut replay = traj.replay()?;
    let total0: f64 = replay.values().iter().sum();
    let mut conserved = true;
    while let Some(t) = replay.next_event_time() {
        replay.advance_to(t);
        conserved &= replay.values().iter().sum::<f64>() == total0;
    }
    let jumps = traj.events.iter().filter(|e| matches!(e.kind, EventKind::Jump { .. })).count();
    out.push(("conservation", ensure(conserved, format!("{jumps} jumps"))));

    let mut ordered = true;
    for k in 0..50 {
        let eta = vec![true; ring.site_count()];
        let zeta: Vec<bool> = (0..ring.site_count()).map(|x| (x + k as usize) % 2 == 0).collect();
        for (_, a, b) in monotone_coupling(&ring, 0.5, &eta, &zeta, 2.0, seed + k)? {
            ordered &= a.iter().zip(&b).all(|(x, y)| x >= y);
        }
    }
    out.push(("coupling_order", ensure(ordered, "50 trajectories".into())));

    let env = EnvTrajectory::record(EnvConfig::new(EnvKind::SpinFlip { beta: 0.5 }, LatticeBox::new(1, 6, Geometry::Periodic)?, seed), 2.0)?;
    let opts = QuenchedOptions {
        dt: 0.01,
        initial: Initial::Delta0,
        pocket: None,
        keep_grid: false,
    };
    let sol = solve_quenched(&field, EnvSource::Trajectory(&env), 2.0, &opts)?;
    let positive = sol.log_origin.iter().all(|v| v.is_finite()) && sol.final_u.iter().all(|v| *v >= 0.0);
    out.push(("positivity", ensure(positive, format!("log u(0,2) = {}", sol.log_origin.last().unwrap_or(&0.0)))));
    Ok(out)
}

pub(crate) fn run(p: &Params, echo: Value) -> Result<Output, CliError> {
    let results = checks(p.seed())?;
    let mut failed = Vec::new();
    let mut rows = Vec::new();
    for (name, r) in &results {
        let (ok, detail) = match r {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        if !ok {
            failed.push(*name);
        }
        rows.push(json!({ "check": name, "ok": ok, "detail": detail }));
    }
    let mut main = serde_json::to_string_pretty(&json!({ "config": echo, "checks": rows })).expect("serializable");
    main.push('\n');
    Ok(Output {
        main,
        files: Vec::new(),
        failure: (!failed.is_empty()).then(|| format!("failed checks: {}", failed.join(", "))),
    })
}

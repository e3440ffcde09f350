use std::str::FromStr;

use pam_core::environments::{EnvConfig, EnvKind, EnvTrajectory};
use pam_core::feynman_kac::{
    annealed_moment, green_function, quenched_log_series, solve_quenched, AnnealedDynamics, EnvSource, Initial,
    MomentConfig, MomentEstimate, QuenchedOptions, QuenchedRunConfig, WOptions,
};
use pam_core::lattice::{
    generate_field, verify_clustering, ConductanceField, FieldLaw, Geometry, LatticeBox, PlantedPocket, Pocket,
};
use pam_core::lyapunov::{
    estimate_exponent, estimate_quenched, probe_annealed_sup, probe_decorated_gap, probe_init_invariance,
    probe_quenched_lower, AnnealedProbeConfig, InitProbeConfig, Verdict,
};
use pam_core::variational::{
    build_firw_operator, build_iirw_operator, build_spinflip_operator, build_wn_operator, kappa_sweep, top_eigenvalue,
    Boundary, BuildOptions, OperatorSpec,
};
use serde_json::{json, Value};

use crate::{read_file, verify, CliError, Output, Params};

pub(crate) fn dispatch(name: &str, p: &Params) -> Result<Output, CliError> {
    match name {
        "gen-field" => gen_field(p),
        "verify-cluster" => verify_cluster(p),
        "simulate-u" => simulate_u(p),
        "moment" => moment(p),
        "variational" => variational(p),
        "green" => green(p),
        "quenched" => quenched(p),
        "probe" => probe(p),
        "verify" => verify::run(p, echo(name, p)),
        other => Err(CliError::Config(format!("unknown command {other}"))),
    }
}

pub(crate) fn echo(command: &str, p: &Params) -> Value {
    json!({ "command": command, "version": env!("CARGO_PKG_VERSION"), "params": p })
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values always serialize");
    s.push('\n');
    s
}

/// CSV body preceded by a `#` line carrying the configuration.
fn csv_text(echo: &Value, body: &str) -> String {
    format!("# {echo}\n{body}")
}

fn output(main: String) -> Output {
    Output {
        main,
        files: Vec::new(),
        failure: None,
    }
}

fn config_err(name: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {reason}"))
}

fn geometry(s: &Option<String>, name: &str, default: Geometry) -> Result<Geometry, CliError> {
    s.as_deref().map_or(Ok(default), |g| Geometry::from_str(g).map_err(|e| config_err(name, e)))
}

fn lattice(p: &Params) -> Result<LatticeBox, CliError> {
    Ok(LatticeBox::new(p.dim(), p.radius(), geometry(&p.geometry, "geometry", Geometry::Absorbing)?)?)
}

fn parse_plant(s: &str) -> Result<PlantedPocket, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || config_err("plant", format!("`{s}` is not `x[,y..]:radius:value`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let center = parts[0]
        .split(',')
        .map(|c| c.trim().parse::<i64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| bad())?;
    Ok(PlantedPocket {
        center,
        radius: parts[1].trim().parse().map_err(|_| bad())?,
        value: parts[2].trim().parse().map_err(|_| bad())?,
    })
}

fn field_law(p: &Params) -> Result<FieldLaw, CliError> {
    let values = || Params::required(&p.values, "values");
    let probs = || Params::required(&p.probs, "probs");
    match p.law().as_str() {
        "constant" => Ok(FieldLaw::Constant { kappa: p.kappa() }),
        "iid" => Ok(FieldLaw::IidDiscrete {
            values: values()?,
            probs: probs()?,
        }),
        "clustered" => Ok(FieldLaw::Clustered {
            values: values()?,
            probs: probs()?,
            pockets: p.plant.iter().flatten().map(|s| parse_plant(s)).collect::<Result<_, _>>()?,
        }),
        other => Err(config_err("law", format!("unknown law `{other}`"))),
    }
}

fn field(p: &Params) -> Result<ConductanceField, CliError> {
    match &p.field {
        Some(path) => Ok(ConductanceField::from_csv(&read_file(path)?)?),
        None => Ok(generate_field(lattice(p)?, &field_law(p)?, p.seed())?),
    }
}

fn env_kind(p: &Params) -> Result<EnvKind, CliError> {
    Ok(match p.dynamics().as_str() {
        "white_noise" => EnvKind::WhiteNoise,
        "finite_rw" => EnvKind::FiniteRw { n: p.n(), rho: p.rho() },
        "infinite_rw" => EnvKind::InfiniteRw { nu: p.nu() },
        "spin_flip" => EnvKind::SpinFlip { beta: p.beta() },
        "frozen" => EnvKind::Frozen { value: p.value() },
        other => return Err(config_err("dynamics", format!("unknown dynamics `{other}`"))),
    })
}

fn env_config(p: &Params, dim: usize) -> Result<EnvConfig, CliError> {
    let env_box = LatticeBox::new(dim, p.env_radius(), geometry(&p.env_geometry, "env_geometry", Geometry::Periodic)?)?;
    let cfg = EnvConfig::new(env_kind(p)?, env_box, p.seed());
    cfg.validate()?;
    Ok(cfg)
}

fn annealed_dynamics(p: &Params) -> Result<AnnealedDynamics, CliError> {
    Ok(match p.dynamics().as_str() {
        "white_noise" => AnnealedDynamics::WhiteNoise,
        "finite_rw" => AnnealedDynamics::FiniteRw { n: p.n(), rho: p.rho() },
        "infinite_rw" => AnnealedDynamics::InfiniteRw {
            nu: p.nu(),
            w: WOptions {
                radius: p.w_radius(),
                dt: p.w_dt(),
                keep_grid: false,
            },
        },
        other => {
            return Err(config_err(
                "dynamics",
                format!("`{other}` has no annealed representation; use white_noise, finite_rw or infinite_rw"),
            ))
        }
    })
}

fn initial(p: &Params, default: Initial) -> Result<Initial, CliError> {
    match p.initial.as_deref() {
        None => Ok(default),
        Some("ones") => Ok(Initial::Ones),
        Some("delta0") => Ok(Initial::Delta0),
        Some(other) => Err(config_err("initial", format!("`{other}` is not ones or delta0"))),
    }
}

fn origin_pocket(p: &Params) -> Option<Pocket> {
    p.pocket_radius.map(|r| Pocket::new(vec![0; p.dim()], r))
}

fn gen_field(p: &Params) -> Result<Output, CliError> {
    let f = field(p)?;
    Ok(output(csv_text(&echo("gen-field", p), &f.to_csv())))
}

fn verify_cluster(p: &Params) -> Result<Output, CliError> {
    let f = field(p)?;
    let cluster = verify_clustering(&f, p.kappa(), p.delta(), p.cluster_radius())?;
    let failure = cluster
        .is_none()
        .then(|| format!("no pocket within {} of {} of radius {}", p.delta(), p.kappa(), p.cluster_radius()));
    let main = json_text(&json!({
        "config": echo("verify-cluster", p),
        "found": cluster.is_some(),
        "cluster": cluster,
    }));
    Ok(Output {
        main,
        files: Vec::new(),
        failure,
    })
}

fn simulate_u(p: &Params) -> Result<Output, CliError> {
    let f = field(p)?;
    let env = env_config(p, f.lattice().dim())?;
    let horizon = p.t();
    let opts = QuenchedOptions {
        dt: p.dt(),
        initial: initial(p, Initial::Delta0)?,
        pocket: origin_pocket(p),
        keep_grid: false,
    };
    let traj = match env.kind {
        EnvKind::WhiteNoise => None,
        _ => Some(EnvTrajectory::record(env.clone(), horizon)?),
    };
    let source = match &traj {
        Some(t) => EnvSource::Trajectory(t),
        None => EnvSource::WhiteNoise { seed: p.seed() },
    };
    let sol = solve_quenched(&f, source, horizon, &opts)?;
    let e = echo("simulate-u", p);
    let samples: Vec<Value> = p
        .t_grid()
        .into_iter()
        .filter(|&t| t <= horizon)
        .map(|t| json!({ "t": t, "log_u_origin": sol.log_origin_at(t) }))
        .collect();
    let main = json_text(&json!({
        "config": e,
        "horizon": horizon,
        "dt": sol.dt,
        "log_u_origin": sol.log_origin.last(),
        "samples": samples,
        "events": traj.as_ref().map(|t| t.events.len()),
    }));
    let mut files = Vec::new();
    if let Some(path) = &p.csv {
        let mut body = String::from("t,log_u_origin\n");
        for (t, v) in sol.times.iter().zip(&sol.log_origin) {
            body.push_str(&format!("{t},{v}\n"));
        }
        files.push((path.clone(), csv_text(&e, &body)));
    }
    if let (Some(path), Some(t)) = (&p.events, &traj) {
        files.push((path.clone(), csv_text(&e, &t.events_csv())));
    }
    Ok(Output {
        main,
        files,
        failure: None,
    })
}

fn moment(p: &Params) -> Result<Output, CliError> {
    let f = field(p)?;
    let dynamics = annealed_dynamics(p)?;
    let init = initial(p, Initial::Ones)?;
    let series: Vec<MomentEstimate> = p
        .t_grid()
        .iter()
        .map(|&t| {
            let cfg = MomentConfig {
                p: p.p(),
                horizon: t,
                replicas: p.replicas(),
                seed: p.seed(),
                initial: init,
                pocket: origin_pocket(p),
            };
            annealed_moment(&f, &dynamics, &cfg)
        })
        .collect::<Result<_, _>>()?;
    let estimate = estimate_exponent(&series, p.seed())?;
    let e = echo("moment", p);
    let mut files = Vec::new();
    if let Some(path) = &p.csv {
        let mut body = format!("{},seed,replica_first,replica_last\n", MomentEstimate::CSV_HEADER);
        for m in &series {
            body.push_str(&format!("{},{},0,{}\n", m.csv_row(), m.seed, m.replicas - 1));
        }
        files.push((path.clone(), csv_text(&e, &body)));
    }
    let main = json_text(&json!({ "config": e, "moments": series, "estimate": estimate }));
    Ok(Output {
        main,
        files,
        failure: None,
    })
}

fn boundary(p: &Params) -> Result<Boundary, CliError> {
    match p.boundary.as_deref().unwrap_or("dirichlet") {
        "dirichlet" => Ok(Boundary::Dirichlet),
        "periodic" => Ok(Boundary::Periodic),
        other => Err(config_err("boundary", format!("`{other}` is not dirichlet or periodic"))),
    }
}

fn build_operator(p: &Params, field: &ConductanceField, opts: &BuildOptions) -> pam_core::Result<OperatorSpec> {
    let env_box = || LatticeBox::new(p.dim(), p.env_radius.unwrap_or(1), Geometry::Periodic);
    match p.dynamics().as_str() {
        "white_noise" => build_wn_operator(field, p.p(), opts),
        "finite_rw" => build_firw_operator(field, p.p(), p.n(), p.rho(), opts),
        "infinite_rw" => build_iirw_operator(field, p.p(), p.nu(), p.potential_cap(), p.cap(), &env_box()?, opts),
        "spin_flip" => build_spinflip_operator(field, p.p(), p.beta(), &env_box()?, opts),
        other => Err(pam_core::Error::InvalidParameter {
            name: "dynamics",
            reason: format!("no operator for `{other}`"),
        }),
    }
}

fn variational(p: &Params) -> Result<Output, CliError> {
    let b = boundary(p)?;
    let opts = BuildOptions {
        boundary: b,
        radius: p.radius(),
        zero_kinetic: p.degenerate(),
        drop_potential: false,
        max_dim: p.max_dim(),
    };
    let geometry = match b {
        Boundary::Dirichlet => Geometry::Absorbing,
        Boundary::Periodic => Geometry::Periodic,
    };
    let constant = |kappa: f64| ConductanceField::constant(LatticeBox::new(p.dim(), p.radius(), geometry)?, kappa);
    let e = echo("variational", p);
    if p.sweep() || p.kappa_grid.is_some() {
        let sweep = kappa_sweep(|k| build_operator(p, &constant(k)?, &opts), &p.kappa_grid(), p.tol(), p.max_iter())?;
        let failure = sweep
            .points
            .iter()
            .find(|pt| pt.residual > p.tol() * pt.lambda_p.abs().max(1.0) * p.p() as f64)
            .map(|pt| format!("eigensolver did not converge at kappa={}", pt.kappa));
        return Ok(Output {
            main: csv_text(&e, &sweep.to_csv()),
            files: Vec::new(),
            failure,
        });
    }
    let f = match &p.field {
        Some(_) => field(p)?,
        None => constant(p.kappa())?,
    };
    let op = build_operator(p, &f, &opts)?;
    let r = top_eigenvalue(&op, p.tol(), p.max_iter());
    let mut files = Vec::new();
    if let Some(path) = &p.export {
        files.push((path.clone(), op.to_coo_text()));
    }
    let failure = (!r.converged).then(|| format!("eigensolver stopped with residual {}", r.residual));
    let main = json_text(&json!({
        "config": e,
        "state_space": op.state_space,
        "dim": op.dim(),
        "nnz": op.matrix.nnz(),
        "warnings": op.warnings,
        "eigen": r,
    }));
    Ok(Output { main, files, failure })
}

fn green(p: &Params) -> Result<Output, CliError> {
    let g = green_function(p.dim(), p.radius())?;
    let order = p.p.unwrap_or(1) as f64;
    let main = json_text(&json!({
        "config": echo("green", p),
        "dim": g.dim,
        "g0": g.value,
        "one_over_g0": g.value.map(|v| 1.0 / v),
        "divergent": g.value.is_none(),
        "p": order,
        "wbar_limit": g.wbar_limit(order),
        "wbar_infinite": g.wbar_limit(order).is_none(),
        "method": g.method,
        "half_radius_value": g.half_radius_value,
    }));
    Ok(output(main))
}

fn run_config(p: &Params) -> QuenchedRunConfig {
    QuenchedRunConfig {
        t_grid: p.t_grid(),
        dt: p.dt(),
        realizations: p.realizations(),
        seed: p.seed(),
        pocket: origin_pocket(p),
    }
}

fn quenched(p: &Params) -> Result<Output, CliError> {
    let f = field(p)?;
    let env = env_config(p, f.lattice().dim())?;
    let run = run_config(p);
    let logs = quenched_log_series(&f, &env, &run)?;
    let estimate = estimate_quenched(&run.t_grid, &logs, run.seed)?;
    let e = echo("quenched", p);
    let mut files = Vec::new();
    if let Some(path) = &p.csv {
        let mut body = String::from("realization,seed,t,log_u_origin\n");
        for (r, row) in logs.iter().enumerate() {
            for (t, v) in run.t_grid.iter().zip(row) {
                body.push_str(&format!("{r},{},{t},{v}\n", run.seed));
            }
        }
        files.push((path.clone(), csv_text(&e, &body)));
    }
    let main = json_text(&json!({ "config": e, "estimate": estimate }));
    Ok(Output {
        main,
        files,
        failure: None,
    })
}

fn probe(p: &Params) -> Result<Output, CliError> {
    let statement = Params::required(&p.statement, "statement")?;
    let result = match statement.as_str() {
        "annealed_sup" => {
            let cfg = AnnealedProbeConfig {
                p: p.p(),
                dynamics: annealed_dynamics(p)?,
                t_grid: p.t_grid(),
                replicas: p.replicas(),
                seed: p.seed(),
                pocket_radius: p.pocket_radius.unwrap_or(3),
                tolerance: p.tolerance(),
            };
            probe_annealed_sup(&field(p)?, &cfg)?
        }
        "quenched_lower" => {
            let f = field(p)?;
            probe_quenched_lower(&f, &env_config(p, f.lattice().dim())?, &run_config(p))?
        }
        "decorated_gap" => {
            let l = lattice(p)?;
            probe_decorated_gap(p.kbar1(), p.kbar2(), &l, &env_config(p, l.dim())?, &run_config(p))?
        }
        "init_invariance" => {
            let cfg = InitProbeConfig {
                p: p.p(),
                dynamics: annealed_dynamics(p)?,
                t_grid: p.t_grid(),
                replicas: p.replicas(),
                seed: p.seed(),
            };
            probe_init_invariance(&field(p)?, &cfg)?
        }
        other => return Err(config_err("statement", format!("unknown statement `{other}`"))),
    };
    let failure = (result.verdict == Verdict::Fail).then(|| format!("{statement}: verdict fail"));
    let main = json_text(&json!({ "config": echo("probe", p), "probe": result }));
    Ok(Output {
        main,
        files: Vec::new(),
        failure,
    })
}

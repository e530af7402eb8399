use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use bea_core::analysis::{
    fit_order_study, heavy_ball_equiv, order_study_row, perturbed_one_norm, step_count,
    tail_mean_grad_one_norm, trajectory_error,
};
use bea_core::bounds::{
    check_global_bound, estimate_primitives, global_constants, lemma_chain_rmsprop_out,
};
use bea_core::discrete_optim::{run, Hyperparameters, Variant};
use bea_core::linalg::two_norm;
use bea_core::losses::{fd_validate, LossSequence, DEFAULT_FD_STEP};
use bea_core::modified_flow::{
    bias_general, integrate, penalty_curve, Baseline, GridSolution, RhsSpec,
};
use bea_core::{Matrix, Point};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Config, Kind, LossConfig};
use crate::error::{CliError, CliResult};
use crate::svg::{Chart, Series};

/// Gradient tolerance for `validate`, relative with a unit floor.
const GRAD_TOLERANCE: f64 = 1e-5;
const HESS_TOLERANCE: f64 = 1e-4;

pub fn dispatch(cfg: &Config) -> CliResult<()> {
    fs::create_dir_all(&cfg.output.dir)?;
    match cfg.kind.expect("kind is resolved on load") {
        Kind::Run => cmd_run(cfg),
        Kind::OrderStudy => cmd_order_study(cfg),
        Kind::BiasPlot => cmd_bias_plot(cfg),
        Kind::PenaltyCurve => cmd_penalty_curve(cfg),
        Kind::HeavyBallLimit => cmd_heavy_ball_limit(cfg),
        Kind::BoundCheck => cmd_bound_check(cfg),
        Kind::Validate => cmd_validate(cfg),
    }
}

/// Writes `name` under the output directory: the config echo, then `body`.
fn write_csv(
    cfg: &Config,
    name: &str,
    body: impl FnOnce(&mut Vec<u8>) -> io::Result<()>,
) -> CliResult<PathBuf> {
    let mut buf = cfg.echo().into_bytes();
    body(&mut buf)?;
    write_file(&cfg.output.dir, name, &buf)
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes)?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn start(cfg: &Config) -> CliResult<Point> {
    Ok(Point::new(cfg.experiment.start.clone())?)
}

fn with_beta(hyper: &Hyperparameters, beta: f64) -> CliResult<Hyperparameters> {
    let hp = Hyperparameters { beta, ..*hyper };
    hp.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(hp)
}

fn full_hess(seq: &dyn LossSequence, theta: &[f64]) -> Matrix {
    let (m, p) = (seq.batch_count(), seq.dimension());
    let mut rows = vec![vec![0.0; p]; p];
    for b in 0..m {
        let h = seq.batch_hess(b, theta);
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += h[(i, j)] / m as f64;
            }
        }
    }
    Matrix::from_rows(&rows).expect("square by construction")
}

fn flow_spec(cfg: &Config, variant: Variant, name: &str) -> CliResult<RhsSpec> {
    let order = cfg.flow_order(name)?;
    Ok(match variant {
        Variant::Gd => RhsSpec::Baseline(Baseline::ModifiedGd),
        Variant::HeavyBall => RhsSpec::Baseline(Baseline::ModifiedHeavyBall),
        _ => RhsSpec::Adaptive(order),
    })
}

fn points_csv(points: &[Point], h: f64, w: &mut Vec<u8>) -> io::Result<()> {
    let p = points.first().map_or(0, |x| x.dim());
    write!(w, "step,t")?;
    for i in 1..=p {
        write!(w, ",theta_{i}")?;
    }
    writeln!(w)?;
    for (n, x) in points.iter().enumerate() {
        write!(w, "{n},{}", n as f64 * h)?;
        for v in x.iter() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn flow_series(flow: &GridSolution) -> Vec<(f64, f64)> {
    flow.states.iter().map(|s| (s[0], s[1])).collect()
}

/// Both branches of `theta_1 theta_2 = c` across `[lo, hi]`.
fn hyperbola(c: f64, lo: f64, hi: f64) -> Vec<Vec<(f64, f64)>> {
    let branch = |a: f64, b: f64| -> Vec<(f64, f64)> {
        (0..=400)
            .map(|i| a + (b - a) * i as f64 / 400.0)
            .filter(|x| x.abs() > 1e-3)
            .map(|x| (x, c / x))
            .collect()
    };
    let mut out = Vec::new();
    if hi > 0.0 {
        out.push(branch(lo.max(1e-3), hi));
    }
    if lo < 0.0 {
        out.push(branch(lo, hi.min(-1e-3)));
    }
    out
}

fn cmd_run(cfg: &Config) -> CliResult<()> {
    let seq = cfg.loss()?;
    let hyper = cfg.hyper()?;
    let e = &cfg.experiment;
    let tail = if e.tail == 0 {
        (e.steps / 2).max(1)
    } else {
        e.tail
    };
    let mut series = Vec::new();
    let mut summary: Vec<String> = Vec::new();
    for (i, &beta) in cfg.betas().iter().enumerate() {
        let hp = with_beta(&hyper, beta)?;
        let traj = match run(seq.as_ref(), &hp, start(cfg)?, e.steps) {
            Ok(t) => t,
            Err(bea_core::Error::BlowUp {
                last_finite,
                partial,
            }) => {
                write_csv(cfg, &format!("trajectory_{i}.csv"), |w| {
                    writeln!(w, "# blow-up: last finite iterate is step {last_finite}")?;
                    points_csv(&partial, hp.h, w)
                })?;
                return Err(bea_core::Error::BlowUp {
                    last_finite,
                    partial,
                }
                .into());
            }
            Err(err) => return Err(err.into()),
        };
        write_csv(cfg, &format!("trajectory_{i}.csv"), |w| traj.write_csv(w))?;
        let label = format!("beta = {beta}");
        if seq.dimension() == 2 {
            series.push(Series::new(
                label.clone(),
                traj.points.iter().map(|p| (p[0], p[1])).collect(),
            ));
        }
        if let Some(name) = &e.flow {
            let flow = integrate(
                flow_spec(cfg, hp.variant, name)?,
                seq.as_ref(),
                &hp,
                start(cfg)?,
                e.steps,
                e.substeps,
            )?;
            write_csv(cfg, &format!("flow_{i}.csv"), |w| flow.write_csv(w))?;
            if seq.dimension() == 2 {
                series.push(Series::new(
                    format!("{label}, {name} flow"),
                    flow_series(&flow),
                ));
            }
        }
        let last = traj.points.last().expect("trajectory includes the start");
        let coords: Vec<String> = last.iter().map(|x| x.to_string()).collect();
        summary.push(format!(
            "{beta},{},{},{}",
            coords.join(","),
            seq.full_eval(last),
            tail_mean_grad_one_norm(seq.as_ref(), &traj, tail)
        ));
    }
    write_csv(cfg, "summary.csv", |w| {
        writeln!(w, "# tail = {tail} iterates")?;
        write!(w, "beta")?;
        for i in 1..=seq.dimension() {
            write!(w, ",final_theta_{i}")?;
        }
        writeln!(w, ",final_loss,tail_mean_grad_one_norm")?;
        for row in &summary {
            writeln!(w, "{row}")?;
        }
        Ok(())
    })?;
    if seq.dimension() == 2 {
        if let LossConfig::Bilinear { x, y } = &cfg.loss {
            let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
            let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v), b.max(v))
            });
            for branch in hyperbola(y / x, lo - 0.1 * (hi - lo), hi + 0.1 * (hi - lo)) {
                series.push(Series::reference("minima", branch));
            }
        }
        let chart = Chart {
            title: format!("{} on {}", hyper.variant, seq.name()),
            x_label: "theta_1".into(),
            y_label: "theta_2".into(),
            series,
            ..Chart::default()
        };
        write_file(
            &cfg.output.dir,
            "trajectories.svg",
            chart.render().as_bytes(),
        )?;
    }
    Ok(())
}

fn cmd_order_study(cfg: &Config) -> CliResult<()> {
    let seq = cfg.loss()?;
    let hyper = cfg.hyper()?;
    let e = &cfg.experiment;
    let theta0 = start(cfg)?;
    let rows = e
        .h_sweep
        .par_iter()
        .map(|&h| order_study_row(seq.as_ref(), &hyper, &theta0, e.horizon, h, e.substeps))
        .collect::<bea_core::Result<Vec<_>>>()?;
    for (i, row) in rows.iter().enumerate() {
        write_csv(cfg, &format!("errors_{i}_leading.csv"), |w| {
            row.leading.write_csv(w)
        })?;
        write_csv(cfg, &format!("errors_{i}_first_order.csv"), |w| {
            row.first_order.write_csv(w)
        })?;
    }
    let study = fit_order_study(rows)?;
    write_csv(cfg, "order_study.csv", |w| {
        writeln!(w, "# slope_leading = {}", study.leading.slope)?;
        writeln!(w, "# slope_first_order = {}", study.first_order.slope)?;
        writeln!(w, "h,steps,max_error_leading,max_error_first_order")?;
        for r in &study.rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.h,
                step_count(e.horizon, r.h),
                r.leading.max,
                r.first_order.max
            )?;
        }
        Ok(())
    })?;
    write_csv(cfg, "fit_leading.csv", |w| study.leading.write_csv(w))?;
    write_csv(cfg, "fit_first_order.csv", |w| {
        study.first_order.write_csv(w)
    })?;
    println!(
        "fitted slopes: leading {:.4}, first order {:.4}",
        study.leading.slope, study.first_order.slope
    );

    let anchor = |fit: &bea_core::analysis::OrderFit, k: i32| {
        let (h0, e0) = fit.pairs[0];
        fit.pairs
            .iter()
            .map(|(h, _)| (*h, e0 * (h / h0).powi(k)))
            .collect::<Vec<_>>()
    };
    let chart = Chart {
        title: format!(
            "{} on {}: max error against step size",
            hyper.variant,
            seq.name()
        ),
        x_label: "h".into(),
        y_label: "max_n |error|".into(),
        log_x: true,
        log_y: true,
        series: vec![
            Series::new("leading flow", study.leading.pairs.clone()),
            Series::new("first-order flow", study.first_order.pairs.clone()),
            Series::reference("slope 1", anchor(&study.leading, 1)),
            Series::reference("slope 2", anchor(&study.first_order, 2)),
        ],
        window: None,
    };
    write_file(
        &cfg.output.dir,
        "order_study.svg",
        chart.render().as_bytes(),
    )?;
    Ok(())
}

/// Bias vector, its norm and the perturbed one-norm at one iterate.
type BiasRow = (Vec<f64>, f64, f64);

fn cmd_bias_plot(cfg: &Config) -> CliResult<()> {
    let seq = cfg.loss()?;
    let hyper = cfg.hyper()?;
    if !hyper.variant.is_adaptive() {
        return Err(CliError::Config(format!(
            "bias-plot needs an adaptive variant, got {}",
            hyper.variant
        )));
    }
    let traj = run(seq.as_ref(), &hyper, start(cfg)?, cfg.experiment.steps)?;
    let p = seq.dimension();
    let mut rows = Vec::with_capacity(traj.len());
    for x in &traj.points {
        let g = seq.full_grad(x);
        let bias = bias_general(&g, &full_hess(seq.as_ref(), x), &hyper)?;
        rows.push((
            bias.clone(),
            two_norm(&bias),
            perturbed_one_norm(&g, hyper.eps),
        ));
    }
    write_csv(cfg, "bias.csv", |w| {
        write!(w, "step,t")?;
        for i in 1..=p {
            write!(w, ",bias_{i}")?;
        }
        writeln!(w, ",bias_norm,grad_perturbed_one_norm")?;
        for (n, (b, norm, pon)) in rows.iter().enumerate() {
            write!(w, "{n},{}", n as f64 * hyper.h)?;
            for v in b {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{norm},{pon}")?;
        }
        Ok(())
    })?;
    let series = |f: &dyn Fn(&BiasRow) -> f64| {
        rows.iter()
            .enumerate()
            .map(|(n, r)| (n as f64, f(r)))
            .collect::<Vec<_>>()
    };
    for (name, title, values) in [
        ("bias_norm.svg", "bias norm along the run", series(&|r| r.1)),
        (
            "perturbed_norm.svg",
            "perturbed one-norm of the gradient",
            series(&|r| r.2),
        ),
    ] {
        let chart = Chart {
            title: title.into(),
            x_label: "step".into(),
            y_label: title.into(),
            log_y: true,
            series: vec![Series::new(format!("{}", hyper.variant), values)],
            ..Chart::default()
        };
        write_file(&cfg.output.dir, name, chart.render().as_bytes())?;
    }
    Ok(())
}

fn cmd_penalty_curve(cfg: &Config) -> CliResult<()> {
    let o = &cfg.optimizer;
    let e = &cfg.experiment;
    if e.points < 2 || !(e.x_max > 0.0) {
        return Err(CliError::Config(
            "penalty-curve needs points >= 2 and x_max > 0".into(),
        ));
    }
    let rhos = if e.rho_sweep.is_empty() {
        vec![o.rho]
    } else {
        e.rho_sweep.clone()
    };
    let xs: Vec<f64> = (0..e.points)
        .map(|i| e.x_max * i as f64 / (e.points - 1) as f64)
        .collect();
    let curves = rhos
        .iter()
        .map(|&rho| {
            penalty_curve(o.beta, rho, o.eps, &xs).map_err(|err| CliError::Config(err.to_string()))
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_csv(cfg, "penalty_curve.csv", |w| {
        write!(w, "x")?;
        for rho in &rhos {
            write!(w, ",rho_{rho}")?;
        }
        writeln!(w)?;
        for (k, x) in xs.iter().enumerate() {
            write!(w, "{x}")?;
            for c in &curves {
                write!(w, ",{}", c[k].1)?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    let chart = Chart {
        title: format!("implicit penalty, beta = {}, eps = {}", o.beta, o.eps),
        x_label: "|gradient component|".into(),
        y_label: "penalty".into(),
        series: rhos
            .iter()
            .zip(curves)
            .map(|(rho, c)| Series::new(format!("rho = {rho}"), c))
            .collect(),
        ..Chart::default()
    };
    write_file(
        &cfg.output.dir,
        "penalty_curve.svg",
        chart.render().as_bytes(),
    )?;
    Ok(())
}

fn cmd_heavy_ball_limit(cfg: &Config) -> CliResult<()> {
    let seq = cfg.loss()?;
    let hyper = Hyperparameters {
        variant: Variant::AdamEpsIn,
        ..cfg.hyper()?
    };
    let e = &cfg.experiment;
    let mut reports = Vec::new();
    for &eps in &e.eps_sweep {
        let hp = Hyperparameters { eps, ..hyper };
        hp.validate()
            .map_err(|err| CliError::Config(err.to_string()))?;
        let rep = heavy_ball_equiv(seq.as_ref(), &hp, start(cfg)?, e.window, e.burn_in)?;
        if !rep.valid {
            println!(
                "warning: eps = {eps} is not large against the squared gradients ({})",
                rep.max_grad_sq
            );
        }
        reports.push(rep);
    }
    write_csv(cfg, "heavy_ball.csv", |w| {
        writeln!(
            w,
            "eps,effective_step,burn_in,window,max_deviation,relative_deviation,max_grad_sq,valid"
        )?;
        for r in &reports {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.eps,
                r.effective_step,
                r.burn_in,
                r.window,
                r.max_deviation,
                r.relative_deviation,
                r.max_grad_sq,
                r.valid
            )?;
        }
        Ok(())
    })?;
    if let Some(last) = reports.last() {
        write_csv(cfg, "adam_large_eps.csv", |w| last.adam.write_csv(w))?;
        write_csv(cfg, "heavy_ball_trajectory.csv", |w| {
            last.heavy_ball.write_csv(w)
        })?;
    }
    let chart = Chart {
        title: "Adam against heavy-ball momentum".into(),
        x_label: "eps".into(),
        y_label: "sup deviation after burn-in".into(),
        log_x: true,
        log_y: true,
        series: vec![Series::new(
            "max deviation",
            reports.iter().map(|r| (r.eps, r.max_deviation)).collect(),
        )],
        window: None,
    };
    write_file(&cfg.output.dir, "heavy_ball.svg", chart.render().as_bytes())?;
    Ok(())
}

fn cmd_bound_check(cfg: &Config) -> CliResult<()> {
    let seq = cfg.loss()?;
    let hyper = cfg.hyper()?;
    let e = &cfg.experiment;
    let half_width = match (e.half_width, &cfg.loss) {
        (Some(w), _) => w,
        (None, LossConfig::Quadratic { bound_box, .. }) => *bound_box,
        (None, _) => {
            return Err(CliError::Config(
                "bound-check needs half_width for this loss".into(),
            ))
        }
    };
    if hyper.variant != Variant::RmsPropEpsOut && e.c_local.is_none() {
        return Err(CliError::Config(format!(
            "the local-constant chain exists for rmsprop-eps-out only; supply c_local for {}",
            hyper.variant
        )));
    }
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for (i, &h) in e.h_sweep.iter().enumerate() {
        let hp = Hyperparameters { h, ..hyper };
        let n = step_count(e.horizon, h);
        let discrete = run(seq.as_ref(), &hp, start(cfg)?, n)?;
        let flow = integrate(
            RhsSpec::Adaptive(bea_core::modified_flow::Order::FirstOrder),
            seq.as_ref(),
            &hp,
            start(cfg)?,
            n,
            e.substeps,
        )?;
        let est = estimate_primitives(seq.as_ref(), &flow, half_width)?;
        let global = match e.c_local {
            Some(c) => {
                let g = global_constants(hp.variant, &est.prim, c)?;
                write_file(
                    &cfg.output.dir,
                    &format!("constants_{i}.txt"),
                    format!(
                        "c_localerrorbound = {c}\nd1 = {}\nd2 = {}\nd3 = {}\n",
                        g.d1, g.d2, g.d3
                    )
                    .as_bytes(),
                )?;
                g
            }
            None => {
                let chain = lemma_chain_rmsprop_out(&est.prim)?;
                write_file(
                    &cfg.output.dir,
                    &format!("constants_{i}.txt"),
                    chain.report().as_bytes(),
                )?;
                chain.global
            }
        };
        let errors = trajectory_error(&discrete, &flow)?;
        let check = check_global_bound(&errors, &global, h);
        write_csv(cfg, &format!("bound_{i}.csv"), |w| {
            writeln!(w, "n,t,error,value_bound")?;
            for (k, err) in errors.errors.iter().enumerate() {
                let t = k as f64 * h;
                writeln!(
                    w,
                    "{k},{t},{err},{}",
                    global.d1 * (global.d2 * t).exp() * h * h
                )?;
            }
            Ok(())
        })?;
        if !check.holds() {
            failed.push(h);
        }
        let p = &est.prim;
        lines.push(format!(
            "{h},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            est.grade.as_str(),
            p.m1,
            p.m2,
            p.m3,
            p.m4,
            p.r.map_or("".to_string(), |r| r.to_string()),
            p.d1,
            p.d2,
            p.d3,
            global.d1,
            global.d2,
            global.d3,
            check.worst_value_ratio,
            check.holds()
        ));
    }
    write_csv(cfg, "bound_check.csv", |w| {
        writeln!(
            w,
            "h,grade,m1,m2,m3,m4,r,d1_traj,d2_traj,d3_traj,d1,d2,d3,worst_value_ratio,holds"
        )?;
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    })?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "global bound violated for h in {failed:?}"
        )))
    }
}

fn cmd_validate(cfg: &Config) -> CliResult<()> {
    let e = &cfg.experiment;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for seq in cfg.losses()? {
        for k in 0..e.probes {
            let theta: Vec<f64> = (0..seq.dimension())
                .map(|_| rng.gen_range(-e.probe_box..=e.probe_box))
                .collect();
            let rep = fd_validate(seq.as_ref(), &theta, DEFAULT_FD_STEP)?;
            let pass = rep.max_grad_deviation <= GRAD_TOLERANCE
                && rep.max_hess_deviation <= HESS_TOLERANCE
                && rep.max_hess_asymmetry <= 1e-12;
            if !pass {
                failed.push(format!("{} probe {k}", seq.name()));
            }
            rows.push(format!(
                "{},{k},{},{},{},{pass}",
                seq.name(),
                rep.max_grad_deviation,
                rep.max_hess_deviation,
                rep.max_hess_asymmetry
            ));
        }
    }
    write_csv(cfg, "validate.csv", |w| {
        writeln!(
            w,
            "loss,probe,max_grad_deviation,max_hess_deviation,max_hess_asymmetry,pass"
        )?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    if failed.is_empty() {
        println!("all {} derivative checks passed", rows.len());
        Ok(())
    } else {
        Err(CliError::Validation(failed.join(", ")))
    }
}

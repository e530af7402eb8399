//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use bea_core::analysis::{
    grad_perturbed_one_norm, heavy_ball_equiv, order_study, perturbed_one_norm, step_count,
    tail_mean_grad_one_norm, trajectory_error, DEFAULT_BURN_IN,
};
use bea_core::bounds::{check_global_bound, estimate_primitives, lemma_chain_rmsprop_out};
use bea_core::discrete_optim::{run, Hyperparameters, Variant};
use bea_core::losses::{
    fd_validate, make_bilinear, make_minibatch_regression, make_quadratic, LossSequence,
    DEFAULT_FD_STEP,
};
use bea_core::modified_flow::{
    bias_coefficients, bias_general, bias_large_eps, bias_small_eps, eval_terms,
    eval_terms_full_batch, integrate, penalty_curve, penalty_integrand, FlowTerms, Order, RhsSpec,
    DEFAULT_SUBSTEPS,
};
use bea_core::{Matrix, Point};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Suite {
    failures: usize,
    total: usize,
}

impl Suite {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        self.total += 1;
        if !pass {
            self.failures += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn hyper(variant: Variant, h: f64, eps: f64, rho: f64, beta: f64) -> Hyperparameters {
    Hyperparameters::new(variant, h, eps, rho, beta).expect("valid hyperparameters")
}

fn point(v: &[f64]) -> Point {
    Point::new(v.to_vec()).expect("finite point")
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// `|a - b|_inf / max(|a|_inf, |b|_inf)`, zero when both vanish.
fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = sup(a).max(sup(b));
    if scale == 0.0 {
        0.0
    } else {
        sup(&d) / scale
    }
}

fn terms_gap(a: &FlowTerms, b: &FlowTerms) -> f64 {
    [
        rel_gap(&a.r, &b.r),
        rel_gap(&a.m, &b.m),
        rel_gap(&a.l, &b.l),
        rel_gap(&a.lbar, &b.lbar),
        rel_gap(&a.p, &b.p),
        rel_gap(&a.pbar, &b.pbar),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn order_closeness(suite: &mut Suite) {
    let bilinear = make_bilinear(2.0, 1.5);
    let quadratic = make_quadratic(vec![1.0, 2.0], 10.0).unwrap();
    let hs = [0.02, 0.01, 0.005, 0.0025];
    let cases: [(&str, &dyn LossSequence, Variant, [f64; 2]); 4] = [
        ("bilinear", &bilinear, Variant::AdamEpsIn, [2.8, 3.5]),
        ("bilinear", &bilinear, Variant::RmsPropEpsIn, [2.8, 3.5]),
        ("quadratic", &quadratic, Variant::AdamEpsOut, [3.0, 3.0]),
        ("quadratic", &quadratic, Variant::RmsPropEpsOut, [3.0, 3.0]),
    ];
    for (loss, seq, variant, start) in cases {
        let hp = hyper(variant, hs[0], 1e-4, 0.9, 0.8);
        let clock = Instant::now();
        let study = order_study(seq, &hp, &point(&start), 1.0, &hs, DEFAULT_SUBSTEPS);
        let secs = clock.elapsed().as_secs_f64();
        let name = format!("order-2 closeness [{variant}, {loss}]");
        match study {
            Ok(s) => {
                let first = s.first_order.slope;
                let lead = s.leading.slope;
                let pass =
                    (1.7..=2.3).contains(&first) && (0.8..=1.3).contains(&lead) && secs <= 60.0;
                let errs: Vec<String> = s
                    .rows
                    .iter()
                    .map(|r| {
                        format!(
                            "h={} e1={:.3e} e0={:.3e}",
                            r.h, r.first_order.max, r.leading.max
                        )
                    })
                    .collect();
                suite.record(
                    &name,
                    pass,
                    format!(
                        "order-1 slope {first:.3} (want [1.7, 2.3]), order-0 slope {lead:.3} (want [0.8, 1.3]), \
                         {secs:.1}s; {}",
                        errs.join(", ")
                    ),
                );
            }
            Err(e) => suite.record(&name, false, format!("error: {e}")),
        }
    }
}

fn first_step(suite: &mut Suite) {
    let seq = make_bilinear(2.0, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let theta = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
        let h = rng.gen_range(1e-3..0.1);
        let eps = 10f64.powf(rng.gen_range(-8.0..0.0));
        let hp = hyper(Variant::AdamEpsIn, h, eps, 0.9, 0.8);
        let traj = run(&seq, &hp, point(&theta), 1).unwrap();
        let g = seq.full_grad(&theta);
        for j in 0..2 {
            let expect = theta[j] - h * g[j] / (g[j] * g[j] + eps).sqrt();
            worst = worst.max((traj.points[1][j] - expect).abs());
        }
    }
    suite.record(
        "first-step exactness",
        worst <= 1e-14,
        format!("max abs deviation {worst:.2e} (want <= 1e-14)"),
    );
}

/// Direct evaluation of every term from its definition: explicit weights,
/// explicit inner `l`-sums, no regrouping by batch.
fn naive_terms(seq: &dyn LossSequence, hp: &Hyperparameters, n: usize, theta: &[f64]) -> FlowTerms {
    let p = seq.dimension();
    let adam = hp.variant.is_adam();
    let (rho, beta) = (hp.rho, if adam { hp.beta } else { 0.0 });
    let grads: Vec<Vec<f64>> = (0..=n).map(|k| seq.grad(k, theta)).collect();
    let hess: Vec<Matrix> = (0..=n).map(|k| seq.hess(k, theta)).collect();
    let w_beta = |l: usize, k: usize| {
        if adam {
            beta.powi((l - k) as i32) * (1.0 - beta) / (1.0 - beta.powi(l as i32 + 1))
        } else if k == l {
            1.0
        } else {
            0.0
        }
    };
    let w_rho = |l: usize, k: usize| {
        let w = rho.powi((l - k) as i32) * (1.0 - rho);
        if adam {
            w / (1.0 - rho.powi(l as i32 + 1))
        } else {
            w
        }
    };
    let mut ms = Vec::new();
    let mut rs = Vec::new();
    let mut fs = Vec::new();
    for l in 0..=n {
        let mut m = vec![0.0; p];
        let mut r = vec![0.0; p];
        let mut f = vec![0.0; p];
        for j in 0..p {
            m[j] = (0..=l).map(|k| w_beta(l, k) * grads[k][j]).sum();
            let v: f64 = (0..=l)
                .map(|k| w_rho(l, k) * grads[k][j] * grads[k][j])
                .sum();
            r[j] = if hp.variant.eps_inside() {
                (v + hp.eps).sqrt()
            } else {
                v.sqrt()
            };
            let d = if hp.variant.eps_inside() {
                r[j]
            } else {
                r[j] + hp.eps
            };
            f[j] = m[j] / d;
        }
        ms.push(m);
        rs.push(r);
        fs.push(f);
    }
    let tail = |k: usize, i: usize| (k..n).map(|l| fs[l][i]).sum::<f64>();
    let (mut l, mut lbar, mut pp, mut pbar) =
        (vec![0.0; p], vec![0.0; p], vec![0.0; p], vec![0.0; p]);
    for j in 0..p {
        for k in 0..=n {
            let hq: f64 = (0..p).map(|i| hess[k][(i, j)] * tail(k, i)).sum();
            let hf: f64 = (0..p).map(|i| hess[k][(i, j)] * fs[n][i]).sum();
            l[j] += w_beta(n, k) * hq;
            lbar[j] += w_beta(n, k) * hf;
            pp[j] += w_rho(n, k) * grads[k][j] * hq;
            pbar[j] += w_rho(n, k) * grads[k][j] * hf;
        }
    }
    FlowTerms {
        n,
        variant: hp.variant,
        r: rs.swap_remove(n),
        m: ms.swap_remove(n),
        l,
        lbar,
        p: pp,
        pbar,
    }
}

const ADAPTIVE: [Variant; 4] = [
    Variant::RmsPropEpsOut,
    Variant::RmsPropEpsIn,
    Variant::AdamEpsOut,
    Variant::AdamEpsIn,
];

fn oracle_equivalence(suite: &mut Suite) {
    let seq = make_bilinear(2.0, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for probe in 0..50 {
        let variant = ADAPTIVE[probe % 4];
        let theta = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let n = rng.gen_range(0..300);
        let hp = hyper(
            variant,
            0.01,
            1e-3,
            rng.gen_range(0.5..0.99),
            rng.gen_range(0.0..0.95),
        );
        let generic = eval_terms(&seq, &hp, n, &theta).unwrap();
        let closed =
            eval_terms_full_batch(&seq.full_grad(&theta), &seq.hess(0, &theta), &hp, n).unwrap();
        worst = worst.max(terms_gap(&generic, &closed));
    }
    suite.record(
        "oracle equivalence [generic vs full-batch]",
        worst <= 1e-10,
        format!("max relative gap {worst:.2e} over 50 probes (want <= 1e-10)"),
    );

    let design = vec![
        (vec![1.0, 0.5, -0.3], 0.3),
        (vec![-0.2, 1.0, 0.4], -1.0),
        (vec![0.7, -0.3, 0.9], 0.8),
        (vec![0.1, 0.9, -0.6], 0.2),
    ];
    let seq = make_minibatch_regression(design, 1).unwrap();
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    for &n in &[0usize, 1, 3, 4, 7, 50, 133, 200] {
        for variant in ADAPTIVE {
            let theta = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let hp = hyper(variant, 0.01, 1e-3, 0.95, 0.8);
            let cached = eval_terms(&seq, &hp, n, &theta).unwrap();
            worst = worst.max(terms_gap(&cached, &naive_terms(&seq, &hp, n, &theta)));
            probes += 1;
        }
    }
    suite.record(
        "oracle equivalence [cached vs naive, m=4]",
        worst <= 1e-10,
        format!("max relative gap {worst:.2e} over {probes} probes, n <= 200 (want <= 1e-10)"),
    );
}

/// `∇_j |∇E|_{1,eps} = sum_i H_ij g_i / sqrt(g_i^2 + eps)`.
fn norm_gradient(g: &[f64], h: &Matrix, eps: f64) -> Vec<f64> {
    (0..g.len())
        .map(|j| {
            (0..g.len())
                .map(|i| h[(i, j)] * g[i] / (g[i] * g[i] + eps).sqrt())
                .sum()
        })
        .collect()
}

fn random_symmetric(rng: &mut ChaCha8Rng, p: usize) -> Matrix {
    let mut rows = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in i..p {
            let v = rng.gen_range(-2.0..2.0);
            rows[i][j] = v;
            rows[j][i] = v;
        }
    }
    Matrix::from_rows(&rows).unwrap()
}

fn bias_consistency(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = 3;

    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let g: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let hs = random_symmetric(&mut rng, p);
        let eps = 10f64.powf(rng.gen_range(-6.0..1.0));
        let rho = rng.gen_range(0.5..0.999);
        let h = rng.gen_range(1e-3..0.1);
        let hp = hyper(Variant::AdamEpsIn, h, eps, rho, 0.0);
        let got = bias_general(&g, &hs, &hp).unwrap();
        let dn = norm_gradient(&g, &hs, eps);
        for j in 0..p {
            let coeff =
                -2.0 * rho / (1.0 - rho) + (1.0 + rho) / (1.0 - rho) * eps / (g[j] * g[j] + eps);
            let expect = 0.5 * h * coeff * dn[j];
            let scale =
                0.5 * h * (2.0 * rho / (1.0 - rho) + (1.0 + rho) / (1.0 - rho)) * dn[j].abs();
            if scale > 0.0 {
                worst = worst.max((got[j] - expect).abs() / scale);
            }
        }
    }
    suite.record(
        "bias consistency [beta=0 vs rmsprop expression]",
        worst <= 1e-12,
        format!("max relative gap {worst:.2e} on 50 random inputs (want <= 1e-12)"),
    );

    // Small eps: the dropped term is (h/2) B eps/(g_j^2+eps) dn_j.
    let mut ok = true;
    let mut ratios = Vec::new();
    for &eps in &[1e-4, 1e-6, 1e-8, 1e-10] {
        let mut worst_ratio: f64 = 0.0;
        for _ in 0..20 {
            let g: Vec<f64> = (0..p)
                .map(|_| rng.gen_range(0.2..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
                .collect();
            let hs = random_symmetric(&mut rng, p);
            let hp = hyper(Variant::AdamEpsIn, 0.05, eps, 0.99, 0.9);
            let (_, b) = bias_coefficients(&hp).unwrap();
            let general = bias_general(&g, &hs, &hp).unwrap();
            let small = bias_small_eps(&g, &hs, &hp).unwrap();
            let dn = norm_gradient(&g, &hs, eps);
            let min_sq = g.iter().map(|x| x * x).fold(f64::INFINITY, f64::min);
            for j in 0..p {
                let gap = (general[j] - small[j]).abs();
                let bound = 0.5 * hp.h * b * eps / min_sq * dn[j].abs();
                // the gap is a difference of two O(1) values, so it carries their roundoff
                let roundoff = 4.0 * f64::EPSILON * (general[j].abs() + small[j].abs());
                ok &= gap <= bound * (1.0 + 1e-12) + roundoff;
                if general[j].abs() > 0.0 {
                    worst_ratio = worst_ratio.max(gap / general[j].abs());
                }
            }
        }
        ratios.push(worst_ratio);
    }
    let shrinking = ratios.windows(2).all(|w| w[1] < w[0]);
    suite.record(
        "bias consistency [small-eps limit]",
        ok && shrinking,
        format!(
            "gap within (h/2) B eps/min g^2 |dn_j| everywhere: {ok}; relative gaps over eps 1e-4..1e-10: {}",
            ratios.iter().map(|r| format!("{r:.1e}")).collect::<Vec<_>>().join(", ")
        ),
    );

    // Large eps: with r = max g^2 / eps and S_j = sum_i |H_ij g_i|,
    // |gap_j| <= (h/2)(B r + |A+B| r/2) S_j / sqrt(eps).
    let mut ok = true;
    let mut ratios = Vec::new();
    for &eps in &[1e2, 1e4, 1e6, 1e8] {
        let mut worst_ratio: f64 = 0.0;
        for _ in 0..20 {
            let g: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let hs = random_symmetric(&mut rng, p);
            let hp = hyper(Variant::AdamEpsIn, 0.05, eps, 0.99, 0.9);
            let (a, b) = bias_coefficients(&hp).unwrap();
            let general = bias_general(&g, &hs, &hp).unwrap();
            let large = bias_large_eps(&g, &hs, &hp).unwrap();
            let r = g.iter().map(|x| x * x).fold(0.0, f64::max) / eps;
            for j in 0..p {
                let s: f64 = (0..p).map(|i| (hs[(i, j)] * g[i]).abs()).sum();
                let bound = 0.5 * hp.h * (b * r + (a + b).abs() * r / 2.0) * s / eps.sqrt();
                let gap = (general[j] - large[j]).abs();
                let roundoff = 4.0 * f64::EPSILON * (general[j].abs() + large[j].abs());
                ok &= gap <= bound * (1.0 + 1e-12) + roundoff;
                if large[j].abs() > 0.0 {
                    worst_ratio = worst_ratio.max(gap / large[j].abs());
                }
            }
        }
        ratios.push(worst_ratio);
    }
    let shrinking = ratios.windows(2).all(|w| w[1] < w[0]);
    suite.record(
        "bias consistency [large-eps limit]",
        ok && shrinking,
        format!(
            "gap within remainder bound everywhere: {ok}; relative gaps over eps 1e2..1e8: {}",
            ratios
                .iter()
                .map(|r| format!("{r:.1e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
}

fn gradient_checks(suite: &mut Suite) {
    let seq = make_bilinear(2.0, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let eps = 1e-4;
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let theta = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let got =
            grad_perturbed_one_norm(&seq.full_grad(&theta), &seq.hess(0, &theta), eps).unwrap();
        for j in 0..2 {
            let mut plus = theta;
            let mut minus = theta;
            plus[j] += step;
            minus[j] -= step;
            let fd = (perturbed_one_norm(&seq.full_grad(&plus), eps)
                - perturbed_one_norm(&seq.full_grad(&minus), eps))
                / (2.0 * step);
            let scale = got[j].abs().max(fd.abs()).max(1e-8);
            worst = worst.max((got[j] - fd).abs() / scale);
        }
    }
    suite.record(
        "gradient checks [perturbed one-norm]",
        worst <= 1e-4,
        format!("max relative deviation {worst:.2e} at 20 bilinear points (want <= 1e-4)"),
    );

    let bilinear = make_bilinear(2.0, 1.5);
    let quadratic = make_quadratic(vec![1.0, 2.5, 0.5], 10.0).unwrap();
    let design: Vec<(Vec<f64>, f64)> = (0..8)
        .map(|_| {
            (
                (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let regression = make_minibatch_regression(design, 2).unwrap();
    let losses: [&dyn LossSequence; 3] = [&bilinear, &quadratic, &regression];
    for seq in losses {
        let (mut g_dev, mut h_dev, mut asym): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..seq.dimension())
                .map(|_| rng.gen_range(-5.0..5.0))
                .collect();
            let rep = fd_validate(seq, &theta, DEFAULT_FD_STEP).unwrap();
            g_dev = g_dev.max(rep.max_grad_deviation);
            h_dev = h_dev.max(rep.max_hess_deviation);
            asym = asym.max(rep.max_hess_asymmetry);
        }
        suite.record(
            &format!("gradient checks [{} derivatives]", seq.name()),
            g_dev <= 1e-5 && h_dev <= 1e-4 && asym == 0.0,
            format!("grad {g_dev:.1e} (want <= 1e-5), hessian {h_dev:.1e} (want <= 1e-4), asymmetry {asym:.1e}"),
        );
    }
}

fn heavy_ball_limit(suite: &mut Suite) {
    let seq = make_quadratic(vec![1.0, 2.0], 10.0).unwrap();
    let mut devs = Vec::new();
    let mut valid = true;
    for &eps in &[1e8, 1e10, 1e12] {
        let hp = hyper(Variant::AdamEpsIn, 0.1, eps, 0.999, 0.9);
        let rep = heavy_ball_equiv(&seq, &hp, point(&[1.0, 1.0]), 100, DEFAULT_BURN_IN).unwrap();
        valid &= rep.valid;
        devs.push(rep.max_deviation);
    }
    let decreasing = devs.windows(2).all(|w| w[1] < w[0]);
    let last = devs[devs.len() - 1];
    suite.record(
        "heavy-ball limit",
        last < 1e-5 && decreasing && valid,
        format!(
            "sup deviation at eps 1e8, 1e10, 1e12: {:.2e}, {:.2e}, {:.2e} (want < 1e-5 at 1e12, decreasing); \
             precondition held: {valid}",
            devs[0], devs[1], devs[2]
        ),
    );
}

fn global_bound(suite: &mut Suite) {
    let seq = make_quadratic(vec![1.0, 2.0], 10.0).unwrap();
    let start = point(&[3.0, 3.0]);
    for &h in &[0.01, 0.005] {
        let name = format!("global bound [rmsprop-eps-out, h={h}]");
        let outcome = (|| {
            let hp = hyper(Variant::RmsPropEpsOut, h, 1e-4, 0.9, 0.0);
            let n = step_count(1.0, h);
            let discrete = run(&seq, &hp, start.clone(), n)?;
            let flow = integrate(
                RhsSpec::Adaptive(Order::FirstOrder),
                &seq,
                &hp,
                start.clone(),
                n,
                DEFAULT_SUBSTEPS,
            )?;
            let est = estimate_primitives(&seq, &flow, seq.bound_box())?;
            let chain = lemma_chain_rmsprop_out(&est.prim)?;
            let errors = trajectory_error(&discrete, &flow)?;
            Ok::<_, bea_core::Error>((
                check_global_bound(&errors, &chain.global, h),
                chain,
                est,
                errors.max,
            ))
        })();
        match outcome {
            Ok((check, chain, est, max_err)) => suite.record(
                &name,
                check.value_holds,
                format!(
                    "max error {max_err:.2e}, worst |e_n| / (d1 exp(d2 nh) h^2) = {:.2e}; d1 {:.2e}, d2 {:.2e}, \
                     R {:.3e}, grade {}",
                    check.worst_value_ratio,
                    chain.global.d1,
                    chain.global.d2,
                    est.prim.r.unwrap_or(f64::NAN),
                    est.grade.as_str()
                ),
            ),
            Err(e) => suite.record(&name, false, format!("error: {e}")),
        }
    }
}

/// Midpoint rule with compensated summation, reporting cumulative values at
/// each checkpoint.
fn midpoint_oracle(f: &dyn Fn(f64) -> f64, checkpoints: &[f64], cells_per_unit: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let mut prev = 0.0;
    for &x in checkpoints {
        let cells = ((x - prev) * cells_per_unit).ceil().max(1.0) as usize;
        let w = (x - prev) / cells as f64;
        for c in 0..cells {
            let y = w * f(prev + (c as f64 + 0.5) * w) - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        prev = x;
        out.push(sum);
    }
    out
}

fn penalty_properties(suite: &mut Suite) {
    let eps = 1e-2;
    let grid: Vec<f64> = (0..=3000).map(|i| i as f64 * 1e-3).collect();

    let at_zero: Vec<f64> = [(0.95, 0.9), (0.95, 0.99), (0.5, 0.999)]
        .iter()
        .map(|&(b, r)| penalty_curve(b, r, eps, &[0.0]).unwrap()[0].1)
        .collect();
    suite.record(
        "penalty curve [zero at origin]",
        at_zero.iter().all(|v| *v == 0.0),
        format!("values at x=0: {at_zero:?}"),
    );

    let falling = penalty_curve(0.95, 0.99, eps, &grid).unwrap();
    let (imax, vmax) =
        falling.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |a, (i, (_, v))| if *v > a.1 { (i, *v) } else { a },
        );
    let interior = imax > 0
        && imax < grid.len() - 1
        && vmax > falling[0].1
        && vmax > falling[grid.len() - 1].1;
    suite.record(
        "penalty curve [interior maximum, rho=0.99]",
        interior,
        format!(
            "max {vmax:.4} at x = {:.3}; value at x=3 is {:.3}",
            grid[imax],
            falling[grid.len() - 1].1
        ),
    );

    let lo = 10.0 * eps.sqrt();
    let rising_grid: Vec<f64> = grid.iter().cloned().filter(|x| *x >= lo).collect();
    let rising = penalty_curve(0.95, 0.9, eps, &rising_grid).unwrap();
    let increasing = rising.windows(2).all(|w| w[1].1 > w[0].1);
    suite.record(
        "penalty curve [increasing, rho=0.9]",
        increasing,
        format!("strictly increasing on [{lo}, 3]: {increasing}"),
    );

    let checkpoints = [0.01, 0.05, 0.1, 0.3, 0.5, 1.0, 2.0, 3.0];
    let mut worst: f64 = 0.0;
    for &(beta, rho) in &[(0.95, 0.9), (0.95, 0.95), (0.95, 0.99)] {
        let curve = penalty_curve(beta, rho, eps, &checkpoints).unwrap();
        let f = |y: f64| penalty_integrand(beta, rho, eps, y);
        let oracle = midpoint_oracle(&f, &checkpoints, 1e6);
        for ((_, v), o) in curve.iter().zip(&oracle) {
            worst = worst.max((v - o).abs());
        }
    }
    suite.record(
        "penalty curve [quadrature vs midpoint oracle]",
        worst <= 1e-8,
        format!("max abs gap {worst:.2e} (want <= 1e-8)"),
    );
}

fn fig2_ordering(suite: &mut Suite) {
    let seq = make_bilinear(2.0, 1.5);
    let (h, steps, tail) = (1e-3, 10_000, 5_000);
    let mut norms = Vec::new();
    for &beta in &[0.9, 0.95, 0.99] {
        let hp = hyper(Variant::AdamEpsIn, h, 1e-8, 0.999, beta);
        let traj = run(&seq, &hp, point(&[2.8, 3.5]), steps).unwrap();
        norms.push(tail_mean_grad_one_norm(&seq, &traj, tail));
    }
    let ordered = norms.windows(2).all(|w| w[1] < w[0]);
    suite.record(
        "beta ordering of tail gradient one-norm",
        ordered,
        format!(
            "rho=0.999, h={h}, {steps} steps, tail {tail}: beta 0.9 -> {:.4}, 0.95 -> {:.4}, 0.99 -> {:.4}",
            norms[0], norms[1], norms[2]
        ),
    );
}

fn main() -> ExitCode {
    let mut suite = Suite {
        failures: 0,
        total: 0,
    };
    first_step(&mut suite);
    oracle_equivalence(&mut suite);
    bias_consistency(&mut suite);
    gradient_checks(&mut suite);
    heavy_ball_limit(&mut suite);
    global_bound(&mut suite);
    penalty_properties(&mut suite);
    fig2_ordering(&mut suite);
    order_closeness(&mut suite);
    println!(
        "acceptance: {} of {} criteria passed",
        suite.total - suite.failures,
        suite.total
    );
    if suite.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

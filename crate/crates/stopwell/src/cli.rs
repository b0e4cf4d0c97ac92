//! Command-line front end: experiment orchestration, CSV emission and
//! replayable run manifests.
//!
//! Every run resolves (config file, environment, flags) into a model, a
//! numerics block and a task, executes it into an output directory, and
//! records a JSON manifest. Re-running a manifest reproduces the CSV
//! outputs byte for byte; CSV numbers carry 17 significant digits for
//! that reason, and every CSV starts with a comment line holding the code
//! version and seed.
//!
//! Exit codes: 0 success, 1 validation error, 2 numerical
//! non-convergence, 3 I/O or config error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::boundary::{fixed_point_solve, integral_residual, BoundaryCurve};
use crate::closed_form::ClosedFormPack;
use crate::config::{default_sweep, ConfigFile, Numerics, RunManifest};
use crate::error::{Result, StopwellError};
use crate::filter::{bayes_oracle, posterior_f, FilterInput};
use crate::mc::parallel_estimate;
use crate::model::{reference_params, ModelParams, State};
use crate::pde::{extract_boundary, smooth_fit_diagnostic, solve_obstacle, PdeGrid, SweepOrder};
use crate::sampling::{first_passage_discounted, sample_at_exponential_time, RngStream};
use crate::valuation::{full_info_value, value_from_boundary, value_of_information};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "stopwell", version, about = "Investment-boundary solver for a profit stream with hidden growth rate")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file ([model], [numerics], [sweep.<name>]).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "./out")]
    pub out: PathBuf,
    /// RNG seed (beats STOPWELL_SEED and the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub mu0: Option<f64>,
    #[arg(long, global = true)]
    pub mu1: Option<f64>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub r: Option<f64>,
    #[arg(long, global = true)]
    pub invest_cost: Option<f64>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct SolverArgs {
    /// Boundary grid size (pi nodes).
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Monte-Carlo samples per node / state.
    #[arg(long)]
    pub samples: Option<u64>,
    /// Fixed-point tolerance (currency units); omit for automatic.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the fundamental roots and thresholds; write the lower-bound
    /// table.
    Thresholds {
        /// Rows of the lower-bound table.
        #[arg(long, default_value_t = 101)]
        table_size: usize,
    },
    /// Solve the investment boundary by Monte-Carlo fixed point.
    Boundary {
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Estimate the value function at given states.
    Value {
        /// Profit levels (repeatable).
        #[arg(long = "x", required = true)]
        xs: Vec<f64>,
        /// Beliefs (repeatable).
        #[arg(long = "pi", required = true)]
        pis: Vec<f64>,
        /// Reuse a previously solved boundary CSV (columns pi, b).
        #[arg(long)]
        boundary_csv: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Value-of-information surface on (0, b(0)].
    Voi {
        /// Number of x grid points.
        #[arg(long, default_value_t = 33)]
        x_count: usize,
        /// Beliefs (repeatable); default 0.25 0.5 0.75.
        #[arg(long = "pi")]
        pis: Vec<f64>,
        #[arg(long)]
        boundary_csv: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Finite-difference oracle: value surface, extracted boundary,
    /// smooth-fit diagnostics.
    Oracle {
        #[arg(long)]
        ns: Option<usize>,
        #[arg(long)]
        npi: Option<usize>,
        #[arg(long)]
        left_width: Option<f64>,
        #[arg(long)]
        right_width: Option<f64>,
        #[arg(long)]
        omega: Option<f64>,
        #[arg(long)]
        max_sweeps: Option<usize>,
        /// Samples for the integral-equation residual column.
        #[arg(long, default_value_t = 100_000)]
        residual_samples: u64,
    },
    /// Run the fast invariant suite and exit nonzero on failure.
    Verify {
        #[arg(long, default_value_t = 200_000)]
        samples: u64,
    },
    /// Emit boundary and value-of-information datasets per parameter set.
    Figures {
        /// Sweep config file; defaults to the four documented sets.
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Re-run a recorded manifest; outputs are byte-identical.
    Replay {
        manifest: PathBuf,
    },
}

/// Fully resolved task, serialized into the manifest for replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TaskSpec {
    Thresholds { table_size: usize },
    Boundary,
    Value { states: Vec<(f64, f64)>, boundary_csv: Option<String> },
    Voi { x_count: usize, pi_list: Vec<f64>, boundary_csv: Option<String> },
    Oracle { residual_samples: u64 },
    Verify { samples: u64 },
    Figures { sets: Vec<(String, ModelParams)> },
}

struct Ctx {
    params: ModelParams,
    pack: ClosedFormPack,
    numerics: Numerics,
    seed: u64,
    out_dir: PathBuf,
    stage_timings: Vec<(String, f64)>,
    started: Instant,
}

impl Ctx {
    fn stream(&self, id: u64) -> RngStream {
        RngStream::new(self.seed, id)
    }

    fn time<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f(self);
        self.stage_timings.push((name.to_string(), t.elapsed().as_secs_f64()));
        out
    }
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_csv(
    path: &Path,
    seed: u64,
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "# stopwell v{VERSION} seed={seed}");
    let _ = writeln!(text, "{header}");
    for row in rows {
        let _ = writeln!(text, "{row}");
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn read_boundary_csv(path: &Path) -> Result<BoundaryCurve> {
    let text = std::fs::read_to_string(path)?;
    let mut pis = Vec::new();
    let mut vals = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("pi") {
            continue;
        }
        let mut cols = line.split(',');
        let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
            return Err(StopwellError::Config(format!("bad boundary row: {line}")));
        };
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| StopwellError::Config(format!("bad number {s}: {e}")))
        };
        pis.push(parse(a)?);
        vals.push(parse(b)?);
    }
    BoundaryCurve::new(pis, vals)
}

fn solve_boundary_for(ctx: &mut Ctx) -> Result<(BoundaryCurve, usize)> {
    let init = BoundaryCurve::from_lower_bound(&ctx.pack, ctx.numerics.grid_size);
    let stream = ctx.stream(0);
    let (curve, report) = fixed_point_solve(
        &ctx.pack,
        &init,
        ctx.numerics.tol_option(),
        ctx.numerics.max_iter,
        ctx.numerics.samples,
        stream,
    )?;
    Ok((curve, report.iterations))
}

fn obtain_boundary(ctx: &mut Ctx, csv: &Option<String>) -> Result<(BoundaryCurve, Option<usize>)> {
    match csv {
        Some(p) => Ok((read_boundary_csv(Path::new(p))?, None)),
        None => {
            let (c, it) = solve_boundary_for(ctx)?;
            Ok((c, Some(it)))
        }
    }
}

fn run_thresholds(ctx: &mut Ctx, table_size: usize) -> Result<Vec<String>> {
    let cf = &ctx.pack;
    println!("beta0 = {}", fmt17(cf.beta0));
    println!("beta1 = {}", fmt17(cf.beta1));
    println!("xstar0 = {}", fmt17(cf.xstar0));
    println!("xstar1 = {}", fmt17(cf.xstar1));
    println!("rI = {}", fmt17(ctx.params.r * ctx.params.invest_cost));
    println!("pi,b_lower");
    let grid = BoundaryCurve::uniform_grid(table_size.max(2));
    let rows: Vec<String> = grid
        .iter()
        .map(|&p| format!("{},{}", fmt17(p), fmt17(cf.lower_bound_b(p))))
        .collect();
    for r in &rows {
        println!("{r}");
    }
    let path = ctx.out_dir.join("thresholds.csv");
    write_csv(&path, ctx.seed, "pi,b_lower", rows)?;
    Ok(vec!["thresholds.csv".into()])
}

fn run_boundary(ctx: &mut Ctx) -> Result<(Vec<String>, usize)> {
    let (curve, iterations) = ctx.time("solve", solve_boundary_for)?;
    let residuals = ctx.time("residuals", |ctx| {
        let stream = ctx.stream(0);
        Ok(curve
            .pi_grid()
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                // same substreams as the iteration: the converged curve is
                // measured by the estimator that defines the scheme
                integral_residual(&ctx.pack, &curve, p, ctx.numerics.samples, stream.substream(j as u64))
            })
            .collect::<Vec<_>>())
    })?;
    let rows: Vec<String> = curve
        .pi_grid()
        .iter()
        .zip(curve.values())
        .zip(&residuals)
        .map(|((&p, &b), res)| {
            format!(
                "{},{},{},{},{}",
                fmt17(p),
                fmt17(b),
                fmt17(ctx.pack.lower_bound_b(p)),
                fmt17(res.mean),
                fmt17(res.std_error)
            )
        })
        .collect();
    write_csv(
        &ctx.out_dir.join("boundary.csv"),
        ctx.seed,
        "pi,b,b_lower,residual,residual_se",
        rows,
    )?;
    println!(
        "boundary: {} nodes, {} iterations, b(0)={:.6}, b(1)={:.6}",
        curve.len(),
        iterations,
        curve.eval(0.0),
        curve.eval(1.0)
    );
    Ok((vec!["boundary.csv".into()], iterations))
}

fn run_value(
    ctx: &mut Ctx,
    states: &[(f64, f64)],
    boundary_csv: &Option<String>,
) -> Result<(Vec<String>, Option<usize>)> {
    let (curve, iterations) = ctx.time("boundary", |ctx| obtain_boundary(ctx, boundary_csv))?;
    let stream = ctx.stream(1);
    let mut rows = Vec::new();
    for (k, &(x, pi)) in states.iter().enumerate() {
        let s = State::new(x, pi)?;
        let est = value_from_boundary(&ctx.pack, &curve, s, ctx.numerics.samples, stream.substream(k as u64));
        rows.push(format!(
            "{},{},{},{}",
            fmt17(x),
            fmt17(pi),
            fmt17(est.mean),
            fmt17(est.std_error)
        ));
        println!("V({x}, {pi}) = {} +- {}", est.mean, est.std_error);
    }
    write_csv(&ctx.out_dir.join("value.csv"), ctx.seed, "x,pi,v,se", rows)?;
    Ok((vec!["value.csv".into()], iterations))
}

fn voi_x_grid(b0: f64, count: usize) -> Vec<f64> {
    // profit levels from near zero up to b(0); above it the value of
    // information vanishes identically
    let lo = 0.05 * b0;
    (0..count)
        .map(|i| lo + (b0 - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

fn run_voi(
    ctx: &mut Ctx,
    x_count: usize,
    pi_list: &[f64],
    boundary_csv: &Option<String>,
) -> Result<(Vec<String>, Option<usize>)> {
    let (curve, iterations) = ctx.time("boundary", |ctx| obtain_boundary(ctx, boundary_csv))?;
    let x_grid = voi_x_grid(curve.eval(0.0), x_count.max(2));
    let surface = ctx.time("voi", |ctx| {
        value_of_information(&ctx.pack, &curve, &x_grid, pi_list, ctx.numerics.samples, ctx.stream(2))
    })?;
    let mut rows = Vec::new();
    for slice in &surface.slices {
        for (i, &x) in surface.x_grid.iter().enumerate() {
            rows.push(format!(
                "{},{},{},{},{},{}",
                fmt17(x),
                fmt17(slice.pi),
                fmt17(slice.v_bar[i]),
                fmt17(slice.v[i].mean),
                fmt17(slice.delta[i]),
                fmt17(slice.delta_se[i])
            ));
        }
        println!(
            "pi={}: max delta {:.4} at x={:.4}",
            slice.pi, slice.max_delta, slice.argmax_x
        );
    }
    write_csv(
        &ctx.out_dir.join("voi.csv"),
        ctx.seed,
        "x,pi,v_bar,v,delta,delta_se",
        rows,
    )?;
    Ok((vec!["voi.csv".into()], iterations))
}

fn run_oracle(ctx: &mut Ctx, residual_samples: u64) -> Result<Vec<String>> {
    let grid = PdeGrid::new(
        &ctx.pack,
        ctx.numerics.ns,
        ctx.numerics.npi,
        ctx.numerics.left_width,
        ctx.numerics.right_width,
    )?;
    let sol = ctx.time("solve", |ctx| {
        solve_obstacle(
            &ctx.pack,
            grid.clone(),
            1e-11,
            ctx.numerics.max_sweeps,
            ctx.numerics.omega,
            SweepOrder::Lexicographic,
        )
    })?;
    let boundary = extract_boundary(&ctx.pack, &sol)?;
    let fit = smooth_fit_diagnostic(&sol, &boundary);
    let mut surface_rows = Vec::with_capacity(sol.grid.ns() * sol.grid.npi());
    for i in 0..sol.grid.ns() {
        for j in 0..sol.grid.npi() {
            let id = sol.grid.idx(i, j);
            surface_rows.push(format!(
                "{},{},{},{},{}",
                fmt17(sol.grid.x_nodes[i]),
                fmt17(sol.grid.pi_nodes[j]),
                fmt17(sol.v[id]),
                fmt17(sol.g[id]),
                u8::from(sol.stop_mask[id])
            ));
        }
    }
    write_csv(
        &ctx.out_dir.join("oracle_surface.csv"),
        ctx.seed,
        "x,pi,v,g,stop",
        surface_rows,
    )?;
    let stream = ctx.stream(3);
    let rows: Vec<String> = boundary
        .pi_grid()
        .iter()
        .zip(boundary.values())
        .enumerate()
        .map(|(j, (&p, &b))| {
            let res = integral_residual(&ctx.pack, &boundary, p, residual_samples, stream.substream(j as u64));
            format!(
                "{},{},{},{},{}",
                fmt17(p),
                fmt17(b),
                fmt17(ctx.pack.lower_bound_b(p)),
                fmt17(res.mean),
                fmt17(res.std_error)
            )
        })
        .collect();
    write_csv(
        &ctx.out_dir.join("oracle_boundary.csv"),
        ctx.seed,
        "pi,b,b_lower,residual,residual_se",
        rows,
    )?;
    println!(
        "oracle: {} sweeps, b(0)={:.6}, b(1)={:.6}, smooth-fit mismatch dx={:.4} dpi={:.4}, complementarity={:.3e}",
        sol.sweeps,
        boundary.eval(0.0),
        boundary.eval(1.0),
        fit.max_dx_mismatch,
        fit.max_dpi_mismatch,
        sol.complementarity_residual()
    );
    Ok(vec!["oracle_surface.csv".into(), "oracle_boundary.csv".into()])
}

fn run_figures(
    ctx: &mut Ctx,
    sets: &[(String, ModelParams)],
) -> Result<Vec<String>> {
    let mut outputs = Vec::new();
    let mut gnuplot = String::from("# gnuplot stub for the emitted datasets\nset datafile separator \",\"\nset key left\n");
    for (idx, (name, params)) in sets.iter().enumerate() {
        let pack = ClosedFormPack::new(*params)?;
        let init = BoundaryCurve::from_lower_bound(&pack, ctx.numerics.grid_size);
        let stream = RngStream::new(ctx.seed, 1000 + idx as u64);
        let label = format!("set {name}: mu0={}, sigma={}", params.mu0, params.sigma);
        let (curve, report) = ctx.time(&format!("boundary_{name}"), |ctx| {
            fixed_point_solve(
                &pack,
                &init,
                ctx.numerics.tol_option(),
                ctx.numerics.max_iter,
                ctx.numerics.samples,
                stream,
            )
        })?;
        let bname = format!("boundary_{name}.csv");
        let rows: Vec<String> = curve
            .pi_grid()
            .iter()
            .zip(curve.values())
            .map(|(&p, &b)| {
                format!("{},{},{}", fmt17(p), fmt17(b), fmt17(pack.lower_bound_b(p)))
            })
            .collect();
        write_csv(&ctx.out_dir.join(&bname), ctx.seed, "pi,b,b_lower", rows)?;
        let x_grid = voi_x_grid(curve.eval(0.0), 33);
        let surface = ctx.time(&format!("voi_{name}"), |ctx| {
            value_of_information(
                &pack,
                &curve,
                &x_grid,
                &[0.25, 0.5, 0.75],
                ctx.numerics.samples,
                stream.substream(7),
            )
        })?;
        let vname = format!("voi_{name}.csv");
        let mut rows = Vec::new();
        for slice in &surface.slices {
            for (i, &x) in surface.x_grid.iter().enumerate() {
                rows.push(format!(
                    "{},{},{},{}",
                    fmt17(x),
                    fmt17(slice.pi),
                    fmt17(slice.delta[i]),
                    fmt17(slice.delta_se[i])
                ));
            }
        }
        write_csv(&ctx.out_dir.join(&vname), ctx.seed, "x,pi,delta,delta_se", rows)?;
        println!("{label}: {} iterations, b(0)={:.4}", report.iterations, curve.eval(0.0));
        let _ = writeln!(
            gnuplot,
            "# {label}\n# plot \"{bname}\" using 1:2 with lines title \"b\", \"{bname}\" using 1:3 with lines title \"b_lower\"\n# plot \"{vname}\" using 1:3 with lines title \"delta\""
        );
        outputs.push(bname);
        outputs.push(vname);
    }
    std::fs::write(ctx.out_dir.join("plot.gp"), gnuplot)?;
    outputs.push("plot.gp".into());
    Ok(outputs)
}

fn run_verify(ctx: &mut Ctx, samples: u64) -> Result<Vec<String>> {
    use rand::Rng;

    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} - {name} ({detail})", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // closed forms on random parameter draws
    let t = Instant::now();
    let mut rng = ctx.stream(100).sample_rng(0);
    let mut worst_res: f64 = 0.0;
    let mut structure_ok = true;
    for _ in 0..1000 {
        let r = rng.random_range(0.01..0.15);
        let mu1 = r - rng.random_range(0.001..r * 0.9);
        let mu0 = mu1 - rng.random_range(0.001..0.2);
        let sigma = rng.random_range(0.02..0.8);
        let cost = rng.random_range(0.1..1000.0);
        let p = ModelParams::new(mu0, mu1, sigma, r, cost)?;
        let cf = ClosedFormPack::new(p)?;
        worst_res = worst_res.max(cf.quadratic_residual(0)).max(cf.quadratic_residual(1));
        structure_ok &= cf.beta0 > cf.beta1 && cf.beta1 > 1.0;
        structure_ok &= cf.xstar0 > cf.xstar1 && cf.xstar1 >= r * cost - 1e-12 * cost;
        let mut prev = f64::INFINITY;
        for k in 0..=100 {
            let b = cf.lower_bound_b(k as f64 / 100.0);
            structure_ok &= b <= prev + 1e-12 * cf.xstar0;
            prev = b;
        }
    }
    check(
        "closed-form sweep (1000 draws)",
        worst_res < 1e-12 && structure_ok,
        format!("max residual {worst_res:.2e}, {:.2}s", t.elapsed().as_secs_f64()),
    );

    // filter equals the density oracle
    let t = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..10_000u64 {
        let mut r2 = ctx.stream(101).sample_rng(i);
        let tt = r2.random_range(1e-6..80.0);
        let x0 = r2.random_range(0.05..50.0);
        let pi0 = r2.random_range(1e-6..1.0 - 1e-6);
        let y = x0 * (r2.random_range(-6.0..6.0) as f64).exp();
        let input = FilterInput::new(tt, x0, pi0, y)?;
        let a = posterior_f(&ctx.params, input);
        let b = bayes_oracle(&ctx.params, input)?;
        worst = worst.max((a - b).abs() / a.abs().max(1e-300));
    }
    check(
        "filter vs density oracle (1e4 inputs)",
        worst < 1e-12,
        format!("max rel diff {worst:.2e}, {:.2}s", t.elapsed().as_secs_f64()),
    );

    // martingale and conditional means at the exponential time
    let t = Instant::now();
    let s0 = State { x: 8.0, pi: 0.3 };
    let pi_est = parallel_estimate(ctx.stream(102), samples, |rng| {
        sample_at_exponential_time(&ctx.params, s0, rng).pi_xi
    });
    let mut mean_ok = pi_est.consistent_with(0.3, 3.0);
    let mut detail = format!("E[Pi]={:.5}+-{:.5}", pi_est.mean, pi_est.std_error);
    for which in 0..2usize {
        let est = parallel_estimate(ctx.stream(103 + which as u64), samples, |rng| {
            sample_at_exponential_time(&ctx.params, State { x: 8.0, pi: which as f64 }, rng).x_xi
        });
        let want = 8.0 * ctx.params.r / (ctx.params.r - ctx.params.drift(which));
        mean_ok &= est.consistent_with(want, 3.0);
        let _ = write!(detail, ", E[X|{which}]={:.4} vs {want:.4}", est.mean);
    }
    check(
        "exponential-time means",
        mean_ok,
        format!("{detail}, {:.2}s", t.elapsed().as_secs_f64()),
    );

    // hitting-time Laplace transform against the closed form
    let t = Instant::now();
    let delta = 1.5;
    let dt = 4e-3;
    let horizon = 120.0;
    let fp = first_passage_discounted(
        &ctx.params,
        State { x: 1.0, pi: 1.0 },
        delta,
        dt,
        horizon,
        (samples / 4).max(10_000),
        ctx.stream(105),
    )?;
    let exact = ctx.pack.hitting_laplace(1, delta);
    let allowance = exact * ctx.pack.beta1 * 0.5826 * ctx.params.sigma * dt.sqrt()
        + fp.truncation_bound;
    let ok = fp.estimate.mean <= exact + 3.0 * fp.estimate.std_error
        && exact - fp.estimate.mean <= 3.0 * fp.estimate.std_error + allowance;
    check(
        "first-passage Laplace transform",
        ok,
        format!(
            "est {:.5}+-{:.5} vs {exact:.5} (allowance {allowance:.5}), {:.2}s",
            fp.estimate.mean,
            fp.estimate.std_error,
            t.elapsed().as_secs_f64()
        ),
    );

    // known-drift value reproduction through the boundary estimator
    let t = Instant::now();
    let grid = BoundaryCurve::uniform_grid(5);
    let pinned = BoundaryCurve::new(grid, vec![ctx.pack.xstar1; 5])?;
    let est = value_from_boundary(
        &ctx.pack,
        &pinned,
        State { x: 5.0, pi: 1.0 },
        samples,
        ctx.stream(106),
    );
    let want = ctx.pack.known_drift_value(1, 5.0);
    check(
        "known-drift value via estimator",
        est.consistent_with(want, 3.0),
        format!(
            "est {:.4}+-{:.4} vs {want:.4}, {:.2}s",
            est.mean,
            est.std_error,
            t.elapsed().as_secs_f64()
        ),
    );

    // small boundary solve: class membership and endpoints
    let t = Instant::now();
    let init = BoundaryCurve::from_lower_bound(&ctx.pack, 21);
    let solved = fixed_point_solve(
        &ctx.pack,
        &init,
        None,
        ctx.numerics.max_iter,
        (samples / 4).max(20_000),
        ctx.stream(107),
    );
    match solved {
        Ok((curve, report)) => {
            let e0 = (curve.eval(0.0) - ctx.pack.xstar0).abs() / ctx.pack.xstar0;
            let e1 = (curve.eval(1.0) - ctx.pack.xstar1).abs() / ctx.pack.xstar1;
            check(
                "boundary solve structure",
                curve.is_in_class(&ctx.pack, 1e-9) && e0 < 0.01 && e1 < 0.01,
                format!(
                    "iterations {}, endpoint errors {:.2e}/{:.2e}, {:.2}s",
                    report.iterations,
                    e0,
                    e1,
                    t.elapsed().as_secs_f64()
                ),
            );
        }
        Err(e) => check("boundary solve structure", false, e.to_string()),
    }

    // full-information value dominates
    let t = Instant::now();
    let curve = BoundaryCurve::from_lower_bound(&ctx.pack, 51);
    let mut dominated = true;
    for (k, &(x, pi)) in [(2.0, 0.3), (6.0, 0.5), (8.0, 0.7)].iter().enumerate() {
        let s = State { x, pi };
        let v = value_from_boundary(&ctx.pack, &curve, s, samples / 2, ctx.stream(108).substream(k as u64));
        dominated &= full_info_value(&ctx.pack, s) >= v.mean - 3.0 * v.std_error;
    }
    check(
        "full-information upper bound",
        dominated,
        format!("3 states, {:.2}s", t.elapsed().as_secs_f64()),
    );

    if failures > 0 {
        return Err(StopwellError::NonConvergence { max_iter: failures, last_change: f64::NAN });
    }
    Ok(vec![])
}

fn run_task(ctx: &mut Ctx, task: &TaskSpec) -> Result<(Vec<String>, Option<usize>)> {
    match task {
        TaskSpec::Thresholds { table_size } => Ok((run_thresholds(ctx, *table_size)?, None)),
        TaskSpec::Boundary => {
            let (outputs, iters) = run_boundary(ctx)?;
            Ok((outputs, Some(iters)))
        }
        TaskSpec::Value { states, boundary_csv } => run_value(ctx, states, boundary_csv),
        TaskSpec::Voi { x_count, pi_list, boundary_csv } => {
            run_voi(ctx, *x_count, pi_list, boundary_csv)
        }
        TaskSpec::Oracle { residual_samples } => Ok((run_oracle(ctx, *residual_samples)?, None)),
        TaskSpec::Verify { samples } => Ok((run_verify(ctx, *samples)?, None)),
        TaskSpec::Figures { sets } => Ok((run_figures(ctx, sets)?, None)),
    }
}

fn apply_solver_args(numerics: &mut Numerics, solver: &SolverArgs) {
    if let Some(g) = solver.grid_size {
        numerics.grid_size = g;
    }
    if let Some(s) = solver.samples {
        numerics.samples = s;
    }
    if let Some(t) = solver.tol {
        numerics.tol = t;
    }
    if let Some(m) = solver.max_iter {
        numerics.max_iter = m;
    }
}

/// Resolves inputs, executes, writes the manifest; returns the exit code.
pub fn run(cli: Cli) -> i32 {
    match run_inner(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &StopwellError) -> i32 {
    use StopwellError::*;
    match e {
        NonPositiveSigma(_) | NonPositiveCost(_) | DiscountTooSmall { .. }
        | DriftOrdering { .. } | InvalidState(_) | InvalidInput(_) | GridTooCoarse(_) => 1,
        EstimateDegenerate { .. } | NonConvergence { .. } | PdeNonConvergence { .. }
        | EmptyStoppingRow(_) => 2,
        Config(_) | Io(_) => 3,
    }
}

fn run_inner(cli: Cli) -> Result<()> {
    if let Command::Replay { manifest } = &cli.command {
        let m = RunManifest::load(manifest)?;
        let pack = ClosedFormPack::new(m.params)?;
        let task: TaskSpec = serde_json::from_str(
            m.task_json.as_deref().ok_or_else(|| {
                StopwellError::Config("manifest has no task record".into())
            })?,
        )
        .map_err(|e| StopwellError::Config(e.to_string()))?;
        let mut ctx = Ctx {
            params: m.params,
            pack,
            numerics: m.numerics.clone(),
            seed: m.seed,
            out_dir: cli.global.out.clone(),
            stage_timings: Vec::new(),
            started: Instant::now(),
        };
        std::fs::create_dir_all(&ctx.out_dir)?;
        let (outputs, iterations) = run_task(&mut ctx, &task)?;
        finish(&ctx, &m.subcommand, &task, outputs, iterations)?;
        return Ok(());
    }

    let cfg = match &cli.global.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let base = cfg.model.resolve(&reference_params())?;
    let params = ModelParams::new(
        cli.global.mu0.unwrap_or(base.mu0),
        cli.global.mu1.unwrap_or(base.mu1),
        cli.global.sigma.unwrap_or(base.sigma),
        cli.global.r.unwrap_or(base.r),
        cli.global.invest_cost.unwrap_or(base.invest_cost),
    )?;
    let mut numerics = cfg.numerics.clone();
    let env_seed = std::env::var("STOPWELL_SEED")
        .ok()
        .and_then(|s| s.parse::<u64>().ok());
    let seed = cli.global.seed.or(env_seed).unwrap_or(numerics.seed);
    numerics.seed = seed;

    let (task, name): (TaskSpec, &str) = match &cli.command {
        Command::Thresholds { table_size } => {
            (TaskSpec::Thresholds { table_size: *table_size }, "thresholds")
        }
        Command::Boundary { solver } => {
            apply_solver_args(&mut numerics, solver);
            (TaskSpec::Boundary, "boundary")
        }
        Command::Value { xs, pis, boundary_csv, solver } => {
            apply_solver_args(&mut numerics, solver);
            let mut states = Vec::new();
            for &pi in pis {
                for &x in xs {
                    states.push((x, pi));
                }
            }
            (
                TaskSpec::Value {
                    states,
                    boundary_csv: boundary_csv.as_ref().map(|p| p.display().to_string()),
                },
                "value",
            )
        }
        Command::Voi { x_count, pis, boundary_csv, solver } => {
            apply_solver_args(&mut numerics, solver);
            let pi_list = if pis.is_empty() { vec![0.25, 0.5, 0.75] } else { pis.clone() };
            (
                TaskSpec::Voi {
                    x_count: *x_count,
                    pi_list,
                    boundary_csv: boundary_csv.as_ref().map(|p| p.display().to_string()),
                },
                "voi",
            )
        }
        Command::Oracle { ns, npi, left_width, right_width, omega, max_sweeps, residual_samples } => {
            if let Some(v) = ns {
                numerics.ns = *v;
            }
            if let Some(v) = npi {
                numerics.npi = *v;
            }
            if let Some(v) = left_width {
                numerics.left_width = *v;
            }
            if let Some(v) = right_width {
                numerics.right_width = *v;
            }
            if let Some(v) = omega {
                numerics.omega = *v;
            }
            if let Some(v) = max_sweeps {
                numerics.max_sweeps = *v;
            }
            (TaskSpec::Oracle { residual_samples: *residual_samples }, "oracle")
        }
        Command::Verify { samples } => (TaskSpec::Verify { samples: *samples }, "verify"),
        Command::Figures { sweep, solver } => {
            apply_solver_args(&mut numerics, solver);
            let sets = match sweep {
                Some(path) => {
                    let sweep_cfg = ConfigFile::load(path)?;
                    let sweep_base = sweep_cfg.model.resolve(&params)?;
                    sweep_cfg.sweep_sets(&sweep_base)?
                }
                None => default_sweep(),
            };
            (TaskSpec::Figures { sets }, "figures")
        }
        Command::Replay { .. } => unreachable!("handled above"),
    };

    let pack = ClosedFormPack::new(params)?;
    let mut ctx = Ctx {
        params,
        pack,
        numerics,
        seed,
        out_dir: cli.global.out.clone(),
        stage_timings: Vec::new(),
        started: Instant::now(),
    };
    std::fs::create_dir_all(&ctx.out_dir)?;
    let (outputs, iterations) = run_task(&mut ctx, &task)?;
    finish(&ctx, name, &task, outputs, iterations)
}

fn finish(
    ctx: &Ctx,
    name: &str,
    task: &TaskSpec,
    outputs: Vec<String>,
    iterations: Option<usize>,
) -> Result<()> {
    let manifest = RunManifest {
        code_version: VERSION.to_string(),
        subcommand: name.to_string(),
        params: ctx.params,
        numerics: ctx.numerics.clone(),
        seed: ctx.seed,
        outputs,
        wall_time_secs: ctx.started.elapsed().as_secs_f64(),
        stage_timings: ctx.stage_timings.clone(),
        iterations,
        task_json: Some(
            serde_json::to_string(task).map_err(|e| StopwellError::Config(e.to_string()))?,
        ),
    };
    manifest.save(&ctx.out_dir.join(format!("manifest_{name}.json")))?;
    Ok(())
}

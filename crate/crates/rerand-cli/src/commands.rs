use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rerand::asymlaw::{draw_moments, sample_constrained, scheme_law_multi_arm, scheme_law_two_arm, ConstrainedLaw};
use rerand::balance::{evaluate, BalanceReport, BalanceScheme, ExperimentFrame};
use rerand::design::{rerandomize, RngStream};
use rerand::estimate::{
    estimate_multi_arm, estimate_two_arm, plugin_inference, plugin_inference_multi_arm, Contrast, EffectEstimate, Kind,
};
use rerand::numerics::{quantile, rho, DistributionId};
use rerand::sim::{
    generate_population, histogram, run_replications, run_rerandomized, save_histogram, save_json, save_records,
    summarize, PopulationSpec, Provenance, ReplicationConfig, POPULATION_STREAM,
};
use serde::Serialize;

use crate::io::{
    assignment_from_labels, parse_arms, read_assignment, read_contrast, read_covariates, read_json, read_outcome_data,
    read_scheme, write_json,
};

#[derive(Serialize)]
struct RandomizeOutput {
    unit_ids: Vec<String>,
    /// Arm labels `1..=Q`; for two arms, 1 is treatment and 2 is control.
    assignment: Vec<usize>,
    arm_sizes: Vec<usize>,
    seed: u64,
    draws_used: u64,
    acceptance_rate_estimate: f64,
    report: BalanceReport,
    scheme: BalanceScheme,
}

pub fn randomize(covariates: &Path, arms: &str, scheme: &Path, seed: u64, max_draws: u64, out: &Path) -> Result<()> {
    let cov = read_covariates(covariates)?;
    let sizes = parse_arms(arms)?;
    let scheme = read_scheme(scheme)?;
    let frame = ExperimentFrame::new(cov.x, sizes.clone())?;
    let result = rerandomize(&frame, &scheme, &RngStream::new(seed, 0), max_draws)?;
    log::info!(
        "accepted draw {} (acceptance rate estimate {:.4})",
        result.draws_used,
        result.acceptance_rate_estimate
    );
    write_json(
        out,
        &RandomizeOutput {
            unit_ids: cov.unit_ids,
            assignment: result.assignment.arms().iter().map(|a| a + 1).collect(),
            arm_sizes: sizes,
            seed,
            draws_used: result.draws_used,
            acceptance_rate_estimate: result.acceptance_rate_estimate,
            report: result.report,
            scheme: result.scheme,
        },
    )
}

pub fn check(covariates: &Path, assignment: &Path, scheme: &Path, out: &Path) -> Result<()> {
    let cov = read_covariates(covariates)?;
    let labels = read_assignment(assignment, &cov.unit_ids)?;
    let (a, sizes) = assignment_from_labels(&labels)?;
    let scheme = read_scheme(scheme)?;
    let frame = ExperimentFrame::new(cov.x, sizes)?;
    let report = evaluate(&frame, &a, &scheme)?;
    log::info!("accepted: {}", report.accepted);
    write_json(out, &report)
}

pub struct EstimateArgs<'a> {
    pub data: &'a Path,
    pub kind: Kind,
    pub contrast: Option<&'a Path>,
    pub plugin: bool,
    pub scheme: Option<&'a Path>,
    pub level: f64,
    pub law_draws: usize,
    pub seed: u64,
    pub out: &'a Path,
}

pub fn estimate(args: EstimateArgs) -> Result<()> {
    let data = read_outcome_data(args.data)?;
    let (a, sizes) = assignment_from_labels(&data.labels)?;
    let q = sizes.len();
    let frame = ExperimentFrame::new(data.x, sizes)?;
    let contrast = args
        .contrast
        .map(read_contrast)
        .transpose()?
        .map(Contrast::new)
        .transpose()?;
    if let Some(g) = &contrast {
        ensure!(
            g.matrix().ncols() == q,
            "contrast has {} columns for {q} arms",
            g.matrix().ncols()
        );
    }
    let scheme = match (args.plugin, args.scheme) {
        (true, Some(p)) => Some(read_scheme(p)?),
        (true, None) => bail!("--plugin requires --scheme"),
        (false, _) => None,
    };
    let stream = RngStream::new(args.seed, 0);
    let mut result: EffectEstimate = if q == 2 && contrast.is_none() {
        let mut est = estimate_two_arm(&frame, &a, &data.y, args.kind, args.level)?;
        if let Some(s) = &scheme {
            est.plugin_ci = Some(vec![plugin_inference(
                &est,
                &frame,
                s,
                args.level,
                args.law_draws,
                &stream,
            )?]);
        }
        est
    } else {
        let arm = estimate_multi_arm(&frame, &a, &data.y, args.kind, args.level)?;
        match (&contrast, &scheme) {
            (Some(g), Some(s)) => {
                let ci = plugin_inference_multi_arm(&arm, &frame, s, g, args.level, args.law_draws, &stream)?;
                let mut est = arm.contrast(g)?;
                est.plugin_ci = Some(ci);
                est
            }
            (Some(g), None) => arm.contrast(g)?,
            (None, Some(_)) => bail!("plug-in inference with more than two arms needs --contrast"),
            (None, None) => arm,
        }
    };
    result.level = args.level;
    write_json(args.out, &result)
}

pub struct SimulateArgs<'a> {
    pub spec: &'a Path,
    pub schemes: &'a Path,
    pub reps: u64,
    pub seed: u64,
    pub outdir: &'a Path,
    pub rerandomize: bool,
    pub plugin_draws: Option<usize>,
    pub threads: Option<usize>,
    pub bins: usize,
    pub level: f64,
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    ensure!(args.reps >= 1, "--reps must be at least 1");
    let spec: PopulationSpec = read_json(args.spec)?;
    let schemes: Vec<BalanceScheme> = read_json(args.schemes)?;
    let mut ids = HashSet::new();
    for s in &schemes {
        ensure!(s.label() != rerand::sim::CRE, "scheme id 'cre' is reserved");
        ensure!(
            ids.insert(s.label()),
            "duplicate scheme id '{}'; set distinct \"id\" fields",
            s.label()
        );
    }
    let pop = generate_population(&spec, &RngStream::new(args.seed, POPULATION_STREAM))?;
    let cfg = ReplicationConfig {
        level: args.level,
        parallelism: args.threads,
        plugin_draws: args.plugin_draws,
        ..Default::default()
    };
    let records = if args.rerandomize {
        let mut all = run_replications(&pop, &[], args.reps, args.seed, &cfg)?;
        for s in &schemes {
            log::info!("rerandomizing under {}", s.label());
            all.extend(run_rerandomized(&pop, s, args.reps, args.seed, &cfg)?);
        }
        all
    } else {
        run_replications(&pop, &schemes, args.reps, args.seed, &cfg)?
    };
    let provenance = Provenance {
        master_seed: args.seed,
        n_reps: args.reps,
        rep_stream: "replication r uses stream r of the master seed".into(),
        population_seed: args.seed,
        population_stream: POPULATION_STREAM,
        tau: pop.tau()?[0],
    };
    fs::create_dir_all(args.outdir).with_context(|| format!("cannot create {}", args.outdir.display()))?;
    let path = |name: &str| -> PathBuf { args.outdir.join(name) };
    save_records(&path("records.csv"), &records)?;
    save_histogram(&path("histogram.csv"), &histogram(&records, args.bins))?;
    let summary = summarize(&records, provenance)?;
    save_json(&path("summary.json"), &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct LawOutput {
    j: usize,
    alpha0: f64,
    /// Chi-square threshold with `j` degrees of freedom.
    a0: f64,
    rho: f64,
    draws: usize,
    rho_sampled: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    scheme: Option<SchemeLaw>,
}

#[derive(Serialize)]
struct SchemeLaw {
    scheme: BalanceScheme,
    dim: usize,
    constrained: bool,
    /// Per-component variance of the constrained variable.
    component_variance: Vec<f64>,
    /// Limiting variance of each scaled covariate-imbalance component under
    /// the scheme, relative to complete randomization.
    imbalance_variance_ratio: Vec<f64>,
}

pub struct LawArgs<'a> {
    pub j: usize,
    pub alpha0: f64,
    pub scheme: Option<&'a Path>,
    pub covariates: Option<&'a Path>,
    pub arms: Option<&'a str>,
    pub draws: usize,
    pub seed: u64,
    pub out: &'a Path,
}

pub fn law(args: LawArgs) -> Result<()> {
    ensure!(args.j >= 1, "--j must be at least 1");
    ensure!(args.alpha0 > 0.0 && args.alpha0 < 1.0, "--alpha0 must lie in (0, 1)");
    ensure!(args.draws >= 100, "--draws must be at least 100");
    let a0 = quantile(DistributionId::ChiSquare { df: args.j }, 1.0 - args.alpha0)?;
    let stream = RngStream::new(args.seed, 0);
    let ball = sample_constrained(&ConstrainedLaw::ball(args.j, a0)?, args.draws, &stream)?;
    let rho_sampled = ball.column_iter().map(|c| c.norm_squared()).sum::<f64>() / (args.draws * args.j) as f64;
    let scheme = match (args.scheme, args.covariates) {
        (None, None) => None,
        (Some(s), Some(c)) => Some(scheme_law(s, c, args.arms, args.j, args.draws, &stream.derive(1))?),
        _ => bail!("--scheme and --covariates must be given together"),
    };
    write_json(
        args.out,
        &LawOutput {
            j: args.j,
            alpha0: args.alpha0,
            a0,
            rho: rho(args.j, a0),
            draws: args.draws,
            rho_sampled,
            scheme,
        },
    )
}

fn scheme_law(
    scheme: &Path,
    covariates: &Path,
    arms: Option<&str>,
    j: usize,
    draws: usize,
    stream: &RngStream,
) -> Result<SchemeLaw> {
    let scheme = read_scheme(scheme)?;
    let cov = read_covariates(covariates)?;
    ensure!(
        cov.x.ncols() == j,
        "--j is {j} but the covariate file has {} columns",
        cov.x.ncols()
    );
    let sizes = match arms {
        Some(a) => parse_arms(a)?,
        None => bail!("--arms is required with --scheme"),
    };
    let frame = ExperimentFrame::new(cov.x, sizes)?;
    let (law, map) = if frame.arms() == 2 {
        scheme_law_two_arm(&frame, &scheme)?
    } else {
        scheme_law_multi_arm(&frame, &scheme)?
    };
    let t = sample_constrained(&law, draws, stream)?;
    let (_, var) = draw_moments(&t);
    let (_, mapped_var) = draw_moments(&(&map * &t));
    let free = law.cov.congruence(&map);
    let ratio = (0..map.nrows())
        .map(|k| {
            if free[(k, k)] > 0.0 {
                mapped_var[k] / free[(k, k)]
            } else {
                1.0
            }
        })
        .collect();
    Ok(SchemeLaw {
        dim: law.dim(),
        constrained: law.is_constrained(),
        component_variance: var.iter().copied().collect(),
        imbalance_variance_ratio: ratio,
        scheme,
    })
}

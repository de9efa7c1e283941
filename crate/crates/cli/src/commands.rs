//! Subcommand implementations. Every artifact carries the config hash and
//! the master seed.

use std::fs;
use std::path::{Path, PathBuf};

use bmp_core::harness::{self, ClaimRecord, RunConfig, VerificationReport};
use bmp_core::model::{ATarget, BetaPolicy, DesignBlock, FiniteModel, JordanDesign};
use bmp_core::moments::{
    beta_cross, first_moment, rho_cross, sigma_cross, var_h_infinity, variance,
};
use bmp_core::provenance::hash_json;
use bmp_core::quadrature::Estimate;
use bmp_core::sim::{observe_real, run_replicates, SimOptions};
use bmp_core::{classify_function, from_jordan_design, spectral_decompose, FunctionOnE, Regime, SpectralDecomposition};
use serde::Serialize;
use serde_json::json;

use crate::config::{CheckSpec, ExperimentConfig, LimitRequest};
use crate::{CliError, Common};

struct Context {
    cfg: ExperimentConfig,
    model: FiniteModel,
    hash: String,
    seed: u64,
    out: PathBuf,
    /// `--replicates`, which beats every per-check count.
    replicates_flag: Option<usize>,
}

impl Context {
    fn decompose(&self) -> Result<SpectralDecomposition, CliError> {
        spectral_decompose(&self.model).map_err(CliError::from)
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    fn csv_preamble(&self) -> String {
        format!("# config_hash={}\n# master_seed={}\n", self.hash, self.seed)
    }

    fn sim_options(&self) -> SimOptions {
        match self.cfg.population_cap {
            Some(cap) => SimOptions { population_cap: cap },
            None => SimOptions::default(),
        }
    }
}

fn setup(c: &Common) -> Result<Context, CliError> {
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (mut cfg, base) = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = Some(s);
    }
    if let Some(r) = c.replicates {
        cfg.replicates = Some(r);
    }
    let hash = hash_json(&cfg);
    let seed = cfg.seed();
    let model = cfg.model(&base)?;
    fs::create_dir_all(&c.out).map_err(|e| CliError::Io(format!("{}: {e}", c.out.display())))?;
    Ok(Context {
        cfg,
        model,
        hash,
        seed,
        out: c.out.clone(),
        replicates_flag: c.replicates,
    })
}

/// A design whose Jordan form reproduces the decomposition; feeding it back
/// through `from_jordan_design` gives the same spectrum.
fn export_design(model: &FiniteModel, decomp: &SpectralDecomposition) -> Result<JordanDesign, CliError> {
    let n = model.n();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut blocks = Vec::new();
    for b in &decomp.blocks {
        let mu = -b.lambda;
        if b.is_real() {
            for l in 0..b.n_k() {
                columns.push((0..n).map(|x| b.phi[(x, l)].re).collect());
            }
            blocks.push(DesignBlock::real(mu.re, &b.chains));
        } else if mu.im > 0.0 {
            for l in 0..b.n_k() {
                columns.push((0..n).map(|x| b.phi[(x, l)].re).collect());
                columns.push((0..n).map(|x| b.phi[(x, l)].im).collect());
            }
            blocks.push(DesignBlock::pair(mu.re, mu.im, &b.chains));
        }
    }
    let p: Vec<Vec<f64>> = (0..n).map(|x| columns.iter().map(|c| c[x]).collect()).collect();
    let max_alpha = model.alpha.iter().fold(0.0f64, |a, v| a.max(*v));
    let beta = model.beta.iter().fold(0.0f64, |a, v| a.max(*v));
    let exact = JordanDesign {
        p: p.clone(),
        blocks: blocks.clone(),
        a_target: ATarget::PerState(model.a.clone()),
        beta_policy: BetaPolicy::ThreePoint {
            margin: (beta - max_alpha).max(0.0),
        },
        m: model.m.clone(),
        states: model.states.clone(),
    };
    if from_jordan_design(&exact).is_ok() {
        return Ok(exact);
    }
    // the branching mechanism is not three-point; keep the mean generator
    // and pick any realizable second moment
    let deficit = model.alpha.iter().fold(0.0f64, |a, v| a.max(-v));
    let fallback = JordanDesign {
        a_target: ATarget::PerState(model.alpha.iter().map(|a| (2.0 * a).max(0.0)).collect()),
        beta_policy: BetaPolicy::ThreePoint { margin: 1.0 + deficit },
        ..exact
    };
    from_jordan_design(&fallback)?;
    Ok(fallback)
}

pub fn spectrum(c: &Common) -> Result<(), CliError> {
    let ctx = setup(c)?;
    let decomp = ctx.decompose()?;
    let blocks: Vec<_> = decomp
        .blocks
        .iter()
        .enumerate()
        .map(|(k, b)| {
            json!({
                "index": k + 1,
                "lambda": [b.lambda.re, b.lambda.im],
                "chains": b.chains,
                "regime": decomp.block_regime(k),
                "conj_partner": b.conj_partner + 1,
                "phi_re": (0..b.n_k()).map(|l| (0..decomp.n()).map(|x| b.phi[(x, l)].re).collect::<Vec<_>>()).collect::<Vec<_>>(),
                "phi_im": (0..b.n_k()).map(|l| (0..decomp.n()).map(|x| b.phi[(x, l)].im).collect::<Vec<_>>()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let doc = json!({
        "config_hash": ctx.hash,
        "master_seed": ctx.seed,
        "states": ctx.model.states,
        "lambda1": decomp.lambda1(),
        "biorthogonality_residual": decomp.biorthogonality_residual(),
        "phi1": decomp.phi1,
        "psi1": decomp.psi1,
        "m": decomp.m,
        "blocks": blocks,
        "design": export_design(&ctx.model, &decomp)?,
    });
    ctx.write_json("spectrum.json", &doc)?;
    println!(
        "lambda_1 = {:.12}; {} blocks; biorthogonality residual {:.3e}",
        decomp.lambda1(),
        decomp.blocks.len(),
        decomp.biorthogonality_residual()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.17e}"))
}

pub fn moments(c: &Common) -> Result<(), CliError> {
    let ctx = setup(c)?;
    let decomp = ctx.decompose()?;
    let name = ctx.cfg.function.clone().unwrap_or_else(|| "f".into());
    let f = if ctx.cfg.functions.contains_key(&name) {
        ctx.cfg.resolve(&name, &decomp)?
    } else if ctx.cfg.function.is_none() && ctx.cfg.functions.is_empty() {
        FunctionOnE::constant(ctx.model.n(), 1.0)
    } else {
        return Err(CliError::Config(format!("unknown function `{name}`")));
    };
    let nu = ctx.cfg.nu(ctx.model.n())?;
    let profile = classify_function(&decomp, &f, bmp_core::profile::DEFAULT_COEFF_TOL);
    let quad = &ctx.cfg.quadrature;
    let limit = match (ctx.cfg.limit, profile.regime) {
        (LimitRequest::None, _) => None,
        (LimitRequest::Auto, Regime::Large) => None,
        (LimitRequest::Sigma | LimitRequest::Auto, Regime::Small) => Some(sigma_cross(&decomp, &ctx.model, &f, &f, quad)?.value),
        (LimitRequest::Rho | LimitRequest::Auto, Regime::Critical) => Some(rho_cross(&decomp, &ctx.model, &f, &f)?),
        (LimitRequest::Sigma, r) | (LimitRequest::Rho, r) => {
            return Err(CliError::Math(format!(
                "WrongRegime: requested {:?} limit but `{name}` is in the {r:?} regime",
                ctx.cfg.limit
            )))
        }
    };
    let phi1_nu: f64 = nu.iter().zip(&decomp.phi1).map(|(c, p)| *c as f64 * p).sum();
    let mut csv = ctx.csv_preamble();
    csv.push_str("t,mean,variance,normalized_variance,predicted_limit\n");
    for &t in &ctx.cfg.t {
        let mean = first_moment(&ctx.model, &nu, &f, t)?.re;
        let var = variance(&ctx.model, &nu, &f, t)?;
        let normalized = limit.map(|_| {
            let mut s = (decomp.lambda1() * t).exp() / phi1_nu;
            if profile.regime == Regime::Critical {
                s *= t.powi(-(1 + 2 * profile.tau as i32));
            }
            var * s
        });
        csv.push_str(&format!(
            "{t},{mean:.17e},{var:.17e},{},{}\n",
            fmt_opt(normalized),
            fmt_opt(limit)
        ));
    }
    ctx.write("moments.csv", &csv)?;
    println!("wrote {} rows to {}", ctx.cfg.t.len(), ctx.out.join("moments.csv").display());
    Ok(())
}

fn estimate_json(e: &Estimate) -> serde_json::Value {
    json!({"value": e.value, "error_budget": e.error_budget})
}

pub fn limits(c: &Common) -> Result<(), CliError> {
    let ctx = setup(c)?;
    let decomp = ctx.decompose()?;
    let quad = &ctx.cfg.quadrature;
    let mut entries = Vec::new();
    let mut resolved = Vec::new();
    for name in ctx.cfg.functions.keys() {
        let f = ctx.cfg.resolve(name, &decomp)?;
        let p = classify_function(&decomp, &f, bmp_core::profile::DEFAULT_COEFF_TOL);
        let mut entry = json!({
            "name": name,
            "values": f.re(),
            "gamma": p.gamma.map(|g| g + 1),
            "zeta": p.zeta.map(|z| z + 1),
            "tau": p.tau,
            "regime": p.regime,
        });
        let pure = p.support().iter().all(|&j| decomp.block_regime(j) == p.regime);
        if !p.is_zero() && pure {
            match p.regime {
                Regime::Small => entry["sigma_sq"] = estimate_json(&sigma_cross(&decomp, &ctx.model, &f, &f, quad)?),
                Regime::Critical => entry["rho_sq"] = json!(rho_cross(&decomp, &ctx.model, &f, &f)?),
                Regime::Large => {
                    entry["beta_sq"] = estimate_json(&beta_cross(&decomp, &ctx.model, &f, &f, quad)?);
                    let var_h: Vec<_> = (0..ctx.model.n())
                        .map(|x| var_h_infinity(&decomp, &ctx.model, &f, x, quad).map(|h| json!(h)))
                        .collect::<Result<_, _>>()?;
                    entry["var_h_infinity"] = json!(var_h);
                }
            }
        } else if !p.is_zero() {
            entry["note"] = json!("function mixes regimes; no single limit variance");
        }
        resolved.push((name.clone(), f, p.regime, pure && !p.is_zero()));
        entries.push(entry);
    }
    let mut pairs = Vec::new();
    for i in 0..resolved.len() {
        for j in i + 1..resolved.len() {
            let (a, fa, ra, ok_a) = &resolved[i];
            let (b, fb, rb, ok_b) = &resolved[j];
            if !(*ok_a && *ok_b && ra == rb) {
                continue;
            }
            let value = match ra {
                Regime::Small => sigma_cross(&decomp, &ctx.model, fa, fb, quad)?.value,
                Regime::Critical => rho_cross(&decomp, &ctx.model, fa, fb)?,
                Regime::Large => beta_cross(&decomp, &ctx.model, fa, fb, quad)?.value,
            };
            pairs.push(json!({"a": a, "b": b, "regime": ra, "cross": value}));
        }
    }
    let doc = json!({
        "config_hash": ctx.hash,
        "master_seed": ctx.seed,
        "lambda1": decomp.lambda1(),
        "functions": entries,
        "pairs": pairs,
    });
    ctx.write_json("limits.json", &doc)?;
    println!("wrote {}", ctx.out.join("limits.json").display());
    Ok(())
}

pub fn simulate(c: &Common) -> Result<(), CliError> {
    let ctx = setup(c)?;
    if ctx.cfg.t.is_empty() {
        return Err(CliError::Config("simulate needs at least one checkpoint time in `t`".into()));
    }
    let mut checkpoints = ctx.cfg.t.clone();
    checkpoints.sort_by(f64::total_cmp);
    let nu = ctx.cfg.nu(ctx.model.n())?;
    let replicates = ctx.cfg.replicates.unwrap_or(1).max(1);
    let ens = if replicates == 1 {
        let rec = bmp_core::sim::simulate(&ctx.model, &nu, *checkpoints.last().expect("non-empty"), &checkpoints, ctx.seed)?;
        bmp_core::sim::Ensemble {
            checkpoints: checkpoints.clone(),
            master_seed: ctx.seed,
            replicates: vec![rec.checkpoints],
        }
    } else {
        run_replicates(&ctx.model, &nu, &checkpoints, replicates, ctx.seed, &ctx.sim_options())?
    };
    let mut csv = ctx.csv_preamble();
    csv.push_str("replicate,time");
    for s in &ctx.model.states {
        csv.push(',');
        csv.push_str(s);
    }
    csv.push_str(",killed\n");
    for (r, rep) in ens.replicates.iter().enumerate() {
        for snap in rep {
            csv.push_str(&format!("{r},{}", snap.time));
            for c in &snap.counts {
                csv.push_str(&format!(",{c}"));
            }
            csv.push_str(&format!(",{}\n", snap.killed_mass));
        }
    }
    ctx.write("trajectories.csv", &csv)?;
    // W needs the spectrum; a reducible model still gets its trajectories
    let decomp = spectral_decompose(&ctx.model).ok();
    let mut functions = Vec::new();
    if let Some(d) = &decomp {
        for name in ctx.cfg.functions.keys() {
            functions.push((name.clone(), ctx.cfg.resolve(name, d)?.re()));
        }
    }
    let summaries: Vec<_> = ens
        .checkpoints
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let snaps: Vec<_> = ens.at(k).collect();
            let mean_counts: Vec<f64> = (0..ctx.model.n())
                .map(|x| snaps.iter().map(|s| s.counts[x] as f64).sum::<f64>() / snaps.len() as f64)
                .collect();
            let totals: Vec<f64> = snaps.iter().map(|s| s.total() as f64).collect();
            let mut entry = json!({
                "t": t,
                "mean_counts": mean_counts,
                "mean_total": bmp_core::stats::mean(&totals),
                "extinct_fraction": totals.iter().filter(|v| **v == 0.0).count() as f64 / totals.len() as f64,
            });
            if let Some(d) = &decomp {
                let w: Vec<f64> = snaps.iter().map(|s| (d.lambda1() * t).exp() * observe_real(s, &d.phi1)).collect();
                entry["mean_w"] = json!(bmp_core::stats::mean(&w));
                let per_fn: Vec<_> = functions
                    .iter()
                    .map(|(name, f)| {
                        let v: Vec<f64> = snaps.iter().map(|s| observe_real(s, f)).collect();
                        json!({"name": name, "mean": bmp_core::stats::mean(&v), "variance": bmp_core::stats::variance(&v)})
                    })
                    .collect();
                entry["functions"] = json!(per_fn);
            }
            entry
        })
        .collect();
    let doc = json!({
        "config_hash": ctx.hash,
        "master_seed": ctx.seed,
        "model_hash": bmp_core::sim::model_hash(&ctx.model),
        "nu": nu,
        "replicates": ens.len(),
        "checkpoints": summaries,
    });
    ctx.write_json("ensemble.json", &doc)?;
    println!("simulated {} replicates to {}", ens.len(), ctx.out.display());
    Ok(())
}

fn default_t_est(decomp: &SpectralDecomposition, g: &FunctionOnE, t: f64) -> f64 {
    let p = classify_function(decomp, g, bmp_core::profile::DEFAULT_COEFF_TOL);
    let max_re = p
        .support()
        .iter()
        .map(|&j| decomp.blocks[j].re())
        .fold(f64::NEG_INFINITY, f64::max);
    let gap = decomp.lambda1() - 2.0 * max_re;
    if gap > 0.0 {
        t + 10.0 / gap
    } else {
        2.0 * t
    }
}

fn run_check(
    ctx: &Context,
    decomp: &SpectralDecomposition,
    check: &CheckSpec,
    index: usize,
) -> Result<VerificationReport, CliError> {
    let cfg = &ctx.cfg;
    let nu = cfg.nu(ctx.model.n())?;
    let seed = ctx.seed.wrapping_add(index as u64);
    let run = |t: f64, replicates: &Option<usize>| {
        let n = ctx.replicates_flag.or(*replicates).or(cfg.replicates).unwrap_or(1000);
        let mut r = RunConfig::new(&nu, t, n, seed);
        r.quad = cfg.quadrature;
        r.tol = cfg.tolerances;
        r.sim = ctx.sim_options();
        r
    };
    let get = |name: &str| cfg.resolve(name, decomp);
    let m = &ctx.model;
    let report = match check {
        CheckSpec::Lln { f, t_grid, replicates } => {
            let last = t_grid.last().copied().unwrap_or(0.0);
            harness::verify_lln(m, decomp, &get(f)?, t_grid, &run(last, replicates))
        }
        CheckSpec::CltSmall { f, t, replicates } => harness::verify_clt_small(m, decomp, &get(f)?, &run(*t, replicates)),
        CheckSpec::CltCritical { h, t, replicates } => {
            harness::verify_clt_critical(m, decomp, &get(h)?, &run(*t, replicates))
        }
        CheckSpec::CltLarge { g, t, t_est, replicates } => {
            let g = get(g)?;
            let t_est = t_est.unwrap_or_else(|| default_t_est(decomp, &g, *t));
            harness::verify_clt_large(m, decomp, &g, t_est, &run(*t, replicates))
        }
        CheckSpec::Joint { g, h, f, t, t_est, replicates } => {
            let g = get(g)?;
            let t_est = t_est.unwrap_or_else(|| default_t_est(decomp, &g, *t));
            harness::verify_joint(m, decomp, &g, &get(h)?, &get(f)?, t_est, &run(*t, replicates))
        }
        CheckSpec::Pair { regime, a, b, t, t_est, replicates } => {
            let a = get(a)?;
            let t_est = t_est.unwrap_or_else(|| default_t_est(decomp, &a, *t));
            harness::verify_pair(m, decomp, *regime, &a, &get(b)?, t_est, &run(*t, replicates))
        }
        CheckSpec::MartingaleMeans { t, replicates } => harness::verify_martingale_means(m, decomp, &run(*t, replicates)),
    };
    report.map_err(CliError::from)
}

pub fn verify(c: &Common) -> Result<(), CliError> {
    let ctx = setup(c)?;
    if ctx.cfg.checks.is_empty() {
        return Err(CliError::Config("no checks configured".into()));
    }
    let decomp = ctx.decompose()?;
    let mut report = VerificationReport::new("verify", ctx.hash.clone(), ctx.seed, ctx.cfg.replicates.unwrap_or(0));
    for (i, check) in ctx.cfg.checks.iter().enumerate() {
        match run_check(&ctx, &decomp, check, i) {
            Ok(r) => report.absorb(r),
            Err(CliError::Math(msg)) => {
                let id = format!("check-{}", i + 1);
                report.claims.push(ClaimRecord::failed(&id, "check could not be evaluated", f64::NAN, &msg));
            }
            Err(e) => return Err(e),
        }
    }
    write_report(&ctx, &report, &ctx.out)?;
    let failed: Vec<&str> = report.claims.iter().filter(|c| !c.pass).map(|c| c.id.as_str()).collect();
    println!(
        "{} claims, {} failed; report in {}",
        report.claims.len(),
        failed.len(),
        ctx.out.display()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Math(format!("failed claims: {}", failed.join(", "))))
    }
}

fn write_report(ctx: &Context, report: &VerificationReport, _out: &Path) -> Result<(), CliError> {
    ctx.write("report.json", &(report.to_json() + "\n"))?;
    ctx.write("report.md", &report.to_markdown())
}

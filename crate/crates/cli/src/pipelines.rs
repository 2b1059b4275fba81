//! The named experiment pipelines. Each returns its tables in memory; the
//! command layer writes them out.

use anyhow::Result;

use perfolab_core::capacity::{covering_cap_upper, grid_capacity};
use perfolab_core::chain::{check_covering_sets, Chain, CheckRow};
use perfolab_core::covering::{build_covering, verify_covering, Covering};
use perfolab_core::exec;
use perfolab_core::extension::{
    compute_extension_constants, nested_cluster_covering, smooth_source, verify_extension, SourceField,
};
use perfolab_core::geometry::Ball;
use perfolab_core::point_process::{sample_realization, write_realization, DomainSpec, MarkedRealization};
use perfolab_core::region::Region;
use perfolab_core::rng::mix;
use perfolab_core::stokes::{
    div_solve, mask_from_balls, mask_from_region, modified_pressure, solve_brinkman, solve_stokes, strange_term,
    velocity_pairing, weak_pairing, BrinkmanCoefficient, Bump, Grid, SolverOptions, StaggeredField,
};
use perfolab_core::Error;

use crate::config::ExperimentConfig;
use crate::output::{eps_tag, num, quote, Table};

/// Tables and files produced by one pipeline, plus its verdict.
#[derive(Debug, Default)]
pub struct Outcome {
    /// (relative path, table)
    pub tables: Vec<(String, Table)>,
    /// (relative path, raw text) for per-realization dumps.
    pub files: Vec<(String, String)>,
    pub violations: usize,
    /// Solves that failed and were recorded as `nan` rows.
    pub numeric_errors: usize,
}

/// `(ε index, seed)` tasks in deterministic order.
fn tasks(epsilons: &[f64], seeds: &[u64]) -> Vec<(usize, u64)> {
    (0..epsilons.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect()
}

pub fn realization(cfg: &ExperimentConfig, eps: f64, seed: u64) -> Result<MarkedRealization> {
    Ok(sample_realization(cfg.domain.spec(), cfg.d, cfg.lambda, cfg.radius_law(), eps, seed)?)
}

pub fn pde_realization(cfg: &ExperimentConfig, eps: f64, seed: u64) -> Result<MarkedRealization> {
    Ok(sample_realization(DomainSpec::Cube { half_width: 0.5 }, 3, cfg.pde.lambda, cfg.pde_law(), eps, seed)?)
}

/// Realizations per (ε, seed) and a count table.
pub fn generate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seeds = cfg.seeds.seeds();
    let ts = tasks(&cfg.epsilons, &seeds);
    let hash = cfg.hash();
    let results = exec::map_indices(ts.len(), |t| {
        let (i, seed) = ts[t];
        realization(cfg, cfg.epsilons[i], seed)
    });
    let mut out = Outcome::default();
    let mut counts = Table::new(&["epsilon", "seed", "points", "expected"]);
    for ((i, seed), r) in ts.iter().zip(results) {
        let r = r?;
        let eps = cfg.epsilons[*i];
        let expected = cfg.lambda * cfg.domain.spec().volume(cfg.d) / eps.powi(cfg.d as i32);
        counts.push(vec![num(eps), seed.to_string(), r.len().to_string(), num(expected)]);
        let text = write_realization(&r, &[format!("config_hash={hash} seed={seed}")]);
        out.files.push((format!("realizations/eps{}_seed{seed}.txt", eps_tag(eps)), text));
    }
    out.tables.push(("counts.csv".into(), counts));
    Ok(out)
}

/// Per (ε, seed) result of the covering pipeline.
#[derive(Clone, Debug)]
pub struct CoverRun {
    pub epsilon: f64,
    pub seed: u64,
    pub points: usize,
    pub good: usize,
    pub bad: usize,
    pub members: usize,
    pub rounds: usize,
    pub checks: Vec<(String, usize, usize, Option<String>)>,
    pub identities: Vec<CheckRow>,
    pub covering_text: String,
}

pub fn cover_run(cfg: &ExperimentConfig, eps: f64, seed: u64) -> Result<CoverRun> {
    let r = realization(cfg, eps, seed)?;
    let c = build_covering(&r, &cfg.covering_params())?;
    let report = verify_covering(&c);
    let chain = Chain::build(&c);
    let identities = check_covering_sets(&c, &chain, cfg.budgets.identity_samples, cfg.budgets.samples_per_ball, mix(seed, 0x4c45));
    Ok(CoverRun {
        epsilon: eps,
        seed,
        points: r.len(),
        good: c.good.len(),
        bad: c.bad.len(),
        members: c.members.len(),
        rounds: c.rounds,
        checks: report.checks.iter().map(|k| (k.name.to_string(), k.checked, k.violations, k.first_violation.clone())).collect(),
        identities,
        covering_text: c.to_text(),
    })
}

/// Covering construction, exact verification and the set-algebra checks.
pub fn cover_verify(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seeds = cfg.seeds.seeds();
    let ts = tasks(&cfg.epsilons, &seeds);
    let runs = exec::map_indices(ts.len(), |t| cover_run(cfg, cfg.epsilons[ts[t].0], ts[t].1));
    let mut out = Outcome::default();
    let mut summary = Table::new(&["epsilon", "seed", "points", "good", "bad", "members", "rounds", "scaled_good"]);
    let mut checks = Table::new(&["epsilon", "seed", "property", "checked", "violations", "first_violation"]);
    let mut ids = Table::new(&["epsilon", "seed", "check_id", "index", "value", "stderr", "violations", "samples", "mc_seed"]);
    for run in runs {
        let run = run?;
        let (e, s) = (num(run.epsilon), run.seed.to_string());
        let scaled = run.epsilon.powi(cfg.d as i32) * run.good as f64;
        summary.push(vec![
            e.clone(),
            s.clone(),
            run.points.to_string(),
            run.good.to_string(),
            run.bad.to_string(),
            run.members.to_string(),
            run.rounds.to_string(),
            num(scaled),
        ]);
        for (name, checked, violations, first) in &run.checks {
            out.violations += violations;
            checks.push(vec![
                e.clone(),
                s.clone(),
                name.clone(),
                checked.to_string(),
                violations.to_string(),
                quote(first.as_deref().unwrap_or("")),
            ]);
        }
        for r in &run.identities {
            out.violations += r.violations;
            ids.push(vec![
                e.clone(),
                s.clone(),
                r.check_id.clone(),
                quote(&r.index),
                num(r.value),
                num(r.stderr),
                r.violations.to_string(),
                r.samples.to_string(),
                r.seed.to_string(),
            ]);
        }
        out.files.push((format!("coverings/eps{}_seed{}.txt", eps_tag(run.epsilon), run.seed), run.covering_text));
    }
    out.tables.push(("covering.csv".into(), summary));
    out.tables.push(("covering_checks.csv".into(), checks));
    out.tables.push(("identities.csv".into(), ids));
    Ok(out)
}

/// Subadditive bound on the capacity of the covered bad set per (seed, ε),
/// plus the grid capacity of the unit ball against `4π`.
pub fn capacity_sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seeds = cfg.seeds.seeds();
    let ts: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| (0..cfg.epsilons.len()).map(move |i| (s, i))).collect();
    let params = cfg.covering_params();
    let runs = exec::map_indices(ts.len(), |t| -> Result<(f64, usize, usize)> {
        let (seed, i) = ts[t];
        let r = realization(cfg, cfg.epsilons[i], seed)?;
        let c = build_covering(&r, &params)?;
        let b = covering_cap_upper(&c)?;
        Ok((b.value, b.components, c.members.len()))
    });
    let mut table = Table::new(&["seed", "epsilon", "bound", "dilated_balls", "members"]);
    for (&(seed, i), r) in ts.iter().zip(runs) {
        let (v, comps, members) = r?;
        table.push(vec![seed.to_string(), num(cfg.epsilons[i]), num(v), comps.to_string(), members.to_string()]);
    }
    let mut out = Outcome::default();
    out.tables.push(("capacity.csv".into(), table));
    let cap = grid_capacity(&Region::ball(Ball::new(vec![0.0; 3], 1.0)), cfg.capacity_n, 3.0)?;
    let exact = 4.0 * std::f64::consts::PI;
    let mut cal = Table::new(&["n", "half_width", "energy", "corrected", "exact", "rel_error"]);
    cal.push(vec![
        cfg.capacity_n.to_string(),
        num(3.0),
        num(cap.energy),
        num(cap.corrected),
        num(exact),
        num((cap.corrected - exact).abs() / exact),
    ]);
    out.tables.push(("capacity_calibration.csv".into(), cal));
    Ok(out)
}

/// Linearity and scaling of the extension constants under a shared seed:
/// largest deviation relative to the largest constant involved.
pub fn extension_linearity(chain: &Chain, a: &SourceField, b: &SourceField, budget: usize, seed: u64) -> Result<(f64, f64)> {
    let fa = compute_extension_constants(chain, a, budget, seed)?;
    let fb = compute_extension_constants(chain, b, budget, seed)?;
    let sum = SourceField::sum(a, b);
    let fs = compute_extension_constants(chain, &sum, budget, seed)?;
    let scaled = a.scaled(-2.5);
    let fk = compute_extension_constants(chain, &scaled, budget, seed)?;
    let scale = fa.constants.iter().chain(&fb.constants).fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let lin = (0..fa.constants.len())
        .map(|p| (fs.constants[p] - fa.constants[p] - fb.constants[p]).abs())
        .fold(0.0, f64::max)
        / scale;
    let sc = (0..fa.constants.len()).map(|p| (fk.constants[p] + 2.5 * fa.constants[p]).abs()).fold(0.0, f64::max) / scale;
    Ok((lin, sc))
}

/// Relative tolerance for the linearity checks: the constants are linear
/// in the source sample by sample, so only rounding separates them.
pub const LINEARITY_TOL: f64 = 1e-9;

/// Extension checks on the hand-built nested clusters and on real
/// flow-scale coverings.
pub fn extension_verify(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seeds = cfg.seeds.seeds();
    let b = &cfg.budgets;
    let domain = DomainSpec::Cube { half_width: 0.5 };
    let shell = cfg.shell(0);
    let mut fixtures: Vec<(String, u64, Covering)> = Vec::new();
    for &seed in &seeds {
        fixtures.push(("nested".into(), seed, nested_cluster_covering(b.nested_clusters, seed)));
    }
    for (i, &eps) in cfg.pde.epsilons.iter().enumerate() {
        for &seed in &seeds {
            let r = pde_realization(cfg, eps, seed)?;
            let c = build_covering(&r, &cfg.pde_covering_params())?;
            fixtures.push((format!("eps{}", eps_tag(cfg.pde.epsilons[i])), seed, c));
        }
    }
    let mut table = Table::new(&["fixture", "seed", "source", "check_id", "index", "value", "stderr", "violations", "samples"]);
    let mut out = Outcome::default();
    let results = exec::map_indices(fixtures.len(), |t| -> Result<Vec<Vec<String>>> {
        let (name, seed, c) = &fixtures[t];
        let chain = Chain::build(c);
        let mut rows = Vec::new();
        let mut push = |src: String, r: &CheckRow| {
            rows.push(vec![
                name.clone(),
                seed.to_string(),
                src,
                r.check_id.clone(),
                quote(&r.index),
                num(r.value),
                num(r.stderr),
                r.violations.to_string(),
                r.samples.to_string(),
            ])
        };
        let mut sources = Vec::new();
        for s in 0..b.sources {
            let sseed = mix(*seed, 0x5300 + s as u64);
            let g = SourceField::recentered(
                domain,
                3,
                shell,
                cfg.pde.q,
                smooth_source(3, sseed),
                chain.e_eps(),
                b.extension_check_samples,
                mix(sseed, 1),
            )?;
            let f = compute_extension_constants(&chain, &g, b.extension_samples, mix(sseed, 2))?;
            let rep = verify_extension(&f, b.extension_check_samples, mix(sseed, 3));
            for r in &rep.rows {
                push(s.to_string(), r);
            }
            sources.push(g);
        }
        if sources.len() >= 2 {
            let (lin, sc) = extension_linearity(&chain, &sources[0], &sources[1], b.extension_samples, mix(*seed, 0x4c49))?;
            for (id, v) in [("linearity", lin), ("scaling", sc)] {
                let r = CheckRow {
                    check_id: id.into(),
                    index: "0+1".into(),
                    value: v,
                    stderr: 0.0,
                    violations: usize::from(!(v <= LINEARITY_TOL)),
                    samples: b.extension_samples,
                    seed: mix(*seed, 0x4c49),
                };
                push("pair".into(), &r);
            }
        }
        Ok(rows)
    });
    let viol = table.header.iter().position(|h| h == "violations").unwrap();
    for r in results {
        for row in r? {
            out.violations += row[viol].parse::<usize>().unwrap_or(1);
            table.push(row);
        }
    }
    out.tables.push(("extension.csv".into(), table));
    Ok(out)
}

/// Body force of the flow runs: a smooth field with both a gradient and a
/// solenoidal part, so that pressure and velocity are both nontrivial.
pub fn flow_force(x: &[f64; 3]) -> [f64; 3] {
    [(3.0 * x[1]).sin() + x[0], (2.0 * x[2]).cos(), x[0] * x[1]]
}

pub fn solver_options(cfg: &ExperimentConfig) -> SolverOptions {
    SolverOptions { tol: cfg.pde.tol, max_iter: cfg.pde.max_iter }
}

pub fn friction(cfg: &ExperimentConfig) -> Result<BrinkmanCoefficient> {
    Ok(match cfg.pde.mu {
        Some(mu) => BrinkmanCoefficient { mu },
        None => strange_term(cfg.pde.lambda, &cfg.pde_law(), 3)?,
    })
}

/// Flow-scale geometry for one (ε, seed).
pub struct FlowGeometry {
    pub holes: Vec<Ball>,
    pub chain: Chain,
}

pub fn flow_geometry(cfg: &ExperimentConfig, eps: f64, seed: u64) -> Result<FlowGeometry> {
    let r = pde_realization(cfg, eps, seed)?;
    let c = build_covering(&r, &cfg.pde_covering_params())?;
    let holes = c.holes.clone();
    Ok(FlowGeometry { holes, chain: Chain::build(&c) })
}

/// Fixed source pattern of the divergence probe.
pub const BOGOVSKII_PATTERN_SEED: u64 = 0xB0605;

/// Result of one divergence solve.
#[derive(Clone, Debug)]
pub struct BogovskiiProbe {
    pub ratio: f64,
    pub div_residual: f64,
    pub iterations: usize,
    pub support_cells: usize,
    pub warning: Option<String>,
}

/// `‖v‖_{H¹}/‖g‖_{L^q}` for the fixed smooth pattern restricted to the
/// cells of `D_r ∖ E^ε` and recentered there, with `v = 0` on `E^ε` and ∂D.
pub fn bogovskii_probe(cfg: &ExperimentConfig, geo: &FlowGeometry, shell: f64) -> Result<BogovskiiProbe> {
    let g = Grid::unit(cfg.pde.bogovskii_n);
    let e = geo.chain.e_eps();
    let masks = mask_from_region(e, &g);
    let pattern = smooth_source(3, BOGOVSKII_PATTERN_SEED);
    let hw = g.half_width();
    let support: Vec<bool> = (0..g.cells())
        .map(|c| {
            let x = g.cell_center(c);
            !masks.solid_cell[c] && hw - x.iter().fold(0.0f64, |m, v| m.max(v.abs())) > shell
        })
        .collect();
    let count = support.iter().filter(|&&s| s).count();
    if count == 0 {
        return Err(Error::Numeric("divergence probe support D_r ∖ E^ε has no cells".into()).into());
    }
    let mut rhs: Vec<f64> = (0..g.cells()).map(|c| if support[c] { pattern(&g.cell_center(c)) } else { 0.0 }).collect();
    let mean = rhs.iter().sum::<f64>() / count as f64;
    for (c, v) in rhs.iter_mut().enumerate() {
        if support[c] {
            *v -= mean;
        }
    }
    let (_, ratio, rep) = div_solve(&g, &masks, &rhs, cfg.pde.q, &solver_options(cfg))?;
    Ok(BogovskiiProbe { ratio, div_residual: rep.div_residual, iterations: rep.iterations, support_cells: count, warning: rep.warning })
}

/// Homogenized reference solution on the flow grid.
pub fn brinkman_reference(cfg: &ExperimentConfig) -> Result<StaggeredField> {
    let g = Grid::unit(cfg.pde.n);
    let (f, _) = solve_brinkman(&g, &friction(cfg)?, flow_force, &solver_options(cfg))?;
    Ok(f)
}

/// Gaps for one (ε, seed) against the Brinkman reference.
#[derive(Clone, Debug)]
pub struct FlowGaps {
    /// `|⟨p̃_ε − p_h, φ_b⟩|` per bump.
    pub pressure: [f64; 3],
    /// `|⟨u_ε − u_h, φ_b⟩|` per bump (Euclidean norm over components).
    pub velocity: [f64; 3],
    pub velocity_l2: f64,
    pub pressure_l2: f64,
    pub div_residual: f64,
    pub iterations: usize,
    pub warning: Option<String>,
}

pub fn flow_gaps(cfg: &ExperimentConfig, geo: &FlowGeometry, shell: f64, reference: &StaggeredField) -> Result<FlowGaps> {
    let g = Grid::unit(cfg.pde.n);
    let masks = mask_from_balls(&geo.holes, &g);
    let (u, rep) = solve_stokes(&g, &masks, flow_force, &solver_options(cfg))?;
    let e = geo.chain.e_eps();
    let e_mask: Vec<bool> = (0..g.cells()).map(|c| masks.solid_cell[c] || e.contains(&g.cell_center(c))).collect();
    let pt = modified_pressure(&u, &e_mask, shell)?;
    let dp: Vec<f64> = (0..g.cells()).map(|c| pt.values[c] - reference.p[c]).collect();
    let mut diff = u.clone();
    for a in 0..3 {
        for (d, r) in diff.u[a].iter_mut().zip(&reference.u[a]) {
            *d -= r;
        }
    }
    let bumps = Bump::battery();
    let pressure = std::array::from_fn(|b| weak_pairing(&g, &dp, |x| bumps[b].eval(x)).abs());
    let velocity = std::array::from_fn(|b| {
        let v = velocity_pairing(&diff, |x| bumps[b].eval(x));
        v.iter().map(|c| c * c).sum::<f64>().sqrt()
    });
    let h3 = g.h.powi(3);
    Ok(FlowGaps {
        pressure,
        velocity,
        velocity_l2: u.velocity_gap(reference),
        pressure_l2: (dp.iter().map(|v| v * v).sum::<f64>() * h3).sqrt(),
        div_residual: rep.div_residual,
        iterations: rep.iterations,
        warning: rep.warning,
    })
}

pub const CONVERGE_HEADER: [&str; 7] = ["epsilon", "seed", "n", "pairing_id", "pressure_gap", "velocity_gap", "bogovskii_ratio"];

/// Full flow pipeline per (ε, seed): Stokes in the perforated box, the
/// Brinkman reference with the strange term, the modified pressure, the
/// weak pairings and the divergence probe. A failed solve leaves `nan` in
/// its rows and a note, and the run continues.
pub fn converge(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seeds = cfg.seeds.seeds();
    let ts = tasks(&cfg.pde.epsilons, &seeds);
    let reference = brinkman_reference(cfg)?;
    let results = exec::map_indices(ts.len(), |t| -> Result<(Result<FlowGaps>, Result<BogovskiiProbe>)> {
        let (i, seed) = ts[t];
        let geo = flow_geometry(cfg, cfg.pde.epsilons[i], seed)?;
        let shell = cfg.shell(i);
        Ok((flow_gaps(cfg, &geo, shell, &reference), bogovskii_probe(cfg, &geo, shell)))
    });
    let mut table = Table::new(&CONVERGE_HEADER);
    let mut diag = Table::new(&["epsilon", "seed", "shell", "stokes_iterations", "stokes_div_residual", "bogovskii_iterations", "bogovskii_div_residual", "bogovskii_support_cells", "warning"]);
    let mut out = Outcome::default();
    for (&(i, seed), r) in ts.iter().zip(results) {
        let (gaps, probe) = r?;
        let eps = cfg.pde.epsilons[i];
        let ratio = match &probe {
            Ok(p) => p.ratio,
            Err(e) => {
                out.numeric_errors += 1;
                table.notes.push(format!("error eps={eps} seed={seed} divergence probe: {e:#}"));
                f64::NAN
            }
        };
        let row = |id: &str, p: f64, v: f64| vec![num(eps), seed.to_string(), cfg.pde.n.to_string(), id.to_string(), num(p), num(v), num(ratio)];
        match &gaps {
            Ok(gp) => {
                for b in 0..3 {
                    table.push(row(&format!("bump{b}"), gp.pressure[b], gp.velocity[b]));
                }
                table.push(row("l2", gp.pressure_l2, gp.velocity_l2));
            }
            Err(e) => {
                out.numeric_errors += 1;
                table.notes.push(format!("error eps={eps} seed={seed} stokes: {e:#}"));
                for id in ["bump0", "bump1", "bump2", "l2"] {
                    table.push(row(id, f64::NAN, f64::NAN));
                }
            }
        }
        let warn = [gaps.as_ref().ok().and_then(|g| g.warning.clone()), probe.as_ref().ok().and_then(|p| p.warning.clone())]
            .into_iter()
            .flatten()
            .collect::<Vec<_>>()
            .join("; ");
        diag.push(vec![
            num(eps),
            seed.to_string(),
            num(cfg.shell(i)),
            gaps.as_ref().map_or("nan".into(), |g| g.iterations.to_string()),
            gaps.as_ref().map_or("nan".into(), |g| num(g.div_residual)),
            probe.as_ref().map_or("nan".into(), |p| p.iterations.to_string()),
            probe.as_ref().map_or("nan".into(), |p| num(p.div_residual)),
            probe.as_ref().map_or("nan".into(), |p| p.support_cells.to_string()),
            quote(&warn),
        ]);
    }
    out.tables.push(("converge.csv".into(), table));
    out.tables.push(("converge_solver.csv".into(), diag));
    Ok(out)
}

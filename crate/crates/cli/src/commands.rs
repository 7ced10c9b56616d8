//! The five subcommands. Each returns a report; the caller writes it and sets the exit code.

use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use frd::elliptic::{Generator, HermEig};
use frd::frd_base::{
    base_decomposition, decomposition_from_text, decomposition_to_text, verify_akm_bounds, AkmOptions, Decomposition, ExportedDecomposition,
    ScaleFunctions,
};
use frd::frd_improved::{estimate_k_for, final_decomposition, improved_for, verify_final_bounds, FinalOptions, FinalParams};
use frd::lattice::{op_norm_real, TorusGeometry};
use frd::renorm::gauss::{gauss_expectation_deriv, DerivOptions, TestFunctional};
use frd::renorm::smooth::block_path;
use frd::renorm::{
    block_support, coarse_kernel, hs_quotient_sum, hs_quotient_sum_scaled_toy, localization_check, n_bar_for_block, smoothness_suite,
    whittle_check, FunctionalKind, LocalFunctional, SmoothnessOptions, WhittleOptions,
};
use frd::report::{fit_line, BoundsReport};
use frd::sampler::{batch_to_text, covariance_probes, gradient_range_check, sample};
use frd::RMat;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, Tolerances};

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub tol: Tolerances,
    pub tol_scale: f64,
    pub out: &'a Path,
}

pub struct Built {
    pub a: Generator,
    pub dec: Decomposition,
}

/// Builds the configured decomposition on level `n`, recording `K` when it is estimated.
pub fn build(cfg: &RunConfig, n: u32, rep: &mut BoundsReport) -> Result<Built> {
    let g = &cfg.geometry;
    let geom = TorusGeometry::new(g.l, n, g.d, g.m)?;
    let (a, ensemble) = cfg.generators()?;
    let funcs = Arc::new(ScaleFunctions::for_generator(&a, g.l, n));
    let dc = &cfg.decomposition;
    let dec = match dc.kind.as_str() {
        "base" => base_decomposition(&a, &geom, funcs)?,
        "improved" => improved_for(&a, &geom, funcs, dc.n)?,
        _ => {
            let n_tilde = dc.n_tilde.expect("validated");
            let k_const = match dc.k_const {
                Some(k) => k,
                None => {
                    let est = estimate_k_for(&ensemble, &geom, funcs.clone(), n_tilde)?;
                    rep.fit(&format!("K_N{n}"), est.k_const);
                    est.k_const
                }
            };
            final_decomposition(&a, &geom, funcs, &FinalParams { n: dc.n, n_tilde, k_const })?
        }
    };
    Ok(Built { a, dec })
}

fn direction(a: &Generator, seed: u64) -> RMat {
    a.random_direction(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed))
}

/// Compares a rebuilt decomposition with a previously exported file.
fn check_file(ctx: &Ctx, dec: &Decomposition, rep: &mut BoundsReport) -> Result<()> {
    let Some(path) = &ctx.cfg.decomposition.file else { return Ok(()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let stored = decomposition_from_text(&text)?;
    let fresh = ExportedDecomposition::from_decomposition(dec);
    let same_shape = stored.kind == fresh.kind && (stored.l, stored.n, stored.d, stored.m) == (fresh.l, fresh.n, fresh.d, fresh.m);
    let mut gap = if same_shape { 0.0f64 } else { f64::INFINITY };
    if same_shape {
        for (a, b) in stored.modes.iter().flatten().zip(fresh.modes.iter().flatten()) {
            gap = gap.max((a - b).norm());
        }
    }
    rep.push("decomposition_file", None, None, "max mode difference", gap, ctx.tol.identity, gap <= ctx.tol.identity);
    Ok(())
}

/// Identity, range, tail and symbol rows shared by `decompose` and `verify`.
fn core_checks(ctx: &Ctx, built: &Built, rep: &mut BoundsReport) -> Result<()> {
    let dec = &built.dec;
    let t = &ctx.tol;
    let sd = dec.sum_defect();
    rep.push("identity", None, None, "max relative defect", sd, t.identity, sd <= t.identity);
    for k in 1..=dec.count() {
        let (defect, far) = dec.range_defect(k);
        if far > 0 {
            rep.push("finite_range", Some(k), None, "far deviation / sup", defect, t.range, defect <= t.range);
        }
        if let Some(tail) = &dec.scale(k).tail {
            let norm = op_norm_real(tail);
            let neg = -tail;
            let lo = nalgebra::SymmetricEigen::new((&neg + neg.transpose()) * 0.5).eigenvalues.min() / norm.max(f64::MIN_POSITIVE);
            rep.push("tail_psd", Some(k), None, "min eig(-M_k)/|M_k|", lo, -t.tail, lo >= -t.tail);
            let td = dec.tail_defect(k);
            rep.push("tail_closed_form", Some(k), None, "relative defect", td, t.range, td <= t.range);
        }
        let mrm = dec.min_relative_mode(k);
        rep.push("positivity", Some(k), None, "min eig / |A^-1|", mrm, 0.0, mrm >= -t.tail);
    }
    let sb = built.a.symbol_bounds(&dec.geometry)?;
    rep.push("symbol", None, None, "min eig / |p|^2", sb.measured_min, sb.omega, sb.measured_min >= sb.omega * (1.0 - t.symbol));
    rep.push("symbol", None, None, "max eig / |p|^2", sb.measured_max, sb.big_omega, sb.measured_max <= sb.big_omega * (1.0 + t.symbol));
    Ok(())
}

fn scale_file(text: &str, k: usize) -> String {
    let mut lines = text.lines();
    let mut out: Vec<&str> = lines.by_ref().take(3).collect();
    let header = format!("scale {k}");
    let mut inside = false;
    for l in lines {
        if l.starts_with("scale ") {
            inside = l == header;
        }
        if inside {
            out.push(l);
        }
    }
    out.join("\n") + "\n"
}

pub fn decompose(ctx: &Ctx) -> Result<BoundsReport> {
    let mut rep = BoundsReport::new();
    let built = build(ctx.cfg, ctx.cfg.geometry.n, &mut rep)?;
    check_file(ctx, &built.dec, &mut rep)?;
    core_checks(ctx, &built, &mut rep)?;
    let dec = &built.dec;
    std::fs::create_dir_all(ctx.out)?;
    let text = decomposition_to_text(dec);
    std::fs::write(ctx.out.join("decomposition.txt"), &text)?;
    for k in 1..=dec.count() {
        std::fs::write(ctx.out.join(format!("scale_{k}.txt")), scale_file(&text, k))?;
        let (lo, hi) = dec.scale(k).spectral.values.iter().skip(1).fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
            let e = HermEig::new(v);
            (lo.min(e.min()), hi.max(e.max()))
        });
        rep.push("summary", Some(k), None, "mode min eig", lo, 0.0, true);
        rep.push("summary", Some(k), None, "mode max eig", hi, 0.0, true);
        rep.push("summary", Some(k), None, "range L^k/2", (ctx.cfg.geometry.l as f64).powi(k as i32) / 2.0, 0.0, true);
        if let Some(t) = &dec.scale(k).tail {
            rep.push("summary", Some(k), None, "|M_k|", op_norm_real(t), 0.0, true);
        }
    }
    Ok(rep)
}

pub fn verify(ctx: &Ctx) -> Result<BoundsReport> {
    let mut rep = BoundsReport::new();
    let built = build(ctx.cfg, ctx.cfg.geometry.n, &mut rep)?;
    check_file(ctx, &built.dec, &mut rep)?;
    core_checks(ctx, &built, &mut rep)?;
    let dirs = vec![direction(&built.a, ctx.cfg.seed)];
    let d = ctx.cfg.geometry.d;
    let extra = if ctx.cfg.decomposition.kind == "final" {
        let mut o = FinalOptions::for_params(d, ctx.cfg.decomposition.n);
        o.slope_tol = ctx.tol.slope;
        verify_final_bounds(&built.dec, &dirs, &o)?
    } else {
        let mut o = AkmOptions::for_dim(d);
        o.slope_tol = ctx.tol.slope;
        if ctx.cfg.decomposition.kind == "improved" {
            o.alphas.retain(|a| a.iter().sum::<u32>() <= ctx.cfg.decomposition.n);
        }
        verify_akm_bounds(&built.dec, &dirs, &o)?
    };
    rep.extend(extra);
    Ok(rep)
}

pub fn sample_cmd(ctx: &Ctx) -> Result<BoundsReport> {
    let mut rep = BoundsReport::new();
    let built = build(ctx.cfg, ctx.cfg.geometry.n, &mut rep)?;
    let s = &ctx.cfg.sampling;
    let scale = built.dec.scale(s.scale);
    let batch = sample(&scale.spectral, ctx.cfg.seed, s.count)?;
    for p in covariance_probes(&batch, &scale.position, s.probes, ctx.cfg.seed.wrapping_add(1)) {
        let z = p.z_score();
        rep.push(
            "covariance",
            Some(s.scale),
            Some(p.x),
            &format!("y={} i={} j={} estimate={:.6e} exact={:.6e}", p.y, p.i, p.j, p.estimate, p.exact),
            z,
            ctx.tol.z_score,
            z <= ctx.tol.z_score,
        );
    }
    if s.scale <= ctx.cfg.geometry.n as usize {
        rep.extend(gradient_range_check(&batch, &scale.position, s.scale as u32, s.gradient_pairs));
    }
    if s.write_batch {
        std::fs::create_dir_all(ctx.out)?;
        std::fs::write(ctx.out.join("batch.txt"), batch_to_text(&batch))?;
    }
    Ok(rep)
}

pub fn renorm_cmd(ctx: &Ctx) -> Result<BoundsReport> {
    let mut rep = BoundsReport::new();
    let cfg = ctx.cfg;
    let n = cfg.geometry.n;
    let built = build(cfg, n, &mut rep)?;
    let dec = &built.dec;
    let l = cfg.geometry.l;
    let d = cfg.geometry.d;
    let m = cfg.geometry.m;
    let k = cfg.renorm.k;
    let n_bar = cfg.renorm.n_bar.unwrap_or_else(|| n_bar_for_block(l, n, k, l.pow(k as u32)));
    let z_max = 3.0 * ctx.tol_scale;

    for kk in 1..=n as usize {
        for nb in kk as u32..=n {
            let ck = coarse_kernel(dec, kk, nb)?;
            rep.push("coarse_routes", Some(kk), Some(nb as usize), "relative gap", ck.route_gap, ctx.tol.route, ck.route_gap <= ctx.tol.route);
        }
    }

    // block of side (L^nbar - 1) / 2 + 1 so its diameter fits the coarse torus
    let side = (((l.pow(n_bar) - 1) / 2) + 1).min(3);
    let support = block_support(d, side);
    let sites = support.len();
    let pair = LocalFunctional::new(support.clone(), FunctionalKind::Pair { a: 0, b: sites - 1, i: 0, j: m - 1 });
    let h = RMat::from_fn(sites * m, sites * m, |a, b| if a == b { 1.0 } else { 0.25 / (1 + a.abs_diff(b)) as f64 });
    let quad = LocalFunctional::new(support.clone(), FunctionalKind::Quadratic(h));
    for (name, f) in [("pair", &pair), ("quadratic", &quad)] {
        let r = localization_check(dec, k, n_bar, f, 0, cfg.seed)?;
        let gap = r.exact_gap().unwrap_or(f64::NAN);
        rep.push("localization_exact", Some(k), Some(n_bar as usize), name, gap, 1e-9 * ctx.tol_scale, gap <= 1e-9 * ctx.tol_scale);
    }
    if cfg.renorm.samples > 0 {
        let bump = LocalFunctional::new(support, FunctionalKind::GaussianBump { scale: 1.0 });
        let r = localization_check(dec, k, n_bar, &bump, cfg.renorm.samples, cfg.seed)?;
        rep.push("localization_mc", Some(k), Some(n_bar as usize), "exp(-|phi|^2) z", r.z_score(), z_max, r.z_score() <= z_max);
    }

    let dir = direction(&built.a, cfg.seed);
    let first = dec.spectral_derivative(&dir, 1)?;
    let second = dec.spectral_derivative(&dir, 2)?;
    let (path, _) = block_path(dec, &first, &second, k, side.max(2))?;
    let dim = path.dim();
    let hq = RMat::from_fn(dim, dim, |a, b| 1.0 / (1 + a + b) as f64);
    for ell in [1u32, 2] {
        let r = gauss_expectation_deriv(&path, &TestFunctional::Quadratic(hq.clone(), 0.0), ell, &DerivOptions::default())?;
        let tol = if ell == 1 { 1e-6 } else { 1e-4 } * ctx.tol_scale;
        // scale 1 can be affine in A, in which case the second derivative vanishes
        let gap = if r.finite_difference.abs() < 1e-12 * r.f_norm { r.analytic.abs() } else { r.relative_gap() };
        rep.push("derivative_quadratic", Some(k), None, &format!("ell={ell} relative gap"), gap, tol, gap <= tol);
    }

    let hs = hs_quotient_sum(dec, &dir, k, n_bar)?;
    rep.push("hs_sum", Some(k), Some(n_bar as usize), "sum", hs, f64::NAN, hs.is_finite());
    if m == 1 {
        let toy = hs_quotient_sum_scaled_toy(dec, k, n_bar)?;
        let expected = (l as f64).powi((n_bar as usize * d) as i32) - 1.0;
        rep.push("hs_toy", Some(k), Some(n_bar as usize), "scaled toy sum", toy, expected, (toy - expected).abs() <= 1e-9 * ctx.tol_scale);
    }

    if !cfg.renorm.block_sides.is_empty() {
        let mut o = SmoothnessOptions::standard(l, k);
        o.sides = cfg.renorm.block_sides.clone();
        o.exponent_tol = 0.25 * ctx.tol_scale;
        o.seed = cfg.seed;
        rep.extend(smoothness_suite(dec, &dir, &o)?);
    }
    if cfg.renorm.whittle_matrices > 0 {
        let o = WhittleOptions { matrices: cfg.renorm.whittle_matrices, seed: cfg.seed, ..Default::default() };
        rep.extend(whittle_check(&o));
    }
    Ok(rep)
}

pub fn sweep(ctx: &Ctx) -> Result<BoundsReport> {
    let mut rep = BoundsReport::new();
    let cfg = ctx.cfg;
    let mut hs = Vec::new();
    let mut sup_logs: Vec<Vec<f64>> = Vec::new();
    for &n in &cfg.sweep.n_values {
        let built = build(cfg, n, &mut rep)?;
        let dec = &built.dec;
        let sd = dec.sum_defect();
        rep.push("sweep_identity", None, Some(n as usize), "max relative defect", sd, ctx.tol.identity, sd <= ctx.tol.identity);
        let s = hs_quotient_sum(dec, &direction(&built.a, cfg.seed), n as usize, n)?;
        rep.push("sweep_hs", Some(n as usize), Some(n as usize), "HS sum at k = N", s, f64::NAN, s.is_finite());
        hs.push((n, s));
        if cfg.geometry.m == 1 {
            let toy = hs_quotient_sum_scaled_toy(dec, n as usize, n)?;
            let expected = (cfg.geometry.l as f64).powi((n as usize * cfg.geometry.d) as i32) - 1.0;
            rep.push("sweep_toy", Some(n as usize), Some(n as usize), "scaled toy sum", toy, expected, (toy - expected).abs() <= 1e-9 * ctx.tol_scale);
        }
        sup_logs.push((1..=n as usize).map(|k| dec.scale(k).position.sup_norm().ln()).collect());
    }
    if hs.len() >= 2 {
        let mx = hs.iter().map(|h| h.1).fold(0.0, f64::max);
        let mn = hs.iter().map(|h| h.1).fold(f64::INFINITY, f64::min);
        let uniform = cfg.decomposition.kind == "final";
        let pass = !uniform || mx / mn <= ctx.tol.uniform_ratio;
        rep.push("sweep_uniform", None, None, "HS max/min over N", mx / mn, ctx.tol.uniform_ratio, pass);
        let (xs, ys): (Vec<f64>, Vec<f64>) = hs.iter().map(|h| (h.0 as f64, h.1.ln())).unzip();
        rep.fit("sweep_hs_log_slope_per_n", fit_line(&xs, &ys).0);
    }
    if let Some(last) = sup_logs.last() {
        if last.len() >= 2 {
            let ks: Vec<f64> = (1..=last.len()).map(|k| k as f64).collect();
            rep.fit("sweep_sup_slope_per_log_l", fit_line(&ks, last).0 / (cfg.geometry.l as f64).ln());
        }
    }
    Ok(rep)
}

//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Pass criterion numbers as arguments to run a subset.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use icens_core::asymptotics::{extrapolate_to_zero, solve_smle_phi, Asymptotics, GridModel};
use icens_core::isotonics::{gcm_slopes, isotonic_ls, CusumDiagram};
use icens_core::kernels::{boundary_coeffs, kernel_moments, kernel_moments_exact};
use icens_core::mle_smle::{fit_mle, fit_smle};
use icens_core::msle_solver::{fit_msle, fit_msle_em, loglik};
use icens_core::simulation::{montecarlo_normality, rate_study, RateEstimator};
use icens_core::smoothing::smooth;
use icens_core::{ObservationModel, QuadratureRule, SimDesign, SolverConfig};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn triweight(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        35.0 / 32.0 * (1.0 - x * x).powi(3)
    }
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    step(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

fn criterion_1() -> Verdict {
    let km = kernel_moments::<f64>();
    let sq = adaptive_simpson(&|x| triweight(x).powi(2), -1.0, 1.0, 1e-15);
    let two = adaptive_simpson(&|x| x * x * triweight(x), -1.0, 1.0, 1e-15);
    let exact = kernel_moments_exact();
    let exact_ok = exact.m_squared == Ratio::new(350, 429) && exact.m_two == Ratio::new(1, 9);
    let moment_err = (km.m_squared - sq).abs().max((km.m_two - two).abs());
    let mut residual: f64 = 0.0;
    for k in 0..=100 {
        let u = k as f64 / 100.0;
        let c = boundary_coeffs(u).unwrap();
        let mu: Vec<f64> =
            (0..3).map(|j| adaptive_simpson(&|x| x.powi(j) * triweight(x), -1.0, u, 1e-16)).collect();
        residual = residual.max((c.alpha * mu[0] + c.beta * mu[1] - 1.0).abs()).max((c.alpha * mu[1] + c.beta * mu[2]).abs());
    }
    verdict(
        exact_ok && moment_err <= 1e-10 && residual <= 1e-12,
        format!("moment error {moment_err:.2e}, exact rationals {exact_ok}, max boundary residual {residual:.2e}"),
    )
}

fn brute_isotonic(y: &[f64], w: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best = (f64::INFINITY, Vec::new());
    for mask in 0u32..(1 << (n - 1)) {
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        let mut prev = f64::NEG_INFINITY;
        let mut ok = true;
        for i in 0..n {
            if i == n - 1 || mask & (1 << i) != 0 {
                let (sw, sy) = (start..=i).fold((0.0, 0.0), |(a, b), k| (a + w[k], b + w[k] * y[k]));
                let mean = sy / sw;
                if mean < prev {
                    ok = false;
                    break;
                }
                prev = mean;
                fit.extend(std::iter::repeat_n(mean, i + 1 - start));
                start = i + 1;
            }
        }
        if ok {
            let sse: f64 = fit.iter().zip(y).zip(w).map(|((f, y), w)| w * (f - y).powi(2)).sum();
            if sse < best.0 {
                best = (sse, fit);
            }
        }
    }
    best.1
}

fn brute_gcm_slopes(x: &[f64], v: &[f64]) -> Vec<f64> {
    let n = x.len();
    let g: Vec<f64> = (0..n)
        .map(|i| {
            let mut m = v[i];
            for j in 0..=i {
                for k in i..n {
                    if j < k {
                        let lam = (x[i] - x[j]) / (x[k] - x[j]);
                        m = m.min(v[j] + lam * (v[k] - v[j]));
                    }
                }
            }
            m
        })
        .collect();
    (1..n).map(|i| (g[i] - g[i - 1]) / (x[i] - x[i - 1])).collect()
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut iso_err, mut gcm_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let fit = isotonic_ls(&y, &w).unwrap();
        let brute = brute_isotonic(&y, &w);
        iso_err = fit.iter().zip(&brute).map(|(a, b)| (a - b).abs()).fold(iso_err, f64::max);

        let mut x = vec![0.0];
        let mut v = vec![0.0];
        for _ in 0..n {
            x.push(x.last().unwrap() + rng.random_range(0.05..1.0));
            v.push(v.last().unwrap() + rng.random_range(-1.0..1.0));
        }
        let slopes = gcm_slopes(&CusumDiagram::new(x.clone(), v.clone()).unwrap());
        let brute = brute_gcm_slopes(&x, &v);
        gcm_err = slopes.iter().zip(&brute).map(|(a, b)| (a - b).abs()).fold(gcm_err, f64::max);
    }
    verdict(
        iso_err <= 1e-10 && gcm_err <= 1e-10,
        format!("max deviation isotonic_ls {iso_err:.2e}, gcm_slopes {gcm_err:.2e} over 1000 instances"),
    )
}

fn design_at(n: usize, seed: u64, rule: QuadratureRule) -> SimDesign {
    SimDesign { n, seed, rule, ..SimDesign::default() }
}

fn sup_dist(a: &[f64], b: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
}

fn random_candidate(rng: &mut ChaCha8Rng, fit: &[f64]) -> Vec<f64> {
    let m = fit.len();
    let mut f: Vec<f64> = if rng.random_bool(0.5) {
        let top: f64 = rng.random_range(0.05..1.0);
        let mut u: Vec<f64> = (1..m).map(|_| top * rng.random::<f64>()).collect();
        u.sort_by(f64::total_cmp);
        std::iter::once(0.0).chain(u).collect()
    } else {
        let scale = rng.random_range(1e-3..2e-2);
        fit.iter().map(|&x| (x + scale * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0)).collect()
    };
    f[0] = 0.0;
    for i in 1..m {
        f[i] = f[i].max(f[i - 1]);
    }
    f
}

fn criterion_3(cfg: &SolverConfig) -> Verdict {
    let rows: Vec<(bool, bool, usize, usize)> = (1..=20u64)
        .into_par_iter()
        .map(|seed| {
            let d = design_at(200, seed, QuadratureRule::Riemann);
            let grid = d.grid().unwrap();
            let dens = smooth(&d.replicate(0).unwrap(), d.bandwidth(), &grid).unwrap();
            let est = fit_msle(&dens, &grid, cfg).unwrap();
            let certified = est.diagnostics.converged && est.diagnostics.report.as_ref().is_some_and(|r| r.passed());
            let best = loglik(&est.values, &dens, &grid);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let beaten = (0..100).filter(|_| loglik(&random_candidate(&mut rng, &est.values), &dens, &grid) > best).count();
            (certified, beaten == 0, est.diagnostics.iterations, beaten)
        })
        .collect();
    let certified = rows.iter().filter(|r| r.0).count();
    let dominant = rows.iter().filter(|r| r.1).count();
    let max_iter = rows.iter().map(|r| r.2).max().unwrap();
    verdict(
        certified == 20 && dominant == 20,
        format!("{certified}/20 certified at tol 1e-5, {dominant}/20 dominate 100 candidates, max cycles {max_iter}"),
    )
}

fn criterion_4(cfg: &SolverConfig) -> Verdict {
    let dists: Vec<f64> = (1..=5u64)
        .into_par_iter()
        .map(|seed| {
            let d = design_at(200, seed, QuadratureRule::Riemann);
            let grid = d.grid().unwrap();
            let dens = smooth(&d.replicate(0).unwrap(), d.bandwidth(), &grid).unwrap();
            let hybrid = fit_msle(&dens, &grid, cfg).unwrap();
            let em = fit_msle_em(&dens, &grid, cfg, 5000).unwrap();
            let all: Vec<usize> = (0..grid.points().len()).collect();
            sup_dist(&hybrid.values, &em.values, &all)
        })
        .collect();
    let worst = dists.iter().copied().fold(0.0, f64::max);
    verdict(
        worst <= 1e-4,
        format!("sup-dist EM(5000) vs hybrid per seed {}", fmt_list(&dists)),
    )
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ")
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

struct DesignRun {
    msle: f64,
    smle: f64,
    mle: f64,
    toy: f64,
    converged: bool,
}

fn design_runs(cfg: &SolverConfig) -> Vec<DesignRun> {
    (1..=20u64)
        .into_par_iter()
        .map(|seed| {
            let d = design_at(1000, seed, QuadratureRule::Trapezoid);
            let grid = d.grid().unwrap();
            let b = d.bandwidth();
            let sample = d.replicate(0).unwrap();
            let dens = smooth(&sample, b, &grid).unwrap();
            let msle = fit_msle(&dens, &grid, cfg).unwrap();
            let mle = fit_mle(&sample, cfg).unwrap();
            let smle = fit_smle(&mle, b, &grid).unwrap();
            let toy = GridModel::new(&d, &grid).unwrap().toy_estimator(&dens, &grid).unwrap();
            let f0: Vec<f64> = grid.points().iter().map(|&t| d.cdf(t)).collect();
            let mle_grid: Vec<f64> = grid.points().iter().map(|&t| mle.cdf(t)).collect();
            let idx: Vec<usize> = grid.indices_within(0.2, 0.8).collect();
            DesignRun {
                msle: sup_dist(&msle.values, &f0, &idx),
                smle: sup_dist(&smle, &f0, &idx),
                mle: sup_dist(&mle_grid, &f0, &idx),
                toy: sup_dist(&toy, &msle.values, &idx),
                converged: msle.diagnostics.converged && mle.converged,
            }
        })
        .collect()
}

fn criterion_5(runs: &[DesignRun]) -> Verdict {
    let msle: Vec<f64> = runs.iter().map(|r| r.msle).collect();
    let med = median(&msle);
    let smle = median(&runs.iter().map(|r| r.smle).collect::<Vec<_>>());
    let mle = median(&runs.iter().map(|r| r.mle).collect::<Vec<_>>());
    let conv = runs.iter().filter(|r| r.converged).count();
    verdict(
        med <= 0.1,
        format!("median sup |F_hat - F0| on [0.2, 0.8]: MSLE {med:.4} (SMLE {smle:.4}, MLE {mle:.4}); {conv}/20 fits converged"),
    )
}

fn criterion_6(runs: &[DesignRun]) -> Verdict {
    let ratios: Vec<f64> = runs.iter().map(|r| r.toy / r.msle).collect();
    let med_ratio = median(&ratios);
    let med_toy = median(&runs.iter().map(|r| r.toy).collect::<Vec<_>>());
    let med_msle = median(&runs.iter().map(|r| r.msle).collect::<Vec<_>>());
    verdict(
        med_ratio <= 0.5,
        format!(
            "median per-seed ratio sup|toy - MSLE| / sup|MSLE - F0| = {med_ratio:.3} (ratio of medians {:.3})",
            med_toy / med_msle
        ),
    )
}

fn criterion_7(cfg: &SolverConfig) -> Verdict {
    let base = SimDesign { reps: 500, rule: QuadratureRule::Trapezoid, ..SimDesign::default() };
    let mc = montecarlo_normality(&base, cfg).unwrap();
    let p = &mc.points[0];
    let ratio = p.var_ratio.unwrap();
    let ks_p = p.ks_pvalue.unwrap();
    let big = montecarlo_normality(&SimDesign { n: 4000, ..base }, cfg).unwrap();
    let q = &big.points[0];
    let se = q.bias_se.unwrap();
    let gap = (q.bias - q.predicted_bias).abs();
    let var_ok = (ratio - 1.0).abs() <= 0.2;
    let ks_ok = ks_p >= 0.01;
    let bias_ok = gap <= 2.0 * se;
    let budget = mc.budget_ok && big.budget_ok;
    verdict(
        var_ok && ks_ok && bias_ok && budget,
        format!(
            "var ratio {ratio:.3} [{}], KS p {ks_p:.4} [{}], bias n=4000 {:.5} vs beta b^2 {:.5} (SE {se:.5}) [{}], non-certified {}+{}",
            ok(var_ok),
            ok(ks_ok),
            q.bias,
            q.predicted_bias,
            ok(bias_ok),
            mc.nonconverged,
            big.nonconverged
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "fail"
    }
}

fn criterion_8(cfg: &SolverConfig) -> Verdict {
    let d = SimDesign { reps: 200, rule: QuadratureRule::Trapezoid, ..SimDesign::default() };
    let sizes = [500, 1000, 2000, 4000];
    let msle = rate_study(&d, &sizes, RateEstimator::Msle, cfg).unwrap();
    let mle = rate_study(&d, &sizes, RateEstimator::Mle, cfg).unwrap();
    let msle_ok = (-0.5..=-0.3).contains(&msle.slope);
    let mle_ok = (-0.43..=-0.23).contains(&mle.slope);
    let rmse = |r: &icens_core::simulation::RateReport| fmt_list(&r.rows.iter().map(|x| x.rmse).collect::<Vec<_>>());
    verdict(
        msle_ok && mle_ok,
        format!(
            "MSLE slope {:.3} [{}] (rmse {}), MLE slope {:.3} [{}] (rmse {})",
            msle.slope,
            ok(msle_ok),
            rmse(&msle),
            mle.slope,
            ok(mle_ok),
            rmse(&mle)
        ),
    )
}

fn criterion_9() -> Verdict {
    let d = SimDesign::default();
    let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025]
        .par_iter()
        .map(|&b| (b, b * solve_smle_phi(1.0, b, &d, 400).unwrap().sigma_n_sq))
        .collect();
    let lim = extrapolate_to_zero(&pts).unwrap();
    let target = Asymptotics::new(&d).sigma_sq(1.0).unwrap();
    let rel = (lim / target - 1.0).abs();
    verdict(
        rel <= 0.02,
        format!(
            "b sigma_n^2 = {} -> limit {lim:.6} vs sigma^2(1) {target:.6} (rel. error {rel:.2e})",
            pts.iter().map(|p| format!("{:.5}", p.1)).collect::<Vec<_>>().join(", ")
        ),
    )
}

/// Stdout, exit code and every file written to `dir`.
fn snapshot(args: &[String], dir: &Path) -> (Vec<u8>, Option<i32>, Vec<(String, Vec<u8>)>) {
    let out = Command::new(env!("CARGO_BIN_EXE_icens")).args(args).env_remove("ICENS_SEED").output().unwrap();
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect()
        })
        .unwrap_or_default();
    files.sort();
    (out.stdout, out.status.code(), files)
}

fn criterion_10() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("input.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_icens"))
        .args(["simulate", "--n", "500", "--seed", "11", "--out", input.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let input = input.to_str().unwrap().to_string();
    let commands: Vec<Vec<&str>> = vec![
        vec!["simulate", "--n", "1000", "--seed", "7"],
        vec!["fit", "--simulate", "--n", "1000", "--seed", "3", "--OUT"],
        vec!["fit", "--input", &input, "--which", "msle", "--OUT"],
        vec!["fit", "--input", &input, "--which", "mle"],
        vec!["fit", "--input", &input, "--which", "smle", "--OUT"],
        vec!["fit", "--input", &input, "--which", "curstat-msle"],
        vec!["asymptotics", "--v", "0.5", "--v", "1.0", "--with-toy", "--with-linear", "--seed", "5"],
        vec!["montecarlo", "--n", "1000", "--reps", "40", "--v", "0.5", "--v", "1.0", "--OUT"],
        vec!["rate", "--n", "500,1000", "--reps", "20", "--OUT"],
        vec!["rate", "--n", "500,1000", "--reps", "20", "--estimator", "mle"],
    ];
    let mut differing = Vec::new();
    for (c, cmd) in commands.iter().enumerate() {
        let runs: Vec<_> = ["1", "4", "4"]
            .iter()
            .enumerate()
            .map(|(r, jobs)| {
                let dir = tmp.path().join(format!("c{c}r{r}"));
                let mut args = vec!["--jobs".to_string(), jobs.to_string()];
                for a in cmd {
                    if *a == "--OUT" {
                        args.push("--out-dir".into());
                        args.push(dir.to_str().unwrap().into());
                    } else {
                        args.push(a.to_string());
                    }
                }
                snapshot(&args, &dir)
            })
            .collect();
        let nonempty = !runs[0].0.is_empty() || !runs[0].2.is_empty();
        if !(nonempty && runs[0] == runs[1] && runs[1] == runs[2]) {
            differing.push(cmd[0].to_string());
        }
    }
    verdict(
        differing.is_empty(),
        format!(
            "{} commands run with --jobs 1, 4, 4; differing: {}",
            commands.len(),
            if differing.is_empty() { "none".into() } else { differing.join(", ") }
        ),
    )
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: u32| selected.is_empty() || selected.contains(&k);
    let cfg = SolverConfig::default();
    let mut runs_cache: Option<Vec<DesignRun>> = None;
    let mut failed = 0;
    let criteria: [(u32, &str, Option<u64>); 10] = [
        (1, "kernel constants", Some(1)),
        (2, "isotonic oracle equivalence", Some(10)),
        (3, "optimality certificate", Some(120)),
        (4, "solver cross-agreement", Some(300)),
        (5, "estimator accuracy on the simulation design", Some(600)),
        (6, "toy-estimator proximity", None),
        (7, "normal limit at desk scale", Some(1800)),
        (8, "rate separation", Some(1800)),
        (9, "SMLE/MSLE variance identity", Some(60)),
        (10, "determinism", None),
    ];
    for (k, name, limit) in criteria {
        if !wanted(k) {
            continue;
        }
        let start = Instant::now();
        let v = match k {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(&cfg),
            4 => criterion_4(&cfg),
            5 | 6 => {
                let runs = runs_cache.get_or_insert_with(|| design_runs(&cfg));
                if k == 5 {
                    criterion_5(runs)
                } else {
                    criterion_6(runs)
                }
            }
            7 => criterion_7(&cfg),
            8 => criterion_8(&cfg),
            9 => criterion_9(),
            _ => criterion_10(),
        };
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|s| elapsed <= Duration::from_secs(s));
        let pass = v.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = limit.map_or(String::new(), |s| format!(" / {s} s"));
        println!(
            "criterion {k:>2} {} {name}: {} ({:.1} s{budget}{})",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over time" }
        );
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}

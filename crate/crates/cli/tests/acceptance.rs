//! Acceptance criteria for the augmentation algorithm.
//!
//! Each test prints one `[PASS]` / `[FAIL]` line with the measured values.
//! Run with:
//!
//!     cargo test -p hazemix-cli --test acceptance -- --nocapture --test-threads=1

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hazemix::airlight::{estimate_airlight, estimate_airlight_raw, AtmosphericLight, DEFAULT_PATCH};
use hazemix::alignment::{build_prototype, compose_damix, damix, rank_pixels, MixWeights};
use hazemix::density::{estimate_density, to_quantile, wasserstein, DensityHistogram, DEFAULT_GRID, LEVELS};
use hazemix::image::{synthesize_hazy, to_brightness, BrightnessImage, RgbImage, SyntheticHazeParams, TransmissionMap};
use hazemix::io::save_image;
use hazemix::solver::{pgd_solve, SolverConfig};
use hazemix::synthetic::{render_scene, SceneSpec};
use hazemix::target::{build_target_domain, interpolate_target, random_target, sample_theta, SimplexWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(name: &str, pass: bool, detail: String) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random histogram; about half of the draws are sparse.
fn random_histogram(r: &mut ChaCha8Rng) -> DensityHistogram {
    let sparse = r.random_bool(0.5);
    let weights: Vec<f64> = (0..LEVELS)
        .map(|_| {
            if sparse && r.random_bool(0.9) {
                0.0
            } else {
                r.random::<f64>()
            }
        })
        .collect();
    if weights.iter().all(|&w| w == 0.0) {
        return DensityHistogram::dirac(r.random());
    }
    DensityHistogram::from_weights(&weights, 1).unwrap()
}

/// Largest-remainder seats computed by repeated linear scans.
fn hamilton_counts(h: &DensityHistogram, n: usize) -> Vec<usize> {
    let quotas: Vec<f64> = h.bins().iter().map(|p| p * n as f64).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut remainders: Vec<f64> = quotas.iter().zip(&seats).map(|(q, &s)| q - s as f64).collect();
    while seats.iter().sum::<usize>() < n {
        let mut best = 0;
        for v in 1..LEVELS {
            if remainders[v] > remainders[best] {
                best = v;
            }
        }
        seats[best] += 1;
        remainders[best] = -1.0;
    }
    seats
}

fn level_counts(b: &BrightnessImage) -> Vec<usize> {
    let mut c = vec![0; LEVELS];
    for &v in b.as_raw() {
        c[v as usize] += 1;
    }
    c
}

/// Scene with strict `A_b > I_b > J_b` at every pixel.
fn strict_scene(seed: u64, w: usize, h: usize) -> hazemix::synthetic::Scene {
    let mut r = rng(seed ^ 0x5eed);
    let a = r.random_range(205..=255u8);
    let spec = SceneSpec {
        width: w,
        height: h,
        clean_range: (r.random_range(5..40), r.random_range(110..150)),
        airlight: [a, a - r.random_range(0..=5), a - r.random_range(0..=5)],
        transmission: (r.random_range(0.6..0.9), r.random_range(0.2..0.5)),
    };
    let scene = render_scene(&spec, seed).unwrap();
    let (ib, jb) = (to_brightness(&scene.hazy), to_brightness(&scene.clean));
    let ab = scene.params.airlight.into_iter().max().unwrap();
    for (i, j) in ib.as_raw().iter().zip(jb.as_raw()) {
        assert!(ab > *i && i > j, "strictness broken at seed {seed}");
    }
    scene
}

/// Interpolated target from a three-image synthetic target domain.
fn domain_target(seed: u64, w: usize, h: usize) -> DensityHistogram {
    let mut r = rng(seed ^ 0x7a26);
    let images: Vec<_> = (0..3)
        .map(|k| {
            let a = r.random_range(180..=255u8);
            let spec = SceneSpec {
                width: w,
                height: h,
                clean_range: (r.random_range(0..60), r.random_range(120..220)),
                airlight: [a, a, a],
                transmission: (r.random_range(0.3..1.0), r.random_range(0.05..0.6)),
            };
            to_brightness(&render_scene(&spec, seed * 7 + k).unwrap().hazy)
        })
        .collect();
    let domain = build_target_domain(&images).unwrap();
    interpolate_target(&domain, &sample_theta(3, seed).unwrap()).unwrap()
}

#[test]
fn exact_histogram_match() {
    let mut r = rng(1);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..200 {
        let levels = if r.random_bool(0.5) { 8 } else { 256 };
        let data: Vec<u8> = (0..32 * 32).map(|_| (r.random_range(0..levels) * (256 / levels)) as u8).collect();
        let b = BrightnessImage::new(32, 32, data).unwrap();
        let target = random_histogram(&mut r);
        let ranking = rank_pixels(&b).unwrap();
        let proto = build_prototype(&b, &ranking, &target).unwrap();
        if level_counts(&proto) != hamilton_counts(&target, b.len()) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && elapsed < Duration::from_secs(5);
    report(
        "exact histogram match",
        pass,
        format!("{mismatches}/200 mismatches, {:.2}s total (limit 5s)", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn asm_compliance() {
    let mut r = rng(2);
    let mut worst = 0i32;
    let mut violations = 0;
    for _ in 0..200 {
        let (w, h) = (r.random_range(4..24), r.random_range(4..24));
        let n = w * h;
        let clean = RgbImage::new(w, h, (0..n * 3).map(|_| r.random()).collect()).unwrap();
        let t: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let a: [u8; 3] = r.random();
        let hazy = synthesize_hazy(
            &clean,
            &SyntheticHazeParams {
                airlight: a,
                transmission: TransmissionMap::new(w, h, t.clone()).unwrap(),
            },
        )
        .unwrap();
        let (mut alpha, mut beta) = (vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            match r.random_range(0..3) {
                0 => alpha[i] = r.random(),
                1 => beta[i] = r.random(),
                _ => {}
            }
        }
        let weights = MixWeights::new(w, h, alpha.clone(), beta.clone()).unwrap();
        let mixed = compose_damix(&hazy, &clean, AtmosphericLight::new(a), &weights).unwrap();
        let t_hat: Vec<f64> = (0..n).map(|i| t[i] * (1.0 - beta[i]) + (1.0 - t[i]) * alpha[i]).collect();
        let expected = synthesize_hazy(
            &clean,
            &SyntheticHazeParams {
                airlight: a,
                transmission: TransmissionMap::new(w, h, t_hat).unwrap(),
            },
        )
        .unwrap();
        for (x, y) in mixed.as_raw().iter().zip(expected.as_raw()) {
            let d = (i32::from(*x) - i32::from(*y)).abs();
            worst = worst.max(d);
            if d > 1 {
                violations += 1;
            }
        }
    }
    let pass = violations == 0;
    report(
        "ASM compliance",
        pass,
        format!("max deviation {worst} level(s), {violations} beyond ±1 over 200 instances"),
    );
    assert!(pass);
}

#[test]
fn alignment_optimality() {
    let mut within = 0;
    let mut slowest = Duration::ZERO;
    let mut worst_gap = 0.0f64;
    for seed in 0..100 {
        let scene = strict_scene(1000 + seed, 16, 16);
        let target = domain_target(seed, 16, 16);
        let start = Instant::now();
        let a = AtmosphericLight::new(scene.params.airlight);
        let fast = damix(&scene.hazy, &scene.clean, a, &target, 1.0).unwrap();
        let oracle = pgd_solve(
            &to_brightness(&scene.hazy),
            &to_brightness(&scene.clean),
            a.brightness(),
            &target,
            &SolverConfig::default(),
        )
        .unwrap();
        slowest = slowest.max(start.elapsed());
        let gap = (fast.residual_distance - oracle.objective).abs();
        worst_gap = worst_gap.max(gap);
        if gap <= 0.5 {
            within += 1;
        }
    }
    let pass = within >= 95 && slowest < Duration::from_secs(2);
    report(
        "alignment optimality",
        pass,
        format!(
            "{within}/100 within 0.5 levels of the reference (need 95), worst gap {worst_gap:.3}, slowest {:.3}s (limit 2s)",
            slowest.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn monotone_improvement() {
    let mut r = rng(4);
    let mut exceptions = 0;
    let mut min_slack = f64::INFINITY;
    for k in 0..1000u64 {
        let a = r.random_range(150..=255u8);
        let spec = SceneSpec {
            width: r.random_range(8..20),
            height: r.random_range(8..20),
            clean_range: (r.random_range(0..80), r.random_range(100..=255)),
            airlight: [a, r.random_range(100..=a), r.random_range(100..=a)],
            transmission: (r.random_range(0.0..1.0), r.random_range(0.0..1.0)),
        };
        let scene = render_scene(&spec, k).unwrap();
        let target = match k % 3 {
            0 => random_target(k, r.random_range(2..10)).unwrap().density,
            1 => random_histogram(&mut r),
            _ => domain_target(k, 12, 12),
        };
        let airlight = estimate_airlight(&scene.hazy).unwrap();
        let sample = damix(&scene.hazy, &scene.clean, airlight, &target, 1.0).unwrap();
        let before = wasserstein(&estimate_density(&to_brightness(&scene.hazy)).unwrap(), &target, 1.0).unwrap();
        min_slack = min_slack.min(before - sample.residual_distance);
        if sample.residual_distance > before {
            exceptions += 1;
        }
    }
    let pass = exceptions == 0;
    report(
        "monotone improvement",
        pass,
        format!("{exceptions}/1000 exceptions, smallest improvement {min_slack:.4} levels"),
    );
    assert!(pass);
}

#[test]
fn wasserstein_correctness() {
    let mut r = rng(5);
    let tol = 255.0 / DEFAULT_GRID as f64;
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (a, b) = (random_histogram(&mut r), random_histogram(&mut r));
        let (mut fa, mut fb, mut l1) = (0.0, 0.0, 0.0);
        for v in 0..LEVELS - 1 {
            fa += a.bins()[v];
            fb += b.bins()[v];
            l1 += (fa - fb).abs();
        }
        worst = worst.max((wasserstein(&a, &b, 1.0).unwrap() - l1).abs());
    }
    let mut triangle_breaks = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..500 {
        let (a, b, c) = (random_histogram(&mut r), random_histogram(&mut r), random_histogram(&mut r));
        let p = if r.random_bool(0.5) { 1.0 } else { r.random_range(1.0..4.0) };
        let w = |x: &DensityHistogram, y: &DensityHistogram| wasserstein(x, y, p).unwrap();
        let excess = w(&a, &c) - (w(&a, &b) + w(&b, &c));
        worst_excess = worst_excess.max(excess);
        if excess > 1e-9 {
            triangle_breaks += 1;
        }
    }
    let pass = worst <= tol && triangle_breaks == 0;
    report(
        "Wasserstein correctness",
        pass,
        format!(
            "max |W1 - CDF L1| = {worst:.5} (limit {tol:.5}); triangle violations {triangle_breaks}/500, max excess {worst_excess:.2e}"
        ),
    );
    assert!(pass);
}

#[test]
fn interpolation_endpoints_and_geodesic() {
    let mut r = rng(6);
    let images: Vec<BrightnessImage> = (0..4)
        .map(|_| {
            let (w, h) = (r.random_range(5..40), r.random_range(5..40));
            let lo = r.random_range(0..200u8);
            BrightnessImage::new(w, h, (0..w * h).map(|_| r.random_range(lo..=255)).collect()).unwrap()
        })
        .collect();
    let domain = build_target_domain(&images).unwrap();
    let m = domain.grid_size() as f64;
    let mut worst = 0.0f64;
    for (i, b) in images.iter().enumerate() {
        let h = interpolate_target(&domain, &SimplexWeights::vertex(4, i).unwrap()).unwrap();
        let orig = estimate_density(b).unwrap();
        for (x, y) in h.bins().iter().zip(orig.bins()) {
            worst = worst.max((x - y).abs());
        }
    }
    let diracs = build_target_domain(&[
        BrightnessImage::filled(3, 3, 100).unwrap(),
        BrightnessImage::filled(5, 2, 200).unwrap(),
    ])
    .unwrap();
    let mid = interpolate_target(&diracs, &SimplexWeights::new(vec![0.5, 0.5]).unwrap()).unwrap();
    let exact_mid = mid.bins().iter().enumerate().all(|(v, &p)| p == if v == 150 { 1.0 } else { 0.0 });
    let pass = worst <= 2.0 / m && exact_mid;
    report(
        "interpolation endpoints & geodesic",
        pass,
        format!("max vertex bin error {worst:.2e} (limit {:.2e}); Dirac midpoint exact: {exact_mid}", 2.0 / m),
    );
    assert!(pass);
}

#[test]
fn airlight_recovery() {
    let mut r = rng(7);
    let mut good = 0;
    let mut worst = 0u8;
    for k in 0..50 {
        let spec = SceneSpec {
            width: 96,
            height: 64,
            clean_range: (20, 235),
            airlight: [r.random_range(150..=255), r.random_range(150..=255), r.random_range(150..=255)],
            transmission: (0.6, 0.1),
        };
        let scene = render_scene(&spec, 500 + k).unwrap();
        let est = estimate_airlight_raw(&scene.hazy, DEFAULT_PATCH).unwrap();
        let err = est.rgb().iter().zip(spec.airlight).map(|(e, t)| e.abs_diff(t)).max().unwrap();
        worst = worst.max(err);
        if err <= 10 {
            good += 1;
        }
    }
    let pass = good >= 45;
    report(
        "airlight recovery",
        pass,
        format!("{good}/50 scenes within ±10 per channel (need 45), worst error {worst}"),
    );
    assert!(pass);
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect()
}

fn run_cli(args: &[&str], threads: &str) {
    let out = Command::new(env!("CARGO_BIN_EXE_hazemix"))
        .args(args)
        .env("HAZEMIX_THREADS", threads)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn determinism() {
    let root = tempfile::tempdir().unwrap();
    let (src, tgt) = (root.path().join("src"), root.path().join("tgt"));
    fs::create_dir_all(&src).unwrap();
    fs::create_dir_all(&tgt).unwrap();
    for k in 0..6u64 {
        let scene = strict_scene(k, 40 + k as usize, 30);
        save_image(&scene.hazy, src.join(format!("s{k}_hazy.png"))).unwrap();
        save_image(&scene.clean, src.join(format!("s{k}_GT.png"))).unwrap();
        let other = strict_scene(100 + k, 24, 24);
        save_image(&other.hazy, tgt.join(format!("t{k}.png"))).unwrap();
    }
    let mut checks = Vec::new();
    for mode in ["adapt", "generalize"] {
        let mut trees = Vec::new();
        for (run, threads) in [("a", "1"), ("b", "1"), ("c", "8")] {
            let out = root.path().join(format!("{mode}-{run}"));
            run_cli(
                &[
                    "augment", "--source", src.to_str().unwrap(), "--target", tgt.to_str().unwrap(),
                    "--out", out.to_str().unwrap(), "--seed", "42", "--samples-per-pair", "2",
                    "--mode", mode,
                ],
                threads,
            );
            trees.push(read_tree(&out));
        }
        checks.push((mode, trees[0] == trees[1], trees[0] == trees[2], trees[0].len()));
    }
    let pass = checks.iter().all(|c| c.1 && c.2 && c.3 == 6 * 3 + 1);
    let detail = checks
        .iter()
        .map(|(m, rep, thr, n)| format!("{m}: repeat identical {rep}, 1 vs 8 threads identical {thr} ({n} files)"))
        .collect::<Vec<_>>()
        .join("; ");
    report("determinism", pass, detail);
    assert!(pass);
}

#[test]
fn self_target_fixed_point() {
    let mut worst = 0u8;
    for seed in 0..100 {
        let scene = strict_scene(3000 + seed, 24, 18);
        let own = estimate_density(&to_brightness(&scene.hazy)).unwrap();
        let sample = damix(&scene.hazy, &scene.clean, AtmosphericLight::new(scene.params.airlight), &own, 1.0).unwrap();
        for (x, y) in sample.image.as_raw().iter().zip(scene.hazy.as_raw()) {
            worst = worst.max(x.abs_diff(*y));
        }
    }
    let pass = worst <= 1;
    report(
        "self-target fixed point",
        pass,
        format!("max per-pixel deviation {worst} level(s) over 100 instances (limit 1)"),
    );
    assert!(pass);
}

#[test]
fn quantile_grid_matches_definition() {
    // Guard for the grid convention every distance above relies on.
    let h = random_histogram(&mut rng(8));
    let q = to_quantile(&h, DEFAULT_GRID).unwrap();
    assert_eq!(q.grid_size(), DEFAULT_GRID);
}

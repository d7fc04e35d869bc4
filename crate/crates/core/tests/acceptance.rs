//! Acceptance criteria, one PASS/FAIL line each, run in sequence without the
//! libtest harness.

use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use accelaes::block::{sparse_attention, BlockWeights, TokenPartition};
use accelaes::experiment::{run_with_latent, sweep, Profile, RunConfig, SweepAxis};
use accelaes::guidance::{apply_cfg, GuidanceConfig};
use accelaes::mask::{aggregate_affinity, binarize, fallback_affinity, AesMask, AffinityMap, CrossAttnRecord, LayerSelection};
use accelaes::model::{sample, AffinePredictor, EngineConfig, LatentTokens, ModelSpec, Pass};
use accelaes::stepcache::{plan_schedule, StepCache, StepCacheConfig, StepLabel};
use accelaes::Matrix;

const DEGENERACY_PAIRS: usize = 20;
const DEGENERACY_TOL: f64 = 1e-8;
const DEGENERACY_BUDGET_S: f64 = 10.0;
const ROW_ORACLE_TOL: f64 = 1e-9;
const EXTRAPOLATION_TOL: f64 = 1e-12;
const TRAJECTORY_TOL: f64 = 1e-10;
const AFFINITY_TOL: f64 = 1e-6;
const MIN_SPEEDUP: f64 = 1.8;
const SKIP_RATIO_GRID: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];

const PROMPTS: [&str; 10] = [
    "a cinematic portrait of an old fisherman, dramatic lighting, intricate details",
    "a quiet harbor at dawn",
    "vivid watercolor of a fox in the snow",
    "a red bicycle leaning on a brick wall",
    "an intricate clockwork dragon, studio lighting, highly detailed",
    "two cups of coffee on a wooden table",
    "a moody cyberpunk alley in the rain, neon glow",
    "a child flying a kite on a windy beach",
    "ethereal forest clearing with soft volumetric light",
    "a plate of fresh fruit",
];

type Outcome = (bool, String);

fn desk() -> RunConfig {
    RunConfig {
        model: ModelSpec::default(),
        steps: 30,
        ..Profile::Custom.defaults()
    }
}

fn dense_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1);
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut identical = 0;
    let mut all_ones = true;
    for _ in 0..DEGENERACY_PAIRS {
        let seed: u64 = rng.gen_range(0..1_000_000);
        let prompt = PROMPTS.choose(&mut rng).unwrap().to_string();
        let g = rng.gen_range(1.5..7.5);
        let mut base = RunConfig {
            prompt,
            cfg_scale: g,
            cfg_aes_scale: g,
            ..desk()
        };
        base.override_seeds(seed);
        let accelerated = RunConfig {
            mask: true,
            // Rank zero of the sorted affinities: every token is a focus token.
            skip_ratio: 1e-3,
            sparse: true,
            spatial_cfg: true,
            delta: 1,
            ..base.clone()
        };
        let (_, dense) = run_with_latent(&base).expect("baseline run");
        let (report, acc) = run_with_latent(&accelerated).expect("accelerated run");
        all_ones &= report.mask.as_ref().is_some_and(|m| m.focus_count == m.export.n);
        let diff = acc.values().max_abs_diff(dense.values()).unwrap();
        identical += usize::from(acc == dense);
        worst = worst.max(diff);
    }
    let secs = started.elapsed().as_secs_f64();
    (
        all_ones && worst <= DEGENERACY_TOL && secs < DEGENERACY_BUDGET_S,
        format!(
            "{DEGENERACY_PAIRS} pairs, {identical} bit-identical, max |diff| {worst:.3e} (tol {DEGENERACY_TOL:e}), all-ones masks {all_ones}, {secs:.2} s (budget {DEGENERACY_BUDGET_S} s)"
        ),
    )
}

/// Pre-norm multi-head self-attention over every row, written out with plain
/// loops: normalize, project, per-head softmax(q k^T / sqrt(dh)) v, output
/// projection.
fn attention_oracle(x: &Matrix, w: &BlockWeights) -> Vec<Vec<f64>> {
    let (n, d) = x.shape();
    let heads = w.heads();
    let dh = d / heads;
    let normed: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + w.norm_attn.eps).sqrt();
            (0..d)
                .map(|j| (row[j] - mean) * inv * w.norm_attn.gain[j] + w.norm_attn.bias[j])
                .collect()
        })
        .collect();
    let project = |m: &Matrix| -> Vec<Vec<f64>> {
        normed
            .iter()
            .map(|r| (0..d).map(|j| (0..d).map(|p| r[p] * m.get(p, j)).sum()).collect())
            .collect()
    };
    let (q, k, v) = (project(&w.w_q), project(&w.w_k), project(&w.w_v));
    let mut mixed = vec![vec![0.0; d]; n];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|t| cols.clone().map(|c| q[i][c] * k[t][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                mixed[i][c] = (0..n).map(|t| e[t] / z * v[t][c]).sum();
            }
        }
    }
    mixed
        .iter()
        .map(|r| (0..d).map(|j| (0..d).map(|p| r[p] * w.w_o.get(p, j)).sum()).collect())
        .collect()
}

fn sparse_row_oracle() -> Outcome {
    let n = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(0xA2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let weights = BlockWeights::random(32, 16, 4, 64, &mut rng).unwrap();
        let hidden = Matrix::from_fn(n, 32, |_, _| rng.gen_range(-2.0..2.0));
        let size = rng.gen_range(1..=n);
        let mut tokens: Vec<usize> = (0..n).collect();
        tokens.shuffle(&mut rng);
        let partition = TokenPartition::new(n, &tokens[..size]).unwrap();
        let out = sparse_attention(&hidden, &partition, &weights).unwrap();
        let oracle = attention_oracle(&hidden, &weights);
        for (r, &i) in partition.focus().iter().enumerate() {
            for (a, b) in out.row(r).iter().zip(&oracle[i]) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    (
        worst <= ROW_ORACLE_TOL,
        format!("100 partitions at N={n}, max focus-row |diff| {worst:.3e} (tol {ROW_ORACLE_TOL:e})"),
    )
}

fn affine_step_cache() -> Outcome {
    let spec = ModelSpec::default();
    let (tokens, width, steps, g) = (spec.tokens(), spec.width, 30, 4.0);
    let predictor = AffinePredictor::random(tokens, width, 8, 0xA3);
    let truth = |k: usize| {
        let c = predictor.prediction(Pass::Cond, k);
        let u = predictor.prediction(Pass::Uncond, k);
        apply_cfg(&c, &u, None, &GuidanceConfig::uniform(g)).unwrap()
    };
    let schedule = plan_schedule(&StepCacheConfig {
        delta: 2,
        warmup: 5,
        total_steps: steps,
    })
    .unwrap();
    let mut cache = StepCache::new(schedule);
    let mut worst_step = 0.0f64;
    let mut skips = 0;
    for k in 0..steps {
        let out = cache.step_or_skip(k, || Ok(truth(k))).unwrap();
        if out.label == StepLabel::Skip {
            skips += 1;
            worst_step = worst_step.max(out.prediction.max_abs_diff(&truth(k)).unwrap());
        }
    }

    let init = LatentTokens::noise(&spec, 0xA3);
    let dense = sample(&mut predictor.clone(), &init, &EngineConfig::baseline(steps, g)).unwrap();
    let cached = EngineConfig {
        delta: 2,
        warmup: 5,
        ..EngineConfig::baseline(steps, g)
    };
    let acc = sample(&mut predictor.clone(), &init, &cached).unwrap();
    let traj = acc.latent.values().max_abs_diff(dense.latent.values()).unwrap();
    (
        skips > 0 && worst_step <= EXTRAPOLATION_TOL && traj <= TRAJECTORY_TOL,
        format!(
            "{skips} extrapolated steps, max |diff| {worst_step:.3e} (tol {EXTRAPOLATION_TOL:e}); trajectory max |diff| {traj:.3e} (tol {TRAJECTORY_TOL:e})"
        ),
    )
}

fn percentile_sparsity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA4);
    let mut worst = 0i64;
    let mut cases = 0;
    for n in [16usize, 64, 256] {
        for s in SKIP_RATIO_GRID {
            for _ in 0..20 {
                let mut values: Vec<f64> = (0..n).map(|i| i as f64 + rng.gen_range(0.0..0.5)).collect();
                values.shuffle(&mut rng);
                let map = AffinityMap {
                    values,
                    n_layers_used: 1,
                    aes_token_count: 1,
                };
                let mask = binarize(&map, s, 0).unwrap();
                let expected = n as i64 - (n as f64 * s).floor() as i64;
                worst = worst.max((mask.focus_count() as i64 - expected).abs());
                cases += 1;
            }
        }
    }
    (
        worst <= 1,
        format!("{cases} maps over N in {{16, 64, 256}} x ratios {SKIP_RATIO_GRID:?}, max |focus - expected| {worst} (tol 1)"),
    )
}

fn schedule_accounting() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for steps in [30, 28] {
        let out = Command::new(env!("CARGO_BIN_EXE_accelaes"))
            .args(["schedule", "--steps", &steps.to_string(), "--warmup", "5", "--delta", "2"])
            .output()
            .expect("spawn accelaes");
        if !out.status.success() {
            return (false, format!("schedule exited with {}", out.status));
        }
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).expect("schedule JSON");
        let labels: Vec<&str> = v["labels"].as_array().unwrap().iter().map(|l| l.as_str().unwrap()).collect();
        let full = labels.iter().filter(|&&l| l == "FULL").count();
        let skip = labels.len() - full;
        let warm_full = labels[..5].iter().all(|&l| l == "FULL");
        let bracketed = (0..labels.len())
            .filter(|&k| labels[k] == "SKIP")
            .all(|k| labels[k - 1] == "FULL" && labels.get(k + 1) == Some(&"FULL"));
        let sums = full + skip == steps
            && v["full_count"].as_u64() == Some(full as u64)
            && v["skip_count"].as_u64() == Some(skip as u64);
        let enumerated = v["skip_ratio"].as_f64().unwrap();
        let reference = v["reference_skip_ratio"].as_f64().unwrap();
        ok &= warm_full && bracketed && sums && v["invariants_hold"] == true;
        parts.push(format!(
            "T={steps}: {skip}/{steps} skipped = {:.1}% vs published {:.1}%",
            100.0 * enumerated,
            100.0 * reference
        ));
    }
    (ok, format!("{} (self-consistency required; agreement reported only)", parts.join("; ")))
}

fn cfg_collapse_and_locality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA6);
    let (n, d) = (32, 8);
    let mut collapse_ok = 0;
    let mut local_ok = 0;
    for _ in 0..100 {
        let cond = Matrix::from_fn(n, d, |_, _| rng.gen_range(-3.0..3.0));
        let uncond = Matrix::from_fn(n, d, |_, _| rng.gen_range(-3.0..3.0));
        let mut bits: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        bits[0] = true;
        let mask = AesMask::from_bits(bits.clone(), 50.0, 0).unwrap();
        let g = rng.gen_range(1.0..9.0);
        let spatial = GuidanceConfig {
            bg_scale: g,
            aes_scale: g,
            spatial: true,
        };
        let a = apply_cfg(&cond, &uncond, Some(&mask), &spatial).unwrap();
        let b = apply_cfg(&cond, &uncond, None, &GuidanceConfig::uniform(g)).unwrap();
        collapse_ok += usize::from(a == b);

        let cfg = GuidanceConfig {
            aes_scale: g + rng.gen_range(0.5..4.0),
            ..spatial
        };
        let flip = rng.gen_range(1..n);
        bits[flip] = !bits[flip];
        let flipped = AesMask::from_bits(bits, 50.0, 0).unwrap();
        let x = apply_cfg(&cond, &uncond, Some(&mask), &cfg).unwrap();
        let y = apply_cfg(&cond, &uncond, Some(&flipped), &cfg).unwrap();
        let changed: Vec<usize> = (0..n).filter(|&i| x.row(i) != y.row(i)).collect();
        local_ok += usize::from(changed == [flip]);
    }
    (
        collapse_ok == 100 && local_ok == 100,
        format!("collapse bit-identical in {collapse_ok}/100, single-token change in {local_ok}/100"),
    )
}

fn flop_consistency() -> Outcome {
    let lumina = Profile::LuminaLike.defaults();
    let points = sweep(&lumina, SweepAxis::SkipRatio, &SKIP_RATIO_GRID).unwrap();
    let speedups: Vec<f64> = points.iter().map(|p| p.report.estimated_speedup).collect();
    let monotone = speedups.windows(2).all(|w| w[1] >= w[0]);
    let mut reports: Vec<_> = points.into_iter().map(|p| p.report).collect();
    let (off, _) = run_with_latent(&Profile::Custom.defaults()).unwrap();
    let off_speedup = off.estimated_speedup;
    reports.push(off);
    let sums = reports.iter().all(|r| {
        let f = &r.flops;
        f.attention + f.ffn + f.other + f.extrapolation + f.mask == r.actual_flops
            && f.total() == r.actual_flops
            && r.steps.iter().map(|s| s.flops).sum::<u64>() == r.actual_flops
    });
    (
        monotone && sums && off_speedup == 1.0,
        format!(
            "speedups over skip_ratio {SKIP_RATIO_GRID:?}: {}; split sums exact {sums}; all accelerations off: {off_speedup}",
            speedups.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn affinity_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA8);
    let mut worst_all = 0.0f64;
    let mut worst_fallback = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(4..80);
        let m = rng.gen_range(1..17);
        let layers = rng.gen_range(1..6);
        let records: Vec<CrossAttnRecord> = (0..layers)
            .map(|l| {
                let raw = Matrix::from_fn(n, m, |_, _| rng.gen_range(0.0..1.0f64).powi(3) + 1e-9);
                let stochastic = Matrix::from_fn(n, m, |i, j| raw.get(i, j) / raw.row(i).iter().sum::<f64>());
                CrossAttnRecord::new(l, stochastic).unwrap()
            })
            .collect();
        let all: Vec<usize> = (0..m).collect();
        let map = aggregate_affinity(&records, &LayerSelection::All, &all).unwrap();
        let fb = fallback_affinity(&records, &LayerSelection::All).unwrap();
        for (a, f) in map.values.iter().zip(&fb.values) {
            worst_all = worst_all.max((a - 1.0).abs());
            worst_fallback = worst_fallback.max((f - 1.0 / m as f64).abs());
        }
    }
    (
        worst_all <= AFFINITY_TOL && worst_fallback <= AFFINITY_TOL,
        format!(
            "50 captures: all-token affinity max |a - 1| {worst_all:.3e}, fallback max |a - 1/M| {worst_fallback:.3e} (tol {AFFINITY_TOL:e})"
        ),
    )
}

fn default_profile() -> Outcome {
    let combined = Profile::LuminaLike.defaults();
    let spatial_only = RunConfig {
        delta: 1,
        ..combined.clone()
    };
    let temporal_only = RunConfig {
        mask: false,
        sparse: false,
        spatial_cfg: false,
        ..combined.clone()
    };
    let speedup = |c: &RunConfig| run_with_latent(c).unwrap().0.estimated_speedup;
    let (all, s, t) = (speedup(&combined), speedup(&spatial_only), speedup(&temporal_only));
    (
        all >= MIN_SPEEDUP && all > s && all > t,
        format!("estimated speedup combined {all:.3} (min {MIN_SPEEDUP}), spatial only {s:.3}, step cache only {t:.3}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("dense degeneracy", dense_degeneracy),
        ("sparse attention row oracle", sparse_row_oracle),
        ("step cache affine exactness", affine_step_cache),
        ("percentile sparsity", percentile_sparsity),
        ("schedule accounting", schedule_accounting),
        ("spatial guidance collapse and locality", cfg_collapse_and_locality),
        ("FLOP speedup consistency", flop_consistency),
        ("affinity normalization", affinity_normalization),
        ("default profile speedup", default_profile),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (pass, detail) = check();
        failed += usize::from(!pass);
        println!("{} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

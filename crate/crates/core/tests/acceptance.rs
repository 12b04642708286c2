//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Runs without the libtest harness; the synthetic training runs take a few
//! minutes on one core.

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use tsae::data::{
    discharge_capacity, generate_dataset, make_windows, normalize, GenerateConfig, Holdout,
    SimConfig, WindowIndex,
};
use tsae::decoder::{gru_step, Decoder, DecoderConfig};
use tsae::encoder::{conv1d_forward, Activation, ConvLayerSpec, LatentState};
use tsae::evaluation::{
    export_report, latent_across_soc, latent_alignment, latent_at_fixed_soc, rollout_metrics,
    spearman, ModelPredictor, PersistencePredictor, Predictor,
};
use tsae::loss::{correlation_loss, LatentBatch};
use tsae::numerics::{finite_diff_check, rng_for, GradCheckOptions, ParamStore, RealMatrix};
use tsae::training::{
    batch_gradients, batch_loss, load_checkpoint, prediction_loss, prepare, save_checkpoint,
    subsample, train, Model, TrainConfig,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn gradient_correctness() -> Outcome {
    let gen = GenerateConfig {
        cycles: 1,
        ..GenerateConfig::default()
    };
    let raw = generate_dataset(&SimConfig::default(), &gen).map_err(|e| e.to_string())?;
    let (ds, _) = normalize(&raw).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        n_a: 16,
        n_b: 8,
        n_xs: 2,
        lambda: 0.5,
        ..TrainConfig::default()
    };
    let enc = cfg.encoder_config();
    if enc.layers.len() != 2 {
        return Err(format!(
            "micro encoder has {} conv layers",
            enc.layers.len()
        ));
    }
    let model = Model::init(enc.clone(), cfg.n_b, 17).map_err(|e| e.to_string())?;
    let batch = vec![(900..904)
        .map(|s| WindowIndex { cycle: 0, start: s })
        .collect::<Vec<_>>()];
    let out = batch_gradients(&model, &ds, &batch, cfg.lambda).map_err(|e| e.to_string())?;
    let loss = |p: &ParamStore| {
        let m = Model::from_params(enc.clone(), cfg.n_b, p.clone())?;
        Ok(batch_loss(&m, &ds, &batch, cfg.lambda)?.total)
    };
    let report = finite_diff_check(
        loss,
        model.params(),
        &out.grads,
        GradCheckOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    check(
        report.passed && report.probes == model.params().num_scalars(),
        format!(
            "{} coordinates, max relative error {:.2e} (worst {:?}), L_corr {:.4}",
            report.probes, report.max_relative_error, report.worst, out.loss.corr
        ),
    )
}

// ---------------------------------------------------------------- 2

fn naive_conv(
    input: &[Vec<f64>],
    layer: &ConvLayerSpec,
    w: &[Vec<f64>],
    b: &[f64],
) -> Vec<Vec<f64>> {
    let len = (input[0].len() - layer.kernel_len) / layer.stride + 1;
    let mut out = vec![vec![0.0; len]; layer.out_channels];
    for j in 0..layer.out_channels {
        for k in 0..len {
            let mut acc = b[j];
            for i in 0..layer.in_channels {
                for r in 0..layer.kernel_len {
                    acc += input[i][k * layer.stride + r] * w[j][i * layer.kernel_len + r];
                }
            }
            out[j][k] = match layer.activation {
                Activation::Tanh => acc.tanh(),
                Activation::Identity => acc,
            };
        }
    }
    out
}

fn to_rows(m: &RealMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One GRU step written straight from the gate equations.
fn direct_gru(x: &[f64], u: f64, p: &[Vec<Vec<f64>>]) -> Vec<f64> {
    // p: w_z u_z b_z w_f u_f b_f w_r u_r b_r as row lists
    let n = x.len();
    let gate =
        |w: &Vec<Vec<f64>>, uu: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>, state: &[f64], i: usize| {
            let mut a = w[i][0] * u + b[i][0];
            for k in 0..n {
                a += uu[i][k] * state[k];
            }
            a
        };
    let z: Vec<f64> = (0..n)
        .map(|i| sig(gate(&p[0], &p[1], &p[2], x, i)))
        .collect();
    let r: Vec<f64> = (0..n)
        .map(|i| sig(gate(&p[3], &p[4], &p[5], x, i)))
        .collect();
    let rx: Vec<f64> = (0..n).map(|i| r[i] * x[i]).collect();
    let c: Vec<f64> = (0..n)
        .map(|i| gate(&p[6], &p[7], &p[8], &rx, i).tanh())
        .collect();
    (0..n).map(|i| z[i] * c[i] + (1.0 - z[i]) * x[i]).collect()
}

fn kernel_oracles() -> Outcome {
    let mut rng = rng_for(2024, 0);
    let mut worst_conv = 0.0f64;
    for _ in 0..100 {
        let layer = ConvLayerSpec {
            in_channels: rng.gen_range(1..5),
            out_channels: rng.gen_range(1..6),
            kernel_len: rng.gen_range(1..7),
            stride: rng.gen_range(1..5),
            activation: if rng.gen_bool(0.5) {
                Activation::Tanh
            } else {
                Activation::Identity
            },
        };
        let len = layer.kernel_len + rng.gen_range(0..30);
        let input: Vec<Vec<f64>> = (0..layer.in_channels)
            .map(|_| (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let w: Vec<Vec<f64>> = (0..layer.out_channels)
            .map(|_| {
                (0..layer.in_channels * layer.kernel_len)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let b: Vec<f64> = (0..layer.out_channels)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let im = RealMatrix::from_vec(layer.in_channels, len, input.concat())
            .map_err(|e| e.to_string())?;
        let wm = RealMatrix::from_vec(
            layer.out_channels,
            layer.in_channels * layer.kernel_len,
            w.concat(),
        )
        .map_err(|e| e.to_string())?;
        let bm = RealMatrix::column(b.clone()).map_err(|e| e.to_string())?;
        let fast = to_rows(&conv1d_forward(&im, &layer, &wm, &bm).map_err(|e| e.to_string())?);
        let slow = naive_conv(&input, &layer, &w, &b);
        for (a, o) in fast.iter().flatten().zip(slow.iter().flatten()) {
            worst_conv = worst_conv.max((a - o).abs());
        }
    }

    let n_x = 3;
    let n_b = 25;
    let mut params = ParamStore::new();
    let dec =
        Decoder::init(DecoderConfig::new(n_b, n_x), &mut params, 5).map_err(|e| e.to_string())?;
    for id in params.ids().collect::<Vec<_>>() {
        params
            .value_mut(id)
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.5..1.5));
    }
    let w = dec.weights(&params);
    let rows: Vec<Vec<Vec<f64>>> = [
        w.w_z, w.u_z, w.b_z, w.w_f, w.u_f, w.b_f, w.w_r, w.u_r, w.b_r,
    ]
    .iter()
    .map(|m| to_rows(m))
    .collect();
    let w0 = w.w_0.row(0).to_vec();
    let b0 = w.b_0.get(0, 0);

    let mut worst_step = 0.0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..n_x).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = rng.gen_range(-1.0..1.0);
        let fast = gru_step(&x, &[u], &w).map_err(|e| e.to_string())?;
        for (a, o) in fast.iter().zip(direct_gru(&x, u, &rows)) {
            worst_step = worst_step.max((a - o).abs());
        }
    }

    let mut worst_roll = 0.0f64;
    for _ in 0..20 {
        let xs: Vec<f64> = (0..n_x).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let us: Vec<f64> = (0..n_b).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = dec
            .rollout(
                &params,
                &LatentState::new(xs.clone()).map_err(|e| e.to_string())?,
                &us,
            )
            .map_err(|e| e.to_string())?;
        let mut x = xs;
        for (j, &u) in us.iter().enumerate() {
            x = direct_gru(&x, u, &rows);
            let y = (w0.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + b0).tanh();
            worst_roll = worst_roll.max((fast[j] - y).abs());
        }
    }
    check(
        worst_conv < 1e-12 && worst_step < 1e-12 && worst_roll < 1e-12,
        format!(
            "max |diff| conv {worst_conv:.1e}, gru_step {worst_step:.1e}, rollout {worst_roll:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn correlation_bounds() -> Outcome {
    let mut rng = rng_for(77, 0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut violations = 0;
    for _ in 0..1000 {
        let n_xs = rng.gen_range(1..5);
        let groups: Vec<LatentBatch> = (0..rng.gen_range(1..4))
            .map(|g| {
                let t = rng.gen_range(3..20);
                let latents = (0..t)
                    .map(|_| (0..n_xs).map(|_| rng.gen_range(-3.0..3.0)).collect())
                    .collect();
                LatentBatch::new(g, latents).expect("valid batch")
            })
            .collect();
        let v = correlation_loss(&groups, n_xs)
            .map_err(|e| e.to_string())?
            .value;
        let norm = v / n_xs as f64;
        lo = lo.min(norm);
        hi = hi.max(norm);
        if !(v >= -(n_xs as f64) && v <= 0.0) {
            violations += 1;
        }
    }
    let ramp = LatentBatch::new(
        0,
        (0..10)
            .map(|t| vec![t as f64, 0.5 * t as f64, -(t as f64)])
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let ramp_v = correlation_loss(&[ramp], 3)
        .map_err(|e| e.to_string())?
        .value;
    let flat = LatentBatch::new(0, vec![vec![0.4, -1.0]; 8]).map_err(|e| e.to_string())?;
    let flat_v = correlation_loss(&[flat], 2)
        .map_err(|e| e.to_string())?
        .value;
    check(
        violations == 0 && (ramp_v + 3.0).abs() < 1e-12 && flat_v == 0.0,
        format!(
            "1000 batches, L_corr/n_xs in [{lo:.3}, {hi:.3}], {violations} violations; ramp {ramp_v}, constant {flat_v}"
        ),
    )
}

// ---------------------------------------------------------------- 4, 5, 7, 8

const FIXTURE_DATA_SEED: u64 = 7;
const FIXTURE_SPLIT_SEED: u64 = 1;
const SOC_TARGET: f64 = 0.8;
const SOC_TOLERANCE: f64 = 0.01;
const Q_NOM_AH: f64 = 4.85;

fn fixture_config(n_xs: usize) -> TrainConfig {
    TrainConfig {
        n_a: 64,
        n_b: 32,
        n_xs,
        lambda: 0.1,
        batch_size: 4,
        contiguous_run_length: 16,
        learning_rate: 3e-3,
        max_epochs: 30,
        patience: 10,
        seed: 0,
        groups_per_epoch: Some(2048),
        validation_windows: Some(4096),
        ..TrainConfig::default()
    }
}

struct Run {
    predictor: ModelPredictor,
    config: TrainConfig,
    history: tsae::training::TrainHistory,
    train_pred: f64,
    test_cycles: Vec<usize>,
    seconds: f64,
}

fn fixture_data() -> Result<tsae::data::Dataset, String> {
    let gen = GenerateConfig {
        cycles: 60,
        seed: FIXTURE_DATA_SEED,
        ..GenerateConfig::default()
    };
    generate_dataset(&SimConfig::default(), &gen).map_err(|e| e.to_string())
}

fn run_fixture(raw: &tsae::data::Dataset, n_xs: usize) -> Result<Run, String> {
    let clock = Instant::now();
    let cfg = fixture_config(n_xs);
    let prep = prepare(raw, &cfg, &Holdout::LastCycles(10), 0.2, FIXTURE_SPLIT_SEED)
        .map_err(|e| e.to_string())?;
    let (model, history) = train(
        &prep.dataset,
        &prep.split.train,
        &prep.split.validation,
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    let train_pred = prediction_loss(
        &model,
        &prep.dataset,
        &subsample(&prep.split.train, Some(8192)),
    )
    .map_err(|e| e.to_string())?;
    Ok(Run {
        predictor: ModelPredictor::new(model, prep.stats),
        config: cfg,
        history,
        train_pred,
        test_cycles: prep.split.test_cycles,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

fn synthetic_end_to_end(raw: &tsae::data::Dataset, run: &Run) -> Outcome {
    let p = &run.predictor;
    let report = rollout_metrics(p, raw, &run.test_cycles).map_err(|e| e.to_string())?;
    let baseline = rollout_metrics(
        &PersistencePredictor {
            n_a: p.n_a(),
            n_b: p.n_b(),
        },
        raw,
        &run.test_cycles,
    )
    .map_err(|e| e.to_string())?;
    let ratio = report.rmse_v / baseline.rmse_v;

    let mut within = Vec::new();
    for &c in &run.test_cycles {
        let traj = latent_across_soc(p, &raw.cycles[c], Q_NOM_AH).map_err(|e| e.to_string())?;
        within.push(latent_alignment(&traj).map_err(|e| e.to_string())?.best_soc);
    }
    let soc_corr = within.iter().sum::<f64>() / within.len() as f64;

    let points = latent_at_fixed_soc(p, raw, SOC_TARGET, SOC_TOLERANCE, Q_NOM_AH)
        .map_err(|e| e.to_string())?;
    let index: Vec<f64> = points.iter().map(|q| q.cycle_index as f64).collect();
    let aging_rank = (0..p.model.n_xs())
        .map(|i| {
            spearman(
                &points.iter().map(|q| q.latent[i]).collect::<Vec<_>>(),
                &index,
            )
            .abs()
        })
        .fold(0.0, f64::max);

    check(
        ratio <= 0.5 && soc_corr >= 0.8 && aging_rank >= 0.7 && run.history.epochs.len() <= 50,
        format!(
            "(a) RMSE {:.2} mV vs persistence {:.2} mV, ratio {:.3} <= 0.5; (b) within-cycle |Pearson| vs SOC {:.3} >= 0.8; \
             (c) fixed-SOC |Spearman| vs cycle {:.3} over {} cycles >= 0.7; {} epochs, {:.0} s",
            report.rmse_v * 1e3,
            baseline.rmse_v * 1e3,
            ratio,
            soc_corr,
            aging_rank,
            points.len(),
            run.history.epochs.len(),
            run.seconds
        ),
    )
}

fn sweep_ordering(l1: f64, l2: f64, l3: f64) -> Outcome {
    let worse = (l1 - l2) / l2;
    let gain = (l2 - l3) / l2;
    check(
        worse >= 0.10 && gain < 0.10,
        format!(
            "train L_pred n_xs=1 {l1:.3e}, 2 {l2:.3e}, 3 {l3:.3e}; n_xs=1 worse by {:.0}% (>= 10%), n_xs=3 better by {:.1}% (< 10%)",
            worse * 100.0,
            gain * 100.0
        ),
    )
}

fn run_artifacts(
    raw: &tsae::data::Dataset,
    run: &Run,
    dir: &std::path::Path,
) -> Result<Vec<(String, Vec<u8>)>, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let ckpt = dir.join("fixture.ckpt");
    save_checkpoint(
        &ckpt,
        &run.predictor.model,
        &run.config,
        &run.predictor.stats,
        &run.history,
    )
    .map_err(|e| e.to_string())?;
    let report =
        rollout_metrics(&run.predictor, raw, &run.test_cycles).map_err(|e| e.to_string())?;
    let points = latent_at_fixed_soc(&run.predictor, raw, SOC_TARGET, SOC_TOLERANCE, Q_NOM_AH)
        .map_err(|e| e.to_string())?;
    export_report(&report, &points, run.predictor.model.n_xs(), dir).map_err(|e| e.to_string())?;
    [
        "fixture.ckpt",
        "metrics.csv",
        "predictions.csv",
        "latents.csv",
    ]
    .iter()
    .map(|f| {
        Ok((
            f.to_string(),
            std::fs::read(dir.join(f)).map_err(|e| e.to_string())?,
        ))
    })
    .collect()
}

fn reproducibility(raw: &tsae::data::Dataset, first: &Run, tmp: &std::path::Path) -> Outcome {
    let second = run_fixture(raw, 2)?;
    let a = run_artifacts(raw, first, &tmp.join("a"))?;
    let b = run_artifacts(raw, &second, &tmp.join("b"))?;
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    check(
        differing.is_empty() && first.history == second.history,
        format!(
            "checkpoint and metric CSVs compared byte for byte ({} files, {} bytes); differing: {:?}",
            a.len(),
            a.iter().map(|f| f.1.len()).sum::<usize>(),
            differing
        ),
    )
}

fn checkpoint_round_trip(raw: &tsae::data::Dataset, run: &Run, tmp: &std::path::Path) -> Outcome {
    let path = tmp.join("roundtrip.ckpt");
    let p = &run.predictor;
    save_checkpoint(&path, &p.model, &run.config, &p.stats, &run.history)
        .map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
    let q = ModelPredictor::new(loaded.model, loaded.stats);
    let windows = make_windows(raw, p.n_a(), p.n_b(), 1).map_err(|e| e.to_string())?;
    let probes = subsample(&windows, Some(10));
    let mut identical = 0;
    for s in probes.samples(raw) {
        let a = p.predict_volts(&s).map_err(|e| e.to_string())?;
        let b = q.predict_volts(&s).map_err(|e| e.to_string())?;
        let za = p.encode(&s).map_err(|e| e.to_string())?;
        let zb = q.encode(&s).map_err(|e| e.to_string())?;
        let same = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits());
        if same(&a, &b) && same(&za, &zb) {
            identical += 1;
        }
    }
    check(
        identical == 10 && loaded.config == run.config && loaded.history == run.history,
        format!("{identical}/10 probe windows bit-identical (latents and predictions)"),
    )
}

// ---------------------------------------------------------------- 6

fn discharge_capacity_check() -> Outcome {
    let current = vec![0.24; 727_500];
    let q = discharge_capacity(&current, 0.1, 4.85).map_err(|e| e.to_string())?;
    check(
        (q - 100.0).abs() < 1e-9,
        format!("Q_dis = {q:.12}% (|err| {:.1e})", (q - 100.0).abs()),
    )
}

// ----------------------------------------------------------------

fn report(id: u32, name: &str, outcome: &Outcome, failures: &mut u32) {
    match outcome {
        Ok(detail) => println!("PASS {id} {name}: {detail}"),
        Err(detail) => {
            *failures += 1;
            println!("FAIL {id} {name}: {detail}");
        }
    }
}

fn main() -> ExitCode {
    let clock = Instant::now();
    let mut failures = 0;
    let tmp = match tempfile::tempdir() {
        Ok(t) => t,
        Err(e) => {
            println!("FAIL setup: {e}");
            return ExitCode::FAILURE;
        }
    };

    report(
        1,
        "gradient correctness",
        &gradient_correctness(),
        &mut failures,
    );
    report(2, "kernel oracles", &kernel_oracles(), &mut failures);
    report(
        3,
        "correlation-loss bounds",
        &correlation_bounds(),
        &mut failures,
    );

    let fixture = fixture_data().and_then(|raw| {
        let run = run_fixture(&raw, 2)?;
        Ok((raw, run))
    });
    match &fixture {
        Ok((raw, run)) => {
            report(
                4,
                "synthetic end-to-end",
                &synthetic_end_to_end(raw, run),
                &mut failures,
            );
            let sweep = run_fixture(raw, 1)
                .and_then(|r1| run_fixture(raw, 3).map(|r3| (r1.train_pred, r3.train_pred)))
                .and_then(|(l1, l3)| sweep_ordering(l1, run.train_pred, l3));
            report(5, "n_xs sweep ordering", &sweep, &mut failures);
        }
        Err(e) => {
            report(4, "synthetic end-to-end", &Err(e.clone()), &mut failures);
            report(5, "n_xs sweep ordering", &Err(e.clone()), &mut failures);
        }
    }

    report(
        6,
        "discharge capacity",
        &discharge_capacity_check(),
        &mut failures,
    );

    match &fixture {
        Ok((raw, run)) => {
            report(
                7,
                "reproducibility",
                &reproducibility(raw, run, tmp.path()),
                &mut failures,
            );
            report(
                8,
                "checkpoint round trip",
                &checkpoint_round_trip(raw, run, tmp.path()),
                &mut failures,
            );
        }
        Err(e) => {
            report(7, "reproducibility", &Err(e.clone()), &mut failures);
            report(8, "checkpoint round trip", &Err(e.clone()), &mut failures);
        }
    }

    println!(
        "acceptance: {} of 8 criteria passed in {:.0} s",
        8 - failures,
        clock.elapsed().as_secs_f64()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 on any failure.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use bagnet3d::architecture::{compute_receptive_field, BagNetConfig, ForwardOptions, Mode, Model, Variant};
use bagnet3d::data::nifti::{parse_nifti1, write_nifti1};
use bagnet3d::data::rawvol::{parse_rawvol, write_rawvol_f32};
use bagnet3d::data::{
    generate_synthetic, split_dataset, BlobPairing, SyntheticSpec, SyntheticTask, Volume, WhitenScope,
};
use bagnet3d::ops::{conv3d, DEFAULT_NORM_EPS};
use bagnet3d::optim::adam_step;
use bagnet3d::train::{
    baseline_mae, evaluate, prepare_samples, Checkpoint, Sample, TrainConfig, Trainer, BEST_CHECKPOINT,
};
use bagnet3d::{
    build_bagnet3d, grad_check_many, local_predictions, lr_at, Accumulator, AdamHyper, AdamState, Real, Result,
    Tape, Task, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn criterion(n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Result<Outcome>) -> bool {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let within = elapsed < budget;
    let (pass, detail) = match result {
        Ok(o) => (o.pass && within, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "criterion {n} {name}: {} ({detail}; {:.1}s, budget {}s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

fn normal_input<T: Real>(shape: [usize; 5], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let (u, v): (f64, f64) = (rng.random_range(1e-12..1.0), rng.random());
        T::from_f64((-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos())
    })
}

// ---- criterion 1 -------------------------------------------------------------

fn receptive_fields() -> Result<Outcome> {
    let mut seen = Vec::new();
    for v in ["rf9", "rf17", "rf33", "rf177"] {
        let out = Command::new(env!("CARGO_BIN_EXE_bagnet3d"))
            .args(["rf", "--variant", v])
            .output()
            .expect("binary runs");
        let text = String::from_utf8_lossy(&out.stdout);
        let rf: usize = text
            .lines()
            .find_map(|l| l.strip_prefix("receptive field "))
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0);
        seen.push(rf);
    }
    Ok(outcome(seen == [9, 17, 33, 177], format!("reported {seen:?}")))
}

// ---- criterion 2 -------------------------------------------------------------

struct Unit {
    w: usize,
    b: usize,
    g: usize,
    s: usize,
    stride: usize,
    pad: usize,
}

fn unit(cin: usize, cout: usize, k: usize, stride: usize, params: &mut Vec<Tensor<f64>>, rng: &mut ChaCha8Rng) -> Unit {
    let base = params.len();
    params.push(uniform(&[cout, cin, k, k, k], -0.8, 0.8, rng));
    params.push(uniform(&[cout], -0.2, 0.2, rng));
    params.push(uniform(&[cout], 0.7, 1.3, rng));
    params.push(uniform(&[cout], -0.2, 0.2, rng));
    Unit {
        w: base,
        b: base + 1,
        g: base + 2,
        s: base + 3,
        stride,
        pad: (k - 1) / 2,
    }
}

/// Stem and three residual bottleneck blocks with a two-class dense head.
fn composite(rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Vec<Vec<Unit>>) {
    let mut params = Vec::new();
    let mut layers = vec![vec![unit(1, 2, 3, 1, &mut params, rng)]];
    let mut cin = 2;
    for (width, stride) in [(2, 2), (2, 1), (3, 1)] {
        let cout = 2 * width;
        let mut block = vec![
            unit(cin, width, 1, 1, &mut params, rng),
            unit(width, width, 3, stride, &mut params, rng),
            unit(width, cout, 1, 1, &mut params, rng),
        ];
        if stride != 1 || cin != cout {
            block.push(unit(cin, cout, 1, stride, &mut params, rng));
        }
        layers.push(block);
        cin = cout;
    }
    params.push(uniform(&[2, cin], -0.5, 0.5, rng));
    params.push(uniform(&[2], -0.1, 0.1, rng));
    (params, layers)
}

fn composite_loss(t: &mut Tape<f64>, v: &[Var], layers: &[Vec<Unit>], x: &Tensor<f64>, label: usize) -> Result<Var> {
    let cn = |t: &mut Tape<f64>, h: Var, u: &Unit| -> Result<Var> {
        let y = t.conv3d(h, v[u.w], Some(v[u.b]), u.stride, u.pad)?;
        t.instance_norm3d(y, v[u.g], v[u.s], DEFAULT_NORM_EPS)
    };
    let input = t.constant(x.clone());
    let mut h = cn(t, input, &layers[0][0])?;
    h = t.relu(h)?;
    for block in &layers[1..] {
        let mut m = cn(t, h, &block[0])?;
        m = t.relu(m)?;
        m = cn(t, m, &block[1])?;
        m = t.relu(m)?;
        m = cn(t, m, &block[2])?;
        let skip = match block.get(3) {
            Some(p) => cn(t, h, p)?,
            None => h,
        };
        let s = t.add(m, skip)?;
        h = t.relu(s)?;
    }
    let pooled = t.global_avg_pool(h)?;
    let n = v.len();
    let logits = t.linear(pooled, v[n - 2], v[n - 1])?;
    t.softmax_cross_entropy(logits, &[label])
}

fn away_from_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m: f64 = rng.random_range(1e-2..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn gradient_checks() -> Result<Outcome> {
    const TRIALS: u64 = 20;
    let h = 1e-6;
    let mut worst = 0f64;
    let mut worst_op = "";
    let mut checked = 0;
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut record = |name: &'static str, report: bagnet3d::GradCheckReport| {
            checked += report.checked;
            if report.max_rel_error >= worst {
                worst = report.max_rel_error;
                worst_op = name;
            }
        };

        let (k, stride, pad) = ([1, 3][rng.random_range(0..2)], rng.random_range(1..=2), rng.random_range(0..=1));
        let dims: Vec<usize> = (0..3).map(|_| rng.random_range(k.max(2)..=4)).collect();
        let (c, o) = (rng.random_range(1..=2), rng.random_range(1..=2));
        let x = uniform(&[1, c, dims[0], dims[1], dims[2]], -1.0, 1.0, &mut rng);
        let w = uniform(&[o, c, k, k, k], -1.0, 1.0, &mut rng);
        let b = uniform(&[o], -1.0, 1.0, &mut rng);
        record(
            "conv3d",
            grad_check_many(|t, v| t.conv3d(v[0], v[1], Some(v[2]), stride, pad), &[x, w, b], h)?,
        );

        let x = uniform(&[2, 2, 3, 2, 3], -2.0, 2.0, &mut rng);
        let g = uniform(&[2], 0.5, 1.5, &mut rng);
        let b = uniform(&[2], -0.5, 0.5, &mut rng);
        record(
            "instance_norm3d",
            grad_check_many(|t, v| t.instance_norm3d(v[0], v[1], v[2], DEFAULT_NORM_EPS), &[x, g, b], h)?,
        );

        let x = away_from_kink(&[2, 3, 2, 2, 2], &mut rng);
        record("relu", grad_check_many(|t, v| t.relu(v[0]), &[x], h)?);

        let (a, b) = (uniform(&[1, 2, 2, 2, 2], -1.0, 1.0, &mut rng), uniform(&[1, 2, 2, 2, 2], -1.0, 1.0, &mut rng));
        record("add", grad_check_many(|t, v| t.add(v[0], v[1]), &[a, b], h)?);

        let x = uniform(&[2, 3, 2, 3, 2], -1.0, 1.0, &mut rng);
        record("global_avg_pool", grad_check_many(|t, v| t.global_avg_pool(v[0]), &[x.clone()], h)?);
        let weights = uniform(x.shape(), -1.0, 1.0, &mut rng);
        record(
            "weighted_sum",
            grad_check_many(|t, v| t.weighted_sum(v[0], weights.clone()), &[x.clone()], h)?,
        );
        record("sum", grad_check_many(|t, v| t.sum(v[0]), &[x], h)?);

        let x = uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let w = uniform(&[2, 4], -1.0, 1.0, &mut rng);
        let b = uniform(&[2], -1.0, 1.0, &mut rng);
        record(
            "linear",
            grad_check_many(|t, v| t.linear(v[0], v[1], v[2]), &[x.clone(), w.clone(), b.clone()], h)?,
        );
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..2)).collect();
        let logits = uniform(&[3, 2], -2.0, 2.0, &mut rng);
        record(
            "softmax_cross_entropy",
            grad_check_many(|t, v| t.softmax_cross_entropy(v[0], &labels), &[logits.clone()], h)?,
        );
        let target = uniform(&[3, 2], -1.0, 1.0, &mut rng);
        record(
            "mse_loss",
            grad_check_many(|t, v| { let y = t.constant(target.clone()); t.mse_loss(v[0], y) }, &[logits], h)?,
        );

        let (params, layers) = composite(&mut rng);
        let x = uniform(&[1, 1, 6, 6, 6], -1.0, 1.0, &mut rng);
        let label = rng.random_range(0..2);
        record(
            "3-block composite",
            grad_check_many(|t, v| composite_loss(t, v, &layers, &x, label), &params, h)?,
        );
    }
    Ok(outcome(
        worst < 1e-5,
        format!("{TRIALS} trials, {checked} elements, max rel error {worst:.2e} ({worst_op})"),
    ))
}

// ---- criterion 3 -------------------------------------------------------------

fn oracle_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let [n, c, d, hh, ww] = x.dims5().unwrap();
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let out = |e: usize| (e + 2 * pad - k) / stride + 1;
    let mut y = Vec::new();
    for ni in 0..n {
        for oi in 0..o {
            for z in 0..out(d) {
                for r in 0..out(hh) {
                    for q in 0..out(ww) {
                        let mut acc = b.data()[oi];
                        for ci in 0..c {
                            for (a, bb, cc) in (0..k * k * k).map(|t| (t / (k * k), (t / k) % k, t % k)) {
                                let (iz, iy, ix) = (z * stride + a, r * stride + bb, q * stride + cc);
                                if iz < pad || iy < pad || ix < pad || iz - pad >= d || iy - pad >= hh || ix - pad >= ww {
                                    continue;
                                }
                                acc += w.get(&[oi, ci, a, bb, cc]).unwrap()
                                    * x.get(&[ni, ci, iz - pad, iy - pad, ix - pad]).unwrap();
                            }
                        }
                        y.push(acc);
                    }
                }
            }
        }
    }
    y
}

fn conv_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0f64;
    let mut cases = 0;
    while cases < 400 {
        let (n, c, o) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3));
        let dims: Vec<usize> = (0..3).map(|_| rng.random_range(1..=6)).collect();
        let (k, stride, pad) = ([1, 3][rng.random_range(0..2)], rng.random_range(1..=2), rng.random_range(0..=1));
        if dims.iter().any(|&e| e + 2 * pad < k) {
            continue;
        }
        let x = uniform(&[n, c, dims[0], dims[1], dims[2]], -1.0, 1.0, &mut rng);
        let w = uniform(&[o, c, k, k, k], -1.0, 1.0, &mut rng);
        let b = uniform(&[o], -1.0, 1.0, &mut rng);
        let fast = conv3d(&x, &w, Some(&b), stride, pad)?;
        let slow = oracle_conv(&x, &w, &b, stride, pad);
        if fast.len() != slow.len() {
            return Ok(outcome(false, format!("shape mismatch on case {cases}")));
        }
        for (a, e) in fast.data().iter().zip(&slow) {
            worst = worst.max((a - e).abs() / e.abs().max(1.0));
        }
        cases += 1;
    }
    Ok(outcome(worst < 1e-6, format!("{cases} shapes, max rel error {worst:.2e}")))
}

// ---- criterion 4 -------------------------------------------------------------

fn rf_support() -> Result<Outcome> {
    const N: usize = 48;
    let loc = [3usize, 3, 3];
    let mut details = Vec::new();
    let mut pass = true;
    for v in Variant::ALL {
        let cfg = BagNetConfig::desk(v);
        let rf = compute_receptive_field(&cfg);
        let center = loc.map(|p| p * rf.jump);
        let half = rf.rf / 2;
        let inside = |i: usize| {
            let p = [i / (N * N), (i / N) % N, i % N];
            (0..3).all(|a| p[a].abs_diff(center[a]) <= half)
        };
        let mut covered = vec![false; N * N * N];
        let mut leaks = 0;
        for seed in 0..5 {
            let model: Model<f64> = build_bagnet3d(&cfg, 1, seed)?;
            let mut tape = Tape::new();
            let mut opts = ForwardOptions::new(Mode::Eval).keep_features(true);
            opts.input_requires_grad = true;
            opts.detach_norm_stats = true;
            let out = model.forward_with(&mut tape, normal_input([1, 1, N, N, N], 50 + seed), opts)?;
            let feats = out.features.expect("features kept");
            let [_, f, d, h, w] = tape.value(feats).dims5()?;
            let s = d * h * w;
            let at = (loc[0] * h + loc[1]) * w + loc[2];
            let head = model.head_weight().clone();
            let select = Tensor::from_fn([1, f, d, h, w], |i| if i % s == at { head.data()[i / s] } else { 0.0 });
            let logit = tape.weighted_sum(feats, select)?;
            let grads = tape.backward(logit)?;
            let g = grads.get(out.input).expect("input gradient");
            for (i, &gv) in g.data().iter().enumerate() {
                if gv != 0.0 {
                    covered[i] = true;
                    if !inside(i) {
                        leaks += 1;
                    }
                }
            }
        }
        let cube = rf.rf.pow(3);
        let hit = (0..N * N * N).filter(|&i| inside(i) && covered[i]).count();
        pass &= leaks == 0 && hit == cube;
        details.push(format!("{v}: {hit}/{cube} covered, {leaks} outside"));
    }
    Ok(outcome(pass, details.join(", ")))
}

// ---- criterion 5 -------------------------------------------------------------

fn worst_residual<T: Real>(extent: usize) -> Result<f64> {
    let mut worst = 0f64;
    for v in Variant::ALL {
        for (task, seed) in [(Task::Age, 1u64), (Task::Sex, 2)] {
            let model: Model<T> = build_bagnet3d(&BagNetConfig::desk(v), task.output_dim(), seed)?;
            let x = normal_input::<T>([1, 1, extent, extent, extent], 70 + seed);
            worst = worst.max(local_predictions(&model, x, task)?.exchange_residual());
        }
    }
    Ok(worst)
}

fn exchange_identity() -> Result<Outcome> {
    let single = worst_residual::<f32>(32)?;
    let double = worst_residual::<f64>(32)?;
    Ok(outcome(
        single < 1e-4 && double < 1e-8,
        format!("max residual f32 {single:.2e}, f64 {double:.2e}"),
    ))
}

// ---- criterion 6 -------------------------------------------------------------

fn protocol_arithmetic() -> Result<Outcome> {
    let split = split_dataset(652, (0.7, 0.1), 0)?;
    let sizes = (split.train.len(), split.val.len(), split.test.len());

    let base = 1e-3;
    let breaks: Vec<usize> = (1..500).filter(|&e| lr_at(e, base) != lr_at(e - 1, base)).collect();
    let levels_ok = (0..5).all(|k| {
        let expected = base * 10f64.powi(-(k as i32));
        ((lr_at(100 * k, base) - expected) / expected).abs() < 1e-12
    });

    let cfg = BagNetConfig::desk(Variant::Rf9).with_widths(vec![2, 2, 2, 2], 2);
    let model: Model<f32> = build_bagnet3d(&cfg, 1, 0)?;
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    let decay: Vec<bool> = model.params().iter().map(|p| p.kind.is_weight()).collect();
    let mut micro = Vec::new();
    for i in 0..16u64 {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, normal_input([1, 1, 16, 16, 16], 200 + i), Mode::Train, false)?;
        let target = tape.constant(Tensor::full([1, 1], i as f32 * 0.1));
        let loss = tape.mse_loss(out.logits, target)?;
        let mut grads = tape.backward(loss)?;
        micro.push(out.params.iter().map(|&p| grads.take(p).expect("gradient")).collect::<Vec<_>>());
    }
    let shapes: Vec<Vec<usize>> = micro[0].iter().map(|g| g.shape().to_vec()).collect();
    let hyper = AdamHyper::default();
    let step = |grads: &[Tensor<f32>]| -> Result<Vec<Tensor<f32>>> {
        let mut m = model.clone();
        let mut state = AdamState::for_params(&m.param_values());
        let mut params: Vec<&mut Tensor<f32>> = m.values_mut().collect();
        adam_step(&mut params, grads, &decay, &names, &mut state, &hyper, lr_at(0, hyper.eta))?;
        Ok(m.param_values())
    };
    let mut acc = Accumulator::new(shapes.iter().map(Vec::as_slice), 16)?;
    for g in &micro {
        acc.accumulate(g)?;
    }
    let via_accumulator = step(&acc.flush(false)?)?;
    let mean: Vec<Tensor<f32>> = (0..shapes.len())
        .map(|p| {
            Tensor::from_fn(shapes[p].clone(), |e| {
                micro.iter().fold(0f32, |s, g| s + g[p].data()[e]) / 16.0
            })
        })
        .collect();
    let via_mean = step(&mean)?;
    let identical = via_accumulator
        .iter()
        .zip(&via_mean)
        .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let pass = sizes == (456, 65, 131) && breaks == [100, 200, 300, 400] && levels_ok && identical;
    Ok(outcome(
        pass,
        format!(
            "split {sizes:?}, lr breakpoints {breaks:?}, accumulation {}",
            if identical { "bit-identical" } else { "differs" }
        ),
    ))
}

// ---- criteria 7 and 8 --------------------------------------------------------

fn synth_samples(task: SyntheticTask, shape: [usize; 3], n: usize, seed: u64, pairing: BlobPairing) -> Result<Vec<Sample>> {
    let mut spec = SyntheticSpec::new(task, shape, n, seed);
    spec.pairing = pairing;
    let volumes: Vec<Volume> = generate_synthetic(&spec)?.into_iter().map(|s| s.volume).collect();
    let t = if task.is_classification() { Task::Sex } else { Task::Age };
    prepare_samples(&volumes, t, WhitenScope::AllVoxels)
}

/// Trains to `config.epochs` and scores the best-validation checkpoint on `test`.
fn train_and_test(mut config: TrainConfig, train: &[Sample], val: &[Sample], test: &[Sample]) -> Result<f64> {
    let dir = tempfile::tempdir().map_err(|e| bagnet3d::Error::io(std::env::temp_dir(), e))?;
    config.checkpoint_dir = Some(dir.path().to_path_buf());
    let crop = config.crop;
    let task = config.task;
    let mut trainer = Trainer::new(config, train)?;
    trainer.fit(train, val)?;
    let best = Checkpoint::load(&dir.path().join(BEST_CHECKPOINT))?;
    Ok(evaluate(&best.model()?, &best.scaler, task, test, crop)?.metric)
}

fn texture_regression() -> Result<Outcome> {
    let shape = [32, 32, 32];
    let task = SyntheticTask::TextureRegression;
    let pairing = BlobPairing::default();
    let train = synth_samples(task, shape, 200, 100, pairing)?;
    let val = synth_samples(task, shape, 50, 101, pairing)?;
    let test = synth_samples(task, shape, 100, 102, pairing)?;
    let mut config = TrainConfig::desk(Task::Age, Variant::Rf9);
    config.epochs = 10;
    config.seed = 0;
    let targets = |s: &[Sample]| s.iter().map(|x| x.target).collect::<Vec<_>>();
    let baseline = baseline_mae(&targets(&train), &targets(&test))?;
    let model_mae = train_and_test(config, &train, &val, &test)?;
    let ratio = model_mae / baseline;
    Ok(outcome(
        ratio <= 0.5,
        format!("test MAE {model_mae:.4} vs baseline {baseline:.4} (ratio {ratio:.2}) after 10 epochs"),
    ))
}

fn locality_separation() -> Result<Outcome> {
    let shape = [24, 24, 24];
    let task = SyntheticTask::GlobalStructure;
    let pairing = BlobPairing::Orientation;
    let mut mean_acc = [0f64; 2];
    let variants = [Variant::Rf9, Variant::Rf177];
    for seed in 0..3u64 {
        let base = 300 + 10 * seed;
        let train = synth_samples(task, shape, 200, base, pairing)?;
        let val = synth_samples(task, shape, 50, base + 1, pairing)?;
        let test = synth_samples(task, shape, 100, base + 2, pairing)?;
        for (slot, &v) in variants.iter().enumerate() {
            let mut config = TrainConfig::desk(Task::Sex, v);
            config.crop = shape;
            config.epochs = 8;
            config.seed = seed;
            mean_acc[slot] += train_and_test(config, &train, &val, &test)? / 3.0;
        }
    }
    let [local, wide] = mean_acc;
    Ok(outcome(
        local <= 0.65 && wide >= 0.85,
        format!("mean test accuracy rf9 {local:.3}, all-3x3 {wide:.3} over 3 seeds"),
    ))
}

// ---- criterion 9 -------------------------------------------------------------

fn golden_nifti() -> Vec<u8> {
    let mut b = vec![0u8; 352];
    b[0..4].copy_from_slice(&348i32.to_le_bytes());
    for (i, d) in [3i16, 2, 2, 2, 1, 1, 1, 1].iter().enumerate() {
        b[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    b[70..72].copy_from_slice(&16i16.to_le_bytes());
    b[72..74].copy_from_slice(&32i16.to_le_bytes());
    for (i, p) in [1f32, 1.5, 1.5, 2.0, 0.0, 0.0, 0.0, 0.0].iter().enumerate() {
        b[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
    }
    b[108..112].copy_from_slice(&352f32.to_le_bytes());
    b[112..116].copy_from_slice(&1f32.to_le_bytes());
    b[344..348].copy_from_slice(b"n+1\0");
    for v in 0..8 {
        b.extend_from_slice(&(v as f32 * 0.5 - 1.0).to_le_bytes());
    }
    b
}

fn determinism_and_checkpoints() -> Result<Outcome> {
    let task = SyntheticTask::TextureRegression;
    let pairing = BlobPairing::default();
    let train = synth_samples(task, [16, 16, 16], 12, 900, pairing)?;
    let val = synth_samples(task, [16, 16, 16], 4, 901, pairing)?;
    let mut config = TrainConfig::desk(Task::Age, Variant::Rf17);
    config.crop = [16, 16, 16];
    config.epochs = 3;
    config.accum_steps = 3;

    let run = || -> Result<_> {
        let mut t = Trainer::new(config.clone(), &train)?;
        let log = t.fit(&train, &val)?;
        Ok((log, t.model().param_values()))
    };
    let (log_a, params_a) = run()?;
    let (log_b, params_b) = run()?;
    let same_runs = log_a == log_b && params_a == params_b;

    let dir = tempfile::tempdir().map_err(|e| bagnet3d::Error::io(std::env::temp_dir(), e))?;
    let path = dir.path().join("mid.ckpt");
    let mut first = Trainer::new(config.clone(), &train)?;
    let mut log_c = vec![first.run_epoch(&train, &val)?];
    first.checkpoint().save(&path)?;
    drop(first);
    let mut resumed = Trainer::from_checkpoint(Checkpoint::load(&path)?)?;
    log_c.extend(resumed.fit(&train, &val)?);
    let same_resume = log_c == log_a && resumed.model().param_values() == params_a;

    let golden = golden_nifti();
    let (header, volume) = parse_nifti1(&golden)?;
    let expected: Vec<f32> = (0..8).map(|v| v as f32 * 0.5 - 1.0).collect();
    let nifti_ok = volume.voxels().data() == expected.as_slice()
        && volume.dims() == [2, 2, 2]
        && write_nifti1(&header, volume.voxels().data())? == golden;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let specials = [0.0f32, -0.0, f32::MIN_POSITIVE / 4.0, f32::MAX, f32::EPSILON];
    let t = Tensor::from_fn([3, 4, 5], |i| specials.get(i).copied().unwrap_or_else(|| rng.random_range(-1e6..1e6)));
    let bytes = write_rawvol_f32(&t);
    let (_, back) = parse_rawvol(&bytes)?;
    let rawvol_ok = write_rawvol_f32(&back) == bytes
        && back.shape() == t.shape()
        && back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());

    let flag = |b: bool| if b { "ok" } else { "FAILED" };
    Ok(outcome(
        same_runs && same_resume && nifti_ok && rawvol_ok,
        format!(
            "repeat run {}, resume {}, nifti golden {}, rawvol {}",
            flag(same_runs),
            flag(same_resume),
            flag(nifti_ok),
            flag(rawvol_ok)
        ),
    ))
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "receptive fields", secs(1), receptive_fields),
        criterion(2, "gradient correctness", secs(120), gradient_checks),
        criterion(3, "conv oracle", secs(60), conv_oracle),
        criterion(4, "rf gradient support", secs(300), rf_support),
        criterion(5, "exchange identity", secs(120), exchange_identity),
        criterion(6, "protocol arithmetic", secs(1), protocol_arithmetic),
        criterion(7, "texture regression", secs(20 * 60), texture_regression),
        criterion(8, "locality separation", secs(40 * 60), locality_separation),
        criterion(9, "determinism and checkpoints", secs(120), determinism_and_checkpoints),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

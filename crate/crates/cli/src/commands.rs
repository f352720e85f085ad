use std::fs;
use std::path::{Path, PathBuf};

use bagnet3d::architecture::{compute_receptive_field, BagNetConfig};
use bagnet3d::data::nifti::{parse_nifti1, write_nifti1, NiftiHeader};
use bagnet3d::data::rawvol::{parse_rawvol, write_rawvol_f32, write_rawvol_mask};
use bagnet3d::data::{
    generate_synthetic, load_mask, load_volume, split_dataset, whiten_with, Manifest, ManifestEntry, SyntheticSpec,
    SyntheticTask, Volume,
};
use bagnet3d::heatmap::{export_slice, slice_filename, SliceFormat, SliceIndex, Upsample};
use bagnet3d::train::{
    baseline_mae, evaluate, prepare_samples, Checkpoint, Sample, TrainConfig, Trainer, BEST_CHECKPOINT,
};
use bagnet3d::{local_predictions, Error, Result, Task};
use serde_json::{json, Value};

use crate::{BaselineArgs, ConfigArgs, EvalArgs, HeatmapArgs, InspectArgs, MapFormat, RfArgs, SynthArgs, TrainArgs, VolumeFormat};

const DEFAULT_RUN_DIR: &str = "run";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn print_json(value: &impl serde::Serialize) {
    outln!("{}", serde_json::to_string_pretty(value).expect("value serializes"));
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => serde_json::from_str::<SyntheticSpec>(&read_text(p)?)?,
        None => SyntheticSpec::new(
            args.task.map(Into::into).unwrap_or(SyntheticTask::TextureRegression),
            [32, 32, 32],
            100,
            0,
        ),
    };
    if let Some(t) = args.task {
        spec.task = t.into();
    }
    if let Some(n) = args.n {
        spec.samples = n;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(shape) = args.shape {
        spec.volume_shape = shape;
    }
    if let Some(p) = args.pairing {
        spec.pairing = p.into();
    }
    let samples = generate_synthetic(&spec)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let stem = format!("sample_{i:04}");
        let v = &s.volume;
        let (file, bytes) = match args.format {
            VolumeFormat::Rawvol => (format!("{stem}.rawvol"), write_rawvol_f32(v.voxels())),
            VolumeFormat::Nii => {
                let [d, h, w] = v.dims();
                (format!("{stem}.nii"), write_nifti1(&NiftiHeader::for_f32(w, h, d), v.voxels().data())?)
            }
        };
        write_file(&args.out.join(&file), &bytes)?;
        let mask_path = match v.mask() {
            Some(mask) => {
                let name = format!("{stem}_mask.rawvol");
                write_file(&args.out.join(&name), &write_rawvol_mask(v.voxels().shape(), mask)?)?;
                Some(PathBuf::from(name))
            }
            None => None,
        };
        entries.push(ManifestEntry {
            path: PathBuf::from(file),
            age: v.meta.age,
            sex: v.meta.sex,
            mask_path,
        });
    }
    let manifest = Manifest {
        root: args.out.clone(),
        entries,
    };
    let path = args.out.join("manifest.json");
    manifest.save(&path)?;
    write_file(&args.out.join("spec.json"), (serde_json::to_string_pretty(&spec)? + "\n").as_bytes())?;
    outln!("wrote {} volumes and {}", samples.len(), path.display());
    Ok(())
}

/// Merges the optional config file with flag overrides.
fn resolve_config(args: &ConfigArgs, extra: &[(&str, Value)]) -> Result<TrainConfig> {
    let mut value = match &args.config {
        Some(p) => serde_json::from_str::<Value>(&read_text(p)?)?,
        None => json!({}),
    };
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::config("training config must be a JSON object"))?;
    let mut set = |key: &str, v: Value| {
        obj.insert(key.to_string(), v);
    };
    if let Some(t) = args.task {
        set("task", json!(t.name()));
    }
    if let Some(v) = args.variant {
        set("variant", json!(v.name()));
    }
    if let Some(p) = args.preset {
        set("preset", json!(p.to_string()));
    }
    if let Some(s) = args.seed {
        set("seed", json!(s));
    }
    if let Some(e) = args.epochs {
        set("epochs", json!(e));
    }
    if let Some(c) = args.crop {
        set("crop", json!(c));
    }
    for (k, v) in extra {
        set(k, v.clone());
    }
    let config = TrainConfig::from_json(&value.to_string())?;
    config.validate()?;
    Ok(config)
}

fn load_manifest_volumes(path: &Path) -> Result<Vec<Volume>> {
    let m = Manifest::load(path)?;
    (0..m.len()).map(|i| m.load_volume(i)).collect()
}

fn pick(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

/// Train, validation and (possibly empty) test samples for a config.
fn datasets(config: &TrainConfig) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
    let manifest = config
        .manifest
        .as_ref()
        .ok_or_else(|| Error::config("no training manifest (use --manifest or the `manifest` config key)"))?;
    let load = |p: &Path| prepare_samples(&load_manifest_volumes(p)?, config.task, config.whiten_scope);
    let all = load(manifest)?;
    let (train, val, mut test) = match &config.val_manifest {
        Some(vp) => (all, load(vp)?, Vec::new()),
        None => {
            let split = split_dataset(all.len(), (config.split[0], config.split[1]), config.seed)?;
            (pick(&all, &split.train), pick(&all, &split.val), pick(&all, &split.test))
        }
    };
    if let Some(tp) = &config.test_manifest {
        test = load(tp)?;
    }
    Ok((train, val, test))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let resumed = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    let config = match &resumed {
        Some(ck) => ck.config.clone(),
        None => {
            let mut extra = Vec::new();
            let path_value = |p: &PathBuf| json!(p.to_string_lossy());
            if let Some(m) = &args.manifest {
                extra.push(("manifest", path_value(m)));
            }
            if let Some(m) = &args.val_manifest {
                extra.push(("val_manifest", path_value(m)));
            }
            if let Some(m) = &args.test_manifest {
                extra.push(("test_manifest", path_value(m)));
            }
            if let Some(o) = &args.out {
                extra.push(("checkpoint_dir", path_value(o)));
            }
            let mut config = resolve_config(&args.config, &extra)?;
            if config.checkpoint_dir.is_none() {
                config.checkpoint_dir = Some(PathBuf::from(DEFAULT_RUN_DIR));
            }
            config
        }
    };
    if args.dry_run {
        outln!("{}", config.to_json());
        return Ok(());
    }
    let (train, val, test) = datasets(&config)?;
    let mut trainer = match resumed {
        Some(ck) => Trainer::from_checkpoint(ck)?,
        None => Trainer::new(config, &train)?,
    };
    if let (true, Some(e)) = (args.resume.is_some(), args.config.epochs) {
        trainer.set_epochs(e)?;
    }
    let config = trainer.config().clone();
    eprintln!(
        "training {} {} ({} preset): {} train, {} val, {} test volumes, epochs {}..{}",
        config.task,
        config.variant,
        config.preset,
        train.len(),
        val.len(),
        test.len(),
        trainer.epoch(),
        config.epochs
    );
    let history = trainer.fit_with(&train, &val, |r| {
        eprintln!(
            "epoch {:>4}  lr {:.0e}  steps {:>4}  loss {:.5}  val {} {:.5}  best {:.5} @ {}",
            r.epoch, r.lr, r.steps, r.train_loss, r.metric, r.val_metric, r.best_metric, r.best_epoch
        );
    })?;
    if let Some(r) = history.last() {
        print_json(r);
    }
    if !test.is_empty() {
        let dir = config.checkpoint_dir.as_deref().unwrap_or(Path::new(DEFAULT_RUN_DIR));
        let best = Checkpoint::load(&dir.join(BEST_CHECKPOINT))?;
        let report = evaluate(&best.model()?, &best.scaler, config.task, &test, config.crop)?;
        eprintln!("test {} of the best checkpoint (epoch {}):", report.metric_name, best.epoch - 1);
        print_json(&report);
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let task = ck.config.task;
    let volumes = load_manifest_volumes(&args.manifest)?;
    if let Some(v) = volumes.iter().find(|v| label_missing(v, task)) {
        return Err(Error::config(format!(
            "checkpoint was trained for {task} but `{}` has no {task} label",
            v.meta.id
        )));
    }
    let samples = prepare_samples(&volumes, task, ck.config.whiten_scope)?;
    let report = evaluate(&ck.model()?, &ck.scaler, task, &samples, ck.config.crop)?;
    print_json(&report);
    Ok(())
}

fn label_missing(v: &Volume, task: Task) -> bool {
    match task {
        Task::Age => v.meta.age.is_none(),
        Task::Sex => v.meta.sex.is_none(),
    }
}

pub fn heatmap(args: HeatmapArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let model = ck.model()?;
    let task = ck.config.task;
    let mut volume = load_volume(&args.volume)?;
    if let Some(m) = &args.mask {
        volume = volume.with_mask(load_mask(m)?)?;
    }
    let x = whiten_with(&volume, ck.config.whiten_scope)?.to_input::<f32>();
    let map = local_predictions(&model, x, task)?;
    let residual = map.exchange_residual();
    outln!("exchange residual {residual:e}");
    let grid = map.display_grid()?;
    let axis = usize::from(args.axis);
    let index = args.slice.map_or(SliceIndex::Middle, SliceIndex::At);
    let upsample = match args.upsample {
        1 => Upsample::None,
        f => Upsample::Nearest(f as usize),
    };
    let formats: &[SliceFormat] = match args.format {
        MapFormat::Csv => &[SliceFormat::Csv],
        MapFormat::Pgm => &[SliceFormat::Pgm],
        MapFormat::Both => &[SliceFormat::Csv, SliceFormat::Pgm],
    };
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for &format in formats {
        let (slice, bytes) = export_slice(&grid, axis, index, format, upsample)?;
        let path = args.out.join(slice_filename(task, map.rf, axis, slice.index, format));
        write_file(&path, &bytes)?;
        outln!("wrote {} ({}x{})", path.display(), slice.rows, slice.cols);
    }
    Ok(())
}

pub fn rf(args: RfArgs) -> Result<()> {
    let config = match &args.model_config {
        Some(p) => {
            let c: BagNetConfig = serde_json::from_str(&read_text(p)?)?;
            c.validate()?;
            c
        }
        None => TrainConfig::preset(args.preset, Task::Age, args.variant).model_config()?,
    };
    let rf = compute_receptive_field(&config);
    if args.json {
        print_json(&json!({
            "rf": rf.rf,
            "jump": rf.jump,
            "layers": rf.layers.iter().map(|l| json!({
                "name": l.name, "kernel": l.kernel, "stride": l.stride, "rf": l.rf, "jump": l.jump,
            })).collect::<Vec<_>>(),
        }));
        return Ok(());
    }
    outln!("{:<24} {:>6} {:>6} {:>6} {:>6}", "layer", "kernel", "stride", "rf", "jump");
    for l in &rf.layers {
        outln!("{:<24} {:>6} {:>6} {:>6} {:>6}", l.name, l.kernel, l.stride, l.rf, l.jump);
    }
    outln!("receptive field {}", rf.rf);
    Ok(())
}

pub fn inspect(args: InspectArgs) -> Result<()> {
    let path = &args.path;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("nii") => {
            let (header, volume) = parse_nifti1(&bytes)?;
            outln!("{header}");
            outln!("volume_dims={:?}", volume.dims());
        }
        Some("rawvol") => {
            let (header, _) = parse_rawvol(&bytes)?;
            outln!("rank={}", header.rank);
            outln!("dims={:?}", header.dims);
            outln!("dtype={:?}", header.dtype);
            outln!("payload_offset={}", header.payload_offset());
        }
        Some("ckpt") => {
            let ck = Checkpoint::from_bytes(&bytes)?;
            outln!("config_hash={}", ck.config_hash);
            outln!("epoch={}", ck.epoch);
            outln!("params={}", ck.params.iter().map(|p| p.len()).sum::<usize>());
            outln!("tensors={}", ck.params.len());
            match ck.best {
                Some(b) => outln!("best={} @ epoch {}", b.metric, b.epoch),
                None => outln!("best=none"),
            }
            outln!("config={}", serde_json::to_string(&ck.config)?);
        }
        _ => {
            return Err(Error::Unsupported(format!(
                "{}: expected a .nii, .rawvol or .ckpt file",
                path.display()
            )))
        }
    }
    Ok(())
}

fn ages(path: &Path) -> Result<Vec<f64>> {
    Manifest::load(path)?
        .entries
        .iter()
        .map(|e| {
            e.age
                .ok_or_else(|| Error::data(format!("{}: entry {} has no age", path.display(), e.path.display())))
        })
        .collect()
}

pub fn baseline(args: BaselineArgs) -> Result<()> {
    let train = ages(&args.manifest)?;
    let test = match &args.test_manifest {
        Some(p) => ages(p)?,
        None => train.clone(),
    };
    let value = baseline_mae(&train, &test)?;
    print_json(&json!({ "task": "age", "n": test.len(), "metric": "mae", "baseline_mae": value }));
    Ok(())
}

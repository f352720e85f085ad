use bagnet3d::data::{generate_synthetic, SyntheticSpec, SyntheticTask, Volume, WhitenScope};
use bagnet3d::train::{prepare_samples, read_metrics_log, Checkpoint, Sample, TrainConfig, Trainer, BEST_CHECKPOINT, LATEST_CHECKPOINT, METRICS_LOG};
use bagnet3d::{Error, Task, Tensor, Variant};

fn samples(task: SyntheticTask, n: usize, seed: u64) -> Vec<Sample> {
    let spec = SyntheticSpec::new(task, [16, 16, 16], n, seed);
    let volumes: Vec<Volume> = generate_synthetic(&spec).unwrap().into_iter().map(|s| s.volume).collect();
    let t = if task == SyntheticTask::TextureRegression { Task::Age } else { Task::Sex };
    prepare_samples(&volumes, t, WhitenScope::AllVoxels).unwrap()
}

fn tiny_config(task: Task, accum: usize) -> TrainConfig {
    let mut cfg = TrainConfig::desk(task, Variant::Rf9);
    cfg.crop = [16, 16, 16];
    cfg.accum_steps = accum;
    cfg.epochs = 3;
    cfg.seed = 11;
    cfg
}

#[test]
fn one_step_per_accumulation_cycle() {
    let train = samples(SyntheticTask::TextureRegression, 10, 1);
    let val = samples(SyntheticTask::TextureRegression, 3, 2);
    for (accum, expected) in [(1, 10), (3, 4), (5, 2), (16, 1)] {
        let mut t = Trainer::new(tiny_config(Task::Age, accum), &train).unwrap();
        let rec = t.run_epoch(&train, &val).unwrap();
        assert_eq!(rec.steps, expected, "accum {accum}");
        assert_eq!(rec.epoch, 0);
        assert_eq!(t.epoch(), 1);
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    let train = samples(SyntheticTask::TextureRegression, 8, 3);
    let val = samples(SyntheticTask::TextureRegression, 3, 4);
    let run = || {
        let mut t = Trainer::new(tiny_config(Task::Age, 2), &train).unwrap();
        let history = t.fit(&train, &val).unwrap();
        (history, t.model().param_values())
    };
    let (ha, pa) = run();
    let (hb, pb) = run();
    assert_eq!(ha, hb);
    assert_eq!(pa, pb);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let train = samples(SyntheticTask::TextureClassification, 8, 5);
    let val = samples(SyntheticTask::TextureClassification, 4, 6);
    let cfg = tiny_config(Task::Sex, 3);

    let mut straight = Trainer::new(cfg.clone(), &train).unwrap();
    let full = straight.fit(&train, &val).unwrap();

    let mut first = Trainer::new(cfg, &train).unwrap();
    let head = first.run_epoch(&train, &val).unwrap();
    let bytes = first.checkpoint().to_bytes();
    drop(first);
    let mut resumed = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    let tail = resumed.fit(&train, &val).unwrap();

    assert_eq!(full[0], head);
    assert_eq!(&full[1..], &tail[..]);
    assert_eq!(straight.model().param_values(), resumed.model().param_values());
    assert_eq!(straight.best(), resumed.best());
}

#[test]
fn fit_writes_checkpoints_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let train = samples(SyntheticTask::TextureRegression, 6, 7);
    let val = samples(SyntheticTask::TextureRegression, 3, 8);
    let mut cfg = tiny_config(Task::Age, 2);
    cfg.checkpoint_dir = Some(dir.path().to_path_buf());
    let mut t = Trainer::new(cfg, &train).unwrap();
    let history = t.fit(&train, &val).unwrap();

    let log = read_metrics_log(&dir.path().join(METRICS_LOG)).unwrap();
    assert_eq!(log, history);
    let latest = Checkpoint::load(&dir.path().join(LATEST_CHECKPOINT)).unwrap();
    assert_eq!(latest.epoch, 3);
    assert_eq!(latest.params, t.model().param_values());
    let best = Checkpoint::load(&dir.path().join(BEST_CHECKPOINT)).unwrap();
    let b = t.best().unwrap();
    assert_eq!(best.epoch, b.epoch + 1);
    assert_eq!(b.metric, history[b.epoch].val_metric);
    assert!(history.iter().all(|r| r.val_metric >= b.metric));
}

#[test]
fn checkpoint_bytes_round_trip_and_reject_damage() {
    let train = samples(SyntheticTask::TextureRegression, 4, 9);
    let t = Trainer::new(tiny_config(Task::Age, 2), &train).unwrap();
    let bytes = t.checkpoint().to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.model().unwrap().param_values(), t.model().param_values());

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { .. })));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Format { .. })));
}

#[test]
fn non_finite_loss_is_reported() {
    let mut train = samples(SyntheticTask::TextureRegression, 3, 10);
    let val = train.clone();
    let v = &train[0].volume;
    let poisoned = Tensor::full(v.voxels().shape().to_vec(), f32::NAN);
    train[0].volume = Volume::new(poisoned).unwrap();
    let mut cfg = tiny_config(Task::Age, 1);
    cfg.seed = 0;
    let mut t = Trainer::new(cfg, &train).unwrap();
    let err = t.run_epoch(&train, &val).unwrap_err();
    assert!(matches!(err, Error::Numerics { .. }), "{err}");
}

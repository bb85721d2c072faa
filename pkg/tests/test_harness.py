import numpy as np
import pytest

from swinseg import cli
from swinseg import data as D
from swinseg import optim as O
from swinseg import tensor as T
from swinseg.config import RunConfig, dump_config, parse_config
from swinseg.errors import ConfigError, DataError, NumericError
from swinseg.infer import infer_ms, infer_ss
from swinseg.train import build_model, evaluate, load_checkpoint, train


def desk_config(decoder="mswin-s", steps=4, count=3, seed=0):
    cfg = RunConfig()
    cfg.model.decoder = decoder
    cfg.model.d_enc = 16
    cfg.model.heads = 2
    cfg.model.schedule = "3:0,3:1"
    cfg.model.backbone = "swin-nano"
    cfg.model.aux_hidden = 8
    cfg.optimizer.steps = steps
    cfg.optimizer.warmup = 2
    cfg.optimizer.lr = 1e-3
    cfg.data.count = count
    cfg.data.seed = seed
    cfg.data.crop = 32
    cfg.data.flip_p = 0.0
    cfg.eval.every = 2
    return cfg.validate()


# ---------------------------------------------------------------------------
# config


def test_config_parse_and_dump_round_trip():
    text = """
# a comment
model.decoder = mswin-p
model.d_enc = 32  # trailing comment
optimizer.lr = 0.001
data.crop = 64
eval.scales = 0.5,1.0
eval.flip = false
"""
    cfg = parse_config(text)
    assert cfg.model.decoder == "mswin-p"
    assert cfg.model.d_enc == 32
    assert cfg.optimizer.lr == 0.001
    assert cfg.eval.scales == (0.5, 1.0)
    assert cfg.eval.flip is False
    again = parse_config(dump_config(cfg))
    assert again == cfg


@pytest.mark.parametrize(
    "line",
    [
        "model.no_such_key = 1",
        "nosection.lr = 1",
        "model.d_enc = banana",
        "data.crop = 33",
        "model.decoder = upernet",
        "eval.scales = -1.0",
        "model.schedule = 5:1",
    ],
)
def test_config_rejects_bad_input(line):
    with pytest.raises(ConfigError):
        parse_config(line)


def test_schedule_from_windows_key():
    cfg = parse_config("model.windows = 5,7,12")
    assert cfg.model.window_schedule().entries == (
        (5, 0), (5, 2), (7, 0), (7, 3), (12, 0), (12, 6)
    )


# ---------------------------------------------------------------------------
# synthetic data


def test_synthetic_label_range_k2():
    samples = D.gen_synthetic(seed=1, count=1, h=64, w=64, num_classes=2)
    assert set(np.unique(samples[0].mask)) <= {0, 1}


def test_synthetic_determinism_byte_for_byte():
    a = D.gen_synthetic(seed=7, count=3, h=64, w=64, num_classes=4)
    b = D.gen_synthetic(seed=7, count=3, h=64, w=64, num_classes=4)
    for sa, sb in zip(a, b):
        assert sa.image.tobytes() == sb.image.tobytes()
        assert sa.mask.tobytes() == sb.mask.tobytes()


def test_synthetic_seeds_differ():
    a = D.gen_synthetic(seed=1, count=1, h=64, w=64, num_classes=4)[0]
    b = D.gen_synthetic(seed=2, count=1, h=64, w=64, num_classes=4)[0]
    assert a.mask.tobytes() != b.mask.tobytes()


def test_synthetic_class_frequencies_match_expectation():
    samples = D.gen_synthetic(seed=11, count=120, h=64, w=64, num_classes=4)
    counts = np.zeros(4)
    for s in samples:
        counts += np.bincount(s.mask.reshape(-1), minlength=4)
    observed = counts / counts.sum()
    expected = D.expected_visible_fraction(64, 64, 4)
    np.testing.assert_allclose(observed, expected, rtol=0.10)


def test_synthetic_rejects_degenerate():
    with pytest.raises(ConfigError):
        D.gen_synthetic(seed=0, count=1, h=4, w=4, num_classes=4)
    with pytest.raises(ConfigError):
        D.gen_synthetic(seed=0, count=1, h=64, w=64, num_classes=1)


# ---------------------------------------------------------------------------
# directory ingestion


def test_directory_round_trip(tmp_path):
    samples = D.gen_synthetic(seed=3, count=2, h=32, w=48, num_classes=4)
    samples[0].mask[0, 0] = 255  # ignore survives the trip
    D.save_dataset(samples, tmp_path)
    loaded = D.load_directory(tmp_path)
    assert len(loaded) == 2
    assert loaded[0].mask[0, 0] == 255
    np.testing.assert_array_equal(loaded[0].mask, samples[0].mask)
    assert np.abs(loaded[0].image - samples[0].image).max() < 1 / 255 + 1e-6


def test_directory_unpaired_file_is_error(tmp_path):
    D.save_dataset(D.gen_synthetic(seed=4, count=1, h=32, w=32, num_classes=3),
                   tmp_path)
    (tmp_path / "images" / "extra.png").write_bytes(
        (tmp_path / "images" / "00000.png").read_bytes()
    )
    with pytest.raises(DataError, match="extra"):
        D.load_directory(tmp_path)


def test_directory_empty_warns(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    with pytest.warns(UserWarning):
        assert D.load_directory(tmp_path) == []


def test_directory_size_mismatch(tmp_path):
    from PIL import Image

    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(
        tmp_path / "images" / "a.png"
    )
    Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(
        tmp_path / "masks" / "a.png"
    )
    with pytest.raises(DataError):
        D.load_directory(tmp_path)


# ---------------------------------------------------------------------------
# augmentation


def test_augment_identity_when_noop():
    sample = D.gen_synthetic(seed=5, count=1, h=32, w=32, num_classes=3)[0]
    rng = np.random.default_rng(0)
    out = D.augment(sample, 32, 32, flip_p=0.0, rng=rng)
    np.testing.assert_array_equal(out.image, sample.image)
    np.testing.assert_array_equal(out.mask, sample.mask)


def test_augment_double_flip_is_identity():
    sample = D.gen_synthetic(seed=6, count=1, h=32, w=32, num_classes=3)[0]
    once = D.augment(sample, 32, 32, flip_p=1.0, rng=np.random.default_rng(1))
    twice = D.augment(once, 32, 32, flip_p=1.0, rng=np.random.default_rng(2))
    np.testing.assert_array_equal(twice.image, sample.image)
    np.testing.assert_array_equal(twice.mask, sample.mask)


def test_augment_crop_labels_subset():
    sample = D.gen_synthetic(seed=8, count=1, h=64, w=64, num_classes=4)[0]
    allowed = set(np.unique(sample.mask)) | {255}
    for seed in range(5):
        out = D.augment(sample, 32, 32, flip_p=0.5, rng=np.random.default_rng(seed))
        assert set(np.unique(out.mask)) <= allowed
        assert out.mask.shape == (32, 32)


def test_augment_pads_small_input_with_ignore():
    sample = D.gen_synthetic(seed=9, count=1, h=32, w=32, num_classes=3)[0]
    out = D.augment(sample, 64, 64, flip_p=0.0, rng=np.random.default_rng(3))
    assert out.mask.shape == (64, 64)
    assert (out.mask[40:, :] == 255).all()
    assert (out.image[40:, :] == 0).all()


# ---------------------------------------------------------------------------
# optimizer


def test_adamw_zero_grad_no_decay_is_noop():
    p = np.ones(3)
    state = [(np.zeros(3), np.zeros(3))]
    O.adamw_step([p], [np.zeros(3)], state, lr=0.1, weight_decay=0.0, t=1)
    np.testing.assert_array_equal(p, np.ones(3))


def test_adamw_zero_grad_decay_shrinks():
    p = np.full(3, 2.0)
    state = [(np.zeros(3), np.zeros(3))]
    O.adamw_step([p], [np.zeros(3)], state, lr=0.1, weight_decay=0.01, t=1)
    np.testing.assert_allclose(p, 2.0 * (1 - 0.1 * 0.01))


def test_adamw_matches_scalar_reference_sequence():
    # minimize f(p) = p^2 from p = 1; hand-rolled update in the test
    lr, wd, b1, b2, eps = 0.1, 0.01, 0.9, 0.999, 1e-8

    p_ref, m_ref, v_ref = 1.0, 0.0, 0.0
    trace = []
    for t in range(1, 11):
        g = 2 * p_ref
        m_ref = b1 * m_ref + (1 - b1) * g
        v_ref = b2 * v_ref + (1 - b2) * g * g
        mh = m_ref / (1 - b1**t)
        vh = v_ref / (1 - b2**t)
        p_ref -= lr * (mh / (np.sqrt(vh) + eps) + wd * p_ref)
        trace.append(p_ref)

    p = np.array([1.0])
    state = [(np.zeros(1), np.zeros(1))]
    for t in range(1, 11):
        O.adamw_step([p], [2 * p.copy()], state, lr, wd, (b1, b2), eps, t)
        assert abs(p[0] - trace[t - 1]) < 1e-10


def test_adamw_rejects_nonfinite_grads():
    p = np.ones(2)
    state = [(np.zeros(2), np.zeros(2))]
    with pytest.raises(NumericError):
        O.adamw_step([p], [np.array([np.nan, 0.0])], state, 0.1, 0.0)


def test_warmup_schedule():
    assert O.warmup_lr(1.0, 1, 100) == 0.01
    assert O.warmup_lr(1.0, 100, 100) == 1.0
    assert O.warmup_lr(1.0, 500, 100) == 1.0
    assert O.warmup_lr(0.5, 3, 0) == 0.5


# ---------------------------------------------------------------------------
# training loop


def test_train_lr_zero_keeps_parameters_and_loss():
    # trainable parameters must not move; batch-norm running stats are
    # state, not parameters, and still update during forward passes
    cfg = desk_config(steps=4, count=1)
    cfg.optimizer.lr = 0.0
    cfg.optimizer.weight_decay = 0.0
    model_before = build_model(cfg)
    before = {n: t.data.copy() for n, t in model_before.trainable_params()}
    result = train(cfg, "/tmp/swinseg_test_lr0")
    model_after = load_checkpoint(cfg, result.checkpoint)
    for n, t in model_after.trainable_params():
        np.testing.assert_array_equal(t.data, before[n].astype(np.float32))
    losses = [
        line.split("loss=")[1].split()[0]
        for line in result.metrics_log.read_text().splitlines()
        if line.startswith("step=")
    ]
    assert len(set(losses)) == 1


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_train_loss_strictly_decreases_on_fixed_batch(seed):
    # default lr (6e-5), single fixed sample: the first 20 steps must each
    # reduce the loss
    cfg = desk_config(steps=20, count=1, seed=seed)
    cfg.optimizer.lr = 6e-5
    cfg.optimizer.warmup = 100
    cfg.eval.every = 1
    result = train(cfg, f"/tmp/swinseg_test_mono_{seed}")
    losses = [
        float(line.split("loss=")[1].split()[0])
        for line in result.metrics_log.read_text().splitlines()
        if line.startswith("step=")
    ]
    assert len(losses) == 20
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_train_metrics_log_determinism():
    cfg_a = desk_config(steps=6, seed=5)
    cfg_b = desk_config(steps=6, seed=5)
    ra = train(cfg_a, "/tmp/swinseg_test_det_a")
    rb = train(cfg_b, "/tmp/swinseg_test_det_b")
    assert ra.metrics_log.read_text() == rb.metrics_log.read_text()


def test_checkpoint_round_trip_reproduces_eval(tmp_path):
    cfg = desk_config(steps=6, seed=6)
    result = train(cfg, tmp_path / "run")
    from swinseg.train import load_dataset

    samples = load_dataset(cfg)
    model = load_checkpoint(cfg, result.checkpoint)
    cm1 = evaluate(model, samples, cfg.model.num_classes)
    model2 = load_checkpoint(cfg, result.checkpoint)
    cm2 = evaluate(model2, samples, cfg.model.num_classes)
    assert cm1.miou() == cm2.miou()
    assert cm1.miou() == result.final_miou


def test_train_aborts_on_nonfinite_loss(tmp_path, monkeypatch):
    import swinseg.train as train_mod

    def poisoned(logits, aux_logits, labels):
        return T.constant(np.float32(np.nan)), None, None

    monkeypatch.setattr(train_mod, "composite_loss", poisoned)
    cfg = desk_config(steps=3)
    with pytest.raises(NumericError):
        train_mod.train(cfg, tmp_path / "run")
    assert (tmp_path / "run" / "checkpoint.swpt").exists()
    log = (tmp_path / "run" / "metrics.log").read_text()
    assert "aborted" in log


# ---------------------------------------------------------------------------
# inference protocols


@pytest.fixture(scope="module")
def tiny_trained():
    cfg = desk_config(steps=8, seed=9)
    result = train(cfg, "/tmp/swinseg_test_tiny_model")
    return cfg, load_checkpoint(cfg, result.checkpoint)


def test_infer_ss_extents_and_scale_invariance(tiny_trained):
    _, model = tiny_trained
    img = D.gen_synthetic(seed=10, count=1, h=48, w=80, num_classes=4)[0].image
    pred = infer_ss(model, img)
    assert pred.shape == (48, 80)
    # positive scaling of logits cannot change the argmax
    probs_pred = infer_ss(model, img)
    np.testing.assert_array_equal(pred, probs_pred)


def test_infer_ms_singleton_scale_bit_identical(tiny_trained):
    _, model = tiny_trained
    img = D.gen_synthetic(seed=11, count=1, h=32, w=32, num_classes=4)[0].image
    ss = infer_ss(model, img)
    ms = infer_ms(model, img, scales=[1.0], flip=False)
    assert np.array_equal(ss, ms)


def test_infer_ms_duplicate_scales_idempotent(tiny_trained):
    _, model = tiny_trained
    img = D.gen_synthetic(seed=12, count=1, h=32, w=32, num_classes=4)[0].image
    once = infer_ms(model, img, scales=[0.75], flip=False)
    twice = infer_ms(model, img, scales=[0.75, 0.75], flip=False)
    np.testing.assert_array_equal(once, twice)


def test_infer_ms_flip_preserves_symmetry(tiny_trained):
    _, model = tiny_trained
    half = D.gen_synthetic(seed=13, count=1, h=32, w=32, num_classes=4)[0].image
    sym = np.concatenate([half[:, :16], half[:, :16][:, ::-1]], axis=1)
    pred = infer_ms(model, sym, scales=[1.0], flip=True)
    np.testing.assert_array_equal(pred, pred[:, ::-1])


def test_sliding_window_inference_covers_large_image(tiny_trained):
    _, model = tiny_trained
    img = D.gen_synthetic(seed=14, count=1, h=96, w=64, num_classes=4)[0].image
    pred = infer_ss(model, img, crop=32)
    assert pred.shape == (96, 64)
    assert set(np.unique(pred)) <= {0, 1, 2, 3}


# ---------------------------------------------------------------------------
# CLI


def write_config(tmp_path, **overrides):
    cfg = desk_config(**overrides)
    path = tmp_path / "run.conf"
    path.write_text(dump_config(cfg))
    return path, cfg


def test_cli_gen_data_and_eval_round_trip(tmp_path, capsys):
    assert cli.main([
        "gen-data", "--seed", "3", "--count", "2", "--out", str(tmp_path / "ds"),
        "--size", "32x32", "--classes", "4",
    ]) == 0
    assert (tmp_path / "ds" / "images" / "00000.png").exists()
    assert (tmp_path / "ds" / "masks" / "00001.png").exists()

    conf, _ = write_config(tmp_path, steps=3)
    assert cli.main(["train", "--config", str(conf), "--out",
                     str(tmp_path / "run")]) == 0
    out = capsys.readouterr().out
    assert "checkpoint=" in out

    assert cli.main([
        "eval", "--config", str(conf),
        "--checkpoint", str(tmp_path / "run" / "checkpoint.swpt"),
        "--confusion-csv", str(tmp_path / "cm.csv"),
    ]) == 0
    out = capsys.readouterr().out
    assert "miou=" in out and "pixel_accuracy=" in out
    assert (tmp_path / "cm.csv").exists()

    assert cli.main([
        "eval", "--config", str(conf),
        "--checkpoint", str(tmp_path / "run" / "checkpoint.swpt"), "--ms",
    ]) == 0
    assert "mode=ms" in capsys.readouterr().out


def test_cli_flops(tmp_path, capsys):
    conf, _ = write_config(tmp_path)
    assert cli.main(["flops", "--config", str(conf), "--size", "64x64"]) == 0
    out = capsys.readouterr().out
    assert "flops_total=" in out and "flops_backbone=" in out


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.conf"
    bad.write_text("model.decoder = bogus\n")
    assert cli.main(["train", "--config", str(bad)]) == 1
    assert cli.main(["flops", "--config", str(bad), "--size", "64x64"]) == 1

    conf, _ = write_config(tmp_path)
    assert cli.main(["flops", "--config", str(conf), "--size", "banana"]) == 1
    assert cli.main(["nope"]) == 1  # unknown subcommand -> config error

    # missing directory dataset -> data error
    dconf = tmp_path / "dir.conf"
    cfg = desk_config(steps=2)
    cfg.data.source = "directory"
    cfg.data.path = str(tmp_path / "missing")
    dconf.write_text(dump_config(cfg))
    assert cli.main(["train", "--config", str(dconf)]) == 2
    capsys.readouterr()

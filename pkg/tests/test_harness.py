import json

import numpy as np
import pytest

from vitsplice import vit_recon as vr
from vitsplice.errors import CheckpointError, ConfigError, DataError
from vitsplice.evalkit import SIZE_BUCKETS
from vitsplice.harness import checkpoint as ck
from vitsplice.harness import config as cf
from vitsplice.harness import images as im
from vitsplice.harness import synth, workflows
from vitsplice.harness.cli import main
from vitsplice.morphology import connected_components

TINY_TEXT = """\
seed = 5
vit.image_size = 32
vit.patch_size = 16
vit.model_dim = 8
vit.depth = 1
vit.heads = 2
vit.linformer_k = 3
vit.mlp_hidden = 16
vit.head_hidden = 16
train.steps = 6
train.batch_size = 4
detect.stride = 32
"""


@pytest.fixture
def tiny_cfg():
    return cf.parse_config(TINY_TEXT)


class TestConfig:
    def test_round_trip(self, tiny_cfg):
        text = cf.serialize_config(tiny_cfg)
        again = cf.parse_config(text)
        assert again == tiny_cfg
        assert cf.serialize_config(again) == text

    def test_defaults_round_trip(self):
        cfg = cf.parse_config("seed = 18446744073709551615")
        assert cf.parse_config(cf.serialize_config(cfg)) == cfg
        assert cfg.vit == vr.ViTConfig() and cfg.post.max_iterations is None

    def test_all_value_kinds(self):
        text = "seed = 1\npost.schedule = 1:2, 2:5\npost.fill_holes = false\npost.max_iterations = 4\nthreshold.policy = otsu\n"
        cfg = cf.parse_config(text)
        assert cfg.post.schedule == ((1, 2), (2, 5)) and not cfg.post.fill_holes
        assert cfg.post.build().iteration_cap(np.ones((2, 2))) == 4
        assert cf.parse_config(cf.serialize_config(cfg)) == cfg

    @pytest.mark.parametrize(
        "text",
        [
            "seed = 1\ntrain.stpes = 3\n",
            "train.steps = 3\n",
            "seed = 1\nseed = 2\n",
            "seed = x\n",
            "seed = -1\n",
            "seed = 1\nvit.depth\n",
            "seed = 1\nvit.image_size = 100\n",
            "seed = 1\npost.schedule = 2:1\n",
            "seed = 1\nthreshold.policy = median\n",
            "seed = 1\npost.fill_holes = maybe\n",
            "seed = 1\ndetect.stride = 1000\n",
        ],
    )
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            cf.parse_config(text)

    def test_overrides_and_env(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("seed = 1  # comment\ntrain.steps = 3\n")
        env = {"VITSPLICE_TRAIN__STEPS": "9", "VITSPLICE_THRESHOLD__VALUE": "0.5", "HOME": "/x"}
        cfg = cf.load_config(p, {"seed": "4"}, environ=env)
        assert (cfg.seed, cfg.train.steps, cfg.threshold.value) == (4, 9, 0.5)
        assert cf.load_config(p, {"train.steps": "2"}, environ=env).train.steps == 2
        with pytest.raises(ConfigError):
            cf.load_config(p, environ={"VITSPLICE_TRAIN__STPES": "1"})


class TestCheckpoint:
    def test_round_trip(self, tiny_cfg, tmp_path):
        params = vr.init_params(tiny_cfg.vit, 3)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        ck.save_checkpoint(params, tiny_cfg, a)
        loaded, cfg = ck.load_checkpoint(a)
        assert cfg == tiny_cfg and list(loaded) == list(params)
        for n in params:
            assert loaded[n].data.tobytes() == params[n].data.tobytes()
        ck.save_checkpoint(loaded, cfg, b)
        assert a.read_bytes() == b.read_bytes()

    def test_any_corrupted_byte_rejected(self, tiny_cfg, tmp_path):
        path = tmp_path / "a.ckpt"
        ck.save_checkpoint(vr.init_params(tiny_cfg.vit, 0), tiny_cfg, path)
        blob = path.read_bytes()
        rng = np.random.default_rng(0)
        for pos in [0, 9, 20, len(blob) // 2, len(blob) - 40, len(blob) - 1, *rng.integers(0, len(blob), 20)]:
            bad = bytearray(blob)
            bad[pos] ^= 0x10
            path.write_bytes(bytes(bad))
            with pytest.raises(CheckpointError):
                ck.load_checkpoint(path)
        path.write_bytes(blob[:30])
        with pytest.raises(CheckpointError, match="truncated"):
            ck.load_checkpoint(path)

    def test_version_mismatch(self, tiny_cfg, tmp_path):
        import hashlib
        import struct

        blob = ck.checkpoint_bytes(vr.init_params(tiny_cfg.vit, 0), tiny_cfg)
        body = bytearray(blob[:-32])
        struct.pack_into("<I", body, 8, 2)
        path = tmp_path / "v2.ckpt"
        path.write_bytes(bytes(body) + hashlib.sha256(body).digest())
        with pytest.raises(CheckpointError, match="version 2"):
            ck.load_checkpoint(path)

    def test_shape_mismatch_names_tensor(self, tiny_cfg, tmp_path):
        path = tmp_path / "a.ckpt"
        ck.save_checkpoint(vr.init_params(tiny_cfg.vit, 0), tiny_cfg, path)
        other = vr.ViTConfig(**{**tiny_cfg.vit.to_dict(), "mlp_hidden": 12})
        with pytest.raises(CheckpointError, match="blocks.0.mlp.w1"):
            ck.load_checkpoint(path, other)
        deeper = vr.ViTConfig(**{**tiny_cfg.vit.to_dict(), "depth": 2})
        with pytest.raises(CheckpointError, match="missing"):
            ck.load_checkpoint(path, deeper)

    def test_params_must_match_config(self, tiny_cfg, tmp_path):
        with pytest.raises(CheckpointError):
            ck.save_checkpoint(vr.init_params(vr.ViTConfig(depth=1), 0), tiny_cfg, tmp_path / "x.ckpt")


class TestImages:
    @pytest.mark.parametrize("dtype,shape", [(np.uint8, (7, 5, 3)), (np.uint16, (4, 6, 3)), (np.uint8, (5, 5)), (np.uint16, (3, 8))])
    def test_png_round_trip(self, tmp_path, dtype, shape):
        a = np.random.default_rng(0).integers(0, np.iinfo(dtype).max + 1, shape).astype(dtype)
        im.save_image(a, tmp_path / "x.png")
        b = im.load_image(tmp_path / "x.png")
        assert b.dtype == dtype and np.array_equal(a, b)

    @pytest.mark.parametrize("suffix", [".png", ".pbm"])
    def test_mask_round_trip(self, tmp_path, suffix):
        m = np.random.default_rng(1).random((13, 9)) < 0.4
        im.save_image(m, tmp_path / f"m{suffix}")
        assert np.array_equal(im.load_mask(tmp_path / f"m{suffix}"), m)

    def test_heatmap_scale(self, tmp_path):
        h = np.random.default_rng(2).gamma(2.0, 0.05, (20, 30))
        meta = im.save_heatmap(h, tmp_path / "h.png")
        sidecar = json.loads((tmp_path / "h.json").read_text())
        assert sidecar == meta and sidecar["min"] == h.min() and sidecar["max"] == h.max()
        back = im.load_heatmap(tmp_path / "h.png")
        assert np.abs(back - h).max() <= (h.max() - h.min()) / 65535

    def test_to_unit(self):
        assert im.to_unit(np.array([[0, 255]], np.uint8)).shape == (1, 2, 3)
        assert im.to_unit(np.full((1, 1, 3), 65535, np.uint16)).max() == 1.0

    def test_errors(self, tmp_path):
        with pytest.raises(DataError):
            im.load_image(tmp_path / "missing.png")
        (tmp_path / "bad.png").write_bytes(b"\x89PNG\r\n\x1a\n garbage")
        with pytest.raises(DataError):
            im.load_image(tmp_path / "bad.png")
        with pytest.raises(DataError):
            im.load_image(tmp_path / "x.jpg")
        with pytest.raises(DataError):
            im.save_image(np.zeros((2, 2)), tmp_path / "f.png")


class TestSynth:
    def test_deterministic(self, tmp_path):
        spec = synth.SpliceSpec(sizes=(16, 32))
        synth.generate_synthetic_dataset(3, 2, 3, spec, tmp_path / "a", 64)
        synth.generate_synthetic_dataset(3, 2, 3, spec, tmp_path / "b", 64)
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert len(files) == 11
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_masks(self, tmp_path):
        spec = synth.SpliceSpec()
        man = synth.generate_synthetic_dataset(1, 2, 12, spec, tmp_path, 256)
        for e in man["pristine"]:
            assert not im.load_mask(tmp_path / "masks" / e["file"]).any()
        for e in man["spliced"]:
            gt = im.load_mask(tmp_path / "masks" / e["file"])
            sides = {s.max_side for s in connected_components(gt)[1]}
            assert max(sides) == e["size"] and e["size"] in SIZE_BUCKETS

    def test_object_bbox_exact(self):
        rng = np.random.default_rng(0)
        for kind in synth.SHAPES:
            for size in (16, 64, 128):
                for blend in (False, True):
                    a = synth.object_alpha(rng, kind, size, float(rng.uniform(0, 360)), blend)
                    ys, xs = np.nonzero(a > 0)
                    assert max(np.ptp(ys), np.ptp(xs)) + 1 == size

    def test_invalid_spec(self):
        with pytest.raises(ConfigError):
            synth.SpliceSpec(blend="soft")
        with pytest.raises(ConfigError):
            synth.SpliceSpec(shapes=("star",))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    synth.generate_synthetic_dataset(2, 3, 4, synth.SpliceSpec(sizes=(16, 32)), root, 64)
    return root


class TestWorkflows:
    def test_train_detect_eval(self, tiny_cfg, dataset, tmp_path):
        ckpt = workflows.cmd_train(tiny_cfg, tmp_path / "run", dataset / "pristine")
        losses = (tmp_path / "run" / "train_loss.csv").read_text().splitlines()
        assert losses[0] == "step,loss" and len(losses) == 1 + tiny_cfg.train.steps
        written = workflows.cmd_detect(tiny_cfg, ckpt, [dataset / "pristine", dataset / "spliced"], tmp_path / "det")
        assert len(written) == 7
        meta = json.loads((tmp_path / "det" / "spliced_0000_detect.json").read_text())
        assert meta["policy"] == {"kind": "quantile", "value": 0.99} and meta["tiles"] == 4
        heat = np.load(tmp_path / "det" / "spliced_0000_heatmap.npy")
        assert heat.shape == (64, 64) and (heat >= 0).all()
        rep = workflows.cmd_eval(tiny_cfg, tmp_path / "det", dataset / "masks", tmp_path / "ev", "_mask_v2")
        assert len(rep.images) == 7
        assert (tmp_path / "ev" / "report.csv").read_text() == rep.to_csv()
        assert (tmp_path / "ev" / "report.txt").read_text() == rep.table()

    def test_eval_identical_dirs(self, tiny_cfg, dataset, tmp_path):
        rep = workflows.cmd_eval(tiny_cfg, dataset / "masks", dataset / "masks", tmp_path)
        assert rep.overall == {m: 1.0 for m in rep.overall} and len(rep.overall) == 4

    def test_eval_missing_prediction(self, tiny_cfg, dataset, tmp_path):
        (tmp_path / "pred").mkdir()
        with pytest.raises(DataError, match="no prediction"):
            workflows.cmd_eval(tiny_cfg, tmp_path / "pred", dataset / "masks", tmp_path)

    def test_training_needs_data(self, tiny_cfg):
        with pytest.raises(DataError):
            workflows.training_tiles(tiny_cfg)

    @pytest.mark.slow
    def test_pristine_density(self, trained_model):
        cfg = trained_model.cfg
        assert cfg.threshold.build().describe() == {"kind": "quantile", "value": 0.99}
        for s in range(3):
            img = synth.to_uint8(synth.terrain_texture(np.random.default_rng(900 + s), 256, 256))
            res = workflows.detect_image(img, trained_model.params, cfg)
            for m in (res.raw, res.v1, res.v2):
                assert m.mean() <= 0.02

    def test_post_process(self, tmp_path):
        m = np.zeros((40, 40), bool)
        m[2, 2] = True
        m[10:30, 10:30] = True
        im.save_image(m, tmp_path / "m.png")
        for variant in ("v1", "v2"):
            (out,) = workflows.cmd_post_process([tmp_path / "m.png"], tmp_path / variant, variant)
            res = im.load_mask(out)
            assert not res[2, 2] and res[10:30, 10:30].all()


class TestCLI:
    def test_usage_errors(self, tmp_path, capsys):
        assert main([]) == 1
        assert main(["train"]) == 1
        assert main(["frobnicate", "--out", str(tmp_path)]) == 1

    def test_config_error(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed = 1\nbogus.key = 2\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 1
        assert main(["train", "--out", str(tmp_path)]) == 1  # no seed anywhere
        assert main(["train", "--seed", "1", "--set", "nokey", "--out", str(tmp_path)]) == 1

    def test_data_errors(self, tmp_path, dataset):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(TINY_TEXT)
        assert main(["train", "--config", str(cfg), "--data", str(tmp_path / "none"), "--out", str(tmp_path)]) == 2
        assert main(["detect", "--config", str(cfg), "--checkpoint", str(tmp_path / "x.ckpt"), str(dataset / "spliced"), "--out", str(tmp_path)]) == 2
        small = tmp_path / "small.png"
        im.save_image(np.zeros((16, 16, 3), np.uint8), small)
        ck_path = tmp_path / "m.ckpt"
        tc = cf.parse_config(TINY_TEXT)
        ck.save_checkpoint(vr.init_params(tc.vit, 0), tc, ck_path)
        assert main(["detect", "--config", str(cfg), "--checkpoint", str(ck_path), str(small), "--out", str(tmp_path)]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_failure(self, tmp_path, dataset):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(TINY_TEXT + "train.lr = 1e308\n")
        code = main(["train", "--config", str(cfg), "--data", str(dataset / "pristine"), "--out", str(tmp_path), "--set", "train.steps=3"])
        assert code == 3

    def test_full_cli(self, tmp_path, capsys):
        data = tmp_path / "data"
        assert main(["gen-data", "--seed", "4", "--out", str(data), "--n-pristine", "2", "--n-spliced", "2", "--image-size", "64", "--sizes", "16,32"]) == 0
        cfg = tmp_path / "c.cfg"
        cfg.write_text(TINY_TEXT)
        base = ["--config", str(cfg), "--deterministic"]
        assert main(["train", *base, "--data", str(data / "pristine"), "--out", str(tmp_path / "run")]) == 0
        ckpt = tmp_path / "run" / "model.ckpt"
        assert main(["detect", *base, "--checkpoint", str(ckpt), str(data / "pristine"), str(data / "spliced"), "--out", str(tmp_path / "det")]) == 0
        assert main(["eval", *base, "--pred", str(tmp_path / "det"), "--gt", str(data / "masks"), "--pred-suffix", "_mask_v2", "--out", str(tmp_path / "ev")]) == 0
        table = (tmp_path / "ev" / "report.txt").read_text()
        assert table.startswith(" ") and "F1_other" in table
        assert table in capsys.readouterr().out
        assert main(["post-process", "--out", str(tmp_path / "pp"), str(tmp_path / "det" / "spliced_0000_mask_raw.png")]) == 0
        assert (tmp_path / "pp" / "spliced_0000_mask_raw.png").exists()


@pytest.mark.parametrize("size", [(80, 80), (100, 37), (129, 200)])
def test_texture_any_size(size):
    img = synth.terrain_texture(np.random.default_rng(0), *size)
    assert img.shape == (*size, 3) and 0 <= img.min() and img.max() <= 1

import numpy as np
import pytest
import torch

from otvm import io
from otvm.clipsim import make_trimap, simulate_clip
from otvm.config import SimConfig, config_from_dict, get_config, load_config
from otvm.model import CheckpointError, build_model, load_checkpoint, read_checkpoint, save_checkpoint
from otvm.synthetic import make_sources
from otvm.validation import check_sequence, check_trimap


def test_checkpoint_roundtrip(tiny_cfg, tmp_path):
    model = build_model(tiny_cfg, seed=3)
    model.completed_stages = ["1a"]
    model.trimap_prop.set_memory_inputs({"trimap", "alpha"})
    path = tmp_path / "c.npz"
    save_checkpoint(path, model, extra={"note": "x"})
    loaded, header = load_checkpoint(path, expected_preset="toy")
    for k, v in model.state_dict().items():
        assert torch.equal(v, loaded.state_dict()[k]), k
    assert header["note"] == "x" and loaded.completed_stages == ["1a"]
    assert loaded.trimap_prop.memory_inputs == {"trimap", "alpha"}
    assert loaded.cfg == tiny_cfg


def test_checkpoint_errors(tiny_cfg, tmp_path):
    path = tmp_path / "c.npz"
    save_checkpoint(path, build_model(tiny_cfg))
    with pytest.raises(CheckpointError, match="preset"):
        load_checkpoint(path, expected_preset="paper")
    (tmp_path / "junk.npz").write_bytes(b"not an archive")
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "junk.npz")


def test_config_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[preset]\nname = "toy"\n[model]\nkey_dim = 8\nprop_channels = [4, 4, 6, 8]\n[train]\nlr = 0.01\n[train.iterations]\n"4" = 7\n')
    cfg = load_config(p)
    assert cfg.model.key_dim == 8 and cfg.model.prop_channels == (4, 4, 6, 8)
    assert cfg.train.lr == 0.01 and cfg.train.iterations["4"] == 7 and cfg.train.iterations["1a"] == 2000
    assert config_from_dict({"preset": {"name": "paper"}}).model.backbone == "resnet50"
    with pytest.raises(ValueError):
        config_from_dict({"model": {"bogus": 1}})
    with pytest.raises(ValueError):
        get_config("huge")


def test_image_roundtrips(tmp_path, rng):
    img = rng.random((12, 10, 3))
    io.write_image(tmp_path / "i.png", img)
    assert np.abs(io.read_image(tmp_path / "i.png") - img).max() <= 0.5 / 255 + 1e-12
    a = rng.random((12, 10))
    io.write_alpha(tmp_path / "a.png", a, bits=16)
    assert np.abs(io.read_alpha(tmp_path / "a.png") - a).max() <= 0.5 / 65535 + 1e-12
    tri = make_trimap(np.clip(rng.uniform(-1, 2, (12, 10)), 0, 1), 3)
    io.write_trimap(tmp_path / "t.png", tri)
    np.testing.assert_array_equal(io.read_trimap(tmp_path / "t.png"), tri)
    with pytest.raises(io.DataError):
        io.read_image(tmp_path / "missing.png")


def test_clip_roundtrip(tmp_path):
    fg, alpha, bg = make_sources(1, 64, seed=2)[0]
    clip = simulate_clip(fg, alpha, bg, 2, 1, SimConfig(out_size=32, crop_sizes=(48,), augment=False))
    io.write_clip(tmp_path / "c", clip)
    back = io.read_clip(tmp_path / "c")
    assert back.T == 2
    np.testing.assert_array_equal(back.trimaps[1], clip.trimaps[1])
    assert np.abs(back.alphas[0] - clip.alphas[0]).max() <= 0.5 / 65535 + 1e-12
    with pytest.raises(io.DataError):
        io.read_clip_set(tmp_path / "c")


def test_video_triplets(tmp_path):
    seq = tmp_path / "seq0"
    for k in ("fg", "alpha", "bg"):
        (seq / k).mkdir(parents=True)
    for t, (fg, alpha, bg) in enumerate(make_sources(4, 32, seed=5)):
        io.write_image(seq / "fg" / f"{t}.png", fg)
        io.write_alpha(seq / "alpha" / f"{t}.png", alpha)
        io.write_image(seq / "bg" / f"{t}.png", bg)
    windows = io.load_video_triplets(tmp_path, T=3)
    assert [w["start"] for w in windows] == [0, 1]
    assert len(windows[0]["frames"]) == 3
    (seq / "bg" / "3.png").unlink()
    with pytest.raises(io.DataError):
        io.load_video_triplets(tmp_path)


def test_validation():
    tri = make_trimap(np.zeros((8, 8)), 1)
    frames, t = check_sequence([np.zeros((8, 8, 3))], tri)
    assert t.shape == (8, 8, 3)
    with pytest.raises(ValueError):
        check_trimap(tri * 2)
    with pytest.raises(ValueError):
        check_sequence([np.zeros((8, 8, 3)), np.zeros((8, 9, 3))])
    with pytest.raises(ValueError):
        check_sequence([np.full((8, 8, 3), 1.5)])

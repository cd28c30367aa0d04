import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from otvm.clipsim import make_trimap, simulate_clip
from otvm.config import ModelConfig, SimConfig, get_config
from otvm.estimator import OneTrimapVideoMatting, TrimapGenerator
from otvm.synthetic import make_sources

pytestmark = pytest.mark.filterwarnings("ignore:running stage")


def small_config():
    cfg = get_config("toy")
    cfg.model = ModelConfig(
        key_dim=4, value_dim=6, prop_channels=(4, 4, 6, 8), decoder_channels=8, alpha_channels=(4, 4, 6, 8, 8),
        alpha_decoder_channels=8, ppm_channels=4, refine_channels=8,
    )
    cfg.sim = SimConfig(out_size=32, crop_sizes=(48,), augment=False)
    return cfg


@pytest.fixture(scope="module")
def fitted():
    est = OneTrimapVideoMatting(
        config=small_config(), iterations={s: 2 for s in ("1a", "1b", "2", "3", "4")}, batch_size=1, n_video_clips=2
    )
    return est.fit(make_sources(2, 64, seed=1))


def sequence(n=3, size=32):
    fg, alpha, bg = make_sources(1, 64, seed=9)[0]
    clip = simulate_clip(fg, alpha, bg, n, 5, SimConfig(out_size=size, crop_sizes=(48,), augment=False))
    return clip


def test_params_roundtrip_and_clone():
    est = OneTrimapVideoMatting(batch_size=2, lr=3e-4, stages=("1a",))
    params = est.get_params()
    assert params["batch_size"] == 2 and params["lr"] == 3e-4 and params["preset"] == "toy"
    twin = clone(est)
    assert twin.get_params() == params and not hasattr(twin, "model_")
    assert est.set_params(seed=4).seed == 4


def test_fit_records_every_stage(fitted):
    assert list(fitted.stage_results_) == ["1a", "1b", "2", "3", "4"]
    assert fitted.model_.completed_stages == ["1a", "1b", "2", "3", "4"]
    assert len(fitted.video_clips_) == 2 and fitted.config_.train.batch_size == 1


def test_predict_and_score(fitted):
    clip = sequence()
    X = (clip.frames, clip.trimaps[0])
    alphas = fitted.predict(X)
    assert len(alphas) == 3 and alphas[0].shape == (32, 32)
    outs = fitted.predict_outputs(X)
    assert outs[1].propagated is not None
    s = fitted.score(X, clip.alphas)
    assert s <= 0 and s == -np.mean([np.mean((a - g) ** 2) for a, g in zip(alphas, clip.alphas)])
    with pytest.raises(ValueError):
        fitted.score(X, clip.alphas[:1])
    with pytest.raises(ValueError):
        fitted.predict(clip.frames)


def test_save_and_reload(fitted, tmp_path):
    path = tmp_path / "m.npz"
    fitted.save(path)
    est = OneTrimapVideoMatting.from_checkpoint(path)
    clip = sequence(2)
    X = (clip.frames, clip.trimaps[0])
    for a, b in zip(est.predict(X), fitted.predict(X)):
        np.testing.assert_array_equal(a, b)


def test_unfitted_and_bad_input():
    est = OneTrimapVideoMatting()
    with pytest.raises(NotFittedError):
        est.predict(([np.zeros((32, 32, 3))], np.zeros((32, 32, 3))))
    with pytest.raises(ValueError):
        OneTrimapVideoMatting(stages=("9",)).fit(make_sources(1, 32))
    with pytest.raises(ValueError):
        est.fit([])


def test_trimap_generator():
    a = np.zeros((20, 20))
    a[5:15, 5:15] = 1.0
    a[5, 5:15] = 0.5
    tg = TrimapGenerator(kernel=3).fit()
    out = tg.transform([a, a])
    assert out.shape == (2, 20, 20, 3)
    np.testing.assert_array_equal(out[0], make_trimap(a, 3))
    np.testing.assert_array_equal(TrimapGenerator(5).fit_transform([a])[0], make_trimap(a, 5))
    with pytest.raises(ValueError):
        TrimapGenerator(4).fit()
    with pytest.raises(NotFittedError):
        TrimapGenerator().transform([a])

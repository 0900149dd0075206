import numpy as np
import pytest

from irissr import dataset, iriscode, raster


@pytest.fixture(scope="session")
def corpus20():
    """The fixed 20-seed synthetic corpus (one canonical session per seed)."""
    return [dataset.synth_iris(seed, 231) for seed in range(20)]


@pytest.fixture(scope="session")
def corpus20_sessions():
    """20 subjects x 3 jittered sessions, keyed by (seed, session)."""
    return {(seed, j): dataset.synth_iris(seed, 231, jitter=j)
            for seed in range(20) for j in range(3)}


@pytest.fixture(scope="session")
def templates20_sessions(corpus20_sessions):
    return {key: iriscode.encode(iriscode.unwrap(img, ann))
            for key, (img, ann) in corpus20_sessions.items()}


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h, w):
    return rng.uniform(0.0, 1.0, size=(h, w))


@pytest.fixture(scope="session")
def smooth_texture():
    """Deterministic smooth random texture, good for SIFT and resampling tests."""
    from scipy.ndimage import gaussian_filter

    def make(seed, size=128, blur=1.5):
        t = gaussian_filter(np.random.default_rng(seed).uniform(size=(size, size)),
                            blur)
        t = (t - t.min()) / (t.max() - t.min())
        return t

    return make


def degrade_sigma(lr_size, hr_size=231):
    return raster.antialias_sigma(hr_size, hr_size, lr_size, lr_size)

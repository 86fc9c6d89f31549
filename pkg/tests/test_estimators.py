import numpy as np
import pytest
from sklearn.base import clone

from seqpas.constellation import build_qam
from seqpas.estimators import AdmMatcher, EssMatcher, SequentialShaper
from seqpas.metrics import GaussianDemapper
from seqpas.source_models import TableModel, uniform_model


def test_estimators_clone_with_params():
    for est in (AdmMatcher(uniform_model(16)), EssMatcher(blocklength=16), SequentialShaper(steps=3), GaussianDemapper(build_qam(16))):
        twin = clone(est)
        assert type(twin) is type(est)
        assert twin.get_params().keys() == est.get_params().keys()


def test_shaper_params_map_to_train_config():
    shaper = SequentialShaper(objective="L", memory=0, steps=7, surrogate="kernel", derotate=False)
    cfg = shaper.train_config()
    assert (cfg.objective, cfg.memory, cfg.steps, cfg.surrogate, cfg.derotate) == ("L", 0, 7, "kernel", False)


def test_shaper_fit_and_sample():
    shaper = SequentialShaper(steps=3, sequence_length=32, batch_size=4, surrogate="kernel").fit()
    assert isinstance(shaper.model_, TableModel)
    assert len(shaper.trace_) == 3
    seq = shaper.sample(100, seed=1)
    assert seq.shape == (100,) and seq.min() >= 0 and seq.max() < 16
    assert np.array_equal(seq, shaper.sample(100, seed=1))


def test_unfitted_estimators_raise():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        SequentialShaper().sample(10)
    with pytest.raises(NotFittedError):
        GaussianDemapper(build_qam(16)).transform(np.zeros(4, dtype=complex))

"""scikit-learn style wrappers around the matchers and the trainer."""

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_bits
from .matchers.adm import AdmCoder, adm_decode, adm_encode
from .matchers.ess import ess_build, ess_decode, ess_encode, ess_find_emax
from .source_models import sample_sequence
from .training import TrainConfig, train


class AdmMatcher(TransformerMixin, BaseEstimator):
    """Arithmetic distribution matcher for a fixed source model.

    ``transform`` maps each ``payload_length`` chunk of the input bits to
    one symbol run; runs are consecutive, so the model state carries over from
    one run to the next. ``inverse_transform`` takes the list of runs back.
    """

    def __init__(self, model=None, payload_length=2048, precision=63, prob_bits=32):
        self.model = model
        self.payload_length = payload_length
        self.precision = precision
        self.prob_bits = prob_bits

    def fit(self, X=None, y=None):
        self.coder_ = AdmCoder(self.model, precision=self.precision, prob_bits=self.prob_bits)
        return self

    def transform(self, X):
        check_is_fitted(self, "coder_")
        rows = check_bits(np.asarray(X).ravel()).reshape(-1, self.payload_length)
        state, runs = None, []
        for row in rows:
            symbols, state = adm_encode(self.coder_, row, state=state, return_state=True)
            runs.append(symbols)
        return runs

    def inverse_transform(self, runs):
        check_is_fitted(self, "coder_")
        model = self.coder_.model
        state, out = model.initial_state(), []
        for symbols in runs:
            out.append(adm_decode(self.coder_, symbols, self.payload_length, state=state))
            for s in symbols:
                state = model.advance(state, int(s))
        return np.stack(out)


class EssMatcher(TransformerMixin, BaseEstimator):
    """Enumerative sphere shaping over one real dimension.

    With ``e_max=None`` the energy bound is chosen by :func:`ess_find_emax` for
    ``target_rate`` bits per amplitude.
    """

    def __init__(self, blocklength=32, amp_levels=(1, 3, 5, 7), target_rate=1.93, e_max=None):
        self.blocklength = blocklength
        self.amp_levels = amp_levels
        self.target_rate = target_rate
        self.e_max = e_max

    def fit(self, X=None, y=None):
        e_max = self.e_max
        if e_max is None:
            e_max = ess_find_emax(self.blocklength, self.amp_levels, self.target_rate)
        self.coder_ = ess_build(self.blocklength, self.amp_levels, e_max)
        self.e_max_ = e_max
        self.rate_ = self.coder_.rate
        return self

    def transform(self, X):
        """``(n_blocks, k)`` index bits to ``(n_blocks, N)`` amplitude levels."""
        check_is_fitted(self, "coder_")
        rows = np.atleast_2d(np.asarray(X))
        return np.stack([ess_encode(self.coder_, row) for row in rows])

    def inverse_transform(self, X):
        check_is_fitted(self, "coder_")
        rows = np.atleast_2d(np.asarray(X))
        return np.stack([ess_decode(self.coder_, row) for row in rows])


class SequentialShaper(BaseEstimator):
    """Trainable order-``memory`` table source model.

    Constructor parameters mirror :class:`seqpas.training.TrainConfig`;
    ``fit`` trains and exposes ``model_`` and ``trace_``.
    """

    def __init__(
        self,
        objective="Lpp",
        kl_weight=1.0,
        memory=1,
        steps=300,
        batch_size=16,
        sequence_length=512,
        learning_rate=0.05,
        momentum=0.9,
        launch_power_dbm=9.0,
        kernel_memory=8,
        gamma_scale=1.0,
        surrogate="regular",
        derotate=True,
        seed=0,
        fiber=None,
    ):
        self.objective = objective
        self.kl_weight = kl_weight
        self.memory = memory
        self.steps = steps
        self.batch_size = batch_size
        self.sequence_length = sequence_length
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.launch_power_dbm = launch_power_dbm
        self.kernel_memory = kernel_memory
        self.gamma_scale = gamma_scale
        self.surrogate = surrogate
        self.derotate = derotate
        self.seed = seed
        self.fiber = fiber

    def train_config(self):
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def fit(self, X=None, y=None, init_model=None):
        self.model_, self.trace_ = train(self.train_config(), model=init_model, fiber=self.fiber)
        return self

    def sample(self, length, seed=None):
        check_is_fitted(self, "model_")
        return sample_sequence(self.model_, length, seed=seed)

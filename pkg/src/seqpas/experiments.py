"""Experiment drivers behind the command-line subcommands.

Each driver takes an :class:`~seqpas.config.ExperimentConfig` and a root seed
and returns plain rows; writing is left to the caller so that output bytes
depend only on the rows.
"""

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._info import entropy_bits
from .channel.fiber import FiberConfig
from .channel.perturbation import kernel_from_fiber
from .channel.pulse import matched_filter, rrc_shape
from .channel.ssfm import cd_compensate, ssfm_propagate
from .config import derive_seed, dumps_config
from .constellation import build_qam, mb_fit_entropy
from .exceptions import ConfigurationError
from .matchers.adm import AdmCoder, adm_decode, adm_encode, measure_rate_loss_adm
from .matchers.ess import ess_build, ess_encode, ess_find_emax
from .metrics import AIR_CSV_COLUMNS, estimate_air, gaussian_demap, report_row
from .selection import METRIC_ID, levels_to_amplitude_index, select_sequence
from .source_models import (
    iid_model,
    load_model,
    marginal_entropy,
    rate_loss_theoretical,
    uniform_model,
)
from .training import train

log = logging.getLogger(__name__)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return v


def resolve_model(cfg, name):
    """``uniform``, ``mb-iid`` or a model file path (relative to the config)."""
    c = build_qam(cfg.constellation_order)
    if name == "uniform":
        return uniform_model(c.n_amplitudes)
    if name == "mb-iid":
        return iid_model(mb_fit_entropy(c, cfg.mb_entropy_bits_per_1d).pair_probs())
    path = cfg.resolve(name)
    if not os.path.isfile(path):
        raise ConfigurationError(f"model file not found: {path}")
    return load_model(path)


# ----------------------------------------------------------------------------
# rate loss, round trips, ESS


RATELOSS_HEADER = ("n", "L_bar", "R_loss_adm", "R_loss_theory")


def run_rateloss(cfg, seed):
    model = resolve_model(cfg, cfg.rateloss.model)
    coder = AdmCoder(model)
    theory = rate_loss_theoretical(model)
    rows = []
    for n in cfg.rateloss.payload_bits:
        r_adm, l_bar = measure_rate_loss_adm(coder, n, cfg.rateloss.trials, seed=derive_seed(seed, "rateloss", n))
        rows.append((int(n), l_bar, r_adm, theory))
    return rows


ROUNDTRIP_HEADER = ("n", "trials", "failures", "mean_output_length")


def run_adm_roundtrip(cfg, seed):
    coder = AdmCoder(resolve_model(cfg, cfg.roundtrip.model))
    rows = []
    for n in cfg.roundtrip.payload_bits:
        rng = np.random.default_rng(derive_seed(seed, "roundtrip", n))
        failures, total = 0, 0
        for _ in range(cfg.roundtrip.trials):
            payload = rng.integers(0, 2, n, dtype=np.uint8)
            symbols = adm_encode(coder, payload)
            total += symbols.size
            try:
                ok = np.array_equal(adm_decode(coder, symbols, n), payload)
            except Exception:
                ok = False
            failures += not ok
        rows.append((int(n), cfg.roundtrip.trials, failures, total / cfg.roundtrip.trials))
    return rows


ESS_HEADER = ("blocklength", "e_max", "k", "rate_bits_per_1d", "rate_loss_bits_per_1d", "level", "probability")


def ess_coder_for(cfg):
    e = cfg.ess
    e_max = ess_find_emax(e.blocklength, e.amp_levels, e.target_rate_bits_per_1d)
    return ess_build(e.blocklength, e.amp_levels, e_max)


def run_ess_info(cfg, seed=None):
    coder = ess_coder_for(cfg)
    marginal = coder.level_marginal()
    return [
        (coder.blocklength, coder.e_max, coder.k, coder.rate, coder.rate_loss(), level, float(p))
        for level, p in zip(coder.amp_levels, marginal)
    ]


# ----------------------------------------------------------------------------
# training


def run_train(cfg, seed=None, objective=None, fiber=None):
    changes = {}
    if seed is not None:
        changes["seed"] = int(seed) % 2**32
    if objective is not None:
        changes["objective"] = objective
    tcfg = cfg.train.replace(**changes)
    return train(tcfg, fiber=cfg.fiber if fiber is None else fiber)


# ----------------------------------------------------------------------------
# AIR sweep


@dataclass
class SchemeSource:
    """Amplitude-index generator of one scheme with its entropy and rate-loss bookkeeping."""

    name: str
    amp_marginal: np.ndarray
    entropy_bits_per_2d: float
    rate_loss: float
    rate_loss_source: str
    generate: object
    extra: dict


def _uniform_source(c):
    a = c.n_amplitudes

    def generate(n, rng):
        return rng.integers(0, a, n)

    return SchemeSource("uniform", np.full(a, 1.0 / a), float(c.bits_per_symbol), 0.0, "none", generate, {})


def _ess_source(cfg, c, coder, kernel=None):
    levels = coder.level_marginal()
    amp_marginal = np.outer(levels, levels).ravel()
    h_b = 2.0 + 2.0 * entropy_bits(levels)
    r_loss = 2.0 * coder.rate_loss()
    per_block = coder.blocklength // 2
    lpd = c.levels_per_dim

    if kernel is None:

        def generate(n, rng):
            blocks = math.ceil(n / per_block)
            bits = rng.integers(0, 2, (blocks, coder.k), dtype=np.uint8)
            lv = np.concatenate([ess_encode(coder, b) for b in bits])
            return levels_to_amplitude_index(lv, lpd)[:n]

        return SchemeSource("ess", amp_marginal, h_b, r_loss, "exact", generate, {})

    sel = cfg.selection
    n_sub = 2 * sel.blocklength // coder.blocklength

    def generate(n, rng):
        blocks = math.ceil(n / sel.blocklength)
        out = []
        for _ in range(blocks):
            bits = rng.integers(0, 2, n_sub * coder.k, dtype=np.uint8)
            out.append(select_sequence(bits, sel, coder, kernel, c).amplitudes)
        return np.concatenate(out)[:n]

    extra = {"candidates": sel.candidates, "selection_blocklength": sel.blocklength}
    return SchemeSource(
        "ess+sel", amp_marginal, h_b, r_loss + sel.side_information_bits, f"exact+side-info/{METRIC_ID}", generate, extra
    )


def _adm_source(cfg, name, model, seed):
    sweep = cfg.airsweep
    coder = AdmCoder(model)
    h_b = 2.0 + marginal_entropy(model)
    if sweep.rate_loss_source == "empirical":
        r_loss, _ = measure_rate_loss_adm(
            coder, sweep.adm_payload_bits, sweep.adm_rate_loss_trials, seed=derive_seed(seed, "adm-rate-loss", name)
        )
    else:
        r_loss = rate_loss_theoretical(model)

    def generate(n, rng):
        out, total, state = [], 0, None
        while total < n:
            payload = rng.integers(0, 2, sweep.adm_payload_bits, dtype=np.uint8)
            symbols, state = adm_encode(coder, payload, state=state, return_state=True)
            out.append(symbols)
            total += symbols.size
        return np.concatenate(out)[:n]

    return SchemeSource(name, model.stationary.marginal, h_b, r_loss, sweep.rate_loss_source, generate, {})


def sweep_models(cfg, seed):
    """Models of the learned schemes: loaded from file, or trained under ``[train]``."""
    models = {}
    wanted = {"seq-npas": ("L", cfg.airsweep.model_seq_npas), "seq-npas++": ("Lpp", cfg.airsweep.model_seq_npas_pp)}
    for scheme in cfg.airsweep.schemes:
        if scheme not in wanted:
            continue
        objective, path = wanted[scheme]
        if path:
            models[scheme] = resolve_model(cfg, path)
        else:
            model, _ = run_train(cfg, seed=derive_seed(seed, "train", scheme), objective=objective)
            models[scheme] = model
    return models


def build_source(cfg, scheme, models, seed):
    c = build_qam(cfg.constellation_order)
    if scheme == "uniform":
        return _uniform_source(c)
    if scheme in ("ess", "ess+sel"):
        coder = ess_coder_for(cfg)
        kernel = kernel_from_fiber(cfg.fiber, cfg.selection.kernel_memory) if scheme == "ess+sel" else None
        return _ess_source(cfg, c, coder, kernel)
    return _adm_source(cfg, scheme, models[scheme], seed)


def transmit_frame(c, amp_idx, quadrant, amp_marginal, fiber, power_dbm, channel_seed):
    """Full link for one frame; returns the LLR frame of the received symbols."""
    prior = c.symbol_prior(amp_marginal)
    index = c.recompose(quadrant, amp_idx)
    x = c.points[index] * c.energy_scale(prior)
    frame = rrc_shape(x, fiber, power_dbm)
    rx = ssfm_propagate(frame, fiber, seed=channel_seed)
    y = matched_filter(cd_compensate(rx, fiber), fiber)
    # data-aided common phase and gain; stands in for pilot-aided phase recovery
    y = y * (np.vdot(x, x) / np.vdot(x, y))
    # data-aided variance of the auxiliary Gaussian channel
    noise_var = float(np.mean(np.abs(y - x) ** 2))
    return gaussian_demap(y, c, prior, noise_var, index)


def simulate_point(cfg, scheme, power_index, source, seed):
    """Net AIR of one scheme at one launch power over ``frames`` frames."""
    sweep = cfg.airsweep
    c = build_qam(cfg.constellation_order)
    power = sweep.launch_powers_dbm[power_index]
    frames = []
    for f in range(sweep.frames):
        payload_rng = np.random.default_rng(derive_seed(seed, "payload", scheme, power_index, f))
        channel_rng = np.random.default_rng(derive_seed(seed, "signs", power_index, f))
        amp_idx = source.generate(sweep.symbols_per_frame, payload_rng)
        quadrant = channel_rng.integers(0, 4, sweep.symbols_per_frame)
        channel_seed = derive_seed(seed, "channel", power_index, f)
        frames.append(transmit_frame(c, amp_idx, quadrant, source.amp_marginal, cfg.fiber, power, channel_seed))
    report = estimate_air(
        frames,
        entropy_bits_per_2d=source.entropy_bits_per_2d,
        rate_loss=source.rate_loss,
        rate_loss_source=source.rate_loss_source,
        n_bootstrap=sweep.n_bootstrap,
        seed=derive_seed(seed, "bootstrap", scheme, power_index),
        min_symbols=0,
    )
    return report_row(scheme, power, report, seed, **source.extra)


_SOURCE_CACHE = {}


def _cached_source(cfg, scheme, models, seed):
    key = (scheme, seed, dumps_config(cfg))
    if key not in _SOURCE_CACHE:
        _SOURCE_CACHE[key] = build_source(cfg, scheme, models, seed)
    return _SOURCE_CACHE[key]


def _task(args):
    cfg, scheme, power_index, models, seed = args
    try:
        source = _cached_source(cfg, scheme, models, seed)
        return scheme, power_index, simulate_point(cfg, scheme, power_index, source, seed), None
    except Exception as exc:
        log.exception("scheme %s failed", scheme)
        return scheme, power_index, None, f"{type(exc).__name__}: {exc}"


def run_airsweep(cfg, seed, jobs=1):
    """Rows in (scheme, power) order plus a list of ``(scheme, message)`` failures.

    A failing scheme does not stop the others.
    """
    sweep = cfg.airsweep
    errors = []
    try:
        models = sweep_models(cfg, seed)
    except ConfigurationError as exc:
        models = {}
        errors.append(("models", f"ConfigurationError: {exc}"))
    schemes = [s for s in sweep.schemes if s in models or s not in ("seq-npas", "seq-npas++")]
    tasks = [(cfg, scheme, p, models, seed) for scheme in schemes for p in range(len(sweep.launch_powers_dbm))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    rows = []
    for scheme, _, row, err in results:
        if err is None:
            rows.append(row)
        elif (scheme, err) not in errors:
            errors.append((scheme, err))
    return rows, errors


def air_rows_for_csv(rows):
    return AIR_CSV_COLUMNS, [[row.get(k, "") for k in AIR_CSV_COLUMNS] for row in rows]


def link_summary(fiber=None):
    fiber = FiberConfig() if fiber is None else fiber
    return {
        "effective_length_km": fiber.effective_length_m / 1e3,
        "span_gain_db": 10 * np.log10(fiber.span_gain),
        "ase_snr_db_at_0dbm": 10 * np.log10(fiber.ase_snr(0.0)),
    }

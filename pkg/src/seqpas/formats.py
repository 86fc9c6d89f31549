"""On-disk formats for matched symbol frames and channel waveforms."""

import struct
from dataclasses import dataclass

import numpy as np

from .channel.fiber import ComplexFrame
from .exceptions import ConfigurationError

FRAME_MAGIC = "SEQPAS-FRAME v1"
WAVEFORM_MAGIC = b"SQPW"
WAVEFORM_VERSION = 1
_WAVEFORM_HEADER = struct.Struct("<4sHHddQ")


@dataclass
class SymbolFrame:
    """Matched symbol indices with the model id, payload length and seed that produced them."""

    model_id: str
    n: int
    seed: int
    symbols: np.ndarray


def write_symbol_frame(path, frame):
    symbols = np.asarray(frame.symbols, dtype=np.int64)
    with open(path, "w") as fh:
        fh.write(f"{FRAME_MAGIC}\n")
        fh.write(f"model_id {frame.model_id}\n")
        fh.write(f"n {int(frame.n)}\n")
        fh.write(f"seed {int(frame.seed)}\n")
        fh.write(f"length {symbols.size}\n")
        for start in range(0, symbols.size, 32):
            fh.write(" ".join(map(str, symbols[start : start + 32].tolist())) + "\n")


def read_symbol_frame(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != FRAME_MAGIC:
        raise ConfigurationError(f"{path}: not a symbol frame file")
    header = {}
    for line in lines[1:5]:
        key, _, value = line.partition(" ")
        header[key] = value
    try:
        length = int(header["length"])
        symbols = np.array(" ".join(lines[5:]).split(), dtype=np.int64)
        frame = SymbolFrame(header["model_id"], int(header["n"]), int(header["seed"]), symbols)
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"{path}: malformed header") from exc
    if symbols.size != length:
        raise ConfigurationError(f"{path}: expected {length} symbols, found {symbols.size}")
    return frame


def write_waveform(path, frame):
    """Binary export: 32-byte header, then interleaved little-endian float64 re/im."""
    samples = np.asarray(frame.samples, dtype=np.complex128)
    header = _WAVEFORM_HEADER.pack(
        WAVEFORM_MAGIC, WAVEFORM_VERSION, 0, frame.sample_rate_ghz, frame.launch_power_dbm, samples.size
    )
    inter = np.empty(2 * samples.size, dtype="<f8")
    inter[0::2] = samples.real
    inter[1::2] = samples.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(inter.tobytes())


def read_waveform(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _WAVEFORM_HEADER.size:
        raise ConfigurationError(f"{path}: truncated waveform header")
    magic, version, _, rate, power, n = _WAVEFORM_HEADER.unpack_from(raw)
    if magic != WAVEFORM_MAGIC or version != WAVEFORM_VERSION:
        raise ConfigurationError(f"{path}: not a version {WAVEFORM_VERSION} waveform file")
    data = np.frombuffer(raw, dtype="<f8", offset=_WAVEFORM_HEADER.size)
    if data.size != 2 * n:
        raise ConfigurationError(f"{path}: expected {n} samples, found {data.size // 2}")
    return ComplexFrame(data[0::2] + 1j * data[1::2], rate, power)

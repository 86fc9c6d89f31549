"""Link configuration and waveform container."""

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.constants import c as C_LIGHT
from scipy.constants import h as PLANCK

from ..exceptions import ConfigurationError


def dbm_to_watt(p_dbm):
    return 1e-3 * 10.0 ** (np.asarray(p_dbm, dtype=np.float64) / 10.0)


def watt_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=np.float64) / 1e-3)


@dataclass(frozen=True)
class FiberConfig:
    """Single-span, single-polarisation link.

    Defaults follow the evaluated link: 205 km of SSMF, 0.2 dB/km,
    17 ps/nm/km, 1.3 /W/km, a 5 dB NF amplifier, 50 GBd RRC with roll-off 0.1.
    """

    span_length_km: float = 205.0
    attenuation_db_per_km: float = 0.2
    dispersion_ps_per_nm_km: float = 17.0
    gamma_per_w_km: float = 1.3
    noise_figure_db: float = 5.0
    center_wavelength_nm: float = 1550.0
    symbol_rate_gbd: float = 50.0
    rrc_rolloff: float = 0.1
    oversampling: int = 4
    step_count: int = 0
    max_nonlinear_phase_rad: float = 3e-3
    min_step_count: int = 100

    def __post_init__(self):
        for name in ("span_length_km", "symbol_rate_gbd", "center_wavelength_nm", "max_nonlinear_phase_rad"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("attenuation_db_per_km", "dispersion_ps_per_nm_km", "gamma_per_w_km", "noise_figure_db"):
            if not getattr(self, name) >= 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if not 0 <= self.rrc_rolloff <= 1:
            raise ConfigurationError("rrc_rolloff must lie in [0, 1]")
        if int(self.oversampling) != self.oversampling or self.oversampling < 2 * (1 + self.rrc_rolloff):
            raise ConfigurationError(
                f"oversampling must be an integer >= 2 (1 + rolloff) = {2 * (1 + self.rrc_rolloff)}"
            )
        if self.min_step_count < 1:
            raise ConfigurationError("min_step_count must be >= 1")
        if self.step_count < 0:
            raise ConfigurationError("step_count must be >= 0 (0 selects the automatic rule)")

    # SI-unit views
    @property
    def length_m(self):
        return self.span_length_km * 1e3

    @property
    def alpha(self):
        """Power attenuation coefficient in 1/m."""
        return self.attenuation_db_per_km / (10.0 * np.log10(np.e)) / 1e3

    @property
    def beta2(self):
        """Group-velocity dispersion in s^2/m."""
        lam = self.center_wavelength_nm * 1e-9
        d = self.dispersion_ps_per_nm_km * 1e-6  # s/m^2
        return -d * lam**2 / (2 * np.pi * C_LIGHT)

    @property
    def gamma(self):
        """Nonlinear coefficient in 1/(W m)."""
        return self.gamma_per_w_km * 1e-3

    @property
    def symbol_rate(self):
        return self.symbol_rate_gbd * 1e9

    @property
    def symbol_period(self):
        return 1.0 / self.symbol_rate

    @property
    def sample_rate(self):
        return self.symbol_rate * self.oversampling

    @property
    def effective_length_m(self):
        if self.alpha == 0:
            return self.length_m
        return (1.0 - np.exp(-self.alpha * self.length_m)) / self.alpha

    @property
    def span_gain(self):
        """Amplifier gain that exactly compensates the span loss (linear)."""
        return 10.0 ** (self.attenuation_db_per_km * self.span_length_km / 10.0)

    @property
    def ase_psd(self):
        """Single-polarisation ASE power spectral density in W/Hz at the amplifier output."""
        nf = 10.0 ** (self.noise_figure_db / 10.0)
        nu = C_LIGHT / (self.center_wavelength_nm * 1e-9)
        return max(nf * self.span_gain - 1.0, 0.0) * PLANCK * nu / 2.0

    def ase_snr(self, launch_power_dbm):
        """Linear SNR in the matched-filter bandwidth from ASE alone."""
        return dbm_to_watt(launch_power_dbm) / (self.ase_psd * self.symbol_rate)

    def normalized_noise_variance(self, launch_power_dbm):
        """ASE noise variance on unit-energy symbols at the given launch power."""
        return 1.0 / self.ase_snr(launch_power_dbm)

    def replace(self, **changes):
        values = asdict(self)
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigurationError(f"unknown fiber parameters: {sorted(unknown)}")
        values.update(changes)
        return FiberConfig(**values)


@dataclass
class ComplexFrame:
    """Complex baseband samples in sqrt(W) with their sample rate and nominal launch power."""

    samples: np.ndarray
    sample_rate_ghz: float
    launch_power_dbm: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 1:
            raise ValueError("samples must be 1-D")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("frame contains non-finite samples")

    @property
    def mean_power_dbm(self):
        return float(watt_to_dbm(np.mean(np.abs(self.samples) ** 2)))

    def __len__(self):
        return self.samples.size

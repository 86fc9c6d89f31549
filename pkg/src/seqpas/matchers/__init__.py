from .adm import AdmCoder, adm_decode, adm_encode, adm_output_lengths, measure_rate_loss_adm
from .ess import EssCoder, ess_build, ess_decode, ess_encode

__all__ = [
    "AdmCoder",
    "EssCoder",
    "adm_decode",
    "adm_encode",
    "adm_output_lengths",
    "ess_build",
    "ess_decode",
    "ess_encode",
    "measure_rate_loss_adm",
]

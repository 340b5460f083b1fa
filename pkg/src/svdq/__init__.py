"""Mixed-precision key-cache quantization in an SVD latent basis."""
from . import _backend
from .errmodel import (
    DecayModel,
    ErrorEstimate,
    advise_schedule,
    direct_quant_mse,
    fit_decay,
    latent_range_sq,
    lemma41_mse,
    measure_mse,
    predicted_schedule_mse,
    svdq_error_ratio,
)
from .errors import ConfigError, DataError, FormatError, NumericError, SvdqError
from .keycore import CenteredSVD, center, factorize, project, reconstruct, svd
from .pipeline import CompressedKeyCache, compress, compression_ratio, decompress, parse_schedule
from .quant import (
    BitSchedule,
    QuantizedChannels,
    QuantizedValueCache,
    dequantize_channel,
    dequantize_latent,
    dequantize_values,
    equivalent_bits,
    pack_codes,
    quantize_channel,
    quantize_latent,
    quantize_values_per_token,
    unpack_codes,
)
from .sparsity import SparsityIndex, build_index, gather, score_chunks, select_chunks

__version__ = "0.1.0"


def kernel_backend() -> str:
    """Name of the active kernel backend, ``"compiled"`` or ``"python"``."""
    return _backend.name

"""Analytic quantization-error model for direct and latent-space quantization.

Conventions: singular values passed in are the raw values of the centered key
matrix. Per-sample quantities (variances, mean squared errors) divide energies
by the token count ``s``. Channel indices in the decay model are 1-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DataError
from .quant import BitSchedule

ADVISOR_WIDTHS = (8, 4, 3, 2, 1, 0)

# geometric correction factor at or below which 2**(b - b1) is a good
# approximation of the rms ratio; holds once alpha > ln(11)
REGIME_TOLERANCE = 1.1


@dataclass(frozen=True)
class DecayModel:
    c: float
    rho: float
    residual: float = 0.0  # rms of the log-fit residuals
    n_used: int = 0

    def singulars(self, d: int) -> np.ndarray:
        j = np.arange(1, d + 1)
        return self.c * np.exp(-self.rho * j)


@dataclass(frozen=True)
class ErrorEstimate:
    direct_mse: float
    svdq_mse: float
    alpha: float
    mse_ratio: float
    rms_ratio: float
    regime: bool
    top_bits: float  # b1 of the arithmetic schedule


def lemma41_mse(r: float, b: float) -> float:
    """Expected squared error of b-bit quantization of uniform data with range r."""
    if r < 0:
        raise DataError(f"range must be non-negative, got {r}")
    return r * r / (12.0 * 4.0 ** b)


def direct_quant_mse(frob_sq: float, s: int, d: int, b: float) -> float:
    """Per-element MSE of direct per-channel b-bit quantization, equal channel variances."""
    return frob_sq / (4.0 ** b * d * s)


def fit_decay(singulars, floor: float = 1e-12) -> DecayModel:
    """Least-squares fit of ``log(lambda_j) = log(c) - rho * j``.

    Values at or below ``floor * lambda_1`` are excluded.
    """
    lam = np.asarray(singulars, dtype=np.float64).ravel()
    if lam.size == 0 or not np.all(np.isfinite(lam)):
        raise DataError("singular values must be finite and non-empty")
    top = lam.max()
    j = np.arange(1, lam.size + 1, dtype=np.float64)
    keep = lam > floor * top
    if top <= 0 or keep.sum() < 2:
        raise DataError("need at least 2 singular values above the floor to fit a decay")
    x, y = j[keep], np.log(lam[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (intercept + slope * x)
    return DecayModel(
        c=float(np.exp(intercept)),
        rho=float(-slope),
        residual=float(np.sqrt(np.mean(resid**2))),
        n_used=int(keep.sum()),
    )


def latent_range_sq(j, model: DecayModel, frob_sq: float, s: int):
    """Squared value range of latent channel ``j`` under the decay model, uniform data.

    Uses ``c**2 ~ (exp(2 rho) - 1) * frob_sq / s``; accepts scalar or array ``j``.
    """
    rho = model.rho
    return 12.0 * math.expm1(2 * rho) * np.exp(-2 * rho * np.asarray(j, dtype=np.float64)) * frob_sq / s


def predicted_schedule_mse(range_sq, schedule: BitSchedule) -> float:
    """Per-element MSE of a schedule given each latent channel's squared range.

    Width 0 gives ``r**2 / 12``, the variance of a uniform channel, which is
    exactly the error of replacing it by its mean.
    """
    r2 = np.asarray(range_sq, dtype=np.float64)
    bits = schedule.channel_bits()
    if r2.shape != bits.shape:
        raise DataError(f"need {bits.size} channel ranges, got {r2.shape}")
    return float(np.mean(r2 / (12.0 * 4.0 ** bits)))


def svdq_error_ratio(b: float, rho: float, d: int, frob_sq: float | None = None, s: int = 1) -> ErrorEstimate:
    """Closed-form SVDq / direct error ratio for the arithmetic schedule ``b_i = (8 - i) * 2b / 7``.

    With ``alpha = d * rho / 4 - (2b/7) ln 4`` the MSE ratio is
    ``4**(b - b1) * (1 - exp(-8 alpha)) / (1 - exp(-alpha))`` where ``b1 = 2b``.
    ``frob_sq`` defaults to unit per-element energy.
    """
    if not b > 0 or not d > 0:
        raise DataError(f"need b > 0 and d > 0, got b={b}, d={d}")
    top = 2.0 * b
    alpha = d * rho / 4.0 - (2.0 * b / 7.0) * math.log(4.0)
    geom = 8.0 if alpha == 0 else math.expm1(-8 * alpha) / math.expm1(-alpha)
    mse_ratio = 4.0 ** (b - top) * geom
    if frob_sq is None:
        frob_sq = float(d * s)
    direct = direct_quant_mse(frob_sq, s, d, b)
    return ErrorEstimate(
        direct_mse=direct,
        svdq_mse=direct * mse_ratio,
        alpha=alpha,
        mse_ratio=mse_ratio,
        rms_ratio=math.sqrt(mse_ratio),
        regime=bool(alpha > 0 and geom <= REGIME_TOLERANCE),
        top_bits=top,
    )


def measure_mse(original, reconstructed):
    """Return ``(mse, rel_frob)`` of a reconstruction."""
    a = np.asarray(original, dtype=np.float64)
    b = np.asarray(reconstructed, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch {a.shape} vs {b.shape}")
    err = np.sum((a - b) ** 2)
    norm = np.sum(a * a)
    rel = math.sqrt(err / norm) if norm > 0 else (0.0 if err == 0 else math.inf)
    return float(err / a.size), rel


def advise_schedule(singulars, target_bits: float, groups: int = 8, s: int = 1) -> BitSchedule:
    """Monotone schedule with mean width ``target_bits`` minimizing predicted MSE.

    Each latent channel's squared range is taken as ``12 * lambda_j**2 / s``
    (uniform-channel assumption). The search is an exact dynamic program over
    widths in ``ADVISOR_WIDTHS``; among equal-cost schedules the one giving
    more bits to earlier groups wins.
    """
    lam = np.asarray(singulars, dtype=np.float64).ravel()
    d = lam.size
    if d == 0 or d % groups:
        raise ConfigError(f"{d} channels not divisible into {groups} groups")
    total = target_bits * groups
    if not (0 <= target_bits <= max(ADVISOR_WIDTHS)) or abs(total - round(total)) > 1e-9:
        raise ConfigError(f"target {target_bits} bits not achievable over {groups} groups")
    total = int(round(total))
    energy = (lam**2 / s).reshape(groups, -1).sum(axis=1)
    scale = energy.max() if energy.max() > 0 else 1.0
    energy = energy / scale

    @lru_cache(maxsize=None)
    def best(g, remaining, cap):
        if g == groups:
            return (0.0, ()) if remaining == 0 else (math.inf, ())
        choice = (math.inf, ())
        for w in ADVISOR_WIDTHS:  # descending, so ties keep the wider early group
            if w > cap or w > remaining or remaining - w > w * (groups - g - 1):
                continue
            rest_cost, rest = best(g + 1, remaining - w, w)
            cost = energy[g] * 4.0 ** -w + rest_cost
            if cost < choice[0] * (1 - 1e-12):
                choice = (cost, (w,) + rest)
        return choice

    cost, bits = best(0, total, max(ADVISOR_WIDTHS))
    if not math.isfinite(cost):
        raise ConfigError(f"no monotone schedule reaches {target_bits} bits")
    return BitSchedule(bits, d)

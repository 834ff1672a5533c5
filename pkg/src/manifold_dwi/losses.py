"""Adversarial, cycle-consistency and prior losses for manifold-valued synthesis.

All reductions are means over voxels and channels. Diffusion terms take
tangent-domain values (matrix logs or sphere logs); anisotropy weights
come from the target and are treated as constants.

Functions named ``*_grad`` return ``(value, gradients)`` for the toy
trainer; the plain versions return the value only.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from ._validation import check_finite, check_same_shape, sym6_to_mat
from .odf import exp_u, gfa
from .spd import fa_from_log
from .volume import TANGENT_SPACES, Volume


@dataclass(frozen=True)
class LossWeights:
    """Loss weights; defaults follow the published configuration."""

    cyc_x: float = 5.0
    cyc_y: float = 0.25
    prior_x: float = 10.0
    prior_y: float = 0.5

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"loss weight {name} must be a nonnegative real, got {value}")


def _tangent(x, name):
    if isinstance(x, Volume):
        if x.space not in TANGENT_SPACES:
            raise ValueError(
                f"{name} holds {x.space!r} values; diffusion losses need log-domain input"
            )
        x = x.data
    return check_finite(x, name)


def _scores(s, name):
    s = check_finite(s, name)
    if s.size == 0:
        raise ValueError(f"{name} is an empty batch")
    return s


def lsgan_d_loss(real_scores, fake_scores):
    """Discriminator loss ``0.5 mean((real - 1)^2) + 0.5 mean(fake^2)``."""
    return lsgan_d_loss_grad(real_scores, fake_scores)[0]


def lsgan_d_loss_grad(real_scores, fake_scores):
    r = _scores(real_scores, "real_scores")
    f = _scores(fake_scores, "fake_scores")
    value = 0.5 * np.mean((r - 1.0) ** 2) + 0.5 * np.mean(f**2)
    return float(value), ((r - 1.0) / r.size, f / f.size)


def lsgan_g_loss(fake_scores):
    """Generator loss ``0.5 mean((fake - 1)^2)``."""
    return lsgan_g_loss_grad(fake_scores)[0]


def lsgan_g_loss_grad(fake_scores):
    f = _scores(fake_scores, "fake_scores")
    return float(0.5 * np.mean((f - 1.0) ** 2)), (f - 1.0) / f.size


def _broadcast_weight(weight, diff):
    w = np.asarray(weight, dtype=float)
    if w.ndim == diff.ndim - 1:
        w = w[..., None]
    if w.shape[:-1] != diff.shape[:-1] and w.shape != diff.shape:
        raise ValueError(f"weight shape {np.shape(weight)} does not fit data {diff.shape}")
    return w


def l1_grad(pred, target, weight=None):
    """Mean (optionally voxel-weighted) absolute error and its gradient.

    ``weight`` has the spatial shape of the data (one value per voxel) and
    multiplies the per-voxel errors before the mean.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    check_same_shape(pred, target, names=("prediction", "target"))
    if pred.size == 0:
        raise ValueError("empty prediction")
    diff = pred - target
    g = np.sign(diff) / diff.size
    if weight is None:
        return float(np.mean(np.abs(diff))), g
    w = _broadcast_weight(weight, diff)
    return float(np.mean(w * np.abs(diff))), w * g


def l1(pred, target, weight=None):
    return l1_grad(pred, target, weight)[0]


def cycle_loss(x, x_rec, y_log_up, y_rec_hr, y_log, y_rec_lr, weights=None, aniso_map=None,
               aniso_map_lr=None):
    """Threefold cycle-consistency loss.

    ``cyc_x * L1(x_rec, x) + cyc_y / 2 * L1w(y_rec_hr, y_log_up)
    + cyc_y / 2 * L1w(y_rec_lr, y_log)``.

    Parameters
    ----------
    x, x_rec : array_like
        Structural volume and its reconstruction.
    y_log_up, y_rec_hr : array_like
        Upsampled log-domain diffusion and its high-resolution reconstruction.
    y_log, y_rec_lr : array_like
        Low-resolution log-domain diffusion and the downsampled reconstruction.
    weights : LossWeights, optional
    aniso_map, aniso_map_lr : array_like, optional
        Per-voxel FA/GFA of the targets at high and low resolution; no
        weighting when omitted. A missing ``aniso_map_lr`` is derived from
        ``y_log`` when ``aniso_map`` is given.
    """
    return cycle_loss_grad(x, x_rec, y_log_up, y_rec_hr, y_log, y_rec_lr, weights, aniso_map,
                           aniso_map_lr)[0]


def cycle_loss_grad(x, x_rec, y_log_up, y_rec_hr, y_log, y_rec_lr, weights=None, aniso_map=None,
                    aniso_map_lr=None):
    """Cycle loss and its gradients with respect to the three reconstructions."""
    w = weights or LossWeights()
    y_log_up = _tangent(y_log_up, "y_log_up")
    y_rec_hr = _tangent(y_rec_hr, "y_rec_hr")
    y_log = _tangent(y_log, "y_log")
    y_rec_lr = _tangent(y_rec_lr, "y_rec_lr")
    if aniso_map is not None and aniso_map_lr is None:
        aniso_map_lr = anisotropy_weight(y_log)
    lx, gx = l1_grad(x_rec, x)
    lhr, ghr = l1_grad(y_rec_hr, y_log_up, aniso_map)
    llr, glr = l1_grad(y_rec_lr, y_log, aniso_map_lr)
    value = w.cyc_x * lx + 0.5 * w.cyc_y * lhr + 0.5 * w.cyc_y * llr
    return value, (w.cyc_x * gx, 0.5 * w.cyc_y * ghr, 0.5 * w.cyc_y * glr)


def prior_loss(gen_y, y_log_up_paired, gen_x, x_paired, weights=None, aniso_map=None):
    """Paired prior: ``prior_x * L1w(gen_y, up log y) + prior_y * L1(gen_x, x)``."""
    return prior_loss_grad(gen_y, y_log_up_paired, gen_x, x_paired, weights, aniso_map)[0]


def prior_loss_grad(gen_y, y_log_up_paired, gen_x, x_paired, weights=None, aniso_map=None):
    w = weights or LossWeights()
    gen_y = _tangent(gen_y, "gen_y")
    y_log_up_paired = _tangent(y_log_up_paired, "y_log_up_paired")
    ly, gy = l1_grad(gen_y, y_log_up_paired, aniso_map)
    lx, gx = l1_grad(gen_x, x_paired)
    return w.prior_x * ly + w.prior_y * lx, (w.prior_x * gy, w.prior_y * gx)


def anisotropy_weight(target_log, kind=None):
    """Per-voxel FA (tensors) or GFA (ODFs) of a log-domain target.

    Parameters
    ----------
    target_log : Volume or array_like, shape (..., C)
        ``tensor_log`` (6 channels) or ``sh_log`` (K channels) values.
    kind : {"tensor", "odf"}, optional
        Inferred from the volume tag or the channel count (6 means tensor).

    Returns
    -------
    ndarray, shape (...)
        Weights in [0, 1].
    """
    if isinstance(target_log, Volume):
        if target_log.space == "tensor_log":
            kind = kind or "tensor"
        elif target_log.space == "sh_log":
            kind = kind or "odf"
        else:
            raise ValueError(f"anisotropy weights need log-domain diffusion, got {target_log.space!r}")
        target_log = target_log.data
    t = check_finite(target_log, "target_log")
    if kind is None:
        kind = "tensor" if t.shape[-1] == 6 else "odf"
    if kind == "tensor":
        return fa_from_log(sym6_to_mat(t))
    if kind == "odf":
        return gfa(exp_u(t))
    raise ValueError(f"unknown diffusion kind {kind!r}")


@dataclass(frozen=True)
class ObjectiveReport:
    """Signed full objective and the generator objective with breakdowns.

    ``total`` is the composition with negated discriminator terms, used for
    logging; ``generator_total`` is what the generators minimize.
    """

    total: float
    terms: dict
    generator_total: float
    generator_terms: dict
    d_x: float
    d_y: float


def full_objective(d_x=0.0, d_y=0.0, g_x=0.0, g_y=0.0, cycle=0.0, prior=0.0):
    """Compose the full objective from per-term loss values.

    Parameters
    ----------
    d_x, d_y : float
        Discriminator LSGAN losses.
    g_x, g_y : float
        Generator LSGAN losses.
    cycle, prior : float
        Cycle-consistency and prior losses.
    """
    values = dict(d_x=d_x, d_y=d_y, g_x=g_x, g_y=g_y, cycle=cycle, prior=prior)
    for k, v in values.items():
        if not math.isfinite(v):
            raise ValueError(f"objective term {k} is not finite")
    terms = {"-lsgan_x": -float(d_x), "-lsgan_y": -float(d_y), "cycle": float(cycle),
             "prior": float(prior)}
    gen = {"lsgan_g_x": float(g_x), "lsgan_g_y": float(g_y), "cycle": float(cycle),
           "prior": float(prior)}
    return ObjectiveReport(
        total=math.fsum(terms.values()),
        terms=terms,
        generator_total=math.fsum(gen.values()),
        generator_terms=gen,
        d_x=float(d_x),
        d_y=float(d_y),
    )

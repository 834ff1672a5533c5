"""Manifold-aware CycleGAN for T1 to diffusion synthesis at toy scale.

``G_Y`` maps high-resolution T1 patches to tangent-domain diffusion, which
is sent to the manifold by the exponential map. Every consumer of the
generated diffusion (losses, ``G_X``, the discriminator) sees it again
through the logarithm map, and gradients flow back through both spectral
layers. ``G_X`` maps upsampled log-domain diffusion back to T1.
"""

import csv
import io as _io
import math
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from threadpoolctl import threadpool_limits

from .._validation import check_random_state, mat_to_sym6, sym6_to_mat
from ..losses import (
    LossWeights,
    anisotropy_weight,
    cycle_loss_grad,
    full_objective,
    lsgan_d_loss_grad,
    lsgan_g_loss_grad,
    prior_loss_grad,
)
from ..metrics import compare_fields, summarize_field
from ..odf import exp_u, gfa, log_u
from ..spd import eig_sym3, fa, log_id
from ..spectral import exp_id_backward, exp_id_forward, log_id_backward, log_id_forward
from ..volume import Volume
from ..volume_ops import (
    audit_validity,
    avg_pool,
    minmax_normalize,
    trilinear_resize,
    upsample_log_trilinear,
)
from .nn import Adam, PatchDiscriminator, UNet3, add_grads

TRACE_COLUMNS = (
    "epoch", "d_x", "d_y", "g_x", "g_y", "cycle", "prior", "objective",
    "fa_mse", "cosine_0.2", "cosine_0.5", "geodesic", "n_invalid",
)


class TrainingDivergedError(RuntimeError):
    """A loss became non-finite; ``trace`` holds the rows logged so far."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class TrainConfig:
    """Settings of the toy trainer.

    Parameters
    ----------
    kind : {"tensor", "odf"}
    lr, beta1, beta2 : float
        Adam settings.
    batch_size, epochs : int
    patch_size : int
        High-resolution patch edge (multiple of ``4 * factor``).
    factor : int
        Resolution ratio between the T1 and the diffusion data.
    widths : tuple of 3 ints
        Generator feature channels per level.
    dt_bound : float
        Hardtanh bound of the tensor head (log-eigenvalue range).
    manifold : bool
        False bypasses the exponential map (Euclidean ablation).
    aniso_weighting : bool
        Weight diffusion errors by the target FA/GFA.
    weights : LossWeights
    seed : int
    """

    kind: str = "tensor"
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 4
    epochs: int = 20
    patch_size: int = 16
    factor: int = 2
    widths: tuple = (8, 16, 32)
    dt_bound: float = 5.0
    manifold: bool = True
    aniso_weighting: bool = True
    weights: LossWeights = LossWeights()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("tensor", "odf"):
            raise ValueError(f"kind must be 'tensor' or 'odf', got {self.kind!r}")
        if self.lr <= 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("learning rate must be positive and betas in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.factor < 1 or self.patch_size % (4 * self.factor):
            raise ValueError("patch_size must be a multiple of 4 * factor")
        if self.dt_bound <= 0:
            raise ValueError("dt_bound must be positive")

    @classmethod
    def from_mapping(cls, mapping):
        """Build from string values, e.g. a parsed ``key = value`` file."""
        kw = {}
        names = {f.name: f for f in fields(cls)}
        weights = {}
        for key, raw in mapping.items():
            key = key.replace("-", "_")
            if key.startswith("lambda_") or key in ("cyc_x", "cyc_y", "prior_x", "prior_y"):
                weights[key.removeprefix("lambda_")] = float(raw)
                continue
            if key not in names:
                raise ValueError(f"unknown config key {key!r}")
            default = names[key].default
            if isinstance(raw, str):
                raw = raw.strip().strip('"').strip("'")
                if isinstance(default, bool):
                    raw = raw.lower() in ("1", "true", "yes", "on")
                elif isinstance(default, tuple):
                    raw = tuple(int(v) for v in raw.strip("()[]").split(",") if v.strip())
                elif isinstance(default, int):
                    raw = int(raw)
                elif isinstance(default, float):
                    raw = float(raw)
            kw[key] = raw
        if weights:
            kw["weights"] = LossWeights(**{**asdict(LossWeights()), **weights})
        return cls(**kw)

    def as_params(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


# --------------------------------------------------------------------------
# data


@dataclass
class TrainingData:
    """Arrays the trainer works on, all channels-last with a leading batch axis."""

    x: np.ndarray  # (X, Y, Z, 1) normalized T1
    y_lr: np.ndarray  # (X/f, Y/f, Z/f, C) low-resolution targets (log domain)
    y_up: np.ndarray  # (X, Y, Z, C) upsampled targets
    w_hr: np.ndarray  # (X, Y, Z) anisotropy weights
    w_lr: np.ndarray  # (X/f, Y/f, Z/f)
    reference: Volume  # ground-truth diffusion at high resolution (manifold values)


def _to_tangent(values, kind, manifold):
    """Map manifold-valued channels to the generator's output domain."""
    if not manifold:
        return values
    if kind == "tensor":
        return mat_to_sym6(log_id(sym6_to_mat(values)))
    return log_u(values)


def prepare_data(phantom, config):
    """Downsample a phantom's diffusion and build targets and weights."""
    ref = phantom.tensors if config.kind == "tensor" else phantom.odf
    f = config.factor
    if any(n % config.patch_size for n in ref.shape):
        raise ValueError(f"volume dims {ref.shape} must be multiples of patch_size")
    x = minmax_normalize(phantom.t1).data
    y_hr = _to_tangent(ref.data, config.kind, config.manifold)
    y_lr = avg_pool(y_hr, f)
    if config.manifold:
        space = "tensor_log" if config.kind == "tensor" else "sh_log"
        y_up = upsample_log_trilinear(Volume(y_lr, space=space), dims=ref.shape).data
    else:
        # the Euclidean ablation interpolates raw values; that is what it ablates
        y_up = trilinear_resize(y_lr, ref.shape)
    if config.aniso_weighting:
        w_hr, w_lr = _aniso(y_up, config), _aniso(y_lr, config)
    else:
        w_hr, w_lr = np.ones(y_up.shape[:3]), np.ones(y_lr.shape[:3])
    return TrainingData(x, y_lr, y_up, w_hr, w_lr, ref)


def _aniso(t, config):
    if config.manifold:
        return anisotropy_weight(t, "tensor" if config.kind == "tensor" else "odf")
    if config.kind == "tensor":
        lam = np.maximum(eig_sym3(sym6_to_mat(t)).eigenvalues, 0.0)
        lam[..., 0] = np.maximum(lam[..., 0], 1e-12)
        return fa(lam)
    c = t / np.maximum(np.linalg.norm(t, axis=-1, keepdims=True), 1e-12)
    return gfa(c)


# --------------------------------------------------------------------------
# manifold layers


def _vec_to_mat_grad(g6):
    """Gradient w.r.t. 6 components -> symmetric matrix gradient."""
    g = np.asarray(g6, dtype=float).copy()
    g[..., [1, 2, 4]] *= 0.5
    return sym6_to_mat(g)


def _mat_to_vec_grad(G):
    g = mat_to_sym6(G)
    g[..., [1, 2, 4]] *= 2.0
    return g


@dataclass
class _ManifoldOut:
    tangent: np.ndarray  # what consumers see
    values: np.ndarray  # manifold values (raw output in the ablation)
    ctx: tuple
    eig: object  # EigenDecomp3 of the tensors, when computed
    n_invalid: int


class _ManifoldLayer:
    """exp to the manifold, then log back for consumers, with backprop.

    The forward pass audits the manifold values; for tensors the audit and
    the log map share one eigendecomposition.
    """

    def __init__(self, kind, manifold):
        self.kind, self.manifold = kind, manifold

    def forward(self, v):
        v = np.asarray(v, dtype=float)
        flat = v.reshape(-1, v.shape[-1])
        if not self.manifold:
            space = "tensor" if self.kind == "tensor" else "sh"
            return _ManifoldOut(v, v, None, None, audit_validity(flat, space=space).n_invalid)
        if self.kind == "tensor":
            Y, ctx_e = exp_id_forward(sym6_to_mat(v))
            e = eig_sym3(Y)
            y6 = mat_to_sym6(Y)
            bad = audit_validity(y6.reshape(-1, 6), space="tensor", eigenvalues=e.eigenvalues)
            if bad.n_invalid:
                return _ManifoldOut(None, y6, None, e, bad.n_invalid)
            T, ctx_l = log_id_forward(Y, eig=e)
            return _ManifoldOut(mat_to_sym6(T), y6, (ctx_e, ctx_l), e, 0)
        c = exp_u(v)
        bad = audit_validity(c.reshape(-1, c.shape[-1]), space="sh").n_invalid
        if bad:
            return _ManifoldOut(None, c, None, None, bad)
        # log_u(exp_u(v)) == v on the head's range (norm < pi/2); the composite
        # Jacobian is the identity
        return _ManifoldOut(log_u(c), c, None, None, 0)

    def backward(self, ctx, dt):
        if not self.manifold or self.kind != "tensor":
            return dt
        ctx_e, ctx_l = ctx
        G = log_id_backward(ctx_l, _vec_to_mat_grad(dt))
        return _mat_to_vec_grad(exp_id_backward(ctx_e, G))


def _pool_backward(d, f):
    d = d / float(f**3)
    return d.repeat(f, axis=1).repeat(f, axis=2).repeat(f, axis=3)


def _pool(a, f):
    B = a.shape[0]
    return np.stack([avg_pool(a[i], f) for i in range(B)])


# --------------------------------------------------------------------------
# estimator


class ManifoldCycleGAN(BaseEstimator):
    """CycleGAN pair ``G_Y: T1 -> diffusion`` and ``G_X: diffusion -> T1``.

    Parameters mirror :class:`TrainConfig`, plus ``verbose`` (print each
    trace row to stderr). ``fit`` takes a list of
    :class:`~manifold_dwi.synth.phantom.Phantom`; ``predict`` maps a T1
    volume to a diffusion volume on the manifold.

    Attributes
    ----------
    trace_ : list of dict
        One row per epoch (row 0 is the untrained network), with columns
        ``TRACE_COLUMNS``.
    n_invalid_ : int
        Total validity failures over all training steps and evaluations.
    """

    # network precision; float64 makes finite-difference checks possible
    _dtype = np.float32

    def __init__(self, kind="tensor", lr=1e-4, beta1=0.5, beta2=0.999, batch_size=4,
                 epochs=20, patch_size=16, factor=2, widths=(8, 16, 32), dt_bound=5.0,
                 manifold=True, aniso_weighting=True, weights=LossWeights(), seed=0, verbose=0):
        self.kind = kind
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.batch_size = batch_size
        self.epochs = epochs
        self.patch_size = patch_size
        self.factor = factor
        self.widths = widths
        self.dt_bound = dt_bound
        self.manifold = manifold
        self.aniso_weighting = aniso_weighting
        self.weights = weights
        self.seed = seed
        self.verbose = verbose

    @classmethod
    def from_config(cls, config, verbose=0):
        return cls(**config.as_params(), verbose=verbose)

    def _config(self):
        params = self.get_params()
        params.pop("verbose")
        return TrainConfig(**params)

    def _channels(self):
        return 6 if self.kind == "tensor" else 15

    def _build(self, rng):
        c = self._channels()
        if self.kind == "tensor":
            head, bound = "hardtanh", self.dt_bound
        elif self.manifold:
            head, bound = "tangent_ball", np.pi / 2
        else:
            head, bound = "hardtanh", 1.0
        dt = self._dtype
        self.g_y_ = UNet3(1, c, self.widths, head=head, head_bound=bound, rng=rng, dtype=dt)
        self.g_x_ = UNet3(c, 1, self.widths, head="sigmoid", rng=rng, dtype=dt)
        self.d_y_ = PatchDiscriminator(c, rng=rng, dtype=dt)
        self.d_x_ = PatchDiscriminator(1, rng=rng, dtype=dt)
        self.manifold_layer_ = _ManifoldLayer(self.kind, self.manifold)

    def _init_heads(self, datasets):
        """Start output biases at the data means and spread first-layer kinks over the inputs."""
        y_mean = np.mean([d.y_up.reshape(-1, d.y_up.shape[-1]).mean(axis=0) for d in datasets], 0)
        if self.kind == "odf" and self.manifold:
            y_mean = y_mean * 0.0
        self.g_y_.layers["head"].params["b"][:] = y_mean
        x_all = np.concatenate([d.x.reshape(-1, 1) for d in datasets])
        y_all = np.concatenate([d.y_up.reshape(-1, d.y_up.shape[-1]) for d in datasets])
        self.g_y_.spread_input_kinks(x_all)
        self.g_x_.spread_input_kinks(y_all)
        self.d_y_.spread_input_kinks(y_all)
        self.d_x_.spread_input_kinks(x_all)
        x_mean = float(np.clip(np.mean([d.x.mean() for d in datasets]), 1e-3, 1 - 1e-3))
        self.g_x_.layers["head"].params["b"][:] = math.log(x_mean / (1.0 - x_mean))

    # ---------------------------------------------------------------- training

    def fit(self, phantoms, y=None):
        """Train on one or more phantoms with alternating G and D updates."""
        if not isinstance(phantoms, (list, tuple)):
            phantoms = [phantoms]
        if not phantoms:
            raise ValueError("need at least one phantom")
        cfg = self._config()
        rng = check_random_state(cfg.seed)
        with threadpool_limits(limits=1):
            datasets = [prepare_data(p, cfg) for p in phantoms]
            self._build(rng)
            self._init_heads(datasets)
            gy, gx = self.g_y_.parameters(), self.g_x_.parameters()
            betas = (cfg.beta1, cfg.beta2)
            self.opt_ = {
                "g_y": Adam(gy, cfg.lr, betas), "g_x": Adam(gx, cfg.lr, betas),
                "d_y": Adam(self.d_y_.parameters(), cfg.lr, betas),
                "d_x": Adam(self.d_x_.parameters(), cfg.lr, betas),
            }
            self.trace_ = []
            self._ref_cache = []
            self.n_invalid_ = 0
            self.n_steps_ = 0
            self._log_epoch(0, {}, 0, datasets, phantoms)
            for epoch in range(1, cfg.epochs + 1):
                sums, n_iter, invalid = {}, 0, 0
                for batch in self._batches(datasets, rng):
                    parts, bad = self._step(batch)
                    for k, v in parts.items():
                        sums[k] = sums.get(k, 0.0) + v
                    n_iter += 1
                    invalid += bad
                means = {k: v / n_iter for k, v in sums.items()}
                if not all(math.isfinite(v) for v in means.values()):
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", self.trace_)
                self._log_epoch(epoch, means, invalid, datasets, phantoms)
        return self

    def _batches(self, datasets, rng):
        p, f, B = self.patch_size, self.factor, self.batch_size
        items = []
        for di, d in enumerate(datasets):
            X, Y, Z = d.x.shape[:3]
            for i in range(0, X, p):
                for j in range(0, Y, p):
                    for k in range(0, Z, p):
                        items.append((di, i, j, k))
        order = rng.permutation(len(items))
        for lo in range(0, len(order), B):
            sel = [items[o] for o in order[lo : lo + B]]
            out = {k: [] for k in ("x", "y_up", "y_lr", "w_hr", "w_lr")}
            for di, i, j, k in sel:
                d = datasets[di]
                hr = (slice(i, i + p), slice(j, j + p), slice(k, k + p))
                lo_ = (slice(i // f, (i + p) // f), slice(j // f, (j + p) // f),
                       slice(k // f, (k + p) // f))
                out["x"].append(d.x[hr])
                out["y_up"].append(d.y_up[hr])
                out["y_lr"].append(d.y_lr[lo_])
                out["w_hr"].append(d.w_hr[hr])
                out["w_lr"].append(d.w_lr[lo_])
            yield {k: np.stack(v) for k, v in out.items()}

    def _through_manifold(self, v):
        out = self.manifold_layer_.forward(v)
        if out.tangent is None:
            raise TrainingDivergedError(
                f"{out.n_invalid} invalid generator outputs at step {self.n_steps_}", self.trace_
            )
        return out

    def _generator_pass(self, b):
        """Both cycles forward and the generator objective backward, D held fixed.

        Returns the loss parts, the generator gradients, what the
        discriminator step needs, and the number of invalid outputs.
        """
        f, w, dt = self.factor, self.weights, self._dtype
        x, y_up, y_lr = b["x"], b["y_up"], b["y_lr"]
        ml = self.manifold_layer_

        # forward cycle: x -> G_Y -> exp/log -> G_X
        v, tape_gy1 = self.g_y_.forward(x)
        out1 = self._through_manifold(v)
        t, ctx1 = out1.tangent, out1.ctx
        t_lr = _pool(t, f)
        x_rec, tape_gx1 = self.g_x_.forward(t.astype(dt))
        # backward cycle: up log y -> G_X -> G_Y -> exp/log
        x_b, tape_gx2 = self.g_x_.forward(y_up.astype(dt))
        v_b, tape_gy2 = self.g_y_.forward(x_b)
        out2 = self._through_manifold(v_b)
        t_b, ctx2 = out2.tangent, out2.ctx
        t_b_lr = _pool(t_b, f)

        s_y, tape_dy = self.d_y_.forward(t_lr.astype(dt))
        s_x, tape_dx = self.d_x_.forward(x_b)
        g_y, ds_y = lsgan_g_loss_grad(s_y)
        g_x, ds_x = lsgan_g_loss_grad(s_x)
        wh, wl = b["w_hr"], b["w_lr"]
        cyc, (d_xrec, d_tb, d_tblr) = cycle_loss_grad(
            x, x_rec, y_up, t_b, y_lr, t_b_lr, w, aniso_map=wh, aniso_map_lr=wl
        )
        pri, (d_t_prior, d_xb_prior) = prior_loss_grad(t, y_up, x_b, x, w, aniso_map=wh)

        d_tlr, _ = self.d_y_.backward(tape_dy, ds_y)
        d_xb_adv, _ = self.d_x_.backward(tape_dx, ds_x)
        d_t_gx, grads_gx_a = self.g_x_.backward(tape_gx1, d_xrec.astype(dt))
        d_t = d_t_prior + _pool_backward(d_tlr, f) + d_t_gx
        d_tb_all = d_tb + _pool_backward(d_tblr, f)
        d_vb = ml.backward(ctx2, d_tb_all)
        d_xb, grads_gy_b = self.g_y_.backward(tape_gy2, d_vb.astype(dt))
        d_xb = d_xb + d_xb_prior + d_xb_adv
        _, grads_gx_b = self.g_x_.backward(tape_gx2, d_xb.astype(dt))
        d_v = ml.backward(ctx1, d_t)
        _, grads_gy_a = self.g_y_.backward(tape_gy1, d_v.astype(dt))

        parts = {"g_x": g_x, "g_y": g_y, "cycle": cyc, "prior": pri}
        grads = {"g_y": add_grads(grads_gy_a, grads_gy_b),
                 "g_x": add_grads(grads_gx_a, grads_gx_b)}
        fakes = {"s_y": s_y, "tape_dy": tape_dy, "s_x": s_x, "tape_dx": tape_dx}
        return parts, grads, fakes, out1.n_invalid + out2.n_invalid

    def _step(self, b):
        parts, grads, fk, invalid = self._generator_pass(b)
        self.opt_["g_y"].step(grads["g_y"])
        self.opt_["g_x"].step(grads["g_x"])

        # discriminator step on the detached fakes of this iteration
        dt = self._dtype
        r_y, tape_ry = self.d_y_.forward(b["y_lr"].astype(dt))
        d_y, (dr, df) = lsgan_d_loss_grad(r_y, fk["s_y"])
        self.opt_["d_y"].step(add_grads(self.d_y_.backward(tape_ry, dr)[1],
                                        self.d_y_.backward(fk["tape_dy"], df)[1]))
        r_x, tape_rx = self.d_x_.forward(b["x"].astype(dt))
        d_x, (dr, df) = lsgan_d_loss_grad(r_x, fk["s_x"])
        self.opt_["d_x"].step(add_grads(self.d_x_.backward(tape_rx, dr)[1],
                                        self.d_x_.backward(fk["tape_dx"], df)[1]))

        self.n_steps_ += 1
        return {"d_x": d_x, "d_y": d_y, **parts}, invalid

    # --------------------------------------------------------------- inference

    def _generate(self, t1):
        """Manifold layer output for a full normalized T1 array."""
        x = np.asarray(t1, dtype=float)
        if x.ndim == 3:
            x = x[..., None]
        v, _ = self.g_y_.forward(x[None], train=False)
        return self.manifold_layer_.forward(v[0])

    def predict(self, t1):
        """Synthesize diffusion for a T1 volume.

        Parameters
        ----------
        t1 : Volume or array_like, shape (X, Y, Z)
            Min-max normalized internally.

        Returns
        -------
        Volume
            Space ``tensor`` or ``sh`` (raw channels in the Euclidean ablation).
        """
        check_is_fitted(self, "g_y_")
        affine = t1.affine if isinstance(t1, Volume) else np.eye(4)
        x = minmax_normalize(t1.scalar() if isinstance(t1, Volume) else np.asarray(t1, float))
        with threadpool_limits(limits=1):
            out = self._generate(x)
        space = "tensor" if self.kind == "tensor" else "sh"
        return Volume(out.values, affine, space)

    def evaluate(self, phantom):
        """Metrics of the synthesized diffusion against the phantom's ground truth."""
        check_is_fitted(self, "g_y_")
        return self._evaluate(phantom)

    def _reference(self, phantom):
        cache = self.__dict__.setdefault("_ref_cache", [])
        for p, summary in cache:
            if p is phantom:
                return summary
        ref = phantom.tensors if self.kind == "tensor" else phantom.odf
        summary = summarize_field(ref)
        cache.append((phantom, summary))
        return summary

    def _evaluate(self, phantom):
        with threadpool_limits(limits=1):
            out = self._generate(minmax_normalize(phantom.t1).data)
            row = {"n_invalid": out.n_invalid}
            if out.n_invalid:
                row.update({k: float("nan") for k in ("fa_mse", "cosine_0.2", "cosine_0.5", "geodesic")})
                return row
            gen = summarize_field(out.values, eig=out.eig)
            row.update(compare_fields(gen, self._reference(phantom)))
        return row

    def _log_epoch(self, epoch, means, invalid, datasets, phantoms):
        evals = [self._evaluate(p) for p in phantoms]
        row = {"epoch": epoch}
        for k in ("d_x", "d_y", "g_x", "g_y", "cycle", "prior"):
            row[k] = means.get(k, float("nan"))
        if means:
            row["objective"] = full_objective(**means).total
        else:
            row["objective"] = float("nan")
        for k in ("fa_mse", "cosine_0.2", "cosine_0.5", "geodesic"):
            row[k] = float(np.mean([e[k] for e in evals]))
        row["n_invalid"] = int(invalid + sum(e["n_invalid"] for e in evals))
        self.n_invalid_ += row["n_invalid"]
        self.trace_.append(row)
        if self.verbose:
            print(format_trace([row]).splitlines()[1], file=sys.stderr, flush=True)

    # -------------------------------------------------------------- utilities

    def trace_csv(self):
        """The metric trace as CSV text with round-trippable float formatting."""
        check_is_fitted(self, "trace_")
        return format_trace(self.trace_)

    def save(self, path):
        """Store both generators' parameters in an ``.npz`` file."""
        check_is_fitted(self, "g_y_")
        arrays = {f"g_y.{k}": v for k, v in self.g_y_.parameters().items()}
        arrays.update({f"g_x.{k}": v for k, v in self.g_x_.parameters().items()})
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)


def format_trace(rows):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in TRACE_COLUMNS])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def train_toy(phantoms, config=None, verbose=0):
    """Train a :class:`ManifoldCycleGAN` from a :class:`TrainConfig`.

    Returns the fitted estimator; its ``trace_`` holds the metric trace.
    """
    config = config or TrainConfig()
    return ManifoldCycleGAN.from_config(config, verbose=verbose).fit(phantoms)


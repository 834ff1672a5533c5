"""Command-line interface.

Tables go to stdout as CSV, summaries to stderr. Failures exit nonzero
with a single ``manifold-dwi: error: ...`` line on stderr.
"""

import argparse
import configparser
import csv
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import io
from ._validation import mat_to_sym6, sym6_to_mat
from .metrics import (
    bundle_compare,
    cosine_similarity,
    summarize_field,
    tractogram_stats,
)
from .odf import exp_u, log_u
from .spd import exp_id, log_id
from .spectral import random_gradcheck
from .tractography import TrackingParams, track
from .volume import Volume
from .volume_ops import audit_validity, upsample_log_trilinear

PROG = "manifold-dwi"
THREADS_ENV = "MANIFOLD_DWI_THREADS"


class CliError(Exception):
    """A user-facing failure reported as one line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


# ---------------------------------------------------------------- helpers


def read_config(path):
    """Parse a ``key = value`` file (``#`` comments, optional ``[section]`` lines)."""
    text = Path(path).read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    cp.read_string("[__top__]\n" + text)
    out = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            out[key.replace("-", "_")] = value.strip().strip('"').strip("'")
    return out


def _resolve_threads(value):
    if value is None:
        value = os.environ.get(THREADS_ENV)
    if value is None or value == "":
        return os.cpu_count() or 1
    try:
        n = int(value)
    except ValueError:
        raise CliError(f"invalid thread count {value!r}") from None
    if n < 1:
        raise CliError(f"thread count must be >= 1, got {n}")
    return n


FLOAT32_NORM_TOL = 1e-6


def _load(path):
    """Read a volume as float64; SH rows are renormalized to undo float32 storage error."""
    _, vol = io.read_volume(path)
    data = vol.data.astype(float)
    if vol.space == "sh":
        n = np.linalg.norm(data, axis=-1, keepdims=True)
        near = np.abs(n - 1.0) <= FLOAT32_NORM_TOL
        data = np.where(near, data / np.where(n > 0, n, 1.0), data)
    return Volume(data, vol.affine, vol.space)


def _write_csv(rows, columns, out=None):
    w = csv.writer(out or sys.stdout, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row[c]) for c in columns])


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _note(msg):
    print(msg, file=sys.stderr)


def _dims(text):
    parts = [p for p in str(text).replace("x", ",").split(",") if p.strip()]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected 3 dims, got {text!r}")
    return tuple(int(p) for p in parts)


def _mask(path, shape=None):
    vol = _load(path)
    m = vol.scalar() > 0.5
    if shape is not None and m.shape != tuple(shape):
        raise CliError(f"grid mismatch: mask {m.shape} vs field {tuple(shape)}")
    return m, vol.affine


def _to_log(vol):
    if vol.space == "tensor":
        return vol.with_data(mat_to_sym6(log_id(sym6_to_mat(vol.data))), space="tensor_log")
    if vol.space == "sh":
        return vol.with_data(log_u(vol.data), space="sh_log")
    return vol


def _from_log(vol, space):
    if space == "tensor":
        return vol.with_data(mat_to_sym6(exp_id(sym6_to_mat(vol.data))), space="tensor")
    if space == "sh":
        return vol.with_data(exp_u(vol.data), space="sh")
    return vol


def _slice_spec(args, shape):
    axis = args.slice_axis
    index = shape[axis] // 2 if args.slice_index is None else args.slice_index
    return axis, index


# --------------------------------------------------------------- commands


def cmd_phantom_gen(args):
    from .synth.phantom import PhantomSpec, phantom_gen

    spec = PhantomSpec(geometry=args.geometry, dims=args.dims, radius=args.radius,
                       length=args.length, arc_radius=args.arc_radius, margin=args.margin,
                       noise=args.noise, gm_fa=args.gm_fa, seed=args.seed)
    ph = phantom_gen(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "t1.nii": ph.t1,
        "tensors.nii": ph.tensors,
        "odf.nii": ph.odf,
        "wm_mask.nii": Volume(ph.wm_mask.astype(float), ph.t1.affine, "scalar"),
    }
    rows = []
    for name, vol in files.items():
        io.write_volume(out / name, vol)
        rows.append({"file": name, "space": vol.space, "sha256": io.file_digest(out / name)})
    _write_csv(rows, ("file", "space", "sha256"))
    _note(f"{args.geometry} phantom {spec.dims}: {int(ph.wm_mask.sum())} white-matter voxels "
          f"written to {out}")


def cmd_audit(args):
    vol = _load(args.input)
    if vol.space in ("tensor_log", "sh_log") and not args.raw:
        vol = _from_log(vol, "tensor" if vol.space == "tensor_log" else "sh")
    space = args.space or ("sh" if vol.space in ("sh", "sh_log") else "tensor")
    rep = audit_validity(vol.data, space=space, strict=args.strict)
    row = rep.as_row()
    _write_csv([row], tuple(row))
    _note(f"{rep.n_invalid} of {rep.n_voxels} voxels invalid ({rep.kind})")


def cmd_map(args):
    vol = _load(args.input)
    axis_idx = None
    if args.kind in ("fa", "gfa", "color-fa"):
        s = summarize_field(vol)
        if args.kind == "fa" and s.kind != "tensor":
            raise CliError("fa needs a tensor field; use gfa for ODFs")
        if args.kind == "gfa" and s.kind != "odf":
            raise CliError("gfa needs an ODF field; use fa for tensors")
        values = s.anisotropy
        if args.kind == "color-fa":
            rgb = np.abs(s.directions) * (values * s.valid)[..., None]
            axis_idx = _slice_spec(args, vol.shape)
            path = Path(args.out).with_suffix(".ppm")
            io.export_rgb_ppm(rgb, *axis_idx, path)
            _write_csv([{"map": args.kind, "mean": float(values.mean()), "image": str(path)}],
                       ("map", "mean", "image"))
            _note(f"wrote {path}")
            return
    else:
        if args.ref is None:
            raise CliError(f"{args.kind} needs --ref")
        ref = _load(args.ref)
        g, r = summarize_field(vol), summarize_field(ref)
        if g.kind != r.kind or g.shape != r.shape:
            raise CliError("--in and --ref must be fields of the same kind on the same grid")
        if args.kind == "geodesic":
            d = g.points - r.points
            axes = (-2, -1) if g.kind == "tensor" else (-1,)
            values = np.sqrt((d * d).sum(axis=axes))
        else:
            ok = g.valid & r.valid & (r.anisotropy >= args.threshold)
            values = np.zeros(g.shape)
            if ok.any():
                values[ok] = cosine_similarity(g.directions[ok], r.directions[ok])
    out = Path(args.out)
    io.write_volume(out, Volume(values, vol.affine, "scalar"))
    axis_idx = _slice_spec(args, vol.shape)
    pgm = out.with_suffix(".pgm")
    io.export_slice_pgm(values, *axis_idx, pgm)
    _write_csv([{"map": args.kind, "mean": float(values.mean()), "image": str(pgm)}],
               ("map", "mean", "image"))
    _note(f"wrote {out} and {pgm}")


def cmd_upsample(args):
    vol = _load(args.input)
    if vol.space == "tensor9":
        raise CliError("upsample expects 6-channel tensors")
    up = upsample_log_trilinear(_to_log(vol), factor=args.factor)
    out = _from_log(up, vol.space)
    io.write_volume(args.out, out)
    _write_csv([{"space": out.space, "dims": "x".join(map(str, out.shape)),
                 "sha256": io.file_digest(args.out)}], ("space", "dims", "sha256"))
    _note(f"{vol.shape} -> {out.shape} ({vol.space}, log-domain trilinear)")


def cmd_gradcheck(args):
    report = random_gradcheck(n_trials=args.trials, seed=args.seed)
    rows = [{"map": tag, "n_checked": c, "n_rejected": r, "max_rel_error": e}
            for tag, (c, r, e) in report.items()]
    _write_csv(rows, ("map", "n_checked", "n_rejected", "max_rel_error"))
    worst = max(r["max_rel_error"] for r in rows)
    _note(f"max relative error {worst:.3e} over {args.trials} draws per map")


def cmd_train_toy(args):
    from .synth.model import TrainConfig, train_toy
    from .synth.phantom import PhantomSpec, phantom_gen

    cfg = dict(args.train_settings)
    for key in ("epochs", "seed", "kind", "batch_size", "lr"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = str(val)
    phantom_keys = {k: cfg.pop(k) for k in ("geometry", "dims") if k in cfg}
    config = TrainConfig.from_mapping(cfg)
    spec = PhantomSpec(geometry=args.geometry or phantom_keys.get("geometry", "straight"),
                       dims=_dims(args.dims or phantom_keys.get("dims", "64")), seed=config.seed)
    model = train_toy([phantom_gen(spec)], config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace = model.trace_csv()
    (out / "trace.csv").write_text(trace)
    model.save(out / "generator.npz")
    sys.stdout.write(trace)
    last = model.trace_[-1]
    _note(f"{config.epochs} epochs: fa_mse {last['fa_mse']:.4f}, "
          f"cosine@0.5 {last['cosine_0.5']:.4f}, invalid {model.n_invalid_}")


def cmd_track(args):
    field = _load(args.field)
    mask, _ = _mask(args.mask, field.shape)
    params = TrackingParams(step=args.step, max_angle=args.angle,
                            seeds_per_voxel=args.seeds_per_voxel, min_length=args.min_len,
                            max_length=args.max_len)
    lines = track(field, mask, params, rng_seed=args.seed, n_threads=args.threads)
    io.write_streamlines(args.out, lines)
    row = {"n_streamlines": len(lines), "mean_length_mm": float("nan"), "volume_voxels": 0,
           "sha256": io.file_digest(args.out)}
    if lines:
        stats = tractogram_stats(lines, field.shape, field.affine)
        row.update(mean_length_mm=stats.mean_length, volume_voxels=stats.volume)
    _write_csv([row], tuple(row))
    _note(f"{len(lines)} streamlines written to {args.out}")


def cmd_bundle_compare(args):
    ref, affine = _mask(args.a)
    b = Path(args.b)
    with open(b, "rb") as fh:
        is_streamlines = fh.read(8) == io.STREAMLINE_MAGIC
    if is_streamlines:
        lines = [np.asarray(s, dtype=float) for s in io.read_streamlines(b)]
        row = bundle_compare(ref, lines, affine)
        if args.overreach == "common":
            from .metrics import overreach, rasterize_streamlines

            occ = rasterize_streamlines(lines, ref.shape, affine) > 0
            row["overreach"] = overreach(ref, occ, variant="common")
    else:
        from .metrics import dice, overlap, overreach

        occ, _ = _mask(b, ref.shape)
        row = {"dice": dice(ref, occ), "overlap": overlap(ref, occ),
               "overreach": overreach(ref, occ, variant=args.overreach),
               "n_streamlines": 0, "mean_length_mm": float("nan"),
               "volume_voxels": int(occ.sum())}
    _write_csv([row], tuple(row))
    _note(f"dice {row['dice']:.4f}, overlap {row['overlap']:.4f}, "
          f"overreach {row['overreach']:.4f}")


# ----------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog=PROG, description="Log-Euclidean diffusion MRI toolkit.")
    p.add_argument("--threads", default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or all cores)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", help="key = value file; command-line flags win")
        sp.set_defaults(func=func)
        return sp

    ph = sub.add_parser("phantom", help="synthetic phantoms")
    phs = ph.add_subparsers(dest="phantom_command", required=True, parser_class=_Parser)
    g = phs.add_parser("gen", help="generate a phantom", description="Generate a phantom.")
    g.add_argument("--config", help="key = value file; command-line flags win")
    g.set_defaults(func=cmd_phantom_gen)
    g.add_argument("--geometry", choices=("straight", "arc", "crossing"), default="straight")
    g.add_argument("--dims", type=_dims, default=(64, 64, 64), help="e.g. 64 or 64,64,48")
    g.add_argument("--radius", type=float, default=8.0)
    g.add_argument("--length", type=float, default=None, help="straight bundle extent (voxels)")
    g.add_argument("--arc-radius", type=float, default=None)
    g.add_argument("--margin", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.02)
    g.add_argument("--gm-fa", type=float, default=0.15, help="grey-matter FA")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")

    a = add("audit", cmd_audit, "Count invalid tensors / ODFs in a volume.")
    a.add_argument("--in", dest="input", required=True)
    a.add_argument("--space", choices=("tensor", "tensor9", "sh"), default=None)
    a.add_argument("--strict", action="store_true",
                   help="also count ODFs outside the positive orthant")
    a.add_argument("--raw", action="store_true",
                   help="audit tangent-space volumes as stored, without the exp map")

    m = add("map", cmd_map, "Scalar maps and slice images.")
    m.add_argument("kind", choices=("fa", "gfa", "color-fa", "geodesic", "cosine"))
    m.add_argument("--in", dest="input", required=True)
    m.add_argument("--ref", default=None)
    m.add_argument("--out", required=True, help="output .nii (image written alongside)")
    m.add_argument("--threshold", type=float, default=0.2, help="cosine: reference FA cut")
    m.add_argument("--slice-axis", type=int, choices=(0, 1, 2), default=2)
    m.add_argument("--slice-index", type=int, default=None)

    u = add("upsample", cmd_upsample, "Log-domain trilinear upsampling.")
    u.add_argument("--in", dest="input", required=True)
    u.add_argument("--factor", type=float, required=True)
    u.add_argument("--out", required=True)

    gc = add("gradcheck", cmd_gradcheck, "Check spectral gradients by finite differences.")
    gc.add_argument("--trials", type=int, default=100)
    gc.add_argument("--seed", type=int, default=0)

    t = add("train-toy", cmd_train_toy, "Train the toy synthesis model on a phantom.")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--kind", choices=("tensor", "odf"), default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--geometry", choices=("straight", "arc", "crossing"), default=None)
    t.add_argument("--dims", default=None)

    tr = add("track", cmd_track, "Deterministic streamline tracking.")
    tr.add_argument("--field", required=True)
    tr.add_argument("--mask", required=True)
    tr.add_argument("--step", type=float, default=0.5)
    tr.add_argument("--angle", type=float, default=60.0)
    tr.add_argument("--seeds-per-voxel", type=int, default=2)
    tr.add_argument("--min-len", type=float, default=10.0)
    tr.add_argument("--max-len", type=float, default=300.0)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", required=True)

    b = add("bundle-compare", cmd_bundle_compare, "Compare a tractogram or mask to a reference mask.")
    b.add_argument("--a", required=True, help="reference mask volume")
    b.add_argument("--b", required=True, help="streamline file or mask volume")
    b.add_argument("--overreach", choices=("symmetric", "common"), default="symmetric")
    return p


def _subparser_for(parser, argv):
    """The subcommand parser named in ``argv``, or None."""
    sp = parser
    for _ in range(2):
        action = next((a for a in sp._actions if isinstance(a, argparse._SubParsersAction)), None)
        if action is None:
            break
        name = next((t for t in argv if t in action.choices), None)
        if name is None:
            return None
        sp = action.choices[name]
    return sp


def _apply_config(parser, argv):
    """Install ``--config`` values as defaults so explicit flags win.

    Returns settings the subcommand has no flag for (train-toy passes them
    to its trainer configuration).
    """
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    sp = _subparser_for(parser, argv)
    if not known.config or sp is None:
        return {}
    dests = {a.dest: a for a in sp._actions}
    for a in sp._actions:
        for opt in a.option_strings:
            if opt.startswith("--"):
                dests.setdefault(opt[2:].replace("-", "_"), a)
    extra = {}
    for key, raw in read_config(known.config).items():
        action = dests.get(key)
        if action is None or action.dest in ("config", "help"):
            if sp.prog.endswith("train-toy"):
                extra[key] = raw
                continue
            raise CliError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                value = action.type(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise CliError(f"config key {key!r}: {exc}") from None
        else:
            value = raw
        if action.choices is not None and value not in action.choices:
            raise CliError(f"config key {key!r}: invalid choice {value!r}")
        action.required = False
        sp.set_defaults(**{action.dest: value})
    return extra


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        extra = _apply_config(parser, argv)
        args = parser.parse_args(argv)
        args.train_settings = extra
        args.threads = _resolve_threads(args.threads)
        # numeric kernels stay single-threaded so results do not depend on --threads
        with threadpool_limits(limits=1):
            args.func(args)
    except CliError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as one line
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"{PROG}: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line frontend.

Exit codes: 0 ok, 2 usage, 3 input-format, 4 infeasible-config, 5 internal.
Failures print exactly one line to stderr: ``ERROR <class> <reason>: <detail>``.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, geometry, io, metrics, pipeline
from ._accel import BACKEND, thread_cap
from .errors import ConeSamplerError
from .rng import substream

log = logging.getLogger("cone_sampler")

EXIT_CLASSES = {2: "usage", 3: "input-format", 4: "infeasible-config", 5: "internal"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _unit_interval(text):
    x = float(text)
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is outside [0, 1]")
    return x


def _obs_cone(text):
    x = float(text)
    if not 0.0 < x <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is outside (0, 1]")
    return x


def _positive_int(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"{text} must be >= 1")
    return n


def _seed(text):
    n = int(text, 0)
    if not 0 <= n < 2 ** 64:
        raise argparse.ArgumentTypeError(f"{text} does not fit in an unsigned 64-bit integer")
    return n


def _dimension(text):
    n = int(text)
    if n < 2:
        raise argparse.ArgumentTypeError(f"dimension {text} is too small, need >= 2")
    return n


def _nonneg_float(text):
    x = float(text)
    if not (x >= 0.0 and np.isfinite(x)):
        raise argparse.ArgumentTypeError(f"{text} must be finite and >= 0")
    return x


def _positive_float(text):
    x = float(text)
    if not (x > 0.0 and np.isfinite(x)):
        raise argparse.ArgumentTypeError(f"{text} must be finite and > 0")
    return x


def _value_range(text):
    try:
        lo, hi = (float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    if not lo < hi:
        raise argparse.ArgumentTypeError(f"range {text!r} needs lo < hi")
    return lo, hi


def _lb_list(text):
    return [_unit_interval(p) for p in text.split(",") if p.strip()]


def _meta_path(path):
    return Path(path).with_suffix(".meta.json")


def _base_doc(command, config):
    return {"tool": "cone-sampler", "version": __version__, "command": command, "config": config}


def _load_refs(path):
    arr = io.read_array(path)
    if arr.shape[0] == 0:
        raise io.InputFormatError("empty-dataset", f"{path}: no reference vectors")
    return geometry.IdentitySet.from_raw(arr)


def cmd_refgen(args):
    refs = pipeline.generate_reference_set(args.ids, args.dim, args.max_cos, args.seed)
    io.write_array(args.out, refs.vectors)
    io.write_report(_meta_path(args.out), _base_doc("refgen", {
        "ids": args.ids, "dim": args.dim, "max_cos": args.max_cos, "seed": args.seed,
    }))
    log.info("wrote %d reference vectors to %s", len(refs), args.out)


def _refs_meta(path):
    meta = _meta_path(path)
    return io.read_report(meta).get("config") if meta.exists() else None


def cmd_perturb(args):
    refs = _load_refs(args.refs)
    cfg = pipeline.GenerationConfig(args.lb, args.k, args.seed, refs.dim, args.obs_cone)
    data = pipeline.generate_dataset(refs, cfg, dtype=np.float32)
    labels = args.labels or io.labels_path_for(args.out)
    io.write_embeddings(data, args.out, labels)
    io.write_report(_meta_path(args.out), _base_doc("perturb", {
        "refs": str(args.refs), "lb": args.lb, "k": args.k, "seed": args.seed,
        "omega": args.omega, "dim": refs.dim, "ids": len(refs), "observation_cone": args.obs_cone,
        "refgen": _refs_meta(args.refs),
    }))
    log.info("wrote %d samples to %s", len(data), args.out)


def cmd_noise_perturb(args):
    refs = _load_refs(args.refs)
    out = np.empty((len(refs) * args.k, refs.dim), dtype=np.float32)
    for i in range(len(refs)):
        rows = geometry.noise_perturb(refs.vectors[i], args.sigma, substream(args.seed, i), size=args.k)
        out[i * args.k:(i + 1) * args.k] = rows
    data = pipeline.LabeledEmbeddingSet(out, np.repeat(np.arange(len(refs)), args.k), len(refs))
    labels = args.labels or io.labels_path_for(args.out)
    io.write_embeddings(data, args.out, labels)
    io.write_report(_meta_path(args.out), _base_doc("noise-perturb", {
        "refs": str(args.refs), "sigma": args.sigma, "k": args.k, "seed": args.seed,
        "dim": refs.dim, "ids": len(refs), "refgen": _refs_meta(args.refs),
    }))


def _policy(args):
    return metrics.PairingPolicy(impostor_mult=args.impostor_mult, seed=args.seed)


def _policy_doc(policy):
    return {"genuine": policy.genuine, "impostor": policy.impostor if policy.impostor is not None
            else f"sampled({policy.impostor_mult}x genuine)", "seed": policy.seed}


def _intra_metrics(data, r, flags):
    out = {}
    for name, fn in (("c_intra", lambda: metrics.intra_class_consistency(data, r)),
                     ("d_intra", lambda: metrics.intra_class_diversity(data))):
        try:
            out[name] = fn()
        except ConeSamplerError:
            out[name] = None
            flags.append(f"{name.replace('_', '-')}-undefined")
    return out


def cmd_eval(args):
    data = io.read_embeddings(args.data, args.labels)
    policy = _policy(args)
    scores = metrics.build_score_set(data, policy)
    report = metrics.verification_report(scores)
    flags = list(report.flags)
    values = report.to_dict()
    values.pop("flags")
    values.update(_intra_metrics(data, args.threshold, flags))
    if args.attrs:
        attrs = io.read_attributes(args.attrs, len(data))
        values["attributes"] = attr_values = {}
        for ch in attrs.channels:
            entry = {}
            if attrs.is_continuous(ch):
                entry["std"] = metrics.attribute_std(data, attrs, [ch])[ch]
                if args.attr_bins:
                    entry["entropy"] = metrics.attribute_entropy(data, attrs, ch, args.attr_bins, args.attr_range)
            else:
                entry["entropy"] = metrics.attribute_entropy(data, attrs, ch)
            attr_values[ch] = entry
    config = {"data": str(args.data), "threshold": args.threshold, "pairing": _policy_doc(policy),
              "bins": args.bins, "range": list(args.range)}
    meta = _meta_path(args.data)
    if meta.exists():
        config["generation"] = io.read_report(meta).get("config")
    doc = _base_doc("eval", config)
    doc["metrics"] = values
    doc["undefined"] = sorted(k for k, v in values.items() if v is None)
    doc["flags"] = flags
    io.write_report(args.report, doc)
    if args.hist:
        io.write_histogram_csv(args.hist, metrics.score_histogram(scores, args.bins, args.range))


def cmd_hist(args):
    data = io.read_embeddings(args.data, args.labels)
    scores = metrics.build_score_set(data, _policy(args))
    io.write_histogram_csv(args.hist, metrics.score_histogram(scores, args.bins, args.range))


def cmd_simulate(args):
    refs = pipeline.generate_reference_set(args.ids, args.dim, args.max_cos, args.seed)
    cfg = pipeline.GenerationConfig(1.0, args.k, args.seed, args.dim, args.obs_cone)
    policy = metrics.PairingPolicy(impostor_mult=args.impostor_mult, seed=args.seed)
    sweep = pipeline.run_lb_sweep(refs, cfg, args.lb, policy, args.threshold)
    doc = _base_doc("simulate", {
        "ids": args.ids, "dim": args.dim, "max_cos": args.max_cos, "k": args.k, "seed": args.seed,
        "omega": args.omega, "observation_cone": args.obs_cone, "lb": sweep.settings,
        "threshold": args.threshold, "pairing": _policy_doc(policy),
    })
    doc["sweep"] = []
    for p in sweep.points:
        entry = p.report.to_dict()
        entry.update({"lb": p.setting, "c_intra": p.c_intra, "d_intra": p.d_intra})
        entry["undefined"] = sorted(k for k, v in entry.items() if v is None)
        doc["sweep"].append(entry)
    io.write_report(args.report, doc)
    for p in sweep.points:
        print(f"lb={p.setting:.3f} eer={p.report.eer} g_mean={p.report.stats.g_mean}")


def build_parser():
    p = _Parser(prog="cone-sampler", description="Cone-constrained identity embedding perturbation and evaluation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("refgen", help="sample reference identity vectors")
    s.add_argument("--ids", type=_positive_int, required=True)
    s.add_argument("--dim", type=_dimension, required=True)
    s.add_argument("--max-cos", type=float, default=0.3)
    s.add_argument("--seed", type=_seed, default=1337)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_refgen)

    s = sub.add_parser("perturb", help="angular perturbations of every reference")
    s.add_argument("--refs", required=True)
    s.add_argument("--lb", type=_unit_interval, required=True)
    s.add_argument("--k", type=_positive_int, default=50)
    s.add_argument("--seed", type=_seed, default=1337)
    s.add_argument("--obs-cone", type=_obs_cone, default=1.0)
    s.add_argument("--omega", type=_nonneg_float, default=1.0, help="guidance scale, recorded only")
    s.add_argument("--out", required=True)
    s.add_argument("--labels")
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("noise-perturb", help="Euclidean-noise baseline perturbations")
    s.add_argument("--refs", required=True)
    s.add_argument("--sigma", type=_positive_float, default=1.0)
    s.add_argument("--k", type=_positive_int, default=50)
    s.add_argument("--seed", type=_seed, default=1337)
    s.add_argument("--out", required=True)
    s.add_argument("--labels")
    s.set_defaults(func=cmd_noise_perturb)

    for name, func, help_ in (("eval", cmd_eval, "separability and intra-class report"),
                              ("hist", cmd_hist, "genuine/impostor score histogram")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--data", required=True)
        s.add_argument("--labels")
        s.add_argument("--impostor-mult", type=_positive_int, default=10)
        s.add_argument("--seed", type=_seed, default=1337, help="pair sampling seed")
        s.add_argument("--bins", type=_positive_int, default=100)
        s.add_argument("--range", type=_value_range, default=(-1.0, 1.0))
        if name == "eval":
            s.add_argument("--report", required=True)
            s.add_argument("--hist")
            s.add_argument("--threshold", type=float, default=0.3, help="similarity threshold r for C_intra")
            s.add_argument("--attrs", help="attribute CSV aligned with the embeddings")
            s.add_argument("--attr-bins", type=_positive_int, help="bin count for entropy of numeric channels")
            s.add_argument("--attr-range", type=_value_range)
        else:
            s.add_argument("--hist", required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("simulate", help="lower-bound sweep in embedding space")
    s.add_argument("--ids", type=_positive_int, default=1000)
    s.add_argument("--dim", type=_dimension, default=512)
    s.add_argument("--max-cos", type=float, default=0.3)
    s.add_argument("--k", type=_positive_int, default=50)
    s.add_argument("--seed", type=_seed, default=1337)
    s.add_argument("--obs-cone", type=_obs_cone, default=pipeline.DEFAULT_OBSERVATION_CONE)
    s.add_argument("--omega", type=_nonneg_float, default=1.0, help="guidance scale, recorded only")
    s.add_argument("--lb", type=_lb_list, default=[0.9, 0.8, 0.7, 0.6, 0.5, 0.4])
    s.add_argument("--impostor-mult", type=_positive_int, default=10)
    s.add_argument("--threshold", type=float, default=0.3)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_simulate)
    return p


def _fail(code, reason, detail):
    detail = " ".join(str(detail).split())
    print(f"ERROR {EXIT_CLASSES[code]} {reason}: {detail}", file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command == "eval" and args.attr_bins and args.attr_range is None:
            raise UsageError("--attr-bins needs --attr-range")
    except UsageError as exc:
        return _fail(2, "bad-arguments", exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    log.debug("backend=%s threads=%s", BACKEND, thread_cap())
    try:
        args.func(args)
    except ConeSamplerError as exc:
        return _fail(exc.exit_code, exc.reason, exc.detail)
    except (OSError, ValueError) as exc:
        code = 3 if isinstance(exc, OSError) else 2
        return _fail(code, type(exc).__name__, exc)
    except Exception as exc:  # noqa: BLE001
        return _fail(5, type(exc).__name__, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())

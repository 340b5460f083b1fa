"""Command-line interface.

Exit codes: 0 success, 1 malformed or unreadable input, 2 invalid schedule
or configuration, 3 numerical failure. On success the last line printed to
stdout is a single JSON object summarizing the run.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import errmodel, formats, harness, keycore, pipeline
from .errors import ConfigError, DataError, NumericError

EXIT_OK, EXIT_DATA, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

# float32 storage puts a noise floor under the spectrum; singular values
# within this factor of it are excluded from the decay fit
NOISE_MARGIN = 10.0


def _summary(**fields):
    print(json.dumps(fields))


def cmd_compress(args) -> int:
    k = formats.read_kmat(args.input)
    schedule = pipeline.parse_schedule(args.schedule, k.shape[1], args.groups)
    cache = pipeline.compress(k, schedule)
    formats.write_svdq(args.output, cache)
    bbar = schedule.equivalent_bits
    cr = pipeline.compression_ratio(bbar) if bbar > 0 else None
    print(f"equivalent bits: {bbar:g}")
    print(f"compression ratio: {cr:.1f}" if cr else "compression ratio: undefined (all channels truncated)")
    print(f"payload bytes: {cache.payload_bytes}")
    print(f"side-data bytes: {cache.side_bytes}")
    _summary(command="compress", output=str(args.output), s=cache.s, d=cache.d,
             equivalent_bits=bbar, compression_ratio=cr,
             payload_bytes=cache.payload_bytes, side_bytes=cache.side_bytes)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cache = formats.read_svdq(args.input)
    k_hat = pipeline.decompress(cache)
    formats.write_kmat(args.output, k_hat)
    _summary(command="reconstruct", output=str(args.output), s=cache.s, d=cache.d,
             equivalent_bits=cache.equivalent_bits)
    return EXIT_OK


def fit_floor(k, singulars, eps=float(np.finfo(np.float32).eps)) -> float:
    """Relative floor for the decay fit, above float32 rounding noise of ``k``."""
    s, d = k.shape
    top = float(np.max(singulars))
    if top <= 0:
        return 1e-12
    noise = eps * math.sqrt(np.mean(k * k)) * (math.sqrt(s) + math.sqrt(d))
    return max(1e-12, NOISE_MARGIN * noise / top)


def analyze(k, bits: int, groups: int = 8, schedule_text: str | None = None) -> dict:
    s, d = k.shape
    mean, centered = keycore.center(k)
    f = keycore.svd(centered, mean)
    frob_sq = float(np.sum(centered**2))
    floor = fit_floor(k, f.singulars)
    model = errmodel.fit_decay(f.singulars, floor=floor)
    est = errmodel.svdq_error_ratio(bits, model.rho, d, frob_sq=frob_sq, s=s)
    advice = errmodel.advise_schedule(f.singulars, bits, groups, s=s)
    advice_mse = errmodel.predicted_schedule_mse(12 * f.singulars**2 / s, advice)
    notes = []
    if not est.regime:
        notes.append(
            f"spectrum decay rho={model.rho:.4g} is too slow for the latent schedule to reliably "
            f"beat direct {bits}-bit quantization (alpha={est.alpha:.4g})"
        )
    report = {
        "input": {"s": s, "d": d},
        "spectrum": f.singulars.tolist(),
        "frob_sq": frob_sq,
        "decay": {"c": model.c, "rho": model.rho, "residual": model.residual,
                  "n_used": model.n_used, "floor": floor},
        "direct_mse": errmodel.direct_quant_mse(frob_sq, s, d, bits),
        "error_ratio": {"bits": bits, "alpha": est.alpha, "top_bits": est.top_bits,
                        "mse_ratio": est.mse_ratio, "rms_ratio": est.rms_ratio,
                        "direct_mse": est.direct_mse, "svdq_mse": est.svdq_mse,
                        "regime": est.regime},
        "advice": {"schedule": list(advice.group_bits), "equivalent_bits": advice.equivalent_bits,
                   "predicted_mse": advice_mse},
        "notes": notes,
    }
    if schedule_text is not None:
        sched = pipeline.parse_schedule(schedule_text, d, groups)
        k_svdq = pipeline.decompress(pipeline.compress(k, sched))
        svdq_mse, svdq_rel = errmodel.measure_mse(k, k_svdq)
        direct_mse, direct_rel = errmodel.measure_mse(k, harness.direct_quantize(k, bits))
        ranges = errmodel.latent_range_sq(np.arange(1, d + 1), model, frob_sq, s)
        report["comparison"] = {
            "schedule": list(sched.group_bits),
            "equivalent_bits": sched.equivalent_bits,
            "svdq": {"rel_frob": svdq_rel, "mse": svdq_mse,
                     "predicted_mse": errmodel.predicted_schedule_mse(ranges, sched)},
            "direct": {"bits": bits, "rel_frob": direct_rel, "mse": direct_mse,
                       "predicted_mse": report["direct_mse"]},
        }
    return report


def _emit(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        formats.atomic_write(path, text.encode())


def cmd_analyze(args) -> int:
    k = formats.read_kmat(args.input)
    report = analyze(k, args.bits, args.groups, args.schedule)
    _emit(json.dumps(report, indent=2) + "\n", args.report)
    _summary(command="analyze", rho=report["decay"]["rho"],
             rms_ratio=report["error_ratio"]["rms_ratio"], regime=report["error_ratio"]["regime"],
             advice=report["advice"]["schedule"])
    return EXIT_OK


def simulate(args) -> tuple[dict, list[harness.EvalRecord]]:
    spec = harness.SynthSpec(s=args.seq, d=args.dim, rho=args.rho, seed=args.seed, preset=args.preset)
    schedule = pipeline.parse_schedule(args.schedule, spec.d, args.groups)
    if args.sparsity_topk is not None:
        chunks = -(-spec.s // args.chunk)
        if not 1 <= args.sparsity_topk <= chunks:
            raise ConfigError(f"--sparsity-topk must be in [1, {chunks}]")
    records = harness.run_eval(spec, schedule, sparsity_k=args.sparsity_topk, v_bits=args.v_bits,
                               chunk_size=args.chunk, tau=args.tau, queries=args.queries,
                               direct_bits=args.direct_bits)
    config = {"seq": spec.s, "dim": spec.d, "rho": spec.rho, "seed": spec.seed,
              "preset": spec.preset, "schedule": list(schedule.group_bits),
              "sparsity_topk": args.sparsity_topk, "chunk": args.chunk, "tau": args.tau,
              "v_bits": args.v_bits, "queries": args.queries}
    return config, records


def render_records(config, records, fmt: str, timing: bool = False) -> str:
    rows = [r.as_dict(timing) for r in records]
    if fmt == "json":
        return json.dumps({"config": config, "records": rows}, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def cmd_simulate(args) -> int:
    config, records = simulate(args)
    _emit(render_records(config, records, args.format, args.timing), args.report)
    _summary(command="simulate", rows=len(records),
             rel_frob={r.method: r.rel_frob for r in records})
    return EXIT_OK


def _bits(text):
    b = int(text)
    if not 1 <= b <= 8:
        raise argparse.ArgumentTypeError("bits must be in 1..8")
    return b


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svdq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="compress a KMAT key matrix into an SVDQ file")
    p.add_argument("--input", required=True)
    p.add_argument("--schedule", required=True, help="comma-separated group widths, e.g. 8,4,4,2,0,0,0,0")
    p.add_argument("--groups", type=_positive, default=8)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("reconstruct", help="decode an SVDQ file back to a KMAT matrix")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("analyze", help="error-model report for a KMAT key matrix")
    p.add_argument("--input", required=True)
    p.add_argument("--bits", type=_bits, required=True)
    p.add_argument("--schedule")
    p.add_argument("--groups", type=_positive, default=8)
    p.add_argument("--report", help="JSON report path (default: stdout)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="synthetic evaluation of compression methods")
    p.add_argument("--seq", type=_positive, default=8192)
    p.add_argument("--dim", type=_positive, default=256)
    p.add_argument("--preset", choices=sorted(harness.PRESETS))
    p.add_argument("--rho", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schedule", default="8,4,4,2,0,0,0,0")
    p.add_argument("--groups", type=_positive, default=8)
    p.add_argument("--sparsity-topk", type=_positive)
    p.add_argument("--chunk", type=_positive, default=8)
    p.add_argument("--tau", type=float, default=0.7)
    p.add_argument("--v-bits", type=int, choices=[1, 2, 3, 4, 8])
    p.add_argument("--queries", type=_positive, default=16)
    p.add_argument("--direct-bits", type=_bits)
    p.add_argument("--report", help="report path (default: stdout)")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--timing", action="store_true", help="include wall times (reports stop being reproducible)")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"svdq: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"svdq: bad input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"svdq: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

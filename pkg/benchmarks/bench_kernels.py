"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--channels 128] [--tokens 32768] [--repeat 5] [--json]

Reports best-of-N wall time per kernel and bit width, plus the speedup of the
compiled backend. Both backends are checked for identical output first.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from svdq import _backend

BITS = (1, 2, 3, 4, 8)


def bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def run(channels, tokens, repeat, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((channels, tokens))
    lo, hi = x.min(axis=1), x.max(axis=1)
    rows = []
    for b in BITS:
        times = {}
        for name in _backend.available():
            k = _backend.get(name)
            codes = k.quantize(x, lo, hi, b)
            packed = k.pack(codes, b)
            times[name] = {
                "quantize": bench(lambda: k.quantize(x, lo, hi, b), repeat),
                "dequantize": bench(lambda: k.dequantize(codes, lo, hi, b), repeat),
                "pack": bench(lambda: k.pack(codes, b), repeat),
                "unpack": bench(lambda: k.unpack(packed, b, tokens), repeat),
            }
        for kernel in ("quantize", "dequantize", "pack", "unpack"):
            row = {"kernel": kernel, "bits": b}
            for name in times:
                row[name] = times[name][kernel]
            if "compiled" in times:
                row["speedup"] = row["python"] / row["compiled"]
            rows.append(row)
    return rows


def check_agreement(channels, tokens, seed=0):
    if len(_backend.available()) < 2:
        return None
    py, cc = _backend.get("python"), _backend.get("compiled")
    x = np.random.default_rng(seed).standard_normal((channels, tokens))
    lo, hi = x.min(axis=1), x.max(axis=1)
    for b in BITS:
        codes = py.quantize(x, lo, hi, b)
        if not (np.array_equal(codes, cc.quantize(x, lo, hi, b))
                and py.dequantize(codes, lo, hi, b).tobytes() == cc.dequantize(codes, lo, hi, b).tobytes()
                and np.array_equal(py.pack(codes, b), cc.pack(codes, b))):
            return False
    return True


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--channels", type=int, default=128)
    p.add_argument("--tokens", type=int, default=32768)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", action="store_true")
    args = p.parse_args(argv)

    agree = check_agreement(min(args.channels, 16), min(args.tokens, 4099))
    if agree is False:
        print("backends disagree", file=sys.stderr)
        return 1
    rows = run(args.channels, args.tokens, args.repeat)
    if args.json:
        print(json.dumps({"channels": args.channels, "tokens": args.tokens,
                          "backends": _backend.available(), "identical_output": agree, "rows": rows}, indent=2))
        return 0
    print(f"{args.channels} channels x {args.tokens} tokens, best of {args.repeat}; "
          f"backends {_backend.available()}, identical output: {agree}")
    names = _backend.available()
    head = f"{'kernel':<11}{'bits':>4}" + "".join(f"{n + ' ms':>14}" for n in names)
    if "compiled" in names:
        head += f"{'speedup':>9}"
    print(head)
    for r in rows:
        line = f"{r['kernel']:<11}{r['bits']:>4}" + "".join(f"{r[n] * 1e3:>14.2f}" for n in names)
        if "speedup" in r:
            line += f"{r['speedup']:>8.1f}x"
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())

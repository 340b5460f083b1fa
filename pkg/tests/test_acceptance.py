"""Acceptance criteria. Each test prints one PASS/FAIL line with the measured numbers.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also repeated in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from svdq import (
    BitSchedule,
    build_index,
    compress,
    compression_ratio,
    decompress,
    dequantize_channel,
    dequantize_values,
    equivalent_bits,
    fit_decay,
    gather,
    measure_mse,
    quantize_channel,
    quantize_values_per_token,
    score_chunks,
    select_chunks,
    svdq_error_ratio,
    _backend,
)
from svdq import cli, formats, harness
from svdq.keycore import factorize, project

BITS = (1, 2, 3, 4, 8)


@pytest.fixture(scope="module")
def factored():
    t0 = time.perf_counter()
    out = []
    for seed in range(20):
        k = np.random.default_rng(seed).standard_normal((1024, 128))
        f = factorize(k)
        out.append((k, f, project(k - f.mean, f.basis)))
    return out, time.perf_counter() - t0


def test_c01_energy_identity(factored, acceptance):
    mats, t_factor = factored
    t0 = time.perf_counter()
    worst = max(np.max(np.abs(np.sum(p * p, axis=0) / f.singulars**2 - 1)) for _, f, p in mats)
    elapsed = t_factor + time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 10
    acceptance(1, "energy identity", ok, f"max rel err {worst:.2e} over 20 matrices (tol 1e-9), {elapsed:.2f}s")
    assert ok


def test_c02_frobenius_invariance(factored, acceptance):
    mats, _ = factored
    worst = 0.0
    for k, f, p in mats:
        kc = k - f.mean
        s = k.shape[0]
        var_sum = float(np.sum(kc.var(axis=0)))
        worst = max(worst, abs(var_sum / (np.sum(kc * kc) / s) - 1),
                    abs(np.sum(f.singulars**2) / s / var_sum - 1),
                    abs(np.linalg.norm(p) / np.linalg.norm(kc) - 1))
    ok = worst <= 1e-9
    acceptance(2, "Frobenius invariance", ok, f"max rel err {worst:.2e} (tol 1e-9)")
    assert ok


def test_c03_svd_quality(factored, acceptance):
    mats, _ = factored
    eye = np.eye(128)
    u_err = max(np.abs(f.left.T @ f.left - eye).max() for _, f, _ in mats)
    v_err = max(np.abs(f.basis.T @ f.basis - eye).max() for _, f, _ in mats)
    resid = max(np.linalg.norm((k - f.mean) - (f.left * f.singulars) @ f.basis.T) / np.linalg.norm(k - f.mean)
                for k, f, _ in mats)
    ok = u_err <= 1e-6 and v_err <= 1e-6 and resid <= 1e-5
    acceptance(3, "SVD quality", ok, f"|U'U-I| {u_err:.1e}, |V'V-I| {v_err:.1e}, residual {resid:.1e}")
    assert ok


def test_c04_quantizer_bounds(acceptance):
    rng = np.random.default_rng(4)
    worst, idem = 0.0, True
    saved = _backend.name
    try:
        for name in _backend.available():
            _backend.use(name)
            for trial in range(200):
                n = int(rng.integers(1, 2000))
                x = rng.standard_normal(n) * 10.0 ** rng.uniform(-3, 3) + rng.uniform(-100, 100)
                for b in BITS:
                    c, lo, hi = quantize_channel(x, b)
                    y = dequantize_channel(c, b, lo, hi)
                    limit = (hi - lo) / (2 * ((1 << b) - 1)) + 4 * np.spacing(np.max(np.abs(x)))
                    worst = max(worst, float(np.max(np.abs(y - x) / limit)))
                    idem &= np.array_equal(quantize_channel(y, b)[0], c)
    finally:
        _backend.use(saved)
    ok = worst <= 1 and idem
    acceptance(4, "quantizer bounds", ok,
               f"max err / bound {worst:.4f}, Q(D(Q(x))) == Q(x): {idem}, backends {_backend.available()}")
    assert ok


def test_c05_lemma_monte_carlo(acceptance):
    t0 = time.perf_counter()
    x = np.random.default_rng(5).random(10**6)
    c, lo, hi = quantize_channel(x, 4)
    mse = float(np.mean((dequantize_channel(c, 4, lo, hi) - x) ** 2))
    target = (hi - lo) ** 2 / (12 * 2**8)
    elapsed = time.perf_counter() - t0
    dev = mse / target - 1
    ok = abs(dev) <= 0.02 and elapsed < 5
    acceptance(5, "uniform-data quantization MSE vs r^2/(12*2^8)", ok,
               f"empirical {mse:.4e} vs {target:.4e} ({dev:+.1%}, tol 2%); "
               f"r^2/(12*15^2) = {(hi - lo) ** 2 / (12 * 225):.4e}; {elapsed:.2f}s")
    assert ok


def test_c06_closed_form_ratio(acceptance):
    e = svdq_error_ratio(4, 0.1, 1024)
    alpha = 25.6 - (8 / 7) * math.log(4)
    ok = abs(e.rms_ratio - 0.0625) <= 1e-6 and e.alpha == alpha and 2.0 ** (4 - e.top_bits) < 0.1 and e.regime
    acceptance(6, "closed-form ratio", ok, f"rms_ratio {e.rms_ratio:.9f}, alpha {e.alpha!r} (== {alpha!r})")
    assert ok


def test_c07_schedule_arithmetic(acceptance):
    cases = {
        (8, 4, 4, 4, 2, 2, 0, 0): 3.0,
        (8, 4, 4, 0, 0, 0, 0, 0): 2.0,
        (8, 4, 4, 2, 0, 0, 0, 0): 2.25,
        (8, 4, 2, 0, 0, 0, 0, 0): 1.75,
        (4, 4, 2, 0, 0, 0, 0, 0): 1.25,
    }
    got = {bits: equivalent_bits(BitSchedule(bits, 1024)) for bits in cases}
    cr = compression_ratio(1.25, 32)
    ok = got == cases and cr == pytest.approx(409.6, rel=1e-15) and round(cr) == 410
    acceptance(7, "schedule arithmetic", ok, f"b = {sorted(set(got.values()))}, CR(1.25, 32) = {cr!r} -> {round(cr)}")
    assert ok


def test_c08_svdq_beats_direct(acceptance):
    t0 = time.perf_counter()
    sched = BitSchedule((8, 4, 4, 4, 2, 2, 0, 0), 256)
    rows, ok = [], True
    for rho in (0.05, 0.1):
        for seed in range(5):
            k = harness.synth_keys(harness.SynthSpec(s=8192, d=256, rho=rho, seed=seed))
            svdq_mse, svdq_rel = measure_mse(k, decompress(compress(k, sched)))
            direct_mse, direct_rel = measure_mse(k, harness.direct_quantize(k, 3))
            pred = svdq_error_ratio(3, fit_decay(factorize(k).singulars).rho, 256).mse_ratio
            measured = svdq_mse / direct_mse
            ok &= svdq_rel < direct_rel and measured <= 3 * pred
            rows.append(measured / pred)
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 60
    acceptance(8, "SVDq beats direct 3-bit", ok,
               f"10/10 trials checked, measured/predicted MSE ratio in [{min(rows):.3f}, {max(rows):.3f}] "
               f"(limit 3), {elapsed:.1f}s")
    assert ok


def test_c09_sparsity_exactness(acceptance):
    spec = harness.SynthSpec(s=2048, d=64, seed=9)
    keys = harness.synth_keys(spec)
    values, q = harness.synth_values_queries(spec, keys, m=16)
    k_hat = decompress(compress(keys, BitSchedule((8, 4, 4, 2, 0, 0, 0, 0), 64)))
    index = build_index(keys)
    identical = True
    for kk in (keys, k_hat):
        dense = harness.exact_attention(q, kk, values)
        for i, qi in enumerate(q):
            sel = select_chunks(score_chunks(qi, index), index.chunk_count, index)
            rows, tok = gather(kk, sel, index)
            sparse = harness.exact_attention(qi[None], rows, values[tok])
            identical &= sparse.tobytes() == dense[i:i + 1].tobytes()

    hits = 0
    for seed in range(100):
        rng = np.random.default_rng([9, seed])
        k = rng.standard_normal((512, 256))
        g = int(rng.integers(0, 64))
        u = rng.standard_normal(256)
        k[8 * g:8 * g + 8] = u
        query = 8.0 * math.sqrt(256) * u / np.dot(u, u)
        mass = harness.attention_weights(query, k)[0].reshape(64, 8).sum(axis=1)
        idx = build_index(k, tau=0.0)
        top1 = select_chunks(score_chunks(query, idx), 1, idx).tolist()
        hits += int(np.argmax(mass) == g and top1 == [g])
    ok = identical and hits == 100
    acceptance(9, "sparsity exactness", ok, f"k = chunk count bit-identical: {identical}; planted top-1 {hits}/100")
    assert ok


def test_c10_value_quantization(acceptance):
    rng = np.random.default_rng(10)
    v = rng.standard_normal((1024, 128)) * rng.uniform(0.01, 100, (1024, 1))
    out = dequantize_values(quantize_values_per_token(v, 4))
    r = v.max(axis=1) - v.min(axis=1)
    limit = r / 30 + 4 * np.spacing(np.abs(v).max(axis=1))
    worst = float(np.max(np.abs(out - v).max(axis=1) / limit))
    recs = harness.run_eval(harness.SynthSpec(), BitSchedule((8, 4, 4, 2, 0, 0, 0, 0), 256), v_bits=4)
    drop = recs[2].output_cosine - recs[-1].output_cosine
    ok = worst <= 1 and drop < 0.01
    acceptance(10, "4-bit value quantization", ok,
               f"max row err / bound {worst:.4f}; cosine {recs[2].output_cosine:.5f} -> "
               f"{recs[-1].output_cosine:.5f} (drop {drop:.5f}, limit 0.01)")
    assert ok


def _fuzz(capsys, path, argv, out_path, n, seed):
    """Flip one byte at a time; every run must exit 1 and leave no output."""
    data = path.read_bytes()
    rng = np.random.default_rng(seed)
    bad = []
    for _ in range(n):
        pos = int(rng.integers(0, len(data)))
        mutated = bytearray(data)
        mutated[pos] ^= int(rng.integers(1, 256))
        path.write_bytes(bytes(mutated))
        try:
            code = cli.main(argv)
        except BaseException as exc:  # a crash is a failure, not an error in the test
            code = repr(exc)
        capsys.readouterr()
        if code != cli.EXIT_DATA or out_path.exists():
            bad.append((pos, code))
    path.write_bytes(data)
    return bad


def test_c11_formats(acceptance, capsys, tmp_path):
    rng = np.random.default_rng(11)
    k = rng.standard_normal((64, 16)) * np.exp(-0.2 * np.arange(16))
    kmat, svdq = tmp_path / "k.kmat", tmp_path / "k.svdq"
    formats.write_kmat(kmat, k)
    formats.write_svdq(svdq, compress(formats.read_kmat(kmat), BitSchedule((8, 4, 3, 2, 1, 0, 0, 0), 16)))
    k2, s2 = tmp_path / "k2.kmat", tmp_path / "k2.svdq"
    formats.write_kmat(k2, formats.read_kmat(kmat))
    formats.write_svdq(s2, formats.read_svdq(svdq))
    roundtrip = kmat.read_bytes() == k2.read_bytes() and svdq.read_bytes() == s2.read_bytes()

    out_svdq, out_kmat = tmp_path / "out.svdq", tmp_path / "out.kmat"
    bad = _fuzz(capsys, kmat, ["compress", "--input", str(kmat), "--schedule", "8,4,3,2,1,0,0,0",
                               "--output", str(out_svdq)], out_svdq, 1000, 1)
    bad += _fuzz(capsys, svdq, ["reconstruct", "--input", str(svdq), "--output", str(out_kmat)],
                 out_kmat, 1000, 2)
    ok = roundtrip and not bad
    acceptance(11, "formats", ok, f"byte-identical round trip: {roundtrip}; "
               f"fuzz 1000 kmat + 1000 svdq mutations, {len(bad)} not rejected with exit 1")
    assert ok

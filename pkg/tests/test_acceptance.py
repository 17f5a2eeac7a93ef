"""Acceptance suite: one test per criterion, run on the default synthetic configuration.

The heavy criteria (6, 7, 9) share two invocations of ``winarb protocol``
with default settings; criterion 10 times the whole module.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from oracles import bin_of, fd_gradient, mean_label, noise_rate_bruteforce, relative_error
from winarb.arbitration import mean_arbitrate, preprocess_histogram, preprocess_hybrid, preprocess_raw
from winarb.evaluation import ProtocolConfig, arbiter_template, mean_metric, run_protocol
from winarb.formats import read_results
from winarb.neuralnet import MlpConfig, init_model, loss_and_grad, softmax
from winarb.synthgen import GeneratorConfig, generate_dataset
from winarb.windowing import WindowingConfig, label_noise_rate

pytestmark = pytest.mark.slow

_START = {}
GRADIENT_TOLERANCE = {"relu": 1e-4, "elu": 1e-4, "gelu": 1e-3}


@pytest.fixture(scope="module", autouse=True)
def suite_clock():
    _START.setdefault("t", time.perf_counter())
    yield


def detail(request, text):
    request.node.user_properties.append(("detail", text))


@pytest.fixture(scope="module")
def protocol_runs(tmp_path_factory):
    """Two independent invocations of the protocol command with default settings."""
    out = tmp_path_factory.mktemp("protocol")
    paths = []
    for name in ("first.csv", "second.csv"):
        path = out / name
        proc = subprocess.run(
            [sys.executable, "-m", "winarb", "protocol", "--results", str(path)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        paths.append(path)
    return paths


@pytest.fixture(scope="module")
def default_rows(protocol_runs):
    rows = read_results(protocol_runs[0])
    assert all(r.status == "ok" for r in rows)
    return rows


@pytest.mark.criterion(1, "gradient oracle")
def test_gradient_oracle(request):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = dict.fromkeys(GRADIENT_TOLERANCE, 0.0)
    for k in range(100):
        act = ("relu", "elu", "gelu")[k % 3]
        cfg = MlpConfig(
            input_len=int(rng.integers(2, 7)),
            hidden_depth=int(rng.integers(0, 3)),
            hidden_len=int(rng.integers(5, 9)),
            activation=act,
        )
        model = init_model(cfg, rng)
        model = model.with_flat(model.flat() + rng.normal(0.0, 0.1, model.flat().size))
        n = int(rng.integers(1, 6))
        x = rng.normal(size=(n, cfg.input_len))
        y = rng.integers(0, 2, n)
        l2 = float(rng.choice([0.0, 1e-2]))
        _, grads = loss_and_grad(model, x, y, l2)
        numeric = fd_gradient(model.weights, model.biases, act, x, y, l2, step=1e-5)
        worst[act] = max(worst[act], relative_error(grads.flat(), numeric))
    elapsed = time.perf_counter() - t0
    detail(request, ", ".join(f"{a} {e:.1e}" for a, e in worst.items()) + f", {elapsed:.1f} s")
    for act, err in worst.items():
        assert err < GRADIENT_TOLERANCE[act], act
    assert elapsed < 10.0


@pytest.mark.criterion(2, "softmax and histogram normalisation")
def test_normalisation(request):
    rng = np.random.default_rng(1)
    worst_softmax = 0.0
    for _ in range(10_000):
        k = int(rng.integers(2, 8))
        logits = rng.normal(size=k) * float(rng.choice([1.0, 10.0, 300.0]))
        worst_softmax = max(worst_softmax, abs(softmax(logits).sum() - 1.0))
    worst_hist = 0.0
    for _ in range(10_000):
        s = rng.random(int(rng.integers(1, 21)))
        if rng.random() < 0.2:
            s = np.round(s, 1)  # land on bin boundaries
        h = preprocess_histogram(s).values
        assert np.all(h >= 0)
        worst_hist = max(worst_hist, abs(h.sum() - 1.0))
    detail(request, f"max deviation softmax {worst_softmax:.1e}, histogram {worst_hist:.1e}")
    assert worst_softmax <= 1e-12
    assert worst_hist <= 1e-12


def _tie_list(rng):
    """Scores whose exact mean is 0.5: pairs (a, 1 - a) on a dyadic grid, maybe plus 0.5s."""
    pairs = int(rng.integers(1, 9))
    a = rng.integers(0, 1025, size=pairs) / 1024.0
    s = np.concatenate([a, 1.0 - a, np.full(int(rng.integers(0, 3)), 0.5)])
    rng.shuffle(s)
    return s


@pytest.mark.criterion(3, "mean arbitration oracle")
def test_mean_oracle(request):
    rng = np.random.default_rng(3)
    ties = agree = 0
    for i in range(10_000):
        if i % 5 == 0:
            s = _tie_list(rng)
            ties += 1
        else:
            s = rng.random(int(rng.integers(1, 21)))
        expected = mean_label(s)
        if i % 5 == 0:
            assert expected == "abnormal"
        agree += mean_arbitrate(s) == expected
    detail(request, f"{agree}/10000 agree, {ties} exact ties")
    assert agree == 10_000


@pytest.mark.criterion(4, "preprocessing exactness")
def test_preprocessing_exact(request):
    s = np.random.default_rng(4).random(16)
    raw = preprocess_raw(s).values
    assert raw.shape == (20,)
    assert raw[:16].tobytes() == s.tobytes()
    assert raw[16:].tobytes() == np.zeros(4).tobytes()

    boundaries = np.array([i / 10 for i in range(11)])
    for b in boundaries:
        h = preprocess_histogram([b]).values
        assert int(np.argmax(h)) == bin_of(float(b)) == min(int(round(b * 10)), 9)
    np.testing.assert_array_equal(preprocess_histogram([0.05, 0.15, 0.95]).values, [1 / 3, 1 / 3] + [0] * 7 + [1 / 3])

    rng = np.random.default_rng(5)
    for _ in range(1000):
        s = rng.random(int(rng.integers(1, 21)))
        hy = preprocess_hybrid(s).values
        assert hy[:20].tobytes() == preprocess_raw(s).values.tobytes()
        assert hy[20:].tobytes() == preprocess_histogram(s).values.tobytes()
    detail(request, "16-score padding, 11 boundaries, 1000 hybrid slices")


@pytest.mark.criterion(5, "label-noise mechanism")
def test_label_noise(request):
    t0 = time.perf_counter()
    train, _ = generate_dataset(GeneratorConfig())
    headers = [h for h in train.headers() if h.label == "abnormal"]
    assert len(headers) >= 100
    r60 = label_noise_rate(headers, WindowingConfig(window_len_s=60.0))
    r600 = label_noise_rate(headers, WindowingConfig(window_len_s=600.0))
    assert r60 == pytest.approx(noise_rate_bruteforce(headers, 60.0), abs=1e-12)
    assert r600 == pytest.approx(noise_rate_bruteforce(headers, 600.0), abs=1e-12)
    elapsed = time.perf_counter() - t0
    detail(request, f"{len(headers)} recordings, rate 60 s {r60:.3f}, 600 s {r600:.3f}, {elapsed:.1f} s")
    assert r60 - r600 >= 0.10
    assert elapsed < 30.0


@pytest.mark.criterion(6, "window-length effect")
def test_window_length_effect(request, default_rows):
    acc60 = mean_metric(default_rows, "accuracy", arbitration_kind="none", window_len_s=60.0)
    acc600 = mean_metric(default_rows, "accuracy", arbitration_kind="none", window_len_s=600.0)
    n_seeds = len({r.first_stage_seed for r in default_rows if r.arbitration_kind == "none"})
    detail(request, f"window accuracy 60 s {acc60:.3f}, 600 s {acc600:.3f} over {n_seeds} seeds")
    assert n_seeds == 5
    assert acc600 > acc60


@pytest.mark.criterion(7, "arbitration effect at 60 s")
def test_arbitration_effect(request, default_rows):
    def m(kind, name):
        return mean_metric(default_rows, name, arbitration_kind=kind, window_len_s=60.0)

    hybrid = {k: m("hybrid", k) for k in ("accuracy", "sensitivity", "specificity")}
    mean = {k: m("mean", k) for k in ("accuracy", "sensitivity", "specificity")}
    none_acc = m("none", "accuracy")
    n_hybrid = sum(r.arbitration_kind == "hybrid" and r.window_len_s == 60.0 for r in default_rows)
    detail(
        request,
        f"accuracy hybrid {hybrid['accuracy']:.3f} / mean {mean['accuracy']:.3f} / none {none_acc:.3f}; "
        f"sensitivity {hybrid['sensitivity']:.3f} / {mean['sensitivity']:.3f}; "
        f"specificity {hybrid['specificity']:.3f} / {mean['specificity']:.3f}",
    )
    assert n_hybrid == 25
    assert hybrid["accuracy"] - mean["accuracy"] >= 0.02
    assert mean["accuracy"] >= none_acc
    assert hybrid["sensitivity"] - mean["sensitivity"] >= 0.03
    assert mean["specificity"] - hybrid["specificity"] <= 0.03


@pytest.mark.criterion(8, "architecture insensitivity")
def test_architecture_grid(request):
    # depth 0 has no hidden layer, so its four length cells are one network
    grid = [arbiter_template(0)] + [arbiter_template(d, h) for d in (1, 2) for h in (5, 10, 15, 20)]
    pcfg = ProtocolConfig(window_lengths_s=(60.0,), arbitration_kinds=("hybrid",), mlp_grid=tuple(grid))
    rows = run_protocol(pcfg, GeneratorConfig())
    assert len(rows) == len(grid) * 25
    means = {g.descriptor(): mean_metric(rows, "accuracy", mlp=g.descriptor()) for g in grid}
    spread = max(means.values()) - min(means.values())
    detail(request, f"accuracy {min(means.values()):.3f} to {max(means.values()):.3f}, spread {100 * spread:.2f} pp")
    assert spread < 0.03


@pytest.mark.criterion(9, "determinism of the protocol command")
def test_determinism(request, protocol_runs):
    first, second = (p.read_bytes() for p in protocol_runs)
    n_rows = len(first.splitlines()) - 1
    detail(request, f"{n_rows} rows, {len(first)} bytes")
    assert first == second


@pytest.mark.criterion(10, "acceptance runtime")
def test_runtime(request):
    elapsed = time.perf_counter() - _START["t"]
    detail(request, f"{elapsed:.0f} s")
    assert elapsed < 600.0

"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see ``conftest.verdict``); the lines are
repeated in the pytest terminal summary. The MNIST criteria need the four
canonical IDX files under ``$COREL_MNIST_DIR`` (default /root/data/mnist).
"""

import dataclasses
import itertools
import json
import math
import os
import time

import numpy as np
import pytest
from scipy.special import log_softmax

from corel import cli, cluster, losses, network
from corel.linalg import make_rng, softmax_rows
from corel.losses import LossConfig, VARIANTS
from oracles import brute_align, brute_silhouette, pair_ari

MNIST_DIR = os.environ.get("COREL_MNIST_DIR", "/root/data/mnist")
HAVE_MNIST = os.path.exists(os.path.join(MNIST_DIR, "train-images-idx3-ubyte"))
MNIST_SEEDS = (0, 1, 2)


def test_c1_cce_matches_textbook_softmax_cross_entropy(verdict):
    t0 = time.perf_counter()
    rng = make_rng(101)
    worst = 0.0
    for _ in range(100):
        n, k, h = (int(v) for v in rng.integers(1, 12, 3) + np.array([0, 1, 0]))
        H = rng.standard_normal((n, h)) * 3.0
        W = rng.standard_normal((k, h))
        y = rng.integers(0, k, n)
        textbook = -np.mean(log_softmax(H @ W.T, axis=1)[np.arange(n), y])
        # attractive-repulsive form: -h.w_y + logsumexp_k h.w_k, one sample at a time
        ar_form = np.mean([-losses.attract_term("cce", H[i], W[y[i]])
                           + losses.repulse_term("cce", H[i], W, int(y[i])) for i in range(n)])
        fused = losses.loss_cce(H, y, W).loss
        worst = max(worst, abs(ar_form - textbook), abs(fused - textbook))
    elapsed = time.perf_counter() - t0
    verdict(1, "CCE oracle equivalence", worst <= 1e-9 and elapsed < 1.0,
            f"max |AR - textbook| = {worst:.2e} (tol 1e-9), {elapsed:.2f}s (< 1s)")


def _composed_loss(net, W, centers, x, y, cfg):
    h = network.forward(net, x).h
    return losses.compute_loss(cfg, h, y, W, centers)


def test_c2_gradients_match_finite_differences(verdict):
    t0 = time.perf_counter()
    eps = 1e-5
    worst = 0.0
    checked = 0
    for seed, variant in itertools.product((0, 1, 2), VARIANTS):
        rng = make_rng(200 + seed)
        net = network.init([8, 6, 5], slope=0.1, rng=rng)
        W = rng.standard_normal((4, 5))
        centers = rng.standard_normal((4, 5))
        x = rng.standard_normal((5, 8))
        y = rng.integers(0, 4, 5)
        cfg = LossConfig(variant, lam={"center": 0.45, "cosine": 0.2}.get(variant, 0.5))
        out = _composed_loss(net, W, centers, x, y, cfg)
        trace = network.forward(net, x)
        analytic = network.backward(net, trace, out.grad_h).flat() + [out.grad_W]
        params = net.params() + [W]
        for pi, p in enumerate(params):
            for idx in np.ndindex(p.shape):
                vals = []
                for sign in (1.0, -1.0):
                    q = [a.copy() for a in params]
                    q[pi][idx] += sign * eps
                    vals.append(_composed_loss(net.with_params(q[:-1]), q[-1], centers,
                                               x, y, cfg).loss)
                num = (vals[0] - vals[1]) / (2 * eps)
                ana = analytic[pi][idx]
                if ana == 0.0 and num == 0.0:
                    continue
                worst = max(worst, abs(ana - num) / max(abs(ana), abs(num)))
                checked += 1
    elapsed = time.perf_counter() - t0
    verdict(2, "gradient correctness", worst < 1e-5 and elapsed < 10.0,
            f"{checked} entries over 4 variants x 3 seeds, max rel err {worst:.2e} "
            f"(tol 1e-5), {elapsed:.2f}s (< 10s)")


def test_c3_centroid_weights_are_stationary(verdict):
    t0 = time.perf_counter()
    rng = make_rng(301)
    k, dim = 5, 7
    y = np.concatenate([np.arange(k), rng.integers(0, k, 95)])
    h = rng.standard_normal((y.size, dim)) * 2.0 + rng.standard_normal((k, dim))[y] * 3.0
    W = np.stack([h[y == c].mean(0) for c in range(k)])
    out = losses.loss_gaussian_corel(h, y, W, lam=1.0, gamma=0.5)
    norm = float(np.max(np.abs(out.grad_W)))
    elapsed = time.perf_counter() - t0
    verdict(3, "centroid stationarity", norm < 1e-10 and elapsed < 1.0,
            f"||dL/dW||_inf = {norm:.2e} (< 1e-10), {elapsed:.3f}s (< 1s)")


def test_c4_cosine_softmax_ceiling(verdict):
    t0 = time.perf_counter()
    rng = make_rng(401)
    violations = 0
    closest = {}
    per_k = 10_000 // 3 + 1
    for k in (2, 10, 100):
        ceiling = losses.cosine_softmax_ceiling(k)
        H = rng.standard_normal((per_k, 16))
        W = rng.standard_normal((k, 16))
        S = losses.cosine_matrix(H, W)[0]
        pmax = softmax_rows(S).max(axis=1)
        violations += int(np.sum(pmax > ceiling))
        closest[k] = float(pmax.max() / ceiling)
    at_100 = losses.cosine_softmax_ceiling(100)
    value_ok = abs(at_100 - 0.0694) <= 1e-4 and math.isclose(
        at_100, math.e ** 2 / (math.e ** 2 + 99), rel_tol=1e-15)
    elapsed = time.perf_counter() - t0
    verdict(4, "cosine-softmax ceiling", violations == 0 and value_ok and elapsed < 5.0,
            f"{3 * per_k} instances, {violations} above ceiling, max p/ceiling "
            f"{ {k: round(v, 4) for k, v in closest.items()} }, ceiling(K=100) = {at_100:.6f}, "
            f"{elapsed:.2f}s (< 5s)")


# -- MNIST desk-scale runs, shared by criteria 5 and 6 -------------------------

@pytest.fixture(scope="module")
def mnist_runs():
    if not HAVE_MNIST:
        pytest.skip("MNIST IDX files not available")
    base = cli.build_config("train", None, {
        "dataset": "mnist", "mnist_root": MNIST_DIR, "train_subset": 10_000,
        "hidden": [128, 128], "batch_size": 128, "lr": 1e-4, "epochs": 20,
        "seeds": list(MNIST_SEEDS)})
    ds = cli.load_dataset(base)
    x_test, y_test = ds.part("test")
    runs = {}
    for variant in ("cce", "gaussian", "cosine"):
        cfg = cli.validate(dataclasses.replace(base, variant=variant), "train")
        t0 = time.perf_counter()
        reports = {seed: cli.run_one(cfg, ds, seed) for seed in MNIST_SEEDS}
        runs[variant] = {"lam": cfg.resolved_lambda(), "reports": reports,
                         "seconds_per_run": (time.perf_counter() - t0) / len(MNIST_SEEDS)}
    return {"runs": runs, "x_test": x_test, "y_test": y_test}


@pytest.mark.slow
def test_c5_desk_mnist_accuracy(verdict, mnist_runs):
    parts, ok = [], True
    for variant in ("cce", "gaussian"):
        run = mnist_runs["runs"][variant]
        accs = [run["reports"][s].test_accuracy for s in MNIST_SEEDS]
        mean = float(np.mean(accs))
        ok &= mean >= 0.93 and run["seconds_per_run"] < 600
        parts.append(f"{variant} (lam {run['lam']}) mean {100 * mean:.2f}% "
                     f"[{', '.join(f'{100 * a:.2f}' for a in accs)}] "
                     f"{run['seconds_per_run']:.0f}s/run")
    verdict(5, "desk MNIST accuracy >= 93%", ok, "; ".join(parts))


@pytest.mark.slow
def test_c6_clusterability_direction(verdict, mnist_runs):
    t0 = time.perf_counter()
    scores = {}
    for variant, run in mnist_runs["runs"].items():
        accs, sils = [], []
        for seed in MNIST_SEEDS:
            best = run["reports"][seed].best_model
            h = network.latents(best.net, mnist_runs["x_test"])
            km, _ = cluster.evaluate_latents(h, mnist_runs["y_test"], 10,
                                             make_rng(seed, cli.STREAM_CLUSTER))
            accs.append(km.aligned_accuracy)
            sils.append(km.silhouette)
        scores[variant] = (float(np.mean(accs)), float(np.mean(sils)))
    elapsed = time.perf_counter() - t0
    cce_acc, cce_sil = scores["cce"]
    gap_cos = scores["cosine"][0] - cce_acc
    gap_gauss = scores["gaussian"][0] - cce_acc
    gap_sil = scores["cosine"][1] - cce_sil
    ok = gap_cos >= 0.05 and gap_gauss >= 0.05 and gap_sil >= 0.2 and elapsed < 300
    detail = (", ".join(f"{v}: kmeans acc {a:.3f} sil {s:.3f}" for v, (a, s) in scores.items())
              + f"; acc gap cosine {100 * gap_cos:+.1f}pp, gaussian {100 * gap_gauss:+.1f}pp "
              f"(need >= +5pp); silhouette gap cosine {gap_sil:+.3f} (need >= +0.2); "
              f"{elapsed:.0f}s clustering (< 300s)")
    verdict(6, "clusterability direction", ok, detail)


def test_c7_clustering_oracles(verdict):
    t0 = time.perf_counter()
    rng = make_rng(701)
    problems = []
    for _ in range(200):
        k = int(rng.integers(1, 7))
        n = int(rng.integers(k, 40))
        pred, labels = rng.integers(0, k, n), rng.integers(0, k, n)
        if abs(cluster.hungarian_align(pred, labels)[1] - brute_align(pred, labels)) > 1e-12:
            problems.append("hungarian")
    ari_err = sil_err = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 11))
        pred, labels = rng.integers(0, 3, n), rng.integers(0, 3, n)
        value, degenerate = cluster.ari_with_flag(pred, labels)
        if not degenerate:
            ari_err = max(ari_err, abs(value - pair_ari(pred, labels)))
        if np.unique(pred).size >= 2:
            x = rng.standard_normal((n, 3))
            sil_err = max(sil_err, abs(cluster.silhouette(x, pred) - brute_silhouette(x, pred)))
    if ari_err > 1e-12:
        problems.append(f"ari {ari_err:.1e}")
    if sil_err > 1e-12:
        problems.append(f"silhouette {sil_err:.1e}")
    for seed in range(10):
        x = make_rng(702, seed).standard_normal((200, 4))
        km = cluster.kmeans(x, 6, make_rng(703, seed))
        if np.any(np.diff(km.inertia_history) > 1e-9 * km.inertia_history[0]):
            problems.append("kmeans monotone")
        gm = cluster.gmm_em(x, 4, make_rng(704, seed), tol=0.0, max_iter=100)
        if np.any(np.diff(gm.ll_history) < -1e-9):
            problems.append("gmm monotone")
    elapsed = time.perf_counter() - t0
    verdict(7, "clustering oracles", not problems and elapsed < 30,
            f"hungarian 200 tables; ari err {ari_err:.1e}, silhouette err {sil_err:.1e}; "
            f"kmeans/gmm monotone over 10 seeds; {elapsed:.1f}s (< 30s)"
            + (f"; problems: {sorted(set(problems))}" if problems else ""))


def _snapshot(root):
    files = {}
    for d, _, names in os.walk(root):
        for name in names:
            path = os.path.join(d, name)
            with open(path, "rb") as f:
                files[os.path.relpath(path, root)] = f.read()
    return files


def test_c8_cli_artifacts_byte_identical(verdict, tmp_path):
    small = ["--set", "hidden=[16,16]", "--set", "blobs_n_per_class=30",
             "--set", "lr=0.001", "--set", "batch_size=16", "--epochs", "3"]
    commands = {
        "train": ["train", "--seed", "0,1", "--variant", "center", "--set", "dropout=0.2"],
        "sweep-lambda": ["sweep-lambda", "--grid", "0.3,0.6", "--variant", "cosine"],
    }
    identical = {}
    for name, argv in commands.items():
        snaps = []
        for rep in ("a", "b"):
            out = tmp_path / f"{name}_{rep}"
            assert cli.main(argv + ["--out", str(out)] + small) == 0
            snaps.append(_snapshot(out))
        identical[name] = snaps[0] == snaps[1]
    ck = str(tmp_path / "train_a" / "seed_0" / "checkpoint.json")
    snaps = []
    for rep in ("a", "b"):
        out = tmp_path / f"export_{rep}"
        assert cli.main(["export-latents", "--checkpoint", ck, "--out", str(out)] + small) == 0
        snaps.append(_snapshot(out))
    identical["export-latents"] = snaps[0] == snaps[1]
    lat = str(tmp_path / "export_a" / "latents.csv")
    snaps = []
    for rep in ("a", "b"):
        out = tmp_path / f"cluster_{rep}"
        assert cli.main(["cluster", "--latents", lat, "--out", str(out)]) == 0
        snaps.append(_snapshot(out))
    identical["cluster"] = snaps[0] == snaps[1]
    verdict(8, "determinism", all(identical.values()),
            ", ".join(f"{k}: {'identical' if v else 'DIFFERENT'}" for k, v in identical.items()))


def test_c9_lambda_sweep_degrades_near_zero(verdict, tmp_path):
    t0 = time.perf_counter()
    out = tmp_path / "sweep"
    code = cli.main(["sweep-lambda", "--out", str(out), "--variant", "gaussian",
                     "--seed", "0,1,2", "--epochs", "30",
                     "--set", "blobs_k=4", "--set", "blobs_dim=16", "--set", "blobs_sigma=2.0",
                     "--set", "hidden=[64,64]", "--set", "lr=0.001", "--set", "batch_size=32"])
    elapsed = time.perf_counter() - t0
    doc = json.loads((out / "sweep.json").read_text())
    summary = doc["summary"]
    low = summary[0]
    drop = doc["best_val_accuracy"] - low["val_accuracy_mean"]
    ok = (code == 0 and len(summary) == 20 and drop >= 0.05 and elapsed < 300)
    verdict(9, "lambda sweep sanity", ok,
            f"{len(summary)} lambdas; best lam {doc['best_lam']} val {doc['best_val_accuracy']:.3f}; "
            f"lam {low['lam']} val {low['val_accuracy_mean']:.3f} (drop {drop:.3f}, "
            f"need >= 0.05); {elapsed:.0f}s (< 300s)")

"""Acceptance gate: the eight go/no-go criteria, one pass/fail line each.

Criteria 6 and 7 train real models on the synthetic benchmark
(configs/benchmark.cfg) and take several minutes; everything else is
fast. Each test emits exactly one `[criterion N] PASS/FAIL` line.
"""

import statistics
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from xmodal import tensor as T
from xmodal.checkpoint import load_checkpoint, save_checkpoint
from xmodal.config import RunConfig
from xmodal.data import generate_dataset, sample_batch
from xmodal.evaluation import cmc_curve, evaluate, mean_ap
from xmodal.gradcheck import run_full_suite
from xmodal.losses import mine_hard, pairwise_sq, quadruplet_loss, ranking_loss, triplet_loss
from xmodal.network import Model, channels_to_depth, depth_to_channels
from xmodal.tensor import Tensor
from xmodal.train import run_training

BENCHMARK_CFG = Path(__file__).resolve().parents[1] / "configs" / "benchmark.cfg"
SEEDS = [0, 1, 2, 3, 4]


def _report(criterion: int, passed: bool, detail: str) -> None:
    print(f"[criterion {criterion}] {'PASS' if passed else 'FAIL'}: {detail}")
    assert passed, f"criterion {criterion}: {detail}"


# --------------------------------------------------------------------------
# criterion 1: gradient suite
# --------------------------------------------------------------------------


def test_criterion_1_gradient_suite():
    t0 = time.time()
    report = run_full_suite(seed=0, cases_per_op=20)
    elapsed = time.time() - t0
    worst = max(r.max_rel_err for r in report.ops)
    failed = [r.op for r in report.ops if not r.passed]
    ok = report.passed and elapsed < 60.0
    _report(1, ok, f"all {len(report.ops)} checks pass (worst rel err {worst:.2e}, "
                   f"{elapsed:.1f}s < 60s), failures: {failed or 'none'}")


# --------------------------------------------------------------------------
# criterion 2: projection identities
# --------------------------------------------------------------------------


def test_criterion_2_projection_identities():
    rng = np.random.default_rng(2)
    bad = 0
    for _ in range(100):
        depth = int(rng.integers(1, 6))
        c = depth * int(rng.integers(1, 6))
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        shape = (c, h, w) if rng.random() < 0.5 else (int(rng.integers(1, 4)), c, h, w)
        x = rng.standard_normal(shape)
        y = channels_to_depth(Tensor(x), depth)
        if depth_to_channels(y).data.tobytes() != x.tobytes():
            bad += 1
        if channels_to_depth(depth_to_channels(y), depth).data.tobytes() != y.data.tobytes():
            bad += 1
    _report(2, bad == 0, f"both projection compositions bitwise-identical on "
                         f"100 random shapes ({bad} violations)")


# --------------------------------------------------------------------------
# criterion 3: CMC / mAP metric oracles
# --------------------------------------------------------------------------


def _oracle_cmc_map(distances, query_ids, gallery_ids):
    nq, ng = distances.shape
    cmc = np.zeros(ng)
    aps = []
    for q in range(nq):
        order = sorted(range(ng), key=lambda j: (distances[q, j], j))
        matches = [gallery_ids[j] == query_ids[q] for j in order]
        cmc[matches.index(True):] += 1
        hits, precisions = 0, []
        for rank, m in enumerate(matches, start=1):
            if m:
                hits += 1
                precisions.append(hits / rank)
        aps.append(sum(precisions) / len(precisions))
    return cmc / nq, float(np.mean(aps))


def test_criterion_3_metric_oracles():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(200):
        nq, ng = int(rng.integers(1, 21)), int(rng.integers(2, 31))
        gallery_ids = rng.integers(0, 6, size=ng)
        query_ids = gallery_ids[rng.integers(0, ng, size=nq)]
        d = rng.random((nq, ng))
        cmc = cmc_curve(d, query_ids, gallery_ids)
        map_ = mean_ap(d, query_ids, gallery_ids)
        want_cmc, want_map = _oracle_cmc_map(d, query_ids, gallery_ids)
        worst = max(worst, float(np.abs(cmc - want_cmc).max()), abs(map_ - want_map))
    # the two-relevant case: hits at ranks 1 and 3 -> AP = 0.833333...
    ap = mean_ap(np.array([[0.0, 0.5, 1.0]]), [7], [7, 1, 7])
    two_rel_ok = abs(ap - 5.0 / 6.0) <= 1e-9
    ok = worst <= 1e-9 and two_rel_ok
    _report(3, ok, f"200 instances up to 20x30 match brute force "
                   f"(worst |delta| {worst:.1e}); AP two-relevant case = {ap:.6f}")


# --------------------------------------------------------------------------
# criterion 4: loss algebra
# --------------------------------------------------------------------------


def _exhaustive_mining_ok(f, ids, mods):
    d = pairwise_sq(f)
    mined = mine_hard(d, ids, mods)
    n = len(ids)
    for a in range(n):
        pools = {
            "cross_pos": ([j for j in range(n) if mods[j] != mods[a] and ids[j] == ids[a]], max),
            "cross_neg": ([j for j in range(n) if mods[j] != mods[a] and ids[j] != ids[a]], min),
            "intra_pos": ([j for j in range(n)
                           if j != a and mods[j] == mods[a] and ids[j] == ids[a]], max),
            "intra_neg": ([j for j in range(n) if mods[j] == mods[a] and ids[j] != ids[a]], min),
        }
        for name, (cands, pick) in pools.items():
            got = getattr(mined, name)[a]
            if d[a, got] != pick(d[a, j] for j in cands):
                return False
    return True


def test_criterion_4_loss_algebra():
    rng = np.random.default_rng(4)
    margin = 0.3
    neg, dominance, swaps, mining_bad = 0, 0, 0, 0
    for i in range(1000):
        n_ids = int(rng.integers(2, 5))
        k = int(rng.integers(2, 4))
        ids = np.repeat(np.arange(n_ids), 2 * k)
        mods = np.tile(np.repeat([0, 1], k), n_ids)
        f = rng.standard_normal((len(ids), int(rng.integers(2, 8))))

        losses = [fn(Tensor(f), ids, mods, margin).item()
                  for fn in (ranking_loss, quadruplet_loss, triplet_loss)]
        if min(losses) < 0.0:
            neg += 1
        if losses[1] < losses[0]:  # cq >= bdtr must hold exactly
            dominance += 1
        for fn, val in zip((ranking_loss, quadruplet_loss, triplet_loss), losses):
            if abs(fn(Tensor(f), ids, 1 - mods, margin).item() - val) > 1e-12:
                swaps += 1
        if n_ids <= 4 and k <= 3 and not _exhaustive_mining_ok(
                np.ascontiguousarray(f, dtype=np.float64), ids, mods):
            mining_bad += 1
    ok = neg == 0 and dominance == 0 and swaps == 0 and mining_bad == 0
    _report(4, ok, "1000 batches: nonnegative, cq >= bdtr exact, modality-swap "
                   f"invariant, mining exhaustive-exact (violations: {neg}/"
                   f"{dominance}/{swaps}/{mining_bad})")


# --------------------------------------------------------------------------
# criterion 5: sampler contract
# --------------------------------------------------------------------------


def test_criterion_5_sampler_contract():
    cfg = RunConfig()
    dataset = generate_dataset(cfg.dataset_spec())
    index = dataset.indices_by_id_mod()
    rng = np.random.default_rng(5)
    draws = 10_000
    counts = np.zeros(cfg.num_identities)
    bad = 0
    for _ in range(draws):
        batch = sample_batch(dataset, 8, 4, rng, index)
        uniq = np.unique(batch.ids)
        if len(batch) != 64 or len(uniq) != 8:
            bad += 1
            continue
        for pid in uniq:
            for mod in (0, 1):
                if ((batch.ids == pid) & (batch.mods == mod)).sum() != 4:
                    bad += 1
        counts[uniq] += 1
    p = 8 / cfg.num_identities
    sigma = np.sqrt(draws * p * (1 - p))
    max_dev = float(np.abs(counts - draws * p).max())
    ok = bad == 0 and max_dev <= 3 * sigma
    _report(5, ok, f"10^4 batches: 64 images, 8 ids, 4 per modality each "
                   f"({bad} violations); identity frequency max |dev| "
                   f"{max_dev:.0f} <= 3 sigma = {3 * sigma:.0f}")


# --------------------------------------------------------------------------
# criteria 6 & 7: synthetic end-to-end and ablation direction
# (trained once, shared between the two tests)
# --------------------------------------------------------------------------

ABLATION_MATRIX = [
    ("appearance_only", {"use_relation": False, "use_multi_level": True,
                         "use_parts": True, "loss": "ranking"}),
    ("relation", {"use_relation": True, "use_multi_level": True,
                  "use_parts": True, "loss": "ranking"}),
    ("full", {"use_relation": True, "use_multi_level": True,
              "use_parts": True, "loss": "quadruplet"}),
]


@pytest.fixture(scope="module")
def benchmark_runs():
    cfg = RunConfig.from_file(BENCHMARK_CFG)
    dataset = generate_dataset(cfg.dataset_spec())
    results = {}
    for name, switches in ABLATION_MATRIX:
        rank1s, times = [], []
        for seed in SEEDS:
            var = replace(cfg, seed=seed, **switches)
            t0 = time.time()
            run = run_training(var, out_dir=None, dataset=dataset)
            times.append(time.time() - t0)
            ev = evaluate(run.model, dataset, mode="single_shot", redraws=3,
                          rng=np.random.default_rng(seed), direction="ir2rgb")
            rank1s.append(ev.rank(1))
        results[name] = {"rank1": rank1s, "median": statistics.median(rank1s),
                         "max_train_seconds": max(times)}
    return results


def test_criterion_6_synthetic_end_to_end(benchmark_runs):
    full = benchmark_runs["full"]
    cfg = RunConfig.from_file(BENCHMARK_CFG)
    ok = (full["median"] >= 0.90 and cfg.epochs <= 15
          and full["max_train_seconds"] < 300.0)
    _report(6, ok, f"full model median IR->RGB rank-1 {full['median']:.3f} >= 0.90 "
                   f"over {len(SEEDS)} seeds within {cfg.epochs} epochs "
                   f"(slowest run {full['max_train_seconds']:.0f}s < 300s)")


def test_criterion_7_ablation_direction(benchmark_runs):
    app = benchmark_runs["appearance_only"]["median"]
    rel = benchmark_runs["relation"]["median"]
    full = benchmark_runs["full"]["median"]
    ok = full >= rel >= app and (full - app) >= 0.03
    _report(7, ok, f"median rank-1 ordering full {full:.3f} >= relation {rel:.3f} "
                   f">= appearance-only {app:.3f}; gap {full - app:.3f} >= 0.03")


# --------------------------------------------------------------------------
# criterion 8: determinism and persistence
# --------------------------------------------------------------------------


def test_criterion_8_determinism_persistence(tmp_path):
    cfg = RunConfig.from_dict({
        "image_height": "6", "image_width": "4", "backbone_channels": "2,2,4",
        "backbone_strides": "1,1,1", "appearance_channels": "2,2", "depth": "2",
        "relation_channels": "2", "num_parts": "2", "num_identities": "4",
        "embed_dim": "3", "images_per_identity": "4", "latent_dim": "3",
        "n_ids": "2", "k_per_mod": "2", "epochs": "2", "batches_per_epoch": "3",
        "lr_specific": "0.001", "lr_shared": "0.003", "momentum": "0.0",
        "flip_prob": "0.0",
    })
    curves = [run_training(cfg, out_dir=None).loss_curve() for _ in range(2)]
    deterministic = curves[0] == curves[1]

    dataset = generate_dataset(cfg.dataset_spec())
    run = run_training(cfg, out_dir=None, dataset=dataset)
    path = tmp_path / "model.mtmf"
    save_checkpoint(run.model.params.state_arrays(), path)
    clone = Model.initialize(cfg.net_config(), 12345, cfg.switches())
    clone.params.load_arrays(load_checkpoint(path))
    blobs = []
    for model in (run.model, clone):
        res = evaluate(model, dataset, mode="single_shot", redraws=2,
                       rng=np.random.default_rng(0))
        out = tmp_path / f"eval_{len(blobs)}.json"
        res.write_json(out)
        blobs.append(out.read_text())
    round_trip = blobs[0] == blobs[1]

    ok = deterministic and round_trip
    _report(8, ok, f"same seed -> bitwise-identical loss curves ({deterministic}); "
                   f"checkpoint round-trip -> identical evaluation JSON ({round_trip})")

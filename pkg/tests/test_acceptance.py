"""Acceptance criteria, one test per criterion, each printing a PASS line.

Criterion 8's end-to-end rates were measured once on the frozen seed set
and pinned as goldens; the directional assertions are the contract, the
goldens catch regressions. Run with `pytest tests/test_acceptance.py -v -s`.
"""

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest
from click.testing import CliRunner

from sct.cli import main as cli_main
from sct.evaluation import EvalParams, evaluate
from sct.geometry import (
    Pose,
    Trajectory,
    curvature_torsion,
    finite_differences,
    geodesic_angle,
)
from sct.loop import LoopConfig, run_campaign
from sct.memory import Action, MemoryEntry, MemoryStore, SuccessImage, VisualFeature
from sct.perturbation import (
    LocalMoments,
    PerturbParams,
    moments_from_arrays,
    perturb,
    perturb_from_moments,
    rbf_weights,
    local_moments,
)
from sct.rng import uniforms, derive_seed
from sct.termination import TermParams, decide, pearson_similarity

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def report(criterion, detail):
    print(f"ACCEPTANCE {criterion}: PASS ({detail})")


def quat_z(angle):
    return np.array([math.cos(angle / 2), 0.0, 0.0, math.sin(angle / 2)])


def make_traj(positions, dt, quats=None):
    positions = np.asarray(positions, dtype=float)
    if quats is None:
        quats = [IDENTITY] * len(positions)
    return Trajectory(tuple(Pose(p, q) for p, q in zip(positions, quats)), dt)


def test_criterion_01_geometry_oracles():
    start = time.perf_counter()

    # circle of radius 2 at 200 samples: curvature within 2% of 0.5
    n, radius = 200, 2.0
    t = np.arange(n) * 0.01
    circle = make_traj(
        np.stack([radius * np.cos(t), radius * np.sin(t), np.zeros(n)], axis=1), 0.01
    )
    kappa, _ = curvature_torsion(finite_differences(circle))
    assert np.allclose(kappa[2:-2], 0.5, rtol=0.02)

    # helix torsion within 5% of c / (1 + c^2)
    c = 0.5
    t = np.arange(1500) * 0.005
    helix = make_traj(np.stack([np.cos(t), np.sin(t), c * t], axis=1), 0.005)
    _, torsion = curvature_torsion(finite_differences(helix))
    assert np.allclose(torsion[3:-3], c / (1 + c * c), rtol=0.05)

    # accumulated geodesic distance of N uniform z-rotations is (N-1) theta
    n_rot, theta = 25, 0.21
    total = sum(
        geodesic_angle(quat_z(i * theta), quat_z((i + 1) * theta)) for i in range(n_rot - 1)
    )
    assert abs(total - (n_rot - 1) * theta) < 1e-6

    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    report(1, f"geometry oracles in {elapsed:.2f}s")


def test_criterion_02_score_identities():
    start = time.perf_counter()
    # binary-exact straight line: derivatives are bitwise constant
    straight = make_traj([(i * 0.0625, 0.0, 0.0) for i in range(20)], 0.125)

    from sct.evaluation import efficiency_score, smoothness_score, stability_score

    assert efficiency_score(straight, EvalParams()) == 1.0
    assert stability_score(straight, EvalParams()) == 1.0
    assert smoothness_score(straight, EvalParams()) >= 0.999999

    # zeroing each weight forces its score to exactly 1
    rng = np.random.default_rng(0)
    pts = rng.normal(scale=0.02, size=(25, 3)).cumsum(axis=0)
    quats = [quat_z(0.1 * i + 0.05 * math.sin(i)) for i in range(25)]
    messy = make_traj(pts, 0.1, quats)
    assert efficiency_score(messy, EvalParams(curvature_weight=0.0, torsion_weight=0.0)) == 1.0
    assert stability_score(messy, EvalParams(stability_decay=0.0)) == 1.0
    assert smoothness_score(messy, EvalParams(jerk_sensitivity=0.0)) == 1.0

    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    report(2, f"score identities in {elapsed:.2f}s")


def test_criterion_03_moment_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(42)
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        actions = rng.uniform(-1.0, 1.0, size=(n, 7))
        weights = rng.uniform(0.001, 1.0, size=n)

        total = 0.0
        mean = np.zeros(7)
        for w, a in zip(weights, actions):
            total += w
            mean += w * a
        mean /= total
        cov = np.zeros((7, 7))
        for w, a in zip(weights, actions):
            d = a - mean
            cov += w * np.outer(d, d)
        cov /= total

        m = moments_from_arrays(weights, actions)
        assert np.abs(m.mean - mean).max() < 1e-12
        assert np.abs(m.covariance - cov).max() < 1e-12

    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    report(3, f"1000 banks vs double-loop oracle in {elapsed:.2f}s")


def test_criterion_04_sampler_moments():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    a = rng.normal(size=(7, 7))
    cov = 0.5 * (a @ a.T / 7.0 + (a @ a.T / 7.0).T)
    moments = LocalMoments(mean=np.zeros(7), covariance=cov, total_weight=4.0)
    params = PerturbParams(
        gravity_gain=0.0, noise_gain=0.8, temperature=1.5, isotropic_scale=0.3
    )
    a_c = Action(np.full(7, 0.1))

    n = 100_000
    draws = np.empty((n, 7))
    for i in range(n):
        draws[i] = perturb_from_moments(a_c, moments, params, rng_seed=i, clip_output=False).values

    target = (
        params.temperature * params.noise_gain * (cov + params.ridge * np.eye(7))
        + params.isotropic_scale**2 * np.eye(7)
    )
    sample_cov = np.cov(draws.T, bias=True)
    frob = np.linalg.norm(sample_cov - target) / np.linalg.norm(target)
    mean_err = np.abs(draws.mean(axis=0) - a_c.values).max()
    assert frob < 0.05
    assert mean_err < 0.01

    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    report(4, f"100k draws: cov frob err {frob:.4f}, mean err {mean_err:.4f}, {elapsed:.2f}s")


def test_criterion_05_degenerate_perturbation_identities():
    rng = np.random.default_rng(5)
    bank = [
        MemoryEntry(
            VisualFeature(rng.normal(size=16)),
            Action(rng.uniform(-1.0, 1.0, size=7)),
            "ep",
            i,
        )
        for i in range(6)
    ]
    feature = VisualFeature(rng.normal(size=16))
    a_c = Action(np.linspace(-0.9, 0.9, 7))

    pure_gravity = PerturbParams(gravity_gain=1.0, noise_gain=0.0, isotropic_scale=0.0)
    out = perturb(a_c, feature, bank, pure_gravity, rng_seed=1)
    weights = rbf_weights(feature, bank, pure_gravity.gamma)
    mean = local_moments(weights, bank).mean
    assert np.array_equal(out.values, np.clip(mean, -1.0, 1.0))

    all_off = PerturbParams(gravity_gain=0.0, noise_gain=0.0, isotropic_scale=0.0)
    out = perturb(a_c, feature, bank, all_off, rng_seed=2)
    assert np.array_equal(out.values, a_c.values)

    out = perturb(a_c, feature, [], PerturbParams(), rng_seed=3)
    assert np.array_equal(out.values, a_c.values)

    report(5, "gravity/identity/empty-bank all bitwise exact")


def test_criterion_06_termination_math():
    start = time.perf_counter()
    rng = np.random.default_rng(6)

    def oracle(x, y):
        n = len(x)
        mx = sum(x) / n
        my = sum(y) / n
        sxy = sxx = syy = 0.0
        for p, q in zip(x, y):
            sxy += (p - mx) * (q - my)
            sxx += (p - mx) ** 2
            syy += (q - my) ** 2
        r = sxy / math.sqrt(sxx * syy)
        return (max(-1.0, min(1.0, r)) + 1.0) / 2.0

    for _ in range(30):
        x = rng.uniform(0.0, 1.0, size=64 * 64)
        y = rng.uniform(0.0, 1.0, size=64 * 64)
        assert abs(pearson_similarity(x, y) - oracle(x.tolist(), y.tolist())) < 1e-12

    x = rng.uniform(0.0, 1.0, size=4096)
    for scale, offset in ((2.0, 3.0), (0.5, -1.0), (7.0, 0.0)):
        assert abs(pearson_similarity(x, scale * x + offset) - 1.0) < 1e-12

    current = rng.uniform(0.0, 1.0, size=(16, 16))
    repo = tuple(
        SuccessImage(np.clip(0.6 * current + 0.4 * rng.uniform(size=(16, 16)), 0, 1), f"e{i}")
        for i in range(4)
    )
    stops = []
    for threshold in (0.99, 0.9, 0.8, 0.6, 0.3, 0.0):
        d = decide(current, repo, TermParams(match_threshold=threshold, resolution=(16, 16)))
        stops.append(d.stop)
    first = stops.index(True) if True in stops else len(stops)
    assert all(stops[first:])

    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    report(6, f"pearson oracle + affine + monotone stop in {elapsed:.2f}s")


def _corpus_trajectory(index):
    """Seeded 20-pose trajectory with wobble amplitude graded by index."""
    u = uniforms(derive_seed("corpus", index), 8)
    amp = 0.02 * (index / 499.0) ** 2 * u[0]
    phase = 2 * math.pi * u[1:4]
    direction = np.array([math.cos(u[4] * math.pi), math.sin(u[4] * math.pi), 0.0])
    steps = []
    for t in range(20):
        wobble = amp * np.sin(2 * math.pi * t / 5.0 + phase)
        steps.append(direction * 0.02 * t + wobble)
    return make_traj(np.asarray(steps), 0.1)


def test_criterion_07_activation_monotonicity():
    start = time.perf_counter()
    composites = []
    for i in range(500):
        report_i = evaluate(_corpus_trajectory(i), EvalParams())
        composites.append(report_i.composite)
    composites = np.asarray(composites)

    grid = (0.55, 0.65, 0.75, 0.85, 0.95)
    activation = [float(np.mean(composites < threshold)) for threshold in grid]
    assert all(a <= b for a, b in zip(activation, activation[1:]))
    assert activation[0] > 0.0 and activation[-1] < 1.0  # corpus straddles the grid

    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    report(7, f"activation {['%.3f' % a for a in activation]} nondecreasing in {elapsed:.2f}s")


def _ablation_campaign(args):
    correction, termination = args
    config = LoopConfig(
        max_steps=120, correction_enabled=correction, termination_enabled=termination
    )
    campaign, _ = run_campaign(["object:biased"], config, 500, 0)
    stats = campaign.tasks[0]
    return stats.success_rate, stats.timeout_rate


def _nonterm_campaign(args):
    termination, warm_entries, warm_images = args
    config = LoopConfig(max_steps=120, correction_enabled=False, termination_enabled=termination)
    store = MemoryStore(feature_dim=config.feature_dim)
    if warm_entries:
        store._entries.extend(warm_entries)
        store._images.extend(warm_images)
    campaign, _ = run_campaign(
        ["object:non_terminating"], config, 100, 0, store=store, freeze_store=True
    )
    return campaign.tasks[0].timeout_rate


def test_criterion_08_directional_end_to_end_gains():
    start = time.perf_counter()

    warm_config = LoopConfig(max_steps=120, correction_enabled=False, termination_enabled=False)
    warm = MemoryStore(feature_dim=warm_config.feature_dim)
    run_campaign(["object:clean"], warm_config, 20, 1000, store=warm)
    warm_entries, warm_images = warm.snapshot()

    combos = [(False, False), (True, False), (False, True), (True, True)]
    with ProcessPoolExecutor(max_workers=6) as pool:
        ablation_future = pool.map(_ablation_campaign, combos)
        nonterm_future = pool.map(
            _nonterm_campaign,
            [(False, warm_entries, warm_images), (True, warm_entries, warm_images)],
        )
        rates = dict(zip(combos, ablation_future))
        timeout_off, timeout_on = nonterm_future

    off_off = rates[(False, False)][0]
    on_off = rates[(True, False)][0]
    off_on = rates[(False, True)][0]
    on_on = rates[(True, True)][0]

    assert on_on > on_off > off_off
    assert off_on > off_off
    assert on_off - off_off >= 0.05
    assert off_on - off_off >= 0.05
    assert on_on - on_off >= 0.05
    assert timeout_on <= 0.20 * timeout_off

    print(
        f"  measured: off/off={off_off:.4f} on/off={on_off:.4f} "
        f"off/on={off_on:.4f} on/on={on_on:.4f} "
        f"nonterm timeouts {timeout_off:.4f} -> {timeout_on:.4f}"
    )

    elapsed = time.perf_counter() - start
    assert elapsed < 300.0
    report(8, f"directional gains hold in {elapsed:.1f}s")


def test_criterion_09_cli_determinism(tmp_path):
    runner = CliRunner()
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        result = runner.invoke(cli_main, [
            "run", "--task", "object:biased", "--episodes", "5", "--seed", "11",
            "--max-steps", "80", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        outputs.append(
            (out / "campaign.csv").read_bytes() + (out / "summary.json").read_bytes()
        )
    assert outputs[0] == outputs[1]

    sweeps = []
    for name in ("s1", "s2"):
        out = tmp_path / name
        result = runner.invoke(cli_main, [
            "sweep", "--task", "object:biased", "--episodes", "3", "--seed", "2",
            "--max-steps", "80", "--grid", "0.55,0.75,0.95", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        sweeps.append((out / "sweep.csv").read_bytes())
    assert sweeps[0] == sweeps[1]

    report(9, "run + sweep byte-identical on reruns")


def test_criterion_10_persistence_roundtrip(tmp_path):
    start = time.perf_counter()
    rng = np.random.default_rng(10)
    path = tmp_path / "bank.jsonl"
    for case in range(1000):
        store = MemoryStore(feature_dim=6, image_shape=(3, 3), entry_capacity=20, image_capacity=5)
        for b in range(int(rng.integers(0, 4))):
            entries = [
                MemoryEntry(
                    VisualFeature(rng.normal(size=6)),
                    Action(rng.uniform(-1, 1, size=7)),
                    f"case{case}",
                    j,
                )
                for j in range(int(rng.integers(1, 4)))
            ]
            store.record_success(
                entries, SuccessImage(rng.uniform(0, 1, size=(3, 3)), f"case{case}")
            )
        store.save(path)
        loaded = MemoryStore.load(
            path, feature_dim=6, image_shape=(3, 3), entry_capacity=20, image_capacity=5
        )
        ea, ia = store.snapshot()
        eb, ib = loaded.snapshot()
        assert len(ea) == len(eb) and len(ia) == len(ib)
        for x, y in zip(ea, eb):
            assert np.array_equal(x.feature.values, y.feature.values)
            assert np.array_equal(x.action.values, y.action.values)
            assert (x.episode_id, x.step_index) == (y.episode_id, y.step_index)
        for x, y in zip(ia, ib):
            assert np.array_equal(x.pixels, y.pixels)

    from sct.errors import ParseError

    store = MemoryStore(feature_dim=6, image_shape=(3, 3))
    store.record_success(
        [MemoryEntry(VisualFeature(np.ones(6)), Action(np.zeros(7)), "e", 0)],
        SuccessImage(np.zeros((3, 3)), "e"),
    )
    store.save(path)
    lines = path.read_text().splitlines()
    lines.insert(2, "garbage {{{")
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match="line 3"):
        MemoryStore.load(path, feature_dim=6, image_shape=(3, 3))

    elapsed = time.perf_counter() - start
    report(10, f"1000 round trips + line-numbered rejection in {elapsed:.2f}s")

"""Acceptance criteria, one test per criterion.

Each test prints a `[criterion N] PASS/FAIL` line with the measured values
(visible with `pytest -s` or `-rP`). The trained-model criteria share
session fixtures so the expensive runs happen once.
"""

import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from poseforge import autograd as ag
from poseforge import geometry, losses, molio
from poseforge.config import ModelConfig, TrainConfig, toy_config
from poseforge.geometry import FitParams, distance_fit, rmsd
from poseforge.losses import confidence_report, confidence_score, ddt_true
from poseforge.model import DockingModel
from poseforge.screen import roc_auc
from poseforge import train as tr

FIXTURES = __file__.rsplit("/", 1)[0] + "/fixtures"


def report(num, passed, detail):
    marker = "PASS" if passed else "FAIL"
    print(f"\n[criterion {num}] {marker}: {detail}")
    assert passed, f"criterion {num}: {detail}"


def held_out_metrics(model, complexes, fit_budget=None):
    """Decode every complex; optionally also run the distance-fit baseline."""
    rows = []
    decode_time = 0.0
    fit_time = 0.0
    for lo in range(0, len(complexes), 8):
        chunk = complexes[lo:lo + 8]
        batch = tr.make_batch(chunk, model.config)
        with ag.no_grad():
            t0 = time.perf_counter()
            result = model.forward(batch.lig, batch.poc, decode=True)
            decode_time += time.perf_counter() - t0
        for k, c in enumerate(chunk):
            n, m = c.ligand.n_atoms, c.pocket.n_atoms
            pred_inter = result.dist.inter.data[k, :n, :m]
            rep = confidence_report(
                result.conf_logits_intra.data[k, :n, :n],
                result.conf_logits_inter.data[k, :n, :m],
                result.intra_sym.data[k, :n, :n], pred_inter,
                np.ones((n, n)) - np.eye(n), np.ones((n, m)),
            )
            row = {
                "rmsd": rmsd(result.pose.final.data[k, :n], c.gt_coords),
                "confidence": confidence_score(rep),
            }
            if fit_budget:
                t0 = time.perf_counter()
                fit = distance_fit(
                    np.maximum(result.intra_sym.data[k, :n, :n], 0.0),
                    np.maximum(pred_inter, 0.0),
                    c.ligand, c.pocket, FitParams(max_iter=fit_budget),
                )
                fit_time += time.perf_counter() - t0
                row["fit_rmsd"] = rmsd(fit.coords, c.gt_coords)
            rows.append(row)
    return rows, decode_time, fit_time


# ---------------------------------------------------------------------------
# Shared training runs
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def overfit_run():
    """Criterion 3: 8 complexes, phase 1 + phase 2, <= 2000 total steps."""
    t0 = time.time()
    data = [tr.synth_complex(1000 + k, n_min=4, n_max=12, m_min=6, m_max=20)
            for k in range(8)]
    model = DockingModel(toy_config(seed=0))
    log1 = tr.train_phase1(
        data, TrainConfig(lr=2e-3, phase1_steps=400, batch_size=8, seed=0,
                          val_fraction=0.0), model)
    tr.train_phase2(
        data, TrainConfig(lr=2e-3, phase2_steps=600, batch_size=8, seed=0,
                          val_fraction=0.0), model)
    elapsed = time.time() - t0
    p1 = [row[-1] for row in log1.rows]
    batch = tr.make_batch(data, model.config)
    with ag.no_grad():
        result = model.forward(batch.lig, batch.poc, decode=True)
    rmsds = [rmsd(result.pose.final.data[k, :c.ligand.n_atoms], c.gt_coords)
             for k, c in enumerate(data)]
    return {
        "model": model, "elapsed": elapsed,
        "p1_first": p1[0], "p1_last": p1[-1],
        "mean_rmsd": float(np.mean(rmsds)),
    }


GENERAL_TRAIN = dict(lr=2e-3, batch_size=8, seed=0)
GENERAL_CFG = dict(d=48, H=8, L_e=2, L_b=2, L_s=2, K=8, seed=0)


@pytest.fixture(scope="session")
def general_run():
    """Criteria 4 and 5: mixed-difficulty training, 128 held-out complexes."""
    moderate = [tr.synth_complex(2000 + k, n_min=4, n_max=12, m_min=10, m_max=24)
                for k in range(224)]
    hard = [tr.synth_complex(4000 + k, n_min=13, n_max=22, m_min=8, m_max=20)
            for k in range(96)]
    held = [tr.synth_complex(9000 + k, n_min=4, n_max=12, m_min=10, m_max=24)
            for k in range(128)]
    model = DockingModel(ModelConfig(**GENERAL_CFG))
    tr.train_phase1(moderate + hard,
                    TrainConfig(phase1_steps=700, **GENERAL_TRAIN), model)
    tr.train_phase2(moderate + hard,
                    TrainConfig(phase2_steps=1800, patience=20, **GENERAL_TRAIN), model)
    rows, decode_time, fit_time = held_out_metrics(model, held, fit_budget=500)
    return {"model": model, "held": held, "rows": rows,
            "decode_time": decode_time, "fit_time": fit_time}


@pytest.fixture(scope="session")
def ablation_runs():
    """Criterion 6: full vs use_gpe=False vs use_2d=False, common recipe."""
    train_data = [tr.synth_complex(2000 + k, n_min=4, n_max=12, m_min=10, m_max=24)
                  for k in range(96)]
    held = [tr.synth_complex(9000 + k, n_min=4, n_max=12, m_min=10, m_max=24)
            for k in range(32)]
    means = {}
    for tag, flags in (("full", {}), ("no_gpe", {"use_gpe": False}),
                       ("no_2d", {"use_2d": False})):
        model = DockingModel(ModelConfig(d=32, H=4, L_e=2, L_b=1, L_s=2, K=8,
                                         seed=0, **flags))
        tr.train_phase1(train_data, TrainConfig(phase1_steps=300, **GENERAL_TRAIN), model)
        tr.train_phase2(train_data, TrainConfig(phase2_steps=700, patience=20,
                                                **GENERAL_TRAIN), model)
        rows, _, _ = held_out_metrics(model, held)
        means[tag] = float(np.mean([r["rmsd"] for r in rows]))
    return means


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_integrity():
    t0 = time.time()
    # Per-operation finite-difference checks.
    rng = np.random.default_rng(0)
    op_checks = {
        "linear": (lambda x, W, b: ag.linear(x, W, b),
                   [rng.standard_normal((3, 4)), rng.standard_normal((4, 2)),
                    rng.standard_normal(2)]),
        "layer_norm": (lambda x, g, b: ag.layer_norm(x, g, b),
                       [rng.standard_normal((2, 8)), rng.standard_normal(8) + 1.5,
                        rng.standard_normal(8)]),
        "softmax": (lambda x: ag.softmax(x), [rng.standard_normal((3, 5))]),
        "matmul": (ag.matmul, [rng.standard_normal((2, 3, 4)),
                               rng.standard_normal((2, 4, 5))]),
        "smooth_l1": (ag.smooth_l1, [rng.standard_normal((4, 4)) * 2 + 0.02]),
        "mlp": (lambda x, W1, b1, W2, b2: ag.mlp(x, [(W1, b1), (W2, b2)]),
                [rng.standard_normal((3, 4)), rng.standard_normal((4, 4)),
                 rng.standard_normal(4), rng.standard_normal((4, 2)),
                 rng.standard_normal(2)]),
    }
    failures = []
    for name, (op, inputs) in op_checks.items():
        check = ag.grad_check(op, inputs, h=1e-5, tol=1e-3)
        if not check.passed:
            failures.append((name, check.max_rel_errors))

    # Full forward pass at the stated toy dimensions (N=6, M=10).
    cfg = ModelConfig(d=32, H=4, L_e=2, L_b=1, L_s=2, K=8, seed=5)
    complexes = [tr.synth_complex(500, n_min=6, n_max=6, m_min=10, m_max=10)]
    batch = tr.make_batch(complexes, cfg)
    model = DockingModel(cfg)

    def loss_value():
        result = model.forward(batch.lig, batch.poc, decode=True)
        loss, _ = tr.batch_losses(result, batch, phase=2)
        return loss

    loss = loss_value()
    model.params.zero_grads()
    ag.backward(loss)
    h = 1e-5
    rng = np.random.default_rng(1)
    names = sorted(model.params.names())
    worst = 0.0
    for name in [names[i] for i in rng.choice(len(names), size=14, replace=False)]:
        tensor = model.params[name]
        flat = tensor.data.reshape(-1)
        idx = int(rng.integers(flat.size))
        analytic = tensor.grad.reshape(-1)[idx] if tensor.grad is not None else 0.0
        orig = flat[idx]
        flat[idx] = orig + h
        up = float(loss_value().data)
        flat[idx] = orig - h
        down = float(loss_value().data)
        flat[idx] = orig
        numeric = (up - down) / (2 * h)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)
        worst = max(worst, rel)
        if rel >= 1e-3:
            failures.append((name, rel))
    elapsed = time.time() - t0
    report(1, not failures and elapsed < 60.0,
           f"ops+full-pass finite differences, worst rel {worst:.2e}, "
           f"failures {failures}, runtime {elapsed:.1f}s (< 60s)")


def test_criterion_2_formula_fidelity():
    checks = []
    checks.append(abs(losses.smooth_l1(0.5) - 0.125) < 1e-15)
    checks.append(abs(losses.smooth_l1(2.0) - 1.5) < 1e-15)
    deltas = {0.3: 100.0, 0.7: 75.0, 1.5: 50.0, 3.0: 25.0, 5.0: 0.0}
    ddt_ok = True
    for delta, expected in deltas.items():
        values, _ = ddt_true(np.array([[4.0 + delta]]), np.array([[4.0]]))
        ddt_ok &= values[0, 0] == expected
    checks.append(ddt_ok)
    parts = losses.LossBreakdown(intradist=1.0, interdist=1.0, coord=1.0, conf=1.0)
    checks.append(abs(losses.total_loss(parts) - 3.01) < 1e-12)
    parts = losses.LossBreakdown(intradist=0.3, interdist=0.2, coord=0.4, conf=7.0)
    checks.append(abs(parts.total - (0.9 + 0.01 * 7.0)) < 1e-12)
    report(2, all(checks),
           f"smooth_l1(0.5)=0.125, smooth_l1(2)=1.5, DDT table {deltas}, "
           f"conf weight 0.01 at 1e-12 ({checks})")


def test_criterion_3_overfit_reproduction(overfit_run):
    r = overfit_run
    reduction = 100.0 * (1.0 - r["p1_last"] / r["p1_first"])
    ok = (r["mean_rmsd"] < 1.0 and reduction >= 90.0 and r["elapsed"] < 600.0)
    report(3, ok,
           f"mean train RMSD {r['mean_rmsd']:.3f} A (< 1.0), phase-1 L_dist "
           f"reduction {reduction:.1f}% (>= 90%), runtime {r['elapsed']:.0f}s (< 600s)")


def test_criterion_4_confidence_discrimination(general_run):
    rows = general_run["rows"]
    rmsds = np.array([r["rmsd"] for r in rows])
    confs = np.array([r["confidence"] for r in rows])
    labels = rmsds < 2.0
    auc = roc_auc(labels, confs)
    rho = float(spearmanr(confs, rmsds).statistic)
    ok = len(rows) >= 60 and auc >= 0.65 and rho <= -0.3
    report(4, ok,
           f"{len(rows)} held-out complexes, ROC-AUC {auc:.3f} (>= 0.65), "
           f"Spearman {rho:.3f} (<= -0.3)")


def test_criterion_5_end_to_end_vs_raw(general_run):
    rows = general_run["rows"]
    struct_mean = float(np.mean([r["rmsd"] for r in rows]))
    fit_mean = float(np.mean([r["fit_rmsd"] for r in rows]))
    speedup = general_run["fit_time"] / max(general_run["decode_time"], 1e-9)
    ok = struct_mean <= fit_mean and speedup >= 10.0
    report(5, ok,
           f"structure RMSD {struct_mean:.3f} <= distance-fit {fit_mean:.3f}, "
           f"decode speedup {speedup:.0f}x (>= 10x, fit budget 500)")


def test_criterion_6_ablation_directions(ablation_runs):
    means = ablation_runs
    ok = means["no_gpe"] > means["full"] and means["no_2d"] > means["full"]
    report(6, ok,
           f"held-out mean RMSD: full {means['full']:.3f}, "
           f"no-GPE {means['no_gpe']:.3f}, no-2D {means['no_2d']:.3f} "
           f"(each strictly worse than full)")


def test_screen_enrichment_of_planted_binders(general_run):
    """Screening workflow check: 10 planted binders among 40 decoys must be
    enriched in the confidence top-20 (hypergeometric p < 0.05)."""
    from scipy.stats import hypergeom

    from poseforge.screen import screen_library

    model = general_run["model"]
    target = tr.synth_complex(8500, n_min=10, n_max=12, m_min=16, m_max=24)
    pocket = target.pocket
    binders = [tr.synth_binder(8600 + k, pocket, n_min=4, n_max=10) for k in range(10)]
    decoys = [tr.synth_complex(8700 + k, n_min=14, n_max=22, m_min=8, m_max=20)
              for k in range(40)]
    library = ([(f"binder{k}", b.ligand) for k, b in enumerate(binders)]
               + [(f"decoy{k}", d.ligand) for k, d in enumerate(decoys)])
    gt = {f"binder{k}": b.gt_coords for k, b in enumerate(binders)}
    results = screen_library(pocket, library, model, batch_size=8, gt_coords=gt)
    top20 = {r.ligand_id for r in results[:20]}
    hits = sum(1 for name in top20 if name.startswith("binder"))
    p_value = float(hypergeom.sf(hits - 1, 50, 10, 20))
    print(f"\n[screen enrichment] binders in top-20: {hits}/10, "
          f"hypergeometric p {p_value:.2e}")
    assert p_value < 0.05, f"enrichment p {p_value} (hits {hits})"


def test_criterion_7_postprocessing():
    rng = np.random.default_rng(3)
    complexes = [tr.synth_complex(600 + k, n_min=5, n_max=12, m_min=8, m_max=16)
                 for k in range(8)]
    pcf_maes, em_before, em_after = [], [], []
    pass_before, pass_after = [], []
    for c in complexes:
        # Bond-stretch noise: every atom pushed along its bond directions.
        noisy = c.gt_coords.copy()
        for i, j, _ in c.ligand.bonds:
            direction = noisy[j] - noisy[i]
            direction /= np.linalg.norm(direction)
            stretch = rng.uniform(0.15, 0.35)
            noisy[j] = noisy[j] + direction * stretch
        corrected = geometry.pcf_correct(noisy, c.ligand)
        pcf_maes.append(
            geometry.plausibility_report(corrected, c.ligand, c.pocket).bond_length_mae
        )
        before = geometry.plausibility_report(noisy, c.ligand, c.pocket)
        em = geometry.em_minimize(noisy, c.ligand, c.pocket,
                                  geometry.EMParams(max_iter=400))
        after = geometry.plausibility_report(em.coords, c.ligand, c.pocket)
        em_before.append(before.bond_length_mae)
        em_after.append(after.bond_length_mae)
        pass_before.append(before.pass_distance)
        pass_after.append(after.pass_distance)
    pcf_worst = max(pcf_maes)
    em_reduction = 100.0 * (1.0 - np.mean(em_after) / np.mean(em_before))
    rate_before = np.mean(pass_before)
    rate_after = np.mean(pass_after)
    ok = (pcf_worst < 1e-9 and em_reduction >= 50.0 and rate_after >= rate_before)
    report(7, ok,
           f"PCF bond MAE worst {pcf_worst:.2e} (< 1e-9), EM bond-MAE reduction "
           f"{em_reduction:.0f}% (>= 50%), pass_distance rate {rate_before:.2f} "
           f"-> {rate_after:.2f} (never lower)")


def test_criterion_8_permutation_and_batching():
    cfg = toy_config(seed=13)
    model = DockingModel(cfg)
    complexes = [tr.synth_complex(700 + k, n_min=5, n_max=9, m_min=7, m_max=12)
                 for k in range(3)]
    c = complexes[0]
    rng = np.random.default_rng(0)
    perm = rng.permutation(c.ligand.n_atoms)
    inv = np.argsort(perm)
    permuted_ligand = molio.MoleculeGraph(
        atom_types=c.ligand.atom_types[perm],
        coords=c.ligand.coords[perm],
        bonds=[(int(inv[i]), int(inv[j]), t) for i, j, t in c.ligand.bonds],
        elements=[c.ligand.elements[k] for k in perm],
    )
    base = model.forward_graphs([c.ligand], [c.pocket])
    permed = model.forward_graphs([permuted_ligand], [c.pocket])
    perm_err = max(
        float(np.abs(permed.pose.final.data[0] - base.pose.final.data[0, perm]).max()),
        float(np.abs(permed.intra_sym.data[0]
                     - base.intra_sym.data[0][perm][:, perm]).max()),
        float(np.abs(permed.dist.inter.data[0] - base.dist.inter.data[0][perm]).max()),
        float(np.abs(permed.lig_state.atoms.data[0]
                     - base.lig_state.atoms.data[0][perm]).max()),
    )

    joint = tr.make_batch(complexes, cfg)
    joint_result = model.forward(joint.lig, joint.poc)
    batch_err = 0.0
    for k, cx in enumerate(complexes):
        solo = tr.make_batch([cx], cfg)
        solo_result = model.forward(solo.lig, solo.poc)
        n, m = cx.ligand.n_atoms, cx.pocket.n_atoms
        batch_err = max(
            batch_err,
            float(np.abs(joint_result.pose.final.data[k, :n]
                         - solo_result.pose.final.data[0, :n]).max()),
            float(np.abs(joint_result.dist.inter.data[k, :n, :m]
                         - solo_result.dist.inter.data[0, :n, :m]).max()),
        )
    ok = perm_err <= 1e-9 and batch_err <= 1e-6
    report(8, ok,
           f"permutation error {perm_err:.2e} (<= 1e-9), "
           f"batch-size error {batch_err:.2e} (<= 1e-6)")


def test_criterion_9_parser_round_trips():
    with open(f"{FIXTURES}/molecules.sdf") as fh:
        records = list(molio.iter_sdf(fh.read()))
    round_trips = 0
    for name, block in records:
        g = molio.parse_mol_block(block)
        via_sdf = molio.parse_ligand_sdf(molio.write_mol_block(g, name))
        via_json = molio.graph_from_json(molio.graph_to_json(g))
        assptr = (
            np.array_equal(via_sdf.coords, g.coords)
            and via_sdf.bonds == g.bonds
            and list(via_sdf.atom_types) == list(g.atom_types)
            and np.array_equal(via_json.coords, g.coords)
            and via_json.bonds == g.bonds
        )
        round_trips += bool(assptr)

    import glob
    import os

    malformed = sorted(glob.glob(f"{FIXTURES}/malformed/*"))
    line_numbered = 0
    for path in malformed:
        with open(path) as fh:
            text = fh.read()
        try:
            ext = os.path.splitext(path)[1]
            if ext == ".sdf":
                molio.parse_ligand_sdf(text)
            elif ext == ".pdb":
                molio.parse_pocket_pdb(text, center=(0, 0, 0), radius=6.0)
            else:
                molio.graph_from_json(text)
        except molio.ParseError as exc:
            line_numbered += exc.line is not None
        # Any other exception type counts as a crash and fails below.
    ok = round_trips == 20 == len(records) and line_numbered == len(malformed)
    report(9, ok,
           f"{round_trips}/20 molecules round-trip via SDF and JSON; "
           f"{line_numbered}/{len(malformed)} malformed inputs gave "
           f"line-numbered errors, zero crashes")

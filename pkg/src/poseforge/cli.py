"""Command-line interface: train, screen, eval, plot."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _load_config_file(path):
    text = Path(path).read_text()
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


def cmd_train(args) -> int:
    from .config import ModelConfig, TrainConfig
    from .model import DockingModel
    from .train import make_dataset, train

    payload = _load_config_file(args.config) if args.config else {}
    mconfig = ModelConfig.from_dict(payload.get("model", {}))
    tconfig = TrainConfig.from_dict(payload.get("train", payload))
    n_complexes = payload.get("n_complexes", 32)
    data_seed = payload.get("data_seed", tconfig.seed)

    dataset = make_dataset(n_complexes, base_seed=data_seed)
    model = DockingModel(mconfig)
    log = train(dataset, tconfig, model, phase=args.phase)
    model.save(args.out)
    if args.log:
        log.write_csv(args.log)
    last = log.rows[-1] if log.rows else None
    print(f"trained {len(log.rows)} steps; weights -> {args.out}"
          + (f"; final total {last[-1]:.4f}" if last else ""))
    return 0


def cmd_screen(args) -> int:
    from .model import DockingModel
    from .molio import EmptyPocketError, parse_pocket_pdb
    from .screen import load_library, results_to_csv, screen_library

    model = DockingModel.load(args.weights)
    if args.float32:
        model.params = model.params.astype(np.float32)
    center = tuple(float(v) for v in args.center.split(",")) if args.center else None
    try:
        pocket_text = Path(args.pocket).read_text()
        pocket = parse_pocket_pdb(pocket_text, center=center, radius=args.radius)
    except (OSError, EmptyPocketError) as exc:
        print(f"error: cannot read pocket: {exc}", file=sys.stderr)
        return 2

    ligands = []
    for lib in args.library:
        ligands.extend(load_library(lib))
    if not any(not isinstance(g, Exception) for _, g in ligands):
        print("error: no parsable ligand in the library", file=sys.stderr)
        return 2

    if args.seed is not None:
        np.random.seed(args.seed)
    results = screen_library(
        pocket, ligands, model,
        batch_size=args.batch_size,
        postprocess=args.postprocess,
        poses_dir=args.poses_dir,
        threads=args.threads,
    )
    if args.top_k:
        results = results[: args.top_k]
    results_to_csv(results, args.out)
    ok = sum(1 for r in results if not r.failed)
    print(f"screened {len(results)} ligands ({ok} ok) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    from . import geometry
    from .molio import graph_from_json, parse_ligand_sdf
    from .screen import (
        SUCCESS_RMSD,
        confidence_rmsd_regression,
        roc_auc,
        write_report_json,
    )

    def read_coords(path: Path):
        if path.suffix == ".json":
            text = path.read_text()
            payload = json.loads(text)
            if "coords" in payload:
                return np.asarray(payload["coords"]), payload.get("confidence")
            return graph_from_json(text).coords, None
        return parse_ligand_sdf(path.read_text()).coords, None

    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    rows = []
    seen = set()
    # Prefer the JSON pose record (it carries the confidence) over the SDF
    # when both exist for a stem.
    for pred_path in sorted(pred_dir.glob("*"), key=lambda p: (p.stem, p.suffix != ".json")):
        if pred_path.suffix not in (".json", ".sdf") or pred_path.stem in seen:
            continue
        stem = pred_path.stem
        gt_path = next((p for p in (gt_dir / f"{stem}.json", gt_dir / f"{stem}.sdf")
                        if p.exists()), None)
        if gt_path is None:
            continue
        seen.add(stem)
        pred, conf = read_coords(pred_path)
        gt, _ = read_coords(gt_path)
        rows.append((stem, geometry.rmsd(pred, gt), conf))

    if not rows:
        print("error: no matched prediction/ground-truth pairs", file=sys.stderr)
        return 2
    rmsds = [r[1] for r in rows]
    confs = [r[2] for r in rows if r[2] is not None]
    labels = [v < SUCCESS_RMSD for v in rmsds]
    report = {
        "n_pairs": len(rows),
        "success_rate": 100.0 * float(np.mean(labels)),
        "mean_rmsd": float(np.mean(rmsds)),
        "per_ligand": [{"ligand_id": s, "rmsd": v} for s, v, _ in rows],
    }
    if len(confs) == len(rmsds) and any(labels) and not all(labels):
        report["auc"] = roc_auc(labels, confs)
    if len(confs) == len(rmsds) and len(confs) >= 3:
        reg = confidence_rmsd_regression(confs, rmsds)
        report["regression"] = {"slope": reg.slope, "intercept": reg.intercept,
                                "pearson": reg.pearson, "spearman": reg.spearman}
    write_report_json(report, args.out)
    print(f"evaluated {len(rows)} pairs -> {args.out}")
    return 0


def cmd_plot(args) -> int:
    import csv as csv_mod

    from .screen import plot_cumulative_rmsd

    curves = {}
    for path in args.results:
        with open(path) as fh:
            reader = csv_mod.DictReader(fh)
            rmsds = [float(row["rmsd"]) for row in reader if row.get("rmsd")]
        curves[Path(path).stem] = rmsds
    if not curves:
        print("error: no rmsd columns found", file=sys.stderr)
        return 2
    plot_cumulative_rmsd(curves, args.out)
    print(f"plotted {len(curves)} curve(s) -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poseforge",
        description="Transformer docking: train, screen, evaluate, plot.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="two-phase training on synthetic complexes")
    p_train.add_argument("--phase", choices=("1", "2", "both"), default="both")
    p_train.add_argument("--config", help="TOML or JSON config file")
    p_train.add_argument("--out", required=True, help="output weights (.pfw)")
    p_train.add_argument("--log", help="loss-curve CSV path")
    p_train.set_defaults(func=cmd_train)

    p_screen = sub.add_parser("screen", help="rank a ligand library against a pocket")
    p_screen.add_argument("--pocket", required=True, help="pocket PDB file")
    p_screen.add_argument("--center", help="x,y,z binding-site center (Angstrom)")
    p_screen.add_argument("--radius", type=float, default=6.0)
    p_screen.add_argument("--library", required=True, nargs="+", help="ligand SDF file(s)")
    p_screen.add_argument("--weights", required=True)
    p_screen.add_argument("--out", required=True, help="ranked CSV path")
    p_screen.add_argument("--poses-dir", help="directory for per-ligand SDF/JSON poses")
    p_screen.add_argument("--postprocess", choices=("none", "em", "pcf"), default="none")
    p_screen.add_argument("--top-k", type=int)
    p_screen.add_argument("--batch-size", type=int, default=8)
    p_screen.add_argument("--seed", type=int)
    p_screen.add_argument("--threads", type=int, default=1)
    p_screen.add_argument("--float32", action="store_true",
                          help="cast weights to 32-bit for inference")
    p_screen.set_defaults(func=cmd_screen)

    p_eval = sub.add_parser("eval", help="score predicted poses against ground truth")
    p_eval.add_argument("--pred-dir", required=True)
    p_eval.add_argument("--gt-dir", required=True)
    p_eval.add_argument("--out", required=True, help="report JSON path")
    p_eval.set_defaults(func=cmd_eval)

    p_plot = sub.add_parser("plot", help="cumulative-RMSD curves to SVG")
    p_plot.add_argument("--results", required=True, nargs="+", help="ranked CSV file(s)")
    p_plot.add_argument("--out", required=True, help="SVG path")
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

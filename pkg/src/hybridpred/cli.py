"""Command-line entry point.

Every command reads a JSON config (defaults when absent), writes its
outputs under ``out_dir`` and records a manifest holding the config, the
seed and content hashes of its inputs and outputs. Failures exit with
code 2 and print ``CATEGORY: message`` on one line to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .config import RunConfig, load_config
from .cvae import CVAE, sample_joint
from .exceptions import DataNotFound, ModelNotFound, PredictorError
from .geometry import to_cartesian
from .irl import CostWeights
from .metrics import (
    collision_rate,
    constant_velocity_prediction,
    rmse_per_horizon,
    sweep_ratio,
)
from .pipeline import collides_with_plan, predict_step
from .planner import constant_decel_feasible
from .scenario import corner_case_suite, export_csv, import_csv
from .svg import line_plot, trajectory_panels
from .workflow import fit_cost, fit_cvae, make_dataset, planted_demonstrations

log = logging.getLogger("hybridpred")

__all__ = ["main", "build_parser", "git_blob_hash"]


def git_blob_hash(path):
    """SHA-1 of the file content framed as a git blob object."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _fmt(x):
    return f"{float(x):.6f}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


class _Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, command, cfg):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs = {}
        self.outputs = {}

    def _name(self, path):
        path = Path(path)
        try:
            return str(path.resolve().relative_to(self.out.resolve()))
        except ValueError:
            return str(path)

    def used(self, *paths):
        for p in paths:
            if Path(p).exists():
                self.inputs[self._name(p)] = git_blob_hash(p)

    def wrote(self, *paths):
        for p in paths:
            self.outputs[self._name(p)] = git_blob_hash(p)

    def manifest(self):
        combined = hashlib.sha1(
            "".join(f"{k} {v}\n" for k, v in sorted(self.inputs.items())).encode()
        ).hexdigest()
        doc = {
            "command": self.command,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "inputs": dict(sorted(self.inputs.items())),
            "input_hash": combined,
            "outputs": dict(sorted(self.outputs.items())),
        }
        path = self.out / f"manifest_{self.command.replace('-', '_')}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


# data and models -----------------------------------------------------------

def _data_path(cfg):
    return Path(cfg.data_file) if cfg.data_file else Path(cfg.out_dir) / "data" / "scenes.csv"


def _index_path(data_path):
    return data_path.with_name(data_path.stem + "_index.csv")


def _write_dataset(cfg, run):
    path = _data_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    ds = make_dataset(cfg)
    export_csv(ds.scenes, path)
    rows = [(s.scene_id, "train", s.mode) for s in ds.train] + [(s.scene_id, "test", s.mode) for s in ds.test]
    _write_csv(_index_path(path), ["scene_id", "split", "mode"], rows)
    paths_csv = path.with_name(path.stem + "_paths.csv")
    run.wrote(path, _index_path(path), paths_csv, paths_csv.with_suffix(".json"))
    return path


def _load_dataset(cfg, run):
    """``(train, test)`` scene lists, generating the default dataset if absent."""
    path = _data_path(cfg)
    if not path.exists():
        if cfg.data_file:
            raise DataNotFound(f"data file not found: {path}")
        log.info("no dataset at %s; generating it", path)
        _write_dataset(cfg, run)
    index = _index_path(path)
    run.used(path, index)
    scenes = import_csv(path)
    split, modes = {}, {}
    if index.exists():
        with open(index, newline="") as fh:
            for row in csv.DictReader(fh):
                split[row["scene_id"]] = row["split"]
                modes[row["scene_id"]] = row["mode"]
    scenes = [replace(s, mode=modes.get(s.scene_id, s.mode)) for s in scenes]
    train = [s for s in scenes if split.get(s.scene_id, "train") == "train"]
    test = [s for s in scenes if split.get(s.scene_id) == "test"]
    return train, test


def _model_path(cfg, attr, default):
    value = getattr(cfg, attr)
    return (Path(value) if value else Path(cfg.out_dir) / default), bool(value)


def _train_cvae(cfg, run):
    train, test = _load_dataset(cfg, run)
    model = fit_cvae(cfg, train)
    path, _ = _model_path(cfg, "cvae_file", "cvae.json")
    path.write_text(model.to_json())
    loss = Path(cfg.out_dir) / "cvae_loss.csv"
    _write_csv(loss, ["epoch", "loss"], [(i + 1, _fmt(v)) for i, v in enumerate(model.loss_curve_)])
    run.wrote(path, loss)
    if test:
        _rmse_report(cfg, run, model, test)
    return model


def _rmse_report(cfg, run, model, test):
    rng = np.random.default_rng(cfg.seed)
    learned, baseline, truth = [], [], []
    for scene in test:
        learned.append([p for p, _ in sample_joint(model, scene, cfg.k, rng)])
        baseline.append(constant_velocity_prediction(scene, "pred", len(scene.pred_future)))
        truth.append(scene.pred_future)
    a = rmse_per_horizon(learned, truth, cfg.rmse_aggregate)
    b = rmse_per_horizon(baseline, truth)
    rows = [
        (_fmt(h), _fmt(am), _fmt(asd), _fmt(bm), _fmt(bsd))
        for h, am, asd, bm, bsd in zip(a.horizons, a.mean, a.std, b.mean, b.std)
    ]
    out = Path(cfg.out_dir) / "rmse.csv"
    _write_csv(out, ["horizon_s", "cvae_rmse", "cvae_std", "cv_rmse", "cv_std"], rows)
    svg = Path(cfg.out_dir) / "rmse.svg"
    svg.write_text(line_plot(
        [
            {"x": a.horizons, "y": a.mean, "err": a.std, "label": f"CVAE ({cfg.rmse_aggregate} of {cfg.k})"},
            {"x": b.horizons, "y": b.mean, "err": b.std, "label": "constant velocity"},
        ],
        "horizon (s)", "error (m)", "Predicted-vehicle error per horizon",
    ))
    run.wrote(out, svg)


def _train_irl(cfg, run):
    train, _ = _load_dataset(cfg, run)
    est = fit_cost(cfg, planted_demonstrations(cfg, train))
    path, _ = _model_path(cfg, "weights_file", "weights.json")
    path.write_text(est.weights_.to_json())
    curve = Path(cfg.out_dir) / "irl_likelihood.csv"
    _write_csv(curve, ["iteration", "log_likelihood"], [(i, _fmt(v)) for i, v in enumerate(est.likelihood_curve_)])
    run.wrote(path, curve)
    return est.weights_


def _models(cfg, run):
    """Load the CVAE and cost weights, training absent default models."""
    cpath, explicit = _model_path(cfg, "cvae_file", "cvae.json")
    if cpath.exists():
        run.used(cpath)
        model = CVAE.from_json(cpath.read_text())
    elif explicit:
        raise ModelNotFound(f"CVAE model not found: {cpath}")
    else:
        log.info("no CVAE at %s; training it", cpath)
        model = _train_cvae(cfg, run)
    wpath, explicit = _model_path(cfg, "weights_file", "weights.json")
    if wpath.exists():
        run.used(wpath)
        weights = CostWeights.from_json(wpath.read_text())
    elif explicit:
        raise ModelNotFound(f"cost weights not found: {wpath}")
    else:
        log.info("no cost weights at %s; learning them", wpath)
        weights = _train_irl(cfg, run)
    return model, weights


def _scenes(cfg, run):
    if cfg.scene_file:
        path = Path(cfg.scene_file)
        if not path.exists():
            raise DataNotFound(f"scene file not found: {path}")
        run.used(path)
        return import_csv(path)
    return corner_case_suite()


def _pick_scene(cfg, run):
    scenes = _scenes(cfg, run)
    if cfg.scene_file:
        return scenes[0]
    by_id = {s.scene_id: s for s in scenes}
    if cfg.sweep_scene not in by_id:
        raise DataNotFound(f"unknown corner scene {cfg.sweep_scene!r}")
    return by_id[cfg.sweep_scene]


def _hybrid_ratio(cfg):
    return cfg.force_ratio if cfg.force_ratio is not None else cfg.initial_ratio


# commands ------------------------------------------------------------------

def cmd_gen_data(cfg):
    run = _Run("gen-data", cfg)
    path = _write_dataset(cfg, run)
    print(f"wrote {cfg.n_scenes} scenes to {path}")
    return run


def cmd_train_cvae(cfg):
    run = _Run("train-cvae", cfg)
    model = _train_cvae(cfg, run)
    print(f"CVAE loss {model.loss_curve_[0]:.4f} -> {model.loss_curve_[-1]:.4f}")
    return run


def cmd_train_irl(cfg):
    run = _Run("train-irl", cfg)
    w = _train_irl(cfg, run)
    print("weights " + " ".join(f"{x:.4f}" for x in w.theta) + f" scale {w.scale:.4f}")
    return run


def cmd_predict(cfg):
    run = _Run("predict", cfg)
    model, weights = _models(cfg, run)
    pc = cfg.prediction
    rows, report = [], []
    r_hybrid = _hybrid_ratio(cfg)
    for i, scene in enumerate(_scenes(cfg, run)):
        learned, _, dl = predict_step(scene, model, weights, config=pc, rng=np.random.default_rng([cfg.seed, i]), force_ratio=0.0)
        hybrid, _, dh = predict_step(scene, model, weights, config=pc, rng=np.random.default_rng([cfg.seed, i]), force_ratio=r_hybrid)
        ego_xy = to_cartesian(dh.ego_plan.states, scene.ego_path)
        for label, preds in (("learned", learned), ("hybrid", hybrid)):
            for j, p in enumerate(preds):
                xy = to_cartesian(p.states, scene.pred_path)
                for t, (x, y) in enumerate(xy, start=1):
                    rows.append((scene.scene_id, label, j, _fmt(t * scene.dt), _fmt(x), _fmt(y)))
        report.append((scene.scene_id, _fmt(r_hybrid), _fmt(dl.collision_rate), _fmt(dh.collision_rate), dh.n_satisfied, int(dh.fallback)))

        def panel(title, trajs):
            if not trajs:
                return (title, [], [])
            flags = collides_with_plan(trajs, scene, dh.ego_plan)
            return (title, [to_cartesian(t.states, scene.pred_path) for t in trajs], flags)

        svg = Path(cfg.out_dir) / f"predict_{scene.scene_id}.svg"
        svg.write_text(trajectory_panels(
            [
                panel("raw samples", [p.pred for p in dh.raw]),
                panel("satisfied", [p.pred for p in dh.satisfied]),
                panel("learned only", learned),
                panel(f"hybrid r={r_hybrid:g}", hybrid),
            ],
            scene.paths.values(),
            ego_xy,
        ))
        run.wrote(svg)
    pred_csv = Path(cfg.out_dir) / "predictions.csv"
    _write_csv(pred_csv, ["scene_id", "method", "sample", "t", "x", "y"], rows)
    rep_csv = Path(cfg.out_dir) / "predict_report.csv"
    _write_csv(rep_csv, ["scene_id", "r", "learned_collision_rate", "hybrid_collision_rate", "n_satisfied", "fallback"], report)
    run.wrote(pred_csv, rep_csv)
    for row in report:
        print(f"{row[0]}: learned {row[2]} hybrid {row[3]} (r={row[1]})")
    return run


def cmd_sweep(cfg):
    run = _Run("sweep", cfg)
    model, weights = _models(cfg, run)
    scene = _pick_scene(cfg, run)
    res = sweep_ratio(scene, cfg.sweep_ratios, cfg.sweep_repeats, model, weights, cfg.seed, cfg.prediction)
    out = Path(cfg.out_dir) / "sweep.csv"
    res.to_csv(out)
    svg = Path(cfg.out_dir) / "sweep.svg"
    svg.write_text(line_plot(
        [{"x": res.ratios, "y": res.mean, "err": res.std, "label": scene.scene_id}],
        "weight ratio r", "collision rate", "Weight ratio versus collision rate",
    ))
    run.wrote(out, svg)
    rho = spearmanr(res.ratios, res.mean)[0] if np.ptp(res.mean) > 0 else float("nan")
    for r, m, s in res.rows():
        print(f"r={r:g}: {m:.3f} +/- {s:.3f}")
    print(f"spearman {rho:.3f}")
    return run


def cmd_corner_cases(cfg):
    run = _Run("corner-cases", cfg)
    model, weights = _models(cfg, run)
    pc = cfg.prediction
    r_hybrid = _hybrid_ratio(cfg)
    rows = []
    for scene in corner_case_suite():
        rates = {0.0: [], r_hybrid: []}
        for j in range(cfg.corner_repeats):
            for r in rates:
                _, _, diag = predict_step(scene, model, weights, config=pc, rng=np.random.default_rng([cfg.seed, j]), force_ratio=r)
                rates[r].append(diag.collision_rate)
        gt = collision_rate([scene.pred_future], scene.ego_future, scene.pred_path, scene.ego_path)
        rows.append((
            scene.scene_id,
            _fmt(scene.velocity("ego")[0]),
            int(constant_decel_feasible(scene)),
            _fmt(gt),
            _fmt(np.mean(rates[0.0])),
            _fmt(np.mean(rates[r_hybrid])),
        ))
    out = Path(cfg.out_dir) / "corner_cases.csv"
    _write_csv(out, ["scene_id", "ego_speed", "feasible", "ground_truth_collides", "learned_collision_rate", "hybrid_collision_rate"], rows)
    run.wrote(out)
    for row in rows:
        print(f"{row[0]}: feasible={row[2]} learned {row[4]} hybrid {row[5]}")
    return run


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-cvae": cmd_train_cvae,
    "train-irl": cmd_train_irl,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
    "corner-cases": cmd_corner_cases,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="hybridpred", description="Hybrid learned and planned trajectory prediction.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--force-ratio", type=float, help="fix the weight ratio r")
        p.add_argument("--pure-learned", action="store_true", help="learned-only prediction (r = 0)")
    return parser


def _configure_logging():
    level = os.environ.get("PREDICTOR_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        force = 0.0 if args.pure_learned else args.force_ratio
        cfg = cfg.updated(seed=args.seed, out_dir=args.out, force_ratio=force)
        cfg = RunConfig.from_dict(cfg.to_dict())
        run = COMMANDS[args.command](cfg)
        run.manifest()
    except PredictorError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"INVALID_INPUT: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

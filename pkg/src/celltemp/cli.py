"""Command-line interface.

Every command writes into its own run directory: the resolved config, the
outputs and a ``manifest.json`` with input and output hashes.
"""
from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import __version__
from . import config as C
from . import pipeline as P
from .adapt import adapt_with_labels, domain_adapt, labeled_cutoff, pca_project, pseudo_labels, select_reliable
from .datagen import NormStats, ProfileSpec, ScenarioSpec, simulate_scenario, windowize
from .errors import AdaptationStarvedError, CellTempError, ConfigError, DivergenceError, SimulationError
from .evalkit import encode, perturbation_study, sensitivity_study
from .io import RunManifest, hash_tree, sha256_file, ingest_csv, write_series_csv, write_table
from .net import head_forward, load_checkpoint, save_checkpoint

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_SIMULATION = 4
EXIT_DIVERGENCE = 5
EXIT_STARVED = 6


class Run:
    """Bookkeeping for one command invocation."""

    def __init__(self, args, cfg):
        self.args = args
        self.cfg = cfg
        self.dir = args.out
        os.makedirs(self.dir, exist_ok=True)
        self.inputs = [args.config] if args.config else []
        self.outputs = []
        self.volatile = []
        self.params = {}
        self.start = time.perf_counter()

    def path(self, name):
        return os.path.join(self.dir, name)

    def read(self, path):
        self.inputs.append(path)
        return path

    def wrote(self, *paths):
        self.outputs.extend(paths)

    def finish(self, command):
        cfg_path = self.path("config.yaml")
        C.dump_config(self.cfg, cfg_path)
        self.wrote(cfg_path)
        seeds = {
            "net": self.cfg["net"]["seed"],
            "train": self.cfg["train"]["seed"],
            "adapt": self.cfg["adapt"]["seed"],
            "noise": self.cfg["simulation"]["noise"]["seed"],
            "profiles": sorted({p["seed"] for k in ("source", "evaluation") for p in self.cfg["profiles"][k]}),
        }
        manifest = RunManifest(
            command=command,
            config_hash=C.config_hash(self.cfg),
            seeds=seeds,
            version=__version__,
            inputs={os.path.abspath(p): sha256_file(p) for p in sorted(set(self.inputs))},
            outputs=hash_tree(self.dir, self.outputs),
            parameters=self.params,
            runtime_s=time.perf_counter() - self.start,
        )
        manifest.parameters["volatile_outputs"] = sorted(os.path.relpath(p, self.dir) for p in self.volatile)
        manifest.write(self.dir)
        return manifest


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _eps_pairs(items):
    out = {}
    for item in items or []:
        name, _, value = item.partition("=")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"--eps expects name=value, got {item!r}") from None
    return out


def _profile(args, cfg):
    if args.profile == "scaled_replay" and not args.replay:
        raise ConfigError("scaled_replay needs --replay")
    return ProfileSpec(
        args.profile,
        args.seed,
        float(cfg["simulation"]["max_current"]),
        float(args.duration if args.duration is not None else cfg["profiles"]["duration"]),
        args.replay,
    )


def cmd_simulate(run: Run):
    a, cfg = run.args, run.cfg
    if a.replay:
        run.read(a.replay)
    spec = ScenarioSpec(_profile(a, cfg), a.coolant, _eps_pairs(a.eps), a.backend)
    series = simulate_scenario(spec, C.cell_params(cfg), C.sim_settings(cfg))
    write_series_csv(series, run.path("series.csv"))
    run.wrote(run.path("series.csv"))
    run.params["scenario"] = spec.scenario_id


def _load_source(run: Run):
    data, files = P.load_dataset(run.args.dataset)
    for f in files:
        run.read(f)
    return data


def _load_net(run: Run, data=None):
    params, norm = load_checkpoint(run.read(run.args.checkpoint))
    if norm is None:
        raise ConfigError(f"{run.args.checkpoint}: checkpoint carries no NormStats")
    norm = NormStats.from_dict(norm)
    if data is not None and data.norm.content_hash != params.norm_hash:
        raise ConfigError(f"{run.args.checkpoint}: NormStats hash does not match dataset {run.args.dataset}")
    return params, norm


def cmd_generate(run: Run):
    data = P.generate(run.cfg, run.args.workers)
    out = run.path("dataset")
    os.makedirs(out, exist_ok=True)
    run.wrote(*P.save_dataset(data, out))
    run.params["scenarios"] = len(data.series)


def cmd_pretrain(run: Run):
    data = _load_source(run)
    params, hist = P.pretrain(run.cfg, data, log=_log)
    digest = save_checkpoint(run.path("checkpoint.npz"), params, data.norm)
    write_table(run.path("history.csv"), ("epoch", "train_mse", "val_mse"), zip(hist["epoch"], hist["train_mse"], hist["val_mse"]))
    run.wrote(run.path("checkpoint.npz"), run.path("history.csv"))
    run.params["checkpoint_sha256"] = digest


def _target(run: Run):
    return ingest_csv(run.read(run.args.target))


def cmd_adapt(run: Run):
    a, cfg = run.args, run.cfg
    data = _load_source(run)
    params, norm = _load_net(run, data)
    acfg = C.adapt_config(cfg)
    fraction = acfg.labeled_fraction if a.labeled_fraction is None else a.labeled_fraction
    ctx = P.study_context(cfg, params, data)
    target = _target(run)
    if fraction > 0:
        if not target.labeled:
            raise ConfigError(f"{a.target}: labelled adaptation needs core_temp_c")
        adapted = adapt_with_labels(params, target, fraction, acfg, ctx.source_windows, norm, ctx.adapt_stride)
        hist = None
        run.params["labeled_steps"] = labeled_cutoff(len(target), fraction)
    else:
        meas = target.measurements() if target.labeled else target
        pseudo = pseudo_labels(meas, C.cell_params(cfg), anchor_surface=acfg.anchor_surface)
        pseudo.mask = select_reliable(pseudo, meas.t_surf, acfg.tau_reliable)
        windows = windowize(meas, ctx.window, ctx.adapt_stride, norm)
        adapted, hist = domain_adapt(params, ctx.source_windows, windows, pseudo, acfg)
        write_table(
            run.path("pseudo_labels.csv"),
            ("time_s", "pseudo_core_c", "model_surf_c", "reliable"),
            zip(meas.t, pseudo.t_core, pseudo.t_surf_model, pseudo.mask.astype(int)),
        )
        write_table(run.path("alignment.csv"), ("epoch", "mse", "mmd", "coral"), zip(hist["epoch"], hist["mse"], hist["mmd"], hist["coral"]))
        run.wrote(run.path("pseudo_labels.csv"), run.path("alignment.csv"))
        run.params["reliable_fraction"] = float(pseudo.mask.mean())
        run.params["bandwidths"] = hist["bandwidths"]
    digest = save_checkpoint(run.path("adapted.npz"), adapted, norm)
    run.params["checkpoint_sha256"] = digest
    run.wrote(run.path("adapted.npz"))
    _write_pca(run, ctx, params, adapted, target, norm)


def _write_pca(run, ctx, before, after, target, norm):
    """fc1 features of both domains on shared principal axes, per model."""
    meas = target.measurements() if target.labeled else target
    tgt_windows = windowize(meas, ctx.window, ctx.adapt_stride, norm)
    n = min(len(ctx.source_windows), 256)
    src_idx = np.linspace(0, len(ctx.source_windows) - 1, n).astype(int)
    src = encode(ctx.source_windows, before, src_idx)
    tgt = encode(tgt_windows, before)
    rows = []
    for stage, p in (("before", before), ("after", after)):
        _, fs, _ = head_forward(src.hidden, src.last, p)
        _, ft, _ = head_forward(tgt.hidden, tgt.last, p)
        proj, ratios, _, _ = pca_project(np.vstack([fs, ft]), 3)
        proj = np.pad(proj, ((0, 0), (0, 3 - proj.shape[1])))
        for i, row in enumerate(proj):
            rows.append((stage, "source" if i < n else "target", *row))
        run.params[f"pca_ratios_{stage}"] = [float(r) for r in ratios]
    write_table(run.path("pca.csv"), ("stage", "domain", "pc1", "pc2", "pc3"), rows)
    run.wrote(run.path("pca.csv"))


def cmd_evaluate(run: Run):
    a, cfg = run.args, run.cfg
    params, norm = _load_net(run)
    target = _target(run)
    if not target.labeled:
        raise ConfigError(f"{a.target}: evaluate needs core_temp_c; unlabelled data can only be adapted on")
    sm = cfg["smoothing"]
    smoothing = (int(sm["window"]), float(sm["sigma"])) if a.smooth else None
    ends, pred = P.estimate(params, norm, target, int(cfg["windows"]["length"]), int(cfg["windows"]["eval_stride"]), smoothing)
    keep = ends >= labeled_cutoff(len(target), a.skip_fraction)
    if not keep.any():
        raise ConfigError("--skip-fraction leaves nothing to evaluate")
    ends, pred = ends[keep], pred[keep]
    from .evalkit import metrics

    m = metrics(pred, target.t_core[ends])
    write_table(run.path("predictions.csv"), ("time_s", "truth", "estimate"), zip(target.t[ends], target.t_core[ends], pred))
    write_table(run.path("metrics.csv"), ("metric", "value"), sorted(m.items()))
    run.wrote(run.path("predictions.csv"), run.path("metrics.csv"))
    run.params["metrics"] = m


def _grid(args, cfg):
    grid = C.study_grid(cfg)
    if args.parameters:
        names = args.parameters.split(",")
        eps = {p: grid.get(p, grid.get(p.split("+")[0])) for p in names}
        grid = eps
    if args.epsilons:
        vals = [float(v) for v in args.epsilons.split(",")]
        grid = {p: vals for p in grid}
    return grid


def cmd_study_perturb(run: Run):
    a, cfg = run.args, run.cfg
    data = _load_source(run)
    params, _ = _load_net(run, data)
    ctx = P.study_context(cfg, params, data)
    grid = _grid(a, cfg)
    report = perturbation_study(grid, C.evaluation_profiles(cfg), ctx, workers=a.workers or int(cfg["runtime"]["workers"]), log=_log)
    files, timing = report.write(run.dir, "study")
    run.wrote(*files)
    run.volatile.append(timing)
    run.params["rows"] = len(report.rows)
    run.params["failed_cells"] = sum(1 for r in report.rows if r["error"])


def cmd_study_sensitivity(run: Run):
    a, cfg = run.args, run.cfg
    eps = float(cfg["study"]["sensitivity_epsilon"]) if a.epsilon is None else a.epsilon
    names = a.parameters.split(",") if a.parameters else list(cfg["study"]["parameters"])
    rows = []
    for prof in C.evaluation_profiles(cfg):
        for name in names:
            s = sensitivity_study(name, eps, prof, C.cell_params(cfg), float(cfg["study"]["coolant_temp"]), C.sim_settings(cfg), a.backend)
            rows.append((name, eps, prof.profile_id, s["d_voltage"], s["d_t_surf"], s["d_t_core"]))
    write_table(run.path("sensitivity.csv"), ("parameter", "epsilon", "profile", "d_voltage", "d_t_surf", "d_t_core"), rows)
    run.wrote(run.path("sensitivity.csv"))


def cmd_export_plots(run: Run):
    from .plots import TIDY_HEADER, collect, render

    rows, used = collect(run.args.runs)
    if not rows:
        raise ConfigError("no plottable outputs found in the given run directories")
    for p in used:
        run.read(p)
    write_table(run.path("plot_data.csv"), TIDY_HEADER, rows)
    run.wrote(run.path("plot_data.csv"))
    if not run.args.no_png:
        run.wrote(*render(rows, run.dir))


COMMANDS = {
    "simulate": cmd_simulate,
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "evaluate": cmd_evaluate,
    "study-perturb": cmd_study_perturb,
    "study-sensitivity": cmd_study_sensitivity,
    "export-plots": cmd_export_plots,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="celltemp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file merged over the defaults")
    common.add_argument("--out", required=True, help="run directory")
    common.add_argument("--workers", type=int, default=None, help="process count; never changes results")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate one scenario to CSV")
    p.add_argument("--profile", default="pulse_train", choices=["pulse_train", "random_walk", "scaled_replay", "rest"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replay", help="CSV with a current_a column for scaled_replay")
    p.add_argument("--duration", type=float)
    p.add_argument("--backend", default="pa", choices=["pa", "fom"])
    p.add_argument("--coolant", type=float, default=25.0)
    p.add_argument("--eps", action="append", metavar="NAME=VALUE", help="relative parameter perturbation")

    sub.add_parser("generate", parents=[common], help="simulate the source sweep")

    p = sub.add_parser("pretrain", parents=[common], help="supervised pre-training")
    p.add_argument("--dataset", required=True, help="dataset directory from generate")

    for name, help_ in (("adapt", "adapt a checkpoint to a target series"), ("study-perturb", "parameter-mismatch study")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--dataset", required=True)
        p.add_argument("--checkpoint", required=True)
        if name == "adapt":
            p.add_argument("--target", required=True, help="target series CSV")
            p.add_argument("--labeled-fraction", type=float, default=None)
        else:
            p.add_argument("--parameters", help="comma list; a+b perturbs both together")
            p.add_argument("--epsilons", help="comma list overriding the config grid")

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a labelled series")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--smooth", action="store_true", help="Gaussian-smooth the inputs first")
    p.add_argument("--skip-fraction", type=float, default=0.0, help="ignore windows ending in this leading fraction")

    p = sub.add_parser("study-sensitivity", parents=[common], help="output sensitivity to one-parameter changes")
    p.add_argument("--parameters")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--backend", default="pa", choices=["pa", "fom"])

    p = sub.add_parser("export-plots", parents=[common], help="tidy plot data and PNG figures")
    p.add_argument("runs", nargs="+", help="run directories to collect")
    p.add_argument("--no-png", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = C.load_config(args.config)
        run = Run(args, cfg)
        COMMANDS[args.command](run)
        run.finish(args.command)
    except ConfigError as err:
        _log(f"config error: {err}")
        return EXIT_CONFIG
    except SimulationError as err:
        _log(f"simulation error: {err}")
        return EXIT_SIMULATION
    except DivergenceError as err:
        _log(f"training diverged: {err}")
        return EXIT_DIVERGENCE
    except AdaptationStarvedError as err:
        _log(f"adaptation starved: {err}")
        return EXIT_STARVED
    except (CellTempError, OSError) as err:
        _log(f"error: {err}")
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line pipeline: exploration data, surrogate, GP search, code generation, evaluation.

Every stage writes into its own directory under ``--out`` together with a
``meta.json`` holding the stage's config hash and seed. Downstream stages
check that record and refuse inputs produced under a different config.

Exit codes: 0 success, 1 usage error, 2 stage failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager

from .codegen import emit_structured_text, parse_policy, print_policy, PolicySyntaxError
from .config import ConfigError, RunConfig
from .data import TransitionBatch, build_dataset
from .evaluation import evaluate_pair, policy_controller
from .fitness import FitnessSpec, ModelFitness, choose_policy, select_start_states
from .gp import ParetoArchive, evolve, pareto_front
from .reactor import Recipe, default_controller, run_batch
from .surrogate import SurrogateModel, TrainingDiverged, train

log = logging.getLogger("reactorgp")

STAGE_DIRS = {
    "simulate": "simulate",
    "gen-data": "data",
    "train-surrogate": "surrogate",
    "evolve": "evolve",
    "select": "select",
    "codegen": "codegen",
    "evaluate": "evaluate",
}
PIPELINE = ("simulate", "gen-data", "train-surrogate", "evolve", "select", "codegen", "evaluate")


class UsageError(Exception):
    pass


class StageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# stage plumbing

def stage_dir(cfg: RunConfig, stage: str) -> str:
    return os.path.join(cfg.out, STAGE_DIRS[stage])


def write_meta(cfg: RunConfig, stage: str, extra=None) -> None:
    meta = {"stage": stage, "seed": cfg.seed, "config_hash": cfg.stage_hash(stage)}
    meta.update(extra or {})
    with open(os.path.join(stage_dir(cfg, stage), "meta.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def require(cfg: RunConfig, stage: str) -> str:
    """Directory of a finished upstream stage whose config matches ``cfg``."""
    d = stage_dir(cfg, stage)
    path = os.path.join(d, "meta.json")
    if not os.path.exists(path):
        raise StageError(f"missing {stage} artifacts in {d}; run `reactorgp {stage}` first")
    with open(path) as fh:
        meta = json.load(fh)
    want = cfg.stage_hash(stage)
    if meta.get("config_hash") != want:
        raise StageError(f"{stage} artifacts in {d} were produced with a different config "
                         f"(hash {meta.get('config_hash')}, expected {want}); "
                         f"rerun `reactorgp {stage}`")
    return d


def write_text(path, text) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def read_policy(path):
    try:
        with open(path) as fh:
            return parse_policy(fh.read())
    except OSError as exc:
        raise StageError(f"cannot read policy {path}: {exc.strerror}") from None
    except PolicySyntaxError as exc:
        raise StageError(f"{path}: {exc}") from None


def load_dataset(cfg):
    return TransitionBatch.load(require(cfg, "gen-data"))


@contextmanager
def worker_map(workers: int):
    if workers <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=workers) as ex:
        yield lambda fn, items: ex.map(fn, items, chunksize=16)


# ---------------------------------------------------------------------------
# stages

def run_simulate(cfg, args):
    params = cfg.reactor_params()
    S = float(args.setpoint if getattr(args, "setpoint", None) is not None
              else cfg["simulate"]["setpoint"])
    recipe = Recipe.sampled(S, cfg.seed, params)
    policy_path = getattr(args, "policy", None)
    if policy_path:
        stats = load_dataset(cfg).stats
        traj = run_batch(recipe, policy_controller(read_policy(policy_path), stats), params,
                         control_period=10)
    else:
        traj = run_batch(recipe, default_controller(recipe), params)
    d = stage_dir(cfg, "simulate")
    os.makedirs(d, exist_ok=True)
    traj.to_csv(os.path.join(d, "trajectory.csv"))
    write_meta(cfg, "simulate", {"setpoint": S, "terminated": traj.terminated})
    log.info("simulated %.0f s batch at S = %g K", traj.duration, S)


def run_gen_data(cfg, args):
    dc = cfg["data"]
    ds = build_dataset(int(dc["n_recipes"]), cfg.seed, cfg.reactor_params(), tuple(dc["ratios"]))
    d = stage_dir(cfg, "gen-data")
    ds.save(d)
    write_meta(cfg, "gen-data", {"n_series": len(ds.series)})
    log.info("dataset: %d series in %s", len(ds.series), d)


def run_train(cfg, args):
    ds = load_dataset(cfg)
    tc = cfg.training_config()

    def progress(ep, tr, va):
        if ep % 50 == 0:
            log.info("episode %d: train %.5f validation %.5f", ep, tr, va)
    try:
        model, curve = train(ds, tc, progress)
    except TrainingDiverged as exc:
        raise StageError(str(exc)) from None
    d = stage_dir(cfg, "train-surrogate")
    os.makedirs(d, exist_ok=True)
    model.save(os.path.join(d, "model.json"))
    curve.to_csv(os.path.join(d, "learning_curve.csv"))
    write_meta(cfg, "train-surrogate")


def _fitness(cfg, ds, model, split="train", n=None):
    fc = cfg["fitness"]
    n = fc["n_start_states"] if n is None else n
    states = select_start_states(ds, n, cfg.seed, model.H, split=split)
    return ModelFitness(model, ds.stats, FitnessSpec(states, fc["horizon"], fc["gamma"]),
                        cfg.reactor_params().monomer_target)


def _load_model(cfg, ds):
    d = require(cfg, "train-surrogate")
    return SurrogateModel.load(os.path.join(d, "model.json"), ds.stats)


def run_evolve(cfg, args):
    ds = load_dataset(cfg)
    model = _load_model(cfg, ds)
    fit = _fitness(cfg, ds, model)
    d = stage_dir(cfg, "evolve")
    os.makedirs(os.path.join(d, "policies"), exist_ok=True)
    log_path = os.path.join(d, "runlog.jsonl")
    with open(log_path, "w") as runlog, worker_map(args.workers) as mapper:
        def on_gen(rec, archive):
            runlog.write(rec.to_json() + "\n")
            log.info("generation %d: best penalty %.5f, %d levels", rec.generation,
                     rec.best_penalty, len(archive))
        archive = evolve(cfg.ga_config(), fit, mapper, on_gen)
    archive.to_csv(os.path.join(d, "archive.csv"))
    for name in os.listdir(os.path.join(d, "policies")):
        os.remove(os.path.join(d, "policies", name))
    for c, _, e in pareto_front(archive):
        write_text(os.path.join(d, "policies", f"c{c:03d}.gprl"), print_policy(e) + "\n")
    write_meta(cfg, "evolve", {"levels": archive.levels()})


def run_select(cfg, args):
    d_in = require(cfg, "evolve")
    archive = ParetoArchive.from_csv(os.path.join(d_in, "archive.csv"))
    K = cfg["select"]["complexity"]
    if K is not None:
        if K not in archive.best:
            levels = ", ".join(str(c) for c in archive.levels())
            raise UsageError(f"archive has no policy of complexity {K}; available levels: {levels}")
        ind = archive[K]
        choice = {"complexity": K, "penalty": ind.penalty, "rule": "requested"}
        expr = ind.expr
    else:
        ds = load_dataset(cfg)
        model = _load_model(cfg, ds)
        held_out = _fitness(cfg, ds, model, "validation", cfg["fitness"]["n_select_states"])
        c, p, expr, score = choose_policy(pareto_front(archive), held_out,
                                          cfg["select"]["max_complexity"])
        choice = {"complexity": c, "penalty": p, "validation_penalty": -score,
                  "rule": "best validation-state return"}
    choice["expression"] = print_policy(expr)
    d = stage_dir(cfg, "select")
    os.makedirs(d, exist_ok=True)
    write_text(os.path.join(d, "policy.gprl"), print_policy(expr) + "\n")
    write_text(os.path.join(d, "selection.json"), json.dumps(choice, sort_keys=True, indent=2) + "\n")
    write_meta(cfg, "select")
    log.info("selected complexity %d: %s", choice["complexity"], choice["expression"])


def _policy_for(cfg, args):
    path = getattr(args, "policy", None)
    if path:
        return read_policy(path)
    return read_policy(os.path.join(require(cfg, "select"), "policy.gprl"))


def run_codegen(cfg, args):
    expr = _policy_for(cfg, args)
    stats = load_dataset(cfg).stats
    art = emit_structured_text(expr, stats)
    d = stage_dir(cfg, "codegen")
    os.makedirs(d, exist_ok=True)
    write_text(os.path.join(d, "policy.st"), art.source)
    write_text(os.path.join(d, "taps.csv"), art.taps_csv())
    write_meta(cfg, "codegen", {"policy": print_policy(expr)})


def run_evaluate(cfg, args):
    expr = _policy_for(cfg, args)
    stats = load_dataset(cfg).stats
    ec = cfg["evaluation"]
    report = evaluate_pair(expr, stats, cfg.reactor_params(), tuple(ec["setpoints"]), cfg.seed,
                           bool(ec["from_feed_start"]))
    d = stage_dir(cfg, "evaluate")
    os.makedirs(d, exist_ok=True)
    report.to_csv(os.path.join(d, "report.csv"))
    report.dump_trajectories(d)
    summary = f"policy: {print_policy(expr)}\n" + report.summary()
    write_text(os.path.join(d, "summary.txt"), summary)
    write_meta(cfg, "evaluate", {"policy": print_policy(expr)})
    print(summary, end="")
    if any(r.status != "ok" for r in report.results):
        log.warning("some setpoints failed; see report.csv")


def run_all(cfg, args):
    for stage in PIPELINE:
        log.info("== %s", stage)
        RUNNERS[stage](cfg, args)


RUNNERS = {
    "simulate": run_simulate,
    "gen-data": run_gen_data,
    "train-surrogate": run_train,
    "evolve": run_evolve,
    "select": run_select,
    "codegen": run_codegen,
    "evaluate": run_evaluate,
    "all": run_all,
}


# ---------------------------------------------------------------------------
# entry point

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="processes for fitness evaluation (default: CPU count)")
    common.add_argument("-q", "--quiet", action="store_true")

    p = _Parser(prog="reactorgp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("simulate", parents=[common], help="run one batch and dump its trajectory")
    s.add_argument("--setpoint", type=float)
    s.add_argument("--policy", help="policy file to run instead of the default T-hat = S")
    sub.add_parser("gen-data", parents=[common], help="simulate the exploration batch")
    sub.add_parser("train-surrogate", parents=[common], help="fit the recurrent surrogate")
    sub.add_parser("evolve", parents=[common], help="GP search on the surrogate")
    s = sub.add_parser("select", parents=[common], help="pick one policy from the archive")
    s.add_argument("--complexity", type=int)
    s = sub.add_parser("codegen", parents=[common], help="emit structured text for a policy")
    s.add_argument("--policy")
    s = sub.add_parser("evaluate", parents=[common], help="closed-loop test on the simulator")
    s.add_argument("--policy")
    sub.add_parser("all", parents=[common], help="run every stage in order")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        cfg = cfg.override(seed=args.seed, out=args.out)
        if getattr(args, "complexity", None) is not None:
            cfg.doc["select"]["complexity"] = args.complexity
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
    except (UsageError, ConfigError) as exc:
        print(f"reactorgp: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        RUNNERS[args.command](cfg, args)
    except UsageError as exc:
        print(f"reactorgp: error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"reactorgp: {args.command} failed: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"reactorgp: {args.command} failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

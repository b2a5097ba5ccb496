"""Command-line entry point: ``rlplace <command> ...``.

Exit codes: 0 ok, 2 config error, 3 parse error, 4 divergence, 5 internal.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import subprocess
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, from_dict, load_config
from .netlist import ParseError, ValidationError, hpwl, parse_bookshelf, write_bookshelf, write_placement

log = logging.getLogger("rlplace")

EXIT_OK, EXIT_CONFIG, EXIT_PARSE, EXIT_DIVERGED, EXIT_INTERNAL = 0, 2, 3, 4, 5


class Diverged(RuntimeError):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def git_hash() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_csv(path, columns, rows, meta: dict) -> None:
    """Header row, data rows, then one ``# {json}`` metadata line."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] for c in columns])
        f.write("# " + json.dumps(meta, sort_keys=True) + "\n")


def read_csv(path) -> tuple[list[dict], dict]:
    """Inverse of :func:`write_csv`: rows as dicts of strings plus the metadata."""
    lines = Path(path).read_text().splitlines()
    meta = {}
    if lines and lines[-1].startswith("# "):
        meta = json.loads(lines.pop()[2:])
    return list(csv.DictReader(lines)), meta


def write_pgm(path, grid: np.ndarray) -> None:
    """Binary 8-bit greymap. ``grid[i, j]`` is x-bin i, y-bin j; y grows upward."""
    g = np.asarray(grid, dtype=float)
    img = np.flipud(g.T)
    lo, hi = float(np.min(img)), float(np.max(img))
    scaled = np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo)
    data = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def _settings(args) -> dict:
    d: dict = {}
    cfg_path = getattr(args, "config", None)
    if cfg_path is None and getattr(args, "design", None):
        auto = Path(args.design[0] if isinstance(args.design, list) else args.design).with_suffix(".cfg")
        if auto.exists():
            cfg_path = auto
    if cfg_path is not None:
        d.update(load_config(cfg_path))
    for kv in getattr(args, "set", None) or []:
        k, sep, v = kv.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {kv!r}")
        d[k.strip()] = v.strip()
    unknown = sorted(set(d) - known_settings())
    if unknown:
        raise ConfigError(f"unknown setting(s): {', '.join(unknown)}")
    return d


def known_settings() -> set[str]:
    from dataclasses import fields

    from .env import EnvConfig
    from .placer import PlacerConfig
    from .trainer import TrainerConfig

    return {f.name for c in (PlacerConfig, EnvConfig, TrainerConfig) for f in fields(c)}


def load_design(aux, settings: dict):
    from .placer import PlacerConfig

    nl, pl = parse_bookshelf(aux)
    name = Path(aux).stem
    return name, nl, pl, from_dict(PlacerConfig, settings)


def _env_config(settings: dict, action: str | None = None):
    from .env import EnvConfig

    s = dict(settings)
    if action:
        s["action_space"] = action
    return from_dict(EnvConfig, s)


def _meta(args, cfg: dict) -> dict:
    return {"git": git_hash(), "config_digest": config_digest(cfg), "seed": getattr(args, "seed", 0)}


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _baseline(nl, pc, ec, seed, name, out: Path | None = None, stats_path=None):
    """Load cached feature stats or run the baseline (and cache it)."""
    from .env import FeatureStats, run_baseline

    if stats_path and Path(stats_path).exists():
        return FeatureStats.load(stats_path)
    res = run_baseline(nl, pc, ec, seed, name)
    if out is not None:
        res.stats.save(out / f"{name}.stats.json")
    return res.stats


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_place(args) -> int:
    from .placer import STATS_COLUMNS, Placer

    settings = _settings(args)
    name, nl, _, pc = load_design(args.design, settings)
    out = _out(args)
    placer = Placer(nl, replace(pc, rl_mode="off"), args.seed)
    placer.run()
    st = placer.state
    write_placement(nl, placer.placement, out / f"{name}.pl")
    write_csv(out / "stats.csv", STATS_COLUMNS, placer.stats, _meta(args, asdict(pc)))
    if args.dump_maps:
        placer.model.fields(placer.grid)
        write_pgm(out / "density.pgm", placer.grid.occupancy)
        write_pgm(out / "potential.pgm", placer.grid.potential)
    summary = {"design": name, "hpwl": hpwl(nl, placer.placement), "overflow": st.overflow,
               "iterations": st.iteration, "reason": st.reason or "max_iterations"}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"{name}: hpwl {summary['hpwl']:.6g} overflow {st.overflow:.4f} "
          f"after {st.iteration} iterations ({summary['reason']})")
    if not st.converged:
        raise Diverged(f"placement did not converge: {summary['reason']}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    from .env import run_baseline
    from .placer import STATS_COLUMNS

    settings = _settings(args)
    name, nl, _, pc = load_design(args.design, settings)
    ec = _env_config(settings)
    out = _out(args)
    res = run_baseline(nl, pc, ec, args.seed, name)
    res.stats.save(out / f"{name}.stats.json")
    write_placement(nl, res.placement, out / f"{name}.baseline.pl")
    write_csv(out / "stats.csv", STATS_COLUMNS, res.rows, _meta(args, asdict(pc)))
    print(f"{name}: baseline hpwl {res.baseline_hpwl:.6g} in {res.state.iteration} iterations")
    return EXIT_OK


def _make_net(ec, seed: int, dtype):
    from .agent import PolicyValueNet

    return PolicyValueNet(len(ec.channels), ec.action_space, ec.state_dims, ec.action_dims,
                          seed=seed, dtype=dtype)


def cmd_train(args) -> int:
    from .agent import save_policy
    from .env import PlacementEnv
    from .trainer import TrainerConfig, train

    settings = _settings(args)
    ec = _env_config(settings, args.action)
    tc_settings = dict(settings, seed=args.seed, num_workers=args.workers,
                       synchronous=args.workers == 1 and not args.asynchronous)
    if args.steps is not None:
        tc_settings["max_train_steps"] = args.steps
    if args.episodes is not None:
        tc_settings["max_episodes"] = args.episodes
    tc = from_dict(TrainerConfig, tc_settings)
    out = _out(args)
    designs = []
    for aux in args.design:
        name, nl, _, pc = load_design(aux, settings)
        stats = _baseline(nl, pc, ec, args.seed, name, out)
        designs.append((name, nl, pc, stats))

    def make_env(worker: int):
        env = PlacementEnv(ec)
        for name, nl, pc, stats in designs:
            env.register(name, nl, pc, stats, seed=args.seed)
        return env

    net = _make_net(ec, args.seed, np.dtype(args.dtype))
    res = train(make_env, net, tc, [d[0] for d in designs], out, {d[0]: d[1] for d in designs})
    save_policy(net, out / "checkpoint.bin")
    meta = _meta(args, {**asdict(tc), **asdict(ec)})
    from .trainer import CURVE_COLUMNS
    write_csv(out / "training_curve.csv", CURVE_COLUMNS, res.curve, meta)
    (out / "best.json").write_text(json.dumps(res.best.to_json(), indent=2) + "\n")
    for d, e in res.best.entries.items():
        print(f"{d}: best reward {e.reward:.4f} (hpwl {e.hpwl:.6g}, episode {e.episode})")
    print(f"{res.episodes} episodes, {res.env_steps} env steps")
    return EXIT_OK


def greedy_episode(net, nl, pc, ec, stats, seed: int, name: str):
    from .env import PlacementEnv
    from .trainer import collect_trajectory

    env = PlacementEnv(ec)
    env.register(name, nl, pc, stats, seed=seed)
    traj = collect_trajectory(env, net, None, name)
    return traj.result, traj.placement


def cmd_eval(args) -> int:
    from .agent import load_policy

    settings = _settings(args)
    net = load_policy(args.checkpoint)
    ec = _env_config(settings, net.action_space)
    ec = replace(ec, state_dims=net.state_dims, action_dims=net.action_dims)
    name, nl, _, pc = load_design(args.design, settings)
    out = _out(args)
    stats = _baseline(nl, pc, ec, args.seed, name, out, args.stats)
    res, placement = greedy_episode(net, nl, pc, ec, stats, args.seed, name)
    report = {"design": name, "baseline_hpwl": res.baseline_hpwl, "final_hpwl": res.final_hpwl,
              "improvement_pct": res.reward if not res.diverged else None, "reward": res.reward,
              "diverged": res.diverged, "steps": res.steps, "iterations": res.iterations,
              **_meta(args, settings)}
    (out / "eval.json").write_text(json.dumps(report, indent=2) + "\n")
    if placement is not None:
        write_placement(nl, placement, out / f"{name}.eval.pl")
    print(f"{name}: hpwl {res.final_hpwl:.6g} vs baseline {res.baseline_hpwl:.6g} "
          f"(reward {res.reward:+.4f}{', diverged' if res.diverged else ''})")
    if res.diverged:
        raise Diverged(f"policy run did not converge ({res.reason})")
    return EXIT_OK


def cmd_edit(args) -> int:
    from .netedit import EditConfig, modify_netlist

    nl, pl = parse_bookshelf(args.input)
    name = Path(args.input).stem
    out = _out(args)
    new, records = modify_netlist(nl, EditConfig(args.edits, args.seed))
    ref = {n.name: i for i, n in enumerate(nl.nodes)}
    x = np.array([pl.x[ref[n.name]] if n.name in ref else n.x for n in new.nodes])
    y = np.array([pl.y[ref[n.name]] if n.name in ref else n.y for n in new.nodes])
    from .netlist import Placement

    write_bookshelf(new, Placement(x, y), out, name)
    log_doc = {"source": str(args.input), "edits": args.edits, "seed": args.seed,
               "records": [r.to_json() for r in records]}
    (out / "edits.json").write_text(json.dumps(log_doc, indent=1) + "\n")
    print(f"{name}: {len(records)} edits, {nl.num_nodes} -> {new.num_nodes} nodes, "
          f"{nl.num_nets} -> {new.num_nets} nets")
    return EXIT_OK


def cmd_features(args) -> int:
    from .env import run_baseline

    settings = _settings(args)
    name, nl, _, pc = load_design(args.design, settings)
    ec = _env_config(settings)
    out = _out(args)
    res = run_baseline(nl, pc, ec, args.seed, name)
    step = min(args.step, len(res.stream) - 1) if args.step >= 0 else len(res.stream) - 1
    raw = res.stream[step]
    names = ec.channels if args.channel == "all" else [args.channel]
    for c in names:
        if c not in ec.channels:
            raise ConfigError(f"unknown channel {c!r}; choose from {', '.join(ec.channels)}")
        grid = raw[:, :, ec.channels.index(c)]
        write_pgm(out / f"{c}.pgm", grid)
        np.savetxt(out / f"{c}.csv", grid, delimiter=",")
    print(f"{name}: wrote {len(names)} channel(s) at decision step {step}")
    return EXIT_OK


def cmd_noise_demo(args) -> int:
    from .noise import NoiseFieldPlan, sample_episode_field

    out = _out(args)
    rng = np.random.default_rng(args.seed)
    res = [args.base] if args.base else None
    plan = NoiseFieldPlan.new(args.action_dims, rng, resolutions=res)
    frames = [sample_episode_field(plan, args.action_dims) for _ in range(args.frames)]
    lo = min(f.min() for f in frames)
    hi = max(f.max() for f in frames)
    for i, f in enumerate(frames):
        # shared scale so temporal correlation is visible across frames
        write_pgm(out / f"frame_{i:03d}.pgm", np.clip((f - lo) / max(hi - lo, 1e-12), 0, 1))
    print(f"base resolution {plan.base_resolution[0]}x{plan.base_resolution[1]}, {len(frames)} frames")
    return EXIT_OK


def cmd_policy_dump(args) -> int:
    from .agent import load_policy, policy_value_forward
    from .env import PlacementEnv

    settings = _settings(args)
    net = load_policy(args.checkpoint)
    ec = replace(_env_config(settings, net.action_space), state_dims=net.state_dims,
                 action_dims=net.action_dims)
    name, nl, _, pc = load_design(args.design, settings)
    out = _out(args)
    stats = _baseline(nl, pc, ec, args.seed, name, None, args.stats)
    env = PlacementEnv(ec)
    env.register(name, nl, pc, stats, seed=args.seed)
    state = env.reset()
    for _ in range(args.step):
        if env.done:
            break
        state, _, _ = env.step(None)
    params, value = policy_value_forward(net, state)
    mean = np.asarray(params.mean)
    if mean.ndim == 2:
        write_pgm(out / "policy_mean.pgm", mean)
        np.savetxt(out / "policy_mean.csv", mean, delimiter=",")
    doc = {"mean": mean.tolist(), "std": np.asarray(params.std).tolist(), "value": float(value)}
    (out / "policy.json").write_text(json.dumps(doc) + "\n")
    print(f"value {float(value):.4f}, mean range [{mean.min():.4f}, {mean.max():.4f}]")
    return EXIT_OK


ROBUSTNESS_COLUMNS = ("edits", "rep", "seed", "nodes", "nets", "baseline_hpwl", "policy_hpwl",
                      "improvement_pct", "trained_improvement_pct", "retained_fraction", "valid")


def robustness_report(net, nl, pc, ec, edit_counts, reps: int, seed: int, name: str) -> list[dict]:
    """Retained fraction of the policy's improvement after random edits."""
    from .env import BaselineError, run_baseline
    from .netedit import EditConfig, modify_netlist

    ref_stats = run_baseline(nl, pc, ec, seed, name).stats
    ref, _ = greedy_episode(net, nl, pc, ec, ref_stats, seed, name)
    ref_imp = ref.reward if not ref.diverged else float("nan")
    rows = []
    for n in edit_counts:
        for rep in range(reps):
            s = seed + 1000 * rep + n
            row = {"edits": n, "rep": rep, "seed": s, "trained_improvement_pct": ref_imp}
            mutated, _ = modify_netlist(nl, EditConfig(n, s))
            row.update(nodes=mutated.num_nodes, nets=mutated.num_nets)
            try:
                stats = run_baseline(mutated, pc, ec, seed, name).stats
            except BaselineError:
                row.update(baseline_hpwl=float("nan"), policy_hpwl=float("nan"),
                           improvement_pct=float("nan"), retained_fraction=float("nan"), valid=0)
                rows.append(row)
                continue
            res, _ = greedy_episode(net, mutated, pc, ec, stats, seed, name)
            imp = res.reward if not res.diverged else float("nan")
            if imp == ref_imp:
                retained = 1.0
            else:
                retained = imp / ref_imp if ref_imp not in (0.0,) and np.isfinite(ref_imp) else float("nan")
            row.update(baseline_hpwl=stats.baseline_hpwl, policy_hpwl=res.final_hpwl,
                       improvement_pct=imp, retained_fraction=retained, valid=int(not res.diverged))
            rows.append(row)
    return rows


def cmd_robustness(args) -> int:
    from .agent import load_policy

    settings = _settings(args)
    net = load_policy(args.checkpoint)
    ec = replace(_env_config(settings, net.action_space), state_dims=net.state_dims,
                 action_dims=net.action_dims)
    name, nl, _, pc = load_design(args.design, settings)
    out = _out(args)
    counts = [int(c) for c in args.edits.split(",") if c.strip()]
    rows = robustness_report(net, nl, pc, ec, counts, args.reps, args.seed, name)
    write_csv(out / "robustness.csv", ROBUSTNESS_COLUMNS, rows, _meta(args, settings))
    for r in rows:
        print(f"edits {r['edits']:5d} rep {r['rep']}: retained {r['retained_fraction']:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlplace", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, design=True, many=False):
        if design:
            if many:
                sp.add_argument("--design", required=True, action="append", help="Bookshelf .aux (repeatable)")
            else:
                sp.add_argument("--design", required=True, help="Bookshelf .aux file")
        sp.add_argument("--config", help="key = value settings file (default: <design>.cfg if present)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("place", help="run the baseline placer")
    common(sp)
    sp.add_argument("--dump-maps", action="store_true", help="write density and potential maps as PGM")
    sp.set_defaults(func=cmd_place)

    sp = sub.add_parser("baseline", help="baseline run plus feature statistics")
    common(sp)
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("train", help="train a policy")
    common(sp, many=True)
    sp.add_argument("--action", choices=("density", "spatial"), default="density")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--asynchronous", action="store_true", help="threaded workers even with --workers 1")
    sp.add_argument("--steps", type=int, help="env-step budget")
    sp.add_argument("--episodes", type=int, help="episode budget")
    sp.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="greedy replay of a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--stats", help="cached feature statistics JSON")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("edit", help="apply random netlist edits")
    sp.add_argument("--in", dest="input", required=True, help="Bookshelf .aux file")
    sp.add_argument("--edits", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_edit)

    sp = sub.add_parser("features", help="dump state-tensor channels of the baseline run")
    common(sp)
    sp.add_argument("--channel", default="all")
    sp.add_argument("--step", type=int, default=-1, help="decision step (default: last)")
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("noise-demo", help="write correlated noise frames as PGM")
    sp.add_argument("--action-dims", type=int, default=32)
    sp.add_argument("--base", type=int, help="force the base resolution")
    sp.add_argument("--frames", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_noise_demo)

    sp = sub.add_parser("policy-dump", help="render the policy mean for a state")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--stats")
    sp.add_argument("--step", type=int, default=0, help="heuristic steps before the snapshot")
    sp.set_defaults(func=cmd_policy_dump)

    sp = sub.add_parser("robustness", help="retained improvement after netlist edits")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--edits", default="0,100,500")
    sp.add_argument("--reps", type=int, default=1)
    sp.set_defaults(func=cmd_robustness)
    return p


def main(argv=None) -> int:
    from .env import BaselineError
    from .nn import CheckpointError
    from .trainer import TrainingAborted

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, ValidationError, CheckpointError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (Diverged, BaselineError, TrainingAborted) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except Exception as exc:  # noqa: BLE001 - last-resort categorization
        log.exception("internal error")
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

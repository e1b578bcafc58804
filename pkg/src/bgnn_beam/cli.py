"""Command-line front end: training, evaluation grids, trajectories and instance I/O.

Configuration is flat ``key=value`` text with dotted namespaces
(``train.lr=0.001``, ``scenario.layout=cellfree``, ``eval.users=1,2,4``).
Every key can also be set with a repeated ``--set key=value`` flag.  Each
command writes ``manifest.txt`` next to its outputs; CSV files name that
manifest and a digest of the resolved config in their first line.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import logging
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import baselines as bl
from . import beamcore as bc
from .channels import (LAYOUTS, BipartiteChannel, ScenarioConfig, read_instance, sample_fixed,
                       write_instance)
from .errors import (BgnnError, ConfigError, ContractError, ConvergenceError, InfeasibleError,
                     InvalidInstanceError, NumericError, ShapeError, SingularMatrixError)
from .model import (BgnnParams, bmp_forward, evaluate, initial_messages, load_checkpoint,
                    load_params, save_params)
from .training import PROFILES, TrainConfig, train

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
CSV_VERSION = "bgnn-csv v1"
RATE_UNIT = "bits/s/Hz"
BASELINES = ("wmmse", "zf", "mrt", "optimal", "dnn")
REFERENCE = {"sum": "wmmse", "min": "optimal"}

# seed sub-stream tags for evaluation draws
TAG_EVAL, TAG_GENERALIZE, TAG_TRAJECTORY, TAG_EXPORT = 10, 11, 12, 13


# ------------------------------------------------------------------ config

def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _opt_int(text: str) -> int | None:
    return None if text.lower() in ("", "none", "auto") else int(text)


def _opt_floats(text: str) -> tuple[float, ...] | None:
    return None if text.lower() in ("", "none") else _floats(text)


def _size(text: str) -> tuple[int, int]:
    try:
        n, k = text.lower().split("x")
        return int(n), int(k)
    except ValueError as exc:
        raise ConfigError(f"size must look like NxK, got {text!r}") from exc


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if v is None:
        return "none"
    return repr(float(v)) if isinstance(v, float) else str(v)


# key -> parser; defaults come from the selected profile and EVAL_DEFAULTS
PARSERS: dict[str, Callable[[str], object]] = {
    "seed": int,
    "mode": str,
    "train.epochs": int,
    "train.batches_per_epoch": int,
    "train.batch_size": int,
    "train.lr": float,
    "train.T": int,
    "train.M": int,
    "train.width": _opt_int,
    "train.snr_policy": str,
    "train.snr_db_range": _floats,
    "train.val_size": int,
    "train.step_weights": _opt_floats,
    "scenario.max_antennas": int,
    "scenario.max_users": int,
    "scenario.min_antennas": int,
    "scenario.min_users": int,
    "scenario.snr_db": float,
    "scenario.layout": str,
    "scenario.cell_radius": float,
    "scenario.antenna_radius": float,
    "scenario.d_ref": float,
    "scenario.pathloss_exp": float,
    "scenario.noise_var": float,
    "eval.antennas": _ints,
    "eval.users": _ints,
    "eval.snr_db": _floats,
    "eval.samples": int,
    "eval.timing_runs": int,
    "eval.baselines": _names,
    "eval.dnn_epochs": int,
    "generalize.sizes": _ints,
    "generalize.samples": int,
    "trajectory.size": _size,
    "trajectory.samples": int,
    "instance.size": _size,
    "instance.count": int,
}

EVAL_DEFAULTS = {
    "eval.antennas": (4,),
    "eval.users": (4,),
    "eval.snr_db": (10.0,),
    "eval.samples": 500,
    "eval.timing_runs": 100,
    "eval.baselines": (),
    "eval.dnn_epochs": 10,
    "generalize.sizes": (1, 2, 4, 6, 8, 12, 16),
    "generalize.samples": 100,
    "trajectory.size": (4, 4),
    "trajectory.samples": 500,
    "instance.size": (4, 4),
    "instance.count": 1,
}


def profile_values(profile: str) -> dict[str, object]:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = PROFILES[profile]
    vals: dict[str, object] = {"seed": cfg.seed, "mode": cfg.mode}
    for f in fields(TrainConfig):
        if f.name not in ("seed", "mode", "scenario"):
            vals["train." + f.name] = getattr(cfg, f.name)
    for f in fields(ScenarioConfig):
        vals["scenario." + f.name] = getattr(cfg.scenario, f.name)
    vals.update(EVAL_DEFAULTS)
    return vals


def parse_assignments(lines: Sequence[str], origin: str) -> dict[str, str]:
    """Raw ``key=value`` pairs; blank lines and ``#`` comments are skipped."""
    out: dict[str, str] = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def resolve_config(profile: str, file_pairs: dict[str, str], set_pairs: dict[str, str],
                   flags: dict[str, object]) -> dict[str, object]:
    """Merge profile < config file < --set < dedicated flags, validating every key."""
    raw = {**file_pairs, **set_pairs}
    unknown = sorted(k for k in raw if k not in PARSERS)
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(unknown))
    vals = profile_values(profile)
    for key, text in raw.items():
        try:
            vals[key] = PARSERS[key](text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {text!r}") from exc
    for key, value in flags.items():
        if value is None:
            continue
        if key in raw and vals[key] != value:
            raise ConfigError(f"conflicting values for {key}: config says {vals[key]!r}, "
                              f"flag says {value!r}")
        vals[key] = value
    if vals["mode"] not in bc.MODES:
        raise ConfigError(f"mode must be one of {bc.MODES}")
    if vals["scenario.layout"] not in LAYOUTS:
        raise ConfigError(f"layout must be one of {LAYOUTS}")
    bad = [b for b in vals["eval.baselines"] if b not in BASELINES]
    if bad:
        raise ConfigError(f"unknown baselines {bad}; choose from {BASELINES}")
    if len(vals["train.snr_db_range"]) != 2:
        raise ConfigError("train.snr_db_range needs two values")
    return vals


def scenario_of(vals: dict[str, object]) -> ScenarioConfig:
    return ScenarioConfig(**{f.name: vals["scenario." + f.name] for f in fields(ScenarioConfig)})


def train_config_of(vals: dict[str, object]) -> TrainConfig:
    kw = {f.name: vals["train." + f.name] for f in fields(TrainConfig)
          if f.name not in ("seed", "mode", "scenario")}
    return TrainConfig(seed=vals["seed"], mode=vals["mode"], scenario=scenario_of(vals), **kw)


def config_text(vals: dict[str, object]) -> str:
    return "".join(f"{k}={_fmt(vals[k])}\n" for k in sorted(vals))


def config_digest(vals: dict[str, object]) -> str:
    return hashlib.sha256(config_text(vals).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- manifest

def code_version() -> str:
    from . import __version__
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: dict[str, object]
    seed: int
    code_version: str
    started: str
    finished: str = ""
    outputs: list[str] = field(default_factory=list)

    def text(self) -> str:
        head = [f"command={self.command}", f"seed={self.seed}",
                f"code_version={self.code_version}", f"config_digest={config_digest(self.config)}",
                f"started={self.started}", f"finished={self.finished}",
                "outputs=" + ",".join(self.outputs)]
        return "\n".join(head) + "\n[config]\n" + config_text(self.config)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.txt"
        path.write_text(self.text())
        return path


def csv_preamble(kind: str, vals: dict[str, object]) -> str:
    return f"# {CSV_VERSION} {kind} manifest=manifest.txt config_digest={config_digest(vals)}\n"


def _num(x: float) -> str:
    return f"{x:.10g}"


# ------------------------------------------------------------ evaluation

def cell_rng(seed: int, tag: int, N: int, K: int, snr_db: float) -> np.random.Generator:
    """Generator for one grid cell, independent of evaluation order."""
    key = (tag, N, K, int(round((snr_db + 1000.0) * 1000)))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def draw_cell(scenario: ScenarioConfig, N: int, K: int, snr_db: float, samples: int, M: int,
              rng: np.random.Generator) -> tuple[list[BipartiteChannel], list[np.ndarray]]:
    sc = replace(scenario, snr_db=snr_db)
    insts, b0s = [], []
    for _ in range(samples):
        insts.append(sample_fixed(sc, N, K, rng))
        b0s.append(initial_messages(N, K, M, rng))
    return insts, b0s


def run_baseline(name: str, inst: BipartiteChannel, mode: str, dnn=None) -> float:
    if name == "wmmse":
        res = bl.wmmse(inst.H, inst.power, inst.noise_var)
    elif name == "zf":
        res = bl.zf_waterfill(inst.H, inst.power, inst.noise_var)
    elif name == "mrt":
        res = bl.mrt_power(inst.H, inst.power, inst.noise_var, mode)
    elif name == "optimal":
        res = bl.optimal_minrate(inst.H, inst.power, inst.noise_var)
    elif name == "dnn":
        res = dnn.solve(inst)
    else:
        raise ConfigError(f"unknown baseline {name!r}")
    return bc.utility(res.rates, mode)


def _median_seconds(fn: Callable[[], object], runs: int) -> float:
    if runs <= 0:
        return float("nan")
    fn()                                             # warm caches
    ts = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


@dataclass
class CellResult:
    N: int
    K: int
    snr_db: float
    samples: int
    means: dict[str, float | None]              # None marks an infeasible method
    seconds: dict[str, float]


def eval_cell(params_blob: bytes, vals: dict[str, object], N: int, K: int, snr_db: float,
              methods: Sequence[str], samples: int, timing_runs: int, tag: int) -> CellResult:
    params = load_params(io.BytesIO(params_blob))
    mode = params.mode
    rng = cell_rng(vals["seed"], tag, N, K, snr_db)
    insts, b0s = draw_cell(scenario_of(vals), N, K, snr_db, samples, params.M, rng)
    means: dict[str, float | None] = {"bgnn": float(evaluate(params, insts, b0s)[:, -1].mean())}
    n_time = min(timing_runs, samples)
    seconds = {"bgnn": _median_seconds(lambda: bmp_forward(insts[0], params, b0=b0s[0]), n_time)}
    for name in methods:
        if name == "zf" and N < K:
            means[name] = None
            continue
        dnn = None
        if name == "dnn":
            sc = replace(scenario_of(vals), snr_db=snr_db)
            dnn = bl.naive_dnn_train(N, K, sc, mode, param_budget=params.num_parameters(),
                                     epochs=vals["eval.dnn_epochs"], seed=vals["seed"])
        means[name] = float(np.mean([run_baseline(name, i, mode, dnn) for i in insts]))
        seconds[name] = _median_seconds(lambda: run_baseline(name, insts[0], mode, dnn), n_time)
    return CellResult(N, K, snr_db, samples, means, seconds)


def _cell_job(args):
    return eval_cell(*args)


def run_cells(jobs: list[tuple], workers: int) -> list[CellResult]:
    """Evaluate cells, in parallel if asked; results keep the job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [_cell_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_cell_job, jobs))


def _params_blob(params: BgnnParams) -> bytes:
    buf = io.BytesIO()
    save_params(buf, params)
    return buf.getvalue()


def _load_model(path: str | None, vals: dict[str, object], mode_given: bool) -> BgnnParams:
    if path is None:
        raise ConfigError("this command needs --checkpoint")
    params = load_checkpoint(path)
    if mode_given and params.mode != vals["mode"]:
        raise ConfigError(f"checkpoint was trained for '{params.mode}' utility, "
                          f"but mode '{vals['mode']}' was requested")
    vals["mode"] = params.mode
    return params


def write_eval_csv(path: Path, vals, results: Sequence[CellResult], methods: Sequence[str]) -> None:
    cols = ["bgnn", *methods]
    with open(path, "w") as fh:
        fh.write(csv_preamble("eval", vals))
        fh.write("N,K,snr_db[dB],samples," + ",".join(f"{c}[{RATE_UNIT}]" for c in cols) + "\n")
        for r in results:
            cells = ["infeasible" if r.means[c] is None else _num(r.means[c]) for c in cols]
            fh.write(f"{r.N},{r.K},{_num(r.snr_db)},{r.samples}," + ",".join(cells) + "\n")


def write_timing_csv(path: Path, vals, results: Sequence[CellResult]) -> None:
    with open(path, "w") as fh:
        fh.write(csv_preamble("timing", vals))
        fh.write("N,K,snr_db[dB],method,median_seconds[s]\n")
        for r in results:
            for name, sec in r.seconds.items():
                fh.write(f"{r.N},{r.K},{_num(r.snr_db)},{name},{sec:.6g}\n")


# ---------------------------------------------------------------- commands

def cmd_train(args, vals, out: Path) -> list[Path]:
    train(train_config_of(vals), out_dir=out)
    return [out / "checkpoint.bin", out / "report.txt"]


def cmd_eval(args, vals, out: Path) -> list[Path]:
    params = _load_model(args.checkpoint, vals, args.mode is not None)
    methods = list(vals["eval.baselines"]) or [REFERENCE[params.mode]]
    blob = _params_blob(params)
    jobs = [(blob, vals, N, K, snr, methods, vals["eval.samples"], vals["eval.timing_runs"],
             TAG_EVAL)
            for N in vals["eval.antennas"] for K in vals["eval.users"] for snr in vals["eval.snr_db"]]
    results = run_cells(jobs, args.jobs)
    paths = [out / "eval.csv", out / "eval_timing.csv"]
    write_eval_csv(paths[0], vals, results, methods)
    write_timing_csv(paths[1], vals, results)
    return paths


def cmd_generalize(args, vals, out: Path) -> list[Path]:
    params = _load_model(args.checkpoint, vals, args.mode is not None)
    ref = REFERENCE[params.mode]
    blob = _params_blob(params)
    snr = vals["scenario.snr_db"]
    jobs = [(blob, vals, n, n, snr, [ref], vals["generalize.samples"], 0, TAG_GENERALIZE)
            for n in vals["generalize.sizes"]]
    results = run_cells(jobs, args.jobs)
    path = out / "generalize.csv"
    with open(path, "w") as fh:
        fh.write(csv_preamble("generalize", vals))
        fh.write(f"N,K,snr_db[dB],samples,bgnn[{RATE_UNIT}],{ref}[{RATE_UNIT}],ratio[1]\n")
        for r in results:
            b, w = r.means["bgnn"], r.means[ref]
            fh.write(f"{r.N},{r.K},{_num(r.snr_db)},{r.samples},{_num(b)},{_num(w)},"
                     f"{_num(b / w)}\n")
    return [path]


def cmd_trajectory(args, vals, out: Path) -> list[Path]:
    params = _load_model(args.checkpoint, vals, args.mode is not None)
    if args.instance is not None:
        with open(args.instance) as fh:
            insts = [read_instance(fh)]
        rng = cell_rng(vals["seed"], TAG_TRAJECTORY, insts[0].N, insts[0].K, 0.0)
        b0s = [initial_messages(insts[0].N, insts[0].K, params.M, rng)]
        kind = "trajectory-single"
    else:
        N, K = vals["trajectory.size"]
        snr = vals["scenario.snr_db"]
        insts, b0s = draw_cell(scenario_of(vals), N, K, snr, vals["trajectory.samples"],
                               params.M, cell_rng(vals["seed"], TAG_TRAJECTORY, N, K, snr))
        kind = "trajectory"
    u = evaluate(params, insts, b0s).mean(axis=0)
    path = out / "trajectory.csv"
    with open(path, "w") as fh:
        fh.write(csv_preamble(kind, vals))
        fh.write(f"step,samples,utility[{RATE_UNIT}]\n")
        for t, val in enumerate(u, 1):
            fh.write(f"{t},{len(insts)},{_num(val)}\n")
    return [path]


def cmd_export_instance(args, vals, out: Path) -> list[Path]:
    N, K = vals["instance.size"]
    snr = vals["scenario.snr_db"]
    rng = cell_rng(vals["seed"], TAG_EXPORT, N, K, snr)
    sc = replace(scenario_of(vals), snr_db=snr)
    paths = []
    for j in range(vals["instance.count"]):
        path = out / f"instance_{j:04d}.txt"
        with open(path, "w") as fh:
            write_instance(fh, sample_fixed(sc, N, K, rng))
        paths.append(path)
    return paths


def cmd_import_instance(args, vals, out: Path) -> list[Path]:
    if args.instance is None:
        raise ConfigError("import-instance needs --instance FILE")
    with open(args.instance) as fh:
        inst = read_instance(fh)
    mode = vals["mode"]
    rows: list[tuple[str, float | None]] = []
    if args.checkpoint is not None:
        params = _load_model(args.checkpoint, vals, args.mode is not None)
        mode = params.mode
        rng = cell_rng(vals["seed"], TAG_TRAJECTORY, inst.N, inst.K, 0.0)
        rows.append(("bgnn", bmp_forward(inst, params, rng)[-1].utility))
    for name in vals["eval.baselines"] or (REFERENCE[mode],):
        if name == "dnn":
            raise ConfigError("the naive DNN baseline needs a trained grid; use eval")
        try:
            rows.append((name, run_baseline(name, inst, mode)))
        except InfeasibleError:
            rows.append((name, None))
    path = out / "instance_eval.csv"
    with open(path, "w") as fh:
        fh.write(csv_preamble("instance", vals))
        fh.write(f"# N={inst.N} K={inst.K} power={float(inst.power)!r} "
                 f"noise_var={float(inst.noise_var)!r}\n")
        fh.write(f"method,utility[{RATE_UNIT}]\n")
        for name, u in rows:
            fh.write(f"{name},{'infeasible' if u is None else _num(u)}\n")
    return [path]


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "generalize": cmd_generalize,
    "trajectory": cmd_trajectory,
    "export-instance": cmd_export_instance,
    "import-instance": cmd_import_instance,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bgnn-beam", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="flat key=value config file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key (repeatable)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    ap.add_argument("--mode", choices=bc.MODES)
    ap.add_argument("--layout", choices=LAYOUTS)
    ap.add_argument("--baselines", help=f"comma list from {','.join(BASELINES)}")
    ap.add_argument("--checkpoint", help="trained model (eval, generalize, trajectory, import)")
    ap.add_argument("--instance", help="instance file (trajectory, import-instance)")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for grid cells")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_pairs = {}
        if args.config is not None:
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
            file_pairs = parse_assignments(text.splitlines(), args.config)
        set_pairs = parse_assignments(args.set, "--set")
        flags = {"seed": args.seed, "mode": args.mode, "scenario.layout": args.layout,
                 "eval.baselines": None if args.baselines is None else _names(args.baselines)}
        vals = resolve_config(args.profile, file_pairs, set_pairs, flags)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(args.command, vals, vals["seed"], code_version(), _now())
        paths = COMMANDS[args.command](args, vals, out)
        manifest.finished = _now()
        manifest.outputs = [p.name for p in paths]
        manifest.write(out)
        log.info("%s finished; config digest %s", args.command, config_digest(vals))
        for p in paths:
            print(p)
        return EXIT_OK
    except (NumericError, SingularMatrixError, ConvergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ContractError, ShapeError, InvalidInstanceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BgnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

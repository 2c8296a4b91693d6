"""Command-line entry point: ``lstmiss <subcommand> ...``.

Subcommands follow the identification and verification workflow::

    gen-data -> train -> verify-iss -> reach / sweep, with simulate-plant and fit

Every run writes a manifest (argv, resolved options, seeds, file digests,
version, timings) next to its outputs. Output files default to
``$LSTMISS_OUTDIR`` or the working directory. Exit codes: 0 success,
1 usage or input error, 2 certificate failure (``verify-iss`` only).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import warnings
from pathlib import Path

from . import __version__
from ._backend import BACKEND
from .lstm import ContractError, LstmParams, Model
from .plant import PhPlantConfig, PlantError, benchmark_dataset, norms_from_json, simulate_plant
from .scenario import (LstmSystem, PlantSystem, ScenarioError, ScenarioSpec, estimate_rho,
                       required_scenarios, sweep_rho)
from .signals import CsvFormatError, MprsClass, read_io_csv, write_io_csv
from .stability import analytic_state_bound, iss_check_stack
from .training import TrainConfig, TrainingFailedError, fit_index, free_run, init_params, train

OUTDIR_ENV = "LSTMISS_OUTDIR"
DEFAULT_GRID = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0"

EXIT_OK, EXIT_ERROR, EXIT_UNCERTIFIED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for the safety verdict
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _out_dir(args) -> Path:
    d = args.out_dir or os.environ.get(OUTDIR_ENV) or "."
    return Path(d)


def _out_path(args, value, default_name: str) -> Path:
    if value:
        return Path(value)
    return _out_dir(args) / default_name


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Run:
    """Collects what the manifest needs while a subcommand executes."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.inputs: dict[str, Path] = {}
        self.outputs: dict[str, Path] = {}
        self.seeds: dict[str, int] = {}
        self.config: dict = {}
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def output(self, key: str, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs[key] = path
        return path

    def timed(self, key: str, t_start: float) -> None:
        self.timings[key] = time.perf_counter() - t_start

    def write_manifest(self) -> None:
        self.timings["total_s"] = time.perf_counter() - self._t0
        path = _out_path(self.args, self.args.manifest, f"{self.args.command}.manifest.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "subcommand": self.args.command,
            "argv": self.argv,
            "version": __version__,
            "backend": BACKEND,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": {k: {"path": str(p), "sha256": _digest(p)} for k, p in self.inputs.items()},
            "outputs": {k: {"path": str(p), "sha256": _digest(p)} for k, p in self.outputs.items()},
            "timings": self.timings,
        }
        path.write_text(json.dumps(doc, indent=1) + "\n")


def _read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def _load_model(run: _Run, path) -> Model:
    run.inputs["model"] = Path(path)
    try:
        return Model.from_json(_read_json(path))
    except ContractError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _load_plant(run: _Run, path) -> PhPlantConfig:
    if path is None:
        return PhPlantConfig.load()
    run.inputs["plant_config"] = Path(path)
    try:
        return PhPlantConfig.from_json(_read_json(path))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _load_norms(run: _Run, path):
    run.inputs["norm"] = Path(path)
    doc = _read_json(path)
    try:
        return norms_from_json(doc)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{path}: bad normalization document ({exc})") from None


def _parse_grid(text: str) -> list[float]:
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--grid must be comma-separated numbers, got {text!r}") from None
    if not grid:
        raise UsageError("--grid is empty")
    return grid


def _fmt(v: float) -> str:
    return repr(float(v))


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args, run: _Run) -> int:
    cfg = _load_plant(run, args.plant_config)
    run.seeds["data"] = args.seed
    run.config = {"n_train": args.n_train, "n_val": args.n_val, "noise_frac": args.noise_frac,
                  "plant": cfg.to_json()}
    t = time.perf_counter()
    ds = benchmark_dataset(cfg, args.seed, args.n_train, args.n_val, args.noise_frac)
    run.timed("simulate_s", t)
    (ut, yt), (uv, yv) = ds.train, ds.val
    write_io_csv(run.output("train", _out_path(args, args.train_out, "train.csv")), ut, yt)
    write_io_csv(run.output("val", _out_path(args, args.val_out, "val.csv")), uv, yv)
    norm_path = run.output("norm", _out_path(args, args.norm_out, "norm.json"))
    norm_path.write_text(json.dumps(ds.norm_json(), indent=1) + "\n")
    print(json.dumps({"train": str(run.outputs["train"]), "val": str(run.outputs["val"]),
                      "norm": str(norm_path), **ds.norm_json()}))
    return EXIT_OK


def _read_dataset(run: _Run, key: str, path):
    run.inputs[key] = Path(path)
    u, y = read_io_csv(path)
    if u.shape[1] == 0 or y.shape[1] == 0:
        raise UsageError(f"{path}: line 1: need at least one u and one y column")
    return u, y


def cmd_train(args, run: _Run) -> int:
    u, y = _read_dataset(run, "train", args.data)
    norm = _read_json(args.norm) if args.norm else None
    if args.norm:
        run.inputs["norm"] = Path(args.norm)
    config = TrainConfig(max_iterations=args.iterations, lr=args.lr, lr_final=args.lr_final,
                         delta_min=args.delta_min, washout=args.washout,
                         truncation=args.truncation, init_scale=args.init_scale, seed=args.seed)
    if config.washout >= u.shape[0]:
        raise UsageError(f"washout {config.washout} is not shorter than the {u.shape[0]}-sample dataset")
    run.seeds["init"] = args.seed
    run.config = {"nx": args.nx, **{k: getattr(config, k) for k in config.__dataclass_fields__}}
    t = time.perf_counter()
    p0 = init_params(args.nx, u.shape[1], y.shape[1], config)
    p, hist = train(p0, (u, y), config)
    run.timed("train_s", t)
    model_path = run.output("model", _out_path(args, args.model_out, "model.json"))
    Model(p, norm).save(model_path)
    hist_path = run.output("history", _out_path(args, args.history_out, "history.csv"))
    with open(hist_path, "w") as fh:
        fh.write("iter,loss,lhs1,lhs2\n")
        for k, L, a, b in hist.rows():
            fh.write(f"{k},{_fmt(L)},{_fmt(a)},{_fmt(b)}\n")
    cert = iss_check_stack(p)
    report = {"model": str(model_path), "best_iteration": hist.best_iteration,
              "train_loss": hist.best_loss, "lhs1": cert.lhs1, "lhs2": cert.lhs2, "delta": cert.delta}
    if args.val:
        uv, yv = _read_dataset(run, "val", args.val)
        ym = free_run(p, uv)
        if args.fit_washout >= len(yv):
            raise UsageError("--fit-washout is not shorter than the validation set")
        report["val_fit"] = fit_index(yv[args.fit_washout:], ym[args.fit_washout:])
    print(json.dumps(report))
    return EXIT_OK


def cmd_verify_iss(args, run: _Run) -> int:
    model = _load_model(run, args.model)
    run.config = {"u_sup": args.u_sup}
    cert = iss_check_stack(model.network)
    report = cert.to_json()
    if cert.is_iss and isinstance(model.network, LstmParams):
        rate, radius = analytic_state_bound(model.network, args.u_sup)
        report["analytic_bound"] = {"rate": rate, "radius": radius}
    else:
        report["analytic_bound"] = None
    text = json.dumps(report, indent=1)
    if args.report:
        path = run.output("report", Path(args.report))
        path.write_text(text + "\n")
    print(text)
    return EXIT_OK if cert.is_iss else EXIT_UNCERTIFIED


def _reach_system(args, run: _Run):
    if (args.model is None) == (not args.plant):
        raise UsageError("give exactly one of --model or --plant")
    if args.model is not None:
        model = _load_model(run, args.model)
        return "lstm", LstmSystem(model.network)
    if not args.norm:
        raise UsageError("--plant needs --norm (the dataset normalization file)")
    cfg = _load_plant(run, args.plant_config)
    nu, ny = _load_norms(run, args.norm)
    return "plant", PlantSystem(cfg, nu, ny)


def _scenario_spec(args, run: _Run) -> ScenarioSpec:
    n_req = required_scenarios(args.epsilon, args.beta)
    N = args.n if args.n is not None else n_req
    cls = MprsClass(1.0, args.tau, args.ts, args.dwell_min, args.dwell_max)
    spec = ScenarioSpec(epsilon=args.epsilon, beta_conf=args.beta, N=N, tau=args.tau,
                        x0_box=args.x0_box, input_class=cls, master_seed=args.seed,
                        certified=N >= n_req)
    run.seeds["master"] = args.seed
    run.config.update({"epsilon": args.epsilon, "beta": args.beta, "N": N, "N_required": n_req,
                       "tau": args.tau, "x0_box": args.x0_box, "Ts": args.ts,
                       "dwell_min_s": args.dwell_min, "dwell_max_s": args.dwell_max,
                       "workers": args.workers})
    return spec


def cmd_reach(args, run: _Run) -> int:
    name, system = _reach_system(args, run)
    spec = _scenario_spec(args, run)
    run.config["system"] = name
    t = time.perf_counter()
    if args.grid is not None:
        grid = _parse_grid(args.grid)
        run.config["grid"] = grid
        res = sweep_rho(system, spec, grid, workers=args.workers, return_results=True)
        doc = {"system": name, "results": [{"rho_u": r, **rr.to_json()} for r, rr in res]}
        curve = [(r, rr.rho_star) for r, rr in res]
    else:
        run.config["rho_u"] = args.rho_u
        rr = estimate_rho(system, spec.with_rho(args.rho_u), workers=args.workers)
        doc = {"system": name, "rho_u": args.rho_u, **rr.to_json()}
        curve = [(args.rho_u, rr.rho_star)]
    run.timed("scenarios_s", t)
    if args.csv:
        path = run.output("csv", Path(args.csv))
        with open(path, "w") as fh:
            fh.write("rho_u,rho_star\n")
            for r, v in curve:
                fh.write(f"{_fmt(r)},{_fmt(v)}\n")
    text = json.dumps(doc, indent=1)
    if args.result:
        run.output("result", Path(args.result)).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_sweep(args, run: _Run) -> int:
    systems = []
    if args.model is not None:
        systems.append(("lstm", LstmSystem(_load_model(run, args.model).network)))
    if args.plant:
        if not args.norm:
            raise UsageError("--plant needs --norm (the dataset normalization file)")
        nu, ny = _load_norms(run, args.norm)
        systems.append(("plant", PlantSystem(_load_plant(run, args.plant_config), nu, ny)))
    if not systems:
        raise UsageError("give --model, --plant or both")
    spec = _scenario_spec(args, run)
    grid = _parse_grid(args.grid)
    run.config.update({"grid": grid, "systems": [n for n, _ in systems]})
    curves = {}
    for name, system in systems:
        t = time.perf_counter()
        curves[name] = [v for _, v in sweep_rho(system, spec, grid, workers=args.workers)]
        run.timed(f"{name}_s", t)
    path = run.output("csv", _out_path(args, args.csv, "sweep.csv"))
    with open(path, "w") as fh:
        fh.write(",".join(["rho_u"] + [f"rho_star_{n}" for n in curves]) + "\n")
        for g, r in enumerate(grid):
            fh.write(",".join([_fmt(r)] + [_fmt(curves[n][g]) for n in curves]) + "\n")
    if args.plot:
        _plot_sweep(run.output("plot", Path(args.plot)), grid, curves)
    print(json.dumps({"rho_u": grid, **curves, "csv": str(path)}))
    return EXIT_OK


def _plot_sweep(path: Path, grid, curves) -> None:
    try:
        import matplotlib
    except ImportError:
        raise UsageError("--plot needs matplotlib (pip install 'artifact[plot]')") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, vals in curves.items():
        ax.plot(grid, vals, "o-", label=name)
    ax.set_xlabel(r"$\rho_u$")
    ax.set_ylabel(r"$\rho_y^*$ (normalized)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def cmd_simulate_plant(args, run: _Run) -> int:
    cfg = _load_plant(run, args.plant_config)
    run.inputs["input"] = Path(args.input)
    u, _ = read_io_csv(args.input)
    if u.shape[1] != 1:
        raise UsageError(f"{args.input}: line 1: the plant has one input, file has {u.shape[1]}")
    run.config = {"u0": args.u0, "plant": cfg.to_json()}
    state0 = cfg.equilibrium(args.u0)
    t = time.perf_counter()
    states, ph = simulate_plant(cfg, state0, u[:, 0])
    run.timed("simulate_s", t)
    path = run.output("output", _out_path(args, args.output, "plant.csv"))
    write_io_csv(path, u, ph[:-1])
    print(json.dumps({"output": str(path), "samples": int(u.shape[0]),
                      "final_state": dict(zip(("Wa", "Wb", "h"), states[-1].tolist()))}))
    return EXIT_OK


def cmd_fit(args, run: _Run) -> int:
    run.inputs["reference"] = Path(args.reference)
    run.inputs["model"] = Path(args.model_output)
    _, yr = read_io_csv(args.reference)
    _, ym = read_io_csv(args.model_output)
    if yr.shape != ym.shape:
        raise UsageError(f"output shapes differ: {args.reference} {yr.shape} vs {args.model_output} {ym.shape}")
    if args.washout >= len(yr):
        raise UsageError("--washout is not shorter than the trajectories")
    run.config = {"washout": args.washout}
    fit = fit_index(yr[args.washout:], ym[args.washout:])
    print(f"{fit:.10g}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--out-dir", help=f"default directory for outputs (else ${OUTDIR_ENV} or .)")
    p.add_argument("--manifest", help="manifest path (default <out-dir>/<subcommand>.manifest.json)")


def _add_scenario(p, seed_required=True):
    p.add_argument("--model", help="model JSON file")
    p.add_argument("--plant", action="store_true", help="use the pH plant as the system")
    p.add_argument("--plant-config", help="plant config JSON (default: packaged surrogate)")
    p.add_argument("--norm", help="normalization JSON from gen-data (needed with --plant)")
    p.add_argument("--epsilon", type=float, default=1e-2)
    p.add_argument("--beta", type=float, default=1e-6)
    p.add_argument("--n", type=int, help="scenario count (default: smallest certified N)")
    p.add_argument("--tau", type=int, default=2000, help="horizon in steps")
    p.add_argument("--x0-box", type=float, default=0.1, help="half-width of the initial-state box")
    p.add_argument("--ts", type=float, default=10.0, help="sample time in seconds")
    p.add_argument("--dwell-min", type=float, default=300.0, help="shortest MPRS dwell in seconds")
    p.add_argument("--dwell-max", type=float, default=2000.0, help="longest MPRS dwell in seconds")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, required=seed_required)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lstmiss", description="ISS-certified LSTM identification and scenario reachability")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="simulate the pH plant and write train/val CSVs")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--plant-config")
    p.add_argument("--n-train", type=int, default=4400)
    p.add_argument("--n-val", type=int, default=2250)
    p.add_argument("--noise-frac", type=float, default=0.01)
    p.add_argument("--train-out")
    p.add_argument("--val-out")
    p.add_argument("--norm-out")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train an LSTM with the ISS certificate enforced")
    p.add_argument("--data", required=True, help="training CSV (k,u1..,y1..)")
    p.add_argument("--val", help="validation CSV; reports FIT")
    p.add_argument("--norm", help="normalization JSON to embed in the model")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--nx", type=int, default=5)
    d = TrainConfig()
    p.add_argument("--iterations", type=int, default=d.max_iterations)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--lr-final", type=float, default=d.lr_final)
    p.add_argument("--delta-min", type=float, default=d.delta_min)
    p.add_argument("--washout", type=int, default=d.washout)
    p.add_argument("--truncation", type=int, default=d.truncation)
    p.add_argument("--init-scale", type=float, default=d.init_scale)
    p.add_argument("--fit-washout", type=int, default=100)
    p.add_argument("--model-out")
    p.add_argument("--history-out")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify-iss", help="check the ISS certificate of a model (exit 2 if it fails)")
    p.add_argument("--model", required=True)
    p.add_argument("--u-sup", type=float, default=1.0, help="input bound for the analytic state bound")
    p.add_argument("--report", help="write the report JSON here")
    _add_common(p)
    p.set_defaults(func=cmd_verify_iss)

    p = sub.add_parser("reach", help="scenario estimate of the output reachable-set radius")
    _add_scenario(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--rho-u", type=float, default=1.0)
    g.add_argument("--grid", help="comma-separated rho_u values")
    p.add_argument("--csv", help="two-column CSV (rho_u, rho_star)")
    p.add_argument("--result", help="write the result JSON here")
    _add_common(p)
    p.set_defaults(func=cmd_reach)

    p = sub.add_parser("sweep", help="rho_star over a rho_u grid for the model and/or the plant")
    _add_scenario(p)
    p.add_argument("--grid", default=DEFAULT_GRID)
    p.add_argument("--csv")
    p.add_argument("--plot", help="PNG image of the curves (needs matplotlib)")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate-plant", help="run the plant on an input CSV")
    p.add_argument("--input", required=True, help="CSV with k,u1 (plant-normalized input in [-1, 1])")
    p.add_argument("--plant-config")
    p.add_argument("--u0", type=float, default=0.0, help="start from the steady state for this input")
    p.add_argument("--output")
    _add_common(p)
    p.set_defaults(func=cmd_simulate_plant)

    p = sub.add_parser("fit", help="FIT index between two trajectory CSVs")
    p.add_argument("reference")
    p.add_argument("model_output")
    p.add_argument("--washout", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_fit)
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    run = _Run(args, argv)
    warnings.formatwarning = lambda msg, cat, *a, **k: f"lstmiss {args.command}: warning: {msg}\n"
    try:
        code = args.func(args, run)
        run.write_manifest()
    except (UsageError, CsvFormatError, ContractError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"lstmiss {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, PlantError, ScenarioError, TrainingFailedError) as exc:
        print(f"lstmiss {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Config-driven command line interface.

Every command reads an optional JSON config, fills schema defaults, writes
the resolved config next to its CSV/JSON outputs and exits with 0 on
success, 1 on input errors and 2 on runtime or solver errors.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import os
import sys
import time
from typing import Any, Optional

import jsonschema
import numpy as np

from .errors import FrameNetError, InputError, UnsupportedError

# --------------------------------------------------------------------------
# schemas

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT1 = {"type": "integer", "minimum": 1}
_SEED = {"type": "integer", "minimum": 0, "default": 0}

_DARCY = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"const": "darcy", "default": "darcy"},
        "d": {"type": "integer", "minimum": 1, "default": 2},
        "n_per_dim": {"type": "integer", "minimum": 4, "default": 32},
        "s": {**_POS, "default": 4.0},
        "t0": {"type": "number", "minimum": 0, "maximum": 1, "default": 0.0},
        "tau2": {**_POS, "default": 0.05},
        "n_in": {**_INT1, "default": 13},
        "n_out": {**_INT1, "default": 13},
        "R": {"type": ["number", "null"], "default": None},
        "abar": {**_POS, "default": 2.0},
        "a_min": {**_POS, "default": 0.5},
        "rhs_amplitude": {**_NUM, "default": 1.0},
        "sigma": {"type": "number", "minimum": 0, "default": 0.01},
        "noise_model": {"enum": ["white", "subgaussian"], "default": "white"},
        "tol": {**_POS, "default": 1e-10},
    },
}

_REGRESSION = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"const": "regression"},
        "sigma": {"type": "number", "minimum": 0, "default": 1.0},
        "noise_model": {"enum": ["white", "subgaussian"], "default": "white"},
    },
    "required": ["kind"],
}

_PROBLEM = {
    "type": "object",
    "if": {"properties": {"kind": {"const": "regression"}}, "required": ["kind"]},
    "then": _REGRESSION,
    "else": _DARCY,
    "default": {"kind": "darcy"},
}

_ARCH = {
    "type": "object",
    "additionalProperties": False,
    "default": {},
    "properties": {
        "C_L": {"type": "number", "minimum": 1, "default": 1.0},
        "C_p": {"type": "number", "minimum": 1, "default": 1.0},
        "C_s": {"type": "number", "minimum": 1, "default": 4.0},
        "M": {"type": "number", "minimum": 1, "default": 1.0},
        "B": {"type": "number", "minimum": 1, "default": 1.0},
        "activation": {"type": "string", "pattern": "^(relu|repu[0-9]*)$", "default": "relu"},
        "family": {"enum": ["sparse", "fully_connected"], "default": "fully_connected"},
    },
}

_TRAIN = {
    "type": "object",
    "additionalProperties": False,
    "default": {},
    "properties": {
        "lr": {**_POS, "default": 0.01},
        "epochs": {**_INT1, "default": 2000},
        "restarts": {**_INT1, "default": 2},
        "init_scale": {**_POS, "default": 1.0},
        "grad_clip": {**_POS, "default": 10.0},
    },
}

SCHEMAS: dict[str, dict] = {
    "rates": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "seed": _SEED,
            "torus": {
                "type": "array",
                "default": [{"s": 4.0, "d": 2, "t0": 0.0}],
                "items": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["s", "d"],
                    "properties": {
                        "s": _POS, "d": {"type": "integer", "minimum": 2},
                        "t0": {"type": "number", "minimum": 0, "maximum": 1, "default": 0.0},
                        "tau2": {"type": "number", "minimum": 0, "default": 0.0},
                        "linf_variant": {"type": "boolean", "default": False},
                    },
                },
            },
            "delta_n": {
                "type": "object",
                "additionalProperties": False,
                "default": {},
                "properties": {
                    "N": {**_INT1, "default": 10},
                    "n": {"type": "array", "items": _INT1, "default": [100, 1000, 10000, 100000, 1000000]},
                    "sigma": {"type": "number", "minimum": 0, "default": 1.0},
                    "C": {**_POS, "default": 1.0},
                    "regime": {"enum": ["chaining", "alpha_entropy", "entropy_count",
                                        "subgaussian_no_chaining"], "default": "chaining"},
                    "alpha": {"type": ["number", "null"], "default": None},
                },
            },
        },
    },
    "solve": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "seed": _SEED,
            "problem": {**_DARCY, "default": {}},
            "coefficients": {"type": ["array", "null"], "items": _NUM, "default": None},
        },
    },
    "gen-data": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "seed": _SEED,
            "problem": {**_DARCY, "default": {}},
            "n": {**_INT1, "default": 100},
        },
    },
    "construct": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "seed": _SEED,
            "kind": {"enum": ["mult", "prod", "poly", "legendre", "tensor"], "default": "mult"},
            "activation": {"type": "string", "pattern": "^(relu|repu2?)$", "default": "relu"},
            "delta": {**_POS, "default": 0.01},
            "D": {**_POS, "default": 2.0},
            "N": {**_INT1, "default": 4},
            "j": {"type": "integer", "minimum": 0, "default": 3},
            "coeffs": {"type": "array", "items": _NUM, "default": [0.0, 0.0, 1.0]},
            "indices": {
                "type": "array",
                "items": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "default": [[0, 0], [1, 0], [0, 1], [1, 1], [2, 0], [0, 2]],
            },
        },
    },
    "train": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "seed": _SEED,
            "problem": _PROBLEM,
            "n": {**_INT1, "default": 200},
            "kappa": {**_POS, "default": 1.0},
            "N": {"type": ["integer", "null"], "minimum": 1, "default": None},
            "architecture": _ARCH,
            "training": _TRAIN,
            "mc_samples": {"type": "integer", "minimum": 2, "default": 1000},
        },
    },
    "study": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "seed": _SEED,
            "problem": _PROBLEM,
            "n_grid": {"type": "array", "items": _INT1, "minItems": 1, "default": [100, 400, 1600]},
            "reps": {**_INT1, "default": 3},
            "kappa": {**_POS, "default": 1.0},
            "architecture": _ARCH,
            "training": _TRAIN,
            "mc_samples": {"type": "integer", "minimum": 2, "default": 1000},
            "surrogate_N": {"type": "array", "items": _INT1, "default": []},
            "surrogate_t": {**_POS, "default": 1.0},
        },
    },
    "verify": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "seed": _SEED,
            "legendre_max_degree": {"type": "integer", "minimum": 0, "default": 8},
            "repu_max_factors": {"type": "integer", "minimum": 2, "default": 8},
        },
    },
}


def _fill_defaults(schema: dict, value: Any) -> Any:
    if isinstance(value, dict):
        if "if" in schema:
            schema = schema["then"] if value.get("kind") == "regression" else schema["else"]
        out = dict(value)
        for key, sub in schema.get("properties", {}).items():
            if key not in out and "default" in sub:
                out[key] = copy.deepcopy(sub["default"])
            if key in out:
                out[key] = _fill_defaults(sub, out[key])
        return out
    if isinstance(value, list) and isinstance(schema.get("items"), dict):
        return [_fill_defaults(schema["items"], v) for v in value]
    return value


def resolve_config(command: str, raw: Optional[dict]) -> dict:
    """Validate ``raw`` against the command schema and fill every default.

    Raises
    ------
    InputError
        With the JSON path of the offending key.
    """
    if command not in SCHEMAS:
        raise InputError(f"unknown command {command!r}")
    schema = SCHEMAS[command]
    raw = {} if raw is None else raw
    for stage in (raw, None):
        value = raw if stage is not None else _fill_defaults(schema, raw)
        try:
            jsonschema.validate(value, schema)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise InputError(f"config error at {path}: {exc.message}") from None
        if stage is None:
            return value
    raise AssertionError("unreachable")


def load_config(command: str, path: Optional[str]) -> dict:
    if path is None:
        return resolve_config(command, {})
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}") from None
    return resolve_config(command, raw)


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# helpers


def _write(out: Optional[str], name: str, text: str) -> None:
    if out is None:
        return
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, name), "w") as fh:
        fh.write(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _darcy(block: dict):
    from .darcy import make_darcy_problem

    keys = ("d", "n_per_dim", "s", "t0", "tau2", "n_in", "n_out", "R", "abar", "a_min", "rhs_amplitude", "tol")
    return make_darcy_problem(**{k: block[k] for k in keys})


def _problem(block: dict, threads: int):
    from .erm import OperatorProblem, RegressionProblem

    if block["kind"] == "regression":
        return RegressionProblem(sigma=block["sigma"], noise_model=block["noise_model"])
    return OperatorProblem(_darcy(block), block["sigma"], block["noise_model"], threads)


def _arch(block: dict):
    from .model import ArchitectureConfig

    return ArchitectureConfig(**block)


def _train_cfg(block: dict, seed: int):
    from .erm import TrainConfig

    return TrainConfig(seed=seed, **block)


# --------------------------------------------------------------------------
# commands


def cmd_rates(cfg: dict, out: Optional[str], threads: int) -> int:
    from .rates import predict_delta_n, rate_exponent, torus_rate

    rows = []
    for case in cfg["torus"]:
        r0, kappa = torus_rate(case["s"], case["d"], case["t0"], case["tau2"], case["linf_variant"])
        rows.append((case["s"], case["d"], case["t0"], r0, kappa, rate_exponent(kappa)))
    text = _csv(["s", "d", "t0", "r0", "kappa", "rate"], rows)
    dn = cfg["delta_n"]
    drows = [(dn["N"], n, predict_delta_n(dn["N"], n, dn["sigma"], dn["C"], dn["regime"], dn["alpha"]))
             for n in dn["n"]]
    dtext = _csv(["N", "n", "delta_n"], drows)
    _write(out, "rates.csv", text)
    _write(out, "delta_n.csv", dtext)
    sys.stdout.write(text + dtext)
    return 0


def cmd_solve(cfg: dict, out: Optional[str], threads: int) -> int:
    from .darcy import coeffs_to_field, energy_identity, solve_darcy

    problem = _darcy(cfg["problem"])
    if cfg["coefficients"] is None:
        x, _ = problem.sample_inputs(1, cfg["seed"])
        x = x[0]
    else:
        x = np.asarray(cfg["coefficients"], dtype=float)
        if x.size != problem.p0:
            raise InputError(f"coefficients has length {x.size}, expected {problem.p0}")
    a = problem.coefficient_fields(x[None])[0]
    t0 = time.perf_counter()
    u, info = solve_darcy(a, problem.f, problem.tol, return_info=True)
    elapsed = time.perf_counter() - t0
    lhs, rhs = energy_identity(a, u, problem.f)
    report = {"iterations": info.iterations, "relative_residual": float(info.residual),
              "energy_lhs": lhs, "energy_rhs": rhs, "seconds": elapsed, "min_a": float(a.min())}
    from .darcy import field_to_coeffs

    y = field_to_coeffs(u, problem.y_frame)
    _write(out, "report.json", json.dumps(report, indent=2, sort_keys=True))
    _write(out, "solution.csv", _csv(["value"], [(float(v),) for v in u.reshape(-1)]))
    _write(out, "coefficients.csv", _csv([f"y{j}" for j in range(y.size)], [tuple(float(v) for v in y)]))
    sys.stdout.write(json.dumps(report, sort_keys=True) + "\n")
    return 0


def cmd_gen_data(cfg: dict, out: Optional[str], threads: int) -> int:
    from .darcy import generate_dataset

    block = cfg["problem"]
    problem = _darcy(block)
    ds = generate_dataset(cfg["n"], problem, block["sigma"], block["noise_model"], cfg["seed"], threads)
    if out is not None:
        ds.save(out)
    sys.stdout.write(f"generated {len(ds)} samples with {ds.obs.shape[1]} output modes\n")
    return 0


def cmd_construct(cfg: dict, out: Optional[str], threads: int) -> int:
    from . import constructions as C

    kind, act = cfg["kind"], cfg["activation"]
    relu = act == "relu"
    if kind == "mult":
        cert = C.mult_net_relu(cfg["delta"], cfg["D"]) if relu else C.mult_net_repu(2)
    elif kind == "prod":
        cert = C.prod_net_relu(cfg["N"], cfg["delta"], cfg["D"]) if relu else C.prod_net_repu(cfg["N"], 2)
    elif kind == "poly":
        cert = C.poly_net(cfg["coeffs"], cfg["delta"], cfg["D"], act)
    elif kind == "legendre":
        cert = C.legendre_net(cfg["j"], cfg["delta"], act)
    else:
        lam = C.MultiIndexSet.from_dense(cfg["indices"])
        cert = C.tensor_legendre_net(lam, cfg["delta"], act, rng_seed=cfg["seed"])
    from .network import metrics

    m = metrics(cert.net)
    report = {"kind": kind, "activation": act, "depth": m.depth, "width": m.width, "size": m.size,
              "mpar": m.mpar, "certified_sup_error": cert.certified_sup_error,
              "verified_error": cert.verified_error, "domain_bound": cert.domain_bound}
    _write(out, "network.json", json.dumps(cert.to_dict()))
    _write(out, "certificate.json", json.dumps(report, indent=2, sort_keys=True))
    sys.stdout.write(json.dumps(report, sort_keys=True) + "\n")
    return 0


def cmd_train(cfg: dict, out: Optional[str], threads: int) -> int:
    from .erm import empirical_risk, l2_gamma_error, train_erm
    from .model import model_to_json
    from .rates import sample_schedule

    problem = _problem(cfg["problem"], threads)
    data_ss, train_ss, eval_ss = np.random.SeedSequence(cfg["seed"]).spawn(3)
    data = problem.sample(cfg["n"], data_ss)
    N = cfg["N"] or sample_schedule(cfg["n"], cfg["kappa"])
    train_cfg = _train_cfg(cfg["training"], int(train_ss.generate_state(1)[0]))
    model, log = train_erm(_arch(cfg["architecture"]), N, data, train_cfg, problem.x_frame,
                           problem.scaling, problem.decoder, problem.p0, problem.out_dim, return_log=True)
    X, T = problem.eval_set(cfg["mc_samples"], eval_ss)
    mse, se = l2_gamma_error(model, T, x=X)
    report = {"n": cfg["n"], "N": N, "train_risk": empirical_risk(model, data), "mse": mse, "se": se,
              "restart_risks": log.final_risk, "best_restart": log.best_restart}
    _write(out, "model.json", model_to_json(model))
    _write(out, "report.json", json.dumps(report, indent=2, sort_keys=True))
    sys.stdout.write(json.dumps(report, sort_keys=True) + "\n")
    return 0


def cmd_study(cfg: dict, out: Optional[str], threads: int) -> int:
    from .erm import rate_study, surrogate_study, write_study

    problem = _problem(cfg["problem"], threads)
    study = rate_study(problem, cfg["n_grid"], cfg["reps"], cfg["kappa"],
                       _train_cfg(cfg["training"], cfg["seed"]), _arch(cfg["architecture"]),
                       cfg["mc_samples"], cfg["seed"], threads)
    if out is not None:
        write_study(study, out)
    summary = study.summary()
    if cfg["surrogate_N"]:
        if cfg["problem"]["kind"] != "darcy":
            raise InputError("surrogate_N requires the darcy problem")
        sur = surrogate_study(problem, cfg["surrogate_N"], t=cfg["surrogate_t"], mc_samples=cfg["mc_samples"],
                              seed=cfg["seed"])
        _write(out, "surrogate.csv", sur.to_csv())
        summary["surrogate_nonincreasing"] = sur.nonincreasing()
    sys.stdout.write(study.to_csv())
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return 0


def verification_suite(legendre_max_degree: int = 8, repu_max_factors: int = 8, seed: int = 0) -> list[tuple]:
    """Run every constructive certificate; rows ``(name, measured, tolerance, mpar, passed)``."""
    from . import constructions as C
    from .network import metrics

    rows = []

    def record(name, build, tol, mpar_cap=None):
        try:
            cert = build()
            mp = metrics(cert.net).mpar
            ok = cert.verified_error is not None and cert.verified_error <= tol
            if mpar_cap is not None:
                ok = ok and mp <= mpar_cap
            rows.append((name, float(cert.verified_error), tol, mp, bool(ok)))
        except (AssertionError, FrameNetError) as exc:
            rows.append((name, float("nan"), tol, float("nan"), False))
            sys.stderr.write(f"{name}: {exc}\n")

    for delta, D in ((1e-2, 2.0), (1e-3, 4.0)):
        record(f"mult_relu_{delta:g}_{D:g}", lambda: C.mult_net_relu(delta, D), delta, 1.0)
    record("mult_repu2", lambda: C.mult_net_repu(2), 1e-10)
    for N in range(2, repu_max_factors + 1):
        record(f"prod_repu2_{N}", lambda: C.prod_net_repu(N, 2), 1e-10)
    for N in (3, 5, 8):
        record(f"prod_relu_{N}", lambda: C.prod_net_relu(N, 1e-2, 1.0), 1e-2, 1.0)
    for j in range(legendre_max_degree + 1):
        record(f"legendre_relu_{j}", lambda: C.legendre_net(j, 1e-3), 1e-3, 1.0)
    lam = C.MultiIndexSet.from_dense([[0, 0], [1, 0], [0, 1], [1, 1], [2, 0], [0, 2]])
    record("tensor_relu", lambda: C.tensor_legendre_net(lam, 1e-2, "relu", n_inputs=3, rng_seed=seed), 1e-2, 1.0)
    record("tensor_repu2", lambda: C.tensor_legendre_net(lam, 1e-2, "repu2", n_inputs=3, rng_seed=seed), 1e-10)
    return rows


def cmd_verify(cfg: dict, out: Optional[str], threads: int) -> int:
    rows = verification_suite(cfg["legendre_max_degree"], cfg["repu_max_factors"], cfg["seed"])
    text = _csv(["name", "measured", "tolerance", "mpar", "passed"], rows)
    _write(out, "verify.csv", text)
    sys.stdout.write(text)
    return 0 if all(r[4] for r in rows) else 2


COMMANDS = {
    "rates": cmd_rates,
    "solve": cmd_solve,
    "gen-data": cmd_gen_data,
    "construct": cmd_construct,
    "train": cmd_train,
    "study": cmd_study,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="framenet", description="FrameNet operator-learning experiments")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON config file (defaults are filled in)")
    parser.add_argument("--out", help="output directory for CSV/JSON artifacts")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for data and studies")
    return parser


def run(command: str, config_path: Optional[str] = None, out: Optional[str] = None,
        seed: Optional[int] = None, threads: int = 1) -> int:
    """Execute one command and return its exit status."""
    try:
        cfg = load_config(command, config_path)
        if seed is not None:
            if seed < 0:
                raise InputError("seed must be nonnegative")
            cfg["seed"] = seed
        if threads < 1:
            raise InputError("threads must be at least 1")
        _write(out, "config.json", dump_config(cfg))
        return COMMANDS[command](cfg, out, threads)
    except (InputError, UnsupportedError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except FrameNetError as exc:
        sys.stderr.write(f"runtime error: {type(exc).__name__}: {exc}\n")
        return 2


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``brlab <subcommand> [options]``.

Every option has a default, may also be given in a ``key=value`` config file
(``--config``; ``#`` starts a comment) and is overridden by an explicit flag.
The fully materialized configuration is written into the output metadata as
``config.<key>=<value>`` lines, which parse back to the same configuration.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 selftest failure.
"""

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .ensembles import EnsembleSpec, ModelSpec
from .errors import BadMatrixFile, BetheLabError, IoError, MissingRequired, NumericalError, UnknownFlag, UsageError
from .io import FORMATS, Records, emit_records, format_value, read_csv_metadata
from .lyapunov import estimate_L, free_L0, spectral_sets
from .moments import estimate_phi
from .pool import PoolConfig, prepare_pool
from .resonance import DIAGONAL, FREE, POOL, QUANTILE, ResonanceConfig, gamma_quantile, moment_statistics, pz_probability, simon_wolff_sum
from .rng import RngStream
from .tree import as_z

SUBCOMMANDS = ("sets", "lyapunov", "phase", "phi", "resonance", "sw", "selftest")
NEEDS_ENERGY = ("lyapunov", "phase", "phi", "resonance", "sw")
SYM_TOL = 1e-12


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _opt_float_list(text):
    return None if text in (None, "", "none") else _float_list(text)


def _opt_float(text):
    return None if text in (None, "", "none") else float(text)


def _opt_str(text):
    return None if text in (None, "", "none") else str(text)


def _choice(*options):
    def parse(text):
        if text not in options:
            raise UsageError(f"{text!r} is not one of {options}")
        return text

    parse.__name__ = "one of " + "/".join(options)
    return parse


# key, type, default, help
KNOBS = (
    ("K", int, 2, "branching number"),
    ("W", int, 1, "block size"),
    ("A", str, "zero", "deterministic block: zero | diag:v1,...,vW | rows:a,b;c,d | file:<path>"),
    ("ensemble", _choice("goe", "cauchy", "diag"), "goe", "disorder ensemble"),
    ("scale", float, 1.0, "ensemble scale"),
    ("lambda", float, 0.0, "disorder coupling"),
    ("E", _opt_float_list, None, "energies (comma separated)"),
    ("E_min", _opt_float, None, "energy grid start"),
    ("E_max", _opt_float, None, "energy grid end"),
    ("E_step", float, 0.1, "energy grid step"),
    ("eta", float, 1e-3, "imaginary part of z"),
    ("eta_ladder", _float_list, [1e-2, 1e-3, 1e-4], "eta rungs for sw"),
    ("lambdas", _opt_float_list, None, "coupling grid for phase (default: --lambda)"),
    ("eps", float, 0.0, "shrink of the spectral sets"),
    ("n", int, 2000, "ray length for Lyapunov estimates"),
    ("pool_size", int, 10_000, "population size"),
    ("burn_in", int, 1000, "population burn-in generations"),
    ("replicas", int, 32, "independent rays per estimate"),
    ("shards", int, 1, "pool shards per generation"),
    ("trees", int, 1000, "trees per resonance estimate"),
    ("s", _float_list, [0.5], "fractional exponents for phi"),
    ("d_min", int, 1, "smallest distance for phi"),
    ("d_max", int, 24, "largest distance for phi"),
    ("samples", int, 10_000, "rays per phi estimate"),
    ("delta", float, 0.05, "resonance threshold margin"),
    ("radii", _int_list, [3, 4, 5, 6], "sphere radii for resonance"),
    ("mode", _choice(DIAGONAL, QUANTILE), DIAGONAL, "resonance event mode"),
    ("boundary", _choice(FREE, POOL), FREE, "resonance tree truncation"),
    ("p", float, 0.5, "quantile level (quantile mode)"),
    ("L_ref", _opt_float, None, "Lyapunov reference for thresholds (default: estimated)"),
    ("depth", int, 8, "depth for sw"),
    ("sw_mode", _choice("exact", "ray"), "ray", "sw estimator: pool-backed rays or one finite tree"),
    ("seed", int, 0, "master seed"),
    ("format", _choice(*FORMATS), "csv", "output format"),
    ("output", str, "-", "output path ('-' for stdout)"),
    ("checkpoint", _opt_str, None, "pool checkpoint path"),
    ("resume", _opt_str, None, "resume pools from this checkpoint path"),
)
_KNOB = {k: (t, d, h) for k, t, d, h in KNOBS}


def _flag(key):
    return "--" + key.replace("_", "-")


@dataclass
class RunConfig:
    """A subcommand with every knob materialized."""

    subcommand: str
    knobs: dict

    def __getitem__(self, key):
        return self.knobs[key]

    def to_text(self):
        """``key=value`` lines that parse back to this configuration."""
        return "".join(f"{k}={format_value(self.knobs[k])}\n" for k, *_ in KNOBS)

    @property
    def model(self):
        k = self.knobs
        A = parse_matrix(k["A"], k["W"])
        return ModelSpec(k["K"], k["W"], A, EnsembleSpec(k["ensemble"], k["W"], k["scale"]), k["lambda"])

    @property
    def pool_config(self):
        k = self.knobs
        return PoolConfig(k["pool_size"], k["burn_in"], k["shards"])

    def energies(self):
        k = self.knobs
        if k["E"] is not None:
            return np.array(k["E"], dtype=float)
        if k["E_min"] is None or k["E_max"] is None:
            raise MissingRequired("give --E or both --E-min and --E-max")
        if k["E_step"] <= 0 or k["E_max"] < k["E_min"]:
            raise UsageError("energy grid needs E_step > 0 and E_max >= E_min")
        m = int(round((k["E_max"] - k["E_min"]) / k["E_step"]))
        return np.linspace(k["E_min"], k["E_max"], m + 1)


def _rows_text(A):
    return "rows:" + ";".join(",".join(repr(float(v)) for v in row) for row in A)


def _check_matrix(rows, W, origin):
    try:
        A = np.array([[float(v) for v in row] for row in rows], dtype=float)
    except ValueError as exc:
        raise BadMatrixFile(f"{origin}: non-numeric entry") from exc
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise BadMatrixFile(f"{origin}: matrix is not square")
    if A.shape[0] != W:
        raise BadMatrixFile(f"{origin}: matrix is {A.shape[0]}x{A.shape[0]}, expected W={W}")
    if np.max(np.abs(A - A.T), initial=0.0) > SYM_TOL:
        raise BadMatrixFile(f"{origin}: matrix is not symmetric")
    return 0.5 * (A + A.T)


def parse_matrix(text, W):
    """Deterministic block from its textual source."""
    text = str(text).strip()
    if text in ("", "zero", "0"):
        return np.zeros((W, W))
    kind, _, body = text.partition(":")
    if kind == "diag":
        vals = _float_list(body)
        if len(vals) != W:
            raise UsageError(f"diag: needs {W} entries, got {len(vals)}")
        return np.diag(vals)
    if kind == "rows":
        return _check_matrix([r.split(",") for r in body.split(";") if r.strip()], W, "rows")
    if kind == "file":
        try:
            lines = Path(body).read_text().splitlines()
        except OSError as exc:
            raise BadMatrixFile(f"cannot read matrix file {body}: {exc}") from exc
        return _check_matrix([ln.split() for ln in lines if ln.strip()], W, body)
    raise UsageError(f"unrecognized matrix source {text!r}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "unrecognized arguments" in message:
            raise UnknownFlag(message)
        if "required" in message:
            raise MissingRequired(message)
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="brlab", description="Random block operators on the Bethe strip.")
    parser.add_argument("--version", action="version", version=f"brlab {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand")
    sub.required = True
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None, help="key=value configuration file")
    for key, typ, default, help_ in KNOBS:
        names = [_flag(key)] + ([f"--{key}"] if "_" in key else [])
        common.add_argument(*names, dest=key, type=str, default=argparse.SUPPRESS,
                            help=f"{help_} (default: {format_value(default) or 'none'})")
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=f"run {name}")
    return parser


def parse_config_text(text, origin="config"):
    """``{key: raw text}`` from a key=value file body."""
    out = {}
    for num, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise UsageError(f"{origin}:{num}: expected key=value")
        if key not in _KNOB:
            raise UnknownFlag(f"{origin}:{num}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def _convert(key, raw):
    typ = _KNOB[key][0]
    try:
        return typ(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad value for {key}: {raw!r}") from exc


def parse_model_config(argv=None, text=None):
    """Build a ``RunConfig`` from command-line ``argv`` and/or config ``text``.

    Precedence: flags over the ``--config`` file over ``text`` over defaults.
    When ``argv`` is ``None`` the subcommand must be given in ``text`` as
    ``subcommand=<name>``.
    """
    raw = {}
    sub = None
    if text is not None:
        lines = []
        for line in text.splitlines():
            body = line.split("#", 1)[0].strip()
            if body.startswith("subcommand="):
                sub = body.partition("=")[2].strip()
            else:
                lines.append(line)
        raw.update(parse_config_text("\n".join(lines)))
    if argv is not None:
        ns = build_parser().parse_args(list(argv))
        sub = ns.subcommand
        if ns.config is not None:
            try:
                body = Path(ns.config).read_text()
            except OSError as exc:
                raise IoError(f"cannot read config {ns.config}: {exc}") from exc
            raw.update(parse_config_text(body, ns.config))
        raw.update({k: v for k, v in vars(ns).items() if k in _KNOB})
    if sub not in SUBCOMMANDS:
        raise MissingRequired(f"subcommand must be one of {SUBCOMMANDS}")
    knobs = {}
    for key, _, default, _ in KNOBS:
        knobs[key] = _convert(key, raw[key]) if key in raw else default
    knobs["A"] = _rows_text(parse_matrix(knobs["A"], knobs["W"]))
    cfg = RunConfig(sub, knobs)
    cfg.model  # validates the model fields
    if sub in NEEDS_ENERGY:
        cfg.energies()
    return cfg


def config_from_metadata(meta):
    """Rebuild a configuration from ``config.*`` metadata entries."""
    lines = [f"subcommand={meta['subcommand']}"]
    lines += [f"{k[len('config.'):]}={v}" for k, v in meta.items() if k.startswith("config.")]
    return parse_model_config(text="\n".join(lines))


def load_config_from_output(path):
    return config_from_metadata(read_csv_metadata(path))


# ---------------------------------------------------------------- subcommands


def _meta(cfg):
    meta = {"tool": "brlab", "version": __version__, "subcommand": cfg.subcommand}
    meta.update({f"config.{k}": cfg.knobs[k] for k, *_ in KNOBS})
    return meta


def _ckpt(path, index):
    return None if path is None else f"{path}.{index}"


def _pool(cfg, model, z, stream, index):
    return prepare_pool(model, z, cfg.pool_config, stream, resume=_ckpt(cfg["resume"], index),
                        checkpoint=_ckpt(cfg["checkpoint"], index))


def run_sets(cfg):
    sets = spectral_sets(cfg.model, cfg["eps"])
    rec = Records(("set", "lo", "hi", "closed"), meta=_meta(cfg))
    for name, iu in (("S_eps", sets.S_eps), ("S_eps_minus", sets.S_eps_minus), ("S_0", sets.S_0)):
        rec.meta[name] = str(iu)
        for a, b in iu.intervals:
            rec.add(name, a, b, iu.closed)
    return rec, 0


def run_lyapunov(cfg):
    model = cfg.model
    root = RngStream(cfg["seed"])
    rec = Records(("E", "eta", "lambda", "L_hat", "stderr", "n", "replicas"), meta=_meta(cfg))
    hmin = math.inf
    for i, E in enumerate(cfg.energies()):
        z = complex(E, cfg["eta"])
        stream = root.child(i)
        pool = _pool(cfg, model, z, stream, i)
        est = estimate_L(model, z, cfg["n"], stream, cfg["replicas"], pool, cfg.pool_config)
        hmin = min(hmin, est.herglotz_min)
        rec.add(E, cfg["eta"], model.lam, est.mean, est.stderr, est.n, est.replicas)
    rec.meta["herglotz_min"] = hmin
    return rec, 0


def classify(L, stderr, K):
    logK = math.log(K)
    if L + 3 * stderr < logK:
        return "deloc"
    if L - 3 * stderr > logK:
        return "loc"
    return "boundary"


def run_phase(cfg):
    base = cfg.model
    root = RngStream(cfg["seed"])
    lambdas = cfg["lambdas"] if cfg["lambdas"] is not None else [cfg["lambda"]]
    rec = Records(("E", "lambda", "eta", "L_hat", "stderr", "logK", "class"), meta=_meta(cfg))
    logK = math.log(base.K)
    for j, lam in enumerate(lambdas):
        model = base.with_lambda(lam)
        for i, E in enumerate(cfg.energies()):
            z = complex(E, cfg["eta"])
            stream = root.child(j, i)
            pool = _pool(cfg, model, z, stream, f"{j}.{i}")
            est = estimate_L(model, z, cfg["n"], stream, cfg["replicas"], pool, cfg.pool_config)
            rec.add(E, lam, cfg["eta"], est.mean, est.stderr, logK, classify(est.mean, est.stderr, base.K))
    return rec, 0


def run_phi(cfg):
    model = cfg.model
    root = RngStream(cfg["seed"])
    cols = ("E", "eta", "lambda", "s", "phi_hat", "stderr", "ci_lo", "ci_hi", "max_residual", "heavy_tail")
    rec = Records(cols, meta=_meta(cfg))
    distances = tuple(range(cfg["d_min"], cfg["d_max"] + 1))
    for i, E in enumerate(cfg.energies()):
        z = complex(E, cfg["eta"])
        stream = root.child(i)
        pool = _pool(cfg, model, z, stream, i)
        for s in cfg["s"]:
            scan = estimate_phi(model, z, s, distances, cfg["samples"], stream, pool, cfg.pool_config)
            lo, hi = scan.ci
            rec.add(E, cfg["eta"], model.lam, s, scan.phi, scan.phi_stderr, lo, hi, scan.max_residual,
                    scan.heavy_tail_any)
    rec.meta["fit_from_distance"] = 4
    return rec, 0


def run_resonance(cfg):
    model = cfg.model
    root = RngStream(cfg["seed"])
    cols = ("E", "eta", "lambda", "n", "L_ref", "tau", "r_threshold", "trees", "EN", "EN_stderr", "ENN1",
            "ENN1_stderr", "r1", "r1_stderr", "r2", "r2_stderr", "P_N_ge_1", "P_stderr", "pz_bound",
            "pz_bound_stderr", "pz_holds")
    rec = Records(cols, meta=_meta(cfg))
    for i, E in enumerate(cfg.energies()):
        z = as_z(complex(E, cfg["eta"]))
        stream = root.child(i)
        need_pool = cfg["boundary"] == POOL or cfg["mode"] == QUANTILE or (cfg["L_ref"] is None and model.lam > 0)
        pool = _pool(cfg, model, z, stream, i) if need_pool else None
        if cfg["L_ref"] is not None:
            L_ref, source = cfg["L_ref"], "given"
        elif model.lam == 0:
            L_ref, source = float(free_L0(E, model, cfg["eta"])), "free closed form"
        else:
            est = estimate_L(model, z, cfg["n"], stream, cfg["replicas"], pool, cfg.pool_config)
            L_ref, source = est.mean, "estimate"
        xi = gamma_quantile(pool, cfg["p"]) if cfg["mode"] == QUANTILE else None
        rec.meta[f"L_ref_source[{i}]"] = source
        if xi is not None:
            rec.meta[f"xi[{i}]"] = xi
        for n in cfg["radii"]:
            rc = ResonanceConfig(n, L_ref, cfg["delta"], cfg["mode"], cfg["p"], xi, cfg["boundary"])
            ms = moment_statistics(model, z, rc, cfg["trees"], stream.child(n), pool, cfg.pool_config)
            pz = pz_probability(ms.counts)
            rec.add(E, cfg["eta"], model.lam, n, L_ref, rc.tau, rc.r_threshold, cfg["trees"], ms.EN,
                    ms.EN_stderr, ms.ENN1, ms.ENN1_stderr, ms.r1, ms.r1_stderr, ms.r2, ms.r2_stderr,
                    pz.probability, pz.probability_stderr, pz.bound, pz.bound_stderr, pz.holds)
    rec.meta["quantile_child"] = "first child by index"
    return rec, 0


def run_sw(cfg):
    model = cfg.model
    root = RngStream(cfg["seed"])
    rec = Records(("E", "eta", "d", "shell", "partial_sum"), meta=_meta(cfg))
    for i, E in enumerate(cfg.energies()):
        res = simon_wolff_sum(model, E, cfg["eta_ladder"], cfg["depth"], root.child(i), cfg["sw_mode"],
                              cfg["replicas"], cfg.pool_config)
        for k, eta in enumerate(res.etas):
            for d in res.depths:
                rec.add(E, eta, d, res.shells[k, d], res.partial[k, d])
        rec.meta[f"slope[{i}]"] = res.slope
        rec.meta[f"r2[{i}]"] = res.r2
        rec.meta[f"shell_ratio[{i}]"] = res.shell_ratio
        rec.meta[f"tail_bound[{i}]"] = res.tail_bound
        rec.meta[f"divergence_exponent[{i}]"] = res.divergence_exponent
    return rec, 0


def run_selftest(cfg):
    from .selftest import run_checks

    rec = Records(("check", "status", "detail"), meta=_meta(cfg))
    failed = 0
    for name, ok, detail in run_checks(seed=cfg["seed"]):
        rec.add(name, "PASS" if ok else "FAIL", detail)
        failed += not ok
    rec.meta["failed"] = failed
    return rec, 3 if failed else 0


RUNNERS = {
    "sets": run_sets,
    "lyapunov": run_lyapunov,
    "phase": run_phase,
    "phi": run_phi,
    "resonance": run_resonance,
    "sw": run_sw,
    "selftest": run_selftest,
}


def run_subcommand(cfg: RunConfig):
    """Run ``cfg`` and return ``(records, exit_code)``."""
    return RUNNERS[cfg.subcommand](cfg)


def _error_record(exc, code):
    return json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}, sort_keys=True)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_model_config(argv)
        rec, code = run_subcommand(cfg)
        emit_records(rec, cfg["format"], cfg["output"])
        return code
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _report(exc, 2)
    except (BetheLabError, ValueError) as exc:
        return _report(exc, 1)


def _report(exc, code):
    sys.stderr.write(_error_record(exc, code) + "\n")
    return code


__all__ = [
    "KNOBS",
    "RunConfig",
    "build_parser",
    "classify",
    "config_from_metadata",
    "load_config_from_output",
    "main",
    "parse_matrix",
    "parse_model_config",
    "run_subcommand",
]

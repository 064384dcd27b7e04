"""Command-line entry point: ``lowertail <command> [--config PATH] [flags]``.

The config file is JSON; command-line flags override its fields. Every run
writes its artifact to ``--out`` (or stdout when omitted) and prints a
one-line JSON summary. Exit status: 0 success, 2 invalid configuration or
I/O error, 3 failed check during ``verify``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import estimation as E
from . import rates as R
from . import sprinkling as S
from .functionals import RegimeParams, critical_cutoff_H, critical_knn_H, contact_H, dense_H, functional_record, sparse_H, clique_count_score
from .geometry import PointSet
from .processes import sample_poisson
from .streams import StreamKey

COMMANDS = ("sample", "functional", "sprinkle", "estimate", "curve", "rate", "verify")
REGIMES = ("sparse", "critical", "dense")
REQUIRED = {"sparse": ("r_n",), "critical": (), "dense": ("a_n",)}
DEFAULT_REPLICATES = 1000
# commands that evaluate at the given parameters; curve derives them from speeds
NEEDS_REGIME_PARAMS = ("functional", "sprinkle", "estimate")
DEFAULT_FORMAT = {"sample": "csv", "estimate": "csv", "curve": "csv", "rate": "csv", "verify": "csv"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    command: str
    regime: str = "critical"
    params: RegimeParams = field(default_factory=RegimeParams)
    seed: int = 0
    replicates: int = DEFAULT_REPLICATES
    threads: int = 1
    out_path: str | None = None
    format: str = ""
    options: dict = field(default_factory=dict)

    TOP_LEVEL = ("command", "regime", "params", "seed", "replicates", "threads", "out", "format", "options")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(cls.TOP_LEVEL)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        try:
            params = RegimeParams.from_dict(dict(data.get("params", {})))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg = cls(
            command=data.get("command", ""),
            regime=data.get("regime", "critical"),
            params=params,
            seed=int(data.get("seed", 0)),
            replicates=int(data.get("replicates", DEFAULT_REPLICATES)),
            threads=int(data.get("threads", 1)),
            out_path=data.get("out"),
            format=data.get("format") or DEFAULT_FORMAT.get(data.get("command", ""), "json"),
            options=dict(data.get("options", {})),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.replicates < 1 or self.threads < 1:
            raise ConfigError("replicates and threads must be >= 1")
        if self.command in NEEDS_REGIME_PARAMS:
            for name in REQUIRED[self.regime]:
                if getattr(self.params, name) is None:
                    raise ConfigError(f"missing required parameter: {name}")

    def resolved(self) -> dict:
        return {
            "command": self.command,
            "regime": self.regime,
            "params": self.params.to_dict(),
            "seed": self.seed,
            "replicates": self.replicates,
            "format": self.format,
            "options": self.options,
        }

    def key(self, lane: str) -> StreamKey:
        return StreamKey(self.seed, f"{self.command}/{lane}")


def _finite(obj):
    """Replace non-finite floats: NaN becomes null, infinities the strings "inf"/"-inf"."""
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _json(obj) -> str:
    return json.dumps(_finite(obj), sort_keys=True, allow_nan=False, default=_default)


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _meta(cfg: ExperimentConfig) -> dict:
    # threads is left out on purpose: it never changes the output
    return {"config": _json(cfg.resolved()), "seed": cfg.seed}


def _json_doc(cfg: ExperimentConfig, payload) -> str:
    return _json({"config": cfg.resolved(), "result": payload}) + "\n"


def _load_points(cfg: ExperimentConfig) -> PointSet:
    path = cfg.options.get("input")
    if path:
        with open(path) as fh:
            return PointSet.from_csv(fh.read())
    return sample_poisson(cfg.params.n, cfg.params.d, cfg.key("points"))


# ---------------------------------------------------------------- commands


def cmd_sample(cfg):
    phi = sample_poisson(cfg.params.n, cfg.params.d, cfg.key("points"))
    if cfg.format == "csv":
        text = "".join(f"# {k}: {v}\n" for k, v in _meta(cfg).items()) + phi.to_csv()
    else:
        text = _json_doc(cfg, {"dim": phi.dim, "points": phi.coords.tolist()})
    return text, {"points": len(phi)}, 0


def _evaluate(cfg, phi):
    p, regime = cfg.params, cfg.regime
    if regime == "sparse":
        k0 = p.k0
        return "sparse_H", sparse_H(phi, p, clique_count_score(p.d, k0))
    if regime == "dense":
        return "dense_H", dense_H(phi, p)
    rep = cfg.options.get("representation", "knn")
    if p.M is not None and p.M_prime is not None:
        return f"critical_cutoff_H[{rep}]", critical_cutoff_H(phi, p, representation=rep)
    if rep == "contact":
        return "contact_H", contact_H(phi, p, int(cfg.options.get("resolution", 256)))
    return "critical_knn_H", critical_knn_H(phi, p)


def cmd_functional(cfg):
    phi = _load_points(cfg)
    name, value = _evaluate(cfg, phi)
    rec = functional_record(name, cfg.params, value, {"points": len(phi)})
    if cfg.format == "csv":
        text = E.write_csv(("functional", "value", "points"), [[name, float(value), len(phi)]], _meta(cfg))
    else:
        text = _json_doc(cfg, rec)
    return text, {"functional": name, "value": value}, 0


def cmd_sprinkle(cfg):
    p = cfg.params
    phi = _load_points(cfg)
    states = None
    if cfg.regime == "critical":
        if cfg.options.get("representation", "knn") == "contact":
            _, rep = S.contact_sprinkle(phi, p, cfg.key("sprinkle"))
        else:
            _, rep = S.knn_sprinkle(phi, p, cfg.key("sprinkle"))
    elif cfg.regime == "sparse":
        other = sample_poisson(p.n, p.d, cfg.key("resample"))
        _, rep = S.sparse_resample(phi, other, p)
    else:
        other = sample_poisson(p.n, p.d, cfg.key("resample"))
        samples = int(cfg.options.get("samples", 32))
        _, states, rep = S.dense_sequential_resample(phi, other, p, samples, cfg.key("goodness"))
    if cfg.format == "csv" and states is not None:
        text = E.write_csv(S.BoxState.CSV_FIELDS, [s.row() for s in states], _meta(cfg))
    elif cfg.format == "csv":
        text = "".join(f"# {k}: {v}\n" for k, v in _meta(cfg).items()) + rep.inserted.to_csv()
    else:
        text = _json_doc(cfg, rep.to_dict())
    return text, {"bad_count": rep.bad_count, "target_event_holds": rep.target_event_holds}, 0


def _functional(cfg) -> E.FunctionalSpec:
    return E.FUNCTIONALS[cfg.regime]()


def cmd_estimate(cfg):
    if "a" not in cfg.options:
        raise ConfigError("missing required option: a")
    res = E.estimate_lower_tail(_functional(cfg), cfg.params, float(cfg.options["a"]), cfg.replicates, cfg.key("tail"), cfg.threads)
    return _emit_estimates(cfg, [res]), {"p_hat": res.p_hat, "normalized_log": res.normalized_log}, 0


def _params_for_speeds(cfg) -> list[RegimeParams]:
    speeds = cfg.options.get("speeds")
    if not speeds:
        raise ConfigError("missing required option: speeds")
    p = cfg.params
    out = []
    for rho in speeds:
        if cfg.regime == "sparse":
            n = float(cfg.options.get("points_per_speed", 50)) * rho
            q = E.sparse_params_for_speed(rho, n, p.d, p.k0)
            out.append(p.replace(n=q.n, r_n=q.r_n))
        elif cfg.regime == "dense":
            q = E.dense_params_for_speed(rho, p.n, p.d, p.k, p.s0)
            out.append(p.replace(a_n=q.a_n))
        else:
            out.append(p.replace(n=float(rho)))
    return out


def _emit_estimates(cfg, results):
    if cfg.format == "csv":
        return E.estimates_csv(results, _meta(cfg))
    return _json_doc(cfg, [dataclasses.asdict(r) for r in results])


def cmd_curve(cfg):
    if "a" not in cfg.options:
        raise ConfigError("missing required option: a")
    res = E.scaling_curve(_functional(cfg), _params_for_speeds(cfg), float(cfg.options["a"]), cfg.replicates, cfg.key("curve"), cfg.threads)
    return _emit_estimates(cfg, res), {"rows": len(res), "zero_rows": sum(r.p_hat == 0 for r in res)}, 0


def cmd_rate(cfg):
    grid = cfg.options.get("a_values") or [round(0.1 * i, 10) for i in range(1, 10)]
    p = cfg.params
    rows = []
    if cfg.regime == "dense":
        for a in grid:
            s = R.dense_rate(float(a), p.k, p.s0)
            rows.append([float(a), s.rate, s.theta, s.converged])
    elif cfg.regime == "sparse":
        mu = cfg.options.get("mu")
        if mu is None:
            mu, _ = R.mu_clique(p.d, p.k0, cfg.replicates, cfg.key("mu"))
        for a in grid:
            rows.append([float(a), R.sparse_clique_rate(float(a), float(mu)), math.nan, True])
    else:
        raise ConfigError("the critical-regime rate function is not evaluated")
    header = ("a", "rate", "theta", "converged")
    if cfg.format == "csv":
        text = E.write_csv(header, rows, _meta(cfg))
    else:
        text = _json_doc(cfg, [dict(zip(header, r)) for r in rows])
    return text, {"rows": len(rows)}, 0


def verify_suite(seed: int, replicates: int, threads: int = 1) -> list[E.BoundCheck]:
    """Default verification suites at modest sizes; ``replicates`` scales the Monte Carlo loops."""
    root = StreamKey(seed, "verify")
    R_ = max(replicates, E.MIN_REPLICATES)
    checks: list[E.BoundCheck] = []
    for m in (10, 50):
        for l in (1, 2, 3):
            checks.append(E.verify_ball_count_bound(m, l, 0.05, 1, R_, root.child(f"ball/{m}/{l}"), threads=threads))
    for k, M in ((1, 3.0), (2, 5.0)):
        p = RegimeParams(d=2, n=500, k=k, M=M)
        checks.append(E.verify_large_radius_count(p, R_ // 10, root.child(f"J/{k}/{M}"), threads))
    pd = E.dense_params_for_speed(10, 2000).replace(M=6.0)
    checks.append(E.verify_bad_box_probabilities("dense", pd, R_, root.child("badbox/dense"), threads))
    ps = E.sparse_params_for_speed(20, 1000)
    checks.append(E.verify_bad_box_probabilities("sparse", ps, R_, root.child("badbox/sparse"), threads))
    for k in (1, 2, 3):
        for a in (1.0, 2.0):
            checks.append(E.verify_knn_tail(200, 2, k, a, R_, root.child(f"tail/{k}/{a}"), threads))
    pp = RegimeParams(d=1, n=10, k=1, M=5.0)
    checks += E.verify_sprinkle_bound(pp, 2, R_, root.child("sprinkle"), threads)
    for b in ("critical", "sparse_resample", "dense_resample"):
        rep = E.coupling_distribution_test(b, 200, 4, R_, root.child(f"law/{b}"), threads=threads)
        checks.append(E.BoundCheck(f"chi2 {b}", rep.p_value, 1e-3, 0.0, kind="lower", hard=True,
                                   details={"statistic": rep.statistic, "dof": rep.dof}))
    pr = E.dense_params_for_speed(10, 2000).replace(M=3.0, M0=3.0)
    failures = 0
    for i in range(max(R_ // 100, 2)):
        rk = root.child("dense_resample").at(i)
        P = sample_poisson(pr.n, pr.d, rk.child("P"))
        Pp = sample_poisson(pr.n, pr.d, rk.child("P'"))
        _, _, rep = S.dense_sequential_resample(P, Pp, pr, 16, rk.child("mc"))
        failures += bool(rep.target_event_holds and not rep.details["all_bounded"])
    checks.append(E.BoundCheck("dense_resample_bounded_given_event", float(failures), 0.0, 0.0, hard=True))
    return checks


def cmd_verify(cfg):
    checks = verify_suite(cfg.seed, cfg.replicates, cfg.threads)
    if cfg.format == "csv":
        text = E.bound_checks_csv(checks, _meta(cfg))
    else:
        text = _json_doc(cfg, [dict(zip(E.BOUND_FIELDS, c.row())) for c in checks])
    failed = [c.name for c in checks if c.status == "fail"]
    summary = {"checks": len(checks), "failed": len(failed), "warnings": sum(c.status == "warn" for c in checks)}
    return text, summary, 3 if failed else 0


HANDLERS = {
    "sample": cmd_sample,
    "functional": cmd_functional,
    "sprinkle": cmd_sprinkle,
    "estimate": cmd_estimate,
    "curve": cmd_curve,
    "rate": cmd_rate,
    "verify": cmd_verify,
}


# ------------------------------------------------------------------ parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lowertail", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--replicates", type=int)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out")
    ap.add_argument("--format", choices=("csv", "json"))
    ap.add_argument("--regime", choices=REGIMES)
    ap.add_argument("--set", action="append", default=[], metavar="NAME=VALUE",
                    help="override a parameter (params.NAME) or option (NAME); VALUE is parsed as JSON")
    return ap


def _merge(args) -> dict:
    data: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    data["command"] = args.command
    for name in ("seed", "replicates", "threads", "out", "format", "regime"):
        v = getattr(args, name)
        if v is not None:
            data[name] = v
    param_names = {f.name for f in dataclasses.fields(RegimeParams)}
    for item in args.set:
        name, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects NAME=VALUE, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if name.startswith("params."):
            name = name[len("params."):]
            data.setdefault("params", {})[name] = value
        elif name in param_names:
            data.setdefault("params", {})[name] = value
        else:
            data.setdefault("options", {})[name] = value
    return data


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.from_dict(_merge(args))
        text, summary, status = HANDLERS[cfg.command](cfg)
        if cfg.out_path:
            with open(cfg.out_path, "w", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except (OSError, ValueError) as exc:
        print(_json({"command": args.command, "status": "error", "message": str(exc)}))
        return 2
    summary = {"command": cfg.command, "status": "ok" if status == 0 else "failed", "out": cfg.out_path, **summary}
    print(_json(summary))
    return status


if __name__ == "__main__":
    sys.exit(main())

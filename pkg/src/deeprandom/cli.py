"""Command-line experiment runner.

Every report is a deterministic function of (config, seed): wall-clock time
goes to stderr only, the record itself carries round and tick counts.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, net
from .adversary import Rate, get_script, get_strategy, measure_advantage
from .authp import AuthSecret, Wallet, authenticated_from_wallets, authenticated_session
from .core import ParameterError, ProtocolParams, parse_modulus
from .distill import SessionFailure
from .rounds import make_parties

log = logging.getLogger("deeprandom")

SWEEP_AXES = ("n", "k", "K", "L", "n_rounds", "t")
PARAM_FIELDS = tuple(f.name for f in fields(ProtocolParams))


@dataclass
class ExperimentConfig:
    params: ProtocolParams = field(default_factory=ProtocolParams)
    trials: int = 1
    seed: int = 0
    strategy: str = "inner-product"
    script: str = "sacrifice"
    axis: str | None = None
    values: list = field(default_factory=list)
    output: str | None = None
    format: str = "json"

    def echo(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("params", "output")}
        d["params"] = self.params.to_dict()
        return d


def artifact_version() -> str:
    """Package version plus a short digest of the installed sources."""
    h = hashlib.sha1()
    root = resources.files(__package__)
    for name in sorted(p.name for p in root.iterdir() if p.name.endswith((".py", ".json"))):
        h.update(name.encode())
        h.update(root.joinpath(name).read_bytes())
    return f"{__version__}+g{h.hexdigest()[:7]}"


def load_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("report_schema.json").read_text())


def _check_intervals(node) -> None:
    if isinstance(node, dict):
        if {"estimate", "ci_low", "ci_high"} <= node.keys():
            lo, hi, est = node["ci_low"], node["ci_high"], node["estimate"]
            if not lo <= hi:
                raise jsonschema.ValidationError(f"unordered interval [{lo}, {hi}]")
            if est is not None and not (lo - 1e-12 <= est <= hi + 1e-12):
                raise jsonschema.ValidationError(f"estimate {est} outside [{lo}, {hi}]")
        for v in node.values():
            _check_intervals(v)
    elif isinstance(node, list):
        for v in node:
            _check_intervals(v)


def validate_report(record: dict) -> dict:
    jsonschema.validate(record, load_schema())
    _check_intervals(record["metrics"])
    return record


def _record(command: str, cfg: ExperimentConfig, metrics: dict, rounds: int, ticks: int) -> dict:
    return validate_report(
        {
            "artifact": "deeprandom",
            "version": artifact_version(),
            "command": command,
            "config": cfg.echo(),
            "metrics": metrics,
            "runtime": {"rounds": rounds, "ticks": ticks},
        }
    )


def _trial_seed(cfg: ExperimentConfig, trial: int) -> list[int]:
    return [cfg.seed, trial]


# -- commands ------------------------------------------------------------------

def cmd_run_session(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    ok = agree = verified = failures = 0
    raw = raw_n = blk_wrong = blk_acc = fav = 0
    diffs: list[float] = []
    min_key = None
    rounds = ticks = 0
    for trial in range(cfg.trials):
        rng = np.random.default_rng(_trial_seed(cfg, trial) + [0])
        s0 = AuthSecret.random(p.H_s, rng)
        ch = net.Channel()
        with tempfile.TemporaryDirectory() as d:
            wa, wb = Wallet.create(d, "A", s0), Wallet.create(d, "B", s0)
            try:
                out = authenticated_from_wallets(p, ch, _trial_seed(cfg, trial) + [1], wa, wb)
            except SessionFailure as exc:
                log.info("trial %d failed: %s", trial, exc)
                failures += 1
                rounds += p.n_rounds
                ticks += ch.ticks
                continue
        sess = out.session
        rounds += len(sess.rounds)
        ticks += sess.ticks
        agree += sess.agreed
        verified += out.both_verified
        ok += out.A.committed and out.B.committed and sess.agreed
        min_key = sess.S_A.size if min_key is None else min(min_key, sess.S_A.size)
        good = [r for r in sess.rounds if not r.aborted]
        raw += sum(r.e_A != r.e_B for r in good)
        raw_n += len(good)
        fav += sum(r.favorable for r in good)
        diffs += [r.V_A - r.V_B for r in good if r.favorable]
        blk_acc += sum(b.verdict.accepted for b in sess.blocks)
        blk_wrong += sum(b.verdict.accepted and b.verdict.bit != b.e_A for b in sess.blocks)
    metrics = {
        "sessions": cfg.trials,
        "session_failures": failures,
        "success": Rate(ok, cfg.trials).as_dict(),
        "keys_agree": Rate(agree, cfg.trials).as_dict(),
        "both_verified": Rate(verified, cfg.trials).as_dict(),
        "key_bits_min": min_key,
        "raw_disagreement": Rate(raw, raw_n).as_dict(),
        "accepted_block_error": Rate(blk_wrong, blk_acc).as_dict(),
        "favorable_rate": Rate(fav, raw_n).as_dict(),
        "favorable_diff_std": float(np.std(diffs, ddof=1)) if len(diffs) > 1 else None,
    }
    return _record("run-session", cfg, metrics, rounds, ticks)


def cmd_eavesdrop_bench(cfg: ExperimentConfig) -> dict:
    strategy = get_strategy(cfg.strategy)
    trials = max(cfg.trials, 1000)
    metrics = measure_advantage(strategy, cfg.params, trials, seed=cfg.seed)
    metrics["calibration_only"] = cfg.strategy == "oracle-cheat"
    return _record("eavesdrop-bench", cfg, metrics, trials, 0)


def _mitm_trial(p: ProtocolParams, script_name: str, secret: AuthSecret, seed, variant: str):
    script = get_script(script_name, p, seed)
    ch = net.Channel(script)
    a, b = make_parties(p, ch, seed)
    try:
        out = authenticated_session(p, a, b, secret, secret, variant=variant)
    except SessionFailure:
        return None, ch.ticks
    return out, ch.ticks


def cmd_mitm_demo(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    get_script(cfg.script, p, 0)  # reject unknown names before running anything
    per = {}
    rounds = ticks = 0
    for variant in ("flawed", "robust"):
        a_acc = b_acc = both = fail = 0
        for trial in range(cfg.trials):
            rng = np.random.default_rng(_trial_seed(cfg, trial) + [0])
            secret = AuthSecret.random(p.H_s, rng)
            out, tk = _mitm_trial(p, cfg.script, secret, _trial_seed(cfg, trial) + [1], variant)
            ticks += tk
            rounds += p.n_rounds
            if out is None:
                fail += 1
                continue
            a_acc += out.A.verified
            b_acc += out.B.verified
            both += out.both_verified
        per[variant] = {
            "a_accepts": Rate(a_acc, cfg.trials).as_dict(),
            "b_accepts": Rate(b_acc, cfg.trials).as_dict(),
            "acceptance": Rate(both, cfg.trials).as_dict(),
            "detection": Rate(cfg.trials - both, cfg.trials).as_dict(),
            "session_failures": fail,
        }
    return _record("mitm-demo", cfg, {"script": cfg.script, **per}, rounds, ticks)


def cmd_sweep(cfg: ExperimentConfig, axis: str | None = None, values=None) -> list[dict]:
    axis = axis or cfg.axis
    values = list(values if values is not None else cfg.values)
    if axis not in SWEEP_AXES:
        raise ParameterError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ParameterError("sweep needs at least one value")
    reports = []
    for v in values:
        sub = ExperimentConfig(**{**cfg.__dict__, "params": cfg.params.with_(**{axis: _coerce(axis, v)})})
        sub.axis, sub.values = None, []
        reports.append(cmd_run_session(sub))
    return reports


def cmd_validate_config(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    p.validate()
    metrics = {
        "valid": True,
        "n_rounds": p.n_rounds,
        "gauge": p.gauge,
        "p_bits": p.p.bit_length(),
        "key_bits": p.key_bits,
        "reconciled_needed": p.reconciled_needed(),
    }
    return _record("validate-config", cfg, metrics, 0, 0)


# -- argument handling ---------------------------------------------------------------

_INT_FIELDS = {"n", "L", "n_rounds", "H_s", "L_M", "t"}


def _coerce(name: str, v):
    if name in _INT_FIELDS:
        return int(v)
    if name == "p":
        return parse_modulus(v) if isinstance(v, str) else int(v)
    return float(v)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("protocol parameters")
    defaults = ProtocolParams()
    for name in PARAM_FIELDS:
        flag = "--" + name.replace("_", "-")
        default = None
        g.add_argument(flag, dest=name, default=default, help=f"(default {getattr(defaults, name) if name != 'p' else 'derived'})")
    e = common.add_argument_group("experiment")
    e.add_argument("--trials", type=int, default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--config", type=Path, help="JSON file; its entries override flags")
    e.add_argument("--output", "-o", default=None, help="write the report here instead of stdout")
    e.add_argument("--format", choices=("json", "csv"), default=None)
    e.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="deeprandom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run-session", parents=[common], help="authenticated sessions on an honest channel")
    bench = sub.add_parser("eavesdrop-bench", parents=[common], help="passive strategy hit rates")
    bench.add_argument("--strategy", default=None)
    mitm = sub.add_parser("mitm-demo", parents=[common], help="flawed vs robust codes under a script")
    mitm.add_argument("--script", default=None)
    sweep = sub.add_parser("sweep", parents=[common], help="run-session over one parameter axis")
    sweep.add_argument("--axis", choices=SWEEP_AXES, default=None)
    sweep.add_argument("--values", default=None, help="comma-separated values")
    sub.add_parser("validate-config", parents=[common], help="check parameters and print derived values")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    flat: dict = {}
    for name in PARAM_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            flat[name] = _coerce(name, v)
    for name in ("trials", "seed", "strategy", "script", "axis", "output", "format"):
        v = getattr(args, name, None)
        if v is not None:
            flat[name] = v
    if getattr(args, "values", None):
        flat["values"] = [s.strip() for s in args.values.split(",") if s.strip()]
    if args.config is not None:
        file_cfg = json.loads(Path(args.config).read_text())
        file_cfg = {**file_cfg.pop("params", {}), **file_cfg}
        flat.update(file_cfg)
    param_kw = {k: _coerce(k, flat.pop(k)) for k in list(flat) if k in PARAM_FIELDS}
    unknown = set(flat) - {f.name for f in fields(ExperimentConfig)}
    if unknown:
        raise ParameterError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(params=ProtocolParams(**param_kw), **flat)


def to_csv(records: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["record", "command", "metric", "value"])
    for idx, rec in enumerate(records):
        for key, value in _flatten(rec["metrics"]):
            w.writerow([idx, rec["command"], key, value])
    return buf.getvalue()


def _flatten(node, prefix=""):
    if isinstance(node, dict):
        for k in sorted(node):
            yield from _flatten(node[k], f"{prefix}.{k}" if prefix else k)
    else:
        yield prefix, node


COMMANDS = {
    "run-session": cmd_run_session,
    "eavesdrop-bench": cmd_eavesdrop_bench,
    "mitm-demo": cmd_mitm_demo,
    "sweep": cmd_sweep,
    "validate-config": cmd_validate_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        cfg = config_from_args(args)
    except (ParameterError, ValueError, TypeError) as exc:
        parser.error(f"invalid configuration: {exc}")
    if args.command == "eavesdrop-bench" and args.trials is None and "trials" not in _file_keys(args):
        cfg.trials = 10_000
    started = time.perf_counter()
    try:
        result = COMMANDS[args.command](cfg)
    except ParameterError as exc:
        parser.error(str(exc))
    log.info("elapsed %.2f s", time.perf_counter() - started)
    records = result if isinstance(result, list) else [result]
    if cfg.format == "csv":
        text = to_csv(records)
    else:
        text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if cfg.output:
        Path(cfg.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _file_keys(args) -> set:
    if args.config is None:
        return set()
    return set(json.loads(Path(args.config).read_text()))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

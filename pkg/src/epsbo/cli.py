"""Command-line interface.

``run``, ``bench-list``, and ``validate-config`` execute in process by
default; pass ``--server URL`` to route them through a running service
instead (``epsbo serve`` starts one).  Exit codes: 0 success, 1 bad
configuration or usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from .benchmarks import benchmark, list_benchmarks
from .experiment import (
    ExperimentConfig,
    emit_results,
    run_experiment,
    summary_rows,
    trial_errors,
    write_output_files,
)
from .policies import PolicyKind, PolicySpec

_POLICY_FLAG_RULES = {
    "epsilon": {PolicyKind.EPS_GREEDY_TS},
    "num_paths": {PolicyKind.EPS_GREEDY_TS, PolicyKind.AVERAGING_TS},
    "spectral_points": {PolicyKind.EPS_GREEDY_TS, PolicyKind.AVERAGING_TS, PolicyKind.GENERIC_TS},
    "lcb_kappa": {PolicyKind.LCB},
}

_CONFIG_KEYS = {
    "objective",
    "external_cmd",
    "box",
    "external_timeout",
    "policy",
    "epsilon",
    "num_paths",
    "spectral_points",
    "lcb_kappa",
    "kernel",
    "noise_sd",
    "obs_noise_sd",
    "init",
    "iters",
    "trials",
    "seed",
    "out",
    "format",
    "parallel",
    "server",
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _parse_box(text: str) -> tuple[tuple[float, float], ...]:
    """Parse 'lo:hi,lo:hi,...' into per-dimension bounds."""
    dims = []
    for part in text.split(","):
        lo, sep, hi = part.partition(":")
        if not sep:
            raise ValueError(f"box dimension {part!r} is not of the form lo:hi")
        dims.append((float(lo), float(hi)))
    return tuple(dims)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--objective", help="benchmark objective name (see bench-list)")
    p.add_argument("--external-cmd", help="external objective command line")
    p.add_argument("--box", help="external objective box as lo:hi,lo:hi,...")
    p.add_argument("--external-timeout", type=float, help="seconds to wait for a reply")
    p.add_argument("--policy", choices=[k.value for k in PolicyKind])
    p.add_argument("--epsilon", type=float, help="exploration probability (eps-ts only)")
    p.add_argument("--num-paths", type=int, help="sample paths per exploit proposal")
    p.add_argument("--spectral-points", type=int, help="random features per sample path")
    p.add_argument("--lcb-kappa", type=float, help="confidence width (lcb only)")
    p.add_argument("--kernel", choices=["se", "ard-se", "matern32", "matern52"])
    p.add_argument("--noise-sd", type=float, help="GP observation-noise SD (standardized units)")
    p.add_argument("--obs-noise-sd", type=float, help="injected noise SD (standardized units)")
    p.add_argument("--init", type=int, help="initial design size")
    p.add_argument("--iters", type=int, help="BO iterations per trial")
    p.add_argument("--trials", type=int, help="number of repeated trials")
    p.add_argument("--seed", type=int, help="base seed; trial t uses seed pair (seed, t)")
    p.add_argument("--out", help="output path for the per-iteration file")
    p.add_argument("--format", choices=["csv", "jsonl"], dest="out_format")
    p.add_argument("--parallel", type=int, help="concurrent trials")
    p.add_argument("--config", help="JSON file with the same field names as the flags")
    p.add_argument("--server", help="run through a service at this base URL")


def _build_parser() -> _Parser:
    parser = _Parser(prog="epsbo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_flags(sub.add_parser("run", help="run a batch experiment"))
    _add_run_flags(sub.add_parser("validate-config", help="check a configuration and exit"))
    lp = sub.add_parser("bench-list", help="list the built-in benchmark objectives")
    lp.add_argument("--server", help="query a service at this base URL")
    sp = sub.add_parser("serve", help="start the HTTP service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    return parser


def _merge_config_file(args: argparse.Namespace) -> dict:
    """Flag values layered over the optional config file, flags winning."""
    merged: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValueError("config file must hold a JSON object")
        for key, value in raw.items():
            norm = key.replace("-", "_")
            if norm == "format":
                norm = "out_format"
            if norm not in _CONFIG_KEYS and norm != "out_format":
                raise ValueError(f"unknown config field {key!r}")
            merged[norm] = value
    for key in _CONFIG_KEYS | {"out_format"}:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _config_from_values(values: dict) -> ExperimentConfig:
    policy_name = values.get("policy", "eps-ts")
    kind = PolicyKind(policy_name)
    for field, allowed in _POLICY_FLAG_RULES.items():
        if field in values and kind not in allowed:
            raise ValueError(f"--{field.replace('_', '-')} is not valid with --policy {kind.value}")
    policy = PolicySpec(
        kind=kind,
        epsilon=values.get("epsilon", 0.5),
        n_paths=values.get("num_paths", 50),
        n_spectral=values.get("spectral_points", 1000),
        lcb_kappa=values.get("lcb_kappa", 2.0),
    )
    external_cmd = values.get("external_cmd")
    if isinstance(external_cmd, str):
        external_cmd = tuple(external_cmd.split())
    box = values.get("box")
    if isinstance(box, str):
        box = _parse_box(box)
    elif box is not None:
        box = tuple((float(lo), float(hi)) for lo, hi in box)
    return ExperimentConfig(
        policy=policy,
        n_init=values.get("init", 10),
        n_iters=values.get("iters", 50),
        objective=values.get("objective"),
        external_cmd=external_cmd,
        external_box=box,
        external_timeout=values.get("external_timeout", 60.0),
        n_trials=values.get("trials", 1),
        base_seed=values.get("seed", 0),
        kernel_family=values.get("kernel", "ard-se"),
        noise_sd=values.get("noise_sd", 1e-3),
        obs_noise_sd=values.get("obs_noise_sd", 0.0),
        out_path=values.get("out"),
        out_format=values.get("out_format", "csv"),
        n_workers=values.get("parallel", 1),
    )


def _request_payload(values: dict) -> dict:
    """Service request body for thin-client runs."""
    cmd = values.get("external_cmd")
    if isinstance(cmd, str):
        cmd = cmd.split()
    box = values.get("box")
    if isinstance(box, str):
        box = [list(b) for b in _parse_box(box)]
    payload = {
        "objective": values.get("objective"),
        "external_cmd": list(cmd) if cmd else None,
        "external_box": box,
        "policy": values.get("policy", "eps-ts"),
        "epsilon": values.get("epsilon", 0.5),
        "num_paths": values.get("num_paths", 50),
        "spectral_points": values.get("spectral_points", 1000),
        "lcb_kappa": values.get("lcb_kappa", 2.0),
        "kernel": values.get("kernel", "ard-se"),
        "noise_sd": values.get("noise_sd", 1e-3),
        "obs_noise_sd": values.get("obs_noise_sd", 0.0),
        "init": values.get("init", 10),
        "iters": values.get("iters", 50),
        "trials": values.get("trials", 1),
        "seed": values.get("seed", 0),
        "parallel": values.get("parallel", 1),
    }
    if "external_timeout" in values:
        payload["external_timeout"] = values["external_timeout"]
    return payload


def _print_outcome(stats_like: dict) -> None:
    n_failed = stats_like.get("n_failed") or 0
    n_trials = stats_like.get("n_trials") or 0
    line = f"completed {n_trials - n_failed}/{n_trials} trials"
    summary = stats_like.get("summary") or []
    if summary:
        final = summary[-1]
        line += f"; final {stats_like.get('metric')} median {final['median']:.4g}"
        line += f" (q1 {final['q1']:.4g}, q3 {final['q3']:.4g})"
    branch_means = stats_like.get("branch_mean_proposal_s") or {}
    if branch_means:
        parts = ", ".join(f"{b}: {t:.3g}s" for b, t in branch_means.items())
        line += f"; mean proposal time by branch: {parts}"
    print(line)


def _run_remote(values: dict) -> int:
    import httpx

    base = values["server"].rstrip("/")
    payload = _request_payload(values)
    with httpx.Client(base_url=base, timeout=30.0) as client:
        resp = client.post("/experiments", json=payload)
        if resp.status_code == 422:
            print(f"error: {resp.json().get('detail')}", file=sys.stderr)
            return 1
        resp.raise_for_status()
        job_id = resp.json()["job_id"]
        while True:
            status = client.get(f"/experiments/{job_id}")
            status.raise_for_status()
            body = status.json()
            if body["status"] in ("done", "failed"):
                break
            time.sleep(0.2)
        if body["status"] == "failed":
            print(f"error: {body.get('error')}", file=sys.stderr)
            return 2
        records = client.get(f"/experiments/{job_id}/records")
        records.raise_for_status()
        rows = records.json()["rows"]
        errors = records.json()["errors"]
    _print_outcome(body)
    if values.get("out"):
        srows = body.get("summary") or []
        files = write_output_files(rows, srows, errors, values.get("out_format", "csv"), values["out"])
        print("wrote " + ", ".join(str(f) for f in files))
    if body.get("n_failed") == body.get("n_trials"):
        return 2
    return 0


def _run_local(cfg: ExperimentConfig) -> int:
    records, stats = run_experiment(cfg)
    _print_outcome(
        {
            "n_trials": stats.n_trials,
            "n_failed": stats.n_failed,
            "metric": stats.metric,
            "summary": summary_rows(stats),
            "branch_mean_proposal_s": stats.branch_mean_proposal_s,
        }
    )
    for entry in trial_errors(records):
        print(f"trial {entry['trial']} failed: {entry['error']}", file=sys.stderr)
    if cfg.out_path:
        files = emit_results(records, stats, cfg.out_format, cfg.out_path)
        print("wrote " + ", ".join(str(f) for f in files))
    if stats.n_failed == stats.n_trials:
        return 2
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        values = _merge_config_file(args)
        if values.get("server"):
            cfg = None
            if not values.get("objective") and not values.get("external_cmd"):
                raise ValueError("objective: a benchmark name or an external command is required")
        else:
            cfg = _config_from_values(values)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        if values.get("server"):
            return _run_remote(values)
        return _run_local(cfg)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def _cmd_validate(args: argparse.Namespace) -> int:
    try:
        values = _merge_config_file(args)
        _config_from_values(values)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 1
    print("configuration ok")
    return 0


def _cmd_bench_list(args: argparse.Namespace) -> int:
    if getattr(args, "server", None):
        import httpx

        with httpx.Client(base_url=args.server.rstrip("/"), timeout=10.0) as client:
            resp = client.get("/benchmarks")
            resp.raise_for_status()
            entries = resp.json()
        for e in entries:
            box = ",".join(f"{lo:g}:{hi:g}" for lo, hi in e["box"])
            print(f"{e['name']}  d={e['dim']}  box={box}  f_star={e['f_star']}")
        return 0
    for name in list_benchmarks():
        spec = benchmark(name)
        box = ",".join(f"{lo:g}:{hi:g}" for lo, hi in spec.box)
        print(f"{name}  d={spec.dim}  box={box}  f_star={spec.f_star:g}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "validate-config":
        return _cmd_validate(args)
    if args.command == "bench-list":
        return _cmd_bench_list(args)
    if args.command == "serve":
        return _cmd_serve(args)
    print(f"unknown command {args.command!r}", file=sys.stderr)
    return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()

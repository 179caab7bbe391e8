"""Experiment runner CLI.

A thin client of the simulation service: every subcommand builds a request,
posts it to the service (an in-process instance by default, or a remote one
via --server) and writes the returned CSV/trace bytes. Exit codes: 0 ok,
1 simulation failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import httpx

OUT_ENV = "SLICESIM_OUT"


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient
    from .service.app import create_app
    return TestClient(create_app())


def _workload_block(args) -> dict | None:
    if args.workload is None:
        return None
    from .workloads import PRESETS
    if args.workload in PRESETS:
        block: dict = {"preset": args.workload}
    else:
        block = {"kind": args.workload}
    for flag, key in (("hidden", "hidden"), ("layers", "layers"),
                      ("wl_batch", "batch"), ("time_steps", "time_steps"),
                      ("m", "m"), ("k", "k"), ("n", "n")):
        v = getattr(args, flag, None)
        if v is not None:
            block[key] = v
    if getattr(args, "bucket", None):
        try:
            src, dst = (int(x) for x in args.bucket.split(","))
        except ValueError:
            raise SystemExit(_usage(f"--bucket wants 'src,dst', got {args.bucket!r}"))
        block["bucket"] = [src, dst]
    if getattr(args, "train", False):
        block["train"] = True
    return block


def _request(args) -> dict:
    req: dict = {}
    if args.config:
        req["config_yaml"] = Path(args.config).read_text(encoding="utf-8")
    block = _workload_block(args)
    if block is not None:
        req["workload"] = block
    overrides = {}
    for flag, key in (("preset", "preset"), ("slices", "slices"),
                      ("compute_scale", "compute_scale"),
                      ("mem_bandwidth", "mem_bandwidth"),
                      ("batch", "batch"), ("seed", "seed")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = v
    if overrides:
        req["overrides"] = overrides
    return req


def _usage(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


def _out_path(args, default_name: str) -> Path | None:
    if args.out:
        return Path(args.out)
    base = os.environ.get(OUT_ENV)
    if base:
        return Path(base) / default_name
    return None


def _deliver(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        print(f"wrote {path}")


def _post(client, endpoint: str, payload: dict):
    resp = client.post(endpoint, json=payload)
    if resp.status_code == 200:
        return resp.json(), 0
    try:
        detail = resp.json().get("detail", resp.text)
    except Exception:
        detail = resp.text
    code = 2 if resp.status_code in (400, 422) else 1
    print(f"error: {detail}", file=sys.stderr)
    return None, code


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file (see README schema)")
    p.add_argument("--server", help="remote service URL; default runs in-process")
    p.add_argument("--out", help="output CSV path (default: stdout, or "
                                 f"${OUT_ENV}/<name>.csv)")
    p.add_argument("--preset", choices=["hmc1", "hmc2", "hbm"],
                   help="memory preset override")
    p.add_argument("--slices", type=int, help="number of slices")
    p.add_argument("--compute-scale", dest="compute_scale", type=float,
                   help="compute units per slice (>= 1.0)")
    p.add_argument("--mem-bandwidth", dest="mem_bandwidth", type=float,
                   help="per-slice bandwidth in GB/s (forces custom memory)")
    p.add_argument("--batch", type=int, help="default workload batch")
    p.add_argument("--seed", type=int, help="data-generation seed")
    p.add_argument("--workload",
                   help="workload preset name or kind (translator|matmul|conv)")
    p.add_argument("--H", "--hidden", dest="hidden", type=int,
                   help="translator hidden size")
    p.add_argument("--layers", type=int, help="translator layer count")
    p.add_argument("--bucket", help="translator bucket 'src,dst'")
    p.add_argument("--time-steps", dest="time_steps", type=int,
                   help="truncated-BPTT window")
    p.add_argument("--train", action="store_true",
                   help="build the training graph (forward only otherwise)")
    p.add_argument("--wl-batch", dest="wl_batch", type=int,
                   help="workload batch (overrides --batch for the workload)")
    p.add_argument("--m", type=int, help="matmul rows")
    p.add_argument("--k", type=int, help="matmul common dimension")
    p.add_argument("--n", type=int, help="matmul columns")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="slicesim",
        description="Plan, run and sweep memory-slice simulations.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_plan = sub.add_parser("plan", help="print the partition plan")
    p_run = sub.add_parser("run", help="simulate once, emit one CSV row")
    p_run.add_argument("--trace", nargs="?", const="-", metavar="PATH",
                       help="write the event trace (default <out>.trace)")
    p_sweep = sub.add_parser("sweep", help="run once per axis value")
    p_sweep.add_argument("--axis", default="num_slices",
                         choices=["num_slices", "compute_scale", "memory"])
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated axis values, e.g. 2,4,8")
    p_roof = sub.add_parser("roofline", help="emit roofline curve samples")
    p_roof.add_argument("--samples", type=int, default=25)
    p_roof.add_argument("--no-run", action="store_true",
                        help="skip the workload working point")
    for p in (p_plan, p_run, p_sweep, p_roof):
        _add_common(p)

    args = parser.parse_args(argv)
    try:
        payload = _request(args)
    except FileNotFoundError as err:
        return _usage(str(err))
    except SystemExit as err:
        return int(err.code) if err.code else 2

    client = _client(args.server)
    try:
        if args.cmd == "plan":
            data, code = _post(client, "/v1/plan", payload)
            if code:
                return code
            _deliver(data["plan_text"], _out_path(args, "plan.txt"))
        elif args.cmd == "run":
            payload["trace"] = args.trace is not None
            data, code = _post(client, "/v1/run", payload)
            if code:
                return code
            out = _out_path(args, "run.csv")
            _deliver(data["csv"], out)
            if args.trace is not None:
                if args.trace != "-":
                    tpath = Path(args.trace)
                elif out is not None:
                    tpath = out.with_suffix(".trace")
                else:
                    tpath = Path("run.trace")
                tpath.parent.mkdir(parents=True, exist_ok=True)
                tpath.write_text(data["trace_text"] or "", encoding="utf-8")
                print(f"wrote {tpath}")
        elif args.cmd == "sweep":
            try:
                values = [_parse_value(v) for v in args.values.split(",") if v]
            except ValueError as err:
                return _usage(str(err))
            payload.update({"axis": args.axis, "values": values})
            data, code = _post(client, "/v1/sweep", payload)
            if code:
                return code
            _deliver(data["csv"], _out_path(args, "sweep.csv"))
        elif args.cmd == "roofline":
            payload.update({"samples": args.samples,
                            "run_workload": not args.no_run})
            data, code = _post(client, "/v1/roofline", payload)
            if code:
                return code
            _deliver(data["csv"], _out_path(args, "roofline.csv"))
        return 0
    finally:
        client.close()


def _parse_value(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


if __name__ == "__main__":
    sys.exit(main())

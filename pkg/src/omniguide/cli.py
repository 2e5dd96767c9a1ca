"""Command-line interface.

Subcommands: decode (run one guided generation), compare (same job under
several strategies), bench (latency ratio table against a plain baseline),
render (trace visualization), serve (start the fixture model server).

Exit codes: 0 success, 2 usage (bad flags, missing files), 3 config
validation, 4 handshake/compatibility failure, 5 runtime decode error.
"""

from __future__ import annotations

import argparse
import signal
import sys
import threading
from pathlib import Path

from .config import (
    DEFAULT_BENCH_ROWS,
    LoadedConfig,
    build_runtime,
    load_config,
)
from .client import RemoteSource
from .decoder import DecodeResult, bench, decode
from .errors import (
    ConfigError,
    EngineError,
    ProtocolError,
    ToySpecError,
    TransportError,
    VocabularyMismatchError,
)
from .guidance import STRATEGIES
from .report import TraceHeader, alpha_histogram, emit_traces, extract_choice, read_traces, render_attribution
from .server import LatencyModel, serve
from .sources import build_toy_model

_OVERRIDE_FLAGS = (
    "strategy",
    "alpha",
    "seed",
    "temperature",
    "top_p",
    "repetition_penalty",
    "max_new_tokens",
    "warmup_steps",
    "warmup_slope",
    "trace_out",
)


def _add_override_flags(p: argparse.ArgumentParser, include_strategy: bool = True) -> None:
    if include_strategy:
        p.add_argument("--strategy", choices=STRATEGIES, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--top-p", dest="top_p", type=float, default=None)
    p.add_argument("--repetition-penalty", dest="repetition_penalty", type=float, default=None)
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int, default=None)
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int, default=None)
    p.add_argument("--warmup-slope", dest="warmup_slope", type=float, default=None)
    p.add_argument("--trace-out", dest="trace_out", default=None)


def _collect_overrides(args: argparse.Namespace) -> dict:
    return {name: getattr(args, name, None) for name in _OVERRIDE_FLAGS}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="omniguide",
        description="Guided decoding engine: fuse a reasoning model into an omni-modal backbone at inference time.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p_dec = sub.add_parser("decode", help="run one decode job from a config file")
    p_dec.add_argument("--config", required=True)
    _add_override_flags(p_dec)
    p_dec.set_defaults(func=cmd_decode)

    p_cmp = sub.add_parser("compare", help="run the same job under several strategies")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument(
        "--strategy",
        dest="strategies",
        action="append",
        choices=STRATEGIES,
        default=None,
        help="strategy to include (repeatable); defaults to the config's compare list",
    )
    _add_override_flags(p_cmp, include_strategy=False)
    p_cmp.set_defaults(func=cmd_compare)

    p_bench = sub.add_parser("bench", help="latency ratio table over strategy variants")
    p_bench.add_argument("--config", required=True)
    p_bench.add_argument("--reps", type=int, default=None, help="repetitions per row")
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.set_defaults(func=cmd_bench)

    p_ren = sub.add_parser("render", help="visualize a trace file")
    p_ren.add_argument("trace", help="trace file written by decode")
    p_ren.add_argument("--format", choices=("terminal", "html", "histogram"), default="terminal")
    p_ren.add_argument("--bins", type=int, default=10, help="histogram bin count")
    p_ren.add_argument("--out", default=None, help="write output here instead of stdout")
    p_ren.set_defaults(func=cmd_render)

    p_srv = sub.add_parser("serve", help="serve a toy model over the wire protocol")
    p_srv.add_argument("--toy-spec", required=True)
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=0)
    p_srv.add_argument("--per-token-prefill-ms", type=float, default=0.0)
    p_srv.add_argument("--per-step-ms", type=float, default=0.0)
    p_srv.add_argument("--per-kib-ms", type=float, default=0.0)
    p_srv.add_argument("--port-file", default=None, help="write the bound port here once listening")
    p_srv.set_defaults(func=cmd_serve)

    return ap


def _make_header(cfg: LoadedConfig) -> TraceHeader:
    return TraceHeader(
        config_fingerprint=cfg.fingerprint,
        seed=cfg.effective["sampler"]["seed"],
        effective_config=cfg.effective,
    )


def _write_outputs(cfg: LoadedConfig, result: DecodeResult, trace_path: str | None) -> None:
    text_path = cfg.effective["output"]["text"]
    if text_path:
        Path(text_path).write_text(result.text + "\n", encoding="utf-8")
    if trace_path:
        emit_traces(result, trace_path, header=_make_header(cfg))


def cmd_decode(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, overrides=_collect_overrides(args))
    rt = build_runtime(cfg)
    result = decode(rt.make_job())
    _write_outputs(cfg, result, cfg.effective["output"]["trace"])
    print(f"strategy={rt.guidance.strategy} finish={result.finish_reason} tokens={len(result.tokens)}")
    print(result.text)
    if result.finish_reason == "error":
        print(f"decode failed: {result.error}", file=sys.stderr)
        return 5
    return 0


def _strategy_trace_path(base: str, strategy: str) -> str:
    p = Path(base)
    return str(p.with_name(f"{p.stem}.{strategy}{p.suffix or '.jsonl'}"))


def cmd_compare(args: argparse.Namespace) -> int:
    overrides = _collect_overrides(args)
    cfg = load_config(args.config, overrides=overrides)
    strategies = args.strategies or cfg.effective["compare"]["strategies"]
    if not strategies:
        raise ConfigError("no strategies to compare (set compare.strategies or --strategy)")
    rt = build_runtime(cfg)
    gold = cfg.effective["compare"]["gold"]
    options = cfg.effective["compare"]["options"] or ([gold] if gold else None)
    trace_base = cfg.effective["output"]["trace"]

    rows = []
    seen_outputs: dict[tuple, str] = {}
    for strategy in strategies:
        result = decode(rt.make_job(strategy))
        if result.finish_reason == "error":
            print(f"strategy {strategy} failed: {result.error}", file=sys.stderr)
            return 5
        if trace_base:
            emit_traces(result, _strategy_trace_path(trace_base, strategy), header=_make_header(cfg))
        same_as = seen_outputs.setdefault(result.tokens, strategy)
        verdict = "-"
        if gold:
            choice = extract_choice(result.text, options)
            verdict = "yes" if choice == gold else "no"
        rows.append(
            (
                strategy,
                len(result.tokens),
                result.prefill_s * 1e3,
                result.mean_step_s * 1e3,
                verdict,
                "" if same_as == strategy else f"= {same_as}",
                result.text,
            )
        )

    header = f"{'strategy':<18} {'tokens':>6} {'prefill':>10} {'per-step':>10} {'correct':>8}  {'same':<12} output"
    print(header)
    print("-" * len(header))
    for strategy, n, pre, step, verdict, same, text in rows:
        print(
            f"{strategy:<18} {n:>6} {pre:>8.2f}ms {step:>8.2f}ms {verdict:>8}  {same:<12} {text}"
        )
    return 0


_BENCH_ROW_BUILDERS = {
    "none": ("none", False),
    "vcd_ablation": ("vcd_ablation", False),
    "vcd_dup_omni": ("vcd_ablation", True),
    "stepwise": ("stepwise", False),
    "lrm_guide_fixed": ("lrm_guide_fixed", False),
    "average_fusion": ("average_fusion", False),
}


def _latency_from_config(cfg: LoadedConfig) -> LatencyModel:
    lat = cfg.effective["bench"]["latency"]
    return LatencyModel(
        per_token_prefill=lat["per_token_prefill_ms"] / 1e3,
        per_step=lat["per_step_ms"] / 1e3,
        omni_payload_factor=lat["per_kib_ms"] / 1e3,
    )


def cmd_bench(args: argparse.Namespace) -> int:
    overrides = {"seed": args.seed} if args.seed is not None else {}
    cfg = load_config(args.config, overrides=overrides)
    reps = args.reps if args.reps is not None else cfg.effective["bench"]["repetitions"]
    if reps < 1:
        raise ConfigError("bench repetitions must be >= 1")
    rows = cfg.effective["bench"]["rows"]
    if "none" not in rows:
        raise ConfigError("bench.rows must include the 'none' baseline row")

    latency = _latency_from_config(cfg)
    servers = []
    # One compute lock across both fixture servers: all branches contend
    # for a single simulated accelerator, so N-branch stepping costs N
    # baseline steps and the measured ratios are analytically predictable.
    accelerator = threading.Lock()
    try:
        base_source = guide_source = None
        base_entry = cfg.effective["sources"]["base"]
        if "toy_spec" in base_entry:
            srv = serve(
                build_toy_model(base_entry["toy_spec"], name="base"),
                latency,
                compute_lock=accelerator,
            )
            servers.append(srv)
            base_source = RemoteSource(srv.endpoint)
        guide_entry = cfg.effective["sources"]["guide"]
        if guide_entry is not None and "toy_spec" in guide_entry:
            srv = serve(
                build_toy_model(guide_entry["toy_spec"], name="guide"),
                latency,
                compute_lock=accelerator,
            )
            servers.append(srv)
            guide_source = RemoteSource(srv.endpoint)
        rt = build_runtime(cfg, base_source=base_source, guide_source=guide_source)

        jobs = {}
        for row in rows:
            strategy, dup_omni = _BENCH_ROW_BUILDERS[row]
            if strategy in ("stepwise", "lrm_guide_fixed", "average_fusion") and rt.guide_source is None:
                raise ConfigError(f"bench row {row!r} needs a guide source in the config")
            jobs[row] = rt.make_job(strategy, duplicate_omni_neg=dup_omni)
        report = bench(jobs, repetitions=reps)
        print(report.format_table())
        return 0
    finally:
        for srv in servers:
            srv.stop()


def cmd_render(args: argparse.Namespace) -> int:
    header, steps = read_traces(args.trace)
    if args.format == "histogram":
        counts = alpha_histogram(steps, bins=args.bins)
        width = 1.0 / args.bins
        lines = [
            f"[{i * width:.3f}, {(i + 1) * width:.3f}{']' if i == args.bins - 1 else ')'} {int(c)}"
            for i, c in enumerate(counts)
        ]
        out = "\n".join(lines) + "\n"
    else:
        out = render_attribution(steps, fmt=args.format)
    if args.out:
        Path(args.out).write_text(out, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(out, end="" if out.endswith("\n") else "\n")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    model = build_toy_model(args.toy_spec)
    latency = LatencyModel(
        per_token_prefill=args.per_token_prefill_ms / 1e3,
        per_step=args.per_step_ms / 1e3,
        omni_payload_factor=args.per_kib_ms / 1e3,
    )
    server = serve(model, latency, host=args.host, port=args.port)
    host, port = server.address
    if args.port_file:
        Path(args.port_file).write_text(f"{port}\n", encoding="utf-8")
    print(f"serving {model.name} at http://{host}:{port} (Ctrl-C to stop)", flush=True)

    stop_event = threading.Event()

    def _on_signal(signum, frame):
        stop_event.set()

    signal.signal(signal.SIGTERM, _on_signal)
    try:
        stop_event.wait()
    except KeyboardInterrupt:
        pass
    server.stop()
    print("drained and stopped")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code is not None else 0
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except ToySpecError as exc:
        print(f"model spec error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except (VocabularyMismatchError, ProtocolError, TransportError) as exc:
        print(f"compatibility error: {exc}", file=sys.stderr)
        return 4
    except EngineError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 5
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))

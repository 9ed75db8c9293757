"""Command line interface: serve, render, bench.

Every option can also be set through an environment variable named
LIVEJAM_<OPTION> (dashes become underscores), e.g. LIVEJAM_CFG_WEIGHT=3.0.
Explicit flags win over environment values.
"""
from __future__ import annotations

import argparse
import os
import sys

from . import sampling, stream
from .inject import InjectionConfig
from .session import SessionConfig, load_prompt_pairs, load_prompt_schedule, render_offline

ENV_PREFIX = "LIVEJAM_"


def _env_default(name: str, fallback, cast):
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if raw is None:
        return fallback
    return cast(raw)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", default=_env_default("backend", "pattern", str),
                        choices=["pattern", "tiny"], help="generation backend")
    parser.add_argument("--seed", type=int, default=_env_default("seed", 0, int))
    parser.add_argument("--temperature", type=float,
                        default=_env_default("temperature", sampling.DEFAULT_TEMPERATURE, float))
    parser.add_argument("--topk", type=int,
                        default=_env_default("topk", sampling.DEFAULT_TOP_K, int))
    parser.add_argument("--cfg-weight", type=float,
                        default=_env_default("cfg_weight", sampling.DEFAULT_CFG_WEIGHT, float))


def _sampler(args) -> sampling.SamplerConfig:
    return sampling.SamplerConfig(temperature=args.temperature, top_k=args.topk,
                                  cfg_weight=args.cfg_weight)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="livejam",
                                     description="live music stream generator")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the WebSocket service")
    _add_common(serve)
    serve.add_argument("--host", default=_env_default("host", "127.0.0.1", str))
    serve.add_argument("--port", type=int, default=_env_default("port", 8765, int))
    serve.add_argument("--mode", default=_env_default("mode", None, str),
                       choices=["free", "looper"], help="enable audio injection")
    serve.add_argument("--gain", type=float, default=_env_default("gain", 1.0, float))
    serve.add_argument("--bpm", type=float, default=_env_default("bpm", None, float))
    serve.add_argument("--loop-beats", type=int,
                       default=_env_default("loop_beats", None, int))
    serve.add_argument("--unpaced", action="store_true",
                       help="generate as fast as possible instead of realtime pacing")

    render = sub.add_parser("render", help="offline render to a WAV file")
    _add_common(render)
    render.add_argument("--prompts", required=True,
                        help="JSON prompt file ({'prompts': [...]} or {'schedule': [...]})")
    render.add_argument("--duration", type=float, required=True, help="seconds")
    render.add_argument("--out", required=True, help="output WAV path")
    render.add_argument("--metrics", default=None, help="per-chunk metrics CSV path")
    render.add_argument("--transition", default=None,
                        help="file of 'A -> B' prompt pairs; writes <out>.transitions.csv")

    bench = sub.add_parser("bench", help="measure generation speed")
    _add_common(bench)
    bench.add_argument("--seconds", type=float, default=_env_default("seconds", 60.0, float))

    return parser


def _cmd_serve(args) -> int:
    from .service import serve as run_server

    injection = None
    if args.mode:
        injection = InjectionConfig(mode=args.mode, gain=args.gain,
                                    bpm=args.bpm, loop_beats=args.loop_beats)
    config = SessionConfig(backend=args.backend, seed=args.seed,
                           sampler=_sampler(args), injection=injection)
    run_server(config, host=args.host, port=args.port, paced=not args.unpaced)
    return 0


def _cmd_render(args) -> int:
    config = SessionConfig(backend=args.backend, seed=args.seed, sampler=_sampler(args))
    schedule = load_prompt_schedule(args.prompts)
    pairs = load_prompt_pairs(args.transition) if args.transition else None
    trace_csv = f"{args.out}.transitions.csv" if pairs else None
    metrics = render_offline(config, schedule, args.duration, args.out,
                             metrics_csv=args.metrics,
                             transition_pairs=pairs, trace_csv=trace_csv)
    print(f"wrote {args.out}: {metrics.total_seconds:.1f}s, "
          f"cumulative RTF {metrics.cumulative_rtf:.2f}")
    return 0


def _cmd_bench(args) -> int:
    from .session import DEFAULT_PROMPT
    from .model import make_backend
    from .style import HashEmbedder, PromptMix

    backend = make_backend(args.backend, seed=args.seed)
    engine = stream.StreamEngine(
        backend, HashEmbedder(),
        stream.EngineConfig(sampler=_sampler(args), seed=args.seed),
    )
    n_chunks = max(1, int(args.seconds / stream.CHUNK_SECONDS))
    mix = PromptMix.of((DEFAULT_PROMPT, 1.0))
    _, metrics, _ = stream.generate_stream(engine, lambda _i: mix, n_chunks)
    worst = min(s.rtf_chunk for s in metrics.samples)
    print(f"{args.backend}: {metrics.total_seconds:.0f}s audio, "
          f"cumulative RTF {metrics.cumulative_rtf:.2f}, worst chunk RTF {worst:.2f}")
    return 0 if metrics.cumulative_rtf >= 1.0 else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"serve": _cmd_serve, "render": _cmd_render, "bench": _cmd_bench}
    try:
        return handlers[args.command](args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

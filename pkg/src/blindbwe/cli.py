"""Command-line entry point: ``restore --in f.wav --out g.wav --config c.cfg``.

Exit codes: 0 success, 2 validation error, 3 restoration failure (a segment
raised its failure flag), 4 protocol or transport error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from blindbwe.pipeline import ConfigError, PipelineConfig, run_restoration
from blindbwe.wire import ProtocolError, RemoteDenoiserError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RESTORATION = 3
EXIT_TRANSPORT = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="restore",
        description="Blind bandwidth extension of bandlimited audio recordings.",
    )
    parser.add_argument("--in", dest="input", metavar="f.wav", help="input WAV file")
    parser.add_argument("--out", dest="output", metavar="g.wav", help="output WAV file")
    parser.add_argument("--config", metavar="c.cfg", help="JSON configuration file")
    parser.add_argument(
        "--mode",
        choices=("blind", "informed", "simulate", "unconditional"),
        help="override the configured processing mode",
    )
    parser.add_argument("--seed", type=int, help="override the configured RNG seed")
    parser.add_argument(
        "--trace", metavar="trace.log", help="write per-step diagnostics as JSON lines"
    )
    parser.add_argument(
        "--predenoise-cmd",
        metavar="CMD",
        help="external denoiser command run on the input before restoration",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            config = PipelineConfig.from_json(args.config)
        else:
            config = PipelineConfig(mode=args.mode or "blind")
        overrides = {}
        if args.input:
            overrides["input"] = args.input
        if args.output:
            overrides["output"] = args.output
        if args.mode:
            overrides["mode"] = args.mode
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.trace:
            overrides["trace"] = args.trace
        if args.predenoise_cmd:
            overrides["predenoise_cmd"] = args.predenoise_cmd
        if overrides:
            config = replace(config, **overrides)
        result = run_restoration(config)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ProtocolError, RemoteDenoiserError, ConnectionError, TimeoutError, OSError) as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT

    if result.failed_segments:
        print(
            f"restoration failed on segment(s) {result.failed_segments}; "
            "output falls back to the observations there",
            file=sys.stderr,
        )
        return EXIT_RESTORATION
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())

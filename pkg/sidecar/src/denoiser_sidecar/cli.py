"""``sidecar serve`` and ``sidecar train`` entry points."""

from __future__ import annotations

import argparse
import json


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sidecar")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="answer denoiser protocol requests")
    serve.add_argument(
        "--model",
        required=True,
        help="'gaussian' for the analytic denoiser, or a checkpoint path",
    )
    serve.add_argument(
        "--listen",
        default="pipe",
        help="'pipe' for stdio, or host:port for TCP",
    )
    serve.add_argument("--length", type=int, default=4096, help="gaussian mode: signal length")
    serve.add_argument("--rate", type=int, default=22050, help="gaussian mode: sample rate")
    serve.add_argument("--f-knee", type=float, default=500.0, help="gaussian mode: knee Hz")
    serve.add_argument("--sigma-data", type=float, default=0.07, help="gaussian mode: data std")
    serve.add_argument(
        "--max-connections", type=int, default=None, help="TCP: stop after N connections"
    )

    train = sub.add_parser("train", help="train the toy denoiser")
    train.add_argument("--config", help="JSON file of TrainSpec/ToyDatasetSpec overrides")
    train.add_argument("--out", required=True, help="checkpoint output path")
    train.add_argument("--log-every", type=int, default=100)
    return parser


def _train_spec_from_config(path):
    from denoiser_sidecar.data import ToyDatasetSpec
    from denoiser_sidecar.train import TrainSpec

    if path is None:
        return TrainSpec()
    doc = json.loads(open(path).read())
    dataset = ToyDatasetSpec(**doc.pop("dataset", {}))
    return TrainSpec(dataset=dataset, **doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        from denoiser_sidecar.gaussian import GaussianDenoiser
        from denoiser_sidecar.serve import TorchDenoiserBackend, serve_pipe, serve_tcp

        if args.model == "gaussian":
            backend = GaussianDenoiser(
                args.length, args.rate, args.f_knee, args.sigma_data
            )
        else:
            backend = TorchDenoiserBackend(args.model)
        if args.listen == "pipe":
            serve_pipe(backend)
        else:
            host, _, port = args.listen.rpartition(":")
            serve_tcp(backend, host or "127.0.0.1", int(port), args.max_connections)
        return 0

    if args.command == "train":
        from denoiser_sidecar.train import save_checkpoint, train

        spec = _train_spec_from_config(args.config)
        model, summary = train(spec, log_every=args.log_every)
        save_checkpoint(args.out, model, spec, summary)
        print(json.dumps(summary))
        return 0

    return 2


if __name__ == "__main__":
    raise SystemExit(main())

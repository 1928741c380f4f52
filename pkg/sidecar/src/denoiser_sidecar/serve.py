"""Protocol server: answers HELLO/DENOISE/VJP over stdio or TCP.

Responses depend only on the request payload (stateless), one request in
flight per connection. Malformed numerics get an ERROR frame; framing-level
corruption closes the connection.
"""

from __future__ import annotations

import socket
import sys

import numpy as np

from denoiser_sidecar import wire
from denoiser_sidecar.gaussian import GaussianDenoiser


class TorchDenoiserBackend:
    """Checkpoint-backed backend; VJPs come from reverse-mode autodiff."""

    def __init__(self, checkpoint_path):
        import torch

        from denoiser_sidecar.train import load_checkpoint

        self._torch = torch
        self.model, meta = load_checkpoint(checkpoint_path)
        self.supported_length = int(meta["supported_length"])
        self.sample_rate = int(meta["sample_rate"])
        self.sigma_data = float(meta["sigma_data"])

    def denoise(self, x: np.ndarray, sigma: float) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            xt = torch.from_numpy(x.astype(np.float32)).unsqueeze(0)
            out = self.model(xt, torch.tensor([sigma], dtype=torch.float32))
        return out.squeeze(0).numpy().astype(np.float64)

    def vjp(self, x: np.ndarray, sigma: float, v: np.ndarray) -> np.ndarray:
        torch = self._torch
        xt = torch.from_numpy(x.astype(np.float32)).unsqueeze(0).requires_grad_(True)
        vt = torch.from_numpy(v.astype(np.float32)).unsqueeze(0)
        out = self.model(xt, torch.tensor([sigma], dtype=torch.float32))
        (grad,) = torch.autograd.grad(out, xt, grad_outputs=vt)
        return grad.squeeze(0).detach().numpy().astype(np.float64)


def build_backend(model: str):
    if model == "gaussian":
        return GaussianDenoiser()
    return TorchDenoiserBackend(model)


def handle_request(backend, opcode: int, payload: bytes) -> bytes:
    try:
        if opcode == wire.OP_HELLO:
            body = wire.hello_payload(
                backend.sample_rate, backend.supported_length, backend.sigma_data
            )
            return wire.pack_frame(wire.OP_HELLO, body)
        if opcode == wire.OP_DENOISE:
            sigma, x = wire.parse_denoise(payload)
            if not (np.isfinite(sigma) and np.all(np.isfinite(x))):
                return wire.pack_frame(
                    wire.OP_ERROR, wire.error_payload("non-finite values in request")
                )
            if x.size != backend.supported_length:
                return wire.pack_frame(
                    wire.OP_ERROR,
                    wire.error_payload(
                        f"length {x.size} != supported {backend.supported_length}"
                    ),
                )
            return wire.pack_frame(
                wire.OP_RESULT, wire.result_payload(backend.denoise(x, sigma))
            )
        if opcode == wire.OP_VJP:
            sigma, x, v = wire.parse_vjp(payload)
            if not (
                np.isfinite(sigma)
                and np.all(np.isfinite(x))
                and np.all(np.isfinite(v))
            ):
                return wire.pack_frame(
                    wire.OP_ERROR, wire.error_payload("non-finite values in request")
                )
            if x.size != backend.supported_length:
                return wire.pack_frame(
                    wire.OP_ERROR,
                    wire.error_payload(
                        f"length {x.size} != supported {backend.supported_length}"
                    ),
                )
            return wire.pack_frame(
                wire.OP_RESULT, wire.result_payload(backend.vjp(x, sigma, v))
            )
        return wire.pack_frame(
            wire.OP_ERROR, wire.error_payload(f"unsupported opcode {opcode}")
        )
    except Exception as exc:  # the server must answer, not die
        return wire.pack_frame(wire.OP_ERROR, wire.error_payload(str(exc)))


def _serve_stream(backend, read_exact, write) -> None:
    while True:
        header = read_exact(wire.HEADER_LEN)
        if header is None:
            return
        opcode, length = wire.parse_header(header)
        payload = read_exact(length) if length else b""
        if payload is None:
            return
        write(handle_request(backend, opcode, payload))


def serve_pipe(backend) -> None:
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer

    def read_exact(n):
        if n == 0:
            return b""
        chunks = b""
        while len(chunks) < n:
            part = stdin.read(n - len(chunks))
            if not part:
                return None
            chunks += part
        return chunks

    def write(data):
        stdout.write(data)
        stdout.flush()

    _serve_stream(backend, read_exact, write)


def serve_tcp(backend, host: str, port: int, max_connections: int | None = None) -> None:
    sock = socket.socket()
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    sock.listen(4)
    print(f"listening on {sock.getsockname()[0]}:{sock.getsockname()[1]}", file=sys.stderr)
    served = 0
    while max_connections is None or served < max_connections:
        conn, _ = sock.accept()
        served += 1
        with conn:

            def read_exact(n, conn=conn):
                if n == 0:
                    return b""
                chunks = b""
                while len(chunks) < n:
                    part = conn.recv(n - len(chunks))
                    if not part:
                        return None
                    chunks += part
                return chunks

            def write(data, conn=conn):
                conn.sendall(data)

            try:
                _serve_stream(backend, read_exact, write)
            except wire.FrameError as exc:
                print(f"dropping connection: {exc}", file=sys.stderr)

"""Denoiser contracts that carry the generative prior.

A denoiser D(x, sigma) is the sigma-conditional MMSE estimate of clean data;
the sampling score is recovered from it as (D(x, sigma) - x) / sigma^2. Two
concrete providers live here: an analytic Gaussian prior whose denoiser and
score are exact (the workhorse for verification), and a client for external
denoiser processes reached over the framed wire protocol.
"""

from __future__ import annotations

import select
import shlex
import socket
import subprocess
import time
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from blindbwe import wire
from blindbwe.audio import AudioBuffer
from blindbwe.wire import ProtocolError, RemoteDenoiserError

__all__ = [
    "DenoiserContract",
    "GaussianPrior",
    "score_from_denoised",
    "ExternalDenoiser",
    "external_denoiser_connect",
    "ProtocolError",
    "RemoteDenoiserError",
]


@runtime_checkable
class DenoiserContract(Protocol):
    """What the sampler needs from any denoiser provider.

    ``denoise`` returns the MMSE estimate at noise level sigma; ``vjp``
    returns J^T v for J = d denoise / d x, used to backpropagate guidance
    costs through the denoiser.
    """

    sample_rate: int
    supported_length: int
    sigma_data: float

    def denoise(self, x: AudioBuffer, sigma: float) -> AudioBuffer: ...

    def vjp(self, x: AudioBuffer, sigma: float, v: AudioBuffer) -> AudioBuffer: ...


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """Gaussian signal prior, diagonal in the DFT basis.

    ``spectral_variances`` holds one eigenvalue per one-sided DFT bin
    (length n/2 + 1); the implied full spectrum is Hermitian-symmetric so
    samples are real. The MMSE denoiser shrinks each bin by
    lambda / (lambda + sigma^2), exactly and linearly, which makes every
    sampler quantity analytically checkable.
    """

    supported_length: int
    sample_rate: int
    spectral_variances: np.ndarray
    mean: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = int(self.supported_length)
        if n < 2:
            raise ValueError("supported_length must be at least 2")
        lam = np.asarray(self.spectral_variances, dtype=np.float64).reshape(-1)
        if lam.size != n // 2 + 1:
            raise ValueError("need one spectral variance per one-sided DFT bin")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("spectral variances must be positive and finite")
        lam = lam.copy()
        lam.flags.writeable = False
        object.__setattr__(self, "spectral_variances", lam)
        object.__setattr__(self, "supported_length", n)
        if self.mean is not None:
            mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
            if mean.size != n:
                raise ValueError("mean length must equal supported_length")
            mean = mean.copy()
            mean.flags.writeable = False
            object.__setattr__(self, "mean", mean)

    @classmethod
    def with_spectral_knee(
        cls,
        supported_length: int,
        sample_rate: int,
        f_knee_hz: float = 500.0,
        sigma_data: float = 0.07,
    ) -> "GaussianPrior":
        """Frequency-decaying prior lambda(f) proportional to 1/(1+(f/f_knee)^2).

        The scale is chosen so the prior's overall standard deviation equals
        ``sigma_data``; high frequencies then genuinely emerge late in
        reverse diffusion, as broadband music spectra do.
        """
        freqs = np.fft.rfftfreq(supported_length, d=1.0 / sample_rate)
        shape = 1.0 / (1.0 + (freqs / f_knee_hz) ** 2)
        trace = _full_bin_sum(shape, supported_length)
        scale = sigma_data**2 * supported_length / trace
        return cls(supported_length, sample_rate, scale * shape)

    @property
    def sigma_data(self) -> float:
        trace = _full_bin_sum(self.spectral_variances, self.supported_length)
        return float(np.sqrt(trace / self.supported_length))

    def _check(self, x: AudioBuffer) -> None:
        if len(x) != self.supported_length:
            raise ValueError(
                f"buffer length {len(x)} != supported_length {self.supported_length}"
            )
        if x.sample_rate != self.sample_rate:
            raise ValueError("sample rate mismatch with the prior")

    def _shrink(self, sigma: float) -> np.ndarray:
        lam = self.spectral_variances
        return lam / (lam + sigma**2)

    def denoise(self, x: AudioBuffer, sigma: float) -> AudioBuffer:
        """Exact MMSE estimate: per-bin shrinkage toward the prior mean."""
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        self._check(x)
        data = x.samples if self.mean is None else x.samples - self.mean
        out = np.fft.irfft(self._shrink(sigma) * np.fft.rfft(data), n=self.supported_length)
        if self.mean is not None:
            out = out + self.mean
        return x.with_samples(out)

    def vjp(self, x: AudioBuffer, sigma: float, v: AudioBuffer) -> AudioBuffer:
        """J^T v; the Jacobian is symmetric in the Fourier basis, so this is
        the same shrinkage applied to v."""
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        self._check(x)
        self._check(v)
        out = np.fft.irfft(self._shrink(sigma) * np.fft.rfft(v.samples), n=self.supported_length)
        return v.with_samples(out)

    def marginal_score(self, x: AudioBuffer, sigma: float) -> AudioBuffer:
        """Exact score of the noisy marginal N(mean, C + sigma^2 I)."""
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        self._check(x)
        data = x.samples if self.mean is None else x.samples - self.mean
        spec = np.fft.rfft(data) / (self.spectral_variances + sigma**2)
        return x.with_samples(-np.fft.irfft(spec, n=self.supported_length))

    def sample(self, rng: np.random.Generator) -> AudioBuffer:
        """Draw from the prior by spectrally shaping white noise."""
        white = rng.standard_normal(self.supported_length)
        spec = np.sqrt(self.spectral_variances) * np.fft.rfft(white)
        out = np.fft.irfft(spec, n=self.supported_length)
        if self.mean is not None:
            out = out + self.mean
        return AudioBuffer(out, self.sample_rate)


def _full_bin_sum(one_sided: np.ndarray, n: int) -> float:
    """Sum over the full Hermitian-symmetric spectrum from one-sided values."""
    total = 2.0 * float(one_sided.sum()) - float(one_sided[0])
    if n % 2 == 0:
        total -= float(one_sided[-1])
    return total


def score_from_denoised(x_hat0: AudioBuffer, x: AudioBuffer, sigma: float) -> AudioBuffer:
    """Score approximation (x_hat0 - x) / sigma^2 from a denoised estimate."""
    if sigma <= 0:
        raise ValueError("score undefined at zero noise")
    if len(x_hat0) != len(x):
        raise ValueError("buffers must have equal lengths")
    return x.with_samples((x_hat0.samples - x.samples) / sigma**2)


class _SocketTransport:
    def __init__(self, host: str, port: int, timeout: float):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.settimeout(timeout)

    def send(self, data: bytes) -> None:
        self._sock.sendall(data)

    def read_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining:
            chunk = self._sock.recv(remaining)
            if not chunk:
                raise ProtocolError("connection closed mid-frame")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class _PipeTransport:
    """Talks to a spawned server process over its stdio."""

    def __init__(self, argv: list[str], timeout: float):
        self._timeout = timeout
        self._proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )

    def send(self, data: bytes) -> None:
        self._proc.stdin.write(data)
        self._proc.stdin.flush()

    def read_exact(self, n: int) -> bytes:
        fd = self._proc.stdout.fileno()
        chunks = []
        remaining = n
        deadline = time.monotonic() + self._timeout
        while remaining:
            wait = deadline - time.monotonic()
            if wait <= 0:
                raise TimeoutError("timed out waiting for the denoiser process")
            ready, _, _ = select.select([fd], [], [], wait)
            if not ready:
                continue
            chunk = self._proc.stdout.read1(remaining)
            if not chunk:
                raise ProtocolError("denoiser process closed its pipe mid-frame")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        for stream in (self._proc.stdin, self._proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        self._proc.terminate()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


class ExternalDenoiser:
    """A session with a remote denoiser; satisfies ``DenoiserContract``.

    Calls are synchronous with one outstanding request per connection, which
    matches the strictly sequential way the sampler consumes the denoiser.
    Use one session per thread.
    """

    def __init__(self, transport):
        self._transport = transport
        self._transport.send(wire.pack_frame(wire.OP_HELLO, wire.pack_hello(0, 0, 0.0)))
        opcode, payload = self._read_frame()
        if opcode != wire.OP_HELLO:
            if opcode == wire.OP_ERROR:
                raise RemoteDenoiserError(wire.unpack_error(payload))
            raise ProtocolError(f"expected HELLO reply, got opcode {opcode}")
        rate, length, sigma_data = wire.unpack_hello(payload)
        self.sample_rate = int(rate)
        self.supported_length = int(length)
        self.sigma_data = float(sigma_data)

    def _read_frame(self) -> tuple[int, bytes]:
        opcode, length = wire.parse_header(self._transport.read_exact(wire.HEADER_LEN))
        payload = self._transport.read_exact(length) if length else b""
        return opcode, payload

    def _request(self, opcode: int, payload: bytes) -> np.ndarray:
        self._transport.send(wire.pack_frame(opcode, payload))
        reply, body = self._read_frame()
        if reply == wire.OP_ERROR:
            raise RemoteDenoiserError(wire.unpack_error(body))
        if reply != wire.OP_RESULT:
            raise ProtocolError(f"expected RESULT, got opcode {reply}")
        return wire.unpack_result(body)

    def denoise(self, x: AudioBuffer, sigma: float) -> AudioBuffer:
        values = self._request(wire.OP_DENOISE, wire.pack_denoise(sigma, x.samples))
        if values.size != len(x):
            raise ProtocolError("denoise reply length differs from the request")
        return x.with_samples(values)

    def vjp(self, x: AudioBuffer, sigma: float, v: AudioBuffer) -> AudioBuffer:
        values = self._request(wire.OP_VJP, wire.pack_vjp(sigma, x.samples, v.samples))
        if values.size != len(x):
            raise ProtocolError("vjp reply length differs from the request")
        return v.with_samples(values)

    def close(self) -> None:
        self._transport.close()

    def __enter__(self) -> "ExternalDenoiser":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def external_denoiser_connect(endpoint, timeout: float = 30.0) -> ExternalDenoiser:
    """Open a denoiser session over a pipe or TCP.

    ``endpoint`` is either an argv list (or command string) to spawn a
    process speaking the protocol on stdio, or a ``host:port`` string for a
    TCP server. The handshake runs before this returns.
    """
    if isinstance(endpoint, (list, tuple)):
        return ExternalDenoiser(_PipeTransport(list(endpoint), timeout))
    endpoint = str(endpoint)
    host, sep, port = endpoint.rpartition(":")
    if sep and host and port.isdigit() and " " not in endpoint:
        return ExternalDenoiser(_SocketTransport(host, int(port), timeout))
    return ExternalDenoiser(_PipeTransport(shlex.split(endpoint), timeout))

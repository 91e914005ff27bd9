"""L/D sample-rate conversion of a quantized stream and its coherence.

Bottom path: scale the quantized samples by A_f, zero-stuff by L, low-pass
with a Hamming-windowed sinc, keep every D-th sample and requantize.
Top (reference) path: quantize the exact band-limited signal at the same
output instants, computed by a direct truncated sinc sum of the raw samples.

Output m of a stream of N input samples sits at stuffed index
n_m = len(h) - 1 + m D, i.e. at time (n_m - c)/L input periods with
c = (len(h) - 1)/2 the filter centre.
"""
from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import ConfigError
from .moments import build_context, mixed_moment
from .scheme import QuantizationScheme, gaussian_moment_fn, quantize, scale_factor_Af
from .specfun import sinc

DEFAULT_TAPS = 256
DEFAULT_RECON_HALF = 256
_CHUNK = 1 << 16


@dataclass(frozen=True)
class SrcConfig:
    """Rate-conversion settings.

    Attributes
    ----------
    L, D : int
        Interpolation and decimation factors, D < L.
    scheme : QuantizationScheme
    taps_per_phase : int
        Filter length is L * taps_per_phase + 1 (must be odd).
    stream_len : int
        Output samples kept for the coherence estimate.
    seed : int
    A_f_mode : str
        'unity' (gain 1) or 'computed' (<x f>/<f^2>).
    recon_half : int
        Half-width of the direct sinc sum on the reference path.
    both_fir : bool
        Run the reference path through the same FIR instead of the sinc sum.
    """

    L: int
    D: int
    scheme: QuantizationScheme
    taps_per_phase: int = DEFAULT_TAPS
    stream_len: int = 1_000_000
    seed: int = 0
    A_f_mode: str = "unity"
    recon_half: int = DEFAULT_RECON_HALF
    both_fir: bool = False

    def __post_init__(self):
        if int(self.L) < 2:
            raise ConfigError("L must be >= 2")
        if not 1 <= int(self.D) < int(self.L):
            raise ConfigError("D must satisfy 1 <= D < L")
        if self.taps_per_phase < 1 or (self.L * self.taps_per_phase) % 2:
            raise ConfigError("L * taps_per_phase must be even so the filter length is odd")
        if self.stream_len < 1:
            raise ConfigError("stream_len must be positive")
        if self.A_f_mode not in ("unity", "computed"):
            raise ConfigError("A_f_mode must be 'unity' or 'computed'")
        if self.recon_half < 1:
            raise ConfigError("recon_half must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def filter_len(self) -> int:
        return self.L * self.taps_per_phase + 1

    def gain(self) -> float:
        return 1.0 if self.A_f_mode == "unity" else scale_factor_Af(self.scheme)

    def to_dict(self) -> dict:
        return {"L": self.L, "D": self.D, "scheme": self.scheme.to_dict(),
                "taps_per_phase": self.taps_per_phase, "filter_len": self.filter_len,
                "stream_len": self.stream_len, "seed": int(self.seed),
                "A_f_mode": self.A_f_mode, "A_f": self.gain(),
                "recon_half": self.recon_half, "both_fir": self.both_fir}


@dataclass(frozen=True, eq=False)
class SrcReport:
    gamma_empirical: float
    gamma_theoretical: float
    per_phase_mu11: np.ndarray
    per_phase_mu02: np.ndarray
    samples_used: int
    mu20: float = float("nan")
    empirical_phase_gamma: np.ndarray = field(default=None, repr=False)
    config: dict = field(default_factory=dict)
    streams: dict | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"config": self.config, "gamma_empirical": self.gamma_empirical,
                "gamma_theoretical": self.gamma_theoretical,
                "per_phase_mu11": list(map(float, self.per_phase_mu11)),
                "per_phase_mu02": list(map(float, self.per_phase_mu02)),
                "mu20": self.mu20, "samples_used": self.samples_used,
                "empirical_phase_gamma": None if self.empirical_phase_gamma is None
                else list(map(float, self.empirical_phase_gamma))}


def upsample_zero_stuff(seq, L: int) -> np.ndarray:
    """Insert L-1 zeros after every sample."""
    if L < 2:
        raise ConfigError("L must be >= 2")
    x = np.asarray(seq, dtype=np.float64)
    out = np.zeros(x.size * L)
    out[::L] = x
    return out


def design_lowpass(L: int, taps_per_phase: int = DEFAULT_TAPS) -> np.ndarray:
    """Hamming-windowed ideal low-pass with cutoff pi/L.

    h[n] = sinc((n - c)/L) hamming(n): the passband gain is L (sum h ~ L)
    and the centre tap is 1, so taps at multiples of L from the centre are
    exactly 0 and on-grid outputs reproduce the input samples.
    """
    n = L * taps_per_phase + 1
    if n % 2 == 0:
        raise ConfigError("L * taps_per_phase must be even so the filter length is odd")
    c = (n - 1) // 2
    return sinc((np.arange(n) - c) / L) * np.hamming(n)


def polyphase_bank(h, L: int) -> np.ndarray:
    """coefs[r, j] = h[r + j L], zero padded."""
    h = np.asarray(h, dtype=np.float64)
    ntap = -(-h.size // L)
    pad = np.zeros(ntap * L)
    pad[:h.size] = h
    return np.ascontiguousarray(pad.reshape(ntap, L).T)


def output_count(n_in: int, L: int, D: int, filter_len: int) -> int:
    """Number of full-overlap outputs: floor((L n_in - filter_len)/D)."""
    return max((L * n_in - filter_len) // D, 0)


def _threads():
    return max(1, int(os.environ.get("REQUANT_THREADS", "1")))


def _gather(u, top, phase, coefs):
    kern = _backend.kernels.gather_dot
    u = np.ascontiguousarray(u, dtype=np.float64)
    coefs = np.ascontiguousarray(coefs, dtype=np.float64)
    top = np.ascontiguousarray(top, dtype=np.int64)
    phase = np.ascontiguousarray(phase, dtype=np.int64)
    spans = [(a, min(a + _CHUNK, top.size)) for a in range(0, top.size, _CHUNK)]
    nt = _threads()
    run = lambda ab: kern(u, top[ab[0]:ab[1]], phase[ab[0]:ab[1]], coefs)
    if nt > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=nt) as ex:
            parts = list(ex.map(run, spans))
    else:
        parts = [run(ab) for ab in spans]
    return np.concatenate(parts) if parts else np.zeros(0)


def fir_interpolate(u, h, L: int, D: int, m=None) -> np.ndarray:
    """Polyphase evaluation of (zero-stuffed u * h)[len(h) - 1 + m D]."""
    u = np.asarray(u, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    K = output_count(u.size, L, D, h.size)
    m = np.arange(K) if m is None else np.asarray(m, dtype=np.int64)
    n = h.size - 1 + m * D
    return _gather(u, n // L, n % L, polyphase_bank(h, L))


def fir_reference(u, h, L: int, D: int) -> np.ndarray:
    """Direct form: zero-stuff, convolve, keep every D-th full-overlap sample.

    Taps are accumulated in ascending order over the zero-stuffed sequence;
    the skipped products are exact zeros, so the polyphase path must match
    this bit for bit.
    """
    s = upsample_zero_stuff(u, L)
    h = np.asarray(h, dtype=np.float64)
    K = output_count(len(u), L, D, len(h))
    n = len(h) - 1 + np.arange(K) * D
    acc = np.zeros(K)
    for i in range(len(h)):
        acc += h[i] * s[n - i]
    return acc


def output_times(m, L: int, D: int, filter_len: int):
    """Integer part and phase index i (time = base + i/L) of outputs m."""
    c = (filter_len - 1) // 2
    num = c + np.asarray(m, dtype=np.int64) * D
    return num // L, num % L


def sinc_interpolate(x, base, phase, L: int, R: int) -> np.ndarray:
    """x(base + phase/L) by the direct sinc sum over 2R samples."""
    j = np.arange(2 * R)
    lam = np.arange(L) / L
    # top index base + R, tap j multiplies x[base + R - j] at offset R - j
    coefs = sinc(lam[:, None] - (R - j)[None, :])
    return _gather(x, np.asarray(base) + R, phase, coefs)


def src_pipeline(samples, config: SrcConfig, path: str = "bottom", m=None) -> np.ndarray:
    """Rate-converted, requantized stream.

    Parameters
    ----------
    samples : array
        Quantized input (bottom path) or raw samples (top path).
    config : SrcConfig
    path : {'bottom', 'top'}
    m : array of int, optional
        Output indices; default all full-overlap outputs of the FIR.
    """
    x = np.asarray(samples, dtype=np.float64)
    L, D = config.L, config.D
    h = design_lowpass(L, config.taps_per_phase)
    if x.size < h.size:
        raise ConfigError(f"stream of {x.size} samples is shorter than the filter ({h.size})")
    if m is None:
        m = np.arange(output_count(x.size, L, D, h.size))
    m = np.asarray(m, dtype=np.int64)
    if path == "bottom":
        y = fir_interpolate(config.gain() * x, h, L, D, m)
    elif path == "top":
        if config.both_fir:
            y = fir_interpolate(x, h, L, D, m)
        else:
            base, ph = output_times(m, L, D, h.size)
            R = config.recon_half
            if base.size and (base.min() - R + 1 < 0 or base.max() + R >= x.size):
                raise ConfigError("reference sinc window runs past the stream; trim the outputs")
            y = sinc_interpolate(x, base, ph, L, R)
    else:
        raise ValueError("path must be 'bottom' or 'top'")
    return quantize(config.scheme, y)


def gamma_empirical(u, u_tilde) -> float:
    """Zero-lag normalized cross-correlation of two equal-length streams."""
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(u_tilde, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    sab = np.einsum("i,i->", a, b)
    saa = np.einsum("i,i->", a, a)
    sbb = np.einsum("i,i->", b, b)
    return float(sab / math.sqrt(saa * sbb))


def per_phase_moments(scheme: QuantizationScheme, L: int, h: int = 1, window=None):
    """mu_11(i/L) and mu_02(i/L) for i = 0..L-1."""
    m11, m02 = np.empty(L), np.empty(L)
    for i in range(L):
        ctx = build_context(scheme, i / L, h=h, window=window)
        m11[i] = mixed_moment(ctx, 1, 1)
        m02[i] = mixed_moment(ctx, 0, 2)
    return m11, m02


def gamma_theoretical(scheme: QuantizationScheme, L: int, h: int = 1, window=None) -> float:
    """gamma = mean_i mu_11 / (sqrt(mu_20) sqrt(mean_i mu_02)), lambda_i = i/L."""
    if L < 1:
        raise ValueError("L must be >= 1")
    m11, m02 = per_phase_moments(scheme, L, h, window)
    mu20 = gaussian_moment_fn(scheme, 2)
    return float(np.mean(m11) / (math.sqrt(mu20) * math.sqrt(np.mean(m02))))


def stream_plan(config: SrcConfig):
    """Input length and the kept output indices for ``config``.

    Drops filter_len outputs at each end, then makes sure the reference
    sinc window stays inside the stream.
    """
    L, D, flen, R = config.L, config.D, config.filter_len, config.recon_half
    c = (flen - 1) // 2
    # first output whose reference window starts at sample >= 0
    m_ref = max(0, -(-((R - 1) * L - c) // D))
    m0 = max(flen, m_ref)
    m1 = m0 + config.stream_len
    # last kept output needs FIR full overlap and base + R < n_in
    t_last = (c + (m1 - 1) * D) // L
    n_in = max(t_last + R + 1, -(-(flen + (m1 + flen) * D) // L))
    return n_in, np.arange(m0, m1)


def run_src(config: SrcConfig, theory: bool = True, h: int = 1, samples=None,
            keep_streams: bool = False) -> SrcReport:
    """Run both paths on a stream and compare with the theory.

    Parameters
    ----------
    samples : array_like, optional
        Unit-variance input samples to use instead of a generated stream.
        Must hold at least ``stream_plan(config)[0]`` values; extra values
        are ignored.
    keep_streams : bool
        Attach the aligned outputs as ``report.streams`` with keys
        ``top`` and ``bottom``.
    """
    n_in, m = stream_plan(config)
    if samples is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(config.seed))))
        x = rng.standard_normal(n_in)
    else:
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim != 1 or x.size < n_in:
            raise ConfigError(f"input stream needs at least {n_in} samples for "
                              f"{config.stream_len} outputs, got {x.size}")
        x = x[:n_in]
    q = quantize(config.scheme, x)
    u = src_pipeline(x, config, "top", m)
    ut = src_pipeline(q, config, "bottom", m)
    g_emp = gamma_empirical(u, ut)
    _, ph = output_times(m, config.L, config.D, config.filter_len)
    g_phase = np.array([gamma_empirical(u[ph == i], ut[ph == i]) if np.any(ph == i) else np.nan
                        for i in range(config.L)])
    if theory:
        m11, m02 = per_phase_moments(config.scheme, config.L, h)
        mu20 = gaussian_moment_fn(config.scheme, 2)
        g_th = float(np.mean(m11) / (math.sqrt(mu20) * math.sqrt(np.mean(m02))))
    else:
        m11 = m02 = np.full(config.L, np.nan)
        mu20 = g_th = float("nan")
    return SrcReport(gamma_empirical=g_emp, gamma_theoretical=g_th, per_phase_mu11=m11,
                     per_phase_mu02=m02, samples_used=int(m.size), mu20=mu20,
                     empirical_phase_gamma=g_phase, config=config.to_dict(),
                     streams={"top": u, "bottom": ut} if keep_streams else None)


# ----------------------------------------------------------------------------
# stream files

STREAM_MAGIC = b"RQSTREAM"


def write_stream(path, values, fmt: str = "bin", meta: dict | None = None) -> None:
    """Write a float64 stream.

    ``bin``: 8-byte magic ``RQSTREAM``, uint32 little-endian header length,
    UTF-8 JSON header, then little-endian float64 samples.  ``csv``:
    ``# key,value`` header lines, a ``value`` column line, one sample per
    line in repr precision.  The header always carries ``count`` and
    ``dtype``; ``meta`` entries are added to it.
    """
    v = np.ascontiguousarray(values, dtype="<f8")
    if v.ndim != 1:
        raise ValueError("stream must be one-dimensional")
    header = dict(meta or {}, count=int(v.size), dtype="<f8")
    tmp = str(path) + ".tmp"
    if fmt == "bin":
        hb = json.dumps(header, sort_keys=True).encode()
        with open(tmp, "wb") as fh:
            fh.write(STREAM_MAGIC + struct.pack("<I", len(hb)) + hb)
            fh.write(v.tobytes())
    elif fmt == "csv":
        with open(tmp, "w", newline="\n") as fh:
            for k in sorted(header):
                fh.write(f"# {k},{json.dumps(header[k])}\n")
            fh.write("value\n")
            fh.write("".join(f"{float(a)!r}\n" for a in v))
    else:
        raise ValueError(f"unknown stream format {fmt!r}")
    os.replace(tmp, path)


def read_stream(path):
    """Read a stream written by ``write_stream`` (or plain CSV / raw <f8).

    Returns ``(values, header)``.  A binary file without the magic is taken
    as raw little-endian float64; a CSV file may omit the header lines.
    """
    with open(path, "rb") as fh:
        head = fh.read(len(STREAM_MAGIC))
        if head == STREAM_MAGIC:
            (n,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(n).decode())
            values = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
            if values.size != header["count"]:
                raise ValueError(f"{path}: header says {header['count']} samples, found {values.size}")
            return values, header
    if str(path).endswith(".csv"):
        header, vals = {}, []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    k, _, rest = line[1:].strip().partition(",")
                    header[k] = json.loads(rest)
                elif line != "value":
                    vals.append(float(line))
        return np.array(vals), header
    values = np.fromfile(path, dtype="<f8").astype(np.float64)
    return values, {"count": int(values.size), "dtype": "<f8"}

"""Binary checkpoint format.

Layout, all integers little-endian::

    b"FMOE"  u32 version
    u32 n_sites
    per site: u32 M, u32 N, u32 Z, u32 k, f64 eta, u8 renormalize
      per expert: u8 kind, f64 band_center, f64 band_bandwidth (NaN when unbanded)
        spectral (kind 0/1/2 = complex/real/imag):
          u32 n_pairs, u32 n_self, (u32 u, u32 v) * n_pairs, (u32 u, u32 v) * n_self
        unsymmetric (kind 3): u32 n_bins, (u32 u, u32 v) * n_bins
        low-rank (kind 4): u32 rank
    u8 head kind (0 none, 1 linear, 2 hidden), u32 C, u32 hidden width
    u32 n_params, then every trainable array as f64 in canonical order
    frozen bases as f64, row-major, site by site
    u64 optimizer step, u8 has_moments, then first and second moments as f64
    u32 task kind (0 classify, 1 regress), u32 n_outputs
    u32 config length, UTF-8 JSON config
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
import zlib

import numpy as np

from ..exceptions import (
    CheckpointCorruptError,
    CheckpointIOError,
    CheckpointVersionError,
)
from ..experts import BandParams, SpectralExpert
from ..layer import AdapterSite
from ..router import Router
from ..spectral import HalfSpectrum
from ..training import TrainState
from ..variants import LowRankAdapter, UnsymmetricExpert

__all__ = ["FORMAT_VERSION", "MAGIC", "dump_checkpoint", "load_checkpoint", "parse_checkpoint",
           "save_checkpoint"]

MAGIC = b"FMOE"
FORMAT_VERSION = 1
_MODE_CODES = {"complex": 0, "real": 1, "imag": 2}
_CODE_MODES = {v: k for k, v in _MODE_CODES.items()}


def _expert_code(expert):
    if isinstance(expert, SpectralExpert):
        return _MODE_CODES[expert.mode]
    if isinstance(expert, UnsymmetricExpert):
        return 3
    if isinstance(expert, LowRankAdapter):
        return 4
    raise CheckpointCorruptError(f"cannot serialize expert type {type(expert).__name__}")


def _pairs(arr):
    arr = np.asarray(arr, dtype="<u4").reshape(-1, 2)
    return arr.tobytes()


def dump_checkpoint(state: TrainState, config=None) -> bytes:
    out = io.BytesIO()
    w = out.write
    w(MAGIC)
    w(struct.pack("<I", FORMAT_VERSION))
    w(struct.pack("<I", len(state.sites)))
    for site in state.sites:
        m, n = site.dims
        w(struct.pack("<IIIIdB", m, n, site.z, site.k, site.eta, int(site.renormalize)))
        for e in site.experts:
            code = _expert_code(e)
            band = getattr(e, "band", None)
            c, bw = (band.center, band.bandwidth) if band is not None else (math.nan, math.nan)
            w(struct.pack("<Bdd", code, c, bw))
            if code <= 2:
                w(struct.pack("<II", len(e.pair_idx), len(e.self_idx)))
                w(_pairs(e.pair_idx))
                w(_pairs(e.self_idx))
            elif code == 3:
                w(struct.pack("<I", len(e.bins)))
                w(_pairs(e.bins))
            else:
                w(struct.pack("<I", e.rank))
    head = state.head
    if not head:
        w(struct.pack("<BII", 0, 0, 0))
    elif "hidden_weight" in head:
        w(struct.pack("<BII", 2, head["weight"].shape[0], head["hidden_weight"].shape[0]))
    else:
        w(struct.pack("<BII", 1, head["weight"].shape[0], 0))
    params = state.named_parameters()
    w(struct.pack("<I", len(params)))
    for _, arr in params:
        w(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    for site in state.sites:
        w(np.ascontiguousarray(site.base, dtype="<f8").tobytes())
    has_moments = all(name in state.moments for name, _ in params) and bool(params)
    w(struct.pack("<QB", state.step, int(has_moments)))
    if has_moments:
        for name, _ in params:
            m1, m2 = state.moments[name]
            w(np.ascontiguousarray(m1, dtype="<f8").tobytes())
            w(np.ascontiguousarray(m2, dtype="<f8").tobytes())
    w(struct.pack("<II", 0 if state.task_kind == "classify" else 1, state.n_outputs or 0))
    if config is None:
        cfg = b""
    else:
        data = config.to_dict() if hasattr(config, "to_dict") else dict(config)
        cfg = json.dumps(data, sort_keys=True).encode("utf-8")
    w(struct.pack("<I", len(cfg)))
    w(cfg)
    body = out.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(state, path, config=None):
    data = dump_checkpoint(state, config)
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointIOError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointCorruptError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def f64(self, shape):
        count = int(np.prod(shape))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(float).reshape(shape)

    def index_pairs(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<u4").astype(np.int64).reshape(count, 2)


def parse_checkpoint(data: bytes):
    """Decode checkpoint bytes into ``(state, config_dict_or_None)``."""
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointCorruptError("not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", data[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointCorruptError("checkpoint CRC mismatch")
    r = _Reader(body)
    r.take(8)
    (n_sites,) = r.unpack("<I")
    topo = []
    for _ in range(n_sites):
        m, n, z, k, eta, renorm = r.unpack("<IIIIdB")
        experts = []
        for _ in range(z):
            code, c, bw = r.unpack("<Bdd")
            band = None if math.isnan(c) else BandParams(c, bw)
            if code <= 2:
                n_pairs, n_self = r.unpack("<II")
                pairs = r.index_pairs(n_pairs)
                selfs = r.index_pairs(n_self)
                skeleton = HalfSpectrum((m, n), pair_idx=pairs, pair_vals=np.zeros(n_pairs),
                                        self_idx=selfs, self_vals=np.zeros(n_self))
                experts.append(SpectralExpert(skeleton, band=band, mode=_CODE_MODES[code]))
            elif code == 3:
                (n_bins,) = r.unpack("<I")
                experts.append(UnsymmetricExpert((m, n), r.index_pairs(n_bins), band=band))
            elif code == 4:
                (rank,) = r.unpack("<I")
                experts.append(LowRankAdapter((m, n), rank))
            else:
                raise CheckpointCorruptError(f"unknown expert kind code {code}")
        topo.append((m, n, z, k, eta, bool(renorm), experts))
    head_kind, n_cls, hidden = r.unpack("<BII")
    m_last = topo[-1][0] if topo else 0
    head = {}
    if head_kind == 1:
        head = {"weight": np.zeros((n_cls, m_last)), "bias": np.zeros(n_cls)}
    elif head_kind == 2:
        head = {"hidden_weight": np.zeros((hidden, m_last)), "hidden_bias": np.zeros(hidden),
                "weight": np.zeros((n_cls, hidden)), "bias": np.zeros(n_cls)}
    elif head_kind != 0:
        raise CheckpointCorruptError(f"unknown head kind {head_kind}")

    sites = []
    for m, n, z, k, eta, renorm, experts in topo:
        base = np.zeros((m, n))
        base.setflags(write=False)
        sites.append(AdapterSite(base, experts, Router(np.zeros((z, n)), k), eta=eta,
                                 renormalize=renorm))
    state = TrainState(sites, head, task_kind="classify")
    params = state.named_parameters()
    (n_params,) = r.unpack("<I")
    if n_params != len(params):
        raise CheckpointCorruptError("parameter count disagrees with topology")
    for _, arr in params:
        arr[...] = r.f64(arr.shape)
    for site in sites:
        base = r.f64(site.dims).copy()
        base.setflags(write=False)
        site.base = base
    step, has_moments = r.unpack("<QB")
    state.step = step
    if has_moments:
        for name, arr in params:
            state.moments[name] = (r.f64(arr.shape).copy(), r.f64(arr.shape).copy())
    task_code, n_outputs = r.unpack("<II")
    state.task_kind = "classify" if task_code == 0 else "regress"
    state.n_outputs = n_outputs
    (cfg_len,) = r.unpack("<I")
    cfg = r.take(cfg_len)
    if r.pos != len(body):
        raise CheckpointCorruptError("trailing bytes after config block")
    config = json.loads(cfg.decode("utf-8")) if cfg_len else None
    return state, config


def load_checkpoint(path, with_config=False):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {exc}") from exc
    state, config = parse_checkpoint(data)
    return (state, config) if with_config else state

"""Sparse voxel attention encoder mapping a camera-frame point cloud to a
single embedding, with an exact analytic backward pass.

Pipeline: voxelize -> linear input projection -> learned per-axis positional
embeddings -> pre-norm transformer layers with softmax self-attention inside
non-overlapping voxel windows and GELU feed-forward blocks -> final layer
norm -> multi-head attention pooling whose query starts as the mean voxel
feature -> linear projection to the output dimension.

Everything is plain float64 numpy. The backward pass is hand-derived
reverse-mode differentiation over the cached forward intermediates; it is
validated against central finite differences in the test suite. Checkpoints
store parameters as little-endian f32 next to a JSON copy of the config.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

LN_EPS = 1e-6
POINT_FEATURES = 5  # dx, dy, dz, mean intensity, count


class EncoderError(ValueError):
    pass


class EmptyInputError(EncoderError):
    pass


class NumericError(EncoderError):
    pass


class CheckpointError(EncoderError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    voxel_size: tuple = (0.5, 0.5, 6.0)
    window_shape: tuple = (12, 12, 1)
    pc_range: tuple = (0.0, -20.0, -2.0, 40.0, 20.0, 4.0)
    num_layers: int = 4
    d_model: int = 128
    d_ff: int = 256
    pool_heads: int = 8
    d_out: int = 768

    def __post_init__(self):
        if len(self.voxel_size) != 3 or any(s <= 0 for s in self.voxel_size):
            raise EncoderError("voxel_size must be three positive extents")
        if len(self.window_shape) != 3 or any(w < 1 for w in self.window_shape):
            raise EncoderError("window_shape must be three positive counts")
        if len(self.pc_range) != 6:
            raise EncoderError("pc_range must be (xmin, ymin, zmin, xmax, ymax, zmax)")
        for axis in range(3):
            if self.pc_range[axis] >= self.pc_range[axis + 3]:
                raise EncoderError(f"pc_range min must be < max on axis {axis}")
        if min(self.num_layers, self.d_model, self.d_ff, self.pool_heads, self.d_out) < 1:
            raise EncoderError("all dimensions must be positive")
        if self.d_model % self.pool_heads:
            raise EncoderError("d_model must be divisible by pool_heads")

    @property
    def grid_shape(self) -> tuple:
        return tuple(
            int(math.ceil((self.pc_range[a + 3] - self.pc_range[a]) / self.voxel_size[a]))
            for a in range(3)
        )

    def to_json(self) -> str:
        return json.dumps({
            "voxel_size": list(self.voxel_size),
            "window_shape": list(self.window_shape),
            "pc_range": list(self.pc_range),
            "num_layers": self.num_layers,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "pool_heads": self.pool_heads,
            "d_out": self.d_out,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EncoderConfig":
        doc = json.loads(text)
        return cls(
            voxel_size=tuple(doc["voxel_size"]),
            window_shape=tuple(doc["window_shape"]),
            pc_range=tuple(doc["pc_range"]),
            num_layers=int(doc["num_layers"]),
            d_model=int(doc["d_model"]),
            d_ff=int(doc["d_ff"]),
            pool_heads=int(doc["pool_heads"]),
            d_out=int(doc["d_out"]),
        )

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_json().encode()).digest()


@dataclass
class VoxelGrid:
    """Occupied voxels in canonical (i, j, k) lexicographic order.

    features columns: mean offset from the voxel center (x, y, z), mean
    intensity, point count.
    """

    indices: np.ndarray  # (v, 3) int64
    features: np.ndarray  # (v, 5) float64

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        feats = np.asarray(self.features, dtype=np.float64)
        if idx.ndim != 2 or idx.shape[1] != 3 or feats.shape != (idx.shape[0], POINT_FEATURES):
            raise EncoderError("voxel grid arrays have inconsistent shapes")
        if idx.shape[0] and (feats[:, 4] < 1).any():
            raise EncoderError("voxel counts must be >= 1")
        self.indices = idx
        self.features = feats

    def __len__(self):
        return self.indices.shape[0]

    def as_dict(self):
        return {tuple(self.indices[i]): self.features[i].copy() for i in range(len(self))}


def voxelize(cloud, cfg: EncoderConfig) -> VoxelGrid:
    """Group camera-frame points into voxels with mean-offset/intensity stats.

    Points outside pc_range (half-open per axis) are dropped silently; a cloud
    with no surviving points raises EmptyInputError. Points are reduced in a
    canonical sort order so the result is identical for any input permutation.
    """
    pts = cloud.points
    lo = np.array(cfg.pc_range[:3])
    hi = np.array(cfg.pc_range[3:])
    size = np.array(cfg.voxel_size)
    inside = ((pts[:, :3] >= lo) & (pts[:, :3] < hi)).all(axis=1)
    pts = pts[inside]
    if pts.shape[0] == 0:
        raise EmptyInputError("no points inside the configured range")

    idx = np.floor((pts[:, :3] - lo) / size).astype(np.int64)
    grid = cfg.grid_shape
    np.clip(idx, 0, np.array(grid) - 1, out=idx)  # guards boundary fp round-up
    flat = (idx[:, 0] * grid[1] + idx[:, 1]) * grid[2] + idx[:, 2]

    # Canonical reduce order: voxel id, then coordinates, then intensity.
    order = np.lexsort((pts[:, 3], pts[:, 2], pts[:, 1], pts[:, 0], flat))
    pts = pts[order]
    idx = idx[order]
    flat = flat[order]

    uniq_flat, starts = np.unique(flat, return_index=True)
    counts = np.diff(np.append(starts, flat.shape[0]))
    centers = lo + (idx[starts] + 0.5) * size
    sums_xyz = np.add.reduceat(pts[:, :3], starts, axis=0)
    sums_int = np.add.reduceat(pts[:, 3], starts)
    feats = np.empty((uniq_flat.shape[0], POINT_FEATURES))
    feats[:, :3] = sums_xyz / counts[:, None] - centers
    feats[:, 3] = sums_int / counts
    feats[:, 4] = counts
    return VoxelGrid(idx[starts], feats)


def parameter_layout(cfg: EncoderConfig) -> list:
    """Named (segment, shape) pairs defining the flat parameter vector."""
    dm, dff = cfg.d_model, cfg.d_ff
    nx, ny, nz = cfg.grid_shape
    segs = [
        ("input_proj_w", (POINT_FEATURES, dm)),
        ("input_proj_b", (dm,)),
        ("pos_x", (nx, dm)),
        ("pos_y", (ny, dm)),
        ("pos_z", (nz, dm)),
    ]
    for layer in range(cfg.num_layers):
        p = f"layer{layer}"
        segs += [
            (f"{p}_ln1_gamma", (dm,)), (f"{p}_ln1_beta", (dm,)),
            (f"{p}_attn_wq", (dm, dm)), (f"{p}_attn_bq", (dm,)),
            (f"{p}_attn_wk", (dm, dm)), (f"{p}_attn_bk", (dm,)),
            (f"{p}_attn_wv", (dm, dm)), (f"{p}_attn_bv", (dm,)),
            (f"{p}_attn_wo", (dm, dm)), (f"{p}_attn_bo", (dm,)),
            (f"{p}_ln2_gamma", (dm,)), (f"{p}_ln2_beta", (dm,)),
            (f"{p}_ff_w1", (dm, dff)), (f"{p}_ff_b1", (dff,)),
            (f"{p}_ff_w2", (dff, dm)), (f"{p}_ff_b2", (dm,)),
        ]
    segs += [
        ("final_ln_gamma", (dm,)), ("final_ln_beta", (dm,)),
        ("pool_wq", (dm, dm)), ("pool_bq", (dm,)),
        ("pool_wk", (dm, dm)), ("pool_bk", (dm,)),
        ("pool_wv", (dm, dm)), ("pool_bv", (dm,)),
        ("pool_wo", (dm, dm)), ("pool_bo", (dm,)),
        ("out_proj_w", (dm, cfg.d_out)), ("out_proj_b", (cfg.d_out,)),
    ]
    return segs


class EncoderParams:
    """Flat float64 parameter vector with named segment views (no copies)."""

    def __init__(self, cfg: EncoderConfig, vector: np.ndarray | None = None):
        self.cfg = cfg
        self.layout = parameter_layout(cfg)
        total = sum(int(np.prod(shape)) for _, shape in self.layout)
        if vector is None:
            vector = np.zeros(total)
        vector = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vector.size != total:
            raise EncoderError(f"parameter vector has {vector.size} entries, config needs {total}")
        if not np.isfinite(vector).all():
            raise EncoderError("parameters must be finite")
        self.vector = vector
        self.seg = {}
        offset = 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            self.seg[name] = self.vector[offset:offset + n].reshape(shape)
            offset += n

    def __len__(self):
        return self.vector.size

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.cfg, self.vector.copy())

    @classmethod
    def init_random(cls, cfg: EncoderConfig, seed: int) -> "EncoderParams":
        """Seeded uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] init for weights
        and biases; layer-norm gains start at 1, shifts at 0."""
        rng = np.random.default_rng(seed)
        params = cls(cfg)
        for name, shape in params.layout:
            view = params.seg[name]
            if name.endswith("_gamma"):
                view[:] = 1.0
            elif name.endswith("_beta"):
                view[:] = 0.0
            else:
                fan_in = shape[0] if len(shape) == 2 else cfg.d_model
                bound = 1.0 / math.sqrt(fan_in)
                view[:] = rng.uniform(-bound, bound, size=shape)
        return params


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def _layernorm(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = centered * inv_std
    return xhat * gamma + beta, (xhat, inv_std)


def _layernorm_backward(dy, cache, gamma):
    xhat, inv_std = cache
    d_gamma = (dy * xhat).sum(axis=0)
    d_beta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, d_gamma, d_beta


def _split_heads(x, n_heads):
    # (s, dm) -> (heads, s, dh)
    s, dm = x.shape
    return x.reshape(s, n_heads, dm // n_heads).transpose(1, 0, 2)


def _merge_heads(x):
    # (heads, s, dh) -> (s, dm)
    h, s, dh = x.shape
    return x.transpose(1, 0, 2).reshape(s, h * dh)


def _window_groups(indices: np.ndarray, cfg: EncoderConfig) -> list:
    """Voxel row indices grouped by non-overlapping window, preserving the
    canonical in-window order."""
    win = np.asarray(cfg.window_shape, dtype=np.int64)
    wid = indices // win
    grid = cfg.grid_shape
    wy = -(-grid[1] // win[1])
    wz = -(-grid[2] // win[2])
    flat = (wid[:, 0] * wy + wid[:, 1]) * wz + wid[:, 2]
    groups = {}
    for row, f in enumerate(flat):
        groups.setdefault(int(f), []).append(row)
    return [np.array(groups[f], dtype=np.int64) for f in sorted(groups)]


def _check_finite(x, stage: str):
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite values at {stage}")


def _forward(grid: VoxelGrid, params: EncoderParams, cfg: EncoderConfig, keep_cache: bool):
    if len(grid) == 0:
        raise EmptyInputError("cannot encode an empty voxel grid")
    seg = params.seg
    scale = 1.0 / math.sqrt(cfg.d_model // cfg.pool_heads)
    x0 = grid.features
    ix, iy, iz = grid.indices[:, 0], grid.indices[:, 1], grid.indices[:, 2]

    h = x0 @ seg["input_proj_w"] + seg["input_proj_b"]
    h = h + seg["pos_x"][ix] + seg["pos_y"][iy] + seg["pos_z"][iz]
    _check_finite(h, "input projection")

    windows = _window_groups(grid.indices, cfg)
    cache = {"x0": x0, "windows": windows, "layers": []} if keep_cache else None

    for layer in range(cfg.num_layers):
        p = f"layer{layer}"
        lc = {"h_in": h.copy()} if keep_cache else None
        a_norm, ln1 = _layernorm(h, seg[f"{p}_ln1_gamma"], seg[f"{p}_ln1_beta"])
        if keep_cache:
            lc["ln1"] = ln1
            lc["a_norm"] = a_norm
            lc["attn"] = []
        attn_out = np.zeros_like(h)
        for rows in windows:
            a = a_norm[rows]
            q = a @ seg[f"{p}_attn_wq"] + seg[f"{p}_attn_bq"]
            k = a @ seg[f"{p}_attn_wk"] + seg[f"{p}_attn_bk"]
            v = a @ seg[f"{p}_attn_wv"] + seg[f"{p}_attn_bv"]
            qh = _split_heads(q, cfg.pool_heads)
            kh = _split_heads(k, cfg.pool_heads)
            vh = _split_heads(v, cfg.pool_heads)
            scores = qh @ kh.transpose(0, 2, 1) * scale
            scores -= scores.max(axis=-1, keepdims=True)
            prob = np.exp(scores)
            prob /= prob.sum(axis=-1, keepdims=True)
            o = _merge_heads(prob @ vh)
            attn_out[rows] = o @ seg[f"{p}_attn_wo"] + seg[f"{p}_attn_bo"]
            if keep_cache:
                lc["attn"].append({"a": a, "qh": qh, "kh": kh, "vh": vh, "prob": prob, "o": o})
        h = h + attn_out
        _check_finite(h, f"layer {layer} attention")

        b_norm, ln2 = _layernorm(h, seg[f"{p}_ln2_gamma"], seg[f"{p}_ln2_beta"])
        u1 = b_norm @ seg[f"{p}_ff_w1"] + seg[f"{p}_ff_b1"]
        g = _gelu(u1)
        u2 = g @ seg[f"{p}_ff_w2"] + seg[f"{p}_ff_b2"]
        if keep_cache:
            lc["h_mid"] = h.copy()
            lc["ln2"] = ln2
            lc["b_norm"] = b_norm
            lc["u1"] = u1
            lc["g"] = g
            cache["layers"].append(lc)
        h = h + u2
        _check_finite(h, f"layer {layer} feed-forward")

    if keep_cache:
        cache["h_final_in"] = h.copy()
    hf, lnf = _layernorm(h, seg["final_ln_gamma"], seg["final_ln_beta"])

    q0 = hf.mean(axis=0)
    q = q0 @ seg["pool_wq"] + seg["pool_bq"]
    k = hf @ seg["pool_wk"] + seg["pool_bk"]
    v = hf @ seg["pool_wv"] + seg["pool_bv"]
    n_heads, dh = cfg.pool_heads, cfg.d_model // cfg.pool_heads
    qh = q.reshape(n_heads, dh)
    kh = _split_heads(k, n_heads)
    vh = _split_heads(v, n_heads)
    scores = np.einsum("hd,hvd->hv", qh, kh) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    prob = np.exp(scores)
    prob /= prob.sum(axis=-1, keepdims=True)
    oh = np.einsum("hv,hvd->hd", prob, vh)
    o = oh.reshape(cfg.d_model)
    pooled = o @ seg["pool_wo"] + seg["pool_bo"]
    z = pooled @ seg["out_proj_w"] + seg["out_proj_b"]
    _check_finite(z, "output projection")

    if keep_cache:
        cache.update(hf=hf, lnf=lnf, q0=q0, pool_qh=qh, pool_kh=kh, pool_vh=vh,
                     pool_prob=prob, pool_o=o, pooled=pooled)
    return z, cache


def encode(grid: VoxelGrid, params: EncoderParams, cfg: EncoderConfig) -> np.ndarray:
    """Deterministic forward pass producing a d_out embedding."""
    z, _ = _forward(grid, params, cfg, keep_cache=False)
    return z


def encoder_grad(
    grid: VoxelGrid,
    params: EncoderParams,
    cfg: EncoderConfig,
    upstream: np.ndarray,
) -> np.ndarray:
    """Gradient of (upstream . embedding) with respect to every parameter.

    Returns a flat vector aligned with params.vector. Exact reverse-mode
    differentiation; no numerical approximation anywhere.
    """
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if upstream.size != cfg.d_out:
        raise EncoderError(f"upstream must have {cfg.d_out} entries")
    z, cache = _forward(grid, params, cfg, keep_cache=True)
    del z
    seg = params.seg
    grads = EncoderParams(cfg)
    g = grads.seg
    n_heads, dh = cfg.pool_heads, cfg.d_model // cfg.pool_heads
    scale = 1.0 / math.sqrt(dh)

    # Output projection.
    g["out_proj_w"][:] = np.outer(cache["pooled"], upstream)
    g["out_proj_b"][:] = upstream
    d_pooled = seg["out_proj_w"] @ upstream

    # Pooling output projection.
    g["pool_wo"][:] = np.outer(cache["pool_o"], d_pooled)
    g["pool_bo"][:] = d_pooled
    d_o = seg["pool_wo"] @ d_pooled

    # Pooling attention.
    prob, kh, vh, qh = cache["pool_prob"], cache["pool_kh"], cache["pool_vh"], cache["pool_qh"]
    d_oh = d_o.reshape(n_heads, dh)
    d_prob = np.einsum("hd,hvd->hv", d_oh, vh)
    d_vh = prob[:, :, None] * d_oh[:, None, :]
    d_scores = prob * (d_prob - (d_prob * prob).sum(axis=-1, keepdims=True))
    d_qh = np.einsum("hv,hvd->hd", d_scores, kh) * scale
    d_kh = d_scores[:, :, None] * qh[:, None, :] * scale

    d_q = d_qh.reshape(cfg.d_model)
    d_k = _merge_heads(d_kh)
    d_v = _merge_heads(d_vh)
    hf, q0 = cache["hf"], cache["q0"]
    g["pool_wq"][:] = np.outer(q0, d_q)
    g["pool_bq"][:] = d_q
    g["pool_wk"][:] = hf.T @ d_k
    g["pool_bk"][:] = d_k.sum(axis=0)
    g["pool_wv"][:] = hf.T @ d_v
    g["pool_bv"][:] = d_v.sum(axis=0)
    d_q0 = seg["pool_wq"] @ d_q
    d_hf = d_k @ seg["pool_wk"].T + d_v @ seg["pool_wv"].T
    d_hf += d_q0[None, :] / len(grid)

    # Final layer norm.
    d_h, d_gamma, d_beta = _layernorm_backward(d_hf, cache["lnf"], seg["final_ln_gamma"])
    g["final_ln_gamma"][:] = d_gamma
    g["final_ln_beta"][:] = d_beta

    windows = cache["windows"]
    for layer in reversed(range(cfg.num_layers)):
        p = f"layer{layer}"
        lc = cache["layers"][layer]

        # Feed-forward block: h_out = h_mid + W2(gelu(W1 ln2(h_mid)+b1))+b2.
        d_u2 = d_h
        g[f"{p}_ff_w2"][:] = lc["g"].T @ d_u2
        g[f"{p}_ff_b2"][:] = d_u2.sum(axis=0)
        d_g = d_u2 @ seg[f"{p}_ff_w2"].T
        d_u1 = d_g * _gelu_grad(lc["u1"])
        g[f"{p}_ff_w1"][:] = lc["b_norm"].T @ d_u1
        g[f"{p}_ff_b1"][:] = d_u1.sum(axis=0)
        d_b_norm = d_u1 @ seg[f"{p}_ff_w1"].T
        d_from_ln, d_gamma, d_beta = _layernorm_backward(
            d_b_norm, lc["ln2"], seg[f"{p}_ln2_gamma"]
        )
        g[f"{p}_ln2_gamma"][:] = d_gamma
        g[f"{p}_ln2_beta"][:] = d_beta
        d_h = d_h + d_from_ln

        # Attention block: h_mid = h_in + attn(ln1(h_in)).
        d_a_norm = np.zeros_like(d_h)
        for rows, wc in zip(windows, lc["attn"]):
            d_attn_out = d_h[rows]
            g[f"{p}_attn_wo"][:] += wc["o"].T @ d_attn_out
            g[f"{p}_attn_bo"][:] += d_attn_out.sum(axis=0)
            d_o = d_attn_out @ seg[f"{p}_attn_wo"].T
            d_oh = _split_heads(d_o, n_heads)
            prob, vh, kh, qh = wc["prob"], wc["vh"], wc["kh"], wc["qh"]
            d_prob = d_oh @ vh.transpose(0, 2, 1)
            d_vh = prob.transpose(0, 2, 1) @ d_oh
            d_scores = prob * (d_prob - (d_prob * prob).sum(axis=-1, keepdims=True))
            d_qh = d_scores @ kh * scale
            d_kh = d_scores.transpose(0, 2, 1) @ qh * scale
            d_q = _merge_heads(d_qh)
            d_k = _merge_heads(d_kh)
            d_v = _merge_heads(d_vh)
            a = wc["a"]
            g[f"{p}_attn_wq"][:] += a.T @ d_q
            g[f"{p}_attn_bq"][:] += d_q.sum(axis=0)
            g[f"{p}_attn_wk"][:] += a.T @ d_k
            g[f"{p}_attn_bk"][:] += d_k.sum(axis=0)
            g[f"{p}_attn_wv"][:] += a.T @ d_v
            g[f"{p}_attn_bv"][:] += d_v.sum(axis=0)
            d_a_norm[rows] = (
                d_q @ seg[f"{p}_attn_wq"].T
                + d_k @ seg[f"{p}_attn_wk"].T
                + d_v @ seg[f"{p}_attn_wv"].T
            )
        d_from_ln, d_gamma, d_beta = _layernorm_backward(
            d_a_norm, lc["ln1"], seg[f"{p}_ln1_gamma"]
        )
        g[f"{p}_ln1_gamma"][:] = d_gamma
        g[f"{p}_ln1_beta"][:] = d_beta
        d_h = d_h + d_from_ln

    # Positional embeddings and input projection.
    ix, iy, iz = grid.indices[:, 0], grid.indices[:, 1], grid.indices[:, 2]
    np.add.at(g["pos_x"], ix, d_h)
    np.add.at(g["pos_y"], iy, d_h)
    np.add.at(g["pos_z"], iz, d_h)
    g["input_proj_w"][:] = cache["x0"].T @ d_h
    g["input_proj_b"][:] = d_h.sum(axis=0)

    return grads.vector


CHECKPOINT_MAGIC = b"LCWT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: EncoderParams, cfg: EncoderConfig) -> None:
    """Write parameters as f32 plus a JSON config sidecar (<path>.config.json)."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(cfg.digest())
        fh.write(struct.pack("<Q", len(params)))
        fh.write(params.vector.astype("<f4").tobytes())
    path.with_suffix(path.suffix + ".config.json").write_text(cfg.to_json())


def load_checkpoint(path) -> tuple:
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".config.json")
    if not sidecar.exists():
        raise CheckpointError(f"missing config sidecar {sidecar}")
    cfg = EncoderConfig.from_json(sidecar.read_text())
    raw = path.read_bytes()
    if len(raw) < 4 + 2 + 32 + 8:
        raise CheckpointError(f"{path}: truncated header")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    digest = raw[6:38]
    if digest != cfg.digest():
        raise CheckpointError(f"{path}: config digest mismatch")
    (count,) = struct.unpack_from("<Q", raw, 38)
    body = raw[46:]
    if len(body) != 4 * count:
        raise CheckpointError(f"{path}: expected {4 * count} payload bytes, got {len(body)}")
    vector = np.frombuffer(body, dtype="<f4").astype(np.float64)
    return EncoderParams(cfg, vector), cfg

"""Toy residual speaker-embedding network with pluggable normalization sites.

A miniature R-vector analogue: conv stem, four residual stages (one basic
block of two 3x3 convs each, stages 2-4 downsample by 2), average pooling
over time then frequency, a linear embedding layer and a softmax classifier
head. Normalization layers (rfn / wrfn / bwrfn) can be inserted before the
stem ("pre-conv") and/or after each stage ("L1".."L4").

Checkpoint format (shared with the CLI): magic ``BWN1``, u32 version,
u32 config-JSON length + bytes, then per parameter: u32 name length, name
bytes, u32 rank, rank u32 dims, float64 values, all little-endian.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import norm
from .autodiff import Parameter, Tensor
from .errors import ConfigError, FormatError, ShapeError

SITES = ("pre-conv", "L1", "L2", "L3", "L4")
NORM_VARIANTS = ("none", "rfn", "wrfn", "bwrfn")


@dataclass(frozen=True)
class NetworkConfig:
    num_speakers: int
    in_freq: int = 40
    in_channels: int = 1
    norm_variant: str = "none"
    insertion_points: tuple[str, ...] = ()
    channels: tuple[int, int, int, int] = (8, 16, 32, 64)
    embedding_dim: int = 64
    lam: float = 0.5
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.num_speakers < 2:
            raise ConfigError("need at least 2 speakers")
        if self.embedding_dim <= 0:
            raise ConfigError("embedding_dim must be positive")
        if self.norm_variant not in NORM_VARIANTS:
            raise ConfigError(f"unknown norm_variant {self.norm_variant!r}")
        for p in self.insertion_points:
            if p not in SITES:
                raise ConfigError(f"unknown insertion point {p!r}")
        if len(self.channels) != 4:
            raise ConfigError("channels must list four stage widths")

    @property
    def relaxation(self) -> norm.RelaxationConfig:
        return norm.RelaxationConfig(lam=self.lam, epsilon=self.epsilon)

    def to_json(self) -> str:
        d = asdict(self)
        d["insertion_points"] = list(self.insertion_points)
        d["channels"] = list(self.channels)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "NetworkConfig":
        d = json.loads(s)
        d["insertion_points"] = tuple(d["insertion_points"])
        d["channels"] = tuple(d["channels"])
        return cls(**d)


def _conv_out(size: int, k: int = 3, stride: int = 1, pad: int = 1) -> int:
    return (size + 2 * pad - k) // stride + 1


@dataclass
class _Stage:
    conv1: Parameter
    bias1: Parameter
    conv2: Parameter
    bias2: Parameter
    proj: Parameter | None
    stride: int


@dataclass
class Network:
    config: NetworkConfig
    stem_k: Parameter
    stem_b: Parameter
    stages: list[_Stage]
    embed_w: Parameter
    embed_b: Parameter
    head_w: Parameter
    head_b: Parameter
    norm_sites: dict = field(default_factory=dict)  # site -> weights or None
    site_freqs: dict = field(default_factory=dict)

    def params(self) -> list[Parameter]:
        out = [self.stem_k, self.stem_b]
        for st in self.stages:
            out += [st.conv1, st.bias1, st.conv2, st.bias2]
            if st.proj is not None:
                out.append(st.proj)
        out += [self.embed_w, self.embed_b, self.head_w, self.head_b]
        for site in SITES:
            w = self.norm_sites.get(site)
            if isinstance(w, norm.DeterministicWeights):
                out += [w.w1, w.w2]
            elif isinstance(w, norm.VariationalWeights):
                out += w.params()
        return out

    def param_map(self) -> dict[str, Parameter]:
        m = {}
        for p in self.params():
            if p.name in m:
                raise ConfigError(f"duplicate parameter name {p.name!r}")
            m[p.name] = p
        return m

    # -- forward ---------------------------------------------------------
    def _apply_norm(self, h: Tensor, site: str, mode) -> Tensor:
        cfg = self.config.relaxation
        variant = self.config.norm_variant
        if variant == "rfn":
            return norm.rfn(h, cfg)
        if variant == "wrfn":
            return norm.wrfn(h, cfg, self.norm_sites[site])
        site_mode = mode
        if isinstance(mode, norm.NoiseMode) and mode.kind == "fixed" and isinstance(mode.noise, dict):
            site_mode = norm.NoiseMode.fixed(mode.noise[site])
        return norm.bwrfn(h, cfg, self.norm_sites[site], site_mode)

    def _features(self, x: Tensor, mode: norm.NoiseMode) -> Tensor:
        cfg = self.config
        if x.data.ndim != 4 or x.data.shape[2] != cfg.in_freq or x.data.shape[1] != cfg.in_channels:
            raise ShapeError(
                f"expected input (N, {cfg.in_channels}, {cfg.in_freq}, T), got {x.data.shape}"
            )
        sites = set(cfg.insertion_points) if cfg.norm_variant != "none" else set()
        h = x
        if "pre-conv" in sites:
            h = self._apply_norm(h, "pre-conv", mode)
        h = ad.relu(ad.add(ad.conv2d(h, self.stem_k, 1, 1), self.stem_b))
        for i, st in enumerate(self.stages):
            ident = h
            u = ad.relu(ad.add(ad.conv2d(h, st.conv1, st.stride, 1), st.bias1))
            u = ad.add(ad.conv2d(u, st.conv2, 1, 1), st.bias2)
            if st.proj is not None:
                ident = ad.conv2d(h, st.proj, st.stride, 0)
            h = ad.relu(ad.add(u, ident))
            site = f"L{i + 1}"
            if site in sites:
                h = self._apply_norm(h, site, mode)
        pooled = ad.reduce_mean(ad.reduce_mean(h, (3,)), (2,))  # (N, C)
        return ad.add(ad.matmul(pooled, self.embed_w), self.embed_b)

    def forward_logits(self, x: Tensor, mode: norm.NoiseMode | None = None) -> Tensor:
        mode = mode or norm.NoiseMode.mean()
        emb = self._features(x, mode)
        return ad.add(ad.matmul(emb, self.head_w), self.head_b)

    def extract_embedding(self, x: Tensor, mode: norm.NoiseMode | None = None) -> np.ndarray:
        """Embedding vectors (N, embedding_dim); Mean mode by default."""
        mode = mode or norm.NoiseMode.mean()
        return self._features(x, mode).data

    def extract_embedding_mc(self, x: Tensor, k: int, rng: np.random.Generator) -> np.ndarray:
        """Monte Carlo posterior-predictive embedding: average of k samples."""
        acc = None
        for _ in range(k):
            e = self._features(x, norm.NoiseMode.sample(rng)).data
            acc = e if acc is None else acc + e
        return acc / k

    def kl_total(self) -> Tensor:
        total = Tensor(0.0)
        for site in SITES:
            w = self.norm_sites.get(site)
            if isinstance(w, norm.VariationalWeights):
                total = ad.add(total, norm.kl_to_standard_normal(w))
        return total


def forward_logits(net: Network, x: Tensor, mode=None) -> Tensor:
    return net.forward_logits(x, mode)


def extract_embedding(net: Network, x: Tensor, mode=None) -> np.ndarray:
    return net.extract_embedding(x, mode)


def kl_total(net: Network) -> Tensor:
    return net.kl_total()


def site_freq(config: NetworkConfig, site: str) -> int:
    """Frequency dimension seen by a normalization site."""
    f = config.in_freq
    if site == "pre-conv":
        return f
    idx = SITES.index(site)  # 1..4
    for i in range(idx):
        stride = 1 if i == 0 else 2
        f = _conv_out(f, 3, stride, 1)
    return f


def build(config: NetworkConfig, rng: np.random.Generator) -> Network:
    """Deterministically initialize a network from a seeded generator.

    Conv and linear weights use He fan-in scaling; biases start at zero;
    wrfn weights start at zero (sigmoid midpoint); bwrfn posteriors start at
    mu ~ N(0, 0.1^2), sigma = 0.1.
    """

    def he(shape, fan_in, name):
        return Parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), name)

    cfg = config
    ch = cfg.channels
    stem_k = he((ch[0], cfg.in_channels, 3, 3), cfg.in_channels * 9, "stem.k")
    stem_b = Parameter(np.zeros((ch[0], 1, 1)), "stem.b")
    stages = []
    in_ch = ch[0]
    for i, out_ch in enumerate(ch):
        stride = 1 if i == 0 else 2
        name = f"L{i + 1}"
        conv1 = he((out_ch, in_ch, 3, 3), in_ch * 9, f"{name}.conv1.k")
        bias1 = Parameter(np.zeros((out_ch, 1, 1)), f"{name}.conv1.b")
        conv2 = he((out_ch, out_ch, 3, 3), out_ch * 9, f"{name}.conv2.k")
        bias2 = Parameter(np.zeros((out_ch, 1, 1)), f"{name}.conv2.b")
        proj = None
        if stride != 1 or in_ch != out_ch:
            proj = he((out_ch, in_ch, 1, 1), in_ch, f"{name}.proj.k")
        stages.append(_Stage(conv1, bias1, conv2, bias2, proj, stride))
        in_ch = out_ch
    embed_w = he((ch[3], cfg.embedding_dim), ch[3], "embed.W")
    embed_b = Parameter(np.zeros(cfg.embedding_dim), "embed.b")
    head_w = he((cfg.embedding_dim, cfg.num_speakers), cfg.embedding_dim, "head.W")
    head_b = Parameter(np.zeros(cfg.num_speakers), "head.b")

    net = Network(
        config=cfg,
        stem_k=stem_k,
        stem_b=stem_b,
        stages=stages,
        embed_w=embed_w,
        embed_b=embed_b,
        head_w=head_w,
        head_b=head_b,
    )
    if cfg.norm_variant != "none":
        for site in SITES:
            if site not in cfg.insertion_points:
                continue
            f = site_freq(cfg, site)
            net.site_freqs[site] = f
            if cfg.norm_variant == "rfn":
                net.norm_sites[site] = None
            elif cfg.norm_variant == "wrfn":
                net.norm_sites[site] = norm.DeterministicWeights(
                    w1=Parameter(np.zeros(f), f"norm.{site}.w1", decay=False),
                    w2=Parameter(np.zeros(f), f"norm.{site}.w2", decay=False),
                )
            else:
                net.norm_sites[site] = norm.VariationalWeights.init(
                    f, f"norm.{site}", rng
                )
    return net


# -- checkpoint io -------------------------------------------------------

CHECKPOINT_MAGIC = b"BWN1"
CHECKPOINT_VERSION = 1


def save_checkpoint(net: Network, path: str) -> None:
    cfg_bytes = net.config.to_json().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        for p in net.params():
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<I", p.data.ndim))
            for d in p.data.shape:
                fh.write(struct.pack("<I", d))
            fh.write(p.data.astype("<f8").tobytes())


def load_checkpoint(path: str) -> Network:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {raw[:4]!r}")
    off = 4
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    config = NetworkConfig.from_json(raw[off : off + cfg_len].decode("utf-8"))
    off += cfg_len
    net = build(config, np.random.Generator(np.random.Philox(0)))
    params = net.param_map()
    seen = set()
    while off < len(raw):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", raw, off) if rank else ()
        off += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        vals = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        if name not in params:
            raise FormatError(f"checkpoint parameter {name!r} not in architecture")
        if params[name].data.shape != tuple(shape):
            raise FormatError(f"shape mismatch for {name!r}")
        params[name].data = vals.copy()
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise FormatError(f"checkpoint missing parameters: {sorted(missing)}")
    return net

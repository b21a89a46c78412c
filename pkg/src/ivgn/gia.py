"""Globally-intensive Attention: depth-view BNWA, space-view BNWA, pixel-view SimAM.

Submodules are arranged by a scheme string: letters ``d``/``s``/``p`` run in
series left to right, a bracketed group such as ``[ds]`` runs its members in
parallel on the same input.  One residual connection wraps the whole stack.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, FrozenSet, Mapping, Tuple

from ivgn.autodiff import Tensor
from ivgn.autodiff.nn import BatchNorm, Module
from ivgn.errors import ConfigError, SchemeParseError

KINDS = ("d", "s", "p")
KIND_NAMES = {"d": "depth", "s": "space", "p": "pixel"}

# all 25 ways to combine, order and group the three submodules
ABLATION_SCHEMES = (
    "d", "s", "p",
    "[ds]", "[dp]", "[sp]",
    "ds", "sd", "dp", "pd", "sp", "ps",
    "[dsp]",
    "[ds]p", "p[ds]", "[dp]s", "s[dp]", "[sp]d", "d[sp]",
    "sdp", "spd", "pds", "psd", "dps", "dsp",
)


@dataclass(frozen=True)
class GiaStackSpec:
    stages: Tuple[FrozenSet[str], ...]

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("a GIA stack needs at least one stage")
        seen = set()
        for stage in self.stages:
            if not stage:
                raise ConfigError("GIA stages must be non-empty")
            for kind in stage:
                if kind not in KINDS:
                    raise ConfigError(f"unknown GIA submodule {kind!r}")
                if kind in seen:
                    raise ConfigError(f"GIA submodule {kind!r} used twice")
                seen.add(kind)

    @property
    def kinds(self) -> FrozenSet[str]:
        return frozenset().union(*self.stages)

    def __str__(self):
        return render_scheme(self)


def parse_scheme(text: str) -> GiaStackSpec:
    if not isinstance(text, str) or not text:
        raise SchemeParseError("empty scheme", str(text), 0)
    stages = []
    seen = set()
    i = 0

    def take(letter: str, pos: int):
        if letter not in KINDS:
            raise SchemeParseError(f"unknown submodule letter {letter!r}", text, pos)
        if letter in seen:
            raise SchemeParseError(f"duplicate submodule {letter!r}", text, pos)
        seen.add(letter)

    while i < len(text):
        ch = text[i]
        if ch == "[":
            close = text.find("]", i + 1)
            if close < 0:
                raise SchemeParseError("unclosed '['", text, i)
            group = text[i + 1 : close]
            if not group:
                raise SchemeParseError("empty brackets", text, i)
            for j, letter in enumerate(group):
                if letter == "[":
                    raise SchemeParseError("nested '['", text, i + 1 + j)
                take(letter, i + 1 + j)
            stages.append(frozenset(group))
            i = close + 1
        elif ch == "]":
            raise SchemeParseError("unmatched ']'", text, i)
        else:
            take(ch, i)
            stages.append(frozenset(ch))
            i += 1
    return GiaStackSpec(tuple(stages))


def render_scheme(spec: GiaStackSpec) -> str:
    parts = []
    for stage in spec.stages:
        letters = "".join(k for k in KINDS if k in stage)
        parts.append(letters if len(letters) == 1 else f"[{letters}]")
    return "".join(parts)


# --- submodules ----------------------------------------------------------
def bnwa_weights(gamma: Tensor) -> Tensor:
    """|gamma_i| / sum |gamma|: a convex combination even if gamma trains negative."""
    mag = gamma.abs()
    return mag / mag.sum()


def depth_bnwa(x: Tensor, bn: BatchNorm) -> Tensor:
    """Channel reweighting: ``sigmoid(w_c * BN_c(x)) * x`` with BN per channel over (N, H, W)."""
    n, c, h, w = x.shape
    if bn.features != c or bn.axis != 1:
        raise ConfigError(f"depth BNWA sized for {bn.features} channels, input has {c}")
    att = bn(x) * bnwa_weights(bn.gamma).reshape(1, c, 1, 1)
    return x * att.sigmoid()


def space_bnwa(x: Tensor, bn: BatchNorm) -> Tensor:
    """Position reweighting: BN per flattened spatial position over (N, C)."""
    n, c, h, w = x.shape
    if bn.features != h * w or bn.axis != 2:
        raise ConfigError(f"space BNWA sized for {bn.features} positions, input has {h}x{w}")
    flat = x.reshape(n, c, h * w)
    att = bn(flat) * bnwa_weights(bn.gamma).reshape(1, 1, h * w)
    return x * att.sigmoid().reshape(n, c, h, w)


def simam_energy_inverse(x: Tensor, delta: float) -> Tensor:
    """Inverse minimal energy per pixel; the energy sum is divided by (H*W - 1)."""
    n, c, h, w = x.shape
    if h * w < 2:
        raise ConfigError(f"SimAM needs at least 2 pixels per map, got {h}x{w}")
    d = x - x.mean(axis=(2, 3), keepdims=True)
    d = d * d
    return d / ((d.sum(axis=(2, 3), keepdims=True) / (h * w - 1) + delta) * 4.0) + 0.5


def pixel_simam(x: Tensor, delta: float = 1e-4) -> Tensor:
    if delta <= 0:
        raise ConfigError(f"SimAM delta must be positive, got {delta}")
    return x * simam_energy_inverse(x, delta).sigmoid()


class DepthBnwa(Module):
    def __init__(self, channels: int):
        self.bn = BatchNorm(channels, axis=1)

    def __call__(self, x):
        return depth_bnwa(x, self.bn)


class SpaceBnwa(Module):
    def __init__(self, positions: int):
        self.bn = BatchNorm(positions, axis=2)

    def __call__(self, x):
        return space_bnwa(x, self.bn)


class PixelSimam(Module):
    def __init__(self, delta: float = 1e-4):
        if delta <= 0:
            raise ConfigError(f"SimAM delta must be positive, got {delta}")
        self.delta = delta

    def __call__(self, x):
        return pixel_simam(x, self.delta)


def gia_forward(
    x: Tensor, spec: GiaStackSpec, submodules: Mapping[str, Module], fusion: str = "mean"
) -> Tensor:
    """Run the stages of ``spec`` and add the input back (one residual around the stack)."""
    missing = [k for k in KINDS if k in spec.kinds and k not in submodules]
    if missing:
        raise ConfigError(f"no parameters for GIA submodules {missing}")
    feats = x
    for stage in spec.stages:
        outs = [submodules[k](feats) for k in KINDS if k in stage]
        if len(outs) == 1:
            feats = outs[0]
        else:
            total = outs[0]
            for o in outs[1:]:
                total = total + o
            feats = total / float(len(outs)) if fusion == "mean" else total
    return x + feats


class GiaModule(Module):
    def __init__(self, channels: int, height: int, width: int, scheme="dsp",
                 delta: float = 1e-4, fusion: str = "mean"):
        self.spec = parse_scheme(scheme) if isinstance(scheme, str) else scheme
        if fusion not in ("mean", "sum"):
            raise ConfigError(f"unknown fusion {fusion!r}")
        self.fusion = fusion
        self.submodules: Dict[str, Module] = {}
        kinds = self.spec.kinds
        if "d" in kinds:
            self.submodules["d"] = DepthBnwa(channels)
        if "s" in kinds:
            self.submodules["s"] = SpaceBnwa(height * width)
        if "p" in kinds:
            self.submodules["p"] = PixelSimam(delta)

    def __call__(self, x):
        return gia_forward(x, self.spec, self.submodules, self.fusion)


def bnwa_param_count(channels: int, height: int, width: int, spec: GiaStackSpec) -> int:
    """BN affine parameters a GIA insertion adds (SimAM is parameter-free)."""
    count = 0
    if "d" in spec.kinds:
        count += 2 * channels
    if "s" in spec.kinds:
        count += 2 * height * width
    return count


def scheme_mode(scheme: str) -> str:
    spec = parse_scheme(scheme)
    if len(spec.stages) == 1:
        return "-" if len(spec.kinds) == 1 else "parallel"
    return "serial" if all(len(s) == 1 for s in spec.stages) else "mix"


__all__ = [
    "GiaModule", "GiaStackSpec", "ABLATION_SCHEMES", "bnwa_param_count", "bnwa_weights",
    "depth_bnwa", "gia_forward", "parse_scheme", "pixel_simam", "render_scheme",
    "scheme_mode", "simam_energy_inverse", "space_bnwa",
]


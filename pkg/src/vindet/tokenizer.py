"""Clip tokenization: one token grid per temporal view via strided 3D conv.

A view of length t turns the clip into non-overlapping t x h x w tubelets;
trailing frames that do not fill a tubelet are dropped (floor semantics).
Also holds the on-disk clip format: P6 frames plus a manifest, P5 masks.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor


@dataclass
class VideoClip:
    frames: np.ndarray  # (T,H,W,C) in [0,1]

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 4:
            raise ValueError(f"clip frames must be (T,H,W,C), got {f.shape}")
        if f.shape[0] < 1:
            raise ValueError("clip needs at least one frame")
        if f.min() < 0.0 or f.max() > 1.0:
            raise ValueError("frame values must lie in [0,1]")
        self.frames = f

    @property
    def t(self):
        return self.frames.shape[0]

    @property
    def h(self):
        return self.frames.shape[1]

    @property
    def w(self):
        return self.frames.shape[2]

    @property
    def c(self):
        return self.frames.shape[3]


@dataclass
class ViewSpec:
    views: tuple            # ascending tubelet lengths
    patch: int              # spatial patch side (h == w)
    dims: tuple             # per-view embedding width

    def validate(self, t: int, h: int, w: int) -> "ViewSpec":
        vs = tuple(self.views)
        if not vs or any(v < 1 for v in vs):
            raise ValueError(f"views must be positive, got {vs}")
        if any(a >= b for a, b in zip(vs, vs[1:])):
            raise ValueError(f"views must be strictly ascending, got {vs}")
        if vs[-1] > t:
            raise ValueError(f"view {vs[-1]} exceeds clip length {t}")
        if h % self.patch or w % self.patch:
            raise ValueError(f"patch {self.patch} must divide frame size {h}x{w}")
        if len(self.dims) != len(vs):
            raise ValueError("need one embedding width per view")
        return self


@dataclass
class TokenGrid:
    tokens: Tensor  # (floor(T/t), H/h, W/w, c)
    view: int


def tubelet_count(t: int, h: int, w: int, vt: int, vh: int, vw: int) -> int:
    """Number of t x h x w tubelets in a T x H x W clip (floor division)."""
    if vt < 1 or vh < 1 or vw < 1:
        raise ValueError("tubelet dims must be positive")
    if vt > t or vh > h or vw > w:
        raise ValueError(f"tubelet ({vt},{vh},{vw}) larger than clip ({t},{h},{w})")
    return (t // vt) * (h // vh) * (w // vw)


class TubeletEmbed(nn.Module):
    """Strided 3D convolution embedding one temporal view."""

    def __init__(self, view: int, patch: int, c_in: int, c_out: int,
                 rng: np.random.Generator):
        super().__init__()
        self.view, self.patch = view, patch
        self.proj = nn.Conv3d(c_in, c_out, (view, patch, patch), rng,
                              stride=(view, patch, patch), padding=0)

    def __call__(self, frames: Tensor) -> TokenGrid:
        t = frames.shape[0]
        usable = (t // self.view) * self.view
        if usable != t:
            frames = T.slice_axis(frames, 0, 0, usable)
        return TokenGrid(self.proj(frames), self.view)


def tokenize_view(clip: VideoClip, spec: ViewSpec, view: int,
                  embed: TubeletEmbed) -> TokenGrid:
    spec.validate(clip.t, clip.h, clip.w)
    if embed.view != view or embed.patch != spec.patch:
        raise ValueError(
            f"embedding built for view {embed.view}/patch {embed.patch}, asked for {view}/{spec.patch}"
        )
    grid = embed(Tensor(clip.frames))
    expected = tubelet_count(clip.t, clip.h, clip.w, view, spec.patch, spec.patch)
    n = grid.tokens.shape[0] * grid.tokens.shape[1] * grid.tokens.shape[2]
    assert n == expected
    return grid


# ---------------------------------------------------------------------------
# on-disk clip format
# ---------------------------------------------------------------------------

def write_ppm(path, img: np.ndarray):
    """Write an (H,W,3) [0,1] image as binary P6."""
    h, w, _ = img.shape
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def write_pgm(path, img: np.ndarray):
    """Write an (H,W) [0,1] map as binary P5."""
    h, w = img.shape
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def _read_netpbm(path, magic: str):
    with open(path, "rb") as fh:
        buf = fh.read()
    m = re.match(rb"(P[56])\s+(?:#[^\n]*\s+)?(\d+)\s+(\d+)\s+(\d+)\s", buf)
    if not m or m.group(1).decode() != magic:
        raise ValueError(f"{path}: not a {magic} file")
    w, h, maxval = int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported")
    pix = np.frombuffer(buf[m.end():], dtype=np.uint8)
    return pix, h, w


def read_ppm(path) -> np.ndarray:
    pix, h, w = _read_netpbm(path, "P6")
    return pix[: h * w * 3].reshape(h, w, 3).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    pix, h, w = _read_netpbm(path, "P5")
    return pix[: h * w].reshape(h, w).astype(np.float64) / 255.0


def save_clip(dirpath, clip: VideoClip, mask: np.ndarray | None = None):
    """Write frames as P6 plus a manifest; optional P5 mask (255=inpainted)."""
    os.makedirs(dirpath, exist_ok=True)
    names = []
    for i in range(clip.t):
        name = f"frame_{i:03d}.ppm"
        write_ppm(os.path.join(dirpath, name), clip.frames[i])
        names.append(name)
    with open(os.path.join(dirpath, "manifest.txt"), "w") as fh:
        fh.write("\n".join(names) + "\n")
    if mask is not None:
        write_pgm(os.path.join(dirpath, "gt.pgm"), mask)


def load_clip(dirpath) -> tuple[VideoClip, np.ndarray | None]:
    with open(os.path.join(dirpath, "manifest.txt")) as fh:
        names = [ln.strip() for ln in fh if ln.strip()]
    frames = np.stack([read_ppm(os.path.join(dirpath, n)) for n in names])
    mask_path = os.path.join(dirpath, "gt.pgm")
    mask = read_pgm(mask_path) if os.path.exists(mask_path) else None
    if mask is not None:
        mask = (mask > 0.5).astype(np.float64)
    return VideoClip(frames), mask

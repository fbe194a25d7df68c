"""A small convolutional classifier with hand-written backpropagation.

Architecture (valid convolutions, stride 1)::

    x        3 x 16 x 16
    theta_s  conv 3->8, 3x3, ReLU          -> z: 8 x 14 x 14   (style features)
    [optional style alignment of z]
    theta_f  conv 8->16, 3x3, ReLU         -> 16 x 12 x 12
             global average pool           -> 16
    zeta     linear 16->K                  -> logits

All parameters live in one flat float64 vector; the per-layer arrays are
views into it, so an optimizer only ever touches ``net.params``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .align import normalize, normalize_backward
from .errors import NumericalError, ShapeError, StateError
from .style_stats import SIGMA_FLOOR

IN_CHANNELS = 3
STYLE_CHANNELS = 8
TRUNK_CHANNELS = 16
KERNEL = 3
IMAGE_SIZE = 16


class DeskNet:
    def __init__(self, n_classes: int = 4, seed: int = 0, in_channels: int = IN_CHANNELS,
                 style_channels: int = STYLE_CHANNELS, trunk_channels: int = TRUNK_CHANNELS,
                 image_size: int = IMAGE_SIZE, params: Optional[np.ndarray] = None):
        self.n_classes = n_classes
        self.in_channels = in_channels
        self.style_channels = style_channels
        self.trunk_channels = trunk_channels
        self.image_size = image_size
        k = KERNEL
        self.shapes = {
            "ws": (style_channels, in_channels, k, k),
            "bs": (style_channels,),
            "wf": (trunk_channels, style_channels, k, k),
            "bf": (trunk_channels,),
            "wz": (n_classes, trunk_channels),
            "bz": (n_classes,),
        }
        self.offsets = {}
        pos = 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape))
            self.offsets[name] = (pos, pos + size)
            pos += size
        self.n_params = pos
        if params is None:
            self.params = np.zeros(pos)
            self._init(np.random.default_rng(seed))
        else:
            params = np.asarray(params, dtype=np.float64).reshape(-1)
            if params.shape[0] != pos:
                raise ShapeError(f"expected {pos} parameters, got {params.shape[0]}")
            self.params = params.copy()

    def _init(self, rng: np.random.Generator) -> None:
        # He-normal weights, zero biases
        for name in ("ws", "wf", "wz"):
            shape = self.shapes[name]
            fan_in = int(np.prod(shape[1:]))
            self.view(name)[...] = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    def view(self, name: str) -> np.ndarray:
        lo, hi = self.offsets[name]
        return self.params[lo:hi].reshape(self.shapes[name])

    def copy(self) -> "DeskNet":
        return DeskNet(self.n_classes, in_channels=self.in_channels, style_channels=self.style_channels,
                       trunk_channels=self.trunk_channels, image_size=self.image_size, params=self.params)

    @property
    def style_shape(self) -> tuple[int, int, int]:
        s = self.image_size - KERNEL + 1
        return (self.style_channels, s, s)

    def architecture(self) -> list[int]:
        return [self.in_channels, self.style_channels, self.trunk_channels, self.n_classes,
                KERNEL, self.image_size]

    @classmethod
    def from_architecture(cls, arch, params) -> "DeskNet":
        in_c, style_c, trunk_c, k, kernel, size = (int(a) for a in arch)
        if kernel != KERNEL:
            raise ShapeError(f"unsupported kernel size {kernel}")
        return cls(k, in_channels=in_c, style_channels=style_c, trunk_channels=trunk_c,
                   image_size=size, params=params)


@dataclass
class ForwardTrace:
    x_cols: Optional[np.ndarray] = None
    a1: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    # alignment caches (None when no alignment was applied)
    xhat: Optional[np.ndarray] = None
    s: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    z_aligned: Optional[np.ndarray] = None
    h_cols: Optional[np.ndarray] = None
    a2: Optional[np.ndarray] = None
    pooled: Optional[np.ndarray] = None


@dataclass
class OptimState:
    learning_rate: float = 0.05
    momentum: float = 0.0
    velocity: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.momentum < 0:
            raise ValueError("momentum must be nonnegative")


def _im2col(x: np.ndarray) -> np.ndarray:
    # (N, C, H, W) -> (N, Ho, Wo, C*k*k), matching weight.reshape(O, C*k*k)
    win = sliding_window_view(x, (KERNEL, KERNEL), axis=(2, 3))
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * KERNEL * KERNEL)


def _col2im(dcols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    n, ho, wo, _ = dcols.shape
    d = dcols.reshape(n, ho, wo, c, KERNEL, KERNEL)
    out = np.zeros((n, c, h, w))
    for i in range(KERNEL):
        for j in range(KERNEL):
            out[:, :, i:i + ho, j:j + wo] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def _conv(cols: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.transpose(0, 3, 1, 2)


def _batch(x, expected: tuple[int, ...]) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == len(expected)
    if single:
        x = x[None]
    if x.shape[1:] != expected:
        raise ShapeError(f"expected input of shape {expected}, got {x.shape[1:]}")
    return x, single


def forward_style(net: DeskNet, x) -> tuple[np.ndarray, ForwardTrace]:
    """Style features ``z = theta_s(x)`` for one image or a batch."""
    x, single = _batch(x, (net.in_channels, net.image_size, net.image_size))
    cols = _im2col(x)
    a1 = _conv(cols, net.view("ws"), net.view("bs"))
    z = np.maximum(a1, 0.0)
    trace = ForwardTrace(x_cols=cols, a1=a1, z=z)
    return (z[0] if single else z), trace


def apply_style(z: np.ndarray, trace: ForwardTrace, mu_s: np.ndarray, sigma_s: np.ndarray,
                sigma_floor: float = SIGMA_FLOOR) -> np.ndarray:
    """Align a batch of style features to per-sample targets ``(N, C)``, caching for backprop."""
    xhat, _, s = normalize(z, sigma_floor)
    scale = np.asarray(sigma_s, dtype=np.float64)[:, :, None, None]
    out = scale * xhat + np.asarray(mu_s, dtype=np.float64)[:, :, None, None]
    trace.xhat, trace.s, trace.scale, trace.z_aligned = xhat, s, scale, out
    return out


def forward_head(net: DeskNet, z, trace: Optional[ForwardTrace] = None) -> np.ndarray:
    """Logits ``zeta(theta_f(z))`` for one style map or a batch."""
    z, single = _batch(z, net.style_shape)
    if trace is None:
        trace = ForwardTrace()
    cols = _im2col(z)
    a2 = _conv(cols, net.view("wf"), net.view("bf"))
    pooled = np.maximum(a2, 0.0).mean(axis=(2, 3))
    logits = pooled @ net.view("wz").T + net.view("bz")
    trace.h_cols, trace.a2, trace.pooled = cols, a2, pooled
    return logits[0] if single else logits


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict_logits(net: DeskNet, x, unified_mean=None, alpha: float = 1.0,
                   sigma_floor: float = SIGMA_FLOOR, style_net: Optional[DeskNet] = None) -> np.ndarray:
    """Deterministic batch forward, optionally with partial alignment towards ``unified_mean``."""
    from .align import AlignmentParams, partial_align

    z, _ = forward_style(style_net if style_net is not None else net, x)
    if unified_mean is not None:
        z = partial_align(z, unified_mean, AlignmentParams(alpha, sigma_floor))
    return forward_head(net, z)


def loss_and_grad(net: DeskNet, batch, unified=None, rng: Optional[np.random.Generator] = None,
                  mode: str = "erm", styles: Optional[tuple[np.ndarray, np.ndarray]] = None,
                  sigma_floor: float = SIGMA_FLOOR, sampler=None, return_logits: bool = False):
    """Mean cross-entropy over ``batch = (x, y)`` and its gradient w.r.t. ``net.params``.

    In ``conststyle`` mode every sample gets its own style drawn from the
    unified domain (or taken from ``styles`` when given) and the style
    features are aligned to it before the trunk. The drawn styles are
    constants for differentiation; the instance statistics of ``z`` are not.
    """
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 4 or x.shape[0] == 0:
        raise ShapeError("batch must be a non-empty N x C x H x W array")
    n = x.shape[0]
    z, trace = forward_style(net, x)

    aligned = mode == "conststyle"
    if mode not in ("erm", "conststyle"):
        raise ValueError(f"unknown mode {mode!r}")
    if aligned:
        if styles is None:
            if sampler is None:
                if unified is None:
                    raise StateError("conststyle mode needs a unified domain")
                from .unified import StyleSampler
                sampler = StyleSampler(unified, sigma_floor)
            if rng is None:
                raise StateError("conststyle mode needs an rng to sample styles")
            styles = sampler.draw(rng, n)
        head_in = apply_style(z, trace, styles[0], styles[1], sigma_floor)
    else:
        head_in = z

    logits = forward_head(net, head_in, trace)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(n), y]))

    grad = np.zeros_like(net.params)
    g = {name: grad[lo:hi].reshape(net.shapes[name]) for name, (lo, hi) in net.offsets.items()}

    dlogits = softmax(logits)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    g["wz"][...] = dlogits.T @ trace.pooled
    g["bz"][...] = dlogits.sum(axis=0)

    dpooled = dlogits @ net.view("wz")
    hw2 = trace.a2.shape[2] * trace.a2.shape[3]
    da2 = (trace.a2 > 0) * (dpooled[:, :, None, None] / hw2)
    da2_flat = da2.transpose(0, 2, 3, 1).reshape(-1, da2.shape[1])
    g["wf"][...] = (da2_flat.T @ trace.h_cols.reshape(-1, trace.h_cols.shape[-1])).reshape(net.shapes["wf"])
    g["bf"][...] = da2_flat.sum(axis=0)
    dcols = da2.transpose(0, 2, 3, 1) @ net.view("wf").reshape(net.trunk_channels, -1)
    dhead = _col2im(dcols, *head_in.shape[1:])

    if aligned:
        dz = normalize_backward(dhead * trace.scale, trace.xhat, trace.s)
    else:
        dz = dhead
    da1 = dz * (trace.a1 > 0)
    da1_flat = da1.transpose(0, 2, 3, 1).reshape(-1, da1.shape[1])
    g["ws"][...] = (da1_flat.T @ trace.x_cols.reshape(-1, trace.x_cols.shape[-1])).reshape(net.shapes["ws"])
    g["bs"][...] = da1_flat.sum(axis=0)
    if return_logits:
        return loss, grad, logits
    return loss, grad


def loss_only(net: DeskNet, batch, mode: str = "erm", styles=None,
              sigma_floor: float = SIGMA_FLOOR) -> float:
    """Forward-only loss, used by finite-difference checks."""
    x, y = batch
    z, trace = forward_style(net, x)
    if mode == "conststyle":
        z = apply_style(z, trace, styles[0], styles[1], sigma_floor)
    logits = forward_head(net, z)
    shifted = logits - logits.max(axis=1, keepdims=True)
    return float(np.mean(np.log(np.exp(shifted).sum(axis=1)) - shifted[np.arange(len(y)), y]))


def sgd_step(net: DeskNet, gradient, optim: OptimState) -> DeskNet:
    """``params -= lr * v`` with ``v = momentum * v + gradient`` (plain SGD when momentum is 0)."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != net.params.shape:
        raise ShapeError(f"gradient has shape {gradient.shape}, expected {net.params.shape}")
    if not np.all(np.isfinite(gradient)):
        raise NumericalError("non-finite gradient")
    if optim.momentum:
        if optim.velocity is None:
            optim.velocity = np.zeros_like(gradient)
        optim.velocity = optim.momentum * optim.velocity + gradient
        step = optim.velocity
    else:
        step = gradient
    net.params -= optim.learning_rate * step
    return net


def _relu_masks(net: DeskNet, batch, mode, styles, sigma_floor):
    x, _ = batch
    z, trace = forward_style(net, x)
    if mode == "conststyle":
        z = apply_style(z, trace, styles[0], styles[1], sigma_floor)
    forward_head(net, z, trace)
    return trace.a1 > 0, trace.a2 > 0


def gradient_check(net: DeskNet, batch, mode: str = "erm", styles=None, n_coords: int = 1000,
                   h: float = 1e-4, seed: int = 0, sigma_floor: float = SIGMA_FLOOR,
                   abs_floor: float = 1e-6) -> dict:
    """Compare analytic gradients with central differences on random coordinates.

    A central difference is only a valid reference when the +h and -h
    evaluations see the same ReLU activation pattern as the base point; a
    coordinate whose perturbation flips any ReLU is skipped and another is
    drawn in its place. The returned dict reports both the checked and the
    skipped coordinates.

    Errors are ``|numeric - analytic| / max(|numeric|, |analytic|, abs_floor)``.
    The floor keeps exactly-zero gradients (e.g. a bias whose channel mean is
    removed by alignment) from turning round-off in the difference quotient
    into a large relative error.
    """
    if mode == "conststyle" and styles is None:
        raise StateError("conststyle gradient check needs a fixed style sample")
    _, grad = loss_and_grad(net, batch, mode=mode, styles=styles, sigma_floor=sigma_floor)
    base = _relu_masks(net, batch, mode, styles, sigma_floor)
    rng = np.random.default_rng(seed)
    order = rng.permutation(net.n_params)
    checked, skipped, errors = [], [], []
    for i in order:
        if len(checked) == n_coords:
            break
        p = net.params[i]
        net.params[i] = p + h
        lp = loss_only(net, batch, mode, styles, sigma_floor)
        mp = _relu_masks(net, batch, mode, styles, sigma_floor)
        net.params[i] = p - h
        lm = loss_only(net, batch, mode, styles, sigma_floor)
        mm = _relu_masks(net, batch, mode, styles, sigma_floor)
        net.params[i] = p
        if any(np.any(a != b) for a, b in zip(base, mp)) or any(np.any(a != b) for a, b in zip(base, mm)):
            skipped.append(int(i))
            continue
        num = (lp - lm) / (2.0 * h)
        den = max(abs(num), abs(grad[i]), abs_floor)
        checked.append(int(i))
        errors.append(abs(num - grad[i]) / den)
    errors = np.asarray(errors)
    return {
        "checked": checked,
        "skipped": skipped,
        "max_rel_error": float(errors.max()) if errors.size else float("nan"),
        "errors": errors,
    }

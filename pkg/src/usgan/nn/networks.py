"""Generator and discriminator networks built from layer primitives.

Both networks operate on NCHW float arrays. Conditioning is a normalized
3-channel coordinate grid: the generator receives it resized to each map
size just before every up-sampling stage, the discriminator only as extra
input channels concatenated with the image.
"""

from __future__ import annotations

import numpy as np

from ..geometry import resize_channels
from .layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Dense,
    LeakyReLU,
    ReLU,
    Sequential,
    Tanh,
    ResBlock,
    iter_layers,
)
from .specs import DiscriminatorSpec, GeneratorSpec, SpecError


class ContractError(ValueError):
    """Input violates a network's calling contract."""


def resize_grid_batch(grids: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a (N, 3, H, W) grid batch to (N, 3, H', W')."""
    n, c, h, w = grids.shape
    flat = resize_channels(grids.reshape(n * c, h, w), target)
    return flat.reshape(n, c, target[1], target[0])


class _Network:
    """Shared parameter bookkeeping for the two networks."""

    def __init__(self):
        self.named: list[tuple[str, object]] = []

    def _register(self, name, layer):
        self.named.append((name, layer))
        return layer

    def _primitives(self):
        for name, layer in self.named:
            for i, prim in enumerate(iter_layers(layer)):
                yield f"{name}.{i}", prim

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for pname, prim in self._primitives():
            for k, v in prim.params.items():
                out[f"{pname}.{k}"] = v
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for pname, prim in self._primitives():
            for k, v in prim.grads.items():
                out[f"{pname}.{k}"] = v
        return out

    def zero_grads(self):
        for _, prim in self._primitives():
            prim.zero_grads()

    def state_dict(self) -> dict[str, np.ndarray]:
        out = dict(self.parameters())
        for pname, prim in self._primitives():
            if isinstance(prim, BatchNorm2d):
                out[f"{pname}.running_mean"] = prim.running_mean
                out[f"{pname}.running_var"] = prim.running_var
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = self.state_dict()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise SpecError(f"state mismatch: missing {sorted(missing)[:4]}, extra {sorted(extra)[:4]}")
        for pname, prim in self._primitives():
            for k in prim.params:
                src = state[f"{pname}.{k}"]
                if src.shape != prim.params[k].shape:
                    raise SpecError(f"shape mismatch for {pname}.{k}")
                prim.params[k] = src.astype(prim.params[k].dtype)
            if isinstance(prim, BatchNorm2d):
                prim.running_mean = state[f"{pname}.running_mean"].astype(prim.running_mean.dtype)
                prim.running_var = state[f"{pname}.running_var"].astype(prim.running_var.dtype)
        self.zero_grads()

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.parameters().values())


class Generator(_Network):
    def __init__(self, spec: GeneratorSpec, seed: int, dtype=np.float32):
        super().__init__()
        self.spec = spec
        self.seed = seed
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        w0, h0 = spec.initial_map
        n1 = spec.initial_channels
        k = spec.kernel

        proj = [Dense(spec.noise_dim, n1 * h0 * w0, rng, dtype=dtype)]
        self.proj = self._register("proj", Sequential(proj))
        post = [BatchNorm2d(n1, dtype=dtype)] if spec.project_bn else []
        post.append(ReLU())
        self.proj_post = self._register("proj_post", Sequential(post))

        self.stages = []
        c_in = n1
        for i in range(1, spec.n_upsample + 1):
            c_out = spec.stage_channels(i)
            stage = Sequential(
                [
                    ConvTranspose2d(c_in + 3, c_out, 3, rng, dtype=dtype),
                    BatchNorm2d(c_out, dtype=dtype),
                    ReLU(),
                    Conv2d(c_out, c_out, k, rng, dtype=dtype),
                    BatchNorm2d(c_out, dtype=dtype),
                    ReLU(),
                ]
            )
            self.stages.append(self._register(f"up{i}", stage))
            c_in = c_out

        self.head = self._register(
            "head",
            Sequential(
                [
                    Conv2d(c_in, c_in, k, rng, dtype=dtype),
                    BatchNorm2d(c_in, dtype=dtype),
                    ReLU(),
                    Conv2d(c_in, 1, k, rng, dtype=dtype),
                    Tanh(),
                ]
            ),
        )

    def forward(self, z: np.ndarray, grids: np.ndarray, train: bool) -> np.ndarray:
        """z (N, noise_dim), grids (N, 3, H, W) normalized -> images (N, 1, H, W)."""
        spec = self.spec
        n = z.shape[0]
        w, h = spec.out_dims
        if z.shape != (n, spec.noise_dim):
            raise ContractError(f"z shape {z.shape} != (N, {spec.noise_dim})")
        if grids.shape != (n, 3, h, w):
            raise ContractError(f"grid shape {grids.shape} != {(n, 3, h, w)}")
        z = z.astype(self.dtype, copy=False)
        grids = grids.astype(self.dtype, copy=False)
        w0, h0 = spec.initial_map
        x = self.proj.forward(z, train).reshape(n, spec.initial_channels, h0, w0)
        x = self.proj_post.forward(x, train)
        self._stage_channels = []
        for i, stage in enumerate(self.stages, start=1):
            sw, sh = spec.stage_map(i)
            g = resize_grid_batch(grids, (sw, sh)).astype(self.dtype, copy=False)
            x = np.concatenate([x, g], axis=1)
            self._stage_channels.append(x.shape[1] - 3)
            x = stage.forward(x, train)
        return self.head.forward(x, train)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        """Backprop to parameters; returns gradient w.r.t. z."""
        d = self.head.backward(dy)
        for stage, c in zip(reversed(self.stages), reversed(self._stage_channels)):
            d = stage.backward(d)[:, :c]  # grid channels carry no gradient
        d = self.proj_post.backward(d)
        n = d.shape[0]
        return self.proj.backward(d.reshape(n, -1))


class Discriminator(_Network):
    def __init__(self, spec: DiscriminatorSpec, seed: int, dtype=np.float32):
        super().__init__()
        self.spec = spec
        self.seed = seed
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        m0 = spec.initial_channels
        slope = spec.leaky_slope

        self.stem = self._register(
            "stem",
            Sequential([Conv2d(4, m0, spec.first_kernel, rng, dtype=dtype), LeakyReLU(slope)]),
        )
        self.stages = []
        c = m0
        for k in range(1, spec.n_stages + 1):
            stage = Sequential(
                [
                    ResBlock(c, spec.kernel, rng, slope=slope, dtype=dtype),
                    Conv2d(c, 2 * c, spec.kernel, rng, stride=2, dtype=dtype),
                    BatchNorm2d(2 * c, dtype=dtype),
                    LeakyReLU(slope),
                ]
            )
            self.stages.append(self._register(f"down{k}", stage))
            c *= 2
        self.head_res = self._register("head_res", ResBlock(c, spec.kernel, rng, slope=slope, dtype=dtype))
        fw, fh = spec.final_map()
        flat = c * fw * fh
        self.head = self._register(
            "head",
            Sequential(
                [
                    Dense(flat, spec.head_hidden, rng, dtype=dtype),
                    LeakyReLU(slope),
                    Dense(spec.head_hidden, 1, rng, dtype=dtype),
                ]
            ),
        )
        self._flat_shape = (c, fh, fw)

    def forward(self, images: np.ndarray, grids: np.ndarray, train: bool) -> np.ndarray:
        """images (N, 1, H, W), grids (N, 3, H, W) -> logits (N,)."""
        w, h = self.spec.in_dims
        n = images.shape[0]
        if images.shape != (n, 1, h, w):
            raise ContractError(f"image shape {images.shape} != {(n, 1, h, w)}")
        if grids.shape != (n, 3, h, w):
            raise ContractError(f"grid shape {grids.shape} != {(n, 3, h, w)}")
        x = np.concatenate(
            [images.astype(self.dtype, copy=False), grids.astype(self.dtype, copy=False)], axis=1
        )
        x = self.stem.forward(x, train)
        for stage in self.stages:
            x = stage.forward(x, train)
        x = self.head_res.forward(x, train)
        self._pre_flat = x.shape
        return self.head.forward(x.reshape(n, -1), train)[:, 0]

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        """Backprop to parameters; returns gradient w.r.t. the input image."""
        d = self.head.backward(dlogits[:, None].astype(self.dtype, copy=False))
        d = d.reshape(self._pre_flat)
        d = self.head_res.backward(d)
        for stage in reversed(self.stages):
            d = stage.backward(d)
        d = self.stem.backward(d)
        return d[:, :1]


def build_generator(spec: GeneratorSpec, seed: int, dtype=np.float32) -> Generator:
    return Generator(spec, seed, dtype=dtype)


def build_discriminator(spec: DiscriminatorSpec, seed: int, dtype=np.float32) -> Discriminator:
    return Discriminator(spec, seed, dtype=dtype)


# ---------------------------------------------------------------------------
# single-sample wrappers over CoordinateGrid conditioning
# ---------------------------------------------------------------------------

def _check_mode(mode: str) -> bool:
    if mode not in ("train", "infer"):
        raise ContractError(f"mode must be 'train' or 'infer', got {mode!r}")
    return mode == "train"


def _grid_array(grid) -> np.ndarray:
    if not getattr(grid, "normalized", False):
        raise ContractError("conditioning grid must be normalized")
    return grid.channels[None, :, :, :]


def gen_forward(g: Generator, z: np.ndarray, grid, mode: str = "infer") -> np.ndarray:
    """Generate one (H, W) image from a latent vector and a normalized grid."""
    train = _check_mode(mode)
    out = g.forward(np.asarray(z, dtype=g.dtype)[None, :], _grid_array(grid), train)
    return out[0, 0]


def disc_forward(d: Discriminator, image: np.ndarray, grid, mode: str = "infer") -> tuple[float, float]:
    """Score one (H, W) image; returns (logit, sigmoid probability)."""
    train = _check_mode(mode)
    logit = d.forward(np.asarray(image, dtype=d.dtype)[None, None], _grid_array(grid), train)[0]
    prob = 1.0 / (1.0 + np.exp(-float(logit)))
    return float(logit), float(prob)

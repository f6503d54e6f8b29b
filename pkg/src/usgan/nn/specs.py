"""Architecture specifications for the generator and discriminator."""

from __future__ import annotations

from dataclasses import asdict, dataclass


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    """Noise + coordinate-grid conditioned up-sampling generator.

    The initial map is (W / 2^I, H / 2^I) with ``initial_channels``
    channels; every up-sampling stage doubles the map size and halves the
    channel count. Three resized coordinate channels are concatenated
    before each up-sampling stage.
    """

    out_dims: tuple[int, int]  # (W, H)
    noise_dim: int = 100
    n_upsample: int = 4
    initial_channels: int = 512
    kernel: int = 3
    project_bn: bool = True

    def __post_init__(self):
        w, h = self.out_dims
        f = 2**self.n_upsample
        if self.noise_dim < 1:
            raise SpecError("noise_dim must be >= 1")
        if w % f or h % f:
            raise SpecError(f"out_dims {self.out_dims} not divisible by 2^{self.n_upsample}")
        if self.initial_channels % f:
            raise SpecError(
                f"initial_channels {self.initial_channels} cannot halve exactly "
                f"{self.n_upsample} times"
            )

    @property
    def initial_map(self) -> tuple[int, int]:
        f = 2**self.n_upsample
        return self.out_dims[0] // f, self.out_dims[1] // f

    def stage_channels(self, i: int) -> int:
        """Output channels of up-sampling stage i (1-based)."""
        return self.initial_channels >> i

    def stage_map(self, i: int) -> tuple[int, int]:
        """Map size entering up-sampling stage i (1-based)."""
        w0, h0 = self.initial_map
        return w0 << (i - 1), h0 << (i - 1)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["out_dims"] = list(self.out_dims)
        return d

    @staticmethod
    def from_json_dict(d: dict) -> "GeneratorSpec":
        d = dict(d)
        d["out_dims"] = tuple(d["out_dims"])
        return GeneratorSpec(**d)


@dataclass(frozen=True)
class DiscriminatorSpec:
    """Residual conditional discriminator.

    The image and its three coordinate channels are concatenated at the
    input only; each stage is a residual unit followed by a stride-2
    down-sampling convolution that doubles the channels.
    """

    in_dims: tuple[int, int]  # (W, H)
    n_stages: int = 5
    initial_channels: int = 32
    first_kernel: int = 5
    kernel: int = 3
    leaky_slope: float = 0.2
    label_smoothing: float = 0.9
    hidden_width: int | None = None  # None -> pixel count of the final map

    def __post_init__(self):
        w, h = self.in_dims
        f = 2**self.n_stages
        if w % f or h % f:
            raise SpecError(f"in_dims {self.in_dims} not divisible by 2^{self.n_stages}")
        if not (0 < self.label_smoothing <= 1):
            raise SpecError("label_smoothing must be in (0, 1]")

    def stage_channels(self, k: int) -> int:
        """Channels after down-sample k (0 = input stage)."""
        return self.initial_channels << k

    def final_map(self) -> tuple[int, int]:
        f = 2**self.n_stages
        return self.in_dims[0] // f, self.in_dims[1] // f

    @property
    def head_hidden(self) -> int:
        if self.hidden_width is not None:
            return self.hidden_width
        w, h = self.final_map()
        return w * h

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["in_dims"] = list(self.in_dims)
        return d

    @staticmethod
    def from_json_dict(d: dict) -> "DiscriminatorSpec":
        d = dict(d)
        d["in_dims"] = tuple(d["in_dims"])
        return DiscriminatorSpec(**d)

"""Generator and critic architectures.

The base generator is the 9-residual-block image transformation network
(c7s1-w, d2w, d4w, R4w x n, u2w, uw, c7s1-1) with a tanh head producing a
single-channel map in (-1, 1) at input resolution. Four variants:

    V1  base encoder-decoder, transposed-conv upsampling, patch critic
    V2  pretrained classification backbone encoder, patch critic
    V3  V1 plus skip connections and bilinear upsampling
    V4  V3 paired with a full-image critic

Critics are unnormalized (batch size is 1 and the gradient penalty needs
per-sample input gradients): a 70x70-receptive-field patch critic
emitting a score map, or a full-image critic emitting one scalar.
"""

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import ImageTensor, Seed, VerMap, VfxsegError, validate_image

VARIANTS = ("V1", "V2", "V3", "V4")
VER_LIMIT = float(np.nextafter(np.float32(1.0), np.float32(0.0)))

# (kernel, stride, padding) stack of the patch critic; receptive field 70
PATCH_LAYER_CONFIG = ((4, 2, 1), (4, 2, 1), (4, 2, 1), (4, 1, 1), (4, 1, 1))


class UnsupportedVariant(VfxsegError):
    pass


class ShapeError(VfxsegError):
    pass


@dataclass
class GeneratorSpec:
    variant: str = "V4"
    input_size: int = 224
    base_width: int = 64
    n_res_blocks: int = 9

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def skip_layers(self) -> bool:
        return self.variant in ("V3", "V4")

    @property
    def upsampling(self) -> str:
        return "bilinear" if self.variant in ("V3", "V4") else "transposed"

    @property
    def downsample_factor(self) -> int:
        return 16 if self.variant == "V2" else 4

    def to_json(self) -> dict:
        d = asdict(self)
        d.update(skip_layers=self.skip_layers, upsampling=self.upsampling)
        return d


@dataclass
class DiscriminatorSpec:
    kind: str = "full_image"  # or "patch70"
    base_width: int = 64

    def __post_init__(self):
        if self.kind not in ("patch70", "full_image"):
            raise ValueError(f"unknown discriminator kind {self.kind!r}")

    def to_json(self) -> dict:
        return asdict(self)


def discriminator_kind_for_variant(variant: str) -> str:
    return "full_image" if variant == "V4" else "patch70"


def _norm(ch):
    return nn.InstanceNorm2d(ch, affine=False, track_running_stats=False)


class ResidualBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), _norm(ch), nn.ReLU(True),
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), _norm(ch),
        )

    def forward(self, x):
        return x + self.block(x)


class VerGenerator(nn.Module):
    """Encoder, residual trunk, decoder; emits B x 1 x H x W in (-1, 1)."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        w = spec.base_width
        self.enc0 = nn.Sequential(
            nn.ReflectionPad2d(3), nn.Conv2d(3, w, 7), _norm(w), nn.ReLU(True)
        )
        self.enc1 = nn.Sequential(
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), _norm(2 * w), nn.ReLU(True)
        )
        self.enc2 = nn.Sequential(
            nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1), _norm(4 * w), nn.ReLU(True)
        )
        self.trunk = nn.Sequential(*[ResidualBlock(4 * w) for _ in range(spec.n_res_blocks)])
        if spec.skip_layers:
            self.dec2 = nn.Sequential(
                nn.Conv2d(8 * w, 2 * w, 3, padding=1), _norm(2 * w), nn.ReLU(True)
            )
            self.dec1 = nn.Sequential(
                nn.Conv2d(4 * w, w, 3, padding=1), _norm(w), nn.ReLU(True)
            )
            head_in = 2 * w
        else:
            self.dec2 = nn.Sequential(
                nn.ConvTranspose2d(4 * w, 2 * w, 3, stride=2, padding=1, output_padding=1),
                _norm(2 * w), nn.ReLU(True),
            )
            self.dec1 = nn.Sequential(
                nn.ConvTranspose2d(2 * w, w, 3, stride=2, padding=1, output_padding=1),
                _norm(w), nn.ReLU(True),
            )
            head_in = w
        self.head = nn.Sequential(
            nn.ReflectionPad2d(3), nn.Conv2d(head_in, 1, 7), nn.Tanh()
        )

    def forward(self, x):
        e0 = self.enc0(x)
        e1 = self.enc1(e0)
        e2 = self.enc2(e1)
        h = self.trunk(e2)
        if self.spec.skip_layers:
            h = self.dec2(torch.cat([h, e2], dim=1))
            h = F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False)
            h = self.dec1(torch.cat([h, e1], dim=1))
            h = F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False)
            h = torch.cat([h, e0], dim=1)
        else:
            h = self.dec2(h)
            h = self.dec1(h)
        return self.head(h)


class BackboneGenerator(nn.Module):
    """Pretrained classification encoder (cut at stride 16), fresh decoder."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        try:
            from torchvision import models as tvm

            backbone = tvm.resnet18(weights=tvm.ResNet18_Weights.IMAGENET1K_V1)
        except Exception as e:
            raise UnsupportedVariant(
                f"V2 needs a pretrained torchvision backbone: {e}"
            ) from e
        self.encoder = nn.Sequential(
            backbone.conv1, backbone.bn1, backbone.relu, backbone.maxpool,
            backbone.layer1, backbone.layer2, backbone.layer3,
        )
        chans = (256, 128, 64, 32, 16)
        ups = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            ups += [
                nn.ConvTranspose2d(cin, cout, 3, stride=2, padding=1, output_padding=1),
                _norm(cout), nn.ReLU(True),
            ]
        self.decoder = nn.Sequential(*ups)
        self.head = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(16, 1, 7), nn.Tanh())

    def forward(self, x):
        return self.head(self.decoder(self.encoder(x)))


class PatchCritic(nn.Module):
    """Unnormalized patch scorer; each output cell sees a 70x70 window."""

    def __init__(self, base_width: int = 64, in_channels: int = 3):
        super().__init__()
        widths = (base_width, 2 * base_width, 4 * base_width, 8 * base_width, 1)
        layers = []
        cin = in_channels
        for cout, (k, s, p) in zip(widths, PATCH_LAYER_CONFIG):
            layers.append(nn.Conv2d(cin, cout, k, stride=s, padding=p))
            if cout != 1:
                layers.append(nn.LeakyReLU(0.2, True))
            cin = cout
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


class FullImageCritic(nn.Module):
    """Unnormalized critic reducing any image to one real score."""

    def __init__(self, base_width: int = 64, in_channels: int = 3):
        super().__init__()
        w = base_width
        self.features = nn.Sequential(
            nn.Conv2d(in_channels, w, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True),
            nn.Conv2d(2 * w, 4 * w, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True),
            nn.Conv2d(4 * w, 8 * w, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True),
        )
        self.score = nn.Linear(8 * w, 1)

    def forward(self, x):
        h = self.features(x)
        return self.score(h.mean(dim=(2, 3)))


def build_generator(spec: GeneratorSpec, seed: Seed) -> nn.Module:
    """Construct a generator with seed-determined initial parameters."""
    with torch.random.fork_rng():
        torch.manual_seed(int(seed) & 0xFFFFFFFFFFFFFFFF)
        if spec.variant == "V2":
            return BackboneGenerator(spec)
        return VerGenerator(spec)


def build_discriminator(spec: DiscriminatorSpec, seed: Seed) -> nn.Module:
    with torch.random.fork_rng():
        torch.manual_seed(int(seed) & 0xFFFFFFFFFFFFFFFF)
        if spec.kind == "patch70":
            return PatchCritic(spec.base_width)
        return FullImageCritic(spec.base_width)


def image_to_tensor(img: ImageTensor) -> torch.Tensor:
    img = validate_image(img)
    return torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1).unsqueeze(0)


def ver_to_array(out: torch.Tensor) -> VerMap:
    ver = out.detach().squeeze(0).squeeze(0).cpu().numpy().astype(np.float32)
    # tanh may round to exactly +-1 in float32; keep the open interval
    return np.clip(ver, -VER_LIMIT, VER_LIMIT)


def generator_forward(generator: nn.Module, img: ImageTensor) -> VerMap:
    """Pure inference: image in, effect-strength map out (same H x W)."""
    factor = generator.spec.downsample_factor
    h, w = img.shape[:2]
    if h % factor or w % factor:
        raise ShapeError(f"input dims {h}x{w} must be divisible by {factor}")
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            out = generator(image_to_tensor(img))
    finally:
        generator.train(was_training)
    return ver_to_array(out)


def discriminator_forward(critic: nn.Module, img: ImageTensor):
    """Raw critic output: 2-D score map for the patch kind, float scalar
    for the full-image kind. Losses reduce a map by its mean."""
    was_training = critic.training
    critic.eval()
    try:
        with torch.no_grad():
            out = critic(image_to_tensor(img))
    finally:
        critic.train(was_training)
    if not torch.isfinite(out).all():
        raise ShapeError("critic produced non-finite scores")
    if isinstance(critic, PatchCritic):
        return out.squeeze(0).squeeze(0).numpy()
    return float(out.reshape(()))

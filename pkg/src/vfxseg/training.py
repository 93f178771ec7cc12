"""Adversarial training with the editor in the loop.

Each step runs n_critic critic updates followed by one generator update:

    critic:    minimize D(x) - D(y) + lambda_gp * (||grad D(x_hat)|| - 1)^2
               with x a history-buffer exchange of the freshly edited
               image (detached) and x_hat a random interpolate of x and y
    generator: minimize -D(edit(G(I), I))   through the editor

The critic sees buffered fakes; the generator always trains on its own
fresh output. All D(.) values are scalars (patch score maps reduce by
their mean).
"""

import csv
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .core import Seed, VfxsegError, derive_seed, set_global_seed
from .data import DatasetManifest, UnpairedLoader
from .effects import EffectKind, apply_effect_batch, compose_batch
from .models import (
    DiscriminatorSpec,
    GeneratorSpec,
    ShapeError,
    build_discriminator,
    build_generator,
    image_to_tensor,
    ver_to_array,
)

log = logging.getLogger(__name__)


class NonFiniteLoss(VfxsegError):
    pass


class NonFiniteGradient(VfxsegError):
    pass


class CheckpointMismatch(VfxsegError):
    pass


@dataclass
class Hyperparams:
    lambda_gp: float = 10.0
    learning_rate: float = 1e-4
    adam_betas: tuple = (0.0, 0.9)
    n_critic: int = 5
    batch_size: int = 1
    image_size: int = 224
    total_iters: int = 0  # must be set per run
    buffer_capacity: int = 50

    def __post_init__(self):
        if self.lambda_gp <= 0:
            raise ValueError("lambda_gp must be positive")


class HistoryBuffer:
    """Pool of previously generated edited images feeding the critic.

    Until full, every image is stored and returned unchanged. Once full,
    a fair coin decides between returning the fresh image and swapping it
    against a uniformly chosen stored one. Stored tensors are detached so
    no gradient can flow through history.
    """

    def __init__(self, capacity: int = 50, seed: Seed | None = None):
        self.capacity = capacity
        self.slots = []
        self.rng = random.Random(seed)

    def exchange(self, img):
        if self.capacity <= 0:
            return img
        stored = img.detach().clone() if isinstance(img, torch.Tensor) else img
        if len(self.slots) < self.capacity:
            self.slots.append(stored)
            return img
        if self.rng.random() < 0.5:
            return img
        idx = self.rng.randrange(self.capacity)
        out = self.slots[idx]
        self.slots[idx] = stored
        return out

    def state(self) -> dict:
        return {
            "capacity": self.capacity,
            "slots": [s.clone() for s in self.slots],
            "rng": self.rng.getstate(),
        }

    def load_state(self, state: dict) -> None:
        self.capacity = state["capacity"]
        self.slots = [s.clone() for s in state["slots"]]
        self.rng.setstate(state["rng"])


def buffer_exchange(buf: HistoryBuffer, img):
    return buf.exchange(img)


def generator_loss(d_scores: torch.Tensor) -> torch.Tensor:
    """-E[D(x)] over the (possibly singleton) batch of critic scores."""
    return -d_scores.mean()


def discriminator_loss(d_fake, d_real, gp, lambda_gp: float):
    return d_fake - d_real + lambda_gp * gp


def _scalar_scores(raw: torch.Tensor) -> torch.Tensor:
    """Per-sample scalar D(x); patch score maps reduce by their mean."""
    if raw.dim() == 0:
        return raw.reshape(1)
    return raw.reshape(raw.shape[0], -1).mean(dim=1)


def gradient_penalty(critic, x_fake: torch.Tensor, y_real: torch.Tensor,
                     eps) -> torch.Tensor:
    """(||grad_xhat D(x_hat)||_2 - 1)^2 on x_hat = eps*y + (1-eps)*x.

    The gradient is taken over all pixels and channels jointly; the
    result keeps the graph so the critic can be optimized through it.
    """
    if not torch.is_tensor(eps):
        eps = x_fake.new_tensor(float(eps))
    x_hat = (eps * y_real + (1.0 - eps) * x_fake.detach()).requires_grad_(True)
    scores = _scalar_scores(critic(x_hat))
    if not scores.requires_grad:  # critic constant in its input
        grads = torch.zeros_like(x_hat)
    else:
        grads = torch.autograd.grad(
            scores.sum(), x_hat, create_graph=True, retain_graph=True
        )[0]
    if not torch.isfinite(grads).all():
        raise NonFiniteGradient("gradient penalty produced non-finite gradients")
    norms = grads.reshape(grads.shape[0], -1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


@dataclass
class TrainState:
    generator: torch.nn.Module
    critic: torch.nn.Module
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    buffer: HistoryBuffer
    interp_rng: torch.Generator
    gen_spec: GeneratorSpec
    disc_spec: DiscriminatorSpec
    hp: Hyperparams
    effect: EffectKind
    seed: Seed
    iteration: int = 0
    last_losses: dict = field(default_factory=dict)


def init_train_state(effect: EffectKind, gen_spec: GeneratorSpec,
                     disc_spec: DiscriminatorSpec, hp: Hyperparams,
                     seed: Seed) -> TrainState:
    set_global_seed(seed)
    generator = build_generator(gen_spec, derive_seed(seed, "generator"))
    critic = build_discriminator(disc_spec, derive_seed(seed, "discriminator"))
    opt_g = torch.optim.Adam(
        generator.parameters(), lr=hp.learning_rate, betas=hp.adam_betas
    )
    opt_d = torch.optim.Adam(
        critic.parameters(), lr=hp.learning_rate, betas=hp.adam_betas
    )
    buffer = HistoryBuffer(hp.buffer_capacity, seed=derive_seed(seed, "buffer"))
    interp_rng = torch.Generator()
    interp_rng.manual_seed(derive_seed(seed, "interp") & 0x7FFFFFFFFFFFFFFF)
    return TrainState(
        generator=generator, critic=critic, opt_g=opt_g, opt_d=opt_d,
        buffer=buffer, interp_rng=interp_rng, gen_spec=gen_spec,
        disc_spec=disc_spec, hp=hp, effect=effect, seed=seed,
    )


def _edited_image(state: TrainState, x_img: torch.Tensor) -> torch.Tensor:
    ver = state.generator(x_img)
    effect_img = apply_effect_batch(x_img, state.effect)
    return compose_batch(x_img, effect_img, ver)


def critic_update(state: TrainState, x_img: torch.Tensor, y_img: torch.Tensor,
                  edited: torch.Tensor | None = None):
    """One critic step; returns (loss_d, gp) floats."""
    hp = state.hp
    if edited is None:
        with torch.no_grad():
            edited = _edited_image(state, x_img)
    x = state.buffer.exchange(edited.detach())
    d_fake = _scalar_scores(state.critic(x)).mean()
    d_real = _scalar_scores(state.critic(y_img)).mean()
    eps = torch.rand(1, generator=state.interp_rng)
    gp = gradient_penalty(state.critic, x, y_img, eps)
    loss = discriminator_loss(d_fake, d_real, gp, hp.lambda_gp)
    state.opt_d.zero_grad(set_to_none=True)
    loss.backward()
    state.opt_d.step()
    return loss.item(), gp.item()


def generator_update(state: TrainState, x_img: torch.Tensor) -> float:
    """One generator step through the editor; returns the loss value."""
    for p in state.critic.parameters():  # critic is a fixed scorer here
        p.requires_grad_(False)
    try:
        edited = _edited_image(state, x_img)
        loss = generator_loss(_scalar_scores(state.critic(edited)))
        state.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        state.opt_g.step()
    finally:
        for p in state.critic.parameters():
            p.requires_grad_(True)
    return loss.item()


def train_step(state: TrainState, img: np.ndarray, sample: np.ndarray,
               hp: Hyperparams | None = None) -> TrainState:
    """n_critic critic updates, then one generator update, on one unpaired
    (input, effect-sample) pair. Raises NonFiniteLoss on divergence."""
    hp = hp or state.hp
    x_img = image_to_tensor(img)
    y_img = image_to_tensor(sample)
    with torch.no_grad():
        edited = _edited_image(state, x_img)  # generator fixed across critic steps
    loss_d = gp_val = 0.0
    for _ in range(hp.n_critic):
        loss_d, gp_val = critic_update(state, x_img, y_img, edited=edited)
    loss_g = generator_update(state, x_img)
    if not all(np.isfinite(v) for v in (loss_g, loss_d, gp_val)):
        raise NonFiniteLoss(
            f"iteration {state.iteration}: l_g={loss_g} l_d={loss_d} gp={gp_val}"
        )
    state.iteration += 1
    state.last_losses = {"l_g": loss_g, "l_d": loss_d, "gp": gp_val}
    return state


def save_checkpoint(state: TrainState, path, loader_state=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": "vfxseg-checkpoint-v1",
        "version": __version__,
        "iteration": state.iteration,
        "seed": state.seed,
        "effect": state.effect.value,
        "gen_spec": state.gen_spec.to_json(),
        "disc_spec": state.disc_spec.to_json(),
        "hp": vars(state.hp).copy(),
        "generator": state.generator.state_dict(),
        "discriminator": state.critic.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "buffer": state.buffer.state(),
        "interp_rng": state.interp_rng.get_state(),
        "loader_state": loader_state,
        "last_losses": state.last_losses,
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError as e:
        raise CheckpointMismatch(f"{path}: {e}") from e
    except Exception as e:
        raise CheckpointMismatch(f"{path}: not a readable checkpoint ({e})") from e
    if not isinstance(payload, dict) or payload.get("format") != "vfxseg-checkpoint-v1":
        raise CheckpointMismatch(f"{path}: unrecognized checkpoint format")
    return payload


def _spec_from_json(d: dict) -> GeneratorSpec:
    keys = ("variant", "input_size", "base_width", "n_res_blocks")
    return GeneratorSpec(**{k: d[k] for k in keys})


def restore_train_state(path) -> tuple:
    """(TrainState, loader_state) resuming exactly where training stopped."""
    payload = load_checkpoint(path)
    hp = Hyperparams(**{
        k: tuple(v) if k == "adam_betas" else v for k, v in payload["hp"].items()
    })
    state = init_train_state(
        EffectKind(payload["effect"]),
        _spec_from_json(payload["gen_spec"]),
        DiscriminatorSpec(**payload["disc_spec"]),
        hp,
        payload["seed"],
    )
    state.generator.load_state_dict(payload["generator"])
    state.critic.load_state_dict(payload["discriminator"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.buffer.load_state(payload["buffer"])
    state.interp_rng.set_state(payload["interp_rng"])
    state.iteration = payload["iteration"]
    state.last_losses = payload.get("last_losses", {})
    return state, payload.get("loader_state")


def train(
    manifest_a: DatasetManifest,
    manifest_b: DatasetManifest,
    effect: EffectKind,
    gen_spec: GeneratorSpec,
    hp: Hyperparams,
    seed: Seed,
    out_dir,
    disc_spec: DiscriminatorSpec | None = None,
    checkpoint_every: int = 1000,
    resume_from=None,
) -> Path:
    """Full training run; writes checkpoints and a loss log CSV.

    The log has one `iter,l_g,l_d,gp` row per iteration and reruns with
    the same seed reproduce it bit-for-bit on a deterministic backend.
    Returns the path of the final checkpoint.
    """
    from .models import discriminator_kind_for_variant

    if hp.total_iters <= 0:
        raise ValueError("hp.total_iters must be set for a training run")
    if hp.image_size % gen_spec.downsample_factor:
        raise ShapeError(
            f"image_size {hp.image_size} not divisible by {gen_spec.downsample_factor}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    disc_spec = disc_spec or DiscriminatorSpec(
        kind=discriminator_kind_for_variant(gen_spec.variant),
        base_width=gen_spec.base_width,
    )

    loader_state = None
    if resume_from is not None:
        state, loader_state = restore_train_state(resume_from)
        log_mode = "a"
    else:
        state = init_train_state(effect, gen_spec, disc_spec, hp, seed)
        log_mode = "w"
    loader = UnpairedLoader(
        manifest_a, manifest_b, hp.image_size, seed=derive_seed(seed, "data")
    )
    if loader_state is not None:
        loader.rng.bit_generator.state = loader_state

    log_path = out_dir / "loss_log.csv"
    with open(log_path, log_mode, newline="") as f:
        writer = csv.writer(f)
        if log_mode == "w":
            writer.writerow(["iter", "l_g", "l_d", "gp"])
        while state.iteration < hp.total_iters:
            img, sample = loader.draw()
            try:
                train_step(state, img, sample)
            except NonFiniteLoss:
                snap = out_dir / f"diverged_{state.iteration:06d}.pt"
                save_checkpoint(state, snap, loader.rng.bit_generator.state)
                log.error("non-finite loss; diagnostic snapshot at %s", snap)
                raise
            ll = state.last_losses
            writer.writerow([
                state.iteration,
                f"{ll['l_g']:.9e}", f"{ll['l_d']:.9e}", f"{ll['gp']:.9e}",
            ])
            if checkpoint_every and state.iteration % checkpoint_every == 0:
                save_checkpoint(
                    state,
                    out_dir / f"ckpt_{state.iteration:06d}.pt",
                    loader.rng.bit_generator.state,
                )
    final = out_dir / f"ckpt_{state.iteration:06d}.pt"
    if not final.exists():
        save_checkpoint(state, final, loader.rng.bit_generator.state)
    return final


def predict_ver(checkpoint, img: np.ndarray, image_size: int | None = None) -> np.ndarray:
    """Pure inference from a checkpoint file: image in, ver map out.

    If image_size is given (or the image does not match the generator's
    stride), the image is short-side resized and center cropped first.
    """
    payload = load_checkpoint(checkpoint)
    gen_spec = _spec_from_json(payload["gen_spec"])
    generator = build_generator(gen_spec, payload["seed"])
    try:
        generator.load_state_dict(payload["generator"])
    except RuntimeError as e:
        raise CheckpointMismatch(f"{checkpoint}: {e}") from e
    generator.eval()
    if image_size is not None and img.shape[:2] != (image_size, image_size):
        from PIL import Image

        from .data import resize_short_side_crop

        pil = Image.fromarray(
            np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)
        )
        img = np.asarray(
            resize_short_side_crop(pil, image_size), dtype=np.uint8
        ).astype(np.float32) / 255.0
    factor = gen_spec.downsample_factor
    if img.shape[0] % factor or img.shape[1] % factor:
        raise ShapeError(
            f"input dims {img.shape[:2]} not divisible by {factor}; "
            "pass image_size to resize"
        )
    with torch.no_grad():
        out = generator(image_to_tensor(img))
    return ver_to_array(out)

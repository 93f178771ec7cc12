"""Unsupervised figure-ground segmentation by imitating visual effects.

A generator predicts a per-pixel effect-strength map for an input image,
a fixed differentiable editor applies a local effect through it, and a
Wasserstein critic compares the edited result against an unpaired pool
of real effect photos. Thresholding a graph-smoothed version of the
learned map yields a figure-ground mask.
"""

__version__ = "0.1.0"

# NB: the mask pipeline entry point stays at vfxseg.binarize.binarize so the
# `vfxseg.binarize` submodule name is not shadowed by the function.
from .binarize import (
    BinarizeParams,
    SuperpixelGraph,
    build_graph,
    mean_ver,
    oversegment,
    propagate,
    threshold,
)
from .core import (
    load_image,
    load_mask,
    load_ver,
    save_image,
    save_mask,
    save_ver,
    set_global_seed,
)
from .data import (
    DatasetManifest,
    UnpairedLoader,
    build_effect_samples,
    load_unpaired,
    make_disk_dataset,
    split_msra,
)
from .effects import (
    EffectKind,
    apply_effect,
    compose,
    compose_alpha,
    synthesize_sample,
)
from .evaluate import EvalReport, emit_curve, evaluate_dataset, iou
from .models import (
    DiscriminatorSpec,
    GeneratorSpec,
    build_discriminator,
    build_generator,
    discriminator_forward,
    generator_forward,
)
from .training import (
    HistoryBuffer,
    Hyperparams,
    buffer_exchange,
    discriminator_loss,
    generator_loss,
    gradient_penalty,
    predict_ver,
    train,
    train_step,
)
from .web import WebQuery, web_fetch

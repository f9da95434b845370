"""Matching head: joint descriptor assembly, MLP embedding, contrastive loss.

A mask's final descriptor concatenates its cross-view, context and
object vectors; a shallow MLP maps that into the shared latent space
where source and candidates are compared by cosine similarity.  The
training loss is a temperature-scaled softmax cross-entropy over one
positive and a batch of negatives, with the positive included in the
normalizing sum.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import numeric
from .encoder import MaskDescriptor
from .errors import DimensionError, ParameterError, StateError
from .numeric import Tape, Tensor

DEFAULT_HIDDEN = 256
DEFAULT_LATENT = 128
DEFAULT_TEMPERATURE = 0.2

cosine_sim = numeric.cosine_sim


@dataclass
class MlpParams:
    w1: Tensor  # 3*d_in x hidden
    b1: Tensor  # hidden
    w2: Tensor  # hidden x d_f
    b2: Tensor  # d_f

    @property
    def d_in(self) -> int:
        return self.w1.data.shape[0]

    @property
    def d_f(self) -> int:
        return self.w2.data.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"mlp.w1": self.w1, "mlp.b1": self.b1, "mlp.w2": self.w2, "mlp.b2": self.b2}


@dataclass
class LossConfig:
    temperature: float = DEFAULT_TEMPERATURE
    batch: int = 16

    def __post_init__(self):
        if self.temperature <= 0:
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")
        if self.batch < 2:
            raise ParameterError(f"batch must be >= 2, got {self.batch}")


def assemble_rho(desc: MaskDescriptor, tape: Tape | None = None) -> Tensor:
    """Concatenate (cross_view, context, object) into one vector."""
    if desc.cross_view is None:
        raise StateError("descriptor has no cross_view embedding yet")
    return numeric.concat_vec(
        [desc.cross_view, numeric.tensor(desc.context), numeric.tensor(desc.object)],
        tape,
    )


def embed(rho, params: MlpParams, tape: Tape | None = None) -> Tensor:
    """Two-layer ReLU MLP from the joint descriptor to the latent space."""
    rho = rho if isinstance(rho, Tensor) else numeric.tensor(rho)
    if rho.data.ndim != 1 or rho.data.shape[0] != params.d_in:
        raise DimensionError(
            f"embed: descriptor width {rho.data.shape} does not match MLP input {params.d_in}"
        )
    x = numeric.reshape(rho, (1, params.d_in), tape)
    hid = numeric.relu(numeric.add_bias(numeric.matmul(x, params.w1, tape), params.b1, tape), tape)
    out = numeric.add_bias(numeric.matmul(hid, params.w2, tape), params.b2, tape)
    return numeric.row(out, 0, tape)


def info_nce(sims, positive_index: int, cfg: LossConfig, tape: Tape | None = None) -> Tensor:
    """Contrastive loss over a similarity vector, log-sum-exp form.

    L = logsumexp(sims / t) - sims[positive] / t, so the gradient w.r.t.
    the similarities is softmax(sims / t) minus the positive one-hot.
    """
    if cfg.temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {cfg.temperature}")
    sims = sims if isinstance(sims, Tensor) else numeric.tensor(sims)
    scaled = numeric.scale(sims, 1.0 / cfg.temperature, tape)
    return numeric.cross_entropy_logits(scaled, positive_index, tape)

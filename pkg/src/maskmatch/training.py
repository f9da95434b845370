"""Deterministic contrastive training loop with Adam and checkpointing.

One optimization step consumes one sample pack: encode descriptors,
mine a negative batch around the ground-truth candidate, refine through
cross-view attention, embed, and take one Adam step on the contrastive
loss.  Everything is seeded; two runs with the same seed and manifest
produce bit-identical checkpoints and metrics.

Checkpoint file layout (`.ommc`, little-endian):

    magic "OMMC" | version u16 | step u64 | adam_t u64 | skipped u64 | cursor u64
    config JSON: u32 length + UTF-8 bytes
    tensor count u16, then per tensor:
        name (u16 length + UTF-8), ndim u8, dims u32 each, f64 data
    moment count u16, then per entry:
        name (u16 length + UTF-8), ndim u8, dims u32 each,
        first-moment f64 data, second-moment f64 data
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numeric
from .attention import AttentionParams, refine_descriptors
from .encoder import encode_all
from .errors import (
    EmptyMaskError,
    MaskMatchError,
    NoNegativesError,
    PackFormatError,
    ParameterError,
)
from .head import LossConfig, MlpParams, assemble_rho, embed, info_nce
from .mining import build_negative_batch, delaunay_adjacency, hard_negative_set, mask_centroid
from .numeric import Tape, Tensor
from .packio import read_manifest, read_pack_file

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"OMMC"
CHECKPOINT_VERSION = 1
MINING_STRATEGIES = ("adjacent", "random")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 200
    seed: int = 0
    mining_seed: int = 0
    batch: int = 16
    context_margin: float = 0.5
    temperature: float = 0.2
    hidden: int = 256
    latent_dim: int = 128
    d_k: int = 0  # 0 means "same as the feature dim"
    max_tokens: int = 4096
    checkpoint_interval: int = 0  # 0 = final checkpoint only
    mining_strategy: str = "adjacent"

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("Adam betas must lie in [0, 1)")
        if self.steps < 1:
            raise ParameterError("steps must be >= 1")
        if self.batch < 2:
            raise ParameterError("mining batch must be >= 2")
        if self.temperature <= 0:
            raise ParameterError("temperature must be > 0")
        if self.mining_strategy not in MINING_STRATEGIES:
            raise ParameterError(f"mining_strategy must be one of {MINING_STRATEGIES}")


@dataclass
class ModelParams:
    attn: AttentionParams
    mlp: MlpParams

    def tensors(self) -> dict[str, Tensor]:
        return {**self.attn.tensors(), **self.mlp.tensors()}


@dataclass
class Checkpoint:
    step: int
    adam_t: int
    skipped: int
    cursor: int
    config: dict
    params: ModelParams
    moments: dict[str, tuple[np.ndarray, np.ndarray]]
    version: int = CHECKPOINT_VERSION


def init_model(feature_dim: int, cfg: TrainConfig, rng: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, small normal positions."""
    d = feature_dim
    d_k = cfg.d_k or d
    lim = 1.0 / np.sqrt(d)
    attn = AttentionParams(
        w_q=numeric.tensor(rng.uniform(-lim, lim, (d, d_k)), requires_grad=True),
        w_k=numeric.tensor(rng.uniform(-lim, lim, (d, d_k)), requires_grad=True),
        w_v=numeric.tensor(rng.uniform(-lim, lim, (d, d_k)), requires_grad=True),
        pos_embed=numeric.tensor(0.02 * rng.standard_normal((cfg.max_tokens, d)), requires_grad=True),
        ln_gamma=numeric.tensor(np.ones(d), requires_grad=True),
        ln_beta=numeric.tensor(np.zeros(d), requires_grad=True),
    )
    d_in = d_k + 2 * d  # cross_view is d_k wide; context and object are d wide
    lim1 = 1.0 / np.sqrt(d_in)
    lim2 = 1.0 / np.sqrt(cfg.hidden)
    mlp = MlpParams(
        w1=numeric.tensor(rng.uniform(-lim1, lim1, (d_in, cfg.hidden)), requires_grad=True),
        b1=numeric.tensor(np.zeros(cfg.hidden), requires_grad=True),
        w2=numeric.tensor(rng.uniform(-lim2, lim2, (cfg.hidden, cfg.latent_dim)), requires_grad=True),
        b2=numeric.tensor(np.zeros(cfg.latent_dim), requires_grad=True),
    )
    return ModelParams(attn=attn, mlp=mlp)


def model_from_tensors(tensors: dict[str, Tensor]) -> ModelParams:
    return ModelParams(
        attn=AttentionParams(
            w_q=tensors["attn.w_q"],
            w_k=tensors["attn.w_k"],
            w_v=tensors["attn.w_v"],
            pos_embed=tensors["attn.pos_embed"],
            ln_gamma=tensors["attn.ln_gamma"],
            ln_beta=tensors["attn.ln_beta"],
        ),
        mlp=MlpParams(
            w1=tensors["mlp.w1"], b1=tensors["mlp.b1"], w2=tensors["mlp.w2"], b2=tensors["mlp.b2"]
        ),
    )


# --- Adam -----------------------------------------------------------------


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray | None],
    moments: dict[str, tuple[np.ndarray, np.ndarray]],
    t: int,
    cfg: TrainConfig,
) -> bool:
    """One bias-corrected Adam update, in place.

    Returns False (and changes nothing) when any gradient is non-finite.
    Parameters without a gradient this step keep their moments decaying.
    """
    if t < 1:
        raise ParameterError("Adam step index starts at 1")
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            log.warning("skipping update at t=%d: non-finite gradient in %s", t, name)
            return False
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m, v = moments[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.data -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
    return True


def init_moments(params: dict[str, Tensor]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    return {name: (np.zeros_like(p.data), np.zeros_like(p.data)) for name, p in params.items()}


# --- checkpoint io -----------------------------------------------------------


def _write_named_array(out, name: str, arrays: list[np.ndarray]) -> None:
    encoded = name.encode("utf-8")
    out.write(struct.pack("<H", len(encoded)))
    out.write(encoded)
    shape = arrays[0].shape
    out.write(struct.pack("<B", len(shape)))
    for dim in shape:
        out.write(struct.pack("<I", dim))
    for arr in arrays:
        out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_named_array(data: bytes, pos: int, count: int):
    (name_len,) = struct.unpack_from("<H", data, pos)
    pos += 2
    name = data[pos : pos + name_len].decode("utf-8")
    pos += name_len
    (ndim,) = struct.unpack_from("<B", data, pos)
    pos += 1
    shape = []
    for _ in range(ndim):
        (dim,) = struct.unpack_from("<I", data, pos)
        shape.append(dim)
        pos += 4
    n = int(np.prod(shape)) if shape else 1
    arrays = []
    for _ in range(count):
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        arrays.append(arr)
        pos += 8 * n
    return name, arrays, pos


def save_checkpoint(ck: Checkpoint, path) -> None:
    out = open(path, "wb")
    try:
        out.write(CHECKPOINT_MAGIC)
        out.write(struct.pack("<HQQQQ", ck.version, ck.step, ck.adam_t, ck.skipped, ck.cursor))
        blob = json.dumps(ck.config, sort_keys=True).encode("utf-8")
        out.write(struct.pack("<I", len(blob)))
        out.write(blob)
        tensors = ck.params.tensors()
        out.write(struct.pack("<H", len(tensors)))
        for name in sorted(tensors):
            _write_named_array(out, name, [tensors[name].data])
        out.write(struct.pack("<H", len(ck.moments)))
        for name in sorted(ck.moments):
            m, v = ck.moments[name]
            _write_named_array(out, name, [m, v])
    finally:
        out.close()


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise PackFormatError(f"{path} is not a checkpoint file (bad magic)")
    version, step, adam_t, skipped, cursor = struct.unpack_from("<HQQQQ", data, 4)
    if version != CHECKPOINT_VERSION:
        raise PackFormatError(f"unsupported checkpoint version {version}")
    pos = 4 + 34
    (blob_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    config = json.loads(data[pos : pos + blob_len].decode("utf-8"))
    pos += blob_len
    (n_tensors,) = struct.unpack_from("<H", data, pos)
    pos += 2
    tensors: dict[str, Tensor] = {}
    for _ in range(n_tensors):
        name, arrays, pos = _read_named_array(data, pos, 1)
        tensors[name] = numeric.tensor(arrays[0], requires_grad=True)
    (n_moments,) = struct.unpack_from("<H", data, pos)
    pos += 2
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for _ in range(n_moments):
        name, arrays, pos = _read_named_array(data, pos, 2)
        moments[name] = (arrays[0], arrays[1])
    return Checkpoint(
        step=step,
        adam_t=adam_t,
        skipped=skipped,
        cursor=cursor,
        config=config,
        params=model_from_tensors(tensors),
        moments=moments,
        version=version,
    )


# --- the training loop ----------------------------------------------------------


class SampleSkipped(MaskMatchError):
    """Raised internally when a sample cannot contribute a training step."""


@dataclass
class StepResult:
    loss: float
    top1: float


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics: list[tuple[int, float, float]] = field(default_factory=list)
    skipped: int = 0


def _mining_rng(seed: int, step: int) -> np.random.Generator:
    mixed = ((seed ^ step) + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    return np.random.default_rng(mixed)


def train_step(
    model: ModelParams, pack, cfg: TrainConfig, rng: np.random.Generator
) -> tuple[Tape, "numeric.Tensor", StepResult]:
    """Forward pass and loss for one pack; raises SampleSkipped when unusable."""
    if not pack.visible or pack.gt_index is None:
        raise SampleSkipped("pack has no visible ground truth")
    try:
        source, cands, kept = encode_all(pack, cfg.context_margin)
    except EmptyMaskError as e:
        raise SampleSkipped(f"empty source mask: {e}") from e
    if pack.gt_index not in kept:
        raise SampleSkipped("ground-truth candidate empty after resampling")
    gt_pos = kept.index(pack.gt_index)

    if cfg.mining_strategy == "adjacent":
        graph = delaunay_adjacency([mask_centroid(pack.candidates[i]) for i in kept])
        hard = hard_negative_set(graph, gt_pos)
    else:
        hard = set()
    try:
        nb = build_negative_batch(len(kept), gt_pos, hard, cfg.batch, rng)
    except NoNegativesError as e:
        raise SampleSkipped(str(e)) from e

    slots = [gt_pos] + nb.negative_indices  # positive occupies slot 0
    unique = list(dict.fromkeys(slots))

    tape = Tape()
    refine_descriptors(
        source,
        [cands[i] for i in unique],
        pack.source_features,
        pack.dest_features,
        model.attn,
        tape,
    )
    src_emb = embed(assemble_rho(source, tape), model.mlp, tape)
    embs = {i: embed(assemble_rho(cands[i], tape), model.mlp, tape) for i in unique}
    sims = numeric.stack_scalars(
        [numeric.cosine_sim(embs[i], src_emb, tape) for i in slots], tape
    )
    loss = info_nce(sims, 0, LossConfig(cfg.temperature, cfg.batch), tape)
    top1 = 1.0 if int(np.argmax(sims.data)) == 0 else 0.0
    return tape, loss, StepResult(loss=float(loss.data), top1=top1)


def train(
    manifest_path,
    cfg: TrainConfig,
    out_dir,
    resume_from=None,
) -> TrainResult:
    """Run the configured number of steps over the manifest, in order."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pack_paths = read_manifest(manifest_path)
    if not pack_paths:
        raise ParameterError(f"manifest {manifest_path} lists no packs")

    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        model = ck.params
        moments = ck.moments
        start_step, adam_t, skipped, cursor = ck.step, ck.adam_t, ck.skipped, ck.cursor
    else:
        probe = read_pack_file(pack_paths[0])
        model = init_model(probe.source_features.shape[2], cfg, np.random.default_rng(cfg.seed))
        moments = init_moments(model.tensors())
        start_step, adam_t, skipped, cursor = 0, 0, 0, 0

    tensors = model.tensors()
    metrics_path = out / "metrics.csv"
    new_file = not metrics_path.exists() or resume_from is None
    metrics_file = open(metrics_path, "w" if new_file else "a")
    if new_file:
        metrics_file.write("step,loss,top1\n")

    result = TrainResult(checkpoint_path=out / f"ckpt_{cfg.steps}.ommc", skipped=skipped)
    window_used = 0
    window_skipped = 0
    try:
        step = start_step
        while step < cfg.steps:
            pack_path = pack_paths[cursor % len(pack_paths)]
            cursor += 1
            window_used += 1
            rng = _mining_rng(cfg.mining_seed, cursor)
            try:
                pack = read_pack_file(pack_path)
                tape, loss, sr = train_step(model, pack, cfg, rng)
            except SampleSkipped as e:
                window_skipped += 1
                result.skipped += 1
                log.info("skipping %s: %s", pack_path.name, e)
                if window_used >= len(pack_paths):
                    if window_skipped * 2 > window_used:
                        raise MaskMatchError(
                            f"aborting: {window_skipped}/{window_used} samples skipped "
                            "in the last epoch; the dataset is mostly unusable"
                        )
                    window_used = window_skipped = 0
                continue
            if window_used >= len(pack_paths):
                window_used = window_skipped = 0

            numeric.zero_grads(tensors.values())
            tape.backward(loss)
            adam_t += 1
            applied = adam_step(
                tensors, {n: t.grad for n, t in tensors.items()}, moments, adam_t, cfg
            )
            if not applied:
                adam_t -= 1
                result.skipped += 1
                continue
            step += 1
            result.metrics.append((step, sr.loss, sr.top1))
            metrics_file.write(f"{step},{sr.loss:.10g},{sr.top1:g}\n")

            if cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0 and step < cfg.steps:
                ck = Checkpoint(
                    step=step,
                    adam_t=adam_t,
                    skipped=result.skipped,
                    cursor=cursor,
                    config=asdict(cfg),
                    params=model,
                    moments=moments,
                )
                save_checkpoint(ck, out / f"ckpt_{step}.ommc")
    finally:
        metrics_file.close()

    final = Checkpoint(
        step=cfg.steps,
        adam_t=adam_t,
        skipped=result.skipped,
        cursor=cursor,
        config=asdict(cfg),
        params=model,
        moments=moments,
    )
    save_checkpoint(final, result.checkpoint_path)
    return result

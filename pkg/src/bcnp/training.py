"""Training: the Monte-Carlo permutation-marginalized negative log-likelihood
with a straight-through gradient path into the permutation logits, the Adam
schedule with linear warmup, and bit-exact checkpointing.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch

from .errors import (
    IntegrityError,
    TrainingDivergedError,
    ValidationError,
    VersionMismatchError,
)
from .model import BcnpModel, ModelConfig, strict_lower_mask
from .sinkhorn import (
    GumbelSinkhornConfig,
    batched_hungarian,
    sample_gumbel,
    sinkhorn_normalize,
)

CHECKPOINT_MAGIC = b"BCNP"
CHECKPOINT_VERSION = 1

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    warmup_fraction: float = 0.10
    batch_size: int = 64
    epochs: int = 2
    permutation_samples: int = 100
    prob_clamp: float = 1e-7
    gs: GumbelSinkhornConfig = field(default_factory=GumbelSinkhornConfig)
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def __post_init__(self):
        if not 0.0 < self.prob_clamp < 0.5:
            raise ValidationError("prob_clamp must be in (0, 0.5)")
        if self.permutation_samples < 1:
            raise ValidationError("permutation_samples must be >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValidationError("warmup_fraction must be in [0, 1]")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")


def learning_rate_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warmup to the peak rate over warmup_fraction of the run, then
    constant.  ``step`` is 1-based (the step about to be applied)."""
    warmup_steps = config.warmup_fraction * total_steps
    if warmup_steps <= 0:
        return config.learning_rate
    return config.learning_rate * min(1.0, step / warmup_steps)


def log_bernoulli_dag(graph, permutation, phi, eps: float = 1e-7) -> float:
    """log P(G | Q, phi): project the DAG onto the triangular slots via
    A = Q^T G Q and sum Bernoulli log-probabilities over all off-diagonal
    positions.  Strict-lower slots carry sigmoid(phi) clamped to
    [eps, 1 - eps]; strict-upper slots carry probability eps, so
    permutation-incompatible graphs are penalized but the value stays finite.
    """
    g = np.asarray(graph.adjacency if hasattr(graph, "adjacency") else graph, dtype=np.float64)
    q = np.asarray(permutation, dtype=np.float64)
    p_logits = np.asarray(phi, dtype=np.float64)
    d = g.shape[0]
    if q.shape != (d, d) or p_logits.shape != (d, d):
        raise ValidationError("graph, permutation, and phi must share one shape")
    a = q.T @ g @ q
    lower = np.tril(np.ones((d, d), dtype=bool), k=-1)
    probs = np.where(lower, np.clip(_sigmoid(p_logits), eps, 1.0 - eps), eps)
    off_diag = ~np.eye(d, dtype=bool)
    terms = a * np.log(probs) + (1.0 - a) * np.log1p(-probs)
    return float(terms[off_diag].sum())


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def _bernoulli_log_terms(
    graphs: torch.Tensor, permutations: torch.Tensor, phi: torch.Tensor, eps: float
) -> torch.Tensor:
    """(B, S) log-likelihood terms; differentiable in phi and, through the
    straight-through permutations, in the permutation logits."""
    d = phi.shape[-1]
    a = torch.einsum("bsia,bij,bsjc->bsac", permutations, graphs, permutations)
    lower = strict_lower_mask(d, device=phi.device)
    probs_lower = torch.sigmoid(phi).clamp(eps, 1.0 - eps)
    eps_t = torch.as_tensor(eps, dtype=phi.dtype, device=phi.device)
    probs = torch.where(lower, probs_lower, eps_t).unsqueeze(1)  # (B, 1, D, D)
    log_p = probs.log()
    log_1mp = torch.log1p(-probs)
    terms = a * log_p + (1.0 - a) * log_1mp
    off_diag = ~torch.eye(d, dtype=torch.bool, device=phi.device)
    return (terms * off_diag).sum(dim=(-2, -1))


def draw_permutations(
    theta: torch.Tensor,
    num_samples: int,
    config: GumbelSinkhornConfig,
    generator: torch.Generator | None,
) -> torch.Tensor:
    """Straight-through Gumbel-Sinkhorn permutations for a batch of logit
    matrices: value equals the exact hard assignment, gradient flows through
    the soft Sinkhorn normalization of the same perturbed logits."""
    b, d, _ = theta.shape
    noise = sample_gumbel((b, num_samples, d, d), generator, dtype=theta.dtype)
    perturbed = theta.unsqueeze(1) / config.temperature + config.noise_scale * noise
    soft = sinkhorn_normalize(perturbed, config, stable=False).matrix
    flat = perturbed.detach().cpu().numpy().reshape(-1, d, d)
    hard_np = batched_hungarian(flat).reshape(b, num_samples, d, d)
    hard = torch.from_numpy(hard_np).to(dtype=theta.dtype, device=theta.device)
    return soft + (hard - soft).detach()


def _nll_loss_and_phi(
    datasets: torch.Tensor,
    graphs: torch.Tensor,
    model: BcnpModel,
    config: TrainConfig,
    generator: torch.Generator | None,
    frozen_permutations: torch.Tensor | None,
) -> tuple[torch.Tensor, torch.Tensor]:
    if datasets.ndim != 3 or graphs.ndim != 3:
        raise ValidationError("expected batched datasets (B, N, D) and graphs (B, D, D)")
    if datasets.shape[0] != graphs.shape[0] or datasets.shape[0] == 0:
        raise ValidationError("batch sizes must match and be nonempty")
    theta, phi = model(datasets)
    graphs = graphs.to(phi.dtype)
    if frozen_permutations is None:
        permutations = draw_permutations(
            theta, config.permutation_samples, config.gs, generator
        )
    else:
        permutations = frozen_permutations.to(phi.dtype)
    terms = _bernoulli_log_terms(graphs, permutations, phi, config.prob_clamp)
    num_samples = terms.shape[1]
    log_likelihood = torch.logsumexp(terms, dim=1) - math.log(num_samples)
    loss = -log_likelihood.mean()
    if not torch.isfinite(loss):
        bad = torch.nonzero(~torch.isfinite(log_likelihood)).flatten().tolist()
        raise TrainingDivergedError(f"non-finite loss; offending batch indices {bad}")
    return loss, phi


def nll_loss(
    datasets: torch.Tensor,
    graphs: torch.Tensor,
    model: BcnpModel,
    config: TrainConfig,
    generator: torch.Generator | None = None,
    frozen_permutations: torch.Tensor | None = None,
) -> torch.Tensor:
    """Negative mean log-probability of the true DAGs, the permutation
    marginal approximated by a log-mean-exp over sampled permutations.

    ``frozen_permutations`` (B, S, D, D) bypasses the Gumbel-Sinkhorn draw so
    gradients can be checked against finite differences on a fixed
    integration state.
    """
    loss, _ = _nll_loss_and_phi(
        datasets, graphs, model, config, generator, frozen_permutations
    )
    return loss


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    model_state: dict[str, torch.Tensor]
    optimizer_state: dict[str, torch.Tensor]
    adam_step: int
    step: int
    corpus_fingerprint: str

    def build_model(self) -> BcnpModel:
        model = BcnpModel(self.model_config)
        model.load_state_dict({k: v.clone() for k, v in self.model_state.items()})
        return model


def _config_to_dict(config) -> dict:
    return asdict(config)


def _gs_from_dict(d: dict) -> GumbelSinkhornConfig:
    return GumbelSinkhornConfig(**d)


def model_config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["gs"] = _gs_from_dict(d["gs"])
    return ModelConfig(**d)


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["gs"] = _gs_from_dict(d["gs"])
    return TrainConfig(**d)


def _write_tensor(buf: io.BytesIO, name: str, tensor: torch.Tensor) -> None:
    data = tensor.detach().cpu().to(torch.float32).numpy()
    encoded = name.encode("utf-8")
    buf.write(struct.pack("<H", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<B", data.ndim))
    for dim in data.shape:
        buf.write(struct.pack("<I", dim))
    buf.write(data.astype("<f4").tobytes(order="C"))


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    """Binary layout: magic, u32 version, length-prefixed UTF-8 config
    document, named float32 little-endian tensors, trailing CRC-32 of all
    preceding bytes."""
    tensors = {f"model.{k}": v for k, v in checkpoint.model_state.items()}
    tensors.update({f"adam.{k}": v for k, v in checkpoint.optimizer_state.items()})
    doc = {
        "model_config": _config_to_dict(checkpoint.model_config),
        "train_config": _config_to_dict(checkpoint.train_config),
        "step": checkpoint.step,
        "adam_step": checkpoint.adam_step,
        "corpus_fingerprint": checkpoint.corpus_fingerprint,
        "tensor_names": list(tensors),
    }
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    doc_bytes = json.dumps(doc, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(doc_bytes)))
    buf.write(doc_bytes)
    for name, tensor in tensors.items():
        _write_tensor(buf, name, tensor)
    payload = buf.getvalue()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 8 or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise IntegrityError("not a checkpoint file")
    payload, crc_bytes = raw[:-4], raw[-4:]
    if zlib.crc32(payload) & 0xFFFFFFFF != struct.unpack("<I", crc_bytes)[0]:
        raise IntegrityError("checkpoint CRC mismatch (truncated or corrupted file)")
    offset = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", payload, offset)
    offset += 4
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"checkpoint format version {version}, expected {CHECKPOINT_VERSION}"
        )
    (doc_len,) = struct.unpack_from("<Q", payload, offset)
    offset += 8
    doc = json.loads(payload[offset : offset + doc_len].decode("utf-8"))
    offset += doc_len
    tensors: dict[str, torch.Tensor] = {}
    try:
        for _ in doc["tensor_names"]:
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", payload, offset) if rank else ()
            offset += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            array = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
            offset += 4 * count
            tensors[name] = torch.from_numpy(array.reshape(dims).copy())
    except (struct.error, ValueError) as exc:
        raise IntegrityError(f"malformed checkpoint tensor block: {exc}") from exc
    model_state = {
        k[len("model.") :]: v for k, v in tensors.items() if k.startswith("model.")
    }
    optimizer_state = {
        k[len("adam.") :]: v for k, v in tensors.items() if k.startswith("adam.")
    }
    return Checkpoint(
        model_config=model_config_from_dict(doc["model_config"]),
        train_config=train_config_from_dict(doc["train_config"]),
        model_state=model_state,
        optimizer_state=optimizer_state,
        adam_step=doc["adam_step"],
        step=doc["step"],
        corpus_fingerprint=doc["corpus_fingerprint"],
    )


def _step_generator(seed: int, step: int) -> torch.Generator:
    digest = hashlib.blake2b(f"noise:{seed}:{step}".encode(), digest_size=8).digest()
    g = torch.Generator()
    g.manual_seed(int.from_bytes(digest, "little") % (2**63))
    return g


def _epoch_order(seed: int, epoch: int, count: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0xB0C4, epoch])
    return rng.permutation(count)


def _optimizer_state_tensors(model: BcnpModel, optimizer: torch.optim.Adam):
    tensors: dict[str, torch.Tensor] = {}
    adam_step = 0
    for name, param in model.named_parameters():
        state = optimizer.state.get(param)
        if not state:
            zero = torch.zeros_like(param)
            tensors[f"exp_avg.{name}"] = zero
            tensors[f"exp_avg_sq.{name}"] = zero.clone()
        else:
            tensors[f"exp_avg.{name}"] = state["exp_avg"].clone()
            tensors[f"exp_avg_sq.{name}"] = state["exp_avg_sq"].clone()
            adam_step = int(state["step"].item())
    return tensors, adam_step


def _restore_optimizer_state(
    model: BcnpModel, optimizer: torch.optim.Adam, tensors: dict, adam_step: int
) -> None:
    if adam_step == 0:
        return
    for name, param in model.named_parameters():
        optimizer.state[param] = {
            "step": torch.tensor(float(adam_step)),
            "exp_avg": tensors[f"exp_avg.{name}"].clone().to(param.dtype),
            "exp_avg_sq": tensors[f"exp_avg_sq.{name}"].clone().to(param.dtype),
        }


def make_checkpoint(
    model: BcnpModel,
    optimizer: torch.optim.Adam,
    model_config: ModelConfig,
    train_config: TrainConfig,
    step: int,
    corpus_fingerprint: str,
) -> Checkpoint:
    opt_tensors, adam_step = _optimizer_state_tensors(model, optimizer)
    return Checkpoint(
        model_config=model_config,
        train_config=train_config,
        model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
        optimizer_state=opt_tensors,
        adam_step=adam_step,
        step=step,
        corpus_fingerprint=corpus_fingerprint,
    )


def train(
    corpus,
    model_config: ModelConfig,
    train_config: TrainConfig,
    log_fn: Callable[[dict], None] | None = None,
    resume_from: Checkpoint | None = None,
    max_steps: int | None = None,
    checkpoint_fn: Callable[["Checkpoint"], None] | None = None,
) -> Checkpoint:
    """Run the full optimization and return the final checkpoint.

    ``corpus`` must expose __len__, num_nodes, fingerprint, and
    batch(indices) -> (datasets, graphs) float32 arrays.  Deterministic given
    the config seed: batch order is a per-epoch seeded permutation, Gumbel
    noise comes from a per-step stream, so resuming from a checkpoint
    reproduces the continuation bit for bit.
    """
    count = len(corpus)
    if count == 0:
        raise ValidationError("corpus is empty")
    batch = min(train_config.batch_size, count)
    steps_per_epoch = math.ceil(count / batch)
    total_steps = steps_per_epoch * train_config.epochs

    torch.manual_seed(train_config.seed)
    model = BcnpModel(model_config)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=train_config.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS
    )
    start_step = 0
    if resume_from is not None:
        if resume_from.model_config != model_config:
            raise ValidationError("checkpoint model_config differs from requested config")
        model.load_state_dict(resume_from.model_state)
        _restore_optimizer_state(
            model, optimizer, resume_from.optimizer_state, resume_from.adam_step
        )
        start_step = resume_from.step

    step = start_step
    stop_at = total_steps if max_steps is None else min(total_steps, start_step + max_steps)
    while step < stop_at:
        epoch = step // steps_per_epoch
        position = step % steps_per_epoch
        order = _epoch_order(train_config.seed, epoch, count)
        indices = order[position * batch : (position + 1) * batch]
        datasets_np, graphs_np = corpus.batch(indices)
        datasets = torch.from_numpy(np.ascontiguousarray(datasets_np, dtype=np.float32))
        graphs = torch.from_numpy(np.ascontiguousarray(graphs_np, dtype=np.float32))

        step += 1
        lr = learning_rate_at(step, total_steps, train_config)
        for group in optimizer.param_groups:
            group["lr"] = lr
        generator = _step_generator(train_config.seed, step)
        try:
            loss, phi = _nll_loss_and_phi(
                datasets, graphs, model, train_config, generator, None
            )
        except TrainingDivergedError as exc:
            exc.checkpoint = make_checkpoint(
                model, optimizer, model_config, train_config, step - 1, corpus.fingerprint
            )
            raise
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

        if log_fn is not None and (
            step % train_config.log_every == 0 or step == total_steps
        ):
            with torch.no_grad():
                mask = strict_lower_mask(phi.shape[-1])
                mean_edges = float(torch.sigmoid(phi.detach())[:, mask].sum(dim=-1).mean())
            log_fn(
                {
                    "step": step,
                    "lr": lr,
                    "loss": float(loss.detach()),
                    "mean_edges": mean_edges,
                }
            )
        if (
            checkpoint_fn is not None
            and train_config.checkpoint_every > 0
            and step % train_config.checkpoint_every == 0
            and step < stop_at
        ):
            checkpoint_fn(
                make_checkpoint(
                    model, optimizer, model_config, train_config, step,
                    corpus.fingerprint,
                )
            )

    return make_checkpoint(
        model, optimizer, model_config, train_config, step, corpus.fingerprint
    )


def corpus_fingerprint_from_arrays(datasets, graphs) -> str:
    """Stable content hash over record payloads (float32/uint8 encodings)."""
    h = hashlib.sha256()
    for data, adj in zip(datasets, graphs):
        h.update(np.ascontiguousarray(data, dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(adj, dtype=np.uint8).tobytes())
    return h.hexdigest()


class InMemoryCorpus:
    """Training corpus held as arrays in memory."""

    def __init__(self, datasets: list[np.ndarray], graphs: list[np.ndarray]):
        if len(datasets) != len(graphs) or not datasets:
            raise ValidationError("datasets and graphs must align and be nonempty")
        d = graphs[0].shape[0]
        for data, adj in zip(datasets, graphs):
            if adj.shape != (d, d) or data.shape[1] != d:
                raise ValidationError("all corpus records must share one node count")
        self._datasets = [np.asarray(x, dtype=np.float32) for x in datasets]
        self._graphs = [np.asarray(g, dtype=np.uint8) for g in graphs]
        self.num_nodes = d
        self.fingerprint = corpus_fingerprint_from_arrays(self._datasets, self._graphs)

    @classmethod
    def from_samples(cls, samples) -> "InMemoryCorpus":
        samples = list(samples)
        return cls(
            [s.dataset for s in samples], [s.graph.adjacency for s in samples]
        )

    def __len__(self) -> int:
        return len(self._datasets)

    def record(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        return self._datasets[index], self._graphs[index]

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.stack([self._datasets[i] for i in indices]),
            np.stack([self._graphs[i] for i in indices]),
        )

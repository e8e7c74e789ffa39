"""Zero-shot prediction and per-class entropy-weighted ensembling.

A single model classifies an image by softmax over the cosine similarities
between the image embedding and each class-prompt embedding, scaled by the
model's temperature. The ensemble path instead runs one temperature-1
softmax per member model, weights members by the Shannon entropy of their
distributions (uncertain members weigh more), sums the weighted per-class
probabilities within each class's member set, and predicts the class with
the highest combined confidence.

Each member model's class-similarity vector is computed once per sample and
shared across every class that selected the model, so ensemble cost grows
with the member union, not with classes x members.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .embedding_store import EmbeddingMatrix, unit_rows64
from .fileio import atomic_write_text
from .errors import IncompleteEmbeddingsError, InvalidInputError
from .selection import SelectionResult

PREDICTIONS_FORMAT_VERSION = 1

DEFAULT_CLASS_PROMPT_TEMPLATE = "a photo of {class}"
DEFAULT_REUSE_TEMPERATURE = 1.0

# Below this total entropy the weight denominator is considered degenerate
# and members fall back to uniform weights.
_ENTROPY_FLOOR = 1e-12


def class_prompt(class_name: str, template: str = DEFAULT_CLASS_PROMPT_TEMPLATE) -> str:
    """Render the reuse-time prompt text for a class."""
    return template.replace("{class}", class_name)


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def _entropy(probs: np.ndarray) -> float:
    nz = probs[probs > 0.0]
    return float(-(nz * np.log(nz)).sum())


def _argmax_class(classes: Sequence[str], values: Mapping[str, float]) -> str:
    """Highest value wins; exact ties go to the lexicographically first class."""
    return min(classes, key=lambda c: (-values[c], c))


def zero_shot_predict(
    image_embed,
    class_prompt_embeds: EmbeddingMatrix,
    tau: float,
) -> tuple[str, dict[str, float]]:
    """Single-model zero-shot prediction.

    Returns the argmax class and the full softmax distribution over the
    prompt matrix's classes at temperature `tau`.
    """
    if tau <= 0:
        raise InvalidInputError(f"temperature must be positive, got {tau}")
    if len(class_prompt_embeds) == 0:
        raise InvalidInputError("class prompt matrix is empty")
    vec = np.asarray(image_embed, dtype=np.float64)
    if vec.shape != (class_prompt_embeds.dim,):
        raise InvalidInputError(
            f"image embedding has shape {vec.shape}, prompts have dim "
            f"{class_prompt_embeds.dim}"
        )
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise InvalidInputError("image embedding has zero norm")
    sims = np.clip(unit_rows64(class_prompt_embeds) @ (vec / norm), -1.0, 1.0)
    probs = _softmax(sims / tau)
    dist = {c: float(p) for c, p in zip(class_prompt_embeds.ids, probs)}
    return _argmax_class(class_prompt_embeds.ids, dist), dist


@dataclass(frozen=True)
class ModelTaskSpace:
    """One model's view of a task: its image embeddings and prompt embeddings."""

    image_embeds: EmbeddingMatrix
    prompt_embeds: EmbeddingMatrix  # ids are the task class names


@dataclass(frozen=True)
class EnsemblePredictor:
    """Per-class member models plus everything needed to run them."""

    classes: tuple[str, ...]
    members: Mapping[str, tuple[str, ...]]  # class -> model ids, best first
    spaces: Mapping[str, ModelTaskSpace]  # model id -> embeddings
    temperature: float = DEFAULT_REUSE_TEMPERATURE
    prompt_template: str = DEFAULT_CLASS_PROMPT_TEMPLATE

    def __post_init__(self):
        if self.temperature <= 0:
            raise InvalidInputError("reuse temperature must be positive")
        for cls in self.classes:
            team = self.members.get(cls, ())
            if not team:
                raise InvalidInputError(f"class {cls!r} has no ensemble members")
            for m in team:
                if m not in self.spaces:
                    raise InvalidInputError(f"no embeddings provided for member {m!r}")
        for m, space in self.spaces.items():
            missing = [c for c in self.classes if c not in space.prompt_embeds]
            if missing:
                raise IncompleteEmbeddingsError(
                    f"model {m!r} lacks prompt embeddings for classes {missing}",
                    missing=missing,
                )

    def member_union(self) -> list[str]:
        out: set[str] = set()
        for cls in self.classes:
            out.update(self.members[cls])
        return sorted(out)


def build_predictor(
    selection: SelectionResult,
    spaces: Mapping[str, ModelTaskSpace],
    *,
    temperature: float = DEFAULT_REUSE_TEMPERATURE,
    prompt_template: str = DEFAULT_CLASS_PROMPT_TEMPLATE,
) -> EnsemblePredictor:
    """Wire a selection result's per-class top-k models to their embeddings."""
    members = {cls: selection.members(cls) for cls in selection.classes}
    needed = {m for team in members.values() for m in team}
    missing = sorted(needed - set(spaces))
    if missing:
        raise InvalidInputError(f"no task embeddings supplied for members: {missing}")
    return EnsemblePredictor(
        classes=selection.classes,
        members=members,
        spaces={m: spaces[m] for m in sorted(needed)},
        temperature=temperature,
        prompt_template=prompt_template,
    )


@dataclass(frozen=True)
class PredictionRecord:
    """One sample's ensemble output: confidences, weights, and the argmax."""

    sample_id: str
    predicted: str
    confidences: Mapping[str, float]
    weights: Mapping[str, Mapping[str, float]]  # class -> model -> weight


def entropy_weights(
    sim_vectors: Mapping[str, Sequence[float]],
    members: Sequence[str],
    temperature: float = DEFAULT_REUSE_TEMPERATURE,
) -> dict[str, float]:
    """Entropy-proportional ensemble weights for one sample and one class team.

    Each member's similarity vector over all task classes is turned into a
    distribution by a softmax at the reuse temperature; weights are each
    member's Shannon entropy over the team's entropy total. When the total
    entropy is numerically zero the weights fall back to uniform.
    """
    if not members:
        raise InvalidInputError("a class team needs at least one member")
    entropies: dict[str, float] = {}
    for m in members:
        sims = np.asarray(sim_vectors[m], dtype=np.float64)
        entropies[m] = _entropy(_softmax(sims / temperature))
    # The denominator runs over the team as listed, so a model repeated k
    # times carries weight H/(k*H) per copy and duplication cannot inflate
    # the combined confidence.
    total = sum(entropies[m] for m in members)
    if total < _ENTROPY_FLOOR:
        return {m: 1.0 / len(members) for m in members}
    return {m: h / total for m, h in entropies.items()}


def _member_sims(
    predictor: EnsemblePredictor, sample_id: str, model_ids: Iterable[str]
) -> dict[str, np.ndarray]:
    sims: dict[str, np.ndarray] = {}
    for m in model_ids:
        space = predictor.spaces[m]
        img = unit_rows64(space.image_embeds, [sample_id])[0]
        prompts = unit_rows64(space.prompt_embeds, predictor.classes)
        sims[m] = np.clip(prompts @ img, -1.0, 1.0)
    return sims


def ensemble_confidence(sample_id: str, cls: str, predictor: EnsemblePredictor) -> float:
    """Confidence of one class for one sample under that class's member team."""
    record = predict(sample_id, predictor)
    return record.confidences[cls]


def predict(sample_id: str, predictor: EnsemblePredictor) -> PredictionRecord:
    """Ensemble prediction for one sample.

    Member similarity vectors are computed once and shared across classes;
    confidence ties break toward the lexicographically first class.
    """
    union = {m for cls in predictor.classes for m in predictor.members[cls]}
    sims = _member_sims(predictor, sample_id, sorted(union))
    probs = {m: _softmax(s / predictor.temperature) for m, s in sims.items()}
    cls_index = {c: i for i, c in enumerate(predictor.classes)}

    confidences: dict[str, float] = {}
    weights: dict[str, dict[str, float]] = {}
    for cls in predictor.classes:
        team = predictor.members[cls]
        w = entropy_weights(sims, team, predictor.temperature)
        confidences[cls] = float(
            sum(w[m] * probs[m][cls_index[cls]] for m in team)
        )
        weights[cls] = w
    return PredictionRecord(
        sample_id=sample_id,
        predicted=_argmax_class(predictor.classes, confidences),
        confidences=confidences,
        weights=weights,
    )


def predict_batch(
    sample_ids: Iterable[str], predictor: EnsemblePredictor
) -> list[PredictionRecord]:
    """Predict many samples with deterministic output order by sample id."""
    return [predict(sid, predictor) for sid in sorted(sample_ids)]


def predictions_to_json(
    records: Sequence[PredictionRecord], task_id: str, temperature: float
) -> str:
    doc = {
        "format_version": PREDICTIONS_FORMAT_VERSION,
        "task_id": task_id,
        "reuse_temperature": temperature,
        "records": [
            {
                "sample_id": r.sample_id,
                "predicted": r.predicted,
                "confidences": dict(sorted(r.confidences.items())),
                "weights": {
                    cls: dict(sorted(w.items())) for cls, w in sorted(r.weights.items())
                },
            }
            for r in sorted(records, key=lambda r: r.sample_id)
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def save_predictions(
    records: Sequence[PredictionRecord],
    path: str | Path,
    *,
    task_id: str,
    temperature: float = DEFAULT_REUSE_TEMPERATURE,
) -> None:
    atomic_write_text(path, predictions_to_json(records, task_id, temperature))


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != PREDICTIONS_FORMAT_VERSION:
        raise InvalidInputError(f"unsupported predictions format_version in {path}")
    return [
        PredictionRecord(
            sample_id=raw["sample_id"],
            predicted=raw["predicted"],
            confidences=raw["confidences"],
            weights=raw["weights"],
        )
        for raw in doc["records"]
    ]
